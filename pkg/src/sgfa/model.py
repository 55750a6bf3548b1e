"""Joint log densities of GFA (ARD priors) and sparse GFA (regularised horseshoe).

All positive quantities are sampled on the log scale; every log joint below is
the density of the *unconstrained* vector, i.e. it includes the log-Jacobian
of the ``exp`` transform for each positive coordinate.

Parameter blocks (flat, in this order)::

    sparse GFA:  W, Z, lambda_w, tau_w, c2_w, lambda_z, tau_z, c2_z, rho
    GFA (ARD):   W, Z, alpha, rho

``W`` is the loading matrix with all views stacked row-wise (``sum(D) x K``),
``Z`` is ``K x N``. Matrices are flattened in C order.

Sparse GFA can also be *sampled* in non-centred coordinates, where the W and
Z slots hold standard-normal innovations that are multiplied by the
regularised horseshoe scale. This is a change of variables, not a different
model: :meth:`GFAModel.to_centered` maps draws back, and every public log
joint is the centred one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .dataset import MultiViewDataset
from .errors import InvalidArgumentError, NumericalError, ShapeError

_MAX_PARAMS = 2**31 - 1


class ModelFamily(str, Enum):
    GFA_ARD = "gfa"
    SPARSE_GFA_RHS = "sparse-gfa"

    @classmethod
    def parse(cls, value) -> "ModelFamily":
        if isinstance(value, cls):
            return value
        aliases = {"gfa": cls.GFA_ARD, "gfa_ard": cls.GFA_ARD, "sparse-gfa": cls.SPARSE_GFA_RHS,
                   "sparse_gfa": cls.SPARSE_GFA_RHS, "sparsegfa_rhs": cls.SPARSE_GFA_RHS,
                   "sgfa": cls.SPARSE_GFA_RHS}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise InvalidArgumentError(f"unknown model family {value!r}") from None


@dataclass(frozen=True)
class HyperParams:
    """Prior hyperparameters.

    ``p0`` is the per-view guess of the number of relevant features; ``None``
    means one third of each view's features. Gamma priors use shape/rate.
    The ARD defaults are 1e-3 rather than a vanishing 1e-14, which leaves the
    log density numerically degenerate under HMC.
    """

    p0: Optional[tuple] = None
    a_rho: float = 1.0
    b_rho: float = 1.0
    nu: float = 4.0
    s: float = 2.0
    a_alpha: float = 1e-3
    b_alpha: float = 1e-3

    def __post_init__(self):
        for name in ("a_rho", "b_rho", "nu", "s", "a_alpha", "b_alpha"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidArgumentError(f"hyperparameter {name} must be positive, got {v}")
        if self.p0 is not None:
            object.__setattr__(self, "p0", tuple(float(p) for p in self.p0))

    def p0_for(self, D: Sequence[int]) -> tuple:
        if self.p0 is None:
            return tuple(d / 3.0 for d in D)
        if len(self.p0) != len(D):
            raise InvalidArgumentError(f"p0 has {len(self.p0)} entries for {len(D)} views")
        return self.p0


@dataclass(frozen=True)
class ModelSpec:
    family: ModelFamily
    D: tuple
    N: int
    K: int
    hyper: HyperParams = field(default_factory=HyperParams)

    def __post_init__(self):
        object.__setattr__(self, "family", ModelFamily.parse(self.family))
        object.__setattr__(self, "D", tuple(int(d) for d in self.D))
        if len(self.D) < 1:
            raise InvalidArgumentError("need at least one view")
        if any(d < 1 for d in self.D):
            raise InvalidArgumentError(f"all view dimensions must be >= 1, got {self.D}")
        if self.K < 1:
            raise InvalidArgumentError(f"K must be >= 1, got {self.K}")
        if self.N < 1:
            raise InvalidArgumentError(f"N must be >= 1, got {self.N}")
        if self.family is ModelFamily.SPARSE_GFA_RHS:
            for m, (p, d) in enumerate(zip(self.hyper.p0_for(self.D), self.D)):
                if not 0 < p < d:
                    raise InvalidArgumentError(f"p0[{m}]={p} must lie strictly inside (0, D_m={d})")

    @property
    def M(self) -> int:
        return len(self.D)

    @property
    def D_total(self) -> int:
        return sum(self.D)

    @classmethod
    def for_data(cls, family, data: MultiViewDataset, K: int, hyper: Optional[HyperParams] = None):
        return cls(family, data.D, data.N, K, hyper or HyperParams())


SPARSE_BLOCKS = ("W", "Z", "lambda_w", "tau_w", "c2_w", "lambda_z", "tau_z", "c2_z", "rho")
GFA_BLOCKS = ("W", "Z", "alpha", "rho")
POSITIVE_BLOCKS = frozenset({"lambda_w", "tau_w", "c2_w", "lambda_z", "tau_z", "c2_z", "rho", "alpha"})


@dataclass(frozen=True)
class ParamLayout:
    """Named, disjoint slices of the flat unconstrained parameter vector."""

    names: tuple
    shapes: tuple
    offsets: tuple
    size: int

    def __post_init__(self):
        slices = {}
        for n, o, s in zip(self.names, self.offsets, self.shapes):
            slices[n] = (slice(o, o + math.prod(s)), s)
        object.__setattr__(self, "_slices", slices)

    def __getitem__(self, name: str) -> slice:
        return self._slices[name][0]

    def shape(self, name: str) -> tuple:
        return self._slices[name][1]

    def unpack(self, values: np.ndarray) -> dict:
        """Views (not copies) of each block, reshaped."""
        return {n: values[sl].reshape(s) for n, (sl, s) in self._slices.items()}

    def pack(self, blocks: dict) -> np.ndarray:
        out = np.empty(self.size)
        for n, s in zip(self.names, self.shapes):
            arr = np.asarray(blocks[n], dtype=float)
            if arr.shape != s and arr.size != int(np.prod(s)):
                raise ShapeError(f"block {n}: expected shape {s}, got {arr.shape}")
            out[self[n]] = arr.ravel()
        return out

    def block_of(self, index: int) -> str:
        for n, off, s in zip(self.names, self.offsets, self.shapes):
            if off <= index < off + int(np.prod(s)):
                return n
        raise IndexError(index)

    def coordinate_names(self) -> list:
        """``block[i,j]`` label of every coordinate, in vector order."""
        out = []
        for n, s in zip(self.names, self.shapes):
            out.extend(f"{n}[{','.join(map(str, idx))}]" for idx in np.ndindex(*s))
        return out

    def to_dict(self) -> dict:
        return {n: {"offset": o, "shape": list(s)} for n, o, s in zip(self.names, self.offsets, self.shapes)}


def build_layout(spec: ModelSpec) -> ParamLayout:
    Dt, K, N, M = spec.D_total, spec.K, spec.N, spec.M
    if spec.family is ModelFamily.SPARSE_GFA_RHS:
        shapes = ((Dt, K), (K, N), (Dt, K), (M,), (M, K), (K, N), (K,), (K,), (M,))
        names = SPARSE_BLOCKS
    else:
        shapes = ((Dt, K), (K, N), (M, K), (M,))
        names = GFA_BLOCKS
    offsets, total = [], 0
    for s in shapes:
        offsets.append(total)
        total += int(np.prod(s, dtype=object))
    if total > _MAX_PARAMS:
        raise InvalidArgumentError(f"parameter vector of length {total} exceeds capacity")
    return ParamLayout(names, shapes, tuple(offsets), total)


@dataclass
class ParamVector:
    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.layout.size,):
            raise ShapeError(f"param vector length {self.values.shape} != layout size {self.layout.size}")

    def blocks(self) -> dict:
        return self.layout.unpack(self.values)

    def constrained(self) -> dict:
        return constrain(self.values, self.layout)


def constrain(values: np.ndarray, layout: ParamLayout) -> dict:
    """Block dict with positive blocks mapped through ``exp``."""
    out = {}
    with np.errstate(over="ignore"):
        for name, arr in layout.unpack(values).items():
            out[name] = np.exp(arr) if name in POSITIVE_BLOCKS else arr.copy()
    return out


def unconstrain(blocks: dict, layout: ParamLayout) -> np.ndarray:
    raw = {}
    with np.errstate(divide="ignore"):
        for name in layout.names:
            arr = np.asarray(blocks[name], dtype=float)
            raw[name] = np.log(arr) if name in POSITIVE_BLOCKS else arr
    return layout.pack(raw)


def regularized_scale(lam, tau, c2):
    """Standard deviation of the regularised horseshoe Gaussian.

    ``sqrt(c2 * tau^2 * lam^2 / (c2 + tau^2 * lam^2))``; broadcasts over arrays.
    """
    lam, tau, c2 = (np.asarray(x, dtype=float) for x in (lam, tau, c2))
    if np.any(lam <= 0) or np.any(tau <= 0) or np.any(c2 <= 0):
        raise InvalidArgumentError("regularized_scale needs positive lambda, tau and c2")
    q = (tau * lam) ** 2
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.where(np.isinf(c2), tau * lam, np.sqrt(c2 * q / (c2 + q)))
        out = np.where(np.isinf(q), np.sqrt(c2), out)
    return float(out) if out.ndim == 0 else out


def _log_space_scale(log_lam, log_tau, log_c2):
    logq = 2.0 * (log_lam + log_tau)
    return np.exp(0.5 * (log_c2 + logq - np.logaddexp(log_c2, logq)))


def tau0(p0: float, D: int, N: int, rho: float) -> float:
    """Half-Cauchy scale of a view's global loading shrinkage."""
    if not 0 < p0 < D:
        raise InvalidArgumentError(f"p0={p0} must lie strictly inside (0, D={D})")
    if not rho > 0 or N < 1:
        raise InvalidArgumentError("tau0 needs rho > 0 and N >= 1")
    return p0 / (D - p0) / math.sqrt(N * rho)


class GFAModel:
    """Log joint and gradient for one (spec, data) pair over the unconstrained vector.

    The data are copied once into a stacked ``(sum(D), N)`` array; calls to
    :meth:`log_prob` and :meth:`log_prob_and_grad` do not mutate state and
    may run concurrently.
    """

    def __init__(self, spec: ModelSpec, data: MultiViewDataset, noncentered: bool = False):
        if noncentered and spec.family is not ModelFamily.SPARSE_GFA_RHS:
            raise InvalidArgumentError("the non-centred coordinates exist for sparse GFA only")
        self.noncentered = bool(noncentered)
        if data.D != spec.D or data.N != spec.N:
            raise ShapeError(f"data has D={data.D}, N={data.N}; spec expects D={spec.D}, N={spec.N}")
        if data.has_missing():
            raise InvalidArgumentError("the model layer does not accept missing values; impute first")
        self.spec = spec
        self.layout = build_layout(spec)
        self.X = np.ascontiguousarray(data.stacked())
        self.bounds = np.concatenate([[0], np.cumsum(spec.D)])
        self.view_of_row = np.repeat(np.arange(spec.M), spec.D).astype(np.int64)
        self.D = np.asarray(spec.D, dtype=float)
        h = spec.hyper
        if spec.family is ModelFamily.SPARSE_GFA_RHS:
            p0 = np.asarray(h.p0_for(spec.D))
            # log tau0 = log_tau0_base - 0.5 * log(rho)
            self.log_tau0_base = np.log(p0 / (self.D - p0)) - 0.5 * math.log(spec.N)
            a = h.nu / 2.0
            b = h.nu * h.s**2 / 2.0
            self._ig = (a, b, a * math.log(b) - math.lgamma(a))
        self._gamma_rho = (h.a_rho, h.b_rho, h.a_rho * math.log(h.b_rho) - math.lgamma(h.a_rho))
        self._gamma_alpha = (h.a_alpha, h.b_alpha, h.a_alpha * math.log(h.b_alpha) - math.lgamma(h.a_alpha))

    @property
    def size(self) -> int:
        return self.layout.size

    def log_prob(self, u: np.ndarray) -> float:
        return self._evaluate(np.asarray(u, dtype=float), want_grad=False)[0]

    def log_prob_and_grad(self, u: np.ndarray):
        lp, g, _ = self._evaluate(np.asarray(u, dtype=float), want_grad=True)
        return lp, g

    def terms(self, u: np.ndarray) -> dict:
        """Per-block decomposition of the log joint (for diagnostics and tests)."""
        return self._evaluate(np.asarray(u, dtype=float), want_grad=False, want_terms=True)[2]

    def centered_log_prob(self, u: np.ndarray) -> float:
        """Log joint of a vector already in centred coordinates."""
        return self._evaluate(np.asarray(u, dtype=float), want_grad=False, centered=True)[0]

    def _scales(self, u):
        """Regularised horseshoe scales of W and Z for (batched) vectors ``u``."""
        L = self.layout
        lead = u.shape[:-1]
        rows = self.view_of_row
        lw = u[..., L["lambda_w"]].reshape(lead + L.shape("lambda_w"))
        tw = u[..., L["tau_w"]][..., rows, None]
        cw = u[..., L["c2_w"]].reshape(lead + L.shape("c2_w"))[..., rows, :]
        lz = u[..., L["lambda_z"]].reshape(lead + L.shape("lambda_z"))
        tz = u[..., L["tau_z"]][..., :, None]
        cz = u[..., L["c2_z"]][..., :, None]
        return _log_space_scale(lw, tw, cw), _log_space_scale(lz, tz, cz)

    def to_centered(self, u: np.ndarray) -> np.ndarray:
        """Map sampling coordinates (one vector or a stack of them) to centred ones."""
        u = np.array(u, dtype=float)
        if not self.noncentered:
            return u
        L = self.layout
        sw, sz = self._scales(u)
        lead = u.shape[:-1]
        u[..., L["W"]] = (sw * u[..., L["W"]].reshape(lead + L.shape("W"))).reshape(lead + (-1,))
        u[..., L["Z"]] = (sz * u[..., L["Z"]].reshape(lead + L.shape("Z"))).reshape(lead + (-1,))
        return u

    def from_centered(self, u: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`to_centered`."""
        u = np.array(u, dtype=float)
        if not self.noncentered:
            return u
        L = self.layout
        sw, sz = self._scales(u)
        lead = u.shape[:-1]
        u[..., L["W"]] = (u[..., L["W"]].reshape(lead + L.shape("W")) / sw).reshape(lead + (-1,))
        u[..., L["Z"]] = (u[..., L["Z"]].reshape(lead + L.shape("Z")) / sz).reshape(lead + (-1,))
        return u

    def _evaluate(self, u, want_grad, want_terms=False, centered=False):
        if u.shape != (self.layout.size,):
            raise ShapeError(f"expected vector of length {self.layout.size}, got {u.shape}")
        u = np.ascontiguousarray(u)
        grad = np.zeros(self.layout.size)
        if self.spec.family is ModelFamily.SPARSE_GFA_RHS:
            names = SPARSE_TERMS
            terms = np.zeros(len(names))
            kernel = _kernels.sparse_gfa_nc if self.noncentered and not centered else _kernels.sparse_gfa
            lp = kernel(u, self.X, self.view_of_row, self.bounds, self.spec.K, self.log_tau0_base,
                                     *self._gamma_rho, *self._ig, want_grad, grad, terms)
        else:
            names = ARD_TERMS
            terms = np.zeros(len(names))
            lp = _kernels.ard_gfa(u, self.X, self.view_of_row, self.bounds, self.spec.K,
                                  *self._gamma_rho, *self._gamma_alpha, want_grad, grad, terms)
        lp = float(lp)
        if np.isnan(lp):
            lp = -np.inf
        term_dict = dict(zip(names, terms.tolist())) if want_terms else None
        if not want_grad:
            return lp, None, term_dict
        if not np.isfinite(lp):
            grad[:] = np.nan
        return lp, grad, term_dict


SPARSE_TERMS = ("likelihood", "rho_prior", "W_prior", "lambda_w_prior", "Z_prior", "lambda_z_prior",
                "tau_w_prior", "tau_z_prior", "c2_w_prior", "c2_z_prior")
ARD_TERMS = ("likelihood", "rho_prior", "W_prior", "Z_prior", "alpha_prior")


def log_joint_sparse_gfa(params: ParamVector, data: MultiViewDataset, spec: ModelSpec) -> float:
    if spec.family is not ModelFamily.SPARSE_GFA_RHS:
        raise InvalidArgumentError("log_joint_sparse_gfa needs a sparse-gfa spec")
    return _checked_log_prob(GFAModel(spec, data), params)


def log_joint_gfa(params: ParamVector, data: MultiViewDataset, spec: ModelSpec) -> float:
    if spec.family is not ModelFamily.GFA_ARD:
        raise InvalidArgumentError("log_joint_gfa needs a gfa spec")
    return _checked_log_prob(GFAModel(spec, data), params)


def _checked_log_prob(model: GFAModel, params: ParamVector) -> float:
    if params.layout != model.layout:
        raise ShapeError("parameter layout does not match the model spec")
    lp = model.log_prob(params.values)
    if not np.isfinite(lp):
        bad = {k: v for k, v in model.terms(params.values).items() if not np.isfinite(v)}
        raise NumericalError(f"non-finite log joint; offending blocks: {bad}")
    return lp


def grad_log_joint(params: ParamVector, data: MultiViewDataset, spec: ModelSpec) -> np.ndarray:
    model = GFAModel(spec, data)
    lp, g = model.log_prob_and_grad(params.values)
    if not np.isfinite(lp):
        bad = {k: v for k, v in model.terms(params.values).items() if not np.isfinite(v)}
        raise NumericalError(f"non-finite log joint; offending blocks: {bad}")
    return g


def forward_sample(spec: ModelSpec, fixed: Optional[dict] = None, seed=None, labels=None):
    """Draw a dataset top-down through the model hierarchy.

    ``fixed`` maps block names (``W``, ``Z``, ``rho``, ``lambda_w`` ...) to
    constrained values that replace the corresponding draw. ``rho`` may be
    ``inf`` for noiseless data. Returns ``(dataset, ParamVector)`` where the
    parameter vector holds the ground truth on the unconstrained scale.
    """
    fixed = dict(fixed or {})
    layout = build_layout(spec)
    rng = np.random.default_rng(seed)
    h = spec.hyper
    Dt, K, N, M = spec.D_total, spec.K, spec.N, spec.M
    rows = np.repeat(np.arange(M), spec.D)

    def get(name, draw):
        if name in fixed:
            arr = np.asarray(fixed[name], dtype=float)
            return np.broadcast_to(arr, layout.shape(name)).copy()
        return draw()

    def half_cauchy(scale, shape):
        return np.abs(scale * rng.standard_cauchy(shape))

    def inv_gamma(shape):
        a, b = h.nu / 2.0, h.nu * h.s**2 / 2.0
        return b / rng.gamma(a, 1.0, shape)

    rho = get("rho", lambda: rng.gamma(h.a_rho, 1.0 / h.b_rho, M))
    blocks = {"rho": rho}
    if spec.family is ModelFamily.SPARSE_GFA_RHS:
        p0 = h.p0_for(spec.D)
        if not np.all(np.isfinite(rho)) and "tau_w" not in fixed:
            # tau0 -> 0 as rho -> inf, which would zero every loading
            raise InvalidArgumentError("noiseless sparse-gfa sampling needs tau_w pinned as well")
        t0 = np.array([tau0(p0[m], spec.D[m], N, rho[m]) if np.isfinite(rho[m]) else 1.0 for m in range(M)])
        blocks["lambda_w"] = get("lambda_w", lambda: half_cauchy(1.0, (Dt, K)))
        blocks["tau_w"] = get("tau_w", lambda: half_cauchy(t0, M))
        blocks["c2_w"] = get("c2_w", lambda: inv_gamma((M, K)))
        blocks["lambda_z"] = get("lambda_z", lambda: half_cauchy(1.0, (K, N)))
        blocks["tau_z"] = get("tau_z", lambda: half_cauchy(1.0, K))
        blocks["c2_z"] = get("c2_z", lambda: inv_gamma(K))
        sw = regularized_scale(blocks["lambda_w"], blocks["tau_w"][rows][:, None], blocks["c2_w"][rows, :])
        sz = regularized_scale(blocks["lambda_z"], blocks["tau_z"][:, None], blocks["c2_z"][:, None])
        blocks["W"] = get("W", lambda: sw * rng.standard_normal((Dt, K)))
        blocks["Z"] = get("Z", lambda: sz * rng.standard_normal((K, N)))
    else:
        blocks["alpha"] = get("alpha", lambda: rng.gamma(h.a_alpha, 1.0 / h.b_alpha, (M, K)))
        sd = 1.0 / np.sqrt(blocks["alpha"][rows, :])
        blocks["W"] = get("W", lambda: sd * rng.standard_normal((Dt, K)))
        blocks["Z"] = get("Z", lambda: rng.standard_normal((K, N)))

    noise_sd = np.where(np.isinf(rho), 0.0, 1.0 / np.sqrt(rho))
    X = blocks["W"] @ blocks["Z"] + noise_sd[rows][:, None] * rng.standard_normal((Dt, N))
    bounds = np.concatenate([[0], np.cumsum(spec.D)])
    views = [X[bounds[m]:bounds[m + 1]] for m in range(M)]
    data = MultiViewDataset(views, labels=labels)
    return data, ParamVector(unconstrain(blocks, layout), layout)
