"""Post-inference analysis: cross-chain factor matching and factor summaries.

Factor order and sign are not identified, so each chain is first averaged on
its own (indices are stable within a chain) and chains are then matched on
their stacked loading vectors. Similarities are absolute cosines; the sign
that produced them is carried along and used to align loadings *and* latent
rows before averaging.

"Covariance explained" is the squared-Frobenius fraction
``||w_k z_k||_F^2 / ||X||_F^2`` over all views stacked; fractions of
non-orthogonal factors may sum to more than one and are not clamped.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from scipy.optimize import linear_sum_assignment

from .dataset import MultiViewDataset
from .errors import DegenerateTestError, InvalidArgumentError, ShapeError

MATCH_METHOD = "greedy one-to-one against reference chain 0"


# -- per-chain summaries -----------------------------------------------------

@dataclass
class ChainFactorSummary:
    """Posterior means of W (``sum(D) x K``) and Z (``K x N``), one pair per chain."""

    W: list
    Z: list
    D: tuple

    def __post_init__(self):
        self.W = [np.asarray(w, dtype=float) for w in self.W]
        self.Z = [np.asarray(z, dtype=float) for z in self.Z]
        self.D = tuple(int(d) for d in self.D)
        if not self.W or len(self.W) != len(self.Z):
            raise ShapeError("need one W and one Z per chain")
        for w, z in zip(self.W, self.Z):
            if w.ndim != 2 or z.ndim != 2 or w.shape[1] != z.shape[0] or w.shape[0] != sum(self.D):
                raise ShapeError(f"inconsistent chain summary shapes W{w.shape}, Z{z.shape}, D={self.D}")

    @property
    def n_chains(self) -> int:
        return len(self.W)


def summarize_chains(draws, layout, D: Optional[Sequence[int]] = None) -> ChainFactorSummary:
    """Within-chain posterior means of W and Z.

    ``draws`` is a :class:`~sgfa.sampler.PosteriorDraws` (or a list of
    ``(n_draws, P)`` arrays) in centred unconstrained coordinates; W and Z
    are unconstrained already, so the means are taken directly. ``D`` gives
    the view sizes (default: a single view).
    """
    chains = [c.draws for c in draws.chains] if hasattr(draws, "chains") else list(draws)
    Ws, Zs = [], []
    for x in chains:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] < 1:
            raise InvalidArgumentError("every chain needs at least one retained draw")
        mean = x.mean(axis=0)
        Ws.append(mean[layout["W"]].reshape(layout.shape("W")))
        Zs.append(mean[layout["Z"]].reshape(layout.shape("Z")))
    if D is None:
        D = (layout.shape("W")[0],)
    return ChainFactorSummary(Ws, Zs, D)


# -- matching ----------------------------------------------------------------

def _cosine(A, B):
    """Signed cosine matrix between the columns of ``A`` and ``B``; zero columns give 0."""
    na = np.linalg.norm(A, axis=0)
    nb = np.linalg.norm(B, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        C = (A.T @ B) / np.outer(na, nb)
    C[~np.isfinite(C)] = 0.0
    return np.clip(C, -1.0, 1.0)


def _greedy_pairs(S, threshold):
    """One-to-one pairs ``(i, j)`` by descending ``S`` while ``S > threshold``."""
    S = S.copy()
    pairs = []
    while S.size and np.max(S) > threshold:
        i, j = np.unravel_index(np.argmax(S), S.shape)
        pairs.append((int(i), int(j)))
        S[i, :] = -np.inf
        S[:, j] = -np.inf
    return pairs


@dataclass
class RobustFactor:
    loadings: np.ndarray          # (sum D,), sign-aligned average
    latent: np.ndarray            # (N,)
    support: int                  # number of chains containing the factor
    members: dict                 # chain -> (column, sign)
    similarity: float             # mean aligned cosine to the reference chain's factor
    covariance_explained: Optional[float] = None
    contributions: Optional[np.ndarray] = None
    tests: Optional["SubgroupTests"] = None

    def to_json(self, D=None) -> dict:
        out = {
            "support": self.support,
            "similarity": self.similarity,
            "members": {str(c): {"column": j, "sign": s} for c, (j, s) in sorted(self.members.items())},
            "loadings": self.loadings.tolist(),
            "latent": self.latent.tolist(),
        }
        if self.covariance_explained is not None:
            out["covariance_explained"] = self.covariance_explained
        if self.contributions is not None:
            out["contributions"] = self.contributions.tolist()
        if self.tests is not None:
            out["tests"] = self.tests.to_json()
        return out


@dataclass
class RobustFactorSet:
    factors: list
    n_chains: int
    threshold: float
    D: tuple
    method: str = MATCH_METHOD

    def __len__(self) -> int:
        return len(self.factors)

    @property
    def is_empty(self) -> bool:
        return not self.factors

    @property
    def W(self) -> np.ndarray:
        if not self.factors:
            return np.zeros((sum(self.D), 0))
        return np.column_stack([f.loadings for f in self.factors])

    @property
    def Z(self) -> np.ndarray:
        if not self.factors:
            return np.zeros((0, 0))
        return np.vstack([f.latent for f in self.factors])

    def W_views(self) -> list:
        b = np.concatenate([[0], np.cumsum(self.D)]).astype(int)
        W = self.W
        return [W[b[m]:b[m + 1]] for m in range(len(self.D))]

    def to_json(self) -> dict:
        return {
            "n_robust": len(self.factors),
            "empty": self.is_empty,
            "n_chains": self.n_chains,
            "threshold": self.threshold,
            "majority_rule": "support > n_chains / 2",
            "method": self.method,
            "D": list(self.D),
            "factors": [f.to_json() for f in self.factors],
        }


def match_factors(summary: ChainFactorSummary, threshold: float = 0.80) -> RobustFactorSet:
    """Robust factors across chains.

    Every factor of chain 0 seeds a cluster. Each other chain contributes at
    most one factor per cluster, chosen greedily by descending |cosine| over
    pairs above ``threshold`` (strict). A cluster is robust when more than
    half of the chains support it; its members are sign-aligned to the seed
    and averaged. Output factors are put in a canonical form: ordered by
    ``||w|| * ||z||`` (descending) with the largest-magnitude loading
    positive, so the result does not depend on the order or signs of any
    chain's columns (only on which chain is the reference).
    """
    if not 0.0 < threshold <= 1.0:
        raise InvalidArgumentError(f"threshold must lie in (0, 1], got {threshold}")
    C = summary.n_chains
    ref_W = summary.W[0]
    K0 = ref_W.shape[1]
    members = [{0: (k, 1)} for k in range(K0)]
    sims = [[] for _ in range(K0)]
    for c in range(1, C):
        cos = _cosine(ref_W, summary.W[c])
        for i, j in _greedy_pairs(np.abs(cos), threshold):
            members[i][c] = (j, 1 if cos[i, j] >= 0 else -1)
            sims[i].append(abs(cos[i, j]))

    factors = []
    for k in range(K0):
        support = len(members[k])
        if not support > C / 2:
            continue
        w = np.mean([s * summary.W[c][:, j] for c, (j, s) in sorted(members[k].items())], axis=0)
        z = np.mean([s * summary.Z[c][j] for c, (j, s) in sorted(members[k].items())], axis=0)
        if w.size and w[np.argmax(np.abs(w))] < 0:
            w, z = -w, -z
            members[k] = {c: (j, -s) for c, (j, s) in members[k].items()}
        sim = float(np.mean(sims[k])) if sims[k] else 1.0
        factors.append(RobustFactor(w, z, support, members[k], sim))
    factors.sort(key=lambda f: -np.linalg.norm(f.loadings) * np.linalg.norm(f.latent))
    return RobustFactorSet(factors, C, float(threshold), summary.D)


# -- contributions and tests -------------------------------------------------

def _groups(labels, groups=None):
    labels = np.asarray(labels)
    return labels, (np.unique(labels) if groups is None else np.asarray(groups))


def factor_contributions(z_row, labels, groups=None) -> np.ndarray:
    """Per-subgroup mean ``|z|``, normalised to sum to one (groups in sorted label order)."""
    z = np.abs(np.asarray(z_row, dtype=float))
    labels, groups = _groups(labels, groups)
    if labels.shape != z.shape:
        raise ShapeError(f"labels {labels.shape} do not match latent row {z.shape}")
    means = []
    for g in groups:
        sel = labels == g
        if not sel.any():
            raise InvalidArgumentError(f"subgroup {g!r} has no samples")
        means.append(z[sel].mean())
    means = np.asarray(means)
    total = means.sum()
    if not total > 0:
        raise InvalidArgumentError("latent row is identically zero; contributions undefined")
    return means / total


@dataclass
class PairwiseTest:
    a: object
    b: object
    T: float
    p: float


@dataclass
class SubgroupTests:
    F: float
    p: float
    pairwise: list
    welch: bool = False

    def to_json(self) -> dict:
        return {
            "F": self.F,
            "p": self.p,
            "t_test": "welch" if self.welch else "pooled",
            "pairwise": [{"a": _plain(t.a), "b": _plain(t.b), "T": t.T, "p": t.p} for t in self.pairwise],
        }


def _plain(x):
    return x.item() if hasattr(x, "item") else x


def subgroup_tests(abs_scores, labels, welch: bool = False, groups=None) -> SubgroupTests:
    """One-way ANOVA across subgroups plus a two-sample t-test for every pair.

    The t-tests use the pooled (Student) variance unless ``welch`` is set.
    """
    x = np.asarray(abs_scores, dtype=float)
    labels, groups = _groups(labels, groups)
    if labels.shape != x.shape:
        raise ShapeError(f"labels {labels.shape} do not match scores {x.shape}")
    if len(groups) < 2:
        raise InvalidArgumentError("need at least two subgroups")
    samples = [x[labels == g] for g in groups]
    for g, s in zip(groups, samples):
        if s.size < 2:
            raise InvalidArgumentError(f"subgroup {g!r} needs at least 2 samples, has {s.size}")
    ss_within = sum(float(np.sum((s - s.mean()) ** 2)) for s in samples)
    if not ss_within > 0:
        raise DegenerateTestError("zero within-group variance; F is undefined")
    F, p = stats.f_oneway(*samples)
    pairwise = []
    for (ga, a), (gb, b) in itertools.combinations(zip(groups, samples), 2):
        va, vb = a.var(ddof=1), b.var(ddof=1)
        degenerate = (va == 0 or vb == 0) if welch else (va == 0 and vb == 0)
        if degenerate:
            raise DegenerateTestError(f"zero variance comparing subgroups {ga!r} and {gb!r}")
        T, pt = stats.ttest_ind(a, b, equal_var=not welch)
        pairwise.append(PairwiseTest(ga, gb, float(T), float(pt)))
    return SubgroupTests(float(F), float(p), pairwise, welch)


# -- data-space quantities ---------------------------------------------------

def _stacked(data) -> np.ndarray:
    if isinstance(data, MultiViewDataset):
        return data.stacked()
    return np.asarray(data, dtype=float)


def project_to_data(W, Z, k: int) -> np.ndarray:
    """Rank-one reconstruction ``w_k z_k`` of a single factor."""
    W = np.asarray(W, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if W.ndim != 2 or Z.ndim != 2 or W.shape[1] != Z.shape[0]:
        raise ShapeError(f"W{W.shape} and Z{Z.shape} are not conformable")
    if not 0 <= k < W.shape[1]:
        raise InvalidArgumentError(f"factor index {k} outside 0..{W.shape[1] - 1}")
    return np.outer(W[:, k], Z[k])


def covariance_explained(W, Z, data) -> list:
    """``[(factor, fraction), ...]`` ranked by descending fraction."""
    X = _stacked(data)
    W = np.asarray(W, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if W.shape[0] != X.shape[0] or Z.shape[1] != X.shape[1] or W.shape[1] != Z.shape[0]:
        raise ShapeError(f"W{W.shape}, Z{Z.shape} do not fit data {X.shape}")
    total = float(np.sum(X * X))
    if not total > 0:
        raise InvalidArgumentError("data have zero Frobenius norm")
    # ||w z||_F^2 = ||w||^2 ||z||^2
    frac = np.sum(W * W, axis=0) * np.sum(Z * Z, axis=1) / total
    order = np.argsort(-frac, kind="stable")
    return [(int(k), float(frac[k])) for k in order]


def describe_factors(robust: RobustFactorSet, data, labels=None, welch: bool = False) -> RobustFactorSet:
    """Fill covariance explained, contributions and subgroup tests in place."""
    if robust.is_empty:
        return robust
    for k, frac in covariance_explained(robust.W, robust.Z, data):
        robust.factors[k].covariance_explained = frac
    if labels is not None:
        for f in robust.factors:
            f.contributions = factor_contributions(f.latent, labels)
            try:
                f.tests = subgroup_tests(np.abs(f.latent), labels, welch=welch)
            except DegenerateTestError:
                f.tests = None
    return robust


# -- recovery against ground truth -------------------------------------------

@dataclass
class RecoveryReport:
    similarity: list              # per true factor; None when unmatched
    assignment: list              # per true factor: robust index or None
    n_unmatched_true: int
    n_spurious: int
    max_contribution_error: Optional[float]
    contributions: list           # per true factor: matched robust contributions or None

    @property
    def all_matched(self) -> bool:
        return self.n_unmatched_true == 0

    def to_json(self) -> dict:
        return {
            "similarity": self.similarity,
            "assignment": self.assignment,
            "n_unmatched_true": self.n_unmatched_true,
            "n_spurious": self.n_spurious,
            "max_contribution_error": self.max_contribution_error,
            "contributions": [None if c is None else list(c) for c in self.contributions],
        }


def recovery_score(robust: RobustFactorSet, truth, threshold: Optional[float] = None) -> RecoveryReport:
    """Optimal one-to-one assignment of robust to true factors by |cosine|.

    Pairs below ``threshold`` (when given) count as unmatched on both sides.
    Contribution errors compare the matched robust factor's subgroup
    contributions with the true ones, using the truth's labels.
    """
    from .synthgen import true_contributions

    Wt = np.asarray(truth.W, dtype=float)
    Kt = Wt.shape[1]
    Wr = robust.W
    sim = [None] * Kt
    assign = [None] * Kt
    contrib = [None] * Kt
    matched = 0
    if Wr.shape[1]:
        if Wr.shape[0] != Wt.shape[0]:
            raise ShapeError(f"robust loadings have {Wr.shape[0]} rows, truth {Wt.shape[0]}")
        S = np.abs(_cosine(Wt, Wr))
        rows, cols = linear_sum_assignment(-S)
        for t, r in zip(rows, cols):
            if threshold is not None and not S[t, r] > threshold:
                continue
            sim[t] = float(S[t, r])
            assign[t] = int(r)
            matched += 1
    true_c = true_contributions(truth)
    errs = []
    for t, r in enumerate(assign):
        if r is None:
            continue
        c = factor_contributions(robust.factors[r].latent, truth.labels)
        contrib[t] = c.tolist()
        errs.append(float(np.max(np.abs(c - true_c[t]))))
    return RecoveryReport(
        similarity=sim,
        assignment=assign,
        n_unmatched_true=Kt - matched,
        n_spurious=len(robust.factors) - matched,
        max_contribution_error=max(errs) if errs else None,
        contributions=contrib,
    )
