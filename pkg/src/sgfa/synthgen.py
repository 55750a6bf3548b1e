"""Synthetic three-view, three-subgroup benchmark with known factors.

Factor 1 is expressed by subgroup 1, factor 2 by subgroup 2, factor 3 by
everyone. Relevant features of factor ``k`` in view ``m`` are the block
``[k * p, (k + 1) * p)`` with ``p = ceil(D_m / 3)``, so the three factors
load on disjoint feature blocks.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError
from .model import HyperParams, ModelFamily, ModelSpec, forward_sample, tau0


@dataclass(frozen=True)
class SyntheticScenario:
    K_true: int = 3
    group_sizes: tuple = (50, 50, 50)
    D: tuple = (60, 40, 20)
    noise_sd: tuple = (3.0, 6.0, 4.0)
    lambda_active: float = 100.0
    lambda_inactive_w: float = 0.01
    lambda_inactive_z: float = 0.001
    tau_z: float = 0.01
    nu: float = 2.0
    s: float = 2.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "group_sizes", tuple(int(g) for g in self.group_sizes))
        object.__setattr__(self, "D", tuple(int(d) for d in self.D))
        object.__setattr__(self, "noise_sd", tuple(float(s) for s in self.noise_sd))
        if len(self.noise_sd) != len(self.D):
            raise InvalidArgumentError("noise_sd needs one entry per view")
        if any(s <= 0 for s in self.noise_sd):
            raise InvalidArgumentError("noise standard deviations must be positive")
        if any(g < 1 for g in self.group_sizes):
            raise InvalidArgumentError("every subgroup needs at least one sample")
        if self.K_true != 3 or len(self.group_sizes) != 3:
            raise InvalidArgumentError("the expression pattern is defined for 3 factors and 3 subgroups")
        if any(d < 3 for d in self.D):
            raise InvalidArgumentError("each view needs at least 3 features")

    @property
    def N(self) -> int:
        return sum(self.group_sizes)

    def with_seed(self, seed: int) -> "SyntheticScenario":
        return SyntheticScenario(**{**asdict(self), "seed": seed})


@dataclass
class GroundTruth:
    W: np.ndarray                 # (sum D, K_true), views stacked
    Z: np.ndarray                 # (K_true, N)
    labels: np.ndarray            # (N,), values 1..3
    feature_masks: np.ndarray     # (sum D, K_true) bool
    sample_masks: np.ndarray      # (K_true, N) bool
    D: tuple
    rho: np.ndarray
    c2_w: np.ndarray
    c2_z: np.ndarray
    tau_w: np.ndarray

    def W_views(self) -> list:
        b = np.concatenate([[0], np.cumsum(self.D)])
        return [self.W[b[m]:b[m + 1]] for m in range(len(self.D))]

    def to_json(self) -> dict:
        return {
            "D": list(self.D),
            "labels": self.labels.tolist(),
            "W": self.W.tolist(),
            "Z": self.Z.tolist(),
            "feature_masks": self.feature_masks.astype(int).tolist(),
            "sample_masks": self.sample_masks.astype(int).tolist(),
            "rho": self.rho.tolist(),
            "c2_w": self.c2_w.tolist(),
            "c2_z": self.c2_z.tolist(),
            "tau_w": self.tau_w.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GroundTruth":
        return cls(
            W=np.asarray(obj["W"], dtype=float),
            Z=np.asarray(obj["Z"], dtype=float),
            labels=np.asarray(obj["labels"]),
            feature_masks=np.asarray(obj["feature_masks"], dtype=bool),
            sample_masks=np.asarray(obj["sample_masks"], dtype=bool),
            D=tuple(obj["D"]),
            rho=np.asarray(obj["rho"], dtype=float),
            c2_w=np.asarray(obj["c2_w"], dtype=float),
            c2_z=np.asarray(obj["c2_z"], dtype=float),
            tau_w=np.asarray(obj["tau_w"], dtype=float),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "GroundTruth":
        return cls.from_json(json.loads(Path(path).read_text()))


def masks(scenario: SyntheticScenario):
    """Active-feature ``(sum D, 3)`` and active-sample ``(3, N)`` masks."""
    K = scenario.K_true
    feat = []
    for d in scenario.D:
        p = math.ceil(d / 3)
        m = np.zeros((d, K), dtype=bool)
        for k in range(K):
            m[k * p:min((k + 1) * p, d), k] = True
        feat.append(m)
    labels = np.repeat(np.arange(1, 4), scenario.group_sizes)
    samp = np.zeros((K, scenario.N), dtype=bool)
    samp[0] = labels == 1
    samp[1] = labels == 2
    samp[2] = True
    return np.vstack(feat), samp, labels


def generate(scenario: SyntheticScenario = SyntheticScenario()):
    """Draw one dataset; returns ``(MultiViewDataset, GroundTruth)``."""
    feat, samp, labels = masks(scenario)
    rho = 1.0 / np.square(scenario.noise_sd)
    hyper = HyperParams(p0=tuple(d / 3.0 for d in scenario.D), nu=scenario.nu, s=scenario.s)
    spec = ModelSpec(ModelFamily.SPARSE_GFA_RHS, scenario.D, scenario.N, scenario.K_true, hyper)
    t0 = np.array([tau0(hyper.p0[m], d, scenario.N, rho[m]) for m, d in enumerate(scenario.D)])
    fixed = {
        "rho": rho,
        "tau_w": t0,
        "tau_z": np.full(scenario.K_true, scenario.tau_z),
        "lambda_w": np.where(feat, scenario.lambda_active, scenario.lambda_inactive_w),
        "lambda_z": np.where(samp, scenario.lambda_active, scenario.lambda_inactive_z),
    }
    data, params = forward_sample(spec, fixed=fixed, seed=scenario.seed, labels=labels)
    data.sample_ids = [f"s{i:03d}" for i in range(scenario.N)]
    data.feature_names = [[f"view{m + 1}_f{j:02d}" for j in range(d)] for m, d in enumerate(scenario.D)]
    blocks = params.constrained()
    truth = GroundTruth(
        W=blocks["W"], Z=blocks["Z"], labels=labels, feature_masks=feat, sample_masks=samp,
        D=scenario.D, rho=rho, c2_w=blocks["c2_w"], c2_z=blocks["c2_z"], tau_w=t0,
    )
    return data, truth


def true_contributions(truth: GroundTruth) -> np.ndarray:
    """Per-factor, per-subgroup mean ``|z|``, each row normalised to sum to one."""
    from .analysis import factor_contributions

    return np.vstack([factor_contributions(z, truth.labels) for z in truth.Z])
