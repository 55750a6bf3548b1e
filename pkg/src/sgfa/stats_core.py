"""Scalar log-density kernels and the positive-constraint transform.

Conventions
-----------
* ``log_pdf_gamma`` uses the shape/rate parameterisation.
* ``log_pdf_inv_gamma`` uses the shape/scale parameterisation, so that
  ``InvGamma(nu / 2, nu * s**2 / 2)`` is written ``(x, nu / 2, nu * s**2 / 2)``.
* ``log_pdf_half_cauchy`` has its location fixed at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidArgumentError, NumericalError

LOG_2PI = math.log(2.0 * math.pi)
LOG_2_OVER_PI = math.log(2.0 / math.pi)
_MAX_LOG = math.log(np.finfo(float).max)


class Family(str, Enum):
    NORMAL = "Normal"
    GAMMA = "Gamma"
    INV_GAMMA = "InvGamma"
    HALF_CAUCHY = "HalfCauchy"


@dataclass(frozen=True)
class DistParams:
    """A parameterised member of one of the four supported families.

    ``p1`` is the mean (Normal), shape (Gamma, InvGamma) or location (HalfCauchy,
    always 0). ``p2`` is the sd, rate, scale and scale respectively.
    """

    family: Family
    p1: float
    p2: float

    def __post_init__(self):
        if not self.p2 > 0:
            raise InvalidArgumentError(f"{self.family.value}: p2 must be positive, got {self.p2}")
        if self.family is Family.HALF_CAUCHY and self.p1 != 0:
            raise InvalidArgumentError("HalfCauchy location is fixed at 0")
        if self.family in (Family.GAMMA, Family.INV_GAMMA) and not self.p1 > 0:
            raise InvalidArgumentError(f"{self.family.value}: shape must be positive, got {self.p1}")

    def log_pdf(self, x: float) -> float:
        if self.family is Family.NORMAL:
            return log_pdf_normal(x, self.p1, self.p2)
        if self.family is Family.GAMMA:
            return log_pdf_gamma(x, self.p1, self.p2)
        if self.family is Family.INV_GAMMA:
            return log_pdf_inv_gamma(x, self.p1, self.p2)
        return log_pdf_half_cauchy(x, self.p2)


@dataclass(frozen=True)
class TransformedValue:
    unconstrained: float
    constrained: float
    log_jacobian: float


def _check_finite(**kwargs):
    for name, v in kwargs.items():
        if not math.isfinite(v):
            raise InvalidArgumentError(f"{name} must be finite, got {v}")


def _check_positive(**kwargs):
    for name, v in kwargs.items():
        if not math.isfinite(v) or v <= 0:
            raise InvalidArgumentError(f"{name} must be finite and positive, got {v}")


def log_pdf_normal(x: float, mu: float, sd: float) -> float:
    _check_finite(x=x, mu=mu)
    _check_positive(sd=sd)
    r = (x - mu) / sd
    return -0.5 * LOG_2PI - math.log(sd) - 0.5 * r * r


def log_pdf_half_cauchy(x: float, scale: float) -> float:
    _check_positive(scale=scale)
    _check_finite(x=x)
    if x < 0:
        raise InvalidArgumentError(f"half-Cauchy support is x >= 0, got {x}")
    r = x / scale
    return LOG_2_OVER_PI - math.log(scale) - math.log1p(r * r)


def log_pdf_gamma(x: float, shape: float, rate: float) -> float:
    _check_positive(shape=shape, rate=rate)
    _check_finite(x=x)
    if x <= 0:
        raise InvalidArgumentError(f"gamma support is x > 0, got {x}")
    return shape * math.log(rate) - math.lgamma(shape) + (shape - 1.0) * math.log(x) - rate * x


def log_pdf_inv_gamma(x: float, shape: float, scale: float) -> float:
    _check_positive(shape=shape, scale=scale)
    _check_finite(x=x)
    if x <= 0:
        raise InvalidArgumentError(f"inverse-gamma support is x > 0, got {x}")
    return shape * math.log(scale) - math.lgamma(shape) - (shape + 1.0) * math.log(x) - scale / x


def to_positive(unconstrained: float, coordinate=None) -> TransformedValue:
    """Map a real to the positive half-line via ``exp``.

    ``coordinate`` is only used to label the error when ``exp`` overflows.
    """
    _check_finite(unconstrained=unconstrained)
    if unconstrained > _MAX_LOG:
        where = "" if coordinate is None else f" at coordinate {coordinate}"
        raise NumericalError(f"exp overflow{where}: unconstrained value {unconstrained}")
    return TransformedValue(unconstrained, math.exp(unconstrained), unconstrained)


def from_positive(constrained: float) -> float:
    _check_positive(constrained=constrained)
    return math.log(constrained)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise InvalidArgumentError(f"length mismatch: {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise InvalidArgumentError("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))
