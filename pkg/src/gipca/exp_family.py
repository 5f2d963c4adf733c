"""Single-parameter exponential-family kernels with canonical links.

Supported families are Gaussian (unit variance), Poisson and binomial with
known trial counts. Every function is vectorized over ``theta``/``x``; the
binomial ``trials`` attribute may be a scalar or an array that broadcasts
against them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.special import expit, gammaln, log_expit, logit

GAUSSIAN = "gaussian"
POISSON = "poisson"
BINOMIAL = "binomial"
TAGS = (GAUSSIAN, POISSON, BINOMIAL)

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class DistributionKind:
    """Distribution tag plus binomial trial counts (``None`` otherwise)."""

    tag: str
    trials: Any = None

    def __post_init__(self):
        tag = self.tag.lower()
        if tag not in TAGS:
            raise ValueError(f"unknown distribution {self.tag!r}; expected one of {TAGS}")
        object.__setattr__(self, "tag", tag)
        if tag == BINOMIAL:
            if self.trials is None:
                raise ValueError("binomial requires trials")
            if np.any(np.asarray(self.trials) < 1):
                raise ValueError("binomial trials must be >= 1")
        elif self.trials is not None:
            raise ValueError(f"{tag} takes no trials")

    @property
    def m(self):
        return 1 if self.trials is None else self.trials

    def __repr__(self):
        if self.tag == BINOMIAL:
            t = self.trials if np.ndim(self.trials) == 0 else f"array{np.shape(self.trials)}"
            return f"DistributionKind('binomial', trials={t})"
        return f"DistributionKind({self.tag!r})"


def gaussian() -> DistributionKind:
    return DistributionKind(GAUSSIAN)


def poisson() -> DistributionKind:
    return DistributionKind(POISSON)


def binomial(trials) -> DistributionKind:
    return DistributionKind(BINOMIAL, trials)


def _check_finite(theta):
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("natural parameter must be finite")
    return theta


def log_partition(kind: DistributionKind, theta):
    """Cumulant function b(theta)."""
    theta = _check_finite(theta)
    if kind.tag == GAUSSIAN:
        return 0.5 * theta**2
    if kind.tag == POISSON:
        return np.exp(theta)
    # m * log(1 + e^theta), stable for large |theta|
    return kind.m * np.logaddexp(0.0, theta)


def mean(kind: DistributionKind, theta):
    """b'(theta)."""
    theta = _check_finite(theta)
    if kind.tag == GAUSSIAN:
        return theta.copy() if theta.ndim else float(theta)
    if kind.tag == POISSON:
        return np.exp(theta)
    return kind.m * expit(theta)


link_inverse = mean


def variance(kind: DistributionKind, theta):
    """b''(theta), the IRLS working weight."""
    theta = _check_finite(theta)
    if kind.tag == GAUSSIAN:
        return np.ones_like(theta)
    if kind.tag == POISSON:
        return np.exp(theta)
    s = expit(theta)
    # expit(-theta) keeps precision when s is close to 1
    return kind.m * s * expit(-theta)


def link(kind: DistributionKind, mu):
    """Canonical link g = (b')^{-1}. Boundary means raise; clip first."""
    mu = np.asarray(mu, dtype=float)
    if kind.tag == GAUSSIAN:
        return mu.copy() if mu.ndim else float(mu)
    if kind.tag == POISSON:
        if np.any(mu <= 0):
            raise ValueError("Poisson mean must be > 0 for the log link")
        return np.log(mu)
    m = np.asarray(kind.m, dtype=float)
    if np.any(mu <= 0) or np.any(mu >= m):
        raise ValueError("binomial mean must lie strictly inside (0, trials)")
    return logit(mu / m)


def clip_mean(kind: DistributionKind, mu):
    """Move a mean into the open domain of the link."""
    mu = np.asarray(mu, dtype=float)
    if kind.tag == GAUSSIAN:
        return mu.copy() if mu.ndim else float(mu)
    if kind.tag == POISSON:
        return np.maximum(mu, 0.5)
    m = np.asarray(kind.m, dtype=float)
    lo = 1.0 / (2.0 * m)
    return m * np.clip(mu / m, lo, 1.0 - lo)


def log_density(kind: DistributionKind, x, theta):
    """Full log-density including base-measure constants."""
    theta = _check_finite(theta)
    x = np.asarray(x, dtype=float)
    if kind.tag == GAUSSIAN:
        return -0.5 * (x - theta) ** 2 - _HALF_LOG_2PI
    if kind.tag == POISSON:
        if np.any(x < 0) or np.any(x != np.round(x)):
            raise ValueError("Poisson observations must be nonnegative integers")
        return x * theta - np.exp(theta) - gammaln(x + 1.0)
    m = np.asarray(kind.m, dtype=float)
    if np.any(x < 0) or np.any(x > m) or np.any(x != np.round(x)):
        raise ValueError("binomial observations must be integers in [0, trials]")
    log_choose = gammaln(m + 1.0) - gammaln(x + 1.0) - gammaln(m - x + 1.0)
    # x*log(s) + (m-x)*log(1-s) written with log_expit for stability
    return log_choose + x * log_expit(theta) + (m - x) * log_expit(-theta)


def validate_support(kind: DistributionKind, x) -> None:
    """Raise ValueError unless every entry of x is in the family's support."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("observations must be finite")
    if kind.tag == POISSON:
        if np.any(x < 0) or np.any(x != np.round(x)):
            raise ValueError("Poisson observations must be nonnegative integers")
    elif kind.tag == BINOMIAL:
        m = np.asarray(kind.m, dtype=float)
        if np.any(x < 0) or np.any(x > m) or np.any(x != np.round(x)):
            raise ValueError("binomial observations must be integers in [0, trials]")
