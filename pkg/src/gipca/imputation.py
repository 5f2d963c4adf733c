"""Block-wise missing imputation, relative Frobenius loss and ad hoc baselines."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from . import exp_family as ef
from .data_model import ModelParams, MultiSourceDataset

GIPCA = "gipca"
COLMEAN = "colmean"
ADJACENT = "adjacent"
SAMEROW = "samerow"
METHODS = (GIPCA, COLMEAN, ADJACENT, SAMEROW)


class ZeroReference(ValueError):
    """The reference matrix has zero Frobenius norm."""


class MethodRequiresModel(ValueError):
    pass


@dataclass
class SourceImputation:
    """Imputed values for the unobserved rows of one source.

    ``rate`` is the mean scale divided by trials for binomial sources (and
    equal to ``filled`` otherwise); it is the scale the ad hoc methods
    average on.
    """

    rows: np.ndarray
    theta: np.ndarray
    filled: np.ndarray
    rate: np.ndarray
    fallbacks: int = 0


@dataclass
class ImputationResult:
    method: str
    sources: list = field(default_factory=list)

    def __getitem__(self, k) -> SourceImputation:
        return self.sources[k]

    @property
    def total_fallbacks(self) -> int:
        return sum(s.fallbacks for s in self.sources)


def _missing_trials(ds: MultiSourceDataset, k: int, rows) -> np.ndarray:
    src = ds.sources[k]
    t = src.trials_for(rows)
    return np.broadcast_to(np.asarray(t, dtype=float), (len(rows), src.p))


def _to_rate(ds, k, rows, values):
    if ds.sources[k].family != ef.BINOMIAL:
        return values
    return values / _missing_trials(ds, k, rows)


def observed_rates(ds: MultiSourceDataset, k: int) -> np.ndarray:
    """Observed data on the rate scale (x / trials for binomial sources)."""
    return _to_rate(ds, k, ds.pattern.observed[k], ds.data[k])


def impute_gipca(ds: MultiSourceDataset, psi: ModelParams) -> ImputationResult:
    """theta = 1 mu_k^T + U0[missing] V_k^T; data = inverse link of theta."""
    out = ImputationResult(GIPCA)
    for k, src in enumerate(ds.sources):
        rows = ds.pattern.missing(k)
        theta = psi.joint_theta(k, rows)
        if src.family == ef.BINOMIAL:
            rate = expit(theta)
            filled = rate * _missing_trials(ds, k, rows)
        else:
            filled = np.asarray(ef.link_inverse(ef.DistributionKind(src.family), theta), dtype=float).reshape(theta.shape)
            rate = filled
        out.sources.append(SourceImputation(rows, theta, filled, rate))
    return out


def diff_r_miss(theta_true, theta_est) -> float:
    """||true - est||_F / ||true||_F."""
    a = np.asarray(theta_true, dtype=float)
    b = np.asarray(theta_est, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    ref = np.linalg.norm(a)
    if ref == 0:
        raise ZeroReference("reference matrix is zero")
    return float(np.linalg.norm(a - b) / ref)


def _rate_to_source(ds, k, rows, rate):
    """Mean scale and clipped natural parameter from a rate-scale estimate."""
    src = ds.sources[k]
    if src.family == ef.BINOMIAL:
        m = _missing_trials(ds, k, rows)
        filled = rate * m
        kind = ef.binomial(np.where(np.isfinite(m), m, 1.0))
        theta = ef.link(kind, ef.clip_mean(kind, rate * kind.m))
        return filled, np.asarray(theta, dtype=float)
    kind = ef.DistributionKind(src.family)
    return rate, np.asarray(ef.link(kind, ef.clip_mean(kind, rate)), dtype=float)


def impute_baseline(ds: MultiSourceDataset, method: str, window: int = 5,
                    pair: Optional[dict] = None) -> ImputationResult:
    """Ad hoc imputations on the rate scale.

    colmean   column mean of the observed rows of the same source
    adjacent  mean of observed rows of the same column within +-window
              sample indices (sample order must be meaningful, e.g. years)
    samerow   same row and column of a paired source; ``pair`` maps source
              index to its partner (default: the other source when K == 2)

    Rows without a donor fall back to the column mean and are counted in
    ``fallbacks``.
    """
    if method not in (COLMEAN, ADJACENT, SAMEROW):
        raise ValueError(f"unknown baseline {method!r}")
    if method == SAMEROW and pair is None:
        if ds.K != 2:
            raise ValueError("samerow needs an explicit source pairing when K != 2")
        pair = {0: 1, 1: 0}
    out = ImputationResult(method)
    for k, src in enumerate(ds.sources):
        rows = ds.pattern.missing(k)
        obs = ds.pattern.observed[k]
        rates = observed_rates(ds, k)
        colmean = rates.mean(axis=0)
        est = np.tile(colmean, (len(rows), 1))
        fallbacks = 0
        if method == ADJACENT:
            for i, r in enumerate(rows):
                near = np.abs(obs - r) <= window
                if near.any():
                    est[i] = rates[near].mean(axis=0)
                else:
                    fallbacks += 1
        elif method == SAMEROW and len(rows):
            j = pair[k]
            if ds.p[j] != src.p:
                raise ValueError(f"samerow pairs sources with different widths ({src.p} vs {ds.p[j]})")
            other = np.full(ds.n, -1)
            other[ds.pattern.observed[j]] = np.arange(ds.pattern.n_k(j))
            donor_rates = observed_rates(ds, j)
            for i, r in enumerate(rows):
                if other[r] >= 0:
                    est[i] = donor_rates[other[r]]
                else:
                    fallbacks += 1
        filled, theta = _rate_to_source(ds, k, rows, est)
        out.sources.append(SourceImputation(rows, theta, filled, est, fallbacks))
    return out


def impute(ds: MultiSourceDataset, method: str, psi: Optional[ModelParams] = None, **kw) -> ImputationResult:
    if method == GIPCA:
        if psi is None:
            raise MethodRequiresModel("gipca imputation needs a fitted model")
        return impute_gipca(ds, psi)
    return impute_baseline(ds, method, **kw)
