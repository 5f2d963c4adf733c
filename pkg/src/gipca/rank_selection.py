"""Adapted BIC and stepwise rank search."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .data_model import MultiSourceDataset, RankSpec
from .fitter import FitConfig, FitReport, fit

log = logging.getLogger(__name__)


def _range_sum(lo: int, hi: int) -> int:
    """sum_{j=lo}^{hi} j, zero when empty."""
    if hi < lo:
        return 0
    return (lo + hi) * (hi - lo + 1) // 2


def free_param_count(ranks: RankSpec, n: int, n_k: Sequence[int], p_k: Sequence[int]) -> int:
    """Number of free parameters for the given ranks.

    Means contribute sum p_k; centered orthogonal joint scores
    sum_{j=n-r_J}^{n-1} j; joint loadings sum_{j=p-r_J}^{p-1} j with
    p = sum p_k; individual scores (centered, orthogonal to the joint
    scores) sum_{l=n_k-r_J-r_k}^{n_k-r_J-1} l; individual loadings
    sum_{j=p_k-r_k}^{p_k-1} j.
    """
    r_J = ranks.r_J
    p = sum(p_k)
    total = sum(p_k)
    total += _range_sum(n - r_J, n - 1)
    total += _range_sum(p - r_J, p - 1)
    for r, nk, pk in zip(ranks.r_A, n_k, p_k):
        total += _range_sum(nk - (r_J + r), nk - (r_J + 1))
        total += _range_sum(pk - r, pk - 1)
    return int(total)


@dataclass
class BicResult:
    ranks: RankSpec
    bic: float
    loglik: float
    n_params: int
    report: Optional[FitReport] = None
    error: Optional[str] = None


def bic_value(loglik: float, n_params: int, n_obs: int) -> float:
    return -2.0 * loglik + math.log(n_obs) * n_params


def bic(ds: MultiSourceDataset, report: FitReport, ranks: RankSpec) -> BicResult:
    k = free_param_count(ranks, ds.n, ds.n_k, ds.p)
    ll = report.loglik
    return BicResult(ranks, bic_value(ll, k, ds.n_observed_entries()), ll, k, report)


@dataclass
class Selection:
    selected: RankSpec
    trace: list  # every evaluated BicResult, in evaluation order
    path: list = field(default_factory=list)  # accepted rank vectors, starting at zero

    @property
    def best(self) -> BicResult:
        return next(r for r in self.trace if r.ranks == self.selected)


def neighbors(ranks: RankSpec) -> list:
    """Rank vectors differing from ``ranks`` by +-1 in exactly one entry."""
    vec = list(ranks.as_tuple())
    out = []
    for i in range(len(vec)):
        for d in (1, -1):
            v = vec.copy()
            v[i] += d
            if v[i] >= 0:
                out.append(RankSpec(v[0], tuple(v[1:])))
    return out


def _tie_key(res: BicResult, order: dict):
    r = res.ranks
    return (res.bic, sum(r.as_tuple()), r.r_J, order[r])


def stepwise_select(ds: MultiSourceDataset, cfg: FitConfig = FitConfig(),
                    bounds: Optional[RankSpec] = None,
                    fit_fn: Optional[Callable] = None) -> Selection:
    """Greedy +-1 search over rank vectors starting from all zeros.

    Moves to the neighbor with the smallest BIC while that is strictly
    below the incumbent; stops at a local minimum. Each rank vector is
    fitted at most once. Neighbors outside ``bounds`` or inadmissible for
    the data are skipped; failed fits count as BIC = +inf.
    """
    fit_fn = fit_fn or (lambda d, r: fit(d, r, cfg))
    cache: dict = {}
    trace: list = []

    def admissible(r: RankSpec) -> bool:
        if bounds is not None:
            b = bounds.as_tuple()
            if len(b) != len(r.as_tuple()) or any(x > y for x, y in zip(r.as_tuple(), b)):
                return False
        return r.is_valid_for(ds)

    def evaluate(r: RankSpec) -> BicResult:
        if r not in cache:
            try:
                res = bic(ds, fit_fn(ds, r), r)
            except Exception as err:
                log.warning("fit at ranks %s failed: %s", r, err)
                res = BicResult(r, math.inf, -math.inf, free_param_count(r, ds.n, ds.n_k, ds.p), None, str(err))
            log.info("ranks %s: BIC %.3f", r, res.bic)
            cache[r] = res
            trace.append(res)
        return cache[r]

    current = RankSpec.zeros(ds.K)
    best = evaluate(current)
    path = [current]
    while True:
        cands = [r for r in neighbors(current) if admissible(r)]
        if not cands:
            break
        order = {r: i for i, r in enumerate(cands)}
        results = [evaluate(r) for r in cands]
        top = min(results, key=lambda res: _tie_key(res, order))
        if not top.bic < best.bic:
            break
        current, best = top.ranks, top
        path.append(current)
    return Selection(current, trace, path)
