import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gipca.data_model import MultiSourceDataset, ObservationPattern, RankSpec, SourceSpec
from gipca.fitter import FitConfig, FitReport, fit
from gipca.rank_selection import bic, bic_value, free_param_count, neighbors, stepwise_select


def loop_count(r_J, r_A, n, n_k, p_k):
    """Free parameters by literally looping over each summation."""
    total = 0
    for pk in p_k:
        total += pk
    for j in range(n - r_J, n):
        total += j
    p = sum(p_k)
    for j in range(p - r_J, p):
        total += j
    for r, nk, pk in zip(r_A, n_k, p_k):
        for l in range(nk - r_J - r, nk - r_J):
            total += l
        for j in range(pk - r, pk):
            total += j
    return total


def test_count_hand_example():
    assert free_param_count(RankSpec(1, (0, 0)), 10, [10, 10], [3, 4]) == 22


def test_count_matches_loop_oracle_grid():
    for r in itertools.product(range(6), repeat=3):
        ranks = RankSpec(r[0], r[1:])
        assert free_param_count(ranks, 200, [190, 190], [150, 150]) == loop_count(r[0], r[1:], 200, [190, 190], [150, 150])


def test_count_closed_form_cross_check():
    # sum_{j=n-r}^{n-1} j = r(2n - r - 1)/2
    n, p, r = 200, 300, 4
    got = free_param_count(RankSpec(r, (0, 0)), n, [n, n], [150, 150])
    assert got == 300 + r * (2 * n - r - 1) // 2 + r * (2 * p - r - 1) // 2


@given(st.integers(0, 5), st.lists(st.integers(0, 5), min_size=2, max_size=2), st.integers(0, 2))
def test_count_monotone_in_each_coordinate(r_J, r_A, coord):
    base = RankSpec(r_J, tuple(r_A))
    v = list(base.as_tuple())
    v[coord] += 1
    bigger = RankSpec(v[0], tuple(v[1:]))
    args = (200, [190, 180], [150, 120])
    assert free_param_count(bigger, *args) >= free_param_count(base, *args)


def _gaussian_ds(n=25, p=(4, 5), seed=0):
    rng = np.random.default_rng(seed)
    data = tuple(rng.normal(size=(n, pk)) for pk in p)
    return MultiSourceDataset(tuple(SourceSpec(f"g{k}", "gaussian", pk) for k, pk in enumerate(p)),
                              ObservationPattern.complete(n, len(p)), data)


def test_zero_rank_bic_is_intercept_model():
    ds = _gaussian_ds()
    rep = fit(ds, RankSpec.zeros(2))
    ll = sum(-0.5 * np.sum((x - x.mean(0)) ** 2) - 0.5 * x.size * math.log(2 * math.pi) for x in ds.data)
    res = bic(ds, rep, RankSpec.zeros(2))
    assert res.loglik == pytest.approx(ll, rel=1e-9)
    assert res.bic == pytest.approx(-2 * ll + math.log(25 * 9) * 9, rel=1e-9)


def test_equal_loglik_smaller_model_wins():
    assert bic_value(-100.0, 10, 50) < bic_value(-100.0, 11, 50)


def test_neighbors():
    got = set(neighbors(RankSpec(1, (0, 2))))
    assert got == {RankSpec(2, (0, 2)), RankSpec(0, (0, 2)), RankSpec(1, (1, 2)),
                   RankSpec(1, (0, 3)), RankSpec(1, (0, 1))}


class Landscape:
    """Fake fitter returning reports whose BIC follows a prescribed function."""

    def __init__(self, ds, target, fail=()):
        self.ds, self.target, self.fail = ds, target, set(fail)
        self.calls = []

    def __call__(self, ds, ranks):
        self.calls.append(ranks)
        if ranks in self.fail:
            raise ArithmeticError("boom")
        k = free_param_count(ranks, ds.n, ds.n_k, ds.p)
        ll = (math.log(ds.n_observed_entries()) * k - self.target(ranks)) / 2
        return FitReport(psi=None, loglik_trace=[ll], sweeps=1, converged=True, ranks=ranks)


def _bowl(center):
    c = np.array(center)
    return lambda r: float(np.sum((np.array(r.as_tuple()) - c) ** 2))


def test_search_walks_to_bowl_minimum():
    ds = _gaussian_ds()
    land = Landscape(ds, _bowl((2, 1, 2)))
    sel = stepwise_select(ds, fit_fn=land)
    assert sel.selected == RankSpec(2, (1, 2))
    assert sel.path[0] == RankSpec.zeros(2)
    bics = [next(t.bic for t in sel.trace if t.ranks == r) for r in sel.path]
    assert all(b1 < b0 for b0, b1 in zip(bics, bics[1:]))
    assert len(land.calls) == len(set(land.calls))  # each vector fitted once
    for t in sel.trace:
        assert t.bic == bic_value(t.loglik, t.n_params, ds.n_observed_entries())


def test_selected_is_local_minimum():
    ds = _gaussian_ds()
    sel = stepwise_select(ds, fit_fn=Landscape(ds, _bowl((1, 2, 0))))
    best = sel.best.bic
    evaluated = {t.ranks: t.bic for t in sel.trace}
    for r in neighbors(sel.selected):
        if r.is_valid_for(ds):
            assert evaluated[r] >= best


def test_tie_key_order():
    from gipca.rank_selection import BicResult, _tie_key

    cands = [RankSpec(1, (1, 0)), RankSpec(0, (1, 1)), RankSpec(0, (2, 0)), RankSpec(0, (0, 2)), RankSpec(0, (0, 1))]
    order = {r: i for i, r in enumerate(cands)}
    res = [BicResult(r, 7.0, 0.0, 0) for r in cands]
    ranked = [r.ranks for r in sorted(res, key=lambda x: _tie_key(x, order))]
    assert ranked[0] == RankSpec(0, (0, 1))  # smallest total rank
    # total 2 group: r_J = 0 before r_J = 1, then candidate (source) order
    assert ranked[1:] == [RankSpec(0, (1, 1)), RankSpec(0, (2, 0)), RankSpec(0, (0, 2)), RankSpec(1, (1, 0))]


def test_exact_tie_goes_to_first_source():
    ds = _gaussian_ds(p=(5, 5))  # symmetric sources: (0,1,0) and (0,0,1) tie exactly
    land = Landscape(ds, lambda r: 10.0 if r.r_J or sum(r.r_A) != 1 else 5.0)
    sel = stepwise_select(ds, fit_fn=land)
    assert sel.path[1] == RankSpec(0, (1, 0))


def test_bounds_and_failures():
    ds = _gaussian_ds()
    land = Landscape(ds, _bowl((3, 3, 3)), fail={RankSpec(0, (0, 1))})
    sel = stepwise_select(ds, bounds=RankSpec(1, (1, 1)), fit_fn=land)
    assert all(r.r_J <= 1 and max(r.r_A) <= 1 for r in land.calls)
    failed = [t for t in sel.trace if t.ranks == RankSpec(0, (0, 1))]
    assert failed and failed[0].bic == math.inf and failed[0].error
    assert sel.selected == RankSpec(1, (1, 1))


def test_pure_noise_selects_zero():
    ds = _gaussian_ds(n=40, p=(6, 6), seed=5)
    sel = stepwise_select(ds, FitConfig())
    assert sel.selected == RankSpec.zeros(2)
