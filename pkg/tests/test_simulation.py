import numpy as np
import pytest

from gipca.data_model import RankSpec
from gipca.imputation import COLMEAN, GIPCA
from gipca.simulation import (
    ASSUMED,
    InfeasibleMissingPattern,
    ScenarioSpec,
    generate,
    mad,
    run_replications,
    true_parameters,
)


@pytest.mark.parametrize("scenario", [1, 2, 3, 4, 5])
def test_truth_structure(scenario):
    spec = ScenarioSpec(scenario=scenario, seed=4)
    mu, U0, V, U, A = true_parameters(spec)
    S = np.hstack([U0, *U])
    G = S.T @ S
    np.testing.assert_allclose(G - np.diag(np.diag(G)), 0, atol=1e-10)
    sv = np.concatenate([spec.joint_sv, *spec.indiv_sv])
    np.testing.assert_allclose(np.sqrt(np.diag(G)), sv, rtol=1e-12)
    for k in range(spec.K):
        np.testing.assert_allclose(A[k].T @ A[k], np.eye(2), atol=1e-12)
        np.testing.assert_allclose(A[k].T @ V[k], 0, atol=1e-12)
        assert V[k].shape == (150, 2) and mu[k].shape == (150,)


def test_mean_ranges():
    mu = true_parameters(ScenarioSpec(scenario=4))[0]
    assert -0.5 <= mu[0].min() and mu[0].max() <= 0.5
    assert 0.0 <= mu[1].min() and mu[1].max() <= 1.0
    assert -1.5 <= mu[2].min() and mu[2].max() <= 1.5


def test_generation_is_deterministic():
    spec = ScenarioSpec(scenario=3, seed=7)
    a, b = generate(spec, 2), generate(spec, 2)
    for x, y in zip(a.ds.data, b.ds.data):
        assert np.array_equal(x, y)
    assert all(np.array_equal(x, y) for x, y in zip(a.ds.pattern.observed, b.ds.pattern.observed))


def test_replications_share_truth_not_noise():
    spec = ScenarioSpec(scenario=1, seed=1)
    a, b = generate(spec, 0), generate(spec, 1)
    assert np.array_equal(a.theta_true[0], b.theta_true[0])
    assert not np.array_equal(a.ds.data[0][:5], b.ds.data[0][:5])


def test_missing_rows_disjoint_and_sized():
    spec = ScenarioSpec(scenario=4, missing_rate=0.15, seed=3)
    sim = generate(spec)
    miss = [set(sim.ds.pattern.missing(k)) for k in range(3)]
    assert all(len(m) == 30 for m in miss)
    assert not (miss[0] & miss[1]) and not (miss[0] & miss[2]) and not (miss[1] & miss[2])


def test_zero_missing_rate_is_complete():
    sim = generate(ScenarioSpec(scenario=2, missing_rate=0.0))
    assert all(len(o) == 200 for o in sim.ds.pattern.observed)


def test_infeasible_missing_pattern():
    with pytest.raises(InfeasibleMissingPattern):
        generate(ScenarioSpec(scenario=4, missing_rate=0.6))


def test_ceil_rows():
    assert ScenarioSpec(missing_rate=0.05).rows_missing_per_source() == 10
    assert ScenarioSpec(n=199, missing_rate=0.05).rows_missing_per_source() == 10


def test_observed_data_consistent_with_truth():
    sim = generate(ScenarioSpec(scenario=3, missing_rate=0.05, seed=2))
    obs = sim.ds.pattern.observed[0]
    resid = sim.ds.data[0] - sim.theta_true[0][obs]
    assert abs(resid.mean()) < 0.02 and abs(resid.var() - 1) < 0.02
    from gipca.data_model import natural_params

    np.testing.assert_allclose(natural_params(sim.truth, 0), sim.theta_true[0][obs], atol=1e-12)
    assert sim.ds.data[1].max() <= 100 and sim.ds.data[1].min() >= 0


def test_poisson_draws_match_mean():
    spec = ScenarioSpec(scenario=2, missing_rate=0.0, seed=5)
    lam = np.exp(generate(spec, 0).theta_true[1])
    picks = [(i, j) for i, j in zip(range(0, 200, 20), range(0, 150, 15))]
    draws = np.array([[generate(spec, r).ds.data[1][i, j] for i, j in picks] for r in range(100)])
    for c, (i, j) in enumerate(picks):
        se = np.sqrt(lam[i, j] / 100)
        assert abs(draws[:, c].mean() - lam[i, j]) <= 3 * se


def test_scenario5_assumption_in_metadata():
    sim = generate(ScenarioSpec(scenario=5, missing_rate=0.0))
    assert sim.metadata["assumption"] == ASSUMED[5]
    assert sim.ds.sources[0].family == "binomial"


def test_signal_scale_shrinks_joint_only():
    a = true_parameters(ScenarioSpec(scenario=1))
    b = true_parameters(ScenarioSpec(scenario=1, signal_scale=0.2))
    np.testing.assert_allclose(b[1], 0.2 * a[1])
    np.testing.assert_allclose(b[3][0], a[3][0])


def test_mad_examples():
    assert mad([1.0]) == 0.0
    assert mad([1.0, 2.0, 3.0, 4.0, 100.0]) == 1.0


def test_run_replications_single_rep():
    spec = ScenarioSpec(scenario=1, n=40, p=(12, 10), seed=0)
    tab = run_replications(spec, 1, methods=(GIPCA, COLMEAN))
    rows = tab.summary()
    assert len(rows) == 4
    for row in rows:
        assert row["mad"] == 0.0 and row["n_ok"] == 1 and 0 < row["median"] < 2


def test_run_replications_counts_failures():
    spec = ScenarioSpec(scenario=1, n=40, p=(12, 10), seed=0)
    tab = run_replications(spec, 2, methods=(GIPCA,), ranks=RankSpec(9, (9, 9)))
    assert tab.failures == {GIPCA: 2}
    assert np.isnan(tab.medians()[0])
