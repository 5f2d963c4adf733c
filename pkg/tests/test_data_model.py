import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gipca import exp_family as ef
from gipca.data_model import (
    DimensionError,
    ModelParams,
    MultiSourceDataset,
    NumericalFailure,
    ObservationPattern,
    RankSpec,
    SourceSpec,
    check_identifiability,
    log_likelihood,
    log_likelihood_terms,
    natural_params,
)

from conftest import random_instance


def test_pattern_requires_cover():
    with pytest.raises(ValueError, match="unobserved in every source"):
        ObservationPattern(4, (np.array([0, 1]), np.array([1, 2])))


def test_pattern_sorted_rows():
    with pytest.raises(ValueError):
        ObservationPattern(3, (np.array([2, 0, 1]),))


def test_pattern_missing_and_mask():
    pat = ObservationPattern(5, (np.array([0, 2, 3, 4]), np.array([0, 1, 2])))
    assert pat.missing(0).tolist() == [1]
    assert pat.missing(1).tolist() == [3, 4]
    assert pat.mask(1).tolist() == [True, True, True, False, False]


def test_dataset_shape_checked():
    pat = ObservationPattern.complete(3, 1)
    with pytest.raises(DimensionError):
        MultiSourceDataset((SourceSpec("a", "gaussian", 2),), pat, (np.zeros((3, 3)),))


def test_dataset_support_checked():
    pat = ObservationPattern.complete(2, 1)
    with pytest.raises(ValueError, match="'c'"):
        MultiSourceDataset((SourceSpec("c", "poisson", 1),), pat, (np.array([[1.0], [-2.0]]),))


def test_binomial_trials_required_and_bounded():
    with pytest.raises(ValueError):
        SourceSpec("b", "binomial", 2)
    pat = ObservationPattern.complete(2, 1)
    with pytest.raises(ValueError):
        MultiSourceDataset((SourceSpec("b", "binomial", 1, trials=3),), pat, (np.array([[4.0], [1.0]]),))


def test_rankspec_parse_and_bounds():
    r = RankSpec.parse("2,1,3")
    assert r.r_J == 2 and r.r_A == (1, 3)
    assert str(r) == "2,1,3"
    assert r.violations(10, [9, 9], [5, 5]) == []
    assert RankSpec(2, (3, 0)).violations(10, [9, 9], [5, 5]) == []  # r_J + r_1 = p_1 is allowed
    assert RankSpec(2, (4, 0)).violations(10, [9, 9], [5, 5])  # r_J + r_1 > p_1
    assert RankSpec(1, (0, 0)).violations(10, [2, 9], [5, 5]) == []
    assert RankSpec(1, (1, 0)).violations(10, [2, 9], [5, 5])  # r_J + r_1 > n_1 - 1
    with pytest.raises(ValueError):
        RankSpec(-1, (0,))


def test_natural_params_against_entrywise_sums(rng):
    """Oracle: assemble theta entry by entry with explicit triple sums."""
    ds, psi = random_instance(rng, ranks=(2, (1, 2)))
    for k in range(ds.K):
        obs = psi.observed[k]
        theta = natural_params(psi, k)
        for a, i in enumerate(obs):
            for j in range(ds.p[k]):
                v = psi.mu[k][j]
                v += sum(psi.U0[i, l] * psi.V[k][j, l] for l in range(psi.U0.shape[1]))
                v += sum(psi.Ustar[k][a, l] * psi.A[k][j, l] for l in range(psi.A[k].shape[1]))
                assert theta[a, j] == pytest.approx(v, abs=1e-13)


def test_loglik_against_per_entry_densities(rng):
    from scipy import stats

    ds, psi = random_instance(rng, p=(3, 4, 2), families=("gaussian", "poisson", "binomial"),
                              ranks=(1, (1, 0, 1)), n=10, n_missing=1)
    total = 0.0
    for k in range(ds.K):
        theta = natural_params(psi, k)
        x = ds.data[k]
        fam = ds.sources[k].family
        if fam == "gaussian":
            total += stats.norm.logpdf(x, loc=theta).sum()
        elif fam == "poisson":
            total += stats.poisson.logpmf(x, np.exp(theta)).sum()
        else:
            total += stats.binom.logpmf(x, 5, 1 / (1 + np.exp(-theta))).sum()
    assert log_likelihood(ds, psi) == pytest.approx(total, rel=1e-12)
    assert sum(log_likelihood_terms(ds, psi)) == pytest.approx(total, rel=1e-12)


def test_loglik_ignores_missing_rows(rng):
    ds, psi = random_instance(rng)
    base = log_likelihood(ds, psi)
    U0 = psi.U0.copy()
    miss = ds.pattern.missing(0)
    # rows missing in source 0 are observed in source 1, so perturbing U0 there changes
    # only source 1's term
    U0[miss] += 10.0
    psi2 = ModelParams(psi.mu, U0, psi.V, psi.Ustar, psi.A, psi.observed)
    t1, t2 = log_likelihood_terms(ds, psi), log_likelihood_terms(ds, psi2)
    assert t1[0] == pytest.approx(t2[0], abs=0)
    assert log_likelihood(ds, psi2) != base


def test_nonfinite_theta_located(rng):
    ds, psi = random_instance(rng)
    mu = [m.copy() for m in psi.mu]
    mu[1][2] = np.inf
    bad = ModelParams(mu, psi.U0, psi.V, psi.Ustar, psi.A, psi.observed)
    with pytest.raises(NumericalFailure, match="source 's1'.*column 2"):
        log_likelihood(ds, bad)


def test_model_params_shape_checks(rng):
    _, psi = random_instance(rng)
    with pytest.raises(DimensionError):
        ModelParams(psi.mu, psi.U0, [psi.V[0], psi.V[1][:-1]], psi.Ustar, psi.A, psi.observed)
    with pytest.raises(DimensionError):
        ModelParams(psi.mu, psi.U0, psi.V, [psi.Ustar[0][:-1], psi.Ustar[1]], psi.A, psi.observed)


def test_identifiability_flags_violations(rng):
    _, psi = random_instance(rng, ranks=(2, (2, 2)))
    rep = check_identifiability(psi, 1e-8)
    assert not rep.passed
    assert rep.violations["score_column_mean"] > 1e-3


def test_identifiability_zero_rank_passes(rng):
    _, psi = random_instance(rng, ranks=(0, (0, 0)))
    assert check_identifiability(psi).passed


@given(st.integers(0, 4), st.lists(st.integers(0, 4), min_size=1, max_size=3))
def test_rankspec_roundtrip(r_J, r_A):
    r = RankSpec(r_J, tuple(r_A))
    assert RankSpec.parse(str(r)) == r
    assert hash(RankSpec.parse(str(r))) == hash(r)
