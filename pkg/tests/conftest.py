import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy.special import expit

from gipca import exp_family as ef
from gipca.data_model import ModelParams, MultiSourceDataset, ObservationPattern, SourceSpec

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_instance(rng, n=12, p=(5, 4), families=("gaussian", "poisson"), ranks=(1, (1, 1)),
                    n_missing=2, trials=5, scale=0.4):
    """A small dataset with block-wise missing rows and arbitrary (unregularized) parameters."""
    K = len(p)
    r_J, r_A = ranks
    perm = rng.permutation(n)
    observed = []
    for k in range(K):
        miss = perm[k * n_missing:(k + 1) * n_missing]
        observed.append(np.setdiff1d(np.arange(n), miss))
    pattern = ObservationPattern(n, tuple(observed))
    mu = [rng.uniform(-0.5, 0.5, pk) for pk in p]
    U0 = rng.normal(0, scale, (n, r_J))
    V = [rng.normal(0, scale, (pk, r_J)) for pk in p]
    Ustar = [rng.normal(0, scale, (len(observed[k]), r_A[k])) for k in range(K)]
    A = [rng.normal(0, scale, (p[k], r_A[k])) for k in range(K)]
    psi = ModelParams(mu=mu, U0=U0, V=V, Ustar=Ustar, A=A, observed=tuple(observed))
    sources, data = [], []
    for k, fam in enumerate(families):
        obs = observed[k]
        theta = mu[k] + U0[obs] @ V[k].T + Ustar[k] @ A[k].T
        if fam == ef.GAUSSIAN:
            x = theta + rng.standard_normal(theta.shape)
            src = SourceSpec(f"s{k}", fam, p[k])
        elif fam == ef.POISSON:
            x = rng.poisson(np.exp(theta)).astype(float)
            src = SourceSpec(f"s{k}", fam, p[k])
        else:
            x = rng.binomial(trials, expit(theta)).astype(float)
            src = SourceSpec(f"s{k}", fam, p[k], trials=trials)
        sources.append(src)
        data.append(x)
    return MultiSourceDataset(tuple(sources), pattern, tuple(data)), psi


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def record(criterion: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
