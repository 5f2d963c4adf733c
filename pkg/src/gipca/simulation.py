"""Seeded generators for the simulation scenarios and replication tables.

Randomness comes from numpy's PCG64 seeded through ``SeedSequence``:
the true parameters are drawn from the stream ``[seed, 0]``, replication
``r`` (noise and missing rows) from ``[seed, 1, r]``.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from . import exp_family as ef
from .data_model import ModelParams, MultiSourceDataset, ObservationPattern, RankSpec, SourceSpec
from .imputation import GIPCA, diff_r_miss, impute

log = logging.getLogger(__name__)

BINOMIAL_TRIALS = 100
MEAN_RANGES = {ef.GAUSSIAN: (-0.5, 0.5), ef.POISSON: (0.0, 1.0), ef.BINOMIAL: (-1.5, 1.5)}

# families, joint singular values, individual singular values, half-width of
# the uniform draw for each source's joint loadings
SCENARIOS = {
    1: dict(families=(ef.GAUSSIAN, ef.GAUSSIAN), joint_sv=(250.0, 150.0),
            indiv_sv=((150.0, 100.0), (150.0, 140.0)), joint_range=(0.5, 0.5)),
    2: dict(families=(ef.GAUSSIAN, ef.POISSON), joint_sv=(240.0, 220.0),
            indiv_sv=((90.0, 80.0), (90.0, 80.0)), joint_range=(1.0, 0.25)),
    3: dict(families=(ef.GAUSSIAN, ef.BINOMIAL), joint_sv=(240.0, 220.0),
            indiv_sv=((90.0, 80.0), (100.0, 80.0)), joint_range=(0.5, 1.5)),
    4: dict(families=(ef.GAUSSIAN, ef.POISSON, ef.BINOMIAL), joint_sv=(300.0, 280.0),
            indiv_sv=((150.0, 120.0), (150.0, 140.0), (200.0, 180.0)), joint_range=(0.5, 0.5, 1.5)),
    # joint and individual singular values borrowed from scenarios 2/3
    5: dict(families=(ef.BINOMIAL, ef.POISSON), joint_sv=(240.0, 220.0),
            indiv_sv=((100.0, 80.0), (90.0, 80.0)), joint_range=(1.5, 0.5)),
}
ASSUMED = {5: "joint and individual singular values not given for scenario 5; "
              "using (240,220) joint, (100,80) binomial, (90,80) Poisson"}


class InfeasibleMissingPattern(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: int = 1
    n: int = 200
    p: Optional[tuple] = None
    r_J: int = 2
    r_A: Optional[tuple] = None
    joint_sv: Optional[tuple] = None
    indiv_sv: Optional[tuple] = None
    missing_rate: float = 0.05
    seed: int = 0
    signal_scale: float = 1.0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {sorted(SCENARIOS)}")
        base = SCENARIOS[self.scenario]
        K = len(base["families"])
        if self.p is None:
            object.__setattr__(self, "p", (150,) * K)
        if self.r_A is None:
            object.__setattr__(self, "r_A", (2,) * K)
        if self.joint_sv is None:
            object.__setattr__(self, "joint_sv", base["joint_sv"][: self.r_J] + (base["joint_sv"][-1],) * max(0, self.r_J - 2))
        if self.indiv_sv is None:
            object.__setattr__(self, "indiv_sv", tuple(
                tuple(sv[:r]) + (sv[-1],) * max(0, r - len(sv)) for sv, r in zip(base["indiv_sv"], self.r_A)
            ))
        if not 0 <= self.missing_rate < 1:
            raise ValueError("missing_rate must be in [0, 1)")
        if len(self.p) != K or len(self.r_A) != K or len(self.indiv_sv) != K:
            raise ValueError(f"scenario {self.scenario} has {K} sources")

    @property
    def families(self) -> tuple:
        return SCENARIOS[self.scenario]["families"]

    @property
    def K(self) -> int:
        return len(self.families)

    @property
    def ranks(self) -> RankSpec:
        return RankSpec(self.r_J, self.r_A)

    def rows_missing_per_source(self) -> int:
        return math.ceil(round(self.missing_rate * self.n, 9))


@dataclass
class SimulatedData:
    ds: MultiSourceDataset
    truth: ModelParams
    theta_true: list  # full n x p_k natural parameter matrices
    spec: ScenarioSpec
    replication: int = 0
    metadata: dict = field(default_factory=dict)

    def theta_missing(self, k: int) -> np.ndarray:
        return self.theta_true[k][self.ds.pattern.missing(k)]


def _orthonormal(rng, rows, cols, half=0.5):
    Q, _ = np.linalg.qr(rng.uniform(-half, half, size=(rows, cols)))
    return Q


def true_parameters(spec: ScenarioSpec):
    """Draw (mu, U0, V, U, A) for all n samples, independent of replication."""
    rng = np.random.default_rng([spec.seed, 0])
    base = SCENARIOS[spec.scenario]
    n, K, p = spec.n, spec.K, spec.p
    # (U0, U_1, ..., U_K) orthonormalized as one matrix, so joint and
    # individual scores are mutually orthogonal
    scores = _orthonormal(rng, n, spec.r_J + sum(spec.r_A))
    cuts = np.cumsum([spec.r_J, *spec.r_A])[:-1]
    U0, *U = np.split(scores, cuts, axis=1)
    U0 = U0 * (np.asarray(spec.joint_sv, dtype=float) * spec.signal_scale)
    U = [U[k] * np.asarray(spec.indiv_sv[k], dtype=float) for k in range(K)]
    A = [_orthonormal(rng, p[k], spec.r_A[k]) for k in range(K)]
    # stacked joint loadings: per-source uniform ranges, orthonormalized together,
    # then projected off the span of blockdiag(A_1, ..., A_K)
    raw = np.vstack([rng.uniform(-h, h, size=(p[k], spec.r_J)) for k, h in enumerate(base["joint_range"])])
    Vs, _ = np.linalg.qr(raw)
    blk = np.zeros((sum(p), sum(spec.r_A)))
    r0, c0 = 0, 0
    for k in range(K):
        blk[r0:r0 + p[k], c0:c0 + spec.r_A[k]] = A[k]
        r0, c0 = r0 + p[k], c0 + spec.r_A[k]
    Vs = Vs - blk @ (blk.T @ Vs)
    V = np.split(Vs, np.cumsum(p)[:-1], axis=0)
    mu = [rng.uniform(*MEAN_RANGES[f], size=p[k]) for k, f in enumerate(spec.families)]
    return mu, U0, V, U, A


def missing_rows(spec: ScenarioSpec, rng) -> list:
    m = spec.rows_missing_per_source()
    if m * spec.K > spec.n:
        raise InfeasibleMissingPattern(
            f"{m} missing rows per source x {spec.K} sources exceeds n={spec.n}; "
            "missing blocks must not overlap"
        )
    perm = rng.permutation(spec.n)
    return [np.sort(perm[k * m:(k + 1) * m]) for k in range(spec.K)]


def generate(spec: ScenarioSpec, replication: int = 0) -> SimulatedData:
    mu, U0, V, U, A = true_parameters(spec)
    rng = np.random.default_rng([spec.seed, 1, replication])
    miss = missing_rows(spec, rng)
    n = spec.n
    observed, sources, data, theta_true, Ustar = [], [], [], [], []
    for k, fam in enumerate(spec.families):
        theta = mu[k][None, :] + U0 @ V[k].T + U[k] @ A[k].T
        theta_true.append(theta)
        if fam == ef.GAUSSIAN:
            x = theta + rng.standard_normal(theta.shape)
            src = SourceSpec(f"source{k + 1}", fam, spec.p[k])
        elif fam == ef.POISSON:
            x = rng.poisson(np.exp(theta)).astype(float)
            src = SourceSpec(f"source{k + 1}", fam, spec.p[k])
        else:
            x = rng.binomial(BINOMIAL_TRIALS, expit(theta)).astype(float)
            src = SourceSpec(f"source{k + 1}", fam, spec.p[k], trials=BINOMIAL_TRIALS)
        keep = np.ones(n, dtype=bool)
        keep[miss[k]] = False
        obs = np.flatnonzero(keep)
        observed.append(obs)
        sources.append(src)
        data.append(x[obs])
        Ustar.append(U[k][obs])
    pattern = ObservationPattern(n, tuple(observed))
    ds = MultiSourceDataset(tuple(sources), pattern, tuple(data))
    truth = ModelParams(mu=mu, U0=U0, V=V, Ustar=Ustar, A=A, observed=pattern.observed)
    meta = {"spec": asdict(spec), "replication": replication}
    if spec.scenario in ASSUMED:
        meta["assumption"] = ASSUMED[spec.scenario]
    return SimulatedData(ds, truth, theta_true, spec, replication, meta)


def mad(values) -> float:
    """Median absolute deviation from the median (unscaled)."""
    v = np.asarray(values, dtype=float)
    return float(np.median(np.abs(v - np.median(v)))) if v.size else float("nan")


@dataclass
class ReplicationTable:
    spec: ScenarioSpec
    records: list  # dicts: replication, method, source, diff_r_miss
    failures: dict  # method -> count

    def summary(self) -> list:
        rows = []
        methods = sorted({r["method"] for r in self.records} | set(self.failures), key=str)
        for method in methods:
            for k in range(self.spec.K):
                vals = [r["diff_r_miss"] for r in self.records if r["method"] == method and r["source"] == k]
                rows.append({
                    "scenario": self.spec.scenario,
                    "missing_rate": self.spec.missing_rate,
                    "method": method,
                    "source": k + 1,
                    "family": self.spec.families[k],
                    "median": float(np.median(vals)) if vals else float("nan"),
                    "mad": mad(vals),
                    "n_ok": len(vals),
                    "n_failed": self.failures.get(method, 0),
                })
        return rows

    def medians(self, method: str = GIPCA) -> list:
        return [row["median"] for row in self.summary() if row["method"] == method]


def _one_replication(spec, rep, methods, ranks, cfg, init_seed):
    from .fitter import FitConfig, fit

    sim = generate(spec, rep)
    out, failed = [], []
    for method in methods:
        try:
            if method == GIPCA:
                c = cfg or FitConfig()
                if init_seed is not None:
                    c = replace(c, seed=init_seed)
                rep_fit = fit(sim.ds, ranks or spec.ranks, c)
                imp = impute(sim.ds, GIPCA, rep_fit.psi)
            else:
                imp = impute(sim.ds, method)
            for k in range(spec.K):
                out.append({
                    "replication": rep, "method": method, "source": k,
                    "diff_r_miss": diff_r_miss(sim.theta_missing(k), imp[k].theta),
                })
        except Exception as err:  # recorded, excluded from the summary
            log.warning("replication %d, method %s failed: %s", rep, method, err)
            failed.append(method)
    return out, failed


def run_replications(spec: ScenarioSpec, n_reps: int, methods: Sequence[str] = (GIPCA,),
                     ranks: Optional[RankSpec] = None, cfg=None, n_jobs: int = 1,
                     init_seed: Optional[int] = None) -> ReplicationTable:
    """Refit on ``n_reps`` data draws from one fixed set of true parameters."""
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    args = [(spec, rep, tuple(methods), ranks, cfg, init_seed) for rep in range(n_reps)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_one_replication, *zip(*args)))
    else:
        results = [_one_replication(*a) for a in args]
    records, failures = [], {}
    for recs, failed in results:
        records.extend(recs)
        for m in failed:
            failures[m] = failures.get(m, 0) + 1
    return ReplicationTable(spec, records, failures)


# ------------------------------------------------------------ paired binomial
# A stand-in for two-country mortality tables (years x ages): exposure counts
# as trials, deaths as binomial draws. Not calibrated to any real country.

@dataclass(frozen=True)
class MortalityLikeSpec:
    n_years: int = 140
    n_ages: int = 91
    seed: int = 0
    rows_masked: int = 10
    war_years: tuple = (44, 45, 46, 70, 71, 72)
    flu_year: int = 46
    country_offset: float = -0.25
    population: float = 50_000.0


def mortality_like_pair(spec: MortalityLikeSpec = MortalityLikeSpec()):
    """Return (deaths, exposures, rates) lists for two countries, all n x p.

    Logit death rates share a Gompertz-Makeham age profile, a declining
    period index and a pandemic year; country 1 alone carries war shocks
    on young adults. Country 2 sits ``country_offset`` lower on the logit
    scale and reacts with a slightly different age sensitivity.
    """
    rng = np.random.default_rng([spec.seed, 7])
    n, p = spec.n_years, spec.n_ages
    age = np.arange(p, dtype=float)
    t = np.arange(n, dtype=float)
    hazard = 0.0004 + 0.06 * np.exp(-age / 1.2) + 0.00004 * np.exp(0.095 * age)
    base = np.log(hazard / (1 - hazard))
    sens = 1.6 * np.exp(-age / 25) + 0.3
    trend = -(t - t.mean()) / n * 2.0 + np.cumsum(rng.normal(0, 0.04, n))
    trend[spec.flu_year] += 0.9
    war = np.zeros(n)
    war[list(spec.war_years)] = rng.uniform(1.0, 1.8, len(spec.war_years))
    young = np.exp(-0.5 * ((age - 22) / 4.0) ** 2) * 1.5
    out = []
    for c in range(2):
        s_c = sens * (1.0 + (0.15 if c else 0.0) * np.cos(age / 15))
        theta = base[None, :] + (spec.country_offset if c else 0.0) + np.outer(trend, s_c)
        if c == 0:
            theta = theta + np.outer(war, young)
        theta = theta + rng.normal(0, 0.03, theta.shape)  # small cell-level heterogeneity
        expo = np.round(spec.population * np.exp(-age / 60)[None, :] * rng.uniform(0.9, 1.1, (n, 1))
                        * (1 + t / n)[:, None])
        deaths = rng.binomial(expo.astype(np.int64), expit(theta)).astype(float)
        out.append((deaths, expo, deaths / expo))
    return [o[0] for o in out], [o[1] for o in out], [o[2] for o in out]


def mortality_protocol(spec: MortalityLikeSpec = MortalityLikeSpec(), n_draws: int = 100,
                       ranks: RankSpec = RankSpec(1, (1, 0)), cfg=None,
                       methods: Sequence[str] = (GIPCA, "colmean", "adjacent", "samerow")) -> dict:
    """Hide ``rows_masked`` random rows per country, impute, score on rates.

    Returns ``{method: array (n_draws x 2) of diff_r_miss}`` computed
    between the held-out observed rates and the imputed rates.
    """
    from .fitter import FitConfig, fit

    deaths, expo, rates = mortality_like_pair(spec)
    n, p = deaths[0].shape
    cfg = cfg or FitConfig()
    losses = {m: np.full((n_draws, 2), np.nan) for m in methods}
    for d in range(n_draws):
        rng = np.random.default_rng([spec.seed, 8, d])
        perm = rng.permutation(n)
        miss = [np.sort(perm[:spec.rows_masked]), np.sort(perm[spec.rows_masked:2 * spec.rows_masked])]
        observed = tuple(np.setdiff1d(np.arange(n), m) for m in miss)
        sources = tuple(SourceSpec(f"country{c + 1}", ef.BINOMIAL, p, trials=expo[c]) for c in range(2))
        ds = MultiSourceDataset(sources, ObservationPattern(n, observed),
                                tuple(deaths[c][observed[c]] for c in range(2)))
        psi = None
        if GIPCA in methods:
            psi = fit(ds, ranks, cfg).psi
        for m in methods:
            imp = impute(ds, m, psi if m == GIPCA else None)
            for c in range(2):
                losses[m][d, c] = diff_r_miss(rates[c][miss[c]], imp[c].rate)
    return losses
