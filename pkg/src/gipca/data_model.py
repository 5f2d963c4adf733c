"""Multi-source containers, natural-parameter assembly and the observed-data likelihood."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import exp_family as ef


class NumericalFailure(ArithmeticError):
    """Raised when a natural parameter becomes non-finite."""


class DimensionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SourceSpec:
    """One data source.

    ``trials`` is only used for binomial sources: either a positive integer
    shared by all entries or an ``n x p`` integer matrix covering every
    sample (rows of unobserved samples may hold NaN).
    """

    name: str
    family: str
    p: int
    trials: object = None

    def __post_init__(self):
        object.__setattr__(self, "family", self.family.lower())
        if self.family not in ef.TAGS:
            raise ValueError(f"unknown family {self.family!r}")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.family == ef.BINOMIAL:
            if self.trials is None:
                raise ValueError(f"binomial source {self.name!r} needs trials")
            if np.ndim(self.trials) == 0:
                object.__setattr__(self, "trials", int(self.trials))
            else:
                t = np.asarray(self.trials, dtype=float)
                if t.ndim != 2 or t.shape[1] != self.p:
                    raise DimensionError(f"trials for {self.name!r} must be n x {self.p}")
                object.__setattr__(self, "trials", t)
        elif self.trials is not None:
            raise ValueError(f"{self.family} source {self.name!r} takes no trials")

    def trials_for(self, rows=None):
        """Trials restricted to ``rows`` (scalar trials pass through)."""
        if self.family != ef.BINOMIAL:
            return None
        if np.ndim(self.trials) == 0 or rows is None:
            return self.trials
        return self.trials[np.asarray(rows)]

    def kind(self, rows=None) -> ef.DistributionKind:
        return ef.DistributionKind(self.family, self.trials_for(rows))


@dataclass(frozen=True, eq=False)
class ObservationPattern:
    """Per-source sorted row indices (0-based) of observed samples."""

    n: int
    observed: tuple

    def __post_init__(self):
        obs = tuple(np.asarray(o, dtype=np.intp) for o in self.observed)
        covered = np.zeros(self.n, dtype=bool)
        for k, o in enumerate(obs):
            if o.ndim != 1:
                raise DimensionError(f"observed rows of source {k} must be 1-d")
            if o.size and (o.min() < 0 or o.max() >= self.n):
                raise DimensionError(f"observed rows of source {k} out of range")
            if np.any(np.diff(o) <= 0):
                raise ValueError(f"observed rows of source {k} must be strictly increasing")
            covered[o] = True
        if not covered.all():
            raise ValueError(
                f"samples {np.flatnonzero(~covered).tolist()} are unobserved in every source"
            )
        object.__setattr__(self, "observed", obs)

    @classmethod
    def complete(cls, n: int, K: int) -> "ObservationPattern":
        return cls(n, tuple(np.arange(n) for _ in range(K)))

    @property
    def K(self) -> int:
        return len(self.observed)

    def n_k(self, k: int) -> int:
        return len(self.observed[k])

    def missing(self, k: int) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.observed[k]] = False
        return np.flatnonzero(mask)

    def mask(self, k: int) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[self.observed[k]] = True
        return m


@dataclass(frozen=True, eq=False)
class MultiSourceDataset:
    sources: tuple
    pattern: ObservationPattern
    data: tuple

    def __post_init__(self):
        sources = tuple(self.sources)
        data = tuple(np.asarray(x, dtype=float) for x in self.data)
        if len(sources) != self.pattern.K or len(data) != self.pattern.K:
            raise DimensionError("sources, pattern and data disagree on K")
        for k, (s, x) in enumerate(zip(sources, data)):
            if x.shape != (self.pattern.n_k(k), s.p):
                raise DimensionError(
                    f"source {s.name!r}: data shape {x.shape} != "
                    f"({self.pattern.n_k(k)}, {s.p})"
                )
            if s.family == ef.BINOMIAL and np.ndim(s.trials) == 2:
                if s.trials.shape[0] != self.pattern.n:
                    raise DimensionError(f"trials for {s.name!r} must have n rows")
                obs_trials = s.trials[self.pattern.observed[k]]
                if not np.all(np.isfinite(obs_trials)) or np.any(obs_trials < 1):
                    raise ValueError(f"trials for {s.name!r} must be >= 1 on observed rows")
            try:
                ef.validate_support(s.kind(self.pattern.observed[k]), x)
            except ValueError as err:
                raise ValueError(f"source {s.name!r}: {err}") from None
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.pattern.n

    @property
    def K(self) -> int:
        return self.pattern.K

    @property
    def p(self) -> list[int]:
        return [s.p for s in self.sources]

    @property
    def n_k(self) -> list[int]:
        return [self.pattern.n_k(k) for k in range(self.K)]

    def kind(self, k: int) -> ef.DistributionKind:
        """Distribution of source k on its observed rows."""
        return self.sources[k].kind(self.pattern.observed[k])

    def n_observed_entries(self) -> int:
        return int(sum(nk * pk for nk, pk in zip(self.n_k, self.p)))


@dataclass(frozen=True)
class RankSpec:
    r_J: int
    r_A: tuple

    def __post_init__(self):
        object.__setattr__(self, "r_A", tuple(int(r) for r in self.r_A))
        object.__setattr__(self, "r_J", int(self.r_J))
        if self.r_J < 0 or any(r < 0 for r in self.r_A):
            raise ValueError("ranks must be nonnegative")

    @classmethod
    def parse(cls, text: str) -> "RankSpec":
        vals = [int(v) for v in text.replace(" ", "").split(",") if v != ""]
        if len(vals) < 2:
            raise ValueError("ranks must be 'rJ,r1,...,rK'")
        return cls(vals[0], tuple(vals[1:]))

    @classmethod
    def zeros(cls, K: int) -> "RankSpec":
        return cls(0, (0,) * K)

    def as_tuple(self) -> tuple:
        return (self.r_J, *self.r_A)

    def __str__(self):
        return ",".join(str(r) for r in self.as_tuple())

    def violations(self, n: int, n_k: Sequence[int], p: Sequence[int]) -> list[str]:
        out = []
        if len(self.r_A) != len(p):
            return [f"expected {len(p)} individual ranks, got {len(self.r_A)}"]
        if self.r_J > min(n - 1, min(p)):
            out.append(f"r_J={self.r_J} exceeds min(n-1, p_k)={min(n - 1, min(p))}")
        for k, (r, nk, pk) in enumerate(zip(self.r_A, n_k, p)):
            if self.r_J + r > min(nk - 1, pk):
                out.append(f"r_J + r_A[{k}] = {self.r_J + r} exceeds min(n_k-1, p_k)={min(nk - 1, pk)}")
        return out

    def is_valid_for(self, ds: MultiSourceDataset) -> bool:
        return not self.violations(ds.n, ds.n_k, ds.p)

    def check(self, ds: MultiSourceDataset) -> None:
        bad = self.violations(ds.n, ds.n_k, ds.p)
        if bad:
            raise ValueError("inadmissible ranks: " + "; ".join(bad))


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Parameter set: means, joint scores/loadings, individual scores/loadings.

    ``Ustar[k]`` holds only the observed rows of source k, in the order of
    ``observed[k]``.
    """

    mu: tuple
    U0: np.ndarray
    V: tuple
    Ustar: tuple
    A: tuple
    observed: tuple

    def __post_init__(self):
        f = lambda seq: tuple(np.asarray(a, dtype=float) for a in seq)  # noqa: E731
        object.__setattr__(self, "mu", f(self.mu))
        try:
            object.__setattr__(self, "V", tuple(np.asarray(a, dtype=float).reshape(len(m), -1) for a, m in zip(self.V, self.mu)))
            object.__setattr__(self, "Ustar", tuple(np.asarray(a, dtype=float).reshape(len(o), -1) for a, o in zip(self.Ustar, self.observed)))
            object.__setattr__(self, "A", tuple(np.asarray(a, dtype=float).reshape(len(m), -1) for a, m in zip(self.A, self.mu)))
        except ValueError as err:
            raise DimensionError(f"factor matrix has the wrong number of rows ({err})") from None
        object.__setattr__(self, "observed", tuple(np.asarray(o, dtype=np.intp) for o in self.observed))
        U0 = np.asarray(self.U0, dtype=float)
        object.__setattr__(self, "U0", U0.reshape(U0.shape[0], -1))
        K = len(self.mu)
        if not (len(self.V) == len(self.Ustar) == len(self.A) == len(self.observed) == K):
            raise DimensionError("inconsistent number of sources in ModelParams")
        r_J = self.U0.shape[1]
        for k in range(K):
            pk = len(self.mu[k])
            if self.V[k].shape != (pk, r_J):
                raise DimensionError(f"V[{k}] has shape {self.V[k].shape}, expected {(pk, r_J)}")
            if self.A[k].shape[0] != pk or self.Ustar[k].shape[1] != self.A[k].shape[1]:
                raise DimensionError(f"individual factors of source {k} are inconsistent")
            if self.Ustar[k].shape[0] != len(self.observed[k]):
                raise DimensionError(f"Ustar[{k}] must have one row per observed sample")

    @property
    def n(self) -> int:
        return self.U0.shape[0]

    @property
    def K(self) -> int:
        return len(self.mu)

    @property
    def ranks(self) -> RankSpec:
        return RankSpec(self.U0.shape[1], tuple(a.shape[1] for a in self.A))

    def zero_filled_ustar(self, k: int) -> np.ndarray:
        out = np.zeros((self.n, self.A[k].shape[1]))
        out[self.observed[k]] = self.Ustar[k]
        return out

    def joint_theta(self, k: int, rows=None) -> np.ndarray:
        """1 mu_k^T + U0[rows] V_k^T (all samples when rows is None)."""
        U = self.U0 if rows is None else self.U0[rows]
        return self.mu[k][None, :] + U @ self.V[k].T


def natural_params(psi: ModelParams, k: int) -> np.ndarray:
    """Theta*_k on the observed rows of source k."""
    obs = psi.observed[k]
    return psi.mu[k][None, :] + psi.U0[obs] @ psi.V[k].T + psi.Ustar[k] @ psi.A[k].T


def log_likelihood_terms(ds: MultiSourceDataset, psi: ModelParams) -> list[float]:
    """Per-source observed-data log-likelihood."""
    _check_compatible(ds, psi)
    out = []
    for k in range(ds.K):
        theta = natural_params(psi, k)
        bad = ~np.isfinite(theta)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise NumericalFailure(
                f"non-finite natural parameter in source {ds.sources[k].name!r} "
                f"at sample {int(ds.pattern.observed[k][i])}, column {int(j)}"
            )
        out.append(float(np.sum(ef.log_density(ds.kind(k), ds.data[k], theta))))
    return out


def log_likelihood(ds: MultiSourceDataset, psi: ModelParams) -> float:
    return float(sum(log_likelihood_terms(ds, psi)))


def _check_compatible(ds: MultiSourceDataset, psi: ModelParams) -> None:
    if psi.K != ds.K or psi.n != ds.n:
        raise DimensionError("parameters do not match dataset dimensions")
    for k in range(ds.K):
        if len(psi.mu[k]) != ds.p[k]:
            raise DimensionError(f"source {k}: p mismatch")
        if not np.array_equal(psi.observed[k], ds.pattern.observed[k]):
            raise DimensionError(f"source {k}: observation pattern mismatch")


@dataclass
class IdentifiabilityReport:
    tol: float
    violations: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.violations.values())

    @property
    def worst(self) -> float:
        return max(self.violations.values(), default=0.0)

    def __str__(self):
        rows = ", ".join(f"{k}={v:.3g}" for k, v in self.violations.items())
        return f"{'pass' if self.passed else 'FAIL'} (tol={self.tol:g}): {rows}"


def _max_offdiag(G: np.ndarray) -> float:
    if G.shape[0] < 2:
        return 0.0
    return float(np.max(np.abs(G - np.diag(np.diag(G)))))


def check_identifiability(psi: ModelParams, tol: float = 1e-8) -> IdentifiabilityReport:
    """Maximum violations of the centering and orthogonality conditions."""
    means = [np.abs(psi.U0.mean(axis=0))]
    cross, ustar_off, a_off = [0.0], [0.0], [0.0]
    basis = np.column_stack([np.ones(psi.n), psi.U0])
    for k in range(psi.K):
        Ut = psi.zero_filled_ustar(k)
        means.append(np.abs(Ut.mean(axis=0)))
        if Ut.shape[1]:
            cross.append(float(np.max(np.abs(basis.T @ Ut))))
        ustar_off.append(_max_offdiag(psi.Ustar[k].T @ psi.Ustar[k]))
        a_off.append(_max_offdiag(psi.A[k].T @ psi.A[k]))
    V = np.vstack(psi.V) if psi.K else np.zeros((0, 0))
    viol = {
        "score_column_mean": float(max((m.max() for m in means if m.size), default=0.0)),
        "joint_individual_cross": max(cross),
        "U0_offdiag": _max_offdiag(psi.U0.T @ psi.U0),
        "Ustar_offdiag": max(ustar_off),
        "V_offdiag": _max_offdiag(V.T @ V),
        "A_offdiag": max(a_off),
    }
    return IdentifiabilityReport(tol=tol, violations=viol)
