"""Block coordinate ascent for the joint/individual exponential-family model.

One sweep:

(a) for every source and column, refit (mu_kj, v_kj) with the individual
    part as offset;
(b) refit every row of U0 by heterogeneous-link IRLS over the sources that
    observe the sample;
(c) per source, refit the rows of A_k and then the rows of Ustar_k;
(d) re-parameterize to satisfy the identifiability conditions without
    changing any observed natural parameter;
(e) record the observed-data log-likelihood.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import exp_family as ef
from .data_model import (
    ModelParams,
    MultiSourceDataset,
    RankSpec,
    check_identifiability,
    log_likelihood,
    natural_params,
)
from .glm_solver import GlmConfig, Responses, fit_glm_batch, _CODES

log = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-8


class ResidualRankExceeded(ArithmeticError):
    """The re-assembled joint matrix is not of rank r_J."""


@dataclass(frozen=True)
class FitConfig:
    max_sweeps: int = 500
    rel_tol: float = 1e-6
    init: str = "svd"  # "svd" or "random"
    seed: int = 0
    glm: GlmConfig = field(default_factory=GlmConfig)
    ident_tol: float = 1e-8

    def __post_init__(self):
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be > 0")
        if self.init not in ("svd", "random"):
            raise ValueError("init must be 'svd' or 'random'")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")


@dataclass
class FitReport:
    psi: ModelParams
    loglik_trace: list
    sweeps: int
    converged: bool
    ranks: RankSpec = None

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]


# ---------------------------------------------------------------- helpers

def _orth_basis(M: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Orthonormal basis of the column space of M (rank-revealing)."""
    if M.shape[1] == 0:
        return M
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return U[:, :0]
    return U[:, s > rtol * s[0]]


def _sign_fix(L: np.ndarray, R: np.ndarray):
    """Make the largest-magnitude entry of each column of R positive."""
    if R.shape[1] == 0:
        return L, R
    idx = np.argmax(np.abs(R), axis=0)
    sgn = np.sign(R[idx, np.arange(R.shape[1])])
    sgn[sgn == 0] = 1.0
    return L * sgn, R * sgn


def _truncated_svd(M: np.ndarray, r: int):
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    return U[:, :r], s, Vt[:r].T


def intercept_means(ds: MultiSourceDataset) -> list:
    """Intercept-only MLE per column, computed on clipped pooled means."""
    out = []
    for k in range(ds.K):
        kind = ds.kind(k)
        x = ds.data[k]
        if kind.tag == ef.BINOMIAL:
            m = np.broadcast_to(np.asarray(kind.m, dtype=float), x.shape)
            prop = x.sum(axis=0) / m.sum(axis=0)
            mbar = m.mean(axis=0)
            out.append(ef.link(ef.binomial(mbar), ef.clip_mean(ef.binomial(mbar), prop * mbar)))
        else:
            out.append(np.asarray(ef.link(kind, ef.clip_mean(kind, x.mean(axis=0))), dtype=float))
    return out


# ---------------------------------------------------------------- regularize

def regularize(psi: ModelParams, tol: float = 1e-8) -> ModelParams:
    """Likelihood-preserving transform onto the identifiable parameterization.

    1. Per source, split Ustar_k into its projection on span(1, U0[O_k])
       (absorbed into mu_k and V_k) and the orthogonal remainder W_k.
    2. SVD of W_k A_k^T gives new Ustar_k (left vectors times singular
       values) and orthonormal A_k.
    3. Column-center each joint block 1 mu_k^T + U0 V_k^T over all n samples;
       the centers are the new means.
    4. SVD of the concatenated centered joint blocks gives U0 and V.
    """
    n, K = psi.n, psi.K
    r_J = psi.U0.shape[1]
    ones = np.ones(n)
    mu = [m.copy() for m in psi.mu]
    V = [v.copy() for v in psi.V]
    Ustar, A = [], []
    for k in range(K):
        obs = psi.observed[k]
        rk = psi.A[k].shape[1]
        if rk == 0:
            Ustar.append(np.zeros((len(obs), 0)))
            A.append(np.zeros((len(mu[k]), 0)))
            continue
        basis = np.column_stack([ones[obs], psi.U0[obs]])
        coef, *_ = np.linalg.lstsq(basis, psi.Ustar[k], rcond=None)
        W = psi.Ustar[k] - basis @ coef
        # absorbed part: (1 c0 + U0k C1) A^T
        mu[k] = mu[k] + psi.A[k] @ coef[0]
        V[k] = V[k] + psi.A[k] @ coef[1:].T
        L, s, R = _truncated_svd(W @ psi.A[k].T, rk)
        L, R = _sign_fix(L, R)
        Ustar.append(L * s[:rk])
        A.append(R)

    ubar = psi.U0.mean(axis=0)
    Uc = psi.U0 - ubar
    for k in range(K):
        mu[k] = mu[k] + V[k] @ ubar
    if r_J > 0:
        J = np.hstack([Uc @ V[k].T for k in range(K)])
        L, s, R = _truncated_svd(J, r_J)
        if s.size > r_J and s[0] > 0 and s[r_J] > tol * s[0]:
            raise ResidualRankExceeded(
                f"joint matrix singular value {r_J + 1} is {s[r_J]:.3g} "
                f"(> {tol:g} x {s[0]:.3g})"
            )
        L, R = _sign_fix(L, R)
        U0 = L * s[:r_J]
        splits = np.cumsum([len(m) for m in mu])[:-1]
        V = np.split(R, splits, axis=0)
    else:
        U0 = np.zeros((n, 0))
        V = [np.zeros((len(m), 0)) for m in mu]
    return ModelParams(mu=mu, U0=U0, V=V, Ustar=Ustar, A=A, observed=psi.observed)


# ---------------------------------------------------------------- initialize

def initialize(ds: MultiSourceDataset, ranks: RankSpec, init: str = "svd", seed: int = 0,
               tol: float = 1e-8) -> ModelParams:
    """Starting parameters, already regularized.

    ``"random"`` draws scores and loadings from Unif(-0.5, 0.5) with
    intercept-only means; ``"svd"`` uses truncated SVDs of the linked,
    column-centered data.
    """
    ranks.check(ds)
    n, K = ds.n, ds.K
    obs = ds.pattern.observed
    if init == "random":
        rng = np.random.default_rng(seed)
        u = lambda *shape: rng.uniform(-0.5, 0.5, size=shape)  # noqa: E731
        U0 = u(n, ranks.r_J)
        V = [u(p, ranks.r_J) for p in ds.p]
        Ustar = [u(len(obs[k]), ranks.r_A[k]) for k in range(K)]
        A = [u(ds.p[k], ranks.r_A[k]) for k in range(K)]
        mu = intercept_means(ds)
    elif init == "svd":
        Z, mu = [], []
        for k in range(K):
            kind = ds.kind(k)
            zk = np.asarray(ef.link(kind, ef.clip_mean(kind, ds.data[k])), dtype=float)
            mu.append(zk.mean(axis=0))
            full = np.zeros((n, ds.p[k]))
            full[obs[k]] = zk - mu[k]
            Z.append(full)
        # Joint scores are the directions shared by the per-source score
        # subspaces, not the top components of the concatenation: a strong
        # individual component would otherwise be taken as joint and the fit
        # starts next to a saddle where the relative-change rule stops early.
        bases = []
        for k in range(K):
            r = min(ranks.r_J + ranks.r_A[k], len(obs[k]) - 1, ds.p[k])
            if r > 0:
                bases.append(_truncated_svd(Z[k], r)[0])
        if ranks.r_J and bases:
            U0 = _truncated_svd(np.hstack(bases), ranks.r_J)[0]
        else:
            U0 = np.zeros((n, ranks.r_J))
        V = [np.linalg.lstsq(U0[obs[k]], Z[k][obs[k]], rcond=None)[0].T if ranks.r_J
             else np.zeros((ds.p[k], 0)) for k in range(K)]
        Ustar, A = [], []
        for k in range(K):
            resid = Z[k][obs[k]] - U0[obs[k]] @ V[k].T
            Lk, sk, Rk = _truncated_svd(resid, ranks.r_A[k])
            Ustar.append(Lk)
            A.append(Rk * sk[: ranks.r_A[k]])
    else:
        raise ValueError(f"unknown init {init!r}")
    psi = ModelParams(mu=mu, U0=U0, V=V, Ustar=Ustar, A=A, observed=obs)
    return regularize(psi, tol)


# ---------------------------------------------------------------- sweep

class _Workspace:
    """Per-dataset response layouts reused across sweeps."""

    def __init__(self, ds: MultiSourceDataset):
        self.ds = ds
        n = ds.n
        self.col, self.row = [], []
        ys, codes, trials, masks = [], [], [], []
        for k, src in enumerate(ds.sources):
            obs = ds.pattern.observed[k]
            code = _CODES[src.family]
            t = src.trials_for(obs)
            t = 1.0 if t is None else t
            x = ds.data[k]
            self.col.append(Responses(x, code, t))
            self.row.append(Responses(x.T, code, np.asarray(t, dtype=float).T if np.ndim(t) else t))
            yk = np.zeros((n, src.p))
            yk[obs] = x
            mk = np.zeros((n, src.p))
            mk[obs] = 1.0
            tk = np.ones((n, src.p))
            if src.family == ef.BINOMIAL:
                tk[obs] = np.broadcast_to(np.asarray(t, dtype=float), x.shape)
            ys.append(yk.T)
            masks.append(mk.T)
            trials.append(tk.T)
            codes.append(np.full((src.p, 1), code))
        self.joint = Responses(np.vstack(ys), np.vstack(codes), np.vstack(trials), np.vstack(masks))


def _sweep(ws: _Workspace, psi: ModelParams, glm: GlmConfig) -> ModelParams:
    ds = ws.ds
    K = ds.K
    obs = ds.pattern.observed
    mu = [m.copy() for m in psi.mu]
    U0 = psi.U0.copy()
    V = [v.copy() for v in psi.V]
    Us = [u.copy() for u in psi.Ustar]
    A = [a.copy() for a in psi.A]
    r_J = U0.shape[1]

    # (a) means and joint loadings, column by column
    for k in range(K):
        design = np.column_stack([np.ones(len(obs[k])), U0[obs[k]]])
        offset = Us[k] @ A[k].T
        beta0 = np.column_stack([mu[k], V[k]])
        beta, _, _ = fit_glm_batch(ws.col[k], design, offset, beta0, glm)
        mu[k], V[k] = beta[:, 0].copy(), beta[:, 1:].copy()

    # (b) joint scores, sample by sample, heterogeneous links
    if r_J > 0:
        offs = []
        for k in range(K):
            full = np.zeros((ds.n, ds.p[k]))
            full[obs[k]] = mu[k] + Us[k] @ A[k].T
            offs.append(full.T)
        U0, _, _ = fit_glm_batch(ws.joint, np.vstack(V), np.vstack(offs), U0, glm)

    # (c) individual loadings then individual scores
    for k in range(K):
        if A[k].shape[1] == 0:
            continue
        offset = mu[k] + U0[obs[k]] @ V[k].T
        A[k], _, _ = fit_glm_batch(ws.col[k], Us[k], offset, A[k], glm)
        Us[k], _, _ = fit_glm_batch(ws.row[k], A[k], offset.T, Us[k], glm)

    return ModelParams(mu=mu, U0=U0, V=V, Ustar=Us, A=A, observed=psi.observed)


def fit(ds: MultiSourceDataset, ranks: RankSpec, cfg: FitConfig = FitConfig(),
        init_params: Optional[ModelParams] = None, callback=None) -> FitReport:
    """Maximize the observed-data log-likelihood at fixed ranks.

    ``loglik_trace[0]`` is the log-likelihood of the (regularized) starting
    point; entry ``l`` is the value after sweep ``l``.
    """
    ranks.check(ds)
    if init_params is None:
        psi = initialize(ds, ranks, cfg.init, cfg.seed, cfg.ident_tol)
    else:
        if init_params.ranks != ranks:
            raise ValueError("init_params ranks differ from requested ranks")
        psi = regularize(init_params, cfg.ident_tol)
    ws = _Workspace(ds)
    ll = log_likelihood(ds, psi)
    trace = [ll]
    converged = False
    sweeps = 0
    for sweeps in range(1, cfg.max_sweeps + 1):
        psi = regularize(_sweep(ws, psi, cfg.glm), cfg.ident_tol)
        ll_new = log_likelihood(ds, psi)
        if ll_new < ll - MONOTONE_SLACK:
            log.warning("log-likelihood decreased by %.3g at sweep %d", ll - ll_new, sweeps)
        trace.append(ll_new)
        if callback is not None:
            callback(sweeps, psi, ll_new)
        if abs(ll_new - ll) <= cfg.rel_tol * (abs(ll) + 1.0):
            converged = True
            break
        ll = ll_new
    if not converged:
        warnings.warn(f"fit did not converge in {cfg.max_sweeps} sweeps", RuntimeWarning, stacklevel=2)
    return FitReport(psi=psi, loglik_trace=trace, sweeps=sweeps, converged=converged, ranks=ranks)


def fitted_theta(psi: ModelParams) -> list:
    """Observed-row natural parameters of every source."""
    return [natural_params(psi, k) for k in range(psi.K)]
