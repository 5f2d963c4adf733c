"""Canonical-link GLM solvers (IRLS / Newton with step halving).

``fit_glm`` solves one problem whose responses may come from different
families (heterogeneous links). ``fit_glm_batch`` solves many independent
problems that share one design matrix, which is how the block updates of
the fitter are organised: every column (or row) of a source is its own GLM.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, gammaln, log_expit

from . import exp_family as ef

_CODES = {ef.GAUSSIAN: 0, ef.POISSON: 1, ef.BINOMIAL: 2}
# clamp for the working weights only; binomial weights underflow past this
WEIGHT_CLAMP = 30.0


class SingularSystem(np.linalg.LinAlgError):
    """Weighted normal equations are singular even after the ridge."""


class NonConvergence(RuntimeWarning):
    pass


@dataclass(frozen=True)
class GlmConfig:
    max_iter: int = 50
    tol: float = 1e-8
    max_step_halvings: int = 20
    ridge: float = 1e-8


@dataclass
class GlmProblem:
    """y ~ family(theta), theta = X beta + offset."""

    y: np.ndarray
    X: np.ndarray
    offset: Optional[np.ndarray] = None
    kinds: object = None  # one DistributionKind, or a sequence with one per response
    ridge: float = 1e-8

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        q = self.y.size
        self.X = np.asarray(self.X, dtype=float).reshape(q, -1)
        self.offset = np.zeros(q) if self.offset is None else np.asarray(self.offset, dtype=float).ravel()
        if q < 1 or self.offset.size != q:
            raise ValueError("y and offset must have the same positive length")
        if self.kinds is None:
            self.kinds = ef.gaussian()


@dataclass
class GlmResult:
    beta: np.ndarray
    converged: bool
    n_iter: int
    loglik: float
    trace: list = field(default_factory=list)


class Responses:
    """Responses of a batch of GLMs laid out as q x B arrays.

    ``codes`` and ``trials`` broadcast against ``y``; entries with
    ``mask == 0`` are ignored (used for unobserved blocks).
    """

    def __init__(self, y, codes, trials=1.0, mask=None):
        self.y = np.asarray(y, dtype=float)
        self.codes = np.broadcast_to(np.asarray(codes, dtype=np.int8), self.y.shape)
        self.trials = np.broadcast_to(np.asarray(trials, dtype=float), self.y.shape)
        self.mask = None if mask is None else np.broadcast_to(np.asarray(mask, dtype=float), self.y.shape)
        present = np.unique(self.codes)
        self.homogeneous = int(present[0]) if present.size == 1 else None
        if self.homogeneous is None:
            self._sel = {c: self.codes == c for c in (0, 1, 2) if np.any(self.codes == c)}
        self.const = self._const()

    @classmethod
    def from_kinds(cls, y, kinds):
        y = np.asarray(y, dtype=float)
        if isinstance(kinds, ef.DistributionKind):
            return cls(y, _CODES[kinds.tag], kinds.m)
        kinds = list(kinds)
        if len(kinds) != y.size:
            raise ValueError("need one DistributionKind per response")
        codes = np.array([_CODES[k.tag] for k in kinds])
        trials = np.array([float(k.m) for k in kinds])
        return cls(y, codes.reshape(y.shape), trials.reshape(y.shape))

    def _apply(self, fn, theta):
        if self.homogeneous is not None:
            return fn(self.homogeneous, theta, self.y, self.trials)
        out = np.empty_like(theta)
        for c, sel in self._sel.items():
            out[sel] = fn(c, theta[sel], self.y[sel], self.trials[sel])
        return out

    def _const(self):
        def f(c, _, y, m):
            if c == 0:
                return -0.5 * y * y - 0.5 * np.log(2 * np.pi)
            if c == 1:
                return -gammaln(y + 1.0)
            return gammaln(m + 1.0) - gammaln(y + 1.0) - gammaln(m - y + 1.0)
        return self._apply(f, np.zeros_like(self.y))

    def _sum(self, a):
        if self.mask is not None:
            a = a * self.mask
        return a.sum(axis=0)

    def loglik(self, theta):
        """Per-problem log-likelihood (full density), summed over responses."""
        def f(c, t, y, m):
            if c == 0:
                return y * t - 0.5 * t * t
            if c == 1:
                with np.errstate(over="ignore"):
                    return y * t - np.exp(t)
            return y * log_expit(t) + (m - y) * log_expit(-t)
        with np.errstate(invalid="ignore"):
            ll = self._apply(f, theta) + self.const
            ll = np.where(np.isnan(ll), -np.inf, ll)
        return self._sum(ll)

    def score_and_weight(self, theta):
        """Residual y - b'(theta) and clamped weight b''(theta)."""
        def mean(c, t, y, m):
            if c == 0:
                return t
            if c == 1:
                with np.errstate(over="ignore"):
                    return np.exp(t)
            return m * expit(t)

        def weight(c, t, y, m):
            t = np.clip(t, -WEIGHT_CLAMP, WEIGHT_CLAMP)
            if c == 0:
                return np.ones_like(t)
            if c == 1:
                return np.exp(t)
            return m * expit(t) * expit(-t)

        resid = self.y - self._apply(mean, theta)
        w = self._apply(weight, theta)
        if self.mask is not None:
            resid = resid * self.mask
            w = w * self.mask
        return resid, w


def fit_glm_batch(resp: Responses, X, offset, beta0, cfg: GlmConfig = GlmConfig()):
    """Solve B independent GLMs sharing the q x d design ``X``.

    ``offset`` is q x B and ``beta0`` is B x d. Each problem maximizes its
    penalized log-likelihood ``sum loglik - ridge/2 |beta|^2``; a Newton
    step is halved until that objective does not decrease.

    Returns ``(beta, converged, n_iter)`` where ``converged`` is per problem.
    """
    X = np.asarray(X, dtype=float)
    beta = np.array(beta0, dtype=float, copy=True)
    B, d = beta.shape
    converged = np.ones(B, dtype=bool) if d == 0 else np.zeros(B, dtype=bool)
    if d == 0 or B == 0:
        return beta, converged, 0

    ridge = cfg.ridge
    eye = np.eye(d)

    def objective(theta, b):
        return resp_sub.loglik(theta) - 0.5 * ridge * np.einsum("bd,bd->b", b, b)

    active = np.arange(B)
    resp_sub = resp
    off = offset
    theta = X @ beta.T + offset
    obj = objective(theta, beta)
    n_iter = 0
    for it in range(cfg.max_iter + 1):
        resid, w = resp_sub.score_and_weight(theta)
        grad = resid.T @ X - ridge * beta[active]
        scale = cfg.tol * (1.0 + np.abs(obj))
        done = np.max(np.abs(grad), axis=1) <= scale
        if done.any():
            converged[active[done]] = True
        keep = ~done
        if it == cfg.max_iter or not keep.any():
            break
        n_iter = it + 1
        if not keep.all():
            active = active[keep]
            resp_sub = _subset(resp_sub, keep)
            off, theta, obj, grad, w = off[:, keep], theta[:, keep], obj[keep], grad[keep], w[:, keep]
        H = np.einsum("qb,qd,qe->bde", w, X, X) + ridge * eye
        try:
            step = np.linalg.solve(H, grad[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError as err:
            raise SingularSystem(str(err)) from None
        if not np.all(np.isfinite(step)):
            raise SingularSystem("non-finite Newton step")
        b_old = beta[active]
        t = np.ones(active.size)
        pending = np.arange(active.size)
        new_b = b_old.copy()
        new_theta = theta.copy()
        new_obj = obj.copy()
        for _ in range(cfg.max_step_halvings + 1):
            cand_b = b_old[pending] + t[pending, None] * step[pending]
            cand_theta = X @ cand_b.T + off[:, pending]
            cand_obj = _subset(resp_sub, pending).loglik(cand_theta) - 0.5 * ridge * np.einsum(
                "bd,bd->b", cand_b, cand_b
            )
            ok = cand_obj >= obj[pending]
            acc = pending[ok]
            new_b[acc], new_theta[:, acc], new_obj[acc] = cand_b[ok], cand_theta[:, ok], cand_obj[ok]
            pending = pending[~ok]
            if pending.size == 0:
                break
            t[pending] *= 0.5
        if pending.size:
            # no ascent possible at machine precision: stop these problems, but
            # leave them flagged unconverged unless the gradient test passed
            stay = np.ones(active.size, dtype=bool)
            stay[pending] = False
        else:
            stay = None
        beta[active] = new_b
        theta, obj = new_theta, new_obj
        if stay is not None:
            active = active[stay]
            resp_sub = _subset(resp_sub, stay)
            off, theta, obj = off[:, stay], theta[:, stay], obj[stay]
            if active.size == 0:
                break
    return beta, converged, n_iter


def _subset(resp: Responses, cols) -> Responses:
    out = Responses.__new__(Responses)
    out.y = resp.y[:, cols]
    out.codes = resp.codes[:, cols]
    out.trials = resp.trials[:, cols]
    out.mask = None if resp.mask is None else resp.mask[:, cols]
    out.homogeneous = resp.homogeneous
    if resp.homogeneous is None:
        out._sel = {c: s[:, cols] for c, s in resp._sel.items()}
    out.const = resp.const[:, cols]
    return out


def penalized_loglik(prob: GlmProblem, beta) -> float:
    resp = Responses.from_kinds(prob.y[:, None], _column_kinds(prob))
    theta = prob.X @ np.asarray(beta, dtype=float) + prob.offset
    return float(resp.loglik(theta[:, None])[0] - 0.5 * prob.ridge * np.dot(beta, beta))


def gradient(prob: GlmProblem, beta) -> np.ndarray:
    """X^T (y - b'(theta)) - ridge * beta, unclamped."""
    theta = prob.X @ np.asarray(beta, dtype=float) + prob.offset
    kinds = prob.kinds
    if isinstance(kinds, ef.DistributionKind):
        mu = ef.mean(kinds, theta)
    else:
        mu = np.array([ef.mean(k, t) for k, t in zip(kinds, theta)], dtype=float)
    return prob.X.T @ (prob.y - mu) - prob.ridge * np.asarray(beta, dtype=float)


def _column_kinds(prob: GlmProblem):
    return prob.kinds if isinstance(prob.kinds, ef.DistributionKind) else list(prob.kinds)


def fit_glm(prob: GlmProblem, beta0=None, cfg: GlmConfig = None) -> GlmResult:
    """Fit one (possibly mixed-family) canonical-link GLM by IRLS.

    Each iteration solves the weighted least-squares problem with weights
    ``b''(theta)`` and working response ``eta + (y - b'(theta)) / b''(theta)``,
    written here as the equivalent Newton step. The penalized
    log-likelihood never decreases between iterations.
    """
    if cfg is None:
        cfg = GlmConfig(ridge=prob.ridge)
    elif cfg.ridge != prob.ridge:
        cfg = GlmConfig(cfg.max_iter, cfg.tol, cfg.max_step_halvings, prob.ridge)
    d = prob.X.shape[1]
    b0 = np.zeros(d) if beta0 is None else np.asarray(beta0, dtype=float).ravel()
    if b0.size != d or not np.all(np.isfinite(b0)):
        raise ValueError("beta0 must be a finite length-d vector")
    resp = Responses.from_kinds(prob.y[:, None], _column_kinds(prob))
    trace = [penalized_loglik(prob, b0)]
    beta = b0[None, :]
    converged = d == 0
    n_iter = 0
    # one Newton update per call so that the objective can be traced
    step_cfg = GlmConfig(1, cfg.tol, cfg.max_step_halvings, cfg.ridge)
    while True:
        last = n_iter == cfg.max_iter
        beta_next, conv, k = fit_glm_batch(resp, prob.X, prob.offset[:, None], beta,
                                           GlmConfig(0, cfg.tol, 0, cfg.ridge) if last else step_cfg)
        if k == 0 or last:
            converged = bool(conv[0])
            break
        if np.array_equal(beta_next, beta):  # stalled at machine precision
            break
        n_iter += 1
        beta = beta_next
        trace.append(penalized_loglik(prob, beta[0]))
    if not converged:
        warnings.warn(f"GLM did not converge after {n_iter} iterations", NonConvergence, stacklevel=2)
    return GlmResult(beta=beta[0], converged=converged, n_iter=n_iter, loglik=trace[-1], trace=trace)
