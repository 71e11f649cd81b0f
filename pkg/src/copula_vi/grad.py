"""Monte Carlo ELBO and its stochastic gradients.

Samples are generated in fixed-size chunks from the counter-based stream, so
estimates are bitwise reproducible for a given ``(dist, model, m, seed)``
regardless of how many worker threads process the chunks.  ``CVI_THREADS``
caps the thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelEvaluationError
from .sampler import draw, path_grad_eta, path_grad_lambda

CHUNK = 2048
DEFAULT_M = 1024


# ---------------------------------------------------------------------------
# target models
# ---------------------------------------------------------------------------


class TargetModel:
    """Unnormalized log joint ``log p(x, z)`` over continuous latents ``z``.

    Subclasses implement ``logp``/``grad_logp`` for a single point and may
    override the batched versions for speed.
    """

    dim: int

    def logp(self, z):
        raise NotImplementedError

    def grad_logp(self, z):
        raise NotImplementedError

    def logp_batch(self, Z):
        return np.array([self.logp(z) for z in Z], dtype=float)

    def grad_batch(self, Z):
        return np.array([self.grad_logp(z) for z in Z], dtype=float).reshape(len(Z), self.dim)

    def logp_and_grad_batch(self, Z):
        return self.logp_batch(Z), self.grad_batch(Z)


class FunctionModel(TargetModel):
    """Wrap plain callables as a :class:`TargetModel`."""

    def __init__(self, dim, logp, grad_logp=None):
        self.dim = int(dim)
        self._logp = logp
        self._grad = grad_logp

    def logp(self, z):
        return float(self._logp(np.asarray(z, dtype=float)))

    def grad_logp(self, z):
        if self._grad is None:
            raise NotImplementedError("model has no gradient; wrap it with models.fd_wrap")
        return np.asarray(self._grad(np.asarray(z, dtype=float)), dtype=float)


def verify_gradient(model, points, rel_tol=1e-4, step=1e-6):
    """Compare ``grad_logp`` with central differences of ``logp``.

    Returns ``(ok, worst_relative_error)``.
    """
    worst = 0.0
    for z in np.atleast_2d(points):
        g = model.grad_logp(z)
        for i in range(model.dim):
            h = step * (1.0 + abs(z[i]))
            zp, zm = z.copy(), z.copy()
            zp[i] += h
            zm[i] -= h
            fd = (model.logp(zp) - model.logp(zm)) / (2 * h)
            worst = max(worst, abs(fd - g[i]) / max(abs(fd), 1.0))
    return worst <= rel_tol, worst


def _eval_logp(model, Z, start):
    try:
        return np.asarray(model.logp_batch(Z), dtype=float)
    except Exception as exc:  # locate the offending sample
        for s, z in enumerate(Z):
            try:
                model.logp(z)
            except Exception:
                raise ModelEvaluationError(f"logp failed at sample {start + s}: {exc}", start + s) from exc
        raise ModelEvaluationError(f"logp failed in batch starting at {start}: {exc}", start) from exc


def _eval_both(model, Z, start):
    try:
        logp, grad = model.logp_and_grad_batch(Z)
        return np.asarray(logp, dtype=float), np.asarray(grad, dtype=float)
    except Exception as exc:
        for s, z in enumerate(Z):
            try:
                model.grad_logp(z)
            except Exception:
                raise ModelEvaluationError(f"grad_logp failed at sample {start + s}: {exc}", start + s) from exc
        raise ModelEvaluationError(f"grad_logp failed in batch starting at {start}: {exc}", start) from exc


# ---------------------------------------------------------------------------
# estimates
# ---------------------------------------------------------------------------


@dataclass
class GradEstimate:
    elbo: float
    grad_lambda: np.ndarray
    grad_eta: np.ndarray
    n_samples: int
    elbo_std_err: float
    grad_lambda_se: np.ndarray = field(default=None)
    grad_eta_se: np.ndarray = field(default=None)

    @property
    def grad(self):
        return np.concatenate([self.grad_lambda, self.grad_eta])

    @property
    def grad_se(self):
        return np.concatenate([self.grad_lambda_se, self.grad_eta_se])


def n_threads():
    env = os.environ.get("CVI_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _map_chunks(fn, m):
    starts = list(range(0, m, CHUNK))
    sizes = [min(CHUNK, m - s) for s in starts]
    workers = min(n_threads(), len(starts))
    if workers <= 1:
        return [fn(s, n) for s, n in zip(starts, sizes)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, starts, sizes))


def _mean_se(x):
    m = x.shape[0]
    mean = x.mean(axis=0)
    se = x.std(axis=0, ddof=1) / np.sqrt(m) if m > 1 else np.zeros_like(mean)
    return mean, se


def _check_m(m, minimum=1):
    if int(m) < minimum:
        raise ValueError(f"need at least {minimum} samples, got {m}")
    return int(m)


def elbo_samples(dist, model, m, seed):
    """Per-sample ``log p - log q`` for samples ``0 .. m-1`` of the stream."""
    m = _check_m(m)

    def work(start, n):
        path = draw(dist, n, seed, start)
        return _eval_logp(model, path.z, start) - dist.log_q(path.z)

    return np.concatenate(_map_chunks(work, m))


def elbo(dist, model, m=DEFAULT_M, seed=0):
    """Monte Carlo ELBO; gradients in the returned estimate are empty."""
    f = elbo_samples(dist, model, m, seed)
    val, se = _mean_se(f)
    return GradEstimate(float(val), np.zeros(0), np.zeros(0), len(f), float(se), np.zeros(0), np.zeros(0))


def grad_score(dist, model, m=DEFAULT_M, seed=0):
    """Score-function gradient with a leave-one-out baseline."""
    m = _check_m(m, 2)

    def work(start, n):
        path = draw(dist, n, seed, start)
        logq, _, g_lam, g_eta = dist.log_q_grads(path.z)
        f = _eval_logp(model, path.z, start) - logq
        return f, np.hstack([g_lam, g_eta])

    parts = _map_chunks(work, m)
    f = np.concatenate([p[0] for p in parts])
    score = np.vstack([p[1] for p in parts])
    baseline = (f.sum() - f) / (m - 1)
    per = score * (f - baseline)[:, None]
    return _finish(dist, f, per)


def grad_reparam(dist, model, m=DEFAULT_M, seed=0, total=False, blocks=("lambda", "eta")):
    """Reparameterized gradient through the sampling path.

    Per sample ``g_z = grad log p(z) - grad_z log q(z)`` is pushed through the
    path Jacobians of ``z`` in lambda and eta.  This drops the explicit
    parameter dependence of ``log q`` at fixed ``z``, whose expectation is
    zero.  With ``total`` that term is subtracted as well, giving the exact
    derivative of the common-random-number ELBO estimate.  ``blocks`` skips
    work for parameter blocks that are not needed (their entries are zero).
    """
    m = _check_m(m)
    want_lam = "lambda" in blocks
    want_eta = "eta" in blocks and dist.n_eta > 0

    def work(start, n):
        path = draw(dist, n, seed, start)
        logq, gz_q, g_lam, g_eta = dist.log_q_grads(path.z)
        logp, grad_p = _eval_both(model, path.z, start)
        g_z = grad_p - gz_q
        out_lam = np.zeros((n, dist.n_lambda))
        out_eta = np.zeros((n, dist.n_eta))
        if want_lam:
            out_lam = g_z[:, dist.marginals.owner()] * path_grad_lambda(path, dist, compact=True)
            if total:
                out_lam -= g_lam
        if want_eta:
            out_eta = np.einsum("nd,nde->ne", g_z, path_grad_eta(path, dist))
            if total:
                out_eta -= g_eta
        return logp - logq, np.hstack([out_lam, out_eta])

    parts = _map_chunks(work, m)
    f = np.concatenate([p[0] for p in parts])
    per = np.vstack([p[1] for p in parts])
    return _finish(dist, f, per)


def _finish(dist, f, per):
    val, se = _mean_se(f)
    g, gse = _mean_se(per)
    k = dist.n_lambda
    return GradEstimate(float(val), g[:k], g[k:], len(f), float(se), gse[:k], gse[k:])


ESTIMATORS = {"score": grad_score, "reparam": grad_reparam}
