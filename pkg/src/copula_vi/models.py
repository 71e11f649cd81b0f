"""Built-in target models.

* :class:`GaussianTarget` - multivariate normal with closed-form posterior.
* :class:`MixtureTarget` - Gaussian mixture with the discrete assignments
  summed out, over unconstrained latents ``(stick logits, means, log
  precisions)``.
* :func:`fd_wrap` - finite-difference gradients for models without one.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
from scipy import linalg, special

from .bicop import FamilyTag, PairCopula, Rotation
from .errors import DomainError, NumericalError
from .grad import TargetModel

_LOG_2PI = math.log(2.0 * math.pi)


class GaussianTarget(TargetModel):
    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        d = self.mean.size
        if self.cov.shape != (d, d) or not np.allclose(self.cov, self.cov.T):
            raise DomainError("covariance must be a symmetric d x d matrix")
        try:
            self._chol = linalg.cho_factor(self.cov, lower=True)
        except linalg.LinAlgError as exc:
            raise DomainError("covariance is not positive definite") from exc
        self.dim = d
        self.precision = linalg.cho_solve(self._chol, np.eye(d))
        self._log_norm = -0.5 * d * _LOG_2PI - np.sum(np.log(np.diag(self._chol[0])))

    @classmethod
    def correlated_2d(cls, rho=0.8, sd=(1.0, 1.0), mean=(0.0, 0.0)):
        s = np.asarray(sd, dtype=float)
        cov = np.array([[s[0] ** 2, rho * s[0] * s[1]], [rho * s[0] * s[1], s[1] ** 2]])
        return cls(mean, cov)

    def logp_batch(self, Z):
        r = np.atleast_2d(Z) - self.mean
        return self._log_norm - 0.5 * np.einsum("ni,ij,nj->n", r, self.precision, r)

    def grad_batch(self, Z):
        return -(np.atleast_2d(Z) - self.mean) @ self.precision

    def logp(self, z):
        return float(self.logp_batch(z)[0])

    def grad_logp(self, z):
        return self.grad_batch(z)[0]

    def partial_correlation(self, i, k, cond=()):
        idx = [i, k, *cond]
        p = np.linalg.inv(self.cov[np.ix_(idx, idx)])
        return -p[0, 1] / math.sqrt(p[0, 0] * p[1, 1])

    def optimum(self, dist):
        """``dist`` moved to the exact target: true marginals, and Gaussian pair
        copulas at the partial correlations along its vine."""
        from .marginal import Marginal, MarginalSet

        sd = np.sqrt(np.diag(self.cov))
        marg = MarginalSet(Marginal("gaussian", m, math.log(s)) for m, s in zip(self.mean, sd))
        edges = [
            replace(e, pc=PairCopula(FamilyTag.GAUSSIAN, Rotation.R0, (self.partial_correlation(e.i, e.k, e.cond),)))
            for e in dist.vine.edge_list()
        ]
        return dist.with_marginals(marg).with_vine(dist.vine.with_edges(edges))

    def to_dict(self):
        return {"kind": "gaussian", "mean": self.mean.tolist(), "cov": self.cov.tolist()}


class MixtureTarget(TargetModel):
    """Marginalized Gaussian mixture with diagonal precisions.

    Latent layout (length ``(K-1) + 2*K*P``): stick-breaking logits ``v``,
    component means ``mu`` (K x P, row-major), log precisions ``s`` (K x P).
    Priors: symmetric Dirichlet(alpha) on the weights; per coordinate
    ``tau ~ Gamma(a0, rate=b0)`` and ``mu | tau ~ N(m0, 1/(kappa0 tau))``.
    The log joint includes the Jacobians of the stick-breaking and log maps.
    """

    def __init__(self, x, K, alpha=1.0, m0=0.0, kappa0=0.01, a0=1.0, b0=1.0):
        x = np.asarray(x, dtype=float)
        self.x = x[:, None] if x.ndim == 1 else x
        self.n, self.P = self.x.shape
        self.K = int(K)
        if self.n < 1 or self.K < 1:
            raise DomainError("mixture needs at least one data point and one component")
        if alpha <= 0 or kappa0 <= 0 or a0 <= 0 or b0 <= 0:
            raise DomainError("alpha, kappa0, a0 and b0 must be positive")
        self.alpha, self.m0, self.kappa0, self.a0, self.b0 = float(alpha), float(m0), float(kappa0), float(a0), float(b0)
        self.dim = (self.K - 1) + 2 * self.K * self.P
        self._stick_offset = np.log(self.K - np.arange(1, self.K))  # log(K - k), k = 1..K-1
        self._const = (
            special.gammaln(self.K * self.alpha) - self.K * special.gammaln(self.alpha)
            + self.K * self.P * (0.5 * math.log(self.kappa0) - 0.5 * _LOG_2PI
                                 + self.a0 * math.log(self.b0) - special.gammaln(self.a0))
            - 0.5 * self.n * self.P * _LOG_2PI
        )

    # -- layout ----------------------------------------------------------
    def mean_index(self, k, p=0):
        return (self.K - 1) + k * self.P + p

    def log_prec_index(self, k, p=0):
        return (self.K - 1) + self.K * self.P + k * self.P + p

    def unpack(self, Z):
        Z = np.atleast_2d(Z)
        m = Z.shape[0]
        K, P = self.K, self.P
        v = Z[:, : K - 1]
        mu = Z[:, K - 1: K - 1 + K * P].reshape(m, K, P)
        s = Z[:, K - 1 + K * P:].reshape(m, K, P)
        return v, mu, s

    def _sticks(self, v):
        a = v - self._stick_offset
        log_sig = -np.logaddexp(0.0, -a)
        log_one_minus = -np.logaddexp(0.0, a)
        cum = np.concatenate([np.zeros((v.shape[0], 1)), np.cumsum(log_one_minus, axis=1)], axis=1)
        log_pi = np.concatenate([log_sig + cum[:, :-1], cum[:, -1:]], axis=1)
        log_jac = np.sum(log_sig + log_one_minus + cum[:, :-1], axis=1)
        return log_pi, log_jac, np.exp(log_sig)

    def weights(self, z):
        return np.exp(self._sticks(np.atleast_2d(z)[:, : self.K - 1])[0][0])

    def _terms(self, Z, need_resp=False):
        v, mu, s = self.unpack(Z)
        log_pi, log_jac, sig = self._sticks(v)
        tau = np.exp(s)
        diff = self.x[None, :, None, :] - mu[:, None, :, :]  # (m, n, K, P)
        sq = diff * diff
        if self.P == 1:
            comp = 0.5 * s[:, None, :, 0] - 0.5 * tau[:, None, :, 0] * sq[..., 0]
        else:
            comp = 0.5 * s.sum(axis=2)[:, None, :] - 0.5 * np.einsum("mnkp,mkp->mnk", sq, tau)
        joint = comp + log_pi[:, None, :]
        top = joint.max(axis=2, keepdims=True)
        e = np.exp(joint - top)
        total = e.sum(axis=2)
        ll = top[..., 0] + np.log(total)
        dm = mu - self.m0
        prior = (np.sum((self.alpha - 1.0) * log_pi, axis=1) + log_jac
                 + np.sum(0.5 * s - 0.5 * self.kappa0 * tau * dm ** 2 + self.a0 * s - self.b0 * tau, axis=(1, 2)))
        logp = self._const + ll.sum(axis=1) + prior
        if not need_resp:
            return logp, None
        r = e / total[..., None]  # responsibilities (m, n, K)
        return logp, (r, diff, sq, tau, dm, sig)

    def logp_batch(self, Z):
        return self._terms(np.atleast_2d(Z))[0]

    def logp_and_grad_batch(self, Z):
        Z = np.atleast_2d(Z)
        logp, (r, diff, sq, tau, dm, sig) = self._terms(Z, need_resp=True)
        K, P = self.K, self.P
        g_mu = np.einsum("mnk,mnkp->mkp", r, diff) * tau - self.kappa0 * tau * dm
        nk = r.sum(axis=1)
        g_s = (0.5 * nk[:, :, None] - 0.5 * tau * np.einsum("mnk,mnkp->mkp", r, sq)
               + 0.5 - 0.5 * self.kappa0 * tau * dm ** 2 + self.a0 - self.b0 * tau)
        parts = []
        if K > 1:
            w = (self.alpha - 1.0) + nk  # coefficient of log pi_k, (m, K)
            tail = np.cumsum(w[:, ::-1], axis=1)[:, ::-1]  # sum_{k >= j} w_k
            j = np.arange(1, K)
            g_v = w[:, :-1] * (1.0 - sig) - sig * tail[:, 1:]
            g_v += (1.0 - 2.0 * sig) - sig * (K - 1 - j)
            parts.append(g_v)
        parts += [g_mu.reshape(-1, K * P), g_s.reshape(-1, K * P)]
        return logp, np.hstack(parts)

    def grad_batch(self, Z):
        return self.logp_and_grad_batch(Z)[1]

    def logp(self, z):
        return float(self.logp_batch(z)[0])

    def grad_logp(self, z):
        return self.grad_batch(z)[0]

    def complete_logp(self, z, assign):
        """Log joint with explicit assignments (the summand of the marginal)."""
        v, mu, s = self.unpack(z)
        log_pi, log_jac, _ = self._sticks(v)
        tau = np.exp(s)
        k = np.asarray(assign)
        dm = mu[0] - self.m0
        lik = np.sum(0.5 * s[0, k] - 0.5 * tau[0, k] * (self.x - mu[0, k]) ** 2) + np.sum(log_pi[0, k])
        prior = (np.sum((self.alpha - 1.0) * log_pi[0]) + log_jac[0]
                 + np.sum(0.5 * s[0] - 0.5 * self.kappa0 * tau[0] * dm ** 2 + self.a0 * s[0] - self.b0 * tau[0]))
        return float(self._const + lik + prior)

    def to_dict(self):
        return {"kind": "mixture", "K": self.K, "alpha": self.alpha,
                "nw": {"m0": self.m0, "kappa0": self.kappa0, "a0": self.a0, "b0": self.b0}}


class FDModel(TargetModel):
    """Central finite-difference gradient around a log-density callable."""

    def __init__(self, model, rel_step=1e-5):
        self.inner = model
        self.dim = model.dim
        self.rel_step = rel_step

    def logp(self, z):
        return self.inner.logp(z)

    def logp_batch(self, Z):
        return self.inner.logp_batch(Z)

    def grad_logp(self, z):
        z = np.asarray(z, dtype=float)
        g = np.empty(self.dim)
        for i in range(self.dim):
            h = self.rel_step * (1.0 + abs(z[i]))
            zp, zm = z.copy(), z.copy()
            zp[i] += h
            zm[i] -= h
            fp, fm = self.inner.logp(zp), self.inner.logp(zm)
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericalError(f"non-finite logp near z[{i}]={z[i]}", context=i)
            g[i] = (fp - fm) / (2 * h)
        return g


def fd_wrap(model, rel_step=1e-5):
    return FDModel(model, rel_step)


def model_from_dict(spec, base_dir="."):
    """Build a target from its JSON description."""
    import os

    kind = spec.get("kind")
    if kind == "gaussian":
        return GaussianTarget(spec["mean"], spec["cov"])
    if kind == "mixture":
        path = os.path.join(base_dir, spec["data_csv"])
        x = np.loadtxt(path, delimiter=",", ndmin=2, skiprows=int(spec.get("skiprows", 0)))
        nw = spec.get("nw", {})
        return MixtureTarget(x, spec["K"], spec.get("alpha", 1.0), **nw)
    raise DomainError(f"unknown model kind {kind!r}")
