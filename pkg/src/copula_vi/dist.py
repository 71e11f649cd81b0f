"""The copula-augmented variational family q(z; lambda, eta)."""

from __future__ import annotations

import numpy as np

from .bicop import FamilyTag
from .errors import DomainError
from .marginal import MarginalSet
from .vine import Vine, compile_plan, grad_log_copula_density, log_copula_density, require_valid


def _structure(vine):
    return vine.d, tuple(tuple((e.i, e.k, e.cond) for e in level) for level in vine.trees)


class CopulaVariationalDist:
    """Mean-field marginals coupled by a vine copula.

    ``log q(z) = sum_i log q_i(z_i) + log c(Q_1(z_1), ..., Q_d(z_d))``.
    Instances are treated as immutable; ``with_lambda``/``with_eta`` return
    new objects that share the compiled plans of this one.
    """

    def __init__(self, marginals, vine=None, _cache=None):
        if not isinstance(marginals, MarginalSet):
            marginals = MarginalSet(marginals)
        vine = Vine(marginals.d, []) if vine is None else vine
        if vine.d != marginals.d:
            raise DomainError(f"vine dimension {vine.d} does not match {marginals.d} marginals")
        self.marginals = marginals
        self.vine = vine
        key = _structure(vine)
        if _cache is None or _cache.get("key") != key:
            require_valid(vine)
            _cache = {"key": key}
        self._cache = _cache

    @classmethod
    def mean_field(cls, mu, log_sigma=None):
        return cls(MarginalSet.gaussian(mu, log_sigma))

    @property
    def d(self):
        return self.marginals.d

    @property
    def lam(self):
        return self.marginals.lam

    @property
    def eta(self):
        return self.vine.eta

    @property
    def n_lambda(self):
        return self.marginals.n_params

    @property
    def n_eta(self):
        return self.vine.n_free

    @property
    def plan(self):
        if "plan" not in self._cache:
            self._cache["plan"] = compile_plan(self.vine)
        return self._cache["plan"]

    @property
    def program(self):
        if "program" not in self._cache:
            from .sampler import compile_program

            self._cache["program"] = compile_program(self.vine)
        return self._cache["program"]

    @property
    def has_copula(self):
        return any(e.pc.family is not FamilyTag.INDEPENDENCE for e in self.vine.edge_list())

    def with_lambda(self, lam):
        return CopulaVariationalDist(self.marginals.with_lambda(lam), self.vine, self._cache)

    def with_eta(self, eta):
        return CopulaVariationalDist(self.marginals, self.vine.with_eta(eta), self._cache)

    def with_vine(self, vine):
        return CopulaVariationalDist(self.marginals, vine, self._cache)

    def with_marginals(self, marginals):
        return CopulaVariationalDist(marginals, self.vine, self._cache)

    # -- density ---------------------------------------------------------
    def log_q(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = self.marginals.logpdf(z).sum(axis=1)
        if self.has_copula:
            out = out + log_copula_density(self.vine, self.plan, self.marginals.cdf(z))
        return out

    def log_q_grads(self, z):
        """``log q`` with its gradients at fixed ``z``.

        Returns ``(logq, d_dz, d_dlambda, d_deta)`` with shapes (n,), (n, d),
        (n, |lambda|) and (n, |eta|).  The z-gradient is the marginal score
        plus the marginal density times the copula's u-gradient.
        """
        z = np.atleast_2d(np.asarray(z, dtype=float))
        n = z.shape[0]
        ms = self.marginals
        logq = ms.logpdf(z).sum(axis=1)
        g_z = ms.dlogpdf_dz(z)
        g_lam = ms.dlogpdf_dlambda(z)
        g_eta = np.zeros((n, self.n_eta))
        if self.has_copula:
            u = ms.cdf(z)
            logc, du, dth = grad_log_copula_density(self.vine, self.plan, u)
            logq = logq + logc
            g_z = g_z + ms.pdf(z) * du
            g_lam = g_lam + du[:, ms.owner()] * ms.dcdf_dlambda(z)
            g_eta = dth[:, self.vine.free_index()] * self.vine.dtheta_deta()
        return logq, g_z, g_lam, g_eta

    def grad_z_log_q(self, z):
        return self.log_q_grads(z)[1]

    # -- sampling --------------------------------------------------------
    def sample(self, n, seed, start=0):
        from .sampler import draw

        return draw(self, n, seed, start).z

    # -- serialization ---------------------------------------------------
    def to_dict(self):
        return {"marginals": self.marginals.to_list(), "vine": self.vine.to_dict()}

    @classmethod
    def from_dict(cls, data):
        return cls(MarginalSet.from_list(data["marginals"]), Vine.from_dict(data["vine"]))
