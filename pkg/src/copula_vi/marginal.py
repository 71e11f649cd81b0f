"""Univariate mean-field factors q(z_i; lambda_i).

Each factor is a location-scale family parameterized by ``(mu, log_sigma)``
so that gradient steps are unconstrained.  All methods broadcast over ``z``
(or ``v``) and return arrays of matching shape; gradient methods stack the
two lambda components along the last axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import special

from .bicop import EPS
from .errors import DomainError

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class MarginalKind(str, Enum):
    GAUSSIAN = "gaussian"
    LOGNORMAL = "lognormal"


def _npdf(x):
    return np.exp(-0.5 * x * x - _HALF_LOG_2PI)


@dataclass(frozen=True)
class Marginal:
    kind: MarginalKind = MarginalKind.GAUSSIAN
    mu: float = 0.0
    log_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", MarginalKind(self.kind))
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "log_sigma", float(self.log_sigma))

    n_params = 2

    @property
    def sigma(self):
        return math.exp(self.log_sigma)

    @property
    def params(self):
        return np.array([self.mu, self.log_sigma])

    def with_params(self, params):
        return Marginal(self.kind, float(params[0]), float(params[1]))

    def _std(self, z):
        """Standardized score s = (g(z) - mu)/sigma with g = id or log."""
        z = np.asarray(z, dtype=float)
        if self.kind is MarginalKind.LOGNORMAL:
            if np.any(z <= 0):
                raise DomainError("lognormal marginal requires z > 0")
            return (np.log(z) - self.mu) / self.sigma
        return (z - self.mu) / self.sigma

    def logpdf(self, z):
        s = self._std(z)
        out = -0.5 * s * s - _HALF_LOG_2PI - self.log_sigma
        if self.kind is MarginalKind.LOGNORMAL:
            out = out - np.log(z)
        return out

    def pdf(self, z):
        return np.exp(self.logpdf(z))

    def cdf(self, z):
        return special.ndtr(self._std(z))

    def quantile(self, v):
        s = special.ndtri(np.clip(np.asarray(v, dtype=float), EPS, 1.0 - EPS))
        x = self.mu + self.sigma * s
        return np.exp(x) if self.kind is MarginalKind.LOGNORMAL else x

    def dquantile_dlambda(self, v):
        s = special.ndtri(np.clip(np.asarray(v, dtype=float), EPS, 1.0 - EPS))
        d_mu = np.ones_like(s)
        d_ls = self.sigma * s
        if self.kind is MarginalKind.LOGNORMAL:
            z = np.exp(self.mu + self.sigma * s)
            d_mu, d_ls = z, z * d_ls
        return np.stack([d_mu, d_ls], axis=-1)

    def dlogpdf_dz(self, z):
        s = self._std(z)
        if self.kind is MarginalKind.LOGNORMAL:
            z = np.asarray(z, dtype=float)
            return -(1.0 + s / self.sigma) / z
        return -s / self.sigma

    def dlogpdf_dlambda(self, z):
        s = self._std(z)
        return np.stack([s / self.sigma, s * s - 1.0], axis=-1)

    def dcdf_dlambda(self, z):
        s = self._std(z)
        p = _npdf(s)
        return np.stack([-p / self.sigma, -p * s], axis=-1)

    def to_dict(self):
        return {"kind": self.kind.value, "mu": self.mu, "log_sigma": self.log_sigma}

    @classmethod
    def from_dict(cls, data):
        return cls(data["kind"], data["mu"], data["log_sigma"])


class MarginalSet:
    """Ordered collection of d marginals with a flat lambda vector view."""

    def __init__(self, marginals):
        self.marginals = tuple(marginals)
        if not self.marginals:
            raise DomainError("a marginal set needs at least one marginal")
        self.offsets = np.cumsum([0] + [m.n_params for m in self.marginals])

    @classmethod
    def gaussian(cls, mu, log_sigma=None):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        ls = np.zeros_like(mu) if log_sigma is None else np.broadcast_to(log_sigma, mu.shape)
        return cls(Marginal(MarginalKind.GAUSSIAN, m, s) for m, s in zip(mu, ls))

    def __len__(self):
        return len(self.marginals)

    def __getitem__(self, i):
        return self.marginals[i]

    def __iter__(self):
        return iter(self.marginals)

    def __eq__(self, other):
        return isinstance(other, MarginalSet) and self.marginals == other.marginals

    @property
    def d(self):
        return len(self.marginals)

    @property
    def n_params(self):
        return int(self.offsets[-1])

    @property
    def lam(self):
        return np.concatenate([m.params for m in self.marginals])

    def with_lambda(self, lam):
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (self.n_params,):
            raise DomainError(f"lambda must have shape ({self.n_params},), got {lam.shape}")
        return MarginalSet(
            m.with_params(lam[a:b]) for m, a, b in zip(self.marginals, self.offsets[:-1], self.offsets[1:])
        )

    # column-wise helpers over an (n, d) array
    def _cols(self, fn_name, x):
        x = np.atleast_2d(x)
        return np.stack([getattr(m, fn_name)(x[:, i]) for i, m in enumerate(self.marginals)], axis=1)

    def logpdf(self, z):
        return self._cols("logpdf", z)

    def cdf(self, z):
        return self._cols("cdf", z)

    def quantile(self, v):
        return self._cols("quantile", v)

    def dlogpdf_dz(self, z):
        return self._cols("dlogpdf_dz", z)

    def pdf(self, z):
        return self._cols("pdf", z)

    def _lambda_cols(self, fn_name, x):
        """(n, |lambda|) array; marginal i fills its own lambda slice."""
        x = np.atleast_2d(x)
        out = np.zeros((x.shape[0], self.n_params))
        for i, m in enumerate(self.marginals):
            out[:, self.offsets[i]:self.offsets[i + 1]] = getattr(m, fn_name)(x[:, i])
        return out

    def dquantile_dlambda(self, v):
        return self._lambda_cols("dquantile_dlambda", v)

    def dlogpdf_dlambda(self, z):
        return self._lambda_cols("dlogpdf_dlambda", z)

    def dcdf_dlambda(self, z):
        return self._lambda_cols("dcdf_dlambda", z)

    def owner(self):
        """Index of the marginal owning each lambda coordinate."""
        return np.repeat(np.arange(self.d), np.diff(self.offsets))

    def to_list(self):
        return [m.to_dict() for m in self.marginals]

    @classmethod
    def from_list(cls, data):
        return cls(Marginal.from_dict(x) for x in data)
