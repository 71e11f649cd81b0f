"""Bivariate copula families used as vine building blocks.

Seven base families (independence, Gaussian, Student-t, Clayton, Gumbel,
Frank, Joe) plus 90/180/270 degree rotations of Clayton, Gumbel and Joe,
sixteen combinations in total.  Every function is vectorized over ``u`` and
``v`` and treats the parameter vector as a scalar tuple.

Conventions
-----------
``hfunc(pc, u, v)`` is the conditional CDF ``P(U <= u | V = v) = dC/dv``.
The opposite conditional ``dC/du`` is obtained as ``hfunc(swap(pc), v, u)``.

Rotations act on the base density as::

    c_90(u, v)  = c(v, 1 - u)
    c_180(u, v) = c(1 - u, 1 - v)
    c_270(u, v) = c(1 - v, u)

All base families are exchangeable, so a rotation reduces to reflecting
``u`` (90, 180) and/or ``v`` (180, 270).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import NamedTuple

import numpy as np
from scipy import integrate, special
from scipy.stats import multivariate_normal

from .errors import DomainError, NumericalError

EPS = 1e-10
FD_STEP = 1e-6
HINV_TOL = 1e-12
STUDENT_NU_GRID = (4.0, 8.0, 15.0)
TAU_BISECT_BOUNDS = (1e-4, 50.0)
TAU_BISECT_TOL = 1e-8
RHO_MAX = 1.0 - 1e-10

_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


class FamilyTag(str, Enum):
    INDEPENDENCE = "independence"
    GAUSSIAN = "gaussian"
    STUDENT_T = "student_t"
    CLAYTON = "clayton"
    GUMBEL = "gumbel"
    FRANK = "frank"
    JOE = "joe"


class Rotation(IntEnum):
    R0 = 0
    R90 = 90
    R180 = 180
    R270 = 270


ROTATABLE = frozenset({FamilyTag.CLAYTON, FamilyTag.GUMBEL, FamilyTag.JOE})


def all_family_rotations():
    """The sixteen admissible (family, rotation) combinations."""
    out = []
    for fam in FamilyTag:
        rots = list(Rotation) if fam in ROTATABLE else [Rotation.R0]
        out.extend((fam, rot) for rot in rots)
    return out


def clamp(x):
    return np.clip(np.asarray(x, dtype=float), EPS, 1.0 - EPS)


class Partials(NamedTuple):
    d_logc_du: np.ndarray
    d_logc_dv: np.ndarray
    d_logc_dtheta: np.ndarray
    dh_du: np.ndarray
    dh_dv: np.ndarray
    dh_dtheta: np.ndarray


# ---------------------------------------------------------------------------
# base families (rotation 0); th is the parameter tuple
# ---------------------------------------------------------------------------


class _Family:
    n_params = 1
    # bounds of the free (first) parameter; *_open marks strict inequality
    lower, upper = -math.inf, math.inf
    lower_open = upper_open = True

    def logpdf(self, u, v, th):
        raise NotImplementedError

    def cdf(self, u, v, th):
        raise NotImplementedError

    def hfunc(self, u, v, th):
        raise NotImplementedError

    def hinv(self, w, v, th):
        return _solve_h(self, w, v, th)

    def tau(self, th):
        raise NotImplementedError

    # analytic gradients; None means use finite differences
    grad_logpdf = None
    grad_hfunc = None


class _Independence(_Family):
    n_params = 0

    def logpdf(self, u, v, th):
        return np.zeros(np.broadcast(u, v).shape)

    def cdf(self, u, v, th):
        return u * v

    def hfunc(self, u, v, th):
        return np.broadcast_to(u, np.broadcast(u, v).shape).astype(float)

    def hinv(self, w, v, th):
        return np.broadcast_to(w, np.broadcast(w, v).shape).astype(float)

    def tau(self, th):
        return 0.0

    def grad_logpdf(self, u, v, th):
        z = np.zeros(np.broadcast(u, v).shape)
        return z, z, z

    def grad_hfunc(self, u, v, th):
        z = np.zeros(np.broadcast(u, v).shape)
        return z, z


class _Gaussian(_Family):
    lower, upper = -1.0, 1.0
    lower_open = upper_open = False

    def logpdf(self, u, v, th):
        r = th[0]
        x, y = special.ndtri(u), special.ndtri(v)
        den = 1.0 - r * r
        return -0.5 * np.log(den) - (r * r * (x * x + y * y) - 2.0 * r * x * y) / (2.0 * den)

    def cdf(self, u, v, th):
        r = th[0]
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        if r == 0.0:
            return u * v
        pts = np.stack([special.ndtri(u).ravel(), special.ndtri(v).ravel()], axis=-1)
        mvn = multivariate_normal(mean=[0.0, 0.0], cov=[[1.0, r], [r, 1.0]])
        return np.asarray(mvn.cdf(pts), dtype=float).reshape(u.shape)

    def hfunc(self, u, v, th):
        r = th[0]
        x, y = special.ndtri(u), special.ndtri(v)
        return special.ndtr((x - r * y) / math.sqrt(1.0 - r * r))

    def hinv(self, w, v, th):
        r = th[0]
        return special.ndtr(r * special.ndtri(v) + math.sqrt(1.0 - r * r) * special.ndtri(w))

    def tau(self, th):
        return 2.0 / math.pi * math.asin(th[0])

    def grad_logpdf(self, u, v, th):
        r = th[0]
        x, y = special.ndtri(u), special.ndtri(v)
        den = 1.0 - r * r
        q = r * r * (x * x + y * y) - 2.0 * r * x * y
        dq = 2.0 * r * (x * x + y * y) - 2.0 * x * y
        d_r = r / den - (dq * den + 2.0 * r * q) / (2.0 * den * den)
        d_x = -(r * r * x - r * y) / den
        d_y = -(r * r * y - r * x) / den
        return d_x / _npdf(x), d_y / _npdf(y), d_r

    def grad_hfunc(self, u, v, th):
        r = th[0]
        x, y = special.ndtri(u), special.ndtri(v)
        sd = math.sqrt(1.0 - r * r)
        a = (x - r * y) / sd
        pa = _npdf(a)
        dh_dv = pa * (-r / sd) / _npdf(y)
        dh_dr = pa * (-y / sd + (x - r * y) * r / sd**3)
        return dh_dv, dh_dr


class _StudentT(_Family):
    n_params = 2
    lower, upper = -1.0, 1.0
    lower_open = upper_open = False

    def logpdf(self, u, v, th):
        r, nu = th
        x, y = special.stdtrit(nu, u), special.stdtrit(nu, v)
        den = 1.0 - r * r
        const = (
            special.gammaln((nu + 2.0) / 2.0)
            + special.gammaln(nu / 2.0)
            - 2.0 * special.gammaln((nu + 1.0) / 2.0)
            - 0.5 * math.log(den)
        )
        quad = (x * x + y * y - 2.0 * r * x * y) / (nu * den)
        return (
            const
            - (nu + 2.0) / 2.0 * np.log1p(quad)
            + (nu + 1.0) / 2.0 * (np.log1p(x * x / nu) + np.log1p(y * y / nu))
        )

    def _cond_scale(self, y, r, nu):
        return np.sqrt((nu + y * y) * (1.0 - r * r) / (nu + 1.0))

    def hfunc(self, u, v, th):
        r, nu = th
        x, y = special.stdtrit(nu, u), special.stdtrit(nu, v)
        return special.stdtr(nu + 1.0, (x - r * y) / self._cond_scale(y, r, nu))

    def hinv(self, w, v, th):
        r, nu = th
        y = special.stdtrit(nu, v)
        x = special.stdtrit(nu + 1.0, w) * self._cond_scale(y, r, nu) + r * y
        return special.stdtr(nu, x)

    def cdf(self, u, v, th):
        r, nu = th
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        logk = special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2) - 0.5 * math.log(nu * math.pi)

        def one(uu, vv):
            x, y = special.stdtrit(nu, uu), special.stdtrit(nu, vv)

            def integrand(s):
                dens = math.exp(logk - (nu + 1) / 2 * math.log1p(s * s / nu))
                return special.stdtr(nu + 1.0, (x - r * s) / self._cond_scale(s, r, nu)) * dens

            val, _ = integrate.quad(integrand, -np.inf, y, epsabs=1e-14, epsrel=1e-12, limit=200)
            return val

        out = np.array([one(a, b) for a, b in zip(u.ravel(), v.ravel())])
        return out.reshape(u.shape)

    def tau(self, th):
        return 2.0 / math.pi * math.asin(th[0])


class _Clayton(_Family):
    lower, upper = 0.0, math.inf

    @staticmethod
    def _log_a(u, v, t):
        # log(u^-t + v^-t - 1), overflow-safe
        a, b = -t * np.log(u), -t * np.log(v)
        m = np.maximum(a, b)
        return m + np.log(np.exp(a - m) + np.exp(b - m) - np.exp(-m))

    def logpdf(self, u, v, th):
        t = th[0]
        la = self._log_a(u, v, t)
        return math.log1p(t) - (1.0 + t) * (np.log(u) + np.log(v)) - (2.0 + 1.0 / t) * la

    def cdf(self, u, v, th):
        return np.exp(-self._log_a(u, v, th[0]) / th[0])

    def hfunc(self, u, v, th):
        t = th[0]
        return np.exp(-(t + 1.0) * np.log(v) - (1.0 / t + 1.0) * self._log_a(u, v, t))

    def hinv(self, w, v, th):
        t = th[0]
        b = -t * np.log(v)
        inner = b + np.log(np.expm1(-t / (1.0 + t) * np.log(w)) + np.exp(-b))
        return np.exp(-inner / t)

    def tau(self, th):
        return th[0] / (th[0] + 2.0)

    def grad_logpdf(self, u, v, th):
        t = th[0]
        lu, lv = np.log(u), np.log(v)
        la = self._log_a(u, v, t)
        ru = np.exp(-t * lu - la)  # u^-t / A
        rv = np.exp(-t * lv - la)
        d_u = -(1.0 + t) / u + (2.0 * t + 1.0) * ru / u
        d_v = -(1.0 + t) / v + (2.0 * t + 1.0) * rv / v
        da_over_a = -ru * lu - rv * lv
        d_t = 1.0 / (1.0 + t) - (lu + lv) + la / t**2 - (2.0 + 1.0 / t) * da_over_a
        return d_u, d_v, d_t

    def grad_hfunc(self, u, v, th):
        t = th[0]
        lu, lv = np.log(u), np.log(v)
        la = self._log_a(u, v, t)
        h = np.exp(-(t + 1.0) * lv - (1.0 / t + 1.0) * la)
        ru = np.exp(-t * lu - la)
        rv = np.exp(-t * lv - la)
        dh_dv = h * (-(t + 1.0) / v + (t + 1.0) * rv / v)
        dh_dt = h * (-lv + la / t**2 - (1.0 / t + 1.0) * (-ru * lu - rv * lv))
        return dh_dv, dh_dt


class _Gumbel(_Family):
    lower, upper = 1.0, math.inf
    lower_open = False

    @staticmethod
    def _parts(u, v, t):
        x, y = -np.log(u), -np.log(v)
        lx, ly = np.log(x), np.log(y)
        ls = np.logaddexp(t * lx, t * ly)
        return lx, ly, ls, np.exp(ls / t)

    def logpdf(self, u, v, th):
        t = th[0]
        lx, ly, ls, a = self._parts(u, v, t)
        return (
            -a - np.log(u) - np.log(v) + (t - 1.0) * (lx + ly)
            + (1.0 / t - 2.0) * ls + np.log(a + t - 1.0)
        )

    def cdf(self, u, v, th):
        return np.exp(-self._parts(u, v, th[0])[3])

    def hfunc(self, u, v, th):
        t = th[0]
        lx, ly, ls, a = self._parts(u, v, t)
        return np.exp(-a + (1.0 / t - 1.0) * ls + (t - 1.0) * ly - np.log(v))

    def tau(self, th):
        return 1.0 - 1.0 / th[0]


class _Frank(_Family):
    lower, upper = 0.0, math.inf

    def logpdf(self, u, v, th):
        t = th[0]
        e = math.expm1(-t)
        den = e + np.expm1(-t * u) * np.expm1(-t * v)
        return math.log(t) + math.log(-e) - t * (u + v) - 2.0 * np.log(np.abs(den))

    def cdf(self, u, v, th):
        t = th[0]
        return -np.log1p(np.expm1(-t * u) * np.expm1(-t * v) / math.expm1(-t)) / t

    def hfunc(self, u, v, th):
        t = th[0]
        eu, ev = np.expm1(-t * u), np.expm1(-t * v)
        return np.exp(-t * v) * eu / (math.expm1(-t) + eu * ev)

    def hinv(self, w, v, th):
        t = th[0]
        e = math.expm1(-t)
        eu = w * e / (np.exp(-t * v) - w * np.expm1(-t * v))
        return -np.log1p(eu) / t

    def tau(self, th):
        return frank_tau(th[0])


class _Joe(_Family):
    lower, upper = 1.0, math.inf

    @staticmethod
    def _parts(u, v, t):
        lub, lvb = np.log1p(-u), np.log1p(-v)
        la, lb = t * lub, t * lvb
        a = np.exp(la)
        ls = np.logaddexp(la, lb + np.log1p(-a))
        return lub, lvb, a, ls

    def logpdf(self, u, v, th):
        t = th[0]
        lub, lvb, a, ls = self._parts(u, v, t)
        return (1.0 / t - 2.0) * ls + (t - 1.0) * (lub + lvb) + np.log(t - 1.0 + np.exp(ls))

    def cdf(self, u, v, th):
        t = th[0]
        return -np.expm1(self._parts(u, v, t)[3] / t)

    def hfunc(self, u, v, th):
        t = th[0]
        lub, lvb, a, ls = self._parts(u, v, t)
        return np.exp((1.0 / t - 1.0) * ls + np.log1p(-a) + (t - 1.0) * lvb)

    def tau(self, th):
        return joe_tau(th[0])


_FAMILIES = {
    FamilyTag.INDEPENDENCE: _Independence(),
    FamilyTag.GAUSSIAN: _Gaussian(),
    FamilyTag.STUDENT_T: _StudentT(),
    FamilyTag.CLAYTON: _Clayton(),
    FamilyTag.GUMBEL: _Gumbel(),
    FamilyTag.FRANK: _Frank(),
    FamilyTag.JOE: _Joe(),
}


def _npdf(x):
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _solve_h(fam, w, v, th, max_iter=100):
    """Invert ``u -> h(u | v)`` by Newton steps safeguarded with bisection."""
    w, v = np.broadcast_arrays(np.asarray(w, float), np.asarray(v, float))
    w, v = w.copy(), v.copy()
    lo = np.full(w.shape, EPS)
    hi = np.full(w.shape, 1.0 - EPS)
    x = np.clip(w, EPS, 1.0 - EPS)
    for _ in range(max_iter):
        f = fam.hfunc(x, v, th) - w
        done = (np.abs(f) <= HINV_TOL) | (hi - lo <= 1e-15)
        if done.all():
            return x
        lo = np.where(f < 0, x, lo)
        hi = np.where(f > 0, x, hi)
        with np.errstate(all="ignore"):
            xn = x - f / np.exp(fam.logpdf(x, v, th))
        bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        x = np.where(done, x, xn)
    f = fam.hfunc(x, v, th) - w
    worst = float(np.max(np.abs(f)))
    if worst > 1e-10:
        raise NumericalError(f"h-function inversion did not converge (residual {worst:.3g})", residual=worst)
    return x


def frank_debye1(t):
    """Debye function D1(t) = (1/t) * int_0^t s / (e^s - 1) ds by 64-point Gauss-Legendre."""
    s = 0.5 * t * (_GL_X + 1.0)
    return 0.5 * float(np.sum(_GL_W * s / np.expm1(s)))


def frank_tau(t):
    return 1.0 - 4.0 / t * (1.0 - frank_debye1(t))


def joe_tau(t):
    """Kendall's tau of the Joe copula from the Archimedean generator integral."""
    if t == 1.0:
        return 0.0

    def ratio(s):
        # phi(t)/phi'(t) after the substitution s = 1 - t
        st = s**t
        return math.log1p(-st) * (1.0 - st) / (t * s ** (t - 1.0))

    val, _ = integrate.quad(ratio, 0.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)
    return 1.0 + 4.0 * val


# ---------------------------------------------------------------------------
# PairCopula
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairCopula:
    family: FamilyTag = FamilyTag.INDEPENDENCE
    rotation: Rotation = Rotation.R0
    theta: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "family", FamilyTag(self.family))
        object.__setattr__(self, "rotation", Rotation(int(self.rotation)))
        object.__setattr__(self, "theta", tuple(float(t) for t in np.atleast_1d(self.theta)))
        _check_domain(self)

    @property
    def n_free(self):
        """Number of parameters exposed to gradient-based optimization."""
        return 0 if self.family is FamilyTag.INDEPENDENCE else 1

    def to_dict(self):
        return {"family": self.family.value, "rotation": int(self.rotation), "theta": list(self.theta)}

    @classmethod
    def from_dict(cls, data):
        return cls(data["family"], data.get("rotation", 0), tuple(data.get("theta", ())))

    def __str__(self):
        rot = f"{int(self.rotation)}" if self.rotation else ""
        pars = ", ".join(f"{t:.4g}" for t in self.theta)
        return f"{self.family.value}{rot}({pars})"


def _check_domain(pc):
    fam = pc.family
    th = pc.theta
    name = fam.value
    if pc.rotation != Rotation.R0 and fam not in ROTATABLE:
        raise DomainError(f"{name} copula does not admit rotation {int(pc.rotation)}")
    expected = _FAMILIES[fam].n_params
    if len(th) != expected:
        raise DomainError(f"{name} copula expects {expected} parameter(s), got {len(th)}")
    if fam is FamilyTag.INDEPENDENCE:
        return
    if not all(math.isfinite(t) for t in th):
        raise DomainError(f"{name} copula parameter must be finite, got {th}")
    t = th[0]
    if fam in (FamilyTag.GAUSSIAN, FamilyTag.STUDENT_T):
        if not -1.0 <= t <= 1.0:
            raise DomainError(f"{name} correlation must lie in [-1, 1], got {t}")
        if fam is FamilyTag.STUDENT_T and not th[1] > 2.0:
            raise DomainError(f"student_t degrees of freedom must exceed 2, got {th[1]}")
    elif fam in (FamilyTag.CLAYTON, FamilyTag.FRANK):
        if not t > 0.0:
            raise DomainError(f"{name} parameter must lie in (0, inf), got {t}")
    elif fam is FamilyTag.GUMBEL:
        if not t >= 1.0:
            raise DomainError(f"gumbel parameter must lie in [1, inf), got {t}")
    elif fam is FamilyTag.JOE:
        if not t > 1.0:
            raise DomainError(f"joe parameter must lie in (1, inf), got {t}")


_SWAP = {Rotation.R0: Rotation.R0, Rotation.R90: Rotation.R270,
         Rotation.R180: Rotation.R180, Rotation.R270: Rotation.R90}


def swap(pc):
    """Copula of (V, U) when ``pc`` is the copula of (U, V)."""
    if pc.rotation in (Rotation.R90, Rotation.R270):
        return PairCopula(pc.family, _SWAP[pc.rotation], pc.theta)
    return pc


def _flips(pc):
    return pc.rotation in (Rotation.R90, Rotation.R180), pc.rotation in (Rotation.R180, Rotation.R270)


def _prep(pc, u, v):
    u, v = clamp(u), clamp(v)
    fu, fv = _flips(pc)
    return _FAMILIES[pc.family], (1.0 - u if fu else u), (1.0 - v if fv else v), fu, fv


def log_density(pc, u, v):
    fam, uu, vv, _, _ = _prep(pc, u, v)
    return fam.logpdf(uu, vv, pc.theta)


def density(pc, u, v):
    return np.exp(log_density(pc, u, v))


def hfunc(pc, u, v):
    """Conditional CDF h(u | v) = dC(u, v)/dv."""
    fam, uu, vv, fu, _ = _prep(pc, u, v)
    h = fam.hfunc(uu, vv, pc.theta)
    return 1.0 - h if fu else h


def hinv(pc, w, v):
    """Solve hfunc(pc, u, v) = w for u."""
    w = clamp(w)
    fam, _, vv, fu, _ = _prep(pc, 0.5, v)
    try:
        x = fam.hinv(1.0 - w if fu else w, vv, pc.theta)
    except NumericalError as err:
        err.context = str(pc)
        raise
    return clamp(1.0 - x if fu else x)


def cdf(pc, u, v):
    u0, v0 = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
    fam = _FAMILIES[pc.family]
    uc, vc = clamp(u0), clamp(v0)
    th = pc.theta
    rot = pc.rotation
    if rot == Rotation.R0:
        out = fam.cdf(uc, vc, th)
    elif rot == Rotation.R90:
        out = vc - fam.cdf(1.0 - uc, vc, th)
    elif rot == Rotation.R180:
        out = uc + vc - 1.0 + fam.cdf(1.0 - uc, 1.0 - vc, th)
    else:
        out = uc - fam.cdf(uc, 1.0 - vc, th)
    out = np.asarray(out, dtype=float)
    out = np.where(u0 >= 1.0, v0, out)
    out = np.where(v0 >= 1.0, u0, out)
    out = np.where((u0 <= 0.0) | (v0 <= 0.0), 0.0, out)
    return out if out.ndim else float(out)


def tau_from_theta(pc):
    tau = _FAMILIES[pc.family].tau(pc.theta)
    return -tau if pc.rotation in (Rotation.R90, Rotation.R270) else tau


def _bisect_tau(fn, tau, lo, hi):
    flo, fhi = fn(lo), fn(hi)
    if tau <= flo:
        return lo
    if tau >= fhi:
        raise DomainError(f"tau={tau} beyond attainable range (max {fhi:.4f} at theta={hi})")
    while hi - lo > TAU_BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if fn(mid) < tau:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def theta_from_tau(family, tau, rotation=Rotation.R0, nu=8.0):
    """Parameter tuple attaining Kendall's ``tau`` for ``family``/``rotation``."""
    family = FamilyTag(family)
    rotation = Rotation(int(rotation))
    if not -1.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (-1, 1), got {tau}")
    if rotation in (Rotation.R90, Rotation.R270):
        tau = -tau
    if family is FamilyTag.INDEPENDENCE:
        return ()
    if family in (FamilyTag.GAUSSIAN, FamilyTag.STUDENT_T):
        rho = math.sin(math.pi / 2.0 * tau)
        return (rho,) if family is FamilyTag.GAUSSIAN else (rho, float(nu))
    if tau <= 0.0:
        hint = "use a 90 or 270 degree rotation" if family in ROTATABLE else "use a family admitting negative dependence"
        raise DomainError(f"{family.value} (rotation {int(rotation)}) cannot attain tau={tau:+.4f}; {hint}")
    if family is FamilyTag.CLAYTON:
        return (2.0 * tau / (1.0 - tau),)
    if family is FamilyTag.GUMBEL:
        return (1.0 / (1.0 - tau),)
    lo, hi = TAU_BISECT_BOUNDS
    if family is FamilyTag.FRANK:
        return (_bisect_tau(frank_tau, tau, lo, hi),)
    return (_bisect_tau(joe_tau, tau, 1.0 + lo, hi),)


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------


def _theta_step(fam, th):
    t = th[0]
    step = FD_STEP * max(1.0, abs(t))
    down = t - step
    up = t + step
    lower_ok = down > fam.lower or (not fam.lower_open and down >= fam.lower)
    upper_ok = up < fam.upper or (not fam.upper_open and up <= fam.upper)
    if fam.lower == -1.0:  # correlations: keep strictly inside
        lower_ok, upper_ok = down > -1.0, up < 1.0
    return step, lower_ok, upper_ok


def _fd_theta(fn, fam, u, v, th):
    step, lo_ok, hi_ok = _theta_step(fam, th)
    rest = th[1:]
    if lo_ok and hi_ok:
        return (fn(u, v, (th[0] + step,) + rest) - fn(u, v, (th[0] - step,) + rest)) / (2 * step)
    if hi_ok:
        return (fn(u, v, (th[0] + step,) + rest) - fn(u, v, th)) / step
    return (fn(u, v, th) - fn(u, v, (th[0] - step,) + rest)) / step


def _fd_arg(fn, u, v, th, which):
    x = u if which == 0 else v
    h = np.minimum(FD_STEP, 0.5 * np.minimum(x, 1.0 - x))
    if which == 0:
        return (fn(u + h, v, th) - fn(u - h, v, th)) / (2 * h)
    return (fn(u, v + h, th) - fn(u, v - h, th)) / (2 * h)


def _base_partials(fam, u, v, th):
    u, v = np.broadcast_arrays(u, v)
    logc = fam.logpdf(u, v, th)
    dh_du = np.exp(logc)
    if fam.grad_logpdf is not None:
        dl_du, dl_dv, dl_dt = fam.grad_logpdf(u, v, th)
        dh_dv, dh_dt = fam.grad_hfunc(u, v, th)
    else:
        dl_du = _fd_arg(fam.logpdf, u, v, th, 0)
        dl_dv = _fd_arg(fam.logpdf, u, v, th, 1)
        dl_dt = _fd_theta(fam.logpdf, fam, u, v, th)
        dh_dv = _fd_arg(fam.hfunc, u, v, th, 1)
        dh_dt = _fd_theta(fam.hfunc, fam, u, v, th)
    return dl_du, dl_dv, dl_dt, dh_du, dh_dv, dh_dt


def partials(pc, u, v):
    """Partial derivatives of log c and of h(u | v) in u, v and the free parameter.

    The parameter derivative is taken with respect to ``theta[0]`` (the
    correlation for Student-t, whose degrees of freedom stay fixed).
    """
    fam, uu, vv, fu, fv = _prep(pc, u, v)
    dl_du, dl_dv, dl_dt, dh_du, dh_dv, dh_dt = _base_partials(fam, uu, vv, pc.theta)
    su = -1.0 if fu else 1.0
    sv = -1.0 if fv else 1.0
    shape = np.broadcast(uu, vv).shape
    return Partials(
        np.broadcast_to(su * dl_du, shape),
        np.broadcast_to(sv * dl_dv, shape),
        np.broadcast_to(dl_dt, shape),
        np.broadcast_to(dh_du, shape),
        np.broadcast_to(su * sv * dh_dv, shape),
        np.broadcast_to(su * dh_dt, shape),
    )


# ---------------------------------------------------------------------------
# unconstrained parameterization used by the optimizer
# ---------------------------------------------------------------------------


def _softplus(x):
    return float(np.logaddexp(0.0, x))


def _inv_softplus(y):
    return y + math.log(-math.expm1(-y))


def to_free(pc):
    """Unconstrained coordinate of the free parameter (tanh / softplus maps)."""
    fam = pc.family
    t = pc.theta[0]
    if fam in (FamilyTag.GAUSSIAN, FamilyTag.STUDENT_T):
        return math.atanh(t)
    if fam in (FamilyTag.CLAYTON, FamilyTag.FRANK):
        return _inv_softplus(t)
    if fam in (FamilyTag.GUMBEL, FamilyTag.JOE):
        return _inv_softplus(t - 1.0)
    raise DomainError(f"{fam.value} copula has no free parameter")


def from_free(pc, xi):
    fam = pc.family
    if fam in (FamilyTag.GAUSSIAN, FamilyTag.STUDENT_T):
        t = min(max(math.tanh(xi), -RHO_MAX), RHO_MAX)
    elif fam in (FamilyTag.CLAYTON, FamilyTag.FRANK):
        t = _softplus(xi)
    elif fam in (FamilyTag.GUMBEL, FamilyTag.JOE):
        t = 1.0 + _softplus(xi)
    else:
        raise DomainError(f"{fam.value} copula has no free parameter")
    if fam in (FamilyTag.CLAYTON, FamilyTag.FRANK) and t <= 0.0:
        t = np.nextafter(0.0, 1.0)
    if fam is FamilyTag.JOE and t <= 1.0:
        t = np.nextafter(1.0, 2.0)
    return PairCopula(fam, pc.rotation, (t,) + pc.theta[1:])


def dtheta_dfree(pc):
    fam = pc.family
    t = pc.theta[0]
    if fam in (FamilyTag.GAUSSIAN, FamilyTag.STUDENT_T):
        return 1.0 - t * t
    if fam in (FamilyTag.CLAYTON, FamilyTag.FRANK):
        return -math.expm1(-t)
    if fam in (FamilyTag.GUMBEL, FamilyTag.JOE):
        return -math.expm1(-(t - 1.0))
    return 0.0
