"""Alternating stochastic optimization of marginal and copula parameters.

Phases alternate between the marginal block lambda (copula fixed) and the
copula block eta (marginals fixed), starting with lambda.  Each phase runs
stochastic gradient ascent until an exponential moving average of the
gradient is small or the iteration budget is spent.  Progress is measured on
a fixed-seed, large-sample ELBO so the outer stopping rule is deterministic.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import bicop
from .bicop import FamilyTag, PairCopula, Rotation
from .errors import DomainError, OptimizationError
from .grad import ESTIMATORS, elbo


@dataclass(frozen=True)
class Adam:
    alpha: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class RobbinsMonro:
    """Step ``a / (b + t)**gamma``; gamma in (0.5, 1] keeps sum rho = inf, sum rho^2 < inf."""

    a: float = 0.1
    b: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        if not 0.5 < self.gamma <= 1.0:
            raise DomainError(f"Robbins-Monro exponent must lie in (0.5, 1], got {self.gamma}")
        if self.a <= 0 or self.b < 0:
            raise DomainError("Robbins-Monro needs a > 0 and b >= 0")

    def rate(self, t):
        return self.a / (self.b + t) ** self.gamma


def step_size(rule, t, grad, state=None):
    """Ascent increment for iteration ``t >= 1``; returns ``(step, state)``."""
    if t < 1:
        raise ValueError("iterations are counted from 1")
    grad = np.asarray(grad, dtype=float)
    if isinstance(rule, RobbinsMonro):
        return rule.rate(t) * grad, state
    if state is None:
        state = (np.zeros_like(grad), np.zeros_like(grad))
    m, v = state
    m = rule.beta1 * m + (1.0 - rule.beta1) * grad
    v = rule.beta2 * v + (1.0 - rule.beta2) * grad * grad
    m_hat = m / (1.0 - rule.beta1 ** t)
    v_hat = v / (1.0 - rule.beta2 ** t)
    return rule.alpha * m_hat / (np.sqrt(v_hat) + rule.eps), (m, v)


def rule_to_dict(rule):
    kind = "adam" if isinstance(rule, Adam) else "robbins_monro"
    return {"kind": kind, **asdict(rule)}


def rule_from_dict(data):
    data = dict(data)
    kind = data.pop("kind", "adam")
    if kind == "adam":
        return Adam(**data)
    if kind in ("robbins_monro", "robbinsmonro", "rm"):
        return RobbinsMonro(**data)
    raise DomainError(f"unknown step rule {kind!r}")


@dataclass(frozen=True)
class CviConfig:
    estimator: str = "reparam"
    m: int = 1024
    inner_tol: float = 1e-3
    inner_max_iters: int = 2000
    outer_tol_elbo: float = 0.01
    outer_max_phases: int = 20
    step_rule: object = field(default_factory=Adam)
    seed: int = 0
    m_eval: int = 100_000
    eval_seed: int = 12345
    ema_decay: float = 0.9
    clip_norm: float = 1e3
    init_independence: bool = True
    tau0: float = 0.01

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise DomainError(f"estimator must be one of {sorted(ESTIMATORS)}, got {self.estimator!r}")
        if self.m < 1 or self.inner_max_iters < 0 or self.outer_max_phases < 1 or self.m_eval < 2:
            raise DomainError("m, m_eval, inner_max_iters and outer_max_phases must be positive")
        if self.estimator == "score" and self.m < 2:
            raise DomainError("the score-function estimator needs m >= 2")

    def to_dict(self):
        out = asdict(self)
        out["step_rule"] = rule_to_dict(self.step_rule)
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise DomainError(f"unknown config fields: {sorted(unknown)}")
        if "step_rule" in data and isinstance(data["step_rule"], dict):
            data["step_rule"] = rule_from_dict(data["step_rule"])
        return cls(**data)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class PhaseRecord:
    phase: int
    kind: str
    iters: int
    elbo_before: float
    elbo_after: float
    elbo_se: float
    seconds: float


@dataclass
class FitTrace:
    records: list = field(default_factory=list)
    converged: bool = False

    def __len__(self):
        return len(self.records)

    @property
    def final_elbo(self):
        return self.records[-1].elbo_after if self.records else float("nan")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["phase", "kind", "iters", "elbo_before", "elbo_after", "seconds"])
            for r in self.records:
                w.writerow([r.phase, r.kind, r.iters, repr(r.elbo_before), repr(r.elbo_after), f"{r.seconds:.3f}"])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([PhaseRecord(int(r["phase"]), r["kind"], int(r["iters"]), float(r["elbo_before"]),
                                float(r["elbo_after"]), float("nan"), float(r["seconds"])) for r in rows])


def _starting_pc(pc, tau0):
    """Near-independence interior point of the configured family."""
    if pc.family is FamilyTag.INDEPENDENCE:
        return pc
    tau = -tau0 if pc.rotation in (Rotation.R90, Rotation.R270) else tau0
    nu = pc.theta[1] if pc.family is FamilyTag.STUDENT_T else 8.0
    return PairCopula(pc.family, pc.rotation, bicop.theta_from_tau(pc.family, tau, pc.rotation, nu=nu))


def _to_independence(vine):
    return vine.with_edges(e if e.frozen else replace(e, pc=PairCopula()) for e in vine.edge_list())


def _activate(vine, configured, tau0):
    return vine.with_edges(
        e if e.frozen else replace(e, pc=_starting_pc(c.pc, tau0))
        for e, c in zip(vine.edge_list(), configured.edge_list())
    )


def _measure(dist, model, cfg):
    est = elbo(dist, model, cfg.m_eval, cfg.eval_seed)
    return est.elbo, est.elbo_std_err


def run_phase(dist, model, cfg, kind, phase, iter_offset=0, callback=None):
    """Optimize one parameter block; returns ``(dist, iterations)``."""
    estimator = ESTIMATORS[cfg.estimator]
    get = (lambda q: q.lam) if kind == "lambda" else (lambda q: q.eta)
    put = (lambda q, x: q.with_lambda(x)) if kind == "lambda" else (lambda q, x: q.with_eta(x))
    params = get(dist)
    if params.size == 0:
        return dist, 0
    state = None
    ema = np.zeros_like(params)
    iters = 0
    for t in range(1, cfg.inner_max_iters + 1):
        seed = cfg.seed + ((iter_offset + t) << 32)
        kwargs = {"blocks": (kind,)} if cfg.estimator == "reparam" else {}
        try:
            est = estimator(dist, model, cfg.m, seed, **kwargs)
        except (ArithmeticError, ValueError, FloatingPointError) as exc:
            err = OptimizationError(f"gradient evaluation failed: {exc}", phase, t)
            err.dist = dist
            raise err from exc
        g = est.grad_lambda if kind == "lambda" else est.grad_eta
        if not (np.all(np.isfinite(g)) and math.isfinite(est.elbo)):
            err = OptimizationError("non-finite ELBO or gradient", phase, t)
            err.dist = dist
            raise err
        norm = np.linalg.norm(g)
        if norm > cfg.clip_norm:
            g = g * (cfg.clip_norm / norm)
        step, state = step_size(cfg.step_rule, t, g, state)
        new = params + step
        if not np.all(np.isfinite(new)):
            err = OptimizationError("non-finite parameters", phase, t)
            err.dist = dist
            raise err
        params = new
        dist = put(dist, params)
        iters = t
        if callback is not None:
            callback(phase, t, dist)
        ema = cfg.ema_decay * ema + (1.0 - cfg.ema_decay) * g
        if np.linalg.norm(ema / (1.0 - cfg.ema_decay ** t)) < cfg.inner_tol:
            break
    return dist, iters


def fit(dist0, model, cfg=None, callback=None, on_phase=None):
    """Run alternating lambda / eta phases; returns ``(dist, FitTrace)``.

    When ``cfg.init_independence`` is set, every non-frozen pair copula starts
    as the independence copula and is switched to its configured family at a
    near-independence parameter (Kendall tau = +-tau0) when the first eta
    phase begins.  ``callback(phase, iteration, dist)`` runs after every
    step and ``on_phase(record, dist)`` after every completed phase.
    """
    cfg = cfg or CviConfig()
    if model.dim != dist0.d:
        raise DomainError(f"model dimension {model.dim} does not match distribution dimension {dist0.d}")
    configured = dist0.vine
    dist = dist0.with_vine(_to_independence(configured)) if cfg.init_independence else dist0
    activated = not cfg.init_independence
    trace = FitTrace()
    current, _ = _measure(dist, model, cfg)
    cycle_start = current
    offset = 0
    for phase in range(1, cfg.outer_max_phases + 1):
        kind = "lambda" if phase % 2 == 1 else "eta"
        t0 = time.perf_counter()
        if kind == "eta" and not activated:
            dist = dist.with_vine(_activate(dist.vine, configured, cfg.tau0))
            activated = True
            current, _ = _measure(dist, model, cfg)
        before = current
        dist, iters = run_phase(dist, model, cfg, kind, phase, offset, callback)
        offset += cfg.inner_max_iters
        after, se = _measure(dist, model, cfg)
        if not math.isfinite(after):
            err = OptimizationError("non-finite evaluation ELBO", phase, iters)
            err.dist = dist
            raise err
        trace.records.append(PhaseRecord(phase, kind, iters, before, after, se, time.perf_counter() - t0))
        if on_phase is not None:
            on_phase(trace.records[-1], dist)
        current = after
        if kind == "eta":
            if after - cycle_start < cfg.outer_tol_elbo:
                trace.converged = True
                break
            cycle_start = after
    return dist, trace
