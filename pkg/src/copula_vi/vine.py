"""Regular vines stored as explicit nested edge lists.

A vine on ``d`` variables holds trees ``T_1 .. T_L`` (``L <= d - 1``); levels
beyond ``L`` are implicitly the independence copula.  Variable indices are
0-based.  Every conditional argument ``u_{x|D}`` that a pair copula needs is
identified by a *slot key* ``(x, frozenset(D))``; the compiled
:class:`EvalPlan` lists the h-function applications that produce these slots
from the raw inputs, in dependency order, so shared arguments are computed
once per evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import bicop
from .bicop import FamilyTag, PairCopula
from .errors import StructureError


@dataclass(frozen=True)
class VineEdge:
    i: int
    k: int
    cond: tuple = ()
    pc: PairCopula = field(default_factory=PairCopula)
    frozen: bool = False

    def __post_init__(self):
        object.__setattr__(self, "i", int(self.i))
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "cond", tuple(sorted(int(c) for c in self.cond)))

    @property
    def constraint(self):
        return frozenset((self.i, self.k, *self.cond))

    @property
    def pair(self):
        return frozenset((self.i, self.k))

    @property
    def is_free(self):
        return not self.frozen and self.pc.n_free > 0

    def label(self):
        base = f"{self.i},{self.k}"
        return base + ("|" + ",".join(map(str, self.cond)) if self.cond else "")

    def to_dict(self):
        return {"i": self.i, "k": self.k, "cond": list(self.cond), "pc": self.pc.to_dict(), "frozen": self.frozen}

    @classmethod
    def from_dict(cls, data):
        return cls(data["i"], data["k"], tuple(data.get("cond", ())),
                   PairCopula.from_dict(data["pc"]), bool(data.get("frozen", False)))


@dataclass(frozen=True)
class Vine:
    d: int
    trees: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(tuple(level) for level in self.trees))

    @property
    def truncation(self):
        return len(self.trees)

    @property
    def n_edges(self):
        return sum(len(t) for t in self.trees)

    def edges(self):
        """Yield ``(level, position, edge)`` with 1-based levels, level-major."""
        for j, level in enumerate(self.trees, start=1):
            for p, e in enumerate(level):
                yield j, p, e

    def edge_list(self):
        return [e for _, _, e in self.edges()]

    def edge(self, level, pos):
        return self.trees[level - 1][pos]

    def with_edges(self, edges):
        """Rebuild with a flat, level-major replacement edge list."""
        it = iter(edges)
        return Vine(self.d, [[next(it) for _ in level] for level in self.trees])

    def with_pair_copulas(self, pcs):
        return self.with_edges(replace(e, pc=pc) for e, pc in zip(self.edge_list(), pcs))

    def truncate(self, level):
        return Vine(self.d, self.trees[:level])

    # -- free-parameter (eta) view -------------------------------------
    def free_index(self):
        """Flat edge indices of edges whose parameter is optimized."""
        return [n for n, e in enumerate(self.edge_list()) if e.is_free]

    @property
    def n_free(self):
        return len(self.free_index())

    @property
    def eta(self):
        edges = self.edge_list()
        return np.array([bicop.to_free(edges[n].pc) for n in self.free_index()])

    def with_eta(self, eta):
        edges = self.edge_list()
        idx = self.free_index()
        eta = np.asarray(eta, dtype=float)
        if eta.shape != (len(idx),):
            raise ValueError(f"eta must have shape ({len(idx)},), got {eta.shape}")
        for n, xi in zip(idx, eta):
            edges[n] = replace(edges[n], pc=bicop.from_free(edges[n].pc, float(xi)))
        return self.with_edges(edges)

    def dtheta_deta(self):
        edges = self.edge_list()
        return np.array([bicop.dtheta_dfree(edges[n].pc) for n in self.free_index()])

    # -- serialization ---------------------------------------------------
    def to_dict(self):
        return {"d": self.d, "truncation": self.truncation,
                "trees": [[e.to_dict() for e in level] for level in self.trees]}

    @classmethod
    def from_dict(cls, data):
        trees = [[VineEdge.from_dict(e) for e in level] for level in data["trees"]]
        v = cls(int(data["d"]), trees)
        if "truncation" in data and int(data["truncation"]) != v.truncation:
            raise StructureError(f"truncation {data['truncation']} does not match {v.truncation} stored levels")
        return v

    def __str__(self):
        rows = []
        for j, level in enumerate(self.trees, start=1):
            rows.append(f"T{j}: " + "  ".join(f"{e.label()}~{e.pc}" for e in level))
        return "\n".join(rows) if rows else f"<independence vine, d={self.d}>"


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------


def _pc_iter(pcs, n):
    if pcs is None:
        return [PairCopula()] * n
    if isinstance(pcs, PairCopula):
        return [pcs] * n
    pcs = list(pcs)
    if len(pcs) != n:
        raise ValueError(f"expected {n} pair copulas, got {len(pcs)}")
    return pcs


def dvine(d, pcs=None, truncation=None):
    """D-vine along the path 0-1-...-(d-1)."""
    L = d - 1 if truncation is None else min(truncation, d - 1)
    specs = [(t, t + j, tuple(range(t + 1, t + j))) for j in range(1, L + 1) for t in range(d - j)]
    pcs = iter(_pc_iter(pcs, len(specs)))
    trees = [[] for _ in range(L)]
    for i, k, cond in specs:
        trees[len(cond)].append(VineEdge(i, k, cond, next(pcs)))
    return Vine(d, trees)


def cvine(d, pcs=None, truncation=None):
    """C-vine with roots 0, 1, ... at successive levels."""
    L = d - 1 if truncation is None else min(truncation, d - 1)
    specs = [(j - 1, t, tuple(range(j - 1))) for j in range(1, L + 1) for t in range(j, d)]
    pcs = iter(_pc_iter(pcs, len(specs)))
    trees = [[] for _ in range(L)]
    for i, k, cond in specs:
        trees[len(cond)].append(VineEdge(i, k, cond, next(pcs)))
    return Vine(d, trees)


def independence_vine(d, truncation=0):
    return dvine(d, truncation=truncation) if truncation else Vine(d, [])


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


class Violation(NamedTuple):
    level: int
    edge: str
    kind: str
    message: str


class _DSU:
    def __init__(self, n):
        self.p = list(range(n))

    def find(self, x):
        while self.p[x] != x:
            self.p[x] = self.p[self.p[x]]
            x = self.p[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.p[max(ra, rb)] = min(ra, rb)
        return True


def _endpoints(level_edges, prev_index):
    """Endpoints of each edge as node ids of its own tree (None if unresolved)."""
    out = []
    for e in level_edges:
        if not e.cond:
            out.append((e.i, e.k))
            continue
        d_set = frozenset(e.cond)
        a = prev_index.get(d_set | {e.i})
        b = prev_index.get(d_set | {e.k})
        out.append(None if a is None or b is None else (a, b))
    return out


def validate(vine):
    """Check the regular-vine tree properties.

    Returns a list of :class:`Violation`; an empty list means the vine is
    valid.  Checked: edge counts per level (``d - j`` edges on ``d + 1 - j``
    nodes), edges of ``T_j`` being nodes of ``T_{j+1}``, the proximity
    condition, conditioning-set sizes and the spanning-tree property.
    """
    d = vine.d
    out = []
    if d < 1:
        return [Violation(0, "", "dimension", f"d must be >= 1, got {d}")]
    if vine.truncation > d - 1:
        out.append(Violation(vine.truncation, "", "truncation",
                             f"{vine.truncation} levels exceed the maximum d-1={d - 1}"))
    prev_index = {}
    prev_ends = None
    for j, level in enumerate(vine.trees, start=1):
        if len(level) != d - j:
            out.append(Violation(j, "", "edge-count", f"level {j} has {len(level)} edges, expected {d - j}"))
        index = {}
        for e in level:
            lab = e.label()
            members = (e.i, e.k, *e.cond)
            if any(not 0 <= m < d for m in members):
                out.append(Violation(j, lab, "index", f"edge {lab} references a variable outside 0..{d - 1}"))
                continue
            if e.i == e.k or e.i in e.cond or e.k in e.cond or len(set(e.cond)) != len(e.cond):
                out.append(Violation(j, lab, "conditioning", f"edge {lab} has overlapping conditioned/conditioning sets"))
                continue
            if len(e.cond) != j - 1:
                out.append(Violation(j, lab, "conditioning",
                                     f"edge {lab} at level {j} needs |D(e)|={j - 1}, has {len(e.cond)}"))
                continue
            if e.constraint in index:
                out.append(Violation(j, lab, "duplicate", f"edge {lab} repeats a constraint set at level {j}"))
                continue
            index[e.constraint] = len(index)
        if len(index) != len(level):
            prev_index, prev_ends = {}, None
            continue

        n_nodes = d if j == 1 else len(vine.trees[j - 2])
        ends = _endpoints(level, prev_index)
        dsu = _DSU(n_nodes)
        for e, ep in zip(level, ends):
            lab = e.label()
            if ep is None:
                out.append(Violation(j, lab, "proximity",
                                     f"edge {lab} does not join two level-{j - 1} edges sharing a node"))
                continue
            a, b = ep
            if j > 1:
                if prev_ends is None or prev_ends[a] is None or prev_ends[b] is None \
                        or not set(prev_ends[a]) & set(prev_ends[b]):
                    out.append(Violation(j, lab, "proximity",
                                         f"edge {lab} joins level-{j - 1} edges that share no node"))
                    continue
            if not dsu.union(a, b):
                out.append(Violation(j, lab, "tree", f"edge {lab} closes a cycle in tree T{j}"))
        prev_index = index
        prev_ends = ends
    return out


def is_valid(vine):
    return not validate(vine)


def require_valid(vine):
    problems = validate(vine)
    if problems:
        raise StructureError("invalid vine: " + "; ".join(f"T{v.level} {v.edge}: {v.message}" for v in problems))
    return vine


# ---------------------------------------------------------------------------
# evaluation plan
# ---------------------------------------------------------------------------


class HNode(NamedTuple):
    """``slots[out] = hfunc(pc, slots[a], slots[b])``; pc is the edge copula,
    argument-swapped when ``swap`` is set."""
    edge: int  # flat level-major edge index
    swap: bool
    a: int
    b: int
    out: int


class DensityTerm(NamedTuple):
    edge: int
    a: int
    b: int


@dataclass(frozen=True)
class EvalPlan:
    d: int
    slot_keys: tuple
    hnodes: tuple
    terms: tuple

    @property
    def n_slots(self):
        return len(self.slot_keys)


class SlotBuilder:
    """Resolves conditional-argument slots to producing h-function nodes.

    Shared by the density plan and the sampling program.  ``emit`` receives
    each new :class:`HNode` in dependency order.
    """

    def __init__(self, vine, initial_keys=None):
        self.vine = vine
        self.edges = vine.edge_list()
        self.by_constraint = {}
        for n, e in enumerate(self.edges):
            self.by_constraint[e.constraint] = n
        keys = initial_keys if initial_keys is not None else [(x, frozenset()) for x in range(vine.d)]
        self.slot_keys = list(keys)
        self.slot_of = {k: s for s, k in enumerate(self.slot_keys)}
        self.hnodes = []

    def new_slot(self, key):
        if key in self.slot_of:
            return self.slot_of[key]
        self.slot_keys.append(key)
        self.slot_of[key] = len(self.slot_keys) - 1
        return self.slot_of[key]

    def producer(self, x, cond):
        """Edge producing ``u_{x|cond}`` and the partner/conditioning of its inputs."""
        n = self.by_constraint.get(cond | {x})
        if n is None or len(cond) == 0:
            raise StructureError(f"no edge produces u_{x}|{sorted(cond)}")
        e = self.edges[n]
        if x not in (e.i, e.k):
            raise StructureError(f"variable {x} is not conditioned on edge {e.label()}")
        partner = e.k if x == e.i else e.i
        return n, partner, frozenset(e.cond), x != e.i

    def require(self, x, cond):
        key = (x, frozenset(cond))
        if key in self.slot_of:
            return self.slot_of[key]
        n, partner, dset, swap = self.producer(x, key[1])
        a = self.require(x, dset)
        b = self.require(partner, dset)
        out = self.new_slot(key)
        self.hnodes.append(HNode(n, swap, a, b, out))
        return out


def compile_plan(vine):
    """Compile the density-evaluation plan (deterministic for a given structure)."""
    require_valid(vine)
    sb = SlotBuilder(vine)
    terms = []
    for n, e in enumerate(sb.edges):
        dset = frozenset(e.cond)
        terms.append(DensityTerm(n, sb.require(e.i, dset), sb.require(e.k, dset)))
    return EvalPlan(vine.d, tuple(sb.slot_keys), tuple(sb.hnodes), tuple(terms))


def _pcs(vine):
    edges = vine.edge_list()
    return [e.pc for e in edges], [bicop.swap(e.pc) for e in edges]


def _as_batch(u, d):
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    if u.shape[1] != d:
        raise ValueError(f"expected {d} columns, got {u.shape[1]}")
    return bicop.clamp(u), single


def _forward(vine, plan, u):
    pcs, swapped = _pcs(vine)
    slots = np.empty((plan.n_slots, u.shape[0]))
    slots[: plan.d] = u.T
    for hn in plan.hnodes:
        pc = swapped[hn.edge] if hn.swap else pcs[hn.edge]
        slots[hn.out] = bicop.hfunc(pc, slots[hn.a], slots[hn.b])
    return slots, pcs, swapped


def log_copula_density(vine, plan, u):
    """Log vine-copula density at ``u`` (shape ``(d,)`` or ``(n, d)``)."""
    u, single = _as_batch(u, vine.d)
    slots, pcs, _ = _forward(vine, plan, u)
    total = np.zeros(u.shape[0])
    for t in plan.terms:
        if pcs[t.edge].family is not FamilyTag.INDEPENDENCE:
            total += bicop.log_density(pcs[t.edge], slots[t.a], slots[t.b])
    return total[0] if single else total


def grad_log_copula_density(vine, plan, u):
    """Log density with its gradient in ``u`` and in every edge parameter.

    Returns ``(logc, d_du, d_dtheta)`` with shapes ``(n,)``, ``(n, d)`` and
    ``(n, n_edges)``; the parameter gradient is in the natural parameter
    ``theta[0]`` of each edge and includes contributions flowing through
    higher-level conditional arguments.
    """
    u, single = _as_batch(u, vine.d)
    n = u.shape[0]
    slots, pcs, swapped = _forward(vine, plan, u)
    adj = np.zeros_like(slots)
    dth = np.zeros((n, len(pcs)))
    total = np.zeros(n)
    for t in plan.terms:
        pc = pcs[t.edge]
        if pc.family is FamilyTag.INDEPENDENCE:
            continue
        total += bicop.log_density(pc, slots[t.a], slots[t.b])
        p = bicop.partials(pc, slots[t.a], slots[t.b])
        adj[t.a] += p.d_logc_du
        adj[t.b] += p.d_logc_dv
        dth[:, t.edge] += p.d_logc_dtheta
    for hn in reversed(plan.hnodes):
        g = adj[hn.out]
        pc = swapped[hn.edge] if hn.swap else pcs[hn.edge]
        if pc.family is FamilyTag.INDEPENDENCE:
            adj[hn.a] += g
            continue
        if not np.any(g):
            continue
        p = bicop.partials(pc, slots[hn.a], slots[hn.b])
        adj[hn.a] += g * p.dh_du
        adj[hn.b] += g * p.dh_dv
        dth[:, hn.edge] += g * p.dh_dtheta
    du = adj[: vine.d].T.copy()
    if single:
        return total[0], du[0], dth[0]
    return total, du, dth


def pin_independence(vine, pairs):
    """Replace the copulas on the given conditioned pairs with frozen independence."""
    wanted = {frozenset(p) for p in pairs}
    edges = vine.edge_list()
    present = {e.pair for e in edges}
    missing = wanted - present
    if missing:
        raise LookupError(f"pairs {sorted(tuple(sorted(m)) for m in missing)} are not vine edges")
    new = [replace(e, pc=PairCopula(), frozen=True) if e.pair in wanted else e for e in edges]
    return vine.with_edges(new)
