"""Vine structure and pair-copula family selection from samples.

Trees are chosen level by level as maximum spanning trees under absolute
empirical Kendall's tau, subject to the proximity condition; each selected
edge gets the candidate family with the best BIC, and its h-transformed
pseudo-observations feed the next level.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from . import bicop
from .bicop import FamilyTag, PairCopula, Rotation
from .errors import DomainError, StructureError
from .vine import Vine, VineEdge, require_valid

INDEPENDENCE_Z = 1.645
MIN_OBS = 20
REFINE_HALF_WIDTH = 2.0


def pseudo_obs(x):
    """Column-wise ranks scaled by ``1/(n+1)`` (average ranks for ties)."""
    x = np.asarray(x, dtype=float)
    x2 = x[:, None] if x.ndim == 1 else x
    out = stats.rankdata(x2, axis=0) / (x2.shape[0] + 1.0)
    return out[:, 0] if x.ndim == 1 else out


def kendall_tau(x, y):
    """Kendall's tau-b; raises :class:`DomainError` for constant input."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size or x.size < 2:
        raise DomainError("kendall_tau needs two vectors of equal length >= 2")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DomainError("Kendall's tau is undefined for a constant column")
    return float(stats.kendalltau(x, y).statistic)


def max_spanning_tree(n_nodes, weights):
    """Kruskal on ``{(a, b): w}`` with ties broken by lexicographic pair order.

    Returns a sorted list of ``(a, b)`` with ``a < b``.
    """
    parent = list(range(n_nodes))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    chosen = []
    order = sorted(((min(a, b), max(a, b)), w) for (a, b), w in weights.items())
    for (a, b), _ in sorted(order, key=lambda item: (-item[1], item[0])):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
            chosen.append((a, b))
    if len(chosen) != n_nodes - 1:
        raise StructureError(f"allowed graph on {n_nodes} nodes is disconnected")
    return sorted(chosen)


def select_tree(pobs, allowed=None):
    """Maximum spanning tree over the columns of ``pobs`` under |tau|.

    ``allowed`` restricts candidate pairs (default: complete graph).  Returns
    ``[(a, b, tau_ab), ...]``.
    """
    pobs = np.asarray(pobs, dtype=float)
    d = pobs.shape[1]
    pairs = allowed if allowed is not None else itertools.combinations(range(d), 2)
    taus = {(min(a, b), max(a, b)): kendall_tau(pobs[:, a], pobs[:, b]) for a, b in pairs}
    tree = max_spanning_tree(d, {p: abs(t) for p, t in taus.items()})
    return [(a, b, taus[(a, b)]) for a, b in tree]


# ---------------------------------------------------------------------------
# family selection
# ---------------------------------------------------------------------------


@dataclass
class FamilySelection:
    pc: PairCopula
    tau: float
    independent: bool = False
    fallback: bool = False
    scores: dict = field(default_factory=dict)


def _loglik(pc, u, v):
    val = float(np.sum(bicop.log_density(pc, u, v)))
    return val if math.isfinite(val) else -math.inf


def _n_params(pc):
    # nu is chosen from a grid, so it counts as an estimated parameter
    return len(pc.theta)


def _refine(pc, u, v):
    """Bounded scalar likelihood maximization around the tau-inversion start."""
    start = _loglik(pc, u, v)
    xi0 = bicop.to_free(pc)

    def neg(xi):
        ll = _loglik(bicop.from_free(pc, xi), u, v)
        return 1e300 if not math.isfinite(ll) else -ll

    try:
        res = optimize.minimize_scalar(neg, bounds=(xi0 - REFINE_HALF_WIDTH, xi0 + REFINE_HALF_WIDTH),
                                       method="bounded", options={"xatol": 1e-6})
        cand = bicop.from_free(pc, float(res.x))
        ll = _loglik(cand, u, v)
    except (ArithmeticError, ValueError):
        return pc, start
    return (cand, ll) if ll > start else (pc, start)


def default_candidates():
    return all_family_rotations(include_independence=False)


def all_family_rotations(include_independence=True):
    out = list(bicop.all_family_rotations())
    if not include_independence:
        out = [fr for fr in out if fr[0] is not FamilyTag.INDEPENDENCE]
    return out


def fit_family(edge_pobs, candidates=None, indep_z=INDEPENDENCE_Z, nu_grid=bicop.STUDENT_NU_GRID):
    """Score candidate families on an ``n x 2`` sample; see :func:`select_family`."""
    edge_pobs = np.asarray(edge_pobs, dtype=float)
    n = edge_pobs.shape[0]
    if n < MIN_OBS:
        raise DomainError(f"family selection needs at least {MIN_OBS} observations, got {n}")
    u, v = bicop.clamp(edge_pobs[:, 0]), bicop.clamp(edge_pobs[:, 1])
    tau = kendall_tau(u, v)
    if abs(tau) * math.sqrt(9.0 * n / 4.0) < indep_z:
        return FamilySelection(PairCopula(), tau, independent=True)
    candidates = default_candidates() if candidates is None else candidates
    scores = {}
    best, best_score = None, -math.inf
    for fam, rot in candidates:
        fam, rot = FamilyTag(fam), Rotation(int(rot))
        nus = nu_grid if fam is FamilyTag.STUDENT_T else (8.0,)
        for nu in nus:
            try:
                pc = PairCopula(fam, rot, bicop.theta_from_tau(fam, tau, rot, nu=nu))
            except DomainError:
                continue
            if fam is not FamilyTag.INDEPENDENCE:
                pc, ll = _refine(pc, u, v)
            else:
                ll = 0.0
            score = ll - _n_params(pc) * math.log(n) / 2.0
            scores[str(pc)] = score
            if score > best_score:
                best, best_score = pc, score
    if best is None:
        return FamilySelection(PairCopula(), tau, fallback=True, scores=scores)
    return FamilySelection(best, tau, scores=scores)


def select_family(edge_pobs, candidates=None, indep_z=INDEPENDENCE_Z):
    """Best pair copula for ``edge_pobs`` by BIC after tau-inversion fits.

    Independence is returned outright when ``|tau| * sqrt(9n/4)`` falls below
    ``indep_z``, and (with a warning) when no candidate can attain the sign
    of the empirical tau.
    """
    sel = fit_family(edge_pobs, candidates, indep_z)
    if sel.fallback:
        warnings.warn(f"no candidate family can attain tau={sel.tau:+.3f}; using independence", RuntimeWarning)
    return sel.pc


# ---------------------------------------------------------------------------
# sequential construction
# ---------------------------------------------------------------------------


@dataclass
class _Node:
    conditioned: tuple
    cond: frozenset
    ends: tuple
    data: dict  # variable x -> u_{x | constraint minus x}

    @property
    def constraint(self):
        return frozenset(self.conditioned) | self.cond


def build_vine(pobs, candidates=None, truncation=None, indep_z=INDEPENDENCE_Z):
    """Sequentially selected regular vine on the columns of ``pobs``."""
    pobs = np.asarray(pobs, dtype=float)
    n, d = pobs.shape
    if d < 2 or n < MIN_OBS:
        raise DomainError(f"build_vine needs d >= 2 and n >= {MIN_OBS}, got d={d}, n={n}")
    L = d - 1 if truncation is None else max(0, min(int(truncation), d - 1))
    pobs = bicop.clamp(pobs)

    trees = []
    nodes = None
    for level in range(1, L + 1):
        if level == 1:
            tree = select_tree(pobs)
            specs = [(a, b, (a, b), frozenset(), pobs[:, a], pobs[:, b]) for a, b, _ in tree]
        else:
            cand = {}
            for p, q in itertools.combinations(range(len(nodes)), 2):
                if set(nodes[p].ends) & set(nodes[q].ends):
                    cand[(p, q)] = _join(nodes[p], nodes[q])
            weights = {pq: abs(kendall_tau(c[2], c[3])) for pq, c in cand.items()}
            tree = max_spanning_tree(len(nodes), weights)
            specs = []
            for p, q in tree:
                (x, y), cond, ux, uy = cand[(p, q)]
                specs.append((x, y, (p, q), cond, ux, uy))
        edges, new_nodes = [], []
        for x, y, ends, cond, ux, uy in specs:
            if x > y:
                x, y, ux, uy = y, x, uy, ux
            pc = fit_family(np.column_stack([ux, uy]), candidates, indep_z).pc
            edges.append(VineEdge(x, y, tuple(sorted(cond)), pc))
            data = {x: bicop.hfunc(pc, ux, uy), y: bicop.hfunc(bicop.swap(pc), uy, ux)}
            new_nodes.append(_Node((x, y), cond, ends, data))
        trees.append(edges)
        nodes = new_nodes
    return require_valid(Vine(d, trees))


def _join(a, b):
    shared = a.constraint & b.constraint
    (x,) = a.constraint - shared
    (y,) = b.constraint - shared
    return (x, y), shared, a.data[x], b.data[y]


# ---------------------------------------------------------------------------
# exhaustive enumeration (small d)
# ---------------------------------------------------------------------------


def _spanning_subsets(n_nodes, pairs):
    for subset in itertools.combinations(pairs, n_nodes - 1):
        try:
            max_spanning_tree(n_nodes, {p: 0.0 for p in subset})
        except StructureError:
            continue
        yield subset


def enumerate_vines(d):
    """All regular-vine structures on ``d`` labeled variables.

    Each structure is a tuple of levels; a level is a tuple of
    ``(i, k, cond)`` with ``i < k``.  Exponential; intended for ``d <= 5``.
    """
    out = []

    def extend(levels, nodes):
        if len(levels) == d - 1:
            out.append(tuple(levels))
            return
        pairs = [(p, q) for p, q in itertools.combinations(range(len(nodes)), 2)
                 if set(nodes[p][2]) & set(nodes[q][2])]
        for subset in _spanning_subsets(len(nodes), pairs):
            level, new_nodes = [], []
            for p, q in subset:
                cp, cq = nodes[p][0], nodes[q][0]
                shared = cp & cq
                (x,) = cp - shared
                (y,) = cq - shared
                i, k = min(x, y), max(x, y)
                level.append((i, k, tuple(sorted(shared))))
                new_nodes.append((cp | cq, None, (p, q)))
            extend(levels + [tuple(level)], new_nodes)

    first = list(itertools.combinations(range(d), 2))
    for subset in _spanning_subsets(d, first):
        nodes = [(frozenset((a, b)), None, (a, b)) for a, b in subset]
        extend([tuple((a, b, ()) for a, b in subset)], nodes)
    return out
