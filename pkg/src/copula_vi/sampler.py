"""Inverse-transform sampling from a vine copula and its path derivatives.

Sampling order is found by repeatedly removing a *leaf variable*: one that
appears in no conditioning set and as a conditioned variable of exactly one
edge per level.  Its edges form a chain ``(x, y_1), (x, y_2 | y_1), ...``;
reversing the removal order gives an order in which each new variable is
drawn by inverting that chain of h-functions against already-sampled
variables.  The whole procedure compiles to a tape of h / hinv operations on
slots, executed vectorized over samples and differentiated in forward mode.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import bicop
from .bicop import FamilyTag
from .errors import NumericalError, StructureError
from .vine import SlotBuilder, require_valid

DEGENERATE_DENSITY = 1e-12


class Op(NamedTuple):
    """``slots[out] = f(pc, slots[a], slots[b])`` with f = hfunc or hinv."""
    kind: str  # "h" or "hinv"
    edge: int
    swap: bool
    a: int
    b: int
    out: int


@dataclass(frozen=True)
class SamplingProgram:
    d: int
    order: tuple
    chains: dict
    slot_keys: tuple
    input_slots: tuple
    output_slots: tuple
    ops: tuple
    rosenblatt_ops: tuple
    rosenblatt_slots: tuple
    n_rosenblatt_slots: int

    @property
    def n_slots(self):
        return len(self.slot_keys)

    @property
    def n_hinv(self):
        return sum(op.kind == "hinv" for op in self.ops)

    @property
    def n_h(self):
        return sum(op.kind == "h" for op in self.ops)


def sampling_order(vine):
    """Return ``(order, chains)``; ``chains[x]`` lists x's partners by level."""
    remaining = set(range(vine.d))
    edges = vine.edge_list()
    L = vine.truncation
    peeled = []
    chains = {}
    while len(remaining) > 1:
        live = [e for e in edges if e.constraint <= remaining]
        in_cond = set()
        for e in live:
            in_cond.update(e.cond)
        depth = min(L, len(remaining) - 1)
        chosen = None
        for x in sorted(remaining - in_cond, reverse=True):
            mine = [e for e in live if x in (e.i, e.k)]
            levels = sorted(len(e.cond) for e in mine)
            if levels == list(range(depth)):
                chosen = x
                break
        if chosen is None:
            raise StructureError(f"no leaf variable among {sorted(remaining)}; vine is not regular")
        mine = sorted((e for e in live if chosen in (e.i, e.k)), key=lambda e: len(e.cond))
        chains[chosen] = tuple(e.k if e.i == chosen else e.i for e in mine)
        peeled.append(chosen)
        remaining.discard(chosen)
    last = remaining.pop()
    chains[last] = ()
    return tuple([last] + peeled[::-1]), chains


def compile_program(vine):
    require_valid(vine)
    order, chains = sampling_order(vine)
    sb = SlotBuilder(vine, initial_keys=[])
    ops = []

    def drain():
        ops.extend(Op("h", *hn) for hn in sb.hnodes)
        sb.hnodes.clear()

    inputs = {}
    for x in order:
        ys = chains[x]
        inputs[x] = sb.new_slot((x, frozenset(ys)))
        for j in range(len(ys), 0, -1):
            top = frozenset(ys[:j])
            n, partner, dset, swap = sb.producer(x, top)
            if partner != ys[j - 1] or dset != frozenset(ys[: j - 1]):
                raise StructureError(f"sampling chain of variable {x} is inconsistent at level {j}")
            b = sb.require(partner, dset)
            drain()
            out = sb.new_slot((x, dset))
            ops.append(Op("hinv", n, swap, sb.slot_of[(x, top)], b, out))
    outputs = tuple(sb.slot_of[(x, frozenset())] for x in range(vine.d))

    rb = SlotBuilder(vine)
    r_slots = tuple(rb.require(x, frozenset(chains[x])) for x in range(vine.d))
    return SamplingProgram(
        d=vine.d, order=order, chains=chains, slot_keys=tuple(sb.slot_keys),
        input_slots=tuple(inputs[x] for x in range(vine.d)), output_slots=outputs,
        ops=tuple(ops), rosenblatt_ops=tuple(Op("h", *hn) for hn in rb.hnodes),
        rosenblatt_slots=r_slots, n_rosenblatt_slots=len(rb.slot_keys),
    )


# ---------------------------------------------------------------------------
# random numbers
# ---------------------------------------------------------------------------


def uniforms(seed, n, d, start=0):
    """Uniforms for samples ``start .. start+n-1`` from a counter-based stream.

    Row ``s`` depends only on ``(seed, s)``, so any split of a batch into
    chunks reproduces the same numbers.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    blocks = -(-d // 4)  # Philox emits four 64-bit words per counter step
    bitgen = np.random.Philox(key=int(seed), counter=[start * blocks, 0, 0, 0])
    raw = np.random.Generator(bitgen).random(n * blocks * 4).reshape(n, blocks * 4)
    return bicop.clamp(raw[:, :d])


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------


@dataclass
class SamplePath:
    """Batch of sampled paths; arrays have a leading sample axis."""
    u: np.ndarray
    v: np.ndarray
    z: np.ndarray
    slots: np.ndarray
    program: SamplingProgram
    n_hinv_calls: int
    n_h_calls: int

    @property
    def n(self):
        return self.u.shape[0]


def _edge_pcs(vine):
    edges = vine.edge_list()
    return [e.pc for e in edges], [bicop.swap(e.pc) for e in edges]


def run_copula(vine, program, u):
    """Map independent uniforms ``u`` (n, d) to copula uniforms ``v``."""
    pcs, swapped = _edge_pcs(vine)
    n = u.shape[0]
    slots = np.empty((program.n_slots, n))
    slots[list(program.input_slots)] = u.T
    n_hinv = n_h = 0
    for op in program.ops:
        pc = swapped[op.edge] if op.swap else pcs[op.edge]
        if op.kind == "h":
            slots[op.out] = bicop.hfunc(pc, slots[op.a], slots[op.b])
            n_h += 1
        else:
            try:
                slots[op.out] = bicop.hinv(pc, slots[op.a], slots[op.b])
            except NumericalError as exc:
                raise NumericalError(f"hinv failed on edge {vine.edge_list()[op.edge].label()}: {exc}",
                                     residual=exc.residual, context=op) from exc
            n_hinv += 1
    v = slots[list(program.output_slots)].T.copy()
    return v, slots, n_hinv, n_h


def sample(dist, u):
    """Draw ``z`` from ``dist`` given raw uniforms ``u`` of shape (d,) or (n, d)."""
    u = bicop.clamp(np.atleast_2d(np.asarray(u, dtype=float)))
    if u.shape[1] != dist.d:
        raise ValueError(f"expected {dist.d} uniforms per sample, got {u.shape[1]}")
    v, slots, n_hinv, n_h = run_copula(dist.vine, dist.program, u)
    z = dist.marginals.quantile(v)
    return SamplePath(u, v, z, slots, dist.program, n_hinv, n_h)


def draw(dist, n, seed, start=0):
    return sample(dist, uniforms(seed, n, dist.d, start))


def rosenblatt(vine, program, v):
    """Forward conditional-CDF transform: copula uniforms back to raw uniforms."""
    v = bicop.clamp(np.atleast_2d(np.asarray(v, dtype=float)))
    pcs, swapped = _edge_pcs(vine)
    slots = np.empty((program.n_rosenblatt_slots, v.shape[0]))
    slots[: vine.d] = v.T
    for op in program.rosenblatt_ops:
        pc = swapped[op.edge] if op.swap else pcs[op.edge]
        slots[op.out] = bicop.hfunc(pc, slots[op.a], slots[op.b])
    return slots[list(program.rosenblatt_slots)].T.copy()


# ---------------------------------------------------------------------------
# path derivatives
# ---------------------------------------------------------------------------


def path_grad_lambda(path, dist, compact=False):
    """Jacobian of ``z`` in the marginal parameters at fixed raw uniforms.

    ``v`` does not depend on lambda, so the Jacobian is block diagonal.  With
    ``compact`` the (n, |lambda|) array of nonzero entries is returned, where
    column c belongs to row ``dist.marginals.owner()[c]``; otherwise the dense
    (n, d, |lambda|) array.
    """
    cols = dist.marginals.dquantile_dlambda(path.v)
    if compact:
        return cols
    owner = dist.marginals.owner()
    dense = np.zeros((path.n, dist.d, cols.shape[1]))
    dense[:, owner, np.arange(cols.shape[1])] = cols
    return dense


def dv_dtheta(path, vine):
    """Forward-mode derivative of ``v`` in every edge's natural parameter.

    Returns shape (n, d, n_edges).  hinv outputs are differentiated through
    the implicit relation ``h(out, b) = a``.
    """
    prog = path.program
    pcs, swapped = _edge_pcs(vine)
    n_edges = len(pcs)
    slots = path.slots
    tang = np.zeros((prog.n_slots, path.n, n_edges))
    for op in prog.ops:
        pc = swapped[op.edge] if op.swap else pcs[op.edge]
        if pc.family is FamilyTag.INDEPENDENCE:
            tang[op.out] = tang[op.a]
            continue
        if op.kind == "h":
            p = bicop.partials(pc, slots[op.a], slots[op.b])
            t = p.dh_du[:, None] * tang[op.a] + p.dh_dv[:, None] * tang[op.b]
            t[:, op.edge] += p.dh_dtheta
        else:
            p = bicop.partials(pc, slots[op.out], slots[op.b])
            if np.any(p.dh_du < DEGENERATE_DENSITY):
                bad = int(np.argmin(p.dh_du))
                raise NumericalError(
                    f"degenerate density {p.dh_du[bad]:.3g} inverting edge {vine.edge_list()[op.edge].label()}",
                    residual=float(p.dh_du[bad]), context=op)
            t = tang[op.a] - p.dh_dv[:, None] * tang[op.b]
            t[:, op.edge] -= p.dh_dtheta
            t /= p.dh_du[:, None]
        tang[op.out] = t
    return np.transpose(tang[list(prog.output_slots)], (1, 0, 2))


def path_grad_eta(path, dist):
    """Jacobian of ``z`` in the free copula parameters eta, shape (n, d, |eta|)."""
    dv = dv_dtheta(path, dist.vine)
    free = dist.vine.free_index()
    dv = dv[:, :, free] * dist.vine.dtheta_deta()[None, None, :]
    q = dist.marginals.pdf(path.z)
    return dv / q[:, :, None]
