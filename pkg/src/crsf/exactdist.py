"""Brute-force oracles.

Exact branch laws come from the absorbing chain whose states are the current
loop-erased path of the walk; exact CRSF laws come from enumerating every
out-edge assignment of a tiny graph.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .surface import (GraphError, check_forest, dual_complement_cycles, is_temperleyan,
                      skeleton_of)
from .walk import StopSpec

DEFAULT_CAP = 10**6


class StateCapExceeded(RuntimeError):
    def __init__(self, count, cap, what="states"):
        super().__init__(f"{what}: {count} exceeds cap {cap}")
        self.count = count
        self.cap = cap


@dataclass
class BranchDistribution:
    start: int
    probs: dict  # edge tuple -> probability
    reasons: dict = field(default_factory=dict)
    states: int = 0

    def total(self):
        return float(sum(self.probs.values()))

    def __getitem__(self, branch):
        return self.probs.get(tuple(branch), 0.0)

    def __len__(self):
        return len(self.probs)

    def items(self):
        return self.probs.items()


def _path_info(graph, start, edges):
    g = graph.group
    vs, ws = [start], [g.identity]
    for e in edges:
        vs.append(graph.head[e])
        ws.append(g.compose(ws[-1], graph.label[e]))
    return vs, ws


@dataclass
class SAPChain:
    """Transient part ``Q`` and terminal rates ``R`` of the loop-erased-path chain."""

    graph: object
    start: int
    states: list
    index: dict
    Q: object
    R: object
    terminals: list
    reasons: list

    def visits(self, init=None):
        """Expected visits to every state, from one sparse LU solve."""
        n = len(self.states)
        A = (sp.identity(n, format="csc") - self.Q.T.tocsc()).tocsc()
        b = np.zeros(n)
        if init is None:
            b[0] = 1.0
        else:
            for s, w in init.items():
                b[self.index[s]] += w
        lu = splu(A)
        x = lu.solve(b)
        # one step of refinement
        r = b - A @ x
        x += lu.solve(r)
        return x


def build_sap_chain(graph, start, stop: StopSpec = None, cap=DEFAULT_CAP, root_kill=False):
    """Enumerate loop-erased-path states reachable from ``start``.

    With ``root_kill`` the walk is killed the moment it erases back to the
    one-vertex state (used for first-return solves); such transitions go to a
    terminal named ``"root"``.
    """
    stop = stop or StopSpec()
    if start in graph.boundary:
        raise GraphError(f"start {start} is a boundary vertex")
    nc = stop.nc and not graph.planar
    targets = stop.targets
    bd = graph.boundary
    states = [()]
    index = {(): 0}
    term_index, terminals, reasons = {}, [], []
    qr, qc, qv = [], [], []
    rr, rc, rv = [], [], []
    i = 0
    while i < len(states):
        s = states[i]
        vs, ws = _path_info(graph, start, s)
        pos = {v: k for k, v in enumerate(vs)}
        v = vs[-1]
        for e in graph.out_edges[v]:
            q = graph.q[e]
            h = graph.head[e]
            nxt, reason = None, None
            if h in bd:
                reason = "boundary"
            elif h in pos:
                k = pos[h]
                if nc and graph.group.compose(ws[-1], graph.label[e]) != ws[k]:
                    reason = "nc-cycle"
                elif root_kill and k == 0:
                    reason = "root"
                else:
                    nxt = s[:k]
            elif h in targets:
                reason = "target"
            else:
                nxt = s + (e,)
            if reason is not None:
                key = "root" if reason == "root" else s + (e,)
                j = term_index.get(key)
                if j is None:
                    j = term_index[key] = len(terminals)
                    terminals.append(key)
                    reasons.append(reason)
                rr.append(i)
                rc.append(j)
                rv.append(q)
                continue
            j = index.get(nxt)
            if j is None:
                j = index[nxt] = len(states)
                states.append(nxt)
                if len(states) > cap:
                    raise StateCapExceeded(len(states), cap, f"loop-erased path chain from {start} on {graph.name}")
            qr.append(i)
            qc.append(j)
            qv.append(q)
        i += 1
    n = len(states)
    Q = sp.csr_matrix((qv, (qr, qc)), shape=(n, n))
    R = sp.csr_matrix((rv, (rr, rc)), shape=(n, len(terminals)))
    return SAPChain(graph, start, states, index, Q, R, terminals, reasons)


def exact_branch_law(graph, start, stop: StopSpec = None, cap=DEFAULT_CAP) -> BranchDistribution:
    """Exact law of the loop-erased branch from ``start`` under the stopping rule."""
    stop = stop or StopSpec()
    if start in stop.targets:
        return BranchDistribution(start, {(): 1.0}, {(): "target"}, 0)
    ch = build_sap_chain(graph, start, stop, cap)
    v = ch.visits()
    p = ch.R.T @ v
    probs = {t: float(x) for t, x in zip(ch.terminals, p)}
    return BranchDistribution(start, probs, dict(zip(ch.terminals, ch.reasons)), len(ch.states))


def branch_vertices(graph, start, branch):
    return _path_info(graph, start, branch)[0]


def exact_pair_law(graph, starts, mode="wilson-sequential", cap=DEFAULT_CAP, nc=True, first_filter=None):
    """Exact joint law of the branches from ``starts = (x1, x2)``.

    ``independent``: product of the two single laws.  ``wilson-sequential``: the
    second walk also stops on the first branch.  ``conditioned-disjoint``: the
    sequential law restricted to pairs whose second branch reaches the boundary
    without touching the first, renormalized.  ``first_filter`` (sequential mode
    only) restricts which first branches are expanded.
    """
    x1, x2 = starts
    stop = StopSpec(nc=nc)
    law1 = exact_branch_law(graph, x1, stop, cap)
    if mode == "independent":
        law2 = exact_branch_law(graph, x2, stop, cap)
        return {(a, b): pa * pb for a, pa in law1.items() for b, pb in law2.items()}
    if mode not in ("wilson-sequential", "conditioned-disjoint"):
        raise ValueError(f"unknown pair mode {mode!r}")
    if mode == "conditioned-disjoint" and first_filter is not None:
        raise ValueError("conditioning needs the full first-branch law")
    joint = {}
    for b1, p1 in law1.items():
        if first_filter is not None and not first_filter(b1):
            continue
        vs1 = branch_vertices(graph, x1, b1)
        tg = frozenset(v for v in vs1 if v not in graph.boundary)
        if x2 in tg:
            if mode == "wilson-sequential":
                joint[(b1, ())] = p1
            continue
        law2 = exact_branch_law(graph, x2, StopSpec(targets=tg, nc=nc), cap)
        for b2, p2 in law2.items():
            if mode == "conditioned-disjoint" and law2.reasons[b2] != "boundary":
                continue
            joint[(b1, b2)] = p1 * p2
    if mode == "conditioned-disjoint":
        z = sum(joint.values())
        if z <= 0:
            raise ZeroDivisionError("disjointness event has probability zero")
        joint = {k: v / z for k, v in joint.items()}
    return joint


@dataclass
class CRSFTable:
    law: str
    probs: dict  # out-edge tuple over interior vertices -> probability
    K: dict
    K_dagger: dict
    interior: list

    def out_map(self, key, n):
        out = [-1] * n
        for v, e in zip(self.interior, key):
            out[v] = e
        return out


def enumerate_crsf_distribution(graph, law="wwils", cap=10**6) -> CRSFTable:
    """Exact CRSF law by enumerating out-edge assignments.

    ``wwils`` weights by the edge-weight product, ``wils`` adds the Temperleyan
    indicator and ``temp`` adds the dual-cycle factor 2^K_dagger on top.
    """
    if law not in ("wwils", "wils", "temp"):
        raise ValueError(f"unknown law {law!r}")
    interior = graph.interior
    choices = [graph.out_edges[v] for v in interior]
    total = 1
    for c in choices:
        total *= len(c)
    if total > cap:
        raise StateCapExceeded(total, cap, f"out-edge assignments on {graph.name}")
    weights, Ks, Kds = {}, {}, {}
    out = [-1] * graph.n
    for combo in itertools.product(*choices):
        for v, e in zip(interior, combo):
            out[v] = e
        try:
            cycles = check_forest(graph, out)
        except GraphError:
            continue
        w = 1.0
        for e in combo:
            w *= graph.weight[e]
        kd = 0
        if law != "wwils" and graph.punctures:
            if not is_temperleyan(graph, skeleton_of(graph, out)):
                continue
        if graph.has_faces:
            kd = dual_complement_cycles(graph, out)[0]
        if law == "temp":
            w *= 2.0 ** kd
        weights[combo] = w
        Ks[combo] = len(cycles)
        Kds[combo] = kd
    z = sum(weights.values())
    return CRSFTable(law, {k: w / z for k, w in weights.items()}, Ks, Kds, list(interior))
