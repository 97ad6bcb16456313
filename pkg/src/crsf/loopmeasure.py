"""Random-walk loop measure: masses, Green quantities, branch densities and loop soups.

All loop masses are natural logarithms unless a name says otherwise.  The
noncontractible kill mode ("nc") counts visits on the chain whose states are the
loop-erased path of the walk with its homotopy words, so it is exact on any
finite graph.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .exactdist import DEFAULT_CAP, build_sap_chain
from .surface import Skeleton, is_temperleyan
from .walk import StopSpec, Uniforms, as_uniforms, step


class DomainError(ValueError):
    pass


# basic masses

def loop_mass(graph, edges):
    """log of q(l)/|l| for a rooted loop."""
    edges = tuple(edges)
    if not edges:
        raise DomainError("loops of length zero carry no mass")
    return math.log(graph.path_q(edges)) - math.log(len(edges))


def rotations(edges):
    edges = tuple(edges)
    return {edges[i:] + edges[:i] for i in range(len(edges))}


def canonical_rotation(edges):
    """Lexicographically smallest rotation of the edge sequence."""
    return min(rotations(edges))


def unrooted_mass(graph, edges):
    """log of (distinct rotations) * q(l)/|l|."""
    return math.log(len(rotations(edges))) + loop_mass(graph, edges)


def path_q_union(graph, branches):
    """Product of q over the union of edges of several branches (shared edges once)."""
    seen, out = set(), 1.0
    for _, es in branches:
        for e in es:
            if e not in seen:
                seen.add(e)
                out *= graph.q[e]
    return out


def vertices_of(graph, branch):
    start, es = branch
    vs = [start]
    for e in es:
        vs.append(graph.head[e])
    return vs


# Green quantities

_CALCS = weakref.WeakKeyDictionary()


class _Calc:
    def __init__(self, graph):
        self.graph = graph
        self.g = {}
        self.f = {}


def _calc(graph):
    c = _CALCS.get(graph)
    if c is None:
        c = _CALCS[graph] = _Calc(graph)
    return c


def _domain(graph, A):
    if A is None:
        return frozenset(graph.interior)
    A = frozenset(A)
    if A & graph.boundary:
        raise DomainError("domain contains boundary vertices")
    return A


def _restricted(graph, A):
    idx = {v: i for i, v in enumerate(sorted(A))}
    r, c, d = [], [], []
    for v in idx:
        for e in graph.out_edges[v]:
            h = graph.head[e]
            if h in idx:
                r.append(idx[v])
                c.append(idx[h])
                d.append(graph.q[e])
    n = len(idx)
    return idx, sp.csr_matrix((d, (r, c)), shape=(n, n))


def _can_exit(graph, A, x):
    seen, stack = {x}, [x]
    while stack:
        v = stack.pop()
        for e in graph.out_edges[v]:
            h = graph.head[e]
            if h not in A:
                return True
            if h not in seen:
                seen.add(h)
                stack.append(h)
    return False


def _mode(graph, mode):
    if mode not in ("exit", "nc"):
        raise ValueError(f"unknown kill mode {mode!r}")
    return "exit" if graph.planar else mode


def g_value(graph, A, x, mode="exit", cap=DEFAULT_CAP):
    """Expected visits to ``x`` before leaving ``A`` (and, in "nc" mode, before closing a noncontractible loop)."""
    A = _domain(graph, A)
    if x not in A:
        raise DomainError(f"vertex {x} is not in the domain")
    mode = _mode(graph, mode)
    c = _calc(graph)
    key = (A, x, mode)
    if key in c.g:
        return c.g[key]
    if mode == "exit":
        if not _can_exit(graph, A, x):
            raise DomainError(f"the walk from {x} never leaves the domain; exit-only Green function is infinite")
        idx, Q = _restricted(graph, A)
        n = len(idx)
        M = (sp.identity(n, format="csc") - Q.tocsc()).tocsc()
        b = np.zeros(n)
        b[idx[x]] = 1.0
        val = float(splu(M).solve(b)[idx[x]])
    else:
        outside = frozenset(v for v in range(graph.n) if v not in A and v not in graph.boundary)
        ch = build_sap_chain(graph, x, StopSpec(targets=outside, nc=True), cap)
        val = float(ch.visits()[0])
    c.g[key] = val
    return val


def f_value(graph, A, x, mode="exit", cap=DEFAULT_CAP):
    """Probability of returning to ``x`` under the same kill rule, by a first-return solve."""
    A = _domain(graph, A)
    if x not in A:
        raise DomainError(f"vertex {x} is not in the domain")
    mode = _mode(graph, mode)
    c = _calc(graph)
    key = (A, x, mode)
    if key in c.f:
        return c.f[key]
    if mode == "exit":
        if not _can_exit(graph, A, x):
            raise DomainError(f"the walk from {x} never leaves the domain")
        rest = A - {x}
        idx, Q = _restricted(graph, rest)
        n = len(idx)
        b = np.zeros(n)
        for v in idx:
            for e in graph.out_edges[v]:
                if graph.head[e] == x:
                    b[idx[v]] += graph.q[e]
        h = splu((sp.identity(n, format="csc") - Q.tocsc()).tocsc()).solve(b) if n else b
        val = 0.0
        for e in graph.out_edges[x]:
            y = graph.head[e]
            if y == x:
                val += graph.q[e]
            elif y in idx:
                val += graph.q[e] * h[idx[y]]
    else:
        outside = frozenset(v for v in range(graph.n) if v not in A and v not in graph.boundary)
        ch = build_sap_chain(graph, x, StopSpec(targets=outside, nc=True), cap, root_kill=True)
        n = len(ch.states)
        if "root" in ch.terminals:
            col = ch.R[:, ch.terminals.index("root")].toarray().ravel()
            h = splu((sp.identity(n, format="csc") - ch.Q.tocsc()).tocsc()).solve(col)
            val = float(h[0])
        else:
            val = 0.0
    c.f[key] = float(val)
    return float(val)


def green_diagonal(graph, A=None):
    """Diagonal of (I - Q_A)^-1, i.e. exit-mode g for every vertex of A."""
    A = _domain(graph, A)
    idx, Q = _restricted(graph, A)
    G = np.linalg.inv(np.eye(len(idx)) - Q.toarray())
    return {v: float(G[i, i]) for v, i in idx.items()}


# masses of loops hitting paths

def _sequence(graph, paths, domain):
    seen, order = set(), []
    for p in paths:
        for v in p:
            if v in graph.boundary or v not in domain or v in seen:
                continue
            seen.add(v)
            order.append(v)
    return order


def log_mass_intersecting(graph, paths, domain=None, filter="all", cap=DEFAULT_CAP):
    """Sum of log g(A_j, x_j) over the path vertices in order; A_j drops the vertices already used.

    ``paths`` are vertex sequences.  ``filter="all"`` uses the exit-only kill,
    ``filter="eta-contractible"`` the noncontractible kill.
    """
    domain = _domain(graph, domain)
    mode = {"all": "exit", "eta-contractible": "nc", "eta": "nc"}[filter]
    A = set(domain)
    total = 0.0
    for x in _sequence(graph, paths, domain):
        total += math.log(g_value(graph, frozenset(A), x, mode, cap))
        A.discard(x)
    return total


def _default_mode(graph, mode):
    if mode is None:
        return "planar" if graph.planar else "surface"
    if mode not in ("planar", "surface"):
        raise ValueError(f"unknown density mode {mode!r}")
    return mode


def check_merging(graph, branches):
    """Raise unless each later branch only stops on earlier branches, the boundary or a cycle of its own."""
    seen = set()
    for start, es in branches:
        vs = vertices_of(graph, (start, es))
        own = set()
        for i, v in enumerate(vs):
            if v in seen and i < len(vs) - 1:
                raise DomainError(f"branch from {start} continues after meeting an earlier branch at {v}")
            if v in own and i < len(vs) - 1:
                raise DomainError(f"branch from {start} is not self-avoiding")
            own.add(v)
        seen |= own


def log_density_lerw(graph, branches, domain=None, mode=None, cap=DEFAULT_CAP):
    """log of q(union) * exp(loop mass) for an ordered family of branches ``(start, edges)``."""
    mode = _default_mode(graph, mode)
    check_merging(graph, branches)
    paths = [vertices_of(graph, b) for b in branches]
    filt = "all" if mode == "planar" else "eta-contractible"
    return math.log(path_q_union(graph, branches)) + log_mass_intersecting(graph, paths, domain, filt, cap)


def density_lerw(graph, branches, domain=None, mode=None, cap=DEFAULT_CAP):
    """Probability that Wilson's algorithm from the given starts produces these branches."""
    if isinstance(branches, tuple) and len(branches) == 2 and isinstance(branches[0], int):
        branches = [branches]
    return math.exp(log_density_lerw(graph, branches, domain, mode, cap))


def order_discrepancy(graph, branches, cap=DEFAULT_CAP):
    """Difference of the loop-mass term between the given branch order and the reversed one."""
    paths = [vertices_of(graph, b) for b in branches]
    a = log_mass_intersecting(graph, paths, None, "eta-contractible", cap)
    b = log_mass_intersecting(graph, paths[::-1], None, "eta-contractible", cap)
    return a - b


def pair_rn_factor(graph, b1, b2, domain=None, filter=None, cap=DEFAULT_CAP):
    """Mass of loops hitting both branches, by inclusion-exclusion of three sequential masses."""
    if filter is None:
        filter = "all" if graph.planar else "eta-contractible"
    p1, p2 = vertices_of(graph, b1), vertices_of(graph, b2)
    inner1 = {v for v in p1 if v not in graph.boundary}
    if inner1 & {v for v in p2 if v not in graph.boundary}:
        raise DomainError("paths must be disjoint")
    m1 = log_mass_intersecting(graph, [p1], domain, filter, cap)
    m2 = log_mass_intersecting(graph, [p2], domain, filter, cap)
    m12 = log_mass_intersecting(graph, [p1, p2], domain, filter, cap)
    return m1 + m2 - m12


# loop enumeration with a certified tail

@dataclass
class EnumeratedMass:
    value: float
    tail: float
    length: int


def _dense_restricted(graph, A):
    idx, Q = _restricted(graph, A)
    return idx, Q.toarray()


def enumerated_mass(graph, S, domain=None, tol=1e-10, max_length=100000):
    """Mass of loops in ``domain`` meeting ``S``: sum over lengths n of (tr Q_D^n - tr Q_{D-S}^n)/n.

    Lengths are added until a geometric bound on the remaining terms falls below ``tol``.
    """
    D = _domain(graph, domain)
    S = frozenset(S) & D
    _, QD = _dense_restricted(graph, D)
    _, QE = _dense_restricted(graph, D - S)
    k = 8
    Pk = np.linalg.matrix_power(QD, k)
    a = float(np.abs(Pk).sum(axis=1).max()) if len(D) else 0.0
    if a >= 1:
        raise DomainError("restricted walk is not strictly substochastic")
    nD = len(D)
    total, n = 0.0, 0
    PD = np.eye(nD)
    PE = np.eye(QE.shape[0])
    while True:
        n += 1
        PD = PD @ QD
        PE = PE @ QE if QE.size else PE
        total += (np.trace(PD) - (np.trace(PE) if QE.size else 0.0)) / n
        tail = nD * k * a ** ((n + 1) // k) / ((1 - a) * (n + 1))
        if tail < tol or n >= max_length:
            return EnumeratedMass(total, tail, n)


def loop_mass_all(graph, S, domain=None):
    """Total (all homotopy classes) mass of loops in ``domain`` meeting ``S``, from two log-determinants."""
    D = _domain(graph, domain)
    S = frozenset(S) & D
    _, QD = _dense_restricted(graph, D)
    _, QE = _dense_restricted(graph, D - S)
    a = -np.linalg.slogdet(np.eye(len(QD)) - QD)[1]
    b = -np.linalg.slogdet(np.eye(len(QE)) - QE)[1] if QE.size else 0.0
    return float(a - b)


def long_loop_mass(graph, S, L, domain=None):
    """Mass of loops of length at least ``L`` in ``domain`` meeting ``S``."""
    D = _domain(graph, domain)
    S = frozenset(S) & D
    _, QD = _dense_restricted(graph, D)
    _, QE = _dense_restricted(graph, D - S)
    short = 0.0
    PD, PE = np.eye(len(QD)), np.eye(len(QE))
    for n in range(1, L):
        PD = PD @ QD
        PE = PE @ QE if QE.size else PE
        short += (np.trace(PD) - (np.trace(PE) if QE.size else 0.0)) / n
    return max(loop_mass_all(graph, S, D) - short, 0.0)


def systole(graph, domain=None):
    """Length of the shortest noncontractible closed walk avoiding the boundary (inf if none)."""
    D = _domain(graph, domain)
    if graph.planar:
        return math.inf
    g = graph.group
    best = math.inf
    for r in sorted(D):
        # BFS in the cover from the identity lift of r
        dist = {(r, g.identity): 0}
        frontier = [(r, g.identity)]
        d = 0
        while frontier and d + 1 < best:
            d += 1
            nxt = []
            for v, w in frontier:
                for e in graph.out_edges[v]:
                    h = graph.head[e]
                    if h not in D:
                        continue
                    w2 = g.compose(w, graph.label[e])
                    if h == r and not g.is_identity(w2):
                        best = min(best, d)
                    if (h, w2) not in dist:
                        dist[(h, w2)] = d
                        nxt.append((h, w2))
            frontier = nxt
    return best


# hitting probabilities

def exit_distribution(graph, x, S, allowed=None):
    """Law of the first vertex of ``S`` hit at a time >= 1 by the walk from ``x``.

    ``S`` must be absorbing in the sense that the walk cannot wander forever
    outside it (boundary vertices are always added).  Returns a dict.
    """
    S = frozenset(S) | graph.boundary
    free = [v for v in range(graph.n) if v not in S]
    idx = {v: i for i, v in enumerate(free)}
    targets = sorted(S)
    tix = {v: i for i, v in enumerate(targets)}
    r, c, d = [], [], []
    br, bc, bd = [], [], []
    for v in free:
        for e in graph.out_edges[v]:
            h = graph.head[e]
            if h in idx:
                r.append(idx[v]); c.append(idx[h]); d.append(graph.q[e])
            else:
                br.append(idx[v]); bc.append(tix[h]); bd.append(graph.q[e])
    n = len(free)
    Q = sp.csr_matrix((d, (r, c)), shape=(n, n))
    B = sp.csr_matrix((bd, (br, bc)), shape=(n, len(targets))).toarray()
    H = splu((sp.identity(n, format="csc") - Q.tocsc()).tocsc()).solve(B) if n else B
    out = np.zeros(len(targets))
    for e in graph.out_edges[x]:
        h = graph.head[e]
        if h in idx:
            out += graph.q[e] * H[idx[h]]
        else:
            out[tix[h]] += graph.q[e]
    return {v: float(out[i]) for v, i in tix.items()}


def escape_probability(graph, x, avoid):
    """P_x[boundary is hit before ``avoid``], hitting times >= 1."""
    dist = exit_distribution(graph, x, frozenset(avoid))
    return sum(p for v, p in dist.items() if v in graph.boundary)


def nc_escape_probability(graph, branch, cap=DEFAULT_CAP):
    """P_x[boundary or a noncontractible loop before returning contractibly to ``branch``].

    The walk starts at the tip of ``branch`` and carries the branch as its
    loop-erased past, so closing a loop through the branch with a nontrivial word
    counts as success.
    """
    start, es = branch
    vs = vertices_of(graph, branch)
    g = graph.group
    words = [g.identity]
    for e in es:
        words.append(g.compose(words[-1], graph.label[e]))
    eta_word = {v: w for v, w in zip(vs, words)}
    tip = vs[-1]
    # chain from the tip; vertices of the branch act as word-aware targets
    states, index = [()], {(): 0}
    rows, cols, vals = [], [], []
    good = []
    i = 0
    while i < len(states):
        s = states[i]
        pv, pw = [tip], [words[-1]]
        for e in s:
            pv.append(graph.head[e])
            pw.append(g.compose(pw[-1], graph.label[e]))
        pos = {v: k for k, v in enumerate(pv)}
        v = pv[-1]
        acc = 0.0
        for e in graph.out_edges[v]:
            q = graph.q[e]
            h = graph.head[e]
            w = g.compose(pw[-1], graph.label[e])
            if h in graph.boundary:
                acc += q
            elif h in pos and pos[h] > 0:
                k = pos[h]
                if w != pw[k]:
                    acc += q
                else:
                    rows.append(i); cols.append(index[s[:k]]); vals.append(q)
            elif h in eta_word:
                if w != eta_word[h]:
                    acc += q
            else:
                nxt = s + (e,)
                j = index.get(nxt)
                if j is None:
                    j = index[nxt] = len(states)
                    states.append(nxt)
                    if len(states) > cap:
                        raise RuntimeError(f"state cap {cap} exceeded")
                rows.append(i); cols.append(j); vals.append(q)
        good.append(acc)
        i += 1
    n = len(states)
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    h = splu((sp.identity(n, format="csc") - Q.tocsc()).tocsc()).solve(np.array(good))
    return float(h[0])


# marginals of a single branch

def _check_prefix(graph, branch):
    vs = vertices_of(graph, branch)
    if len(set(vs)) != len(vs):
        raise DomainError("partial path is not self-avoiding")
    if any(v in graph.boundary for v in vs):
        raise DomainError("partial path must stay off the boundary")
    return vs


def marginal_prefix(graph, eta_minus, cap=DEFAULT_CAP):
    """P(eta_minus is the initial portion of the branch), as q * exp(mass) * escape probability."""
    vs = _check_prefix(graph, eta_minus)
    q = graph.path_q(eta_minus[1])
    if graph.planar:
        lm = log_mass_intersecting(graph, [vs], None, "all")
        return q * math.exp(lm) * escape_probability(graph, vs[-1], vs)
    lm = log_mass_intersecting(graph, [vs], None, "eta-contractible", cap)
    return q * math.exp(lm) * nc_escape_probability(graph, eta_minus, cap)


def marginal_suffix(graph, x0, eta_plus):
    """P(the branch from x0 ends with eta_plus) for a planar graph."""
    vs = vertices_of(graph, eta_plus)
    if vs[-1] not in graph.boundary:
        raise DomainError("eta_plus must end on the boundary")
    inner = [v for v in vs if v not in graph.boundary]
    lm = log_mass_intersecting(graph, [vs], None, "all")
    hit = _hit_from(graph, x0, frozenset(inner)).get(vs[0], 0.0)
    return graph.path_q(eta_plus[1]) * math.exp(lm) * hit


def _hit_from(graph, x, S):
    """Law of X(tau_S) with tau_S >= 0."""
    S = frozenset(S) | graph.boundary
    if x in S:
        return {v: (1.0 if v == x else 0.0) for v in S}
    return exit_distribution(graph, x, S)


def marginal_prefix_suffix(graph, eta_minus, eta_plus):
    """P(eta_minus is the start and eta_plus the end of the branch) for a planar graph."""
    vm = _check_prefix(graph, eta_minus)
    vp = vertices_of(graph, eta_plus)
    inner_p = [v for v in vp if v not in graph.boundary]
    if set(vm) & set(inner_p):
        raise DomainError("eta_minus and eta_plus must be disjoint")
    lm = log_mass_intersecting(graph, [vm, vp], None, "all")
    hit = exit_distribution(graph, vm[-1], frozenset(vm) | frozenset(inner_p)).get(vp[0], 0.0)
    return graph.path_q(eta_minus[1]) * graph.path_q(eta_plus[1]) * math.exp(lm) * hit


def conditional_given_prefix(graph, eta_minus, gamma, cap=DEFAULT_CAP):
    """P(branch = gamma | eta_minus is its initial portion)."""
    vm = _check_prefix(graph, eta_minus)
    start, es = gamma
    k = len(eta_minus[1])
    if start != eta_minus[0] or tuple(es[:k]) != tuple(eta_minus[1]):
        return 0.0
    rest = (vm[-1], tuple(es[k:]))
    vr = vertices_of(graph, rest)
    dom = frozenset(graph.interior) - frozenset(vm)
    if graph.planar:
        lm = log_mass_intersecting(graph, [vr], dom, "all")
        esc = escape_probability(graph, vm[-1], vm)
    else:
        lm = _cond_mass_surface(graph, eta_minus, rest, cap)
        esc = nc_escape_probability(graph, eta_minus, cap)
    return graph.path_q(rest[1]) * math.exp(lm) / esc


def _cond_mass_surface(graph, eta_minus, rest, cap):
    vm = vertices_of(graph, eta_minus)
    vr = vertices_of(graph, rest)
    dom = frozenset(graph.interior) - frozenset(vm)
    return log_mass_intersecting(graph, [vr], dom, "eta-contractible", cap)


# pairs of branches (planar)

def _excursion_law(graph, x, kill, cap=DEFAULT_CAP):
    """Loop-erasures of walks from ``x`` reaching the boundary before ``kill`` (times >= 1)."""
    targets = frozenset(kill) - {x}
    ch = build_sap_chain(graph, x, StopSpec(targets=targets, nc=True), cap, root_kill=x in kill)
    v = ch.visits()
    p = ch.R.T @ v
    return {t: float(pp) for t, pp, r in zip(ch.terminals, p, ch.reasons) if r == "boundary"}


def pair_escape(graph, eta1, eta2, cap=DEFAULT_CAP):
    """P(walk 1 reaches the boundary before eta1 U eta2, then walk 2 before eta1 U eta2 U LE(walk 1))."""
    v1 = vertices_of(graph, eta1)
    v2 = vertices_of(graph, eta2)
    kill = frozenset(v1) | frozenset(v2)
    law1 = _excursion_law(graph, v1[-1], kill, cap)
    total = 0.0
    for b, p in law1.items():
        vb = [v for v in vertices_of(graph, (v1[-1], b)) if v not in graph.boundary]
        total += p * escape_probability(graph, v2[-1], kill | frozenset(vb))
    return total


def disjoint_probability(graph, x1, x2, cap=DEFAULT_CAP):
    """P(the two tree branches from x1, x2 are disjoint), from the trivial-prefix case of the pair formula."""
    lm = log_mass_intersecting(graph, [[x1], [x2]], None, "all")
    return math.exp(lm) * pair_escape(graph, (x1, ()), (x2, ()), cap)


def pair_marginal_disjoint(graph, eta1, eta2, p_disjoint=None, cap=DEFAULT_CAP):
    """P(eta1, eta2 start the two branches | branches disjoint), from the sequential escape event."""
    v1, v2 = _check_prefix(graph, eta1), _check_prefix(graph, eta2)
    if set(v1) & set(v2):
        raise DomainError("eta1 and eta2 must be disjoint")
    if p_disjoint is None:
        p_disjoint = disjoint_probability(graph, v1[0], v2[0], cap)
    lm = log_mass_intersecting(graph, [v1, v2], None, "all")
    q = graph.path_q(eta1[1]) * graph.path_q(eta2[1])
    return q * math.exp(lm) * pair_escape(graph, eta1, eta2, cap) / p_disjoint


def pair_marginal_rn(graph, eta1, eta2, p_disjoint=None, cap=DEFAULT_CAP):
    """Same quantity written as exp(-mass of loops hitting both) times the two single marginals and a conditional escape."""
    v1, v2 = _check_prefix(graph, eta1), _check_prefix(graph, eta2)
    if p_disjoint is None:
        p_disjoint = disjoint_probability(graph, v1[0], v2[0], cap)
    both = pair_rn_factor(graph, eta1, eta2, None, "all")
    m1 = marginal_prefix(graph, eta1)
    m2 = marginal_prefix(graph, eta2)
    e1 = escape_probability(graph, v1[-1], v1)
    e2 = escape_probability(graph, v2[-1], v2)
    cond = pair_escape(graph, eta1, eta2, cap) / (e1 * e2)
    return math.exp(-both) * m1 * m2 * cond / p_disjoint


def pair_conditional_end(graph, eta1, eta2, gamma1, gamma2, cap=DEFAULT_CAP):
    """P((Y1, Y2) = (gamma1, gamma2) | disjoint, eta_i start Y_i), via excursion laws and loops hitting both ends."""
    v1, v2 = _check_prefix(graph, eta1), _check_prefix(graph, eta2)
    k1, k2 = len(eta1[1]), len(eta2[1])
    if tuple(gamma1[1][:k1]) != tuple(eta1[1]) or tuple(gamma2[1][:k2]) != tuple(eta2[1]):
        return 0.0
    r1 = (v1[-1], tuple(gamma1[1][k1:]))
    r2 = (v2[-1], tuple(gamma2[1][k2:]))
    kill = frozenset(v1) | frozenset(v2)
    dom = frozenset(graph.interior) - kill
    law1 = _excursion_law(graph, v1[-1], kill, cap)
    law2 = _excursion_law(graph, v2[-1], kill, cap)
    z1, z2 = sum(law1.values()), sum(law2.values())
    p1 = law1.get(r1[1], 0.0) / z1
    p2 = law2.get(r2[1], 0.0) / z2
    if p1 == 0 or p2 == 0:
        return 0.0
    denom = 0.0
    e2 = escape_probability(graph, v2[-1], kill)
    for b, p in law1.items():
        vb = [v for v in vertices_of(graph, (v1[-1], b)) if v not in graph.boundary]
        denom += p / z1 * escape_probability(graph, v2[-1], kill | frozenset(vb)) / e2
    a = [v for v in vertices_of(graph, r1) if v in dom]
    b = [v for v in vertices_of(graph, r2) if v in dom]
    both = (log_mass_intersecting(graph, [a], dom, "all") + log_mass_intersecting(graph, [b], dom, "all")
            - log_mass_intersecting(graph, [a, b], dom, "all"))
    return math.exp(-both) * p1 * p2 / denom


# skeleton marginal on a bordered surface

@dataclass
class Band:
    value: float
    log_width: float

    @property
    def low(self):
        return self.value * math.exp(-self.log_width)

    @property
    def high(self):
        return self.value * math.exp(self.log_width)

    def contains(self, x, rtol=1e-9):
        return self.low * (1 - rtol) <= x <= self.high * (1 + rtol)


def _compatible_continuations(graph, etas, cap=DEFAULT_CAP):
    """Exact probability that Wilson's algorithm run from the tips of ``etas`` (in order) completes a Temperleyan skeleton.

    Each walk stops on the boundary, on any earlier path or continuation, or when
    it closes a noncontractible loop.  The union must have only
    noncontractible cycles and cut the surface into annuli.
    """
    paths = [vertices_of(graph, e) for e in etas]
    out = {}
    for (s, es), vs in zip(etas, paths):
        for v, e in zip(vs, es):
            out[v] = e
    base = frozenset(v for vs in paths for v in vs)

    def rec(i, taken, outmap, conts, p):
        if i == len(etas):
            return p if _skeleton_ok(graph, etas, conts, outmap) else 0.0
        tip = paths[i][-1]
        law = _continuation_law(graph, tip, frozenset(taken), cap)
        total = 0.0
        for b, pb in law.items():
            om = dict(outmap)
            vb = vertices_of(graph, (tip, b))
            for v, e in zip(vb, b):
                om[v] = e
            nt = set(taken) | {v for v in vb if v not in graph.boundary}
            total += rec(i + 1, nt, om, conts + [b], p * pb)
        return total

    return rec(0, base, out, [], 1.0)


def _continuation_law(graph, tip, taken, cap):
    targets = frozenset(taken) - {tip}
    ch = build_sap_chain(graph, tip, StopSpec(targets=targets, nc=True), cap, root_kill=True)
    v = ch.visits()
    p = ch.R.T @ v
    law = {}
    for t, pp, r in zip(ch.terminals, p, ch.reasons):
        if r == "root":
            continue  # contractible return to the tip: a contractible cycle, never compatible
        law[t] = law.get(t, 0.0) + float(pp)
    return law


def _skeleton_ok(graph, etas, conts, outmap):
    g = graph.group
    # every cycle of the partial out-map must be noncontractible
    state = {}
    for s in outmap:
        if s in state:
            continue
        trail, v = [], s
        while v in outmap and v not in state:
            state[v] = 1
            trail.append(v)
            v = graph.head[outmap[v]]
        if v in outmap and state.get(v) == 1:
            cyc = trail[trail.index(v):]
            w = g.identity
            for x in cyc:
                w = g.compose(w, graph.label[outmap[x]])
            if g.is_identity(w):
                return False
        for x in trail:
            state[x] = 2
    branches = [tuple(es) + tuple(c) for (s, es), c in zip(etas, conts)]
    return is_temperleyan(graph, Skeleton(branches, [p.edge for p in graph.punctures]))


def skeleton_support(graph, starts, prefixes=None, cap=DEFAULT_CAP):
    """All Temperleyan skeleton branch families from ``starts`` (sampled in order) extending ``prefixes``.

    Only the set of reachable loop-erased paths is used, never their probabilities.
    """
    prefixes = prefixes or [()] * len(starts)
    aux = [p.edge for p in graph.punctures]
    out = []

    def rec(i, taken, acc):
        if i == len(starts):
            if is_temperleyan(graph, Skeleton([b for b in acc], aux)):
                out.append(tuple(acc))
            return
        x = starts[i]
        if x in taken:
            if not prefixes[i]:
                rec(i + 1, taken, acc + [()])
            return
        ch = build_sap_chain(graph, x, StopSpec(targets=frozenset(taken), nc=True), cap)
        k = len(prefixes[i])
        for t in ch.terminals:
            if tuple(t[:k]) != tuple(prefixes[i]):
                continue
            vs = vertices_of(graph, (x, t))
            rec(i + 1, taken | {v for v in vs if v not in graph.boundary}, acc + [t])

    rec(0, frozenset(), [])
    return out


@dataclass
class SurfaceMarginal:
    value: float
    band: Band
    continuation_value: float


def surface_pair_marginal_band(graph, etas, cap=DEFAULT_CAP, p_temperleyan=None):
    """Skeleton marginal given the Temperleyan event, with its up-to-constants band.

    ``value`` keeps the mass of eta-contractible loops meeting the paths and
    sums, over skeletons extending them, the loop mass of the remainder computed
    away from the paths.  The band's log-width certifies the mismatch: only
    contractible loops with noncontractible support that meet the paths can be
    counted differently, and such a loop has two distinct lifts of a vertex,
    hence length at least twice the systole.  ``continuation_value`` replaces the
    sum by the probability that walks restarted from the path tips complete a
    Temperleyan skeleton.
    """
    paths = [_check_prefix(graph, e) for e in etas]
    allv = [v for p in paths for v in p]
    if len(set(allv)) != len(allv):
        raise DomainError("paths must be disjoint")
    starts = [p[0] for p in paths]
    if p_temperleyan is None:
        p_temperleyan = sum(density_lerw(graph, list(zip(starts, fam)), cap=cap)
                            for fam in skeleton_support(graph, starts, None, cap))
    q = 1.0
    for e in etas:
        q *= graph.path_q(e[1])
    lm = log_mass_intersecting(graph, paths, None, "eta-contractible", cap)
    dom = frozenset(graph.interior) - frozenset(allv)
    total = 0.0
    for fam in skeleton_support(graph, starts, [e[1] for e in etas], cap):
        br = list(zip(starts, fam))
        rest = log_mass_intersecting(graph, [vertices_of(graph, b) for b in br], dom, "eta-contractible", cap)
        total += math.exp(rest) * path_q_union(graph, br)
    value = math.exp(lm) * total / p_temperleyan
    comp = _compatible_continuations(graph, etas, cap)
    sysl = systole(graph)
    w = long_loop_mass(graph, set(allv), int(2 * sysl)) if math.isfinite(sysl) else 0.0
    return SurfaceMarginal(value, Band(value, w), q * math.exp(lm) * comp / p_temperleyan)


# loop soups

@dataclass
class SoupLoop:
    edges: tuple  # canonical rotation
    root: int

    def vertices(self, graph):
        return {graph.tail[e] for e in self.edges}


class RejectionBudgetExceeded(RuntimeError):
    pass


def _excursion(graph, x, A, nc, uni, budget):
    g = graph.group
    for _ in range(budget):
        v, es = x, []
        path, words, pos = [x], [g.identity], {x: 0}
        ok = False
        while True:
            e = step(graph, v, uni)
            es.append(e)
            h = graph.head[e]
            if h not in A:
                break
            w = g.compose(words[-1], graph.label[e]) if nc else words[-1]
            k = pos.get(h)
            if k is not None:
                if nc and w != words[k]:
                    break
                if k == 0:
                    ok = True
                    break
                for y in path[k + 1:]:
                    del pos[y]
                del path[k + 1:]
                del words[k + 1:]
            else:
                pos[h] = len(path)
                path.append(h)
                words.append(w)
            v = h
        if ok:
            return tuple(es)
    raise RejectionBudgetExceeded(f"no excursion from {x} returned within {budget} tries")


def sample_loop_soup(graph, rng, domain=None, mode="exit", order=None, budget=10**6, cap=DEFAULT_CAP):
    """Poisson loop soup in ``domain`` by the rooted-vertex decomposition.

    For vertices x_1, x_2, ... (``order`` or increasing ids) the number of loops
    rooted at x_j avoiding x_1..x_{j-1} is Poisson(log g(A_j, x_j)); each loop
    is d excursions with P(d = i) proportional to f^i / i.
    """
    D = _domain(graph, domain)
    order = list(order) if order is not None else sorted(D)
    uni = as_uniforms(rng)
    gen = uni.generator
    nc = _mode(graph, mode) == "nc"
    A = set(D)
    loops = []
    for x in order:
        if x not in A:
            continue
        gv = g_value(graph, frozenset(A), x, "nc" if nc else "exit", cap)
        if gv > 1.0:
            f = 1.0 - 1.0 / gv
            for _ in range(int(gen.poisson(math.log(gv)))):
                d = int(gen.logseries(f))
                es = ()
                for _ in range(d):
                    es += _excursion(graph, x, A, nc, uni, budget)
                loops.append(SoupLoop(canonical_rotation(es), x))
        A.discard(x)
    return loops


def split_wilson_loops(graph, walk_record, rng):
    """Loops rooted at each branch vertex, from one loop-erased walk with its trajectory.

    The piece of trajectory between the final arrival at a path vertex and its
    final departure is cut into excursions, which are grouped into consecutive
    blocks following the cycle lengths of a uniform random permutation.
    """
    traj = walk_record.trajectory
    pushes = walk_record.push_times
    verts = walk_record.vertices
    gen = rng.generator if isinstance(rng, Uniforms) else rng
    out = []
    ends = list(pushes[1:])
    if len(pushes) < len(verts):
        ends.append(len(traj))  # the closing step of a noncontractible cycle is not a loop
    for j, end in enumerate(ends):
        x = verts[j]
        seg = traj[pushes[j]:end - 1]
        if not seg:
            continue
        exc, cur = [], []
        for e in seg:
            cur.append(e)
            if graph.head[e] == x:
                exc.append(tuple(cur))
                cur = []
        i = 0
        d = len(exc)
        while i < d:
            size = int(gen.integers(1, d - i + 1))
            es = ()
            for k in range(i, i + size):
                es += exc[k]
            out.append(SoupLoop(canonical_rotation(es), x))
            i += size
    return out


@dataclass
class MassEstimate:
    mean: float
    stderr: float
    n: int
    variance: float

    def ci(self, z=1.96):
        return (self.mean - z * self.stderr, self.mean + z * self.stderr)

    @property
    def dispersion(self):
        return self.variance / self.mean if self.mean > 0 else float("nan")


def empirical_mass(predicate, realizations):
    """Mean number of loops satisfying ``predicate`` per realization, with a normal CI."""
    counts = [sum(1 for l in r if predicate(l)) for r in realizations]
    n = len(counts)
    if n == 0:
        raise ValueError("no realizations")
    c = np.asarray(counts, dtype=float)
    var = float(c.var(ddof=1)) if n > 1 else 0.0
    return MassEstimate(float(c.mean()), math.sqrt(var / n), n, var)
