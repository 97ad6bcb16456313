"""Scale-by-scale description of two disjoint tree branches started next to a marked point.

Everything here is exact: pairs of paths are enumerated and loop masses come
from determinants, so the module is only usable on tiny wired discs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .loopmeasure import exit_distribution, log_mass_intersecting, vertices_of

DEFAULT_FOURIER = 64
DEFAULT_PAIR_CAP = 10**6


class ScaleError(ValueError):
    pass


class PairCapExceeded(RuntimeError):
    pass


@dataclass
class ScaleSystem:
    """Balls B_n = {|z - origin| < 2^n delta} on a wired planar graph, with start vertices x1, x2."""

    graph: object
    origin: tuple
    delta: float
    N: int
    x1: int
    x2: int
    _balls: dict = field(default_factory=dict, repr=False)
    _cross: list = field(default=None, repr=False)
    _fourier: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        g = self.graph
        if not g.planar:
            raise ScaleError("scale systems live on planar graphs")
        if self.N < 1:
            raise ScaleError("N must be at least 1")
        if not self.delta > 0:
            raise ScaleError("delta must be positive")
        for x in (self.x1, self.x2):
            if x not in self.ball(1):
                raise ScaleError(f"start vertex {x} is not in B_1")
        if not any(g.head[e] == self.x2 for e in g.out_edges[self.x1]):
            raise ScaleError("start vertices must be neighbours")

    def radius(self, n):
        return 2.0 ** n * self.delta

    def norm(self, v):
        x, y = self.graph.coords[v]
        return math.hypot(x - self.origin[0], y - self.origin[1])

    def ball(self, n):
        """Interior vertices of B_n; half-integer n allowed."""
        b = self._balls.get(n)
        if b is None:
            r = self.radius(n)
            b = self._balls[n] = frozenset(v for v in self.graph.interior if self.norm(v) < r)
        return b

    def crossing(self, e):
        """Signed crossing of edge ``e`` with the horizontal ray to the right of the origin."""
        if self._cross is None:
            g = self.graph
            ox, oy = self.origin
            cr = []
            for k in range(len(g.head)):
                (ax, ay), (bx, by) = g.coords[g.tail[k]], g.coords[g.head[k]]
                c = 0
                if (ay - oy) * (by - oy) < 0:
                    x = ax + (oy - ay) * (bx - ax) / (by - ay)
                    if x > ox:
                        c = 1 if by > ay else -1
                cr.append(c)
            self._cross = cr
        return self._cross[e]


def tiny_disc_system():
    """The 12-vertex wired disc with origin at the central face, delta = 0.45 and two scales."""
    from .fixtures import tiny_disc

    g = tiny_disc()
    idx = {tuple(map(float, g.coords[v])): v for v in g.interior}
    return ScaleSystem(g, (1.5, 1.5), 0.45, 2, idx[(1.0, 1.0)], idx[(2.0, 1.0)])


# decomposition

@dataclass
class Decomposition:
    m: int
    n: int
    first: tuple  # per path: (start, edges) until first exit of B_m
    middle: tuple
    last: tuple  # per path: after the last visit to B_n

    def recompose(self):
        out = []
        for a, b, c in zip(self.first, self.middle, self.last):
            out.append((a[0], tuple(a[1]) + tuple(b[1]) + tuple(c[1])))
        return tuple(out)


def _first_exit(S, vs, m):
    ball = S.ball(m)
    for i, v in enumerate(vs):
        if v not in ball:
            return i
    return None


def decompose(S: ScaleSystem, pair, m, n) -> Decomposition:
    """Split each path at its first exit of B_m and after its last visit to B_n."""
    if not 1 <= m <= n:
        raise ScaleError("need 1 <= m <= n")
    first, middle, last = [], [], []
    for start, es in pair:
        es = tuple(es)
        vs = vertices_of(S.graph, (start, es))
        a = _first_exit(S, vs, m)
        if a is None:
            raise ScaleError(f"path from {start} never exits B_{m}")
        bn = S.ball(n)
        b = max(i for i, v in enumerate(vs) if v in bn) if any(v in bn for v in vs) else -1
        b = max(b, a - 1)
        first.append((start, es[:a]))
        middle.append((vs[a], es[a:b + 1]))
        last.append((vs[b + 1], es[b + 1:]))
    return Decomposition(m, n, tuple(first), tuple(middle), tuple(last))


def restrict(S, pair, m):
    """The pair stopped at the first exit of B_m."""
    return decompose(S, pair, m, m).first


# loop masses away from windings

def _restricted_crossing(S, X):
    g = S.graph
    idx = {v: i for i, v in enumerate(sorted(X))}
    n = len(idx)
    mats = {c: np.zeros((n, n)) for c in (-1, 0, 1)}
    for v, i in idx.items():
        for e in g.out_edges[v]:
            h = g.head[e]
            if h in idx:
                mats[S.crossing(e)][i, idx[h]] += g.q[e]
    return idx, mats


def unwound_mass(S: ScaleSystem, X, M=DEFAULT_FOURIER):
    """Mass of loops inside ``X`` with zero winding about the origin.

    Averages -log|det(I - Q_X(theta))| over M equally spaced angles, where an
    edge crossing the ray to the right of the origin carries exp(+-i theta).
    Loops winding a nonzero multiple of M times are also counted; their mass
    is negligible for M = 64 on graphs this small.
    """
    X = frozenset(X)
    key = (X, M)
    if key in S._fourier:
        return S._fourier[key]
    if not X:
        S._fourier[key] = 0.0
        return 0.0
    _, mats = _restricted_crossing(S, X)
    th = 2 * np.pi * np.arange(M) / M
    Q = (mats[0][None] + np.exp(1j * th)[:, None, None] * mats[1][None]
         + np.exp(-1j * th)[:, None, None] * mats[-1][None])
    n = Q.shape[1]
    _, ld = np.linalg.slogdet(np.eye(n)[None] - Q)
    val = float(-ld.real.mean())
    S._fourier[key] = val
    return val


def unwound_pair_mass(S: ScaleSystem, m, pair, M=DEFAULT_FOURIER):
    """Mass of zero-winding loops inside B_m meeting both paths, by inclusion-exclusion."""
    B = S.ball(m)
    p1 = frozenset(vertices_of(S.graph, pair[0])) & B
    p2 = frozenset(vertices_of(S.graph, pair[1])) & B
    if not p1 or not p2:
        return 0.0
    return (unwound_mass(S, B, M) - unwound_mass(S, B - p1, M) - unwound_mass(S, B - p2, M)
            + unwound_mass(S, B - p1 - p2, M))


@dataclass
class WindingEnumeration:
    value: float
    tail: float
    length: int


def enumerate_unwound_pair_mass(S: ScaleSystem, m, pair, tol=1e-12, max_length=10000):
    """Same quantity by summing q/|l| over rooted loops, length by length.

    Dynamic programming over (vertex, winding, which paths were hit); the
    remainder after length L is bounded by the geometric tail of the trace of
    Q_B^n.
    """
    g = S.graph
    B = S.ball(m)
    idx, mats = _restricted_crossing(S, B)
    n = len(idx)
    s1 = frozenset(vertices_of(g, pair[0])) & B
    s2 = frozenset(vertices_of(g, pair[1])) & B
    bits = np.zeros(n, dtype=int)
    for v, i in idx.items():
        bits[i] = (1 if v in s1 else 0) | (2 if v in s2 else 0)
    QB = mats[-1] + mats[0] + mats[1]
    k = 8
    a = float(np.abs(np.linalg.matrix_power(QB, k)).sum(axis=1).max()) if n else 0.0
    if a >= 1:
        raise ScaleError("restricted walk is not strictly substochastic")

    def tail(L):
        return n * k * a ** ((L + 1) // k) / ((1 - a) * (L + 1))

    L = 1
    while tail(L) > tol and L < max_length:
        L += 1
    W = L // 2 + 1
    total = 0.0
    masks = [bits == b for b in range(4)]
    for r in range(n):
        P = np.zeros((2 * W + 1, 4, n))
        P[W, bits[r], r] = 1.0
        for step in range(1, L + 1):
            raw = P @ mats[0]
            raw[1:] += P[:-1] @ mats[1]
            raw[:-1] += P[1:] @ mats[-1]
            new = np.zeros_like(P)
            for f in range(4):
                for b in range(4):
                    new[:, f | b, masks[b]] += raw[:, f, masks[b]]
            P = new
            total += P[W, 3, r] / step
    return WindingEnumeration(total, tail(L), L)


# single-path law under independent loop-erased walks stopped outside B_N

def _prefix_probability(S: ScaleSystem, branch):
    """Probability that the loop-erased walk stopped on leaving B_N starts with ``branch``."""
    g = S.graph
    BN = S.ball(S.N)
    vs = vertices_of(g, branch)
    if len(set(vs)) != len(vs):
        return 0.0
    inside = [v for v in vs if v in BN]
    if len(inside) < len(vs) - 1 or (len(vs) > 1 and vs[-2] not in BN) or vs[0] not in BN:
        raise ScaleError("path must stay in B_N except possibly at its last vertex")
    q = g.path_q(branch[1])
    lm = log_mass_intersecting(g, [inside], BN, "all")
    if vs[-1] not in BN:
        return q * math.exp(lm)
    outside = frozenset(v for v in range(g.n) if v not in BN)
    dist = exit_distribution(g, vs[-1], outside | frozenset(inside))
    return q * math.exp(lm) * sum(p for v, p in dist.items() if v in outside)


def mu(S: ScaleSystem, pair):
    """Product of the two independent loop-erased-walk marginals."""
    return _prefix_probability(S, pair[0]) * _prefix_probability(S, pair[1])


# the measures lambda_m

def disjoint(S, pair):
    a = set(vertices_of(S.graph, pair[0])) - S.graph.boundary
    b = set(vertices_of(S.graph, pair[1])) - S.graph.boundary
    return not (a & b)


def _stops_at(S, pair, m):
    ball = S.ball(m)
    for start, es in pair:
        vs = vertices_of(S.graph, (start, es))
        if vs[-1] in ball or any(v not in ball for v in vs[:-1]):
            return False
    return True


def lambda_m(S: ScaleSystem, m, pair, M=DEFAULT_FOURIER):
    """exp(-unwound mass of loops in B_m meeting both paths) * 1{disjoint} * mu(pair), for a pair stopped on leaving B_m."""
    if not _stops_at(S, pair, m):
        raise ScaleError(f"pair does not stop at its first exit of B_{m}")
    if not disjoint(S, pair):
        return 0.0
    return math.exp(-unwound_pair_mass(S, m, pair, M)) * mu(S, pair)


def paths_to_exit(S: ScaleSystem, start, m, cap=DEFAULT_PAIR_CAP):
    """Every self-avoiding path from ``start`` up to its first vertex outside B_m."""
    g = S.graph
    ball = S.ball(m)
    out = []
    stack = [(start, (), frozenset([start]))]
    while stack:
        v, es, seen = stack.pop()
        for e in g.out_edges[v]:
            h = g.head[e]
            if h in seen:
                continue
            if h not in ball:
                out.append(es + (e,))
                if len(out) > cap:
                    raise PairCapExceeded(f"more than {cap} paths from {start}")
            else:
                stack.append((h, es + (e,), seen | {h}))
    return sorted(out)


class PairMeasures:
    """Cached lambda values over all pairs of A_n for one scale system."""

    def __init__(self, S: ScaleSystem, M=DEFAULT_FOURIER, cap=DEFAULT_PAIR_CAP):
        self.S = S
        self.M = M
        self.cap = cap
        self._pairs = {}
        self._groups = {}

    def pairs(self, n):
        """Disjoint pairs stopped on leaving B_n, with their lambda_n values."""
        if n not in self._pairs:
            S = self.S
            p1 = paths_to_exit(S, S.x1, n, self.cap)
            p2 = paths_to_exit(S, S.x2, n, self.cap)
            if len(p1) * len(p2) > self.cap:
                raise PairCapExceeded(f"{len(p1) * len(p2)} candidate pairs exceed cap {self.cap}")
            vals = {}
            for a in p1:
                for b in p2:
                    pair = ((S.x1, a), (S.x2, b))
                    if disjoint(S, pair):
                        vals[pair] = lambda_m(S, n, pair, self.M)
            self._pairs[n] = vals
        return self._pairs[n]

    def Z(self, n):
        return sum(self.pairs(n).values())

    def marginal(self, n, pair_m, m):
        """lambda_n summed over the pairs of A_n that start with ``pair_m`` (a pair of A_m)."""
        if m > n:
            raise ScaleError("need m <= n")
        key = tuple((s, tuple(es)) for s, es in pair_m)
        return self._grouped(n, m).get(key, 0.0)

    def _grouped(self, n, m):
        if (n, m) not in self._groups:
            acc = {}
            for p, v in self.pairs(n).items():
                k = restrict(self.S, p, m)
                acc[k] = acc.get(k, 0.0) + v
            self._groups[(n, m)] = acc
        return self._groups[(n, m)]

    def lam(self, m, pair_m):
        return lambda_m(self.S, m, pair_m, self.M)

    def h(self, m, pair_m):
        own = self.lam(m, pair_m)
        if own == 0:
            raise ZeroDivisionError("lambda_m vanishes on this pair")
        return self.marginal(self.S.N, pair_m, m) / own

    def transition_prob(self, m, pair_m, pair_next):
        """Chain step from a pair of A_m to an extension in A_{m+1}."""
        key = tuple((s, tuple(es)) for s, es in pair_m)
        if restrict(self.S, pair_next, m) != key:
            raise ScaleError("the new pair does not extend the old one")
        lm, hm = self.lam(m, pair_m), self.h(m, pair_m)
        if lm == 0 or hm == 0:
            raise ZeroDivisionError("zero denominator")
        return self.lam(m + 1, pair_next) / lm * self.h(m + 1, pair_next) / hm

    def extensions(self, m, pair_m):
        key = tuple((s, tuple(es)) for s, es in pair_m)
        return sorted(k for k in self._grouped(self.S.N, m + 1) if restrict(self.S, k, m) == key)


# separation

def _points(S, vs, region):
    return [S.graph.coords[v] for v in vs if v in region]


def _dist(P, R):
    if not P or not R:
        return math.inf
    a = np.asarray(P, dtype=float)
    b = np.asarray(R, dtype=float)
    return float(np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)).min())


def _annulus(S, lo, hi):
    return S.ball(hi) - S.ball(lo)


def sep_n(S: ScaleSystem, pair, n, c_sep=1 / 8):
    """Paths at distance >= c_sep 2^n delta within B_n minus B_{n-1/2}."""
    A = _annulus(S, n - 0.5, n)
    v1 = vertices_of(S.graph, pair[0])
    v2 = vertices_of(S.graph, pair[1])
    return disjoint(S, pair) and _dist(_points(S, v1, A), _points(S, v2, A)) >= c_sep * S.radius(n)


def sep_dot(S: ScaleSystem, tails, n):
    """End portions at distance >= 2^(n-1) delta within B_{n+1/2} minus B_n."""
    A = _annulus(S, n, n + 0.5)
    v1 = vertices_of(S.graph, tails[0])
    v2 = vertices_of(S.graph, tails[1])
    return _dist(_points(S, v1, A), _points(S, v2, A)) >= S.radius(n - 1)


def sep_mn(S: ScaleSystem, pair, m, n, c_sep=1 / 8):
    """Separation between scales m and n of a full pair."""
    d = decompose(S, pair, m, n)
    lo, hi = S.radius(m - 1), S.radius(n + 1)
    mids = [{S.graph.tail[e] for e in es} for _, es in d.middle]
    for mv in mids:
        for v in mv:
            if v in S.graph.boundary:
                continue
            r = S.norm(v)
            if not lo <= r <= hi:
                return False
    if not sep_n(S, d.first, m, c_sep) or not sep_dot(S, d.last, n):
        return False
    full = [set(vertices_of(S.graph, p)) - S.graph.boundary for p in pair]
    allv = S.graph.interior
    for i in (0, 1):
        P = _points(S, sorted(mids[i]), allv)
        R = _points(S, sorted(full[1 - i]), allv)
        if _dist(P, R) < S.radius(m - 2):
            return False
    return True


@dataclass
class SeparationReport:
    sep_m: bool
    sep_dot: bool
    sep_mn: bool


def separation_predicates(S: ScaleSystem, pair, m, n, c_sep=1 / 8) -> SeparationReport:
    d = decompose(S, pair, m, n)
    return SeparationReport(sep_n(S, d.first, m, c_sep), sep_dot(S, d.last, n), sep_mn(S, pair, m, n, c_sep))
