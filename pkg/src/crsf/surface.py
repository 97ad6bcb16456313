"""Graph-discretized surfaces and their topology.

A :class:`SurfaceGraph` is a weighted directed graph drawn on a fundamental
polygon.  Every directed edge carries a crossing label in the fundamental group
(a :mod:`crsf.words` word) and, when the graph comes with faces, a twin edge
running the other way.  Faces are cyclic lists of directed edges and together
form a combinatorial map of the closed surface obtained by collapsing each
boundary circle to its boundary vertex.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .words import FreeGroup, Z2, product


class SurfaceError(ValueError):
    pass


class ClosedHighGenusError(SurfaceError):
    pass


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class SurfaceSpec:
    genus: int
    boundary_components: int

    def __post_init__(self):
        g, b = self.genus, self.boundary_components
        if g < 0 or b < 0:
            raise SurfaceError("genus and boundary count must be nonnegative")
        if b == 0 and g >= 2:
            raise ClosedHighGenusError(
                f"closed surface of genus {g}: word problem not supported (use a bordered surface)"
            )
        if 2 - 2 * g - b > 0:
            raise SurfaceError(f"euler characteristic {2 - 2 * g - b} > 0: sphere and disc are not supported")

    @property
    def euler_char(self):
        return 2 - 2 * self.genus - self.boundary_components

    @property
    def puncture_count(self):
        return -self.euler_char

    @property
    def group_kind(self):
        if self.boundary_components == 0:
            return "torus-Z2"
        return f"free-group({2 * self.genus + self.boundary_components - 1})"

    def group(self):
        if self.boundary_components == 0:
            return Z2()
        return FreeGroup(2 * self.genus + self.boundary_components - 1)


@dataclass(frozen=True)
class Puncture:
    face: int
    u: int
    v: int
    edge: int  # auxiliary edge u -> v
    faces: tuple = ()


class SurfaceGraph:
    """Immutable surface graph.

    ``edges`` is a list of ``(tail, head, weight, label, twin)``; ``faces`` a list
    of ``(edge_ids, disc_flag)``; ``punctures`` a list of ``(face, u, v)`` whose
    faces get subdivided by a zero-weight auxiliary edge.
    """

    def __init__(self, group, coords, boundary, edges, faces=(), punctures=(), spec=None,
                 polygon=None, name=""):
        self.group = group
        self.spec = spec
        self.name = name
        self.polygon = polygon
        self.coords = np.asarray(coords, dtype=float).reshape(-1, 2)
        self.n = len(self.coords)
        self.boundary = frozenset(int(b) for b in boundary)
        self.tail = [int(e[0]) for e in edges]
        self.head = [int(e[1]) for e in edges]
        self.weight = [float(e[2]) for e in edges]
        self.label = [group.check(e[3]) for e in edges]
        self.twin = [int(e[4]) for e in edges]
        self.aux = [False] * len(edges)
        self.base_faces = [(tuple(int(x) for x in f), bool(d)) for f, d in faces]
        self.faces = [f for f, _ in self.base_faces]
        self.disc = [d for _, d in self.base_faces]
        self.punctures = []
        for f, u, v in punctures:
            self._split_face(int(f), int(u), int(v))
        self.m = len(self.tail)
        self._index()
        self.validate()

    # construction helpers
    def _split_face(self, f, u, v):
        if f < 0 or f >= len(self.faces):
            raise GraphError(f"puncture face {f} does not exist")
        bd = self.faces[f]
        tails = [self.tail[e] for e in bd]
        if u == v or u not in tails or v not in tails:
            raise GraphError(f"puncture vertices {u}, {v} are not two distinct corners of face {f}")
        i, j = tails.index(u), tails.index(v)
        r = len(bd)
        seq = [bd[(i + k) % r] for k in range((j - i) % r)]
        rest = [bd[(j + k) % r] for k in range((i - j) % r)]
        w = product(self.group, [self.label[e] for e in seq])
        a = len(self.tail)
        self.tail += [u, v]
        self.head += [v, u]
        self.weight += [0.0, 0.0]
        self.label += [w, self.group.inverse(w)]
        self.twin += [a + 1, a]
        self.aux += [True, True]
        self.faces[f] = tuple(seq) + (a + 1,)
        self.faces.append(tuple(rest) + (a,))
        self.disc.append(self.disc[f])
        self.punctures.append(Puncture(f, u, v, a, (f, len(self.faces) - 1)))

    def _index(self):
        n = self.n
        self.out_edges = [[] for _ in range(n)]
        self.all_out = [[] for _ in range(n)]
        for e in range(self.m):
            self.all_out[self.tail[e]].append(e)
            if self.weight[e] > 0:
                self.out_edges[self.tail[e]].append(e)
        self.out_weight = [sum(self.weight[e] for e in self.out_edges[v]) for v in range(n)]
        self.q = [self.weight[e] / self.out_weight[self.tail[e]] if self.weight[e] > 0 else 0.0
                  for e in range(self.m)]
        self.cum = []
        for v in range(n):
            c, acc = [], 0.0
            for e in self.out_edges[v]:
                acc += self.q[e]
                c.append(acc)
            if c:
                c[-1] = 1.0
            self.cum.append(c)
        self.interior = [v for v in range(n) if v not in self.boundary]
        self.face_of = {}
        for fi, bd in enumerate(self.faces):
            for p, e in enumerate(bd):
                self.face_of[e] = (fi, p)
        self.planar = isinstance(self.group, FreeGroup) and self.group.rank == 0

    @property
    def has_faces(self):
        return bool(self.faces)

    def validate(self):
        g = self.group
        for e in range(self.m):
            if not (0 <= self.tail[e] < self.n and 0 <= self.head[e] < self.n):
                raise GraphError(f"edge {e} has an endpoint outside the vertex table")
            if self.weight[e] < 0:
                raise GraphError(f"edge {e} has negative weight")
            t = self.twin[e]
            if t >= 0:
                if t >= self.m or self.twin[t] != e:
                    raise GraphError(f"edge {e}: twin relation is not symmetric")
                if self.tail[t] != self.head[e] or self.head[t] != self.tail[e]:
                    raise GraphError(f"edge {e}: twin does not reverse it")
                if self.label[t] != g.inverse(self.label[e]):
                    raise GraphError(f"edge {e}: twin label is not the inverse")
        for v in range(self.n):
            if v in self.boundary:
                if self.out_weight[v] != 0:
                    raise GraphError(f"boundary vertex {v} has positive outgoing weight")
            elif self.out_weight[v] <= 0:
                raise GraphError(f"interior vertex {v} has no outgoing weight")
        if not self.faces:
            return
        seen = {}
        for fi, bd in enumerate(self.faces):
            if not bd:
                raise GraphError(f"face {fi} is empty")
            for k, e in enumerate(bd):
                if e in seen:
                    raise GraphError(f"edge {e} appears in faces {seen[e]} and {fi}")
                seen[e] = fi
                nxt = bd[(k + 1) % len(bd)]
                if self.head[e] != self.tail[nxt]:
                    raise GraphError(f"face {fi}: edge {e} does not chain into edge {nxt}")
            if self.disc[fi] and not g.is_identity(product(g, [self.label[e] for e in bd])):
                raise GraphError(f"disc face {fi} has a nontrivial boundary word")
        for e in range(self.m):
            if e not in seen:
                raise GraphError(f"edge {e} belongs to no face")
            if self.twin[e] < 0:
                raise GraphError(f"edge {e} has no twin although faces are given")

    # basic quantities
    def step_index(self, v, u):
        """Index into ``out_edges[v]`` selected by a uniform ``u``."""
        return bisect.bisect_right(self.cum[v], u)

    def path_q(self, edges):
        out = 1.0
        for e in edges:
            out *= self.q[e]
        return out

    def path_vertices(self, start, edges):
        vs = [start]
        for e in edges:
            if self.tail[e] != vs[-1]:
                raise GraphError(f"edge {e} does not continue the path at vertex {vs[-1]}")
            vs.append(self.head[e])
        return vs

    def key(self, e):
        """Undirected edge key."""
        t = self.twin[e]
        return e if t < 0 or e < t else t

    def undirected_edges(self):
        return sorted({self.key(e) for e in range(self.m)})

    def euler_closed(self):
        """Euler characteristic of the closed surface (boundary circles collapsed)."""
        return self.n - len(self.undirected_edges()) + len(self.faces)

    def euler(self):
        return self.euler_closed() - len(self.boundary)

    def __repr__(self):
        return f"SurfaceGraph({self.name or 'unnamed'}, n={self.n}, m={self.m}, group={self.group})"


# words along paths and loops

def loop_class(graph, edges):
    """Fundamental-group class of a closed edge sequence (up to conjugation)."""
    edges = list(edges)
    if not edges:
        raise GraphError("empty loop")
    for a, b in zip(edges, edges[1:] + edges[:1]):
        if graph.head[a] != graph.tail[b]:
            raise GraphError(f"edge sequence is not closed at edge {a} -> {b}")
    return product(graph.group, [graph.label[e] for e in edges])


def is_contractible(graph, edges):
    return graph.group.is_identity(loop_class(graph, edges))


def reroot(graph, edges, v):
    """Rotate a closed edge sequence so that it starts at vertex ``v``."""
    edges = list(edges)
    for i, e in enumerate(edges):
        if graph.tail[e] == v:
            return edges[i:] + edges[:i]
    raise GraphError(f"vertex {v} is not on the loop")


def is_wilson_contractible(graph, edges):
    """Chronological loop erasure from the root; true iff every erased loop is contractible."""
    edges = list(edges)
    loop_class(graph, edges)  # validates closedness
    g = graph.group
    root = graph.tail[edges[0]]
    path, words, pos = [root], [g.identity], {root: 0}
    for e in edges:
        w = g.compose(words[-1], graph.label[e])
        h = graph.head[e]
        k = pos.get(h)
        if k is None:
            pos[h] = len(path)
            path.append(h)
            words.append(w)
            continue
        if w != words[k]:
            return False
        for x in path[k + 1:]:
            del pos[x]
        del path[k + 1:]
        del words[k + 1:]
    return True


def is_eta_contractible(graph, edges, paths):
    """Wilson-contractibility re-rooted at the first point of the ordered paths on the loop."""
    support = {graph.tail[e] for e in edges}
    for p in paths:
        for v in p:
            if v in support:
                return is_wilson_contractible(graph, reroot(graph, edges, v))
    return False


# skeletons and complements

@dataclass
class Skeleton:
    branches: list  # edge tuples, in the order u1, v1, ..., uk, vk
    aux: list  # auxiliary puncture edge ids

    def edge_set(self, graph):
        m = len(graph.twin)
        for e in [e for b in self.branches for e in b] + list(self.aux):
            if not 0 <= e < m:
                raise GraphError(f"skeleton edge {e} is not an edge of {graph.name}")
        keys = {graph.key(e) for b in self.branches for e in b}
        keys |= {graph.key(e) for e in self.aux}
        return keys


@dataclass
class Component:
    faces: list
    chi: int
    boundary_circles: int


class _DSU:
    def __init__(self):
        self.p = {}

    def find(self, x):
        p = self.p
        p.setdefault(x, x)
        root = x
        while p[root] != root:
            root = p[root]
        while p[x] != root:
            p[x], x = root, p[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.p[ra] = rb


def _cut_surface(graph, kset):
    if not graph.has_faces:
        raise GraphError("topology queries need a graph with faces")
    for k in kset:
        if not (0 <= k < graph.m):
            raise GraphError(f"skeleton edge {k} not in graph")
    bset = graph.boundary
    faces = graph.faces
    fdsu = _DSU()
    for fi in range(len(faces)):
        fdsu.find(fi)
    pdsu = _DSU()

    def corner(fi, i):
        bd = faces[fi]
        i %= len(bd)
        return (fi, i, graph.head[bd[i]] in bset)

    def end_pt(e):
        fi, p = graph.face_of[e]
        c = corner(fi, p)
        return ("in", fi, c[1]) if c[2] else ("c", fi, c[1])

    def start_pt(e):
        fi, p = graph.face_of[e]
        c = corner(fi, p - 1)
        return ("out", fi, c[1]) if c[2] else ("c", fi, c[1])

    points_of_face = {}
    for fi, bd in enumerate(faces):
        pts = []
        for i in range(len(bd)):
            if graph.head[bd[i]] in bset:
                pts += [("in", fi, i), ("out", fi, i)]
            else:
                pts.append(("c", fi, i))
        for pt in pts:
            pdsu.find(pt)
        points_of_face[fi] = pts
    for k in graph.undirected_edges():
        if k in kset:
            continue
        t = graph.twin[k]
        fdsu.union(graph.face_of[k][0], graph.face_of[t][0])
        pdsu.union(end_pt(k), start_pt(t))
        pdsu.union(start_pt(k), end_pt(t))
    return fdsu, pdsu, points_of_face, start_pt, end_pt


def complement_components(graph, skeleton):
    """Components of the surface cut along the skeleton, with Euler characteristic and boundary count."""
    kset = skeleton.edge_set(graph) if isinstance(skeleton, Skeleton) else set(skeleton)
    fdsu, pdsu, pof, start_pt, end_pt = _cut_surface(graph, kset)
    comps = {}
    for fi in range(len(graph.faces)):
        comps.setdefault(fdsu.find(fi), []).append(fi)
    bdsu = _DSU()
    for k in kset:
        for e in (k, graph.twin[k]):
            bdsu.union(pdsu.find(start_pt(e)), pdsu.find(end_pt(e)))
    for fi, bd in enumerate(graph.faces):
        for i in range(len(bd)):
            if graph.head[bd[i]] in graph.boundary:
                bdsu.union(pdsu.find(("in", fi, i)), pdsu.find(("out", fi, i)))
    out = []
    for root, fl in sorted(comps.items(), key=lambda kv: min(kv[1])):
        fset = set(fl)
        pts = {pdsu.find(p) for fi in fl for p in pof[fi]}
        ne = 0
        for k in graph.undirected_edges():
            fa = graph.face_of[k][0]
            fb = graph.face_of[graph.twin[k]][0]
            if k in kset:
                ne += (fa in fset) + (fb in fset)
            elif fa in fset:
                ne += 1
        arcs = sum(1 for fi in fl for e in graph.faces[fi] if graph.head[e] in graph.boundary)
        chi = len(pts) - (ne + arcs) + len(fl)
        bpts = {p for p in pts if p in bdsu.p}
        circles = len({bdsu.find(p) for p in bpts})
        out.append(Component(sorted(fl), chi, circles))
    return out


def euler_balance(graph, skeleton):
    """(sum of component chi) - chi(cut preimage) + chi(skeleton), to compare with chi(M)."""
    kset = skeleton.edge_set(graph) if isinstance(skeleton, Skeleton) else set(skeleton)
    comps = complement_components(graph, kset)
    _, pdsu, _, start_pt, end_pt = _cut_surface(graph, kset)
    sides = [e for k in kset for e in (k, graph.twin[k])]
    pre_pts = {pdsu.find(p) for e in sides for p in (start_pt(e), end_pt(e))}
    chi_pre = len(pre_pts) - len(sides)
    kv = set()
    for k in kset:
        for e in (k, graph.twin[k]):
            h = graph.head[e]
            kv.add(("b", e) if h in graph.boundary else ("v", h))
    chi_k = len(kv) - len(kset)
    return sum(c.chi for c in comps) - chi_pre + chi_k


def is_temperleyan(graph, skeleton):
    comps = complement_components(graph, skeleton)
    ok = all(c.chi == 0 for c in comps)
    if ok and any(c.boundary_circles not in (0, 2) for c in comps):
        raise AssertionError("chi = 0 component without two boundary circles")
    return ok


# forests

@dataclass
class Cycle:
    edges: tuple
    word: tuple


@dataclass
class CRSFSample:
    out: list  # out-edge per vertex, -1 on boundary vertices
    cycles: list = field(default_factory=list)
    K: int = 0
    K_dagger: int = -1
    skeleton: Skeleton = None
    attempts: int = 1
    dual_cycles: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def edges(self):
        return [e for e in self.out if e >= 0]


def forest_cycles(graph, out):
    """Cycles of an out-edge map, each listed from its smallest vertex."""
    state = [0] * graph.n
    cycles = []
    for s in range(graph.n):
        if state[s] or out[s] < 0:
            continue
        trail, v = [], s
        while v not in graph.boundary and state[v] == 0:
            state[v] = 1
            trail.append(v)
            v = graph.head[out[v]]
        if v not in graph.boundary and state[v] == 1:
            i = trail.index(v)
            cyc = trail[i:]
            j = cyc.index(min(cyc))
            cyc = cyc[j:] + cyc[:j]
            es = tuple(out[x] for x in cyc)
            cycles.append(Cycle(es, loop_class(graph, es)))
        for x in trail:
            state[x] = 2
    return cycles


def branch_of(graph, out, v):
    """Edges followed from ``v`` until a boundary vertex or the first repeated vertex."""
    seen, es = {v}, []
    while v not in graph.boundary:
        e = out[v]
        es.append(e)
        v = graph.head[e]
        if v in seen:
            break
        seen.add(v)
    return tuple(es)


def skeleton_of(graph, out):
    branches = []
    for p in graph.punctures:
        branches.append(branch_of(graph, out, p.u))
        branches.append(branch_of(graph, out, p.v))
    return Skeleton(branches, [p.edge for p in graph.punctures])


def check_forest(graph, out):
    """Raise unless ``out`` is a wired CRSF: one out-edge per interior vertex, all cycles noncontractible."""
    for v in range(graph.n):
        if v in graph.boundary:
            if out[v] != -1:
                raise GraphError(f"boundary vertex {v} has an out-edge")
        elif out[v] < 0 or graph.tail[out[v]] != v or graph.weight[out[v]] <= 0:
            raise GraphError(f"vertex {v} has no valid out-edge")
    cycles = forest_cycles(graph, out)
    for c in cycles:
        if graph.group.is_identity(c.word):
            raise GraphError(f"contractible cycle {c.edges}")
    return cycles


# dual complement

def _face_prefix_words(graph):
    """Per face, the word from its first corner to each dart's tail, with boundary arcs closing faces."""
    g = graph.group
    res = []
    for fi, bd in enumerate(graph.faces):
        bcorners = [i for i, e in enumerate(bd) if graph.head[e] in graph.boundary]
        arc = {}
        if len(bcorners) == 1:
            i = bcorners[0]
            r = len(bd)
            # arc word closes the truncated face
            total = product(g, [graph.label[bd[(i + 1 + k) % r]] for k in range(r)])
            arc[i] = g.inverse(total)
        elif len(bcorners) > 1:
            res.append(None)
            continue
        pre, acc = [], g.identity
        for i, e in enumerate(bd):
            pre.append(acc)
            acc = g.compose(acc, graph.label[e])
            if i in arc:
                acc = g.compose(acc, arc[i])
        res.append(pre)
    return res


def dual_complement_cycles(graph, out):
    """Cycles of the dual graph restricted to duals of edges absent from the forest.

    Returns ``(K_dagger, cycles, diagnostics)`` where cycles are ``(face list, word)``
    for the noncontractible residual cycles after peeling dual leaves.
    """
    g = graph.group
    present = {graph.key(e) for e in out if e >= 0}
    present |= {graph.key(p.edge) for p in graph.punctures}
    pre = _face_prefix_words(graph)
    diags = []
    adj = {fi: [] for fi in range(len(graph.faces))}
    dedges = []
    for k in graph.undirected_edges():
        if k in present:
            continue
        t = graph.twin[k]
        fa, pa = graph.face_of[k]
        fb, pb = graph.face_of[t]
        if pre[fa] is None or pre[fb] is None:
            word = None
        else:
            word = g.compose(g.compose(pre[fa][pa], graph.label[k]), g.inverse(pre[fb][pb]))
        idx = len(dedges)
        dedges.append((fa, fb, word))
        adj[fa].append(idx)
        adj[fb].append(idx)
    alive = [True] * len(dedges)
    deg = {f: len(v) for f, v in adj.items()}
    for f, es in adj.items():
        deg[f] = sum(2 if dedges[i][0] == dedges[i][1] else 1 for i in es)
    stack = [f for f, d in deg.items() if d == 1]
    while stack:
        f = stack.pop()
        if deg[f] != 1:
            continue
        for i in adj[f]:
            if alive[i]:
                alive[i] = False
                a, b, _ = dedges[i]
                deg[a] -= 1
                deg[b] -= 1
                o = b if a == f else a
                if deg[o] == 1:
                    stack.append(o)
                break
    # residual components
    live_faces = [f for f in adj if deg[f] > 0]
    seen = set()
    cycles = []
    kd = 0
    for f0 in live_faces:
        if f0 in seen:
            continue
        comp, st = [], [f0]
        seen.add(f0)
        while st:
            f = st.pop()
            comp.append(f)
            for i in adj[f]:
                if alive[i]:
                    a, b, _ = dedges[i]
                    o = b if a == f else a
                    if o not in seen:
                        seen.add(o)
                        st.append(o)
        ce = {i for f in comp for i in adj[f] if alive[i]}
        if any(deg[f] != 2 for f in comp) or len(ce) != len(comp):
            diags.append(f"dual residue component at faces {sorted(comp)} is not a simple cycle")
            kd += len(ce) - len(comp) + 1
            continue
        # walk the cycle
        order, words = [f0 if f0 in comp else comp[0]], []
        start = order[0]
        prev_edge, f = None, start
        while True:
            nxt = [i for i in adj[f] if alive[i] and i != prev_edge]
            if not nxt:
                nxt = [prev_edge]
            i = nxt[0]
            a, b, w = dedges[i]
            if w is None:
                words = None
            elif words is not None:
                words.append(w if a == f else g.inverse(w))
            f = b if a == f else a
            prev_edge = i
            if f == start:
                break
            order.append(f)
        if words is None:
            diags.append(f"dual cycle through faces {order} crosses a face with several boundary corners")
            kd += 1
            continue
        word = product(g, words)
        if g.is_identity(word):
            diags.append(f"contractible dual residue through faces {order}")
            continue
        kd += 1
        cycles.append((order, word))
    return kd, cycles, diags
