"""Small graph fixtures used by tests, suites and the CLI."""

from __future__ import annotations

from .surface import SurfaceGraph, SurfaceSpec
from .words import FreeGroup, Z2


class _Builder:
    def __init__(self, group):
        self.g = group
        self.edges = []

    def pair(self, u, v, label, w_uv=1.0, w_vu=1.0):
        a = len(self.edges)
        self.edges.append([u, v, w_uv, label, a + 1])
        self.edges.append([v, u, w_vu, self.g.inverse(label), a])
        return a, a + 1


def chain():
    """Boundary - x - y - boundary with unit weights: vertices 0=dL, 1=x, 2=y, 3=dR."""
    g = FreeGroup(0)
    b = _Builder(g)
    b.pair(1, 0, (), 1.0, 0.0)
    b.pair(1, 2, ())
    b.pair(2, 3, (), 1.0, 0.0)
    coords = [(0, 0), (1, 0), (2, 0), (3, 0)]
    return SurfaceGraph(g, coords, {0, 3}, b.edges, polygon=("planar", (0, 0, 3, 0)), name="chain")


def wired_patch(points, name="patch", boundary_xy=None):
    """Square-lattice patch wired to a single boundary vertex.

    Each missing lattice neighbour becomes a separate edge to the boundary
    vertex, so every interior vertex has exactly four unit-weight out-edges.
    The boundary vertex gets the last index.
    """
    g = FreeGroup(0)
    pts = sorted(points, key=lambda p: (p[1], p[0]))
    idx = {p: i for i, p in enumerate(pts)}
    bd = len(pts)
    b = _Builder(g)
    for (x, y) in pts:
        for dx, dy in ((1, 0), (0, 1), (-1, 0), (0, -1)):
            nb = (x + dx, y + dy)
            if nb in idx:
                if (dx, dy) in ((1, 0), (0, 1)):
                    b.pair(idx[(x, y)], idx[nb], ())
            else:
                b.pair(idx[(x, y)], bd, (), 1.0, 0.0)
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    if boundary_xy is None:
        boundary_xy = (min(xs) - 1, min(ys) - 1)
    coords = [p for p in pts] + [boundary_xy]
    return SurfaceGraph(g, coords, {bd}, b.edges,
                        polygon=("planar", (min(xs) - 1, min(ys) - 1, max(xs) + 1, max(ys) + 1)), name=name)


def wired_grid(n):
    """n x n wired grid; vertex (i, j) has index i + n*j, the boundary vertex is n*n."""
    g = wired_patch([(i, j) for i in range(n) for j in range(n)], name=f"grid{n}")
    return g


def wired_disc(n):
    """n x n grid wired to one boundary vertex (index n*n), with its faces.

    Boundary-facing sides get one spoke each; the strip between two spokes and
    the corner 2-gons are faces, so the closed-up surface is a sphere.
    """
    if n < 2:
        raise ValueError("wired_disc needs n >= 2")
    g = FreeGroup(0)
    b = _Builder(g)
    bd = n * n
    right, up, spoke = {}, {}, {}
    for j in range(n):
        for i in range(n):
            v = i + n * j
            if i < n - 1:
                right[(i, j)] = b.pair(v, v + 1, ())[0]
            if j < n - 1:
                up[(i, j)] = b.pair(v, v + n, ())[0]
            for side, cond in (("L", i == 0), ("R", i == n - 1), ("D", j == 0), ("U", j == n - 1)):
                if cond:
                    spoke[(i, j, side)] = b.pair(v, bd, (), 1.0, 0.0)[0]

    def tw(e):
        return b.edges[e][4]

    faces = []
    for j in range(n - 1):
        for i in range(n - 1):
            faces.append([right[(i, j)], up[(i + 1, j)], tw(right[(i, j + 1)]), tw(up[(i, j)])])
    for i in range(n - 1):
        faces.append([tw(right[(i, 0)]), spoke[(i, 0, "D")], tw(spoke[(i + 1, 0, "D")])])
        faces.append([right[(i, n - 1)], spoke[(i + 1, n - 1, "U")], tw(spoke[(i, n - 1, "U")])])
    for j in range(n - 1):
        faces.append([up[(0, j)], spoke[(0, j + 1, "L")], tw(spoke[(0, j, "L")])])
        faces.append([tw(up[(n - 1, j)]), spoke[(n - 1, j, "R")], tw(spoke[(n - 1, j + 1, "R")])])
    # corners: the spoke pair not used by the strips
    for (i, j), (a, c) in {(0, 0): ("L", "D"), (n - 1, 0): ("D", "R"),
                           (n - 1, n - 1): ("R", "U"), (0, n - 1): ("U", "L")}.items():
        faces.append([spoke[(i, j, a)], tw(spoke[(i, j, c)])])
    coords = [(i, j) for j in range(n) for i in range(n)] + [(-1, -1)]
    return SurfaceGraph(g, coords, {bd}, b.edges, [(f, True) for f in faces],
                        polygon=("planar", (-1, -1, n, n)), name=f"disc{n}")


def tiny_disc():
    """4 x 4 grid minus its corners, wired; used by the scale-system apparatus."""
    pts = [(i, j) for i in range(4) for j in range(4) if (i in (0, 3)) + (j in (0, 3)) < 2]
    return wired_patch(pts, name="tinydisc")


def star(weights=((1.0, 2.0), (1.0, 1.0, 3.0))):
    """Interior vertices that all neighbour the boundary.

    Vertex 0 is the boundary; interior vertex i+1 has its own edges to the
    boundary (weights given per vertex) and one edge to every other interior vertex.
    """
    g = FreeGroup(0)
    k = len(weights)
    b = _Builder(g)
    for i, ws in enumerate(weights):
        for w in ws:
            b.pair(i + 1, 0, (), w, 0.0)
    for i in range(k):
        for j in range(i + 1, k):
            b.pair(i + 1, j + 1, ())
    coords = [(0, 0)] + [(1 + i, 1) for i in range(k)]
    return SurfaceGraph(g, coords, {0}, b.edges, polygon=("planar", (0, 0, k + 1, 1)), name="star")


def _torus_edges(b, n, a_lab, b_lab, ident):
    right, up = {}, {}
    for j in range(n):
        for i in range(n):
            v = i + n * j
            right[(i, j)] = b.pair(v, (i + 1) % n + n * j, a_lab if i == n - 1 else ident)[0]
            up[(i, j)] = b.pair(v, i + n * ((j + 1) % n), b_lab if j == n - 1 else ident)[0]
    return right, up


def _square(b, right, up, n, i, j):
    return [right[(i, j)], up[((i + 1) % n, j)],
            b.edges[right[(i, (j + 1) % n)]][4], b.edges[up[(i, j)]][4]]


def torus(n):
    """n x n square grid on the flat torus; vertex (i, j) sits at (i+.25, j+.25)."""
    g = Z2()
    b = _Builder(g)
    right, up = _torus_edges(b, n, (1, 0), (0, 1), (0, 0))
    faces = [(_square(b, right, up, n, i, j), True) for j in range(n) for i in range(n)]
    coords = [(i + 0.25, j + 0.25) for j in range(n) for i in range(n)]
    return SurfaceGraph(g, coords, set(), b.edges, faces, spec=SurfaceSpec(1, 0),
                        polygon=("torus", n), name=f"torus{n}")


def holed_torus(n):
    """n x n torus with the corner face (reading the commutator) replaced by a wired hole.

    The four corners of the removed face get a spoke to the boundary vertex
    (index n*n).  One puncture edge runs diagonally across face (0, 0).
    """
    g = FreeGroup(2)
    b = _Builder(g)
    right, up = _torus_edges(b, n, (1,), (2,), ())
    bd = n * n
    faces = []
    for j in range(n):
        for i in range(n):
            sq = _square(b, right, up, n, i, j)
            if (i, j) != (n - 1, n - 1):
                faces.append((sq, True))
                continue
            spoke = {}
            for e in sq:
                u = b.edges[e][0]
                if u not in spoke:
                    spoke[u] = b.pair(u, bd, (), 1.0, 0.0)
            for e in sq:
                u, v = b.edges[e][0], b.edges[e][1]
                faces.append(([e, spoke[v][0], spoke[u][1]], False))
    coords = [(i + 0.25, j + 0.25) for j in range(n) for i in range(n)] + [(n - 0.5 + 0.25, n - 0.5 + 0.25)]
    return SurfaceGraph(g, coords, {bd}, b.edges, faces, punctures=[(0, 0, 1 + n)],
                        spec=SurfaceSpec(1, 1), polygon=("holed-torus", n), name=f"holedtorus{n}")


def annulus(n, rows):
    """Cylinder of circumference n with ``rows`` rows, wired inside (index n*rows) and outside (n*rows+1)."""
    g = FreeGroup(1)
    b = _Builder(g)
    inner, outer = n * rows, n * rows + 1
    right, up = {}, {}
    for j in range(rows):
        for i in range(n):
            v = i + n * j
            right[(i, j)] = b.pair(v, (i + 1) % n + n * j, (1,) if i == n - 1 else ())[0]
            if j < rows - 1:
                up[(i, j)] = b.pair(v, v + n, ())[0]
    sin = {i: b.pair(i, inner, (), 1.0, 0.0) for i in range(n)}
    sout = {i: b.pair(i + n * (rows - 1), outer, (), 1.0, 0.0) for i in range(n)}
    faces = []
    for j in range(rows - 1):
        for i in range(n):
            faces.append(([right[(i, j)], up[((i + 1) % n, j)], b.edges[right[(i, j + 1)]][4],
                           b.edges[up[(i, j)]][4]], True))
    for i in range(n):
        ip = (i + 1) % n
        faces.append(([sin[ip][1], b.edges[right[(i, 0)]][4], sin[i][0]], False))
        faces.append(([right[(i, rows - 1)], sout[ip][0], sout[i][1]], False))
    coords = [(i + 0.25, j + 1.0) for j in range(rows) for i in range(n)] + [(n / 2, 0.0), (n / 2, rows + 1.0)]
    return SurfaceGraph(g, coords, {inner, outer}, b.edges, faces, spec=SurfaceSpec(0, 2),
                        polygon=("annulus", n, rows), name=f"annulus{n}x{rows}")


def by_name(name):
    """Resolve fixture names such as ``chain``, ``grid4``, ``disc3``, ``torus3``, ``holedtorus2``, ``annulus4x3``."""
    import re

    if name == "chain":
        return chain()
    if name == "star":
        return star()
    if name == "tinydisc":
        return tiny_disc()
    m = re.fullmatch(r"(grid|disc|torus|holedtorus)(\d+)", name)
    if m:
        return {"grid": wired_grid, "disc": wired_disc, "torus": torus,
                "holedtorus": holed_torus}[m.group(1)](int(m.group(2)))
    m = re.fullmatch(r"annulus(\d+)x(\d+)", name)
    if m:
        return annulus(int(m.group(1)), int(m.group(2)))
    raise KeyError(f"unknown fixture {name!r}")
