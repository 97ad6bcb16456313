"""SVG drawings of graphs and samples on their fundamental polygon, plus simple statistic charts."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Circle, Polygon  # noqa: E402

from .words import Z2, unoriented_key  # noqa: E402

plt.rcParams["svg.hashsalt"] = "crsf"
PALETTE = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]


def _polygon(graph):
    """Outline corners and side labels ``[(p, q, label)]`` in drawing coordinates."""
    kind = graph.polygon[0] if graph.polygon else "planar"
    if kind in ("torus", "holed-torus"):
        n = graph.polygon[1]
        sides = [((0, 0), (n, 0), "a"), ((n, 0), (n, n), "b"), ((n, n), (0, n), "a"), ((0, n), (0, 0), "b")]
        return [(0, 0), (n, 0), (n, n), (0, n)], sides
    if kind == "annulus":
        n, rows = graph.polygon[1], graph.polygon[2]
        h = rows + 1.0
        sides = [((n, 0), (n, h), "a"), ((0, h), (0, 0), "a")]
        return [(0, 0), (n, 0), (n, h), (0, h)], sides
    x0, y0, x1, y1 = graph.polygon[1] if graph.polygon else (
        graph.coords[:, 0].min() - 1, graph.coords[:, 1].min() - 1,
        graph.coords[:, 0].max() + 1, graph.coords[:, 1].max() + 1)
    if y0 == y1:
        y0, y1 = y0 - 1, y1 + 1
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)], []


def _shift(graph, word):
    """Translation of the head of an edge crossing the polygon sides."""
    kind = graph.polygon[0] if graph.polygon else "planar"
    if isinstance(graph.group, Z2):
        n = graph.polygon[1]
        return word[0] * n, word[1] * n
    dx = dy = 0.0
    if kind in ("holed-torus", "annulus"):
        n = graph.polygon[1]
        for c in word:
            s = 1 if c > 0 else -1
            if abs(c) == 1:
                dx += s * n
            else:
                dy += s * n
    return dx, dy


def _segments(graph, e, corners):
    """Line pieces for edge ``e``: one piece, or two when it wraps across identified sides."""
    t, h = graph.tail[e], graph.head[e]
    a = graph.coords[t]
    if h in graph.boundary:
        b = graph.coords[h]
        kind = graph.polygon[0] if graph.polygon else "planar"
        if kind == "holed-torus":
            # the hole sits at the identified corners; aim at the nearest one
            b = min(corners, key=lambda c: math.hypot(c[0] - a[0], c[1] - a[1]))
        else:
            # stub toward a nearby side; parallel boundary edges take successive sides
            x0, y0 = corners[0]
            x1, y1 = corners[2]
            sides = [(a[1] - y0, (0, -1)), (y1 - a[1], (0, 1))]
            if kind != "annulus":
                sides += [(a[0] - x0, (-1, 0)), (x1 - a[0], (1, 0))]
            sides.sort()
            rank = [f for f in graph.out_edges[t] if graph.head[f] in graph.boundary].index(e)
            d = sides[rank % len(sides)][1]
            b = (a[0] + 0.45 * d[0], a[1] + 0.45 * d[1])
        return [((a[0], a[1]), (b[0], b[1]))]
    b = graph.coords[h]
    dx, dy = _shift(graph, graph.label[e])
    if dx == 0 and dy == 0:
        return [((a[0], a[1]), (b[0], b[1]))]
    return [((a[0], a[1]), (b[0] + dx, b[1] + dy)), ((a[0] - dx, a[1] - dy), (b[0], b[1]))]


def _class_key(graph, word):
    return graph.group.format(unoriented_key(graph.group, word))


def _class_colors(graph, sample):
    """One colour per free homotopy class, orientation ignored."""
    colors = {}
    for c in sample.cycles:
        key = _class_key(graph, c.word)
        if key not in colors:
            colors[key] = PALETTE[len(colors) % len(PALETTE)]
    return colors


def render_sample(graph, sample, path, title=None):
    """Draw the polygon, the forest, its cycles by homotopy class, punctures and skeleton."""
    corners, sides = _polygon(graph)
    fig, ax = plt.subplots(figsize=(6, 6))
    poly = Polygon(corners, closed=True, fill=False, ec="black", lw=1.2)
    ax.add_patch(poly)
    clip = Polygon(corners, closed=True, fill=False, visible=False)
    ax.add_patch(clip)
    for p, q, lab in sides:
        mx, my = (p[0] + q[0]) / 2, (p[1] + q[1]) / 2
        ax.annotate("", xy=(mx + (q[0] - p[0]) * 0.05, my + (q[1] - p[1]) * 0.05), xytext=(mx, my),
                    arrowprops=dict(arrowstyle="->", color="gray"))
        ax.text(mx, my, f" {lab}", color="gray", fontsize=11)
    if graph.polygon and graph.polygon[0] == "holed-torus":
        for c in corners:
            disc = Circle(c, 0.3, fc="#dddddd", ec="gray", hatch="//", zorder=0)
            ax.add_patch(disc)
            disc.set_clip_path(clip)

    def draw(e, **kw):
        for (x0, y0), (x1, y1) in _segments(graph, e, corners):
            (ln,) = ax.plot([x0, x1], [y0, y1], solid_capstyle="round", **kw)
            ln.set_clip_path(clip)

    interior = [v for v in range(graph.n) if v not in graph.boundary]
    ax.scatter(graph.coords[interior, 0], graph.coords[interior, 1], s=8, c="black", zorder=3)
    if sample is not None:
        cyc_edges = {}
        colors = _class_colors(graph, sample)
        for c in sample.cycles:
            for e in c.edges:
                cyc_edges[e] = colors[_class_key(graph, c.word)]
        skel = set()
        if sample.skeleton is not None:
            skel = {e for b in sample.skeleton.branches for e in b}
        for v, e in enumerate(sample.out):
            if e < 0:
                continue
            if e in cyc_edges:
                draw(e, color=cyc_edges[e], lw=2.6, zorder=2)
            elif e in skel:
                draw(e, color="#333333", lw=2.2, zorder=2)
            else:
                draw(e, color="#888888", lw=1.0, zorder=1)
        for key, col in colors.items():
            ax.plot([], [], color=col, lw=2.6, label=f"class {key}")
        if colors:
            ax.legend(loc="upper right", fontsize=8)
    for p in graph.punctures:
        draw(p.edge, color="#ff7f0e", lw=1.5, ls="--", zorder=2)
        ax.scatter(graph.coords[[p.u, p.v], 0], graph.coords[[p.u, p.v], 1], s=40, marker="D",
                   c="#ff7f0e", zorder=4)
    xs = [c[0] for c in corners]
    ys = [c[1] for c in corners]
    ax.set_xlim(min(xs) - 0.6, max(xs) + 0.6)
    ax.set_ylim(min(ys) - 0.6, max(ys) + 0.6)
    ax.set_aspect("equal")
    ax.axis("off")
    if title:
        ax.set_title(title)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def render_series(path, xs, ys, lo=None, hi=None, xlabel="", ylabel="", title=None, logy=False):
    """Point chart with optional interval bars."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if lo is not None and hi is not None:
        ax.errorbar(xs, ys, yerr=[[y - a for y, a in zip(ys, lo)], [b - y for y, b in zip(ys, hi)]],
                    fmt="o-", capsize=3)
    else:
        ax.plot(xs, ys, "o-")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
