"""Wilson-type samplers for wired CRSFs, Temperleyan CRSFs and the dual-cycle reweighted law."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .surface import CRSFSample, Skeleton, dual_complement_cycles, forest_cycles, is_temperleyan
from .walk import StopSpec, as_uniforms, make_rng, run_lerw, thread_count

log = logging.getLogger(__name__)

LOW_ACCEPTANCE = 0.05


class TemperleyanRejection(RuntimeError):
    def __init__(self, attempts, accepted=0):
        rate = accepted / attempts if attempts else 0.0
        super().__init__(f"no Temperleyan skeleton in {attempts} attempts (empirical acceptance rate {rate:.3g})")
        self.attempts = attempts
        self.rate = rate


def _finish(graph, out, attempts=1, skeleton=None):
    cycles = forest_cycles(graph, out)
    s = CRSFSample(out, cycles, len(cycles), attempts=attempts, skeleton=skeleton)
    if graph.has_faces:
        kd, dc, diags = dual_complement_cycles(graph, out)
        s.K_dagger, s.dual_cycles, s.diagnostics = kd, dc, list(diags)
    return s


def _grow(graph, out, intree, order, uni, on_walk=None):
    stop = StopSpec(nc=True)
    keep = on_walk is not None
    for v in order:
        if intree[v]:
            continue
        res = run_lerw(graph, v, stop, uni, record=False, keep_trajectory=keep, stop_mask=intree)
        if keep:
            on_walk(res)
        for x, e in zip(res.vertices, res.edges):
            out[x] = e
            intree[x] = True


def _start(graph):
    out = [-1] * graph.n
    intree = [v in graph.boundary for v in range(graph.n)]
    return out, intree


def _order(graph, vertex_order):
    if vertex_order is None or vertex_order == "default":
        return list(graph.interior)
    order = list(vertex_order)
    missing = set(graph.interior) - set(order)
    if missing:
        raise ValueError(f"vertex order misses interior vertices {sorted(missing)[:5]}")
    return order


def sample_wired_crsf(graph, rng, vertex_order=None, on_walk=None) -> CRSFSample:
    """Wired oriented CRSF: loop-erased walks stopped on the boundary, the tree so far, or a noncontractible cycle.

    ``on_walk`` receives each walk record (with its trajectory) when given.
    """
    uni = as_uniforms(rng)
    out, intree = _start(graph)
    _grow(graph, out, intree, _order(graph, vertex_order), uni, on_walk)
    s = _finish(graph, out)
    if graph.punctures:
        from .surface import skeleton_of
        s.skeleton = skeleton_of(graph, out)
    return s


def sample_skeleton(graph, uni):
    """Branches from u_1, v_1, ..., u_k, v_k, each stopped on earlier branches."""
    out, intree = _start(graph)
    stop = StopSpec(nc=True)
    branches = []
    for p in graph.punctures:
        for x in (p.u, p.v):
            if intree[x]:
                branches.append(())
                continue
            res = run_lerw(graph, x, stop, uni, record=False, stop_mask=intree)
            branches.append(tuple(res.edges))
            for y, e in zip(res.vertices, res.edges):
                out[y] = e
                intree[y] = True
    return Skeleton(branches, [p.edge for p in graph.punctures]), out, intree


def sample_temperleyan(graph, rng, max_attempts=10000, vertex_order=None):
    """Temperleyan CRSF by skeleton-first rejection; returns ``(sample, attempts)``."""
    if max_attempts < 1:
        raise ValueError("max_attempts must be at least 1")
    uni = as_uniforms(rng)
    if not graph.punctures:
        return sample_wired_crsf(graph, uni, vertex_order), 1
    for attempt in range(1, max_attempts + 1):
        sk, out, intree = sample_skeleton(graph, uni)
        if not is_temperleyan(graph, sk):
            continue
        if attempt > 1 / LOW_ACCEPTANCE:
            log.warning("Temperleyan acceptance needed %d attempts on %s", attempt, graph.name)
        _grow(graph, out, intree, _order(graph, vertex_order), uni)
        s = _finish(graph, out, attempt, sk)
        return s, attempt
    raise TemperleyanRejection(max_attempts)


@dataclass
class WeightedEstimate:
    value: float
    ess: float
    stderr: float
    n: int


def ptemp_estimate(samples, f=lambda s: 1.0) -> WeightedEstimate:
    """Self-normalized estimate of E[f] under the law reweighted by 2^K_dagger."""
    samples = list(samples)
    if not samples:
        raise ValueError("no samples")
    if any(s.K_dagger < 0 for s in samples):
        raise ValueError("samples do not carry K_dagger")
    kd = np.array([s.K_dagger for s in samples], dtype=float)
    w = np.exp2(kd - kd.max())
    fx = np.array([float(f(s)) for s in samples])
    est = float((w * fx).sum() / w.sum())
    ess = float(w.sum() ** 2 / (w ** 2).sum())
    se = float(math.sqrt(((w * (fx - est)) ** 2).sum()) / w.sum())
    return WeightedEstimate(est, ess, se, len(samples))


def ptemp_estimates(samples, labels):
    """:func:`ptemp_estimate` of every indicator ``label(s) == c`` at once; returns ``{c: WeightedEstimate}``."""
    samples = list(samples)
    kd = np.array([s.K_dagger for s in samples], dtype=float)
    if kd.size == 0 or (kd < 0).any():
        raise ValueError("samples missing or without K_dagger")
    w = np.exp2(kd - kd.max())
    sw, sw2 = w.sum(), (w ** 2).sum()
    ess = float(sw ** 2 / sw2)
    groups = {}
    for i, s in enumerate(samples):
        groups.setdefault(labels(s), []).append(i)
    out = {}
    for c, idx in groups.items():
        wc = w[idx]
        est = wc.sum() / sw
        # sum of w^2 (1{c} - est)^2 split over members and non-members
        ssq = ((wc ** 2).sum() * (1 - est) ** 2 + (sw2 - (wc ** 2).sum()) * est ** 2)
        out[c] = WeightedEstimate(float(est), ess, float(math.sqrt(ssq) / sw), len(samples))
    return out


def good_algorithm_order(graph, H, center, r, j_max):
    """Vertex order with one vertex per cell of side (r/2) 6^-j inside the ball of radius 2^-j r.

    ``H`` is a collection of vertices, ``center`` a vertex id or a point.  In
    each cell the vertex farthest from the centre is chosen, lowest id on ties.
    """
    H = sorted(set(H))
    if not H:
        raise ValueError("empty region")
    if r <= 0:
        raise ValueError("radius must be positive")
    xy = np.asarray(graph.coords, dtype=float)
    c = xy[center] if isinstance(center, (int, np.integer)) else np.asarray(center, dtype=float)
    dist = {v: float(np.hypot(*(xy[v] - c))) for v in H}
    order, seen = [], set()
    for j in range(1, j_max + 1):
        side = (r / 2) * 6.0 ** (-j)
        cells = {}
        for v in H:
            if dist[v] > r * 2.0 ** (-j):
                continue
            key = (math.floor(xy[v, 0] / side), math.floor(xy[v, 1] / side))
            best = cells.get(key)
            if best is None or dist[v] > dist[best] or (dist[v] == dist[best] and v < best):
                cells[key] = v
        for key in sorted(cells):
            v = cells[key]
            if v not in seen:
                seen.add(v)
                order.append(v)
    return order


# batches

def _draw(args):
    graph, law, seed, jobs, max_attempts = args
    res = []
    for j in jobs:
        rng = make_rng(seed, j)
        if law == "wwils":
            s = sample_wired_crsf(graph, rng)
        else:
            s, _ = sample_temperleyan(graph, rng, max_attempts)
        res.append(s)
    return res


def sample_batch(graph, law, n, seed, threads=None, max_attempts=10000):
    """``n`` samples with one RNG stream per sample index, so results do not depend on the thread count.

    ``law`` is ``wwils``, ``wils`` or ``temp`` (``temp`` draws from ``wils``;
    weight by 2^K_dagger with :func:`ptemp_estimate`).
    """
    if law not in ("wwils", "wils", "temp"):
        raise ValueError(f"unknown law {law!r}")
    threads = threads or thread_count()
    idx = list(range(n))
    if threads <= 1 or n < 2 * threads:
        return _draw((graph, law, seed, idx, max_attempts))
    chunks = [idx[i::threads] for i in range(threads)]
    with ProcessPoolExecutor(threads) as ex:
        parts = list(ex.map(_draw, [(graph, law, seed, c, max_attempts) for c in chunks]))
    out = [None] * n
    for c, p in zip(chunks, parts):
        for i, s in zip(c, p):
            out[i] = s
    return out


@dataclass
class CycleStats:
    n: int
    tail: list  # P(K > k) for k = 0, 1, ...
    moment: float  # E[base^K]
    moment_se: float
    base: float


def cycle_count_stats(samples, base=2.0) -> CycleStats:
    ks = np.array([s.K for s in samples], dtype=float)
    if ks.size == 0:
        raise ValueError("no samples")
    top = int(ks.max())
    tail = [float((ks > k).mean()) for k in range(top + 1)]
    m = base ** ks
    return CycleStats(len(ks), tail, float(m.mean()), float(m.std(ddof=1) / math.sqrt(len(ks))) if len(ks) > 1 else 0.0, base)
