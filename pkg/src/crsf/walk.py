"""Random walk, chronological loop erasure and the noncontractible stopping rule."""

from __future__ import annotations

import bisect
import math
import os
from dataclasses import dataclass, field

import numpy as np

DEFAULT_STEP_CAP = 10**8


class WalkError(RuntimeError):
    pass


def make_rng(seed: int, job: int = 0) -> np.random.Generator:
    """Independent stream determined by (seed, job)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(job),))))


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("CRSF_THREADS", "1")))
    except ValueError:
        return 1


class Uniforms:
    """Buffered uniform draws from a numpy generator."""

    def __init__(self, rng, block=4096):
        self.rng = rng
        self.block = block
        self.buf = rng.random(block)
        self.i = 0

    def __call__(self):
        if self.i == self.block:
            self.buf = self.rng.random(self.block)
            self.i = 0
        u = self.buf[self.i]
        self.i += 1
        return u

    @property
    def generator(self):
        return self.rng


def as_uniforms(rng):
    return rng if isinstance(rng, Uniforms) else Uniforms(rng)


def step(graph, v, rng):
    """One transition out of ``v``: edge chosen with probability w(e)/sum of out-weights."""
    if not graph.out_edges[v]:
        raise WalkError(f"cannot step from vertex {v}: no outgoing weight")
    u = rng() if isinstance(rng, Uniforms) else rng.random()
    return graph.out_edges[v][graph.step_index(v, u)]


@dataclass
class ErasedLoop:
    root: int
    edges: tuple
    q: float
    word: tuple

    @property
    def length(self):
        return len(self.edges)


@dataclass
class StopSpec:
    """When a loop-erased walk stops.

    Boundary vertices always stop the walk.  ``targets`` is an extra vertex set
    (e.g. branches sampled earlier) and ``nc`` stops at the first noncontractible
    simple loop.
    """

    targets: frozenset = frozenset()
    nc: bool = True
    step_cap: int = DEFAULT_STEP_CAP


@dataclass
class LERWResult:
    start: int
    vertices: list
    edges: list
    words: list
    reason: str  # "boundary", "target", "nc-cycle"
    cycle: tuple = None
    loops: list = field(default_factory=list)
    trajectory: list = None
    push_times: list = None
    steps: int = 0

    @property
    def branch(self):
        return tuple(self.edges)


def run_lerw(graph, start, stop: StopSpec, rng, record=True, keep_trajectory=False, stop_mask=None):
    """Loop-erased walk from ``start`` with cumulative words stored per path vertex.

    ``stop_mask`` is an optional boolean list marking extra stop vertices; it is
    read but never modified.  With ``keep_trajectory`` the raw edge sequence and
    the step at which each final path vertex joined the path are returned.
    """
    if start in graph.boundary:
        raise WalkError(f"start vertex {start} is a boundary vertex")
    uni = as_uniforms(rng)
    g = graph.group
    head, label, outs, cum = graph.head, graph.label, graph.out_edges, graph.cum
    bd = graph.boundary
    targets = stop.targets
    nc = stop.nc
    trivial = graph.planar
    path = [start]
    pedges = []
    words = [g.identity]
    pos = {start: 0}
    pushes = [0]
    loops = [] if record else None
    traj = [] if keep_trajectory else None
    if start in targets or (stop_mask is not None and stop_mask[start]):
        return LERWResult(start, path, pedges, words, "target", None, loops or [], traj, pushes, 0)
    v = start
    t = 0
    cap = stop.step_cap
    br = bisect.bisect_right
    while True:
        if t >= cap:
            raise WalkError(f"step cap {cap} reached from start {start} (path length {len(path)})")
        u = uni()
        e = outs[v][br(cum[v], u)]
        t += 1
        if traj is not None:
            traj.append(e)
        h = head[e]
        w = words[-1] if trivial else g.compose(words[-1], label[e])
        if h in bd:
            pedges.append(e)
            return LERWResult(start, path + [h], pedges, words + [w], "boundary", None, loops or [], traj, pushes + [t], t)
        k = pos.get(h)
        if k is not None:
            if nc and not trivial and w != words[k]:
                pedges.append(e)
                cyc = tuple(pedges[k:])
                return LERWResult(start, path + [h], pedges, words + [w], "nc-cycle", cyc, loops or [], traj, pushes, t)
            if record:
                es = tuple(pedges[k:]) + (e,)
                qv = 1.0
                for x in es:
                    qv *= graph.q[x]
                loops.append(ErasedLoop(h, es, qv, _loop_word(g, words[k], w)))
            for x in path[k + 1:]:
                del pos[x]
            del path[k + 1:]
            del pedges[k:]
            del words[k + 1:]
            del pushes[k + 1:]
            v = h
            continue
        if h in targets or (stop_mask is not None and stop_mask[h]):
            pedges.append(e)
            return LERWResult(start, path + [h], pedges, words + [w], "target", None, loops or [], traj, pushes + [t], t)
        pos[h] = len(path)
        path.append(h)
        pedges.append(e)
        words.append(w)
        pushes.append(t)
        v = h


def _loop_word(g, w_start, w_end):
    return g.compose(g.inverse(w_start), w_end)


def replay(graph, start, trajectory, stop: StopSpec, stop_mask=None):
    """Re-run erasure on a recorded edge sequence; returns the same result as the original run."""
    choice = []
    for e in trajectory:
        v = graph.tail[e]
        i = graph.out_edges[v].index(e)
        lo = graph.cum[v][i - 1] if i else 0.0
        choice.append((lo + graph.cum[v][i]) / 2)
    return run_lerw(graph, start, stop, _Replay(choice), record=True, keep_trajectory=True, stop_mask=stop_mask)


class _Replay(Uniforms):
    def __init__(self, values):
        self.values = iter(values)

    def __call__(self):
        try:
            return next(self.values)
        except StopIteration:
            raise WalkError("recorded trajectory ended before the walk stopped") from None


def decomposition_replay(graph, start, trajectory):
    """Chronological simple-loop decomposition of a raw edge sequence without any stopping."""
    g = graph.group
    path, pedges, words, pos = [start], [], [g.identity], {start: 0}
    out = []
    for e in trajectory:
        h = graph.head[e]
        w = g.compose(words[-1], graph.label[e])
        k = pos.get(h)
        if k is None:
            pos[h] = len(path)
            path.append(h)
            pedges.append(e)
            words.append(w)
            continue
        es = tuple(pedges[k:]) + (e,)
        out.append((h, es, _loop_word(g, words[k], w)))
        for x in path[k + 1:]:
            del pos[x]
        del path[k + 1:]
        del pedges[k:]
        del words[k + 1:]
    return out, pedges


@dataclass
class CrossingEstimate:
    per_start: dict
    minimum: float
    n: int

    def ci(self, v, z=1.96):
        p = self.per_start[v]
        s = math.sqrt(max(p * (1 - p), 0.0) / self.n)
        return (p - z * s, p + z * s)


def crossing_probability_estimate(graph, rect, start_ball, target_ball, n, rng, step_cap=10**7):
    """Fraction of walks from each start-ball vertex that hit the target ball before leaving the rectangle.

    ``rect`` is ``(x0, y0, x1, y1)``; balls are ``(cx, cy, r)`` in polygon coordinates.
    """
    xy = graph.coords
    x0, y0, x1, y1 = rect
    inside = [(x0 <= xy[v, 0] <= x1 and y0 <= xy[v, 1] <= y1) and v not in graph.boundary for v in range(graph.n)]
    if sum(inside) < 2:
        raise WalkError("rectangle contains fewer than two vertices")

    def ball(b):
        cx, cy, r = b
        return [v for v in range(graph.n) if inside[v] and math.hypot(xy[v, 0] - cx, xy[v, 1] - cy) <= r]

    starts = ball(start_ball)
    if not starts:
        raise WalkError("no graph vertex in the start ball")
    target = set(ball(target_ball))
    uni = as_uniforms(rng)
    est = {}
    for s in starts:
        if s in target:
            est[s] = 1.0
            continue
        hits = 0
        for _ in range(n):
            v, t = s, 0
            while True:
                e = step(graph, v, uni)
                v = graph.head[e]
                t += 1
                if v in target:
                    hits += 1
                    break
                if not inside[v] or t >= step_cap:
                    break
        est[s] = hits / n
    return CrossingEstimate(est, min(est.values()), n)
