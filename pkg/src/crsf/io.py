"""Text format for surface graphs, JSON-lines sample records and oracle tables.

Graph files look like::

    crsf-graph 1
    name holedtorus2
    group free 2
    surface 1 1
    polygon ["holed-torus", 2]
    boundary 4
    [vertices] 5
    0 0.25 0.25
    ...
    [edges] 24
    0 0 1 1.0 1 1
    ...
    [faces] 7
    0 1 0 6 9 3
    ...
    [punctures] 1
    0 0 3
    end

An edge row is ``id tail head weight word twin`` (``twin`` is -1 when absent);
a face row is ``id disc edge...``.  Words use the group's own notation: ``p,q``
on the torus, letters on free groups (``a`` generator, ``A`` inverse, ``1``
identity).  Auxiliary puncture edges are never written; the loader rebuilds
them from the puncture table.
"""

from __future__ import annotations

import hashlib
import json
import math

from .surface import CRSFSample, Cycle, Skeleton, SurfaceGraph, SurfaceSpec
from .words import FreeGroup, Z2

MAGIC = "crsf-graph 1"


class GraphFormatError(ValueError):
    def __init__(self, line, msg):
        super().__init__(f"line {line}: {msg}")
        self.line = line


# graphs

def _group_line(group):
    if isinstance(group, Z2):
        return "group z2"
    return f"group free {group.rank}"


def serialize_graph(graph: SurfaceGraph) -> str:
    g = graph.group
    naux = 2 * len(graph.punctures)
    m = graph.m - naux
    lines = [MAGIC, f"name {graph.name or 'unnamed'}", _group_line(g)]
    if graph.spec is not None:
        lines.append(f"surface {graph.spec.genus} {graph.spec.boundary_components}")
    if graph.polygon is not None:
        lines.append("polygon " + json.dumps(list(graph.polygon)))
    lines.append("boundary " + " ".join(str(b) for b in sorted(graph.boundary)))
    lines.append(f"[vertices] {graph.n}")
    for v in range(graph.n):
        x, y = graph.coords[v]
        lines.append(f"{v} {float(x)!r} {float(y)!r}")
    lines.append(f"[edges] {m}")
    for e in range(m):
        lines.append(f"{e} {graph.tail[e]} {graph.head[e]} {graph.weight[e]!r} {g.format(graph.label[e])} {graph.twin[e]}")
    lines.append(f"[faces] {len(graph.base_faces)}")
    for i, (f, d) in enumerate(graph.base_faces):
        lines.append(f"{i} {int(d)} " + " ".join(str(e) for e in f))
    lines.append(f"[punctures] {len(graph.punctures)}")
    for p in graph.punctures:
        lines.append(f"{p.face} {p.u} {p.v}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def graph_hash(graph: SurfaceGraph) -> str:
    return hashlib.sha256(serialize_graph(graph).encode()).hexdigest()[:16]


def _tuplify(x):
    return tuple(_tuplify(y) for y in x) if isinstance(x, list) else x


def parse_graph(text: str) -> SurfaceGraph:
    rows = [(i + 1, ln.split("#", 1)[0].strip()) for i, ln in enumerate(text.splitlines())]
    rows = [(i, ln) for i, ln in rows if ln]
    if not rows or rows[0][1] != MAGIC:
        raise GraphFormatError(rows[0][0] if rows else 1, f"expected header {MAGIC!r}")
    pos = 1
    header = {}
    group = None
    while pos < len(rows) and not rows[pos][1].startswith("["):
        ln, t = rows[pos]
        key, _, rest = t.partition(" ")
        if key == "group":
            parts = rest.split()
            if parts == ["z2"]:
                group = Z2()
            elif len(parts) == 2 and parts[0] == "free" and parts[1].isdigit():
                group = FreeGroup(int(parts[1]))
            else:
                raise GraphFormatError(ln, f"unknown group {rest!r}")
        elif key in ("name", "surface", "polygon", "boundary"):
            header[key] = (ln, rest)
        else:
            raise GraphFormatError(ln, f"unknown header field {key!r}")
        pos += 1
    if group is None:
        raise GraphFormatError(rows[min(pos, len(rows) - 1)][0], "missing group line")

    def section(name, width):
        nonlocal pos
        if pos >= len(rows):
            raise GraphFormatError(rows[-1][0], f"missing section [{name}]")
        ln, t = rows[pos]
        parts = t.split()
        if len(parts) != 2 or parts[0] != f"[{name}]" or not parts[1].isdigit():
            raise GraphFormatError(ln, f"expected '[{name}] <count>'")
        count = int(parts[1])
        pos += 1
        out = []
        for k in range(count):
            if pos >= len(rows):
                raise GraphFormatError(rows[-1][0], f"section [{name}] ends after {k} of {count} rows")
            ln, t = rows[pos]
            parts = t.split()
            if parts[0].startswith("[") or parts[0] == "end":
                raise GraphFormatError(ln, f"section [{name}] has {k} rows, header says {count}")
            if width is not None and len(parts) != width:
                raise GraphFormatError(ln, f"[{name}] row needs {width} fields, got {len(parts)}")
            out.append((ln, parts))
            pos += 1
        return out

    def num(ln, s, kind=int):
        try:
            v = kind(s)
        except ValueError:
            raise GraphFormatError(ln, f"bad number {s!r}") from None
        if kind is float and not math.isfinite(v):
            raise GraphFormatError(ln, f"non-finite number {s!r}")
        return v

    verts = section("vertices", 3)
    coords = []
    for k, (ln, p) in enumerate(verts):
        if num(ln, p[0]) != k:
            raise GraphFormatError(ln, f"vertex ids must be 0..n-1 in order (expected {k})")
        coords.append((num(ln, p[1], float), num(ln, p[2], float)))
    edges = []
    for k, (ln, p) in enumerate(section("edges", 6)):
        if num(ln, p[0]) != k:
            raise GraphFormatError(ln, f"edge ids must be 0..m-1 in order (expected {k})")
        try:
            w = group.parse(p[4])
        except ValueError as exc:
            raise GraphFormatError(ln, str(exc)) from None
        edges.append([num(ln, p[1]), num(ln, p[2]), num(ln, p[3], float), w, num(ln, p[5])])
    faces = []
    for k, (ln, p) in enumerate(section("faces", None)):
        if len(p) < 3:
            raise GraphFormatError(ln, "face row needs an id, a disc flag and at least one edge")
        if num(ln, p[0]) != k:
            raise GraphFormatError(ln, f"face ids must be 0..f-1 in order (expected {k})")
        faces.append(([num(ln, x) for x in p[2:]], bool(num(ln, p[1]))))
    punct = [tuple(num(ln, x) for x in p) for ln, p in section("punctures", 3)]
    if pos >= len(rows) or rows[pos][1] != "end":
        raise GraphFormatError(rows[min(pos, len(rows) - 1)][0], "expected 'end'")
    boundary = []
    if "boundary" in header:
        ln, rest = header["boundary"]
        boundary = [num(ln, x) for x in rest.split()]
    spec = None
    if "surface" in header:
        ln, rest = header["surface"]
        parts = rest.split()
        if len(parts) != 2:
            raise GraphFormatError(ln, "surface line needs genus and boundary count")
        try:
            spec = SurfaceSpec(num(ln, parts[0]), num(ln, parts[1]))
        except ValueError as exc:
            raise GraphFormatError(ln, str(exc)) from None
    polygon = None
    if "polygon" in header:
        ln, rest = header["polygon"]
        try:
            polygon = _tuplify(json.loads(rest))
        except json.JSONDecodeError:
            raise GraphFormatError(ln, "polygon must be JSON") from None
    name = header.get("name", (0, ""))[1]
    try:
        return SurfaceGraph(group, coords, boundary, edges, faces, punct, spec=spec, polygon=polygon, name=name)
    except (ValueError, IndexError) as exc:
        raise GraphFormatError(rows[0][0], f"invalid graph: {exc}") from None


def load_graph(path) -> SurfaceGraph:
    with open(path) as fh:
        return parse_graph(fh.read())


def save_graph(graph, path):
    with open(path, "w") as fh:
        fh.write(serialize_graph(graph))


def graphs_equal(a: SurfaceGraph, b: SurfaceGraph) -> bool:
    """Structural identity of two graphs."""
    return (a.group == b.group and a.n == b.n and (a.coords == b.coords).all() and a.boundary == b.boundary
            and a.tail == b.tail and a.head == b.head and a.weight == b.weight and a.label == b.label
            and a.twin == b.twin and a.base_faces == b.base_faces and a.punctures == b.punctures
            and a.spec == b.spec and a.polygon == b.polygon)


# samples

def sample_record(graph, s: CRSFSample, **meta) -> dict:
    g = graph.group
    rec = dict(meta)
    rec.update({
        "out": list(s.out),
        "cycles": [{"edges": list(c.edges), "class": g.format(c.word)} for c in s.cycles],
        "K": s.K,
        "K_dagger": s.K_dagger,
        "attempts": s.attempts,
    })
    if s.skeleton is not None:
        rec["skeleton"] = {"branches": [list(b) for b in s.skeleton.branches], "aux": list(s.skeleton.aux)}
    if s.dual_cycles:
        rec["dual_cycles"] = [{"faces": list(f), "class": g.format(w)} for f, w in s.dual_cycles]
    if s.diagnostics:
        rec["diagnostics"] = list(s.diagnostics)
    return rec


def sample_from_record(graph, rec: dict) -> CRSFSample:
    g = graph.group
    sk = None
    if "skeleton" in rec:
        sk = Skeleton([tuple(b) for b in rec["skeleton"]["branches"]], list(rec["skeleton"]["aux"]))
    return CRSFSample(
        list(rec["out"]),
        [Cycle(tuple(c["edges"]), g.parse(c["class"])) for c in rec.get("cycles", [])],
        rec["K"], rec.get("K_dagger", -1), sk, rec.get("attempts", 1),
        [(list(d["faces"]), g.parse(d["class"])) for d in rec.get("dual_cycles", [])],
        list(rec.get("diagnostics", [])),
    )


SAMPLES_MAGIC = "crsf-samples 1"


def write_samples(path, graph, samples, header=None, **meta):
    """One JSON record per line, after a header line naming the format and the graph."""
    head = {"format": SAMPLES_MAGIC, "graph_name": graph.name, "graph_hash": graph_hash(graph)}
    head.update(header or {})
    with open(path, "w") as fh:
        fh.write(json.dumps(head) + "\n")
        for i, s in enumerate(samples):
            fh.write(json.dumps(sample_record(graph, s, index=i, **meta)) + "\n")


def _records(path):
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GraphFormatError(ln, f"bad JSON record: {exc.msg}") from None
            if not isinstance(rec, dict):
                raise GraphFormatError(ln, "record must be a JSON object")
            yield ln, rec


def read_sample_header(path):
    """The header record, or ``None`` for files without one."""
    for _, rec in _records(path):
        return rec if rec.get("format") == SAMPLES_MAGIC else None
    return None


def read_samples(path, graph=None):
    """Return ``(records, samples)``; samples need the graph for word parsing."""
    recs = []
    for ln, rec in _records(path):
        if rec.get("format") == SAMPLES_MAGIC:
            continue
        if "out" not in rec or "K" not in rec:
            raise GraphFormatError(ln, "sample record needs 'out' and 'K'")
        recs.append((ln, rec))
    samples = None
    if graph is not None:
        samples = []
        for ln, r in recs:
            try:
                samples.append(sample_from_record(graph, r))
            except (KeyError, ValueError, TypeError) as exc:
                raise GraphFormatError(ln, f"bad sample record: {exc}") from None
    return [r for _, r in recs], samples


# oracle tables

def table_to_json(graph, table) -> str:
    """Serialize a branch law (edge tuple -> probability) or a CRSF table."""
    from .exactdist import BranchDistribution, CRSFTable

    if isinstance(table, BranchDistribution):
        body = {"kind": "branch", "start": table.start,
                "rows": [[list(k), p, table.reasons.get(k, "")] for k, p in sorted(table.probs.items())]}
    elif isinstance(table, CRSFTable):
        body = {"kind": "crsf", "law": table.law, "interior": table.interior,
                "rows": [[list(k), p, table.K[k], table.K_dagger[k]] for k, p in sorted(table.probs.items())]}
    else:
        raise TypeError("unsupported table type")
    body["graph"] = graph_hash(graph)
    return json.dumps(body)


def table_from_json(text):
    from .exactdist import BranchDistribution, CRSFTable

    d = json.loads(text)
    if d["kind"] == "branch":
        probs = {tuple(k): p for k, p, _ in d["rows"]}
        reasons = {tuple(k): r for k, _, r in d["rows"]}
        return BranchDistribution(d["start"], probs, reasons)
    probs = {tuple(k): p for k, p, _, _ in d["rows"]}
    return CRSFTable(d["law"], probs, {tuple(k): K for k, _, K, _ in d["rows"]},
                     {tuple(k): kd for k, _, _, kd in d["rows"]}, d["interior"])
