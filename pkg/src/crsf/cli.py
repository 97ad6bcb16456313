"""Command line: sample, verify, stats, render."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from collections import Counter

from . import fixtures
from .io import GraphFormatError, graph_hash, load_graph, read_sample_header, read_samples, write_samples
from .walk import make_rng
from .words import Z2, unoriented_key


def resolve_graph(spec: str):
    """A graph file path, or the name of a bundled fixture."""
    if os.path.exists(spec):
        return load_graph(spec)
    try:
        return fixtures.by_name(spec)
    except KeyError:
        raise SystemExit(f"error: {spec!r} is neither a graph file nor a fixture name "
                         "(chain, star, tinydisc, gridN, torusN, holedtorusN, annulusNxM)") from None


def _tsv(rows, header):
    lines = ["\t".join(header)]
    for r in rows:
        lines.append("\t".join(f"{x:.6g}" if isinstance(x, float) else str(x) for x in r))
    return "\n".join(lines) + "\n"


# commands

def cmd_sample(args):
    from .wilson import sample_batch

    graph = resolve_graph(args.graph)
    t = time.time()
    samples = sample_batch(graph, args.law, args.n, args.seed, args.threads, args.max_attempts)
    attempts = sum(s.attempts for s in samples)
    header = {"graph": args.graph, "law": args.law, "seed": args.seed, "n": args.n,
              "acceptance_rate": (args.n / attempts) if attempts else None}
    write_samples(args.out, graph, samples, header=header)
    if args.law == "temp":
        _add_weights(args.out)
    rate = header["acceptance_rate"]
    print(f"wrote {len(samples)} samples to {args.out} in {time.time() - t:.2f}s"
          + (f"; acceptance rate {rate:.4g}" if rate is not None else ""))
    return 0


def _add_weights(path):
    """Attach the importance weight 2^K_dagger to every record."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    out = [lines[0]]
    for line in lines[1:]:
        rec = json.loads(line)
        rec["weight"] = 2.0 ** rec["K_dagger"]
        out.append(json.dumps(rec))
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def cmd_verify(args):
    from .suites import ExperimentRecord, run_suite

    graph = resolve_graph(args.graph) if args.graph else None
    opts = {}
    if args.n is not None:
        opts["n"] = args.n
    t = time.time()
    res = run_suite(args.suite, graph, args.seed, **opts)
    for c in res.checks:
        status = "PASS" if c.passed else "FAIL"
        extra = f" ({c.detail})" if c.detail else ""
        print(f"{status}  {c.name}: {c.value:.6g} (limit {c.threshold:.3g}){extra}")
    print(f"suite {res.suite}: {'PASS' if res.passed else 'FAIL'} in {res.seconds:.1f}s")
    if args.record:
        from dataclasses import asdict

        rec = ExperimentRecord("verify", graph_hash(graph) if graph else "bundled", args.seed,
                               {"suite": args.suite, "graph": args.graph, **opts},
                               [asdict(res)], time.time() - t)
        with open(args.record, "w") as fh:
            fh.write(rec.to_json() + "\n")
    return 0 if res.passed else 1


def _stats_samples(args, graph):
    from .wilson import sample_batch

    return sample_batch(graph, args.law, args.n, args.seed, args.threads, args.max_attempts)


def stats_table(metric, graph, samples=None, n=None, seed=None, qs=(1.5, 2.0, 3.0)):
    """Rows and header for one statistic, plus chart data ``(xs, ys, lo, hi, xlabel, ylabel, logy)``."""
    z = 1.96
    if metric == "K-tail":
        ks = [s.K for s in samples]
        top = max(ks)
        rows = []
        for k in range(top + 1):
            p = sum(1 for x in ks if x > k) / len(ks)
            se = math.sqrt(p * (1 - p) / len(ks))
            rows.append((k, p, max(p - z * se, 0.0), min(p + z * se, 1.0)))
        chart = ([r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows], [r[3] for r in rows],
                 "k", "P(K > k)", False)
        return rows, ("k", "P(K>k)", "lo95", "hi95"), chart
    if metric == "qK-moment":
        from .wilson import cycle_count_stats

        rows = []
        for q in qs:
            st = cycle_count_stats(samples, q)
            rows.append((q, st.moment, st.moment_se, st.moment - z * st.moment_se, st.moment + z * st.moment_se))
        chart = ([r[0] for r in rows], [r[1] for r in rows], [r[3] for r in rows], [r[4] for r in rows],
                 "q", "E[q^K]", False)
        return rows, ("q", "E[q^K]", "stderr", "lo95", "hi95"), chart
    if metric == "cycle-classes":
        g = graph.group
        counts = Counter()
        for s in samples:
            seen = set()
            for c in s.cycles:
                seen.add(_unsigned_class(g, c.word))
            for key in seen:
                counts[key] += 1
        rows = []
        for key, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
            p = c / len(samples)
            se = math.sqrt(p * (1 - p) / len(samples))
            rows.append((key, c, p, max(p - z * se, 0.0), min(p + z * se, 1.0)))
        chart = (list(range(len(rows))), [r[2] for r in rows], [r[3] for r in rows], [r[4] for r in rows],
                 "class rank", "P(class present)", False)
        return rows, ("class", "count", "freq", "lo95", "hi95"), chart
    if metric == "crossing":
        from .walk import crossing_probability_estimate

        rect, sb, tb = crossing_geometry(graph)
        est = crossing_probability_estimate(graph, rect, sb, tb, n, make_rng(seed))
        rows = []
        for v in sorted(est.per_start):
            lo, hi = est.ci(v)
            rows.append((v, est.per_start[v], max(lo, 0.0), min(hi, 1.0)))
        chart = ([r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows], [r[3] for r in rows],
                 "start vertex", "P(cross)", False)
        return rows, ("start", "p", "lo95", "hi95"), chart
    raise ValueError(f"unknown metric {metric!r}")


def _unsigned_class(g, word):
    """Name of a free homotopy class up to orientation; torus classes get a positive leading entry."""
    if isinstance(g, Z2):
        return g.format(max(word, g.inverse(word)))
    return g.format(unoriented_key(g, word))


def crossing_geometry(graph):
    """Rectangle spanning the interior vertices, start ball at its left end, target ball at its right end."""
    xy = graph.coords
    pts = [xy[v] for v in graph.interior]
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    w = x1 - x0
    cy = (y0 + y1) / 2
    r = max(w / 6, 0.5)
    return (x0, y0, x1, y1), (x0, cy, r), (x1, cy, r)


def cmd_stats(args):
    from .render import render_series

    graph = resolve_graph(args.graph)
    samples = None if args.metric == "crossing" else _stats_samples(args, graph)
    rows, header, chart = stats_table(args.metric, graph, samples, args.n, args.seed)
    text = _tsv(rows, header)
    sys.stdout.write(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"{args.metric}.tsv"), "w") as fh:
            fh.write(text)
        xs, ys, lo, hi, xl, yl, logy = chart
        render_series(os.path.join(args.out, f"{args.metric}.svg"), xs, ys, lo, hi, xl, yl,
                      title=f"{args.metric} on {graph.name} (n={args.n}, seed={args.seed})", logy=logy)
    return 0


def cmd_render(args):
    from .render import render_sample

    header = read_sample_header(args.sample)
    spec = args.graph or (header or {}).get("graph")
    if spec is None:
        raise SystemExit("error: the sample file names no graph; pass --graph")
    graph = resolve_graph(spec)
    if header and header.get("graph_hash") not in (None, graph_hash(graph)):
        raise SystemExit(f"error: sample file was written for a different graph than {spec!r}")
    _, samples = read_samples(args.sample, graph)
    if not samples:
        render_sample(graph, None, args.out, title=f"{graph.name} (no samples)")
        print(f"wrote polygon-only figure to {args.out}")
        return 0
    if not 0 <= args.index < len(samples):
        raise SystemExit(f"error: index {args.index} out of range (file has {len(samples)} samples)")
    s = samples[args.index]
    render_sample(graph, s, args.out, title=f"{graph.name}  K={s.K}")
    print(f"wrote {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="crsf", description="Cycle-rooted spanning forests on surface graphs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def sampling(sp, seed_required=True):
        sp.add_argument("--graph", required=True, help="graph file or fixture name")
        sp.add_argument("--law", choices=["wwils", "wils", "temp"], default="wils")
        sp.add_argument("--n", type=int, default=1000)
        sp.add_argument("--seed", type=int, required=seed_required)
        sp.add_argument("--threads", type=int, default=None, help="worker processes (default: CRSF_THREADS, else 1)")
        sp.add_argument("--max-attempts", type=int, default=10000)

    sp = sub.add_parser("sample", help="draw CRSF samples to a JSON-lines file")
    sampling(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sample)

    from .suites import SUITES

    sp = sub.add_parser("verify", help="run a verification suite; exit code 0 iff every check passes")
    sp.add_argument("--suite", required=True, choices=sorted(SUITES))
    sp.add_argument("--graph", default=None, help="graph file or fixture name (default: the suite's fixtures)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n", type=int, default=None, help="Monte Carlo sample count for sampling suites")
    sp.add_argument("--record", default=None, help="write an experiment record (JSON) here")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("stats", help="empirical statistics with 95%% intervals, as TSV")
    sp.add_argument("--metric", required=True, choices=["K-tail", "qK-moment", "cycle-classes", "crossing"])
    sampling(sp)
    sp.add_argument("--out", default=None, help="directory for <metric>.tsv and <metric>.svg")
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("render", help="draw one sample as SVG")
    sp.add_argument("--sample", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--graph", default=None, help="override the graph named in the sample file")
    sp.add_argument("--index", type=int, default=0)
    sp.set_defaults(func=cmd_render)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except GraphFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
