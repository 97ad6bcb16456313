import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crsf import fixtures as F
from crsf.exactdist import (
    StateCapExceeded, branch_vertices, enumerate_crsf_distribution, exact_branch_law, exact_pair_law,
)
from crsf.walk import (
    StopSpec, Uniforms, WalkError, crossing_probability_estimate, decomposition_replay, make_rng, replay,
    run_lerw, step,
)


def _q_matrix(G, A):
    idx = {v: i for i, v in enumerate(sorted(A))}
    Q = np.zeros((len(idx), len(idx)))
    for v in idx:
        for e in G.out_edges[v]:
            if G.head[e] in idx:
                Q[idx[v], idx[G.head[e]]] += G.q[e]
    return idx, Q


def _lerw_path_probability(G, start, branch):
    """Product of step probabilities times Green diagonals of the shrinking domains."""
    vs = branch_vertices(G, start, branch)
    D = set(G.interior)
    p = G.path_q(branch)
    for v in vs[:-1]:
        idx, Q = _q_matrix(G, D)
        p *= np.linalg.inv(np.eye(len(idx)) - Q)[idx[v], idx[v]]
        D.discard(v)
    return p


def _tree_sum(G):
    """Total weight of out-forests rooted at the boundary, by the matrix-tree theorem."""
    idx = {v: i for i, v in enumerate(G.interior)}
    L = np.zeros((len(idx), len(idx)))
    for v, i in idx.items():
        for e in G.out_edges[v]:
            L[i, i] += G.weight[e]
            if G.head[e] in idx:
                L[i, idx[G.head[e]]] -= G.weight[e]
    return float(np.linalg.det(L))


def _weight_sum_table(G, tab):
    tot = 0.0
    for key in tab.probs:
        w = 1.0
        for e in key:
            w *= G.weight[e]
        tot += w
    return tot


# rng and steps

def test_streams_reproducible_and_distinct():
    a = make_rng(4, 2).random(5)
    assert np.array_equal(a, make_rng(4, 2).random(5))
    assert not np.array_equal(a, make_rng(4, 3).random(5))
    assert not np.array_equal(a, make_rng(5, 2).random(5))


def test_step_frequencies_follow_weights():
    G = F.star()
    rng = Uniforms(make_rng(1))
    v = 2
    n = 40000
    cnt = Counter(step(G, v, rng) for _ in range(n))
    tot = sum(G.weight[e] for e in G.out_edges[v])
    for e in G.out_edges[v]:
        p = G.weight[e] / tot
        assert abs(cnt[e] / n - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_boundary_start_rejected():
    G = F.chain()
    with pytest.raises(WalkError):
        run_lerw(G, 0, StopSpec(), make_rng(0))


# exact branch laws

def test_chain_branch_law_by_hand():
    G = F.chain()
    law = exact_branch_law(G, 1)
    to_left = (next(e for e in G.out_edges[1] if G.head[e] == 0),)
    assert law[to_left] == pytest.approx(2 / 3, rel=1e-12)
    assert len(law) == 2 and law.total() == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("name,start", [("grid3", 4), ("grid3", 0), ("grid4", 5), ("star", 1), ("disc3", 4)])
def test_planar_branch_law_matches_green_product(name, start):
    G = F.by_name(name)
    law = exact_branch_law(G, start)
    assert law.total() == pytest.approx(1.0, rel=1e-10)
    for b, p in law.items():
        assert p == pytest.approx(_lerw_path_probability(G, start, b), rel=1e-9)


@pytest.mark.parametrize("name", ["torus2", "torus3", "holedtorus2", "annulus4x3"])
def test_surface_branch_law_normalized(name):
    G = F.by_name(name)
    law = exact_branch_law(G, G.interior[0])
    assert law.total() == pytest.approx(1.0, rel=1e-10)
    for b, reason in law.reasons.items():
        vs = branch_vertices(G, G.interior[0], b)
        if reason == "nc-cycle":
            assert vs[-1] in vs[:-1]
        else:
            assert len(set(vs)) == len(vs)


def test_torus_branches_all_close_noncontractible_cycles():
    G = F.torus(3)
    law = exact_branch_law(G, 0)
    assert set(law.reasons.values()) == {"nc-cycle"}


def test_monte_carlo_matches_exact_law():
    G = F.wired_grid(3)
    law = exact_branch_law(G, 4)
    rng = Uniforms(make_rng(8))
    n = 20000
    cnt = Counter(run_lerw(G, 4, StopSpec(), rng, record=False).branch for _ in range(n))
    assert set(cnt) <= set(law.probs)
    worst = max(abs(cnt[b] / n - p) / math.sqrt(p * (1 - p) / n) for b, p in law.items())
    assert worst < 5


def test_state_cap():
    with pytest.raises(StateCapExceeded):
        exact_branch_law(F.wired_grid(4), 5, cap=50)


def test_sequential_pair_first_marginal():
    G = F.wired_grid(3)
    seq = exact_pair_law(G, (3, 5), "wilson-sequential")
    assert sum(seq.values()) == pytest.approx(1.0, rel=1e-10)
    single = exact_branch_law(G, 3)
    marg = Counter()
    for (a, _), p in seq.items():
        marg[a] += p
    for a, p in single.items():
        assert marg[a] == pytest.approx(p, rel=1e-10)


def test_conditioned_pairs_are_disjoint():
    G = F.wired_grid(3)
    law = exact_pair_law(G, (3, 5), "conditioned-disjoint")
    assert sum(law.values()) == pytest.approx(1.0, rel=1e-10)
    for a, b in law:
        va = set(branch_vertices(G, 3, a)) - G.boundary
        vb = set(branch_vertices(G, 5, b)) - G.boundary
        assert not va & vb


@pytest.mark.parametrize("name", ["grid3", "star", "disc3"])
def test_crsf_table_matches_matrix_tree(name):
    G = F.by_name(name)
    tab = enumerate_crsf_distribution(G, "wwils")
    assert sum(tab.probs.values()) == pytest.approx(1.0, rel=1e-10)
    assert _weight_sum_table(G, tab) == pytest.approx(_tree_sum(G), rel=1e-9)


def test_torus_table_has_cycles_everywhere():
    tab = enumerate_crsf_distribution(F.torus(2), "wwils")
    assert sum(tab.probs.values()) == pytest.approx(1.0, rel=1e-12)
    assert all(k >= 1 for k in tab.K.values())


def test_crsf_law_names():
    with pytest.raises(ValueError):
        enumerate_crsf_distribution(F.chain(), "uniform")


# replay and decomposition

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from(["grid4", "torus3", "holedtorus3"]))
def test_replay_reproduces_walk(seed, name):
    G = F.by_name(name)
    start = G.interior[seed % len(G.interior)]
    r = run_lerw(G, start, StopSpec(), make_rng(seed), keep_trajectory=True)
    r2 = replay(G, start, r.trajectory, StopSpec())
    assert r2.edges == r.edges and r2.reason == r.reason
    assert len(r2.loops) == len(r.loops)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_erased_loops_account_for_every_step(seed):
    G = F.wired_grid(4)
    r = run_lerw(G, 5, StopSpec(), make_rng(seed), keep_trajectory=True)
    assert sum(l.length for l in r.loops) + len(r.edges) == len(r.trajectory)
    for l in r.loops:
        assert G.tail[l.edges[0]] == G.head[l.edges[-1]] == l.root
        assert l.q == pytest.approx(G.path_q(l.edges))
    vs = branch_vertices(G, 5, r.edges)
    assert len(set(vs)) == len(vs)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_decomposition_loops_carry_their_class(seed):
    from crsf.surface import loop_class

    G = F.torus(3)
    rng = make_rng(seed)
    traj, v = [], 0
    for _ in range(30):
        e = G.out_edges[v][int(rng.integers(4))]
        traj.append(e)
        v = G.head[e]
    loops, path = decomposition_replay(G, 0, traj)
    assert sum(len(es) for _, es, _ in loops) + len(path) == len(traj)
    for root, es, w in loops:
        assert loop_class(G, es) == w


def test_nc_stop_only_on_nontrivial_words():
    G = F.holed_torus(3)
    rng = Uniforms(make_rng(2))
    seen = Counter()
    for _ in range(300):
        r = run_lerw(G, 4, StopSpec(), rng)
        seen[r.reason] += 1
        if r.reason == "nc-cycle":
            k = r.vertices.index(r.vertices[-1])
            assert r.words[k] != r.words[-1]
    assert seen["nc-cycle"] and seen["boundary"]


def test_without_nc_rule_walk_reaches_boundary():
    G = F.holed_torus(3)
    r = run_lerw(G, 4, StopSpec(nc=False), make_rng(3))
    assert r.reason == "boundary"


# crossing estimates

def test_crossing_estimate_against_harmonic_solve():
    from crsf.loopmeasure import exit_distribution

    G = F.wired_grid(4)
    rect = (0, 0, 3, 3)
    est = crossing_probability_estimate(G, rect, (0, 1.5, 0.6), (3, 1.5, 0.6), 4000, make_rng(9))
    target = [v for v in G.interior if G.coords[v][0] == 3 and abs(G.coords[v][1] - 1.5) <= 0.6]
    for s, p in est.per_start.items():
        exact = sum(q for v, q in exit_distribution(G, s, target).items() if v in target)
        assert abs(p - exact) < 4 * math.sqrt(exact * (1 - exact) / 4000) + 1e-12
    assert est.minimum == min(est.per_start.values())


def test_crossing_estimate_needs_starts():
    with pytest.raises(WalkError):
        crossing_probability_estimate(F.wired_grid(3), (0, 0, 2, 2), (10, 10, 0.1), (0, 0, 1), 10, make_rng(0))
