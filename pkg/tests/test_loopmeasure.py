import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crsf import fixtures as F
from crsf.exactdist import branch_vertices, exact_branch_law, exact_pair_law
from crsf.loopmeasure import (
    DomainError, canonical_rotation, conditional_given_prefix, density_lerw, disjoint_probability,
    empirical_mass, enumerated_mass, escape_probability, exit_distribution, f_value, g_value, green_diagonal,
    log_mass_intersecting, long_loop_mass, loop_mass, loop_mass_all, marginal_prefix, marginal_prefix_suffix,
    marginal_suffix, pair_marginal_disjoint, pair_marginal_rn, rotations, sample_loop_soup, systole,
    unrooted_mass,
)
from crsf.walk import make_rng

# frozen from a run of the trace-series enumeration with a 1e-10 tail bound
GRID4_MASS_5_6_10 = 1.0415122105111423


def test_chain_green_by_hand():
    G = F.chain()
    # from x: step to y w.p. 1/2, then back w.p. 1/2; return probability 1/4
    assert f_value(G, None, 1) == pytest.approx(0.25)
    assert g_value(G, None, 1) == pytest.approx(4 / 3)
    assert log_mass_intersecting(G, [[1]]) == pytest.approx(math.log(4 / 3))


@pytest.mark.parametrize("name", ["grid3", "grid4", "torus3", "holedtorus2", "annulus4x3"])
def test_green_times_escape_is_one(name):
    G = F.by_name(name)
    A = frozenset(G.interior)
    for x in G.interior[:3]:
        for mode in ("exit", "nc"):
            if mode == "exit" and not G.planar and not G.boundary:
                continue
            assert g_value(G, A, x, mode) * (1 - f_value(G, A, x, mode)) == pytest.approx(1.0, rel=1e-10)


def test_green_diagonal_matches_solve():
    G = F.wired_grid(4)
    gd = green_diagonal(G)
    for v in G.interior:
        assert gd[v] == pytest.approx(g_value(G, None, v), rel=1e-12)


def test_closed_torus_has_no_exit_green():
    with pytest.raises(DomainError):
        g_value(F.torus(3), None, 0, "exit")


def test_enumerated_mass_frozen_and_logdet():
    G = F.wired_grid(4)
    em = enumerated_mass(G, [5, 6, 10])
    assert em.tail < 1e-10
    assert em.value == pytest.approx(GRID4_MASS_5_6_10, rel=1e-9)
    assert loop_mass_all(G, [5, 6, 10]) == pytest.approx(GRID4_MASS_5_6_10, rel=1e-9)
    assert log_mass_intersecting(G, [[5, 6, 10]]) == pytest.approx(GRID4_MASS_5_6_10, rel=1e-9)


def test_long_loop_mass_monotone():
    G = F.wired_grid(4)
    S = [5, 6]
    vals = [long_loop_mass(G, S, L) for L in (1, 2, 4, 8, 16)]
    assert vals[0] == pytest.approx(loop_mass_all(G, S), rel=1e-12)
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_systoles():
    assert systole(F.torus(3)) == 3
    assert systole(F.holed_torus(3)) == 3
    assert systole(F.annulus(4, 3)) == 4
    assert systole(F.wired_grid(3)) == math.inf


@given(st.lists(st.integers(0, 5), min_size=1, max_size=8), st.integers(0, 7))
def test_rotation_invariants(es, k):
    k %= len(es)
    r = tuple(es[k:] + es[:k])
    assert canonical_rotation(r) == canonical_rotation(es)
    assert len(rotations(es)) <= len(es)


def test_unrooted_mass_counts_distinct_rotations():
    G = F.chain()
    a = next(e for e in G.out_edges[1] if G.head[e] == 2)
    b = next(e for e in G.out_edges[2] if G.head[e] == 1)
    assert unrooted_mass(G, (a, b)) == pytest.approx(math.log(2) + loop_mass(G, (a, b)))
    assert unrooted_mass(G, (a, b, a, b)) == pytest.approx(math.log(2) + loop_mass(G, (a, b, a, b)))


# branch densities and marginals

@pytest.mark.parametrize("name", ["grid3", "torus3", "holedtorus2", "annulus4x3"])
def test_density_formula_matches_exact_law(name):
    G = F.by_name(name)
    x = G.interior[len(G.interior) // 2]
    law = exact_branch_law(G, x)
    for b, p in law.items():
        assert density_lerw(G, [(x, b)]) == pytest.approx(p, rel=1e-9)


def _prefix_table(G, x, law):
    pre = {}
    for b, p in law.items():
        vs = branch_vertices(G, x, b)
        for k in range(1, len(b)):
            if len(set(vs[:k + 1])) < k + 1 or vs[k] in G.boundary:
                continue
            pre[b[:k]] = pre.get(b[:k], 0.0) + p
    return pre


@pytest.mark.parametrize("name", ["grid3", "torus3", "holedtorus2"])
def test_prefix_marginal_and_conditional(name):
    G = F.by_name(name)
    x = G.interior[0]
    law = exact_branch_law(G, x)
    pre = _prefix_table(G, x, law)
    for k in random.Random(0).sample(sorted(pre), min(60, len(pre))):
        assert marginal_prefix(G, (x, k)) == pytest.approx(pre[k], rel=1e-9)
    for b, p in list(law.items())[:60]:
        for i in range(1, len(b)):
            if b[:i] in pre:
                assert conditional_given_prefix(G, (x, b[:i]), (x, b)) == pytest.approx(p / pre[b[:i]], rel=1e-9)


def test_suffix_and_joint_marginals_on_grid():
    G = F.wired_grid(3)
    x = 4
    law = exact_branch_law(G, x)
    suf, joint = {}, {}
    for b, p in law.items():
        vs = branch_vertices(G, x, b)
        for k in range(1, len(b)):
            suf[(vs[k], b[k:])] = suf.get((vs[k], b[k:]), 0.0) + p
    for (s, e), p in suf.items():
        assert marginal_suffix(G, x, (s, e)) == pytest.approx(p, rel=1e-9)
    b = max(law.probs, key=len)
    vs = branch_vertices(G, x, b)
    i, j = 1, len(b) - 1
    tot = sum(p for bb, p in law.items() if bb[:i] == b[:i] and bb[-(len(b) - j):] == b[j:])
    assert marginal_prefix_suffix(G, (x, b[:i]), (vs[j], b[j:])) == pytest.approx(tot, rel=1e-9)


def test_prefix_must_avoid_boundary():
    G = F.wired_grid(3)
    e = next(e for e in G.out_edges[0] if G.head[e] in G.boundary)
    with pytest.raises(DomainError):
        marginal_prefix(G, (0, (e,)))


def test_exit_distribution_is_a_law():
    G = F.wired_grid(4)
    d = exit_distribution(G, 5, {6, 9})
    assert sum(d.values()) == pytest.approx(1.0, rel=1e-12)
    assert escape_probability(G, 5, {6, 9}) == pytest.approx(sum(p for v, p in d.items() if v in G.boundary))


def test_pair_marginals_match_conditioned_law():
    G = F.wired_grid(3)
    x1, x2 = 3, 5
    joint = exact_pair_law(G, (x1, x2), "conditioned-disjoint")
    pd = disjoint_probability(G, x1, x2)
    seq = exact_pair_law(G, (x1, x2), "wilson-sequential")
    oracle = sum(p for (a, b), p in seq.items()
                 if not (set(branch_vertices(G, x1, a)) & set(branch_vertices(G, x2, b))) - G.boundary)
    assert pd == pytest.approx(oracle, rel=1e-10)
    marg = {}
    for (a, b), p in joint.items():
        for i in range(min(len(a), 3)):
            for j in range(min(len(b), 3)):
                marg[(a[:i], b[:j])] = marg.get((a[:i], b[:j]), 0.0) + p
    for (a, b) in random.Random(1).sample(sorted(marg), 40):
        assert pair_marginal_disjoint(G, (x1, a), (x2, b), pd) == pytest.approx(marg[(a, b)], rel=1e-9)
        assert pair_marginal_rn(G, (x1, a), (x2, b), pd) == pytest.approx(marg[(a, b)], rel=1e-9)


# loop soups

def test_chain_soup_mass_through_x():
    G = F.chain()
    rng = make_rng(1)
    soups = [sample_loop_soup(G, rng) for _ in range(20000)]
    est = empirical_mass(lambda l: 1 in l.vertices(G), soups)
    assert abs(est.mean - math.log(4 / 3)) < 4 * est.stderr
    assert 0.85 < est.dispersion < 1.15


def test_soup_loops_stay_in_domain():
    G = F.wired_grid(4)
    rng = make_rng(2)
    dom = {5, 6, 9, 10}
    for _ in range(200):
        for l in sample_loop_soup(G, rng, domain=dom):
            assert l.vertices(G) <= dom
            assert l.edges == canonical_rotation(l.edges)


def test_nc_soup_loops_are_contractible():
    from crsf.surface import loop_class

    G = F.holed_torus(2)
    rng = make_rng(3)
    for _ in range(300):
        for l in sample_loop_soup(G, rng, mode="nc"):
            assert G.group.is_identity(loop_class(G, l.edges))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_mass_estimates_are_nonnegative(seed):
    G = F.chain()
    soups = [sample_loop_soup(G, make_rng(seed, i)) for i in range(20)]
    est = empirical_mass(lambda l: True, soups)
    assert est.mean >= 0 and est.stderr >= 0
    lo, hi = est.ci()
    assert lo <= est.mean <= hi


def test_rng_determinism_of_soups():
    G = F.wired_grid(3)
    a = sample_loop_soup(G, make_rng(5))
    b = sample_loop_soup(G, make_rng(5))
    assert [l.edges for l in a] == [l.edges for l in b]
    assert np.isfinite(sum(len(l.edges) for l in a))
