import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crsf import fixtures as F
from crsf.exactdist import enumerate_crsf_distribution, exact_pair_law
from crsf.surface import (
    ClosedHighGenusError, GraphError, Skeleton, SurfaceError, SurfaceGraph, SurfaceSpec, check_forest,
    complement_components, dual_complement_cycles, euler_balance, is_contractible, is_eta_contractible,
    is_temperleyan, is_wilson_contractible, loop_class, reroot,
)
from crsf.words import FreeGroup, GroupMismatch, Z2, conjugacy_key, unoriented_key

FIXTURES = ["chain", "star", "grid3", "disc3", "torus2", "torus3", "holedtorus2", "holedtorus3", "annulus4x3"]


def _edge(G, u, v):
    return next(e for e in G.out_edges[u] if G.head[e] == v)


# words

def test_z2_compose():
    assert Z2().compose((1, 0), (0, 1)) == (1, 1)


def test_free_reduction():
    g = FreeGroup(2)
    assert g.compose(g.parse("ab"), g.parse("B")) == g.parse("a")
    assert g.compose(g.parse("aB"), g.inverse(g.parse("aB"))) == ()


def test_group_mismatch():
    with pytest.raises(GroupMismatch):
        Z2().check((1,))
    with pytest.raises(ValueError):
        FreeGroup(1).parse("b")


def _stack_reduce(letters):
    out = []
    for c in letters:
        if out and out[-1] == -c:
            out.pop()
        else:
            out.append(c)
    return tuple(out)


letters = st.lists(st.sampled_from([1, -1, 2, -2]), max_size=8)


@given(letters, letters)
def test_compose_matches_stack_reducer(a, b):
    g = FreeGroup(2)
    assert g.compose(_stack_reduce(a), _stack_reduce(b)) == _stack_reduce(a + b)


@given(letters, letters, letters)
def test_compose_associative_with_inverses(a, b, c):
    g = FreeGroup(2)
    a, b, c = map(_stack_reduce, (a, b, c))
    assert g.compose(g.compose(a, b), c) == g.compose(a, g.compose(b, c))
    assert g.compose(a, g.inverse(a)) == ()


@given(letters, letters)
def test_conjugacy_key_is_conjugation_invariant(a, b):
    g = FreeGroup(2)
    a, b = _stack_reduce(a), _stack_reduce(b)
    conj = g.compose(g.compose(b, a), g.inverse(b))
    assert conjugacy_key(g, conj) == conjugacy_key(g, a)
    assert unoriented_key(g, g.inverse(a)) == unoriented_key(g, a)


@given(st.text(alphabet="aAbB", max_size=10))
def test_free_format_parse_roundtrip(text):
    g = FreeGroup(2)
    w = g.parse(text or "1")
    assert g.parse(g.format(w)) == w


# surface specs

def test_surface_spec_rules():
    s = SurfaceSpec(1, 1)
    assert (s.euler_char, s.puncture_count, s.group_kind) == (-1, 1, "free-group(2)")
    assert SurfaceSpec(1, 0).group() == Z2()
    assert SurfaceSpec(0, 3).group() == FreeGroup(2)
    with pytest.raises(ClosedHighGenusError):
        SurfaceSpec(2, 0)
    for g, b in ((0, 0), (0, 1)):
        with pytest.raises(SurfaceError):
            SurfaceSpec(g, b)


@pytest.mark.parametrize("name", FIXTURES)
def test_disc_faces_have_trivial_word(name):
    G = F.by_name(name)
    for f, d in zip(G.faces, G.disc):
        if d:
            assert G.group.is_identity(loop_class(G, f))


@pytest.mark.parametrize("name", ["torus3", "holedtorus3", "annulus4x3", "disc3"])
def test_closed_euler_characteristic(name):
    G = F.by_name(name)
    chi = {"torus3": 0, "holedtorus3": -1, "annulus4x3": 0, "disc3": 1}[name]
    assert G.euler() == chi


def test_graph_validation_errors():
    g = FreeGroup(0)
    with pytest.raises(GraphError):
        SurfaceGraph(g, [(0, 0), (1, 0)], {0}, [[1, 0, 1.0, (), -1], [0, 1, 1.0, (), -1]])
    with pytest.raises(GraphError):
        SurfaceGraph(g, [(0, 0), (1, 0)], {0}, [[1, 0, -1.0, (), -1]])


def test_puncture_edge_splits_face():
    G = F.holed_torus(3)
    p = G.punctures[0]
    assert G.weight[p.edge] == 0 and G.aux[p.edge]
    assert p.edge not in G.out_edges[p.u]
    assert len(G.faces) == len(G.base_faces) + 1
    for f in p.faces:
        assert G.disc[f] and G.group.is_identity(loop_class(G, G.faces[f]))


# loop classes

def test_horizontal_cycle_class():
    n = 4
    G = F.torus(n)
    cyc = [_edge(G, i, (i + 1) % n) for i in range(n)]
    assert loop_class(G, cyc) == (1, 0)
    with pytest.raises(GraphError):
        loop_class(G, cyc[:-1])


def _displacement_class(G, n, edges):
    tot = np.zeros(2)
    for e in edges:
        d = G.coords[G.head[e]] - G.coords[G.tail[e]]
        d = (d + n / 2) % n - n / 2  # nearest image
        tot += d
    return tuple(int(round(x / n)) for x in tot)


def test_random_closed_walks_match_displacement_oracle():
    n = 4
    G = F.torus(n)
    rng = np.random.default_rng(7)
    found = 0
    while found < 30:
        v0 = int(rng.integers(G.n))
        v, es = v0, []
        for _ in range(12):
            e = G.out_edges[v][int(rng.integers(len(G.out_edges[v])))]
            es.append(e)
            v = G.head[e]
        if v != v0:
            continue
        found += 1
        assert loop_class(G, es) == _displacement_class(G, n, es)


def test_reroot_changes_word_by_conjugation_only():
    G = F.holed_torus(3)
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 40:
        v0 = int(rng.choice(G.interior))
        v, es = v0, []
        for _ in range(10):
            e = G.out_edges[v][int(rng.integers(len(G.out_edges[v])))]
            es.append(e)
            v = G.head[e]
            if v in G.boundary:
                break
        if v != v0:
            continue
        checked += 1
        w = loop_class(G, es)
        for x in {G.tail[e] for e in es}:
            w2 = loop_class(G, reroot(G, es, x))
            assert conjugacy_key(G.group, w2) == conjugacy_key(G.group, w)
            assert is_contractible(G, reroot(G, es, x)) == is_contractible(G, es)


# Wilson and eta contractibility

def _decomposition_oracle(G, es):
    """Erase loops chronologically on the vertex sequence; class of each erased piece from its edges."""
    stack_v, stack_e = [G.tail[es[0]]], []
    for e in es:
        h = G.head[e]
        stack_e.append(e)
        if h in stack_v:
            k = stack_v.index(h)
            piece = stack_e[k:]
            if not G.group.is_identity(loop_class(G, piece)):
                return False
            del stack_v[k + 1:]
            del stack_e[k:]
        else:
            stack_v.append(h)
    return True


def test_out_and_back_is_wilson_contractible():
    G = F.torus(3)
    assert is_wilson_contractible(G, [_edge(G, 0, 1), _edge(G, 1, 0)])


def test_doubled_horizontal_cycle_is_not():
    G = F.torus(3)
    cyc = [_edge(G, i, (i + 1) % 3) for i in range(3)]
    assert loop_class(G, cyc * 2) == (2, 0)
    assert not is_wilson_contractible(G, cyc * 2)


def test_random_rooted_loops_match_decomposition_oracle():
    G = F.torus(3)
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 200:
        v0 = int(rng.integers(G.n))
        v, es = v0, []
        for _ in range(int(rng.integers(2, 16))):
            e = G.out_edges[v][int(rng.integers(4))]
            es.append(e)
            v = G.head[e]
        if v != v0:
            continue
        checked += 1
        assert is_wilson_contractible(G, es) == _decomposition_oracle(G, es)


def test_eta_contractible_face_loop_and_disjoint_convention():
    G = F.holed_torus(3)
    face = list(G.faces[0])
    assert is_eta_contractible(G, face, [[G.tail[face[0]]]])
    assert not is_eta_contractible(G, face, [[v for v in G.interior if v not in {G.tail[e] for e in face}][:1]])


def test_ring_there_and_back_depends_on_root():
    # a ring around the annulus walked forward then backward: contractible as a loop,
    # erased into contractible pieces from one root but not from the crossing root
    A = F.annulus(4, 3)
    fwd = [_edge(A, i, (i + 1) % 4) for i in range(4)]
    loop = fwd + [A.twin[e] for e in reversed(fwd)]
    assert is_contractible(A, loop)
    assert is_eta_contractible(A, loop, [[2]])
    assert not is_eta_contractible(A, loop, [[0]])
    assert not is_eta_contractible(A, loop, [[7], [0], [2]])


# skeleton complements

def test_torus_empty_skeleton_is_one_annulus():
    G = F.torus(3)
    comps = complement_components(G, Skeleton([], []))
    assert len(comps) == 1 and comps[0].chi == 0
    assert is_temperleyan(G, Skeleton([], []))


def _holed_skeletons():
    G = F.holed_torus(3)
    p = G.punctures[0]
    seq = exact_pair_law(G, (p.u, p.v), "wilson-sequential")
    good = bad = None
    for a, b in sorted(seq):
        sk = Skeleton([a, b], [p.edge])
        ends_on_boundary = b and G.head[a[-1]] in G.boundary and G.head[b[-1]] in G.boundary
        if good is None and is_temperleyan(G, sk):
            good = sk
        if bad is None and ends_on_boundary and not is_temperleyan(G, sk):
            bad = sk
    return G, good, bad


def test_handle_cutting_skeleton_gives_annuli():
    G, good, _ = _holed_skeletons()
    comps = complement_components(G, good)
    assert all(c.chi == 0 for c in comps)
    assert all(c.boundary_circles == 2 for c in comps)


def test_inessential_arc_leaves_a_holed_torus_piece():
    G, _, bad = _holed_skeletons()
    comps = complement_components(G, bad)
    assert any(c.chi == -1 for c in comps)
    assert not is_temperleyan(G, bad)


def test_components_partition_faces_and_euler_adds_up():
    G = F.holed_torus(3)
    p = G.punctures[0]
    seq = exact_pair_law(G, (p.u, p.v), "wilson-sequential")
    for a, b in sorted(seq)[::37]:
        sk = Skeleton([a, b], [p.edge])
        comps = complement_components(G, sk)
        faces = sorted(f for c in comps for f in c.faces)
        assert faces == list(range(len(G.faces)))
        assert euler_balance(G, sk) == G.spec.euler_char


def test_skeleton_edge_outside_graph():
    G = F.holed_torus(2)
    with pytest.raises(GraphError):
        complement_components(G, Skeleton([(10 ** 6,)], []))


# forests and dual cycles

def _dual_cyclomatic(G, out):
    """Independent count: cycle rank of the dual complement (faces joined across absent edges)."""
    present = {G.key(e) for e in out if e >= 0} | {G.key(p.edge) for p in G.punctures}
    parent = list(range(len(G.faces)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    ne = 0
    for k in G.undirected_edges():
        if k in present:
            continue
        ne += 1
        a, b = find(G.face_of[k][0]), find(G.face_of[G.twin[k]][0])
        parent[a] = b
    comps = len({find(f) for f in range(len(G.faces))})
    return ne - len(G.faces) + comps


def test_torus2_dual_counts_match_cycle_rank():
    G = F.torus(2)
    tab = enumerate_crsf_distribution(G, "wwils")
    assert len(tab.probs) == 128
    for key in tab.probs:
        out = tab.out_map(key, G.n)
        kd, cycles, diags = dual_complement_cycles(G, out)
        assert not diags
        assert kd == tab.K_dagger[key] == _dual_cyclomatic(G, out)
        assert kd >= 1
        assert all(not G.group.is_identity(w) for _, w in cycles)


def test_disc_wired_tree_has_no_dual_cycle():
    from crsf.walk import make_rng
    from crsf.wilson import sample_wired_crsf

    G = F.wired_disc(3)
    for i in range(20):
        s = sample_wired_crsf(G, make_rng(5, i))
        assert s.K == 0 and s.K_dagger == 0


def test_annulus_dual_closes_around_a_boundary():
    from crsf.walk import make_rng
    from crsf.wilson import sample_wired_crsf

    G = F.annulus(4, 3)
    for i in range(50):
        s = sample_wired_crsf(G, make_rng(6, i))
        assert s.K_dagger == s.K + 1 == _dual_cyclomatic(G, s.out)


def test_check_forest_rejects_contractible_cycle():
    G = F.torus(2)
    out = [-1] * G.n
    a, b = _edge(G, 0, 1), _edge(G, 1, 0)
    out[0], out[1] = a, b
    out[2], out[3] = _edge(G, 2, 3), _edge(G, 3, 2)
    with pytest.raises(GraphError):
        check_forest(G, out)


def test_star_enumeration_is_product_of_weights():
    G = F.star()
    tab = enumerate_crsf_distribution(G, "wwils")
    weights = {}
    for combo in itertools.product(*[G.out_edges[v] for v in G.interior]):
        heads = [G.head[e] for e in combo]
        if heads[0] == 2 and heads[1] == 1:
            continue  # the 2-cycle between the two interior vertices
        w = 1.0
        for e in combo:
            w *= G.weight[e]
        weights[combo] = w
    z = sum(weights.values())
    assert set(tab.probs) == set(weights)
    for k, w in weights.items():
        assert tab.probs[k] == pytest.approx(w / z, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_torus_samples_have_disjoint_primitive_common_class(seed):
    from crsf.suites import primitive_common_class
    from crsf.walk import make_rng
    from crsf.wilson import sample_wired_crsf

    G = F.torus(4)
    s = sample_wired_crsf(G, make_rng(seed))
    check_forest(G, s.out)
    assert s.K >= 1
    assert primitive_common_class(G, s)
