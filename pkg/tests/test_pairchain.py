import random

import pytest
from hypothesis import given, settings, strategies as st

from crsf import fixtures as F
from crsf.exactdist import exact_pair_law
from crsf.pairchain import (
    PairMeasures, ScaleError, ScaleSystem, decompose, enumerate_unwound_pair_mass, lambda_m, paths_to_exit,
    restrict, separation_predicates, tiny_disc_system, unwound_pair_mass,
)

# frozen from the exact pair enumeration on the tiny disc
Z1 = 0.49945918583910115
Z2 = 0.41288057532301664


@pytest.fixture(scope="module")
def system():
    S = tiny_disc_system()
    return S, PairMeasures(S)


def test_frozen_normalizers(system):
    S, PM = system
    assert len(PM.pairs(1)) == 24 and len(PM.pairs(2)) == 628
    assert PM.Z(1) == pytest.approx(Z1, rel=1e-9)
    assert PM.Z(2) == pytest.approx(Z2, rel=1e-9)
    assert PM.Z(2) <= PM.Z(1)


def test_top_scale_measure_is_conditioned_tree_pair(system):
    S, PM = system
    law = exact_pair_law(S.graph, (S.x1, S.x2), "conditioned-disjoint")
    A = PM.pairs(S.N)
    Z = PM.Z(S.N)
    assert len(law) == sum(1 for v in A.values() if v > 0)
    for (a, b), p in law.items():
        assert A[((S.x1, a), (S.x2, b))] / Z == pytest.approx(p, rel=1e-9)


def test_fourier_mass_matches_enumeration(system):
    S, PM = system
    for m in (1, 2):
        for pair in random.Random(m).sample(sorted(PM.pairs(m)), 3):
            e = enumerate_unwound_pair_mass(S, m, pair)
            assert e.tail < 1e-12
            assert unwound_pair_mass(S, m, pair) == pytest.approx(e.value, rel=1e-8, abs=1e-12)


def test_transitions_are_conditional_laws(system):
    S, PM = system
    law = exact_pair_law(S.graph, (S.x1, S.x2), "conditioned-disjoint")
    full = {((S.x1, a), (S.x2, b)): p for (a, b), p in law.items()}
    for pm in sorted(PM.pairs(1)):
        if PM.pairs(1)[pm] == 0:
            continue
        exts = PM.extensions(1, pm)
        assert sum(PM.transition_prob(1, pm, pn) for pn in exts) == pytest.approx(1.0, rel=1e-9)
        den = sum(p for k, p in full.items() if restrict(S, k, 1) == pm)
        for pn in exts:
            num = sum(p for k, p in full.items() if restrict(S, k, 2) == pn)
            assert PM.transition_prob(1, pm, pn) == pytest.approx(num / den, rel=1e-8)


def test_transition_requires_extension(system):
    S, PM = system
    a, b = sorted(PM.pairs(1))[:2]
    other = next(p for p in PM.pairs(2) if restrict(S, p, 1) != a)
    with pytest.raises(ScaleError):
        PM.transition_prob(1, a, other)


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_decomposition_recomposes(data):
    S = tiny_disc_system()
    p1 = paths_to_exit(S, S.x1, 2)
    p2 = paths_to_exit(S, S.x2, 2)
    pair = ((S.x1, data.draw(st.sampled_from(p1))), (S.x2, data.draw(st.sampled_from(p2))))
    m = data.draw(st.sampled_from([1, 2]))
    d = decompose(S, pair, m, 2)
    assert d.recompose() == pair
    rep = separation_predicates(S, pair, 1, 2)
    assert all(isinstance(x, bool) for x in (rep.sep_m, rep.sep_dot, rep.sep_mn))


def test_lambda_vanishes_on_intersecting_pairs():
    S = tiny_disc_system()
    p1 = paths_to_exit(S, S.x1, 1)
    p2 = paths_to_exit(S, S.x2, 1)
    hit = next(((S.x1, a), (S.x2, b)) for a in p1 for b in p2
               if S.x2 in {S.graph.head[e] for e in a})
    assert lambda_m(S, 1, hit) == 0.0


def test_lambda_needs_stopped_pair():
    S = tiny_disc_system()
    p1 = paths_to_exit(S, S.x1, 2)
    p2 = paths_to_exit(S, S.x2, 2)
    long_pair = ((S.x1, max(p1, key=len)), (S.x2, max(p2, key=len)))
    with pytest.raises(ScaleError):
        lambda_m(S, 1, long_pair)


def test_scale_system_validation():
    G = F.tiny_disc()
    S = tiny_disc_system()
    with pytest.raises(ScaleError):
        ScaleSystem(F.torus(3), (1.5, 1.5), 0.45, 2, 0, 1)
    with pytest.raises(ScaleError):
        ScaleSystem(G, (1.5, 1.5), 0.45, 0, S.x1, S.x2)
    with pytest.raises(ScaleError):
        ScaleSystem(G, (1.5, 1.5), 0.0, 2, S.x1, S.x2)
    far = next(v for v in G.interior if v not in S.ball(1))
    with pytest.raises(ScaleError):
        ScaleSystem(G, (1.5, 1.5), 0.45, 2, S.x1, far)
