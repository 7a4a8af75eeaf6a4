from __future__ import annotations

import numpy as np
import pytest
from conftest import random_system, scalar
from hypothesis import given, settings
from hypothesis import strategies as st

from delaylab.chains import Chain
from delaylab.hyperbolic import entire_solution
from delaylab.integrator import propagate
from delaylab.lift import (
    LiftedState,
    ProjectivePoint,
    chain_map_h1,
    embed_h0,
    embed_h1,
    equator_distance,
    hyperbolic_subbundle_sample,
    invert_h1,
    lifted_flow,
    projective_distance,
)
from delaylab.spectral import compute_spectrum, hyperbolic_split
from delaylab.system import ControlSignal, M2State, m2_distance, random_bang_bang

seeds = st.integers(0, 2**32 - 1)


def _state(rng, sys):
    return M2State(rng.normal(size=sys.n), rng.normal(size=(sys.n_seg + 1, sys.n)), sys.h)


def _point(rng, n=1, n_seg=8):
    return ProjectivePoint.of(LiftedState(M2State(rng.normal(size=n), rng.normal(size=(n_seg + 1, n)), 1.0), rng.normal()))


@pytest.fixture(scope="module")
def stable_split():
    s = scalar(-1.0, -0.5)
    return s, hyperbolic_split(s, compute_spectrum(s, -4.0, 32))


def test_projective_distance_examples():
    rng = np.random.default_rng(0)
    p = _point(rng)
    assert projective_distance(p, p) == 0.0
    assert projective_distance(p, ProjectivePoint(-p.rep)) == 0.0
    assert projective_distance(p, ProjectivePoint.of(-3.0 * p.rep)) < 1e-15
    a = ProjectivePoint.of(LiftedState(M2State([1.0], np.zeros(9), 1.0), 0.0))
    b = ProjectivePoint.of(LiftedState(M2State([0.0], np.zeros(9), 1.0), 1.0))
    assert projective_distance(a, b) == pytest.approx(np.sqrt(2), abs=1e-15)


def test_projective_metric_axioms():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        a, b, c = (_point(rng) for _ in range(3))
        assert projective_distance(a, c) <= projective_distance(a, b) + projective_distance(b, c) + 1e-12
        assert projective_distance(a, b) == projective_distance(b, a)
        assert projective_distance(a, b) >= 0


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_representative_is_canonical(seed):
    p = _point(np.random.default_rng(seed))
    assert abs(p.rep.norm() - 1) < 1e-12
    assert p.rep.flat()[0] > 0
    q = ProjectivePoint.of(-2.5 * p.rep)
    assert np.abs(q.rep.flat() - p.rep.flat()).max() < 1e-15


def test_zero_vector_has_no_class():
    with pytest.raises(ValueError):
        ProjectivePoint.of(LiftedState(M2State.zeros(1, 1.0, 4), 0.0))


def test_h1_examples_and_roundtrip():
    z = M2State.zeros(1, 1.0, 8)
    _, p = embed_h1(None, z)
    assert np.array_equal(p.rep.flat(), np.r_[np.zeros(10), 1.0])
    rng = np.random.default_rng(2)
    y = M2State(rng.normal(size=1), rng.normal(size=(9, 1)), 1.0)
    assert m2_distance(invert_h1(embed_h1(None, y)[1]), y) < 1e-12
    with pytest.raises(ValueError, match="equator"):
        invert_h1(ProjectivePoint.of(LiftedState(y, 0.0)))


def test_equator_distance_examples():
    z = M2State.zeros(1, 1.0, 8)
    assert equator_distance(embed_h1(None, z)[1]) == 1.0
    one = M2State([1.0], np.zeros(9), 1.0)
    assert equator_distance(embed_h1(None, one)[1]) == pytest.approx(1 / np.sqrt(2), abs=1e-15)
    big = M2State([1e3], np.zeros(9), 1.0)
    assert equator_distance(embed_h1(None, big)[1]) == pytest.approx(1e-3, rel=1e-6)


def test_lifted_flow_special_cases():
    rng = np.random.default_rng(3)
    s = random_system(rng, 16)
    y = _state(rng, s)
    u = random_bang_bang(s, rng, 0.0, 2.0, 0.25)
    (hom,) = propagate(s, [y], [None], 1.5)
    flat = lifted_flow(s, LiftedState(y, 0.0), u, 1.5)
    assert flat.gamma == 0.0 and m2_distance(flat.y, hom) == 0.0
    (full,) = propagate(s, [y], [u], 1.5)
    one = lifted_flow(s, LiftedState(y, 1.0), u, 1.5)
    assert one.gamma == 1.0 and m2_distance(one.y, full) < 1e-12 * (1 + full.norm())
    with pytest.raises(ValueError):
        lifted_flow(s, LiftedState(y, 1.0), u, -1.0)


@settings(max_examples=25, deadline=None)
@given(seeds, st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
def test_lifted_flow_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    s = random_system(rng, 16)
    v = LiftedState(_state(rng, s), rng.normal())
    w = LiftedState(_state(rng, s), rng.normal())
    u = random_bang_bang(s, rng, 0.0, 2.0, 0.25)
    lhs = lifted_flow(s, a * v + b * w, u, 1.0)
    rhs = a * lifted_flow(s, v, u, 1.0) + b * lifted_flow(s, w, u, 1.0)
    assert (lhs - rhs).norm() < 1e-9 * (1 + lhs.norm())
    assert lhs.gamma == a * v.gamma + b * w.gamma


def test_gamma_two_is_twice_the_affine_flow():
    rng = np.random.default_rng(4)
    s = scalar(-1.0, -0.5)
    y = _state(rng, s)
    u = random_bang_bang(s, rng, 0.0, 2.0, 0.25)
    two = lifted_flow(s, LiftedState(y, 2.0), u, 2.0)
    half = lifted_flow(s, LiftedState(y * 0.5, 1.0), u, 2.0)
    assert (two - 2.0 * half).norm() < 1e-12


def test_h0_conjugacy():
    rng = np.random.default_rng(5)
    for _ in range(5):
        s = scalar(float(rng.uniform(-2, 2)), float(rng.uniform(-2, 2)))
        y = _state(rng, s)
        u = random_bang_bang(s, rng, 0.0, 2.0, 0.25)
        assert embed_h0(u, M2State.zeros(1, 1.0, s.n_seg))[1].norm() == 0.0
        for t in (0.5, 1.0, 2.0):
            (hom,) = propagate(s, [y], [None], t)
            lifted = lifted_flow(s, embed_h0(u, y)[1], u, t)
            assert lifted.gamma == 0.0
            assert (lifted - embed_h0(None, hom)[1]).norm() < 1e-8


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_h1_conjugacy(seed):
    rng = np.random.default_rng(seed)
    s = random_system(rng, 16)
    y = _state(rng, s)
    u = random_bang_bang(s, rng, 0.0, 2.0, 0.25)
    (flowed,) = propagate(s, [y], [u], 2.0)
    lifted = ProjectivePoint.of(lifted_flow(s, LiftedState(y, 1.0), u, 2.0))
    assert projective_distance(lifted, embed_h1(u, flowed)[1]) < 1e-8


def test_chain_map_h1():
    s = scalar(-1.0, -0.5)
    rng = np.random.default_rng(6)
    y0 = _state(rng, s)
    u = random_bang_bang(s, rng, 0.0, 1.0, 0.25)
    (y1,) = propagate(s, [y0], [u], 1.0)
    exact = Chain((y0, y1), (u,), (1.0,), 0.1, 1.0)
    assert chain_map_h1(s, exact)["worst_jump"] == 0.0
    bumped = Chain((y0, y1 + M2State([0.05], np.zeros(s.n_seg + 1), 1.0)), (u,), (1.0,), 0.1, 1.0)
    rep = chain_map_h1(s, bumped)
    assert rep["valid"] and 0 < rep["worst_jump"] < 0.2
    with pytest.raises(ValueError, match="invalid"):
        chain_map_h1(s, Chain(bumped.nodes, (u,), (1.0,), 0.01, 1.0))


def test_head_jump_of_size_eps_on_unit_states():
    rng = np.random.default_rng(7)
    for eps in (0.1, 0.01):
        for _ in range(100):
            y = _state(rng, scalar(0.0, 0.0, n_seg=8))
            y = y * (1.0 / y.norm())
            z = y + M2State([eps], np.zeros(9), 1.0)
            assert projective_distance(embed_h1(None, y)[1], embed_h1(None, z)[1]) < 2 * eps


def test_subbundle_zero_control(stable_split):
    s, split = stable_split
    sample = hyperbolic_subbundle_sample(s, split, [ControlSignal.zero(1, 0.5)])
    assert sample.margin == 1.0
    assert np.array_equal(sample.points[0][1].rep.flat(), np.r_[np.zeros(s.n_seg + 2), 1.0])


def test_subbundle_constants_and_invariance(stable_split):
    s, split = stable_split
    consts = [ControlSignal.constant([c], -100.0, 100.0, 0.5) for c in (-1.0, 1.0)]
    sample = hyperbolic_subbundle_sample(s, split, consts)
    want = 1 / np.sqrt(1 + (2 / 3) ** 2 * (1 + s.h))
    assert sample.margin == pytest.approx(want, abs=1e-5)
    u = random_bang_bang(s, np.random.default_rng(8), -100.0, 100.0, 0.25)
    ((_, p),) = hyperbolic_subbundle_sample(s, split, [u]).points
    for t in (0.5, 1.5):
        moved = ProjectivePoint.of(lifted_flow(s, p.rep, u, t))
        target = ProjectivePoint.of(LiftedState(entire_solution(s, split, u, t), 1.0))
        assert projective_distance(moved, target) < 1e-6
