from __future__ import annotations

import json

import numpy as np
import pytest
from conftest import scalar
from hypothesis import given, settings
from hypothesis import strategies as st

from delaylab.chains import (
    Chain,
    Reduction,
    approximate_chain_control_set,
    build_chain_from_zero,
    build_chain_to_zero,
    chain_from_dict,
    chain_to_dict,
    concatenate,
    ladder_steps,
    lift_chain,
    scale_trajectory_check,
    seed_loop,
    strong_components,
    verify_chain,
    verify_lifted_chain,
)
from delaylab.integrator import propagate
from delaylab.system import ControlSignal, M2State, m2_distance, random_bang_bang


@pytest.fixture(scope="module")
def sys_():
    return scalar(-1.0, -0.5)


@pytest.fixture(scope="module")
def eq_state(sys_):
    return M2State.constant([1.0 / 1.5], 1.0, sys_.n_seg)


def _exact_chain(sys, y0, controls, durations, eps=0.1, tau=1.0):
    nodes = [y0]
    for u, d in zip(controls, durations):
        nodes.append(propagate(sys, [nodes[-1]], [u], d)[0])
    return Chain(tuple(nodes), tuple(controls), tuple(durations), eps, tau)


def _scc_oracle(n, edges, root):
    R = np.eye(n, dtype=bool)
    R[edges[:, 0], edges[:, 1]] = True
    for k in range(n):
        R |= R[:, k : k + 1] & R[k : k + 1, :]
    return {j for j in range(n) if R[root, j] and R[j, root]}


def test_exact_chain_is_valid_for_any_eps(sys_):
    rng = np.random.default_rng(0)
    us = [random_bang_bang(sys_, rng, 0.0, 2.0, 0.25) for _ in range(3)]
    ch = _exact_chain(sys_, M2State.constant([0.5], 1.0, sys_.n_seg), us, [1.0, 1.5, 2.0], eps=1e-9)
    rep = verify_chain(sys_, ch)
    assert rep.valid and rep.worst_jump == 0.0 and rep.chain.valid


def test_displaced_node_is_invalid(sys_):
    u = ControlSignal.constant([1.0], 0.0, 1.0)
    ch = _exact_chain(sys_, sys_.zero_state(), [u], [1.0], eps=0.1)
    bump = M2State([0.2], np.zeros(sys_.n_seg + 1), 1.0)
    bad = Chain((ch.nodes[0], ch.nodes[1] + bump), ch.controls, ch.durations, 0.1, 1.0)
    rep = verify_chain(sys_, bad)
    assert not rep.valid and rep.worst_jump == pytest.approx(0.2) and "leg 0" in rep.diagnostic


def test_blowup_leg_is_invalid():
    s = scalar(400.0, 0.0, n_seg=4)
    y = M2State.constant([1.0], 1.0, 4)
    ch = Chain((y, y), (ControlSignal.zero(1),), (50.0,), 0.1, 1.0)
    rep = verify_chain(s, ch)
    assert not rep.valid and rep.worst_jump == np.inf and "non-finite" in rep.diagnostic


def test_chain_structure_checked(sys_):
    z = sys_.zero_state()
    with pytest.raises(ValueError):
        Chain((z, z), (ControlSignal.zero(1),), (0.5,), 0.1, 1.0)
    with pytest.raises(ValueError):
        Chain((z,), (ControlSignal.zero(1),), (1.0,), 0.1, 1.0)


def test_concatenation_closure(sys_):
    rng = np.random.default_rng(1)
    a = _exact_chain(sys_, M2State.constant([0.3], 1.0, sys_.n_seg), [random_bang_bang(sys_, rng, 0.0, 2.0, 0.25)], [1.0], 0.05)
    b = _exact_chain(sys_, a.end, [random_bang_bang(sys_, rng, 0.0, 2.0, 0.25)], [2.0], 0.2)
    ab = concatenate(a, b)
    assert ab.q == 2 and ab.epsilon == 0.2 and verify_chain(sys_, ab).valid
    with pytest.raises(ValueError, match="do not meet"):
        concatenate(b, a)


def test_scaling_identity_examples(sys_):
    rng = np.random.default_rng(2)
    y = M2State(rng.normal(size=1), rng.normal(size=(sys_.n_seg + 1, 1)), 1.0)
    u = random_bang_bang(sys_, rng, 0.0, 3.0, 0.125)
    assert scale_trajectory_check(sys_, sys_.zero_state(), ControlSignal.zero(1), 2.0, 0.3) == 0.0
    assert scale_trajectory_check(sys_, y, u, 2.0, 1.0) < 1e-14
    assert scale_trajectory_check(sys_, y, u, 2.0, 0.5) < 1e-9
    with pytest.raises(ValueError, match="Omega"):
        scale_trajectory_check(scalar(-1.0, -0.5, omega=((0.5,), (1.0,))), y, None, 1.0, 0.5)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-4, 0.5), st.floats(1e-4, 0.99))
def test_ladder_steps_bracket(alpha, eps):
    k = ladder_steps(alpha, eps)
    assert k * alpha + eps < 1 <= (k + 1) * alpha + eps


def test_builders_trivial_for_zero(sys_):
    z = sys_.zero_state()
    for ch in (build_chain_to_zero(sys_, z, 0.1, 1.0, None), build_chain_from_zero(sys_, z, 0.1, 1.0, None)[0]):
        assert ch.q == 1 and ch.start.norm() == 0 and ch.end.norm() == 0
        assert verify_chain(sys_, ch).valid


def test_builders_produce_valid_chains(sys_, eq_state):
    eps = 0.1
    loop = seed_loop(sys_, eq_state, ControlSignal.constant([1.0], 0.0, 1.0), eps / 2, 1.0)
    down = build_chain_to_zero(sys_, eq_state, eps, 1.0, loop)
    assert down.end.norm() == 0.0 and verify_chain(sys_, down).valid
    up, info = build_chain_from_zero(sys_, eq_state, eps, 1.0, loop)
    assert up.start.norm() == 0.0 and m2_distance(up.end, eq_state) == 0.0
    assert up.epsilon == pytest.approx((1 + 2 * eq_state.norm()) * eps)
    assert info["k"] == ladder_steps(info["alpha"], eps)
    assert verify_chain(sys_, up).valid


def test_large_eps_gives_short_chain(sys_, eq_state):
    eps = 2.0 * eq_state.norm()
    loop = seed_loop(sys_, eq_state, ControlSignal.constant([1.0], 0.0, 1.0), eps / 2, 1.0)
    ch = build_chain_to_zero(sys_, eq_state, eps, 1.0, loop)
    assert ch.q == 1 and verify_chain(sys_, ch).valid


def test_builders_reject_bad_seed(sys_, eq_state):
    u = ControlSignal.constant([-1.0], 0.0, 1.0)
    bad = Chain((eq_state, eq_state), (u,), (1.0,), 0.05, 1.0)
    with pytest.raises(ValueError, match="seed loop"):
        build_chain_to_zero(sys_, eq_state, 0.1, 1.0, bad)
    with pytest.raises(ValueError):
        build_chain_from_zero(sys_, eq_state, 1.5, 1.0, bad)


def test_seed_loop_gives_up():
    s = scalar(0.5, 0.0)
    with pytest.raises(ValueError, match="no return"):
        seed_loop(s, M2State.constant([1.0], 1.0, s.n_seg), ControlSignal.zero(1), 1e-3, 1.0, max_periods=3)


def test_lift_single_exact_leg(sys_):
    u = random_bang_bang(sys_, np.random.default_rng(3), 0.0, 2.0, 0.25)
    ch = _exact_chain(sys_, M2State.constant([0.2], 1.0, sys_.n_seg), [u], [2.0])
    lc = lift_chain(sys_, ch, ControlSignal.zero(1, 0.25), ControlSignal.zero(1, 0.25))
    rep = verify_lifted_chain(sys_, lc)
    assert np.all(rep.control_jump_integrals == 0.0)
    assert np.all(rep.state_jumps[2:] < 1e-12)
    # the front padding returns to y_0 only up to the free decay over 2 tau
    (back,) = propagate(sys_, [ch.start], [None], 2 * ch.tau)
    assert rep.state_jumps[1] == pytest.approx(m2_distance(back, ch.start), rel=1e-9)


def test_lift_zero_chain_has_no_jumps(sys_):
    z = sys_.zero_state()
    ch = Chain((z, z, z), (ControlSignal.zero(1),) * 2, (1.0, 1.0), 0.1, 1.0)
    rep = verify_lifted_chain(sys_, lift_chain(sys_, ch, ControlSignal.zero(1), ControlSignal.zero(1)))
    assert rep.worst_jump == 0.0


def test_lift_builder_chain_in_product_metric(sys_, eq_state):
    loop = seed_loop(sys_, eq_state, ControlSignal.constant([1.0], 0.0, 1.0), 0.1, 1.0)
    ch = build_chain_to_zero(sys_, eq_state, 0.2, 1.0, loop)
    lc = lift_chain(sys_, ch, ControlSignal.constant([1.0], 0.0, 1.0), ControlSignal.zero(1))
    rep = verify_lifted_chain(sys_, lc)
    assert rep.valid and rep.worst_jump < 0.2
    assert np.all(rep.control_jump_integrals == 0.0)
    # B_1 = 0 here, so the node jumps of the original chain are reproduced
    orig = verify_chain(sys_, ch).jumps
    assert np.allclose(rep.state_jumps[2:-1], orig, atol=1e-12)


def test_chain_file_roundtrip(sys_, eq_state):
    loop = seed_loop(sys_, eq_state, ControlSignal.constant([1.0], 0.0, 1.0), 0.1, 1.0)
    ch = build_chain_to_zero(sys_, eq_state, 0.2, 1.0, loop)
    back = chain_from_dict(json.loads(json.dumps(chain_to_dict(ch))), sys_.h)
    assert back.q == ch.q and back.epsilon == ch.epsilon and back.tau == ch.tau
    assert all(m2_distance(a, b) == 0 for a, b in zip(back.nodes, ch.nodes))
    assert all(a.equals(b) for a, b in zip(back.controls, ch.controls))
    with pytest.raises(ValueError, match="unknown"):
        chain_from_dict({**chain_to_dict(ch), "extra": 1}, sys_.h)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_reduction_roundtrip(seed):
    rng = np.random.default_rng(seed)
    red = Reduction(2, 6, 1.0, 32)
    c = rng.normal(size=6)
    assert np.abs(red.reduce(red.lift(c)) - c).max() < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 60), st.floats(0.0, 0.3), st.integers(0, 2**32 - 1))
def test_strong_components_match_closure(n, density, seed):
    rng = np.random.default_rng(seed)
    A = rng.random((n, n)) < density
    edges = np.argwhere(A)
    labels = strong_components(n, edges)
    for root in range(0, n, max(1, n // 5)):
        assert set(np.nonzero(labels == labels[root])[0].tolist()) == _scc_oracle(n, edges, root)


def test_box_method_with_zero_control_only(sys_):
    s = sys_.with_omega(((0.0,),))
    red = Reduction(1, 2, s.h, s.n_seg)
    counts = []
    for depth in (4, 6):
        cover = approximate_chain_control_set(s, red, ([-1.0, -1.0], [1.0, 1.0]), depth, 1.0, [ControlSignal.zero(1)])
        assert cover.contains_index(cover.zero_index)
        b = cover.bounds()
        dist = np.linalg.norm(np.maximum(0, np.maximum(b[:, 0], -b[:, 1])), axis=1)
        assert dist.max() <= 3 * cover.diameter
        counts.append(len(cover.indices))
        nodes = cover.graph_nodes
        root = int(np.nonzero(np.all(nodes == cover.zero_index, axis=1))[0][0])
        want = {tuple(nodes[j]) for j in _scc_oracle(len(nodes), cover.graph_edges, root)}
        assert want == {tuple(i) for i in cover.indices}
    assert counts[0] == counts[1]


def test_box_method_monotone_in_controls(sys_):
    red = Reduction(1, 2, sys_.h, sys_.n_seg)
    few = [ControlSignal.constant([c], 0.0, 1.0) for c in (-0.5, 0.0, 0.5)]
    more = few + [ControlSignal.constant([c], 0.0, 1.0) for c in (-1.0, 1.0)]
    a = approximate_chain_control_set(sys_, red, ([-1.0, -1.0], [1.0, 1.0]), 4, 1.0, few)
    b = approximate_chain_control_set(sys_, red, ([-1.0, -1.0], [1.0, 1.0]), 4, 1.0, more)
    assert {tuple(i) for i in a.indices} <= {tuple(i) for i in b.indices}


def test_box_refinement_is_nested(sys_):
    red = Reduction(1, 2, sys_.h, sys_.n_seg)
    ctrls = [ControlSignal.constant([c], 0.0, 1.0) for c in np.linspace(-1, 1, 9)]
    coarse = approximate_chain_control_set(sys_, red, ([-1.0, -1.0], [1.0, 1.0]), 3, 1.0, ctrls)
    fine = approximate_chain_control_set(sys_, red, ([-1.0, -1.0], [1.0, 1.0]), 4, 1.0, ctrls)
    parents = {tuple(i) for i in coarse.indices}
    assert all(tuple(i // 2) in parents for i in fine.indices)
    assert len(fine.indices) * fine.width.prod() <= len(coarse.indices) * coarse.width.prod() + 1e-12


def test_box_method_errors(sys_):
    red = Reduction(1, 2, sys_.h, sys_.n_seg)
    u = [ControlSignal.zero(1)]
    with pytest.raises(ValueError, match="contain 0"):
        approximate_chain_control_set(sys_, red, ([0.5, -1.0], [1.0, 1.0]), 2, 1.0, u)
    with pytest.raises(ValueError, match="Omega"):
        approximate_chain_control_set(sys_, red, ([-1.0, -1.0], [1.0, 1.0]), 2, 1.0, [ControlSignal.constant([3.0], 0.0, 1.0)])
    coarse = sys_.with_grid(8)
    with pytest.raises(ValueError, match="refusing"):
        approximate_chain_control_set(coarse, Reduction(1, 12, 1.0, 8), ([-1.0] * 12, [1.0] * 12), 4, 1.0, u)
