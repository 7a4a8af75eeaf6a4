from __future__ import annotations

import json

import numpy as np
import pytest
from conftest import SYSTEMS, scalar
from hypothesis import given, settings
from hypothesis import strategies as st

from delaylab.system import (
    ControlSignal,
    DelaySystem,
    M2State,
    MetricBasis,
    dump_system,
    in_polytope,
    load_system,
    m2_distance,
    metric_u,
    random_bang_bang,
    system_from_dict,
    system_to_dict,
    validate_system,
)


def test_validate_injectivity_findings():
    assert validate_system(scalar(-1.0, -0.5)).get("injectivity").passed
    assert not validate_system(scalar(-1.0, 0.0)).get("injectivity").passed
    assert validate_system(scalar(-1.0, -0.5)).get("zero_in_omega").passed


def test_zero_not_in_omega_is_reported():
    s = scalar(-1.0, -0.5, omega=((0.5,), (1.0,)))
    assert not s.zero_in_omega
    assert not validate_system(s).get("zero_in_omega").passed


def test_structural_errors_raise():
    with pytest.raises(ValueError):
        DelaySystem((1.0,), ([[1.0]],), ([[1.0]], [[0.0]]), np.array([[1.0]]), 8)
    with pytest.raises(ValueError):
        DelaySystem((1.0, 0.5), ([[1.0]],) * 3, ([[1.0]],) * 3, np.array([[1.0]]), 8)


def test_grid_alignment_rejected():
    with pytest.raises(ValueError):
        DelaySystem((0.3, 1.0), ([[0.0]],) * 3, ([[1.0]],) * 3, np.array([[0.0]]), 8)
    DelaySystem((0.25, 1.0), ([[0.0]],) * 3, ([[1.0]],) * 3, np.array([[0.0]]), 8)


def test_m2_distance_examples():
    a = M2State([3.0], np.zeros(9), 1.0)
    b = M2State([0.0], np.zeros(9), 1.0)
    assert m2_distance(a, a) == 0.0
    assert m2_distance(a, b) == pytest.approx(3.0, abs=1e-15)
    one = M2State([0.0], np.ones(9), 1.0)
    assert m2_distance(one, b) == pytest.approx(1.0, abs=1e-15)


def test_m2_distance_grid_mismatch():
    with pytest.raises(ValueError):
        m2_distance(M2State([0.0], np.zeros(9), 1.0), M2State([0.0], np.zeros(5), 1.0))


def test_trapezoid_norm_is_exact_quadrature_of_interpolant_for_linear():
    # f(s) = s on [-1, 0]: the interpolant is exact and the trapezoid of s^2 overestimates by h^2/6
    n = 16
    y = M2State([0.0], np.linspace(-1.0, 0.0, n + 1), 1.0)
    assert y.norm() ** 2 == pytest.approx(1.0 / 3.0 + (1.0 / n) ** 2 / 6.0, rel=1e-12)


states = st.integers(0, 2**32 - 1).map(np.random.default_rng)


@settings(max_examples=50, deadline=None)
@given(states)
def test_m2_triangle_inequality(rng):
    for _ in range(20):
        a, b, c = (M2State(rng.normal(size=2), rng.normal(size=(17, 2)), 0.5) for _ in range(3))
        assert m2_distance(a, c) <= m2_distance(a, b) + m2_distance(b, c) + 1e-12
        assert m2_distance(a, b) == pytest.approx(m2_distance(b, a), abs=0)


def test_m2_norm_zero_iff_zero():
    assert M2State.zeros(2, 1.0, 8).norm() == 0.0
    assert M2State([0.0, 0.0], np.eye(9, 2) * 1e-8, 1.0).norm() > 0


@settings(max_examples=50, deadline=None)
@given(st.integers(-50, 50), st.integers(-50, 50), st.sampled_from([0.125, 0.25, 1.0]))
def test_shift_composition_exact(k1, k2, dt):
    u = ControlSignal.from_values(np.arange(12.0), dt, 2 * dt)
    a = u.shift(k1 * dt).shift(k2 * dt)
    b = u.shift((k1 + k2) * dt)
    assert a.equals(b)


def test_control_extension_convention():
    u = ControlSignal.from_values([[1.0], [2.0]], 0.5, 1.0)
    assert u([0.0, 0.99, 1.0, 1.5, 1.99, 5.0])[:, 0].tolist() == [0.0, 0.0, 1.0, 2.0, 2.0, 2.0]
    assert u.integral(0.0, 3.0)[0] == pytest.approx(0.5 + 1.0 + 2.0)


def test_shift_rejects_offgrid():
    with pytest.raises(ValueError):
        ControlSignal.from_values([[1.0]], 0.5).shift(0.3)


def test_metric_u_examples():
    u = ControlSignal.constant([1.0], 0.0, 1.0)
    v = ControlSignal.constant([-1.0], 0.0, 1.0)
    assert metric_u(u, u) == 0.0
    # independent route: integrate u - v on each basis interval by dense midpoint sampling
    basis = MetricBasis(1, 8)
    total = 0.0
    for k, (a, b, c) in enumerate(basis.terms(), start=1):
        t = np.linspace(a, b, 200001)
        mid = 0.5 * (t[1:] + t[:-1])
        g = abs(np.sum(u(mid)[:, c] - v(mid)[:, c]) * (b - a) / len(mid))
        total += 2.0**-k * g / (1 + g)
    assert metric_u(u, v, basis) == pytest.approx(total, abs=1e-9)
    assert metric_u(u, v, basis) < 1


def test_metric_basis_enumeration():
    terms = MetricBasis(2, 6).terms()
    assert terms[:4] == [(-1.0, 0.0, 0), (-1.0, 0.0, 1), (0.0, 1.0, 0), (0.0, 1.0, 1)]
    assert terms[4] == (-2.0, -1.5, 0)


@settings(max_examples=40, deadline=None)
@given(states)
def test_metric_u_symmetric_and_bounded(rng):
    s = scalar(-1.0, -0.5)
    u = random_bang_bang(s, rng, -2.0, 2.0, 0.25)
    v = random_bang_bang(s, rng, -2.0, 2.0, 0.25)
    assert metric_u(u, v) == metric_u(v, u)
    assert metric_u(u, u) == 0.0
    assert 0.0 <= metric_u(u, v) < 1.0


def test_polytope_membership():
    square = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
    assert in_polytope(square, [0.0, 0.0])
    assert in_polytope(square, [1.0, 0.3])
    assert not in_polytope(square, [1.1, 0.0])


def test_random_bang_bang_admissible():
    s = load_system(f"{SYSTEMS}/delayed_feedback.json")
    u = random_bang_bang(s, np.random.default_rng(0), -1.0, 3.0, 0.25)
    assert s.admissible(u)
    assert u.t_start == -1.0 and u.t_end == 3.0


def test_spec_roundtrip(tmp_path):
    for name in ("stable_scalar", "hayes", "unstable_scalar", "delayed_feedback"):
        s = load_system(f"{SYSTEMS}/{name}.json")
        p = tmp_path / f"{name}.json"
        dump_system(s, p)
        assert load_system(p) == s
        assert system_from_dict(system_to_dict(s)) == s


def test_unknown_and_missing_keys():
    d = json.load(open(f"{SYSTEMS}/stable_scalar.json"))
    with pytest.raises(ValueError, match="colour"):
        system_from_dict({**d, "colour": 1})
    del d["A"]
    with pytest.raises(ValueError, match="'A'"):
        system_from_dict(d)
