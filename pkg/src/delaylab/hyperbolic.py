"""Bounded entire solutions of hyperbolic systems and the conjugacy to the homogeneous flow.

For a control u the unique bounded entire solution splits as e = e- + e+:

* e-(u, t) lies in V- and is the limit of pi- phi(T, 0, theta_{t-T} u) as
  T grows. It is computed by running the integrator forward from the zero
  state at t - T_past and re-projecting onto V- after every chunk of length
  h, which keeps integrator roundoff in the unstable directions from growing.
* e+(u, t) lies in V+ and in modal coordinates solves c' = mu c + W b(t),
  with b the forcing. Its bounded solution is c(t) = -int_t^inf
  e^{-mu (s - t)} W b(s) ds, evaluated exactly for the piecewise-constant
  forcing and truncated at t + T_fut.

The graph {(u, e(u, 0))} is invariant: phi(t, e(u, 0), u) = e(theta_t u, 0).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .integrator import _forcing, _ratio, _substeps, propagate
from .spectral import HyperbolicSplitting
from .system import ControlSignal, DelaySystem, M2State

__all__ = [
    "EntireSolutionRequest",
    "horizon",
    "e_minus",
    "e_plus",
    "e_plus_coordinates",
    "entire_solution",
    "entire_solutions",
    "conjugacy_H",
    "chain_recurrent_graph",
    "stable_chain_contraction",
]


@dataclass(frozen=True)
class EntireSolutionRequest:
    """Truncation settings; horizons default to the ones implied by ``tol``."""

    tol: float = 1e-8
    horizon_factor: float = 1.0
    step: float | None = None


def horizon(split: HyperbolicSplitting, tol: float) -> float:
    """T = 2 (ln(1/tol) + ln K) / alpha."""
    return 2.0 * (np.log(1.0 / tol) + np.log(max(split.K_hat, 1.0))) / split.alpha_hat


def _chunks(sys: DelaySystem, T: float) -> tuple[float, int]:
    n = int(np.ceil(T / sys.h - 1e-12))
    return sys.h, max(n, 1)


def _check_time(sys: DelaySystem, t: float, step: float):
    if t != 0:
        _ratio(abs(t), step, "evaluation time")


def e_minus_batch(
    sys: DelaySystem,
    split: HyperbolicSplitting,
    controls: Sequence[ControlSignal],
    t: float,
    req: EntireSolutionRequest = EntireSolutionRequest(),
) -> list[M2State]:
    step, _ = _substeps(sys, req.step)
    _check_time(sys, t, step)
    chunk, count = _chunks(sys, req.horizon_factor * horizon(split, req.tol))
    t0 = t - count * chunk
    ys = [sys.zero_state() for _ in controls]
    if split.dim_plus == 0:
        return propagate(sys, ys, list(controls), count * chunk, step, t0)
    for k in range(count):
        ys = propagate(sys, ys, list(controls), chunk, step, t0 + k * chunk)
        ys = [split.project_minus(y) for y in ys]
    return ys


def e_minus(
    sys: DelaySystem, split: HyperbolicSplitting, u: ControlSignal, t: float, req: EntireSolutionRequest = EntireSolutionRequest()
) -> M2State:
    """Stable part e-(u, t) of the bounded entire solution."""
    return e_minus_batch(sys, split, [u], t, req)[0]


def e_plus_coordinates(
    sys: DelaySystem, split: HyperbolicSplitting, u: ControlSignal, t: float, req: EntireSolutionRequest = EntireSolutionRequest()
) -> list[np.ndarray]:
    """Modal coordinates of e+(u, t), one complex vector per mode."""
    if split.dim_plus == 0:
        return []
    step, _ = _substeps(sys, req.step)
    _check_time(sys, t, step)
    lam = min(md.mu.real for md in split.modes)
    T = req.horizon_factor * 2.0 * np.log(max(split.K_hat, 1.0) / req.tol) / lam
    K = int(np.ceil(T / step))
    b = _forcing(sys, [u], t, K, step)[:, 0, :]
    s = step * np.arange(K)
    out = []
    for md in split.modes:
        z = -md.mu * step
        cell = step * (np.expm1(z) / z if abs(z) > 1e-12 else 1.0)  # int_0^step e^{-mu s} ds
        kern = np.exp(-md.mu * s) * cell
        out.append(-(md.W @ (kern @ b)))
    return out


def e_plus(
    sys: DelaySystem, split: HyperbolicSplitting, u: ControlSignal, t: float, req: EntireSolutionRequest = EntireSolutionRequest()
) -> M2State:
    """Unstable part e+(u, t)."""
    if split.dim_plus == 0:
        return sys.zero_state()
    return split.from_coordinates(e_plus_coordinates(sys, split, u, t, req))


def entire_solutions(
    sys: DelaySystem,
    split: HyperbolicSplitting,
    controls: Sequence[ControlSignal],
    t: float,
    req: EntireSolutionRequest = EntireSolutionRequest(),
) -> list[M2State]:
    """e(u, t) for a batch of controls."""
    if not controls:
        return []
    em = e_minus_batch(sys, split, controls, t, req)
    if split.dim_plus == 0:
        return em
    return [a + e_plus(sys, split, u, t, req) for a, u in zip(em, controls)]


def entire_solution(
    sys: DelaySystem, split: HyperbolicSplitting, u: ControlSignal, t: float, req: EntireSolutionRequest = EntireSolutionRequest()
) -> M2State:
    """The unique bounded entire solution e(u, t) = e-(u, t) + e+(u, t)."""
    return entire_solutions(sys, split, [u], t, req)[0]


def conjugacy_H(
    sys: DelaySystem, split: HyperbolicSplitting, u: ControlSignal, y: M2State, req: EntireSolutionRequest = EntireSolutionRequest()
) -> M2State:
    """H(u, y) = y - e(u, 0), conjugating the control flow to the homogeneous one."""
    return y - entire_solution(sys, split, u, 0.0, req)


def chain_recurrent_graph(
    sys: DelaySystem,
    split: HyperbolicSplitting,
    control_samples: Sequence[ControlSignal],
    req: EntireSolutionRequest = EntireSolutionRequest(),
) -> list[tuple[ControlSignal, M2State]]:
    """Sampled graph {(u, e(u, 0))}; its projection to M2 approximates the chain control set."""
    states = entire_solutions(sys, split, list(control_samples), 0.0, req)
    return list(zip(control_samples, states))


def stable_chain_contraction(
    sys: DelaySystem,
    split: HyperbolicSplitting,
    y: M2State,
    eps: float,
    tau: float,
    q: int,
    rng: np.random.Generator,
) -> dict:
    """Random (eps, tau)-chain of the homogeneous flow inside V-, checked against
    ||y_q|| <= beta^q ||y|| + eps / (1 - beta) with beta = K e^{-alpha tau}."""
    beta = split.K_hat * np.exp(-split.alpha_hat * tau)
    if not beta < 1:
        raise ValueError(f"beta = {beta:.3g} >= 1; increase tau")
    node = split.project_minus(y)
    norms = [node.norm()]
    for _ in range(q):
        (node,) = propagate(sys, [node], [None], tau)
        jump = M2State(rng.normal(size=sys.n), rng.normal(size=(sys.n_seg + 1, sys.n)), sys.h)
        jump = split.project_minus(jump)
        jump = jump * (0.999 * eps * rng.random() / max(jump.norm(), 1e-300))
        node = split.project_minus(node + jump)
        norms.append(node.norm())
    bound = beta**q * norms[0] + eps / (1 - beta)
    return {"beta": float(beta), "final_norm": norms[-1], "bound": float(bound), "passed": norms[-1] <= bound, "norms": norms}
