"""Linear lift of the affine system to M2 x R and its projectivization.

Adding a scalar gamma that multiplies the forcing makes the dynamics linear:
(y, gamma) -> (T(t) y + gamma phi(t, 0, u), gamma), with gamma never updated.
Affine states embed at gamma = 1 via h1(u, y) = (u, P(y, 1)); the equator
gamma = 0 carries the homogeneous flow via h0. Norms on M2 x R are
sqrt(||y||^2 + gamma^2) with the trapezoid M2 norm.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .chains import Chain, verify_chain
from .hyperbolic import EntireSolutionRequest, entire_solutions
from .integrator import propagate
from .spectral import HyperbolicSplitting
from .system import ControlSignal, DelaySystem, M2State

__all__ = [
    "LiftedState",
    "ProjectivePoint",
    "lifted_flow",
    "embed_h1",
    "invert_h1",
    "embed_h0",
    "projective_distance",
    "chain_map_h1",
    "equator_distance",
    "SubbundleSample",
    "hyperbolic_subbundle_sample",
]

_SIGN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class LiftedState:
    """Element (y, gamma) of M2 x R."""

    y: M2State
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "gamma", float(self.gamma))

    def __add__(self, other: "LiftedState") -> "LiftedState":
        return LiftedState(self.y + other.y, self.gamma + other.gamma)

    def __sub__(self, other: "LiftedState") -> "LiftedState":
        return LiftedState(self.y - other.y, self.gamma - other.gamma)

    def __mul__(self, c: float) -> "LiftedState":
        return LiftedState(c * self.y, c * self.gamma)

    __rmul__ = __mul__

    def __neg__(self) -> "LiftedState":
        return LiftedState(-self.y, -self.gamma)

    def norm(self) -> float:
        return float(np.sqrt(self.y.norm() ** 2 + self.gamma**2))

    def flat(self) -> np.ndarray:
        """Fixed enumeration: head, segment samples, gamma."""
        return np.concatenate([self.y.flat(), [self.gamma]])

    def to_dict(self) -> dict:
        return {**self.y.to_dict(), "gamma": self.gamma}


@dataclass(frozen=True, eq=False)
class ProjectivePoint:
    """Line through a nonzero lifted state, stored by a unit representative.

    The representative's first coordinate with modulus above 1e-12 in the
    enumeration (head, segment, gamma) is positive.
    """

    rep: LiftedState

    @classmethod
    def of(cls, v: LiftedState) -> "ProjectivePoint":
        nv = v.norm()
        if not nv > 0:
            raise ValueError("the zero vector has no projective class")
        u = v * (1.0 / nv)
        f = u.flat()
        nz = np.nonzero(np.abs(f) > _SIGN_TOL)[0]
        if len(nz) and f[nz[0]] < 0:
            u = -u
        return cls(u)

    def to_dict(self) -> dict:
        return {"representative": self.rep.to_dict(), "equator_distance": equator_distance(self)}


def lifted_flow(
    sys: DelaySystem, state: LiftedState, u: ControlSignal | None, t: float, step: float | None = None
) -> LiftedState:
    """(T(t) y + gamma phi(t, 0, u), gamma)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if state.gamma == 0.0 or u is None:
        (hom,) = propagate(sys, [state.y], [None], t, step)
        return LiftedState(hom, state.gamma)
    hom, forced = propagate(sys, [state.y, sys.zero_state()], [None, u], t, step)
    return LiftedState(hom + state.gamma * forced, state.gamma)


def embed_h1(u, y: M2State):
    """h1(u, y) = (u, P(y, 1))."""
    return u, ProjectivePoint.of(LiftedState(y, 1.0))


def invert_h1(p: ProjectivePoint) -> M2State:
    """The y with P(y, 1) = p; fails on the equator."""
    g = p.rep.gamma
    if abs(g) <= _SIGN_TOL:
        raise ValueError("point lies on the equator; it is not in the image of h1")
    return p.rep.y * (1.0 / g)


def embed_h0(u, y: M2State):
    """h0(u, y) = (u, (y, 0))."""
    return u, LiftedState(y, 0.0)


def projective_distance(a: ProjectivePoint, b: ProjectivePoint) -> float:
    """min(||a - b||, ||a + b||) over the unit representatives."""
    return float(min((a.rep - b.rep).norm(), (a.rep + b.rep).norm()))


def equator_distance(p: ProjectivePoint) -> float:
    """|gamma| of the unit representative, i.e. 1 / ||(y, 1)|| for p = P(y, 1)."""
    return abs(p.rep.gamma)


def chain_map_h1(sys: DelaySystem, chain: Chain, step: float | None = None) -> dict:
    """Projective jumps of the image of an M2 chain under h1, checked against 2 eps.

    The endpoint of leg j maps to P(phi(tau_j, y_j, u_j), 1), which is the
    projectivized lifted flow from (y_j, 1).
    """
    rep = verify_chain(sys, chain, step)
    if not rep.valid:
        raise ValueError(f"input chain is invalid: {rep.diagnostic}")
    jumps = np.array(
        [projective_distance(embed_h1(None, e)[1], embed_h1(None, z)[1]) for e, z in zip(rep.endpoints, chain.nodes[1:])]
    )
    bound = 2.0 * chain.epsilon
    return {"valid": bool(np.all(jumps < bound)), "bound": bound, "worst_jump": float(jumps.max()), "jumps": jumps}


@dataclass(frozen=True, eq=False)
class SubbundleSample:
    points: tuple[tuple[ControlSignal, ProjectivePoint], ...]
    margin: float

    def to_dict(self) -> dict:
        return {
            "margin": self.margin,
            "points": [{"control": u.to_dict(), **p.to_dict()} for u, p in self.points],
        }


def hyperbolic_subbundle_sample(
    sys: DelaySystem,
    split: HyperbolicSplitting,
    control_samples: Sequence[ControlSignal],
    req: EntireSolutionRequest = EntireSolutionRequest(),
) -> SubbundleSample:
    """Points P(e(u, 0), 1) of the invariant line bundle over sampled controls.

    The lifted flow maps (e(u, 0), 1) to (e(theta_t u, 0), 1), so the lines
    spanned by (e(u, 0), 1) form the invariant subbundle; ``margin`` is the
    smallest equator distance over the sample.
    """
    es = entire_solutions(sys, split, list(control_samples), 0.0, req)
    pts = tuple((u, ProjectivePoint.of(LiftedState(e, 1.0))) for u, e in zip(control_samples, es))
    margin = min(equator_distance(p) for _, p in pts) if pts else float("nan")
    return SubbundleSample(pts, float(margin))
