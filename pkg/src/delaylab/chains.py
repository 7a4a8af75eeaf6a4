"""Controlled (eps, tau)-chains and a box approximation of the chain control set.

A chain from y to z consists of nodes y_0 = y, ..., y_q = z, controls
u_0, ..., u_{q-1} and durations tau_j >= tau with
||phi(tau_j, y_j, u_j) - y_{j+1}|| < eps for every j. Controls are read on
their own clock starting at 0, so a leg is ``solve(sys, y_j, u_j, tau_j)``.

The builders use that for 0 in Omega the solution map is jointly linear:
alpha phi(t, y, u) = phi(t, alpha y, alpha u). Scaling a recurrent loop
through y therefore gives chains from y down to 0 and from 0 up to y.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.polynomial import chebyshev
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .integrator import _ratio, propagate, solve
from .system import ControlSignal, DelaySystem, M2State, MetricBasis, m2_distance, metric_u

__all__ = [
    "Chain",
    "ChainReport",
    "verify_chain",
    "concatenate",
    "scale_trajectory_check",
    "seed_loop",
    "build_chain_to_zero",
    "build_chain_from_zero",
    "ladder_steps",
    "SplicedControl",
    "LiftedChain",
    "LiftedChainReport",
    "lift_chain",
    "verify_lifted_chain",
    "Reduction",
    "BoxCover",
    "approximate_chain_control_set",
    "strong_components",
    "chain_to_dict",
    "chain_from_dict",
]


@dataclass(frozen=True, eq=False)
class Chain:
    """Nodes y_0..y_q, controls u_0..u_{q-1}, durations tau_0..tau_{q-1} >= tau.

    ``valid`` stays None until the chain has been through ``verify_chain``.
    """

    nodes: tuple[M2State, ...]
    controls: tuple[ControlSignal, ...]
    durations: tuple[float, ...]
    epsilon: float
    tau: float
    valid: bool | None = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "controls", tuple(self.controls))
        object.__setattr__(self, "durations", tuple(float(d) for d in self.durations))
        q = len(self.controls)
        if q < 1:
            raise ValueError("a chain needs at least one leg")
        if len(self.nodes) != q + 1 or len(self.durations) != q:
            raise ValueError(f"need q + 1 nodes and q durations for q = {q} controls")
        if not self.epsilon > 0 or not self.tau > 0:
            raise ValueError("epsilon and tau must be positive")
        if min(self.durations) < self.tau * (1 - 1e-12):
            raise ValueError(f"durations must be >= tau = {self.tau}")

    @property
    def q(self) -> int:
        return len(self.controls)

    @property
    def start(self) -> M2State:
        return self.nodes[0]

    @property
    def end(self) -> M2State:
        return self.nodes[-1]


@dataclass(frozen=True, eq=False)
class ChainReport:
    valid: bool
    worst_jump: float
    jumps: np.ndarray
    endpoints: tuple[M2State | None, ...]
    diagnostic: str
    chain: Chain

    def to_dict(self) -> dict:
        return {
            "valid": self.valid,
            "epsilon": self.chain.epsilon,
            "tau": self.chain.tau,
            "worst_jump": self.worst_jump,
            "jumps": self.jumps.tolist(),
            "diagnostic": self.diagnostic,
        }


def _run_legs(sys: DelaySystem, starts, controls, durations, step=None):
    """Endpoints phi(tau_j, y_j, u_j), batched over legs of equal duration.

    Returns the endpoints (None for legs that blew up) and diagnostics.
    """
    out: list[M2State | None] = [None] * len(starts)
    notes = []
    groups: dict[float, list[int]] = {}
    for j, d in enumerate(durations):
        groups.setdefault(d, []).append(j)
    for d in sorted(groups):
        idx = groups[d]
        try:
            ends = propagate(sys, [starts[j] for j in idx], [controls[j] for j in idx], d, step)
        except FloatingPointError:
            ends = []
            for j in idx:
                try:
                    ends.append(propagate(sys, [starts[j]], [controls[j]], d, step)[0])
                except FloatingPointError as exc_j:
                    notes.append(f"leg {j}: {exc_j}")
                    ends.append(None)
        for j, e in zip(idx, ends):
            out[j] = e
    return out, notes


def verify_chain(sys: DelaySystem, chain: Chain, step: float | None = None) -> ChainReport:
    """Simulate every leg and measure the M2 jumps; valid iff all are < epsilon."""
    ends, notes = _run_legs(sys, chain.nodes[:-1], chain.controls, chain.durations, step)
    jumps = np.array([np.inf if e is None else m2_distance(e, z) for e, z in zip(ends, chain.nodes[1:])])
    valid = bool(np.all(jumps < chain.epsilon))
    worst = float(jumps.max())
    if not notes and not valid:
        bad = int(np.argmax(jumps))
        notes.append(f"leg {bad}: jump {worst:.6g} >= epsilon {chain.epsilon:.6g}")
    return ChainReport(valid, worst, jumps, tuple(ends), "; ".join(notes), replace(chain, valid=valid))


def _same_state(a: M2State, b: M2State, tol: float = 1e-12) -> bool:
    return m2_distance(a, b) <= tol * (1.0 + a.norm())


def concatenate(first: Chain, second: Chain) -> Chain:
    """Chain running through ``first`` and then ``second``; eps is the larger one."""
    if not _same_state(first.end, second.start):
        raise ValueError("chains do not meet: end of the first differs from start of the second")
    return Chain(
        first.nodes + second.nodes[1:],
        first.controls + second.controls,
        first.durations + second.durations,
        max(first.epsilon, second.epsilon),
        min(first.tau, second.tau),
    )


def _require_zero(sys: DelaySystem):
    if not sys.zero_in_omega:
        raise ValueError("0 is not in Omega; scaled controls alpha u need not be admissible")


def scale_trajectory_check(
    sys: DelaySystem, y0: M2State, u: ControlSignal | None, t: float, alpha: float, step: float | None = None
) -> float:
    """||alpha phi(t, y0, u) - phi(t, alpha y0, alpha u)|| from two separate solves."""
    _require_zero(sys)
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    a = solve(sys, y0, u, t, step).final
    b = solve(sys, alpha * y0, None if u is None else u.scaled(alpha), t, step).final
    return m2_distance(alpha * a, b)


def seed_loop(
    sys: DelaySystem,
    y: M2State,
    u: ControlSignal,
    eps: float,
    tau: float,
    max_periods: int = 200,
    step: float | None = None,
) -> Chain:
    """One-leg loop y -> y: the first multiple j tau with ||phi(j tau, y, u) - y|| < eps.

    ``u`` is read on [0, max_periods tau]; a periodic control with period
    dividing tau is the intended input. Raises if no recurrence is found.
    """
    tr = solve(sys, y, u, max_periods * tau, step)
    for j in range(1, max_periods + 1):
        if m2_distance(tr.state_at(j * tau), y) < eps:
            return Chain((y, y), (u,), (j * tau,), eps, tau)
    raise ValueError(f"no return within eps = {eps} after {max_periods} periods of length {tau}")


def _check_seed(sys: DelaySystem, y: M2State, loop: Chain, eps: float, step) -> ChainReport:
    if not (_same_state(loop.start, y) and _same_state(loop.end, y)):
        raise ValueError("seed loop must start and end at y")
    rep = verify_chain(sys, replace(loop, epsilon=eps), step)
    if not rep.valid:
        raise ValueError(f"seed loop is not a valid ({eps:.3g}, tau)-chain: {rep.diagnostic}")
    return rep


def _scaled_stage(loop: Chain, s: float):
    """Nodes s y_0..s y_{q-1}, controls s u_i and durations of the loop."""
    nodes = [s * y for y in loop.nodes[:-1]]
    return nodes, [u.scaled(s) for u in loop.controls], list(loop.durations)


def _trivial(sys: DelaySystem, eps: float, tau: float) -> Chain:
    z = sys.zero_state()
    return Chain((z, z), (ControlSignal.zero(sys.m, tau),), (tau,), eps, tau)


def build_chain_to_zero(
    sys: DelaySystem, y: M2State, eps: float, tau: float, loop: Chain, step: float | None = None, max_stages: int = 100000
) -> Chain:
    """An (eps, tau)-chain from y to 0 built from an (eps/2, tau)-loop through y.

    alpha is chosen with (1 - alpha)||y|| < eps/2; stage j runs the loop
    scaled by alpha^(j-1) from alpha^(j-1) y to alpha^j y. The last stage
    ends at 0 as soon as the scaled endpoint of its final leg is within eps.
    """
    _require_zero(sys)
    ny = y.norm()
    if ny == 0:
        return _trivial(sys, eps, tau)
    rep = _check_seed(sys, y, loop, eps / 2, step)
    last = rep.endpoints[-1].norm()  # ||phi(tau_{q-1}, y_{q-1}, u_{q-1})||
    alpha = max(1.0 - 0.9 * eps / (2.0 * ny), 0.5)
    k = 1
    while alpha ** (k - 1) * last >= 0.9 * eps:
        k += 1
        if k > max_stages:
            raise ValueError(f"more than {max_stages} stages needed")
    nodes, controls, durations = [], [], []
    for j in range(1, k + 1):
        s = alpha ** (j - 1)
        nn, cc, dd = _scaled_stage(loop, s)
        nodes += nn
        controls += cc
        durations += dd
    nodes.append(sys.zero_state())
    return Chain(tuple(nodes), tuple(controls), tuple(durations), eps, tau)


def ladder_steps(alpha: float, eps: float) -> int:
    """The k with k alpha + eps < 1 <= (k + 1) alpha + eps."""
    k = max(int(np.ceil((1.0 - eps) / alpha)) - 1, 0)
    while k * alpha + eps >= 1:
        k -= 1
    while (k + 1) * alpha + eps < 1:
        k += 1
    return k


def build_chain_from_zero(
    sys: DelaySystem, y: M2State, eps: float, tau: float, loop: Chain, step: float | None = None
) -> tuple[Chain, dict]:
    """A ((1 + 2||y||) eps, tau)-chain from 0 to y by a ladder of scaled loops.

    A zero leg jumps from 0 to alpha y; the alpha-scaled loop then ends at
    (alpha + eps) y, and for j = 1..k the loop scaled by beta_j = j alpha + eps
    climbs to (beta_j + alpha) y, the last rung ending at y itself. Returns the
    chain and the ladder parameters.
    """
    _require_zero(sys)
    if not 0 < eps < 1:
        raise ValueError("the ladder needs 0 < eps < 1")
    ny = y.norm()
    if ny == 0:
        return _trivial(sys, eps, tau), {"alpha": 0.0, "k": 0, "epsilon": eps}
    _check_seed(sys, y, loop, eps / 2, step)
    alpha = 0.9 * min(eps, eps / (2.0 * ny), 1.0 - eps)
    k = ladder_steps(alpha, eps)
    z = sys.zero_state()
    nodes = [z]
    controls: list[ControlSignal] = [ControlSignal.zero(sys.m, tau)]
    durations = [tau]
    for beta in [alpha] + [j * alpha + eps for j in range(1, k + 1)]:
        nn, cc, dd = _scaled_stage(loop, beta)
        nodes += nn
        controls += cc
        durations += dd
    nodes.append(y)
    bound = (1.0 + 2.0 * ny) * eps
    return Chain(tuple(nodes), tuple(controls), tuple(durations), bound, tau), {"alpha": alpha, "k": k, "epsilon": eps}


# ---------------------------------------------------------------- lifting to U x M2


@dataclass(frozen=True, eq=False)
class SplicedControl:
    """Control equal to ``sources[i](t - offsets[i])`` on [edges[i], edges[i+1]).

    ``edges`` starts at -inf and ends at +inf. It supports what the
    integrator and the control metric need: evaluation, exact integrals and
    shifts.
    """

    edges: np.ndarray
    sources: tuple
    offsets: np.ndarray
    dt: float

    @property
    def m(self) -> int:
        return self.sources[0].m

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        # small tolerance so grid times on a breakpoint go to the right piece
        i = np.searchsorted(self.edges, t + 1e-9 * self.dt, side="right") - 1
        out = np.zeros((len(t), self.m))
        for k in np.unique(i):
            sel = i == k
            out[sel] = self.sources[k](t[sel] - self.offsets[k])
        return out

    def integral(self, a: float, b: float) -> np.ndarray:
        acc = np.zeros(self.m)
        first = max(int(np.searchsorted(self.edges, a, side="right")) - 1, 0)
        last = int(np.searchsorted(self.edges, b, side="left"))
        for k in range(first, min(last, len(self.sources))):
            src = self.sources[k]
            lo, hi = max(a, self.edges[k]), min(b, self.edges[k + 1])
            if hi > lo:
                acc = acc + src.integral(lo - self.offsets[k], hi - self.offsets[k])
        return acc

    def shift(self, s: float) -> "SplicedControl":
        return SplicedControl(self.edges - s, self.sources, self.offsets - s, self.dt)

    def abs_integral_diff(self, other, a: float, b: float) -> float:
        """int_a^b |self - other| by midpoints of the dt grid (exact for aligned pieces)."""
        K = int(round((b - a) / self.dt))
        t = a + (np.arange(K) + 0.5) * self.dt
        return float(np.abs(self(t) - other(t)).sum() * self.dt)


def _splice(pieces, dt: float) -> SplicedControl:
    edges = np.array([p[0] for p in pieces] + [np.inf], dtype=float)
    edges[0] = -np.inf
    return SplicedControl(edges, tuple(p[1] for p in pieces), np.array([p[2] for p in pieces], dtype=float), dt)


def _as_spliced(u, dt: float) -> SplicedControl:
    return _splice([(-np.inf, u, 0.0)], dt)


@dataclass(frozen=True, eq=False)
class LiftedChain:
    """Chain in U x M2: pairs (v_j, y_j), durations, eps and tau.

    Consecutive controls agree exactly on (-inf, S] after the shift, with
    S the shortest duration, so control jumps only come from times beyond S.
    """

    controls: tuple[SplicedControl, ...]
    nodes: tuple[M2State, ...]
    durations: tuple[float, ...]
    epsilon: float
    tau: float
    S: float


@dataclass(frozen=True, eq=False)
class LiftedChainReport:
    valid: bool
    worst_jump: float
    state_jumps: np.ndarray
    control_jumps: np.ndarray
    control_jump_integrals: np.ndarray

    def to_dict(self) -> dict:
        return {
            "valid": self.valid,
            "worst_jump": self.worst_jump,
            "state_jumps": self.state_jumps.tolist(),
            "control_jumps": self.control_jumps.tolist(),
            "control_jump_integrals": self.control_jump_integrals.tolist(),
        }


def lift_chain(
    sys: DelaySystem, chain: Chain, u_start: ControlSignal, u_end: ControlSignal, step: float | None = None
) -> LiftedChain:
    """Lift an M2 chain to U x M2 by splicing its controls.

    With tau the chain's tau and the legs prefixed by two padding legs along
    u_start, the master control is u_start up to 2 tau, then u_j on its leg,
    then u_end delayed by one padding leg. Node j carries the master control
    seen from the start of leg j, cut at the end of the leg and continued by
    the next leg's own control. The first two nodes are (u_start, y_0) and
    its time-tau image; the last node is (u_end, z) with z the exact image
    of y_q under the final padding leg.
    """
    if chain.valid is False:
        raise ValueError("input chain is invalid")
    tau = chain.tau
    dt = sys.grid_step if step is None else step
    for u in (u_start, u_end, *chain.controls):
        _ratio(u.dt, dt, "control step dt")
    q = chain.q
    T = [2 * tau]
    for d in chain.durations:
        T.append(T[-1] + d)
    master = [(-np.inf, u_start, 0.0)]
    for j in range(q):
        master.append((T[j], chain.controls[j], T[j]))
    master.append((T[q], u_end, T[q] + tau))

    def cut(start: float, stop: float, nxt, nxt_off: float) -> SplicedControl:
        """Master control seen from ``start``, replaced by ``nxt`` after ``stop``."""
        pieces = [(a - start, src, off - start) for a, src, off in master if a < stop]
        pieces.append((stop - start, nxt, nxt_off - start))
        return _splice(pieces, dt)

    y0 = chain.start
    (y_m1,) = propagate(sys, [y0], [u_start], tau, step)
    controls = [_as_spliced(u_start, dt)]
    nodes = [y0, y_m1]
    durations = [tau, tau]
    # v_{-1}: u_start(tau + t) up to t = tau, then u_0
    controls.append(cut(tau, 2 * tau, chain.controls[0], 2 * tau))
    for j in range(q):
        if j + 1 < q:
            nxt, off = chain.controls[j + 1], T[j + 1]
        else:
            nxt, off = u_end, T[q] + tau
        controls.append(cut(T[j], T[j + 1], nxt, off))
        nodes.append(chain.nodes[j])
        durations.append(chain.durations[j])
    # v_q: master from T_q on, i.e. u_end(t - tau) for t > 0
    controls.append(cut(T[q], np.inf, u_end, T[q] + tau))
    nodes.append(chain.end)
    durations.append(tau)
    (z,) = propagate(sys, [chain.end], [controls[-1]], tau, step)
    controls.append(_as_spliced(u_end, dt))
    nodes.append(z)
    S = min(durations)
    return LiftedChain(tuple(controls), tuple(nodes), tuple(durations), chain.epsilon, tau, S)


def verify_lifted_chain(
    sys: DelaySystem, lchain: LiftedChain, basis: MetricBasis | None = None, step: float | None = None
) -> LiftedChainReport:
    """Jumps in the product metric max(d_U, d_M2) along a lifted chain."""
    q = len(lchain.durations)
    ends, notes = _run_legs(sys, lchain.nodes[:-1], lchain.controls[:-1], lchain.durations, step)
    sj = np.array([np.inf if e is None else m2_distance(e, z) for e, z in zip(ends, lchain.nodes[1:])])
    basis = basis if basis is not None else MetricBasis(lchain.controls[0].m)
    cj = np.empty(q)
    ci = np.empty(q)
    for j in range(q):
        a = lchain.controls[j].shift(lchain.durations[j])
        b = lchain.controls[j + 1]
        cj[j] = metric_u(a, b, basis)
        ci[j] = a.abs_integral_diff(b, -lchain.S, lchain.S)
    worst = np.maximum(sj, cj)
    return LiftedChainReport(bool(np.all(worst < lchain.epsilon)), float(worst.max()), sj, cj, ci)


# ---------------------------------------------------------------- chain files


def chain_to_dict(chain: Chain) -> dict:
    legs = [
        {"duration": d, "control_descriptor": u.to_dict(), "node": y.to_dict()}
        for d, u, y in zip(chain.durations, chain.controls, chain.nodes[1:])
    ]
    return {"epsilon": chain.epsilon, "tau": chain.tau, "start": chain.start.to_dict(), "legs": legs}


def chain_from_dict(d: dict, h: float) -> Chain:
    unknown = set(d) - {"epsilon", "tau", "start", "legs"}
    if unknown:
        raise ValueError(f"unknown key(s) in chain file: {sorted(unknown)}")
    legs = d["legs"]
    nodes = [M2State.from_dict(d["start"], h)] + [M2State.from_dict(leg["node"], h) for leg in legs]
    controls = [ControlSignal.from_dict(leg["control_descriptor"]) for leg in legs]
    durations = [float(leg["duration"]) for leg in legs]
    return Chain(tuple(nodes), tuple(controls), tuple(durations), float(d["epsilon"]), float(d["tau"]))


# ---------------------------------------------------------------- box method


@dataclass(frozen=True)
class Reduction:
    """Reduced coordinates: the head, then the first d - n Chebyshev coefficients
    of the segment on [-h, 0] (coefficient-major, coordinate-minor)."""

    n: int
    d: int
    h: float
    n_seg: int

    def __post_init__(self):
        if self.d < self.n:
            raise ValueError("reduced dimension must be at least n")

    @property
    def _K(self) -> int:
        return -(-(self.d - self.n) // self.n)

    def _vander(self) -> np.ndarray:
        x = np.linspace(-1.0, 1.0, self.n_seg + 1)
        return chebyshev.chebvander(x, max(self._K - 1, 0))

    def lift(self, c: np.ndarray) -> M2State:
        c = np.asarray(c, dtype=float)
        coef = np.zeros(self._K * self.n)
        coef[: self.d - self.n] = c[self.n :]
        seg = self._vander() @ coef.reshape(self._K, self.n) if self._K else np.zeros((self.n_seg + 1, self.n))
        return M2State(c[: self.n], seg, self.h)

    def reduce_many(self, heads: np.ndarray, segs: np.ndarray) -> np.ndarray:
        """Batch version: heads (b, n), segments (b, n_seg + 1, n) -> (b, d)."""
        if self._K == 0:
            return np.array(heads, dtype=float)
        coef = np.linalg.lstsq(self._vander(), np.moveaxis(segs, 1, 0).reshape(self.n_seg + 1, -1), rcond=None)[0]
        coef = coef.reshape(self._K, len(heads), self.n).transpose(1, 0, 2).reshape(len(heads), -1)
        return np.concatenate([heads, coef[:, : self.d - self.n]], axis=1)

    def reduce(self, y: M2State) -> np.ndarray:
        return self.reduce_many(y.head[None], y.segment[None])[0]

    def roundtrip_error(self, samples: int = 8, seed: int = 0) -> float:
        """max |reduce(lift(c)) - c| over the unit vectors and a few random points."""
        rng = np.random.default_rng(seed)
        pts = np.vstack([np.eye(self.d), rng.uniform(-1, 1, size=(samples, self.d))])
        return float(max(np.abs(self.reduce(self.lift(c)) - c).max() for c in pts))


@dataclass(frozen=True, eq=False)
class BoxCover:
    """Selected boxes of a uniform partition of ``[lo, hi]`` at a given depth.

    ``indices`` are integer box coordinates, sorted lexicographically; box i
    is ``lo + indices[i] * width`` to ``lo + (indices[i] + 1) * width``.
    ``graph_nodes`` and ``graph_edges`` hold the transition graph of the
    last level before the component was extracted.
    """

    lo: np.ndarray
    hi: np.ndarray
    depth: int
    indices: np.ndarray
    reduction: Reduction
    roundtrip_error: float
    truncation_error: float
    zero_index: np.ndarray
    graph_nodes: np.ndarray
    graph_edges: np.ndarray
    level_sizes: tuple[int, ...] = field(default_factory=tuple)

    @property
    def width(self) -> np.ndarray:
        return (self.hi - self.lo) / 2**self.depth

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.width))

    def bounds(self) -> np.ndarray:
        """(k, 2, d): lower and upper corners."""
        lower = self.lo + self.indices * self.width
        return np.stack([lower, lower + self.width], axis=1)

    def contains_index(self, idx) -> bool:
        return bool(np.any(np.all(self.indices == np.asarray(idx), axis=1)))

    def projection_intervals(self, coord: int = 0) -> list[tuple[float, float]]:
        """Union of the boxes' extents along one coordinate, as merged intervals."""
        b = self.bounds()[:, :, coord]
        b = b[np.argsort(b[:, 0])]
        out: list[list[float]] = []
        for a, c in b:
            if out and a <= out[-1][1] + 1e-12:
                out[-1][1] = max(out[-1][1], c)
            else:
                out.append([a, c])
        return [(float(a), float(c)) for a, c in out]

    def to_dict(self) -> dict:
        return {
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "depth": self.depth,
            "width": self.width.tolist(),
            "reduced_dimension": self.reduction.d,
            "roundtrip_error": self.roundtrip_error,
            "truncation_error": self.truncation_error,
            "level_sizes": list(self.level_sizes),
            "boxes": [{"index": i.tolist(), "lower": b[0].tolist(), "upper": b[1].tolist()} for i, b in zip(self.indices, self.bounds())],
        }


def strong_components(num_nodes: int, edges: np.ndarray) -> np.ndarray:
    """Strongly connected component label of every node, edges as (E, 2) ints."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    g = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(num_nodes, num_nodes)).tocsr()
    _, labels = connected_components(g, directed=True, connection="strong")
    return labels


def _codes(idx: np.ndarray, side: int) -> np.ndarray:
    d = idx.shape[1]
    radix = side ** np.arange(d - 1, -1, -1, dtype=np.int64)
    return idx.astype(np.int64) @ radix


def _graph(idx, lo, w, side, M, G, diam, sample_offsets):
    """Edges between boxes ``idx`` (sorted lexicographically) of width ``w``."""
    k, d = idx.shape
    codes = _codes(idx, side)
    lower = lo + idx * w
    pts = lower[:, None, :] + sample_offsets[None] * w  # (k, P, d)
    base = pts @ M.T
    r = int(np.ceil(diam / w.min() - 1e-12))
    stencil = (2 * r + 1) ** d
    out = []
    src_all = np.repeat(np.arange(k), pts.shape[1])
    for g in G:
        img = (base + g).reshape(-1, d)
        if stencil <= 4 * k:
            cell = np.floor((img - lo) / w).astype(np.int64)
            for off in itertools.product(range(-r, r + 1), repeat=d):
                cand = cell + np.asarray(off)
                ok = np.all((cand >= 0) & (cand < side), axis=1)
                cc = _codes(np.clip(cand, 0, side - 1), side)
                pos = np.minimum(np.searchsorted(codes, cc), k - 1)
                hit = ok & (codes[pos] == cc)
                dst = pos[hit]
                src = src_all[hit]
                p = img[hit]
                bl = lower[dst]
                dist = np.linalg.norm(np.maximum(0, np.maximum(bl - p, p - (bl + w))), axis=1)
                close = dist <= diam
                out.append(np.stack([src[close], dst[close]], axis=1))
        else:
            for b0 in range(0, len(img), 256):
                p = img[b0 : b0 + 256, None, :]
                dist = np.linalg.norm(np.maximum(0, np.maximum(lower[None] - p, p - (lower[None] + w))), axis=2)
                s, t = np.nonzero(dist <= diam)
                out.append(np.stack([src_all[b0 + s], t], axis=1))
    e = np.concatenate(out, axis=0) if out else np.zeros((0, 2), dtype=np.int64)
    e = np.unique(e[:, 0].astype(np.int64) * k + e[:, 1])
    return np.stack([e // k, e % k], axis=1)


def approximate_chain_control_set(
    sys: DelaySystem,
    reduction: Reduction,
    region: tuple[Sequence[float], Sequence[float]],
    depth: int,
    tau: float,
    control_samples: Sequence[ControlSignal],
    step: float | None = None,
) -> BoxCover:
    """Subdivision approximation of the chain control set in reduced coordinates.

    The time-tau map of the reduced model is affine, c -> M c + g_u, with
    M and g_u obtained from solves through ``reduction``. At every level the
    current boxes are bisected in all coordinates, the corners and centre of
    each box are mapped under every sampled control, and an edge b -> b' is
    added when an image lies within one box diameter of b'. The strongly
    connected component of the box containing 0 is kept for the next level.
    """
    lo = np.asarray(region[0], dtype=float)
    hi = np.asarray(region[1], dtype=float)
    d = reduction.d
    if lo.shape != (d,) or hi.shape != (d,) or np.any(hi <= lo):
        raise ValueError(f"region must be two corners in R^{d} with lo < hi")
    if np.any(lo > 0) or np.any(hi < 0):
        raise ValueError("region does not contain 0")
    if d > 12:
        raise ValueError("reduced dimension above 12 is not supported")
    if (reduction.n, reduction.h, reduction.n_seg) != (sys.n, sys.h, sys.n_seg):
        raise ValueError("reduction does not match the system grid")
    if not control_samples:
        raise ValueError("need at least one control sample")
    for u in control_samples:
        if not sys.admissible(u):
            raise ValueError("control sample takes values outside Omega")
    w_final = (hi - lo) / 2**depth
    rt = reduction.roundtrip_error()
    if rt > np.linalg.norm(w_final):
        raise ValueError(f"reduction roundtrip error {rt:.3g} exceeds the box diameter; refusing this resolution")

    basis = [reduction.lift(e) for e in np.eye(d)]
    zero = sys.zero_state()
    ys = basis + [zero] * len(control_samples)
    us = [None] * d + list(control_samples)
    ends = propagate(sys, ys, us, tau, step)
    heads = np.stack([y.head for y in ends])
    segs = np.stack([y.segment for y in ends])
    red = reduction.reduce_many(heads, segs)
    M = red[:d].T
    G = red[d:]
    trunc = max(m2_distance(e, reduction.lift(c)) for e, c in zip(ends, red))

    corners = np.array(list(itertools.product((0.0, 1.0), repeat=d)))
    offsets = np.vstack([corners, np.full((1, d), 0.5)])

    idx = np.zeros((1, d), dtype=np.int64)
    sizes = []
    nodes = idx
    edges = np.zeros((0, 2), dtype=np.int64)
    zero_idx = np.zeros(d, dtype=np.int64)
    for level in range(depth + 1):
        if level > 0:
            idx = (2 * idx[:, None, :] + corners.astype(np.int64)[None]).reshape(-1, d)
        w = (hi - lo) / 2**level
        side = 2**level
        idx = idx[np.lexsort(idx.T[::-1])]
        zero_idx = np.minimum(np.floor(-lo / w).astype(np.int64), side - 1)
        edges = _graph(idx, lo, w, side, M, G, float(np.linalg.norm(w)), offsets)
        labels = strong_components(len(idx), edges)
        zpos = np.nonzero(np.all(idx == zero_idx, axis=1))[0]
        if len(zpos) == 0:
            raise RuntimeError("box of 0 was lost during subdivision")
        nodes = idx
        idx = idx[labels == labels[zpos[0]]]
        sizes.append(len(idx))
    return BoxCover(lo, hi, depth, idx, reduction, rt, float(trunc), zero_idx, nodes, edges, tuple(sizes))
