"""Trajectories of the delay system on the M2 state space.

The scheme is classical RK4 on a fixed step that divides the history grid,
the delays and the control breakpoints. Delayed arguments are read from the
stored piecewise-linear history: stage 1 uses the left end of the current
delayed cell, stages 2 and 3 its midpoint, stage 4 its right end. The
forcing is constant on every step. Because every operation is linear and the
step grid is fixed, the discrete map inherits affinity, the scaling identity
and (for continuous states) the cocycle law to roundoff.

The last history cell ends in f(0-), which is kept distinct from the head
x(0); states produced by the integrator at positive times are continuous.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve

from .system import ControlSignal, DelaySystem, M2State

__all__ = [
    "Trajectory",
    "solve",
    "solve_batch",
    "propagate",
    "solve_vdp",
    "fundamental_matrix",
    "fundamental_matrix_grid",
    "semiflow_step",
    "affine_split",
    "reconstruct_initial",
]

_CHECK_EVERY = 256


def _ratio(a: float, b: float, what: str) -> int:
    """a / b as an integer, or raise."""
    k = a / b
    kr = round(k)
    if kr < 1 and a > 0 or abs(k - kr) > 1e-9 * max(1.0, abs(k)):
        raise ValueError(f"misaligned step: {what} = {a} is not an integer multiple of the step {b}")
    return int(kr)


def _substeps(sys: DelaySystem, step: float | None) -> tuple[float, int]:
    if step is None:
        return sys.grid_step, 1
    return step, _ratio(sys.grid_step, step, "grid step h/n_seg")


def _refine_history(seg: np.ndarray, r: int) -> np.ndarray:
    """Piecewise-linear refinement of segment samples by an integer factor."""
    if r == 1:
        return np.array(seg, dtype=float)
    w = np.arange(r) / r
    body = seg[:-1, None, :] * (1 - w)[None, :, None] + seg[1:, None, :] * w[None, :, None]
    return np.concatenate([body.reshape(-1, seg.shape[1]), seg[-1:]], axis=0)


def _forcing(sys: DelaySystem, controls, t0: float, nsteps: int, step: float) -> np.ndarray:
    """Per-step constant forcing sum_i B_i u(t - h_i) at step midpoints, shape (nsteps, b, n)."""
    F = np.zeros((nsteps, len(controls), sys.n))
    mids = t0 + (np.arange(nsteps) + 0.5) * step
    for b, u in enumerate(controls):
        if u is None:
            continue
        if u.m != sys.m:
            raise ValueError(f"control dimension {u.m} does not match m = {sys.m}")
        _ratio(u.dt, step, "control step dt")
        for hi, Bi in zip(sys.all_delays, sys.B):
            if np.any(Bi):
                F[:, b, :] += u(mids - hi) @ Bi.T
    return F


def _march(sys: DelaySystem, heads: np.ndarray, hists: np.ndarray, F: np.ndarray, step: float, r: int, t0: float = 0.0):
    """Core RK4 loop over a batch.

    heads: (b, n); hists: (H+1, b, n) at step resolution, last row f(0-);
    F: (nsteps, b, n). Returns the combined buffer (H + nsteps + 1, b, n)
    holding history (rows < H) and solution (rows >= H), and the right-limit
    derivative at every solution time (nsteps + 1, b, n).
    """
    H = hists.shape[0] - 1
    nsteps = F.shape[0]
    A0T = sys.A[0].T
    act = [i for i, a in enumerate(sys.A[1:]) if np.any(a)]
    lags = np.array([sys.lag_cells[i] * r for i in act], dtype=np.int64)
    # delayed terms of all lags in one product: sum_i L_i A_i^T
    DT = np.concatenate([sys.A[1 + i].T for i in act], axis=0) if act else None
    buf = np.empty((H + nsteps + 1,) + heads.shape)
    buf[:H] = hists[:H]
    buf[H] = heads
    f0m = hists[H]
    b, n = heads.shape
    xdot = np.empty((nsteps + 1,) + heads.shape)
    half = 0.5 * step
    sixth = step / 6.0
    zero = np.zeros_like(heads)
    with np.errstate(over="ignore", invalid="ignore"):  # blow-up is reported below
        for k in range(nsteps):
            x = buf[H + k]
            if DT is not None:
                j = H + k - lags
                Ls = buf[j]
                Rs = buf[j + 1]
                hit = j == H - 1
                if hit.any():
                    Rs[hit] = f0m
                dL = Ls.transpose(1, 0, 2).reshape(b, -1) @ DT
                dR = Rs.transpose(1, 0, 2).reshape(b, -1) @ DT
                dM = 0.5 * (dL + dR)
            else:
                dL = dM = dR = zero
            Fk = F[k]
            k1 = x @ A0T + dL + Fk
            k2 = (x + half * k1) @ A0T + dM + Fk
            k3 = (x + half * k2) @ A0T + dM + Fk
            k4 = (x + step * k3) @ A0T + dR + Fk
            xdot[k] = k1
            buf[H + k + 1] = x + sixth * (k1 + 2 * k2 + 2 * k3 + k4)
            if (k + 1) % _CHECK_EVERY == 0 and not np.all(np.isfinite(buf[H + k + 1])):
                _blowup(buf[H : H + k + 2], t0, step)
        # right-limit derivative at the final time, forcing held from the last step
        x = buf[H + nsteps]
        d = buf[H + nsteps - lags].transpose(1, 0, 2).reshape(b, -1) @ DT if DT is not None else 0.0
        xdot[nsteps] = x @ A0T + d + (F[-1] if nsteps else 0.0)
    if not np.all(np.isfinite(buf)):
        _blowup(buf[H:], t0, step)
    return buf, xdot


def _blowup(sol: np.ndarray, t0: float, step: float):
    bad = np.flatnonzero(~np.all(np.isfinite(sol.reshape(sol.shape[0], -1)), axis=1))
    raise FloatingPointError(f"non-finite solution, first bad time t = {t0 + bad[0] * step:.6g}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Solution on [t0, t1] with its history, sampled on the integrator step.

    ``x[k]`` is x(t0 + k step); ``hist`` holds the initial history at step
    resolution with last row f(0-); ``xdot[k]`` is the right-limit derivative
    from the model right-hand side; ``dt`` is the output step for ``states``.
    """

    sys: DelaySystem
    y0: M2State
    t0: float
    step: float
    x: np.ndarray
    hist: np.ndarray
    xdot: np.ndarray
    forcing: np.ndarray
    dt: float

    @property
    def t1(self) -> float:
        return self.t0 + (len(self.x) - 1) * self.step

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.step * np.arange(len(self.x))

    @property
    def _r(self) -> int:
        return (len(self.hist) - 1) // self.sys.n_seg

    @property
    def x_dense(self) -> np.ndarray:
        """Samples of x on [t0 - h, t1] at step resolution (x(t0) = head)."""
        return np.concatenate([self.hist[:-1], self.x], axis=0)

    @property
    def dense_times(self) -> np.ndarray:
        H = len(self.hist) - 1
        return self.t0 + self.step * np.arange(-H, len(self.x))

    def index(self, t: float) -> int:
        return _ratio(t - self.t0, self.step, "time offset") if t != self.t0 else 0

    def state_at(self, t: float) -> M2State:
        k = self.index(t)
        if not 0 <= k < len(self.x):
            raise ValueError(f"time {t} outside [{self.t0}, {self.t1}]")
        if k == 0:
            return self.y0
        seg = self.x_dense[k : k + len(self.hist) : self._r]
        return M2State(self.x[k], seg, self.sys.h)

    @property
    def states(self) -> list[M2State]:
        every = _ratio(self.dt, self.step, "output step")
        return [self.state_at(self.t0 + k * self.step) for k in range(0, len(self.x), every)]

    @property
    def final(self) -> M2State:
        return self.state_at(self.t1)

    def midpoint_residual(self) -> float:
        """Max over steps of |(x_{k+1}-x_k)/step - rhs(midpoint)| with linear delayed reads."""
        xd = self.x_dense
        H = len(self.hist) - 1
        K = len(self.x) - 1
        xm = 0.5 * (self.x[1:] + self.x[:-1])
        rhs = xm @ self.sys.A[0].T + self.forcing[:K]
        for c, Ai in zip(self.sys.lag_cells, self.sys.A[1:]):
            m = c * self._r
            idx = H + np.arange(K) - m
            L = xd[idx]
            R = xd[idx + 1].copy()
            R[idx == H - 1] = self.hist[-1]
            rhs = rhs + 0.5 * (L + R) @ Ai.T
        return float(np.abs(np.diff(self.x, axis=0) / self.step - rhs).max()) if K else 0.0

    def to_csv_rows(self) -> list[list[float]]:
        every = _ratio(self.dt, self.step, "output step")
        return [[t, *xx] for t, xx in zip(self.times[::every], self.x[::every])]


def _prepare(sys: DelaySystem, y0s: Sequence[M2State], r: int):
    hists = []
    for y in y0s:
        if y.n != sys.n or y.n_seg != sys.n_seg or abs(y.h - sys.h) > 1e-12 * sys.h:
            raise ValueError("initial state does not match the system grid")
        hists.append(_refine_history(y.segment, r))
    heads = np.stack([y.head for y in y0s])
    return heads, np.stack(hists, axis=1)


def solve_batch(
    sys: DelaySystem,
    y0s: Sequence[M2State],
    controls: Sequence[ControlSignal | None],
    T_end: float,
    step: float | None = None,
    t0: float = 0.0,
    dt: float | None = None,
) -> list[Trajectory]:
    """Independent solves sharing one vectorized time loop."""
    step, r = _substeps(sys, step)
    if len(y0s) != len(controls):
        raise ValueError("need one control per initial state")
    nsteps = _ratio(T_end, step, "T_end") if T_end > 0 else 0
    if T_end < 0:
        raise ValueError("T_end must be nonnegative")
    if t0:
        _ratio(abs(t0), step, "start time t0")
    heads, hists = _prepare(sys, y0s, r)
    F = _forcing(sys, controls, t0, max(nsteps, 1), step)
    buf, xdot = _march(sys, heads, hists, F[:nsteps], step, r, t0)
    H = hists.shape[0] - 1
    dt = step if dt is None else dt
    return [
        Trajectory(sys, y0s[b], t0, step, buf[H:, b], hists[:, b], xdot[:, b], F[:, b], dt)
        for b in range(len(y0s))
    ]


def solve(
    sys: DelaySystem,
    y0: M2State,
    u: ControlSignal | None,
    T_end: float,
    step: float | None = None,
    t0: float = 0.0,
    dt: float | None = None,
) -> Trajectory:
    """x(t) = psi(t, r, f, u) on [t0, t0 + T_end]; the control is read on its own clock."""
    return solve_batch(sys, [y0], [u], T_end, step, t0, dt)[0]


def propagate(
    sys: DelaySystem,
    y0s: Sequence[M2State],
    controls: Sequence[ControlSignal | None],
    t: float,
    step: float | None = None,
    t0: float = 0.0,
) -> list[M2State]:
    """Final states phi(t, y0, theta_t0 u) for a batch."""
    if t == 0:
        return list(y0s)
    return [tr.final for tr in solve_batch(sys, y0s, controls, t, step, t0)]


def fundamental_matrix_grid(sys: DelaySystem, T: float, step: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """X on [0, T] at step resolution and its right-limit derivative, shapes (K+1, n, n)."""
    step, r = _substeps(sys, step)
    n = sys.n
    eye = np.eye(n)
    y0s = [M2State(eye[j], np.zeros((sys.n_seg + 1, n)), sys.h) for j in range(n)]
    trs = solve_batch(sys, y0s, [None] * n, T, step)
    X = np.stack([tr.x for tr in trs], axis=2)
    Xd = np.stack([tr.xdot for tr in trs], axis=2)
    return X, Xd


def fundamental_matrix(sys: DelaySystem, t: float, step: float | None = None) -> np.ndarray:
    """X(t): zero on [-h, 0), identity at 0, homogeneous solution afterwards."""
    if t < -sys.h - 1e-12:
        raise ValueError("X(t) is defined for t >= -h")
    if t < 0:
        return np.zeros((sys.n, sys.n))
    if t == 0:
        return np.eye(sys.n)
    step, _ = _substeps(sys, step)
    K = int(np.ceil(t / step - 1e-9))
    X, _ = fundamental_matrix_grid(sys, K * step, step)
    s = t / step - (K - 1)
    if abs(s - 1) < 1e-9:
        return X[K]
    return (1 - s) * X[K - 1] + s * X[K]


def _left_derivative(sys: DelaySystem, X: np.ndarray, r: int) -> np.ndarray:
    """Left-limit derivative of X at the step grid (delayed reads use X(0-) = 0)."""
    Xd = np.einsum("ij,kjl->kil", sys.A[0], X)
    K = len(X)
    for c, Ai in zip(sys.lag_cells, sys.A[1:]):
        m = c * r
        if m < K:
            idx = np.arange(m + 1, K)
            Xd[idx] += np.einsum("ij,kjl->kil", Ai, X[idx - m])
    return Xd


def solve_vdp(
    sys: DelaySystem,
    y0: M2State,
    u: ControlSignal | None,
    T_end: float,
    step: float | None = None,
    refine: int = 1,
) -> Trajectory:
    """Variation of parameters: homogeneous solution plus a convolution with X.

    X is computed on a grid ``refine`` times finer than the output step
    (by default the same step, so both routes share one resolution) and
    integrated cellwise by the endpoint-corrected trapezoid rule, using the
    one-sided derivatives of X at the cell ends.
    """
    step, r = _substeps(sys, step)
    hom = solve(sys, y0, None, T_end, step)
    K = len(hom.x) - 1
    fine = step / refine
    X, Xr = fundamental_matrix_grid(sys, T_end, fine)
    Xl = _left_derivative(sys, X, r * refine)
    # integral of X over each fine cell, then over each coarse cell
    cell = 0.5 * fine * (X[:-1] + X[1:]) + fine**2 / 12.0 * (Xr[:-1] - Xl[1:])
    Q = cell.reshape(K, refine, sys.n, sys.n).sum(axis=1)
    F = _forcing(sys, [u], 0.0, K, step)[:, 0, :]
    forced = np.zeros((K + 1, sys.n))
    for a in range(sys.n):
        for b in range(sys.n):
            forced[1:, a] += fftconvolve(Q[:, a, b], F[:, b])[:K]
    x = hom.x + forced
    return Trajectory(sys, y0, 0.0, step, x, hom.hist, hom.xdot, F, step)


def _shift_aligned(u: ControlSignal, t: float, step: float) -> ControlSignal:
    try:
        return u.shift(t)
    except ValueError:
        return u.refine(_ratio(u.dt, step, "control step dt")).shift(t)


def semiflow_step(
    sys: DelaySystem, u: ControlSignal, y0: M2State, t: float, step: float | None = None
) -> tuple[ControlSignal, M2State]:
    """Phi_t(u, y0) = (theta_t u, phi(t, y0, u))."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return u, y0
    step, _ = _substeps(sys, step)
    return _shift_aligned(u, t, step), solve(sys, y0, u, t, step).final


def affine_split(
    sys: DelaySystem, y0: M2State, u: ControlSignal | None, t: float, step: float | None = None
) -> tuple[M2State, M2State]:
    """(phi(t, y0, 0), phi(t, 0, u))."""
    zero = sys.zero_state()
    hom, forced = propagate(sys, [y0, zero], [None, u], t, step)
    return hom, forced


def reconstruct_initial(sys: DelaySystem, traj: Trajectory, tau: float) -> M2State:
    """Recover the initial state from the solution on [0, tau].

    Uses f(t - h) = A_p^{-1} [x'(t) - sum_{i<p} A_i x(t - h_i)] for t in
    [0, tau], with x' the right-limit derivative recorded from the model
    right-hand side. Only data on [tau - h, tau] enters besides x'. The
    sample f(0-) is not observable and is set to x(0).
    """
    Ap = sys.A[-1]
    thresh = 1e-10 * np.linalg.norm(Ap, 2) ** sys.n
    if not abs(np.linalg.det(Ap)) > thresh:
        raise ValueError("A_p is singular; the solution map is not injective")
    limit = sys.h - (sys.all_delays[-2])
    if tau > limit + 1e-12 or tau <= 0:
        raise ValueError(f"tau must lie in (0, h - h_(p-1)] = (0, {limit}]")
    if traj.t0 != 0.0 or np.any(traj.forcing):
        raise ValueError("reconstruction needs a trajectory from t = 0 with zero forcing")
    r = traj._r
    H = len(traj.hist) - 1
    Kt = traj.index(tau)
    xd = traj.x_dense
    rhs = traj.xdot[: Kt + 1] - traj.x[: Kt + 1] @ sys.A[0].T
    for c, Ai in zip(sys.lag_cells[:-1], sys.A[1:-1]):
        idx = H + np.arange(Kt + 1) - c * r
        rhs = rhs - xd[idx] @ Ai.T
    rec = np.linalg.solve(Ap, rhs.T).T  # f on [-h, tau - h] at step resolution
    seg = xd[: H + 1].copy()
    seg[: Kt + 1] = rec
    seg[H] = traj.x[0]
    return M2State(traj.x[0], seg[::r], sys.h)
