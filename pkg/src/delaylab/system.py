"""Problem data, state and control representations, and metrics.

The system class is

    x'(t) = sum_i A_i x(t - h_i) + sum_i B_i u(t - h_i),   h_0 = 0 < h_1 < ... < h_p = h,

with controls taking values in a polytope given by its vertices. States live
in M2 = R^n x L2([-h, 0], R^n) and are stored as a head vector plus samples
of the history on a uniform grid, read as the piecewise-linear interpolant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

__all__ = [
    "DEFAULT_N_SEG",
    "DelaySystem",
    "M2State",
    "ControlSignal",
    "MetricBasis",
    "Finding",
    "ValidationReport",
    "validate_system",
    "m2_distance",
    "metric_u",
    "in_polytope",
    "system_from_dict",
    "system_to_dict",
    "load_system",
    "dump_system",
    "random_bang_bang",
]

DEFAULT_N_SEG = 256
_ALIGN_TOL = 1e-9
_OMEGA_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def in_polytope(vertices: np.ndarray, x: np.ndarray, tol: float = _OMEGA_TOL) -> bool:
    """Convex-hull membership by nonnegative least squares on the barycentric system."""
    vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
    x = np.asarray(x, dtype=float).ravel()
    if vertices.shape[1] == 1:
        lo, hi = vertices.min(), vertices.max()
        return bool(lo - tol <= x[0] <= hi + tol)
    if np.any(np.all(np.abs(vertices - x) <= tol, axis=1)):
        return True
    scale = 1.0 + np.abs(vertices).max()
    lhs = np.vstack([vertices.T, scale * np.ones(len(vertices))])
    rhs = np.concatenate([x, [scale]])
    lam, _ = nnls(lhs, rhs)
    resid = np.abs(vertices.T @ lam - x).max()
    return bool(resid <= tol * (1.0 + np.abs(x).max()) and abs(lam.sum() - 1.0) <= 1e-9)


@dataclass(frozen=True, eq=False)
class DelaySystem:
    """Matrices A_0..A_p, B_0..B_p, delays h_1 < ... < h_p and the control polytope.

    ``n_seg`` fixes the history grid; every delay must be an integer multiple
    of ``h / n_seg``.
    """

    delays: tuple[float, ...]
    A: tuple[np.ndarray, ...]
    B: tuple[np.ndarray, ...]
    omega_vertices: np.ndarray
    n_seg: int = DEFAULT_N_SEG

    def __post_init__(self):
        delays = tuple(float(d) for d in self.delays)
        if len(delays) < 1:
            raise ValueError("at least one positive delay is required")
        if any(d <= 0 for d in delays) or any(b <= a for a, b in zip(delays, delays[1:])):
            raise ValueError(f"delays must be positive and strictly increasing, got {delays}")
        p = len(delays)
        A = tuple(_frozen(np.atleast_2d(a)) for a in self.A)
        B = tuple(_frozen(np.atleast_2d(b)) for b in self.B)
        if len(A) != p + 1 or len(B) != p + 1:
            raise ValueError(f"expected {p + 1} matrices A_i and B_i, got {len(A)} and {len(B)}")
        n = A[0].shape[0]
        if any(a.shape != (n, n) for a in A):
            raise ValueError("every A_i must be n x n with a common n")
        m = B[0].shape[1]
        if any(b.shape != (n, m) for b in B):
            raise ValueError("every B_i must be n x m with a common m")
        omega = _frozen(np.atleast_2d(self.omega_vertices))
        if omega.size == 0 or omega.shape[1] != m:
            raise ValueError(f"omega vertices must be a nonempty list of points in R^{m}")
        if int(self.n_seg) < 1:
            raise ValueError("n_seg must be positive")
        object.__setattr__(self, "delays", delays)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "omega_vertices", omega)
        object.__setattr__(self, "n_seg", int(self.n_seg))
        # grid alignment of every delay
        lags = []
        for d in delays:
            k = d / self.grid_step
            if abs(k - round(k)) * self.grid_step > _ALIGN_TOL * self.h:
                raise ValueError(f"delay {d} is not a multiple of the grid step h/n_seg = {self.grid_step}")
            lags.append(int(round(k)))
        object.__setattr__(self, "_lags", tuple(lags))

    @property
    def n(self) -> int:
        return self.A[0].shape[0]

    @property
    def m(self) -> int:
        return self.B[0].shape[1]

    @property
    def p(self) -> int:
        return len(self.delays)

    @property
    def h(self) -> float:
        return self.delays[-1]

    @property
    def all_delays(self) -> tuple[float, ...]:
        return (0.0,) + self.delays

    @property
    def grid_step(self) -> float:
        return self.h / self.n_seg

    @property
    def lag_cells(self) -> tuple[int, ...]:
        """Delays h_1..h_p in units of the grid step."""
        return self._lags

    @property
    def zero_in_omega(self) -> bool:
        return in_polytope(self.omega_vertices, np.zeros(self.m))

    def with_grid(self, n_seg: int) -> "DelaySystem":
        return DelaySystem(self.delays, self.A, self.B, self.omega_vertices, n_seg)

    def with_omega(self, vertices) -> "DelaySystem":
        return DelaySystem(self.delays, self.A, self.B, vertices, self.n_seg)

    def admissible(self, u: "ControlSignal") -> bool:
        vals = np.unique(u.values, axis=0)
        return all(in_polytope(self.omega_vertices, v) for v in vals)

    def zero_state(self) -> "M2State":
        return M2State.zeros(self.n, self.h, self.n_seg)

    def __eq__(self, other):
        if not isinstance(other, DelaySystem):
            return NotImplemented
        return (
            self.delays == other.delays
            and self.n_seg == other.n_seg
            and all(np.array_equal(a, b) for a, b in zip(self.A, other.A))
            and all(np.array_equal(a, b) for a, b in zip(self.B, other.B))
            and np.array_equal(self.omega_vertices, other.omega_vertices)
        )


@dataclass(frozen=True, eq=False)
class M2State:
    """Element (r, f) of M2: head r = x(0) and samples of f on [-h, 0].

    The last sample is f(0-), which may differ from the head.
    """

    head: np.ndarray
    segment: np.ndarray
    h: float

    def __post_init__(self):
        head = _frozen(np.asarray(self.head, dtype=float).ravel())
        seg = np.asarray(self.segment, dtype=float)
        if seg.ndim == 1:
            seg = seg[:, None]
        if seg.ndim != 2 or seg.shape[1] != head.size or seg.shape[0] < 2:
            raise ValueError(f"segment shape {seg.shape} incompatible with head of size {head.size}")
        object.__setattr__(self, "head", head)
        object.__setattr__(self, "segment", _frozen(seg))
        object.__setattr__(self, "h", float(self.h))

    @classmethod
    def zeros(cls, n: int, h: float, n_seg: int = DEFAULT_N_SEG) -> "M2State":
        return cls(np.zeros(n), np.zeros((n_seg + 1, n)), h)

    @classmethod
    def constant(cls, value, h: float, n_seg: int = DEFAULT_N_SEG) -> "M2State":
        """The continuous state with x = value on [-h, 0]."""
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(value, np.tile(value, (n_seg + 1, 1)), h)

    @classmethod
    def from_function(cls, f, h: float, n_seg: int = DEFAULT_N_SEG, head=None) -> "M2State":
        """Sample ``f`` (vectorized over an array of times in [-h, 0]) on the grid."""
        theta = np.linspace(-h, 0.0, n_seg + 1)
        seg = np.asarray(f(theta), dtype=float)
        if seg.ndim == 1:
            seg = seg[:, None]
        r = seg[-1] if head is None else np.atleast_1d(np.asarray(head, dtype=float))
        return cls(r, seg, h)

    @property
    def n(self) -> int:
        return self.head.size

    @property
    def n_seg(self) -> int:
        return self.segment.shape[0] - 1

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(-self.h, 0.0, self.n_seg + 1)

    def _check(self, other: "M2State"):
        if self.segment.shape != other.segment.shape or abs(self.h - other.h) > 1e-12 * self.h:
            raise ValueError("M2 states live on different grids")

    def _wrap(self, head: np.ndarray, segment: np.ndarray) -> "M2State":
        """State from freshly computed arrays of this state's shape (no copy, no validation)."""
        head.setflags(write=False)
        segment.setflags(write=False)
        out = object.__new__(M2State)
        object.__setattr__(out, "head", head)
        object.__setattr__(out, "segment", segment)
        object.__setattr__(out, "h", self.h)
        return out

    def __add__(self, other: "M2State") -> "M2State":
        self._check(other)
        return self._wrap(self.head + other.head, self.segment + other.segment)

    def __sub__(self, other: "M2State") -> "M2State":
        self._check(other)
        return self._wrap(self.head - other.head, self.segment - other.segment)

    def __neg__(self) -> "M2State":
        return self._wrap(-self.head, -self.segment)

    def __mul__(self, c: float) -> "M2State":
        return self._wrap(c * self.head, c * self.segment)

    __rmul__ = __mul__

    def inner(self, other: "M2State") -> float:
        """M2 inner product with the same trapezoid quadrature as ``norm``."""
        self._check(other)
        dx = self.h / self.n_seg
        s = np.sum(self.segment * other.segment, axis=1)
        return float(self.head @ other.head + dx * (s.sum() - 0.5 * (s[0] + s[-1])))

    def seg_sq_trapezoid(self) -> float:
        dx = self.h / self.n_seg
        f = self.segment
        flat = f.ravel()
        return float(dx * (flat @ flat - 0.5 * (f[0] @ f[0] + f[-1] @ f[-1])))

    def norm(self) -> float:
        """sqrt(|r|^2 + trapezoid quadrature of |f|^2)."""
        return float(np.sqrt(self.head @ self.head + self.seg_sq_trapezoid()))

    def flat(self) -> np.ndarray:
        """Coordinates in the fixed enumeration: head, then segment samples row by row."""
        return np.concatenate([self.head, self.segment.ravel()])

    def to_dict(self) -> dict:
        return {"head": self.head.tolist(), "segment": self.segment.tolist()}

    @classmethod
    def from_dict(cls, d: dict, h: float) -> "M2State":
        return cls(np.asarray(d["head"], dtype=float), np.asarray(d["segment"], dtype=float), h)


def m2_distance(a: M2State, b: M2State) -> float:
    """M2 distance with trapezoid quadrature of the segment difference."""
    return (a - b).norm()


def _as_index(x: float, dt: float, what: str) -> int:
    k = x / dt
    kr = round(k)
    if abs(k - kr) > 1e-9 * max(1.0, abs(k)):
        raise ValueError(f"{what} = {x} is not an integer multiple of dt = {dt}")
    return int(kr)


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """Piecewise-constant control with values ``values[k]`` on [t_start + k dt, t_start + (k+1) dt).

    The window start is stored as an integer number of steps ``offset`` so
    that shifts compose exactly. Outside the window the control is 0 before
    ``t_start`` and holds its last value after ``t_end``.
    """

    offset: int
    dt: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] < 1:
            raise ValueError("values must be a nonempty (K, m) array")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "offset", int(self.offset))
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "values", _frozen(vals))

    @classmethod
    def from_values(cls, values, dt: float, t_start: float = 0.0) -> "ControlSignal":
        return cls(_as_index(t_start, dt, "t_start"), dt, values)

    @classmethod
    def constant(cls, value, t_start: float, t_end: float, dt: float | None = None) -> "ControlSignal":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        dt = (t_end - t_start) if dt is None else dt
        k = _as_index(t_end - t_start, dt, "window length")
        return cls(_as_index(t_start, dt, "t_start"), dt, np.tile(value, (max(k, 1), 1)))

    @classmethod
    def zero(cls, m: int, dt: float = 1.0) -> "ControlSignal":
        return cls(0, dt, np.zeros((1, m)))

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def t_start(self) -> float:
        return self.offset * self.dt

    @property
    def t_end(self) -> float:
        return (self.offset + len(self.values)) * self.dt

    def __call__(self, t) -> np.ndarray:
        """Values at times ``t`` (array), shape (len(t), m)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.floor(t / self.dt + 1e-9).astype(np.int64) - self.offset
        out = self.values[np.clip(k, 0, len(self.values) - 1)]
        return np.where((k < 0)[:, None], 0.0, out)

    def shift(self, s: float) -> "ControlSignal":
        """theta_s u = u(s + .); s must be a multiple of dt."""
        return ControlSignal(self.offset - _as_index(s, self.dt, "shift"), self.dt, self.values)

    def refine(self, factor: int) -> "ControlSignal":
        """Same function on a grid ``factor`` times finer."""
        factor = int(factor)
        return ControlSignal(self.offset * factor, self.dt / factor, np.repeat(self.values, factor, axis=0))

    def scaled(self, c: float) -> "ControlSignal":
        return ControlSignal(self.offset, self.dt, c * self.values)

    def integral(self, a: float, b: float) -> np.ndarray:
        """Exact integral of u over [a, b] (a <= b), shape (m,)."""
        return self._antiderivative(b) - self._antiderivative(a)

    def _antiderivative(self, t: float) -> np.ndarray:
        # integral from t_start to t, zero for t <= t_start
        x = (t - self.t_start) / self.dt
        if x <= 0:
            return np.zeros(self.m)
        K = len(self.values)
        k = min(int(np.floor(x)), K)
        acc = self.values[:k].sum(axis=0) * self.dt
        if k < K:
            acc = acc + (x - k) * self.dt * self.values[k]
        else:
            acc = acc + (x - K) * self.dt * self.values[-1]
        return acc

    def equals(self, other: "ControlSignal") -> bool:
        return (
            self.offset == other.offset
            and self.dt == other.dt
            and np.array_equal(self.values, other.values)
        )

    def to_dict(self) -> dict:
        return {"kind": "piecewise", "t_start": self.t_start, "dt": self.dt, "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ControlSignal":
        kind = d.get("kind", "piecewise")
        if kind == "constant":
            return cls.constant(d["value"], d["t_start"], d["t_end"], d.get("dt"))
        if kind == "piecewise":
            return cls.from_values(np.asarray(d["values"], dtype=float), d["dt"], d.get("t_start", 0.0))
        raise ValueError(f"unknown control descriptor kind {kind!r}")


@dataclass(frozen=True)
class MetricBasis:
    """Test functions z_k = 1_I e_c for the control metric.

    Enumeration: levels j = 0, 1, 2, ...; level j tiles [-2^j, 2^j] by
    intervals of width 2^-j, taken left to right, and for each interval the
    coordinate index c runs over 0..m-1. The first ``K_terms`` are used.
    """

    m: int
    K_terms: int = 16

    def terms(self) -> list[tuple[float, float, int]]:
        out: list[tuple[float, float, int]] = []
        j = 0
        while len(out) < self.K_terms:
            w = 2.0**-j
            for i in range(2 ** (2 * j + 1)):
                a = -(2.0**j) + i * w
                for c in range(self.m):
                    out.append((a, a + w, c))
                    if len(out) == self.K_terms:
                        return out
            j += 1
        return out


def metric_u(u: ControlSignal, v: ControlSignal, basis: MetricBasis | None = None) -> float:
    """Truncated sum over k of 2^-k |int (u-v).z_k| / (1 + |int (u-v).z_k|), k = 1..K."""
    if basis is None:
        basis = MetricBasis(u.m)
    total = 0.0
    for k, (a, b, c) in enumerate(basis.terms(), start=1):
        g = abs(float(u.integral(a, b)[c] - v.integral(a, b)[c]))
        total += 2.0**-k * g / (1.0 + g)
    return total


@dataclass(frozen=True)
class Finding:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...]

    @property
    def ok(self) -> bool:
        return all(f.passed for f in self.findings)

    def get(self, name: str) -> Finding:
        for f in self.findings:
            if f.name == name:
                return f
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "findings": [{"name": f.name, "passed": f.passed, "detail": f.detail} for f in self.findings]}


def validate_system(sys: DelaySystem) -> ValidationReport:
    """Analytic checks; structural problems raise at construction time instead."""
    findings = []
    d = sys.delays
    mono = all(b > a for a, b in zip((0.0,) + d, d))
    findings.append(Finding("delays_increasing", mono, f"delays={list(d)}"))
    findings.append(Finding("omega_nonempty", len(sys.omega_vertices) > 0, f"{len(sys.omega_vertices)} vertices"))
    Ap = sys.A[-1]
    det = float(np.linalg.det(Ap))
    thresh = 1e-10 * np.linalg.norm(Ap, 2) ** sys.n
    findings.append(Finding("injectivity", abs(det) > thresh and thresh > 0, f"det A_p = {det:.6g}, threshold {thresh:.3g}"))
    findings.append(Finding("zero_in_omega", sys.zero_in_omega, "0 in conv(vertices)"))
    return ValidationReport(tuple(findings))


_KEYS = {"n", "m", "delays", "A", "B", "omega", "n_seg"}
_REQUIRED = _KEYS - {"n_seg"}


def system_from_dict(d: dict) -> DelaySystem:
    unknown = set(d) - _KEYS
    if unknown:
        raise ValueError(f"unknown key(s) in system spec: {sorted(unknown)}")
    missing = _REQUIRED - set(d)
    if missing:
        raise ValueError(f"missing key(s) in system spec: {sorted(missing)}")
    if not isinstance(d["omega"], dict) or set(d["omega"]) != {"vertices"}:
        raise ValueError("key 'omega' must be an object with exactly the key 'vertices'")
    n, m = int(d["n"]), int(d["m"])
    A = [np.asarray(a, dtype=float).reshape(n, n) if np.size(a) == n * n else _bad("A", a) for a in d["A"]]
    B = [np.asarray(b, dtype=float).reshape(n, m) if np.size(b) == n * m else _bad("B", b) for b in d["B"]]
    omega = np.asarray(d["omega"]["vertices"], dtype=float).reshape(-1, m)
    return DelaySystem(tuple(d["delays"]), tuple(A), tuple(B), omega, int(d.get("n_seg", DEFAULT_N_SEG)))


def _bad(key, val):
    raise ValueError(f"key '{key}': entry {val!r} has the wrong size")


def system_to_dict(sys: DelaySystem) -> dict:
    return {
        "n": sys.n,
        "m": sys.m,
        "delays": list(sys.delays),
        "A": [a.tolist() for a in sys.A],
        "B": [b.tolist() for b in sys.B],
        "omega": {"vertices": sys.omega_vertices.tolist()},
        "n_seg": sys.n_seg,
    }


def load_system(path) -> DelaySystem:
    with open(path, encoding="utf-8") as fh:
        return system_from_dict(json.load(fh))


def dump_system(sys: DelaySystem, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(system_to_dict(sys), fh, indent=2)
        fh.write("\n")


def random_bang_bang(
    sys: DelaySystem,
    rng: np.random.Generator,
    t_start: float,
    t_end: float,
    dt: float,
    mean_dwell: float = 1.0,
) -> ControlSignal:
    """Piecewise-constant control jumping between vertices of Omega at random times.

    Switching happens on the dt grid with probability dt / mean_dwell per step.
    """
    K = _as_index(t_end - t_start, dt, "window length")
    V = sys.omega_vertices
    switch = rng.random(K) < dt / mean_dwell
    switch[0] = True
    picks = rng.integers(0, len(V), size=int(switch.sum()))
    idx = np.cumsum(switch) - 1
    return ControlSignal(_as_index(t_start, dt, "t_start"), dt, V[picks[idx]])
