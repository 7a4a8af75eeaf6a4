"""Characteristic roots, hyperbolicity, spectral projections and Selgrade levels.

Roots of Delta(s) = det(s I - sum_i A_i e^{-h_i s}) are seeded by the
eigenvalues of a Chebyshev collocation of the solution semigroup generator
and then refined by Newton's method on Delta itself.

The projection onto the unstable subspace is applied through the dual
eigenfunctionals of the characteristic matrix,

    <psi, (r, f)> = w r + sum_i int_{-h_i}^0 w A_i e^{-mu (xi + h_i)} f(xi) dxi,

normalized by w M'(mu) v = 1, which for piecewise-linear segments can be
integrated exactly. The Schur-based projector of the collocation matrix is
kept alongside as an independent realization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .integrator import propagate
from .system import DelaySystem, M2State

__all__ = [
    "delta_eval",
    "char_matrix",
    "char_matrix_derivative",
    "collocation_matrix",
    "Root",
    "Spectrum",
    "compute_spectrum",
    "count_roots",
    "check_hyperbolic",
    "HyperbolicSplitting",
    "hyperbolic_split",
    "SelgradeLevel",
    "SelgradeGrouping",
    "selgrade_grouping",
    "check_exponential_separation",
    "to_collocation",
    "from_collocation",
]


def char_matrix(sys: DelaySystem, s: complex) -> np.ndarray:
    """M(s) = s I - sum_i A_i e^{-h_i s}."""
    M = s * np.eye(sys.n, dtype=complex)
    for hi, Ai in zip(sys.all_delays, sys.A):
        M = M - Ai * np.exp(-hi * s)
    return M


def char_matrix_derivative(sys: DelaySystem, s: complex) -> np.ndarray:
    """M'(s) = I + sum_i h_i A_i e^{-h_i s}."""
    D = np.eye(sys.n, dtype=complex)
    for hi, Ai in zip(sys.delays, sys.A[1:]):
        D = D + hi * Ai * np.exp(-hi * s)
    return D


def delta_eval(sys: DelaySystem, s: complex) -> complex:
    return complex(np.linalg.det(char_matrix(sys, s)))


def _log_derivative(sys: DelaySystem, s: complex) -> complex:
    """Delta'(s) / Delta(s) = tr(M(s)^{-1} M'(s))."""
    return complex(np.trace(np.linalg.solve(char_matrix(sys, s), char_matrix_derivative(sys, s))))


# ---------------------------------------------------------------- collocation


def _cheb(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Chebyshev extreme points x_j = cos(pi j / N) and the differentiation matrix."""
    if N == 0:
        return np.array([1.0]), np.zeros((1, 1))
    x = np.cos(np.pi * np.arange(N + 1) / N)
    c = np.ones(N + 1)
    c[0] = c[-1] = 2.0
    c = c * (-1.0) ** np.arange(N + 1)
    X = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (X + np.eye(N + 1))
    D = D - np.diag(D.sum(axis=1))
    return x, D


def _bary_weights(N: int) -> np.ndarray:
    w = (-1.0) ** np.arange(N + 1)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _lagrange_rows(nodes: np.ndarray, w: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Matrix L with L[k, j] = l_j(pts[k]) (barycentric formula)."""
    pts = np.atleast_1d(pts)
    diff = pts[:, None] - nodes[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-14)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = w[None, :] / diff
        L = q / q.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    L[rows] = exact[rows].astype(float)
    return L


@dataclass(frozen=True, eq=False)
class _Collocation:
    theta: np.ndarray  # nodes on [-h, 0], theta[0] = 0
    weights: np.ndarray
    matrix: np.ndarray  # n N_c x n N_c, node-major blocks


def collocation_matrix(sys: DelaySystem, N_c: int) -> _Collocation:
    """Generator discretized on N_c Chebyshev nodes over [-h, 0].

    Block row 0 is the boundary condition A_0 f(0) + sum_i A_i f(-h_i);
    the other block rows are the spectral derivative.
    """
    N = N_c - 1
    x, D = _cheb(N)
    theta = 0.5 * sys.h * (x - 1.0)
    w = _bary_weights(N)
    n = sys.n
    AN = np.zeros((n * N_c, n * N_c))
    L = _lagrange_rows(theta, w, np.array([-hi for hi in sys.all_delays]))
    for Li, Ai in zip(L, sys.A):
        AN[:n] += np.kron(Li[None, :], Ai)
    AN[n:] = np.kron((2.0 / sys.h) * D[1:], np.eye(n))
    return _Collocation(theta, w, AN)


def to_collocation(col: _Collocation, y: M2State) -> np.ndarray:
    """Head at theta = 0, piecewise-linear segment values at the other nodes."""
    grid = y.grid
    vals = [y.head] + [np.array([np.interp(t, grid, y.segment[:, c]) for c in range(y.n)]) for t in col.theta[1:]]
    return np.concatenate(vals)


def from_collocation(col: _Collocation, v: np.ndarray, h: float, n_seg: int) -> M2State:
    """Barycentric interpolation of nodal values onto the uniform segment grid."""
    n = v.size // col.theta.size
    V = v.reshape(col.theta.size, n)
    grid = np.linspace(-h, 0.0, n_seg + 1)
    seg = _lagrange_rows(col.theta, col.weights, grid) @ V
    return M2State(V[0], seg, h)


# -------------------------------------------------------------------- roots


@dataclass(frozen=True)
class Root:
    mu: complex
    multiplicity: int
    residual: float


@dataclass(frozen=True, eq=False)
class Spectrum:
    sys: DelaySystem
    roots: tuple[Root, ...]
    strip_bound: float
    discretization_order: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return np.array([r.mu for r in self.roots])

    def rightmost(self) -> Root:
        return max(self.roots, key=lambda r: (r.mu.real, r.mu.imag))

    def to_list(self) -> list[dict]:
        return [
            {"re": r.mu.real, "im": r.mu.imag, "multiplicity": r.multiplicity, "residual": r.residual}
            for r in self.roots
        ]


def _newton(sys: DelaySystem, s: complex, mult: int = 1, maxit: int = 60, real: bool = False):
    for _ in range(maxit):
        try:
            g = _log_derivative(sys, s)
        except np.linalg.LinAlgError:
            return s, True  # exactly singular: s is a root
        if not np.isfinite(g) or g == 0:
            return s, False
        ds = mult / g
        if real:
            ds = ds.real
        s = s - ds
        if abs(ds) < 1e-15 * (1 + abs(s)):
            return s, True
    return s, abs(ds) < 1e-9 * (1 + abs(s))


def _winding(sys: DelaySystem, mu: complex, rho: float, K: int = 64) -> int:
    phi = 2 * np.pi * np.arange(K) / K
    z = rho * np.exp(1j * phi)
    vals = np.array([_log_derivative(sys, mu + zk) for zk in z])
    return int(round((np.mean(z * vals)).real))


def _residual_ok(sys, mu, res):
    return res < 1e-8 * (1 + abs(mu)) ** sys.n


def compute_spectrum(sys: DelaySystem, sigma: float, N_c: int = 32, margin: float = 1.0) -> Spectrum:
    """All characteristic roots with Re >= sigma that the discretization resolves."""
    if N_c < 8:
        raise ValueError("N_c must be at least 8")
    col = collocation_matrix(sys, N_c)
    eig = np.linalg.eigvals(col.matrix)
    seeds = sorted((z for z in eig if z.real >= sigma - margin and z.imag >= -1e-12), key=lambda z: (z.real, z.imag))
    found: list[complex] = []
    dropped: list[dict] = []
    for z in seeds:
        mu, ok = _newton(sys, complex(z))
        if ok and abs(mu.imag) < 1e-7 * (1 + abs(mu)):
            mu, ok = _newton(sys, complex(mu.real, 0.0), real=True)
            mu = complex(mu.real, 0.0)
        res = abs(delta_eval(sys, mu))
        if not (ok and np.isfinite(mu) and _residual_ok(sys, mu, res)):
            dropped.append({"seed_re": z.real, "seed_im": z.imag, "reason": "newton did not converge"})
            continue
        if mu.imag < 0:
            mu = mu.conjugate()
        found.append(mu)
    # cluster, then take multiplicities from the winding number of Delta
    distinct: list[complex] = []
    clusters: list[int] = []
    for mu in sorted(found, key=lambda z: (z.real, z.imag)):
        for k, d in enumerate(distinct):
            if abs(mu - d) < 1e-6 * (1 + abs(d)):
                clusters[k] += 1
                break
        else:
            distinct.append(mu)
            clusters.append(1)
    roots: list[Root] = []
    for k, mu in enumerate(distinct):
        if mu.real < sigma:
            continue
        others = [abs(mu - d) for j, d in enumerate(distinct) if j != k] + [abs(mu - d.conjugate()) for d in distinct if d.imag != 0]
        others = [o for o in others if o > 1e-6 * (1 + abs(mu))]
        rho = min([1e-3 * (1 + abs(mu))] + [0.4 * o for o in others])
        mult = max(_winding(sys, mu, rho), 1)
        if mult > 1:
            mu, _ = _newton(sys, mu, mult=mult, real=(mu.imag == 0))
        res = abs(delta_eval(sys, mu))
        roots.append(Root(mu, mult, res))
        if mu.imag > 0:
            roots.append(Root(mu.conjugate(), mult, abs(delta_eval(sys, mu.conjugate()))))
    roots.sort(key=lambda r: (-r.mu.real, -r.mu.imag))
    diag = {"dropped": dropped, "seed_count": len(seeds), "cluster_sizes": clusters}
    return Spectrum(sys, tuple(roots), float(sigma), int(N_c), diag)


def count_roots(sys: DelaySystem, re_min: float, re_max: float, im_max: float, K: int = 4000) -> int:
    """Argument-principle count of roots in a rectangle (diagnostic only)."""
    t = np.linspace(0.0, 1.0, K, endpoint=False)
    corners = [complex(re_min, -im_max), complex(re_max, -im_max), complex(re_max, im_max), complex(re_min, im_max)]
    total = 0j
    for a, b in zip(corners, corners[1:] + corners[:1]):
        s = a + (b - a) * (t + 0.5 / K)
        total += sum(_log_derivative(sys, sk) for sk in s) * (b - a) / K
    return int(round((total / (2j * np.pi)).real))


def check_hyperbolic(spec: Spectrum, axis_margin: float = 1e-6) -> str:
    """'hyperbolic', 'non_hyperbolic' or 'undecided'.

    A root with |Re| < margin makes the system non-hyperbolic; a root in
    [margin, 2 margin) or a strip that does not reach -2 margin leaves the
    question undecided.
    """
    if not spec.strip_bound < 0:
        raise ValueError("the strip bound must be negative")
    re = np.array([abs(r.mu.real) for r in spec.roots])
    if np.any(re < axis_margin):
        return "non_hyperbolic"
    if np.any(re < 2 * axis_margin) or spec.strip_bound > -2 * axis_margin:
        return "undecided"
    return "hyperbolic"


# ------------------------------------------------------------- projections


def _exp_linear_weights(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """int_0^1 e^{z s} (1 - s) ds and int_0^1 e^{z s} s ds, stable for small z."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    E = np.exp(zs)
    I0 = np.where(small, 1 + z / 2 + z**2 / 6 + z**3 / 24, (E - 1) / zs)
    I1 = np.where(small, 0.5 + z / 3 + z**2 / 8 + z**3 / 30, (E * (zs - 1) + 1) / zs**2)
    return I0 - I1, I1


@dataclass(frozen=True, eq=False)
class _Mode:
    """Unstable eigenvalue mu with right eigenvectors V (n x g) and normalized left ones W (g x n)."""

    mu: complex
    V: np.ndarray
    W: np.ndarray
    weights: tuple[np.ndarray, ...]  # per lag, sample weights of the exact exponential quadrature

    @property
    def real(self) -> bool:
        return self.mu.imag == 0

    def eigenfunction(self, h: float, n_seg: int) -> np.ndarray:
        theta = np.linspace(-h, 0.0, n_seg + 1)
        return np.exp(self.mu * theta)[:, None, None] * self.V[None, :, :]


def _null_vectors(M: np.ndarray, g: int) -> tuple[np.ndarray, np.ndarray]:
    U, S, Vh = np.linalg.svd(M)
    return Vh[-g:].conj().T, U[:, -g:].conj().T


def _mode(sys: DelaySystem, mu: complex) -> _Mode:
    M = char_matrix(sys, mu)
    S = np.linalg.svd(M, compute_uv=False)
    g = max(1, int(np.sum(S < 1e-7 * max(1.0, S[0]))))
    V, W = _null_vectors(M, g)
    if mu.imag == 0:
        V, W = V.real.astype(complex), W.real.astype(complex)
        V, _ = np.linalg.qr(V.real)
        V = V.astype(complex)
        _, W = _null_vectors(M.real.astype(complex), g)
        W = W.real.astype(complex)
    N = W @ char_matrix_derivative(sys, mu) @ V
    W = np.linalg.solve(N, W)
    dx = sys.grid_step
    weights = []
    for c, hi in zip(sys.lag_cells, sys.delays):
        w = np.zeros(sys.n_seg + 1, dtype=complex)
        a = -hi + dx * np.arange(c)  # left ends of the cells in [-h_i, 0]
        left, right = _exp_linear_weights(np.full(c, -mu * dx))
        g_a = np.exp(-mu * (a + hi)) * dx
        start = sys.n_seg - c
        w[start : start + c] += g_a * left
        w[start + 1 : start + c + 1] += g_a * right
        weights.append(w)
    md = _Mode(mu, V, W, tuple(weights))
    # renormalize against the sampled eigenfunctions so that pi+ is idempotent on the grid
    phi = md.eigenfunction(sys.h, sys.n_seg)
    Nd = W @ V.astype(complex)
    for w, Ai in zip(weights, sys.A[1:]):
        Nd = Nd + W @ Ai @ np.einsum("k,kij->ij", w, phi)
    return _Mode(mu, V, np.linalg.solve(Nd, W), tuple(weights))


@dataclass(frozen=True, eq=False)
class HyperbolicSplitting:
    """V+ = span of the unstable eigenfunctions, with pi+ and dichotomy estimates."""

    sys: DelaySystem
    spectrum: Spectrum
    modes: tuple[_Mode, ...]
    unstable_basis: tuple[M2State, ...]
    projector_data: dict
    alpha_hat: float
    K_hat: float

    @property
    def dim_plus(self) -> int:
        return len(self.unstable_basis)

    def coordinates(self, y: M2State) -> list[np.ndarray]:
        """Complex modal coordinates <psi, y> for each mode (one per conjugate pair)."""
        out = []
        for md in self.modes:
            acc = md.W @ y.head.astype(complex)
            for w, Ai in zip(md.weights, self.sys.A[1:]):
                if np.any(Ai):
                    acc = acc + md.W @ (Ai @ (w @ y.segment))
            out.append(acc)
        return out

    def from_coordinates(self, coords: list[np.ndarray]) -> M2State:
        sys = self.sys
        head = np.zeros(sys.n)
        seg = np.zeros((sys.n_seg + 1, sys.n))
        for md, c in zip(self.modes, coords):
            phi = md.eigenfunction(sys.h, sys.n_seg) @ c
            fac = 1.0 if md.real else 2.0
            seg += fac * phi.real
            head += fac * (md.V @ c).real
        return M2State(head, seg, sys.h)

    def project_plus(self, y: M2State) -> M2State:
        if not self.modes:
            return M2State(np.zeros_like(y.head), np.zeros_like(y.segment), y.h)
        return self.from_coordinates(self.coordinates(y))

    def project_minus(self, y: M2State) -> M2State:
        return y - self.project_plus(y)

    def project_plus_collocation(self, y: M2State) -> M2State:
        """pi+ through the Schur projector of the collocation matrix."""
        col = self.projector_data["collocation"]
        P = self.projector_data["projector"]
        return from_collocation(col, P @ to_collocation(col, y), y.h, y.n_seg)

    def to_dict(self) -> dict:
        return {
            "dim_plus": self.dim_plus,
            "alpha_hat": self.alpha_hat,
            "K_hat": self.K_hat,
            "unstable_roots": [{"re": md.mu.real, "im": md.mu.imag} for md in self.modes],
            "basis": [b.to_dict() for b in self.unstable_basis],
        }


def _schur_projector(AN: np.ndarray, select) -> tuple[np.ndarray, np.ndarray, int]:
    """Spectral projector onto the invariant subspace of the selected eigenvalues."""

    def sfun(x, y=None):
        return bool(select(x if y is None else complex(x, y)))

    T, Z, k = sla.schur(AN, output="real", sort=sfun)
    if k == 0:
        return np.zeros_like(AN), Z[:, :0], 0
    if k == AN.shape[0]:
        return np.eye(AN.shape[0]), Z, k
    X = sla.solve_sylvester(T[:k, :k], -T[k:, k:], -T[:k, k:])
    Ps = np.zeros_like(AN)
    Ps[:k, :k] = np.eye(k)
    Ps[:k, k:] = -X
    return Z @ Ps @ Z.T, Z[:, :k], k


def _random_states(sys: DelaySystem, count: int, rng: np.random.Generator) -> list[M2State]:
    """Continuous states with a few random Fourier modes."""
    out = []
    theta = np.linspace(-sys.h, 0.0, sys.n_seg + 1)
    for _ in range(count):
        seg = np.zeros((theta.size, sys.n))
        for k in range(4):
            a = rng.normal(size=sys.n) / (1 + k)
            ph = rng.uniform(0, 2 * np.pi, size=sys.n)
            seg += a * np.cos(np.pi * k * theta[:, None] / sys.h + ph)
        out.append(M2State(seg[-1], seg, sys.h))
    return out


def _fit_K(split_stub, sys: DelaySystem, alpha: float, rng: np.random.Generator, samples: int = 6) -> float:
    """Largest observed ||T(t) y-|| e^{alpha t} / ||y-|| over sampled states and times."""
    ys = [split_stub.project_minus(y) for y in _random_states(sys, samples, rng)]
    norms0 = np.array([y.norm() for y in ys])
    T_fit = min(max(3 * sys.h, 4.0 / max(alpha, 1e-3)), 20.0)
    chunk = sys.h
    K = 1.0
    t = 0.0
    while t < T_fit - 1e-12:
        ys = propagate(sys, ys, [None] * len(ys), chunk)
        if split_stub.modes:
            ys = [split_stub.project_minus(y) for y in ys]
        t += chunk
        ratio = np.array([y.norm() for y in ys]) / norms0 * np.exp(alpha * t)
        K = max(K, float(ratio.max()))
    return K


def hyperbolic_split(sys: DelaySystem, spec: Spectrum, axis_margin: float = 1e-6, seed: int = 0) -> HyperbolicSplitting:
    """Unstable eigenfunctions, the projection pi+ and estimates alpha_hat, K_hat."""
    verdict = check_hyperbolic(spec, axis_margin)
    if verdict != "hyperbolic":
        raise ValueError(f"hyperbolic splitting needs a hyperbolic spectrum, verdict is {verdict}")
    modes = []
    basis = []
    for r in spec.roots:
        if r.mu.real > 0 and r.mu.imag >= 0:
            md = _mode(sys, r.mu)
            if md.V.shape[1] != r.multiplicity:
                raise NotImplementedError("unstable root with a nontrivial Jordan block")
            modes.append(md)
            phi = md.eigenfunction(sys.h, sys.n_seg)
            for j in range(md.V.shape[1]):
                parts = [np.real] if md.real else [np.real, np.imag]
                for part in parts:
                    basis.append(M2State(part(md.V[:, j]), part(phi[:, :, j]), sys.h))
    col = collocation_matrix(sys, spec.discretization_order)
    P, _, k = _schur_projector(col.matrix, lambda z: z.real > 0)
    alpha = min(abs(r.mu.real) for r in spec.roots) if spec.roots else abs(spec.strip_bound)
    stub = HyperbolicSplitting(sys, spec, tuple(modes), tuple(basis), {"collocation": col, "projector": P, "rank": k}, alpha, 1.0)
    K = _fit_K(stub, sys, alpha, np.random.default_rng(seed))
    return HyperbolicSplitting(sys, spec, tuple(modes), tuple(basis), stub.projector_data, alpha, K)


# ------------------------------------------------------------------ Selgrade


@dataclass(frozen=True, eq=False)
class SelgradeLevel:
    real_part: float
    roots: tuple[complex, ...]
    basis: tuple[M2State, ...]
    cumulative_basis: tuple[M2State, ...]

    @property
    def dim(self) -> int:
        return len(self.basis)


@dataclass(frozen=True, eq=False)
class SelgradeGrouping:
    levels: tuple[SelgradeLevel, ...]
    tol_group: float


def _nearest_eigs(eig: np.ndarray, targets: list[tuple[complex, int]]) -> np.ndarray:
    """Indices of the collocation eigenvalues closest to each target, mult of them each."""
    taken = np.zeros(eig.size, dtype=bool)
    out = []
    for mu, mult in targets:
        d = np.abs(eig - mu)
        d[taken] = np.inf
        idx = np.argsort(d)[:mult]
        taken[idx] = True
        out.extend(idx.tolist())
    return np.array(out, dtype=int)


def selgrade_grouping(spec: Spectrum, tol_group: float = 1e-6) -> SelgradeGrouping:
    """Cluster the roots by real part; bases from collocation invariant subspaces."""
    sys = spec.sys
    roots = sorted(spec.roots, key=lambda r: -r.mu.real)
    groups: list[list[Root]] = []
    for r in roots:
        if groups and groups[-1][-1].mu.real - r.mu.real <= tol_group:
            groups[-1].append(r)
        else:
            if groups and groups[-1][-1].mu.real - r.mu.real < 2 * tol_group:
                raise ValueError("ambiguous grouping: clusters closer than 2 tol_group, refine tol_group")
            groups.append([r])
    col = collocation_matrix(sys, spec.discretization_order)
    eig = np.linalg.eigvals(col.matrix)

    def basis_for(rs: list[Root]) -> tuple[M2State, ...]:
        idx = _nearest_eigs(eig, [(r.mu, r.multiplicity) for r in rs])
        chosen = eig[idx]
        scale = 1e-8 * (1 + np.abs(chosen).max())
        _, Zk, k = _schur_projector(col.matrix, lambda z: bool(np.any(np.abs(chosen - z) < scale)))
        if k != len(idx):
            raise RuntimeError("Schur reordering did not isolate the requested eigenvalues")
        return tuple(from_collocation(col, Zk[:, j], sys.h, sys.n_seg) for j in range(k))

    levels = []
    cumulative: list[Root] = []
    for g in groups:
        cumulative = cumulative + g
        levels.append(
            SelgradeLevel(
                float(np.mean([r.mu.real for r in g])),
                tuple(r.mu for r in g),
                basis_for(g),
                basis_for(cumulative),
            )
        )
    return SelgradeGrouping(tuple(levels), tol_group)


# ---------------------------------------------------- exponential separation


def _real_generator(split: HyperbolicSplitting) -> tuple[np.ndarray, list[M2State]]:
    """Generator of T(t) on V+ in a real basis, and the basis states."""
    blocks, basis = [], []
    sys = split.sys
    for md in split.modes:
        phi = md.eigenfunction(sys.h, sys.n_seg)
        a, b = md.mu.real, md.mu.imag
        for j in range(md.V.shape[1]):
            if md.real:
                blocks.append(np.array([[a]]))
                basis.append(M2State(md.V[:, j].real, phi[:, :, j].real, sys.h))
            else:
                blocks.append(np.array([[a, b], [-b, a]]))
                basis.append(M2State(md.V[:, j].real, phi[:, :, j].real, sys.h))
                basis.append(M2State(md.V[:, j].imag, phi[:, :, j].imag, sys.h))
    return sla.block_diag(*blocks) if blocks else np.zeros((0, 0)), basis


def check_exponential_separation(
    sys: DelaySystem,
    split: HyperbolicSplitting,
    T: float = 6.0,
    samples: int = 6,
    seed: int = 0,
    margin: float = 1e-2,
    t_min: float | None = None,
    states: list[M2State] | None = None,
) -> tuple[float, float, bool]:
    """Fit ||T(t) y-|| / ||y-|| / m(T(t)|V+) <= K e^{-gamma t}; returns (K, gamma, passed).

    m is the smallest stretching of T(t) on V+ (taken as 1 when V+ = 0).
    The fit uses sample times t >= t_min (default h) to skip the initial
    transient while the initial segment leaves the window.
    """
    rng = np.random.default_rng(seed)
    ys = states if states is not None else _random_states(sys, samples, rng)
    ys = [split.project_minus(y) for y in ys]
    norms0 = np.array([y.norm() for y in ys])
    live = norms0 > 0
    if not live.any():
        return 0.0, np.inf, True
    ys = [y for y, ok in zip(ys, live) if ok]
    norms0 = norms0[live]
    L, basis = _real_generator(split)
    if basis:
        G = np.array([[a.inner(b) for b in basis] for a in basis])
        C = np.linalg.cholesky(G)
    t_min = sys.h if t_min is None else t_min
    chunk = sys.grid_step * max(1, int(round(0.25 / sys.grid_step)))
    times, ratios = [], []
    t = 0.0
    while t < T - 1e-12:
        ys = propagate(sys, ys, [None] * len(ys), chunk)
        if split.modes:
            ys = [split.project_minus(y) for y in ys]
        t += chunk
        grow = np.array([y.norm() for y in ys]) / norms0
        if basis:
            E = sla.expm(L * t)
            m = np.linalg.svd(C.T @ E @ np.linalg.inv(C.T), compute_uv=False).min()
        else:
            m = 1.0
        times.append(t)
        ratios.append(grow.max() / m)
    times = np.array(times)
    ratios = np.array(ratios)
    use = times >= t_min - 1e-12
    slope, icept = np.polyfit(times[use], np.log(ratios[use]), 1)
    gamma = -slope
    K = float(np.max(ratios * np.exp(gamma * times)))
    passed = bool(gamma > margin) if basis else True
    return K, float(gamma), passed
