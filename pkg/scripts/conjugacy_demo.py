"""Bounded entire solutions and the conjugacy to the homogeneous flow.

For x' = a x + b x(t - 1) + u with a hyperbolic spectrum, computes e(u, 0)
for random bang-bang controls, then checks H(Phi_t(u, y)) = Phi_t^0(H(u, y))
with H(u, y) = y - e(u, 0) along t in [0, 2].
"""

from __future__ import annotations

import argparse

import numpy as np

from delaylab.hyperbolic import entire_solutions, horizon
from delaylab.integrator import propagate
from delaylab.spectral import compute_spectrum, hyperbolic_split
from delaylab.system import DelaySystem, M2State, m2_distance, random_bang_bang


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--b", type=float, default=-0.1)
    p.add_argument("--cases", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    sys = DelaySystem((1.0,), ([[args.a]], [[args.b]]), ([[1.0]], [[0.0]]), np.array([[-1.0], [1.0]]), 128)
    split = hyperbolic_split(sys, compute_spectrum(sys, -3.0, 32))
    print(f"dim V+ = {split.dim_plus}, alpha_hat = {split.alpha_hat:.4f}, K_hat = {split.K_hat:.3f}")
    print(f"truncation horizon at tol 1e-8: {horizon(split, 1e-8):.2f}")

    rng = np.random.default_rng(args.seed)
    T = 200.0
    for k in range(args.cases):
        u = random_bang_bang(sys, rng, -T, T, 0.25)
        y = M2State(rng.normal(size=1), rng.normal(size=(sys.n_seg + 1, 1)), sys.h)
        worst = 0.0
        for t in (0.5, 1.0, 1.5, 2.0):
            e0, et = entire_solutions(sys, split, [u, u.shift(t)], 0.0)
            (phi,) = propagate(sys, [y], [u], t)
            (hom,) = propagate(sys, [y - e0], [None], t)
            worst = max(worst, m2_distance(phi - et, hom) / (1 + hom.norm()))
        print(f"case {k}: |e(u,0)| = {e0.norm():.4f}, conjugacy residual {worst:.2e}")


if __name__ == "__main__":
    main()
