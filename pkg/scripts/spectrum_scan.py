"""Rightmost characteristic roots of x' = a x + b x(t - 1) over a parameter grid.

Prints the rightmost root, the hyperbolicity verdict and the unstable
dimension for each (a, b), then the convergence of the rightmost root of
x' = -x(t - 1) in the number of collocation points.
"""

from __future__ import annotations

import argparse

import numpy as np

from delaylab.spectral import check_hyperbolic, compute_spectrum
from delaylab.system import DelaySystem


def scalar(a: float, b: float, n_seg: int = 64) -> DelaySystem:
    return DelaySystem((1.0,), ([[a]], [[b]]), ([[1.0]], [[0.0]]), np.array([[-1.0], [1.0]]), n_seg)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sigma", type=float, default=-2.0)
    p.add_argument("--n-collocation", type=int, default=32)
    args = p.parse_args()

    print(f"{'a':>6} {'b':>6} {'rightmost root':>28} {'verdict':>15} {'dim+':>4}")
    for a in (-1.0, 0.0, 0.5, 1.0):
        for b in (-1.5, -0.5, -np.pi / 2, 0.5):
            spec = compute_spectrum(scalar(a, b), args.sigma, args.n_collocation)
            top = spec.rightmost()
            dim = sum(r.multiplicity for r in spec.roots if r.mu.real > 0)
            print(f"{a:6.2f} {b:6.3f} {top.mu.real:13.8f}{top.mu.imag:+13.8f}i {check_hyperbolic(spec):>15} {dim:4d}")

    print("\nx' = -x(t - 1), rightmost root against N_c")
    prev = None
    for nc in (8, 12, 16, 24, 32, 48):
        mu = compute_spectrum(scalar(0.0, -1.0), -1.0, nc).rightmost().mu
        step = "" if prev is None else f"  change {abs(mu - prev):.2e}"
        print(f"  N_c = {nc:2d}: {mu.real:.12f}{mu.imag:+.12f}i{step}")
        prev = mu


if __name__ == "__main__":
    main()
