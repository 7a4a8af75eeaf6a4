"""Equator distances of the projective lift.

Along a ray y = t y0 the embedded points approach the equator; over the
bounded entire solutions of a hyperbolic system they stay away from it.
"""

from __future__ import annotations

import numpy as np

from delaylab.hyperbolic import entire_solutions
from delaylab.lift import LiftedState, ProjectivePoint, equator_distance, hyperbolic_subbundle_sample
from delaylab.spectral import compute_spectrum, hyperbolic_split
from delaylab.system import ControlSignal, DelaySystem, M2State, random_bang_bang


def main():
    sys = DelaySystem((1.0,), ([[-1.0]], [[-0.5]]), ([[1.0]], [[0.0]]), np.array([[-1.0], [1.0]]), 64)
    y0 = M2State.constant([1.0], 1.0, sys.n_seg)
    y0 = y0 * (1.0 / y0.norm())
    for t in (1, 10, 100, 1000, 10000):
        print(f"t = {t:5d}: equator distance {equator_distance(ProjectivePoint.of(LiftedState(t * y0, 1.0))):.3e}")

    split = hyperbolic_split(sys, compute_spectrum(sys, -3.0, 32))
    rng = np.random.default_rng(0)
    ctrls = [ControlSignal.constant([c], -60.0, 60.0, 0.25) for c in (-1.0, 0.0, 1.0)]
    ctrls += [random_bang_bang(sys, rng, -60.0, 60.0, 0.25) for _ in range(8)]
    sample = hyperbolic_subbundle_sample(sys, split, ctrls)
    norms = [e.norm() for e in entire_solutions(sys, split, ctrls, 0.0)]
    print(f"subbundle sample: {len(sample.points)} points, margin {sample.margin:.4f}, max |e(u,0)| {max(norms):.4f}")


if __name__ == "__main__":
    main()
