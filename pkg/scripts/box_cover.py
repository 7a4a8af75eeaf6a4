"""Box approximation of the chain control set in reduced coordinates.

Refines boxes around 0 for x' = -x - 0.5 x(t - 1) + u with |u| <= 1 and
prints, per depth, the number of kept boxes and the covered head interval.
The equilibria of constant controls have heads in [-2/3, 2/3].
"""

from __future__ import annotations

import argparse

import numpy as np

from delaylab.chains import Reduction, approximate_chain_control_set
from delaylab.system import ControlSignal, DelaySystem, random_bang_bang


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--max-depth", type=int, default=6)
    p.add_argument("--controls", type=int, default=9)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    sys = DelaySystem((1.0,), ([[-1.0]], [[-0.5]]), ([[1.0]], [[0.0]]), np.array([[-1.0], [1.0]]), 64)
    red = Reduction(1, 2, sys.h, sys.n_seg)
    rng = np.random.default_rng(args.seed)
    ctrls = [ControlSignal.constant([c], 0.0, 1.0, 0.25) for c in np.linspace(-1, 1, args.controls)]
    ctrls += [random_bang_bang(sys, rng, 0.0, 1.0, 0.25) for _ in range(4)]
    print(f"reduction roundtrip error {red.roundtrip_error():.2e}")
    for depth in range(2, args.max_depth + 1):
        cover = approximate_chain_control_set(sys, red, ([-1.0, -1.0], [1.0, 1.0]), depth, 1.0, ctrls)
        iv = cover.projection_intervals(0)
        print(f"depth {depth}: {len(cover.indices):5d} boxes, width {cover.width[0]:.4f}, head projection {iv}")


if __name__ == "__main__":
    main()
