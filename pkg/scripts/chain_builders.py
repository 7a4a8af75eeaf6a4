"""Controlled chains from a state to 0 and back on x' = -x - 0.5 x(t - 1) + u.

Builds both chains for several eps, verifies them and writes the chains
as JSON files that ``delaylab chain-verify`` accepts.
"""

from __future__ import annotations

import argparse
import json
import os

import numpy as np

from delaylab.chains import build_chain_from_zero, build_chain_to_zero, chain_to_dict, seed_loop, verify_chain
from delaylab.system import ControlSignal, DelaySystem, M2State


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="chains_out")
    p.add_argument("--tau", type=float, default=1.0)
    args = p.parse_args()
    os.makedirs(args.out, exist_ok=True)

    sys = DelaySystem((1.0,), ([[-1.0]], [[-0.5]]), ([[1.0]], [[0.0]]), np.array([[-1.0], [1.0]]), 64)
    y = M2State.constant([1.0 / 1.5], 1.0, sys.n_seg)  # equilibrium under u = 1
    u = ControlSignal.constant([1.0], 0.0, args.tau)
    for eps in (0.1, 0.01):
        loop = seed_loop(sys, y, u, eps / 2, args.tau)
        down = build_chain_to_zero(sys, y, eps, args.tau, loop)
        up, info = build_chain_from_zero(sys, y, eps, args.tau, loop)
        for name, ch in (("to_zero", down), ("from_zero", up)):
            rep = verify_chain(sys, ch)
            print(f"eps {eps:g} {name:9s}: {ch.q:3d} legs at {ch.epsilon:.4g}, worst jump {rep.worst_jump:.3e}, valid {rep.valid}")
            with open(os.path.join(args.out, f"{name}_{eps:g}.json"), "w", encoding="utf-8") as fh:
                json.dump(chain_to_dict(ch), fh)
        print(f"  ladder: alpha = {info['alpha']:.4g}, k = {info['k']}")


if __name__ == "__main__":
    main()
