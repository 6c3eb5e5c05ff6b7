"""Report the bending stiffness of the reference chain and check it.

The stiffness is chosen so that a cantilever with the reference crack
length releases energy at the normal fracture energy when the load end
reaches the target initiation opening. The script simulates the reference
model and prints where the reaction actually peaks.

    python scripts/calibrate_k_bend.py --n-nodes 101
"""

import argparse

import numpy as np

from smoothopt.cohesive import (REFERENCE_INITIATION, REFERENCE_PRECRACK_LENGTH, ChainModel,
                                LoadSchedule, calibrate_k_bend, simulate)
from smoothopt.io import fmt


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n-nodes", type=int, default=101)
    p.add_argument("--steps", type=int, default=200, help="load steps for the check")
    args = p.parse_args()

    h = 1.0 / (args.n_nodes - 1)
    k_bend = calibrate_k_bend(h, REFERENCE_PRECRACK_LENGTH, REFERENCE_INITIATION)
    print(f"k_bend = {fmt(k_bend)} for h = {fmt(h)}")
    precrack = int(round(REFERENCE_PRECRACK_LENGTH / h))
    model = ChainModel(n_nodes=args.n_nodes, k_bend=k_bend, precrack=precrack,
                       load=LoadSchedule(n_steps=args.steps))
    hist = simulate(model, [1.0])
    peak = int(np.argmax(hist.reaction))
    print(f"reaction peaks at u_hat = {fmt(hist.displacement[peak])} "
          f"(target initiation {fmt(REFERENCE_INITIATION)}), F = {fmt(hist.reaction[peak])}")


if __name__ == "__main__":
    main()
