"""Locate a jump of the chain work along one design axis.

Scans a 1-D slice of the block-strength design on a coarse grid, picks the
largest relative change between neighbours and bisects it down to a
prescribed gap. The bracketing pair is printed with 17 digits so it can be
pinned in a regression test.

    python scripts/find_discontinuity.py --axis 1 --fixed 1.0 --lo 0.9 --hi 1.1
"""

import argparse

import numpy as np

from smoothopt.cohesive import ChainObjective, reference_model
from smoothopt.io import fmt


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--axis", type=int, default=1, help="design index to vary")
    p.add_argument("--fixed", type=float, default=1.0, help="value of the other entries")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--lo", type=float, default=0.5)
    p.add_argument("--hi", type=float, default=2.0)
    p.add_argument("--grid", type=int, default=301)
    p.add_argument("--gap", type=float, default=2e-7, help="final bracket width (physical)")
    args = p.parse_args()

    objective = ChainObjective(reference_model())

    def work(t):
        x = np.full(args.dim, args.fixed)
        x[args.axis] = t
        return objective(x)

    ts = np.linspace(args.lo, args.hi, args.grid)
    ws = np.array([work(t) for t in ts])
    rel = np.abs(np.diff(ws)) / np.maximum(np.abs(ws[:-1]), np.abs(ws[1:]))
    i = int(np.argmax(rel))
    a, b, wa, wb = ts[i], ts[i + 1], ws[i], ws[i + 1]
    print(f"coarse bracket [{fmt(a)}, {fmt(b)}], relative change {rel[i]:.3%}")
    while b - a > args.gap:
        m = 0.5 * (a + b)
        wm = work(m)
        # keep the half that carries the larger change
        if abs(wm - wa) >= abs(wb - wm):
            b, wb = m, wm
        else:
            a, wa = m, wm
    jump = abs(wb - wa) / max(abs(wa), abs(wb))
    print(f"lo = {fmt(a)}  W = {fmt(wa)}")
    print(f"hi = {fmt(b)}  W = {fmt(wb)}")
    print(f"relative jump {jump:.3%} across {b - a:.3g}")


if __name__ == "__main__":
    main()
