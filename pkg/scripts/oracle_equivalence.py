"""Decomposed steppers against the four-component matrix stepper.

Prints the max deviation over all fields after each step, per polarization p.
"""
import argparse

import numpy as np

from spindd.grid import Grid1D
from spindd.model import BoundaryData, ScaledParams, SpinState, from_spin_state, to_spin_state
from spindd.transport import initial_potential, step_matrix_oracle, step_nperp, step_npm


def compare(p, n_cells, steps, dt):
    g = Grid1D(n_cells)
    x = g.cell_centers
    params = ScaledParams(gamma=2.0, tau=0.1, diff=1.0, lambda2=0.27, p=p,
                          mu=np.array([0.3, -0.4, 0.866]), doping=0.8 + 0.4 * np.cos(np.pi * x))
    bc = BoundaryData.from_phi(0.9, 1.2, 0.0, 0.1)
    n0 = 1 + 0.3 * np.sin(np.pi * x)
    nvec = np.column_stack([0.1 * np.sin(np.pi * x), 0.05 * np.cos(3 * x),
                            0.2 * np.sin(2 * np.pi * x)])
    state = to_spin_state(n0, nvec, params.mu)
    V_dec = V_or = initial_potential(g, state, params, bc)
    devs = []
    for _ in range(steps):
        n0, nvec, V_or, _ = step_matrix_oracle(g, n0, nvec, V_or, params, bc, dt)
        npl, nmi, V_dec, _ = step_npm(g, state, V_dec, params, bc, dt)
        state = SpinState(npl, nmi, step_nperp(g, state.n_perp, V_dec, params, dt))
        d0, dvec = from_spin_state(state, params.mu)
        devs.append(max(np.abs(d0 - n0).max(), np.abs(dvec - nvec).max(),
                        np.abs(V_dec.values - V_or.values).max()))
    return devs


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cells", type=int, default=16)
    ap.add_argument("--steps", type=int, default=10)
    ap.add_argument("--dt", type=float, default=0.05)
    args = ap.parse_args()
    for p in (0.0, 0.3, 0.7, 0.95):
        devs = compare(p, args.cells, args.steps, args.dt)
        print(f"p={p:4.2f}  max deviation {max(devs):.3e}  after last step {devs[-1]:.3e}")


if __name__ == "__main__":
    main()
