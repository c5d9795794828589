"""Solve one lid-driven cavity flow and inspect the solution.

Runs the built-in streamfunction-vorticity solver on a small grid and
prints convergence info, the midline velocity profile, and the discrete
divergence (which vanishes to rounding by construction).

    python demos/demo_cavity_flow.py
"""

import numpy as np

from romforge.cavity import CavityParams, reynolds_to_viscosity, solve_cavity


def main():
    params = CavityParams(Lx=1.0, Ly=1.0, Re=100.0, grid=(48, 48))
    print(f"Re={params.Re:g}, kinematic viscosity {reynolds_to_viscosity(params):.4e}")

    fields = solve_cavity(params)
    print(f"converged in {fields.iterations} iterations, residual {fields.residual:.2e}")

    nx, ny = params.grid
    dx = params.Lx / (nx - 1)
    dy = params.Ly / (ny - 1)
    div = (fields.u[1:-1, 2:] - fields.u[1:-1, :-2]) / (2 * dx) + (
        fields.v[2:, 1:-1] - fields.v[:-2, 1:-1]
    ) / (2 * dy)
    print(f"max interior divergence: {np.abs(div).max():.2e}")

    y = np.linspace(0, params.Ly, ny)
    mid = nx // 2
    print("\nu along the vertical midline (classic benchmark profile):")
    for j in range(0, ny, ny // 12):
        bar = "#" * int(40 * (fields.u[j, mid] + 0.4) / 1.4)
        print(f"  y={y[j]:.3f}  u={fields.u[j, mid]:+.4f}  {bar}")
    print(f"  y={y[-1]:.3f}  u={fields.u[-1, mid]:+.4f}  (lid)")
    print(f"\nmin/max u: {fields.u.min():+.4f} / {fields.u.max():+.4f}")
    print(f"min/max v: {fields.v.min():+.4f} / {fields.v.max():+.4f}")


if __name__ == "__main__":
    main()
