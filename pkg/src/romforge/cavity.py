"""Steady lid-driven cavity solver and Latin hypercube design sampling.

The solver works in streamfunction-vorticity form on a uniform point
lattice spanning the rectangle, walls included: psi = 0 on all walls,
Thom's formula for wall vorticity, second-order central diffusion and a
deferred-correction upwind/central blend for advection.  Velocities are
recovered as u = dpsi/dy, v = -dpsi/dx with central differences, which
makes the discrete interior divergence vanish identically.

Iteration: red-black SOR sweeps on the psi Poisson equation interleaved
with under-relaxed red-black Gauss-Seidel sweeps on the vorticity
transport equation, until the max-norm of both residuals (normalized by
problem scale) drops below the tolerance.
"""

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import multiprocessing as mp

import numpy as np

from .errors import ConvergenceError
from .pod import SnapshotMatrix

__all__ = [
    "CavityParams",
    "FieldPair",
    "ParameterSpace",
    "reynolds_to_viscosity",
    "solve_cavity",
    "lhs_sample",
    "generate_snapshots",
]


@dataclass(frozen=True)
class CavityParams:
    """Geometry, Reynolds number and resolution of one cavity problem."""

    Lx: float
    Ly: float
    Re: float
    lid_speed: float = 1.0
    grid: tuple = (64, 64)  # (n_x, n_y)

    def __post_init__(self):
        if not (self.Lx > 0 and self.Ly > 0):
            raise ValueError(f"edge lengths must be positive, got {self.Lx}, {self.Ly}")
        if not self.Re > 0:
            raise ValueError(f"Reynolds number must be positive, got {self.Re}")
        nx, ny = self.grid
        if nx < 8 or ny < 8:
            raise ValueError(f"grid must be at least 8x8, got {self.grid}")


@dataclass
class FieldPair:
    """Velocity components on the (n_y, n_x) lattice, plus solve metadata."""

    u: np.ndarray
    v: np.ndarray
    iterations: int = 0
    residual: float = 0.0
    residual_history: np.ndarray = field(default=None, repr=False)

    def states(self):
        """Row-major flattened (u, v) vectors of length n_x * n_y."""
        return self.u.ravel().copy(), self.v.ravel().copy()


@dataclass(frozen=True)
class ParameterSpace:
    """Axis-aligned box of design parameters."""

    bounds: tuple

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        for lo, hi in bounds:
            if not lo < hi:
                raise ValueError(f"lower bound {lo} must be below upper bound {hi}")
        object.__setattr__(self, "bounds", bounds)

    @property
    def dimension(self):
        return len(self.bounds)


def reynolds_to_viscosity(params):
    """Kinematic viscosity from Re = max(Lx, Ly) * lid_speed / nu."""
    if not params.Re > 0:
        raise ValueError(f"Reynolds number must be positive, got {params.Re}")
    return max(params.Lx, params.Ly) * abs(params.lid_speed) / params.Re


def _interior_masks(ny, nx):
    """Checkerboard masks over the interior block."""
    jj, ii = np.meshgrid(np.arange(1, ny - 1), np.arange(1, nx - 1), indexing="ij")
    red = (jj + ii) % 2 == 0
    return red, ~red


def solve_cavity(params, tol=1e-6, max_iters=50_000, sor_omega=1.5,
                 vorticity_relax=0.7, advection_blend=1.0, psi_sweeps=3):
    """Iterate the coupled psi/omega system to a steady state.

    Stops when the normalized max-norms of the streamfunction Poisson
    residual and the vorticity transport residual both fall below ``tol``.
    Raises ConvergenceError when ``max_iters`` is exhausted or the fields
    blow up (Reynolds number beyond the scheme's stable range).
    """
    nx, ny = params.grid
    dx = params.Lx / (nx - 1)
    dy = params.Ly / (ny - 1)
    nu = reynolds_to_viscosity(params)
    lid = params.lid_speed

    psi = np.zeros((ny, nx))
    omega = np.zeros((ny, nx))
    u = np.zeros((ny, nx))
    v = np.zeros((ny, nx))
    u[-1, :] = lid

    if lid == 0.0:
        return FieldPair(u, v, iterations=1, residual=0.0,
                         residual_history=np.zeros(1))

    red, black = _interior_masks(ny, nx)
    idx2, idy2 = 1.0 / dx**2, 1.0 / dy**2
    pois_diag = 2.0 * (idx2 + idy2)
    scale_ref = max(abs(lid), 1e-300)
    blow_up = 1e12 * scale_ref

    history = []
    for it in range(1, max_iters + 1):
        # wall vorticity (Thom's formula); lid contributes the extra term
        omega[0, :] = -2.0 * psi[1, :] * idy2
        omega[-1, :] = -2.0 * psi[-2, :] * idy2 - 2.0 * lid / dy
        omega[:, 0] = -2.0 * psi[:, 1] * idx2
        omega[:, -1] = -2.0 * psi[:, -2] * idx2

        uc = u[1:-1, 1:-1]
        vc = v[1:-1, 1:-1]
        up, um = np.maximum(uc, 0.0), np.minimum(uc, 0.0)
        vp, vm = np.maximum(vc, 0.0), np.minimum(vc, 0.0)

        a_e = nu * idx2 - um / dx
        a_w = nu * idx2 + up / dx
        a_n = nu * idy2 - vm / dy
        a_s = nu * idy2 + vp / dy
        a_p = a_e + a_w + a_n + a_s

        # deferred correction: solve the upwind system, push the blend
        # toward the central discretization through the source term
        if advection_blend > 0.0:
            conv_up = (
                up * (omega[1:-1, 1:-1] - omega[1:-1, :-2]) / dx
                + um * (omega[1:-1, 2:] - omega[1:-1, 1:-1]) / dx
                + vp * (omega[1:-1, 1:-1] - omega[:-2, 1:-1]) / dy
                + vm * (omega[2:, 1:-1] - omega[1:-1, 1:-1]) / dy
            )
            conv_cen = (
                uc * (omega[1:-1, 2:] - omega[1:-1, :-2]) / (2.0 * dx)
                + vc * (omega[2:, 1:-1] - omega[:-2, 1:-1]) / (2.0 * dy)
            )
            s_dc = advection_blend * (conv_up - conv_cen)
        else:
            s_dc = 0.0

        for mask in (red, black):
            rhs = (
                a_e * omega[1:-1, 2:]
                + a_w * omega[1:-1, :-2]
                + a_n * omega[2:, 1:-1]
                + a_s * omega[:-2, 1:-1]
                + s_dc
            )
            new = rhs / a_p
            core = omega[1:-1, 1:-1]
            core[mask] += vorticity_relax * (new[mask] - core[mask])

        for _ in range(psi_sweeps):
            for mask in (red, black):
                rhs = (
                    idx2 * (psi[1:-1, 2:] + psi[1:-1, :-2])
                    + idy2 * (psi[2:, 1:-1] + psi[:-2, 1:-1])
                    + omega[1:-1, 1:-1]
                )
                new = rhs / pois_diag
                core = psi[1:-1, 1:-1]
                core[mask] += sor_omega * (new[mask] - core[mask])

        u[1:-1, 1:-1] = (psi[2:, 1:-1] - psi[:-2, 1:-1]) / (2.0 * dy)
        v[1:-1, 1:-1] = -(psi[1:-1, 2:] - psi[1:-1, :-2]) / (2.0 * dx)

        # residuals of the target (blend-weighted) steady equations
        lap_psi = (
            idx2 * (psi[1:-1, 2:] - 2.0 * psi[1:-1, 1:-1] + psi[1:-1, :-2])
            + idy2 * (psi[2:, 1:-1] - 2.0 * psi[1:-1, 1:-1] + psi[:-2, 1:-1])
        )
        r_psi = np.max(np.abs(lap_psi + omega[1:-1, 1:-1]))

        conv_up = (
            up * (omega[1:-1, 1:-1] - omega[1:-1, :-2]) / dx
            + um * (omega[1:-1, 2:] - omega[1:-1, 1:-1]) / dx
            + vp * (omega[1:-1, 1:-1] - omega[:-2, 1:-1]) / dy
            + vm * (omega[2:, 1:-1] - omega[1:-1, 1:-1]) / dy
        )
        conv_cen = (
            uc * (omega[1:-1, 2:] - omega[1:-1, :-2]) / (2.0 * dx)
            + vc * (omega[2:, 1:-1] - omega[:-2, 1:-1]) / (2.0 * dy)
        )
        conv_eff = (1.0 - advection_blend) * conv_up + advection_blend * conv_cen
        lap_omega = (
            idx2 * (omega[1:-1, 2:] - 2.0 * omega[1:-1, 1:-1] + omega[1:-1, :-2])
            + idy2 * (omega[2:, 1:-1] - 2.0 * omega[1:-1, 1:-1] + omega[:-2, 1:-1])
        )
        r_omega = np.max(np.abs(conv_eff - nu * lap_omega))

        omega_scale = max(float(np.max(np.abs(omega))), scale_ref / max(dx, dy))
        flux_scale = float(np.max(a_p)) * omega_scale
        res = max(r_psi / omega_scale, r_omega / flux_scale)
        history.append(res)

        if not np.isfinite(res) or float(np.max(np.abs(omega))) > blow_up:
            raise ConvergenceError(
                f"cavity solve diverged at iteration {it} (Re={params.Re:g} likely "
                f"beyond the scheme's stable range)",
                residual=res,
                iterations=it,
            )
        if res <= tol:
            return FieldPair(
                u, v, iterations=it, residual=res, residual_history=np.asarray(history)
            )

    raise ConvergenceError(
        f"cavity solve did not reach tol={tol:g} in {max_iters} iterations "
        f"(final residual {history[-1]:.3e})",
        residual=history[-1],
        iterations=max_iters,
    )


def lhs_sample(space, n, seed, candidates=50):
    """Latin hypercube design over the parameter box.

    Each dimension is cut into n equal strata holding exactly one sample.
    ``candidates`` stratified designs are drawn and the one with the
    largest minimum pairwise distance (maximin, measured on the unit cube)
    is kept; candidates=1 gives a plain stratified draw.
    """
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    if candidates < 1:
        raise ValueError(f"candidate count must be >= 1, got {candidates}")
    p = space.dimension
    rng = np.random.default_rng(seed)

    best, best_score = None, -np.inf
    for _ in range(candidates):
        unit = np.empty((n, p))
        for j in range(p):
            unit[:, j] = (rng.permutation(n) + rng.uniform(0.0, 1.0, size=n)) / n
        if n == 1:
            score = np.inf
        else:
            deltas = unit[:, None, :] - unit[None, :, :]
            dist2 = np.sum(deltas * deltas, axis=2)
            np.fill_diagonal(dist2, np.inf)
            score = float(dist2.min())
        if score > best_score:
            best, best_score = unit, score

    lo = np.array([b[0] for b in space.bounds])
    hi = np.array([b[1] for b in space.bounds])
    return lo + best * (hi - lo)


def _solve_design_point(args):
    index, mu, grid, lid_speed, tol, max_iters = args
    params = CavityParams(Lx=mu[0], Ly=mu[1], Re=mu[2], lid_speed=lid_speed, grid=grid)
    try:
        fields = solve_cavity(params, tol=tol, max_iters=max_iters)
    except ConvergenceError as exc:
        return index, None, str(exc)
    xu, xv = fields.states()
    return index, (xu, xv, fields.iterations, fields.residual), None


def generate_snapshots(space, n, seed, grid=(64, 64), lid_speed=1.0, tol=1e-6,
                       max_iters=50_000, workers=1, allow_partial=False,
                       progress=None):
    """Sample the design box and solve the cavity problem at every point.

    The space must be 3-dimensional: (Lx, Ly, Re).  Returns one
    SnapshotMatrix per velocity channel plus the (n, 3) design table whose
    row order matches the snapshot columns.  Any failed solve aborts the
    dataset unless ``allow_partial`` is set, in which case failed columns
    are dropped (with a warning).
    """
    if space.dimension != 3:
        raise ValueError(
            f"built-in cavity sampling needs (Lx, Ly, Re) bounds, got {space.dimension} dims"
        )
    design = lhs_sample(space, n, seed)
    jobs = [(i, design[i], tuple(grid), lid_speed, tol, max_iters) for i in range(n)]

    results = [None] * n
    failures = []
    if workers > 1:
        ctx = mp.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            for index, payload, err in pool.map(_solve_design_point, jobs):
                results[index] = payload
                if err is not None:
                    failures.append((index, err))
                if progress is not None and payload is not None:
                    progress(index, payload[2], payload[3])
    else:
        for job in jobs:
            index, payload, err = _solve_design_point(job)
            results[index] = payload
            if err is not None:
                failures.append((index, err))
            if progress is not None and payload is not None:
                progress(index, payload[2], payload[3])

    if failures and not allow_partial:
        detail = "; ".join(f"#{i}: {msg}" for i, msg in failures)
        raise ConvergenceError(
            f"{len(failures)} of {n} solves failed at design indices "
            f"{[i for i, _ in failures]} ({detail})"
        )
    if failures:
        warnings.warn(
            f"dropping {len(failures)} failed solves at indices {[i for i, _ in failures]}",
            RuntimeWarning,
        )

    keep = [i for i in range(n) if results[i] is not None]
    if not keep:
        raise ConvergenceError("every solve in the design failed")
    U = np.column_stack([results[i][0] for i in keep])
    V = np.column_stack([results[i][1] for i in keep])
    design_kept = design[keep]
    return (
        SnapshotMatrix(U, design_kept),
        SnapshotMatrix(V, design_kept),
        design_kept,
    )
