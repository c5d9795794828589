"""Proper orthogonal decomposition on a toy snapshot set.

Builds snapshots of a parameterized 1-D field, extracts the POD basis,
and shows how the information content and projection error behave as the
rank grows.  Run from the repository root:

    python demos/demo_pod_basics.py
"""

import numpy as np

from romforge.pod import (
    PodBasis,
    SnapshotMatrix,
    choose_rank,
    pod_projection_error,
    relative_information_content,
    truncated_svd,
)


def make_snapshots(n_states=200, n_samples=25, seed=0):
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, n_states)
    params = rng.uniform(0.5, 2.0, (n_samples, 2))
    cols = [np.sin(np.pi * a * x) + 0.3 * np.cos(3 * np.pi * b * x) for a, b in params]
    return SnapshotMatrix(np.column_stack(cols), params)


def main():
    snaps = make_snapshots()
    print(f"snapshot matrix: {snaps.n_states} states x {snaps.n_samples} samples")

    _, sigma, _ = truncated_svd(snaps, snaps.n_samples)
    print("\nleading singular values:")
    print("  " + "  ".join(f"{s:.3e}" for s in sigma[:8]))

    print("\nrank  E(k)        projection error")
    for k in (1, 2, 3, 5, 8, 12):
        U_k, _, _ = truncated_svd(snaps, k)
        basis = PodBasis(U_k, sigma)
        ek = relative_information_content(sigma, k)
        err = pod_projection_error(snaps, basis)
        print(f"{k:4d}  {ek:.8f}  {err:.3e}")

    for eps in (0.95, 0.999, 0.999999):
        print(f"smallest rank with E(k) >= {eps}: {choose_rank(sigma, eps)}")


if __name__ == "__main__":
    main()
