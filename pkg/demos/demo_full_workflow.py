"""End-to-end surrogate workflow at desk scale, through the library API.

Generates a small cavity snapshot set, builds both surrogate families,
and compares their prediction errors on held-out design points.  Takes a
couple of minutes on a laptop.

    python demos/demo_full_workflow.py
"""

import numpy as np

from romforge.cavity import ParameterSpace, generate_snapshots
from romforge.pipeline import (
    CaeTrainConfig,
    cae_gpr_offline,
    pod_gpr_offline,
    rom_error,
)
from romforge.pod import SnapshotMatrix


def main():
    space = ParameterSpace(((1.0, 2.0), (1.0, 2.0), (100.0, 400.0)))
    grid = (24, 24)
    print("solving 30 cavity flows on a 24x24 grid ...")
    snap_u, snap_v, design = generate_snapshots(space, 30, seed=0, grid=grid)

    train, val, test = slice(0, 22), slice(22, 26), slice(26, 30)
    U, V = snap_u.data, snap_v.data
    k = 4

    pod_u = pod_gpr_offline(SnapshotMatrix(U[:, train], design[train]), k, seed=0)
    pod_v = pod_gpr_offline(SnapshotMatrix(V[:, train], design[train]), k, seed=1)

    print("training the convolutional autoencoder ...")
    cae = cae_gpr_offline(
        [U[:, train], V[:, train]],
        [U[:, val], V[:, val]],
        design[train],
        (grid[1], grid[0]),
        k,
        train_config=CaeTrainConfig(max_epochs=800, patience=150, width_scale=0.5),
        seed=0,
    )
    print(f"  stopped after {cae.provenance['epochs']} epochs")

    print(f"\nheld-out squared-relative errors at k={k}:")
    print(f"{'point':>5} {'pod-gpr u':>12} {'cae-gpr u':>12} {'pod-gpr v':>12} {'cae-gpr v':>12}")
    test_idx = range(26, 30)
    means = np.zeros(4)
    for i in test_idx:
        mu = design[i]
        cae_pred = cae.predict(mu)
        errs = (
            rom_error(U[:, i], pod_u.predict(mu)),
            rom_error(U[:, i], cae_pred[:, 0]),
            rom_error(V[:, i], pod_v.predict(mu)),
            rom_error(V[:, i], cae_pred[:, 1]),
        )
        means += np.array(errs) / len(test_idx)
        print(f"{i:5d} " + " ".join(f"{e:12.3e}" for e in errs))
    print("mean  " + " ".join(f"{e:12.3e}" for e in means))


if __name__ == "__main__":
    main()
