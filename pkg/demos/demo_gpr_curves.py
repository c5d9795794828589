"""Gaussian process regression in one dimension.

Fits a Matern GPR to a handful of samples of a smooth function and prints
the prediction error along a dense grid, plus what happens far from the
data (the posterior mean falls back to the training mean).

    python demos/demo_gpr_curves.py
"""

import numpy as np

from romforge.gpr import KernelSpec, fit, predict_mean


def main():
    rng = np.random.default_rng(3)
    z = np.sort(rng.uniform(0.0, 1.0, 20))[:, None]
    y = np.sin(2 * np.pi * z).ravel() + 0.5 * z.ravel()

    for family, nu in (("matern", 2.5), ("matern", 1.5), ("rbf", 0.0)):
        kernel = KernelSpec(family, 1.0, nu if family == "matern" else 2.5)
        model = fit(z, y, kernel=kernel, noise=1e-10, seed=0)
        zq = np.linspace(0.0, 1.0, 400)[:, None]
        truth = np.sin(2 * np.pi * zq).ravel() + 0.5 * zq.ravel()
        err = np.abs(predict_mean(model, zq) - truth).max()
        label = f"{family}" + (f"(nu={nu})" if family == "matern" else "")
        print(
            f"{label:15s} fitted length scale {model.kernel.length_scale:8.4f}  "
            f"max error on [0,1]: {err:.2e}"
        )

    model = fit(z, y, noise=1e-10, seed=0)
    far = predict_mean(model, np.array([1e6]))
    print(f"\nprediction far outside the data: {far:.6f} (training mean {model.y_mean:.6f})")
    worst = max(abs(predict_mean(model, z[i]) - y[i]) for i in range(len(y)))
    print(f"worst training-point deviation: {worst:.2e}")


if __name__ == "__main__":
    main()
