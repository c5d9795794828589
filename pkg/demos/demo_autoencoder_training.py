"""Train a small convolutional autoencoder on synthetic fields.

Demonstrates the engine pieces directly: architecture construction,
mini-batch Adam training with early stopping, and the reconstruction
quality of the learned two-dimensional code.

    python demos/demo_autoencoder_training.py
"""

import numpy as np

from romforge.nn import build_paper_cae, mse_loss
from romforge.pipeline import CaeTrainConfig, train_cae


def make_fields(n, ny=16, nx=16, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, ny), np.linspace(0, 1, nx), indexing="ij")
    out = np.empty((n, ny, nx, 1))
    for i in range(n):
        a, b = rng.uniform(0.5, 2.0, 2)
        field = np.sin(np.pi * a * xx) * np.cos(np.pi * b * yy)
        out[i, :, :, 0] = (field - field.min()) / (field.max() - field.min())
    return out


def main():
    X = make_fields(40)
    X_train, X_val = X[:32], X[32:]

    net = build_paper_cae(16, 16, 1, k=2, width_scale=0.5, seed=0)
    print(f"parameters: {net.parameter_count}")
    print(f"initial training loss: {mse_loss(net.forward(X_train), X_train):.4e}")

    config = CaeTrainConfig(max_epochs=300, patience=60, width_scale=0.5, learning_rate=1e-3)
    epochs, history = train_cae(net, X_train, X_val, config, seed=0)
    print(f"stopped after {epochs} epochs (patience {config.patience})")
    print(f"best validation loss: {history[:, 1].min():.4e}")

    codes = net.encode(X_val)
    recon = net.decode(codes)
    print(f"held-out reconstruction mse: {mse_loss(recon, X_val):.4e}")
    print("\nheld-out codes (2-dimensional):")
    for i, code in enumerate(codes):
        print(f"  sample {i}: ({code[0]:+.3f}, {code[1]:+.3f})")


if __name__ == "__main__":
    main()
