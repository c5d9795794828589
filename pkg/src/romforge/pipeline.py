"""Offline/online surrogate construction and cross-validated evaluation.

Two surrogate families share an interface: an offline constructor taking
snapshot data and returning an immutable surrogate, and ``predict(mu)``
returning the reconstructed full-order state(s).  POD-GPR handles one
state channel per surrogate; CAE-GPR consumes both velocity channels at
once and its shared code predicts both.
"""

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import multiprocessing as mp

import numpy as np

from . import gpr
from .errors import TrainingError
from .nn import (
    AdamState,
    CaeNetwork,
    adam_step,
    loss_and_gradients,
    mse_loss,
    seed_key,
)
from .pod import PodBasis, SnapshotMatrix, truncated_svd

__all__ = [
    "ScalingInfo",
    "GprConfig",
    "CaeTrainConfig",
    "PodGprSurrogate",
    "CaeGprSurrogate",
    "CvReport",
    "reshape_to_grid",
    "inverse_reshape",
    "snapshots_to_tensor",
    "minmax_fit",
    "minmax_transform",
    "minmax_inverse",
    "minmax_fit_transform",
    "rom_error",
    "projection_error",
    "pod_gpr_offline",
    "pod_gpr_online",
    "cae_gpr_offline",
    "cae_gpr_online",
    "project_cae",
    "train_cae",
    "fold_partitions",
    "fold_jobs",
    "run_fold_jobs",
    "five_fold_cv",
    "default_workers",
]


# ---------------------------------------------------------------------------
# reshaping and scaling


def reshape_to_grid(x, n_y, n_x):
    """Map a state vector (or N x c stack) onto the (n_y, n_x, c) grid.

    Row-major: index m of the flat state sits at grid row m // n_x,
    column m % n_x.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != n_y * n_x:
        raise ValueError(f"state length {x.shape[0]} != n_y*n_x = {n_y * n_x}")
    return x.reshape(n_y, n_x, x.shape[1])


def inverse_reshape(grid):
    """Exact inverse of `reshape_to_grid`: (n_y, n_x, c) -> (N, c)."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 3:
        raise ValueError(f"expected (n_y, n_x, c) input, got shape {grid.shape}")
    return grid.reshape(-1, grid.shape[2])


def snapshots_to_tensor(channels, n_y, n_x):
    """Stack per-channel N x n snapshot blocks into (n, n_y, n_x, c)."""
    mats = [np.asarray(ch, dtype=float) for ch in channels]
    for m in mats:
        if m.shape != mats[0].shape:
            raise ValueError("all channels must share one N x n shape")
        if m.shape[0] != n_y * n_x:
            raise ValueError(f"state length {m.shape[0]} != n_y*n_x = {n_y * n_x}")
    n = mats[0].shape[1]
    out = np.empty((n, n_y, n_x, len(mats)))
    for c, m in enumerate(mats):
        out[..., c] = m.T.reshape(n, n_y, n_x)
    return out


@dataclass(frozen=True)
class ScalingInfo:
    """Per-channel min-max statistics; mode 'global' or 'per_feature'."""

    mins: tuple  # one entry per channel: scalar or length-N vector
    maxs: tuple
    mode: str = "global"

    def __post_init__(self):
        if self.mode not in ("global", "per_feature"):
            raise ValueError(f"unknown scaling mode {self.mode!r}")
        object.__setattr__(self, "mins", tuple(np.asarray(m, dtype=float) for m in self.mins))
        object.__setattr__(self, "maxs", tuple(np.asarray(m, dtype=float) for m in self.maxs))

    def span(self, channel):
        """Denominator of the affine map; collapsed ranges count as 1."""
        span = self.maxs[channel] - self.mins[channel]
        if span.ndim:
            return np.where(span > 0.0, span, 1.0)
        return span if span > 0 else 1.0


def minmax_fit(channels, mode="global"):
    """Min-max statistics over per-channel N x n training blocks."""
    mins, maxs = [], []
    for ch in channels:
        ch = np.asarray(ch, dtype=float)
        if mode == "global":
            mins.append(ch.min())
            maxs.append(ch.max())
        else:
            mins.append(ch.min(axis=1))
            maxs.append(ch.max(axis=1))
    return ScalingInfo(tuple(mins), tuple(maxs), mode)


def _columnwise(stat, ch):
    stat = np.asarray(stat, dtype=float)
    return stat[:, None] if (stat.ndim == 1 and ch.ndim == 2) else stat


def minmax_transform(info, channels):
    """Affine map onto the training range [0,1]; outliers pass through."""
    out = []
    for c, ch in enumerate(channels):
        ch = np.asarray(ch, dtype=float)
        out.append((ch - _columnwise(info.mins[c], ch)) / _columnwise(info.span(c), ch))
    return out


def minmax_inverse(info, channels):
    """Undo `minmax_transform`."""
    out = []
    for c, ch in enumerate(channels):
        ch = np.asarray(ch, dtype=float)
        out.append(ch * _columnwise(info.span(c), ch) + _columnwise(info.mins[c], ch))
    return out


def minmax_fit_transform(channels, mode="global"):
    info = minmax_fit(channels, mode)
    return minmax_transform(info, channels), info


# ---------------------------------------------------------------------------
# error metrics (squared relative l2 form, as used throughout reporting)


def rom_error(x, x_pred):
    """||x - x~||^2 / ||x||^2 between a true and a surrogate state."""
    x = np.asarray(x, dtype=float).ravel()
    x_pred = np.asarray(x_pred, dtype=float).ravel()
    if x.shape != x_pred.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_pred.shape}")
    denom = float(x @ x)
    if denom == 0.0:
        raise ValueError("reference state has zero norm; relative error undefined")
    diff = x - x_pred
    return float(diff @ diff) / denom


def projection_error(x, x_proj):
    """Same form as `rom_error`; reported separately as the manifold floor."""
    return rom_error(x, x_proj)


# ---------------------------------------------------------------------------
# configuration bundles


@dataclass(frozen=True)
class GprConfig:
    kernel: str = "matern"
    nu: float = 2.5
    noise: float = 1e-10
    restarts: int = 8

    def spec(self):
        return gpr.KernelSpec(self.kernel, 1.0, self.nu)


@dataclass(frozen=True)
class CaeTrainConfig:
    learning_rate: float = 3e-4
    batch_size: int = 8
    max_epochs: int = 7500
    patience: int = 500
    width_scale: float = 1.0
    alpha: float = 0.25


# ---------------------------------------------------------------------------
# POD-GPR


@dataclass(frozen=True)
class PodGprSurrogate:
    kind: str
    basis: PodBasis
    models: tuple
    k: int
    provenance: dict = field(default_factory=dict, compare=False)

    def predict(self, mu):
        return pod_gpr_online(self, mu)

    def project(self, x):
        Psi = self.basis.vectors
        return Psi @ (Psi.T @ np.asarray(x, dtype=float))


def pod_gpr_offline(train, k, gpr_config=None, seed=0):
    """Basis from the truncated SVD, one GPR per expansion coefficient."""
    if not isinstance(train, SnapshotMatrix):
        raise TypeError("pod_gpr_offline expects a SnapshotMatrix")
    if k > train.n_samples:
        raise ValueError(f"rank k={k} exceeds sample count {train.n_samples}")
    cfg = gpr_config or GprConfig()
    U_k, sigma, _ = truncated_svd(train, k)
    basis = PodBasis(U_k, sigma)
    coeffs = (U_k.T @ train.data).T  # (n, k)
    models = tuple(
        gpr.fit(
            train.params,
            coeffs[:, i],
            kernel=cfg.spec(),
            noise=cfg.noise,
            restarts=cfg.restarts,
            seed=seed_key(seed, i),
        )
        for i in range(k)
    )
    return PodGprSurrogate(
        kind="pod-gpr", basis=basis, models=models, k=k, provenance={"seed": seed}
    )


def pod_gpr_online(surrogate, mu):
    """x~ = Psi a~ with each coefficient from its regression model."""
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1 or mu.size != surrogate.models[0].n_inputs:
        raise ValueError(
            f"expected {surrogate.models[0].n_inputs} parameters, got shape {mu.shape}"
        )
    coeffs = np.array([gpr.predict_mean(m, mu) for m in surrogate.models])
    return surrogate.basis.vectors @ coeffs


# ---------------------------------------------------------------------------
# CAE training harness and CAE-GPR


def train_cae(net, X_train, X_val, config, seed):
    """Mini-batch Adam with early stopping on the validation loss.

    Training indices are reshuffled every epoch from one seeded generator;
    the final short batch is kept.  Stops once the validation loss has not
    improved for ``config.patience`` consecutive epochs and restores the
    best-validation parameters.  Returns (epochs_run, history) where each
    history row is (train_loss, val_loss).
    """
    if X_val.shape[0] < 1:
        raise ValueError("early stopping needs a nonempty validation set")
    params = net.params()
    state = AdamState(params, learning_rate=config.learning_rate)
    shuffle_rng = np.random.default_rng(seed_key(seed, 7001))
    n = X_train.shape[0]
    best_val = np.inf
    best_weights = net.get_weights()
    stall = 0
    history = []
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            batch = X_train[order[start : start + config.batch_size]]
            loss, grads = loss_and_gradients(net, batch, batch)
            if not np.isfinite(loss):
                raise TrainingError("training loss became non-finite", epoch=epoch)
            adam_step(params, grads, state)
            epoch_loss += loss * batch.shape[0]
        val_loss = mse_loss(net.forward(X_val), X_val)
        history.append((epoch_loss / n, val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_weights = net.get_weights()
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                break
    net.set_weights(best_weights)
    return len(history), np.asarray(history)


@dataclass(frozen=True)
class CaeGprSurrogate:
    kind: str
    network: CaeNetwork
    scaling: ScalingInfo
    grid: tuple  # (n_y, n_x)
    n_channels: int
    models: tuple
    k: int
    provenance: dict = field(default_factory=dict, compare=False)

    def predict(self, mu):
        return cae_gpr_online(self, mu)

    def project(self, x_channels):
        return project_cae(self, x_channels)


def _build_cae(n_y, n_x, c, k, tcfg, seed):
    from .nn.network import build_paper_cae

    net = build_paper_cae(n_y, n_x, c, k, tcfg.width_scale, seed=seed)
    if tcfg.alpha != 0.25:
        for layer in net.encoder.layers + net.decoder.layers:
            if getattr(layer, "kind", None) == "leaky_relu":
                layer.alpha = tcfg.alpha
    return net


def cae_gpr_offline(train_channels, val_channels, params_train, grid, k,
                    train_config=None, gpr_config=None, seed=0):
    """Scale, reshape, train the autoencoder, then fit coefficient GPRs.

    ``train_channels``/``val_channels`` are per-channel N x n blocks; the
    training columns align with ``params_train`` rows.  ``grid`` is
    (n_y, n_x) with N = n_y * n_x.
    """
    tcfg = train_config or CaeTrainConfig()
    gcfg = gpr_config or GprConfig()
    n_y, n_x = grid
    scaled_train, scaling = minmax_fit_transform(train_channels)
    scaled_val = minmax_transform(scaling, val_channels)
    X_train = snapshots_to_tensor(scaled_train, n_y, n_x)
    X_val = snapshots_to_tensor(scaled_val, n_y, n_x)

    net = _build_cae(n_y, n_x, len(train_channels), k, tcfg, seed)
    t0 = time.perf_counter()
    epochs, history = train_cae(net, X_train, X_val, tcfg, seed)
    wall_time = time.perf_counter() - t0

    coeffs = net.encode(X_train)  # (n, k)
    models = tuple(
        gpr.fit(
            params_train,
            coeffs[:, i],
            kernel=gcfg.spec(),
            noise=gcfg.noise,
            restarts=gcfg.restarts,
            seed=seed_key(seed, i),
        )
        for i in range(k)
    )
    return CaeGprSurrogate(
        kind="cae-gpr",
        network=net,
        scaling=scaling,
        grid=(n_y, n_x),
        n_channels=len(train_channels),
        models=models,
        k=k,
        provenance={
            "seed": seed,
            "epochs": epochs,
            "wall_time_s": wall_time,
            "best_val_loss": float(history[:, 1].min()),
        },
    )


def cae_gpr_online(surrogate, mu):
    """Code from the GPRs, decoded, unscaled, reshaped back to N x c."""
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1 or mu.size != surrogate.models[0].n_inputs:
        raise ValueError(
            f"expected {surrogate.models[0].n_inputs} parameters, got shape {mu.shape}"
        )
    code = np.array([[gpr.predict_mean(m, mu) for m in surrogate.models]])
    decoded = surrogate.network.decode(code)[0]  # (n_y, n_x, c)
    flat = inverse_reshape(decoded)
    channels = [flat[:, c] for c in range(surrogate.n_channels)]
    return np.column_stack(minmax_inverse(surrogate.scaling, channels))


def project_cae(surrogate, x_channels):
    """decode(encode(x)) in original units: the manifold projection of x."""
    n_y, n_x = surrogate.grid
    channels = [np.asarray(ch, dtype=float).reshape(-1, 1) for ch in x_channels]
    scaled = minmax_transform(surrogate.scaling, channels)
    X = snapshots_to_tensor(scaled, n_y, n_x)
    out = surrogate.network.forward(X)[0]
    flat = inverse_reshape(out)
    back = minmax_inverse(surrogate.scaling, [flat[:, c] for c in range(len(channels))])
    return np.column_stack(back)


# ---------------------------------------------------------------------------
# five-fold cross-validation


@dataclass(frozen=True)
class CvReport:
    """Per-fold rows plus aggregation helpers; emitted as CSV by cli-io."""

    rows: tuple
    n_samples: int
    seed: int

    def mean_rows(self):
        """Per (method, k, channel) means over folds; fold field 'mean'."""
        groups = {}
        for r in self.rows:
            groups.setdefault((r["method"], r["k"], r["channel"]), []).append(r)
        out = []
        for (method, k, channel), rows in sorted(groups.items()):
            out.append(
                {
                    "method": method,
                    "fold": "mean",
                    "k": k,
                    "channel": channel,
                    "eps_rom": float(np.mean([r["eps_rom"] for r in rows])),
                    "eps_proj": float(np.mean([r["eps_proj"] for r in rows])),
                    "wall_time_s": float(np.sum([r["wall_time_s"] for r in rows])),
                    "epochs": float(np.mean([r["epochs"] for r in rows])),
                }
            )
        return out

    def mean_error(self, method, k, channel, which="eps_rom"):
        for row in self.mean_rows():
            if (row["method"], row["k"], row["channel"]) == (method, k, channel):
                return row[which]
        raise KeyError(f"no mean row for {(method, k, channel)}")


def canonical_order(params):
    """Deterministic sample order independent of input permutation."""
    params = np.asarray(params)
    return np.lexsort(params.T[::-1])  # lexicographic by column 0, then 1, ...


def fold_partitions(params, n_folds=5):
    """Strided fold assignment over canonically ordered samples.

    The holdout of each fold is split alternately into validation and test
    halves.  Returns a list of (train_idx, val_idx, test_idx).
    """
    params = np.asarray(params)
    n = params.shape[0]
    if n % n_folds:
        raise ValueError(f"sample count {n} not divisible by {n_folds} folds")
    if (n // n_folds) % 2:
        raise ValueError(
            f"holdout size {n // n_folds} must be even for the test/validation split"
        )
    order = canonical_order(params)
    folds = []
    for f in range(n_folds):
        holdout = order[f::n_folds]
        train = np.concatenate([order[g::n_folds] for g in range(n_folds) if g != f])
        folds.append((np.sort(train), np.sort(holdout[0::2]), np.sort(holdout[1::2])))
    return folds


def default_workers(limit=None):
    """Worker count from ROMFORGE_THREADS, defaulting to the CPU count."""
    env = os.environ.get("ROMFORGE_THREADS")
    workers = int(env) if env else (os.cpu_count() or 1)
    if limit is not None:
        workers = min(workers, limit)
    return max(1, workers)


def _evaluate_fold(args):
    """One fold of the CV: both surrogate families, all requested ranks."""
    (fold_id, U, V, params, train_idx, val_idx, test_idx, k_list, cae_k_list,
     tcfg, gcfg, grid, fold_seed) = args

    rows = []
    channels = {"u": U, "v": V}

    for k in k_list:
        t0 = time.perf_counter()
        per_channel = {}
        for ci, (name, block) in enumerate(channels.items()):
            train = SnapshotMatrix(block[:, train_idx], params[train_idx])
            per_channel[name] = pod_gpr_offline(
                train, k, gcfg, seed=seed_key(fold_seed, 100 + ci)
            )
        wall = time.perf_counter() - t0
        for name, surrogate in per_channel.items():
            errs_rom, errs_proj = [], []
            for idx in test_idx:
                x = channels[name][:, idx]
                errs_rom.append(rom_error(x, surrogate.predict(params[idx])))
                errs_proj.append(projection_error(x, surrogate.project(x)))
            rows.append(
                {
                    "method": "pod-gpr",
                    "fold": fold_id,
                    "k": k,
                    "channel": name,
                    "eps_rom": float(np.mean(errs_rom)),
                    "eps_proj": float(np.mean(errs_proj)),
                    "wall_time_s": wall,
                    "epochs": 0,
                }
            )

    for k in cae_k_list:
        surrogate = cae_gpr_offline(
            [U[:, train_idx], V[:, train_idx]],
            [U[:, val_idx], V[:, val_idx]],
            params[train_idx],
            grid,
            k,
            train_config=tcfg,
            gpr_config=gcfg,
            seed=seed_key(fold_seed, 200),
        )
        errs = {"u": ([], []), "v": ([], [])}
        for idx in test_idx:
            xu, xv = U[:, idx], V[:, idx]
            pred = surrogate.predict(params[idx])
            proj = surrogate.project([xu, xv])
            errs["u"][0].append(rom_error(xu, pred[:, 0]))
            errs["v"][0].append(rom_error(xv, pred[:, 1]))
            errs["u"][1].append(projection_error(xu, proj[:, 0]))
            errs["v"][1].append(projection_error(xv, proj[:, 1]))
        for name in ("u", "v"):
            rows.append(
                {
                    "method": "cae-gpr",
                    "fold": fold_id,
                    "k": k,
                    "channel": name,
                    "eps_rom": float(np.mean(errs[name][0])),
                    "eps_proj": float(np.mean(errs[name][1])),
                    "wall_time_s": surrogate.provenance["wall_time_s"],
                    "epochs": surrogate.provenance["epochs"],
                }
            )
    return fold_id, rows


def fold_jobs(snap_u, snap_v, k_list, cae_k_list=None, train_config=None,
              gpr_config=None, grid=None, seed=0):
    """Build the five independent fold-evaluation jobs for `run_fold_jobs`.

    Samples are put into canonical order up front, so the resulting report
    is exactly invariant under permutations of the input columns.
    """
    if snap_u.data.shape != snap_v.data.shape:
        raise ValueError("u and v snapshot blocks must share one shape")
    if not np.array_equal(snap_u.params, snap_v.params):
        raise ValueError("u and v snapshot blocks must share the design table")
    order = canonical_order(snap_u.params)
    U_data = snap_u.data[:, order]
    V_data = snap_v.data[:, order]
    params = snap_u.params[order]
    tcfg = train_config or CaeTrainConfig()
    gcfg = gpr_config or GprConfig()
    if cae_k_list is None:
        cae_k_list = list(k_list)
    if grid is None:
        side = int(round(np.sqrt(snap_u.n_states)))
        if side * side != snap_u.n_states:
            raise ValueError("non-square state; pass grid=(n_y, n_x) explicitly")
        grid = (side, side)

    folds = fold_partitions(params, 5)
    return [
        (f, U_data, V_data, params, train_idx, val_idx, test_idx,
         list(k_list), list(cae_k_list), tcfg, gcfg, tuple(grid), seed_key(seed, f))
        for f, (train_idx, val_idx, test_idx) in enumerate(folds)
    ]


def run_fold_jobs(jobs, workers=1):
    """Evaluate fold jobs, optionally over single-threaded worker processes.

    Returns {job index within `jobs`: row list}; results are independent of
    scheduling because every job carries its own derived seed.
    """
    results = {}
    if workers > 1:
        ctx = mp.get_context("spawn")
        prev = os.environ.get("OPENBLAS_NUM_THREADS")
        os.environ["OPENBLAS_NUM_THREADS"] = "1"  # children inherit at spawn
        try:
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                for pos, (_, rows) in enumerate(pool.map(_evaluate_fold, jobs)):
                    results[pos] = rows
        finally:
            if prev is None:
                os.environ.pop("OPENBLAS_NUM_THREADS", None)
            else:
                os.environ["OPENBLAS_NUM_THREADS"] = prev
    else:
        for pos, job in enumerate(jobs):
            _, rows = _evaluate_fold(job)
            results[pos] = rows
    return results


def five_fold_cv(snap_u, snap_v, k_list, cae_k_list=None, train_config=None,
                 gpr_config=None, grid=None, seed=0, workers=1):
    """Rotating 4/5-train, 1/10-validation, 1/10-test evaluation.

    POD-GPR gets an individual surrogate per channel and ignores the
    validation half; CAE-GPR trains one two-channel network per fold whose
    shared code predicts both channels.  ``cae_k_list`` defaults to
    ``k_list``.  Folds are independent and may run in parallel worker
    processes; fold seeds derive from (seed, fold) so the report does not
    depend on scheduling.
    """
    jobs = fold_jobs(
        snap_u, snap_v, k_list,
        cae_k_list=cae_k_list,
        train_config=train_config,
        gpr_config=gpr_config,
        grid=grid,
        seed=seed,
    )
    results = run_fold_jobs(jobs, workers=workers)
    rows = tuple(row for pos in range(len(jobs)) for row in results[pos])
    return CvReport(rows=rows, n_samples=snap_u.n_samples, seed=seed)
