"""Command line driving the offline/online workflow.

Subcommands: generate, train, predict, evaluate, plot.  Exit codes:
0 success, 2 argument/configuration error, 3 file-format error,
4 solver non-convergence, 5 training failure, 1 other I/O failure.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import io as rio
from .cavity import ParameterSpace, generate_snapshots
from .errors import (
    ConvergenceError,
    DataError,
    FormatError,
    IllConditionedKernelError,
    TrainingError,
)
from .pipeline import (
    CaeTrainConfig,
    GprConfig,
    cae_gpr_offline,
    five_fold_cv,
    pod_gpr_offline,
)
from .pod import SnapshotMatrix

__all__ = ["main"]

EXIT_ARGUMENT = 2
EXIT_FORMAT = 3
EXIT_CONVERGENCE = 4
EXIT_TRAINING = 5
EXIT_IO = 1


def _load_config(args):
    cfg = rio.RunConfig.from_file(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _train_config(cfg):
    return CaeTrainConfig(
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        max_epochs=cfg.max_epochs,
        patience=cfg.patience,
        width_scale=cfg.width_scale,
        alpha=cfg.alpha,
    )


def _gpr_config(cfg):
    return GprConfig(kernel=cfg.kernel, nu=cfg.nu, noise=cfg.noise, restarts=cfg.restarts)


def cmd_generate(args):
    cfg = _load_config(args)
    space = ParameterSpace((cfg.bounds_lx, cfg.bounds_ly, cfg.bounds_re))
    out = args.out or os.path.join(cfg.out_dir, "snapshots.snap")

    def progress(index, iterations, residual):
        print(f"solve {index:4d}: {iterations:6d} iterations, residual {residual:.3e}")

    snap_u, snap_v, design = generate_snapshots(
        space,
        cfg.n_samples,
        cfg.seed,
        grid=(cfg.grid_nx, cfg.grid_ny),
        lid_speed=cfg.lid_speed,
        tol=cfg.solver_tol,
        max_iters=cfg.solver_max_iters,
        workers=cfg.effective_workers(cfg.n_samples),
        allow_partial=args.allow_partial,
        progress=progress,
    )
    rio.write_snapshots(out, [snap_u.data, snap_v.data], design, (cfg.grid_ny, cfg.grid_nx))
    table = os.path.splitext(out)[0] + "-design.txt"
    rio.write_design_table(table, design, ["Lx", "Ly", "Re"])
    print(f"wrote {design.shape[0]} snapshots to {out} (design table {table})")
    return 0


def _channel_path(path, channel):
    stem, ext = os.path.splitext(path)
    return f"{stem}-{channel}{ext}"


def _val_split(n, fraction, seed):
    """Deterministic train/validation index split for cmd_train."""
    n_val = max(1, round(n * fraction))
    if n_val >= n:
        raise ValueError(f"validation fraction {fraction} leaves no training samples")
    perm = np.random.default_rng((seed, 424242)).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def cmd_train(args):
    cfg = _load_config(args)
    channels, params, grid = rio.read_snapshots(args.data)
    k_values = args.k or (cfg.k_list[:1] if cfg.k_list else (5,))
    if len(k_values) != 1:
        raise ValueError(f"train builds one surrogate; pass a single k, got {list(k_values)}")
    k = int(k_values[0])
    out = args.out or os.path.join(cfg.out_dir, f"{args.method}.surr")
    digest = cfg.digest()
    gcfg = _gpr_config(cfg)

    t0 = time.perf_counter()
    if args.method == "pod-gpr":
        if k > params.shape[0]:
            raise ValueError(f"k={k} exceeds the {params.shape[0]} training samples")
        names = ["u", "v"] if len(channels) == 2 else [str(i) for i in range(len(channels))]
        outputs = []
        for ci, block in enumerate(channels):
            surrogate = pod_gpr_offline(
                SnapshotMatrix(block, params), k, gcfg, seed=(cfg.seed, ci)
            )
            path = _channel_path(out, names[ci]) if len(channels) > 1 else out
            rio.write_surrogate(path, surrogate, digest)
            outputs.append(path)
        epochs = 0
    else:
        if grid == (0, 0):
            raise ValueError("snapshot file is unstructured (grid 0x0); cae-gpr needs gridded data")
        train_idx, val_idx = _val_split(params.shape[0], cfg.val_fraction, cfg.seed)
        surrogate = cae_gpr_offline(
            [ch[:, train_idx] for ch in channels],
            [ch[:, val_idx] for ch in channels],
            params[train_idx],
            grid,
            k,
            train_config=_train_config(cfg),
            gpr_config=gcfg,
            seed=cfg.seed,
        )
        rio.write_surrogate(out, surrogate, digest)
        outputs = [out]
        epochs = surrogate.provenance["epochs"]
    wall = time.perf_counter() - t0

    meta = {"method": args.method, "k": k, "wall_time_s": wall, "epochs": epochs}
    with open(out + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    for path in outputs:
        print(f"wrote {path}")
    print(f"training wall time {wall:.2f} s, epochs {epochs}")
    return 0


def cmd_predict(args):
    surrogate = rio.read_surrogate(args.surrogate)
    if args.mu:
        queries = np.asarray([[float(v) for v in q.split(",")] for q in args.mu])
    elif args.design:
        queries = rio.read_design_table(args.design)
    else:
        raise ValueError("pass query points via --mu or --design")
    print(f"surrogate kind {surrogate.kind}, k={surrogate.k}, {queries.shape[0]} queries")

    preds = [surrogate.predict(mu) for mu in queries]
    if surrogate.kind == "pod-gpr":
        channels = [np.column_stack(preds)]
        grid = (0, 0)
    else:
        channels = [
            np.column_stack([p[:, c] for p in preds]) for c in range(surrogate.n_channels)
        ]
        grid = surrogate.grid
    out = args.out or "predictions.snap"
    rio.write_snapshots(out, channels, queries, grid)
    print(f"wrote {out}")
    return 0


def cmd_evaluate(args):
    cfg = _load_config(args)
    channels, params, grid = rio.read_snapshots(args.data)
    if len(channels) != 2:
        raise ValueError(f"evaluate expects a two-channel (u, v) dataset, got {len(channels)}")
    if grid == (0, 0):
        raise ValueError("snapshot file is unstructured (grid 0x0); evaluation needs gridded data")
    k_list = tuple(args.k) if args.k else cfg.k_list
    cae_k_list = cfg.cae_k_list or k_list
    report = five_fold_cv(
        SnapshotMatrix(channels[0], params),
        SnapshotMatrix(channels[1], params),
        k_list,
        cae_k_list=cae_k_list,
        train_config=_train_config(cfg),
        gpr_config=_gpr_config(cfg),
        grid=grid,
        seed=cfg.seed,
        workers=cfg.effective_workers(5),
    )
    out = args.out or os.path.join(cfg.out_dir, "cv-report.csv")
    rio.write_report_csv(out, report, include_timings=cfg.report_timings)
    print(f"wrote {out} ({len(report.rows)} fold rows)")
    return 0


def cmd_plot(args):
    rows = rio.read_report_csv(args.report)
    out_dir = args.out or os.path.dirname(os.path.abspath(args.report))
    os.makedirs(out_dir, exist_ok=True)
    channels = sorted({r["channel"] for r in rows})
    series_lines = ["channel,method,metric,k,value"]
    for channel in channels:
        svg = rio.report_svg(rows, channel)
        path = os.path.join(out_dir, f"errors-{channel}.svg")
        with open(path, "w") as fh:
            fh.write(svg)
        print(f"wrote {path}")
        for row in rows:
            if row["channel"] == channel and row["fold"] == "mean":
                for metric in ("eps_rom", "eps_proj"):
                    series_lines.append(
                        f"{channel},{row['method']},{metric},{row['k']},{row[metric]!r}"
                    )
    companion = os.path.join(out_dir, "errors-series.csv")
    with open(companion, "w") as fh:
        fh.write("\n".join(series_lines) + "\n")
    print(f"wrote {companion}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="romforge",
        description="Non-intrusive reduced-order models (POD-GPR / CAE-GPR) "
        "for steady parameterized PDE fields.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="key=value run configuration")
            p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output path")

    p = sub.add_parser("generate", help="sample designs and solve the cavity FOM")
    add_common(p)
    p.add_argument("--allow-partial", action="store_true",
                   help="keep the dataset when some solves fail")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="build a surrogate from a snapshot file")
    add_common(p)
    p.add_argument("--method", required=True, choices=("pod-gpr", "cae-gpr"))
    p.add_argument("--data", required=True, help="snapshot file from 'generate'")
    p.add_argument("--k", type=lambda s: tuple(int(v) for v in s.split(",")),
                   default=None, help="ROM dimension")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="evaluate a surrogate at new design points")
    add_common(p, config=False)
    p.add_argument("--surrogate", required=True)
    p.add_argument("--mu", action="append", default=None,
                   help="comma-separated parameter vector (repeatable)")
    p.add_argument("--design", default=None, help="design-table file of query points")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="five-fold cross-validation of both methods")
    add_common(p)
    p.add_argument("--data", required=True, help="snapshot file from 'generate'")
    p.add_argument("--k", type=lambda s: tuple(int(v) for v in s.split(",")),
                   default=None, help="ROM dimensions to sweep")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="SVG error curves from a CV report")
    add_common(p, config=False)
    p.add_argument("--report", required=True, help="CSV from 'evaluate'")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, TypeError, DataError) as exc:
        print(f"argument error: {exc}", file=sys.stderr)
        return EXIT_ARGUMENT
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (TrainingError, IllConditionedKernelError) as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
