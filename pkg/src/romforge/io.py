"""File formats: snapshot/surrogate binaries, run config, CSV reports, SVG plots.

Binary layouts are little-endian and fully canonical, so writing the same
object twice produces identical bytes.  Snapshot payloads are stored
column-major (a column is one sample's state, matching the math
orientation); all floats are 64-bit.
"""

import hashlib
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, fields

import numpy as np

from .errors import FormatError
from .gpr import GprModel, KernelSpec
from .nn import CaeNetwork, LayerSpec, Network, build_network
from .pipeline import (
    CaeGprSurrogate,
    CvReport,
    PodGprSurrogate,
    ScalingInfo,
)
from .pod import PodBasis

SNAPSHOT_MAGIC = b"ROMSNAP1"
SURROGATE_MAGIC = b"ROMSURR1"

__all__ = [
    "RunConfig",
    "write_snapshots",
    "read_snapshots",
    "write_surrogate",
    "read_surrogate",
    "write_design_table",
    "export_channel_csv",
    "import_channel_csv",
    "write_report_csv",
    "read_report_csv",
    "report_svg",
]


def _atomic_write(path, data):
    """Write bytes to a temp file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


# ---------------------------------------------------------------------------
# snapshot file


def write_snapshots(path, channels, params, grid=(0, 0)):
    """Serialize per-channel N x n blocks plus the design table.

    ``grid`` is (n_y, n_x); (0, 0) marks unstructured data (CAE paths
    reject such files).
    """
    channels = [np.asarray(ch, dtype="<f8") for ch in channels]
    params = np.asarray(params, dtype="<f8")
    if not channels:
        raise ValueError("need at least one channel")
    N, n = channels[0].shape
    for ch in channels:
        if ch.shape != (N, n):
            raise ValueError("all channels must share one N x n shape")
    if params.shape[0] != n:
        raise ValueError(f"design table rows {params.shape[0]} != sample count {n}")
    n_y, n_x = grid
    if n_y and n_x and n_y * n_x != N:
        raise ValueError(f"grid {grid} inconsistent with state length {N}")
    parts = [SNAPSHOT_MAGIC]
    parts.append(struct.pack("<6I", N, n, len(channels), params.shape[1], n_y, n_x))
    parts.append(params.tobytes(order="C"))
    for ch in channels:
        parts.append(ch.tobytes(order="F"))
    _atomic_write(path, b"".join(parts))


def read_snapshots(path):
    """Inverse of `write_snapshots`; returns (channels, params, grid)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != SNAPSHOT_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:8]!r}, expected {SNAPSHOT_MAGIC!r}")
    if len(blob) < 8 + 24:
        raise FormatError(f"{path}: truncated header")
    N, n, n_channels, p, n_y, n_x = struct.unpack_from("<6I", blob, 8)
    if n_y and n_x and n_y * n_x != N:
        raise FormatError(f"{path}: header grid {n_y}x{n_x} inconsistent with N={N}")
    expected = 8 + 24 + 8 * (n * p + n_channels * N * n)
    if len(blob) != expected:
        raise FormatError(f"{path}: payload length {len(blob)} != expected {expected}")
    offset = 32
    params = np.frombuffer(blob, dtype="<f8", count=n * p, offset=offset).reshape(n, p)
    offset += 8 * n * p
    channels = []
    for _ in range(n_channels):
        block = np.frombuffer(blob, dtype="<f8", count=N * n, offset=offset)
        channels.append(block.reshape((N, n), order="F").copy())
        offset += 8 * N * n
    return channels, params.copy(), (n_y, n_x)


# ---------------------------------------------------------------------------
# surrogate file

_KERNEL_CODES = {"matern": 0, "rbf": 1}
_KERNEL_NAMES = {v: k for k, v in _KERNEL_CODES.items()}


def _pack_array(arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes(order="C")


class _Reader:
    def __init__(self, blob, offset, path):
        self.blob = blob
        self.offset = offset
        self.path = path

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.blob):
            raise FormatError(f"{self.path}: truncated at byte {self.offset}")
        out = struct.unpack_from(fmt, self.blob, self.offset)
        self.offset += size
        return out

    def array(self):
        (ndim,) = self.unpack("<I")
        shape = self.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        size = 8 * count
        if self.offset + size > len(self.blob):
            raise FormatError(f"{self.path}: truncated array at byte {self.offset}")
        arr = np.frombuffer(self.blob, dtype="<f8", count=count, offset=self.offset)
        self.offset += size
        return arr.reshape(shape).copy() if shape else float(arr[0])

    def blob_chunk(self):
        (length,) = self.unpack("<I")
        if self.offset + length > len(self.blob):
            raise FormatError(f"{self.path}: truncated chunk at byte {self.offset}")
        out = self.blob[self.offset : self.offset + length]
        self.offset += length
        return out


def _pack_gpr(model):
    parts = [
        struct.pack(
            "<Iddd",
            _KERNEL_CODES[model.kernel.family],
            model.kernel.nu,
            model.kernel.length_scale,
            model.noise,
        ),
        struct.pack("<d", model.y_mean),
        _pack_array(model.z_mean),
        _pack_array(model.z_std),
        _pack_array(model.Z),
        _pack_array(model.alpha),
        _pack_array(model.chol),
    ]
    return b"".join(parts)


def _read_gpr(reader):
    code, nu, length_scale, noise = reader.unpack("<Iddd")
    (y_mean,) = reader.unpack("<d")
    z_mean = reader.array()
    z_std = reader.array()
    Z = reader.array()
    alpha = reader.array()
    chol = reader.array()
    kernel = KernelSpec(_KERNEL_NAMES[code], length_scale, nu)
    return GprModel(
        z_mean=np.atleast_1d(z_mean),
        z_std=np.atleast_1d(z_std),
        Z=np.atleast_2d(Z),
        y_mean=y_mean,
        alpha=np.atleast_1d(alpha),
        chol=np.atleast_2d(chol),
        kernel=kernel,
        noise=noise,
    )


def _spec_to_dict(spec):
    return {f.name: getattr(spec, f.name) for f in fields(LayerSpec)}


def write_surrogate(path, surrogate, config_digest=""):
    """Serialize a surrogate; same object -> identical bytes."""
    kind_code = {"pod-gpr": 1, "cae-gpr": 2}[surrogate.kind]
    seed = surrogate.provenance.get("seed", 0)
    manifest = {
        "kind": surrogate.kind,
        "k": surrogate.k,
        "seed": _seed_as_list(seed),
        "config_digest": config_digest,
        "epochs": int(surrogate.provenance.get("epochs", 0)),
    }
    parts = [SURROGATE_MAGIC, struct.pack("<I", kind_code)]
    body = []
    if surrogate.kind == "pod-gpr":
        body.append(_pack_array(surrogate.basis.vectors))
        body.append(_pack_array(surrogate.basis.singular_values))
        body.append(struct.pack("<I", len(surrogate.models)))
        for m in surrogate.models:
            body.append(_pack_gpr(m))
    else:
        manifest["grid"] = list(surrogate.grid)
        manifest["n_channels"] = surrogate.n_channels
        manifest["scaling_mode"] = surrogate.scaling.mode
        manifest["encoder_specs"] = [_spec_to_dict(s) for s in surrogate.network.encoder.specs]
        manifest["decoder_specs"] = [_spec_to_dict(s) for s in surrogate.network.decoder.specs]
        for c in range(surrogate.n_channels):
            body.append(_pack_array(np.atleast_1d(surrogate.scaling.mins[c])))
            body.append(_pack_array(np.atleast_1d(surrogate.scaling.maxs[c])))
        weights = surrogate.network.params()
        body.append(struct.pack("<I", len(weights)))
        for w in weights:
            body.append(_pack_array(w))
        body.append(struct.pack("<I", len(surrogate.models)))
        for m in surrogate.models:
            body.append(_pack_gpr(m))
    mblob = json.dumps(manifest, sort_keys=True).encode()
    parts.append(struct.pack("<I", len(mblob)))
    parts.append(mblob)
    parts.extend(body)
    _atomic_write(path, b"".join(parts))


def _seed_as_list(seed):
    if isinstance(seed, (tuple, list)):
        return [int(v) for v in seed]
    return [int(seed)]


def read_surrogate(path):
    """Inverse of `write_surrogate`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != SURROGATE_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:8]!r}, expected {SURROGATE_MAGIC!r}")
    reader = _Reader(blob, 8, path)
    (kind_code,) = reader.unpack("<I")
    manifest = json.loads(reader.blob_chunk().decode())
    seed = manifest.get("seed", [0])
    seed = tuple(seed) if len(seed) > 1 else seed[0]
    provenance = {
        "seed": seed,
        "config_digest": manifest.get("config_digest", ""),
        "epochs": manifest.get("epochs", 0),
    }
    if kind_code == 1:
        vectors = reader.array()
        sigma = reader.array()
        (n_models,) = reader.unpack("<I")
        models = tuple(_read_gpr(reader) for _ in range(n_models))
        return PodGprSurrogate(
            kind="pod-gpr",
            basis=PodBasis(np.atleast_2d(vectors), np.atleast_1d(sigma)),
            models=models,
            k=manifest["k"],
            provenance=provenance,
        )
    if kind_code != 2:
        raise FormatError(f"{path}: unknown surrogate kind {kind_code}")
    n_channels = manifest["n_channels"]
    mins, maxs = [], []
    for _ in range(n_channels):
        mins.append(np.atleast_1d(reader.array()))
        maxs.append(np.atleast_1d(reader.array()))
    mode = manifest["scaling_mode"]
    if mode == "global":
        mins = [float(m[0]) for m in mins]
        maxs = [float(m[0]) for m in maxs]
    scaling = ScalingInfo(tuple(mins), tuple(maxs), mode)
    enc_specs = [LayerSpec(**d) for d in manifest["encoder_specs"]]
    dec_specs = [LayerSpec(**d) for d in manifest["decoder_specs"]]
    encoder = build_network(enc_specs, 0)
    decoder = build_network(dec_specs, 0)
    net = CaeNetwork(encoder, decoder, manifest["k"])
    (n_weights,) = reader.unpack("<I")
    weights = [np.atleast_1d(reader.array()) for _ in range(n_weights)]
    net.set_weights([w.reshape(p.shape) for w, p in zip(weights, net.params())])
    (n_models,) = reader.unpack("<I")
    models = tuple(_read_gpr(reader) for _ in range(n_models))
    return CaeGprSurrogate(
        kind="cae-gpr",
        network=net,
        scaling=scaling,
        grid=tuple(manifest["grid"]),
        n_channels=n_channels,
        models=models,
        k=manifest["k"],
        provenance=provenance,
    )


# ---------------------------------------------------------------------------
# design table and channel CSV interchange


def write_design_table(path, params, names=None):
    """Whitespace table, one row per sample, '#'-prefixed header."""
    params = np.asarray(params, dtype=float)
    names = names or [f"mu{i + 1}" for i in range(params.shape[1])]
    lines = ["# " + " ".join(names)]
    for row in params:
        lines.append(" ".join(repr(float(v)) for v in row))
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


def read_design_table(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([float(v) for v in line.split()])
    if not rows:
        raise FormatError(f"{path}: no data rows")
    return np.asarray(rows)


def export_channel_csv(path, matrix, params):
    """One channel as CSV: meta line, p parameter rows, N data rows."""
    matrix = np.asarray(matrix, dtype=float)
    params = np.asarray(params, dtype=float)
    N, n = matrix.shape
    p = params.shape[1]
    lines = [f"romforge-csv,p={p},N={N},n={n}"]
    for j in range(p):
        lines.append(",".join(repr(float(v)) for v in params[:, j]))
    for i in range(N):
        lines.append(",".join(repr(float(v)) for v in matrix[i]))
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


def import_channel_csv(path):
    """Inverse of `export_channel_csv`; returns (matrix, params)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].startswith("romforge-csv"):
        raise FormatError(f"{path}: line 1: missing romforge-csv meta line")
    meta = dict(item.split("=") for item in lines[0].split(",")[1:])
    try:
        p, N, n = int(meta["p"]), int(meta["N"]), int(meta["n"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: line 1: bad meta line ({exc})") from None
    if len(lines) < 1 + p + N:
        raise FormatError(f"{path}: expected {1 + p + N} lines, found {len(lines)}")

    def parse(line_no):
        vals = lines[line_no].split(",")
        if len(vals) != n:
            raise FormatError(f"{path}: line {line_no + 1}: expected {n} values")
        try:
            return [float(v) for v in vals]
        except ValueError as exc:
            raise FormatError(f"{path}: line {line_no + 1}: {exc}") from None

    params = np.asarray([parse(1 + j) for j in range(p)]).T
    matrix = np.asarray([parse(1 + p + i) for i in range(N)])
    return matrix, params


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """Key=value run configuration with strict unknown-key checking."""

    grid_nx: int = 64
    grid_ny: int = 64
    lid_speed: float = 1.0
    solver_tol: float = 1e-6
    solver_max_iters: int = 50000
    bounds_lx: tuple = (1.0, 2.0)
    bounds_ly: tuple = (1.0, 2.0)
    bounds_re: tuple = (100.0, 400.0)
    n_samples: int = 100
    k_list: tuple = (5, 10, 15, 20)
    cae_k_list: tuple = ()  # empty -> same as k_list
    width_scale: float = 1.0
    max_epochs: int = 7500
    patience: int = 500
    batch_size: int = 8
    learning_rate: float = 3e-4
    alpha: float = 0.25
    kernel: str = "matern"
    nu: float = 2.5
    noise: float = 1e-10
    restarts: int = 8
    scaling_mode: str = "global"
    val_fraction: float = 0.1
    seed: int = 0
    workers: int = 0  # 0 -> ROMFORGE_THREADS or cpu count
    report_timings: bool = True
    out_dir: str = "out"

    _PARSERS = None  # filled below

    @classmethod
    def from_file(cls, path):
        cfg = cls()
        with open(path) as fh:
            for line_no, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{line_no}: expected key=value, got {raw.strip()!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                if key not in cls._PARSERS:
                    raise ValueError(f"{path}:{line_no}: unknown config key {key!r}")
                try:
                    setattr(cfg, key, cls._PARSERS[key](value))
                except ValueError as exc:
                    raise ValueError(f"{path}:{line_no}: bad value for {key}: {exc}") from None
        return cfg

    def dump(self):
        """Canonical text form (also what `digest` hashes)."""
        lines = []
        for f in fields(self):
            if f.name.startswith("_"):
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, bool):
                v = "on" if v else "off"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self):
        return hashlib.sha256(self.dump().encode()).hexdigest()

    def effective_workers(self, limit=None):
        from .pipeline import default_workers

        if self.workers > 0:
            return self.workers if limit is None else min(self.workers, limit)
        return default_workers(limit)


def _parse_bool(value):
    flags = {"on": True, "true": True, "1": True, "off": False, "false": False, "0": False}
    if value.lower() not in flags:
        raise ValueError(f"expected on/off, got {value!r}")
    return flags[value.lower()]


def _parse_pair(value):
    parts = [float(v) for v in value.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected 'low,high', got {value!r}")
    return tuple(parts)


def _parse_int_list(value):
    value = value.strip()
    return tuple(int(v) for v in value.split(",")) if value else ()


RunConfig._PARSERS = {
    "grid_nx": int,
    "grid_ny": int,
    "lid_speed": float,
    "solver_tol": float,
    "solver_max_iters": int,
    "bounds_lx": _parse_pair,
    "bounds_ly": _parse_pair,
    "bounds_re": _parse_pair,
    "n_samples": int,
    "k_list": _parse_int_list,
    "cae_k_list": _parse_int_list,
    "width_scale": float,
    "max_epochs": int,
    "patience": int,
    "batch_size": int,
    "learning_rate": float,
    "alpha": float,
    "kernel": str,
    "nu": float,
    "noise": float,
    "restarts": int,
    "scaling_mode": str,
    "val_fraction": float,
    "seed": int,
    "workers": int,
    "report_timings": _parse_bool,
    "out_dir": str,
}


# ---------------------------------------------------------------------------
# CV report CSV

REPORT_COLUMNS = (
    "method",
    "fold",
    "k",
    "channel",
    "eps_rom",
    "eps_proj",
    "rel_l2_rom",
    "rel_l2_proj",
    "wall_time_s",
    "epochs",
)


def write_report_csv(path, report, include_timings=True):
    """Per-fold rows plus 'mean' rows; eps_* are the squared-relative
    errors, rel_l2_* their square roots (both forms appear in the
    literature, so both are emitted, clearly labeled)."""
    lines = [",".join(REPORT_COLUMNS)]
    for row in list(report.rows) + report.mean_rows():
        wall = repr(float(row["wall_time_s"])) if include_timings else ""
        lines.append(
            ",".join(
                [
                    row["method"],
                    str(row["fold"]),
                    str(row["k"]),
                    row["channel"],
                    repr(float(row["eps_rom"])),
                    repr(float(row["eps_proj"])),
                    repr(math.sqrt(float(row["eps_rom"]))),
                    repr(math.sqrt(float(row["eps_proj"]))),
                    wall,
                    str(int(row["epochs"])) if row["fold"] != "mean" else repr(float(row["epochs"])),
                ]
            )
        )
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


def read_report_csv(path):
    """Rows of the report CSV as dicts (strings preserved for fold)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty report")
    header = tuple(lines[0].split(","))
    if header != REPORT_COLUMNS:
        raise FormatError(f"{path}: line 1: unexpected columns {header}")
    rows = []
    for line_no, line in enumerate(lines[1:], 2):
        vals = line.split(",")
        if len(vals) != len(REPORT_COLUMNS):
            raise FormatError(
                f"{path}: line {line_no}: expected {len(REPORT_COLUMNS)} fields, got {len(vals)}"
            )
        row = dict(zip(REPORT_COLUMNS, vals))
        try:
            row["k"] = int(row["k"])
            for key in ("eps_rom", "eps_proj", "rel_l2_rom", "rel_l2_proj"):
                row[key] = float(row[key])
        except ValueError as exc:
            raise FormatError(f"{path}: line {line_no}: {exc}") from None
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# SVG error plots


def _log_ticks(lo, hi):
    start = math.floor(math.log10(lo))
    stop = math.ceil(math.log10(hi))
    return [10.0**e for e in range(start, stop + 1)]


_SERIES_STYLE = {
    ("pod-gpr", "eps_rom"): ("#1f77b4", "4,0"),
    ("pod-gpr", "eps_proj"): ("#1f77b4", "5,4"),
    ("cae-gpr", "eps_rom"): ("#d62728", "4,0"),
    ("cae-gpr", "eps_proj"): ("#d62728", "5,4"),
}


def report_svg(rows, channel, width=640, height=480):
    """Error-vs-k curves (log y) for one channel as an SVG string.

    Plots the mean rows of both methods: solid for prediction error,
    dashed for projection error.
    """
    series = {}
    for row in rows:
        if row["channel"] != channel or str(row["fold"]) != "mean":
            continue
        for metric in ("eps_rom", "eps_proj"):
            series.setdefault((row["method"], metric), []).append((row["k"], row[metric]))
    if not series:
        raise FormatError(f"no mean rows for channel {channel!r}")

    values = [v for pts in series.values() for _, v in pts if v > 0]
    ks = [k for pts in series.values() for k, _ in pts]
    lo, hi = min(values), max(values)
    if lo == hi:
        lo, hi = lo / 10, hi * 10
    k_lo, k_hi = min(ks), max(ks)
    if k_lo == k_hi:
        k_lo, k_hi = k_lo - 1, k_hi + 1
    mleft, mright, mtop, mbot = 70, 20, 30, 50
    pw, ph = width - mleft - mright, height - mtop - mbot

    def xpix(k):
        return mleft + pw * (k - k_lo) / (k_hi - k_lo)

    def ypix(v):
        span = math.log10(hi) - math.log10(lo)
        return mtop + ph * (1 - (math.log10(v) - math.log10(lo)) / span)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="{mleft}" y="{mtop}" width="{pw}" height="{ph}" fill="none" '
        'stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 10}" text-anchor="middle" '
        f'font-size="14">ROM dimension k ({channel})</text>',
    ]
    for tick in _log_ticks(lo, hi):
        if tick < lo / 1.0001 or tick > hi * 1.0001:
            continue
        y = ypix(min(max(tick, lo), hi))
        exp = int(round(math.log10(tick)))
        parts.append(
            f'<line x1="{mleft - 5}" y1="{y:.2f}" x2="{mleft}" y2="{y:.2f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{mleft - 8}" y="{y + 4:.2f}" text-anchor="end" font-size="12">'
            f"1e{exp}</text>"
        )
    for k in sorted(set(ks)):
        x = xpix(k)
        parts.append(
            f'<line x1="{x:.2f}" y1="{mtop + ph}" x2="{x:.2f}" y2="{mtop + ph + 5}" '
            'stroke="black"/>'
        )
        parts.append(
            f'<text x="{x:.2f}" y="{mtop + ph + 20}" text-anchor="middle" '
            f'font-size="12">{k}</text>'
        )
    legend_y = mtop + 16
    for (method, metric), pts in sorted(series.items()):
        pts = sorted(pts)
        color, dash = _SERIES_STYLE.get((method, metric), ("#2ca02c", "4,0"))
        coords = " ".join(f"{xpix(k):.2f},{ypix(max(v, lo)):.2f}" for k, v in pts)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="1.5" stroke-dasharray="{dash}"/>'
        )
        parts.append(
            f'<text x="{mleft + pw - 6}" y="{legend_y}" text-anchor="end" '
            f'font-size="12" fill="{color}">{method} {metric}</text>'
        )
        legend_y += 16
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
