import json
import os

import numpy as np
import pytest

import romforge.io as rio
from romforge.cli import main
from romforge.errors import FormatError
from romforge.pipeline import CaeTrainConfig, cae_gpr_offline, pod_gpr_offline
from romforge.pod import SnapshotMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(0)


class TestSnapshotFile:
    def test_round_trip_bitwise(self, tmp_path, rng):
        U, V = rng.standard_normal((64, 5)), rng.standard_normal((64, 5))
        params = rng.uniform(0, 1, (5, 3))
        path = tmp_path / "a.snap"
        rio.write_snapshots(path, [U, V], params, (8, 8))
        channels, pr, grid = rio.read_snapshots(path)
        assert np.array_equal(channels[0], U) and np.array_equal(channels[1], V)
        assert np.array_equal(pr, params) and grid == (8, 8)
        path2 = tmp_path / "b.snap"
        rio.write_snapshots(path2, channels, pr, grid)
        assert path.read_bytes() == path2.read_bytes()

    def test_unstructured_marker(self, tmp_path, rng):
        path = tmp_path / "u.snap"
        rio.write_snapshots(path, [rng.standard_normal((10, 2))], np.zeros((2, 1)), (0, 0))
        _, _, grid = rio.read_snapshots(path)
        assert grid == (0, 0)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.snap"
        path.write_bytes(b"NOTSNAP!" + b"\0" * 64)
        with pytest.raises(FormatError, match="magic"):
            rio.read_snapshots(path)

    def test_truncated_payload(self, tmp_path, rng):
        path = tmp_path / "c.snap"
        rio.write_snapshots(path, [rng.standard_normal((4, 2))], np.zeros((2, 1)), (2, 2))
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(FormatError, match="length"):
            rio.read_snapshots(path)

    def test_grid_consistency_checked(self, tmp_path, rng):
        with pytest.raises(ValueError, match="grid"):
            rio.write_snapshots(
                tmp_path / "d.snap", [rng.standard_normal((10, 2))], np.zeros((2, 1)), (3, 3)
            )


class TestSurrogateFile:
    def test_pod_round_trip(self, tmp_path, rng):
        U = rng.standard_normal((40, 8))
        params = rng.uniform(0, 1, (8, 2))
        sur = pod_gpr_offline(SnapshotMatrix(U, params), 3, seed=4)
        path = tmp_path / "pod.surr"
        rio.write_surrogate(path, sur, "digest123")
        loaded = rio.read_surrogate(path)
        mu = params[2]
        assert np.array_equal(sur.predict(mu), loaded.predict(mu))
        assert loaded.provenance["config_digest"] == "digest123"
        path2 = tmp_path / "pod2.surr"
        rio.write_surrogate(path2, loaded, "digest123")
        assert path.read_bytes() == path2.read_bytes()

    def test_cae_round_trip(self, tmp_path, rng):
        U, V = rng.standard_normal((64, 8)), rng.standard_normal((64, 8))
        params = rng.uniform(0, 1, (8, 2))
        cfg = CaeTrainConfig(max_epochs=10, patience=10, width_scale=0.25)
        sur = cae_gpr_offline(
            [U, V], [U[:, :2], V[:, :2]], params, (8, 8), 2, train_config=cfg, seed=1
        )
        path = tmp_path / "cae.surr"
        rio.write_surrogate(path, sur, "z")
        loaded = rio.read_surrogate(path)
        mu = params[0]
        assert np.array_equal(sur.predict(mu), loaded.predict(mu))
        proj_a = sur.project([U[:, 1], V[:, 1]])
        proj_b = loaded.project([U[:, 1], V[:, 1]])
        assert np.array_equal(proj_a, proj_b)
        path2 = tmp_path / "cae2.surr"
        rio.write_surrogate(path2, loaded, "z")
        assert path.read_bytes() == path2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.surr"
        path.write_bytes(b"WRONGMAG" + b"\0" * 32)
        with pytest.raises(FormatError, match="magic"):
            rio.read_surrogate(path)


class TestTablesAndCsv:
    def test_design_table_round_trip(self, tmp_path, rng):
        params = rng.uniform(0, 2, (6, 3))
        path = tmp_path / "design.txt"
        rio.write_design_table(path, params, ["Lx", "Ly", "Re"])
        assert path.read_text().startswith("# Lx Ly Re")
        assert np.array_equal(rio.read_design_table(path), params)

    def test_channel_csv_round_trip(self, tmp_path, rng):
        matrix = rng.standard_normal((12, 4))
        params = rng.uniform(0, 1, (4, 3))
        path = tmp_path / "u.csv"
        rio.export_channel_csv(path, matrix, params)
        m2, p2 = rio.import_channel_csv(path)
        assert np.array_equal(m2, matrix) and np.array_equal(p2, params)

    def test_channel_csv_errors_carry_line_numbers(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("romforge-csv,p=1,N=2,n=2\n0.1,0.2\n1.0,oops\n2.0,3.0\n")
        with pytest.raises(FormatError, match="line 3"):
            rio.import_channel_csv(path)

    def test_missing_meta_line(self, tmp_path):
        path = tmp_path / "bad2.csv"
        path.write_text("1,2,3\n")
        with pytest.raises(FormatError, match="line 1"):
            rio.import_channel_csv(path)


class TestRunConfig:
    def test_defaults_prefilled(self):
        cfg = rio.RunConfig()
        assert cfg.learning_rate == pytest.approx(3e-4)
        assert cfg.batch_size == 8
        assert cfg.max_epochs == 7500
        assert cfg.patience == 500
        assert cfg.alpha == 0.25
        assert cfg.kernel == "matern" and cfg.nu == 2.5

    def test_file_overrides_and_comments(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("n_samples = 10  # tiny run\nseed=3\nk_list=2,4\nreport_timings=off\n")
        cfg = rio.RunConfig.from_file(path)
        assert cfg.n_samples == 10 and cfg.seed == 3
        assert cfg.k_list == (2, 4) and cfg.report_timings is False

    def test_unknown_key_rejected_with_location(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("n_samples = 10\nbogus = 1\n")
        with pytest.raises(ValueError, match=r"run\.cfg:2.*bogus"):
            rio.RunConfig.from_file(path)

    def test_digest_stable(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("seed = 9\n")
        assert rio.RunConfig.from_file(path).digest() == rio.RunConfig.from_file(path).digest()
        assert rio.RunConfig.from_file(path).digest() != rio.RunConfig().digest()


def make_report():
    from romforge.pipeline import CvReport

    rows = []
    for method, base in (("pod-gpr", 1e-3), ("cae-gpr", 5e-4)):
        for fold in range(5):
            for k in (2, 4):
                for channel in ("u", "v"):
                    rows.append(
                        {
                            "method": method,
                            "fold": fold,
                            "k": k,
                            "channel": channel,
                            "eps_rom": base * (1 + 0.1 * fold) / k,
                            "eps_proj": base * 0.5 / k,
                            "wall_time_s": 1.0,
                            "epochs": 10,
                        }
                    )
    return CvReport(rows=tuple(rows), n_samples=10, seed=0)


class TestReportCsv:
    def test_schema_and_round_trip(self, tmp_path):
        report = make_report()
        path = tmp_path / "report.csv"
        rio.write_report_csv(path, report)
        header = path.read_text().splitlines()[0]
        assert header == ",".join(rio.REPORT_COLUMNS)
        rows = rio.read_report_csv(path)
        mean_rows = [r for r in rows if r["fold"] == "mean"]
        assert len(mean_rows) == 8  # 2 methods x 2 k x 2 channels
        for r in rows:
            assert r["rel_l2_rom"] == pytest.approx(np.sqrt(r["eps_rom"]))

    def test_timings_can_be_omitted(self, tmp_path):
        path = tmp_path / "r.csv"
        rio.write_report_csv(path, make_report(), include_timings=False)
        rows = rio.read_report_csv(path)
        assert all(r["wall_time_s"] == "" for r in rows)

    def test_malformed_row_names_line(self, tmp_path):
        path = tmp_path / "r.csv"
        rio.write_report_csv(path, make_report())
        lines = path.read_text().splitlines()
        lines[3] = "not,enough,fields"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatError, match="line 4"):
            rio.read_report_csv(path)

    def test_empty_report_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(FormatError):
            rio.read_report_csv(path)


class TestSvg:
    def test_four_polylines_per_channel(self, tmp_path):
        report = make_report()
        path = tmp_path / "report.csv"
        rio.write_report_csv(path, report)
        rows = rio.read_report_csv(path)
        svg = rio.report_svg(rows, "u")
        assert svg.count("<polyline") == 4  # 2 methods x (rom, proj)
        assert "1e-" in svg  # log ticks at powers of ten
        assert "ROM dimension k" in svg

    def test_no_mean_rows_rejected(self):
        with pytest.raises(FormatError):
            rio.report_svg([], "u")


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Tiny end-to-end workspace: 10 snapshots on a 16x16 grid."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.cfg"
    cfg.write_text(
        "\n".join(
            [
                "grid_nx = 16",
                "grid_ny = 16",
                "n_samples = 10",
                "k_list = 2",
                "width_scale = 0.25",
                "max_epochs = 25",
                "patience = 25",
                "seed = 0",
                "workers = 1",
                "report_timings = off",
                f"out_dir = {root / 'out'}",
            ]
        )
        + "\n"
    )
    return root


class TestCli:
    def test_generate_is_deterministic(self, workdir, capsys):
        cfg = str(workdir / "run.cfg")
        out1, out2 = str(workdir / "s1.snap"), str(workdir / "s2.snap")
        assert main(["generate", "--config", cfg, "--out", out1]) == 0
        assert main(["generate", "--config", cfg, "--out", out2]) == 0
        assert open(out1, "rb").read() == open(out2, "rb").read()
        channels, params, grid = rio.read_snapshots(out1)
        assert len(channels) == 2 and channels[0].shape == (256, 10) and grid == (16, 16)
        assert os.path.exists(str(workdir / "s1-design.txt"))
        assert "solve" in capsys.readouterr().out

    def test_train_predict_pod(self, workdir):
        cfg = str(workdir / "run.cfg")
        data = str(workdir / "s1.snap")
        out = str(workdir / "pod.surr")
        assert main(["train", "--config", cfg, "--method", "pod-gpr",
                     "--data", data, "--out", out]) == 0
        for suffix in ("u", "v"):
            assert os.path.exists(str(workdir / f"pod-{suffix}.surr"))
        # predict at a training point reproduces the projected snapshot
        channels, params, _ = rio.read_snapshots(data)
        sur = rio.read_surrogate(str(workdir / "pod-u.surr"))
        mu = ",".join(str(v) for v in params[0])
        pred_path = str(workdir / "pred.snap")
        assert main(["predict", "--surrogate", str(workdir / "pod-u.surr"),
                     "--mu", mu, "--out", pred_path]) == 0
        pred_channels, _, _ = rio.read_snapshots(pred_path)
        proj = sur.project(channels[0][:, 0])
        rel = np.linalg.norm(pred_channels[0][:, 0] - proj) / np.linalg.norm(proj)
        assert rel <= 1e-6

    def test_train_cae_and_batch_predict(self, workdir):
        cfg = str(workdir / "run.cfg")
        data = str(workdir / "s1.snap")
        out = str(workdir / "cae.surr")
        assert main(["train", "--config", cfg, "--method", "cae-gpr",
                     "--data", data, "--out", out]) == 0
        assert os.path.exists(out) and os.path.exists(out + ".meta.json")
        meta = json.load(open(out + ".meta.json"))
        assert meta["epochs"] > 0
        design = str(workdir / "s1-design.txt")
        pred_path = str(workdir / "pred-cae.snap")
        assert main(["predict", "--surrogate", out, "--design", design,
                     "--out", pred_path]) == 0
        channels, params, grid = rio.read_snapshots(pred_path)
        assert len(channels) == 2 and channels[0].shape == (256, 10)

    def test_evaluate_and_plot(self, workdir):
        cfg = str(workdir / "run.cfg")
        data = str(workdir / "s1.snap")
        report = str(workdir / "cv.csv")
        assert main(["evaluate", "--config", cfg, "--data", data, "--out", report]) == 0
        rows = rio.read_report_csv(report)
        assert {r["method"] for r in rows} == {"pod-gpr", "cae-gpr"}
        plot_dir = str(workdir / "plots")
        assert main(["plot", "--report", report, "--out", plot_dir]) == 0
        assert os.path.exists(os.path.join(plot_dir, "errors-u.svg"))
        assert os.path.exists(os.path.join(plot_dir, "errors-v.svg"))
        assert os.path.exists(os.path.join(plot_dir, "errors-series.csv"))

    def test_evaluate_deterministic_csv(self, workdir):
        cfg = str(workdir / "run.cfg")
        data = str(workdir / "s1.snap")
        r1, r2 = str(workdir / "cv1.csv"), str(workdir / "cv2.csv")
        assert main(["evaluate", "--config", cfg, "--data", data, "--out", r1]) == 0
        assert main(["evaluate", "--config", cfg, "--data", data, "--out", r2]) == 0
        assert open(r1, "rb").read() == open(r2, "rb").read()

    def test_exit_codes(self, workdir, capsys):
        cfg = str(workdir / "run.cfg")
        # format error: not a snapshot file
        bogus = str(workdir / "bogus.snap")
        open(bogus, "wb").write(b"garbage!")
        assert main(["train", "--config", cfg, "--method", "pod-gpr", "--data", bogus]) == 3
        # argument error: wrong parameter dimension in predict
        assert main(["predict", "--surrogate", str(workdir / "pod-u.surr"),
                     "--mu", "1.0,2.0"]) == 2
        # argument error: cae on unstructured data
        unstructured = str(workdir / "unstructured.snap")
        rng = np.random.default_rng(0)
        rio.write_snapshots(unstructured, [rng.random((9, 10)), rng.random((9, 10))],
                            rng.random((10, 3)), (0, 0))
        assert main(["train", "--config", cfg, "--method", "cae-gpr",
                     "--data", unstructured]) == 2
        # argument error: k exceeding the training sample count
        assert main(["train", "--config", cfg, "--method", "pod-gpr",
                     "--data", str(workdir / "s1.snap"), "--k", "999"]) == 2
        # i/o error: missing file
        assert main(["plot", "--report", str(workdir / "missing.csv")]) == 1
        capsys.readouterr()

    def test_unknown_config_key_is_argument_error(self, workdir, capsys):
        bad = workdir / "bad.cfg"
        bad.write_text("frobnicate = 1\n")
        assert main(["generate", "--config", str(bad)]) == 2
        assert "frobnicate" in capsys.readouterr().err


class TestExternalFourParameterData:
    """External FOM data with four design parameters enters via channel CSVs;
    the surrogate pipeline is dimension-agnostic."""

    def test_csv_import_to_surrogate(self, tmp_path):
        rng = np.random.default_rng(2)
        n, N = 12, 64
        params = rng.uniform(0, 1, (n, 4))
        base = rng.standard_normal((N, 3))
        U = base @ np.column_stack(
            [np.sin(params @ [1, 2, 0, 1]), params @ [1, -1, 2, 0], params[:, 3]]
        ).T
        csv_path = tmp_path / "external-u.csv"
        rio.export_channel_csv(csv_path, U, params)

        matrix, design = rio.import_channel_csv(csv_path)
        assert design.shape == (12, 4)
        snap_path = tmp_path / "external.snap"
        rio.write_snapshots(snap_path, [matrix], design, (8, 8))

        channels, loaded_params, grid = rio.read_snapshots(snap_path)
        sur = pod_gpr_offline(SnapshotMatrix(channels[0], loaded_params), 3, seed=0)
        pred = sur.predict(loaded_params[4])
        rel = np.linalg.norm(pred - U[:, 4]) / np.linalg.norm(U[:, 4])
        assert rel <= 1e-6  # rank-3 data, exact basis + interpolating GPR
