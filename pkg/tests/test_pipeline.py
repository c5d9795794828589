import numpy as np
import pytest

from romforge.pipeline import (
    CaeTrainConfig,
    GprConfig,
    cae_gpr_offline,
    canonical_order,
    five_fold_cv,
    fold_partitions,
    inverse_reshape,
    minmax_fit,
    minmax_fit_transform,
    minmax_inverse,
    minmax_transform,
    pod_gpr_offline,
    pod_gpr_online,
    project_cae,
    projection_error,
    reshape_to_grid,
    rom_error,
    snapshots_to_tensor,
    train_cae,
)
from romforge.pod import SnapshotMatrix

MICRO_CFG = CaeTrainConfig(max_epochs=60, patience=60, width_scale=0.25)


def synthetic_dataset(n=20, ny=8, nx=8, seed=0):
    """Smooth two-channel fields driven by two parameters."""
    rng = np.random.default_rng(seed)
    params = rng.uniform(0.0, 1.0, (n, 2))
    yy, xx = np.meshgrid(np.linspace(0, 1, ny), np.linspace(0, 1, nx), indexing="ij")
    U = np.column_stack(
        [(np.sin(np.pi * xx * (1 + p[0])) * np.cos(np.pi * yy * (1 + p[1]))).ravel() for p in params]
    )
    V = np.column_stack(
        [(np.cos(np.pi * xx * (1 + p[0])) * np.sin(np.pi * yy * (1 + p[1]))).ravel() for p in params]
    )
    return U, V, params


class TestReshape:
    def test_row_major_layout(self):
        grid = reshape_to_grid(np.array([1.0, 2.0, 3.0, 4.0]), 2, 2)
        assert grid.shape == (2, 2, 1)
        assert np.array_equal(grid[:, :, 0], [[1, 2], [3, 4]])

    def test_round_trip_bitwise(self):
        x = np.random.default_rng(0).standard_normal((64, 2))
        assert np.array_equal(inverse_reshape(reshape_to_grid(x, 8, 8)), x)

    def test_reference_dimensions(self):
        x = np.zeros((4096, 2))
        assert reshape_to_grid(x, 64, 64).shape == (64, 64, 2)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            reshape_to_grid(np.zeros(10), 3, 3)

    def test_tensor_stacking_matches_columns(self):
        U, V, _ = synthetic_dataset(5)
        X = snapshots_to_tensor([U, V], 8, 8)
        assert X.shape == (5, 8, 8, 2)
        assert np.array_equal(X[3, :, :, 0].ravel(), U[:, 3])
        assert np.array_equal(X[2, :, :, 1].ravel(), V[:, 2])


class TestMinMax:
    def test_unit_interval(self):
        scaled, info = minmax_fit_transform([np.array([[1.0], [3.0]])])
        assert np.allclose(scaled[0].ravel(), [0.0, 1.0])

    def test_constant_feature_collapses_to_zero(self):
        scaled, info = minmax_fit_transform([np.full((3, 2), 2.0)], mode="per_feature")
        assert np.all(scaled[0] == 0.0)
        assert np.all(np.asarray(info.span(0)) == 1.0)

    def test_round_trip_against_recomputation(self):
        rng = np.random.default_rng(1)
        channels = [rng.uniform(-3, 5, (30, 7)), rng.uniform(0, 1, (30, 7))]
        for mode in ("global", "per_feature"):
            scaled, info = minmax_fit_transform(channels, mode)
            back = minmax_inverse(info, scaled)
            for orig, rec in zip(channels, back):
                assert np.abs(orig - rec).max() <= 1e-12
            # direct recomputation oracle
            if mode == "global":
                manual = (channels[0] - channels[0].min()) / (
                    channels[0].max() - channels[0].min()
                )
                assert np.abs(scaled[0] - manual).max() <= 1e-15

    def test_out_of_range_passes_through(self):
        info = minmax_fit([np.array([[0.0, 1.0]])])
        out = minmax_transform(info, [np.array([[2.0]])])
        assert out[0].ravel()[0] == pytest.approx(2.0)


class TestErrors:
    def test_trivial_values(self):
        x = np.array([3.0, 4.0])
        assert rom_error(x, x) == 0.0
        assert rom_error(x, np.zeros(2)) == 1.0
        assert rom_error(x, np.array([3.0, 0.0])) == pytest.approx(0.64)

    def test_zero_reference(self):
        with pytest.raises(ValueError):
            rom_error(np.zeros(3), np.ones(3))


class TestPodGpr:
    def test_constant_dataset(self):
        x0 = np.linspace(1, 2, 12)
        S = np.repeat(x0[:, None], 6, axis=1)
        params = np.linspace(0, 1, 6)[:, None]
        sur = pod_gpr_offline(SnapshotMatrix(S, params), 1, seed=0)
        for mu in ([0.2], [0.77]):
            pred = sur.predict(np.array(mu))
            assert np.abs(pred - x0).max() / np.abs(x0).max() <= 1e-8

    def test_two_dimensional_subspace_reproduced(self):
        rng = np.random.default_rng(2)
        basis = rng.standard_normal((40, 2))
        params = rng.uniform(0, 1, (10, 2))
        coeffs = np.column_stack([np.sin(params @ [2, 1]), params @ [1, -1]])
        S = basis @ coeffs.T
        sur = pod_gpr_offline(SnapshotMatrix(S, params), 2, seed=0)
        for i in range(10):
            pred = sur.predict(params[i])
            assert np.linalg.norm(pred - S[:, i]) / np.linalg.norm(S[:, i]) <= 1e-6

    def test_model_count_matches_k(self):
        U, _, params = synthetic_dataset(8)
        sur = pod_gpr_offline(SnapshotMatrix(U, params), 1, seed=0)
        assert len(sur.models) == 1 and sur.k == 1

    def test_training_point_prediction_equals_projection(self):
        U, _, params = synthetic_dataset(12)
        sur = pod_gpr_offline(SnapshotMatrix(U, params), 4, seed=1)
        for i in (0, 5, 11):
            pred = sur.predict(params[i])
            proj = sur.project(U[:, i])
            assert np.linalg.norm(pred - proj) / np.linalg.norm(proj) <= 1e-6
            assert rom_error(U[:, i], pred) == pytest.approx(
                projection_error(U[:, i], proj), abs=1e-6
            )

    def test_online_matches_matvec_oracle(self):
        import romforge.gpr as gpr

        U, _, params = synthetic_dataset(10)
        sur = pod_gpr_offline(SnapshotMatrix(U, params), 3, seed=0)
        mu = np.array([0.4, 0.6])
        coeffs = [gpr.predict_mean(m, mu) for m in sur.models]
        oracle = sum(c * sur.basis.vectors[:, j] for j, c in enumerate(coeffs))
        assert np.abs(pod_gpr_online(sur, mu) - oracle).max() <= 1e-12

    def test_dimension_mismatch(self):
        U, _, params = synthetic_dataset(6)
        sur = pod_gpr_offline(SnapshotMatrix(U, params), 2, seed=0)
        with pytest.raises(ValueError):
            sur.predict(np.zeros(3))

    def test_k_exceeds_samples(self):
        U, _, params = synthetic_dataset(5)
        with pytest.raises(ValueError):
            pod_gpr_offline(SnapshotMatrix(U, params), 6)

    def test_projection_error_nonincreasing_in_k(self):
        U, _, params = synthetic_dataset(15, seed=4)
        test = U[:, 12:]
        train = SnapshotMatrix(U[:, :12], params[:12])
        errors = []
        for k in range(1, 7):
            sur = pod_gpr_offline(train, k, seed=0)
            errors.append(
                np.mean([projection_error(test[:, i], sur.project(test[:, i])) for i in range(3)])
            )
        assert np.all(np.diff(errors) <= 1e-12)


class TestCaeTraining:
    def test_overfit_single_sample(self):
        U, V, params = synthetic_dataset(1)
        Ur, Vr = np.repeat(U, 8, 1), np.repeat(V, 8, 1)
        pr = np.repeat(params, 8, 0)
        cfg = CaeTrainConfig(max_epochs=400, patience=400, width_scale=0.25, learning_rate=3e-3)
        sur = cae_gpr_offline([Ur, Vr], [U, V], pr, (8, 8), 2, train_config=cfg, seed=0)
        assert sur.provenance["best_val_loss"] <= 1e-4

    def test_early_stopping_exact_patience(self):
        from romforge.nn import build_paper_cae

        X = np.random.default_rng(0).random((8, 8, 8, 1))
        cfg = CaeTrainConfig(learning_rate=0.0, max_epochs=500, patience=7, width_scale=0.25)
        net = build_paper_cae(8, 8, 1, 2, 0.25, seed=0)
        epochs, history = train_cae(net, X, X[:2], cfg, seed=0)
        assert epochs == 8  # one improving epoch + exactly `patience` flat ones

    def test_divergent_training_raises_with_epoch(self):
        from romforge.errors import TrainingError
        from romforge.nn import build_paper_cae

        X = np.random.default_rng(0).random((8, 8, 8, 1))
        cfg = CaeTrainConfig(learning_rate=1e200, max_epochs=50, patience=50, width_scale=0.25)
        net = build_paper_cae(8, 8, 1, 2, 0.25, seed=0)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingError):
                train_cae(net, X, X[:2], cfg, seed=0)

    def test_deterministic_surrogate(self):
        U, V, params = synthetic_dataset(12)
        args = ([U[:, :10], V[:, :10]], [U[:, 10:], V[:, 10:]], params[:10], (8, 8), 2)
        s1 = cae_gpr_offline(*args, train_config=MICRO_CFG, seed=3)
        s2 = cae_gpr_offline(*args, train_config=MICRO_CFG, seed=3)
        assert all(
            np.array_equal(a, b)
            for a, b in zip(s1.network.get_weights(), s2.network.get_weights())
        )
        mu = params[0]
        assert np.array_equal(s1.predict(mu), s2.predict(mu))


@pytest.fixture(scope="module")
def surrogate():
    U, V, params = synthetic_dataset(12)
    return (
        cae_gpr_offline(
            [U[:, :10], V[:, :10]],
            [U[:, 10:], V[:, 10:]],
            params[:10],
            (8, 8),
            2,
            train_config=MICRO_CFG,
            seed=0,
        ),
        U,
        V,
        params,
    )


class TestCaeGpr:

    def test_training_point_prediction_equals_projection(self, surrogate):
        sur, U, V, params = surrogate
        for i in (0, 4, 9):
            pred = sur.predict(params[i])
            proj = sur.project([U[:, i], V[:, i]])
            denom = np.linalg.norm(proj)
            assert np.linalg.norm(pred - proj) / denom <= 1e-6

    def test_output_shape_and_range(self, surrogate):
        sur, U, V, params = surrogate
        rng = np.random.default_rng(5)
        for _ in range(5):
            mu = rng.uniform(0, 1, 2)
            pred = sur.predict(mu)
            assert pred.shape == (64, 2)
            assert np.all(np.isfinite(pred))
            for c in range(2):
                lo, hi = float(sur.scaling.mins[c]), float(sur.scaling.maxs[c])
                assert pred[:, c].min() >= lo - 1e-12
                assert pred[:, c].max() <= hi + 1e-12

    def test_projection_matches_training_reconstruction(self, surrogate):
        sur, U, V, params = surrogate
        proj = sur.project([U[:, 0], V[:, 0]])
        scaled_in = minmax_transform(sur.scaling, [U[:, :1], V[:, :1]])
        X = snapshots_to_tensor(scaled_in, 8, 8)
        direct = sur.network.forward(X)[0]
        back = minmax_inverse(sur.scaling, [direct[..., 0].ravel(), direct[..., 1].ravel()])
        assert np.abs(proj[:, 0] - back[0]).max() <= 1e-12
        assert np.abs(proj[:, 1] - back[1]).max() <= 1e-12

    def test_dimension_mismatch(self, surrogate):
        sur, *_ = surrogate
        with pytest.raises(ValueError):
            sur.predict(np.zeros(5))


@pytest.fixture(scope="module")
def cv_setup():
    U, V, params = synthetic_dataset(20, seed=7)
    return U, V, params


class TestFiveFoldCv:
    def test_partition_arithmetic(self):
        params = np.random.default_rng(0).uniform(0, 1, (10, 2))
        folds = fold_partitions(params, 5)
        seen = []
        for train, val, test in folds:
            assert len(train) == 8 and len(val) == 1 and len(test) == 1
            assert set(train) | set(val) | set(test) == set(range(10))
            seen.extend(list(val) + list(test))
        assert sorted(seen) == list(range(10))

    def test_indivisible_sample_count(self):
        with pytest.raises(ValueError):
            fold_partitions(np.zeros((12, 2)), 5)

    def test_odd_holdout(self):
        with pytest.raises(ValueError):
            fold_partitions(np.zeros((15, 2)), 5)

    def test_canonical_order_is_permutation_invariant(self):
        rng = np.random.default_rng(1)
        params = rng.uniform(0, 1, (20, 3))
        perm = rng.permutation(20)
        a = params[canonical_order(params)]
        b = params[perm][canonical_order(params[perm])]
        assert np.array_equal(a, b)


    def test_report_contents_and_mean(self, cv_setup):
        U, V, params = cv_setup
        report = five_fold_cv(
            SnapshotMatrix(U, params),
            SnapshotMatrix(V, params),
            [2],
            cae_k_list=[2],
            train_config=MICRO_CFG,
            seed=0,
        )
        pod_rows = [r for r in report.rows if r["method"] == "pod-gpr" and r["channel"] == "u"]
        assert len(pod_rows) == 5
        mean = report.mean_error("pod-gpr", 2, "u")
        assert mean == pytest.approx(np.mean([r["eps_rom"] for r in pod_rows]))
        assert all(r["eps_rom"] >= 0 and r["eps_proj"] >= 0 for r in report.rows)

    def test_permutation_invariance_of_report(self, cv_setup):
        U, V, params = cv_setup
        perm = np.random.default_rng(3).permutation(20)
        kwargs = dict(k_list=[2], cae_k_list=[], train_config=MICRO_CFG, seed=1)
        r1 = five_fold_cv(SnapshotMatrix(U, params), SnapshotMatrix(V, params), **kwargs)
        r2 = five_fold_cv(
            SnapshotMatrix(U[:, perm], params[perm]), SnapshotMatrix(V[:, perm], params[perm]),
            **kwargs,
        )
        science = lambda rows: [
            (r["method"], r["fold"], r["k"], r["channel"], r["eps_rom"], r["eps_proj"])
            for r in rows
        ]
        assert science(r1.rows) == science(r2.rows)
