import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import dblquad

from ntklab.errors import ParallelPointsError, ZeroVarianceError
from ntklab.experiments import (CellConfig, SyntheticSpec, SyntheticTask, aligned_curve, config_hash,
                                empirical_kernel_errors, f_vs_fkr_gap, figure1_cells,
                                generalization_error, kernel_check_suite, loglog_slope, network_predictor,
                                non_increasing, replace_train, rng_for, run_cell, run_cells, sample_inputs,
                                summarize_figure1, synthesize, threads_from_env,
                                v_perp_plateau_ratio)
from ntklab.kernel import KernelRegressor
from ntklab.model import initialize
from ntklab.trainer import TrainConfig


class TestSynthetic:
    def test_inputs_on_sphere(self):
        X = sample_inputs(np.random.default_rng(0), 50, 4, 2.0)
        np.testing.assert_allclose(np.linalg.norm(X, axis=1), 2.0, rtol=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31), d=st.integers(2, 12), radius=st.sampled_from(["unit", "sqrt_d"]))
    def test_dataset_invariants(self, seed, d, radius):
        task = SyntheticTask(SyntheticSpec(n=10, d=d, p=1 + seed % 3, seed=seed, input_radius=radius))
        ds = task.dataset()
        expected = 1.0 if radius == "unit" else math.sqrt(d)
        assert ds.input_radius == pytest.approx(expected)
        assert np.linalg.norm(task.beta) <= 1.0 + 1e-12
        assert abs(ds.labels.mean()) < 1e-12
        assert ds.labels.std() == pytest.approx(1.0)

    def test_beta_rescaled_when_long(self):
        flags = {SyntheticTask(SyntheticSpec(n=5, d=8, seed=s)).beta_rescaled for s in range(20)}
        assert flags == {True, False} or flags == {True}
        task = SyntheticTask(SyntheticSpec(n=5, d=8, seed=0))
        if task.beta_rescaled:
            assert np.linalg.norm(task.beta) == pytest.approx(1.0)
        assert task.metadata()["beta_rescaled"] == task.beta_rescaled

    def test_raw_labels(self):
        task = SyntheticTask(SyntheticSpec(n=20, d=3, p=2, normalize_labels=False, seed=3))
        X = task.train_inputs
        np.testing.assert_allclose(task.dataset().labels, (X @ task.beta) ** 2)

    def test_one_dimension_runs_out_of_directions(self):
        # the unit "sphere" in d = 1 is {-1, 1}, so three points are always parallel
        with pytest.raises(ParallelPointsError):
            SyntheticTask(SyntheticSpec(n=3, d=1, max_retries=5))

    def test_zero_variance_rejected(self):
        with pytest.raises(ZeroVarianceError, match="zero variance"):
            SyntheticTask(SyntheticSpec(n=10, d=3, p=0, normalize_labels=True))

    def test_constant_labels_allowed_raw(self):
        ds = synthesize(SyntheticSpec(n=10, d=3, p=0, normalize_labels=False))
        np.testing.assert_array_equal(ds.labels, 1.0)

    def test_deterministic_and_seed_sensitive(self):
        a = synthesize(SyntheticSpec(seed=4))
        b = synthesize(SyntheticSpec(seed=4))
        c = synthesize(SyntheticSpec(seed=5))
        np.testing.assert_array_equal(a.inputs, b.inputs)
        assert not np.array_equal(a.inputs, c.inputs)

    def test_streams_independent(self):
        a = rng_for(0, 1).normal(size=5)
        b = rng_for(0, 2).normal(size=5)
        assert not np.allclose(a, b)

    def test_bad_spec(self):
        with pytest.raises(ValueError):
            SyntheticTask(SyntheticSpec(n=1))
        with pytest.raises(ValueError):
            SyntheticTask(SyntheticSpec(input_radius="huge"))

    def test_test_samples_fresh(self):
        task = SyntheticTask(SyntheticSpec(n=10, d=3))
        X = task.sample_test(10, seed=0)
        assert not np.allclose(X, task.train_inputs)
        np.testing.assert_array_equal(X, task.sample_test(10, seed=0))


def second_moment_quadrature(beta, r):
    """E (x.beta)^2 for x = r u/|u|, u uniform on [-1, 1]^2."""
    def f(v, u):
        q = u * u + v * v
        return r * r * (u * beta[0] + v * beta[1]) ** 2 / q if q > 0 else 0.0
    val, _ = dblquad(f, -1, 1, -1, 1, epsabs=1e-12, epsrel=1e-12)
    return val / 4


class TestGeneralizationError:
    def test_exact_predictor_gives_zero(self):
        task = SyntheticTask(SyntheticSpec(n=10, d=4, p=2))
        est = generalization_error(task.target, task, n_test=100)
        assert est.mean == 0.0 and est.n == 100

    def test_symmetry_oracle_matches_quadrature(self):
        beta = np.array([0.3, -0.7])
        assert second_moment_quadrature(beta, 1.0) == pytest.approx(beta @ beta / 2, rel=1e-9)

    @pytest.mark.parametrize("d", [2, 5])
    def test_zero_predictor_second_moment(self, d):
        task = SyntheticTask(SyntheticSpec(n=10, d=d, p=1, normalize_labels=False, seed=1))
        est = generalization_error(lambda X: np.zeros(len(X)), task, n_test=20_000)
        if d == 2:
            oracle = second_moment_quadrature(task.beta, 1.0)
        else:
            oracle = task.beta @ task.beta / d
        assert abs(est.mean - oracle) < 3 * est.stderr

    def test_rejects_empty_test_set(self):
        task = SyntheticTask(SyntheticSpec(n=10, d=3))
        with pytest.raises(ValueError):
            generalization_error(task.target, task, n_test=0)


class TestGap:
    def test_kr_against_itself_is_zero(self):
        task = SyntheticTask(SyntheticSpec(n=15, d=3, seed=2))
        data = task.dataset()
        kr = KernelRegressor(data)
        est = f_vs_fkr_gap(None, data, task, n_test=200, regressor=kr, predictor=kr)
        assert est.mean < 1e-20

    def test_untrained_small_kappa_gap_is_kr_energy(self):
        task = SyntheticTask(SyntheticSpec(n=20, d=3, seed=3))
        data = task.dataset()
        params = initialize(1000, 3, 0.01, seed=3)
        kr = KernelRegressor(data)
        gap = f_vs_fkr_gap(params, data, task, n_test=5000, seed=7, regressor=kr)
        energy = f_vs_fkr_gap(None, data, task, n_test=5000, seed=7, regressor=kr,
                              predictor=lambda X: np.zeros(len(X)))
        assert abs(gap.mean - energy.mean) < 3 * energy.stderr


class TestCells:
    def small_cell(self, **kw):
        return CellConfig(SyntheticSpec(n=8, d=3, seed=1), width=100,
                          train=TrainConfig(max_iters=200, loss_tol=1e-3, record_every=20), **kw)

    def test_hash_stable_and_sensitive(self):
        a = self.small_cell()
        assert config_hash(a.as_dict()) == config_hash(self.small_cell().as_dict())
        assert config_hash(a.as_dict()) != config_hash(replace_train(a, step_size=0.02).as_dict())

    def test_round_trip(self):
        a = self.small_cell(n_test=10)
        b = CellConfig.from_dict(json.loads(json.dumps(a.as_dict())))
        assert b.as_dict() == a.as_dict()

    def test_manifest_contents(self):
        res = run_cell(self.small_cell(n_test=100))
        assert res.ok
        m = res.manifest
        for key in ("config_hash", "seed", "build", "jitter", "terminal_loss", "iterations", "wall_seconds",
                    "task", "gen_error"):
            assert key in m
        json.dumps(m)
        assert m["terminal_loss"] == res.trajectory.final.loss

    def test_replay_bitwise(self):
        a = run_cell(self.small_cell())
        b = run_cell(CellConfig.from_dict(a.manifest["config"]))
        assert a.trajectory.records == b.trajectory.records

    def test_failure_recorded_not_raised(self):
        cfg = CellConfig(SyntheticSpec(n=8, d=3, p=0, normalize_labels=True), width=10)
        res = run_cell(cfg)
        assert not res.ok and "zero variance" in res.error
        assert "error" in res.manifest

    def test_divergence_recorded(self):
        cfg = replace_train(self.small_cell(), step_size=1e300)
        res = run_cell(cfg)
        assert res.error.startswith("DivergenceError")
        assert res.trajectory.stop_reason == "diverged"

    def test_pool_matches_serial(self):
        cells = [self.small_cell(), replace_train(self.small_cell(), step_size=0.02)]
        serial = run_cells(cells, threads=1)
        pooled = run_cells(cells, threads=2)
        assert [r.trajectory.records for r in serial] == [r.trajectory.records for r in pooled]

    def test_threads_env(self, monkeypatch):
        monkeypatch.setenv("NTKLAB_THREADS", "3")
        assert threads_from_env(1) == 3
        monkeypatch.delenv("NTKLAB_THREADS")
        assert threads_from_env(2) == 2


def test_non_increasing():
    assert non_increasing([3, 2, 2, 1])
    assert not non_increasing([3, 4])
    assert non_increasing([])


def test_loglog_slope_exact():
    xs = np.array([10.0, 100.0, 1000.0])
    assert loglog_slope(xs, 3 * xs ** -0.5) == pytest.approx(-0.5)


def test_aligned_curve_carries_final_value():
    cells = run_cells([CellConfig(SyntheticSpec(n=6, d=3, seed=s), width=200,
                                  train=TrainConfig(step_size=0.05, max_iters=2000, loss_tol=1e-2))
                       for s in range(2)])
    grid, rows = aligned_curve(cells, "loss")
    assert rows.shape == (2, grid.size)
    for c, row in zip(cells, rows):
        assert row[-1] == c.trajectory.final.loss


def test_summarize_small_sweep():
    tc = TrainConfig(step_size=0.01, max_iters=3000, loss_tol=1e-3)
    cells = run_cells(figure1_cells(widths=(200, 400), seeds=2, train_config=tc, n=10))
    sweep = summarize_figure1(cells, (200, 400), 2)
    for key in ("all_converged", "loss_monotone", "v_perp_non_increasing", "dist_minnorm_non_increasing",
                "dist_init_non_increasing", "v_perp_median", "max_unit_drift_non_increasing", "v_perp_flat"):
        assert key in sweep.trends
    assert len(sweep.trends["v_perp_median"]) == 2
    assert set(sweep.curves["v_perp"]) == {200, 400}


def test_v_perp_plateau_ratio():
    from ntklab.trainer import Record, Trajectory
    recs = [Record(k, loss, v, 0, 0, 0, 0, 0, 0.0) for k, loss, v in
            [(0, 9.0, 0.0), (10, 2.0, 1.0), (20, 0.5, 4.0), (30, 0.1, 6.0), (40, 0.01, 5.0)]]
    assert v_perp_plateau_ratio(Trajectory(recs)) == 1.5
    assert np.isnan(v_perp_plateau_ratio(Trajectory(recs[:2])))


def test_figure1_cell_grid():
    cells = figure1_cells()
    assert len(cells) == 20
    c = cells[0]
    assert (c.data.n, c.data.d, c.data.p, c.data.normalize_labels, c.data.input_radius) == (100, 5, 2, True, "unit")
    assert c.train.step_size == 0.01 and c.init_scale == 1.0


def test_network_predictor():
    params = initialize(10, 3, seed=0)
    X = sample_inputs(np.random.default_rng(0), 4, 3, 1.0)
    assert network_predictor(params)(X).shape == (4,)


def test_empirical_kernel_errors_small():
    out = empirical_kernel_errors(widths=(100, 1000, 10_000), seeds=3, n=8, d=3)
    assert out["seeds"] == [0, 1, 2]
    assert out["median_max_entry_error"][2] < out["median_max_entry_error"][0]
    assert -1.0 < out["max_entry_slope"] < 0.0


def test_kernel_check_suite_small():
    rep = kernel_check_suite(d=3, trials=50, seeds=2, widths=(100, 1000))
    assert rep["series_max_err"] < 1e-10
    assert rep["feature_map_max_err"] < 1e-6
    assert rep["dp"]["ok"]
    with pytest.raises(ValueError):
        kernel_check_suite(trials=0)
