"""Tests for error metrics, derivative sweeps, and report generation."""

import os

import numpy as np
import pytest
from numpy.testing import assert_allclose

from kanc import device, evaluate, networks


def oracle_checkpoint(target):
    spec = networks.preset("oracle", target)
    return networks.Checkpoint(spec, None, {"target": target, "seed": 0})


def zero_mlp_checkpoint(target):
    """An untrained network scaled to output exactly zero everywhere."""
    spec = networks.preset("mlp1", target)
    params = networks.init_params(spec, seed=0)
    for l in range(len(params.weights)):
        params.weights[l] = np.zeros_like(params.weights[l])
        params.biases[l] = np.zeros_like(params.biases[l])
    return networks.Checkpoint(spec, params, {"target": target, "seed": 0})


class TestErrorRatio:
    def test_worked_example(self):
        """The metric is the summed absolute error over the summed
        absolute reference, not a mean of pointwise ratios."""
        got = evaluate.mape([1.0, 2.0], [1.0, 1.0])
        assert_allclose(got, 0.5, rtol=1e-15)

    def test_perfect_prediction_is_zero(self):
        rng = np.random.default_rng(7)
        y = rng.normal(size=40)
        assert evaluate.mape(y, y) == 0.0

    def test_scale_invariance(self):
        """Scaling predictions and references together leaves the ratio
        unchanged."""
        rng = np.random.default_rng(11)
        true = rng.normal(size=30) + 3.0
        pred = true + rng.normal(size=30) * 0.1
        assert_allclose(evaluate.mape(pred * 1e-18, true * 1e-18),
                        evaluate.mape(pred, true), rtol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            evaluate.mape([1.0, 2.0], [1.0])

    def test_zero_reference_rejected(self):
        with pytest.raises(evaluate.UndefinedMetricError):
            evaluate.mape([1.0, 2.0], [0.0, 0.0])


class TestChargeErrorRatio:
    def test_floor_excludes_small_references(self):
        """Points whose reference magnitude sits below the floor do not
        contribute to either sum."""
        pred = np.array([999.0, 11.0])
        true = np.array([0.005, 10.0])
        assert_allclose(evaluate.mape_charge(pred, true), 0.1, rtol=1e-15)

    def test_floor_boundary_is_inclusive(self):
        pred = np.array([0.02, 5.0])
        true = np.array([0.01, 5.0])
        assert_allclose(evaluate.mape_charge(pred, true), 0.01 / 5.01,
                        rtol=1e-12)

    def test_all_below_floor_rejected(self):
        with pytest.raises(evaluate.UndefinedMetricError):
            evaluate.mape_charge([1.0, 1.0], [0.001, -0.002])

    def test_dispatch_by_target_name(self):
        """Charge targets get the floored ratio, the current target the
        plain one."""
        pred = np.array([999.0, 11.0])
        true = np.array([0.005, 10.0])
        charge = evaluate.target_mape(pred, true, "Q_D")
        plain = evaluate.target_mape(pred, true, "I_D")
        assert_allclose(charge, 0.1, rtol=1e-15)
        assert plain > 1.0


class TestPredict:
    def test_oracle_matches_surrogate(self):
        """The passthrough checkpoint reproduces the reference device."""
        rng = np.random.default_rng(3)
        v_d = rng.uniform(0.0, device.V_MAX, size=50)
        v_g = rng.uniform(0.0, device.V_MAX, size=50)
        for target in device.FIELD_NAMES:
            ck = oracle_checkpoint(target)
            want = device.surrogate_fields(v_d, v_g)[target]
            assert_allclose(evaluate.predict(ck, v_d, v_g), want, rtol=1e-15)

    def test_current_head_is_exponentiated(self):
        """A current-head network predicts amperes, not log-amperes."""
        spec = networks.preset("mlp1", "I_D")
        params = networks.init_params(spec, seed=4)
        ck = networks.Checkpoint(spec, params, {"target": "I_D"})
        v_d = np.array([0.1, 0.5])
        v_g = np.array([0.3, 0.7])
        x = np.column_stack([v_d / device.V_MAX, v_g / device.V_MAX])
        raw = networks.net_forward(spec, params, x)
        assert_allclose(evaluate.predict(ck, v_d, v_g), np.exp(raw),
                        rtol=1e-12)

    def test_charge_head_is_raw(self):
        spec = networks.preset("mlp1", "Q_S")
        params = networks.init_params(spec, seed=4)
        ck = networks.Checkpoint(spec, params, {"target": "Q_S"})
        v_d = np.array([0.1, 0.5])
        v_g = np.array([0.3, 0.7])
        x = np.column_stack([v_d / device.V_MAX, v_g / device.V_MAX])
        raw = networks.net_forward(spec, params, x)
        assert_allclose(evaluate.predict(ck, v_d, v_g), raw, rtol=1e-12)

    def test_grid_shape_preserved(self):
        ck = oracle_checkpoint("Q_G")
        v_d, v_g = np.meshgrid(np.linspace(0, 0.8, 5),
                               np.linspace(0, 0.8, 7), indexing="ij")
        assert evaluate.predict(ck, v_d, v_g).shape == (5, 7)


class TestSplitErrors:
    def test_oracle_scores_zero_on_both_splits(self):
        ds = device.generate_dataset(10)
        ck = oracle_checkpoint("Q_S")
        errs = evaluate.split_errors(ck, ds, "Q_S")
        assert errs["train"] == 0.0
        assert errs["test"] == 0.0

    def test_no_test_split_reports_none(self):
        ds = device.generate_dataset(5)
        ck = oracle_checkpoint("I_D")
        errs = evaluate.split_errors(ck, ds, "I_D")
        assert errs["test"] is None
        assert errs["train"] == 0.0


class TestDerivativeSweep:
    def test_axis_covers_domain_at_resolution(self):
        ck = oracle_checkpoint("Q_S")
        curve = evaluate.derivative_sweep(ck, 0.4)
        assert curve.v_g.size == 821
        assert curve.v_g[0] == 0.0
        assert_allclose(curve.v_g[-1], device.V_MAX, rtol=1e-15)

    def test_constant_output_has_flat_derivatives(self):
        ck = zero_mlp_checkpoint("Q_S")
        curve = evaluate.derivative_sweep(ck, 0.4)
        assert_allclose(curve.first, 0.0, atol=1e-12)
        assert_allclose(curve.second, 0.0, atol=1e-12)

    def test_first_derivative_matches_analytic_slope(self):
        """The sweep recovers the reference device's gate-charge slope,
        which is the drive derivative times the charge factor."""
        ck = oracle_checkpoint("Q_S")
        curve = evaluate.derivative_sweep(ck, 0.4)
        i = 400  # interior point, V_G = 0.4
        v_g = curve.v_g[i]
        scale = device.IDEALITY * device.THERMAL_VOLTAGE
        sigmoid = 1.0 / (1.0 + np.exp(-(v_g - device.THRESHOLD_VOLTAGE)
                                      / scale))
        want = -device.CHARGE_PER_VOLT * sigmoid
        assert_allclose(curve.first[i], want, rtol=1e-5)


class TestWaviness:
    def test_monotone_curve_scores_zero(self):
        y = np.linspace(-3.0, 5.0, 101) ** 3
        assert evaluate.waviness(np.sort(y)) == 0.0

    def test_single_peak_scores_zero(self):
        x = np.linspace(0.0, 1.0, 201)
        y = np.sin(np.pi * x)
        assert_allclose(evaluate.waviness(y), 0.0, atol=1e-12)

    def test_two_periods_score_four_amplitudes(self):
        """Each oscillation beyond the first swing adds twice its
        amplitude: two sine periods of unit amplitude score 4."""
        x = np.linspace(0.0, 1.0, 401)   # hits every extremum exactly
        y = np.sin(4.0 * np.pi * x)
        assert_allclose(evaluate.waviness(y), 4.0, rtol=1e-12)

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError):
            evaluate.waviness([1.0, 2.0])


class TestReports:
    def test_oracle_report_fields(self):
        ds = device.generate_dataset(10)
        ck = oracle_checkpoint("Q_D")
        rep = evaluate.evaluate_checkpoint(ck, ds)
        assert rep.target == "Q_D"
        assert rep.step_mv == 10
        assert rep.train_mape == 0.0
        assert rep.test_mape == 0.0
        assert set(rep.sweeps) == {0.4, 0.8}
        assert set(rep.waviness) == {0.4, 0.8}

    def test_report_files_are_deterministic(self, tmp_path):
        """Two runs over the same inputs emit byte-identical files."""
        ds = device.generate_dataset(20)
        cks = [oracle_checkpoint("I_D"), zero_mlp_checkpoint("Q_S")]
        dirs = [tmp_path / "a", tmp_path / "b"]
        for d in dirs:
            evaluate.make_report(cks, ds, out_dir=str(d))
        names = sorted(os.listdir(dirs[0]))
        assert names == sorted(os.listdir(dirs[1]))
        assert "summary.csv" in names
        assert len(names) == 5   # summary + two sweeps per checkpoint
        for name in names:
            a = (dirs[0] / name).read_bytes()
            b = (dirs[1] / name).read_bytes()
            assert a == b

    def test_summary_row_contents(self, tmp_path):
        ds = device.generate_dataset(10)
        evaluate.make_report(oracle_checkpoint("Q_G"), ds,
                             out_dir=str(tmp_path))
        lines = (tmp_path / "summary.csv").read_text().splitlines()
        assert lines[0].startswith("target,step_mv,seed,train_mape")
        row = lines[1].split(",")
        assert row[0] == "Q_G"
        assert row[1] == "10"
        assert float(row[3]) == 0.0
