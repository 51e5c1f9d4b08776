"""
Test suite for the linear state estimator
Run with: python -m pytest tests/test_estimator.py -v
"""

from pathlib import Path

import numpy as np
import pytest

from src.models.grid import Branch, Bus, GridModel, MeasurementDescriptor, build_placement, load_cdf
from src.models.pmu import Scenario, load_scenario, true_measurements
from src.services.estimator import (StateVector, build_measurement_matrix,
                                    estimate_report, observability_rank,
                                    timed_estimate, weighted_residual_norm,
                                    weights_from_noise, wls_solve)
from src.utils.errors import UnknownNodeError, UnobservableError

DATA = Path(__file__).resolve().parents[1] / 'src' / 'data'


@pytest.fixture
def toy():
    grid = GridModel([Bus(1, "A", 1.0), Bus(2, "B", 1.0)], [Branch(1, 2, 1 / 101, 10 / 101)])
    return grid, Scenario({1: 1 + 0j, 2: 0.95 - 0.05j})


@pytest.fixture(scope='module')
def ieee14():
    grid = load_cdf(DATA / 'ieee14cdf.txt')
    scenario = load_scenario(DATA / 'ieee14_scenario.csv')
    model = build_measurement_matrix(grid, build_placement(grid, [2, 6, 7, 9], 2))
    return grid, scenario, model


def true_z(grid, scenario, model):
    phasors = {d: true_measurements(grid, scenario, d).to_complex() for d in model.descriptors}
    return model.measurement_vector(phasors)


def true_state(grid, scenario):
    return StateVector.from_voltages(grid, scenario.bus_voltages).values


class TestMeasurementMatrix:
    """Test H assembly"""

    def test_two_bus_current_row(self, toy):
        grid, _ = toy
        model = build_measurement_matrix(grid, [MeasurementDescriptor.current(grid.branch(1, 2), 1)])
        assert model.H[0] == pytest.approx([1, 10, -1, -10])
        assert model.H[1] == pytest.approx([-10, 1, 10, -1])

    def test_voltage_rows(self, toy):
        grid, _ = toy
        model = build_measurement_matrix(grid, [MeasurementDescriptor.voltage(2)])
        assert model.H.tolist() == [[0, 0, 1, 0], [0, 0, 0, 1]]
        assert model.rows == [(MeasurementDescriptor.voltage(2), 're'), (MeasurementDescriptor.voltage(2), 'im')]

    def test_ieee14_shape_and_rank(self, ieee14):
        _, _, model = ieee14
        assert model.H.shape == (38, 28)
        assert observability_rank(model) == (28, True)

    def test_shunts_change_rows(self, ieee14):
        grid, _, model = ieee14
        bare = build_measurement_matrix(grid, model.descriptors, include_shunts=False)
        assert not np.allclose(bare.H, model.H)

    def test_sigmas_to_weights(self, toy):
        grid, _ = toy
        model = build_measurement_matrix(grid, [MeasurementDescriptor.voltage(1)], sigmas=[0.1])
        assert model.weights == pytest.approx([100.0, 100.0])
        with pytest.raises(ValueError, match="One sigma"):
            build_measurement_matrix(grid, [MeasurementDescriptor.voltage(1)], sigmas=[0.1, 0.2])


class TestSolve:
    """Test WLS solutions"""

    def test_two_bus_recovery(self, toy):
        grid, scenario = toy
        model = build_measurement_matrix(
            grid, [MeasurementDescriptor.voltage(1), MeasurementDescriptor.current(grid.branch(1, 2), 1)])
        x, residuals = wls_solve(model, true_z(grid, scenario, model))
        assert x.voltage(2) == pytest.approx(0.95 - 0.05j, abs=1e-12)
        assert np.abs(residuals).max() < 1e-12

    def test_noiseless_recovery(self, ieee14):
        grid, scenario, model = ieee14
        x, _ = wls_solve(model, true_z(grid, scenario, model))
        assert np.abs(x.values - true_state(grid, scenario)).max() < 1e-9

    def test_duplicate_rows_invariant(self, ieee14):
        grid, scenario, model = ieee14
        rng = np.random.default_rng(4)
        z = true_z(grid, scenario, model) + rng.normal(0, 0.01, model.H.shape[0])
        doubled = build_measurement_matrix(grid, model.descriptors * 2)
        x, _ = wls_solve(model, z)
        x2, _ = wls_solve(doubled, np.concatenate([z, z]))
        assert np.abs(x.values - x2.values).max() < 1e-9

    def test_weight_scaling_invariant(self, ieee14):
        grid, scenario, model = ieee14
        rng = np.random.default_rng(5)
        z = true_z(grid, scenario, model) + rng.normal(0, 0.01, model.H.shape[0])
        weights = rng.uniform(0.5, 2.0, model.H.shape[0])
        x, _ = wls_solve(model.with_weights(weights), z)
        x2, _ = wls_solve(model.with_weights(weights * 1000.0), z)
        assert np.abs(x.values - x2.values).max() < 1e-12

    def test_residual_orthogonality(self, ieee14):
        grid, scenario, model = ieee14
        rng = np.random.default_rng(6)
        z = true_z(grid, scenario, model) + rng.normal(0, 0.01, model.H.shape[0])
        weighted = model.with_weights(rng.uniform(0.5, 2.0, model.H.shape[0]))
        _, residuals = wls_solve(weighted, z)
        assert np.abs(weighted.H.T @ (weighted.weights * residuals)).max() < 1e-8

    def test_normal_equation_oracle(self, toy):
        grid, scenario = toy
        branch = grid.branch(1, 2)
        descriptors = [MeasurementDescriptor.voltage(1), MeasurementDescriptor.voltage(2),
                       MeasurementDescriptor.current(branch, 1), MeasurementDescriptor.current(branch, 2)]
        rng = np.random.default_rng(7)
        model = build_measurement_matrix(grid, descriptors).with_weights(rng.uniform(1.0, 4.0, 8))
        z = true_z(grid, scenario, model) + rng.normal(0, 0.01, 8)

        H, W = model.H, np.diag(model.weights)
        expected = np.linalg.inv(H.T @ W @ H) @ H.T @ W @ z
        x, _ = wls_solve(model, z)
        assert np.abs(x.values - expected).max() < 1e-9

    def test_unbiased_under_noise(self, ieee14):
        grid, scenario, model = ieee14
        rng = np.random.default_rng(8)
        z0 = true_z(grid, scenario, model)
        sigma = 0.01
        trials = 500
        estimates = np.array([wls_solve(model, z0 + rng.normal(0, sigma, z0.size))[0].values
                              for _ in range(trials)])
        covariance = sigma ** 2 * np.linalg.inv(model.H.T @ model.H)
        spread = np.sqrt(np.diag(covariance) / trials)
        assert np.all(np.abs(estimates.mean(axis=0) - true_state(grid, scenario)) < 5 * spread)

    def test_chi_square_expectation(self, ieee14):
        grid, scenario, model = ieee14
        rng = np.random.default_rng(9)
        z0 = true_z(grid, scenario, model)
        sigma = 0.01
        weighted = model.with_weights(np.full(z0.size, 1 / sigma ** 2))
        norms = [weighted_residual_norm(weighted, wls_solve(weighted, z0 + rng.normal(0, sigma, z0.size))[1])
                 for _ in range(500)]
        assert np.mean(norms) == pytest.approx(38 - 28, rel=0.1)

    def test_unobservable(self, ieee14):
        grid, scenario, _ = ieee14
        model = build_measurement_matrix(grid, [MeasurementDescriptor.voltage(1)])
        assert observability_rank(model) == (2, False)
        with pytest.raises(UnobservableError) as info:
            wls_solve(model, np.zeros(2))
        assert info.value.rank == 2

    def test_unobservable_placement(self, ieee14):
        grid, _, _ = ieee14
        model = build_measurement_matrix(grid, build_placement(grid, [2], 2))
        rank, observable = observability_rank(model)
        assert not observable
        assert rank < 28
        with pytest.raises(UnobservableError, match="singular"):
            wls_solve(model, np.zeros(model.H.shape[0]))

    def test_vector_length(self, ieee14):
        _, _, model = ieee14
        with pytest.raises(ValueError, match="38 entries"):
            wls_solve(model, np.zeros(5))

    def test_timed_estimate(self, ieee14):
        grid, scenario, model = ieee14
        x, _, elapsed = timed_estimate(model, true_z(grid, scenario, model))
        assert elapsed >= 0
        assert len(x) == 28


class TestWeightsAndReport:
    """Test noise-derived weights and report rows"""

    def test_zero_noise_uniform(self, ieee14):
        _, _, model = ieee14
        assert np.all(weights_from_noise(model, 0.0, np.ones(38)).weights == 1.0)

    def test_relative_sigma(self, toy):
        grid, _ = toy
        model = build_measurement_matrix(grid, [MeasurementDescriptor.voltage(1)])
        z = np.array([0.6, 0.8])
        assert weights_from_noise(model, 0.01, z).weights == pytest.approx([1e4, 1e4])
        assert weights_from_noise(model, 0.01, z, layout='phase').weights == pytest.approx([3e4, 3e4])

    def test_report_rows(self, ieee14):
        grid, scenario, model = ieee14
        x, _ = wls_solve(model, true_z(grid, scenario, model))
        rows = estimate_report(x)
        assert [r['bus'] for r in rows] == list(range(1, 15))
        assert rows[0]['magnitude'] == pytest.approx(1.06, abs=1e-9)
        assert rows[0]['angle'] == pytest.approx(0.0, abs=1e-7)

    def test_state_vector_validation(self, toy):
        grid, _ = toy
        with pytest.raises(ValueError, match="needs 4 values"):
            StateVector(grid.bus_ids, np.zeros(3))
        with pytest.raises(UnknownNodeError):
            StateVector(grid.bus_ids, np.zeros(4)).voltage(9)
