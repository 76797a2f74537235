"""System assembly tests: consistency identities and composite-noise stats."""

import numpy as np
import pytest
from dataclasses import replace

from rblkit.errors import RblError
from rblkit.geometry import (
    EulerAngles,
    TranslationVector,
    rotation_matrix_small_angle,
)
from rblkit.linsys import (
    CompositeNoiseStats,
    build_param_system,
    build_position_system,
    cancel_translation,
    composite_noise_variance,
)
from rblkit.scenario import (
    RangeMeasurements,
    make_ground_truth,
    simulate_ranges,
)


def _noise_free_setup(scenario, mode="small-angle-rotation", seed=200):
    sc = replace(scenario, generator_mode=mode)
    rng = np.random.default_rng(seed)
    truth = make_ground_truth(sc, rng)
    ranges = simulate_ranges(truth.positions, sc.anchors, 0.0, rng)
    return sc, truth, ranges


class TestPositionSystem:
    def test_first_row_coefficients(self, cube_scenario):
        ranges = RangeMeasurements(
            d_tilde=np.zeros((cube_scenario.m_anchors, cube_scenario.n_sensors)),
            sigma_w=0.0,
        )
        sys0 = build_position_system(ranges, cube_scenario.anchors, 0)
        # anchor 0 is (-10, -10, -10)
        assert np.array_equal(sys0.G[0], [20.0, 20.0, 20.0, 1.0])

    def test_noise_free_consistency(self, cube_scenario):
        _, truth, ranges = _noise_free_setup(cube_scenario, mode="exact-rotation")
        for n in range(cube_scenario.n_sensors):
            sys_n = build_position_system(ranges, cube_scenario.anchors, n)
            s = truth.positions[:, n]
            x = np.concatenate([s, [float(s @ s)]])
            assert np.abs(sys_n.y - sys_n.G @ x).max() <= 1e-9

    def test_residual_equals_composite_noise(self, cube_scenario):
        """Residual must be 2 d w + w^2, recomputed from the drawn noise."""
        rng = np.random.default_rng(201)
        truth = make_ground_truth(cube_scenario, rng)
        clean = simulate_ranges(truth.positions, cube_scenario.anchors, 0.0, np.random.default_rng(0))
        noisy_values = clean.d_tilde + rng.normal(0, 0.1, clean.d_tilde.shape)
        ranges = RangeMeasurements(d_tilde=noisy_values, sigma_w=0.1)
        w = noisy_values - clean.d_tilde
        for n in range(cube_scenario.n_sensors):
            sys_n = build_position_system(ranges, cube_scenario.anchors, n)
            s = truth.positions[:, n]
            x = np.concatenate([s, [float(s @ s)]])
            residual = sys_n.y - sys_n.G @ x
            expected = 2.0 * clean.d_tilde[:, n] * w[:, n] + w[:, n] ** 2
            np.testing.assert_allclose(residual, expected, atol=1e-9)

    def test_bad_sensor_index_rejected(self, cube_scenario):
        ranges = RangeMeasurements(d_tilde=np.zeros((8, 8)), sigma_w=0.0)
        with pytest.raises(RblError):
            build_position_system(ranges, cube_scenario.anchors, 8)


class TestParamSystem:
    def test_translation_channel_row(self, cube_scenario):
        _, truth, ranges = _noise_free_setup(cube_scenario)
        norms = np.sum(truth.positions**2, axis=0)
        system = build_param_system(
            ranges, cube_scenario.anchors, cube_scenario.conformation, norms
        )
        # anchor 1 is (+10, -10, -10); rows are sensor-major so row 1 is
        # (sensor 0, anchor 1).
        assert np.array_equal(system.h_t[1], [-20.0, 20.0, 20.0])
        row = np.flatnonzero(
            (system.row_sensor == 0)
            & (cube_scenario.anchors[:, system.row_anchor].T == [10, 10, 10]).all(axis=1)
        )[0]
        assert np.array_equal(system.h_t[row], [-20.0, -20.0, -20.0])

    def test_angle_channel_matches_rotation_oracle(self, cube_scenario):
        """h_theta rows must reproduce -2 a'(Q_sa(theta) - I) c for any theta."""
        _, truth, ranges = _noise_free_setup(cube_scenario)
        norms = np.sum(truth.positions**2, axis=0)
        system = build_param_system(
            ranges, cube_scenario.anchors, cube_scenario.conformation, norms
        )
        rng = np.random.default_rng(202)
        for _ in range(20):
            theta = rng.normal(0, 0.2, 3)
            Q = rotation_matrix_small_angle(EulerAngles.from_array(theta))
            for row in range(0, system.n_rows, 7):
                a = cube_scenario.anchors[:, system.row_anchor[row]]
                c = cube_scenario.conformation[:, system.row_sensor[row]]
                expected = -2.0 * a @ ((Q - np.eye(3)) @ c)
                assert abs(system.h_theta[row] @ theta - expected) <= 1e-9

    def test_noise_free_small_angle_identity(self, cube_scenario):
        _, truth, ranges = _noise_free_setup(cube_scenario)
        norms = np.sum(truth.positions**2, axis=0)
        system = build_param_system(
            ranges, cube_scenario.anchors, cube_scenario.conformation, norms
        )
        residual = (
            system.z
            - system.h_theta @ truth.angles.as_array
            - system.h_t @ truth.translation.as_array
        )
        assert np.abs(residual).max() <= 1e-9

    def test_row_order_is_sensor_major(self, cube_scenario):
        _, truth, ranges = _noise_free_setup(cube_scenario)
        norms = np.sum(truth.positions**2, axis=0)
        system = build_param_system(
            ranges, cube_scenario.anchors, cube_scenario.conformation, norms
        )
        m = cube_scenario.m_anchors
        assert np.array_equal(system.row_sensor[:m], np.zeros(m, dtype=int))
        assert np.array_equal(system.row_anchor[:m], np.arange(m))

    def test_structure_independence(self, cube_scenario):
        """H_t must not depend on the conformation; h_theta is linear in it."""
        _, truth, ranges = _noise_free_setup(cube_scenario)
        norms = np.sum(truth.positions**2, axis=0)
        base = build_param_system(
            ranges, cube_scenario.anchors, cube_scenario.conformation, norms
        )
        scaled = build_param_system(
            ranges, cube_scenario.anchors, 0.5 * cube_scenario.conformation, norms
        )
        assert np.array_equal(base.h_t, scaled.h_t)
        np.testing.assert_allclose(scaled.h_theta, 0.5 * base.h_theta, atol=1e-12)

    def test_mismatch_scaling_is_quadratic(self, cube_scenario):
        """Halving the angles shrinks the exact-rotation residual ~4x."""
        rng = np.random.default_rng(203)
        factors = []
        for _ in range(50):
            theta_full = np.deg2rad(rng.normal(0, np.sqrt(10.0), 3))
            t = TranslationVector.from_array(rng.normal(0, np.sqrt(5.0), 3))
            residuals = []
            for scale in (1.0, 0.5):
                angles = EulerAngles.from_array(theta_full * scale)
                sc = replace(cube_scenario, generator_mode="exact-rotation")
                from rblkit.geometry import apply_rigid_transform, rotation_matrix_exact

                positions = apply_rigid_transform(
                    rotation_matrix_exact(angles), t, sc.conformation
                )
                ranges = simulate_ranges(positions, sc.anchors, 0.0, rng)
                norms = np.sum(positions**2, axis=0)
                system = build_param_system(ranges, sc.anchors, sc.conformation, norms)
                residual = (
                    system.z
                    - system.h_theta @ angles.as_array
                    - system.h_t @ t.as_array
                )
                residuals.append(np.abs(residual).max())
            factors.append(residuals[0] / residuals[1])
        assert 3.0 <= np.median(factors) <= 5.0

    def test_dimension_mismatch_rejected(self, cube_scenario):
        ranges = RangeMeasurements(d_tilde=np.zeros((8, 8)), sigma_w=0.0)
        with pytest.raises(RblError):
            build_param_system(
                ranges, cube_scenario.anchors, cube_scenario.conformation, np.zeros(5)
            )


class TestCompositeNoise:
    def test_point_values(self):
        assert composite_noise_variance(1.0, 0.1) == pytest.approx(0.04)
        assert composite_noise_variance(17.3, 0.0) == 0.0

    def test_monte_carlo_oracle(self):
        """Empirical var of 2 d w + w^2 vs 4 d^2 sigma^2 within 5 percent."""
        rng = np.random.default_rng(204)
        d, sigma = 17.3, 0.1
        w = rng.normal(0, sigma, 100_000)
        xi = (d + w) ** 2 - d**2
        expected = composite_noise_variance(d, sigma)
        assert abs(xi.var() - expected) <= 0.05 * expected

    def test_stats_helper(self):
        stats = CompositeNoiseStats.from_ranges(np.array([1.0, 2.0]), 0.1)
        np.testing.assert_allclose(stats.row_var, [0.04, 0.16])
        assert stats.n0 == pytest.approx(0.10)


class TestCancelTranslation:
    def test_zero_estimate_is_identity(self, cube_scenario):
        _, truth, ranges = _noise_free_setup(cube_scenario)
        norms = np.sum(truth.positions**2, axis=0)
        system = build_param_system(
            ranges, cube_scenario.anchors, cube_scenario.conformation, norms
        )
        reduced = cancel_translation(system, TranslationVector(0, 0, 0))
        assert np.array_equal(reduced.z, system.z)
        assert np.array_equal(reduced.h_theta, system.h_theta)
        assert np.array_equal(reduced.row_noise_var, system.row_noise_var)

    def test_true_translation_cancels_exactly(self, cube_scenario):
        _, truth, ranges = _noise_free_setup(cube_scenario)
        norms = np.sum(truth.positions**2, axis=0)
        system = build_param_system(
            ranges, cube_scenario.anchors, cube_scenario.conformation, norms
        )
        reduced = cancel_translation(system, truth.translation)
        residual = reduced.z - reduced.h_theta @ truth.angles.as_array
        assert np.abs(residual).max() <= 1e-9

    def test_residual_shrinks_along_segment(self, cube_scenario):
        _, truth, ranges = _noise_free_setup(cube_scenario)
        norms = np.sum(truth.positions**2, axis=0)
        system = build_param_system(
            ranges, cube_scenario.anchors, cube_scenario.conformation, norms
        )
        previous = np.inf
        for alpha in np.linspace(0.0, 1.0, 5):
            t_hat = TranslationVector.from_array(alpha * truth.translation.as_array)
            reduced = cancel_translation(system, t_hat)
            residual = np.linalg.norm(reduced.z - reduced.h_theta @ truth.angles.as_array)
            assert residual <= previous + 1e-12
            previous = residual
