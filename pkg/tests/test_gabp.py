"""Message passing tests.

The binding oracle is the dense closed-form posterior mean of the
linear-Gaussian model (conftest.dense_posterior_mean); converged message
passing must reproduce it.  Stage-B-versus-stage-A comparisons allow a
relative floating-point tolerance because on stacked systems the two
stages share the same fixed point (re-solving the angle block after
plugging in the jointly estimated translation reproduces the joint
solution), so exact ties are expected up to stopping noise.
"""

import numpy as np
import pytest
from dataclasses import replace

from conftest import (
    dense_posterior_mean,
    dense_posterior_mean_single,
    random_toy_system,
    toy_param_system,
)
from rblkit.errors import NumericalDegeneracyError, RblError
from rblkit.gabp import (
    GabpConfig,
    bivariate_iteration,
    consensus,
    genie_bound,
    init_refinement_state,
    init_state,
    refinement_consensus,
    refinement_iteration,
    run_double_gabp,
)
from rblkit.geometry import EulerAngles, TranslationVector, apply_rigid_transform, rotation_matrix_exact
from rblkit.linsys import build_param_system, cancel_translation
from rblkit.scenario import make_ground_truth, simulate_ranges

TOY_CFG = GabpConfig(
    prior_var_theta=1.0,
    prior_var_t=1.0,
    lambda_max=3000,
    rho=0.5,
    convergence_tol=1e-12,
)


def _converge(system, cfg, iterations=None):
    state = init_state(system, cfg)
    for _ in range(iterations or cfg.lambda_max):
        state = bivariate_iteration(state, system, cfg)
    return state


def _cube_system(scenario, sigma, seed, mode="small-angle-rotation", true_norms=True):
    sc = replace(scenario, generator_mode=mode)
    rng = np.random.default_rng(seed)
    truth = make_ground_truth(sc, rng)
    ranges = simulate_ranges(truth.positions, sc.anchors, sigma, rng)
    if true_norms:
        norms = np.sum(truth.positions**2, axis=0)
    else:
        from rblkit.position_estimator import estimate_all_positions

        _, norms, _ = estimate_all_positions(ranges, sc.anchors)
    system = build_param_system(ranges, sc.anchors, sc.conformation, norms)
    return sc, truth, system


class TestInitState:
    def test_mses_start_at_prior(self, cube_scenario):
        _, _, system = _cube_system(cube_scenario, 0.1, seed=400)
        cfg = GabpConfig.for_prior(cube_scenario.prior)
        state = init_state(system, cfg)
        assert np.all(state.theta_mse == cfg.prior_var_theta)
        assert np.all(state.t_mse == cfg.prior_var_t)
        assert np.all(state.theta_replicas == 0.0)
        assert np.all(state.t_replicas == 0.0)

    def test_consensus_rejected_before_first_iteration(self, cube_scenario):
        _, _, system = _cube_system(cube_scenario, 0.1, seed=400)
        cfg = GabpConfig.for_prior(cube_scenario.prior)
        state = init_state(system, cfg)
        with pytest.raises(RblError):
            consensus(state, system)
        state = bivariate_iteration(state, system, cfg)
        consensus(state, system)  # defined after one sweep

    def test_deterministic(self, cube_scenario):
        _, _, system = _cube_system(cube_scenario, 0.1, seed=400)
        cfg = GabpConfig.for_prior(cube_scenario.prior)
        s1 = init_state(system, cfg)
        s2 = init_state(system, cfg)
        assert np.array_equal(s1.cond_var_theta, s2.cond_var_theta)
        assert np.array_equal(s1.soft_ic_t, s2.soft_ic_t)


class TestDamping:
    def test_rho_one_freezes_state(self, cube_scenario):
        _, _, system = _cube_system(cube_scenario, 0.1, seed=401)
        cfg = GabpConfig.for_prior(cube_scenario.prior, rho=1.0)
        state = init_state(system, cfg)
        frozen = bivariate_iteration(state, system, cfg)
        assert np.array_equal(frozen.theta_replicas, state.theta_replicas)
        assert np.array_equal(frozen.t_mse, state.t_mse)

    def test_damped_update_is_convex_combination(self, cube_scenario):
        _, _, system = _cube_system(cube_scenario, 0.1, seed=401)
        base = GabpConfig.for_prior(cube_scenario.prior)
        state = init_state(system, base)
        undamped = bivariate_iteration(
            state, system, replace(base, rho=0.0)
        )
        damped = bivariate_iteration(state, system, replace(base, rho=0.5))
        np.testing.assert_allclose(
            damped.theta_replicas,
            0.5 * state.theta_replicas + 0.5 * undamped.theta_replicas,
            atol=1e-15,
        )
        np.testing.assert_allclose(
            damped.t_mse, 0.5 * state.t_mse + 0.5 * undamped.t_mse, atol=1e-15
        )

    def test_fixed_point_independent_of_damping(self, cube_scenario):
        _, _, system = _cube_system(cube_scenario, 0.1, seed=402)
        results = []
        for rho in (0.3, 0.7):
            cfg = GabpConfig.for_prior(cube_scenario.prior, rho=rho, lambda_max=500)
            state = _converge(system, cfg, iterations=500)
            est = consensus(state, system)
            results.append(
                np.concatenate([est.angles.as_array, est.translation.as_array])
            )
        np.testing.assert_allclose(results[0], results[1], atol=1e-5)


class TestToyOracle:
    def test_converged_consensus_matches_dense_posterior(self):
        rng = np.random.default_rng(403)
        for _ in range(20):
            z, h_theta, h_t, row_var, p_theta, p_t, _ = random_toy_system(rng)
            system = toy_param_system(z, h_theta, h_t, row_var)
            cfg = replace(TOY_CFG, prior_var_theta=p_theta, prior_var_t=p_t)
            state = _converge(system, cfg)
            est = consensus(state, system)
            got = np.concatenate([est.angles.as_array, est.translation.as_array])
            want = dense_posterior_mean(z, h_theta, h_t, row_var, p_theta, p_t)
            np.testing.assert_allclose(got, want, atol=1e-6)

    def test_consensus_permutation_invariant(self):
        rng = np.random.default_rng(404)
        z, h_theta, h_t, row_var, p_theta, p_t, _ = random_toy_system(rng, rows=12)
        cfg = replace(TOY_CFG, prior_var_theta=p_theta, prior_var_t=p_t)
        perm = rng.permutation(12)
        results = []
        for order in (np.arange(12), perm):
            system = toy_param_system(
                z[order], h_theta[order], h_t[order], row_var[order]
            )
            state = _converge(system, cfg, iterations=300)
            est = consensus(state, system)
            results.append(
                np.concatenate([est.angles.as_array, est.translation.as_array])
            )
        np.testing.assert_allclose(results[0], results[1], atol=1e-12)

    def test_posterior_variances_positive(self):
        rng = np.random.default_rng(405)
        z, h_theta, h_t, row_var, p_theta, p_t, _ = random_toy_system(rng)
        system = toy_param_system(z, h_theta, h_t, row_var)
        cfg = replace(TOY_CFG, prior_var_theta=p_theta, prior_var_t=p_t)
        est = consensus(_converge(system, cfg, iterations=200), system)
        assert np.all(est.posterior_var_theta > 0)
        assert np.all(est.posterior_var_t > 0)


class TestNoiseFree:
    def test_consensus_recovers_truth(self, cube_scenario):
        _, truth, system = _cube_system(cube_scenario, 0.0, seed=406)
        cfg = GabpConfig.for_prior(cube_scenario.prior, lambda_max=200)
        state = _converge(system, cfg, iterations=200)
        est = consensus(state, system)
        assert np.abs(est.angles.as_array - truth.angles.as_array).max() <= 1e-6
        assert (
            np.abs(est.translation.as_array - truth.translation.as_array).max() <= 1e-6
        )

    def test_variances_stay_positive_across_sweep(self, cube_scenario):
        for sigma in cube_scenario.sigma_list:
            for rho in (0.3, 0.5, 0.7):
                _, _, system = _cube_system(cube_scenario, sigma, seed=407)
                cfg = GabpConfig.for_prior(cube_scenario.prior, rho=rho)
                state = _converge(system, cfg, iterations=cfg.lambda_max)
                assert np.all(state.cond_var_theta > 0)
                assert np.all(state.cond_var_t > 0)
                assert np.all(state.theta_mse > 0)
                assert np.all(state.t_mse > 0)


class TestRefinement:
    def test_true_translation_gives_exact_angles(self, cube_scenario):
        _, truth, system = _cube_system(cube_scenario, 0.0, seed=408)
        reduced = cancel_translation(system, truth.translation)
        cfg = GabpConfig.for_prior(cube_scenario.prior, lambda_max=200)
        state = init_refinement_state(reduced, cfg)
        for _ in range(200):
            state = refinement_iteration(state, reduced, cfg)
        angles, _ = refinement_consensus(state, reduced)
        assert np.abs(angles.as_array - truth.angles.as_array).max() <= 1e-6

    def test_matches_single_block_dense_oracle(self):
        rng = np.random.default_rng(409)
        z, h_theta, _, row_var, p_theta, _, _ = random_toy_system(rng, rows=10)
        from rblkit.linsys import ReducedSystem

        reduced = ReducedSystem(z=z, h_theta=h_theta, row_noise_var=row_var)
        cfg = replace(TOY_CFG, prior_var_theta=p_theta)
        state = init_refinement_state(reduced, cfg)
        for _ in range(2000):
            state = refinement_iteration(state, reduced, cfg)
        angles, _ = refinement_consensus(state, reduced)
        want = dense_posterior_mean_single(z, h_theta, row_var, p_theta)
        np.testing.assert_allclose(angles.as_array, want, atol=1e-6)

    def test_rho_one_freezes(self, cube_scenario):
        _, truth, system = _cube_system(cube_scenario, 0.1, seed=410)
        reduced = cancel_translation(system, truth.translation)
        cfg = GabpConfig.for_prior(cube_scenario.prior, rho=1.0)
        state = init_refinement_state(reduced, cfg)
        frozen = refinement_iteration(state, reduced, cfg)
        assert np.array_equal(frozen.theta_replicas, state.theta_replicas)
        assert np.array_equal(frozen.theta_mse, state.theta_mse)

    def test_consensus_requires_iteration(self, cube_scenario):
        _, truth, system = _cube_system(cube_scenario, 0.1, seed=410)
        reduced = cancel_translation(system, truth.translation)
        cfg = GabpConfig.for_prior(cube_scenario.prior)
        state = init_refinement_state(reduced, cfg)
        with pytest.raises(RblError):
            refinement_consensus(state, reduced)


class TestRunDoubleGabp:
    def test_noise_free_recovery(self, cube_scenario):
        _, truth, system = _cube_system(cube_scenario, 0.0, seed=411)
        cfg = GabpConfig.for_prior(cube_scenario.prior)
        result = run_double_gabp(system, cfg)
        est = result.estimate
        assert np.abs(est.angles.as_array - truth.angles.as_array).max() <= 1e-6
        assert (
            np.abs(est.translation.as_array - truth.translation.as_array).max() <= 1e-6
        )
        assert result.converged_stage_a and result.converged_stage_b
        # translation comes from stage A unchanged
        assert np.array_equal(
            est.translation.as_array, result.stage_a.translation.as_array
        )

    def test_linearization_bias_quarters_when_angles_halve(self, cube_scenario):
        rng = np.random.default_rng(412)
        cfg = GabpConfig.for_prior(cube_scenario.prior, lambda_max=200)
        ratios = []
        for _ in range(50):
            theta_full = np.deg2rad(rng.normal(0, np.sqrt(10.0), 3))
            t = TranslationVector.from_array(rng.normal(0, np.sqrt(5.0), 3))
            errors = []
            for scale in (1.0, 0.5):
                angles = EulerAngles.from_array(theta_full * scale)
                positions = apply_rigid_transform(
                    rotation_matrix_exact(angles), t, cube_scenario.conformation
                )
                ranges = simulate_ranges(positions, cube_scenario.anchors, 0.0, rng)
                norms = np.sum(positions**2, axis=0)
                system = build_param_system(
                    ranges, cube_scenario.anchors, cube_scenario.conformation, norms
                )
                result = run_double_gabp(system, cfg)
                errors.append(
                    np.linalg.norm(result.estimate.angles.as_array - angles.as_array)
                )
            ratios.append(errors[0] / errors[1])
        assert 3.0 <= np.median(ratios) <= 5.0

    def test_stage_b_not_worse_than_stage_a(self, cube_scenario):
        """On stacked systems the stages tie; allow only fp-level slack."""
        root = np.random.SeedSequence(413)
        sq_a = []
        sq_b = []
        for child in root.spawn(100):
            rng = np.random.default_rng(child)
            truth = make_ground_truth(cube_scenario, rng)
            ranges = simulate_ranges(truth.positions, cube_scenario.anchors, 0.1, rng)
            norms = np.sum(truth.positions**2, axis=0)
            system = build_param_system(
                ranges, cube_scenario.anchors, cube_scenario.conformation, norms
            )
            result = run_double_gabp(
                system, GabpConfig.for_prior(cube_scenario.prior)
            )
            truth_deg = truth.angles.as_degrees
            sq_a.append(
                np.sum((result.stage_a.angles.as_degrees - truth_deg) ** 2)
            )
            sq_b.append(
                np.sum((result.estimate.angles.as_degrees - truth_deg) ** 2)
            )
        rmse_a = np.sqrt(np.mean(sq_a))
        rmse_b = np.sqrt(np.mean(sq_b))
        assert rmse_b <= rmse_a * (1.0 + 1e-6)

    def test_per_sensor_mode_runs_and_estimates_translation(self, cube_scenario):
        # A single sensor position carries 3 observables for 6 parameters
        # (null direction t = -theta x c_n), so each per-sensor posterior
        # splits the transform between the blocks by prior weight; the
        # c_n-dependent part cancels in the average over a centered body,
        # leaving a small prior-mixing residual even noise-free.
        _, truth, system = _cube_system(cube_scenario, 0.0, seed=414)
        cfg = GabpConfig.for_prior(cube_scenario.prior)
        result = run_double_gabp(system, cfg, mode="per-sensor")
        assert (
            np.abs(
                result.estimate.translation.as_array - truth.translation.as_array
            ).max()
            <= 5e-3
        )

    def test_unknown_mode_rejected(self, cube_scenario):
        _, _, system = _cube_system(cube_scenario, 0.1, seed=415)
        with pytest.raises(RblError):
            run_double_gabp(
                system, GabpConfig.for_prior(cube_scenario.prior), mode="hybrid"
            )


class TestGenieBound:
    def test_noise_free_errors_vanish(self, cube_scenario):
        _, truth, system = _cube_system(cube_scenario, 0.0, seed=416)
        cfg = GabpConfig.for_prior(cube_scenario.prior)
        genie = genie_bound(system, truth, cfg)
        assert np.abs(genie.theta_error).max() <= 1e-9
        assert np.abs(genie.t_error).max() <= 1e-9

    def test_dominates_double_gabp(self, cube_scenario):
        root = np.random.SeedSequence(417)
        cfg = GabpConfig.for_prior(cube_scenario.prior)
        for sigma in (0.05, 0.5):
            genie_sq = []
            gabp_sq = []
            for child in root.spawn(60):
                rng = np.random.default_rng(child)
                truth = make_ground_truth(cube_scenario, rng)
                ranges = simulate_ranges(
                    truth.positions, cube_scenario.anchors, sigma, rng
                )
                norms = np.sum(truth.positions**2, axis=0)
                system = build_param_system(
                    ranges, cube_scenario.anchors, cube_scenario.conformation, norms
                )
                genie = genie_bound(system, truth, cfg)
                result = run_double_gabp(system, cfg)
                genie_sq.append(np.sum(np.rad2deg(genie.theta_error) ** 2))
                gabp_sq.append(
                    np.sum(
                        (result.estimate.angles.as_degrees - truth.angles.as_degrees)
                        ** 2
                    )
                )
            assert np.sqrt(np.mean(genie_sq)) <= np.sqrt(np.mean(gabp_sq))

    def test_monotone_in_noise(self, cube_scenario):
        cfg = GabpConfig.for_prior(cube_scenario.prior)
        rmses = []
        root = np.random.SeedSequence(418)
        for sigma_seed, sigma in zip(root.spawn(3), (0.01, 0.1, 1.0)):
            sq = []
            for child in sigma_seed.spawn(100):
                rng = np.random.default_rng(child)
                truth = make_ground_truth(cube_scenario, rng)
                ranges = simulate_ranges(
                    truth.positions, cube_scenario.anchors, sigma, rng
                )
                norms = np.sum(truth.positions**2, axis=0)
                system = build_param_system(
                    ranges, cube_scenario.anchors, cube_scenario.conformation, norms
                )
                genie = genie_bound(system, truth, cfg)
                sq.append(np.sum(genie.theta_error**2) + np.sum(genie.t_error**2))
            rmses.append(np.sqrt(np.mean(sq)))
        assert rmses[0] <= rmses[1] <= rmses[2]


class TestConfigAndErrors:
    def test_invalid_config_rejected(self):
        with pytest.raises(RblError):
            GabpConfig(prior_var_theta=1.0, prior_var_t=1.0, rho=1.5)
        with pytest.raises(RblError):
            GabpConfig(prior_var_theta=1.0, prior_var_t=1.0, lambda_max=0)
        with pytest.raises(RblError):
            GabpConfig(prior_var_theta=-1.0, prior_var_t=1.0)
        with pytest.raises(RblError):
            GabpConfig(prior_var_theta=1.0, prior_var_t=1.0, noise_mode="exact")

    def test_degenerate_variance_names_offending_row(self):
        rng = np.random.default_rng(419)
        z, h_theta, h_t, row_var, _, _, _ = random_toy_system(rng, rows=8)
        row_var = row_var.copy()
        row_var[3] = np.nan
        system = toy_param_system(z, h_theta, h_t, row_var)
        with pytest.raises(NumericalDegeneracyError, match="row 3"):
            init_state(system, TOY_CFG)

    def test_scalar_noise_mode_matches_uniform_oracle(self):
        rng = np.random.default_rng(420)
        z, h_theta, h_t, row_var, p_theta, p_t, _ = random_toy_system(rng, rows=12)
        system = toy_param_system(z, h_theta, h_t, row_var)
        cfg = replace(
            TOY_CFG, prior_var_theta=p_theta, prior_var_t=p_t, noise_mode="scalar"
        )
        state = _converge(system, cfg, iterations=500)
        est = consensus(state, system)
        got = np.concatenate([est.angles.as_array, est.translation.as_array])
        uniform = np.full_like(row_var, row_var.mean())
        want = dense_posterior_mean(z, h_theta, h_t, uniform, p_theta, p_t)
        np.testing.assert_allclose(got, want, atol=1e-6)
