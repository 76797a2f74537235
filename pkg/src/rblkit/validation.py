"""Self-check suite: fast, deterministic invariant checks on a scenario.

Each check exercises one contract of the toolkit (rotation algebra,
system assembly consistency, estimator exactness in the noise-free limit,
alignment round trips) and reports pass/fail with a short detail string.
Backed by fixed internal seeds so results are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .gabp import GabpConfig, consensus, genie_bound, init_state, bivariate_iteration, run_double_gabp
from .geometry import (
    EulerAngles,
    apply_rigid_transform,
    euler_from_rotation,
    linearization_constants,
    rotation_matrix_exact,
    rotation_matrix_small_angle,
)
from .linsys import (
    CompositeNoiseStats,
    build_param_system,
    build_position_system,
    cancel_translation,
)
from .montecarlo import compute_rmse
from .position_estimator import estimate_position_two_stage
from .procrustes import procrustes_extract
from .scenario import (
    Scenario,
    make_ground_truth,
    sample_transform,
    simulate_ranges,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _result(name: str, passed: bool, detail: str) -> CheckResult:
    return CheckResult(name=name, passed=bool(passed), detail=detail)


def _check_geometry_orthogonality() -> CheckResult:
    rng = np.random.default_rng(101)
    worst_ortho = worst_det = 0.0
    for _ in range(1000):
        angles = EulerAngles.from_array(rng.uniform(-np.pi, np.pi, 3))
        Q = rotation_matrix_exact(angles)
        worst_ortho = max(worst_ortho, np.linalg.norm(Q.T @ Q - np.eye(3)))
        worst_det = max(worst_det, abs(np.linalg.det(Q) - 1.0))
    ok = worst_ortho <= 1e-12 and worst_det <= 1e-12
    return _result(
        "geometry.orthogonality",
        ok,
        f"max ||Q'Q-I||={worst_ortho:.2e}, max |det-1|={worst_det:.2e}",
    )


def _check_vec_identity() -> CheckResult:
    rng = np.random.default_rng(102)
    constants = linearization_constants()
    for _ in range(100):
        theta = rng.normal(0, 0.2, 3)
        lhs = rotation_matrix_small_angle(EulerAngles.from_array(theta)).flatten(order="F")
        rhs = constants.gamma + constants.L @ theta
        if not np.array_equal(lhs, rhs):
            return _result("geometry.vec_identity", False, "identity violated")
    return _result("geometry.vec_identity", True, "exact over 100 random angle triples")


def _check_small_angle_bound() -> CheckResult:
    rng = np.random.default_rng(103)
    worst = 0.0
    for _ in range(2000):
        direction = rng.normal(size=3)
        theta = direction / np.linalg.norm(direction) * rng.uniform(1e-3, 0.35)
        angles = EulerAngles.from_array(theta)
        err = np.linalg.norm(
            rotation_matrix_exact(angles) - rotation_matrix_small_angle(angles), "fro"
        )
        worst = max(worst, err / float(theta @ theta))
    return _result(
        "geometry.small_angle_bound", worst <= 2.0, f"max error/||theta||^2 = {worst:.3f}"
    )


def _check_euler_round_trip() -> CheckResult:
    rng = np.random.default_rng(104)
    worst = 0.0
    for _ in range(200):
        angles = EulerAngles.from_array(
            np.deg2rad(rng.uniform([-179, -84, -179], [179, 84, 179]))
        )
        Q = rotation_matrix_exact(angles)
        recovered, locked = euler_from_rotation(Q)
        if locked:
            return _result("geometry.euler_round_trip", False, "spurious gimbal flag")
        worst = max(
            worst, np.linalg.norm(rotation_matrix_exact(recovered) - Q, "fro")
        )
    return _result("geometry.euler_round_trip", worst <= 1e-9, f"max ||dQ||={worst:.2e}")


def _check_noise_free_ranges(scenario: Scenario) -> CheckResult:
    rng = np.random.default_rng(105)
    truth = make_ground_truth(scenario, rng)
    ranges = simulate_ranges(truth.positions, scenario.anchors, 0.0, rng)
    worst = 0.0
    for m in range(scenario.m_anchors):
        for n in range(scenario.n_sensors):
            d = np.linalg.norm(scenario.anchors[:, m] - truth.positions[:, n])
            worst = max(worst, abs(ranges.d_tilde[m, n] - d))
    # per-pair recomputation takes a different float path; allow last-ulp slack
    return _result("scenario.noise_free_ranges", worst <= 1e-12, f"max |d - d~|={worst:.2e}")


def _check_scenario_determinism(scenario: Scenario) -> CheckResult:
    def draw():
        rng = np.random.default_rng(106)
        truth = make_ground_truth(scenario, rng)
        ranges = simulate_ranges(truth.positions, scenario.anchors, 0.25, rng)
        return truth, ranges

    t1, r1 = draw()
    t2, r2 = draw()
    ok = (
        np.array_equal(t1.positions, t2.positions)
        and np.array_equal(r1.d_tilde, r2.d_tilde)
    )
    return _result("scenario.determinism", ok, "equal seeds give bit-identical draws")


def _check_ground_truth_invariant(scenario: Scenario) -> CheckResult:
    worst = 0.0
    for mode in ("exact-rotation", "small-angle-rotation"):
        sc = replace(scenario, generator_mode=mode)
        truth = make_ground_truth(sc, np.random.default_rng(107))
        Q = (
            rotation_matrix_exact(truth.angles)
            if mode == "exact-rotation"
            else rotation_matrix_small_angle(truth.angles)
        )
        rebuilt = apply_rigid_transform(Q, truth.translation, sc.conformation)
        worst = max(worst, float(np.abs(rebuilt - truth.positions).max()))
    return _result("scenario.ground_truth_invariant", worst <= 1e-12, f"max dev={worst:.2e}")


def _check_position_system_consistency(scenario: Scenario) -> CheckResult:
    rng = np.random.default_rng(108)
    truth = make_ground_truth(scenario, rng)
    ranges = simulate_ranges(truth.positions, scenario.anchors, 0.0, rng)
    worst = 0.0
    for n in range(scenario.n_sensors):
        sys_n = build_position_system(ranges, scenario.anchors, n)
        s = truth.positions[:, n]
        x = np.concatenate([s, [s @ s]])
        worst = max(worst, float(np.abs(sys_n.y - sys_n.G @ x).max()))
    return _result("linsys.position_consistency", worst <= 1e-9, f"max residual={worst:.2e}")


def _check_param_system_consistency(scenario: Scenario) -> CheckResult:
    sc = replace(scenario, generator_mode="small-angle-rotation")
    rng = np.random.default_rng(109)
    truth = make_ground_truth(sc, rng)
    ranges = simulate_ranges(truth.positions, sc.anchors, 0.0, rng)
    norms = np.sum(truth.positions**2, axis=0)
    system = build_param_system(ranges, sc.anchors, sc.conformation, norms)
    residual = system.z - system.h_theta @ truth.angles.as_array
    residual -= system.h_t @ truth.translation.as_array
    worst = float(np.abs(residual).max())
    return _result("linsys.param_consistency", worst <= 1e-9, f"max residual={worst:.2e}")


def _check_param_system_structure(scenario: Scenario) -> CheckResult:
    rng = np.random.default_rng(110)
    truth = make_ground_truth(scenario, rng)
    ranges = simulate_ranges(truth.positions, scenario.anchors, 0.1, rng)
    norms = np.sum(truth.positions**2, axis=0)
    base = build_param_system(ranges, scenario.anchors, scenario.conformation, norms)
    other = build_param_system(
        ranges, scenario.anchors, 0.5 * scenario.conformation, norms
    )
    h_t_fixed = np.array_equal(base.h_t, other.h_t)
    h_theta_linear = np.allclose(other.h_theta, 0.5 * base.h_theta, atol=1e-12)
    ok = h_t_fixed and h_theta_linear
    return _result(
        "linsys.structure",
        ok,
        "H_t independent of conformation; H_theta linear in conformation",
    )


def _check_position_estimator(scenario: Scenario) -> CheckResult:
    rng = np.random.default_rng(111)
    truth = make_ground_truth(scenario, rng)
    ranges = simulate_ranges(truth.positions, scenario.anchors, 0.0, rng)
    worst_pos = worst_norm = 0.0
    for n in range(scenario.n_sensors):
        noise = CompositeNoiseStats.from_ranges(ranges.d_tilde[:, n], 0.0)
        est = estimate_position_two_stage(
            build_position_system(ranges, scenario.anchors, n), noise
        )
        worst_pos = max(worst_pos, float(np.abs(est.s_hat - truth.positions[:, n]).max()))
        worst_norm = max(
            worst_norm,
            abs(est.s_norm_sq_hat - float(est.s_hat @ est.s_hat))
            / max(1.0, float(est.s_hat @ est.s_hat)),
        )
    ok = worst_pos <= 1e-9 and worst_norm <= 1e-6
    return _result(
        "position.noise_free_exactness",
        ok,
        f"max |ds|={worst_pos:.2e}, max norm mismatch={worst_norm:.2e}",
    )


def _dense_posterior(z, h_theta, h_t, row_var, prior_theta, prior_t):
    H = np.hstack([h_theta, h_t])
    w = 1.0 / row_var
    prior_prec = np.diag([1.0 / prior_theta] * 3 + [1.0 / prior_t] * 3)
    return np.linalg.solve(H.T @ (H * w[:, None]) + prior_prec, H.T @ (z * w))


def _check_gabp_toy_oracle() -> CheckResult:
    rng = np.random.default_rng(112)
    worst = 0.0
    for _ in range(3):
        rows = int(rng.integers(8, 17))
        H = rng.normal(size=(rows, 6))
        row_var = rng.uniform(0.5, 2.0, rows)
        x = rng.normal(0, 1.0, 6)
        z = H @ x + rng.normal(0, np.sqrt(row_var))
        cfg = GabpConfig(
            prior_var_theta=1.0, prior_var_t=1.0, lambda_max=2000,
            rho=0.5, convergence_tol=1e-12,
        )
        system = _toy_param_system(z, H[:, :3], H[:, 3:], row_var)
        state = init_state(system, cfg)
        for _ in range(cfg.lambda_max):
            state = bivariate_iteration(state, system, cfg)
        est = consensus(state, system)
        got = np.concatenate([est.angles.as_array, est.translation.as_array])
        want = _dense_posterior(z, H[:, :3], H[:, 3:], row_var, 1.0, 1.0)
        worst = max(worst, float(np.abs(got - want).max()))
    return _result("gabp.toy_oracle", worst <= 1e-6, f"max |consensus - posterior|={worst:.2e}")


def _toy_param_system(z, h_theta, h_t, row_var):
    from .linsys import ParamSystem

    rows = z.shape[0]
    return ParamSystem(
        z=z,
        h_theta=h_theta,
        h_t=h_t,
        row_noise_var=row_var,
        row_sensor=np.zeros(rows, dtype=int),
        row_anchor=np.arange(rows),
        anchors=np.zeros((3, rows)),
        conformation=np.zeros((3, 1)),
        ranges=np.zeros((rows, 1)),
        s_norm_sq=np.zeros(1),
        sigma_w=0.0,
    )


def _check_gabp_noise_free(scenario: Scenario) -> CheckResult:
    sc = replace(scenario, generator_mode="small-angle-rotation")
    rng = np.random.default_rng(113)
    truth = make_ground_truth(sc, rng)
    ranges = simulate_ranges(truth.positions, sc.anchors, 0.0, rng)
    norms = np.sum(truth.positions**2, axis=0)
    system = build_param_system(ranges, sc.anchors, sc.conformation, norms)
    cfg = GabpConfig.for_prior(sc.prior)
    result = run_double_gabp(system, cfg)
    err = max(
        float(np.abs(result.estimate.angles.as_degrees - truth.angles.as_degrees).max()),
        float(
            np.abs(
                result.estimate.translation.as_array - truth.translation.as_array
            ).max()
        ),
    )
    genie = genie_bound(system, truth, cfg)
    genie_err = max(
        float(np.abs(genie.theta_error).max()), float(np.abs(genie.t_error).max())
    )
    ok = err <= 1e-5 and genie_err <= 1e-6
    return _result(
        "gabp.noise_free_recovery", ok, f"max estimator err={err:.2e}, genie err={genie_err:.2e}"
    )


def _check_cancellation(scenario: Scenario) -> CheckResult:
    sc = replace(scenario, generator_mode="small-angle-rotation")
    rng = np.random.default_rng(114)
    truth = make_ground_truth(sc, rng)
    ranges = simulate_ranges(truth.positions, sc.anchors, 0.0, rng)
    norms = np.sum(truth.positions**2, axis=0)
    system = build_param_system(ranges, sc.anchors, sc.conformation, norms)
    reduced = cancel_translation(system, truth.translation)
    worst = float(
        np.abs(reduced.z - reduced.h_theta @ truth.angles.as_array).max()
    )
    return _result("linsys.cancellation", worst <= 1e-9, f"max residual={worst:.2e}")


def _check_procrustes(scenario: Scenario) -> CheckResult:
    rng = np.random.default_rng(115)
    prior = scenario.prior
    worst = 0.0
    for _ in range(20):
        angles, t = sample_transform(prior, rng)
        Q = rotation_matrix_exact(angles)
        s = apply_rigid_transform(Q, t, scenario.conformation)
        pose = procrustes_extract(s, scenario.conformation)
        worst = max(
            worst,
            float(np.abs(pose.Q_hat - Q).max()),
            float(np.abs(pose.t_hat.as_array - t.as_array).max()),
            abs(np.linalg.det(pose.Q_hat) - 1.0),
        )
    return _result("procrustes.round_trip", worst <= 1e-9, f"max dev={worst:.2e}")


def _check_rmse_formula() -> CheckResult:
    single = compute_rmse([np.array([3.0, 4.0])], np.zeros(2))
    double = compute_rmse(
        [np.array([1.0, 0.0, 0.0]), np.array([0.0, 2.0, 0.0])], np.zeros(3)
    )
    ok = abs(single - 5.0) <= 1e-12 and abs(double - np.sqrt(2.5)) <= 1e-12
    return _result("harness.rmse_formula", ok, f"values {single:.6f}, {double:.6f}")


def run_validation(scenario: Scenario) -> list[CheckResult]:
    """Run every invariant check against the given scenario."""
    checks = [
        _check_geometry_orthogonality(),
        _check_vec_identity(),
        _check_small_angle_bound(),
        _check_euler_round_trip(),
        _check_noise_free_ranges(scenario),
        _check_scenario_determinism(scenario),
        _check_ground_truth_invariant(scenario),
        _check_position_system_consistency(scenario),
        _check_param_system_consistency(scenario),
        _check_param_system_structure(scenario),
        _check_position_estimator(scenario),
        _check_gabp_toy_oracle(),
        _check_gabp_noise_free(scenario),
        _check_cancellation(scenario),
        _check_procrustes(scenario),
        _check_rmse_formula(),
    ]
    return checks
