"""Gaussian belief propagation estimators for the transformation parameters.

The stacked squared-range system couples two variable blocks: three
rotation angles and three translation components.  A bivariate message
passing scheme estimates both jointly; a second, single-block pass on the
translation-cancelled system refines the angles.  Messages are scalar
per (row, parameter) edge:

* soft interference cancellation removes the current soft replicas of all
  other parameters from each observation,
* conditional variances combine the replica MSEs with the row noise,
* extrinsic statistics combine all rows but the target row (leave-one-out
  matched filtering),
* a Gaussian prior denoises the extrinsic estimate, and
* the replicas and MSEs are updated with convex damping.

The consensus estimate fuses all rows plus the prior; at a fixed point it
equals the exact posterior mean of the linear-Gaussian model.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericalDegeneracyError, RblError
from .geometry import EulerAngles, TranslationVector
from .linsys import ParamSystem, ReducedSystem, cancel_translation
from .scenario import GroundTruth, TransformPrior

NOISE_MODES = ("per-row", "scalar")


@dataclass(frozen=True)
class GabpConfig:
    """Tuning knobs for both message passing stages.

    Prior variances are in radians^2 (angles) and m^2 (translation).
    ``noise_mode`` selects per-row composite-noise variances or a single
    scalar (their mean) for the conditional-variance noise term.
    """

    prior_var_theta: float
    prior_var_t: float
    lambda_max: int = 100
    rho: float = 0.5
    noise_mode: str = "per-row"
    convergence_tol: float = 1e-8
    variance_floor: float = 1e-12

    def __post_init__(self) -> None:
        if self.lambda_max < 1:
            raise RblError("lambda_max must be at least 1")
        # rho = 1 freezes the state; accepted so the damping rule itself
        # can be exercised, but useless for actual estimation.
        if not 0.0 <= self.rho <= 1.0:
            raise RblError("damping factor rho must lie in [0, 1]")
        if self.noise_mode not in NOISE_MODES:
            raise RblError(f"noise_mode must be one of {NOISE_MODES}")
        if self.prior_var_theta <= 0 or self.prior_var_t <= 0:
            raise RblError("prior variances must be strictly positive")

    @classmethod
    def for_prior(cls, prior: TransformPrior, **overrides) -> "GabpConfig":
        """Config with prior variances taken from a scenario prior."""
        return cls(
            prior_var_theta=prior.phi_theta_rad2,
            prior_var_t=prior.phi_t_m2,
            **overrides,
        )


@dataclass(frozen=True)
class ConsensusEstimate:
    """Full-sum fused estimate of the transformation parameters."""

    angles: EulerAngles
    translation: TranslationVector
    posterior_var_theta: np.ndarray  # (3,) radians^2
    posterior_var_t: np.ndarray  # (3,) m^2
    iterations: int
    converged: bool


@dataclass(frozen=True)
class GabpState:
    """Per-edge beliefs of the bivariate stage.

    ``theta_replicas``/``t_replicas`` hold the soft replicas per (row,
    parameter) edge, ``theta_mse``/``t_mse`` their MSEs.  The message
    statistics (soft-IC observations, conditional variances, extrinsic
    mean/variance) of the most recent iteration are kept so the consensus
    can be formed from the final messages.
    """

    theta_replicas: np.ndarray  # (R, 3)
    t_replicas: np.ndarray  # (R, 3)
    theta_mse: np.ndarray  # (R, 3)
    t_mse: np.ndarray  # (R, 3)
    soft_ic_theta: np.ndarray  # (R, 3)
    soft_ic_t: np.ndarray  # (R, 3)
    cond_var_theta: np.ndarray  # (R, 3)
    cond_var_t: np.ndarray  # (R, 3)
    ext_mean_theta: np.ndarray  # (R, 3)
    ext_var_theta: np.ndarray  # (R, 3)
    ext_mean_t: np.ndarray  # (R, 3)
    ext_var_t: np.ndarray  # (R, 3)
    prior_var_theta: float
    prior_var_t: float
    iterations: int


@dataclass(frozen=True)
class RefinementState:
    """Per-edge beliefs of the single-block (angles only) stage."""

    theta_replicas: np.ndarray
    theta_mse: np.ndarray
    soft_ic_theta: np.ndarray
    cond_var_theta: np.ndarray
    ext_mean_theta: np.ndarray
    ext_var_theta: np.ndarray
    prior_var_theta: float
    iterations: int


@dataclass(frozen=True)
class DoubleGabpResult:
    """Outcome of the two-stage run.

    ``estimate`` carries the refined angles and the stage-A translation
    (the second stage never re-estimates the translation).  The stage-A
    consensus is retained for ablation.
    """

    estimate: ConsensusEstimate
    stage_a: ConsensusEstimate
    iterations_stage_a: int
    iterations_stage_b: int
    converged_stage_a: bool
    converged_stage_b: bool


@dataclass(frozen=True)
class GenieResult:
    """Per-parameter errors of the genie-aided single-parameter bound."""

    theta_error: np.ndarray  # (3,) radians
    t_error: np.ndarray  # (3,) meters


def _resolved_row_var(row_noise_var: np.ndarray, cfg: GabpConfig) -> np.ndarray:
    """Row noise term per config: per-row values or their scalar mean, floored."""
    if cfg.noise_mode == "scalar":
        var = np.full_like(row_noise_var, row_noise_var.mean())
    else:
        var = row_noise_var
    return np.maximum(var, cfg.variance_floor)


def _check_cond_var(cond_var: np.ndarray, label: str) -> None:
    if not np.all(cond_var > 0):
        row = int(np.argwhere(~(cond_var > 0))[0][0])
        raise NumericalDegeneracyError(
            f"non-positive conditional variance in {label} block at row {row}"
        )


def _message_stats(z, h, replicas, mse, cross_mean, cross_power, row_var, label):
    """Soft-IC observations, conditional variances and extrinsic stats.

    ``cross_mean``/``cross_power`` are the total replica contribution and
    replica-weighted power of the other variable block per row (zero for
    the single-block stage): soft interference cancellation removes the
    same block's other parameters and the whole other block.  Extrinsic
    statistics are leave-one-out sums over rows.  Returns the precision
    form (weighted-mean numerators and precisions) alongside mean/variance
    arrays for inspection.
    """
    contrib = h * replicas
    total = contrib.sum(axis=1, keepdims=True)
    soft_ic = z[:, None] - (total - contrib) - cross_mean
    power = h**2 * mse
    power_sum = power.sum(axis=1, keepdims=True)
    cond_var = power_sum - power + cross_power + row_var[:, None]
    _check_cond_var(cond_var, label)
    prec = h**2 / cond_var
    wmean = h * soft_ic / cond_var
    loo_prec = prec.sum(axis=0, keepdims=True) - prec
    loo_wmean = wmean.sum(axis=0, keepdims=True) - wmean
    with np.errstate(divide="ignore", invalid="ignore"):
        ext_var = np.where(loo_prec > 0, 1.0 / loo_prec, np.inf)
        ext_mean = np.where(loo_prec > 0, loo_wmean / loo_prec, 0.0)
    return soft_ic, cond_var, prec, wmean, loo_prec, loo_wmean, ext_mean, ext_var


def _denoise(loo_wmean, loo_prec, prior_var):
    """Fuse extrinsic statistics with the zero-mean Gaussian prior.

    Written in precision form, algebraically equal to
    ``prior * mean / (prior + var)`` but safe when a column has no
    extrinsic information.
    """
    post_prec = 1.0 / prior_var + loo_prec
    return loo_wmean / post_prec, 1.0 / post_prec


def init_state(sys: ParamSystem, cfg: GabpConfig) -> GabpState:
    """Initial beliefs: replicas at the prior mean, MSEs at the prior variances.

    The message statistics are derived consistently from these initial
    beliefs; the consensus is defined only after at least one iteration.
    """
    rows = sys.n_rows
    theta_replicas = np.zeros((rows, 3))
    t_replicas = np.zeros((rows, 3))
    theta_mse = np.full((rows, 3), cfg.prior_var_theta)
    t_mse = np.full((rows, 3), cfg.prior_var_t)
    row_var = _resolved_row_var(sys.row_noise_var, cfg)
    t_mean = (sys.h_t * t_replicas).sum(axis=1, keepdims=True)
    theta_mean = (sys.h_theta * theta_replicas).sum(axis=1, keepdims=True)
    t_power = (sys.h_t**2 * t_mse).sum(axis=1, keepdims=True)
    theta_power = (sys.h_theta**2 * theta_mse).sum(axis=1, keepdims=True)
    s_th = _message_stats(
        sys.z, sys.h_theta, theta_replicas, theta_mse, t_mean, t_power, row_var, "theta"
    )
    s_t = _message_stats(
        sys.z, sys.h_t, t_replicas, t_mse, theta_mean, theta_power, row_var, "translation"
    )
    return GabpState(
        theta_replicas=theta_replicas,
        t_replicas=t_replicas,
        theta_mse=theta_mse,
        t_mse=t_mse,
        soft_ic_theta=s_th[0],
        soft_ic_t=s_t[0],
        cond_var_theta=s_th[1],
        cond_var_t=s_t[1],
        ext_mean_theta=s_th[6],
        ext_var_theta=s_th[7],
        ext_mean_t=s_t[6],
        ext_var_t=s_t[7],
        prior_var_theta=cfg.prior_var_theta,
        prior_var_t=cfg.prior_var_t,
        iterations=0,
    )


def bivariate_iteration(state: GabpState, sys: ParamSystem, cfg: GabpConfig) -> GabpState:
    """One parallel message passing sweep over both variable blocks."""
    if state.theta_replicas.shape[0] != sys.n_rows:
        raise RblError("state shape does not match system")
    row_var = _resolved_row_var(sys.row_noise_var, cfg)
    t_mean = (sys.h_t * state.t_replicas).sum(axis=1, keepdims=True)
    theta_mean = (sys.h_theta * state.theta_replicas).sum(axis=1, keepdims=True)
    t_power = (sys.h_t**2 * state.t_mse).sum(axis=1, keepdims=True)
    theta_power = (sys.h_theta**2 * state.theta_mse).sum(axis=1, keepdims=True)
    s_th = _message_stats(
        sys.z, sys.h_theta, state.theta_replicas, state.theta_mse,
        t_mean, t_power, row_var, "theta",
    )
    s_t = _message_stats(
        sys.z, sys.h_t, state.t_replicas, state.t_mse,
        theta_mean, theta_power, row_var, "translation",
    )
    den_theta, den_theta_mse = _denoise(s_th[5], s_th[4], cfg.prior_var_theta)
    den_t, den_t_mse = _denoise(s_t[5], s_t[4], cfg.prior_var_t)
    rho = cfg.rho
    return GabpState(
        theta_replicas=rho * state.theta_replicas + (1.0 - rho) * den_theta,
        t_replicas=rho * state.t_replicas + (1.0 - rho) * den_t,
        theta_mse=rho * state.theta_mse + (1.0 - rho) * den_theta_mse,
        t_mse=rho * state.t_mse + (1.0 - rho) * den_t_mse,
        soft_ic_theta=s_th[0],
        soft_ic_t=s_t[0],
        cond_var_theta=s_th[1],
        cond_var_t=s_t[1],
        ext_mean_theta=s_th[6],
        ext_var_theta=s_th[7],
        ext_mean_t=s_t[6],
        ext_var_t=s_t[7],
        prior_var_theta=state.prior_var_theta,
        prior_var_t=state.prior_var_t,
        iterations=state.iterations + 1,
    )


def _consensus_block(h, soft_ic, cond_var, prior_var):
    prec = (h**2 / cond_var).sum(axis=0)
    wmean = (h * soft_ic / cond_var).sum(axis=0)
    post_prec = 1.0 / prior_var + prec
    return wmean / post_prec, 1.0 / post_prec


def consensus(state: GabpState, sys: ParamSystem) -> ConsensusEstimate:
    """Full-sum fusion of the final messages, denoised with the priors.

    Undefined on a freshly initialized state: at least one iteration must
    have run so that the stored message statistics are meaningful.
    """
    if state.iterations < 1:
        raise RblError("consensus requires at least one completed iteration")
    theta, var_theta = _consensus_block(
        sys.h_theta, state.soft_ic_theta, state.cond_var_theta, state.prior_var_theta
    )
    t, var_t = _consensus_block(
        sys.h_t, state.soft_ic_t, state.cond_var_t, state.prior_var_t
    )
    return ConsensusEstimate(
        angles=EulerAngles.from_array(theta),
        translation=TranslationVector.from_array(t),
        posterior_var_theta=var_theta,
        posterior_var_t=var_t,
        iterations=state.iterations,
        converged=False,
    )


def init_refinement_state(reduced: ReducedSystem, cfg: GabpConfig) -> RefinementState:
    rows = reduced.z.shape[0]
    replicas = np.zeros((rows, 3))
    mse = np.full((rows, 3), cfg.prior_var_theta)
    row_var = _resolved_row_var(reduced.row_noise_var, cfg)
    s = _message_stats(
        reduced.z, reduced.h_theta, replicas, mse, 0.0, 0.0, row_var, "theta"
    )
    return RefinementState(
        theta_replicas=replicas,
        theta_mse=mse,
        soft_ic_theta=s[0],
        cond_var_theta=s[1],
        ext_mean_theta=s[6],
        ext_var_theta=s[7],
        prior_var_theta=cfg.prior_var_theta,
        iterations=0,
    )


def refinement_iteration(
    state: RefinementState, reduced: ReducedSystem, cfg: GabpConfig
) -> RefinementState:
    """One message passing sweep on the translation-cancelled system."""
    if state.theta_replicas.shape[0] != reduced.z.shape[0]:
        raise RblError("state shape does not match reduced system")
    row_var = _resolved_row_var(reduced.row_noise_var, cfg)
    s = _message_stats(
        reduced.z, reduced.h_theta, state.theta_replicas, state.theta_mse,
        0.0, 0.0, row_var, "theta",
    )
    den, den_mse = _denoise(s[5], s[4], cfg.prior_var_theta)
    rho = cfg.rho
    return RefinementState(
        theta_replicas=rho * state.theta_replicas + (1.0 - rho) * den,
        theta_mse=rho * state.theta_mse + (1.0 - rho) * den_mse,
        soft_ic_theta=s[0],
        cond_var_theta=s[1],
        ext_mean_theta=s[6],
        ext_var_theta=s[7],
        prior_var_theta=state.prior_var_theta,
        iterations=state.iterations + 1,
    )


def refinement_consensus(
    state: RefinementState, reduced: ReducedSystem
) -> tuple[EulerAngles, np.ndarray]:
    """Angle consensus of the refinement stage: (angles, posterior variances)."""
    if state.iterations < 1:
        raise RblError("consensus requires at least one completed iteration")
    theta, var_theta = _consensus_block(
        reduced.h_theta, state.soft_ic_theta, state.cond_var_theta, state.prior_var_theta
    )
    return EulerAngles.from_array(theta), var_theta


def _relative_change(new: np.ndarray, old: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(old)), 1e-30)
    return float(np.linalg.norm(new - old)) / scale


def _run_bivariate_stage(sys: ParamSystem, cfg: GabpConfig):
    state = init_state(sys, cfg)
    prev = None
    converged = False
    for _ in range(cfg.lambda_max):
        state = bivariate_iteration(state, sys, cfg)
        est = consensus(state, sys)
        vec = np.concatenate([est.angles.as_array, est.translation.as_array])
        if prev is not None and _relative_change(vec, prev) <= cfg.convergence_tol:
            converged = True
            break
        prev = vec
    final = consensus(state, sys)
    return replace(final, converged=converged), state


def _run_refinement_stage(reduced: ReducedSystem, cfg: GabpConfig):
    state = init_refinement_state(reduced, cfg)
    prev = None
    converged = False
    for _ in range(cfg.lambda_max):
        state = refinement_iteration(state, reduced, cfg)
        theta, _ = refinement_consensus(state, reduced)
        vec = theta.as_array
        if prev is not None and _relative_change(vec, prev) <= cfg.convergence_tol:
            converged = True
            break
        prev = vec
    theta, var_theta = refinement_consensus(state, reduced)
    return theta, var_theta, state.iterations, converged


def _slice_system(sys: ParamSystem, sensor: int) -> ParamSystem:
    mask = sys.row_sensor == sensor
    return ParamSystem(
        z=sys.z[mask],
        h_theta=sys.h_theta[mask],
        h_t=sys.h_t[mask],
        row_noise_var=sys.row_noise_var[mask],
        row_sensor=np.zeros(int(mask.sum()), dtype=int),
        row_anchor=sys.row_anchor[mask],
        anchors=sys.anchors,
        conformation=sys.conformation[:, sensor : sensor + 1],
        ranges=sys.ranges[:, sensor : sensor + 1],
        s_norm_sq=sys.s_norm_sq[sensor : sensor + 1],
        sigma_w=sys.sigma_w,
    )


def run_double_gabp(
    sys: ParamSystem, cfg: GabpConfig, mode: str = "stacked"
) -> DoubleGabpResult:
    """Bivariate stage, translation cancellation, then angle refinement.

    ``mode="stacked"`` (default) runs on the full stacked system so every
    sensor's rows fuse in one factor graph.  ``mode="per-sensor"`` runs
    the whole procedure independently per sensor and averages the
    estimates; kept for comparison, with the caveat that a single sensor
    cannot observe the rotation component along its own body-frame axis.

    Hitting ``lambda_max`` without meeting the convergence tolerance is a
    flagged success, not an error.
    """
    if mode == "per-sensor":
        return _run_per_sensor(sys, cfg)
    if mode != "stacked":
        raise RblError(f"unknown mode {mode!r}")

    stage_a, _ = _run_bivariate_stage(sys, cfg)
    reduced = cancel_translation(sys, stage_a.translation)
    theta_b, var_theta_b, iters_b, conv_b = _run_refinement_stage(reduced, cfg)
    final = ConsensusEstimate(
        angles=theta_b,
        translation=stage_a.translation,
        posterior_var_theta=var_theta_b,
        posterior_var_t=stage_a.posterior_var_t,
        iterations=stage_a.iterations + iters_b,
        converged=stage_a.converged and conv_b,
    )
    return DoubleGabpResult(
        estimate=final,
        stage_a=stage_a,
        iterations_stage_a=stage_a.iterations,
        iterations_stage_b=iters_b,
        converged_stage_a=stage_a.converged,
        converged_stage_b=conv_b,
    )


def _run_per_sensor(sys: ParamSystem, cfg: GabpConfig) -> DoubleGabpResult:
    sensors = np.unique(sys.row_sensor)
    finals = []
    stage_as = []
    its_a = its_b = 0
    conv_a = conv_b = True
    for n in sensors:
        sub = run_double_gabp(_slice_system(sys, int(n)), cfg, mode="stacked")
        finals.append(sub.estimate)
        stage_as.append(sub.stage_a)
        its_a += sub.iterations_stage_a
        its_b += sub.iterations_stage_b
        conv_a &= sub.converged_stage_a
        conv_b &= sub.converged_stage_b

    def _avg(estimates):
        theta = np.mean([e.angles.as_array for e in estimates], axis=0)
        t = np.mean([e.translation.as_array for e in estimates], axis=0)
        var_theta = np.mean([e.posterior_var_theta for e in estimates], axis=0)
        var_t = np.mean([e.posterior_var_t for e in estimates], axis=0)
        return theta, t, var_theta, var_t

    theta, t, var_theta, var_t = _avg(finals)
    theta_a, t_a, var_theta_a, var_t_a = _avg(stage_as)
    n_used = len(sensors)
    final = ConsensusEstimate(
        angles=EulerAngles.from_array(theta),
        translation=TranslationVector.from_array(t),
        posterior_var_theta=var_theta,
        posterior_var_t=var_t,
        iterations=its_a + its_b,
        converged=conv_a and conv_b,
    )
    stage_a = ConsensusEstimate(
        angles=EulerAngles.from_array(theta_a),
        translation=TranslationVector.from_array(t_a),
        posterior_var_theta=var_theta_a,
        posterior_var_t=var_t_a,
        iterations=its_a,
        converged=conv_a,
    )
    return DoubleGabpResult(
        estimate=final,
        stage_a=stage_a,
        iterations_stage_a=its_a // n_used,
        iterations_stage_b=its_b // n_used,
        converged_stage_a=conv_a,
        converged_stage_b=conv_b,
    )


def genie_bound(sys: ParamSystem, truth: GroundTruth, cfg: GabpConfig) -> GenieResult:
    """Single-parameter bound with all interference removed by a genie.

    For each of the six parameters, every other contribution (the other
    five parameters, the rotation linearization residual, and any
    squared-norm estimation error) is cancelled using ground truth,
    leaving only the parameter's own channel plus the realized
    measurement noise.  The scalar Gaussian posterior mean over all rows
    then gives the per-parameter error for the trial.
    """
    d_true = np.linalg.norm(
        sys.anchors[:, :, None] - truth.positions[:, None, :], axis=0
    )
    # Realized composite noise per row, sensor-major like the system rows.
    xi = (sys.ranges**2 - d_true**2).T.ravel()
    row_var = _resolved_row_var(sys.row_noise_var, cfg)
    theta_true = truth.angles.as_array
    t_true = truth.translation.as_array

    def _scalar_posterior(h: np.ndarray, truth_k: float, prior_var: float) -> float:
        z_genie = h * truth_k + xi
        prec = (h**2 / row_var).sum() + 1.0 / prior_var
        mean = (h * z_genie / row_var).sum() / prec
        return mean - truth_k

    theta_error = np.array(
        [
            _scalar_posterior(sys.h_theta[:, k], theta_true[k], cfg.prior_var_theta)
            for k in range(3)
        ]
    )
    t_error = np.array(
        [
            _scalar_posterior(sys.h_t[:, k], t_true[k], cfg.prior_var_t)
            for k in range(3)
        ]
    )
    return GenieResult(theta_error=theta_error, t_error=t_error)
