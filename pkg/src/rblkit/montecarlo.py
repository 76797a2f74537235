"""Monte-Carlo RMSE benchmarking of the transformation estimators.

One experiment sweeps a list of range-noise levels; each trial samples a
transformation from the priors, synthesizes noisy ranges, and runs the
enabled estimators.  Errors are accumulated per parameter block (rotation
in degrees, translation in meters, reconstructed sensor positions in
meters) and reduced to RMSE rows keyed by (estimator, block, sigma).

Reports serialize to CSV with 9 significant digits; a run is fully
determined by (config, seed), down to the output bytes.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import RblError
from .gabp import GabpConfig, genie_bound, run_double_gabp
from .geometry import EulerAngles, TranslationVector, rotation_matrix_exact
from .linsys import build_param_system
from .position_estimator import estimate_all_positions
from .procrustes import procrustes_extract
from .scenario import Scenario, make_ground_truth, simulate_ranges

ESTIMATORS = ("double-gabp", "stage-a-gabp", "ls-procrustes", "genie")
BLOCKS = ("rotation", "translation", "position")
NORM_SOURCES = ("true", "estimated")

CSV_HEADER = "estimator,block,sigma,rmse,trials,failures,mean_iters,converged_frac"


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one Monte-Carlo sweep."""

    scenario: Scenario
    sigma: tuple[float, ...] | None = None
    trials: int = 100
    seed: int = 0
    estimators: tuple[str, ...] = ESTIMATORS
    norm_source: str = "estimated"
    rho: float = 0.5
    lambda_max: int = 100
    noise_mode: str = "per-row"
    convergence_tol: float = 1e-8
    gabp_mode: str = "stacked"

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise RblError("trials must be at least 1")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown or not self.estimators:
            raise RblError(
                f"estimators must be a non-empty subset of {ESTIMATORS}, got {self.estimators}"
            )
        if self.norm_source not in NORM_SOURCES:
            raise RblError(f"norm_source must be one of {NORM_SOURCES}")
        if self.sigma is not None and any(s < 0 for s in self.sigma):
            raise RblError("sigma values must be non-negative")

    @property
    def sigma_values(self) -> tuple[float, ...]:
        return self.sigma if self.sigma is not None else self.scenario.sigma_list

    def gabp_config(self) -> GabpConfig:
        return GabpConfig.for_prior(
            self.scenario.prior,
            rho=self.rho,
            lambda_max=self.lambda_max,
            noise_mode=self.noise_mode,
            convergence_tol=self.convergence_tol,
        )


@dataclass(frozen=True)
class RmseRow:
    estimator: str
    block: str
    sigma: float
    rmse: float
    trials: int
    failures: int
    mean_iters: float
    converged_frac: float


@dataclass(frozen=True)
class RmseReport:
    rows: tuple[RmseRow, ...]

    def get(self, estimator: str, block: str, sigma: float) -> RmseRow:
        for row in self.rows:
            if (
                row.estimator == estimator
                and row.block == block
                and np.isclose(row.sigma, sigma)
            ):
                return row
        raise KeyError((estimator, block, sigma))


def compute_rmse(estimates: Sequence[np.ndarray], truth: np.ndarray) -> float:
    """Root mean squared Euclidean error over independent trials."""
    if len(estimates) == 0:
        raise RblError("compute_rmse requires at least one estimate")
    truth = np.asarray(truth, dtype=float)
    total = 0.0
    for est in estimates:
        est = np.asarray(est, dtype=float)
        if est.shape != truth.shape:
            raise RblError(
                f"estimate shape {est.shape} does not match truth shape {truth.shape}"
            )
        total += float(np.sum((est - truth) ** 2))
    return float(np.sqrt(total / len(estimates)))


def wrap_angle_deg(err_deg: np.ndarray) -> np.ndarray:
    """Wrap angle errors into [-180, 180) degrees before squaring."""
    return (np.asarray(err_deg, dtype=float) + 180.0) % 360.0 - 180.0


@dataclass
class _Accumulator:
    rotation: list = field(default_factory=list)
    translation: list = field(default_factory=list)
    position: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    converged: int = 0
    failures: int = 0

    def record(self, rot, trans, pos, iters: int, converged: bool) -> None:
        self.rotation.append(rot)
        self.translation.append(trans)
        self.position.append(pos)
        self.iterations.append(iters)
        self.converged += int(converged)


def _block_errors(
    angles_hat: EulerAngles,
    t_hat: TranslationVector,
    truth,
    conformation: np.ndarray,
    Q_hat: np.ndarray | None = None,
):
    """Error vectors (rotation deg, translation m, positions m) for one trial."""
    rot_err = wrap_angle_deg(angles_hat.as_degrees - truth.angles.as_degrees)
    t_err = t_hat.as_array - truth.translation.as_array
    Q = Q_hat if Q_hat is not None else rotation_matrix_exact(angles_hat)
    reconstructed = Q @ conformation + t_hat.as_array[:, None]
    pos_err = (reconstructed - truth.positions).ravel(order="F")
    return rot_err, t_err, pos_err


def run_monte_carlo(cfg: ExperimentConfig) -> RmseReport:
    """Run the configured sweep and reduce the results to an RMSE report.

    Per-trial randomness comes from seed streams spawned per sigma and per
    trial, so runs are reproducible and trials are independent.  Estimator
    failures on a trial are counted and excluded from that estimator's
    averages, never silently dropped.
    """
    scenario = cfg.scenario
    gabp_cfg = cfg.gabp_config()
    sigma_values = cfg.sigma_values
    need_positions = cfg.norm_source == "estimated" or "ls-procrustes" in cfg.estimators
    need_gabp = "double-gabp" in cfg.estimators or "stage-a-gabp" in cfg.estimators
    need_system = need_gabp or "genie" in cfg.estimators

    root = np.random.SeedSequence(cfg.seed)
    rows: list[RmseRow] = []
    for sigma_seed, sigma in zip(root.spawn(len(sigma_values)), sigma_values):
        acc = {name: _Accumulator() for name in cfg.estimators}
        for trial_seed in sigma_seed.spawn(cfg.trials):
            rng = np.random.default_rng(trial_seed)
            truth = make_ground_truth(scenario, rng)
            ranges = simulate_ranges(truth.positions, scenario.anchors, sigma, rng)

            s_hat = norms_est = None
            position_failure = None
            if need_positions:
                try:
                    s_hat, norms_est, _ = estimate_all_positions(ranges, scenario.anchors)
                except (RblError, np.linalg.LinAlgError) as exc:
                    position_failure = exc

            system = None
            if need_system and position_failure is None:
                norms = (
                    np.sum(truth.positions**2, axis=0)
                    if cfg.norm_source == "true"
                    else norms_est
                )
                try:
                    system = build_param_system(
                        ranges, scenario.anchors, scenario.conformation, norms
                    )
                except (RblError, np.linalg.LinAlgError) as exc:
                    position_failure = position_failure or exc

            gabp_result = None
            if need_gabp and system is not None:
                try:
                    gabp_result = run_double_gabp(system, gabp_cfg, mode=cfg.gabp_mode)
                except (RblError, np.linalg.LinAlgError):
                    gabp_result = None

            for name in cfg.estimators:
                try:
                    _run_estimator(
                        name, acc[name], truth, system, gabp_result, gabp_cfg,
                        s_hat, scenario, position_failure,
                    )
                except (RblError, np.linalg.LinAlgError):
                    acc[name].failures += 1

        for name in cfg.estimators:
            rows.extend(_reduce(acc[name], name, sigma, cfg.trials))

    order = {b: i for i, b in enumerate(BLOCKS)}
    rows.sort(key=lambda r: (r.estimator, order[r.block], r.sigma))
    return RmseReport(rows=tuple(rows))


def _run_estimator(
    name, acc, truth, system, gabp_result, gabp_cfg, s_hat, scenario, position_failure
) -> None:
    if name in ("double-gabp", "stage-a-gabp"):
        if position_failure is not None:
            raise RblError(f"position pre-estimation failed: {position_failure}")
        if gabp_result is None:
            raise RblError("message passing failed")
        if name == "double-gabp":
            est = gabp_result.estimate
            iters = gabp_result.iterations_stage_a + gabp_result.iterations_stage_b
            converged = gabp_result.converged_stage_a and gabp_result.converged_stage_b
        else:
            est = gabp_result.stage_a
            iters = gabp_result.iterations_stage_a
            converged = gabp_result.converged_stage_a
        rot, trans, pos = _block_errors(
            est.angles, est.translation, truth, scenario.conformation
        )
        acc.record(rot, trans, pos, iters, converged)
    elif name == "ls-procrustes":
        if position_failure is not None:
            raise RblError(f"position pre-estimation failed: {position_failure}")
        pose = procrustes_extract(s_hat, scenario.conformation)
        rot, trans, pos = _block_errors(
            pose.angles_hat, pose.t_hat, truth, scenario.conformation, Q_hat=pose.Q_hat
        )
        acc.record(rot, trans, pos, 0, True)
    elif name == "genie":
        if system is None:
            raise RblError(f"system assembly failed: {position_failure}")
        genie = genie_bound(system, truth, gabp_cfg)
        angles = EulerAngles.from_array(truth.angles.as_array + genie.theta_error)
        t_hat = TranslationVector.from_array(
            truth.translation.as_array + genie.t_error
        )
        rot, trans, pos = _block_errors(angles, t_hat, truth, scenario.conformation)
        acc.record(rot, trans, pos, 0, True)
    else:  # pragma: no cover - guarded by config validation
        raise RblError(f"unknown estimator {name!r}")


def _reduce(acc: _Accumulator, name: str, sigma: float, attempted: int) -> list[RmseRow]:
    successes = attempted - acc.failures
    rows = []
    for block in BLOCKS:
        errors = getattr(acc, block)
        if errors:
            rmse = compute_rmse(errors, np.zeros_like(errors[0]))
        else:
            rmse = float("nan")
        rows.append(
            RmseRow(
                estimator=name,
                block=block,
                sigma=float(sigma),
                rmse=rmse,
                trials=successes,
                failures=acc.failures,
                mean_iters=float(np.mean(acc.iterations)) if acc.iterations else 0.0,
                converged_frac=(acc.converged / successes) if successes else 0.0,
            )
        )
    return rows


# --- report serialization -----------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def report_to_csv(report: RmseReport) -> str:
    lines = [CSV_HEADER]
    for r in report.rows:
        lines.append(
            f"{r.estimator},{r.block},{_fmt(r.sigma)},{_fmt(r.rmse)},"
            f"{r.trials},{r.failures},{_fmt(r.mean_iters)},{_fmt(r.converged_frac)}"
        )
    return "\n".join(lines) + "\n"


def report_from_csv(text: str) -> RmseReport:
    lines = [ln for ln in text.strip().splitlines() if ln]
    if not lines or lines[0] != CSV_HEADER:
        raise RblError("CSV header does not match the report format")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 8:
            raise RblError(f"malformed CSV row: {ln!r}")
        rows.append(
            RmseRow(
                estimator=parts[0],
                block=parts[1],
                sigma=float(parts[2]),
                rmse=float(parts[3]),
                trials=int(parts[4]),
                failures=int(parts[5]),
                mean_iters=float(parts[6]),
                converged_frac=float(parts[7]),
            )
        )
    return RmseReport(rows=tuple(rows))


PLOT_SCRIPT_TEMPLATE = '''\
#!/usr/bin/env python3
"""Render log-log RMSE curves from {csv_name} (one figure per block)."""
import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

csv_path = Path(__file__).resolve().parent / "{csv_name}"
series = defaultdict(list)
with open(csv_path) as fh:
    for row in csv.DictReader(fh):
        series[(row["block"], row["estimator"])].append(
            (float(row["sigma"]), float(row["rmse"]))
        )

blocks = sorted({{block for block, _ in series}})
for block in blocks:
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for (blk, estimator), points in sorted(series.items()):
        if blk != block:
            continue
        points.sort()
        ax.loglog(
            [p[0] for p in points], [p[1] for p in points],
            marker="o", label=estimator,
        )
    ax.set_xlabel("range error sigma [m]")
    ax.set_ylabel("RMSE [deg]" if block == "rotation" else "RMSE [m]")
    ax.set_title(f"{{block}} RMSE")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(csv_path.parent / f"rmse_{{block}}.png", dpi=150)
    plt.close(fig)
print("wrote", ", ".join(f"rmse_{{b}}.png" for b in blocks))
'''


def plot_script_text(csv_name: str = "rmse.csv") -> str:
    return PLOT_SCRIPT_TEMPLATE.format(csv_name=csv_name)


def emit_report(report: RmseReport, out_dir: str | Path) -> dict[str, Path]:
    """Write rmse.csv and the companion plot script into a directory.

    Emission is deterministic: re-emitting an identical report reproduces
    identical file bytes.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "rmse.csv"
        script_path = out / "plot_rmse.py"
        csv_path.write_bytes(report_to_csv(report).encode("utf-8"))
        script_path.write_bytes(plot_script_text("rmse.csv").encode("utf-8"))
    except OSError as exc:
        raise RblError(f"cannot write report to {out}: {exc}") from exc
    return {"csv": csv_path, "plot_script": script_path}


def render_plot_images(report: RmseReport) -> dict[str, bytes]:
    """Render the log-log RMSE figures to PNG bytes, one per block."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_block: dict[str, dict[str, list[tuple[float, float]]]] = {}
    for row in report.rows:
        by_block.setdefault(row.block, {}).setdefault(row.estimator, []).append(
            (row.sigma, row.rmse)
        )
    images = {}
    for block in sorted(by_block):
        fig, ax = plt.subplots(figsize=(6.0, 4.5))
        for estimator in sorted(by_block[block]):
            points = sorted(by_block[block][estimator])
            ax.loglog(
                [p[0] for p in points],
                [p[1] for p in points],
                marker="o",
                label=estimator,
            )
        ax.set_xlabel("range error sigma [m]")
        ax.set_ylabel("RMSE [deg]" if block == "rotation" else "RMSE [m]")
        ax.set_title(f"{block} RMSE")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        fig.tight_layout()
        buf = io.BytesIO()
        fig.savefig(buf, format="png", dpi=150)
        plt.close(fig)
        images[block] = buf.getvalue()
    return images


def render_plots(csv_path: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Re-render the figures from an existing CSV file."""
    csv_path = Path(csv_path)
    try:
        report = report_from_csv(csv_path.read_text())
    except OSError as exc:
        raise RblError(f"cannot read CSV {csv_path}: {exc}") from exc
    out = Path(out_dir) if out_dir is not None else csv_path.parent
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for block, payload in render_plot_images(report).items():
        target = out / f"rmse_{block}.png"
        target.write_bytes(payload)
        paths.append(target)
    return paths
