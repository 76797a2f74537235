"""Shared fixtures and independent oracles used across the test suite."""

import numpy as np
import pytest

from rblkit.linsys import ParamSystem
from rblkit.scenario import default_scenario


@pytest.fixture(scope="session")
def cube_scenario():
    return default_scenario()


def dense_posterior_mean(z, h_theta, h_t, row_var, prior_theta, prior_t):
    """Closed-form posterior mean of the stacked linear-Gaussian model.

    Oracle used to check message passing fixed points: solves
    (H' R^-1 H + P^-1) x = H' R^-1 z directly.
    """
    H = np.hstack([h_theta, h_t])
    w = 1.0 / row_var
    prior_prec = np.diag([1.0 / prior_theta] * 3 + [1.0 / prior_t] * 3)
    lhs = H.T @ (H * w[:, None]) + prior_prec
    rhs = H.T @ (z * w)
    return np.linalg.solve(lhs, rhs)


def dense_posterior_mean_single(z, h, row_var, prior_var):
    """Single-block variant of the dense posterior oracle."""
    w = 1.0 / row_var
    lhs = h.T @ (h * w[:, None]) + np.eye(h.shape[1]) / prior_var
    rhs = h.T @ (z * w)
    return np.linalg.solve(lhs, rhs)


def toy_param_system(z, h_theta, h_t, row_var) -> ParamSystem:
    """Wrap raw arrays as a ParamSystem for driving the message passing."""
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


def random_toy_system(rng, rows=None):
    """A well-conditioned random bivariate system with its generative truth."""
    if rows is None:
        rows = int(rng.integers(6, 17))
    while True:
        H = rng.normal(size=(rows, 6))
        if np.linalg.cond(H.T @ H) < 1e3:
            break
    row_var = rng.uniform(0.5, 2.0, rows)
    prior_theta = float(rng.uniform(0.5, 2.0))
    prior_t = float(rng.uniform(0.5, 2.0))
    x = np.concatenate(
        [rng.normal(0, np.sqrt(prior_theta), 3), rng.normal(0, np.sqrt(prior_t), 3)]
    )
    z = H @ x + rng.normal(0, np.sqrt(row_var))
    return z, H[:, :3], H[:, 3:], row_var, prior_theta, prior_t, x
