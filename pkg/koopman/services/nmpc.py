"""
Nonlinear MPC baseline on the exact plant model.

Single shooting: the N inputs are the only unknowns, the state is rolled out
through the plant map, gradients come from central finite differences and
the bound-constrained problem is solved with L-BFGS-B. Used only as a
comparator for the data-driven controller.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy.optimize import minimize

from koopman.services.numerics import as_matrix, solve_dare
from koopman.services.plants import PlantModel, Trajectory, linearize

logger = logging.getLogger(__name__)

FD_STEP = 1e-6


@dataclass
class NmpcRun:
    trajectory: Trajectory
    predicted_costs: List[float] = field(default_factory=list)
    stage_costs: List[float] = field(default_factory=list)
    warnings: int = 0

    @property
    def total_stage_cost(self) -> float:
        return float(np.sum(self.stage_costs))


def terminal_weight(plant: PlantModel, Q, R) -> np.ndarray:
    """P_x from the DARE of the plant linearized at the origin."""
    A, B, _ = linearize(plant)
    P, _ = solve_dare(A, B, Q, R)
    return P


def rollout_cost(plant: PlantModel, x0: np.ndarray, u_flat: np.ndarray, Q: np.ndarray, R: np.ndarray, P_x: np.ndarray, N: int) -> float:
    u_seq = u_flat.reshape(N, plant.m)
    x = x0
    cost = 0.0
    for u in u_seq:
        cost += float(x @ Q @ x + u @ R @ u)
        x = plant.step(x, u)
        if not np.all(np.isfinite(x)):
            return np.inf
    return cost + float(x @ P_x @ x)


def _gradient(fun, u: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(u)
    for i in range(u.size):
        step = np.zeros_like(u)
        step[i] = FD_STEP
        grad[i] = (fun(u + step) - fun(u - step)) / (2 * FD_STEP)
    return grad


def solve_horizon(
    plant: PlantModel,
    x0,
    Q,
    R,
    P_x,
    bounds: Tuple[float, float],
    N: int,
    initial_guess=None,
    max_iter: int = 200,
) -> Tuple[np.ndarray, float, bool]:
    """Optimal open-loop input sequence (N × m) from ``x0``.

    Returns the sequence, its cost and whether the optimizer reported success.
    """
    Q = as_matrix(Q, "Q")
    R = as_matrix(R, "R")
    P_x = as_matrix(P_x, "P_x")
    x0 = np.asarray(x0, dtype=float)
    guess = np.zeros(N * plant.m) if initial_guess is None else np.asarray(initial_guess, dtype=float).reshape(-1)
    guess = np.clip(guess, bounds[0], bounds[1])

    def fun(u_flat):
        return rollout_cost(plant, x0, u_flat, Q, R, P_x, N)

    result = minimize(
        fun,
        guess,
        jac=lambda u_flat: _gradient(fun, u_flat),
        method="L-BFGS-B",
        bounds=[bounds] * (N * plant.m),
        options={"maxiter": max_iter, "ftol": 1e-14, "gtol": 1e-10},
    )
    u_best = np.clip(result.x, bounds[0], bounds[1])
    return u_best.reshape(N, plant.m), float(fun(u_best)), bool(result.success)


def nmpc_baseline(
    plant: PlantModel,
    Q,
    R,
    P_x,
    bounds: Tuple[float, float],
    N: int,
    x0,
    steps: int,
) -> NmpcRun:
    """Receding-horizon NMPC with the exact plant.

    An unsuccessful inner solve logs a warning and applies the best iterate.
    """
    Q = as_matrix(Q, "Q")
    R = as_matrix(R, "R")
    x = np.asarray(x0, dtype=float)
    states = [x]
    inputs = []
    predicted, stage = [], []
    warnings = 0
    guess = None
    for k in range(steps):
        u_seq, cost, success = solve_horizon(plant, x, Q, R, P_x, bounds, N, guess)
        if not success:
            warnings += 1
            logger.warning("NMPC step %d: line search did not converge, using best iterate", k)
        u = u_seq[0]
        stage.append(float(x @ Q @ x + u @ R @ u))
        predicted.append(cost)
        inputs.append(u)
        x = plant.step(x, u)
        states.append(x)
        guess = np.vstack([u_seq[1:], u_seq[-1:]])
    outputs = np.array([plant.output(state) for state in states])
    logger.info("NMPC finished: %d steps, %d solver warnings", steps, warnings)
    return NmpcRun(Trajectory(np.array(inputs), outputs, np.array(states)), predicted, stage, warnings)
