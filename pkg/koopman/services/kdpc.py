"""
Koopman data-driven predictive controller with an interpolated initial state.

At time k the controller solves, over v = (u_0..u_{N−1}, ξ),

    min  z_N'P z_N + Σ_{i<N} (z_i'Q z_i + u_i'R u_i) + l_r
    s.t. z_0 = (1−ξ)·φ(x_ini(k)) + ξ·z*_{1|k−1}
         z_{1..N} = Ψ z_0 + Γ u,  z_{1..N} ∈ X_z,  u ∈ U,  z_N ∈ X_T,  ξ ∈ [0, 1]

with z_0 and z_{1..N} eliminated, so the QP has N·m + 1 variables. Writing
d = z*_{1|k−1} − φ = e(k) gives z_0 = φ + ξd and z_{1..N} = Ψφ + ξΨd + Γu.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Deque, Dict, List, Optional

import numpy as np

from koopman.exceptions import DimensionError, InfeasibleError, NonFiniteError
from koopman.services.numerics import QpProblem, QpStatus, as_matrix, as_vector, is_feasible, solve_qp
from koopman.services.observables import ObservableMap, lift
from koopman.services.plants import PlantModel, Trajectory
from koopman.services.predictor import MultiStepPredictor
from koopman.services.terminal import Box, Polyhedron, TerminalIngredients

logger = logging.getLogger(__name__)

XI_TIE_BREAK = 1e-12


class RegularizationVariant(str, Enum):
    """Initial-state regularization l_r."""

    DEVIATION = "deviation"  # λ‖z_0 − φ(x_ini)‖²
    XI_ERROR = "xi_error"  # λξ²‖e‖²
    LEGACY_XI = "legacy_xi"  # λξ²


@dataclass
class KdpcConfig:
    Q: np.ndarray
    R: np.ndarray
    lam: float
    N: int
    U: Box
    X_z: Box
    X_T: Polyhedron
    P: np.ndarray
    K: np.ndarray
    variant: RegularizationVariant = RegularizationVariant.DEVIATION
    qp_tol: float = 1e-8
    qp_max_iter: int = 20000
    qp_alpha: float = 1.6

    def __post_init__(self):
        self.Q = as_matrix(self.Q, "Q")
        self.R = as_matrix(self.R, "R")
        self.P = as_matrix(self.P, "P")
        self.K = as_matrix(self.K, "K")
        self.variant = RegularizationVariant(self.variant)
        L, m = self.Q.shape[0], self.R.shape[0]
        if self.N < 1:
            raise ValueError(f"horizon N must be ≥ 1, got {self.N}")
        if self.lam < 0:
            raise ValueError(f"λ must be nonnegative, got {self.lam}")
        if self.P.shape != (L, L) or self.K.shape != (m, L):
            raise DimensionError(f"P must be {L}x{L} and K {m}x{L}")
        if self.X_z.dim != L or self.X_T.dim != L or self.U.dim != m:
            raise DimensionError("constraint sets do not match the lifted or input dimension")

    @property
    def L(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]

    @classmethod
    def from_terminal(
        cls,
        ingredients: TerminalIngredients,
        Q,
        R,
        lam: float,
        N: int,
        variant: RegularizationVariant = RegularizationVariant.DEVIATION,
        **solver: Any,
    ) -> "KdpcConfig":
        return cls(
            Q=Q, R=R, lam=lam, N=N,
            U=ingredients.U, X_z=ingredients.X_z, X_T=ingredients.X_T,
            P=ingredients.P, K=ingredients.K, variant=variant, **solver,
        )


def interpolate_initial(phi_x, prev_z1, xi: float) -> np.ndarray:
    """(1 − ξ)·φ(x_ini) + ξ·z*_{1|k−1}."""
    if not 0.0 <= xi <= 1.0:
        raise ValueError(f"ξ must lie in [0, 1], got {xi}")
    phi_x = as_vector(phi_x, "phi_x")
    prev_z1 = as_vector(prev_z1, "prev_z1")
    if phi_x.shape != prev_z1.shape:
        raise DimensionError(f"φ(x_ini) has {phi_x.size} entries, z*_1 has {prev_z1.size}")
    return (1.0 - xi) * phi_x + xi * prev_z1


@dataclass
class DecodedSolution:
    u_seq: np.ndarray  # N × m
    xi: float
    z0: np.ndarray
    z_traj: np.ndarray  # N × L, z_1..z_N
    deviation: np.ndarray  # e(k) = z*_{1|k−1} − φ


@dataclass
class CondensedQp:
    """Condensed problem plus what is needed to map v back to trajectories."""

    problem: QpProblem
    constant: float
    phi_x: np.ndarray
    deviation: np.ndarray
    offset: np.ndarray  # Ψφ
    G: np.ndarray  # [Γ, Ψd]
    N: int
    m: int

    def decode(self, v) -> DecodedSolution:
        v = as_vector(v, "v")
        num_u = self.N * self.m
        xi = float(v[num_u])
        z = self.offset + self.G @ v
        return DecodedSolution(
            u_seq=v[:num_u].reshape(self.N, self.m),
            xi=xi,
            z0=self.phi_x + xi * self.deviation,
            z_traj=z.reshape(self.N, -1),
            deviation=self.deviation,
        )

    def value(self, v) -> float:
        return self.problem.objective(as_vector(v, "v")) + self.constant

    def encode(self, u_seq, xi: float) -> np.ndarray:
        return np.concatenate([np.asarray(u_seq, dtype=float).reshape(-1), [xi]])


def regularization_cost(cfg: KdpcConfig, decoded: DecodedSolution, phi_x) -> float:
    if cfg.variant is RegularizationVariant.DEVIATION:
        gap = decoded.z0 - np.asarray(phi_x, dtype=float)
        return float(cfg.lam * gap @ gap)
    if cfg.variant is RegularizationVariant.XI_ERROR:
        return float(cfg.lam * decoded.xi**2 * (decoded.deviation @ decoded.deviation))
    return float(cfg.lam * decoded.xi**2)


def trajectory_cost(cfg: KdpcConfig, decoded: DecodedSolution, phi_x) -> float:
    """Objective re-evaluated from decoded trajectories (tie-break term excluded)."""
    states = np.vstack([decoded.z0[None, :], decoded.z_traj[:-1]])
    stage = sum(float(z @ cfg.Q @ z) for z in states)
    stage += sum(float(u @ cfg.R @ u) for u in decoded.u_seq)
    z_N = decoded.z_traj[-1]
    return stage + float(z_N @ cfg.P @ z_N) + regularization_cost(cfg, decoded, phi_x)


def build_qp(cfg: KdpcConfig, pred: MultiStepPredictor, phi_x, prev_z1) -> CondensedQp:
    """Condensed QP in v = (u_{[0,N−1]}, ξ)."""
    phi_x = as_vector(phi_x, "phi_x")
    prev_z1 = as_vector(prev_z1, "prev_z1")
    L, m, N = cfg.L, cfg.m, cfg.N
    if pred.L != L or pred.m != m or pred.N != N:
        raise DimensionError(f"predictor (L={pred.L}, m={pred.m}, N={pred.N}) does not match the controller")
    if phi_x.size != L or prev_z1.size != L:
        raise DimensionError(f"lifted vectors must have {L} entries")
    num_u = N * m
    d = prev_z1 - phi_x

    offset = pred.Psi_LS @ phi_x
    G = np.hstack([pred.Gamma_LS, (pred.Psi_LS @ d)[:, None]])
    g0 = np.zeros((L, num_u + 1))
    g0[:, num_u] = d

    weights = [cfg.Q] * (N - 1) + [cfg.P]
    Q_bar = np.zeros((N * L, N * L))
    for i, W in enumerate(weights):
        Q_bar[i * L:(i + 1) * L, i * L:(i + 1) * L] = W
    R_full = np.zeros((num_u + 1, num_u + 1))
    R_full[:num_u, :num_u] = np.kron(np.eye(N), cfg.R)

    H = 2.0 * (G.T @ Q_bar @ G + g0.T @ cfg.Q @ g0 + R_full)
    f = 2.0 * (G.T @ Q_bar @ offset + g0.T @ cfg.Q @ phi_x)
    constant = float(offset @ Q_bar @ offset + phi_x @ cfg.Q @ phi_x)

    if cfg.variant is RegularizationVariant.DEVIATION:
        H += 2.0 * cfg.lam * g0.T @ g0
    elif cfg.variant is RegularizationVariant.XI_ERROR:
        H[num_u, num_u] += 2.0 * cfg.lam * float(d @ d)
    else:
        H[num_u, num_u] += 2.0 * cfg.lam
    H[num_u, num_u] += XI_TIE_BREAK
    H = 0.5 * (H + H.T)

    select_u = np.hstack([np.eye(num_u), np.zeros((num_u, 1))])
    select_xi = np.zeros((1, num_u + 1))
    select_xi[0, num_u] = 1.0
    z_upper = np.tile(cfg.X_z.upper, N)
    z_lower = np.tile(cfg.X_z.lower, N)
    G_N, offset_N = G[-L:], offset[-L:]
    A_in = np.vstack([
        select_u, -select_u,
        G, -G,
        cfg.X_T.M @ G_N,
        select_xi, -select_xi,
    ])
    b_in = np.concatenate([
        np.tile(cfg.U.upper, N), -np.tile(cfg.U.lower, N),
        z_upper - offset, offset - z_lower,
        cfg.X_T.b - cfg.X_T.M @ offset_N,
        [1.0], [0.0],
    ])
    return CondensedQp(QpProblem(H, f, A_in, b_in), constant, phi_x, d, offset, G, N, m)


@dataclass
class ControllerState:
    """Past window buffers, z*_{1|k−1} and the previous optimal sequence."""

    u_hist: Deque[np.ndarray]
    y_hist: Deque[np.ndarray]
    T_ini: int
    prev_z1: Optional[np.ndarray] = None
    prev_u_seq: Optional[np.ndarray] = None
    prev_zN: Optional[np.ndarray] = None
    k: int = 0

    @classmethod
    def from_history(cls, u_hist, y_hist, T_ini: int) -> "ControllerState":
        """Buffers holding x_ini of the previous instant: T_ini−1 inputs, T_ini outputs."""
        u_rows = [np.atleast_1d(np.asarray(u, dtype=float)) for u in u_hist]
        y_rows = [np.atleast_1d(np.asarray(y, dtype=float)) for y in y_hist]
        if len(u_rows) != T_ini - 1 or len(y_rows) != T_ini:
            raise DimensionError(f"need {T_ini - 1} past inputs and {T_ini} past outputs")
        return cls(deque(u_rows, maxlen=max(T_ini - 1, 0)), deque(y_rows, maxlen=T_ini), T_ini)

    def push(self, u_prev, y_new) -> None:
        if len(self.y_hist) != self.T_ini or len(self.u_hist) != self.T_ini - 1:
            raise DimensionError("controller history buffer is not full")
        if self.T_ini > 1:
            self.u_hist.append(np.atleast_1d(np.asarray(u_prev, dtype=float)))
        self.y_hist.append(np.atleast_1d(np.asarray(y_new, dtype=float)))

    def x_ini(self) -> np.ndarray:
        parts = list(self.u_hist) + list(self.y_hist)
        return np.concatenate(parts)


@dataclass
class StepResult:
    k: int
    u_applied: np.ndarray
    xi_star: float
    z0_star: np.ndarray
    z1_star: np.ndarray
    zN_star: np.ndarray
    u_seq: np.ndarray
    phi_x: np.ndarray
    V: float
    e: np.ndarray
    feasible: bool
    qp_iterations: int
    status: str
    fallback: bool = False
    candidate_feasible: Optional[bool] = None
    terminal_margin: float = 0.0

    @property
    def error_norm(self) -> float:
        return float(np.linalg.norm(self.e))


def shifted_candidate(u_seq: np.ndarray, z_N: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Previous inputs shifted by one with K·z*_{N} appended (used with ξ = 1)."""
    u_seq = np.asarray(u_seq, dtype=float)
    return np.vstack([u_seq[1:], (K @ z_N)[None, :]])


def step(
    state: ControllerState,
    cfg: KdpcConfig,
    pred: MultiStepPredictor,
    obs_map: ObservableMap,
    y_new,
    u_prev,
) -> StepResult:
    """Advance the controller by one sample and return the input to apply.

    Raises:
        NonFiniteError: if the measurement or the previous input is not finite.
        InfeasibleError: if the very first QP is infeasible (no earlier
            solution exists to fall back on).
    """
    y_new = np.atleast_1d(np.asarray(y_new, dtype=float))
    u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
    if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(u_prev))):
        raise NonFiniteError(f"non-finite measurement or input at step {state.k}")
    state.push(u_prev, y_new)
    phi_x = lift(obs_map, state.x_ini())
    prev_z1 = phi_x.copy() if state.prev_z1 is None else state.prev_z1
    error = prev_z1 - phi_x

    qp = build_qp(cfg, pred, phi_x, prev_z1)
    candidate_v = None
    if state.prev_u_seq is not None and state.prev_zN is not None:
        candidate_v = qp.encode(shifted_candidate(state.prev_u_seq, state.prev_zN, cfg.K), 1.0)
    candidate_ok = None if candidate_v is None else is_feasible(qp.problem, candidate_v, tol=cfg.qp_tol)

    solution = solve_qp(qp.problem, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter, alpha=cfg.qp_alpha)
    v = solution.v_star
    fallback = False
    usable = solution.status == QpStatus.OPTIMAL or (
        solution.status == QpStatus.MAX_ITER and is_feasible(qp.problem, v, tol=1e-6)
    )
    if not usable:
        if candidate_v is None:
            raise InfeasibleError(f"QP is {solution.status.value} at the first step; the initial state is not feasible")
        logger.warning("step %d: solver reported %s, applying the shifted candidate", state.k, solution.status.value)
        v, fallback = candidate_v, True

    # Round-off outside U or [0, 1] is clipped; V and the trajectory follow the clipped point.
    raw = qp.decode(v)
    v = qp.encode(np.clip(raw.u_seq, cfg.U.lower, cfg.U.upper), float(np.clip(raw.xi, 0.0, 1.0)))
    decoded = qp.decode(v)
    u_seq = decoded.u_seq.copy()
    xi_star = decoded.xi
    z_N = decoded.z_traj[-1]
    result = StepResult(
        k=state.k,
        u_applied=u_seq[0].copy(),
        xi_star=xi_star,
        z0_star=interpolate_initial(phi_x, prev_z1, xi_star),
        z1_star=decoded.z_traj[0].copy(),
        zN_star=z_N.copy(),
        u_seq=u_seq,
        phi_x=phi_x,
        V=qp.value(v),
        e=error,
        feasible=solution.status == QpStatus.OPTIMAL,
        qp_iterations=solution.iterations,
        status=solution.status.value,
        fallback=fallback,
        candidate_feasible=candidate_ok,
        terminal_margin=float(np.max(cfg.X_T.M @ z_N - cfg.X_T.b)),
    )
    state.prev_z1 = result.z1_star
    state.prev_u_seq = u_seq
    state.prev_zN = result.zN_star
    state.k += 1
    return result


def decrease_offset(cfg: KdpcConfig, next_result: StepResult) -> float:
    """σ_r term: λ‖e(k+1)‖² for the error-weighted variants, λ for the legacy one."""
    if cfg.variant is RegularizationVariant.LEGACY_XI:
        return float(cfg.lam)
    return float(cfg.lam * next_result.error_norm**2)


def value_decrease_check(history: List[StepResult], cfg: KdpcConfig) -> List[float]:
    """r_k = V_{k+1} − V_k + λ_min(Q)‖z0*_k‖² − σ_r for every consecutive pair."""
    if len(history) < 2:
        return []
    q_min = float(np.min(np.linalg.eigvalsh(cfg.Q)))
    return [
        current_next.V - current.V + q_min * float(current.z0_star @ current.z0_star) - decrease_offset(cfg, current_next)
        for current, current_next in zip(history[:-1], history[1:])
    ]


def normalized_decrease(history: List[StepResult], residuals: List[float]) -> List[float]:
    """Residuals divided by 1 + |V_k|."""
    return [r / (1.0 + abs(result.V)) for r, result in zip(residuals, history)]


@dataclass
class ClosedLoopRun:
    trajectory: Trajectory
    results: List[StepResult]
    warmup: int
    residuals: List[float] = field(default_factory=list)

    def log_rows(self) -> List[Dict[str, Any]]:
        """Per-step records: k, u, y, xi, V, ‖e‖, feasible, qp_iterations."""
        rows = []
        for result in self.results:
            k = self.warmup + result.k
            rows.append({
                "k": k,
                "u": result.u_applied.tolist(),
                "y": self.trajectory.y[k].tolist(),
                "xi": result.xi_star,
                "V": result.V,
                "e_norm": result.error_norm,
                "feasible": result.feasible,
                "qp_iterations": result.qp_iterations,
            })
        return rows


def run_closed_loop(
    plant: PlantModel,
    cfg: KdpcConfig,
    pred: MultiStepPredictor,
    obs_map: ObservableMap,
    x0,
    steps: int,
) -> ClosedLoopRun:
    """Simulate the plant under the controller for ``steps`` controlled samples.

    The first T_ini inputs are zero so the past window can be filled from
    measurements; control starts at k = T_ini.
    """
    T_ini = obs_map.T_ini
    warmup = T_ini
    x = np.asarray(x0, dtype=float)
    states = [x]
    inputs: List[np.ndarray] = []
    for _ in range(warmup):
        u = np.zeros(plant.m)
        inputs.append(u)
        x = plant.step(x, u)
        states.append(x)
    outputs = [plant.output(state) for state in states]
    state = ControllerState.from_history(inputs[: T_ini - 1], outputs[:T_ini], T_ini)

    results: List[StepResult] = []
    for _ in range(steps):
        result = step(state, cfg, pred, obs_map, outputs[-1], inputs[-1])
        results.append(result)
        inputs.append(result.u_applied)
        x = plant.step(x, result.u_applied)
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"plant state diverged at step {len(inputs)}")
        states.append(x)
        outputs.append(plant.output(x))
    trajectory = Trajectory(np.array(inputs), np.array(outputs), np.array(states))
    residuals = value_decrease_check(results, cfg)
    logger.info(
        "closed loop finished: %d steps, %d non-optimal QPs, final |y| %.3e",
        steps, sum(not r.feasible for r in results), float(np.max(np.abs(outputs[-1]))),
    )
    return ClosedLoopRun(trajectory, results, warmup, residuals)
