"""
Dense numerical kernels used by every other service.

Contents:
    - matrix validation helpers (finite 2-D float arrays)
    - least squares / pseudo-inverse with an SVD rank cutoff
    - discrete algebraic Riccati equation by structured doubling
    - convex QP solver (ADMM operator splitting with Ruiz scaling, adaptive
      rho, infeasibility detection, active-set polishing and a primal
      active-set fallback)
    - Adam optimizer step
    - a small reverse-mode autodiff tape for feed-forward graphs
"""

import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

from koopman.exceptions import (
    ConvergenceError,
    DimensionError,
    InfeasibleError,
    NonFiniteError,
    NotPositiveDefiniteError,
    RankWarning,
)

logger = logging.getLogger(__name__)

SVD_CUTOFF_FACTOR = 1e-12
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def as_matrix(value, name: str = "matrix") -> np.ndarray:
    """Return ``value`` as a finite 2-D float array.

    Scalars become 1×1 and vectors become a single row, mirroring how the
    scalar examples (A=0.5, B=1, ...) are written.
    """
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf entries")
    return arr


def as_vector(value, name: str = "vector") -> np.ndarray:
    """Return ``value`` as a finite 1-D float array."""
    arr = np.atleast_1d(np.asarray(value, dtype=float)).ravel()
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf entries")
    return arr


def spectral_radius(A) -> float:
    """Largest eigenvalue magnitude of a square matrix."""
    A = as_matrix(A, "A")
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"spectral radius needs a square matrix, got {A.shape}")
    return float(np.max(np.abs(np.linalg.eigvals(A))))


# ---------------------------------------------------------------------------
# Least squares


@dataclass(frozen=True)
class RankReport:
    """Numerical rank of a matrix under the SVD cutoff."""

    rank: int
    rows: int
    full_row_rank: bool
    smallest_retained: float
    sigma_max: float


def svd_cutoff(shape: Tuple[int, int], sigma_max: float) -> float:
    return max(shape) * sigma_max * SVD_CUTOFF_FACTOR


def numerical_rank(A) -> RankReport:
    """Rank of ``A`` with singular values below max(rows,cols)·σ_max·1e-12 dropped."""
    A = as_matrix(A, "A")
    sigma = np.linalg.svd(A, compute_uv=False)
    if sigma.size == 0 or sigma[0] == 0.0:
        return RankReport(0, A.shape[0], A.shape[0] == 0, 0.0, 0.0)
    keep = sigma > svd_cutoff(A.shape, sigma[0])
    rank = int(np.count_nonzero(keep))
    return RankReport(
        rank=rank,
        rows=A.shape[0],
        full_row_rank=rank == A.shape[0],
        smallest_retained=float(sigma[keep][-1]),
        sigma_max=float(sigma[0]),
    )


def pseudo_inverse(A) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via thin SVD with the module cutoff."""
    A = as_matrix(A, "A")
    U, sigma, Vt = np.linalg.svd(A, full_matrices=False)
    if sigma.size == 0 or sigma[0] == 0.0:
        return np.zeros((A.shape[1], A.shape[0]))
    keep = sigma > svd_cutoff(A.shape, sigma[0])
    inv_sigma = np.zeros_like(sigma)
    inv_sigma[keep] = 1.0 / sigma[keep]
    return (Vt.T * inv_sigma) @ U.T


def solve_least_squares(A, B, ridge: float = 0.0) -> np.ndarray:
    """Solve min_X ‖B − X·A‖_F² + ridge·‖X‖_F².

    With ``ridge == 0`` this is ``B·A^†``; a rank-deficient ``A`` still yields
    the minimum-norm solution and issues a ``RankWarning``.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if B.shape[1] != A.shape[1]:
        raise DimensionError(
            f"B has {B.shape[1]} columns but A has {A.shape[1]}; both index samples"
        )
    if ridge < 0:
        raise ValueError(f"ridge must be nonnegative, got {ridge}")

    if ridge > 0:
        gram = A @ A.T + ridge * np.eye(A.shape[0])
        return scipy.linalg.solve(gram, A @ B.T, assume_a="pos").T

    report = numerical_rank(A)
    if not report.full_row_rank:
        warnings.warn(
            f"regressor has rank {report.rank} < {report.rows} rows; "
            "returning the minimum-norm solution",
            RankWarning,
            stacklevel=2,
        )
    return B @ pseudo_inverse(A)


# ---------------------------------------------------------------------------
# Riccati


def riccati_residual(A, B, Q, R, P, K) -> np.ndarray:
    """(A+BK)ᵀP(A+BK) − P + Q + KᵀRK; zero for the DARE solution."""
    Acl = A + B @ K
    return Acl.T @ P @ Acl - P + Q + K.T @ R @ K


def solve_dare(
    A,
    B,
    Q,
    R,
    tol: float = 1e-12,
    max_iter: int = 10000,
) -> Tuple[np.ndarray, np.ndarray]:
    """Solve the discrete algebraic Riccati equation by structured doubling.

    Returns ``(P, K)`` with ``K = −(R + BᵀPB)⁻¹BᵀPA`` so that ``A + BK`` is
    Schur stable.

    Raises:
        NotPositiveDefiniteError: if R is not positive definite.
        ConvergenceError: if the doubling iterates do not settle.
        InfeasibleError: if the resulting closed loop is not stable, i.e.
            (A, B) is not stabilizable.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    Q = as_matrix(Q, "Q")
    R = as_matrix(R, "R")
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != n or Q.shape != (n, n):
        raise DimensionError(
            f"inconsistent DARE dimensions A{A.shape} B{B.shape} Q{Q.shape}"
        )
    m = B.shape[1]
    if R.shape != (m, m):
        raise DimensionError(f"R must be {m}x{m}, got {R.shape}")
    try:
        np.linalg.cholesky(0.5 * (R + R.T))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("R must be positive definite") from exc

    eye = np.eye(n)
    Ak = A.copy()
    Gk = B @ np.linalg.solve(R, B.T)
    Hk = 0.5 * (Q + Q.T)
    for iteration in range(max_iter):
        W = eye + Gk @ Hk
        try:
            W_inv_A = np.linalg.solve(W, Ak)
            W_inv_G = np.linalg.solve(W, Gk)
        except np.linalg.LinAlgError as exc:
            raise InfeasibleError("doubling step became singular; (A, B) is not stabilizable") from exc
        H_next = Hk + Ak.T @ Hk @ W_inv_A
        G_next = Gk + Ak @ W_inv_G @ Ak.T
        A_next = Ak @ W_inv_A
        if not np.all(np.isfinite(H_next)):
            raise InfeasibleError("Riccati iterates diverged; (A, B) is not stabilizable")
        change = np.linalg.norm(H_next - Hk) / max(1.0, np.linalg.norm(H_next))
        Ak, Gk, Hk = A_next, G_next, 0.5 * (H_next + H_next.T)
        if change <= tol:
            logger.debug("DARE doubling converged after %d iterations", iteration + 1)
            break
    else:
        raise ConvergenceError(f"DARE did not converge within {max_iter} iterations")

    P = Hk
    # A few Riccati fixed-point sweeps bring the residual down to round-off.
    for _ in range(3):
        S = R + B.T @ P @ B
        P = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(S, B.T @ P @ A)
        P = 0.5 * (P + P.T)
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)

    if spectral_radius(A + B @ K) >= 1.0:
        raise InfeasibleError("(A, B) is not stabilizable: closed loop has ρ ≥ 1")
    return P, K


# ---------------------------------------------------------------------------
# Quadratic programming


class QpStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"


@dataclass
class QpProblem:
    """min ½vᵀHv + fᵀv subject to A_in·v ≤ b_in."""

    H: np.ndarray
    f: np.ndarray
    A_in: np.ndarray
    b_in: np.ndarray

    def __post_init__(self):
        self.H = as_matrix(self.H, "H")
        self.f = as_vector(self.f, "f")
        n = self.f.size
        if self.H.shape != (n, n):
            raise DimensionError(f"H must be {n}x{n}, got {self.H.shape}")
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(self.H))):
            raise DimensionError("H must be symmetric")
        self.A_in = np.asarray(self.A_in, dtype=float).reshape(-1, n)
        self.b_in = as_vector(self.b_in, "b_in") if np.size(self.b_in) else np.zeros(0)
        if not np.all(np.isfinite(self.A_in)):
            raise NonFiniteError("A_in contains NaN or Inf entries")
        if self.A_in.shape[0] != self.b_in.size:
            raise DimensionError(
                f"A_in has {self.A_in.shape[0]} rows but b_in has {self.b_in.size} entries"
            )

    @property
    def num_variables(self) -> int:
        return self.f.size

    def objective(self, v: np.ndarray) -> float:
        return float(0.5 * v @ self.H @ v + self.f @ v)

    def max_violation(self, v: np.ndarray) -> float:
        if self.b_in.size == 0:
            return 0.0
        return float(np.max(self.A_in @ v - self.b_in))


@dataclass
class QpSolution:
    v_star: np.ndarray
    objective: float
    status: QpStatus
    iterations: int
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    polished: bool = False

    @property
    def optimal(self) -> bool:
        return self.status == QpStatus.OPTIMAL


@dataclass(frozen=True)
class KktResiduals:
    stationarity: float
    primal: float
    complementarity: float
    dual_sign: float

    def within(self, tol: float) -> bool:
        return max(self.stationarity, self.primal, self.complementarity, self.dual_sign) <= tol


def kkt_residuals(problem: QpProblem, v: np.ndarray, y: np.ndarray) -> KktResiduals:
    """Relative KKT residuals of a primal-dual pair."""
    grad = problem.H @ v + problem.f
    aty = problem.A_in.T @ y if y.size else np.zeros_like(v)
    scale_dual = max(1.0, np.max(np.abs(grad - problem.f), initial=0.0), np.max(np.abs(problem.f), initial=0.0), np.max(np.abs(aty), initial=0.0))
    slack = problem.b_in - problem.A_in @ v if y.size else np.zeros(0)
    scale_primal = max(1.0, np.max(np.abs(problem.b_in), initial=0.0))
    return KktResiduals(
        stationarity=float(np.max(np.abs(grad + aty), initial=0.0) / scale_dual),
        primal=float(max(0.0, -np.min(slack, initial=0.0)) / scale_primal),
        complementarity=float(np.max(np.abs(y * slack), initial=0.0) / (scale_primal * max(1.0, np.max(np.abs(y), initial=0.0)))),
        dual_sign=float(max(0.0, -np.min(y, initial=0.0)) / max(1.0, np.max(np.abs(y), initial=0.0))),
    )


@dataclass
class _ScaledQp:
    H: np.ndarray
    f: np.ndarray
    A: np.ndarray
    b: np.ndarray
    D: np.ndarray
    E: np.ndarray
    cost_scale: float


def _ruiz_equilibrate(problem: QpProblem, iterations: int = 15) -> _ScaledQp:
    """Symmetric diagonal equilibration of the KKT matrix [[H, Aᵀ], [A, 0]]."""
    n = problem.num_variables
    m = problem.b_in.size
    H = problem.H.copy()
    A = problem.A_in.copy()
    D = np.ones(n)
    E = np.ones(m)
    for _ in range(iterations):
        col_norm_x = np.maximum(
            np.max(np.abs(H), axis=0, initial=0.0),
            np.max(np.abs(A), axis=0, initial=0.0) if m else 0.0,
        )
        col_norm_y = np.max(np.abs(A), axis=1, initial=0.0) if m else np.zeros(0)
        dx = np.where(col_norm_x > 1e-4, 1.0 / np.sqrt(np.maximum(col_norm_x, 1e-4)), 1.0)
        dy = np.where(col_norm_y > 1e-4, 1.0 / np.sqrt(np.maximum(col_norm_y, 1e-4)), 1.0)
        H = dx[:, None] * H * dx[None, :]
        A = dy[:, None] * A * dx[None, :]
        D *= dx
        E *= dy
    f = D * problem.f
    cost_norm = max(np.mean(np.max(np.abs(H), axis=0, initial=0.0)), np.max(np.abs(f), initial=0.0))
    cost_scale = 1.0 / cost_norm if cost_norm > 1e-4 else 1.0
    cost_scale = min(cost_scale, 1e4)
    return _ScaledQp(
        H=cost_scale * H,
        f=cost_scale * f,
        A=A,
        b=E * problem.b_in,
        D=D,
        E=E,
        cost_scale=cost_scale,
    )


def _polish(problem: QpProblem, v: np.ndarray, y: np.ndarray, slack_tol: float) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Solve the equality-constrained QP on the guessed active set.

    Returns ``(v, y)`` if the polished point is primal and dual feasible.
    """
    n = problem.num_variables
    slack = problem.b_in - problem.A_in @ v
    active = np.flatnonzero((slack < np.maximum(y, slack_tol)) & (y > -slack_tol)) if y.size else np.zeros(0, dtype=int)
    A_act = problem.A_in[active]
    k = active.size
    delta = 1e-11 * max(1.0, np.max(np.abs(problem.H), initial=0.0))
    kkt = np.block([
        [problem.H + delta * np.eye(n), A_act.T],
        [A_act, -delta * np.eye(k)],
    ])
    rhs = np.concatenate([-problem.f, problem.b_in[active]])
    exact = np.block([[problem.H, A_act.T], [A_act, np.zeros((k, k))]])
    try:
        sol = np.linalg.solve(kkt, rhs)
        for _ in range(5):
            sol = sol + np.linalg.solve(kkt, rhs - exact @ sol)
    except np.linalg.LinAlgError:
        return None
    v_pol = sol[:n]
    y_pol = np.zeros(problem.b_in.size)
    y_pol[active] = sol[n:]
    return v_pol, y_pol


def _feasible_start(problem: QpProblem, v_guess: np.ndarray) -> Optional[np.ndarray]:
    """A feasible point on the segment towards ``v_guess``; None if there is none.

    Phase one is an LP feasibility solve; the result is then moved towards
    the guess as far as the constraints allow.
    """
    if problem.max_violation(v_guess) <= 0.0:
        return v_guess.copy()
    n = problem.num_variables
    result = linprog(
        np.zeros(n),
        A_ub=problem.A_in,
        b_ub=problem.b_in,
        bounds=[(None, None)] * n,
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10},
    )
    if result.status != 0:
        return None
    start = np.asarray(result.x, dtype=float)
    direction = v_guess - start
    rates = problem.A_in @ direction
    slack = np.maximum(problem.b_in - problem.A_in @ start, 0.0)
    blocking = rates > 1e-15
    step = min(1.0, float(np.min(slack[blocking] / rates[blocking], initial=np.inf)))
    return start + step * direction


def _equality_step(H: np.ndarray, g: np.ndarray, A_w: np.ndarray) -> Tuple[np.ndarray, np.ndarray, bool]:
    """Minimize ½pᵀHp + gᵀp subject to A_w·p = 0.

    Returns ``(p, mu, bounded)``. When H has no curvature along the null space
    of A_w the projected steepest-descent direction is returned with
    ``bounded=False``.
    """
    n = g.size
    k = A_w.shape[0]
    kkt = np.block([[H, A_w.T], [A_w, np.zeros((k, k))]])
    rhs = np.concatenate([-g, np.zeros(k)])
    try:
        sol = np.linalg.solve(kkt, rhs)
        sol = sol + np.linalg.solve(kkt, rhs - kkt @ sol)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    scale = max(1.0, np.max(np.abs(g)), np.max(np.abs(H), initial=0.0))
    if np.max(np.abs(kkt @ sol - rhs)) <= 1e-9 * scale:
        return sol[:n], sol[n:], True
    projector = np.eye(n) - pseudo_inverse(A_w) @ A_w if k else np.eye(n)
    return -projector @ g, np.zeros(k), False


def _active_set_solve(
    problem: QpProblem,
    v_start: np.ndarray,
    tol: float,
    max_iter: int,
) -> Optional[Tuple[np.ndarray, np.ndarray, int]]:
    """Primal active-set iterations from a feasible point.

    Each pass solves the equality-constrained subproblem on the working set,
    steps to the first blocking row or drops the row with the most negative
    multiplier. Returns ``(v, y, passes)`` at a KKT point, or None if the
    iteration cap is hit or the problem is unbounded below.
    """
    H, f, A, b = problem.H, problem.f, problem.A_in, problem.b_in
    m = b.size
    v = v_start.copy()
    working: List[int] = []
    for passes in range(1, max_iter + 1):
        p, mu, bounded = _equality_step(H, H @ v + f, A[working])
        rates = A @ p
        slack = np.maximum(b - A @ v, 0.0)
        moving = rates > 1e-14 * max(1.0, np.max(np.abs(p)))
        moving[working] = False
        ratios = np.full(m, np.inf)
        ratios[moving] = slack[moving] / rates[moving]
        blocking = int(np.argmin(ratios)) if m else -1
        limit = ratios[blocking] if m else np.inf
        if not bounded and not np.isfinite(limit):
            logger.warning("active-set pass %d found a direction unbounded below", passes)
            return None
        if bounded and limit >= 1.0:
            v = v + p
            if not working or np.min(mu) >= -tol * max(1.0, np.max(np.abs(mu))):
                y = np.zeros(m)
                y[working] = mu
                return v, y, passes
            working.pop(int(np.argmin(mu)))
            continue
        v = v + limit * p
        working.append(blocking)
    return None


def solve_qp(
    problem: QpProblem,
    tol: float = 1e-8,
    max_iter: int = 20000,
    alpha: float = 1.6,
    warm_start: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> QpSolution:
    """Solve a dense convex QP by ADMM operator splitting.

    The iteration follows the OSQP scheme: Ruiz-equilibrated data, a single
    dense Cholesky factor of ``H + σI + ρAᵀA`` (refactored when ρ adapts),
    over-relaxation ``alpha`` and a primal infeasibility certificate. On
    convergence the active set read off the iterate is polished with an
    equality-constrained KKT solve.

    When ADMM stalls at ``max_iter`` (badly scaled problems such as a large
    initial-state weight) or claims infeasibility, an LP phase one decides
    feasibility and a primal active-set solve from the ADMM iterate finishes
    the job; INFEASIBLE is only reported when phase one finds no point.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    scaled = _ruiz_equilibrate(problem)
    n = problem.num_variables
    m = problem.b_in.size
    sigma = 1e-6
    rho = 0.1

    if m == 0:
        try:
            v = np.linalg.solve(problem.H, -problem.f)
        except np.linalg.LinAlgError:
            v = -pseudo_inverse(problem.H) @ problem.f
        return QpSolution(v, problem.objective(v), QpStatus.OPTIMAL, 0, np.zeros(0), True)

    def factor(rho_value: float):
        return scipy.linalg.cho_factor(
            scaled.H + sigma * np.eye(n) + rho_value * scaled.A.T @ scaled.A
        )

    x = np.zeros(n)
    z = np.zeros(m)
    y = np.zeros(m)
    if warm_start is not None:
        x = as_vector(warm_start[0], "warm start v") / scaled.D
        y = as_vector(warm_start[1], "warm start y") / scaled.E * scaled.cost_scale
        z = np.minimum(scaled.A @ x, scaled.b)
    chol = factor(rho)

    D_inv = 1.0 / scaled.D
    E_inv = 1.0 / scaled.E
    best = (np.inf, x.copy(), y.copy())
    status = QpStatus.MAX_ITER
    iteration = 0
    for iteration in range(1, max_iter + 1):
        rhs = sigma * x - scaled.f + scaled.A.T @ (rho * z - y)
        x_tilde = scipy.linalg.cho_solve(chol, rhs)
        z_tilde = scaled.A @ x_tilde
        x_next = alpha * x_tilde + (1.0 - alpha) * x
        z_relaxed = alpha * z_tilde + (1.0 - alpha) * z
        z_next = np.minimum(z_relaxed + y / rho, scaled.b)
        y_next = y + rho * (z_relaxed - z_next)
        delta_y = y_next - y
        x, z, y = x_next, z_next, y_next

        if iteration % 10 and iteration != max_iter:
            continue

        Ax = scaled.A @ x
        r_prim = np.max(np.abs(E_inv * (Ax - z)))
        Hx = scaled.H @ x
        Aty = scaled.A.T @ y
        r_dual = np.max(np.abs(D_inv * (Hx + scaled.f + Aty))) / scaled.cost_scale
        eps_prim = tol + tol * max(np.max(np.abs(E_inv * Ax)), np.max(np.abs(E_inv * z)))
        eps_dual = tol + tol * max(
            np.max(np.abs(D_inv * Hx)), np.max(np.abs(D_inv * Aty)), np.max(np.abs(D_inv * scaled.f))
        ) / scaled.cost_scale
        merit = max(r_prim / eps_prim, r_dual / eps_dual)
        if merit < best[0]:
            best = (merit, x.copy(), y.copy())
        if r_prim <= eps_prim and r_dual <= eps_dual:
            status = QpStatus.OPTIMAL
            break

        norm_dy = np.max(np.abs(delta_y))
        if norm_dy > 1e-12:
            dy = delta_y / norm_dy
            if np.min(dy) > -1e-9 and scaled.b @ np.maximum(dy, 0.0) < -1e-6:
                if np.max(np.abs(D_inv * (scaled.A.T @ dy))) < 1e-6:
                    status = QpStatus.INFEASIBLE
                    break

        if iteration % 50 == 0:
            prim_rel = r_prim / max(np.max(np.abs(Ax)), np.max(np.abs(z)), 1e-12)
            dual_rel = r_dual * scaled.cost_scale / max(
                np.max(np.abs(Hx)), np.max(np.abs(Aty)), np.max(np.abs(scaled.f)), 1e-12
            )
            rho_new = float(np.clip(rho * np.sqrt(prim_rel / max(dual_rel, 1e-30)), 1e-6, 1e6))
            if rho_new > 5.0 * rho or rho_new < 0.2 * rho:
                rho = rho_new
                chol = factor(rho)

    if status == QpStatus.MAX_ITER:
        x, y = best[1], best[2]
    v = scaled.D * x
    multipliers = scaled.E * y / scaled.cost_scale

    polished = False
    if status != QpStatus.INFEASIBLE:
        candidate = _polish(problem, v, multipliers, slack_tol=1e-7 * max(1.0, np.max(np.abs(problem.b_in))))
        if candidate is not None:
            v_pol, y_pol = candidate
            res_pol = kkt_residuals(problem, v_pol, y_pol)
            res_admm = kkt_residuals(problem, v, np.maximum(multipliers, 0.0))
            pol_worst = max(res_pol.stationarity, res_pol.primal, res_pol.complementarity, res_pol.dual_sign)
            admm_worst = max(res_admm.stationarity, res_admm.primal, res_admm.complementarity, res_admm.dual_sign)
            if pol_worst <= max(admm_worst, tol):
                v, multipliers, polished = v_pol, y_pol, True
                if status == QpStatus.MAX_ITER and res_pol.within(tol):
                    status = QpStatus.OPTIMAL

    if status == QpStatus.OPTIMAL:
        return QpSolution(v, problem.objective(v), status, iteration, multipliers, polished)

    # ADMM stalled or claims infeasibility: settle it with phase one and an
    # active-set solve started from the ADMM iterate.
    start = _feasible_start(problem, v)
    if start is None:
        logger.warning("QP certified primal infeasible after %d iterations", iteration)
        return QpSolution(v, problem.objective(v), QpStatus.INFEASIBLE, iteration, np.zeros(m))
    refined = _active_set_solve(problem, start, tol, max_iter=10 * (n + m) + 50)
    if refined is not None and kkt_residuals(problem, refined[0], refined[1]).within(tol):
        v_as, y_as, passes = refined
        logger.info("ADMM stopped with status %s after %d iterations; active-set solve converged in %d passes",
                    status.value, iteration, passes)
        return QpSolution(v_as, problem.objective(v_as), QpStatus.OPTIMAL, iteration + passes, y_as, True)

    status = QpStatus.MAX_ITER
    logger.warning("QP stopped with status %s after %d iterations", status.value, iteration)
    return QpSolution(v, problem.objective(v), status, iteration, multipliers, polished)


def is_feasible(problem: QpProblem, v: np.ndarray, tol: float = 1e-8) -> bool:
    """Whether ``v`` satisfies A_in·v ≤ b_in + tol·max(1, |b_in|)."""
    v = as_vector(v, "v")
    if v.size != problem.num_variables:
        raise DimensionError(f"v has {v.size} entries, problem has {problem.num_variables}")
    if problem.b_in.size == 0:
        return True
    slack = problem.b_in - problem.A_in @ v
    return bool(np.all(slack >= -tol * np.maximum(1.0, np.abs(problem.b_in))))


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamMoments:
    first: Dict[str, np.ndarray]
    second: Dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: Dict[str, np.ndarray]) -> "AdamMoments":
        return cls(
            first={name: np.zeros_like(value) for name, value in params.items()},
            second={name: np.zeros_like(value) for name, value in params.items()},
        )


def adam_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    moments: AdamMoments,
    lr: float,
    step: int,
) -> Tuple[Dict[str, np.ndarray], AdamMoments]:
    """One bias-corrected Adam update (β₁=0.9, β₂=0.999, ε=1e-8).

    ``step`` counts from 1. Returns new parameter and moment dictionaries;
    the inputs are left untouched.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if step < 1:
        raise ValueError(f"step counts from 1, got {step}")
    new_params: Dict[str, np.ndarray] = {}
    new_first: Dict[str, np.ndarray] = {}
    new_second: Dict[str, np.ndarray] = {}
    correction1 = 1.0 - ADAM_BETA1**step
    correction2 = 1.0 - ADAM_BETA2**step
    for name, value in params.items():
        g = np.asarray(grads[name], dtype=float)
        if g.shape != value.shape or moments.first[name].shape != value.shape:
            raise DimensionError(f"shape mismatch for parameter block '{name}'")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter block '{name}'")
        m1 = ADAM_BETA1 * moments.first[name] + (1.0 - ADAM_BETA1) * g
        m2 = ADAM_BETA2 * moments.second[name] + (1.0 - ADAM_BETA2) * g * g
        new_params[name] = value - lr * (m1 / correction1) / (np.sqrt(m2 / correction2) + ADAM_EPS)
        new_first[name] = m1
        new_second[name] = m2
    return new_params, AdamMoments(new_first, new_second)


# ---------------------------------------------------------------------------
# Reverse-mode autodiff


@dataclass
class _Node:
    op: str
    parents: Tuple[int, ...]
    value: np.ndarray


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after NumPy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """Records elementary array operations for reverse-mode differentiation.

    Nodes are referenced by integer index; every operation appends a node
    whose parents precede it, so the recorded graph is acyclic by
    construction.
    """

    def __init__(self):
        self.nodes: List[_Node] = []
        self.parameters: Dict[str, int] = {}

    def _push(self, op: str, parents: Tuple[int, ...], value) -> int:
        self.nodes.append(_Node(op, parents, np.asarray(value, dtype=float)))
        return len(self.nodes) - 1

    def value(self, index: int) -> np.ndarray:
        return self.nodes[index].value

    def parameter(self, name: str, value) -> int:
        if name in self.parameters:
            raise KeyError(f"parameter '{name}' already recorded")
        index = self._push("param", (), np.array(value, dtype=float))
        self.parameters[name] = index
        return index

    def constant(self, value) -> int:
        return self._push("const", (), np.array(value, dtype=float))

    def add(self, a: int, b: int) -> int:
        return self._push("add", (a, b), self.value(a) + self.value(b))

    def sub(self, a: int, b: int) -> int:
        return self._push("sub", (a, b), self.value(a) - self.value(b))

    def mul(self, a: int, b: int) -> int:
        return self._push("mul", (a, b), self.value(a) * self.value(b))

    def matvec(self, w: int, x: int) -> int:
        """Matrix times a vector or a matrix of column vectors."""
        W, X = self.value(w), self.value(x)
        if W.ndim != 2 or W.shape[1] != X.shape[0]:
            raise DimensionError(f"matvec shapes {W.shape} and {X.shape} do not align")
        return self._push("matvec", (w, x), W @ X)

    def tanh(self, a: int) -> int:
        return self._push("tanh", (a,), np.tanh(self.value(a)))

    def square(self, a: int) -> int:
        return self._push("square", (a,), np.square(self.value(a)))

    def sum(self, a: int) -> int:
        return self._push("sum", (a,), np.sum(self.value(a)))


def grad(tape: Tape, output: int) -> Dict[str, np.ndarray]:
    """Gradient of a scalar tape node with respect to every parameter.

    Returns a dict keyed by parameter name in registration order.
    """
    out_value = tape.value(output)
    if out_value.size != 1:
        raise DimensionError(f"gradient needs a scalar output, node has shape {out_value.shape}")
    adjoints: List[Optional[np.ndarray]] = [None] * (output + 1)
    adjoints[output] = np.ones_like(out_value)

    for index in range(output, -1, -1):
        g = adjoints[index]
        if g is None:
            continue
        node = tape.nodes[index]
        contributions: List[Tuple[int, np.ndarray]] = []
        if node.op == "add":
            a, b = node.parents
            contributions = [(a, g), (b, g)]
        elif node.op == "sub":
            a, b = node.parents
            contributions = [(a, g), (b, -g)]
        elif node.op == "mul":
            a, b = node.parents
            contributions = [(a, g * tape.value(b)), (b, g * tape.value(a))]
        elif node.op == "matvec":
            w, x = node.parents
            W, X = tape.value(w), tape.value(x)
            if X.ndim == 1:
                contributions = [(w, np.outer(g, X)), (x, W.T @ g)]
            else:
                contributions = [(w, g @ X.T), (x, W.T @ g)]
        elif node.op == "tanh":
            (a,) = node.parents
            contributions = [(a, g * (1.0 - node.value**2))]
        elif node.op == "square":
            (a,) = node.parents
            contributions = [(a, 2.0 * g * tape.value(a))]
        elif node.op == "sum":
            (a,) = node.parents
            contributions = [(a, np.broadcast_to(g, tape.value(a).shape).copy())]

        for parent, contribution in contributions:
            contribution = _unbroadcast(np.asarray(contribution), tape.value(parent).shape)
            if adjoints[parent] is None:
                adjoints[parent] = contribution
            else:
                adjoints[parent] = adjoints[parent] + contribution

    return {
        name: (adjoints[i] if i < len(adjoints) and adjoints[i] is not None else np.zeros_like(tape.value(i)))
        for name, i in tape.parameters.items()
    }
