"""
Terminal ingredients of the predictive controller.

    P, K   DARE solution for (Ã, B̃, Q, R); z'Pz decreases under A_K = Ã + B̃K
    X_z    box bounding the lifted states, sampled from φ over the data box
    X_T    constraint-admissible invariant set of z' = A_K z inside
           {z ∈ X_z, Kz ∈ U}, as a polyhedron {z : M z ≤ b}

For lifted dimensions above ``polytope_max_dim`` the exact set is replaced
by the invariant subset of a box inscribed in the sublevel set {z'Pz ≤ c}
(recorded as representation "ellipsoid"). Either way X_T is the polyhedron
the controller constrains z_N to.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

from koopman.exceptions import ConvergenceError, DimensionError
from koopman.services.numerics import as_matrix, riccati_residual, solve_dare, spectral_radius
from koopman.services.observables import ObservableMap, lift

logger = logging.getLogger(__name__)

TERMINAL_FORMAT_VERSION = 1
REDUNDANCY_TOL = 1e-9
MIN_HALF_WIDTH = 1e-6

Bounds = Tuple[float, float]


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or np.any(lower > upper):
            raise DimensionError("box bounds must have equal shapes with lower ≤ upper")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def uniform(cls, lo: float, hi: float, dim: int) -> "Box":
        return cls(np.full(dim, lo, dtype=float), np.full(dim, hi, dtype=float))

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, z, tol: float = 0.0) -> bool:
        z = np.asarray(z, dtype=float)
        return bool(np.all(z >= self.lower - tol) and np.all(z <= self.upper + tol))

    def as_polyhedron(self) -> "Polyhedron":
        eye = np.eye(self.dim)
        return Polyhedron(np.vstack([eye, -eye]), np.concatenate([self.upper, -self.lower]))

    def to_dict(self) -> Dict[str, Any]:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Box":
        return cls(np.asarray(data["lower"]), np.asarray(data["upper"]))


@dataclass(frozen=True)
class Polyhedron:
    """{z : M z ≤ b}."""

    M: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        M = np.asarray(self.M, dtype=float).reshape(b.size, -1)
        if not np.all(np.isfinite(b)):
            raise DimensionError("polyhedron bounds must be finite")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.M.shape[1]

    def contains(self, z, tol: float = 0.0) -> bool:
        return bool(np.all(self.M @ np.asarray(z, dtype=float) <= self.b + tol))

    def to_dict(self) -> Dict[str, Any]:
        return {"M": self.M.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Polyhedron":
        return cls(np.asarray(data["M"], dtype=float), np.asarray(data["b"], dtype=float))


def ball_radius(poly: Polyhedron) -> float:
    """Radius of the largest origin-centred ball inside the polyhedron."""
    norms = np.linalg.norm(poly.M, axis=1)
    active = norms > 0
    if not np.any(active):
        return float("inf")
    return float(np.min(poly.b[active] / norms[active]))


@dataclass(frozen=True)
class TerminalIngredients:
    P: np.ndarray
    K: np.ndarray
    X_T: Polyhedron
    X_z: Box
    U: Box
    closed_loop_radius: float
    representation: str = "polytope"
    ellipsoid_level: Optional[float] = None
    iterations: int = 0

    def closed_loop(self, A, B) -> np.ndarray:
        return np.asarray(A) + np.asarray(B) @ self.K

    def to_dict(self) -> Dict[str, Any]:
        return {
            "P": self.P.tolist(),
            "K": self.K.tolist(),
            "X_T": self.X_T.to_dict(),
            "X_z": self.X_z.to_dict(),
            "U": self.U.to_dict(),
            "closed_loop_radius": self.closed_loop_radius,
            "representation": self.representation,
            "ellipsoid_level": self.ellipsoid_level,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TerminalIngredients":
        P = np.atleast_2d(np.asarray(data["P"], dtype=float))
        return cls(
            P=P,
            K=np.asarray(data["K"], dtype=float).reshape(-1, P.shape[0]),
            X_T=Polyhedron.from_dict(data["X_T"]),
            X_z=Box.from_dict(data["X_z"]),
            U=Box.from_dict(data["U"]),
            closed_loop_radius=data["closed_loop_radius"],
            representation=data["representation"],
            ellipsoid_level=data["ellipsoid_level"],
            iterations=data["iterations"],
        )


def estimate_xz(
    obs_map: ObservableMap,
    u_box: Bounds,
    y_box: Bounds,
    T_ini: int,
    samples: int = 20000,
    margin: float = 1.1,
    seed: int = 0,
) -> Box:
    """Bounding box of φ over windows drawn uniformly from U^{T_ini−1} × Y^{T_ini}.

    Bounds are widened to include the origin and multiplied by ``margin``;
    coordinates that never move get a ±1e-6 box so the origin stays interior.
    """
    if samples < 1000:
        raise ValueError(f"need at least 1000 samples, got {samples}")
    if T_ini != obs_map.T_ini:
        raise DimensionError(f"map was built for T_ini={obs_map.T_ini}, got {T_ini}")
    rng = np.random.default_rng(seed)
    num_u = (T_ini - 1) * obs_map.m
    num_y = T_ini * obs_map.p
    X = np.vstack([
        rng.uniform(u_box[0], u_box[1], size=(num_u, samples)),
        rng.uniform(y_box[0], y_box[1], size=(num_y, samples)),
    ])
    Z = lift(obs_map, X)
    lower = np.minimum(Z.min(axis=1), 0.0) * margin
    upper = np.maximum(Z.max(axis=1), 0.0) * margin
    return Box(np.minimum(lower, -MIN_HALF_WIDTH), np.maximum(upper, MIN_HALF_WIDTH))


def _normalize_rows(M: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(M, axis=1)
    keep = norms > 1e-12
    return M[keep] / norms[keep, None], b[keep] / norms[keep]


def _row_is_redundant(row: np.ndarray, bound: float, M: np.ndarray, b: np.ndarray) -> bool:
    """Whether max row·z over {M z ≤ b} stays below ``bound``."""
    if M.shape[0] == 0:
        return False
    result = linprog(-row, A_ub=M, b_ub=b, bounds=[(None, None)] * row.size, method="highs")
    if result.status != 0:
        return False
    return -result.fun <= bound + REDUNDANCY_TOL * max(1.0, abs(bound))


def prune_redundant(M: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Drop rows implied by the others; of two equivalent rows the earlier stays."""
    M, b = _normalize_rows(np.asarray(M, dtype=float), np.asarray(b, dtype=float))
    keep = np.ones(M.shape[0], dtype=bool)
    for i in range(M.shape[0] - 1, -1, -1):
        others = keep.copy()
        others[i] = False
        if _row_is_redundant(M[i], b[i], M[others], b[others]):
            keep[i] = False
    return M[keep], b[keep]


def maximal_invariant_set(
    A_K: np.ndarray,
    constraints: Polyhedron,
    max_iter: int = 200,
    max_rows: int = 4000,
) -> Tuple[Polyhedron, int]:
    """Largest subset of ``constraints`` invariant under z' = A_K z.

    Only the pre-images of the rows added in the previous pass are tested
    against the current set; redundant rows are pruned once at the end.

    Raises:
        ConvergenceError: if pre-images keep adding rows after ``max_iter``
            passes or the description grows past ``max_rows`` rows.
    """
    M, b = prune_redundant(constraints.M, constraints.b)
    frontier_M, frontier_b = M, b
    for iteration in range(1, max_iter + 1):
        candidates_M, candidates_b = _normalize_rows(frontier_M @ A_K, frontier_b)
        new_rows = [
            i for i in range(candidates_M.shape[0])
            if not _row_is_redundant(candidates_M[i], candidates_b[i], M, b)
        ]
        if not new_rows:
            M, b = prune_redundant(M, b)
            logger.info("invariant set converged after %d iterations with %d rows", iteration, M.shape[0])
            return Polyhedron(M, b), iteration
        frontier_M, frontier_b = candidates_M[new_rows], candidates_b[new_rows]
        M = np.vstack([M, frontier_M])
        b = np.concatenate([b, frontier_b])
        logger.debug("invariant set iteration %d: %d rows, %d new", iteration, M.shape[0], len(new_rows))
        if M.shape[0] > max_rows:
            raise ConvergenceError(f"invariant set exceeded {max_rows} rows after {iteration} iterations")
    raise ConvergenceError(
        f"invariant set did not converge in {max_iter} iterations; it still grows ({M.shape[0]} rows)"
    )


def admissible_constraints(K: np.ndarray, X_z: Box, U: Box) -> Polyhedron:
    """{z ∈ X_z, K z ∈ U} as stacked rows."""
    box = X_z.as_polyhedron()
    return Polyhedron(np.vstack([box.M, K, -K]), np.concatenate([box.b, U.upper, -U.lower]))


def ellipsoid_level(P: np.ndarray, constraints: Polyhedron) -> float:
    """Largest c with {z'Pz ≤ c} inside the constraint rows."""
    P_inv = np.linalg.inv(P)
    quad = np.einsum("ij,jk,ik->i", constraints.M, P_inv, constraints.M)
    active = quad > 1e-15
    return float(np.min(constraints.b[active] ** 2 / quad[active]))


def inscribed_box(P: np.ndarray, level: float) -> Polyhedron:
    """Box in P^{1/2} coordinates contained in {z'Pz ≤ level}."""
    factor = scipy.linalg.cholesky(P, lower=False)  # P = FᵀF
    dim = P.shape[0]
    half = np.sqrt(level / dim)
    return Polyhedron(np.vstack([factor, -factor]), np.full(2 * dim, half))


def compute_terminal(
    A_tilde,
    B_tilde,
    Q,
    R,
    X_z: Box,
    U: Box,
    max_iter: int = 200,
    polytope_max_dim: int = 12,
    dare_tol: float = 1e-12,
    dare_max_iter: int = 10000,
    max_rows: int = 4000,
) -> TerminalIngredients:
    """Terminal cost, gain and set for the lifted one-step model.

    The exact set is tried up to ``polytope_max_dim``; above it, or when the
    exact set runs out of iterations or rows, X_T is the invariant subset of
    the box inscribed in the largest admissible sublevel set of z'Pz.
    """
    A = as_matrix(A_tilde, "A_tilde")
    B = as_matrix(B_tilde, "B_tilde")
    if X_z.dim != A.shape[0] or U.dim != B.shape[1]:
        raise DimensionError(f"X_z must have {A.shape[0]} and U {B.shape[1]} coordinates")
    P, K = solve_dare(A, B, Q, R, tol=dare_tol, max_iter=dare_max_iter)
    A_K = A + B @ K
    radius = spectral_radius(A_K)
    constraints = admissible_constraints(K, X_z, U)

    if A.shape[0] <= polytope_max_dim:
        try:
            X_T, iterations = maximal_invariant_set(A_K, constraints, max_iter=max_iter, max_rows=max_rows)
            return TerminalIngredients(P, K, X_T, X_z, U, radius, "polytope", None, iterations)
        except ConvergenceError as exc:
            logger.warning("exact terminal set gave up (%s); using the ellipsoidal set", exc)
    else:
        logger.info("lifted dimension %d > %d, using the ellipsoidal terminal set", A.shape[0], polytope_max_dim)

    level = ellipsoid_level(P, constraints)
    box = inscribed_box(P, level)
    seed_set = Polyhedron(np.vstack([constraints.M, box.M]), np.concatenate([constraints.b, box.b]))
    # A_K is Schur, so the pre-image recursion inside a bounded seed set terminates
    X_T, iterations = maximal_invariant_set(A_K, seed_set, max_iter=max_iter, max_rows=max_rows)
    logger.info("ellipsoidal terminal set: c=%.3e, %d rows after %d iterations", level, X_T.b.size, iterations)
    return TerminalIngredients(P, K, X_T, X_z, U, radius, "ellipsoid", level, iterations)


def sample_polyhedron(poly: Polyhedron, count: int, seed: int = 0, burn_in: int = 50) -> np.ndarray:
    """Hit-and-run samples (one per row) from a bounded polyhedron containing 0."""
    rng = np.random.default_rng(seed)
    z = np.zeros(poly.dim)
    points = np.zeros((count, poly.dim))
    for i in range(-burn_in, count):
        direction = rng.normal(size=poly.dim)
        direction /= np.linalg.norm(direction)
        rates = poly.M @ direction
        slack = poly.b - poly.M @ z
        with np.errstate(divide="ignore"):
            steps = slack / rates
        upper = np.min(steps[rates > 1e-15], initial=np.inf)
        lower = np.max(steps[rates < -1e-15], initial=-np.inf)
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise DimensionError("hit-and-run needs a bounded polyhedron")
        z = z + rng.uniform(lower, upper) * direction
        if i >= 0:
            points[i] = z
    return points


def sample_ellipsoid(P: np.ndarray, level: float, count: int, seed: int = 0) -> np.ndarray:
    """Uniform samples from {z'Pz ≤ level}."""
    rng = np.random.default_rng(seed)
    dim = P.shape[0]
    directions = rng.normal(size=(count, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = rng.uniform(size=(count, 1)) ** (1.0 / dim)
    factor = scipy.linalg.cholesky(P, lower=False)
    return scipy.linalg.solve_triangular(factor, (np.sqrt(level) * radii * directions).T).T


def check_terminal(
    ingredients: TerminalIngredients,
    A_tilde,
    B_tilde,
    Q,
    R,
    samples: int = 1000,
    seed: int = 0,
) -> Dict[str, Any]:
    """Monte-Carlo certificate of the terminal ingredients.

    Counts invariance, input and X_z violations over ``samples`` points of
    X_T, the polyhedron the controller imposes, and reports the largest
    eigenvalue of the Lyapunov residual, which must be ≤ 0 up to round-off.
    Ellipsoidal ingredients also report invariance of {z'Pz ≤ c}.
    """
    A = as_matrix(A_tilde, "A_tilde")
    B = as_matrix(B_tilde, "B_tilde")
    Q = as_matrix(Q, "Q")
    R = as_matrix(R, "R")
    A_K = A + B @ ingredients.K
    residual = riccati_residual(A, B, Q, R, ingredients.P, ingredients.K)
    lyapunov_max = float(np.max(np.linalg.eigvalsh(0.5 * (residual + residual.T))))

    points = sample_polyhedron(ingredients.X_T, samples, seed)
    images = points @ A_K.T
    tol = 1e-9 * np.maximum(1.0, np.abs(ingredients.X_T.b))
    invariance = int(np.sum(np.any(images @ ingredients.X_T.M.T > ingredients.X_T.b + tol, axis=1)))

    inputs = points @ ingredients.K.T
    input_violations = int(np.sum(np.any((inputs < ingredients.U.lower - 1e-9) | (inputs > ingredients.U.upper + 1e-9), axis=1)))
    state_violations = int(np.sum(np.any((points < ingredients.X_z.lower - 1e-9) | (points > ingredients.X_z.upper + 1e-9), axis=1)))

    ellipsoid_violations = None
    if ingredients.representation == "ellipsoid":
        inner = sample_ellipsoid(ingredients.P, ingredients.ellipsoid_level, samples, seed)
        inner_images = inner @ A_K.T
        values = np.einsum("ij,jk,ik->i", inner_images, ingredients.P, inner_images)
        ellipsoid_violations = int(np.sum(values > ingredients.ellipsoid_level * (1 + 1e-9)))
    return {
        "samples": samples,
        "representation": ingredients.representation,
        "lyapunov_max_eig": lyapunov_max,
        "riccati_residual_norm": float(np.linalg.norm(residual)),
        "closed_loop_radius": spectral_radius(A_K),
        "invariance_violations": invariance,
        "input_violations": input_violations,
        "state_violations": state_violations,
        "ellipsoid_invariance_violations": ellipsoid_violations,
        "ball_radius": ball_radius(ingredients.X_T),
    }
