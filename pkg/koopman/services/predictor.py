"""
Lifted-state multi-step predictor.

    Z_f ≈ Ψ^LS·Z_p + Γ^LS·U_f,   [Ψ^LS Γ^LS] = Z_f·[Z_p; U_f]^†

The one-step pair (Ã, B̃) is the first L-row block. The multi-step matrices
are kept as fitted; ``structured_matrices`` rebuilds Ψ(Ã), Γ(Ã, B̃) when a
recursion-consistent model is wanted.
"""

import logging
from dataclasses import dataclass, replace
from typing import Any, Dict, Optional, Tuple

import numpy as np

from koopman.exceptions import DimensionError, RankDeficientError
from koopman.services.datapipe import check_excitation
from koopman.services.numerics import RankReport, as_matrix, as_vector, solve_least_squares, spectral_radius

logger = logging.getLogger(__name__)

RIDGE_FACTOR = 1e-8
PREDICTOR_FORMAT_VERSION = 1


@dataclass(frozen=True)
class MultiStepPredictor:
    Psi_LS: np.ndarray
    Gamma_LS: np.ndarray
    A_tilde: np.ndarray
    B_tilde: np.ndarray
    C: np.ndarray
    N: int
    rank: Optional[RankReport] = None
    residual: float = 0.0
    ridge: float = 0.0
    structured: bool = False

    @property
    def L(self) -> int:
        return self.A_tilde.shape[0]

    @property
    def m(self) -> int:
        return self.B_tilde.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "N": self.N,
            "L": self.L,
            "m": self.m,
            "p": self.p,
            "Psi_LS": self.Psi_LS.tolist(),
            "Gamma_LS": self.Gamma_LS.tolist(),
            "A_tilde": self.A_tilde.tolist(),
            "B_tilde": self.B_tilde.tolist(),
            "C": self.C.tolist(),
            "residual": self.residual,
            "ridge": self.ridge,
            "structured": self.structured,
            "rank": None if self.rank is None else {
                "rank": self.rank.rank,
                "rows": self.rank.rows,
                "full_row_rank": self.rank.full_row_rank,
                "smallest_retained": self.rank.smallest_retained,
                "sigma_max": self.rank.sigma_max,
            },
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MultiStepPredictor":
        L, m, p = data["L"], data["m"], data["p"]
        N = data["N"]
        rank = data.get("rank")
        return cls(
            Psi_LS=np.asarray(data["Psi_LS"], dtype=float).reshape(N * L, L),
            Gamma_LS=np.asarray(data["Gamma_LS"], dtype=float).reshape(N * L, N * m),
            A_tilde=np.asarray(data["A_tilde"], dtype=float).reshape(L, L),
            B_tilde=np.asarray(data["B_tilde"], dtype=float).reshape(L, m),
            C=np.asarray(data["C"], dtype=float).reshape(p, L),
            N=N,
            rank=None if rank is None else RankReport(**rank),
            residual=data["residual"],
            ridge=data["ridge"],
            structured=data.get("structured", False),
        )


def fit_predictor(
    Z_p,
    Z_f,
    U_f,
    C=None,
    allow_ridge: bool = False,
) -> MultiStepPredictor:
    """Least-squares multi-step matrices from lifted Hankel data.

    Args:
        Z_p: L × (T+1) lifted states at the start of each window.
        Z_f: N·L × (T+1) lifted future windows.
        U_f: N·m × (T+1) future input windows.
        C: p × L output selector; the identity when omitted.
        allow_ridge: fall back to a ridge of 1e-8·σ_max² when the regressor
            is rank deficient instead of raising.

    Raises:
        RankDeficientError: if [Z_p; U_f] is not full row rank and no ridge
            fallback was allowed.
    """
    Z_p = as_matrix(Z_p, "Z_p")
    Z_f = as_matrix(Z_f, "Z_f")
    U_f = as_matrix(U_f, "U_f")
    L = Z_p.shape[0]
    if Z_f.shape[0] % L or U_f.shape[0] % (Z_f.shape[0] // L):
        raise DimensionError(f"Z_f rows {Z_f.shape[0]} and U_f rows {U_f.shape[0]} do not fit L={L}")
    N = Z_f.shape[0] // L
    m = U_f.shape[0] // N
    report = check_excitation(Z_p, U_f)
    ridge = 0.0
    if not report.full_row_rank:
        if not allow_ridge:
            raise RankDeficientError(
                f"[Z_p; U_f] has rank {report.rank} < {report.rows}; "
                "the data are not persistently exciting (enable the ridge fallback to proceed)"
            )
        ridge = RIDGE_FACTOR * report.sigma_max**2
        logger.warning("regressor rank %d < %d, using ridge %.3e", report.rank, report.rows, ridge)

    regressor = np.vstack([Z_p, U_f])
    solution = solve_least_squares(regressor, Z_f, ridge=ridge)
    Psi_LS, Gamma_LS = solution[:, :L], solution[:, L:]
    residual = float(np.linalg.norm(Z_f - Psi_LS @ Z_p - Gamma_LS @ U_f))
    C = np.eye(L) if C is None else as_matrix(C, "C")
    if C.shape[1] != L:
        raise DimensionError(f"C must have {L} columns, got {C.shape}")
    logger.info("fitted predictor: L=%d N=%d m=%d, residual %.3e", L, N, m, residual)
    return MultiStepPredictor(
        Psi_LS=Psi_LS,
        Gamma_LS=Gamma_LS,
        A_tilde=Psi_LS[:L].copy(),
        B_tilde=Gamma_LS[:L, :m].copy(),
        C=C,
        N=N,
        rank=report,
        residual=residual,
        ridge=ridge,
    )


def fit_output_selector(Z, Y_now) -> np.ndarray:
    """Least-squares C with y(k) ≈ C·z(k), for maps without a pass-through channel."""
    return solve_least_squares(as_matrix(Z, "Z"), as_matrix(Y_now, "Y_now"))


def structured_matrices(A, B, N: int) -> Tuple[np.ndarray, np.ndarray]:
    """Ψ(A) = [A; A²; …; A^N] and the block lower-triangular Toeplitz Γ(A, B)."""
    if N < 1:
        raise ValueError(f"horizon N must be ≥ 1, got {N}")
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    L = A.shape[0]
    if A.shape != (L, L) or B.shape[0] != L:
        raise DimensionError(f"A{A.shape} and B{B.shape} are not compatible")
    m = B.shape[1]
    powers = [np.eye(L)]
    for _ in range(N):
        powers.append(A @ powers[-1])
    Psi = np.vstack(powers[1:])
    Gamma = np.zeros((N * L, N * m))
    for i in range(N):
        for j in range(i + 1):
            Gamma[i * L:(i + 1) * L, j * m:(j + 1) * m] = powers[i - j] @ B
    return Psi, Gamma


def with_structured_matrices(pred: MultiStepPredictor) -> MultiStepPredictor:
    """Copy of ``pred`` predicting with Ψ(Ã), Γ(Ã, B̃) instead of the fitted blocks."""
    Psi, Gamma = structured_matrices(pred.A_tilde, pred.B_tilde, pred.N)
    return replace(pred, Psi_LS=Psi, Gamma_LS=Gamma, structured=True)


def predict(pred: MultiStepPredictor, z0, u_seq) -> np.ndarray:
    """Stacked z(1..N) = Ψ·z0 + Γ·u for one initial state."""
    z0 = as_vector(z0, "z0")
    u_seq = as_vector(u_seq, "u_seq")
    if z0.size != pred.L or u_seq.size != pred.N * pred.m:
        raise DimensionError(
            f"expected z0 of size {pred.L} and u of size {pred.N * pred.m}, got {z0.size} and {u_seq.size}"
        )
    return pred.Psi_LS @ z0 + pred.Gamma_LS @ u_seq


def predict_outputs(pred: MultiStepPredictor, Z0, U_f) -> np.ndarray:
    """Output windows (N·p rows) for a batch of initial states and input windows."""
    Z = pred.Psi_LS @ np.atleast_2d(Z0) + pred.Gamma_LS @ np.atleast_2d(U_f)
    return np.kron(np.eye(pred.N), pred.C) @ Z


def consistency_report(pred: MultiStepPredictor) -> Dict[str, float]:
    """Relative mismatch of the fitted blocks against Ψ(Ã), Γ(Ã, B̃)."""
    Psi, Gamma = structured_matrices(pred.A_tilde, pred.B_tilde, pred.N)
    return {
        "psi_mismatch": float(np.linalg.norm(pred.Psi_LS - Psi) / max(1.0, np.linalg.norm(Psi))),
        "gamma_mismatch": float(np.linalg.norm(pred.Gamma_LS - Gamma) / max(1.0, np.linalg.norm(Gamma))),
        "spectral_radius_A": spectral_radius(pred.A_tilde),
    }
