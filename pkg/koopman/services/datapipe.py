"""
Data matrices for identification.

Index conventions (s inputs, s+1 outputs in a trajectory):
    x_ini(k) = col(u(k−T_ini+1..k−1), y(k−T_ini+1..k)), defined for T_ini−1 ≤ k ≤ s
    column t of the Hankel set pairs the past window ending at k = T_ini−1+t
    with the future inputs u(k..k+N−1) and outputs y(k+1..k+N)
    T = s − T_ini − N + 1, so there are T+1 columns
"""

import logging
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from koopman.exceptions import DimensionError, InsufficientDataError
from koopman.services.numerics import RankReport, numerical_rank
from koopman.services.plants import Trajectory

logger = logging.getLogger(__name__)

LiftFunction = Callable[[np.ndarray], np.ndarray]


def _as_signal(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    return arr.reshape(-1, 1) if arr.ndim == 1 else arr


def window(v, k: int, j: int) -> np.ndarray:
    """Stack samples v(k), …, v(k+j−1) into one vector.

    Raises:
        InsufficientDataError: if the window leaves the signal.
    """
    signal = _as_signal(v)
    if k < 0 or j < 0 or k + j > signal.shape[0]:
        raise InsufficientDataError(
            f"window [{k}, {k + j}) does not fit a signal of {signal.shape[0]} samples"
        )
    return signal[k:k + j].reshape(-1)


@dataclass(frozen=True)
class IniWindow:
    """Past window x_ini = col(u_ini, y_ini) with p outputs per sample."""

    u_ini: np.ndarray
    y_ini: np.ndarray
    p: int = 1

    @property
    def x_ini(self) -> np.ndarray:
        return np.concatenate([self.u_ini, self.y_ini])

    @property
    def y_now(self) -> np.ndarray:
        """Most recent output, the last block of ``y_ini``."""
        return self.y_ini[-self.p:]

    @classmethod
    def from_arrays(cls, u_hist, y_hist) -> "IniWindow":
        """Build from (T_ini−1)×m past inputs and T_ini×p past outputs."""
        u = _as_signal(u_hist) if np.size(u_hist) else np.zeros((0, 1))
        y = _as_signal(y_hist)
        if u.shape[0] != y.shape[0] - 1:
            raise DimensionError(f"need {y.shape[0] - 1} past inputs for {y.shape[0]} outputs, got {u.shape[0]}")
        return cls(u.reshape(-1), y.reshape(-1), y.shape[1])


def ini_window(traj: Trajectory, k: int, T_ini: int) -> IniWindow:
    """x_ini(k) from a recorded trajectory."""
    if T_ini < 1:
        raise ValueError(f"T_ini must be ≥ 1, got {T_ini}")
    if k < T_ini - 1 or k > traj.num_steps:
        raise InsufficientDataError(f"x_ini({k}) needs samples {k - T_ini + 1}..{k}")
    start = k - T_ini + 1
    return IniWindow.from_arrays(traj.u[start:k], traj.y[start:k + 1])


def ini_windows(traj: Trajectory, T_ini: int, first: Optional[int] = None, last: Optional[int] = None) -> np.ndarray:
    """Matrix whose columns are x_ini(k) for k = first..last (inclusive)."""
    first = T_ini - 1 if first is None else first
    last = traj.num_steps if last is None else last
    if first < T_ini - 1 or last > traj.num_steps or first > last:
        raise InsufficientDataError(f"x_ini range {first}..{last} not available for T_ini={T_ini}")
    columns = [
        np.concatenate([window(traj.u, k - T_ini + 1, T_ini - 1), window(traj.y, k - T_ini + 1, T_ini)])
        for k in range(first, last + 1)
    ]
    return np.stack(columns, axis=1)


def lifted_sequence(lift: LiftFunction, traj: Trajectory, T_ini: int) -> np.ndarray:
    """Columns z(i) = φ(x_ini(T_ini−1+i)) for every available i.

    ``lift`` maps a batch of x_ini vectors (one per column) to lifted states
    (one per column).
    """
    return np.asarray(lift(ini_windows(traj, T_ini)), dtype=float)


def required_columns(m: int, p: int, T_ini: int, N: int) -> int:
    return (m + p) * T_ini + m * N


@dataclass(frozen=True)
class HankelSet:
    U_p: np.ndarray
    Y_p: np.ndarray
    U_f: np.ndarray
    Y_f: np.ndarray
    T_ini: int
    N: int
    T: int
    Z_p: Optional[np.ndarray] = None
    Z_f: Optional[np.ndarray] = None

    @property
    def columns(self) -> int:
        return self.T + 1

    @property
    def X_ini(self) -> np.ndarray:
        """Stacked [U_p; Y_p]; column t is x_ini(T_ini−1+t)."""
        return np.vstack([self.U_p, self.Y_p])

    def with_lifted(self, lifted: np.ndarray) -> "HankelSet":
        Z_p, Z_f = _lifted_blocks(lifted, self.T, self.N)
        return replace(self, Z_p=Z_p, Z_f=Z_f)

    def tables(self) -> Dict[str, np.ndarray]:
        """Named matrices for the textual dump; Z blocks only when present."""
        named = {"U_p": self.U_p, "Y_p": self.Y_p, "U_f": self.U_f, "Y_f": self.Y_f}
        if self.Z_p is not None and self.Z_f is not None:
            named.update(Z_p=self.Z_p, Z_f=self.Z_f)
        return named


def _lifted_blocks(lifted: np.ndarray, T: int, N: int) -> Tuple[np.ndarray, np.ndarray]:
    lifted = np.asarray(lifted, dtype=float)
    if lifted.ndim != 2 or lifted.shape[1] < T + N + 1:
        raise DimensionError(f"lifted sequence needs {T + N + 1} columns, got shape {lifted.shape}")
    Z_p = lifted[:, : T + 1].copy()
    Z_f = np.stack([lifted[:, t + 1:t + N + 1].T.reshape(-1) for t in range(T + 1)], axis=1)
    return Z_p, Z_f


def build_hankels(traj: Trajectory, T_ini: int, N: int, lifted: Optional[np.ndarray] = None) -> HankelSet:
    """Past/future Hankel matrices of a trajectory.

    Raises:
        InsufficientDataError: if the trajectory yields fewer columns than
            (m+p)·T_ini + m·N; the message names the minimum input count.
    """
    if T_ini < 1 or N < 1:
        raise ValueError(f"T_ini and N must be ≥ 1, got T_ini={T_ini}, N={N}")
    s = traj.num_steps
    T = s - T_ini - N + 1
    needed = required_columns(traj.m, traj.p, T_ini, N)
    if T < needed:
        raise InsufficientDataError(
            f"{s} inputs give T={T} but T ≥ {needed} is required; "
            f"record at least {needed + T_ini + N - 1} inputs"
        )
    U_p = np.stack([window(traj.u, t, T_ini - 1) for t in range(T + 1)], axis=1)
    Y_p = np.stack([window(traj.y, t, T_ini) for t in range(T + 1)], axis=1)
    U_f = np.stack([window(traj.u, t + T_ini - 1, N) for t in range(T + 1)], axis=1)
    Y_f = np.stack([window(traj.y, t + T_ini, N) for t in range(T + 1)], axis=1)
    hankels = HankelSet(U_p=U_p, Y_p=Y_p, U_f=U_f, Y_f=Y_f, T_ini=T_ini, N=N, T=T)
    if lifted is not None:
        hankels = hankels.with_lifted(lifted)
    logger.debug("built Hankel set with %d columns (T_ini=%d, N=%d)", T + 1, T_ini, N)
    return hankels


def check_excitation(Z_p, U_f) -> RankReport:
    """Rank of the stacked regressor [Z_p; U_f]."""
    Z_p = np.atleast_2d(np.asarray(Z_p, dtype=float))
    U_f = np.atleast_2d(np.asarray(U_f, dtype=float))
    if Z_p.shape[1] != U_f.shape[1]:
        raise DimensionError(f"Z_p has {Z_p.shape[1]} columns, U_f has {U_f.shape[1]}")
    return numerical_rank(np.vstack([Z_p, U_f]))


def split_trajectory(traj: Trajectory, train_fraction: float = 0.7) -> Tuple[Trajectory, Trajectory, int]:
    """Chronological train/test split at ``round(train_fraction · s)``."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    split = int(round(train_fraction * traj.num_steps))
    if split < 1 or split >= traj.num_steps:
        raise InsufficientDataError(f"cannot split {traj.num_steps} samples at fraction {train_fraction}")
    return traj.segment(0, split), traj.segment(split, traj.num_steps), split


def dataset_manifest(hankels: HankelSet, split_index: int, num_steps: int, seed: int) -> Dict[str, Any]:
    return {
        "T_ini": hankels.T_ini,
        "N": hankels.N,
        "T": hankels.T,
        "columns": hankels.columns,
        "split_index": split_index,
        "num_steps": num_steps,
        "seed": seed,
    }
