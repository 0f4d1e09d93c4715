"""
Discrete-time benchmark plants and excitation signals.

Plants:
    csd       cart-spring-damper with an exponential spring, y = position
    pendulum  damped pendulum with torque input, y = angle
    lti       linear oracle plant x' = Ax + Bu, y = Cx

Every plant is a ``PlantModel`` built from a parameter record, so the
experiment config is the single place where numbers are chosen.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

import numpy as np

from koopman.exceptions import DimensionError, DivergenceError, ExcitationError, NonFiniteError

logger = logging.getLogger(__name__)

StepFunction = Callable[[np.ndarray, np.ndarray, Mapping[str, Any]], np.ndarray]
OutputFunction = Callable[[np.ndarray, Mapping[str, Any]], np.ndarray]


DEFAULT_PARAMETERS: Dict[str, Dict[str, Any]] = {
    "csd": {"k0": 0.33, "hd": 1.1, "M": 1.0, "Ts": 0.4},
    "pendulum": {"M": 1.0, "L": 1.0, "g": 9.81, "b": 0.1, "Ts": 1.0 / 30.0},
    "lti": {"A": [[0.5]], "B": [[1.0]], "C": [[1.0]], "Ts": 1.0},
}


def _scalar_input(u) -> float:
    return float(np.asarray(u, dtype=float).ravel()[0])


def csd_step(x, u, params: Mapping[str, Any]) -> np.ndarray:
    """One step of the cart-spring-damper map.

    x1' = x1 + Ts·x2
    x2' = x2 − (Ts·k0/M)·exp(−x1)·x1 − (Ts·hd/M)·x2 + (Ts/M)·u
    """
    x1, x2 = float(x[0]), float(x[1])
    ts, mass = params["Ts"], params["M"]
    u0 = _scalar_input(u)
    return np.array([
        x1 + ts * x2,
        x2 - ts * params["k0"] / mass * np.exp(-x1) * x1 - ts * params["hd"] / mass * x2 + ts / mass * u0,
    ])


def csd_output(x, params: Mapping[str, Any]) -> np.ndarray:
    return np.array([float(x[0])])


def pendulum_inertia(params: Mapping[str, Any]) -> float:
    return params["M"] * params["L"] ** 2 / 3.0


def pendulum_step(x, u, params: Mapping[str, Any]) -> np.ndarray:
    """One step of the pendulum map; x1 is angular velocity, x2 the angle."""
    x1, x2 = float(x[0]), float(x[1])
    ts = params["Ts"]
    inertia = pendulum_inertia(params)
    gravity = params["M"] * params["L"] * params["g"] * ts / (2.0 * inertia)
    u0 = _scalar_input(u)
    return np.array([
        (1.0 - params["b"] * ts / inertia) * x1 + ts / inertia * u0 - gravity * np.sin(x2),
        ts * x1 + x2,
    ])


def pendulum_output(x, params: Mapping[str, Any]) -> np.ndarray:
    return np.array([float(x[1])])


def lti_step(x, u, params: Mapping[str, Any]) -> np.ndarray:
    A = np.asarray(params["A"], dtype=float)
    B = np.asarray(params["B"], dtype=float)
    return A @ np.asarray(x, dtype=float) + B @ np.atleast_1d(np.asarray(u, dtype=float))


def lti_output(x, params: Mapping[str, Any]) -> np.ndarray:
    return np.asarray(params["C"], dtype=float) @ np.asarray(x, dtype=float)


@dataclass(frozen=True)
class PlantModel:
    """A discrete-time plant x(k+1) = f(x(k), u(k)), y(k) = h(x(k))."""

    name: str
    n: int
    m: int
    p: int
    Ts: float
    step_fn: StepFunction = field(repr=False)
    output_fn: OutputFunction = field(repr=False)
    params: Mapping[str, Any] = field(default_factory=dict)

    def step(self, x, u) -> np.ndarray:
        return self.step_fn(np.asarray(x, dtype=float), np.atleast_1d(np.asarray(u, dtype=float)), self.params)

    def output(self, x) -> np.ndarray:
        return self.output_fn(np.asarray(x, dtype=float), self.params)


def make_plant(name: str, params: Optional[Mapping[str, Any]] = None) -> PlantModel:
    """Build a registered plant, overriding defaults with ``params``.

    Raises:
        KeyError: if ``name`` is not a registered plant.
    """
    if name not in DEFAULT_PARAMETERS:
        raise KeyError(f"Unknown plant '{name}'; expected one of {sorted(DEFAULT_PARAMETERS)}")
    merged = {**DEFAULT_PARAMETERS[name], **(params or {})}
    if name == "csd":
        return PlantModel("csd", 2, 1, 1, merged["Ts"], csd_step, csd_output, merged)
    if name == "pendulum":
        return PlantModel("pendulum", 2, 1, 1, merged["Ts"], pendulum_step, pendulum_output, merged)
    A = np.atleast_2d(np.asarray(merged["A"], dtype=float))
    B = np.atleast_2d(np.asarray(merged["B"], dtype=float))
    C = np.atleast_2d(np.asarray(merged["C"], dtype=float))
    if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0] or C.shape[1] != A.shape[0]:
        raise DimensionError(f"LTI plant matrices do not fit: A{A.shape} B{B.shape} C{C.shape}")
    merged.update(A=A.tolist(), B=B.tolist(), C=C.tolist())
    return PlantModel("lti", A.shape[0], B.shape[1], C.shape[0], merged["Ts"], lti_step, lti_output, merged)


def linearize(plant: PlantModel, eps: float = 1e-6) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Central finite-difference Jacobians (A, B, C) at the origin."""
    x0 = np.zeros(plant.n)
    u0 = np.zeros(plant.m)
    A = np.zeros((plant.n, plant.n))
    B = np.zeros((plant.n, plant.m))
    C = np.zeros((plant.p, plant.n))
    for i in range(plant.n):
        dx = np.zeros(plant.n)
        dx[i] = eps
        A[:, i] = (plant.step(x0 + dx, u0) - plant.step(x0 - dx, u0)) / (2 * eps)
        C[:, i] = (plant.output(x0 + dx) - plant.output(x0 - dx)) / (2 * eps)
    for j in range(plant.m):
        du = np.zeros(plant.m)
        du[j] = eps
        B[:, j] = (plant.step(x0, u0 + du) - plant.step(x0, u0 - du)) / (2 * eps)
    return A, B, C


@dataclass(frozen=True)
class Trajectory:
    """Input/output record of a plant run.

    ``u`` holds the s applied inputs; ``y`` (and ``x`` when present) hold the
    s+1 samples measured before each input plus the final one.
    """

    u: np.ndarray
    y: np.ndarray
    x: Optional[np.ndarray] = None

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        y = np.asarray(self.y, dtype=float)
        u = u.reshape(len(u), -1) if u.ndim < 2 else u
        y = y.reshape(len(y), -1) if y.ndim < 2 else y
        if y.shape[0] != u.shape[0] + 1:
            raise DimensionError(f"y needs {u.shape[0] + 1} samples for {u.shape[0]} inputs, got {y.shape[0]}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y))):
            raise NonFiniteError("trajectory contains non-finite samples")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        if self.x is not None:
            x = np.asarray(self.x, dtype=float)
            x = x.reshape(len(x), -1) if x.ndim < 2 else x
            if x.shape[0] != y.shape[0]:
                raise DimensionError(f"x has {x.shape[0]} samples, y has {y.shape[0]}")
            object.__setattr__(self, "x", x)

    @property
    def num_steps(self) -> int:
        return self.u.shape[0]

    @property
    def m(self) -> int:
        return self.u.shape[1]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    def segment(self, start: int, stop: int) -> "Trajectory":
        """Inputs start..stop−1 with outputs start..stop."""
        if not 0 <= start < stop <= self.num_steps:
            raise IndexError(f"segment [{start}, {stop}) outside 0..{self.num_steps}")
        x = None if self.x is None else self.x[start:stop + 1]
        return Trajectory(self.u[start:stop], self.y[start:stop + 1], x)


def simulate(plant: PlantModel, x0, u_seq) -> Trajectory:
    """Apply ``u_seq`` to ``plant`` from ``x0``.

    Raises:
        DimensionError: if the input sequence is empty or has the wrong width.
        DivergenceError: if the state stops being finite; names the step.
    """
    u = np.asarray(u_seq, dtype=float)
    u = u.reshape(len(u), -1) if u.ndim < 2 else u
    if u.shape[0] < 1:
        raise DimensionError("u_seq must hold at least one input")
    if u.shape[1] != plant.m:
        raise DimensionError(f"{plant.name} takes {plant.m} inputs per step, got {u.shape[1]}")
    x = np.zeros((u.shape[0] + 1, plant.n))
    x[0] = np.asarray(x0, dtype=float)
    for k in range(u.shape[0]):
        x[k + 1] = plant.step(x[k], u[k])
        if not np.all(np.isfinite(x[k + 1])):
            raise DivergenceError(f"{plant.name} state became non-finite at step {k + 1}")
    y = np.array([plant.output(state) for state in x])
    return Trajectory(u, y, x)


# ---------------------------------------------------------------------------
# Excitation


@dataclass(frozen=True)
class MultisineSpec:
    lo: float = -4.0
    hi: float = 4.0
    band: Tuple[float, float] = (0.0, 1.0)
    period: int = 1000
    num_period: int = 1
    num_sines: int = 25
    num_trials: int = 40
    grid_skip: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ExcitationError(f"range must satisfy lo < hi, got [{self.lo}, {self.hi}]")
        band_lo, band_hi = self.band
        if not 0.0 <= band_lo < band_hi <= 1.0:
            raise ExcitationError(f"band must satisfy 0 ≤ lo < hi ≤ 1, got {self.band}")
        if min(self.num_sines, self.num_trials, self.num_period, self.grid_skip) < 1:
            raise ExcitationError("num_sines, num_trials, num_period and grid_skip must be ≥ 1")
        if self.period < 2 * self.num_sines:
            raise ExcitationError(f"period {self.period} cannot host {self.num_sines} sines")


def multisine_frequencies(spec: MultisineSpec) -> np.ndarray:
    """Grid indices j (frequency j/period cycles/sample) used by the signal.

    The band is normalized to the Nyquist frequency, so grid point j sits at
    2j/period in band units. The ``num_sines`` lines are spread evenly over
    the in-band grid, both band edges included.
    """
    j_max = int(np.floor(spec.band[1] * spec.period / 2))
    j_min = max(1, int(np.ceil(spec.band[0] * spec.period / 2)))
    grid = np.arange(j_min, j_max + 1, spec.grid_skip)
    if grid.size < spec.num_sines:
        raise ExcitationError(
            f"band {spec.band} holds only {grid.size} grid frequencies, {spec.num_sines} requested"
        )
    picks = np.round(np.linspace(0, grid.size - 1, spec.num_sines)).astype(int)
    return grid[picks]


def multisine_candidates(spec: MultisineSpec) -> np.ndarray:
    """All ``num_trials`` unscaled one-period candidate signals, one per row."""
    rng = np.random.default_rng(spec.seed)
    grid = multisine_frequencies(spec)
    k = np.arange(spec.period)
    angles = 2.0 * np.pi * np.outer(grid, k) / spec.period
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(spec.num_trials, spec.num_sines))
    return np.stack([np.sin(angles + phase[:, None]).sum(axis=0) for phase in phases])


def multisine(spec: MultisineSpec) -> np.ndarray:
    """Minimum-crest-factor multisine scaled to exactly [lo, hi].

    Returns a 1-D array of length ``period · num_period``.
    """
    candidates = multisine_candidates(spec)
    peaks = np.max(np.abs(candidates), axis=1)
    best = int(np.argmin(peaks))
    base = candidates[best]
    logger.debug("multisine picked phase draw %d with peak %.4f", best, peaks[best])
    scaled = spec.lo + (base - base.min()) / (base.max() - base.min()) * (spec.hi - spec.lo)
    scaled[np.argmin(base)] = spec.lo
    scaled[np.argmax(base)] = spec.hi
    return np.tile(scaled, spec.num_period)
