"""
Koopman observables: a tanh feed-forward network over the past window x_ini.

The lifted state is

    φ(x_ini) = [ y(k) ; NN(x_ini / scale) − NN(0) ]

where y(k) is the newest output read straight from the window (the
pass-through channel) and NN is the last hidden layer of the network.
Subtracting NN(0) pins the origin to the origin.

Training fits the network and the linear output heads (Ψ̃, Γ̃) of the
multi-step model Ŷ_f = Ψ̃·φ([U_p; Y_p]) + Γ̃·U_f jointly with Adam, then
refits the heads by exact least squares for the learned network.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from koopman.exceptions import DimensionError, DivergenceError, InsufficientDataError, RankWarning
from koopman.services.datapipe import HankelSet, IniWindow
from koopman.services.numerics import AdamMoments, Tape, adam_step, grad, solve_least_squares

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1

Params = Dict[str, np.ndarray]


@dataclass
class ObservableMap:
    """Parameterized lifting φ: R^{(T_ini−1)m + T_ini·p} → R^L."""

    T_ini: int
    m: int
    p: int
    hidden: Tuple[int, ...] = ()
    weights: List[np.ndarray] = field(default_factory=list)
    biases: List[np.ndarray] = field(default_factory=list)
    input_scale: Optional[np.ndarray] = None
    pass_through_output: bool = True

    def __post_init__(self):
        self.hidden = tuple(int(width) for width in self.hidden)
        if not self.pass_through_output and not self.hidden:
            raise DimensionError("a map without pass-through needs at least one hidden layer")
        if self.input_scale is None:
            self.input_scale = np.ones(self.input_dim)
        self.input_scale = np.asarray(self.input_scale, dtype=float)
        if self.input_scale.shape != (self.input_dim,):
            raise DimensionError(f"input_scale must have {self.input_dim} entries")
        if len(self.weights) != len(self.hidden) or len(self.biases) != len(self.hidden):
            raise DimensionError(f"expected {len(self.hidden)} weight/bias pairs")
        fan_in = self.input_dim
        for layer, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.hidden[layer], fan_in) or b.shape != (self.hidden[layer],):
                raise DimensionError(f"layer {layer + 1} has shapes W{W.shape} b{b.shape}")
            fan_in = self.hidden[layer]

    @property
    def input_dim(self) -> int:
        return (self.T_ini - 1) * self.m + self.T_ini * self.p

    @property
    def nn_dim(self) -> int:
        return self.hidden[-1] if self.hidden else 0

    @property
    def L(self) -> int:
        return (self.p if self.pass_through_output else 0) + self.nn_dim

    @property
    def C(self) -> Optional[np.ndarray]:
        """Output selector [I_p 0], exact when the pass-through channel is on."""
        if not self.pass_through_output:
            return None
        return np.hstack([np.eye(self.p), np.zeros((self.p, self.nn_dim))])

    def network_params(self) -> Params:
        params: Params = {}
        for layer, (W, b) in enumerate(zip(self.weights, self.biases), start=1):
            params[f"W{layer}"] = W
            params[f"b{layer}"] = b
        return params

    def with_network_params(self, params: Params) -> "ObservableMap":
        layers = range(1, len(self.hidden) + 1)
        return ObservableMap(
            T_ini=self.T_ini,
            m=self.m,
            p=self.p,
            hidden=self.hidden,
            weights=[np.array(params[f"W{i}"]) for i in layers],
            biases=[np.array(params[f"b{i}"]).reshape(-1) for i in layers],
            input_scale=self.input_scale.copy(),
            pass_through_output=self.pass_through_output,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "T_ini": self.T_ini,
            "m": self.m,
            "p": self.p,
            "hidden": list(self.hidden),
            "pass_through_output": self.pass_through_output,
            "input_scale": self.input_scale.tolist(),
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ObservableMap":
        return cls(
            T_ini=data["T_ini"],
            m=data["m"],
            p=data["p"],
            hidden=tuple(data["hidden"]),
            weights=[np.asarray(W, dtype=float).reshape(len(W), -1) for W in data["weights"]],
            biases=[np.asarray(b, dtype=float) for b in data["biases"]],
            input_scale=np.asarray(data["input_scale"], dtype=float),
            pass_through_output=data["pass_through_output"],
        )


def init_map(
    T_ini: int,
    m: int,
    p: int,
    hidden: Sequence[int],
    seed: int,
    input_scale: Optional[np.ndarray] = None,
    pass_through_output: bool = True,
) -> ObservableMap:
    """Network with weights and biases drawn from U(−1/√fan_in, 1/√fan_in)."""
    rng = np.random.default_rng(seed)
    fan_in = (T_ini - 1) * m + T_ini * p
    weights, biases = [], []
    for width in hidden:
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(width, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=width))
        fan_in = width
    return ObservableMap(T_ini, m, p, tuple(hidden), weights, biases, input_scale, pass_through_output)


def _hidden_forward(obs_map: ObservableMap, X: np.ndarray) -> np.ndarray:
    h = X / obs_map.input_scale[:, None]
    for W, b in zip(obs_map.weights, obs_map.biases):
        h = np.tanh(W @ h + b[:, None])
    return h


def lift(obs_map: ObservableMap, x_ini: Union[IniWindow, np.ndarray]) -> np.ndarray:
    """Lifted state z = φ(x_ini).

    Accepts an ``IniWindow``, a single stacked vector, or a matrix with one
    x_ini per column (returns one z per column).
    """
    X = x_ini.x_ini if isinstance(x_ini, IniWindow) else np.asarray(x_ini, dtype=float)
    single = X.ndim == 1
    X = X.reshape(-1, 1) if single else X
    if X.shape[0] != obs_map.input_dim:
        raise DimensionError(f"x_ini has {X.shape[0]} entries, map expects {obs_map.input_dim}")
    blocks = []
    if obs_map.pass_through_output:
        blocks.append(X[-obs_map.p:, :])
    if obs_map.hidden:
        origin = _hidden_forward(obs_map, np.zeros((obs_map.input_dim, 1)))
        nn = _hidden_forward(obs_map, X) - origin
        # zero windows map to the origin exactly
        nn[:, ~np.any(X, axis=0)] = 0.0
        blocks.append(nn)
    Z = np.vstack(blocks)
    return Z[:, 0] if single else Z


@dataclass
class TrainedPredictorHeads:
    """Output-space multi-step heads Ψ̃ (N·p × L) and Γ̃ (N·p × N·m)."""

    Psi_tilde: np.ndarray
    Gamma_tilde: np.ndarray
    loss_history: List[float] = field(default_factory=list)
    stage1_loss: float = float("nan")
    final_loss: float = float("nan")
    iterations: int = 0

    def predict(self, Z: np.ndarray, U_f: np.ndarray) -> np.ndarray:
        return self.Psi_tilde @ Z + self.Gamma_tilde @ U_f

    def to_dict(self) -> Dict[str, Any]:
        return {
            "Psi_tilde": self.Psi_tilde.tolist(),
            "Gamma_tilde": self.Gamma_tilde.tolist(),
            "stage1_loss": self.stage1_loss,
            "final_loss": self.final_loss,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainedPredictorHeads":
        return cls(
            Psi_tilde=np.atleast_2d(np.asarray(data["Psi_tilde"], dtype=float)),
            Gamma_tilde=np.atleast_2d(np.asarray(data["Gamma_tilde"], dtype=float)),
            stage1_loss=data["stage1_loss"],
            final_loss=data["final_loss"],
            iterations=data["iterations"],
        )


class MultistepObjective:
    """Mean squared multi-step output error as a function of all parameters.

    Parameter blocks: network ``W{i}`` and column biases ``b{i}``, heads
    ``Psi_y`` (pass-through columns of Ψ̃), ``Psi_nn`` (network columns of Ψ̃)
    and ``Gamma``.
    """

    def __init__(self, template: ObservableMap, hankels: HankelSet):
        if hankels.X_ini.shape[0] != template.input_dim:
            raise DimensionError(
                f"Hankel windows have {hankels.X_ini.shape[0]} rows, map expects {template.input_dim}"
            )
        self.template = template
        self.X = hankels.X_ini / template.input_scale[:, None]
        self.Y_now = hankels.Y_p[-template.p:, :]
        self.U_f = hankels.U_f
        self.Y_f = hankels.Y_f
        self.count = float(self.Y_f.size)

    def initial_params(self, obs_map: ObservableMap) -> Params:
        rows = self.Y_f.shape[0]
        params: Params = {}
        for name, value in obs_map.network_params().items():
            params[name] = value.reshape(-1, 1) if name.startswith("b") else value.copy()
        if obs_map.pass_through_output:
            params["Psi_y"] = np.zeros((rows, obs_map.p))
        if obs_map.hidden:
            params["Psi_nn"] = np.zeros((rows, obs_map.nn_dim))
        params["Gamma"] = np.zeros((rows, self.U_f.shape[0]))
        return params

    def _record(self, params: Params) -> Tuple[Tape, int]:
        tape = Tape()
        nodes = {name: tape.parameter(name, value) for name, value in params.items()}
        prediction = tape.matvec(nodes["Gamma"], tape.constant(self.U_f))
        if "Psi_y" in nodes:
            prediction = tape.add(prediction, tape.matvec(nodes["Psi_y"], tape.constant(self.Y_now)))
        if self.template.hidden:
            h = tape.constant(self.X)
            h0 = tape.constant(np.zeros((self.X.shape[0], 1)))
            for layer in range(1, len(self.template.hidden) + 1):
                W, b = nodes[f"W{layer}"], nodes[f"b{layer}"]
                h = tape.tanh(tape.add(tape.matvec(W, h), b))
                h0 = tape.tanh(tape.add(tape.matvec(W, h0), b))
            features = tape.sub(h, h0)
            prediction = tape.add(prediction, tape.matvec(nodes["Psi_nn"], features))
        residual = tape.sub(tape.constant(self.Y_f), prediction)
        loss = tape.mul(tape.sum(tape.square(residual)), tape.constant(1.0 / self.count))
        return tape, loss

    def loss(self, params: Params) -> float:
        tape, out = self._record(params)
        return float(tape.value(out))

    def value_and_grad(self, params: Params) -> Tuple[float, Params]:
        tape, out = self._record(params)
        return float(tape.value(out)), grad(tape, out)


def input_scale_for(X_ini: np.ndarray) -> np.ndarray:
    """Per-coordinate standard deviation of the training windows (1 where flat)."""
    scale = np.std(X_ini, axis=1)
    return np.where(scale > 1e-12, scale, 1.0)


def refit_heads(obs_map: ObservableMap, hankels: HankelSet) -> Tuple[np.ndarray, np.ndarray, float]:
    """Exact least-squares Ψ̃, Γ̃ for a fixed map; returns the MSE as well."""
    Z = lift(obs_map, hankels.X_ini)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RankWarning)
        heads = solve_least_squares(np.vstack([Z, hankels.U_f]), hankels.Y_f)
    for warning in caught:
        logger.warning("head refit: %s", warning.message)
    Psi_tilde, Gamma_tilde = heads[:, : obs_map.L], heads[:, obs_map.L:]
    residual = hankels.Y_f - Psi_tilde @ Z - Gamma_tilde @ hankels.U_f
    return Psi_tilde, Gamma_tilde, float(np.mean(residual**2))


def train_multistep(
    hankels: HankelSet,
    hidden: Sequence[int],
    lr: float = 1e-2,
    epochs: int = 5000,
    seed: int = 0,
    pass_through_output: bool = True,
    patience: int = 200,
    min_improvement: float = 1e-12,
    log_every: int = 500,
) -> Tuple[ObservableMap, TrainedPredictorHeads]:
    """Fit φ and the output heads jointly, full batch, with Adam.

    The network of the best-loss iterate is kept and the heads are refit by
    exact least squares for it. Training stops early when the best loss has
    improved by less than ``min_improvement`` over ``patience`` iterations.

    Raises:
        DivergenceError: if the loss becomes non-finite.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if hankels.columns < 1:
        raise InsufficientDataError("training needs at least one Hankel column")
    m = hankels.U_f.shape[0] // hankels.N
    p = hankels.Y_f.shape[0] // hankels.N
    obs_map = init_map(
        hankels.T_ini, m, p, hidden, seed,
        input_scale=input_scale_for(hankels.X_ini),
        pass_through_output=pass_through_output,
    )
    objective = MultistepObjective(obs_map, hankels)
    params = objective.initial_params(obs_map)
    moments = AdamMoments.zeros_like(params)

    history: List[float] = []
    best_curve: List[float] = []
    best_loss = np.inf
    best_params = params
    iterations = 0
    train_network = bool(obs_map.hidden)
    for iteration in range(1, (epochs if train_network else 0) + 1):
        loss, grads = objective.value_and_grad(params)
        if not np.isfinite(loss):
            raise DivergenceError(
                f"training loss became non-finite at iteration {iteration}; try a smaller learning rate than {lr}"
            )
        history.append(loss)
        if loss < best_loss:
            best_loss, best_params = loss, params
        best_curve.append(best_loss)
        iterations = iteration
        if log_every and iteration % log_every == 0:
            logger.info("iteration %d: loss %.3e (best %.3e)", iteration, loss, best_loss)
        if iteration > patience and best_curve[-patience - 1] - best_loss < min_improvement:
            logger.info("early stop at iteration %d, best loss %.3e", iteration, best_loss)
            break
        params, moments = adam_step(params, grads, moments, lr, iteration)

    network = {name: value for name, value in best_params.items() if name[0] in "Wb"}
    network = {name: (value.reshape(-1) if name.startswith("b") else value) for name, value in network.items()}
    trained = obs_map.with_network_params(network)
    Psi_tilde, Gamma_tilde, final_loss = refit_heads(trained, hankels)
    stage1 = best_loss if train_network else final_loss
    logger.info("training finished: stage-1 loss %.3e, refit loss %.3e", stage1, final_loss)
    heads = TrainedPredictorHeads(
        Psi_tilde=Psi_tilde,
        Gamma_tilde=Gamma_tilde,
        loss_history=history + [final_loss],
        stage1_loss=float(stage1),
        final_loss=final_loss,
        iterations=iterations,
    )
    return trained, heads


def r_squared(y_true, y_pred, j: int, p: int = 1) -> float:
    """Coefficient of determination of the horizon-``j`` predictions.

    ``y_true`` and ``y_pred`` hold one stacked future window (N·p rows) per
    column; the mean is taken over the columns at offset ``j``.

    Raises:
        InsufficientDataError: if the test outputs at offset ``j`` are constant.
    """
    y_true = np.atleast_2d(np.asarray(y_true, dtype=float))
    y_pred = np.atleast_2d(np.asarray(y_pred, dtype=float))
    if y_true.shape != y_pred.shape:
        raise DimensionError(f"shapes differ: {y_true.shape} vs {y_pred.shape}")
    horizon = y_true.shape[0] // p
    if not 1 <= j <= horizon:
        raise ValueError(f"horizon index must lie in 1..{horizon}, got {j}")
    rows = slice((j - 1) * p, j * p)
    actual, predicted = y_true[rows], y_pred[rows]
    spread = np.sum((actual - actual.mean(axis=1, keepdims=True)) ** 2)
    if spread == 0.0:
        raise InsufficientDataError(f"test outputs at horizon {j} have zero variance")
    return float(1.0 - np.sum((actual - predicted) ** 2) / spread)


def r_squared_table(y_true, y_pred, p: int = 1) -> List[float]:
    horizon = np.atleast_2d(y_true).shape[0] // p
    return [r_squared(y_true, y_pred, j, p) for j in range(1, horizon + 1)]
