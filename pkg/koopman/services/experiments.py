"""
Experiment pipeline: generate → train → fit → terminal → closed loop → report.

Every stage reads what the previous stages persisted under the run directory
and writes its own artifacts there, so stages can be run one at a time from
the command line or all at once through ``run_pipeline``. Given the same
config and seed, every artifact is reproduced byte for byte.
"""

import logging
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from koopman.conf import koopman_setting
from koopman.exceptions import KoopmanError, StageError
from koopman.services.datapipe import build_hankels, dataset_manifest, lifted_sequence, split_trajectory
from koopman.services.kdpc import ClosedLoopRun, KdpcConfig, RegularizationVariant, normalized_decrease, run_closed_loop
from koopman.services.nmpc import NmpcRun, nmpc_baseline, terminal_weight
from koopman.services.observables import (
    MODEL_FORMAT_VERSION,
    ObservableMap,
    TrainedPredictorHeads,
    lift,
    r_squared_table,
    train_multistep,
)
from koopman.services.plants import MultisineSpec, PlantModel, Trajectory, make_plant, multisine, simulate
from koopman.services.predictor import (
    PREDICTOR_FORMAT_VERSION,
    MultiStepPredictor,
    consistency_report,
    fit_output_selector,
    fit_predictor,
    predict_outputs,
    with_structured_matrices,
)
from koopman.services.reporting import ReportArtifacts, RunReport, emit_report, empty_closed_loop_summary
from koopman.services.terminal import (
    TERMINAL_FORMAT_VERSION,
    Box,
    TerminalIngredients,
    check_terminal,
    compute_terminal,
    estimate_xz,
)
from koopman.utils.artifact_io import (
    read_json,
    read_trajectory_csv,
    read_versioned,
    write_json,
    write_matrix_csv,
    write_rows_csv,
    write_trajectory_csv,
    write_versioned,
)

logger = logging.getLogger(__name__)

STAGES = ("generate", "train", "fit", "terminal", "closed_loop", "nmpc", "report")
SATURATION_TOL = 1e-6


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class PlantSection:
    name: str
    params: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class TrainingSection:
    T_ini: int
    N: int
    hidden: Tuple[int, ...] = (8, 8)
    lr: float = 1e-2
    epochs: int = 5000
    patience: int = 200
    train_fraction: float = 0.7
    pass_through_output: bool = True
    data_x0: Optional[Tuple[float, ...]] = None


@dataclass(frozen=True)
class ControllerSection:
    q: float = 10.0
    R: Tuple[Tuple[float, ...], ...] = ((1.0,),)
    lam: float = 1e9
    variant: RegularizationVariant = RegularizationVariant.DEVIATION
    u_bounds: Tuple[float, float] = (-1.0, 1.0)
    y_bounds: Optional[Tuple[float, float]] = None
    xz_margin: float = 1.1
    xz_samples: int = 20000
    prediction_matrices: str = "least_squares"
    allow_ridge: bool = False

    @property
    def R_matrix(self) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.R, dtype=float))


@dataclass(frozen=True)
class SimulationSection:
    x0: Tuple[float, ...]
    steps: int = 200


@dataclass(frozen=True)
class NmpcSection:
    enabled: bool = True
    q: float = 10.0
    N: Optional[int] = None


@dataclass(frozen=True)
class AcceptanceSection:
    """Thresholds checked by the report stage; ``None`` skips a check."""

    min_r2: Optional[float] = None
    max_infeasible_steps: Optional[int] = None
    max_candidate_failures: Optional[int] = None
    max_decrease_residual: Optional[float] = None
    max_final_output: Optional[float] = None
    max_error_norm: Optional[float] = None
    max_median_error_norm: Optional[float] = None
    max_xi_after_deactivation: Optional[float] = None
    max_terminal_violations: Optional[int] = None
    max_cost_ratio: Optional[float] = None
    require_saturation: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seed: int
    out_dir: Path
    plant: PlantSection
    multisine: MultisineSpec
    training: TrainingSection
    controller: ControllerSection
    simulation: SimulationSection
    nmpc: NmpcSection = field(default_factory=NmpcSection)
    acceptance: AcceptanceSection = field(default_factory=AcceptanceSection)
    dump_hankels: bool = False

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        """Build from validated config data (nested plain dicts)."""
        training = dict(data["training"])
        training["hidden"] = tuple(training.get("hidden", ()))
        if training.get("data_x0") is not None:
            training["data_x0"] = tuple(training["data_x0"])
        controller = dict(data.get("controller", {}))
        for key in ("u_bounds", "y_bounds"):
            if controller.get(key) is not None:
                controller[key] = tuple(controller[key])
        if "R" in controller:
            controller["R"] = tuple(tuple(row) for row in np.atleast_2d(controller["R"]).tolist())
        if "variant" in controller:
            controller["variant"] = RegularizationVariant(controller["variant"])
        multisine_data = dict(data.get("multisine", {}))
        if "band" in multisine_data:
            multisine_data["band"] = tuple(multisine_data["band"])
        simulation = dict(data["simulation"])
        simulation["x0"] = tuple(simulation["x0"])
        return cls(
            name=data["name"],
            seed=int(data["seed"]),
            out_dir=Path(data["out_dir"]),
            plant=PlantSection(**data["plant"]),
            multisine=replace(MultisineSpec(**multisine_data), seed=int(data["seed"])),
            training=TrainingSection(**training),
            controller=ControllerSection(**controller),
            simulation=SimulationSection(**simulation),
            nmpc=NmpcSection(**data.get("nmpc", {})),
            acceptance=AcceptanceSection(**data.get("acceptance", {})),
            dump_hankels=bool(data.get("dump_hankels", False)),
        )

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["out_dir"] = str(self.out_dir)
        data["controller"]["variant"] = self.controller.variant.value
        return data

    def canonical_dict(self) -> Dict[str, Any]:
        """Everything that determines the results; the output directory is left out."""
        data = self.to_dict()
        del data["out_dir"]
        return data

    @property
    def paths(self) -> "RunPaths":
        return RunPaths(self.out_dir)


@dataclass(frozen=True)
class RunPaths:
    root: Path

    @property
    def config(self) -> Path:
        return self.root / "config.json"

    @property
    def identification(self) -> Path:
        return self.root / "data" / "identification.csv"

    @property
    def dataset(self) -> Path:
        return self.root / "data" / "dataset.json"

    @property
    def hankel_dir(self) -> Path:
        return self.root / "data" / "hankels"

    @property
    def model(self) -> Path:
        return self.root / "model" / "observables.json"

    @property
    def training_loss(self) -> Path:
        return self.root / "model" / "training_loss.csv"

    @property
    def predictor(self) -> Path:
        return self.root / "model" / "predictor.json"

    @property
    def scores(self) -> Path:
        return self.root / "model" / "scores.json"

    @property
    def terminal(self) -> Path:
        return self.root / "model" / "terminal.json"

    @property
    def kdpc_trajectory(self) -> Path:
        return self.root / "closed_loop" / "kdpc_trajectory.csv"

    @property
    def kdpc_steps(self) -> Path:
        return self.root / "closed_loop" / "kdpc_steps.csv"

    @property
    def kdpc_summary(self) -> Path:
        return self.root / "closed_loop" / "kdpc_summary.json"

    @property
    def nmpc_trajectory(self) -> Path:
        return self.root / "closed_loop" / "nmpc_trajectory.csv"

    @property
    def nmpc_costs(self) -> Path:
        return self.root / "closed_loop" / "nmpc_costs.csv"

    @property
    def nmpc_summary(self) -> Path:
        return self.root / "closed_loop" / "nmpc_summary.json"

    @property
    def report_dir(self) -> Path:
        return self.root / "report"


@contextmanager
def stage(name: str, paths: Sequence[Path]) -> Iterator[None]:
    """Log the stage and re-raise any service failure as ``StageError``."""
    logger.info("stage %s: start", name)
    try:
        yield
    except StageError:
        raise
    except (KoopmanError, ValueError, ArithmeticError, OSError) as e:
        raise StageError(name, str(e), [str(path) for path in paths]) from e
    logger.info("stage %s: done (%s)", name, ", ".join(str(path) for path in paths))


# ---------------------------------------------------------------------------
# Shared loaders


def load_plant(cfg: ExperimentConfig) -> PlantModel:
    return make_plant(cfg.plant.name, cfg.plant.params)


def load_split(cfg: ExperimentConfig) -> Tuple[Trajectory, Trajectory, int]:
    traj = read_trajectory_csv(cfg.paths.identification)
    return split_trajectory(traj, cfg.training.train_fraction)


def load_model(cfg: ExperimentConfig) -> Tuple[ObservableMap, TrainedPredictorHeads]:
    payload = read_versioned(cfg.paths.model, "observable_map", MODEL_FORMAT_VERSION)
    return ObservableMap.from_dict(payload["map"]), TrainedPredictorHeads.from_dict(payload["heads"])


def load_predictor(cfg: ExperimentConfig) -> MultiStepPredictor:
    return MultiStepPredictor.from_dict(read_versioned(cfg.paths.predictor, "predictor", PREDICTOR_FORMAT_VERSION))


def load_terminal(cfg: ExperimentConfig) -> Tuple[TerminalIngredients, Dict[str, Any]]:
    payload = read_versioned(cfg.paths.terminal, "terminal", TERMINAL_FORMAT_VERSION)
    return TerminalIngredients.from_dict(payload["ingredients"]), payload["certificate"]


def lifted_weights(cfg: ExperimentConfig, L: int) -> Tuple[np.ndarray, np.ndarray]:
    """Controller weights Q = q·I_L and R."""
    return cfg.controller.q * np.eye(L), cfg.controller.R_matrix


def controller_config(cfg: ExperimentConfig, ingredients: TerminalIngredients) -> KdpcConfig:
    Q, R = lifted_weights(cfg, ingredients.P.shape[0])
    return KdpcConfig.from_terminal(
        ingredients, Q, R, cfg.controller.lam, cfg.training.N, cfg.controller.variant,
        qp_tol=koopman_setting("QP_TOLERANCE"),
        qp_max_iter=koopman_setting("QP_MAX_ITER"),
        qp_alpha=koopman_setting("QP_OVER_RELAXATION"),
    )


def stage_cost(traj: Trajectory, Q_x: np.ndarray, R: np.ndarray) -> float:
    """Σ_k x(k)'Q_x x(k) + u(k)'R u(k) over the applied inputs."""
    if traj.x is None:
        raise ValueError("stage cost needs the state record")
    x = traj.x[: traj.num_steps]
    return float(np.einsum("ki,ij,kj->", x, Q_x, x) + np.einsum("ki,ij,kj->", traj.u, R, traj.u))


# ---------------------------------------------------------------------------
# Stages


def generate_data(cfg: ExperimentConfig) -> Trajectory:
    """Open-loop identification run under a minimum-crest-factor multisine."""
    paths = cfg.paths
    with stage("generate", [paths.config, paths.identification, paths.dataset]):
        plant = load_plant(cfg)
        signals = [multisine(replace(cfg.multisine, seed=cfg.seed + channel)) for channel in range(plant.m)]
        x0 = np.zeros(plant.n) if cfg.training.data_x0 is None else np.asarray(cfg.training.data_x0, dtype=float)
        traj = simulate(plant, x0, np.column_stack(signals))
        write_json(paths.config, cfg.canonical_dict())
        write_trajectory_csv(paths.identification, traj)

        train, _, split = split_trajectory(traj, cfg.training.train_fraction)
        hankels = build_hankels(train, cfg.training.T_ini, cfg.training.N)
        write_json(paths.dataset, dataset_manifest(hankels, split, traj.num_steps, cfg.seed))
        if cfg.dump_hankels:
            for name, matrix in hankels.tables().items():
                write_matrix_csv(paths.hankel_dir / f"{name}.csv", matrix)
    return traj


def train(cfg: ExperimentConfig) -> Tuple[ObservableMap, TrainedPredictorHeads]:
    paths = cfg.paths
    with stage("train", [paths.model, paths.training_loss]):
        train_traj, _, _ = load_split(cfg)
        hankels = build_hankels(train_traj, cfg.training.T_ini, cfg.training.N)
        obs_map, heads = train_multistep(
            hankels,
            cfg.training.hidden,
            lr=cfg.training.lr,
            epochs=cfg.training.epochs,
            seed=cfg.seed,
            pass_through_output=cfg.training.pass_through_output,
            patience=cfg.training.patience,
            log_every=koopman_setting("TRAIN_LOG_EVERY"),
        )
        write_versioned(paths.model, "observable_map", MODEL_FORMAT_VERSION, {
            "map": obs_map.to_dict(),
            "heads": heads.to_dict(),
        })
        write_rows_csv(
            paths.training_loss,
            ["iteration", "loss"],
            ({"iteration": i, "loss": loss} for i, loss in enumerate(heads.loss_history, start=1)),
        )
    return obs_map, heads


def fit(cfg: ExperimentConfig) -> Tuple[MultiStepPredictor, Dict[str, Any]]:
    """Least-squares multi-step predictor on the lifted training data, scored on the test split."""
    paths = cfg.paths
    with stage("fit", [paths.predictor, paths.scores]):
        train_traj, test_traj, _ = load_split(cfg)
        obs_map, heads = load_model(cfg)
        T_ini, N = cfg.training.T_ini, cfg.training.N
        lifted = lifted_sequence(lambda X: lift(obs_map, X), train_traj, T_ini)
        hankels = build_hankels(train_traj, T_ini, N, lifted)
        C = obs_map.C
        if C is None:
            C = fit_output_selector(hankels.Z_p, hankels.Y_p[-obs_map.p:])
        pred = fit_predictor(hankels.Z_p, hankels.Z_f, hankels.U_f, C, allow_ridge=cfg.controller.allow_ridge)
        if cfg.controller.prediction_matrices == "structured":
            pred = with_structured_matrices(pred)
        write_versioned(paths.predictor, "predictor", PREDICTOR_FORMAT_VERSION, pred.to_dict())

        test = build_hankels(test_traj, T_ini, N)
        Z0 = lift(obs_map, test.X_ini)
        scores = {
            "horizons": list(range(1, N + 1)),
            "stage1_r2": r_squared_table(test.Y_f, heads.predict(Z0, test.U_f), obs_map.p),
            "stage2_r2": r_squared_table(test.Y_f, predict_outputs(pred, Z0, test.U_f), obs_map.p),
            "consistency": consistency_report(pred),
            "train_residual": pred.residual,
            "ridge": pred.ridge,
        }
        write_json(paths.scores, scores)
        logger.info("test R² (stage 2) ranges %.4f..%.4f", min(scores["stage2_r2"]), max(scores["stage2_r2"]))
    return pred, scores


def output_bounds(cfg: ExperimentConfig, train_traj: Trajectory) -> Tuple[float, float]:
    if cfg.controller.y_bounds is not None:
        return cfg.controller.y_bounds
    return float(train_traj.y.min()), float(train_traj.y.max())


def terminal(cfg: ExperimentConfig) -> Tuple[TerminalIngredients, Dict[str, Any]]:
    paths = cfg.paths
    with stage("terminal", [paths.terminal]):
        train_traj, _, _ = load_split(cfg)
        obs_map, _ = load_model(cfg)
        pred = load_predictor(cfg)
        Q, R = lifted_weights(cfg, pred.L)
        u_lo, u_hi = cfg.controller.u_bounds
        X_z = estimate_xz(
            obs_map,
            (u_lo, u_hi),
            output_bounds(cfg, train_traj),
            cfg.training.T_ini,
            samples=cfg.controller.xz_samples,
            margin=cfg.controller.xz_margin,
            seed=cfg.seed,
        )
        ingredients = compute_terminal(
            pred.A_tilde,
            pred.B_tilde,
            Q,
            R,
            X_z,
            Box.uniform(u_lo, u_hi, pred.m),
            max_iter=koopman_setting("INVARIANT_SET_MAX_ITER"),
            max_rows=koopman_setting("INVARIANT_SET_MAX_ROWS"),
            polytope_max_dim=koopman_setting("POLYTOPE_MAX_DIM"),
            dare_tol=koopman_setting("DARE_TOLERANCE"),
            dare_max_iter=koopman_setting("DARE_MAX_ITER"),
        )
        certificate = check_terminal(ingredients, pred.A_tilde, pred.B_tilde, Q, R, seed=cfg.seed)
        write_versioned(paths.terminal, "terminal", TERMINAL_FORMAT_VERSION, {
            "ingredients": ingredients.to_dict(),
            "certificate": certificate,
        })
    return ingredients, certificate


def _saturated(u: np.ndarray, bounds: Tuple[float, float]) -> bool:
    return bool(np.any(np.abs(u - bounds[0]) <= SATURATION_TOL) or np.any(np.abs(u - bounds[1]) <= SATURATION_TOL))


def summarize_closed_loop(run: ClosedLoopRun, Q_x: np.ndarray, R: np.ndarray, u_bounds: Tuple[float, float]) -> Dict[str, Any]:
    """Counters and extremes of a controlled run."""
    results = run.results
    if not results:
        return empty_closed_loop_summary()
    errors = np.array([result.error_norm for result in results])
    saturated = [index for index, result in enumerate(results) if _saturated(result.u_applied, u_bounds)]
    released = saturated[-1] + 1 if saturated else 0
    normalized = normalized_decrease(results, run.residuals)
    return {
        "steps": len(results),
        "infeasible_steps": sum(not result.feasible for result in results),
        "fallback_steps": sum(result.fallback for result in results),
        "candidate_failures": sum(result.candidate_feasible is False for result in results),
        "saturated_steps": len(saturated),
        "decrease_max_residual": max(normalized, default=0.0),
        "final_abs_output": float(np.max(np.abs(run.trajectory.y[-1]))),
        "max_error_norm": float(errors.max()),
        "median_error_norm": float(np.median(errors)),
        "max_xi": max(result.xi_star for result in results),
        "max_xi_after_deactivation": max((result.xi_star for result in results[released:]), default=0.0),
        "max_terminal_margin": max(result.terminal_margin for result in results),
        "max_abs_input": float(np.max(np.abs(run.trajectory.u))),
        "cumulative_stage_cost": stage_cost(run.trajectory, Q_x, R),
    }


def _state_weight(cfg: ExperimentConfig, plant: PlantModel) -> np.ndarray:
    return cfg.nmpc.q * np.eye(plant.n)


def closed_loop(cfg: ExperimentConfig) -> Tuple[ClosedLoopRun, Dict[str, Any]]:
    paths = cfg.paths
    with stage("closed_loop", [paths.kdpc_trajectory, paths.kdpc_steps, paths.kdpc_summary]):
        plant = load_plant(cfg)
        obs_map, _ = load_model(cfg)
        pred = load_predictor(cfg)
        ingredients, _ = load_terminal(cfg)
        controller = controller_config(cfg, ingredients)
        run = run_closed_loop(plant, controller, pred, obs_map, cfg.simulation.x0, cfg.simulation.steps)
        summary = summarize_closed_loop(run, _state_weight(cfg, plant), controller.R, cfg.controller.u_bounds)

        write_trajectory_csv(paths.kdpc_trajectory, run.trajectory)
        rows = [_flatten_log_row(row) for row in run.log_rows()]
        write_rows_csv(paths.kdpc_steps, list(rows[0]) if rows else ["k"], rows)
        write_json(paths.kdpc_summary, summary)
    return run, summary


def _flatten_log_row(row: Dict[str, Any]) -> Dict[str, Any]:
    flat: Dict[str, Any] = {"k": row["k"]}
    flat.update({f"u{i + 1}": value for i, value in enumerate(row["u"])})
    flat.update({f"y{i + 1}": value for i, value in enumerate(row["y"])})
    flat.update({key: row[key] for key in ("xi", "V", "e_norm", "feasible", "qp_iterations")})
    return flat


def nmpc(cfg: ExperimentConfig) -> Tuple[NmpcRun, Dict[str, Any]]:
    """Exact-model NMPC over the same horizon of samples as the KDPC run, warm-up included."""
    paths = cfg.paths
    with stage("nmpc", [paths.nmpc_trajectory, paths.nmpc_costs, paths.nmpc_summary]):
        plant = load_plant(cfg)
        Q_x = _state_weight(cfg, plant)
        R = cfg.controller.R_matrix
        P_x = terminal_weight(plant, Q_x, R)
        horizon = cfg.nmpc.N or cfg.training.N
        steps = cfg.simulation.steps + cfg.training.T_ini
        run = nmpc_baseline(plant, Q_x, R, P_x, cfg.controller.u_bounds, horizon, cfg.simulation.x0, steps)
        summary = {
            "steps": steps,
            "warnings": run.warnings,
            "final_abs_output": float(np.max(np.abs(run.trajectory.y[-1]))),
            "max_abs_input": float(np.max(np.abs(run.trajectory.u))),
            "cumulative_stage_cost": run.total_stage_cost,
        }
        write_trajectory_csv(paths.nmpc_trajectory, run.trajectory)
        write_rows_csv(
            paths.nmpc_costs,
            ["k", "predicted_cost", "stage_cost"],
            ({"k": k, "predicted_cost": p, "stage_cost": s}
             for k, (p, s) in enumerate(zip(run.predicted_costs, run.stage_costs))),
        )
        write_json(paths.nmpc_summary, summary)
    return run, summary


# ---------------------------------------------------------------------------
# Report


def acceptance_checks(acceptance: AcceptanceSection, diagnostics: Dict[str, Any]) -> List[Dict[str, Any]]:
    """One record per configured threshold: name, value, threshold, passed."""
    kdpc_summary = diagnostics["kdpc"]
    terminal_cert = diagnostics.get("terminal") or {}
    checks: List[Dict[str, Any]] = []

    def check(name: str, value: Any, threshold: Any, passed: bool) -> None:
        checks.append({"check": name, "value": value, "threshold": threshold, "passed": bool(passed)})

    upper_bounds = [
        ("max_infeasible_steps", kdpc_summary["infeasible_steps"]),
        ("max_candidate_failures", kdpc_summary["candidate_failures"]),
        ("max_decrease_residual", kdpc_summary["decrease_max_residual"]),
        ("max_final_output", kdpc_summary["final_abs_output"]),
        ("max_error_norm", kdpc_summary["max_error_norm"]),
        ("max_median_error_norm", kdpc_summary["median_error_norm"]),
        ("max_xi_after_deactivation", kdpc_summary["max_xi_after_deactivation"]),
        ("max_terminal_violations", sum(
            terminal_cert.get(key, 0) for key in ("invariance_violations", "input_violations", "state_violations")
        )),
        ("max_cost_ratio", diagnostics.get("cost_ratio")),
    ]
    if acceptance.min_r2 is not None:
        value = diagnostics["prediction"]["min_stage2_r2"]
        check("min_r2", value, acceptance.min_r2, value is not None and value >= acceptance.min_r2)
    for name, value in upper_bounds:
        threshold = getattr(acceptance, name)
        if threshold is not None:
            check(name, value, threshold, value is not None and value <= threshold)
    if acceptance.require_saturation:
        check("require_saturation", kdpc_summary["saturated_steps"], 1, kdpc_summary["saturated_steps"] >= 1)
    return checks


def report(cfg: ExperimentConfig) -> RunReport:
    paths = cfg.paths
    with stage("report", [paths.report_dir]):
        scores = read_json(paths.scores)
        _, certificate = load_terminal(cfg)
        kdpc_summary = read_json(paths.kdpc_summary)
        trajectories = {"kdpc": read_trajectory_csv(paths.kdpc_trajectory)}
        nmpc_summary = None
        if cfg.nmpc.enabled:
            nmpc_summary = read_json(paths.nmpc_summary)
            trajectories["nmpc"] = read_trajectory_csv(paths.nmpc_trajectory)

        cost_ratio = None
        if nmpc_summary and nmpc_summary["cumulative_stage_cost"] > 0:
            cost_ratio = kdpc_summary["cumulative_stage_cost"] / nmpc_summary["cumulative_stage_cost"]
        diagnostics = {
            "name": cfg.name,
            "plant": cfg.plant.name,
            "seed": cfg.seed,
            "prediction": {
                "min_stage1_r2": min(scores["stage1_r2"]),
                "min_stage2_r2": min(scores["stage2_r2"]),
                "consistency": scores["consistency"],
            },
            "terminal": certificate,
            "kdpc": kdpc_summary,
            "nmpc": nmpc_summary,
            "cost_ratio": cost_ratio,
        }
        r2_rows = [
            {"horizon": j, "stage1_r2": s1, "stage2_r2": s2}
            for j, s1, s2 in zip(scores["horizons"], scores["stage1_r2"], scores["stage2_r2"])
        ]
        artifacts = ReportArtifacts(
            r2_rows=r2_rows,
            diagnostics=diagnostics,
            checks=acceptance_checks(cfg.acceptance, diagnostics),
            trajectories=trajectories,
        )
        run_report = emit_report(paths.report_dir, artifacts, root=paths.root)
    return run_report


STAGE_FUNCTIONS = {
    "generate": generate_data,
    "train": train,
    "fit": fit,
    "terminal": terminal,
    "closed_loop": closed_loop,
    "nmpc": nmpc,
    "report": report,
}


def run_pipeline(cfg: ExperimentConfig) -> RunReport:
    """All stages in order; NMPC only when enabled in the config."""
    logger.info("pipeline %s (plant %s, seed %d) writing to %s", cfg.name, cfg.plant.name, cfg.seed, cfg.out_dir)
    for name in STAGES[:-1]:
        if name == "nmpc" and not cfg.nmpc.enabled:
            continue
        STAGE_FUNCTIONS[name](cfg)
    return report(cfg)
