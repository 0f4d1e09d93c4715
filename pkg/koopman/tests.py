from .test_cases.test_numerics import AdamTest, LeastSquaresTest, QpSolverTest, RiccatiTest, TapeTest
from .test_cases.test_plants import MultisineTest, PlantModelTest, SimulationTest
from .test_cases.test_datapipe import HankelTest, SplitTest, WindowTest
from .test_cases.test_observables import LiftTest, RSquaredTest, TrainingTest
from .test_cases.test_predictor import FitPredictorTest, StructuredMatricesTest
from .test_cases.test_terminal import InvariantSetTest, LiftedBoxTest, SetTest, TerminalIngredientsTest
from .test_cases.test_kdpc import ClosedLoopTest, CondensedQpTest, ControllerStepTest, InterpolationTest
from .test_cases.test_nmpc import NmpcTest
from .test_cases.test_experiments import (
    BenchmarkExcitationTest,
    BenchmarkPipelineTest,
    ConfigTest,
    LinearPipelineTest,
    ReportTest,
    StageErrorTest,
)
from .test_cases.test_runs_api import FormatterTest, RunAPITest, RunArtifactAPITest
from .test_cases.test_run_records import CommandTest, RunRecordTest
