"""Command following for linear MIMO plants by input reconstruction."""

from .cir import CirState, CIRController, cir_step
from .estimator import KalmanFilter, KalmanState, NoiseSpec, kf_predict, kf_update
from .exceptions import (
    CirError,
    ConfigError,
    InfeasibleError,
    InvalidInputError,
    NonMinimumPhaseWarning,
    NumericalFailureError,
    ReconstructionInfeasibleError,
    UnsupportedShapeError,
)
from .lqg import LQGController, lqg_baseline, lqr_gain
from .matcore import (
    ctrb_rank,
    eigenvalues,
    invariant_zeros,
    numerical_rank,
    obsv_rank,
    pinv,
    zoh_discretize,
)
from .model import (
    FeasibilityReport,
    StateSpaceModel,
    check_feasibility,
    nonsquare_demo_model,
    rc_circuit_model,
    reference_step,
    spring_damper_model,
)
from .reconstructor import UMVInputReconstructor, UmvState, umv_gain, umv_step
from .sim import (
    ChannelComponent,
    MonteCarloSummary,
    ReferenceSignal,
    Scenario,
    SimulationTrace,
    monte_carlo,
    plant_step,
    run_closed_loop,
)
from .squaring import (
    BatchMatrices,
    InputTransform,
    LiftedController,
    batch_matrices,
    drop_outputs,
    lift_input,
    make_input_transform,
    project_reference,
)

__version__ = "0.1.0"
