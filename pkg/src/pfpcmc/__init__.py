"""Power-flow-embedded projection conic matrix completion for feeder state estimation.

Modules:

* :mod:`~pfpcmc.netmodel` -- case files, admittance, linear power flow, AC oracle.
* :mod:`~pfpcmc.measgen` -- measurement matrix, observation masks, noise.
* :mod:`~pfpcmc.conic` -- conic program IR and solver backends.
* :mod:`~pfpcmc.models` -- the estimator programs and the sparse PSD strategy.
* :mod:`~pfpcmc.bnb` -- branch-and-bound over eigenvector disjunctions.
* :mod:`~pfpcmc.bench` -- one-call estimation and the benchmark harness.
"""

from .bench import (
    BenchmarkConfig,
    BenchmarkRecord,
    EstimatorConfig,
    ScenarioConfig,
    estimate,
    run_benchmark,
    sweep_hyperparameters,
)
from .bnb import BnbLimits, bnb_solve
from .conic import ConicProgram, SolveSettings, solve
from .measgen import NoiseSpec, make_scenario
from .models import (
    PowerFlowToleranceSet,
    SlackData,
    apply_sparse_psd,
    build_model_mc,
    build_model_mcse,
    build_model_pfpc,
    build_model_projection,
    extract_state,
    mape,
    select_submatrices,
)
from .netmodel import build_admittance, build_linear_model, load_case, parse_case, solve_ac_power_flow

__version__ = "0.1.0"
