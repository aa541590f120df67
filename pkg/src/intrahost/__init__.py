"""Within-host multistrain malaria dynamics: thresholds, equilibria, Lyapunov checks, simulation."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .model import (ConstantRecruitment, LogisticRecruitment, ModelSpec, StrainParams,
                    SystemState, pack, unpack, validate_spec, vector_field)
from .threshold import (ThresholdReport, alpha_star, build_A0, r0_closed_form,
                        r0_next_generation, t0, threshold_report)
from .equilibria import EndemicEquilibrium, dfe, endemic_equilibrium
from .lyapunov import (ClearanceLyapunov, EndemicLyapunov, MultistrainLyapunov, certificate,
                       certificate_residuals, verify_decrease)
from .simulate import IntegratorOptions, Trajectory, detect_extinction, integrate, steady_state_detect
from .outcome import (OutcomeKind, OutcomePrediction, check_amg_condition, check_scstab, predict,
                      run_experiment, sweep)

__all__ = [
    "ConstantRecruitment", "LogisticRecruitment", "ModelSpec", "StrainParams", "SystemState",
    "pack", "unpack", "validate_spec", "vector_field",
    "ThresholdReport", "alpha_star", "build_A0", "r0_closed_form", "r0_next_generation", "t0",
    "threshold_report",
    "EndemicEquilibrium", "dfe", "endemic_equilibrium",
    "ClearanceLyapunov", "EndemicLyapunov", "MultistrainLyapunov", "certificate",
    "certificate_residuals", "verify_decrease",
    "IntegratorOptions", "Trajectory", "detect_extinction", "integrate", "steady_state_detect",
    "OutcomeKind", "OutcomePrediction", "check_amg_condition", "check_scstab", "predict",
    "run_experiment", "sweep",
]
