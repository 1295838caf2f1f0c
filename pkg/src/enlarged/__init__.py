"""Robust estimation with enlarged models ``c * p_theta`` under Hölder-type scores.

Fitting the total mass ``c`` alongside the shape ``theta`` lets the score
absorb outliers: ``1 - c_hat`` estimates the contamination ratio and the
lowest-density points are flagged as outliers.
"""

from .baselines import BaselineKind, fit_baseline, rmse
from .density import (
    BOUNDARY,
    INTERIOR,
    EnlargedFit,
    FitOptions,
    detect_outliers,
    fit_enlarged,
    fit_holder_mvn,
    fit_power_mvn,
    fit_sphere_mvn,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateScoreError,
    DesignSingularError,
    EnlargedError,
    InvalidTrimError,
    ModelSingularError,
    ScaleDegenerateError,
)
from .harness import (
    ExperimentSpec,
    ResultTable,
    contaminate_csv,
    gen_density_synth,
    gen_reg_synth,
    gen_reg_toy,
    load_csv,
    parse_config,
    run_experiment,
)
from .regression import (
    RegData,
    RegParams,
    c_reg,
    cond_power_score,
    cond_sphere_score,
    detect_outliers_reg,
    fit_enlarged_reg,
    fit_power_reg,
    fit_sphere_reg,
)
from .scores import (
    GammaScoreConfig,
    MvnParams,
    SampleSet,
    holder_score,
    mvn_density,
    mvn_power_integral,
    power_score,
    profile_c,
    sphere_score,
)

__version__ = "0.1.0"
