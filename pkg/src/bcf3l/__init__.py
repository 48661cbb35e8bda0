"""Factor-based exposure mapping and three-level Bayesian causal forests."""

__version__ = "0.1.0"

from .core_data import (  # noqa: F401
    DataError, Dataset, RngSpec, StandardizedMatrix, load_matrix_csv,
    make_rng, standardize_columns, write_matrix_csv,
)
from .exposure import (  # noqa: F401
    ExposureMatrix, assign_levels, build_exposure_matrix, tertile_cutpoints,
)
from .factor_model import (  # noqa: F401
    FactorModelConfig, FactorPosterior, estimate_scores, explained_variance,
    fit_factor_model, fit_factor_pipeline, select_factors, varimax_rotate,
)
from .propensity import (  # noqa: F401
    PropensityModel, fit_generalized_propensity, predict_propensity,
)
from .bcf import (  # noqa: F401
    Bcf3lConfig, Bcf3lPosterior, EffectSummary, effects_from_posterior,
    fit_bcf3l, predict_counterfactual,
)
from .baselines import (  # noqa: F401
    Bart3lConfig, HorseshoeConfig, fit_bart3l, fit_blr3l, fit_blr_horseshoe,
)
from .simgen import (  # noqa: F401
    SimDataset, assign_treatment_s12, gen_covariates, gen_scenario1,
    gen_scenario2, gen_scenario3,
)
from .metrics import ResultsTable, bias, coverage, replicate_study, rmse  # noqa: F401
