"""Sample-size planning and blinded recalculation for two-arm ANCOVA trials
with multiple random covariates."""

__version__ = "0.1.0"

from .ancova import AncovaFit, TrialDataset, fit_ancova, test_superiority
from .design import (
    CompoundSymmetrySpec,
    DesignSpec,
    FeasibilityReport,
    JointCovariance,
    check_feasibility,
    cs_eigenvalues,
    r_squared_from_covariance,
    r_squared_iterative,
)
from .distributions import RngStream, mvn_sample, std_normal_quantile, t_cdf, t_quantile
from .errors import (
    AncovaSSRError,
    BlindingError,
    ConfigurationError,
    DegeneracyError,
    DomainError,
    FeasibilityError,
    SearchError,
    UndersizedError,
)
from .recalc import (
    InterimData,
    RecalcConfig,
    RecalcResult,
    blinded_residual_variance,
    final_size,
    initial_size,
    recalculated_size,
    run_recalc,
)
from .simulation import (
    ScenarioResult,
    ScenarioSpec,
    exact_size_search,
    mc_power_oracle,
    simulate,
    simulate_fixed,
    simulate_recalc,
)
from .sizing import SizingResult, n_basic, n_df, n_gs, n_gs_df, round_to_allocation

test_superiority.__test__ = False
