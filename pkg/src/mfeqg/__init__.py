"""Mean-field equilibrium asset pricing with consumption habits in the
exponential-quadratic-Gaussian setting."""

__version__ = "0.1.0"

from mfeqg.model import (  # noqa: E402
    GridFunction, ModelError, ModelParams, SmallnessReport, ZetaConstants, discount_rate,
    g_offset, g_tilde, smallness_check, zeta, zeta_dot, zeta_ode_residual,
)
from mfeqg.factors import (  # noqa: E402
    AgentState, FactorParams, LiabilityCoeffs, PathBundle, integrate_habit,
    integrate_habit_and_consumption, integrate_wealth, liability, mu1, simulate_factors,
    simulate_independent, uniform_grid,
)
from mfeqg.riccati import (  # noqa: E402
    RiccatiBlowUp, RiccatiSolution, RiccatiState, check_global, rhs, solve_backward,
    split_sigma0,
)
from mfeqg.equilibrium import (  # noqa: E402
    BsdeSlice, MarketSpec, bsde_slice, optimal_p, p_to_pi, risk_premium, simulate_market,
)
from mfeqg.verify import (  # noqa: E402
    ClearingReport, Perturbation, ResidualReport, UtilityExperiment, bsde_residual_study,
    clearing_sweep, driver_f, driver_f_completed_square, driver_f_expansion,
    utility_estimate, variance_bound_check,
)
