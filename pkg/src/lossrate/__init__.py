"""Large-deviations rate functions and exact tail asymptotics for credit-portfolio losses."""

__version__ = "0.1.0"

from .distributions import (  # noqa: E402
    CompositeCgf,
    DefaultTimeModel,
    LatticeInfo,
    LossAmountModel,
    cgf_composite,
    cgf_u,
    cgf_u_derivs,
    check_light_tail,
)
from .legendre import legendre_transform, perspective, tilt_solve  # noqa: E402
from .path_rate import MultiClassSpec, mixture_decay, multiclass_rate, path_rate  # noqa: E402
from .asymptotics import (  # noqa: E402
    Barrier,
    Growth,
    IncrementBarrier,
    bahadur_rao_constant,
    barrier_asymptotics,
    hypothesis_report,
    increment_asymptotics,
)
from .oracle import LatticePortfolio, exact_barrier, exact_increment, exact_marginal  # noqa: E402
from .montecarlo import McEstimate, mc_barrier, mc_increment, simulate_paths  # noqa: E402

__all__ = [
    "CompositeCgf", "DefaultTimeModel", "LatticeInfo", "LossAmountModel",
    "cgf_composite", "cgf_u", "cgf_u_derivs", "check_light_tail",
    "legendre_transform", "perspective", "tilt_solve",
    "MultiClassSpec", "mixture_decay", "multiclass_rate", "path_rate",
    "Barrier", "Growth", "IncrementBarrier", "bahadur_rao_constant", "barrier_asymptotics",
    "hypothesis_report", "increment_asymptotics",
    "LatticePortfolio", "exact_barrier", "exact_increment", "exact_marginal",
    "McEstimate", "mc_barrier", "mc_increment", "simulate_paths",
]
