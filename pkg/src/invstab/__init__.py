"""Stability of invariant measures of diffusions: simulation, transport costs,
moment-map Stein kernels, Lusin-Lipschitz witnesses and explicit bounds."""

from .measures import (
    EmpiricalMeasure,
    Estimate,
    InvalidMeasureError,
    MeasureSpec,
    make_gaussian,
    make_gibbs_1d,
    make_point_mass,
)
from .sde_sim import Diffusion, DiffusionPair, ou_process, simulate, simulate_coupled
from .transport import TransportCost, solve_ot, w2_empirical
from .moment_map import solve_moment_map_1d, tensorize
from .stein import kernel_from_moment_map, kernel_closed_form_1d, stein_sde
from .lusin import estimate_lusin_witness
from .stability_bounds import BoundReport, Scenario, verify_scenario

__version__ = "0.1.0"
