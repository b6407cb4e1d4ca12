"""crowdflow: macroscopic crowd dynamics on 2D grids.

Finite-volume solvers for scalar conservation laws with local and
nonlocal (mollified) speed laws, geodesic routing around obstacles,
discrete agents coupled to the crowd density, sensitivity analysis of
the solution map, and reachable-set confinement studies for controlled
differential inclusions.
"""

__version__ = "0.1.0"

from .grid import Disc, Grid2D, Rect, RoomGeometry, indicator_datum, rasterize_geometry
from .kernels import Kernel, build_kernel, convolve, convolve_grad
from .eikonal import geodesic_directions, solve_eikonal
from .dynamics import AgentState, LeaderTrack, ModelSpec, SpeedLaw, speed
from .solver import (RunResult, Scenario, SchemeParams, SimState, advance,
                     cfl_dt, fv_step, run_scenario)
from .functionals import CostSpec, cost_JT, evacuation_time, gateaux_check, metrics
from .confinement import (AgentTrack, OccupancyField, PsiProfile,
                          confinement_condition, dispersal_condition,
                          dispersal_phi, drift, orbit_strategy, reach_evolve,
                          rearrange)
from .config import ConfigError, build_scenario, parse_config

__all__ = [name for name in dir() if not name.startswith("_")]
