"""Convex-hull and cone relaxations of the DistFlow branch model for storage scheduling."""

from .conic import ConicProblem, ConicSolution, ProblemBuilder, SolverSettings, kkt_residuals, solve
from .distflow import (EXACTNESS_THRESHOLD, NetworkState, SweepError, VoltageCollapseError,
                       eval_residuals, is_exact, me_branch, me_des, recover_feasible, sweep_solve)
from .feeder import (Branch, Bus, DesUnit, Feeder, FeederError, InstanceSpec, Profiles, check_feeder,
                     gen_instance, load_feeder, save_feeder, validate_radial)
from .hull import (BranchHull, DesHull, decompose, make_branch_hull, make_des_hull, membership,
                   sample_omega0, support_gap)
from .problem import ObjectiveKind, RelaxKind, build_problem, solve_desos
from .report import ExactnessReport, compare, emit

__version__ = "0.1.0"
