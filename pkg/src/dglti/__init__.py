"""Locally implicit / locally filtered leapfrog time stepping for central-flux dG
discretisations of two-field Friedrichs systems."""
from .dgspace import DgSpace, FieldPair, WeightedIP, inner, project_l2
from .filters import FilterSpec, constants, psi, theta, phi
from .integrators import CflParams, Discretization, StepContext, lti_step, run
from .mesh import (FineRule, build_interval_mesh, build_tensor_mesh, classify,
                   stabilization_interval_mesh)
from .operators import assemble_pair, masked_operator, spectral_norm
from .problems import get_problem, te_cavity, wave1d_standing

__version__ = "0.1.0"
