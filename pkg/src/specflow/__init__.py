"""Spectral flow of weighted Dirac-type eigenvalue problems on model geometries."""

from .flow import (FlowRecord, RieszProjector, compute_flow, hf_cluster_slopes, hf_derivative,
                   hf_fd_check, lipschitz_constant, projector_derivative, riesz_projector,
                   solve_weighted_spectrum, track_branches, verify_arsinh_lipschitz)
from .models import (ModelGeometry, WeightFamily, assemble_conjugated, build_dirac,
                     exact_circle_spectrum, exact_torus_spectrum, kernel_dim, named_family)
from .specmon import SpectralWindow, align_enumeration, arsinh_dist, quotient_dist, shift

__version__ = "0.1.0"
