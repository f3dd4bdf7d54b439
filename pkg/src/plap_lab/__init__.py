"""Numerical laboratory for the p-Laplacian torsion problem on planar domains.

Solves -Delta_p u = 1 with zero boundary data on flat and conformally flat
2-D domains by regularized energy minimization, and verifies the integral
identities, pointwise inequalities and boundary relations satisfied by the
torsion function against exact radial solutions and closed-form boundary
quadratures.
"""

from .errors import (AssemblyError, ConfigError, MeshGenerationError,
                     PlapLabError, PreconditionError, SolverError,
                     ValidationError)
from .geometry import (Annulus, BoundaryGeometry, Disk, Ellipse, Measures,
                       PolarStar, TriMesh, boundary_geometry, build_mesh,
                       domain_measures, export_mesh)
from .metric import (ConformalMetric, gaussian_curvature,
                     geodesic_boundary_curvature, ricci_quadratic)
from .fields import (AnalyticField, CriticalMask, DerivativeBundle,
                     PolynomialField, RadialField, ScalarField,
                     analytic_bundle, field_catalogue, flux_vector_field,
                     linearized_apply, linearized_on_p, p_bochner_residual,
                     p_function, p_laplacian, recover_derivatives)
from .oracles import (RadialProfile, ellipse_boundary_integrals,
                      matrix_inequality_gap, matrix_inequality_sweep,
                      p_ball_constant, radial_exact, radial_fd_solve)
from .solver import (SolveConfig, Solution, assemble_energy_residual,
                     convergence_study, solve)
from .identities import (BoundaryTrace, IdentityReport, Tolerances,
                         boundary_trace, build_report, equivalence_suite,
                         flux_balance, fundamental_identity, hk_report,
                         serrin_deficit, soap_bubble_report,
                         subharmonicity_scan)

__version__ = "0.1.0"
