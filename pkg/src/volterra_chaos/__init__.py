"""Numerical finite-chaos algebra for stochastic Volterra kernels.

Kernels and processes are tabulated on uniform grids over the order
simplex; the package provides the graded kernel products, star- and
ast-resolvents with variation-of-constants solvers for linear forward
and Type-II backward stochastic Volterra integral equations, plus
Mittag-Leffler closed forms and Monte Carlo cross-checks.
"""

from .simplex_grid import (DomainError, Grid, build_grid, clear_caches,
                           integrate_simplex, rank_tuple, simplex_count,
                           tuple_rank)
from .det_kernels import (ChainKernel, ChainTerm, DetKernel, as_chain,
                          ast_contract, extend_kernel, kernel_add,
                          kernel_inner, kernel_sub, l2_distance, l2_norm,
                          lead_sq_profile, read_kernel_csv, restrict_kernel,
                          tabulate_fractional, tri_product, v_norm,
                          write_kernel_csv)
from .chaos_core import (AstKernel, ChaosProcess, StarKernel, ast_add,
                         identity_star, inner_product, martingale_shift,
                         mean_coeff, process_add, random_ast_kernel,
                         random_process, random_star_kernel,
                         read_process_csv, star_add, write_process_csv)
from .products import (ast, ast_jj, ast_jk, bast, bstar, star, star_kernel,
                       star_kj)
from .resolvents import (ExistenceUndeterminedError,
                         InternalConsistencyError, NonConvergenceError,
                         PreconditionError, ResolventReport, ast_resolvent,
                         aststar_resolvent, auto_partition, concat_star,
                         gaussian_star, neumann_star, star_resolvent,
                         write_report_csv)
from .solvers import (LinearSystem, bsvie_residual, build_fractional_bs,
                      build_noisy_memory, duality_gap, mean_trajectory,
                      second_moment, solve_bsvie, solve_svie, svie_residual,
                      z_component)
from .mittag_leffler import MLParams, e_alpha, f_profile, ml
from .monte_carlo import (MomentReport, PathBatch, compare_moments,
                          euler_svie, eval_iterated, fractional_step_matrix,
                          reconstruct, simulate_paths, write_moment_csv)

__version__ = "1.0.0"

__all__ = [name for name in dir() if not name.startswith("_")]
