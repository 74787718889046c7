"""Spectral measures of product states in local quantum chains.

For a nearest-neighbour Hamiltonian ``H`` and a product state ``|a>`` the
package computes the distribution of energy eigenvalues weighted by
``|<a|phi>|^2``, standardizes it, and measures how close it is to the
standard normal law.  It also evaluates the blocking identities and bounds
that explain the Gaussian limit, and the short-time dynamics of the state.
"""
from .clt import (
    BlockDecomposition,
    GaussianReport,
    block_decompose,
    char_fn_factorization_check,
    check_factorization,
    convergence_sweep,
    default_k,
    gaussian_comparison,
    lyapunov_sum,
    truncation_error_bound,
    truncation_residuals,
)
from .config import DEFAULT_TOLERANCES, DENSE_THRESHOLD, Tolerances
from .dynamics import fidelity_trace, ground_energy, transition_bound, transition_trace
from .model import (
    Boundary,
    HamiltonianOperator,
    ModelSpec,
    assemble,
    build_harmonic,
    build_ising,
    check_locality,
    local_norm_bound,
)
from .spectrum import (
    SpectralMeasure,
    cdf,
    char_fn,
    char_fn_values,
    spectral_density_kpm,
    spectral_measure_exact,
    standardize,
)
from .state import (
    DegenerateVarianceError,
    ProductState,
    StateStatistics,
    check_variance_condition,
    energy_stats,
    named_state,
    product_state,
    random_product_state,
)

__version__ = "0.1.0"
