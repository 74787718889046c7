"""Central numerical tolerances and size limits.

Every threshold used by the library and by the command line lives here so that
tests, CLI flags and library defaults agree.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, replace

# Largest Hilbert-space dimension for which a dense matrix is materialized.
DENSE_THRESHOLD = 2**12


@dataclass(frozen=True)
class Tolerances:
    hermitian: float = 1e-12
    normalization: float = 1e-12
    apply_consistency: float = 1e-12
    commutator: float = 1e-12
    degenerate_variance: float = 1e-10
    moment_methods: float = 1e-8
    weight_sum: float = 1e-10
    standardized_exact: float = 1e-8
    standardized_kpm: float = 1e-3
    factorization: float = 1e-10
    charfn_factorization: float = 1e-8
    krylov_residual: float = 1e-10
    krylov_max_dim: int = 128
    orthogonality: float = 1e-10
    kpm_min_moments: int = 16
    kpm_bound_margin: float = 0.01
    power_iter_max: int = 5000
    power_iter_tol: float = 1e-11

    def updated(self, **overrides) -> "Tolerances":
        return replace(self, **overrides)


DEFAULT_TOLERANCES = Tolerances()


def thread_cap() -> int:
    """Worker count for parallel sweeps, read from ``QCLT_THREADS`` (default 1)."""
    raw = os.environ.get("QCLT_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        return 1
    return max(1, value)
