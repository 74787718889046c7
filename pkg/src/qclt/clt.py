"""Executable pieces of the blocking argument behind the Gaussian limit.

The centered local terms ``X_mu = calH_mu - <a|calH_mu|a>`` are grouped into
large blocks ``xi_j`` of ``k - 1`` consecutive terms separated by single
terms (the small blocks).  Blocks that are not neighbours act on disjoint
sites, so in a product state their moments and characteristic functions
factorize.  This module evaluates those identities, the truncation and
Lyapunov bounds, and compares standardized measures with ``N(0, 1)``.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .config import DEFAULT_TOLERANCES, DENSE_THRESHOLD, thread_cap
from .krylov import expm_expectation
from .model import Boundary, ModelSpec, apply_local_ops, assemble
from .spectrum import (
    SpectralMeasure,
    char_fn_values,
    spectral_density_kpm,
    spectral_measure_exact,
    standardize,
)
from .state import ProductState, StateStatistics, energy_stats

__all__ = [
    "BlockDecomposition",
    "GaussianReport",
    "FactorizationReport",
    "LyapunovResult",
    "default_k",
    "block_decompose",
    "truncation_error_bound",
    "truncation_residuals",
    "check_factorization",
    "char_fn_factorization_check",
    "lyapunov_sum",
    "lyapunov_closed_form_bound",
    "gaussian_cdf",
    "gaussian_comparison",
    "convergence_sweep",
    "SWEEP_COLUMNS",
]

# Full-space exponentials are diagonalized up to this dimension, Lanczos above.
_FULL_EIGH_LIMIT = 2**10


def default_k(n: int) -> int:
    """Integer part of ``n**(3/4)``, clamped to ``[2, n]``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    k = int(n**0.75)
    while (k + 1) ** 4 <= n**3:
        k += 1
    while k**4 > n**3:
        k -= 1
    return min(max(k, 2), n)


class _TermAlgebra:
    """Centered local terms applied on arbitrary site subsets."""

    def __init__(self, spec: ModelSpec, state: ProductState, stats: StateStatistics):
        self.spec = spec
        self.state = state
        self.means = np.asarray(stats.term_means)

    def support(self, terms: Sequence[int]) -> tuple[int, ...]:
        sites = set()
        for t in terms:
            sites.update(self.spec.term_support(t))
        return tuple(sorted(sites))

    def apply(self, terms: Sequence[int], vec: np.ndarray, support: Sequence[int]) -> np.ndarray:
        """``sum_{t in terms} X_t`` applied to ``vec`` living on ``support``."""
        pos = {s: i for i, s in enumerate(support)}
        dims = tuple(self.spec.local_dims[s] for s in support)
        ops = []
        for t in terms:
            for sites, mat in self.spec.term_ops(t):
                ops.append((tuple(pos[s] for s in sites), mat))
        return apply_local_ops(ops, vec, dims) - self.means[list(terms)].sum() * vec

    def local_vector(self, support: Sequence[int]) -> np.ndarray:
        return self.state.local(support)

    def ordered_expectation(self, terms: Sequence[int]) -> complex:
        """``<a| X_{t_1} X_{t_2} ... X_{t_p} |a>`` on the union of supports."""
        support = self.support(terms)
        vec = self.local_vector(support)
        bra = vec
        for t in reversed(terms):
            vec = self.apply([t], vec, support)
        return complex(np.vdot(bra, vec))


@dataclass(frozen=True, eq=False)
class BlockDecomposition:
    """Large/small block split of the centered terms.

    ``big_blocks[j]`` lists the (0-based) term indices of ``xi_{j+1}``; the
    final entry is the remainder block of length ``q`` and may be empty.
    ``small_blocks`` lists the single separating terms.
    """

    n: int
    k: int
    q: int
    big_blocks: tuple
    small_blocks: tuple
    spec: ModelSpec
    state: ProductState
    stats: StateStatistics
    meta: dict = field(default_factory=dict)

    @cached_property
    def _cache(self) -> dict:
        return {}

    @cached_property
    def _algebra(self) -> _TermAlgebra:
        return _TermAlgebra(self.spec, self.state, self.stats)

    @property
    def sigma(self) -> float:
        return self.stats.require_variance()

    @property
    def nonempty_blocks(self) -> list[int]:
        return [j for j, b in enumerate(self.big_blocks) if b]

    def block_support(self, j: int) -> tuple[int, ...]:
        return self._algebra.support(self.big_blocks[j])

    def block_moment(self, j: int, p: int) -> float:
        """``<a|xi_j^p|a>`` from the block's own sites (cost exponential in k, not n)."""
        terms = self.big_blocks[j]
        if not terms or p == 0:
            return 1.0 if p == 0 else 0.0
        alg = self._algebra
        support = alg.support(terms)
        vec = alg.local_vector(support)
        powers = [vec]
        for _ in range((p + 1) // 2):
            powers.append(alg.apply(terms, powers[-1], support))
        return float(np.vdot(powers[p // 2], powers[(p + 1) // 2]).real)

    def block_variance_clusters(self, j: int) -> float:
        """``<a|xi_j^2|a>`` from neighbouring pairs only; linear in the block length."""
        terms = list(self.big_blocks[j])
        alg = self._algebra
        total = 0.0
        for i, t in enumerate(terms):
            total += alg.ordered_expectation([t, t]).real
            if i + 1 < len(terms):
                total += 2 * alg.ordered_expectation([t, terms[i + 1]]).real
        return float(total)

    def block_fourth_moment_clusters(self, j: int) -> float:
        """``<a|xi_j^4|a>`` summing only the ordered index quadruples that survive.

        A quadruple contributes only if its indices form one chain of
        neighbouring terms, or two separated neighbouring pairs.  The cost is
        quadratic in the block length.
        """
        terms = list(self.big_blocks[j])
        length = len(terms)
        if length == 0:
            return 0.0
        alg = self._algebra
        cache: dict[tuple, complex] = {}

        def ev(idx):
            if idx not in cache:
                cache[idx] = alg.ordered_expectation([terms[i] for i in idx])
            return cache[idx]

        single = 0j
        for width in range(1, 5):
            for start in range(length - width + 1):
                window = range(start, start + width)
                for idx in itertools.product(window, repeat=4):
                    if len(set(idx)) == width:
                        single += ev(idx)
        pairs = [(x, y) for x in range(length) for y in range(length) if abs(x - y) <= 1]
        pvals = np.array([ev(p) for p in pairs])
        lo = np.array([min(p) for p in pairs])
        hi = np.array([max(p) for p in pairs])
        separated = (lo[None, :] - hi[:, None] >= 2) | (lo[:, None] - hi[None, :] >= 2)
        double = 3 * np.sum(np.outer(pvals, pvals)[separated])
        total = single + double
        if abs(total.imag) > 1e-9 * max(1.0, abs(total.real)):
            raise RuntimeError("fourth moment has a non-negligible imaginary part")
        return float(total.real)

    def block_charfn(self, j: int, r: float) -> complex:
        """``<a|exp(-i r xi_j / sigma)|a>`` on the block's sites."""
        terms = self.big_blocks[j]
        if not terms:
            return 1.0 + 0j
        alg = self._algebra
        support = alg.support(terms)
        vec = alg.local_vector(support)
        dim = vec.shape[0]
        if dim <= DENSE_THRESHOLD:
            if j not in self._cache:
                mat = alg.apply(terms, np.eye(dim, dtype=complex), support)
                w, u = np.linalg.eigh(mat)
                self._cache[j] = (w, np.abs(u.conj().T @ vec) ** 2)
            w, weights = self._cache[j]
            return complex(np.sum(weights * np.exp(-1j * r * w / self.sigma)))
        return expm_expectation(lambda v: alg.apply(terms, v, support), vec, r / self.sigma)

    def full_apply(self, terms: Sequence[int], vec: np.ndarray) -> np.ndarray:
        """Full-space ``sum_{t in terms} X_t`` applied to ``vec``."""
        return self._algebra.apply(list(terms), vec, tuple(range(self.n)))

    def z_prime_terms(self) -> list[int]:
        return [t for b in self.big_blocks for t in b]

    def z_prime_apply(self, vec: np.ndarray) -> np.ndarray:
        """``Z'_n`` on the full space."""
        return self.full_apply(self.z_prime_terms(), vec) / self.sigma

    def z_second_apply(self, vec: np.ndarray) -> np.ndarray:
        """``Z''_n`` on the full space."""
        return self.full_apply(self.small_blocks, vec) / self.sigma


def block_decompose(spec: ModelSpec, state: ProductState, k: int, stats: StateStatistics | None = None) -> BlockDecomposition:
    """Split the ``n`` centered terms into alternating blocks of ``k - 1`` and 1.

    With 1-based term labels, block ``j`` holds terms ``(j-1)k+1 .. jk-1``,
    the small blocks are the terms ``jk`` and the remainder block holds the
    last ``q = n - k [n/k]`` terms.  On a periodic chain the last term couples
    back to site 0, so when ``q > 0`` it is moved to the small blocks to keep
    every pair of large blocks on disjoint sites.
    """
    n = spec.n
    if not 2 <= k <= n:
        raise ValueError(f"k must satisfy 2 <= k <= n, got k={k}, n={n}")
    if stats is None:
        stats = energy_stats(spec, state)
    full = n // k
    q = n - k * full
    big = [tuple(range((j - 1) * k, j * k - 1)) for j in range(1, full + 1)]
    small = [j * k - 1 for j in range(1, full + 1)]
    tail = tuple(range(full * k, n))
    wrapped = False
    if spec.boundary is Boundary.PERIODIC and q > 0:
        tail = tail[:-1]
        small.append(n - 1)
        wrapped = True
    big.append(tail)
    return BlockDecomposition(
        n=n,
        k=k,
        q=q,
        big_blocks=tuple(big),
        small_blocks=tuple(small),
        spec=spec,
        state=state,
        stats=stats,
        meta={"periodic_tail_moved": wrapped},
    )


def truncation_error_bound(n: int, k: int, C: float, Cp: float, r: float) -> float:
    """``|r| sqrt((1/n) [n/k]^2 (2 C')^2 / C)``, the cost of dropping the small blocks."""
    if n <= 0 or k <= 0 or C <= 0 or Cp < 0:
        raise ValueError("n, k and C must be positive, C' non-negative")
    return abs(r) * np.sqrt((n // k) ** 2 * (2 * Cp) ** 2 / (n * C))


def _full_space_charfn(apply, psi, rs, dim):
    """``<psi|exp(-i r A)|psi>`` for Hermitian ``A`` given by ``apply``."""
    rs = np.asarray(rs, dtype=float)
    if dim <= _FULL_EIGH_LIMIT:
        mat = apply(np.eye(dim, dtype=complex))
        mat = 0.5 * (mat + mat.conj().T)
        w, u = np.linalg.eigh(mat)
        weights = np.abs(u.conj().T @ psi) ** 2
        return np.exp(-1j * np.outer(rs, w)) @ weights
    return np.array([expm_expectation(apply, psi, r) for r in rs])


def truncation_residuals(blocks: BlockDecomposition, rs, H=None) -> np.ndarray:
    """Measured ``|<a|exp(-i r Z_n)|a> - <a|exp(-i r Z'_n)|a>|`` on the full space."""
    spec = blocks.spec
    if spec.total_dim > DENSE_THRESHOLD:
        raise ValueError("full-space truncation check needs total_dim <= dense threshold")
    H = H if H is not None else assemble(spec)
    full = char_fn_values(H, blocks.state, blocks.stats, rs, method="exact")
    prime = _full_space_charfn(blocks.z_prime_apply, blocks.state.vector, rs, spec.total_dim)
    return np.abs(full - prime)


@dataclass(frozen=True)
class FactorizationReport:
    max_residual: float
    max_commutator: float
    n_pairs: int

    def passed(self, tol: float = DEFAULT_TOLERANCES.factorization) -> bool:
        return self.max_residual < tol and self.max_commutator < tol


def check_factorization(blocks: BlockDecomposition, powers: tuple[int, int] = (2, 2)) -> FactorizationReport:
    """Compare full-space ``<a|xi_i^p xi_j^q|a>`` with the product of block-local moments."""
    p, q = powers
    if not (0 <= p <= 4 and 0 <= q <= 4):
        raise ValueError("powers must lie in 0..4")
    spec = blocks.spec
    if spec.total_dim > DENSE_THRESHOLD:
        raise ValueError("factorization check needs total_dim <= dense threshold")
    psi = blocks.state.vector
    idx = blocks.nonempty_blocks
    worst_res = worst_comm = 0.0
    n_pairs = 0
    for i, j in itertools.permutations(idx, 2):
        bi, bj = blocks.big_blocks[i], blocks.big_blocks[j]
        v = psi
        for _ in range(q):
            v = blocks.full_apply(bj, v)
        for _ in range(p):
            v = blocks.full_apply(bi, v)
        lhs = np.vdot(psi, v)
        rhs = blocks.block_moment(i, p) * blocks.block_moment(j, q)
        worst_res = max(worst_res, abs(lhs - rhs))
        comm = blocks.full_apply(bi, blocks.full_apply(bj, psi)) - blocks.full_apply(bj, blocks.full_apply(bi, psi))
        worst_comm = max(worst_comm, float(np.linalg.norm(comm)))
        n_pairs += 1
    return FactorizationReport(float(worst_res), worst_comm, n_pairs)


def char_fn_factorization_check(blocks: BlockDecomposition, rs) -> float:
    """Max over ``rs`` of ``|<a|exp(-i r Z'_n)|a> - prod_j <a|exp(-i r xi_j/sigma)|a>|``."""
    spec = blocks.spec
    if spec.total_dim > DENSE_THRESHOLD:
        raise ValueError("factorization check needs total_dim <= dense threshold")
    rs = np.atleast_1d(np.asarray(rs, dtype=float))
    lhs = _full_space_charfn(blocks.z_prime_apply, blocks.state.vector, rs, spec.total_dim)
    rhs = np.array([np.prod([blocks.block_charfn(j, r) for j in blocks.nonempty_blocks]) for r in rs])
    return float(np.max(np.abs(lhs - rhs)))


def lyapunov_closed_form_bound(n: int, k: int, C: float, Cp: float) -> float:
    """``([n/k]+1) ((k-1)^2 + 3*5*7*3! (k-1)) (2C')^4 / (n^2 C^2)``."""
    return (n // k + 1) * ((k - 1) ** 2 + 3 * 5 * 7 * 6 * (k - 1)) * (2 * Cp) ** 4 / (n**2 * C**2)


@dataclass(frozen=True)
class LyapunovResult:
    value: float
    bound: float
    fourth_moments: tuple
    C: float
    Cp: float

    @property
    def within_bound(self) -> bool:
        return self.value <= self.bound


def lyapunov_sum(blocks: BlockDecomposition, m: int = 2, C: float | None = None, Cp: float | None = None) -> LyapunovResult:
    """``sigma^-4 sum_j <a|xi_j^4|a>`` and its closed-form upper bound.

    ``C`` defaults to ``sigma^2 / n`` and ``C'`` to the largest local norm.
    """
    if m != 2:
        raise ValueError("only the m = 2 Lyapunov sum is implemented")
    stats = blocks.stats
    sigma2 = blocks.sigma**2
    C = stats.c_estimate if C is None else C
    Cp = stats.cprime if Cp is None else Cp
    fourth = tuple(blocks.block_fourth_moment_clusters(j) for j in range(len(blocks.big_blocks)))
    value = sum(fourth) / sigma2**2
    return LyapunovResult(value, lyapunov_closed_form_bound(blocks.n, blocks.k, C, Cp), fourth, C, Cp)


def gaussian_cdf(z):
    return 0.5 * (1 + erf(np.asarray(z, dtype=float) / np.sqrt(2)))


@dataclass(frozen=True)
class GaussianReport:
    n: int | None
    ks_distance: float
    moments: tuple
    moment_devs: tuple
    charfn_dev: float
    l1_density_dev: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


DEFAULT_R_GRID = np.round(np.arange(-40, 41) * 0.1, 10)


def _measure_charfn(measure: SpectralMeasure, rs) -> np.ndarray:
    rs = np.asarray(rs, dtype=float)
    phase = np.exp(-1j * np.outer(rs, measure.values))
    if measure.kind == "exact":
        return phase @ measure.weights
    return np.trapezoid(phase * measure.weights, measure.values, axis=1)


def gaussian_comparison(
    measure: SpectralMeasure,
    charfn: Sequence | None = None,
    r_grid=None,
    n: int | None = None,
    tol: float | None = None,
) -> GaussianReport:
    """Distance of a standardized measure from the standard normal law.

    ``charfn`` may supply ``(r, value)`` samples; otherwise the characteristic
    function is computed from the measure on ``r_grid`` (default ``[-4, 4]``
    in steps of 0.1).
    """
    if tol is None:
        tol = DEFAULT_TOLERANCES.standardized_exact if measure.kind == "exact" else DEFAULT_TOLERANCES.standardized_kpm
    m = [measure.moment(p) for p in range(5)]
    mean, second = m[1] / m[0], m[2] / m[0]
    if abs(mean) > tol or abs(second - 1) > tol:
        raise ValueError(f"measure is not standardized (mean {mean:.3g}, second moment {second:.3g})")
    z = measure.values
    if measure.kind == "exact":
        order = np.argsort(z, kind="stable")
        zs, ws = z[order], measure.weights[order]
        right = np.cumsum(ws)
        left = right - ws
        phi = gaussian_cdf(zs)
        ks = float(max(np.max(np.abs(right - phi)), np.max(np.abs(left - phi))))
        l1 = None
    else:
        from .spectrum import cdf

        ks = float(np.max(np.abs(cdf(measure, z) - gaussian_cdf(z))))
        gauss = np.exp(-(z**2) / 2) / np.sqrt(2 * np.pi)
        l1 = float(np.trapezoid(np.abs(measure.weights - gauss), z))
    if charfn is None:
        rs = DEFAULT_R_GRID if r_grid is None else np.asarray(r_grid, dtype=float)
        values = _measure_charfn(measure, rs)
    else:
        rs = np.array([s[0] for s in charfn], dtype=float)
        values = np.array([s[1] for s in charfn], dtype=complex)
    cf_dev = float(np.max(np.abs(values - np.exp(-(rs**2) / 2))))
    moments = (m[1], m[2], m[3], m[4])
    devs = (abs(m[1]), abs(m[2] - 1), abs(m[3]), abs(m[4] - 3))
    return GaussianReport(n, min(max(ks, 0.0), 1.0), moments, devs, cf_dev, l1)


SWEEP_COLUMNS = (
    "n", "k", "q", "sigma2", "cprime", "ks", "m1", "m2", "m3", "m4",
    "charfn_dev", "lyapunov_sum", "lyapunov_bound", "trunc_bound_r1",
)


def _sweep_row(n, model_family, state_family, k_override, kpm_moments, dense_threshold):
    spec = model_family(n)
    state = state_family(spec)
    H = assemble(spec, dense_threshold=dense_threshold)
    stats = energy_stats(spec, state, H=H)
    if H.has_dense:
        measure = spectral_measure_exact(H, state)
        method = "exact"
    else:
        measure = spectral_density_kpm(H, state, kpm_moments)
        method = "kpm"
    z = standardize(measure, stats)
    report = gaussian_comparison(z, n=n)
    k = default_k(n) if k_override is None else min(max(int(k_override), 2), n)
    blocks = block_decompose(spec, state, k, stats=stats)
    lyap = lyapunov_sum(blocks)
    row = {
        "n": n,
        "k": k,
        "q": blocks.q,
        "sigma2": stats.variance,
        "cprime": stats.cprime,
        "ks": report.ks_distance,
        "m1": report.moments[0],
        "m2": report.moments[1],
        "m3": report.moments[2],
        "m4": report.moments[3],
        "charfn_dev": report.charfn_dev,
        "lyapunov_sum": lyap.value,
        "lyapunov_bound": lyap.bound,
        "trunc_bound_r1": truncation_error_bound(n, k, stats.c_estimate, stats.cprime, 1.0),
    }
    extra = {"method": method, "mean_energy": stats.mean_energy, "report": report.as_dict()}
    return row, extra


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def sweep_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in SWEEP_COLUMNS])
    return buf.getvalue()


def convergence_sweep(
    model_family: Callable[[int], ModelSpec],
    state_family: Callable[[ModelSpec], ProductState],
    n_list: Sequence[int],
    output=None,
    k_override: int | None = None,
    kpm_moments: int = 2048,
    dense_threshold: int = DENSE_THRESHOLD,
    metadata: dict | None = None,
) -> list[dict]:
    """One row of Gaussian-convergence diagnostics per chain length.

    Rows use exact diagonalization when ``H`` fits under ``dense_threshold``
    and the KPM density otherwise; the choice is recorded per row in the JSON
    mirror.  When ``output`` is a path prefix, ``<output>.csv`` and
    ``<output>.json`` are written atomically.
    """
    n_list = list(n_list)
    if not n_list:
        raise ValueError("n_list is empty")

    def work(n):
        return _sweep_row(n, model_family, state_family, k_override, kpm_moments, dense_threshold)

    workers = min(thread_cap(), len(n_list))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, n_list))
    else:
        results = [work(n) for n in n_list]
    rows = [r for r, _ in results]
    if output is not None:
        from .io import atomic_write_text, canonical_json

        doc = {
            "columns": list(SWEEP_COLUMNS),
            "rows": rows,
            "per_row": [e for _, e in results],
            "metadata": dict(metadata or {}, kpm_moments=kpm_moments, dense_threshold=dense_threshold),
        }
        atomic_write_text(f"{output}.csv", sweep_csv(rows))
        atomic_write_text(f"{output}.json", canonical_json(doc))
    return rows
