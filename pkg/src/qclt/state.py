"""Product states and the energy moments they induce."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .config import DEFAULT_TOLERANCES
from .model import Boundary, HamiltonianOperator, ModelSpec, embed_term, local_bounds

__all__ = [
    "DegenerateVarianceError",
    "MomentMismatchError",
    "ProductState",
    "StateStatistics",
    "ConditionCheck",
    "product_state",
    "random_product_state",
    "basis_product_state",
    "named_state",
    "energy_stats",
    "check_variance_condition",
    "adjacent_pairs",
    "local_state_vector",
    "term_means",
]

# Above this dimension energy_stats skips the full-space cross check by default.
GLOBAL_CHECK_LIMIT = 2**16


class DegenerateVarianceError(ValueError):
    """The energy variance of the state vanishes, so ``Z_n`` is undefined."""


class MomentMismatchError(RuntimeError):
    """Local and full-space moment evaluations disagree."""


@dataclass(frozen=True, eq=False)
class ProductState:
    """``|a> = |a_0> (x) |a_1> (x) ... (x) |a_{n-1}>`` with normalized factors."""

    locals: tuple

    @property
    def n(self) -> int:
        return len(self.locals)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(len(v) for v in self.locals)

    @cached_property
    def vector(self) -> np.ndarray:
        out = np.ones(1, dtype=complex)
        for v in self.locals:
            out = np.kron(out, v)
        return out

    def local(self, sites: Sequence[int]) -> np.ndarray:
        return local_state_vector(self, sites)

    def matches(self, spec: ModelSpec) -> bool:
        return self.dims == spec.local_dims


def product_state(locals, spec: ModelSpec | None = None) -> ProductState:
    """Normalize the local factors and bundle them into a :class:`ProductState`."""
    vecs = []
    for mu, v in enumerate(locals):
        arr = np.array(v, dtype=complex).reshape(-1)
        norm = np.linalg.norm(arr)
        if norm == 0:
            raise ValueError(f"zero local vector at site {mu}")
        arr = arr / norm
        arr.setflags(write=False)
        vecs.append(arr)
    state = ProductState(tuple(vecs))
    if spec is not None and not state.matches(spec):
        raise ValueError(f"local dimensions {state.dims} do not match the model {spec.local_dims}")
    return state


def random_product_state(spec: ModelSpec, seed: int) -> ProductState:
    """Haar-random factor on every site (normalized complex Gaussian vectors)."""
    rng = np.random.default_rng(seed)
    vecs = [rng.standard_normal(d) + 1j * rng.standard_normal(d) for d in spec.local_dims]
    return product_state(vecs, spec)


def basis_product_state(spec: ModelSpec, levels: Sequence[int]) -> ProductState:
    vecs = []
    for d, lvl in zip(spec.local_dims, levels, strict=True):
        v = np.zeros(d)
        v[lvl] = 1.0
        vecs.append(v)
    return product_state(vecs, spec)


def named_state(spec: ModelSpec, name: str, seed: int = 0) -> ProductState:
    """``all-up`` (level 0 everywhere), ``all-down`` (top level), ``all-plus`` or ``random``."""
    if name == "all-up":
        return basis_product_state(spec, [0] * spec.n)
    if name == "all-down":
        return basis_product_state(spec, [d - 1 for d in spec.local_dims])
    if name == "all-plus":
        return product_state([np.ones(d) for d in spec.local_dims], spec)
    if name == "random":
        return random_product_state(spec, seed)
    raise ValueError(f"unknown state builder {name!r}")


def local_state_vector(state: ProductState, sites: Sequence[int]) -> np.ndarray:
    out = np.ones(1, dtype=complex)
    for s in sites:
        out = np.kron(out, state.locals[s])
    return out


def adjacent_pairs(spec: ModelSpec) -> list[tuple[int, int]]:
    """Unordered pairs of local terms whose supports overlap."""
    if spec.n == 1:
        return []
    if spec.boundary is Boundary.PERIODIC:
        if spec.n == 2:
            return [(0, 1)]
        return [(mu, (mu + 1) % spec.n) for mu in range(spec.n)]
    return [(mu, mu + 1) for mu in range(spec.n - 1)]


def _union_support(spec: ModelSpec, terms: Sequence[int]) -> tuple[int, ...]:
    sites = []
    for mu in terms:
        for s in spec.term_support(mu):
            if s not in sites:
                sites.append(s)
    return tuple(sites)


def term_means(spec: ModelSpec, state: ProductState) -> np.ndarray:
    """``<a|calH_mu|a>`` for every site, from local contractions."""
    means = np.empty(spec.n)
    for mu in range(spec.n):
        support = spec.term_support(mu)
        psi = state.local(support)
        means[mu] = np.vdot(psi, spec.term_matrix(mu) @ psi).real
    return means


@dataclass(frozen=True)
class StateStatistics:
    """Energy moments of a product state.

    ``per_bond_variance`` splits the variance over neighbouring pairs of local
    terms: each pair contributes its cross covariance plus a share of the two
    single-term variances (split evenly among the pairs a term belongs to), so
    the entries add up to ``variance``.
    """

    n: int
    mean_energy: float
    variance: float
    per_bond_variance: tuple
    term_means: tuple
    term_variances: tuple
    cprime: float
    cprime_signed: float
    c_estimate: float
    global_residual: float | None = None

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.variance))

    def require_variance(self, tol: float = DEFAULT_TOLERANCES.degenerate_variance) -> float:
        if self.variance <= tol:
            raise DegenerateVarianceError("degenerate variance: sigma_a^2 = 0")
        return self.sigma


def energy_stats(
    spec: ModelSpec,
    state: ProductState,
    H: HamiltonianOperator | None = None,
    cross_check: bool | None = None,
    tol: float = DEFAULT_TOLERANCES.moment_methods,
) -> StateStatistics:
    """Mean and variance of ``H`` in ``state``.

    The moments are computed from one- and two-term local contractions (cost
    linear in ``n``).  Unless disabled, they are recomputed by applying the
    full Hamiltonian to the state vector and the two results must agree to
    relative ``tol``; otherwise :class:`MomentMismatchError` is raised.
    """
    if not state.matches(spec):
        raise ValueError("state does not match the model dimensions")
    means = term_means(spec, state)
    centered = {}

    def x_matrix(mu, support):
        key = (mu, support)
        if key not in centered:
            m = embed_term(spec, mu, support)
            centered[key] = m - means[mu] * np.eye(m.shape[0])
        return centered[key]

    variances = np.empty(spec.n)
    for mu in range(spec.n):
        support = spec.term_support(mu)
        psi = state.local(support)
        xpsi = x_matrix(mu, support) @ psi
        variances[mu] = np.vdot(xpsi, xpsi).real

    pairs = adjacent_pairs(spec)
    membership = np.zeros(spec.n)
    for mu, nu in pairs:
        membership[mu] += 1
        membership[nu] += 1
    per_pair = []
    for mu, nu in pairs:
        support = _union_support(spec, (mu, nu))
        psi = state.local(support)
        cross = np.vdot(x_matrix(mu, support) @ psi, x_matrix(nu, support) @ psi)
        per_pair.append(variances[mu] / membership[mu] + variances[nu] / membership[nu] + 2 * cross.real)
    if not pairs:
        per_pair = [float(variances.sum())]

    mean = float(means.sum())
    variance = float(np.sum(per_pair))
    scale = max(1.0, abs(mean), abs(variance))

    if cross_check is None:
        cross_check = spec.total_dim <= GLOBAL_CHECK_LIMIT
    residual = None
    if cross_check:
        op = H if H is not None else HamiltonianOperator(spec, dense_threshold=0)
        vec = state.vector
        hv = op.apply(vec)
        g_mean = float(np.vdot(vec, hv).real)
        shifted = hv - g_mean * vec
        g_var = float(np.vdot(shifted, shifted).real)
        residual = max(abs(g_mean - mean), abs(g_var - variance)) / scale
        if residual > tol:
            raise MomentMismatchError(
                f"local ({mean}, {variance}) and global ({g_mean}, {g_var}) moments disagree"
            )

    if variance < -DEFAULT_TOLERANCES.degenerate_variance:
        raise MomentMismatchError(f"negative variance {variance}")
    if abs(variance) <= DEFAULT_TOLERANCES.degenerate_variance:
        variance = 0.0

    bounds = local_bounds(spec)
    return StateStatistics(
        n=spec.n,
        mean_energy=mean,
        variance=variance,
        per_bond_variance=tuple(float(v) for v in per_pair),
        term_means=tuple(float(m) for m in means),
        term_variances=tuple(float(v) for v in variances),
        cprime=bounds["cprime"],
        cprime_signed=bounds["cprime_signed"],
        c_estimate=variance / spec.n,
        global_residual=residual,
    )


class ConditionCheck(NamedTuple):
    ok: bool
    margin: float


def check_variance_condition(stats: StateStatistics, C: float) -> ConditionCheck:
    """Is ``sigma_a^2 >= n C``?  ``margin`` is ``sigma_a^2 - n C``."""
    if not C > 0:
        raise ValueError("C must be strictly positive")
    margin = stats.variance - stats.n * C
    return ConditionCheck(margin >= 0, float(margin))
