"""Nearest-neighbour chain Hamiltonians.

A chain of ``n`` subsystems carries one on-site Hamiltonian per site and one
coupling per bond.  The local term attached to site ``mu`` is

    calH_mu = H_mu (x) 1  +  I_{mu, mu+1}

so that ``H = sum_mu calH_mu``.  With open boundaries the last site has no
bond; with periodic boundaries the last bond couples sites ``n-1`` and ``0``.

Sites are indexed from 0 throughout the code.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .config import DEFAULT_TOLERANCES, DENSE_THRESHOLD

__all__ = [
    "Boundary",
    "ModelSpec",
    "HamiltonianOperator",
    "LocalityReport",
    "SIGMA_X",
    "SIGMA_Z",
    "build_ising",
    "build_harmonic",
    "assemble",
    "local_norm_bound",
    "local_bounds",
    "check_locality",
    "apply_local_ops",
    "padded_sparse",
    "embed_term",
]

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


class Boundary(str, Enum):
    OPEN = "open"
    PERIODIC = "periodic"


def _hermitian_residual(mat: np.ndarray) -> float:
    return float(np.max(np.abs(mat - mat.conj().T))) if mat.size else 0.0


def _frozen(mat) -> np.ndarray:
    arr = np.array(mat, dtype=complex, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Declarative description of a nearest-neighbour chain.

    Parameters
    ----------
    n : int
        Number of sites.
    local_dims : sequence of int
        Hilbert-space dimension of every site.
    site_terms : sequence of ndarray
        On-site Hamiltonians ``H_mu``.
    bond_terms : sequence of ndarray
        Couplings ``I_{mu, mu+1}`` on the two-site space of sites ``mu`` and
        ``(mu + 1) % n``, first factor being site ``mu``.
    boundary : Boundary
        ``open`` requires ``n - 1`` bonds, ``periodic`` requires ``n``.
    builder, params
        Provenance used when the spec is written back to a model file.
    """

    n: int
    local_dims: tuple
    site_terms: tuple
    bond_terms: tuple
    boundary: Boundary = Boundary.OPEN
    builder: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise ValueError("n must be a positive integer")
        boundary = Boundary(self.boundary)
        dims = tuple(int(d) for d in self.local_dims)
        if len(dims) != n or any(d < 1 for d in dims):
            raise ValueError("local_dims must list n positive integers")
        if boundary is Boundary.PERIODIC and n < 2:
            raise ValueError("periodic boundary needs at least two sites")
        site_terms = tuple(_frozen(m) for m in self.site_terms)
        bond_terms = tuple(_frozen(m) for m in self.bond_terms)
        if len(site_terms) != n:
            raise ValueError(f"expected {n} site terms, got {len(site_terms)}")
        n_bonds = n if boundary is Boundary.PERIODIC else n - 1
        if len(bond_terms) != n_bonds:
            raise ValueError(
                f"{boundary.value} boundary needs {n_bonds} bond terms, got {len(bond_terms)}"
            )
        tol = DEFAULT_TOLERANCES.hermitian
        for mu, mat in enumerate(site_terms):
            if mat.shape != (dims[mu], dims[mu]):
                raise ValueError(f"site term {mu} has shape {mat.shape}, expected {(dims[mu],) * 2}")
            if _hermitian_residual(mat) > tol:
                raise ValueError(f"site term {mu} is not Hermitian")
        for mu, mat in enumerate(bond_terms):
            d = dims[mu] * dims[(mu + 1) % n]
            if mat.shape != (d, d):
                raise ValueError(f"bond term {mu} has shape {mat.shape}, expected {(d, d)}")
            if _hermitian_residual(mat) > tol:
                raise ValueError(f"bond term {mu} is not Hermitian")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "boundary", boundary)
        object.__setattr__(self, "local_dims", dims)
        object.__setattr__(self, "site_terms", site_terms)
        object.__setattr__(self, "bond_terms", bond_terms)
        object.__setattr__(self, "params", dict(self.params))

    @property
    def total_dim(self) -> int:
        return math.prod(self.local_dims)

    @property
    def n_bonds(self) -> int:
        return len(self.bond_terms)

    @property
    def is_real(self) -> bool:
        return all(not np.any(m.imag) for m in self.site_terms + self.bond_terms)

    def bond_sites(self, mu: int) -> tuple[int, int]:
        return mu, (mu + 1) % self.n

    def term_support(self, mu: int) -> tuple[int, ...]:
        """Sites touched by ``calH_mu``, in the order its local matrix uses."""
        if mu < self.n_bonds:
            return self.bond_sites(mu)
        return (mu,)

    def term_ops(self, mu: int) -> list[tuple[tuple[int, ...], np.ndarray]]:
        ops = [((mu,), self.site_terms[mu])]
        if mu < self.n_bonds:
            ops.append((self.bond_sites(mu), self.bond_terms[mu]))
        return ops

    def term_matrix(self, mu: int) -> np.ndarray:
        """``calH_mu`` as a dense matrix on :meth:`term_support`."""
        h = self.site_terms[mu]
        if mu < self.n_bonds:
            j = (mu + 1) % self.n
            return np.kron(h, np.eye(self.local_dims[j])) + self.bond_terms[mu]
        return np.array(h)

    def all_ops(self) -> list[tuple[tuple[int, ...], np.ndarray]]:
        ops = []
        for mu in range(self.n):
            ops.extend(self.term_ops(mu))
        return ops

    def term_distance(self, mu: int, nu: int) -> int:
        d = abs(mu - nu)
        if self.boundary is Boundary.PERIODIC:
            d = min(d, self.n - d)
        return d

    def with_terms(self, site_terms=None, bond_terms=None) -> "ModelSpec":
        return ModelSpec(
            n=self.n,
            local_dims=self.local_dims,
            site_terms=self.site_terms if site_terms is None else site_terms,
            bond_terms=self.bond_terms if bond_terms is None else bond_terms,
            boundary=self.boundary,
        )

    def scaled(self, factor: float) -> "ModelSpec":
        return self.with_terms(
            [factor * m for m in self.site_terms], [factor * m for m in self.bond_terms]
        )

    def shifted(self, c: float) -> "ModelSpec":
        """Add ``c`` times the identity to every site term."""
        return self.with_terms([m + c * np.eye(m.shape[0]) for m in self.site_terms])

    def without_bond(self, mu: int) -> "ModelSpec":
        """Same chain with bond ``mu`` set to zero (keeps the boundary type)."""
        bonds = list(self.bond_terms)
        bonds[mu] = np.zeros_like(bonds[mu])
        return self.with_terms(bond_terms=bonds)

    def open_chain(self) -> "ModelSpec":
        """Drop the wrap-around bond of a periodic chain."""
        if self.boundary is Boundary.OPEN:
            return self
        return ModelSpec(
            n=self.n,
            local_dims=self.local_dims,
            site_terms=self.site_terms,
            bond_terms=self.bond_terms[:-1],
            boundary=Boundary.OPEN,
        )


def build_ising(n: int, B: float, J: float, boundary="open") -> ModelSpec:
    """Transverse Ising chain ``-B sum s^z - (J/2) sum s^x s^x``."""
    boundary = Boundary(boundary)
    if n < 1:
        raise ValueError("n must be >= 1")
    site = -B * SIGMA_Z
    bond = -(J / 2) * np.kron(SIGMA_X, SIGMA_X)
    n_bonds = n if boundary is Boundary.PERIODIC else n - 1
    return ModelSpec(
        n=n,
        local_dims=(2,) * n,
        site_terms=[site] * n,
        bond_terms=[bond] * n_bonds,
        boundary=boundary,
        builder="ising",
        params={"B": float(B), "J": float(J)},
    )


def _ladder(d: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, d, dtype=float)), k=1)


def oscillator_operators(mass: float, omega: float, d: int) -> dict[str, np.ndarray]:
    """Truncated ``q``, ``p``, ``q^2`` and ``p^2`` in the Fock basis of frequency ``omega``.

    ``q2`` and ``p2`` hold the exact matrix elements of the squared operators
    between the retained levels, not the square of the truncated matrices.
    """
    big = _ladder(d + 2)
    q_big = (big + big.T) / np.sqrt(2 * mass * omega)
    p_big = 1j * np.sqrt(mass * omega / 2) * (big.T - big)
    q2 = (q_big @ q_big)[:d, :d]
    p2 = (p_big @ p_big)[:d, :d].real
    return {"q": q_big[:d, :d], "p": p_big[:d, :d], "q2": q2, "p2": p2}


def build_harmonic(
    n: int, mass: float, omega: float, d_trunc: int, boundary="open"
) -> ModelSpec:
    """Harmonic chain ``sum p_i^2/2m + (m/2) omega^2 sum (q_{i+1} - q_i)^2``.

    Each oscillator is truncated to its lowest ``d_trunc`` Fock levels, so all
    results depend on the truncation; converge them by sweeping ``d_trunc``.
    The squared displacements are split as ``q_i^2 + q_{i+1}^2`` (site terms)
    and ``-2 q_i q_{i+1}`` (bond terms).  A lone site (``n == 1``) is kept as a
    single oscillator of frequency ``omega``.
    """
    boundary = Boundary(boundary)
    if d_trunc < 2:
        raise ValueError("d_trunc must be >= 2")
    if mass <= 0 or omega <= 0:
        raise ValueError("mass and omega must be positive")
    if n < 1:
        raise ValueError("n must be >= 1")
    ops = oscillator_operators(mass, omega, d_trunc)
    n_bonds = n if boundary is Boundary.PERIODIC else n - 1
    coordination = [0] * n
    for b in range(n_bonds):
        coordination[b] += 1
        coordination[(b + 1) % n] += 1
    if n == 1:
        coordination = [1]
    spring = 0.5 * mass * omega**2
    sites = [ops["p2"] / (2 * mass) + c * spring * ops["q2"] for c in coordination]
    bond = -mass * omega**2 * np.kron(ops["q"], ops["q"])
    return ModelSpec(
        n=n,
        local_dims=(d_trunc,) * n,
        site_terms=sites,
        bond_terms=[bond] * n_bonds,
        boundary=boundary,
        builder="harmonic",
        params={"mass": float(mass), "omega": float(omega), "d_trunc": int(d_trunc)},
    )


def apply_local_ops(ops, psi: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Apply ``sum_k ops[k]`` to ``psi`` without forming the full matrix.

    ``ops`` is an iterable of ``(sites, matrix)`` pairs where ``matrix`` acts on
    the tensor product of ``sites`` in the listed order.  ``psi`` has shape
    ``(prod(dims),)`` or ``(prod(dims), batch)``.
    """
    dims = tuple(dims)
    batch = psi.shape[1:]
    tensor = psi.reshape(dims + batch)
    out = np.zeros(tensor.shape, dtype=np.result_type(psi.dtype, complex))
    flat_out = out.reshape(-1)
    for sites, mat in ops:
        k = len(sites)
        sub = tuple(dims[s] for s in sites)
        if list(sites) == list(range(sites[0], sites[0] + k)):
            # contiguous support: one batched matmul on a (left, sub, right) view
            left = math.prod(dims[: sites[0]])
            dsub = math.prod(sub)
            view = psi.reshape(left, dsub, -1)
            flat_out += np.matmul(mat, view).reshape(-1)
            continue
        m = np.asarray(mat).reshape(sub + sub)
        res = np.tensordot(m, tensor, axes=(tuple(range(k, 2 * k)), tuple(sites)))
        out += np.moveaxis(res, tuple(range(k)), tuple(sites))
    return out.reshape(psi.shape)


def padded_sparse(sites: Sequence[int], mat: np.ndarray, dims: Sequence[int]) -> sp.csr_matrix:
    """Identity-padded sparse matrix of a one- or two-site operator."""
    dims = tuple(dims)
    mat = np.asarray(mat)
    if len(sites) == 1:
        (s,) = sites
        left = math.prod(dims[:s])
        right = math.prod(dims[s + 1 :])
        out = sp.kron(sp.identity(left), sp.csr_matrix(mat))
        return sp.kron(out, sp.identity(right), format="csr")
    i, j = sites
    di, dj = dims[i], dims[j]
    m4 = mat.reshape(di, dj, di, dj)
    total = None
    for a in range(dj):
        for b in range(dj):
            block = m4[:, a, :, b]
            if not np.any(block):
                continue
            unit = np.zeros((dj, dj))
            unit[a, b] = 1.0
            factors = [sp.identity(d) for d in dims]
            factors[i] = sp.csr_matrix(block)
            factors[j] = sp.csr_matrix(unit)
            piece = factors[0]
            for f in factors[1:]:
                piece = sp.kron(piece, f, format="csr")
            total = piece if total is None else total + piece
    if total is None:
        n = math.prod(dims)
        return sp.csr_matrix((n, n), dtype=complex)
    return total.tocsr()


def embed_term(spec: ModelSpec, mu: int, support: Sequence[int]) -> np.ndarray:
    """Dense ``calH_mu`` on the ordered site tuple ``support``."""
    support = tuple(support)
    pos = {s: i for i, s in enumerate(support)}
    dims = tuple(spec.local_dims[s] for s in support)
    total = None
    for sites, mat in spec.term_ops(mu):
        piece = padded_sparse(tuple(pos[s] for s in sites), mat, dims)
        total = piece if total is None else total + piece
    return total.toarray()


class HamiltonianOperator:
    """Sum of identity-padded local terms, applied matrix-free.

    ``dense`` is materialized only when ``total_dim <= dense_threshold``.  The
    eigendecomposition of the dense matrix is computed once and cached.
    """

    def __init__(self, spec: ModelSpec, dense_threshold: int = DENSE_THRESHOLD):
        self.spec = spec
        self.total_dim = spec.total_dim
        self.dense_threshold = dense_threshold
        self._ops = spec.all_ops()
        # site and bond pieces of each term merged into one local matrix for apply
        self._merged = [(spec.term_support(mu), spec.term_matrix(mu)) for mu in range(spec.n)]
        self._dtype = float if spec.is_real else complex
        self.dense = self._materialize() if self.total_dim <= dense_threshold else None

    @property
    def shape(self) -> tuple[int, int]:
        return (self.total_dim, self.total_dim)

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        if v.shape[0] != self.total_dim:
            raise ValueError(f"vector length {v.shape[0]} != total_dim {self.total_dim}")
        return apply_local_ops(self._merged, v.astype(complex, copy=False), self.spec.local_dims)

    __call__ = apply

    def apply_term(self, mu: int, v: np.ndarray) -> np.ndarray:
        return apply_local_ops(self.spec.term_ops(mu), np.asarray(v, dtype=complex), self.spec.local_dims)

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=self.apply, dtype=complex)

    @property
    def has_dense(self) -> bool:
        return self.dense is not None

    def _materialize(self) -> np.ndarray:
        total = self.sparse()
        if self._dtype is float:
            total = total.real
        return total.toarray()

    def sparse(self) -> sp.csr_matrix:
        dims = self.spec.local_dims
        total = sp.csr_matrix(self.shape, dtype=complex)
        for sites, mat in self._ops:
            total = total + padded_sparse(sites, mat, dims)
        return total.tocsr()

    def term_sparse(self, mu: int) -> sp.csr_matrix:
        dims = self.spec.local_dims
        out = sp.csr_matrix(self.shape, dtype=complex)
        for sites, mat in self.spec.term_ops(mu):
            out = out + padded_sparse(sites, mat, dims)
        return out.tocsr()

    @cached_property
    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        """Cached ``(eigenvalues, eigenvectors)`` of the dense matrix."""
        if self.dense is None:
            raise ValueError(
                f"total_dim {self.total_dim} exceeds the dense threshold "
                f"{self.dense_threshold}; use the KPM or Krylov path"
            )
        return np.linalg.eigh(self.dense)


def assemble(spec: ModelSpec, dense_threshold: int = DENSE_THRESHOLD) -> HamiltonianOperator:
    """Build the operator ``H = sum_mu calH_mu`` for ``spec``."""
    dim = 1
    for d in spec.local_dims:
        dim *= d
        if dim > np.iinfo(np.intp).max:
            raise OverflowError("total Hilbert-space dimension overflows the platform integer")
    return HamiltonianOperator(spec, dense_threshold=dense_threshold)


def local_norm_bound(spec: ModelSpec, mu: int) -> float:
    """Operator norm of ``calH_mu`` on its (at most two-site) support."""
    if not 0 <= mu < spec.n:
        raise IndexError(f"site index {mu} out of range for n={spec.n}")
    evals = np.linalg.eigvalsh(spec.term_matrix(mu))
    return float(np.max(np.abs(evals)))


def local_bounds(spec: ModelSpec) -> dict[str, float]:
    """Both readings of the local boundedness constant.

    ``cprime`` is the maximum operator norm of the local terms, used wherever a
    bound on squared or fourth-power quantities is needed.  ``cprime_signed``
    is the maximum eigenvalue, i.e. the sup of ``<chi|calH_mu|chi>`` without an
    absolute value.
    """
    norms, tops = [], []
    for mu in range(spec.n):
        evals = np.linalg.eigvalsh(spec.term_matrix(mu))
        norms.append(float(np.max(np.abs(evals))))
        tops.append(float(evals[-1]))
    return {"cprime": max(norms), "cprime_signed": max(tops)}


@dataclass(frozen=True)
class LocalityReport:
    max_residual: float
    n_pairs: int
    adjacent_max: float
    method: str

    def passed(self, tol: float = DEFAULT_TOLERANCES.commutator) -> bool:
        return self.max_residual < tol


def check_locality(
    spec: ModelSpec,
    dense_threshold: int = DENSE_THRESHOLD,
    n_random: int = 4,
    seed: int = 0,
) -> LocalityReport:
    """Largest commutator ``[calH_mu, calH_nu]`` over pairs at distance > 1.

    Distances are measured on the ring for periodic chains.  Small systems use
    sparse padded matrices and report the Frobenius norm (an upper bound on the
    operator norm); larger ones check the commutator action on random vectors.
    ``adjacent_max`` gives the same quantity over neighbouring pairs for
    reference.
    """
    n = spec.n
    far = [(mu, nu) for mu in range(n) for nu in range(mu + 1, n) if spec.term_distance(mu, nu) > 1]
    near = [(mu, nu) for mu in range(n) for nu in range(mu + 1, n) if spec.term_distance(mu, nu) <= 1]
    op = HamiltonianOperator(spec, dense_threshold=0)
    if spec.total_dim <= dense_threshold:
        terms = [op.term_sparse(mu) for mu in range(n)]

        def residual(mu, nu):
            comm = terms[mu] @ terms[nu] - terms[nu] @ terms[mu]
            return float(sp.linalg.norm(comm)) if comm.nnz else 0.0

        method = "sparse-frobenius"
    else:
        rng = np.random.default_rng(seed)
        vecs = rng.standard_normal((spec.total_dim, n_random)) + 1j * rng.standard_normal(
            (spec.total_dim, n_random)
        )
        vecs /= np.linalg.norm(vecs, axis=0)

        def residual(mu, nu):
            ab = op.apply_term(mu, op.apply_term(nu, vecs))
            ba = op.apply_term(nu, op.apply_term(mu, vecs))
            return float(np.max(np.linalg.norm(ab - ba, axis=0)))

        method = "random-vectors"
    far_res = max((residual(mu, nu) for mu, nu in far), default=0.0)
    near_res = max((residual(mu, nu) for mu, nu in near), default=0.0)
    return LocalityReport(max_residual=far_res, n_pairs=len(far), adjacent_max=near_res, method=method)
