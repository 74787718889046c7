"""Lanczos approximations of ``exp(-i tau H)`` acting on a vector."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .config import DEFAULT_TOLERANCES

__all__ = ["KrylovConvergenceError", "lanczos", "expm_expectation", "expm_apply"]


class KrylovConvergenceError(RuntimeError):
    pass


def _expm_tridiag(alpha, beta, tau):
    t = np.diag(alpha) + np.diag(beta, 1) + np.diag(beta, -1)
    w, u = np.linalg.eigh(t)
    return (u * np.exp(-1j * tau * w)) @ u[0].conj()


def lanczos(apply: Callable, psi: np.ndarray, max_dim: int, stop: Callable | None = None):
    """Lanczos recursion with full reorthogonalization.

    ``stop(alpha, beta, m)`` is consulted after every step with the current
    tridiagonal coefficients; returning True ends the recursion.  Returns
    ``(alpha, beta, basis, invariant)`` where ``beta`` has one entry more
    than the number of off-diagonals used (the residual norm).
    """
    norm = np.linalg.norm(psi)
    basis = np.zeros((max_dim, psi.shape[0]), dtype=complex)
    basis[0] = psi / norm
    alpha, beta = [], []
    for m in range(max_dim):
        w = apply(basis[m])
        a = np.vdot(basis[m], w).real
        alpha.append(a)
        w = w - a * basis[m]
        if m > 0:
            w = w - beta[-1] * basis[m - 1]
        # two passes of Gram-Schmidt keep the basis orthonormal to machine precision
        for _ in range(2):
            w = w - basis[: m + 1].T @ (basis[: m + 1].conj() @ w)
        b = np.linalg.norm(w)
        beta.append(b)
        scale = max(abs(x) for x in alpha) + max(beta)
        invariant = b <= 1e-13 * max(scale, 1.0)
        if invariant or (stop is not None and stop(alpha, beta, m + 1)):
            return np.array(alpha), np.array(beta), basis[: m + 1], invariant
        if m + 1 < max_dim:
            basis[m + 1] = w / b
    return np.array(alpha), np.array(beta), basis, False


def _error_estimate(alpha, beta, tau):
    m = len(alpha)
    col = _expm_tridiag(np.asarray(alpha), np.asarray(beta[: m - 1]), tau)
    return beta[m - 1] * abs(col[m - 1]), col


def expm_expectation(
    apply: Callable,
    psi: np.ndarray,
    tau: float,
    shift: float = 0.0,
    tol: float = DEFAULT_TOLERANCES.krylov_residual,
    max_dim: int = DEFAULT_TOLERANCES.krylov_max_dim,
) -> complex:
    """``<psi| exp(-i tau (H - shift)) |psi>`` for normalized ``psi``.

    The subspace grows until the standard a-posteriori estimate
    ``beta_m |[exp(-i tau T_m)]_{m,1}|`` drops below ``tol``.
    """
    max_dim = min(max_dim, psi.shape[0])

    def stop(alpha, beta, m):
        if m % 4 and m != max_dim:
            return False
        err, _ = _error_estimate(np.asarray(alpha) - shift, beta, tau)
        return err < tol

    alpha, beta, _, invariant = lanczos(apply, psi, max_dim, stop)
    err, col = _error_estimate(alpha - shift, beta, tau)
    if not invariant and err >= tol:
        raise KrylovConvergenceError(
            f"Lanczos did not reach tolerance {tol:g} within {max_dim} vectors (estimate {err:.2e})"
        )
    return complex(col[0])


def expm_apply(
    apply: Callable,
    psi: np.ndarray,
    tau: float,
    shift: float = 0.0,
    tol: float = DEFAULT_TOLERANCES.krylov_residual,
    max_dim: int = DEFAULT_TOLERANCES.krylov_max_dim,
    max_splits: int = 12,
) -> np.ndarray:
    """``exp(-i tau (H - shift)) psi``; long times are split into equal substeps."""
    max_dim = min(max_dim, psi.shape[0])
    norm = np.linalg.norm(psi)
    if norm == 0 or tau == 0:
        return psi.astype(complex)
    for level in range(max_splits + 1):
        steps = 2**level
        dt = tau / steps
        vec = psi.astype(complex) / norm
        ok = True
        for _ in range(steps):

            def stop(alpha, beta, m, dt=dt):
                if m % 4 and m != max_dim:
                    return False
                err, _ = _error_estimate(np.asarray(alpha) - shift, beta, dt)
                return err < tol / steps

            alpha, beta, basis, invariant = lanczos(apply, vec, max_dim, stop)
            err, col = _error_estimate(alpha - shift, beta, dt)
            if not invariant and err >= tol / steps:
                ok = False
                break
            vec = col @ basis[: len(alpha)]
        if ok:
            return norm * vec
    raise KrylovConvergenceError(f"Krylov propagation failed after {2**max_splits} substeps")
