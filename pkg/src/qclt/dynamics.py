"""Survival and transition probabilities of product states under ``exp(-iHt)``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .config import DEFAULT_TOLERANCES
from .krylov import expm_apply
from .model import HamiltonianOperator
from .state import ProductState, StateStatistics, energy_stats

__all__ = [
    "FidelityTrace",
    "TransitionBound",
    "fidelity_trace",
    "transition_trace",
    "transition_bound",
    "ground_energy",
]


@dataclass(frozen=True, eq=False)
class FidelityTrace:
    times: np.ndarray
    fidelity: np.ndarray
    gaussian_model: np.ndarray
    sigma2: float
    method: str

    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.fidelity - self.gaussian_model)))


def _pick(H: HamiltonianOperator, method: str) -> str:
    if method == "auto":
        return "exact" if H.has_dense else "krylov"
    if method not in ("exact", "krylov"):
        raise ValueError(f"unknown method {method!r}")
    return method


def fidelity_trace(
    H: HamiltonianOperator,
    state: ProductState,
    times,
    stats: StateStatistics | None = None,
    method: str = "auto",
) -> FidelityTrace:
    """``|<a|exp(-iHt)|a>|^2`` on ``times`` next to the Gaussian law ``exp(-sigma^2 t^2)``.

    Energies are measured from the mean energy of the state; this changes only
    a global phase but keeps short-time values accurate.
    """
    times = np.asarray(times, dtype=float)
    if stats is None:
        stats = energy_stats(H.spec, state, H=H)
    method = _pick(H, method)
    psi = state.vector
    if method == "exact":
        evals, evecs = H.eigh
        weights = np.abs(evecs.conj().T @ psi) ** 2
        amp = np.exp(-1j * np.outer(times, evals - stats.mean_energy)) @ weights
    else:
        amp = np.array(
            [np.vdot(psi, expm_apply(H.apply, psi, t, shift=stats.mean_energy)) for t in times]
        )
    fid = np.clip(np.abs(amp) ** 2, 0.0, None)
    return FidelityTrace(times, fid, np.exp(-stats.variance * times**2), stats.variance, method)


def transition_trace(
    H: HamiltonianOperator,
    state_a: ProductState,
    state_b: ProductState,
    times,
    method: str = "auto",
    tol: float = DEFAULT_TOLERANCES.orthogonality,
) -> np.ndarray:
    """``|<b|exp(-iHt)|a>|^2`` for orthogonal product states ``a`` and ``b``."""
    a, b = state_a.vector, state_b.vector
    overlap = abs(np.vdot(b, a))
    if overlap > tol:
        raise ValueError(f"states are not orthogonal (|<a|b>| = {overlap:.3g})")
    times = np.asarray(times, dtype=float)
    method = _pick(H, method)
    if method == "exact":
        evals, evecs = H.eigh
        amp_a = evecs.conj().T @ a
        amp_b = evecs.conj().T @ b
        amp = np.exp(-1j * np.outer(times, evals)) @ (amp_b.conj() * amp_a)
    else:
        amp = np.array([np.vdot(b, expm_apply(H.apply, a, t)) for t in times])
    return np.clip(np.abs(amp) ** 2, 0.0, 1.0)


class TransitionBound(NamedTuple):
    value: float
    regime_ok: bool
    shifted_mean_a: float
    shifted_mean_b: float


def transition_bound(
    stats_a: StateStatistics,
    stats_b: StateStatistics,
    ground_energy: float | None = None,
    regime_ratio: float = 0.1,
) -> TransitionBound:
    """Gaussian upper bound on the transition probability between two product states.

    ``2 s_a s_b / (s_a^2 + s_b^2) * exp(-(E_a - E_b)^2 / (2 (s_a^2 + s_b^2)))``.
    The value only involves energy differences.  ``regime_ok`` reports whether
    both widths are small compared with the mean energies measured from
    ``ground_energy`` (``sigma < regime_ratio * (E - E_0)``); without a ground
    energy the raw means are used.
    """
    sa = stats_a.require_variance()
    sb = stats_b.require_variance()
    s2 = sa**2 + sb**2
    diff = stats_a.mean_energy - stats_b.mean_energy
    value = 2 * sa * sb / s2 * np.exp(-(diff**2) / (2 * s2))
    e0 = 0.0 if ground_energy is None else ground_energy
    ea = stats_a.mean_energy - e0
    eb = stats_b.mean_energy - e0
    regime = sa < regime_ratio * ea and sb < regime_ratio * eb
    return TransitionBound(float(value), bool(regime), float(ea), float(eb))


def ground_energy(H: HamiltonianOperator) -> float:
    """Lowest eigenvalue: exact when the dense matrix exists, power iteration otherwise."""
    if H.has_dense:
        return float(H.eigh[0][0])
    from .spectrum import spectral_bounds

    return float(spectral_bounds(H)[0])
