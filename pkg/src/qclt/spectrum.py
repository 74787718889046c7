"""Spectral measure that a product state induces on the energy axis.

Two representations are supported.  The exact measure lists every eigenvalue
``E_phi`` of ``H`` with weight ``|<a|phi>|^2``.  The kernel polynomial (KPM)
measure is a smooth density reconstructed from Chebyshev moments
``<a|T_m(H_scaled)|a>``, computed matrix-free.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from numpy.polynomial import chebyshev

from .config import DEFAULT_TOLERANCES
from .krylov import expm_expectation
from .model import HamiltonianOperator
from .state import ProductState, StateStatistics

__all__ = [
    "SpectralBoundError",
    "SpectralMeasure",
    "CharFnSample",
    "spectral_measure_exact",
    "spectral_density_kpm",
    "spectral_bounds",
    "jackson_kernel",
    "lorentz_kernel",
    "standardize",
    "cdf",
    "char_fn",
    "char_fn_values",
]


class SpectralBoundError(RuntimeError):
    """Spectral bounds could not be established for the Chebyshev rescaling."""


@dataclass(frozen=True, eq=False)
class SpectralMeasure:
    """Exact atoms or a KPM density on the energy (or standardized) axis.

    ``values`` are the eigenvalues (exact) or grid points (kpm); ``weights``
    are the atom weights or density values.  ``shift`` and ``factor`` record
    the affine map applied so far: ``values = (E - shift) / factor``.
    """

    kind: str
    values: np.ndarray
    weights: np.ndarray
    shift: float = 0.0
    factor: float = 1.0
    n_moments: int | None = None
    kernel: str | None = None
    meta: dict = field(default_factory=dict)

    def total(self) -> float:
        if self.kind == "exact":
            return float(np.sum(self.weights))
        return float(np.trapezoid(self.weights, self.values))

    def moment(self, p: int, center: float = 0.0) -> float:
        x = (self.values - center) ** p
        if self.kind == "exact":
            return float(np.sum(self.weights * x))
        return float(np.trapezoid(self.weights * x, self.values))

    def mean(self) -> float:
        return self.moment(1)

    def variance(self) -> float:
        return self.moment(2, self.mean())

    def energies(self) -> np.ndarray:
        return self.values * self.factor + self.shift

    def aggregated(self, decimals: int = 10) -> "SpectralMeasure":
        """Merge exact atoms whose positions agree to ``decimals`` places."""
        if self.kind != "exact":
            return self
        keys = np.round(self.values, decimals)
        uniq, inv = np.unique(keys, return_inverse=True)
        w = np.zeros(len(uniq))
        np.add.at(w, inv, self.weights)
        return replace(self, values=uniq.astype(float), weights=w)


class CharFnSample(NamedTuple):
    r: float
    value: complex


def spectral_measure_exact(
    H: HamiltonianOperator, state: ProductState, tol: float = DEFAULT_TOLERANCES.weight_sum
) -> SpectralMeasure:
    """Full eigendecomposition: atoms ``(E_phi, |<a|phi>|^2)`` in ascending order.

    Degenerate eigenvalues keep one entry per eigenvector.
    """
    if not H.has_dense:
        raise ValueError(
            f"dimension {H.total_dim} is above the dense threshold; use spectral_density_kpm"
        )
    evals, evecs = H.eigh
    amps = evecs.conj().T @ state.vector
    weights = np.abs(amps) ** 2
    total = weights.sum()
    if abs(total - 1) > tol:
        raise RuntimeError(f"spectral weights sum to {total}, expected 1")
    return SpectralMeasure("exact", np.array(evals, dtype=float), weights, meta={"method": "exact"})


def jackson_kernel(M: int) -> np.ndarray:
    m = np.arange(M)
    q = np.pi / (M + 1)
    return ((M - m + 1) * np.cos(q * m) + np.sin(q * m) / np.tan(q)) / (M + 1)


def lorentz_kernel(M: int, lam: float = 4.0) -> np.ndarray:
    m = np.arange(M)
    return np.sinh(lam * (1 - m / M)) / np.sinh(lam)


KERNELS = {"jackson": jackson_kernel, "lorentz": lorentz_kernel}


def _rayleigh_power(apply, v, max_iter, tol):
    lam = np.vdot(v, apply(v)).real
    for it in range(max_iter):
        w = apply(v)
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0, True
        v = w / norm
        new = np.vdot(v, apply(v)).real
        if abs(new - lam) <= tol * max(1.0, abs(new)) and it > 10:
            return new, True
        lam = new
    return lam, False


def spectral_bounds(
    H: HamiltonianOperator,
    seed: int = 0,
    max_iter: int = DEFAULT_TOLERANCES.power_iter_max,
    tol: float = DEFAULT_TOLERANCES.power_iter_tol,
) -> tuple[float, float]:
    """Estimate ``(E_min, E_max)`` by power iteration.

    The spectrum is first shifted by the rigorous bound ``sum_mu ||calH_mu||``
    so that the top (bottom) eigenvalue dominates, which avoids the stalling
    of plain power iteration on spectra symmetric about zero.
    """
    from .model import local_norm_bound

    spec = H.spec
    radius = sum(local_norm_bound(spec, mu) for mu in range(spec.n))
    if radius == 0:
        return 0.0, 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(H.total_dim) + 1j * rng.standard_normal(H.total_dim)
    v /= np.linalg.norm(v)
    top, ok_top = _rayleigh_power(lambda x: H.apply(x) + radius * x, v, max_iter, tol)
    bottom, ok_bottom = _rayleigh_power(lambda x: radius * x - H.apply(x), v, max_iter, tol)
    if not (ok_top and ok_bottom):
        raise SpectralBoundError(f"power iteration did not converge in {max_iter} steps")
    return radius - bottom, top - radius


def _chebyshev_moments(H, psi, M, center, half_width):
    def scaled(x):
        return (H.apply(x) - center * x) / half_width

    moments = np.empty(M)
    v_prev = psi.astype(complex)
    v_cur = scaled(v_prev)
    moments[0] = np.vdot(psi, v_prev).real
    if M > 1:
        moments[1] = np.vdot(psi, v_cur).real
    for m in range(2, M):
        v_prev, v_cur = v_cur, 2 * scaled(v_cur) - v_prev
        moments[m] = np.vdot(psi, v_cur).real
    return moments


def spectral_density_kpm(
    H: HamiltonianOperator,
    state: ProductState,
    M: int,
    grid: np.ndarray | None = None,
    kernel: str = "jackson",
    bounds: tuple[float, float] | None = None,
    margin: float = DEFAULT_TOLERANCES.kpm_bound_margin,
    seed: int = 0,
) -> SpectralMeasure:
    """Kernel-polynomial estimate of the local density of states of ``state``.

    Parameters
    ----------
    H : HamiltonianOperator
        Only ``H.apply`` is used.
    state : ProductState
    M : int
        Number of Chebyshev moments (at least 16).
    grid : array, optional
        Energies at which to evaluate the density.  Defaults to ``8 M``
        uniform points strictly inside the rescaled window.
    kernel : {"jackson", "lorentz"}
    bounds : (float, float), optional
        Known ``(E_min, E_max)``; estimated by :func:`spectral_bounds` otherwise.
    margin : float
        Relative widening of the bounds before rescaling to ``[-1, 1]``.
    """
    if M < DEFAULT_TOLERANCES.kpm_min_moments:
        raise ValueError(f"M must be at least {DEFAULT_TOLERANCES.kpm_min_moments}")
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}")
    if bounds is None:
        bounds = spectral_bounds(H, seed=seed)
    e_min, e_max = bounds
    center = 0.5 * (e_max + e_min)
    half_width = 0.5 * (e_max - e_min) * (1 + margin)
    if half_width <= 0:
        half_width = max(abs(center), 1.0) * margin
    moments = _chebyshev_moments(H, state.vector, M, center, half_width)
    if np.max(np.abs(moments)) > 1 + 1e-8:
        raise SpectralBoundError("Chebyshev moments exceed 1: spectrum leaks outside the bounds")
    damped = moments * KERNELS[kernel](M)
    coef = 2 * damped
    coef[0] = damped[0]

    if grid is None:
        npts = max(8 * M, 1024)
        x = np.linspace(-1, 1, npts + 2)[1:-1]
        grid = center + half_width * x
    else:
        grid = np.asarray(grid, dtype=float)
        x = (grid - center) / half_width
        if np.any(np.abs(x) >= 1):
            raise ValueError("grid extends outside the Chebyshev window")
    raw = chebyshev.chebval(x, coef) / (np.pi * half_width * np.sqrt(1 - x**2))
    density = np.clip(raw, 0.0, None)
    meta = {
        "method": "kpm",
        "bounds": [float(e_min), float(e_max)],
        "center": float(center),
        "half_width": float(half_width),
        "min_raw_density": float(raw.min()),
    }
    return SpectralMeasure("kpm", grid, density, n_moments=M, kernel=kernel, meta=meta)


def standardize(measure: SpectralMeasure, stats: StateStatistics) -> SpectralMeasure:
    """Map energies to ``z = (E - mean_energy) / sigma``.

    Idempotent: a measure already expressed in these coordinates is returned
    unchanged.
    """
    sigma = stats.require_variance()
    shift, factor = stats.mean_energy, sigma
    if measure.shift == shift and measure.factor == factor:
        return measure
    energies = measure.values * measure.factor + measure.shift
    values = (energies - shift) / factor
    weights = measure.weights
    if measure.kind == "kpm":
        weights = weights * factor / measure.factor
    return replace(measure, values=values, weights=weights, shift=shift, factor=factor)


def cdf(measure: SpectralMeasure, z) -> np.ndarray | float:
    """``P(value <= z)``: right-continuous step function or trapezoid integral."""
    z_arr = np.asarray(z, dtype=float)
    if measure.kind == "exact":
        order = np.argsort(measure.values, kind="stable")
        vals = measure.values[order]
        cum = np.concatenate([[0.0], np.cumsum(measure.weights[order])])
        out = cum[np.searchsorted(vals, z_arr, side="right")]
    else:
        x, rho = measure.values, measure.weights
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (rho[1:] + rho[:-1]) * np.diff(x))])
        out = np.interp(z_arr, x, cum, left=0.0, right=cum[-1])
    return float(out) if np.ndim(out) == 0 else out


def char_fn_values(
    H: HamiltonianOperator,
    state: ProductState,
    stats: StateStatistics,
    rs,
    method: str = "auto",
    tol: float = DEFAULT_TOLERANCES.krylov_residual,
    max_dim: int = DEFAULT_TOLERANCES.krylov_max_dim,
) -> np.ndarray:
    """``<a|exp(-i r Z_n)|a>`` for every ``r`` in ``rs``.

    ``method`` is ``exact`` (spectral sum), ``krylov`` (Lanczos on the state
    vector) or ``auto`` (exact when the dense matrix exists).
    """
    sigma = stats.require_variance()
    rs = np.atleast_1d(np.asarray(rs, dtype=float))
    if method == "auto":
        method = "exact" if H.has_dense else "krylov"
    if method == "exact":
        mu = standardize(spectral_measure_exact(H, state), stats)
        return np.exp(-1j * np.outer(rs, mu.values)) @ mu.weights
    if method == "krylov":
        psi = state.vector
        return np.array(
            [
                expm_expectation(H.apply, psi, r / sigma, shift=stats.mean_energy, tol=tol, max_dim=max_dim)
                for r in rs
            ]
        )
    raise ValueError(f"unknown method {method!r}")


def char_fn(
    H: HamiltonianOperator,
    state: ProductState,
    stats: StateStatistics,
    r: float,
    method: str = "auto",
    **kwargs,
) -> CharFnSample:
    value = char_fn_values(H, state, stats, [r], method=method, **kwargs)[0]
    return CharFnSample(float(r), complex(value))
