"""
Short-time dynamics of a product state
======================================

The survival probability |<a|exp(-iHt)|a>|^2 starts as exp(-sigma^2 t^2) for
any state, and for large chains that Gaussian shape persists.  A second
product state b can only be reached slowly when both states sit far above the
ground energy; the transition probability obeys a computable bound.
"""
# %%
import numpy as np

from qclt import (
    assemble,
    build_ising,
    energy_stats,
    fidelity_trace,
    ground_energy,
    named_state,
    transition_bound,
    transition_trace,
)
from qclt.state import basis_product_state

# %%
for n in (4, 8, 12):
    spec = build_ising(n, 1.0, 1.0)
    H = assemble(spec)
    state = named_state(spec, "all-up")
    stats = energy_stats(spec, state, H=H)
    trace = fidelity_trace(H, state, np.linspace(0, 2 / stats.sigma, 201), stats)
    print(f"n={n:2d}  sigma^2={stats.variance:.2f}  max |F - exp(-sigma^2 t^2)| = {trace.max_deviation():.4f}")

# %%
# Curvature at t = 0 is -2 sigma^2 for every state.
h = 1e-4 / stats.sigma
f = fidelity_trace(H, state, [-h, 0.0, h], stats).fidelity
print("F''(0) =", (f[0] - 2 * f[1] + f[2]) / h**2, " -2 sigma^2 =", -2 * stats.variance)

# %%
# Transitions from all-down to a state with two flipped spins.
n = 10
spec = build_ising(n, 1.0, 1.0)
H = assemble(spec)
e0 = ground_energy(H)
a = named_state(spec, "all-down")
stats_a = energy_stats(spec, a, H=H)
times = np.linspace(0, 20 / stats_a.sigma, 1001)
for flips in ((0, 1), (3, 4), (0, 1, 4, 5)):
    levels = [1] * n
    for i in flips:
        levels[i] = 0
    b = basis_product_state(spec, levels)
    bound = transition_bound(stats_a, energy_stats(spec, b, H=H), ground_energy=e0)
    peak = transition_trace(H, a, b, times).max()
    print(f"flips {flips}: max probability {peak:.4f}, bound {bound.value:.4f}, bound applies: {bound.regime_ok}")
