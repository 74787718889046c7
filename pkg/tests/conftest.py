import numpy as np
import pytest
from hypothesis import settings

from qclt.model import ModelSpec, assemble, build_ising
from qclt.state import energy_stats, named_state

settings.register_profile("default", deadline=None, max_examples=30)
settings.load_profile("default")


def random_hermitian(rng, d):
    a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return (a + a.conj().T) / 2


def random_spec(seed, n, boundary="open", max_dim=3):
    """Chain with random Hermitian site and bond terms and mixed local dimensions."""
    rng = np.random.default_rng(seed)
    dims = [int(rng.integers(2, max_dim + 1)) for _ in range(n)]
    n_bonds = n - 1 if boundary == "open" else n
    sites = [random_hermitian(rng, d) for d in dims]
    bonds = [random_hermitian(rng, dims[m] * dims[(m + 1) % n]) for m in range(n_bonds)]
    return ModelSpec(n=n, local_dims=dims, site_terms=sites, bond_terms=bonds, boundary=boundary)


class IsingCase:
    """Open Ising chain (B=1, J=1) with the all-up state; shared across tests."""

    def __init__(self, n, state="all-up", seed=0):
        self.spec = build_ising(n, 1.0, 1.0)
        self.H = assemble(self.spec)
        self.state = named_state(self.spec, state, seed=seed)
        self.stats = energy_stats(self.spec, self.state, H=self.H)


_CASES = {}


def ising_case(n, state="all-up", seed=0):
    key = (n, state, seed)
    if key not in _CASES:
        _CASES[key] = IsingCase(n, state, seed)
    return _CASES[key]


@pytest.fixture(scope="session")
def ising():
    return ising_case
