import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_spec
from qclt.clt import (
    SWEEP_COLUMNS,
    block_decompose,
    char_fn_factorization_check,
    check_factorization,
    convergence_sweep,
    default_k,
    gaussian_cdf,
    gaussian_comparison,
    lyapunov_closed_form_bound,
    lyapunov_sum,
    sweep_csv,
    truncation_error_bound,
    truncation_residuals,
)
from qclt.model import assemble, build_ising
from qclt.spectrum import SpectralMeasure, cdf, char_fn_values, spectral_measure_exact, standardize
from qclt.state import energy_stats, named_state, product_state, random_product_state

seeds = st.integers(0, 2**31 - 1)


# block length


@pytest.mark.parametrize("n,k", [(2, 2), (4, 2), (6, 3), (8, 4), (12, 6), (16, 8), (10_000, 1000)])
def test_default_k_examples(n, k):
    assert default_k(n) == k


@given(st.integers(2, 10**7))
def test_default_k_is_integer_part(n):
    k = default_k(n)
    assert 2 <= k <= n
    if k > 2:
        assert k**4 <= n**3 < (k + 1) ** 4


def test_default_k_rejects_tiny_chain():
    with pytest.raises(ValueError):
        default_k(1)


# block decomposition


def _blocks(n, k, state="all-up", boundary="open", seed=0):
    spec = build_ising(n, 1.0, 1.0, boundary)
    return block_decompose(spec, named_state(spec, state, seed=seed), k)


def test_blocks_seven_sites():
    b = _blocks(7, 3)
    assert b.big_blocks == ((0, 1), (3, 4), (6,))
    assert b.small_blocks == (2, 5)
    assert b.q == 1


def test_blocks_six_sites_empty_remainder():
    b = _blocks(6, 3)
    assert b.big_blocks == ((0, 1), (3, 4), ())
    assert b.small_blocks == (2, 5)
    assert b.q == 0
    assert b.nonempty_blocks == [0, 1]


def test_block_length_out_of_range():
    with pytest.raises(ValueError):
        _blocks(5, 1)
    with pytest.raises(ValueError):
        _blocks(5, 6)


@given(st.integers(2, 40), st.data(), st.sampled_from(["open", "periodic"]))
def test_blocks_partition_terms(n, data, boundary):
    k = data.draw(st.integers(2, n))
    b = _blocks(n, k, "all-plus", boundary)
    terms = [t for blk in b.big_blocks for t in blk] + list(b.small_blocks)
    assert sorted(terms) == list(range(n))
    assert b.q == n - k * (n // k)
    for blk in b.big_blocks[:-1]:
        assert len(blk) == k - 1
    # distinct large blocks act on disjoint sites
    for i, j in itertools.combinations(b.nonempty_blocks, 2):
        assert not set(b.block_support(i)) & set(b.block_support(j))


def test_periodic_tail_joins_small_blocks():
    b = _blocks(7, 3, boundary="periodic")
    assert b.meta["periodic_tail_moved"]
    assert b.big_blocks[-1] == ()
    assert 6 in b.small_blocks


# truncation bound


def test_truncation_bound_examples():
    assert truncation_error_bound(16, 8, 1.0, 1.0, 0.0) == 0.0
    assert truncation_error_bound(16, 8, 1.0, 1.0, 1.0) == pytest.approx(1.0)
    assert truncation_error_bound(16, 8, 1.0, 1.0, -2.0) == pytest.approx(2.0)


def test_truncation_bound_decays_like_quarter_power():
    # at n = m^4 the bound with k = n^(3/4) is exactly 2 C' |r| / (sqrt(C) m)
    values = [truncation_error_bound(m**4, default_k(m**4), 1.0, 1.0, 1.0) for m in range(2, 12)]
    np.testing.assert_allclose(values, [2 / m for m in range(2, 12)], rtol=1e-12)
    assert np.all(np.diff(values) < 0)


@pytest.mark.parametrize("n", [4, 6, 8])
@pytest.mark.parametrize("state,seed", [("all-up", 0), ("random", 5)])
def test_truncation_residual_within_bound(n, state, seed):
    b = _blocks(n, default_k(n), state, seed=seed)
    rs = np.linspace(-3, 3, 25)
    res = truncation_residuals(b, rs)
    bound = np.array([truncation_error_bound(n, b.k, b.stats.c_estimate, b.stats.cprime, r) for r in rs])
    assert np.all(res <= bound + 1e-12)


# factorization


@pytest.mark.parametrize("powers", list(itertools.product(range(1, 5), repeat=2)))
def test_factorization_eight_sites(powers):
    b = _blocks(8, 4, "random", seed=3)
    report = check_factorization(b, powers)
    assert report.n_pairs == 2
    assert report.max_residual < 1e-10
    assert report.max_commutator < 1e-10


def test_first_moments_vanish():
    b = _blocks(8, 4, "random", seed=4)
    for j in b.nonempty_blocks:
        assert abs(b.block_moment(j, 1)) < 1e-12
    assert check_factorization(b, (1, 1)).max_residual < 1e-12


def test_adjacent_terms_do_not_factorize():
    # neighbouring X operators share a site, which is why small blocks separate the large ones
    spec = build_ising(4, 1.0, 1.0)
    H = assemble(spec)
    worst = 0.0
    for seed in range(20):
        state = random_product_state(spec, seed)
        stats = energy_stats(spec, state, H=H)
        vec = state.vector
        x1 = H.apply_term(1, vec) - stats.term_means[1] * vec
        x2 = H.apply_term(2, vec) - stats.term_means[2] * vec
        worst = max(worst, abs(np.vdot(x1, x2)))
    assert worst >= 1e-6


def test_charfn_factorization_eight_sites():
    b = _blocks(8, 4, "random", seed=6)
    assert char_fn_factorization_check(b, np.arange(-3, 3.001, 0.25)) < 1e-8
    assert char_fn_factorization_check(b, [0.0]) < 1e-14


def test_noninteracting_charfn_factorizes_site_by_site():
    spec = build_ising(6, 1.3, 0.0)
    state = random_product_state(spec, 9)
    H = assemble(spec)
    stats = energy_stats(spec, state, H=H)
    rs = np.linspace(-3, 3, 13)
    full = char_fn_values(H, state, stats, rs)
    product = np.ones_like(rs, dtype=complex)
    for mu in range(6):
        a = state.locals[mu]
        w, u = np.linalg.eigh(spec.site_terms[mu] - stats.term_means[mu] * np.eye(2))
        weights = np.abs(u.conj().T @ a) ** 2
        product *= np.exp(-1j * np.outer(rs, w) / stats.sigma) @ weights
    assert np.max(np.abs(full - product)) < 1e-10


@given(seeds, st.integers(2, 7), st.data())
def test_cluster_fourth_moment_matches_dense(seed, n, data):
    spec = random_spec(seed, n, max_dim=2)
    k = data.draw(st.integers(2, n))
    b = block_decompose(spec, random_product_state(spec, seed), k)
    for j in b.nonempty_blocks:
        dense = b.block_moment(j, 4)
        assert b.block_fourth_moment_clusters(j) == pytest.approx(dense, rel=1e-10, abs=1e-10)
        assert b.block_variance_clusters(j) == pytest.approx(b.block_moment(j, 2), rel=1e-10, abs=1e-12)


def test_standardized_prime_second_moment_tends_to_one():
    values = []
    for n in (8, 16, 32, 64, 128, 256):
        b = _blocks(n, default_k(n))
        values.append(sum(b.block_variance_clusters(j) for j in b.nonempty_blocks) / b.stats.variance)
    assert np.all(np.diff(values) > 0)
    assert abs(values[-1] - 1) < 0.02


# Lyapunov sum


def test_lyapunov_order_must_be_two():
    with pytest.raises(ValueError):
        lyapunov_sum(_blocks(6, 3), m=4)


def test_lyapunov_bound_formula():
    assert lyapunov_closed_form_bound(16, 8, 1.0, 0.5) == pytest.approx(3 * (49 + 630 * 7) / 256)


@pytest.mark.parametrize(
    "n,state,boundary", [(4, "all-up", "open"), (6, "random", "open"), (9, "all-plus", "periodic"), (12, "random", "open")]
)
def test_lyapunov_within_bound(n, state, boundary):
    result = lyapunov_sum(_blocks(n, default_k(n), state, boundary, seed=2))
    assert 0 < result.value <= result.bound
    assert result.within_bound


def _binomial_fourth(L):
    # E[(sum of L independent +-1)^4] by direct enumeration of the binomial law
    return sum(math.comb(L, m) * (2 * m - L) ** 4 for m in range(L + 1)) / 2**L


@pytest.mark.parametrize("n,k", [(6, 2), (9, 3), (12, 5), (16, 8), (20, 6)])
def test_lyapunov_noninteracting_binomial(n, k):
    spec = build_ising(n, 1.0, 0.0)
    state = product_state([[1, 1]] * n, spec)
    b = block_decompose(spec, state, k)
    assert b.stats.variance == pytest.approx(n)
    lengths = [len(blk) for blk in b.big_blocks]
    expected = sum(_binomial_fourth(L) for L in lengths) / n**2
    assert abs(lyapunov_sum(b).value - expected) < 1e-10
    assert all(_binomial_fourth(L) == 3 * L**2 - 2 * L for L in lengths)


@pytest.mark.parametrize("small,large", [(6, 12), (8, 16), (12, 24)])
def test_lyapunov_sum_drops_when_chain_doubles(small, large):
    values = [lyapunov_sum(_blocks(n, default_k(n))).value for n in (small, large)]
    assert values[1] < values[0]


# Gaussian comparison


def test_normal_self_comparison():
    z = np.linspace(-12, 12, 48001)
    density = np.exp(-(z**2) / 2) / np.sqrt(2 * np.pi)
    report = gaussian_comparison(SpectralMeasure("kpm", z, density))
    assert report.ks_distance < 1e-6
    assert report.charfn_dev < 1e-6
    assert report.l1_density_dev < 1e-6
    assert report.moment_devs[3] < 1e-6


def test_two_point_ks_distance():
    measure = SpectralMeasure("exact", np.array([-1.0, 1.0]), np.array([0.5, 0.5]))
    report = gaussian_comparison(measure)
    assert report.ks_distance == pytest.approx(gaussian_cdf(1.0) - 0.5, abs=1e-12)
    assert report.ks_distance == pytest.approx(0.3413447460685429, abs=1e-12)
    assert report.moment_devs == pytest.approx((0, 0, 0, 2))


def test_gaussian_cdf_accuracy():
    from scipy.stats import norm

    z = np.linspace(-8, 8, 161)
    assert np.max(np.abs(gaussian_cdf(z) - norm.cdf(z))) < 1e-12


def test_comparison_requires_standardized_input(ising):
    case = ising(6)
    with pytest.raises(ValueError, match="not standardized"):
        gaussian_comparison(spectral_measure_exact(case.H, case.state))


@given(seeds, st.integers(2, 6))
def test_report_ranges(seed, n):
    spec = build_ising(n, 1.0, 1.0)
    state = random_product_state(spec, seed)
    H = assemble(spec)
    z = standardize(spectral_measure_exact(H, state), energy_stats(spec, state, H=H))
    report = gaussian_comparison(z, n=n)
    assert 0 <= report.ks_distance <= 1
    assert all(d >= 0 for d in report.moment_devs)
    assert report.charfn_dev >= 0


def test_ks_uses_both_sides_of_jumps():
    # the sup sits at the left limit of the atom at +1; a grid cannot exceed it
    measure = SpectralMeasure("exact", np.array([-1.0, 1.0]), np.array([0.5, 0.5]))
    report = gaussian_comparison(measure)
    grid = np.linspace(-3, 3, 6001)
    grid_ks = np.max(np.abs(cdf(measure, grid) - gaussian_cdf(grid)))
    assert report.ks_distance >= grid_ks
    assert report.ks_distance == pytest.approx(abs(0.5 - gaussian_cdf(1.0)), abs=1e-12)


# sweeps


def _family(n):
    return build_ising(n, 1.0, 1.0)


def _all_up(spec):
    return named_state(spec, "all-up")


def test_sweep_single_n_matches_direct_calls():
    (row,) = convergence_sweep(_family, _all_up, [6])
    spec = _family(6)
    state = _all_up(spec)
    H = assemble(spec)
    stats = energy_stats(spec, state, H=H)
    report = gaussian_comparison(standardize(spectral_measure_exact(H, state), stats))
    lyap = lyapunov_sum(block_decompose(spec, state, 3, stats=stats))
    assert row["ks"] == report.ks_distance
    assert row["charfn_dev"] == report.charfn_dev
    assert row["lyapunov_sum"] == lyap.value
    assert row["sigma2"] == stats.variance
    assert set(row) == set(SWEEP_COLUMNS)


def test_sweep_rejects_empty_list():
    with pytest.raises(ValueError, match="empty"):
        convergence_sweep(_family, _all_up, [])


def test_sweep_files_are_reproducible(tmp_path):
    a = convergence_sweep(_family, _all_up, [4, 6], output=tmp_path / "a")
    b = convergence_sweep(_family, _all_up, [4, 6], output=tmp_path / "b")
    assert sweep_csv(a) == sweep_csv(b)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header.split(",") == list(SWEEP_COLUMNS)


def test_sweep_records_kpm_fallback(tmp_path):
    rows = convergence_sweep(_family, _all_up, [6], output=tmp_path / "s", dense_threshold=16, kpm_moments=256)
    import json

    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["per_row"][0]["method"] == "kpm"
    assert rows[0]["ks"] > 0


def test_sweep_parallel_rows_match_serial(monkeypatch):
    serial = convergence_sweep(_family, _all_up, [4, 5, 6])
    monkeypatch.setenv("QCLT_THREADS", "3")
    parallel = convergence_sweep(_family, _all_up, [4, 5, 6])
    assert sweep_csv(serial) == sweep_csv(parallel)


@pytest.mark.slow
def test_sweep_ks_monotone_on_reference_family():
    rows = convergence_sweep(_family, _all_up, [4, 6, 8, 10, 12])
    assert len(rows) == 5
    ks = [r["ks"] for r in rows]
    assert np.all(np.diff(ks) < 0)
