import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locstat.errors import ConfigurationError, EmptyEnsembleError, IntervalError, OracleSizeError
from locstat.model import (
    CubeSpec,
    DisorderSpec,
    OperatorMatrix,
    RandomModel,
    build_lattice_hamiltonian,
    sample_potential,
)
from locstat.spectral import (
    _sturm_loops,
    _sturm_numpy,
    count_in,
    count_leq,
    count_leq_many,
    dense_spectrum,
    eigenvalues_in,
    fractional_moment_estimate,
    green_column,
    green_entry,
    sturm_counts,
)


def anderson(d, side, seed, W=4.0):
    cube = CubeSpec.lattice_side(d, side)
    return build_lattice_hamiltonian(cube, sample_potential(DisorderSpec(W=W), cube, seed))


def path(n):
    return build_lattice_hamiltonian(CubeSpec.lattice_side(1, n), np.zeros(n))


# ---------------------------------------------------------------- counting

def test_count_leq_diagonal():
    assert count_leq(np.diag([-1.0, 0.0, 1.0]), 0.0) == 2


def test_count_leq_two_site():
    assert count_leq(np.array([[0.0, 1.0], [1.0, 0.0]]), 0.0) == 1


def test_count_leq_exact_at_eigenvalue_dense():
    # banded path: eigenvalue exactly at the shift is counted
    H = build_lattice_hamiltonian(CubeSpec.lattice_side(2, 3), np.zeros(9))
    ev = dense_spectrum(H)
    assert count_leq(H, 0.0) == int(np.sum(ev <= 1e-12))


def test_count_leq_random_dense_oracle():
    rng = np.random.default_rng(0)
    mismatches = 0
    for _ in range(100):
        a = rng.normal(size=(50, 50))
        a = a + a.T
        ev = dense_spectrum(a)
        shifts = rng.uniform(ev[0] - 1, ev[-1] + 1, 100)
        got = count_leq_many([a], shifts)[0]
        mismatches += int(np.sum(got != np.searchsorted(ev, shifts, side="right")))
    assert mismatches == 0


def test_count_in_examples():
    H = np.diag([1.0, 2.0, 3.0])
    assert count_in(H, 1.5, 2.5) == 1
    assert count_in(H, 2.0, 2.0) == 0
    with pytest.raises(IntervalError):
        count_in(H, 3.0, 1.0)


def test_count_in_anderson_oracle():
    H = anderson(1, 200, 42)
    ev = dense_spectrum(H)
    rng = np.random.default_rng(1)
    for _ in range(50):
        a, b = np.sort(rng.uniform(-4, 4, 2))
        assert count_in(H, a, b) == int(np.sum((ev > a) & (ev <= b)))


def test_sturm_kernel_matches_numpy():
    rng = np.random.default_rng(3)
    diag = rng.uniform(-2, 2, (4, 60))
    off_sq = np.ones((4, 59))
    shifts = np.ascontiguousarray(rng.uniform(-3, 3, (4, 25)))
    c1 = np.zeros((4, 25), dtype=np.int64)
    c2 = np.zeros((4, 25), dtype=np.int64)
    d_t = np.ascontiguousarray(diag.T)
    o_t = np.ascontiguousarray(off_sq.T)
    _sturm_numpy(d_t, o_t, shifts, 1e-300, c1)
    _sturm_loops(d_t, o_t, shifts, 1e-300, c2)
    assert np.array_equal(c1, c2)
    assert np.array_equal(sturm_counts(diag, off_sq, shifts), c1)


def test_sturm_zero_pivot_path():
    # shift equal to a diagonal entry with zero coupling hits an exact zero pivot
    H = OperatorMatrix([0.0, 1.0, 2.0], [0.0, 0.0])
    assert [count_leq(H, a) for a in (0.0, 1.0, 2.0, -0.5)] == [1, 2, 3, 0]


def test_singular_shift_logged(caplog):
    H = build_lattice_hamiltonian(CubeSpec.lattice_side(2, 2), np.zeros(4))  # eigenvalues -2, 0, 0, 2
    with caplog.at_level(logging.WARNING, logger="locstat.spectral"):
        assert count_leq(H, 0.0) == 3
    assert any("singular pivot" in r.message for r in caplog.records)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 40), seed=st.integers(0, 2 ** 32 - 1), a=st.floats(-7, 7),
       width=st.floats(0, 6))
def test_counts_monotone_and_additive(n, seed, a, width):
    H = anderson(1, n, seed, W=6.0)
    b, c = a + width, a + 2 * width
    assert count_in(H, a, c) == count_in(H, a, b) + count_in(H, b, c)
    assert count_leq(H, a) <= count_leq(H, b) <= H.n


# ---------------------------------------------------------------- bisection and oracle

def test_eigenvalues_in_examples():
    np.testing.assert_allclose(eigenvalues_in(np.diag([1.0, 2.0, 3.0]), 1.5, 2.5, 1e-10), [2.0],
                               atol=1e-10)
    np.testing.assert_allclose(eigenvalues_in(np.array([[0.0, 1.0], [1.0, 0.0]]), -2, 2, 1e-10),
                               [-1.0, 1.0], atol=1e-10)
    with pytest.raises(ConfigurationError):
        eigenvalues_in(np.eye(2), 0, 2, -1.0)


def test_eigenvalues_in_anderson_oracle():
    H = anderson(1, 100, 9)
    np.testing.assert_allclose(eigenvalues_in(H, -4.5, 4.5), dense_spectrum(H), atol=1e-9)


def test_eigenvalues_in_2d_oracle():
    H = anderson(2, 9, 4)
    np.testing.assert_allclose(eigenvalues_in(H, -6.5, 6.5), dense_spectrum(H), atol=1e-9)


def test_dense_spectrum_examples():
    np.testing.assert_array_equal(dense_spectrum(np.eye(5)), np.ones(5))
    np.testing.assert_allclose(dense_spectrum(np.array([[0.0, 1.0], [1.0, 0.0]])), [-1, 1])


@pytest.mark.parametrize("n", [2, 3, 17, 64, 100])
def test_path_spectrum(n):
    j = np.arange(1, n + 1)
    exact = np.sort(2 * np.cos(j * np.pi / (n + 1)))
    np.testing.assert_allclose(dense_spectrum(path(n)), exact, atol=1e-9)
    np.testing.assert_allclose(eigenvalues_in(path(n), -2.5, 2.5), exact, atol=1e-9)


def test_oracle_cap():
    with pytest.raises(OracleSizeError):
        dense_spectrum(path(30), cap=20)


# ---------------------------------------------------------------- resolvent

def test_green_one_by_one():
    assert green_entry(np.array([[0.0]]), 0, 0, 0.0, 1.0) == pytest.approx(1j)


def test_green_symmetry_and_residual():
    for H in (anderson(1, 60, 2), anderson(2, 7, 2)):
        rng = np.random.default_rng(0)
        for _ in range(5):
            x, y = rng.integers(0, H.n, 2)
            E = rng.uniform(-2, 2)
            assert abs(green_entry(H, x, y, E, 1e-2) - green_entry(H, y, x, E, 1e-2)) <= 1e-10
            g = green_column(H, int(y), E, 1e-2)
            rhs = np.zeros(H.n)
            rhs[y] = 1
            assert np.linalg.norm(H.toarray() @ g - complex(E, 1e-2) * g - rhs) <= 1e-10


def test_green_rejects_nonpositive_eps():
    with pytest.raises(ConfigurationError):
        green_entry(np.eye(2), 0, 0, 0.0, 0.0)


# ---------------------------------------------------------------- fractional moments

def test_fractional_moment_bounds():
    model = RandomModel(CubeSpec.lattice_side(1, 40), DisorderSpec(W=4.0))
    fm = fractional_moment_estimate(model, 0, [1, 3, 6], 0.0, 0.1, 0.5, 20, seed=1)
    assert np.all(fm.mean <= 0.1 ** -0.5)
    assert fm.probe == "entry"
    zero = fractional_moment_estimate(model, 0, [1, 3], 0.0, 0.1, 0.0, 5)
    np.testing.assert_array_equal(zero.mean, [1.0, 1.0])


def test_fractional_moment_frozen():
    model = RandomModel(CubeSpec.lattice_side(1, 64), DisorderSpec(W=4.0))
    fm = fractional_moment_estimate(model, 0, range(2, 20, 4), 0.0, 1e-3, 0.5, 30, seed=0)
    assert fm.slope < 0
    np.testing.assert_allclose(fm.mean[0], FROZEN_FM_MEAN0, rtol=1e-9)


def test_fractional_moment_continuum_proxy():
    model = RandomModel(CubeSpec.continuum(1, 8.0, 0.25), DisorderSpec(W=4.0))
    fm = fractional_moment_estimate(model, (0,), [(2,), (3,)], 0.5, 1e-2, 0.5, 3)
    assert fm.probe == "max-entry"
    assert np.all(fm.mean <= 1e-2 ** -0.5)


def test_fractional_moment_errors():
    model = RandomModel(CubeSpec.lattice_side(1, 8), DisorderSpec())
    with pytest.raises(ConfigurationError):
        fractional_moment_estimate(model, 0, [1], 0.0, 0.1, 1.0, 3)
    with pytest.raises(EmptyEnsembleError):
        fractional_moment_estimate(model, 0, [1], 0.0, 0.1, 0.5, 0)


FROZEN_FM_MEAN0 = 0.8251300587301654
