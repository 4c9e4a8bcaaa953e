import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locstat.errors import (
    ConfigurationError,
    ContractViolation,
    DimensionError,
    PartitionError,
    ResolutionError,
)
from locstat.model import (
    CubeSpec,
    DisorderSpec,
    OperatorMatrix,
    RandomModel,
    as_operator,
    build_continuum_hamiltonian,
    build_lattice_hamiltonian,
    build_subcube_hamiltonians,
    bump_weights,
    partition_subcubes,
    sample_potential,
    subcube_side,
)
from locstat.spectral import dense_spectrum


# ---------------------------------------------------------------- cubes

def test_lattice_cube_coordinates():
    cube = CubeSpec.lattice(1, 2)
    assert cube.side == 4
    assert cube.coordinates().ravel().tolist() == [-1, 0, 1, 2]
    assert cube.site_index(2) == 3


def test_lattice_cube_2d_enumeration_is_c_order():
    cube = CubeSpec.lattice(2, 1)
    assert cube.coordinates().tolist() == [[0, 0], [0, 1], [1, 0], [1, 1]]
    with pytest.raises(DimensionError):
        cube.site_index((2, 0))


@pytest.mark.parametrize("kw", [dict(d=4, side=2), dict(d=1, side=0), dict(d=1, side=2.5)])
def test_bad_cube(kw):
    with pytest.raises(ConfigurationError):
        CubeSpec(**kw)


def test_continuum_cube_grid():
    cube = CubeSpec.continuum(1, 4.0, 0.5)
    assert cube.n_sites == 8
    assert cube.volume == 4.0
    np.testing.assert_allclose(cube.coordinates().ravel(), -2 + 0.25 + 0.5 * np.arange(8))
    assert cube.integer_points().ravel().tolist() == [-1, 0, 1, 2]
    with pytest.raises(ConfigurationError):
        CubeSpec.continuum(1, 4.0, 0.3)


# ---------------------------------------------------------------- disorder

def test_uniform_samples_in_support():
    cube = CubeSpec.lattice_side(1, 1000)
    for seed in range(5):
        v = sample_potential(DisorderSpec(W=4.0), cube, seed)
        assert v.min() >= -2 and v.max() <= 2


def test_same_seed_same_sequence():
    cube = CubeSpec.lattice_side(2, 10)
    a = sample_potential(DisorderSpec(W=4.0), cube, 123)
    b = sample_potential(DisorderSpec(W=4.0), cube, 123)
    assert np.array_equal(a, b)


def test_uniform_sample_mean_clt():
    cube = CubeSpec.lattice_side(1, 100_000)
    v = sample_potential(DisorderSpec(W=4.0), cube, 7)
    assert abs(v.mean()) <= 3 * (4.0 / np.sqrt(12)) / np.sqrt(1e5)


def test_frozen_potential_values():
    v = sample_potential(DisorderSpec(W=4.0), CubeSpec.lattice_side(1, 3), 0)
    np.testing.assert_allclose(v, [0.54784675, -0.92085314, -1.8361059], atol=1e-7)


def test_density_family():
    spec = DisorderSpec(family="density", density=lambda x: 2 * x, support=(0.0, 1.0))
    v = spec.sample(np.random.default_rng(0), 20000)
    assert v.min() >= 0 and v.max() <= 1
    assert abs(v.mean() - 2 / 3) < 0.01
    with pytest.raises(ConfigurationError):
        DisorderSpec(family="density", density=lambda x: x, support=(0.0, 1.0))


def test_negative_disorder_rejected():
    with pytest.raises(ConfigurationError):
        DisorderSpec(W=-1.0)
    with pytest.raises(ConfigurationError):
        DisorderSpec(family="cauchy")


def test_disorder_free_allowed():
    v = sample_potential(DisorderSpec(W=0.0), CubeSpec.lattice_side(1, 5), 1)
    assert np.all(v == 0)


# ---------------------------------------------------------------- lattice operators

def test_two_site_zero_potential():
    H = build_lattice_hamiltonian(CubeSpec.lattice(1, 1), [0.0, 0.0])
    assert H.toarray().tolist() == [[0, 1], [1, 0]]


def test_two_site_potential():
    H = build_lattice_hamiltonian(CubeSpec.lattice(1, 1), [5.0, -3.0])
    assert H.toarray().tolist() == [[5, 1], [1, -3]]


def test_2x2_grid_adjacency():
    H = build_lattice_hamiltonian(CubeSpec.lattice(2, 1), np.zeros(4))
    a = H.toarray()
    assert a.shape == (4, 4)
    assert a.sum(axis=1).tolist() == [2, 2, 2, 2]
    assert np.array_equal(a, a.T)


def test_potential_length_checked():
    with pytest.raises(DimensionError):
        build_lattice_hamiltonian(CubeSpec.lattice(1, 2), np.zeros(3))


def test_3d_bandwidth():
    H = build_lattice_hamiltonian(CubeSpec.lattice_side(3, 4), np.zeros(64))
    assert H.bandwidth == 16
    assert np.all(H.toarray().sum(axis=1) >= 3)


def test_operator_is_read_only():
    H = build_lattice_hamiltonian(CubeSpec.lattice(1, 2), np.zeros(4))
    with pytest.raises(ValueError):
        H.diag[0] = 1.0


def test_as_operator_symmetry_contract():
    with pytest.raises(ContractViolation):
        as_operator(np.array([[0.0, 1.0], [0.5, 0.0]]))
    with pytest.raises(DimensionError):
        as_operator(np.zeros((2, 3)))
    assert as_operator(np.diag([1.0, 2.0])).is_tridiagonal


def test_gershgorin():
    H = build_lattice_hamiltonian(CubeSpec.lattice(1, 2), [1.0, 0.0, 0.0, -1.0])
    assert H.gershgorin() == (-2.0, 2.0)


# ---------------------------------------------------------------- partitions

def test_forced_ell_partition_1d():
    subs, n_L = partition_subcubes(CubeSpec.lattice_side(1, 16), ell=4)
    assert n_L == 4
    sites = np.concatenate([s.coordinates().ravel() for s in subs])
    assert sorted(sites.tolist()) == CubeSpec.lattice_side(1, 16).coordinates().ravel().tolist()


def test_forced_ell_partition_2d():
    _, n_L = partition_subcubes(CubeSpec.lattice_side(2, 16), ell=4)
    assert n_L == 16


def test_beta_partition_adjusts_to_divisor():
    part = partition_subcubes(CubeSpec.lattice_side(1, 16), beta=0.7)
    assert (part.ell_requested, part.ell, part.n_L) == (7, 4, 4)


@pytest.mark.parametrize("side,expected", [(512, 64), (1024, 128), (2048, 128), (2000, 200)])
def test_subcube_side_ladder(side, expected):
    assert subcube_side(side, 0.7)[1] == expected


def test_partition_errors():
    with pytest.raises(PartitionError):
        subcube_side(16, ell=5)
    with pytest.raises(PartitionError):
        subcube_side(7, 0.5)  # prime side: no divisor in [2, 3]
    with pytest.raises(ConfigurationError):
        subcube_side(16, 1.0)


@settings(max_examples=40, deadline=None)
@given(side=st.integers(4, 400), beta=st.floats(0.3, 0.95))
def test_partition_tiles_cube(side, beta):
    try:
        part = partition_subcubes(CubeSpec.lattice_side(1, side), beta)
    except PartitionError:
        return
    assert part.ell * part.n_L == side
    assert 2 <= part.ell <= part.ell_requested
    coords = np.concatenate([s.coordinates().ravel() for s in part.subcubes])
    assert len(set(coords.tolist())) == side


# ---------------------------------------------------------------- sub-cube operators

def test_subcube_diagonals_concatenate():
    cube = CubeSpec.lattice_side(1, 16)
    pot = sample_potential(DisorderSpec(), cube, 5)
    hams = build_subcube_hamiltonians(cube, 0.7, pot, ell=4)
    assert np.array_equal(np.concatenate([H.diag for H in hams]), pot)
    assert all(H.n == 4 for H in hams)


def test_single_subcube_is_global():
    cube = CubeSpec.lattice_side(2, 6)
    pot = sample_potential(DisorderSpec(), cube, 3)
    (H1,) = build_subcube_hamiltonians(cube, 0.7, pot, ell=6)
    assert np.array_equal(H1.toarray(), build_lattice_hamiltonian(cube, pot).toarray())


def test_subcube_locality():
    cube = CubeSpec.lattice_side(2, 8)
    pot = sample_potential(DisorderSpec(), cube, 3)
    before = build_subcube_hamiltonians(cube, 0.7, pot, ell=4)
    pot2 = pot.copy()
    pot2[before[1].sites[0]] += 1.0
    after = build_subcube_hamiltonians(cube, 0.7, pot2, ell=4)
    for p, (a, b) in enumerate(zip(before, after)):
        same = np.array_equal(a.toarray(), b.toarray())
        assert same == (p != 1)


# ---------------------------------------------------------------- continuum operators

def test_continuum_free_spectrum():
    cube = CubeSpec.continuum(1, 4.0, 0.1)
    H = build_continuum_hamiltonian(cube, np.zeros(cube.n_potential))
    N, h = cube.n_sites, 0.1
    j = np.arange(1, N + 1)
    exact = 4 / h ** 2 * np.sin(j * np.pi / (2 * (N + 1))) ** 2
    np.testing.assert_allclose(dense_spectrum(H), exact, atol=1e-10)


def test_indicator_constant_shift():
    cube = CubeSpec.continuum(2, 4.0, 0.25)
    H0 = build_continuum_hamiltonian(cube, np.zeros(cube.n_potential))
    H1 = build_continuum_hamiltonian(cube, np.full(cube.n_potential, 0.75))
    np.testing.assert_allclose(dense_spectrum(H1), dense_spectrum(H0) + 0.75, atol=1e-10)
    assert np.array_equal(H1.toarray() - H0.toarray(), 0.75 * np.eye(H0.n))


def test_indicator_bumps_partition_grid():
    cube = CubeSpec.continuum(2, 4.0, 0.5)
    U = bump_weights(cube, "indicator")
    assert np.array_equal(U.sum(axis=1), np.ones(cube.n_sites))
    assert np.array_equal(U.sum(axis=0), np.full(cube.n_potential, 4.0))


def test_indicator_must_cover_box():
    # (-1.5, 1.5] is not a union of unit cells (n - 1, n]
    cube = CubeSpec.continuum(1, 3.0, 0.25)
    with pytest.raises(ConfigurationError):
        build_continuum_hamiltonian(cube, np.zeros(cube.n_potential))


def test_tent_bumps_cover():
    cube = CubeSpec.continuum(1, 6.0, 0.25)
    U = bump_weights(cube, "tent")
    cover = U.sum(axis=1)
    assert cover.min() > 0 and cover.max() <= 1 + 1e-12


def test_continuum_structure_and_errors():
    cube = CubeSpec.continuum(2, 2.0, 0.5)
    H = build_continuum_hamiltonian(cube, np.zeros(cube.n_potential))
    a = H.toarray()
    assert np.array_equal(a, a.T)
    assert H.bandwidth == cube.points_per_axis
    with pytest.raises(ResolutionError):
        build_continuum_hamiltonian(CubeSpec.continuum(1, 4.0, 1.0), np.zeros(4))
    with pytest.raises(ConfigurationError):
        bump_weights(cube, "gaussian")
    with pytest.raises(DimensionError):
        build_continuum_hamiltonian(cube, np.zeros(3))


def test_random_model_bounds_contain_spectrum():
    for cube in (CubeSpec.lattice_side(2, 6), CubeSpec.continuum(1, 8.0, 0.2)):
        model = RandomModel(cube, DisorderSpec(W=6.0))
        lo, hi = model.spectral_bounds()
        ev = dense_spectrum(model.realize(11))
        assert lo <= ev[0] and ev[-1] <= hi


def test_operator_matrix_validates_lengths():
    with pytest.raises(DimensionError):
        OperatorMatrix([1.0, 2.0], [1.0, 1.0])
