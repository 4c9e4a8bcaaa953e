"""Finite-volume random operators: cubes, disorder laws and Hamiltonian assembly.

Two flavors are supported.

* ``lattice``: the Anderson model ``h = Delta + V`` on a cube of Z^d, restricted
  by plain truncation (no wraparound). Off-diagonal entries are +1 on
  nearest-neighbour pairs.
* ``continuum``: ``-Laplacian + sum_n omega_n u(x - n)`` on a box of R^d,
  discretized by second-order finite differences with Dirichlet boundary.

Sites and grid points are enumerated lexicographically (C order, first
coordinate slowest), so every matrix is bit-reproducible from its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.integrate
import scipy.linalg
import scipy.sparse as sp

from .errors import (
    ConfigurationError,
    ContractViolation,
    DimensionError,
    PartitionError,
    ResolutionError,
)

LATTICE = "lattice"
CONTINUUM = "continuum"


@dataclass(frozen=True)
class CubeSpec:
    """Axis-aligned cube.

    Lattice cubes hold the sites ``origin + {0, ..., side-1}^d``; the cube of
    half-side L around 0 (coordinates in ``{-L+1, ..., L}``) is ``CubeSpec.lattice(d, L)``.
    Continuum cubes are the box ``(origin, origin + side]^d`` sampled on a
    cell-centred grid of spacing ``h``.
    """

    d: int
    side: float
    flavor: str = LATTICE
    origin: tuple = None
    h: float | None = None

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ConfigurationError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.flavor not in (LATTICE, CONTINUUM):
            raise ConfigurationError(f"unknown cube flavor {self.flavor!r}")
        if self.side < 1:
            raise ConfigurationError(f"cube side must be >= 1, got {self.side}")
        if self.flavor == LATTICE:
            if int(self.side) != self.side:
                raise ConfigurationError("lattice cube side must be an integer")
            object.__setattr__(self, "side", int(self.side))
            origin = self.origin if self.origin is not None else (0,) * self.d
            origin = tuple(int(o) for o in origin)
        else:
            if self.h is None or self.h <= 0:
                raise ConfigurationError("continuum cube needs a grid spacing h > 0")
            ratio = self.side / self.h
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
                raise ConfigurationError(
                    f"side/h must be a positive integer, got {self.side}/{self.h}"
                )
            origin = self.origin if self.origin is not None else (-self.side / 2,) * self.d
            origin = tuple(float(o) for o in origin)
        if len(origin) != self.d:
            raise ConfigurationError("origin length must equal the dimension")
        object.__setattr__(self, "origin", origin)

    @classmethod
    def lattice(cls, d: int, L: int, center: Sequence[int] | None = None) -> "CubeSpec":
        """Cube ``Lambda_L(n)``: coordinates ``n_j + {-L+1, ..., L}``, (2L)^d sites."""
        if L < 1:
            raise ConfigurationError(f"half-side L must be >= 1, got {L}")
        center = tuple(center) if center is not None else (0,) * d
        return cls(d=d, side=2 * L, origin=tuple(c - L + 1 for c in center))

    @classmethod
    def lattice_side(cls, d: int, side: int) -> "CubeSpec":
        """Lattice cube with the given edge length, centred like ``Lambda_L(0)``."""
        return cls(d=d, side=side, origin=(-(side // 2) + 1,) * d)

    @classmethod
    def continuum(cls, d: int, L: float, h: float) -> "CubeSpec":
        """Box ``(-L/2, L/2]^d`` with grid spacing ``h``."""
        return cls(d=d, side=L, flavor=CONTINUUM, h=h)

    @property
    def points_per_axis(self) -> int:
        if self.flavor == LATTICE:
            return self.side
        return int(round(self.side / self.h))

    @property
    def n_sites(self) -> int:
        """Matrix dimension: (side)^d lattice sites or (L/h)^d grid points."""
        return self.points_per_axis ** self.d

    @property
    def volume(self) -> float:
        """Lattice site count or continuum box volume."""
        if self.flavor == LATTICE:
            return float(self.n_sites)
        return float(self.side) ** self.d

    def coordinates(self) -> np.ndarray:
        """Site coordinates, shape (N, d), in enumeration order."""
        m = self.points_per_axis
        idx = np.indices((m,) * self.d).reshape(self.d, -1).T
        if self.flavor == LATTICE:
            return idx + np.asarray(self.origin, dtype=np.int64)
        return np.asarray(self.origin) + (idx + 0.5) * self.h

    def site_index(self, coord: Sequence[int] | int) -> int:
        """Enumeration index of a lattice coordinate."""
        if self.flavor != LATTICE:
            raise ConfigurationError("site_index is defined for lattice cubes only")
        coord = np.atleast_1d(np.asarray(coord, dtype=np.int64))
        local = coord - np.asarray(self.origin)
        if coord.shape != (self.d,) or np.any(local < 0) or np.any(local >= self.side):
            raise DimensionError(f"coordinate {coord.tolist()} is outside the cube")
        return int(np.ravel_multi_index(tuple(local), (self.side,) * self.d))

    def integer_points(self) -> np.ndarray:
        """Integer points of the cube, shape (K, d) (the bump centres for a continuum box)."""
        if self.flavor == LATTICE:
            return self.coordinates()
        lo = [math.floor(o) + 1 for o in self.origin]
        hi = [math.floor(o + self.side) for o in self.origin]
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=1)

    @property
    def n_potential(self) -> int:
        """Number of i.i.d. disorder variables the cube carries."""
        if self.flavor == LATTICE:
            return self.n_sites
        return len(self.integer_points())


@dataclass(frozen=True)
class DisorderSpec:
    """Law of the i.i.d. single-site variables.

    ``family="uniform"`` is uniform on [-W/2, W/2]. ``family="density"`` takes a
    bounded density on ``support``; it is sampled by inverting its tabulated CDF.
    """

    family: str = "uniform"
    W: float = 4.0
    density: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    support: tuple[float, float] | None = None
    description: str = ""

    def __post_init__(self):
        if self.family == "uniform":
            # W = 0 is the disorder-free operator, kept as a reference case
            if not self.W >= 0:
                raise ConfigurationError(f"disorder strength must be >= 0, got {self.W}")
        elif self.family == "density":
            if self.density is None or self.support is None:
                raise ConfigurationError("density family needs a density and a support")
            lo, hi = self.support
            if not hi > lo:
                raise ConfigurationError("density support must be a nonempty interval")
            mass, _ = scipy.integrate.quad(self.density, lo, hi, limit=200)
            if abs(mass - 1.0) > 1e-6:
                raise ConfigurationError(f"density integrates to {mass!r}, not 1")
            object.__setattr__(self, "W", float(hi - lo))
        else:
            raise ConfigurationError(f"unsupported distribution family {self.family!r}")

    @property
    def bounds(self) -> tuple[float, float]:
        if self.family == "uniform":
            return (-self.W / 2, self.W / 2)
        return tuple(self.support)

    def to_dict(self) -> dict:
        return {"family": self.family, "W": self.W, "support": self.bounds,
                "description": self.description or self._describe()}

    def _describe(self):
        if self.family == "uniform":
            return f"uniform on [{-self.W / 2}, {self.W / 2}]"
        return "user-supplied density"

    @cached_property
    def _inverse_cdf(self):
        lo, hi = self.support
        x = np.linspace(lo, hi, 20001)
        pdf = np.asarray(self.density(x), dtype=float)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(x))])
        cdf /= cdf[-1]
        keep = np.concatenate([[True], np.diff(cdf) > 0])
        return cdf[keep], x[keep]

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.family == "uniform":
            return rng.uniform(-self.W / 2, self.W / 2, size=size)
        cdf, x = self._inverse_cdf
        return np.interp(rng.random(size), cdf, x)


class OperatorMatrix:
    """Immutable real symmetric matrix with tridiagonal or sparse storage.

    Standard basis vectors play the role of the delta functions at sites.
    ``sites`` holds the global enumeration indices of the rows when the matrix
    is a restriction of a larger cube (sub-cube operators).
    """

    def __init__(self, diag, off=None, sparse=None, *, flavor=LATTICE, cube=None,
                 spacing=None, sites=None):
        diag = np.array(diag, dtype=float)
        if off is None and sparse is None:
            off = np.zeros(max(len(diag) - 1, 0))
        if off is not None:
            off = np.array(off, dtype=float)
            if off.shape != (max(len(diag) - 1, 0),):
                raise DimensionError("off-diagonal length must be N - 1")
            off.flags.writeable = False
        diag.flags.writeable = False
        self.diag = diag
        self.off = off
        self._sparse = sparse
        self.flavor = flavor
        self.cube = cube
        self.spacing = spacing
        if sites is not None:
            sites = np.asarray(sites, dtype=np.int64)
            sites.flags.writeable = False
        self.sites = sites

    @classmethod
    def from_sparse(cls, m, **meta) -> "OperatorMatrix":
        m = sp.csr_array(m, dtype=float)
        asym = abs(m - m.T)
        if asym.nnz and asym.max() != 0:
            raise ContractViolation("matrix is not exactly symmetric")
        n = m.shape[0]
        rows, cols = m.nonzero()
        band = int(np.max(np.abs(rows - cols))) if len(rows) else 0
        if band <= 1:
            diag = m.diagonal()
            off = m.diagonal(1) if n > 1 else np.zeros(0)
            return cls(diag, off, **meta)
        m.sort_indices()
        return cls(m.diagonal(), None, m, **meta)

    @property
    def n(self) -> int:
        return len(self.diag)

    @property
    def is_tridiagonal(self) -> bool:
        return self.off is not None

    @cached_property
    def matrix(self) -> sp.csr_array:
        if self._sparse is not None:
            return self._sparse
        return sp.csr_array(sp.diags([self.off, self.diag, self.off], [-1, 0, 1],
                                     shape=(self.n, self.n)))

    @cached_property
    def bandwidth(self) -> int:
        if self.is_tridiagonal:
            return int(self.n > 1 and np.any(self.off != 0))
        rows, cols = self.matrix.nonzero()
        return int(np.max(np.abs(rows - cols))) if len(rows) else 0

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    @cached_property
    def norm_inf(self) -> float:
        """Max absolute row sum."""
        return float(np.max(np.asarray(abs(self.matrix).sum(axis=1)))) if self.n else 0.0

    @cached_property
    def tridiagonal_form(self) -> tuple[np.ndarray, np.ndarray]:
        """(diagonal, off-diagonal) of a tridiagonal matrix orthogonally similar to this one."""
        if self.is_tridiagonal:
            return self.diag, self.off
        t = scipy.linalg.hessenberg(self.toarray())
        return np.diag(t).copy(), np.diag(t, -1).copy()

    def gershgorin(self) -> tuple[float, float]:
        m = abs(self.matrix)
        radius = np.asarray(m.sum(axis=1)).ravel() - np.abs(self.diag)
        return float(np.min(self.diag - radius)), float(np.max(self.diag + radius))

    def __repr__(self):
        kind = "tridiagonal" if self.is_tridiagonal else f"banded(bw={self.bandwidth})"
        return f"OperatorMatrix(n={self.n}, {kind}, flavor={self.flavor!r})"


def as_operator(H) -> OperatorMatrix:
    """Coerce an OperatorMatrix, dense array or sparse matrix; symmetry is checked exactly."""
    if isinstance(H, OperatorMatrix):
        return H
    if sp.issparse(H):
        return OperatorMatrix.from_sparse(H)
    a = np.asarray(H, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise ContractViolation("matrix is not exactly symmetric")
    return OperatorMatrix.from_sparse(a)


def sample_potential(disorder: DisorderSpec, cube: CubeSpec, rng_seed: int) -> np.ndarray:
    """One i.i.d. draw per lattice site (lattice) or per integer point (continuum)."""
    if not isinstance(disorder, DisorderSpec):
        raise ConfigurationError("disorder must be a DisorderSpec")
    rng = np.random.default_rng(int(rng_seed))
    return disorder.sample(rng, cube.n_potential)


def _neighbor_pairs(shape: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (i, j), i < j, of grid neighbours in C-order enumeration."""
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    rows, cols = [], []
    for axis in range(len(shape)):
        lo = [slice(None)] * len(shape)
        hi = [slice(None)] * len(shape)
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        rows.append(idx[tuple(lo)].ravel())
        cols.append(idx[tuple(hi)].ravel())
    return np.concatenate(rows), np.concatenate(cols)


def _assemble(shape, diag, hop, **meta) -> OperatorMatrix:
    n = int(np.prod(shape))
    if len(shape) == 1:
        return OperatorMatrix(diag, np.full(max(n - 1, 0), hop), **meta)
    i, j = _neighbor_pairs(shape)
    vals = np.full(len(i), hop)
    m = sp.coo_array((np.concatenate([vals, vals, diag]),
                      (np.concatenate([i, j, np.arange(n)]), np.concatenate([j, i, np.arange(n)]))),
                     shape=(n, n))
    m = sp.csr_array(m)
    m.sort_indices()
    return OperatorMatrix(np.asarray(diag, dtype=float), None, m, **meta)


def build_lattice_hamiltonian(cube: CubeSpec, potential, sites=None) -> OperatorMatrix:
    """``chi_cube (Delta + V) chi_cube``: nearest-neighbour adjacency plus diagonal potential."""
    if cube.flavor != LATTICE:
        raise ConfigurationError("build_lattice_hamiltonian needs a lattice cube")
    potential = np.asarray(potential, dtype=float)
    if potential.shape != (cube.n_sites,):
        raise DimensionError(
            f"potential has {potential.size} values, cube has {cube.n_sites} sites")
    return _assemble((cube.side,) * cube.d, potential, 1.0, flavor=LATTICE, cube=cube,
                     sites=sites)


@dataclass(frozen=True)
class Partition:
    """Disjoint sub-cubes tiling a lattice cube."""

    subcubes: tuple[CubeSpec, ...]
    n_L: int
    ell_requested: int
    ell: int

    def __iter__(self):
        return iter((list(self.subcubes), self.n_L))


def _ceil_power(side: int, beta: float) -> int:
    value = side ** beta
    nearest = round(value)
    if abs(value - nearest) <= 1e-9 * value:
        return int(nearest)
    return math.ceil(value)


def subcube_side(side: int, beta: float = 0.7, ell: int | None = None) -> tuple[int, int]:
    """(requested, adjusted) sub-cube side: ceil(side**beta) lowered to a divisor of side."""
    if ell is not None:
        if ell < 1 or side % ell:
            raise PartitionError(f"forced sub-cube side {ell} does not divide {side}")
        return ell, ell
    if not 0 < beta < 1:
        raise ConfigurationError(f"beta must lie in (0, 1), got {beta}")
    requested = _ceil_power(side, beta)
    divisors = [q for q in range(2, min(requested, side) + 1) if side % q == 0]
    if not divisors:
        raise PartitionError(f"side {side} has no divisor in [2, {requested}]")
    return requested, divisors[-1]


def partition_subcubes(cube: CubeSpec, beta: float = 0.7, ell: int | None = None) -> Partition:
    """Tile the cube by translates of a cube of side ``ell``, in lexicographic block order."""
    if cube.flavor != LATTICE:
        raise ConfigurationError("sub-cube partitions are defined for lattice cubes only")
    requested, ell = subcube_side(cube.side, beta, ell)
    per_axis = cube.side // ell
    blocks = np.indices((per_axis,) * cube.d).reshape(cube.d, -1).T
    subcubes = tuple(
        CubeSpec(d=cube.d, side=ell, origin=tuple(int(o + b * ell) for o, b in zip(cube.origin, blk)))
        for blk in blocks
    )
    return Partition(subcubes, per_axis ** cube.d, requested, ell)


def subcube_sites(cube: CubeSpec, sub: CubeSpec) -> np.ndarray:
    """Global enumeration indices of the sites of ``sub`` inside ``cube``."""
    local = sub.coordinates() - np.asarray(cube.origin)
    if np.any(local < 0) or np.any(local >= cube.side):
        raise DimensionError("sub-cube is not contained in the cube")
    return np.ravel_multi_index(tuple(local.T), (cube.side,) * cube.d)


def build_subcube_hamiltonians(cube: CubeSpec, beta: float, potential,
                               ell: int | None = None) -> list[OperatorMatrix]:
    """Restrictions ``h_{p,L}`` of one shared potential to each sub-cube."""
    potential = np.asarray(potential, dtype=float)
    if potential.shape != (cube.n_sites,):
        raise DimensionError(
            f"potential has {potential.size} values, cube has {cube.n_sites} sites")
    part = partition_subcubes(cube, beta, ell)
    out = []
    for sub in part.subcubes:
        sites = subcube_sites(cube, sub)
        out.append(build_lattice_hamiltonian(sub, potential[sites], sites=sites))
    return out


BUMPS = ("indicator", "tent")


def bump_weights(cube: CubeSpec, bump: str = "indicator") -> sp.csr_array:
    """Matrix U with U[k, n] = u(x_k - n) over grid points x_k and integer points n.

    ``indicator`` is the unit cell (n - 1, n]^d, which tiles the half-open box
    exactly; ``tent`` is prod_j max(0, 1 - |x_j - n_j|).
    """
    x = cube.coordinates()
    centers = cube.integer_points()
    if bump == "indicator":
        cell = np.ceil(x - 1e-12).astype(np.int64)
        lo = centers.min(axis=0)
        shape = centers.max(axis=0) - lo + 1
        local = cell - lo
        inside = np.all((local >= 0) & (local < shape), axis=1)
        cols = np.ravel_multi_index(tuple(local[inside].T), tuple(shape))
        rows = np.nonzero(inside)[0]
        return sp.csr_array((np.ones(len(rows)), (rows, cols)), shape=(len(x), len(centers)))
    if bump == "tent":
        rows, cols, vals = [], [], []
        for col, n in enumerate(centers):
            w = np.prod(np.clip(1.0 - np.abs(x - n), 0.0, None), axis=1)
            nz = np.nonzero(w)[0]
            rows.append(nz)
            cols.append(np.full(len(nz), col))
            vals.append(w[nz])
        return sp.csr_array((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(len(x), len(centers)))
    raise ConfigurationError(f"unknown bump profile {bump!r}; choose from {BUMPS}")


def build_continuum_hamiltonian(cube: CubeSpec, potential, bump: str = "indicator") -> OperatorMatrix:
    """Dirichlet finite-difference ``-Laplacian + sum_n omega_n u(. - n)`` on the grid."""
    if cube.flavor != CONTINUUM:
        raise ConfigurationError("build_continuum_hamiltonian needs a continuum cube")
    if cube.h >= 1:
        raise ResolutionError(f"grid spacing h={cube.h} must be finer than the unit lattice")
    potential = np.asarray(potential, dtype=float)
    if potential.shape != (cube.n_potential,):
        raise DimensionError(
            f"potential has {potential.size} values, box has {cube.n_potential} integer points")
    U = bump_weights(cube, bump)
    cover = U @ np.ones(U.shape[1])
    if cover.min() <= 0:
        raise ConfigurationError(f"bump profile {bump!r} does not cover the box")
    inv_h2 = 1.0 / cube.h ** 2
    diag = 2 * cube.d * inv_h2 + U @ potential
    return _assemble((cube.points_per_axis,) * cube.d, diag, -inv_h2, flavor=CONTINUUM,
                     cube=cube, spacing=cube.h)


@dataclass(frozen=True)
class RandomModel:
    """A cube plus a disorder law: draws one operator per seed."""

    cube: CubeSpec
    disorder: DisorderSpec
    bump: str = "indicator"

    def potential(self, seed: int) -> np.ndarray:
        return sample_potential(self.disorder, self.cube, seed)

    def build(self, potential) -> OperatorMatrix:
        if self.cube.flavor == LATTICE:
            return build_lattice_hamiltonian(self.cube, potential)
        return build_continuum_hamiltonian(self.cube, potential, self.bump)

    def realize(self, seed: int) -> OperatorMatrix:
        return self.build(self.potential(seed))

    def spectral_bounds(self) -> tuple[float, float]:
        """Interval guaranteed to contain every eigenvalue of every realization."""
        lo, hi = self.disorder.bounds
        if self.cube.flavor == LATTICE:
            return -2 * self.cube.d + lo, 2 * self.cube.d + hi
        # both bump profiles sum to at most 1 at every point
        return min(lo, 0.0), 4 * self.cube.d / self.cube.h ** 2 + max(hi, 0.0)
