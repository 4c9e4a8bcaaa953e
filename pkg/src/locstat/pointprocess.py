"""Rescaled spectral windows and the eigenvalue counting processes built on them.

A window B is a finite union of disjoint half-open intervals. Around an
energy E it is mapped to ``B_{L,E} = E + B / V`` where V is the volume
normalization of the cube, and the process counts eigenvalues there.
Sub-cube processes use the global V of the cube they partition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, IntervalError, ScaleError
from .model import CONTINUUM, CubeSpec, as_operator
from .spectral import count_leq_many, default_tol, eigenvalues_in_many, kth_eigenvalues

VOLUME_MAPS = ("volume", "L^d", "L")


@dataclass(frozen=True)
class Window:
    """Sorted, pairwise disjoint half-open intervals ``(a_i, b_i]``."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        ivs = tuple((float(a), float(b)) for a, b in self.intervals)
        for a, b in ivs:
            if a > b:
                raise IntervalError(f"interval ({a}, {b}] has a > b")
        ivs = tuple(sorted((iv for iv in ivs if iv[0] < iv[1])))
        for (_, b0), (a1, _) in zip(ivs, ivs[1:]):
            if a1 < b0:
                raise IntervalError("window intervals overlap")
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def interval(cls, a: float, b: float) -> "Window":
        return cls(((a, b),))

    @classmethod
    def centered(cls, length: float) -> "Window":
        return cls(((-length / 2, length / 2),))

    @classmethod
    def parse(cls, spec) -> "Window":
        """Accept a Window, a single (a, b) pair or a list of pairs."""
        if isinstance(spec, Window):
            return spec
        spec = list(spec)
        if len(spec) == 2 and all(isinstance(v, (int, float)) for v in spec):
            return cls.interval(*spec)
        return cls(tuple(tuple(iv) for iv in spec))

    @property
    def length(self) -> float:
        return math.fsum(b - a for a, b in self.intervals)

    @property
    def diameter(self) -> float:
        if not self.intervals:
            return 0.0
        return self.intervals[-1][1] - self.intervals[0][0]

    @property
    def reach(self) -> float:
        """sup |x| over the closure of the window."""
        if not self.intervals:
            return 0.0
        return max(abs(self.intervals[0][0]), abs(self.intervals[-1][1]))

    def is_empty(self) -> bool:
        return not self.intervals

    def disjoint(self, other: "Window") -> bool:
        return all(b0 <= a1 or b1 <= a0
                   for a0, b0 in self.intervals for a1, b1 in other.intervals)

    def union(self, other: "Window") -> "Window":
        """Disjoint union; raises if the windows overlap."""
        if not self.disjoint(other):
            raise IntervalError("union of overlapping windows is not a disjoint union")
        return Window(self.intervals + other.intervals)

    def distance(self, other: "Window") -> float:
        if self.is_empty() or other.is_empty():
            return math.inf
        return min(max(a1 - b0, a0 - b1, 0.0)
                   for a0, b0 in self.intervals for a1, b1 in other.intervals)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape, dtype=bool)
        for a, b in self.intervals:
            out |= (x > a) & (x <= b)
        return out

    def to_list(self) -> list[list[float]]:
        return [[a, b] for a, b in self.intervals]


def volume(cube: CubeSpec, volume_map: str = "volume") -> float:
    """Volume normalization V of a cube.

    ``volume``: site count (lattice) or box volume (continuum), which makes the
    limiting intensity n(E)|B|. ``L^d``: L^d with L the lattice half-side
    (continuum: box side). ``L``: L itself.
    """
    if volume_map == "volume":
        return cube.volume
    L = cube.side / 2 if cube.flavor != CONTINUUM else cube.side
    if volume_map == "L^d":
        return float(L) ** cube.d
    if volume_map == "L":
        return float(L)
    raise ConfigurationError(f"unknown volume map {volume_map!r}; choose from {VOLUME_MAPS}")


def rescale_window(B: Window, E: float, V: float) -> Window:
    """``E + B / V``."""
    if not V > 0:
        raise ScaleError(f"volume normalization must be positive, got {V}")
    return Window(tuple((E + a / V, E + b / V) for a, b in Window.parse(B).intervals))


def _endpoints(windows: Sequence[Window]) -> np.ndarray:
    return np.array([x for w in windows for iv in w.intervals for x in iv], dtype=float)


def eta_counts(ops, energy_windows: Sequence[Window]) -> np.ndarray:
    """Counts in already rescaled (energy) windows: array (len(ops), len(windows))."""
    ends = _endpoints(energy_windows)
    out = np.zeros((len(ops), len(energy_windows)), dtype=np.int64)
    if len(ends) == 0 or len(ops) == 0:
        return out
    c = count_leq_many(ops, ends)
    pos = 0
    for j, w in enumerate(energy_windows):
        for _ in w.intervals:
            out[:, j] += c[:, pos + 1] - c[:, pos]
            pos += 2
    return out


def eta_count(H, E: float, B: Window, V: float) -> int:
    """Number of eigenvalues of H in ``E + B / V``."""
    return int(eta_counts([H], [rescale_window(B, E, V)])[0, 0])


def superpose(subcube_hams, E: float, B: Window, V: float) -> int:
    """``zeta = sum_p eta_p``: counts of the sub-cube operators, summed."""
    if len(subcube_hams) == 0:
        raise ConfigurationError("superpose needs at least one sub-cube operator")
    return int(eta_counts(subcube_hams, [rescale_window(B, E, V)]).sum())


def rescaled_points_many(ops, E: float, window: Window, V: float, tol=None) -> list[np.ndarray]:
    """Rescaled points ``V (lambda - E)`` inside ``window`` for each operator."""
    w = rescale_window(window, E, V)
    ops = [as_operator(H) for H in ops]
    if tol is None:
        # locate eigenvalues to 1e-10 relative to the window's own scale
        tol = [min(default_tol(H), 1e-10 / V) for H in ops]
    per_op = [[] for _ in ops]
    for a, b in w.intervals:
        found = eigenvalues_in_many(ops, [(a, b)] * len(ops), tol)
        for i, ev in enumerate(found):
            per_op[i].append(ev)
    return [np.sort(V * (np.concatenate(p) - E)) if p else np.zeros(0) for p in per_op]


def extract_rescaled_points(H, E: float, window: Window, V: float, tol=None):
    """Sorted rescaled points in the window and their consecutive gaps."""
    pts = rescaled_points_many([H], E, Window.parse(window), V,
                               None if tol is None else [tol])[0]
    return pts, np.diff(pts)


def points_and_successor_gaps_many(ops, E: float, window: Window, V: float,
                                   upper: Sequence[float], tol=None):
    """Rescaled points in the window and, for each, the distance to the next rescaled eigenvalue.

    The successor may lie outside the window, so these gaps are not truncated
    by the window edge. A point with no eigenvalue above it (``upper`` bounds
    the spectrum) contributes no gap. Returns (points, gaps), lists over ops.
    """
    ops = [as_operator(H) for H in ops]
    if tol is None:
        tol = [min(default_tol(H), 1e-10 / V) for H in ops]
    ns = np.array([H.n for H in ops])
    points = [[] for _ in ops]
    gaps = [[] for _ in ops]
    for a, b in Window.parse(window).intervals:
        pts = rescaled_points_many(ops, E, Window.interval(a, b), V, tol)
        top = E + b / V
        c_top = count_leq_many(ops, [top])[:, 0]
        targets = [np.array([c + 1]) if c < n and len(p) else np.zeros(0, dtype=np.int64)
                   for c, n, p in zip(c_top, ns, pts)]
        hi = np.maximum(np.asarray(upper, dtype=float), top)
        nxt = kth_eigenvalues(ops, targets, np.full(len(ops), top), hi, tol)
        for i, (p, q) in enumerate(zip(pts, nxt)):
            following = np.concatenate([p[1:], V * (q - E)])
            gaps[i].append(following - p[:len(following)])
            points[i].append(p)
    join = lambda parts: np.concatenate(parts) if parts else np.zeros(0)  # noqa: E731
    return [join(p) for p in points], [join(g) for g in gaps]


def successor_gaps_many(ops, E: float, window: Window, V: float, upper: Sequence[float],
                        tol=None) -> list[np.ndarray]:
    return points_and_successor_gaps_many(ops, E, window, V, upper, tol)[1]


def min_scale_for_disjointness(A: Window, B: Window, E: float, E_prime: float, d: int = 1,
                               volume_map: Callable[[int], float] | None = None,
                               ladder: Iterable[int] | None = None) -> int:
    """Smallest L with ``(d(A) + d(B)) / V(L) < |E - E'| / 2``.

    The returned scale also satisfies ``dist(A_{L,E}, B_{L,E'}) >= |E - E'| / 2``,
    checked directly, which matters for windows far from the origin where the
    diameter condition alone does not imply it.
    """
    A, B = Window.parse(A), Window.parse(B)
    alpha = abs(E - E_prime)
    if alpha == 0:
        raise IntervalError("E == E': the disjointness scale is undefined")
    if volume_map is None:
        volume_map = lambda L: float(L) ** d  # noqa: E731
    ladder = ladder if ladder is not None else range(1, 1 << 40)
    for L in ladder:
        V = volume_map(L)
        if (A.diameter + B.diameter) / V < alpha / 2:
            if rescale_window(A, E, V).distance(rescale_window(B, E_prime, V)) >= alpha / 2:
                return L
    raise IntervalError("no scale in the ladder separates the windows")
