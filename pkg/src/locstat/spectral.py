"""Eigenvalue counting by matrix inertia, bisection, a dense oracle, resolvent entries.

Counting convention: ``count_leq(H, a)`` is the number of eigenvalues <= a and
intervals are half-open ``(a, b]``, so counts over adjacent intervals add up
exactly.

Tridiagonal matrices are counted with the Sturm recursion
``q_i = (d_i - a) - e_{i-1}^2 / q_{i-1}`` (the LDL^T pivots of ``T - aI``).
A pivot with ``|q_i| < pivmin`` is replaced by ``-pivmin`` where
``pivmin = tiny * max(1, max e^2)``; this is the usual underflow guard and is
logged at DEBUG level. Banded and dense matrices are counted from the
Bunch-Kaufman factorization ``P(H - aI)P^T = L D L^T`` (Sylvester's law of
inertia). If ``D`` is singular the count is redone at ``a + 1e-12 * ||H||``
and a warning is logged.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg
from scipy import stats as sps

from .errors import (
    ConfigurationError,
    EmptyEnsembleError,
    IntervalError,
    NumericalError,
    OracleSizeError,
)
from .model import CONTINUUM, RandomModel, as_operator, bump_weights
from .seeding import derive_trial_seed

log = logging.getLogger(__name__)

ORACLE_CAP = 2000
MICRO_SHIFT = 1e-12
TINY = np.finfo(float).tiny


try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _sturm_numpy(diag, off_sq, shifts, pivmin, counts):
    # diag (N, B) and off_sq (N-1, B) are transposed for contiguous row access
    guarded = False
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        q = diag[0][:, None] - shifts
        for i in range(diag.shape[0]):
            if i:
                q = (diag[i][:, None] - shifts) - off_sq[i - 1][:, None] / q
            small = np.abs(q) < pivmin
            if small.any():
                q = np.where(small, -pivmin, q)
                guarded = True
            counts += q < 0
    return guarded


def _sturm_loops(diag, off_sq, shifts, pivmin, counts):
    # same recursion and operation order as _sturm_numpy, compiled by numba;
    # branch-free inner loop over shifts so it vectorizes
    n, nb = diag.shape
    nk = shifts.shape[1]
    guarded = False
    q = np.empty(nk)
    c = np.zeros(nk, dtype=np.int64)
    for b in range(nb):
        sh = shifts[b]
        for k in range(nk):
            qk = diag[0, b] - sh[k]
            small = abs(qk) < pivmin
            guarded |= small
            qk = -pivmin if small else qk
            c[k] = qk < 0
            q[k] = qk
        for i in range(1, n):
            d = diag[i, b]
            e2 = off_sq[i - 1, b]
            for k in range(nk):
                qk = (d - sh[k]) - e2 / q[k]
                small = abs(qk) < pivmin
                guarded |= small
                qk = -pivmin if small else qk
                c[k] += qk < 0
                q[k] = qk
        for k in range(nk):
            counts[b, k] += c[k]
    return guarded


_sturm_kernel = numba.njit(cache=True, nogil=True)(_sturm_loops) if numba else _sturm_numpy


def sturm_counts(diag, off_sq, shifts) -> np.ndarray:
    """Batched Sturm counts.

    diag : (B, N) diagonals, off_sq : (B, N-1) squared off-diagonals,
    shifts : (B, K) thresholds. Returns (B, K) counts of eigenvalues <= shift.
    Every batch row goes through the same scalar recursion, so a row's result
    does not depend on what else is in the batch.
    """
    diag = np.ascontiguousarray(np.atleast_2d(diag).T, dtype=float)
    off_sq = np.ascontiguousarray(np.atleast_2d(off_sq).T, dtype=float)
    shifts = np.atleast_2d(np.asarray(shifts, dtype=float))
    n, b = diag.shape
    shifts = np.ascontiguousarray(np.broadcast_to(shifts, (b, shifts.shape[1])))
    counts = np.zeros(shifts.shape, dtype=np.int64)
    if n == 0:
        return counts
    pivmin = TINY * max(1.0, float(off_sq.max()) if off_sq.size else 1.0)
    if _sturm_kernel(diag, off_sq, shifts, pivmin, counts):
        log.debug("sturm_counts: zero pivot replaced by -pivmin=%g", pivmin)
    return counts


def _ldl_count(a_dense: np.ndarray, shift: float, norm: float) -> int:
    m = a_dense - shift * np.eye(len(a_dense))
    _, d, _ = scipy.linalg.ldl(m, lower=True, hermitian=True)
    n = len(d)
    count, singular, i = 0, False, 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            blk = d[i:i + 2, i:i + 2]
            ev = np.linalg.eigvalsh(blk)
            singular |= bool(np.any(ev == 0.0))
            count += int(np.sum(ev <= 0.0))
            i += 2
        else:
            singular |= d[i, i] == 0.0
            count += int(d[i, i] <= 0.0)
            i += 1
    if singular:
        delta = MICRO_SHIFT * max(norm, 1.0)
        log.warning("count_leq: singular pivot at a=%r, recounting at a+%g", shift, delta)
        return _ldl_count(a_dense, shift + delta, 0.0) if delta else count
    return count


def count_leq_many(ops, shifts) -> np.ndarray:
    """Counts of eigenvalues <= each shift for several matrices.

    shifts is (K,) (shared) or (len(ops), K). Tridiagonal matrices of equal
    size are processed in one batched Sturm pass.
    """
    ops = [as_operator(H) for H in ops]
    shifts = np.asarray(shifts, dtype=float)
    if shifts.ndim == 1:
        shifts = np.broadcast_to(shifts, (len(ops), len(shifts)))
    out = np.zeros(shifts.shape, dtype=np.int64)
    groups: dict[int, list[int]] = {}
    for i, H in enumerate(ops):
        if H.is_tridiagonal:
            groups.setdefault(H.n, []).append(i)
        else:
            dense = H.toarray()
            out[i] = [_ldl_count(dense, float(a), H.norm_inf) for a in shifts[i]]
    for idx in groups.values():
        diag = np.stack([ops[i].diag for i in idx])
        off_sq = np.stack([ops[i].off ** 2 for i in idx])
        out[idx] = sturm_counts(diag, off_sq, shifts[idx])
    return out


def count_leq(H, a: float) -> int:
    """Exact number of eigenvalues of H that are <= a."""
    return int(count_leq_many([H], [float(a)])[0, 0])


def count_in(H, a: float, b: float) -> int:
    """Number of eigenvalues in (a, b]."""
    if a > b:
        raise IntervalError(f"interval ({a}, {b}] has a > b")
    if a == b:
        return 0
    c = count_leq_many([H], [a, b])[0]
    return int(c[1] - c[0])


def default_tol(H) -> float:
    return 1e-10 * max(1.0, as_operator(H).norm_inf)


def _tridiagonal_counts(forms, shifts) -> np.ndarray:
    """Sturm counts for a list of (diag, off) forms; shifts (len(forms), K)."""
    out = np.zeros(shifts.shape, dtype=np.int64)
    groups: dict[int, list[int]] = {}
    for i, (dg, _) in enumerate(forms):
        groups.setdefault(len(dg), []).append(i)
    for idx in groups.values():
        diag = np.stack([forms[i][0] for i in idx])
        off_sq = np.stack([forms[i][1] ** 2 for i in idx])
        out[idx] = sturm_counts(diag, off_sq, shifts[idx])
    return out


def kth_eigenvalues(ops, targets, lo, hi, tol) -> list[np.ndarray]:
    """Bisection for the targets-th smallest eigenvalues (1-based) of each matrix.

    For matrix i, every target k must satisfy count(lo[i]) < k <= count(hi[i]).
    Returns arrays located to within ``tol`` (midpoint of the final bracket).
    """
    ops = [as_operator(H) for H in ops]
    forms = [H.tridiagonal_form for H in ops]
    width = max((len(t) for t in targets), default=0)
    if width == 0:
        return [np.zeros(0) for _ in ops]
    k = np.zeros((len(ops), width), dtype=np.int64)
    a = np.zeros((len(ops), width))
    b = np.zeros((len(ops), width))
    mask = np.zeros((len(ops), width), dtype=bool)
    for i, t in enumerate(targets):
        m = len(t)
        k[i, :m] = t
        a[i, :m] = lo[i]
        b[i, :m] = hi[i]
        mask[i, :m] = True
    tol = np.broadcast_to(np.asarray(tol, dtype=float), (len(ops),))[:, None]
    for _ in range(2100):
        if not np.any((b - a > tol) & mask):
            break
        mid = 0.5 * (a + b)
        c = _tridiagonal_counts(forms, mid)
        above = c >= k
        b = np.where(above, mid, b)
        a = np.where(above, a, mid)
        # a padded column never needs refinement
        b = np.where(mask, b, a)
    mid = 0.5 * (a + b)
    return [mid[i, :len(t)] for i, t in enumerate(targets)]


def eigenvalues_in_many(ops, intervals, tol=None) -> list[np.ndarray]:
    """``eigenvalues_in`` for several matrices at once; intervals is a list of (a, b)."""
    ops = [as_operator(H) for H in ops]
    intervals = np.asarray(intervals, dtype=float).reshape(len(ops), 2)
    if np.any(intervals[:, 0] > intervals[:, 1]):
        raise IntervalError("interval with a > b")
    if tol is None:
        tol = [default_tol(H) for H in ops]
    elif np.any(np.asarray(tol) <= 0):
        raise ConfigurationError("tolerance must be positive")
    forms = [H.tridiagonal_form for H in ops]
    c = _tridiagonal_counts(forms, intervals)
    targets = [np.arange(ca + 1, cb + 1) for ca, cb in c]
    return kth_eigenvalues(ops, targets, intervals[:, 0], intervals[:, 1], tol)


def eigenvalues_in(H, a: float, b: float, tol: float | None = None) -> np.ndarray:
    """Sorted eigenvalues in (a, b], each located to within tol by bisection on counts."""
    return eigenvalues_in_many([H], [(a, b)], None if tol is None else [tol])[0]


def dense_spectrum(H, cap: int = ORACLE_CAP) -> np.ndarray:
    """All eigenvalues, ascending, by tridiagonal reduction and implicit QR (LAPACK syev)."""
    H = as_operator(H)
    if H.n > cap:
        raise OracleSizeError(f"matrix size {H.n} exceeds the oracle cap {cap}")
    if H.n == 0:
        return np.zeros(0)
    return np.sort(scipy.linalg.eigvalsh(H.toarray(), driver="ev"))


def green_column(H, y: int, E: float, eps: float) -> np.ndarray:
    """Column ``(H - E - i eps)^{-1} delta_y`` with a residual check."""
    if not eps > 0:
        raise ConfigurationError("eps must be positive")
    H = as_operator(H)
    z = complex(E, eps)
    rhs = np.zeros(H.n, dtype=complex)
    rhs[y] = 1.0
    if H.is_tridiagonal:
        ab = np.zeros((3, H.n), dtype=complex)
        ab[0, 1:] = H.off
        ab[1] = H.diag - z
        ab[2, :-1] = H.off
        g = scipy.linalg.solve_banded((1, 1), ab, rhs, check_finite=False)
    else:
        a = (H.matrix - z * sp.identity(H.n, format="csr")).tocsc()
        g = scipy.sparse.linalg.spsolve(a, rhs)
    residual = float(np.linalg.norm(H.matrix @ g - z * g - rhs))
    if not residual <= 1e-10 * max(1.0, H.norm_inf):
        raise NumericalError(f"resolvent solve residual {residual:.3e} too large", residual)
    return g


def green_entry(H, x: int, y: int, E: float, eps: float) -> complex:
    """``<delta_x, (H - E - i eps)^{-1} delta_y>``."""
    return complex(green_column(H, y, E, eps)[x])


@dataclass
class FractionalMoments:
    """Monte Carlo estimate of E|G(x, y; E + i eps)|^s over a range of separations."""

    separations: np.ndarray
    mean: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    s: float
    eps: float
    trials: int
    slope: float = math.nan
    intercept: float = math.nan
    r_squared: float = math.nan
    probe: str = "entry"
    samples: np.ndarray = field(default=None, repr=False)

    @property
    def decay_rate(self) -> float:
        return -self.slope


def _probe_indices(model: RandomModel, point) -> np.ndarray:
    cube = model.cube
    if cube.flavor != CONTINUUM:
        return np.array([cube.site_index(point)])
    # grid points in the support of the bump at integer point ``point``
    centers = cube.integer_points()
    col = int(np.nonzero(np.all(centers == np.atleast_1d(point), axis=1))[0][0])
    return bump_weights(cube, model.bump)[:, [col]].nonzero()[0]


def fractional_moment_estimate(model: RandomModel, x, ys: Sequence, E: float, eps: float,
                               s: float, trials: int, seed: int = 0,
                               ci_level: float = 0.95) -> FractionalMoments:
    """Mean of |G(x, y)|^s over ``trials`` realizations, with a log-linear decay fit.

    On a continuum model the probe is the largest resolvent entry between the
    grid points supporting the bumps at x and y, a proxy for the operator norm
    of ``u_x G u_y``.
    """
    if not 0 <= s < 1:
        raise ConfigurationError(f"s must lie in [0, 1), got {s}")
    if trials < 1:
        raise EmptyEnsembleError("fractional_moment_estimate needs at least one trial")
    ys = list(ys)
    xs_idx = _probe_indices(model, x)
    ys_idx = [_probe_indices(model, y) for y in ys]
    sep = np.array([float(np.linalg.norm(np.atleast_1d(y) - np.atleast_1d(x))) for y in ys])
    samples = np.zeros((trials, len(ys)))
    for t in range(trials):
        H = model.realize(derive_trial_seed(seed, t))
        cols = np.abs(np.stack([green_column(H, int(i), E, eps) for i in xs_idx]))
        samples[t] = [cols[:, yi].max() for yi in ys_idx]
    moments = samples ** s
    mean = moments.mean(axis=0)
    half = sps.norm.ppf(0.5 + ci_level / 2) * moments.std(axis=0, ddof=1) / math.sqrt(trials) \
        if trials > 1 else np.zeros(len(ys))
    out = FractionalMoments(sep, mean, mean - half, mean + half, s, eps, trials,
                            probe="entry" if len(xs_idx) == 1 else "max-entry", samples=samples)
    if len(ys) >= 2 and np.all(mean > 0) and np.ptp(sep) > 0:
        fit = sps.linregress(sep, np.log(mean))
        out.slope, out.intercept, out.r_squared = fit.slope, fit.intercept, fit.rvalue ** 2
    return out
