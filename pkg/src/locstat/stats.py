"""Statistical checks on eigenvalue counting processes.

Every check returns a ``TestReport``. Reported confidence intervals use the
normal approximation at ``ci_level`` (default 0.95); accept/reject decisions
based on p-values use ``significance`` (default 0.01).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats as sps

from .errors import (
    ConfigurationError,
    EmptyEnsembleError,
    InsufficientDesignError,
    IntervalError,
)
from .model import RandomModel
from .pointprocess import volume as cube_volume
from .seeding import derive_trial_seed
from .spectral import count_leq_many

DEFAULT_THRESHOLDS = {
    "r_squared": 0.99,
    "ks": 0.05,
    "cf_gap": 0.05,
    "significance": 0.01,
    "ci_level": 0.95,
    "wegner_C": 2.0,
    "minami_C": 1.0,
    "min_expected": 5.0,
}

DEFAULT_T_GRID = tuple(np.round(np.arange(-3.0, 3.0 + 1e-9, 0.5), 12))


def thresholds(overrides: dict | None = None) -> dict:
    out = dict(DEFAULT_THRESHOLDS)
    if overrides:
        unknown = set(overrides) - set(out)
        if unknown:
            raise ConfigurationError(f"unknown thresholds {sorted(unknown)}")
        out.update(overrides)
    return out


def _plain(x):
    """Convert numpy scalars/arrays (recursively) to JSON-friendly Python values."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return None if math.isnan(x) else x
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


@dataclass
class TestReport:
    name: str
    statistic: float | None
    p_value: float | None = None
    ci: tuple | None = None
    sample_size: int = 0
    passed: bool | None = None
    details: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def __post_init__(self):
        self.statistic = _plain(self.statistic)
        self.p_value = _plain(self.p_value)
        if self.p_value is not None and not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")
        if self.ci is not None:
            lo, hi = _plain(self.ci[0]), _plain(self.ci[1])
            if lo is not None and hi is not None and lo > hi:
                raise ValueError("confidence interval endpoints out of order")
            self.ci = (lo, hi)
        self.details = _plain(self.details)
        self.thresholds = _plain(self.thresholds)
        self.provenance = _plain(self.provenance)
        if self.passed is not None:
            self.passed = bool(self.passed)

    @property
    def verdict(self) -> str:
        return {True: "PASS", False: "FAIL", None: "UNDEFINED"}[self.passed]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ci"] = list(self.ci) if self.ci is not None else None
        d["verdict"] = self.verdict
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TestReport":
        d = dict(d)
        d.pop("verdict", None)
        if d.get("ci") is not None:
            d["ci"] = tuple(d["ci"])
        return cls(**d)


def _z(ci_level: float) -> float:
    return float(sps.norm.ppf(0.5 + ci_level / 2))


def mean_ci(values, ci_level: float = 0.95) -> tuple[float, float, float, float]:
    """(mean, standard error, lo, hi) with compensated summation."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise EmptyEnsembleError("empty sample")
    m = math.fsum(v) / v.size
    if v.size > 1:
        se = math.sqrt(math.fsum((v - m) ** 2) / (v.size - 1) / v.size)
    else:
        se = 0.0
    half = _z(ci_level) * se
    return m, se, m - half, m + half


# ---------------------------------------------------------------- density of states

@dataclass
class DOSEstimate:
    value: float
    ci: tuple[float, float]
    se: float
    E: float
    bin_width: float
    trials: int
    volume: float
    resolution: float

    def to_dict(self):
        return _plain(asdict(self))


def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield range(start, min(n, start + size))


def window_counts(model: RandomModel, edges, trials: int, seed: int = 0,
                  chunk: int = 64) -> np.ndarray:
    """Counts in consecutive bins (edges[i], edges[i+1]] per trial: (trials, len(edges)-1)."""
    edges = np.asarray(edges, dtype=float)
    out = np.zeros((trials, len(edges) - 1), dtype=np.int64)
    for idx in _chunks(trials, chunk):
        ops = [model.realize(derive_trial_seed(seed, t)) for t in idx]
        c = count_leq_many(ops, edges)
        out[idx.start:idx.stop] = np.diff(c, axis=1)
    return out


def estimate_dos(model: RandomModel, E: float, bin_width: float, trials: int, seed: int = 0,
                 volume_map: str = "volume", ci_level: float = 0.95) -> DOSEstimate:
    """Density of states at E from finite-volume eigenvalue counts in a bin around E.

    The CI half-width is the statistical term plus the count resolution
    1/(V * bin_width): a single finite-volume count is an integer, so the
    estimator cannot resolve n(E) more finely than that even without disorder.
    """
    if not bin_width > 0:
        raise ConfigurationError("bin_width must be positive")
    if trials < 1:
        raise EmptyEnsembleError("estimate_dos needs at least one trial")
    V = cube_volume(model.cube, volume_map)
    counts = window_counts(model, [E - bin_width / 2, E + bin_width / 2], trials, seed)[:, 0]
    m, se, _, _ = mean_ci(counts, ci_level)
    scale = V * bin_width
    resolution = 1.0 / scale
    half = _z(ci_level) * se / scale + resolution
    value = m / scale
    return DOSEstimate(value, (value - half, value + half), se / scale, E, bin_width, trials,
                       V, resolution)


# ---------------------------------------------------------------- Wegner / Minami / decorrelation

def wegner_check(lengths, counts, n_L: int = 1, dos: float | None = None,
                 thr: dict | None = None) -> TestReport:
    """Linearity of the mean sub-cube count in the window length.

    counts: (trials, G) or (trials, G, n_L) sub-cube counts, one column per
    window length. The ratio compares the fitted slope with n(E)/n_L.
    """
    thr = thresholds(thr)
    lengths = np.asarray(lengths, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if len(lengths) < 3:
        raise InsufficientDesignError("wegner_check needs at least 3 window lengths")
    if counts.ndim == 3:
        counts = counts.mean(axis=2)
    if counts.shape[1] != len(lengths):
        raise ConfigurationError("counts must have one column per window length")
    means = np.array([mean_ci(counts[:, g], thr["ci_level"])[0] for g in range(len(lengths))])
    ses = np.array([mean_ci(counts[:, g], thr["ci_level"])[1] for g in range(len(lengths))])
    details = {"lengths": lengths, "mean_counts": means, "standard_errors": ses, "n_L": n_L}
    if not np.any(means):
        details["note"] = "all counts zero: slope 0, trivially bounded"
        return TestReport("wegner", 0.0, sample_size=counts.shape[0], passed=True,
                          details=details | {"slope": 0.0, "r_squared": None}, thresholds=thr)
    fit = sps.linregress(lengths, means)
    r2 = fit.rvalue ** 2
    details.update(slope=fit.slope, intercept=fit.intercept, r_squared=r2,
                   slope_stderr=fit.stderr)
    ok = r2 >= thr["r_squared"]
    ratio = None
    if dos is not None:
        ratio = fit.slope / (dos / n_L)
        details.update(dos=dos, ratio=ratio)
        ok = ok and ratio <= thr["wegner_C"]
    return TestReport("wegner", ratio if ratio is not None else fit.slope, ci=None,
                      sample_size=counts.shape[0], passed=ok, details=details, thresholds=thr)


def cluster_sum(counts, k: int = 2, ci_level: float = 0.95) -> tuple[float, float, float, float]:
    """Estimate of sum_p P(eta_p >= k) from (trials, n_L) counts: mean, se, lo, hi."""
    counts = np.atleast_2d(np.asarray(counts))
    return mean_ci((counts >= k).sum(axis=1), ci_level)


def nonincreasing_up_to_overlap(values, lo, hi) -> bool:
    """Each step goes down, or the consecutive confidence intervals overlap."""
    for i in range(len(values) - 1):
        if values[i + 1] > values[i] and lo[i + 1] > hi[i]:
            return False
    return True


def minami_check(sizes: Sequence, counts: Sequence, n_Ls: Sequence[int], window_length: float,
                 thr: dict | None = None) -> TestReport:
    """sum_p P(eta_p(B) >= 2) along a ladder of system sizes.

    counts[i] holds the (trials, n_L) sub-cube counts at sizes[i]. PASS when
    the sums are non-increasing up to CI overlap and n_L * sum / |B|^2 stays
    below ``minami_C``.
    """
    thr = thresholds(thr)
    if len(sizes) < 2:
        raise InsufficientDesignError("minami_check needs at least two system sizes")
    rows = []
    for size, c, n_L in zip(sizes, counts, n_Ls):
        m, se, lo, hi = cluster_sum(c, 2, thr["ci_level"])
        rows.append({"size": size, "n_L": n_L, "sum": m, "se": se, "ci": [lo, hi],
                     "per_subcube": m / n_L, "scaled": m * n_L / window_length ** 2,
                     "trials": len(c)})
    vals = [r["sum"] for r in rows]
    decreasing = nonincreasing_up_to_overlap(vals, [r["ci"][0] for r in rows],
                                             [r["ci"][1] for r in rows])
    bounded = all(r["scaled"] <= thr["minami_C"] for r in rows)
    return TestReport("minami", vals[-1], ci=tuple(rows[-1]["ci"]),
                      sample_size=sum(r["trials"] for r in rows), passed=decreasing and bounded,
                      details={"ladder": rows, "nonincreasing": decreasing, "bounded": bounded,
                               "window_length": window_length},
                      thresholds=thr)


def inclusion_violations(sub_a, sub_b, sub_union) -> int:
    """Number of (trial, sub-cube) cells where eta(A) >= 1 and eta(B) >= 1 but eta(A u B) < 2."""
    a, b, u = (np.asarray(x) for x in (sub_a, sub_b, sub_union))
    return int(np.sum((a >= 1) & (b >= 1) & ~(u >= 2)))


def decorrelation_check(sizes, sub_a, sub_b, sub_union, E: float, E_prime: float,
                        thr: dict | None = None) -> TestReport:
    """Simultaneous occupation of disjoint windows, per sub-cube, along a size ladder.

    sub_a[i], sub_b[i], sub_union[i]: (trials, n_L) counts in A_{L,E},
    B_{L,E'} and their union at sizes[i].
    """
    thr = thresholds(thr)
    if E == E_prime:
        raise IntervalError("decorrelation needs E != E'")
    rows, violations = [], 0
    for size, a, b, u in zip(sizes, sub_a, sub_b, sub_union):
        a, b, u = np.atleast_2d(a), np.atleast_2d(b), np.atleast_2d(u)
        v = inclusion_violations(a, b, u)
        violations += v
        both = ((a >= 1) & (b >= 1)).sum(axis=1)
        m_b, se_b, lo_b, hi_b = mean_ci(both, thr["ci_level"])
        m_u, se_u, lo_u, hi_u = cluster_sum(u, 2, thr["ci_level"])
        rows.append({"size": size, "n_L": a.shape[1], "both_sum": m_b, "both_se": se_b,
                     "both_ci": [lo_b, hi_b],
                     "union_sum": m_u, "union_ci": [lo_u, hi_u], "violations": v,
                     "cells": int(a.size), "dominated": bool(m_b <= m_u)})
    dominated = all(r["dominated"] for r in rows)
    dec_both = nonincreasing_up_to_overlap([r["both_sum"] for r in rows],
                                           [r["both_ci"][0] for r in rows],
                                           [r["both_ci"][1] for r in rows])
    dec_union = nonincreasing_up_to_overlap([r["union_sum"] for r in rows],
                                            [r["union_ci"][0] for r in rows],
                                            [r["union_ci"][1] for r in rows])
    passed = violations == 0 and dominated and dec_both and dec_union
    return TestReport("decorrelation", rows[-1]["both_sum"], ci=tuple(rows[-1]["both_ci"]),
                      sample_size=sum(r["cells"] for r in rows), passed=passed,
                      details={"ladder": rows, "violations": violations, "dominated": dominated,
                               "both_nonincreasing": dec_both,
                               "union_nonincreasing": dec_union, "E": E, "E_prime": E_prime},
                      thresholds=thr)


# ---------------------------------------------------------------- Poisson statistics

def theoretical_poisson_cf(t, lam):
    """Characteristic function of Poisson(lam): exp((e^{it} - 1) lam)."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ConfigurationError("Poisson intensity must be nonnegative")
    out = np.exp((np.exp(1j * np.asarray(t, dtype=float)) - 1.0) * lam)
    return complex(out) if np.ndim(out) == 0 else out


def pool_bins(observed, expected, min_expected: float = 5.0):
    """Merge adjacent bins left to right until every expected count >= min_expected."""
    obs_out, exp_out = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(observed, expected):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs_out.append(o_acc)
            exp_out.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if exp_out:
            obs_out[-1] += o_acc
            exp_out[-1] += e_acc
        else:
            obs_out.append(o_acc)
            exp_out.append(e_acc)
    return np.array(obs_out), np.array(exp_out)


def poisson_chi_square(counts, lam: float, min_expected: float = 5.0) -> dict:
    """Chi-square goodness of fit of integer counts to Poisson(lam), tail bins pooled."""
    counts = np.asarray(counts, dtype=np.int64)
    n = counts.size
    kmax = int(max(counts.max(), sps.poisson.ppf(1 - 1e-12, lam))) + 1
    ks = np.arange(kmax)
    expected = n * np.append(sps.poisson.pmf(ks, lam), sps.poisson.sf(kmax - 1, lam))
    observed = np.append(np.bincount(np.minimum(counts, kmax), minlength=kmax + 1)[:kmax],
                         np.sum(counts >= kmax))
    obs, exp = pool_bins(observed, expected, min_expected)
    df = len(obs) - 1
    if df < 1:
        return {"chi2": 0.0, "df": 0, "p_value": 1.0, "bins": len(obs)}
    chi2 = float(np.sum((obs - exp) ** 2 / exp))
    return {"chi2": chi2, "df": df, "p_value": float(sps.chi2.sf(chi2, df)), "bins": len(obs)}


def poisson_test(counts=None, gaps=None, lam: float | None = None, rate: float | None = None,
                 thr: dict | None = None) -> TestReport:
    """Counts against Poisson(lam) (chi-square) and gaps against Exponential(rate) (KS).

    PASS when the chi-square p-value exceeds ``significance`` and the KS
    distance is at most ``ks``.
    """
    thr = thresholds(thr)
    if (counts is None or len(counts) == 0) and (gaps is None or len(gaps) == 0):
        raise EmptyEnsembleError("poisson_test needs counts or gaps")
    details, ok, stat, p = {}, True, None, None
    n = 0
    if counts is not None and len(counts):
        if lam is None or not lam > 0:
            raise ConfigurationError("count test needs lam > 0")
        chi = poisson_chi_square(counts, lam, thr["min_expected"])
        c = np.asarray(counts, dtype=float)
        details["counts"] = chi | {"lam": lam, "n": c.size, "mean": float(c.mean()),
                                   "variance": float(c.var(ddof=1)) if c.size > 1 else 0.0}
        ok = ok and chi["p_value"] > thr["significance"]
        stat, p, n = chi["chi2"], chi["p_value"], c.size
    if gaps is not None and len(gaps):
        r = rate if rate is not None else lam
        if r is None or not r > 0:
            raise ConfigurationError("gap test needs rate > 0")
        ks = sps.kstest(np.asarray(gaps, dtype=float), "expon", args=(0.0, 1.0 / r))
        details["gaps"] = {"ks": float(ks.statistic), "p_value": float(ks.pvalue), "rate": r,
                           "n": len(gaps), "mean": float(np.mean(gaps))}
        ok = ok and ks.statistic <= thr["ks"]
        if stat is None:
            stat, p, n = float(ks.statistic), float(ks.pvalue), len(gaps)
    return TestReport("poisson", stat, p_value=p, sample_size=n, passed=ok, details=details,
                      thresholds=thr)


# ---------------------------------------------------------------- independence

@dataclass
class CFFactorization:
    t: np.ndarray
    joint: np.ndarray
    marginal1: np.ndarray
    marginal2: np.ndarray
    gap: float
    gap_at: tuple[float, float]
    theory_gap: float | None = None
    gap_ci: tuple[float, float] | None = None

    @property
    def gap_table(self) -> np.ndarray:
        return np.abs(self.joint - np.outer(self.marginal1, self.marginal2))


def empirical_cf_factorization(pairs, t_grid=DEFAULT_T_GRID, lam1: float | None = None,
                               lam2: float | None = None, bootstrap: int = 0, seed: int = 0,
                               ci_level: float = 0.95) -> CFFactorization:
    """Empirical joint and marginal characteristic functions of paired counts on a t-grid.

    gap = max over the grid of |phi_joint(t1, t2) - phi_1(t1) phi_2(t2)|. With
    lam1, lam2 also reports the largest deviation of phi_joint from the product
    of Poisson characteristic functions.
    """
    pairs = np.asarray(pairs, dtype=float).reshape(-1, 2)
    t = np.asarray(t_grid, dtype=float)
    if pairs.shape[0] == 0:
        raise EmptyEnsembleError("empty sample")
    if t.size == 0:
        raise ConfigurationError("empty t-grid")

    def tables(p):
        e1 = np.exp(1j * np.outer(p[:, 0], t))
        e2 = np.exp(1j * np.outer(p[:, 1], t))
        joint = e1.T @ e2 / len(p)
        return joint, e1.mean(axis=0), e2.mean(axis=0)

    joint, m1, m2 = tables(pairs)
    # phi(0) is exactly 1 whatever the rounding of the sums
    joint[np.ix_(t == 0, t == 0)] = 1.0
    m1[t == 0] = 1.0
    m2[t == 0] = 1.0
    gaps = np.abs(joint - np.outer(m1, m2))
    i, j = np.unravel_index(int(np.argmax(gaps)), gaps.shape)
    out = CFFactorization(t, joint, m1, m2, float(gaps[i, j]), (float(t[i]), float(t[j])))
    if lam1 is not None and lam2 is not None:
        theory = np.outer(theoretical_poisson_cf(t, lam1), theoretical_poisson_cf(t, lam2))
        out.theory_gap = float(np.max(np.abs(joint - theory)))
    if bootstrap:
        rng = np.random.default_rng(seed)
        boots = []
        for _ in range(bootstrap):
            jb, b1, b2 = tables(pairs[rng.integers(0, len(pairs), len(pairs))])
            boots.append(np.max(np.abs(jb - np.outer(b1, b2))))
        a = (1 - ci_level) / 2
        out.gap_ci = (float(np.quantile(boots, a)), float(np.quantile(boots, 1 - a)))
    return out


def pearson(x, y, ci_level: float = 0.95) -> dict:
    """Pearson correlation, two-sided p-value and Fisher-z confidence interval."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return {"r": None, "p_value": None, "ci": None, "defined": False}
    res = sps.pearsonr(x, y)
    r = float(np.clip(res.statistic, -1.0, 1.0))
    n = len(x)
    if n > 3 and abs(r) < 1:
        z, se = math.atanh(r), 1.0 / math.sqrt(n - 3)
        q = _z(ci_level)
        ci = [math.tanh(z - q * se), math.tanh(z + q * se)]
    else:
        ci = [r, r]
    return {"r": r, "p_value": float(res.pvalue), "ci": ci, "defined": True}


def contingency_test(x, y, min_expected: float = 5.0) -> dict:
    """Chi-square independence test on the (x, y) table, top categories pooled.

    The largest categories of either variable are merged (capping the value)
    until every expected cell count reaches ``min_expected``; a 2x2 table that
    still falls short is tested with Fisher's exact test.
    """
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    cx, cy = int(x.max()), int(y.max())
    lox, loy = int(x.min()), int(y.min())
    if cx == lox or cy == loy:
        return {"chi2": None, "df": 0, "p_value": None, "defined": False, "shape": None}

    def table(cx, cy):
        xi = np.minimum(x, cx) - lox
        yi = np.minimum(y, cy) - loy
        t = np.zeros((cx - lox + 1, cy - loy + 1))
        np.add.at(t, (xi, yi), 1)
        return t

    while True:
        t = table(cx, cy)
        exp = np.outer(t.sum(1), t.sum(0)) / t.sum()
        if exp.min() >= min_expected or (cx - lox <= 1 and cy - loy <= 1):
            break
        # pool the top category with the smaller marginal
        top_x, top_y = t[-1].sum(), t[:, -1].sum()
        if cy - loy <= 1 or (cx - lox > 1 and top_x <= top_y):
            cx -= 1
        else:
            cy -= 1
    if exp.min() < min_expected:
        res = sps.fisher_exact(t)
        return {"chi2": None, "df": 1, "p_value": float(res.pvalue), "defined": True,
                "shape": list(t.shape), "method": "fisher"}
    res = sps.chi2_contingency(t, correction=False)
    return {"chi2": float(res.statistic), "df": int(res.dof), "p_value": float(res.pvalue),
            "defined": True, "shape": list(t.shape), "method": "chi2"}


def independence_test(pairs, t_grid=DEFAULT_T_GRID, lam1: float | None = None,
                      lam2: float | None = None, thr: dict | None = None) -> TestReport:
    """Independence of paired counts (N1, N2) from one realization at E != E'.

    PASS when the Pearson correlation CI covers 0, the contingency chi-square
    p-value exceeds ``significance`` and the CF factorization gap is at most
    ``cf_gap``.
    """
    thr = thresholds(thr)
    pairs = np.asarray(pairs).reshape(-1, 2)
    if len(pairs) == 0:
        raise EmptyEnsembleError("independence_test needs paired counts")
    corr = pearson(pairs[:, 0], pairs[:, 1], thr["ci_level"])
    cont = contingency_test(pairs[:, 0], pairs[:, 1], thr["min_expected"])
    cf = empirical_cf_factorization(pairs, t_grid, lam1, lam2)
    details = {"correlation": corr, "contingency": cont,
               "cf": {"gap": cf.gap, "gap_at": list(cf.gap_at), "theory_gap": cf.theory_gap,
                      "t_grid": list(cf.t)},
               "means": [float(pairs[:, 0].mean()), float(pairs[:, 1].mean())]}
    if not corr["defined"] or not cont["defined"]:
        details["note"] = "constant column: correlation undefined"
        return TestReport("independence", None, sample_size=len(pairs), passed=None,
                          details=details, thresholds=thr)
    covers = corr["ci"][0] <= 0.0 <= corr["ci"][1]
    details["ci_covers_zero"] = covers
    details["ci_half_width"] = (corr["ci"][1] - corr["ci"][0]) / 2
    passed = covers and cont["p_value"] > thr["significance"] and cf.gap <= thr["cf_gap"]
    return TestReport("independence", corr["r"], p_value=cont["p_value"], ci=tuple(corr["ci"]),
                      sample_size=len(pairs), passed=passed, details=details, thresholds=thr)
