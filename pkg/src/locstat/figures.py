"""SVG figures for reports (matplotlib, Agg backend, reproducible output)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import scipy.stats as sps  # noqa: E402

from .pointprocess import Window  # noqa: E402
from .stats import empirical_cf_factorization  # noqa: E402

# fixed ids and no timestamp, so identical reports give identical files
plt.rcParams["svg.hashsalt"] = "locstat"
_META = {"Date": None, "Creator": None}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def count_histogram(counts, lam: float, path) -> Path:
    counts = np.asarray(counts, dtype=int)
    k = np.arange(0, max(int(counts.max(initial=0)), int(lam + 5 * np.sqrt(lam) + 1)) + 1)
    freq = np.bincount(counts, minlength=len(k))[:len(k)] / max(len(counts), 1)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(k, freq, width=0.8, alpha=0.6, label="empirical")
    ax.plot(k, sps.poisson.pmf(k, lam), "ko-", ms=3, label=f"Poisson({lam:.3g})")
    ax.set_xlabel("count")
    ax.set_ylabel("frequency")
    ax.legend()
    fig.tight_layout()
    return _save(fig, Path(path))


def gap_ecdf(gaps, rate: float, path) -> Path:
    g = np.sort(np.asarray(gaps, dtype=float))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.step(g, np.arange(1, len(g) + 1) / max(len(g), 1), where="post", label="empirical")
    x = np.linspace(0, g[-1] if len(g) else 1.0, 200)
    ax.plot(x, 1 - np.exp(-rate * x), "k--", label=f"Exp({rate:.3g})")
    ax.set_xlabel("gap")
    ax.set_ylabel("ECDF")
    ax.legend()
    fig.tight_layout()
    return _save(fig, Path(path))


def cf_gap_heatmap(pairs, t_grid, path) -> Path:
    cf = empirical_cf_factorization(np.asarray(pairs), t_grid)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    t = np.asarray(cf.t)
    step = t[1] - t[0] if len(t) > 1 else 1.0
    ext = (t[0] - step / 2, t[-1] + step / 2, t[0] - step / 2, t[-1] + step / 2)
    im = ax.imshow(cf.gap_table.T, origin="lower", extent=ext, cmap="viridis")
    fig.colorbar(im, ax=ax, label="|joint - product|")
    ax.set_xlabel("t1")
    ax.set_ylabel("t2")
    fig.tight_layout()
    return _save(fig, Path(path))


def decay_fit(details: dict, path) -> Path:
    r = np.asarray(details["separations"], dtype=float)
    m = np.asarray(details["mean"], dtype=float)
    lo = np.asarray(details["ci_low"], dtype=float)
    hi = np.asarray(details["ci_high"], dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(r, m, yerr=[m - np.maximum(lo, 1e-300), hi - m], fmt="o", ms=3, label="mean")
    ax.plot(r, np.exp(details["intercept"] + details["slope"] * r), "k--",
            label=f"slope {details['slope']:.3g}")
    ax.set_yscale("log")
    ax.set_xlabel("|x - y|")
    ax.set_ylabel("E|G(x,y)|^s")
    ax.legend()
    fig.tight_layout()
    return _save(fig, Path(path))


def write_figures(report, out_dir) -> list[Path]:
    """Figures that the report has data for; returns the written paths."""
    out = Path(out_dir)
    written = []
    recs = [r for r in report.records if not r.excluded]
    cfg = report.config
    if recs and cfg["sides"]:
        last = [r for r in recs if r.L == float(cfg["sides"][-1])]
        nE = report.dos.get("E", {}).get("value")
        if nE and last:
            lam = nE * Window.parse(cfg["A"]).length
            written.append(count_histogram([r.eta_E_A for r in last], lam,
                                           out / "count_histogram.svg"))
            gaps = [g for r in last for g in (r.gaps or [])]
            if gaps:
                written.append(gap_ecdf(gaps, nE, out / "gap_ecdf.svg"))
        if report.command in ("independence", "decorrelate") and last:
            pairs = [(r.eta_E_A, r.eta_Eprime_B) for r in last]
            written.append(cf_gap_heatmap(pairs, cfg["t_grid"], out / "cf_gap_heatmap.svg"))
    for t in report.tests:
        if t.name == "fractional-moment":
            written.append(decay_fit(t.details, out / "decay_fit.svg"))
    return written
