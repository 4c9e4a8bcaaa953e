"""Acceptance runs at full scale; each test prints one pass/fail line per criterion."""

import math
import time

import numpy as np
import scipy.stats as sps

from locstat.harness import (
    ExperimentConfig,
    emit_report,
    oracle_check,
    preset,
    run_ensemble,
    run_trials,
)
from locstat.stats import contingency_test, inclusion_violations, pearson, poisson_chi_square

# continuum setting: lowest pair of energies at the minimum separation, near the
# bottom of the disorder-free spectrum where the 1D continuum model is strongly localized
CONTINUUM = dict(flavor="continuum", d=1, sides=[256.0], h=0.1, bump="indicator",
                 disorder={"family": "uniform", "W": 4.0}, dos_bin=0.2, dos_trials=1000)
CONTINUUM_E, CONTINUUM_E_PRIME = 0.0, 0.5


def independence_ok(rep):
    d = rep.details
    return (d["ci_covers_zero"] and d["ci_half_width"] <= 0.05 and d["cf"]["gap"] <= 0.05
            and d["contingency"]["p_value"] > 0.01)


def independence_summary(rep):
    d = rep.details
    return (f"r={d['correlation']['r']:.4f} CI=[{rep.ci[0]:.4f}, {rep.ci[1]:.4f}] "
            f"half-width={d['ci_half_width']:.4f} CF gap={d['cf']['gap']:.4f} "
            f"contingency p={d['contingency']['p_value']:.3f}")


def test_criterion_01_oracle(criterion):
    t0 = time.perf_counter()
    rep = oracle_check(instances=500, max_n=200, seed=0)
    dt = time.perf_counter() - t0
    d = rep.details
    ok = d["count_mismatches"] == 0 and d["max_eigenvalue_error"] <= 1e-9 and dt < 120
    assert criterion(1, "oracle equivalence", ok,
                     f"mismatches={d['count_mismatches']} max error={d['max_eigenvalue_error']:.2e} "
                     f"time={dt:.1f}s")


def test_criterion_02_counting_exactness(criterion):
    cfg = ExperimentConfig(command="decorrelate", sides=[2048], ell=16, trials=1000, E=0.0,
                           E_prime=1.0, A=[[-200.0, 200.0]], B=[[-200.0, 200.0]],
                           wegner_lengths=[])
    recs = run_trials(cfg)
    a = np.array([r.subcube_E_A for r in recs])
    b = np.array([r.subcube_Eprime_B for r in recs])
    u = np.array([r.subcube_union for r in recs])
    triples = 3 * a.size
    additive = int(np.sum(u != a + b))
    violations = inclusion_violations(a, b, u)
    both = int(np.sum((a >= 1) & (b >= 1)))
    ok = triples >= 10 ** 5 and additive == 0 and violations == 0 and both > 0
    assert criterion(2, "counting-measure exactness", ok,
                     f"{triples} (trial, sub-cube, window) triples, additivity failures={additive}, "
                     f"inclusion failures={violations} over {both} joint occupations")


def test_criterion_03_dos(criterion):
    t0 = time.perf_counter()
    rep = run_ensemble(preset("dos"))
    dt = time.perf_counter() - t0
    t = rep.test("dos:E")
    ref = 1 / (2 * math.pi)
    ok = t.ci[0] <= ref <= t.ci[1] and dt < 60
    assert criterion(3, "DOS sanity", ok,
                     f"n(0)={t.statistic:.4f} CI=[{t.ci[0]:.4f}, {t.ci[1]:.4f}] vs {ref:.4f}, "
                     f"time={dt:.1f}s")


def test_criterion_04_wegner(criterion):
    rep = run_ensemble(preset("wegner"))
    d = rep.test("wegner:L=2048").details
    ok = d["r_squared"] >= 0.99 and 0.8 <= d["ratio"] <= 1.2
    assert criterion(4, "Wegner linearity", ok,
                     f"R^2={d['r_squared']:.4f} slope/(n/n_L)={d['ratio']:.3f} n_L={d['n_L']}")


def test_criterion_05_minami(criterion):
    rep = run_ensemble(preset("minami"))
    d = rep.test("minami").details
    sums = ", ".join(f"{r['size']}: {r['sum']:.4f}" for r in d["ladder"])
    assert criterion(5, "Minami smallness", d["nonincreasing"],
                     f"sum_p P(eta_p >= 2) by side {sums}")


def test_criterion_06_poisson(criterion):
    rep = run_ensemble(preset("poisson"))
    d = rep.test("poisson").details
    ok = d["gaps"]["ks"] <= 0.05 and d["counts"]["p_value"] > 0.01
    assert criterion(6, "Poisson limit", ok,
                     f"gap KS={d['gaps']['ks']:.4f} (n={d['gaps']['n']}), "
                     f"count chi-square p={d['counts']['p_value']:.3f}")


def test_criterion_07_independence(criterion):
    rep = run_ensemble(preset("independence"))
    t = rep.test("independence")
    control_cfg = preset("poisson", E=0.0, E_prime=0.0, A=[[-2.0, 2.0]], B=[[-2.0, 2.0]],
                         trials=2000, points=False)
    recs = run_trials(control_cfg)
    control = pearson([r.eta_E_A for r in recs], [r.eta_Eprime_B for r in recs])["r"]
    ok = independence_ok(t) and control > 0.99
    assert criterion(7, "independence at E != E'", ok,
                     f"{independence_summary(t)}; control r={control:.4f}")


def test_criterion_08_decorrelation(criterion):
    rep = run_ensemble(preset("decorrelate"))
    d = rep.test("decorrelation").details
    sums = ", ".join(f"{r['size']}: {r['both_sum']:.4f}" for r in d["ladder"])
    assert criterion(8, "decorrelation sums", d["both_nonincreasing"] and d["violations"] == 0,
                     f"sum_p P(both occupied) by side {sums}")


def test_criterion_09_fractional_moments(criterion):
    t0 = time.perf_counter()
    rep = run_ensemble(preset("green"))
    dt = time.perf_counter() - t0
    d = rep.test("fractional-moment").details
    ok = d["slope"] < 0 and d["r_squared"] >= 0.9 and dt < 300
    assert criterion(9, "fractional-moment decay", ok,
                     f"slope={d['slope']:.4f} R^2={d['r_squared']:.4f} time={dt:.1f}s")


def test_criterion_10_continuum(criterion):
    ind = run_ensemble(ExperimentConfig(command="independence", E=CONTINUUM_E,
                                        E_prime=CONTINUUM_E_PRIME, trials=2000, points=True,
                                        **CONTINUUM))
    t = ind.test("independence")
    n_e = ind.dos["E"]["value"]
    gaps_e = [g for r in ind.records for g in r.gaps]
    ks_e = sps.kstest(gaps_e, "expon", args=(0.0, 1.0 / n_e)).statistic
    poi = run_ensemble(ExperimentConfig(command="poisson", E=CONTINUUM_E_PRIME,
                                        E_prime=CONTINUUM_E, trials=2000, points=True,
                                        A=[[-2.0, 2.0]], **CONTINUUM))
    ks_ep = poi.test("poisson").details["gaps"]["ks"]
    ok = independence_ok(t) and ks_e <= 0.07 and ks_ep <= 0.07
    assert criterion(10, "continuum backend", ok,
                     f"E={CONTINUUM_E}, E'={CONTINUUM_E_PRIME}: gap KS {ks_e:.4f} / {ks_ep:.4f}; "
                     f"{independence_summary(t)}")


def test_criterion_11_determinism(criterion, tmp_path):
    configs = [preset("independence", sides=[512, 1024], trials=300),
               preset("poisson", sides=[1024], trials=100),
               ExperimentConfig(**{**CONTINUUM, "sides": [64.0], "dos_trials": 40},
                                command="poisson", trials=40, points=True, A=[[-2.0, 2.0]],
                                E=0.5)]
    same = True
    for k, cfg in enumerate(configs):
        outs = []
        for j, threads in enumerate((1, 1, 2)):
            d = tmp_path / f"{k}-{j}"
            emit_report(run_ensemble(cfg, threads=threads), d)
            outs.append(((d / "report.json").read_bytes(), (d / "trials.csv").read_bytes()))
        same &= outs[0] == outs[1] == outs[2]
    assert criterion(11, "determinism", same,
                     f"{len(configs)} configs: serial x2 and 2-process runs byte-identical")


def test_criterion_12_null_calibration(criterion):
    rng = np.random.default_rng(20240612)
    reps, level = 200, 0.01
    rejects = {"chi-square GOF": 0, "KS gaps": 0, "Pearson": 0, "contingency": 0}
    for _ in range(reps):
        counts = rng.poisson(1.5, 1000)
        rejects["chi-square GOF"] += poisson_chi_square(counts, 1.5)["p_value"] < level
        gaps = rng.exponential(1 / 0.156, 1000)
        rejects["KS gaps"] += sps.kstest(gaps, "expon", args=(0.0, 1 / 0.156)).pvalue < level
        x, y = rng.poisson(0.6, 2000), rng.poisson(0.6, 2000)
        rejects["Pearson"] += pearson(x, y)["p_value"] < level
        rejects["contingency"] += contingency_test(x, y)["p_value"] < level
    tol = 3 * math.sqrt(level * (1 - level) / reps)
    ok = all(abs(k / reps - level) <= tol for k in rejects.values())
    summary = ", ".join(f"{name} {k}/{reps}" for name, k in rejects.items())
    assert criterion(12, "null calibration", ok, f"{summary} (allowed rate {level} +- {tol:.4f})")
