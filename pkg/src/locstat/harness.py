"""Experiment configuration, deterministic Monte Carlo execution and reports.

Trials are grouped in fixed-size chunks (``chunk`` trials each, independent of
the number of worker processes). Trial ``t`` at system size ``side`` uses the
seed ``derive_trial_seed(substream(master, f"side={side}"), t)``; each chunk
is a pure function of the config and its trial indices, and records are
merged in (side, trial) order, so serial and parallel runs produce identical
reports.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigurationError, IntervalError, NumericalError
from .model import (
    CONTINUUM,
    LATTICE,
    CubeSpec,
    DisorderSpec,
    RandomModel,
    build_subcube_hamiltonians,
    partition_subcubes,
)
from .pointprocess import (
    Window,
    eta_counts,
    min_scale_for_disjointness,
    points_and_successor_gaps_many,
    rescale_window,
    volume,
)
from .seeding import derive_trial_seed, substream
from .spectral import fractional_moment_estimate
from .stats import (
    DEFAULT_T_GRID,
    TestReport,
    decorrelation_check,
    estimate_dos,
    independence_test,
    minami_check,
    poisson_test,
    thresholds,
    wegner_check,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
COMMANDS = ("dos", "wegner", "minami", "poisson", "independence", "decorrelate", "green",
            "oracle-check")
MAX_EXCLUDED_FRACTION = 1e-3


@dataclass
class ExperimentConfig:
    command: str = "independence"
    flavor: str = LATTICE
    d: int = 1
    sides: list = field(default_factory=lambda: [2048])
    beta: float = 0.7
    ell: int | None = None
    h: float = 0.1
    bump: str = "indicator"
    disorder: dict = field(default_factory=lambda: {"family": "uniform", "W": 4.0})
    E: float = 0.0
    E_prime: float = 1.0
    A: list = field(default_factory=lambda: [[-2.0, 2.0]])
    B: list = field(default_factory=lambda: [[-2.0, 2.0]])
    wegner_lengths: list = field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0])
    subcubes: bool = True
    points: bool = False
    trials: int = 2000
    seed: int = 0
    volume_map: str = "volume"
    dos_bin: float = 0.1
    dos_trials: int = 400
    dos_values: dict | None = None
    dos_reference: dict | None = None
    t_grid: list = field(default_factory=lambda: list(DEFAULT_T_GRID))
    thresholds: dict = field(default_factory=dict)
    green: dict = field(default_factory=lambda: {
        "x": 0, "ys": list(range(5, 51)), "s": 0.5, "eps": 1e-3, "side": 128,
        "decay_r_squared": 0.9})
    oracle: dict = field(default_factory=lambda: {"instances": 500, "max_n": 200})
    chunk: int = 64
    out: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigurationError(f"unknown command {self.command!r}")
        if self.flavor not in (LATTICE, CONTINUUM):
            raise ConfigurationError(f"unknown flavor {self.flavor!r}")
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if not self.sides or any(b <= a for a, b in zip(self.sides, self.sides[1:])):
            raise ConfigurationError("system-size ladder must be nonempty and strictly increasing")
        if self.command in ("independence", "decorrelate") and self.E == self.E_prime:
            raise ConfigurationError("independence and decorrelation runs need E != E'")
        if self.flavor == CONTINUUM:
            self.subcubes = False
        if self.chunk < 1:
            raise ConfigurationError("chunk must be >= 1")
        thresholds(self.thresholds)
        Window.parse(self.A), Window.parse(self.B)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        base = asdict(cls(command=d.get("command", "independence")))
        for key in ("green", "oracle"):
            if key in d:
                d = dict(d, **{key: {**base[key], **d[key]}})
        return cls(**{**base, **d})

    def to_dict(self) -> dict:
        """Fully materialized config; the output directory is left out so it cannot change results."""
        d = asdict(self)
        d.pop("out")
        d["thresholds"] = thresholds(self.thresholds)
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def disorder_spec(self) -> DisorderSpec:
        d = dict(self.disorder)
        if d.get("family", "uniform") != "uniform":
            raise ConfigurationError("configs support the uniform family only")
        return DisorderSpec(family="uniform", W=float(d.get("W", 4.0)))

    def cube(self, side) -> CubeSpec:
        if self.flavor == LATTICE:
            return CubeSpec.lattice_side(self.d, int(side))
        return CubeSpec.continuum(self.d, side, self.h)

    def model(self, side) -> RandomModel:
        return RandomModel(self.cube(side), self.disorder_spec(), self.bump)


PRESETS = {
    "dos": {"sides": [2000], "disorder": {"family": "uniform", "W": 0.0}, "dos_bin": 0.05,
            "dos_trials": 200, "trials": 200, "subcubes": False,
            # free 1D lattice: n(E) = 1 / (pi sqrt(4 - E^2))
            "dos_reference": {"E": 1 / (2 * math.pi), "E_prime": 1 / (math.pi * math.sqrt(3))}},
    "wegner": {"sides": [2048], "ell": 64, "trials": 500, "A": [[-0.5, 0.5]]},
    "minami": {"sides": [512, 1024, 2048], "A": [[-0.5, 0.5]], "trials": 2000},
    "poisson": {"sides": [2048], "A": [[-5.0, 5.0]], "trials": 1000, "points": True,
                "subcubes": False},
    "independence": {"sides": [2048], "trials": 2000},
    "decorrelate": {"sides": [512, 1024, 2048], "trials": 2000},
    "green": {"trials": 500, "subcubes": False},
    "oracle-check": {},
}


def preset(command: str, **overrides) -> ExperimentConfig:
    if command not in PRESETS:
        raise ConfigurationError(f"unknown command {command!r}")
    return ExperimentConfig.from_dict({"command": command, **PRESETS[command], **overrides})


# ---------------------------------------------------------------- records and reports

@dataclass
class TrialRecord:
    trial: int
    seed: int
    L: float
    ell: int | None
    n_L: int | None
    V: float
    E: float
    Eprime: float
    eta_E_A: int
    eta_Eprime_B: int
    zeta_E_A: int | None = None
    zeta_Eprime_B: int | None = None
    subcube_E_A: list | None = None
    subcube_Eprime_B: list | None = None
    subcube_union: list | None = None
    grid_eta: list | None = None
    grid_zeta: list | None = None
    points: list | None = None
    gaps: list | None = None
    excluded: bool = False


CSV_COLUMNS = [f.name for f in dataclasses.fields(TrialRecord)]
_LIST_COLUMNS = {"subcube_E_A", "subcube_Eprime_B", "subcube_union", "grid_eta", "grid_zeta",
                 "points", "gaps"}
_INT_COLUMNS = {"trial", "seed", "ell", "n_L", "eta_E_A", "eta_Eprime_B", "zeta_E_A",
                "zeta_Eprime_B"}
_FLOAT_COLUMNS = {"L", "V", "E", "Eprime"}


def _cell(name, value) -> str:
    if value is None:
        return ""
    if name in _LIST_COLUMNS:
        return json.dumps(value, separators=(",", ":"))
    if name == "excluded":
        return "1" if value else "0"
    if name in _FLOAT_COLUMNS:
        return repr(float(value))
    return str(value)


def _parse_cell(name, text):
    if text == "":
        return None
    if name in _LIST_COLUMNS:
        return json.loads(text)
    if name == "excluded":
        return text == "1"
    if name in _INT_COLUMNS:
        return int(text)
    return float(text)


@dataclass
class Report:
    command: str
    config: dict
    config_hash: str
    version: str
    dos: dict = field(default_factory=dict)
    tests: list = field(default_factory=list)
    records: list = field(default_factory=list)
    exclusions: int = 0
    extras: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "version": self.version,
            "command": self.command,
            "config": self.config,
            "config_hash": self.config_hash,
            "dos": self.dos,
            "tests": [t.to_dict() for t in self.tests],
            "trials": len(self.records),
            "exclusions": self.exclusions,
            "extras": self.extras,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            w.writerow([_cell(name, getattr(r, name)) for name in CSV_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_json(cls, text: str, csv_text: str | None = None) -> "Report":
        d = json.loads(text)
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported report schema {d.get('schema_version')}")
        records = records_from_csv(csv_text) if csv_text is not None else []
        return cls(command=d["command"], config=d["config"], config_hash=d["config_hash"],
                   version=d["version"], dos=d["dos"],
                   tests=[TestReport.from_dict(t) for t in d["tests"]], records=records,
                   exclusions=d["exclusions"], extras=d["extras"])

    def test(self, name: str) -> TestReport:
        for t in self.tests:
            if t.name == name:
                return t
        raise KeyError(name)

    def sample(self, side) -> list:
        return [r for r in self.records if r.L == side and not r.excluded]


def records_from_csv(text: str) -> list:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return []
    header = rows[0]
    if header != CSV_COLUMNS:
        raise ConfigurationError("unexpected CSV header")
    return [TrialRecord(**{n: _parse_cell(n, v) for n, v in zip(header, row)}) for row in rows[1:]]


def _jsonable(x):
    """Canonicalize through JSON so in-memory reports equal their parsed form."""
    return json.loads(json.dumps(x))


def emit_report(report: Report, out_dir, formats=("csv", "json")) -> list[Path]:
    """Write trials.csv, report.json and (with "svg") figures into out_dir."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written = []

    def write(name, text):
        path = out / name
        try:
            path.write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        written.append(path)

    if "csv" in formats:
        write("trials.csv", report.to_csv())
    if "json" in formats:
        write("report.json", report.to_json())
    if "svg" in formats:
        from .figures import write_figures

        written.extend(write_figures(report, out))
    return written


# ---------------------------------------------------------------- trial execution

@dataclass(frozen=True)
class _SizePlan:
    config: ExperimentConfig
    side: float
    master: int
    V: float
    ell: int | None
    n_L: int | None
    A_E: Window
    B_Ep: Window
    union: Window | None
    grid: tuple


def _plan(config: ExperimentConfig, side) -> _SizePlan:
    cube = config.cube(side)
    V = volume(cube, config.volume_map)
    ell = n_L = None
    if config.subcubes:
        part = partition_subcubes(cube, config.beta, config.ell)
        ell, n_L = part.ell, part.n_L
    A_E = rescale_window(Window.parse(config.A), config.E, V)
    B_Ep = rescale_window(Window.parse(config.B), config.E_prime, V)
    union = A_E.union(B_Ep) if A_E.disjoint(B_Ep) else None
    grid = tuple(rescale_window(Window.centered(l), config.E, V) for l in config.wegner_lengths)
    return _SizePlan(config, side, substream(config.seed, f"side={side}"), V, ell, n_L,
                     A_E, B_Ep, union, grid)


def _trial_records(plan: _SizePlan, indices) -> list:
    cfg = plan.config
    model = cfg.model(plan.side)
    seeds = [derive_trial_seed(plan.master, t) for t in indices]
    pots = [model.potential(s) for s in seeds]
    ops = [model.build(p) for p in pots]
    windows = [plan.A_E, plan.B_Ep] + ([plan.union] if plan.union else []) + list(plan.grid)
    glob = eta_counts(ops, windows)
    sub = None
    if cfg.subcubes:
        sub_ops = [H for p in pots
                   for H in build_subcube_hamiltonians(model.cube, cfg.beta, p, cfg.ell)]
        sub = eta_counts(sub_ops, windows).reshape(len(ops), plan.n_L, len(windows))
    pts = gaps = None
    if cfg.points:
        upper = [model.spectral_bounds()[1]] * len(ops)
        pts, gaps = points_and_successor_gaps_many(ops, cfg.E, Window.parse(cfg.A), plan.V, upper)
    g0 = 3 if plan.union else 2
    records = []
    for i, (t, s) in enumerate(zip(indices, seeds)):
        rec = TrialRecord(trial=t, seed=s, L=float(plan.side), ell=plan.ell, n_L=plan.n_L,
                          V=plan.V, E=cfg.E, Eprime=cfg.E_prime, eta_E_A=int(glob[i, 0]),
                          eta_Eprime_B=int(glob[i, 1]),
                          grid_eta=glob[i, g0:].tolist())
        if sub is not None:
            rec.zeta_E_A = int(sub[i, :, 0].sum())
            rec.zeta_Eprime_B = int(sub[i, :, 1].sum())
            rec.subcube_E_A = sub[i, :, 0].tolist()
            rec.subcube_Eprime_B = sub[i, :, 1].tolist()
            if plan.union:
                rec.subcube_union = sub[i, :, 2].tolist()
            rec.grid_zeta = sub[i, :, g0:].sum(axis=0).tolist()
        if pts is not None:
            rec.points = pts[i].tolist()
            rec.gaps = gaps[i].tolist()
        records.append(rec)
    return records


def _run_chunk(args) -> list:
    plan, indices = args
    try:
        return _trial_records(plan, indices)
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        if len(indices) == 1:
            log.warning("trial %d excluded: %s", indices[0], exc)
            cfg = plan.config
            return [TrialRecord(trial=indices[0], seed=derive_trial_seed(plan.master, indices[0]),
                                L=float(plan.side), ell=plan.ell, n_L=plan.n_L, V=plan.V,
                                E=cfg.E, Eprime=cfg.E_prime, eta_E_A=0, eta_Eprime_B=0,
                                excluded=True)]
        return [r for t in indices for r in _run_chunk((plan, [t]))]


def run_trials(config: ExperimentConfig, threads: int = 1) -> list:
    """All trial records of the config, ordered by (side, trial)."""
    if config.trials < 1:
        raise ConfigurationError("trials must be >= 1")
    jobs = []
    for side in config.sides:
        plan = _plan(config, side)
        for start in range(0, config.trials, config.chunk):
            jobs.append((plan, list(range(start, min(config.trials, start + config.chunk)))))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_chunk, jobs))
    else:
        results = [_run_chunk(job) for job in jobs]
    records = [r for chunk in results for r in chunk]
    records.sort(key=lambda r: (r.L, r.trial))
    return records


# ---------------------------------------------------------------- aggregation

def _dos_values(config: ExperimentConfig) -> dict:
    if config.dos_values:
        return {k: {"value": float(v), "source": "config"} for k, v in config.dos_values.items()}
    model = config.model(config.sides[-1])
    out = {}
    for key, E in (("E", config.E), ("E_prime", config.E_prime)):
        est = estimate_dos(model, E, config.dos_bin, config.dos_trials,
                           seed=substream(config.seed, f"dos:{key}"),
                           volume_map=config.volume_map,
                           ci_level=thresholds(config.thresholds)["ci_level"])
        out[key] = est.to_dict() | {"source": "estimate"}
    return out


def _arr(records, name):
    return np.array([getattr(r, name) for r in records])


def aggregate(config: ExperimentConfig, records: list, dos: dict) -> list:
    thr = dict(config.thresholds)
    cmd = config.command
    prov = {"config_hash": config.hash(), "seed": config.seed}
    by_side = {side: [r for r in records if r.L == float(side) and not r.excluded]
               for side in config.sides}
    last = by_side[config.sides[-1]]
    nE = dos["E"]["value"]
    nEp = dos["E_prime"]["value"]
    lenA = Window.parse(config.A).length
    lenB = Window.parse(config.B).length
    tests = []
    if cmd == "dos":
        for key in ("E", "E_prime"):
            d = dos[key]
            ref = (config.dos_reference or {}).get(key)
            passed = None if ref is None else d["ci"][0] <= ref <= d["ci"][1]
            tests.append(TestReport(f"dos:{key}", d["value"], ci=tuple(d["ci"]),
                                    sample_size=d["trials"], passed=passed,
                                    details=d | {"reference": ref}, thresholds=thresholds(thr)))
    elif cmd == "wegner":
        for side, recs in by_side.items():
            n_L = recs[0].n_L
            counts = np.array([r.grid_zeta for r in recs], dtype=float) / n_L
            rep = wegner_check(config.wegner_lengths, counts, n_L, nE, thr)
            rep.name = f"wegner:L={side}"
            tests.append(rep)
    elif cmd == "minami":
        tests.append(minami_check(
            list(config.sides), [np.array([r.subcube_E_A for r in by_side[s]]) for s in config.sides],
            [by_side[s][0].n_L for s in config.sides], lenA, thr))
    elif cmd == "poisson":
        gaps = [g for r in last for g in (r.gaps or [])]
        tests.append(poisson_test(_arr(last, "eta_E_A"), gaps, lam=nE * lenA, rate=nE, thr=thr))
        if config.subcubes:
            rep = poisson_test(_arr(last, "zeta_E_A"), None, lam=nE * lenA, thr=thr)
            rep.name = "poisson:zeta"
            tests.append(rep)
    elif cmd == "independence":
        pairs = np.stack([_arr(last, "eta_E_A"), _arr(last, "eta_Eprime_B")], axis=1)
        tests.append(independence_test(pairs, config.t_grid, nE * lenA, nEp * lenB, thr))
        if config.subcubes:
            zp = np.stack([_arr(last, "zeta_E_A"), _arr(last, "zeta_Eprime_B")], axis=1)
            rep = independence_test(zp, config.t_grid, nE * lenA, nEp * lenB, thr)
            rep.name = "independence:zeta"
            tests.append(rep)
    elif cmd == "decorrelate":
        rep = decorrelation_check(
            list(config.sides),
            [np.array([r.subcube_E_A for r in by_side[s]]) for s in config.sides],
            [np.array([r.subcube_Eprime_B for r in by_side[s]]) for s in config.sides],
            [np.array([r.subcube_union for r in by_side[s]]) for s in config.sides],
            config.E, config.E_prime, thr)
        try:
            L0 = min_scale_for_disjointness(
                config.A, config.B, config.E, config.E_prime, config.d,
                volume_map=lambda s: volume(config.cube(s), config.volume_map),
                ladder=config.sides)
        except IntervalError:
            L0 = None
        rep.details["L0"] = L0
        tests.append(rep)
    for t in tests:
        t.provenance = prov
    return tests


def _green_report(config: ExperimentConfig):
    g = config.green
    cfg = dataclasses.replace(config, sides=[g["side"]])
    model = cfg.model(g["side"])
    ys = list(g["ys"])
    res = fractional_moment_estimate(model, g["x"], ys, config.E, g["eps"], g["s"],
                                     config.trials, seed=substream(config.seed, "green"),
                                     ci_level=thresholds(config.thresholds)["ci_level"])
    bound = g["eps"] ** (-g["s"])
    ok = (res.slope < 0 and res.r_squared >= g["decay_r_squared"]
          and bool(np.all(res.mean <= bound)))
    rep = TestReport("fractional-moment", res.slope, sample_size=config.trials, passed=ok,
                     details={"separations": res.separations, "mean": res.mean,
                              "ci_low": res.ci_low, "ci_high": res.ci_high,
                              "slope": res.slope, "intercept": res.intercept,
                              "decay_rate": res.decay_rate, "r_squared": res.r_squared,
                              "resolvent_bound": bound, "probe": res.probe, "s": g["s"],
                              "eps": g["eps"]},
                     thresholds=thresholds(config.thresholds),
                     provenance={"config_hash": config.hash(), "seed": config.seed})
    return rep, res


def oracle_check(instances: int = 500, max_n: int = 200, seed: int = 0) -> TestReport:
    """Counting and bisection against the dense oracle on random 1D and 2D Anderson instances."""
    from .model import build_lattice_hamiltonian, sample_potential
    from .spectral import count_in, dense_spectrum, eigenvalues_in

    rng = np.random.default_rng(seed)
    count_mismatch = 0
    max_err = 0.0
    side2 = int(math.isqrt(max_n))
    for i in range(instances):
        W = float(rng.uniform(0.5, 12.0))
        if i % 2 == 0:
            cube = CubeSpec.lattice_side(1, int(rng.integers(2, max_n // 2 + 1)) * 2)
        else:
            cube = CubeSpec.lattice_side(2, int(rng.integers(2, side2 + 1)))
        pot = sample_potential(DisorderSpec(W=W), cube, int(rng.integers(2 ** 63)))
        H = build_lattice_hamiltonian(cube, pot)
        ev = dense_spectrum(H)
        lo, hi = -2 * cube.d - W / 2, 2 * cube.d + W / 2
        for _ in range(5):
            a, b = np.sort(rng.uniform(lo - 0.5, hi + 0.5, 2))
            if count_in(H, a, b) != int(np.sum((ev > a) & (ev <= b))):
                count_mismatch += 1
        found = eigenvalues_in(H, lo - 1e-9, hi)
        if len(found) != len(ev):
            count_mismatch += 1
        else:
            max_err = max(max_err, float(np.max(np.abs(found - ev))))
    return TestReport("oracle", count_mismatch, sample_size=instances,
                      passed=count_mismatch == 0 and max_err <= 1e-9,
                      details={"count_mismatches": count_mismatch, "max_eigenvalue_error": max_err,
                               "max_n": max_n})


def run_ensemble(config: ExperimentConfig, threads: int = 1) -> Report:
    """Run the experiment described by ``config`` and aggregate its tests."""
    config.validate()
    report = Report(command=config.command, config=_jsonable(config.to_dict()),
                    config_hash=config.hash(), version=__version__)
    if config.command == "green":
        rep, _ = _green_report(config)
        report.tests = [rep]
        return report
    if config.command == "oracle-check":
        o = config.oracle
        report.tests = [oracle_check(o["instances"], o["max_n"], config.seed)]
        return report
    dos = _dos_values(config)
    records = run_trials(config, threads)
    excluded = sum(r.excluded for r in records)
    if excluded > MAX_EXCLUDED_FRACTION * len(records):
        raise NumericalError(f"{excluded} of {len(records)} trials failed numerically")
    report.dos = _jsonable(dos)
    report.records = records
    report.exclusions = excluded
    report.tests = [TestReport.from_dict(_jsonable(t.to_dict()))
                    for t in aggregate(config, records, dos)]
    return report
