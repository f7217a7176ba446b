"""Experiment configuration, orchestration, sweeps and result persistence.

A run writes three files into its output directory:

``series.csv``
    columns ``step, mean_n, var_n, energy, participation_ratio, edge_mass``
``final_state.csv``
    the last state (``n, probability`` or ``I, theta`` for the classical ensemble)
``summary.json``
    schema version, code version, the full config and the analysis summary

Every file is written to a temporary name and renamed into place.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from kicksim import __version__
from kicksim.bessel import DEFAULT_TAIL_TOL, build_kick_kernel
from kicksim.classical import evolve_classical, init_ensemble
from kicksim.errors import AnalysisError, ConfigurationError, KicksimError
from kicksim.measured import delta_distribution, ensemble_series, evolve_rate, run_measured_ensemble
from kicksim.model import (
    ActionLattice,
    Deterministic,
    KickedSystem,
    PerStepRandom,
    StaticRandom,
)
from kicksim.observables import (
    COLUMNS,
    DEFAULT_FIT_WINDOW,
    ObservableSeries,
    Regime,
    SeriesRecorder,
    break_time_estimate,
    diffusion_fit,
    distribution_moments,
    localization_length_fit,
)
from kicksim.quantum import DEFAULT_EDGE_THRESHOLD, default_stride, evolve_quantum, initial_delta_state

SCHEMA_VERSION = "1.0"
OUTPUT_DIR_ENV = "KICKSIM_OUTPUT_DIR"

_QUANTUM_REGIMES = {
    Regime.QUANTUM_DETERMINISTIC,
    Regime.QUANTUM_STATIC_RANDOM,
    Regime.QUANTUM_PER_STEP_RANDOM,
}


class ComparisonError(KicksimError, ValueError):
    """Bundles that cannot be compared (different K or T)."""


def derive_seed(seed: int, *keys: int) -> int:
    """Child seed for a realization, trajectory block or sweep cell."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    system: KickedSystem = field(default_factory=KickedSystem)
    regime: Regime = Regime.QUANTUM_DETERMINISTIC
    n_min: int = -2048
    n_max: int = 2048
    n0: int = 0
    steps: int = 1000
    meas_period: int = 1
    trajectories: int = 1000
    ensemble_size: int = 100_000
    realizations: int = 1
    seed: int = 0
    stride: Optional[int] = None
    tail_tol: float = DEFAULT_TAIL_TOL
    edge_threshold: float = DEFAULT_EDGE_THRESHOLD
    fit_window: tuple = DEFAULT_FIT_WINDOW
    method: str = "direct"
    output: Optional[str] = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "regime", Regime(self.regime))
        except ValueError:
            names = ", ".join(r.value for r in Regime)
            raise ConfigurationError(f"regime: unknown regime {self.regime!r} (one of {names})")
        object.__setattr__(self, "fit_window", tuple(int(v) for v in self.fit_window))
        self.validate()

    def validate(self):
        def need(cond, name, msg):
            if not cond:
                raise ConfigurationError(f"{name}: {msg}")

        need(isinstance(self.system, KickedSystem), "system", "must be a KickedSystem")
        for name in ("n_min", "n_max", "n0", "steps", "meas_period", "trajectories",
                     "ensemble_size", "realizations", "seed"):
            need(isinstance(getattr(self, name), (int, np.integer)) and not isinstance(
                getattr(self, name), bool), name, "must be an integer")
        need(self.n_min <= 0 <= self.n_max, "n_min/n_max", "lattice must contain n=0")
        need(self.n_min <= self.n0 <= self.n_max, "n0", "must lie on the lattice")
        need(self.steps >= 0, "steps", "must be >= 0")
        need(self.meas_period >= 1, "meas_period", "must be >= 1")
        need(self.trajectories >= 1, "trajectories", "must be >= 1")
        need(self.ensemble_size >= 1, "ensemble_size", "must be >= 1")
        need(self.realizations >= 1, "realizations", "must be >= 1")
        need(self.seed >= 0, "seed", "must be >= 0")
        need(self.stride is None or self.stride >= 1, "stride", "must be >= 1")
        need(0 < self.tail_tol <= 1e-8, "tail_tol", "must lie in (0, 1e-8]")
        need(0 < self.edge_threshold < 1, "edge_threshold", "must lie in (0, 1)")
        need(len(self.fit_window) == 2 and self.fit_window[0] <= self.fit_window[1],
             "fit_window", "must be [first_step, last_step]")
        need(self.method in ("direct", "fft"), "method", "must be 'direct' or 'fft'")

    @property
    def lattice(self) -> ActionLattice:
        return ActionLattice(self.n_min, self.n_max)

    @property
    def record_stride(self) -> int:
        return self.stride if self.stride is not None else default_stride(self.steps)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["system"] = self.system.to_dict()
        d["regime"] = self.regime.value
        d["fit_window"] = list(self.fit_window)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"{unknown[0]}: unknown config field")
        if "system" in data:
            if not isinstance(data["system"], dict):
                raise ConfigurationError("system: must be an object")
            try:
                data["system"] = KickedSystem.from_dict(data["system"])
            except ValueError as exc:
                if isinstance(exc, ConfigurationError):
                    raise
                raise ConfigurationError(f"system: {exc}") from exc
        if "fit_window" in data:
            data["fit_window"] = tuple(data["fit_window"])
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config: invalid JSON ({exc})") from exc

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """Copy with some fields replaced; system fields may be given flat.

        ``K``/``kick_strength`` and ``T``/``period`` address the system, ``s`` is an
        alias for ``meas_period``.
        """
        aliases = {"K": "kick_strength", "T": "period", "s": "meas_period"}
        sys_fields = {"kick_strength", "period", "kick_convention"}
        top, sysd = {}, {}
        for key, val in kw.items():
            key = aliases.get(key, key)
            if key in sys_fields:
                sysd[key] = val
            else:
                top[key] = val
        if sysd:
            system = self.system.to_dict()
            system.update(sysd)
            top["system"] = KickedSystem.from_dict(system)
        try:
            return dataclasses.replace(self, **top)
        except TypeError as exc:
            raise ConfigurationError(f"override: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"config: cannot read {path} ({exc})") from exc
    return ExperimentConfig.from_json(text)


# --- persistence ---------------------------------------------------------------


def atomic_write(path, data: str | bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def series_to_csv(series: ObservableSeries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for step, m in zip(series.steps, series.rows):
        w.writerow([step] + [_fmt(getattr(m, c)) for c in COLUMNS[1:]])
    return buf.getvalue()


def series_from_csv(text: str, regime, period=1.0) -> ObservableSeries:
    from kicksim.observables import Moments

    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != COLUMNS:
        raise ConfigurationError(f"series CSV must have header {','.join(COLUMNS)}")
    series = ObservableSeries(Regime(regime), period)
    for r in rows[1:]:
        series.append(int(r[0]), Moments(*(float(x) for x in r[1:])))
    return series


def _final_state_csv(final) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if "actions" in final:
        w.writerow(["I", "theta"])
        for a, t in zip(final["actions"], final["angles"]):
            w.writerow([_fmt(a), _fmt(t)])
    else:
        w.writerow(["n", "probability"])
        for n, p in zip(final["ns"], final["probs"]):
            if p != 0:
                w.writerow([int(n), _fmt(p)])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


@dataclass
class ResultBundle:
    config: ExperimentConfig
    series: ObservableSeries
    final: dict
    summary: dict

    def payload(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "code_version": __version__,
            "config": self.config.to_dict(),
            "summary": _jsonable(self.summary),
        }

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        atomic_write(out / "series.csv", series_to_csv(self.series))
        atomic_write(out / "final_state.csv", _final_state_csv(self.final))
        atomic_write(out / "summary.json", json.dumps(self.payload(), indent=2, sort_keys=True) + "\n")
        return out


def check_schema(version: str):
    major = str(version).split(".")[0]
    if major != SCHEMA_VERSION.split(".")[0]:
        raise ConfigurationError(
            f"schema_version {version} is not supported (expected major {SCHEMA_VERSION.split('.')[0]})"
        )


def load_bundle(out_dir) -> ResultBundle:
    out = Path(out_dir)
    try:
        payload = json.loads((out / "summary.json").read_text())
        series_text = (out / "series.csv").read_text()
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"bundle {out}: {exc}") from exc
    check_schema(payload.get("schema_version", "?"))
    config = ExperimentConfig.from_dict(payload["config"])
    series = series_from_csv(series_text, config.regime, config.system.period)
    return ResultBundle(config, series, {}, payload.get("summary", {}))


# --- running -------------------------------------------------------------------


def _quantum_system(config: ExperimentConfig, realization: int) -> KickedSystem:
    seed = derive_seed(config.seed, 1, realization)
    mode = {
        Regime.QUANTUM_DETERMINISTIC: Deterministic(),
        Regime.QUANTUM_STATIC_RANDOM: StaticRandom(seed),
        Regime.QUANTUM_PER_STEP_RANDOM: PerStepRandom(seed),
    }[config.regime]
    return dataclasses.replace(config.system, phase_mode=mode)


def _mean_series(all_series, regime, period) -> ObservableSeries:
    from kicksim.observables import Moments

    if len(all_series) == 1:
        return all_series[0]
    out = ObservableSeries(regime, period)
    for i, step in enumerate(all_series[0].steps):
        vals = np.mean([[getattr(s.rows[i], c) for c in COLUMNS[1:]] for s in all_series], axis=0)
        out.append(step, Moments(*map(float, vals)))
    return out


def _analyse(config, series, final) -> dict:
    K, T = config.system.kick_strength, config.system.period
    summary = {
        "regime": config.regime.value,
        "K": K,
        "T": T,
        "B_theory": K * K / (4 * T),
        "steps": config.steps,
        "final": dataclasses.asdict(series.rows[-1]) if series.rows else None,
    }
    lo, hi = config.fit_window
    try:
        fit = diffusion_fit(series, (lo, min(hi, config.steps)))
        summary["B_est"], summary["B_stderr"] = fit.B, fit.stderr
    except AnalysisError as exc:
        summary["B_est"] = summary["B_stderr"] = None
        summary["B_error"] = str(exc)
    try:
        bt = break_time_estimate(series)
        summary["break_time"] = dataclasses.asdict(bt)
        summary["no_suppression"] = not bt.suppressed
    except AnalysisError as exc:
        summary["break_time"] = None
        summary["no_suppression"] = None
        summary["break_time_error"] = str(exc)
    if "probs" in final:
        try:
            loc = localization_length_fit(final["ns"], final["probs"], center=config.n0)
            summary["localization"] = dataclasses.asdict(loc)
        except AnalysisError as exc:
            summary["localization"] = None
            summary["localization_error"] = str(exc)
    return summary


def run_experiment(config: ExperimentConfig, out_dir=None) -> ResultBundle:
    """Run one configured experiment; write it to ``out_dir`` if given.

    Raises:
        ConfigurationError: invalid configuration.
        KicksimError: dynamics or analysis failure, with regime context.
    """
    config.validate()
    system, lattice = config.system, config.lattice
    stride = config.record_stride
    try:
        kernel = build_kick_kernel(system.kick_strength, config.tail_tol)
        M = kernel.half_width
        if config.regime is Regime.CLASSICAL:
            rec = SeriesRecorder(config.regime, system, stride=stride)
            ens = init_ensemble(config.ensemble_size, float(config.n0), config.seed)
            ens = evolve_classical(ens, system, config.steps, rec)
            series = rec.finish()
            final = {"actions": ens.actions, "angles": ens.angles}
        elif config.regime in _QUANTUM_REGIMES:
            runs, probs = [], None
            for r in range(config.realizations):
                sys_r = _quantum_system(config, r)
                rec = SeriesRecorder(config.regime, sys_r, stride=stride, edge_width=M)
                st = evolve_quantum(
                    initial_delta_state(lattice, config.n0), kernel, sys_r, config.steps, rec,
                    method=config.method, edge_threshold=config.edge_threshold,
                )
                runs.append(rec.finish())
                probs = st.probabilities if probs is None else probs + st.probabilities
            series = _mean_series(runs, config.regime, system.period)
            final = {"ns": lattice.ns, "probs": probs / config.realizations}
        elif config.regime is Regime.RATE_EQUATION:
            rec = SeriesRecorder(config.regime, system, stride=stride, edge_width=M)
            p = evolve_rate(
                delta_distribution(lattice, config.n0), kernel, config.steps, rec,
                edge_threshold=config.edge_threshold,
            )
            series = rec.finish()
            final = {"ns": lattice.ns, "probs": p.probs}
        else:
            ens = run_measured_ensemble(
                lattice, kernel, system, config.steps, config.meas_period, config.trajectories,
                config.seed, n0=config.n0, edge_threshold=config.edge_threshold,
            )
            series = ensemble_series(ens, system, M, config.n0)
            if len(ens.steps):
                counts = ens.histogram(len(ens.steps) - 1)
                probs = counts / counts.sum()
            else:
                probs = delta_distribution(lattice, config.n0).probs
            final = {"ns": lattice.ns, "probs": probs}
    except ConfigurationError:
        raise
    except KicksimError as exc:
        raise type(exc)(f"[{config.regime.value}] {exc}") if not hasattr(exc, "step") else exc
    bundle = ResultBundle(config, series, final, _analyse(config, series, final))
    if out_dir is None:
        out_dir = config.output
    if out_dir is not None:
        bundle.write(out_dir)
    return bundle


# --- sweeps --------------------------------------------------------------------


@dataclass(frozen=True)
class SweepPlan:
    """A base config and named parameter grids, run as a cross product.

    Grid keys are :meth:`ExperimentConfig.with_overrides` names.  Unless
    ``seed`` is itself a grid, each cell gets a seed derived from the base
    seed and the cell index.
    """

    base: ExperimentConfig
    grid: dict = field(default_factory=dict)
    max_workers: int = 1

    def cells(self) -> list:
        if not self.grid:
            return []
        keys = list(self.grid)
        out = []
        for i, combo in enumerate(itertools.product(*(self.grid[k] for k in keys))):
            params = dict(zip(keys, combo))
            over = dict(params)
            if "seed" not in over:
                over["seed"] = derive_seed(self.base.seed, 2, i) % (2**31)
            out.append((params, self.base.with_overrides(**over)))
        return out

    @property
    def size(self) -> int:
        return math.prod(len(v) for v in self.grid.values()) if self.grid else 0

    def to_dict(self) -> dict:
        return {"base": self.base.to_dict(), "grid": self.grid, "max_workers": self.max_workers}

    @classmethod
    def from_dict(cls, data: dict) -> "SweepPlan":
        grid = data.get("grid", {})
        if not isinstance(grid, dict) or not all(isinstance(v, list) for v in grid.values()):
            raise ConfigurationError("grid: must map parameter names to lists")
        workers = int(data.get("max_workers", 1))
        if workers < 1:
            raise ConfigurationError("max_workers: must be >= 1")
        return cls(ExperimentConfig.from_dict(data.get("base", {})), grid, workers)


@dataclass
class SweepResult:
    rows: list
    failures: list

    @property
    def ok(self) -> bool:
        return not self.failures


def _headline(summary: dict) -> dict:
    bt = summary.get("break_time") or {}
    loc = summary.get("localization") or {}
    return {
        "B_est": summary.get("B_est"),
        "B_stderr": summary.get("B_stderr"),
        "t_star": bt.get("t_star"),
        "slope_ratio": bt.get("slope_ratio"),
        # an exponential fit to a spreading distribution is not a localization length
        "ell": loc.get("ell") if bt.get("suppressed") else None,
        "no_suppression": summary.get("no_suppression"),
    }


def _run_cell(args):
    index, params, config, out_dir = args
    cell_dir = None if out_dir is None else Path(out_dir) / f"cell_{index:04d}"
    try:
        bundle = run_experiment(config, cell_dir)
    except Exception as exc:  # noqa: BLE001 - a cell failure must not stop the sweep
        return index, params, None, f"{type(exc).__name__}: {exc}"
    return index, params, _jsonable(bundle.summary), None


def run_sweep(plan: SweepPlan, out_dir=None) -> SweepResult:
    """Run every grid cell; failed cells are reported, not raised."""
    cells = plan.cells()
    jobs = [(i, params, cfg, out_dir) for i, (params, cfg) in enumerate(cells)]
    if plan.max_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=plan.max_workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    rows, failures = [], []
    for index, params, summary, err in sorted(results, key=lambda r: r[0]):
        row = {"cell": index, **params}
        if err is None:
            row.update(_headline(summary), status="ok", error="")
        else:
            row.update(dict.fromkeys(_headline({}), None), status="failed", error=err)
            failures.append({"cell": index, "params": params, "error": err})
        rows.append(row)
    result = SweepResult(rows, failures)
    if out_dir is not None:
        write_sweep_table(result, Path(out_dir) / "sweep_table.csv")
        atomic_write(
            Path(out_dir) / "sweep.json",
            json.dumps(
                _jsonable({"schema_version": SCHEMA_VERSION, "code_version": __version__,
                           "plan": plan.to_dict(), "rows": rows, "failures": failures}),
                indent=2, sort_keys=True,
            ) + "\n",
        )
    return result


def write_sweep_table(result: SweepResult, path):
    buf = io.StringIO()
    keys = []
    for row in result.rows:
        keys.extend(k for k in row if k not in keys)
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for row in result.rows:
        w.writerow({k: ("" if v is None else v) for k, v in row.items()})
    atomic_write(path, buf.getvalue())


# --- regime comparison ---------------------------------------------------------


def _slope(series: ObservableSeries, lo, hi) -> Optional[float]:
    steps = series.column("step")
    sel = (steps >= lo) & (steps <= hi)
    if np.count_nonzero(sel) < 3:
        return None
    return float(stats.linregress(series.times[sel], series.column("var_n")[sel]).slope)


def compare_regimes(bundles) -> dict:
    """Align var_n(t) across bundles and report slope ratios.

    Each bundle contributes a fit-window slope (d var / dt over its config's
    fit window) and a late slope (second half of its series).  Ratios are
    given against the first Classical bundle when present, otherwise against
    the first bundle.
    """
    bundles = list(bundles)
    if not bundles:
        raise ComparisonError("nothing to compare")
    K, T = bundles[0].config.system.kick_strength, bundles[0].config.system.period
    for b in bundles[1:]:
        if (b.config.system.kick_strength, b.config.system.period) != (K, T):
            raise ComparisonError(
                f"bundles disagree on (K, T): {(K, T)} vs "
                f"{(b.config.system.kick_strength, b.config.system.period)}"
            )
    labels, seen = [], {}
    for b in bundles:
        name = b.config.regime.value
        seen[name] = seen.get(name, 0) + 1
        labels.append(name if seen[name] == 1 else f"{name}#{seen[name]}")

    common = sorted(set.intersection(*(set(b.series.steps) for b in bundles)))
    table = {"step": common}
    for label, b in zip(labels, bundles):
        idx = {s: i for i, s in enumerate(b.series.steps)}
        var = b.series.column("var_n")
        table[label] = [float(var[idx[s]]) for s in common]

    slopes, late = {}, {}
    for label, b in zip(labels, bundles):
        lo, hi = b.config.fit_window
        slopes[label] = _slope(b.series, lo, hi)
        last = b.series.steps[-1] if b.series.steps else 0
        late[label] = _slope(b.series, last / 2, last)

    ref = next((l for l, b in zip(labels, bundles) if b.config.regime is Regime.CLASSICAL), labels[0])

    def ratio(a, b):
        return None if a is None or not b else a / b

    report = {
        "K": K,
        "T": T,
        "reference": ref,
        "table": table,
        "slopes": slopes,
        "late_slopes": late,
        "ratios": {l: ratio(slopes[l], slopes[ref]) for l in labels},
        "late_ratios": {l: ratio(late[l], late[ref]) for l in labels},
    }

    def first(regime):
        return next((l for l, b in zip(labels, bundles) if b.config.regime is regime), None)

    cl, qd = first(Regime.CLASSICAL), first(Regime.QUANTUM_DETERMINISTIC)
    rate, mc = first(Regime.RATE_EQUATION), first(Regime.MONTE_CARLO_MEASURED)
    diag = {}
    if cl and rate:
        diag["rate_over_classical"] = ratio(slopes[rate], slopes[cl])
    if cl and mc:
        diag["measured_over_classical"] = ratio(slopes[mc], slopes[cl])
    if cl and qd:
        diag["quantum_late_over_classical"] = ratio(late[qd], slopes[cl])
    if rate and qd:
        diag["quantum_late_over_rate"] = ratio(late[qd], slopes[rate])
    report["diagnostics"] = diag
    return _jsonable(report)


def comparison_to_csv(report: dict) -> str:
    table = report["table"]
    keys = list(table)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for i in range(len(table["step"])):
        w.writerow([table[k][i] if k == "step" else _fmt(table[k][i]) for k in keys])
    return buf.getvalue()
