"""Scenario execution, sweeps and report files.

A run produces one :class:`PointResult` per evaluated configuration: a
single point for ``run``, one per sweep value (and per test frequency)
for ``sweep``. Each point holds a :class:`~qlut.metrics.MetricsReport` per
pipeline stage:

``input``
    analog composite (desired + interferer + noise);
``quantized``
    midpoint reconstruction of the converter codes;
``<kind>``
    table estimate for each estimator kind;
``<kind>+requantized``
    dithered (or plain) requantization of that estimate.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .config import RunConfig, with_overrides
from .estimators import EstimatorConfig, make_estimator
from .lut import (CorrectionPipeline, LutTable, build_lut, correct_stream, load_lut, save_lut,
                  sliding_windows, window_index)
from .quantizer import apply_inl, make_uniform_midriser
from .signals import (BpskParams, LfmParams, PriorSpec, ScenarioModel, ToneParams, assemble_input,
                      bpsk_symbols, known_prior, realize)

logger = logging.getLogger(__name__)

REPORT_VERSION = 1


# ------------------------------------------------------------ report types

@dataclass
class PointResult:
    label: dict
    stages: dict
    fallback: dict = field(default_factory=dict)
    table_entries: dict = field(default_factory=dict)
    scenario_hash: str = ""
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "stages": {k: v.to_dict() for k, v in self.stages.items()},
            "fallback": self.fallback,
            "table_entries": self.table_entries,
            "scenario_hash": self.scenario_hash,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PointResult":
        stages = {k: metrics.MetricsReport.from_dict(v) for k, v in d["stages"].items()}
        return cls(d["label"], stages, d["fallback"], d["table_entries"], d["scenario_hash"], d["error"])


@dataclass
class RunReport:
    """Everything a run measured, plus the configuration echo and seeds.

    Wall-clock times are kept in :attr:`timing`, which is written to a
    separate file so that reports of identical runs are byte-identical.
    """

    config: dict
    seeds: dict
    sweep_axis: str
    points: list
    timing: dict = field(default_factory=dict)
    version: int = REPORT_VERSION

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "config": self.config,
            "seeds": self.seeds,
            "sweep_axis": self.sweep_axis,
            "points": [p.to_dict() for p in self.points],
        }

    @classmethod
    def from_dict(cls, d: dict, timing: dict | None = None) -> "RunReport":
        return cls(d["config"], d["seeds"], d["sweep_axis"],
                   [PointResult.from_dict(p) for p in d["points"]], timing or {}, d["version"])

    def __eq__(self, other):
        if not isinstance(other, RunReport):
            return NotImplemented
        return _canonical(self.to_dict()) == _canonical(other.to_dict())

    @property
    def stages(self) -> dict:
        """Stages of the first point (the whole result for a plain run)."""
        return self.points[0].stages


def _canonical(d) -> str:
    return json.dumps(d, sort_keys=True, allow_nan=True)


# ------------------------------------------------------------ scenario build

def build_quantizer(cfg: RunConfig):
    q = make_uniform_midriser(cfg.bits)
    if cfg.inl is not None:
        q = apply_inl(q, cfg.inl)
    return q


def _desired(cfg: RunConfig, frequency: float | None = None):
    d = dict(cfg.desired)
    if frequency is not None:
        d["frequency"] = frequency
    if cfg.desired_kind == "bpsk":
        return BpskParams(d["amplitude"], d["frequency"], d["phase"], d["tau"], d["offset"])
    return ToneParams(d["amplitude"], d["frequency"], d["phase"])


def _interferer(cfg: RunConfig):
    z = cfg.interferer
    if z is None:
        return None
    if cfg.interferer_kind == "lfm":
        return LfmParams(z["amplitude"], z["frequency"], z["phase"], z["sweep"], z["period"])
    return ToneParams(z["amplitude"], z["frequency"], z["phase"])


def build_scenario(cfg: RunConfig, frequency: float | None = None,
                   window: int | None = None) -> ScenarioModel:
    """Scenario model; the prior follows ``cfg.prior`` with known values elsewhere.

    ``frequency`` replaces the desired frequency of the signal only; the
    prior stays the one the table was trained for.
    """
    q = build_quantizer(cfg)
    train = _desired(cfg)
    z = _interferer(cfg)
    kp = known_prior(train, cfg.sigma, z)
    p = cfg.prior
    prior = PriorSpec(
        amplitude=p["amplitude"] or kp.amplitude,
        frequency=p["frequency"] or kp.frequency,
        sigma=cfg.sigma,
        interferer_amplitude=(p["interferer_amplitude"] or kp.interferer_amplitude) if z is not None else None,
        interferer_frequency=(p["interferer_frequency"] or kp.interferer_frequency) if z is not None else None,
    )
    desired = _desired(cfg, frequency)
    return ScenarioModel(desired, q, cfg.window if window is None else window, prior, cfg.sigma, z)


def estimator_config(cfg: RunConfig, kind: str) -> EstimatorConfig:
    return EstimatorConfig(kind=kind, quad=cfg.quad, tie_break=cfg.tie_break, bpsk_mode=cfg.bpsk_mode,
                           map_prior=cfg.map_prior, table_budget_mb=cfg.table_budget_mb)


def scenario_hash(s: ScenarioModel, ecfg: EstimatorConfig) -> str:
    """Digest of everything a table entry depends on."""
    q = s.quantizer
    doc = {
        "bits": q.bits,
        "thresholds": [float(t) for t in q.interior],
        "levels": [float(v) for v in q.levels],
        "window": s.window,
        "sigma": float(s.sigma),
        "prior": {
            "amplitude": s.prior.amplitude,
            "frequency": s.prior.frequency,
            "interferer_amplitude": s.prior.interferer_amplitude,
            "interferer_frequency": s.prior.interferer_frequency,
        },
        "desired_kind": s.desired_kind,
        "tau": getattr(s.desired, "tau", None),
        "estimator": ecfg.describe(),
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


_TABLE_CACHE: dict = {}


def get_table(s: ScenarioModel, ecfg: EstimatorConfig, mode: str = "memoized",
              cache_dir: str | None = None) -> LutTable:
    """Table for ``(s, ecfg)``, reusing in-process and on-disk caches."""
    h = scenario_hash(s, ecfg)
    key = (h, mode)
    if key in _TABLE_CACHE:
        return _TABLE_CACHE[key]
    table = None
    path = Path(cache_dir) / f"{h}-{ecfg.kind}-{mode}.lut" if cache_dir else None
    if path is not None and path.exists():
        table = load_lut(path, factory=lambda: make_estimator(s, ecfg))
        logger.info("loaded table %s (%d entries)", path, len(table))
    if table is None:
        table = build_lut(s, ecfg, mode, scenario_hash=h)
    _TABLE_CACHE[key] = table
    return table


def clear_table_cache():
    _TABLE_CACHE.clear()


# ------------------------------------------------------------ metrics

def stage_metrics(x, clean, s: ScenarioModel, cfg: RunConfig, start: int) -> metrics.MetricsReport:
    """Figures of merit for one stage, ignoring the first ``start`` samples."""
    x = np.asarray(x, dtype=float)[start:]
    ref = np.asarray(clean, dtype=float)[start:]
    r = metrics.MetricsReport(warmup_discarded=start)
    r.mse_db = metrics.mse_db(ref, x)
    d = s.desired
    if s.desired_kind == "tone":
        r.sfdr_dbc = metrics.sfdr_dbc(x, d.frequency, cfg.sfdr_offset)
    if s.desired_kind == "bpsk":
        offset = start + d.offset
        phase = d.phase + 2 * math.pi * d.frequency * start
        sym = metrics.demod_bpsk(x, d.frequency, phase, d.tau, offset, amplitude=d.amplitude)
        first, count = metrics.symbol_span(x.size, d.tau, offset)
        per, rms = metrics.evm_db(sym, bpsk_symbols(d, first, count))
        r.evm_db = [float(v) for v in per]
        r.evm_rms_db = rms
        if x.size >= 4 * d.tau:
            r.cfo_estimate = metrics.cfo_estimate(x, d.frequency, d.tau, cfg.cfo_bandwidth)
            r.cfo_ratio_db = metrics.cfo_ratio(x, d.frequency, d.tau, cfg.cfo_bandwidth)
    f, p = metrics.psd(x, cfg.psd_segment)
    r.psd_freq = [float(v) for v in f]
    r.psd_db = [float(v) for v in p]
    if cfg.spectrogram:
        sf, st, sp = metrics.spectrogram(x, cfg.psd_segment, cfg.psd_segment)
        r.spectrogram_freq = [float(v) for v in sf]
        r.spectrogram_time = [float(v) + start for v in st]
        r.spectrogram_db = [[float(v) for v in row] for row in sp]
    return r


# ------------------------------------------------------------ execution

def seeds_for(cfg: RunConfig) -> dict:
    """Signal and dither seeds derived from the master seed.

    Every sweep point uses the same streams (common random numbers), so
    differences between points come from the swept parameter only.
    """
    ss = np.random.SeedSequence(cfg.seed)
    sig, dith = ss.spawn(2)
    return {
        "master": cfg.seed,
        "signal": int(sig.generate_state(1, np.uint64)[0]),
        "dither": int(dith.generate_state(1, np.uint64)[0]),
    }


def run_point(cfg: RunConfig, label: dict | None = None, tables: dict | None = None) -> list:
    """Evaluate one configuration; returns one :class:`PointResult` per test frequency."""
    seeds = seeds_for(cfg)
    freqs = cfg.test_frequencies or [None]
    base = build_scenario(cfg)
    N = cfg.window
    requant = make_uniform_midriser(cfg.bits)
    mode = cfg.table_mode
    luts = {}
    for kind in cfg.kinds:
        if N == 0:
            luts[kind] = None
            continue
        ecfg = estimator_config(cfg, kind)
        luts[kind] = get_table(base, ecfg, mode, cfg.cache_dir)
        if tables is not None:
            tables[kind] = luts[kind]
    out = []
    for f in freqs:
        s = build_scenario(cfg, frequency=f)
        rng = np.random.default_rng(seeds["signal"])
        s = realize(s, rng, cfg.samples)
        clean, comp, codes = assemble_input(s, rng, cfg.samples)
        start = max(N - 1, 0) if cfg.discard_warmup else 0
        stages = {
            "input": stage_metrics(comp, clean, s, cfg, start),
            "quantized": stage_metrics(s.quantizer.reconstruct(codes), clean, s, cfg, start),
        }
        fallback, entries = {}, {}
        for kind in cfg.kinds:
            p = CorrectionPipeline(luts[kind], s.quantizer, requant, cfg.dither, seeds["dither"])
            est, req = correct_stream(p, codes)
            stages[kind] = stage_metrics(est, clean, s, cfg, start)
            stages[f"{kind}+requantized"] = stage_metrics(requant.reconstruct(req), clean, s, cfg, start)
            if luts[kind] is not None:
                used = np.unique(window_index(sliding_windows(codes, N), cfg.bits))
                entries[kind] = int(used.size)
                fallback[kind] = int(luts[kind].fallback_mask(used).sum())
            else:
                entries[kind] = fallback[kind] = 0
        lab = dict(label or {})
        if f is not None:
            lab["test_frequency"] = f
        if cfg.desired_kind == "bpsk":
            lab["bpsk_offset"] = int(s.desired.offset)
        h = scenario_hash(base, estimator_config(cfg, cfg.kinds[0])) if N > 0 else ""
        out.append(PointResult(lab, stages, fallback, entries, h))
    if cfg.cache_dir and N > 0:
        Path(cfg.cache_dir).mkdir(parents=True, exist_ok=True)
        for kind, table in luts.items():
            save_lut(table, Path(cfg.cache_dir) / f"{table.scenario_hash}-{kind}-{mode}.lut")
    return out


def run_scenario(cfg: RunConfig, tables: dict | None = None) -> RunReport:
    """Run a single configuration (any sweep axis in ``cfg`` is ignored)."""
    t0 = time.perf_counter()
    points = run_point(cfg, tables=tables)
    return RunReport(cfg.raw, seeds_for(cfg), "none", points,
                     {"total_s": time.perf_counter() - t0})


def point_overrides(cfg: RunConfig, value: float) -> dict:
    """Raw-config overrides that set sweep axis ``cfg.sweep_axis`` to ``value``."""
    axis = cfg.sweep_axis
    if axis == "N":
        return {"estimator": {"window": int(value)}}
    if axis == "sigma":
        return {"sigma": value}
    if axis == "F":
        return {"desired": {"frequency": value}}
    if axis == "A":
        return {"desired": {"amplitude": value}}
    if axis == "tau":
        return {"desired": {"tau": int(value)}}
    if axis == "SIR":
        # equal-form waveforms: E[X^2]/E[Z^2] = A^2 / A_z^2
        return {"interferer": {"amplitude": cfg.desired["amplitude"] * 10 ** (-value / 20)}}
    if axis == "training-bandwidth":
        fc = cfg.desired["frequency"]
        return {"prior": {"frequency": [max(0.0, fc - value / 2), min(0.5, fc + value / 2)]}}
    raise ValueError(f"no sweep axis set (got {axis!r})")


def _sweep_worker(args):
    raw_cfg, value = args
    from .config import parse_config

    cfg = parse_config(raw_cfg)
    label = {cfg.sweep_axis: value}
    t0 = time.perf_counter()
    try:
        pcfg = with_overrides(cfg, point_overrides(cfg, value))
        pts = run_point(pcfg, label)
    except Exception as exc:  # recorded per point, the sweep continues
        logger.warning("sweep point %s=%s failed: %s", cfg.sweep_axis, value, exc)
        pts = [PointResult(label, {}, error=f"{type(exc).__name__}: {exc}")]
    return pts, time.perf_counter() - t0


def sweep(cfg: RunConfig, workers: int | None = None) -> RunReport:
    """Run every value of the configured sweep axis.

    With ``workers > 1`` points run in spawned processes, so scripts that
    call this need the usual ``if __name__ == "__main__":`` guard.
    """
    if cfg.sweep_axis == "none":
        raise ValueError("sweep needs a sweep axis in the configuration")
    workers = workers or cfg.workers
    jobs = [(cfg.raw, v) for v in cfg.sweep_values]
    t0 = time.perf_counter()
    if workers > 1:
        # forked children inherit numba's thread pool state and can die; spawn is safe
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
            results = list(ex.map(_sweep_worker, jobs))
    else:
        results = [_sweep_worker(j) for j in jobs]
    points, timing = [], {"points_s": []}
    for pts, dt in results:
        points.extend(pts)
        timing["points_s"].append(dt)
    timing["total_s"] = time.perf_counter() - t0
    return RunReport(cfg.raw, seeds_for(cfg), cfg.sweep_axis, points, timing)


# ------------------------------------------------------------ outputs

SCALARS = ("mse_db", "sfdr_dbc", "evm_rms_db", "cfo_estimate", "cfo_ratio_db")


def _fmt(v):
    return "" if v is None else repr(float(v))


def emit_outputs(r: RunReport, out_dir, tables: dict | None = None) -> list:
    """Write report, tables of plot data and (optionally) LUT files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "report.json"
    path.write_text(json.dumps(r.to_dict(), sort_keys=True, indent=1, allow_nan=True) + "\n")
    written.append(path)
    path = out / "timing.json"
    path.write_text(json.dumps(r.timing, sort_keys=True, indent=1) + "\n")
    written.append(path)

    multi = len(r.points) > 1
    for i, p in enumerate(r.points):
        if p.error is not None or not p.stages:
            continue
        sfx = f"_p{i:03d}" if multi else ""
        names = list(p.stages)
        first = p.stages[names[0]]
        path = out / f"psd{sfx}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frequency"] + names)
            for k, f in enumerate(first.psd_freq):
                w.writerow([_fmt(f)] + [_fmt(p.stages[n].psd_db[k]) for n in names])
        written.append(path)
        if first.evm_db is not None:
            path = out / f"evm{sfx}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["symbol"] + names)
                for k in range(len(first.evm_db)):
                    w.writerow([k] + [_fmt(p.stages[n].evm_db[k]) for n in names])
            written.append(path)
        for n in names:
            st = p.stages[n]
            if st.spectrogram_db is None:
                continue
            path = out / f"spectrogram{sfx}_{n.replace('+', '_')}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["frequency"] + [_fmt(t) for t in st.spectrogram_time])
                for f, row in zip(st.spectrogram_freq, st.spectrogram_db):
                    w.writerow([_fmt(f)] + [_fmt(v) for v in row])
            written.append(path)

    if r.sweep_axis != "none" or multi:
        keys = sorted({k for p in r.points for k in p.label})
        path = out / "sweep.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys + ["stage"] + list(SCALARS) + ["error"])
            for p in r.points:
                lab = [_fmt(p.label.get(k)) for k in keys]
                if p.error is not None:
                    w.writerow(lab + [""] + [""] * len(SCALARS) + [p.error])
                    continue
                for n, st in p.stages.items():
                    w.writerow(lab + [n] + [_fmt(getattr(st, m)) for m in SCALARS] + [""])
        written.append(path)

    for kind, table in (tables or {}).items():
        if table is None:
            continue
        name = "table.lut" if len(tables) == 1 else f"table_{kind}.lut"
        written.append(save_lut(table, out / name))
    return written


def load_report(out_dir) -> RunReport:
    out = Path(out_dir)
    d = json.loads((out / "report.json").read_text())
    timing_path = out / "timing.json"
    timing = json.loads(timing_path.read_text()) if timing_path.exists() else {}
    return RunReport.from_dict(d, timing)
