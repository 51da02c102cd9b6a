"""Run configuration: YAML files with expression-valued numbers.

Any numeric field may be written as an arithmetic expression such as
``"5/16 - pi/1000"`` or ``"0.16 * delta"``. Available names are ``pi``,
``e`` and ``delta`` (the quantizer step ``2**(1 - bits)``).

Example
-------
.. code-block:: yaml

    scenario: tone
    samples: 100000
    bits: 3
    sigma: 0.16 * delta
    desired: {amplitude: 1 - delta/2, frequency: pi/10, phase: 0}
    estimator: {kinds: [ml], window: 12}
"""
from __future__ import annotations

import ast
import copy
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .likelihood import QuadratureSpec

SCENARIOS = ("tone", "bpsk", "tone+tone", "bpsk+tone", "bpsk+lfm")
SWEEP_AXES = ("none", "N", "sigma", "F", "A", "SIR", "tau", "training-bandwidth")

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.FloorDiv: operator.floordiv,
    ast.Mod: operator.mod,
}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_FUNCS = {"sqrt": math.sqrt, "log10": math.log10, "log": math.log, "exp": math.exp,
          "cos": math.cos, "sin": math.sin}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def evaluate(expr, names: dict | None = None, where: str = "value") -> float:
    """Evaluate a numeric literal or arithmetic expression safely."""
    if isinstance(expr, bool):
        raise ConfigError(f"{where}: expected a number, got {expr!r}")
    if isinstance(expr, (int, float)):
        return float(expr)
    if not isinstance(expr, str):
        raise ConfigError(f"{where}: expected a number or expression, got {expr!r}")
    env = {"pi": math.pi, "e": math.e}
    env.update(names or {})
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"{where}: cannot parse {expr!r}") from exc

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id not in env:
                raise ConfigError(f"{where}: unknown name {node.id!r} in {expr!r}")
            return float(env[node.id])
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return _UNARY[type(node.op)](ev(node.operand))
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ConfigError(f"{where}: unsupported syntax in {expr!r}")

    try:
        return float(ev(tree))
    except ZeroDivisionError as exc:
        raise ConfigError(f"{where}: division by zero in {expr!r}") from exc


def _range(raw, names, where):
    """A point ``x`` or an interval ``[lo, hi]``."""
    if raw is None:
        return None
    if isinstance(raw, (list, tuple)):
        if len(raw) != 2:
            raise ConfigError(f"{where}: interval needs two bounds")
        lo, hi = (evaluate(v, names, where) for v in raw)
    else:
        lo = hi = evaluate(raw, names, where)
    if lo > hi:
        raise ConfigError(f"{where}: lower bound {lo} exceeds upper bound {hi}")
    return (lo, hi)


@dataclass
class RunConfig:
    """Validated run configuration.

    ``raw`` keeps the mapping as written (expressions unevaluated) so that
    reports can echo it and a run can be repeated from the echo alone.
    """

    raw: dict
    scenario: str
    samples: int
    seed: int
    bits: int
    inl: list | None
    sigma: float
    desired: dict
    interferer: dict | None
    prior: dict
    kinds: list
    window: int
    bpsk_mode: str
    tie_break: str
    map_prior: str
    quad: QuadratureSpec
    table_mode: str
    table_budget_mb: float
    dither: bool
    sfdr_offset: float | None
    discard_warmup: bool
    psd_segment: int
    cfo_bandwidth: float | None
    spectrogram: bool
    test_frequencies: list | None
    sweep_axis: str
    sweep_values: list = field(default_factory=list)
    output: str | None = None
    workers: int = 1
    save_table: bool = False
    cache_dir: str | None = None

    @property
    def delta(self) -> float:
        return 2.0 ** (1 - self.bits)

    @property
    def has_interferer(self) -> bool:
        return "+" in self.scenario

    @property
    def desired_kind(self) -> str:
        return self.scenario.split("+")[0]

    @property
    def interferer_kind(self) -> str | None:
        return self.scenario.split("+")[1] if self.has_interferer else None


DEFAULTS = {
    "samples": 100_000,
    "seed": 0,
    "bits": 3,
    "inl": None,
    "sigma": "0.16 * delta",
    "dither": True,
    "estimator": {},
    "metrics": {},
    "sweep": {"axis": "none", "values": []},
    "workers": 1,
    "save_table": False,
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_config(raw: dict) -> RunConfig:
    """Validate a configuration mapping and evaluate its expressions."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    unknown = set(raw) - {"scenario", "samples", "seed", "bits", "inl", "sigma", "desired",
                          "interferer", "prior", "estimator", "dither", "metrics", "sweep",
                          "test_frequencies", "output", "workers", "save_table", "cache_dir",
                          "description"}
    if unknown:
        raise ConfigError(f"unknown top-level field(s): {sorted(unknown)}")
    c = _merge(DEFAULTS, raw)

    scenario = c.get("scenario")
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario: expected one of {SCENARIOS}, got {scenario!r}")
    bits = int(c["bits"])
    if not 1 <= bits <= 16:
        raise ConfigError("bits: must lie in 1..16")
    names = {"delta": 2.0 ** (1 - bits)}
    samples = int(evaluate(c["samples"], names, "samples"))
    if samples < 1000:
        raise ConfigError("samples: must be >= 1000")
    seed = int(c["seed"])
    if seed < 0:
        raise ConfigError("seed: must be a non-negative integer")
    sigma = evaluate(c["sigma"], names, "sigma")
    if sigma < 0:
        raise ConfigError("sigma: must be >= 0")
    inl = c.get("inl")
    if inl is not None:
        inl = [evaluate(v, names, f"inl[{i}]") for i, v in enumerate(inl)]
        if len(inl) != 2**bits - 1:
            raise ConfigError(f"inl: need {2**bits - 1} offsets for {bits} bits, got {len(inl)}")

    dk, ik = scenario.split("+")[0], (scenario.split("+")[1] if "+" in scenario else None)
    d_raw = c.get("desired") or {}
    desired = {
        "amplitude": evaluate(d_raw.get("amplitude", "1 - delta/2"), names, "desired.amplitude"),
        "frequency": evaluate(d_raw.get("frequency", "pi/10"), names, "desired.frequency"),
        "phase": evaluate(d_raw.get("phase", 0), names, "desired.phase"),
    }
    if dk == "bpsk":
        desired["tau"] = int(evaluate(d_raw.get("tau", 50), names, "desired.tau"))
        off = d_raw.get("offset")
        desired["offset"] = None if off is None else int(evaluate(off, names, "desired.offset"))
        if desired["tau"] < 1:
            raise ConfigError("desired.tau: must be >= 1")
    if not 0 <= desired["frequency"] <= 0.5:
        raise ConfigError("desired.frequency: must lie in [0, 0.5]")

    interferer = None
    if ik is not None:
        z_raw = c.get("interferer")
        if not z_raw:
            raise ConfigError(f"interferer: required for scenario {scenario!r}")
        interferer = {
            "amplitude": evaluate(z_raw.get("amplitude"), names, "interferer.amplitude"),
            "frequency": evaluate(z_raw.get("frequency"), names, "interferer.frequency"),
            "phase": evaluate(z_raw.get("phase", 0), names, "interferer.phase"),
        }
        if ik == "lfm":
            interferer["sweep"] = evaluate(z_raw.get("sweep", 0), names, "interferer.sweep")
            interferer["period"] = int(evaluate(z_raw.get("period", samples), names, "interferer.period"))
    elif c.get("interferer"):
        raise ConfigError(f"interferer: not used by scenario {scenario!r}")

    p_raw = c.get("prior") or {}
    prior = {
        "amplitude": _range(p_raw.get("amplitude"), names, "prior.amplitude"),
        "frequency": _range(p_raw.get("frequency"), names, "prior.frequency"),
        "interferer_amplitude": _range(p_raw.get("interferer_amplitude"), names, "prior.interferer_amplitude"),
        "interferer_frequency": _range(p_raw.get("interferer_frequency"), names, "prior.interferer_frequency"),
    }

    e = c["estimator"]
    kinds = e.get("kinds", e.get("kind", ["ml"]))
    kinds = [kinds] if isinstance(kinds, str) else list(kinds)
    for k in kinds:
        if k not in ("mmse", "ml", "map", "lmmse"):
            raise ConfigError(f"estimator.kinds: unknown estimator {k!r}")
    window = int(evaluate(e.get("window", 8), names, "estimator.window"))
    if window < 0:
        raise ConfigError("estimator.window: must be >= 0")
    bpsk_mode = e.get("bpsk_mode", "tone")
    if bpsk_mode not in ("tone", "exact"):
        raise ConfigError("estimator.bpsk_mode: expected 'tone' or 'exact'")
    if bpsk_mode == "exact" and dk == "bpsk" and window > desired["tau"]:
        raise ConfigError("estimator.bpsk_mode: exact mode needs window <= tau")
    q_raw = e.get("quadrature") or {}
    try:
        quad = QuadratureSpec(**{k: (float(v) if k == "refine_tol" else int(v)) for k, v in q_raw.items()})
    except TypeError as exc:
        raise ConfigError(f"estimator.quadrature: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"estimator.quadrature: {exc}") from exc
    table_mode = e.get("table_mode", "memoized")
    if table_mode not in ("memoized", "materialized"):
        raise ConfigError("estimator.table_mode: expected 'memoized' or 'materialized'")

    m = c["metrics"]
    sfdr_offset = m.get("sfdr_offset")
    sfdr_offset = None if sfdr_offset is None else evaluate(sfdr_offset, names, "metrics.sfdr_offset")
    cfo_bw = m.get("cfo_bandwidth")
    cfo_bw = None if cfo_bw is None else evaluate(cfo_bw, names, "metrics.cfo_bandwidth")

    tf = c.get("test_frequencies")
    if tf is not None:
        tf = [evaluate(v, names, f"test_frequencies[{i}]") for i, v in enumerate(tf)]
        if any(not 0 <= f <= 0.5 for f in tf):
            raise ConfigError("test_frequencies: values must lie in [0, 0.5]")

    sw = c["sweep"] or {}
    axis = str(sw.get("axis", "none"))
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep.axis: expected one of {SWEEP_AXES}, got {axis!r}")
    values = [evaluate(v, names, f"sweep.values[{i}]") for i, v in enumerate(sw.get("values") or [])]
    if axis != "none" and not values:
        raise ConfigError("sweep.values: required when a sweep axis is set")
    if axis == "N" and any(v < 0 or v != int(v) for v in values):
        raise ConfigError("sweep.values: N values must be non-negative integers")
    if axis == "tau" and any(v < 1 or v != int(v) for v in values):
        raise ConfigError("sweep.values: tau values must be positive integers")
    if axis == "sigma" and any(v < 0 for v in values):
        raise ConfigError("sweep.values: sigma values must be >= 0")
    if axis == "F" and any(not 0 <= v <= 0.5 for v in values):
        raise ConfigError("sweep.values: F values must lie in [0, 0.5]")
    if axis == "SIR" and ik is None:
        raise ConfigError("sweep.axis: SIR sweeps need an interferer scenario")
    if axis == "tau" and dk != "bpsk":
        raise ConfigError("sweep.axis: tau sweeps need a BPSK scenario")
    if axis == "training-bandwidth" and any(v < 0 for v in values):
        raise ConfigError("sweep.values: bandwidths must be >= 0")

    return RunConfig(
        raw=raw, scenario=scenario, samples=samples, seed=seed, bits=bits, inl=inl, sigma=sigma,
        desired=desired, interferer=interferer, prior=prior, kinds=kinds, window=window,
        bpsk_mode=bpsk_mode, tie_break=e.get("tie_break", "smallest"),
        map_prior=e.get("map_prior", "model"), quad=quad, table_mode=table_mode,
        table_budget_mb=float(e.get("table_budget_mb", 512)), dither=bool(c["dither"]),
        sfdr_offset=sfdr_offset, discard_warmup=bool(m.get("discard_warmup", True)),
        psd_segment=int(m.get("psd_segment", 1024)), cfo_bandwidth=cfo_bw,
        spectrogram=bool(m.get("spectrogram", ik == "lfm")), test_frequencies=tf,
        sweep_axis=axis, sweep_values=values, output=c.get("output"), workers=int(c["workers"]),
        save_table=bool(c["save_table"]), cache_dir=c.get("cache_dir"),
    )


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read a YAML file, apply ``overrides`` (nested mapping) and validate."""
    with open(Path(path)) as fh:
        raw = yaml.safe_load(fh)
    return parse_config(_merge(raw or {}, overrides or {}))


def with_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    return parse_config(_merge(cfg.raw, overrides))
