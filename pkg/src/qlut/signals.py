"""Desired, interferer and noise waveforms plus the scenario container.

Frequencies are in cycles/sample and sample indices are absolute, so a
generator called with ``n0`` continues the same waveform.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .quantizer import Quantizer, quantize

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ToneParams:
    amplitude: float
    frequency: float
    phase: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if not 0.0 <= self.frequency <= 0.5:
            raise ValueError(f"frequency {self.frequency} outside [0, 0.5]")


@dataclass(frozen=True, eq=False)
class BpskParams:
    """Square-pulse BPSK carrier.

    ``bits`` may be None, in which case :func:`realize` draws a
    Bernoulli(1/2) stream; ``offset`` (the symbol clock shift L) may be None
    and is then drawn uniformly on ``[0, tau)``.
    """

    amplitude: float
    frequency: float
    phase: float = 0.0
    tau: int = 50
    offset: int | None = 0
    bits: np.ndarray | None = None

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if not 0.0 <= self.frequency <= 0.5:
            raise ValueError(f"frequency {self.frequency} outside [0, 0.5]")
        if int(self.tau) != self.tau or self.tau < 1:
            raise ValueError("tau must be an integer >= 1")
        if self.offset is not None and not 0 <= self.offset < self.tau:
            raise ValueError("offset must lie in [0, tau)")
        if self.bits is not None:
            bits = np.asarray(self.bits, dtype=np.int8) & 1
            bits.setflags(write=False)
            object.__setattr__(self, "bits", bits)


@dataclass(frozen=True)
class LfmParams:
    amplitude: float
    frequency: float
    phase: float = 0.0
    sweep: float = 0.0
    period: int = 100_000

    def __post_init__(self):
        if int(self.period) != self.period or self.period < 1:
            raise ValueError("repetition interval must be an integer >= 1")
        lo, hi = self.frequency - self.sweep / 2, self.frequency + self.sweep / 2
        if lo < 0 or hi > 0.5:
            raise ValueError(f"sweep band [{lo}, {hi}] leaves [0, 0.5]")


@dataclass(frozen=True)
class PriorSpec:
    """Uniform priors used to train an estimator.

    Intervals are ``(low, high)`` pairs; equal ends mean a point mass.
    Phases are always uniform on ``[0, 2*pi)``.
    """

    amplitude: tuple[float, float]
    frequency: tuple[float, float]
    sigma: float
    interferer_amplitude: tuple[float, float] | None = None
    interferer_frequency: tuple[float, float] | None = None

    def __post_init__(self):
        for name in ("amplitude", "frequency", "interferer_amplitude", "interferer_frequency"):
            iv = getattr(self, name)
            if iv is None:
                continue
            lo, hi = float(iv[0]), float(iv[1])
            if lo > hi:
                raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
            if "frequency" in name and (lo < 0 or hi > 0.5):
                raise ValueError(f"{name}: [{lo}, {hi}] outside [0, 0.5]")
            if "amplitude" in name and lo < 0:
                raise ValueError(f"{name}: negative amplitude")
            object.__setattr__(self, name, (lo, hi))
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if (self.interferer_amplitude is None) != (self.interferer_frequency is None):
            raise ValueError("interferer amplitude and frequency priors go together")

    @property
    def has_interferer(self) -> bool:
        return self.interferer_amplitude is not None


@dataclass(frozen=True)
class ScenarioModel:
    """Everything needed to simulate a quantized input and train a LUT.

    ``desired`` and ``interferer`` describe the waveforms actually fed to the
    converter; ``prior`` is the model the estimators assume. ``sigma`` is the
    true input-noise deviation.
    """

    desired: ToneParams | BpskParams
    quantizer: Quantizer
    window: int
    prior: PriorSpec
    sigma: float
    interferer: ToneParams | LfmParams | None = None

    def __post_init__(self):
        if int(self.window) != self.window or self.window < 0:
            raise ValueError("window length must be an integer >= 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    @property
    def desired_kind(self) -> str:
        return "bpsk" if isinstance(self.desired, BpskParams) else "tone"

    @property
    def interferer_kind(self) -> str:
        if self.interferer is None:
            return "none"
        return "lfm" if isinstance(self.interferer, LfmParams) else "tone"


def known_prior(desired, sigma: float, interferer=None) -> PriorSpec:
    """Point-mass prior matching the actual parameters."""
    za = zf = None
    if interferer is not None:
        za = (interferer.amplitude, interferer.amplitude)
        if isinstance(interferer, LfmParams):
            zf = (interferer.frequency - interferer.sweep / 2, interferer.frequency + interferer.sweep / 2)
        else:
            zf = (interferer.frequency, interferer.frequency)
    return PriorSpec(
        amplitude=(desired.amplitude, desired.amplitude),
        frequency=(desired.frequency, desired.frequency),
        sigma=sigma,
        interferer_amplitude=za,
        interferer_frequency=zf,
    )


def _indices(n0: int, count: int) -> np.ndarray:
    if count < 0:
        raise ValueError("count must be >= 0")
    return np.arange(n0, n0 + count, dtype=float)


def gen_tone(p: ToneParams, n0: int, count: int) -> np.ndarray:
    """``A cos(2 pi F n + phi)`` for ``n = n0 .. n0+count-1``."""
    n = _indices(n0, count)
    return p.amplitude * np.cos(TWO_PI * p.frequency * n + p.phase)


def bpsk_phase_flips(p: BpskParams, n0: int, count: int) -> np.ndarray:
    """0/1 phase-flip indicator ``(R[floor((n+L)/tau)] - R[0]) mod 2``."""
    if p.bits is None or p.offset is None:
        raise ValueError("BPSK bits and symbol offset must be realized first")
    n = np.arange(n0, n0 + count, dtype=np.int64)
    sym = (n + p.offset) // p.tau
    if count and (sym[0] < 0 or sym[-1] >= p.bits.size):
        raise ValueError(
            f"bit stream of length {p.bits.size} does not cover symbols {sym[0]}..{sym[-1]}"
        )
    return (p.bits[sym] ^ p.bits[0]).astype(np.int8)


def gen_bpsk(p: BpskParams, n0: int, count: int) -> np.ndarray:
    n = _indices(n0, count)
    theta = p.phase + np.pi * bpsk_phase_flips(p, n0, count)
    return p.amplitude * np.cos(TWO_PI * p.frequency * n + theta)


def bpsk_symbols(p: BpskParams, first: int, count: int) -> np.ndarray:
    """Reference constellation points (+1 / -1) for symbols ``first..``."""
    m = np.arange(first, first + count)
    return 1.0 - 2.0 * (p.bits[m] ^ p.bits[0])


def lfm_frequency_term(p: LfmParams, n: np.ndarray) -> np.ndarray:
    return p.frequency - p.sweep / 2 + (p.sweep / p.period) * np.mod(n, p.period)


def gen_lfm(p: LfmParams, n0: int, count: int) -> np.ndarray:
    """Sawtooth LFM, frequency term multiplied by ``n`` as written."""
    n = _indices(n0, count)
    return p.amplitude * np.cos(TWO_PI * lfm_frequency_term(p, n) * n + p.phase)


def gen_noise_gaussian(sigma: float, rng: np.random.Generator, count: int) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return np.zeros(count)
    return rng.normal(0.0, sigma, size=count)


def gen_dither_rect(step: float, rng: np.random.Generator, count: int) -> np.ndarray:
    if step <= 0:
        raise ValueError("step must be > 0")
    return rng.uniform(-step / 2, step / 2, size=count)


def rect_density(a: float, t):
    """Rectangular density of width ``a`` centred on zero."""
    if a <= 0:
        raise ValueError("width must be > 0")
    t = np.asarray(t, dtype=float)
    out = np.where(np.abs(t) <= a / 2, 1.0 / a, 0.0)
    return float(out) if out.ndim == 0 else out


def generate(sig, n0: int, count: int) -> np.ndarray:
    if isinstance(sig, BpskParams):
        return gen_bpsk(sig, n0, count)
    if isinstance(sig, LfmParams):
        return gen_lfm(sig, n0, count)
    return gen_tone(sig, n0, count)


def realize(s: ScenarioModel, rng: np.random.Generator, count: int) -> ScenarioModel:
    """Fill in random BPSK bits / symbol offset so ``count`` samples are covered."""
    d = s.desired
    if not isinstance(d, BpskParams):
        return s
    offset = d.offset if d.offset is not None else int(rng.integers(0, d.tau))
    bits = d.bits
    need = (count - 1 + offset) // d.tau + 1
    if bits is None:
        bits = rng.integers(0, 2, size=need, dtype=np.int8)
    return replace(s, desired=replace(d, offset=offset, bits=bits))


def assemble_input(s: ScenarioModel, rng: np.random.Generator, count: int):
    """Simulate ``count`` converter samples.

    Returns ``(clean, composite, codes)``: the desired waveform alone, the
    analog input desired + interferer + noise, and the quantizer codes.
    Unrealized BPSK bits / offsets are drawn from ``rng`` first; call
    :func:`realize` beforehand to keep them.
    """
    s = realize(s, rng, count)
    clean = generate(s.desired, 0, count)
    composite = clean.copy()
    if s.interferer is not None:
        composite += generate(s.interferer, 0, count)
    composite += gen_noise_gaussian(s.sigma, rng, count)
    codes = quantize(s.quantizer, composite, rng)
    return clean, composite, codes


def is_irrational_frequency(f: float, samples: int = 100_000, tol: float = 1e-9) -> bool:
    """True when ``f * samples`` is not within ``tol`` of an integer."""
    v = f * samples
    return abs(v - round(v)) > tol
