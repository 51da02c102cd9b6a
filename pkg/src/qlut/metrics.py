"""Figures of merit: MSE, SFDR, EVM, CFO ratio, PSD and spectrogram.

dB values of an exactly-zero error are returned as ``-inf``; that is the
"unbounded" marker and is never an error.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

SFDR_CAP_DB = 300.0


def _db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


def mse_db(ref, test) -> float:
    ref = np.asarray(ref, dtype=float)
    test = np.asarray(test, dtype=float)
    if ref.shape != test.shape or ref.size == 0:
        raise ValueError(f"need equal non-empty lengths, got {ref.shape} and {test.shape}")
    return float(_db(np.mean((ref - test) ** 2)))


def periodogram(x):
    """One-sided periodogram density on ``[0, 0.5]`` (cycles/sample).

    Scaled so that ``sum(P) * df`` equals the mean square of ``x``.
    """
    x = np.asarray(x, dtype=float)
    L = x.size
    X = np.fft.rfft(x)
    P = np.abs(X) ** 2 / L
    if L % 2 == 0:
        P[1:-1] *= 2
    else:
        P[1:] *= 2
    return np.fft.rfftfreq(L), P


def sfdr_dbc(x, f, offset: float | None = None, pad: int = 1) -> float:
    """Carrier-to-largest-spur ratio of a full-length rectangular periodogram.

    With ``pad == 1`` the carrier is the bin nearest ``f``. With ``pad > 1``
    the spectrum is zero-padded to ``pad * len(x)`` points, which samples
    the DTFT finely enough that spur peaks are not lost between bins, and
    the carrier is the DTFT evaluated at ``f`` itself. Spurs are searched
    over ``[0, 0.5]`` outside ``[f - offset, f + offset]``; ``offset``
    defaults to ten bins of the unpadded transform. Results are capped at
    +300 dBc.
    """
    x = np.asarray(x, dtype=float)
    L = x.size
    offset = 10.0 / L if offset is None else float(offset)
    if L * offset < 2 or offset <= 0:
        raise ValueError("sequence too short for the requested offset")
    if int(pad) != pad or pad < 1:
        raise ValueError("pad must be a positive integer")
    n_fft = int(pad) * L
    freqs = np.fft.rfftfreq(n_fft)
    P = np.abs(np.fft.rfft(x, n_fft)) ** 2
    if pad == 1:
        carrier = P[int(np.argmin(np.abs(freqs - f)))]
    else:
        carrier = np.abs(np.dot(x, np.exp(-2j * np.pi * f * np.arange(L)))) ** 2
    outside = np.abs(freqs - f) > offset
    if not np.any(outside):
        raise ValueError("excluded band covers the whole frequency axis")
    spur = P[outside].max()
    if spur <= 0 or carrier / spur > 10 ** (SFDR_CAP_DB / 10):
        return SFDR_CAP_DB
    return float(_db(carrier / spur))


def psd(x, nperseg: int = 1024, overlap: float = 0.5):
    """Welch PSD (Hann window) in dB; returns ``(freqs, db)``."""
    x = np.asarray(x, dtype=float)
    nperseg = min(nperseg, x.size)
    f, P = signal.welch(x, window="hann", nperseg=nperseg, noverlap=int(nperseg * overlap),
                        detrend=False, scaling="density")
    return f, _db(np.maximum(P, 1e-300))


def spectrogram(x, window: int = 1024, hop: int = 512):
    """Short-time power spectrum in dB: ``(freqs, times, db[freq, time])``."""
    x = np.asarray(x, dtype=float)
    f, t, S = signal.spectrogram(x, window="hann", nperseg=window, noverlap=window - hop,
                                 detrend=False, scaling="density", mode="psd")
    return f, t, _db(np.maximum(S, 1e-300))


def band_power_db(x, lo: float, hi: float) -> float:
    """Power of ``x`` inside ``[lo, hi]`` from the full periodogram, in dB."""
    f, P = periodogram(x)
    sel = (f >= lo) & (f <= hi)
    return float(_db(P[sel].sum() * (f[1] - f[0])))


# ------------------------------------------------------------ BPSK

def symbol_span(length: int, tau: int, offset: int):
    """First symbol index and number of whole symbols inside ``length`` samples."""
    first = -(-offset // tau)
    last = (length + offset) // tau  # exclusive
    return first, max(0, last - first)


def demod_bpsk(x, F: float, phase: float, tau: int, offset: int = 0, amplitude: float | None = None):
    """Integrate-and-dump BPSK demodulator with genie timing.

    Mixes by ``exp(-j(2 pi F n + phase))``, averages each whole symbol
    (a length-tau moving average read at the symbol end) and divides by the
    same average of the reference carrier. With ``amplitude`` given a clean
    input maps to +1/-1 exactly; otherwise symbols are scaled to unit RMS.
    Returns complex symbols for the whole symbols in ``x``.
    """
    x = np.asarray(x, dtype=float)
    if x.size < tau:
        raise ValueError("need at least one symbol of samples")
    first, count = symbol_span(x.size, tau, offset)
    n = np.arange(x.size)
    psi = 2 * np.pi * F * n + phase
    lo = np.exp(-1j * psi)
    start = first * tau - offset
    stop = start + count * tau
    mixed = (x * lo)[start:stop].reshape(count, tau).mean(axis=1)
    ref = (np.cos(psi) * lo)[start:stop].reshape(count, tau).mean(axis=1)
    sym = mixed / ref
    if amplitude is not None:
        return sym / amplitude
    rms = np.sqrt(np.mean(np.abs(sym) ** 2))
    return sym / rms if rms > 0 else sym


def evm_db(sym_hat, sym_ref):
    """Per-symbol EVM in dB and the RMS EVM in dB."""
    sym_hat = np.asarray(sym_hat, dtype=complex)
    sym_ref = np.asarray(sym_ref, dtype=complex)
    if sym_hat.shape != sym_ref.shape:
        raise ValueError("symbol sequences differ in length")
    ref_pow = np.mean(np.abs(sym_ref) ** 2)
    if ref_pow == 0:
        raise ValueError("reference symbols have zero power")
    err = np.abs(sym_hat - sym_ref) ** 2
    return _db(err / ref_pow), float(_db(np.mean(err) / ref_pow))


def _cfo_spectrum(x, F, tau, bandwidth):
    x = np.asarray(x, dtype=float)
    L = x.size
    if L < 4 * tau:
        raise ValueError("need at least four symbols for CFO estimation")
    bw = 4.0 / tau if bandwidth is None else bandwidth
    X = np.fft.fft(x)
    f = np.fft.fftfreq(L)
    X[np.abs(f - F) > bw / 2] = 0.0
    s = np.fft.ifft(X) * np.exp(-2j * np.pi * F * np.arange(L))
    psi = np.abs(np.fft.fft(s * s))
    keep = np.abs(f) < 0.25
    return f[keep], psi[keep]


def cfo_estimate(x, F: float, tau: int, bandwidth: float | None = None) -> float:
    """Residual carrier offset by the squaring method, cycles/sample."""
    f, psi = _cfo_spectrum(x, F, tau, bandwidth)
    return 0.5 * float(f[np.argmax(psi)])


def cfo_ratio(x, F: float, tau: int, bandwidth: float | None = None) -> float:
    """|Psi| at zero residual offset over the largest |Psi| elsewhere, in dB."""
    f, psi = _cfo_spectrum(x, F, tau, bandwidth)
    at0 = f == 0
    return float(_db(psi[at0][0] / psi[~at0].max()))


# ------------------------------------------------------------ report

@dataclass
class MetricsReport:
    """Figures of merit for one pipeline stage; inapplicable ones are None."""

    mse_db: float | None = None
    sfdr_dbc: float | None = None
    evm_rms_db: float | None = None
    evm_db: list | None = None
    cfo_estimate: float | None = None
    cfo_ratio_db: float | None = None
    psd_freq: list = field(default_factory=list)
    psd_db: list = field(default_factory=list)
    spectrogram_freq: list | None = None
    spectrogram_time: list | None = None
    spectrogram_db: list | None = None
    warmup_discarded: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)


def alias_frequency(f: float) -> float:
    """Fold a frequency into ``[0, 0.5]`` as seen after sampling."""
    f = abs(f) % 1.0
    return 1.0 - f if f > 0.5 else f


def psd_at(freqs, db, f: float) -> float:
    """PSD value (dB) at the grid point nearest the folded frequency ``f``."""
    freqs = np.asarray(freqs, dtype=float)
    return float(np.asarray(db)[np.argmin(np.abs(freqs - alias_frequency(f)))])
