"""Scalar quantizers with ordered thresholds.

Codes are the integer indices ``1..2**b``. A separate reconstruction table
maps codes to analog levels, so INL-corrupted converters keep their nominal
output levels while their thresholds move.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Quantizer:
    """A b-bit scalar quantizer.

    Parameters
    ----------
    bits : int
        Resolution ``b``.
    thresholds : ndarray
        All ``2**b + 1`` partition levels, ``-inf`` and ``+inf`` included.
    levels : ndarray
        Reconstruction level of each code, strictly increasing.
    step : float
        Nominal cell width ``2**(1 - b)``.
    """

    bits: int
    thresholds: np.ndarray
    levels: np.ndarray
    step: float

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=float)
        c = np.asarray(self.levels, dtype=float)
        n = 2**self.bits
        if t.shape != (n + 1,) or c.shape != (n,):
            raise ValueError(f"expected {n + 1} thresholds and {n} levels for b={self.bits}")
        if t[0] != -np.inf or t[-1] != np.inf:
            raise ValueError("outer thresholds must be -inf and +inf")
        if np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        if np.any(np.diff(c) <= 0):
            raise ValueError("reconstruction levels must be strictly increasing")
        t.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "levels", c)

    @property
    def n_codes(self) -> int:
        return 2**self.bits

    @property
    def interior(self) -> np.ndarray:
        return self.thresholds[1:-1]

    @property
    def lower(self) -> np.ndarray:
        """Lower cell edge of each code (``T_k``)."""
        return self.thresholds[:-1]

    @property
    def upper(self) -> np.ndarray:
        """Upper cell edge of each code (``T_{k+1}``)."""
        return self.thresholds[1:]

    def reconstruct(self, codes):
        """Map codes ``1..2**b`` to analog reconstruction levels."""
        codes = np.asarray(codes)
        return self.levels[codes - 1]

    def mirror(self, codes):
        """Flip codes about the codebook center."""
        return self.n_codes + 1 - np.asarray(codes)

    def quantize(self, x, rng: np.random.Generator | None = None):
        return quantize(self, x, rng)

    def describe(self) -> dict:
        return {
            "bits": self.bits,
            "thresholds": [float(v) for v in self.interior],
            "levels": [float(v) for v in self.levels],
        }

    def __eq__(self, other):
        if not isinstance(other, Quantizer):
            return NotImplemented
        return (
            self.bits == other.bits
            and np.array_equal(self.thresholds, other.thresholds)
            and np.array_equal(self.levels, other.levels)
        )

    def __hash__(self):
        return hash((self.bits, self.thresholds.tobytes(), self.levels.tobytes()))


def make_uniform_midriser(b: int) -> Quantizer:
    """Normalized mid-riser quantizer with ``step = 2**(1 - b)``.

    Interior thresholds sit at ``-1 + j*step`` (one of them at 0) and the
    reconstruction levels at the cell midpoints.
    """
    if int(b) != b or b < 1:
        raise ValueError(f"bits must be an integer >= 1, got {b!r}")
    b = int(b)
    n = 2**b
    step = 2.0 ** (1 - b)
    interior = -1.0 + step * np.arange(1, n)
    levels = -1.0 + step * (np.arange(1, n + 1) - 0.5)
    thresholds = np.concatenate([[-np.inf], interior, [np.inf]])
    return Quantizer(b, thresholds, levels, step)


def apply_inl(q: Quantizer, inl) -> Quantizer:
    """Shift every interior threshold by ``inl[j] * step``.

    ``inl`` is given in units of the step, one entry per interior threshold.
    Reconstruction levels are left untouched.
    """
    inl = np.asarray(inl, dtype=float)
    if inl.shape != (q.n_codes - 1,):
        raise ValueError(f"INL needs {q.n_codes - 1} entries for b={q.bits}, got {inl.size}")
    interior = q.interior + inl * q.step
    bad = np.flatnonzero(np.diff(interior) <= 0)
    if bad.size:
        j = int(bad[0])
        raise ValueError(
            f"INL breaks threshold order: T[{j + 2}]={interior[j]:.6g} "
            f">= T[{j + 3}]={interior[j + 1]:.6g}"
        )
    thresholds = np.concatenate([[-np.inf], interior, [np.inf]])
    return Quantizer(q.bits, thresholds, q.levels.copy(), q.step)


def quantize(q: Quantizer, x, rng: np.random.Generator | None = None):
    """Return code ``k`` with ``T_k < x < T_{k+1}``.

    An input landing exactly on an interior threshold is a metastable
    comparator: it resolves to either neighbouring code with probability 1/2,
    drawn from ``rng``. Scalars in, scalar out.
    """
    xa = np.asarray(x, dtype=float)
    interior = q.interior
    below = np.searchsorted(interior, xa, side="left")
    upto = np.searchsorted(interior, xa, side="right")
    codes = below + 1
    tie = upto != below
    if np.any(tie):
        if rng is None:
            raise ValueError("input sits on a threshold; a random stream is required")
        flip = rng.random(int(np.count_nonzero(tie))) < 0.5
        if codes.ndim == 0:
            codes = codes + int(flip[0])
        else:
            codes[tie] += flip
    if np.ndim(x) == 0:
        return int(codes)
    return codes


def requantize_dithered(q: Quantizer, xhat, rng: np.random.Generator):
    """Add rectangular dither on ``[-step/2, step/2]`` and quantize again."""
    xa = np.asarray(xhat, dtype=float)
    v = rng.uniform(-q.step / 2, q.step / 2, size=xa.shape)
    return quantize(q, xa + v if xa.ndim else float(xa + v), rng)
