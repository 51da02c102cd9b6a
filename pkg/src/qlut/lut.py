"""Look-up table construction, streaming correction and table files.

Table file layout (``.lut``)
----------------------------
1. the magic line ``QLUT1\\n``;
2. one line of UTF-8 JSON holding the header: ``bits``, ``window``,
   ``estimator`` (kind), ``scenario_hash``, ``entries`` (count), ``mode``,
   ``config`` (estimator description);
3. ``entries`` little-endian records ``(uint64 index, float64 estimate,
   uint8 fallback)``, packed without padding, sorted by index.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .quantizer import Quantizer, make_uniform_midriser, requantize_dithered

MAGIC = b"QLUT1\n"
RECORD = np.dtype([("index", "<u8"), ("estimate", "<f8"), ("fallback", "u1")])
MAX_MATERIALIZED_BITS = 24


class CapacityError(ValueError):
    pass


def window_index(y, b: int):
    """Pack windows (codes ``1..2**b``, oldest first) into radix-``2**b`` integers.

    The oldest code is the least significant digit. Accepts a single window
    or a ``(W, N)`` batch.
    """
    y = np.asarray(y, dtype=np.int64)
    single = y.ndim == 1
    y2 = np.atleast_2d(y)
    if y2.size and (y2.min() < 1 or y2.max() > 2**b):
        raise ValueError(f"codes must lie in 1..{2**b}")
    if b * y2.shape[1] > 63:
        raise ValueError("window too long to pack into 64 bits")
    shifts = np.arange(y2.shape[1], dtype=np.int64) * b
    idx = ((y2 - 1) << shifts).sum(axis=1)
    return int(idx[0]) if single else idx


def unpack_index(idx, b: int, N: int):
    """Inverse of :func:`window_index`."""
    idx = np.asarray(idx, dtype=np.int64)
    shifts = np.arange(N, dtype=np.int64) * b
    out = ((idx[..., None] >> shifts) & (2**b - 1)) + 1
    return out


def sliding_windows(codes, N: int):
    """All length-N windows of a code stream, window n ending at sample n+N-1."""
    codes = np.asarray(codes, dtype=np.int64)
    return np.lib.stride_tricks.sliding_window_view(codes, N)


@dataclass
class LutTable:
    """Window index -> estimate.

    ``materialized`` tables hold dense arrays over all ``2**(b*N)`` windows;
    ``memoized`` tables start empty and are filled on first lookup through
    ``estimator`` (or, if that is unset, through the estimator returned by
    ``factory()``, built on first need).
    """

    bits: int
    window: int
    mode: str
    kind: str
    scenario_hash: str = ""
    config: dict = field(default_factory=dict)
    estimator: object = None
    factory: object = None
    _values: dict = field(default_factory=dict)
    _fallback: set = field(default_factory=set)
    _dense: np.ndarray | None = None
    _dense_fallback: np.ndarray | None = None
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __len__(self):
        return self._dense.size if self._dense is not None else len(self._values)

    @property
    def fallback_count(self) -> int:
        if self._dense_fallback is not None:
            return int(self._dense_fallback.sum())
        return len(self._fallback)

    def fallback_mask(self, idx) -> np.ndarray:
        """Fallback flags for entries already in the table."""
        idx = np.asarray(idx, dtype=np.int64)
        if self._dense_fallback is not None:
            return self._dense_fallback[idx]
        return np.array([int(i) in self._fallback for i in idx.ravel()], dtype=bool).reshape(idx.shape)

    def items(self):
        if self._dense is not None:
            idx = np.arange(self._dense.size, dtype=np.int64)
            return idx, self._dense.copy(), self._dense_fallback.copy()
        keys = np.array(sorted(self._values), dtype=np.int64)
        vals = np.array([self._values[k] for k in keys.tolist()], dtype=float)
        fb = np.array([k in self._fallback for k in keys.tolist()], dtype=bool)
        return keys, vals, fb

    def contains(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if self._dense is not None:
            return np.ones(idx.shape, dtype=bool)
        return np.array([int(i) in self._values for i in idx.ravel()], dtype=bool).reshape(idx.shape)

    def insert(self, idx, values, fallback=None):
        fallback = np.zeros(len(idx), dtype=bool) if fallback is None else fallback
        with self._lock:
            for i, v, f in zip(np.asarray(idx).tolist(), np.asarray(values).tolist(), fallback.tolist()):
                if not np.isfinite(v):
                    raise ValueError(f"non-finite estimate for window {i}")
                self._values.setdefault(i, v)
                if f:
                    self._fallback.add(i)

    def lookup(self, idx):
        """Estimates for packed window indices, computing missing entries."""
        idx = np.asarray(idx, dtype=np.int64)
        if self._dense is not None:
            return self._dense[idx]
        uniq, inv = np.unique(idx, return_inverse=True)
        missing = uniq[~self.contains(uniq)]
        if missing.size:
            if self.estimator is None and self.factory is not None:
                self.estimator = self.factory()
            if self.estimator is None:
                raise KeyError(f"{missing.size} windows not in table and no estimator attached")
            est, fb = self.estimator.estimate(unpack_index(missing, self.bits, self.window))
            self.insert(missing, est, fb)
        vals = np.array([self._values[k] for k in uniq.tolist()], dtype=float)
        return vals[inv].reshape(idx.shape)


def build_lut(s, cfg, mode: str = "memoized", estimator=None, scenario_hash: str = "") -> LutTable:
    """Build a table for scenario ``s`` with estimator configuration ``cfg``."""
    from .estimators import make_estimator

    b, N = s.quantizer.bits, s.window
    if mode not in ("memoized", "materialized"):
        raise ValueError(f"unknown table mode {mode!r}")
    if mode == "materialized" and b * N > MAX_MATERIALIZED_BITS:
        raise CapacityError(
            f"materialized table needs 2**{b * N} entries (limit 2**{MAX_MATERIALIZED_BITS}); "
            "use memoized mode"
        )
    estimator = estimator or make_estimator(s, cfg)
    table = LutTable(b, N, mode, cfg.kind, scenario_hash, cfg.describe(), estimator)
    if mode == "materialized":
        size = 2 ** (b * N)
        dense = np.empty(size)
        dfb = np.zeros(size, dtype=bool)
        step = 1 << 14
        for start in range(0, size, step):
            idx = np.arange(start, min(size, start + step), dtype=np.int64)
            est, fb = estimator.estimate(unpack_index(idx, b, N))
            dense[idx] = est
            dfb[idx] = fb
        if not np.all(np.isfinite(dense)):
            raise ValueError("non-finite table entry")
        table._dense, table._dense_fallback = dense, dfb
    return table


# ------------------------------------------------------------ streaming

@dataclass
class CorrectionPipeline:
    """Table lookup followed by optional rectangular dither and requantization."""

    table: LutTable | None
    source: Quantizer
    requantizer: Quantizer | None = None
    dither: bool = True
    seed: int | np.random.SeedSequence | None = 0

    def __post_init__(self):
        if self.requantizer is None:
            self.requantizer = make_uniform_midriser(self.source.bits)
        if self.requantizer.bits != self.source.bits:
            raise ValueError("requantizer must keep the source resolution")


def correct_stream(p: CorrectionPipeline, codes):
    """Run the pipeline over a code stream.

    Returns ``(estimates, requantized_codes)``. Output ``n`` depends only on
    codes up to ``n``; the first ``N-1`` outputs (and every output when no
    table is used) are midpoint reconstructions of the current code.
    """
    codes = np.asarray(codes, dtype=np.int64)
    est = p.source.reconstruct(codes).astype(float)
    N = p.table.window if p.table is not None else 0
    if N > 0:
        if codes.size < N:
            raise ValueError(f"stream of {codes.size} samples shorter than window {N}")
        idx = window_index(sliding_windows(codes, N), p.table.bits)
        est[N - 1:] = p.table.lookup(idx)
    rng = np.random.default_rng(p.seed)
    if p.dither:
        req = requantize_dithered(p.requantizer, est, rng)
    else:
        req = p.requantizer.quantize(est, rng)
    return est, np.asarray(req, dtype=np.int64)


# ------------------------------------------------------------ persistence

def save_lut(table: LutTable, path) -> Path:
    path = Path(path)
    idx, vals, fb = table.items()
    header = {
        "bits": table.bits,
        "window": table.window,
        "estimator": table.kind,
        "scenario_hash": table.scenario_hash,
        "entries": int(idx.size),
        "mode": table.mode,
        "config": table.config,
    }
    rec = np.empty(idx.size, dtype=RECORD)
    rec["index"], rec["estimate"], rec["fallback"] = idx, vals, fb
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(rec.tobytes())
    return path


def read_lut_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ValueError(f"{path} is not a table file")
        return json.loads(fh.readline())


def load_lut(path, estimator=None, factory=None) -> LutTable:
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ValueError(f"{path} is not a table file")
        header = json.loads(fh.readline())
        rec = np.frombuffer(fh.read(), dtype=RECORD)
    if rec.size != header["entries"]:
        raise ValueError(f"{path}: header says {header['entries']} entries, found {rec.size}")
    table = LutTable(header["bits"], header["window"], header["mode"], header["estimator"],
                     header["scenario_hash"], header.get("config", {}), estimator, factory)
    if header["mode"] == "materialized" and rec.size == 2 ** (header["bits"] * header["window"]):
        table._dense = rec["estimate"].astype(float)
        table._dense_fallback = rec["fallback"].astype(bool)
    else:
        table.mode = "memoized"
        table.insert(rec["index"].astype(np.int64), rec["estimate"], rec["fallback"].astype(bool))
    return table
