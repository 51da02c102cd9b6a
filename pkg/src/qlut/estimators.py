"""Estimators of the current input sample from a window of codes.

:class:`BayesEstimator` covers MMSE, ML and MAP; all three share one node
grid and one log-likelihood table. :class:`LmmseFilter` is the affine
baseline fitted from analytic first and second moments.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _accel
from .likelihood import NodeGrid, QuadratureSpec, TWO_PI
from .signals import ScenarioModel

logger = logging.getLogger(__name__)

KINDS = ("mmse", "ml", "map", "lmmse")
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class EstimatorConfig:
    """How to build an estimator.

    ``bpsk_mode`` is ``"tone"`` (treat the BPSK carrier as a tone inside the
    window) or ``"exact"`` (at most one phase transition, requires N <= tau).
    ``map_prior="flat"`` replaces the x0 prior by a constant, which turns
    MAP into ML. Grids whose log table would exceed ``table_budget_mb`` are
    evaluated without the table.
    """

    kind: str = "mmse"
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)
    tie_break: str = "smallest"
    bpsk_mode: str = "tone"
    map_prior: str = "model"
    table_budget_mb: float = 512.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator {self.kind!r}; expected one of {KINDS}")
        if self.tie_break not in ("smallest", "largest"):
            raise ValueError("tie_break must be 'smallest' or 'largest'")
        if self.bpsk_mode not in ("tone", "exact"):
            raise ValueError("bpsk_mode must be 'tone' or 'exact'")
        if self.map_prior not in ("model", "flat"):
            raise ValueError("map_prior must be 'model' or 'flat'")

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "bpsk_mode": self.bpsk_mode,
            "tie_break": self.tie_break,
            "map_prior": self.map_prior,
            "quadrature": {
                "x0_nodes": self.quad.x0_nodes,
                "phase_nodes": self.quad.phase_nodes,
                "frequency_nodes": self.quad.frequency_nodes,
                "amplitude_nodes": self.quad.amplitude_nodes,
                "refine_tol": self.quad.refine_tol,
            },
        }


def _check_windows(codes, N, n_codes):
    codes = np.atleast_2d(np.asarray(codes, dtype=np.int64))
    if codes.shape[1] != N:
        raise ValueError(f"windows must have {N} codes, got shape {codes.shape}")
    if codes.size and (codes.min() < 1 or codes.max() > n_codes):
        raise ValueError(f"codes must lie in 1..{n_codes}")
    return codes


class BayesEstimator:
    """MMSE / ML / MAP estimate of x0 for batches of windows."""

    def __init__(self, s: ScenarioModel, cfg: EstimatorConfig):
        if cfg.kind == "lmmse":
            raise ValueError("use LmmseFilter for the linear estimator")
        if s.desired_kind == "bpsk" and cfg.bpsk_mode == "exact" and s.window > s.desired.tau:
            raise ValueError("exact BPSK mode needs N <= tau; use bpsk_mode='tone'")
        self.cfg = cfg
        self.kind = cfg.kind
        self.quantizer = s.quantizer
        self.grid = NodeGrid(s, cfg.quad, cfg.bpsk_mode)
        self._table = None
        if self.grid.table_bytes() <= cfg.table_budget_mb * 2**20:
            samples, _ = self.grid.grid_inner()
            q = self.quantizer
            self._table = _accel.build_table(samples.reshape(-1, s.window), q.lower, q.upper, self.grid.sigma)
        else:
            logger.info("log table %.0f MB over budget, evaluating directly", self.grid.table_bytes() / 2**20)

    # ------------------------------------------------------------------
    def loglik_grid(self, codes) -> np.ndarray:
        """log p(y | x0_i) for every window and every grid node, ``(W, I)``."""
        g = self.grid
        codes = _check_windows(codes, g.window, self.quantizer.n_codes)
        _, logv = g.grid_inner()
        if self._table is not None:
            return _accel.grid_loglik_table(self._table, logv, codes - 1)
        samples, _ = g.grid_inner()
        q = self.quantizer
        return _accel.grid_loglik_direct(samples, logv, codes - 1, q.lower, q.upper, g.sigma)

    def _objective(self, u, codes):
        ll = self.grid.loglik_points(u, codes)
        if self.kind == "map" and self.cfg.map_prior == "model":
            ll = ll + self.grid.log_prior_density(u)
        return ll

    def _fallback(self, codes):
        return self.quantizer.reconstruct(codes[:, -1])

    def estimate(self, codes):
        """Return ``(estimates, fallback_flags)`` for a batch of windows."""
        codes = _check_windows(codes, self.grid.window, self.quantizer.n_codes)
        if codes.shape[0] == 0:
            return np.empty(0), np.zeros(0, dtype=bool)
        ll = self.loglik_grid(codes)
        if self.kind == "mmse":
            return self._mmse(ll, codes)
        return self._argmax(ll, codes)

    def __call__(self, codes):
        return self.estimate(codes)[0]

    # ------------------------------------------------------------------
    def _mmse(self, ll, codes):
        g = self.grid
        lw = ll + g.log_weights[None, :]
        top = lw.max(axis=1)
        bad = ~np.isfinite(top)
        p = np.exp(lw - np.where(bad, 0.0, top)[:, None])
        with np.errstate(invalid="ignore", divide="ignore"):
            # row-wise reductions: an entry must not depend on the batch it came in
            est = (p * g.x0).sum(axis=1) / p.sum(axis=1)
        est[bad] = self._fallback(codes[bad])
        return est, bad

    def _argmax(self, ll, codes):
        g = self.grid
        obj = ll
        if self.kind == "map" and self.cfg.map_prior == "model":
            obj = ll + g.log_prior_density(g.u)[None, :]
        n_nodes = g.u.size
        if self.cfg.tie_break == "smallest":
            # x0 falls as u grows: last maximal u is the smallest x0
            idx = n_nodes - 1 - np.argmax(obj[:, ::-1], axis=1)
        else:
            idx = np.argmax(obj, axis=1)
        best = obj[np.arange(obj.shape[0]), idx]
        bad = ~(best > -np.inf)
        u_best = g.u[idx].copy()
        lo = np.where(idx > 0, g.u[np.maximum(idx - 1, 0)], 0.0)
        hi = np.where(idx < n_nodes - 1, g.u[np.minimum(idx + 1, n_nodes - 1)], np.pi)
        ok = ~bad
        if np.any(ok) and n_nodes > 1:
            u_ref, f_ref = self._golden(lo[ok], hi[ok], codes[ok])
            better = f_ref > best[ok]
            u_new = u_best[ok]
            u_new[better] = u_ref[better]
            u_best[ok] = u_new
        est = g.x0_of_u(u_best)
        est[bad] = self._fallback(codes[bad])
        return est, bad

    def _golden(self, a, b, codes):
        """Vectorized golden-section maximization of the objective over u."""
        tol = self.cfg.quad.refine_tol / max(self.grid.amp_hi, 1e-300)
        a, b = a.copy(), b.copy()
        c = b - _INVPHI * (b - a)
        d = a + _INVPHI * (b - a)
        fc = self._objective(c, codes)
        fd = self._objective(d, codes)
        while np.max(b - a) > tol:
            left = fc >= fd
            b = np.where(left, d, b)
            a = np.where(left, a, c)
            new_c = b - _INVPHI * (b - a)
            new_d = a + _INVPHI * (b - a)
            probe = np.where(left, new_c, new_d)
            fp = self._objective(probe, codes)
            c, d = np.where(left, new_c, d), np.where(left, c, new_d)
            fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)
        mid = 0.5 * (a + b)
        return mid, self._objective(mid, codes)


# ---------------------------------------------------------------- LMMSE

@dataclass(frozen=True, eq=False)
class LmmseFilter:
    """``x0_hat = coef . (y - mean_y) + mean_x0`` on analysis codes."""

    coefficients: np.ndarray
    offset: float
    m_xy: np.ndarray
    M_yy: np.ndarray
    mean_y: np.ndarray
    mean_x0: float
    codebook: np.ndarray
    regularized: bool = False

    def estimate(self, codes):
        codes = np.atleast_2d(np.asarray(codes, dtype=np.int64))
        y = self.codebook[codes - 1]
        est = ((y - self.mean_y) * self.coefficients).sum(axis=1) + self.mean_x0
        return est, np.zeros(est.shape, dtype=bool)

    def __call__(self, codes):
        return self.estimate(codes)[0]


def lmmse_fit(s: ScenarioModel, quad: QuadratureSpec | None = None, codebook=None,
              bpsk_mode: str = "tone") -> LmmseFilter:
    """Fit the LMMSE filter from moments computed on the quadrature grid.

    ``codebook`` maps code k to the value used in the regression; the
    default is the index itself.
    """
    g = NodeGrid(s, quad, bpsk_mode)
    q = s.quantizer
    cb = np.arange(1, q.n_codes + 1, dtype=float) if codebook is None else np.asarray(codebook, float)
    N = s.window
    samples, logv = g.grid_inner()
    w = np.exp(g.log_weights[:, None] + logv)  # (I, J)
    w = w / w.sum()
    ex0 = float(np.sum(w.sum(axis=1) * g.x0))
    ey = np.zeros(N)
    exy = np.zeros(N)
    eyy = np.zeros((N, N))
    chunk = max(1, int(2**22 // max(1, samples.shape[1] * N * q.n_codes)))
    for start in range(0, samples.shape[0], chunk):
        s_c = samples[start:start + chunk]  # (c, J, N)
        w_c = w[start:start + chunk]
        p = _accel._cell_prob_np(q.lower, q.upper, s_c[..., None], g.sigma)  # (c, J, N, K)
        m1 = p @ cb  # E[Y_n | node]
        m2 = p @ (cb * cb)
        ey += np.einsum("cj,cjn->n", w_c, m1)
        exy += np.einsum("cj,c,cjn->n", w_c, g.x0[start:start + chunk], m1)
        eyy += np.einsum("cj,cjm,cjn->mn", w_c, m1, m1)
        eyy[np.diag_indices(N)] += np.einsum("cj,cjn->n", w_c, m2 - m1 * m1)
    m_xy = exy - ex0 * ey
    M = eyy - np.outer(ey, ey)
    M = 0.5 * (M + M.T)
    regularized = False
    try:
        if np.linalg.cond(M) > 1e14:
            raise np.linalg.LinAlgError
        coef = np.linalg.solve(M, m_xy)
    except np.linalg.LinAlgError:
        regularized = True
        coef = np.linalg.solve(M + 1e-10 * np.trace(M) * np.eye(N), m_xy)
    offset = ex0 - float(coef @ ey)
    return LmmseFilter(coef, offset, m_xy, M, ey, ex0, cb, regularized)


# ---------------------------------------------------------------- front doors

def make_estimator(s: ScenarioModel, cfg: EstimatorConfig):
    if cfg.kind == "lmmse":
        return lmmse_fit(s, cfg.quad, bpsk_mode=cfg.bpsk_mode)
    return BayesEstimator(s, cfg)


def _single(s, y, quad, kind, **kw):
    cfg = EstimatorConfig(kind=kind, quad=quad or QuadratureSpec(), **kw)
    est, _ = BayesEstimator(s, cfg).estimate(np.asarray(y)[None, :])
    return float(est[0])


def estimate_mmse(s: ScenarioModel, y, quad: QuadratureSpec | None = None, **kw) -> float:
    return _single(s, y, quad, "mmse", **kw)


def estimate_ml(s: ScenarioModel, y, quad: QuadratureSpec | None = None, **kw) -> float:
    return _single(s, y, quad, "ml", **kw)


def estimate_map(s: ScenarioModel, y, quad: QuadratureSpec | None = None, **kw) -> float:
    return _single(s, y, quad, "map", **kw)


# ---------------------------------------------------------------- oracle

class InsufficientSamples(RuntimeError):
    pass


def simulate_prior_windows(s: ScenarioModel, trials: int, rng: np.random.Generator):
    """Draw parameters from the scenario prior and return ``(x0, windows)``.

    BPSK desired signals get a uniform symbol offset and fresh random bits, so
    the windows follow the true transition statistics rather than either
    approximation.
    """
    prior = s.prior
    N = s.window
    n = np.arange(-N + 1, 1, dtype=float)
    a = rng.uniform(*prior.amplitude, size=trials)
    f = rng.uniform(*prior.frequency, size=trials)
    phi = rng.uniform(0.0, TWO_PI, size=trials)
    phase = TWO_PI * f[:, None] * n + phi[:, None]
    if s.desired_kind == "bpsk":
        tau = s.desired.tau
        L = rng.integers(0, tau, size=trials)
        sym = (n[None, :].astype(np.int64) + L[:, None]) // tau
        sym -= sym[:, :1]
        bits = rng.integers(0, 2, size=(trials, int(sym[:, -1].max()) + 1))
        flips = np.take_along_axis(bits, sym, axis=1) ^ np.take_along_axis(bits, sym[:, -1:], axis=1)
        phase = phase + np.pi * flips
    x = a[:, None] * np.cos(phase)
    x0 = x[:, -1].copy()
    if prior.has_interferer:
        za = rng.uniform(*prior.interferer_amplitude, size=trials)
        zf = rng.uniform(*prior.interferer_frequency, size=trials)
        zp = rng.uniform(0.0, TWO_PI, size=trials)
        x = x + za[:, None] * np.cos(TWO_PI * zf[:, None] * n + zp[:, None])
    if prior.sigma > 0:
        x = x + rng.normal(0.0, prior.sigma, size=x.shape)
    codes = s.quantizer.quantize(x, rng)
    return x0, codes


def mc_conditional_table(s: ScenarioModel, trials: int, rng: np.random.Generator,
                         chunk: int = 1_000_000):
    """Per-window ``(count, mean x0, 3-sigma half-width)`` from prior draws."""
    from .lut import window_index

    b = s.quantizer.bits
    size = 2 ** (b * s.window)
    cnt = np.zeros(size)
    s1 = np.zeros(size)
    s2 = np.zeros(size)
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        x0, codes = simulate_prior_windows(s, m, rng)
        idx = window_index(codes, b)
        cnt += np.bincount(idx, minlength=size)
        s1 += np.bincount(idx, weights=x0, minlength=size)
        s2 += np.bincount(idx, weights=x0 * x0, minlength=size)
        done += m
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = s1 / cnt
        var = np.maximum(s2 / cnt - mean**2, 0.0) * cnt / np.maximum(cnt - 1, 1)
        half = 3.0 * np.sqrt(var / cnt)
    return cnt, mean, half


def mc_conditional_oracle(s: ScenarioModel, y, trials: int, rng: np.random.Generator,
                          min_accepted: int = 100):
    """Monte-Carlo conditional mean of x0 given the window ``y``.

    Returns ``(mean, half_width)`` with a 3-sigma half-width.
    """
    from .lut import window_index

    if trials < 10_000:
        raise ValueError("need at least 1e4 trials")
    y = np.asarray(y)
    target = int(window_index(y[None, :], s.quantizer.bits)[0])
    acc_n = 0
    acc_s1 = 0.0
    acc_s2 = 0.0
    done = 0
    while done < trials:
        m = min(1_000_000, trials - done)
        x0, codes = simulate_prior_windows(s, m, rng)
        hit = x0[window_index(codes, s.quantizer.bits) == target]
        acc_n += hit.size
        acc_s1 += float(hit.sum())
        acc_s2 += float((hit * hit).sum())
        done += m
    if acc_n < min_accepted:
        raise InsufficientSamples(f"only {acc_n} of {trials} trials produced the window")
    mean = acc_s1 / acc_n
    var = max(acc_s2 / acc_n - mean * mean, 0.0) * acc_n / max(acc_n - 1, 1)
    half = 3.0 * math.sqrt(var / acc_n)
    if var < 1e-24:
        half = 0.0
    return mean, half
