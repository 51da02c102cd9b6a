"""Conditional distribution of a code window given the current input sample.

The integral over signal parameters is discretized on a grid in the
substituted variable ``u`` with ``x0 = A_H cos(u)``. For every x0 node the
remaining parameters (desired amplitude and frequency, the two phase
branches, BPSK transition patterns, interferer amplitude / frequency / phase)
form a set of "inner" nodes with log weights that sum to one. A node fixes
the noiseless composite sample at every window slot, so

    log p(y | x0_i) = logsumexp_j [ logv_ij + sum_n log P(y_n | s_ijn) ].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import erf

from . import _accel
from .quantizer import Quantizer
from .signals import BpskParams, LfmParams, PriorSpec, ScenarioModel

TWO_PI = 2.0 * np.pi


# ------------------------------------------------------------ closed forms

def gaussian_window_prob(a: float, b: float, sigma: float) -> float:
    """P(a < W < b) for W ~ N(0, sigma^2); sigma = 0 gives the indicator limit."""
    if a > b:
        raise ValueError(f"window lower edge {a} exceeds upper edge {b}")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        if a == b:
            return 0.0
        if a < 0 < b:
            return 1.0
        return 0.5 if (a == 0 or b == 0) else 0.0
    return float(_accel._cell_prob_np(a, b, 0.0, sigma))


def gaussian_window_prob_erf(a: float, b: float, sigma: float) -> float:
    """Textbook erf difference, kept for cross-checks."""
    r = sigma * math.sqrt(2.0)
    return 0.5 * (float(erf(b / r)) - float(erf(a / r)))


def cond_prob_code(q: Quantizer, k: int, s: float, sigma: float) -> float:
    """P(code k | noiseless composite sample s)."""
    if not 1 <= k <= q.n_codes:
        raise ValueError(f"code {k} outside 1..{q.n_codes}")
    return gaussian_window_prob(q.thresholds[k - 1] - s, q.thresholds[k] - s, sigma)


def prior_x0(prior: PriorSpec):
    """Density of ``x0 = A cos(phi)`` under the amplitude / phase priors.

    A point-mass amplitude gives the arcsine density; an interval
    ``[A_L, A_H]`` averages arcsine densities over the amplitude, which
    integrates to a difference of inverse hyperbolic cosines.
    """
    lo, hi = prior.amplitude

    if lo == hi:
        def density(x):
            x = np.asarray(x, dtype=float)
            with np.errstate(divide="ignore", invalid="ignore"):
                d = np.where(np.abs(x) < hi, 1.0 / (np.pi * np.sqrt(hi * hi - x * x)), 0.0)
            return float(d) if d.ndim == 0 else d
        return density

    def density(x):
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            safe = np.where(ax > 0, ax, 1.0)
            top = np.arccosh(np.maximum(hi / safe, 1.0))
            bot = np.arccosh(np.maximum(np.maximum(lo, ax) / safe, 1.0))
            d = (top - bot) / (np.pi * (hi - lo))
            at0 = np.log(hi / lo) / (np.pi * (hi - lo)) if lo > 0 else np.inf
        d = np.where(ax >= hi, 0.0, np.where(ax == 0, at0, d))
        return float(d) if d.ndim == 0 else d

    return density


def tone_validity_prob(M: int, N: int, tau: int) -> float:
    """Share of length-N windows of an M-PSK stream with no phase change."""
    for name, v, least in (("M", M, 2), ("N", N, 1), ("tau", tau, 1)):
        if int(v) != v or v < least:
            raise ValueError(f"{name} must be an integer >= {least}, got {v!r}")
    c = -(-N // tau)
    p = Fraction(1, M) ** c * (1 + (M - 1) * (c - Fraction(N - 1, tau)))
    return float(p)


@dataclass(frozen=True)
class BpskCase2Ensemble:
    """Phase-flip patterns with at most one transition in the window.

    Row ``i`` flips the oldest ``i`` samples; row 0 has no transition and
    the newest sample is never flipped.
    """

    E: np.ndarray
    probs: np.ndarray
    exact: tuple

    @property
    def log_probs(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.probs)


def bpsk_case2_ensemble(N: int, tau: int) -> BpskCase2Ensemble:
    if N < 1 or tau < 1:
        raise ValueError("N and tau must be >= 1")
    if N > tau:
        raise ValueError(f"exact BPSK ensemble needs N <= tau (N={N}, tau={tau})")
    i = np.arange(N)
    E = (i[:, None] > i[None, :]).astype(np.int8)
    exact = (1 - Fraction(N - 1, 2 * tau),) + (Fraction(1, 2 * tau),) * (N - 1)
    return BpskCase2Ensemble(E, np.array([float(p) for p in exact]), exact)


@dataclass(frozen=True)
class LfmPrior:
    amplitude: tuple[float, float]
    frequency: tuple[float, float]
    deviation_bound: float


def lfm_effective_prior(p: LfmParams, window: int) -> LfmPrior:
    """Treat a narrowband chirp as a tone of unknown frequency in its sweep band."""
    lo, hi = p.frequency - p.sweep / 2, p.frequency + p.sweep / 2
    if lo < 0 or hi > 0.5:
        raise ValueError(f"LFM band [{lo}, {hi}] exceeds [0, 0.5]")
    return LfmPrior((p.amplitude, p.amplitude), (lo, hi), p.sweep * window / (2 * p.period))


# ------------------------------------------------------------ quadrature

@dataclass(frozen=True)
class QuadratureSpec:
    x0_nodes: int = 512
    phase_nodes: int = 64
    frequency_nodes: int = 64
    amplitude_nodes: int = 16
    refine_tol: float = 1e-6

    def __post_init__(self):
        for name in ("x0_nodes", "phase_nodes", "frequency_nodes", "amplitude_nodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.refine_tol <= 0:
            raise ValueError("refine_tol must be > 0")


def _interval_nodes(iv, count):
    lo, hi = iv
    if lo == hi:
        return np.array([lo]), np.array([0.0])
    k = np.arange(count)
    return lo + (k + 0.5) * (hi - lo) / count, np.full(count, -math.log(count))


class NodeGrid:
    """Quadrature nodes for one scenario model.

    Parameters
    ----------
    s : ScenarioModel
        Supplies the prior, quantizer, noise model and window length.
    quad : QuadratureSpec
    bpsk_mode : {"tone", "exact"}
        Tone approximation (Case I) or the one-transition ensemble (Case II)
        for BPSK desired signals. Ignored for tone inputs.
    """

    def __init__(self, s: ScenarioModel, quad: QuadratureSpec | None = None, bpsk_mode: str = "tone"):
        quad = quad or QuadratureSpec()
        prior = s.prior
        self.quad = quad
        self.quantizer = s.quantizer
        self.sigma = prior.sigma
        self.window = N = s.window
        if N < 1:
            raise ValueError("likelihood needs a window of at least one sample")
        self.amp_lo, self.amp_hi = prior.amplitude
        self.n_rel = np.arange(-N + 1, 1, dtype=float)

        self.freq_nodes, freq_logw = _interval_nodes(prior.frequency, quad.frequency_nodes)

        if bpsk_mode not in ("tone", "exact"):
            raise ValueError(f"unknown BPSK mode {bpsk_mode!r}")
        if s.desired_kind == "bpsk" and bpsk_mode == "exact":
            ens = bpsk_case2_ensemble(N, s.desired.tau)
            self.flips, rows_logw = ens.E.astype(float), ens.log_probs
        else:
            self.flips, rows_logw = np.zeros((1, N)), np.zeros(1)
        self.bpsk_mode = bpsk_mode if s.desired_kind == "bpsk" else "tone"

        # interferer part does not depend on x0: (Jz, N) samples and weights
        if prior.has_interferer:
            za, za_w = _interval_nodes(prior.interferer_amplitude, quad.amplitude_nodes)
            zf, zf_w = _interval_nodes(prior.interferer_frequency, quad.frequency_nodes)
            k = np.arange(quad.phase_nodes)
            zp = (k + 0.5) * TWO_PI / quad.phase_nodes
            zp_w = np.full(quad.phase_nodes, -math.log(quad.phase_nodes))
            arg = TWO_PI * zf[None, :, None, None] * self.n_rel + zp[None, None, :, None]
            z = za[:, None, None, None] * np.cos(arg)
            self.z_samples = z.reshape(-1, N)
            self.z_logw = (za_w[:, None, None] + zf_w[None, :, None] + zp_w[None, None, :]).ravel()
        else:
            self.z_samples = np.zeros((1, N))
            self.z_logw = np.zeros(1)

        # fixed part of the inner weights: frequency x branch x row x interferer
        self._fixed_logw = (
            freq_logw[:, None, None, None]
            + np.full(2, -math.log(2.0))[None, :, None, None]
            + rows_logw[None, None, :, None]
            + self.z_logw[None, None, None, :]
        )
        self.n_amp = 1 if self.amp_lo == self.amp_hi else quad.amplitude_nodes
        self.n_inner = self.n_amp * self._fixed_logw.size

        # x0 grid
        I = quad.x0_nodes if self.amp_hi > 0 else 1
        self.u = (np.arange(I) + 0.5) * np.pi / I
        self.x0 = self.amp_hi * np.cos(self.u)
        self.density = prior_x0(prior)
        if self.amp_lo == self.amp_hi:
            w = np.full(I, 1.0 / I)
        else:
            w = self.density(self.x0) * np.sin(self.u)
            w = w / w.sum()
        with np.errstate(divide="ignore"):
            self.log_weights = np.log(w)
        self._grid = None

    # ------------------------------------------------------------------
    def x0_of_u(self, u):
        return self.amp_hi * np.cos(u)

    def log_prior_density(self, u):
        """log p(x0) at ``x0 = A_H cos(u)``."""
        u = np.asarray(u, dtype=float)
        if self.amp_lo == self.amp_hi:
            with np.errstate(divide="ignore"):
                return -np.log(np.pi * self.amp_hi * np.sin(u))
        with np.errstate(divide="ignore"):
            return np.log(self.density(self.x0_of_u(u)))

    def _amplitudes(self, x0):
        """Amplitude nodes and conditional log weights given x0, shape (M, Ja)."""
        M = x0.size
        if self.amp_lo == self.amp_hi:
            return np.full((M, 1), self.amp_hi), np.zeros((M, 1))
        t, gw = np.polynomial.legendre.leggauss(self.quad.amplitude_nodes)
        ax = np.maximum(np.abs(x0), 1e-12 * self.amp_hi)
        t_lo = np.arccosh(np.maximum(np.maximum(self.amp_lo, ax) / ax, 1.0))
        t_hi = np.arccosh(np.maximum(self.amp_hi / ax, 1.0))
        tt = t_lo[:, None] + (t[None, :] + 1.0) * 0.5 * (t_hi - t_lo)[:, None]
        a = ax[:, None] * np.cosh(tt)
        a = np.minimum(np.maximum(a, ax[:, None]), self.amp_hi)
        with np.errstate(divide="ignore"):
            logw = np.log(np.broadcast_to(gw / gw.sum(), a.shape).copy())
        logw[t_hi <= t_lo] = -np.inf
        return a, logw

    def inner(self, u):
        """Noiseless window samples ``(M, J, N)`` and log weights ``(M, J)``."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        x0 = self.x0_of_u(u)
        a, a_logw = self._amplitudes(x0)  # (M, Ja)
        M, Ja = a.shape
        N = self.window
        with np.errstate(invalid="ignore", divide="ignore"):
            phi = np.arccos(np.clip(x0[:, None] / np.where(a > 0, a, 1.0), -1.0, 1.0))
        branch = np.stack([phi, -phi], axis=-1)  # (M, Ja, 2)
        # (M, Ja, Jf, 2, R, N)
        arg = (
            TWO_PI * self.freq_nodes[None, None, :, None, None, None] * self.n_rel
            + branch[:, :, None, :, None, None]
            + np.pi * self.flips[None, None, None, None, :, :]
        )
        x = a[:, :, None, None, None, None] * np.cos(arg)
        s = x[:, :, :, :, :, None, :] + self.z_samples[None, None, None, None, None, :, :]
        logv = a_logw[:, :, None, None, None, None] + self._fixed_logw[None, None]
        return s.reshape(M, -1, N), logv.reshape(M, -1)

    def grid_inner(self):
        """Inner nodes on the fixed x0 grid (cached)."""
        if self._grid is None:
            self._grid = self.inner(self.u)
        return self._grid

    def table_bytes(self) -> int:
        return 8 * self.window * self.quantizer.n_codes * self.u.size * self.n_inner

    def loglik_points(self, u, codes, backend=None):
        """log p(y_w | x0(u_w)) for one u per window."""
        s, logv = self.inner(u)
        codes0 = np.atleast_2d(codes) - 1
        q = self.quantizer
        return _accel.point_loglik(s, logv, codes0, q.lower, q.upper, self.sigma, backend)


def likelihood_window(s: ScenarioModel, y, x0: float, quad: QuadratureSpec | None = None,
                      bpsk_mode: str = "tone", grid: NodeGrid | None = None) -> float:
    """p(y | x0) for one window ``y`` (codes, oldest first)."""
    grid = grid or NodeGrid(s, quad, bpsk_mode)
    y = np.asarray(y)
    if y.shape != (grid.window,) or y.min() < 1 or y.max() > s.quantizer.n_codes:
        raise ValueError(f"invalid window {y!r} for N={grid.window}, b={s.quantizer.bits}")
    if abs(x0) > grid.amp_hi:
        return 0.0
    u = math.acos(x0 / grid.amp_hi) if grid.amp_hi > 0 else 0.5 * math.pi
    return float(np.exp(grid.loglik_points(np.array([u]), y[None, :])[0]))
