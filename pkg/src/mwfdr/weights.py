"""Weight vectors, weight matrices and threshold collections.

A weight matrix stores ``W_i(k/m)`` with row ``i`` a hypothesis and column
``k - 1`` the rejection proportion ``k/m``.  The matching threshold collection
stores ``Delta_i(k/m) = alpha * W_i(k/m) * k/m`` clamped to ``[0, 1]``;
``Delta_i(0) = 0`` is implicit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from .models import HypothesisConfig, UnconditionalConfig, norm_log_sf

SUM_RTOL = 1e-9
MONO_ATOL = 1e-12
SNAP = 1e-300


class InfeasibleWeightsError(ValueError):
    """The sum-to-m constraint cannot be met on the active set."""


class NonConvergenceError(RuntimeError):
    """A root bracket could not be established or the root is not accurate enough."""


# --------------------------------------------------------------------------
# Containers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdCollection:
    """Per-hypothesis thresholds on the grid ``u = 1/m, ..., 1``."""

    delta: np.ndarray

    def __post_init__(self):
        d = np.array(self.delta, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValueError("threshold collection must be an m x m array")
        if np.any(np.isnan(d)) or np.any(d < 0):
            raise ValueError("thresholds must be non-negative")
        d = np.minimum(d, 1.0)
        if np.any(np.diff(d, axis=1) < -MONO_ATOL):
            raise ValueError("threshold rows must be nondecreasing in k")
        d.setflags(write=False)
        object.__setattr__(self, "delta", d)

    @property
    def m(self) -> int:
        return self.delta.shape[0]

    def padded(self) -> np.ndarray:
        """``(m, m + 1)`` array whose column ``k`` is ``Delta(k/m)`` (column 0 is zero)."""
        return np.hstack([np.zeros((self.m, 1)), self.delta])

    def at(self, k: int) -> np.ndarray:
        if k == 0:
            return np.zeros(self.m)
        return self.delta[:, k - 1]

    @classmethod
    def linear(cls, m: int, level: float) -> "ThresholdCollection":
        """Uniform thresholds ``level * k/m`` (the linear step-up line)."""
        k = np.arange(1, m + 1) / m
        return cls(np.tile(level * k, (m, 1)))


@dataclass(frozen=True)
class WeightMatrix:
    """Discretised weight function; entry ``(i, k-1)`` is ``W_i(k/m)``."""

    w: np.ndarray
    alpha: float
    corrected: bool = False

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("weight matrix must be m x m")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if np.any(np.isnan(w)) or np.any(w < 0):
            raise ValueError("weights must be non-negative")
        m = w.shape[0]
        sums = w.sum(axis=0)
        if self.corrected:
            if np.any(sums > m * (1 + SUM_RTOL)):
                raise ValueError("corrected weight columns must sum to at most m")
        elif np.any(np.abs(sums - m) > SUM_RTOL * m):
            raise ValueError("weight columns must sum to m")
        k = np.arange(1, m + 1)
        scaled = w * k
        if np.any(np.diff(scaled, axis=1) < -MONO_ATOL * np.maximum(1.0, scaled[:, 1:])):
            raise ValueError("k -> k * W_i(k/m) must be nondecreasing")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def m(self) -> int:
        return self.w.shape[0]

    def thresholds(self) -> ThresholdCollection:
        u = np.arange(1, self.m + 1) / self.m
        return ThresholdCollection(self.alpha * self.w * u)

    def column(self, k: int) -> np.ndarray:
        """Weight vector ``W(k/m)`` for ``k`` in ``1..m``."""
        return self.w[:, k - 1].copy()

    @classmethod
    def constant(cls, w, alpha: float) -> "WeightMatrix":
        w = check_weight_vector(w)
        return cls(np.tile(w[:, None], (1, w.size)), alpha)


def check_weight_vector(w) -> np.ndarray:
    w = np.asarray(w, dtype=float).ravel()
    if np.any(np.isnan(w)) or np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if abs(w.sum() - w.size) > SUM_RTOL * w.size:
        raise ValueError("weight vector must sum to m")
    return w


# --------------------------------------------------------------------------
# Optimal weights
# --------------------------------------------------------------------------


def _active_mask(mu: np.ndarray, active) -> np.ndarray:
    if active is None:
        return mu > 0
    mask = np.asarray(active).astype(bool).ravel()
    if mask.shape != mu.shape:
        raise ValueError("active mask must match mu")
    return mask


def _grow_bracket(g: Callable[[float], float], start: float = 10.0, limit: float = 1e12):
    b = start
    while b <= limit:
        lo, hi = g(-b), g(b)
        if lo > 0 and hi < 0:
            return -b, b
        b *= 2.0
    raise NonConvergenceError("could not bracket the normalising constant")


def gaussian_normalizer(mu_active: np.ndarray, target: float) -> float:
    """Solve ``sum_i sf(mu_i/2 + c/mu_i) = target`` for ``c`` (log space)."""
    mu_active = np.asarray(mu_active, dtype=float)
    if target <= 0:
        raise InfeasibleWeightsError("target mass must be positive")
    if target >= mu_active.size:
        raise InfeasibleWeightsError(
            f"m*alpha*u = {target:g} is not below the active count {mu_active.size}"
        )
    log_target = np.log(target)
    half = mu_active / 2.0

    def g(c):
        return logsumexp(norm_log_sf(half + c / mu_active)) - log_target

    lo, hi = _grow_bracket(g)
    return optimize.brentq(g, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=500)


def optimal_weights_gaussian(mu, alpha: float, u: float, active=None) -> np.ndarray:
    """Power-maximising weight vector at rejection proportion ``u`` (Gaussian family).

    ``active`` selects the hypotheses that may receive weight: all of them in
    the unconditional model, the false nulls in the conditional model.
    Returns a length-m vector summing to m, zero off the active set.
    """
    mu = np.asarray(mu, dtype=float).ravel()
    mask = _active_mask(mu, active)
    if not 0 < u <= 1:
        raise ValueError("u must lie in (0, 1]")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if np.any(mu[mask] <= 0):
        raise ValueError("active hypotheses need positive means")
    m = mu.size
    t = alpha * u
    mu_a = mu[mask]
    c = gaussian_normalizer(mu_a, m * t)
    w = np.zeros(m)
    w[mask] = np.exp(norm_log_sf(mu_a / 2.0 + c / mu_a) - np.log(t))
    w[w < SNAP] = 0.0
    if abs(w.sum() - m) > SUM_RTOL * m:
        raise NonConvergenceError(f"weights sum to {w.sum():.12g}, expected {m}")
    return w


def optimal_weights_generic(finv: Callable[[float], np.ndarray], m: int, alpha: float, u: float,
                            active=None) -> np.ndarray:
    """Optimal weights for any decreasing alternative densities.

    ``finv(y)`` must return the vector ``(f_i^{-1}(y))`` over the active
    hypotheses, with values in ``[0, 1]`` (0 above ``f_i(0+)``, 1 below
    ``f_i(1-)``).  Solves ``sum_i f_i^{-1}(y) = m*alpha*u`` in ``log y``.
    """
    mask = np.ones(m, dtype=bool) if active is None else np.asarray(active).astype(bool)
    t = alpha * u
    target = m * t
    if target >= mask.sum():
        raise InfeasibleWeightsError("m*alpha*u is not below the active count")

    def g(s):
        return float(np.sum(finv(np.exp(s)))) - target

    lo, hi = _grow_bracket(g, start=1.0, limit=700.0)
    s = optimize.brentq(g, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    w = np.zeros(m)
    w[mask] = np.asarray(finv(np.exp(s)), dtype=float) / t
    if abs(w.sum() - m) > 1e-7 * m:
        raise NonConvergenceError("generic solver did not reach the sum-to-m constraint")
    return w


def _model_mask(mu, model: str, h=None):
    mu = np.asarray(mu, dtype=float).ravel()
    if model == "unconditional":
        return mu, np.ones(mu.size, dtype=bool)
    if model == "conditional":
        mask = (mu > 0) if h is None else np.asarray(h).astype(bool)
        return mu, mask
    raise ValueError(f"unknown model kind {model!r}")


def optimal_weight_matrix(mu, alpha: float, model: str = "unconditional", h=None) -> WeightMatrix:
    """Stack the optimal weight vectors at ``u = k/m`` for ``k = 1..m``."""
    mu, mask = _model_mask(mu, model, h)
    m = mu.size
    cols = [optimal_weights_gaussian(mu, alpha, k / m, mask) for k in range(1, m + 1)]
    return WeightMatrix(np.column_stack(cols), alpha)


def optimal_matrix_for(model_cfg, alpha: float) -> WeightMatrix:
    """Optimal weight matrix for a model config (oracle weights)."""
    if isinstance(model_cfg, HypothesisConfig):
        return optimal_weight_matrix(model_cfg.mu, alpha, "conditional", model_cfg.h)
    if isinstance(model_cfg, UnconditionalConfig):
        return optimal_weight_matrix(model_cfg.mu, alpha, "unconditional")
    raise TypeError("unsupported model config")


class OptimalGaussianWeights:
    """The optimal weight function evaluated at arbitrary ``u`` in (0, 1].

    Used by the bound evaluators, which need ``G_W`` off the grid.
    """

    def __init__(self, mu, alpha: float, model: str = "unconditional", h=None):
        self.mu, self.mask = _model_mask(mu, model, h)
        self.alpha = float(alpha)
        self.m = self.mu.size
        self._cache: dict[float, np.ndarray] = {}

    def weights_at(self, u: float) -> np.ndarray:
        u = float(u)
        if u not in self._cache:
            self._cache[u] = optimal_weights_gaussian(self.mu, self.alpha, u, self.mask)
        return self._cache[u]

    def thresholds_at(self, u: float) -> np.ndarray:
        if u <= 0:
            return np.zeros(self.m)
        return np.minimum(self.alpha * u * self.weights_at(u), 1.0)

    def matrix(self) -> WeightMatrix:
        return WeightMatrix(np.column_stack([self.weights_at(k / self.m) for k in range(1, self.m + 1)]),
                            self.alpha)


class ConstantWeights:
    """A fixed weight vector viewed as a weight function."""

    def __init__(self, w, alpha: float):
        self.w = check_weight_vector(w)
        self.alpha = float(alpha)
        self.m = self.w.size

    def weights_at(self, u: float) -> np.ndarray:
        return self.w

    def thresholds_at(self, u: float) -> np.ndarray:
        return np.minimum(self.alpha * max(u, 0.0) * self.w, 1.0)


class InterpolatedWeights:
    """Continuous extension of a weight matrix: thresholds interpolated linearly in ``u``.

    Linear interpolation of ``Delta`` between grid points (with ``Delta(0) = 0``)
    keeps rows nondecreasing and the mean threshold equal to ``alpha * u``.
    """

    def __init__(self, wm: WeightMatrix):
        self.wm = wm
        self.alpha = wm.alpha
        self.m = wm.m
        self._delta = wm.alpha * wm.w * (np.arange(1, wm.m + 1) / wm.m)
        self._delta = np.hstack([np.zeros((wm.m, 1)), self._delta])

    def _interp(self, u: float) -> np.ndarray:
        x = min(max(u, 0.0), 1.0) * self.m
        k = min(int(np.floor(x)), self.m - 1)
        frac = x - k
        return (1 - frac) * self._delta[:, k] + frac * self._delta[:, k + 1]

    def thresholds_at(self, u: float) -> np.ndarray:
        return np.minimum(self._interp(u), 1.0)

    def weights_at(self, u: float) -> np.ndarray:
        if u <= 0:
            raise ValueError("u must be positive")
        return self._interp(u) / (self.alpha * u)


def as_weight_function(obj):
    """Coerce a weight matrix, vector-backed or continuous weight function to a weight function."""
    if isinstance(obj, WeightMatrix):
        return InterpolatedWeights(obj)
    if hasattr(obj, "thresholds_at") and hasattr(obj, "weights_at"):
        return obj
    raise TypeError("expected a WeightMatrix or a weight function")


# --------------------------------------------------------------------------
# Corrections and simple weightings
# --------------------------------------------------------------------------


def correct_su(wm: WeightMatrix) -> WeightMatrix:
    """Step-up safe weights ``W_i(u) / (1 + alpha * W_i(1))``."""
    if wm.corrected:
        raise ValueError("matrix is already corrected")
    denom = 1.0 + wm.alpha * wm.w[:, -1]
    return WeightMatrix(wm.w / denom[:, None], wm.alpha, corrected=True)


def correct_sd(wm: WeightMatrix) -> WeightMatrix:
    """Step-down safe weights ``W_i(u) / (1 + alpha * u * W_i(u))``."""
    if wm.corrected:
        raise ValueError("matrix is already corrected")
    u = np.arange(1, wm.m + 1) / wm.m
    return WeightMatrix(wm.w / (1.0 + wm.alpha * u * wm.w), wm.alpha, corrected=True)


def uniform_h1_weights(h) -> np.ndarray:
    """Weight ``m/m1`` on every false null, 0 elsewhere."""
    h = np.asarray(h).astype(bool).ravel()
    m1 = int(h.sum())
    if m1 == 0:
        raise ValueError("need at least one false null")
    return np.where(h, h.size / m1, 0.0)


def random_weight_matrix(m: int, alpha: float, rng: np.random.Generator, concentration=1.0,
                         tilt=None) -> WeightMatrix:
    """Random valid weight matrix with nondecreasing thresholds.

    Threshold increments ``Delta_i(k/m) - Delta_i((k-1)/m) = alpha * d_ik`` with
    each column ``d_{.k}`` Dirichlet, so ``sum_i W_i(k/m) = m`` exactly in
    exact arithmetic.  ``tilt`` (length m, positive) skews the Dirichlet mean.
    """
    base = np.full(m, float(concentration)) if tilt is None else concentration * np.asarray(tilt, float)
    d = rng.dirichlet(base, size=m).T  # (i, k)
    cum = np.cumsum(d, axis=1)
    k = np.arange(1, m + 1)
    w = cum * (m / k)
    w *= m / w.sum(axis=0)
    return WeightMatrix(w, alpha)


# --------------------------------------------------------------------------
# Continuous Gaussian limit weighting
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LimitWeights:
    """``t -> W_t(u)`` for the continuous one-sided Gaussian setting."""

    mu_fn: Callable
    alpha: float
    u: float
    c: float
    nodes: np.ndarray

    def __call__(self, t):
        mu_t = np.asarray(self.mu_fn(np.asarray(t, dtype=float)), dtype=float)
        out = np.exp(norm_log_sf(mu_t / 2.0 + self.c / mu_t) - np.log(self.alpha * self.u))
        return np.where(mu_t > 0, out, 0.0)

    def integral(self) -> float:
        """Midpoint-rule value of the integral of ``W_t(u)`` over [0, 1] (should be 1)."""
        return float(np.mean(self(self.nodes)))


def limit_weights_continuous_gaussian(mu_fn: Callable, alpha: float, u: float,
                                      resolution: int = 10_000) -> LimitWeights:
    """Limit weighting for means ``mu(t)``, ``c`` solved against a midpoint rule."""
    if not 0 < u <= 1:
        raise ValueError("u must lie in (0, 1]")
    nodes = (np.arange(resolution) + 0.5) / resolution
    mu = np.asarray(mu_fn(nodes), dtype=float)
    if np.any(mu <= 0):
        raise ValueError("mu(t) must be positive on (0, 1]")
    target = alpha * u
    half = mu / 2.0
    log_target = np.log(target * resolution)

    def g(c):
        return logsumexp(norm_log_sf(half + c / mu)) - log_target

    lo, hi = _grow_bracket(g)
    c = optimize.brentq(g, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=500)
    return LimitWeights(mu_fn=mu_fn, alpha=float(alpha), u=float(u), c=float(c), nodes=nodes)


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def write_weight_csv(path, wm: WeightMatrix, normalize: bool = False, columns=None) -> None:
    """Row ``i`` = hypothesis, column ``k`` = ``W_i(k/m)``; optional max-normalised columns.

    ``columns`` selects grid indices ``k`` (default: all of ``1..m``).
    """
    ks = list(range(1, wm.m + 1)) if columns is None else [int(k) for k in columns]
    if any(k < 1 or k > wm.m for k in ks):
        raise ValueError("column indices must lie in 1..m")
    w = wm.w[:, [k - 1 for k in ks]]
    if normalize:
        peak = w.max(axis=0)
        w = np.divide(w, peak, out=np.zeros_like(w), where=peak > 0)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hypothesis"] + [f"k{k}" for k in ks])
        for i, row in enumerate(w, start=1):
            writer.writerow([i] + [f"{x:.10g}" for x in row])


def read_weight_csv(path, alpha: float, corrected: bool = False) -> WeightMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    w = np.array([[float(x) for x in r[1:]] for r in rows])
    return WeightMatrix(w, alpha, corrected=corrected)
