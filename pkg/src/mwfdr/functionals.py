"""Rejection-proportion functionals I, J and I_lambda^{+/-}, and rejection curves."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .models import HypothesisConfig, UnconditionalConfig, alt_cdf
from .weights import ThresholdCollection

BISECT_TOL = 1e-10


@dataclass(frozen=True)
class StepCurve:
    """Values ``F(k/m)`` for ``k = 0..m`` of a nondecreasing curve with ``F(0) = 0``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size < 2:
            raise ValueError("a step curve needs at least two grid values")
        if v[0] != 0:
            raise ValueError("values[0] must be 0")
        if np.any(np.diff(v) < 0):
            raise ValueError("values must be nondecreasing")
        if np.any((v < 0) | (v > 1)):
            raise ValueError("values must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.size - 1

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.m + 1) / self.m


def _crossing_mask(curve: StepCurve) -> np.ndarray:
    # compare counts to k rather than proportions to k/m: exact for empirical curves
    k = np.arange(curve.m + 1)
    return curve.values * curve.m >= k - 1e-9


def cap_I_index(curve: StepCurve) -> int:
    """Largest ``k`` with ``F(k/m) >= k/m``."""
    ok = _crossing_mask(curve)
    return int(np.flatnonzero(ok)[-1])


def cap_J_index(curve: StepCurve) -> int:
    """Largest ``k`` with ``F(j/m) >= j/m`` for every ``j <= k``."""
    ok = _crossing_mask(curve)
    bad = np.flatnonzero(~ok)
    return curve.m if bad.size == 0 else int(bad[0] - 1)


def cap_I(curve: StepCurve) -> float:
    return cap_I_index(curve) / curve.m


def cap_J(curve: StepCurve) -> float:
    return cap_J_index(curve) / curve.m


def continuous_I(F: Callable[[float], float], tol: float = BISECT_TOL, scan: int = 2000) -> float:
    """``sup{u in [0, 1] : F(u) >= u}`` for a continuous nondecreasing ``F``.

    A coarse scan from the top finds the last sign change of ``F(u) - u``,
    which is then refined by bisection.
    """
    if F(1.0) >= 1.0:
        return 1.0
    grid = np.linspace(0.0, 1.0, scan + 1)
    vals = np.array([F(u) - u for u in grid])
    ok = np.flatnonzero(vals >= 0)
    if ok.size == 0:
        return 0.0
    lo = grid[ok[-1]]
    hi = grid[ok[-1] + 1]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if F(mid) >= mid:
            lo = mid
        else:
            hi = mid
    return lo


def i_lambda_plus(F: Callable[[float], float], lam: float, i_value: float | None = None) -> float:
    """``(I(F) + lam) - F(I(F) + lam)``; requires ``lam < 1 - I(F)``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    i_f = continuous_I(F) if i_value is None else i_value
    if lam >= 1 - i_f:
        raise ValueError(f"lambda={lam} must be below 1 - I(F) = {1 - i_f:.6g}")
    x = i_f + lam
    return x - F(x)


def i_lambda_minus(F: Callable[[float], float], lam: float, i_value: float | None = None) -> float:
    """``F(I(F) - lam) - (I(F) - lam)``; requires ``lam < I(F)``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    i_f = continuous_I(F) if i_value is None else i_value
    if lam >= i_f:
        raise ValueError(f"lambda={lam} must be below I(F) = {i_f:.6g}")
    x = i_f - lam
    return F(x) - x


def empirical_G(p, delta: ThresholdCollection) -> StepCurve:
    """``values[k] = m^{-1} #{i : p_i <= Delta_i(k/m)}``, with ``values[0] = 0``."""
    p = np.asarray(p, dtype=float).ravel()
    if p.size != delta.m:
        raise ValueError(f"got {p.size} p-values for a threshold collection of size {delta.m}")
    counts = (p[:, None] <= delta.delta).sum(axis=0)
    return StepCurve(np.concatenate([[0.0], counts / p.size]))


def _rejection_probs(model, thresholds: np.ndarray) -> np.ndarray:
    """``P(p_i <= t_i)`` for thresholds of shape ``(m, ...)``."""
    mu = model.mu.reshape((-1,) + (1,) * (thresholds.ndim - 1))
    if isinstance(model, HypothesisConfig):
        return alt_cdf(thresholds, mu)
    if isinstance(model, UnconditionalConfig):
        return model.pi0 * thresholds + model.pi1 * alt_cdf(thresholds, mu)
    raise TypeError("unsupported model config")


def mean_G(model, delta: ThresholdCollection) -> StepCurve:
    """Mean rejection curve ``m^{-1} sum_i P(p_i <= Delta_i(k/m))`` on the grid."""
    if model.m != delta.m:
        raise ValueError("model and thresholds disagree on m")
    probs = _rejection_probs(model, delta.delta)
    return StepCurve(np.concatenate([[0.0], probs.mean(axis=0)]))


def mean_G_function(model, weight_fn) -> Callable[[float], float]:
    """Continuous ``u -> G_W(u)`` for a weight function exposing ``thresholds_at(u)``."""
    if model.m != weight_fn.m:
        raise ValueError("model and weight function disagree on m")

    def G(u: float) -> float:
        if u <= 0:
            return 0.0
        return float(_rejection_probs(model, weight_fn.thresholds_at(min(u, 1.0))).mean())

    return G
