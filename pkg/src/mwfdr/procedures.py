"""Step-up and step-down procedures.

Three routes compute the same rejection sets:

* the functional route, ``I`` / ``J`` of the empirical rejection curve;
* the reorder algorithms (weighted LSU and the step-wise algorithms for
  ``SU(W)`` / ``SD(W)``);
* batch routes that process many p-value vectors at once for Monte Carlo.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .functionals import cap_I_index, cap_J_index, empirical_G
from .weights import ThresholdCollection, WeightMatrix, check_weight_vector


@dataclass(frozen=True)
class RejectionOutcome:
    rejected: np.ndarray
    k_hat: int
    m: int
    thresholds_used: np.ndarray

    @property
    def u_hat(self) -> float:
        return self.k_hat / self.m

    @property
    def mask(self) -> np.ndarray:
        out = np.zeros(self.m, dtype=bool)
        out[self.rejected] = True
        return out


def _as_thresholds(obj) -> ThresholdCollection:
    if isinstance(obj, ThresholdCollection):
        return obj
    if isinstance(obj, WeightMatrix):
        return obj.thresholds()
    raise TypeError("expected a WeightMatrix or ThresholdCollection")


def _outcome(p: np.ndarray, delta: ThresholdCollection, k: int) -> RejectionOutcome:
    used = delta.at(k)
    rejected = np.flatnonzero(p <= used) if k > 0 else np.array([], dtype=np.int64)
    return RejectionOutcome(rejected=rejected, k_hat=k, m=p.size, thresholds_used=used.copy())


def _check_p(p, m=None) -> np.ndarray:
    p = np.asarray(p, dtype=float).ravel()
    if m is not None and p.size != m:
        raise ValueError(f"expected {m} p-values, got {p.size}")
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("p-values must lie in [0, 1]")
    return p


# --------------------------------------------------------------------------
# Functional route
# --------------------------------------------------------------------------


def su_multiweight(p, wm) -> RejectionOutcome:
    """Multi-weighted step-up: ``u_hat = I(G_hat)``, reject ``p_i <= Delta_i(u_hat)``."""
    delta = _as_thresholds(wm)
    p = _check_p(p, delta.m)
    return _outcome(p, delta, cap_I_index(empirical_G(p, delta)))


def sd_multiweight(p, wm) -> RejectionOutcome:
    """Multi-weighted step-down: ``u_tilde = J(G_hat)``."""
    delta = _as_thresholds(wm)
    p = _check_p(p, delta.m)
    return _outcome(p, delta, cap_J_index(empirical_G(p, delta)))


# --------------------------------------------------------------------------
# Reorder route
# --------------------------------------------------------------------------


def _weighted_pvalues(p: np.ndarray, w: np.ndarray) -> np.ndarray:
    # zero weight: never rejected unless p == 0, which is rejected at any level
    out = np.full(p.shape, np.inf)
    pos = w > 0
    out[pos] = p[pos] / w[pos]
    out[(~pos) & (p == 0)] = 0.0
    return out


def weighted_lsu(p, w, alpha: float) -> RejectionOutcome:
    """Weighted linear step-up on ``p_i / w_i``, largest ``r`` with ``p'_(r) <= alpha r/m``."""
    w = check_weight_vector(w)
    p = _check_p(p, w.size)
    m = p.size
    pw = _weighted_pvalues(p, w)
    ordered = np.sort(pw, kind="stable")
    ok = ordered <= alpha * np.arange(1, m + 1) / m
    r = int(np.flatnonzero(ok)[-1] + 1) if ok.any() else 0
    rejected = np.flatnonzero(pw <= alpha * r / m) if r > 0 else np.array([], dtype=np.int64)
    used = alpha * w * r / m
    return RejectionOutcome(rejected=rejected, k_hat=r, m=m, thresholds_used=used)


def lsu(p, alpha: float) -> RejectionOutcome:
    p = np.asarray(p, dtype=float).ravel()
    return weighted_lsu(p, np.ones(p.size), alpha)


def lsu_star(p, alpha: float, pi0: float) -> RejectionOutcome:
    """Oracle-adaptive LSU with thresholds ``alpha * u / pi0``."""
    if not 0 < pi0 <= 1:
        raise ValueError("pi0 must lie in (0, 1]")
    p = np.asarray(p, dtype=float).ravel()
    return weighted_lsu(p, np.ones(p.size), alpha / pi0)


def _order_at(p: np.ndarray, wm: WeightMatrix, k: int) -> np.ndarray:
    return np.argsort(_weighted_pvalues(p, wm.w[:, k - 1]), kind="stable")


def su_algorithm_b1(p, wm: WeightMatrix) -> RejectionOutcome:
    """Step-wise step-up: scan ``r = m, m-1, ..., 1`` on the ``W(r/m)``-weighted p-values."""
    p = _check_p(p, wm.m)
    m = wm.m
    delta = wm.thresholds()
    for r in range(m, 0, -1):
        order = _order_at(p, wm, r)
        d = delta.at(r)
        # p'_(r) <= alpha * r/m, compared on the threshold scale
        if p[order[r - 1]] <= d[order[r - 1]]:
            return RejectionOutcome(rejected=np.sort(order[:r]), k_hat=r, m=m, thresholds_used=d.copy())
    return RejectionOutcome(rejected=np.array([], dtype=np.int64), k_hat=0, m=m, thresholds_used=np.zeros(m))


def sd_algorithm_b2(p, wm: WeightMatrix) -> RejectionOutcome:
    """Step-wise step-down: scan ``r = 1, 2, ..., m`` and stop at the first failure."""
    p = _check_p(p, wm.m)
    m = wm.m
    delta = wm.thresholds()
    for r in range(1, m + 1):
        order = _order_at(p, wm, r)
        d = delta.at(r)
        if p[order[r - 1]] > d[order[r - 1]]:
            if r == 1:
                return RejectionOutcome(rejected=np.array([], dtype=np.int64), k_hat=0, m=m,
                                        thresholds_used=np.zeros(m))
            return RejectionOutcome(rejected=np.sort(order[: r - 1]), k_hat=r - 1, m=m,
                                    thresholds_used=delta.at(r - 1).copy())
    return RejectionOutcome(rejected=np.arange(m), k_hat=m, m=m, thresholds_used=delta.at(m).copy())


# --------------------------------------------------------------------------
# Batch route
# --------------------------------------------------------------------------


def first_rejection_index(p: np.ndarray, delta: ThresholdCollection) -> np.ndarray:
    """For each entry, the smallest ``k`` with ``p_i <= Delta_i(k/m)`` (``m + 1`` if none)."""
    p = np.atleast_2d(p)
    n, m = p.shape
    if m != delta.m:
        raise ValueError("p-value batch and thresholds disagree on m")
    k = np.empty((n, m), dtype=np.int64)
    for i in range(m):
        k[:, i] = np.searchsorted(delta.delta[i], p[:, i], side="left") + 1
    return k


def rejection_counts(k_first: np.ndarray) -> np.ndarray:
    """``C[r, k] = #{i : p_i <= Delta_i(k/m)}`` for ``k = 0..m``."""
    n, m = k_first.shape
    flat = (np.arange(n)[:, None] * (m + 2) + k_first).ravel()
    hist = np.bincount(flat, minlength=n * (m + 2)).reshape(n, m + 2)
    return np.cumsum(hist, axis=1)[:, : m + 1]


def su_khat_batch(counts: np.ndarray) -> np.ndarray:
    m = counts.shape[1] - 1
    ok = counts >= np.arange(m + 1)
    return m - np.argmax(ok[:, ::-1], axis=1)


def sd_khat_batch(counts: np.ndarray) -> np.ndarray:
    m = counts.shape[1] - 1
    fail = counts[:, 1:] < np.arange(1, m + 1)
    return np.where(fail.any(axis=1), np.argmax(fail, axis=1), m)


def step_batch(p, thresholds, kind: str = "su") -> np.ndarray:
    """Rejection masks ``(n, m)`` of the step-up (``"su"``) or step-down (``"sd"``) procedure."""
    delta = _as_thresholds(thresholds)
    k_first = first_rejection_index(np.asarray(p, dtype=float), delta)
    counts = rejection_counts(k_first)
    if kind == "su":
        k_hat = su_khat_batch(counts)
    elif kind == "sd":
        k_hat = sd_khat_batch(counts)
    else:
        raise ValueError(f"unknown procedure kind {kind!r}")
    return k_first <= k_hat[:, None]
