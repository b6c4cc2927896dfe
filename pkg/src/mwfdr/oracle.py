"""Brute-force references and exact formulas used to check the fast code paths.

Everything here is deliberately naive: literal scans, exhaustive grids and
closed forms.  Costs are exponential or grid-sized, so these live outside the
Monte Carlo hot path and are driven by the tests and ``mwfdr verify``.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .evaluation import Procedure, mc_evaluate, step_down, step_up
from .models import HypothesisConfig, alt_cdf
from .procedures import (
    RejectionOutcome,
    sd_algorithm_b2,
    sd_multiweight,
    su_algorithm_b1,
    su_multiweight,
)
from .weights import (
    ThresholdCollection,
    WeightMatrix,
    optimal_weights_gaussian,
    random_weight_matrix,
)

BRUTE_MAX_M = 12


# --------------------------------------------------------------------------
# Brute-force step-up / step-down
# --------------------------------------------------------------------------


def _brute_counts(p, delta: ThresholdCollection) -> list[int]:
    m = delta.m
    if m > BRUTE_MAX_M:
        raise ValueError(f"brute force is limited to m <= {BRUTE_MAX_M}")
    p = [float(x) for x in np.asarray(p, dtype=float).ravel()]
    if len(p) != m:
        raise ValueError("p-values and thresholds disagree on m")
    counts = [0]
    for k in range(1, m + 1):
        counts.append(sum(1 for i in range(m) if p[i] <= delta.delta[i, k - 1]))
    return counts


def _brute_outcome(p, delta: ThresholdCollection, k: int) -> RejectionOutcome:
    p = np.asarray(p, dtype=float).ravel()
    d = np.zeros(delta.m) if k == 0 else delta.delta[:, k - 1]
    rejected = np.array([i for i in range(delta.m) if k > 0 and p[i] <= d[i]], dtype=np.int64)
    return RejectionOutcome(rejected=rejected, k_hat=k, m=delta.m, thresholds_used=d.copy())


def brute_force_stepup(p, delta: ThresholdCollection) -> RejectionOutcome:
    """Scan every ``r`` and keep the largest with ``m * G(r/m) >= r``."""
    counts = _brute_counts(p, delta)
    best = 0
    for r in range(delta.m + 1):
        if counts[r] >= r:
            best = r
    return _brute_outcome(p, delta, best)


def brute_force_stepdown(p, delta: ThresholdCollection) -> RejectionOutcome:
    """Largest ``r`` such that ``m * G(j/m) >= j`` for every ``j <= r``."""
    counts = _brute_counts(p, delta)
    best = 0
    for r in range(delta.m + 1):
        if all(counts[j] >= j for j in range(r + 1)):
            best = r
    return _brute_outcome(p, delta, best)


# --------------------------------------------------------------------------
# Optimal weights by grid search
# --------------------------------------------------------------------------


def power_at_u(mu, alpha: float, u: float, w, active=None) -> float:
    """``m^{-1} sum_{i active} F_i(alpha u w_i)``, the power of fixed thresholds ``alpha u w``."""
    mu = np.asarray(mu, dtype=float).ravel()
    w = np.asarray(w, dtype=float)
    mask = mu > 0 if active is None else np.asarray(active).astype(bool)
    vals = alt_cdf(alpha * u * w, mu if w.ndim == 1 else mu[:, None])
    vals = np.where(mask if w.ndim == 1 else mask[:, None], vals, 0.0)
    return vals.sum(axis=0) / mu.size


def _simplex_grid(m: int, resolution: float) -> np.ndarray:
    n = int(round(m / resolution))
    if abs(n * resolution - m) > 1e-9 * m:
        raise ValueError("resolution must divide m")
    if m == 2:
        w1 = np.arange(n + 1) * resolution
        return np.vstack([w1, m - w1])
    a, b = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    keep = a + b <= n
    w1 = a[keep] * resolution
    w2 = b[keep] * resolution
    return np.vstack([w1, w2, np.maximum(m - w1 - w2, 0.0)])


def grid_search_optimal_weights(mu, alpha: float, u: float, resolution: float) -> np.ndarray:
    """Argmax of ``sum_i F_i(alpha u w_i)`` over a regular grid of the simplex ``sum w = m``."""
    mu = np.asarray(mu, dtype=float).ravel()
    m = mu.size
    if m not in (2, 3):
        raise ValueError("grid search is limited to m in {2, 3}")
    limit = 1e-4 if m == 2 else 1e-2
    if resolution > limit:
        raise ValueError(f"resolution must be <= {limit} for m={m}")
    grid = _simplex_grid(m, resolution)
    obj = power_at_u(mu, alpha, u, grid, active=np.ones(m, dtype=bool))
    return grid[:, int(np.argmax(obj))].copy()


def local_maxima_along_w1(mu, alpha: float, u: float, resolution: float = 1e-3) -> int:
    """Number of strict local maxima of the m=2 objective along ``w_1`` (concavity sanity)."""
    mu = np.asarray(mu, dtype=float).ravel()
    if mu.size != 2:
        raise ValueError("m must be 2")
    grid = _simplex_grid(2, resolution)
    obj = power_at_u(mu, alpha, u, grid, active=np.ones(2, dtype=bool))
    inner = (obj[1:-1] > obj[:-2]) & (obj[1:-1] > obj[2:])
    edges = int(obj[0] > obj[1]) + int(obj[-1] > obj[-2])
    return int(inner.sum()) + edges


# --------------------------------------------------------------------------
# The m = 2 all-null step-up FDR
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class M2CounterexampleConfig:
    """Two true nulls; ``W_2 = 2 - W_1`` at both ``u = 1/2`` and ``u = 1``."""

    alpha: float
    w1_half: float
    w1_one: float

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        for v in (self.w1_half, self.w1_one):
            if not 0 <= v <= 2:
                raise ValueError("weights must lie in [0, 2]")
        # u -> u W_i(u) nondecreasing for both hypotheses
        if self.w1_half > 2 * self.w1_one + 1e-12 or (2 - self.w1_half) > 2 * (2 - self.w1_one) + 1e-12:
            raise ValueError("thresholds must be nondecreasing in u")

    def matrix(self) -> WeightMatrix:
        return WeightMatrix(
            np.array([[self.w1_half, self.w1_one], [2 - self.w1_half, 2 - self.w1_one]]), self.alpha
        )


LEAST_FAVOURABLE_M2 = M2CounterexampleConfig(alpha=0.05, w1_half=0.0, w1_one=0.5)


def m2_exact_fdr(cfg: M2CounterexampleConfig) -> float:
    """``alpha + alpha^2 (1 - W_1(1)) (W_1(1) - W_1(1/2))``."""
    a = cfg.alpha
    return a + a * a * (1 - cfg.w1_one) * (cfg.w1_one - cfg.w1_half)


def m2_exact_fdr_geometric(cfg: M2CounterexampleConfig) -> float:
    """Same quantity by direct area computation under two independent uniforms.

    With both nulls true the FDR is ``P(R nonempty)``.  The step-up rejects
    something iff some ``p_i <= Delta_i(1/2)`` or both ``p_i <= Delta_i(1)``.
    """
    d = np.minimum(cfg.matrix().thresholds().delta, 1.0)
    h1, h2 = d[0, 0], d[1, 0]
    d1, d2 = d[0, 1], d[1, 1]
    any_half = 1 - (1 - h1) * (1 - h2)
    both_full_no_half = (d1 - h1) * (d2 - h2)
    return float(any_half + both_full_no_half)


def m2_mc_fdr(cfg: M2CounterexampleConfig, replications: int, seed) -> tuple[float, float]:
    """Monte Carlo FDR of the uncorrected ``SU(W)`` with two true nulls."""
    model = HypothesisConfig(h=np.zeros(2, dtype=np.int8), mu=np.zeros(2))
    rep = mc_evaluate([step_up("SU", cfg.matrix())], model, replications, seed)["SU"]
    return rep.fdr, rep.fdr_se


# --------------------------------------------------------------------------
# Step-down checks in the all-null and m = 2 settings
# --------------------------------------------------------------------------


def lsd_first_column(wm: WeightMatrix, name: str = "LSD(W(1/m))") -> Procedure:
    """Fixed-weight step-down using the first column ``W(1/m)``."""
    return step_down(name, WeightMatrix.constant(wm.column(1), wm.alpha))


def sd_all_null_pair(wm: WeightMatrix, replications: int, seed):
    """MC reports of ``SD(W)`` and ``LSD(W(1/m))`` on the same all-null samples.

    Conditioning the random-effects model on ``m0 = m`` gives independent
    uniform p-values, which is the conditional model with ``h = 0``.
    """
    model = HypothesisConfig(h=np.zeros(wm.m, dtype=np.int8), mu=np.zeros(wm.m))
    procs = [step_down("SD(W)", wm), lsd_first_column(wm)]
    return mc_evaluate(procs, model, replications, seed, keep_samples=False)


# --------------------------------------------------------------------------
# Leave-one-out lemma harness
# --------------------------------------------------------------------------


def _i_index(counts: np.ndarray) -> np.ndarray:
    """Largest ``k`` with ``counts[:, k] >= k`` (``k = 0`` always qualifies)."""
    k = np.arange(counts.shape[1])
    ok = counts >= k
    return counts.shape[1] - 1 - np.argmax(ok[:, ::-1], axis=1)


def _j_index(counts: np.ndarray) -> np.ndarray:
    """Largest ``k`` with ``counts[:, j] >= j`` for all ``j <= k``."""
    k = np.arange(counts.shape[1])
    bad = counts < k
    return np.where(bad.any(axis=1), np.argmax(bad, axis=1) - 1, counts.shape[1] - 1)


def _direct_counts(P: np.ndarray, D: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """``#{j in rows : p_j <= D[j, c]}`` for each column ``c`` in ``cols``."""
    return (P[:, rows, None] <= D[rows][:, cols][None, :, :]).sum(axis=1)


LEMMA_CHECKS = ("9.1-a", "9.1-b", "9.1-c", "9.2-i", "9.2-ii", "9.2-iii")


@dataclass
class LemmaReport:
    checks: int = 0
    violations: dict = field(default_factory=lambda: {k: 0 for k in LEMMA_CHECKS})
    counterexample: dict | None = None

    @property
    def passed(self) -> bool:
        return not any(self.violations.values())

    def merge(self, other: "LemmaReport") -> None:
        self.checks += other.checks
        for k, v in other.violations.items():
            self.violations[k] += v
        if self.counterexample is None:
            self.counterexample = other.counterexample


def lemma_checks(P, delta: ThresholdCollection) -> LemmaReport:
    """Check the leave-one-out relations for every row of ``P`` and every ``i``.

    ``R_{-i}`` uses thresholds ``Delta_j(k/m)`` and ``R'_{-i}`` uses
    ``Delta_j((k+1)/m)`` for ``k = 0..m-1``, which are the rescaled threshold
    collections of the reduced problems expressed on the integer grid.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    n, m = P.shape
    D = delta.padded()  # column k is Delta(k/m)
    full = _direct_counts(P, D, np.arange(m), np.arange(m + 1))
    k_su = _i_index(full)
    k_sd = _j_index(full)
    rep = LemmaReport()
    rows = np.arange(n)
    for i in range(m):
        others = np.delete(np.arange(m), i)
        c_minus = _direct_counts(P, D, others, np.arange(m))
        c_prime = _direct_counts(P, D, others, np.arange(1, m + 1))
        su_minus, su_prime = _i_index(c_minus), _i_index(c_prime)
        sd_minus = _j_index(c_minus)
        p_i = P[:, i]
        at = lambda k: D[i, k]  # noqa: E731
        below_hat = p_i <= at(k_su)
        below_prime = p_i <= at(su_prime + 1)
        shifted = k_su == su_prime + 1
        bad = {
            "9.1-a": below_hat != below_prime,
            "9.1-b": below_hat != shifted,
            "9.1-c": (~below_hat) != (k_su == su_minus),
        }
        v_i = np.zeros(n, dtype=bool)
        v_ii = np.zeros(n, dtype=bool)
        for k in range(1, m + 1):
            above = p_i > at(k - 1)
            v_i |= (k_sd >= k) & above & ~(sd_minus >= k - 1)
            v_ii |= (sd_minus >= k - 1) & ~above & ~(k_sd >= k)
        bad["9.2-i"] = v_i
        bad["9.2-ii"] = v_ii
        bad["9.2-iii"] = (p_i > at(sd_minus + 1)) & (k_sd != sd_minus)
        rep.checks += n * len(bad)
        for key, mask in bad.items():
            cnt = int(mask.sum())
            rep.violations[key] += cnt
            if cnt and rep.counterexample is None:
                r = int(rows[mask][0])
                rep.counterexample = {"check": key, "i": i, "p": P[r].tolist(), "delta": delta.delta.tolist()}
    return rep


def _quantized(delta: ThresholdCollection, step: float) -> ThresholdCollection:
    return ThresholdCollection(np.round(delta.delta / step) * step)


def lemma_91_92_harness(m: int, resolution: float | None = 0.01, matrices: int = 50,
                        seed: int = 0, instances: int = 0, alpha: float = 0.5) -> LemmaReport:
    """Exhaustive p-grid checks (``resolution`` set, m in {2, 3}) or randomized ones (``instances``).

    Half of the exhaustive matrices have thresholds snapped to the p-grid so
    that ties ``p_i = Delta_i`` occur.  A large ``alpha`` makes rejections
    frequent enough to exercise every branch.
    """
    rng = np.random.default_rng(seed)
    report = LemmaReport()
    if resolution is not None:
        if m not in (2, 3):
            raise ValueError("exhaustive grids are limited to m in {2, 3}")
        axis = np.round(np.arange(0, 1 + resolution / 2, resolution), 12)
        P = np.array(list(itertools.product(axis, repeat=m)))
        for j in range(matrices):
            delta = random_weight_matrix(m, alpha, rng, concentration=0.5).thresholds()
            if j % 2:
                delta = _quantized(delta, resolution)
            report.merge(lemma_checks(P, delta))
    else:
        if m > 30:
            raise ValueError("randomized checks are limited to m <= 30")
        for _ in range(instances):
            delta = random_weight_matrix(m, alpha, rng, concentration=0.5).thresholds()
            p = rng.random((1, m)) ** 3
            report.merge(lemma_checks(p, delta))
    return report


# --------------------------------------------------------------------------
# Verification suite
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    t0 = time.perf_counter()
    ok, detail = fn()
    return CheckResult(name, bool(ok), detail, time.perf_counter() - t0)


def _check_brute(step: float, seed: int):
    rng = np.random.default_rng(seed)
    axis = np.round(np.arange(0, 1 + step / 2, step), 12)
    bad = 0
    total = 0
    for _ in range(3):
        delta = random_weight_matrix(3, 0.5, rng).thresholds()
        for p in itertools.product(axis, repeat=3):
            p = np.array(p)
            bad += not np.array_equal(brute_force_stepup(p, delta).rejected, su_multiweight(p, delta).rejected)
            bad += not np.array_equal(brute_force_stepdown(p, delta).rejected, sd_multiweight(p, delta).rejected)
            total += 2
    return bad == 0, f"{bad} mismatches in {total} comparisons"


def _check_dual_path(n_small: int, n_large: int, seed: int):
    rng = np.random.default_rng(seed)
    bad = 0
    cases = [(int(rng.integers(2, 9))) for _ in range(n_small)] + [200] * n_large
    for m in cases:
        wm = random_weight_matrix(m, float(rng.uniform(0.05, 0.9)), rng, concentration=float(rng.uniform(0.2, 3)))
        p = rng.random(m) ** float(rng.uniform(1, 6))
        bad += not np.array_equal(su_multiweight(p, wm).rejected, su_algorithm_b1(p, wm).rejected)
        bad += not np.array_equal(sd_multiweight(p, wm).rejected, sd_algorithm_b2(p, wm).rejected)
    return bad == 0, f"{bad} mismatches over {len(cases)} instances"


def _check_grid_search(seed: int, triples: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for j in range(triples):
        m = 2 if j % 2 == 0 else 3
        res = 1e-4 if m == 2 else 1e-2
        mu = rng.uniform(0.5, 4.0, m)
        alpha = float(rng.uniform(0.01, 0.2))
        u = float(rng.uniform(0.05, 1.0))
        w_grid = grid_search_optimal_weights(mu, alpha, u, res)
        w_star = optimal_weights_gaussian(mu, alpha, u, np.ones(m, dtype=bool))
        worst = max(worst, float(np.max(np.abs(w_grid - w_star)) / (2 * res)))
    return worst <= 1.0, f"max |grid - solver| / (2 resolution) = {worst:.3g}"


def _check_m2_formula(seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(200):
        w1 = float(rng.uniform(0, 2))
        lo = max(0.0, 2 * w1 - 2)
        hi = min(2.0, 2 * w1)
        cfg = M2CounterexampleConfig(float(rng.uniform(0.01, 0.3)), float(rng.uniform(lo, hi)), w1)
        worst = max(worst, abs(m2_exact_fdr(cfg) - m2_exact_fdr_geometric(cfg)))
    return worst < 1e-14, f"max |closed form - area| = {worst:.3g}"


def _check_m2_mc(replications: int, seed: int):
    cfg = LEAST_FAVOURABLE_M2
    est, se = m2_mc_fdr(cfg, replications, seed)
    target = m2_exact_fdr(cfg)
    z = (est - target) / se
    return abs(z) < 4, f"MC {est:.6f} (SE {se:.2g}) vs exact {target:.6f}, z={z:.2f}"


def _check_lemmas(quick: bool, seed: int):
    rep = lemma_91_92_harness(2, 0.05 if quick else 0.01, 10 if quick else 50, seed)
    rep.merge(lemma_91_92_harness(3, 0.1 if quick else 0.05, 4 if quick else 10, seed + 1))
    rep.merge(lemma_91_92_harness(20, None, seed=seed + 2, instances=100 if quick else 1000))
    return rep.passed, f"{rep.checks} checks, violations {rep.violations}"


def _check_sd_appendix(replications: int, seed: int):
    rng = np.random.default_rng(seed)
    alpha = 0.05
    details = []
    ok = True
    for m in (2, 5):
        wm = random_weight_matrix(m, alpha, rng, concentration=0.5)
        reps = sd_all_null_pair(wm, replications, seed)
        a, b = reps["SD(W)"], reps["LSD(W(1/m))"]
        same = abs(a.fdr - b.fdr) <= 3 * max(a.fdr_se, 1e-12)
        below = a.fdr <= alpha + 3 * a.fdr_se
        ok &= same and below
        details.append(f"m={m}: SD {a.fdr:.5f} LSD {b.fdr:.5f}")
    wm = random_weight_matrix(2, alpha, rng, concentration=0.5)
    model = HypothesisConfig(h=np.array([0, 1], dtype=np.int8), mu=np.array([0.0, 2.0]))
    r = mc_evaluate([step_down("SD", wm)], model, replications, seed)["SD"]
    ok &= r.fdr <= alpha + 3 * r.fdr_se
    details.append(f"m=2,m0=1: SD {r.fdr:.5f}")
    return ok, "; ".join(details)


def run_verification(quick: bool = False, seed: int = 2024) -> list[CheckResult]:
    """Run the oracle suite; ``quick`` shrinks grids and replication counts."""
    return [
        _timed("brute-force SU/SD vs functional (m=3 grid)", lambda: _check_brute(0.1 if quick else 0.05, seed)),
        _timed("functional vs step-wise algorithms",
               lambda: _check_dual_path(1000 if quick else 10_000, 10 if quick else 100, seed)),
        _timed("optimal weights vs simplex grid search", lambda: _check_grid_search(seed, 4 if quick else 10)),
        _timed("m=2 FDR closed form vs area", lambda: _check_m2_formula(seed)),
        _timed("m=2 FDR Monte Carlo vs closed form",
               lambda: _check_m2_mc(1_000_000 if quick else 10_000_000, seed)),
        _timed("leave-one-out lemmas", lambda: _check_lemmas(quick, seed)),
        _timed("step-down all-null and m=2 control",
               lambda: _check_sd_appendix(20_000 if quick else 200_000, seed)),
    ]

