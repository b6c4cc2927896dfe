"""Monte Carlo FDR / power estimation and evaluators of the finite-sample bounds.

All procedures evaluated in one call see the same p-value samples (common
random numbers), so paired differences such as the relative power have small
standard errors.  Reductions are chunk-wise (one chunk per replication block)
and combined with ``math.fsum``, which makes results independent of the
order in which chunks are reduced.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .functionals import continuous_I, i_lambda_minus, i_lambda_plus, mean_G_function
from .models import HypothesisConfig, Model, Seed, UnconditionalConfig, iter_samples
from .procedures import step_batch
from .weights import (
    ConstantWeights,
    OptimalGaussianWeights,
    ThresholdCollection,
    WeightMatrix,
    as_weight_function,
    optimal_weights_gaussian,
)

# --------------------------------------------------------------------------
# Procedure handles
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Procedure:
    """A batch procedure: ``kind`` is ``"su"``, ``"sd"``, ``"none"`` or ``"all"``."""

    name: str
    kind: str
    delta: ThresholdCollection | None = None

    def __post_init__(self):
        if self.kind not in ("su", "sd", "none", "all"):
            raise ValueError(f"unknown procedure kind {self.kind!r}")
        if self.kind in ("su", "sd") and self.delta is None:
            raise ValueError("step procedures need thresholds")

    def reject(self, p: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(p)
        if self.kind == "none":
            return np.zeros(p.shape, dtype=bool)
        if self.kind == "all":
            return np.ones(p.shape, dtype=bool)
        return step_batch(p, self.delta, self.kind)


def step_up(name: str, wm) -> Procedure:
    return Procedure(name, "su", wm.thresholds() if isinstance(wm, WeightMatrix) else wm)


def step_down(name: str, wm) -> Procedure:
    return Procedure(name, "sd", wm.thresholds() if isinstance(wm, WeightMatrix) else wm)


def lsu_procedure(m: int, alpha: float, name: str = "LSU") -> Procedure:
    return Procedure(name, "su", ThresholdCollection.linear(m, alpha))


def lsu_star_procedure(m: int, alpha: float, pi0: float, name: str = "LSU*") -> Procedure:
    return Procedure(name, "su", ThresholdCollection.linear(m, alpha / pi0))


def weighted_lsu_procedure(w, alpha: float, name: str) -> Procedure:
    return step_up(name, WeightMatrix.constant(w, alpha))


# --------------------------------------------------------------------------
# Monte Carlo
# --------------------------------------------------------------------------


class _Moments:
    """Chunked first and second moments, reduced with ``math.fsum``."""

    def __init__(self):
        self.s1: list[float] = []
        self.s2: list[float] = []
        self.n = 0

    def add(self, x: np.ndarray):
        self.s1.append(float(np.sum(x)))
        self.s2.append(float(np.sum(x * x)))
        self.n += x.size

    def mean_se(self) -> tuple[float, float]:
        n = self.n
        mean = math.fsum(self.s1) / n
        if n < 2:
            return mean, float("nan")
        var = max(math.fsum(self.s2) / n - mean * mean, 0.0) * n / (n - 1)
        return mean, math.sqrt(var / n)


@dataclass(frozen=True)
class EvalReport:
    procedure: str
    model: str
    fdr: float
    fdr_se: float
    pow: float
    pow_se: float
    relpow: float
    relpow_se: float
    m: int
    replications: int
    seed: tuple
    tdp: np.ndarray | None = field(default=None, repr=False, compare=False)

    def row(self) -> dict:
        return {
            "procedure": self.procedure,
            "model": self.model,
            "fdr": self.fdr,
            "fdr_se": self.fdr_se,
            "pow": self.pow,
            "pow_se": self.pow_se,
            "relpow": self.relpow,
            "relpow_se": self.relpow_se,
            "m": self.m,
            "replications": self.replications,
            "seed": "-".join(str(s) for s in self.seed),
        }


def _seed_tuple(seed: Seed) -> tuple:
    return (int(seed),) if isinstance(seed, (int, np.integer)) else tuple(int(s) for s in seed)


def _m1_for_relpow(model: Model) -> float:
    if isinstance(model, HypothesisConfig):
        if model.m1 == 0:
            raise ValueError("relative power needs at least one false null")
        return float(model.m1)
    return model.pi1 * model.m


def mc_evaluate(
    procedures: Sequence[Procedure],
    model: Model,
    replications: int,
    seed: Seed,
    baseline: str | None = None,
    keep_samples: bool = False,
) -> dict[str, EvalReport]:
    """FDR, power and (optionally) relative power of several procedures on shared samples.

    ``baseline`` names the procedure that the relative power is measured
    against; it is computed per replication and then averaged.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    names = [p.name for p in procedures]
    if len(set(names)) != len(names):
        raise ValueError("procedure names must be unique")
    if baseline is not None and baseline not in names:
        raise ValueError(f"baseline {baseline!r} is not among the procedures")
    m = model.m
    m1_rel = _m1_for_relpow(model) if baseline is not None else 1.0
    fdp = {n: _Moments() for n in names}
    tdp = {n: _Moments() for n in names}
    rel = {n: _Moments() for n in names}
    kept = {n: [] for n in names}
    for _, h, p in iter_samples(model, replications, seed):
        alt = h.astype(bool)
        true_counts = {}
        for proc in procedures:
            rej = proc.reject(p)
            r = rej.sum(axis=1)
            v = (rej & ~alt).sum(axis=1)
            s = (rej & alt).sum(axis=1)
            true_counts[proc.name] = s
            fdp[proc.name].add(v / np.maximum(r, 1))
            tdp[proc.name].add(s / m)
            if keep_samples:
                kept[proc.name].append(s / m)
        if baseline is not None:
            base = true_counts[baseline]
            for n in names:
                rel[n].add((true_counts[n] - base) / m1_rel)
    out = {}
    seed_t = _seed_tuple(seed)
    for n in names:
        f, fse = fdp[n].mean_se()
        pw, pse = tdp[n].mean_se()
        rp, rse = rel[n].mean_se() if baseline is not None else (float("nan"), float("nan"))
        out[n] = EvalReport(
            procedure=n, model=model.describe(), fdr=f, fdr_se=fse, pow=pw, pow_se=pse,
            relpow=rp, relpow_se=rse, m=m, replications=replications, seed=seed_t,
            tdp=np.concatenate(kept[n]) if keep_samples else None,
        )
    return out


def mc_fdr_power(procedure: Procedure, model: Model, replications: int, seed: Seed,
                 keep_samples: bool = False) -> EvalReport:
    return mc_evaluate([procedure], model, replications, seed, keep_samples=keep_samples)[procedure.name]


def relative_power(report: EvalReport, lsu_report: EvalReport, m1: float) -> tuple[float, float]:
    """Paired estimate of ``m1^{-1} (E|R cap H1| - E|LSU cap H1|)`` and its SE.

    Both reports must come from the same seed and replication count and carry
    per-replication samples (``keep_samples=True``).
    """
    if report.seed != lsu_report.seed or report.replications != lsu_report.replications:
        raise ValueError("reports were not generated on common random numbers")
    if report.tdp is None or lsu_report.tdp is None:
        raise ValueError("reports must keep per-replication samples")
    diff = (report.tdp - lsu_report.tdp) * (report.m / m1)
    n = diff.size
    se = float(np.std(diff, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return float(math.fsum(diff) / n), se


# --------------------------------------------------------------------------
# Power range
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerBand:
    u0: np.ndarray
    pow: np.ndarray
    pow_se: np.ndarray

    @property
    def lower(self) -> float:
        return float(self.pow.min())

    @property
    def upper(self) -> float:
        return float(self.pow.max())

    @property
    def argmax(self) -> float:
        return float(self.u0[int(np.argmax(self.pow))])

    @property
    def upper_se(self) -> float:
        return float(self.pow_se[int(np.argmax(self.pow))])


def band_procedures(mu, alpha: float, model: Model, u0_grid: Iterable[float]) -> list[Procedure]:
    """``LSU(W*(u0))`` for every ``u0`` in the grid."""
    m = model.m
    mask = model.h.astype(bool) if isinstance(model, HypothesisConfig) else np.ones(m, dtype=bool)
    procs = []
    for u0 in u0_grid:
        k = round(u0 * m)
        if k < 1 or k > m or abs(k - u0 * m) > 1e-9:
            raise ValueError(f"u0={u0} is not on the grid {{1/m, ..., 1}}")
        w = optimal_weights_gaussian(mu, alpha, k / m, mask)
        procs.append(weighted_lsu_procedure(w, alpha, f"band:{k}/{m}"))
    return procs


def power_range(mu, alpha: float, model: Model, u0_grid: Iterable[float], replications: int,
                seed: Seed) -> PowerBand:
    """Envelope of the MC powers of ``LSU(W*(u0))`` over the ``u0`` grid."""
    u0 = np.asarray(list(u0_grid), dtype=float)
    procs = band_procedures(mu, alpha, model, u0)
    reps = mc_evaluate(procs, model, replications, seed)
    pw = np.array([reps[p.name].pow for p in procs])
    se = np.array([reps[p.name].pow_se for p in procs])
    return PowerBand(u0=u0, pow=pw, pow_se=se)


# --------------------------------------------------------------------------
# Finite-sample bounds
# --------------------------------------------------------------------------


def epsilon_term(m: int, x: float, pi1: float) -> float:
    """``pi1 * m^2 * exp(-2 m (x - 1/m)_+^2)``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    pos = max(x - 1.0 / m, 0.0)
    return pi1 * m * m * math.exp(-2.0 * m * pos * pos)


def _tail(m: int, x: float, power: int) -> float:
    """``m^power * exp(-2 m x_+^2)``."""
    pos = max(x, 0.0)
    return float(m) ** power * math.exp(-2.0 * m * pos * pos)


def thm41_fdr_bound(wm: WeightMatrix, h) -> float:
    """``alpha * max_k m^{-1} sum_i (1 - H_i) W_i(k/m)`` for the uncorrected matrix ``wm``."""
    h = np.asarray(h).astype(bool).ravel()
    if h.size != wm.m:
        raise ValueError("h and weight matrix disagree on m")
    if wm.corrected:
        raise ValueError("supply the uncorrected source matrix")
    null_mass = wm.w[~h].sum(axis=0) / wm.m
    return float(wm.alpha * null_mass.max())


def monotone_gap_holds(G: Callable[[float], float], u_bar: float, points: int = 400) -> bool:
    """Grid check that ``u - G(u)`` is strictly increasing on ``(u_bar, 1]``."""
    if u_bar >= 1:
        return True
    grid = np.linspace(u_bar, 1.0, points + 1)[1:]
    gap = np.array([u - G(u) for u in grid])
    return bool(np.all(np.diff(gap) > 0))


@dataclass(frozen=True)
class BoundReport:
    m: int
    alpha: float
    pi0: float
    lam: float
    u_bar: float
    i_plus: float
    i_minus: float
    eps_plus: float
    eps_minus: float
    assumption_ok: bool
    power_anchor: float
    power_lower: float
    power_upper: float
    fdr_lower: float
    fdr_upper: float
    oracle_rhs: float = float("nan")

    @property
    def fdr_gap(self) -> float:
        return self.fdr_upper - self.fdr_lower

    def row(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__} | {"fdr_gap": self.fdr_gap}


def _sup_inf_weights(weight_fn, lam: float, m: int, points: int = 200) -> tuple[float, float]:
    """``m^{-1} sum_i sup`` and ``inf`` of ``W_i(u)`` over ``u in (0, 2 lam]``.

    Evaluated on the union of the grid ``k/m <= 2 lam`` and ``points`` uniform nodes.
    """
    top = min(2.0 * lam, 1.0)
    nodes = set(np.linspace(0.0, top, points + 1)[1:].tolist())
    nodes.update(k / m for k in range(1, m + 1) if k / m <= top)
    W = np.column_stack([weight_fn.weights_at(u) for u in sorted(nodes)])
    return float(W.max(axis=1).mean()), float(W.min(axis=1).mean())


def _unconditional(model) -> UnconditionalConfig:
    if not isinstance(model, UnconditionalConfig):
        raise TypeError("the finite-sample bounds are stated for the unconditional model")
    return model


def _bound_core(weights, model: UnconditionalConfig, lam: float):
    wf = as_weight_function(weights)
    if wf.m != model.m:
        raise ValueError("weights and model disagree on m")
    G = mean_G_function(model, wf)
    u_bar = continuous_I(G)
    if not 0 < lam < 1 - u_bar:
        raise ValueError(f"lambda={lam} must lie in (0, 1 - I(G)) = (0, {1 - u_bar:.6g})")
    i_plus = i_lambda_plus(G, lam, u_bar)
    i_minus = i_lambda_minus(G, lam, u_bar) if lam < u_bar else float("nan")
    return wf, G, float(u_bar), float(i_plus), float(i_minus)


def prop82_fdr_bounds(weights, model: UnconditionalConfig, lam: float) -> BoundReport:
    """Upper and lower FDR bounds of the uncorrected step-up ``SU(W)`` (plus the power bounds)."""
    model = _unconditional(model)
    wf, G, u_bar, i_plus, i_minus = _bound_core(weights, model, lam)
    m, pi0, alpha = model.m, model.pi0, wf.alpha
    a0 = pi0 * alpha
    tail_plus = a0 * _tail(m, i_plus - 1.0 / m, 3)
    if u_bar > lam:
        t_minus = _tail(m, i_minus, 2)
        up = a0 + tail_plus + a0 * (t_minus + 2 * lam / (u_bar - lam))
        lo = a0 - tail_plus - a0 * (t_minus + 2 * lam / (u_bar + lam))
    else:
        sup_mean, inf_mean = _sup_inf_weights(wf, lam, m)
        up = a0 + tail_plus + a0 * (sup_mean - 1.0)
        lo = a0 - tail_plus - a0 * (1.0 - inf_mean)
    power = _power_bounds(wf, G, model, lam, u_bar, i_plus, i_minus)
    return BoundReport(
        m=m, alpha=alpha, pi0=pi0, lam=lam, u_bar=u_bar, i_plus=i_plus, i_minus=i_minus,
        eps_plus=epsilon_term(m, i_plus, model.pi1),
        eps_minus=epsilon_term(m, i_minus, model.pi1) if lam < u_bar else float("nan"),
        fdr_lower=lo, fdr_upper=up, **power,
    )


def _delta_le_one(wf, m: int) -> bool:
    return all(np.all(wf.alpha * (k / m) * wf.weights_at(k / m) <= 1.0 + 1e-12) for k in range(1, m + 1))


def _power_bounds(wf, G, model: UnconditionalConfig, lam, u_bar, i_plus, i_minus) -> dict:
    m, pi0, pi1, alpha = model.m, model.pi0, model.pi1, wf.alpha
    anchor = (1 - alpha * pi0) * u_bar
    ok = monotone_gap_holds(G, u_bar)
    upper = float("nan")
    if ok:
        upper = anchor + pi1 * _tail(m, i_plus - 1.0 / m, 2) - i_plus + lam * (1 - alpha * pi0)
    lower = float("nan")
    if lam < u_bar and _delta_le_one(wf, m):
        lower = anchor - pi1 * _tail(m, i_minus, 1) + i_minus - lam * (1 - alpha * pi0)
    return {"assumption_ok": ok, "power_anchor": anchor, "power_lower": lower, "power_upper": upper}


def oracle_inequality_bound(
    model: UnconditionalConfig,
    alpha: float,
    lam: float,
    competitors: Mapping[str, np.ndarray] | None = None,
    competitor_powers: Mapping[str, float] | None = None,
) -> BoundReport:
    """Oracle-inequality lower bound on the power of ``SU(W*)``, with the two-sided power bounds.

    The maximum over all weight vectors is taken over ``competitors`` (default:
    uniform weights and ``W*(u0)`` for ``u0`` in ``{0.05, 0.1, ..., 1}``).
    Their powers are ``competitor_powers`` when given, otherwise the anchor
    ``(1 - alpha pi0) I(G_w)``.
    """
    model = _unconditional(model)
    m, pi0, pi1 = model.m, model.pi0, model.pi1
    if not 0 < lam < pi0 * (1 - alpha):
        raise ValueError(f"lambda={lam} must lie in (0, pi0 (1 - alpha)) = (0, {pi0 * (1 - alpha):.6g})")
    star = OptimalGaussianWeights(model.mu, alpha, "unconditional")
    report = prop82_fdr_bounds(star, model, lam)
    if competitors is None:
        competitors = {"uniform": np.ones(m)}
        for j in range(1, 21):
            competitors[f"W*({j / 20:g})"] = star.weights_at(j / 20)
    best = -math.inf
    for name, w in competitors.items():
        wf = ConstantWeights(w, alpha)
        G = mean_G_function(model, wf)
        u_w = continuous_I(G)
        pw = (competitor_powers or {}).get(name, (1 - alpha * pi0) * u_w)
        # lam < pi0 (1 - alpha) <= 1 - I(G_w), so I_lambda^+ is defined
        ip = i_lambda_plus(G, lam, u_w)
        best = max(best, pw - epsilon_term(m, ip, pi1))
    penalty = report.eps_minus if lam < report.u_bar else 0.0
    rhs = best - penalty - 2 * lam * (1 - alpha * pi0)
    return BoundReport(**{**{k: getattr(report, k) for k in report.__dataclass_fields__}, "oracle_rhs": rhs})


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


def write_rows(path, rows: Sequence[dict]) -> None:
    """Write dict rows as CSV with a header and 10-significant-digit floats."""
    if not rows:
        raise ValueError("no rows to write")
    header = list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in rows:
            writer.writerow([_fmt(r[k]) for k in header])
