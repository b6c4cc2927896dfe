"""Command-line front end.

Subcommands::

    mwfdr study        --config cfg.yaml   # relative power of the procedure roster
    mwfdr misspec      --config cfg.yaml   # same, with noisy guesses of the means
    mwfdr bounds       --config cfg.yaml   # finite-sample FDR / power bounds
    mwfdr verify       [--quick]           # oracle suite, exit code 2 on failure
    mwfdr weights-dump --m 1000 ...        # optimal weight matrix as CSV

Flags override values read from the config file.  Exit codes: 0 success,
1 configuration error, 2 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import oracle
from .evaluation import (
    band_procedures,
    lsu_procedure,
    lsu_star_procedure,
    mc_evaluate,
    prop82_fdr_bounds,
    step_down,
    step_up,
    weighted_lsu_procedure,
    write_rows,
)
from .models import HypothesisConfig, UnconditionalConfig
from .weights import (
    OptimalGaussianWeights,
    correct_sd,
    correct_su,
    optimal_weight_matrix,
    uniform_h1_weights,
    write_weight_csv,
)

ORACLE_ROSTER = ("LSU", "LSU*", "SU-W-oracle", "SD-W-oracle", "Unif-oracle", "SU-W*")
GUESS_ROSTER = ("LSU", "SU-W-guess", "SD-W-guess", "Unif-guess")
SCENARIOS = ("case1", "case2", "explicit")
CASE_ID = {"case1": 1, "case2": 2, "explicit": 0}


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


@dataclass
class MisspecSection:
    sigma: list = field(default_factory=lambda: [j / 4 for j in range(13)])
    outer_draws: int = 10
    mean_floor: float = 0.05


@dataclass
class BoundsSection:
    m: list = field(default_factory=lambda: [100, 400, 1600])
    lam: list = field(default_factory=lambda: [0.02])
    pi0: float = 0.7
    mean_slope: float = 5.0
    mc_replications: int = 0


@dataclass
class ExperimentConfig:
    model: str = "conditional"
    m: int = 1000
    m0: int = 700
    scenario: str = "case1"
    means: list | None = None
    mu_bar: list = field(default_factory=lambda: [0.5 + 0.25 * k for k in range(11)])
    alpha: list = field(default_factory=lambda: [0.01, 0.05])
    procedures: list = field(default_factory=lambda: list(ORACLE_ROSTER))
    replications: int = 1000
    seed: int = 20100
    u0_points: int = 20
    output: str = "results.csv"
    misspec: MisspecSection = field(default_factory=MisspecSection)
    bounds: BoundsSection = field(default_factory=BoundsSection)

    # -- validation -------------------------------------------------------

    def validate(self, lines: dict | None = None) -> "ExperimentConfig":
        lines = lines or {}

        def fail(key, msg):
            where = f" (line {lines[key]})" if key in lines else ""
            raise ConfigError(f"{key}{where}: {msg}")

        if self.model not in ("conditional", "unconditional"):
            fail("model", "must be 'conditional' or 'unconditional'")
        if not isinstance(self.m, int) or self.m < 2:
            fail("m", "must be an integer >= 2")
        if not isinstance(self.m0, int) or not 0 <= self.m0 < self.m:
            fail("m0", "must be an integer in [0, m)")
        if self.scenario not in SCENARIOS:
            fail("scenario", f"must be one of {', '.join(SCENARIOS)}")
        if self.scenario == "explicit":
            if self.means is None or len(self.means) != self.m:
                fail("means", "explicit scenario needs a list of m means")
            if any(float(x) < 0 for x in self.means):
                fail("means", "means must be non-negative")
        if not self.mu_bar or any(float(x) <= 0 for x in self.mu_bar):
            fail("mu_bar", "must be a non-empty list of positive values")
        if not self.alpha or any(not 0 < float(a) < 1 for a in self.alpha):
            fail("alpha", "levels must lie in (0, 1)")
        known = set(ORACLE_ROSTER) | set(GUESS_ROSTER)
        bad = [p for p in self.procedures if p not in known]
        if bad:
            fail("procedures", f"unknown procedure(s) {bad}; known: {sorted(known)}")
        if self.model == "unconditional" and any(p.startswith("Unif") for p in self.procedures):
            fail("procedures", "uniform-on-alternatives weighting needs the conditional model")
        if not isinstance(self.replications, int) or self.replications < 1:
            fail("replications", "must be a positive integer")
        if not isinstance(self.seed, int) or self.seed < 0:
            fail("seed", "must be a non-negative integer")
        if not isinstance(self.u0_points, int) or self.u0_points < 0:
            fail("u0_points", "must be a non-negative integer")
        if self.u0_points and self.m % self.u0_points:
            fail("u0_points", "must divide m so that u0 = j/u0_points lies on the grid")
        ms = self.misspec
        if any(float(s) < 0 for s in ms.sigma):
            fail("misspec", "sigma values must be >= 0")
        if ms.outer_draws < 1 or ms.mean_floor <= 0:
            fail("misspec", "outer_draws must be >= 1 and mean_floor > 0")
        b = self.bounds
        if any(int(x) < 2 for x in b.m) or any(float(x) <= 0 for x in b.lam):
            fail("bounds", "m values must be >= 2 and lambda values > 0")
        if not 0 < b.pi0 < 1 or b.mean_slope <= 0:
            fail("bounds", "pi0 must lie in (0, 1) and mean_slope must be positive")
        return self

    # -- (de)serialisation -------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict, lines: dict | None = None) -> "ExperimentConfig":
        data = dict(data or {})
        top = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - top
        if unknown:
            key = sorted(unknown)[0]
            where = f" (line {lines[key]})" if lines and key in lines else ""
            raise ConfigError(f"{key}{where}: unknown configuration key")
        sections = {}
        for name, kind in (("misspec", MisspecSection), ("bounds", BoundsSection)):
            raw = data.pop(name, None) or {}
            allowed = {f.name for f in dataclasses.fields(kind)}
            if not isinstance(raw, dict) or set(raw) - allowed:
                raise ConfigError(f"{name}: expected a mapping with keys {sorted(allowed)}")
            sections[name] = kind(**raw)
        try:
            cfg = cls(**data, **sections)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.validate(lines)

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _key_lines(text: str) -> dict:
    node = yaml.compose(text)
    if node is None or not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value}


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
        lines = _key_lines(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    return ExperimentConfig.from_dict(data, lines)


# --------------------------------------------------------------------------
# Scenario helpers
# --------------------------------------------------------------------------


def scenario_means(scenario: str, m: int, m1: int, mu_bar: float, explicit=None) -> np.ndarray:
    """Mean vector with the ``m - m1`` nulls first.

    ``case1``: alternatives increase linearly from ``3 mu_bar / m1`` to ``3 mu_bar``.
    ``case2``: three groups ``mu_bar``, ``2 mu_bar``, ``3 mu_bar`` in proportions 2:2:1.
    """
    if scenario == "explicit":
        return np.asarray(explicit, dtype=float)
    if m1 < 1:
        raise ValueError("need at least one alternative")
    if scenario == "case1":
        alt = 3.0 * mu_bar * np.arange(1, m1 + 1) / m1
    elif scenario == "case2":
        n1 = round(0.4 * m1)
        n2 = round(0.4 * m1)
        alt = np.concatenate([np.full(n1, mu_bar), np.full(n2, 2 * mu_bar), np.full(m1 - n1 - n2, 3 * mu_bar)])
    else:
        raise ValueError(f"unknown scenario {scenario!r}")
    return np.concatenate([np.zeros(m - m1), alt])


def model_for(cfg: ExperimentConfig, mu_bar: float):
    if cfg.model == "conditional":
        mu = scenario_means(cfg.scenario, cfg.m, cfg.m - cfg.m0, mu_bar, cfg.means)
        return HypothesisConfig.from_means(mu)
    mu = scenario_means(cfg.scenario, cfg.m, cfg.m, mu_bar, cfg.means)
    return UnconditionalConfig(pi0=cfg.m0 / cfg.m, mu=mu)


def cell_seed(cfg: ExperimentConfig, alpha: float, mu_bar: float) -> tuple:
    return (cfg.seed, CASE_ID[cfg.scenario], round(alpha * 1e6), round(mu_bar * 1e6))


def _pi0(model) -> float:
    return model.pi0


def _oracle_matrix(model, alpha: float):
    if isinstance(model, HypothesisConfig):
        return optimal_weight_matrix(model.mu, alpha, "conditional", model.h)
    return optimal_weight_matrix(model.mu, alpha, "unconditional")


def _weighted_roster(names, wm, h, alpha: float, suffix: str) -> list:
    out = []
    for name in names:
        if name == f"SU-W-{suffix}":
            out.append(step_up(name, correct_su(wm)))
        elif name == f"SD-W-{suffix}":
            out.append(step_down(name, correct_sd(wm)))
        elif name == f"Unif-{suffix}":
            out.append(weighted_lsu_procedure(uniform_h1_weights(h), alpha, name))
    return out


def oracle_roster(cfg: ExperimentConfig, model, alpha: float) -> list:
    m = model.m
    procs = [lsu_procedure(m, alpha)]
    wm = _oracle_matrix(model, alpha) if any("W" in p for p in cfg.procedures) else None
    for name in cfg.procedures:
        if name == "LSU*":
            procs.append(lsu_star_procedure(m, alpha, _pi0(model)))
        elif name == "SU-W*":
            procs.append(step_up(name, wm))
    h = model.h if isinstance(model, HypothesisConfig) else None
    procs += _weighted_roster(cfg.procedures, wm, h, alpha, "oracle")
    if cfg.u0_points:
        grid = [j / cfg.u0_points for j in range(1, cfg.u0_points + 1)]
        procs += band_procedures(model.mu, alpha, model, grid)
    return procs


def _row(cfg, rep, alpha, mu_bar, extra: dict) -> dict:
    row = {
        "procedure": rep.procedure,
        "model": cfg.model,
        "scenario": cfg.scenario,
        "m": cfg.m,
        "m0": cfg.m0,
        "alpha": alpha,
        "mu_bar": mu_bar,
    }
    row.update(extra)
    row.update({
        "fdr": rep.fdr, "fdr_se": rep.fdr_se, "pow": rep.pow, "pow_se": rep.pow_se,
        "relpow": rep.relpow, "relpow_se": rep.relpow_se,
        "replications": rep.replications, "seed": "-".join(str(s) for s in rep.seed),
    })
    return row


# --------------------------------------------------------------------------
# Runs
# --------------------------------------------------------------------------


def run_study(cfg: ExperimentConfig) -> list[dict]:
    """One row per (alpha, mu_bar, procedure), with the power-range band of the cell."""
    rows = []
    for alpha in cfg.alpha:
        for mu_bar in cfg.mu_bar:
            model = model_for(cfg, mu_bar)
            procs = oracle_roster(cfg, model, alpha)
            reps = mc_evaluate(procs, model, cfg.replications, cell_seed(cfg, alpha, mu_bar), baseline="LSU")
            band = [r for n, r in reps.items() if n.startswith("band:")]
            lo = min((r.relpow for r in band), default=float("nan"))
            hi = max((r.relpow for r in band), default=float("nan"))
            for p in procs:
                if p.name.startswith("band:"):
                    continue
                if p.name == "LSU" and "LSU" not in cfg.procedures:
                    continue
                rows.append(_row(cfg, reps[p.name], alpha, mu_bar, {"band_lower": lo, "band_upper": hi}))
    return rows


def guessed_means(mu: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """``mu + sigma * eps`` with standard Gaussian ``eps`` (no noise draw when ``sigma = 0``)."""
    if sigma == 0:
        return mu.copy()
    return mu + sigma * rng.standard_normal(mu.size)


def guessed_alternatives(mu_tilde: np.ndarray, m1: int) -> np.ndarray:
    """Indicator of the ``m1`` largest guessed means (ties broken by index)."""
    order = np.argsort(-mu_tilde, kind="stable")
    h = np.zeros(mu_tilde.size, dtype=np.int8)
    h[order[:m1]] = 1
    return h


def guessed_roster(cfg: ExperimentConfig, model: HypothesisConfig, alpha: float, mu_tilde: np.ndarray) -> list:
    h_tilde = guessed_alternatives(mu_tilde, model.m1)
    mu_g = np.where(mu_tilde > 0, mu_tilde, cfg.misspec.mean_floor)
    wm = optimal_weight_matrix(np.where(h_tilde == 1, mu_g, 0.0), alpha, "conditional", h_tilde)
    procs = [lsu_procedure(model.m, alpha)]
    procs += _weighted_roster(cfg.procedures, wm, h_tilde, alpha, "guess")
    return procs


def run_misspec(cfg: ExperimentConfig) -> list[dict]:
    """Relative power of the guessed procedures averaged over ``outer_draws`` guesses.

    The inner p-value samples reuse the study cell seed, so ``sigma = 0``
    reproduces the oracle rows.  Reported SEs are the mean per-draw SEs.
    """
    if cfg.model != "conditional":
        raise ConfigError("model: the misspecification sweep needs the conditional model")
    names = [p for p in cfg.procedures if p in GUESS_ROSTER and p != "LSU"]
    if not names:
        raise ConfigError("procedures: no guessed procedure (SU-W-guess, SD-W-guess, Unif-guess) selected")
    rows = []
    for alpha in cfg.alpha:
        for mu_bar in cfg.mu_bar:
            model = model_for(cfg, mu_bar)
            seed = cell_seed(cfg, alpha, mu_bar)
            for sigma in cfg.misspec.sigma:
                acc: dict[str, list] = {n: [] for n in names}
                for d in range(cfg.misspec.outer_draws):
                    ss = np.random.SeedSequence(list(seed) + [round(sigma * 1e6), d, 7])
                    rng = np.random.Generator(np.random.Philox(ss))
                    mu_tilde = guessed_means(model.mu, sigma, rng)
                    procs = guessed_roster(cfg, model, alpha, mu_tilde)
                    reps = mc_evaluate(procs, model, cfg.replications, seed, baseline="LSU")
                    for n in names:
                        acc[n].append(reps[n])
                for n in names:
                    rs = acc[n]
                    first = rs[0]
                    avg = dataclasses.replace(
                        first,
                        fdr=float(np.mean([r.fdr for r in rs])),
                        fdr_se=float(np.mean([r.fdr_se for r in rs])),
                        pow=float(np.mean([r.pow for r in rs])),
                        pow_se=float(np.mean([r.pow_se for r in rs])),
                        relpow=float(np.mean([r.relpow for r in rs])),
                        relpow_se=float(np.mean([r.relpow_se for r in rs])),
                    )
                    rows.append(_row(cfg, avg, alpha, mu_bar, {
                        "sigma": sigma, "outer_draws": cfg.misspec.outer_draws,
                        "mean_floor": cfg.misspec.mean_floor, "guess_rule": "top-m1",
                    }))
    return rows


def bounds_model(m: int, pi0: float, slope: float) -> UnconditionalConfig:
    """Random-effects model with means ``slope * i / m``."""
    return UnconditionalConfig(pi0=pi0, mu=slope * np.arange(1, m + 1) / m)


def run_bounds(cfg: ExperimentConfig) -> list[dict]:
    """Bound reports for the uncorrected ``SU(W*)`` on a grid of ``m`` and ``lambda``."""
    b = cfg.bounds
    rows = []
    for alpha in cfg.alpha:
        for m in b.m:
            model = bounds_model(int(m), b.pi0, b.mean_slope)
            star = OptimalGaussianWeights(model.mu, alpha, "unconditional")
            mc = None
            if b.mc_replications:
                proc = step_up("SU-W*", star.matrix())
                mc = mc_evaluate([proc], model, b.mc_replications, (cfg.seed, int(m), round(alpha * 1e6)))["SU-W*"]
            for lam in b.lam:
                try:
                    rep = prop82_fdr_bounds(star, model, float(lam))
                except ValueError as exc:
                    raise ConfigError(f"bounds: {exc}") from exc
                row = {"alpha": alpha, "pi0": b.pi0, "mean_slope": b.mean_slope} | rep.row()
                row |= {
                    "mc_fdr": mc.fdr if mc else float("nan"),
                    "mc_fdr_se": mc.fdr_se if mc else float("nan"),
                    "mc_pow": mc.pow if mc else float("nan"),
                    "mc_pow_se": mc.pow_se if mc else float("nan"),
                    "replications": b.mc_replications,
                    "seed": cfg.seed,
                }
                rows.append(row)
    return rows


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--output", help="CSV output path")
    p.add_argument("--m", type=int)
    p.add_argument("--m0", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float, nargs="+")
    p.add_argument("--mu-bar", type=float, nargs="+", dest="mu_bar")
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--procedures", nargs="+")
    p.add_argument("--u0-points", type=int, dest="u0_points")
    p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mwfdr", description="Multi-weighted FDR procedures: experiments and checks")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("study", help="relative power of the oracle roster")
    _add_common(p)

    p = sub.add_parser("misspec", help="relative power with noisy guessed means")
    _add_common(p)
    p.add_argument("--sigma", type=float, nargs="+")
    p.add_argument("--outer-draws", type=int, dest="outer_draws")

    p = sub.add_parser("bounds", help="finite-sample FDR and power bounds of SU(W*)")
    _add_common(p)
    p.add_argument("--bounds-m", type=int, nargs="+", dest="bounds_m")
    p.add_argument("--lam", type=float, nargs="+")
    p.add_argument("--mc-replications", type=int, dest="mc_replications")

    p = sub.add_parser("verify", help="run the oracle verification suite")
    p.add_argument("--quick", action="store_true")
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--output", help="optional CSV of check results")

    p = sub.add_parser("weights-dump", help="write the optimal weight matrix as CSV")
    p.add_argument("--m", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--mean-slope", type=float, default=5.0, dest="mean_slope",
                   help="means mu_i = slope * i / m (unconditional model)")
    p.add_argument("--columns", type=int, nargs="+", help="grid indices k to write (default: all)")
    p.add_argument("--raw", action="store_true", help="do not max-normalise columns")
    p.add_argument("--output", default="weights.csv")
    return ap


def resolve_config(args, command: str) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if command == "misspec" and not args.config and args.procedures is None:
        cfg.procedures = list(GUESS_ROSTER)
    for key in ("output", "m", "m0", "replications", "seed", "alpha", "mu_bar", "scenario",
                "procedures", "u0_points"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    if command == "misspec":
        if args.sigma is not None:
            cfg.misspec.sigma = args.sigma
        if args.outer_draws is not None:
            cfg.misspec.outer_draws = args.outer_draws
    if command == "bounds":
        if args.bounds_m is not None:
            cfg.bounds.m = args.bounds_m
        if args.lam is not None:
            cfg.bounds.lam = args.lam
        if args.mc_replications is not None:
            cfg.bounds.mc_replications = args.mc_replications
    return cfg.validate()


def _cmd_verify(args) -> int:
    results = oracle.run_verification(quick=args.quick, seed=args.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.seconds:7.2f}s  {r.detail}")
    if args.output:
        write_rows(args.output, [
            {"check": r.name, "passed": r.passed, "seconds": r.seconds, "detail": r.detail} for r in results
        ])
    return 0 if all(r.passed for r in results) else 2


def _cmd_weights(args) -> int:
    if args.m < 2 or not 0 < args.alpha < 1 or args.mean_slope <= 0:
        raise ConfigError("weights-dump: need m >= 2, alpha in (0, 1) and a positive mean slope")
    mu = args.mean_slope * np.arange(1, args.m + 1) / args.m
    wm = optimal_weight_matrix(mu, args.alpha, "unconditional")
    try:
        write_weight_csv(args.output, wm, normalize=not args.raw, columns=args.columns)
    except ValueError as exc:
        raise ConfigError(f"columns: {exc}") from exc
    print(f"wrote {args.output}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "weights-dump":
            return _cmd_weights(args)
        cfg = resolve_config(args, args.command)
        if args.dump_config:
            sys.stdout.write(cfg.dumps())
            return 0
        runner = {"study": run_study, "misspec": run_misspec, "bounds": run_bounds}[args.command]
        rows = runner(cfg)
        write_rows(cfg.output, rows)
        print(f"wrote {len(rows)} rows to {cfg.output}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
