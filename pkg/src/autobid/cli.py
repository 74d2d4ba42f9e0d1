"""Command-line experiment runner.

    autobid simulate --config exp.cfg [--out DIR]
    autobid calibrate --config exp.cfg
    autobid audit --config exp.cfg [--expect-ic]
    autobid repro-example1 [--config exp.cfg]

Exit status: 0 on success, 1 on an I/O failure, 2 when the config fails
validation, 3 when ``--expect-ic`` is set and the audit finds a profitable
misreport.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import formats
from .audit import CLOSED_FORM, SIMULATED, AuditReport, ic_audit, spa_counterexample
from .bidding import StrategyParams
from .control import ControlConfig, run_episode, run_spa_episode
from .errors import AutobidError, ConfigError
from .market import TCPA, TROI, AdvertiserProfile, Scenario
from .mechanism import (DEFAULT_MARGIN, PROPORTIONAL, UNIFORM, CompositeMechanism, Curve,
                        DecomposedMechanism, LinearDecomposition, PerRequestSpaMechanism,
                        SubmarketMechanism, calibrate_feasible_cv, calibrate_submarkets,
                        make_g_function, make_submarket_curve, tcpa_mechanism)
from .reference import REFERENCE_CONTROL, REFERENCE_SCENARIO
from .scenario import ScenarioConfig, example1_scenario, generate_scenario, substream

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_NOT_IC = 0, 1, 2, 3

PRESETS = ("reference", "custom", "example1")
KINDS = ("tcpa", "composite", "decomposed", "cpa_spa", "file")
EXAMPLE1_GAIN_VALUES = (5.5, 6.0, 8.0, 10.0, 15.0, 20.0)


class _Reader:
    """Typed access to a flat key map that remembers which keys were consumed."""

    def __init__(self, flat):
        self.flat = dict(flat)
        self.used = set()

    def has(self, key):
        return key in self.flat

    def raw(self, key, default=None, required=False):
        if key in self.flat:
            self.used.add(key)
            return self.flat[key]
        if required:
            raise ConfigError(f"missing required key {key!r}", key)
        return default

    def _typed(self, key, cast, default, required, what):
        text = self.raw(key, None, required)
        if text is None:
            return default
        try:
            return cast(text)
        except (TypeError, ValueError):
            raise ConfigError(f"{key!r} must be {what}, got {text!r}", key) from None

    def float(self, key, default=None, required=False):
        return self._typed(key, float, default, required, "a number")

    def int(self, key, default=None, required=False):
        return self._typed(key, int, default, required, "an integer")

    def choice(self, key, options, default=None, required=False):
        text = self.raw(key, default, required)
        if text not in options:
            raise ConfigError(f"{key!r} must be one of {', '.join(options)}, got {text!r}", key)
        return text

    def section(self, prefix):
        """Keys under ``prefix.`` as ``{suffix: raw}``, in sorted order."""
        out = {}
        for key in sorted(self.flat):
            if key.startswith(prefix + "."):
                self.used.add(key)
                out[key[len(prefix) + 1:]] = self.flat[key]
        return out

    def check_unused(self):
        extra = sorted(set(self.flat) - self.used)
        if extra:
            raise ConfigError(f"unknown config key {extra[0]!r}", extra[0])


@dataclass(frozen=True)
class MechanismSpec:
    kind: str
    margin: float = DEFAULT_MARGIN
    grid: tuple = ()
    pricing: str = PROPORTIONAL
    weights: dict | None = None
    file: str | None = None


@dataclass(frozen=True)
class AuditSpec:
    mode: str
    grid: tuple
    seeds: int
    tolerance: float | None


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    output: str | None
    preset: str
    scenario: ScenarioConfig | None
    profile: AdvertiserProfile
    mechanism: MechanismSpec
    control: ControlConfig
    strategy: StrategyParams
    audit: AuditSpec | None = None

    @classmethod
    def from_mapping(cls, flat, subcommand, overrides=None) -> "ExperimentConfig":
        r = _Reader(flat)
        seed = r.int("seed", 0)
        output = r.raw("output")
        preset = r.choice("scenario.preset", PRESETS, "custom")
        profile = _read_profile(r)
        scenario = None if preset == "example1" else _read_scenario(r, preset, profile)
        if preset == "example1" and profile.constraint != TCPA:
            raise ConfigError("the example1 market needs a tCPA advertiser", "advertiser.constraint")
        mechanism = _read_mechanism(r, profile)
        control = _read_control(r, REFERENCE_CONTROL if preset == "reference" else ControlConfig())
        overrides = overrides or {}
        m, n = r.float("strategy.m", 1.0), r.float("strategy.n", 1.0)
        m = m if overrides.get("m") is None else overrides["m"]
        n = n if overrides.get("n") is None else overrides["n"]
        if not (m > 0 and n > 0):
            raise ConfigError("strategy parameters must be positive", "strategy.m")
        audit = _read_audit(r, mechanism, profile) if subcommand == "audit" else None
        if subcommand != "audit":
            r.section("audit")
        r.check_unused()
        return cls(seed, output, preset, scenario, profile, mechanism, control,
                   StrategyParams(m, n), audit)


def _read_profile(r: _Reader) -> AdvertiserProfile:
    aid = r.raw("advertiser.id", "a")
    constraint = r.choice("advertiser.constraint", (TCPA, TROI), TCPA)
    target = r.float("advertiser.target", required=True)
    goal = r.int("advertiser.goal_flag", 1)
    if goal not in (0, 1):
        raise ConfigError("advertiser.goal_flag must be 0 or 1", "advertiser.goal_flag")
    try:
        if constraint == TCPA:
            value = r.float("advertiser.value", required=True)
            return AdvertiserProfile.tcpa(aid, value, target, goal)
        raw = r.section("advertiser.values")
        if not raw:
            raise ConfigError("a tROI advertiser needs advertiser.values.<class> entries",
                              "advertiser.values")
        values = {h: _number(v, f"advertiser.values.{h}") for h, v in raw.items()}
        return AdvertiserProfile.troi(aid, values, target, goal)
    except AutobidError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), "advertiser.target") from None


def _number(text, key):
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key!r} must be a number, got {text!r}", key) from None


_SCENARIO_INTS = {"requests", "slots_min", "slots_max", "competitor_pool", "competitors_min",
                  "competitors_max"}


def _read_scenario(r: _Reader, preset, profile) -> ScenarioConfig:
    base = REFERENCE_SCENARIO if preset == "reference" else ScenarioConfig()
    changes = {}
    for f in fields(ScenarioConfig):
        key = f"scenario.{f.name}"
        if f.name in ("value_mix", "fixed_competitor_bids") or not r.has(key):
            continue
        if f.name == "position_factors":
            text = r.raw(key)
            try:
                changes[f.name] = tuple(float(x) for x in text.split(","))
            except ValueError:
                raise ConfigError(f"{key!r} must be a comma-separated list of numbers", key) from None
        elif f.name in _SCENARIO_INTS:
            changes[f.name] = r.int(key)
        else:
            changes[f.name] = r.float(key)
    mix = r.section("scenario.value_mix")
    if mix:
        changes["value_mix"] = {h: _number(w, f"scenario.value_mix.{h}") for h, w in mix.items()}
        unknown = sorted(set(mix) - set(profile.values))
        if unknown:
            raise ConfigError(f"value class {unknown[0]!r} is not an advertiser value class",
                              f"scenario.value_mix.{unknown[0]}")
    config = replace(base, **changes)
    config.validate()
    return config


def _grid(r: _Reader, prefix, lo, hi, points):
    lo = r.float(f"{prefix}.grid_min", lo, required=lo is None)
    hi = r.float(f"{prefix}.grid_max", hi, required=hi is None)
    points = r.int(f"{prefix}.grid_points", points)
    if not 0 < lo < hi:
        raise ConfigError(f"need 0 < {prefix}.grid_min < {prefix}.grid_max", f"{prefix}.grid_min")
    if points < 2:
        raise ConfigError(f"{prefix}.grid_points must be at least 2", f"{prefix}.grid_points")
    return tuple(np.linspace(lo, hi, points).tolist())


def _read_mechanism(r: _Reader, profile) -> MechanismSpec:
    default = "tcpa" if profile.constraint == TCPA else "composite"
    kind = r.choice("mechanism.kind", KINDS, default)
    if kind in ("tcpa", "cpa_spa") and profile.constraint != TCPA:
        raise ConfigError(f"mechanism kind {kind!r} needs a tCPA advertiser", "mechanism.kind")
    if kind in ("composite", "decomposed") and profile.constraint != TROI:
        raise ConfigError(f"mechanism kind {kind!r} needs a tROI advertiser", "mechanism.kind")
    if kind == "file":
        return MechanismSpec(kind, file=r.raw("mechanism.file", required=True))
    if kind == "cpa_spa":
        return MechanismSpec(kind)
    margin = r.float("mechanism.margin", DEFAULT_MARGIN)
    if not 0 < margin <= 1:
        raise ConfigError("mechanism.margin must lie in (0, 1]", "mechanism.margin")
    if kind == "tcpa":
        v = profile.value
        grid = _grid(r, "mechanism", 0.05 * v, 0.9 * v, 60)
        if grid[-1] >= v:
            raise ConfigError("calibration reports must stay below the value", "mechanism.grid_max")
        return MechanismSpec(kind, margin, grid)
    grid = _grid(r, "mechanism", 0.05, 4.0, 60)
    if kind == "composite":
        return MechanismSpec(kind, margin, grid)
    pricing = r.choice("mechanism.pricing", (PROPORTIONAL, UNIFORM), PROPORTIONAL)
    raw = r.section("mechanism.weights")
    if not raw:
        raise ConfigError("a decomposed mechanism needs mechanism.weights.<class> entries",
                          "mechanism.weights")
    weights = {}
    for h, text in raw.items():
        key = f"mechanism.weights.{h}"
        if h not in profile.values:
            raise ConfigError(f"{key!r} names an unknown value class", key)
        try:
            weights[h] = Fraction(text)
        except ValueError:
            raise ConfigError(f"{key!r} must be a number, got {text!r}", key) from None
        if weights[h] < 0:
            raise ConfigError(f"{key!r} must be non-negative", key)
    if sum(weights.values()) != 1:
        raise ConfigError(f"decomposition weights sum to {float(sum(weights.values()))}, not 1",
                          "mechanism.weights")
    return MechanismSpec(kind, margin, grid, pricing, weights)


def _read_control(r: _Reader, base: ControlConfig) -> ControlConfig:
    changes = {}
    for f in fields(ControlConfig):
        key = f"control.{f.name}"
        if r.has(key):
            changes[f.name] = r.float(key)
    try:
        return replace(base, **changes)
    except AutobidError as exc:
        raise ConfigError(str(exc), "control") from None


def _read_audit(r: _Reader, mechanism: MechanismSpec, profile) -> AuditSpec:
    default_mode = SIMULATED if mechanism.kind == "cpa_spa" else CLOSED_FORM
    mode = r.choice("audit.mode", (CLOSED_FORM, SIMULATED), default_mode)
    if mode == CLOSED_FORM and mechanism.kind == "cpa_spa":
        raise ConfigError("a per-request auction can only be audited by simulation", "audit.mode")
    grid = _grid(r, "audit", None, None, 50)
    if profile.constraint == TCPA and grid[-1] >= profile.value:
        raise ConfigError("tCPA audit reports must stay below the value", "audit.grid_max")
    seeds = r.int("audit.seeds", 5)
    if seeds < 1:
        raise ConfigError("audit.seeds must be at least 1", "audit.seeds")
    tol = r.float("audit.tolerance")
    if tol is not None and tol < 0:
        raise ConfigError("audit.tolerance must be non-negative", "audit.tolerance")
    return AuditSpec(mode, grid, seeds, tol)


# --- building blocks ---------------------------------------------------------

def build_scenario(cfg: ExperimentConfig, seed=None) -> Scenario:
    if cfg.preset == "example1":
        return example1_scenario(cfg.profile.value, cfg.profile.target)
    return generate_scenario(cfg.scenario, cfg.seed if seed is None else seed, cfg.profile)


def calibrate(cfg: ExperimentConfig, scenario: Scenario):
    """Frontiers by value class and the mechanism built from them."""
    spec, profile = cfg.mechanism, cfg.profile
    if spec.kind == "tcpa":
        frontier = calibrate_feasible_cv(scenario, profile, spec.grid, cfg.strategy)
        g = make_g_function(frontier, profile.value, profile.goal_flag, spec.margin)
        return ({profile.value_class: frontier},
                tcpa_mechanism(profile.value, profile.goal_flag, g, profile.value_class))
    frontiers = calibrate_submarkets(scenario, profile, spec.grid, cfg.strategy)
    if spec.kind == "composite":
        parts = [SubmarketMechanism(profile.values[h], profile.goal_flag,
                                    make_submarket_curve(f.as_curve(), profile.goal_flag,
                                                         spec.margin), h)
                 for h, f in sorted(frontiers.items())]
        return frontiers, CompositeMechanism(parts)
    if spec.kind == "decomposed":
        # the pooled curve is capped by the thinnest class it is split into
        pooled = np.full(len(spec.grid), np.inf)
        for h, k in spec.weights.items():
            if k > 0:
                pooled = np.minimum(pooled, np.asarray(frontiers[h].conversions) / float(k))
        curve = make_submarket_curve(Curve.from_arrays(spec.grid, pooled), profile.goal_flag, spec.margin)
        return frontiers, DecomposedMechanism(profile.values, LinearDecomposition(spec.weights),
                                              curve, profile.goal_flag, spec.pricing)
    raise ConfigError(f"mechanism kind {spec.kind!r} cannot be calibrated", "mechanism.kind")


def load_mechanism(cfg: ExperimentConfig, scenario: Scenario):
    spec = cfg.mechanism
    if spec.kind == "cpa_spa":
        return PerRequestSpaMechanism(cfg.profile.goal_flag)
    if spec.kind == "file":
        path = Path(spec.file)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read mechanism file: {exc}", "mechanism.file") from None
        return formats.mechanism_from_text(text)
    return calibrate(cfg, scenario)[1]


def audit_seeds(root_seed, count):
    """Competitor-draw seeds for an audit, one named sub-stream per draw."""
    return [int(substream(root_seed, f"audit.seed.{k}").integers(0, 2**31 - 1))
            for k in range(count)]


def run_audit(cfg: ExperimentConfig) -> AuditReport:
    spec = cfg.audit
    if spec.mode == CLOSED_FORM:
        mech = load_mechanism(cfg, build_scenario(cfg))
        return ic_audit(mech, cfg.profile, spec.grid, CLOSED_FORM, spec.tolerance)
    if cfg.preset == "example1":
        scenarios = [build_scenario(cfg)]
    else:
        scenarios = [build_scenario(cfg, s) for s in audit_seeds(cfg.seed, spec.seeds)]
    if cfg.mechanism.kind in ("cpa_spa", "file"):
        mech = load_mechanism(cfg, scenarios[0])
    else:
        def mech(sc):
            return calibrate(cfg, sc)[1]
    return ic_audit(mech, cfg.profile, spec.grid, SIMULATED, spec.tolerance, scenarios,
                    cfg.control)


# --- subcommands -------------------------------------------------------------

def _out_dir(args, cfg):
    out = args.out or (cfg.output if cfg is not None else None)
    if not out:
        raise ConfigError("no output directory: pass --out or set 'output'", "output")
    return Path(out)


def cmd_simulate(cfg, out: Path):
    scenario = build_scenario(cfg)
    mech = load_mechanism(cfg, scenario)
    report = cfg.profile.target
    if isinstance(mech, PerRequestSpaMechanism):
        result = run_spa_episode(scenario, cfg.profile, report)
    else:
        result = run_episode(scenario, cfg.profile, mech, report, cfg.control)
    formats.write_text(out / "log.csv", formats.episode_log_csv(result.log))
    formats.write_text(out / "violations.csv", formats.violations_csv(result.log))
    pairs = [("seed", cfg.seed), ("report", float(report))]
    pairs += formats.episode_summary_pairs(result.summary, result.targets)
    formats.write_text(out / "summary.txt", formats.summary_text(pairs))
    print(formats.summary_text(pairs), end="")
    return EXIT_OK


def cmd_calibrate(cfg, out: Path):
    if cfg.mechanism.kind in ("cpa_spa", "file"):
        raise ConfigError(f"mechanism kind {cfg.mechanism.kind!r} cannot be calibrated",
                          "mechanism.kind")
    scenario = build_scenario(cfg)
    frontiers, mech = calibrate(cfg, scenario)
    formats.write_text(out / "frontier.csv", formats.frontier_csv(frontiers))
    formats.write_text(out / "mechanism.json", formats.mechanism_to_text(mech))
    pairs = [("seed", cfg.seed), ("kind", mech.kind), ("margin", cfg.mechanism.margin),
             ("grid_points", len(cfg.mechanism.grid))]
    for h, f in sorted(frontiers.items()):
        pairs.append((f"frontier.{h}.max_conversions", max(f.conversions)))
    lo, hi = mech.domain
    pairs += [("domain_min", lo), ("domain_max", hi)]
    formats.write_text(out / "summary.txt", formats.summary_text(pairs))
    print(formats.summary_text(pairs), end="")
    return EXIT_OK


def cmd_audit(cfg, out: Path, expect_ic=False):
    report = run_audit(cfg)
    formats.write_text(out / "audit_rows.csv", formats.audit_rows_csv(report))
    pairs = [("seed", cfg.seed), ("kind", cfg.mechanism.kind)] + formats.audit_summary_pairs(report)
    formats.write_text(out / "summary.txt", formats.summary_text(pairs))
    print(f"ic = {formats.fmt(report.ic)}\nir = {formats.fmt(report.ir)}\n"
          f"argmax = {formats.fmt(report.argmax)}\ngap = {formats.fmt(report.gap)}")
    if expect_ic and not report.ic:
        return EXIT_NOT_IC
    return EXIT_OK


def example1_table(value=10.0, truth=4.0):
    """Rows of the truthful-versus-overbid comparison plus the gain at several values."""
    cmp = spa_counterexample(value, truth)
    rows = []
    for case, o in (("truthful", cmp.truthful), ("overbid", cmp.overbid)):
        rows.append((case, o.report, " ".join(str(r) for r in o.won_requests), o.delivered_cpa,
                     o.profit, o.constraint_satisfied))
    gains = [(v, spa_counterexample(v, truth).gain, v - 5.0) for v in EXAMPLE1_GAIN_VALUES]
    return cmp, rows, gains


def cmd_repro_example1(cfg, out: Path):
    value = cfg.profile.value if cfg is not None else 10.0
    truth = cfg.profile.target if cfg is not None else 4.0
    cmp, rows, gains = example1_table(value, truth)
    table = formats.csv_text(("case", "report", "won_requests", "delivered_cpa", "profit",
                               "constraint_satisfied"), rows)
    gain_table = formats.csv_text(("value", "overbid_gain", "value_minus_5"), gains)
    formats.write_text(out / "example1.csv", table)
    formats.write_text(out / "example1_gains.csv", gain_table)
    pairs = [("value", cmp.value), ("truth", cmp.truth), ("truthful_profit", cmp.truthful.profit),
             ("truthful_cpa", cmp.truthful.delivered_cpa), ("overbid_profit", cmp.overbid.profit),
             ("overbid_cpa", cmp.overbid.delivered_cpa), ("gain", cmp.gain)]
    formats.write_text(out / "summary.txt", formats.summary_text(pairs))
    print(table, end="")
    print(gain_table, end="")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="autobid", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "calibrate", "audit", "repro-example1"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=name != "repro-example1",
                       help="flat key = value experiment file")
        s.add_argument("--out", help="output directory (overrides 'output' in the config)")
        s.add_argument("--param-m", type=float, help="tCPA dual parameter of the bid strategy")
        s.add_argument("--param-n", type=float, help="tROI dual parameter of the bid strategy")
        if name == "audit":
            s.add_argument("--expect-ic", action="store_true",
                           help="exit 3 when the audit finds a profitable misreport")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = None
        if args.config:
            flat = formats.load_config(args.config)
            overrides = {"m": args.param_m, "n": args.param_n}
            cfg = ExperimentConfig.from_mapping(flat, args.command, overrides)
        out = _out_dir(args, cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "calibrate":
            return cmd_calibrate(cfg, out)
        if args.command == "audit":
            return cmd_audit(cfg, out, args.expect_ic)
        return cmd_repro_example1(cfg, out)
    except ConfigError as exc:
        key = f" [{exc.key}]" if exc.key else ""
        print(f"config error{key}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except AutobidError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
