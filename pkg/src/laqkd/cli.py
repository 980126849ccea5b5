"""Command-line front end.

Subcommands: run, verify-tables, metrics, attack, sweep. Machine output
(JSON or JSON lines, CSV for sweeps) goes to stdout or --out; anything
meant for humans goes to stderr. Same config and seed give byte-identical
output files. Exit codes: 0 ok, 1 verification failure, 64 usage or
config error, 65 backup-key depletion.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adversary import (
    EntanglingProbe,
    InterceptResend,
    POLICY_ANGLES,
    decode_error_experiment,
    guess_accuracy_experiment,
    parse_strategy,
    probe_attack_report,
)
from .errors import ConfigError, KeyDepletedError, LaqkdError
from .keymat import generate_store, load_store, save_store
from .metrics import (
    PROTOCOL_IDS,
    REFERENCE_PROTOCOLS,
    breidbart_bound_oracle,
    build_report,
    format_comparison,
    guess_probability_curve,
    protocol_schedule,
    schedule_to_json,
    value_guess_accuracy,
)
from .protocols import ProtocolConfig, aggregate_results, run, verify_tables

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 64
EXIT_RESOURCE = 65

# Seed-domain tags: each purpose gets its own substream of the master seed
# so adding draws to one phase never shifts another.
_DOM_HASH = 0
_DOM_STORE = 1
_DOM_ADVERSARY = 2
_DOM_TRIALS = 3
_DOM_EXPERIMENT = 4

_DEFAULTS = {
    "protocol": "p1",
    "n": 128,
    "m": 64,
    "nprime": None,
    "l": None,
    "trials": 100,
    "seed": 7,
    "adversary": "passive",
    "jobs": 1,
    "samples": 100000,
    "grid": 720,
    "exact": False,
    "figures": False,
    "out": None,
    "transcript_out": None,
    "keys": None,
    "keys_out": None,
    "schedule": None,
}


def _domain_rng(seed: int, domain: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, domain)))


@dataclass(frozen=True)
class ScenarioConfig:
    """Merged view of config-file fields and command-line flags."""

    protocol: str
    n: int
    m: int
    nprime: int | None
    l: int | None
    trials: int
    seed: int
    adversary: str
    jobs: int
    samples: int
    grid: int
    exact: bool
    figures: bool
    out: str | None
    transcript_out: str | None
    keys: str | None
    keys_out: str | None
    schedule: str | None

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "ScenarioConfig":
        merged = dict(_DEFAULTS)
        config_path = getattr(args, "config", None)
        if config_path:
            try:
                loaded = json.loads(Path(config_path).read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {config_path}: {exc}") from exc
            unknown = set(loaded) - set(_DEFAULTS)
            if unknown:
                raise ConfigError(f"unknown config fields: {sorted(unknown)}")
            merged.update(loaded)
        # Explicit flags win over file fields; parser defaults are all None.
        for key in _DEFAULTS:
            value = getattr(args, key, None)
            if value is not None:
                merged[key] = value
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.protocol not in PROTOCOL_IDS:
            raise ConfigError(f"unknown protocol id {self.protocol!r}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.samples < 1:
            raise ConfigError(f"samples must be >= 1, got {self.samples}")
        if self.figures and self.out is None:
            raise ConfigError("--figures renders next to --out; give an output path")

    def protocol_config(self) -> ProtocolConfig:
        return ProtocolConfig.create(self.protocol, self.n, self.m, self.nprime,
                                     self.l, rng=_domain_rng(self.seed, _DOM_HASH))


# ---------------------------------------------------------------------------
# Output plumbing

def _dump(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _emit_document(doc, out: str | None) -> None:
    text = _dump(doc) + "\n"
    if out:
        Path(out).write_text(text)
    sys.stdout.write(text)


def _figure_path(out: str) -> Path:
    return Path(out).with_suffix(".png")


# ---------------------------------------------------------------------------
# run

def _run_block(config, store, adversary, entropy, trial_indices):
    results = []
    for trial in trial_indices:
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=entropy, spawn_key=(trial,)))
        results.append(run(config, store.copy(), adversary, rng))
    return results


def _run_trials(config, store, adversary, trials, entropy, jobs):
    if jobs <= 1:
        return _run_block(config, store, adversary, entropy, range(trials))
    chunks = [c for c in np.array_split(np.arange(trials), jobs) if len(c)]
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        futures = [pool.submit(_run_block, config, store, adversary, entropy,
                               [int(t) for t in chunk]) for chunk in chunks]
        results = []
        for future in futures:
            results.extend(future.result())
    return results


def cmd_run(args) -> int:
    scenario = ScenarioConfig.from_args(args)
    config = scenario.protocol_config()
    if scenario.keys:
        store = load_store(scenario.keys, scenario.protocol, scenario.n, scenario.m)
    else:
        store = generate_store(scenario.protocol, scenario.n, scenario.m,
                               config.l, _domain_rng(scenario.seed, _DOM_STORE))
    if scenario.keys_out:
        save_store(store, scenario.keys_out, scenario.protocol, scenario.n,
                   scenario.m, config.l)
    adversary = parse_strategy(scenario.adversary, scenario.protocol,
                               _domain_rng(scenario.seed, _DOM_ADVERSARY))
    results = _run_trials(config, store, adversary, scenario.trials,
                          (scenario.seed, _DOM_TRIALS), scenario.jobs)
    aggregate = {**aggregate_results(results),
                 "adversary": adversary.name,
                 "protocol": scenario.protocol,
                 "seed": scenario.seed}

    lines = [_dump({"trial": t, **r.to_dict()}) for t, r in enumerate(results)]
    lines.append(_dump({"type": "aggregate", **aggregate}))
    body = "\n".join(lines) + "\n"
    if scenario.out:
        Path(scenario.out).write_text(body)
        sys.stdout.write(_dump({"type": "aggregate", **aggregate}) + "\n")
    else:
        sys.stdout.write(body)

    if scenario.transcript_out:
        with open(scenario.transcript_out, "w") as fh:
            for t, r in enumerate(results):
                for rec in r.transcript.records():
                    fh.write(_dump({"trial": t, **rec}) + "\n")
    if scenario.figures:
        from . import figures
        figures.save_abort_figure(aggregate, _figure_path(scenario.out))
    print(f"{scenario.trials} trials of {scenario.protocol} vs {adversary.name}: "
          f"abort rate {aggregate['abort_rate']:.4f}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify-tables

def cmd_verify_tables(args) -> int:
    report = verify_tables()
    doc = {"total": report["total"], "all_ok": report["all_ok"],
           "rows": report["rows"]}
    _emit_document(doc, getattr(args, "out", None))
    if not report["all_ok"]:
        for row in report["rows"]:
            if not row["ok"]:
                print(f"row mismatch: {row['table']} {row['case']} "
                      f"support={row['support']}", file=sys.stderr)
        return EXIT_VERIFY
    print(f"{report['total']} code-table rows verified", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# metrics

def cmd_metrics(args) -> int:
    scenario = ScenarioConfig.from_args(args)
    wanted = list(PROTOCOL_IDS) if args.all else [scenario.protocol]
    l = scenario.l if scenario.l is not None else 2 * scenario.m
    reports = [build_report(pid, scenario.n, scenario.m, l, exact=scenario.exact)
               for pid in wanted]
    doc = {
        "reports": [r.to_dict() for r in reports],
        "references": [{"id": row.id, "label": row.label, "qe": row.qe,
                        "psk": row.psk, "qr": row.qr, "kr": row.kr,
                        "ttc": row.ttc} for row in REFERENCE_PROTOCOLS],
    }
    _emit_document(doc, scenario.out)
    if scenario.schedule:
        schedules = {pid: schedule_to_json(protocol_schedule(pid)) for pid in wanted}
        Path(scenario.schedule).write_text(
            json.dumps(schedules, sort_keys=True, indent=2) + "\n")
    if scenario.figures:
        from . import figures
        figures.save_metrics_figure(reports, _figure_path(scenario.out))
    print(format_comparison(reports), file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# attack

def cmd_attack(args) -> int:
    scenario = ScenarioConfig.from_args(args)
    config = scenario.protocol_config()
    strategy = parse_strategy(scenario.adversary, scenario.protocol,
                              _domain_rng(scenario.seed, _DOM_ADVERSARY))
    store = generate_store(scenario.protocol, scenario.n, scenario.m,
                           config.l, _domain_rng(scenario.seed, _DOM_STORE))
    results = _run_trials(config, store, strategy, scenario.trials,
                          (scenario.seed, _DOM_TRIALS), scenario.jobs)
    aggregate = aggregate_results(results)

    doc = {
        "protocol": scenario.protocol,
        "strategy": strategy.name,
        "trials": scenario.trials,
        "samples": scenario.samples,
        "detection_rate": aggregate["abort_rate"],
        "key_agreement_rate": aggregate["key_agreement_rate"],
        "per_position_disturbance": None,
        "mi_estimate": None,
        "mi_bias_bound": None,
        "max_trace_distance": None,
        "residual": None,
        "guess_accuracy": None,
    }
    rng = _domain_rng(scenario.seed, _DOM_EXPERIMENT)
    if isinstance(strategy, EntanglingProbe):
        leak = probe_attack_report(strategy.probe, scenario.samples, rng)
        doc["per_position_disturbance"] = leak.detection_probability
        doc["mi_estimate"] = leak.mi_bits
        doc["mi_bias_bound"] = leak.bias_bound
        doc["max_trace_distance"] = leak.max_trace_distance
        doc["residual"] = leak.residual
        doc["probe_dim"] = strategy.probe.dim
        doc["conditions_satisfied"] = leak.satisfied
    else:
        doc["per_position_disturbance"] = decode_error_experiment(
            scenario.protocol, strategy, scenario.samples, rng)
        if isinstance(strategy, InterceptResend) and strategy.basis_policy in POLICY_ANGLES:
            doc["guess_accuracy"] = guess_accuracy_experiment(
                strategy.basis_policy, scenario.samples, rng)
    _emit_document(doc, scenario.out)
    if scenario.figures:
        from . import figures
        figures.save_attack_figure(doc, _figure_path(scenario.out),
                                   title=f"{scenario.protocol} vs {strategy.name}")
    print(f"{scenario.protocol} vs {strategy.name}: detection rate "
          f"{doc['detection_rate']:.4f}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep

def cmd_sweep(args) -> int:
    scenario = ScenarioConfig.from_args(args)
    angles, probs = guess_probability_curve(scenario.grid)
    best = breidbart_bound_oracle(scenario.grid)
    doc = {
        "grid_resolution": scenario.grid,
        "max_probability": best.probability,
        "argmax_angle": best.angle,
        "closed_form_max": value_guess_accuracy(np.pi / 8),
        "closed_form_angle": np.pi / 8,
        "csv": scenario.out,
    }
    if scenario.out:
        rows = ["angle_rad,probability"]
        rows += [f"{repr(float(a))},{repr(float(p))}" for a, p in zip(angles, probs)]
        Path(scenario.out).write_text("\n".join(rows) + "\n")
    sys.stdout.write(_dump(doc) + "\n")
    if scenario.figures:
        from . import figures
        figures.save_sweep_figure(angles, probs, _figure_path(scenario.out))
    print(f"sweep max {best.probability:.6f} at {best.angle:.6f} rad",
          file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser

class _ArgumentParser(argparse.ArgumentParser):
    """argparse's usage failures exit 2; the contract here is 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(sub, *names):
    flags = {
        "config": dict(type=str, help="JSON config file; flags override its fields"),
        "protocol": dict(type=str, choices=list(PROTOCOL_IDS), help="protocol id"),
        "n": dict(type=int, help="secret length in bits"),
        "m": dict(type=int, help="digest length in bits"),
        "nprime": dict(type=int, help="amplified key length (default n//2)"),
        "l": dict(type=int, help="backup pool length per key (default 2m)"),
        "trials": dict(type=int, help="number of sessions to run"),
        "seed": dict(type=int, help="master seed"),
        "adversary": dict(type=str, help="strategy spec, e.g. passive, "
                          "intercept:z, malicious_tp:uniform, probe:4"),
        "jobs": dict(type=int, help="worker processes for trials"),
        "samples": dict(type=int, help="Monte-Carlo sample count"),
        "grid": dict(type=int, help="angle-sweep resolution"),
        "out": dict(type=str, help="output file path"),
        "transcript_out": dict(type=str, help="full per-position transcript JSONL path"),
        "keys": dict(type=str, help="load the master-key store from this file"),
        "keys_out": dict(type=str, help="save the generated store to this file"),
        "schedule": dict(type=str, help="write transmission schedules JSON here"),
    }
    for name in names:
        sub.add_argument(f"--{name.replace('_', '-')}", default=None, **flags[name])


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="laqkd", description=__doc__,
                             formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute protocol sessions")
    _add_common(p_run, "config", "protocol", "n", "m", "nprime", "l", "trials",
                "seed", "adversary", "jobs", "out", "transcript_out", "keys",
                "keys_out")
    p_run.add_argument("--figures", action=argparse.BooleanOptionalAction,
                       default=None, help="render a PNG next to --out")
    p_run.set_defaults(func=cmd_run)

    p_verify = sub.add_parser("verify-tables", help="check every code-table row")
    p_verify.add_argument("--out", type=str, default=None, help="output file path")
    p_verify.set_defaults(func=cmd_verify_tables)

    p_metrics = sub.add_parser("metrics", help="resource metrics and comparisons")
    _add_common(p_metrics, "config", "protocol", "n", "m", "l", "seed", "out",
                "schedule")
    p_metrics.add_argument("--all", action="store_true",
                           help="report every protocol side by side")
    p_metrics.add_argument("--exact", action=argparse.BooleanOptionalAction,
                           default=None, help="use the exact hash-leak constant")
    p_metrics.add_argument("--figures", action=argparse.BooleanOptionalAction,
                           default=None, help="render a PNG next to --out")
    p_metrics.set_defaults(func=cmd_metrics)

    p_attack = sub.add_parser("attack", help="attack experiments and reports")
    _add_common(p_attack, "config", "protocol", "n", "m", "nprime", "l",
                "trials", "seed", "adversary", "jobs", "samples", "out")
    p_attack.add_argument("--figures", action=argparse.BooleanOptionalAction,
                          default=None, help="render a PNG next to --out")
    p_attack.set_defaults(func=cmd_attack)

    p_sweep = sub.add_parser("sweep", help="measurement-angle accuracy sweep")
    _add_common(p_sweep, "config", "grid", "out")
    p_sweep.add_argument("--figures", action=argparse.BooleanOptionalAction,
                         default=None, help="render a PNG next to --out")
    p_sweep.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyDepletedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (LaqkdError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
