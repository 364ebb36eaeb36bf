"""Command-line front end.

Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 invalid configuration,
4 audit failure (a sweep broke a hard invariant), 5 simulation or solver failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from . import __version__, analytic
from .analytic import BoundPair, CriticalRateQuery, DomainError, NoBracket, NotMonotone
from .config_io import load_config, load_preset, load_sweep
from .experiments import (
    REL_TOL,
    ComparisonRow,
    analytic_for,
    audit_bounds,
    check_orderings,
    node_classes,
    run_sweep,
    run_table,
)
from .model import ConfigError, Homogeneous, NetworkConfig, Scheme, ValidatedConfig, validate_config
from .reference import TraceTooLarge, trace_events
from .results import COMPARISON_COLUMNS, ResultEnvelope, emit_results, write_output
from .simulator import DEFAULT_UPDATES, Horizon, SimulationError, run_replications

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_AUDIT = 4
EXIT_SIMULATION = 5

TRACE_COLUMNS = (
    "time",
    "event",
    "version",
    "sender",
    "receiver",
    "keys_sent",
    "ages_before",
    "ages_after",
    "decodes",
    "holders",
    "gamma",
)


class UsageError(Exception):
    pass


def _add_network_flags(p: argparse.ArgumentParser, scheme_default: Optional[str] = None) -> None:
    p.add_argument("--config", metavar="PATH", help="TOML network configuration")
    p.add_argument("--k", type=int, help="additional keys needed beyond the first")
    p.add_argument("--n", type=int, help="keys per update")
    p.add_argument("--s", type=int, help="number of subscribers")
    p.add_argument("--m", type=int, help="number of receivers")
    p.add_argument("--lambda-s", type=float, dest="lambda_s", help="source update rate")
    p.add_argument("--lambda-e", type=float, dest="lambda_e", help="per-node gossip rate")
    p.add_argument("--scheme", choices=[s.value for s in Scheme], default=scheme_default)


def _add_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", metavar="PATH", help="output file (default stdout)")
    p.add_argument("--format", choices=["csv", "json"], default=None, help="output format (default csv)")
    p.add_argument("--timing", action="store_true", help="include wall-clock timing in the metadata")


def _add_horizon_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group()
    group.add_argument("--updates", type=int, metavar="N", help="stop after N source updates")
    group.add_argument("--time", type=float, metavar="T", help="stop at simulated time T")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tss-gossip",
        description="Version age of threshold-coded updates in gossip networks.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("analytic", help="evaluate the closed-form age for one node class")
    _add_network_flags(p, scheme_default=None)
    p.add_argument("--class", dest="node_class", choices=["subscriber", "nonsubscriber", "graph"], default="graph")
    _add_output_flags(p)

    p = sub.add_parser("simulate", help="simulate one network and compare with the closed forms")
    _add_network_flags(p)
    _add_horizon_flags(p)
    p.add_argument("--seed", type=int, default=None, help="base seed (default 0)")
    p.add_argument("--replications", type=int, default=None, help="independent replications (default 4)")
    _add_output_flags(p)

    p = sub.add_parser("sweep", help="run a parameter sweep from a preset or sweep file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", metavar="NAME", help="bundled or AOI_PRESET_DIR preset name")
    src.add_argument("--config", metavar="PATH", help="sweep specification file")
    _add_horizon_flags(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--no-simulate", action="store_true", help="closed forms only")
    _add_output_flags(p)

    p = sub.add_parser("critical-rate", help="smallest gossip rate at which memory stops paying off")
    _add_network_flags(p)
    p.add_argument("--epsilon", type=float, required=True, help="allowed memory/memoryless age gap")
    _add_output_flags(p)

    p = sub.add_parser("validate", help="check a configuration file")
    p.add_argument("--config", metavar="PATH", required=True)

    p = sub.add_parser("trace", help="dump the event log of a short run")
    _add_network_flags(p)
    _add_horizon_flags(p)
    p.add_argument("--seed", type=int, default=0)
    _add_output_flags(p)
    return parser


def _network_from_args(args: argparse.Namespace, need_edges: bool = True) -> tuple[ValidatedConfig, dict]:
    if args.config:
        cfg, sim = load_config(args.config)
        overrides = {}
        for name in ("k", "n", "s", "m", "lambda_s"):
            if getattr(args, name, None) is not None:
                overrides[name] = getattr(args, name)
        if getattr(args, "lambda_e", None) is not None:
            overrides["edge_rates"] = Homogeneous(args.lambda_e)
        if getattr(args, "scheme", None):
            overrides["scheme"] = Scheme.parse(args.scheme)
        if overrides:
            base = NetworkConfig(cfg.k, cfg.n, cfg.s, cfg.m, cfg.lambda_s, cfg.edge_rates, cfg.scheme)
            cfg = validate_config(replace(base, **overrides))
        return cfg, sim
    names = ["k", "n", "s", "m", "lambda_s"] + (["lambda_e"] if need_edges else [])
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError(f"missing {', '.join(missing)} (or give --config)")
    edges = Homogeneous(args.lambda_e if args.lambda_e is not None else 1.0)
    scheme = Scheme.parse(args.scheme or "memory")
    return validate_config(NetworkConfig(args.k, args.n, args.s, args.m, args.lambda_s, edges, scheme)), {}


def _horizon(args: argparse.Namespace, sim: dict) -> Horizon:
    if args.updates is not None:
        return Horizon(updates=args.updates)
    if args.time is not None:
        return Horizon(time=args.time)
    if "time" in sim:
        return Horizon(time=float(sim["time"]))
    return Horizon(updates=int(sim.get("updates", DEFAULT_UPDATES)))


def _emit(env: ResultEnvelope, args: argparse.Namespace) -> None:
    write_output(emit_results(env, args.format or "csv", include_timing=args.timing), args.out)


def _scalar_text(x) -> str:
    if isinstance(x, BoundPair):
        return f"{x.lower:.12g} {x.upper:.12g}"
    return f"{x:.12g}"


def cmd_analytic(args: argparse.Namespace) -> int:
    cfg, _ = _network_from_args(args)
    if not isinstance(cfg.edge_rates, Homogeneous):
        raise UsageError("closed forms need homogeneous edge rates")
    scheme = Scheme.parse(args.scheme) if args.scheme else cfg.scheme
    if args.node_class not in node_classes(cfg.s, cfg.m):
        raise DomainError(f"no {args.node_class} nodes when s={cfg.s}, m={cfg.m}")
    ref = analytic_for(scheme.value, cfg.k, cfg.n, cfg.s, cfg.m, cfg.lambda_s, cfg.lambda_e, args.node_class)
    if args.out is None and args.format is None:
        print(_scalar_text(ref.value if not isinstance(ref, BoundPair) else ref))
        return EXIT_OK
    row = ComparisonRow(
        scheme.value, cfg.k, cfg.n, cfg.s, cfg.m, cfg.lambda_s, cfg.lambda_e, args.node_class,
        analytic_value=None if isinstance(ref, BoundPair) else ref.value,
        bounds=ref if isinstance(ref, BoundPair) else None,
    )
    env = ResultEnvelope("analytic", {**cfg.to_dict(), "scheme": scheme.value, "node_class": args.node_class},
                         None, rows=[row.as_record()], columns=COMPARISON_COLUMNS)
    _emit(env, args)
    return EXIT_OK


def _heterogeneous_reference(cfg: ValidatedConfig, node_class: str):
    # per-node closed forms exist only when every receiver is a subscriber
    if not (cfg.s == cfg.n == cfg.m) or node_class == "nonsubscriber":
        return None
    rates = cfg.rate_matrix()
    values = []
    for j in range(cfg.m):
        incoming = [r for r in rates[:, j] if r > 0]
        if cfg.scheme is Scheme.MEMORY:
            values.append(analytic.age_memory_full(cfg.k, len(incoming), incoming, cfg.lambda_s).value)
        else:
            values.append(analytic.age_memoryless_full(cfg.k, len(incoming), cfg.lambda_s, incoming).value)
    return float(np.mean(values))


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg, sim = _network_from_args(args)
    horizon = _horizon(args, sim)
    seed = args.seed if args.seed is not None else int(sim.get("seed", 0))
    reps = args.replications if args.replications is not None else int(sim.get("replications", 4))
    if reps < 1:
        raise UsageError("--replications must be >= 1")
    started = time.perf_counter()
    stats = run_replications(cfg, horizon, seed, reps)
    elapsed = time.perf_counter() - started
    homog = isinstance(cfg.edge_rates, Homogeneous)
    rows = []
    for node_class in node_classes(cfg.s, cfg.m):
        value = bounds = None
        if homog:
            ref = analytic_for(cfg.scheme.value, cfg.k, cfg.n, cfg.s, cfg.m, cfg.lambda_s, cfg.lambda_e, node_class)
            if isinstance(ref, BoundPair):
                bounds = ref
            else:
                value = ref.value
        else:
            value = _heterogeneous_reference(cfg, node_class)
        rows.append(
            ComparisonRow(
                cfg.scheme.value, cfg.k, cfg.n, cfg.s, cfg.m, cfg.lambda_s,
                cfg.lambda_e if homog else None, node_class,
                analytic_value=value, bounds=bounds,
                sim_mean=stats.classes[node_class].mean, sim_ci_half=stats.classes[node_class].ci_half,
                seed=seed, horizon_updates=horizon.updates,
            ).as_record()
        )
    config = {**cfg.to_dict(), "horizon": horizon.describe(), "replications": reps}
    env = ResultEnvelope("simulate", config, seed, rows=rows, columns=COMPARISON_COLUMNS,
                         timing={"seconds": round(elapsed, 3), "events": stats.events})
    _emit(env, args)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    spec = load_preset(args.preset) if args.preset else load_sweep(args.config)
    changes = {}
    if args.updates is not None:
        changes.update(updates=args.updates, time=None)
    if args.time is not None:
        changes.update(time=args.time, updates=None)
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.replications is not None:
        changes["replications"] = args.replications
    if args.no_simulate:
        changes["simulate"] = False
    spec = replace(spec, **changes)

    started = time.perf_counter()
    problems: list[str] = []
    if spec.kind == "comparison":
        def progress(done: int, total: int) -> None:
            print(f"[{done}/{total}] grid points", file=sys.stderr)

        rows = run_sweep(spec, progress=progress if spec.simulate else None)
        report = audit_bounds(rows)
        if report.entries:
            print(report.summary(), file=sys.stderr)
        for entry in report.hard_violations:
            r = entry.row
            problems.append(
                f"bound violated: {r.scheme} k={r.k} n={r.n} s={r.s} m={r.m} lambda_e={r.lambda_e:g} "
                f"sim={r.sim_mean:.6g} bounds=[{r.lower_bound:.6g}, {r.upper_bound:.6g}]"
            )
        if spec.simulate:
            problems.extend(check_orderings(rows))
            big = [r for r in rows if r.rel_error is not None and abs(r.rel_error) > REL_TOL]
            if big:
                print(f"{len(big)} rows exceed {REL_TOL:.0%} relative error", file=sys.stderr)
        records = [r.as_record() for r in rows]
        columns = COMPARISON_COLUMNS
        seeds = spec.seed
    else:
        records, problems = run_table(spec)
        columns = None
        seeds = None
    elapsed = time.perf_counter() - started
    env = ResultEnvelope("sweep", spec.to_dict(), seeds, rows=records, columns=columns,
                         timing={"seconds": round(elapsed, 3)})
    _emit(env, args)
    for line in problems:
        print(f"audit: {line}", file=sys.stderr)
    return EXIT_AUDIT if problems else EXIT_OK


def cmd_critical_rate(args: argparse.Namespace) -> int:
    cfg, _ = _network_from_args(args, need_edges=False)
    res = analytic.critical_gossip_rate(CriticalRateQuery(cfg.k, cfg.n, cfg.s, cfg.m, cfg.lambda_s, args.epsilon))
    if args.out is None and args.format is None:
        suffix = " (upper bound: memory age replaced by its upper bound)" if res.upper_bound_only else ""
        print(f"{res.value:.12g}{suffix}")
        return EXIT_OK
    config = {"k": cfg.k, "n": cfg.n, "s": cfg.s, "m": cfg.m, "lambda_s": cfg.lambda_s, "epsilon": args.epsilon}
    row = {**config, "critical_rate": res.value, "gap": res.gap, "upper_bound_only": res.upper_bound_only}
    _emit(ResultEnvelope("critical-rate", config, None, rows=[row]), args)
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    cfg, _ = load_config(args.config)
    kind = "homogeneous" if isinstance(cfg.edge_rates, Homogeneous) else "heterogeneous"
    print(f"valid: {cfg.network_type.value}, {cfg.scheme.value} scheme, {kind} edge rates")
    return EXIT_OK


def _trace_record(ev) -> dict:
    def decode_text(d) -> str:
        text = f"{d.node}:{d.version}:{d.key_count}"
        if d.early_stopped:
            text += ":early=" + "/".join(str(v) for v in d.early_stopped)
        return text

    return {
        "time": ev.time,
        "event": ev.kind,
        "version": ev.version,
        "sender": ev.sender if ev.kind == "gossip" else None,
        "receiver": ev.receiver if ev.kind == "gossip" else None,
        "keys_sent": ev.keys_sent if ev.kind == "gossip" else None,
        "ages_before": " ".join(map(str, ev.ages_before)),
        "ages_after": " ".join(map(str, ev.ages_after)),
        "decodes": ";".join(decode_text(d) for d in ev.decodes),
        "holders": " ".join(map(str, ev.holders)),
        "gamma": " ".join(map(str, ev.gamma)),
    }


def cmd_trace(args: argparse.Namespace) -> int:
    cfg, sim = _network_from_args(args)
    horizon = _horizon(args, {**sim, "updates": sim.get("updates", 100)})
    events = trace_events(cfg, horizon, args.seed)
    env = ResultEnvelope("trace", {**cfg.to_dict(), "horizon": horizon.describe()}, args.seed,
                         rows=[_trace_record(e) for e in events], columns=TRACE_COLUMNS)
    _emit(env, args)
    return EXIT_OK


COMMANDS = {
    "analytic": cmd_analytic,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "critical-rate": cmd_critical_rate,
    "validate": cmd_validate,
    "trace": cmd_trace,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, TraceTooLarge, NoBracket, NotMonotone) as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
