"""Command-line front end.

Exit codes: 0 success, 1 domain failure (cycle where none is allowed, verdict
mismatch), 2 usage or configuration error.

Environment: ICD_ORACLE_OUT_DIR sets the directory for relative output
paths, ICD_ORACLE_SEED the default seed.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .closure import recompute_tc_counted
from .generate import GeneratorParams, InfeasibleError, generate_random_dag
from .harness import (
    CSV_SCHEMA_VERSION,
    DETERMINISTIC,
    WALLCLOCK,
    ScenarioConfig,
    ScheduleError,
    bruteforce_verdicts,
    dump_schedule,
    generate_mcr_stream,
    load_scenario,
    mix_grid,
    run_scenario,
    sweep_partitions,
    sweep_period,
    sweep_type_mix,
    write_metrics_csv,
)
from .model import InitialCycleError, ModelError, dump_composite, find_cycle, build_composite_graph, load_composite
from .oracle import InvalidRequest, OracleConfig
from .reduction import PartitionError, make_partitioning, nested_groupings, update_tr_counted
from .scenarios import workpiece_scenario
from .verify import DEFAULT_SIZES, verify_suite

OK, DOMAIN_FAILURE, USAGE = 0, 1, 2
ENV_OUT_DIR = "ICD_ORACLE_OUT_DIR"
ENV_SEED = "ICD_ORACLE_SEED"


class UsageError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get(ENV_SEED, "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{ENV_SEED}={raw!r} is not an integer") from None


def _resolve(p: str) -> Path:
    path = Path(p)
    if not path.is_absolute() and os.environ.get(ENV_OUT_DIR):
        path = Path(os.environ[ENV_OUT_DIR]) / path
    return path


def _out_path(p: str | None) -> Path | None:
    if p is None or p == "-":
        return None
    path = _resolve(p)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _read_text(p: str) -> str:
    try:
        return Path(p).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {p}: {exc.strerror}") from None


def _load_model(p: str):
    return load_composite(_read_text(p))


def _header(args, extra: dict | None = None) -> dict:
    h = {
        "tool": f"icd-oracle {__version__}",
        "csv_schema": CSV_SCHEMA_VERSION,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    h.update(extra or {})
    return h


def _mix(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"mix {text!r} must be three comma-separated numbers") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("mix needs exactly three shares a,b,c")
    total = sum(parts)
    if total <= 0 or min(parts) < 0:
        raise argparse.ArgumentTypeError("mix shares must be non-negative and not all zero")
    return tuple(x / total for x in parts)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma-separated list of numbers") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma-separated list of integers") from None


# ---------------------------------------------------------------------------
# shared flag groups
# ---------------------------------------------------------------------------


def _add_scenario_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("scenario")
    g.add_argument("--seed", type=int, default=None, help=f"stream seed (default ${ENV_SEED} or 0)")
    g.add_argument("--p-mcr", type=float, dest="p_mcr_s", help="request period in seconds")
    g.add_argument("--total", type=int, help="recorded requests per run")
    g.add_argument("--mix", type=_mix, help="type shares a,b,c")
    g.add_argument("--models-per-mcr", type=int)
    g.add_argument("--edges-per-mcr", type=int)
    g.add_argument("--allow-cycles", action="store_true",
                   help="draw insertions without regard to acyclicity (produces rejections)")
    g.add_argument("--insert-fraction", type=float)
    g.add_argument("--warmup", type=int)
    g.add_argument("--tick-period", type=float, dest="tick_period_s")
    g.add_argument("--steps-per-tick", type=int)
    g.add_argument("--mode", choices=[DETERMINISTIC, WALLCLOCK], default=DETERMINISTIC)


def _add_oracle_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("oracle")
    g.add_argument("--threshold", type=int, help="batch size above which maintenance recomputes")
    g.add_argument("--modulus", type=int, help="keep path counts modulo this prime")
    g.add_argument("--partitioning", default="per-model",
                   help='"per-model" or "fixed-count:k"')
    g.add_argument("--lenient-mixed", action="store_true",
                   help="classify single-partition requests with deletions as type b")


def _scenario_cfg(args, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Flags override `base` (a scenario file), which overrides defaults."""
    kw = {} if base is not None else {"seed": _default_seed()}
    base = base or ScenarioConfig()
    for f in fields(ScenarioConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            kw[f.name] = v
    if getattr(args, "allow_cycles", False):
        kw["cycle_free_only"] = False
    try:
        return replace(base, **kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _oracle_cfg(args) -> OracleConfig:
    try:
        return OracleConfig(
            threshold=args.threshold, modulus=args.modulus,
            partitioning=args.partitioning, exact_mixed=not args.lenient_mixed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _print_summary(rep) -> None:
    print(f"{rep.run_id}: requests={rep.total} accumulated_stall={rep.accumulated_stall} {rep.units} "
          f"fallback={rep.fallback_pct:.1f}% types={rep.type_counts}")


def _write_summary_csv(path: Path, rows: list[dict], header: dict) -> None:
    import csv

    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# icd-oracle summary schema v{CSV_SCHEMA_VERSION}\n")
        for k, v in header.items():
            fh.write(f"# {k}: {v}\n")
        if rows:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)


def _emit_csv(args, reports, header) -> None:
    path = _out_path(args.out)
    if path is None:
        write_metrics_csv(sys.stdout, reports, header)
        return
    append = getattr(args, "append", False) and path.exists()
    with path.open("a" if append else "w", encoding="utf-8", newline="") as fh:
        write_metrics_csv(fh, reports, header, write_header=not append)
    print(f"wrote {sum(r.total for r in reports)} rows to {path}", file=sys.stderr)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    params = GeneratorParams(args.ports, args.models, args.edges, seed, args.dep_density)
    try:
        model = generate_random_dag(params)
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DOMAIN_FAILURE
    text = dump_composite(model)
    path = _out_path(args.out)
    if path is None:
        sys.stdout.write(text + "\n")
    else:
        path.write_text(text, encoding="utf-8")
    g = build_composite_graph(model)
    print(f"|V_c|={g.n} |E_c|={g.num_edges} |M|={len(model.models)}", file=sys.stderr)
    if args.scenario_out:
        cfg = _scenario_cfg(args)
        if args.explicit_schedule:
            doc = dump_schedule(model, generate_mcr_stream(model, cfg))
        else:
            gen = {k: getattr(cfg, k) for k in
                   ("seed", "p_mcr_s", "total", "models_per_mcr", "edges_per_mcr", "cycle_free_only")}
            gen["mix"] = dict(zip("abc", cfg.mix))
            doc = json.dumps({"generator": gen}, indent=1)
        _out_path(args.scenario_out).write_text(doc, encoding="utf-8")
    return OK


def cmd_check(args) -> int:
    t0 = time.perf_counter()
    try:
        model = _load_model(args.model)
    except InitialCycleError as exc:
        print("cyclic")
        print("cycle: " + " -> ".join(exc.cycle))
        return DOMAIN_FAILURE
    t_load = time.perf_counter() - t0
    graph = build_composite_graph(model)
    cycle = find_cycle(graph)
    if cycle is not None:  # load already checks this; kept for models built elsewhere
        print("cyclic")
        print("cycle: " + " -> ".join(model.port_names[p] for p in cycle))
        return DOMAIN_FAILURE
    t0 = time.perf_counter()
    closure, tc_work = recompute_tc_counted(graph, args.modulus)
    t_tc = time.perf_counter() - t0
    try:
        part = make_partitioning(model, args.partitioning)
    except PartitionError as exc:
        raise UsageError(str(exc)) from None
    t0 = time.perf_counter()
    reductions, tr_work = update_tr_counted(closure, part)
    t_tr = time.perf_counter() - t0
    print("acyclic")
    print(f"|V_c|={graph.n} |E_c|={graph.num_edges} |M|={len(model.models)} partitions={part.k}")
    print(f"closure: {t_tc * 1e3:.2f} ms ({tc_work} work units)")
    print(f"reductions: {t_tr * 1e3:.2f} ms ({tr_work} work units)")
    print(f"load+offline checks: {t_load * 1e3:.2f} ms")
    for r in reductions:
        print(f"  partition {r.index}: |V|={len(r.vertices)} |E_tr|={int(r.adjacency.sum())}")
    return OK


def _resolve_run_inputs(args):
    model = _load_model(args.model)
    cfg = _scenario_cfg(args)
    schedule = None
    if args.scenario:
        try:
            base, schedule = load_scenario(_read_text(args.scenario), model, cfg)
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise UsageError(f"malformed scenario file: {exc}") from None
        # explicit flags override the file
        cfg = _scenario_cfg(args, base) if schedule is None else cfg
    return model, cfg, schedule


def cmd_run(args) -> int:
    model, cfg, schedule = _resolve_run_inputs(args)
    ocfg = _oracle_cfg(args)
    rep = run_scenario(model, cfg, ocfg, args.mode, schedule=schedule, run_id=args.run_id)
    header = _header(args, {"seed": cfg.seed, "scenario": asdict(cfg), "oracle": asdict(ocfg), "mode": args.mode,
                            "model": args.model, "scenario_file": args.scenario})
    _emit_csv(args, [rep], header)
    _print_summary(rep)
    if args.lag_budget is not None:
        windows = rep.lag_windows(args.lag_budget, args.sync_ticks)
        over = sum(w[2] for w in windows)
        print(f"lag budget {args.lag_budget} {rep.units} per {args.sync_ticks} ticks: "
              f"{over}/{len(windows)} windows over budget")
    return OK


def cmd_sweep(args) -> int:
    model, cfg, schedule = _resolve_run_inputs(args)
    if schedule is not None:
        raise UsageError("sweeps need a generator scenario, not an explicit schedule")
    ocfg = _oracle_cfg(args)
    saturation = None
    if args.kind == "period":
        if not args.periods:
            raise UsageError("--periods is required for a period sweep")
        sw = sweep_period(model, cfg, sorted(args.periods), ocfg, args.mode)
        reports, rows = sw.reports, sw.rows
        saturation = sw.saturation_point
    elif args.kind == "mix":
        sw = sweep_type_mix(model, cfg, args.resolution, ocfg, args.mode)
        reports, rows = sw.reports, sw.rows
        for row, mix in zip(rows, mix_grid(args.resolution)):
            row.update(mix_a=mix[0], mix_b=mix[1], mix_c=mix[2])
    else:
        try:
            groupings = nested_groupings(model, args.groupings)
            prow = sweep_partitions(model, cfg, groupings, ocfg, args.mode)
        except PartitionError as exc:
            raise UsageError(str(exc)) from None
        reports = [r.report for r in prow]
        rows = [{**r.report.summary(), "partitions": r.k, "type_b_pct": r.type_b_pct,
                 "type_ab_pct": r.type_ab_pct} for r in prow]
    header = _header(args, {"seed": cfg.seed, "sweep": args.kind, "scenario": asdict(cfg), "oracle": asdict(ocfg),
                            "mode": args.mode, "model": args.model})
    _emit_csv(args, reports, header)
    for row in rows:
        extra = "".join(f" {k}={row[k]}" for k in ("partitions", "type_b_pct") if k in row)
        print(f"{row['run_id']}: fallback={row['fallback_pct']:.1f}% "
              f"accumulated_stall={row['accumulated_stall']} {row['stall_units']}{extra}")
    if args.kind == "period":
        print(f"saturation point: {saturation if saturation is not None else 'none in sweep'}")
    out = _out_path(args.out)
    if out is not None:
        spath = out.with_name(out.stem + ".summary.csv")
        _write_summary_csv(spath, rows, header)
        print(f"wrote {len(rows)} summary rows to {spath}", file=sys.stderr)
    return OK


def cmd_verify(args) -> int:
    if args.trials == 0:
        print("warning: trials=0, nothing was checked (vacuous pass)", file=sys.stderr)
        return OK
    seeds = args.seeds if args.seeds else [args.seed if args.seed is not None else _default_seed()]
    ocfg = OracleConfig(modulus=args.modulus, fault_skip_revert=args.fault_skip_revert)
    repro_dir = _resolve(args.reproducer_dir)  # created only if a mismatch is found
    t0 = time.perf_counter()
    res = verify_suite(args.sizes, seeds, args.trials, ocfg, reproducer_dir=repro_dir,
                       progress=lambda s: print(s, file=sys.stderr))
    dt = time.perf_counter() - t0
    print(f"verified {res.requests} requests in {res.runs} runs over sizes {list(args.sizes)} "
          f"seeds {list(seeds)} ({dt:.1f} s)")
    for m in res.mismatches:
        print(f"MISMATCH |V_c|={m.size} seed={m.seed} request {m.index}: expected {m.expected}, "
              f"got {m.got} ({m.detail})")
    for f in res.structure_failures:
        print(f"STRUCTURE {f}")
    if res.reproducer is not None:
        print(f"reproducer written to {res.reproducer}")
    if res.ok:
        print("0 mismatches")
        return OK
    return DOMAIN_FAILURE


def cmd_demo_workpiece(args) -> int:
    model, schedule = workpiece_scenario()
    cfg = _scenario_cfg(args)
    ocfg = _oracle_cfg(args)
    rep = run_scenario(model, cfg, ocfg, args.mode, schedule=schedule, run_id="workpiece")
    expected = bruteforce_verdicts(model, schedule)
    g = build_composite_graph(model)
    print(f"workpiece line: |V_c|={g.n} |E_c|={g.num_edges} |M|={len(model.models)}")
    for r, want in zip(rep.records, expected):
        flag = "" if r.verdict == want else f"  MISMATCH (expected {want})"
        print(f"  {r.label:<34} {r.verdict:<7} {r.path_taken:<16} stall={r.stall} {r.stall_units}{flag}")
    _print_summary(rep)
    if args.lag_budget is not None:
        windows = rep.lag_windows(args.lag_budget, args.sync_ticks)
        print(f"lag budget exceeded in {sum(w[2] for w in windows)}/{len(windows)} windows")
    if args.out:
        header = _header(args, {"seed": cfg.seed, "scenario": "workpiece", "oracle": asdict(ocfg), "mode": args.mode})
        _emit_csv(args, [rep], header)
    ok = rep.verdicts == expected
    print("verdicts match brute-force replay" if ok else "verdicts DIFFER from brute-force replay")
    return OK if ok else DOMAIN_FAILURE


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="icd-oracle", description="Instantaneous-cycle oracle toolkit")
    p.add_argument("--version", action="version", version=f"icd-oracle {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a random benchmark-shaped model")
    g.add_argument("--ports", type=int, required=True)
    g.add_argument("--models", type=int, required=True)
    g.add_argument("--edges", type=int, required=True)
    g.add_argument("--dep-density", type=float, default=0.5)
    g.add_argument("--out", "-o", default=None, help="model file (default stdout)")
    g.add_argument("--scenario-out", help="also write a scenario file")
    g.add_argument("--explicit-schedule", action="store_true",
                   help="write the drawn schedule instead of generator parameters")
    _add_scenario_flags(g)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("check", help="offline analysis of a model file")
    c.add_argument("model")
    c.add_argument("--partitioning", default="per-model")
    c.add_argument("--modulus", type=int)
    c.set_defaults(func=cmd_check)

    for name, func, helptext in (("run", cmd_run, "run one scenario"),
                                 ("sweep", cmd_sweep, "sweep period, type mix or partitions")):
        r = sub.add_parser(name, help=helptext)
        r.add_argument("model")
        r.add_argument("--scenario", help="scenario JSON (generator or explicit schedule)")
        r.add_argument("--out", "-o", default=None, help="metrics CSV (default stdout)")
        r.add_argument("--append", action="store_true", help="append rows to an existing CSV")
        _add_scenario_flags(r)
        _add_oracle_flags(r)
        r.set_defaults(func=func)
        if name == "run":
            r.add_argument("--run-id", default="run")
            r.add_argument("--lag-budget", type=int, help="stall budget per synchronisation window")
            r.add_argument("--sync-ticks", type=int, default=100)
        else:
            r.add_argument("--kind", choices=["period", "mix", "partitions"], default="period")
            r.add_argument("--periods", type=_floats, help="comma-separated periods in seconds")
            r.add_argument("--resolution", type=int, default=3, help="simplex grid resolution")
            r.add_argument("--groupings", type=_ints, default=[10, 5, 2, 1],
                           help="non-increasing partition counts, e.g. 10,5,2,1; each level merges neighbouring groups")

    v = sub.add_parser("verify", help="differential test against brute force")
    v.add_argument("--sizes", type=_ints, default=list(DEFAULT_SIZES))
    v.add_argument("--seeds", type=_ints, default=None)
    v.add_argument("--seed", type=int, default=None)
    v.add_argument("--trials", type=int, default=10_000, help="total requests")
    v.add_argument("--modulus", type=int)
    v.add_argument("--fault-skip-revert", action="store_true",
                   help="inject a fault (no revert after a DFS rejection) to test the tester")
    v.add_argument("--reproducer-dir", default="verify-reproducer")
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("demo-workpiece", help="replay the workpiece sorting line")
    d.add_argument("--out", "-o", default=None, help="also write a metrics CSV")
    d.add_argument("--append", action="store_true")
    d.add_argument("--lag-budget", type=int)
    d.add_argument("--sync-ticks", type=int, default=100)
    _add_scenario_flags(d)
    _add_oracle_flags(d)
    d.set_defaults(func=cmd_demo_workpiece)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else OK
    try:
        return args.func(args)
    except (UsageError, ModelError, ScheduleError, InvalidRequest, PartitionError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
