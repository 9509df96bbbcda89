"""Tick-driven simulation harness around the oracle.

A run replays a schedule of mode-change requests against a fresh oracle.
Requests are issued at tick boundaries; between two requests, maintenance
gets the intervening time. Two clocks are supported:

* ``deterministic``: maintenance advances by ``steps_per_tick`` work units
  per elapsed tick and stalls are counted in work units. Identical seeds
  give identical reports.
* ``wallclock``: maintenance runs on a background thread, the gap between
  requests is real time (``tick_period_s`` per tick) and stalls are
  nanoseconds.
"""

from __future__ import annotations

import csv
import json
import heapq
import io
import sys
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .generate import BENCHMARK_ROWS
from .model import (
    CompositeGraph,
    CompositeModel,
    EdgeOp,
    apply_edge_ops,
    build_composite_graph,
    dfs_has_cycle,
    revert_edge_ops,
)
from .oracle import (
    GC_FALLBACK,
    ModeChangeRequest,
    Oracle,
    OracleConfig,
    merge_requests,
)
from .reduction import Partitioning, make_partitioning
from .scenarios import SafeModeFallback, ScheduledRequest

CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = [
    "run_id", "period_s", "mcr_id", "issue_tick", "type", "path_taken",
    "verdict", "stall", "stall_units", "maintenance_active",
]
DETERMINISTIC = "deterministic"
WALLCLOCK = "wallclock"


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class TickClock:
    n: int = 0
    r: float = 0.0

    def advance(self, ticks: int, tick_period_s: float) -> "TickClock":
        if ticks < 0:
            raise ValueError("ticks only move forward")
        return TickClock(self.n + ticks, self.r + ticks * tick_period_s)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    p_mcr_s: float = 0.01
    total: int = 100
    mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    models_per_mcr: int = 10
    edges_per_mcr: int = 20
    cycle_free_only: bool = True
    insert_fraction: float = 0.5
    warmup: int = 1
    tick_period_s: float = 0.001
    steps_per_tick: int = 10_000

    def __post_init__(self):
        if len(self.mix) != 3 or min(self.mix) < 0 or abs(sum(self.mix) - 1) > 1e-9:
            raise ValueError(f"type mix {self.mix} must be three non-negative shares summing to 1")
        if self.edges_per_mcr < 1:
            raise ValueError("edges_per_mcr must be >= 1")
        if self.total < 0 or self.warmup < 0:
            raise ValueError("request counts must be non-negative")

    @classmethod
    def benchmark(cls, size: int, **overrides) -> "ScenarioConfig":
        _, _, _, m_mcr, e_mcr = BENCHMARK_ROWS[size]
        return cls(models_per_mcr=m_mcr, edges_per_mcr=e_mcr, **overrides)

    @property
    def interval_ticks(self) -> int:
        return max(1, round(self.p_mcr_s / self.tick_period_s))


@dataclass
class StallRecord:
    run_id: str
    period_s: float
    mcr_id: int
    issue_tick: int
    type: str
    path_taken: str
    verdict: str
    stall: int
    stall_units: str
    maintenance_active: bool
    label: str = ""


@dataclass
class MetricsReport:
    run_id: str
    period_s: float
    units: str
    records: list[StallRecord] = field(default_factory=list)
    maintenance: dict = field(default_factory=dict)
    oracle: Oracle | None = field(default=None, repr=False, compare=False)

    @property
    def total(self) -> int:
        return len(self.records)

    @property
    def stalls(self) -> np.ndarray:
        return np.array([r.stall for r in self.records], dtype=np.int64)

    @property
    def accumulated_stall(self) -> int:
        return int(sum(r.stall for r in self.records))

    @property
    def fallback_pct(self) -> float:
        if not self.records:
            return 0.0
        return 100.0 * sum(r.path_taken == GC_FALLBACK for r in self.records) / self.total

    @property
    def type_counts(self) -> dict[str, int]:
        counts = {"a": 0, "b": 0, "c": 0}
        for r in self.records:
            counts[r.type] = counts.get(r.type, 0) + 1
        return counts

    @property
    def saturated(self) -> bool:
        return self.total > 0 and self.fallback_pct == 100.0

    @property
    def verdicts(self) -> list[str]:
        return [r.verdict for r in self.records]

    def lag_windows(self, budget: int, sync_every_ticks: int) -> list[tuple[int, int, bool]]:
        """Stall accumulated between sensor synchronisation points.

        Returns (window start tick, stall in window, over budget) for every
        window that saw a request. Stands in for a missed-ejection check.
        """
        if sync_every_ticks < 1:
            raise ValueError("sync interval must be at least one tick")
        windows: dict[int, int] = {}
        for r in self.records:
            start = r.issue_tick - r.issue_tick % sync_every_ticks
            windows[start] = windows.get(start, 0) + r.stall
        return [(t, s, s > budget) for t, s in sorted(windows.items())]

    def lag_budget_exceeded(self, budget: int, sync_every_ticks: int) -> bool:
        return any(over for _, _, over in self.lag_windows(budget, sync_every_ticks))

    def summary(self) -> dict:
        s = self.stalls
        q = np.percentile(s, [0, 25, 50, 75, 100]) if len(s) else [0] * 5
        return {
            "run_id": self.run_id,
            "period_s": self.period_s,
            "total": self.total,
            "fallback_pct": round(self.fallback_pct, 6),
            "accumulated_stall": self.accumulated_stall,
            "stall_units": self.units,
            "min": float(q[0]), "q1": float(q[1]), "median": float(q[2]),
            "q3": float(q[3]), "max": float(q[4]),
            **{f"type_{k}": v for k, v in self.type_counts.items()},
        }


# ---------------------------------------------------------------------------
# Stream generation
# ---------------------------------------------------------------------------


def _type_sequence(mix: Sequence[float], total: int, rng: np.random.Generator) -> list[str]:
    # largest-remainder apportionment, then a seeded shuffle
    raw = np.asarray(mix) * total
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: total - counts.sum()]:
        counts[i] += 1
    types = [t for t, c in zip("abc", counts) for _ in range(c)]
    rng.shuffle(types)
    return types


class _StreamState:
    def __init__(self, model: CompositeModel, graph: CompositeGraph, cfg: ScenarioConfig,
                 op_rng: np.random.Generator, order_rng: np.random.Generator):
        self.model = model
        self.graph = graph
        self.cfg = cfg
        self.rng = op_rng
        self.pos = self._random_topo_pos(order_rng)

    def _random_topo_pos(self, rng: np.random.Generator) -> np.ndarray:
        # Kahn's algorithm with seeded tie-breaking
        g = self.graph
        prio = rng.permutation(g.n)
        indeg = [len(p) for p in g.pred]
        ready = [(prio[v], v) for v in range(g.n) if indeg[v] == 0]
        heapq.heapify(ready)
        pos = np.empty(g.n, dtype=np.int64)
        i = 0
        while ready:
            _, u = heapq.heappop(ready)
            pos[u] = i
            i += 1
            for w in g.succ[u]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    heapq.heappush(ready, (prio[w], w))
        if i != g.n:
            raise ScheduleError("reference graph is cyclic")
        return pos

    def candidates(self, mi: int) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
        m = self.model.models[mi]
        ins, dels = [], []
        for u in m.inputs:
            su = self.graph.succ[u]
            for v in m.outputs:
                if v in su:
                    dels.append((u, v))
                elif not self.cfg.cycle_free_only or self.pos[u] < self.pos[v]:
                    ins.append((u, v))
        return ins, dels

    def draw_ops(self, model_idx: Sequence[int], n_ops: int, at_least_one_each: bool) -> list[EdgeOp]:
        pools = {}
        for mi in model_idx:
            ins, dels = self.candidates(mi)
            pools[mi] = (ins, dels)
        ops: list[EdgeOp] = []
        order = list(model_idx)
        slots = order[:] if at_least_one_each else []
        while len(slots) < n_ops:
            slots.append(order[int(self.rng.integers(len(order)))])
        for mi in slots:
            ins, dels = pools[mi]
            want_insert = self.rng.random() < self.cfg.insert_fraction
            pool = ins if (want_insert and ins) or not dels else dels
            if not pool:
                continue
            j = int(self.rng.integers(len(pool)))
            e = pool.pop(j)
            ops.append(EdgeOp(pool is ins, *e))
        return ops


def generate_mcr_stream(model: CompositeModel, cfg: ScenarioConfig,
                        partitioning: Partitioning | None = None,
                        graph: CompositeGraph | None = None) -> list[ModeChangeRequest]:
    """A schedule of `cfg.warmup + cfg.total` requests spaced `cfg.p_mcr_s` apart."""
    partitioning = partitioning or make_partitioning(model, "per-model")
    graph = graph.copy() if graph is not None else build_composite_graph(model)
    ss = np.random.SeedSequence(cfg.seed)
    type_rng, op_rng, order_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    state = _StreamState(model, graph, cfg, op_rng, order_rng)

    n_models = len(model.models)
    owner = np.asarray(model.port_owner)
    models_in_part = [sorted({int(owner[v]) for v in verts}) for verts in partitioning.members]
    part_of_model = np.empty(n_models, dtype=np.int64)
    for pi, ms in enumerate(models_in_part):
        for mi in ms:
            part_of_model[mi] = pi
    editable = [mi for mi, m in enumerate(model.models) if m.inputs and m.outputs]

    types = [str(t) for t in type_rng.choice(list("abc"), size=cfg.warmup, p=cfg.mix)] if cfg.warmup else []
    types += _type_sequence(cfg.mix, cfg.total, type_rng)
    if "c" in types and partitioning.k < 2:
        raise ScheduleError("type-c requests need at least two partitions")

    out = []
    interval = cfg.interval_ticks
    for idx, t in enumerate(types):
        if t == "a":
            chosen = [editable[int(op_rng.integers(len(editable)))]]
            ops = state.draw_ops(chosen, 1, False)
        elif t == "b":
            parts = [pi for pi, ms in enumerate(models_in_part) if any(mi in editable for mi in ms)]
            pi = parts[int(op_rng.integers(len(parts)))]
            pool = [mi for mi in models_in_part[pi] if mi in editable]
            k = min(len(pool), cfg.models_per_mcr)
            chosen = sorted(op_rng.choice(pool, size=k, replace=False).tolist())
            ops = state.draw_ops(chosen, max(2, cfg.edges_per_mcr), False)
        else:
            k_max = min(cfg.models_per_mcr, len(editable))
            if k_max < 2:
                raise ScheduleError("type-c requests need at least two editable models")
            k = int(op_rng.integers(2, k_max + 1))
            while True:
                chosen = sorted(op_rng.choice(editable, size=k, replace=False).tolist())
                if len({int(part_of_model[mi]) for mi in chosen}) >= 2:
                    break
            ops = state.draw_ops(chosen, max(k, cfg.edges_per_mcr), True)
        if not ops:
            raise ScheduleError(f"request {idx}: no editable dependency left for type {t}")
        req = ModeChangeRequest(
            idx, tuple(ops), issue_tick=idx * interval,
            models=tuple(model.models[mi].id for mi in chosen),
        )
        apply_edge_ops(graph, req.ops)
        if dfs_has_cycle(graph):
            revert_edge_ops(graph, req.ops)
        out.append(req)
    return out


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


def _normalise(schedule: Sequence) -> list:
    """Wrap bare requests and merge requests issued at the same tick."""
    items = [s if isinstance(s, (ScheduledRequest, SafeModeFallback)) else ScheduledRequest(s) for s in schedule]
    out: list = []
    for it in items:
        prev = out[-1] if out else None
        if (
            isinstance(it, ScheduledRequest) and isinstance(prev, ScheduledRequest)
            and prev.request.issue_tick == it.request.issue_tick
        ):
            merged = merge_requests([prev.request, it.request])
            out[-1] = ScheduledRequest(merged, "+".join(filter(None, [prev.label, it.label])))
        else:
            out.append(it)
    ticks = [it.request.issue_tick if isinstance(it, ScheduledRequest) else it.issue_tick for it in out]
    if any(b < a for a, b in zip(ticks, ticks[1:])):
        raise ScheduleError("schedule ticks must be non-decreasing")
    return out


def run_scenario(model: CompositeModel, cfg: ScenarioConfig, oracle_cfg: OracleConfig | None = None,
                 mode: str = DETERMINISTIC, schedule: Sequence | None = None,
                 partitioning: Partitioning | None = None, run_id: str = "run",
                 warmup: int | None = None) -> MetricsReport:
    """Replay (or generate) a schedule against a fresh oracle and collect stalls.

    The first `warmup` requests (default: `cfg.warmup` for generated
    schedules, 0 for given ones) are serviced but not recorded: the very
    first request always meets freshly built structures.
    """
    if mode not in (DETERMINISTIC, WALLCLOCK):
        raise ValueError(f"unknown mode {mode!r}")
    oracle_cfg = oracle_cfg or OracleConfig()
    oracle = Oracle(model, oracle_cfg, partitioning)
    if schedule is None:
        schedule = generate_mcr_stream(model, cfg, oracle.partitioning)
        warmup = cfg.warmup if warmup is None else warmup
    warmup = warmup or 0
    items = _normalise(schedule)
    units = "work" if mode == DETERMINISTIC else "ns"
    report = MetricsReport(run_id, cfg.p_mcr_s, units)

    old_switch = sys.getswitchinterval()
    if mode == WALLCLOCK:
        sys.setswitchinterval(1e-4)
        oracle.start_background()
    try:
        clock = TickClock()
        for idx, it in enumerate(items):
            tick = it.request.issue_tick if isinstance(it, ScheduledRequest) else it.issue_tick
            gap = max(0, tick - clock.n)
            clock = clock.advance(gap, cfg.tick_period_s)
            if mode == DETERMINISTIC:
                if gap and oracle.stale:
                    oracle.run_maintenance_step(gap * cfg.steps_per_tick)
            elif gap:
                # nothing changes once maintenance is idle, so stop waiting then
                oracle.wait_idle(gap * cfg.tick_period_s)
            if isinstance(it, SafeModeFallback):
                d = oracle.safe_mode_fallback(it.model_id)
            else:
                _check_ports(model, it.request)
                d = oracle.service_mcr(it.request)
            if idx < warmup:
                continue
            report.records.append(StallRecord(
                run_id, cfg.p_mcr_s, d.mcr_id if d.mcr_id >= 0 else idx, tick, d.mcr_type,
                d.path_taken, d.verdict, d.stall_work if mode == DETERMINISTIC else d.stall_ns,
                units, d.maintenance_was_active, getattr(it, "label", ""),
            ))
    finally:
        if mode == WALLCLOCK:
            oracle.stop_background()
            sys.setswitchinterval(old_switch)
    kinds = [r.kind for r in oracle.maintenance_log]
    report.maintenance = {
        "runs": len(kinds),
        "recomputes": kinds.count("recompute"),
        "preemptions": oracle.preemptions,
    }
    report.oracle = oracle
    return report


def _check_ports(model: CompositeModel, req: ModeChangeRequest) -> None:
    n = model.num_ports
    for op in req.ops:
        if not (0 <= op.u < n and 0 <= op.v < n):
            raise ScheduleError(f"request {req.mcr_id} references unknown port in {op!r}")
    for mid in req.models:
        try:
            model.model_index(mid)
        except KeyError:
            raise ScheduleError(f"request {req.mcr_id} references unknown model {mid!r}") from None


def bruteforce_verdicts(model: CompositeModel, schedule: Sequence) -> list[str]:
    """Copy-apply-DFS replay of a schedule; the reference for every verdict."""
    graph = build_composite_graph(model)
    out = []
    for it in _normalise(schedule):
        if isinstance(it, SafeModeFallback):
            m = model.models[model.model_index(it.model_id)]
            current = {(u, v) for u in m.inputs for v in graph.succ[u]}
            target = m.modes[m.safe_mode]
            ops = [EdgeOp(False, u, v) for u, v in sorted(current - target)]
            ops += [EdgeOp(True, u, v) for u, v in sorted(target - current)]
            apply_edge_ops(graph, ops)
            out.append("accept")
            continue
        ops = it.request.ops
        apply_edge_ops(graph, ops)
        if dfs_has_cycle(graph):
            revert_edge_ops(graph, ops)
            out.append("reject")
        else:
            out.append("accept")
    return out


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepReport:
    reports: list[MetricsReport]

    @property
    def rows(self) -> list[dict]:
        return [r.summary() for r in self.reports]

    @property
    def saturation_point(self) -> float | None:
        saturated = [r.period_s for r in self.reports if r.saturated]
        return max(saturated) if saturated else None


def sweep_period(model: CompositeModel, cfg: ScenarioConfig, periods: Sequence[float],
                 oracle_cfg: OracleConfig | None = None, mode: str = DETERMINISTIC,
                 run_prefix: str = "period") -> SweepReport:
    if list(periods) != sorted(periods):
        raise ValueError("periods must be sorted ascending")
    partitioning = make_partitioning(model, (oracle_cfg or OracleConfig()).partitioning)
    reports = []
    for p in periods:
        c = replace(cfg, p_mcr_s=p)
        reports.append(run_scenario(model, c, oracle_cfg, mode, partitioning=partitioning,
                                    run_id=f"{run_prefix}-{p:g}"))
    return SweepReport(reports)


def mix_grid(resolution: int) -> list[tuple[float, float, float]]:
    """Points of the (a, b, c) simplex; resolution 1 is the single even mix."""
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    if resolution == 1:
        return [(1 / 3, 1 / 3, 1 / 3)]
    steps = resolution - 1
    pts = []
    for i in range(steps + 1):
        for j in range(steps + 1 - i):
            k = steps - i - j
            pts.append((i / steps, j / steps, k / steps))
    return pts


def sweep_type_mix(model: CompositeModel, cfg: ScenarioConfig, resolution: int,
                   oracle_cfg: OracleConfig | None = None, mode: str = DETERMINISTIC) -> SweepReport:
    reports = []
    for mix in mix_grid(resolution):
        c = replace(cfg, mix=mix)
        tag = "/".join(f"{x:.3g}" for x in mix)
        reports.append(run_scenario(model, c, oracle_cfg, mode, run_id=f"mix-{tag}"))
    return SweepReport(reports)


@dataclass
class PartitionRow:
    k: int
    type_b_pct: float
    type_ab_pct: float
    fallback_pct: float
    accumulated_stall: int
    report: MetricsReport


def sweep_partitions(model: CompositeModel, cfg: ScenarioConfig, groupings: Sequence,
                     oracle_cfg: OracleConfig | None = None,
                     mode: str = DETERMINISTIC) -> list[PartitionRow]:
    """Replay one request stream under several partitionings.

    The stream is drawn once against the per-model partitioning, so only the
    classification changes between groupings.
    """
    oracle_cfg = oracle_cfg or OracleConfig()
    stream = generate_mcr_stream(model, cfg, make_partitioning(model, "per-model"))
    rows = []
    for grouping in groupings:
        part = make_partitioning(model, grouping)
        rep = run_scenario(model, cfg, oracle_cfg, mode, schedule=stream, partitioning=part,
                           run_id=f"partitions-{part.k}", warmup=cfg.warmup)
        tc = rep.type_counts
        total = max(1, rep.total)
        rows.append(PartitionRow(part.k, 100.0 * tc["b"] / total, 100.0 * (tc["a"] + tc["b"]) / total,
                                 rep.fallback_pct, rep.accumulated_stall, rep))
    return rows


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    from scipy.stats import spearmanr

    return float(spearmanr(x, y).statistic)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def write_metrics_csv(fh, reports: Sequence[MetricsReport], header: dict | None = None,
                      write_header: bool = True) -> None:
    """Per-request rows. Lines starting with '#' carry the reproducibility header."""
    if write_header:
        fh.write(f"# icd-oracle metrics schema v{CSV_SCHEMA_VERSION}\n")
        for k, v in (header or {}).items():
            fh.write(f"# {k}: {v}\n")
    w = csv.writer(fh, lineterminator="\n")
    if write_header:
        w.writerow(CSV_COLUMNS)
    for rep in reports:
        for r in rep.records:
            d = asdict(r)
            d["maintenance_active"] = int(r.maintenance_active)
            w.writerow([d[c] for c in CSV_COLUMNS])


def metrics_csv_text(reports: Sequence[MetricsReport], header: dict | None = None) -> str:
    buf = io.StringIO()
    write_metrics_csv(buf, reports, header)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Scenario files
# ---------------------------------------------------------------------------

_GENERATOR_KEYS = {"seed", "p_mcr_s", "total", "mix", "models_per_mcr", "edges_per_mcr", "cycle_free_only"}


def load_scenario(text_or_doc, model: CompositeModel, base: ScenarioConfig | None = None):
    """Parse a scenario file.

    Returns (config, schedule). `schedule` is None for generator scenarios;
    for explicit ones it is a list of requests with ports resolved by name.
    """

    doc = json.loads(text_or_doc) if isinstance(text_or_doc, str) else text_or_doc
    base = base or ScenarioConfig()
    if not isinstance(doc, dict) or len({"generator", "schedule"} & doc.keys()) != 1:
        raise ScheduleError('scenario must have exactly one of "generator" or "schedule"')
    if "generator" in doc:
        gen = doc["generator"]
        unknown = set(gen) - _GENERATOR_KEYS
        if unknown:
            raise ScheduleError(f"unknown generator fields {sorted(unknown)}")
        kw = dict(gen)
        if "mix" in kw:
            mix = kw["mix"]
            kw["mix"] = tuple(float(mix.get(t, 0.0)) for t in "abc") if isinstance(mix, dict) else tuple(mix)
        try:
            return replace(base, **kw), None
        except ValueError as exc:
            raise ScheduleError(str(exc)) from None

    schedule = []
    for i, entry in enumerate(doc["schedule"]):
        ops = []
        for raw in entry.get("ops", []):
            if len(raw) != 3 or raw[0] not in ("ins", "del"):
                raise ScheduleError(f"schedule entry {i}: malformed op {raw!r}")
            try:
                u, v = model.port(raw[1]), model.port(raw[2])
            except KeyError as exc:
                raise ScheduleError(f"schedule entry {i}: unknown port {exc.args[0]!r}") from None
            ops.append(EdgeOp(raw[0] == "ins", u, v))
        models = tuple(entry.get("models", ()))
        for mid in models:
            try:
                model.model_index(mid)
            except KeyError:
                raise ScheduleError(f"schedule entry {i}: unknown model {mid!r}") from None
        schedule.append(ModeChangeRequest(i, tuple(ops), int(entry["tick"]), models))
    return base, schedule


def dump_schedule(model: CompositeModel, schedule: Sequence[ModeChangeRequest]) -> str:

    names = model.port_names
    rows = [{
        "tick": r.issue_tick,
        "models": list(r.models),
        "ops": [["ins" if op.insert else "del", names[op.u], names[op.v]] for op in r.ops],
    } for r in schedule]
    return json.dumps({"schedule": rows}, indent=1)
