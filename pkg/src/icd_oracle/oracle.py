"""The mode-change oracle.

Requests are answered from the cheapest structure that is currently fresh:
the closure for a single insertion, a partition reduction for a multi-edge
request confined to one partition, and a DFS over the live composite graph
otherwise. Accepted requests queue their edges for maintenance, which
rebuilds the closure and reductions in a cancellable job. Any request that
arrives while maintenance is pending or running is answered from the live
graph (the fallback path) and restarts maintenance with the merged batch.

Maintenance is driven either explicitly (`run_maintenance_step`, used by the
deterministic harness and the tests) or by a background thread
(`start_background`).
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Sequence

from .closure import PathCountClosure, recompute_steps, recompute_tc, would_close_cycle
from .model import (
    MODE,
    CompositeGraph,
    CompositeModel,
    EdgeOp,
    apply_edge_ops,
    build_composite_graph,
    dfs_cycle_search,
    revert_edge_ops,
)
from .reduction import (
    Partitioning,
    ReducedPartitionGraph,
    build_reduction,
    make_partitioning,
    tr_commit_or_discard,
    tr_cycle_search,
    tr_stage_insertions,
    update_tr,
)

TC_QUERY = "tc-query"
TR_DFS = "tr-dfs"
GC_DFS = "gc-dfs"
GC_FALLBACK = "gc-dfs-fallback"
NO_SEARCH = "no-search"
SAFE_MODE = "safe-mode"


class InvalidRequest(ValueError):
    """A malformed request. Distinct from a cycle rejection."""

    def __init__(self, message: str, mcr_id: int | None = None):
        super().__init__(message)
        self.mcr_id = mcr_id


class Status(str, Enum):
    IDLE = "idle"
    RUNNING = "running"
    PREEMPTED = "preempted-restart-pending"


@dataclass
class ModeChangeRequest:
    mcr_id: int
    ops: tuple[EdgeOp, ...]
    issue_tick: int = 0
    models: tuple[str, ...] = ()
    target_modes: dict[str, str] = field(default_factory=dict)


@dataclass
class McrDecision:
    mcr_id: int
    accepted: bool
    mcr_type: str
    path_taken: str
    stall_ns: int
    stall_work: int
    maintenance_was_active: bool

    @property
    def verdict(self) -> str:
        return "accept" if self.accepted else "reject"


@dataclass
class OracleConfig:
    threshold: int | None = None  # None: |V_c|
    modulus: int | None = None  # None: exact path counts
    partitioning: object = "per-model"
    exact_mixed: bool = True
    # testing the tester: skip the revert after a DFS rejection
    fault_skip_revert: bool = False

    def __post_init__(self):
        if self.threshold is not None and self.threshold < 1:
            raise ValueError("threshold c must be >= 1")


@dataclass
class MaintenanceState:
    status: Status
    pending: tuple[EdgeOp, ...]
    closure_stale: bool
    reductions_stale: bool


@dataclass
class MaintenanceRecord:
    kind: str  # "incremental" | "recompute" | "reductions-only"
    batch_size: int
    work: int


def classify_mcr(ops: Sequence[EdgeOp], partitioning: Partitioning, exact_mixed: bool = True) -> str:
    if len(ops) == 1:
        return "a"
    part_of = partitioning.part_of
    first = part_of[ops[0].u]
    if all(part_of[op.u] == first and part_of[op.v] == first for op in ops):
        if not exact_mixed or all(op.insert for op in ops):
            return "b"
    return "c"


def merge_requests(requests: Sequence[ModeChangeRequest], mcr_id: int | None = None) -> ModeChangeRequest:
    """Merge requests issued at one tick into one, in model-id order.

    An insert and a delete of the same edge cancel out.
    """
    ordered = sorted(requests, key=lambda r: (min(r.models) if r.models else "", r.mcr_id))
    ops: dict[tuple[int, int], EdgeOp] = {}
    models: list[str] = []
    targets: dict[str, str] = {}
    for r in ordered:
        for op in r.ops:
            if op.edge in ops and ops[op.edge].insert != op.insert:
                del ops[op.edge]
            else:
                ops[op.edge] = op
        models += [m for m in r.models if m not in models]
        targets.update(r.target_modes)
    return ModeChangeRequest(
        mcr_id if mcr_id is not None else ordered[0].mcr_id,
        tuple(ops.values()),
        issue_tick=ordered[0].issue_tick,
        models=tuple(models),
        target_modes=targets,
    )


@dataclass
class _WorkState:
    """Private closure plus the edge changes (relative to the published
    closure's graph) it already includes. Survives preemption."""

    closure: PathCountClosure
    delta: dict[tuple[int, int], bool]


class _Job:
    """One UpdateGraphs invocation. Publishes nothing until it completes.

    Edge sweeps finished before a preemption stay in the oracle's private
    work state, so a restarted job only processes what is still missing.
    """

    def __init__(self, oracle: "Oracle"):
        if oracle._work is None:
            oracle._work = _WorkState(oracle.closure.copy(), {})
        self.work_state = oracle._work
        pending = oracle._pending
        done = self.work_state.delta
        self.batch_size = len(pending)
        self.remaining = [op for e, op in pending.items() if e not in done] + [
            EdgeOp(not ins, *e) for e, ins in done.items() if e not in pending
        ]
        self.partitioning = oracle.partitioning
        self.modulus = oracle.config.modulus
        self.recompute = len(self.remaining) > oracle.threshold
        if self.recompute:
            self.graph = oracle.graph.copy()
            self.target_delta = {e: op.insert for e, op in pending.items()}
        self.closure: PathCountClosure | None = None
        self.reductions: list[ReducedPartitionGraph] | None = None
        self.work = 0

    @property
    def kind(self) -> str:
        if self.recompute:
            return "recompute"
        return "incremental" if self.remaining else "reductions-only"

    def steps(self) -> Iterator[int]:
        ws = self.work_state
        if self.recompute:
            closure = PathCountClosure(self.graph.n, self.modulus)
            for w in recompute_steps(self.graph, closure):
                self.work += w
                yield w
            ws.closure, ws.delta = closure, self.target_delta
        else:
            # deletions first: every intermediate graph is then a subgraph
            # of either the old or the new acyclic graph
            for op in sorted(self.remaining, key=lambda o: o.insert):
                w = ws.closure._update(op.u, op.v, 1 if op.insert else -1)
                if op.edge in ws.delta:
                    del ws.delta[op.edge]
                else:
                    ws.delta[op.edge] = op.insert
                self.work += w
                yield w
        reductions = []
        for i, verts in enumerate(self.partitioning.members):
            rpg, w = build_reduction(ws.closure, verts, i)
            reductions.append(rpg)
            self.work += w
            yield w
        self.closure = ws.closure
        self.reductions = reductions


class Oracle:
    def __init__(self, model: CompositeModel, config: OracleConfig | None = None,
                 partitioning: Partitioning | None = None):
        self.model = model
        self.config = config or OracleConfig()
        self.threshold = self.config.threshold or max(1, model.num_ports)
        # offline phase
        self.graph: CompositeGraph = build_composite_graph(model)
        self.closure: PathCountClosure = recompute_tc(self.graph, self.config.modulus)
        self.partitioning = partitioning or make_partitioning(model, self.config.partitioning)
        self.reductions: list[ReducedPartitionGraph] = update_tr(self.graph, self.closure, self.partitioning)
        self.active_modes = {m.id: m.initial_mode for m in model.models}

        self._pending: dict[tuple[int, int], EdgeOp] = {}
        self._status = Status.IDLE
        self._tr_dirty = False
        self._job: _Job | None = None
        self._work: _WorkState | None = None
        self._job_iter: Iterator[int] | None = None
        self._token = 0
        self._cond = threading.Condition(threading.RLock())
        self._worker: threading.Thread | None = None
        self._stop = False

        self.maintenance_log: list[MaintenanceRecord] = []
        self.preemptions = 0
        self.tr_rejections_ignoring_deletions = 0

    # -- state -------------------------------------------------------------

    def _stale(self) -> bool:
        return bool(self._pending) or self._status != Status.IDLE or self._tr_dirty

    @property
    def stale(self) -> bool:
        with self._cond:
            return self._stale()

    def maintenance_state(self) -> MaintenanceState:
        with self._cond:
            stale = self._stale()
            return MaintenanceState(self._status, tuple(self._pending.values()), stale, stale)

    def snapshot(self) -> tuple:
        """Identity of every structure a rejection must leave untouched."""
        with self._cond:
            return (
                self.graph.signature(),
                self.closure.signature(),
                tuple(r.signature() for r in self.reductions),
                tuple(self._pending.items()),
                self._tr_dirty,
                tuple(sorted(self.active_modes.items())),
            )

    # -- request handling --------------------------------------------------

    def validate(self, mcr: ModeChangeRequest) -> None:
        if not mcr.ops:
            raise InvalidRequest(f"MCR {mcr.mcr_id}: empty edge set", mcr.mcr_id)
        seen = set()
        for i, op in enumerate(mcr.ops):
            if op.edge in seen:
                raise InvalidRequest(f"MCR {mcr.mcr_id}: edge {op.edge} appears twice", mcr.mcr_id)
            seen.add(op.edge)
            if not self.model.is_dependency_pair(op.u, op.v):
                raise InvalidRequest(
                    f"MCR {mcr.mcr_id}: op {i} {op!r} is not an input->output dependency of one model",
                    mcr.mcr_id,
                )
            present = op.edge in self.graph
            if op.insert == present:
                raise InvalidRequest(
                    f"MCR {mcr.mcr_id}: op {i} {op!r} {'inserts a present' if present else 'deletes an absent'} edge",
                    mcr.mcr_id,
                )
        for mid, mode in mcr.target_modes.items():
            if mid not in self.active_modes:
                raise InvalidRequest(f"MCR {mcr.mcr_id}: unknown model {mid!r}", mcr.mcr_id)
            if mode not in self.model.models[self.model.model_index(mid)].modes:
                raise InvalidRequest(f"MCR {mcr.mcr_id}: model {mid!r} has no mode {mode!r}", mcr.mcr_id)

    def classify(self, mcr: ModeChangeRequest) -> str:
        return classify_mcr(mcr.ops, self.partitioning, self.config.exact_mixed)

    def service_mcr(self, mcr: ModeChangeRequest) -> McrDecision:
        with self._cond:
            self.validate(mcr)
            t0 = time.perf_counter_ns()
            was_active = self._stale()
            if self._status == Status.RUNNING:
                self._preempt()
            mtype = self.classify(mcr)
            ops = mcr.ops
            if was_active:
                path = GC_FALLBACK
                accepted, work = self._gc_check(ops, fallback=True)
            elif all(not op.insert for op in ops):
                path = NO_SEARCH
                apply_edge_ops(self.graph, ops)
                accepted, work = True, len(ops)
            elif mtype == "a":
                path = TC_QUERY
                op = ops[0]
                accepted = not would_close_cycle(self.closure, op.u, op.v)
                work = 1
                if accepted:
                    apply_edge_ops(self.graph, ops)
                    work += 1
            elif mtype == "b":
                path = TR_DFS
                accepted, work = self._tr_check(ops)
            else:
                path = GC_DFS
                accepted, work = self._gc_check(ops, fallback=False)
            if accepted:
                self._merge_pending(ops)
                self.active_modes.update(mcr.target_modes)
            self._settle()
            stall = time.perf_counter_ns() - t0
        return McrDecision(mcr.mcr_id, accepted, mtype, path, stall, work, was_active)

    def _gc_check(self, ops: Sequence[EdgeOp], fallback: bool) -> tuple[bool, int]:
        apply_edge_ops(self.graph, ops)
        cycle, work = dfs_cycle_search(self.graph.succ, self.graph.n)
        work += len(ops)
        if cycle is not None:
            if not self.config.fault_skip_revert:
                revert_edge_ops(self.graph, ops)
                work += len(ops)
            return False, work
        return True, work

    def _tr_check(self, ops: Sequence[EdgeOp]) -> tuple[bool, int]:
        inserts = [op for op in ops if op.insert]
        rpg = self.reductions[int(self.partitioning.part_of[ops[0].u])]
        tr_stage_insertions(rpg, inserts)
        has_cycle, work = tr_cycle_search(rpg)
        work += len(inserts)
        tr_commit_or_discard(rpg, commit=not has_cycle)
        if has_cycle:
            if len(inserts) != len(ops):
                self.tr_rejections_ignoring_deletions += 1
            return False, work
        self._tr_dirty = True
        apply_edge_ops(self.graph, ops)
        return True, work + len(ops)

    def _merge_pending(self, ops: Iterable[EdgeOp]) -> None:
        for op in ops:
            prev = self._pending.pop(op.edge, None)
            if prev is None:
                self._pending[op.edge] = op
            # an opposite op cancels the queued one

    def _settle(self) -> None:
        # a cancelled job whose batch fully cancelled out leaves nothing to redo
        if self._status == Status.PREEMPTED and not self._pending and not self._tr_dirty:
            self._status = Status.IDLE
        self._cond.notify_all()

    def _preempt(self) -> None:
        self._token += 1
        self._job = None
        self._job_iter = None
        self.preemptions += 1
        self._status = Status.PREEMPTED

    def preempt_maintenance(self, incoming: ModeChangeRequest) -> McrDecision:
        """Cancel running maintenance and answer `incoming` from the live graph."""
        with self._cond:
            if self._status == Status.RUNNING:
                self._preempt()
            return self.service_mcr(incoming)

    def safe_mode_fallback(self, model_id: str) -> McrDecision:
        """Switch a model to its declared safe mode without an online search.

        The safe mode was checked offline against the initial composite.
        """
        with self._cond:
            t0 = time.perf_counter_ns()
            m = self.model.models[self.model.model_index(model_id)]
            if m.safe_mode is None:
                raise InvalidRequest(f"model {model_id!r} declares no safe mode")
            current = {
                (u, v) for u in m.inputs for v in self.graph.succ[u]
                if self.graph.kind[(u, v)] == MODE
            }
            target = m.modes[m.safe_mode]
            ops = tuple([EdgeOp(False, u, v) for u, v in sorted(current - target)]
                        + [EdgeOp(True, u, v) for u, v in sorted(target - current)])
            was_active = self._stale()
            if ops:
                if self._status == Status.RUNNING:
                    self._preempt()
                apply_edge_ops(self.graph, ops)
                self._merge_pending(ops)
            self.active_modes[model_id] = m.safe_mode
            self._settle()
            mtype = classify_mcr(ops, self.partitioning, self.config.exact_mixed) if ops else "a"
            stall = time.perf_counter_ns() - t0
        return McrDecision(-1, True, mtype, SAFE_MODE, stall, len(ops), was_active)

    # -- maintenance -------------------------------------------------------

    def _start_job(self) -> _Job:
        job = _Job(self)
        self._job = job
        self._status = Status.RUNNING
        return job

    def _finish_job(self, job: _Job) -> None:
        self.closure = job.closure
        self.reductions = job.reductions
        self._pending.clear()
        self._tr_dirty = False
        self._status = Status.IDLE
        self._job = None
        self._job_iter = None
        self._work = None
        self.maintenance_log.append(MaintenanceRecord(job.kind, job.batch_size, job.work))
        self._cond.notify_all()

    def run_maintenance_step(self, budget: int | None = None) -> MaintenanceState:
        """Advance maintenance by about `budget` work units (None: to completion).

        The job yields after each edge sweep, each recomputed row and each
        partition, so a partial step stops at the first checkpoint past the
        budget.
        """
        with self._cond:
            if self._worker is not None:
                raise RuntimeError("maintenance is owned by the background worker")
            if self._job is None:
                if not self._stale():
                    return self.maintenance_state()
                job = self._start_job()
                self._job_iter = job.steps()
            spent = 0
            while budget is None or spent < budget:
                try:
                    spent += next(self._job_iter)
                except StopIteration:
                    self._finish_job(self._job)
                    break
            return self.maintenance_state()

    def drain(self) -> MaintenanceState:
        if self._worker is not None:
            self.wait_idle()
            return self.maintenance_state()
        return self.run_maintenance_step(None)

    # background (wallclock) mode

    def start_background(self) -> None:
        if self._worker is not None:
            return
        self._stop = False
        self._worker = threading.Thread(target=self._worker_loop, name="icd-maintenance", daemon=True)
        self._worker.start()

    def stop_background(self) -> None:
        if self._worker is None:
            return
        with self._cond:
            self._stop = True
            self._token += 1
            self._cond.notify_all()
        self._worker.join()
        self._worker = None
        with self._cond:
            if self._job is not None:
                self._job = None
                self._status = Status.PREEMPTED if self._stale() else Status.IDLE

    def wait_idle(self, timeout: float | None = None) -> bool:
        with self._cond:
            return self._cond.wait_for(lambda: not self._stale(), timeout)

    def _worker_loop(self) -> None:
        while True:
            with self._cond:
                self._cond.wait_for(lambda: self._stop or (self._stale() and self._job is None))
                if self._stop:
                    return
                job = self._start_job()
                token = self._token
            completed = True
            for _ in job.steps():
                if self._token != token:
                    completed = False
                    break
            with self._cond:
                if completed and self._token == token:
                    self._finish_job(job)
