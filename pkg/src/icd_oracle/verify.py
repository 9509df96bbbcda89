"""Differential verification: oracle verdicts against a copy-apply-DFS replay.

Every run also drains maintenance at the end and checks the published
closure and reductions against structures rebuilt from scratch.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .closure import recompute_tc
from .generate import generate_random_dag, shaped_params
from .harness import (
    DETERMINISTIC,
    ScheduleError,
    ScenarioConfig,
    bruteforce_verdicts,
    dump_schedule,
    generate_mcr_stream,
    run_scenario,
)
from .model import CompositeModel, EdgeOpError, dump_composite
from .oracle import InvalidRequest, ModeChangeRequest, OracleConfig
from .reduction import make_partitioning


DEFAULT_SIZES = (20, 50, 100, 200, 400)
# request spacing in ticks; short gaps keep maintenance busy, long ones let it finish
GAP_CHOICES = (1, 2, 5, 20, 200)


@dataclass
class Mismatch:
    size: int
    seed: int
    index: int
    expected: str
    got: str
    detail: str = ""


@dataclass
class VerifyResult:
    requests: int = 0
    runs: int = 0
    mismatches: list[Mismatch] = field(default_factory=list)
    structure_failures: list[str] = field(default_factory=list)
    reproducer: Path | None = None

    @property
    def ok(self) -> bool:
        return not self.mismatches and not self.structure_failures


def check_structures(oracle) -> list[str]:
    """Drained closure equals a recompute; every reduction preserves reachability."""
    problems = []
    fresh = recompute_tc(oracle.graph, oracle.config.modulus)
    if not oracle.closure.equals(fresh):
        problems.append("closure differs from recompute")
    reach = fresh.reach_matrix()
    for rpg in oracle.reductions:
        v = rpg.vertices
        want = reach[np.ix_(v, v)].copy()
        np.fill_diagonal(want, False)
        got = _bool_closure(rpg.adjacency)
        if not np.array_equal(want, got):
            problems.append(f"reduction {rpg.index} is not reachability-equivalent")
    return problems


def _bool_closure(adj: np.ndarray) -> np.ndarray:
    # Warshall over a small boolean block
    r = adj.copy()
    for k in range(len(r)):
        r |= np.outer(r[:, k], r[k, :])
    return r


def _first_mismatch(model, schedule, oracle_cfg, cfg) -> tuple[int | None, list[str], list[str], object]:
    want = bruteforce_verdicts(model, schedule)
    try:
        rep = run_scenario(model, cfg, oracle_cfg, DETERMINISTIC, schedule=schedule, warmup=0)
    except InvalidRequest as exc:
        # the oracle's graph drifted from the reference far enough that a
        # request no longer applies; that is a mismatch at that request
        idx = next(i for i, r in enumerate(schedule) if r.mcr_id == exc.mcr_id)
        got = want[:idx] + [f"invalid: {exc}"]
        return idx, want, got, None
    got = rep.verdicts
    for i, (a, b) in enumerate(zip(want, got)):
        if a != b:
            return i, want, got, rep
    return None, want, got, rep


def _reproduces(model, schedule, oracle_cfg, cfg) -> bool:
    try:
        return _first_mismatch(model, schedule, oracle_cfg, cfg)[0] is not None
    except (EdgeOpError, ScheduleError):
        # dropping a request can make a later one inapplicable to the reference
        return False


def minimize(model: CompositeModel, schedule: list[ModeChangeRequest], oracle_cfg: OracleConfig,
             cfg: ScenarioConfig, max_greedy: int = 80) -> list[ModeChangeRequest]:
    """Cut the schedule after the first mismatch, then greedily drop earlier requests."""
    idx = _first_mismatch(model, schedule, oracle_cfg, cfg)[0]
    if idx is None:
        return schedule
    cur = list(schedule[: idx + 1])
    if len(cur) > max_greedy:
        return cur
    j = len(cur) - 2
    while j >= 0:
        trial = cur[:j] + cur[j + 1:]
        if _reproduces(model, trial, oracle_cfg, cfg):
            cur = trial
        j -= 1
    return cur


def write_reproducer(out_dir: Path, model: CompositeModel, schedule: Sequence[ModeChangeRequest],
                     meta: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "model.json").write_text(dump_composite(model), encoding="utf-8")
    (out_dir / "schedule.json").write_text(dump_schedule(model, schedule), encoding="utf-8")
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=1, default=str), encoding="utf-8")
    return out_dir


def verify_suite(sizes: Sequence[int] = DEFAULT_SIZES, seeds: Sequence[int] = (0,), trials: int = 10_000,
                 oracle_cfg: OracleConfig | None = None, per_run: int = 100,
                 reproducer_dir: Path | None = None,
                 progress: Callable[[str], None] | None = None) -> VerifyResult:
    """Run about `trials` requests split evenly over sizes and seeds.

    Runs alternate between cycle-free streams and unrestricted ones (which
    produce rejections) and draw their request spacing from GAP_CHOICES.
    """
    oracle_cfg = oracle_cfg or OracleConfig()
    result = VerifyResult()
    if trials <= 0 or not sizes or not seeds:
        return result
    cells = [(n, s) for n in sizes for s in seeds]
    per_cell = -(-trials // len(cells))
    for n, seed in cells:
        model = generate_random_dag(shaped_params(n, seed))
        partitioning = make_partitioning(model, oracle_cfg.partitioning)
        rng = np.random.default_rng([seed, n])
        done, run = 0, 0
        while done < per_cell:
            total = min(per_run, per_cell - done)
            cfg = ScenarioConfig(
                seed=int(rng.integers(2**31)), total=total, warmup=0,
                models_per_mcr=min(10, len(model.models)), edges_per_mcr=20 if n >= 100 else 6,
                cycle_free_only=bool(run % 2),
                p_mcr_s=0.001 * int(rng.choice(GAP_CHOICES)),
                steps_per_tick=int(rng.choice([10, 100, 1_000, 10_000])),
            )
            schedule = generate_mcr_stream(model, cfg, partitioning)
            idx, want, got, rep = _first_mismatch(model, schedule, oracle_cfg, cfg)
            result.requests += len(schedule)
            result.runs += 1
            if idx is not None:
                result.mismatches.append(Mismatch(n, seed, idx, want[idx], got[idx],
                                                  f"run {run}, period {cfg.p_mcr_s:g}s"))
                if reproducer_dir is not None and result.reproducer is None:
                    small = minimize(model, schedule, oracle_cfg, cfg)
                    result.reproducer = write_reproducer(reproducer_dir, model, small, {
                        "size": n, "seed": seed, "run": run,
                        "scenario": asdict(cfg), "oracle": asdict(oracle_cfg),
                        "requests": len(small),
                    })
                return result
            oracle = rep.oracle
            oracle.drain()
            for p in check_structures(oracle):
                result.structure_failures.append(f"|V_c|={n} seed={seed} run={run}: {p}")
            done += total
            run += 1
        if progress:
            progress(f"|V_c|={n} seed={seed}: {done} requests, 0 mismatches")
    return result
