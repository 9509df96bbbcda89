"""Vertex partitions and the per-partition transitive reductions.

Each reduction keeps, for its partition, the minimal edge set whose
reachability equals the closure's reachability restricted to the partition.
It is rebuilt from the closure (reach minus reach . reach) and, between
rebuilds, can stage insertions in an overlay for a quick cycle check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .closure import PathCountClosure
from .model import CompositeGraph, CompositeModel, EdgeOp, dfs_cycle_search


class PartitionError(ValueError):
    pass


@dataclass
class Partitioning:
    part_of: np.ndarray
    members: list[np.ndarray]

    @property
    def k(self) -> int:
        return len(self.members)

    @classmethod
    def from_assignment(cls, part_of: Sequence[int]) -> "Partitioning":
        part_of = np.asarray(part_of, dtype=np.int64)
        if len(part_of) and part_of.min() < 0:
            raise PartitionError("partition indices must be non-negative")
        k = int(part_of.max()) + 1 if len(part_of) else 0
        members = [np.flatnonzero(part_of == i) for i in range(k)]
        if any(len(m) == 0 for m in members):
            raise PartitionError("partition indices must be contiguous with no empty part")
        return cls(part_of, members)


def make_partitioning(model: CompositeModel, strategy="per-model") -> Partitioning:
    """Build a partitioning.

    `strategy` is "per-model", "fixed-count:k", a list of model-id groups,
    or an explicit per-port assignment (sequence of ints of length |V_c|).
    """
    n = model.num_ports
    owner = np.asarray(model.port_owner, dtype=np.int64)
    if isinstance(strategy, str):
        if strategy == "per-model":
            used = sorted({int(o) for o in owner})
            remap = {m: i for i, m in enumerate(used)}
            return Partitioning.from_assignment([remap[int(o)] for o in owner])
        if strategy.startswith("fixed-count:"):
            k = int(strategy.split(":", 1)[1])
            if k < 1 or (model.models and k > len(model.models)):
                raise PartitionError(f"cannot split {len(model.models)} models into {k} partitions")
            groups = np.array_split(np.arange(len(model.models)), k) if model.models else []
            group_of = np.empty(len(model.models), dtype=np.int64)
            for gi, g in enumerate(groups):
                group_of[g] = gi
            return Partitioning.from_assignment(group_of[owner] if n else [])
        raise PartitionError(f"unknown partitioning strategy {strategy!r}")

    strategy = list(strategy)
    if strategy and isinstance(strategy[0], (list, tuple)):
        index = {m.id: i for i, m in enumerate(model.models)}
        group_of = np.full(len(model.models), -1, dtype=np.int64)
        for gi, group in enumerate(strategy):
            for mid in group:
                if mid not in index:
                    raise PartitionError(f"unknown model {mid!r} in grouping")
                if group_of[index[mid]] >= 0:
                    raise PartitionError(f"model {mid!r} appears in two groups")
                group_of[index[mid]] = gi
        if (group_of < 0).any():
            raise PartitionError("grouping does not cover every model")
        return Partitioning.from_assignment(group_of[owner] if n else [])

    if len(strategy) != n:
        raise PartitionError(f"explicit assignment has {len(strategy)} entries for {n} ports")
    return Partitioning.from_assignment(strategy)


def nested_groupings(model: CompositeModel, counts: Sequence[int]) -> list[list[list[str]]]:
    """Model-id groupings for decreasing partition counts, each a coarsening of the previous.

    Consecutive groups of the previous level are merged, so a request that
    fits one partition keeps fitting one partition as the count drops.
    """
    if list(counts) != sorted(counts, reverse=True) or (counts and counts[-1] < 1):
        raise PartitionError("partition counts must be positive and non-increasing")
    groups = [[m.id] for m in model.models]
    out = []
    for k in counts:
        if k > len(groups):
            raise PartitionError(f"cannot form {k} partitions from {len(groups)} groups")
        groups = [sum((groups[i] for i in chunk), []) for chunk in np.array_split(np.arange(len(groups)), k)]
        out.append(groups)
    return out


@dataclass
class ReducedPartitionGraph:
    index: int
    vertices: np.ndarray
    adjacency: np.ndarray  # bool, local indices
    overlay: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.local_of = {int(v): i for i, v in enumerate(self.vertices)}

    def copy(self) -> "ReducedPartitionGraph":
        return ReducedPartitionGraph(self.index, self.vertices, self.adjacency.copy(), list(self.overlay))

    def signature(self) -> tuple:
        return (self.index, self.adjacency.tobytes(), tuple(self.overlay))

    def edges(self) -> set[tuple[int, int]]:
        """Base reduction edges in global port ids."""
        us, vs = np.nonzero(self.adjacency)
        return {(int(self.vertices[a]), int(self.vertices[b])) for a, b in zip(us, vs)}

    def successors(self) -> list[list[int]]:
        succ = [np.flatnonzero(row).tolist() for row in self.adjacency]
        for a, b in self.overlay:
            succ[a].append(b)
        return succ


def reduce_block(reach: np.ndarray) -> tuple[np.ndarray, int]:
    """Transitive reduction of an acyclic, transitive, irreflexive relation."""
    b = reach.astype(np.int32)
    c = b @ b
    m = len(b)
    return (reach & (c == 0)), m * m * m


def build_reduction(closure: PathCountClosure, vertices: np.ndarray, index: int = 0) -> tuple[ReducedPartitionGraph, int]:
    """Returns the reduction and the multiply-accumulate count spent."""
    if len(vertices) == 0:
        return ReducedPartitionGraph(index, vertices, np.zeros((0, 0), bool)), 0
    reach = closure.A[np.ix_(vertices, vertices)] != 0
    np.fill_diagonal(reach, False)
    adj, work = reduce_block(np.asarray(reach, dtype=bool))
    return ReducedPartitionGraph(index, vertices, adj), work


def update_tr(graph: CompositeGraph | None, closure: PathCountClosure, partitioning: Partitioning) -> list[ReducedPartitionGraph]:
    """Rebuild every partition's reduction from the closure. `graph` is unused."""
    return [build_reduction(closure, verts, i)[0] for i, verts in enumerate(partitioning.members)]


def update_tr_counted(closure: PathCountClosure, partitioning: Partitioning) -> tuple[list[ReducedPartitionGraph], int]:
    out, work = [], 0
    for i, verts in enumerate(partitioning.members):
        rpg, w = build_reduction(closure, verts, i)
        out.append(rpg)
        work += w
    return out, work


def tr_stage_insertions(rpg: ReducedPartitionGraph, inserts: Sequence[EdgeOp]) -> None:
    staged = []
    for op in inserts:
        if not op.insert:
            raise ValueError(f"only insertions can be staged, got {op!r}")
        if op.u not in rpg.local_of or op.v not in rpg.local_of:
            raise PartitionError(f"{op!r} has an endpoint outside partition {rpg.index}")
        staged.append((rpg.local_of[op.u], rpg.local_of[op.v]))
    rpg.overlay.extend(staged)


def tr_cycle_search(rpg: ReducedPartitionGraph) -> tuple[bool, int]:
    cycle, work = dfs_cycle_search(rpg.successors(), len(rpg.vertices))
    return cycle is not None, work


def tr_has_cycle(rpg: ReducedPartitionGraph) -> bool:
    return tr_cycle_search(rpg)[0]


def tr_commit_or_discard(rpg: ReducedPartitionGraph, commit: bool) -> None:
    if commit:
        for a, b in rpg.overlay:
            rpg.adjacency[a, b] = True
    rpg.overlay.clear()
