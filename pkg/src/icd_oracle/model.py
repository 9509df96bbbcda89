"""Composite models, their dependency graphs, and DFS-based checks.

Ports are dense integer ids. A dependency "output b needs input a" is the
edge a -> b; a signal from output o to input i is the edge o -> i. With that
convention an instantaneous cycle is exactly a directed cycle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

SIGNAL = "signal"
MODE = "mode"


class ModelError(ValueError):
    """Raised when a model file or model object is malformed."""


class InitialCycleError(ModelError):
    """The initial (or safe-mode) configuration contains an instantaneous cycle."""

    def __init__(self, message: str, cycle: list[str]):
        super().__init__(message)
        self.cycle = cycle


class EdgeOpError(ValueError):
    """An edge operation does not match the current graph."""

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class EdgeOp:
    insert: bool
    u: int
    v: int

    @property
    def edge(self) -> tuple[int, int]:
        return (self.u, self.v)

    def inverse(self) -> "EdgeOp":
        return EdgeOp(not self.insert, self.u, self.v)

    def __repr__(self) -> str:
        return f"{'ins' if self.insert else 'del'}({self.u},{self.v})"


@dataclass
class ComponentModel:
    id: str
    inputs: list[int]
    outputs: list[int]
    modes: dict[str, frozenset[tuple[int, int]]]
    initial_mode: str
    safe_mode: str | None = None


@dataclass
class CompositeModel:
    models: list[ComponentModel] = field(default_factory=list)
    signals: list[tuple[int, int]] = field(default_factory=list)
    port_names: list[str] = field(default_factory=list)
    port_owner: list[int] = field(default_factory=list)
    port_is_input: list[bool] = field(default_factory=list)
    allow_fan_in: bool = False

    @property
    def num_ports(self) -> int:
        return len(self.port_names)

    def model_index(self, model_id: str) -> int:
        for i, m in enumerate(self.models):
            if m.id == model_id:
                return i
        raise KeyError(model_id)

    def port(self, name: str) -> int:
        try:
            return self._port_index[name]
        except AttributeError:
            self._port_index = {p: i for i, p in enumerate(self.port_names)}
            return self._port_index[name]

    def mode_edges(self, modes: dict[str, str] | None = None) -> set[tuple[int, int]]:
        """Union of dependency edges with every model in `modes` (default: initial)."""
        modes = modes or {}
        out: set[tuple[int, int]] = set()
        for m in self.models:
            out |= m.modes[modes.get(m.id, m.initial_mode)]
        return out

    def is_dependency_pair(self, u: int, v: int) -> bool:
        """True if u -> v may appear in some mode (own input to own output)."""
        return (
            0 <= u < self.num_ports
            and 0 <= v < self.num_ports
            and self.port_owner[u] == self.port_owner[v]
            and self.port_is_input[u]
            and not self.port_is_input[v]
        )


class CompositeGraph:
    """Dependency graph over port vertices with forward and reverse adjacency."""

    def __init__(self, n: int):
        self.n = n
        self.succ: list[set[int]] = [set() for _ in range(n)]
        self.pred: list[set[int]] = [set() for _ in range(n)]
        self.kind: dict[tuple[int, int], str] = {}

    def __contains__(self, edge: tuple[int, int]) -> bool:
        return edge in self.kind

    @property
    def num_edges(self) -> int:
        return len(self.kind)

    def edges(self) -> frozenset[tuple[int, int]]:
        return frozenset(self.kind)

    def add_edge(self, u: int, v: int, kind: str = MODE) -> None:
        self.succ[u].add(v)
        self.pred[v].add(u)
        self.kind[(u, v)] = kind

    def remove_edge(self, u: int, v: int) -> None:
        self.succ[u].discard(v)
        self.pred[v].discard(u)
        del self.kind[(u, v)]

    def copy(self) -> "CompositeGraph":
        g = CompositeGraph(self.n)
        g.succ = [set(s) for s in self.succ]
        g.pred = [set(p) for p in self.pred]
        g.kind = dict(self.kind)
        return g

    def signature(self) -> tuple:
        """Hashable snapshot of the full adjacency, used for identity checks."""
        return (
            tuple(frozenset(s) for s in self.succ),
            tuple(frozenset(p) for p in self.pred),
            frozenset(self.kind.items()),
        )


# ---------------------------------------------------------------------------
# Loading and construction
# ---------------------------------------------------------------------------


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ModelError(message)


def load_composite(text: str | dict) -> CompositeModel:
    """Parse and validate a model file; the initial configuration must be acyclic."""
    doc = json.loads(text) if isinstance(text, (str, bytes)) else text
    _require(isinstance(doc, dict), "model file must be a JSON object")
    raw_models = doc.get("models", [])
    raw_signals = doc.get("signals", [])
    _require(isinstance(raw_models, list), "'models' must be a list")
    _require(isinstance(raw_signals, list), "'signals' must be a list")

    cm = CompositeModel(allow_fan_in=bool(doc.get("allow_fan_in", False)))
    seen_ids: set[str] = set()
    name_to_port: dict[str, int] = {}

    for mi, rm in enumerate(raw_models):
        _require(isinstance(rm, dict), f"models[{mi}] must be an object")
        mid = rm.get("id")
        _require(isinstance(mid, str) and mid, f"models[{mi}] needs a string id")
        _require(mid not in seen_ids, f"duplicate model id {mid!r}")
        _require("." not in mid, f"model id {mid!r} must not contain '.'")
        seen_ids.add(mid)

        local: dict[str, int] = {}
        ports = {"inputs": [], "outputs": []}
        for key in ("inputs", "outputs"):
            names = rm.get(key, [])
            _require(isinstance(names, list), f"{mid}.{key} must be a list")
            for pname in names:
                _require(isinstance(pname, str) and pname, f"{mid}: bad port name {pname!r}")
                _require(pname not in local, f"{mid}: duplicate port {pname!r}")
                pid = len(cm.port_names)
                local[pname] = pid
                full = f"{mid}.{pname}"
                name_to_port[full] = pid
                cm.port_names.append(full)
                cm.port_owner.append(mi)
                cm.port_is_input.append(key == "inputs")
                ports[key].append(pid)

        raw_modes = rm.get("modes", {})
        _require(isinstance(raw_modes, dict) and raw_modes, f"{mid}: needs at least one mode")
        modes: dict[str, frozenset[tuple[int, int]]] = {}
        for mname, deps in raw_modes.items():
            edges = set()
            for dep in deps:
                _require(
                    isinstance(dep, (list, tuple)) and len(dep) == 2,
                    f"{mid}.{mname}: dependency must be an [input, output] pair",
                )
                a, b = dep
                _require(a in local and b in local, f"{mid}.{mname}: dangling port in {dep!r}")
                u, v = local[a], local[b]
                _require(
                    cm.port_is_input[u] and not cm.port_is_input[v],
                    f"{mid}.{mname}: dependency {dep!r} must run input -> output",
                )
                edges.add((u, v))
            modes[mname] = frozenset(edges)
        initial = rm.get("initial_mode")
        _require(initial in modes, f"{mid}: initial_mode {initial!r} is not a mode")
        safe = rm.get("safe_mode")
        _require(safe is None or safe in modes, f"{mid}: safe_mode {safe!r} is not a mode")
        cm.models.append(ComponentModel(mid, ports["inputs"], ports["outputs"], modes, initial, safe))

    written: set[int] = set()
    for si, sig in enumerate(raw_signals):
        _require(isinstance(sig, (list, tuple)) and len(sig) == 2, f"signals[{si}] must be a pair")
        src, dst = sig
        _require(src in name_to_port, f"signals[{si}]: dangling port {src!r}")
        _require(dst in name_to_port, f"signals[{si}]: dangling port {dst!r}")
        o, i = name_to_port[src], name_to_port[dst]
        _require(
            not cm.port_is_input[o] and cm.port_is_input[i],
            f"signals[{si}]: must connect an output to an input",
        )
        if not cm.allow_fan_in:
            _require(i not in written, f"signals[{si}]: duplicate writer for input {dst!r}")
        written.add(i)
        cm.signals.append((o, i))
    _require(len(set(cm.signals)) == len(cm.signals), "duplicate signal")

    check_initial_configuration(cm)
    return cm


def dump_composite(model: CompositeModel) -> str:
    """Serialise to the JSON model-file schema (deterministic)."""
    models = []
    for m in model.models:
        short = lambda p: model.port_names[p].split(".", 1)[1]  # noqa: E731
        entry = {
            "id": m.id,
            "inputs": [short(p) for p in m.inputs],
            "outputs": [short(p) for p in m.outputs],
            "modes": {
                name: [[short(u), short(v)] for u, v in sorted(deps)]
                for name, deps in m.modes.items()
            },
            "initial_mode": m.initial_mode,
        }
        if m.safe_mode is not None:
            entry["safe_mode"] = m.safe_mode
        models.append(entry)
    doc: dict = {"models": models}
    if model.allow_fan_in:
        doc["allow_fan_in"] = True
    doc["signals"] = [[model.port_names[o], model.port_names[i]] for o, i in model.signals]
    return json.dumps(doc, separators=(",", ":"))


def build_composite_graph(model: CompositeModel, modes: dict[str, str] | None = None) -> CompositeGraph:
    """G_c with all signal edges plus the dependencies of the given (default initial) modes."""
    g = CompositeGraph(model.num_ports)
    for o, i in model.signals:
        g.add_edge(o, i, SIGNAL)
    for u, v in sorted(model.mode_edges(modes)):
        g.add_edge(u, v, MODE)
    return g


def check_initial_configuration(model: CompositeModel) -> None:
    """Offline checks: initial modes acyclic; each safe mode acyclic against initial peers."""
    g = build_composite_graph(model)
    cycle = find_cycle(g)
    if cycle is not None:
        names = [model.port_names[p] for p in cycle]
        raise InitialCycleError("initial cycle: " + " -> ".join(names), names)
    for m in model.models:
        if m.safe_mode is None or m.safe_mode == m.initial_mode:
            continue
        cycle = find_cycle(build_composite_graph(model, {m.id: m.safe_mode}))
        if cycle is not None:
            names = [model.port_names[p] for p in cycle]
            raise InitialCycleError(
                f"safe mode {m.id}.{m.safe_mode} is cyclic: " + " -> ".join(names), names
            )


# ---------------------------------------------------------------------------
# Mutation and search
# ---------------------------------------------------------------------------


def apply_edge_ops(graph: CompositeGraph, ops: Sequence[EdgeOp], kind: str = MODE) -> None:
    """Apply ops in order. On a precondition failure nothing is changed."""
    done = 0
    try:
        for idx, op in enumerate(ops):
            if op.u == op.v:
                raise EdgeOpError(f"op {idx}: self-loop {op!r}", idx)
            present = op.edge in graph.kind
            if op.insert:
                if present:
                    raise EdgeOpError(f"op {idx}: inserting present edge {op!r}", idx)
                graph.add_edge(op.u, op.v, kind)
            else:
                if not present:
                    raise EdgeOpError(f"op {idx}: deleting absent edge {op!r}", idx)
                if graph.kind[op.edge] == SIGNAL:
                    raise EdgeOpError(f"op {idx}: signal edge {op!r} is immutable", idx)
                graph.remove_edge(op.u, op.v)
            done += 1
    except EdgeOpError:
        revert_edge_ops(graph, ops[:done], kind)
        raise


def revert_edge_ops(graph: CompositeGraph, ops: Sequence[EdgeOp], kind: str = MODE) -> None:
    for op in reversed(ops):
        if op.insert:
            graph.remove_edge(op.u, op.v)
        else:
            graph.add_edge(op.u, op.v, kind)


def dfs_cycle_search(succ: Sequence[Iterable[int]], n: int) -> tuple[list[int] | None, int]:
    """Iterative three-colour DFS. Returns (cycle or None, work = vertices + edges scanned)."""
    color = bytearray(n)  # 0 white, 1 on stack, 2 done
    parent = [-1] * n
    work = 0
    for root in range(n):
        if color[root]:
            continue
        color[root] = 1
        work += 1
        stack = [(root, iter(succ[root]))]
        while stack:
            u, it = stack[-1]
            for w in it:
                work += 1
                c = color[w]
                if c == 0:
                    color[w] = 1
                    parent[w] = u
                    work += 1
                    stack.append((w, iter(succ[w])))
                    break
                if c == 1:
                    cycle = [u]
                    while cycle[-1] != w:
                        cycle.append(parent[cycle[-1]])
                    cycle.reverse()
                    return cycle, work
            else:
                color[u] = 2
                stack.pop()
    return None, work


def find_cycle(graph: CompositeGraph) -> list[int] | None:
    return dfs_cycle_search(graph.succ, graph.n)[0]


def dfs_has_cycle(graph: CompositeGraph) -> bool:
    return find_cycle(graph) is not None


def reachable_dfs(graph: CompositeGraph, u: int, v: int) -> bool:
    """Path u -> v with at least one edge."""
    seen = set()
    stack = list(graph.succ[u])
    while stack:
        w = stack.pop()
        if w == v:
            return True
        if w in seen:
            continue
        seen.add(w)
        stack.extend(graph.succ[w])
    return False


def topological_order(graph: CompositeGraph) -> list[int] | None:
    """Kahn's algorithm; None if the graph is cyclic."""
    indeg = [len(p) for p in graph.pred]
    ready = [v for v in range(graph.n) if indeg[v] == 0]
    order = []
    while ready:
        u = ready.pop()
        order.append(u)
        for w in graph.succ[u]:
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
    return order if len(order) == graph.n else None


def count_paths_bruteforce(graph: CompositeGraph, u: int, v: int) -> int:
    """Enumerate every u -> v path explicitly. The empty path counts, so (v, v) gives 1."""
    if dfs_has_cycle(graph):
        raise ValueError("path counts are undefined on a cyclic graph")
    count = 0
    stack = [u]
    while stack:
        w = stack.pop()
        if w == v:
            count += 1
            continue
        stack.extend(graph.succ[w])
    return count
