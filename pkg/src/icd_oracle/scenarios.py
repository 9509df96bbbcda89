"""Hand-built composites: the two-model toy and the workpiece sorting line.

The sorting line is reconstructed from its prose description: twelve
controller/ejector pairs, a token ring between controllers closed by a
token generator, and a conveyor with its speed controller. Only the
dependency structure matters here; no plant dynamics are simulated.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import (
    CompositeModel,
    EdgeOp,
    apply_edge_ops,
    build_composite_graph,
    dfs_has_cycle,
    load_composite,
    revert_edge_ops,
)
from .oracle import ModeChangeRequest

N_EJECTORS = 12


@dataclass(frozen=True)
class SafeModeFallback:
    issue_tick: int
    model_id: str
    label: str = ""


@dataclass
class ScheduledRequest:
    request: ModeChangeRequest
    label: str = ""


def two_model_example() -> CompositeModel:
    """Model 1 computes b from a; model 2 feeds a from e and reads b at d.

    Model 2's "coupled" mode makes e depend on d, closing e->a->b->d->e.
    """
    return load_composite({
        "models": [
            {"id": "m1", "inputs": ["a"], "outputs": ["b"],
             "modes": {"normal": [["a", "b"]]}, "initial_mode": "normal"},
            {"id": "m2", "inputs": ["d"], "outputs": ["e"],
             "modes": {"normal": [], "coupled": [["d", "e"]]},
             "initial_mode": "normal", "safe_mode": "normal"},
        ],
        "signals": [["m2.e", "m1.a"], ["m1.b", "m2.d"]],
    })


CONTROLLER_MODES = {
    # waiting for a workpiece: push once retracted and a workpiece is seen
    "Idle": [["EjStart", "Push"], ["WpIn", "Push"]],
    # pushing: keep Push tied to EjStart, retract once fully extended
    "Push": [["EjStart", "Push"], ["EjEnd", "Pull"]],
    # retracting: hand the token on once retracted
    "Pull": [["EjStart", "TokenOut"]],
    # bin full: pass the token straight through
    "BinFull": [["TokenIn", "TokenOut"]],
}

EJECTOR_MODES = {
    # the ejector dynamics integrate, so no instantaneous dependency
    "Idle": [],
    "Push": [],
    "Pull": [],
    # blocked by a full bin: EjStart reacts to Push immediately
    "BinFull": [["Push", "EjStart"]],
}


def workpiece_model_doc(n: int = N_EJECTORS) -> dict:
    models = []
    signals = []
    for k in range(1, n + 1):
        models.append({
            "id": f"ctrl{k}",
            "inputs": ["EjStart", "EjEnd", "WpIn", "WpPos", "TokenIn"],
            "outputs": ["Push", "Pull", "TokenOut"],
            "modes": CONTROLLER_MODES,
            "initial_mode": "Idle",
            "safe_mode": "Idle",
        })
        models.append({
            "id": f"ej{k}",
            "inputs": ["Push", "Pull"],
            "outputs": ["EjStart", "EjEnd"],
            "modes": EJECTOR_MODES,
            "initial_mode": "Idle",
            "safe_mode": "Idle",
        })
        signals += [
            [f"ctrl{k}.Push", f"ej{k}.Push"],
            [f"ctrl{k}.Pull", f"ej{k}.Pull"],
            [f"ej{k}.EjStart", f"ctrl{k}.EjStart"],
            [f"ej{k}.EjEnd", f"ctrl{k}.EjEnd"],
            [f"belt.WpIn{k}", f"ctrl{k}.WpIn"],
            ["belt.WpPos", f"ctrl{k}.WpPos"],
        ]
        nxt = f"ctrl{k + 1}.TokenIn" if k < n else "tokengen.TokenIn"
        signals.append([f"ctrl{k}.TokenOut", nxt])
    signals.append(["tokengen.TokenOut", "ctrl1.TokenIn"])
    models.append({
        "id": "tokengen", "inputs": ["TokenIn"], "outputs": ["TokenOut"],
        "modes": {"Pass": [["TokenIn", "TokenOut"]]}, "initial_mode": "Pass",
    })
    models.append({
        "id": "belt", "inputs": ["Speed"],
        "outputs": ["WpPos"] + [f"WpIn{k}" for k in range(1, n + 1)],
        "modes": {"Run": []}, "initial_mode": "Run",
    })
    models.append({
        "id": "beltctrl", "inputs": ["WpPos"], "outputs": ["Speed"],
        "modes": {"Run": [["WpPos", "Speed"]]}, "initial_mode": "Run",
    })
    signals.append(["belt.WpPos", "beltctrl.WpPos"])
    signals.append(["beltctrl.Speed", "belt.Speed"])
    return {"models": models, "signals": signals}


class _ModeTracker:
    """Builds requests from mode changes, following the true accept/reject outcome."""

    def __init__(self, model: CompositeModel):
        self.model = model
        self.modes = {m.id: m.initial_mode for m in model.models}
        self.graph = build_composite_graph(model)
        self.next_id = 0

    def ops_for(self, targets: dict[str, str]) -> tuple[EdgeOp, ...]:
        dels, ins = [], []
        for mid, mode in targets.items():
            m = self.model.models[self.model.model_index(mid)]
            old, new = m.modes[self.modes[mid]], m.modes[mode]
            dels += [EdgeOp(False, u, v) for u, v in sorted(old - new)]
            ins += [EdgeOp(True, u, v) for u, v in sorted(new - old)]
        return tuple(dels + ins)

    def request(self, tick: int, targets: dict[str, str]) -> ModeChangeRequest:
        ops = self.ops_for(targets)
        req = ModeChangeRequest(self.next_id, ops, tick, tuple(sorted(targets)), dict(targets))
        self.next_id += 1
        apply_edge_ops(self.graph, ops)
        if dfs_has_cycle(self.graph):
            revert_edge_ops(self.graph, ops)
        else:
            self.modes.update(targets)
        return req

    def fallback(self, model_id: str) -> None:
        m = self.model.models[self.model.model_index(model_id)]
        ops = self.ops_for({model_id: m.safe_mode})
        apply_edge_ops(self.graph, ops)
        self.modes[model_id] = m.safe_mode


def workpiece_scenario(n: int = N_EJECTORS) -> tuple[CompositeModel, list]:
    """The sorting line and its schedule.

    Schedule, in order:
      1. each ejector k sorts one workpiece: Idle->Push, Push->Pull, Pull->Idle
         (the controller and ejector switch together);
      2. ejector 1 starts another push, then its bin fills up while the
         controller is mid-push: the BinFull request creates EjStart <-> Push;
      3. after the rejection the ejector falls back to its safe mode;
      4. the controllers switch to BinFull (token pass-through) one by one;
         the last switch would close the token ring.
    """
    model = load_composite(workpiece_model_doc(n))
    tr = _ModeTracker(model)
    schedule: list = []
    tick = 0
    for k in range(1, n + 1):
        tick = 100 * k
        for i, (a, b) in enumerate([("Idle", "Push"), ("Push", "Pull"), ("Pull", "Idle")]):
            req = tr.request(tick + 20 * i, {f"ctrl{k}": b, f"ej{k}": b})
            schedule.append(ScheduledRequest(req, f"ejector{k}:{a}->{b}"))

    tick = 100 * (n + 1)
    schedule.append(ScheduledRequest(tr.request(tick, {"ctrl1": "Push", "ej1": "Push"}), "ejector1:Idle->Push"))
    schedule.append(ScheduledRequest(tr.request(tick + 10, {"ej1": "BinFull"}), "ejector1:bin-full"))
    tr.fallback("ej1")
    schedule.append(SafeModeFallback(tick + 11, "ej1", "ejector1:safe-mode"))
    # the controller gives up the push and retracts
    schedule.append(ScheduledRequest(tr.request(tick + 20, {"ctrl1": "Pull"}), "ctrl1:Push->Pull"))

    tick = 100 * (n + 2)
    for k in range(1, n + 1):
        req = tr.request(tick + 10 * k, {f"ctrl{k}": "BinFull"})
        schedule.append(ScheduledRequest(req, f"ctrl{k}:bin-full-passthrough"))
    return model, schedule
