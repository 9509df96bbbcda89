import json

import networkx as nx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_dag, to_nx
from icd_oracle.model import (
    MODE,
    SIGNAL,
    CompositeGraph,
    EdgeOp,
    EdgeOpError,
    InitialCycleError,
    ModelError,
    apply_edge_ops,
    build_composite_graph,
    count_paths_bruteforce,
    dfs_cycle_search,
    dfs_has_cycle,
    dump_composite,
    find_cycle,
    load_composite,
    reachable_dfs,
    revert_edge_ops,
    topological_order,
)
from icd_oracle.scenarios import two_model_example, workpiece_model_doc


def _doc(**over):
    doc = {
        "models": [
            {"id": "m1", "inputs": ["a"], "outputs": ["b"],
             "modes": {"normal": [["a", "b"]]}, "initial_mode": "normal"},
            {"id": "m2", "inputs": ["d"], "outputs": ["e"],
             "modes": {"normal": [], "coupled": [["d", "e"]]}, "initial_mode": "normal"},
        ],
        "signals": [["m2.e", "m1.a"], ["m1.b", "m2.d"]],
    }
    doc.update(over)
    return doc


class TestLoading:
    def test_two_model_ports_and_edges(self):
        m = two_model_example()
        assert m.port_names == ["m1.a", "m1.b", "m2.d", "m2.e"]
        g = build_composite_graph(m)
        assert g.kind == {(3, 0): SIGNAL, (1, 2): SIGNAL, (0, 1): MODE}
        assert not dfs_has_cycle(g)

    def test_coupled_mode_closes_the_loop(self):
        m = two_model_example()
        g = build_composite_graph(m, {"m2": "coupled"})
        cyc = find_cycle(g)
        assert cyc is not None and sorted(cyc) == [0, 1, 2, 3]

    def test_roundtrip_is_stable(self):
        m = load_composite(workpiece_model_doc(3))
        text = dump_composite(m)
        again = load_composite(text)
        assert dump_composite(again) == text
        assert build_composite_graph(again).signature() == build_composite_graph(m).signature()

    def test_empty_model(self):
        m = load_composite("{}")
        assert m.num_ports == 0
        assert find_cycle(build_composite_graph(m)) is None

    def test_initial_cycle_reports_port_names(self):
        doc = _doc()
        doc["models"][1]["initial_mode"] = "coupled"
        with pytest.raises(InitialCycleError) as exc:
            load_composite(doc)
        assert set(exc.value.cycle) == {"m1.a", "m1.b", "m2.d", "m2.e"}

    def test_cyclic_safe_mode_is_rejected_offline(self):
        doc = _doc()
        doc["models"][1]["safe_mode"] = "coupled"
        with pytest.raises(InitialCycleError, match="safe mode m2.coupled"):
            load_composite(doc)

    @pytest.mark.parametrize("mutate, message", [
        (lambda d: d["models"].append(dict(d["models"][0])), "duplicate model id"),
        (lambda d: d["signals"].append(["m1.zz", "m2.d"]), "dangling port"),
        (lambda d: d["signals"].append(["m1.a", "m2.d"]), "output to an input"),
        (lambda d: d["models"][0]["modes"].update(bad=[["b", "a"]]), "input -> output"),
        (lambda d: d["models"][0].update(initial_mode="nope"), "initial_mode"),
        (lambda d: d["models"][0].update(modes={}), "at least one mode"),
        (lambda d: d["signals"].append(["m1.b", "m2.d"]), "duplicate"),
        (lambda d: d["models"][0].update(id="x.y"), "must not contain"),
    ])
    def test_schema_errors(self, mutate, message):
        doc = json.loads(json.dumps(_doc()))
        mutate(doc)
        with pytest.raises(ModelError, match=message):
            load_composite(doc)

    def test_fan_in_needs_flag(self):
        doc = _doc()
        doc["models"].append({"id": "m3", "inputs": [], "outputs": ["z"], "modes": {"x": []},
                              "initial_mode": "x"})
        doc["signals"].append(["m3.z", "m1.a"])
        with pytest.raises(ModelError, match="duplicate writer"):
            load_composite(doc)
        doc["allow_fan_in"] = True
        assert load_composite(doc).allow_fan_in


class TestEdgeOps:
    def test_apply_and_revert(self):
        g = build_composite_graph(two_model_example())
        before = g.signature()
        ops = [EdgeOp(False, 0, 1), EdgeOp(True, 2, 3)]
        apply_edge_ops(g, ops)
        assert (2, 3) in g and (0, 1) not in g
        revert_edge_ops(g, ops)
        assert g.signature() == before

    @pytest.mark.parametrize("ops, index", [
        ([EdgeOp(True, 2, 3), EdgeOp(True, 0, 1)], 1),   # already present
        ([EdgeOp(False, 2, 3)], 0),                       # absent
        ([EdgeOp(True, 2, 3), EdgeOp(True, 1, 1)], 1),   # self-loop
        ([EdgeOp(False, 3, 0)], 0),                       # signal edges are fixed
    ])
    def test_failed_batch_changes_nothing(self, ops, index):
        g = build_composite_graph(two_model_example())
        before = g.signature()
        with pytest.raises(EdgeOpError) as exc:
            apply_edge_ops(g, ops)
        assert exc.value.index == index
        assert g.signature() == before

    def test_inverse(self):
        op = EdgeOp(True, 1, 2)
        assert op.inverse() == EdgeOp(False, 1, 2)
        assert op.inverse().inverse() == op


class TestSearch:
    def test_diamond_has_two_paths(self):
        g = CompositeGraph(4)
        for u, v in [(0, 1), (0, 2), (1, 3), (2, 3)]:
            g.add_edge(u, v)
        assert count_paths_bruteforce(g, 0, 3) == 2
        assert count_paths_bruteforce(g, 3, 3) == 1
        assert count_paths_bruteforce(g, 3, 0) == 0

    def test_three_stacked_diamonds_have_eight_paths(self):
        g = CompositeGraph(10)
        for k in range(3):
            s = 3 * k
            for u, v in [(s, s + 1), (s, s + 2), (s + 1, s + 3), (s + 2, s + 3)]:
                g.add_edge(u, v)
        assert count_paths_bruteforce(g, 0, 9) == 8

    def test_count_paths_refuses_cycles(self):
        g = CompositeGraph(2)
        g.add_edge(0, 1)
        g.add_edge(1, 0)
        with pytest.raises(ValueError):
            count_paths_bruteforce(g, 0, 1)

    def test_reported_cycle_is_a_real_cycle(self, rng):
        for _ in range(50):
            g = random_dag(12, 0.3, rng)
            u, v = (int(x) for x in rng.choice(12, 2, replace=False))
            if (v, u) not in g:
                g.add_edge(v, u)
            cyc = find_cycle(g)
            if cyc is None:
                assert nx.is_directed_acyclic_graph(to_nx(g))
                continue
            for a, b in zip(cyc, cyc[1:] + cyc[:1]):
                assert (a, b) in g

    @given(st.integers(2, 14), st.floats(0.0, 0.6), st.integers(0, 2**31), st.integers(0, 3))
    def test_dfs_kahn_and_networkx_agree(self, n, p, seed, extra):
        rng = np.random.default_rng(seed)
        g = random_dag(n, p, rng)
        for _ in range(extra):  # back edges may close cycles
            u, v = (int(x) for x in rng.choice(n, 2, replace=False))
            if (u, v) not in g:
                g.add_edge(u, v)
        acyclic = nx.is_directed_acyclic_graph(to_nx(g))
        assert (not dfs_has_cycle(g)) == acyclic
        assert (topological_order(g) is not None) == acyclic
        cyc, work = dfs_cycle_search(g.succ, g.n)
        assert work <= 2 * (g.n + g.num_edges)

    @given(st.integers(2, 12), st.floats(0.0, 0.5), st.integers(0, 2**31))
    def test_reachability_matches_networkx(self, n, p, seed):
        g = random_dag(n, p, np.random.default_rng(seed))
        h = to_nx(g)
        for u in range(n):
            desc = nx.descendants(h, u)
            for v in range(n):
                assert reachable_dfs(g, u, v) == (v in desc)
