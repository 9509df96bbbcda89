import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from icd_oracle.closure import recompute_tc
from icd_oracle.generate import GeneratorParams, generate_random_dag
from icd_oracle.harness import ScenarioConfig, generate_mcr_stream
from icd_oracle.model import EdgeOp, apply_edge_ops, dfs_has_cycle
from icd_oracle.oracle import (
    GC_DFS,
    GC_FALLBACK,
    NO_SEARCH,
    SAFE_MODE,
    TC_QUERY,
    TR_DFS,
    InvalidRequest,
    ModeChangeRequest,
    Oracle,
    OracleConfig,
    Status,
    classify_mcr,
    merge_requests,
)
from icd_oracle.reduction import Partitioning, update_tr
from icd_oracle.scenarios import two_model_example
from icd_oracle.verify import check_structures


def _model(seed=0, n=40, k=4, e=150):
    return generate_random_dag(GeneratorParams(n, k, e, seed=seed))


def _free_pair(oracle, mi, *, closes_cycle):
    m = oracle.model.models[mi]
    for u in m.inputs:
        for v in m.outputs:
            if (u, v) in oracle.graph:
                continue
            if bool(oracle.closure.A[v, u]) == closes_cycle:
                return u, v
    pytest.skip("model has no such pair")


def _mcr(i, *ops, models=()):
    return ModeChangeRequest(i, tuple(ops), models=models)


class TestClassification:
    part = Partitioning.from_assignment([0, 0, 0, 1, 1, 1])

    def test_types(self):
        a = [EdgeOp(True, 0, 1)]
        b = [EdgeOp(True, 0, 1), EdgeOp(True, 0, 2)]
        c = [EdgeOp(True, 0, 1), EdgeOp(True, 3, 4)]
        assert classify_mcr(a, self.part) == "a"
        assert classify_mcr(b, self.part) == "b"
        assert classify_mcr(c, self.part) == "c"

    def test_mixed_single_partition(self):
        mixed = [EdgeOp(True, 0, 1), EdgeOp(False, 0, 2)]
        assert classify_mcr(mixed, self.part) == "c"
        assert classify_mcr(mixed, self.part, exact_mixed=False) == "b"

    def test_merge_cancels_opposites_in_model_order(self):
        r1 = ModeChangeRequest(5, (EdgeOp(True, 0, 1), EdgeOp(True, 3, 4)), 7, ("m2",))
        r0 = ModeChangeRequest(6, (EdgeOp(False, 0, 1),), 7, ("m1",))
        merged = merge_requests([r1, r0])
        assert merged.ops == (EdgeOp(True, 3, 4),)
        assert merged.models == ("m1", "m2")
        assert merged.mcr_id == 6


class TestTwoModel:
    def test_coupled_mode_is_rejected_by_closure_query(self):
        m = two_model_example()
        o = Oracle(m)
        d = o.service_mcr(ModeChangeRequest(0, (EdgeOp(True, 2, 3),), target_modes={"m2": "coupled"}))
        assert (d.accepted, d.mcr_type, d.path_taken) == (False, "a", TC_QUERY)
        assert o.active_modes["m2"] == "normal"
        assert not o.stale

    def test_removing_m1_dependency_then_coupling_is_fine(self):
        o = Oracle(two_model_example())
        d1 = o.service_mcr(_mcr(0, EdgeOp(False, 0, 1)))
        assert d1.accepted and d1.path_taken == NO_SEARCH
        o.drain()
        d2 = o.service_mcr(_mcr(1, EdgeOp(True, 2, 3)))
        assert d2.accepted and d2.path_taken == TC_QUERY


class TestPaths:
    def test_fresh_paths_by_type(self):
        o = Oracle(_model(), OracleConfig(exact_mixed=False))
        u, v = _free_pair(o, 0, closes_cycle=False)
        assert o.service_mcr(_mcr(0, EdgeOp(True, u, v))).path_taken == TC_QUERY
        assert o.stale
        o.drain()

        m = o.model.models[1]
        free = [(a, b) for a in m.inputs for b in m.outputs
                if (a, b) not in o.graph and not o.closure.A[b, a]]
        ops = (EdgeOp(True, *free[0]), EdgeOp(True, *free[1]))
        d = o.service_mcr(_mcr(1, *ops))
        assert d.mcr_type == "b" and d.path_taken == TR_DFS
        o.drain()

        u1, v1 = _free_pair(o, 2, closes_cycle=False)
        u2, v2 = _free_pair(o, 3, closes_cycle=False)
        ops = (EdgeOp(True, u1, v1), EdgeOp(True, u2, v2))
        ref = o.graph.copy()
        apply_edge_ops(ref, ops)
        d = o.service_mcr(_mcr(2, *ops))
        assert d.mcr_type == "c" and d.path_taken == GC_DFS
        assert d.accepted == (not dfs_has_cycle(ref))

    def test_stale_structures_force_fallback(self):
        o = Oracle(_model())
        u, v = _free_pair(o, 0, closes_cycle=False)
        o.service_mcr(_mcr(0, EdgeOp(True, u, v)))
        assert o.maintenance_state().status == Status.IDLE and o.stale
        u2, v2 = _free_pair(o, 1, closes_cycle=False)
        d = o.service_mcr(_mcr(1, EdgeOp(True, u2, v2)))
        assert d.path_taken == GC_FALLBACK and d.maintenance_was_active

    def test_type_b_rejection(self):
        o = Oracle(_model(seed=2))
        bad = _free_pair(o, 0, closes_cycle=True)
        good = _free_pair(o, 0, closes_cycle=False)
        before = o.snapshot()
        d = o.service_mcr(_mcr(0, EdgeOp(True, *good), EdgeOp(True, *bad)))
        assert (d.accepted, d.path_taken) == (False, TR_DFS)
        assert o.snapshot() == before

    def test_lenient_tr_check_may_over_reject_but_never_under_reject(self):
        # deletions are ignored by the reduction check, so its answer is conservative
        model = _model(seed=5)
        diverged = ignored = 0
        for seed in range(8):
            strict, lenient = Oracle(model), Oracle(model, OracleConfig(exact_mixed=False))
            cfg = ScenarioConfig(seed=seed, total=40, warmup=0, models_per_mcr=1, edges_per_mcr=4,
                                 mix=(0, 1, 0), cycle_free_only=False)
            for r in generate_mcr_stream(model, cfg, strict.partitioning):
                ds, dl = strict.service_mcr(r), lenient.service_mcr(r)
                assert ds.accepted or not dl.accepted
                if ds.accepted != dl.accepted:
                    diverged += 1
                    break  # the two graphs differ from here on
                strict.drain()
                lenient.drain()
            ignored += lenient.tr_rejections_ignoring_deletions
        assert diverged <= ignored


class TestValidation:
    @pytest.mark.parametrize("ops, match", [
        ((), "empty"),
        ((EdgeOp(True, 0, 5), EdgeOp(True, 0, 5)), "twice"),
        ((EdgeOp(True, 5, 0),), "dependency"),
        ((EdgeOp(True, 0, 15),), "dependency"),
    ])
    def test_malformed(self, ops, match):
        o = Oracle(_model())
        before = o.snapshot()
        with pytest.raises(InvalidRequest, match=match):
            o.service_mcr(_mcr(3, *ops))
        assert o.snapshot() == before

    def test_insert_present_and_delete_absent(self):
        o = Oracle(_model())
        u, v = next(iter(o.model.models[0].modes["m0"]))
        with pytest.raises(InvalidRequest, match="inserts a present") as exc:
            o.service_mcr(_mcr(9, EdgeOp(True, u, v)))
        assert exc.value.mcr_id == 9
        w, x = _free_pair(o, 0, closes_cycle=False)
        with pytest.raises(InvalidRequest, match="deletes an absent"):
            o.service_mcr(_mcr(9, EdgeOp(False, w, x)))

    def test_unknown_target_mode(self):
        o = Oracle(_model())
        u, v = _free_pair(o, 0, closes_cycle=False)
        with pytest.raises(InvalidRequest, match="no mode"):
            o.service_mcr(ModeChangeRequest(0, (EdgeOp(True, u, v),), target_modes={"m0": "zz"}))

    def test_threshold_must_be_positive(self):
        with pytest.raises(ValueError):
            OracleConfig(threshold=0)


@given(st.integers(0, 2**31), st.sampled_from([1, 50, 5000, None]))
def test_rejections_leave_every_structure_untouched(seed, budget):
    model = _model(seed=seed % 7)
    o = Oracle(model)
    cfg = ScenarioConfig(seed=seed, total=25, warmup=0, models_per_mcr=3, edges_per_mcr=4,
                         cycle_free_only=False)
    for r in generate_mcr_stream(model, cfg, o.partitioning):
        before = o.snapshot()
        d = o.service_mcr(r)
        if not d.accepted:
            assert o.snapshot() == before
        o.run_maintenance_step(budget)


class TestMaintenance:
    def _stream(self, model, o, seed=0, total=40):
        cfg = ScenarioConfig(seed=seed, total=total, warmup=0, models_per_mcr=4, edges_per_mcr=6)
        return generate_mcr_stream(model, cfg, o.partitioning)

    def test_preemption_restarts_and_drain_converges(self):
        model = _model(seed=1)
        o = Oracle(model)
        for r in self._stream(model, o):
            o.service_mcr(r)
            o.run_maintenance_step(30)
        assert o.preemptions >= 3
        o.drain()
        assert not o.stale and o.maintenance_state().status == Status.IDLE
        assert check_structures(o) == []

    def test_threshold_triggers_recompute(self):
        model = _model(seed=1)
        o = Oracle(model, OracleConfig(threshold=3))
        for r in self._stream(model, o, total=10):
            o.service_mcr(r)
        o.drain()
        assert o.maintenance_log[-1].kind == "recompute"
        assert o.closure.equals(recompute_tc(o.graph))

    def test_published_structures_change_only_on_completion(self):
        model = _model(seed=3)
        o = Oracle(model)
        stream = self._stream(model, o, total=3)
        o.service_mcr(stream[0])
        closure_before = o.closure.signature()
        o.run_maintenance_step(1)
        assert o.maintenance_state().status == Status.RUNNING
        assert o.closure.signature() == closure_before
        o.service_mcr(stream[1])  # preempts
        assert o.maintenance_state().status == Status.PREEMPTED
        assert o.closure.signature() == closure_before
        o.drain()
        assert o.closure.signature() != closure_before
        assert check_structures(o) == []

    def test_partial_progress_is_kept_across_preemption(self):
        model = _model(seed=3, n=60, k=6, e=400)
        from_scratch = Oracle(model)
        resumed = Oracle(model)
        stream = self._stream(model, resumed, total=2)
        for o in (from_scratch, resumed):
            o.service_mcr(stream[0])
        resumed.run_maintenance_step(200)  # some edge sweeps finish, then preempted
        for o in (from_scratch, resumed):
            o.service_mcr(stream[1])
            o.drain()
        assert resumed.maintenance_log[-1].work < from_scratch.maintenance_log[-1].work
        assert resumed.closure.equals(from_scratch.closure)

    def test_cancelled_batch_goes_idle(self):
        o = Oracle(_model())
        u, v = _free_pair(o, 0, closes_cycle=False)
        o.service_mcr(_mcr(0, EdgeOp(True, u, v)))
        o.run_maintenance_step(1)
        o.service_mcr(_mcr(1, EdgeOp(False, u, v)))
        assert o.maintenance_state().pending == ()
        o.drain()
        assert check_structures(o) == []

    def test_overlay_commit_marks_reductions_dirty(self):
        o = Oracle(_model(seed=2), OracleConfig(exact_mixed=False))
        m = o.model.models[0]
        free = [(a, b) for a in m.inputs for b in m.outputs
                if (a, b) not in o.graph and not o.closure.A[b, a]]
        o.service_mcr(_mcr(0, EdgeOp(True, *free[0]), EdgeOp(True, *free[1])))
        assert o.snapshot()[4] is True
        o.drain()
        assert o.snapshot()[4] is False
        assert [r.signature() for r in o.reductions] == \
            [r.signature() for r in update_tr(o.graph, o.closure, o.partitioning)]

    def test_modular_oracle_agrees(self):
        model = _model(seed=4)
        exact, mod = Oracle(model), Oracle(model, OracleConfig(modulus=(1 << 31) - 1))
        for r in self._stream(model, exact, seed=2):
            assert exact.service_mcr(r).accepted == mod.service_mcr(r).accepted
            exact.run_maintenance_step(500)
            mod.run_maintenance_step(500)
        mod.drain()
        assert check_structures(mod) == []

    def test_safe_mode_fallback(self):
        o = Oracle(_model())
        before = set(o.graph.edges())
        d = o.safe_mode_fallback("m1")
        m = o.model.models[1]
        assert d.accepted and d.path_taken == SAFE_MODE and d.mcr_id == -1
        assert o.active_modes["m1"] == "off"
        assert not any((u, v) in o.graph for u in m.inputs for v in m.outputs)
        assert set(o.graph.edges()) <= before
        o.drain()
        assert check_structures(o) == []

    def test_fault_injection_leaves_edges_behind(self):
        o = Oracle(two_model_example(), OracleConfig(fault_skip_revert=True))
        o.service_mcr(_mcr(0, EdgeOp(False, 0, 1)))
        d = o.service_mcr(_mcr(1, EdgeOp(True, 2, 3)))  # stale: fallback DFS, no cycle
        assert d.accepted
        o.drain()
        d = o.service_mcr(_mcr(2, EdgeOp(True, 0, 1)))  # closes the loop via tc-query
        assert not d.accepted


class TestBackground:
    def test_worker_converges_and_answers_concurrently(self):
        model = _model(seed=6, n=60, k=6, e=400)
        o = Oracle(model)
        stream = TestMaintenance()._stream(model, o, seed=3, total=30)
        o.start_background()
        try:
            for r in stream:
                d = o.service_mcr(r)
                assert d.stall_ns >= 0
            assert o.wait_idle(timeout=30)
        finally:
            o.stop_background()
        assert check_structures(o) == []
        with pytest.raises(RuntimeError):
            o.start_background()
            try:
                o.run_maintenance_step(10)
            finally:
                o.stop_background()

    def test_stop_mid_job_keeps_state_consistent(self):
        model = _model(seed=6, n=60, k=6, e=400)
        o = Oracle(model)
        o.start_background()
        for r in TestMaintenance()._stream(model, o, seed=4, total=10):
            o.service_mcr(r)
        o.stop_background()
        assert threading.active_count() >= 1
        o.drain()
        assert check_structures(o) == []
