import pytest

from icd_oracle.generate import (
    BENCHMARK_ROWS,
    GeneratorParams,
    InfeasibleError,
    generate_random_dag,
    shaped_params,
)
from icd_oracle.model import build_composite_graph, dfs_has_cycle, dump_composite


@pytest.mark.parametrize("size", sorted(BENCHMARK_ROWS))
def test_benchmark_shapes(size):
    n, k, e, _, _ = BENCHMARK_ROWS[size]
    m = generate_random_dag(GeneratorParams.benchmark(size, seed=1))
    g = build_composite_graph(m)
    assert g.n == n
    assert len(m.models) == k
    assert abs(g.num_edges - e) <= 0.05 * e
    assert not dfs_has_cycle(g)


def test_benchmark_rows_match_published_values():
    assert BENCHMARK_ROWS[100] == (100, 5, 1274, 3, 6)
    assert BENCHMARK_ROWS[200] == (200, 10, 4943, 10, 20)
    assert BENCHMARK_ROWS[400] == (400, 10, 19991, 10, 20)
    assert BENCHMARK_ROWS[600] == (600, 10, 44880, 10, 30)
    assert BENCHMARK_ROWS[800] == (800, 10, 79900, 10, 30)


def test_every_mode_combination_is_acyclic():
    m = generate_random_dag(GeneratorParams(60, 3, 400, seed=4))
    for choice in ("m0", "m1", "off"):
        g = build_composite_graph(m, {mm.id: choice for mm in m.models})
        assert not dfs_has_cycle(g)


def test_same_seed_same_model():
    a = generate_random_dag(GeneratorParams(100, 5, 1274, seed=9))
    b = generate_random_dag(GeneratorParams(100, 5, 1274, seed=9))
    c = generate_random_dag(GeneratorParams(100, 5, 1274, seed=10))
    assert dump_composite(a) == dump_composite(b)
    assert dump_composite(a) != dump_composite(c)


def test_layout_and_safe_modes():
    m = generate_random_dag(GeneratorParams(40, 4, 100, seed=0))
    for i, mm in enumerate(m.models):
        assert len(mm.inputs) == len(mm.outputs) == 5
        assert all(m.port_owner[p] == i for p in mm.inputs + mm.outputs)
        assert mm.safe_mode == "off" and mm.modes["off"] == frozenset()
        for deps in mm.modes.values():
            assert all(m.is_dependency_pair(u, v) for u, v in deps)


def test_zero_ports_gives_empty_model():
    m = generate_random_dag(GeneratorParams(0, 0, 0))
    assert m.num_ports == 0 and m.models == []


@pytest.mark.parametrize("params", [
    GeneratorParams(10, 3, 5),        # uneven split
    GeneratorParams(10, 1, 10_000),   # more edges than an acyclic layout allows
    GeneratorParams(0, 0, 3),
])
def test_infeasible(params):
    with pytest.raises(InfeasibleError):
        generate_random_dag(params)


def test_shaped_params():
    assert shaped_params(200) == GeneratorParams.benchmark(200)
    p = shaped_params(50, seed=2)
    assert (p.num_ports, p.num_models, p.seed) == (50, 5, 2)
    with pytest.raises(InfeasibleError):
        shaped_params(55)
