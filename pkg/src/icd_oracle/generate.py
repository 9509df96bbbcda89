"""Random acyclic composite models shaped like the benchmark graphs.

Every edge respects a hidden random ranking of the ports, so the composite
is acyclic in its initial mode and in every generated alternate mode.
Dependency edges (own input -> own output) are drawn with probability
`dep_density`; signal edges (any output -> any input, fan-in allowed) make
up the rest of `target_edges`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ComponentModel, CompositeModel

# |V_c|, |M|, |E|, |M_mcr|, |E_mcr|
BENCHMARK_ROWS = {
    100: (100, 5, 1274, 3, 6),
    200: (200, 10, 4943, 10, 20),
    400: (400, 10, 19991, 10, 20),
    600: (600, 10, 44880, 10, 30),
    800: (800, 10, 79900, 10, 30),
}


@dataclass(frozen=True)
class GeneratorParams:
    num_ports: int
    num_models: int
    target_edges: int
    seed: int = 0
    dep_density: float = 0.5

    @classmethod
    def benchmark(cls, size: int, seed: int = 0) -> "GeneratorParams":
        n, m, e, _, _ = BENCHMARK_ROWS[size]
        return cls(n, m, e, seed)


class InfeasibleError(ValueError):
    pass


def generate_random_dag(params: GeneratorParams) -> CompositeModel:
    n, k = params.num_ports, params.num_models
    if n == 0:
        if params.target_edges:
            raise InfeasibleError("no ports to carry edges")
        return CompositeModel()
    if k <= 0 or n % k or (n // k) % 2:
        raise InfeasibleError(f"{n} ports cannot be split evenly into inputs/outputs of {k} models")
    rng = np.random.default_rng(params.seed)
    per = n // k
    half = per // 2

    owner = np.repeat(np.arange(k), per)
    is_input = np.tile(np.r_[np.ones(half, bool), np.zeros(half, bool)], k)
    rank = rng.permutation(n)

    inputs = np.flatnonzero(is_input)
    outputs = np.flatnonzero(~is_input)

    # candidate pairs that respect the hidden ranking
    dep_cands = []
    for m in range(k):
        ins = inputs[owner[inputs] == m]
        outs = outputs[owner[outputs] == m]
        uu, vv = np.meshgrid(ins, outs, indexing="ij")
        keep = rank[uu] < rank[vv]
        dep_cands.append(np.stack([uu[keep], vv[keep]], axis=1))
    oo, ii = np.meshgrid(outputs, inputs, indexing="ij")
    keep = rank[oo] < rank[ii]
    sig_cands = np.stack([oo[keep], ii[keep]], axis=1)

    n_dep = sum(len(c) for c in dep_cands)
    n_sig = len(sig_cands)
    target = params.target_edges
    if target > n_dep + n_sig:
        raise InfeasibleError(
            f"target_edges={target} exceeds acyclic capacity {n_dep + n_sig} for this port layout"
        )
    p_uniform = target / (n_dep + n_sig) if n_dep + n_sig else 0.0
    p_dep = min(p_uniform, params.dep_density)
    p_sig = (target - p_dep * n_dep) / n_sig if n_sig else 0.0
    if p_sig > 1.0:
        p_dep = (target - n_sig) / n_dep
        p_sig = 1.0

    names = []
    for m in range(k):
        names += [f"m{m}.in{j}" for j in range(half)] + [f"m{m}.out{j}" for j in range(half)]

    models = []
    for m in range(k):
        cands = dep_cands[m]
        initial = cands[rng.random(len(cands)) < p_dep]
        alternate = cands[rng.random(len(cands)) < p_dep]
        base = m * per
        models.append(
            ComponentModel(
                id=f"m{m}",
                inputs=list(range(base, base + half)),
                outputs=list(range(base + half, base + per)),
                modes={
                    "m0": frozenset(map(tuple, initial.tolist())),
                    "m1": frozenset(map(tuple, alternate.tolist())),
                    "off": frozenset(),
                },
                initial_mode="m0",
                safe_mode="off",
            )
        )
    signals = sig_cands[rng.random(n_sig) < p_sig]
    order = np.lexsort((signals[:, 1], signals[:, 0])) if len(signals) else []
    signals = [tuple(s) for s in signals[order].tolist()] if len(signals) else []

    return CompositeModel(
        models=models,
        signals=signals,
        port_names=names,
        port_owner=owner.tolist(),
        port_is_input=is_input.tolist(),
        allow_fan_in=True,
    )


def shaped_params(num_ports: int, seed: int = 0) -> GeneratorParams:
    """Benchmark-shaped parameters for any size: the published benchmark rows where they exist,
    otherwise ten ports per model (at most ten models) and |E| ~ |V|^2 / 10."""
    if num_ports in BENCHMARK_ROWS:
        return GeneratorParams.benchmark(num_ports, seed)
    if num_ports % 10:
        raise InfeasibleError("shaped models need a multiple of ten ports")
    k = min(10, num_ports // 10)
    return GeneratorParams(num_ports, k, num_ports * num_ports // 10, seed)
