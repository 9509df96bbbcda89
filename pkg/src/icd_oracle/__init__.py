"""Online detection of instantaneous cycles in mode-switching composite models."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

from .closure import MERSENNE_61, PathCountClosure, recompute_tc, tc_delete, tc_insert, tc_query
from .generate import GeneratorParams, generate_random_dag, shaped_params
from .harness import ScenarioConfig, run_scenario, sweep_partitions, sweep_period, sweep_type_mix
from .model import CompositeModel, EdgeOp, build_composite_graph, load_composite
from .oracle import ModeChangeRequest, Oracle, OracleConfig
from .reduction import make_partitioning, update_tr
from .scenarios import workpiece_scenario

__all__ = [
    "MERSENNE_61", "PathCountClosure", "recompute_tc", "tc_delete", "tc_insert", "tc_query",
    "GeneratorParams", "generate_random_dag", "shaped_params",
    "ScenarioConfig", "run_scenario", "sweep_partitions", "sweep_period", "sweep_type_mix",
    "CompositeModel", "EdgeOp", "build_composite_graph", "load_composite",
    "ModeChangeRequest", "Oracle", "OracleConfig",
    "make_partitioning", "update_tr", "workpiece_scenario",
]
