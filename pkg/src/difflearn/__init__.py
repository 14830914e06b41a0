"""Deterministic simulator of server-less federated learning over agent graphs.

Agents hold private data shards and a shared model architecture; each
communication round they adapt locally by SGD, exchange intermediate
models with graph neighbors, and combine them with weights from either a
constant shard-size rule or an adaptive gradient-angle rule. Consensus,
centralized, and isolated baselines run through the same engine.
"""
from .data import (
    BatchSampler,
    LabeledDataset,
    ShardedDataset,
    concat_datasets,
    load_idx,
    load_mnist,
    make_synthetic,
    partition,
)
from .engine import (
    AgentState,
    CommLedger,
    RunConfig,
    adapt,
    run_centralized,
    run_experiment,
    run_from_config,
    run_round,
)
from .errors import DifflearnError
from .metrics import (
    AggregateRecord,
    RunRecord,
    aggregate,
    global_objective,
    read_aggregate,
    read_record,
    write_aggregate,
    write_record,
)
from .model import (
    MlpSpec,
    init_params,
    loss_and_gradient,
    predict_accuracy,
    sgd_step,
)
from .rules import (
    AngleState,
    GombertzParams,
    adaptive_weights,
    combine,
    constant_weights,
    gombertz,
    gradient_angle,
    neighborhood_gradient,
    update_smoothed_angle,
)
from .topology import (
    Topology,
    build_topology,
    from_descriptor,
    full_topology,
    generate_random_geometric,
    line_topology,
    load_edge_list,
    ring_topology,
)

__version__ = "0.1.0"

__all__ = [
    "AgentState",
    "AggregateRecord",
    "AngleState",
    "BatchSampler",
    "CommLedger",
    "DifflearnError",
    "GombertzParams",
    "LabeledDataset",
    "MlpSpec",
    "RunConfig",
    "RunRecord",
    "ShardedDataset",
    "Topology",
    "adapt",
    "adaptive_weights",
    "aggregate",
    "build_topology",
    "combine",
    "concat_datasets",
    "constant_weights",
    "from_descriptor",
    "full_topology",
    "generate_random_geometric",
    "global_objective",
    "gombertz",
    "gradient_angle",
    "init_params",
    "line_topology",
    "load_edge_list",
    "load_idx",
    "load_mnist",
    "loss_and_gradient",
    "make_synthetic",
    "neighborhood_gradient",
    "partition",
    "predict_accuracy",
    "read_aggregate",
    "read_record",
    "ring_topology",
    "run_centralized",
    "run_experiment",
    "run_from_config",
    "run_round",
    "sgd_step",
    "update_smoothed_angle",
    "write_aggregate",
    "write_record",
]
