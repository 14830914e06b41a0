"""Experiment orchestration: adapt-exchange-combine rounds over a topology.

One communication round adapts every agent locally (a fixed number of SGD
mini-batches), then synchronously exchanges intermediate models and, for
the adaptive rule, deltas, then combines. Epochs group rounds; after each
epoch every agent's model is evaluated on the test set. Baselines reuse
the same loop: consensus combines over the self-exclusive neighborhood,
isolated skips the exchange entirely, and centralized is a single-agent
run over the pooled data.
"""
from __future__ import annotations

import math
import os
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import metrics, rules
from .data import (
    BatchSampler,
    LabeledDataset,
    ShardedDataset,
    concat_datasets,
    load_mnist,
    make_synthetic,
    partition,
)
from .errors import MissingDataError, ValidationError
from .model import (
    MlpSpec,
    init_params,
    loss_and_gradient,
    mean_loss,
    params_from_bytes,
    params_to_bytes,
    predict_accuracy,
    sgd_step,
)
from .seeding import substream, substream_int, substream_rng
from .topology import Topology, build_topology, from_descriptor

ALGORITHMS = ("diffusion", "consensus", "centralized", "isolated")
RULES = ("constant", "adaptive")

DATA_DIR_ENV = "DIFFLEARN_DATA"

CHECKPOINT_MAGIC = b"DLCK"
_CHECKPOINT_HEADER = struct.Struct("<IIQI")  # version, num_agents, param_count, epoch


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a run, apart from the master seed's value."""

    algorithm: str = "diffusion"
    rule: str = "constant"
    epochs: int = 30
    rounds_per_epoch: int = 6
    batch_size: int = 10
    local_batches_per_round: int | None = None
    mu: float = 0.01
    gombertz_a: float = 5.0
    seed: int = 0
    topology: str = "line:4"
    data: str = "mnist"
    shard_size: int = 600
    noniid: str = "none"
    classes_per_noniid: int = 5
    disjoint_shards: bool = False
    hidden_dims: tuple[int, ...] = (64, 64)
    divergent_init: bool = False
    eval_subset: int | None = None

    def __post_init__(self):
        if not isinstance(self.hidden_dims, tuple):
            object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))

    def validate(self) -> "RunConfig":
        if self.algorithm not in ALGORITHMS:
            raise ValidationError("algorithm", f"must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.rule not in RULES:
            raise ValidationError("rule", f"must be one of {RULES}, got {self.rule!r}")
        if self.rule == "adaptive" and self.algorithm in ("centralized", "isolated"):
            raise ValidationError(
                "rule", f"adaptive rule needs a combine step; {self.algorithm} has none"
            )
        for name in ("rounds_per_epoch", "batch_size", "shard_size"):
            if getattr(self, name) < 1:
                raise ValidationError(name, f"must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ValidationError("epochs", f"must be >= 0, got {self.epochs}")
        if self.local_batches_per_round is not None and self.local_batches_per_round < 1:
            raise ValidationError(
                "local_batches_per_round", f"must be >= 1, got {self.local_batches_per_round}"
            )
        if self.mu <= 0:
            raise ValidationError("mu", f"must be positive, got {self.mu}")
        if self.gombertz_a <= 0:
            raise ValidationError("gombertz_a", f"must be positive, got {self.gombertz_a}")
        if self.classes_per_noniid < 1:
            raise ValidationError("classes_per_noniid", f"must be >= 1, got {self.classes_per_noniid}")
        if self.seed < 0:
            raise ValidationError("seed", f"must be >= 0, got {self.seed}")
        if self.eval_subset is not None and self.eval_subset < 1:
            raise ValidationError("eval_subset", f"must be >= 1, got {self.eval_subset}")
        if any(h < 1 for h in self.hidden_dims):
            raise ValidationError("hidden_dims", f"all sizes must be >= 1, got {self.hidden_dims}")
        return self

    def to_dict(self) -> dict[str, object]:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    def fingerprint(self) -> str:
        return metrics.config_fingerprint(self.to_dict())


def default_local_batches(shard_len: int, batch_size: int, rounds_per_epoch: int) -> int:
    """Batches per round so one epoch's rounds cover the shard about once."""
    return max(1, math.ceil(shard_len / (batch_size * rounds_per_epoch)))


@dataclass
class AgentState:
    """One agent's mutable position in the protocol."""

    agent_id: int
    w: np.ndarray
    psi: np.ndarray
    delta: np.ndarray
    mu: float
    angle_state: rules.AngleState
    sampler: BatchSampler
    round_stamp: int = -1


@dataclass(frozen=True)
class CommLedger:
    """Parameters transmitted by each agent during one round."""

    sent: Mapping[int, int]

    def total(self) -> int:
        return sum(self.sent.values())


def adapt(agent: AgentState, spec: MlpSpec, num_batches: int) -> AgentState:
    """Run num_batches SGD steps from w; psi is the final iterate, delta = psi - w."""
    if num_batches < 1:
        raise ValueError(f"num_batches must be >= 1, got {num_batches}")
    w = agent.w
    current = w
    for _ in range(num_batches):
        features, labels = agent.sampler.next_batch()
        _, grad = loss_and_gradient(spec, current, features, labels)
        current = sgd_step(current, grad, agent.mu)
    return replace(agent, psi=current, delta=current - w)


def run_round(
    states: Sequence[AgentState],
    topology: Topology,
    config: RunConfig,
    *,
    spec: MlpSpec,
    shard_sizes: Mapping[int, int],
    num_batches: Mapping[int, int],
    round_index: int,
) -> tuple[list[AgentState], CommLedger]:
    """One synchronous adapt-exchange-combine cycle across all agents."""
    adapted = [
        replace(adapt(agent, spec, num_batches[agent.agent_id]), round_stamp=round_index)
        for agent in states
    ]
    param_count = spec.param_count

    if config.algorithm == "isolated" or config.algorithm == "centralized":
        new_states = [replace(a, w=a.psi) for a in adapted]
        return new_states, CommLedger({a.agent_id: 0 for a in adapted})

    per_round = param_count if config.rule == "constant" else 2 * param_count
    include_self = config.algorithm == "diffusion"
    gombertz_params = rules.GombertzParams(config.gombertz_a)
    new_states: list[AgentState] = []
    for agent in adapted:
        neighbors = topology.neighborhood(agent.agent_id, include_self=include_self)
        stale = [l for l in neighbors if adapted[l].round_stamp != round_index]
        if stale:
            raise RuntimeError(f"round {round_index}: stale intermediate models from {stale}")
        psis = {l: adapted[l].psi for l in neighbors}
        sizes = {l: shard_sizes[l] for l in neighbors}
        if config.rule == "constant":
            weights = rules.constant_weights(neighbors, sizes)
            angle_state = agent.angle_state
        else:
            base = rules.constant_weights(neighbors, sizes)
            deltas = {l: adapted[l].delta for l in neighbors}
            mus = {l: adapted[l].mu for l in neighbors}
            grad = rules.neighborhood_gradient(deltas, mus, base)
            raw = {l: rules.gradient_angle(deltas[l], grad) for l in neighbors}
            angle_state = rules.update_smoothed_angle(agent.angle_state, raw)
            weights = rules.adaptive_weights(neighbors, sizes, angle_state.smoothed, gombertz_params)
        combined = rules.combine(psis, weights)
        new_states.append(replace(agent, w=combined, angle_state=angle_state))
    return new_states, CommLedger({a.agent_id: per_round for a in adapted})


# -- config resolution ----------------------------------------------------------


def parse_synthetic_descriptor(descriptor: str) -> dict[str, int]:
    """Parse 'synthetic:train=2400,test=400,classes=10,features=16'."""
    spec = {"train": 2400, "test": 400, "classes": 10, "features": 16}
    body = descriptor[len("synthetic") :].lstrip(":")
    if body:
        for item in body.split(","):
            key, _, value = item.partition("=")
            key = key.strip()
            if key not in spec:
                raise ValidationError("data", f"unknown synthetic field {key!r}")
            try:
                spec[key] = int(value)
            except ValueError:
                raise ValidationError("data", f"synthetic field {key}={value!r} is not an integer")
    if any(v < 1 for v in spec.values()):
        raise ValidationError("data", f"synthetic sizes must be positive, got {spec}")
    return spec


def resolve_data(config: RunConfig) -> tuple[LabeledDataset, LabeledDataset]:
    """Produce the (train pool, test set) named by the config's data descriptor."""
    descriptor = config.data
    if descriptor.startswith("synthetic"):
        spec = parse_synthetic_descriptor(descriptor)
        pool = make_synthetic(
            spec["train"], spec["classes"], spec["features"], substream(config.seed, "data", 0)
        )
        test = make_synthetic(
            spec["test"], spec["classes"], spec["features"], substream(config.seed, "data", 1)
        )
        return pool, test
    if descriptor == "mnist":
        data_dir = os.environ.get(DATA_DIR_ENV)
        if not data_dir:
            raise MissingDataError(
                f"no data directory: pass --data <dir> or set {DATA_DIR_ENV}; the MNIST IDX "
                "files are never downloaded automatically"
            )
        descriptor = data_dir
    return load_mnist(descriptor, "train"), load_mnist(descriptor, "test")


def resolve_topology(config: RunConfig) -> Topology:
    if config.algorithm == "centralized":
        return build_topology(1, [])
    return from_descriptor(config.topology, seed=substream_int(config.seed, "topology"))


def resolve_scenario(
    config: RunConfig, topology: Topology, num_classes: int
) -> tuple[set[int], dict[int, int]]:
    """Decide which agents hold non-IID shards and how many classes each sees.

    Modes: 'none'; 'all' (every agent, exactly classes_per_noniid classes);
    'random' (each agent non-IID with probability 1/2); 'central:K' /
    'edge:K' (the K highest- / lowest-degree agents); or an explicit id
    list like 'ids:0,2'. The randomized modes draw each agent's class
    count uniformly from 1..classes_per_noniid.
    """
    n = topology.num_agents
    cap = min(config.classes_per_noniid, num_classes)
    mode = config.noniid
    rng = substream_rng(config.seed, "scenario")

    def random_counts(agents: Sequence[int]) -> dict[int, int]:
        return {a: int(rng.integers(1, cap + 1)) for a in sorted(agents)}

    if mode == "none":
        return set(), {}
    if mode == "all":
        return set(range(n)), {a: cap for a in range(n)}
    if mode == "random":
        flags = rng.random(n) < 0.5
        agents = [a for a in range(n) if flags[a]]
        return set(agents), random_counts(agents)
    if mode.startswith("central:") or mode.startswith("edge:"):
        kind, _, count_text = mode.partition(":")
        try:
            count = int(count_text)
        except ValueError:
            raise ValidationError("noniid", f"{mode!r} needs an integer agent count")
        if not 1 <= count <= n:
            raise ValidationError("noniid", f"agent count must lie in 1..{n}, got {count}")
        # Central agents are the best-connected ones, edge agents the least;
        # ties break toward the lower agent id in both directions.
        sign = -1 if kind == "central" else 1
        ranked = sorted(range(n), key=lambda a: (sign * topology.degree(a), a))
        agents = ranked[:count]
        return set(agents), random_counts(agents)
    if mode.startswith("ids:"):
        try:
            agents = sorted({int(tok) for tok in mode[len("ids:") :].split(",") if tok.strip()})
        except ValueError:
            raise ValidationError("noniid", f"{mode!r} is not a comma-separated id list")
        if not agents:
            raise ValidationError("noniid", "ids list is empty")
        if any(not 0 <= a < n for a in agents):
            raise ValidationError("noniid", f"agent ids out of range 0..{n - 1}: {agents}")
        return set(agents), {a: cap for a in agents}
    raise ValidationError("noniid", f"unknown mode {mode!r}")


def make_shards(config: RunConfig, topology: Topology, pool: LabeledDataset) -> ShardedDataset:
    noniid_agents, class_counts = resolve_scenario(config, topology, pool.num_classes)
    return partition(
        pool,
        topology.num_agents,
        config.shard_size,
        noniid_agents,
        class_counts if class_counts else config.classes_per_noniid,
        substream(config.seed, "partition"),
        disjoint=config.disjoint_shards,
    )


# -- experiment loops --------------------------------------------------------------


def _build_states(config: RunConfig, spec: MlpSpec, datasets: ShardedDataset) -> list[AgentState]:
    states = []
    for k, shard in enumerate(datasets.shards):
        if config.divergent_init:
            w = init_params(replace(spec, init_seed=substream_int(config.seed, "init", k)))
        else:
            w = init_params(spec)
        states.append(
            AgentState(
                agent_id=k,
                w=w,
                psi=w.copy(),
                delta=np.zeros_like(w),
                mu=config.mu,
                angle_state=rules.fresh_angle_state(),
                sampler=BatchSampler(shard, config.batch_size, substream(config.seed, "batch", k)),
            )
        )
    return states


def _eval_rows(
    epoch: int,
    states: Sequence[AgentState],
    spec: MlpSpec,
    datasets: ShardedDataset,
    eval_set: LabeledDataset,
    cumulative_sent: Mapping[int, int],
) -> list[metrics.RecordRow]:
    rows = []
    for agent in states:
        rows.append(
            metrics.RecordRow(
                epoch=epoch,
                agent=agent.agent_id,
                accuracy=predict_accuracy(spec, agent.w, eval_set),
                loss=mean_loss(spec, agent.w, datasets.shards[agent.agent_id]),
                params_sent=cumulative_sent[agent.agent_id],
            )
        )
    return rows


def run_experiment(
    config: RunConfig,
    datasets: ShardedDataset,
    test: LabeledDataset,
    *,
    topology: Topology | None = None,
    checkpoint_dir=None,
    partial_path=None,
) -> metrics.RunRecord:
    """Execute epochs x rounds of the configured protocol and record evaluations.

    The record gains one row set at epoch 0 (the shared initialization) and
    one per completed epoch. On an error mid-run the rows collected so far
    are flushed to partial_path (when given) before the error propagates.
    """
    config.validate()
    if topology is None:
        topology = resolve_topology(config)
    if topology.num_agents != datasets.num_agents:
        raise ValidationError(
            "topology", f"{topology.num_agents} agents but {datasets.num_agents} shards"
        )
    if config.algorithm == "consensus" and topology.num_agents < 2:
        raise ValidationError("algorithm", "consensus needs at least 2 agents")

    pool_dim = datasets.shards[0].feature_dim
    num_classes = datasets.shards[0].num_classes
    spec = MlpSpec(
        input_dim=pool_dim,
        hidden_dims=config.hidden_dims,
        num_classes=num_classes,
        init_seed=substream_int(config.seed, "init"),
    )
    shard_sizes = datasets.shard_sizes()
    num_batches = {
        k: config.local_batches_per_round
        if config.local_batches_per_round is not None
        else default_local_batches(size, config.batch_size, config.rounds_per_epoch)
        for k, size in shard_sizes.items()
    }
    eval_set = test
    if config.eval_subset is not None and config.eval_subset < len(test):
        chosen = substream_rng(config.seed, "eval").choice(
            len(test), size=config.eval_subset, replace=False
        )
        eval_set = test.subset(np.sort(chosen))

    states = _build_states(config, spec, datasets)
    cumulative = {k: 0 for k in shard_sizes}
    rows = _eval_rows(0, states, spec, datasets, eval_set, cumulative)
    fingerprint = config.fingerprint()

    try:
        round_index = 0
        for epoch in range(1, config.epochs + 1):
            for _ in range(config.rounds_per_epoch):
                round_index += 1
                states, ledger = run_round(
                    states,
                    topology,
                    config,
                    spec=spec,
                    shard_sizes=shard_sizes,
                    num_batches=num_batches,
                    round_index=round_index,
                )
                for k, sent in ledger.sent.items():
                    cumulative[k] += sent
            rows.extend(_eval_rows(epoch, states, spec, datasets, eval_set, cumulative))
            if checkpoint_dir is not None:
                write_checkpoint(
                    Path(checkpoint_dir) / f"epoch{epoch:04d}.ckpt",
                    [s.w for s in states],
                    epoch,
                )
    except Exception:
        if partial_path is not None:
            partial = metrics.RunRecord(
                rows=tuple(rows), fingerprint=fingerprint, seed=config.seed, config=config.to_dict()
            )
            metrics.write_record(partial, partial_path)
        raise

    return metrics.RunRecord(
        rows=tuple(rows), fingerprint=fingerprint, seed=config.seed, config=config.to_dict()
    )


def run_centralized(
    config: RunConfig, pool: LabeledDataset, test: LabeledDataset, **kwargs
) -> metrics.RunRecord:
    """Train one model on the pooled data: a single-agent run with no exchange."""
    datasets = ShardedDataset(
        shards=(pool,), agent_class_sets=(frozenset(range(pool.num_classes)),)
    )
    return run_experiment(config, datasets, test, topology=build_topology(1, []), **kwargs)


def run_from_config(config: RunConfig, **kwargs) -> metrics.RunRecord:
    """Resolve data, topology and shards from the config, then run."""
    config.validate()
    pool, test = resolve_data(config)
    if config.algorithm == "centralized":
        topology = from_descriptor(config.topology, seed=substream_int(config.seed, "topology"))
        shards = make_shards(config, topology, pool)
        return run_centralized(config, concat_datasets(shards.shards), test, **kwargs)
    topology = resolve_topology(config)
    shards = make_shards(config, topology, pool)
    return run_experiment(config, shards, test, topology=topology, **kwargs)


# -- checkpoints --------------------------------------------------------------------


def write_checkpoint(path, params: Sequence[np.ndarray], epoch: int) -> None:
    """All agents' parameter vectors at one epoch, in a small binary container."""
    lengths = {p.shape[0] for p in params}
    if len(lengths) != 1:
        raise ValueError(f"inconsistent parameter lengths {sorted(lengths)}")
    (param_count,) = lengths
    blob = CHECKPOINT_MAGIC + _CHECKPOINT_HEADER.pack(1, len(params), param_count, epoch)
    blob += b"".join(params_to_bytes(p) for p in params)
    Path(path).write_bytes(blob)


def read_checkpoint(path) -> tuple[list[np.ndarray], int]:
    blob = Path(path).read_bytes()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    version, num_agents, param_count, epoch = _CHECKPOINT_HEADER.unpack_from(
        blob, len(CHECKPOINT_MAGIC)
    )
    if version != 1:
        raise ValueError(f"unsupported checkpoint version {version}")
    offset = len(CHECKPOINT_MAGIC) + _CHECKPOINT_HEADER.size
    params = []
    for _ in range(num_agents):
        vec, offset = params_from_bytes(blob, offset)
        if vec.shape[0] != param_count:
            raise ValueError(f"vector length {vec.shape[0]} != header {param_count}")
        params.append(vec)
    return params, epoch
