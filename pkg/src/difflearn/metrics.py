"""Run records: evaluation, Monte-Carlo aggregation, and file persistence.

A RunRecord holds one row per (epoch, agent) with test accuracy, training
loss, and the cumulative number of parameters that agent has transmitted.
Records are written as small versioned CSV files with a JSON config
sidecar, so any other tool can consume them without importing this
package.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import ShardedDataset
from .errors import FingerprintMismatchError, SchemaVersionMismatchError
from .model import MlpSpec, mean_loss

RECORD_HEADER = "#difflearn-record v1"
AGGREGATE_HEADER = "#difflearn-aggregate v1"
RECORD_COLUMNS = "epoch,agent,accuracy,loss,params_sent"
AGGREGATE_COLUMNS = "epoch,mean_accuracy,std_accuracy"


@dataclass(frozen=True)
class RecordRow:
    epoch: int
    agent: int
    accuracy: float
    loss: float
    params_sent: int


@dataclass(frozen=True)
class RunRecord:
    """Full evaluation trace of one run, plus its config identity."""

    rows: tuple[RecordRow, ...]
    fingerprint: str
    seed: int
    config: Mapping[str, object] | None = None

    def epochs(self) -> list[int]:
        return sorted({row.epoch for row in self.rows})

    def network_mean_accuracy(self) -> dict[int, float]:
        """Mean test accuracy over all agents, per epoch."""
        by_epoch: dict[int, list[float]] = {}
        for row in self.rows:
            by_epoch.setdefault(row.epoch, []).append(row.accuracy)
        return {e: float(np.mean(v)) for e, v in sorted(by_epoch.items())}

    def final_mean_accuracy(self) -> float:
        means = self.network_mean_accuracy()
        return means[max(means)]

    def epochs_to_threshold(self, threshold: float) -> int | None:
        """First epoch whose network-mean accuracy reaches the threshold."""
        for epoch, acc in self.network_mean_accuracy().items():
            if acc >= threshold:
                return epoch
        return None

    def total_params_sent(self) -> int:
        last_epoch = max(row.epoch for row in self.rows)
        return sum(row.params_sent for row in self.rows if row.epoch == last_epoch)


@dataclass(frozen=True)
class AggregateRow:
    epoch: int
    mean_accuracy: float
    std_accuracy: float


@dataclass(frozen=True)
class AggregateRecord:
    """Per-epoch mean/std of network-mean accuracy across repetitions."""

    rows: tuple[AggregateRow, ...]
    fingerprint: str
    repetitions: int

    def epochs_to_threshold(self, threshold: float) -> int | None:
        for row in self.rows:
            if row.mean_accuracy >= threshold:
                return row.epoch
        return None

    def final_mean_accuracy(self) -> float:
        return self.rows[-1].mean_accuracy


def config_fingerprint(config: Mapping[str, object]) -> str:
    """Stable 16-hex-digit digest of a config dict, ignoring the seed."""
    stripped = {k: v for k, v in config.items() if k != "seed"}
    canonical = json.dumps(stripped, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def global_objective(
    params: Sequence[np.ndarray], datasets: ShardedDataset, spec: MlpSpec
) -> float:
    """Size-weighted mean of each agent's empirical loss on its own shard."""
    if len(params) != datasets.num_agents:
        raise ValueError(f"{len(params)} models for {datasets.num_agents} shards")
    sizes = [len(shard) for shard in datasets.shards]
    total = sum(sizes)
    return float(
        sum(
            (size / total) * mean_loss(spec, w, shard)
            for w, shard, size in zip(params, datasets.shards, sizes)
        )
    )


def aggregate(records: Sequence[RunRecord]) -> AggregateRecord:
    """Combine repetitions into per-epoch mean/std of network-mean accuracy."""
    if not records:
        raise ValueError("need at least one record to aggregate")
    fingerprint = records[0].fingerprint
    mismatched = [r.fingerprint for r in records if r.fingerprint != fingerprint]
    if mismatched:
        raise FingerprintMismatchError(
            f"records mix configs: {fingerprint} vs {sorted(set(mismatched))}"
        )
    epochs = records[0].epochs()
    if any(r.epochs() != epochs for r in records):
        raise FingerprintMismatchError("records cover different epoch sets")
    means = [r.network_mean_accuracy() for r in records]
    rows = tuple(
        AggregateRow(
            epoch=e,
            mean_accuracy=float(np.mean([m[e] for m in means])),
            std_accuracy=float(np.std([m[e] for m in means])),
        )
        for e in epochs
    )
    return AggregateRecord(rows=rows, fingerprint=fingerprint, repetitions=len(records))


# -- persistence -----------------------------------------------------------------


def config_sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".config.json")


def write_record(record: RunRecord, path) -> None:
    """Whole-file write of the CSV record plus, if present, the config sidecar."""
    lines = [
        RECORD_HEADER,
        f"#fingerprint={record.fingerprint}",
        f"#seed={record.seed}",
        RECORD_COLUMNS,
    ]
    for row in record.rows:
        lines.append(
            f"{row.epoch},{row.agent},{row.accuracy!r},{row.loss!r},{row.params_sent}"
        )
    Path(path).write_text("\n".join(lines) + "\n")
    if record.config is not None:
        sidecar = dict(record.config)
        sidecar["seed"] = record.seed
        config_sidecar_path(path).write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")


def _parse_headers(lines: list[str], expected: str, path) -> dict[str, str]:
    if not lines or lines[0].strip() != expected:
        raise SchemaVersionMismatchError(
            f"{path}: expected header {expected!r}, got {lines[0].strip() if lines else 'empty file'!r}"
        )
    headers = {}
    for line in lines[1:]:
        if not line.startswith("#"):
            break
        key, _, value = line[1:].partition("=")
        headers[key.strip()] = value.strip()
    return headers


def read_record(path) -> RunRecord:
    path = Path(path)
    lines = path.read_text().splitlines()
    headers = _parse_headers(lines, RECORD_HEADER, path)
    rows = []
    seen_columns = False
    for line in lines[1:]:
        if line.startswith("#") or not line.strip():
            continue
        if not seen_columns:
            if line.strip() != RECORD_COLUMNS:
                raise SchemaVersionMismatchError(f"{path}: unexpected columns {line.strip()!r}")
            seen_columns = True
            continue
        epoch, agent, accuracy, loss, sent = line.split(",")
        rows.append(RecordRow(int(epoch), int(agent), float(accuracy), float(loss), int(sent)))
    config = None
    sidecar = config_sidecar_path(path)
    if sidecar.exists():
        config = json.loads(sidecar.read_text())
    return RunRecord(
        rows=tuple(rows),
        fingerprint=headers.get("fingerprint", ""),
        seed=int(headers.get("seed", "0")),
        config=config,
    )


def write_aggregate(record: AggregateRecord, path) -> None:
    lines = [
        AGGREGATE_HEADER,
        f"#fingerprint={record.fingerprint}",
        f"#repetitions={record.repetitions}",
        AGGREGATE_COLUMNS,
    ]
    for row in record.rows:
        lines.append(f"{row.epoch},{row.mean_accuracy!r},{row.std_accuracy!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_aggregate(path) -> AggregateRecord:
    path = Path(path)
    lines = path.read_text().splitlines()
    headers = _parse_headers(lines, AGGREGATE_HEADER, path)
    rows = []
    seen_columns = False
    for line in lines[1:]:
        if line.startswith("#") or not line.strip():
            continue
        if not seen_columns:
            if line.strip() != AGGREGATE_COLUMNS:
                raise SchemaVersionMismatchError(f"{path}: unexpected columns {line.strip()!r}")
            seen_columns = True
            continue
        epoch, mean, std = line.split(",")
        rows.append(AggregateRow(int(epoch), float(mean), float(std)))
    return AggregateRecord(
        rows=tuple(rows),
        fingerprint=headers.get("fingerprint", ""),
        repetitions=int(headers.get("repetitions", "1")),
    )
