"""Reader for version-1 experiment record and aggregate files.

The formats are small headed CSVs. A record file carries one row per
(epoch, agent) with that agent's test accuracy; an aggregate file carries
one row per epoch with the mean and standard deviation of the network
mean accuracy over repetitions. Either kind reduces to the same thing
for plotting: a mean-accuracy-per-epoch series, with a spread band when
repetitions are available.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

RECORD_HEADER = "#difflearn-record v1"
AGGREGATE_HEADER = "#difflearn-aggregate v1"
_RECORD_COLUMNS = "epoch,agent,accuracy,loss,params_sent"
_AGGREGATE_COLUMNS = "epoch,mean_accuracy,std_accuracy"


class PlotError(Exception):
    """Any condition that prevents producing a figure."""


class SchemaVersionMismatchError(PlotError):
    """The file is not a version-1 record or aggregate."""


@dataclass(frozen=True)
class Series:
    """Mean accuracy per epoch, plus a std band when repetitions exist."""

    epochs: tuple[int, ...]
    mean: tuple[float, ...]
    std: tuple[float, ...] | None

    def __post_init__(self) -> None:
        if len(self.mean) != len(self.epochs):
            raise ValueError("mean and epochs differ in length")
        if self.std is not None and len(self.std) != len(self.epochs):
            raise ValueError("std and epochs differ in length")
        if list(self.epochs) != sorted(set(self.epochs)):
            raise ValueError("epochs must be strictly increasing")


def _data_lines(lines: list[str], columns: str, path: Path) -> list[list[str]]:
    body = [line for line in lines[1:] if line and not line.startswith("#")]
    if not body or body[0] != columns:
        raise SchemaVersionMismatchError(f"{path}: expected column header {columns!r}")
    rows = []
    width = columns.count(",") + 1
    for number, line in enumerate(body[1:], start=2):
        fields = line.split(",")
        if len(fields) != width:
            raise PlotError(f"{path}: line {number} has {len(fields)} fields, expected {width}")
        rows.append(fields)
    if not rows:
        raise PlotError(f"{path}: no data rows")
    return rows


def load_series(path) -> Series:
    """Parse one record or aggregate file into a plottable series."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise SchemaVersionMismatchError(f"{path}: empty file")

    try:
        if lines[0] == RECORD_HEADER:
            by_epoch: dict[int, list[float]] = {}
            for fields in _data_lines(lines, _RECORD_COLUMNS, path):
                by_epoch.setdefault(int(fields[0]), []).append(float(fields[2]))
            epochs = tuple(sorted(by_epoch))
            mean = tuple(sum(by_epoch[e]) / len(by_epoch[e]) for e in epochs)
            return Series(epochs=epochs, mean=mean, std=None)
        if lines[0] == AGGREGATE_HEADER:
            rows = sorted(
                (int(f[0]), float(f[1]), float(f[2]))
                for f in _data_lines(lines, _AGGREGATE_COLUMNS, path)
            )
            return Series(
                epochs=tuple(r[0] for r in rows),
                mean=tuple(r[1] for r in rows),
                std=tuple(r[2] for r in rows),
            )
    except ValueError as exc:
        raise PlotError(f"{path}: {exc}") from exc
    raise SchemaVersionMismatchError(f"{path}: unrecognized header {lines[0]!r}")
