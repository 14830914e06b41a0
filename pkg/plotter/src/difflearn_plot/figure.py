"""Build accuracy-vs-epoch figures from parsed series."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .records import Series, load_series


@dataclass(frozen=True)
class PlotSpec:
    """One figure: which files to draw, how to label them, where to save."""

    paths: tuple[Path, ...]
    labels: tuple[str, ...]
    out: Path
    threshold: float | None = None

    def __post_init__(self) -> None:
        if not self.paths:
            raise ValueError("need at least one record file")
        if len(self.labels) != len(self.paths):
            raise ValueError(
                f"got {len(self.labels)} labels for {len(self.paths)} record files"
            )


def default_labels(paths) -> tuple[str, ...]:
    return tuple(Path(p).stem for p in paths)


def series_payload(spec: PlotSpec) -> dict:
    """Exactly the data the figure draws, as plain JSON-friendly types.

    Rendering backends may change pixel output between versions; this
    payload is the stable way to inspect what was plotted.
    """
    loaded = [load_series(p) for p in spec.paths]
    return {
        "threshold": spec.threshold,
        "series": [
            _series_entry(label, series)
            for label, series in zip(spec.labels, loaded)
        ],
    }


def _series_entry(label: str, series: Series) -> dict:
    return {
        "label": label,
        "epochs": list(series.epochs),
        "mean": list(series.mean),
        "std": list(series.std) if series.std is not None else None,
    }


def render(spec: PlotSpec) -> Path:
    """Draw one curve per input file and save the figure to spec.out."""
    payload = series_payload(spec)
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    try:
        for entry in payload["series"]:
            (line,) = ax.plot(entry["epochs"], entry["mean"], marker=".", label=entry["label"])
            if entry["std"] is not None:
                lower = [m - s for m, s in zip(entry["mean"], entry["std"])]
                upper = [m + s for m, s in zip(entry["mean"], entry["std"])]
                ax.fill_between(
                    entry["epochs"], lower, upper,
                    color=line.get_color(), alpha=0.15, linewidth=0,
                )
        if spec.threshold is not None:
            ax.axhline(spec.threshold, color="gray", linestyle="--", linewidth=1.0)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean test accuracy")
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        fig.savefig(spec.out)
    finally:
        plt.close(fig)
    return Path(spec.out)
