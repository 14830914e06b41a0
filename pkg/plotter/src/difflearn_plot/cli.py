"""Command-line entry point for rendering record files."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .figure import PlotSpec, default_labels, render, series_payload
from .records import PlotError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="difflearn-plot",
        description="Plot mean test accuracy versus epoch from difflearn "
        "record or aggregate files, one curve per file.",
    )
    parser.add_argument("records", nargs="+", help="record or aggregate CSV files")
    parser.add_argument("--out", required=True, help="output image path (.png, .svg, .pdf)")
    parser.add_argument("--labels",
                        help="comma-separated legend labels, one per file (default: file stems)")
    parser.add_argument("--threshold", type=float,
                        help="draw a horizontal line at this accuracy")
    parser.add_argument("--dump-data",
                        help="also write the plotted series to this path as JSON")
    return parser


def _parse_labels(text: str | None, paths) -> tuple[str, ...]:
    if text is None:
        return default_labels(paths)
    return tuple(token.strip() for token in text.split(","))


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_help()
        return 0
    namespace = parser.parse_args(argv)
    try:
        spec = PlotSpec(
            paths=tuple(Path(p) for p in namespace.records),
            labels=_parse_labels(namespace.labels, namespace.records),
            out=Path(namespace.out),
            threshold=namespace.threshold,
        )
        if namespace.dump_data is not None:
            payload = series_payload(spec)
            Path(namespace.dump_data).write_text(json.dumps(payload, indent=2) + "\n")
        render(spec)
    except (PlotError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
