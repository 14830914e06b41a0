"""Command-line front end: run experiments and compare their records.

Configuration merges in a fixed precedence: built-in defaults, then the
chosen preset, then a JSON config file, then explicit flags. Each run
writes one CSV record per repetition plus one aggregate file.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

from . import metrics
from .engine import RunConfig, run_from_config
from .errors import DifflearnError, ValidationError

DEFAULT_THRESHOLD = 0.85
DEFAULT_OUT_DIR = "runs"


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    config: RunConfig
    repetitions: int
    description: str


_MNIST_BASE = RunConfig(
    algorithm="diffusion",
    rule="constant",
    epochs=30,
    rounds_per_epoch=6,
    batch_size=10,
    mu=0.01,
    gombertz_a=5.0,
    data="mnist",
    shard_size=600,
    noniid="random",
    classes_per_noniid=5,
)

PRESETS = {
    p.name: p
    for p in (
        ExperimentPreset(
            name="mnist-n4-noniid",
            config=replace(_MNIST_BASE, topology="line:4"),
            repetitions=10,
            description="4-agent line network, randomized non-IID shards",
        ),
        ExperimentPreset(
            name="mnist-n20-noniid",
            config=replace(_MNIST_BASE, topology="rgg:20:0.35:7"),
            repetitions=10,
            description="20-agent random geometric network, randomized non-IID shards",
        ),
        ExperimentPreset(
            name="mnist-n20-central5",
            config=replace(_MNIST_BASE, topology="rgg:20:0.35:7", noniid="central:5"),
            repetitions=10,
            description="20 agents, the 5 best-connected hold non-IID shards",
        ),
        ExperimentPreset(
            name="mnist-n20-edge5",
            config=replace(_MNIST_BASE, topology="rgg:20:0.35:7", noniid="edge:5"),
            repetitions=10,
            description="20 agents, the 5 least-connected hold non-IID shards",
        ),
        ExperimentPreset(
            name="synthetic-smoke",
            config=RunConfig(
                algorithm="diffusion",
                rule="adaptive",
                epochs=3,
                rounds_per_epoch=2,
                batch_size=10,
                mu=0.05,
                topology="line:4",
                data="synthetic:train=800,test=200,classes=5,features=8",
                shard_size=100,
                noniid="random",
                classes_per_noniid=3,
                hidden_dims=(16, 16),
            ),
            repetitions=1,
            description="seconds-fast synthetic run for CI and smoke checks",
        ),
    )
}

# CLI flag name -> RunConfig field it sets.
_FLAG_FIELDS = {
    "algorithm": "algorithm",
    "rule": "rule",
    "epochs": "epochs",
    "rounds": "rounds_per_epoch",
    "batch_size": "batch_size",
    "local_batches": "local_batches_per_round",
    "mu": "mu",
    "gombertz_a": "gombertz_a",
    "seed": "seed",
    "topology": "topology",
    "data": "data",
    "shard_size": "shard_size",
    "noniid": "noniid",
    "classes_per_noniid": "classes_per_noniid",
    "disjoint_shards": "disjoint_shards",
    "hidden_dims": "hidden_dims",
    "divergent_init": "divergent_init",
    "eval_subset": "eval_subset",
}


def _parse_hidden_dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma-separated integer list")
    if not dims:
        raise argparse.ArgumentTypeError("hidden dims list is empty")
    return dims


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="difflearn",
        description="Deterministic simulator of server-less federated learning "
        "with constant and adaptive combination weights.",
    )
    sub = parser.add_subparsers(dest="command")

    run = sub.add_parser(
        "run",
        help="run an experiment and write record files",
        description="Run one experiment configuration for one or more seeded repetitions.",
    )
    d = RunConfig()
    run.add_argument("--preset", help="start from a named preset: " + ", ".join(sorted(PRESETS)))
    run.add_argument("--config", help="JSON file of config fields (overridden by flags)")
    run.add_argument("--seed", type=int, help=f"master seed (default {d.seed})")
    run.add_argument("--reps", type=int, help="repetitions with seeds seed, seed+1, ... (default 1 or preset)")
    run.add_argument("--algorithm", choices=["diffusion", "consensus", "centralized", "isolated"],
                     help=f"protocol to run (default {d.algorithm})")
    run.add_argument("--rule", choices=["constant", "adaptive"],
                     help=f"combination weight rule (default {d.rule})")
    run.add_argument("--epochs", type=int, help=f"training epochs E (default {d.epochs})")
    run.add_argument("--rounds", type=int, help=f"communication rounds per epoch T (default {d.rounds_per_epoch})")
    run.add_argument("--batch-size", type=int, help=f"SGD mini-batch size b (default {d.batch_size})")
    run.add_argument("--local-batches", type=int,
                     help="SGD batches per agent per round (default: shard size / (b*T), rounded up)")
    run.add_argument("--mu", type=float, help=f"SGD step size (default {d.mu})")
    run.add_argument("--gombertz-a", type=float,
                     help=f"scale of the adaptive angle score (default {d.gombertz_a})")
    run.add_argument("--topology",
                     help="edge-list file path, or line:N | ring:N | full:N | rgg:N:RADIUS[:SEED] "
                     f"(default {d.topology})")
    run.add_argument("--data",
                     help="data directory with MNIST IDX files, or "
                     "synthetic:train=..,test=..,classes=..,features=.. "
                     "(default: $DIFFLEARN_DATA)")
    run.add_argument("--shard-size", type=int, help=f"samples per agent D_k (default {d.shard_size})")
    run.add_argument("--noniid",
                     help="none | all | random | central:K | edge:K | ids:0,2,... "
                     f"(default {d.noniid})")
    run.add_argument("--classes-per-noniid", type=int,
                     help=f"class budget c of non-IID agents (default {d.classes_per_noniid})")
    run.add_argument("--disjoint-shards", action="store_const", const=True,
                     help="forbid the same pool sample appearing in two shards")
    run.add_argument("--hidden-dims", type=_parse_hidden_dims,
                     help="comma-separated hidden layer sizes (default "
                     + ",".join(str(h) for h in d.hidden_dims) + ")")
    run.add_argument("--divergent-init", action="store_const", const=True,
                     help="give each agent its own random initialization")
    run.add_argument("--eval-subset", type=int,
                     help="evaluate on a fixed seeded subset of the test set, for speed")
    run.add_argument("--out", default=DEFAULT_OUT_DIR, help="output directory (default %(default)s)")
    run.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                     help="accuracy threshold reported after the run (default %(default)s)")
    run.add_argument("--checkpoint-dir", help="also write per-epoch model checkpoints here")

    compare = sub.add_parser(
        "compare",
        help="tabulate epochs-to-threshold across aggregate records",
        description="Read two or more aggregate records and print a side-by-side summary.",
    )
    compare.add_argument("records", nargs="+", help="aggregate record files")
    compare.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                         help="accuracy threshold (default %(default)s)")
    return parser


def parse_config(tokens: list[str], config_file=None) -> RunConfig:
    """Resolve a RunConfig from `run` flags plus an optional JSON file."""
    namespace = build_parser().parse_args(["run", *tokens])
    if config_file is not None and namespace.config is None:
        namespace.config = str(config_file)
    return _merge_config(namespace)


def _merge_config(namespace: argparse.Namespace) -> RunConfig:
    if namespace.preset is not None:
        preset = PRESETS.get(namespace.preset)
        if preset is None:
            raise ValidationError(
                "preset", f"unknown preset {namespace.preset!r}; available: " + ", ".join(sorted(PRESETS))
            )
        config = preset.config
    else:
        config = RunConfig()
    if namespace.config is not None:
        path = Path(namespace.config)
        if not path.exists():
            raise ValidationError("config", f"file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError("config", f"{path} is not valid JSON: {exc}")
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(loaded) - known)
        if unknown:
            raise ValidationError("config", f"unknown fields in {path}: {unknown}")
        config = replace(config, **loaded)
    overrides = {
        field: getattr(namespace, flag)
        for flag, field in _FLAG_FIELDS.items()
        if getattr(namespace, flag, None) is not None
    }
    if overrides:
        config = replace(config, **overrides)
    return config.validate()


def _default_reps(namespace: argparse.Namespace) -> int:
    if namespace.reps is not None:
        if namespace.reps < 1:
            raise ValidationError("reps", f"must be >= 1, got {namespace.reps}")
        return namespace.reps
    if namespace.preset is not None and namespace.preset in PRESETS:
        return PRESETS[namespace.preset].repetitions
    return 1


def execute_runs(
    config: RunConfig,
    base_name: str,
    repetitions: int,
    out_dir,
    threshold: float = DEFAULT_THRESHOLD,
    checkpoint_dir=None,
    echo=print,
) -> list[Path]:
    """Run `repetitions` seeded repetitions, write records plus one aggregate."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    written: list[Path] = []
    for rep in range(repetitions):
        rep_config = replace(config, seed=config.seed + rep)
        ckpt = None
        if checkpoint_dir is not None:
            ckpt = Path(checkpoint_dir) / f"rep{rep:02d}"
            ckpt.mkdir(parents=True, exist_ok=True)
        path = out / f"{base_name}-rep{rep:02d}.csv"
        record = run_from_config(rep_config, checkpoint_dir=ckpt, partial_path=path)
        metrics.write_record(record, path)
        records.append(record)
        written.append(path)
        echo(f"wrote {path} (final mean accuracy {record.final_mean_accuracy():.4f})")
    aggregate = metrics.aggregate(records)
    agg_path = out / f"{base_name}-aggregate.csv"
    metrics.write_aggregate(aggregate, agg_path)
    written.append(agg_path)
    reached = aggregate.epochs_to_threshold(threshold)
    reached_text = str(reached) if reached is not None else "not reached"
    echo(
        f"wrote {agg_path} ({aggregate.repetitions} reps, final mean accuracy "
        f"{aggregate.final_mean_accuracy():.4f}, epochs to {threshold:g}: {reached_text})"
    )
    return written


def run_preset(
    name: str,
    seed: int | None = None,
    repetitions: int | None = None,
    out_dir=DEFAULT_OUT_DIR,
    threshold: float = DEFAULT_THRESHOLD,
    echo=print,
) -> list[Path]:
    """Run a named preset end to end; returns the written record paths."""
    preset = PRESETS.get(name)
    if preset is None:
        raise ValidationError("preset", f"unknown preset {name!r}; available: " + ", ".join(sorted(PRESETS)))
    config = preset.config if seed is None else replace(preset.config, seed=seed)
    reps = preset.repetitions if repetitions is None else repetitions
    return execute_runs(config, name, reps, out_dir, threshold=threshold, echo=echo)


def _cmd_run(namespace: argparse.Namespace) -> int:
    config = _merge_config(namespace)
    reps = _default_reps(namespace)
    base_name = namespace.preset if namespace.preset is not None else "run"
    execute_runs(
        config,
        base_name,
        reps,
        namespace.out,
        threshold=namespace.threshold,
        checkpoint_dir=namespace.checkpoint_dir,
    )
    return 0


def _cmd_compare(namespace: argparse.Namespace) -> int:
    if len(namespace.records) < 2:
        raise ValidationError("records", "compare needs at least two aggregate records")
    aggregates = [(Path(p), metrics.read_aggregate(p)) for p in namespace.records]
    epoch_sets = [{row.epoch for row in agg.rows} for _, agg in aggregates]
    common = set.intersection(*epoch_sets)
    if not common:
        raise ValidationError("records", "records share no epochs")
    if any(s != common for s in epoch_sets):
        print("warning: records cover different epoch ranges; comparing the intersection",
              file=sys.stderr)
    last = max(common)
    threshold = namespace.threshold
    name_width = max(len(p.stem) for p, _ in aggregates)
    print(f"{'record':<{name_width}}  epochs-to-{threshold:g}  final-accuracy")
    for path, agg in aggregates:
        by_epoch = {row.epoch: row.mean_accuracy for row in agg.rows}
        reached = next((e for e in sorted(common) if by_epoch[e] >= threshold), None)
        reached_text = str(reached) if reached is not None else "-"
        print(f"{path.stem:<{name_width}}  {reached_text:>15}  {by_epoch[last]:>14.4f}")
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_help()
        return 0
    namespace = parser.parse_args(argv)
    try:
        if namespace.command == "run":
            return _cmd_run(namespace)
        if namespace.command == "compare":
            return _cmd_compare(namespace)
    except DifflearnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    parser.print_help()
    return 0


if __name__ == "__main__":
    sys.exit(main())
