"""Home of the ``hirex`` command line.

Subcommands: ``ingest``, ``gen-synth``, ``pretrain``, ``train``, ``eval``, ``sweep``
and ``inspect``. Exit codes: 0 on success, 1 for usage errors, 2 for data errors and
3 for numerical failures.
"""

from typing import Optional, Sequence
from dataclasses import replace
from pathlib import Path
import argparse
import logging
import sys
import zipfile
from .config import (
    ABLATIONS,
    MAML_ORDERS,
    TrainConfig,
    apply_values,
    default_seed,
    load_synthetic_spec,
    load_train_config,
)
from .errors import CheckpointError, HirexError, UsageError
from .evaluation import MetricsReport, evaluate
from .kg import FORMATS, KnowledgeGraph, detect_format, load_kg, save_kg
from .params import (
    Checkpoint,
    ParameterStore,
    load_arrays,
    load_checkpoint,
    save_arrays,
    save_checkpoint,
    vocabulary_digest,
)
from .pretrain import pretrain_transe
from .synthetic import generate_synthetic
from .tasks import evaluation_tasks, load_tasks
from .trainer import train
from .util import tsv_row


logger = logging.getLogger(__name__)

SWEEP_DEFAULTS = dict(
    contrastive_weight=(0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5),
    false_contexts=(1, 2, 4, 6),
    k=(1, 3, 5),
)
"""Default sweep values by config key."""
SWEEP_PARAMS = {"lambda": "contrastive_weight", "false_contexts": "false_contexts", "shots": "k"}
"""Sweep parameter names accepted on the command line, by config key."""


class ArgumentParser(argparse.ArgumentParser):
    """Argument parser that raises `UsageError` instead of exiting."""

    def error(self, message):
        """Raise `UsageError`."""
        raise UsageError(f"{self.prog}: {message}")


# Helpers


def _load_graph(args) -> KnowledgeGraph:
    if args.format is None:
        args.format = detect_format(args.data)
    return load_kg(args.data, args.format, seed=_seed(args))


def _seed(args) -> int:
    seed = getattr(args, "seed", None)
    return default_seed() if seed is None else seed


def _overrides(args) -> dict:
    overrides = dict()
    for key, attr in (
        ("seed", "seed"),
        ("max_steps", "steps"),
        ("contrastive_weight", "lambda_"),
        ("false_contexts", "false_contexts"),
        ("k", "shots"),
        ("maml_order", "order"),
        ("workers", "workers"),
        ("dim", "dim"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "ablation", None):
        overrides["ablations"] = tuple(args.ablation)
    for item in getattr(args, "set", None) or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"Expected key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    return overrides


def _train_config(args, **extra) -> TrainConfig:
    ablations = args.ablation or []
    if "no_context" in ablations and args.lambda_ is not None and args.lambda_ > 0:
        raise UsageError("Conflicting flags: --ablation no_context with --lambda > 0")
    return load_train_config(
        args.config, preset=args.preset, overrides=_overrides(args) | extra
    )


def _load_pretrained(path, g: KnowledgeGraph, dim: int):
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "pretrained":
        raise CheckpointError(f"{str(path)!r} does not hold pre-trained tables")
    _check_vocabulary(meta, g, path)
    if arrays["entity"].shape[1] != dim:
        raise CheckpointError(
            f"Pre-trained tables have dimension {arrays['entity'].shape[1]},"
            f" config asks for {dim}"
        )
    return arrays["entity"], arrays["relation"]


def _check_vocabulary(meta, g: KnowledgeGraph, path):
    if (
        meta.get("entity_digest") != vocabulary_digest(g.entities.names)
        or meta.get("relation_digest") != vocabulary_digest(g.relations.names)
    ):
        raise CheckpointError(f"{str(path)!r} was built for a different vocabulary")


def _resolve_checkpoint(path) -> Path:
    path = Path(path)
    if path.is_dir():
        return path / "best.npz"
    if not path.exists() and path.with_suffix(".npz").exists():
        return path.with_suffix(".npz")
    return path


def _train_once(args, g: KnowledgeGraph, config: TrainConfig, log_path: Path) -> Checkpoint:
    entity = relation = None
    if args.pretrained:
        entity, relation = _load_pretrained(args.pretrained, g, config.dim)
    params = ParameterStore.initialize(
        g.num_entities,
        g.num_relation_ids,
        config.dim,
        config.seed,
        entity=entity,
        relation=relation,
    )
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w", encoding="utf-8", newline="\n") as log_file:
        return train(
            g,
            g.splits["train"],
            config,
            params=params,
            log_file=log_file,
            meta=dict(data=str(args.data), data_format=args.format),
        )


def _test_report(g: KnowledgeGraph, checkpoint: Checkpoint, config: TrainConfig, split):
    tasks = evaluation_tasks(
        g, split, config.k, config.candidate_size, config.seed,
        m=config.eval_queries or None,
    )
    return evaluate(checkpoint.store(), g, tasks, config)


# Commands


def cmd_ingest(args) -> int:
    """Validate a dataset and write it in a canonical layout."""
    g = _load_graph(args)
    for key, value in g.summary().items():
        print(f"{key}\t{value}")
    if args.out:
        save_kg(g, args.out, args.out_format)
        logger.info(f"Wrote {args.out_format} data to {args.out!r}")
    return 0


def cmd_gen_synth(args) -> int:
    """Generate a synthetic benchmark."""
    overrides = _overrides(args)
    spec = load_synthetic_spec(args.config, overrides=overrides)
    benchmark = generate_synthetic(spec)
    save_kg(benchmark.graph, args.out, args.out_format)
    with open(Path(args.out) / "rules.tsv", "w", encoding="utf-8", newline="\n") as f:
        for rule in benchmark.rules:
            f.write(tsv_row(rule))
    for key, value in benchmark.graph.summary().items():
        print(f"{key}\t{value}")
    return 0


def cmd_pretrain(args) -> int:
    """Pre-train TransE tables."""
    config = _train_config(args)
    g = _load_graph(args)
    epochs = args.epochs if args.epochs is not None else config.pretrain_epochs
    lr = args.lr if args.lr is not None else config.pretrain_lr
    tables = pretrain_transe(g, config.dim, epochs, lr, config.seed)
    save_arrays(
        args.out,
        dict(entity=tables.entity, relation=tables.relation),
        dict(
            kind="pretrained",
            dim=config.dim,
            epochs=epochs,
            lr=lr,
            seed=config.seed,
            entity_digest=vocabulary_digest(g.entities.names),
            relation_digest=vocabulary_digest(g.relations.names),
        ),
    )
    return 0


def cmd_train(args) -> int:
    """Meta-train and write the best checkpoint, the log and the config."""
    config = _train_config(args)
    g = _load_graph(args)
    out = Path(args.out)
    checkpoint = _train_once(args, g, config, out / "train_log.tsv")
    save_checkpoint(checkpoint, out / "best.npz")
    (out / "config.txt").write_text(config.to_text(), encoding="utf-8")
    print(f"fingerprint\t{config.fingerprint()}")
    print(f"best_step\t{checkpoint.step}")
    if checkpoint.best_mrr is not None:
        print(f"best_valid_mrr\t{checkpoint.best_mrr:.6f}")
    return 0


def cmd_eval(args) -> int:
    """Rank test (or validation) queries with a checkpoint."""
    path = _resolve_checkpoint(args.checkpoint)
    checkpoint = load_checkpoint(path)
    config = apply_values(TrainConfig(), checkpoint.config)
    if args.k is not None:
        config = replace(config, k=args.k)
    if args.workers is not None:
        config = replace(config, workers=args.workers)
    config.validate()
    data = args.data or checkpoint.meta.get("data")
    if data is None:
        raise UsageError("No --data given and the checkpoint does not record its data")
    data_format = args.format or checkpoint.meta.get("data_format")
    g = load_kg(data, data_format, seed=config.seed)
    _check_vocabulary(checkpoint.meta, g, path)
    if args.tasks:
        tasks = load_tasks(g, args.tasks, config.k, config.candidate_size, config.seed)
    else:
        tasks = evaluation_tasks(
            g, args.split, config.k, config.candidate_size, config.seed,
            m=config.eval_queries or None,
        )
    report = evaluate(checkpoint.store(), g, tasks, config, filtered=not args.raw)
    text = report.to_text()
    sys.stdout.write(text)
    out = Path(args.out) if args.out else path.with_name(f"{path.stem}_report.tsv")
    report.write(out)
    return 0


def cmd_sweep(args) -> int:
    """Train and evaluate once per value of one hyperparameter."""
    key = SWEEP_PARAMS[args.param]
    ablations = args.ablation or []
    if "no_context" in ablations and key in ("contrastive_weight", "false_contexts"):
        raise UsageError(f"Conflicting flags: sweeping {args.param!r} with no_context")
    base = _train_config(args)
    values = args.values.split(",") if args.values else SWEEP_DEFAULTS[key]
    g = _load_graph(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = ("param", "value", "mrr", "hits@1", "hits@5", "hits@10", "fingerprint")
    with open(out, "w", encoding="utf-8", newline="\n") as table:
        table.write(tsv_row(header))
        for value in values:
            config = apply_values(base, {key: value}).validate()
            log_path = out.with_name(f"{out.stem}_{key}_{value}_log.tsv")
            checkpoint = _train_once(args, g, config, log_path)
            report: MetricsReport = _test_report(g, checkpoint, config, args.split)
            table.write(
                tsv_row(
                    [args.param, value, *report.summary().values(), report.fingerprint]
                )
            )
            table.flush()
            logger.info(f"{args.param}={value}: test MRR {report.mrr:.4f}")
    return 0


def cmd_inspect(args) -> int:
    """Summarize a data directory or an archive."""
    path = Path(args.path)
    if path.is_file() and zipfile.is_zipfile(path):
        arrays, meta = load_arrays(path)
        print(f"kind\t{meta.get('kind')}")
        for key in ("step", "fingerprint", "data", "num_entities", "num_relations"):
            if key in meta:
                print(f"{key}\t{meta[key]}")
        for name in sorted(arrays):
            print(f"tensor\t{name}\t{'x'.join(map(str, arrays[name].shape))}")
        for step, mrr in meta.get("history", []):
            print(f"history\t{step}\t{mrr:.6f}")
        for key, value in sorted(meta.get("config", dict()).items()):
            print(f"config\t{key}\t{value}")
        return 0
    g = load_kg(path, args.format)
    for key, value in g.summary().items():
        print(f"{key}\t{value}")
    return 0


# Parser


def _add_data_args(parser, *, required=True):
    parser.add_argument("--data", required=required, help="Data file or directory.")
    parser.add_argument(
        "--format", choices=FORMATS, help="Data layout. Detected when omitted."
    )


def _add_train_args(parser):
    parser.add_argument("--config", help="Config file (key = value).")
    parser.add_argument("--preset", help="Named preset.")
    parser.add_argument("--pretrained", help="Archive written by 'pretrain'.")
    parser.add_argument(
        "--ablation", action="append", choices=ABLATIONS, help="Repeatable."
    )
    parser.add_argument("--seed", type=int)
    parser.add_argument("--steps", type=int, help="Maximum outer steps.")
    parser.add_argument("--lambda", dest="lambda_", type=float, help="Contrastive weight.")
    parser.add_argument("--false-contexts", type=int)
    parser.add_argument("--shots", type=int, help="References per task (K).")
    parser.add_argument("--order", choices=MAML_ORDERS)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--dim", type=int)
    parser.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="Any config key."
    )


def build_parser() -> ArgumentParser:
    """The ``hirex`` argument parser."""
    parser = ArgumentParser(prog="hirex", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("ingest", help=cmd_ingest.__doc__)
    _add_data_args(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="Write the data here.")
    p.add_argument("--out-format", choices=FORMATS, default="tsv")
    p.set_defaults(handler=cmd_ingest)

    p = commands.add_parser("gen-synth", help=cmd_gen_synth.__doc__)
    p.add_argument("--config", help="Synthetic spec file (key = value).")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", required=True)
    p.add_argument("--out-format", choices=FORMATS, default="tsv")
    p.set_defaults(handler=cmd_gen_synth)

    p = commands.add_parser("pretrain", help=cmd_pretrain.__doc__)
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_pretrain)

    p = commands.add_parser("train", help=cmd_train.__doc__)
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--out", required=True, help="Output directory.")
    p.set_defaults(handler=cmd_train)

    p = commands.add_parser("eval", help=cmd_eval.__doc__)
    p.add_argument("--checkpoint", required=True)
    _add_data_args(p, required=False)
    task_source = p.add_mutually_exclusive_group()
    task_source.add_argument("--tasks", help="gmatching task file.")
    task_source.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--k", type=int)
    p.add_argument("--workers", type=int)
    ranking = p.add_mutually_exclusive_group()
    ranking.add_argument("--raw", action="store_true", help="Unfiltered ranking.")
    ranking.add_argument("--filtered", action="store_false", dest="raw")
    p.add_argument("--out", help="Report file.")
    p.set_defaults(handler=cmd_eval)

    p = commands.add_parser("sweep", help=cmd_sweep.__doc__)
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument(
        "--param",
        required=True,
        choices=tuple(SWEEP_PARAMS),
    )
    p.add_argument("--values", help="Comma-separated values.")
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--out", required=True, help="Output table.")
    p.set_defaults(handler=cmd_sweep)

    p = commands.add_parser("inspect", help=cmd_inspect.__doc__)
    p.add_argument("path")
    p.add_argument("--format", choices=FORMATS, help="Data layout. Detected when omitted.")
    p.set_defaults(handler=cmd_inspect)
    return parser


def run_command(argv: Sequence[str], /) -> int:
    """Run the command line *argv* (without the program name) and return the exit code."""
    try:
        args = build_parser().parse_args(list(argv))
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return args.handler(args)
    except HirexError as err:
        print(f"hirex: error: {err}", file=sys.stderr)
        return err.exit_code


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Console entry point."""
    return run_command(sys.argv[1:] if argv is None else argv)


__all__ = (
    "build_parser",
    "run_command",
    "main",
)
