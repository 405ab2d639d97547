"""
Command-line entry point.
Responsibilities: argument parsing, config resolution, wiring services to
files, run manifests and exit codes.

    python -m kglinker synth   --out DIR [--spec FILE] [--seed N]
    python -m kglinker ingest  --facts F [--types F] --out DIR
    python -m kglinker train   --facts F [--types F] --queries F --out DIR [hyperparameter flags]
    python -m kglinker eval    --checkpoint C --facts F [--types F] --queries F --out DIR
    python -m kglinker predict --checkpoint C --facts F [--types F] --source E --target E
    python -m kglinker analyze --report R --by {path-length,parallel-paths} [--bins N] --out DIR

On success the command's summary is printed to stdout as one JSON line.
On failure one JSON line {"error", "exit_code", "detail"} goes to stderr.
"""
import argparse
import json
import os
import sys
from typing import Dict, List, Optional

from . import __version__
from .config import (
    env_threads,
    load_config_file,
    profile_names,
    resolve_config,
    resolve_resume_config,
    resolve_synth_spec,
)
from .errors import KGLinkerError, UsageError
from .graph.query import LabelSet
from .graph.query_graph import extract_subgraph
from .kb import dump_kb, load_kb_files, load_queries_file
from .logging_config import logger
from .model import forward, predict
from .services.eval_service import emit_report, evaluate, load_report, stratify, top_bottom, write_curve
from .services.synth_service import generate, write_dataset
from .services.training_service import check_compatible, config_path, load_checkpoint, train
from .tensor import ops
from .utils.helpers import ensure_dir, input_digests, write_json, write_manifest


def _emit(payload: Dict[str, object]):
    print(json.dumps(payload, sort_keys=True))


def _threads(deterministic: bool) -> int:
    return 1 if deterministic else env_threads()


# -------------------------------------------------
# Commands
# -------------------------------------------------

def cmd_synth(args: argparse.Namespace):
    values = load_config_file(args.spec) if args.spec else {}
    spec = resolve_synth_spec(values, {"seed": args.seed})
    dataset = generate(spec)
    out = ensure_dir(args.out)
    paths = write_dataset(dataset, out)
    write_manifest(
        out, "synth",
        seed=spec.seed,
        configs=[spec],
        inputs=input_digests([args.spec]),
        artifacts=paths,
    )
    _emit({"train": len(dataset.train), "test": len(dataset.test), "facts": len(dataset.kb.facts)})


def cmd_ingest(args: argparse.Namespace):
    kb = load_kb_files(args.facts, args.types)
    out = ensure_dir(args.out)
    paths = {
        "facts": os.path.join(out, "facts.tsv"),
        "types": os.path.join(out, "types.tsv"),
        "stats": os.path.join(out, "stats.json"),
    }
    with open(paths["facts"], "w", encoding="utf-8") as facts, open(paths["types"], "w", encoding="utf-8") as types:
        dump_kb(kb, facts, types)
    stats = kb.stats()
    write_json(paths["stats"], stats)
    write_manifest(out, "ingest", inputs=input_digests([args.facts, args.types]), artifacts=paths)
    _emit(stats)


def _train_overrides(args: argparse.Namespace) -> Dict[str, object]:
    return {
        "seed": args.seed,
        "max_path_length": args.l_max,
        "variant": args.variant,
        "update_order": args.update_order,
        "t_max": args.t_max,
        "dim": args.dim,
        "epochs": args.epochs,
        "steps_per_epoch": args.steps,
        "batch_size": args.batch,
        "lr": args.lr,
        "deterministic": True if args.deterministic else None,
    }


def cmd_train(args: argparse.Namespace):
    file_values = load_config_file(args.config) if args.config else {}
    resume = None
    if args.resume:
        # stored schedule < file < flags; the architecture is the checkpoint's
        resume = load_checkpoint(args.resume)
        model_cfg = resume.model_config
        train_cfg = resolve_resume_config(model_cfg, resume.train_config, file_values, _train_overrides(args))
    else:
        model_cfg, train_cfg = resolve_config(args.profile, file_values, _train_overrides(args))

    kb = load_kb_files(args.facts, args.types)
    queries = load_queries_file(args.queries, kb)
    out = ensure_dir(args.out)
    checkpoint = args.checkpoint or os.path.join(out, "model.kglt")

    result = train(
        kb, queries, model_cfg, train_cfg,
        checkpoint_path=checkpoint,
        resume=resume,
        threads=_threads(train_cfg.deterministic),
    )
    runlog = os.path.join(out, "runlog.csv")
    result.run_log.write_csv(runlog)

    digest = result.run_log.digest()
    write_manifest(
        out, "train",
        seed=train_cfg.seed,
        configs=[result.params.config, train_cfg],
        inputs=input_digests([args.facts, args.types, args.queries, args.config, args.resume]),
        artifacts={"checkpoint": checkpoint, "checkpoint_config": config_path(checkpoint), "runlog": runlog},
        extra={"profile": args.profile, "runlog_digest": digest},
    )
    losses = result.run_log.losses
    _emit({"steps": len(losses), "final_loss": losses[-1] if losses else None, "runlog_digest": digest})


def cmd_eval(args: argparse.Namespace):
    ckpt = load_checkpoint(args.checkpoint)
    kb = load_kb_files(args.facts, args.types)
    queries = load_queries_file(args.queries, kb)
    max_path_length = args.l_max or ckpt.train_config.max_path_length

    report = evaluate(
        kb, queries, ckpt.params, max_path_length,
        threads=_threads(args.deterministic),
    )
    out = ensure_dir(args.out)
    paths = {"report_json": os.path.join(out, "report.json"), "report_csv": os.path.join(out, "report.csv")}
    emit_report(report, paths["report_json"], "json")
    emit_report(report, paths["report_csv"], "csv")

    top, bottom = top_bottom(report.relations)
    logger.info("Best relations", relations=[r.relation for r in top])
    logger.info("Worst relations", relations=[r.relation for r in bottom])

    write_manifest(
        out, "eval",
        seed=ckpt.train_config.seed,
        configs=[ckpt.model_config, ckpt.train_config],
        inputs=input_digests([args.checkpoint, args.facts, args.types, args.queries]),
        artifacts=paths,
        extra={"eval_max_path_length": max_path_length},
    )
    _emit(report.aggregates.model_dump())


def cmd_predict(args: argparse.Namespace):
    ckpt = load_checkpoint(args.checkpoint)
    kb = load_kb_files(args.facts, args.types)
    check_compatible(ckpt.model_config, kb)
    labels = LabelSet.from_names(ckpt.model_config.labels)
    max_path_length = args.l_max or ckpt.train_config.max_path_length

    e_s = kb.entities.lookup(args.source)
    e_t = kb.entities.lookup(args.target)
    qg = extract_subgraph(kb, e_s, e_t, max_path_length)
    logits = forward(qg, ckpt.params, ckpt.model_config).numpy()[0]
    probabilities = ops.softmax(logits)
    ranking, best = predict(logits)

    result = {
        "source": args.source,
        "target": args.target,
        "prediction": labels.name(best),
        "ranking": [
            {"relation": labels.name(int(c)), "probability": float(probabilities[c])}
            for c in ranking[:args.top]
        ],
    }
    if args.out:
        out = ensure_dir(args.out)
        path = write_json(os.path.join(out, "prediction.json"), result)
        write_manifest(
            out, "predict",
            seed=ckpt.train_config.seed,
            configs=[ckpt.model_config, ckpt.train_config],
            inputs=input_digests([args.checkpoint, args.facts, args.types]),
            artifacts={"prediction": path},
            extra={"source": args.source, "target": args.target, "eval_max_path_length": max_path_length},
        )
    _emit(result)


def cmd_analyze(args: argparse.Namespace):
    report = load_report(args.report)
    curve = stratify(report, args.by, args.bins)
    out = ensure_dir(args.out)
    path = os.path.join(out, f"curve_{args.by}.csv")
    write_curve(curve, path)
    write_manifest(
        out, "analyze",
        inputs=input_digests([args.report]),
        artifacts={"curve": path},
        extra={"by": args.by, "bins": args.bins},
    )
    _emit({"points": len(curve.points), "omitted_bins": len(curve.omitted_bins), "curve": path})


# -------------------------------------------------
# Parser
# -------------------------------------------------

class ArgumentParser(argparse.ArgumentParser):
    """Reports usage errors as UsageError instead of printing usage and exiting."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _add_kb_args(p: ArgumentParser):
    p.add_argument("--facts", required=True, help="Tab-separated facts file")
    p.add_argument("--types", default=None, help="Tab-separated entity types file")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="kglinker", description="Relation prediction over knowledge-base subgraphs")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Generate a synthetic KB with planted composition rules")
    p.add_argument("--spec", default=None, help="Key-value synth spec file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("ingest", help="Load a KB, write it in canonical form plus statistics")
    _add_kb_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("train", help="Train a relation predictor")
    _add_kb_args(p)
    p.add_argument("--queries", required=True)
    p.add_argument("--config", default=None, help="Key-value config file")
    p.add_argument("--profile", choices=profile_names(), default="desk")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--l-max", dest="l_max", type=int, default=None)
    p.add_argument("--variant", choices=["relation", "mean", "sum"], default=None)
    p.add_argument("--update-order", dest="update_order", choices=["jacobi", "gauss_seidel"], default=None)
    p.add_argument("--t-max", dest="t_max", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--steps", type=int, default=None, help="Optimizer steps per epoch")
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--checkpoint", default=None, help="Checkpoint path (default OUT/model.kglt)")
    p.add_argument("--resume", default=None, help="Checkpoint to resume from")
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="Score a query file and write reports")
    _add_kb_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--l-max", dest="l_max", type=int, default=None)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("predict", help="Rank relations for one entity pair")
    _add_kb_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--l-max", dest="l_max", type=int, default=None)
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("analyze", help="Stratify a report by path statistics")
    p.add_argument("--report", required=True)
    p.add_argument("--by", choices=["path-length", "parallel-paths"], required=True)
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_analyze)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(json.dumps(e.to_dict()), file=sys.stderr)
        return e.exit_code

    try:
        args.handler(args)
        return 0
    except KGLinkerError as e:
        logger.error("Command failed", command=args.command, error=e.code, detail=e.detail)
        print(json.dumps(e.to_dict()), file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception("Unexpected failure", command=args.command)
        print(json.dumps({"error": "crash", "exit_code": 1, "detail": str(e)}), file=sys.stderr)
        return 1
