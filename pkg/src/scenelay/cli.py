"""``scenelay`` command line: build-dataset, train, predict, eval, gradcheck, audit.

Exit codes: 0 success, 1 a check failed, 2 bad flags or missing inputs.
Relative input paths that do not exist are looked up under ``$SCENELAY_DATA``.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .alignment import (
    BANNED_ACTIONS_FILE, DEFAULT_THRESHOLD, ThresholdScope, audit_sample, build_dataset, load_banned_actions,
    load_captions, load_dataset, read_jsonl, save_dataset, write_jsonl,
)
from .embeddings import load_table
from .encoders import load_store
from .metrics import aggregate, evaluate, format_table
from .model import EncoderKind, InputMode, ModelConfig, encode_instances, load_checkpoint, predict
from .training import (
    GRADCHECK_TOL, CVResult, FoldResult, TrainConfig, cross_validate, gradient_check, predict_encoded, train_fold,
    write_run,
)

log = logging.getLogger("scenelay")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flag values or missing inputs (exit code 2)."""


def data_dir() -> Path:
    return Path(os.environ.get("SCENELAY_DATA", "."))


def resolve_input(path: str | None, default_name: str | None = None) -> Path:
    if path is None:
        if default_name is None:
            raise UsageError("missing required input path")
        path = default_name
    p = Path(path)
    if not p.exists() and not p.is_absolute():
        alt = data_dir() / p
        if alt.exists():
            return alt
    if not p.exists():
        raise UsageError(f"input not found: {path}")
    return p


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path: Path, command: str, config: dict, inputs: dict[str, Path]) -> None:
    """Record what is about to run; written before any long computation."""
    doc = {
        "command": command,
        "config": config,
        "inputs": {k: {"path": str(v), "sha256": sha256(v)} for k, v in inputs.items()},
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n")


def _load_table(path: Path, dim: int):
    try:
        return load_table(path, dim)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from exc


# -- subcommands -------------------------------------------------------------


def cmd_build_dataset(args) -> int:
    if not 0.0 <= args.threshold <= 1.0:
        raise UsageError(f"--threshold must be in [0, 1], got {args.threshold}")
    triplets = resolve_input(args.triplets, "triplets.jsonl")
    captions = resolve_input(args.captions, "captions.jsonl")
    embeddings = resolve_input(args.embeddings, "embeddings.txt")
    banned_path = resolve_input(args.banned_actions) if args.banned_actions else BANNED_ACTIONS_FILE
    out = Path(args.out)
    config = {
        "threshold": args.threshold, "threshold_scope": args.threshold_scope, "dim": args.dim,
        "banned_actions": str(banned_path), "seed": args.seed, "jobs": args.jobs, "out": str(out),
    }
    write_manifest(out.with_name(out.name + ".manifest.json"), "build-dataset", config,
                   {"triplets": triplets, "captions": captions, "embeddings": embeddings, "banned_actions": banned_path})
    table = _load_table(embeddings, args.dim)
    instances, report = build_dataset(
        read_jsonl(triplets), load_captions(captions), table, args.threshold,
        load_banned_actions(banned_path), ThresholdScope(args.threshold_scope), jobs=args.jobs,
    )
    save_dataset(instances, out)
    doc = report.to_json()
    doc["embedding_load"] = vars(table.stats)
    text = json.dumps(doc, indent=2) + "\n"
    if args.report:
        Path(args.report).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _model_config(args, embed_dim: int, store_dim: int | None) -> ModelConfig:
    mode, enc = InputMode(args.mode), EncoderKind(args.encoder)
    if mode is InputMode.TRIPLET and enc is not EncoderKind.AVG:
        raise UsageError("--mode triplet does not use a caption encoder; drop --encoder")
    return ModelConfig(
        mode=mode, encoder=enc, embed_dim=embed_dim, cap_dim=args.cap_dim, zc_dim=args.zc_dim, zh_dim=args.zh_dim,
        lstm_hidden=args.lstm_hidden, store_dim=store_dim if mode is not InputMode.TRIPLET else None,
        trainable_embeddings=args.trainable_embeddings,
    )


def _load_store_arg(args, needed: bool):
    if not needed:
        return None
    if not args.store:
        raise UsageError("--encoder precomputed needs --store")
    return load_store(resolve_input(args.store))


def cmd_train(args) -> int:
    if not 0.0 < args.split < 1.0:
        raise UsageError("--split must be in (0, 1)")
    dataset = resolve_input(args.dataset, "dataset.jsonl")
    embeddings = resolve_input(args.embeddings, "embeddings.txt")
    needs_store = args.encoder == EncoderKind.PRECOMPUTED.value and args.mode != InputMode.TRIPLET.value
    if args.mode == InputMode.TRIPLET.value and args.encoder != EncoderKind.AVG.value:
        raise UsageError("--mode triplet does not use a caption encoder; drop --encoder")
    store = _load_store_arg(args, needs_store)
    try:
        cfg = TrainConfig(
            model=_model_config(args, args.dim, store.dim if store else None),
            epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, rho=args.rho, eps=args.eps,
            clip=args.clip, folds=args.folds, seed=args.seed, group_by_image=args.group_by_image,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    run = Path(args.out)
    inputs = {"dataset": dataset, "embeddings": embeddings}
    if store is not None:
        inputs["store"] = resolve_input(args.store)
    write_manifest(run / "manifest.json", "train", {**cfg.to_json(), "no_cv": args.no_cv, "split": args.split}, inputs)
    table = _load_table(embeddings, args.dim)
    instances = load_dataset(dataset)
    if args.no_cv:
        result = _single_split(instances, cfg, table, store, args.split)
    else:
        result = cross_validate(instances, cfg, table, store, jobs=args.jobs, keep_models=True)
    write_run(run, cfg, result)
    if result.skipped:
        log.warning("%d instances skipped (OOV)", len(result.skipped))
    print(format_table([(f"fold {r.fold}", r.report) for r in result.folds] + [("mean", result.aggregate)], "Run"))
    return EXIT_OK


def _single_split(instances, cfg, table, store, split) -> CVResult:
    data = encode_instances(instances, cfg.model, table, store)
    perm = np.random.default_rng(cfg.seed).permutation(len(data))
    cut = int(round(split * len(data)))
    if cut < 1 or cut >= len(data) - 1:
        raise UsageError("split leaves an empty train or test set")
    vocab = list(instances) if cfg.model.trainable_embeddings else []
    model, losses = train_fold(data.take(np.sort(perm[:cut])), cfg, table, fold=0, vocab_instances=vocab)
    test = data.take(np.sort(perm[cut:]))
    report = evaluate(predict_encoded(model, test), test.o_box, test.s_box)
    return CVResult([FoldResult(0, report, losses, test.index, model)], aggregate([report]), data.skipped)


def cmd_predict(args) -> int:
    ckpt = resolve_input(args.checkpoint)
    dataset = resolve_input(args.dataset, "dataset.jsonl")
    embeddings = resolve_input(args.embeddings, "embeddings.txt")
    doc = json.loads(ckpt.read_text())
    dim = args.dim or doc["config"]["embed_dim"]
    cfg = ModelConfig(**doc["config"])
    store = _load_store_arg(args, cfg.encoder is EncoderKind.PRECOMPUTED and cfg.uses_caption)
    table = _load_table(embeddings, dim)
    model, _ = load_checkpoint(ckpt, table)
    records = predict(load_dataset(dataset), model, store)
    if args.out:
        write_jsonl(records, args.out)
    else:
        write_jsonl(records, sys.stdout)
    return EXIT_OK


def cmd_eval(args) -> int:
    path = resolve_input(args.predictions)
    recs = list(read_jsonl(path))
    try:
        p = np.array([r["pred_box"] for r in recs], dtype=np.float64)
        g = np.array([r["gold_box"] for r in recs], dtype=np.float64)
        s = np.array([r["subject_box"] for r in recs], dtype=np.float64)
    except KeyError as exc:
        raise UsageError(f"{path}: prediction records need {exc}") from exc
    if len(recs) < 2:
        raise UsageError("need at least 2 predictions")
    report = evaluate(p, g, s)
    print(format_table([(path.stem, report)]))
    text = json.dumps(report.to_json(), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    worst = 0.0
    for enc in args.encoder or ["avg", "bilstm"]:
        for mode in args.mode or ["caption"]:
            for seed in args.seeds:
                r = gradient_check(enc, mode, seed, args.n_params, args.trainable_embeddings)
                status = "ok" if r.passed else "FAIL"
                print(f"{enc:<12}{mode:<18}seed={seed:<3}max_rel_err={r.max_rel_err:.3e} "
                      f"at {r.worst_param}{list(r.worst_index)} ({r.n_checked} checked) {status}")
                worst = max(worst, r.max_rel_err)
    return EXIT_OK if worst < GRADCHECK_TOL else EXIT_FAILED


def cmd_audit(args) -> int:
    dataset = load_dataset(resolve_input(args.dataset, "dataset.jsonl"))
    if not 0 <= args.n <= len(dataset):
        raise UsageError(f"--n must be between 0 and {len(dataset)}")
    audit_sample(dataset, args.n, args.seed, args.out)
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scenelay", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-dataset", help="align triplets to captions")
    b.add_argument("--triplets")
    b.add_argument("--captions")
    b.add_argument("--embeddings")
    b.add_argument("--dim", type=int, default=300)
    b.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    b.add_argument("--threshold-scope", choices=[s.value for s in ThresholdScope], default="so")
    b.add_argument("--banned-actions")
    b.add_argument("--out", default="dataset.jsonl")
    b.add_argument("--report")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--jobs", type=int, default=1)
    b.set_defaults(func=cmd_build_dataset)

    t = sub.add_parser("train", help="cross-validated training")
    t.add_argument("--dataset")
    t.add_argument("--embeddings")
    t.add_argument("--dim", type=int, default=300)
    t.add_argument("--mode", choices=[m.value for m in InputMode], default="caption")
    t.add_argument("--encoder", choices=[e.value for e in EncoderKind], default="avg")
    t.add_argument("--store")
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--rho", type=float, default=0.9)
    t.add_argument("--eps", type=float, default=1e-8)
    t.add_argument("--clip", type=float)
    t.add_argument("--folds", type=int, default=10)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--cap-dim", type=int, default=300)
    t.add_argument("--zc-dim", type=int, default=128)
    t.add_argument("--zh-dim", type=int, default=64)
    t.add_argument("--lstm-hidden", type=int, default=150)
    t.add_argument("--trainable-embeddings", action="store_true")
    t.add_argument("--group-by-image", action="store_true")
    t.add_argument("--no-cv", action="store_true", help="single train/test split instead of k-fold")
    t.add_argument("--split", type=float, default=0.9)
    t.add_argument("--out", default="run")
    t.add_argument("--jobs", type=int, default=1)
    t.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict object boxes with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset")
    p.add_argument("--embeddings")
    p.add_argument("--dim", type=int)
    p.add_argument("--store")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="score a predictions file")
    e.add_argument("--predictions", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient check")
    g.add_argument("--encoder", action="append", choices=[k.value for k in EncoderKind])
    g.add_argument("--mode", action="append", choices=[m.value for m in InputMode])
    g.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    g.add_argument("--n-params", type=int, help="sample this many entries per tensor (default: all)")
    g.add_argument("--trainable-embeddings", action="store_true")
    g.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("audit", help="sample instances for manual review")
    a.add_argument("--dataset")
    a.add_argument("--n", type=int, default=100)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", default="audit.tsv")
    a.set_defaults(func=cmd_audit)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"scenelay {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as exc:
        print(f"scenelay {args.command}: cannot read input: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
