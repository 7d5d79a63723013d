"""Cross-validated training and finite-difference gradient checking."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .alignment import Instance
from .embeddings import EmbeddingTable
from .encoders import PrecomputedStore
from .metrics import MetricsReport, aggregate, evaluate, write_fold_csv
from .model import (
    EncoderKind, Encoded, InputMode, ModelConfig, SpatialModel, build_model, encode_instances, save_checkpoint,
    train_step,
)
from .nncore import RMSprop, mse

log = logging.getLogger(__name__)

GRADCHECK_TOL = 1e-4
GRADCHECK_EPS = 1e-5
# gradients smaller than this are compared on an absolute scale
GRADCHECK_FLOOR = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-4
    rho: float = 0.9
    eps: float = 1e-8
    clip: float | None = None
    folds: int = 10
    seed: int = 0
    group_by_image: bool = False

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")

    def to_json(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_json()
        return d

    @classmethod
    def from_json(cls, d: dict) -> TrainConfig:
        d = dict(d)
        d["model"] = ModelConfig(**d["model"])
        return cls(**d)


def kfold_split(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Seeded shuffle of ``range(n)`` cut into ``k`` contiguous, near-equal folds."""
    if k < 1 or n < k:
        raise ValueError(f"cannot split {n} items into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, k)]


def group_kfold_split(groups: Sequence[str], k: int, seed: int) -> list[np.ndarray]:
    """Like :func:`kfold_split`, but all items sharing a group land in one fold."""
    keys = sorted(set(groups))
    folds = kfold_split(len(keys), k, seed)
    fold_of = {keys[g]: f for f, part in enumerate(folds) for g in part}
    owner = np.array([fold_of[g] for g in groups])
    return [np.flatnonzero(owner == f) for f in range(k)]


def _as_encoded(data, cfg: TrainConfig, table, store) -> Encoded:
    if isinstance(data, Encoded):
        return data
    return encode_instances(data, cfg.model, table, store)


def train_fold(
    train: Sequence[Instance] | Encoded,
    cfg: TrainConfig,
    table: EmbeddingTable,
    store: PrecomputedStore | None = None,
    fold: int = 0,
    vocab_instances: Sequence[Instance] = (),
) -> tuple[SpatialModel, list[float]]:
    """Train a fresh model; returns it with the per-epoch mean training loss.

    Batches are drawn from a per-epoch seeded shuffle; the last partial batch
    is kept.
    """
    data = _as_encoded(train, cfg, table, store)
    if len(data) == 0:
        raise ValueError("empty training set")
    if not vocab_instances and isinstance(train, Sequence) and not isinstance(train, Encoded):
        vocab_instances = train
    model = build_model(cfg.model, table, np.random.default_rng([cfg.seed, fold, 0]), vocab_instances)
    opt = RMSprop(lr=cfg.lr, rho=cfg.rho, eps=cfg.eps, clip=cfg.clip)
    rng = np.random.default_rng([cfg.seed, fold, 1])
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = data.take(order[start:start + cfg.batch_size])
            try:
                loss = train_step(model, batch, opt)
            except FloatingPointError as exc:
                raise FloatingPointError(f"epoch {epoch}, batch {b}: {exc}") from exc
            total += loss * len(batch)
        curve.append(total / len(data))
    return model, curve


def predict_encoded(model: SpatialModel, data: Encoded, batch_size: int = 512) -> np.ndarray:
    parts = [model.predict_arrays(data.take(np.arange(s, min(s + batch_size, len(data)))))
             for s in range(0, len(data), batch_size)]
    return np.vstack(parts) if parts else np.zeros((0, 4))


@dataclass
class FoldResult:
    fold: int
    report: MetricsReport
    losses: list[float]
    test_index: np.ndarray
    model: SpatialModel | None = None


@dataclass
class CVResult:
    folds: list[FoldResult]
    aggregate: MetricsReport
    skipped: list[tuple[int, str]]

    @property
    def reports(self) -> list[MetricsReport]:
        return [f.report for f in self.folds]


def _run_fold(fold, train_idx, test_idx, data, cfg, table, vocab, keep_model):
    model, losses = train_fold(data.take(train_idx), cfg, table, fold=fold, vocab_instances=vocab)
    test = data.take(test_idx)
    pred = predict_encoded(model, test)
    report = evaluate(pred, test.o_box, test.s_box)
    log.info("fold %d: iou=%.1f acc_y=%.1f", fold, report.iou, report.acc_y)
    return FoldResult(fold, report, losses, test.index, model if keep_model else None)


_WORKER: dict = {}


def _init_worker(data, cfg, table, vocab):
    _WORKER.update(data=data, cfg=cfg, table=table, vocab=vocab)


def _worker_fold(args):
    fold, train_idx, test_idx = args
    w = _WORKER
    return _run_fold(fold, train_idx, test_idx, w["data"], w["cfg"], w["table"], w["vocab"], True)


def cross_validate(
    instances: Sequence[Instance],
    cfg: TrainConfig,
    table: EmbeddingTable,
    store: PrecomputedStore | None = None,
    jobs: int = 1,
    keep_models: bool = False,
) -> CVResult:
    """k-fold CV: train on k-1 folds, score the held-out one, average over folds."""
    data = encode_instances(instances, cfg.model, table, store)
    if len(data) < cfg.folds:
        raise ValueError(f"{len(data)} usable instances for {cfg.folds} folds")
    if cfg.group_by_image:
        splits = group_kfold_split([instances[i].image_id for i in data.index], cfg.folds, cfg.seed)
    else:
        splits = kfold_split(len(data), cfg.folds, cfg.seed)
    tasks = []
    for f, test_idx in enumerate(splits):
        train_idx = np.sort(np.concatenate([s for g, s in enumerate(splits) if g != f]))
        tasks.append((f, train_idx, test_idx))
    # embedding layer (when trainable) covers the whole dataset vocabulary
    vocab = list(instances) if cfg.model.trainable_embeddings else []
    if jobs > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(data, cfg, table, vocab)) as pool:
            results = list(pool.map(_worker_fold, tasks))
        if not keep_models:
            for r in results:
                r.model = None
    else:
        results = [_run_fold(f, tr, te, data, cfg, table, vocab, keep_models) for f, tr, te in tasks]
    results.sort(key=lambda r: r.fold)
    return CVResult(results, aggregate([r.report for r in results]), data.skipped)


def write_run(run_dir: str | Path, cfg: TrainConfig, result: CVResult) -> None:
    """Write config, per-fold checkpoints/metrics/loss curves and the aggregate."""
    run = Path(run_dir)
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.json").write_text(json.dumps(cfg.to_json(), indent=2) + "\n")
    for fr in result.folds:
        if fr.model is not None:
            save_checkpoint(
                fr.model, run / f"checkpoint-fold{fr.fold}.json",
                seed=cfg.seed, fold=fr.fold, train=cfg.to_json(),
                optimizer={"name": "rmsprop", "lr": cfg.lr, "rho": cfg.rho, "eps": cfg.eps, "clip": cfg.clip},
            )
        (run / f"metrics-fold{fr.fold}.json").write_text(json.dumps(fr.report.to_json(), indent=2) + "\n")
        with open(run / f"loss-fold{fr.fold}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss"])
            w.writerows((e, repr(v)) for e, v in enumerate(fr.losses))
    (run / "metrics-aggregate.json").write_text(json.dumps(result.aggregate.to_json(), indent=2) + "\n")
    with open(run / "metrics-folds.csv", "w", newline="") as fh:
        write_fold_csv(result.reports, fh)


# -- gradient check ----------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    worst_index: tuple[int, ...]
    n_checked: int
    per_param: dict[str, float]
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_err < GRADCHECK_TOL


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = GRADCHECK_FLOOR) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def tiny_setup(encoder: EncoderKind | str, mode: InputMode | str, seed: int, trainable_embeddings: bool = False):
    """A small random model and batch for gradient checks."""
    from .synthetic import make_instances

    rng = np.random.default_rng(seed)
    instances, table = make_instances(6, seed=seed, dim=5)
    encoder, mode = EncoderKind(encoder), InputMode(mode)
    store = None
    store_dim = None
    if encoder is EncoderKind.PRECOMPUTED:
        store_dim = 7
        store = PrecomputedStore.from_dict({x.caption_id: rng.standard_normal(store_dim) for x in instances})
    cfg = ModelConfig(
        mode=mode, encoder=encoder, embed_dim=5, cap_dim=6, zc_dim=5, zh_dim=4, lstm_hidden=3,
        store_dim=store_dim, trainable_embeddings=trainable_embeddings,
    )
    model = build_model(cfg, table, seed, instances)
    # shift biases off zero so no unit sits on the relu kink
    for name, p in model.params.items():
        if name.endswith(".b"):
            p += rng.uniform(0.05, 0.3, size=p.shape)
    batch = encode_instances(instances, cfg, table, store)
    return model, batch


def gradient_check(
    encoder: EncoderKind | str = EncoderKind.AVG,
    mode: InputMode | str = InputMode.CAPTION,
    seed: int = 0,
    n_params_sampled: int | None = None,
    trainable_embeddings: bool = False,
    model: SpatialModel | None = None,
    batch: Encoded | None = None,
    eps: float = GRADCHECK_EPS,
) -> GradCheckReport:
    """Compare backprop gradients with central differences of the batch loss.

    Checks every parameter entry, or ``n_params_sampled`` random entries per
    parameter tensor. All arithmetic is float64.
    """
    t0 = time.perf_counter()
    if model is None or batch is None:
        model, batch = tiny_setup(encoder, mode, seed, trainable_embeddings)
    _, grads = model.loss_and_grads(batch)
    rng = np.random.default_rng(seed)
    worst = (0.0, "", ())
    per_param = {}
    n = 0
    for name, p in model.params.items():
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if n_params_sampled is not None and flat.size > n_params_sampled:
            idx = rng.choice(flat.size, n_params_sampled, replace=False)
        num = np.empty(len(idx))
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            up = _loss(model, batch)
            flat[i] = old - eps
            down = _loss(model, batch)
            flat[i] = old
            num[k] = (up - down) / (2 * eps)
        errs = rel_error(grads[name].reshape(-1)[idx], num)
        n += len(idx)
        k = int(np.argmax(errs)) if len(errs) else 0
        per_param[name] = float(errs[k]) if len(errs) else 0.0
        if len(errs) and errs[k] > worst[0]:
            worst = (float(errs[k]), name, np.unravel_index(int(idx[k]), p.shape))
    return GradCheckReport(
        worst[0], worst[1], tuple(int(i) for i in worst[2]), n, per_param, time.perf_counter() - t0
    )


def _loss(model: SpatialModel, batch: Encoded) -> float:
    pred, _ = model.forward(batch)
    return mse(pred, batch.o_box)
