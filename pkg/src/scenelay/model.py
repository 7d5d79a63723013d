"""Object-box regressor conditioned on a caption, token embeddings and the subject box.

Network, for the default CAPTION input mode::

    v_cap = relu(W_cap c_cap + b_cap)
    z_c   = relu(W_c [v_cap; v_S; v_O] + b_c)
    z_h   = relu(W_h [z_c; S_c; S_b] + b_h)
    O_hat = W_out z_h + b_out

Other modes only change what is concatenated into ``z_c``. ``v_S``, ``v_O``
and ``v_R`` are frozen embedding-table vectors.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .alignment import Instance
from .embeddings import EmbeddingTable
from .encoders import PrecomputedStore, bilstm_backward, bilstm_forward, token_rows
from .geometry import BBox
from .nncore import DenseParams, LstmParams, RMSprop, dense, dense_grad, init_params, mse, mse_grad, relu, relu_grad

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class InputMode(str, Enum):
    CAPTION = "caption"
    TRIPLET = "triplet"
    CAPTION_PLUS_RELATION = "caption+relation"
    CAPTION_NO_SO = "caption-so"


class EncoderKind(str, Enum):
    AVG = "avg"
    BILSTM = "bilstm"
    PRECOMPUTED = "precomputed"


@dataclass(frozen=True)
class ModelConfig:
    mode: InputMode = InputMode.CAPTION
    encoder: EncoderKind = EncoderKind.AVG
    embed_dim: int = 300
    cap_dim: int = 300
    zc_dim: int = 128
    zh_dim: int = 64
    lstm_hidden: int = 150
    store_dim: int | None = None
    trainable_embeddings: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", InputMode(self.mode))
        object.__setattr__(self, "encoder", EncoderKind(self.encoder))
        if self.encoder is EncoderKind.PRECOMPUTED and self.uses_caption and not self.store_dim:
            raise ValueError("precomputed encoder needs store_dim")

    @property
    def uses_caption(self) -> bool:
        return self.mode is not InputMode.TRIPLET

    @property
    def uses_subject_object(self) -> bool:
        return self.mode is not InputMode.CAPTION_NO_SO

    @property
    def uses_relation(self) -> bool:
        return self.mode in (InputMode.TRIPLET, InputMode.CAPTION_PLUS_RELATION)

    @property
    def enc_dim(self) -> int:
        if self.encoder is EncoderKind.AVG:
            return self.embed_dim
        if self.encoder is EncoderKind.BILSTM:
            return 2 * self.lstm_hidden
        return int(self.store_dim)

    @property
    def fusion_dim(self) -> int:
        d = self.embed_dim
        return {
            InputMode.CAPTION: self.cap_dim + 2 * d,
            InputMode.TRIPLET: 3 * d,
            InputMode.CAPTION_PLUS_RELATION: self.cap_dim + 3 * d,
            InputMode.CAPTION_NO_SO: self.cap_dim,
        }[self.mode]

    def param_shapes(self, vocab_size: int = 0) -> dict[str, tuple[int, ...]]:
        """Parameter names and shapes in checkpoint order."""
        shapes: dict[str, tuple[int, ...]] = {}
        if self.uses_caption:
            if self.encoder is EncoderKind.BILSTM:
                if self.trainable_embeddings:
                    shapes["emb"] = (vocab_size, self.embed_dim)
                H = self.lstm_hidden
                for side in ("lstm_l", "lstm_r"):
                    shapes[f"{side}.W"] = (4 * H, self.embed_dim + H)
                    shapes[f"{side}.b"] = (4 * H,)
            shapes["cap.W"] = (self.cap_dim, self.enc_dim)
            shapes["cap.b"] = (self.cap_dim,)
        shapes["c.W"] = (self.zc_dim, self.fusion_dim)
        shapes["c.b"] = (self.zc_dim,)
        shapes["h.W"] = (self.zh_dim, self.zc_dim + 4)
        shapes["h.b"] = (self.zh_dim,)
        shapes["out.W"] = (4, self.zh_dim)
        shapes["out.b"] = (4,)
        return shapes

    def to_json(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        d["encoder"] = self.encoder.value
        return d


# -- encoded inputs ----------------------------------------------------------


@dataclass
class Encoded:
    """Model-ready arrays for a list of instances.

    ``index`` holds each row's position in the source instance list; instances
    the model cannot read (OOV subject/object/relation, all-OOV caption) are
    left out and listed in ``skipped``.
    """

    index: np.ndarray
    s_box: np.ndarray
    o_box: np.ndarray
    v_s: np.ndarray
    v_o: np.ndarray
    v_r: np.ndarray
    c_enc: np.ndarray | None = None  # AVG means or precomputed vectors
    rows: np.ndarray | None = None  # (N, T) table rows, -1 padded
    lengths: np.ndarray | None = None
    skipped: list[tuple[int, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.index)

    def take(self, idx) -> Encoded:
        idx = np.asarray(idx, dtype=np.intp)

        def pick(a):
            return None if a is None else a[idx]

        rows, lengths = pick(self.rows), pick(self.lengths)
        if rows is not None and len(idx):
            rows = rows[:, : int(lengths.max())]
        return Encoded(
            self.index[idx], self.s_box[idx], self.o_box[idx], self.v_s[idx], self.v_o[idx], self.v_r[idx],
            pick(self.c_enc), rows, lengths,
        )


def encode_instances(
    instances: Sequence[Instance],
    cfg: ModelConfig,
    table: EmbeddingTable,
    store: PrecomputedStore | None = None,
) -> Encoded:
    """Convert instances into the arrays :meth:`SpatialModel.forward` consumes.

    Raises:
        KeyError: a caption id is missing from the precomputed store.
    """
    d = table.dim
    keep, skipped = [], []
    vs, vo, vr, cenc, seqs, sbox, obox = [], [], [], [], [], [], []
    zero = np.zeros(d)
    for i, inst in enumerate(instances):
        rs, ro, rr = (table.row(inst.tokens[k]) for k in (inst.subj_idx, inst.obj_idx, inst.rel_idx))
        if cfg.uses_subject_object and (rs is None or ro is None):
            skipped.append((i, "oov subject/object"))
            continue
        if cfg.uses_relation and rr is None:
            skipped.append((i, "oov relation"))
            continue
        if cfg.uses_caption and cfg.encoder is not EncoderKind.PRECOMPUTED:
            rows = token_rows(inst.tokens, table)
            if not rows:
                skipped.append((i, "caption all oov"))
                continue
            if cfg.encoder is EncoderKind.AVG:
                cenc.append(table.vectors[rows].mean(axis=0))
            else:
                seqs.append(rows)
        elif cfg.uses_caption:
            if store is None:
                raise ValueError("precomputed encoder needs a store")
            vec = store.vectors.get(inst.caption_id)
            if vec is None:
                raise KeyError(f"caption id {inst.caption_id!r} missing from precomputed store")
            cenc.append(vec)
        keep.append(i)
        # unused embeddings stay zero so the mode cannot depend on them
        vs.append(table.vectors[rs] if cfg.uses_subject_object else zero)
        vo.append(table.vectors[ro] if cfg.uses_subject_object else zero)
        vr.append(table.vectors[rr] if cfg.uses_relation else zero)
        sbox.append(inst.subject_box)
        obox.append(inst.object_box)

    def stack(xs, width):
        return np.array(xs, dtype=np.float64).reshape(len(keep), width)

    rows = lengths = None
    if seqs:
        lengths = np.array([len(s) for s in seqs])
        rows = np.full((len(seqs), int(lengths.max())), -1, dtype=np.int64)
        for k, s in enumerate(seqs):
            rows[k, : len(s)] = s
    elif cfg.uses_caption and cfg.encoder is EncoderKind.BILSTM:
        rows, lengths = np.zeros((0, 1), dtype=np.int64), np.zeros(0, dtype=np.int64)
    c_enc = stack(cenc, cfg.enc_dim) if cenc or (cfg.uses_caption and cfg.encoder is not EncoderKind.BILSTM) else None
    if skipped:
        log.info("skipped %d of %d instances", len(skipped), len(instances))
    return Encoded(
        np.array(keep, dtype=np.intp), stack(sbox, 4), stack(obox, 4),
        stack(vs, d), stack(vo, d), stack(vr, d), c_enc, rows, lengths, skipped,
    )


# -- model -------------------------------------------------------------------


@dataclass
class SpatialModel:
    cfg: ModelConfig
    params: dict[str, np.ndarray]
    table: EmbeddingTable | None = None
    vocab_rows: np.ndarray | None = None  # table rows backing params["emb"], sorted

    def _embed(self, rows: np.ndarray) -> np.ndarray:
        safe = np.where(rows >= 0, rows, 0)
        if "emb" in self.params:
            pos = np.searchsorted(self.vocab_rows, safe)
            pos = np.minimum(pos, len(self.vocab_rows) - 1)
            known = self.vocab_rows[pos] == safe
            xs = np.where(known[..., None], self.params["emb"][pos], self.table.vectors[safe])
            return xs
        return self.table.vectors[safe]

    def forward(self, batch: Encoded) -> tuple[np.ndarray, dict]:
        cfg, p = self.cfg, self.params
        cache: dict = {}
        parts = []
        if cfg.uses_caption:
            if cfg.encoder is EncoderKind.BILSTM:
                xs = self._embed(batch.rows)
                c_enc, tape = bilstm_forward(
                    LstmParams(p["lstm_l.W"], p["lstm_l.b"]), LstmParams(p["lstm_r.W"], p["lstm_r.b"]),
                    xs, batch.lengths,
                )
                cache["tape"] = tape
            else:
                c_enc = batch.c_enc
            cache["c_enc"] = c_enc
            cache["pre_cap"] = pre_cap = dense(DenseParams(p["cap.W"], p["cap.b"]), c_enc)
            parts.append(relu(pre_cap))
        if cfg.mode is InputMode.TRIPLET:
            parts += [batch.v_r, batch.v_s, batch.v_o]
        elif cfg.mode is InputMode.CAPTION_PLUS_RELATION:
            parts += [batch.v_r, batch.v_s, batch.v_o]
        elif cfg.mode is InputMode.CAPTION:
            parts += [batch.v_s, batch.v_o]
        cache["x_c"] = x_c = np.concatenate(parts, axis=1)
        cache["pre_c"] = pre_c = dense(DenseParams(p["c.W"], p["c.b"]), x_c)
        cache["x_h"] = x_h = np.concatenate([relu(pre_c), batch.s_box], axis=1)
        cache["pre_h"] = pre_h = dense(DenseParams(p["h.W"], p["h.b"]), x_h)
        cache["z_h"] = z_h = relu(pre_h)
        out = dense(DenseParams(p["out.W"], p["out.b"]), z_h)
        return out, cache

    def backward(self, batch: Encoded, cache: dict, dout: np.ndarray) -> dict[str, np.ndarray]:
        cfg, p = self.cfg, self.params
        g: dict[str, np.ndarray] = {}
        g["out.W"], g["out.b"], dz_h = dense_grad(DenseParams(p["out.W"], p["out.b"]), cache["z_h"], dout)
        g["h.W"], g["h.b"], dx_h = dense_grad(
            DenseParams(p["h.W"], p["h.b"]), cache["x_h"], relu_grad(cache["pre_h"], dz_h)
        )
        dz_c = dx_h[:, : cfg.zc_dim]
        g["c.W"], g["c.b"], dx_c = dense_grad(
            DenseParams(p["c.W"], p["c.b"]), cache["x_c"], relu_grad(cache["pre_c"], dz_c)
        )
        if cfg.uses_caption:
            dv_cap = dx_c[:, : cfg.cap_dim]
            g["cap.W"], g["cap.b"], dc_enc = dense_grad(
                DenseParams(p["cap.W"], p["cap.b"]), cache["c_enc"], relu_grad(cache["pre_cap"], dv_cap)
            )
            if cfg.encoder is EncoderKind.BILSTM:
                g["lstm_l.W"], g["lstm_l.b"], g["lstm_r.W"], g["lstm_r.b"], dxs = bilstm_backward(
                    LstmParams(p["lstm_l.W"], p["lstm_l.b"]), LstmParams(p["lstm_r.W"], p["lstm_r.b"]),
                    cache["tape"], dc_enc,
                )
                if "emb" in p:
                    g["emb"] = self._emb_grad(batch.rows, dxs)
        return {name: g[name] for name in p}

    def _emb_grad(self, rows: np.ndarray, dxs: np.ndarray) -> np.ndarray:
        demb = np.zeros_like(self.params["emb"])
        valid = rows >= 0
        pos = np.searchsorted(self.vocab_rows, rows[valid])
        pos = np.minimum(pos, len(self.vocab_rows) - 1)
        known = self.vocab_rows[pos] == rows[valid]
        np.add.at(demb, pos[known], dxs[valid][known])
        return demb

    def loss_and_grads(self, batch: Encoded) -> tuple[float, dict[str, np.ndarray]]:
        pred, cache = self.forward(batch)
        loss = mse(pred, batch.o_box)
        return loss, self.backward(batch, cache, mse_grad(pred, batch.o_box))

    def predict_arrays(self, batch: Encoded) -> np.ndarray:
        if len(batch) == 0:
            return np.zeros((0, 4))
        return self.forward(batch)[0]

    def copy(self) -> SpatialModel:
        return replace(self, params={k: v.copy() for k, v in self.params.items()})


def build_model(
    cfg: ModelConfig,
    table: EmbeddingTable,
    seed: int | np.random.Generator = 0,
    vocab_instances: Iterable[Instance] = (),
) -> SpatialModel:
    """Fresh model with seeded Glorot weights.

    With trainable BiLSTM embeddings, the embedding matrix covers the
    in-vocabulary tokens of ``vocab_instances`` and starts from the table.
    """
    if cfg.embed_dim != table.dim:
        raise ValueError(f"config embed_dim {cfg.embed_dim} != table dim {table.dim}")
    vocab_rows = None
    if cfg.uses_caption and cfg.encoder is EncoderKind.BILSTM and cfg.trainable_embeddings:
        rows = {r for inst in vocab_instances for r in token_rows(inst.tokens, table)}
        if not rows:
            raise ValueError("trainable embeddings need a non-empty vocabulary")
        vocab_rows = np.array(sorted(rows), dtype=np.int64)
    shapes = cfg.param_shapes(0 if vocab_rows is None else len(vocab_rows))
    params = init_params(shapes, seed)
    if vocab_rows is not None:
        params["emb"] = table.vectors[vocab_rows].copy()
    return SpatialModel(cfg, params, table, vocab_rows)


def train_step(model: SpatialModel, batch: Encoded, opt: RMSprop) -> float:
    """Forward, mean squared-norm loss, backward, one optimizer update. Returns the loss."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    loss, grads = model.loss_and_grads(batch)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss}")
    opt.step(model.params, grads)
    return loss


def forward(instance: Instance, model: SpatialModel, store: PrecomputedStore | None = None) -> BBox:
    """Predicted object box for one instance.

    Raises:
        ValueError: the instance's subject/object (or relation) token is OOV.
    """
    enc = encode_instances([instance], model.cfg, model.table, store)
    if len(enc) == 0:
        raise ValueError(f"instance not readable by the model: {enc.skipped[0][1]}")
    return BBox(*map(float, model.predict_arrays(enc)[0]))


def predict(
    instances: Sequence[Instance], model: SpatialModel, store: PrecomputedStore | None = None, batch_size: int = 256
) -> list[dict]:
    """Prediction records in input order; unreadable instances are omitted."""
    enc = encode_instances(instances, model.cfg, model.table, store)
    out = []
    for start in range(0, len(enc), batch_size):
        batch = enc.take(np.arange(start, min(start + batch_size, len(enc))))
        for k, pred in zip(batch.index, model.predict_arrays(batch)):
            inst = instances[k]
            out.append({
                "image_id": inst.image_id,
                "instance_index": int(k),
                "pred_box": [float(v) for v in pred],
                "gold_box": list(inst.object_box),
                "subject_box": list(inst.subject_box),
            })
    return out


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(model: SpatialModel, path: str | Path, **meta) -> None:
    """Write a JSON checkpoint; floats are stored with round-trip precision.

    Parameters appear under ``"params"`` in :meth:`ModelConfig.param_shapes`
    order, each as ``{"name", "shape", "values"}`` with values flattened in
    row-major order.
    """
    vocab = None
    if model.vocab_rows is not None:
        inv = {r: t for t, r in model.table.index.items()}
        vocab = [inv[int(r)] for r in model.vocab_rows]
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.cfg.to_json(),
        **meta,
        "vocab": vocab,
        "params": [
            {"name": name, "shape": list(arr.shape), "values": arr.ravel().tolist()}
            for name, arr in model.params.items()
        ],
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path: str | Path, table: EmbeddingTable) -> tuple[SpatialModel, dict]:
    """Returns the model and the full checkpoint document (for metadata)."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')}")
    cfg = ModelConfig(**doc["config"])
    params = {
        rec["name"]: np.array(rec["values"], dtype=np.float64).reshape(rec["shape"]) for rec in doc["params"]
    }
    expected = cfg.param_shapes(len(doc["vocab"] or ()))
    if list(expected) != list(params) or any(tuple(params[k].shape) != v for k, v in expected.items()):
        raise ValueError(f"{path}: parameter shapes do not match the stored config")
    vocab_rows = None
    if doc.get("vocab"):
        rows = [table.row(t) for t in doc["vocab"]]
        if any(r is None for r in rows):
            raise ValueError("checkpoint vocabulary not covered by the embedding table")
        order = np.argsort(rows)
        vocab_rows = np.array(rows, dtype=np.int64)[order]
        params["emb"] = params["emb"][order]
    return SpatialModel(cfg, params, table, vocab_rows), doc
