"""Caption encoders: token average, bidirectional LSTM, precomputed vectors.

Each encoder maps a token list to a fixed-width vector ``c_cap``, which
:func:`caption_dense` projects to ``v_cap = relu(W_cap c_cap + b_cap)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .embeddings import EmbeddingTable
from .nncore import DenseParams, LstmParams, LstmTape, dense, dense_grad, lstm_backward, lstm_forward, relu, relu_grad


def token_rows(tokens: Sequence[str], table: EmbeddingTable) -> list[int]:
    """Table rows of the in-vocabulary tokens, in caption order."""
    rows = []
    for tok in tokens:
        r = table.row(tok)
        if r is not None:
            rows.append(r)
    return rows


def encode_avg(tokens: Sequence[str], table: EmbeddingTable) -> np.ndarray:
    """Mean embedding of the in-vocabulary tokens (OOV tokens are skipped)."""
    rows = token_rows(tokens, table)
    if not rows:
        raise ValueError("caption has no in-vocabulary tokens")
    return table.vectors[rows].mean(axis=0)


# -- BiLSTM ------------------------------------------------------------------


def reverse_index(lengths: np.ndarray, T: int) -> np.ndarray:
    """Per-row gather index that reverses the first ``lengths[b]`` steps.

    Padding positions map to themselves, so applying the index twice is the
    identity.
    """
    t = np.arange(T)[None, :]
    L = np.asarray(lengths)[:, None]
    return np.where(t < L, L - 1 - t, t)


@dataclass
class BiLstmTape:
    left: LstmTape
    right: LstmTape
    rev: np.ndarray


def bilstm_forward(
    left: LstmParams, right: LstmParams, xs: np.ndarray, lengths: np.ndarray
) -> tuple[np.ndarray, BiLstmTape]:
    """Encode a right-padded batch ``(B, T, D)``; returns ``[h_N^L; h_N^R]`` of shape ``(B, 2H)``."""
    B, T, _ = xs.shape
    lengths = np.asarray(lengths)
    if np.any(lengths < 1):
        raise ValueError("every sequence needs at least one token")
    mask = (np.arange(T)[None, :] < lengths[:, None]).astype(np.float64)
    rev = reverse_index(lengths, T)
    xs_rev = np.take_along_axis(xs, rev[:, :, None], axis=1)
    h_l, tape_l = lstm_forward(left, xs, mask)
    h_r, tape_r = lstm_forward(right, xs_rev, mask)
    return np.concatenate([h_l, h_r], axis=1), BiLstmTape(tape_l, tape_r, rev)


def bilstm_backward(left: LstmParams, right: LstmParams, tape: BiLstmTape, dc: np.ndarray):
    """Returns ``(dW_left, db_left, dW_right, db_right, dxs)``."""
    H = left.hidden_size
    dWl, dbl, dxs = lstm_backward(left, tape.left, dc[:, :H])
    dWr, dbr, dxs_rev = lstm_backward(right, tape.right, dc[:, H:])
    # scatter the reversed-order gradients back; rev is its own inverse
    dxs = dxs + np.take_along_axis(dxs_rev, tape.rev[:, :, None], axis=1)
    return dWl, dbl, dWr, dbr, dxs


def encode_bilstm(tokens: Sequence[str], table: EmbeddingTable, left: LstmParams, right: LstmParams) -> np.ndarray:
    """Encode one caption; OOV tokens are dropped from the sequence."""
    rows = token_rows(tokens, table)
    if not rows:
        raise ValueError("caption has no in-vocabulary tokens")
    xs = table.vectors[rows][None, :, :]
    c, _ = bilstm_forward(left, right, xs, np.array([len(rows)]))
    return c[0]


# -- precomputed -------------------------------------------------------------


@dataclass(frozen=True)
class PrecomputedStore:
    """Caption vectors produced by an external encoder, keyed by caption id."""

    dim: int
    vectors: Mapping[str, np.ndarray]

    def __contains__(self, caption_id: str) -> bool:
        return caption_id in self.vectors

    @classmethod
    def from_dict(cls, entries: Mapping[str, Sequence[float]]) -> PrecomputedStore:
        vecs = {}
        dim = None
        for key, values in entries.items():
            v = np.array(values, dtype=np.float64)
            v.setflags(write=False)
            if dim is None:
                dim = v.shape[0]
            if v.shape != (dim,):
                raise ValueError(f"caption {key!r}: dimension {v.shape[0]} != {dim}")
            vecs[str(key)] = v
        if dim is None:
            raise ValueError("empty precomputed store")
        return cls(dim, vecs)


def load_store(path: str | Path) -> PrecomputedStore:
    """Read ``{"caption_id": ..., "vector": [...]}`` JSON lines."""
    entries: dict[str, list[float]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                entries.setdefault(str(rec["caption_id"]), rec["vector"])
    return PrecomputedStore.from_dict(entries)


def encode_precomputed(caption_id: str, store: PrecomputedStore) -> np.ndarray:
    try:
        return store.vectors[caption_id]
    except KeyError:
        raise KeyError(f"caption id {caption_id!r} missing from precomputed store") from None


# -- projection --------------------------------------------------------------


def caption_dense(c_cap: np.ndarray, p: DenseParams) -> np.ndarray:
    return relu(dense(p, c_cap))


def caption_dense_grad(c_cap: np.ndarray, p: DenseParams, dv: np.ndarray):
    """Returns ``(dW, db, dc_cap)``."""
    pre = dense(p, c_cap)
    return dense_grad(p, c_cap, relu_grad(pre, dv))
