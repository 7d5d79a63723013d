"""Unit-normalized word vectors loaded from GloVe-format text files."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

log = logging.getLogger(__name__)

NORM_TOL = 1e-6


@dataclass
class LoadStats:
    lines: int = 0
    loaded: int = 0
    duplicates: int = 0
    bad_arity: int = 0
    zero_norm: int = 0


@dataclass
class EmbeddingTable:
    """Read-only vocabulary of unit vectors.

    Vectors live in one ``(V, dim)`` float64 matrix; ``index`` maps a lowercase
    token to its row. Treat instances as immutable once built.
    """

    dim: int
    index: dict[str, int]
    vectors: np.ndarray
    stats: LoadStats = field(default_factory=LoadStats)

    def __len__(self) -> int:
        return len(self.index)

    def __contains__(self, token: str) -> bool:
        return token.lower() in self.index

    def row(self, token: str) -> int | None:
        return self.index.get(token.lower())

    @classmethod
    def from_dict(cls, entries: Mapping[str, Iterable[float]], dim: int | None = None) -> EmbeddingTable:
        """Build a table from an in-memory mapping, normalizing every vector.

        Follows the same rules as :func:`load_table`: keys are lowercased,
        the first occurrence of a duplicate wins, zero vectors are skipped.
        """
        stats = LoadStats()
        index: dict[str, int] = {}
        rows: list[np.ndarray] = []
        for token, values in entries.items():
            stats.lines += 1
            vec = np.asarray(list(values), dtype=np.float64)
            if dim is None:
                dim = vec.shape[0]
            _add(index, rows, stats, token, vec, dim)
        if dim is None:
            raise ValueError("cannot infer dimension from an empty mapping")
        return cls(dim, index, _stack(rows, dim), stats)


def _add(index, rows, stats, token, vec, dim):
    if vec.shape != (dim,):
        stats.bad_arity += 1
        return
    key = token.lower()
    if key in index:
        stats.duplicates += 1
        return
    norm = np.linalg.norm(vec)
    if not np.isfinite(norm) or norm == 0.0:
        stats.zero_norm += 1
        return
    index[key] = len(rows)
    rows.append(vec / norm)
    stats.loaded += 1


def _stack(rows, dim):
    if not rows:
        return np.zeros((0, dim))
    return np.vstack(rows)


def load_table(path: str | Path, dim: int = 300) -> EmbeddingTable:
    """Load a GloVe-format file (``token v1 ... v_dim`` per line, no header).

    Lines with the wrong number of fields are skipped, as are zero-norm
    vectors; both are counted in ``table.stats``.

    Raises:
        OSError: the file cannot be read.
        ValueError: no line could be parsed.
    """
    if dim <= 0:
        raise ValueError(f"dim must be positive, got {dim}")
    stats = LoadStats()
    index: dict[str, int] = {}
    rows: list[np.ndarray] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            stats.lines += 1
            parts = line.rstrip("\r\n").split(" ")
            if len(parts) != dim + 1 or not parts[0]:
                stats.bad_arity += 1
                continue
            try:
                vec = np.array(parts[1:], dtype=np.float64)
            except ValueError:
                stats.bad_arity += 1
                continue
            _add(index, rows, stats, parts[0], vec, dim)
    if stats.loaded == 0:
        raise ValueError(f"{path}: no parseable embedding lines")
    log.info(
        "loaded %d vectors from %s (dup=%d, bad=%d, zero=%d)",
        stats.loaded, path, stats.duplicates, stats.bad_arity, stats.zero_norm,
    )
    return EmbeddingTable(dim, index, _stack(rows, dim), stats)


def lookup(table: EmbeddingTable, token: str) -> np.ndarray | None:
    """Return the unit vector for ``token`` (case-insensitive), or None if OOV."""
    row = table.index.get(token.lower())
    if row is None:
        return None
    return table.vectors[row]


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit vectors, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(min(1.0, max(-1.0, float(np.dot(a, b)))))
