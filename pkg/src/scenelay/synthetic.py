"""Rule-generated datasets for tests and demos.

Each caption contains one relation keyword, and the keyword fixes where the
object sits relative to the subject and how big it is. A model that reads the
caption can therefore learn the layout exactly.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .alignment import AlignmentScore, Instance, Triplet
from .embeddings import EmbeddingTable
from .geometry import PixelBox, denormalize_box, mirror_pair, normalize_box, BBox


class Rule(NamedTuple):
    dx: float  # object center minus subject center, image widths
    dy: float  # ... image heights; negative is above
    sw: float  # object half-width / subject half-width
    sh: float
    objects: tuple[str, ...]


RULES = {
    "flying": Rule(0.15, -0.30, 0.8, 0.6, ("kite", "frisbee")),
    "wearing": Rule(0.00, -0.18, 0.7, 0.4, ("hat", "helmet")),
    "holding": Rule(0.10, 0.08, 0.6, 0.5, ("umbrella", "phone", "racket")),
    "riding": Rule(0.05, 0.22, 1.5, 0.8, ("horse", "skateboard", "bike")),
}
SUBJECTS = ("man", "woman", "boy", "girl", "person")
FILLERS = ("a", "the", "in", "on", "at", "park", "street", "near", "with", "sunny", "day", "while", "is")


def vocabulary() -> list[str]:
    words = list(SUBJECTS) + list(RULES) + list(FILLERS)
    for rule in RULES.values():
        words += rule.objects
    return sorted(set(words))


def random_table(words, dim: int, seed: int) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    return EmbeddingTable.from_dict({w: rng.standard_normal(dim) for w in words})


def make_instances(
    n: int, seed: int = 0, dim: int = 50, table: EmbeddingTable | None = None, fillers: tuple[int, int] = (2, 3)
):
    """Generate ``n`` instances and the table that covers their words.

    Half of the raw layouts are flipped left-right before the usual
    normalize-and-mirror preprocessing, so the ``mirrored`` path is exercised.
    ``fillers`` bounds the number of noise words before and after the
    ``subject keyword object`` core.
    """
    rng = np.random.default_rng(seed)
    if table is None:
        table = random_table(vocabulary(), dim, seed + 1)
    keywords = sorted(RULES)
    out = []
    for k in range(n):
        kw = keywords[k % len(keywords)]
        rule = RULES[kw]
        subj = SUBJECTS[rng.integers(len(SUBJECTS))]
        obj = rule.objects[rng.integers(len(rule.objects))]
        s = BBox(rng.uniform(0.3, 0.45), rng.uniform(0.4, 0.6), rng.uniform(0.08, 0.16), rng.uniform(0.1, 0.2))
        o = BBox(s.cx + rule.dx, s.cy + rule.dy, rule.sw * s.hw, rule.sh * s.hh)
        w, h = 640.0, 480.0
        sp, op = denormalize_box(s, w, h), denormalize_box(o, w, h)
        if rng.random() < 0.5:
            sp = PixelBox(w - sp.xmax, sp.ymin, w - sp.xmin, sp.ymax)
            op = PixelBox(w - op.xmax, op.ymin, w - op.xmin, op.ymax)
        sb, ob, mirrored = mirror_pair(normalize_box(sp, w, h), normalize_box(op, w, h))
        pre = [FILLERS[i] for i in rng.integers(len(FILLERS), size=rng.integers(0, fillers[0] + 1))]
        post = [FILLERS[i] for i in rng.integers(len(FILLERS), size=rng.integers(0, fillers[1] + 1))]
        tokens = tuple(pre + [subj, kw, obj] + post)
        j = len(pre)
        out.append(Instance(
            image_id=f"syn{k:05d}",
            tokens=tokens,
            subj_idx=j,
            obj_idx=j + 2,
            rel_idx=j + 1,
            subject_box=sb,
            object_box=ob,
            mirrored=mirrored,
            triplet=Triplet("person", kw, obj),
            scores=AlignmentScore(0, j, j + 1, j + 2, 1.0, 1.0, 1.0),
        ))
    return out, table
