"""Link (subject, relation, object) concept triplets to caption tokens.

For every caption of an image, each triplet term is matched to the caption
token with the highest cosine similarity. The caption whose three best scores
sum highest wins; the triplet is then kept or discarded by a similarity
threshold and turned into a training :class:`Instance`.
"""

from __future__ import annotations

import json
import logging
import string
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .embeddings import EmbeddingTable, lookup
from .geometry import BBox, PixelBox, mirror_pair, normalize_box

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.75
BANNED_ACTIONS_FILE = Path(__file__).with_name("data") / "banned_actions.txt"

_PUNCT = str.maketrans("", "", string.punctuation)


def load_banned_actions(path: str | Path = BANNED_ACTIONS_FILE) -> frozenset[str]:
    """One action per line; blank lines and ``#`` comments ignored."""
    out = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            out.add(line)
    return frozenset(out)


DEFAULT_BANNED_ACTIONS = load_banned_actions()


class Reason(str, Enum):
    SINGLE_ARGUMENT = "single_argument_action"
    NO_CAPTIONS = "no_captions"
    OOV = "oov"
    LOW_SIMILARITY = "low_similarity"
    DEGENERATE_PAIR = "degenerate_pair"
    MALFORMED = "malformed"


class ThresholdScope(str, Enum):
    SO = "so"  # min(sc_S, sc_O) >= t
    SRO = "sro"  # min(sc_S, sc_R, sc_O) >= t
    SUM = "sum"  # sc_S + sc_R + sc_O >= 3t


def tokenize(text: str) -> list[str]:
    """Lowercase, drop punctuation characters, split on whitespace."""
    return text.lower().translate(_PUNCT).split()


@dataclass(frozen=True)
class ConceptTriplet:
    image_id: str
    subject_term: str
    relation_term: str
    object_term: str
    subject_box: PixelBox
    object_box: PixelBox
    image_w: float
    image_h: float

    @classmethod
    def from_json(cls, rec: Mapping) -> ConceptTriplet:
        return cls(
            image_id=str(rec["image_id"]),
            subject_term=str(rec["subject"]).lower().strip(),
            relation_term=str(rec["relation"]).lower().strip(),
            object_term=str(rec["object"]).lower().strip(),
            subject_box=PixelBox(*map(float, rec["subject_box"])),
            object_box=PixelBox(*map(float, rec["object_box"])),
            image_w=float(rec["image_w"]),
            image_h=float(rec["image_h"]),
        )

    def validate(self) -> None:
        if not (self.subject_term and self.relation_term and self.object_term):
            raise ValueError("empty triplet term")
        if len(self.subject_box) != 4 or len(self.object_box) != 4:
            raise ValueError("boxes need four coordinates")
        if not (self.subject_box.is_ordered() and self.object_box.is_ordered()):
            raise ValueError("box corners out of order")
        if not (self.image_w > 0 and self.image_h > 0):
            raise ValueError("image size must be positive")


@dataclass(frozen=True)
class CaptionSet:
    image_id: str
    captions: tuple[tuple[str, ...], ...]

    @classmethod
    def from_texts(cls, image_id: str, texts: Iterable[str]) -> CaptionSet:
        caps = tuple(tuple(tokenize(t)) for t in texts)
        return cls(str(image_id), tuple(c for c in caps if c))


class AlignmentScore(NamedTuple):
    caption_index: int
    j_s: int
    j_r: int
    j_o: int
    sc_s: float
    sc_r: float
    sc_o: float

    @property
    def total(self) -> float:
        return self.sc_s + self.sc_r + self.sc_o


class Triplet(NamedTuple):
    """The ontology terms of the source triplet, kept for contrastive runs."""

    subject: str
    relation: str
    object: str


@dataclass(frozen=True)
class Instance:
    image_id: str
    tokens: tuple[str, ...]
    subj_idx: int
    obj_idx: int
    rel_idx: int
    subject_box: BBox
    object_box: BBox
    mirrored: bool
    triplet: Triplet
    scores: AlignmentScore

    @property
    def caption_id(self) -> str:
        """Key used by precomputed caption-vector stores: ``<image_id>#<caption_index>``."""
        return f"{self.image_id}#{self.scores.caption_index}"

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "tokens": list(self.tokens),
            "subj_idx": self.subj_idx,
            "obj_idx": self.obj_idx,
            "rel_idx": self.rel_idx,
            "subject_box": list(self.subject_box),
            "object_box": list(self.object_box),
            "mirrored": self.mirrored,
            "triplet": self.triplet._asdict(),
            "scores": {"sc_s": self.scores.sc_s, "sc_r": self.scores.sc_r, "sc_o": self.scores.sc_o},
            "caption_index": self.scores.caption_index,
        }

    @classmethod
    def from_json(cls, rec: Mapping) -> Instance:
        sc = rec.get("scores", {})
        subj, obj, rel = int(rec["subj_idx"]), int(rec["obj_idx"]), int(rec["rel_idx"])
        trip = rec.get("triplet") or {}
        return cls(
            image_id=str(rec["image_id"]),
            tokens=tuple(rec["tokens"]),
            subj_idx=subj,
            obj_idx=obj,
            rel_idx=rel,
            subject_box=BBox(*map(float, rec["subject_box"])),
            object_box=BBox(*map(float, rec["object_box"])),
            mirrored=bool(rec.get("mirrored", False)),
            triplet=Triplet(trip.get("subject", ""), trip.get("relation", ""), trip.get("object", "")),
            scores=AlignmentScore(
                int(rec.get("caption_index", 0)), subj, rel, obj,
                float(sc.get("sc_s", 1.0)), float(sc.get("sc_r", 1.0)), float(sc.get("sc_o", 1.0)),
            ),
        )


@dataclass(frozen=True)
class Rejection:
    reason: Reason
    detail: str = ""


# -- scoring -----------------------------------------------------------------


def _caption_matrix(caption: Sequence[str], table: EmbeddingTable) -> tuple[np.ndarray, np.ndarray]:
    """Rows of in-vocabulary caption tokens and their positions in the caption."""
    pos, rows = [], []
    for j, tok in enumerate(caption):
        r = table.row(tok)
        if r is not None:
            pos.append(j)
            rows.append(r)
    return table.vectors[np.asarray(rows, dtype=np.intp)], np.asarray(pos, dtype=np.intp)


def best_token(term_vec: np.ndarray, caption: Sequence[str], table: EmbeddingTable) -> tuple[int, float] | None:
    """Index and cosine of the caption token closest to ``term_vec``.

    OOV tokens are never candidates. Ties go to the smallest index. Returns
    None when the caption has no in-vocabulary token.
    """
    mat, pos = _caption_matrix(caption, table)
    if pos.size == 0:
        return None
    sims = mat @ term_vec
    k = int(np.argmax(sims))  # first maximum
    return int(pos[k]), float(np.clip(sims[k], -1.0, 1.0))


def score_caption(
    triplet_vecs: tuple[np.ndarray, np.ndarray, np.ndarray],
    caption: Sequence[str],
    table: EmbeddingTable,
    caption_index: int = 0,
) -> AlignmentScore | None:
    mat, pos = _caption_matrix(caption, table)
    if pos.size == 0:
        return None
    # one (3, n) product keeps the three argmaxes on the same arithmetic path
    sims = np.vstack(triplet_vecs) @ mat.T
    ks = np.argmax(sims, axis=1)
    best = np.clip(sims[np.arange(3), ks], -1.0, 1.0)
    return AlignmentScore(
        caption_index,
        int(pos[ks[0]]), int(pos[ks[1]]), int(pos[ks[2]]),
        float(best[0]), float(best[1]), float(best[2]),
    )


def term_vector(term: str, table: EmbeddingTable) -> np.ndarray | None:
    """Embedding of an ontology term.

    Multi-word terms missing from the table (``"tennis racket"``,
    ``"cell_phone"``) fall back to the renormalized mean of their words,
    provided every word is in the vocabulary.
    """
    vec = lookup(table, term)
    if vec is not None:
        return vec
    words = term.replace("_", " ").split()
    if len(words) < 2:
        return None
    vecs = [lookup(table, w) for w in words]
    if any(v is None for v in vecs):
        return None
    mean = np.mean(vecs, axis=0)
    norm = np.linalg.norm(mean)
    return mean / norm if norm > 0 else None


def select_caption(
    triplet: ConceptTriplet, caps: CaptionSet, table: EmbeddingTable
) -> tuple[int, AlignmentScore] | None:
    """Pick the caption maximizing sc_S + sc_R + sc_O (ties: lowest index)."""
    vecs = [term_vector(t, table) for t in (triplet.subject_term, triplet.relation_term, triplet.object_term)]
    if any(v is None for v in vecs):
        return None
    best: AlignmentScore | None = None
    for i, caption in enumerate(caps.captions):
        sc = score_caption(tuple(vecs), caption, table, caption_index=i)
        if sc is not None and (best is None or sc.total > best.total):
            best = sc
    if best is None:
        return None
    return best.caption_index, best


def passes_threshold(sc: AlignmentScore, threshold: float, scope: ThresholdScope = ThresholdScope.SO) -> bool:
    scope = ThresholdScope(scope)
    if scope is ThresholdScope.SO:
        return min(sc.sc_s, sc.sc_o) >= threshold
    if scope is ThresholdScope.SRO:
        return min(sc.sc_s, sc.sc_r, sc.sc_o) >= threshold
    return sc.total >= 3.0 * threshold


def build_instance(
    triplet: ConceptTriplet,
    caps: CaptionSet | None,
    table: EmbeddingTable,
    threshold: float = DEFAULT_THRESHOLD,
    banned_actions: Iterable[str] = DEFAULT_BANNED_ACTIONS,
    scope: ThresholdScope = ThresholdScope.SO,
) -> Instance | Rejection:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    try:
        triplet.validate()
    except (ValueError, TypeError) as exc:
        return Rejection(Reason.MALFORMED, str(exc))
    if triplet.relation_term in banned_actions:
        return Rejection(Reason.SINGLE_ARGUMENT, triplet.relation_term)
    if caps is None or not caps.captions:
        return Rejection(Reason.NO_CAPTIONS, triplet.image_id)
    picked = select_caption(triplet, caps, table)
    if picked is None:
        return Rejection(Reason.OOV)
    i, sc = picked
    if not passes_threshold(sc, threshold, scope):
        return Rejection(Reason.LOW_SIMILARITY, f"{sc.sc_s:.3f}/{sc.sc_r:.3f}/{sc.sc_o:.3f}")
    if sc.j_s == sc.j_o:
        return Rejection(Reason.DEGENERATE_PAIR, caps.captions[i][sc.j_s])
    s_box = normalize_box(triplet.subject_box, triplet.image_w, triplet.image_h)
    o_box = normalize_box(triplet.object_box, triplet.image_w, triplet.image_h)
    s_box, o_box, mirrored = mirror_pair(s_box, o_box)
    return Instance(
        image_id=triplet.image_id,
        tokens=caps.captions[i],
        subj_idx=sc.j_s,
        obj_idx=sc.j_o,
        rel_idx=sc.j_r,
        subject_box=s_box,
        object_box=o_box,
        mirrored=mirrored,
        triplet=Triplet(triplet.subject_term, triplet.relation_term, triplet.object_term),
        scores=sc,
    )


# -- dataset -----------------------------------------------------------------


@dataclass
class BuildReport:
    triplets: int = 0
    instances: int = 0
    images: int = 0
    captions: int = 0
    captions_per_image: float = 0.0
    pairs_per_caption: float = 0.0
    rejections: dict[str, int] = field(default_factory=dict)
    shared_token: int = 0  # instances where the relation token coincides with S or O

    def to_json(self) -> dict:
        return asdict(self)


def build_dataset(
    triplets: Iterable[ConceptTriplet | Mapping],
    captions: Mapping[str, CaptionSet],
    table: EmbeddingTable,
    threshold: float = DEFAULT_THRESHOLD,
    banned_actions: Iterable[str] = DEFAULT_BANNED_ACTIONS,
    scope: ThresholdScope = ThresholdScope.SO,
    jobs: int = 1,
) -> tuple[list[Instance], BuildReport]:
    """Align every triplet and collect the surviving instances in input order.

    ``triplets`` may hold raw JSON records; records that fail to parse are
    rejected as malformed rather than aborting the build.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    banned = frozenset(a.lower() for a in banned_actions)

    def one(item) -> Instance | Rejection:
        if not isinstance(item, ConceptTriplet):
            try:
                item = ConceptTriplet.from_json(item)
            except (KeyError, TypeError, ValueError) as exc:
                return Rejection(Reason.MALFORMED, repr(exc))
        return build_instance(item, captions.get(item.image_id), table, threshold, banned, scope)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, triplets))  # map preserves input order
    else:
        results = [one(t) for t in triplets]

    report = BuildReport(triplets=len(results))
    reasons: Counter[str] = Counter()
    instances: list[Instance] = []
    for res in results:
        if isinstance(res, Rejection):
            reasons[res.reason.value] += 1
        else:
            instances.append(res)
            if res.rel_idx in (res.subj_idx, res.obj_idx):
                report.shared_token += 1
    report.rejections = dict(sorted(reasons.items()))
    report.instances = len(instances)
    report.images = len({x.image_id for x in instances})
    report.captions = len({x.caption_id for x in instances})
    if report.images:
        report.captions_per_image = report.captions / report.images
    if report.captions:
        report.pairs_per_caption = report.instances / report.captions
    return instances, report


def audit_sample(dataset: Sequence[Instance], n: int, seed: int, out: IO[str] | str | Path) -> list[int]:
    """Write ``n`` seeded random instances as a TSV for manual review.

    Caption tokens are marked ``[S:...]``, ``[R:...]`` and ``[O:...]``; the
    three trailing columns are left blank for the reviewer. Returns the
    sampled dataset indices.
    """
    if n < 0 or n > len(dataset):
        raise ValueError(f"cannot sample {n} of {len(dataset)} instances")
    rng = np.random.default_rng(seed)
    picked = sorted(int(i) for i in rng.choice(len(dataset), size=n, replace=False)) if n else []
    lines = []
    if picked:
        lines.append("index\timage_id\tcaption\ttriplet\tsubject_ok\tobject_ok\trelation_ok")
    for i in picked:
        inst = dataset[i]
        marked = []
        for j, tok in enumerate(inst.tokens):
            tags = [t for t, k in (("S", inst.subj_idx), ("R", inst.rel_idx), ("O", inst.obj_idx)) if k == j]
            marked.append(f"[{'+'.join(tags)}:{tok}]" if tags else tok)
        trip = "/".join(inst.triplet)
        lines.append(f"{i}\t{inst.image_id}\t{' '.join(marked)}\t{trip}\t\t\t")
    text = "".join(line + "\n" for line in lines)
    if isinstance(out, (str, Path)):
        Path(out).write_text(text, encoding="utf-8")
    else:
        out.write(text)
    return picked


# -- file formats ------------------------------------------------------------


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{n}: {exc}") from exc


def write_jsonl(records: Iterable[Mapping], out: IO[str] | str | Path) -> int:
    if isinstance(out, (str, Path)):
        with open(out, "w", encoding="utf-8") as fh:
            return write_jsonl(records, fh)
    n = 0
    for rec in records:
        out.write(json.dumps(rec, ensure_ascii=False) + "\n")
        n += 1
    return n


def load_captions(path: str | Path) -> dict[str, CaptionSet]:
    """Read ``{"image_id", "captions": [...]}`` lines; repeated ids are merged."""
    texts: dict[str, list[str]] = {}
    for rec in read_jsonl(path):
        texts.setdefault(str(rec["image_id"]), []).extend(rec["captions"])
    return {k: CaptionSet.from_texts(k, v) for k, v in texts.items()}


def load_dataset(path: str | Path) -> list[Instance]:
    return [Instance.from_json(rec) for rec in read_jsonl(path)]


def save_dataset(instances: Iterable[Instance], out: IO[str] | str | Path) -> int:
    return write_jsonl((x.to_json() for x in instances), out)
