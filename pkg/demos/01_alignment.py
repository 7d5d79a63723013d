"""Walk through caption alignment on a toy embedding table.

Run with ``python3 demos/01_alignment.py``.
"""

# %%
import numpy as np

from scenelay.alignment import CaptionSet, ConceptTriplet, build_dataset, select_caption
from scenelay.embeddings import EmbeddingTable, cosine, lookup
from scenelay.geometry import PixelBox

# Each word gets a random 20-d vector; near-synonyms share most of their direction.
rng = np.random.default_rng(0)
base = {w: rng.standard_normal(20) for w in ["person", "read", "book", "ride", "horse", "a", "on", "sofa"]}
vectors = dict(base)
vectors["man"] = base["person"] + 0.4 * rng.standard_normal(20)
vectors["reading"] = base["read"] + 0.3 * rng.standard_normal(20)
vectors["novel"] = base["book"] + 0.5 * rng.standard_normal(20)
table = EmbeddingTable.from_dict(vectors)

for word, concept in [("man", "person"), ("reading", "read"), ("novel", "book"), ("sofa", "book")]:
    print(f"cos({word}, {concept}) = {cosine(lookup(table, word), lookup(table, concept)):.3f}")

# %% The triplet and the candidate captions for its image
triplet = ConceptTriplet("img1", "person", "read", "book",
                         subject_box=PixelBox(100, 80, 300, 400), object_box=PixelBox(60, 200, 140, 260),
                         image_w=640, image_h=480)
caps = CaptionSet.from_texts("img1", ["a man on a sofa", "a man reading a novel", "a horse"])

idx, score = select_caption(triplet, caps, table)
tokens = caps.captions[idx]
print("chosen caption:", " ".join(tokens))
print(f"subject -> {tokens[score.j_s]!r} ({score.sc_s:.2f}), relation -> {tokens[score.j_r]!r} ({score.sc_r:.2f}), "
      f"object -> {tokens[score.j_o]!r} ({score.sc_o:.2f})")

# %% Building the dataset normalizes the boxes and mirrors the pair,
# because the book lies left of the person here.
instances, report = build_dataset([triplet], {"img1": caps}, table, threshold=0.5)
inst = instances[0]
print("mirrored:", inst.mirrored)
print("subject box:", np.round(inst.subject_box, 3))
print("object box: ", np.round(inst.object_box, 3))
print("report:", report.to_json())

# %% A strict threshold rejects the pair instead.
_, strict = build_dataset([triplet], {"img1": caps}, table, threshold=0.99)
print("with threshold 0.99:", strict.rejections)
