"""Hand-built alignment fixture with planted embeddings.

Every word owns a private axis. A near-synonym of a concept gets weight ``c``
on the concept axis and ``sqrt(1 - c**2)`` on its own axis, so the cosine
between any two words is simply the product of their concept weights. That
makes every score in the tables below computable by hand.
"""

import numpy as np

from scenelay.alignment import CaptionSet, ConceptTriplet
from scenelay.embeddings import EmbeddingTable
from scenelay.geometry import PixelBox

CONCEPTS = ["person", "read", "book", "ride", "horse", "eat", "pizza", "hold", "kite", "cut", "cake", "throw", "frisbee"]

# word -> (concept, cosine with that concept)
SYNONYMS = {
    "man": ("person", 0.9),
    "woman": ("person", 0.85),
    "boy": ("person", 0.8),
    "kid": ("person", 0.8),
    "girl": ("person", 0.85),
    "reading": ("read", 0.9),
    "novel": ("book", 0.8),
    "riding": ("ride", 0.9),
    "rides": ("ride", 0.95),
    "pony": ("horse", 0.85),
    "eats": ("eat", 0.9),
    "eating": ("eat", 0.9),
    "holding": ("hold", 0.9),
    "cutting": ("cut", 0.9),
    "dessert": ("cake", 0.7),
    "throwing": ("throw", 0.9),
    "disc": ("frisbee", 0.6),
    "kites": ("kite", 0.9),
}

# in-vocabulary words unrelated to every concept; anything else in a caption is OOV
FILLERS = ["a", "the", "on", "with", "table", "flying"]


def planted_table() -> EmbeddingTable:
    words = CONCEPTS + list(SYNONYMS) + FILLERS
    dim = len(words)
    axis = {w: i for i, w in enumerate(words)}
    entries = {}
    for w in words:
        v = np.zeros(dim)
        if w in SYNONYMS:
            concept, c = SYNONYMS[w]
            v[axis[concept]] = c
            v[axis[w]] = np.sqrt(1.0 - c * c)
        else:
            v[axis[w]] = 1.0
        entries[w] = v
    return EmbeddingTable.from_dict(entries, dim=dim)


def _triplet(image_id, s, r, o, s_box, o_box):
    return ConceptTriplet(image_id, s, r, o, PixelBox(*s_box), PixelBox(*o_box), 640.0, 480.0)


TRIPLETS = [
    _triplet("img1", "person", "read", "book", (100, 100, 200, 400), (180, 250, 260, 320)),
    _triplet("img2", "person", "ride", "horse", (300, 50, 400, 250), (250, 150, 500, 450)),
    _triplet("img3", "person", "eat", "pizza", (50, 60, 250, 470), (200, 300, 300, 360)),
    # object left of subject: emitted mirrored
    _triplet("img4", "person", "hold", "kite", (400, 200, 480, 470), (100, 20, 220, 120)),
    _triplet("img5", "person", "cut", "cake", (100, 100, 300, 400), (280, 300, 380, 380)),
    _triplet("img6", "person", "throw", "frisbee", (100, 100, 300, 400), (400, 80, 450, 110)),
]

CAPTIONS = {
    "img1": CaptionSet.from_texts("img1", [
        "a man sitting on a bench",  # 0.9 + 0 + 0 = 0.9
        "a man reading a book.",  # 0.9 + 0.9 + 1.0 = 2.8
        "a woman with a novel",  # 0.85 + 0 + 0.8 = 1.65
    ]),
    "img2": CaptionSet.from_texts("img2", [
        "a boy riding a pony",  # 0.8 + 0.9 + 0.85 = 2.55
        "a woman on a horse",  # 0.85 + 0 + 1.0 = 1.85
        "a person rides a horse",  # 1.0 + 0.95 + 1.0 = 2.95
    ]),
    "img3": CaptionSet.from_texts("img3", [
        "the man eats pizza",  # 0.9 + 0.9 + 1.0 = 2.8
        "a man eating pizza slices",  # 2.8 as well; the earlier caption wins
        "pizza on a table",  # 0 + 0 + 1.0 = 1.0
    ]),
    "img4": CaptionSet.from_texts("img4", [
        "a kid holding a kite kite",  # 0.8 + 0.9 + 1.0 = 2.7, first "kite" wins
        "a girl flying a kite",  # 0.85 + 0 + 1.0 = 1.85
        "kids with kites",  # "kids" is OOV: 0 + 0 + 0.9 = 0.9
    ]),
    "img5": CaptionSet.from_texts("img5", [
        "a woman cutting a dessert",  # 0.85 + 0.9 + 0.7 = 2.45, sc_O below 0.75
        "a woman with a dessert",  # 0.85 + 0 + 0.7 = 1.55
        "a table",  # 0
    ]),
    "img6": CaptionSet.from_texts("img6", [
        "a dog on the grass",  # "dog", "grass" OOV: 0
        "a man throwing a disc",  # 0.9 + 0.9 + 0.6 = 2.4, sc_O below 0.75
        "a disc",  # 0 + 0 + 0.6
    ]),
}

# image_id -> (caption index, j_S, j_R, j_O, sc_S, sc_R, sc_O)
EXPECTED = {
    "img1": (1, 1, 2, 4, 0.9, 0.9, 1.0),
    "img2": (2, 1, 2, 4, 1.0, 0.95, 1.0),
    "img3": (0, 1, 2, 3, 0.9, 0.9, 1.0),
    "img4": (0, 1, 2, 4, 0.8, 0.9, 1.0),
    "img5": (0, 1, 2, 4, 0.85, 0.9, 0.7),
    "img6": (1, 1, 2, 4, 0.9, 0.9, 0.6),
}
PLANTED_LOW = {"img5", "img6"}
