"""Predict where an object sits in an image from a caption and the subject's box."""

from .alignment import AlignmentScore, CaptionSet, ConceptTriplet, Instance, build_dataset
from .embeddings import EmbeddingTable, cosine, load_table, lookup
from .geometry import BBox, PixelBox, iou, mirror_pair, normalize_box
from .metrics import MetricsReport, evaluate
from .model import EncoderKind, InputMode, ModelConfig, SpatialModel, build_model
from .training import TrainConfig, cross_validate, gradient_check, kfold_split, train_fold

__version__ = "0.1.0"
