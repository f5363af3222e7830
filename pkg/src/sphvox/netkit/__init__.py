"""Toy-scale trainable models built on the spherical voxel pipeline."""

from .data import CATEGORY_PARTS, FAMILIES, DatasetParams, SyntheticDataset, gen_synthetic_dataset
from .model import (
    Model,
    ModelConfig,
    descriptor,
    forward_classification,
    forward_segmentation,
    init_model,
)
from .tape import Tape, Var
