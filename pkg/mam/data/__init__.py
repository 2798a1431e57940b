"""Data handling: schema, CSV ingest, normalization, folds and synthetic systems."""

from mam.data.dataset import (
    PairDataset,
    SequencePair,
    load_dataset,
    load_hidden,
    save_dataset,
    stack_pairs,
)
from mam.data.folds import FoldSpec, make_folds, split_fold
from mam.data.ingest import IngestReport, ingest_csv
from mam.data.normalize import MinMaxNormalizer
from mam.data.schema import MODALITIES, ModalitySchema, get_schema, profile_index, to_canonical_frame
from mam.data.synthetic import (
    SyntheticResult,
    SyntheticSystem,
    delay_embed,
    generate_synthetic,
    premise_r2,
)

__all__ = [
    "MODALITIES",
    "FoldSpec",
    "IngestReport",
    "MinMaxNormalizer",
    "ModalitySchema",
    "PairDataset",
    "SequencePair",
    "SyntheticResult",
    "SyntheticSystem",
    "delay_embed",
    "generate_synthetic",
    "get_schema",
    "ingest_csv",
    "load_dataset",
    "load_hidden",
    "make_folds",
    "premise_r2",
    "profile_index",
    "save_dataset",
    "split_fold",
    "stack_pairs",
    "to_canonical_frame",
]
