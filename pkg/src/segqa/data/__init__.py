"""Datasets: synthetic slices, ACDC ingestion, mask degradation, quality corpora."""

from .corpus import build_quality_corpus
from .degrade import DegradationSpec, degrade_mask
from .storage import (SPLITS, DatasetManifest, QualitySample, Record, load_samples, read_array, stack,
                      write_array)
from .synthetic import generate_synthetic_dataset

__all__ = [
    "SPLITS", "DatasetManifest", "DegradationSpec", "QualitySample", "Record", "build_quality_corpus",
    "degrade_mask", "generate_synthetic_dataset", "ingest_acdc", "load_samples", "read_array", "stack",
    "write_array",
]


def __getattr__(name):
    if name == "ingest_acdc":
        from .acdc import ingest_acdc
        return ingest_acdc
    raise AttributeError(name)
