"""Snapshot sources: toric code, random circuits, parity ensembles, file ingestion."""

from .io import read_snapshots, write_snapshots
from .parity import parity_task_sample
from .recipes import parity_dataset, rqc_dataset, toric_dataset, toric_sweep
from .rqc import RqcParams, rqc_sample_bitstrings, rqc_simulate
from .sets import Dataset, StateSamples, filter_particle_number, partition_into_sets
from .toric import (
    ToricCodeParams,
    apply_bitflip_channel,
    plaquette_transform,
    sample_toric_ground,
    window_slices,
)

__all__ = [
    "Dataset", "RqcParams", "StateSamples", "ToricCodeParams",
    "apply_bitflip_channel", "filter_particle_number", "parity_dataset", "parity_task_sample",
    "partition_into_sets", "plaquette_transform", "read_snapshots", "rqc_dataset",
    "rqc_sample_bitstrings", "rqc_simulate", "sample_toric_ground", "toric_dataset",
    "toric_sweep", "window_slices", "write_snapshots",
]
