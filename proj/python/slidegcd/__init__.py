"""Slide-level graph collaborative classification.

The heavy lifting lives in the compiled ``_slidegcd`` extension; this package
re-exports it and adds a console entry point.
"""

import sys

from ._slidegcd import (
    Checkpoint,
    ConfigError,
    Dataset,
    DimensionError,
    FormatError,
    IndexError,
    InputError,
    IoError,
    ParameterError,
    PatchBag,
    SlideGCDError,
    StateError,
    TrainingError,
    build_hyperedges,
    dataset_from_manifests,
    default_config,
    generate_synthetic,
    load_bag,
    load_manifest,
    run_cli,
    train,
    write_bag,
)

__all__ = [
    "Checkpoint",
    "ConfigError",
    "Dataset",
    "DimensionError",
    "FormatError",
    "IndexError",
    "InputError",
    "IoError",
    "ParameterError",
    "PatchBag",
    "SlideGCDError",
    "StateError",
    "TrainingError",
    "build_hyperedges",
    "dataset_from_manifests",
    "default_config",
    "generate_synthetic",
    "load_bag",
    "load_manifest",
    "main",
    "run_cli",
    "train",
    "write_bag",
]


def main(argv=None):
    """Console entry point mirroring the ``slidegcd`` executable."""
    code, out, err = run_cli(list(sys.argv[1:] if argv is None else argv))
    sys.stdout.write(out)
    sys.stderr.write(err)
    return code
