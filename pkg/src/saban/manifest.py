"""Run manifests: everything needed to repeat a command exactly."""

from __future__ import annotations

import json
import os
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, kernels, metrics, protein_vocab, selfies_codec
from .embedding_store import VERSION_F32, VERSION_F64, hash_path

MANIFEST_NAME = "run_manifest.json"


def chosen_defaults() -> dict:
    """Defaults this implementation picked where the model description is silent."""
    return {
        "residue_alphabet": protein_vocab.RESIDUES,
        "geometry_alphabet": protein_vocab.GEOMETRY,
        "selfies_ring_duplicates": "drop",
        "bedroc_alpha": metrics.BEDROC_ALPHA,
        "ef_fractions": list(metrics.EF_FRACTIONS),
        "ef_top_count": "ceil",
        "tie_order": "stable by input position",
        "accuracy_threshold": 0.5,
        "split_unit": "pair",
        "contrastive_negatives": "in-batch",
        "contrastive_anchors": "positive pairs",
        "adamw": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "decay": "all parameters"},
        "dropout_stream": "Philox(seed), counter = optimiser step",
        "sbem_versions": {"embeddings": VERSION_F32, "checkpoints": VERSION_F64},
        "row_order": "canonical bytewise sort before reductions",
        "selfies_vocab_size": selfies_codec.drug_vocab_size(),
    }


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict | None = None
    seed: int | None = None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    versions: dict[str, str] = field(default_factory=dict)
    backend: str = kernels.BACKEND
    threads: str = field(default_factory=lambda: os.environ.get("SABAN_THREADS", "1"))
    defaults: dict = field(default_factory=chosen_defaults)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.versions:
            self.versions = {"saban": __version__, "numpy": np.__version__,
                             "python": platform.python_version(), "platform": sys.platform}

    def add_input(self, path) -> None:
        self.inputs[str(path)] = hash_path(path)

    def add_output(self, path) -> None:
        self.outputs[str(path)] = hash_path(path)

    def write(self, path) -> Path:
        path = Path(path)
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")
        return path


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


def manifest_path_for(out) -> Path:
    out = Path(out)
    return out / MANIFEST_NAME if out.is_dir() else out.with_name(out.name + ".manifest.json")


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
