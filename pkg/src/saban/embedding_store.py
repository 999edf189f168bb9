"""Per-token embedding matrices: SBEM files, synthetic generation, pair lists.

SBEM layout (little-endian)::

    b"SBEM" | version u32 | n u32 | d u32 | n*d values, row-major

Version 1 stores 32-bit floats (embedding files); version 2 stores 64-bit
floats (model checkpoints). Matrices are always float64 in memory.
"""

from __future__ import annotations

import csv
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels, protein_vocab, selfies_codec
from .errors import (
    BadLabel,
    BadMagic,
    DimMismatch,
    EmptySequence,
    FormatError,
    MissingColumn,
    MissingEntity,
    TruncatedFile,
)

MAGIC = b"SBEM"
HEADER = struct.Struct("<4sIII")
VERSION_F32 = 1
VERSION_F64 = 2
_DTYPES = {VERSION_F32: np.dtype("<f4"), VERSION_F64: np.dtype("<f8")}

DRUG_DIM = 768
PROTEIN_DIM = 1280
MODALITIES = ("drug", "protein")

# Low-bias BindingDB thresholds (nM).
POSITIVE_IC50 = 100.0
NEGATIVE_IC50 = 10000.0

_ID_PATTERN = re.compile(r"^[A-Za-z0-9._-]+$")


@dataclass(frozen=True)
class TokenEmbeddings:
    entity_id: str
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise EmptySequence(f"{self.entity_id!r}: embedding matrix must be n x d with n, d >= 1")
        if not np.isfinite(m).all():
            raise FormatError(f"{self.entity_id!r}: embedding contains non-finite entries")
        m = m.copy() if m is self.matrix else m
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n_tokens(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class PairRecord:
    drug_id: str
    protein_id: str
    label: int
    ic50_nm: float | None = None


def synth_embedding(token_ids, dim: int, seed: int, entity_id: str = "") -> TokenEmbeddings:
    """Deterministic stand-in for a frozen encoder.

    Row ``i`` depends only on ``(token_ids[i], i, seed)``; entries lie in
    ``[-1, 1)``.
    """
    ids = np.asarray(list(token_ids), dtype=np.int64)
    if ids.size == 0:
        raise EmptySequence("synthetic embedding needs at least one token")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if (ids < 0).any():
        raise ValueError("token ids must be non-negative")
    return TokenEmbeddings(entity_id, kernels.synth_rows(ids, int(dim), int(seed)))


def write_matrix(path, matrix, version: int = VERSION_F32) -> None:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("SBEM holds a 2-D matrix")
    if not np.isfinite(m).all():
        raise FormatError("refusing to write non-finite values")
    dtype = _DTYPES[version]
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, version, m.shape[0], m.shape[1]))
        fh.write(np.ascontiguousarray(m, dtype=dtype).tobytes())


def read_matrix(path, expect_dim: int | None = None) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER.size:
        if raw[:4] != MAGIC[: len(raw)]:
            raise BadMagic(f"{path}: not an SBEM file")
        raise TruncatedFile(f"{path}: header truncated")
    magic, version, n, d = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version not in _DTYPES:
        raise FormatError(f"{path}: unsupported SBEM version {version}")
    if expect_dim is not None and d != expect_dim:
        raise DimMismatch(f"{path}: dimension {d}, expected {expect_dim}")
    dtype = _DTYPES[version]
    need = n * d * dtype.itemsize
    body = raw[HEADER.size:]
    if len(body) < need:
        raise TruncatedFile(f"{path}: header declares {n}x{d}, file holds "
                            f"{len(body) // max(d * dtype.itemsize, 1)} rows")
    if len(body) > need:
        raise FormatError(f"{path}: {len(body) - need} trailing bytes")
    return np.frombuffer(body, dtype=dtype).reshape(n, d).astype(np.float64)


def write_embeddings(path, emb: TokenEmbeddings, version: int = VERSION_F32) -> None:
    write_matrix(path, emb.matrix, version)


def read_embeddings(path, expect_dim: int | None = None, entity_id: str | None = None) -> TokenEmbeddings:
    m = read_matrix(path, expect_dim)
    return TokenEmbeddings(entity_id if entity_id is not None else Path(path).stem, m)


def load_pairs(path, low_bias_filter: bool = False) -> list[PairRecord]:
    """Read a pairs TSV (``drug_id, protein_id, label[, ic50_nm]``).

    With ``low_bias_filter`` labels come from IC50: below 100 nM is
    positive, above 10000 nM negative, anything between is dropped; drugs
    left with a single class are then removed.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        header = reader.fieldnames or []
        required = ["drug_id", "protein_id"] + ([] if low_bias_filter else ["label"])
        if low_bias_filter:
            required.append("ic50_nm")
        for col in required:
            if col not in header:
                raise MissingColumn(f"{path}: missing column {col!r}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            ic50 = None
            if row.get("ic50_nm") not in (None, ""):
                try:
                    ic50 = float(row["ic50_nm"])
                except ValueError:
                    raise BadLabel(f"{path}:{lineno}: bad ic50_nm {row['ic50_nm']!r}") from None
            if low_bias_filter:
                if ic50 is None:
                    raise BadLabel(f"{path}:{lineno}: ic50_nm required by the low-bias filter")
                if ic50 < POSITIVE_IC50:
                    label = 1
                elif ic50 > NEGATIVE_IC50:
                    label = 0
                else:
                    continue
            else:
                text = (row.get("label") or "").strip()
                if text not in ("0", "1"):
                    raise BadLabel(f"{path}:{lineno}: label must be 0 or 1, got {text!r}")
                label = int(text)
            records.append(PairRecord(row["drug_id"], row["protein_id"], label, ic50))
    if low_bias_filter:
        records = drop_single_class_drugs(records)
    return records


def drop_single_class_drugs(records: list[PairRecord]) -> list[PairRecord]:
    classes: dict[str, set[int]] = {}
    for rec in records:
        classes.setdefault(rec.drug_id, set()).add(rec.label)
    return [rec for rec in records if len(classes[rec.drug_id]) == 2]


def write_pairs(path, records) -> None:
    with_ic50 = any(r.ic50_nm is not None for r in records)
    with open(path, "w", newline="") as fh:
        cols = ["drug_id", "protein_id", "label"] + (["ic50_nm"] if with_ic50 else [])
        fh.write("\t".join(cols) + "\n")
        for r in records:
            vals = [r.drug_id, r.protein_id, str(r.label)]
            if with_ic50:
                vals.append("" if r.ic50_nm is None else repr(r.ic50_nm))
            fh.write("\t".join(vals) + "\n")


def tokenize_entity(modality: str, sequence: str) -> list[int]:
    if modality == "protein":
        return protein_vocab.encode_sequence(sequence)
    if modality == "drug":
        ids = selfies_codec.encode_drug(sequence)
        if not ids:
            raise EmptySequence("SELFIES string has no tokens")
        return ids
    raise ValueError(f"unknown modality {modality!r}")


def token_labels(modality: str, sequence: str) -> list[str]:
    if modality == "protein":
        return [protein_vocab.token_label(t) for t in protein_vocab.encode_sequence(sequence)]
    return [t.text for t in selfies_codec.tokenize(sequence)]


class EmbeddingStore:
    """Embeddings keyed by ``(modality, entity_id)``.

    On disk a store is a directory with ``drug/<id>.sbem``,
    ``protein/<id>.sbem`` and an optional ``entities.tsv`` listing
    ``entity_id, modality, sequence``. Loaded matrices are cached and
    read-only.
    """

    def __init__(self, root=None, dims: dict[str, int] | None = None):
        self.root = Path(root) if root is not None else None
        self.dims = dict(dims) if dims else {}
        self._cache: dict[tuple[str, str], TokenEmbeddings] = {}
        self._sequences: dict[tuple[str, str], str] = {}
        if self.root is not None:
            self._load_sequences()

    @classmethod
    def from_mapping(cls, drugs: dict, proteins: dict, sequences=None) -> "EmbeddingStore":
        store = cls()
        for modality, mapping in (("drug", drugs), ("protein", proteins)):
            for key, value in mapping.items():
                emb = value if isinstance(value, TokenEmbeddings) else TokenEmbeddings(key, value)
                store._cache[(modality, key)] = emb
        if sequences:
            store._sequences.update(sequences)
        return store

    def _load_sequences(self):
        index = self.root / "entities.tsv"
        if not index.exists():
            return
        with open(index, newline="") as fh:
            for row in csv.DictReader(fh, delimiter="\t"):
                self._sequences[(row["modality"], row["entity_id"])] = row["sequence"]

    def _path(self, modality: str, entity_id: str) -> Path:
        if not _ID_PATTERN.match(entity_id):
            raise MissingEntity(f"invalid entity id {entity_id!r}")
        return self.root / modality / f"{entity_id}.sbem"

    def get(self, modality: str, entity_id: str) -> TokenEmbeddings:
        if modality not in MODALITIES:
            raise ValueError(f"unknown modality {modality!r}")
        key = (modality, entity_id)
        if key in self._cache:
            emb = self._cache[key]
        else:
            if self.root is None or not self._path(modality, entity_id).exists():
                raise MissingEntity(f"{modality} {entity_id!r} not in store")
            emb = read_embeddings(self._path(modality, entity_id), entity_id=entity_id)
            self._cache[key] = emb
        expect = self.dims.get(modality)
        if expect is not None and emb.dim != expect:
            raise DimMismatch(f"{modality} {entity_id!r} has dim {emb.dim}, expected {expect}")
        return emb

    def ids(self, modality: str) -> list[str]:
        found = {k[1] for k in self._cache if k[0] == modality}
        if self.root is not None and (self.root / modality).is_dir():
            found.update(p.stem for p in (self.root / modality).glob("*.sbem"))
        return sorted(found)

    def sequence(self, modality: str, entity_id: str) -> str | None:
        return self._sequences.get((modality, entity_id))

    def save(self, root, version: int = VERSION_F32) -> None:
        root = Path(root)
        for modality in MODALITIES:
            (root / modality).mkdir(parents=True, exist_ok=True)
        for (modality, entity_id), emb in sorted(self._cache.items()):
            if not _ID_PATTERN.match(entity_id):
                raise MissingEntity(f"invalid entity id {entity_id!r}")
            write_embeddings(root / modality / f"{entity_id}.sbem", emb, version)
        if self._sequences:
            with open(root / "entities.tsv", "w") as fh:
                fh.write("entity_id\tmodality\tsequence\n")
                for (modality, entity_id), seq in sorted(self._sequences.items()):
                    fh.write(f"{entity_id}\t{modality}\t{seq}\n")


def read_entities(path) -> list[tuple[str, str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        for col in ("entity_id", "modality", "sequence"):
            if col not in (reader.fieldnames or []):
                raise MissingColumn(f"{path}: missing column {col!r}")
        return [(r["entity_id"], r["modality"], r["sequence"]) for r in reader]


def synthesize_store(entities, seed: int, drug_dim: int = DRUG_DIM,
                     protein_dim: int = PROTEIN_DIM) -> EmbeddingStore:
    """Build an in-memory store from ``(entity_id, modality, sequence)`` rows."""
    drugs, proteins, seqs = {}, {}, {}
    for entity_id, modality, sequence in entities:
        ids = tokenize_entity(modality, sequence)
        # vocabularies overlap in id space; offset drug ids so modalities differ
        if modality == "drug":
            drugs[entity_id] = synth_embedding(
                [t + protein_vocab.vocab_size() for t in ids], drug_dim, seed, entity_id)
        else:
            proteins[entity_id] = synth_embedding(ids, protein_dim, seed, entity_id)
        seqs[(modality, entity_id)] = sequence
    return EmbeddingStore.from_mapping(drugs, proteins, seqs)


def hash_path(path) -> str:
    """sha256 of a file, or of every file under a directory (sorted)."""
    import hashlib

    h = hashlib.sha256()
    p = Path(path)
    files = [p] if p.is_file() else sorted(q for q in p.rglob("*") if q.is_file())
    for f in files:
        if p.is_dir():
            h.update(str(f.relative_to(p)).encode() + b"\0")
        with open(f, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


__all__ = [
    "TokenEmbeddings", "PairRecord", "EmbeddingStore", "synth_embedding",
    "write_embeddings", "read_embeddings", "write_matrix", "read_matrix",
    "load_pairs", "write_pairs", "synthesize_store", "read_entities",
    "DRUG_DIM", "PROTEIN_DIM",
]
