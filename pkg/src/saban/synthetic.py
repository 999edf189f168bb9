"""Planted-signal datasets for end-to-end checks.

Every drug ``i`` gets a hidden sign ``a_i`` and every protein ``j`` a sign
``b_j``. Their synthetic token embeddings are shifted by
``strength * a_i * u`` (drugs) or ``strength * b_j * w`` (proteins) for
fixed unit directions ``u`` and ``w``, and the pair label is
``a_i * b_j > 0``. The signal is a rank-1 factor per modality, so any
model that can read the direction from pooled tokens and multiply the two
signs recovers the labels exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import protein_vocab, selfies_codec
from .embedding_store import EmbeddingStore, PairRecord, TokenEmbeddings, synthesize_store


@dataclass
class PlantedDataset:
    store: EmbeddingStore
    pairs: list[PairRecord]
    drug_sign: dict[str, int]
    protein_sign: dict[str, int]
    entities: list[tuple[str, str, str]]


def random_protein(rng, length: int) -> str:
    res = rng.choice(list(protein_vocab.RESIDUES[:20]), size=length)
    geo = rng.choice(list(protein_vocab.GEOMETRY[:20]), size=length)
    return "".join(r + g for r, g in zip(res, geo))


def random_selfies(rng, length: int) -> str:
    texts = selfies_codec.VOCAB_TEXTS
    return "".join(texts[k] for k in rng.integers(0, len(texts), size=length))


def random_entities(rng, n_drugs: int, n_proteins: int, drug_len=(4, 12), protein_len=(8, 24)):
    rows = []
    for i in range(n_drugs):
        rows.append((f"D{i:04d}", "drug", random_selfies(rng, int(rng.integers(*drug_len, endpoint=True)))))
    for j in range(n_proteins):
        rows.append((f"P{j:04d}", "protein",
                     random_protein(rng, int(rng.integers(*protein_len, endpoint=True)))))
    return rows


def _unit(rng, dim):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def planted_dataset(n_pairs: int = 2000, n_drugs: int = 200, n_proteins: int = 50,
                    d_drug: int = 64, d_protein: int = 64, strength: float = 1.0,
                    seed: int = 0) -> PlantedDataset:
    if n_pairs > n_drugs * n_proteins:
        raise ValueError("more pairs requested than distinct drug/protein combinations")
    rng = np.random.default_rng(seed)
    entities = random_entities(rng, n_drugs, n_proteins)
    base = synthesize_store(entities, seed, d_drug, d_protein)
    u, w = _unit(rng, d_drug), _unit(rng, d_protein)
    # balanced signs so both labels are common
    a = rng.permutation(np.resize([1, -1], n_drugs))
    b = rng.permutation(np.resize([1, -1], n_proteins))
    drugs, proteins, seqs = {}, {}, {}
    drug_sign, protein_sign = {}, {}
    for k, (eid, modality, seq) in enumerate(entities):
        m = base.get(modality, eid).matrix
        if modality == "drug":
            s = int(a[k])
            drugs[eid] = TokenEmbeddings(eid, m + strength * s * u)
            drug_sign[eid] = s
        else:
            s = int(b[k - n_drugs])
            proteins[eid] = TokenEmbeddings(eid, m + strength * s * w)
            protein_sign[eid] = s
        seqs[(modality, eid)] = seq
    store = EmbeddingStore.from_mapping(drugs, proteins, seqs)
    flat = rng.choice(n_drugs * n_proteins, size=n_pairs, replace=False)
    pairs = []
    for code in np.sort(flat):
        di, pj = divmod(int(code), n_proteins)
        d_id, p_id = f"D{di:04d}", f"P{pj:04d}"
        pairs.append(PairRecord(d_id, p_id, int(drug_sign[d_id] * protein_sign[p_id] > 0)))
    return PlantedDataset(store, pairs, drug_sign, protein_sign, entities)
