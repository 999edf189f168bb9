"""The full interaction model: pooling, co-embedding, contrastive and BAN heads.

Loss for a labelled batch::

    L = BCE(head logits, labels) + lambda * InfoNCE(scale * S)

``S`` holds cosine similarities between every drug and protein co-embedding
in the batch; positive-labelled pairs are the InfoNCE anchors and every
other pairing in the batch is a negative. Ablations swap components:
``use_la=False`` pools by row mean, ``use_ban=False`` feeds the
concatenated co-embeddings to the head instead of the BAN vector,
``use_cl=False`` zeroes lambda.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import embedding_store
from .attention_pool import PoolParams, canonical_order, pool_batch_backward, pool_batch_forward
from .bilinear_attention import (
    BanParams,
    MLPParams,
    attention_maps,
    ban_batch_backward,
    ban_batch_forward,
    bce_with_logits,
    mlp_backward,
    mlp_forward,
    sigmoid,
)
from .config import TrainConfig
from .contrastive_head import (
    ProjParams,
    info_nce,
    project_normalize,
    project_normalize_backward,
)
from .errors import DimMismatch, FormatError, ShapeMismatch
from .tensor_core import Param, dropout_mask


@dataclass
class Batch:
    drug: np.ndarray
    drug_off: np.ndarray
    protein: np.ndarray
    protein_off: np.ndarray
    labels: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.drug_off) - 1

    @classmethod
    def build(cls, drugs, proteins, labels=None, canonical: bool = False) -> "Batch":
        """Stack ragged token matrices. Rows are put in canonical order
        unless the caller guarantees they already are."""
        if len(drugs) != len(proteins):
            raise ShapeMismatch("drug and protein lists differ in length")
        if not canonical:
            drugs = [m[canonical_order(m)] for m in drugs]
            proteins = [m[canonical_order(m)] for m in proteins]
        d_off = np.zeros(len(drugs) + 1, dtype=np.int64)
        t_off = np.zeros(len(proteins) + 1, dtype=np.int64)
        d_off[1:] = np.cumsum([m.shape[0] for m in drugs])
        t_off[1:] = np.cumsum([m.shape[0] for m in proteins])
        lab = None if labels is None else np.asarray(labels, dtype=np.float64)
        return cls(np.vstack(drugs), d_off, np.vstack(proteins), t_off, lab)


@dataclass
class Forward:
    logits: np.ndarray
    probs: np.ndarray
    cosine: np.ndarray
    loss: float | None
    bce: float | None
    con: float | None  # lambda-weighted contrastive contribution
    alpha_drug: np.ndarray
    alpha_protein: np.ndarray
    cache: dict


class SabanModel:
    def __init__(self, cfg: TrainConfig, rng=None):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        self.pool_d = PoolParams.init("pool_d", cfg.d_drug, cfg.ffn_mult * cfg.d_drug, rng)
        self.pool_t = PoolParams.init("pool_t", cfg.d_protein, cfg.ffn_mult * cfg.d_protein, rng)
        self.proj = ProjParams.init(cfg.d_drug, cfg.d_protein, cfg.latent_dim, rng, cfg.scale_init)
        if cfg.use_ban:
            self.ban = BanParams.init(cfg.d_drug, cfg.d_protein, cfg.rank, cfg.glimpses, rng)
            head_in = self.ban.width
        else:
            self.ban = None
            head_in = 2 * cfg.latent_dim
        self.head = MLPParams.init("head", head_in, cfg.mlp_hidden, rng)

    @property
    def pool_mode(self) -> str:
        return "attention" if self.cfg.use_la else "mean"

    def params(self) -> list[Param]:
        out = self.pool_d.params() + self.pool_t.params() + self.proj.params()
        if self.ban is not None:
            out += self.ban.params()
        return out + self.head.params()

    def named_params(self) -> dict[str, Param]:
        return {p.name: p for p in self.params()}

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def _check_dims(self, batch: Batch):
        if batch.drug.shape[1] != self.cfg.d_drug:
            raise DimMismatch(f"drug embeddings have dim {batch.drug.shape[1]}, model expects {self.cfg.d_drug}")
        if batch.protein.shape[1] != self.cfg.d_protein:
            raise DimMismatch(f"protein embeddings have dim {batch.protein.shape[1]}, "
                              f"model expects {self.cfg.d_protein}")

    def forward(self, batch: Batch, rng=None) -> Forward:
        """Run the model; ``rng`` enables dropout (training mode)."""
        self._check_dims(batch)
        cfg = self.cfg
        B = batch.size
        rate = cfg.dropout
        mode = self.pool_mode
        c = {}
        hd, alpha_d, c["pool_d"] = pool_batch_forward(
            batch.drug, batch.drug_off, self.pool_d, mode,
            dropout_mask(rng, (B, self.pool_d.ffn.w1.shape[1]), rate))
        ht, alpha_t, c["pool_t"] = pool_batch_forward(
            batch.protein, batch.protein_off, self.pool_t, mode,
            dropout_mask(rng, (B, self.pool_t.ffn.w1.shape[1]), rate))
        zd, c["zd"] = project_normalize(hd, self.proj.w_d, self.proj.b_d)
        zt, c["zt"] = project_normalize(ht, self.proj.w_t, self.proj.b_t)
        S = zd @ zt.T
        c["S"] = S

        if self.ban is not None:
            f, c["ban"] = ban_batch_forward(batch.drug, batch.drug_off, batch.protein,
                                            batch.protein_off, self.ban, cfg.softmax_axis)
            fmask = dropout_mask(rng, f.shape, rate)
            c["fmask"] = fmask
            x = f if fmask is None else f * fmask
        else:
            x = np.hstack([zd, zt])
        logits, c["head"] = mlp_forward(x, self.head, dropout_mask(rng, (B, cfg.mlp_hidden), rate))
        probs = sigmoid(logits)

        loss = bce = con = None
        if batch.labels is not None:
            bce, c["dlogits"] = bce_with_logits(logits, batch.labels)
            lam = cfg.effective_lambda
            con = 0.0
            if lam > 0 and B >= 2:
                res = info_nce(S, self.proj.scale(), anchors=batch.labels > 0.5)
                c["nce"] = res
                con = lam * res.loss
            loss = bce + con
        return Forward(logits, probs, np.clip(np.diag(S).copy(), -1.0, 1.0), loss, bce, con,
                       alpha_d, alpha_t, c)

    def backward(self, fwd: Forward) -> None:
        """Accumulate gradients of ``fwd.loss`` into every parameter."""
        c = fwd.cache
        cfg = self.cfg
        dx = mlp_backward(c["dlogits"], c["head"], self.head)
        L = cfg.latent_dim
        dzd = np.zeros_like(c["zd"][1])
        dzt = np.zeros_like(c["zt"][1])
        if self.ban is not None:
            df = dx if c["fmask"] is None else dx * c["fmask"]
            ban_batch_backward(df, c["ban"], self.ban)
        else:
            dzd += dx[:, :L]
            dzt += dx[:, L:]
        zd, zt = c["zd"][1], c["zt"][1]
        if "nce" in c:
            lam = cfg.effective_lambda
            res = c["nce"]
            dS = lam * res.grad_s
            dzd += dS @ zt
            dzt += dS.T @ zd
            self.proj.log_scale.grad += lam * res.grad_scale * self.proj.scale_grad_factor()
        if self.ban is None or "nce" in c:
            dhd = project_normalize_backward(dzd, c["zd"], self.proj.w_d, self.proj.b_d)
            dht = project_normalize_backward(dzt, c["zt"], self.proj.w_t, self.proj.b_t)
            pool_batch_backward(dhd, c["pool_d"], self.pool_d)
            pool_batch_backward(dht, c["pool_t"], self.pool_t)

    def loss_and_grad(self, batch: Batch, rng=None) -> float:
        self.zero_grad()
        fwd = self.forward(batch, rng)
        self.backward(fwd)
        return fwd.loss

    def scores(self, batch: Batch, mode: str = "ban") -> np.ndarray:
        fwd = self.forward(Batch(batch.drug, batch.drug_off, batch.protein, batch.protein_off))
        if mode == "cosine":
            return fwd.cosine
        if mode == "ban":
            return fwd.probs
        raise ValueError(f"unknown score mode {mode!r}")

    def explain_pair(self, H_d, H_t) -> dict:
        """Pooling weights and per-glimpse BAN maps for one pair, in the
        caller's token order."""
        od, ot = canonical_order(H_d), canonical_order(H_t)
        batch = Batch.build([H_d[od]], [H_t[ot]], canonical=True)
        fwd = self.forward(batch)
        out = {}
        for key, order, alpha in (("alpha_drug", od, fwd.alpha_drug), ("alpha_protein", ot, fwd.alpha_protein)):
            restored = np.empty_like(alpha)
            restored[order] = alpha
            out[key] = restored
        if self.ban is not None:
            sorted_maps = attention_maps(fwd.cache["ban"], 0, self.ban.glimpses)
            maps = np.empty_like(sorted_maps)
            maps[:, od[:, None], ot[None, :]] = sorted_maps
            out["ban_maps"] = maps
        out["prob"] = float(fwd.probs[0])
        out["cosine"] = float(fwd.cosine[0])
        return out

    # checkpoints -------------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.params()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.params():
            if p.name not in state:
                raise FormatError(f"checkpoint lacks tensor {p.name}")
            value = np.asarray(state[p.name], dtype=np.float64)
            if value.shape != p.value.shape:
                raise FormatError(f"{p.name}: checkpoint shape {value.shape}, model {p.value.shape}")
            p.value[...] = value

    def save(self, directory, extra: dict | None = None) -> None:
        """Write ``manifest.json`` plus one float64 SBEM file per tensor."""
        directory = Path(directory)
        (directory / "params").mkdir(parents=True, exist_ok=True)
        shapes = {}
        for p in self.params():
            embedding_store.write_matrix(directory / "params" / f"{p.name}.sbem", p.value,
                                         embedding_store.VERSION_F64)
            shapes[p.name] = list(p.value.shape)
        manifest = {"config": self.cfg.to_dict(), "config_hash": self.cfg.digest(), "tensors": shapes}
        if extra:
            manifest.update(extra)
        with open(directory / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, directory) -> "SabanModel":
        directory = Path(directory)
        manifest_path = directory / "manifest.json"
        if not manifest_path.exists():
            raise FormatError(f"{directory} is not a checkpoint (no manifest.json)")
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        cfg = TrainConfig(**manifest["config"])
        if cfg.digest() != manifest.get("config_hash"):
            raise FormatError(f"{directory}: config hash mismatch")
        model = cls(cfg)
        state = {}
        for name, shape in manifest["tensors"].items():
            value = embedding_store.read_matrix(directory / "params" / f"{name}.sbem")
            state[name] = value.reshape(shape)
        model.load_state(state)
        return model
