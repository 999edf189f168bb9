"""AdamW training with early stopping, k-fold splits and the ablation harness."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .attention_pool import canonical_order
from .config import TrainConfig
from .errors import ConfigError, MissingEntity, NonFiniteGradient, NonFiniteLoss, TooFewSamples
from .metrics import MetricReport, evaluate_scores
from .model import Batch, SabanModel
from .tensor_core import Param

# ---------------------------------------------------------------- optimiser


@dataclass
class AdamWState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adamw_step(params: list[Param], state: AdamWState, lr: float, weight_decay: float,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One decoupled-decay Adam update using each ``Param.grad``.

    ``theta <- theta * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)``
    """
    for p in params:
        if not np.isfinite(p.grad).all():
            raise NonFiniteGradient(f"gradient of {p.name} is not finite")
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    decay = 1.0 - lr * weight_decay
    for p in params:
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        v = state.v[p.name]
        m *= beta1
        m += (1.0 - beta1) * p.grad
        v *= beta2
        v += (1.0 - beta2) * p.grad * p.grad
        step = (m / c1) / (np.sqrt(v / c2) + eps)
        p.value *= decay
        p.value -= lr * step


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class Fold:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class SplitPlan:
    n: int
    seed: int
    folds: tuple[Fold, ...]

    @property
    def k(self) -> int:
        return len(self.folds)

    def digest(self) -> str:
        h = hashlib.sha256(f"{self.n}:{self.seed}:{self.k}".encode())
        for f in self.folds:
            for part in (f.train, f.val, f.test):
                h.update(np.asarray(part, dtype="<i8").tobytes())
                h.update(b"|")
        return h.hexdigest()


def make_splits(n_pairs: int, k: int = 5, ratios=(7, 1, 2), seed: int = 0) -> SplitPlan:
    """k-fold plan whose test sets partition the pairs.

    The test share of ``ratios`` must equal ``1/k``; the rest of each fold is
    divided between training and validation in the remaining ratio.
    """
    if k < 2:
        raise ConfigError("k must be at least 2")
    if n_pairs < 10 * k:
        raise TooFewSamples(f"{n_pairs} pairs is too few for {k} folds (need {10 * k})")
    r_train, r_val, r_test = (float(r) for r in ratios)
    total = r_train + r_val + r_test
    if abs(r_test / total - 1.0 / k) > 1e-9:
        raise ConfigError(f"test ratio {r_test}/{total} does not match 1/{k} folds")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_pairs)
    chunks = np.array_split(perm, k)
    folds = []
    for i, test in enumerate(chunks):
        rest = np.concatenate([c for j, c in enumerate(chunks) if j != i])
        rest = np.random.default_rng([seed, i]).permutation(rest)
        n_val = int(round(len(rest) * r_val / (r_train + r_val)))
        folds.append(Fold(np.sort(rest[n_val:]), np.sort(rest[:n_val]), np.sort(test)))
    return SplitPlan(n_pairs, seed, tuple(folds))


# ---------------------------------------------------------------- early stopping


class EarlyStopping:
    """Track the best score; improvement must be strict. NaN never improves."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_score = -math.inf
        self.best_epoch: int | None = None

    def update(self, epoch: int, score: float) -> bool:
        s = -math.inf if math.isnan(score) else score
        if self.best_epoch is None or s > self.best_score:
            self.best_score = s
            self.best_epoch = epoch
            return True
        return False

    def should_stop(self, epoch: int) -> bool:
        return self.best_epoch is not None and epoch - self.best_epoch >= self.patience


def fit_loop(run_epoch, validate, snapshot, restore, max_epochs: int, patience: int):
    """Generic epoch loop (epochs are numbered from 1).

    ``run_epoch(epoch)`` and ``validate(epoch)`` return dicts merged into the
    history row; ``validate`` must provide ``val_auroc``. The best snapshot is
    restored before returning ``(history, best_epoch, stopped_epoch)``.
    """
    stopper = EarlyStopping(patience)
    history = []
    best_state = None
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        row = {"epoch": epoch}
        row.update(run_epoch(epoch))
        row.update(validate(epoch))
        history.append(row)
        if stopper.update(epoch, row["val_auroc"]):
            best_state = snapshot()
        if stopper.should_stop(epoch):
            break
    restore(best_state)
    return history, stopper.best_epoch, epoch


# ---------------------------------------------------------------- data


class PairDataset:
    """Pairs resolved against an embedding store; token rows are cached in
    canonical order so batches can skip re-sorting."""

    def __init__(self, store, pairs, dims: dict[str, int] | None = None):
        self.store = store
        self.pairs = list(pairs)
        self.labels = np.array([p.label for p in self.pairs], dtype=np.float64)
        self._cache: dict[tuple[str, str], np.ndarray] = {}
        self.dims = dims or {}
        for p in self.pairs:
            self.matrix("drug", p.drug_id)
            self.matrix("protein", p.protein_id)

    def __len__(self) -> int:
        return len(self.pairs)

    def matrix(self, modality: str, entity_id: str) -> np.ndarray:
        key = (modality, entity_id)
        m = self._cache.get(key)
        if m is None:
            try:
                emb = self.store.get(modality, entity_id)
            except KeyError:
                raise MissingEntity(f"{modality} {entity_id!r} not in store") from None
            m = emb.matrix[canonical_order(emb.matrix)]
            self._cache[key] = m
        return m

    def batch(self, indices) -> Batch:
        idx = np.asarray(indices, dtype=np.int64)
        drugs = [self.matrix("drug", self.pairs[i].drug_id) for i in idx]
        prots = [self.matrix("protein", self.pairs[i].protein_id) for i in idx]
        return Batch.build(drugs, prots, self.labels[idx], canonical=True)


def predict(model: SabanModel, dataset: PairDataset, indices, mode: str = "ban",
            chunk: int = 256) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    out = [model.scores(dataset.batch(idx[s:s + chunk]), mode) for s in range(0, len(idx), chunk)]
    return np.concatenate(out) if out else np.zeros(0)


def evaluate_indices(model, dataset, indices, mode: str = "ban") -> MetricReport:
    idx = np.asarray(indices, dtype=np.int64)
    return evaluate_scores(dataset.labels[idx].astype(np.int64), predict(model, dataset, idx, mode))


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    model: SabanModel
    history: list[dict]
    best_epoch: int
    stopped_epoch: int
    fold: Fold

    @property
    def best_val_auroc(self) -> float:
        return self.history[self.best_epoch - 1]["val_auroc"]


HISTORY_COLUMNS = ("epoch", "train_loss", "train_bce", "train_con", "val_auroc", "val_auprc",
                   "val_accuracy")


def dropout_rng(seed: int, step: int):
    """Counter-based stream: dropout masks depend only on (seed, step)."""
    return np.random.Generator(np.random.Philox(key=seed, counter=step))


def train(dataset: PairDataset, cfg: TrainConfig, fold: Fold, model: SabanModel | None = None,
          log=None) -> TrainResult:
    """Train on ``fold.train``, select the epoch with the best validation AUROC."""
    model = model or SabanModel(cfg)
    params = model.params()
    opt = AdamWState()
    train_idx = np.asarray(fold.train, dtype=np.int64)
    if len(train_idx) == 0 or len(fold.val) == 0:
        raise TooFewSamples("training and validation sets must be non-empty")

    def run_epoch(epoch):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(train_idx)
        sums = np.zeros(3)
        for s in range(0, len(order), cfg.batch_size):
            chunk = order[s:s + cfg.batch_size]
            batch = dataset.batch(chunk)
            model.zero_grad()
            fwd = model.forward(batch, dropout_rng(cfg.seed, opt.t))
            if not math.isfinite(fwd.loss):
                raise NonFiniteLoss(f"loss became {fwd.loss} at epoch {epoch}, step {opt.t}")
            model.backward(fwd)
            adamw_step(params, opt, cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps)
            sums += len(chunk) * np.array([fwd.loss, fwd.bce, fwd.con])
        sums /= len(order)
        return {"train_loss": float(sums[0]), "train_bce": float(sums[1]), "train_con": float(sums[2])}

    def validate(epoch):
        rep = evaluate_indices(model, dataset, fold.val)
        row = {"val_auroc": rep.auroc, "val_auprc": rep.auprc, "val_accuracy": rep.accuracy}
        if log is not None:
            log(f"epoch {epoch}: val_auroc={rep.auroc:.4f}")
        return row

    def restore(state):
        if state is not None:
            model.load_state(state)

    history, best, stopped = fit_loop(run_epoch, validate, model.state, restore, cfg.max_epochs, cfg.patience)
    return TrainResult(model, history, best, stopped, fold)


def write_history(path, history) -> None:
    with open(path, "w") as fh:
        fh.write("\t".join(HISTORY_COLUMNS) + "\n")
        for row in history:
            fh.write("\t".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                               for c in HISTORY_COLUMNS) + "\n")


@dataclass
class FoldResult:
    fold: int
    train: TrainResult
    test: MetricReport


def split_for(dataset: PairDataset, cfg: TrainConfig) -> SplitPlan:
    return make_splits(len(dataset), cfg.folds, cfg.ratios(), cfg.seed)


def cross_validate(dataset: PairDataset, cfg: TrainConfig, folds=None, log=None) -> list[FoldResult]:
    plan = split_for(dataset, cfg)
    out = []
    for i in (range(plan.k) if folds is None else folds):
        res = train(dataset, cfg.replace(fold=i), plan.folds[i], log=log)
        out.append(FoldResult(i, res, evaluate_indices(res.model, dataset, plan.folds[i].test)))
    return out


# ---------------------------------------------------------------- ablation

ABLATIONS = (
    ("full", {}),
    ("w/o LA", {"use_la": False}),
    ("w/o BAN", {"use_ban": False}),
    ("w/o CL", {"use_cl": False}),
)


@dataclass
class AblationRow:
    variant: str
    config: TrainConfig
    pool_mode: str
    split_digest: str
    best_epoch: int
    stopped_epoch: int
    con_loss_total: float
    test: MetricReport

    def as_row(self) -> dict:
        row = {"variant": self.variant, "use_la": self.config.use_la, "use_ban": self.config.use_ban,
               "use_cl": self.config.use_cl, "lambda_con": self.config.effective_lambda,
               "pool_mode": self.pool_mode, "best_epoch": self.best_epoch,
               "stopped_epoch": self.stopped_epoch, "con_loss_total": self.con_loss_total,
               "split_digest": self.split_digest}
        row.update(self.test.as_row())
        return row


def run_ablation(dataset: PairDataset, cfg: TrainConfig, log=None) -> list[AblationRow]:
    """Train the full model and each single-removal variant on the same fold."""
    plan = split_for(dataset, cfg)
    fold = plan.folds[cfg.fold]
    rows = []
    for name, change in ABLATIONS:
        vcfg = cfg.replace(**change)
        res = train(dataset, vcfg, fold, log=log)
        con = math.fsum(r["train_con"] for r in res.history)
        rows.append(AblationRow(name, vcfg, res.model.pool_mode, plan.digest(), res.best_epoch,
                                res.stopped_epoch, con, evaluate_indices(res.model, dataset, fold.test)))
    return rows
