"""Acceptance criteria, one test each. Every test prints a PASS/FAIL line;
the lines are collected again in the pytest terminal summary.

Run alone with ``pytest tests/test_acceptance.py -v`` or
``python tests/test_acceptance.py``.
"""

import itertools
import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from saban import cli, selfies_codec
from saban.attention_pool import PoolParams, pool_forward
from saban.bilinear_attention import BanParams, ban_forward
from saban.config import TrainConfig
from saban.contrastive_head import info_nce, similarity_matrix
from saban.metrics import EF_FRACTIONS, auprc, auroc, bedroc, enrichment_factor
from saban.model import Batch, SabanModel
from saban.synthetic import planted_dataset
from saban.trainer import PairDataset, evaluate_indices, fit_loop, make_splits, train

RESULTS: list[str] = []


def report(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    RESULTS.append(line)
    print(line)


# ---------------------------------------------------------------- 1


def test_criterion_1_gradient_integrity():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    cfg = TrainConfig(d_drug=16, d_protein=24, latent_dim=32, glimpses=2, rank=16, mlp_hidden=32)
    model = SabanModel(cfg, np.random.default_rng(7))
    batch = Batch.build([rng.standard_normal((3, 16)) for _ in range(4)],
                        [rng.standard_normal((5, 24)) for _ in range(4)], [1, 0, 1, 1])
    model.loss_and_grad(batch)
    analytic = {p.name: p.grad.copy() for p in model.params()}
    h = 1e-6
    worst = ("", 0.0)
    for p in model.params():
        flat = p.value.reshape(-1)
        numeric = np.empty_like(flat)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up = model.forward(batch).loss
            flat[k] = old - h
            down = model.forward(batch).loss
            flat[k] = old
            numeric[k] = (up - down) / (2 * h)
        a = analytic[p.name].reshape(-1)
        denom = max(np.linalg.norm(a), np.linalg.norm(numeric), 1e-300)
        rel = float(np.linalg.norm(a - numeric) / denom)
        if rel > worst[1]:
            worst = (p.name, rel)
    elapsed = time.perf_counter() - start
    ok = worst[1] < 1e-4 and elapsed < 60
    report(1, ok, f"worst per-tensor relative error {worst[1]:.2e} ({worst[0]}), "
                  f"{len(analytic)} tensors, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 2


def _similarity_oracle(zd, zt):
    return np.array([[math.fsum(a * b for a, b in zip(r, c)) for c in zt] for r in zd])


def _f_oracle(H_d, H_t, p):
    out = []
    for g in range(p.glimpses):
        u, v = p.glimpse(g).u.value, p.glimpse(g).v.value
        D = [[max(0.0, math.fsum(H_d[i, k] * u[k, c] for k in range(u.shape[0])))
              for c in range(u.shape[1])] for i in range(H_d.shape[0])]
        T = [[max(0.0, math.fsum(H_t[j, k] * v[k, c] for k in range(v.shape[0])))
              for c in range(v.shape[1])] for j in range(H_t.shape[0])]
        for c in range(u.shape[1]):
            total = []
            for i in range(len(D)):
                logits = [math.fsum(D[i][q] * T[j][q] for q in range(len(D[i]))) for j in range(len(T))]
                m = max(logits)
                z = math.fsum(math.exp(x - m) for x in logits)
                total.extend(D[i][c] * (math.exp(logits[j] - m) / z) * T[j][c] for j in range(len(T)))
            out.append(math.fsum(total))
    return np.array(out)


def _auroc_oracle(y, s):
    pos = [x for x, t in zip(s, y) if t]
    neg = [x for x, t in zip(s, y) if not t]
    wins = sum(Fraction(1) if a > b else Fraction(1, 2) if a == b else Fraction(0)
               for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


def _auprc_oracle(y, s):
    n_pos = sum(y)
    total = Fraction(0)
    for thr in sorted(set(s), reverse=True):
        sel = [t for x, t in zip(s, y) if x >= thr]
        prev = [t for x, t in zip(s, y) if x > thr]
        gained = sum(sel) - sum(prev)
        if gained:
            total += Fraction(gained, n_pos) * Fraction(sum(sel), len(sel))
    return total


def test_criterion_2_equation_oracles():
    start = time.perf_counter()
    rng = np.random.default_rng(99)
    worst_sim = worst_f = 0.0
    rank_mismatch = 0
    trials = 120
    for _ in range(trials):
        n, d = (int(x) for x in rng.integers(1, 9, size=2))
        zd = rng.standard_normal((n, d))
        zt = rng.standard_normal((n, d))
        zd /= np.linalg.norm(zd, axis=1, keepdims=True)
        zt /= np.linalg.norm(zt, axis=1, keepdims=True)
        worst_sim = max(worst_sim, float(np.abs(similarity_matrix(zd, zt) - _similarity_oracle(zd, zt)).max()))

        nd, nt = (int(x) for x in rng.integers(1, 5, size=2))
        dd, dt, r, g = 5, 6, int(rng.integers(1, 5)), int(rng.integers(1, 4))
        p = BanParams.init(dd, dt, r, g, rng)
        H_d, H_t = rng.standard_normal((nd, dd)), rng.standard_normal((nt, dt))
        worst_f = max(worst_f, float(np.abs(ban_forward(H_d, H_t, p).f[0] - _f_oracle(H_d, H_t, p)).max()))

        size = int(rng.integers(2, 25))
        y = rng.integers(0, 2, size=size)
        y[0], y[1] = 1, 0
        s = rng.integers(0, 6, size=size).astype(float)  # coarse scores force ties
        if auroc(y, s) != float(_auroc_oracle(y.tolist(), s.tolist())):
            rank_mismatch += 1
        if auprc(y, s) != float(_auprc_oracle(y.tolist(), s.tolist())):
            rank_mismatch += 1
    elapsed = time.perf_counter() - start
    ok = worst_sim <= 1e-10 and worst_f <= 1e-10 and rank_mismatch == 0 and elapsed < 60
    report(2, ok, f"{trials} instances each; similarity max err {worst_sim:.1e}, BAN f max err "
                  f"{worst_f:.1e}, AUROC/AUPRC mismatches {rank_mismatch}, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 3


def test_criterion_3_analytic_anchors():
    failures = []
    for n in (2, 4, 64):
        for value in (0.0, 0.37):
            loss = info_nce(np.full((n, n), value), 1 / 0.07).loss
            if abs(loss - math.log(n)) > 1e-12:
                failures.append(f"uniform N={n}: {loss!r}")
    two = info_nce(np.array([[1.0, -1.0], [-1.0, 1.0]]), 1.0).loss
    if abs(two - 0.126928) > 1e-6:
        failures.append(f"N=2 case {two!r}")
    y = np.array([1] * 5 + [0] * 95)
    s = np.arange(100, 0, -1).astype(float)
    top, bottom = bedroc(y, s), bedroc(y, -s)
    if abs(top - 1.0) > 1e-9 or abs(bottom) > 1e-9:
        failures.append(f"BEDROC endpoints {top!r}, {bottom!r}")
    n_total = 1000
    for frac in EF_FRACTIONS:
        k = round(frac * n_total)
        yy = np.array([1] * k + [0] * (n_total - k))
        ef = enrichment_factor(yy, -np.arange(n_total, dtype=float), frac)
        if ef != 1 / frac:
            failures.append(f"EF@{frac} = {ef!r}")
    report(3, not failures, f"InfoNCE N=2 case {two:.7f}, BEDROC endpoints {top:.12f}/{bottom:.1e}"
                            + (f"; failures: {failures}" if failures else ""))
    assert not failures


# ---------------------------------------------------------------- 4


def test_criterion_4_parser_totality():
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    vocab = selfies_codec.VOCAB_TEXTS
    invalid = crashes = 0
    lengths = rng.integers(0, 40, size=100_000)
    for n in lengths:
        text = "".join(vocab[k] for k in rng.integers(0, len(vocab), size=int(n)))
        try:
            graph = selfies_codec.decode(selfies_codec.tokenize(text))
        except Exception:  # any exception counts as a parser failure
            crashes += 1
            continue
        if not selfies_codec.validate(graph):
            invalid += 1
    elapsed = time.perf_counter() - start
    ok = invalid == 0 and crashes == 0 and elapsed < 120
    report(4, ok, f"100000 sequences, {invalid} invalid graphs, {crashes} exceptions, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 5


def test_criterion_5_permutation_invariance():
    rng = np.random.default_rng(5)
    pool = PoolParams.init("pool", 12, 24, rng)
    ban = BanParams.init(12, 10, 6, 3, rng)
    broken = 0
    for _ in range(1000):
        nd, nt = int(rng.integers(1, 12)), int(rng.integers(1, 16))
        H_d, H_t = rng.standard_normal((nd, 12)), rng.standard_normal((nt, 10))
        h = pool_forward(H_d, pool).h
        f = ban_forward(H_d, H_t, ban).f
        pd, pt = rng.permutation(nd), rng.permutation(nt)
        if not np.array_equal(h, pool_forward(H_d[pd], pool).h):
            broken += 1
        if not np.array_equal(f, ban_forward(H_d[pd], H_t[pt], ban).f):
            broken += 1
    report(5, broken == 0, f"1000 trials, {broken} non-identical outputs")
    assert broken == 0


# ---------------------------------------------------------------- 6

REDUCED = dict(d_drug=64, d_protein=64, latent_dim=32, glimpses=2, rank=16)


@pytest.mark.slow
def test_criterion_6_planted_signal():
    start = time.perf_counter()
    data = planted_dataset(n_pairs=2000, d_drug=64, d_protein=64, seed=0)
    ds = PairDataset(data.store, data.pairs)
    cfg = TrainConfig(**REDUCED)
    fold = make_splits(len(ds), cfg.folds, cfg.ratios(), cfg.seed).folds[cfg.fold]
    full = train(ds, cfg, fold)
    full_auc = evaluate_indices(full.model, ds, fold.test).auroc
    base_cfg = cfg.replace(use_la=False, use_ban=False, use_cl=False)
    base = train(ds, base_cfg, fold)
    base_auc = evaluate_indices(base.model, ds, fold.test).auroc
    elapsed = time.perf_counter() - start
    ok = full_auc >= 0.95 and elapsed < 600
    report(6, ok, f"full model test AUROC {full_auc:.4f} (best epoch {full.best_epoch}, stopped "
                  f"{full.stopped_epoch}); degenerate baseline test AUROC {base_auc:.4f} (best epoch "
                  f"{base.best_epoch}); {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------- 7


def test_criterion_7_ablation_structure(tmp_path):
    data_dir = tmp_path / "data"
    assert cli.main(["embed", "--planted", "--n-pairs", "300", "--n-drugs", "40", "--n-proteins", "20",
                     "--drug-dim", "16", "--protein-dim", "16", "--out", str(data_dir)]) == 0
    out = tmp_path / "ablation.tsv"
    code = cli.main(["ablate", "--store", str(data_dir), "--pairs", str(data_dir / "pairs.tsv"),
                     "--out", str(out), "--d_drug", "16", "--d_protein", "16", "--latent_dim", "8",
                     "--glimpses", "2", "--rank", "4", "--mlp_hidden", "8", "--max_epochs", "3",
                     "--patience", "2", "--lr", "1e-3"])
    manifest = json.loads((tmp_path / "ablation.tsv.manifest.json").read_text())
    variants = manifest["extra"]["variants"]
    by = {v["variant"]: v for v in variants}
    checks = {
        "exit code 0": code == 0,
        "four variants": [v["variant"] for v in variants] == ["full", "w/o LA", "w/o BAN", "w/o CL"],
        "identical splits": len({v["split_digest"] for v in variants}) == 1,
        "w/o CL logs zero contrastive loss": by["w/o CL"]["con_loss_total"] == 0.0
        and by["w/o CL"]["config"]["use_cl"] is False,
        "w/o LA mean pooling": by["w/o LA"]["pool_mode"] == "mean"
        and all(by[k]["pool_mode"] == "attention" for k in ("full", "w/o BAN", "w/o CL")),
        "w/o BAN disables BAN only": by["w/o BAN"]["config"]["use_ban"] is False
        and by["w/o BAN"]["config"]["use_la"] and by["w/o BAN"]["config"]["use_cl"],
    }
    failed = [k for k, v in checks.items() if not v]
    report(7, not failed, "manifest shows " + ", ".join(checks) + (f"; failed: {failed}" if failed else ""))
    assert not failed


# ---------------------------------------------------------------- 8


def test_criterion_8_protocol_arithmetic():
    failures = []
    for n, seed in itertools.product((100, 101, 999, 2000, 2003), (0, 1, 17)):
        plan = make_splits(n, 5, (7, 1, 2), seed)
        tests = np.concatenate([f.test for f in plan.folds])
        if not np.array_equal(np.sort(tests), np.arange(n)):
            failures.append(f"test folds do not partition n={n}")
        for f in plan.folds:
            sizes = (len(f.train), len(f.val), len(f.test))
            if any(abs(a - b) > 1 for a, b in zip(sizes, (0.7 * n, 0.1 * n, 0.2 * n))):
                failures.append(f"n={n} sizes {sizes}")
            if len(np.union1d(np.union1d(f.train, f.val), f.test)) != n:
                failures.append(f"n={n} fold parts overlap or miss pairs")
    restored = []
    for best, patience in ((3, 20), (1, 5), (10, 7)):
        hist, got_best, stopped = fit_loop(lambda e: {}, lambda e, b=best: {"val_auroc": min(e, b) / 100},
                                           snapshot=lambda: len(restored), restore=restored.append,
                                           max_epochs=200, patience=patience)
        if (got_best, stopped) != (best, best + patience):
            failures.append(f"frozen at {best}, patience {patience}: stopped {stopped}, best {got_best}")
    report(8, not failures, "7:1:2 sizes within 1 on 15 plans, disjoint 5-fold coverage, stops at best + patience"
                            + (f"; failures: {failures}" if failures else ""))
    assert not failures


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
