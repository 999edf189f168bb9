"""``saban`` command-line interface.

Exit status: 0 on success, 1 for bad input or usage, 2 when an internal
invariant breaks (non-finite values, failed assertions). Every command that
writes files also writes a run manifest next to its output.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import embedding_store, selfies_codec
from .attention_pool import export_attention, write_attention_tsv
from .config import TrainConfig, load_config
from .embedding_store import EmbeddingStore, load_pairs, read_entities, synthesize_store, token_labels
from .errors import InvariantViolation, MissingEntity, SabanError
from .manifest import RunManifest, manifest_path_for
from .metrics import MetricReport
from .model import Batch, SabanModel
from .trainer import (
    PairDataset,
    cross_validate,
    evaluate_indices,
    make_splits,
    run_ablation,
    train,
    write_history,
)


class UsageError(SabanError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- helpers


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def write_tsv(path, columns, rows) -> None:
    with open(path, "w") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(row.get(c, "")) for c in columns) + "\n")


def _config_from_args(args) -> TrainConfig:
    base = load_config(args.config) if getattr(args, "config", None) else TrainConfig()
    overrides = {f.name: getattr(args, f"cfg_{f.name}") for f in fields(TrainConfig)
                 if getattr(args, f"cfg_{f.name}", None) is not None}
    return TrainConfig.from_mapping(overrides, base)


def _add_config_flags(p) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    group = p.add_argument_group("config keys")
    for f in fields(TrainConfig):
        names = {f"--{f.name}", f"--{f.name.replace('_', '-')}"}
        group.add_argument(*sorted(names), dest=f"cfg_{f.name}", metavar="VALUE", default=None)


def _open_dataset(store_dir, pairs_path, cfg: TrainConfig, low_bias: bool = False) -> PairDataset:
    store = EmbeddingStore(store_dir, {"drug": cfg.d_drug, "protein": cfg.d_protein})
    return PairDataset(store, load_pairs(pairs_path, low_bias_filter=low_bias))


def _finish(manifest: RunManifest, out) -> None:
    out = Path(out)
    if out.is_dir():
        for f in sorted(out.rglob("*")):
            if f.is_file() and f.name != "run_manifest.json":
                manifest.add_output(f)
    else:
        manifest.add_output(out)
    manifest.write(manifest_path_for(out))


def _metric_row(rep: MetricReport, **extra) -> dict:
    row = dict(extra)
    row.update(rep.as_row())
    return row


# ---------------------------------------------------------------- commands


def cmd_tokenize(args, argv):
    if args.input:
        rows_in = read_entities(args.input)
    else:
        if args.sequence is None or args.modality is None:
            raise UsageError("tokenize needs --input or both --modality and --sequence")
        rows_in = [(args.id, args.modality, args.sequence)]
    rows = []
    for entity_id, modality, seq in rows_in:
        ids = embedding_store.tokenize_entity(modality, seq)
        for pos, (tok, label) in enumerate(zip(ids, token_labels(modality, seq))):
            rows.append({"entity_id": entity_id, "modality": modality, "position": pos,
                         "token_id": tok, "token_label": label})
    write_tsv(args.out, ("entity_id", "modality", "position", "token_id", "token_label"), rows)
    m = RunManifest("tokenize", argv)
    if args.input:
        m.add_input(args.input)
    _finish(m, args.out)


def cmd_decode(args, argv):
    if args.input:
        with open(args.input) as fh:
            strings = [line.strip() for line in fh if line.strip()]
    elif args.selfies is not None:
        strings = [args.selfies]
    else:
        raise UsageError("decode needs --selfies or --input")
    rows = []
    for i, s in enumerate(strings):
        g = selfies_codec.decode_string(s, args.ring_duplicates)
        if not selfies_codec.validate(g):
            raise InvariantViolation(f"decoded graph {i} fails valence validation")
        rows.append({
            "index": i, "selfies": s, "n_atoms": len(g.atoms), "n_bonds": len(g.bonds),
            "atoms": ",".join(el for el, _ in g.atoms),
            "bonds": ";".join(f"{a}-{b}:{o}" for a, b, o in g.bonds),
            "diagnostics": " | ".join(f"{d.token_index}: {d.message}" for d in g.diagnostics),
        })
    write_tsv(args.out, ("index", "selfies", "n_atoms", "n_bonds", "atoms", "bonds", "diagnostics"), rows)
    m = RunManifest("decode", argv, extra={"ring_duplicates": args.ring_duplicates})
    if args.input:
        m.add_input(args.input)
    _finish(m, args.out)


def cmd_embed(args, argv):
    out = Path(args.out)
    m = RunManifest("embed", argv, seed=args.seed)
    if args.planted:
        from .synthetic import planted_dataset

        ds = planted_dataset(args.n_pairs, args.n_drugs, args.n_proteins, args.drug_dim,
                             args.protein_dim, args.strength, args.seed)
        ds.store.save(out)
        embedding_store.write_pairs(out / "pairs.tsv", ds.pairs)
        m.extra["planted"] = {"n_pairs": args.n_pairs, "n_drugs": args.n_drugs,
                              "n_proteins": args.n_proteins, "strength": args.strength}
    else:
        if not args.entities:
            raise UsageError("embed needs --entities or --planted")
        store = synthesize_store(read_entities(args.entities), args.seed, args.drug_dim, args.protein_dim)
        store.save(out)
        m.add_input(args.entities)
    m.extra["dims"] = {"drug": args.drug_dim, "protein": args.protein_dim}
    _finish(m, out)


def cmd_train(args, argv):
    cfg = _config_from_args(args)
    data = _open_dataset(args.store, args.pairs, cfg, args.low_bias_filter)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    plan = make_splits(len(data), cfg.folds, cfg.ratios(), cfg.seed)
    if args.cv:
        results = [(r.fold, r.train, r.test) for r in cross_validate(data, cfg, log=log)]
    else:
        res = train(data, cfg, plan.folds[cfg.fold], log=log)
        results = [(cfg.fold, res, evaluate_indices(res.model, data, plan.folds[cfg.fold].test))]
    metric_rows = []
    for fold, res, test in results:
        ckpt = out / (f"fold_{fold}" if args.cv else "checkpoint")
        res.model.save(ckpt, {"fold": fold, "best_epoch": res.best_epoch, "split_digest": plan.digest()})
        write_history(out / (f"history_fold_{fold}.tsv" if args.cv else "history.tsv"), res.history)
        metric_rows.append(_metric_row(test, fold=fold, best_epoch=res.best_epoch,
                                       stopped_epoch=res.stopped_epoch))
    write_tsv(out / "test_metrics.tsv", ("fold", "best_epoch", "stopped_epoch") + MetricReport.COLUMNS,
              metric_rows)
    m = RunManifest("train", argv, cfg.to_dict(), cfg.seed, extra={"split_digest": plan.digest(),
                                                                    "pool_mode": results[0][1].model.pool_mode})
    m.add_input(args.store)
    m.add_input(args.pairs)
    _finish(m, out)


def _load_checkpoints(path) -> dict[int | None, SabanModel]:
    path = Path(path)
    folds = sorted(path.glob("fold_*"))
    if folds:
        return {int(p.name.split("_")[1]): SabanModel.load(p) for p in folds}
    if (path / "checkpoint").is_dir():
        path = path / "checkpoint"
    return {None: SabanModel.load(path)}


def aggregate_rows(fold_rows: list[dict], columns) -> dict:
    """Mean and sample std (ddof=1) over folds for every numeric column."""
    agg = {"fold": "mean"}
    for c in columns:
        vals = [float(r[c]) for r in fold_rows]
        agg[c] = math.fsum(vals) / len(vals)
        if len(vals) > 1:
            mean = agg[c]
            agg[f"{c}_std"] = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1))
        else:
            agg[f"{c}_std"] = 0.0
    return agg


def cmd_evaluate(args, argv):
    models = _load_checkpoints(args.checkpoint)
    cfg = next(iter(models.values())).cfg
    data = _open_dataset(args.store, args.pairs, cfg, args.low_bias_filter)
    plan = make_splits(len(data), cfg.folds, cfg.ratios(), cfg.seed)
    mode = args.score_mode or "ban"
    rows = []
    for k in range(plan.k):
        model = models.get(k, models.get(None))
        if model is None:
            raise MissingEntity(f"no checkpoint for fold {k}")
        rep = evaluate_indices(model, data, plan.folds[k].test, mode)
        rows.append(_metric_row(rep, fold=k))
    metric_cols = [c for c in MetricReport.COLUMNS]
    agg = aggregate_rows(rows, metric_cols)
    columns = ["fold"] + metric_cols + [f"{c}_std" for c in metric_cols]
    write_tsv(args.out, columns, rows + [agg])
    m = RunManifest("evaluate", argv, cfg.to_dict(), cfg.seed,
                    extra={"split_digest": plan.digest(), "score_mode": mode,
                           "per_fold_checkpoints": None not in models})
    for p in (args.checkpoint, args.store, args.pairs):
        m.add_input(p)
    _finish(m, args.out)


def cmd_screen(args, argv):
    model = next(iter(_load_checkpoints(args.checkpoint).values()))
    cfg = model.cfg
    store = EmbeddingStore(args.store, {"drug": cfg.d_drug, "protein": cfg.d_protein})
    if args.library:
        with open(args.library) as fh:
            ligands = [line.strip() for line in fh if line.strip() and line.strip() != "drug_id"]
    else:
        ligands = store.ids("drug")
    if not ligands:
        raise MissingEntity("ligand library is empty")
    target = store.get("protein", args.target).matrix
    mode = args.score_mode or cfg.score_mode
    scores = []
    for s in range(0, len(ligands), 256):
        chunk = ligands[s:s + 256]
        batch = Batch.build([store.get("drug", d).matrix for d in chunk], [target] * len(chunk))
        scores.extend(float(x) for x in model.scores(batch, mode))
    order = sorted(range(len(ligands)), key=lambda i: (-scores[i], ligands[i]))
    rows = [{"rank": r + 1, "drug_id": ligands[i], "protein_id": args.target, "score": scores[i]}
            for r, i in enumerate(order)]
    write_tsv(args.out, ("rank", "drug_id", "protein_id", "score"), rows)
    m = RunManifest("screen", argv, cfg.to_dict(), cfg.seed, extra={"score_mode": mode})
    for p in (args.checkpoint, args.store) + ((args.library,) if args.library else ()):
        m.add_input(p)
    _finish(m, args.out)


def cmd_ablate(args, argv):
    cfg = _config_from_args(args)
    data = _open_dataset(args.store, args.pairs, cfg, args.low_bias_filter)
    log = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    rows = run_ablation(data, cfg, log=log)
    table = [r.as_row() for r in rows]
    cols = ("variant", "use_la", "use_ban", "use_cl", "lambda_con", "pool_mode", "best_epoch",
            "stopped_epoch", "con_loss_total", "split_digest") + MetricReport.COLUMNS
    write_tsv(args.out, cols, table)
    m = RunManifest("ablate", argv, cfg.to_dict(), cfg.seed, extra={"variants": [
        {"variant": r.variant, "config": r.config.to_dict(), "pool_mode": r.pool_mode,
         "split_digest": r.split_digest, "con_loss_total": r.con_loss_total} for r in rows]})
    m.add_input(args.store)
    m.add_input(args.pairs)
    _finish(m, args.out)


def cmd_export_attention(args, argv):
    model = next(iter(_load_checkpoints(args.checkpoint).values()))
    cfg = model.cfg
    store = EmbeddingStore(args.store, {"drug": cfg.d_drug, "protein": cfg.d_protein})
    Hd = store.get("drug", args.drug).matrix
    Ht = store.get("protein", args.protein).matrix
    info = model.explain_pair(Hd, Ht)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def labels(modality, entity_id, n):
        seq = store.sequence(modality, entity_id)
        found = token_labels(modality, seq) if seq else []
        return found if len(found) == n else [f"tok{i}" for i in range(n)]

    d_labels = labels("drug", args.drug, Hd.shape[0])
    t_labels = labels("protein", args.protein, Ht.shape[0])
    write_attention_tsv(out / "drug_pooling.tsv", export_attention(info["alpha_drug"], d_labels))
    write_attention_tsv(out / "protein_pooling.tsv", export_attention(info["alpha_protein"], t_labels))
    if "ban_maps" in info:
        maps = info["ban_maps"]
        rows = [{"glimpse": g, "drug_token": i, "drug_label": d_labels[i], "protein_token": j,
                 "protein_label": t_labels[j], "weight": float(maps[g, i, j])}
                for g in range(maps.shape[0]) for i in range(maps.shape[1]) for j in range(maps.shape[2])]
        write_tsv(out / "ban_maps.tsv",
                  ("glimpse", "drug_token", "drug_label", "protein_token", "protein_label", "weight"), rows)
    m = RunManifest("export-attention", argv, cfg.to_dict(), cfg.seed,
                    extra={"drug": args.drug, "protein": args.protein, "prob": info["prob"],
                           "cosine": info["cosine"]})
    m.add_input(args.checkpoint)
    m.add_input(args.store)
    _finish(m, out)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="saban", description="Drug-target interaction scoring toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("tokenize", help="tokenize protein or SELFIES sequences")
    s.add_argument("--modality", choices=("protein", "drug"))
    s.add_argument("--sequence")
    s.add_argument("--id", default="seq")
    s.add_argument("--input", help="TSV with entity_id, modality, sequence")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_tokenize)

    s = sub.add_parser("decode", help="decode SELFIES strings into molecular graphs")
    s.add_argument("--selfies")
    s.add_argument("--input", help="file with one SELFIES string per line")
    s.add_argument("--ring-duplicates", choices=selfies_codec.RING_DUPLICATE_POLICIES, default="drop")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("embed", help="write a synthetic embedding store")
    s.add_argument("--entities", help="TSV with entity_id, modality, sequence")
    s.add_argument("--planted", action="store_true", help="generate a planted-signal dataset")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--drug-dim", type=int, default=embedding_store.DRUG_DIM)
    s.add_argument("--protein-dim", type=int, default=embedding_store.PROTEIN_DIM)
    s.add_argument("--n-pairs", type=int, default=2000)
    s.add_argument("--n-drugs", type=int, default=200)
    s.add_argument("--n-proteins", type=int, default=50)
    s.add_argument("--strength", type=float, default=1.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_embed)

    for name, func, help_ in (("train", cmd_train, "train a model"),
                              ("ablate", cmd_ablate, "run the four-variant ablation")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--store", required=True)
        s.add_argument("--pairs", required=True)
        s.add_argument("--low-bias-filter", action="store_true")
        s.add_argument("--out", required=True)
        s.add_argument("--verbose", action="store_true")
        if name == "train":
            s.add_argument("--cv", action="store_true", help="train every fold")
        _add_config_flags(s)
        s.set_defaults(func=func)

    s = sub.add_parser("evaluate", help="per-fold and aggregate test metrics")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--store", required=True)
    s.add_argument("--pairs", required=True)
    s.add_argument("--low-bias-filter", action="store_true")
    s.add_argument("--score-mode", choices=("cosine", "ban"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("screen", help="rank a ligand library against one target")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--store", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--library", help="file of drug ids; default is every drug in the store")
    s.add_argument("--score-mode", choices=("cosine", "ban"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_screen)

    s = sub.add_parser("export-attention", help="write pooling and BAN attention tables")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--store", required=True)
    s.add_argument("--drug", required=True)
    s.add_argument("--protein", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_attention)
    return p


def _thread_count() -> int:
    raw = os.environ.get("SABAN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"SABAN_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("SABAN_THREADS must be >= 1")
    return n


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=_thread_count()):
            args.func(args, argv)
    except SabanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InvariantViolation, AssertionError, FloatingPointError) as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
