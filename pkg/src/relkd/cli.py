"""Command-line entry point.

Subcommands: gen-data, train-teacher, distill, ablate, eval, analyze,
grad-check. Each run writes a manifest; metrics go to a fixed-schema CSV so
downstream plotting tools can consume them directly.

Exit codes: 0 success, 1 invariant/assertion failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import DataError, PairedDataset, SyntheticSpec, generate, load, save, split
from .encoders import DualEncoder, EmbeddingBatch, load_checkpoint, save_checkpoint, encode_array
from .autodiff import Tensor
from .evaluation import class_prototypes, retrieval_recall, zero_shot_classify
from .gradsuite import run_grad_suite
from .losses import LossWeights
from .metrics import mi_lower_bound, pair_similarity_stats, similarity_histogram
from .trainer import MetricRecord, ModelConfig, TrainConfig, distill, train_teacher

CSV_COLUMNS = [
    "run_id", "method", "seed", "epoch",
    "loss_task", "loss_fd", "loss_icl", "loss_hrd", "loss_vrd_ce",
    "loss_vrd_kl", "loss_xrd", "loss_total",
    "val_i2t_r1", "val_t2i_r1", "val_i2t_r5", "val_t2i_r5", "zs_acc",
    "pos_mean", "neg_mean", "gap", "mi_bound_image", "mi_bound_text",
]

METHOD_LOSSES = {
    "KD": frozenset({"FD", "ICL", "HRD"}),
    "KD+VRD": frozenset({"FD", "ICL", "HRD", "VRD"}),
    "KD+XRD": frozenset({"FD", "ICL", "HRD", "XRD"}),
    "RD": frozenset({"FD", "ICL", "HRD", "VRD", "XRD"}),
}
ABLATION_ORDER = ["KD", "KD+XRD", "KD+VRD", "RD"]


class UsageError(Exception):
    pass


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def metrics_rows(records: list[MetricRecord], run_id: str, method: str, seed: int) -> list[str]:
    rows = []
    for rec in records:
        vals = {"run_id": run_id, "method": method, "seed": seed, "epoch": rec.epoch}
        for col in CSV_COLUMNS[4:]:
            vals[col] = getattr(rec, col)
        rows.append(",".join(_fmt(vals[c]) for c in CSV_COLUMNS))
    return rows


def write_metrics_csv(path: Path, rows: list[str], append: bool = False) -> None:
    mode = "a" if append and path.exists() else "w"
    with open(path, mode, encoding="utf-8") as fh:
        if mode == "w":
            fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in rows:
            fh.write(row + "\n")


def _out_root(args) -> Path:
    if args.out:
        root = Path(args.out)
    else:
        root = Path(os.environ.get("RELKD_OUT", "runs"))
    root.mkdir(parents=True, exist_ok=True)
    return root


def _load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    t = cfg.get("train", {})
    losses = cfg.get("losses", {})
    try:
        return TrainConfig(
            epochs=int(t.get("epochs", 30)),
            warmup_iters=int(t.get("warmup_iters", 100)),
            batch_size=int(t.get("batch_size", 64)),
            peak_lr=float(t.get("peak_lr", 1e-3)),
            weight_decay=float(t.get("weight_decay", 0.1)),
            betas=tuple(t.get("betas", (0.9, 0.98))),
            eps=float(t.get("eps", 1e-8)),
            seed=seed,
            enabled_losses=frozenset(losses.get("enabled", [])),
            weights=LossWeights(alpha=float(losses.get("alpha", 2000.0)),
                                beta=float(losses.get("beta", 1.0)),
                                lam=float(losses.get("lambda", 1.0))),
            model=ModelConfig(**cfg.get("model", {})),
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad train config: {exc}") from exc


def _load_splits(cfg: dict) -> tuple[PairedDataset, PairedDataset, PairedDataset]:
    path = cfg.get("dataset")
    if not path or not os.path.exists(path):
        raise UsageError(f"dataset file not found: {path}")
    ds = load(path)
    by_tag = {}
    for tag in ("train", "val", "test"):
        idx = np.flatnonzero(ds.split_tags == tag)
        if len(idx) == 0:
            raise UsageError(f"dataset has no {tag!r} rows; run gen-data first")
        by_tag[tag] = ds.subset(idx)
    return by_tag["train"], by_tag["val"], by_tag["test"]


def _write_manifest(out_dir: Path, command: str, cfg: dict, seed: int,
                    artifacts: list[str], started: float) -> None:
    doc = {
        "command": command,
        "config": cfg,
        "seed": seed,
        "artifacts": artifacts,
        "wall_clock_s": round(time.time() - started, 3),
        "code_version": __version__,
    }
    for rel in artifacts:
        if not (out_dir / rel).exists():
            raise RuntimeError(f"manifest names missing artifact {rel}")
    tmp = out_dir / "manifest.json.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
    tmp.replace(out_dir / "manifest.json")


# -- subcommands ---------------------------------------------------------

def cmd_gen_data(args) -> int:
    started = time.time()
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    spec_cfg = dict(cfg.get("data_spec", {}))
    spec_cfg["seed"] = seed
    spec = SyntheticSpec(**spec_cfg)
    out = _out_root(args)
    ds = generate(spec)
    fractions = tuple(cfg.get("split_fractions", (0.8, 0.1, 0.1)))
    train, val, test = split(ds, fractions, seed=seed)
    merged = PairedDataset(
        np.concatenate([train.image_features, val.image_features, test.image_features]),
        np.concatenate([train.text_features, val.text_features, test.text_features]),
        np.concatenate([train.concept_labels, val.concept_labels, test.concept_labels]),
        np.concatenate([train.split_tags, val.split_tags, test.split_tags]),
    )
    save(merged, str(out / "dataset.jsonl"))
    _write_manifest(out, "gen-data", cfg, seed, ["dataset.jsonl"], started)
    print(f"wrote {len(merged)} pairs to {out / 'dataset.jsonl'}")
    return 0


def cmd_train_teacher(args) -> int:
    started = time.time()
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    config = _train_config(cfg, seed)
    train, val, _ = _load_splits(cfg)
    out = _out_root(args)
    teacher, tau, records = train_teacher(config, train, val)
    save_checkpoint(teacher, str(out / "teacher.json"), extra={"tau_task": tau.tau})
    write_metrics_csv(out / "metrics.csv",
                      metrics_rows(records, f"teacher-s{seed}", "teacher", seed))
    _write_manifest(out, "train-teacher", cfg, seed, ["teacher.json", "metrics.csv"], started)
    print(f"teacher final val R@1 i2t={records[-1].val_i2t_r1:.3f} "
          f"t2i={records[-1].val_t2i_r1:.3f} tau={tau.tau:.4f}")
    return 0


def _run_distill(cfg: dict, seed: int, method: str, enabled: frozenset[str],
                 out: Path, train_ds, val_ds) -> list[MetricRecord]:
    teacher_path = cfg.get("teacher_checkpoint")
    if not teacher_path or not os.path.exists(teacher_path):
        raise UsageError(f"teacher checkpoint not found: {teacher_path}")
    teacher, extra = load_checkpoint(teacher_path)
    config = _train_config(cfg, seed)
    config = TrainConfig(**{**config.__dict__, "enabled_losses": enabled})
    student, taus, records = distill(config, teacher, float(extra.get("tau_task", 0.07)),
                                     train_ds, val_ds,
                                     temperatures=cfg.get("losses", {}).get("temperatures"))
    save_checkpoint(student, str(out / f"student-{method}-s{seed}.json"),
                    extra={"method": method, "seed": seed,
                           "taus": {"tau_task": taus.tau_task.tau,
                                    "tau_student": taus.tau_student.tau,
                                    "tau_image": taus.tau_image.tau,
                                    "tau_text": taus.tau_text.tau,
                                    "tau_cross": taus.tau_cross.tau,
                                    "tau_teacher": taus.tau_teacher.tau}})
    return records


def cmd_distill(args) -> int:
    started = time.time()
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = _out_root(args)
    train_ds, val_ds, _ = _load_splits(cfg)
    enabled = frozenset(cfg.get("losses", {}).get("enabled", []))
    method = cfg.get("method", "custom")
    records = _run_distill(cfg, seed, method, enabled, out, train_ds, val_ds)
    run_id = f"{method}-s{seed}"
    write_metrics_csv(out / "metrics.csv", metrics_rows(records, run_id, method, seed))
    _write_manifest(out, "distill", cfg, seed,
                    [f"student-{method}-s{seed}.json", "metrics.csv"], started)
    last = records[-1]
    print(f"{run_id}: final val R@1 i2t={last.val_i2t_r1:.3f} t2i={last.val_t2i_r1:.3f} "
          f"gap={last.gap:.3f}")
    return 0


def cmd_ablate(args) -> int:
    started = time.time()
    cfg = _load_config(args.config)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.get("seed", 0)]
    out = _out_root(args)
    train_ds, val_ds, _ = _load_splits(cfg)

    all_rows: list[str] = []
    finals: dict[str, list[MetricRecord]] = {m: [] for m in ABLATION_ORDER}
    for seed in seeds:
        for method in ABLATION_ORDER:
            records = _run_distill(cfg, seed, method, METHOD_LOSSES[method],
                                   out, train_ds, val_ds)
            all_rows.extend(metrics_rows(records, f"{method}-s{seed}", method, seed))
            finals[method].append(records[-1])
    write_metrics_csv(out / "metrics.csv", all_rows)

    lines = [f"{'method':10s} {'i2t_r1':>8s} {'t2i_r1':>8s} {'r1_sum':>8s} {'gap':>8s}"]
    for method in ABLATION_ORDER:
        recs = finals[method]
        i2t = float(np.mean([r.val_i2t_r1 for r in recs]))
        t2i = float(np.mean([r.val_t2i_r1 for r in recs]))
        gap = float(np.mean([r.gap for r in recs]))
        lines.append(f"{method:10s} {i2t:8.4f} {t2i:8.4f} {i2t + t2i:8.4f} {gap:8.4f}")
    table = "\n".join(lines) + "\n"
    (out / "ablation.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    _write_manifest(out, "ablate", cfg, seeds[0], ["metrics.csv", "ablation.txt"], started)
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = _out_root(args)
    ckpt_path = cfg.get("checkpoint")
    if not ckpt_path or not os.path.exists(ckpt_path):
        raise UsageError(f"checkpoint not found: {ckpt_path}")
    model, extra = load_checkpoint(ckpt_path)
    train_ds, val_ds, _ = _load_splits(cfg)

    img = EmbeddingBatch(Tensor(encode_array(model.image_encoder, val_ds.image_features)),
                         model.network_tag, "image")
    txt = EmbeddingBatch(Tensor(encode_array(model.text_encoder, val_ds.text_features)),
                         model.network_tag, "text")
    rr = retrieval_recall(img, txt, ks=(1, 5))
    stats = pair_similarity_stats(img, txt)
    n_classes = int(train_ds.concept_labels.max()) + 1
    s_txt = EmbeddingBatch(Tensor(encode_array(model.text_encoder, train_ds.text_features)),
                           model.network_tag, "text")
    protos = class_prototypes(s_txt, train_ds.concept_labels, n_classes)
    acc = zero_shot_classify(img, protos, val_ds.concept_labels)

    rec = MetricRecord(epoch=-1, loss_task=0.0, loss_total=0.0,
                       val_i2t_r1=rr.i2t[1], val_t2i_r1=rr.t2i[1],
                       val_i2t_r5=rr.i2t[5], val_t2i_r5=rr.t2i[5], zs_acc=acc,
                       pos_mean=stats.pos_mean, neg_mean=stats.neg_mean, gap=stats.gap)
    method = extra.get("method", model.network_tag)
    write_metrics_csv(out / "metrics.csv",
                      metrics_rows([rec], f"eval-{method}-s{seed}", method, seed),
                      append=True)
    rows = [("i2t_r1", rr.i2t[1]), ("t2i_r1", rr.t2i[1]), ("i2t_r5", rr.i2t[5]),
            ("t2i_r5", rr.t2i[5]), ("zs_acc", acc),
            ("pos_mean", stats.pos_mean), ("neg_mean", stats.neg_mean), ("gap", stats.gap)]
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}s}  {v:.4f}")
    _write_manifest(out, "eval", cfg, seed, ["metrics.csv"], started)
    return 0


def cmd_analyze(args) -> int:
    started = time.time()
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = _out_root(args)
    student_path = cfg.get("checkpoint")
    teacher_path = cfg.get("teacher_checkpoint")
    for p in (student_path, teacher_path):
        if not p or not os.path.exists(p):
            raise UsageError(f"checkpoint not found: {p}")
    student, s_extra = load_checkpoint(student_path)
    teacher, t_extra = load_checkpoint(teacher_path)
    _, val_ds, _ = _load_splits(cfg)

    def batch(model, feats, enc, modality):
        return EmbeddingBatch(Tensor(encode_array(enc, feats)), model.network_tag, modality)

    s_img = batch(student, val_ds.image_features, student.image_encoder, "image")
    s_txt = batch(student, val_ds.text_features, student.text_encoder, "text")
    t_img = batch(teacher, val_ds.image_features, teacher.image_encoder, "image")
    t_txt = batch(teacher, val_ds.text_features, teacher.text_encoder, "text")

    stats = pair_similarity_stats(s_img, s_txt)
    bins = int(cfg.get("histogram_bins", 50))
    pos_hist = similarity_histogram(stats.pos_values, bins=bins)
    neg_hist = similarity_histogram(stats.neg_values, bins=bins)
    tau = float(s_extra.get("taus", {}).get("tau_image", 0.07))
    mi_img = mi_lower_bound(t_img, s_img, tau)
    tau_t = float(s_extra.get("taus", {}).get("tau_text", 0.07))
    mi_txt = mi_lower_bound(t_txt, s_txt, tau_t)

    lines = ["stat,value"]
    lines.append(f"pos_mean,{stats.pos_mean!r}")
    lines.append(f"neg_mean,{stats.neg_mean!r}")
    lines.append(f"gap,{stats.gap!r}")
    lines.append(f"mi_bound_image,{mi_img.bound!r}")
    lines.append(f"mi_bound_text,{mi_txt.bound!r}")
    lines.append(f"mi_log_n,{float(np.log(mi_img.n_negatives))!r}")
    for i, (p, q) in enumerate(zip(pos_hist, neg_hist)):
        lines.append(f"pos_hist_bin{i},{int(p)}")
        lines.append(f"neg_hist_bin{i},{int(q)}")
    (out / "analysis.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_manifest(out, "analyze", cfg, seed, ["analysis.csv"], started)
    print(f"gap={stats.gap:.4f} mi_image={mi_img.bound:.4f} mi_text={mi_txt.bound:.4f}")
    return 0


def cmd_grad_check(args) -> int:
    tol = 1e-4
    results = run_grad_suite(seeds=range(args.grad_seeds))
    failed = [name for name, err in results.items() if err >= tol]
    width = max(len(n) for n in results)
    for name, err in results.items():
        flag = "FAIL" if err >= tol else "ok"
        print(f"{name:<{width}s}  max_rel_err={err:.3e}  {flag}")
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relkd",
                                     description="relational distillation laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, needs_config=True):
        p = sub.add_parser(name)
        if needs_config:
            p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--seed", type=int, default=None, help="overrides config seed")
        p.add_argument("--out", default=None, help="output directory (else $RELKD_OUT or ./runs)")
        p.set_defaults(fn=fn)
        return p

    add("gen-data", cmd_gen_data)
    add("train-teacher", cmd_train_teacher)
    add("distill", cmd_distill)
    p_ablate = add("ablate", cmd_ablate)
    p_ablate.add_argument("--seeds", default=None, help="comma-separated seed list")
    add("eval", cmd_eval)
    add("analyze", cmd_analyze)
    p_gc = add("grad-check", cmd_grad_check, needs_config=False)
    p_gc.add_argument("--grad-seeds", type=int, default=5)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, AssertionError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
