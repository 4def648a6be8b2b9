"""Experiment driver.

Subcommands cover each pipeline stage: ``make-data`` (long-tail and
balanced splits plus group assignments), ``pretrain`` (one variant:
sdclr, simclr, or dropout), ``eval`` (linear or few-shot probe),
``mine-pies`` (pruning-sensitivity ranking), ``report`` (cross-seed
aggregation), and ``benchmark`` (compiled vs numpy kernels).

Every run is reproducible: rerunning a subcommand with the same config and
seed rewrites byte-identical split files, masks, and reports.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import benchmark as bench_mod
from .config import VARIANTS, ExperimentConfig, RunManifest
from .datasets import get_source
from .errors import SdclrError
from .evaluation import (
    EvalReport,
    ProbeConfig,
    evaluate,
    few_shot_probe,
    linear_probe,
    pie_mine,
)
from .longtail import (
    GroupAssignment,
    assign_groups,
    sample_balanced_counterpart,
    sample_longtail,
    sample_validation,
)
from .pruning import layerwise_sparsity
from .reporting import emit_report
from .trainer import Checkpoint, pretrain
from .util import atomic_write_text


def _load_config(args):
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(
        seed=getattr(args, "seed", None),
        prune_ratio=getattr(args, "prune_ratio", None),
        epochs=getattr(args, "epochs", None),
        out=getattr(args, "out", None),
    )


def _data_dir(cfg, seed):
    return cfg.out_dir / "data" / f"seed{seed}"


def _run_dir(cfg, variant, seed):
    return cfg.out_dir / "runs" / variant / f"seed{seed}"


def _latest_checkpoint(run_dir):
    ckpts = sorted(Path(run_dir).glob("ckpt_e*.json"))
    if not ckpts:
        raise SdclrError(f"no checkpoint in {run_dir}; run `sdclr pretrain` first")
    return Checkpoint.load(ckpts[-1].with_suffix(""))


def _write_resolved_config(cfg, manifest):
    path = cfg.out_dir / "config.resolved.json"
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path, cfg.to_json())
    manifest.add(cfg.out_dir, path)


def _groups_for_seed(cfg, seed):
    path = _data_dir(cfg, seed) / "groups.json"
    if not path.exists():
        raise SdclrError(f"{path} missing; run `sdclr make-data` first")
    d = json.loads(path.read_text())
    g = d["class_groups"]
    return GroupAssignment(scheme=d["scheme"], many=tuple(g["many"]),
                           medium=tuple(g["medium"]), few=tuple(g["few"]),
                           thresholds=tuple(d.get("thresholds", (100, 20))))


def cmd_make_data(args):
    cfg = _load_config(args)
    manifest = RunManifest.open(cfg.out_dir, cfg.config_hash)
    source = get_source(cfg.raw["dataset"])
    for seed in cfg.seeds:
        out = _data_dir(cfg, seed)
        out.mkdir(parents=True, exist_ok=True)
        val = sample_validation(source, cfg.raw["val_size"], seed)
        profile = cfg.longtail_spec(seed).profile()
        lt = sample_longtail(source, profile, seed, val_indices=val)
        bal = sample_balanced_counterpart(source, int(lt.train_indices.size),
                                          seed, val_indices=val)
        rank_groups = assign_groups(profile, cfg.raw["groups"]["scheme"],
                                    thresholds=tuple(cfg.raw["groups"]["thresholds"]))
        class_groups = rank_groups.remap(lt.class_ranks)
        lt.save(out / "longtail.json")
        bal.save(out / "balanced.json")
        atomic_write_text(out / "groups.json", json.dumps({
            "scheme": rank_groups.scheme,
            "thresholds": list(rank_groups.thresholds),
            "rank_groups": rank_groups.as_dict(),
            "class_groups": class_groups.as_dict(),
            "profile_counts": profile.counts.tolist(),
        }, sort_keys=True))
        for name in ("longtail.json", "balanced.json", "groups.json"):
            manifest.add(cfg.out_dir, out / name)
        print(f"seed {seed}: long-tail train={lt.train_indices.size} "
              f"balanced={bal.train_indices.size} val={val.size}")
    _write_resolved_config(cfg, manifest)
    manifest.write(cfg.out_dir)
    return 0


def cmd_pretrain(args):
    cfg = _load_config(args)
    variant = args.variant
    manifest = RunManifest.open(cfg.out_dir, cfg.config_hash)
    source = get_source(cfg.raw["dataset"])
    chain = cfg.augment_chain()
    for seed in cfg.seeds:
        split_path = _data_dir(cfg, seed) / "longtail.json"
        if not split_path.exists():
            print(f"error: {split_path} missing; run `sdclr make-data` first",
                  file=sys.stderr)
            return 1
        from .longtail import DatasetSplit
        split = DatasetSplit.load(split_path)
        run_dir = _run_dir(cfg, variant, seed)
        train_cfg = cfg.train_config(variant, seed)
        print(f"[{variant} seed {seed}] {train_cfg.epochs} epochs, "
              f"competitor={train_cfg.competitor}")
        ckpt = pretrain(source.train_images, split, cfg.encoder_spec(), train_cfg,
                        out_dir=run_dir, chain=chain, config_hash=cfg.config_hash,
                        log_fn=lambda e, l: print(f"  epoch {e}: loss {l:.4f}"))
        if ckpt.mask is not None:
            ckpt.mask.save(run_dir / "mask_final.mask")
            order = ckpt.encoder().prunable_keys(
                include_head=train_cfg.prune_projection_head)
            rep = layerwise_sparsity(ckpt.mask, order=order)
            atomic_write_text(run_dir / "sparsity.json",
                              json.dumps(rep.to_dict(), sort_keys=True))
            manifest.add(cfg.out_dir, run_dir / "mask_final.mask")
            manifest.add(cfg.out_dir, run_dir / "sparsity.json")
        for f in run_dir.glob("ckpt_e*.*"):
            manifest.add(cfg.out_dir, f)
        manifest.add(cfg.out_dir, run_dir / "train_log.csv")
    _write_resolved_config(cfg, manifest)
    manifest.write(cfg.out_dir)
    return 0


def _probe_pool(cfg, source, seed):
    """The balanced labeled pool: full train set minus the validation draw."""
    val = sample_validation(source, cfg.raw["val_size"], seed)
    keep = np.setdiff1d(np.arange(source.train_labels.size), val)
    return source.train_images[keep], source.train_labels[keep]


def cmd_eval(args):
    cfg = _load_config(args)
    variant = args.variant
    protocol = args.protocol
    manifest = RunManifest.open(cfg.out_dir, cfg.config_hash)
    source = get_source(cfg.raw["dataset"])
    probe_bs = cfg.raw["probe"]["batch_size"]
    for seed in cfg.seeds:
        ckpt = _latest_checkpoint(_run_dir(cfg, variant, seed))
        groups = _groups_for_seed(cfg, seed)
        images, labels = _probe_pool(cfg, source, seed)
        if protocol == "linear":
            clf, notes = linear_probe(ckpt, images, labels,
                                      ProbeConfig.linear(), seed=seed,
                                      batch_size=probe_bs)
        else:
            clf, _, notes = few_shot_probe(
                ckpt, images, labels,
                fraction=cfg.raw["probe"]["few_shot_fraction"],
                cfg=ProbeConfig.few_shot(), seed=seed, batch_size=probe_bs)
        report = evaluate(clf, ckpt, source.test_images, source.test_labels,
                          groups, protocol=protocol, config_hash=cfg.config_hash,
                          batch_size=probe_bs)
        report.notes = notes
        out = cfg.out_dir / "eval" / variant / f"seed{seed}"
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"report_{protocol}.json"
        atomic_write_text(path, json.dumps(report.to_dict(), sort_keys=True))
        manifest.add(cfg.out_dir, path)
        print(f"[{variant} seed {seed}] {protocol}: all={report.all_acc:.2f} "
              f"groups={ {k: None if v is None else round(v, 2) for k, v in report.group_acc.items()} } "
              f"std={report.std_groups:.2f}")
    manifest.write(cfg.out_dir)
    return 0


def cmd_mine_pies(args):
    cfg = _load_config(args)
    variant = args.variant
    manifest = RunManifest.open(cfg.out_dir, cfg.config_hash)
    source = get_source(cfg.raw["dataset"])
    for seed in cfg.seeds:
        ckpt = _latest_checkpoint(_run_dir(cfg, variant, seed))
        groups = _groups_for_seed(cfg, seed)
        report = pie_mine(ckpt, source.test_images, source.test_labels, groups,
                          ratio=args.prune_ratio,
                          top_fraction=cfg.raw["pie"]["top_fraction"],
                          feature_source=cfg.raw["pie"]["feature_source"],
                          config_hash=cfg.config_hash,
                          batch_size=cfg.raw["probe"]["batch_size"])
        out = cfg.out_dir / "pies" / variant / f"seed{seed}"
        out.mkdir(parents=True, exist_ok=True)
        path = out / "pie.json"
        atomic_write_text(path, json.dumps(report.to_dict(), sort_keys=True))
        manifest.add(cfg.out_dir, path)
        print(f"[{variant} seed {seed}] top {report.top_fraction:.0%} group mix: "
              + ", ".join(f"{k}={v:.1f}%" for k, v in report.group_pct.items()))
    manifest.write(cfg.out_dir)
    return 0


def cmd_report(args):
    run_dirs = [Path(d) for d in args.run_dirs]
    out_dir = Path(args.out) if args.out else run_dirs[0] / "report"

    hashes = set()
    entries_by_protocol = {}
    dataset_names = set()
    for rd in run_dirs:
        resolved = rd / "config.resolved.json"
        if resolved.exists():
            raw = json.loads(resolved.read_text())
            dataset_names.add(raw.get("dataset", {}).get("source", "dataset"))
        for path in sorted(rd.glob("eval/*/*/report_*.json")):
            variant = path.parent.parent.name
            seed = int(path.parent.name.removeprefix("seed"))
            report = EvalReport.from_dict(json.loads(path.read_text()))
            hashes.add(report.config_hash)
            entries_by_protocol.setdefault(report.protocol, []).append(
                (variant, seed, report))
    if not entries_by_protocol:
        print("error: no evaluation reports found in the given run dirs",
              file=sys.stderr)
        return 1
    if len(hashes) > 1 and not args.force:
        print(f"error: mixed config hashes {sorted(hashes)}; pass --force to "
              "aggregate anyway", file=sys.stderr)
        return 1

    dataset = dataset_names.pop() if len(dataset_names) == 1 else "mixed"
    sparsity = _find_sparsity(run_dirs)
    written = []
    for protocol, entries in sorted(entries_by_protocol.items()):
        written += emit_report(entries, out_dir, dataset=dataset,
                               protocol=protocol, plots=args.plots,
                               sparsity=sparsity)
    for path in written:
        print(f"wrote {path}")
    return 0


def _find_sparsity(run_dirs):
    from .pruning import SparsityReport
    for rd in run_dirs:
        for path in sorted(rd.glob("runs/*/*/sparsity.json")):
            d = json.loads(path.read_text())
            return SparsityReport(
                per_layer=tuple((n, f) for n, f in d["per_layer"]),
                overall=d["overall"])
    return None


def cmd_benchmark(args):
    return bench_mod.run_cli(dtype=args.dtype, reps=args.reps)


def build_parser():
    p = argparse.ArgumentParser(
        prog="sdclr",
        description="Long-tail contrastive learning lab: pruned self-competitor "
                    "pre-training with balancedness evaluation.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, variant=False):
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--seed", type=int, help="override the config seed list")
        sp.add_argument("--out", help="output directory override")
        if variant:
            sp.add_argument("--variant", choices=VARIANTS, default="sdclr")

    sp = sub.add_parser("make-data", help="write long-tail/balanced splits and groups")
    common(sp)
    sp.set_defaults(fn=cmd_make_data)

    sp = sub.add_parser("pretrain", help="run contrastive pre-training")
    common(sp, variant=True)
    sp.add_argument("--prune-ratio", type=float, dest="prune_ratio")
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(fn=cmd_pretrain)

    sp = sub.add_parser("eval", help="linear or few-shot probe evaluation")
    common(sp, variant=True)
    sp.add_argument("--protocol", choices=("linear", "few_shot"), default="linear")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("mine-pies", help="rank samples by pruning sensitivity")
    common(sp, variant=True)
    sp.add_argument("--prune-ratio", type=float, dest="prune_ratio",
                    help="mask ratio for scoring (default: the checkpoint's)")
    sp.set_defaults(fn=cmd_mine_pies)

    sp = sub.add_parser("report", help="aggregate eval reports across seeds")
    sp.add_argument("run_dirs", nargs="+")
    sp.add_argument("--out")
    sp.add_argument("--plots", action="store_true")
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(fn=cmd_report)

    sp = sub.add_parser("benchmark", help="compare kernel backends")
    sp.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    sp.add_argument("--reps", type=int, default=5)
    sp.set_defaults(fn=cmd_benchmark)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SdclrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
