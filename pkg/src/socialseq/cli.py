"""Command-line pipeline: ingest, split, augment, train, eval, predict,
benchmark, synth.

Configuration comes from flags and optional JSON config files only (no
environment variables), and every artifact embeds the config hash, seed
and toolkit version so runs are reproducible byte for byte. Exit codes:
0 success, 2 input validation failure, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from socialseq import __version__
from socialseq.container import config_hash, write_container
from socialseq.dataset import (
    Dataset,
    LayoutManifest,
    SocialSequence,
    ValidationError,
    load_dataset,
    load_manifest,
    save_dataset,
)
from socialseq.features import (
    AttributeBlock,
    AugmentConfig,
    CompressionConfig,
    WearerInfo,
    assemble_frame_vectors,
    augment,
    compress_attribute,
)
from socialseq.model import Arch, forward, load_model, save_model
from socialseq.numerics import Rng
from socialseq.splits import SplitSuite, load_split_suite, save_split_suite, select_splits
from socialseq.synth import (
    SynthConfig,
    attribute_group_columns,
    generate_corpus,
    generate_raw_corpus,
)
from socialseq.taxonomy import (
    domain_from_label,
    domain_of,
    infer_domain_distribution,
    relation_from_label,
    Domain,
    Relation,
)
from socialseq.training import (
    TrainConfig,
    TrainingDiverged,
    benchmark_suite,
    evaluate,
    render_benchmark_table,
    train,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--arch", choices=[a.value for a in Arch], default="st-rel")
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--alpha0", type=float, default=2e-3)
    p.add_argument("--dropout", type=float, default=0.3)
    p.add_argument("--l2", type=float, default=1e-3)
    p.add_argument("--iterations", type=int, default=150)
    p.add_argument("--decay-period", type=int, default=50)
    p.add_argument("--decay-factor", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--augment-multiplier", type=int, default=0)
    p.add_argument("--augment-sigma", type=float, default=0.01)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        arch=Arch(args.arch),
        hidden=args.hidden,
        alpha0=args.alpha0,
        dropout=args.dropout,
        l2=args.l2,
        iterations=args.iterations,
        decay_period=args.decay_period,
        decay_factor=args.decay_factor,
        seed=args.seed,
        augment_multiplier=args.augment_multiplier,
        augment_sigma=args.augment_sigma,
    )


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="socialseq", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    parsers = {}

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file of flag defaults (flags override)")
        parsers[name] = p
        return p

    p = command("synth", "generate a synthetic labelled corpus")
    p.add_argument("--out", help="dataset file to write")
    p.add_argument("--raw-dir", help="also write a pre-ingest raw corpus here")
    p.add_argument("--raw-cnn-width", type=int, default=64)
    p.add_argument("--sequences", type=int, default=108)
    p.add_argument("--users", type=int, default=4)
    p.add_argument("--days-per-user", type=int, default=5)
    p.add_argument("--min-len", type=int, default=2)
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--domain-sep", type=float, default=1.0)
    p.add_argument("--relation-sep", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--within-style", choices=["shared", "aliased"], default="shared",
                   help="'aliased' makes the fine task depend on resolving the coarse one")
    p.add_argument("--seed", type=int, default=0)

    p = command("ingest", "compress raw attribute blocks into a dataset file")
    p.add_argument("--raw-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", help="split-suite file; PCA fits on its outer train side only")
    p.add_argument("--pca-out", help="fitted PCA bank path (default: <out>.pca)")
    p.add_argument("--quant-levels", type=int, default=32)

    p = command("split", "select grouped train/val/test splits by KL score")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset", help="dataset file with labels and provenance")
    src.add_argument("--sequences", help="pre-ingest sequences.json (labels only)")
    p.add_argument("--out", required=True)
    p.add_argument("--candidates", type=int, default=1000)
    p.add_argument("--cv", type=int, default=3)
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)

    p = command("augment", "write a dataset extended with PCA-noise copies")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", help="only augment the outer train side of this suite")
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--multiplier", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)

    p = command("train", "train one architecture on one cross-validation split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--cv-index", type=int, default=0)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--history", help="history JSONL path (default: <out>.history.jsonl)")
    _add_train_flags(p)

    p = command("eval", "evaluate a saved model on a dataset side")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", help="split-suite file selecting a side")
    p.add_argument("--side", choices=["all", "test", "pool", "cv-train", "cv-val"],
                   default="all")
    p.add_argument("--cv-index", type=int, default=0)
    p.add_argument("--mode", choices=["relation-direct", "domain-direct", "domain-inferred"])
    p.add_argument("--out", help="report JSON path")

    p = command("predict", "emit per-sequence probabilities as JSONL")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)

    p = command("benchmark", "train and score every strategy on every CV split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", help="rows JSONL path")
    p.add_argument("--table-out", help="rendered table path")
    p.add_argument("--groups", default="none",
                   help="'none', 'default', or a JSON file of attribute-group name lists")
    _add_train_flags(p)

    return parser, parsers


def _groups_to_sequences(ds: Dataset, group_keys) -> list[SocialSequence]:
    by_group = ds.by_group()
    out = []
    for key in group_keys:
        key = tuple(key)
        if key not in by_group:
            raise ValidationError(f"split references unknown group {key}")
        out.extend(by_group[key])
    return out


def _side_sequences(ds: Dataset, suite: SplitSuite | None, side: str,
                    cv_index: int) -> list[SocialSequence]:
    if side == "all":
        return list(ds.sequences)
    if suite is None:
        raise ValidationError(f"--side {side} requires --split")
    if side == "test":
        return _groups_to_sequences(ds, suite.outer.val_groups)
    if side == "pool":
        return _groups_to_sequences(ds, suite.outer.train_groups)
    if not 0 <= cv_index < len(suite.inner):
        raise ValidationError(f"--cv-index {cv_index} out of range (k={len(suite.inner)})")
    plan = suite.inner[cv_index]
    keys = plan.train_groups if side == "cv-train" else plan.val_groups
    return _groups_to_sequences(ds, keys)


def cmd_synth(args) -> int:
    if not args.out and not args.raw_dir:
        raise ValidationError("synth needs --out and/or --raw-dir")
    cfg = SynthConfig(
        n_sequences=args.sequences, users=args.users, days_per_user=args.days_per_user,
        min_len=args.min_len, max_len=args.max_len, domain_sep=args.domain_sep,
        relation_sep=args.relation_sep, noise=args.noise,
        within_style=args.within_style, seed=args.seed,
    )
    run_hash = config_hash({"command": "synth", **cfg.to_json()})
    if args.out:
        ds = generate_corpus(cfg)
        ds.meta.update({"config_hash": run_hash, "seed": cfg.seed,
                        "toolkit_version": __version__})
        save_dataset(args.out, ds)
        print(f"wrote {args.out}: {len(ds.sequences)} sequences, "
              f"width {ds.manifest.total_width}")
    if args.raw_dir:
        generate_raw_corpus(cfg, args.raw_dir, raw_cnn_width=args.raw_cnn_width)
        print(f"wrote raw corpus under {args.raw_dir}")
    return EXIT_OK


def _load_raw_records(raw_dir: Path) -> list[dict]:
    seq_path = raw_dir / "sequences.json"
    if not seq_path.exists():
        raise ValidationError(f"{seq_path} not found")
    try:
        meta = json.loads(seq_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{seq_path}: invalid JSON: {exc}") from None
    records = meta.get("sequences")
    if not records:
        raise ValidationError(f"{seq_path}: no sequence records")
    for rec in records:
        missing = {"id", "user", "day", "relation", "domain", "wearer"} - set(rec)
        if missing:
            raise ValidationError(
                f"record {rec.get('id', '?')!r}: missing fields {sorted(missing)}"
            )
        relation = relation_from_label(rec["relation"])
        declared = domain_from_label(rec["domain"])
        if domain_of(relation) is not declared:
            raise ValidationError(
                f"record {rec['id']!r}: domain {rec['domain']!r} inconsistent with "
                f"relation {rec['relation']!r}"
            )
    return records


def cmd_ingest(args) -> int:
    raw_dir = Path(args.raw_dir)
    manifest = load_manifest(raw_dir / "manifest.json")
    records = _load_raw_records(raw_dir)

    fit_keys = None
    if args.split:
        suite = load_split_suite(args.split)
        fit_keys = {tuple(k) for k in suite.outer.train_groups}

    wearer_names = {e.name for e in manifest.entries if e.name.startswith("wearer-")}
    attr_entries = [e for e in manifest.entries if e.name not in wearer_names]

    # Load raw blocks per record, tracking each record's row slice.
    raw_blocks: dict[str, list[np.ndarray]] = {e.name: [] for e in attr_entries}
    row_slices: list[slice] = []
    offset = 0
    for rec in records:
        counts = set()
        for e in attr_entries:
            path = raw_dir / "blocks" / f"{rec['id']}__{e.name}.txt"
            if not path.exists():
                raise ValidationError(f"record {rec['id']!r}: missing block file {path}")
            data = np.loadtxt(path, ndmin=2)
            raw_blocks[e.name].append(data)
            counts.add(data.shape[0])
        if len(counts) != 1:
            raise ValidationError(f"record {rec['id']!r}: blocks disagree on frame count")
        t_len = counts.pop()
        row_slices.append(slice(offset, offset + t_len))
        offset += t_len

    fit_rows = None
    if fit_keys is not None:
        fit_rows = np.concatenate([
            np.arange(row_slices[i].start, row_slices[i].stop)
            for i, rec in enumerate(records)
            if (rec["user"], rec["day"]) in fit_keys
        ])
        if fit_rows.size == 0:
            raise ValidationError("no frames fall in the split's train groups")

    compressed: dict[str, np.ndarray] = {}
    pca_arrays: list[tuple[str, np.ndarray]] = []
    pca_attrs = []
    print(f"{'attribute':<18} {'raw':>5} {'out':>5} {'explained var':>14}")
    for e in attr_entries:
        stacked = np.concatenate(raw_blocks[e.name], axis=0)
        cfg = CompressionConfig(quant_levels=args.quant_levels, components=e.width)
        block = AttributeBlock(e.name, stacked, e.is_cnn)
        out, model = compress_attribute(block, cfg, fit_rows=fit_rows)
        if out.shape[1] != e.width:
            raise ValidationError(
                f"attribute {e.name!r}: produced width {out.shape[1]}, "
                f"manifest expects {e.width}"
            )
        compressed[e.name] = out
        if model is not None:
            explained = float(model.explained_variance_ratio.sum())
            pca_attrs.append(e.name)
            pca_arrays += [
                (f"{e.name}/mean", model.mean),
                (f"{e.name}/components", model.components),
                (f"{e.name}/eigenvalues", model.eigenvalues),
                (f"{e.name}/explained_variance_ratio", model.explained_variance_ratio),
            ]
            low = " (below target)" if explained < cfg.variance_target else ""
            print(f"{e.name:<18} {stacked.shape[1]:>5} {e.width:>5} {explained:>13.1%}{low}")
        else:
            print(f"{e.name:<18} {stacked.shape[1]:>5} {e.width:>5} {'pass-through':>14}")
    wearer_width = sum(manifest.entry(n).width for n in wearer_names)
    print(f"total width: {sum(v.shape[1] for v in compressed.values()) + wearer_width}")

    run_hash = config_hash({
        "command": "ingest", "quant_levels": args.quant_levels,
        "split": bool(args.split), "manifest_hash": manifest.hash,
    })
    sequences = []
    for i, rec in enumerate(records):
        blocks = {name: compressed[name][row_slices[i]] for name in compressed}
        wearer = WearerInfo(age=rec["wearer"]["age"], gender=rec["wearer"]["gender"])
        frames = assemble_frame_vectors(blocks, wearer, manifest)
        sequences.append(SocialSequence(
            id=rec["id"], user=rec["user"], day=rec["day"],
            relation=relation_from_label(rec["relation"]), frames=frames,
        ))
    ds = Dataset(manifest=manifest, sequences=sequences,
                 meta={"config_hash": run_hash, "seed": 0,
                       "toolkit_version": __version__})
    save_dataset(args.out, ds)

    pca_path = args.pca_out or f"{args.out}.pca"
    write_container(pca_path, {
        "kind": "pca-bank", "format": 1, "toolkit_version": __version__,
        "manifest_hash": manifest.hash, "config_hash": run_hash, "seed": 0,
        "attributes": pca_attrs,
    }, pca_arrays)
    print(f"wrote {args.out} and {pca_path}")
    return EXIT_OK


def cmd_split(args) -> int:
    if args.dataset:
        sequences = load_dataset(args.dataset).sequences
    else:
        records = _load_raw_records(Path(args.sequences).parent)
        sequences = [
            SocialSequence(id=r["id"], user=r["user"], day=r["day"],
                           relation=relation_from_label(r["relation"]),
                           frames=np.zeros((1, 1)))
            for r in records
        ]
    suite = select_splits(sequences, n_candidates=args.candidates, k=args.cv,
                          ratio=args.ratio, seed=args.seed)
    run_hash = config_hash({
        "command": "split", "candidates": args.candidates, "cv": args.cv,
        "ratio": args.ratio, "seed": args.seed,
    })
    save_split_suite(args.out, suite, meta={
        "config_hash": run_hash, "seed": args.seed, "toolkit_version": __version__,
    })
    flag = "" if suite.outer.ratio_ok else "  [outside ratio tolerance]"
    print(f"outer split: {suite.outer.train_size}/{suite.outer.val_size} sequences, "
          f"ratio {suite.outer.achieved_ratio:.3f}, KL {suite.outer.kl_score:.6f}{flag}")
    for i, plan in enumerate(suite.inner):
        print(f"cv[{i}]: {plan.train_size}/{plan.val_size}, "
              f"ratio {plan.achieved_ratio:.3f}, KL {plan.kl_score:.6f}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_augment(args) -> int:
    ds = load_dataset(args.dataset)
    if args.split:
        suite = load_split_suite(args.split)
        targets = _groups_to_sequences(ds, suite.outer.train_groups)
    else:
        targets = list(ds.sequences)
    cfg = AugmentConfig(sigma=args.sigma, multiplier=args.multiplier, seed=args.seed)
    new = augment(targets, cfg, Rng(cfg.seed).split("augment"))
    run_hash = config_hash({
        "command": "augment", "sigma": args.sigma, "multiplier": args.multiplier,
        "seed": args.seed, "split": bool(args.split),
    })
    out_ds = Dataset(manifest=ds.manifest, sequences=list(ds.sequences) + new,
                     meta={"config_hash": run_hash, "seed": args.seed,
                           "toolkit_version": __version__})
    save_dataset(args.out, out_ds)
    print(f"wrote {args.out}: {len(ds.sequences)} original + {len(new)} augmented")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = load_dataset(args.dataset)
    suite = load_split_suite(args.split)
    if not 0 <= args.cv_index < len(suite.inner):
        raise ValidationError(f"--cv-index {args.cv_index} out of range (k={len(suite.inner)})")
    plan = suite.inner[args.cv_index]
    train_seqs = _groups_to_sequences(ds, plan.train_groups)
    val_seqs = _groups_to_sequences(ds, plan.val_groups)
    cfg = _train_config(args)
    run_hash = config_hash({"command": "train", "cv_index": args.cv_index,
                            "split_seed": suite.seed, **cfg.to_json()})
    result = train(cfg, train_seqs, val_seqs)
    save_model(args.out, result.model, manifest_hash=ds.manifest.hash,
               config_hash=run_hash, seed=cfg.seed,
               meta={"best_iteration": result.best_iteration,
                     "best_selection": result.best_selection,
                     "cv_index": args.cv_index})
    history_path = args.history or f"{args.out}.history.jsonl"
    with open(history_path, "w") as fh:
        fh.write(json.dumps({
            "config_hash": run_hash, "seed": cfg.seed, "toolkit_version": __version__,
            "config": cfg.to_json(), "best_iteration": result.best_iteration,
            "best_selection": result.best_selection,
        }, sort_keys=True) + "\n")
        for rec in result.history:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
    print(f"trained {cfg.arch.value} on cv[{args.cv_index}]: best iteration "
          f"{result.best_iteration}, validation macro-F1 {result.best_selection:.4f}")
    print(f"wrote {args.out} and {history_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = load_dataset(args.dataset)
    model, header = load_model(args.model, expect_manifest_hash=ds.manifest.hash)
    suite = load_split_suite(args.split) if args.split else None
    seqs = _side_sequences(ds, suite, args.side, args.cv_index)
    mode = args.mode or ("relation-direct" if model.arch.has_relation_head
                         else "domain-direct")
    report = evaluate(model, seqs, mode)
    print(f"mode {mode} on {args.side} ({report.n} sequences): "
          f"acc {report.accuracy:.4f}, macro-F1 {report.macro_f1:.4f}")
    for c, f1 in enumerate(report.per_class_f1):
        print(f"  class {c}: precision {report.per_class_precision[c]:.4f} "
              f"recall {report.per_class_recall[c]:.4f} f1 {f1:.4f}")
    if args.out:
        obj = report.to_json()
        obj["meta"] = {"model_config_hash": header["config_hash"],
                       "seed": header["seed"], "toolkit_version": __version__,
                       "side": args.side}
        Path(args.out).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    ds = load_dataset(args.dataset)
    model, header = load_model(args.model, expect_manifest_hash=ds.manifest.hash)
    with open(args.out, "w") as fh:
        fh.write(json.dumps({
            "model_config_hash": header["config_hash"], "seed": header["seed"],
            "toolkit_version": __version__, "arch": model.arch.value,
        }, sort_keys=True) + "\n")
        for seq in ds.sequences:
            out = forward(model, seq.frames)
            row: dict = {"id": seq.id}
            if out.relation_probs is not None:
                row["relation_probs"] = out.relation_probs.tolist()
                row["relation_pred"] = Relation(int(np.argmax(out.relation_probs))).label
                inferred = infer_domain_distribution(out.relation_probs)
                row["domain_inferred"] = inferred.tolist()
                row["domain_inferred_pred"] = Domain(int(np.argmax(inferred))).label
            if out.domain_probs is not None:
                row["domain_probs"] = out.domain_probs.tolist()
                row["domain_pred"] = Domain(int(np.argmax(out.domain_probs))).label
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"wrote {args.out}: {len(ds.sequences)} predictions")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    ds = load_dataset(args.dataset)
    suite = load_split_suite(args.split)
    if args.groups == "none":
        masks = None
    elif args.groups == "default":
        masks = attribute_group_columns(ds.manifest)
    else:
        try:
            groups = json.loads(Path(args.groups).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read groups file {args.groups}: {exc}") from None
        masks = attribute_group_columns(ds.manifest, groups)
    cfg = _train_config(args)
    rows = benchmark_suite(cfg, ds.by_group(), suite, masks)
    table = render_benchmark_table(rows)
    print(table)
    run_hash = config_hash({"command": "benchmark", "groups": args.groups,
                            "split_seed": suite.seed, **cfg.to_json()})
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(json.dumps({"config_hash": run_hash, "seed": cfg.seed,
                                 "toolkit_version": __version__}, sort_keys=True) + "\n")
            for row in rows:
                fh.write(json.dumps(row.to_json(), sort_keys=True) + "\n")
        print(f"wrote {args.out}")
    if args.table_out:
        Path(args.table_out).write_text(table + "\n")
        print(f"wrote {args.table_out}")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "split": cmd_split,
    "augment": cmd_augment,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "benchmark": cmd_benchmark,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, parsers = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            try:
                overrides = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ValidationError(f"cannot read config {args.config}: {exc}") from None
            sp = parsers[args.command]
            valid = {action.dest for action in sp._actions}
            unknown = set(overrides) - valid
            if unknown:
                raise ValidationError(f"unknown config keys: {sorted(unknown)}")
            sp.set_defaults(**overrides)
            args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingDiverged, ValueError, OSError, KeyError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
