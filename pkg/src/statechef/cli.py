"""Command-line entry point: one subcommand per pipeline step.

Exit codes: 0 success, 1 usage error, 2 data error (parse or validation),
3 runtime failure. Every command takes --seed, --config, and --out; values
from a --config JSON file override flags, and flags override defaults. The
STATECHEF_DATA_DIR environment variable supplies the default storage root
for label stores.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import labeling, metrics, models, synthetic, taxonomy, training, voting
from .manifest import (
    DatasetManifest,
    ManifestError,
    class_stats,
    import_crawl_list,
    load_manifest,
    save_manifest,
    stratified_split,
)
from .taxonomy import CLASS_NAMES, TaxonomyError, load_taxonomy

__all__ = ["main"]

USAGE_EXIT = 1
DATA_EXIT = 2
RUNTIME_EXIT = 3

_DATA_ERRORS = (
    TaxonomyError,
    ManifestError,
    labeling.LabelingError,
    metrics.EvaluationError,
    voting.VotingError,
    models.ModelSpecError,
    training.TrainingError,
    json.JSONDecodeError,
    FileNotFoundError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _data_dir() -> Path:
    return Path(os.environ.get("STATECHEF_DATA_DIR", "."))


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", help="JSON file whose entries override flags")
    parser.add_argument("--out", help="output path")


def _apply_config(args: argparse.Namespace) -> argparse.Namespace:
    if getattr(args, "config", None):
        overrides = json.loads(Path(args.config).read_text())
        for key, value in overrides.items():
            setattr(args, key.replace("-", "_"), value)
    return args


def _ratios(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated ratios, got {text!r}")
    return (parts[0], parts[1], parts[2])


# -- handlers -----------------------------------------------------------


def _cmd_taxonomy_validate(args) -> int:
    tax = load_taxonomy(args.path)
    print(
        f"{args.path}: valid taxonomy ({len(tax.fine_states)} fine states, "
        f"{len(tax.state_classes)} classes, {len(tax.objects)} objects)"
    )
    if args.out:
        taxonomy.save_taxonomy(tax, args.out)
    return 0


def _cmd_manifest_import(args) -> int:
    result = import_crawl_list(args.path, args.object, args.state)
    for line_no, reason in result.errors:
        print(f"{args.path}:{line_no}: {reason}", file=sys.stderr)
    manifest = DatasetManifest(records=result.records)
    out = Path(args.out) if args.out else Path(args.path).with_suffix(".manifest.jsonl")
    save_manifest(manifest, out)
    print(f"imported {len(result.records)} records ({len(result.errors)} malformed lines) -> {out}")
    return 0


def _cmd_manifest_split(args) -> int:
    manifest = load_manifest(args.path)
    result = stratified_split(manifest, args.ratios, seed=args.seed, allow_reassign=args.allow_reassign)
    out = Path(args.out) if args.out else Path(args.path)
    save_manifest(result, out)
    sizes = result.split_sizes()
    print(f"split {len(result)} records -> train {sizes['train']}, test {sizes['test']}, val {sizes['val']} ({out})")
    return 0


def _cmd_manifest_stats(args) -> int:
    manifest = load_manifest(args.path)
    counts = class_stats(manifest)
    for name, count in counts.items():
        print(f"{name:<10} {count}")
    print(f"{'total':<10} {len(manifest)}")
    if args.out:
        Path(args.out).write_text(json.dumps(dict(counts), indent=2) + "\n")
    return 0


def _load_training_set(manifest_path: str, split: str, label_space, root=None):
    manifest = load_manifest(manifest_path)
    return training.TrainingSet.from_manifest(manifest, split, label_space, root=root)


def _cmd_train_whole(args) -> int:
    tax = load_taxonomy(args.taxonomy) if args.taxonomy else taxonomy.load_canonical_taxonomy()
    label_space = tuple(tax.class_names())
    schedule = (
        training.load_schedule(args.schedule)
        if args.schedule
        else training.whole_dataset_schedule()
    )
    if args.epochs_cap:
        schedule = training.abbreviated(schedule, args.epochs_cap)
    backbone = models.BackboneSpec(provider=args.provider, pretrained=args.pretrained)
    head = models.HeadSpec.tiny() if args.provider == "tiny-random-test" else models.HeadSpec()
    model = models.build_model(backbone, head, seed=args.seed)
    data = _load_training_set(args.manifest, "train", label_space, root=args.data_root)
    try:
        val = _load_training_set(args.manifest, "val", label_space, root=args.data_root)
    except ManifestError:
        val = None
    model, history = training.run_schedule(
        model, data, schedule, seed=args.seed, val_data=val if val and len(val) else None
    )
    out = Path(args.out) if args.out else _data_dir() / "whole-model"
    history_path = out.with_suffix(".history.jsonl")
    history.save(history_path)
    models.save_checkpoint(model, out, class_names=label_space, history_ref=history_path.name)
    print(f"trained {schedule.name} ({len(history)} epochs) -> {out}.pt")
    return 0


def _cmd_train_object(args) -> int:
    tax = load_taxonomy(args.taxonomy) if args.taxonomy else taxonomy.load_canonical_taxonomy()
    base, _meta = models.load_checkpoint(args.base)
    schedule = (
        training.load_schedule(args.schedule)
        if args.schedule
        else training.object_finetune_schedule()
    )
    if args.epochs_cap:
        schedule = training.abbreviated(schedule, args.epochs_cap)
    manifest_dir = Path(args.manifest_dir)
    manifests = {}
    for obj in tax.object_names():
        path = manifest_dir / f"{obj}.jsonl"
        if path.exists():
            manifests[obj] = load_manifest(path)
    results = training.train_object_models(
        base, manifests, tax, schedule=schedule, seed=args.seed, data_root=args.data_root
    )
    out = Path(args.out) if args.out else _data_dir() / "object-models"
    out.mkdir(parents=True, exist_ok=True)
    for obj, (model, history, label_space) in results.items():
        history_path = out / f"{obj}.history.jsonl"
        history.save(history_path)
        models.save_checkpoint(model, out / obj, class_names=label_space, history_ref=history_path.name)
    print(f"fine-tuned {len(results)} object models -> {out}")
    return 0


def _aligned_dumps(paths):
    loaded = [voting.read_prediction_dump(p) for p in paths]
    reference = sorted(loaded[0][0])
    matrices = []
    for sample_ids, _model_id, probs in loaded:
        if sorted(sample_ids) != reference:
            raise voting.VotingError("prediction dumps cover different sample ids")
        order = np.argsort(np.asarray(sample_ids))
        matrices.append(probs[order])
    return reference, matrices


def _labels_for(sample_ids, manifest_path) -> np.ndarray:
    manifest = load_manifest(manifest_path)
    states = {r.id: r.state for r in manifest.records}
    missing = [s for s in sample_ids if s not in states]
    if missing:
        raise ManifestError(f"manifest lacks records for sample ids {missing[:3]}")
    return np.asarray([CLASS_NAMES.index(states[s]) for s in sample_ids], dtype=np.int64)


def _cmd_vote_search(args) -> int:
    sample_ids, matrices = _aligned_dumps(args.preds)
    labels = _labels_for(sample_ids, args.manifest)
    weights = voting.search_weights(matrices, labels, grid_step=args.step)
    out = Path(args.out) if args.out else Path("weights.json")
    out.write_text(json.dumps(weights.to_json(), indent=2) + "\n")
    print(f"best weights {weights.weights} -> {out}")
    return 0


def _cmd_vote_apply(args) -> int:
    sample_ids, matrices = _aligned_dumps(args.preds)
    weights = voting.EnsembleWeights.from_json(json.loads(Path(args.weights).read_text()))
    combined = voting.weighted_vote(matrices, weights)
    out = Path(args.out) if args.out else Path("ensemble.jsonl")
    voting.write_prediction_dump(out, sample_ids, "ensemble", combined)
    print(f"combined {len(matrices)} dumps -> {out}")
    return 0


def _cmd_eval_run(args) -> int:
    sample_ids, _model_id, probs = voting.read_prediction_dump(args.preds)
    order = np.argsort(np.asarray(sample_ids))
    sample_ids = [sample_ids[i] for i in order]
    probs = probs[order]
    labels = _labels_for(sample_ids, args.manifest)
    report = metrics.evaluate(probs, labels, CLASS_NAMES[: probs.shape[1]])
    print(metrics.render_report(report, "classes"), end="")
    if args.out:
        Path(args.out).write_text(metrics.render_report(report, "classes", fmt="json") + "\n")
    return 0


def _cmd_eval_report(args) -> int:
    rows = [json.loads(line) for line in Path(args.path).read_text().splitlines() if line.strip()]
    print(metrics.render_report(rows, args.layout), end="")
    if args.out:
        Path(args.out).write_text(metrics.render_report(rows, args.layout, fmt="json") + "\n")
    return 0


def _cmd_label_propose(args) -> int:
    model, meta = models.load_checkpoint(args.checkpoint)
    class_names = meta.get("class_names") or list(CLASS_NAMES)
    manifest = load_manifest(args.manifest)
    proposals, skipped = labeling.propose_labels(
        model, manifest, args.k, class_names, model_ref=Path(args.checkpoint).name,
        image_root=args.data_root,
    )
    for sample_id, reason in skipped:
        print(f"skipped {sample_id}: {reason}", file=sys.stderr)
    store = labeling.ProposalStore(args.store or _data_dir() / "label-store")
    added = store.add_proposals(proposals)
    print(f"added {added} proposals ({len(skipped)} skipped) -> {store.root}")
    return 0


def _cmd_label_serve(args) -> int:
    import uvicorn

    from .server import create_app

    tax = load_taxonomy(args.taxonomy) if args.taxonomy else taxonomy.load_canonical_taxonomy()
    store = labeling.ProposalStore(args.store or _data_dir() / "label-store")
    proposer = None
    if args.checkpoint:
        model, meta = models.load_checkpoint(args.checkpoint)
        class_names = meta.get("class_names") or list(CLASS_NAMES)

        def proposer(manifest_path: str, k: int):
            manifest = load_manifest(manifest_path)
            proposals, _skipped = labeling.propose_labels(
                model, manifest, k, class_names, model_ref=Path(args.checkpoint).name
            )
            return proposals

    app = create_app(store, tax, proposer=proposer, image_root=args.data_root)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _cmd_label_export(args) -> int:
    store = labeling.ProposalStore(args.store or _data_dir() / "label-store")
    manifest = labeling.export_accepted(store)
    out = Path(args.out) if args.out else store.root / "accepted.jsonl"
    save_manifest(manifest, out)
    print(f"exported {len(manifest)} accepted records -> {out}")
    return 0


# -- parser wiring ------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="statechef", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    tax = subs.add_parser("taxonomy").add_subparsers(dest="action", required=True)
    p = tax.add_parser("validate")
    p.add_argument("path")
    _add_common(p)
    p.set_defaults(handler=_cmd_taxonomy_validate)

    man = subs.add_parser("manifest").add_subparsers(dest="action", required=True)
    p = man.add_parser("import")
    p.add_argument("path")
    p.add_argument("--object", required=True)
    p.add_argument("--state", required=True)
    _add_common(p)
    p.set_defaults(handler=_cmd_manifest_import)
    p = man.add_parser("split")
    p.add_argument("path")
    p.add_argument("--ratios", type=_ratios, default=(0.70, 0.15, 0.15))
    p.add_argument("--allow-reassign", action="store_true")
    _add_common(p)
    p.set_defaults(handler=_cmd_manifest_split)
    p = man.add_parser("stats")
    p.add_argument("path")
    _add_common(p)
    p.set_defaults(handler=_cmd_manifest_stats)

    train = subs.add_parser("train").add_subparsers(dest="action", required=True)
    p = train.add_parser("whole")
    p.add_argument("--manifest", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--provider", default="tiny-random-test", choices=models.PROVIDERS)
    p.add_argument("--pretrained", action="store_true")
    p.add_argument("--schedule")
    p.add_argument("--epochs-cap", type=int, default=0)
    p.add_argument("--data-root")
    _add_common(p)
    p.set_defaults(handler=_cmd_train_whole)
    p = train.add_parser("object")
    p.add_argument("--base", required=True)
    p.add_argument("--manifest-dir", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--schedule")
    p.add_argument("--epochs-cap", type=int, default=0)
    p.add_argument("--data-root")
    _add_common(p)
    p.set_defaults(handler=_cmd_train_object)

    vote = subs.add_parser("vote").add_subparsers(dest="action", required=True)
    p = vote.add_parser("search")
    p.add_argument("--preds", nargs="+", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--step", type=float, default=0.1)
    _add_common(p)
    p.set_defaults(handler=_cmd_vote_search)
    p = vote.add_parser("apply")
    p.add_argument("--preds", nargs="+", required=True)
    p.add_argument("--weights", required=True)
    _add_common(p)
    p.set_defaults(handler=_cmd_vote_apply)

    evaluation = subs.add_parser("eval").add_subparsers(dest="action", required=True)
    p = evaluation.add_parser("run")
    p.add_argument("--preds", required=True)
    p.add_argument("--manifest", required=True)
    _add_common(p)
    p.set_defaults(handler=_cmd_eval_run)
    p = evaluation.add_parser("report")
    p.add_argument("path")
    p.add_argument("--layout", default="table3", choices=sorted(metrics.TABLE_LAYOUTS))
    _add_common(p)
    p.set_defaults(handler=_cmd_eval_report)

    label = subs.add_parser("label").add_subparsers(dest="action", required=True)
    p = label.add_parser("propose")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--store")
    p.add_argument("--data-root")
    _add_common(p)
    p.set_defaults(handler=_cmd_label_propose)
    p = label.add_parser("serve")
    p.add_argument("--store")
    p.add_argument("--taxonomy")
    p.add_argument("--checkpoint")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8123)
    p.add_argument("--data-root")
    _add_common(p)
    p.set_defaults(handler=_cmd_label_serve)
    p = label.add_parser("export")
    p.add_argument("--store")
    _add_common(p)
    p.set_defaults(handler=_cmd_label_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_EXIT
    try:
        args = _apply_config(args)
        return args.handler(args)
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
