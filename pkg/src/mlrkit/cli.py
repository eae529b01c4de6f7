"""Single-binary CLI exposing the full workflow as subcommands.

Exit codes: 0 success, 1 usage error, 2 data/shape/format error,
3 numerical abort (non-finite loss).  Every artifact-producing run writes a
resolved-config JSON capturing all defaults so it can be reproduced exactly.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import corpuscan, promptlab
from .aggregation import export_similarity_map
from .data import (DatasetBundle, LabelMatrix, MaskSpec, generate_synthetic,
                   mask_labels, read_bundle, read_label_csv, read_tensor_file,
                   write_bundle, write_label_csv, write_tensor_file)
from .errors import (DomainError, FormatError, MlrkitError, NumericalError,
                     ShapeError, UndefinedAPError, UsageError)
from .heads import (ProjectorHead, head_forward, load_head, make_free_dual,
                    make_negativecoop, make_positivecoop, save_head,
                    DEFAULT_TEMPERATURE)
from .loss import LossConfig
from .metrics import write_eval_report
from .numerics import Tensor
from .train import TrainConfig, history_to_csv, train_run

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

HEAD_KINDS = ("baseline", "positivecoop", "negativecoop", "freedual")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # raise instead of sys.exit(2)
        raise UsageError(message)


def _write_config(path: Path, command: str, config: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"command": command, **config}, indent=2, sort_keys=True))


def cmd_synth(args) -> int:
    out = Path(args.out)
    bundle = generate_synthetic(args.images, args.classes, args.height, args.width,
                                args.dim, args.seed, noise=args.noise,
                                presence_prob=args.presence)
    out.mkdir(parents=True, exist_ok=True)
    write_bundle(bundle, out)
    # concept directions double as synthetic text anchors (bank + names sidecar)
    write_tensor_file(Tensor.from_array(bundle.concepts), out / "anchors.mlt")
    (out / "anchors.names.txt").write_text("\n".join(bundle.class_names) + "\n")
    _write_config(out / "resolved_config.json", "synth", {
        "out": str(out), "images": args.images, "classes": args.classes,
        "height": args.height, "width": args.width, "dim": args.dim,
        "seed": args.seed, "noise": args.noise, "presence": args.presence,
    })
    print(f"wrote {bundle.num_images} feature maps, labels, and anchors to {out}")
    return EXIT_OK


def cmd_mask(args) -> int:
    labels, class_names = read_label_csv(args.labels)
    spec = MaskSpec(known_fraction=args.p, seed=args.seed)
    masked = mask_labels(labels, spec)
    write_label_csv(masked, class_names, args.out)
    _write_config(Path(str(args.out) + ".config.json"), "mask", {
        "labels": str(args.labels), "p": args.p, "seed": args.seed,
        "out": str(args.out),
    })
    known = int((masked.entries != 0).sum())
    print(f"kept {known}/{masked.entries.size} cells -> {args.out}")
    return EXIT_OK


def _resolve_manifest(path) -> dict:
    try:
        manifest = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from None
    for key in ("features", "head", "output_dir"):
        if key not in manifest:
            raise UsageError(f"manifest missing required key {key!r}")
    if manifest["head"] not in HEAD_KINDS:
        raise UsageError(f"head must be one of {HEAD_KINDS}, got {manifest['head']!r}")
    resolved = {
        "features": manifest["features"],
        "labels": manifest.get("labels"),
        "head": manifest["head"],
        "anchors_positive": manifest.get("anchors_positive"),
        "anchors_negative": manifest.get("anchors_negative"),
        "temperature": manifest.get("temperature", DEFAULT_TEMPERATURE),
        "init_seed": manifest.get("init_seed", 0),
        "train": dataclasses.asdict(TrainConfig(**manifest.get("train", {}))),
        "loss": dataclasses.asdict(LossConfig(**manifest.get("loss", {}))),
        "mask": manifest.get("mask"),
        "eval_features": manifest.get("eval_features"),
        "eval_labels": manifest.get("eval_labels"),
        "output_dir": manifest["output_dir"],
    }
    if resolved["mask"] is not None:
        resolved["mask"] = dataclasses.asdict(MaskSpec(**resolved["mask"]))
    return resolved


def _load_anchor_bank(path, expected_classes: int, expected_dim: int) -> np.ndarray:
    bank = read_tensor_file(path).array
    if bank.shape != (expected_classes, expected_dim):
        raise ShapeError(f"{path}: anchor bank shape {bank.shape} does not match "
                         f"(classes, dim) = ({expected_classes}, {expected_dim})")
    return bank


def _build_head(resolved: dict, bundle: DatasetBundle):
    n = bundle.labels.num_classes
    d = bundle.features[0].d
    kind = resolved["head"]
    seed = resolved["init_seed"]
    tau = resolved["temperature"]
    if kind == "baseline":
        return ProjectorHead.random(n, d, seed)
    if kind == "positivecoop":
        if not resolved["anchors_positive"]:
            raise UsageError("positivecoop requires anchors_positive in the manifest")
        anchors = _load_anchor_bank(resolved["anchors_positive"], n, d)
        return make_positivecoop(anchors, d, seed, temperature=tau)
    if kind == "negativecoop":
        if not resolved["anchors_negative"]:
            raise UsageError("negativecoop requires anchors_negative in the manifest")
        anchors = _load_anchor_bank(resolved["anchors_negative"], n, d)
        return make_negativecoop(anchors, d, seed, temperature=tau)
    return make_free_dual(n, d, seed, temperature=tau)


def cmd_train(args) -> int:
    resolved = _resolve_manifest(args.manifest)
    bundle = read_bundle(resolved["features"], resolved["labels"])
    if resolved["mask"] is not None:
        bundle = bundle.with_labels(mask_labels(bundle.labels, MaskSpec(**resolved["mask"])))
    eval_bundle = None
    if resolved["eval_features"]:
        eval_bundle = read_bundle(resolved["eval_features"], resolved["eval_labels"])

    head = _build_head(resolved, bundle)
    out = Path(resolved["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    _write_config(out / "resolved_config.json", "train", resolved)

    def progress(row):
        if not args.quiet:
            parts = [f"epoch {row['epoch']}", f"loss {row['train_loss']:.6f}"]
            if "val_map" in row:
                parts.append(f"val mAP {row['val_map']:.4f}")
            print("  ".join(parts), file=sys.stderr)

    result = train_run(bundle, head, TrainConfig(**resolved["train"]),
                       LossConfig(**resolved["loss"]), eval_bundle=eval_bundle,
                       workers=args.workers, progress=progress)
    history_to_csv(result.history, out / "metrics.csv")
    save_head(result.head, out / "checkpoint")
    print(f"trained {resolved['head']} head for {len(result.history)} epochs -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    head = load_head(args.checkpoint)
    bundle = read_bundle(args.features, args.labels)
    from .train import predict_probabilities

    scores = predict_probabilities(head, bundle.features)
    m_ap = write_eval_report(args.out, bundle.class_names, scores,
                             bundle.labels.entries)
    _write_config(Path(str(args.out) + ".config.json"), "eval", {
        "checkpoint": str(args.checkpoint), "features": str(args.features),
        "labels": None if args.labels is None else str(args.labels),
        "out": str(args.out),
    })
    print(f"mAP {m_ap:.6f} -> {args.out}")
    return EXIT_OK


def cmd_export_maps(args) -> int:
    head = load_head(args.checkpoint)
    bundle = read_bundle(args.features, args.labels)
    if not 0 <= args.image_index < bundle.num_images:
        raise UsageError(f"image index {args.image_index} out of range "
                         f"(bundle has {bundle.num_images} images)")
    logits = head_forward(head, bundle.features[args.image_index])
    export_similarity_map(logits, args.class_index, args.polarity, args.out)
    _write_config(Path(str(args.out) + ".config.json"), "export-maps", {
        "checkpoint": str(args.checkpoint), "features": str(args.features),
        "image_index": args.image_index, "class_index": args.class_index,
        "polarity": args.polarity, "out": str(args.out),
    })
    print(f"wrote {args.out}.mlt and {args.out}.pgm")
    return EXIT_OK


def cmd_scan(args) -> int:
    lexicon = corpuscan.load_wordlist_file(args.lexicon) if args.lexicon else None
    nouns = corpuscan.load_wordlist_file(args.nouns) if args.nouns else None
    report = corpuscan.scan_corpus(
        args.input, lexicon=lexicon, nouns=nouns, workers=args.workers,
        fmt=args.format,
        progress=(None if args.quiet else
                  lambda p, s: print(f"scanned {p}: {s.total_texts} texts",
                                     file=sys.stderr)))
    payload = {
        **report.stats.as_dict(),
        "decode_replacements": report.decode_replacements,
        "failed_shards": report.failed_shards,
    }
    Path(args.out).write_text(json.dumps(payload, indent=2))
    _write_config(Path(str(args.out) + ".config.json"), "scan", {
        "input": [str(p) for p in args.input],
        "lexicon": args.lexicon, "nouns": args.nouns,
        "workers": args.workers, "format": args.format, "out": str(args.out),
    })
    s = report.stats
    print(f"total texts:            {s.total_texts}")
    print(f"with negative words:    {s.texts_with_negative} ({s.pct_negative()})")
    print(f"negative then noun:     {s.texts_with_negative_then_noun} "
          f"({s.pct_negative_then_noun()})")
    if report.failed_shards:
        for path, err in report.failed_shards:
            print(f"failed shard {path}: {err}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _load_bank(path) -> np.ndarray:
    bank = read_tensor_file(path).array
    if bank.ndim != 2:
        raise ShapeError(f"{path}: bank must be rank 2 (N, d), got {bank.shape}")
    return bank


def cmd_promptstats(args) -> int:
    if args.sweep:
        manifest = json.loads(Path(args.sweep).read_text())
        banks = {k: [_load_bank(p) for p in manifest[k]] for k in ("p1", "n1", "p2")}
        s_n1, s_p2 = promptlab.template_sweep_stats(
            banks["p1"], banks["n1"], banks["p2"], aggregation=args.aggregation)
        payload = {"p1_vs_n1": s_n1.as_dict(), "p1_vs_p2": s_p2.as_dict(),
                   "config": {"sweep": str(args.sweep), "aggregation": args.aggregation}}
    else:
        if not (args.a and args.b):
            raise UsageError("promptstats needs either --sweep or both --a and --b")
        stats = promptlab.pairwise_stats(_load_bank(args.a), _load_bank(args.b))
        payload = {"pairwise": stats.as_dict(),
                   "config": {"a": str(args.a), "b": str(args.b)}}
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text)
        _write_config(Path(str(args.out) + ".config.json"), "promptstats",
                      payload["config"])
    print(text)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="mlrkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic separable bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--images", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--height", type=int, default=3)
    p.add_argument("--width", type=int, default=3)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--presence", type=float, default=0.3)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mask", help="mask a full label CSV down to partial labels")
    p.add_argument("--labels", required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("train", help="train a head from a run manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (per-class AP + mAP CSV)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-maps", help="export one class's similarity map")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--image-index", type=int, required=True)
    p.add_argument("--class-index", type=int, required=True)
    p.add_argument("--polarity", choices=("positive", "negative"), default="positive")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_maps)

    p = sub.add_parser("scan", help="scan caption shards for negation statistics")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--lexicon", default=None)
    p.add_argument("--nouns", default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--format", default="txt",
                   help="txt (default), csv:col=N, or tsv:col=N")
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("promptstats", help="cosine statistics between embedding banks")
    p.add_argument("--a", default=None)
    p.add_argument("--b", default=None)
    p.add_argument("--sweep", default=None)
    p.add_argument("--aggregation", choices=(promptlab.POOLED,
                                             promptlab.PER_TEMPLATE_MEAN),
                   default=promptlab.POOLED)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_promptstats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, ShapeError, DomainError, UndefinedAPError, MlrkitError,
            OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
