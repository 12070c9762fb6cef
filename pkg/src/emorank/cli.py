"""Command-line interface.

Subcommands: gen-toy, train, eval, calib, synth, compound-eval. Exit codes:
0 success, 1 usage error (bad flags, bad config keys/values), 2 data or
format error (missing/malformed files, incompatible shapes), 3 numeric
failure. Diagnostics go to stderr; stdout carries only data summaries.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields as dc_fields

from emorank import calibration, trainer
from emorank import model as mdl
from emorank.augment import blend_horizontal
from emorank.calibration import BinningMode
from emorank.dataio import (SPLIT_TAGS, DatasetManifest, LabeledSample,
                            ToyGenConfig, generate_compound_set,
                            generate_toy_dataset, load_dataset, load_image,
                            load_model, read_predictions, save_image,
                            samples_for_split, write_dataset,
                            write_predictions)
from emorank.errors import (DataFormatError, InvalidInputError, NumericError)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage problems; the contract wants 1."""

    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _err(message: str) -> None:
    print(f"error: {message}", file=sys.stderr)


def build_parser() -> _Parser:
    parser = _Parser(prog="emorank", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("gen-toy", help="generate the synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=700)
    p.add_argument("--n-eval", type=int, default=300)
    p.add_argument("--n-fr", type=int, default=700)
    p.add_argument("--n-compound", type=int, default=20,
                   help="samples per compound class pair")
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--imbalance", type=float, default=1.0,
                   help="per-class count decay rho in (0, 1]")
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--config", help="config file of `key = value` lines")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a split and report calibration")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="fer-eval")
    p.add_argument("--bins", type=int, default=15)
    p.add_argument("--out", required=True, help="reliability report CSV")
    p.add_argument("--pred-out",
                   help="predictions CSV (default: <out>.predictions.csv)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calib", help="reliability report from a predictions CSV")
    p.add_argument("--pred", required=True)
    p.add_argument("--bins", type=int, default=15)
    p.add_argument("--mode", choices=["width", "mass"], default="width")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calib)

    p = sub.add_parser("synth", help="blend two images into one sample")
    p.add_argument("--a", required=True, help="upper-half source PGM")
    p.add_argument("--b", required=True, help="lower-half source PGM")
    p.add_argument("--label-a", type=int, required=True)
    p.add_argument("--label-b", type=int, required=True)
    p.add_argument("--classes", type=int, default=7)
    p.add_argument("--out", required=True, help="output PGM")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("compound-eval",
                       help="top-2 match evaluation on the compound split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="heatmap CSV")
    p.set_defaults(func=cmd_compound_eval)
    return parser


def cmd_gen_toy(args) -> int:
    config = ToyGenConfig(n_train=args.n_train, n_eval=args.n_eval,
                          n_fr=args.n_fr, noise_sigma=args.sigma,
                          imbalance_rho=args.imbalance, seed=args.seed)
    manifest, images = generate_toy_dataset(config)
    compound, compound_images = generate_compound_set(
        config, n_per_pair=args.n_compound)
    merged = DatasetManifest(manifest.class_names,
                             manifest.entries + compound.entries)
    images.update(compound_images)
    write_dataset(args.out, merged, images)
    print(f"classes={merged.class_count} train={args.n_train} "
          f"fr={args.n_fr} compound={len(compound.entries)}")
    return 0


_BOOL_TEXT = {True: "true", False: "false"}


def _dump_resolved_config(path: str, config: trainer.TrainConfig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for field in dc_fields(trainer.TrainConfig):
            value = getattr(config, field.name)
            if isinstance(value, bool):
                text = _BOOL_TEXT[value]
            else:
                text = repr(value) if isinstance(value, float) else str(value)
            f.write(f"{field.name} = {text}\n")


def cmd_train(args) -> int:
    pairs: dict[str, str] = {}
    if args.config:
        pairs = trainer.read_config_pairs(args.config)
    for item in args.set:
        if "=" not in item:
            _err(f"--set expects KEY=VALUE, got {item!r}")
            return 1
        key, _, value = item.partition("=")
        pairs[key.strip()] = value.strip()
    config = trainer.config_from_pairs(pairs)
    os.makedirs(args.out, exist_ok=True)
    _dump_resolved_config(os.path.join(args.out, "config.resolved.txt"), config)
    result = trainer.train(config, args.data, args.out)
    print(f"epochs={config.epochs} out={args.out}")
    if result.state.log:
        last = result.state.log[-1]
        print(f"final eval_acc={last.eval_acc:.4f} eval_ece={last.eval_ece:.4f}")
    return 0


def cmd_eval(args) -> int:
    if args.bins < 1:
        _err(f"--bins must be >= 1, got {args.bins}")
        return 1
    if args.split not in SPLIT_TAGS:
        _err(f"unknown split {args.split!r}")
        return 1
    model = mdl.model_from_file(load_model(args.model))
    manifest, images = load_dataset(args.data)
    samples = samples_for_split(manifest, images, args.split)
    if not samples:
        _err(f"split {args.split!r} is empty in {args.data}")
        return 2
    try:
        rows = trainer.predict_batch(model, samples)
        report = calibration.reliability_report(rows, args.bins,
                                                BinningMode.EQUAL_WIDTH)
    except InvalidInputError as exc:
        _err(str(exc))
        return 2
    pred_path = args.pred_out or os.path.splitext(args.out)[0] + ".predictions.csv"
    write_predictions(pred_path, rows)
    calibration.write_report_csv(args.out, report)
    print(f"acc={report.acc:.4f} ece={report.ece:.4f} "
          f"aece={report.aece:.4f} mce={report.mce:.4f}")
    return 0


def cmd_calib(args) -> int:
    if args.bins < 1:
        _err(f"--bins must be >= 1, got {args.bins}")
        return 1
    rows = read_predictions(args.pred)
    for r in rows:
        if r.label is None:
            _err(f"row {r.id!r} has no true label; cannot calibrate")
            return 2
    report = calibration.reliability_report(rows, args.bins,
                                            BinningMode.parse(args.mode))
    calibration.write_report_csv(args.out, report)
    print(f"acc={report.acc:.4f} ece={report.ece:.4f} "
          f"aece={report.aece:.4f} mce={report.mce:.4f}")
    return 0


def cmd_synth(args) -> int:
    if args.label_a == args.label_b:
        _err(f"labels must differ, both are {args.label_a}")
        return 1
    if not (0 <= args.label_a < args.classes
            and 0 <= args.label_b < args.classes):
        _err(f"labels ({args.label_a},{args.label_b}) out of range "
             f"for {args.classes} classes")
        return 1
    img_a = load_image(args.a)
    img_b = load_image(args.b)
    if (img_a.height, img_a.width) != (img_b.height, img_b.width):
        _err(f"shape mismatch: {img_a.height}x{img_a.width} vs "
             f"{img_b.height}x{img_b.width}")
        return 2
    record = blend_horizontal(LabeledSample("a", img_a, args.label_a),
                              LabeledSample("b", img_b, args.label_b),
                              args.classes)
    save_image(args.out, record.image)
    print("y = " + ",".join(f"{v:.9f}" for v in record.soft_label))
    return 0


def cmd_compound_eval(args) -> int:
    model = mdl.model_from_file(load_model(args.model))
    manifest, images = load_dataset(args.data)
    entries = manifest.split_entries("compound")
    if not entries:
        _err(f"no compound split in {args.data}")
        return 2
    samples = samples_for_split(manifest, images, "compound")
    try:
        probs = mdl.predict_probs(model, [s.image for s in samples])
    except InvalidInputError as exc:
        _err(str(exc))
        return 2
    pairs = [(e.c1, e.c2) for e in entries]
    result = calibration.compound_top2_eval([p.values for p in probs], pairs)
    calibration.write_heatmap_csv(args.out, result)
    for (c1, c2), n, rate in zip(result.pair_order, result.counts,
                                 result.match_rates):
        print(f"pair={c1}+{c2} n={n} match_rate={rate:.4f}")
    print(f"top2_match={result.overall_rate:.4f}")
    return 0


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except InvalidInputError as exc:
        _err(str(exc))
        return 1
    except DataFormatError as exc:
        _err(str(exc))
        return 2
    except NumericError as exc:
        _err(str(exc))
        return 3
    except OSError as exc:
        _err(str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(run())
