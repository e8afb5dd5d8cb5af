"""Command-line front end: synth, preprocess, augment, split, train, eval,
compare, predict, serve.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures print one
machine-readable line to stderr: `error\t<code>\t<message>`.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .augment import AugmentConfig, augment_dataset
from .dataset import (
    CLASS_DIRS,
    DatasetSplit,
    LabeledItem,
    SynthConfig,
    load_dir,
    materialize,
    read_manifest,
    save_items,
    stratified_split,
    synth_generate,
    write_manifest,
)
from .errors import BadConfig, LoopscreenError
from .harness import (
    TrainConfig,
    compare,
    metrics_from_records,
    predict_items,
    prepare_dataset,
    train,
)
from .imaging import PreprocessConfig, load_image, preprocess, save_image
from .models import ARCHS, load as load_model, predict as predict_one, save as save_model
from .service import ServiceConfig, serve


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="global RNG seed")
    parser.add_argument("--deterministic", action="store_true", default=True,
                        help="force sequential, bit-reproducible execution (default on)")
    parser.add_argument("--paper-split", action="store_true",
                        help="augment before splitting, so variants of one source "
                             "image may cross splits (not leak-free)")


def _preprocess_config(args) -> PreprocessConfig:
    if getattr(args, "preprocess_config", None):
        return PreprocessConfig.load(args.preprocess_config)
    return PreprocessConfig()


def _preprocess_items(items: list[LabeledItem], cfg: PreprocessConfig) -> list[LabeledItem]:
    return [replace(item, image=preprocess(item.image, cfg)) for item in items]


def _split_from_args(args, preprocess_cfg: PreprocessConfig) -> DatasetSplit:
    if getattr(args, "manifest", None):
        records = read_manifest(args.manifest)
        split = materialize(records, args.data)
        return DatasetSplit(
            _preprocess_items(split.train, preprocess_cfg),
            _preprocess_items(split.validation, preprocess_cfg),
            _preprocess_items(split.test, preprocess_cfg),
            seed=args.seed,
            leak_free=not args.paper_split,
        )
    raw = load_dir(args.data)
    return prepare_dataset(
        raw,
        AugmentConfig(seed=args.seed),
        preprocess_cfg,
        seed=args.seed,
        leak_free=not args.paper_split,
    )


def _write_lines(path: Path, lines: list[str]) -> None:
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    cfg = SynthConfig.load(args.config) if args.config else SynthConfig(
        count_per_class=args.per_class, seed=args.seed, stroke_width=args.stroke_width,
        width=args.canvas_w, height=args.canvas_h,
    )
    items = synth_generate(cfg)
    out = Path(args.out)
    save_items(items, out)
    cfg.save(out / "synth.cfg")
    print(f"wrote {len(items)} images under {out} ({cfg.count_per_class} per class)")
    return 0


def cmd_preprocess(args) -> int:
    cfg = _preprocess_config(args)
    src, dst = Path(args.input), Path(args.out)
    if src.is_dir():
        count = 0
        for class_dir in CLASS_DIRS:
            base = src / class_dir
            if not base.is_dir():
                continue
            for path in sorted(base.rglob("*")):
                if path.suffix.lower() not in (".png", ".pgm"):
                    continue
                rel = path.relative_to(src)
                target = dst / rel
                target.parent.mkdir(parents=True, exist_ok=True)
                save_image(preprocess(load_image(path), cfg), target)
                count += 1
        print(f"preprocessed {count} images into {dst}")
    else:
        dst.parent.mkdir(parents=True, exist_ok=True)
        save_image(preprocess(load_image(src), cfg), dst)
        print(f"preprocessed {src} -> {dst}")
    return 0


def cmd_augment(args) -> int:
    items = load_dir(args.data)
    cfg = AugmentConfig(
        shear_min_deg=args.shear_min, shear_max_deg=args.shear_max, seed=args.seed
    )
    expanded = augment_dataset([(i.image, i.label) for i in items], cfg)
    out = Path(args.out)
    records = []
    for index, (image, label, provenance) in enumerate(expanded):
        source = items[index // 3]
        stem = Path(source.source_id).stem
        if provenance.kind == "shear":
            suffix = f"shear{provenance.angle:+.4f}"
        else:
            suffix = {"original": "orig", "hflip": "hflip"}[provenance.kind]
        rel = Path(source.source_id).parent / f"{stem}__{suffix}.png"
        path = out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        save_image(image, path)
        records.append(f"{source.source_id}\t{label}\t{provenance}\t-")
    _write_lines(out / "manifest.tsv", records)
    print(f"augmented {len(items)} -> {len(expanded)} images under {out}")
    return 0


def cmd_split(args) -> int:
    items = load_dir(args.data)
    if args.augment:
        cfg = AugmentConfig(seed=args.seed)
        expanded = augment_dataset([(i.image, i.label) for i in items], cfg)
        items = [
            LabeledItem(image, label, items[index // 3].source_id, provenance)
            for index, (image, label, provenance) in enumerate(expanded)
        ]
    split = stratified_split(items, seed=args.seed, leak_free=not args.paper_split)
    write_manifest(args.out, split)
    print(
        f"split {len(items)} items -> {len(split.train)}/{len(split.validation)}"
        f"/{len(split.test)} (manifest: {args.out})"
    )
    return 0


def _train_config(args) -> TrainConfig:
    if args.config:
        cfg = TrainConfig.load(args.config)
        return replace(cfg, seed=args.seed, deterministic=args.deterministic)
    return TrainConfig(
        arch=args.arch,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        max_epochs=args.max_epochs,
        early_stop_patience=args.patience,
        seed=args.seed,
        deterministic=args.deterministic,
        preprocess=_preprocess_config(args),
        augment=AugmentConfig(seed=args.seed),
    )


def cmd_train(args) -> int:
    cfg = _train_config(args)
    split = _split_from_args(args, cfg.preprocess)
    model, history = train(cfg, split)
    out_model = Path(args.out_model)
    out_model.parent.mkdir(parents=True, exist_ok=True)
    crc = save_model(model, out_model)
    _write_lines(out_model.with_suffix(".history.tsv"), history.to_lines())
    write_manifest(out_model.with_suffix(".manifest.tsv"), split)
    records = predict_items(model, split.test) if split.test else []
    if records:
        metrics = metrics_from_records(records)
        _write_lines(
            out_model.with_suffix(".test_predictions.tsv"), [r.line() for r in records]
        )
        print(metrics.text_block())
        print(metrics.record_line())
    print(f"model {out_model} crc32={crc:08x} best_epoch={history.best_epoch} "
          f"epochs={len(history.records)} wall={history.wall_time:.1f}s")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    cfg = _preprocess_config(args)
    if args.manifest:
        records_in = [r for r in read_manifest(args.manifest) if r.split == args.split]
        if not records_in:
            raise BadConfig(f"manifest has no records for split {args.split!r}")
        split = materialize(records_in, args.data)
        items = _preprocess_items(split.all_items(), cfg)
    else:
        items = _preprocess_items(load_dir(args.data), cfg)
    records = predict_items(model, items)
    metrics = metrics_from_records(records)
    if args.log:
        _write_lines(Path(args.log), [r.line() for r in records])
    else:
        for r in records:
            print(r.line())
    print(metrics.text_block())
    print(metrics.record_line())
    return 0


def cmd_compare(args) -> int:
    archs = args.archs.split(",")
    for arch in archs:
        if arch not in ARCHS:
            raise BadConfig(f"unknown architecture {arch!r}")
    cfg = _train_config(args)
    split = _split_from_args(args, cfg.preprocess)
    rows = compare(archs, cfg, split)
    print("arch\ttest_accuracy\tbest_epoch\tepochs")
    for row in rows:
        print(
            f"{row.arch}\t{row.metrics.accuracy!r}\t{row.history.best_epoch}"
            f"\t{len(row.history.records)}"
        )
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for row in rows:
            _write_lines(out / f"{row.arch}.history.tsv", row.history.to_lines())
            _write_lines(out / f"{row.arch}.metrics.txt",
                         [row.metrics.text_block(), row.metrics.record_line()])
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    cfg = _preprocess_config(args)
    image = preprocess(load_image(args.image), cfg)
    result = predict_one(model, image)
    print(f"probability_patient={result.p_patient!r}")
    print(f"probability_control={result.p_control!r}")
    print(f"label={result.label}")
    return 0


def cmd_serve(args) -> int:
    cfg = ServiceConfig(
        host=args.host,
        port=args.port,
        model_path=args.model,
        max_upload_bytes=args.max_upload,
        preprocess=_preprocess_config(args),
        allow_origin=args.allow_origin,
    )
    serve(cfg)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loopscreen",
        description="Loop-trace handwriting screening: preprocessing, training, inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic loop dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=120)
    p.add_argument("--stroke-width", type=float, default=2.0)
    p.add_argument("--canvas-w", type=int, default=128)
    p.add_argument("--canvas-h", type=int, default=128)
    p.add_argument("--config", help="SynthConfig key-value file (overrides flags)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="crop/center/pad/LoG-filter images")
    _add_common(p)
    p.add_argument("--in", dest="input", required=True, help="image file or dataset dir")
    p.add_argument("--out", required=True)
    p.add_argument("--preprocess-config")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("augment", help="write original+shear+hflip variants")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--shear-min", type=float, default=-15.0)
    p.add_argument("--shear-max", type=float, default=15.0)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("split", help="write a train/validation/test manifest")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--augment", action="store_true",
                   help="expand 3x with augmentation before splitting")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one architecture end to end")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out-model", default="model.sczm")
    p.add_argument("--arch", default="custom_cnn", choices=ARCHS)
    p.add_argument("--manifest", help="reuse an existing split manifest")
    p.add_argument("--config", help="TrainConfig key-value file")
    p.add_argument("--preprocess-config")
    p.add_argument("--learning-rate", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--max-epochs", type=int, default=60)
    p.add_argument("--patience", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on labeled images")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest")
    p.add_argument("--split", default="test", help="manifest split to evaluate")
    p.add_argument("--log", help="write the per-item prediction log here")
    p.add_argument("--preprocess-config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train and rank several architectures")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--archs", default=",".join(ARCHS))
    p.add_argument("--manifest")
    p.add_argument("--out-dir")
    p.add_argument("--config")
    p.add_argument("--preprocess-config")
    p.add_argument("--arch", default="custom_cnn", help=argparse.SUPPRESS)
    p.add_argument("--learning-rate", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--max-epochs", type=int, default=60)
    p.add_argument("--patience", type=int, default=10)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("predict", help="score one handwriting image")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--preprocess-config")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("serve", help="run the HTTP screening service")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8571)
    p.add_argument("--max-upload", type=int, default=5 * 1024 * 1024)
    p.add_argument("--allow-origin", default="*")
    p.add_argument("--preprocess-config")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LoopscreenError as exc:
        print(f"error\t{exc.code}\t{exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error\tio_error\t{exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
