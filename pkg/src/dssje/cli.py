"""Command-line experiment runner: ``embed <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, SyntheticConfig, default_output_root, parse_count
from .data import ClassSplitDataset, load_dataset, save_dataset
from .encoders import FAMILIES, EncoderSpec
from .errors import ConfigError, DssjeError
from .evaluation import caption_sweep, evaluate, summarize_sweep, sweep_to_csv
from .gradcheck import encoder_gradcheck
from .model import OBJECTIVES, JointModel
from .synthetic import generate_synthetic
from .train import TrainingConfig, load_checkpoint, save_checkpoint, train

log = logging.getLogger("dssje")


def _dataset(cfg: ExperimentConfig) -> ClassSplitDataset:
    if cfg.dataset.path:
        return load_dataset(cfg.dataset.path)
    return generate_synthetic(**vars(cfg.dataset.synthetic))


def _out_dir(args, cfg: ExperimentConfig | None = None) -> Path:
    if getattr(args, "out", None):
        out = Path(args.out)
    elif cfg is not None and cfg.output_dir:
        out = Path(cfg.output_dir)
    else:
        out = default_output_root() / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(args) -> ExperimentConfig:
    raw = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config}: invalid JSON ({e})") from None
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
        for section in ("encoder", "training", "evaluation"):
            raw.get(section, {}).pop("seed", None)
        if raw.get("dataset", {}).get("synthetic"):
            raw["dataset"]["synthetic"].pop("seed", None)
    if getattr(args, "data", None):
        raw["dataset"] = {"path": args.data}
    enc = raw.setdefault("encoder", {})
    for flag, key in (("encoder", "family"), ("level", "level"), ("embed_dim", "embed_dim"), ("cell", "rnn_cell")):
        if getattr(args, flag, None) is not None:
            enc[key] = getattr(args, flag)
    tr = raw.setdefault("training", {})
    for flag, key in (("objective", "objective"), ("epochs", "epochs"), ("lr", "learning_rate"),
                      ("batch_classes", "minibatch_classes"), ("image_mode", "image_mode")):
        if getattr(args, flag, None) is not None:
            tr[key] = getattr(args, flag)
    return ExperimentConfig.from_dict(raw)


def _write_loss_curve(path: Path, curve) -> None:
    lines = ["epoch,mean_loss"] + [f"{e},{loss!r}" for e, loss in curve]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _train(cfg: ExperimentConfig, ds: ClassSplitDataset, out: Path) -> JointModel:
    model = JointModel.build(cfg.encoder, ds, image_mode=cfg.training.image_mode)
    result = train(ds, model, cfg.training, checkpoint_dir=out)
    _write_loss_curve(out / "loss_curve.csv", result.loss_curve)
    save_checkpoint(out / "model.npz", model, result.state, cfg.training)
    return model


def cmd_run(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    cfg.save(out / "config.json")
    ds = _dataset(cfg)
    model = _train(cfg, ds, out)
    ev = cfg.evaluation
    report = evaluate(model, ds, ev.captions_per_class, ev.seed, ev.split,
                      config={"objective": cfg.training.objective})
    report.save(out)
    print(report.to_text(), end="")
    if ev.sweep_axis == "test":
        rows = caption_sweep(ds, "test", ev.sweep_counts, ev.sweep_repeats, model=model, split=ev.split)
        (out / "sweep.csv").write_text(sweep_to_csv(rows), encoding="utf-8")
    return 0


def cmd_gen_data(args) -> int:
    synth = SyntheticConfig(n_classes=args.classes, n_train_classes=args.train_classes,
                            n_val_classes=args.val_classes, images_per_class=args.images,
                            captions_per_image=args.captions, n_attributes=args.attributes,
                            feature_dim=args.feature_dim, noise_sigma=args.noise, seed=args.seed,
                            phrase_dropout=not args.no_dropout, word_vector_dim=args.word_vector_dim)
    ds = generate_synthetic(**vars(synth))
    out = _out_dir(args)
    save_dataset(ds, out)
    print(f"wrote {len(ds.images)} images, {len(ds.captions)} captions to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    cfg.save(out / "config.json")
    _train(cfg, _dataset(cfg), out)
    print(f"checkpoint written to {out / 'model.npz'}")
    return 0


def cmd_eval(args) -> int:
    model, _, meta = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    count = parse_count(args.captions)
    objective = (meta.get("training") or {}).get("objective")
    report = evaluate(model, ds, count, args.seed, args.split, config={"objective": objective})
    out = _out_dir(args)
    report.save(out)
    print(report.to_text(), end="")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    cfg.save(out / "config.json")
    ds = _dataset(cfg)
    counts = [parse_count(c) for c in args.counts.split(",")] if args.counts else cfg.evaluation.sweep_counts
    repeats = args.repeats if args.repeats is not None else cfg.evaluation.sweep_repeats
    if args.axis == "test":
        if args.checkpoint:
            model = load_checkpoint(args.checkpoint)[0]
        else:
            model = _train(cfg, ds, out)
        rows = caption_sweep(ds, "test", counts, repeats, model=model, split=cfg.evaluation.split)
    else:
        def fit(subset, repeat):
            spec = EncoderSpec.from_dict({**cfg.encoder.to_dict(), "seed": cfg.encoder.seed + repeat})
            tcfg = TrainingConfig.from_dict({**cfg.training.to_dict(), "seed": cfg.training.seed + repeat})
            model = JointModel.build(spec, subset, image_mode=tcfg.image_mode)
            train(subset, model, tcfg)
            return model

        rows = caption_sweep(ds, "train", counts, repeats, fit=fit, split=cfg.evaluation.split)
    (out / "sweep.csv").write_text(sweep_to_csv(rows), encoding="utf-8")
    for count, s in summarize_sweep(rows).items():
        print(f"{args.axis} {count!s:>5}  top1 {s['top1_mean']:6.2f} +- {s['top1_std']:5.2f}"
              f"  ap50 {s['ap50_mean']:6.2f} +- {s['ap50_std']:5.2f}")
    return 0


def cmd_gradcheck(args) -> int:
    worst = 0.0
    for seed in range(args.seeds):
        for objective in (None, "DS-SJE"):
            r = encoder_gradcheck(args.encoder, args.level, args.cell, seed=seed, n_coords=args.coords,
                                  objective=objective)
            worst = max(worst, r.max_rel_error)
    print(f"{args.encoder}/{args.level}/{args.cell}: max relative error {worst:.3e} "
          f"over {args.seeds} seeds x {args.coords} coordinates")
    return 0 if worst < args.tol else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="embed", description="Joint image/text embedding experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def experiment_flags(sp):
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--data", help="dataset directory (overrides the config)")
        sp.add_argument("--encoder", choices=FAMILIES)
        sp.add_argument("--level", choices=["word", "char"])
        sp.add_argument("--cell", choices=["vanilla", "lstm"])
        sp.add_argument("--embed-dim", dest="embed_dim", type=int)
        sp.add_argument("--objective", choices=OBJECTIVES)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--batch-classes", dest="batch_classes", type=int)
        sp.add_argument("--image-mode", dest="image_mode", choices=["identity", "linear-projection"])

    sp = sub.add_parser("run", help="generate/load data, train, evaluate, write artifacts")
    experiment_flags(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("gen-data", help="write a synthetic dataset directory")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--classes", type=int, default=30)
    sp.add_argument("--train-classes", dest="train_classes", type=int, default=None)
    sp.add_argument("--val-classes", dest="val_classes", type=int, default=0)
    sp.add_argument("--images", type=int, default=50)
    sp.add_argument("--captions", type=int, default=10)
    sp.add_argument("--attributes", type=int, default=12)
    sp.add_argument("--feature-dim", dest="feature_dim", type=int, default=64)
    sp.add_argument("--noise", type=float, default=0.5)
    sp.add_argument("--word-vector-dim", dest="word_vector_dim", type=int, default=16)
    sp.add_argument("--no-dropout", dest="no_dropout", action="store_true")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train a model and write a checkpoint")
    experiment_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="zero-shot evaluation of a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--captions", default="all", help="captions per test class (integer or 'all')")
    sp.add_argument("--split", default="test", choices=["train", "val", "test"])
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="caption-count sweep over the train or test axis")
    experiment_flags(sp)
    sp.add_argument("--axis", choices=["train", "test"], default="test")
    sp.add_argument("--counts", help="comma-separated counts, e.g. 1,2,4,all")
    sp.add_argument("--repeats", type=int)
    sp.add_argument("--checkpoint", help="reuse a trained model (test axis)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient check of an encoder family")
    sp.add_argument("--encoder", choices=FAMILIES, required=True)
    sp.add_argument("--level", choices=["word", "char"], default="word")
    sp.add_argument("--cell", choices=["vanilla", "lstm"], default="vanilla")
    sp.add_argument("--seeds", type=int, default=3)
    sp.add_argument("--coords", type=int, default=50)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "gen-data" and args.train_classes is None:
        args.train_classes = max(1, (2 * args.classes) // 3)
    try:
        return args.func(args)
    except (DssjeError, OSError) as e:
        print(f"embed: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
