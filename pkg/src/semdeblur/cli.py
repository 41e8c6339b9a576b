"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error. Every randomized
stage funnels through the --seed flag of its subcommand.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import blur, facegen
from .dataset import load_image, load_labels, load_manifest, save_image, synthesize_dataset
from .errors import SemdeblurError
from .evaluate import evaluate_deblurring, evaluate_parsing, identity_report, \
    plot_report, recognition_report, write_fscore_csv, write_report_csv, write_report_json
from .losses import LossWeights
from .metrics import PoolEmbedder
from .networks import GeneratorConfig, DiscriminatorConfig, ParsingModelConfig, \
    build_discriminator, build_generator, build_parsing_model, parse_face
from .training import DeblurTrainState, TrainConfig, direct_schedule, \
    incremental_schedule, load_generator, load_parsing_model, load_trainer_state, \
    make_optimizer, train_deblurring, train_parsing
from .semantics import encode_labels, uniform_map


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _parse_sizes(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok]
    except ValueError as exc:
        raise _UsageError(f"bad --sizes value {text!r}") from exc


def _echo_config(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "effective_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


def _cmd_synth_kernels(args) -> int:
    bank = blur.generate_kernel_bank(args.count, _parse_sizes(args.sizes), args.seed,
                                     split=args.split, num_steps=args.num_steps)
    blur.write_kernel_bank(bank, args.out)
    if args.dump_png:
        blur.dump_kernel_pngs(bank, args.dump_png)
    print(f"wrote {len(bank)} kernels to {args.out}")
    return 0


def _cmd_build_dataset(args) -> int:
    bank = blur.read_kernel_bank(args.bank)
    cfg = blur.DegradationConfig(noise_sigma=args.noise_sigma, rng_seed=args.seed)
    manifest = synthesize_dataset(
        args.clear, args.labels, bank, cfg, args.out,
        pairs_per_image=args.pairs_per_image, materialize=args.materialize,
        landmarks_dir=args.landmarks, seed=args.seed)
    _echo_config(Path(args.out), {
        "command": "build-dataset", "clear": args.clear, "labels": args.labels,
        "bank": args.bank, "noise_sigma": args.noise_sigma, "seed": args.seed,
        "pairs_per_image": args.pairs_per_image, "materialize": args.materialize})
    print(f"wrote manifest with {len(manifest)} entries to {args.out}/manifest.jsonl")
    return 0


def _cmd_demo_faces(args) -> int:
    dirs = facegen.write_demo_dataset(args.out, args.identities, args.per_identity,
                                      args.seed)
    n = args.identities * args.per_identity
    print(f"wrote {n} demo faces under {dirs['clear'].parent}")
    return 0


def _train_config_from_args(args, defaults: TrainConfig) -> TrainConfig:
    base = defaults.to_dict()
    if getattr(args, "config", None):
        base.update(json.loads(Path(args.config).read_text()))
    overrides = {
        "total_iters": args.iters, "batch_size": args.batch, "seed": args.seed,
        "augment": args.augment or base.get("augment", False),
        "log_every": args.log_every, "checkpoint_every": args.checkpoint_every,
    }
    for k, v in overrides.items():
        if v is not None:
            base[k] = v
    if isinstance(base["weights"], LossWeights):
        base["weights"] = dataclasses.asdict(base["weights"])
    for flag, key in (("lambda_s", "lambda_s"), ("lambda_p", "lambda_p"),
                      ("lambda_adv", "lambda_adv")):
        v = getattr(args, flag, None)
        if v is not None:
            base["weights"][key] = v
    if getattr(args, "lr", None) is not None:
        base["lr_parsing"] = args.lr
        base["lr_deblur"] = args.lr
    return TrainConfig.from_dict(base)


def _cmd_train_parse(args) -> int:
    manifest = load_manifest(args.data)
    cfg = _train_config_from_args(args, TrainConfig(total_iters=60000))
    if args.resume:
        model = load_parsing_model(args.resume)
    else:
        model = build_parsing_model(ParsingModelConfig(), seed=cfg.seed)
    out_dir = Path(args.out)
    _echo_config(out_dir, {"command": "train-parse", "inputs": args.inputs,
                           "data": args.data, "config": cfg.to_dict()})
    result = train_parsing(model, manifest, cfg, out_dir=out_dir, inputs=args.inputs,
                           early_stop_patience=args.early_stop_patience)
    print(f"parsing training stopped at iteration {result['stop_iter']}; "
          f"checkpoint at {out_dir / 'parsing.ckpt'}")
    return 0


def _cmd_eval_parse(args) -> int:
    manifest = load_manifest(args.data)
    pre = load_parsing_model(args.pretrained)
    columns = {
        "clear_pretrained": evaluate_parsing(pre, manifest, inputs="clear"),
        "blurred_pretrained": evaluate_parsing(pre, manifest, inputs="blurred"),
    }
    if args.finetuned:
        fine = load_parsing_model(args.finetuned)
        columns["blurred_finetuned"] = evaluate_parsing(fine, manifest, inputs="blurred")
    write_fscore_csv(columns, args.report)
    print(f"wrote F-score table to {args.report}")
    return 0


def _cmd_train_deblur(args) -> int:
    manifest = load_manifest(args.data)
    out_dir = Path(args.out)
    if args.resume:
        state = load_trainer_state(args.resume)
        if args.iters is not None:
            state.cfg.total_iters = args.iters
    else:
        cfg = _train_config_from_args(args, TrainConfig(total_iters=1000))
        gen = build_generator(GeneratorConfig(), seed=cfg.seed)
        parser_model = None
        if args.semantics == "parser":
            if not args.parse_ckpt:
                raise _UsageError("--semantics parser requires --parse-ckpt")
            parser_model = load_parsing_model(args.parse_ckpt)
            for p in parser_model.parameters():
                p.requires_grad_(False)
            parser_model.eval()
        disc = None
        opt_d = None
        if cfg.weights.lambda_adv > 0:
            disc = build_discriminator(DiscriminatorConfig(), seed=cfg.seed + 1)
            opt_d = make_optimizer(disc.parameters(), cfg.lr_deblur)
        sizes = sorted({k.size for k in manifest.bank.kernels})
        schedule = direct_schedule(sizes) if args.no_incremental else \
            incremental_schedule(sizes, period_K=args.period_k)
        state = DeblurTrainState(
            gen=gen, disc=disc, parser=parser_model,
            opt_g=make_optimizer(gen.parameters(), cfg.lr_deblur), opt_d=opt_d,
            schedule=schedule, cfg=cfg, semantic_source=args.semantics)
    feat = None
    if state.cfg.weights.lambda_p > 0:
        from .losses import RandomConvExtractor
        feat = RandomConvExtractor(seed=state.cfg.seed)
    _echo_config(out_dir, {
        "command": "train-deblur", "data": args.data,
        "semantics": state.semantic_source, "config": state.cfg.to_dict(),
        "schedule": {"size_groups": state.schedule.size_groups,
                     "period_K": state.schedule.period_K}})
    train_deblurring(state, manifest, out_dir=out_dir, feature_extractor=feat)
    print(f"deblurring training reached iteration {state.iteration}; "
          f"checkpoints under {out_dir}")
    return 0


def _load_eval_models(args):
    gen = load_generator(args.gen_ckpt)
    parser_model = None
    if getattr(args, "parse_ckpt", None):
        parser_model = load_parsing_model(args.parse_ckpt)
        source = "parser"
    else:
        source = args.semantics
        if source == "parser":
            raise _UsageError("--semantics parser requires --parse-ckpt")
    return gen, parser_model, source


def _cmd_evaluate(args) -> int:
    manifest = load_manifest(args.data)
    gen, parser_model, source = _load_eval_models(args)
    report = evaluate_deblurring(gen, parser_model, manifest, semantic_source=source,
                                 metadata={"checkpoint": args.gen_ckpt,
                                           "manifest": args.data})
    write_report_csv(report, args.out_csv)
    print(f"wrote {len(report.per_image)} rows to {args.out_csv}")
    if args.out_json:
        write_report_json(report, args.out_json)
    if args.json:
        agg = {k: (min(v, 60.0) if k == "mean_psnr" else v)
               for k, v in report.aggregates.items() if k != "per_size"}
        print(json.dumps(agg, sort_keys=True))
    return 0


def _cmd_deblur(args) -> int:
    img = load_image(args.infile)
    if img.shape[:2] != (128, 128):
        raise SemdeblurError(
            f"input must be an aligned 128x128 image, got {img.shape[1]}x{img.shape[0]}")
    gen = load_generator(args.gen_ckpt)
    if args.parse_ckpt:
        parser_model = load_parsing_model(args.parse_ckpt)
        sem = parse_face(parser_model, img)
    elif args.semantics:
        sem = encode_labels(load_labels(args.semantics))
    else:
        sem = uniform_map(*img.shape[:2])
    from .evaluate import run_generator
    out = run_generator(gen, img, sem)
    save_image(args.out, np.clip(out, 0.0, 1.0))
    print(f"wrote {args.out}")
    return 0


def _cmd_report(args) -> int:
    manifest = load_manifest(args.data)
    gen, parser_model, source = _load_eval_models(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = evaluate_deblurring(gen, parser_model, manifest, semantic_source=source,
                                 metadata={"checkpoint": args.gen_ckpt,
                                           "manifest": args.data})
    write_report_csv(report, out_dir / "report.csv")
    write_report_json(report, out_dir / "report.json")
    identity = None
    recognition = None
    embedder = PoolEmbedder()
    identity = identity_report(gen, parser_model, manifest, embedder,
                               semantic_source=source)
    if all(e.identity is not None for e in manifest.entries):
        recognition = recognition_report(gen, parser_model, manifest, embedder,
                                         semantic_source=source)
        (out_dir / "recognition.json").write_text(
            json.dumps(recognition, indent=2, sort_keys=True) + "\n")
    if args.plot:
        plot_report(report, out_dir, identity=identity)
    if args.json:
        print(json.dumps({"aggregates": report.aggregates, "identity": identity,
                          "recognition": recognition}, sort_keys=True, default=str))
    print(f"report written under {out_dir}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="semdeblur",
                     description="Semantic-prior face deblurring toolkit")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth-kernels", help="synthesize a motion-blur kernel bank")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--sizes", default="13,15,17,19,21,23,25,27",
                   help="comma-separated odd sizes in 13..27")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.add_argument("--num-steps", type=int, default=512)
    p.add_argument("--dump-png", default=None, metavar="DIR",
                   help="also write each kernel as an 8-bit grayscale PNG")
    p.set_defaults(fn=_cmd_synth_kernels)

    p = sub.add_parser("demo-faces", help="write a procedural demo face dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--identities", type=int, default=4)
    p.add_argument("--per-identity", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_demo_faces)

    p = sub.add_parser("build-dataset", help="synthesize a blurred/clear dataset")
    p.add_argument("--clear", required=True, metavar="DIR")
    p.add_argument("--labels", default=None, metavar="DIR")
    p.add_argument("--landmarks", default=None, metavar="DIR")
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pairs-per-image", type=int, default=None)
    p.add_argument("--materialize", action="store_true",
                   help="write blurred PNGs instead of serving them lazily")
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_build_dataset)

    def add_train_flags(p, default_lr):
        p.add_argument("--iters", type=int, default=None)
        p.add_argument("--batch", type=int, default=None)
        p.add_argument("--lr", type=float, default=None,
                       help=f"override learning rate (default {default_lr})")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--augment", action="store_true")
        p.add_argument("--log-every", type=int, default=None)
        p.add_argument("--checkpoint-every", type=int, default=None)
        p.add_argument("--config", default=None, help="JSON training config file")

    p = sub.add_parser("train-parse", help="train the face parsing network")
    p.add_argument("--data", required=True, metavar="MANIFEST")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--inputs", choices=["clear", "blurred"], default="clear",
                   help="blurred selects the fine-tuning pass")
    p.add_argument("--resume", default=None, metavar="CKPT")
    p.add_argument("--early-stop-patience", type=int, default=5,
                   help="evals without improvement before stopping; 0 disables")
    add_train_flags(p, "5e-6")
    p.set_defaults(fn=_cmd_train_parse)

    p = sub.add_parser("eval-parse", help="per-class F-score table")
    p.add_argument("--data", required=True, metavar="MANIFEST")
    p.add_argument("--pretrained", required=True, metavar="CKPT")
    p.add_argument("--finetuned", default=None, metavar="CKPT")
    p.add_argument("--report", required=True, metavar="CSV")
    p.set_defaults(fn=_cmd_eval_parse)

    p = sub.add_parser("train-deblur", help="train the two-scale deblurring network")
    p.add_argument("--data", required=True, metavar="MANIFEST")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--parse-ckpt", default=None, metavar="CKPT")
    p.add_argument("--resume", default=None, metavar="CKPT")
    p.add_argument("--semantics", choices=["parser", "labels", "uniform"],
                   default="parser")
    p.add_argument("--no-incremental", action="store_true",
                   help="train on all kernel sizes from the start")
    p.add_argument("--period-k", type=int, default=30000,
                   help="iterations per curriculum step")
    p.add_argument("--lambda-s", type=float, default=None)
    p.add_argument("--lambda-p", type=float, default=None)
    p.add_argument("--lambda-adv", type=float, default=None)
    add_train_flags(p, "4e-5")
    p.set_defaults(fn=_cmd_train_deblur)

    p = sub.add_parser("evaluate", help="PSNR/SSIM report over a test manifest")
    p.add_argument("--data", required=True, metavar="MANIFEST")
    p.add_argument("--gen-ckpt", required=True)
    p.add_argument("--parse-ckpt", default=None)
    p.add_argument("--semantics", choices=["parser", "labels", "uniform"],
                   default="parser")
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-json", default=None)
    p.add_argument("--json", action="store_true", help="print aggregates as JSON")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("deblur", help="restore a single 128x128 image")
    p.add_argument("--in", dest="infile", required=True, metavar="PNG")
    p.add_argument("--out", required=True, metavar="PNG")
    p.add_argument("--gen-ckpt", required=True)
    p.add_argument("--parse-ckpt", default=None)
    p.add_argument("--semantics", default=None, metavar="LABELS_PNG",
                   help="label image to use instead of a parser")
    p.set_defaults(fn=_cmd_deblur)

    p = sub.add_parser("report", help="full evaluation report with plots")
    p.add_argument("--data", required=True, metavar="MANIFEST")
    p.add_argument("--gen-ckpt", required=True)
    p.add_argument("--parse-ckpt", default=None)
    p.add_argument("--semantics", choices=["parser", "labels", "uniform"],
                   default="parser")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--plot", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "fn", None):
            parser.print_help()
            return 1
        return args.fn(args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SemdeblurError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
