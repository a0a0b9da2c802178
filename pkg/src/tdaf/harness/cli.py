"""Command-line entry point.

Every subcommand ends by printing one ``key=value`` summary line on stdout.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config


def _summary(**fields) -> None:
    parts = []
    for k, v in fields.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        parts.append(f"{k}={v}")
    print(" ".join(parts))


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["train_seed"] = args.seed
    if getattr(args, "out", None):
        updates["paths_out"] = args.out
    return cfg.replace(**updates) if updates else cfg


def cmd_train(args) -> int:
    from .train import train

    cfg = _config(args)
    res = train(cfg, cfg.paths_out)
    last = res.history[-1]
    _summary(cmd="train", steps=res.steps, final_loss=res.step_losses[-1], train_acc=last["train_acc"],
             test_acc=last["test_acc"], best_test_acc=res.best_test_acc, best_epoch=res.best_epoch, out=cfg.paths_out)
    return 0


def cmd_eval(args) -> int:
    from .train import evaluate_checkpoint, load_data

    cfg = _config(args)
    train_ds, test_ds = load_data(cfg)
    ds = test_ds if args.split == "test" else train_ds
    acc, loss = evaluate_checkpoint(cfg, args.checkpoint, ds)
    _summary(cmd="eval", split=args.split, n=len(ds), accuracy=repr(acc), loss=loss)
    return 0


def cmd_gradcheck(args) -> int:
    from .verify import gradcheck_suite

    results = gradcheck_suite(args.seed or 0)
    failed = 0
    for name, rep in results:
        if args.verbose or not rep.passed:
            print(f"# {name}")
            for line in rep.lines():
                print("  " + line)
        failed += not rep.passed
    worst = max(r.max_rel_error for _, r in results)
    _summary(cmd="gradcheck", blocks=len(results), failed=failed, max_rel_error=worst)
    return 1 if failed else 0


def cmd_params(args) -> int:
    from .audit import audit

    cfg = _config(args)
    a = audit(cfg)
    _summary(cmd="params", total=a.total, backbone=a.backbone, attention=a.attention, head=a.head,
             baseline_total=a.baseline_total, overhead_pct=a.overhead_pct, formula_total=a.formula_total,
             consistent=str(a.consistent).lower())
    return 0 if a.consistent else 1


def cmd_export_attn(args) -> int:
    from .attention import attention_maps, export_attention
    from .plots import plot_attention_pyramid
    from .train import build_model, load_data, load_model

    cfg = _config(args)
    if cfg.flows_mode != "attention":
        raise ConfigError(f"export-attn needs an attention-mode config, got {cfg.flows_mode}")
    model = load_model(cfg, args.checkpoint) if args.checkpoint else build_model(cfg)
    _, test_ds = load_data(cfg)
    image = test_ds.images[args.index]
    out = Path(args.out or cfg.paths_out)
    paths = export_attention(model, image, cfg, out)
    plot_attention_pyramid(attention_maps(model, image, cfg), image, out / "attention_pyramid.png")
    _summary(cmd="export-attn", maps=len(paths), label=int(test_ds.labels[args.index]), out=out)
    return 0


def cmd_gen_data(args) -> int:
    from .data import gen_synthetic_saliency, save_dataset

    seed = 1234 if args.seed is None else args.seed
    out = Path(args.out or "data/synthetic")
    train = gen_synthetic_saliency(seed, args.n_train + args.n_test)
    save_dataset(out, "train", train.subset(slice(0, args.n_train)))
    save_dataset(out, "test", train.subset(slice(args.n_train, None)))
    _summary(cmd="gen-data", seed=seed, n_train=args.n_train, n_test=args.n_test, out=out)
    return 0


def cmd_compare(args) -> int:
    from .compare import run_comparison

    cfg = _config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    s = run_comparison(cfg, seeds, cfg.paths_out)
    _summary(cmd="compare", **s, out=cfg.paths_out)
    return 0


def cmd_report(args) -> int:
    from .metrics import summarize
    from .plots import plot_training_curves

    metrics = [Path(m) for m in args.metrics]
    out = Path(args.out or metrics[0].parent)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["run,steps,epochs,final_loss,final_test_acc,best_test_acc,best_epoch\n"]
    for m in metrics:
        s = summarize(m)
        lines.append(",".join(str(s.get(k, "")) for k in ("steps", "epochs", "final_loss", "final_test_acc", "best_test_acc", "best_epoch")).join([f"{m.parent.name},", "\n"]))
    (out / "summary.csv").write_text("".join(lines))
    plot_training_curves({m.parent.name: m for m in metrics}, out / "curves.png")
    last = summarize(metrics[-1])
    _summary(cmd="report", runs=len(metrics), best_test_acc=last.get("best_test_acc", ""), out=out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tdaf", description="Top-down attention framework: train, verify and inspect models.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="flat 'section.key = value' config file")
        sp.add_argument("--seed", type=int, help="overrides train.seed")
        if out:
            sp.add_argument("--out", help="output directory (overrides paths.out)")
        return sp

    sp = common(sub.add_parser("train", help="train a model"))
    sp.set_defaults(fn=cmd_train)
    sp = common(sub.add_parser("eval", help="evaluate a checkpoint"), out=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", choices=("test", "train"), default="test")
    sp.set_defaults(fn=cmd_eval)
    sp = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(fn=cmd_gradcheck)
    sp = common(sub.add_parser("params", help="parameter audit"), out=False)
    sp.set_defaults(fn=cmd_params)
    sp = common(sub.add_parser("export-attn", help="write attention maps of one test image as PGM"))
    sp.add_argument("--checkpoint")
    sp.add_argument("--index", type=int, default=0)
    sp.set_defaults(fn=cmd_export_attn)
    sp = sub.add_parser("gen-data", help="write the synthetic saliency set in CIFAR binary format")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.add_argument("--n-train", type=int, default=5000)
    sp.add_argument("--n-test", type=int, default=1000)
    sp.set_defaults(fn=cmd_gen_data)
    sp = common(sub.add_parser("compare", help="attention vs. baseline vs. concat ablation over seeds"))
    sp.add_argument("--seeds", default="0,1,2")
    sp.set_defaults(fn=cmd_compare)
    sp = sub.add_parser("report", help="summarize metrics CSVs and plot curves")
    sp.add_argument("metrics", nargs="+")
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
