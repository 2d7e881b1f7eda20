"""Command-line pipeline: benchmark generation through ablation report.

One binary, eight subcommands:

    gen-bench        write demonstration/test datasets (+ scenes.json)
    augment          apply a dual-region augmentation plan to a dataset
    train-bc         behavior-clone a policy from a dataset
    eval-policy      action MSE (+ closed-loop endpoint error with scenes)
    eval-arg         RND-gap protocol with paired resamplings
    saliency         per-frame heatmaps + attention-in-mask CSV
    export-fractals  dump the texture corpus as PNG files
    report           join per-method runs into a comparison table

Machine-readable JSON goes to stdout (or --out); progress text goes to
stderr.  Every artifact-producing subcommand writes a run.json manifest
(config hash, seeds, timestamp).  All randomness is seed-derived, so reruns
with the same flags produce bit-identical artifacts; run.json is the only
output carrying wall-clock state.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .augment import augment_dataset, load_plan, plan_to_config, save_plan
from .dataio import load_dataset, save_dataset
from .errors import ConfigError, DataError, DualaugError
from .fractal import FractalSpec, generate
from .imgcore import to_uint8
from .parallel import pmap
from .rndgap import (
    FlattenDownsample,
    PolicyEncoder,
    RandomConv,
    compare_reports,
    gap_protocol,
)
from .saliency import attention_in_mask, gradient_saliency, occlusion_saliency, render_heatmap
from .stats import paired_t_test
from .synthbench import (
    BenchConfig,
    TrainConfig,
    eval_policy,
    generate_episodes,
    load_policy,
    method_plans,
    save_policy,
    scene_from_config,
    scene_to_config,
    train_bc,
)

METHOD_NAMES = ("dual", "rel_only", "irr_only", "none")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _write_manifest(out_dir: Path, args: argparse.Namespace) -> None:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    blob = json.dumps(config, sort_keys=True, default=str)
    manifest = {
        "command": args.command,
        "config": config,
        "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _save_scenes(path: Path, scenes: dict) -> None:
    path.write_text(
        json.dumps({k: scene_to_config(v) for k, v in scenes.items()}, indent=2, sort_keys=True)
        + "\n"
    )


def _load_scenes(path: Path) -> dict:
    return {k: scene_from_config(v) for k, v in json.loads(path.read_text()).items()}


# -- subcommands ---------------------------------------------------------------


def cmd_gen_bench(args) -> dict:
    out = Path(args.out)
    cfg = BenchConfig()
    result = {}
    for env, n, seed in (("demo", args.demo_episodes, args.seed), ("test", args.test_episodes, args.seed + 1)):
        ds, scenes = generate_episodes(n, env, seed=seed, cfg=cfg, workers=args.workers)
        env_dir = out / env
        save_dataset(ds, env_dir)
        _save_scenes(env_dir / "scenes.json", scenes)
        result[env] = {"episodes": len(ds), "frames": ds.n_frames(), "dir": str(env_dir)}
        _log(f"wrote {len(ds)} {env} episodes to {env_dir}")
    _write_manifest(out, args)
    return result


def cmd_augment(args) -> dict:
    if bool(args.plan) == bool(args.method):
        raise ConfigError("pass exactly one of --plan or --method")
    if args.plan:
        plan = load_plan(args.plan, sprite_root=args.sprite_root)
    else:
        if args.method not in METHOD_NAMES:
            raise ConfigError(f"--method must be one of {METHOD_NAMES}")
        plan = method_plans(args.master_seed)[args.method]
    dataset = load_dataset(args.data)
    augmented, report = augment_dataset(dataset, plan, copies=args.copies, workers=args.workers)
    out = Path(args.out)
    save_dataset(augmented, out)
    scenes_path = Path(args.data) / "scenes.json"
    if scenes_path.is_file():
        (out / "scenes.json").write_text(scenes_path.read_text())
    if _plan_serializable(plan):
        save_plan(plan, out / "plan.json")
    _write_manifest(out, args)
    _log(f"augmented {report.n_augmented_episodes} episodes into {out}")
    return {
        "source_episodes": report.n_source_episodes,
        "augmented_episodes": report.n_augmented_episodes,
        "skipped": report.skipped,
        "dir": str(out),
    }


def _plan_serializable(plan) -> bool:
    try:
        plan_to_config(plan)
        return True
    except ConfigError:
        return False


def cmd_train_bc(args) -> dict:
    dataset = load_dataset(args.data)
    hyper = TrainConfig(
        lr=args.lr,
        momentum=args.momentum,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
    )
    result = train_bc(dataset, hyper)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_policy(result.policy, out)
    _write_manifest(out.parent, args)
    _log(f"trained on {dataset.n_frames()} frames; loss {result.epoch_losses[0]:.4f} -> {result.final_loss:.4f}")
    return {
        "checkpoint": str(out),
        "initial_loss": result.epoch_losses[0],
        "final_loss": result.final_loss,
        "epochs": args.epochs,
    }


def cmd_eval_policy(args) -> dict:
    policy = load_policy(args.policy)
    dataset = load_dataset(args.data)
    scenes = None
    scenes_path = Path(args.scenes) if args.scenes else Path(args.data) / "scenes.json"
    if scenes_path.is_file():
        scenes = _load_scenes(scenes_path)
    ev = eval_policy(policy, dataset, scenes)
    payload = {
        "mse": ev.mse,
        "mean_endpoint_error": ev.mean_endpoint_error,
        "endpoint_errors": ev.endpoint_errors,
        "n_frames": dataset.n_frames(),
        "endpoint_note": "endpoint error is a desk-scale proxy, not a task success rate",
    }
    _log(f"mse {ev.mse:.4f}" + (f", endpoint {ev.mean_endpoint_error:.2f}px" if scenes else ""))
    return payload


def _make_extractor(args, meta):
    if args.extractor == "flatten_downsample":
        return FlattenDownsample(meta.height, meta.width, meta.channels)
    if args.extractor == "random_conv":
        return RandomConv(meta.height, meta.width, meta.channels, seed=args.seed)
    if args.extractor == "tiny_policy_encoder":
        if not args.policy_checkpoint:
            raise ConfigError("tiny_policy_encoder needs --policy-checkpoint")
        return PolicyEncoder(load_policy(args.policy_checkpoint))
    raise ConfigError(f"unknown extractor {args.extractor!r}")


def cmd_eval_arg(args) -> dict:
    demo = load_dataset(args.demo_dir)
    test = load_dataset(args.test_dir)
    train_set = load_dataset(args.train_dir) if args.train_dir else None
    extractor = _make_extractor(args, demo.meta)
    report = gap_protocol(
        extractor,
        demo,
        test,
        n_resample=args.resamples,
        base_seed=args.seed,
        workers=args.workers,
        train_set=train_set,
    )
    _log(f"gap mean {report.mean:.4f} std {report.std:.4f} over {args.resamples} resamplings")
    return report.to_dict()


def cmd_saliency(args) -> dict:
    policy = load_policy(args.policy)
    dataset = load_dataset(args.data)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    written = 0
    for ep in dataset.episodes:
        for t, (obs, mask) in enumerate(zip(ep.observations, ep.masks)):
            if written >= args.frames:
                break
            if args.method == "gradient":
                sal = gradient_saliency(policy, obs, ep.states[t])
            else:
                fill = obs.data.mean(axis=(0, 1))
                sal = occlusion_saliency(
                    lambda im: float(np.sum(policy.act_single(im, ep.states[t]) ** 2)),
                    obs,
                    patch=args.patch,
                    stride=args.stride,
                    fill=fill,
                )
            name = f"{ep.id}-{t:06d}"
            from PIL import Image as PILImage

            PILImage.fromarray(to_uint8(render_heatmap(sal))).save(out_dir / f"{name}.png")
            score = attention_in_mask(sal, mask) if mask is not None else None
            rows.append({"episode": ep.id, "frame": t, "attention_in_mask": score})
            written += 1
        if written >= args.frames:
            break

    csv_path = out_dir / "attention.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["episode", "frame", "attention_in_mask"])
        writer.writeheader()
        writer.writerows(rows)
    _write_manifest(out_dir, args)
    scores = [r["attention_in_mask"] for r in rows if r["attention_in_mask"] is not None]
    mean_score = float(np.mean(scores)) if scores else None
    _log(f"wrote {written} heatmaps to {out_dir}")
    return {"frames": written, "mean_attention_in_mask": mean_score, "csv": str(csv_path)}


def cmd_export_fractals(args) -> dict:
    from PIL import Image as PILImage

    from .fractal import FAMILIES, default_corpus_seeds

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = default_corpus_seeds(args.seed, args.count)
    units = [
        (i, FAMILIES[i % len(FAMILIES)], s)
        for i, s in enumerate(seeds)
    ]
    images = pmap(_render_fractal_unit, units, workers=args.workers, ctx=args.size)
    for (i, family, _), img in zip(units, images):
        PILImage.fromarray(img).save(out_dir / f"{i:04d}-{family}.png")
    _write_manifest(out_dir, args)
    _log(f"wrote {len(units)} textures to {out_dir}")
    return {"count": len(units), "dir": str(out_dir)}


def _render_fractal_unit(size, unit):
    i, family, seed = unit
    return to_uint8(generate(FractalSpec(family=family, seed=seed, size=size)))


def cmd_report(args) -> dict:
    runs = {}
    for spec in args.run:
        if "=" not in spec:
            raise ConfigError(f"--run expects NAME=DIR, got {spec!r}")
        name, _, path = spec.partition("=")
        runs[name] = Path(path)
    if args.baseline not in runs:
        raise ConfigError(f"baseline {args.baseline!r} is not among the runs")

    rows = {}
    for name, path in runs.items():
        eval_path = path / "eval_test.json"
        arg_path = path / "arg.json"
        row = {}
        if eval_path.is_file():
            ev = json.loads(eval_path.read_text())
            row["test_mse"] = ev.get("mse")
            row["endpoint"] = ev.get("mean_endpoint_error")
        if arg_path.is_file():
            gap = json.loads(arg_path.read_text())
            row["gap_values"] = gap["values"]
            row["gap_mean"] = gap["mean"]
            row["gap_std"] = gap["std"]
        if not row:
            raise DataError(f"run {name!r} at {path} has neither eval_test.json nor arg.json")
        rows[name] = row

    base = rows[args.baseline]
    for name, row in rows.items():
        if name == args.baseline or "gap_values" not in row or "gap_values" not in base:
            continue
        t = paired_t_test(row["gap_values"], base["gap_values"])
        row["t_vs_baseline"] = t.t
        row["p_vs_baseline"] = t.p
        row["significant"] = t.significant

    table = _format_table(rows, args.baseline)
    _log(table)
    return {"baseline": args.baseline, "methods": rows, "table": table}


def _format_table(rows: dict, baseline: str) -> str:
    headers = ["method", "test_mse", "endpoint", "gap_mean", "gap_std", "p_vs_base", "sig"]
    lines = []
    for name, row in rows.items():
        sig = ""
        if row.get("significant"):
            sig = "+"  # daggers in the tables; ASCII here
        lines.append(
            [
                name + (" (base)" if name == baseline else ""),
                _fmt(row.get("test_mse")),
                _fmt(row.get("endpoint")),
                _fmt(row.get("gap_mean")),
                _fmt(row.get("gap_std")),
                _fmt(row.get("p_vs_baseline")),
                sig,
            ]
        )
    widths = [max(len(h), *(len(l[i]) for l in lines)) for i, h in enumerate(headers)]
    out = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    out.append("  ".join("-" * w for w in widths))
    for l in lines:
        out.append("  ".join(v.ljust(w) for v, w in zip(l, widths)))
    return "\n".join(out)


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualaug", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-bench", help="generate the synthetic benchmark datasets")
    g.add_argument("--out", required=True)
    g.add_argument("--demo-episodes", type=int, default=40)
    g.add_argument("--test-episodes", type=int, default=20)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(func=cmd_gen_bench)

    a = sub.add_parser("augment", help="apply an augmentation plan to a dataset")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--plan", help="plan JSON file")
    a.add_argument("--method", help=f"builtin ablation plan: {', '.join(METHOD_NAMES)}")
    a.add_argument("--master-seed", type=int, default=0, help="seed for --method plans")
    a.add_argument("--sprite-root", help="base dir for relative sprite paths")
    a.add_argument("--copies", type=int, default=2)
    a.add_argument("--workers", type=int, default=1)
    a.set_defaults(func=cmd_augment)

    t = sub.add_parser("train-bc", help="behavior-clone a policy")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--lr", type=float, default=TrainConfig.lr)
    t.add_argument("--momentum", type=float, default=TrainConfig.momentum)
    t.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    t.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    t.add_argument("--seed", type=int, required=True)
    t.set_defaults(func=cmd_train_bc)

    e = sub.add_parser("eval-policy", help="action MSE and endpoint error")
    e.add_argument("--policy", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--scenes", help="scenes.json (default: <data>/scenes.json)")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval_policy)

    r = sub.add_parser("eval-arg", help="RND-gap protocol")
    r.add_argument("--demo-dir", required=True)
    r.add_argument("--test-dir", required=True)
    r.add_argument("--extractor", default="tiny_policy_encoder",
                   choices=["flatten_downsample", "random_conv", "tiny_policy_encoder"])
    r.add_argument("--policy-checkpoint")
    r.add_argument("--train-dir", help="encoder training data (predictor fit set)")
    r.add_argument("--resamples", type=int, default=20)
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out")
    r.set_defaults(func=cmd_eval_arg)

    s = sub.add_parser("saliency", help="heatmaps and attention-in-mask scores")
    s.add_argument("--policy", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--frames", type=int, default=50)
    s.add_argument("--method", choices=["gradient", "occlusion"], default="gradient")
    s.add_argument("--patch", type=int, default=8)
    s.add_argument("--stride", type=int, default=4)
    s.set_defaults(func=cmd_saliency)

    f = sub.add_parser("export-fractals", help="write the texture corpus as PNGs")
    f.add_argument("--out", required=True)
    f.add_argument("--count", type=int, default=64)
    f.add_argument("--size", type=int, default=64)
    f.add_argument("--seed", type=int, required=True)
    f.add_argument("--workers", type=int, default=1)
    f.set_defaults(func=cmd_export_fractals)

    rp = sub.add_parser("report", help="join per-method runs into one table")
    rp.add_argument("--run", action="append", required=True, metavar="NAME=DIR")
    rp.add_argument("--baseline", default="dual")
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_report)

    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        payload = args.func(args)
        _emit(payload, getattr(args, "out", None) if args.command != "report" else args.out)
        return 0
    except (ConfigError,) as exc:
        _log(f"config error: {exc}")
        return 2
    except (DataError, DualaugError, OSError, ArithmeticError) as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
