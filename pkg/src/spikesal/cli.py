"""Command-line interface.

Subcommands wrap the library one-to-one: simulate, reconstruct, gen-data,
train, eval, ablate, energy, plot. Flags override config-file values,
which override defaults; every run echoes its effective configuration
into the output directory. Errors exit nonzero with a single
machine-parseable line on stderr: `error: <kind>: <detail>`.

Heavy imports happen inside command handlers so that --threads and
--deterministic can pin the BLAS thread pools before numpy loads.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


class CliError(Exception):
    def __init__(self, kind: str, detail: str):
        super().__init__(f"{kind}: {detail}")
        self.kind = kind
        self.detail = detail


def _fail(kind: str, detail: str) -> "NoReturn":  # noqa: F821
    raise CliError(kind, detail)


def _set_threads(n: int) -> None:
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


# -- config plumbing -------------------------------------------------------------------


def _train_config_fields():
    from .training import TrainConfig

    return {f.name for f in TrainConfig.__dataclass_fields__.values()}


def _load_config_file(path: str) -> dict:
    if not os.path.isfile(path):
        _fail("missing-file", f"config file not found: {path}")
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            _fail("bad-config", f"invalid JSON in {path}: {e}")
    if not isinstance(data, dict):
        _fail("bad-config", f"config root must be an object: {path}")
    return data


def _resolve_train_config(args) -> "TrainConfig":  # noqa: F821
    """Precedence: explicit flags > config file > dataclass defaults."""
    from .training import TrainConfig

    valid = _train_config_fields()
    merged: dict = {}
    if args.config:
        file_cfg = _load_config_file(args.config)
        unknown = set(file_cfg) - valid
        if unknown:
            _fail("bad-config", f"unknown config keys: {sorted(unknown)}")
        merged.update(file_cfg)
    flag_map = {
        "lr": args.lr,
        "weight_decay": args.weight_decay,
        "batch_size": args.batch_size,
        "time_steps": args.time_steps,
        "alpha": args.alpha,
        "epochs": args.epochs,
        "seed": args.seed,
        "base_channels": args.base_channels,
        "fusion": args.fusion,
        "distance": args.distance,
        "theta": args.theta,
    }
    for key, value in flag_map.items():
        if value is not None:
            merged[key] = value
    if getattr(args, "no_dwconv", False):
        merged["use_dwconv"] = False
    if getattr(args, "no_global_debias", False):
        merged["global_debias"] = False
    try:
        return TrainConfig(**merged)
    except (TypeError, ValueError) as e:
        _fail("bad-config", str(e))


def _echo_config(out_dir: str, cfg, extra: dict | None = None) -> None:
    from dataclasses import asdict

    payload = asdict(cfg)
    if extra:
        payload.update(extra)
    with open(os.path.join(out_dir, "effective_config.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _load_dataset(path: str):
    from .spikeio import load_dataset

    if not os.path.isdir(path):
        _fail("missing-file", f"dataset directory not found: {path}")
    try:
        return load_dataset(path)
    except Exception as e:
        _fail("bad-dataset", str(e))


# -- commands ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    import numpy as np

    from .spikeio import IntensityClip, load_clip_dir, simulate_spikes, write_spk

    if not os.path.isdir(args.input):
        _fail("missing-file", f"frames directory not found: {args.input}")
    frames = load_clip_dir(args.input)
    stream = simulate_spikes(IntensityClip(frames), args.theta)
    write_spk(stream, args.out)
    print(json.dumps({
        "out": args.out,
        "ticks": int(stream.bits.shape[0]),
        "height": int(stream.bits.shape[1]),
        "width": int(stream.bits.shape[2]),
        "spike_rate": float(stream.bits.mean()),
    }))
    return 0


def cmd_reconstruct(args) -> int:
    from .spikeio import read_spk, tfi_reconstruct, write_gray

    if not os.path.isfile(args.spk):
        _fail("missing-file", f"spike file not found: {args.spk}")
    stream = read_spk(args.spk)
    if not 0 <= args.tick < stream.bits.shape[0]:
        _fail("bad-flag", f"tick {args.tick} outside [0, {stream.bits.shape[0]})")
    import numpy as np

    frame = tfi_reconstruct(stream, args.tick, max_gray=args.max_gray)
    _ensure_out(args.out)
    path = os.path.join(args.out, f"tfi_t{args.tick:04d}.pgm")
    # PGM stores 0..255 gray levels; rescale from the reconstruction range
    write_gray(path, np.round(frame * (255.0 / args.max_gray)))
    print(json.dumps({"out": path, "tick": args.tick}))
    return 0


def cmd_gen_data(args) -> int:
    from .spikeio import SCENARIOS, SyntheticConfig, make_synthetic_dataset, save_dataset

    scenarios = tuple(args.scenarios.split(",")) if args.scenarios else SCENARIOS
    bad = [s for s in scenarios if s not in SCENARIOS]
    if bad:
        _fail("bad-flag", f"unknown scenarios {bad}; valid: {list(SCENARIOS)}")
    cfg = SyntheticConfig(width=args.size, height=args.size, count=args.count,
                          scenarios=scenarios, seed=args.seed)
    samples = make_synthetic_dataset(cfg)
    save_dataset(samples, _ensure_out(args.out))
    print(json.dumps({"out": args.out, "count": len(samples),
                      "scenarios": list(scenarios), "seed": args.seed}))
    return 0


def cmd_train(args) -> int:
    from .training import TrainingDiverged, train

    cfg = _resolve_train_config(args)
    dataset = _load_dataset(args.dataset)
    out = _ensure_out(args.out)
    _echo_config(out, cfg, {"command": "train", "dataset": args.dataset,
                            "deterministic": bool(args.deterministic)})
    log_path = os.path.join(out, "train_log.jsonl")
    if os.path.exists(log_path):
        os.remove(log_path)
    try:
        model, critic, logs = train(None, None, dataset, cfg, out_dir=out)
    except TrainingDiverged as e:
        _fail("diverged", str(e))
    print(json.dumps({
        "out": out,
        "checkpoint": os.path.join(out, "checkpoint.tnsr"),
        "epochs": cfg.epochs,
        "final": logs[-1] if logs else None,
    }))
    return 0


def cmd_eval(args) -> int:
    from .training import build_model, evaluate, load_checkpoint

    cfg = _resolve_train_config(args)
    dataset = _load_dataset(args.dataset)
    model = build_model(cfg)
    if args.checkpoint:
        if not os.path.isfile(args.checkpoint):
            _fail("missing-file", f"checkpoint not found: {args.checkpoint}")
        load_checkpoint(args.checkpoint, model)
    report = evaluate(model, dataset, cfg).to_dict()
    if args.out:
        out = _ensure_out(args.out)
        _echo_config(out, cfg, {"command": "eval", "dataset": args.dataset,
                                "checkpoint": args.checkpoint})
        with open(os.path.join(out, "metrics.json"), "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(json.dumps(report))
    return 0


def cmd_ablate(args) -> int:
    from dataclasses import replace

    from .training import evaluate, train

    cfg = _resolve_train_config(args)
    dataset = _load_dataset(args.dataset)
    out = _ensure_out(args.out)
    _echo_config(out, cfg, {"command": "ablate", "axis": args.axis,
                            "dataset": args.dataset})

    if args.axis == "fusion":
        variants = [("fusion=" + f, replace(cfg, fusion=f))
                    for f in ("or", "add", "learned")]
    elif args.axis == "distance":
        variants = [("distance=" + d, replace(cfg, distance=d))
                    for d in ("em", "ed", "kl", "js")]
    else:
        _fail("bad-flag", f"unknown ablation axis {args.axis!r}")

    rows = []
    for name, vcfg in variants:
        model, _, _ = train(None, None, dataset, vcfg, out_dir=None)
        n_val = max(1, len(dataset) // 4) if len(dataset) > 1 else len(dataset)
        report = evaluate(model, dataset[len(dataset) - n_val:], vcfg)
        rows.append({"variant": name, **{k: v for k, v in report.to_dict().items()
                                         if k != "per_class_pixel_ratio"}})

    cols = ["variant", "mae", "mean_f_beta", "max_f_beta", "s_measure",
            "psnr", "ssim", "energy_mj"]
    lines = ["| " + " | ".join(cols) + " |",
             "|" + "|".join("---" for _ in cols) + "|"]
    for r in rows:
        lines.append("| " + " | ".join(
            r[c] if isinstance(r[c], str) else f"{r[c]:.4f}" for c in cols) + " |")
    table = "\n".join(lines) + "\n"
    with open(os.path.join(out, "ablation.md"), "w") as fh:
        fh.write(table)
    with open(os.path.join(out, "ablation.json"), "w") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(table, end="")
    return 0


def cmd_energy(args) -> int:
    from .training import build_model, energy_estimate, load_checkpoint

    cfg = _resolve_train_config(args)
    dataset = _load_dataset(args.dataset)
    model = build_model(cfg)
    if args.checkpoint:
        if not os.path.isfile(args.checkpoint):
            _fail("missing-file", f"checkpoint not found: {args.checkpoint}")
        load_checkpoint(args.checkpoint, model)
    reports = [energy_estimate(model, s, cfg) for s in dataset[: args.limit]]
    summary = {
        "samples": len(reports),
        "time_steps": cfg.time_steps,
        "mean_ac": float(sum(r["ac"] for r in reports) / len(reports)),
        "mean_mac": float(sum(r["mac"] for r in reports) / len(reports)),
        "mean_energy_mj": float(sum(r["energy_mj"] for r in reports) / len(reports)),
    }
    if args.out:
        out = _ensure_out(args.out)
        with open(os.path.join(out, "energy.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(json.dumps(summary))
    return 0


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = _ensure_out(args.out)
    made = []

    if args.log:
        if not os.path.isfile(args.log):
            _fail("missing-file", f"log file not found: {args.log}")
        entries = []
        with open(args.log) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    entries.append(json.loads(line))
        if not entries:
            _fail("bad-dataset", f"log file has no entries: {args.log}")
        epochs = [e["epoch"] for e in entries]
        fig, ax = plt.subplots(figsize=(7, 4))
        for key in ("total", "l_original", "l_mse", "val_mae"):
            if key in entries[0]:
                ax.plot(epochs, [e[key] for e in entries], label=key)
        ax.set_xlabel("epoch")
        ax.set_ylabel("value")
        ax.legend()
        ax.set_title("training curves")
        path = os.path.join(out, "curves.png")
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        made.append(path)

    if args.metrics:
        if not os.path.isfile(args.metrics):
            _fail("missing-file", f"metrics file not found: {args.metrics}")
        with open(args.metrics) as fh:
            report = json.load(fh)
        ratios = report.get("per_class_pixel_ratio", [])
        if ratios:
            labels = [r["class"] for r in ratios]
            pred = [r["pred_ratio"] for r in ratios]
            gt = [r["gt_ratio"] for r in ratios]
            xs = range(len(labels))
            fig, ax = plt.subplots(figsize=(7, 4))
            ax.bar([x - 0.2 for x in xs], gt, width=0.4, label="ground truth")
            ax.bar([x + 0.2 for x in xs], pred, width=0.4, label="predicted")
            ax.set_xticks(list(xs))
            ax.set_xticklabels(labels, rotation=20, ha="right")
            ax.set_ylabel("salient pixel ratio")
            ax.legend()
            ax.set_title("per-class pixel ratio")
            path = os.path.join(out, "pixel_ratio.png")
            fig.savefig(path, dpi=120, bbox_inches="tight")
            plt.close(fig)
            made.append(path)

    if not made:
        _fail("bad-flag", "nothing to plot: pass --log and/or --metrics")
    print(json.dumps({"out": out, "files": made}))
    return 0


# -- parser ----------------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flags take precedence)")
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--time-steps", dest="time_steps", type=int, choices=(1, 5))
    p.add_argument("--alpha", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--base-channels", dest="base_channels", type=int)
    p.add_argument("--theta", type=float)
    p.add_argument("--fusion", choices=("or", "add", "learned"))
    p.add_argument("--distance", choices=("em", "ed", "kl", "js"))
    p.add_argument("--no-dwconv", dest="no_dwconv", action="store_true")
    p.add_argument("--no-global-debias", dest="no_global_debias", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikesal",
        description="Spike-camera video saliency: simulate, reconstruct, train, evaluate.")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP thread pools")
    parser.add_argument("--deterministic", action="store_true",
                        help="serial execution; bit-reproducible outputs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="luminance frames -> .spk spike stream")
    p.add_argument("--input", required=True, help="directory of gray frames")
    p.add_argument("--theta", type=float, default=2.0)
    p.add_argument("--out", required=True, help="output .spk path")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("reconstruct", help=".spk -> reconstructed frame at a tick")
    p.add_argument("--spk", required=True)
    p.add_argument("--tick", type=int, required=True)
    p.add_argument("--max-gray", dest="max_gray", type=float, default=255.0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("gen-data", help="write a synthetic labeled dataset")
    p.add_argument("--scenarios", help="comma-separated subset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train the saliency network")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train a grid of variants, emit a table")
    p.add_argument("--dataset", required=True)
    p.add_argument("--axis", choices=("fusion", "distance"), default="fusion")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("energy", help="estimate inference energy")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--limit", type=int, default=8)
    p.add_argument("--out")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_energy)

    p = sub.add_parser("plot", help="training curves and pixel-ratio charts")
    p.add_argument("--log", help="train_log.jsonl from a training run")
    p.add_argument("--metrics", help="metrics.json from an eval run")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.deterministic:
        _set_threads(1)
    elif args.threads is not None:
        if args.threads < 1:
            print("error: bad-flag: --threads must be >= 1", file=sys.stderr)
            return 2
        _set_threads(args.threads)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e.kind}: {e.detail}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: runtime: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
