"""Command-line interface: ``stripeclean {synth,train,infer,eval,baseline,ablate}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .attention import BRANCH_PRESETS
from .baselines import GuidedFilterParams, gf_destripe, mhe_destripe
from .degrade import AUGMENTATIONS, NoiseKind, builtin_textures, load_corpus, make_corpus
from .errors import CheckpointError, ConfigError, DimensionError, StripeCleanError, TrainingAborted
from .evaluation import (MetricsReport, column_means, infer_padded, psnr, restore_batch, ssim,
                         write_column_means, write_summary)
from .imageio import list_images, read_dir, read_gray, write_gray16
from .model import (PRESETS, SAMPLING_LAYOUTS, ModelConfig, branch_config, build,
                    count_parameters, layout_config, load_checkpoint, parse_kv)
from .train import TRAIN_PRESETS, Corpus, TrainConfig, split_indices, train
from .wavelet import RHDWTVariant

log = logging.getLogger("stripeclean")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
THREADS_ENV = "STRIPECLEAN_THREADS"
MANIFEST_NAME = "run_manifest.json"


class UsageError(StripeCleanError):
    """Bad command-line input detected after argument parsing."""


# -- run manifest -----------------------------------------------------------------

@dataclasses.dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    version: str
    inputs: dict[str, str]
    outputs: dict[str, str]
    wall_seconds: float = 0.0

    def write(self, out_dir: str | os.PathLike) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def _snapshot(args: argparse.Namespace) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
            if k not in ("func",) and not callable(v)}


# -- helpers ----------------------------------------------------------------------

def _floats(text: str | None) -> tuple[float, ...] | None:
    if text is None:
        return None
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise UsageError(f"--params: expected comma-separated numbers, got {text!r}") from None


def _threads(n: int | None):
    """Limit BLAS/OpenMP pools; ``None`` keeps the library defaults."""
    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env else None
    if n is None:
        return contextlib.nullcontext()
    if n < 1:
        raise UsageError(f"--threads must be >= 1, got {n}")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def resolve_model_config(spec: str) -> tuple[ModelConfig, dict[str, str]]:
    """A preset name, or a key=value file (optional ``preset=`` base, model
    fields, and ``train.*`` fields).  Returns the model config and train keys."""
    if spec in PRESETS:
        return PRESETS[spec], {}
    path = Path(spec)
    if not path.is_file():
        raise UsageError(f"--config: {spec!r} is neither a preset ({', '.join(PRESETS)}) nor a file")
    kv = parse_kv(path.read_text())
    base_name = kv.pop("preset", "desk")
    if base_name not in PRESETS:
        raise ConfigError(f"{path}: field preset: unknown preset {base_name!r}")
    train_kv = {k[6:]: v for k, v in kv.items() if k.startswith("train.")}
    model_kv = parse_kv(PRESETS[base_name].to_text())
    model_kv.update({k: v for k, v in kv.items() if not k.startswith("train.")})
    try:
        return ModelConfig.from_mapping(model_kv), train_kv
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _pair_files(pred_dir: Path, ref_dir: Path) -> list[tuple[str, Path, Path]]:
    preds = {p.stem: p for p in list_images(pred_dir)}
    refs = {p.stem: p for p in list_images(ref_dir)}
    missing = sorted(set(preds) ^ set(refs))
    if missing:
        raise UsageError("no counterpart for: " + ", ".join(missing))
    if not preds:
        raise UsageError(f"no images found in {pred_dir}")
    return [(k, preds[k], refs[k]) for k in sorted(preds)]


# -- commands ---------------------------------------------------------------------

def cmd_synth(args) -> dict[str, str]:
    if (args.clean_dir is None) == (args.builtin is None):
        raise UsageError("give exactly one of --clean-dir or --builtin")
    if args.clean_dir is not None:
        sources = read_dir(args.clean_dir)
        if not sources:
            raise ConfigError(f"no readable images in {args.clean_dir}")
    else:
        sources = [(f"builtin{i:03d}", t) for i, t in enumerate(builtin_textures(args.builtin, args.size, args.seed))]
    aug = () if args.aug == "none" else tuple(a for a in args.aug.split(",") if a)
    records = make_corpus(sources, args.out, args.count, patch=args.patch, aug=aug, kind=args.noise,
                          level=args.level, params=_floats(args.params), seed=args.seed)
    outputs = {"data": str(Path(args.out) / "data.bin"), "manifest": str(Path(args.out) / "manifest.txt")}
    if args.export_png:
        clean, degraded, _ = load_corpus(args.out)
        for sub, stack in (("clean", clean), ("degraded", degraded)):
            d = Path(args.out) / sub
            d.mkdir(exist_ok=True)
            for r, img in zip(records, stack):
                write_gray16(d / f"{r.id:06d}.png", img)
            outputs[sub] = str(d)
    log.info("wrote %d records to %s", len(records), args.out)
    return outputs


def _train_config(args, overrides: dict[str, str]) -> TrainConfig:
    base = TRAIN_PRESETS["desk"]
    if overrides:
        kv = parse_kv(base.to_text())
        kv = {k[6:]: v for k, v in kv.items()}
        kv.update(overrides)
        base = TrainConfig.from_mapping(kv)
    cli = {"epochs": getattr(args, "epochs", None), "batch_size": args.batch, "seed": args.seed, "lr_init": args.lr,
           "val_fraction": args.val_fraction, "checkpoint_every": args.checkpoint_every}
    return base.replace(**{k: v for k, v in cli.items() if v is not None})


def cmd_train(args) -> dict[str, str]:
    config, train_kv = resolve_model_config(args.config)
    cfg = _train_config(args, train_kv)
    clean, degraded, _ = load_corpus(args.corpus)
    model = build(config, seed=cfg.seed)
    result = train(model, Corpus(clean, degraded), cfg, args.out, resume=args.resume,
                   on_epoch=lambda r: log.info("epoch %d loss %.6g val_psnr %.3f", r.epoch, r.train_loss, r.val_psnr))
    return {"checkpoint": str(result.checkpoint), "log": str(Path(args.out) / "train_log.csv")}


def cmd_infer(args) -> dict[str, str]:
    model = load_checkpoint(args.ckpt).build_model()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    images = read_dir(args.inp)
    if not images:
        raise UsageError(f"no readable images in {args.inp}")
    for name, img in images:
        write_gray16(out / (Path(name).stem + ".png"), infer_padded(model, img))
    return {"restored": str(out)}


def cmd_eval(args) -> dict[str, str]:
    pairs = []
    for name, pp, rp in _pair_files(Path(args.pred), Path(args.ref)):
        pred, ref = read_gray(pp), read_gray(rp)
        if pred.shape != ref.shape:
            raise UsageError(f"shape mismatch for {pp.name}: prediction {pred.shape} vs reference {ref.shape}")
        pairs.append((name, pred, ref))
    report = MetricsReport.compute(pairs)
    out = Path(args.report)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "metrics.csv")
    write_summary(out / "summary.txt", report)
    if args.colmeans:
        for name, pred, ref in pairs:
            write_column_means(out / f"colmeans_{name}.csv", {"pred": column_means(pred), "ref": column_means(ref)})
    sys.stdout.write(report.summary_text())
    return {"metrics": str(out / "metrics.csv"), "summary": str(out / "summary.txt")}


def cmd_baseline(args) -> dict[str, str]:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.method == "mhe":
        fn = lambda im: mhe_destripe(im, k=args.k)  # noqa: E731
    else:
        params = GuidedFilterParams(args.radius, args.eps, args.col_radius, args.col_eps)
        fn = lambda im: gf_destripe(im, params)  # noqa: E731
    images = read_dir(args.inp)
    if not images:
        raise UsageError(f"no readable images in {args.inp}")
    for name, img in images:
        write_gray16(out / (Path(name).stem + ".png"), fn(img))
    return {"restored": str(out)}


ABLATION_SUITES = {
    "sampling": list(SAMPLING_LAYOUTS),
    "rhdwt": [v.value for v in RHDWTVariant],
    "branches": list(BRANCH_PRESETS),
}
ABLATION_HEADER = ("variant", "psnr", "ssim", "params", "ms_per_iter")


def ablation_config(suite: str, variant: str, base: ModelConfig) -> ModelConfig:
    if suite == "sampling":
        return layout_config(variant, base)
    if suite == "rhdwt":
        return base.replace(rhdwt_variant=RHDWTVariant(variant))
    if suite == "branches":
        return branch_config(variant, base)
    raise UsageError(f"unknown suite {suite!r}")


def run_ablation(suite: str, corpus: Corpus, cfg: TrainConfig, base: ModelConfig,
                 variants: Sequence[str] | None = None) -> list[tuple]:
    """Train each variant under the same seed, corpus and budget; score on the held-out split."""
    _, val_idx = split_indices(len(corpus), cfg.val_fraction, cfg.seed)
    if len(val_idx) == 0:
        raise ConfigError("ablation needs a validation split (val_fraction > 0)")
    rows = []
    for name in variants or ABLATION_SUITES[suite]:
        config = ablation_config(suite, name, base)
        model = build(config, seed=cfg.seed)
        result = train(model, corpus, cfg)
        steps = max(result.optimizer.step, 1)
        restored = restore_batch(model, corpus.degraded[val_idx], cfg.batch_size)
        ref = corpus.clean[val_idx]
        rows.append((name,
                     float(np.mean([psnr(o, c) for o, c in zip(restored, ref)])),
                     float(np.mean([ssim(o, c) for o, c in zip(restored, ref)])),
                     count_parameters(model),
                     1000.0 * result.seconds / steps))
        log.info("%s %s: psnr %.3f ssim %.4f", suite, name, rows[-1][1], rows[-1][2])
    return rows


def write_ablation_csv(path: str | os.PathLike, rows: Sequence[tuple]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(ABLATION_HEADER)
        for name, p, s, n, ms in rows:
            w.writerow([name, f"{p:.4f}", f"{s:.5f}", n, f"{ms:.1f}"])


def cmd_ablate(args) -> dict[str, str]:
    base, train_kv = resolve_model_config(args.config)
    cfg = _train_config(args, train_kv).replace(epochs=args.budget, checkpoint_every=0)
    if cfg.val_fraction == 0:
        cfg = cfg.replace(val_fraction=0.1)
    clean, degraded, _ = load_corpus(args.corpus)
    rows = run_ablation(args.suite, Corpus(clean, degraded), cfg, base)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ablation_csv(out / f"ablation_{args.suite}.csv", rows)
    return {"table": str(out / f"ablation_{args.suite}.csv")}


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stripeclean", description="Stripe-noise removal toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=None,
                   help=f"BLAS thread count (default: ${THREADS_ENV} or library default); use 1 for bitwise determinism")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize a paired stripe-noise corpus")
    s.add_argument("--clean-dir", type=Path)
    s.add_argument("--builtin", type=int, metavar="N", help="use N procedural textures instead of --clean-dir")
    s.add_argument("--size", type=int, default=128, help="builtin texture size")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--patch", type=int, default=64)
    s.add_argument("--noise", choices=[k.value for k in NoiseKind], default="gaussian")
    s.add_argument("--params", help="fixed comma-separated noise parameters (default: strength ~ U(0, --level))")
    s.add_argument("--level", type=float, default=0.15, help="maximum random noise strength")
    s.add_argument("--aug", default=",".join(AUGMENTATIONS), help="comma list of rot90,flip,scale or 'none'")
    s.add_argument("--export-png", action="store_true", help="also write clean/ and degraded/ 16-bit PNGs")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_synth)

    def train_flags(q, epochs_flag=True):
        q.add_argument("--corpus", type=Path, required=True)
        q.add_argument("--config", default="desk", help="model preset name or key=value file")
        if epochs_flag:
            q.add_argument("--epochs", type=int)
        q.add_argument("--batch", type=int)
        q.add_argument("--lr", type=float)
        q.add_argument("--val-fraction", type=float)
        q.add_argument("--checkpoint-every", type=int)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--out", type=Path, required=True)

    t = sub.add_parser("train", help="train a model on a corpus")
    train_flags(t)
    t.add_argument("--resume", type=Path)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="restore images with a trained checkpoint")
    i.add_argument("--ckpt", type=Path, required=True)
    i.add_argument("--in", dest="inp", type=Path, required=True)
    i.add_argument("--out", type=Path, required=True)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score predictions against references")
    e.add_argument("--pred", type=Path, required=True)
    e.add_argument("--ref", type=Path, required=True)
    e.add_argument("--report", type=Path, required=True, help="output directory")
    e.add_argument("--colmeans", action="store_true", help="write colmeans_<image>.csv per image")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline", help="classical destriping without training")
    b.add_argument("--method", choices=("mhe", "gf"), required=True)
    b.add_argument("--in", dest="inp", type=Path, required=True)
    b.add_argument("--out", type=Path, required=True)
    b.add_argument("--k", type=int, default=8, help="mhe column half-window")
    gf = GuidedFilterParams()
    b.add_argument("--radius", type=int, default=gf.radius)
    b.add_argument("--eps", type=float, default=gf.eps)
    b.add_argument("--col-radius", type=int, default=gf.col_radius)
    b.add_argument("--col-eps", type=float, default=gf.col_eps)
    b.set_defaults(func=cmd_baseline)

    a = sub.add_parser("ablate", help="train and compare ablation variants")
    a.add_argument("--suite", choices=tuple(ABLATION_SUITES), required=True)
    a.add_argument("--budget", type=int, default=2, help="epochs per variant")
    train_flags(a, epochs_flag=False)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        with _threads(args.threads):
            outputs = args.func(args)
    except (UsageError, ConfigError, DimensionError) as exc:
        print(f"stripeclean {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingAborted, CheckpointError, OSError, StripeCleanError) as exc:
        print(f"stripeclean {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out_dir = getattr(args, "out", None) or getattr(args, "report", None)
    if out_dir is not None:
        inputs = {k: str(getattr(args, k)) for k in ("clean_dir", "corpus", "ckpt", "inp", "pred", "ref", "resume")
                  if getattr(args, k, None) is not None}
        RunManifest(args.command, _snapshot(args), getattr(args, "seed", None), __version__, inputs,
                    outputs, time.perf_counter() - t0).write(out_dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
