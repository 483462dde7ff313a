"""Command-line front end.

    msrcomplete gen-dataset --config run.cfg --out runs/desk
    msrcomplete train       --config run.cfg --out runs/desk
    msrcomplete eval        --config run.cfg --out runs/desk --baseline
    msrcomplete image       --config run.cfg --out runs/desk --shape square --source all
    msrcomplete oracle      --out runs/oracle

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import hashlib
import json
import logging
import struct
import sys
from pathlib import Path

import numpy as np

from . import __version__, oracles
from .config import ConfigError, RunConfig, load_config
from .forward import SolverError, WaveContext, add_noise
from .geometry import Kite, RoundSquare, SquareRadius, centroid, circle
from .imaging import FarFieldDataSet, ImagingGrid, dsm_indicator, write_csv, write_pgm
from .msr import PHASELESS, DirectionGrid, assemble_msr, read_dataset
from .nn import TrainingError
from .retrieval import (
    DatasetGenerationError,
    RetrievalModel,
    ShapeParams,
    SplitSpec,
    compute_metrics,
    fit_model,
    generate_dataset,
    limited_inputs,
    make_pairs,
    nearest_sample,
    retrieve_many,
    zero_prediction,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
SOURCES = ("full", "limited", "retrieved", "phaseless-retrieved", "nearest")

log = logging.getLogger("msrcomplete")


class ArtifactIOError(OSError):
    """An input file is missing, truncated or malformed."""


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: RunConfig, outputs: dict, extra: dict | None = None) -> Path:
    payload = {
        "command": command,
        "version": __version__,
        "config": cfg.snapshot(),
        "outputs": {name: sha256(out / name) for name in outputs},
        **(extra or {}),
    }
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def _read_dataset(path):
    try:
        return read_dataset(path)
    except (OSError, struct.error, ValueError) as exc:
        raise ArtifactIOError(f"cannot read dataset {path}: {exc}") from exc


def _read_model(path) -> RetrievalModel:
    try:
        return RetrievalModel.load(path)
    except (OSError, struct.error, ValueError, KeyError) as exc:
        raise ArtifactIOError(f"cannot read checkpoint {path}: {exc}") from exc


def _dataset_path(args, cfg: RunConfig) -> Path:
    return Path(args.dataset or cfg.dataset_path or Path(args.out) / "dataset.msrd")


def _checkpoint_path(args, cfg: RunConfig) -> Path:
    return Path(args.checkpoint or cfg.checkpoint_path or Path(args.out) / "model.msrn")


def _check_dataset(cfg: RunConfig, k: float, two_m: int, count: int, needed: int):
    if two_m != cfg.two_m:
        raise ConfigError("two_m", f"config has {cfg.two_m} but the dataset has {two_m}")
    if not 0 < cfg.m1 < two_m:
        raise ConfigError("m1", f"{cfg.m1} does not fit a dataset with two_m={two_m}")
    if abs(k - cfg.k) > 1e-12 * max(1.0, abs(k)):
        raise ConfigError("k", f"config has {cfg.k} but the dataset has {k}")
    if needed > count:
        raise ConfigError("n1", f"needs {needed} records, dataset has {count}")


# commands


def cmd_gen_dataset(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    path = Path(args.dataset) if args.dataset else out / "dataset.msrd"
    params = ShapeParams(cfg.shape_N, cfg.shape_q, (cfg.a0_min, cfg.a0_max))
    ds = generate_dataset(
        cfg.count, cfg.k, cfg.two_m, params, cfg.master_seed, cfg.workers, cfg.n_nodes, path=path, resume=args.resume
    )
    checksum = sha256(path)
    print(f"wrote {len(ds)} records to {path} (sha256 {checksum[:16]}...)")
    write_manifest(out, "gen-dataset", cfg, [], {"dataset": str(path), "count": len(ds), "master_seed": cfg.master_seed, "checksum": checksum})
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    k, two_m, records = _read_dataset(_dataset_path(args, cfg))
    _check_dataset(cfg, k, two_m, len(records), cfg.test_offset + cfg.n2)
    mats = np.stack([F for _, F in records])
    pairs = make_pairs(mats, cfg.m1, cfg.mode, cfg.subsample_p or None, cfg.subsample_seed)
    model = fit_model(
        pairs,
        SplitSpec(cfg.n1, cfg.n2, None if cfg.test_start < 0 else cfg.test_start),
        scale=cfg.scale,
        epochs=cfg.epochs,
        batch_size=cfg.batch,
        loss=cfg.loss,
        alpha=cfg.alpha,
        seed=cfg.train_seed,
        standardize=cfg.standardize,
    )
    ckpt_path = _checkpoint_path(args, cfg)
    model.save(ckpt_path)
    hist = out / "loss_history.csv"
    rows = [(0, model.initial_loss)] + [(e + 1, v) for e, v in enumerate(model.history)]
    np.savetxt(hist, np.array(rows), delimiter=",", header="epoch,train_loss", comments="", fmt=["%d", "%.12g"])
    print(f"trained {cfg.mode} model on {cfg.n1} samples: loss {model.initial_loss:.6g} -> {model.history[-1] if model.history else model.initial_loss:.6g}")
    outputs = ["loss_history.csv"] + ([ckpt_path.name] if ckpt_path.parent.resolve() == out.resolve() else [])
    write_manifest(out, "train", cfg, outputs, {"checkpoint": str(ckpt_path), "checkpoint_sha256": sha256(ckpt_path)})
    return EXIT_OK


def _noisy(mats, cfg: RunConfig, delta: float):
    if delta <= 0:
        return mats
    return np.stack([add_noise(F, delta, cfg.noise_seed * 1_000_003 + i) for i, F in enumerate(mats)])


def cmd_eval(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    model = _read_model(_checkpoint_path(args, cfg))
    if model.mode != cfg.mode:
        raise ConfigError("mode", f"config says {cfg.mode} but the checkpoint was trained for {model.mode}")
    if model.m1 != cfg.m1:
        raise ConfigError("m1", f"config has {cfg.m1} but the checkpoint has {model.m1}")
    k, two_m, records = _read_dataset(_dataset_path(args, cfg))
    start = cfg.test_offset
    _check_dataset(cfg, k, two_m, len(records), start + cfg.n2)
    truth = np.stack([F for _, F in records[start : start + cfg.n2]])
    measured = _noisy(truth, cfg, cfg.noise)
    inputs = limited_inputs(model, measured)
    retrieved = retrieve_many(model, inputs)
    report = {"model": compute_metrics(truth, retrieved, cfg.m1, cfg.psnr_conventional).to_json()}
    if args.baseline:
        train_mats = np.stack([F for _, F in records[: cfg.n1]])
        nearest = np.stack([nearest_sample(inp, train_mats) for inp in inputs])
        report["baselines"] = {
            "nearest_sample": compute_metrics(truth, nearest, cfg.m1, cfg.psnr_conventional).to_json(),
            "zero_prediction": compute_metrics(truth, zero_prediction(inputs), cfg.m1, cfg.psnr_conventional).to_json(),
        }
    report["test_records"] = [start, start + cfg.n2]
    report["noise"] = cfg.noise
    (out / "metrics.json").write_text(json.dumps(report, indent=2))
    e = report["model"]["relative_error_percent"]["norm"]
    print(f"norm relative errors (%): e11 {e['e11']:.2f}  e21 {e['e21']:.2f}  e22 {e['e22']:.2f}  e {e['e']:.2f}")
    write_manifest(out, "eval", cfg, ["metrics.json"])
    return EXIT_OK


HELD_OUT = {
    "kite": lambda: (Kite(), False),
    "square": lambda: (SquareRadius(), True),
    "circle": lambda: (circle(1.0), False),
    "roundsquare": lambda: (RoundSquare(), False),
}


def _image_target(args, cfg: RunConfig):
    """(curve, true MSR matrix) for a named shape or a dataset record."""
    if args.index is not None:
        k, two_m, records = _read_dataset(_dataset_path(args, cfg))
        _check_dataset(cfg, k, two_m, len(records), args.index + 1)
        return records[args.index]
    curve, graded = HELD_OUT[args.shape]()
    F = assemble_msr(curve, WaveContext(cfg.k, cfg.n_nodes, graded=graded), DirectionGrid(cfg.two_m)).entries
    return curve, F


def cmd_image(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    curve, F_true = _image_target(args, cfg)
    F = _noisy(F_true[None], cfg, cfg.noise)[0]
    grid = ImagingGrid((cfg.grid_x_min, cfg.grid_x_max), (cfg.grid_y_min, cfg.grid_y_max), cfg.grid_nx, cfg.grid_ny)
    if args.source == "all":
        sources = tuple(s for s in SOURCES if s != "phaseless-retrieved" or args.phaseless_checkpoint)
    else:
        sources = (args.source,)
    m1 = cfg.m1
    rows, cols = np.arange(m1), np.arange(m1, cfg.two_m)
    matrices = {}
    for src in sources:
        if src == "full":
            matrices[src] = FarFieldDataSet.from_msr(F, cfg.k)
        elif src == "limited":
            matrices[src] = FarFieldDataSet.from_msr(F, cfg.k, rows, cols)
        elif src in ("retrieved", "nearest"):
            model = _read_model(_checkpoint_path(args, cfg))
            inp = limited_inputs(model, F[None])[0]
            if src == "retrieved":
                R = retrieve_many(model, [inp])[0]
            else:
                _, _, records = _read_dataset(_dataset_path(args, cfg))
                R = nearest_sample(inp, np.stack([G for _, G in records[: cfg.n1]]))
            matrices[src] = FarFieldDataSet.from_msr(R, cfg.k)
        else:
            if not args.phaseless_checkpoint:
                raise ConfigError("phaseless_checkpoint", "phaseless-retrieved images need --phaseless-checkpoint")
            model = _read_model(args.phaseless_checkpoint)
            if model.mode != PHASELESS:
                raise ConfigError("phaseless_checkpoint", f"checkpoint mode is {model.mode}")
            R = retrieve_many(model, limited_inputs(model, F[None]))[0]
            matrices[src] = FarFieldDataSet.from_msr(R, cfg.k)
    c = centroid(curve)
    summary = {"centroid": c.tolist(), "noise": cfg.noise, "images": {}}
    written = []
    for src, data in matrices.items():
        img = dsm_indicator(data, grid)
        stem = f"image_{src}"
        write_pgm(img, out / f"{stem}.pgm")
        write_csv(img, out / f"{stem}.csv")
        written += [f"{stem}.pgm", f"{stem}.csv"]
        peak = img.argmax_point()
        summary["images"][src] = {"argmax": peak.tolist(), "displacement": float(np.hypot(*(peak - c)))}
        print(f"{src:>20s}: argmax ({peak[0]:+.3f}, {peak[1]:+.3f}), distance to centroid {summary['images'][src]['displacement']:.3f}")
    (out / "image_summary.json").write_text(json.dumps(summary, indent=2))
    write_manifest(out, "image", cfg, written + ["image_summary.json"])
    return EXIT_OK


def cmd_oracle(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    checks = oracles.run_all(far_field_scale=args.perturb_normalization)
    for c in checks:
        print(c.line())
    ok = all(c.passed for c in checks)
    (out / "oracle_report.json").write_text(json.dumps({"passed": ok, "checks": [c.as_dict() for c in checks]}, indent=2))
    write_manifest(out, "oracle", cfg, ["oracle_report.json"])
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "image": cmd_image,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value run configuration (defaults: desk scale)")
    common.add_argument("--out", default="runs/out", help="output directory")
    common.add_argument("--seed", type=int, help="override master_seed and train_seed")
    common.add_argument("--workers", type=int, help="override workers")
    common.add_argument("--deterministic", action="store_true", help="single-threaded BLAS for bitwise reproducibility")
    common.add_argument("--baseline", action="store_true", help="eval: add nearest-sample and zero baselines")
    common.add_argument("--noise", type=float, help="relative noise level added to measured far-field data")
    common.add_argument("--dataset", help="dataset file (default: <out>/dataset.msrd)")
    common.add_argument("--checkpoint", help="checkpoint file (default: <out>/model.msrn)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="msrcomplete", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-dataset", parents=[common], help="simulate a dataset of random obstacles")
    g.add_argument("--resume", action="store_true", help="continue from a partial file left by a failed run")
    sub.add_parser("train", parents=[common], help="train a retrieval network")
    sub.add_parser("eval", parents=[common], help="metrics of a checkpoint on the test records")
    im = sub.add_parser("image", parents=[common], help="DSM images from full, limited or retrieved data")
    im.add_argument("--source", choices=SOURCES + ("all",), default="all")
    target = im.add_mutually_exclusive_group()
    target.add_argument("--shape", choices=sorted(HELD_OUT), default="kite")
    target.add_argument("--index", type=int, help="dataset record instead of a named shape")
    im.add_argument("--phaseless-checkpoint", help="phaseless model for the phaseless-retrieved image")
    orc = sub.add_parser("oracle", parents=[common], help="forward-solver and gradient self-checks")
    orc.add_argument("--perturb-normalization", type=float, default=1.0, help=argparse.SUPPRESS)
    return ap


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, master_seed=args.seed, train_seed=args.seed)
    if args.workers is not None:
        cfg = dataclasses.replace(cfg, workers=args.workers)
    if args.noise is not None:
        cfg = dataclasses.replace(cfg, noise=args.noise)
    if args.deterministic:
        cfg = dataclasses.replace(cfg, deterministic=True)
    return cfg.validate()


def _thread_limit(deterministic: bool):
    if not deterministic:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=1)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve_config(args)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        with _thread_limit(cfg.deterministic):
            return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, TrainingError, DatasetGenerationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
