"""CNN retrieval against the nearest-sample and zero-prediction baselines.

Trains phased and phaseless desk models (or loads them from --out), then
reports test-set errors and the held-out square / unit-circle comparison,
including DSM images of each matrix.

Usage: python3 scripts/baselines.py [--out DIR] [--epochs N] [--n1 N]
"""

import argparse
import json
import logging
import time
from pathlib import Path

import numpy as np

from msrcomplete.forward import WaveContext
from msrcomplete.geometry import SquareRadius, centroid, circle
from msrcomplete.imaging import FarFieldDataSet, dsm_indicator, write_pgm
from msrcomplete.msr import PHASED, PHASELESS, DirectionGrid, assemble_msr
from msrcomplete.retrieval import (
    Dataset,
    RetrievalModel,
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

K, TWO_M, M1, N_TEST = 5.0, 32, 16, 500


def norm_errors(true, retrieved):
    agg = compute_metrics(true, retrieved, M1).aggregate["norm"]
    return {key: 100 * agg[key] for key in ("e11", "e21", "e22", "e")}


def load_or_train(out, ds, mode, n1, epochs):
    path = out / f"model_{mode}_{n1}.msrn"
    if path.exists():
        return RetrievalModel.load(path)
    pairs = make_pairs(ds, M1, mode)
    t = time.time()
    model = fit_model(pairs, SplitSpec(n1, N_TEST), epochs=epochs, batch_size=64, channels=(16, 8, 16, 8, 1), standardize=True)
    print(f"trained {mode} on {n1} samples in {time.time() - t:.0f}s", flush=True)
    model.save(path)
    return model


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/baselines")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--n1", type=int, default=2000)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    data_path = out / "dataset.msrd"
    count = args.n1 + N_TEST
    if data_path.exists():
        ds = Dataset.load(data_path)
    else:
        ds = generate_dataset(count, K, TWO_M, master_seed=0, workers=args.workers, path=data_path)
    mats = ds.matrices
    train, test = mats[: args.n1], mats[args.n1 : args.n1 + N_TEST]

    results = {"test_set": {}, "held_out": {}}
    for mode in (PHASED, PHASELESS):
        model = load_or_train(out, ds, mode, args.n1, args.epochs)
        inputs = limited_inputs(model, test)
        nearest = np.stack([nearest_sample(inp, train) for inp in inputs])
        results["test_set"][mode] = {
            "cnn": norm_errors(test, retrieve_many(model, inputs)),
            "nearest_sample": norm_errors(test, nearest),
            "zero_prediction": norm_errors(test, zero_prediction(inputs)),
        }

    shapes = {"square": (SquareRadius(), True, PHASED), "circle": (circle(1.0), False, PHASELESS)}
    for name, (curve, graded, mode) in shapes.items():
        model = load_or_train(out, ds, mode, args.n1, args.epochs)
        F = assemble_msr(curve, WaveContext(K, 128, graded=graded), DirectionGrid(TWO_M)).entries
        inp = limited_inputs(model, [F])[0]
        candidates = {
            "full": FarFieldDataSet.from_msr(F, K),
            "limited": FarFieldDataSet.from_msr(F, K, np.arange(M1), np.arange(M1, TWO_M)),
            "cnn": FarFieldDataSet.from_msr(retrieve_many(model, [inp])[0], K),
            "nearest_sample": FarFieldDataSet.from_msr(nearest_sample(inp, train), K),
        }
        entry = {"mode": mode, "errors": {}, "argmax_displacement": {}}
        for src, data in candidates.items():
            if src in ("cnn", "nearest_sample"):
                entry["errors"][src] = norm_errors(F, data.values)
            img = dsm_indicator(data)
            write_pgm(img, out / f"{name}_{src}.pgm")
            entry["argmax_displacement"][src] = float(np.hypot(*(img.argmax_point() - centroid(curve))))
        results["held_out"][name] = entry

    (out / "baselines.json").write_text(json.dumps(results, indent=2))
    for mode, block in results["test_set"].items():
        for who, e in block.items():
            print(f"test {mode:9s} {who:15s} e21 {e['e21']:6.2f}%  e {e['e']:6.2f}%")
    for name, entry in results["held_out"].items():
        for who, e in entry["errors"].items():
            print(f"{name:6s} {who:15s} e {e['e']:6.2f}%")
        print(f"{name:6s} argmax displacement " + ", ".join(f"{s} {d:.3f}" for s, d in entry["argmax_displacement"].items()))


if __name__ == "__main__":
    main()
