"""Test error of the phased desk model as the training set doubles.

Usage: python3 scripts/data_scaling.py [--out DIR] [--epochs N] [--workers N]
"""

import argparse
import json
import logging
import time
from pathlib import Path

from msrcomplete.retrieval import (
    SplitSpec,
    compute_metrics,
    fit_model,
    generate_dataset,
    limited_inputs,
    make_pairs,
    retrieve_many,
)

SIZES = (250, 500, 1000, 2000)
N_TEST = 500


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/data_scaling")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--raw", action="store_true", help="train without standardization")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.time()
    ds = generate_dataset(max(SIZES) + N_TEST, k=5.0, two_m=32, master_seed=args.seed, workers=args.workers)
    mats = ds.matrices
    pairs = make_pairs(mats, 16)
    test = mats[max(SIZES) :]
    print(f"dataset: {len(ds)} records in {time.time() - t0:.1f}s", flush=True)

    rows = []
    for n1 in SIZES:
        t = time.time()
        split = SplitSpec(n1, N_TEST, test_start=max(SIZES))
        model = fit_model(pairs, split, epochs=args.epochs, batch_size=64, loss="l2", seed=args.seed, channels=(16, 8, 16, 8, 1), standardize=not args.raw)
        R = retrieve_many(model, limited_inputs(model, test))
        rep = compute_metrics(test, R, 16)
        e21 = rep.aggregate["norm"]["e21"]
        rows.append({"n1": n1, "e21_norm": e21, "final_loss": model.history[-1], "initial_loss": model.initial_loss, "seconds": time.time() - t})
        print(f"n1={n1:5d}  e21(norm)={100 * e21:6.2f}%  loss {model.initial_loss:.4g} -> {model.history[-1]:.4g}  ({time.time() - t:.0f}s)", flush=True)
    (out / "data_scaling.json").write_text(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
