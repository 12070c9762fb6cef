"""Directional experiment: full objective versus stripped-down ablation.

For each seed this generates a fresh synthetic dataset (700 labeled train,
300 eval, 300 unlabeled, 220 compound), trains the full configuration and an
ablation with ranking, blending, and the unlabeled pool all disabled, then
reports eval-split ECE and the compound top-2 match rate. The expectation:
the full configuration has equal-or-lower median ECE and equal-or-higher
median top-2 rate.

Usage: python3 scripts/run_directional.py --out results/directional.csv
"""

import argparse
import csv
import os
import statistics
import sys
import tempfile
import time

from emorank import model as mdl
from emorank.calibration import compound_top2_eval
from emorank.dataio import (DatasetManifest, ToyGenConfig,
                            generate_compound_set, generate_toy_dataset,
                            load_dataset, samples_for_split, write_dataset)
from emorank.trainer import TrainConfig, train

ABLATION_OVERRIDES = dict(w_rank=0.0, syn_focal=False, fr_focal=False)


def make_dataset(root: str, seed: int) -> str:
    config = ToyGenConfig(n_train=700, n_eval=300, n_fr=300,
                          noise_sigma=0.05, seed=seed)
    manifest, images = generate_toy_dataset(config)
    compound, cimages = generate_compound_set(config, n_per_pair=20)
    merged = DatasetManifest(manifest.class_names,
                             manifest.entries + compound.entries)
    images.update(cimages)
    data = os.path.join(root, f"seed{seed}")
    write_dataset(data, merged, images)
    return data


def run_one(data: str, seed: int, epochs: int, ablation: bool):
    kwargs = dict(seed=seed, epochs=epochs)
    if ablation:
        kwargs.update(ABLATION_OVERRIDES)
    start = time.time()
    result = train(TrainConfig(**kwargs), data)
    elapsed = time.time() - start

    manifest, images = load_dataset(data)
    entries = manifest.split_entries("compound")
    samples = samples_for_split(manifest, images, "compound")
    probs = mdl.predict_probs(result.model, [s.image for s in samples])
    compound_result = compound_top2_eval(
        [p.values for p in probs], [(e.c1, e.c2) for e in entries])
    ece = result.state.log[-1].eval_ece
    return ece, compound_result.overall_rate, elapsed


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="results CSV path")
    parser.add_argument("--seeds", default="1,2,3",
                        help="comma-separated seed list")
    parser.add_argument("--epochs", type=int, default=60)
    args = parser.parse_args(argv)
    seeds = [int(s) for s in args.seeds.split(",")]

    rows = []
    with tempfile.TemporaryDirectory() as root:
        for seed in seeds:
            data = make_dataset(root, seed)
            for name, ablation in (("full", False), ("ablation", True)):
                ece, top2, elapsed = run_one(data, seed, args.epochs, ablation)
                rows.append((seed, name, ece, top2, elapsed))
                print(f"seed={seed} config={name} ece={ece:.4f} "
                      f"top2={top2:.4f} seconds={elapsed:.1f}")

    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["seed", "config", "eval_ece", "compound_top2", "seconds"])
        for seed, name, ece, top2, elapsed in rows:
            w.writerow([seed, name, f"{ece:.9f}", f"{top2:.9f}",
                        f"{elapsed:.2f}"])

    def median_of(name, col):
        return statistics.median(r[col] for r in rows if r[1] == name)

    ece_full, ece_abl = median_of("full", 2), median_of("ablation", 2)
    top2_full, top2_abl = median_of("full", 3), median_of("ablation", 3)
    print(f"median full:     ece={ece_full:.4f} top2={top2_full:.4f}")
    print(f"median ablation: ece={ece_abl:.4f} top2={top2_abl:.4f}")
    ok = ece_full <= ece_abl and top2_full >= top2_abl
    print("directional check:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
