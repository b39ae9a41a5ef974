"""Calibrate the synthetic transfer benchmark.

Prints nearest-centroid oracle UARs (in-domain on the target, and
source-centroids applied to the target) next to the out-of-domain FNN,
MeL-S and MeL-S-ASPF few-shot scores for a grid of generator settings.
"""
import argparse
import itertools
import time

import numpy as np

from fewshot_ser.data import SyntheticConfig, standardize, synth_generate, loso_folds
from fewshot_ser.harness import ExperimentSpec, confusion_matrix, run_few_shot, run_out_of_domain, uar


def centroid_uar(train, test):
    centers = np.stack([train.X[train.labels == c].mean(0) for c in range(3)])
    pred = np.argmin(((test.X[:, None, :] - centers[None]) ** 2).sum(-1), axis=1)
    return uar(confusion_matrix(test.labels, pred))


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--separation", type=float, nargs="+", default=[6.0])
    p.add_argument("--rotation", type=float, nargs="+", default=[3.0])
    p.add_argument("--k", type=int, nargs="+", default=[2])
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=250)
    args = p.parse_args()
    for sep, rot in itertools.product(args.separation, args.rotation):
        cfg = SyntheticConfig(separation=sep, rotation=rot, seed=args.seed)
        src, tgt = (standardize(d) for d in synth_generate(cfg))
        loso = np.mean([centroid_uar(tr, te) for tr, te in loso_folds(tgt)])
        print(f"sep={sep} rot={rot}: centroid in-domain LOSO {loso:.3f}, source->target {centroid_uar(src, tgt):.3f}")
        cache = {}
        t0 = time.time()
        spec = ExperimentSpec("out_of_domain", repetitions=args.reps, seed=args.seed)
        spec.hyper.epochs = args.epochs
        ood = run_out_of_domain(spec, [src], tgt)
        print(f"  out_of_domain {ood.mean_uar('out_of_domain'):.3f}")
        for method in ("mel", "mel_s", "mel_s_aspf", "fnn_finetune"):
            spec = ExperimentSpec(method, k_values=args.k, repetitions=args.reps, seed=args.seed)
            spec.hyper.epochs = args.epochs
            rep = run_few_shot(spec, [src], tgt, cache)
            print("  " + method + " " + " ".join(f"k={k}:{rep.mean_uar(method, k=k):.3f}" for k in args.k))
        print(f"  ({time.time() - t0:.0f}s)")


if __name__ == "__main__":
    main()
