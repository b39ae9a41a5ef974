"""Iterative training with adaptive sample-pair formation.

Alternates ``epochs_per_iter`` epochs of joint training (pairs drawn in
proportion to selection likelihoods) with a sweep that raises each sample's
likelihood by its current prediction error.
"""
from __future__ import annotations

import csv
import logging

import numpy as np

from .config import Hyper
from .data import EMOTIONS
from .errors import UsageError
from .metric import Trainer, mels_epoch, mels_predict, support_sampler
from .sampling import LikelihoodTable, sweep

log = logging.getLogger(__name__)


def likelihood_sweep(model, table: LikelihoodTable, dataset):
    predictions = mels_predict(model, dataset.X)
    targets = np.eye(len(EMOTIONS))[dataset.labels]
    return sweep(table, dataset.ids, predictions, targets)


def train_mels_aspf(model, support, hyper: Hyper, rng, speaker_scoped=True, iterations=None):
    """Returns ``(model, table)``; ``table.history[t]`` holds the likelihoods
    in force during iteration ``t + 1`` (entry 0 is the all-ones start)."""
    if model.head is None:
        raise UsageError("model has no supervision head")
    iterations = hyper.iterations if iterations is None else iterations
    table = LikelihoodTable.initial(support.ids, hyper.lam)
    table.history.append(table.pi.copy())
    sampler = support_sampler(support, hyper, table, speaker_scoped)
    trainer = Trainer(model, hyper.lr)
    for _ in range(iterations):
        for _ in range(hyper.epochs_per_iter):
            model.train_losses.append(mels_epoch(model, trainer, sampler, support, hyper, rng))
        likelihood_sweep(model, table, support)
    return model, table


def write_pi_history(path, table: LikelihoodTable, label="", append=False):
    """CSV rows ``(label, iteration, utterance_id, pi)``; iteration 1 is the start."""
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if not append:
            w.writerow(["label", "iteration", "utterance_id", "pi"])
        for t, pi in enumerate(table.history, start=1):
            for uid, value in zip(table.ids, pi):
                w.writerow([label, t, uid, repr(float(value))])
