"""Siamese metric learning: shared trunk, pair losses, centroid and
supervised classification, and the training loops built on them."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .config import Hyper
from .data import EMOTIONS
from .errors import ProtocolError, ShapeError, TrainingError, UsageError
from .sampling import LikelihoodTable, PairFormationPolicy, PairSampler, SamplePairBatch

log = logging.getLogger(__name__)

TRUNK_DIMS = (64, 32, 16, 16)
EMBED_DIM = TRUNK_DIMS[-1]
PARTS = ("trunk", "verification_head", "head")


@dataclass
class SiameseModel:
    trunk: nn.DenseNet
    verification_head: nn.DenseNet | None = None
    head: nn.DenseNet | None = None
    kappa: float = 1.0
    margin: float = 5.0
    distance: str = "euclidean"
    objective: str = "verification"
    train_losses: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.trunk.out_dim != EMBED_DIM:
            raise ShapeError(f"trunk must embed into {EMBED_DIM} dims")
        if self.head is not None and (self.head.in_dim != EMBED_DIM or self.head.out_dim != len(EMOTIONS)):
            raise ShapeError("head must map the embedding to 3 scores")
        if self.verification_head is not None and (
            self.verification_head.in_dim != EMBED_DIM or self.verification_head.out_dim != 1
        ):
            raise ShapeError("verification head must map the embedding difference to 1 output")

    def copy(self):
        cp = lambda n: None if n is None else n.copy()  # noqa: E731
        return SiameseModel(
            self.trunk.copy(), cp(self.verification_head), cp(self.head),
            self.kappa, self.margin, self.distance, self.objective, list(self.train_losses),
        )


def build_trunk(rng, in_dim=TRUNK_DIMS[0]):
    dims = (in_dim,) + TRUNK_DIMS[1:]
    return nn.DenseNet.build(dims, ["rectifier"] * (len(dims) - 1), rng)


def build_head(rng, hidden=8):
    return nn.DenseNet.build((EMBED_DIM, hidden, len(EMOTIONS)), ["rectifier", "sigmoid"], rng)


def build_verification_head(rng):
    return nn.DenseNet.build((EMBED_DIM, 1), ["sigmoid"], rng)


def build_model(rng, hyper: Hyper = Hyper(), with_head=False):
    return SiameseModel(
        build_trunk(rng),
        build_verification_head(rng) if hyper.objective == "verification" else None,
        build_head(rng, hyper.head_hidden) if with_head else None,
        hyper.kappa, hyper.margin, hyper.distance, hyper.objective,
    )


def _values(x):
    return x.values if hasattr(x, "values") else np.asarray(x, dtype=float)


def embed(model: SiameseModel, x):
    return nn.forward(model.trunk, _values(x))[0]


def _distance(diff, kind):
    sq = (diff * diff).sum(axis=-1)
    return sq if kind == "sqeuclidean" else np.sqrt(sq)


def pair_distance(model: SiameseModel, xi, xj):
    return float(_distance(embed(model, xi) - embed(model, xj), model.distance))


# --- losses -------------------------------------------------------------
# Each returns (loss, {part: nn.Gradients}); trunk gradients accumulate the
# contributions of both siamese streams in a single parameter store.


def _trunk_pair_forward(model, batch: SamplePairBatch):
    b = len(batch)
    emb, cache = nn.forward(model.trunk, np.vstack([batch.xi, batch.xj]))
    return emb[:b], emb[b:], cache


def _trunk_pair_backward(model, cache, g_ei, g_ej):
    return nn.backward(model.trunk, cache, np.vstack([g_ei, g_ej]))


def mel_loss(model: SiameseModel, batch: SamplePairBatch):
    """``sum_same d - kappa * sum_diff min(d, margin)`` and its gradients."""
    if len(batch) == 0:
        raise UsageError("empty pair batch")
    ei, ej, cache = _trunk_pair_forward(model, batch)
    diff = ei - ej
    d = _distance(diff, model.distance)
    diff_term = np.minimum(d, model.margin)
    same = batch.same
    loss = float(d[same].sum() - model.kappa * diff_term[~same].sum())
    dl_dd = np.where(same, 1.0, np.where(d < model.margin, -model.kappa, 0.0))
    if model.distance == "sqeuclidean":
        dd_dei = 2.0 * diff
    else:
        safe = np.where(d > 0, d, 1.0)
        dd_dei = np.where(d[:, None] > 0, diff / safe[:, None], 0.0)
    g = dl_dd[:, None] * dd_dei
    return loss, {"trunk": _trunk_pair_backward(model, cache, g, -g)}


def verification_scores(model: SiameseModel, xi, xj):
    """P(same emotion) for each pair."""
    if model.verification_head is None:
        raise UsageError("model has no verification head")
    ei, ej = embed(model, np.atleast_2d(xi)), embed(model, np.atleast_2d(xj))
    return nn.forward(model.verification_head, np.abs(ei - ej))[0][:, 0]


def verification_loss(model: SiameseModel, batch: SamplePairBatch):
    """Summed binary cross-entropy of the same/different prediction."""
    if model.verification_head is None:
        raise UsageError("model has no verification head")
    ei, ej, cache = _trunk_pair_forward(model, batch)
    diff = ei - ej
    p, vcache = nn.forward(model.verification_head, np.abs(diff))
    loss, dp = nn.binary_cross_entropy(p, batch.same.astype(float)[:, None])
    vg = nn.backward(model.verification_head, vcache, dp)
    g = vg.inputs * np.sign(diff)
    trunk_g = _trunk_pair_backward(model, cache, g, -g)
    return loss, {"trunk": trunk_g, "verification_head": vg}


def pair_loss(model: SiameseModel, batch: SamplePairBatch):
    if model.objective == "distance":
        return mel_loss(model, batch)
    return verification_loss(model, batch)


def supervised_loss(model: SiameseModel, X, labels):
    """Cross-entropy of the head's sigmoid scores, through head and trunk."""
    if model.head is None:
        raise UsageError("model has no supervision head")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.eye(len(EMOTIONS))[np.asarray(labels, dtype=int)]
    emb, tcache = nn.forward(model.trunk, X)
    scores, hcache = nn.forward(model.head, emb)
    loss, ds = nn.classification_loss(scores, y)
    hg = nn.backward(model.head, hcache, ds)
    tg = nn.backward(model.trunk, tcache, hg.inputs)
    return loss, {"trunk": tg, "head": hg}


def joint_loss(model: SiameseModel, batch: SamplePairBatch | None, X=None, labels=None, distance_weight=1.0):
    """Supervised cross-entropy on ``(X, labels)`` plus weighted pair loss."""
    total, grads = 0.0, {}
    if X is not None and len(X):
        total, grads = supervised_loss(model, X, labels)
    if batch is not None and len(batch) and distance_weight != 0:
        ld, gd = pair_loss(model, batch)
        total += distance_weight * ld
        for part, g in gd.items():
            g.scale_(distance_weight)
            if part in grads:
                grads[part].add_(g)
            else:
                grads[part] = g
    return total, grads


# --- training -------------------------------------------------------------


class Trainer:
    """Adam states for the parts of a model being trained."""

    def __init__(self, model: SiameseModel, lr, parts=PARTS):
        self.model = model
        self.states = {
            p: nn.AdamState.for_net(getattr(model, p), lr=lr) for p in parts if getattr(model, p) is not None
        }

    def step(self, loss, grads):
        if not np.isfinite(loss):
            raise TrainingError(f"loss became {loss}")
        for part, g in grads.items():
            if part in self.states:
                nn.adam_step(getattr(self.model, part), g, self.states[part])


def _minibatches(n, batch_size):
    return [slice(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]


def train_mel(model: SiameseModel, pairs: PairSampler, hyper: Hyper, rng, epochs=None, n_pairs=None, trainer=None):
    """Train the trunk (and verification head) on pairs from ``pairs``.

    Each epoch draws ``n_pairs`` fresh pairs (default: one per sample).
    """
    epochs = hyper.epochs if epochs is None else epochs
    n_pairs = n_pairs or hyper.pairs_per_epoch or len(pairs.X)
    trainer = trainer or Trainer(model, hyper.lr, ("trunk", "verification_head"))
    for _ in range(epochs):
        batch = pairs.sample(rng, n_pairs)
        epoch_loss = 0.0
        for sl in _minibatches(n_pairs, hyper.batch_size):
            loss, grads = pair_loss(model, batch.take(sl))
            trainer.step(loss, grads)
            epoch_loss += loss
        model.train_losses.append(epoch_loss / n_pairs)
    return model


def make_sampler(dataset, hyper: Hyper, speaker_scoped, table=None):
    table = table or LikelihoodTable.initial(dataset.ids, hyper.lam)
    policy = PairFormationPolicy(speaker_scoped=speaker_scoped, max_retries=hyper.max_retries)
    return PairSampler(dataset.X, dataset.labels, dataset.speakers, dataset.ids, table, policy)


def pretrain_source(source, hyper: Hyper, rng, with_head=False):
    """Fresh model trained on source pairs drawn without regard to speaker."""
    model = build_model(rng, hyper, with_head=with_head)
    train_mel(model, make_sampler(source, hyper, speaker_scoped=False), hyper, rng)
    return model


def finetune_mel(model: SiameseModel, support, hyper: Hyper, rng, epochs=None):
    """Refine the trunk on within-speaker support pairs."""
    sampler = make_sampler(support, hyper, speaker_scoped=True)
    if not sampler.can_pair():
        log.warning("support cannot form different-emotion pairs; trunk not refined")
        return model
    return train_mel(model, sampler, hyper, rng, hyper.finetune_epochs if epochs is None else epochs)


# --- centroid classification ---------------------------------------------


@dataclass
class ClassCenters:
    centers: dict[str, np.ndarray]

    def complete(self):
        return all(e in self.centers for e in EMOTIONS)


def compute_centers(support) -> ClassCenters:
    """Per-emotion mean of the support vectors, in input space."""
    vectors = support.vectors if hasattr(support, "vectors") else list(support)
    if not vectors:
        raise ProtocolError("empty support set")
    centers = {}
    for e in EMOTIONS:
        rows = [v.values for v in vectors if v.emotion == e]
        if rows:
            centers[e] = np.mean(rows, axis=0)
    return ClassCenters(centers)


def center_distances(model: SiameseModel, X, centers: ClassCenters):
    """Distances ``(n, 3)`` from embedded inputs to embedded centers, EMOTIONS order."""
    if not centers.complete():
        missing = [e for e in EMOTIONS if e not in centers.centers]
        raise ProtocolError(f"no support samples for {', '.join(missing)}")
    emb = embed(model, np.atleast_2d(X))
    cemb = embed(model, np.stack([centers.centers[e] for e in EMOTIONS]))
    return _distance(emb[:, None, :] - cemb[None, :, :], model.distance)


def mel_classify_batch(model: SiameseModel, X, centers: ClassCenters):
    """Label indices; ``argmin`` returns the first minimum, i.e. EMOTIONS order on ties."""
    return np.argmin(center_distances(model, X, centers), axis=1)


def mel_classify(model: SiameseModel, x, centers: ClassCenters):
    return EMOTIONS[int(mel_classify_batch(model, _values(x), centers)[0])]


# --- supervised head --------------------------------------------------------


def mels_predict(model: SiameseModel, x):
    """Class scores normalised to sum to one (rows for a batch)."""
    if model.head is None:
        raise UsageError("model has no supervision head")
    x = _values(x)
    scores = nn.forward(model.head, nn.forward(model.trunk, x)[0])[0]
    return nn.normalize_scores(scores)


def attach_head(model: SiameseModel, rng, hidden=8):
    model = model.copy()
    model.head = build_head(rng, hidden)
    return model


def mels_epoch(model, trainer, sampler: PairSampler | None, support, hyper: Hyper, rng):
    """One epoch of the joint objective.

    Pairs come from ``sampler``; the supervised term uses the pair members.
    Without a sampler the supervised term runs over shuffled support rows.
    """
    if sampler is None:
        order = rng.permutation(len(support))
        X, y = support.X[order], support.labels[order]
        total = 0.0
        for sl in _minibatches(len(order), hyper.batch_size):
            loss, grads = supervised_loss(model, X[sl], y[sl])
            trainer.step(loss, grads)
            total += loss
        return total / max(len(order), 1)
    n_pairs = hyper.pairs_per_epoch or len(support)
    batch = sampler.sample(rng, n_pairs)
    total = 0.0
    for sl in _minibatches(n_pairs, hyper.batch_size):
        sub = batch.take(sl)
        X = np.vstack([sub.xi, sub.xj])
        y = np.concatenate([sub.yi, sub.yj])
        loss, grads = joint_loss(model, sub, X, y, hyper.distance_weight)
        trainer.step(loss, grads)
        total += loss
    return total / n_pairs


def support_sampler(support, hyper: Hyper, table=None, speaker_scoped=True):
    sampler = make_sampler(support, hyper, speaker_scoped, table)
    if not sampler.can_pair():
        log.warning("support too small to form pairs; distance term skipped")
        return None
    return sampler


def train_mels(model: SiameseModel, support, hyper: Hyper, rng, epochs=None):
    """Joint supervised + pair training of trunk and head on the support set."""
    if model.head is None:
        raise UsageError("model has no supervision head")
    epochs = hyper.finetune_epochs if epochs is None else epochs
    sampler = support_sampler(support, hyper)
    trainer = Trainer(model, hyper.lr)
    for _ in range(epochs):
        model.train_losses.append(mels_epoch(model, trainer, sampler, support, hyper, rng))
    return model


# --- checkpoints --------------------------------------------------------------


def save_model(path, model: SiameseModel):
    arrays = {}
    for part in PARTS:
        net = getattr(model, part)
        if net is not None:
            arrays.update(nn.net_arrays(net, prefix=f"{part}."))
    meta = {
        "kappa": model.kappa, "margin": model.margin, "distance": model.distance,
        "objective": model.objective, "parts": [p for p in PARTS if getattr(model, p) is not None],
    }
    np.savez(path, metadata=json.dumps(meta, sort_keys=True), **arrays)


def load_model(path) -> SiameseModel:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["metadata"]))
        nets = {p: nn.net_from_arrays(data, prefix=f"{p}.") for p in meta["parts"]}
    return SiameseModel(
        nets["trunk"], nets.get("verification_head"), nets.get("head"),
        meta["kappa"], meta["margin"], meta["distance"], meta["objective"],
    )

