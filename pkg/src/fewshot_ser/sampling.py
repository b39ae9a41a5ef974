"""Selection likelihoods and adaptive pair formation.

Every training sample carries a likelihood ``pi`` (starting at 1) that grows
by ``lam * |prediction - one_hot|_1`` after each sweep. Pairs are drawn
within a (speaker, emotion) pool with probability proportional to ``pi``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SamplingError, ShapeError


@dataclass
class LikelihoodTable:
    ids: list[str]
    pi: np.ndarray
    lam: float = 0.1
    iteration: int = 1
    history: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.index = {uid: i for i, uid in enumerate(self.ids)}
        if len(self.index) != len(self.ids):
            raise ValueError("duplicate utterance ids in likelihood table")
        if self.lam < 0:
            raise ValueError("update rate must be non-negative")

    @classmethod
    def initial(cls, ids, lam=0.1):
        return cls(list(ids), np.ones(len(ids)), lam)

    def __getitem__(self, uid):
        return self.pi[self.index[uid]]

    def snapshot(self):
        return LikelihoodTable(list(self.ids), self.pi.copy(), self.lam, self.iteration)


def prediction_error(prediction, target):
    prediction = np.asarray(prediction, dtype=float)
    target = np.asarray(target, dtype=float)
    if prediction.shape != target.shape:
        raise ShapeError(f"prediction {prediction.shape} and target {target.shape} differ")
    return np.abs(prediction - target).sum(axis=-1)


def update_likelihood(table: LikelihoodTable, uid, prediction, target):
    """Add ``lam * l1_error`` to one sample's likelihood."""
    if uid not in table.index:
        raise KeyError(uid)
    if np.shape(prediction) != (3,) or np.shape(target) != (3,):
        raise ShapeError("prediction and target must have length 3")
    table.pi[table.index[uid]] += table.lam * prediction_error(prediction, target)
    return table


def sweep(table: LikelihoodTable, ids, predictions, targets):
    """Update every listed sample once, record history, advance the iteration."""
    errors = prediction_error(predictions, targets)
    rows = [table.index[uid] for uid in ids]
    table.pi[rows] += table.lam * errors
    table.iteration += 1
    table.history.append(table.pi.copy())
    return table


def selection_prob(table: LikelihoodTable, pool):
    """Normalised likelihoods over ``pool`` (a list of ids)."""
    if len(pool) == 0:
        raise SamplingError("cannot select from an empty pool")
    pi = np.array([table[uid] for uid in pool])
    return pi / pi.sum()


@dataclass(frozen=True)
class PairFormationPolicy:
    speaker_scoped: bool = True
    same_class_prob: float = 0.5
    max_retries: int = 50

    def __post_init__(self):
        if self.same_class_prob != 0.5:
            raise ValueError("same-class probability is fixed at 0.5")


@dataclass
class SamplePairBatch:
    xi: np.ndarray
    xj: np.ndarray
    same: np.ndarray
    yi: np.ndarray | None = None
    yj: np.ndarray | None = None
    ii: np.ndarray | None = None  # row indices into the source dataset
    jj: np.ndarray | None = None

    def __post_init__(self):
        self.xi = np.atleast_2d(np.asarray(self.xi, dtype=float))
        self.xj = np.atleast_2d(np.asarray(self.xj, dtype=float))
        self.same = np.atleast_1d(np.asarray(self.same, dtype=bool))
        if self.xi.shape != self.xj.shape or len(self.same) != len(self.xi):
            raise ShapeError("pair arrays disagree in length or width")
        if self.yi is not None and np.any((np.asarray(self.yi) == np.asarray(self.yj)) != self.same):
            raise ValueError("same-class flags inconsistent with labels")

    def __len__(self):
        return len(self.same)

    def take(self, rows):
        pick = lambda a: None if a is None else a[rows]  # noqa: E731
        return SamplePairBatch(
            self.xi[rows], self.xj[rows], self.same[rows],
            pick(self.yi), pick(self.yj), pick(self.ii), pick(self.jj),
        )


class PairSampler:
    """Draws pairs from a labelled sample set following the adaptive scheme.

    ``labels`` are emotion indices, ``speakers`` speaker ids; ``table`` holds
    one likelihood per row, keyed by ``ids``. With ``speaker_scoped=False``
    pools ignore the speaker.
    """

    def __init__(self, X, labels, speakers, ids, table: LikelihoodTable, policy=PairFormationPolicy(), n_classes=3):
        self.X = np.asarray(X, dtype=float)
        self.labels = np.asarray(labels, dtype=int)
        self.ids = list(ids)
        self.table = table
        self.policy = policy
        self.n_classes = n_classes
        self.rows = np.array([table.index[uid] for uid in self.ids])
        scopes = np.asarray(speakers) if policy.speaker_scoped else np.full(len(self.ids), "*")
        self.scopes = sorted(set(scopes.tolist()))
        self.pools: dict[tuple[str, int], np.ndarray] = {}
        for s in self.scopes:
            for c in range(n_classes):
                idx = np.flatnonzero((scopes == s) & (self.labels == c))
                if len(idx):
                    self.pools[(s, c)] = idx

    def pool(self, scope, emotion):
        return self.pools.get((scope, emotion))

    def _pick(self, rng, idx):
        w = self.table.pi[self.rows[idx]]
        cdf = np.cumsum(w)
        j = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        return idx[min(j, len(idx) - 1)]

    def form_pair(self, rng):
        """One pair ``(i, j, same)`` of row indices."""
        if not self.can_pair():
            raise SamplingError("no scope holds two emotions; different-class pairs are impossible")
        for _ in range(self.policy.max_retries):
            s = self.scopes[rng.integers(len(self.scopes))]
            ck = int(rng.integers(self.n_classes))
            a = rng.random()
            if a > self.policy.same_class_prob:
                cm = ck
            else:
                others = [c for c in range(self.n_classes) if c != ck]
                cm = others[rng.integers(len(others))]
            pi, pj = self.pool(s, ck), self.pool(s, cm)
            if pi is None or pj is None:
                continue
            return self._pick(rng, pi), self._pick(rng, pj), ck == cm
        raise SamplingError(f"no valid pair after {self.policy.max_retries} attempts")

    def sample(self, rng, n) -> SamplePairBatch:
        ii, jj, same = np.empty(n, dtype=int), np.empty(n, dtype=int), np.empty(n, dtype=bool)
        for p in range(n):
            ii[p], jj[p], same[p] = self.form_pair(rng)
        return SamplePairBatch(self.X[ii], self.X[jj], same, self.labels[ii], self.labels[jj], ii, jj)

    def can_pair(self):
        """True when both branches of pair formation are possible somewhere."""
        return any(
            sum((s, c) in self.pools for c in range(self.n_classes)) >= 2 for s in self.scopes
        )


def form_pair(rng, table: LikelihoodTable, dataset, policy=PairFormationPolicy()):
    """Draw one pair of feature vectors from a ``Dataset``."""
    sampler = PairSampler(dataset.X, dataset.labels, dataset.speakers, dataset.ids, table, policy)
    i, j, same = sampler.form_pair(rng)
    return dataset.vectors[i], dataset.vectors[j], bool(same)
