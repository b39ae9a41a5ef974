"""Experiment protocols, the FNN baseline, UAR scoring and PCA export."""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import nn
from .aspf import train_mels_aspf
from .config import Hyper
from .data import (
    EMOTIONS, Dataset, coerce_fields, few_shot_split, load_feature_csv, load_synthetic_config,
    loso_folds, parse_key_values, standardize, synth_generate,
)
from .errors import ConfigError, ExportError, MetricError, ProtocolError
from .metric import (
    SiameseModel, attach_head, compute_centers, finetune_mel, mel_classify_batch, mels_predict,
    pretrain_source, train_mels, _minibatches,
)

log = logging.getLogger(__name__)

METHODS = ("in_domain", "out_of_domain", "fnn_finetune", "mel", "mel_s", "mel_s_aspf")
FEW_SHOT = ("fnn_finetune", "mel", "mel_s", "mel_s_aspf")
FNN_DIMS = (64, 32, 16, 16, 3)
FNN_ACTS = ("rectifier", "rectifier", "rectifier", "sigmoid")


# --- metrics ------------------------------------------------------------------


def confusion_matrix(true, pred, n_classes=len(EMOTIONS)):
    cm = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(cm, (np.asarray(true, dtype=int), np.asarray(pred, dtype=int)), 1)
    return cm


def uar(cm):
    """Mean per-class recall over classes that have test samples."""
    cm = np.asarray(cm)
    rows = cm.sum(axis=1)
    if rows.sum() == 0:
        raise MetricError("empty confusion matrix")
    present = rows > 0
    if not present.all():
        log.warning("classes %s have no test samples; excluded from UAR",
                    [EMOTIONS[i] for i in np.flatnonzero(~present)])
    return float(np.mean(np.diag(cm)[present] / rows[present]))


# --- FNN baseline ---------------------------------------------------------------


def build_fnn(rng):
    return nn.DenseNet.build(FNN_DIMS, FNN_ACTS, rng)


def train_fnn(net: nn.DenseNet, X, labels, hyper: Hyper, rng, epochs=None):
    """Mini-batch Adam on the per-output cross-entropy of the sigmoid scores."""
    epochs = hyper.epochs if epochs is None else epochs
    X = np.asarray(X, dtype=float)
    if len(X) == 0 or epochs == 0:
        return net
    Y = np.eye(len(EMOTIONS))[np.asarray(labels, dtype=int)]
    state = nn.AdamState.for_net(net, lr=hyper.lr)
    for _ in range(epochs):
        order = rng.permutation(len(X))
        for sl in _minibatches(len(X), hyper.batch_size):
            rows = order[sl]
            out, cache = nn.forward(net, X[rows])
            loss, grad = nn.classification_loss(out, Y[rows])
            nn.adam_step(net, nn.backward(net, cache, grad), state)
    return net


def fnn_predict(net: nn.DenseNet, X):
    return np.argmax(nn.forward(net, np.atleast_2d(X))[0], axis=1)


def fnn_finetune(source: Dataset, support: Dataset, hyper: Hyper, rng, pretrained=None):
    """Pre-train on ``source`` (unless ``pretrained`` is given), then refine
    every layer on ``support`` with a fresh optimiser."""
    if pretrained is None:
        pretrained = train_fnn(build_fnn(rng), source.X, source.labels, hyper, rng)
    net = pretrained.copy()
    return train_fnn(net, support.X, support.labels, hyper, rng, hyper.finetune_epochs)


# --- PCA ----------------------------------------------------------------------


def pca(X, n_components=2):
    """Returns ``(coords, components, eigenvalues)`` of the covariance.

    Components are rows; each is signed so its largest-magnitude loading is
    positive.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) < 2:
        raise ExportError("PCA needs at least 2 samples")
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / len(X)
    w, v = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1][:n_components]
    comps = v[:, order].T
    signs = np.sign(comps[np.arange(len(comps)), np.argmax(np.abs(comps), axis=1)])
    comps = comps * np.where(signs == 0, 1.0, signs)[:, None]
    return centered @ comps.T, comps, w[order]


def last_hidden(model, X):
    """Activations of the layer feeding the model's decision output."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if isinstance(model, SiameseModel):
        emb = nn.forward(model.trunk, X)[0]
        if model.head is None:
            return emb
        return nn.forward(model.head, emb)[1].outputs[-2]
    return nn.forward(model, X)[1].outputs[-2]


def pca_export(model, dataset: Dataset):
    """Rows ``(utterance_id, emotion, pc1, pc2)``."""
    if len(dataset) < 2:
        raise ExportError("PCA export needs at least 2 samples")
    coords, _, _ = pca(last_hidden(model, dataset.X), 2)
    return [(v.utterance_id, v.emotion, float(a), float(b)) for v, (a, b) in zip(dataset.vectors, coords)]


# --- experiment specs -----------------------------------------------------------


def parse_k(text):
    ks = []
    for part in str(text).split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            ks.extend(range(int(lo), int(hi) + 1))
        elif part:
            ks.append(int(part))
    return ks


@dataclass
class ExperimentSpec:
    method: str
    sources: list[str] = field(default_factory=list)
    target: str = ""
    k_values: list[int] = field(default_factory=lambda: list(range(1, 11)))
    repetitions: int = 10
    seed: int = 0
    hyper: Hyper = field(default_factory=Hyper)
    synthetic: str = ""  # synthetic config path; replaces sources/target
    pca: bool = False
    pi_history: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.method in FEW_SHOT:
            if not self.k_values or any(not 1 <= k <= 10 for k in self.k_values):
                raise ConfigError("few-shot methods need k values in 1..10")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")


SPEC_KEYS = {"method", "source", "target", "k", "repetitions", "seed", "synthetic", "pca", "pi_history"}


def load_experiment_specs(path):
    """One spec per method listed in the file's ``method`` entry."""
    path = Path(path)
    kv = parse_key_values(path.read_text(), str(path))
    base = path.parent
    hyper_kv = {k: v for k, v in kv.items() if k not in SPEC_KEYS}
    hyper = Hyper(**coerce_fields(Hyper, hyper_kv, str(path)))
    if "method" not in kv:
        raise ConfigError(f"{path}: missing 'method'")
    resolve = lambda p: str((base / p).resolve()) if p else ""  # noqa: E731
    flag = lambda k: kv.get(k, "false").lower() in ("1", "true", "yes")  # noqa: E731
    try:
        common = dict(
            sources=[resolve(s.strip()) for s in kv.get("source", "").split(",") if s.strip()],
            target=resolve(kv.get("target", "")),
            k_values=parse_k(kv.get("k", "1-10")),
            repetitions=int(kv.get("repetitions", 10)),
            seed=int(kv.get("seed", 0)),
            synthetic=resolve(kv.get("synthetic", "")),
            pca=flag("pca"),
            pi_history=flag("pi_history"),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    specs = [ExperimentSpec(m.strip(), hyper=hyper, **common) for m in kv["method"].split(",") if m.strip()]
    if not specs:
        raise ConfigError(f"{path}: empty 'method'")
    return specs


def load_datasets(spec: ExperimentSpec):
    """Standardised ``(sources, target)``, each fitted on its own samples."""
    if spec.synthetic:
        src, tgt = synth_generate(load_synthetic_config(spec.synthetic))
        sources, target = [src], tgt
    else:
        if not spec.target:
            raise ConfigError("experiment needs a target dataset or a synthetic config")
        sources = [load_feature_csv(p, role="source") for p in spec.sources]
        target = load_feature_csv(spec.target, role="target")
    if spec.method != "in_domain" and not sources:
        raise ConfigError(f"method {spec.method} needs at least one source dataset")
    return [standardize(s) for s in sources], standardize(target)


def sub_seed(seed, *keys):
    """Stable child seed for a (seed, keys...) combination."""
    words = [int(seed)] + [zlib.crc32(str(k).encode()) for k in keys]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


# --- reports ------------------------------------------------------------------


@dataclass
class PhaseAudit:
    train_ids: frozenset
    test_ids: frozenset


@dataclass
class ExperimentRecord:
    method: str
    source: str
    k: int
    repetition: int
    cm: np.ndarray
    audits: list[PhaseAudit] = field(default_factory=list)

    @property
    def uar(self):
        return uar(self.cm)


@dataclass
class ExperimentReport:
    records: list[ExperimentRecord] = field(default_factory=list)
    pca_rows: list[tuple] = field(default_factory=list)  # (method, source, uid, emotion, pc1, pc2)
    pi_rows: list[tuple] = field(default_factory=list)  # (label, iteration, uid, pi)

    def extend(self, other: "ExperimentReport"):
        self.records += other.records
        self.pca_rows += other.pca_rows
        self.pi_rows += other.pi_rows
        return self

    def summary(self):
        """Rows ``(method, source, k, n, mean_uar, std_uar, pooled_uar)``.

        ``mean_uar`` averages per-repetition UARs; ``pooled_uar`` scores the
        summed confusion matrix.
        """
        groups: dict[tuple, list[ExperimentRecord]] = {}
        for r in self.records:
            groups.setdefault((r.method, r.source, r.k), []).append(r)
        rows = []
        for (method, source, k), recs in groups.items():
            scores = np.array([r.uar for r in recs])
            pooled = uar(sum(r.cm for r in recs))
            rows.append((method, source, k, len(recs), float(scores.mean()), float(scores.std()), pooled))
        return rows

    def mean_uar(self, method, source=None, k=0):
        scores = [r.uar for r in self.records
                  if r.method == method and r.k == k and (source is None or r.source == source)]
        if not scores:
            raise KeyError((method, source, k))
        return float(np.mean(scores))


def audit_leakage(report: ExperimentReport):
    """``(method, source, k, repetition, n_leaked)`` for every leaking phase."""
    bad = []
    for r in report.records:
        for a in r.audits:
            leaked = a.train_ids & a.test_ids
            if leaked:
                bad.append((r.method, r.source, r.k, r.repetition, len(leaked)))
    return bad


# --- protocols ----------------------------------------------------------------


def _ids(ds: Dataset):
    return frozenset(ds.ids)


def run_in_domain(spec: ExperimentSpec, target: Dataset | None = None):
    """LOSO on the target alone; one pooled confusion matrix per repetition."""
    if target is None:
        _, target = load_datasets(spec)
    report = ExperimentReport()
    folds = loso_folds(target)
    for rep in range(spec.repetitions):
        cm = np.zeros((3, 3), dtype=int)
        audits = []
        for f, (train, test) in enumerate(folds):
            rng = np.random.default_rng(sub_seed(spec.seed, "in_domain", rep, f))
            net = train_fnn(build_fnn(rng), train.X, train.labels, spec.hyper, rng)
            cm += confusion_matrix(test.labels, fnn_predict(net, test.X))
            audits.append(PhaseAudit(_ids(train), _ids(test)))
        report.records.append(ExperimentRecord("in_domain", target.name, 0, rep, cm, audits))
        if spec.pca and rep == 0:
            report.pca_rows += [("in_domain", target.name) + row for row in pca_export(net, target)]
    return report


def run_out_of_domain(spec: ExperimentSpec, sources=None, target=None):
    """Train on all of each source, test on all of the target."""
    if target is None:
        sources, target = load_datasets(spec)
    report = ExperimentReport()
    for source in sources:
        for rep in range(spec.repetitions):
            rng = np.random.default_rng(sub_seed(spec.seed, "out_of_domain", source.name, rep))
            net = train_fnn(build_fnn(rng), source.X, source.labels, spec.hyper, rng)
            cm = confusion_matrix(target.labels, fnn_predict(net, target.X))
            audit = PhaseAudit(_ids(source), _ids(target))
            report.records.append(ExperimentRecord("out_of_domain", source.name, 0, rep, cm, [audit]))
            if spec.pca and rep == 0:
                report.pca_rows += [("out_of_domain", source.name) + row for row in pca_export(net, target)]
    return report


def _pretrain(spec, source, cache):
    """Source-phase model for ``spec.method``, memoised in ``cache``."""
    family = "fnn" if spec.method == "fnn_finetune" else "siamese"
    key = (family, source.name, spec.seed)
    if key in cache:
        return cache[key]
    rng = np.random.default_rng(sub_seed(spec.seed, "pretrain", family, source.name))
    hyper = spec.hyper
    pi_rows = []
    if family == "fnn":
        model = train_fnn(build_fnn(rng), source.X, source.labels, hyper, rng)
    elif hyper.source_aspf:
        model = attach_head(pretrain_source(source, hyper, rng), rng, hyper.head_hidden)
        model, table = train_mels_aspf(model, source, hyper, rng, speaker_scoped=False)
        model.head = None
        pi_rows = _pi_rows(f"source:{source.name}", table)
    else:
        model = pretrain_source(source, hyper, rng)
    cache[key] = (model, pi_rows)
    return cache[key]


def _pi_rows(label, table):
    return [
        (label, t, uid, float(p))
        for t, pi in enumerate(table.history, start=1)
        for uid, p in zip(table.ids, pi)
    ]


def adapt_and_predict(method, pretrained, support: Dataset, test: Dataset, hyper: Hyper, rng):
    """Returns ``(predicted labels, adapted model, likelihood table or None)``."""
    table = None
    if method == "fnn_finetune":
        model = pretrained.copy()
        train_fnn(model, support.X, support.labels, hyper, rng, hyper.finetune_epochs)
        pred = fnn_predict(model, test.X)
    elif method == "mel":
        model = finetune_mel(pretrained.copy(), support, hyper, rng)
        pred = mel_classify_batch(model, test.X, compute_centers(support))
    elif method == "mel_s":
        model = train_mels(attach_head(pretrained, rng, hyper.head_hidden), support, hyper, rng)
        pred = np.argmax(mels_predict(model, test.X), axis=1)
    elif method == "mel_s_aspf":
        model = attach_head(pretrained, rng, hyper.head_hidden)
        model, table = train_mels_aspf(model, support, hyper, rng)
        pred = np.argmax(mels_predict(model, test.X), axis=1)
    else:
        raise ProtocolError(f"{method} is not a few-shot method")
    return pred, model, table


def run_few_shot(spec: ExperimentSpec, sources=None, target=None, cache=None):
    """k-sweep with repeated support draws; one record per (source, k, repetition).

    Splits depend only on ``(seed, k, repetition)``, so every method sees the
    same support and test sets.
    """
    if spec.method not in FEW_SHOT:
        raise ProtocolError(f"{spec.method} is not a few-shot method")
    if target is None:
        sources, target = load_datasets(spec)
    cache = {} if cache is None else cache
    report = ExperimentReport()
    for source in sources:
        pretrained, source_pi = _pretrain(spec, source, cache)
        if spec.pi_history:
            report.pi_rows += source_pi
        for k in spec.k_values:
            for rep in range(spec.repetitions):
                split = few_shot_split(target, k, sub_seed(spec.seed, "split", k, rep))
                rng = np.random.default_rng(sub_seed(spec.seed, spec.method, source.name, k, rep))
                pred, model, table = adapt_and_predict(
                    spec.method, pretrained, split.support, split.test, spec.hyper, rng
                )
                audits = [PhaseAudit(_ids(source), _ids(split.test)),
                          PhaseAudit(_ids(split.support), _ids(split.test))]
                cm = confusion_matrix(split.test.labels, pred)
                report.records.append(ExperimentRecord(spec.method, source.name, k, rep, cm, audits))
                if spec.pi_history and table is not None:
                    report.pi_rows += _pi_rows(f"{spec.method}:{source.name}:k{k}:r{rep}", table)
                if spec.pca and rep == 0 and k == spec.k_values[-1]:
                    report.pca_rows += [(spec.method, source.name) + row for row in pca_export(model, split.test)]
    return report


def run_experiment(spec: ExperimentSpec, sources=None, target=None, cache=None):
    if target is None:
        sources, target = load_datasets(spec)
    if spec.method == "in_domain":
        return run_in_domain(spec, target)
    if spec.method == "out_of_domain":
        return run_out_of_domain(spec, sources, target)
    return run_few_shot(spec, sources, target, cache)


def spec_lines(spec: ExperimentSpec):
    lines = [
        f"method = {spec.method}",
        f"source = {', '.join(spec.sources)}",
        f"target = {spec.target}",
        f"k = {','.join(map(str, spec.k_values))}",
        f"repetitions = {spec.repetitions}",
        f"seed = {spec.seed}",
        f"synthetic = {spec.synthetic}",
        f"pca = {str(spec.pca).lower()}",
        f"pi_history = {str(spec.pi_history).lower()}",
    ]
    lines += [f"{f.name} = {getattr(spec.hyper, f.name)}" for f in fields(Hyper)]
    return lines
