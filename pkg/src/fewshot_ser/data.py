"""Datasets, feature CSV I/O, few-shot and LOSO splits, synthetic corpora."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, fields, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, InputError, ParseError, ProtocolError, SchemaError
from .features import FEATURE_DIM, apply_standardizer, fit_standardizer

log = logging.getLogger(__name__)

EMOTIONS = ("anger", "happiness", "sadness")
DOMAINS = ("source", "target")
CSV_HEADER = ["utterance_id", "speaker_id", "emotion", "domain"] + [f"f{i}" for i in range(FEATURE_DIM)]


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    utterance_id: str
    speaker_id: str
    emotion: str
    domain: str = "target"

    def __post_init__(self):
        if self.emotion not in EMOTIONS:
            raise SchemaError(f"unknown emotion {self.emotion!r}")
        if self.domain not in DOMAINS:
            raise SchemaError(f"unknown domain {self.domain!r}")
        if not self.speaker_id:
            raise SchemaError(f"{self.utterance_id}: empty speaker id")

    @property
    def label(self):
        return EMOTIONS.index(self.emotion)

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return (
            (self.utterance_id, self.speaker_id, self.emotion, self.domain)
            == (other.utterance_id, other.speaker_id, other.emotion, other.domain)
            and np.array_equal(self.values, other.values)
        )


@dataclass(eq=False)
class Dataset:
    name: str
    vectors: list[FeatureVector]
    role: str = "target"

    def __len__(self):
        return len(self.vectors)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.name == other.name and self.role == other.role and self.vectors == other.vectors

    @cached_property
    def X(self):
        if not self.vectors:
            return np.zeros((0, FEATURE_DIM))
        return np.stack([v.values for v in self.vectors])

    @cached_property
    def labels(self):
        return np.array([v.label for v in self.vectors], dtype=int)

    @cached_property
    def speakers(self):
        return np.array([v.speaker_id for v in self.vectors])

    @cached_property
    def ids(self):
        return [v.utterance_id for v in self.vectors]

    def subset(self, indices, name=None):
        return Dataset(name or self.name, [self.vectors[i] for i in indices], self.role)

    def cells(self):
        """``{(speaker, emotion): [indices]}`` in sorted key order."""
        out: dict[tuple[str, str], list[int]] = {}
        for i, v in enumerate(self.vectors):
            out.setdefault((v.speaker_id, v.emotion), []).append(i)
        return dict(sorted(out.items()))

    def with_values(self, X, name=None):
        vectors = [replace(v, values=np.asarray(x, dtype=float)) for v, x in zip(self.vectors, X)]
        return Dataset(name or self.name, vectors, self.role)


def standardize(dataset: Dataset) -> Dataset:
    """Z-score a dataset with statistics fitted on itself."""
    stats = fit_standardizer(dataset.X, dataset.name)
    return dataset.with_values(apply_standardizer(stats, dataset.X))


def write_feature_csv(path, dataset: Dataset):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for v in dataset.vectors:
            w.writerow([v.utterance_id, v.speaker_id, v.emotion, v.domain] + [repr(float(x)) for x in v.values])


def load_feature_csv(path, name=None, role=None) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: no such file")
    vectors = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise SchemaError(f"{path}: header does not match the feature CSV schema")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise ParseError(f"expected {len(CSV_HEADER)} columns, got {len(row)}", line=lineno)
            uid, spk, emo, dom = row[:4]
            if emo not in EMOTIONS:
                raise SchemaError(f"line {lineno}: unknown emotion {emo!r}")
            try:
                values = np.array([float(x) for x in row[4:]])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            try:
                vectors.append(FeatureVector(values, uid, spk, emo, dom))
            except SchemaError as exc:
                raise SchemaError(f"line {lineno}: {exc}") from None
    if role is None:
        role = vectors[0].domain if vectors else "target"
    return Dataset(name or path.stem, vectors, role)


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    speaker_id: str
    emotion: str
    domain: str


def read_manifest(path):
    """CSV with columns ``path,speaker_id,emotion,domain``; relative paths
    resolve against the manifest's directory."""
    path = Path(path)
    entries = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["path", "speaker_id", "emotion", "domain"]:
            raise SchemaError(f"{path}: manifest header must be path,speaker_id,emotion,domain")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"expected 4 columns, got {len(row)}", line=lineno)
            wav, spk, emo, dom = row
            if emo not in EMOTIONS:
                raise SchemaError(f"line {lineno}: unknown emotion {emo!r}")
            if dom not in DOMAINS:
                raise SchemaError(f"line {lineno}: unknown domain {dom!r}")
            entries.append(ManifestEntry(path.parent / wav, spk, emo, dom))
    return entries


# --- splits -----------------------------------------------------------------


@dataclass
class FewShotSplit:
    support: Dataset
    test: Dataset
    k: int
    seed: int


def few_shot_split(target: Dataset, k: int, seed: int) -> FewShotSplit:
    """Draw ``k`` labelled clips per (speaker, emotion); the rest is test."""
    if not 1 <= k <= 10:
        raise ProtocolError(f"k must be in 1..10, got {k}")
    rng = np.random.default_rng(seed)
    cells = target.cells()
    speakers = sorted({s for s, _ in cells})
    emotions = sorted({e for _, e in cells}, key=EMOTIONS.index)
    for s in speakers:
        for e in emotions:
            if (s, e) not in cells:
                log.warning("speaker %s has no %s samples; cell skipped", s, e)
    support_idx = []
    for idx in cells.values():
        take = min(k, len(idx))
        support_idx.extend(np.asarray(idx)[rng.permutation(len(idx))[:take]].tolist())
    support_idx.sort()
    chosen = set(support_idx)
    test_idx = [i for i in range(len(target)) if i not in chosen]
    if not test_idx:
        raise ProtocolError(f"k={k} leaves no test samples")
    return FewShotSplit(target.subset(support_idx), target.subset(test_idx), k, seed)


def loso_folds(dataset: Dataset):
    """One ``(train, test)`` pair per speaker, in sorted speaker order."""
    speakers = sorted(set(dataset.speakers.tolist()))
    if len(speakers) < 2:
        raise ProtocolError("leave-one-subject-out needs at least 2 speakers")
    folds = []
    for s in speakers:
        mask = dataset.speakers == s
        folds.append((dataset.subset(np.flatnonzero(~mask)), dataset.subset(np.flatnonzero(mask))))
    return folds


# --- synthetic corpora ------------------------------------------------------


@dataclass
class SyntheticConfig:
    """Gaussian emotion clusters with a rotated, translated target domain.

    Class means form an equilateral simplex with side ``separation`` (in
    units of ``noise_std``) inside a random 3-d subspace, unless ``means``
    is given. ``rotation`` is the largest plane angle (radians) of the
    source-to-target rotation; ``shift`` the norm of the translation.
    """

    dims: int = FEATURE_DIM
    separation: float = 6.0
    noise_std: float = 1.0
    shift: float = 3.0
    rotation: float = 3.0
    speaker_std: float = 0.3
    source_speakers: int = 8
    target_speakers: int = 6
    source_samples: int = 25
    target_samples: int = 15
    seed: int = 0
    source_name: str = "synth-source"
    target_name: str = "synth-target"
    means: np.ndarray | None = field(default=None, repr=False)
    covariances: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.target_speakers < 2:
            raise ConfigError("need at least 2 target speakers")
        if min(self.dims, self.source_speakers, self.source_samples, self.target_samples) < 1:
            raise ConfigError("dims, speaker and sample counts must be positive")
        if self.dims < len(EMOTIONS) and self.means is None:
            raise ConfigError(f"dims must be >= {len(EMOTIONS)} for generated means")
        if self.noise_std < 0 or self.speaker_std < 0:
            raise ConfigError("standard deviations must be non-negative")
        if self.means is not None and np.shape(self.means) != (len(EMOTIONS), self.dims):
            raise ConfigError(f"means must have shape ({len(EMOTIONS)}, {self.dims})")
        if self.covariances is not None:
            cov = np.asarray(self.covariances, dtype=float)
            if cov.shape != (len(EMOTIONS), self.dims, self.dims):
                raise ConfigError(f"covariances must have shape ({len(EMOTIONS)}, {self.dims}, {self.dims})")
            for c, m in enumerate(cov):
                if not np.allclose(m, m.T) or np.linalg.eigvalsh(m).min() < -1e-10:
                    raise ConfigError(f"covariance for {EMOTIONS[c]} is not positive semi-definite")


def _cluster_params(cfg: SyntheticConfig, rng):
    if cfg.means is not None:
        means = np.asarray(cfg.means, dtype=float)
    else:
        q, _ = np.linalg.qr(rng.normal(size=(cfg.dims, len(EMOTIONS))))
        means = cfg.separation * cfg.noise_std / np.sqrt(2.0) * q.T
    if cfg.covariances is not None:
        factors = []
        for cov in np.asarray(cfg.covariances, dtype=float):
            w, v = np.linalg.eigh(cov)
            factors.append(v * np.sqrt(np.clip(w, 0.0, None)))
    else:
        factors = [cfg.noise_std * np.eye(cfg.dims)] * len(EMOTIONS)
    return means, factors


def _random_rotation(dims, angle, rng):
    b = rng.normal(size=(dims, dims))
    a = b - b.T
    norm = np.linalg.norm(a, 2)
    if angle == 0 or norm == 0:
        return np.eye(dims)
    return expm(angle * a / norm)


def _draw(cfg, rng, means, factors, n_speakers, n_samples, domain, prefix, transform=None):
    vectors = []
    for s in range(n_speakers):
        offset = rng.normal(scale=cfg.speaker_std, size=cfg.dims)
        speaker = f"{prefix}-spk{s:02d}"
        for c, emotion in enumerate(EMOTIONS):
            z = rng.normal(size=(n_samples, cfg.dims))
            x = means[c] + z @ factors[c].T
            if transform is not None:
                x = transform(x)
            x = x + offset
            for i, row in enumerate(x):
                uid = f"{speaker}-{emotion[:3]}-{i:03d}"
                vectors.append(FeatureVector(row, uid, speaker, emotion, domain))
    return vectors


def synth_generate(cfg: SyntheticConfig):
    """Returns ``(source, target)`` raw (unstandardised) datasets."""
    rng = np.random.default_rng(cfg.seed)
    means, factors = _cluster_params(cfg, rng)
    rot = _random_rotation(cfg.dims, cfg.rotation, rng)
    direction = rng.normal(size=cfg.dims)
    translation = cfg.shift * direction / np.linalg.norm(direction)
    source = _draw(cfg, rng, means, factors, cfg.source_speakers, cfg.source_samples, "source", "src")
    target = _draw(
        cfg, rng, means, factors, cfg.target_speakers, cfg.target_samples, "target", "tgt",
        transform=lambda x: x @ rot.T + translation,
    )
    return Dataset(cfg.source_name, source, "source"), Dataset(cfg.target_name, target, "target")


def parse_key_values(text, source="<config>"):
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source}: expected 'key = value'", line=lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ParseError(f"{source}: empty key", line=lineno)
        out[key] = value
    return out


def coerce_fields(cls, values: dict, source="<config>"):
    """Convert string values to the scalar field types of dataclass ``cls``."""
    types = {f.name: f.type for f in fields(cls)}
    out = {}
    for key, value in values.items():
        if key not in types:
            raise ConfigError(f"{source}: unknown key {key!r}")
        kind = str(types[key])
        try:
            if kind.startswith("int"):
                out[key] = int(value)
            elif kind.startswith("float"):
                out[key] = float(value)
            elif kind.startswith("bool"):
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                out[key] = value.lower() in ("true", "1", "yes")
            elif kind.startswith("str"):
                out[key] = value
            else:
                raise ConfigError(f"{source}: key {key!r} cannot be set from a text file")
        except ValueError:
            raise ConfigError(f"{source}: bad value {value!r} for {key!r}") from None
    return out


def load_synthetic_config(path) -> SyntheticConfig:
    text = Path(path).read_text()
    return SyntheticConfig(**coerce_fields(SyntheticConfig, parse_key_values(text, str(path)), str(path)))
