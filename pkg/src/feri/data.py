"""Datasets, the synthetic subgroup generator, CV splits, standardisation and CSV I/O."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError
from .model import MISSING_INDEX, FeatureSchema, Sample

# Graft-failure rates per subgroup in the transplant registry.
REGISTRY_RATES = {
    "gender": {"Male": 0.4184, "Female": 0.4204},
    "age_group": {"Adult": 0.4283, "Pediatric": 0.3399},
    "race_ethnicity": {"White": 0.4324, "Black": 0.4477, "Hispanic": 0.3531, "Asian": 0.3295},
}
# Registry subgroup sizes (graft failure + non-failure).
REGISTRY_COUNTS = {
    "gender": {"Male": 99557, "Female": 58892},
    "age_group": {"Adult": 142000, "Pediatric": 16449},
    "race_ethnicity": {"White": 115783, "Black": 15180, "Hispanic": 21028, "Asian": 6458},
}


@dataclass
class Dataset:
    schema: FeatureSchema
    cat: np.ndarray  # (n, n_cat) int64
    cont: np.ndarray  # (n, n_cont) float64
    label: np.ndarray  # (n,) int64
    group: np.ndarray  # (n,) int64
    attribute_name: str = "group"
    group_names: Tuple[str, ...] = ()
    vocab: Dict[str, Tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.label)
        self.cat = np.asarray(self.cat, dtype=np.int64).reshape(n, self.schema.n_cat)
        self.cont = np.asarray(self.cont, dtype=np.float64).reshape(n, self.schema.n_cont)
        self.label = np.asarray(self.label, dtype=np.int64)
        self.group = np.asarray(self.group, dtype=np.int64)
        self.group_names = tuple(self.group_names)
        if len(self.group) != n:
            raise DataError("label and group arrays differ in length")
        if not self.vocab:
            self.vocab = default_vocab(self.schema)

    def __len__(self):
        return len(self.label)

    @property
    def n_tasks(self) -> int:
        return len(self.group_names)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return replace(self, cat=self.cat[rows], cont=self.cont[rows],
                       label=self.label[rows], group=self.group[rows])

    def sample(self, i: int) -> Sample:
        return Sample(tuple(int(v) for v in self.cat[i]), tuple(float(v) for v in self.cont[i]),
                      int(self.label[i]), int(self.group[i]))

    def samples(self) -> List[Sample]:
        return [self.sample(i) for i in range(len(self))]

    @classmethod
    def from_samples(cls, schema, samples: Sequence[Sample], attribute_name, group_names, vocab=None):
        for s in samples:
            s.validate(schema, len(group_names))
        return cls(
            schema,
            np.array([s.cat_indices for s in samples], dtype=np.int64).reshape(len(samples), schema.n_cat),
            np.array([s.cont_values for s in samples], dtype=np.float64).reshape(len(samples), schema.n_cont),
            np.array([s.label for s in samples], dtype=np.int64),
            np.array([s.group for s in samples], dtype=np.int64),
            attribute_name, tuple(group_names), dict(vocab or {}),
        )

    def validate(self):
        for j, (name, card) in enumerate(self.schema.categorical):
            col = self.cat[:, j]
            if col.size and (col.min() < 0 or col.max() >= card):
                raise DataError(f"categorical column {name!r} has indices outside 0..{card - 1}")
        if not np.all(np.isin(self.label, (0, 1))):
            raise DataError("labels must be 0/1")
        for m, gname in enumerate(self.group_names):
            if not np.any(self.group == m):
                raise DataError(f"group {gname!r} has no samples")
        if self.group.size and (self.group.min() < 0 or self.group.max() >= self.n_tasks):
            raise DataError("group ids outside the declared group set")
        return self

    def equals(self, other: "Dataset") -> bool:
        return (
            self.schema == other.schema
            and self.attribute_name == other.attribute_name
            and self.group_names == other.group_names
            and self.vocab == other.vocab
            and np.array_equal(self.cat, other.cat)
            and np.array_equal(self.cont, other.cont)
            and np.array_equal(self.label, other.label)
            and np.array_equal(self.group, other.group)
        )


def default_vocab(schema: FeatureSchema) -> Dict[str, Tuple[str, ...]]:
    """Index -> category string; slot 0 is the missing value (blank)."""
    return {name: ("",) + tuple(f"{name}_{k}" for k in range(1, card)) for name, card in schema.categorical}


# -- synthetic generator -----------------------------------------------------

@dataclass
class SynthSpec:
    """Class-conditional generator for one sensitive attribute.

    Labels are drawn first with exact per-group quotas; features are then drawn
    given (group, label).  ``label_shift[g]`` is the mean offset of positives
    over negatives on each continuous feature, ``group_offset[g]`` a label-free
    mean offset of the whole group, ``cat_tilt[g]`` the log-odds tilt of
    category probabilities toward high indices for positives (and away from
    them for negatives).
    """

    group_names: Tuple[str, ...] = ("Adult", "Pediatric")
    counts: Tuple[int, ...] = (1600, 400)
    rates: Tuple[float, ...] = (0.4283, 0.3399)
    # majority: weak signal spread over every feature; minority: one strong
    # feature, so its loss falls much faster under shared training
    label_shift: Tuple[Tuple[float, ...], ...] = ((0.35,) * 6, (0.0, 0.0, 0.0, 0.0, 1.5, 0.0))
    group_offset: Tuple[Tuple[float, ...], ...] = ((0.0,) * 6, (0.0,) * 6)
    cat_tilt: Tuple[float, ...] = (0.3, 0.0)
    cardinalities: Tuple[int, ...] = (3, 4, 5, 6, 4, 3)
    n_cont: int = 6
    noise: float = 1.0
    missing_rate: float = 0.02
    seed: int = 42
    attribute_name: str = "age_group"

    def __post_init__(self):
        self.group_names = tuple(self.group_names)
        self.counts = tuple(int(c) for c in self.counts)
        self.rates = tuple(float(r) for r in self.rates)
        self.cat_tilt = tuple(float(t) for t in self.cat_tilt)
        self.cardinalities = tuple(int(c) for c in self.cardinalities)
        self.label_shift = tuple(tuple(float(v) for v in row) for row in self.label_shift)
        self.group_offset = tuple(tuple(float(v) for v in row) for row in self.group_offset)
        self.validate()

    @property
    def n_groups(self):
        return len(self.group_names)

    def validate(self):
        M = self.n_groups
        if M < 1:
            raise ConfigError("at least one group is required")
        for name, seq in (("counts", self.counts), ("rates", self.rates), ("cat_tilt", self.cat_tilt),
                          ("label_shift", self.label_shift), ("group_offset", self.group_offset)):
            if len(seq) != M:
                raise ConfigError(f"synth {name} has {len(seq)} entries for {M} groups")
        if any(c < 1 for c in self.counts):
            raise ConfigError("every group count must be >= 1")
        if any(not 0.0 < r < 1.0 for r in self.rates):
            raise ConfigError("label rates must lie strictly between 0 and 1")
        for rows in (self.label_shift, self.group_offset):
            if any(len(r) != self.n_cont for r in rows):
                raise ConfigError(f"shift rows must have {self.n_cont} entries")
        if any(c < 2 for c in self.cardinalities):
            raise ConfigError("cardinalities must be >= 2")
        if self.noise <= 0:
            raise ConfigError("noise must be positive")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ConfigError("missing_rate must lie in [0, 1)")

    def schema(self) -> FeatureSchema:
        return FeatureSchema(
            tuple((f"cat{j}", c) for j, c in enumerate(self.cardinalities)),
            tuple(f"num{j}" for j in range(self.n_cont)),
        )

    @classmethod
    def from_registry(cls, attribute: str, total: int, **kw) -> "SynthSpec":
        """Group sizes and label rates proportional to the registry, scaled to ``total`` samples."""
        counts = REGISTRY_COUNTS[attribute]
        rates = REGISTRY_RATES[attribute]
        names = tuple(counts)
        grand = sum(counts.values())
        sizes = [max(1, round(total * counts[g] / grand)) for g in names]
        M = len(names)
        n_cont = kw.pop("n_cont", 6)
        defaults = dict(
            label_shift=tuple((0.5,) * n_cont for _ in names),
            group_offset=tuple((0.0,) * n_cont for _ in names),
            cat_tilt=(0.4,) * M,
        )
        defaults.update(kw)
        return cls(group_names=names, counts=tuple(sizes), rates=tuple(rates[g] for g in names),
                   n_cont=n_cont, attribute_name=attribute, **defaults)


def synth_generate(spec: SynthSpec) -> Dataset:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    schema = spec.schema()
    cats, conts, labels, groups = [], [], [], []
    for g, n in enumerate(spec.counts):
        n_pos = int(round(spec.rates[g] * n))
        y = np.zeros(n, dtype=np.int64)
        y[:n_pos] = 1
        rng.shuffle(y)
        sign = np.where(y == 1, 0.5, -0.5)

        mean = np.asarray(spec.group_offset[g]) + np.outer(y, spec.label_shift[g])
        x = mean + spec.noise * rng.standard_normal((n, spec.n_cont))

        c = np.empty((n, len(spec.cardinalities)), dtype=np.int64)
        for j, card in enumerate(spec.cardinalities):
            real = card - 1
            score = np.linspace(-1.0, 1.0, real) if real > 1 else np.zeros(1)
            logits = spec.cat_tilt[g] * sign[:, None] * score[None, :] * 2.0
            p = np.exp(logits - logits.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            u = rng.random(n)[:, None]
            col = 1 + np.minimum((u > np.cumsum(p, axis=1)).sum(axis=1), real - 1)
            missing = rng.random(n) < spec.missing_rate
            col[missing] = MISSING_INDEX
            c[:, j] = col
        cats.append(c)
        conts.append(x)
        labels.append(y)
        groups.append(np.full(n, g, dtype=np.int64))
    return Dataset(schema, np.concatenate(cats), np.concatenate(conts), np.concatenate(labels),
                   np.concatenate(groups), spec.attribute_name, spec.group_names).validate()


# -- cross-validation ----------------------------------------------------------

@dataclass(frozen=True)
class Fold:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class FoldPlan:
    k: int
    folds: Tuple[Fold, ...]

    def __iter__(self):
        return iter(self.folds)

    def __len__(self):
        return len(self.folds)


def kfold_split(dataset: Dataset, k: int = 5, seed: int = 0) -> FoldPlan:
    """Stratified on (group, label): fold f tests on chunk f, validates on chunk f+1, trains on the rest."""
    if k < 3:
        raise ConfigError("k must be >= 3 to hold train, validation and test chunks")
    rng = np.random.default_rng(seed)
    chunks = [[] for _ in range(k)]
    for m in range(dataset.n_tasks):
        for y in (0, 1):
            idx = np.flatnonzero((dataset.group == m) & (dataset.label == y))
            if idx.size == 0:
                continue
            if idx.size < k:
                name = dataset.group_names[m]
                raise DataError(f"stratum (group={name!r}, label={y}) has {idx.size} samples, fewer than k={k}")
            idx = rng.permutation(idx)
            # rotate the remainder so leftover samples do not always land in the first chunks
            offset = int(rng.integers(k))
            for j, part in enumerate(np.array_split(idx, k)):
                chunks[(j + offset) % k].append(part)
    chunks = [np.sort(np.concatenate(c)) if c else np.empty(0, np.int64) for c in chunks]
    folds = []
    for f in range(k):
        v = (f + 1) % k
        train = np.sort(np.concatenate([chunks[j] for j in range(k) if j not in (f, v)]))
        folds.append(Fold(train, chunks[v], chunks[f]))
    return FoldPlan(k, tuple(folds))


# -- standardisation ------------------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, dataset: Dataset, train_idx=None) -> "Standardizer":
        x = dataset.cont if train_idx is None else dataset.cont[np.asarray(train_idx)]
        if x.shape[0] == 0:
            raise DataError("cannot fit standardisation on an empty split")
        return cls(x.mean(axis=0), x.std(axis=0))

    def apply(self, dataset: Dataset) -> Dataset:
        scale = np.where(self.std < 1e-12, 1.0, self.std)
        return replace(dataset, cont=(dataset.cont - self.mean) / scale)


def standardize(dataset: Dataset, stats: Standardizer) -> Dataset:
    return stats.apply(dataset)


# -- CSV ------------------------------------------------------------------------

def vocab_path(csv_path) -> str:
    return os.fspath(csv_path) + ".vocab"


def write_vocab(vocab: Dict[str, Sequence[str]], path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "category", "index"])
        for feature, cats in vocab.items():
            for i, cat in enumerate(cats):
                if i != MISSING_INDEX:
                    w.writerow([feature, cat, i])


def read_vocab(path) -> Dict[str, Tuple[str, ...]]:
    table: Dict[str, Dict[int, str]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != ["feature", "category", "index"]:
            raise DataError(f"{path}: vocabulary header must be feature,category,index")
        for line, row in enumerate(r, start=2):
            if len(row) != 3:
                raise DataError(f"{path}:{line}: expected 3 fields, got {len(row)}")
            table.setdefault(row[0], {})[int(row[2])] = row[1]
    out = {}
    for feature, entries in table.items():
        size = max(entries) + 1
        out[feature] = tuple("" if i == MISSING_INDEX else entries.get(i, "") for i in range(size))
    return out


def write_csv(dataset: Dataset, path, write_vocab_file=True):
    schema = dataset.schema
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.names + ["label", dataset.attribute_name])
        for i in range(len(dataset)):
            cats = [dataset.vocab[name][int(v)] for (name, _), v in zip(schema.categorical, dataset.cat[i])]
            conts = [repr(float(v)) for v in dataset.cont[i]]
            w.writerow(cats + conts + [int(dataset.label[i]), dataset.group_names[dataset.group[i]]])
    if write_vocab_file:
        write_vocab(dataset.vocab, vocab_path(path))


def load_csv(path, schema: FeatureSchema, attribute_name: str, group_names: Optional[Sequence[str]] = None,
             vocab=None, strict: bool = True) -> Dataset:
    """Read a dataset.

    The vocabulary comes from ``vocab`` (dict or sidecar path), else from
    ``<path>.vocab`` when present, else it is built from this file with
    categories numbered 1.. in sorted order.  Blank cells map to the missing
    index.  With ``strict`` an unseen category is an error, otherwise it is
    treated as missing.
    """
    if isinstance(vocab, (str, os.PathLike)):
        vocab = read_vocab(vocab)
    elif vocab is None and os.path.exists(vocab_path(path)):
        vocab = read_vocab(vocab_path(path))

    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    expected = schema.names + ["label", attribute_name]
    if sorted(header) != sorted(expected) or len(header) != len(expected):
        raise DataError(f"{path}: header {header} does not match expected columns {expected}")
    col = {name: header.index(name) for name in expected}
    for line, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{line}: ragged row with {len(row)} fields, expected {len(header)}")

    if vocab is None:
        vocab = {}
        for name, card in schema.categorical:
            seen = sorted({row[col[name]] for row in body} - {""})
            vocab[name] = ("",) + tuple(seen)
    for name, card in schema.categorical:
        if name not in vocab:
            raise DataError(f"vocabulary has no entry for feature {name!r}")
        if len(vocab[name]) > card:
            raise DataError(f"feature {name!r} has {len(vocab[name]) - 1} categories; cardinality {card} allows {card - 1}")
    lookup = {name: {c: i for i, c in enumerate(vocab[name]) if i != MISSING_INDEX} for name, _ in schema.categorical}

    if group_names is None:
        group_names = sorted({row[col[attribute_name]] for row in body})
    gindex = {g: i for i, g in enumerate(group_names)}

    n = len(body)
    cat = np.zeros((n, schema.n_cat), dtype=np.int64)
    cont = np.zeros((n, schema.n_cont), dtype=np.float64)
    label = np.zeros(n, dtype=np.int64)
    group = np.zeros(n, dtype=np.int64)
    for i, row in enumerate(body):
        line = i + 2
        for j, (name, _) in enumerate(schema.categorical):
            value = row[col[name]]
            if value == "":
                cat[i, j] = MISSING_INDEX
            elif value in lookup[name]:
                cat[i, j] = lookup[name][value]
            elif strict:
                raise DataError(f"{path}:{line}: unknown category {value!r} for feature {name!r}")
            else:
                cat[i, j] = MISSING_INDEX
        for j, name in enumerate(schema.continuous):
            try:
                cont[i, j] = float(row[col[name]])
            except ValueError:
                raise DataError(f"{path}:{line}: cannot parse {row[col[name]]!r} as a number for {name!r}") from None
        if row[col["label"]] not in ("0", "1"):
            raise DataError(f"{path}:{line}: label must be 0 or 1, got {row[col['label']]!r}")
        label[i] = int(row[col["label"]])
        g = row[col[attribute_name]]
        if g not in gindex:
            raise DataError(f"{path}:{line}: unknown {attribute_name} value {g!r}")
        group[i] = gindex[g]
    vocab = {name: tuple(vocab[name]) for name, _ in schema.categorical}
    return Dataset(schema, cat, cont, label, group, attribute_name, tuple(group_names), vocab).validate()
