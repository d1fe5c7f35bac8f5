# ipa/data.py - Synthetic generators, Criteo/CSV ingestion, feature hashing and splits
import itertools
import logging
import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ipa.codes import Task
from ipa.errors import ConfigError, DataError, FeatureLookupError
from ipa.linalg import SeededRng

logger = logging.getLogger(__name__)

MAX_SYNTHETIC_FEATURES = 16
ROW_BLOCK = 1024
CRITEO_NUMERIC_FIELDS = 13
CRITEO_CATEGORICAL_FIELDS = 26
CRITEO_COLUMNS = 1 + CRITEO_NUMERIC_FIELDS + CRITEO_CATEGORICAL_FIELDS
MAX_MALFORMED_FRACTION = 0.01
HASH_CACHE_SIZE = 1 << 20
CSV_FLOAT_FORMAT = "%.17g"

# RNG streams
STREAM_TERM_WEIGHTS = 11
STREAM_ROWS = 12
STREAM_SPLIT = 13
STREAM_PLANTED = 14

MASK64 = 0xFFFFFFFFFFFFFFFF
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str  # categorical | numeric
    vocab: int


class TabularDataset:
    """Rows of field-encoded features.

    Every row stores, per field, S slots of (feature id, weight). A slot with
    weight 0 is inactive; one-hot fields use a single slot of weight 1,
    numeric fields a single slot (id 0) carrying the raw value, multi-hot
    fields 1/count per active feature.
    """

    def __init__(self, fields: Sequence[FieldSpec], ids: np.ndarray, weights: np.ndarray, labels: np.ndarray,
                 task: Task, meta: Optional[Dict] = None):
        self.fields = list(fields)
        self.ids = np.asarray(ids, dtype=np.int64)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.float64).reshape(-1)
        self.task = task
        self.meta = dict(meta or {})
        self._validate()

    def _validate(self):
        if self.ids.ndim != 3 or self.ids.shape != self.weights.shape:
            raise DataError(f"ids/weights must share a (N, M, S) shape, got {self.ids.shape} and {self.weights.shape}")
        n, m, _ = self.ids.shape
        if m != len(self.fields) or self.labels.shape[0] != n:
            raise DataError(f"dataset with {n} rows and {m} fields does not match schema/labels")
        vocab = self.vocab_sizes()[None, :, None]
        active = self.weights != 0
        if np.any(active & ((self.ids < 0) | (self.ids >= vocab))):
            raise FeatureLookupError("feature id outside its field vocabulary")
        if not np.all(np.isfinite(self.labels)) or not np.all(np.isfinite(self.weights)):
            raise DataError("dataset contains non-finite values")
        if self.task is Task.CLASSIFICATION and not np.all((self.labels == 0) | (self.labels == 1)):
            raise DataError("classification labels must be 0 or 1")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def num_fields(self) -> int:
        return len(self.fields)

    def vocab_sizes(self) -> np.ndarray:
        return np.array([f.vocab for f in self.fields], dtype=np.int64)

    def subset(self, indices: np.ndarray) -> "TabularDataset":
        return TabularDataset(self.fields, self.ids[indices], self.weights[indices], self.labels[indices],
                              self.task, self.meta)

    def feature_counts(self, field_index: int) -> np.ndarray:
        """Occurrences of every feature of a field across rows"""
        ids = self.ids[:, field_index, :]
        active = self.weights[:, field_index, :] != 0
        return np.bincount(ids[active], minlength=self.fields[field_index].vocab).astype(np.float64)

    def positive_rate(self) -> float:
        return float(np.mean(self.labels))


# Synthetic cross-term regression data

@dataclass
class SyntheticSpec:
    n: int
    order: int
    samples: int
    noise_sigma: float = 0.1
    seed: int = 0
    max_combinations: Optional[int] = None

    def __post_init__(self):
        if self.n < 1 or self.n > MAX_SYNTHETIC_FEATURES:
            raise ConfigError(f"feature count must be in [1, {MAX_SYNTHETIC_FEATURES}], got {self.n}")
        if not 1 <= self.order <= self.n:
            raise ConfigError(f"data order must satisfy 1 <= O <= n (O={self.order}, n={self.n})")
        if self.samples < 1:
            raise ConfigError(f"samples must be >= 1, got {self.samples}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise sigma must be >= 0, got {self.noise_sigma}")


def cross_terms(spec: SyntheticSpec) -> Tuple[List[Tuple[int, ...]], np.ndarray]:
    """Every combination of order <= O in lexicographic order, with its N(0, 1) weight"""
    rng = SeededRng(spec.seed, STREAM_TERM_WEIGHTS)
    combinations: List[Tuple[int, ...]] = []
    for degree in range(1, spec.order + 1):
        degree_terms = list(itertools.combinations(range(spec.n), degree))
        if spec.max_combinations is not None and len(degree_terms) > spec.max_combinations:
            keep = np.sort(rng.derive(degree).permutation(len(degree_terms))[: spec.max_combinations])
            degree_terms = [degree_terms[i] for i in keep]
        combinations.extend(degree_terms)
    weights = np.asarray(rng.normal(0.0, 1.0, size=len(combinations)), dtype=np.float64)
    return combinations, weights


def monomial_design(x: np.ndarray, combinations: Sequence[Tuple[int, ...]]) -> np.ndarray:
    design = np.empty((x.shape[0], len(combinations)))
    for j, combo in enumerate(combinations):
        design[:, j] = np.prod(x[:, list(combo)], axis=1)
    return design


def numeric_dataset(x: np.ndarray, y: np.ndarray, names: Optional[Sequence[str]] = None,
                    meta: Optional[Dict] = None) -> TabularDataset:
    """Real-valued features, one field per column, as a regression dataset"""
    n_rows, n_cols = x.shape
    names = list(names) if names is not None else [f"x{i + 1}" for i in range(n_cols)]
    fields = [FieldSpec(name, "numeric", 1) for name in names]
    ids = np.zeros((n_rows, n_cols, 1), dtype=np.int64)
    return TabularDataset(fields, ids, x[:, :, None], y, Task.REGRESSION, meta)


def generate_synthetic(spec: SyntheticSpec) -> TabularDataset:
    combinations, term_weights = cross_terms(spec)
    x = np.empty((spec.samples, spec.n))
    noise = np.zeros(spec.samples)
    rows = SeededRng(spec.seed, STREAM_ROWS)
    for block, start in enumerate(range(0, spec.samples, ROW_BLOCK)):
        stop = min(start + ROW_BLOCK, spec.samples)
        block_rng = rows.derive(block)
        x[start:stop] = block_rng.uniform(-1.0, 1.0, size=(stop - start, spec.n))
        if spec.noise_sigma > 0:
            noise[start:stop] = block_rng.normal(0.0, spec.noise_sigma, size=stop - start)
    y = monomial_design(x, combinations) @ term_weights + noise
    logger.info(f"Generated {spec.samples} synthetic rows: n={spec.n}, O={spec.order}, {len(combinations)} cross-terms")
    return numeric_dataset(x, y, meta={"combinations": combinations, "term_weights": term_weights})


def save_synthetic_csv(dataset: TabularDataset, path: str):
    x = dataset.weights[:, :, 0]
    frame = pd.DataFrame(x, columns=[f.name for f in dataset.fields])
    frame["y"] = dataset.labels
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")


def load_synthetic_csv(path: str, max_rows: Optional[int] = None) -> TabularDataset:
    try:
        frame = pd.read_csv(path, float_precision="round_trip", nrows=max_rows)
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"cannot read synthetic CSV {path}: {e}") from e
    if "y" not in frame.columns or frame.shape[1] < 2:
        raise DataError(f"{path} needs feature columns followed by a 'y' column")
    features = [c for c in frame.columns if c != "y"]
    try:
        x = frame[features].to_numpy(dtype=np.float64)
        y = frame["y"].to_numpy(dtype=np.float64)
    except ValueError as e:
        raise DataError(f"non-numeric values in {path}: {e}") from e
    return numeric_dataset(x, y, names=features)


# Synthetic categorical classification data

def generate_categorical_synthetic(cardinalities: Sequence[int], samples: int, seed: int = 0,
                                   true_dim: int = 4, zipf_exponent: float = 1.0) -> TabularDataset:
    """Click labels from a planted field-weighted second-order model.

    Feature ids follow a Zipf-like popularity per field; the logit is
    sum_{i<j} r_ij <u_i, u_j> / sqrt(true_dim) with N(0, 1) embeddings u and
    field-pair weights r.
    """
    if samples < 1 or not cardinalities or min(cardinalities) < 1:
        raise ConfigError("need samples >= 1 and positive field cardinalities")
    rng = SeededRng(seed, STREAM_PLANTED)
    m = len(cardinalities)
    ids = np.empty((samples, m), dtype=np.int64)
    embeddings = []
    for f, card in enumerate(cardinalities):
        popularity = 1.0 / np.arange(1, card + 1) ** zipf_exponent
        cdf = np.cumsum(popularity / popularity.sum())
        draws = rng.derive(2 * f).uniform(size=samples)
        ids[:, f] = np.minimum(np.searchsorted(cdf, draws, side="right"), card - 1)
        embeddings.append(rng.derive(2 * f + 1).normal(0.0, 1.0, size=(card, true_dim)))
    pair_weights = rng.derive(10_000).normal(0.0, 1.0, size=(m, m))

    logit = np.zeros(samples)
    for i in range(m):
        for j in range(i + 1, m):
            u_i = embeddings[i][ids[:, i]]
            u_j = embeddings[j][ids[:, j]]
            logit += pair_weights[i, j] * np.sum(u_i * u_j, axis=1)
    logit /= math.sqrt(true_dim)
    p = 0.5 * (1.0 + np.tanh(0.5 * logit))
    labels = (rng.derive(10_001).uniform(size=samples) < p).astype(np.float64)

    fields = [FieldSpec(f"c{f + 1}", "categorical", card) for f, card in enumerate(cardinalities)]
    dataset = TabularDataset(fields, ids[:, :, None], np.ones((samples, m, 1)), labels, Task.CLASSIFICATION,
                             meta={"pair_weights": pair_weights})
    logger.info(f"Generated {samples} categorical rows over cardinalities {list(cardinalities)}, "
                f"positive rate {dataset.positive_rate():.3f}")
    return dataset


def save_categorical_csv(dataset: TabularDataset, path: str):
    frame = pd.DataFrame(dataset.ids[:, :, 0], columns=[f.name for f in dataset.fields])
    frame["label"] = dataset.labels.astype(np.int64)
    frame.to_csv(path, index=False, lineterminator="\n")


# Feature hashing

class FeatureHasher:
    """Deterministic per-field string hashing (FNV-1a 64 with a splitmix finalizer)"""

    def __init__(self, buckets: int, seed: int = 0):
        if buckets < 1:
            raise ConfigError(f"hash buckets must be >= 1, got {buckets}")
        self.buckets = int(buckets)
        self.seed = int(seed)
        self._cached_bucket = lru_cache(maxsize=HASH_CACHE_SIZE)(self._bucket)

    def _hash64(self, field_index: int, value: str) -> int:
        h = (FNV_OFFSET ^ (self.seed * 0x9E3779B97F4A7C15)) & MASK64
        for byte in f"{field_index}\x1f{value}".encode("utf-8"):
            h ^= byte
            h = (h * FNV_PRIME) & MASK64
        h ^= h >> 30
        h = (h * 0xBF58476D1CE4E5B9) & MASK64
        h ^= h >> 27
        h = (h * 0x94D049BB133111EB) & MASK64
        h ^= h >> 31
        return h

    def _bucket(self, field_index: int, value: str) -> int:
        return self._hash64(field_index, value) % self.buckets

    def bucket(self, field_index: int, value: str) -> int:
        return self._cached_bucket(field_index, value)

    def cache_info(self):
        return self._cached_bucket.cache_info()


def numeric_bucket(cell: str, limit: int) -> int:
    """Log-square bucketing: id = 1 + min(floor(ln(1 + x))^2, limit - 2), id 0 for a missing value.

    Present values are shifted up by one so that x = 0 never shares an id
    with an empty cell; "3" maps to 2, not 1.
    """
    if cell == "":
        return 0
    value = max(int(cell), 0)
    bucket = int(math.floor(math.log1p(value))) ** 2
    return 1 + min(bucket, limit - 2)


def load_criteo_tsv(path: str, hasher: FeatureHasher, numeric_buckets: int = 256,
                    max_rows: Optional[int] = None) -> TabularDataset:
    if numeric_buckets < 2:
        raise ConfigError(f"numeric buckets must be >= 2, got {numeric_buckets}")
    labels: List[int] = []
    rows: List[List[int]] = []
    malformed = 0
    total = 0
    try:
        with open(path, "rb") as handle:
            for raw in handle:
                if max_rows is not None and len(rows) >= max_rows:
                    break
                raw = raw.rstrip(b"\n").rstrip(b"\r")
                if not raw:
                    continue
                total += 1
                try:
                    line = raw.decode("utf-8")
                except UnicodeDecodeError:
                    malformed += 1
                    continue
                cells = line.split("\t")
                if len(cells) != CRITEO_COLUMNS or cells[0] not in ("0", "1"):
                    malformed += 1
                    continue
                try:
                    numeric = [numeric_bucket(c, numeric_buckets) for c in cells[1:1 + CRITEO_NUMERIC_FIELDS]]
                except ValueError:
                    malformed += 1
                    continue
                categorical = [0 if c == "" else 1 + hasher.bucket(f, c)
                               for f, c in enumerate(cells[1 + CRITEO_NUMERIC_FIELDS:])]
                labels.append(int(cells[0]))
                rows.append(numeric + categorical)
    except OSError as e:
        raise DataError(f"cannot read Criteo file {path}: {e}") from e

    if total == 0 or not rows:
        raise DataError(f"no usable rows in {path}")
    if malformed > MAX_MALFORMED_FRACTION * total:
        raise DataError(f"{malformed} of {total} lines in {path} are malformed (limit 1%)")
    logger.info(f"Loaded {len(rows)} Criteo rows from {path}, skipped {malformed} malformed lines")
    logger.debug(f"Hash cache after loading {path}: {hasher.cache_info()}")

    fields = [FieldSpec(f"I{i + 1}", "categorical", numeric_buckets) for i in range(CRITEO_NUMERIC_FIELDS)]
    fields += [FieldSpec(f"C{i + 1}", "categorical", hasher.buckets + 1) for i in range(CRITEO_CATEGORICAL_FIELDS)]
    ids = np.array(rows, dtype=np.int64)[:, :, None]
    return TabularDataset(fields, ids, np.ones(ids.shape), np.array(labels), Task.CLASSIFICATION,
                          meta={"malformed": malformed})


def load_categorical_csv(path: str, hasher: Optional[FeatureHasher] = None,
                         max_rows: Optional[int] = None) -> TabularDataset:
    """Header row, a `label` (or `y`) column, every other column categorical.

    Values are dictionary-encoded in order of first appearance (or hashed
    when a hasher is given); id 0 is reserved for missing values.
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, nrows=max_rows)
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"cannot read categorical CSV {path}: {e}") from e
    label_column = "label" if "label" in frame.columns else "y" if "y" in frame.columns else None
    if label_column is None or frame.shape[1] < 2:
        raise DataError(f"{path} needs a 'label' (or 'y') column and at least one feature column")
    try:
        labels = frame[label_column].astype(np.float64).to_numpy()
    except ValueError as e:
        raise DataError(f"non-numeric labels in {path}: {e}") from e

    columns = [c for c in frame.columns if c != label_column]
    ids = np.zeros((len(frame), len(columns)), dtype=np.int64)
    fields = []
    for f, column in enumerate(columns):
        values = frame[column].to_numpy()
        if hasher is not None:
            ids[:, f] = [0 if v == "" else 1 + hasher.bucket(f, v) for v in values]
            fields.append(FieldSpec(column, "categorical", hasher.buckets + 1))
        else:
            codes, uniques = pd.factorize(values, sort=False)
            present = values != ""
            mapping = np.cumsum([u != "" for u in uniques])
            ids[:, f] = np.where(present, mapping[codes], 0)
            fields.append(FieldSpec(column, "categorical", int(mapping[-1]) + 1 if len(mapping) else 1))

    task = Task.CLASSIFICATION if np.all((labels == 0) | (labels == 1)) else Task.REGRESSION
    logger.info(f"Loaded {len(frame)} rows with {len(columns)} categorical fields from {path}")
    return TabularDataset(fields, ids[:, :, None], np.ones(ids.shape + (1,)), labels, task)


def load_dataset(path: str, data_format: str, hash_buckets: int = 100_000, numeric_buckets: int = 256,
                 max_rows: Optional[int] = None, seed: int = 0) -> TabularDataset:
    if data_format == "synthetic_csv":
        return load_synthetic_csv(path, max_rows=max_rows)
    if data_format == "criteo_tsv":
        return load_criteo_tsv(path, FeatureHasher(hash_buckets, seed), numeric_buckets, max_rows)
    if data_format == "categorical_csv":
        return load_categorical_csv(path, max_rows=max_rows)
    raise ConfigError(f"unknown data format '{data_format}'")


# Splits

def split_sizes(n: int, ratios: Sequence[float]) -> List[int]:
    """Largest-remainder rounding of n * ratio; ties go to the earlier partition"""
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.size == 0 or np.any(ratios <= 0):
        raise ConfigError(f"split ratios must be positive, got {list(ratios)}")
    quotas = n * ratios / ratios.sum()
    sizes = np.floor(quotas).astype(np.int64)
    remainder = n - int(sizes.sum())
    order = np.argsort(-(quotas - sizes), kind="stable")
    sizes[order[:remainder]] += 1
    return [int(s) for s in sizes]


def split_indices(n: int, ratios: Sequence[float], seed: int) -> List[np.ndarray]:
    sizes = split_sizes(n, ratios)
    if min(sizes) == 0:
        raise DataError(f"split {list(ratios)} of {n} rows leaves an empty partition")
    permutation = SeededRng(seed, STREAM_SPLIT).permutation(n)
    bounds = np.cumsum([0] + sizes)
    return [permutation[bounds[i]:bounds[i + 1]] for i in range(len(sizes))]


def split(dataset: TabularDataset, ratios: Sequence[float] = (8, 1, 1), seed: int = 0) -> List[TabularDataset]:
    return [dataset.subset(idx) for idx in split_indices(len(dataset), ratios, seed)]
