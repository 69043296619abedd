"""Dataset ingestion, label-noise injection, splits and synthetic data."""
import hashlib
import io
import logging
import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    K: int
    name: str = ""
    label_values: tuple = ()  # original label of each contiguous index
    probe: np.ndarray = None  # True for rows appended by add_probe

    def __post_init__(self):
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("features must be (n, d) with one label per row")
        if len(self.labels) < 1 or self.features.shape[1] < 1:
            raise ValueError("dataset needs n >= 1 and d >= 1")
        if self.labels.min() < 0 or self.labels.max() >= self.K:
            raise ValueError("labels must lie in [0, K)")
        if self.probe is None:
            object.__setattr__(self, "probe", np.zeros(len(self.labels), dtype=bool))

    @property
    def n(self):
        return len(self.labels)

    @property
    def d(self):
        return self.features.shape[1]

    def subset(self, idx):
        return replace(self, features=self.features[idx], labels=self.labels[idx],
                       probe=self.probe[idx])


def parse_libsvm(stream, name=""):
    """Parse ``label idx:value ...`` lines (1-based, strictly increasing).

    Labels are remapped to ``0..K-1`` in sorted order of the original
    values; the mapping is kept in ``Dataset.label_values``.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    raw_labels, rows, width = [], [], 0
    for lineno, line in enumerate(stream, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise ParseError(f"line {lineno}: bad label {tokens[0]!r}") from None
        entries, last = [], 0
        for tok in tokens[1:]:
            idx, sep, val = tok.partition(":")
            try:
                j, v = int(idx), float(val)
            except ValueError:
                raise ParseError(f"line {lineno}: malformed feature {tok!r}") from None
            if not sep or j < 1:
                raise ParseError(f"line {lineno}: malformed feature {tok!r}")
            if j <= last:
                raise ParseError(f"line {lineno}: feature indices not increasing at {j}")
            entries.append((j, v))
            last = j
        width = max(width, last)
        raw_labels.append(label)
        rows.append(entries)
    if not rows:
        raise ParseError("no data lines")
    X = np.zeros((len(rows), max(width, 1)))
    for i, entries in enumerate(rows):
        for j, v in entries:
            X[i, j - 1] = v
    values, y = np.unique(np.asarray(raw_labels), return_inverse=True)
    values = tuple(int(v) if float(v).is_integer() else float(v) for v in values)
    return Dataset(X, y.astype(int), len(values), name, values)


def load_libsvm(path, name=None):
    path = Path(path)
    with open(path) as fh:
        return parse_libsvm(fh, name or path.name.split(".")[0])


# -- binary cache: little-endian header (magic, n, d, K) + float64 payload --

_MAGIC = b"LDRDATA1"


def cache_key(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def write_cache(dataset, path):
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQQ", dataset.n, dataset.d, dataset.K))
        fh.write(np.asarray(dataset.features, dtype="<f8").tobytes())
        fh.write(np.asarray(dataset.labels, dtype="<f8").tobytes())
        fh.write(np.asarray(dataset.label_values, dtype="<f8").tobytes())


def read_cache(path, name=""):
    buf = Path(path).read_bytes()
    if buf[:8] != _MAGIC:
        raise ParseError(f"{path}: not a dataset cache")
    n, d, K = struct.unpack_from("<QQQ", buf, 8)
    body = np.frombuffer(buf, dtype="<f8", offset=32)
    X = body[: n * d].reshape(n, d).copy()
    y = body[n * d: n * d + n].astype(int)
    values = tuple(int(v) for v in body[n * d + n: n * d + n + K])
    return Dataset(X, y, int(K), name, values)


def load_dataset(path, cache_dir=None):
    """Load a LIBSVM file, going through the binary cache when given."""
    if cache_dir is None:
        return load_libsvm(path)
    cache = Path(cache_dir) / f"{Path(path).name}.{cache_key(path)}.bin"
    name = Path(path).name.split(".")[0]
    if cache.exists():
        return read_cache(cache, name)
    ds = load_libsvm(path)
    cache.parent.mkdir(parents=True, exist_ok=True)
    write_cache(ds, cache)
    return ds


# -- label noise -------------------------------------------------------------

VOWEL_CLASSES = ("i", "I", "E", "A", "a:", "Y", "O", "C:", "U", "u:", "3:")
NEWS20_CLASSES = (
    "alt.atheism", "comp.graphics", "comp.os.ms-windows.misc",
    "comp.sys.ibm.pc.hardware", "comp.sys.mac.hardware", "comp.windows.x",
    "misc.forsale", "rec.autos", "rec.motorcycles", "rec.sport.baseball",
    "rec.sport.hockey", "sci.crypt", "sci.electronics", "sci.med", "sci.space",
    "soc.religion.christian", "talk.politics.guns", "talk.politics.mideast",
    "talk.politics.misc", "talk.religion.misc",
)
LETTER_CLASSES = tuple(chr(ord("A") + i) for i in range(26))

PAIR_RULES = {
    "letter": [("B", "D"), ("C", "G"), ("E", "F"), ("H", "N"), ("I", "L"),
               ("K", "X"), ("M", "W"), ("O", "Q"), ("P", "R"), ("U", "V")],
    "news20": [("comp.os.ms-windows.misc", "comp.windows.x"),
               ("comp.sys.ibm.pc.hardware", "comp.sys.mac.hardware"),
               ("rec.autos", "rec.motorcycles"),
               ("rec.sport.baseball", "rec.sport.hockey"),
               ("sci.crypt", "sci.electronics"),
               ("soc.religion.christian", "talk.politics.misc")],
    "vowel": [("i", "I"), ("E", "A"), ("a:", "Y"), ("C:", "O"), ("u:", "U")],
}

# original LIBSVM label -> class name; vowel labels start at 0, the others at 1
CLASS_NAMES = {
    "vowel": dict(enumerate(VOWEL_CLASSES)),
    "letter": {i + 1: c for i, c in enumerate(LETTER_CLASSES)},
    "news20": {i + 1: c for i, c in enumerate(NEWS20_CLASSES)},
}


def pair_indices(dataset):
    """Resolve the named flip rules of a known dataset to contiguous indices."""
    key = dataset.name.lower()
    if key not in PAIR_RULES:
        raise KeyError(f"no pairwise noise rules for dataset {dataset.name!r}")
    names = CLASS_NAMES[key]
    index = {names[v]: i for i, v in enumerate(dataset.label_values)}
    return [(index[a], index[b]) for a, b in PAIR_RULES[key]]


@dataclass
class NoiseSpec:
    kind: str = "uniform"  # uniform | pairwise | circular
    rate: float = 0.0
    pairs: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("uniform", "pairwise", "circular"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("noise rate must lie in [0, 1]")

    @property
    def tag(self):
        return "clean" if self.rate == 0 else f"{self.kind}{self.rate:g}"


def inject_noise(labels, K, spec):
    """Return ``(noisy_labels, corrupted_mask)``; deterministic in ``spec.seed``.

    Uniform noise resamples the label from all K classes (the original
    included) with probability ``rate``, so the effective flip rate is
    ``rate * (K - 1) / K``. The mask marks labels that actually changed.
    """
    labels = np.asarray(labels, dtype=int)
    rng = np.random.default_rng(spec.seed)
    hit = rng.random(len(labels)) < spec.rate
    if spec.kind == "uniform":
        target = rng.integers(K, size=len(labels))
    elif spec.kind == "circular":
        target = (labels + 1) % K
    else:
        partner = np.arange(K)
        for a, b in spec.pairs:
            if not (0 <= a < K and 0 <= b < K):
                raise ValueError(f"pair ({a}, {b}) references a missing class")
            partner[a], partner[b] = b, a
        target = partner[labels]
    noisy = np.where(hit, target, labels)
    return noisy, noisy != labels


# -- splits ------------------------------------------------------------------

@dataclass
class FoldPlan:
    folds: np.ndarray  # fold id per sample, -1 for test rows
    test: np.ndarray  # boolean mask

    @property
    def n_folds(self):
        return int(self.folds.max()) + 1

    def split(self, fold):
        """``(train_idx, val_idx, test_idx)`` for one cross-validation fold."""
        train = np.flatnonzero((self.folds >= 0) & (self.folds != fold))
        return train, np.flatnonzero(self.folds == fold), np.flatnonzero(self.test)


def make_folds(n, test_fraction=0.1, folds=5, stratify_labels=None, seed=0):
    """Random test holdout, then round-robin fold assignment of the rest.

    With ``stratify_labels`` the remaining rows are grouped by class before
    dealing, so per-class fold counts differ by at most one.
    """
    if folds < 2:
        raise ValueError("need at least two folds")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_test = int(round(test_fraction * n))
    test = np.zeros(n, dtype=bool)
    test[perm[:n_test]] = True
    rest = perm[n_test:]
    if stratify_labels is not None:
        lab = np.asarray(stratify_labels)[rest]
        counts = np.bincount(lab)
        small = np.flatnonzero((counts > 0) & (counts < folds))
        if small.size:
            warnings.warn(f"classes {small.tolist()} have fewer samples than folds",
                          stacklevel=2)
        rest = rest[np.argsort(lab, kind="stable")]
    assign = np.full(n, -1)
    assign[rest] = np.arange(len(rest)) % folds
    return FoldPlan(assign, test)


# -- synthetic 2-D data --------------------------------------------------------

CLUSTER_MEANS = np.array([[0.8, 0.8], [0.8, -0.8], [-0.8, 0.8], [-0.8, -0.8]])
CLUSTER_CLASS = np.array([0, 1, 2, 0])  # the two diagonal clusters share class 0
CLUSTER_STD = 0.3


def synthetic_gaussians(n_per_cluster, seed=0):
    """Four isotropic Gaussian blobs in the plane labelled with three classes."""
    if n_per_cluster < 1:
        raise ValueError("n_per_cluster must be >= 1")
    rng = np.random.default_rng(seed)
    X = np.concatenate([m + CLUSTER_STD * rng.standard_normal((n_per_cluster, 2))
                        for m in CLUSTER_MEANS])
    y = np.repeat(CLUSTER_CLASS, n_per_cluster)
    return Dataset(X, y, 3, "synthetic", (0, 1, 2))


def add_probe(dataset, x, label):
    """Append one labelled point (possibly mislabelled) flagged as a probe."""
    X = np.vstack([dataset.features, np.asarray(x, dtype=float)[None]])
    y = np.append(dataset.labels, int(label))
    return replace(dataset, features=X, labels=y, probe=np.append(dataset.probe, True))
