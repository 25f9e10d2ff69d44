"""Shared fixtures and independent oracles.

The oracles here are deliberately naive (explicit loops, no shared code
with the library) so they stay independent of the paths they check.
"""

import os

import numpy as np
import pytest

import mapml
from mapml import Dataset, LatentModel


# ---------------------------------------------------------------- oracles

def oracle_mahalanobis(M, a, b):
    """Squared Mahalanobis distance by explicit double loop."""
    M = np.asarray(M, dtype=np.float64)
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    total = 0.0
    for i in range(len(diff)):
        for j in range(len(diff)):
            total += diff[i] * M[i, j] * diff[j]
    return total


def oracle_valid_triplets(labels):
    """All (o, p, q) with label(p)=label(o), p != o, label(q) != label(o)."""
    labels = np.asarray(labels)
    out = []
    for o in range(len(labels)):
        for p in range(len(labels)):
            if p == o or labels[p] != labels[o]:
                continue
            for q in range(len(labels)):
                if labels[q] == labels[o]:
                    continue
                out.append((o, p, q))
    return out


def oracle_full_loss(M, latents, labels, margins, triplets=None):
    """Sum of hinges over the triplets (default: the full universe)."""
    if triplets is None:
        triplets = oracle_valid_triplets(labels)
    total = 0.0
    for (o, p, q) in triplets:
        dp = oracle_mahalanobis(M, latents[o], latents[p])
        dq = oracle_mahalanobis(M, latents[o], latents[q])
        arg = 1.0 + margins[o] - (dq - dp)
        if arg > 0:
            total += arg
    return total


def oracle_active_triplets(M, latents, labels, margins):
    """Margin-violating triplets in ascending enumeration order."""
    out = []
    for (o, p, q) in oracle_valid_triplets(labels):
        dp = oracle_mahalanobis(M, latents[o], latents[p])
        dq = oracle_mahalanobis(M, latents[o], latents[q])
        if 1.0 + margins[o] - (dq - dp) > 0:
            out.append((o, p, q))
    return out


def oracle_knn_euclidean(query, refs, labels, k):
    """Euclidean kNN with the documented tie rules, by explicit sort."""
    d2 = [float(np.sum((np.asarray(query) - np.asarray(r)) ** 2)) for r in refs]
    order = sorted(range(len(refs)), key=lambda i: (d2[i], i))
    top = [labels[i] for i in order[:k]]
    counts = {}
    for lab in top:
        counts[lab] = counts.get(lab, 0) + 1
    best = max(counts.values())
    for lab in top:
        if counts[lab] == best:
            return lab
    raise AssertionError("unreachable")


# ---------------------------------------------------------------- builders

def random_psd(rng, d, scale=1.0):
    A = rng.normal(size=(d, d))
    return scale * (A @ A.T) / d


def random_symmetric(rng, d, scale=1.0):
    A = rng.normal(size=(d, d))
    return scale * 0.5 * (A + A.T)


def make_latent_model(latents, class_sizes, membership=None, margins=None):
    """LatentModel with rows grouped by class; margins default to zero."""
    latents = np.asarray(latents, dtype=np.float64)
    counts = np.asarray(class_sizes, dtype=np.int64)
    labels = np.repeat(np.arange(counts.size), counts)
    m = latents.shape[0]
    return LatentModel(
        latents=latents,
        latent_labels=labels,
        membership=np.zeros(1, dtype=np.int64) if membership is None else membership,
        cluster_margins=np.zeros(m) if margins is None else np.asarray(margins, float),
        per_class_counts=counts,
    )


def make_blobs(rng, n_per_class, centers, sigma):
    """Isotropic Gaussian blob dataset, one blob per class."""
    centers = np.asarray(centers, dtype=np.float64)
    feats, labs = [], []
    for r, c in enumerate(centers):
        feats.append(c + rng.normal(0.0, sigma, size=(n_per_class, centers.shape[1])))
        labs.append(np.full(n_per_class, r))
    return Dataset(np.concatenate(feats), np.concatenate(labs))


def random_instance(rng, n_lo=20, n_hi=60, d_lo=2, d_hi=6, c_lo=2, c_hi=4,
                    spread=3.0, sigma_lo=0.2, sigma_hi=0.5):
    """Random separated-blob classification instance."""
    d = int(rng.integers(d_lo, d_hi + 1))
    c = int(rng.integers(c_lo, c_hi + 1))
    n = int(rng.integers(n_lo, n_hi + 1))
    centers = rng.normal(0.0, spread, size=(c, d))
    sigma = float(rng.uniform(sigma_lo, sigma_hi))
    return make_blobs(rng, n // c + 1, centers, sigma)


# ---------------------------------------------------------------- fixtures

@pytest.fixture
def debug_checks(monkeypatch):
    monkeypatch.setattr(mapml.core, "DEBUG_CHECKS", True)
    yield


def _mnist_paths():
    candidates = [os.environ.get("MAPML_DATA_DIR"),
                  os.path.join(os.path.dirname(__file__), "data")]
    names = [
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
         "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz",
         "t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"),
    ]
    for base in candidates:
        if not base:
            continue
        for group in names:
            paths = [os.path.join(base, name) for name in group]
            if all(os.path.exists(p) for p in paths):
                return paths
    return None


@pytest.fixture(scope="session")
def mnist_subset():
    """Seeded 10k-train / 2k-test MNIST subset, or a skip when absent.

    Place the standard IDX files (optionally gzipped) under tests/data or
    $MAPML_DATA_DIR to enable the MNIST-dependent suites.
    """
    paths = _mnist_paths()
    if paths is None:
        pytest.skip("MNIST IDX files not available (tests/data or $MAPML_DATA_DIR); "
                    "no network route exists in this environment to fetch them")
    from mapml import load_idx

    train = load_idx(paths[0], paths[1])
    test = load_idx(paths[2], paths[3])
    rng = np.random.default_rng(20240001)
    tr = rng.permutation(train.n)[:10_000]
    te = rng.permutation(test.n)[:2_000]
    train_sub = Dataset(train.features[tr], train.label_names[train.labels[tr]])
    test_sub = Dataset(test.features[te], test.label_names[test.labels[te]])
    return train_sub, test_sub


def build_desk_surrogate(n_train=10_000, n_test=2_000, d_signal=16, d_noise=48,
                         n_classes=10, latents_per_class=12, seed=777):
    """MNIST-scale surrogate: latent clusters plus uninformative noise dims.

    Classes live in the first ``d_signal`` dimensions as clusters around
    per-class latent examples; the remaining dimensions carry pure
    observation noise, so a Euclidean 3-NN suffers while a learned metric
    can recover the signal subspace. Same 10k/2k scale as the MNIST
    subset protocol.
    """
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 0.45, size=(n_classes, d_signal))
    lat = centers[:, None, :] + rng.normal(0.0, 0.25,
                                           size=(n_classes, latents_per_class, d_signal))
    lat = lat.reshape(-1, d_signal)
    lab = np.repeat(np.arange(n_classes), latents_per_class)
    n = n_train + n_test
    pick = rng.integers(0, lat.shape[0], size=n)
    sig = lat[pick] + rng.normal(0.0, 0.15, size=(n, d_signal))
    noise = 0.5 + rng.normal(0.0, 0.7, size=(n, d_noise))
    X = np.concatenate([sig, noise], axis=1)
    y = lab[pick]
    return Dataset(X[:n_train], y[:n_train]), Dataset(X[n_train:], y[n_train:])


@pytest.fixture(scope="session")
def desk_surrogate():
    return build_desk_surrogate()
