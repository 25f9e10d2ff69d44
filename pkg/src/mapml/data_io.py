"""Dataset ingestion, synthetic data with known latents, model persistence.

IDX is the de-facto MNIST layout (big-endian headers, raw uint8 payload,
optionally gzip-wrapped). CSV carries precomputed feature vectors. Model
files are a little-endian binary payload plus a human-readable JSON
sidecar.
"""

import gzip
import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from .core import Dataset, Metric, TrainConfig
from .latent import LatentModel, compute_margins

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MODEL_MAGIC = b"MAPMLBIN"
MODEL_FORMAT_VERSION = 1


def _open_binary(path):
    """Open a file for reading, transparently unwrapping gzip (by magic bytes)."""
    import io

    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return io.BytesIO(raw)


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise ValueError(f"{what} truncated: expected {n} bytes, got {len(data)}")
    return data


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair into a Dataset.

    Image layout (big-endian): u32 magic 0x00000803, u32 count, u32 rows,
    u32 cols, then count*rows*cols uint8 pixels row-major. Label layout:
    u32 magic 0x00000801, u32 count, then count uint8 labels. Pixels are
    scaled into [0, 1].
    """
    with _open_binary(images_path) as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "images header"))
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(
                f"images magic mismatch: expected {IDX_IMAGES_MAGIC:#010x}, got {magic:#010x}")
        payload = _read_exact(f, count * rows * cols, "images payload")
    with _open_binary(labels_path) as f:
        magic, label_count = struct.unpack(">II", _read_exact(f, 8, "labels header"))
        if magic != IDX_LABELS_MAGIC:
            raise ValueError(
                f"labels magic mismatch: expected {IDX_LABELS_MAGIC:#010x}, got {magic:#010x}")
        label_payload = _read_exact(f, label_count, "labels payload")
    if label_count != count:
        raise ValueError(f"count mismatch: {count} images but {label_count} labels")
    features = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows * cols) / 255.0
    labels = np.frombuffer(label_payload, dtype=np.uint8)
    return Dataset(features, labels)


def load_csv(path, label_column="label") -> Dataset:
    """Load a rectangular numeric CSV into a Dataset.

    ``label_column`` is a header name or a 0-based column index. A header
    row is auto-detected when the first row fails numeric parsing; a named
    label column requires one. All cells must be numeric; ragged rows and
    non-numeric cells are hard errors naming the (1-based) row.
    """
    import csv as _csv

    with open(path, newline="", encoding="utf-8") as f:
        rows = [row for row in _csv.reader(f) if row]
    if not rows:
        raise ValueError(f"{path}: empty file")

    def parse_row(row, rownum):
        try:
            return [float(cell) for cell in row]
        except ValueError:
            bad = next(c for c in row if not _is_float(c))
            raise ValueError(f"{path}: non-numeric value {bad!r} at row {rownum}") from None

    header = None
    start = 0
    if not all(_is_float(c) for c in rows[0]):
        header = [c.strip() for c in rows[0]]
        start = 1
        if len(rows) == 1:
            raise ValueError(f"{path}: header but no data rows")

    width = len(rows[start])
    if isinstance(label_column, str):
        if header is None:
            raise ValueError(f"{path}: label column {label_column!r} needs a header row")
        if label_column not in header:
            raise ValueError(f"{path}: label column {label_column!r} not found in header")
        label_idx = header.index(label_column)
    else:
        label_idx = int(label_column)
        if not -width <= label_idx < width:
            raise ValueError(f"{path}: label column index {label_idx} out of range")
        label_idx %= width

    data = np.empty((len(rows) - start, width))
    for i in range(start, len(rows)):
        if len(rows[i]) != width:
            raise ValueError(
                f"{path}: ragged row {i + 1}: expected {width} cells, got {len(rows[i])}")
        data[i - start] = parse_row(rows[i], i + 1)
    labels = data[:, label_idx]
    features = np.delete(data, label_idx, axis=1)
    if features.shape[1] == 0:
        raise ValueError(f"{path}: no feature columns besides the label")
    return Dataset(features, labels)


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


@dataclass
class SyntheticSpec:
    """Parameters of the latent generative model simulator."""

    n_classes: int = 2
    latents_per_class: int = 3
    dim: int = 5
    noise_sigma: float = 0.05
    samples_per_latent: int = 100
    seed: int = 0
    true_latents: np.ndarray = None

    def __post_init__(self):
        if self.n_classes < 1 or self.latents_per_class < 1 or self.dim < 1 \
                or self.samples_per_latent < 1:
            raise ValueError("all synthetic counts must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def generate_synthetic(spec: SyntheticSpec):
    """Draw a dataset from the latent generative model.

    True latents are uniform in [0, 1]^dim unless given explicitly; each
    observation is its latent plus isotropic N(0, sigma^2) noise. Returns
    the dataset and the ground-truth latent model (memberships exact,
    margins computed under the identity metric).
    """
    rng = np.random.default_rng(spec.seed)
    m = spec.n_classes * spec.latents_per_class
    if spec.true_latents is not None:
        latents = np.asarray(spec.true_latents, dtype=np.float64)
        if latents.shape != (m, spec.dim):
            raise ValueError(f"true_latents must have shape {(m, spec.dim)}, got {latents.shape}")
    else:
        latents = rng.uniform(size=(m, spec.dim))
    latent_labels = np.repeat(np.arange(spec.n_classes, dtype=np.int64),
                              spec.latents_per_class)
    membership = np.repeat(np.arange(m, dtype=np.int64), spec.samples_per_latent)
    noise = rng.normal(0.0, spec.noise_sigma, size=(m * spec.samples_per_latent, spec.dim))
    features = latents[membership] + noise
    data = Dataset(features, latent_labels[membership])
    truth = LatentModel(
        latents=latents,
        latent_labels=latent_labels,
        membership=membership,
        cluster_margins=np.zeros(m),
        per_class_counts=np.full(spec.n_classes, spec.latents_per_class, dtype=np.int64),
    )
    truth = compute_margins(data, truth, Metric.identity(spec.dim))
    return data, truth


@dataclass
class ModelFile:
    """A trained model as loaded from disk."""

    format_version: int
    metric: Metric
    latents: np.ndarray
    latent_labels: np.ndarray
    config: TrainConfig = None
    loss_trace: np.ndarray = None


def save_model(path, result) -> None:
    """Write a trained model: binary payload plus a JSON metadata sidecar.

    Payload layout, all little-endian: 8-byte magic "MAPMLBIN", u32
    format version, u32 d, u32 m, d*d f64 metric entries row-major, m*d
    f64 latent entries row-major, m u32 latent labels. The sidecar (same
    path with ".meta" appended) echoes the config and loss trace.
    """
    metric = result.metric
    latents = np.ascontiguousarray(result.latent_model.latents, dtype=np.float64)
    labels = np.ascontiguousarray(result.latent_model.latent_labels, dtype="<u4")
    d = metric.dim
    m = latents.shape[0]
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<III", MODEL_FORMAT_VERSION, d, m))
        f.write(np.ascontiguousarray(metric.matrix, dtype="<f8").tobytes())
        f.write(latents.astype("<f8").tobytes())
        f.write(labels.tobytes())
    meta = {
        "format_version": MODEL_FORMAT_VERSION,
        "dim": d,
        "m": m,
        "config": asdict(result.config) if result.config is not None else None,
        "loss_trace": [float(v) for v in np.asarray(result.loss_trace).ravel()],
    }
    with open(str(path) + ".meta", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")


def load_model(path) -> ModelFile:
    """Read a model written by :func:`save_model`; bit-exact round trip."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 8, "model header")
        if magic != MODEL_MAGIC:
            raise ValueError(f"model magic mismatch: expected {MODEL_MAGIC!r}, got {magic!r}")
        version, d, m = struct.unpack("<III", _read_exact(f, 12, "model header"))
        if version > MODEL_FORMAT_VERSION:
            raise ValueError(
                f"model format version {version} is newer than supported "
                f"version {MODEL_FORMAT_VERSION}")
        need = d * d * 8 + m * d * 8 + m * 4
        payload = f.read(need)
        if len(payload) != need:
            raise ValueError(
                f"unexpected end of payload: expected {need} bytes, got {len(payload)}")
    off = 0
    matrix = np.frombuffer(payload, dtype="<f8", count=d * d, offset=off).reshape(d, d)
    off += d * d * 8
    latents = np.frombuffer(payload, dtype="<f8", count=m * d, offset=off).reshape(m, d)
    off += m * d * 8
    labels = np.frombuffer(payload, dtype="<u4", count=m, offset=off).astype(np.int64)

    config = None
    loss_trace = None
    try:
        with open(str(path) + ".meta", "r", encoding="utf-8") as f:
            meta = json.load(f)
        if meta.get("config") is not None:
            config = TrainConfig(**meta["config"])
        if meta.get("loss_trace") is not None:
            loss_trace = np.asarray(meta["loss_trace"], dtype=np.float64)
    except FileNotFoundError:
        pass
    return ModelFile(
        format_version=version,
        metric=Metric(matrix.copy()),
        latents=latents.copy(),
        latent_labels=labels,
        config=config,
        loss_trace=loss_trace,
    )
