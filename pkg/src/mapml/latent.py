"""Per-class latent example estimation.

Each class is clustered independently by a metric-weighted k-means with a
proximal term that anchors the cluster centers to their previous outer
iterate: alternating sweeps of nearest-latent assignment and a closed-form
center update, followed by per-cluster margin computation (the empirical
mean squared distance of members to their latent example).
"""

import numpy as np

from .core import Dataset, Metric, TrainConfig

DEFAULT_TIE_TOLERANCE = 1e-12


class LatentModel:
    """Latent examples for every class, plus memberships and margins.

    latents          (m, d) latent example matrix, rows grouped by class
    latent_labels    (m,) class of each latent row
    membership       (n,) index of the latent each original example is
                     assigned to (always one of its own class)
    cluster_margins  (m,) empirical mean squared distance of members to
                     their latent; 0 for empty clusters
    per_class_counts (C,) number of latents per class
    """

    def __init__(self, latents, latent_labels, membership, cluster_margins,
                 per_class_counts, data_labels=None):
        self.latents = np.array(latents, dtype=np.float64, order="C")
        self.latent_labels = np.array(latent_labels, dtype=np.int64)
        self.membership = np.array(membership, dtype=np.int64)
        self.cluster_margins = np.array(cluster_margins, dtype=np.float64)
        self.per_class_counts = np.array(per_class_counts, dtype=np.int64)
        m = self.latents.shape[0]
        if self.latent_labels.shape != (m,) or self.cluster_margins.shape != (m,):
            raise ValueError("latent_labels and cluster_margins must have one entry per latent")
        if self.per_class_counts.sum() != m:
            raise ValueError("per_class_counts must sum to the number of latents")
        if (self.per_class_counts < 1).any():
            raise ValueError("every class must own at least one latent")
        expected = np.repeat(np.arange(self.per_class_counts.size), self.per_class_counts)
        if not np.array_equal(self.latent_labels, expected):
            raise ValueError("latent rows must be grouped by class in label order")
        if (self.cluster_margins < 0).any():
            raise ValueError("cluster margins must be nonnegative")
        if self.membership.min(initial=0) < 0 or self.membership.max(initial=-1) >= m:
            raise IndexError("membership index out of range")
        if data_labels is not None:
            if not np.array_equal(self.latent_labels[self.membership],
                                  np.asarray(data_labels)):
                raise ValueError("membership crosses class boundaries")
        for arr in (self.latents, self.latent_labels, self.membership,
                    self.cluster_margins, self.per_class_counts):
            arr.flags.writeable = False

    @property
    def m(self) -> int:
        return self.latents.shape[0]

    @property
    def d(self) -> int:
        return self.latents.shape[1]

    def members_of(self, o: int) -> np.ndarray:
        return np.nonzero(self.membership == o)[0]

    def replace(self, **kwargs) -> "LatentModel":
        """Copy with some fields swapped out."""
        fields = dict(
            latents=self.latents, latent_labels=self.latent_labels,
            membership=self.membership, cluster_margins=self.cluster_margins,
            per_class_counts=self.per_class_counts,
        )
        fields.update(kwargs)
        return LatentModel(**fields)

    def __repr__(self):
        return f"LatentModel(m={self.m}, d={self.d})"


def latents_per_class(n_r: int, tau: float) -> int:
    """Number of latents for a class of size n_r at ratio tau percent.

    Half-up rounding, floored at one latent per class.
    """
    return max(1, int(np.floor(tau / 100.0 * n_r + 0.5)))


def _farthest_point_indices(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy farthest-point selection under Euclidean distance.

    The first point is drawn from ``rng``; every further point maximizes
    the distance to the points already chosen (ties to the smaller index).
    """
    n = X.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    d2 = np.einsum("ij,ij->i", X - X[chosen[0]], X - X[chosen[0]])
    for i in range(1, k):
        nxt = int(np.argmax(d2))
        chosen[i] = nxt
        np.minimum(d2, np.einsum("ij,ij->i", X - X[nxt], X - X[nxt]), out=d2)
    return chosen


def _class_offsets(per_class_counts: np.ndarray) -> np.ndarray:
    """Start index of each class's latent block."""
    return np.concatenate([[0], np.cumsum(per_class_counts)[:-1]])


def _assign(data: Dataset, model: LatentModel, XM: np.ndarray, qx: np.ndarray,
            metric: Metric, tie_tolerance: float) -> np.ndarray:
    """Membership under ``metric`` given precomputed XM = X @ M and row forms qx."""
    membership = np.empty(data.n, dtype=np.int64)
    offsets = _class_offsets(model.per_class_counts)
    for r in range(data.n_classes):
        idx = data.class_indices(r)
        lo = offsets[r]
        hi = lo + model.per_class_counts[r]
        Z = model.latents[lo:hi]
        qz = np.einsum("ij,ij->i", Z @ metric.matrix, Z)
        d2 = qx[idx, None] + qz[None, :] - 2.0 * (XM[idx] @ Z.T)
        best = d2.min(axis=1)
        # first index within tie_tolerance of the minimum
        local = (d2 <= best[:, None] + tie_tolerance).argmax(axis=1)
        membership[idx] = lo + local
    return membership


def assign_membership(data: Dataset, model: LatentModel, metric: Metric,
                      tie_tolerance: float = DEFAULT_TIE_TOLERANCE) -> LatentModel:
    """Assign each example to its nearest same-class latent under ``metric``.

    Ties within ``tie_tolerance`` on the squared distance go to the
    smaller latent index. Margins are carried over unchanged; call
    :func:`compute_margins` to refresh them.
    """
    XM = data.features @ metric.matrix
    qx = np.einsum("ij,ij->i", XM, data.features)
    membership = _assign(data, model, XM, qx, metric, tie_tolerance)
    return model.replace(membership=membership)


def update_latents(data: Dataset, model: LatentModel, z_prev: np.ndarray,
                   gamma: float) -> LatentModel:
    """Closed-form latent update with memberships held fixed.

    Each latent moves to (sum of members + gamma * previous-outer-iterate
    row) / (member count + gamma). ``z_prev`` is the anchor from the
    previous outer iteration, not the previous sweep. An empty cluster
    with gamma = 0 keeps its anchor row.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    z_prev = np.asarray(z_prev, dtype=np.float64)
    if z_prev.shape != model.latents.shape:
        raise ValueError(f"z_prev shape {z_prev.shape} != latents shape {model.latents.shape}")
    m = model.m
    counts = np.bincount(model.membership, minlength=m).astype(np.float64)
    # segment sums in a deterministic order (stable sort by cluster)
    order = np.argsort(model.membership, kind="stable")
    sorted_members = model.membership[order]
    starts = np.searchsorted(sorted_members, np.arange(m))
    sums = np.zeros((m, data.d))
    nonempty = counts > 0
    if nonempty.any():
        seg = np.add.reduceat(data.features[order], starts[nonempty], axis=0)
        sums[nonempty] = seg
    denom = counts + gamma
    z_new = np.where((denom > 0)[:, None],
                     (sums + gamma * z_prev) / np.where(denom > 0, denom, 1.0)[:, None],
                     z_prev)
    return model.replace(latents=z_new)


def compute_margins(data: Dataset, model: LatentModel, metric: Metric) -> LatentModel:
    """Per-cluster empirical mean of D^2(x_i, z_o) over members; 0 if empty."""
    diffs = data.features - model.latents[model.membership]
    vals = np.einsum("ij,ij->i", diffs @ metric.matrix, diffs)
    np.maximum(vals, 0.0, out=vals)
    m = model.m
    counts = np.bincount(model.membership, minlength=m).astype(np.float64)
    sums = np.bincount(model.membership, weights=vals, minlength=m)
    margins = np.divide(sums, counts, out=np.zeros(m), where=counts > 0)
    return model.replace(cluster_margins=margins)


def init_latents(data: Dataset, tau: float, seed: int) -> LatentModel:
    """Seed latent examples by within-class farthest-point selection.

    Each class r gets max(1, round(tau/100 * n_r)) latents chosen greedily
    under Euclidean distance; membership and margins are then computed
    under the identity metric.
    """
    if not 0.0 < tau <= 100.0:
        raise ValueError(f"tau must be in (0, 100], got {tau}")
    rng = np.random.default_rng(seed)
    blocks = []
    labels = []
    counts = []
    for r in range(data.n_classes):
        idx = data.class_indices(r)
        if idx.size == 0:
            raise ValueError(f"class {r} has no examples")
        m_r = latents_per_class(idx.size, tau)
        X_r = data.features[idx]
        picks = _farthest_point_indices(X_r, m_r, rng)
        blocks.append(X_r[picks])
        labels.append(np.full(m_r, r, dtype=np.int64))
        counts.append(m_r)
    latents = np.concatenate(blocks, axis=0)
    latent_labels = np.concatenate(labels)
    model = LatentModel(
        latents=latents,
        latent_labels=latent_labels,
        membership=np.zeros(data.n, dtype=np.int64),
        cluster_margins=np.zeros(latents.shape[0]),
        per_class_counts=np.asarray(counts, dtype=np.int64),
    )
    identity = Metric.identity(data.d)
    model = assign_membership(data, model, identity)
    return compute_margins(data, model, identity)


def surrogate_objective(data: Dataset, model: LatentModel, metric: Metric,
                        z_prev: np.ndarray, gamma: float, class_r=None) -> float:
    """Assignment cost plus proximal anchor term.

    This is the quantity each latent-stage sweep must not increase:
    sum_i D^2(x_i, z_{membership(i)}) + gamma * sum_o D^2(z_o, z_prev_o),
    either over all classes (default) or restricted to ``class_r``.
    """
    if class_r is None:
        rows = slice(None)
        lat = slice(None)
    else:
        rows = data.labels == class_r
        lat = model.latent_labels == class_r
    diffs = data.features[rows] - model.latents[model.membership[rows]]
    cost = float(np.einsum("ij,ij->i", diffs @ metric.matrix, diffs).sum())
    zdiff = model.latents[lat] - np.asarray(z_prev, dtype=np.float64)[lat]
    cost += gamma * float(np.einsum("ij,ij->i", zdiff @ metric.matrix, zdiff).sum())
    return cost


def run_latent_stage(data: Dataset, prev: LatentModel, metric: Metric,
                     cfg: TrainConfig) -> LatentModel:
    """One latent stage: EM sweeps from the previous outer iterate.

    Starts at z = prev.latents (which doubles as the proximal anchor for
    every sweep), alternates assignment and closed-form update
    ``cfg.latent_em_iters`` times, then refreshes membership once more so
    the returned margins (computed under ``metric``) match the final
    latents.
    """
    z_anchor = prev.latents
    XM = data.features @ metric.matrix
    qx = np.einsum("ij,ij->i", XM, data.features)
    model = prev
    for _ in range(cfg.latent_em_iters):
        membership = _assign(data, model, XM, qx, metric, cfg.tie_tolerance)
        model = model.replace(membership=membership)
        model = update_latents(data, model, z_anchor, cfg.gamma)
    membership = _assign(data, model, XM, qx, metric, cfg.tie_tolerance)
    model = model.replace(membership=membership)
    return compute_margins(data, model, metric)
