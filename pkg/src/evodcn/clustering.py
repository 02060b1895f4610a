"""Per-layer evolving cluster sets and allegiance-based classification.

Each stacked layer owns a cluster set living in that layer's code space.
Centroids are stored as rows of one matrix so winner search is a single
vectorized distance computation; supports and class-allegiance rows are kept
aligned with the centroid rows. Allegiance rows of clusters that have never
seen labeled data are NaN and score as a uniform prior over classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mathops import RunningStat, as_f64, softmax


@dataclass
class Cluster:
    """Snapshot view of one cluster."""

    centroid: np.ndarray
    support: int
    class_allegiance: np.ndarray | None


class LayerClusters:
    """Cluster set of one layer plus its winning-distance statistics.

    ``routed`` counts every sample pushed through :meth:`observe` and
    ``reassign_adjust`` accumulates support removed by empty-cluster
    reassignment, so the bookkeeping identity

        sum(supports) == routed + initial_count - reassign_adjust

    holds at all times.
    """

    def __init__(self, centroids, supports=None):
        self.centroids = np.atleast_2d(as_f64(centroids)).copy()
        n = self.centroids.shape[0]
        if n == 0:
            raise ValueError("a cluster set needs at least one cluster")
        if supports is None:
            self.supports = np.ones(n, dtype=np.int64)
        else:
            self.supports = np.asarray(supports, dtype=np.int64).copy()
        self.allegiance = None
        self.win_stat = RunningStat()
        self.initial_count = n
        self.routed = 0
        self.reassign_adjust = 0

    @classmethod
    def from_seeds(cls, seeds) -> "LayerClusters":
        return cls(np.stack([as_f64(s) for s in seeds]))

    @property
    def count(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def cluster(self, j: int) -> Cluster:
        row = None if self.allegiance is None else self.allegiance[j].copy()
        return Cluster(self.centroids[j].copy(), int(self.supports[j]), row)

    def total_support(self) -> int:
        return int(self.supports.sum())

    def support_invariant_ok(self) -> bool:
        return self.total_support() == self.routed + self.initial_count - self.reassign_adjust

    # -- structural coordinate edits (driven by node growth/pruning) -------

    def grow_coordinate(self):
        self.centroids = np.hstack(
            [self.centroids, np.zeros((self.count, 1))])

    def drop_coordinate(self, index: int):
        self.centroids = np.delete(self.centroids, index, axis=1)


def distances(lc: LayerClusters, h) -> np.ndarray:
    h = as_f64(h)
    if h.shape[-1] != lc.dim:
        raise ValueError(f"code has {h.shape[-1]} features, clusters have {lc.dim}")
    if h.ndim == 1:
        d = lc.centroids - h
        return np.sqrt(np.sum(d * d, axis=1))
    d = lc.centroids[None, :, :] - h[:, None, :]
    return np.sqrt(np.sum(d * d, axis=2))


def winning_cluster(lc: LayerClusters, h):
    """Index and distance of the nearest centroid; ties pick the lowest index."""
    dist = distances(lc, h)
    j = int(np.argmin(dist))
    return j, float(dist[j])


def grow_factor(distance: float) -> float:
    """Dynamic confidence degree for the cluster growth test."""
    return 2.0 * np.exp(-distance) + 2.0


def check_cluster_grow(distance: float, win_stat: RunningStat) -> bool:
    """Growth test on the winning distance; the caller pushes the distance
    into ``win_stat`` before testing."""
    k = grow_factor(distance)
    return distance > win_stat.mean + k * win_stat.std


def add_cluster(lc: LayerClusters, h) -> LayerClusters:
    """Append a cluster at ``h`` with support 1 and unknown allegiance."""
    h = as_f64(h)
    if h.shape != (lc.dim,):
        raise ValueError(f"centroid must have {lc.dim} coordinates")
    lc.centroids = np.vstack([lc.centroids, h[None, :]])
    lc.supports = np.append(lc.supports, 1)
    if lc.allegiance is not None:
        lc.allegiance = np.vstack(
            [lc.allegiance, np.full((1, lc.allegiance.shape[1]), np.nan)])
    return lc


def update_centroid(lc: LayerClusters, j: int, h) -> None:
    """Winner-takes-all move: c <- c - (c - h)/(support + 1), support += 1.

    The step shrinks as the cluster accumulates support, so feeding the same
    point repeatedly converges to the running mean of everything assigned.
    """
    h = as_f64(h)
    c = lc.centroids[j]
    lc.centroids[j] = c - (c - h) / (lc.supports[j] + 1.0)
    lc.supports[j] += 1


def observe(lc: LayerClusters, h):
    """Route one code through the cluster set: find the winner, refresh the
    winning-distance statistics, then either grow a new cluster or update the
    winner. Returns (event, index, distance) with event in {"grow", "update"}.
    """
    j, dist = winning_cluster(lc, h)
    lc.win_stat.update(dist)
    lc.routed += 1
    if check_cluster_grow(dist, lc.win_stat):
        add_cluster(lc, h)
        return "grow", lc.count - 1, dist
    update_centroid(lc, j, h)
    return "update", j, dist


def reassign_empty(lc: LayerClusters, assignment_counts, rng: np.random.Generator):
    """Re-seed clusters that received no assignments in the last batch.

    Each empty cluster jumps to the centroid of a randomly chosen cluster from
    the most-populated quartile, plus per-coordinate gaussian noise of std
    1e-4, with support reset to 1. A batch in which every cluster is empty is
    a no-op.
    """
    counts = np.asarray(assignment_counts)
    if counts.shape != (lc.count,):
        raise ValueError("need one assignment count per cluster")
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0 or empty.size == lc.count:
        return lc
    populated = np.flatnonzero(counts > 0)
    order = populated[np.argsort(-counts[populated], kind="stable")]
    donors = order[:max(1, lc.count // 4)]
    for e in empty:
        donor = int(donors[rng.integers(donors.size)])
        lc.centroids[e] = lc.centroids[donor] + rng.normal(0.0, 1e-4, size=lc.dim)
        lc.reassign_adjust += int(lc.supports[e]) - 1
        lc.supports[e] = 1
        if lc.allegiance is not None:
            lc.allegiance[e] = np.nan
    return lc


def allegiance(lc: LayerClusters, h) -> np.ndarray:
    """Affinity of a code to every cluster: exp(-distance), normalized by the
    maximum so the nearest cluster scores exactly 1.

    Accepts a single code or a batch (one row of affinities per code). When
    every raw affinity underflows to zero, the row is rescaled by the nearest
    distance instead, which preserves the ratios.
    """
    dist = distances(lc, h)
    e = np.exp(-dist)
    if e.ndim == 1:
        m = e.max()
        if m <= 0.0:
            return np.exp(dist.min() - dist)
        return e / m
    m = e.max(axis=1, keepdims=True)
    safe = m > 0.0
    out = e / np.where(safe, m, 1.0)
    if not np.all(safe):
        fallback = np.exp(dist.min(axis=1, keepdims=True) - dist)
        out = np.where(safe, out, fallback)
    return out


def compute_class_allegiance(lc: LayerClusters, latents, labels, num_classes: int):
    """Associate clusters with classes from labeled codes.

    Each cluster's allegiance to class m is the mean of its normalized
    affinity over the labeled codes of class m. Classes with no labeled codes
    keep allegiance 0. Recomputing with the same labeled set is idempotent.
    """
    latents = np.atleast_2d(as_f64(latents))
    labels = np.asarray(labels, dtype=np.int64)
    if latents.shape[0] != labels.size:
        raise ValueError("one label per labeled code is required")
    if labels.size and labels.max() >= num_classes:
        raise ValueError("class index out of range")
    if labels.size and labels.min() < 0:
        raise ValueError("class index out of range")
    aff = allegiance(lc, latents)              # (n, clusters)
    out = np.zeros((lc.count, num_classes))
    for m in range(num_classes):
        rows = aff[labels == m]
        if rows.shape[0]:
            out[:, m] = rows.mean(axis=0)
    lc.allegiance = out
    return lc


def _effective_allegiance(lc: LayerClusters, num_classes: int) -> np.ndarray:
    if num_classes <= 0:
        raise ValueError("need at least one class")
    if lc.allegiance is None:
        return np.full((lc.count, num_classes), 1.0 / num_classes)
    if lc.allegiance.shape[1] != num_classes:
        raise ValueError("allegiance was computed for a different class count")
    out = lc.allegiance.copy()
    unknown = np.isnan(out[:, 0])
    out[unknown] = 1.0 / num_classes
    return out


def layer_score_batch(lc: LayerClusters, h, num_classes: int) -> np.ndarray:
    """Class scores of a batch of codes from one layer's clusters: softmax of
    the allegiance-weighted affinities, one row per sample summing to 1."""
    h = np.atleast_2d(as_f64(h))
    aff = np.exp(-distances(lc, h))            # (n, clusters)
    logits = aff @ _effective_allegiance(lc, num_classes)
    return softmax(logits, axis=1)


def layer_score(lc: LayerClusters, h, num_classes: int) -> np.ndarray:
    return layer_score_batch(lc, h[None, :] if as_f64(h).ndim == 1 else h,
                             num_classes)[0]


def predict_batch(net, per_layer, x, num_classes: int):
    """Summed per-layer scores and argmax labels for a batch of raw inputs.

    Also returns the extractor codes so callers can reuse them (for the drift
    signal) without a second forward pass.
    """
    if len(per_layer) != net.depth:
        raise ValueError(f"expected {net.depth} cluster sets, got {len(per_layer)}")
    x = np.atleast_2d(as_f64(x))
    z, latents = net.latents(x)
    total = np.zeros((x.shape[0], num_classes))
    for lc, h in zip(per_layer, latents):
        if lc is None:
            continue
        total += layer_score_batch(lc, h, num_classes)
    labels = np.argmax(total, axis=1)
    return labels, total, z


def predict(net, per_layer, x, num_classes: int):
    """Predicted class and summed score vector for one sample; ties resolve
    to the lowest class index."""
    x = as_f64(x)
    if x.ndim != 1:
        raise ValueError("predict expects a single sample")
    labels, total, _ = predict_batch(net, per_layer, x[None, :], num_classes)
    return int(labels[0]), total[0]
