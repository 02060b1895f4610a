"""Synthetic stream generators, task-stream construction, and file loaders.

Generated feature matrices are always scaled to [0, 1] and sample order is
semantic: batches are consumed in sequence and never shuffled, because the
ordering carries the drift.
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .mathops import as_f64

# Threshold sequence of the classic sea-of-concepts stream: four equal
# segments with abrupt switches between these sums.
SEA_THRESHOLDS = (8.0, 9.0, 7.0, 9.5)


@dataclass
class StreamBatch:
    """One batch of the stream; labels ride along for evaluation only and
    never reach a training-gradient code path."""

    x: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.atleast_2d(as_f64(self.x))
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.x.shape[0],):
                raise ValueError("need one label per sample")

    def __len__(self):
        return self.x.shape[0]


@dataclass
class TaskData:
    pretrain: StreamBatch
    stream: list
    labeled_pool: StreamBatch
    holdout: StreamBatch


@dataclass
class TaskStream:
    tasks: list
    classes_per_task: list = field(default_factory=list)

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)


def gen_sea(n: int, noise: float, seed: int):
    """Sea-of-concepts stream: three uniform features on [0, 10], label is
    whether the first two sum above a threshold that switches across four
    equal segments; a ``noise`` fraction of labels is flipped; features are
    then rescaled to [0, 1]. Returns (features, labels)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0.0 <= noise < 1.0:
        raise ValueError("noise must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 10.0, size=(n, 3))
    y = np.zeros(n, dtype=np.int64)
    seg = (n + 3) // 4
    for k, theta in enumerate(SEA_THRESHOLDS):
        lo, hi = k * seg, min((k + 1) * seg, n)
        if lo >= hi:
            break
        y[lo:hi] = (x[lo:hi, 0] + x[lo:hi, 1] > theta).astype(np.int64)
    if noise > 0.0:
        flip = rng.random(n) < noise
        y[flip] = 1 - y[flip]
    return x / 10.0, y


def gen_hyperplane(n: int, u: int = 4, drift_rate: float = 0.001, seed: int = 0):
    """Rotating-hyperplane stream on the unit cube.

    The label is whether the weighted feature sum exceeds half the weight sum
    (strict inequality; the boundary always passes through the cube center).
    Every weight starts at 1 and performs a bounded random walk: it moves by
    ``drift_rate`` per sample in its current direction, reflecting at [0, 1],
    and each direction flips with probability 10% per 1000 samples.
    """
    if u < 2:
        raise ValueError("u must be at least 2")
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(n, u))
    y = np.zeros(n, dtype=np.int64)
    w = np.ones(u)
    direction = np.where(rng.random(u) < 0.5, 1.0, -1.0)
    flip_p = 0.10 / 1000.0
    for i in range(n):
        y[i] = int(float(x[i] @ w) > 0.5 * float(w.sum()))
        if drift_rate != 0.0:
            w = w + drift_rate * direction
            over = w > 1.0
            under = w < 0.0
            w[over] = 2.0 - w[over]
            w[under] = -w[under]
            direction[over | under] *= -1.0
            flips = rng.random(u) < flip_p
            direction[flips] *= -1.0
    return x, y


def hyperplane_boundary_weights(n_steps: int, u: int = 4,
                                drift_rate: float = 0.001, seed: int = 0):
    """Weight vector of the hyperplane stream after ``n_steps`` samples,
    replaying the exact generator dynamics (for boundary-drift probes)."""
    rng = np.random.default_rng(seed)
    rng.uniform(0.0, 1.0, size=(n_steps, u))  # keep the rng stream aligned
    w = np.ones(u)
    direction = np.where(rng.random(u) < 0.5, 1.0, -1.0)
    flip_p = 0.10 / 1000.0
    for _ in range(n_steps):
        if drift_rate != 0.0:
            w = w + drift_rate * direction
            over = w > 1.0
            under = w < 0.0
            w[over] = 2.0 - w[over]
            w[under] = -w[under]
            direction[over | under] *= -1.0
            flips = rng.random(u) < flip_p
            direction[flips] *= -1.0
    return w


def gen_gaussian_classes(n_per_class: int, n_classes: int, dim: int,
                         std: float = 0.05, seed: int = 0):
    """Well-separated gaussian blobs inside the unit cube, one per class,
    interleaved in random order. Centers sit on random corners of an inner
    {0.2, 0.8} grid with distinct patterns, so classes are several stds apart.
    """
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if 2 ** dim < n_classes:
        raise ValueError("dim too small to place distinct class centers")
    rng = np.random.default_rng(seed)
    corner_ids = rng.choice(2 ** dim, size=n_classes, replace=False)
    centers = np.empty((n_classes, dim))
    for c, cid in enumerate(corner_ids):
        bits = (cid >> np.arange(dim)) & 1
        centers[c] = np.where(bits == 1, 0.8, 0.2)
    x = np.empty((n_per_class * n_classes, dim))
    y = np.empty(n_per_class * n_classes, dtype=np.int64)
    order = rng.permutation(n_per_class * n_classes)
    per = np.repeat(np.arange(n_classes), n_per_class)[order]
    for i, c in enumerate(per):
        x[i] = centers[c] + rng.normal(0.0, std, size=dim)
        y[i] = c
    return np.clip(x, 0.0, 1.0), y


def batch_iter(x, labels=None, batch_size: int = 1000):
    """Consecutive non-overlapping batches in stream order; the final partial
    batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    x = np.atleast_2d(as_f64(x))
    n = x.shape[0]
    out = []
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        lab = None if labels is None else labels[lo:hi]
        out.append(StreamBatch(x[lo:hi], lab))
    return out


def _draw_labeled_pool(x, y, per_class: int, classes):
    """Earliest ``per_class`` samples of each class, in stream order."""
    idx = []
    for c in classes:
        where = np.flatnonzero(y == c)
        if where.size < per_class:
            raise ValueError(
                f"class {c} has only {where.size} samples, need {per_class}")
        idx.extend(where[:per_class].tolist())
    idx = np.sort(np.array(idx, dtype=np.int64))
    return StreamBatch(x[idx], y[idx])


def build_task(x, y, n_init: int, n_labeled_per_class: int, batch_size: int,
               holdout_size: int | None = None) -> TaskData:
    """Split one task's samples into pretraining chunk, streaming batches, a
    labeled pool drawn from the early stream, and a withheld evaluation batch.

    Pretrain, stream, and holdout are disjoint index ranges; the labeled pool
    reuses early stream samples (their labels are revealed, the features still
    stream through unlabeled).
    """
    x = np.atleast_2d(as_f64(x))
    y = np.asarray(y, dtype=np.int64)
    n = x.shape[0]
    hold = batch_size if holdout_size is None else holdout_size
    if n_init + hold >= n:
        raise ValueError("task too small for the requested pretrain/holdout split")
    pre = StreamBatch(x[:n_init], y[:n_init])
    stream_x, stream_y = x[n_init:n - hold], y[n_init:n - hold]
    holdout = StreamBatch(x[n - hold:], y[n - hold:])
    classes = np.unique(stream_y)
    pool = _draw_labeled_pool(stream_x, stream_y, n_labeled_per_class, classes)
    return TaskData(pretrain=pre,
                    stream=batch_iter(stream_x, stream_y, batch_size),
                    labeled_pool=pool,
                    holdout=holdout)


def make_single_task(x, y, n_init: int, n_labeled_per_class: int,
                     batch_size: int) -> TaskStream:
    """Whole labeled dataset as one task (the single-stream scenario keeps a
    holdout too, so the same evaluation machinery applies)."""
    task = build_task(x, y, n_init, n_labeled_per_class, batch_size)
    return TaskStream([task], [int(np.unique(y).size)])


def make_split_tasks(x, y, class_sets, n_init: int, n_labeled_per_class: int,
                     batch_size: int, holdout_size: int | None = None) -> TaskStream:
    """Partition a labeled dataset into tasks by class membership.

    ``class_sets`` lists the classes of each task; the sets must be disjoint
    and cover every class that occurs. Per-task budgets (``n_init`` and
    ``n_labeled_per_class``) are already per task, mirroring an even division
    of the global budget across tasks.
    """
    x = np.atleast_2d(as_f64(x))
    y = np.asarray(y, dtype=np.int64)
    seen = set()
    for cs in class_sets:
        s = set(int(c) for c in cs)
        if seen & s:
            raise ValueError("class sets must be disjoint")
        seen |= s
    missing = set(np.unique(y).tolist()) - seen
    if missing:
        raise ValueError(f"classes {sorted(missing)} not covered by any task")
    tasks, counts = [], []
    for cs in class_sets:
        mask = np.isin(y, list(cs))
        tasks.append(build_task(x[mask], y[mask], n_init, n_labeled_per_class,
                                batch_size, holdout_size))
        counts.append(len(cs))
    return TaskStream(tasks, counts)


def rotate_images(x, side: int, rng: np.random.Generator,
                  lo: float, hi: float):
    """Rotate flattened square images by per-sample uniform angles in
    [lo, hi] degrees, bilinear interpolation, zeros outside the frame."""
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        ang = rng.uniform(lo, hi)
        img = x[i].reshape(side, side)
        out[i] = ndimage.rotate(img, ang, reshape=False, order=1,
                                mode="constant", cval=0.0).ravel()
    return np.clip(out, 0.0, 1.0)


def make_rotation_tasks(x, y, angle_ranges, n_init: int,
                        n_labeled_per_class: int, batch_size: int, seed: int,
                        holdout_size: int | None = None) -> TaskStream:
    """One task per angle range; every sample of task i is rotated by its own
    uniform-random angle inside range i. Requires square flattened images."""
    x = np.atleast_2d(as_f64(x))
    y = np.asarray(y, dtype=np.int64)
    side = int(round(np.sqrt(x.shape[1])))
    if side * side != x.shape[1]:
        raise ValueError("rotation tasks need square flattened images")
    rng = np.random.default_rng(seed)
    n_tasks = len(angle_ranges)
    per = x.shape[0] // n_tasks
    tasks, counts = [], []
    for t, (lo, hi) in enumerate(angle_ranges):
        xs = x[t * per:(t + 1) * per]
        ys = y[t * per:(t + 1) * per]
        if lo == 0.0 and hi == 0.0:
            xr = xs.copy()
        else:
            xr = rotate_images(xs, side, rng, lo, hi)
        tasks.append(build_task(xr, ys, n_init, n_labeled_per_class,
                                batch_size, holdout_size))
        counts.append(int(np.unique(ys).size))
    return TaskStream(tasks, counts)


def make_permutation_tasks(x, y, n_tasks: int, n_init: int,
                           n_labeled_per_class: int, batch_size: int, seed: int,
                           holdout_size: int | None = None) -> TaskStream:
    """One fixed random pixel permutation per task; the first task uses the
    identity permutation."""
    x = np.atleast_2d(as_f64(x))
    y = np.asarray(y, dtype=np.int64)
    rng = np.random.default_rng(seed)
    per = x.shape[0] // n_tasks
    tasks, counts = [], []
    for t in range(n_tasks):
        xs = x[t * per:(t + 1) * per]
        ys = y[t * per:(t + 1) * per]
        if t == 0:
            xp = xs.copy()
        else:
            perm = rng.permutation(x.shape[1])
            xp = xs[:, perm]
        tasks.append(build_task(xp, ys, n_init, n_labeled_per_class,
                                batch_size, holdout_size))
        counts.append(int(np.unique(ys).size))
    return TaskStream(tasks, counts)


# -- file I/O ----------------------------------------------------------------

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def save_csv(path, x, y):
    """Write features and labels with the f0..f{u-1},label header."""
    x = np.atleast_2d(as_f64(x))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(x.shape[1])] + ["label"])
        for row, label in zip(x, y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path):
    """Load a feature CSV (header row, feature columns, final label column).

    Features are min-max scaled per column over the whole file; this is an
    offline convenience and a warning notes it. Malformed rows fail with the
    offending line number.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if not header or header[-1].strip() != "label":
            raise ValueError(f"{path}: last header column must be 'label'")
        width = len(header)
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ValueError(f"{path}:{lineno}: expected {width} cells, got {len(row)}")
            try:
                feats.append([float(v) for v in row[:-1]])
                labels.append(int(float(row[-1])))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric cell") from None
    if not feats:
        raise ValueError(f"{path}: no data rows")
    x = np.array(feats, dtype=np.float64)
    y = np.array(labels, dtype=np.int64)
    warnings.warn("load_csv scales each column min-max over the whole file; "
                  "this is an offline convenience, not a streaming transform",
                  stacklevel=2)
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (x - lo) / span, y


def load_idx(images_path, labels_path):
    """Load the big-endian idx image/label pair; pixels divided by 255."""
    with open(images_path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise ValueError(f"{images_path}: truncated header")
        magic, count, rows, cols = struct.unpack(">IIII", head)
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(f"{images_path}: bad magic 0x{magic:08x} at offset 0")
        data = np.frombuffer(fh.read(count * rows * cols), dtype=np.uint8)
        if data.size != count * rows * cols:
            raise ValueError(f"{images_path}: truncated payload")
        x = data.reshape(count, rows * cols).astype(np.float64) / 255.0
    with open(labels_path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise ValueError(f"{labels_path}: truncated header")
        magic, lcount = struct.unpack(">II", head)
        if magic != IDX_LABELS_MAGIC:
            raise ValueError(f"{labels_path}: bad magic 0x{magic:08x} at offset 0")
        y = np.frombuffer(fh.read(lcount), dtype=np.uint8).astype(np.int64)
        if y.size != lcount:
            raise ValueError(f"{labels_path}: truncated payload")
    if lcount != count:
        raise ValueError("image and label counts disagree")
    return x, y
