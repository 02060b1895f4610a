"""Prequential experiment harness.

Implements the streaming learning policy batch by batch: predict first (test-
then-train), check for drift on the extracted-feature signal, adapt widths
per sample, run one gradient pass in minibatches, run the cluster pass, and
log structure. Task orchestration layers the pretraining, labeled-pool
reveal, holdout evaluation, and snapshotting on top.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import clustering, structural
from .autoencoder import (EvolvingNetwork, SgdConfig, layer_gradients_batch,
                          sgd_step)
from .clustering import LayerClusters, predict_batch
from .continual import (TaskMemory, lambda_for, snapshot_task,
                        ucl_regularizer_batch)
from .mathops import as_f64
from .streams import (StreamBatch, TaskStream, gen_gaussian_classes,
                      gen_hyperplane, gen_sea, load_csv, load_idx,
                      make_permutation_tasks, make_rotation_tasks,
                      make_single_task, make_split_tasks)


@dataclass
class ExperimentConfig:
    """Experiment knobs; the defaults mirror the reference protocol
    (batch 1000, minibatch 16, lr 0.01 / momentum 0.95 / decay 5e-5,
    significance levels 0.001/0.005/0.001, clustering strength 0.01,
    max regularization strength 5, 50 pretraining epochs)."""

    stream: dict = field(default_factory=dict)
    tasks: dict | None = None
    batch_size: int = 1000
    n_init: int = 1000
    n_labeled_per_class: int = 500
    n_epochs: int = 50
    sae_width: int | None = None          # None resolves to 2u (96 for images)
    extractor_widths: list | None = None  # None resolves to [4u, 4u]
    sgd: SgdConfig = field(default_factory=SgdConfig)
    cluster_pull: float = 0.01
    alpha_x: float = 0.001
    alpha_w: float = 0.005
    alpha_d: float = 0.001
    beta: float = 5.0
    minibatch: int = 16
    seed: int = 0
    enable_lcl: bool = True
    width_cap_factor: int = 10
    outdir: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        sgd = d.pop("sgd", {})
        if isinstance(sgd, dict):
            sgd = SgdConfig(**sgd)
        return cls(sgd=sgd, **d)

    def resolved_widths(self, input_dim: int, image_data: bool):
        ext = self.extractor_widths
        if ext is None:
            ext = [4 * input_dim, 4 * input_dim]
        sae = self.sae_width
        if sae is None:
            sae = 96 if image_data else 2 * input_dim
        return list(ext), int(sae)


@dataclass
class MetricsReport:
    preq_acc: list
    preq_mean: float
    task_acc: float
    bwt: float
    fwt: float
    transfer_defined: bool
    rmatrix: np.ndarray
    b_bar: np.ndarray | None
    metric_rows: list
    evolution_rows: list
    wall_time: float
    counters: dict


def backward_transfer(rmatrix: np.ndarray) -> float:
    """Mean drop/rise of earlier-task accuracy after the final task, in
    percentage points."""
    n = rmatrix.shape[0]
    if n < 2:
        return 0.0
    last = rmatrix[n - 1]
    diag = np.diag(rmatrix)
    return 100.0 * float(np.mean(last[: n - 1] - diag[: n - 1]))


def forward_transfer(rmatrix: np.ndarray, b_bar) -> float:
    """Mean benefit on each task before training it, relative to a fresh
    model baseline, in percentage points."""
    n = rmatrix.shape[0]
    if n < 2 or b_bar is None:
        return 0.0
    vals = [rmatrix[i - 1, i] - b_bar[i] for i in range(1, n)]
    return 100.0 * float(np.mean(vals))


class Experiment:
    """Mutable state of one streaming run."""

    def __init__(self, cfg: ExperimentConfig, input_dim: int, num_classes: int,
                 image_data: bool = False, rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.num_classes = num_classes
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        ext_widths, sae_width = cfg.resolved_widths(input_dim, image_data)
        self.net = EvolvingNetwork.create(input_dim, ext_widths, sae_width,
                                          self.rng, cfg.width_cap_factor)
        self.clusters: list[LayerClusters | None] = [None]
        self.detector = structural.DriftDetector(cfg.alpha_x, cfg.alpha_w,
                                                 cfg.alpha_d)
        self.mem = TaskMemory(cfg.beta)
        self.labeled_x = np.zeros((0, input_dim))
        self.labeled_y = np.zeros(0, dtype=np.int64)
        self.allegiance_dirty = [False]
        self.batch_index = 0
        self.task_index = 0
        self.preq_acc: list[float] = []
        self.metric_rows: list[dict] = []
        self.evolution_rows: list[dict] = []
        self.labeled_consumed = 0
        self.grad_samples = 0
        self.cluster_routings = 0

    # -- logging -----------------------------------------------------------

    def _log_event(self, layer: int, event: str):
        self.evolution_rows.append({
            "batch_index": self.batch_index,
            "layer": layer,
            "event": event,
            "width_after": self.net.sae[layer].n_nodes if layer < self.net.depth else 0,
            "depth_after": self.net.depth,
        })

    def total_clusters(self) -> int:
        return sum(lc.count for lc in self.clusters if lc is not None)

    # -- labeled pool and allegiance ----------------------------------------

    def reveal_labels(self, pool: StreamBatch):
        """Consume a labeled pool: store it for allegiance computation and
        refresh every layer's class association."""
        if pool.labels is None:
            raise ValueError("labeled pool needs labels")
        self.labeled_x = np.vstack([self.labeled_x, pool.x])
        self.labeled_y = np.concatenate([self.labeled_y, pool.labels])
        self.labeled_consumed += len(pool)
        self.allegiance_dirty = [True] * self.net.depth
        self._refresh_allegiance()

    def _refresh_allegiance(self):
        if not any(self.allegiance_dirty) or self.labeled_x.shape[0] == 0:
            return
        _, latents = self.net.latents(self.labeled_x)
        for l, dirty in enumerate(self.allegiance_dirty):
            lc = self.clusters[l]
            if dirty and lc is not None:
                clustering.compute_class_allegiance(
                    lc, latents[l], self.labeled_y, self.num_classes)
                self.allegiance_dirty[l] = False

    # -- structural adaptation ----------------------------------------------

    def _adapt_widths(self, x, scope=None):
        """Per-sample width adaptation of every stacked layer in scope."""
        inp = self.net.extractor.encode(x)
        for l in range(self.net.depth):
            layer = self.net.sae[l]
            state = self.net.layer_states[l]
            h = layer.encode(inp, "relu")
            if scope is None or l in scope:
                state.act_stat.update(np.abs(h))
                ns = structural.ns_estimate(self.net, l, inp)
                state.bias_stat.update(ns.bias2)
                state.var_stat.update(ns.variance)
                changed = False
                if structural.check_grow(state.bias_stat, ns.bias2):
                    if structural.grow_network_node(self.net, self.clusters,
                                                    l, self.rng):
                        self._log_event(l, "grow_node")
                        self.allegiance_dirty[l] = True
                        changed = True
                    # all four minimum trackers reset when a test fires
                    state.bias_stat.reset_min()
                    state.var_stat.reset_min()
                elif structural.check_prune(state.var_stat, ns.variance):
                    idx = structural.prune_network_node(self.net, self.clusters, l)
                    state.var_stat.reset_min()
                    state.bias_stat.reset_min()
                    if idx is not None:
                        self._log_event(l, "prune_node")
                        self.allegiance_dirty[l] = True
                        changed = True
                if changed:
                    h = layer.encode(inp, "relu")
            inp = h

    # -- gradient training ---------------------------------------------------

    def _winning_pulls(self, lc: LayerClusters | None, h):
        if lc is None:
            return None
        dist = clustering.distances(lc, h)
        return lc.centroids[np.argmin(dist, axis=1)]

    def _train_minibatch(self, x, scope=None):
        """One averaged-gradient step on a minibatch; stacked layers each
        minimize their own reconstruction plus the pull toward their current
        winning centroid, the extractor minimizes input reconstruction plus
        the stability term when earlier-task snapshots exist."""
        cfg = self.cfg
        z, latents = self.net.latents(x)
        if scope is None:
            extra = None
            if cfg.enable_lcl and self.mem.active():
                _, xhat = self.net.extractor.reconstruct(x)
                _, extra = ucl_regularizer_batch(self.mem, x, xhat)
            g1, g2 = self.net.extractor.gradients_batch(x, extra)
            sgd_step(self.net.extractor.layers[0], g1, cfg.sgd)
            sgd_step(self.net.extractor.layers[1], g2, cfg.sgd)
        layer_range = range(self.net.depth) if scope is None else scope
        for l in layer_range:
            inp = z if l == 0 else latents[l - 1]
            pulls = self._winning_pulls(self.clusters[l], latents[l])
            alpha = cfg.cluster_pull if pulls is not None else 0.0
            grads = layer_gradients_batch(self.net.sae[l], inp, pulls, alpha)
            sgd_step(self.net.sae[l], grads, cfg.sgd)

    def _train_pass(self, x, epochs: int, scope=None, audit: bool = False):
        n = x.shape[0]
        mb = self.cfg.minibatch
        for _ in range(epochs):
            for lo in range(0, n, mb):
                chunk = x[lo:lo + mb]
                for row in chunk:
                    self._adapt_widths(row, scope)
                self._train_minibatch(chunk, scope)
                if audit:
                    self.grad_samples += chunk.shape[0]

    # -- clustering ------------------------------------------------------------

    def _seed_clusters(self, x, scope=None):
        seeds_needed = [l for l in (scope if scope is not None
                                    else range(self.net.depth))
                        if self.clusters[l] is None]
        if not seeds_needed:
            return
        head = x[:2] if x.shape[0] >= 2 else np.vstack([x[:1], x[:1]])
        _, latents = self.net.latents(head)
        for l in seeds_needed:
            self.clusters[l] = LayerClusters.from_seeds(latents[l])
            self.allegiance_dirty[l] = True

    def _cluster_pass(self, x, epochs: int, scope=None, audit: bool = False):
        layer_range = range(self.net.depth) if scope is None else scope
        for _ in range(epochs):
            _, latents = self.net.latents(x)
            for l in layer_range:
                lc = self.clusters[l]
                if lc is None:
                    continue
                counts = np.zeros(lc.count, dtype=np.int64)
                h = latents[l]
                for i in range(h.shape[0]):
                    event, j, _ = clustering.observe(lc, h[i])
                    if event == "grow":
                        counts = np.append(counts, 1)
                    else:
                        counts[j] += 1
                    if audit:
                        self.cluster_routings += 1
                clustering.reassign_empty(lc, counts, self.rng)
                assert lc.support_invariant_ok()

    # -- protocol steps ----------------------------------------------------------

    def pretrain(self, batch, only_layer: int | None = None):
        """Multi-epoch initialization on a held chunk: a network phase with
        per-sample width adaptation, then a single cluster pass. With
        ``only_layer`` set, training is restricted to that stacked layer
        (used right after a drift-triggered depth growth).

        The cluster pass runs once rather than once per epoch: repeating it
        over the same chunk would multiply supports by the epoch count,
        freezing centroids for the entire stream that follows.
        """
        x = batch.x if isinstance(batch, StreamBatch) else np.atleast_2d(as_f64(batch))
        if x.shape[0] == 0:
            raise ValueError("pretraining chunk is empty")
        scope = None if only_layer is None else [only_layer]
        self._seed_clusters(x, scope)
        self._train_pass(x, self.cfg.n_epochs, scope)
        self._cluster_pass(x, 1, scope)
        # pretraining reshapes the latent geometry; the winning-distance
        # statistics of the streaming phase start from the settled geometry
        for l in (scope if scope is not None else range(self.net.depth)):
            lc = self.clusters[l]
            if lc is not None:
                lc.win_stat.reset()
        self._refresh_allegiance()

    def process_batch(self, batch: StreamBatch) -> float:
        """Test-then-train handling of one stream batch. Accuracy is recorded
        from predictions made before any state change."""
        self.batch_index += 1
        # the network trains every batch, so class associations computed from
        # the stored pool go stale; refresh them against the current codes
        self.allegiance_dirty = [True] * self.net.depth
        self._refresh_allegiance()
        x = batch.x
        grad_before, routed_before = self.grad_samples, self.cluster_routings

        pred, _, z = predict_batch(self.net, self.clusters, x, self.num_classes)
        if batch.labels is not None:
            acc = float(np.mean(pred == batch.labels))
        else:
            acc = float("nan")
        self.preq_acc.append(acc)

        signal = z.mean(axis=1)
        state = self.detector.update(signal)
        if state == structural.DRIFT:
            new_idx = structural.add_layer(self.net, self.rng,
                                           self.cfg.width_cap_factor)
            self.clusters.append(None)
            self.allegiance_dirty.append(False)
            self._log_event(new_idx, "add_layer")
            self.pretrain(StreamBatch(x), only_layer=new_idx)
        elif state == structural.WARNING:
            self._log_event(self.net.depth - 1, "warning")

        self._train_pass(x, epochs=1, audit=True)
        self._cluster_pass(x, epochs=1, audit=True)

        # single-pass audit: every sample got exactly one gradient pass and
        # one routing per layer
        assert self.grad_samples - grad_before == x.shape[0]
        assert self.cluster_routings - routed_before == x.shape[0] * sum(
            1 for lc in self.clusters if lc is not None)

        self.metric_rows.append({
            "batch": self.batch_index,
            "preq_acc": acc,
            "task": self.task_index,
            "depth": self.net.depth,
            "total_width": self.net.total_width(),
            "total_clusters": self.total_clusters(),
        })
        return acc

    def evaluate(self, x, labels) -> float:
        """Accuracy on held-out data; refreshes stale allegiance but mutates
        nothing else."""
        self.allegiance_dirty = [True] * self.net.depth
        self._refresh_allegiance()
        pred, _, _ = predict_batch(self.net, self.clusters,
                                   np.atleast_2d(as_f64(x)), self.num_classes)
        return float(np.mean(pred == np.asarray(labels)))

    # -- task lifecycle -----------------------------------------------------------

    def begin_task(self, classes_in_task: int):
        self.task_index += 1
        self.mem.register_task_classes(classes_in_task)
        self.mem.lambdas = lambda_for(self.mem, self.task_index)
        if self.task_index > 1:
            self.detector.reset()
            for lc in self.clusters:
                if lc is not None:
                    lc.win_stat.reset()

    def end_task(self, classes_in_task: int):
        snapshot_task(self.net, self.mem, classes_in_task)


def _fresh_baseline_accuracy(ts: TaskStream, cfg: ExperimentConfig,
                             input_dim: int, num_classes: int,
                             image_data: bool) -> np.ndarray:
    """Holdout accuracy of freshly initialized models given only each task's
    labeled pool, averaged over 3 seeds: the no-transfer reference."""
    n = ts.n_tasks
    out = np.zeros(n)
    for j, task in enumerate(ts.tasks):
        accs = []
        for s in range(3):
            rng = np.random.default_rng([cfg.seed, j, s, 0xB5E1])
            exp = Experiment(cfg, input_dim, num_classes, image_data, rng=rng)
            exp._seed_clusters(task.labeled_pool.x)
            exp.reveal_labels(task.labeled_pool)
            accs.append(exp.evaluate(task.holdout.x, task.holdout.labels))
        out[j] = float(np.mean(accs))
    return out


def run_task_stream(ts: TaskStream, cfg: ExperimentConfig, input_dim: int,
                    num_classes: int, image_data: bool = False) -> MetricsReport:
    """Run the full protocol over a task stream (a single task reduces to the
    plain prequential scenario)."""
    t0 = time.perf_counter()
    n_tasks = ts.n_tasks
    exp = Experiment(cfg, input_dim, num_classes, image_data)
    rmatrix = np.full((n_tasks, n_tasks), np.nan)
    for t, task in enumerate(ts.tasks, start=1):
        classes_in_task = ts.classes_per_task[t - 1]
        exp.begin_task(classes_in_task)
        exp.pretrain(task.pretrain)
        # the task's labeled pool arrives with the first batch; associate
        # centroids with classes before predicting it
        exp.reveal_labels(task.labeled_pool)
        for b in task.stream:
            exp.process_batch(b)
        for j, other in enumerate(ts.tasks):
            rmatrix[t - 1, j] = exp.evaluate(other.holdout.x, other.holdout.labels)
        exp.end_task(classes_in_task)

    expected_labels = sum(len(task.labeled_pool) for task in ts.tasks)
    assert exp.labeled_consumed == expected_labels

    transfer_defined = n_tasks > 1
    b_bar = None
    if transfer_defined:
        b_bar = _fresh_baseline_accuracy(ts, cfg, input_dim, num_classes,
                                         image_data)
    preq = exp.preq_acc
    report = MetricsReport(
        preq_acc=preq,
        preq_mean=float(np.nanmean(preq)) if preq else float("nan"),
        task_acc=float(np.mean(rmatrix[n_tasks - 1])),
        bwt=backward_transfer(rmatrix) if transfer_defined else 0.0,
        fwt=forward_transfer(rmatrix, b_bar) if transfer_defined else 0.0,
        transfer_defined=transfer_defined,
        rmatrix=rmatrix,
        b_bar=b_bar,
        metric_rows=exp.metric_rows,
        evolution_rows=exp.evolution_rows,
        wall_time=time.perf_counter() - t0,
        counters={
            "labeled_consumed": exp.labeled_consumed,
            "grad_samples": exp.grad_samples,
            "cluster_routings": exp.cluster_routings,
        },
    )
    return report


def run_ul(ts_or_xy, cfg: ExperimentConfig, input_dim=None, num_classes=None,
           image_data: bool = False) -> MetricsReport:
    """Single-task prequential run."""
    if isinstance(ts_or_xy, TaskStream):
        ts = ts_or_xy
    else:
        x, y = ts_or_xy
        ts = make_single_task(x, y, cfg.n_init, cfg.n_labeled_per_class,
                              cfg.batch_size)
    if input_dim is None:
        input_dim = ts.tasks[0].pretrain.x.shape[1]
    if num_classes is None:
        num_classes = int(max(t.labeled_pool.labels.max() for t in ts.tasks)) + 1
    return run_task_stream(ts, cfg, input_dim, num_classes, image_data)


def run_ucl(ts: TaskStream, cfg: ExperimentConfig, input_dim=None,
            num_classes=None, image_data: bool = False) -> MetricsReport:
    """Multi-task continual run."""
    if ts.n_tasks < 1:
        raise ValueError("task stream is empty")
    if input_dim is None:
        input_dim = ts.tasks[0].pretrain.x.shape[1]
    if num_classes is None:
        num_classes = int(max(t.labeled_pool.labels.max() for t in ts.tasks)) + 1
    return run_task_stream(ts, cfg, input_dim, num_classes, image_data)


# -- config-driven construction ---------------------------------------------


def build_dataset(spec: dict):
    """Materialize (features, labels, image_data) from a stream spec."""
    kind = spec.get("kind")
    if kind == "sea":
        x, y = gen_sea(spec.get("n", 100_000), spec.get("noise", 0.1),
                       spec.get("seed", 0))
        return x, y, False
    if kind == "hyperplane":
        x, y = gen_hyperplane(spec.get("n", 120_000), spec.get("u", 4),
                              spec.get("drift_rate", 0.001), spec.get("seed", 0))
        return x, y, False
    if kind == "gaussians":
        x, y = gen_gaussian_classes(spec.get("n_per_class", 2000),
                                    spec.get("n_classes", 10),
                                    spec.get("dim", 8),
                                    spec.get("std", 0.05),
                                    spec.get("seed", 0))
        return x, y, False
    if kind == "csv":
        x, y = load_csv(spec["path"])
        return x, y, bool(spec.get("image_data", False))
    if kind == "idx":
        x, y = load_idx(spec["images"], spec["labels"])
        return x, y, True
    raise ValueError(f"unknown stream kind {kind!r}")


def build_task_stream(cfg: ExperimentConfig):
    """Build the task stream named by the config. Returns
    (task_stream, input_dim, num_classes, image_data)."""
    x, y, image_data = build_dataset(cfg.stream)
    num_classes = int(y.max()) + 1
    tasks = cfg.tasks
    if tasks is None:
        ts = make_single_task(x, y, cfg.n_init, cfg.n_labeled_per_class,
                              cfg.batch_size)
        return ts, x.shape[1], num_classes, image_data

    ttype = tasks.get("type")
    if ttype == "split":
        if "class_sets" in tasks:
            class_sets = [list(cs) for cs in tasks["class_sets"]]
        else:
            per = int(tasks.get("classes_per_task", 2))
            class_sets = [list(range(c, min(c + per, num_classes)))
                          for c in range(0, num_classes, per)]
        n_tasks = len(class_sets)
        ts = make_split_tasks(x, y, class_sets,
                              max(2, cfg.n_init // n_tasks),
                              max(1, cfg.n_labeled_per_class // n_tasks),
                              cfg.batch_size)
    elif ttype == "rotate":
        angles = tasks.get("angles", [[0, 30], [31, 60], [61, 90], [91, 120]])
        n_tasks = len(angles)
        ts = make_rotation_tasks(x, y, angles,
                                 max(2, cfg.n_init // n_tasks),
                                 max(1, cfg.n_labeled_per_class // n_tasks),
                                 cfg.batch_size, seed=cfg.seed)
    elif ttype == "permute":
        n_tasks = int(tasks.get("n_tasks", 4))
        ts = make_permutation_tasks(x, y, n_tasks,
                                    max(2, cfg.n_init // n_tasks),
                                    max(1, cfg.n_labeled_per_class // n_tasks),
                                    cfg.batch_size, seed=cfg.seed)
    else:
        raise ValueError(f"unknown task construction {ttype!r}")
    return ts, x.shape[1], num_classes, image_data


def run_from_config(cfg: ExperimentConfig) -> MetricsReport:
    ts, input_dim, num_classes, image_data = build_task_stream(cfg)
    return run_task_stream(ts, cfg, input_dim, num_classes, image_data)


# -- CSV reporting -------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(path, report: MetricsReport):
    with open(path, "w") as fh:
        fh.write("batch,preq_acc,task,depth,total_width,total_clusters\n")
        for row in report.metric_rows:
            fh.write(",".join(_fmt(row[k]) for k in
                              ("batch", "preq_acc", "task", "depth",
                               "total_width", "total_clusters")) + "\n")


def write_evolution_csv(path, report: MetricsReport):
    with open(path, "w") as fh:
        fh.write("batch_index,layer,event,width_after,depth_after\n")
        for row in report.evolution_rows:
            fh.write(",".join(_fmt(row[k]) for k in
                              ("batch_index", "layer", "event",
                               "width_after", "depth_after")) + "\n")


def write_rmatrix_csv(path, report: MetricsReport):
    n = report.rmatrix.shape[0]
    with open(path, "w") as fh:
        fh.write(",".join(f"task{j}" for j in range(n)) + "\n")
        for i in range(n):
            fh.write(",".join("" if np.isnan(v) else repr(float(v))
                              for v in report.rmatrix[i]) + "\n")
        if report.b_bar is not None:
            fh.write(",".join(repr(float(v)) for v in report.b_bar) + "\n")
        else:
            fh.write(",".join([""] * n) + "\n")


def write_report(outdir, cfg: ExperimentConfig, report: MetricsReport):
    import os

    os.makedirs(outdir, exist_ok=True)
    write_metrics_csv(os.path.join(outdir, "metrics.csv"), report)
    write_evolution_csv(os.path.join(outdir, "evolution.csv"), report)
    write_rmatrix_csv(os.path.join(outdir, "rmatrix.csv"), report)
    with open(os.path.join(outdir, "config.resolved.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
