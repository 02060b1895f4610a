"""Task lifecycle: frozen network snapshots, the per-task regularization
strength schedule, and the reconstruction-stability regularizer.

When more than one task has been seen, training adds a binary cross-entropy
term pulling the live network's reconstruction toward the reconstructions the
frozen snapshots of earlier tasks produce for the same input. Snapshots are
constants; only the live reconstruction receives gradient.
"""

from __future__ import annotations

import copy

import numpy as np

from .autoencoder import EvolvingNetwork
from .mathops import BCE_EPS, as_f64, bce, bce_grad_pred


class TaskMemory:
    """Frozen snapshots of completed tasks plus the active strength schedule.

    ``class_counts`` holds one entry per task in arrival order; the current
    (unfinished) task's count is registered when its labeled classes become
    known so the schedule denominators can include it.
    """

    def __init__(self, beta: float = 5.0):
        if beta <= 0:
            raise ValueError("beta must be positive")
        self.beta = beta
        self.snapshots: list[EvolvingNetwork] = []
        self.class_counts: list[int] = []
        self.lambdas = np.zeros(0)

    @property
    def completed_tasks(self) -> int:
        return len(self.snapshots)

    def register_task_classes(self, classes_in_task: int):
        """Record the class count of the task that is starting."""
        if classes_in_task <= 0:
            raise ValueError("a task must contain at least one class")
        self.class_counts.append(int(classes_in_task))
        return self

    def active(self) -> bool:
        return bool(self.snapshots) and bool(np.any(self.lambdas > 0.0))


def snapshot_task(net: EvolvingNetwork, mem: TaskMemory,
                  classes_in_task: int) -> TaskMemory:
    """Freeze a deep copy of the network at a task boundary.

    If the task's class count was already registered at task start it is
    verified, otherwise recorded now.
    """
    mem.snapshots.append(copy.deepcopy(net))
    n_done = len(mem.snapshots)
    if len(mem.class_counts) < n_done:
        mem.class_counts.append(int(classes_in_task))
    elif mem.class_counts[n_done - 1] != classes_in_task:
        raise ValueError("class count disagrees with the one registered at task start")
    return mem


def lambda_for(mem: TaskMemory, current_task: int) -> np.ndarray:
    """Regularization strength for each previous task at ``current_task``
    (1-based ordinal).

    Strength of previous task i is beta * (1 - classes_i / cumulative),
    where cumulative counts classes through the current task, so earlier
    tasks gain weight as more classes accumulate. A single task yields an
    empty schedule (no regularization).
    """
    if current_task < 1:
        raise ValueError("current_task is a 1-based ordinal")
    if len(mem.class_counts) < current_task:
        raise ValueError(
            f"class counts known for {len(mem.class_counts)} tasks, "
            f"need {current_task}")
    counts = np.asarray(mem.class_counts[:current_task], dtype=np.float64)
    cumulative = counts.sum()
    if cumulative <= 0:
        raise ValueError("cumulative class count is zero")
    if current_task == 1:
        return np.zeros(0)
    return mem.beta * (1.0 - counts[:-1] / cumulative)


def ucl_regularizer(mem: TaskMemory, x, xhat_current):
    """Stability loss and its gradient at the current reconstruction.

    For each frozen snapshot the input is pushed through the snapshot's
    extractor; the binary cross-entropy between that frozen reconstruction
    (target) and the live reconstruction (prediction) is scaled by the task's
    strength. Returns (loss, gradient w.r.t. the live reconstruction), ready
    to inject into the extractor's backward pass.
    """
    x = as_f64(x)
    xhat = as_f64(xhat_current)
    if not mem.snapshots:
        raise ValueError("no task snapshots recorded")
    if len(mem.lambdas) < len(mem.snapshots):
        raise ValueError("strength schedule is stale; refresh it at task start")
    loss = 0.0
    grad = np.zeros_like(xhat)
    for lam, snap in zip(mem.lambdas, mem.snapshots):
        if lam == 0.0:
            continue
        if snap.input_dim != x.shape[-1]:
            raise ValueError(
                f"snapshot expects {snap.input_dim} features, got {x.shape[-1]}")
        _, target = snap.extractor.reconstruct(x)
        loss += lam * bce(target, xhat)
        grad += lam * bce_grad_pred(target, xhat)
    return loss, grad


def ucl_regularizer_batch(mem: TaskMemory, x, xhat_current):
    """Batched variant: mean loss over samples and per-sample gradient rows.

    The gradient rows are *not* divided by the batch size; the extractor's
    batched backward pass applies that normalization itself.
    """
    x = np.atleast_2d(as_f64(x))
    xhat = np.atleast_2d(as_f64(xhat_current))
    if not mem.snapshots:
        raise ValueError("no task snapshots recorded")
    if len(mem.lambdas) < len(mem.snapshots):
        raise ValueError("strength schedule is stale; refresh it at task start")
    total = 0.0
    grad = np.zeros_like(xhat)
    p = np.clip(xhat, BCE_EPS, 1.0 - BCE_EPS)
    for lam, snap in zip(mem.lambdas, mem.snapshots):
        if lam == 0.0:
            continue
        _, target = snap.extractor.reconstruct(x)
        total += lam * float(
            -np.mean(target * np.log(p) + (1.0 - target) * np.log1p(-p)))
        grad += lam * bce_grad_pred(target, xhat)
    return total, grad
