"""Width adaptation and drift-driven depth growth.

Node growth and pruning follow a bias/variance reading of each stacked
layer's reconstruction error: a persistent rise of the bias signal above its
historical floor adds a node, a persistent rise of the variance signal prunes
the least active one. Depth grows when a Hoeffding-bound test on the
extracted-feature signal of consecutive batches flags a distribution change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autoencoder import AeLayer, EvolvingNetwork, LayerState
from .mathops import RunningStat, as_f64

STABLE = "stable"
WARNING = "warning"
DRIFT = "drift"

# Identical batches give a zero signal range and therefore a zero drift
# threshold; treat that as no change rather than flagging drift.
ZERO_RANGE = 1e-12


@dataclass
class NsEstimate:
    """Squared bias and variance of a layer's reconstruction."""

    bias2: float
    variance: float


def ns_estimate(net: EvolvingNetwork, layer_index: int, layer_input) -> NsEstimate:
    """Significance of one stacked layer for the current sample.

    ``layer_input`` is the vector feeding the layer (the code of the previous
    layer, or the extractor output for the first layer). The layer's running
    reconstruction moments are refreshed with the current reconstruction
    before the estimate is taken, so the first ever sample reports zero
    variance and a squared bias equal to the current reconstruction error.
    """
    if not 0 <= layer_index < net.depth:
        raise ValueError(f"no layer {layer_index} in a depth-{net.depth} network")
    layer = net.sae[layer_index]
    state = net.layer_states[layer_index]
    x = as_f64(layer_input)
    h = layer.encode(x, "relu")
    recon = layer.decode(h, "relu")
    state.recon_stat.update(recon)
    mean = state.recon_stat.mean
    diff = x - mean
    bias2 = float(np.mean(diff * diff))
    variance = float(np.mean(state.recon_stat.variance()))
    return NsEstimate(bias2=bias2, variance=variance)


def growth_factor(bias2: float) -> float:
    """Confidence multiplier for growth; 2.0 at zero bias, 0.7 in the limit
    of large bias so growth gets easier when the layer underfits."""
    return 1.3 * math.exp(-bias2) + 0.7


def pruning_factor(variance: float) -> float:
    return 1.3 * math.exp(-variance) + 0.7


def check_grow(bias_stat: RunningStat, bias2_now: float) -> bool:
    """Growth test; the caller must already have pushed ``bias2_now`` into
    ``bias_stat`` and must reset its min trackers when this returns True."""
    k1 = growth_factor(bias2_now)
    return bias_stat.mean + bias_stat.std >= bias_stat.min_mean + k1 * bias_stat.min_std


def check_prune(var_stat: RunningStat, var_now: float) -> bool:
    """Pruning test; the doubled multiplier keeps a freshly added node from
    being removed right away."""
    k2 = pruning_factor(var_now)
    return var_stat.mean + var_stat.std >= var_stat.min_mean + 2.0 * k2 * var_stat.min_std


def grow_node(layer: AeLayer, rng: np.random.Generator) -> AeLayer:
    """Append one hidden node; existing parameters stay bit-identical."""
    layer.append_node(rng)
    return layer


def prune_node(layer: AeLayer, activation_means):
    """Remove the node with the smallest mean absolute activation.

    Returns the removed index, or None when the layer has a single node and
    pruning is refused. Uninitialised entries (NaN) are never selected.
    """
    if layer.n_nodes <= 1:
        return None
    means = as_f64(activation_means)
    if means.shape != (layer.n_nodes,):
        raise ValueError("activation_means must have one entry per node")
    idx = int(np.argmin(np.where(np.isnan(means), np.inf, means)))
    layer.remove_node(idx)
    return idx


def grow_network_node(net: EvolvingNetwork, per_layer_clusters, layer_index: int,
                      rng: np.random.Generator) -> bool:
    """Grow one node on a stacked layer and keep every dependent structure
    aligned: the next layer gains an input column, its reconstruction moments
    gain a coordinate, and the layer's centroids gain a zero coordinate.

    Returns False without touching anything when the layer sits at its width
    cap.
    """
    layer = net.sae[layer_index]
    state = net.layer_states[layer_index]
    if layer.n_nodes + 1 > state.width_cap:
        return False
    grow_node(layer, rng)
    state.act_stat.grow_coord()
    if layer_index + 1 < net.depth:
        net.sae[layer_index + 1].append_input(rng)
        net.layer_states[layer_index + 1].recon_stat.grow_coord()
    if per_layer_clusters is not None:
        lc = per_layer_clusters[layer_index]
        if lc is not None:
            lc.grow_coordinate()
    return True


def prune_network_node(net: EvolvingNetwork, per_layer_clusters, layer_index: int):
    """Prune the least active node of a stacked layer, aligning the next
    layer's input space and the layer's centroids. Returns the removed index
    or None when pruning was refused."""
    layer = net.sae[layer_index]
    state = net.layer_states[layer_index]
    means = state.act_stat.mean
    if means is None:
        return None
    idx = prune_node(layer, means)
    if idx is None:
        return None
    state.act_stat.drop_coord(idx)
    if layer_index + 1 < net.depth:
        net.sae[layer_index + 1].remove_input(idx)
        net.layer_states[layer_index + 1].recon_stat.drop_coord(idx)
    if per_layer_clusters is not None:
        lc = per_layer_clusters[layer_index]
        if lc is not None:
            lc.drop_coordinate(idx)
    return idx


def add_layer(net: EvolvingNetwork, rng: np.random.Generator,
              width_cap_factor: int = 10) -> int:
    """Append a stacked layer half as wide as the current last one (at least
    two nodes). Existing layers are untouched; returns the new layer index."""
    last_width = net.sae[-1].n_nodes
    new_width = max(2, last_width // 2)
    layer = AeLayer.init(last_width, new_width, rng)
    state = LayerState(init_width=new_width,
                       width_cap=width_cap_factor * new_width)
    net.sae.append(layer)
    net.layer_states.append(state)
    return net.depth - 1


def hoeffding_epsilon(size: int, alpha: float, value_range: float = 1.0) -> float:
    """Hoeffding error bound: range * sqrt(ln(1/alpha) / (2*size))."""
    if size < 1:
        raise ValueError("size must be at least 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if value_range < 0.0:
        raise ValueError("value_range must be nonnegative")
    return value_range * math.sqrt(math.log(1.0 / alpha) / (2.0 * size))


def cut_epsilon(size: int, cut: int, alpha: float, value_range: float) -> float:
    """Error bound for the prefix/whole mean gap at a candidate cut point."""
    if not 0 < cut < size:
        raise ValueError("cut must lie strictly inside the sequence")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return value_range * math.sqrt(
        (size - cut) / (2.0 * cut * size) * math.log(1.0 / alpha))


class DriftDetector:
    """Three-state drift detector over per-sample scalar summaries.

    Each call to :meth:`update` concatenates the stored previous-batch signal
    with the current one, scans candidate cut points at 25/50/75 percent, and
    accepts the first cut whose prefix mean is below the overall mean by more
    than the Hoeffding slack (the population mean increased). The gap between
    the two means is then classified as drift, warning, or stable. A warning
    followed by a warning or drift on the next batch escalates to drift.
    """

    def __init__(self, alpha_x: float = 0.001, alpha_w: float = 0.005,
                 alpha_d: float = 0.001):
        if not 0.0 < alpha_d < alpha_w < 1.0:
            raise ValueError("need 0 < alpha_d < alpha_w < 1")
        if not 0.0 < alpha_x < 1.0:
            raise ValueError("alpha_x must lie in (0, 1)")
        self.alpha_x = alpha_x
        self.alpha_w = alpha_w
        self.alpha_d = alpha_d
        self.prev_batch_signal = None
        self.state = STABLE

    def reset(self):
        self.prev_batch_signal = None
        self.state = STABLE

    def _classify(self, signal: np.ndarray) -> str:
        s = np.concatenate([self.prev_batch_signal, signal])
        n = s.size
        lo, hi = float(s.min()), float(s.max())
        if hi - lo < ZERO_RANGE:
            return STABLE
        s_mean = float(s.mean())
        for frac in (0.25, 0.5, 0.75):
            cut = int(frac * n)
            if not 0 < cut < n:
                continue
            t_mean = float(s[:cut].mean())
            eps_s = hoeffding_epsilon(n, self.alpha_x)
            eps_t = hoeffding_epsilon(cut, self.alpha_x)
            if t_mean + eps_t <= s_mean + eps_s:
                gap = abs(s_mean - t_mean)
                if gap >= cut_epsilon(n, cut, self.alpha_d, hi - lo):
                    return DRIFT
                if gap >= cut_epsilon(n, cut, self.alpha_w, hi - lo):
                    return WARNING
                return STABLE
        return STABLE

    def update(self, current_signal) -> str:
        signal = as_f64(current_signal).ravel()
        if signal.size == 0:
            raise ValueError("drift signal must be nonempty")
        if self.prev_batch_signal is None:
            self.prev_batch_signal = signal.copy()
            self.state = STABLE
            return STABLE
        outcome = self._classify(signal)
        if self.state == WARNING and outcome in (WARNING, DRIFT):
            outcome = DRIFT
        self.state = STABLE if outcome == DRIFT else outcome
        self.prev_batch_signal = signal.copy()
        return outcome


def detect_drift(detector: DriftDetector, current_signal) -> str:
    return detector.update(current_signal)
