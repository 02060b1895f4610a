"""Tied-weight autoencoder layers, analytic gradients, and the evolving stack.

A layer stores one weight matrix W (nodes x inputs); the decoder map is always
W transposed, never a separate copy. Encoding of a batch X is act(X @ W.T + b)
and decoding of hidden H is act(H @ W + d), so every function here accepts a
single sample (1-D) or a batch (2-D) alike.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from .mathops import EwmaMoments, RunningStat, as_f64, relu, relu_grad, sigmoid

FORMAT_VERSION = 1


def _apply_activation(pre, name):
    if name == "relu":
        return relu(pre)
    if name == "sigmoid":
        return sigmoid(pre)
    if name == "linear":
        return as_f64(pre)
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(pre, out, name):
    # Derivative at the pre-activation; sigmoid uses the cached output.
    if name == "relu":
        return relu_grad(pre)
    if name == "sigmoid":
        return out * (1.0 - out)
    if name == "linear":
        return np.ones_like(out)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class SgdConfig:
    """SGD with momentum and weight decay (decay applies to weights only)."""

    learning_rate: float = 0.01
    momentum: float = 0.95
    weight_decay: float = 5e-5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")


@dataclass
class LayerGrads:
    weight: np.ndarray
    enc_bias: np.ndarray
    dec_bias: np.ndarray


class AeLayer:
    """One tied-weight autoencoder layer with momentum buffers."""

    def __init__(self, weight, enc_bias, dec_bias):
        self.weight = as_f64(weight)
        self.enc_bias = as_f64(enc_bias)
        self.dec_bias = as_f64(dec_bias)
        if self.weight.shape != (self.enc_bias.size, self.dec_bias.size):
            raise ValueError("weight shape must be (nodes, inputs)")
        self.vel_weight = np.zeros_like(self.weight)
        self.vel_enc_bias = np.zeros_like(self.enc_bias)
        self.vel_dec_bias = np.zeros_like(self.dec_bias)

    @classmethod
    def init(cls, n_inputs: int, n_nodes: int, rng: np.random.Generator):
        """Uniform weights in +-1/sqrt(n_inputs), zero biases."""
        bound = 1.0 / np.sqrt(n_inputs)
        w = rng.uniform(-bound, bound, size=(n_nodes, n_inputs))
        return cls(w, np.zeros(n_nodes), np.zeros(n_inputs))

    @property
    def n_nodes(self) -> int:
        return self.weight.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.weight.shape[1]

    def encode(self, x, activation="relu"):
        x = as_f64(x)
        if x.shape[-1] != self.n_inputs:
            raise ValueError(
                f"input has {x.shape[-1]} features, layer expects {self.n_inputs}")
        return _apply_activation(x @ self.weight.T + self.enc_bias, activation)

    def decode(self, hidden, activation="relu"):
        hidden = as_f64(hidden)
        if hidden.shape[-1] != self.n_nodes:
            raise ValueError(
                f"hidden has {hidden.shape[-1]} features, layer has {self.n_nodes} nodes")
        return _apply_activation(hidden @ self.weight + self.dec_bias, activation)

    # -- structural edits -------------------------------------------------

    def append_node(self, rng: np.random.Generator):
        """Add one hidden node; existing parameters are untouched."""
        bound = 1.0 / np.sqrt(self.n_inputs)
        row = rng.uniform(-bound, bound, size=(1, self.n_inputs))
        self.weight = np.vstack([self.weight, row])
        self.enc_bias = np.append(self.enc_bias, 0.0)
        self.vel_weight = np.vstack([self.vel_weight, np.zeros((1, self.n_inputs))])
        self.vel_enc_bias = np.append(self.vel_enc_bias, 0.0)

    def remove_node(self, index: int):
        self.weight = np.delete(self.weight, index, axis=0)
        self.enc_bias = np.delete(self.enc_bias, index)
        self.vel_weight = np.delete(self.vel_weight, index, axis=0)
        self.vel_enc_bias = np.delete(self.vel_enc_bias, index)

    def append_input(self, rng: np.random.Generator):
        """Add one input column (used when the upstream layer grew a node)."""
        bound = 1.0 / np.sqrt(self.n_inputs + 1)
        col = rng.uniform(-bound, bound, size=(self.n_nodes, 1))
        self.weight = np.hstack([self.weight, col])
        self.dec_bias = np.append(self.dec_bias, 0.0)
        self.vel_weight = np.hstack([self.vel_weight, np.zeros((self.n_nodes, 1))])
        self.vel_dec_bias = np.append(self.vel_dec_bias, 0.0)

    def remove_input(self, index: int):
        self.weight = np.delete(self.weight, index, axis=1)
        self.dec_bias = np.delete(self.dec_bias, index)
        self.vel_weight = np.delete(self.vel_weight, index, axis=1)
        self.vel_dec_bias = np.delete(self.vel_dec_bias, index)

    def to_dict(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "n_inputs": self.n_inputs,
            "weight": self.weight.ravel().tolist(),
            "enc_bias": self.enc_bias.tolist(),
            "dec_bias": self.dec_bias.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AeLayer":
        w = np.array(d["weight"], dtype=np.float64).reshape(d["n_nodes"], d["n_inputs"])
        return cls(w, np.array(d["enc_bias"]), np.array(d["dec_bias"]))


def layer_loss(layer, x, centroid_pull=None, alpha=0.0,
               enc_activation="relu", dec_activation="relu") -> float:
    """Reconstruction MSE plus (alpha/2) * squared distance of the code to a
    target centroid. Used directly by finite-difference checks."""
    h = layer.encode(x, enc_activation)
    xhat = layer.decode(h, dec_activation)
    d = as_f64(x) - xhat
    loss = float(np.mean(d * d))
    if centroid_pull is not None and alpha != 0.0:
        e = h - as_f64(centroid_pull)
        loss += 0.5 * alpha * float(np.sum(e * e))
    return loss


def layer_gradients_batch(layer, x, centroid_pull=None, alpha=0.0,
                          enc_activation="relu", dec_activation="relu") -> LayerGrads:
    """Analytic gradients of the per-sample layer loss, averaged over a batch.

    The tied weight accumulates both the encoder and the decoder contribution.
    """
    x = as_f64(x)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    batch = x.shape[0]
    n = layer.n_inputs
    if x.shape[1] != n:
        raise ValueError(f"input has {x.shape[1]} features, layer expects {n}")

    pre_h = x @ layer.weight.T + layer.enc_bias
    h = _apply_activation(pre_h, enc_activation)
    pre_r = h @ layer.weight + layer.dec_bias
    xhat = _apply_activation(pre_r, dec_activation)

    d_xhat = (2.0 / n) * (xhat - x) / batch
    d_pre_r = d_xhat * _activation_grad(pre_r, xhat, dec_activation)
    g_dec_bias = d_pre_r.sum(axis=0)
    g_w_dec = h.T @ d_pre_r

    d_h = d_pre_r @ layer.weight.T
    if centroid_pull is not None and alpha != 0.0:
        pull = as_f64(centroid_pull)
        if squeeze and pull.ndim == 1:
            pull = pull[None, :]
        if pull.shape != h.shape:
            raise ValueError(
                f"centroid_pull shape {pull.shape} does not match code shape {h.shape}")
        d_h = d_h + (alpha / batch) * (h - pull)
    d_pre_h = d_h * _activation_grad(pre_h, h, enc_activation)
    g_enc_bias = d_pre_h.sum(axis=0)
    g_w_enc = d_pre_h.T @ x

    return LayerGrads(g_w_enc + g_w_dec, g_enc_bias, g_dec_bias)


def layer_gradients(layer, x, centroid_pull=None, alpha=0.0,
                    enc_activation="relu", dec_activation="relu") -> LayerGrads:
    """Single-sample gradients; see layer_gradients_batch."""
    x = as_f64(x)
    if x.ndim != 1:
        raise ValueError("layer_gradients expects a single sample")
    return layer_gradients_batch(layer, x, centroid_pull, alpha,
                                 enc_activation, dec_activation)


def sgd_step(layer: AeLayer, grads: LayerGrads, cfg: SgdConfig):
    """In-place momentum update: v <- mu*v + g + wd*param, param <- param - lr*v."""
    if grads.weight.shape != layer.weight.shape:
        raise ValueError("gradient shape does not match layer weight")
    if grads.enc_bias.shape != layer.enc_bias.shape:
        raise ValueError("gradient shape does not match encoder bias")
    if grads.dec_bias.shape != layer.dec_bias.shape:
        raise ValueError("gradient shape does not match decoder bias")
    mu, lr, wd = cfg.momentum, cfg.learning_rate, cfg.weight_decay
    layer.vel_weight = mu * layer.vel_weight + grads.weight + wd * layer.weight
    layer.vel_enc_bias = mu * layer.vel_enc_bias + grads.enc_bias
    layer.vel_dec_bias = mu * layer.vel_dec_bias + grads.dec_bias
    layer.weight = layer.weight - lr * layer.vel_weight
    layer.enc_bias = layer.enc_bias - lr * layer.vel_enc_bias
    layer.dec_bias = layer.dec_bias - lr * layer.vel_dec_bias
    return layer


class FeatureExtractor:
    """Two tied-weight layers; relu inside, sigmoid on the final reconstruction
    so the output lives in the normalized input range."""

    def __init__(self, layers):
        if len(layers) != 2:
            raise ValueError("extractor uses exactly two layers")
        if layers[0].n_nodes != layers[1].n_inputs:
            raise ValueError("layer widths are not chained")
        self.layers = list(layers)

    @classmethod
    def init(cls, n_inputs: int, widths, rng: np.random.Generator):
        w1, w2 = widths
        return cls([AeLayer.init(n_inputs, w1, rng), AeLayer.init(w1, w2, rng)])

    @property
    def n_inputs(self) -> int:
        return self.layers[0].n_inputs

    @property
    def n_outputs(self) -> int:
        return self.layers[1].n_nodes

    def encode(self, x):
        a1 = self.layers[0].encode(x, "relu")
        return self.layers[1].encode(a1, "relu")

    def reconstruct(self, x):
        """Returns (code, reconstruction)."""
        a1 = self.layers[0].encode(x, "relu")
        z = self.layers[1].encode(a1, "relu")
        r1 = self.layers[1].decode(z, "relu")
        xhat = self.layers[0].decode(r1, "sigmoid")
        return z, xhat

    def loss(self, x) -> float:
        x = as_f64(x)
        _, xhat = self.reconstruct(x)
        d = x - xhat
        return float(np.mean(d * d))

    def gradients_batch(self, x, extra_recon_grad=None):
        """Gradients of the reconstruction MSE through both layers and the
        tied decoder, averaged over the batch.

        ``extra_recon_grad`` holds per-sample gradient rows injected at the
        reconstruction output before backpropagation (an external loss term
        that depends on the reconstruction).
        """
        x = as_f64(x)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        batch, n = x.shape
        l1, l2 = self.layers
        if n != l1.n_inputs:
            raise ValueError(f"input has {n} features, extractor expects {l1.n_inputs}")

        pre1 = x @ l1.weight.T + l1.enc_bias
        a1 = relu(pre1)
        pre2 = a1 @ l2.weight.T + l2.enc_bias
        z = relu(pre2)
        qre2 = z @ l2.weight + l2.dec_bias
        r1 = relu(qre2)
        qre1 = r1 @ l1.weight + l1.dec_bias
        xhat = sigmoid(qre1)

        d_xhat = (2.0 / n) * (xhat - x) / batch
        if extra_recon_grad is not None:
            extra = as_f64(extra_recon_grad)
            if squeeze and extra.ndim == 1:
                extra = extra[None, :]
            if extra.shape != xhat.shape:
                raise ValueError(
                    f"extra_recon_grad shape {extra.shape} does not match {xhat.shape}")
            d_xhat = d_xhat + extra / batch

        d_q1 = d_xhat * xhat * (1.0 - xhat)
        g1_dec = np.asarray(d_q1.sum(axis=0))
        g1_w_dec = r1.T @ d_q1
        d_r1 = d_q1 @ l1.weight.T

        d_q2 = d_r1 * relu_grad(qre2)
        g2_dec = np.asarray(d_q2.sum(axis=0))
        g2_w_dec = z.T @ d_q2
        d_z = d_q2 @ l2.weight.T

        d_pre2 = d_z * relu_grad(pre2)
        g2_enc = np.asarray(d_pre2.sum(axis=0))
        g2_w_enc = d_pre2.T @ a1
        d_a1 = d_pre2 @ l2.weight

        d_pre1 = d_a1 * relu_grad(pre1)
        g1_enc = np.asarray(d_pre1.sum(axis=0))
        g1_w_enc = d_pre1.T @ x

        return (LayerGrads(g1_w_enc + g1_w_dec, g1_enc, g1_dec),
                LayerGrads(g2_w_enc + g2_w_dec, g2_enc, g2_dec))

    def gradients(self, x, extra_recon_grad=None):
        x = as_f64(x)
        if x.ndim != 1:
            raise ValueError("gradients expects a single sample")
        return self.gradients_batch(x, extra_recon_grad)

    def to_dict(self) -> dict:
        return {"layers": [layer.to_dict() for layer in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureExtractor":
        return cls([AeLayer.from_dict(ld) for ld in d["layers"]])


def extractor_gradients(fe: FeatureExtractor, x, extra_recon_grad=None):
    return fe.gradients(x, extra_recon_grad)


@dataclass
class LayerState:
    """Per-layer evolution statistics for one stacked layer."""

    bias_stat: RunningStat = field(default_factory=RunningStat)
    var_stat: RunningStat = field(default_factory=RunningStat)
    recon_stat: EwmaMoments = field(default_factory=lambda: EwmaMoments(0.999))
    act_stat: EwmaMoments = field(default_factory=lambda: EwmaMoments(0.999))
    init_width: int = 0
    width_cap: int = 0


@dataclass
class StackForward:
    z: np.ndarray
    latents: list
    recons: list
    xhat: np.ndarray


class EvolvingNetwork:
    """Feature extractor plus a growable list of stacked tied-weight layers.

    Hidden activations are relu everywhere; stacked-layer reconstructions use
    relu because their targets are relu outputs, while the extractor's final
    reconstruction uses sigmoid to match the normalized input range.
    """

    def __init__(self, extractor: FeatureExtractor, sae_layers, layer_states):
        if not sae_layers:
            raise ValueError("network needs at least one stacked layer")
        if len(sae_layers) != len(layer_states):
            raise ValueError("layer states must align with layers")
        self.extractor = extractor
        self.sae = list(sae_layers)
        self.layer_states = list(layer_states)

    @classmethod
    def create(cls, input_dim: int, extractor_widths, sae_width: int,
               rng: np.random.Generator, width_cap_factor: int = 10):
        fe = FeatureExtractor.init(input_dim, extractor_widths, rng)
        layer = AeLayer.init(fe.n_outputs, sae_width, rng)
        state = LayerState(init_width=sae_width,
                           width_cap=width_cap_factor * sae_width)
        return cls(fe, [layer], [state])

    @property
    def depth(self) -> int:
        return len(self.sae)

    @property
    def input_dim(self) -> int:
        return self.extractor.n_inputs

    def total_width(self) -> int:
        return sum(layer.n_nodes for layer in self.sae)

    def latents(self, x):
        """Code of the extractor followed by every stacked layer's code."""
        z = self.extractor.encode(x)
        outs = []
        h = z
        for layer in self.sae:
            h = layer.encode(h, "relu")
            outs.append(h)
        return z, outs

    def forward_stack(self, x) -> StackForward:
        """Full forward pass: codes, per-layer reconstructions, and the
        extractor reconstruction."""
        z, xhat = self.extractor.reconstruct(x)
        latents, recons = [], []
        h = z
        for layer in self.sae:
            nxt = layer.encode(h, "relu")
            latents.append(nxt)
            recons.append(layer.decode(nxt, "relu"))
            h = nxt
        return StackForward(z=z, latents=latents, recons=recons, xhat=xhat)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "extractor": self.extractor.to_dict(),
            "sae": [layer.to_dict() for layer in self.sae],
            "sae_meta": [{"init_width": st.init_width, "width_cap": st.width_cap}
                         for st in self.layer_states],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvolvingNetwork":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported network format: {d.get('format_version')}")
        fe = FeatureExtractor.from_dict(d["extractor"])
        layers = [AeLayer.from_dict(ld) for ld in d["sae"]]
        states = [LayerState(init_width=m["init_width"], width_cap=m["width_cap"])
                  for m in d["sae_meta"]]
        return cls(fe, layers, states)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "EvolvingNetwork":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def clone(self) -> "EvolvingNetwork":
        return copy.deepcopy(self)
