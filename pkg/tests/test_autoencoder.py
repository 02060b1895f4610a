import json

import numpy as np
import pytest

from evodcn.autoencoder import (AeLayer, EvolvingNetwork, FeatureExtractor,
                                LayerGrads, SgdConfig, layer_gradients,
                                layer_gradients_batch, layer_loss, sgd_step)


def rand_layer(n_inputs, n_nodes, seed=0):
    return AeLayer.init(n_inputs, n_nodes, np.random.default_rng(seed))


def fd_layer_grads(layer, x, pull, alpha, enc_act, dec_act, h=1e-5):
    """Central finite differences over every parameter."""

    def loss():
        return layer_loss(layer, x, pull, alpha, enc_act, dec_act)

    out = LayerGrads(np.zeros_like(layer.weight),
                     np.zeros_like(layer.enc_bias),
                     np.zeros_like(layer.dec_bias))
    for arr, g in ((layer.weight, out.weight), (layer.enc_bias, out.enc_bias),
                   (layer.dec_bias, out.dec_bias)):
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss()
            flat[i] = orig - h
            dn = loss()
            flat[i] = orig
            gflat[i] = (up - dn) / (2 * h)
    return out


def assert_grads_close(analytic, fd, rel=1e-4):
    for a, f in ((analytic.weight, fd.weight), (analytic.enc_bias, fd.enc_bias),
                 (analytic.dec_bias, fd.dec_bias)):
        denom = np.abs(a) + np.abs(f) + 1e-8
        mask = (np.abs(a) > 1e-7) | (np.abs(f) > 1e-7)
        assert np.all((np.abs(a - f) / denom)[mask] <= rel)


class TestEncodeDecode:
    def test_identity_relu(self):
        layer = AeLayer(np.eye(2), np.zeros(2), np.zeros(2))
        np.testing.assert_array_equal(
            layer.encode(np.array([-1.0, 2.0]), "relu"), [0.0, 2.0])

    def test_linear_affine(self):
        layer = AeLayer(np.array([[1.0, 1.0]]), np.array([0.5]), np.zeros(2))
        np.testing.assert_allclose(
            layer.encode(np.array([1.0, 1.0]), "linear"), [2.5])

    def test_encode_matches_dot_product_oracle(self):
        layer = rand_layer(2, 3, seed=5)
        rng = np.random.default_rng(9)
        x = rng.normal(size=2)
        want = np.array([float(np.dot(layer.weight[r], x)) + layer.enc_bias[r]
                         for r in range(3)])
        np.testing.assert_allclose(layer.encode(x, "linear"), want, atol=1e-12)

    def test_decode_matches_transpose_oracle(self):
        layer = rand_layer(4, 3, seed=6)
        rng = np.random.default_rng(10)
        h = rng.normal(size=3)
        want = np.array([float(np.dot(layer.weight[:, c], h)) + layer.dec_bias[c]
                         for c in range(4)])
        np.testing.assert_allclose(layer.decode(h, "linear"), want, atol=1e-12)

    def test_orthonormal_roundtrip(self):
        q, _ = np.linalg.qr(np.random.default_rng(3).normal(size=(4, 4)))
        layer = AeLayer(q, np.zeros(4), np.zeros(4))
        x = np.random.default_rng(4).normal(size=4)
        back = layer.decode(layer.encode(x, "linear"), "linear")
        np.testing.assert_allclose(back, x, atol=1e-10)

    def test_sigmoid_decode_of_zero_hidden(self):
        layer = AeLayer(np.ones((1, 1)), np.zeros(1), np.array([0.2]))
        np.testing.assert_allclose(layer.decode(np.zeros(1), "sigmoid"),
                                   [0.549834], atol=1e-6)

    def test_dimension_mismatch(self):
        layer = rand_layer(3, 2)
        with pytest.raises(ValueError):
            layer.encode(np.zeros(4))
        with pytest.raises(ValueError):
            layer.decode(np.zeros(3))

    def test_tied_weight_is_live(self):
        # mutating the encoder weight must change the decoder map identically
        layer = rand_layer(3, 2, seed=8)
        h = np.array([0.3, 0.7])
        before = layer.decode(h, "linear")
        layer.weight = layer.weight + 1.0
        after = layer.decode(h, "linear")
        np.testing.assert_allclose(after - before, np.full(3, h.sum()),
                                   atol=1e-12)


class TestLayerGradients:
    def test_zero_at_perfect_reconstruction(self):
        q, _ = np.linalg.qr(np.random.default_rng(2).normal(size=(3, 3)))
        layer = AeLayer(q, np.zeros(3), np.zeros(3))
        x = np.random.default_rng(11).normal(size=3)
        g = layer_gradients(layer, x, enc_activation="linear",
                            dec_activation="linear")
        assert np.all(np.abs(g.weight) < 1e-10)
        assert np.all(np.abs(g.enc_bias) < 1e-10)
        assert np.all(np.abs(g.dec_bias) < 1e-10)

    def test_pull_at_own_code_adds_nothing(self):
        layer = rand_layer(3, 4, seed=12)
        x = np.random.default_rng(13).uniform(size=3)
        pull = layer.encode(x, "relu")
        g0 = layer_gradients(layer, x)
        g1 = layer_gradients(layer, x, centroid_pull=pull, alpha=0.5)
        np.testing.assert_allclose(g0.weight, g1.weight, atol=1e-12)
        np.testing.assert_allclose(g0.enc_bias, g1.enc_bias, atol=1e-12)

    @pytest.mark.parametrize("enc,dec", [("relu", "relu"), ("relu", "sigmoid"),
                                         ("linear", "linear"),
                                         ("sigmoid", "sigmoid")])
    def test_finite_difference_agreement(self, enc, dec):
        rng = np.random.default_rng(hash((enc, dec)) % 2 ** 31)
        for trial in range(5):
            layer = rand_layer(3, 4, seed=100 + trial)
            x = rng.uniform(0.1, 0.9, size=3)
            pull = rng.uniform(0.0, 0.5, size=4)
            a = layer_gradients(layer, x, pull, 0.3, enc, dec)
            f = fd_layer_grads(layer, x, pull, 0.3, enc, dec)
            assert_grads_close(a, f)

    def test_batch_is_mean_of_samples(self):
        layer = rand_layer(3, 4, seed=20)
        rng = np.random.default_rng(21)
        xs = rng.uniform(0.1, 0.9, size=(5, 3))
        pulls = rng.uniform(size=(5, 4))
        gb = layer_gradients_batch(layer, xs, pulls, 0.2)
        acc = np.zeros_like(layer.weight)
        for i in range(5):
            acc += layer_gradients(layer, xs[i], pulls[i], 0.2).weight
        np.testing.assert_allclose(gb.weight, acc / 5.0, atol=1e-12)

    def test_pull_shape_mismatch(self):
        layer = rand_layer(3, 4)
        with pytest.raises(ValueError):
            layer_gradients(layer, np.zeros(3), centroid_pull=np.zeros(3),
                            alpha=1.0)


class TestExtractor:
    def make(self, seed=0, n_in=4, widths=(6, 5)):
        return FeatureExtractor.init(n_in, widths, np.random.default_rng(seed))

    def test_shapes(self):
        fe = self.make()
        z, xhat = fe.reconstruct(np.random.default_rng(1).uniform(size=4))
        assert z.shape == (5,) and xhat.shape == (4,)
        assert np.all((xhat > 0) & (xhat < 1))

    def test_zero_extra_equals_absent(self):
        fe = self.make(seed=2)
        x = np.random.default_rng(3).uniform(size=4)
        g_a = fe.gradients(x)
        g_b = fe.gradients(x, extra_recon_grad=np.zeros(4))
        for a, b in zip(g_a, g_b):
            np.testing.assert_array_equal(a.weight, b.weight)

    def test_finite_difference_agreement(self):
        rng = np.random.default_rng(33)
        for trial in range(3):
            fe = self.make(seed=40 + trial)
            # keep pre-activations away from the relu kink
            for layer in fe.layers:
                layer.enc_bias = rng.normal(size=layer.enc_bias.shape) * 0.3
                layer.dec_bias = rng.normal(size=layer.dec_bias.shape) * 0.3
            x = rng.uniform(0.1, 0.9, size=4)
            extra = rng.normal(size=4) * 0.1

            def loss():
                _, xhat = fe.reconstruct(x)
                d = x - xhat
                return float(np.mean(d * d)) + float(np.dot(extra, xhat))

            g1, g2 = fe.gradients(x, extra_recon_grad=extra)
            h = 1e-5
            for layer, grads in ((fe.layers[0], g1), (fe.layers[1], g2)):
                for arr, g in ((layer.weight, grads.weight),
                               (layer.enc_bias, grads.enc_bias),
                               (layer.dec_bias, grads.dec_bias)):
                    flat, gflat = arr.ravel(), g.ravel()
                    for i in range(flat.size):
                        orig = flat[i]
                        flat[i] = orig + h
                        up = loss()
                        flat[i] = orig - h
                        dn = loss()
                        flat[i] = orig
                        fd = (up - dn) / (2 * h)
                        denom = abs(fd) + abs(gflat[i]) + 1e-8
                        if abs(fd) > 1e-7 or abs(gflat[i]) > 1e-7:
                            assert abs(fd - gflat[i]) / denom <= 1e-4


class TestSgd:
    def test_zero_grads_no_change(self):
        layer = rand_layer(2, 2, seed=1)
        w = layer.weight.copy()
        g = LayerGrads(np.zeros((2, 2)), np.zeros(2), np.zeros(2))
        sgd_step(layer, g, SgdConfig(learning_rate=0.1, momentum=0.0,
                                     weight_decay=0.0))
        np.testing.assert_array_equal(layer.weight, w)

    def test_plain_sgd(self):
        layer = AeLayer(np.array([[2.0]]), np.zeros(1), np.zeros(1))
        g = LayerGrads(np.array([[1.0]]), np.zeros(1), np.zeros(1))
        sgd_step(layer, g, SgdConfig(learning_rate=0.1, momentum=0.0,
                                     weight_decay=0.0))
        assert layer.weight[0, 0] == pytest.approx(1.9)

    def test_momentum_unrolled_two_steps(self):
        layer = AeLayer(np.array([[1.0]]), np.zeros(1), np.zeros(1))
        cfg = SgdConfig(learning_rate=0.1, momentum=0.95, weight_decay=0.0)
        g = LayerGrads(np.array([[2.0]]), np.zeros(1), np.zeros(1))
        sgd_step(layer, g, cfg)
        w1 = layer.weight[0, 0]
        sgd_step(layer, g, cfg)
        delta2 = w1 - layer.weight[0, 0]
        assert delta2 == pytest.approx(0.1 * 2.0 * (1 + 0.95))

    def test_weight_decay_on_weights_only(self):
        layer = AeLayer(np.array([[1.0]]), np.array([1.0]), np.array([1.0]))
        g = LayerGrads(np.zeros((1, 1)), np.zeros(1), np.zeros(1))
        sgd_step(layer, g, SgdConfig(learning_rate=0.1, momentum=0.0,
                                     weight_decay=0.5))
        assert layer.weight[0, 0] == pytest.approx(0.95)
        assert layer.enc_bias[0] == 1.0 and layer.dec_bias[0] == 1.0

    def test_descent_property(self):
        cfg = SgdConfig(learning_rate=1e-3, momentum=0.0, weight_decay=0.0)
        rng = np.random.default_rng(55)
        for trial in range(20):
            layer = rand_layer(3, 4, seed=200 + trial)
            x = rng.uniform(0.1, 0.9, size=3)
            before = layer_loss(layer, x)
            g = layer_gradients(layer, x)
            sgd_step(layer, g, cfg)
            after = layer_loss(layer, x)
            assert after < before or abs(after - before) < 1e-12

    def test_shape_mismatch(self):
        layer = rand_layer(2, 2)
        g = LayerGrads(np.zeros((3, 2)), np.zeros(2), np.zeros(2))
        with pytest.raises(ValueError):
            sgd_step(layer, g, SgdConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SgdConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            SgdConfig(momentum=1.0)
        with pytest.raises(ValueError):
            SgdConfig(weight_decay=-1.0)


class TestEvolvingNetwork:
    def make(self, seed=0):
        return EvolvingNetwork.create(4, (8, 6), 3, np.random.default_rng(seed))

    def test_forward_stack_shapes(self):
        net = self.make()
        out = net.forward_stack(np.random.default_rng(1).uniform(size=4))
        assert len(out.latents) == net.depth == 1
        assert out.latents[0].shape == (3,)
        assert out.recons[0].shape == (6,)
        assert out.xhat.shape == (4,)

    def test_recons_match_decode_oracle(self):
        net = self.make(seed=3)
        x = np.random.default_rng(9).uniform(size=4)
        out = net.forward_stack(x)
        for layer, h, rec in zip(net.sae, out.latents, out.recons):
            np.testing.assert_array_equal(rec, layer.decode(h, "relu"))

    def test_deterministic(self):
        net = self.make(seed=7)
        x = np.random.default_rng(2).uniform(size=4)
        a = net.forward_stack(x)
        b = net.forward_stack(x)
        np.testing.assert_array_equal(a.xhat, b.xhat)
        np.testing.assert_array_equal(a.latents[0], b.latents[0])

    def test_json_roundtrip_bit_exact(self, tmp_path):
        net = self.make(seed=13)
        path = tmp_path / "net.json"
        net.save(path)
        loaded = EvolvingNetwork.load(path)
        for a, b in zip(net.sae + net.extractor.layers,
                        loaded.sae + loaded.extractor.layers):
            np.testing.assert_array_equal(a.weight, b.weight)
            np.testing.assert_array_equal(a.enc_bias, b.enc_bias)
            np.testing.assert_array_equal(a.dec_bias, b.dec_bias)

    def test_version_guard(self):
        net = self.make()
        d = net.to_dict()
        d["format_version"] = 99
        with pytest.raises(ValueError):
            EvolvingNetwork.from_dict(d)

    def test_init_bounds(self):
        layer = AeLayer.init(16, 8, np.random.default_rng(0))
        assert np.all(np.abs(layer.weight) <= 0.25)
        assert np.all(layer.enc_bias == 0) and np.all(layer.dec_bias == 0)
