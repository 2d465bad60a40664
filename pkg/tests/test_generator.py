import json

import numpy as np
import pytest

from dphp import autodiff as ad
from dphp import generator as gen
from dphp.data import GmmSpec, MinMaxScaler, gmm_sample
from dphp.embedding import mean_embedding, one_hot
from dphp.featuremaps import CombinedMap, ProductMap, RandomFourierMap, SumMap
from dphp.generator import (GeneratorModel, LabelSampler, TrainConfig, embedding_loss, generate, init_generator,
                            load_model, save_model, train)
from dphp.hermite import HermiteBasis
from dphp.privacy import NoiseCalibration, PrivacyBudget
from dphp.rng import substream


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


class TestAutodiff:
    def test_relu_subgradient(self):
        x = ad.Node(np.array([-1.0, 0.0, 2.0]))
        ad.backward(ad.sum_all(ad.relu(x)))
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_hermite_norm_gradient_at_origin(self):
        x = ad.Node(np.array([0.0]))
        ad.backward(ad.square_norm(ad.hermite_feature_layer(x, HermiteBasis(0.5, 8))))
        assert abs(x.grad[0]) <= 1e-15

    @pytest.mark.parametrize("op", [ad.tanh, ad.sigmoid, ad.softmax, ad.relu])
    def test_elementwise_ops(self, op):
        rng = np.random.default_rng(0)
        x0 = rng.normal(size=(3, 4)) + 0.05
        w = rng.normal(size=(3, 4))

        def f(v):
            return float(np.sum(w * op(ad.Node(v)).value))

        x = ad.Node(x0)
        ad.backward(_weighted(op(x), w))
        np.testing.assert_allclose(x.grad, numeric_grad(f, x0), rtol=1e-6, atol=1e-8)

    def test_affine_concat_columns(self):
        rng = np.random.default_rng(1)
        x0, W0, b0 = rng.normal(size=(4, 3)), rng.normal(size=(3, 5)), rng.normal(size=5)
        T = rng.normal(size=(4, 8))

        def loss_nodes(x, W, b):
            h = ad.affine(x, W, b)
            out = ad.concat([ad.columns(h, 0, 2), ad.tanh(ad.columns(h, 2, 5)), x], axis=1)
            return ad.frobenius_loss(out, T)

        nodes = [ad.Node(v) for v in (x0, W0, b0)]
        ad.backward(loss_nodes(*nodes))
        for i, v in enumerate((x0, W0, b0)):
            def f(u, i=i):
                vals = [x0, W0, b0]
                vals[i] = u
                return float(loss_nodes(*[ad.Node(a) for a in vals]).value)
            np.testing.assert_allclose(nodes[i].grad, numeric_grad(f, v), rtol=1e-6, atol=1e-8)

    @pytest.mark.parametrize("single,tol", [(False, 1e-12), (True, 1e-6)])
    def test_fused_rff_layer_matches_generic(self, single, tol):
        rng = np.random.default_rng(2)
        spec = RandomFourierMap.draw(60, 3, 0.5, seed=4, single=single)
        x0, Y = rng.random((9, 3)), one_hot(rng.integers(0, 4, 9), 4)
        T = rng.normal(size=(60, 4)) * 0.1
        grads, values = [], []
        for fused in (True, False):
            x = ad.Node(x0)
            emb = (ad.rff_embedding_layer(x, spec, Y) if fused
                   else ad.mean_embedding_layer(ad.feature_map_layer(x, spec), Y))
            loss = ad.frobenius_loss(emb, T)
            ad.backward(loss)
            grads.append(x.grad)
            values.append(float(loss.value))
        assert values[0] == pytest.approx(values[1], abs=tol)
        np.testing.assert_allclose(grads[0], grads[1], atol=tol)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ad.frobenius_loss(ad.Node(np.zeros((2, 2))), np.zeros((2, 3)))
        with pytest.raises(ValueError):
            ad.mean_embedding_layer(ad.Node(np.zeros((3, 2))), np.zeros((2, 2)))

    def test_shared_node_accumulates(self):
        x = ad.Node(np.array(3.0))
        y = x + x * 2.0
        ad.backward(ad.sum_all(y))
        assert x.grad == 3.0


def _weighted(node, w):
    return ad.Node(np.sum(node.value * w), (node,), lambda g: (g * w,))


def _small_problem(seed=0, activation="tanh"):
    rng = np.random.default_rng(seed)
    model = init_generator(1, 1, (16,), (("sigmoid", 2),), rng, activation)
    b = HermiteBasis(0.5, 5)
    spec = CombinedMap(ProductMap(b, (0, 1), 2, 0.5, 3.0), SumMap.shared(b, 2, 0.5, 3.0))
    Xr = rng.uniform(size=(30, 2))
    tp, ts = mean_embedding(Xr, np.zeros(30, dtype=int), spec, 1)
    z = rng.standard_normal((12, 1))
    labels = np.zeros(12, dtype=int)
    Y = one_hot(labels, 1)

    def loss(params, nodes=None):
        nodes = nodes or [ad.Node(p) for p in params]
        model.set_params(params)
        x = model.graph(z, labels, nodes)
        return embedding_loss(x, Y, [(spec.product, tp.matrix, 1.0), (spec.sum, ts.matrix, 1.0)]), nodes

    return model, loss


class TestGradientCorrectness:
    def test_directional_derivatives(self):
        model, loss = _small_problem()
        theta = [p.copy() for p in model.params]
        L, nodes = loss(theta)
        ad.backward(L)
        grads = [n.grad for n in nodes]
        rng = np.random.default_rng(1)
        h = 1e-4
        for _ in range(20):
            v = [rng.standard_normal(p.shape) for p in theta]
            analytic = sum(np.sum(g * d) for g, d in zip(grads, v))
            lp = float(loss([p + h * d for p, d in zip(theta, v)])[0].value)
            lm = float(loss([p - h * d for p, d in zip(theta, v)])[0].value)
            numeric = (lp - lm) / (2 * h)
            assert abs(analytic - numeric) / max(abs(numeric), 1e-12) <= 1e-5

    def test_loss_consistency(self):
        model, _ = _small_problem()
        rng = np.random.default_rng(2)
        b = HermiteBasis(0.5, 5)
        spec = CombinedMap(ProductMap(b, (0, 1), 2), SumMap.shared(b, 2))
        z, labels = rng.standard_normal((8, 1)), np.zeros(8, dtype=int)
        x = model.graph(z, labels)
        tp, ts = mean_embedding(x.value, labels, spec, 1)
        L = embedding_loss(x, one_hot(labels, 1), [(spec.product, tp.matrix, 1.0), (spec.sum, ts.matrix, 1.0)])
        assert float(L.value) <= 1e-28


class TestModel:
    def test_init_deterministic_and_bounded(self):
        blocks = (("sigmoid", 3),)
        a = init_generator(4, 2, (10, 7), blocks, np.random.default_rng(5))
        b = init_generator(4, 2, (10, 7), blocks, np.random.default_rng(5))
        for wa, wb in zip(a.params, b.params):
            np.testing.assert_array_equal(wa, wb)
        for W in a.weights:
            assert np.all(np.abs(W) <= np.sqrt(6 / sum(W.shape)))
        assert [W.shape for W in a.weights] == [(6, 10), (10, 7), (7, 3)]
        assert all(np.all(bias == 0) for bias in a.biases)

    def test_no_hidden_layers(self):
        m = init_generator(2, 3, (), (("identity", 4),), np.random.default_rng(0))
        assert len(m.weights) == 1 and m.weights[0].shape == (5, 4)

    def test_forward_decoders(self):
        m = init_generator(3, 2, (8,), (("sigmoid", 2), ("softmax", 3), ("identity", 1)), np.random.default_rng(0))
        out = m.forward(np.random.default_rng(1).normal(size=(5, 3)), [0, 1, 1, 0, 1])
        assert out.shape == (5, 6)
        assert np.all((out[:, :2] > 0) & (out[:, :2] < 1))
        np.testing.assert_allclose(out[:, 2:5].sum(axis=1), 1.0, atol=1e-12)
        assert m.forward(np.zeros((1, 3)), [1]).shape == (1, 6)

    def test_shape_errors(self):
        m = init_generator(3, 2, (8,), (("sigmoid", 2),), np.random.default_rng(0))
        with pytest.raises(ValueError):
            m.forward(np.zeros((2, 4)), [0, 1])
        with pytest.raises(ValueError):
            m.forward(np.zeros((2, 3)), [0])
        with pytest.raises(ValueError):
            init_generator(3, 2, (8,), (("bogus", 2),), np.random.default_rng(0))

    def test_checkpoint_round_trip(self, tmp_path):
        m = init_generator(3, 2, (8,), (("sigmoid", 1), ("softmax", 2)), np.random.default_rng(0), "tanh", 7)
        save_model(m, tmp_path / "m.json", {"config_hash": "abc"})
        again, meta = load_model(tmp_path / "m.json")
        assert meta == {"config_hash": "abc"}
        z = np.random.default_rng(1).normal(size=(4, 3))
        np.testing.assert_array_equal(again.forward(z, [0, 1, 0, 1]), m.forward(z, [0, 1, 0, 1]))
        assert json.loads((tmp_path / "m.json").read_text())["format"] == "dphp-generator/1"


class TestGenerate:
    def test_empty(self):
        m = init_generator(2, 2, (4,), (("sigmoid", 2),), np.random.default_rng(0))
        X, y = generate(m, 0, LabelSampler.uniform(2), np.random.default_rng(0))
        assert X.shape == (0, 2) and y.shape == (0,)

    def test_label_histogram(self):
        m = init_generator(2, 3, (4,), (("sigmoid", 2),), np.random.default_rng(0))
        p = np.array([0.2, 0.5, 0.3])
        n = 10_000
        X, y = generate(m, n, LabelSampler(p), np.random.default_rng(1))
        counts = np.bincount(y, minlength=3)
        assert np.all(np.abs(counts - n * p) <= 3 * np.sqrt(n * p * (1 - p)))
        assert np.all((X > 0) & (X < 1))

    def test_hard_categorical(self):
        m = init_generator(2, 2, (4,), (("softmax", 3), ("sigmoid", 1)), np.random.default_rng(0))
        for hard in ("sample", "argmax"):
            X, _ = generate(m, 50, LabelSampler.uniform(2), np.random.default_rng(2), hard=hard)
            np.testing.assert_array_equal(X[:, :3].sum(axis=1), 1.0)
            assert set(np.unique(X[:, :3])) <= {0.0, 1.0}

    def test_seeded(self):
        m = init_generator(2, 2, (4,), (("sigmoid", 2),), np.random.default_rng(0))
        a = generate(m, 20, LabelSampler.uniform(2), np.random.default_rng(4))
        b = generate(m, 20, LabelSampler.uniform(2), np.random.default_rng(4))
        np.testing.assert_array_equal(a[0], b[0])


@pytest.fixture(scope="module")
def gmm_data():
    spec = GmmSpec.grid()
    X, y = gmm_sample(spec, 1000, substream(0, "data"))
    return MinMaxScaler(*spec.bounds()).transform(X), y


class TestTrainConfig:
    def test_batch_and_steps(self):
        cfg = TrainConfig(batch_rate=0.1)
        assert cfg.batch_size(9000) == 900 and cfg.steps_per_epoch == 10
        assert TrainConfig(batch_rate=0.3).steps_per_epoch == 4
        assert TrainConfig(batch_rate=1e-6).batch_size(10) == 1

    @pytest.mark.parametrize("kw", [{"gamma": 0}, {"batch_rate": 0}, {"batch_rate": 1.5}, {"epochs": 0},
                                    {"gamma_target": "x"}, {"feature_map": "x"},
                                    {"budget": PrivacyBudget(1.0, 1e-5)}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestTrain:
    def test_feature_length_reported(self, gmm_data):
        X, y = gmm_data
        res = train(X, y, 5, TrainConfig(epochs=1, batch_rate=0.5, hidden=(8,)))
        assert res.report["feature_length"] == {"sum": 52, "product": 676, "combined": 728}

    def test_loss_decreases(self, gmm_data):
        X, y = gmm_data
        res = train(X, y, 5, TrainConfig(epochs=6, batch_rate=0.2, hidden=(32, 32), feature_scale=20,
                                         length_scale=0.1))
        losses = [e["loss"] for e in res.report["epochs"]]
        assert np.mean(np.diff(losses[:6])) < 0
        assert losses[5] < losses[0]

    def test_release_schedule(self, gmm_data):
        X, y = gmm_data
        base = dict(epochs=4, batch_rate=0.5, hidden=(8,), length_scale=0.3, budget=PrivacyBudget(1.0, 1e-5))
        res = train(X, y, 5, TrainConfig(**base))
        assert res.report["privatizations"] == {"sum": 1, "product": 4}
        assert res.report["privacy"]["E"] == 4
        res = train(X, y, 5, TrainConfig(product_release="auto", **base))
        assert res.report["privatizations"] == {"sum": 1, "product": 1}
        assert res.report["privacy"]["E"] == 1

    def test_zero_noise_matches_non_private(self, gmm_data, monkeypatch):
        X, y = gmm_data
        base = dict(epochs=2, batch_rate=0.5, hidden=(8,), length_scale=0.3)
        plain = train(X, y, 5, TrainConfig(**base))
        monkeypatch.setattr(gen, "calibrate_sigma", lambda eps, delta, method: _zero(eps, delta))
        monkeypatch.setattr(gen, "compose_product_releases", lambda E, eps, delta, method: _zero(eps, delta, E))
        private = train(X, y, 5, TrainConfig(budget=PrivacyBudget(1.0, 1e-5), **base))
        for a, b in zip(plain.model.params, private.model.params):
            np.testing.assert_array_equal(a, b)

    def test_deterministic(self, gmm_data):
        X, y = gmm_data
        cfg = TrainConfig(epochs=2, batch_rate=0.5, hidden=(8,), seed=3)
        a, b = train(X, y, 5, cfg), train(X, y, 5, cfg)
        assert json.dumps(a.report, sort_keys=True) == json.dumps(b.report, sort_keys=True)
        assert json.dumps(a.model.to_dict()) == json.dumps(b.model.to_dict())

    def test_rff_path(self, gmm_data):
        X, y = gmm_data
        res = train(X, y, 5, TrainConfig(feature_map="rff", rff_features=100, epochs=1, batch_rate=0.5,
                                         hidden=(8,), length_scale=0.3, budget=PrivacyBudget(1.0, 1e-5)))
        assert res.report["privacy"]["epsilon_sum"] == 1.0
        assert res.report["privatizations"] == {"sum": 1, "product": 0}

    def test_model_is_generator(self, gmm_data):
        X, y = gmm_data
        res = train(X, y, 5, TrainConfig(epochs=1, batch_rate=0.5, hidden=(8,)))
        assert isinstance(res.model, GeneratorModel) and res.model.out_dim == 2


def _zero(eps, delta, releases=1):
    return NoiseCalibration(0.0, eps, delta, "analytic", releases=releases)
