import math

import numpy as np
import pytest

from stvsa import nn
from stvsa import tensor as T
from stvsa.errors import ConfigurationError, NumericFault, ShapeError
from stvsa.tensor import Tensor


def naive_attention(q, k, v):
    """Two explicit loops; no matrix products."""
    n, m, d = q.shape[0], k.shape[0], q.shape[1]
    w = np.zeros((n, m))
    for i in range(n):
        s = [sum(q[i, t] * k[j, t] for t in range(d)) / math.sqrt(d) for j in range(m)]
        top = max(s)
        e = [math.exp(x - top) for x in s]
        w[i] = np.array(e) / sum(e)
    out = np.zeros((n, v.shape[1]))
    for i in range(n):
        for j in range(m):
            out[i] += w[i, j] * v[j]
    return out, w


class TestAttention:
    def test_against_double_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n, m, d, dv = rng.integers(1, 6, size=4)
            q, k, v = rng.normal(size=(n, d)), rng.normal(size=(m, d)), rng.normal(size=(m, dv))
            out, w = nn.scaled_dot_product_attention(q, k, v, return_weights=True)
            ref, ref_w = naive_attention(q, k, v)
            assert np.max(np.abs(out.data - ref)) < 1e-10
            assert np.max(np.abs(w.data - ref_w)) < 1e-10
            assert np.all(np.abs(w.data.sum(axis=-1) - 1) < 1e-6) and w.data.min() >= 0

    def test_identity_inputs(self):
        eye = np.eye(2)
        out = nn.scaled_dot_product_attention(eye, eye, eye).data
        a = math.exp(1 / math.sqrt(2))
        np.testing.assert_allclose(out, [[a / (a + 1), 1 / (a + 1)], [1 / (a + 1), a / (a + 1)]])

    def test_saturated_softmax_selects_first_value(self):
        k = np.array([[50.0, 0, 0], [0, 50.0, 0], [0, 0, 50.0]])
        v = np.arange(9.0).reshape(3, 3)
        out = nn.scaled_dot_product_attention(k[:1], k, v).data
        np.testing.assert_allclose(out[0], v[0], atol=1e-9)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            nn.scaled_dot_product_attention(np.ones((2, 3)), np.ones((2, 4)), np.ones((2, 3)))
        with pytest.raises(ShapeError):
            nn.scaled_dot_product_attention(np.ones((2, 3)), np.ones((2, 3)), np.ones((4, 3)))


class TestMultiHead:
    def test_single_head_degeneracy(self):
        rng = np.random.default_rng(1)
        mha = nn.MultiHeadAttention(6, 1, rng)
        x = rng.normal(size=(5, 6))
        xt = Tensor(x)
        q, k, v = mha.w_q(xt), mha.w_k(xt), mha.w_v(xt)
        expected = mha.w_o(nn.scaled_dot_product_attention(q, k, v)).data
        np.testing.assert_allclose(nn.multi_head_forward(mha, xt).data, expected, atol=1e-12)

    def test_identity_projections(self):
        rng = np.random.default_rng(2)
        mha = nn.MultiHeadAttention(4, 1, rng)
        for lin in (mha.w_q, mha.w_k, mha.w_v, mha.w_o):
            lin.weight.data = np.eye(4)
        x = rng.normal(size=(3, 4))
        ref, _ = naive_attention(x, x, x)
        np.testing.assert_allclose(mha(Tensor(x)).data, ref, atol=1e-12)

    def test_eight_heads_shape(self):
        mha = nn.MultiHeadAttention(64, 8, np.random.default_rng(3))
        out = mha(Tensor(np.random.default_rng(4).normal(size=(30, 64))))
        assert out.shape == (30, 64) and np.all(np.isfinite(out.data))

    def test_weights_row_stochastic(self):
        mha = nn.MultiHeadAttention(16, 4, np.random.default_rng(5))
        _, w = mha(Tensor(np.random.default_rng(6).normal(size=(2, 7, 16))), return_weights=True)
        assert w.shape == (2, 4, 7, 7)
        np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_indivisible(self):
        with pytest.raises(ConfigurationError):
            nn.MultiHeadAttention(10, 3, np.random.default_rng(0))


class TestPositionalEncoding:
    def test_values(self):
        pe = nn.positional_encoding(50, 16)
        assert np.all(pe[0, 0::2] == 0) and np.all(pe[0, 1::2] == 1)
        assert np.all(np.abs(pe) <= 1)
        assert pe[3, 4] == math.sin(3 / 10000 ** (4 / 16))
        assert pe[3, 5] == math.cos(3 / 10000 ** (4 / 16))

    def test_odd_width(self):
        assert nn.positional_encoding(4, 5).shape == (4, 5)

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            nn.positional_encoding(0, 4)


def small_staat(**kw):
    cfg = dict(n_features=3, seq_len=4, d_model=8, n_heads=2, n_layers=1, d_ff=16, dropout=0.0, seed=0)
    cfg.update(kw)
    return nn.StaaT(nn.StaaTConfig(**cfg))


class TestStaaT:
    def test_rows_sum_to_one(self):
        model = nn.StaaT(nn.StaaTConfig(n_features=30, seq_len=30))
        x = np.random.default_rng(0).normal(size=(5, 30, 30))
        p = nn.staat_forward(model, x).data
        assert p.shape == (5, 2)
        assert np.all(np.abs(p.sum(axis=1) - 1) < 1e-9)

    def test_eval_deterministic(self):
        model = small_staat(dropout=0.5)
        x = np.random.default_rng(1).normal(size=(6, 4, 3))
        assert np.array_equal(model(x).data, model(x).data)

    def test_batch_permutation_equivariant(self):
        model = small_staat()
        x = np.random.default_rng(2).normal(size=(7, 4, 3))
        perm = np.random.default_rng(3).permutation(7)
        np.testing.assert_allclose(model(x[perm]).data, model(x).data[perm], atol=1e-14)

    def test_dropout_active_only_in_training(self):
        model = small_staat(dropout=0.5)
        x = np.random.default_rng(4).normal(size=(3, 4, 3))
        rng = np.random.default_rng(0)
        assert not np.array_equal(model(x, train=True, rng=rng).data, model(x).data)

    def test_gradients_match_finite_differences(self):
        model = small_staat()
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(3, 4, 3)))
        y = np.array([0, 1, 1])

        def loss():
            return nn.cross_entropy(model.logits(x), y)

        T.backward(loss())
        params = model.parameters()
        nums = T.numerical_grad(loss, params)
        for p, num in zip(params, nums):
            err = np.max(np.abs(p.grad - num)) / max(np.max(np.abs(num)), 1e-6)
            assert err < 1e-4, err

    def test_wrong_shape(self):
        with pytest.raises(ShapeError):
            small_staat()(np.zeros((2, 5, 3)))

    def test_nan_input_reports_layer(self):
        x = np.zeros((1, 4, 3))
        x[0, 0, 0] = np.nan
        with pytest.raises(NumericFault, match="layer 0"):
            small_staat()(x)

    def test_bad_config(self):
        with pytest.raises(ConfigurationError):
            small_staat(n_layers=0)
        with pytest.raises(ConfigurationError):
            small_staat(dropout=1.0)

    @pytest.mark.parametrize("kind", ["rnn", "cnn"])
    def test_baselines_simplex(self, kind):
        model = nn.build_classifier(kind, nn.StaaTConfig(n_features=3, seq_len=6, d_model=8, seed=1))
        p = model(np.random.default_rng(6).normal(size=(4, 6, 3))).data
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


class TestAdam:
    def test_zero_gradient_noop(self):
        p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
        before = p["w"].data.copy()
        nn.adam_step(nn.AdamState(), p, {"w": np.zeros(2)})
        assert np.array_equal(p["w"].data, before)

    def test_single_step(self):
        p = {"w": Tensor(np.array([0.0]), requires_grad=True)}
        state = nn.AdamState(lr=1e-4)
        nn.adam_step(state, p, {"w": np.array([1.0])})
        assert state.step == 1
        assert p["w"].data[0] == pytest.approx(-1e-4 / (1 + 1e-8), rel=1e-12)

    def test_sign_limit(self):
        p = {"w": Tensor(np.array([0.0, 0.0]), requires_grad=True)}
        state = nn.AdamState(lr=1e-3)
        prev = p["w"].data.copy()
        for _ in range(2000):
            nn.adam_step(state, p, {"w": np.array([3.0, -0.01])})
            delta, prev = p["w"].data - prev, p["w"].data.copy()
        np.testing.assert_allclose(delta, [-1e-3, 1e-3], rtol=1e-4)

    def test_descends_quadratic(self):
        x = Tensor(np.array([0.7, -1.3, 2.0]), requires_grad=True)
        state = nn.AdamState(lr=1e-4)
        f = lambda: 0.5 * float(x.data @ x.data)
        before = f()
        nn.adam_step(state, {"x": x}, {"x": x.data.copy()})
        assert f() < before

    def test_non_finite_names_parameter(self):
        p = {"layer.w": Tensor(np.zeros(2), requires_grad=True)}
        with pytest.raises(NumericFault, match="layer.w"):
            nn.adam_step(nn.AdamState(), p, {"layer.w": np.array([np.inf, 0.0])})


def toy_separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(n, 2))
    keep = np.abs(x[:, 0] + x[:, 1]) > 0.2
    x = x[keep]
    y = (x[:, 0] + x[:, 1] > 0).astype(int)
    return x[:, None, :], y


class TestTraining:
    def make(self, seed=0):
        return nn.StaaT(nn.StaaTConfig(n_features=2, seq_len=1, d_model=8, n_heads=2, n_layers=1,
                                       d_ff=16, seed=seed))

    def test_separable_toy(self):
        x, y = toy_separable()
        model = self.make()
        cfg = nn.TrainConfig(epochs=50, batch=32, lr=1e-2, dropout=0.0, seed=0)
        hist = nn.train_classifier(model, x, y, cfg)
        assert len(hist) == 50
        assert np.mean(model.predict(x) == y) >= 0.99

    def test_deterministic(self):
        x, y = toy_separable(60)
        cfg = nn.TrainConfig(epochs=3, batch=16, lr=1e-3, dropout=0.5, seed=7)
        a, b = self.make(), self.make()
        nn.train_classifier(a, x, y, cfg)
        nn.train_classifier(b, x, y, cfg)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb and np.array_equal(pa.data, pb.data)

    def test_empty(self):
        with pytest.raises(ConfigurationError):
            nn.train_classifier(self.make(), np.zeros((0, 1, 2)), np.zeros(0, dtype=int), nn.TrainConfig())


class TestCheckpoint:
    @pytest.mark.parametrize("kind", ["staat", "rnn", "cnn"])
    def test_round_trip_bit_exact(self, tmp_path, kind):
        model = nn.build_classifier(kind, nn.StaaTConfig(n_features=3, seq_len=5, d_model=8, n_heads=2, seed=3))
        path = tmp_path / "m.npz"
        nn.save_classifier(path, model, extra={"note": "x"})
        loaded, meta = nn.load_classifier(path)
        assert meta["extra"] == {"note": "x"} and meta["kind"] == kind
        for (na, pa), (nb, pb) in zip(model.named_parameters(), loaded.named_parameters()):
            assert na == nb and pa.data.tobytes() == pb.data.tobytes()
        x = np.random.default_rng(0).normal(size=(4, 5, 3))
        assert np.array_equal(model.predict_proba(x), loaded.predict_proba(x))

    def test_shape_mismatch(self):
        model = small_staat()
        state = model.state_dict()
        state["head.bias"] = np.zeros(3)
        with pytest.raises(ShapeError):
            model.load_state_dict(state)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "bad.npz"
        np.savez(path, __meta__=np.frombuffer(b'{"format": "other"}', dtype=np.uint8))
        with pytest.raises(ConfigurationError):
            nn.load_checkpoint(path)
