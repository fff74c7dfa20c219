import numpy as np
import pytest

from metahpo import autodiff as ad
from metahpo.data import Batch, generate_synthetic_metadataset, subsample
from metahpo.encoder import (
    EncoderConfig,
    Embedding,
    encode,
    forward_embedding,
    init_params,
    load_checkpoint,
    loss_and_gradient,
    reconstruct,
    save_checkpoint,
)

SMALL = EncoderConfig(f_widths=(6, 5), g_widths=(4,), h_widths=(4, 3), activation="tanh")
SMALL_HEAD = EncoderConfig(
    f_widths=(6, 5), g_widths=(4,), h_widths=(4, 3), activation="tanh", head_widths=(4, 2)
)


def make_batch(rng, n=6, c=3, name="b"):
    X = rng.random((n, c))
    y = rng.integers(0, 2, size=n)
    return Batch(name, np.arange(n), np.arange(c), X, y)


class TestAutodiff:
    def test_add_mul_broadcast_gradients(self):
        a = ad.Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        b = ad.Tensor(np.array([10.0, 20.0]))  # broadcast over rows
        out = ad.total(ad.mul(ad.add(a, b), a))
        ad.backward(out)
        np.testing.assert_allclose(a.grad, 2 * a.value + b.value)
        np.testing.assert_allclose(b.grad, a.value.sum(axis=0))

    def test_matmul_gradients(self):
        rng = np.random.default_rng(0)
        a = ad.Tensor(rng.random((3, 4)))
        b = ad.Tensor(rng.random((4, 2)))
        out = ad.total(ad.matmul(a, b))
        ad.backward(out)
        np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.value.T)
        np.testing.assert_allclose(b.grad, a.value.T @ np.ones((3, 2)))

    def test_mean_axis_gradient(self):
        x = ad.Tensor(np.arange(6.0).reshape(2, 3))
        out = ad.total(ad.mean(x, axis=0, keepdims=True))
        ad.backward(out)
        np.testing.assert_allclose(x.grad, np.full((2, 3), 0.5))

    def test_clip_zero_gradient_outside(self):
        x = ad.Tensor(np.array([0.5, 2.0, -1.0]))
        out = ad.total(ad.clip(x, 0.0, 1.0))
        ad.backward(out)
        np.testing.assert_allclose(x.grad, [1.0, 0.0, 0.0])

    def test_euclidean_value_and_gradient(self):
        a = ad.Tensor(np.array([[0.0, 0.0]]))
        b = ad.Tensor(np.array([[3.0, 4.0]]))
        d = ad.euclidean(a, b)
        assert float(d.value) == 5.0
        ad.backward(d)
        np.testing.assert_allclose(a.grad, [[-0.6, -0.8]])
        np.testing.assert_allclose(b.grad, [[0.6, 0.8]])

    def test_euclidean_coincident_subgradient_zero(self):
        a = ad.Tensor(np.array([1.0, 2.0]))
        b = ad.Tensor(np.array([1.0, 2.0]))
        d = ad.euclidean(a, b)
        ad.backward(d)
        np.testing.assert_array_equal(a.grad, [0.0, 0.0])

    def test_diamond_graph_accumulates(self):
        x = ad.Tensor(np.array(2.0))
        y = ad.mul(x, x)  # x appears twice
        ad.backward(y)
        assert float(x.grad) == pytest.approx(4.0)

    def test_plain_ndarray_passthrough(self):
        x = np.array([1.0, -1.0])
        assert isinstance(ad.relu(x), np.ndarray)
        np.testing.assert_allclose(ad.relu(x), [1.0, 0.0])


class TestInitParams:
    def test_deterministic(self):
        a = init_params(SMALL, seed=4)
        b = init_params(SMALL, seed=4)
        np.testing.assert_array_equal(a.values, b.values)

    def test_biases_zero(self):
        params = init_params(SMALL, seed=1)
        for name, shape, _ in params.layout:
            if name.endswith(".b"):
                np.testing.assert_array_equal(params.view(name), np.zeros(shape))

    def test_glorot_bound(self):
        # a 4 -> 8 layer must stay within sqrt(6/12)
        cfg = EncoderConfig(f_widths=(4,), g_widths=(8,), h_widths=(2,))
        params = init_params(cfg, seed=0)
        W = params.view("g0.W")
        bound = np.sqrt(6.0 / (4 + 8))
        assert bound == pytest.approx(0.70710678, abs=1e-6)
        assert np.abs(W).max() <= bound
        assert np.abs(W).max() > 0.5 * bound  # actually fills the range


class TestEncode:
    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(0)
        batch = make_batch(rng, n=8, c=4)
        params = init_params(EncoderConfig(), seed=2)
        base = encode(params, batch).vector
        perm = rng.permutation(8)
        shuffled = Batch("b", np.arange(8), np.arange(4), batch.X[perm], batch.y[perm])
        np.testing.assert_allclose(encode(params, shuffled).vector, base, atol=1e-9)

    def test_column_permutation_invariance(self):
        rng = np.random.default_rng(1)
        batch = make_batch(rng, n=8, c=4)
        params = init_params(EncoderConfig(), seed=2)
        base = encode(params, batch).vector
        perm = rng.permutation(4)
        shuffled = Batch("b", np.arange(8), np.arange(4), batch.X[:, perm], batch.y)
        np.testing.assert_allclose(encode(params, shuffled).vector, base, atol=1e-9)

    def test_row_duplication_invariance(self):
        rng = np.random.default_rng(2)
        batch = make_batch(rng, n=5, c=3)
        params = init_params(EncoderConfig(), seed=3)
        base = encode(params, batch).vector
        X10 = np.tile(batch.X, (10, 1))
        y10 = np.tile(batch.y, 10)
        big = Batch("b", np.arange(50), np.arange(3), X10, y10)
        np.testing.assert_allclose(encode(params, big).vector, base, atol=1e-9)

    def test_fixed_output_size_across_shapes(self):
        params = init_params(EncoderConfig(), seed=0)
        rng = np.random.default_rng(5)
        sizes = {len(encode(params, make_batch(rng, n=n, c=c)).vector)
                 for n, c in [(4, 2), (20, 7), (3, 11)]}
        assert sizes == {params.config.m}

    def test_empty_batch_rejected(self):
        params = init_params(SMALL, seed=0)
        batch = Batch("b", np.arange(0), np.arange(2), np.empty((0, 2)), np.empty(0))
        with pytest.raises(ValueError):
            encode(params, batch)

    def test_bit_for_bit_determinism(self):
        rng = np.random.default_rng(9)
        params = init_params(EncoderConfig(), seed=1)
        batch = make_batch(rng, n=7, c=4)
        a = encode(params, batch).vector
        b = encode(params, batch).vector
        assert np.array_equal(a, b)

    def test_reconstruct_shape_and_range(self):
        rng = np.random.default_rng(3)
        params = init_params(SMALL_HEAD, seed=1)
        out = reconstruct(params, make_batch(rng))
        assert out.shape == (2,)
        assert np.all((out > 0) & (out < 1))

    def test_zero_weight_head_gives_half(self):
        rng = np.random.default_rng(4)
        params = init_params(SMALL_HEAD, seed=1)
        values = params.values.copy()
        for name, shape, offset in params.layout:
            if name.startswith("head"):
                values[offset : offset + int(np.prod(shape))] = 0.0
        zeroed = type(params)(params.config, values, params.layout)
        np.testing.assert_allclose(reconstruct(zeroed, make_batch(rng)), 0.5)

    def test_head_absent_rejected(self):
        params = init_params(SMALL, seed=0)
        with pytest.raises(ValueError, match="head"):
            reconstruct(params, make_batch(np.random.default_rng(0)))


def finite_difference(params, objective, h=1e-5):
    grad = np.empty_like(params.values)
    for i in range(params.size):
        up, down = params.copy(), params.copy()
        up.values[i] += h
        down.values[i] -= h
        f_up = float(ad.value_of(objective({n: v for n, v in up.views().items()})))
        f_down = float(ad.value_of(objective({n: v for n, v in down.views().items()})))
        grad[i] = (f_up - f_down) / (2 * h)
    return grad


def relative_error(a, b):
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return np.abs(a - b) / scale


class TestGradients:
    def test_constant_objective_zero_gradient(self):
        params = init_params(SMALL, seed=0)
        loss, grad = loss_and_gradient(params, lambda tensors: ad.Tensor(3.5))
        assert loss == 3.5
        np.testing.assert_array_equal(grad, np.zeros_like(params.values))

    def test_linear_encoder_closed_form(self):
        # one unit per stage, positive weights and inputs so relu acts as
        # identity; the gradient of ||phi||^2 then has a hand-derivable form
        cfg = EncoderConfig(f_widths=(1,), g_widths=(1,), h_widths=(1,), activation="relu")
        params = init_params(cfg, seed=6)
        params.values[:] = np.abs(params.values) + 0.1
        X = np.array([[0.2, 0.7], [0.9, 0.4]])
        y = np.array([1, 0])
        batch = Batch("b", np.arange(2), np.arange(2), X, y)

        def objective(tensors):
            phi = forward_embedding(tensors, cfg, batch)
            return ad.total(ad.mul(phi, phi))

        loss, grad = loss_and_gradient(params, objective)

        wf, bf = params.view("f0.W").ravel(), float(params.view("f0.b")[0])
        wg, bg = float(params.view("g0.W")[0, 0]), float(params.view("g0.b")[0])
        wh, bh = float(params.view("h0.W")[0, 0]), float(params.view("h0.b")[0])
        cells = np.array([[0.2, 1.0], [0.7, 1.0], [0.9, 0.0], [0.4, 0.0]])
        z1 = cells @ wf + bf
        m = np.array([(z1[0] + z1[2]) / 2, (z1[1] + z1[3]) / 2])
        z2 = m * wg + bg
        pooled = z2.mean()
        phi = pooled * wh + bh
        assert loss == pytest.approx(phi**2, rel=1e-12)

        expected = {
            "h0.b": 2 * phi,
            "h0.W": 2 * phi * pooled,
            "g0.b": 2 * phi * wh,
            "g0.W": 2 * phi * wh * m.mean(),
            "f0.b": 2 * phi * wh * wg,
            "f0.W.0": 2 * phi * wh * wg * cells[:, 0].mean(),
            "f0.W.1": 2 * phi * wh * wg * cells[:, 1].mean(),
        }
        got = {}
        for name, shape, offset in params.layout:
            segment = grad[offset : offset + int(np.prod(shape))]
            if name == "f0.W":
                got["f0.W.0"], got["f0.W.1"] = segment
            else:
                got[name] = segment[0] if segment.size else None
        for key, value in expected.items():
            assert got[key] == pytest.approx(value, rel=1e-10), key

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences_smooth(self, seed):
        rng = np.random.default_rng(seed)
        params = init_params(SMALL_HEAD, seed=seed)
        params.values[:] += rng.normal(scale=0.05, size=params.size)
        b1, b2 = make_batch(rng, name="a"), make_batch(rng, name="b")
        l1, l2 = rng.random(2), rng.random(2)

        def objective(tensors):
            e1 = forward_embedding(tensors, SMALL_HEAD, b1)
            e2 = forward_embedding(tensors, SMALL_HEAD, b2)
            d = ad.euclidean(e1, e2)
            diff = ad.sub(d, float(np.linalg.norm(l1 - l2)))
            return ad.mul(diff, diff)

        loss, grad = loss_and_gradient(params, objective)
        fd = finite_difference(params, objective)
        assert relative_error(grad, fd).max() < 1e-4

    def test_relu_matches_finite_differences_off_kinks(self):
        rng = np.random.default_rng(11)
        cfg = EncoderConfig(f_widths=(6, 5), g_widths=(4,), h_widths=(4, 3), activation="relu")
        params = init_params(cfg, seed=11)
        params.values[:] += rng.normal(scale=0.05, size=params.size)
        batch = make_batch(rng, n=5, c=3)

        def objective(tensors):
            phi = forward_embedding(tensors, cfg, batch)
            return ad.total(ad.mul(phi, phi))

        _, grad = loss_and_gradient(params, objective)
        fd = finite_difference(params, objective)
        err = relative_error(grad, fd)
        # a kink within the probe window distorts isolated entries; the bulk
        # must still agree tightly
        assert np.quantile(err, 0.95) < 1e-4
        assert np.median(err) < 1e-6

    def test_non_finite_loss_raises(self):
        params = init_params(SMALL, seed=0)
        with pytest.raises(FloatingPointError):
            loss_and_gradient(params, lambda tensors: ad.Tensor(np.inf))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = init_params(SMALL_HEAD, seed=8)
        save_checkpoint(params, tmp_path / "ck.json")
        loaded = load_checkpoint(tmp_path / "ck.json")
        np.testing.assert_array_equal(loaded.values, params.values)
        assert loaded.config == params.config
        rng = np.random.default_rng(0)
        batch = make_batch(rng)
        np.testing.assert_array_equal(
            encode(params, batch).vector, encode(loaded, batch).vector
        )

    def test_version_check(self, tmp_path):
        (tmp_path / "bad.json").write_text('{"version": 99}')
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(tmp_path / "bad.json")
