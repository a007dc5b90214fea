import math

import numpy as np
import pytest

from docgraph import nn
from docgraph.errors import VersionMismatch
from docgraph.nn import ParamStore, Tensor


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for c in range(flat.size):
        orig = flat[c]
        flat[c] = orig + h
        up = f(x)
        flat[c] = orig - h
        down = f(x)
        flat[c] = orig
        gf[c] = (up - down) / (2 * h)
    return g


def check_op(build, x0, tol=1e-6):
    """Compare tape gradient of sum(op(x)) against central differences."""
    x0 = np.array(x0, dtype=np.float64)

    def f(x):
        t = Tensor(x.copy())
        return float(nn.sum_all(build(t)).data)

    t = Tensor(x0.copy())
    out = nn.sum_all(build(t))
    out.backward()
    num = numeric_grad(f, x0.copy())
    assert np.allclose(t.grad, num, atol=tol), f"max err {np.abs(t.grad - num).max()}"


class TestForwardValues:
    def test_softmax_uniform(self):
        y = nn.softmax_rows(Tensor([[0.0, 0.0, 0.0, 0.0]]))
        assert np.allclose(y.data, 0.25)

    def test_relu(self):
        assert np.array_equal(nn.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])

    def test_affine_identity(self):
        x = np.array([[1.0, -2.0, 3.0]])
        y = nn.affine(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3)))
        assert np.array_equal(y.data, x)

    def test_affine_vector_input(self):
        y = nn.affine(Tensor([1.0, 2.0]), Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([10.0, 20.0]))
        assert np.array_equal(y.data, [11.0, 22.0])

    def test_mlp2_zero_params_zero_output(self):
        x = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
        y = nn.mlp2(x, Tensor(np.zeros((4, 8))), Tensor(np.zeros(8)),
                    Tensor(np.zeros((8, 2))), Tensor(np.zeros(2)))
        assert np.array_equal(y.data, np.zeros((3, 2)))

    def test_shape_mismatch_message_has_both_shapes(self):
        with pytest.raises(nn.ShapeMismatch) as e:
            nn.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
        assert "(2, 3)" in str(e.value) and "(4, 5)" in str(e.value)

    def test_nonfinite_guard_trips(self):
        with np.errstate(over="ignore"):
            with pytest.raises(nn.NonFiniteError):
                nn.mul(Tensor([1e308]), Tensor([1e308]))


class TestBackwardRules:
    def test_add_broadcast(self):
        rng = np.random.default_rng(1)
        b = Tensor(rng.normal(size=4))
        check_op(lambda x: nn.add(x, b), rng.normal(size=(3, 4)))
        # gradient of the broadcast side reduces over the batch axis
        b2 = Tensor(rng.normal(size=4))
        x = Tensor(rng.normal(size=(3, 4)))
        nn.sum_all(nn.add(x, b2)).backward()
        assert np.allclose(b2.grad, np.full(4, 3.0))

    def test_mul(self):
        rng = np.random.default_rng(2)
        other = Tensor(rng.normal(size=(3, 4)))
        check_op(lambda x: nn.mul(x, other), rng.normal(size=(3, 4)))

    def test_matmul_2d(self):
        rng = np.random.default_rng(3)
        w = Tensor(rng.normal(size=(4, 5)))
        check_op(lambda x: nn.matmul(x, w), rng.normal(size=(3, 4)))

    def test_matmul_weight_grad_batched(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(2, 3, 4)))

        def f(w_arr):
            return float(nn.sum_all(nn.matmul(x, Tensor(w_arr.copy()))).data)

        w0 = rng.normal(size=(4, 5))
        w = Tensor(w0.copy())
        nn.sum_all(nn.matmul(x, w)).backward()
        assert np.allclose(w.grad, numeric_grad(f, w0.copy()), atol=1e-6)

    def test_batched_matmul_both_sides(self):
        rng = np.random.default_rng(5)
        b = Tensor(rng.normal(size=(2, 4, 3)))
        check_op(lambda x: nn.matmul(x, b), rng.normal(size=(2, 5, 4)))

    def test_relu_grad(self):
        check_op(nn.relu, np.array([[-1.5, 0.3], [2.0, -0.2]]))

    def test_concat_grad(self):
        rng = np.random.default_rng(6)
        other = Tensor(rng.normal(size=(3, 2)))
        check_op(lambda x: nn.concat([x, other], axis=1), rng.normal(size=(3, 4)))

    def test_take_rows_grad_scatter_adds(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        idx = np.array([0, 0, 1])
        nn.sum_all(nn.take_rows(x, idx)).backward()
        assert np.array_equal(x.grad, [[2.0, 2.0], [1.0, 1.0]])

    def test_take_slot_grad(self):
        rng = np.random.default_rng(7)
        check_op(lambda x: nn.take_slot(x, 1), rng.normal(size=(2, 3, 4)))

    def test_reshape_transpose_grad(self):
        rng = np.random.default_rng(8)
        check_op(lambda x: nn.transpose(nn.reshape(x, (2, 2, 3)), (1, 0, 2)), rng.normal(size=(4, 3)))

    def test_softmax_grad(self):
        rng = np.random.default_rng(9)
        w = Tensor(rng.normal(size=(4, 4)))
        check_op(lambda x: nn.matmul(nn.softmax_rows(x), w), rng.normal(size=(3, 4)))

    def test_masked_softmax_zeroes_masked_lanes(self):
        mask = np.array([[True, True, False]])
        y = nn.masked_softmax(Tensor([[1.0, 1.0, 99.0]]), mask)
        assert np.allclose(y.data, [[0.5, 0.5, 0.0]])
        check_op(lambda x: nn.masked_softmax(x, mask), np.array([[0.3, -0.2, 5.0]]))


class TestLosses:
    def test_uniform_logits_ln4(self):
        loss = nn.cross_entropy(Tensor(np.zeros((2, 4))), np.array([1, 3]))
        assert math.isclose(float(loss.data), math.log(4), rel_tol=1e-12)

    def test_huge_true_logit_stable(self):
        loss = nn.cross_entropy(Tensor([[1000.0, 0.0, 0.0]]), np.array([0]))
        assert float(loss.data) < 1e-9

    def test_bad_class_id(self):
        with pytest.raises(IndexError):
            nn.cross_entropy(Tensor(np.zeros((1, 3))), np.array([3]))

    def test_cross_entropy_grad(self):
        rng = np.random.default_rng(10)
        ids = np.array([0, 2, 4])

        def f(z):
            return float(nn.cross_entropy(Tensor(z.copy()), ids).data)

        z0 = rng.normal(size=(3, 5))
        t = Tensor(z0.copy())
        nn.cross_entropy(t, ids).backward()
        assert np.abs(t.grad - numeric_grad(f, z0.copy())).max() < 1e-9

    def test_bce_values_and_grad(self):
        z0 = np.array([0.0, 3.0, -2.0])
        targets = np.array([1.0, 0.0, 1.0])
        t = Tensor(z0.copy())
        loss = nn.bce_with_logits(t, targets)
        expect = np.mean([math.log(2), 3 + math.log1p(math.exp(-3)), 2 + math.log1p(math.exp(-2))])
        assert math.isclose(float(loss.data), expect, rel_tol=1e-12)
        loss.backward()

        def f(z):
            return float(nn.bce_with_logits(Tensor(z.copy()), targets).data)

        assert np.abs(t.grad - numeric_grad(f, z0.copy())).max() < 1e-9

    def test_bce_overflow_safe(self):
        loss = nn.bce_with_logits(Tensor([1000.0, -1000.0]), np.array([1.0, 0.0]))
        assert float(loss.data) < 1e-9


def attn_params(rng, d):
    def mk():
        return Tensor(rng.normal(size=(d, d)) * 0.3), Tensor(rng.normal(size=d) * 0.1)

    wq, bq = mk()
    wk, bk = mk()
    wv, bv = mk()
    wo, bo = mk()
    return wq, bq, wk, bk, wv, bv, wo, bo


class TestAttention:
    def test_identical_keys_give_uniform_weights(self):
        rng = np.random.default_rng(11)
        d = 8
        params = attn_params(rng, d)
        kv = np.tile(rng.normal(size=(1, 1, d)), (1, 5, 1))
        q = Tensor(rng.normal(size=(1, 2, d)))
        out, att = nn.multi_head_attention(
            q, Tensor(kv), None, *params, n_heads=2, head_size=4, return_weights=True
        )
        assert np.allclose(att.data, 0.2)
        assert np.isfinite(out.data).all()

    def test_single_key_output_independent_of_query(self):
        rng = np.random.default_rng(12)
        d = 8
        params = attn_params(rng, d)
        kv = Tensor(rng.normal(size=(1, 1, d)))
        out1 = nn.multi_head_attention(Tensor(rng.normal(size=(1, 3, d))), kv, None, *params,
                                       n_heads=2, head_size=4)
        out2 = nn.multi_head_attention(Tensor(rng.normal(size=(1, 3, d))), kv, None, *params,
                                       n_heads=2, head_size=4)
        # all query slots see softmax weight 1 on the single value
        assert np.allclose(out1.data[0, 0], out1.data[0, 2], atol=1e-12)
        assert np.allclose(out1.data, out2.data, atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(13)
        d = 8
        params = attn_params(rng, d)
        x = Tensor(rng.normal(size=(3, 6, d)))
        mask = np.ones((3, 6), dtype=bool)
        mask[1, 4:] = False
        _, att = nn.multi_head_attention(x, x, mask, *params, n_heads=2, head_size=4,
                                         return_weights=True)
        assert np.allclose(att.data.sum(axis=-1), 1.0)
        assert np.allclose(att.data[1, :, :, 4:], 0.0)

    def test_width_mismatch_rejected(self):
        rng = np.random.default_rng(14)
        params = attn_params(rng, 8)
        with pytest.raises(nn.ShapeMismatch):
            nn.multi_head_attention(Tensor(rng.normal(size=(1, 2, 8))),
                                    Tensor(rng.normal(size=(1, 2, 8))),
                                    None, *params, n_heads=3, head_size=4)

    def test_end_to_end_gradient(self):
        rng = np.random.default_rng(15)
        d = 8
        wq, bq, wk, bk, wv, bv, wo, bo = attn_params(rng, d)
        mask = np.array([[True, True, True, False]])

        def build(x):
            return nn.multi_head_attention(x, x, mask, wq, bq, wk, bk, wv, bv, wo, bo,
                                           n_heads=2, head_size=4)

        check_op(build, rng.normal(size=(1, 4, d)), tol=1e-5)


class TestAdam:
    def test_zero_gradient_no_change(self):
        store = ParamStore()
        store.add("w", np.array([1.0, 2.0]))
        before = store.params["w"].copy()
        for _ in range(3):
            nn.adam_step(store, {"w": np.zeros(2)}, lr=0.1, total_steps=10)
        assert np.array_equal(store.params["w"], before)

    def test_first_step_magnitude_is_lr(self):
        # warmup of 1 step over 100 total: step 1 already runs at full lr;
        # bias-corrected m/sqrt(v) is exactly sign(g) up to eps
        store = ParamStore()
        store.add("w", np.array([0.5]))
        nn.adam_step(store, {"w": np.array([0.37])}, lr=1e-3, total_steps=100)
        delta = 0.5 - float(store.params["w"][0])
        assert math.isclose(delta, 1e-3, rel_tol=1e-6)

    def test_warmup_ramp(self):
        # 100 warmup steps over 10000 total: first step runs at lr / 100
        store = ParamStore()
        store.add("w", np.array([0.5]))
        nn.adam_step(store, {"w": np.array([1.0])}, lr=1e-2, total_steps=10000)
        delta = 0.5 - float(store.params["w"][0])
        assert math.isclose(delta, 1e-4, rel_tol=1e-6)

    def test_deterministic_runs(self):
        def run():
            rng = np.random.default_rng(0)
            store = ParamStore()
            store.add("w", rng.normal(size=(4, 4)))
            for _ in range(10):
                g = rng.normal(size=(4, 4))
                nn.adam_step(store, {"w": g}, lr=1e-3, total_steps=10)
            return store.params["w"]

        assert np.array_equal(run(), run())

    def test_shape_mismatch(self):
        store = ParamStore()
        store.add("w", np.zeros((2, 2)))
        with pytest.raises(nn.ShapeMismatch):
            nn.adam_step(store, {"w": np.zeros(3)}, lr=1e-3)

    def test_duplicate_param_name_rejected(self):
        store = ParamStore()
        store.add("w", np.zeros(2))
        with pytest.raises(ValueError):
            store.add("w", np.zeros(2))


class TestFiniteness:
    def test_ops_stay_finite_on_bounded_inputs(self):
        # documented magnitude bound: |x| <= 1e3
        rng = np.random.default_rng(40)
        for _ in range(20):
            x = Tensor(rng.uniform(-1e3, 1e3, size=(4, 6)))
            w = Tensor(rng.uniform(-1e3, 1e3, size=(6, 3)))
            b = Tensor(rng.uniform(-1e3, 1e3, size=3))
            for out in (
                nn.softmax_rows(x),
                nn.relu(x),
                nn.affine(x, w, b),
                nn.cross_entropy(nn.affine(x, w, b), rng.integers(0, 3, size=4)),
                nn.bce_with_logits(Tensor(rng.uniform(-1e3, 1e3, size=5)),
                                   rng.integers(0, 2, size=5).astype(float)),
            ):
                assert np.isfinite(out.data).all()


class TestGradCheck:
    def test_quadratic_exact(self):
        def loss_fn(params):
            x = params["x"]
            return 0.5 * float((x * x).sum()), {"x": x.copy()}

        err = nn.grad_check(loss_fn, {"x": np.array([1.0, -2.0, 3.0])}, h=1e-5)
        assert err <= 1e-8

    def test_detects_wrong_gradient(self):
        def loss_fn(params):
            x = params["x"]
            return 0.5 * float((x * x).sum()), {"x": 2.0 * x}

        err = nn.grad_check(loss_fn, {"x": np.array([1.0, -2.0])}, h=1e-5)
        assert err > 0.1


class TestCheckpoint:
    def test_round_trip_and_byte_stability(self, tmp_path):
        rng = np.random.default_rng(21)
        store = ParamStore(seed=7)
        store.add("layer/W", rng.normal(size=(3, 4)))
        store.add("layer/b", rng.normal(size=4))
        store.step = 5
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        nn.save_checkpoint(p1, store, {"n_classes": 4}, "featv1")
        nn.save_checkpoint(p2, store, {"n_classes": 4}, "featv1")
        assert p1.read_bytes() == p2.read_bytes()

        loaded, meta = nn.load_checkpoint(p1)
        assert loaded.step == 5 and loaded.seed == 7
        assert meta["config"] == {"n_classes": 4}
        assert meta["feature_layout"] == "featv1"
        for k in store.params:
            assert np.array_equal(loaded.params[k], store.params[k])
            assert np.array_equal(loaded.adam_m[k], store.adam_m[k])

    def test_future_version_rejected(self, tmp_path):
        p = tmp_path / "x.ckpt"
        p.write_text('{"format": "ckptv9", "step": 0}')
        with pytest.raises(VersionMismatch) as e:
            nn.load_checkpoint(p)
        assert "ckptv1" in str(e.value) and "ckptv9" in str(e.value)
