"""Autodiff core, the three policy models, RMSProp and checkpoints."""
import numpy as np
import pytest
import scipy.sparse as sparse
from hypothesis import given, settings, strategies as st
from scipy import stats

from mazebase.neural import autodiff as ad
from mazebase.neural import checkpoint as ckpt
from mazebase.neural.models import (
    LinearModel,
    MemNNModel,
    MemoryBatch,
    MLPModel,
    NumericError,
    ShapeError,
    build_model,
    greedy_action,
    sample_action,
)
from mazebase.neural.optim import RMSProp, rmsprop_step

import criteria


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def check_op(build, *shapes, seed=0):
    """Compare autodiff against central differences for a scalar function of several inputs."""
    rng = np.random.default_rng(seed)
    xs = [rng.uniform(-1, 1, size=s) for s in shapes]
    weights = None

    def scalar(*vals):
        nonlocal weights
        out = build(*[ad.Tensor(v) for v in vals]).value
        if weights is None:
            weights = np.random.default_rng(seed + 1).uniform(-1, 1, size=out.shape)
        return float((out * weights).sum())

    scalar(*xs)
    leaves = [ad.param(x) for x in xs]
    out = build(*leaves)
    out.backward(weights)
    for i, x in enumerate(xs):
        def f(v, i=i):
            vals = list(xs)
            vals[i] = v
            return scalar(*vals)
        assert np.allclose(leaves[i].grad, numeric_grad(f, x), atol=1e-7, rtol=1e-6)


class TestAutodiffOps:
    @pytest.mark.parametrize("op", [ad.add, ad.sub, ad.mul])
    def test_binary_broadcast(self, op):
        check_op(op, (3, 4), (4,))

    def test_div(self):
        check_op(lambda a, b: ad.div(a, ad.add(ad.square(b), 1.0)), (3, 2), (3, 2))

    @pytest.mark.parametrize("op", [ad.tanh, ad.exp, ad.neg, ad.square])
    def test_unary(self, op):
        check_op(op, (2, 5))

    def test_log(self):
        check_op(lambda a: ad.log(ad.add(ad.square(a), 0.5)), (4,))

    def test_matmul(self):
        check_op(ad.matmul, (3, 4), (4, 2))

    def test_spmatmul(self):
        s = sparse.csr_matrix(np.array([[1.0, 0, 2], [0, 0, 3]]))
        check_op(lambda b: ad.spmatmul(s, b), (3, 4))

    def test_sum_axis(self):
        check_op(lambda a: ad.sum(a, axis=1), (3, 4))
        check_op(lambda a: ad.sum(a, axis=0, keepdims=True), (3, 4))

    def test_mean(self):
        check_op(ad.mean, (3, 4))

    def test_gather_and_segment_sum(self):
        idx = np.array([2, 0, 2, 1])
        check_op(lambda a: ad.gather_rows(a, idx), (3, 2))
        check_op(lambda a: ad.segment_sum(a, idx, 3), (4, 2))

    def test_pick_and_log_softmax(self):
        check_op(lambda a: ad.pick(ad.log_softmax(a), [1, 0, 3]), (3, 4))

    def test_segment_softmax(self):
        seg = np.array([0, 0, 1, 1, 1, 2])
        check_op(lambda a: ad.segment_softmax(a, seg, 3), (6,))

    def test_rowdot_and_reshape(self):
        check_op(lambda a, b: ad.reshape(ad.rowdot(a, b), (2, 2)), (4, 3), (4, 3))

    def test_stop_gradient(self):
        x = ad.param(np.array([2.0]))
        y = ad.mul(x, ad.stop_gradient(x))
        y.backward(np.ones(1))
        assert x.grad[0] == 2.0

    def test_shared_node_accumulates(self):
        x = ad.param(np.array([3.0]))
        y = ad.add(ad.mul(x, x), x)
        y.backward(np.ones(1))
        assert x.grad[0] == 7.0

    def test_operators(self):
        a, b = ad.param(np.array([1.0, 2.0])), ad.param(np.array([3.0, 4.0]))
        out = ad.sum((a * b + a - b) / b)
        out.backward()
        assert np.allclose(a.grad, (b.value + 1) / b.value)

    def test_scalar_seed_required(self):
        with pytest.raises(ValueError):
            ad.param(np.ones(3)).backward()


def features(n_obs, dim, rng):
    return sparse.csr_matrix((rng.random((n_obs, dim)) < 0.3).astype(float))


def memories(n_obs, vocab, rng, per=3):
    seg = np.repeat(np.arange(n_obs), per)
    bags = (rng.random((len(seg), vocab)) < 0.4).astype(float)
    bags[:, 0] = 1.0  # no empty bag
    return MemoryBatch(sparse.csr_matrix(bags), seg.astype(np.intp), n_obs)


class TestModels:
    def test_linear_zero_uniform(self):
        m = LinearModel(6, 4)
        m.params = {k: np.zeros_like(v) for k, v in m.params.items()}
        po = m.policy(sparse.csr_matrix(np.zeros((2, 6))))
        assert np.allclose(po.probs, 0.25) and np.allclose(po.baseline, 0)

    def test_linear_one_hot_picks_row(self):
        m = LinearModel(6, 4, rng=np.random.default_rng(1))
        x = np.zeros((1, 6))
        x[0, 3] = 1
        po = m.policy(sparse.csr_matrix(x))
        assert np.allclose(po.logits[0], m.params["W_out"][3] + m.params["b_out"])

    def test_mlp_zero_uniform(self):
        m = MLPModel(6, 5)
        m.params = {k: np.zeros_like(v) for k, v in m.params.items()}
        assert np.allclose(m.policy(sparse.csr_matrix(np.ones((1, 6)))).probs, 0.2)

    def test_mlp_saturation(self):
        m = MLPModel(4, 3, hidden=8, rng=np.random.default_rng(0))
        m.params["W_hid"] = np.full((4, 8), 50.0)
        h = m.hidden_layer(np.ones((1, 4)), {k: ad.Tensor(v) for k, v in m.params.items()}).value
        assert np.all(np.abs(h) > 1 - 1e-9)

    def test_empty_observation_equals_bias_forward(self):
        for m in (LinearModel(7, 3, rng=np.random.default_rng(2)), MLPModel(7, 3, rng=np.random.default_rng(3))):
            m.params["b_out"] = np.array([0.3, -0.2, 0.1])
            po = m.policy(sparse.csr_matrix((1, 7)))
            if isinstance(m, LinearModel):
                assert np.allclose(po.logits[0], m.params["b_out"])
            else:
                h = np.tanh(m.params["b_hid"])
                assert np.allclose(po.logits[0], h @ m.params["W_out"] + m.params["b_out"])

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            LinearModel(5, 3).policy(np.zeros((2, 4)))
        with pytest.raises(ShapeError):
            MemNNModel(6, 3).policy(np.zeros((2, 6)))

    def test_memnn_empty_memory(self):
        m = MemNNModel(6, 3)
        empty = MemoryBatch(sparse.csr_matrix((0, 6)), np.zeros(0, dtype=np.intp), 1)
        with pytest.raises(ShapeError):
            m.policy(empty)

    def test_memnn_single_entry_full_attention(self):
        m = MemNNModel(8, 3, rng=np.random.default_rng(0))
        batch = MemoryBatch(sparse.csr_matrix(np.eye(8)[:1]), np.zeros(1, dtype=np.intp), 1)
        m.policy(batch)
        assert len(m.last_attention) == 3
        assert all(np.allclose(a, 1.0) for a in m.last_attention)

    def test_memnn_duplicates_equal_attention(self):
        m = MemNNModel(8, 3, rng=np.random.default_rng(1))
        bags = np.zeros((3, 8))
        bags[0, [1, 2]] = bags[1, [1, 2]] = 1
        bags[2, 5] = 1
        m.policy(MemoryBatch(sparse.csr_matrix(bags), np.zeros(3, dtype=np.intp), 1))
        for a in m.last_attention:
            assert a[0] == pytest.approx(a[1], abs=1e-15)

    def test_memnn_attention_sums_to_one(self):
        rng = np.random.default_rng(4)
        m = MemNNModel(10, 4, rng=rng)
        m.params = {k: rng.uniform(-1, 1, v.shape) for k, v in m.params.items()}
        batch = memories(5, 10, rng, per=4)
        m.policy(batch)
        for a in m.last_attention:
            assert np.allclose(np.bincount(batch.seg, weights=a), 1.0)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10 ** 6))
    def test_memnn_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        m = MemNNModel(10, 4, rng=rng)
        m.params = {k: rng.uniform(-1, 1, v.shape) for k, v in m.params.items()}
        batch = memories(1, 10, rng, per=6)
        perm = rng.permutation(6)
        shuffled = MemoryBatch(batch.bags[perm], batch.seg[perm], 1)
        a, b = m.policy(batch), m.policy(shuffled)
        assert np.allclose(a.probs, b.probs, atol=1e-12) and np.allclose(a.baseline, b.baseline, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10 ** 6), kind=st.sampled_from(["linear", "mlp", "memnn"]))
    def test_probs_normalised_and_finite(self, seed, kind):
        rng = np.random.default_rng(seed)
        if kind == "memnn":
            m, batch = MemNNModel(10, 5, rng=rng), memories(4, 10, rng)
        else:
            m = build_model({"kind": kind, "input_dim": 20, "n_actions": 5}, rng=rng)
            batch = features(4, 20, rng)
        m.params = {k: rng.uniform(-2, 2, v.shape) for k, v in m.params.items()}
        po = m.policy(batch)
        assert np.allclose(po.probs.sum(axis=1), 1, atol=1e-6)
        assert np.all(po.probs > 0) and np.all(np.isfinite(po.baseline))

    def test_nonfinite_logits_raise(self):
        m = LinearModel(3, 2)
        m.params["b_out"] = np.array([np.nan, 0.0])
        with pytest.raises(NumericError):
            m.policy(sparse.csr_matrix(np.ones((1, 3))))

    def test_build_model_unknown(self):
        with pytest.raises(ValueError):
            build_model({"kind": "cnn"})

    def test_memnn_embedding_width(self):
        assert MemNNModel(20, 4).params["E0"].shape == (20, 50)

    def test_init_scale(self):
        m = MLPModel(30, 4, rng=np.random.default_rng(0))
        assert np.abs(m.params["W_hid"]).max() <= 0.05 and not m.params["b_hid"].any()


@pytest.mark.parametrize("kind", ["linear", "mlp", "memnn"])
def test_gradient_check(kind):
    assert criteria.gradient_check(kind, n_points=15, seed=3) < 1e-4


class TestSampling:
    def test_one_hot(self):
        rng = np.random.default_rng(0)
        assert {sample_action(np.array([1.0, 0, 0, 0]), rng) for _ in range(500)} == {0}

    def test_uniform_chi_square(self):
        rng = np.random.default_rng(1)
        draws = [sample_action(np.full(5, 0.2), rng) for _ in range(100_000)]
        assert stats.chisquare(np.bincount(draws, minlength=5)).pvalue > 1e-3

    def test_skewed_frequencies(self):
        rng = np.random.default_rng(2)
        p = np.array([0.1, 0.6, 0.3])
        draws = np.bincount([sample_action(p, rng) for _ in range(50_000)], minlength=3)
        assert stats.chisquare(draws, p * 50_000).pvalue > 1e-3

    def test_nan_raises(self):
        with pytest.raises(NumericError):
            sample_action(np.array([np.nan, 0.5]), np.random.default_rng(0))

    def test_greedy_tie_break(self):
        assert greedy_action(np.array([0.2, 0.4, 0.4])) == 1


class TestRMSProp:
    def test_zero_grad_unchanged(self):
        p = {"w": np.array([1.0, -2.0])}
        RMSProp(p, lr=0.1).step(p, {"w": np.zeros(2)})
        assert np.array_equal(p["w"], [1.0, -2.0])

    def test_fixpoint_step(self):
        g = np.array([0.5])
        p, s = {"w": np.zeros(1)}, {"w": g * g}
        new_p, _ = rmsprop_step(p, {"w": g}, s, lr=0.01)
        assert new_p["w"][0] == pytest.approx(-0.01 * 0.5 / np.sqrt(0.25 + 1e-6))

    def test_second_step_smaller(self):
        p = {"w": np.zeros(1)}
        opt = RMSProp(p, lr=0.01)
        g = {"w": np.array([1.0])}
        opt.step(p, g)
        first = -p["w"][0]
        opt.step(p, g)
        second = -p["w"][0] - first
        assert 0 < second < first

    def test_first_step_closed_form(self):
        p = {"w": np.array([1.0])}
        RMSProp(p, lr=0.01, decay=0.97, eps=1e-6).step(p, {"w": np.array([2.0])})
        s = 0.03 * 4.0
        assert p["w"][0] == pytest.approx(1.0 - 0.01 * 2.0 / np.sqrt(s + 1e-6), abs=1e-15)

    def test_functional_matches_in_place(self):
        rng = np.random.default_rng(0)
        p = {"a": rng.normal(size=3), "b": rng.normal(size=(2, 2))}
        opt = RMSProp({k: v.copy() for k, v in p.items()}, lr=0.02)
        q = {k: v.copy() for k, v in p.items()}
        state = {}
        for _ in range(3):
            g = {k: rng.normal(size=v.shape) for k, v in p.items()}
            opt.step(q, g)
            p, state = rmsprop_step(p, g, state, lr=0.02)
        assert all(np.allclose(p[k], q[k], atol=1e-14) for k in p)

    def test_nonfinite_grad_aborts(self):
        p = {"w": np.zeros(2)}
        with pytest.raises(NumericError):
            RMSProp(p, lr=0.1).step(p, {"w": np.array([np.inf, 0])})

    def test_shape_mismatch(self):
        p = {"w": np.zeros(2)}
        with pytest.raises(ValueError):
            RMSProp(p, lr=0.1).step(p, {"w": np.zeros(3)})


class TestCheckpoint:
    def _tensors(self):
        rng = np.random.default_rng(0)
        return {"W": rng.normal(size=(3, 4)), "b": rng.normal(size=4), "s": np.array(np.pi)}

    def test_round_trip_bit_exact(self, tmp_path):
        t = self._tensors()
        ckpt.save(tmp_path / "m.mzb", {"kind": "linear"}, "abc", t, {"batch": 3})
        header, back = ckpt.load(tmp_path / "m.mzb", expect_vocab="abc")
        assert header["model"] == {"kind": "linear"} and header["extra"] == {"batch": 3}
        for k in t:
            assert back[k].tobytes() == np.asarray(t[k]).tobytes() and back[k].shape == np.shape(t[k])

    def test_bad_magic(self):
        blob = bytearray(ckpt.dumps({}, "d", self._tensors()))
        blob[:4] = b"XXXX"
        with pytest.raises(ckpt.CheckpointError, match="magic"):
            ckpt.loads(bytes(blob))

    def test_version(self):
        blob = bytearray(ckpt.dumps({}, "d", self._tensors()))
        blob[4] = 9
        with pytest.raises(ckpt.CheckpointError, match="version"):
            ckpt.loads(bytes(blob))

    def test_corrupted_header(self):
        blob = bytearray(ckpt.dumps({}, "d", self._tensors()))
        blob[12] = 0xFF
        with pytest.raises(ckpt.CheckpointError, match="header"):
            ckpt.loads(bytes(blob))

    def test_corrupted_payload(self):
        blob = bytearray(ckpt.dumps({}, "d", self._tensors()))
        blob[-3] ^= 0x10
        with pytest.raises(ckpt.CheckpointError, match="checksum"):
            ckpt.loads(bytes(blob))

    def test_truncated(self):
        with pytest.raises(ckpt.CheckpointError):
            ckpt.loads(b"MZ")

    def test_vocab_mismatch(self):
        blob = ckpt.dumps({}, "digest-one", self._tensors())
        with pytest.raises(ckpt.CheckpointError, match="vocabulary"):
            ckpt.loads(blob, expect_vocab="digest-two")

    def test_atomic_save_leaves_no_temp(self, tmp_path):
        ckpt.save(tmp_path / "m.mzb", {}, "d", self._tensors())
        assert [p.name for p in tmp_path.iterdir()] == ["m.mzb"]
