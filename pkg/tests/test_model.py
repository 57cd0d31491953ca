import itertools
import timeit

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

import oracles
from helpers import density_trained_quan, gradcheck_batch, relu_margin
from quan import checkpoint
from quan.baselines import BaselineConfig, build_baseline
from quan.model import (
    AttentionWeights,
    ConfigError,
    ConvFrontEnd,
    DecoderWeights,
    MiniSetPlan,
    ModelConfig,
    MSSABWeights,
    QuAN,
    conv_forward,
    conv_output_width,
    decoder_head,
    layers_required,
    mab_forward,
    moment_order,
    mssab_forward,
    pab_forward,
    quan_forward,
    sab_forward,
)
from quan.tensor import Tensor, gradient_check
from quan.training import bce_loss


def rand_block(seed, d_in, d_h, scale=0.5):
    rng = np.random.default_rng(seed)
    w = AttentionWeights(d_in, d_h, rng=rng)
    for p in w.parameters():
        p.data = rng.normal(scale=scale, size=p.shape) + (1.0 if p.data.ndim == 1 and p is w.ln1_gain else 0.0)
    return w


def rand_decoder(seed, d_h):
    rng = np.random.default_rng(seed)
    w = DecoderWeights(d_h, rng=rng)
    for p in w.parameters():
        p.data = rng.normal(scale=0.7, size=p.shape)
    return w


def binary_sets(seed, shape):
    return np.random.default_rng(seed).integers(0, 2, size=shape).astype(np.uint8)


class TestConfig:
    def test_heads_must_divide_width(self):
        with pytest.raises(ConfigError, match="n_heads"):
            ModelConfig(grid=(4, 4), set_size=8, d_hidden=10, n_heads=4)

    def test_set_size_divisibility(self):
        with pytest.raises(ConfigError, match="n_minisets"):
            ModelConfig(grid=(4, 4), set_size=10, n_minisets=2, n_layers=2)

    def test_kernel_must_fit(self):
        with pytest.raises(ConfigError, match="kernel"):
            ModelConfig(grid=(1, 6), set_size=4, kernel=2)

    def test_plan_must_be_bijection(self):
        with pytest.raises(ValueError):
            MiniSetPlan(np.array([0, 0, 1, 2]), 2, np.array([0, 1]))
        with pytest.raises(ValueError):
            MiniSetPlan(np.arange(4), 2, np.array([1, 1]))
        with pytest.raises(ConfigError):
            MiniSetPlan(np.arange(5), 2, np.array([0, 1]))

    def test_plan_partition_covers_set(self):
        plan = MiniSetPlan.from_seed(12, 3, seed=4)
        parts = plan.partition()
        assert len(parts) == 3 and all(len(p) == 4 for p in parts)
        assert_array_equal(np.sort(np.concatenate(parts)), np.arange(12))


class TestConv:
    @pytest.mark.parametrize("grid,n_c,expected", [((4, 4), 7, 63), ((4, 4), 8, 72), ((5, 5), 16, 256)])
    def test_output_width(self, grid, n_c, expected):
        assert conv_output_width(grid, 2, n_c) == expected
        cfg = ModelConfig(grid=grid, set_size=2, n_channels=n_c)
        assert cfg.d_x == expected
        w = ConvFrontEnd(n_c, 2, rng=np.random.default_rng(0))
        assert conv_forward(binary_sets(0, (2,) + grid), w, train=True).shape == (2, expected)

    def test_grid_smaller_than_kernel(self):
        w = ConvFrontEnd(2, 3, rng=np.random.default_rng(0))
        with pytest.raises(ConfigError):
            conv_forward(np.zeros((3, 2, 5)), w, train=False)

    @pytest.mark.parametrize("train", [True, False])
    def test_matches_loop_oracle(self, train):
        rng = np.random.default_rng(3)
        w = ConvFrontEnd(3, 2, rng=rng)
        w.bn_gain.data = rng.uniform(0.5, 2, size=3)
        w.bn_bias.data = rng.normal(size=3)
        w.running_mean[:] = rng.normal(size=3)
        w.running_var[:] = rng.uniform(0.5, 2, size=3)
        X = binary_sets(1, (2, 3, 3, 4))
        expected = oracles.conv(X, w, train)
        assert_allclose(conv_forward(X, w, train).data, expected, atol=1e-12)


class TestSAB:
    def test_zero_query_key_gives_uniform_scores(self):
        w = rand_block(0, 3, 4)
        w.Q.data[:] = 0
        w.K.data[:] = 0
        x = Tensor(np.random.default_rng(1).normal(size=(3, 3)))
        out, scores = sab_forward(x, w, n_heads=2, return_scores=True)
        assert_allclose(scores.data, 1 / 3, atol=1e-15)
        assert_allclose(out.data, oracles.attention_block(x.data, x.data, w, 2, "relu"), atol=1e-12)
        # every row sees the same value average, so all rows agree
        assert_allclose(out.data, np.broadcast_to(out.data[0], out.shape), atol=1e-15)

    def test_single_element(self):
        w = rand_block(2, 3, 4)
        x = np.random.default_rng(2).normal(size=(1, 3))
        out, scores = sab_forward(Tensor(x), w, n_heads=2, return_scores=True)
        assert_array_equal(scores.data, 1.0)
        h = w.Q.data @ x[0] + w.V.data @ x[0]
        h1 = oracles.ln(h, w.ln1_gain.data, w.ln1_bias.data)
        r = oracles.ln(h1 + np.maximum(w.O.data @ h1, 0), w.ln2_gain.data, w.ln2_bias.data)
        assert_allclose(out.data[0], 1 / (1 + np.exp(-r)), atol=1e-12)

    def test_hand_set_two_by_two(self):
        w = AttentionWeights(2, 2, rng=np.random.default_rng(0))
        w.Q.data = np.array([[1.0, 0.5], [-0.3, 0.8]])
        w.K.data = np.array([[0.2, -1.0], [0.7, 0.1]])
        w.V.data = np.array([[0.0, 1.0], [1.0, 0.0]])
        w.O.data = np.array([[0.5, -0.5], [0.25, 1.0]])
        x = np.array([[1.0, 0.0], [0.3, -2.0]])
        for act in ("relu", "sigmoid"):
            out = sab_forward(Tensor(x), w, n_heads=1, act=act).data
            assert_allclose(out, oracles.attention_block(x, x, w, 1, act), atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_multi_head_against_oracle(self, seed):
        w = rand_block(seed, 5, 8)
        x = np.random.default_rng(seed).normal(size=(4, 5))
        assert_allclose(sab_forward(Tensor(x), w, 4).data, oracles.attention_block(x, x, w, 4, "relu"), atol=1e-12)

    def test_gradients(self):
        w = rand_block(7, 3, 4)
        x = np.random.default_rng(7).normal(size=(3, 3))

        def loss():
            y = oracles_free_readout(sab_forward(Tensor(x), w, 2))
            return bce_loss(y, 1)

        for rep in gradient_check(loss, w.named_parameters()):
            assert rep.passed, rep


def oracles_free_readout(h):
    """Squash a block output to one confidence with a fixed sigmoid of its mean."""
    from quan.tensor import mean, sigmoid
    return sigmoid(mean(h) * 3.0 - 1.0)


class TestMAB:
    def test_single_key(self):
        w = rand_block(3, 4, 4)
        rng = np.random.default_rng(3)
        q, k = rng.normal(size=(2, 4)), rng.normal(size=(1, 4))
        out, scores = mab_forward(Tensor(q), Tensor(k), w, 2, return_scores=True)
        assert_array_equal(scores.data, 1.0)
        assert_allclose(out.data, oracles.attention_block(q, k, w, 2, "relu"), atol=1e-12)

    def test_self_attention_degeneracy(self):
        w = rand_block(4, 4, 4)
        x = Tensor(np.random.default_rng(4).normal(size=(3, 4)))
        assert_array_equal(mab_forward(x, x, w, 2).data, sab_forward(x, w, 2).data)

    def test_width_mismatch(self):
        w = rand_block(5, 4, 4)
        with pytest.raises(ValueError, match="width"):
            mab_forward(Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 3))), w, 2)

    def test_hand_set_case(self):
        w = rand_block(6, 2, 2)
        rng = np.random.default_rng(6)
        q, k = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        assert_allclose(mab_forward(Tensor(q), Tensor(k), w, 1).data,
                        oracles.attention_block(q, k, w, 1, "relu"), atol=1e-12)


def rand_mssab(seed, d_in, d_h, n_s):
    rng = np.random.default_rng(seed)
    w = MSSABWeights(d_in, d_h, n_s, rng=rng)
    w.sab = rand_block(seed + 100, d_in, d_h)
    if n_s > 1:
        w.mab = rand_block(seed + 200, d_h, d_h)
    return w


class TestMSSAB:
    def test_single_miniset_is_sab(self):
        w = rand_mssab(0, 3, 4, 1)
        x = Tensor(np.random.default_rng(0).normal(size=(5, 3)))
        out = mssab_forward(x, MiniSetPlan.identity(5, 1), w, 2)
        assert w.mab is None
        assert_array_equal(out.data, sab_forward(x, w.sab, 2).data)

    def test_output_size(self):
        w = rand_mssab(1, 3, 4, 2)
        out = mssab_forward(Tensor(np.zeros((4, 3))), MiniSetPlan.identity(4, 2), w, 2)
        assert out.shape == (2, 4)

    def test_indivisible_set(self):
        with pytest.raises(ConfigError):
            MiniSetPlan.identity(5, 2)

    @pytest.mark.parametrize("n_s,sigma", [(2, [1, 0]), (2, [0, 1]), (3, [2, 0, 1])])
    def test_matches_recursion_oracle(self, n_s, sigma):
        w = rand_mssab(2, 2, 2, n_s)
        x = np.random.default_rng(2).normal(size=(2 * n_s, 2))
        plan = MiniSetPlan(np.arange(2 * n_s), n_s, np.array(sigma))
        expected = oracles.mssab(x, n_s, sigma, w, 1, "relu")
        assert_allclose(mssab_forward(Tensor(x), plan, w, 1).data, expected, atol=1e-12)

    def test_shuffle_is_applied_before_partition(self):
        w = rand_mssab(3, 2, 4, 2)
        x = np.random.default_rng(3).normal(size=(6, 2))
        plan = MiniSetPlan(np.array([5, 0, 3, 1, 4, 2]), 2, np.array([1, 0]))
        expected = oracles.mssab(x[plan.permutation], 2, [1, 0], w, 2, "relu")
        assert_allclose(mssab_forward(Tensor(x), plan, w, 2).data, expected, atol=1e-12)

    def test_batched_equals_per_set(self):
        w = rand_mssab(4, 3, 4, 2)
        x = np.random.default_rng(4).normal(size=(3, 8, 3))
        plan = MiniSetPlan(np.arange(8), 2, np.array([1, 0]))
        batched = mssab_forward(Tensor(x), plan, w, 2).data
        for b in range(3):
            assert_allclose(batched[b], mssab_forward(Tensor(x[b]), plan, w, 2).data, atol=1e-14)

    def test_runtime_is_at_most_quadratic(self):
        def best_time(n):
            w = rand_mssab(5, 16, 16, 2)
            x = Tensor(np.random.default_rng(5).normal(size=(n, 16)))
            plan = MiniSetPlan.identity(n, 2)
            timer = timeit.Timer(lambda: mssab_forward(x, plan, w, 4))
            number, _ = timer.autorange()
            return min(timer.repeat(5, number)) / number

        sizes = [64, 128, 256, 512]
        t = [best_time(n) for n in sizes]
        ratios = [b / a for a, b in zip(t, t[1:])]
        assert max(ratios) <= 4.5, ratios


class TestPAB:
    def test_zero_key_gives_uniform_scores(self):
        w = rand_decoder(0, 4)
        w.K.data[:] = 0
        z = np.random.default_rng(0).normal(size=(5, 4))
        pooled, scores = pab_forward(Tensor(z), w, 2)
        assert_allclose(scores.data, 0.2, atol=1e-15)
        assert_allclose(pooled.data, w.S.data[0] + (w.V.data @ z.T).mean(axis=1), atol=1e-12)

    def test_single_element(self):
        w = rand_decoder(1, 4)
        z = np.random.default_rng(1).normal(size=(1, 4))
        pooled, scores = pab_forward(Tensor(z), w, 2)
        assert_array_equal(scores.data, 1.0)
        assert_allclose(pooled.data, w.S.data[0] + w.V.data @ z[0], atol=1e-14)

    def test_matches_oracle_and_scores_sum_to_one(self):
        w = rand_decoder(2, 8)
        z = np.random.default_rng(2).normal(size=(6, 8))
        pooled, scores = pab_forward(Tensor(z), w, 4)
        ep, es = oracles.pab(z, w, 4)
        assert_allclose(pooled.data, ep, atol=1e-12)
        assert_allclose(scores.data, es, atol=1e-12)
        assert_allclose(scores.data.sum(axis=-1), 1.0, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.permutations(range(6)))
    def test_row_permutation(self, perm):
        w = rand_decoder(3, 4)
        z = np.random.default_rng(3).normal(size=(6, 4))
        pooled, scores = pab_forward(Tensor(z), w, 2)
        pooled_p, scores_p = pab_forward(Tensor(z[list(perm)]), w, 2)
        assert_allclose(pooled_p.data, pooled.data, atol=1e-13)
        assert_allclose(scores_p.data, scores.data[:, list(perm)], atol=1e-15)


class TestDecoder:
    def test_zero_readout(self):
        w = rand_decoder(0, 4)
        w.W.data[:] = 0
        w.b.data[:] = 0
        assert decoder_head(Tensor(np.ones(4)), w).data == 0.5

    def test_bias_only(self):
        w = rand_decoder(0, 4)
        w.W.data[:] = 0
        w.b.data[:] = 10
        # 1 / (1 + e^-10) at 30 digits
        assert_allclose(decoder_head(Tensor(np.ones(4)), w).data, 0.999954602131297565, rtol=1e-15)

    def test_hand_set_two_dims(self):
        w = rand_decoder(5, 2)
        p = np.array([0.3, -1.1])
        assert_allclose(decoder_head(Tensor(p), w, "relu").data, oracles.decoder(p, w, "relu"), atol=1e-12)
        assert_allclose(decoder_head(Tensor(p), w, "sigmoid").data, oracles.decoder(p, w, "sigmoid"), atol=1e-12)


def small_model(n_s=2, n_layers=1, N=4, grid=(3, 3), seed=0, frontend="conv", d_hidden=8):
    cfg = ModelConfig(grid=grid, set_size=N, d_hidden=d_hidden, n_heads=2, n_minisets=n_s, n_layers=n_layers,
                      n_channels=3, frontend=frontend, mlp_widths=(5, 4))
    m = QuAN(cfg, seed=seed)
    rng = np.random.default_rng(seed + 50)
    for name, p in m.named_parameters().items():
        if "gain" not in name:
            p.data = rng.normal(scale=0.6, size=p.shape)
    if frontend == "conv":
        m.frontend.running_mean[:] = rng.normal(size=3)
        m.frontend.running_var[:] = rng.uniform(0.5, 2, size=3)
    return m


class TestQuAN:
    def test_compositional_oracle(self):
        m = small_model(n_s=2, N=4)
        X = binary_sets(0, (4, 3, 3))
        assert_allclose(m.forward(X, train=False).data, oracles.quan(m, X), atol=1e-12)

    def test_compositional_oracle_mlp_two_layers(self):
        m = small_model(n_s=2, n_layers=2, N=8, frontend="mlp")
        X = binary_sets(1, (8, 3, 3))
        assert_allclose(m.forward(X, train=False).data, oracles.quan(m, X), atol=1e-12)

    def test_functional_form(self):
        m = small_model()
        X = binary_sets(2, (4, 3, 3))
        assert quan_forward(X, m.config, m).data == m.forward(X, train=False).data

    def test_set_size_mismatch(self):
        m = small_model()
        with pytest.raises(ConfigError, match="set_size"):
            m.forward(binary_sets(0, (5, 3, 3)), train=False)

    def test_output_in_open_interval(self):
        m = small_model()
        y = m.forward(binary_sets(3, (6, 4, 3, 3)), train=False).data
        assert np.all((y > 0) & (y < 1))

    def test_all_permutations_single_miniset(self):
        m = small_model(n_s=1, n_layers=2, N=4)
        X = binary_sets(4, (4, 3, 3))
        ref = m.forward(X, train=False).data
        for perm in itertools.permutations(range(4)):
            assert m.forward(X[list(perm)], train=False).data == ref

    def test_random_permutations_single_miniset_training_mode(self):
        m = small_model(n_s=1, n_layers=1, N=16)
        X = binary_sets(5, (16, 3, 3))
        ref = m.forward(X, train=True, seed=0).data
        rng = np.random.default_rng(0)
        for _ in range(100):
            assert m.forward(X[rng.permutation(16)], train=True, seed=0).data == ref

    def test_within_miniset_permutations(self):
        m = small_model(n_s=2, N=8)
        X = binary_sets(6, (8, 3, 3))
        ref = m.forward(X, train=False).data
        rng = np.random.default_rng(1)
        for _ in range(50):
            perm = np.concatenate([rng.permutation(4), 4 + rng.permutation(4)])
            assert m.forward(X[perm], train=False).data == ref

    def test_plan_seed_is_reproducible(self):
        m = small_model(n_s=2, N=8)
        X = binary_sets(7, (8, 3, 3))
        a = m.forward(X, train=True, seed=11).data
        b = m.forward(X, train=True, seed=11).data
        assert a == b

    def test_set_size_contract(self):
        m = small_model(n_s=2, n_layers=2, N=8)
        x = m.encode_frontend(binary_sets(8, (1, 8, 3, 3)), train=False)
        for i, w in enumerate(m.layers):
            x = mssab_forward(x, MiniSetPlan.identity(x.shape[-2], 2), w, 2)
            assert x.shape[-2] == 8 // 2 ** (i + 1)

    def test_details_map_scores_to_snapshots(self):
        m = small_model(n_s=1, N=6)
        X = binary_sets(9, (6, 3, 3))
        _, det = m.forward(X, train=False, return_details=True)
        assert det.scores.shape == (2, 6)
        assert_array_equal(np.sort(det.order), np.arange(6))
        assert_allclose(det.scores.sum(axis=-1), 1.0, atol=1e-12)

    def test_full_gradient_check(self):
        m = density_trained_quan(seed=0)
        X, y = gradcheck_batch(seed=0)
        assert relu_margin(m, X) > 1e-4

        def loss():
            return bce_loss(m.forward(X, train=True, seed=3), y)

        for rep in gradient_check(loss, m.named_parameters()):
            assert rep.passed, rep


class TestMomentAccounting:
    @pytest.mark.parametrize("n_s,L,expected", [(5, 1, 50), (1, 2, 4), (1, 0, 1), (2, 1, 8)])
    def test_moment_order(self, n_s, L, expected):
        assert moment_order(n_s, L) == expected

    @pytest.mark.parametrize("theta,n_s,expected", [(50, 1, 6), (50, 5, 1), (1, 1, 0), (1, 7, 0), (4, 1, 2)])
    def test_layers_required(self, theta, n_s, expected):
        assert layers_required(theta, n_s) == expected

    @given(st.integers(1, 10 ** 6), st.integers(1, 6))
    def test_layers_required_is_minimal(self, theta, n_s):
        L = layers_required(theta, n_s)
        assert moment_order(n_s, L) >= theta
        assert L == 0 or moment_order(n_s, L - 1) < theta


class TestCheckpoint:
    @pytest.mark.parametrize("kind", ["quan", "smlp", "pab-only"])
    def test_round_trip_is_bit_exact(self, tmp_path, kind):
        if kind == "quan":
            model = small_model(n_s=2, N=4)
        else:
            model = build_baseline(BaselineConfig(kind, grid=(3, 3), set_size=4, encoder_widths=(6, 4),
                                                  d_hidden=4, n_heads=2), seed=1)
        path = tmp_path / "ck.npz"
        checkpoint.save(path, model, epoch=3)
        loaded, meta = checkpoint.load(path)
        assert meta["variant"] == kind and meta["epoch"] == 3 and meta["precision"] == "f64"
        for (k, a), (k2, b) in zip(model.state_dict().items(), loaded.state_dict().items()):
            assert k == k2 and a.dtype == b.dtype
            assert_array_equal(a, b)
        X = binary_sets(0, (4, 3, 3))
        assert loaded.forward(X, train=False).data == model.forward(X, train=False).data
        checkpoint.save(tmp_path / "again.npz", loaded, epoch=3)
        assert (tmp_path / "again.npz").read_bytes() == path.read_bytes()

    def test_float32_precision_tag(self, tmp_path):
        cfg = ModelConfig(grid=(3, 3), set_size=4, d_hidden=4, n_heads=2, n_channels=2, precision="f32")
        model = QuAN(cfg)
        checkpoint.save(tmp_path / "c.npz", model)
        loaded, meta = checkpoint.load(tmp_path / "c.npz")
        assert meta["precision"] == "f32"
        assert all(p.dtype == np.float32 for p in loaded.parameters())
