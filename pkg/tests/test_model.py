"""Model pipeline: shapes, gradient checks, structural equivalences, variants.

Gradient checks run on small instances (t=2, 2x2 grid, d=8, C=3) at 64-bit
precision with all parameters randomized so the zero-initialized paths are
exercised too.
"""

import dataclasses

import numpy as np
import pytest

from snapscore.autodiff import Tensor
from snapscore.model import (ModelConfig, SnapshotModel, aggregate_scores,
                             load_checkpoint, save_checkpoint)

from gradcheck import check_input_grad, check_param_grad

SMALL = dict(num_classes=3, t=2, k=2, encoder_layers=1, encoder_heads=2,
             d_in=8, d_bottleneck=8, h_p=2, w_p=2, w_max=18)


def small_model(variant="gl-sca", seed=0, randomize=True, **overrides):
    cfg = ModelConfig(variant=variant, **{**SMALL, **overrides})
    model = SnapshotModel(cfg, seed=seed)
    if randomize:
        model.randomize_parameters(np.random.default_rng(seed + 1000), scale=0.3)
    return model


def small_inputs(cfg, batch=2, seed=0):
    rng = np.random.default_rng(seed)
    n = cfg.tokens_per_snapshot
    g = rng.normal(size=(batch, n, cfg.d_in))
    ls = [rng.normal(size=(batch, n, cfg.d_in)) for _ in range(cfg.k)]
    w = rng.integers(1, cfg.w_max + 1, size=batch)
    return g, ls, w


class TestModelConfig:
    def test_variant_normalization(self):
        assert ModelConfig(variant="GL-SCA", num_classes=3).variant == "gl-sca"
        assert ModelConfig(variant="G", num_classes=3).variant == "g"

    def test_rejects_unknown_variant(self):
        with pytest.raises(ValueError, match="variant"):
            ModelConfig(variant="global-only", num_classes=3)

    def test_rejects_indivisible_heads(self):
        with pytest.raises(ValueError, match="divisible"):
            ModelConfig(num_classes=3, d_in=30, encoder_heads=4)

    def test_snapshot_names(self):
        assert ModelConfig(variant="g", num_classes=3).snapshot_names == ("gs",)
        assert ModelConfig(variant="gl", num_classes=3, k=2).snapshot_names == (
            "gs", "ls0", "ls1")


class TestAggregate:
    def test_single_snapshot_is_softmax(self):
        s = Tensor(np.array([[1.0, 2.0, 0.5]]))
        out = aggregate_scores([s])
        expected = np.exp(s.data) / np.exp(s.data).sum()
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_identical_votes_idempotent(self):
        s = Tensor(np.array([[0.3, -1.2, 2.0]]))
        one = aggregate_scores([s]).data
        three = aggregate_scores([s, s, s]).data
        np.testing.assert_allclose(one, three, atol=1e-12)

    def test_hand_case(self):
        a = Tensor(np.array([[0.0, 0.0]]))
        b = Tensor(np.array([[np.log(3.0), 0.0]]))
        np.testing.assert_allclose(aggregate_scores([a, b]).data,
                                   [[0.625, 0.375]], atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        scores = [Tensor(rng.normal(size=(6, 5)) * 10) for _ in range(3)]
        out = aggregate_scores(scores)
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-12)

    def test_logit_average_mode(self):
        rng = np.random.default_rng(1)
        scores = [Tensor(rng.normal(size=(2, 4))) for _ in range(3)]
        out = aggregate_scores(scores, logit_average=True)
        mean = np.mean([s.data for s in scores], axis=0)
        expected = np.exp(mean - mean.max(1, keepdims=True))
        expected /= expected.sum(1, keepdims=True)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate_scores([])


class TestShapes:
    def test_forward_shapes_all_variants(self):
        for variant in ("g", "gl", "gl-sca"):
            model = small_model(variant, randomize=False)
            g, ls, w = small_inputs(model.config, batch=3)
            out = model.forward(g, ls if variant != "g" else None, w)
            expected_votes = 1 if variant == "g" else 1 + model.config.k
            assert len(out.scores) == expected_votes
            assert out.probs.shape == (3, 3)
            for s in out.scores:
                assert s.shape == (3, 3)

    def test_encode_preserves_shape(self):
        model = small_model()
        g, _, _ = small_inputs(model.config)
        out = model.encode_snapshot(g, "gs")
        assert out.shape == g.shape

    def test_token_count_mismatch_rejected(self):
        model = small_model()
        with pytest.raises(ValueError, match="tokens"):
            model.encode_snapshot(np.zeros((2, 5, 8)), "gs")

    def test_wrong_local_count_rejected(self):
        model = small_model("gl")
        g, ls, w = small_inputs(model.config)
        with pytest.raises(ValueError, match="local"):
            model.forward(g, ls[:1], w)

    def test_time_condition_range_checked(self):
        model = small_model()
        tokens = Tensor(np.zeros((1, model.config.tokens_per_snapshot,
                                  model.config.d_bottleneck)))
        with pytest.raises(ValueError, match="outside"):
            model.time_condition(tokens, 0)
        with pytest.raises(ValueError, match="outside"):
            model.time_condition(tokens, 19)


class TestGradients:
    """Central-difference checks for every trainable stage."""

    def test_encoder(self):
        model = small_model()
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, model.config.tokens_per_snapshot, 8))
        check_input_grad(lambda t: model.encode_snapshot(t, "gs"), x, rng)

    def test_encoder_parameters(self):
        model = small_model()
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, model.config.tokens_per_snapshot, 8))
        params = model.parameters()
        names = [n for n in params if n.startswith("enc_gs.block0")]
        check_param_grad(lambda a: model.encode_snapshot(Tensor(a), "gs"),
                         params, x, rng, names=names[:6])

    def test_bottleneck(self):
        model = small_model()
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, model.config.tokens_per_snapshot, 8))
        check_input_grad(lambda t: model.apply_bottleneck(t), x, rng)

    def test_sca(self):
        model = small_model()
        rng = np.random.default_rng(4)
        n = model.config.tokens_per_snapshot
        other = Tensor(rng.normal(size=(2, n, 8)), requires_grad=True)
        check_input_grad(lambda t: model.apply_sca([t, other])[0][0],
                         rng.normal(size=(2, n, 8)), rng)

    def test_sca_parameters(self):
        model = small_model()
        rng = np.random.default_rng(5)
        n = model.config.tokens_per_snapshot
        x = rng.normal(size=(2, n, 8))
        fixed = Tensor(rng.normal(size=(2, n, 8)))
        params = model.parameters()
        names = [n_ for n_ in params if n_.startswith("sca0.attn")]
        check_param_grad(lambda a: model.apply_sca([Tensor(a), fixed])[0][1],
                         params, x, rng, names=names[:4])

    def test_time_condition(self):
        model = small_model()
        rng = np.random.default_rng(6)
        x = rng.normal(size=(2, model.config.tokens_per_snapshot, 8))
        check_input_grad(lambda t: model.time_condition(t, np.array([3, 11])), x, rng)
        params = model.parameters()
        check_param_grad(
            lambda a: model.time_condition(Tensor(a), np.array([3, 11])),
            params, x, rng, names=["time_w1.weight", "time_w2.weight", "time_w2.bias"])

    def test_classify(self):
        model = small_model()
        rng = np.random.default_rng(7)
        x = rng.normal(size=(2, model.config.tokens_per_snapshot, 8))
        check_input_grad(lambda t: model.classify(t), x, rng)
        check_param_grad(lambda a: model.classify(Tensor(a)), model.parameters(),
                         x, rng, names=["head.weight", "head.bias"])

    def test_full_forward(self):
        model = small_model()
        rng = np.random.default_rng(8)
        g, ls, w = small_inputs(model.config)
        fixed = [Tensor(l) for l in ls]
        check_input_grad(lambda t: model.forward(t, fixed, w).probs, g, rng)


class TestStructure:
    def test_variant_g_ignores_locals_bitwise(self):
        model = small_model("g")
        g, ls, w = small_inputs(model.config)
        other = [l * 100.0 + 5.0 for l in ls]
        p1 = model.forward(g, ls, w).probs_array()
        p2 = model.forward(g, other, w).probs_array()
        p3 = model.forward(g, None, w).probs_array()
        np.testing.assert_array_equal(p1, p2)
        np.testing.assert_array_equal(p1, p3)

    def test_gl_sca_equals_gl_at_zero_sca_init(self):
        """Fresh attention blocks are identity: gl-sca == gl at matched weights."""
        sca = small_model("gl-sca", randomize=False, seed=3)
        gl = small_model("gl", randomize=False, seed=99)
        src = sca.parameters()
        for name, p in gl.parameters().items():
            p.data = src[name].data.copy()
        g, ls, w = small_inputs(sca.config)
        np.testing.assert_allclose(sca.forward(g, ls, w).probs_array(),
                                   gl.forward(g, ls, w).probs_array(), atol=1e-12)

    def test_sca_zero_out_projection_is_identity(self):
        model = small_model("gl-sca", randomize=False)
        rng = np.random.default_rng(0)
        n = model.config.tokens_per_snapshot
        tokens = [Tensor(rng.normal(size=(2, n, 8))) for _ in range(2)]
        refined, _ = model.apply_sca(tokens)
        for before, after in zip(tokens, refined):
            np.testing.assert_allclose(after.data, before.data, atol=1e-12)

    def test_local_permutation_leaves_aggregate_unchanged(self):
        model = small_model("gl-sca", k=3)
        g, ls, w = small_inputs(model.config)
        out = model.forward(g, ls, w)
        perm = [ls[2], ls[0], ls[1]]
        out_p = model.forward(g, perm, w)
        np.testing.assert_allclose(out_p.probs_array(), out.probs_array(),
                                   atol=1e-12)
        # per-snapshot local scores permute with the inputs
        np.testing.assert_allclose(out_p.scores[1].data, out.scores[3].data,
                                   atol=1e-12)
        np.testing.assert_allclose(out_p.scores[2].data, out.scores[1].data,
                                   atol=1e-12)

    def test_per_slot_encoders_break_permutation_as_documented(self):
        model = small_model("gl", k=2, share_local_encoders=False)
        g, ls, w = small_inputs(model.config)
        p1 = model.forward(g, ls, w).probs_array()
        p2 = model.forward(g, [ls[1], ls[0]], w).probs_array()
        assert np.abs(p1 - p2).max() > 1e-9

    def test_sca_cross_snapshot_jacobian_nonzero(self):
        """Perturbing one snapshot's input moves the other's output."""
        model = small_model("gl-sca")
        rng = np.random.default_rng(5)
        n = model.config.tokens_per_snapshot
        a = rng.normal(size=(1, n, 8))
        b = rng.normal(size=(1, n, 8))
        out_before = model.apply_sca([Tensor(a), Tensor(b)])[0][0].data.copy()
        b2 = b.copy()
        b2[0, 0, 0] += 1e-3
        out_after = model.apply_sca([Tensor(a), Tensor(b2)])[0][0].data
        assert np.abs(out_after - out_before).max() > 1e-9

    def test_sca_k1_degenerates_to_self_attention(self):
        model = small_model("gl-sca", k=1)
        rng = np.random.default_rng(6)
        n = model.config.tokens_per_snapshot
        x = rng.normal(size=(1, n, 8))
        refined, attn = model.apply_sca([Tensor(x)], capture=True)
        assert refined[0].shape == (1, n, 8)
        assert attn["sca_block0"].shape[-1] == n

    def test_time_conditioning_differentiates_windows(self):
        model = small_model()
        g, ls, w = small_inputs(model.config, batch=1)
        p1 = model.forward(g, ls, np.array([2])).probs_array()
        p2 = model.forward(g, ls, np.array([15])).probs_array()
        assert np.abs(p1 - p2).max() > 1e-9

    def test_zeroed_time_embedding_is_inert(self):
        model = small_model(randomize=False)
        g, ls, w = small_inputs(model.config, batch=2)
        p1 = model.forward(g, ls, np.array([2, 2])).probs_array()
        p2 = model.forward(g, ls, np.array([15, 15])).probs_array()
        np.testing.assert_array_equal(p1, p2)

    def test_probabilities_normalized_across_random_models(self):
        rng = np.random.default_rng(9)
        for i in range(10):
            variant = ("g", "gl", "gl-sca")[i % 3]
            model = small_model(variant, seed=i)
            g, ls, w = small_inputs(model.config, batch=4, seed=i)
            probs = model.forward(g, ls if variant != "g" else None, w).probs_array()
            np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
            assert probs.min() >= 0


class TestAttentionCapture:
    def test_sca_weights_exported(self):
        model = small_model("gl-sca", k=2)
        g, ls, w = small_inputs(model.config)
        out = model.forward(g, ls, w, capture_attention=True)
        n = model.config.tokens_per_snapshot
        weights = out.attention["sca_block0"]
        assert weights.shape == (2, model.config.encoder_heads, 2 * n, 2 * n)
        np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-6)
        ids = out.attention["token_snapshot_ids"]
        assert ids.tolist() == [0] * n + [1] * n

    def test_no_capture_by_default(self):
        model = small_model("gl-sca")
        g, ls, w = small_inputs(model.config)
        assert model.forward(g, ls, w).attention == {}


class TestCheckpoints:
    def test_round_trip_bitwise(self, tmp_path):
        model = small_model("gl-sca", seed=11)
        path = save_checkpoint(model, tmp_path / "ckpt.npz")
        loaded = load_checkpoint(path)
        assert loaded.config == model.config
        g, ls, w = small_inputs(model.config)
        np.testing.assert_array_equal(loaded.forward(g, ls, w).probs_array(),
                                      model.forward(g, ls, w).probs_array())

    def test_rejects_tampered_parameter_shape(self, tmp_path):
        model = small_model()
        path = save_checkpoint(model, tmp_path / "ckpt.npz")
        import numpy as np_
        bundle = dict(np_.load(path))
        bundle["param/head.weight"] = bundle["param/head.weight"][:, :2]
        np_.savez(path, **bundle)
        with pytest.raises(ValueError, match="shape"):
            load_checkpoint(path)

    def test_float32_cast_matches_float64(self):
        model = small_model("gl-sca", seed=13)
        g, ls, w = small_inputs(model.config)
        p64 = model.forward(g, ls, w).probs_array()
        m32 = model.astype(np.float32)
        p32 = m32.forward(g.astype(np.float32),
                          [l.astype(np.float32) for l in ls], w).probs_array()
        assert p32.dtype == np.float32
        np.testing.assert_allclose(p32, p64, atol=5e-4)
