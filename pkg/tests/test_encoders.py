import numpy as np
import pytest

import helpers
from ordiformer.encoders import (
    MlpEncoder,
    MlpEncoderConfig,
    PatchEncoder,
    PatchEncoderConfig,
    attention_rollout,
    patchify,
    readout_saliency,
)
from ordiformer.errors import ConfigError, DomainError, ShapeError
from ordiformer.tensor import Tape, Tensor


def tiny_patch_encoder(seed=0, patch=3, hw=(6, 6), d=8, heads=2, layers=1):
    cfg = PatchEncoderConfig(patch_size=patch, embed_dim=d, num_heads=heads,
                             num_layers=layers, mlp_ratio=2.0)
    return PatchEncoder(hw, cfg, np.random.default_rng(seed))


class TestPatchify:
    def test_raster_layout(self):
        img = np.arange(16, dtype=np.float32).reshape(4, 4) / 16.0
        out = patchify(img, 2)
        assert out.shape == (4, 4)
        assert np.array_equal(out[0] * 16, [0, 1, 4, 5])
        assert np.array_equal(out[1] * 16, [2, 3, 6, 7])
        assert np.array_equal(out[2] * 16, [8, 9, 12, 13])

    def test_rejects_non_tiling(self):
        with pytest.raises(ShapeError):
            patchify(np.zeros((5, 4), dtype=np.float32), 2)
        with pytest.raises(ShapeError):
            patchify(np.zeros((4, 4, 1), dtype=np.float32), 2)


class TestPatchEncoder:
    def test_config_validation(self):
        with pytest.raises(ConfigError):
            PatchEncoderConfig(embed_dim=10, num_heads=3)
        with pytest.raises(ConfigError):
            PatchEncoder((10, 10), PatchEncoderConfig(patch_size=4), np.random.default_rng(0))

    def test_seeded_init_reproducible(self):
        a = tiny_patch_encoder(seed=5)
        b = tiny_patch_encoder(seed=5)
        for name in a.params:
            assert np.array_equal(a.params[name].array, b.params[name].array)

    def test_embedding_deterministic(self):
        enc = tiny_patch_encoder()
        img = np.random.default_rng(1).random((6, 6)).astype(np.float32)
        e1, _ = enc.embed(enc.bind(None), img, None)
        e2, _ = enc.embed(enc.bind(None), img, None)
        assert np.array_equal(e1.data, e2.data)
        assert e1.shape == (1, enc.embed_dim)

    def test_attention_maps_are_row_stochastic(self):
        enc = tiny_patch_encoder(layers=2)
        img = np.random.default_rng(2).random((6, 6)).astype(np.float32)
        _, maps = enc.embed(enc.bind(None), img, None, want_attention=True)
        assert len(maps) == 2
        for a in maps:
            assert a.shape == (enc.num_tokens, enc.num_tokens)
            assert np.all(a >= 0.0)
            assert np.allclose(a.sum(axis=1), 1.0, atol=1e-5)

    def test_embedding_sensitive_to_content(self):
        enc = tiny_patch_encoder()
        rng = np.random.default_rng(3)
        img = rng.random((6, 6)).astype(np.float32)
        other = img.copy()
        other[0, 0] += 0.5
        bound = enc.bind(None)
        e1, _ = enc.embed(bound, img, None)
        e2, _ = enc.embed(bound, other, None)
        assert not np.allclose(e1.data, e2.data)

    def test_mirror_image_permutes_tokens_only(self):
        # patch size 1 turns a horizontal flip into a pure token permutation;
        # with positions zeroed the readout embedding must be flip-invariant
        enc = tiny_patch_encoder(patch=1, hw=(4, 4), d=8, heads=2, layers=1)
        enc.params["pos"].array[:] = 0.0
        img = np.random.default_rng(4).random((4, 4)).astype(np.float32)
        bound = enc.bind(None)
        e1, _ = enc.embed(bound, img, None)
        e2, _ = enc.embed(bound, np.ascontiguousarray(np.fliplr(img)), None)
        assert np.allclose(e1.data, e2.data, atol=1e-5)

    def test_batch_matches_single(self):
        enc = tiny_patch_encoder()
        rng = np.random.default_rng(5)
        imgs = [rng.random((6, 6)).astype(np.float32) for _ in range(3)]
        bound = enc.bind(None)
        batch = enc.embed_batch(bound, imgs, None)
        assert batch.shape == (3, enc.embed_dim)
        for i, img in enumerate(imgs):
            single, _ = enc.embed(bound, img, None)
            assert np.allclose(batch.data[i], single.data[0], atol=1e-6)

    def test_gradients_against_fd(self):
        def case(rng):
            enc = tiny_patch_encoder(seed=int(rng.integers(1 << 31)))
            img = helpers.snap32(rng.random((6, 6)))
            names = sorted(enc.params)
            probe = helpers.snap32(rng.normal(size=(1, enc.embed_dim)))
            xs = [enc.params[n].array.astype(np.float64) for n in names]

            def fwd32(ts):
                bound = dict(zip(names, ts))
                emb, _ = enc.embed(bound, img.astype(np.float32), ts[0].tape)
                return (emb * Tensor(probe)).reduce_sum()

            def fwd64(arrs):
                params = {n: a for n, a in zip(names, arrs)}
                emb = helpers.ref_patch_encoder(params, img, 3, 2, 1)
                return float((emb * probe).sum())

            return xs, fwd32, fwd64

        # standardized inputs raise the activation scale, so the default FD
        # step is truncation-limited here; a finer step keeps the oracle sharp
        errs = [helpers.run_fd_case(case, seed, step=2e-4) for seed in range(2)]
        assert max(errs) <= 1e-3


class TestMlpEncoder:
    def test_zero_single_layer_gives_zero_embedding(self):
        enc = MlpEncoder((4, 4), MlpEncoderConfig(widths=(6,)), np.random.default_rng(0))
        enc.params["dense0.w"].array[:] = 0.0
        out = enc.embed_batch(enc.bind(None), [np.ones((4, 4), dtype=np.float32)], None)
        assert np.array_equal(out.data, np.zeros((1, 6), dtype=np.float32))

    def test_batch_matches_single(self):
        enc = MlpEncoder((4, 4), MlpEncoderConfig(widths=(8, 5)), np.random.default_rng(1))
        rng = np.random.default_rng(2)
        imgs = [rng.random((4, 4)).astype(np.float32) for _ in range(3)]
        bound = enc.bind(None)
        batch = enc.embed_batch(bound, imgs, None)
        for i, img in enumerate(imgs):
            single, _ = enc.embed(bound, img, None)
            assert np.allclose(batch.data[i], single.data[0], atol=1e-6)

    def test_shape_validation(self):
        enc = MlpEncoder((4, 4), MlpEncoderConfig(widths=(6,)), np.random.default_rng(0))
        with pytest.raises(ShapeError):
            enc.embed_batch(enc.bind(None), [np.zeros((5, 4), dtype=np.float32)], None)


class TestRollout:
    def test_identity_attention_rolls_to_identity(self):
        eye = np.eye(5)
        out = attention_rollout([eye, eye, eye])
        assert np.allclose(out, eye, atol=1e-12)

    def test_rows_stay_stochastic(self):
        rng = np.random.default_rng(0)
        maps = []
        for _ in range(3):
            a = rng.random((6, 6))
            maps.append(a / a.sum(axis=1, keepdims=True))
        out = attention_rollout(maps)
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(out >= 0.0)

    def test_composition_order_last_layer_leftmost(self):
        rng = np.random.default_rng(1)
        a1 = rng.random((4, 4))
        a1 /= a1.sum(axis=1, keepdims=True)
        a2 = rng.random((4, 4))
        a2 /= a2.sum(axis=1, keepdims=True)

        def mix(a):
            m = 0.5 * a + 0.5 * np.eye(4)
            return m / m.sum(axis=1, keepdims=True)

        expected = mix(a2) @ mix(a1)
        assert np.allclose(attention_rollout([a1, a2]), expected, atol=1e-12)

    def test_rejects_bad_input(self):
        with pytest.raises(DomainError):
            attention_rollout([np.full((3, 3), 0.5)])
        with pytest.raises(ShapeError):
            attention_rollout([np.eye(3), np.eye(4)])
        with pytest.raises(ShapeError):
            attention_rollout([])

    def test_readout_saliency_extraction(self):
        rollout = np.zeros((5, 5))
        rollout[0] = [0.2, 0.1, 0.2, 0.3, 0.2]
        sal = readout_saliency(rollout, (2, 2))
        assert np.allclose(sal, [[0.1, 0.2], [0.3, 0.2]])
        with pytest.raises(ShapeError):
            readout_saliency(rollout, (2, 3))
