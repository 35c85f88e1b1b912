import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import helpers
from ordiformer.errors import ConfigError, ShapeError
from ordiformer.ordinal import (
    OrdinalHead,
    SoftmaxHead,
    ce_loss,
    class_distribution,
    class_distribution_tensor,
    coral_loss,
    decode,
    decode_batch,
    emphasis_weights,
    encode_levels,
    pos_weights,
    sample_weights,
    stable_sigmoid,
)
from ordiformer.tensor import Tape, Tensor


class TestLevelEncoding:
    def test_known_rows(self):
        levels = encode_levels([0, 2, 4], 5)
        assert np.array_equal(levels, [[0, 0, 0, 0], [1, 1, 0, 0], [1, 1, 1, 1]])

    def test_rejects_out_of_range(self):
        with pytest.raises(ConfigError):
            encode_levels([0, 5], 5)
        with pytest.raises(ConfigError):
            encode_levels([-1], 5)

    def test_roundtrip_through_decode(self):
        for y in range(5):
            levels = encode_levels([y], 5)[0]
            assert decode(levels, 0.5) == y


class TestWeights:
    def test_pos_weights_one_per_grade(self):
        w = pos_weights([0, 1, 2, 3, 4], 5)
        assert np.allclose(w, [0.25, 2.0 / 3.0, 1.5, 4.0], atol=1e-6)

    def test_pos_weights_empty_side(self):
        with pytest.raises(ConfigError):
            pos_weights([0, 0, 0], 5)
        with pytest.raises(ConfigError):
            pos_weights([4, 4], 5)

    def test_emphasis_default_middle_grades(self):
        assert np.array_equal(emphasis_weights(5), [1.0, 1.5, 1.5, 1.0, 1.0])
        assert np.array_equal(emphasis_weights(5, alpha=2.0), [1.0, 2.0, 2.0, 1.0, 1.0])
        # interior restriction for tiny K
        assert np.array_equal(emphasis_weights(3), [1.0, 1.5, 1.0])
        assert np.array_equal(emphasis_weights(2), [1.0, 1.0])

    def test_sample_weights_lookup(self):
        gw = emphasis_weights(5)
        assert np.array_equal(sample_weights([0, 1, 4], gw), [1.0, 1.5, 1.0])


class TestCoralLoss:
    def test_zero_logits_unit_weights_is_log2(self):
        n, km1 = 6, 4
        logits = Tensor(np.zeros((n, km1), dtype=np.float32))
        levels = encode_levels([0, 1, 2, 3, 4, 2], 5)
        loss = coral_loss(logits, levels, np.ones(km1), np.ones(n))
        assert loss.item() == pytest.approx(np.log(2.0), abs=1e-6)

    def test_matches_reference_on_randoms(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            n = int(rng.integers(2, 9))
            z = helpers.snap32(rng.normal(scale=3.0, size=(n, 4)))
            y = rng.integers(0, 5, size=n)
            levels = encode_levels(y, 5)
            pw = helpers.snap32(rng.uniform(0.2, 4.0, size=4))
            sw = helpers.snap32(rng.uniform(0.5, 2.0, size=n))
            got = coral_loss(Tensor(z), levels, pw, sw).item()
            want = helpers.ref_coral_loss(z, levels, pw, sw)
            assert got == pytest.approx(want, abs=1e-6)

    def test_gradient_against_fd(self):
        def case(rng):
            n = 5
            y = rng.integers(0, 5, size=n)
            levels = encode_levels(y, 5).astype(np.float64)
            pw = helpers.snap32(rng.uniform(0.2, 4.0, size=4))
            sw = helpers.snap32(rng.uniform(0.5, 2.0, size=n))
            z = rng.normal(scale=2.0, size=(n, 4))
            return ([z],
                    lambda ts: coral_loss(ts[0], levels, pw, sw),
                    lambda xs: helpers.ref_coral_loss(xs[0], levels, pw, sw))

        assert max(helpers.run_fd_case(case, s) for s in range(5)) <= 1e-3

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            coral_loss(Tensor(np.zeros((3, 4))), encode_levels([0, 1], 5),
                       np.ones(4), np.ones(3))


class TestCeLoss:
    def test_matches_reference(self):
        rng = np.random.default_rng(1)
        z = helpers.snap32(rng.normal(size=(6, 5)))
        y = rng.integers(0, 5, size=6)
        assert ce_loss(Tensor(z), y).item() == pytest.approx(helpers.ref_ce_loss(z, y), abs=1e-6)
        cw = helpers.snap32(rng.uniform(0.5, 2.0, size=5))
        got = ce_loss(Tensor(z), y, cw).item()
        assert got == pytest.approx(helpers.ref_ce_loss(z, y, cw), abs=1e-6)

    def test_uniform_logits(self):
        z = Tensor(np.zeros((3, 5), dtype=np.float32))
        assert ce_loss(z, [0, 2, 4]).item() == pytest.approx(np.log(5.0), abs=1e-6)


class TestDecode:
    def test_known_vector(self):
        probs = np.array([0.9, 0.7, 0.4, 0.1])
        assert decode(probs, 0.5) == 2
        assert decode(probs, 0.05) == 4
        assert decode(probs, 0.95) == 0
        assert decode(probs, 0.7) == 2  # ties count as cleared

    def test_batch_matches_naive(self):
        rng = np.random.default_rng(2)
        probs = rng.random((50, 4))
        for tau in (0.3, 0.5, 0.62):
            got = decode_batch(probs, tau)
            want = [helpers.naive_decode(row, tau) for row in probs]
            assert np.array_equal(got, want)

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_monotone_in_tau(self, seed):
        rng = np.random.default_rng(seed)
        probs = rng.random(4)
        taus = np.sort(rng.uniform(0.05, 0.95, size=3))
        grades = [decode(probs, t) for t in taus]
        assert all(a >= b for a, b in zip(grades, grades[1:]))


class TestClassDistribution:
    def test_spec_of_monotone_row(self):
        dist = class_distribution([0.9, 0.8, 0.4, 0.1])
        assert np.allclose(dist, [0.1, 0.1, 0.4, 0.3, 0.1], atol=1e-9)
        assert dist.sum() == pytest.approx(1.0)

    def test_non_monotone_row_clamps_then_renormalizes(self):
        dist = class_distribution([0.5, 0.7, 0.2, 0.1])
        want = np.array([0.5, 0.0, 0.5, 0.1, 0.1]) / 1.2
        assert np.allclose(dist, want, atol=1e-9)

    def test_tensor_version_matches_numpy(self):
        rng = np.random.default_rng(3)
        z = helpers.snap32(rng.normal(scale=2.0, size=(8, 4)))
        dist = class_distribution_tensor(Tensor(z)).data
        for i, row in enumerate(z):
            want = class_distribution(stable_sigmoid(row.astype(np.float32)))
            assert np.allclose(dist[i], want, atol=1e-5)
        assert np.allclose(dist.sum(axis=1), 1.0, atol=1e-5)


class TestHeads:
    def test_shared_head_probabilities_follow_bias_order(self):
        rng = np.random.default_rng(4)
        head = OrdinalHead(8, 5, "shared", rng)
        head.params["head.b"].array[:] = [1.5, 0.5, -0.5, -1.5]
        feats = Tensor(rng.normal(size=(6, 8)).astype(np.float32))
        z = head.logits(head.bind(None), feats)
        probs = stable_sigmoid(z.data)
        assert np.all(np.diff(probs, axis=1) <= 0.0)

    def test_independent_head_shape(self):
        head = OrdinalHead(8, 5, "independent", np.random.default_rng(5))
        feats = Tensor(np.random.default_rng(6).normal(size=(3, 8)).astype(np.float32))
        assert head.logits(head.bind(None), feats).shape == (3, 4)

    def test_softmax_head_shape(self):
        head = SoftmaxHead(8, 5, np.random.default_rng(7))
        feats = Tensor(np.random.default_rng(8).normal(size=(3, 8)).astype(np.float32))
        assert head.logits(head.bind(None), feats).shape == (3, 5)

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            OrdinalHead(8, 5, "ordered", np.random.default_rng(0))

    def test_head_gradients_flow_to_weights(self):
        rng = np.random.default_rng(9)
        head = OrdinalHead(4, 5, "shared", rng)
        tape = Tape()
        bound = head.bind(tape)
        feats = Tensor(rng.normal(size=(3, 4)).astype(np.float32), tape)
        levels = encode_levels([0, 2, 4], 5)
        loss = coral_loss(head.logits(bound, feats), levels, np.ones(4), np.ones(3))
        tape.backward(loss)
        assert np.any(bound["head.w"].grad != 0.0)
        assert np.any(bound["head.b"].grad != 0.0)
