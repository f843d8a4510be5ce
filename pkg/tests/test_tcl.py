"""Unit tests for window segmentation, the contrastive encoder, and
pattern vectors."""

import numpy as np
import pytest

from lelsim.errors import InvalidArgument
from lelsim.tcl import (
    TrainConfig,
    Window,
    augment,
    contrastive_loss,
    default_stride,
    encode,
    encode_windows,
    init_encoder,
    load_encoder,
    loss_and_gradients,
    pattern_vector,
    save_encoder,
    segment_windows,
    trace_pattern,
    train_encoder,
)
from lelsim.traceio import Trace


class TestSegmentation:
    def test_origins_and_shapes(self):
        x = np.arange(20.0)
        windows = segment_windows(x, 6, stride=3)
        assert [w.origin_index for w in windows] == [0, 3, 6, 9, 12]
        assert all(w.samples.shape == (6,) for w in windows)
        assert np.array_equal(windows[1].samples, x[3:9])

    def test_default_stride_is_half_window(self):
        assert default_stride(5) == 2
        assert default_stride(2) == 1
        windows = segment_windows(np.arange(10.0), 4)
        assert [w.origin_index for w in windows] == [0, 2, 4, 6]

    def test_windows_are_copies(self):
        x = np.arange(10.0)
        windows = segment_windows(x, 4, stride=2)
        x[0] = 99.0
        assert windows[0].samples[0] == 0.0

    def test_rejects_short_trace(self):
        with pytest.raises(InvalidArgument):
            segment_windows(np.arange(3.0), 5)

    def test_rejects_bad_stride(self):
        with pytest.raises(InvalidArgument):
            segment_windows(np.arange(10.0), 4, stride=5)

    def test_accepts_trace_object(self):
        trace = Trace(sample_period=1.0, channels={"p": np.arange(12.0)})
        windows = segment_windows(trace, 4)
        assert len(windows) == 5


class TestEncoder:
    def test_encode_deterministic(self):
        rng = np.random.default_rng(0)
        enc = init_encoder(5, 8, 4, rng, window_length=5)
        w = Window(samples=np.arange(5.0), origin_index=0)
        assert np.array_equal(encode(enc, w), encode(enc, w))

    def test_encode_windows_matches_single(self):
        rng = np.random.default_rng(1)
        enc = init_encoder(5, 8, 4, rng, window_length=5)
        windows = segment_windows(np.sin(np.arange(30.0)), 5, stride=2)
        Z = encode_windows(enc, windows)
        assert Z.shape == (len(windows), 4)
        for i, w in enumerate(windows):
            assert np.allclose(Z[i], encode(enc, w))

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(2)
        enc = init_encoder(5, 8, 4, rng, window_length=5)
        with pytest.raises(InvalidArgument):
            encode(enc, Window(samples=np.arange(7.0), origin_index=0))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        enc = init_encoder(5, 8, 4, rng, window_length=5)
        X1 = rng.standard_normal((6, 5))
        X2 = X1 + 0.05 * rng.standard_normal((6, 5))
        loss, grads = loss_and_gradients(enc, X1, X2, temperature=0.2)
        eps = 1e-6
        for name in ("W1", "b1", "W2", "b2"):
            arr = getattr(enc, name)
            idx = tuple(rng.integers(s) for s in arr.shape)
            orig = arr[idx]
            arr[idx] = orig + eps
            lp, _ = loss_and_gradients(enc, X1, X2, temperature=0.2)
            arr[idx] = orig - eps
            lm, _ = loss_and_gradients(enc, X1, X2, temperature=0.2)
            arr[idx] = orig
            fd = (lp - lm) / (2 * eps)
            assert grads[name][idx] == pytest.approx(fd, rel=1e-4, abs=1e-10)

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        enc = init_encoder(5, 8, 4, rng, window_length=5)
        path = tmp_path / "enc.npz"
        save_encoder(enc, path)
        loaded = load_encoder(path)
        w = Window(samples=np.arange(5.0), origin_index=0)
        assert np.array_equal(encode(enc, w), encode(loaded, w))


class TestTraining:
    def test_training_reduces_loss(self):
        rng = np.random.default_rng(5)
        x = np.sin(0.3 * np.arange(300)) + 0.1 * rng.standard_normal(300)
        windows = segment_windows(x, 5)
        cfg = TrainConfig(d=8, h=16, epochs=30, batch=16)
        enc = train_encoder(windows, cfg, seed=0)
        # compare contrastive loss of trained vs untrained weights on a
        # fixed augmented batch
        views = [augment(w, cfg.scale_range, cfg.noise_frac,
                         np.random.default_rng(100 + i))
                 for i, w in enumerate(windows[:16])]
        X1 = np.stack([v[0].flat() for v in views])
        X2 = np.stack([v[1].flat() for v in views])
        raw = init_encoder(5, 16, 8, np.random.default_rng(0), window_length=5)
        loss_raw, _ = loss_and_gradients(raw, X1, X2, cfg.temperature)
        loss_trained, _ = loss_and_gradients(enc, X1, X2, cfg.temperature)
        assert loss_trained < loss_raw

    def test_training_deterministic_given_seed(self):
        x = np.sin(0.3 * np.arange(100))
        windows = segment_windows(x, 5)
        cfg = TrainConfig(d=4, h=8, epochs=5, batch=8)
        a = train_encoder(windows, cfg, seed=3)
        b = train_encoder(windows, cfg, seed=3)
        assert np.array_equal(a.W1, b.W1)
        assert np.array_equal(a.W2, b.W2)


class TestPatternVector:
    def test_mean_and_population_variance(self):
        Z = np.array([[1.0, 2.0], [3.0, 6.0]])
        pv = pattern_vector(Z)
        assert np.allclose(pv.mean_block, [2.0, 4.0])
        assert np.allclose(pv.var_block, [1.0, 4.0])

    def test_as_array_concatenates(self):
        Z = np.array([[1.0, 2.0], [3.0, 6.0]])
        arr = pattern_vector(Z).as_array()
        assert np.allclose(arr, [2.0, 4.0, 1.0, 4.0])

    def test_single_embedding_has_zero_variance(self):
        pv = pattern_vector(np.array([[1.0, -2.0]]))
        assert np.allclose(pv.var_block, 0.0)

    def test_rejects_empty(self):
        with pytest.raises(InvalidArgument):
            pattern_vector(np.empty((0, 3)))

    def test_trace_pattern_self_consistent(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal(60)
        enc = init_encoder(5, 8, 4, np.random.default_rng(0), window_length=5)
        pv = trace_pattern(enc, x, 5)
        manual = pattern_vector(encode_windows(enc, segment_windows(x, 5)))
        assert np.allclose(pv.as_array(), manual.as_array())


class TestAugment:
    def test_views_preserve_origin(self):
        w = Window(samples=np.arange(5.0), origin_index=7)
        v1, v2 = augment(w, (0.8, 1.2), 0.05, np.random.default_rng(0))
        assert v1.origin_index == 7 and v2.origin_index == 7

    def test_zero_noise_pure_scaling(self):
        w = Window(samples=np.arange(1.0, 6.0), origin_index=0)
        v1, _ = augment(w, (0.5, 2.0), 0.0, np.random.default_rng(1))
        ratio = v1.samples / w.samples
        assert np.allclose(ratio, ratio[0])
        assert 0.5 <= ratio[0] <= 2.0
