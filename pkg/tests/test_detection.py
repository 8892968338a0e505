"""Detection tests: calibration statistics, anomaly scoring, strict
classification, FPR-derived thresholds, and the streaming detector."""

import numpy as np
import pytest

from flowad.data import WindowingConfig, sliding_windows, window_count
from flowad.detection import (
    CalibrationStats,
    DetectorConfig,
    StreamDetector,
    calibrate,
    anomaly_score,
    classify,
    l1_error,
    score_from_l1,
    stream_detect,
    threshold_for_fpr,
)
from flowad.errors import InputError, StreamError


class _StubRuntime:
    """Replays a fixed sequence of L1 errors; enough of the runtime
    surface for calibrate()."""

    def __init__(self, values):
        self._values = list(values)
        self._i = 0

    def l1_error(self, window, eps=None):
        v = self._values[self._i % len(self._values)]
        self._i += 1
        return float(v)


class TestL1Error:
    def test_identical_windows(self):
        w = np.arange(12.0).reshape(4, 3)
        assert l1_error(w, w.copy()) == 0.0

    def test_uniform_half_offset(self):
        w = np.zeros((2, 2))
        assert l1_error(w, w + 0.5) == pytest.approx(2.0)

    def test_single_negative_entry(self):
        w = np.zeros((2, 2))
        wp = w.copy()
        wp[1, 0] = -3.0
        assert l1_error(w, wp) == pytest.approx(3.0)

    def test_shape_mismatch(self):
        with pytest.raises(InputError, match="shape mismatch"):
            l1_error(np.zeros((2, 2)), np.zeros((2, 3)))


class TestCalibrationStats:
    def test_sigma_floor_enforced(self):
        with pytest.raises(InputError, match="sigma"):
            CalibrationStats(mu=1.0, sigma=0.0)

    def test_sigma_at_floor_is_valid(self):
        stats = CalibrationStats(mu=1.0, sigma=1e-8)
        assert stats.sigma == 1e-8

    def test_unknown_eps_mode_rejected(self):
        with pytest.raises(InputError, match="eps_mode"):
            CalibrationStats(mu=0.0, sigma=1.0, eps_mode="maybe")

    def test_dict_round_trip(self):
        stats = CalibrationStats(
            mu=3.5, sigma=1.25, eps_mode="sample", n_windows=10,
            scores_sorted=np.array([-1.0, 0.0, 2.0]),
        )
        clone = CalibrationStats.from_dict(stats.to_dict())
        assert clone.mu == stats.mu and clone.sigma == stats.sigma
        assert clone.eps_mode == "sample" and clone.n_windows == 10
        np.testing.assert_array_equal(clone.scores_sorted, stats.scores_sorted)

    def test_dict_round_trip_without_scores(self):
        clone = CalibrationStats.from_dict(CalibrationStats(mu=0.0, sigma=2.0).to_dict())
        assert clone.scores_sorted is None


class TestCalibrate:
    def test_population_moments_hand_case(self):
        # L1 errors {2, 4, 6}: mu = 4, population sigma = sqrt(8/3).
        stub = _StubRuntime([2.0, 4.0, 6.0])
        windows = [np.zeros((1, 1))] * 3
        stats = calibrate(stub, windows)
        assert stats.mu == pytest.approx(4.0)
        assert stats.sigma == pytest.approx(np.sqrt(8.0 / 3.0), rel=1e-15)
        assert stats.n_windows == 3
        assert stats.eps_mode == "zero"

    def test_retained_scores_are_standardized_and_sorted(self):
        stub = _StubRuntime([2.0, 6.0, 4.0])
        stats = calibrate(stub, [np.zeros((1, 1))] * 3)
        expected = np.sort((np.array([2.0, 6.0, 4.0]) - stats.mu) / stats.sigma)
        np.testing.assert_allclose(stats.scores_sorted, expected, rtol=0, atol=0)

    def test_identical_windows_hit_sigma_floor(self):
        stub = _StubRuntime([5.0, 5.0, 5.0, 5.0])
        stats = calibrate(stub, [np.zeros((1, 1))] * 4)
        assert stats.sigma == 1e-8

    def test_needs_two_windows(self):
        with pytest.raises(InputError, match=">= 2 windows"):
            calibrate(_StubRuntime([1.0]), [np.zeros((1, 1))])

    def test_real_runtime_matches_manual_recomputation(self, trained_small):
        runtime = trained_small["runtime"]
        windowing = trained_small["windowing"]
        windows = []
        for rec in trained_small["train_records"][:6]:
            windows.extend(sliding_windows(rec, windowing))
        stats = calibrate(runtime, windows)
        errors = np.array([runtime.l1_error(w.values) for w in windows])
        assert stats.mu == errors.mean()
        assert stats.sigma == max(errors.std(), 1e-8)


class TestScoringAndClassify:
    def test_score_hand_case(self):
        stats = CalibrationStats(mu=10.0, sigma=4.0)
        assert score_from_l1(4.0, stats) == pytest.approx(-1.5)

    def test_score_at_mean_is_zero(self):
        stats = CalibrationStats(mu=7.0, sigma=2.0)
        assert score_from_l1(7.0, stats) == 0.0

    def test_score_two_sigma_above(self):
        stats = CalibrationStats(mu=7.0, sigma=2.0)
        assert score_from_l1(11.0, stats) == pytest.approx(2.0)

    def test_score_monotone_in_l1(self):
        stats = CalibrationStats(mu=3.0, sigma=0.5)
        scores = [score_from_l1(v, stats) for v in np.linspace(0, 10, 50)]
        assert all(b > a for a, b in zip(scores, scores[1:]))

    def test_anomaly_score_requires_calibration(self, trained_small):
        with pytest.raises(InputError, match="calibration"):
            anomaly_score(trained_small["runtime"], np.zeros((100, 6)), None)

    def test_anomaly_score_matches_pipeline(self, trained_small):
        runtime = trained_small["runtime"]
        calib = trained_small["calib"]
        w = sliding_windows(trained_small["test_records"][0], trained_small["windowing"])[0]
        direct = anomaly_score(runtime, w, calib)
        assert direct == score_from_l1(runtime.l1_error(w.values), calib)

    def test_classify_strict_boundary(self):
        assert classify(2.1, 2.0) is True
        assert classify(2.0, 2.0) is False
        assert classify(-1.0, 0.0) is False


class TestThresholdForFpr:
    def test_quantile_on_uniform_grid(self):
        scores = np.linspace(0.0, 1.0, 101)
        calib = CalibrationStats(mu=0.0, sigma=1.0, scores_sorted=scores)
        assert threshold_for_fpr(calib, 0.05) == pytest.approx(0.95)

    def test_empirical_fpr_bounded(self):
        rng = np.random.default_rng(4)
        scores = np.sort(rng.standard_normal(500))
        calib = CalibrationStats(mu=0.0, sigma=1.0, scores_sorted=scores)
        for target in (0.01, 0.05, 0.2):
            theta = threshold_for_fpr(calib, target)
            observed = float(np.mean(scores > theta))
            assert observed <= target + 1e-12

    @pytest.mark.parametrize("fpr", [0.0, 1.0, -0.1, 1.5])
    def test_target_range_enforced(self, fpr):
        calib = CalibrationStats(mu=0.0, sigma=1.0, scores_sorted=np.arange(5.0))
        with pytest.raises(InputError, match="FPR"):
            threshold_for_fpr(calib, fpr)

    def test_requires_retained_scores(self):
        with pytest.raises(InputError, match="retained"):
            threshold_for_fpr(CalibrationStats(mu=0.0, sigma=1.0), 0.05)


class TestStreamDetector:
    def _detector(self, trained_small, theta=3.0, **kw):
        cfg = DetectorConfig(theta=theta, windowing=trained_small["windowing"], **kw)
        return StreamDetector(trained_small["runtime"], trained_small["calib"], cfg)

    def test_verdict_cadence_and_window_starts(self, trained_small):
        # 220 frames, T_W=100, T_S=40: verdicts as the 100th, 140th,
        # 180th and 220th frames land, with window_start 0/40/80/120.
        det = self._detector(trained_small)
        record = trained_small["test_records"][0]
        emitted = []
        for frame in record.frames:
            v = det.push(frame)
            if v is not None:
                emitted.append((det.frames_seen, v.window_start))
        assert emitted == [(100, 0), (140, 40), (180, 80), (220, 120)]
        expected = window_count(record.n_frames, trained_small["windowing"])
        assert len(emitted) == expected

    def test_short_stream_emits_nothing(self, trained_small):
        det = self._detector(trained_small)
        for frame in trained_small["test_records"][0].frames[:99]:
            assert det.push(frame) is None

    def test_streaming_equals_batch_bitwise(self, trained_small):
        runtime = trained_small["runtime"]
        calib = trained_small["calib"]
        windowing = trained_small["windowing"]
        cfg = DetectorConfig(theta=3.0, windowing=windowing)
        for record in trained_small["test_records"][:4]:
            batch = [
                score_from_l1(runtime.l1_error(w.values), calib)
                for w in sliding_windows(record, windowing)
            ]
            streamed = [v.score for v in stream_detect(record.frames, runtime, calib, cfg)]
            assert streamed == batch  # bitwise, not approx

    def test_verdict_flag_follows_threshold(self, trained_small):
        record = trained_small["test_records"][1]
        cfg = DetectorConfig(theta=0.0, windowing=trained_small["windowing"])
        scores = [
            v.score
            for v in stream_detect(
                record.frames, trained_small["runtime"], trained_small["calib"], cfg
            )
        ]
        theta = float(np.median(scores))
        det = self._detector(trained_small, theta=theta)
        for frame in record.frames:
            v = det.push(frame)
            if v is not None:
                assert v.is_anomaly == (v.score > theta)
                assert v.inference_us >= 0.0

    def test_spiked_stream_scores_above_clean_counterpart(self, trained_small):
        clean = trained_small["test_records"][0]
        assert clean.label == "normal"
        spiked = clean.frames.copy()
        stds = clean.frames.std(axis=0)
        spiked[120:140, 2] += 8.0 * stds[2]
        cfg = DetectorConfig(theta=3.0, windowing=trained_small["windowing"])
        runtime, calib = trained_small["runtime"], trained_small["calib"]
        max_clean = max(v.score for v in stream_detect(clean.frames, runtime, calib, cfg))
        max_spiked = max(v.score for v in stream_detect(spiked, runtime, calib, cfg))
        assert max_spiked > max_clean

    def test_eps_mode_mismatch_rejected(self, trained_small):
        cfg = DetectorConfig(
            theta=1.0, windowing=trained_small["windowing"], eps_mode="sample"
        )
        with pytest.raises(InputError, match="eps_mode"):
            StreamDetector(trained_small["runtime"], trained_small["calib"], cfg)

    def test_missing_calibration_rejected(self, trained_small):
        cfg = DetectorConfig(theta=1.0, windowing=trained_small["windowing"])
        with pytest.raises(InputError, match="calibration"):
            StreamDetector(trained_small["runtime"], None, cfg)

    def test_window_len_model_mismatch_rejected(self, trained_small):
        cfg = DetectorConfig(theta=1.0, windowing=WindowingConfig(80, 40))
        with pytest.raises(InputError, match="window_len"):
            StreamDetector(trained_small["runtime"], trained_small["calib"], cfg)

    def test_bad_frame_shape_is_stream_error(self, trained_small):
        det = self._detector(trained_small)
        det.push(np.zeros(6))
        with pytest.raises(StreamError, match="frame 1"):
            det.push(np.zeros(5))

    def test_sampled_eps_reproducible_by_seed(self, trained_small):
        runtime = trained_small["runtime"]
        windowing = trained_small["windowing"]
        windows = []
        for rec in trained_small["train_records"][:4]:
            windows.extend(sliding_windows(rec, windowing))
        calib = calibrate(runtime, windows, eps_mode="sample", eps_seed=1)
        frames = trained_small["test_records"][0].frames

        def run(seed):
            cfg = DetectorConfig(
                theta=3.0, windowing=windowing, eps_mode="sample", eps_seed=seed
            )
            return [v.score for v in stream_detect(frames, runtime, calib, cfg)]

        assert run(7) == run(7)
        assert run(7) != run(8)

    def test_overrun_counter_with_impossible_budget(self, trained_small):
        det = self._detector(trained_small, stride_period_s=1e-12)
        for frame in trained_small["test_records"][0].frames:
            det.push(frame)
        assert det.overruns >= 1
