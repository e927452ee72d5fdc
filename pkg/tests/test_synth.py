"""Synthetic generator: determinism, schedule, and injected effects."""

import numpy as np
import pytest

from sickfuse import ingest
from sickfuse.ingest import align_streams, parse_session, write_session
from sickfuse.labeling import build_windows
from sickfuse.preprocess import sgbm_disparity
from sickfuse.stats import sickness_ttest
from sickfuse.synth import (SynthProfile, _textured_frames, generate_dataset,
                            generate_session, profile_from_kv, profile_to_kv)


def small_profile(**over):
    base = dict(participants=2, simulations=("BeachCity",), duration_s=420.0,
                seed=7)
    base.update(over)
    return SynthProfile(**base)


class TestDeterminism:
    def test_same_seed_bitwise_identical_files(self, tmp_path):
        profile = small_profile(participants=1)
        a = tmp_path / "a"
        b = tmp_path / "b"
        generate_dataset(profile, a)
        generate_dataset(profile, b)
        for name in ("eye.csv", "head.csv", "fms.csv", "frames.bin", "frames.idx"):
            fa = (a / "P01" / "BeachCity" / name).read_bytes()
            fb = (b / "P01" / "BeachCity" / name).read_bytes()
            assert fa == fb, name

    def test_different_seed_differs(self, tmp_path):
        a = generate_session(small_profile(), 1, "BeachCity")
        b = generate_session(small_profile(seed=8), 1, "BeachCity")
        assert not np.array_equal(a.eye.values, b.eye.values)


class TestRoundTrip:
    def test_noise_free_sessions_have_zero_invalid_samples(self, tmp_path):
        profile = small_profile(participants=1, duration_s=60.0, noise=False)
        record = generate_session(profile, 1, "BeachCity")
        out = tmp_path / "P01" / "BeachCity"
        write_session(record, out)
        parsed = parse_session(out)
        assert parsed.eye.valid.all()
        assert parsed.head.valid.all()
        aligned = align_streams(parsed)
        assert aligned.invalid_counts == {"eye": 0, "head": 0, "frames": 0}

    def test_frames_disabled_pipeline_runs_eye_head(self, tmp_path):
        profile = small_profile(participants=1, duration_s=60.0)
        generate_dataset(profile, tmp_path)
        parsed = parse_session(tmp_path / "P01" / "BeachCity")
        assert not parsed.has_frames
        aligned = align_streams(parsed)
        windows, _ = build_windows(aligned)
        assert len(windows) == 1  # report at 30 s only
        assert windows[0].frames_left is None


class TestTrajectory:
    def test_scores_in_range_and_rising_in_expectation(self):
        profile = small_profile(participants=6,
                                simulations=("BeachCity", "SeaVoyage"))
        firsts, lasts = [], []
        for p in range(1, 7):
            for sim in profile.simulations:
                record = generate_session(profile, p, sim)
                scores = record.reports[:, 1]
                assert np.all((scores >= 0) & (scores <= 10))
                firsts.append(scores[:3].mean())
                lasts.append(scores[-3:].mean())
        assert np.mean(lasts) > np.mean(firsts) + 1.0

    def test_thirteen_reports_for_seven_minutes(self):
        record = generate_session(small_profile(), 1, "BeachCity")
        assert record.reports.shape[0] == 13
        assert np.array_equal(record.reports[:, 0], 30.0 * np.arange(1, 14))


class TestWindowCounts:
    def test_two_participants_one_simulation_gives_26_windows(self, tmp_path):
        profile = small_profile()
        generate_dataset(profile, tmp_path)
        total = 0
        for session_dir in sorted(tmp_path.glob("P*/BeachCity")):
            aligned = align_streams(parse_session(session_dir))
            windows, dropped = build_windows(aligned)
            total += len(windows)
            assert not dropped
        assert total == 26


def windows_for_stats(profile):
    out = []
    for p in range(1, profile.participants + 1):
        for sim in profile.simulations:
            aligned = align_streams(generate_session(profile, p, sim))
            windows, _ = build_windows(aligned)
            out.extend(windows)
    return out


class TestInjectedEffects:
    def test_null_effects_give_insignificant_ttest(self):
        profile = small_profile(participants=27, effect_pupil_mm=0.0,
                                effect_gaze_dispersion=0.0, seed=13)
        results = sickness_ttest(windows_for_stats(profile), "pupil_mean")
        assert results["BeachCity"].p > 0.05

    def test_default_pupil_effect_detected_with_correct_sign(self):
        profile = small_profile(participants=27, seed=13)
        results = sickness_ttest(windows_for_stats(profile), "pupil_mean")
        r = results["BeachCity"]
        assert r.p < 0.05
        assert r.mean_b < r.mean_a  # sick pupils smaller than non-sick

    def test_default_gaze_dispersion_grows_under_sickness(self):
        profile = small_profile(participants=27, seed=13)
        results = sickness_ttest(windows_for_stats(profile), "gaze_dispersion")
        r = results["BeachCity"]
        assert r.p < 0.05
        assert r.mean_b > r.mean_a  # dispersion larger when sick


class TestFrames:
    def test_textured_frames_carry_injected_disparity(self):
        profile = small_profile(frames="textured", frame_disparity_px=8)
        rng = np.random.default_rng(0)
        t = np.arange(41) / 20.0
        latent = np.linspace(0, 4, 41)
        frames = _textured_frames(profile, rng, t, latent)
        assert frames.left.shape == (41, 256, 256, 3)
        result = sgbm_disparity(frames.left[5], frames.right[5], max_disparity=32)
        interior = result.disparity[32:-32, 32:-32]
        interior_valid = result.valid[32:-32, 32:-32]
        assert interior_valid.mean() > 0.5
        med = np.median(interior[interior_valid])
        assert abs(med - 8) <= 1.0

    def test_frame_file_format_round_trip(self, tmp_path):
        profile = small_profile(frames="textured")
        rng = np.random.default_rng(1)
        t = np.arange(5) / 20.0
        frames = _textured_frames(profile, rng, t, np.zeros(5))
        n = len(t)
        record = ingest.SessionRecord(
            "P01", "BeachCity",
            ingest.Stream(t.copy(), np.tile([3.0, 3.0, 0, 0, 1, 0, 0, 1, 900.0],
                                            (n, 1)), np.ones(n, bool)),
            ingest.Stream(t.copy(), np.tile([0.0, 0, 0, 1.0], (n, 1)),
                          np.ones(n, bool)),
            frames, np.zeros((0, 2)))
        out = tmp_path / "P01" / "BeachCity"
        write_session(record, out)
        parsed = parse_session(out)
        assert parsed.has_frames
        assert np.array_equal(parsed.frames.left, frames.left)
        assert np.array_equal(parsed.frames.right, frames.right)
        assert np.allclose(parsed.frames.t, t)


class TestProfileKv:
    def test_round_trip(self):
        profile = small_profile(effect_pupil_mm=0.3, frames="textured", noise=False)
        again = profile_from_kv(profile_to_kv(profile))
        assert again == profile

    def test_unknown_key_rejected(self):
        from sickfuse.errors import ConfigError
        with pytest.raises(ConfigError):
            profile_from_kv({"nope": "1"})
