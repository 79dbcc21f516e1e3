import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audiodiff.dsp import (
    EVENT_TYPES,
    EventSpec,
    MelConfig,
    Waveform,
    make_event,
    mel_spectrogram,
    mix_same_power,
    n_frames,
    read_wav,
    rms,
    synth_event,
    write_wav,
)

SR = 16000


def test_tone_starts_at_zero_phase_with_given_peak():
    w = synth_event(EventSpec("tone_mid", 0.5, 1.0, 0.0, params={"freq": 440.0}), SR, 1.0)
    assert w.samples[0] == 0.0
    assert np.max(np.abs(w.samples)) == pytest.approx(0.5, abs=1e-6)


@pytest.mark.parametrize("kind", EVENT_TYPES)
def test_synthesis_is_deterministic(kind):
    spec = make_event(kind, 0.5, 1.2, seed=42)
    a = synth_event(spec, SR, 2.0)
    b = synth_event(make_event(kind, 0.5, 1.2, seed=42), SR, 2.0)
    assert a.samples.tobytes() == b.samples.tobytes()


@pytest.mark.parametrize("kind", EVENT_TYPES)
def test_silence_outside_event(kind):
    w = synth_event(make_event(kind, 0.5, 1.0, seed=3), SR, 2.0).samples
    assert not w[: SR // 2].any() and not w[3 * SR // 2 :].any()
    assert np.max(np.abs(w)) <= 1.0


@pytest.mark.parametrize("kind", ["noise_white", "noise_pink"])
def test_noise_rms_calibrated_across_seeds(kind):
    waves = [synth_event(EventSpec(kind, 0.6, 1.0, 0.0, seed=s), SR, 1.0) for s in range(10)]
    levels = np.array([rms(w) for w in waves])
    assert np.all(np.abs(levels / levels.mean() - 1) < 0.05)
    assert not np.array_equal(waves[0].samples, waves[1].samples)


def test_event_exceeding_clip():
    with pytest.raises(ValueError, match="exceeds clip"):
        synth_event(EventSpec("tone_low", 0.5, 1.5, 3.0, params={"freq": 200.0}), SR, 4.0)


def test_invalid_amplitude():
    with pytest.raises(ValueError):
        EventSpec("tone_low", 1.5, 1.0)


class TestRms:
    def test_constant(self):
        assert rms(Waveform(np.full(100, 0.5))) == pytest.approx(0.5)

    def test_sine(self):
        t = np.arange(SR) / SR
        assert rms(Waveform(0.8 * np.sin(2 * np.pi * 5 * t))) == pytest.approx(0.8 / math.sqrt(2), rel=1e-9)

    def test_zero(self):
        assert rms(Waveform(np.zeros(10))) == 0.0


class TestMix:
    def test_equal_power_scale_is_one(self, rng):
        x = rng.standard_normal(1000) * 0.1
        r = rng.permutation(x)
        assert mix_same_power(Waveform(x), Waveform(r)).scale == pytest.approx(1.0)

    def test_double_reference(self, rng):
        x = rng.uniform(-0.2, 0.2, 1000)
        res = mix_same_power(Waveform(x), Waveform(2 * x))
        assert res.scale == pytest.approx(0.5)
        assert res.renorm == 1.0
        np.testing.assert_allclose(res.mixed.samples, 2 * x, atol=1e-15)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_power_matched_and_invertible(self, seed):
        rng = np.random.default_rng(seed)
        x = Waveform(rng.standard_normal(800) * rng.uniform(0.01, 0.3))
        r = Waveform(rng.standard_normal(int(rng.integers(400, 1200))) * rng.uniform(0.01, 0.3))
        res = mix_same_power(x, r)
        r_fit = np.zeros(800)
        m = min(800, len(r))
        r_fit[:m] = r.samples[:m]
        pre_scale = res.scale * res.renorm
        assert rms(pre_scale * r_fit) == pytest.approx(rms(x), rel=1e-6)
        if res.renorm == 1.0:
            # exact up to one rounding of the addition
            np.testing.assert_allclose(res.mixed.samples - res.scale * r_fit, x.samples, rtol=0, atol=2 * np.finfo(float).eps)
        else:
            assert np.max(np.abs(res.mixed.samples)) == pytest.approx(1.0)
            np.testing.assert_allclose(res.mixed.samples - res.scale * r_fit, x.samples / res.renorm, atol=1e-12)

    def test_peak_guard_reports_renorm(self):
        x = Waveform(np.full(100, 0.9))
        res = mix_same_power(x, Waveform(np.full(100, 0.3)))
        assert res.renorm == pytest.approx(1.8)
        assert np.max(np.abs(res.mixed.samples)) == pytest.approx(1.0)
        assert res.scale == pytest.approx(3.0 / 1.8)

    def test_errors(self):
        with pytest.raises(ValueError, match="silent"):
            mix_same_power(Waveform(np.ones(10) * 0.1), Waveform(np.zeros(10)))
        with pytest.raises(ValueError, match="sample-rate"):
            mix_same_power(Waveform(np.ones(10) * 0.1, 16000), Waveform(np.ones(10) * 0.1, 8000))


class TestMel:
    def test_frame_count_one_second(self):
        assert mel_spectrogram(Waveform(np.zeros(SR))).shape == (49, 64)

    def test_silence_hits_floor(self):
        m = mel_spectrogram(Waveform(np.zeros(SR)))
        np.testing.assert_array_equal(m, np.full_like(m, math.log(1e-10)))

    def test_doubling_amplitude_adds_ln4(self, rng):
        x = rng.standard_normal(SR) * 0.1
        a = mel_spectrogram(Waveform(x))
        b = mel_spectrogram(Waveform(2 * x))
        # entries at least 20 dB above the floor
        live = a > math.log(1e-10) + math.log(100)
        assert live.mean() > 0.9
        np.testing.assert_allclose((b - a)[live], math.log(4), atol=1e-9)

    def test_deterministic(self, rng):
        w = Waveform(rng.standard_normal(8000) * 0.1)
        assert mel_spectrogram(w).tobytes() == mel_spectrogram(w).tobytes()

    def test_too_short(self):
        with pytest.raises(ValueError, match="shorter than one window"):
            mel_spectrogram(Waveform(np.zeros(600)))

    def test_frame_formula_on_random_triples(self, rng):
        for _ in range(100):
            win = int(rng.integers(16, 512))
            hop = int(rng.integers(1, win + 1))
            n = int(rng.integers(win, 5000))
            # brute force: count window starts that fit
            expected = sum(1 for s in range(0, n, hop) if s + win <= n)
            assert n_frames(n, win, hop) == expected
            cfg = MelConfig(window_ms=win / 16, hop_ms=hop / 16, n_mels=8, fft_size=512)
            assert mel_spectrogram(np.zeros(n), cfg).shape[0] == expected

    def test_pure_tone_peaks_in_matching_band(self):
        w = synth_event(EventSpec("tone_mid", 0.5, 1.0, params={"freq": 1000.0}), SR, 1.0)
        m = mel_spectrogram(w)
        centre = 2595 * np.log10(1 + 1000 / 700)
        edges = np.linspace(0, 2595 * np.log10(1 + 8000 / 700), 66)
        assert abs(np.argmax(m[10]) - (np.searchsorted(edges, centre) - 1)) <= 1

    def test_config_validation(self):
        with pytest.raises(ValueError):
            MelConfig(window_ms=10, hop_ms=20)
        with pytest.raises(ValueError, match="fft_size"):
            MelConfig(fft_size=256)


def test_wav_round_trip(tmp_path, rng):
    x = np.clip(rng.standard_normal(4000) * 0.3, -1, 1)
    write_wav(tmp_path / "a.wav", Waveform(x))
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == SR
    assert np.max(np.abs(back.samples - x)) <= 0.5 / 32767 + 1e-12
    raw = (tmp_path / "a.wav").read_bytes()
    assert raw[:4] == b"RIFF" and raw[8:12] == b"WAVE"
