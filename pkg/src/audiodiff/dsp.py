"""Waveform synthesis, same-power mixing and the log-mel frontend."""
from __future__ import annotations

import wave
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

EVENT_TYPES = (
    "tone_low",
    "tone_mid",
    "tone_high",
    "noise_white",
    "noise_pink",
    "chirp_up",
    "chirp_down",
    "pulses",
    "am_tone",
    "click_train",
)

# noise events are scaled to this fraction of their amplitude in RMS
NOISE_RMS_RATIO = 0.25


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("waveform must be a non-empty 1-D array")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class MelConfig:
    sample_rate: int = 16000
    window_ms: float = 40.0
    hop_ms: float = 20.0
    n_mels: int = 64
    fft_size: int = 1024
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.window_ms < self.hop_ms:
            raise ValueError("window_ms must be >= hop_ms")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if self.fft_size < self.win_length:
            raise ValueError(f"fft_size {self.fft_size} shorter than window ({self.win_length} samples)")

    @property
    def win_length(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000))


@dataclass
class EventSpec:
    """One synthetic sound event placed inside a clip.

    ``params`` holds the type-specific frequency/band/rate values; use
    :func:`make_event` to draw them deterministically from ``seed``.
    """

    event_type: str
    amplitude: float
    duration_s: float
    onset_s: float = 0.0
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.event_type not in EVENT_TYPES:
            raise ValueError(f"unknown event type {self.event_type!r}")
        if not 0.0 < self.amplitude <= 1.0:
            raise ValueError("amplitude must be in (0, 1]")
        if self.duration_s <= 0 or self.onset_s < 0:
            raise ValueError("duration must be positive and onset non-negative")


# (low, high) ranges the per-event parameters are drawn from
_PARAM_RANGES = {
    "tone_low": {"freq": (150.0, 300.0)},
    "tone_mid": {"freq": (600.0, 1000.0)},
    "tone_high": {"freq": (2500.0, 4000.0)},
    "noise_white": {},
    "noise_pink": {},
    "chirp_up": {"f0": (300.0, 600.0), "f1": (3000.0, 5000.0)},
    "chirp_down": {"f0": (3000.0, 5000.0), "f1": (300.0, 600.0)},
    "pulses": {"freq": (1200.0, 1800.0), "rate": (4.0, 6.0)},
    "am_tone": {"freq": (400.0, 700.0), "mod": (3.0, 6.0)},
    "click_train": {"rate": (15.0, 25.0)},
}


def make_event(event_type: str, onset_s: float, duration_s: float, seed: int, amplitude: float | None = None) -> EventSpec:
    """Draw amplitude and type parameters for an event from ``seed``."""
    rng = np.random.default_rng([seed, EVENT_TYPES.index(event_type)])
    amp = float(rng.uniform(0.3, 0.8)) if amplitude is None else amplitude
    params = {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in _PARAM_RANGES[event_type].items()}
    return EventSpec(event_type, amp, duration_s, onset_s, seed, params)


def _pink(n: int, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    return np.fft.irfft(spec / np.sqrt(f), n)


def _unit_rms(x: np.ndarray) -> np.ndarray:
    r = np.sqrt(np.mean(x * x))
    return x / r if r > 0 else x


def synth_event(spec: EventSpec, sample_rate: int = 16000, clip_duration_s: float = 4.0) -> Waveform:
    """Render ``spec`` into a clip of silence; deterministic in (spec, seed)."""
    n_clip = int(round(clip_duration_s * sample_rate))
    start = int(round(spec.onset_s * sample_rate))
    n = int(round(spec.duration_s * sample_rate))
    if start + n > n_clip:
        raise ValueError(
            f"event {spec.event_type} [{spec.onset_s}, {spec.onset_s + spec.duration_s}] exceeds clip of {clip_duration_s}s"
        )
    t = np.arange(n) / sample_rate
    p = spec.params
    rng = np.random.default_rng([spec.seed, 7919])
    kind = spec.event_type
    if kind.startswith("tone_"):
        x = np.sin(2 * np.pi * p["freq"] * t)
    elif kind == "noise_white":
        x = NOISE_RMS_RATIO * _unit_rms(rng.standard_normal(n))
    elif kind == "noise_pink":
        x = NOISE_RMS_RATIO * _unit_rms(_pink(n, rng))
    elif kind in ("chirp_up", "chirp_down"):
        rate = (p["f1"] - p["f0"]) / spec.duration_s
        x = np.sin(2 * np.pi * (p["f0"] * t + 0.5 * rate * t * t))
    elif kind == "pulses":
        gate = (t * p["rate"]) % 1.0 < 0.3
        x = np.sin(2 * np.pi * p["freq"] * t) * gate
    elif kind == "am_tone":
        x = np.sin(2 * np.pi * p["freq"] * t) * (0.5 + 0.5 * np.cos(2 * np.pi * p["mod"] * t))
    elif kind == "click_train":
        x = np.zeros(n)
        period = sample_rate / p["rate"]
        decay = np.exp(-np.arange(int(0.004 * sample_rate)) / (0.001 * sample_rate))
        for k in np.arange(0, n, period).astype(int):
            seg = decay[: n - k]
            x[k : k + seg.size] += seg
    else:  # pragma: no cover - guarded by EventSpec
        raise ValueError(kind)
    x = np.clip(x * spec.amplitude, -spec.amplitude, spec.amplitude)
    out = np.zeros(n_clip)
    out[start : start + n] = x
    return Waveform(out, sample_rate)


def rms(w: Waveform | np.ndarray) -> float:
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x)))


def fit_length(w: Waveform, n: int) -> Waveform:
    """Zero-pad or truncate to exactly ``n`` samples."""
    x = w.samples
    if x.size >= n:
        return Waveform(x[:n].copy(), w.sample_rate)
    return Waveform(np.concatenate([x, np.zeros(n - x.size)]), w.sample_rate)


@dataclass
class MixResult:
    mixed: Waveform
    scale: float
    """gain applied to the reference, after any peak renormalisation"""
    renorm: float = 1.0
    """factor both signals were divided by when the peak guard fired"""

    @property
    def input_gain(self) -> float:
        return 1.0 / self.renorm


def mix_same_power(inp: Waveform, ref: Waveform) -> MixResult:
    """Add ``ref`` to ``inp`` after scaling it to the input's full-clip RMS.

    When the sum would clip, mixed signal and bookkept scale are divided by
    the peak together, so ``mixed == (inp + scale_pre * ref) / renorm`` and
    ``mixed - scale * ref == inp / renorm``.
    """
    if inp.sample_rate != ref.sample_rate:
        raise ValueError(f"sample-rate mismatch: {inp.sample_rate} vs {ref.sample_rate}")
    ref = fit_length(ref, len(inp))
    r_ref = rms(ref)
    if r_ref == 0.0:
        raise ValueError("reference is silent; cannot match power")
    scale = rms(inp) / r_ref
    mixed = inp.samples + scale * ref.samples
    peak = float(np.max(np.abs(mixed)))
    renorm = 1.0
    if peak > 1.0:
        renorm = peak
        mixed = mixed / peak
        scale = scale / peak
    return MixResult(Waveform(mixed, inp.sample_rate), scale, renorm)


def peak_guard(x: np.ndarray) -> np.ndarray:
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    return x / peak if peak > 1.0 else x


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def mel_filterbank(sample_rate: int, fft_size: int, n_mels: int) -> np.ndarray:
    """HTK-style triangular filters spanning 0 Hz to Nyquist, shape (n_fft//2+1, n_mels)."""
    freqs = np.linspace(0.0, sample_rate / 2, fft_size // 2 + 1)
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2), n_mels + 2))
    lower, centre, upper = edges[:-2], edges[1:-1], edges[2:]
    up = (freqs[:, None] - lower) / (centre - lower)
    down = (upper - freqs[:, None]) / (upper - centre)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.flags.writeable = False
    return fb


@lru_cache(maxsize=16)
def _hann(n: int) -> np.ndarray:
    w = np.hanning(n + 1)[:-1]  # periodic
    w.flags.writeable = False
    return w


def n_frames(n_samples: int, win_length: int, hop_length: int) -> int:
    if n_samples < win_length:
        raise ValueError(f"clip of {n_samples} samples is shorter than one window ({win_length})")
    return (n_samples - win_length) // hop_length + 1


def mel_spectrogram(w: Waveform | np.ndarray, cfg: MelConfig | None = None) -> np.ndarray:
    """Natural-log mel power spectrogram of shape (frames, n_mels)."""
    cfg = cfg or MelConfig()
    if isinstance(w, Waveform):
        if w.sample_rate != cfg.sample_rate:
            raise ValueError(f"waveform at {w.sample_rate} Hz, config expects {cfg.sample_rate} Hz")
        x = w.samples
    else:
        x = np.asarray(w, dtype=np.float64)
    win, hop = cfg.win_length, cfg.hop_length
    T = n_frames(x.size, win, hop)
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:T]
    spec = np.fft.rfft(frames * _hann(win), n=cfg.fft_size, axis=-1)
    power = spec.real**2 + spec.imag**2
    mel = power @ mel_filterbank(cfg.sample_rate, cfg.fft_size, cfg.n_mels)
    return np.log(np.maximum(mel, cfg.log_floor))


def write_wav(path: str | Path, w: Waveform) -> None:
    """16-bit PCM mono, little-endian."""
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(w.sample_rate))
        fh.writeframes(pcm.tobytes())


def read_wav(path: str | Path) -> Waveform:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit mono PCM")
        sr = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return Waveform(pcm, sr)
