"""Procedural scene corpus with compositional captions, plus a reference bank.

Scenes stand in for a captioned scene dataset; the bank holds single-event
clips used as references when mixing.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import EVENT_TYPES, EventSpec, Waveform, make_event, peak_guard, read_wav, synth_event, write_wav

GRAMMAR_VERSION = 1
CONNECTIVE = "while"
MIXGEN_CONNECTIVE = "and"

# event type -> (noun phrase, verb phrase)
LEXICON: dict[str, tuple[str, str]] = {
    "tone_low": ("a low tone", "hums"),
    "tone_mid": ("a steady tone", "rings"),
    "tone_high": ("a high tone", "beeps"),
    "noise_white": ("white noise", "hisses"),
    "noise_pink": ("pink noise", "rumbles"),
    "chirp_up": ("a rising sweep", "whistles"),
    "chirp_down": ("a falling sweep", "whines"),
    "pulses": ("short pulses", "repeat"),
    "am_tone": ("a wobbling tone", "throbs"),
    "click_train": ("rapid clicks", "rattle"),
}
assert tuple(LEXICON) == EVENT_TYPES


def lexicon_words() -> list[str]:
    """Every word the grammar can emit, in first-appearance order."""
    words: list[str] = []
    for np_, vp in LEXICON.values():
        for w in f"{np_} {vp}".split():
            if w not in words:
                words.append(w)
    words += [CONNECTIVE, MIXGEN_CONNECTIVE]
    return words


@dataclass
class Scene:
    id: str
    events: list[EventSpec]
    duration_s: float = 4.0
    seed: int = 0
    split: str = "train"

    @property
    def types(self) -> set[str]:
        return {e.event_type for e in self.events}

    def record(self, wav_path: str | None = None) -> dict:
        return {
            "id": self.id,
            "split": self.split,
            "wav_path": wav_path,
            "caption": caption_of(self),
            "events": [
                {"type": e.event_type, "onset_s": e.onset_s, "duration_s": e.duration_s, "seed": e.seed}
                for e in self.events
            ],
        }

    @classmethod
    def from_record(cls, rec: dict, duration_s: float) -> "Scene":
        events = [make_event(e["type"], e["onset_s"], e["duration_s"], e["seed"]) for e in rec["events"]]
        return cls(rec["id"], events, duration_s, 0, rec["split"])


def event_caption(event_type: str) -> str:
    np_, vp = LEXICON[event_type]
    return f"{np_} {vp}"


def caption_of(scene: Scene) -> str:
    """Clauses ordered by onset (ties by type order), joined with 'while'."""
    ordered = sorted(scene.events, key=lambda e: (e.onset_s, EVENT_TYPES.index(e.event_type)))
    return f" {CONNECTIVE} ".join(event_caption(e.event_type) for e in ordered)


def render(scene: Scene, sample_rate: int = 16000) -> Waveform:
    total = np.zeros(int(round(scene.duration_s * sample_rate)))
    for e in scene.events:
        total += synth_event(e, sample_rate, scene.duration_s).samples
    return Waveform(peak_guard(total), sample_rate)


@dataclass
class SceneConfig:
    n_train: int = 2000
    n_valid: int = 200
    n_test: int = 200
    clip_duration_s: float = 4.0
    min_events: int = 1
    max_events: int = 3
    min_event_s: float = 1.0
    max_event_s: float = 2.5
    bank_per_type: int = 8
    event_types: tuple = EVENT_TYPES

    def validate(self) -> None:
        if min(self.n_train, self.n_valid, self.n_test) < 1:
            raise ValueError("every split needs at least one scene")
        types = tuple(self.event_types)
        if not types:
            raise ValueError("no event types enabled")
        unknown = set(types) - set(EVENT_TYPES)
        if unknown:
            raise ValueError(f"unknown event types: {sorted(unknown)}")
        if not 1 <= self.min_events <= self.max_events:
            raise ValueError("need 1 <= min_events <= max_events")
        if self.max_events > len(types):
            raise ValueError(f"max_events={self.max_events} exceeds the {len(types)} enabled types")
        if not 0 < self.min_event_s <= self.max_event_s <= self.clip_duration_s:
            raise ValueError("event durations must fit inside the clip")
        if self.bank_per_type < 1:
            raise ValueError("bank_per_type must be >= 1")


@dataclass
class CorpusManifest:
    train: list[Scene]
    valid: list[Scene]
    test: list[Scene]
    bank: list[Scene]
    seed: int
    grammar_version: int = GRAMMAR_VERSION
    clip_duration_s: float = 4.0
    sample_rate: int = 16000
    root: Path | None = None
    wav_paths: dict = field(default_factory=dict)

    def split(self, name: str) -> list[Scene]:
        return getattr(self, name)

    def all_scenes(self) -> list[Scene]:
        return self.train + self.valid + self.test + self.bank

    def records(self) -> list[dict]:
        return [s.record(self.wav_paths.get(s.id)) for s in self.all_scenes()]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())

    def digest(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()

    def meta(self) -> dict:
        return {
            "seed": self.seed,
            "grammar_version": self.grammar_version,
            "clip_duration_s": self.clip_duration_s,
            "sample_rate": self.sample_rate,
            "counts": {k: len(self.split(k)) for k in ("train", "valid", "test", "bank")},
        }

    def waveform(self, scene: Scene) -> Waveform:
        """Load from disk when the corpus was written, otherwise synthesise."""
        rel = self.wav_paths.get(scene.id)
        if rel is not None and self.root is not None:
            return read_wav(self.root / rel)
        return render(scene, self.sample_rate)


def _centis(rng: np.random.Generator, lo_s: float, hi_s: float) -> int:
    return int(rng.integers(int(round(lo_s * 100)), int(round(hi_s * 100)) + 1))


def _random_event(rng: np.random.Generator, event_type: str, cfg: SceneConfig) -> EventSpec:
    clip = int(round(cfg.clip_duration_s * 100))
    dur = _centis(rng, cfg.min_event_s, cfg.max_event_s)
    onset = int(rng.integers(0, clip - dur + 1))
    return make_event(event_type, onset / 100, dur / 100, int(rng.integers(0, 2**31 - 1)))


def generate_corpus(
    cfg: SceneConfig, seed: int, out_dir: str | Path | None = None, sample_rate: int = 16000
) -> CorpusManifest:
    """Sample scenes and bank entries; with ``out_dir`` also write WAVs and the manifest."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    types = list(cfg.event_types)
    scenes: dict[str, list[Scene]] = {"train": [], "valid": [], "test": []}
    idx = 0
    for split, count in (("train", cfg.n_train), ("valid", cfg.n_valid), ("test", cfg.n_test)):
        for _ in range(count):
            k = int(rng.integers(cfg.min_events, cfg.max_events + 1))
            chosen = rng.choice(len(types), size=k, replace=False)
            events = [_random_event(rng, types[i], cfg) for i in chosen]
            scenes[split].append(Scene(f"s{idx:05d}", events, cfg.clip_duration_s, seed, split))
            idx += 1
    bank = []
    for t in types:
        for j in range(cfg.bank_per_type):
            bank.append(Scene(f"bank_{t}_{j:02d}", [_random_event(rng, t, cfg)], cfg.clip_duration_s, seed, "bank"))
    manifest = CorpusManifest(
        scenes["train"], scenes["valid"], scenes["test"], bank, seed, GRAMMAR_VERSION, cfg.clip_duration_s, sample_rate
    )
    if out_dir is not None:
        write_corpus(manifest, out_dir)
    return manifest


def write_corpus(manifest: CorpusManifest, out_dir: str | Path) -> str:
    """Write ``wavs/``, ``manifest.jsonl`` and ``manifest.meta.json``; returns the digest."""
    root = Path(out_dir)
    (root / "wavs").mkdir(parents=True, exist_ok=True)
    for scene in manifest.all_scenes():
        rel = f"wavs/{scene.id}.wav"
        write_wav(root / rel, render(scene, manifest.sample_rate))
        manifest.wav_paths[scene.id] = rel
    manifest.root = root
    (root / "manifest.jsonl").write_text(manifest.to_jsonl())
    (root / "manifest.meta.json").write_text(json.dumps(manifest.meta(), sort_keys=True, indent=1) + "\n")
    return manifest.digest()


def load_corpus(root: str | Path) -> CorpusManifest:
    root = Path(root)
    meta = json.loads((root / "manifest.meta.json").read_text())
    splits: dict[str, list[Scene]] = {"train": [], "valid": [], "test": [], "bank": []}
    wav_paths = {}
    with open(root / "manifest.jsonl") as fh:
        for line in fh:
            rec = json.loads(line)
            scene = Scene.from_record(rec, meta["clip_duration_s"])
            scene.seed = meta["seed"]
            splits[rec["split"]].append(scene)
            if rec.get("wav_path"):
                wav_paths[rec["id"]] = rec["wav_path"]
    return CorpusManifest(
        splits["train"],
        splits["valid"],
        splits["test"],
        splits["bank"],
        meta["seed"],
        meta["grammar_version"],
        meta["clip_duration_s"],
        meta["sample_rate"],
        root,
        wav_paths,
    )


def sample_reference(bank: list[Scene], scene: Scene, seed) -> Scene:
    """Uniformly pick a bank entry whose event type is absent from ``scene``."""
    present = scene.types
    admissible = [b for b in bank if b.events[0].event_type not in present]
    if not admissible:
        raise ValueError(f"no reference type outside {sorted(present)} in the bank")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return admissible[int(rng.integers(len(admissible)))]
