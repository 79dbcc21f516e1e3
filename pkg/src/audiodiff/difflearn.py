"""Training regimes: baseline, MixGen-style caption concatenation, and difference learning.

In difference mode each scene ``x`` with caption ``y`` is mixed with a
reference event ``r`` at equal power; the decoder sees
``enc(x + r) - enc(r)`` and is still supervised with ``y``. A fraction of
examples uses the zero reference instead, which reduces to plain captioning.
"""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .dsp import MelConfig, Waveform, mel_spectrogram, mix_same_power
from .gradcore import AdamState, Tape, Tensor, adam_step, backward, clip_grad_norm, constant, ops
from .model import Captioner, Vocabulary, diff
from .scenegen import MIXGEN_CONNECTIVE, CorpusManifest, Scene, caption_of, sample_reference

log = logging.getLogger(__name__)

MODES = ("baseline", "mixgen", "difference")


class _ZeroReference:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "ZERO_REFERENCE"

    def __reduce__(self):
        return (_ZeroReference, ())


ZERO_REFERENCE = _ZeroReference()


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    mode: str = "difference"
    zero_ref_ratio: float = 0.5
    L_max: int = 24
    grad_clip: float = 1.0

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.zero_ref_ratio <= 1.0:
            raise ValueError("zero_ref_ratio must lie in [0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")


@dataclass
class TrainingExample:
    mel_input: np.ndarray
    mel_ref: object  # np.ndarray or ZERO_REFERENCE
    target: str
    scene_id: str
    ref_id: str | None = None
    scale: float | None = None
    renorm: float = 1.0


class FeatureStore:
    """Waveform access and plain-mel cache over a corpus."""

    def __init__(self, corpus: CorpusManifest, mel_cfg: MelConfig):
        self.corpus = corpus
        self.mel_cfg = mel_cfg
        self._mel: dict[str, np.ndarray] = {}
        self._bank_wave: dict[str, Waveform] = {}

    def waveform(self, scene: Scene) -> Waveform:
        if scene.split == "bank":
            w = self._bank_wave.get(scene.id)
            if w is None:
                w = self._bank_wave[scene.id] = self.corpus.waveform(scene)
            return w
        return self.corpus.waveform(scene)

    def mel(self, scene: Scene) -> np.ndarray:
        m = self._mel.get(scene.id)
        if m is None:
            m = self._mel[scene.id] = mel_spectrogram(self.waveform(scene), self.mel_cfg).astype(np.float32)
        return m

    def mel_of(self, w: Waveform) -> np.ndarray:
        return mel_spectrogram(w, self.mel_cfg).astype(np.float32)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def make_difference_batch(
    scenes: list[Scene], bank: list[Scene], seed, store: FeatureStore, zero_ref_ratio: float = 0.5
) -> list[TrainingExample]:
    """Mixed-plus-reference examples whose target stays the unmixed scene caption."""
    rng = _rng(seed)
    out = []
    for scene in scenes:
        y = caption_of(scene)
        ref = sample_reference(bank, scene, rng)
        if rng.random() < zero_ref_ratio:
            out.append(TrainingExample(store.mel(scene), ZERO_REFERENCE, y, scene.id))
            continue
        x = store.waveform(scene)
        r = dsp.fit_length(store.waveform(ref), len(x))
        mix = mix_same_power(x, r)
        ref_part = Waveform(mix.scale * r.samples, x.sample_rate)
        out.append(
            TrainingExample(store.mel_of(mix.mixed), store.mel_of(ref_part), y, scene.id, ref.id, mix.scale, mix.renorm)
        )
    return out


def make_mixgen_batch(
    scene_pairs: list[tuple[Scene, Scene]], seed, store: FeatureStore, L_max: int = 24
) -> tuple[list[TrainingExample], int]:
    """Same-power mixes of scene pairs with captions joined by 'and'.

    Pairs whose joined caption (plus <bos>/<eos>) exceeds ``L_max`` are
    skipped; returns the examples and the skip count.
    """
    del seed  # pairing is decided by the caller; mixing itself is deterministic
    out, skipped = [], 0
    for a, b in scene_pairs:
        if a.id == b.id:
            raise ValueError(f"scene {a.id} paired with itself")
        target = f"{caption_of(a)} {MIXGEN_CONNECTIVE} {caption_of(b)}"
        if len(target.split()) + 2 > L_max:
            skipped += 1
            continue
        mix = mix_same_power(store.waveform(a), store.waveform(b))
        out.append(TrainingExample(store.mel_of(mix.mixed), ZERO_REFERENCE, target, a.id, b.id, mix.scale, mix.renorm))
    return out, skipped


def make_baseline_batch(scenes: list[Scene], store: FeatureStore) -> list[TrainingExample]:
    return [TrainingExample(store.mel(s), ZERO_REFERENCE, caption_of(s), s.id) for s in scenes]


@dataclass
class Batch:
    mel_input: np.ndarray  # (B, T, F)
    mel_ref: np.ndarray | None  # (R, T, F) for rows with a real reference
    ref_rows: np.ndarray  # (B,) index into mel_ref, -1 for the zero reference
    tokens: np.ndarray  # (B, L) padded, <bos> ... <eos>

    @property
    def size(self) -> int:
        return self.mel_input.shape[0]


def collate(examples: list[TrainingExample], vocab: Vocabulary, L_max: int = 24) -> Batch:
    ids = [vocab.tokenize(e.target) for e in examples]
    longest = max(len(t) for t in ids)
    if longest > L_max:
        raise ValueError(f"caption of {longest} tokens exceeds L_max={L_max}")
    tokens = np.full((len(ids), longest), vocab.pad_id, dtype=np.int64)
    for i, t in enumerate(ids):
        tokens[i, : len(t)] = t
    refs, rows = [], []
    for e in examples:
        if e.mel_ref is ZERO_REFERENCE:
            rows.append(-1)
        else:
            rows.append(len(refs))
            refs.append(e.mel_ref)
    mel_ref = np.stack(refs) if refs else None
    return Batch(np.stack([e.mel_input for e in examples]), mel_ref, np.array(rows, dtype=np.int64), tokens)


def forward_loss(model: Captioner, batch: Batch, mode: str) -> Tensor:
    """Teacher-forced cross-entropy for one batch; records on any active tape."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    z = model.encode(batch.mel_input)
    if mode == "difference":
        if batch.mel_ref is None:
            z_ref = constant(np.zeros(z.shape, dtype=z.dtype))
        else:
            z_ref = ops.gather(model.encode(batch.mel_ref), batch.ref_rows, axis=0)
        z = diff(z, z_ref)
    elif batch.mel_ref is not None:
        raise ValueError(f"{mode} batches cannot carry references")
    logits = model.decode_teacher_forced(z, batch.tokens[:, :-1])
    return ops.softmax_cross_entropy(logits, batch.tokens[:, 1:], pad_id=model.vocab.pad_id)


def training_step(batch: Batch, model: Captioner, mode: str) -> tuple[float, dict[str, np.ndarray]]:
    """Loss value and gradients keyed by parameter name."""
    with Tape() as tape:
        loss = forward_loss(model, batch, mode)
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteLoss(f"non-finite loss {value}")
    grads = backward(loss, tape)
    by_name = {name: grads[p] for name, p in model.params.items() if p in grads}
    return value, by_name


def batch_loss(model: Captioner, batch: Batch, mode: str) -> tuple[float, int]:
    """(sum of token losses, token count) without recording a tape."""
    loss = forward_loss(model, batch, mode)
    n = int((batch.tokens[:, 1:] != model.vocab.pad_id).sum())
    return loss.item() * n, n


@dataclass
class TrainLog:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    mixgen_skipped: int = 0

    def step_lines(self) -> list[str]:
        import json

        return [json.dumps(s, sort_keys=True) for s in self.steps]


@dataclass
class TrainResult:
    model: Captioner
    best_params: dict[str, np.ndarray]
    best_epoch: int
    best_valid_loss: float
    log: TrainLog
    optimizer: AdamState


def epoch_examples(
    mode: str, scenes: list[Scene], corpus: CorpusManifest, store: FeatureStore, cfg: TrainConfig, rng
) -> tuple[list[TrainingExample], int]:
    """One epoch's examples in scene order, freshly sampled from ``rng``."""
    if mode == "baseline":
        return make_baseline_batch(scenes, store), 0
    if mode == "difference":
        return make_difference_batch(scenes, corpus.bank, rng, store, cfg.zero_ref_ratio), 0
    # mixgen: a zero_ref_ratio share stays unmixed; overlong pairs fall back to the plain scene
    plain = rng.random(len(scenes)) < cfg.zero_ref_ratio
    partners = rng.integers(0, len(scenes) - 1, size=len(scenes)) if len(scenes) > 1 else np.zeros(len(scenes), int)
    out, skipped = [], 0
    for i, s in enumerate(scenes):
        if plain[i] or len(scenes) < 2:
            out.append(make_baseline_batch([s], store)[0])
            continue
        j = int(partners[i]) + (partners[i] >= i)
        ex, sk = make_mixgen_batch([(s, scenes[j])], None, store, cfg.L_max)
        skipped += sk
        out.extend(ex if ex else make_baseline_batch([s], store))
    return out, skipped


def evaluate_loss(model: Captioner, batches: list[Batch], mode: str) -> float:
    total, count = 0.0, 0
    for b in batches:
        s, n = batch_loss(model, b, mode)
        total += s
        count += n
    return total / max(count, 1)


def snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.items()}


def train(
    cfg: TrainConfig,
    corpus: CorpusManifest,
    model: Captioner,
    mel_cfg: MelConfig | None = None,
    on_step=None,
) -> TrainResult:
    """Run ``cfg.epochs`` epochs of Adam; deterministic given ``cfg.seed``."""
    cfg.validate()
    if not corpus.train or not corpus.valid:
        raise ValueError("corpus needs non-empty train and valid splits")
    mel_cfg = mel_cfg or MelConfig(sample_rate=corpus.sample_rate)
    store = FeatureStore(corpus, mel_cfg)
    vocab = model.vocab
    opt = AdamState(lr=cfg.lr)
    tlog = TrainLog()

    valid_rng = np.random.default_rng([cfg.seed, 10**6])
    valid_ex, _ = epoch_examples(cfg.mode, corpus.valid, corpus, store, cfg, valid_rng)
    valid_batches = [
        collate(valid_ex[i : i + cfg.batch_size], vocab, cfg.L_max) for i in range(0, len(valid_ex), cfg.batch_size)
    ]

    best = (math.inf, -1, snapshot(model.params))
    step = 0
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(corpus.train))
        scenes = [corpus.train[i] for i in order]
        examples, skipped = epoch_examples(cfg.mode, scenes, corpus, store, cfg, rng)
        tlog.mixgen_skipped += skipped
        for i in range(0, len(examples), cfg.batch_size):
            batch = collate(examples[i : i + cfg.batch_size], vocab, cfg.L_max)
            loss, grads = training_step(batch, model, cfg.mode)
            if cfg.grad_clip:
                clip_grad_norm(grads, cfg.grad_clip)
            adam_step(model.params, grads, opt)
            tlog.steps.append({"step": step, "mode": cfg.mode, "loss": loss})
            if on_step is not None:
                on_step(tlog.steps[-1])
            step += 1
        vloss = evaluate_loss(model, valid_batches, cfg.mode)
        if not math.isfinite(vloss):
            raise NonFiniteLoss(f"non-finite validation loss at epoch {epoch}")
        tlog.epochs.append({"epoch": epoch, "step": step, "mode": cfg.mode, "valid_loss": vloss})
        log.info("epoch %d  train %.4f  valid %.4f", epoch, tlog.steps[-1]["loss"], vloss)
        if vloss < best[0]:
            best = (vloss, epoch, snapshot(model.params))
    return TrainResult(model, best[2], best[1], best[0], tlog, opt)


def clone_model(model: Captioner) -> Captioner:
    params = {k: Tensor(v.data.copy(), requires_grad=v.requires_grad, name=k) for k, v in model.params.items()}
    return Captioner(copy.deepcopy(model.cfg), model.vocab, params)
