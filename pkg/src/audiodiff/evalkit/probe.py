"""Test-set scoring and the four-way difference probe.

Probe cases for a scene ``x`` and a mixed-in reference event ``r``
(``x+ = mix(x, r)``):

1. decode(enc(x))                   target: caption of x
2. decode(enc(x+))                  target: caption of x+ (scene and event)
3. decode(enc(x+) - enc(r))         target: caption of x
4. decode(enc(x+) - enc(x))         target: caption of the event alone
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..difflearn import FeatureStore
from ..dsp import Waveform, fit_length, mix_same_power
from ..gradcore import Tensor
from ..model import Captioner, diff
from ..scenegen import LEXICON, Scene, caption_of, event_caption, sample_reference
from .decode import DecodingConfig, decode
from .metrics import bleu_n, cider_d, cider_d_items, mentions, rouge_l, token_accuracy

CASES = ("input", "mixed", "mixed_minus_ref", "mixed_minus_input")


@dataclass
class MetricReport:
    bleu_1: float
    bleu_2: float
    bleu_3: float
    bleu_4: float
    rouge_l: float
    cider_d: float
    count: int
    items: list[dict] = field(default_factory=list)

    def scores(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ("bleu_1", "bleu_2", "bleu_3", "bleu_4", "rouge_l", "cider_d")}

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1) + "\n"

    def table(self, title: str = "method") -> str:
        cols = list(self.scores())
        head = f"{'method':<12}" + "".join(f"{c:>10}" for c in cols)
        row = f"{title:<12}" + "".join(f"{v:>10.3f}" for v in self.scores().values())
        return f"{head}\n{row}\n(n={self.count}; METEOR, SPICE, SPIDEr, SPIDEr_FL not computed)\n"


def score(candidates: list[str], references: list[str]) -> MetricReport:
    refs = [[r] for r in references]
    cider_items = cider_d_items(candidates, refs) if len(candidates) >= 2 else [float("nan")] * len(candidates)
    items = [{"candidate": c, "reference": r, "cider_d": s} for c, r, s in zip(candidates, references, cider_items)]
    return MetricReport(
        bleu_n(candidates, refs, 1),
        bleu_n(candidates, refs, 2),
        bleu_n(candidates, refs, 3),
        bleu_n(candidates, refs, 4),
        rouge_l(candidates, refs),
        cider_d(candidates, refs) if len(candidates) >= 2 else float("nan"),
        len(candidates),
        items,
    )


def _encode_all(model: Captioner, mels: list[np.ndarray], batch: int = 64) -> list[Tensor]:
    return [model.encode(np.stack(mels[i : i + batch])) for i in range(0, len(mels), batch)]


def _decode_features(model: Captioner, feats: list[Tensor], cfg: DecodingConfig) -> list[str]:
    out = []
    for z in feats:
        out += [model.vocab.detokenize(h.tokens) for h in decode(model, z, cfg)]
    return out


def evaluate(model: Captioner, scenes: list[Scene], store: FeatureStore, cfg: DecodingConfig | None = None) -> MetricReport:
    """Caption every scene through the plain (zero-reference) path and score it."""
    if not scenes:
        raise ValueError("empty evaluation split")
    cfg = cfg or DecodingConfig()
    feats = _encode_all(model, [store.mel(s) for s in scenes])
    cands = _decode_features(model, feats, cfg)
    return score(cands, [caption_of(s) for s in scenes])


@dataclass
class ProbeReport:
    items: list[dict]
    cases: dict[str, dict]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1) + "\n"

    def table(self) -> str:
        lines = [f"{'case':<22}{'token_acc':>10}{'cider_d':>10}{'ref_np':>10}"]
        for i, name in enumerate(CASES, 1):
            c = self.cases[name]
            lines.append(f"({i}) {name:<18}{c['token_accuracy']:>10.3f}{c['cider_d']:>10.3f}{c['ref_mention_rate']:>10.3f}")
        if self.items:
            ex = self.items[0]
            lines.append("")
            lines.append(f"example {ex['scene_id']} + {ex['ref_id']}")
            for i, name in enumerate(CASES, 1):
                lines.append(f"  ({i}) {ex[name]['generated']!r}  target {ex[name]['target']!r}")
        return "\n".join(lines) + "\n"


def difference_probe(
    model: Captioner,
    scenes: list[Scene],
    bank: list[Scene],
    store: FeatureStore,
    cfg: DecodingConfig | None = None,
    seed: int = 0,
) -> ProbeReport:
    cfg = cfg or DecodingConfig()
    rng = np.random.default_rng(seed)
    mel_x, mel_mix, mel_ref, meta = [], [], [], []
    for s in scenes:
        ref = sample_reference(bank, s, rng)
        x = store.waveform(s)
        r = fit_length(store.waveform(ref), len(x))
        mix = mix_same_power(x, r)
        # after a peak guard the mix holds x / renorm, so subtract that from it in case (4)
        mel_x.append(store.mel_of(Waveform(x.samples / mix.renorm, x.sample_rate)))
        mel_mix.append(store.mel_of(mix.mixed))
        mel_ref.append(store.mel_of(Waveform(mix.scale * r.samples, x.sample_rate)))
        etype = ref.events[0].event_type
        mixed_scene = Scene(s.id, s.events + ref.events, s.duration_s, s.seed, s.split)
        meta.append((s, ref, etype, caption_of(mixed_scene)))

    plain = _encode_all(model, [store.mel(s) for s in scenes])
    z_x = _encode_all(model, mel_x)
    z_mix = _encode_all(model, mel_mix)
    z_ref = _encode_all(model, mel_ref)
    features = {
        "input": plain,
        "mixed": z_mix,
        "mixed_minus_ref": [diff(a, b) for a, b in zip(z_mix, z_ref)],
        "mixed_minus_input": [diff(a, b) for a, b in zip(z_mix, z_x)],
    }
    generated = {name: _decode_features(model, f, cfg) for name, f in features.items()}

    items = []
    for i, (s, ref, etype, mixed_caption) in enumerate(meta):
        targets = {
            "input": caption_of(s),
            "mixed": mixed_caption,
            "mixed_minus_ref": caption_of(s),
            "mixed_minus_input": event_caption(etype),
        }
        item = {"scene_id": s.id, "ref_id": ref.id, "ref_type": etype}
        for name in CASES:
            g = generated[name][i]
            item[name] = {
                "generated": g,
                "target": targets[name],
                "token_accuracy": token_accuracy(g, targets[name]),
                "mentions_ref": mentions(g, LEXICON[etype][0]),
            }
        items.append(item)

    cases = {}
    for name in CASES:
        cands = [it[name]["generated"] for it in items]
        tgts = [it[name]["target"] for it in items]
        cases[name] = {
            "token_accuracy": float(np.mean([it[name]["token_accuracy"] for it in items])),
            "exact_match": float(np.mean([c == t for c, t in zip(cands, tgts)])),
            "cider_d": cider_d(cands, [[t] for t in tgts]) if len(items) >= 2 else float("nan"),
            "ref_mention_rate": float(np.mean([it[name]["mentions_ref"] for it in items])),
        }
    return ProbeReport(items, cases)


__all__ = ["MetricReport", "ProbeReport", "evaluate", "difference_probe", "score", "CASES"]
