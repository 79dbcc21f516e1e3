from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..gradcore import Tensor, ops
from ..model import Captioner


@dataclass
class DecodingConfig:
    strategy: str = "greedy"
    beam_width: int = 4
    max_len: int = 24

    def validate(self) -> None:
        if self.strategy not in ("greedy", "beam"):
            raise ValueError(f"unknown decoding strategy {self.strategy!r}")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


@dataclass
class Hypothesis:
    tokens: list[int]  # starts with <bos>; ends with <eos> when finished
    logprob: float
    finished: bool


def _log_softmax(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _as_batch(z) -> Tensor:
    z = z if isinstance(z, Tensor) else Tensor(np.asarray(z))
    return ops.reshape(z, (1,) + z.shape) if z.ndim == 2 else z


def _next_logprobs(model: Captioner, z: Tensor, prefixes: np.ndarray) -> np.ndarray:
    logits = model.decode_teacher_forced(z, prefixes).data
    return _log_softmax(logits[:, -1])


def greedy_decode_batch(model: Captioner, z, max_len: int = 24) -> list[Hypothesis]:
    """Argmax decoding for every row of a (B, T', D) feature batch.

    Ties go to the lowest token id. Rows stop at <eos>; the loop stops once
    every row has finished or ``max_len`` tokens were generated.
    """
    z = _as_batch(z)
    vocab = model.vocab
    B = z.shape[0]
    seqs = np.full((B, 1), vocab.bos_id, dtype=np.int64)
    logp = np.zeros(B)
    done = np.zeros(B, dtype=bool)
    for _ in range(max_len):
        if seqs.shape[1] > model.cfg.max_len:
            break
        lp = _next_logprobs(model, z, seqs)
        nxt = lp.argmax(axis=-1)
        nxt = np.where(done, vocab.pad_id, nxt)
        logp += np.where(done, 0.0, lp[np.arange(B), nxt])
        seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
        done |= nxt == vocab.eos_id
        if done.all():
            break
    out = []
    for i in range(B):
        toks = [int(t) for t in seqs[i]]
        if vocab.eos_id in toks:
            toks = toks[: toks.index(vocab.eos_id) + 1]
        out.append(Hypothesis(toks, float(logp[i]), bool(done[i])))
    return out


def greedy_decode(model: Captioner, z, cfg: DecodingConfig | None = None) -> Hypothesis:
    cfg = cfg or DecodingConfig()
    return greedy_decode_batch(model, z, cfg.max_len)[0]


def beam_decode(model: Captioner, z, cfg: DecodingConfig | None = None) -> Hypothesis:
    """Beam search over summed log-probabilities, without length normalisation.

    Finished hypotheses are collected until no live beam can still beat the
    best of them. If nothing finishes within ``max_len`` the best live
    hypothesis is returned with ``finished=False``. With k > 1 the greedy
    path is scored too, so the result is never worse than greedy.
    """
    cfg = cfg or DecodingConfig(strategy="beam")
    k = cfg.beam_width
    if k < 1:
        raise ValueError("beam_width must be >= 1")
    z = _as_batch(z)
    if z.shape[0] != 1:
        raise ValueError("beam_decode handles one feature map at a time")
    vocab = model.vocab
    beams: list[tuple[list[int], float]] = [([vocab.bos_id], 0.0)]
    finished: list[Hypothesis] = []
    for _ in range(cfg.max_len):
        if len(beams[0][0]) > model.cfg.max_len:
            break
        prefixes = np.array([b[0] for b in beams], dtype=np.int64)
        zb = ops.gather(z, np.zeros(len(beams), dtype=np.int64), axis=0) if len(beams) > 1 else z
        lp = _next_logprobs(model, zb, prefixes)
        cands = []
        for bi, (toks, score) in enumerate(beams):
            top = np.argsort(-lp[bi], kind="stable")[:k]
            for t in top:
                cands.append((score + float(lp[bi, t]), bi, int(t)))
        # best score first; ties by beam rank then token id
        cands.sort(key=lambda c: (-c[0], c[1], c[2]))
        beams = []
        for score, bi, t in cands:
            toks = prefixes[bi].tolist() + [t]
            if t == vocab.eos_id:
                finished.append(Hypothesis(toks, score, True))
            else:
                beams.append((toks, score))
            if len(beams) == k:
                break
        best_done = max((h.logprob for h in finished), default=-np.inf)
        if not beams or beams[0][1] <= best_done:
            break
    if finished:
        best = max(finished, key=lambda h: h.logprob)
    else:
        toks, score = beams[0]
        best = Hypothesis(toks, score, False)
    if k > 1:
        g = greedy_decode(model, z, DecodingConfig(max_len=cfg.max_len))
        if g.finished and (not best.finished or g.logprob > best.logprob):
            best = g
    return best


def decode(model: Captioner, z, cfg: DecodingConfig) -> list[Hypothesis]:
    """Decode every row of a feature batch with the configured strategy."""
    cfg.validate()
    z = _as_batch(z)
    if cfg.strategy == "greedy":
        return greedy_decode_batch(model, z, cfg.max_len)
    return [beam_decode(model, ops.gather(z, [i], axis=0), cfg) for i in range(z.shape[0])]
