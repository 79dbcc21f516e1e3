"""Tokenizer, convolution + transformer audio encoder, and transformer caption decoder."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .gradcore import Tensor, constant, ops

BOS, EOS, PAD = "<bos>", "<eos>", "<pad>"
NEG_INF = -1e9


class UnknownWordError(KeyError):
    pass


class Vocabulary:
    def __init__(self, words):
        tokens = [PAD, BOS, EOS] + [w for w in words if w not in (PAD, BOS, EOS)]
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        if len(tokens) > 128:
            raise ValueError(f"vocabulary of {len(tokens)} tokens exceeds 128")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}
        self.pad_id, self.bos_id, self.eos_id = 0, 1, 2

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    @classmethod
    def from_grammar(cls) -> "Vocabulary":
        from .scenegen import lexicon_words

        return cls(lexicon_words())

    def tokenize(self, text: str) -> list[int]:
        ids = [self.bos_id]
        for w in text.split():
            if w not in self.index or w in (PAD, BOS, EOS):
                raise UnknownWordError(w)
            ids.append(self.index[w])
        ids.append(self.eos_id)
        return ids

    def detokenize(self, ids) -> str:
        special = (self.pad_id, self.bos_id, self.eos_id)
        words = []
        for i in ids:
            i = int(i)
            if i == self.eos_id:
                break
            if i not in special:
                words.append(self.tokens[i])
        return " ".join(words)


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    return vocab.tokenize(text)


def detokenize(ids, vocab: Vocabulary) -> str:
    return vocab.detokenize(ids)


@dataclass
class ModelConfig:
    n_mels: int = 64
    d_model: int = 128
    n_heads: int = 4
    ff_dim: int = 256
    enc_layers: int = 2
    dec_layers: int = 2
    conv_blocks: int = 2
    max_len: int = 24
    # fixed input standardisation applied to log-mel frames
    mel_mean: float = -12.0
    mel_std: float = 6.0
    init_seed: int = 0
    zero_init_output: bool = True
    dtype: str = "float32"

    def validate(self) -> None:
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if min(self.n_mels, self.d_model, self.n_heads, self.ff_dim, self.max_len) < 1:
            raise ValueError("model sizes must be positive")

    @property
    def downsample(self) -> int:
        return 2**self.conv_blocks


@lru_cache(maxsize=64)
def sinusoid(n: int, d: int, dtype: str) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle)).astype(dtype)
    pe.flags.writeable = False
    return pe


@lru_cache(maxsize=64)
def _conv_index(t_in: int) -> np.ndarray:
    """Frame indices for a width-3, stride-2, pad-1 convolution; -1 marks padding."""
    t_out = (t_in + 1) // 2
    idx = 2 * np.arange(t_out)[:, None] + np.array([-1, 0, 1])[None, :]
    idx[(idx < 0) | (idx >= t_in)] = -1
    idx.flags.writeable = False
    return idx


@lru_cache(maxsize=64)
def causal_mask(n: int) -> np.ndarray:
    m = np.triu(np.full((n, n), NEG_INF), k=1)
    m.flags.writeable = False
    return m


class Captioner:
    """Encoder-decoder captioner over log-mel input.

    One parameter dict serves every call to :meth:`encode`, so the input and
    reference branches of difference training share weights by construction.
    """

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, params: dict[str, Tensor] | None = None):
        cfg.validate()
        self.cfg = cfg
        self.vocab = vocab
        self.params = params if params is not None else self._init_params()

    # -- parameters ---------------------------------------------------------
    def _init_params(self) -> dict[str, Tensor]:
        cfg = self.cfg
        rng = np.random.default_rng(cfg.init_seed)
        D, F, V = cfg.d_model, cfg.n_mels, len(self.vocab)
        p: dict[str, np.ndarray] = {}

        def dense(name, fan_in, fan_out):
            p[f"{name}.w"] = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
            p[f"{name}.b"] = np.zeros(fan_out)

        def norm(name):
            p[f"{name}.g"] = np.ones(D)
            p[f"{name}.b"] = np.zeros(D)

        def attn(name):
            for part in ("q", "k", "v", "o"):
                dense(f"{name}.{part}", D, D)
            # a key bias only shifts every score in a row equally, so it is left out
            del p[f"{name}.k.b"]

        c_in = F
        for i in range(cfg.conv_blocks):
            dense(f"enc.conv{i}", 3 * c_in, D)
            c_in = D
        for i in range(cfg.enc_layers):
            norm(f"enc.{i}.ln1")
            attn(f"enc.{i}.attn")
            norm(f"enc.{i}.ln2")
            dense(f"enc.{i}.ff1", D, cfg.ff_dim)
            dense(f"enc.{i}.ff2", cfg.ff_dim, D)
        p["dec.embed"] = rng.standard_normal((V, D)) * 0.1
        for i in range(cfg.dec_layers):
            norm(f"dec.{i}.ln1")
            attn(f"dec.{i}.self")
            norm(f"dec.{i}.ln2")
            attn(f"dec.{i}.cross")
            norm(f"dec.{i}.ln3")
            dense(f"dec.{i}.ff1", D, cfg.ff_dim)
            dense(f"dec.{i}.ff2", cfg.ff_dim, D)
        norm("dec.ln_f")
        dense("dec.out", D, V)
        if cfg.zero_init_output:
            p["dec.out.w"][:] = 0.0
        return {k: Tensor(v.astype(cfg.dtype), requires_grad=True, name=k) for k, v in p.items()}

    def n_params(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    # -- building blocks ----------------------------------------------------
    def _linear(self, x: Tensor, name: str) -> Tensor:
        y = ops.matmul(x, self.params[f"{name}.w"])
        b = self.params.get(f"{name}.b")
        return y if b is None else ops.add(y, b)

    def _ln(self, x: Tensor, name: str) -> Tensor:
        return ops.layernorm(x, self.params[f"{name}.g"], self.params[f"{name}.b"])

    def _mha(self, x: Tensor, mem: Tensor, name: str, mask: np.ndarray | None = None) -> Tensor:
        B, Lq, D = x.shape
        Lk = mem.shape[1]
        H = self.cfg.n_heads
        dh = D // H

        def heads(t: Tensor, n: int) -> Tensor:
            return ops.transpose(ops.reshape(t, (B, n, H, dh)), (0, 2, 1, 3))

        q = heads(self._linear(x, f"{name}.q"), Lq)
        k = heads(self._linear(mem, f"{name}.k"), Lk)
        v = heads(self._linear(mem, f"{name}.v"), Lk)
        o = ops.attention(q, k, v, mask)
        o = ops.reshape(ops.transpose(o, (0, 2, 1, 3)), (B, Lq, D))
        return self._linear(o, f"{name}.o")

    def _ffn(self, x: Tensor, name: str) -> Tensor:
        return self._linear(ops.relu(self._linear(x, f"{name}.ff1")), f"{name}.ff2")

    # -- public API ---------------------------------------------------------
    def encoded_length(self, n_frames: int) -> int:
        for _ in range(self.cfg.conv_blocks):
            n_frames = (n_frames + 1) // 2
        return n_frames

    def encode(self, mel) -> Tensor:
        """(T, F) or (B, T, F) log-mel -> (B, ceil(T/4), D) feature representation."""
        arr = mel.data if isinstance(mel, Tensor) else np.asarray(mel)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[-1] != self.cfg.n_mels:
            raise ValueError(f"expected (B, T, {self.cfg.n_mels}) mel input, got {arr.shape}")
        x = Tensor(((arr - self.cfg.mel_mean) / self.cfg.mel_std).astype(self.cfg.dtype))
        B = arr.shape[0]
        for i in range(self.cfg.conv_blocks):
            T, C = x.shape[1], x.shape[2]
            idx = _conv_index(T)
            frames = ops.reshape(ops.gather(x, idx, axis=1), (B, idx.shape[0], 3 * C))
            x = ops.relu(self._linear(frames, f"enc.conv{i}"))
        x = ops.add(x, constant(sinusoid(x.shape[1], self.cfg.d_model, self.cfg.dtype)))
        for i in range(self.cfg.enc_layers):
            h = self._ln(x, f"enc.{i}.ln1")
            x = ops.add(x, self._mha(h, h, f"enc.{i}.attn"))
            x = ops.add(x, self._ffn(self._ln(x, f"enc.{i}.ln2"), f"enc.{i}"))
        return x

    def decode_teacher_forced(self, z: Tensor, y_in) -> Tensor:
        """Logits (B, L, |V|) for next-token prediction given the prefix ``y_in``."""
        y = np.asarray(y_in, dtype=np.int64)
        if y.ndim == 1:
            y = y[None]
        L = y.shape[1]
        if L > self.cfg.max_len:
            raise ValueError(f"caption of length {L} exceeds max_len={self.cfg.max_len}")
        if z.ndim == 2:
            z = ops.reshape(z, (1,) + z.shape)
        if z.shape[0] != y.shape[0]:
            raise ValueError(f"batch mismatch: {z.shape[0]} feature maps, {y.shape[0]} captions")
        x = ops.embedding(self.params["dec.embed"], y)
        x = ops.add(x, constant(sinusoid(L, self.cfg.d_model, self.cfg.dtype)))
        mask = causal_mask(L)
        for i in range(self.cfg.dec_layers):
            h = self._ln(x, f"dec.{i}.ln1")
            x = ops.add(x, self._mha(h, h, f"dec.{i}.self", mask))
            x = ops.add(x, self._mha(self._ln(x, f"dec.{i}.ln2"), z, f"dec.{i}.cross"))
            x = ops.add(x, self._ffn(self._ln(x, f"dec.{i}.ln3"), f"dec.{i}"))
        return self._linear(self._ln(x, "dec.ln_f"), "dec.out")

    def config_dict(self) -> dict:
        return asdict(self.cfg)


def diff(z_input: Tensor, z_ref: Tensor) -> Tensor:
    """Feature-space difference: plain elementwise subtraction."""
    if z_input.shape != z_ref.shape:
        raise ValueError(f"shape mismatch: {z_input.shape} vs {z_ref.shape}")
    return ops.sub(z_input, z_ref)
