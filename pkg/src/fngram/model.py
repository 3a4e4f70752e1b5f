"""Encoder-decoder Transformer whose decoder predicts the next n tokens per step.

The decoder runs a main stream (ordinary causal self-attention) stacked with
``n_future - 1`` predicting streams. Predicting stream j at position t starts
from the main-stream input at t plus a stream embedding and the position
embedding of t + j, then attends only to main-stream states at positions <= t
and to the encoder output. All streams share the layer weights and the output
projection, which is tied to the token embedding.

Decoder inputs are the targets shifted right behind [BOS], so position t has
seen exactly y_<t and slice ``logits[j, t]`` scores y_{t+j}.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as tn
from .tensor import Tensor
from .tokenizer import BOS_ID

NEG_INF = -1e9


class LengthError(ValueError):
    pass


def geometric_alpha(n_future: int, gamma: float = 0.5) -> tuple[float, ...]:
    return tuple(float(gamma ** j) for j in range(n_future))


@dataclass
class ModelConfig:
    vocab_size: int = 9360
    n_future: int = 2
    alpha: tuple[float, ...] | None = None
    gamma: float = 0.5
    layers_enc: int = 12
    layers_dec: int = 12
    hidden: int = 1024
    ffn: int = 4096
    heads: int = 16
    max_len: int = 512
    dropout: float = 0.1
    dtype: str = "float32"
    eps: float = 1e-5

    def __post_init__(self):
        if self.alpha is None:
            self.alpha = geometric_alpha(self.n_future, self.gamma)
        self.alpha = tuple(float(a) for a in self.alpha)
        if self.n_future < 1:
            raise ValueError("n_future must be >= 1")
        if len(self.alpha) != self.n_future:
            raise ValueError(f"alpha has {len(self.alpha)} weights for n_future={self.n_future}")
        if any(a < 0 for a in self.alpha) or self.alpha[0] <= 0:
            raise ValueError("alpha weights must be nonnegative with alpha[0] > 0")
        if self.hidden % self.heads:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")

    @classmethod
    def toy(cls, vocab_size: int, **overrides) -> "ModelConfig":
        """2-layer / 64-hidden configuration used for desk-scale runs."""
        kw = dict(vocab_size=vocab_size, layers_enc=2, layers_dec=2, hidden=64, ffn=256,
                  heads=4, max_len=128, dropout=0.0)
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha"] = list(self.alpha)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if d.get("alpha") is not None:
            d["alpha"] = tuple(d["alpha"])
        return cls(**d)


def init_parameters(config: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """normal(0, 0.02) weights, zero biases, unit norm gains; insertion order is stable."""
    rng = np.random.default_rng(seed)
    H, F = config.hidden, config.ffn
    dtype = np.dtype(config.dtype)
    params: dict[str, Tensor] = {}

    def normal(name, *shape):
        params[name] = Tensor(rng.normal(0.0, 0.02, size=shape), requires_grad=True, dtype=dtype)

    def const(name, value, *shape):
        params[name] = Tensor(np.full(shape, value), requires_grad=True, dtype=dtype)

    def norm(prefix):
        const(prefix + ".g", 1.0, H)
        const(prefix + ".b", 0.0, H)

    def attn(prefix):
        for w in ("q", "k", "v", "o"):
            normal(f"{prefix}.w{w}", H, H)
            const(f"{prefix}.b{w}", 0.0, H)

    def ffn(prefix):
        normal(prefix + ".w1", H, F)
        const(prefix + ".b1", 0.0, F)
        normal(prefix + ".w2", F, H)
        const(prefix + ".b2", 0.0, H)

    normal("tok_emb", config.vocab_size, H)
    normal("pos_emb", config.max_len + config.n_future - 1, H)
    normal("stream_emb", config.n_future, H)
    for i in range(config.layers_enc):
        p = f"enc.{i}"
        norm(p + ".ln1")
        attn(p + ".attn")
        norm(p + ".ln2")
        ffn(p + ".ffn")
    norm("enc.ln_f")
    for i in range(config.layers_dec):
        p = f"dec.{i}"
        norm(p + ".ln1")
        attn(p + ".self")
        norm(p + ".ln2")
        attn(p + ".cross")
        norm(p + ".ln3")
        ffn(p + ".ffn")
    norm("dec.ln_f")
    return params


@dataclass
class DecoderCache:
    """Per-layer main-stream keys/values plus precomputed encoder keys/values."""
    self_k: list = field(default_factory=list)
    self_v: list = field(default_factory=list)
    cross_k: list = field(default_factory=list)
    cross_v: list = field(default_factory=list)
    enc_bias: np.ndarray | None = None
    length: int = 0


class ProphetModel:
    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_parameters(config, seed)
        self.dtype = np.dtype(config.dtype)
        self.training = False
        self.rng: np.random.Generator | None = None

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # building blocks

    def _dropout(self, x: Tensor) -> Tensor:
        p = self.config.dropout
        if not self.training or p == 0.0 or self.rng is None:
            return x
        keep = (self.rng.random(x.shape) >= p).astype(self.dtype) / (1.0 - p)
        return tn.mul(x, keep)

    def _norm(self, x: Tensor, prefix: str) -> Tensor:
        return tn.layer_norm(x, self.params[prefix + ".g"], self.params[prefix + ".b"], self.config.eps)

    def _linear(self, x: Tensor, w: str, b: str) -> Tensor:
        return tn.add(tn.matmul(x, self.params[w]), self.params[b])

    def _split_heads(self, x: Tensor) -> Tensor:
        B, L, H = x.shape
        h = self.config.heads
        return tn.transpose(tn.reshape(x, (B, L, h, H // h)), (0, 2, 1, 3))

    def _merge_heads(self, x: Tensor) -> Tensor:
        B, h, L, d = x.shape
        return tn.reshape(tn.transpose(x, (0, 2, 1, 3)), (B, L, h * d))

    def _project_kv(self, x: Tensor, prefix: str) -> tuple[Tensor, Tensor]:
        k = self._split_heads(self._linear(x, prefix + ".wk", prefix + ".bk"))
        v = self._split_heads(self._linear(x, prefix + ".wv", prefix + ".bv"))
        return k, v

    def _attend(self, q_in: Tensor, k: Tensor, v: Tensor, bias: np.ndarray, prefix: str) -> Tensor:
        q = self._split_heads(self._linear(q_in, prefix + ".wq", prefix + ".bq"))
        scale = 1.0 / np.sqrt(q.shape[-1])
        scores = tn.matmul(q, tn.transpose(k, (0, 1, 3, 2)))
        scores = tn.add(tn.mul(scores, scale), bias.astype(self.dtype))
        ctx = tn.matmul(tn.softmax(scores), v)
        return self._linear(self._merge_heads(ctx), prefix + ".wo", prefix + ".bo")

    def _ffn(self, x: Tensor, prefix: str) -> Tensor:
        h = tn.gelu(self._linear(x, prefix + ".w1", prefix + ".b1"))
        return self._linear(h, prefix + ".w2", prefix + ".b2")

    @staticmethod
    def _key_bias(mask: np.ndarray) -> np.ndarray:
        # [B, M] real-token mask -> additive [B, 1, 1, M]
        return np.where(mask, 0.0, NEG_INF)[:, None, None, :]

    # encoder

    def encode(self, x_ids, mask=None) -> Tensor:
        """Encoder states ``[M, hidden]`` (or ``[B, M, hidden]`` for a batch)."""
        x_ids = np.asarray(x_ids, dtype=np.int64)
        single = x_ids.ndim == 1
        if single:
            x_ids = x_ids[None]
            mask = None if mask is None else np.asarray(mask, dtype=bool)[None]
        B, M = x_ids.shape
        if M > self.config.max_len:
            raise LengthError(f"encoder input length {M} exceeds max_len {self.config.max_len}")
        mask = np.ones((B, M), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        bias = self._key_bias(mask)
        x = tn.add(tn.embedding(self.params["tok_emb"], x_ids), self.params["pos_emb"][:M])
        x = self._dropout(x)
        for i in range(self.config.layers_enc):
            p = f"enc.{i}"
            a = self._norm(x, p + ".ln1")
            k, v = self._project_kv(a, p + ".attn")
            x = tn.add(x, self._dropout(self._attend(a, k, v, bias, p + ".attn")))
            x = tn.add(x, self._dropout(self._ffn(self._norm(x, p + ".ln2"), p + ".ffn")))
        h = self._norm(x, "enc.ln_f")
        return h[0] if single else h

    # decoder

    def shift_right(self, y_ids: np.ndarray) -> np.ndarray:
        y_in = np.empty_like(y_ids)
        y_in[:, 0] = BOS_ID
        y_in[:, 1:] = y_ids[:, :-1]
        return y_in

    def _stream_inputs(self, tok_ids: np.ndarray, positions: np.ndarray) -> Tensor:
        """Stacked [B, n*L, H] inputs: main stream rows first, then stream 1..n-1."""
        n = self.config.n_future
        pos = self.params["pos_emb"]
        streams = self.params["stream_emb"]
        main = tn.add(tn.embedding(self.params["tok_emb"], tok_ids), tn.embedding(pos, positions))
        main = tn.add(main, streams[0:1])
        rows = [main]
        for j in range(1, n):
            rows.append(tn.add(tn.add(main, streams[j:j + 1]), tn.embedding(pos, positions + j)))
        return self._dropout(tn.concat(rows, axis=1) if n > 1 else main)

    def _causal_bias(self, T: int) -> np.ndarray:
        allowed = np.tril(np.ones((T, T), dtype=bool))
        bias = np.where(allowed, 0.0, NEG_INF)
        return np.tile(bias, (self.config.n_future, 1))[None, None]

    def _logits(self, x: Tensor) -> Tensor:
        x = self._norm(x, "dec.ln_f")
        return tn.matmul(x, tn.transpose(self.params["tok_emb"], (1, 0)))

    def decode_streams(self, y_ids, h_enc: Tensor, enc_mask=None) -> Tensor:
        """Logits ``[n_future, T, vocab]`` (``[B, n_future, T, vocab]`` batched).

        ``y_ids`` are the targets; they are shifted right internally so that
        ``logits[j, t]`` conditions on y_<t and the source only.
        """
        y_ids = np.asarray(y_ids, dtype=np.int64)
        single = y_ids.ndim == 1
        if single:
            y_ids = y_ids[None]
            if h_enc.ndim == 2:
                h_enc = tn.reshape(h_enc, (1,) + h_enc.shape)
            if enc_mask is not None:
                enc_mask = np.asarray(enc_mask, dtype=bool)[None]
        B, T = y_ids.shape
        if T > self.config.max_len:
            raise LengthError(f"decoder length {T} exceeds max_len {self.config.max_len}")
        if enc_mask is None:
            enc_mask = np.ones(h_enc.shape[:2], dtype=bool)
        enc_bias = self._key_bias(np.asarray(enc_mask, dtype=bool))
        self_bias = self._causal_bias(T)
        positions = np.broadcast_to(np.arange(T), (B, T))
        x = self._stream_inputs(self.shift_right(y_ids), positions)
        for i in range(self.config.layers_dec):
            p = f"dec.{i}"
            a = self._norm(x, p + ".ln1")
            k, v = self._project_kv(a[:, :T] if self.config.n_future > 1 else a, p + ".self")
            x = tn.add(x, self._dropout(self._attend(a, k, v, self_bias, p + ".self")))
            b = self._norm(x, p + ".ln2")
            ck, cv = self._project_kv(h_enc, p + ".cross")
            x = tn.add(x, self._dropout(self._attend(b, ck, cv, enc_bias, p + ".cross")))
            x = tn.add(x, self._dropout(self._ffn(self._norm(x, p + ".ln3"), p + ".ffn")))
        logits = tn.reshape(self._logits(x), (B, self.config.n_future, T, self.config.vocab_size))
        return logits[0] if single else logits

    def forward(self, x_ids, y_ids, enc_mask=None) -> Tensor:
        return self.decode_streams(y_ids, self.encode(x_ids, enc_mask), enc_mask)

    # incremental decoding

    def start_cache(self, h_enc: Tensor, enc_mask=None) -> DecoderCache:
        if h_enc.ndim == 2:
            h_enc = tn.reshape(h_enc, (1,) + h_enc.shape)
            if enc_mask is not None:
                enc_mask = np.asarray(enc_mask, dtype=bool)[None]
        if enc_mask is None:
            enc_mask = np.ones(h_enc.shape[:2], dtype=bool)
        cache = DecoderCache(enc_bias=self._key_bias(np.asarray(enc_mask, dtype=bool)))
        for i in range(self.config.layers_dec):
            ck, cv = self._project_kv(h_enc, f"dec.{i}.cross")
            cache.cross_k.append(ck)
            cache.cross_v.append(cv)
            cache.self_k.append(None)
            cache.self_v.append(None)
        return cache

    def decode_step(self, tokens, cache: DecoderCache) -> np.ndarray:
        """Feed one decoder input per batch row; returns logits ``[B, n_future, vocab]``.

        The first call should feed [BOS]. Streams at the new position see the
        cached main-stream states of all earlier positions, as in
        :meth:`decode_streams`.
        """
        tokens = np.asarray(tokens, dtype=np.int64).reshape(-1, 1)
        t = cache.length
        if t >= self.config.max_len:
            raise LengthError(f"decoder length {t + 1} exceeds max_len {self.config.max_len}")
        B = tokens.shape[0]
        with tn.no_grad():
            x = self._stream_inputs(tokens, np.full((B, 1), t))
            no_bias = np.zeros((1, 1, 1, 1))
            for i in range(self.config.layers_dec):
                p = f"dec.{i}"
                a = self._norm(x, p + ".ln1")
                k, v = self._project_kv(a[:, :1], p + ".self")
                if cache.self_k[i] is not None:
                    k = tn.concat([cache.self_k[i], k], axis=2)
                    v = tn.concat([cache.self_v[i], v], axis=2)
                cache.self_k[i], cache.self_v[i] = k, v
                x = tn.add(x, self._attend(a, k, v, no_bias, p + ".self"))
                b = self._norm(x, p + ".ln2")
                x = tn.add(x, self._attend(b, cache.cross_k[i], cache.cross_v[i], cache.enc_bias, p + ".cross"))
                x = tn.add(x, self._ffn(self._norm(x, p + ".ln3"), p + ".ffn"))
            logits = self._logits(x).data
        cache.length += 1
        return logits.reshape(B, self.config.n_future, self.config.vocab_size)

    def reorder_cache(self, cache: DecoderCache, rows: Sequence[int]) -> DecoderCache:
        """Select batch rows (beam reordering); the encoder part is broadcast if needed."""
        rows = np.asarray(rows, dtype=np.int64)
        out = DecoderCache(length=cache.length)
        for i in range(self.config.layers_dec):
            out.self_k.append(None if cache.self_k[i] is None else Tensor(cache.self_k[i].data[rows]))
            out.self_v.append(None if cache.self_v[i] is None else Tensor(cache.self_v[i].data[rows]))
            ck, cv = cache.cross_k[i].data, cache.cross_v[i].data
            src = rows if ck.shape[0] > 1 else np.zeros_like(rows)
            out.cross_k.append(Tensor(ck[src]))
            out.cross_v.append(Tensor(cv[src]))
        bias = cache.enc_bias
        out.enc_bias = bias[rows] if bias.shape[0] > 1 else bias[np.zeros_like(rows)]
        return out
