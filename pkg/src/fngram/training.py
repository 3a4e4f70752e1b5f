"""Future n-gram loss, Adam training loop and checkpoint persistence."""

from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as tn
from .corpus import Batch, batch as make_batch
from .model import ModelConfig, ProphetModel
from .tensor import Tensor
from .tokenizer import PAD_ID

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"FNCK0001"
FORMAT_VERSION = 1


class NonFiniteError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


def future_ngram_loss(logits: Tensor, y_ids, alpha: Sequence[float], pad_id: int = PAD_ID,
                      per_stream: list | None = None) -> Tensor:
    """Sum over streams j of ``alpha[j]`` times the mean cross-entropy of
    ``logits[j, t]`` against ``y[t + j]``; positions past the end and pad
    targets are ignored. Accepts ``[n, T, V]`` with ``[T]`` targets or a batch.

    If ``per_stream`` is a list, the unweighted per-stream losses are appended.
    """
    y_ids = np.asarray(y_ids, dtype=np.int64)
    if y_ids.ndim == 1:
        y_ids = y_ids[None]
        logits = tn.reshape(logits, (1,) + logits.shape)
    n = logits.shape[1]
    if len(alpha) != n:
        raise ValueError(f"alpha has {len(alpha)} weights but logits carry {n} streams")
    T = y_ids.shape[1]
    total = None
    for j in range(n):
        if T - j <= 0:
            ce = Tensor(0.0, dtype=logits.dtype)
        else:
            ce = tn.cross_entropy(logits[:, j, :T - j], y_ids[:, j:], ignore_index=pad_id)
        if per_stream is not None:
            per_stream.append(float(ce.data))
        term = tn.mul(ce, float(alpha[j]))
        total = term if total is None else tn.add(total, term)
    return total


@dataclass
class TrainConfig:
    lr: float = 1e-3
    warmup: int = 100
    batch_size: int = 32
    steps: int = 1000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    log_every: int = 10
    context_side: str = "right"

    def learning_rate(self, step: int) -> float:
        """Linear warmup to ``lr`` over ``warmup`` steps (1-based), then constant."""
        if self.warmup <= 0:
            return self.lr
        return self.lr * min(1.0, step / self.warmup)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class TrainState:
    model: ProphetModel
    train: TrainConfig
    adam: AdamState
    step: int
    rng: np.random.Generator

    @classmethod
    def create(cls, model_config: ModelConfig, train_config: TrainConfig) -> "TrainState":
        model = ProphetModel(model_config, seed=train_config.seed)
        adam = AdamState(
            m={k: np.zeros_like(p.data) for k, p in model.params.items()},
            v={k: np.zeros_like(p.data) for k, p in model.params.items()},
        )
        rng = np.random.default_rng(train_config.seed + 1)
        return cls(model, train_config, adam, 0, rng)


@dataclass
class StepStats:
    step: int
    loss: float
    stream_losses: list[float]
    lr: float


def _first_non_finite(named: dict[str, np.ndarray]) -> str | None:
    for name, arr in named.items():
        if arr is not None and not np.all(np.isfinite(arr)):
            return name
    return None


def train_step(batch: Batch, state: TrainState) -> StepStats:
    """One forward, backward and Adam update on ``batch``; mutates ``state``."""
    model, cfg = state.model, state.train
    model.zero_grad()
    model.training = True
    model.rng = state.rng
    try:
        logits = model.forward(batch.encoder_ids, batch.decoder_ids, batch.encoder_mask)
        streams: list[float] = []
        loss = future_ngram_loss(logits, batch.decoder_ids, model.config.alpha, PAD_ID, streams)
    finally:
        model.training = False
    if not np.isfinite(loss.data):
        bad = _first_non_finite({f"param {k}": p.data for k, p in model.params.items()})
        bad = bad or ("logits" if not np.all(np.isfinite(logits.data)) else "loss")
        raise NonFiniteError(f"non-finite loss at step {state.step + 1}; first non-finite tensor: {bad}")
    tn.backward(loss)
    bad = _first_non_finite({f"grad {k}": p.grad for k, p in model.params.items()})
    if bad:
        raise NonFiniteError(f"non-finite gradient at step {state.step + 1}; first non-finite tensor: {bad}")

    state.step += 1
    t = state.step
    lr = cfg.learning_rate(t)
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in model.params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m = state.adam.m[name]
        v = state.adam.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if lr != 0.0:
            update = lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
            p.data -= update.astype(p.data.dtype)
    return StepStats(t, float(loss.data), streams, lr)


def sample_batch(examples: Sequence[tuple[Sequence[int], Sequence[int]]], state: TrainState,
                 max_len: int) -> Batch:
    """Full batch in corpus order when it fits, else a draw without replacement."""
    n = len(examples)
    bs = state.train.batch_size
    if bs >= n:
        chosen = list(examples)
    else:
        idx = np.sort(state.rng.choice(n, size=bs, replace=False))
        chosen = [examples[i] for i in idx]
    return make_batch(chosen, max_len=max_len, pad_id=PAD_ID, context_side=state.train.context_side)


def train(state: TrainState, examples: Sequence[tuple[Sequence[int], Sequence[int]]], steps: int,
          on_step: Callable[[StepStats], None] | None = None) -> list[StepStats]:
    if not examples:
        raise ValueError("no training examples")
    history = []
    for _ in range(steps):
        b = sample_batch(examples, state, state.model.config.max_len)
        stats = train_step(b, state)
        history.append(stats)
        if on_step is not None:
            on_step(stats)
    return history


# checkpoints


@dataclass
class Checkpoint:
    format_version: int
    model_config: ModelConfig
    train_config: TrainConfig
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    step: int
    rng_state: dict


def checkpoint_from_state(state: TrainState) -> Checkpoint:
    return Checkpoint(
        FORMAT_VERSION,
        state.model.config,
        state.train,
        {k: p.data for k, p in state.model.params.items()},
        state.adam.m,
        state.adam.v,
        state.step,
        state.rng.bit_generator.state,
    )


def state_from_checkpoint(ckpt: Checkpoint, train_config: TrainConfig | None = None) -> TrainState:
    params = {k: Tensor(v.copy(), requires_grad=True, dtype=v.dtype) for k, v in ckpt.params.items()}
    model = ProphetModel(ckpt.model_config, params)
    adam = AdamState({k: v.copy() for k, v in ckpt.adam_m.items()}, {k: v.copy() for k, v in ckpt.adam_v.items()})
    bitgen = np.random.PCG64()
    bitgen.state = ckpt.rng_state
    return TrainState(model, train_config or ckpt.train_config, adam, ckpt.step, np.random.Generator(bitgen))


def save_checkpoint(path, state: TrainState | Checkpoint) -> None:
    """Layout: magic, u32 version, u32 manifest length, JSON manifest, u32 manifest
    CRC32, then little-endian IEEE-754 blobs at the offsets named in the manifest."""
    ckpt = state if isinstance(state, Checkpoint) else checkpoint_from_state(state)
    blobs = []
    for group, arrays in (("param", ckpt.params), ("adam_m", ckpt.adam_m), ("adam_v", ckpt.adam_v)):
        for name, arr in arrays.items():
            blobs.append((f"{group}/{name}", arr))
    entries = []
    payload = bytearray()
    for name, arr in blobs:
        dt = np.dtype(arr.dtype).newbyteorder("<")
        raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
        entries.append({"name": name, "dtype": dt.str, "shape": list(arr.shape),
                        "offset": len(payload), "nbytes": len(raw), "crc32": zlib.crc32(raw)})
        payload += raw
    manifest = {
        "model_config": ckpt.model_config.to_dict(),
        "train_config": asdict(ckpt.train_config),
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "blobs": entries,
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", ckpt.format_version, len(mbytes)))
        f.write(mbytes)
        f.write(struct.pack("<I", zlib.crc32(mbytes)))
        f.write(payload)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: header: bad magic")
    version, mlen = struct.unpack_from("<II", raw, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: header: unsupported format version {version} (expected {FORMAT_VERSION})")
    mstart = 16
    mend = mstart + mlen
    if mend + 4 > len(raw):
        raise CheckpointError(f"{path}: manifest: truncated")
    mbytes = raw[mstart:mend]
    (crc,) = struct.unpack_from("<I", raw, mend)
    if zlib.crc32(mbytes) != crc:
        raise CheckpointError(f"{path}: manifest: checksum mismatch")
    try:
        manifest = json.loads(mbytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: manifest: unreadable ({e})") from None
    data = raw[mend + 4:]
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    expected_end = 0
    for entry in manifest["blobs"]:
        name = entry["name"]
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(data):
            raise CheckpointError(f"{path}: blob {name}: truncated")
        chunk = data[start:start + nbytes]
        if zlib.crc32(chunk) != entry["crc32"]:
            raise CheckpointError(f"{path}: blob {name}: checksum mismatch")
        arr = np.frombuffer(chunk, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        group, _, key = name.partition("/")
        if group not in groups:
            raise CheckpointError(f"{path}: blob {name}: unknown group")
        groups[group][key] = arr.astype(arr.dtype.newbyteorder("="))
        expected_end = max(expected_end, start + nbytes)
    if expected_end != len(data):
        raise CheckpointError(f"{path}: payload: {len(data) - expected_end} unexpected trailing bytes")
    known = {f.name for f in fields(TrainConfig)}
    train_cfg = TrainConfig(**{k: v for k, v in manifest["train_config"].items() if k in known})
    return Checkpoint(version, ModelConfig.from_dict(manifest["model_config"]), train_cfg,
                      groups["param"], groups["adam_m"], groups["adam_v"],
                      manifest["step"], manifest["rng_state"])


# flat key=value config files

_MODEL_KEYS = {f.name: f for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name: f for f in fields(TrainConfig)}


def _coerce(key: str, value: str):
    if key == "alpha":
        return tuple(float(v) for v in value.replace(",", " ").split())
    if key in ("dtype", "context_side"):
        return value
    default = _MODEL_KEYS[key].default if key in _MODEL_KEYS else _TRAIN_KEYS[key].default
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    return float(value)


def parse_config(lines: Sequence[str]) -> tuple[dict, dict]:
    """Split ``key=value`` lines into ModelConfig and TrainConfig keyword dicts.

    Blank lines and ``#`` comments are skipped; unknown keys raise ValueError.
    """
    model_kw: dict = {}
    train_kw: dict = {}
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        if key in _MODEL_KEYS:
            model_kw[key] = _coerce(key, value)
        elif key in _TRAIN_KEYS:
            train_kw[key] = _coerce(key, value)
        else:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
    return model_kw, train_kw


def load_config(path) -> tuple[dict, dict]:
    return parse_config(Path(path).read_text(encoding="utf-8").splitlines())
