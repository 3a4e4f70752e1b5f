"""Training-example construction: span masking, dialog expansion, batching, shards."""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .tokenizer import EOS_ID, MASK_ID, PAD_ID, SEP_ID, X_SEP_ID, Vocabulary, encode

BLOCK = 64
SPAN = 9
TAIL_PERCENT = 15
MAX_LEN = 512
SHARD_MAGIC = b"FNGRAM01"


class ShardError(ValueError):
    pass


@dataclass(frozen=True)
class MaskedSpanExample:
    encoder_ids: list[int]
    decoder_target_ids: list[int]
    span_boundaries: list[tuple[int, int]]


@dataclass(frozen=True)
class DialogSession:
    turns: tuple[str, ...]

    def __post_init__(self):
        if len(self.turns) < 2:
            raise ValueError(f"a dialog session needs at least 2 turns, got {len(self.turns)}")
        if any(not t for t in self.turns):
            raise ValueError("dialog session contains an empty utterance")


def tail_span_length(length: int) -> int:
    """Span length for a trailing partial block: max(1, round_half_up(0.15 * length))."""
    if length <= 0:
        return 0
    return max(1, (TAIL_PERCENT * length + 50) // 100)


def masked_count(length: int) -> int:
    return SPAN * (length // BLOCK) + tail_span_length(length % BLOCK)


def mask_spans(ids: Sequence[int], rng_seed: int, mask_id: int = MASK_ID) -> MaskedSpanExample:
    """Mask one contiguous span per 64-token block.

    Full blocks lose 9 tokens at a uniform offset in [0, 55]; a trailing partial
    block of length L loses ``tail_span_length(L)`` tokens. Each masked token is
    replaced by its own mask id so positions stay aligned with the original.
    """
    ids = [int(i) for i in ids]
    if not ids:
        raise ValueError("cannot mask an empty sequence")
    if mask_id in ids:
        raise ValueError("input already contains the mask token")
    rng = np.random.default_rng(rng_seed)
    enc = list(ids)
    target: list[int] = []
    spans: list[tuple[int, int]] = []
    for block_start in range(0, len(ids), BLOCK):
        block_len = min(BLOCK, len(ids) - block_start)
        span = SPAN if block_len == BLOCK else tail_span_length(block_len)
        start = block_start + int(rng.integers(0, block_len - span + 1))
        spans.append((start, span))
        target.extend(ids[start:start + span])
        enc[start:start + span] = [mask_id] * span
    return MaskedSpanExample(enc, target, spans)


def unmask(example: MaskedSpanExample) -> list[int]:
    """Put the decoder target back into the encoder gaps."""
    out = list(example.encoder_ids)
    pos = 0
    for start, length in example.span_boundaries:
        out[start:start + length] = example.decoder_target_ids[pos:pos + length]
        pos += length
    return out


def expand_dialog(session: DialogSession, vocab: Vocabulary) -> list[tuple[list[int], list[int]]]:
    """n turns -> n-1 (context, response) pairs; contexts join turns with [X_SEP]."""
    encoded = [encode(t, vocab) for t in session.turns]
    pairs = []
    context: list[int] = []
    for k in range(1, len(encoded)):
        if context:
            context = context + [X_SEP_ID]
        context = context + encoded[k - 1]
        pairs.append((list(context), encoded[k] + [EOS_ID]))
    return pairs


def join_sessions(sessions: Iterable[DialogSession | Sequence[str]], vocab: Vocabulary) -> list[int]:
    """One id stream: turns separated by [X_SEP], sessions separated by [SEP].

    Plain turn lists are accepted as well, so single-turn documents can be packed.
    """
    stream: list[int] = []
    for s in sessions:
        if stream:
            stream.append(SEP_ID)
        for i, turn in enumerate(getattr(s, "turns", s)):
            if i:
                stream.append(X_SEP_ID)
            stream.extend(encode(turn, vocab))
    return stream


def truncate(ids: Sequence[int], max_len: int, side: str) -> list[int]:
    """Drop tokens beyond ``max_len`` from the left (dialog contexts) or right."""
    ids = list(ids)
    if len(ids) <= max_len:
        return ids
    if side == "left":
        return ids[len(ids) - max_len:]
    if side == "right":
        return ids[:max_len]
    raise ValueError(f"unknown truncation side {side!r}")


@dataclass
class Batch:
    encoder_ids: np.ndarray
    encoder_mask: np.ndarray
    decoder_ids: np.ndarray
    decoder_mask: np.ndarray

    def __len__(self):
        return self.encoder_ids.shape[0]


def pad_matrix(rows: Sequence[Sequence[int]], pad_id: int = PAD_ID) -> tuple[np.ndarray, np.ndarray]:
    width = max((len(r) for r in rows), default=0)
    ids = np.full((len(rows), max(width, 1)), pad_id, dtype=np.int64)
    mask = np.zeros(ids.shape, dtype=bool)
    for i, r in enumerate(rows):
        ids[i, :len(r)] = r
        mask[i, :len(r)] = True
    return ids, mask


def batch(examples: Sequence[tuple[Sequence[int], Sequence[int]]], max_len: int = MAX_LEN,
          pad_id: int = PAD_ID, context_side: str = "right") -> Batch:
    """Right-pad (encoder, decoder) pairs into matrices with real-token masks.

    ``context_side="left"`` keeps the most recent part of over-long encoder
    inputs (dialog contexts); decoder targets are always cut on the right.
    """
    enc = [truncate(e, max_len, context_side) for e, _ in examples]
    dec = [truncate(d, max_len, "right") for _, d in examples]
    enc_ids, enc_mask = pad_matrix(enc, pad_id)
    dec_ids, dec_mask = pad_matrix(dec, pad_id)
    return Batch(enc_ids, enc_mask, dec_ids, dec_mask)


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Map preserving input order regardless of worker count."""
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def span_examples(documents: Sequence[Sequence[int]], seed: int, max_len: int = MAX_LEN,
                  workers: int = 1) -> list[tuple[list[int], list[int]]]:
    """Cut documents into ``max_len`` chunks and span-mask each with a per-chunk seed."""
    chunks = []
    for doc in documents:
        for start in range(0, len(doc), max_len):
            chunks.append(list(doc[start:start + max_len]))
    seeds = np.random.SeedSequence(seed).generate_state(len(chunks), dtype=np.uint32) if chunks else []
    jobs = list(zip(chunks, (int(s) for s in seeds)))
    masked = parallel_map(lambda job: mask_spans(job[0], job[1]), jobs, workers)
    return [(m.encoder_ids, m.decoder_target_ids) for m in masked]


def write_shard(path, examples: Iterable[tuple[Sequence[int], Sequence[int]]]) -> int:
    """Records are (u32 len, u32 ids...) for the encoder then the decoder, little-endian."""
    n = 0
    with open(path, "wb") as f:
        f.write(SHARD_MAGIC)
        for enc, dec in examples:
            for seq in (enc, dec):
                f.write(struct.pack("<I", len(seq)))
                f.write(np.asarray(seq, dtype="<u4").tobytes())
            n += 1
    return n


def read_shard(path) -> list[tuple[list[int], list[int]]]:
    raw = Path(path).read_bytes()
    if raw[:8] != SHARD_MAGIC:
        raise ShardError(f"{path}: bad magic header")
    pos = 8
    out = []

    def take_seq():
        nonlocal pos
        if pos + 4 > len(raw):
            raise ShardError(f"{path}: truncated length field at byte {pos}")
        (n,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        end = pos + 4 * n
        if end > len(raw):
            raise ShardError(f"{path}: truncated record at byte {pos}")
        seq = np.frombuffer(raw[pos:end], dtype="<u4").astype(np.int64).tolist()
        pos = end
        return seq

    while pos < len(raw):
        enc = take_seq()
        dec = take_seq()
        out.append((enc, dec))
    return out
