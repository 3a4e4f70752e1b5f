"""Greedy and beam-search decoding from the language-modelling stream.

Predicting streams j >= 1 are ignored at inference time. Ties are broken by
the lowest token id (and, across hypotheses, by the lexicographically smaller
id sequence) so every search is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import ProphetModel
from .tensor import log_softmax_array, no_grad
from .tokenizer import BOS_ID, EOS_ID, MASK_ID, PAD_ID

BANNED = (PAD_ID, MASK_ID, BOS_ID)

# Maps a batch of prefixes (generated ids, BOS excluded) to log-probabilities [K, V].
StepFn = Callable[[Sequence[Sequence[int]]], np.ndarray]


@dataclass(frozen=True)
class Hypothesis:
    ids: tuple[int, ...]
    logprob: float
    finished: bool


def length_normalized(logprob: float, length: int, length_norm: float) -> float:
    if length_norm == 0.0 or length == 0:
        return logprob
    return logprob / (length ** length_norm)


def beam_search(step_fn: StepFn, beam: int, max_out: int, length_norm: float = 1.0,
                eos_id: int = EOS_ID) -> list[tuple[list[int], float]]:
    """Generic beam search over a step function.

    Each round expands every live hypothesis by every token and keeps the
    ``beam`` best expansions by summed log-probability. Expansions ending in
    ``eos_id`` are finished and free their slot; live hypotheses still open at
    ``max_out`` are finished as they stand. Finished hypotheses are scored by
    ``logprob / length ** length_norm`` (length counts the EOS) and returned
    best first, EOS stripped.
    """
    if beam < 1:
        raise ValueError(f"beam must be >= 1, got {beam}")
    live = [Hypothesis((), 0.0, False)]
    finished: list[Hypothesis] = []
    for step in range(max_out):
        if not live:
            break
        logp = np.asarray(step_fn([h.ids for h in live]), dtype=np.float64)
        V = logp.shape[1]
        # candidate order: score desc, then parent rank, then token id
        totals = np.array([h.logprob for h in live])[:, None] + logp
        flat = totals.reshape(-1)
        finite = np.isfinite(flat)
        order = np.lexsort((np.arange(flat.size), -np.where(finite, flat, -np.inf)))
        order = [i for i in order if finite[i]][:beam]
        nxt = []
        for i in order:
            parent, tok = divmod(int(i), V)
            h = Hypothesis(live[parent].ids + (tok,), float(flat[i]), tok == eos_id)
            (finished if h.finished else nxt).append(h)
        live = nxt
    finished.extend(Hypothesis(h.ids, h.logprob, True) for h in live)

    def key(h):
        return (-length_normalized(h.logprob, len(h.ids), length_norm), h.ids)

    ranked = sorted(finished, key=key)[:beam]
    return [(_strip_eos(h.ids, eos_id), length_normalized(h.logprob, len(h.ids), length_norm)) for h in ranked]


def _strip_eos(ids: tuple[int, ...], eos_id: int) -> list[int]:
    return list(ids[:-1]) if ids and ids[-1] == eos_id else list(ids)


class _ModelStepper:
    """Step function backed by the model's incremental decoder cache."""

    def __init__(self, model: ProphetModel, x_ids: Sequence[int]):
        self.model = model
        x = np.asarray(x_ids, dtype=np.int64)[None]
        if x.shape[1] == 0:
            x = np.full((1, 1), PAD_ID)
            mask = np.zeros_like(x, dtype=bool)
            mask[0, 0] = True
        else:
            mask = np.ones_like(x, dtype=bool)
        with no_grad():
            h_enc = model.encode(x, mask)
        self.root = model.start_cache(h_enc, mask)
        self.caches: dict[tuple[int, ...], object] = {}
        self.logits: dict[tuple[int, ...], np.ndarray] = {}

    def _extend(self, prefix: tuple[int, ...]) -> np.ndarray:
        if prefix in self.logits:
            return self.logits[prefix]
        if prefix:
            self._extend(prefix[:-1])
            cache = self.model.reorder_cache(self.caches[prefix[:-1]], [0])
            token = prefix[-1]
        else:
            cache = self.model.reorder_cache(self.root, [0])
            token = BOS_ID
        out = self.model.decode_step([token], cache)[0, 0]
        self.caches[prefix] = cache
        self.logits[prefix] = out
        return out

    def __call__(self, prefixes):
        rows = []
        for p in prefixes:
            logp = log_softmax_array(self._extend(tuple(p)).astype(np.float64))
            logp[list(BANNED)] = -np.inf
            rows.append(logp)
        return np.stack(rows)


def beam_generate(model: ProphetModel, x_ids: Sequence[int], beam: int = 4, max_out: int = 64,
                  length_norm: float = 1.0) -> list[tuple[list[int], float]]:
    if beam < 1:
        raise ValueError(f"beam must be >= 1, got {beam}")
    max_out = min(max_out, model.config.max_len)
    return beam_search(_ModelStepper(model, x_ids), beam, max_out, length_norm)


def greedy_generate(model: ProphetModel, x_ids: Sequence[int], max_out: int = 64) -> list[int]:
    """Argmax decoding from [BOS] until [EOS] or ``max_out`` tokens; EOS is not returned."""
    step = _ModelStepper(model, x_ids)
    out: list[int] = []
    for _ in range(min(max_out, model.config.max_len)):
        logp = step([out])[0]
        tok = int(np.argmax(logp))  # first maximum = lowest id
        if tok == EOS_ID:
            break
        out.append(tok)
    return out
