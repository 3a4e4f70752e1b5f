"""Character and greedy longest-match subword vocabularies."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

PAD, UNK, MASK, SEP, X_SEP, BOS, EOS = "[PAD]", "[UNK]", "[MASK]", "[SEP]", "[X_SEP]", "[BOS]", "[EOS]"
SPECIALS = (PAD, UNK, MASK, SEP, X_SEP, BOS, EOS)
PAD_ID, UNK_ID, MASK_ID, SEP_ID, X_SEP_ID, BOS_ID, EOS_ID = range(len(SPECIALS))


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    mode: str = "char"
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in ("char", "subword"):
            raise VocabError(f"unknown vocabulary mode {self.mode!r}")
        if tuple(self.tokens[: len(SPECIALS)]) != SPECIALS:
            raise VocabError("vocabulary must start with the seven special tokens in fixed order")
        index = {}
        for i, tok in enumerate(self.tokens):
            if tok in index:
                raise VocabError(f"duplicate token {tok!r} at ids {index[tok]} and {i}")
            if "\n" in tok or tok == "":
                raise VocabError(f"token at id {i} is empty or contains a newline")
            index[tok] = i
        object.__setattr__(self, "_index", index)
        longest = max((len(t) for t in self.tokens[len(SPECIALS):]), default=1)
        object.__setattr__(self, "_longest", longest)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def token(self, i: int) -> str:
        return self.tokens[i]

    def save(self, path) -> None:
        text = "".join(t + "\n" for t in self.tokens)
        Path(path).write_text(text, encoding="utf-8")

    @classmethod
    def load(cls, path, mode: str = "char") -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines), mode)


def build_vocab(lines: Iterable[str], mode: str = "char", max_size: int = 9360,
                wordlist: Iterable[str] | None = None) -> Vocabulary:
    """Build a vocabulary from an iterable of text lines.

    Char mode keeps the ``max_size - 7`` most frequent characters (ties broken by
    code point). Subword mode does not learn an inventory: it takes ``wordlist``
    in order, skipping specials and duplicates, truncated to fit ``max_size``.
    """
    if max_size < len(SPECIALS) + 1:
        raise VocabError(f"max_size {max_size} cannot hold the 7 specials plus one token")
    if mode == "char":
        counts: Counter[str] = Counter()
        for line in lines:
            counts.update(line.replace("\t", "").replace("\n", ""))
        if not counts:
            raise VocabError("empty corpus")
        ranked = sorted(counts, key=lambda c: (-counts[c], c))
        chosen = [c for c in ranked if c not in SPECIALS][: max_size - len(SPECIALS)]
    elif mode == "subword":
        if wordlist is None:
            raise VocabError("subword mode needs a wordlist; inventory learning is not supported")
        seen = set(SPECIALS)
        chosen = []
        for w in wordlist:
            w = w.rstrip("\n")
            if w and w not in seen:
                seen.add(w)
                chosen.append(w)
        if not chosen:
            raise VocabError("empty wordlist")
        chosen = chosen[: max_size - len(SPECIALS)]
    else:
        raise VocabError(f"unknown vocabulary mode {mode!r}")
    return Vocabulary(SPECIALS + tuple(chosen), mode)


def encode(text: str, vocab: Vocabulary) -> list[int]:
    if vocab.mode == "char":
        return [vocab.id(c) for c in text]
    ids: list[int] = []
    for word in text.split():
        ids.extend(_longest_match(word, vocab))
    return ids


def _longest_match(word: str, vocab: Vocabulary) -> list[int]:
    ids = []
    pos = 0
    while pos < len(word):
        for end in range(min(len(word), pos + vocab._longest), pos, -1):
            piece = word[pos:end]
            if piece in vocab and piece not in SPECIALS:
                ids.append(vocab.id(piece))
                pos = end
                break
        else:
            # one [UNK] per unmatched character keeps positions monotone
            ids.append(UNK_ID)
            pos += 1
    return ids


def decode(ids: Iterable[int], vocab: Vocabulary, strip_specials: bool = False) -> str:
    out = []
    n = len(vocab)
    for i in ids:
        i = int(i)
        if not 0 <= i < n:
            raise IndexError(f"token id {i} outside vocabulary of size {n}")
        if strip_specials and i < len(SPECIALS):
            continue
        out.append(vocab.tokens[i])
    return "".join(out)
