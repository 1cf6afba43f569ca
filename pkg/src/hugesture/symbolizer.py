"""Map per-frame feature vectors to integer observation symbols."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .tracker import STATE_CODES, FeatureVector, _ENTRY

DICT_MAGIC = "# hugesture-dictionary 1"
UNK_TOKEN = "UNK"
EMPTY_TOKEN = "-"


def canonical_key(fv) -> tuple:
    """Sorted tuple of (state, vclass, rclass); track identity and order drop out."""
    if isinstance(fv, FeatureVector):
        return fv.key()
    return FeatureVector(tuple(fv)).key()


def key_text(key: tuple) -> str:
    return "".join(f"({s},{v},{r})" for s, v, r in key) or EMPTY_TOKEN


def parse_key(text: str) -> tuple:
    if text == EMPTY_TOKEN:
        return ()
    entries = tuple((s, int(v), int(r)) for s, v, r in _ENTRY.findall(text))
    if key_text(entries) != text or any(e[0] not in STATE_CODES for e in entries):
        raise ValueError(f"malformed dictionary key {text!r}")
    return entries


@dataclass(frozen=True)
class SymbolDictionary:
    keys: tuple                     # symbol id -> canonical key (UNK excluded)
    index: dict = field(compare=False, repr=False, default=None)

    def __post_init__(self):
        if self.index is None:
            object.__setattr__(self, "index", {k: i for i, k in enumerate(self.keys)})

    @property
    def alphabet_size(self) -> int:
        return len(self.keys) + 1

    @property
    def unk(self) -> int:
        return len(self.keys)

    def encode(self, key: tuple) -> int:
        return self.index.get(key, self.unk)

    def decode(self, symbol: int) -> Optional[tuple]:
        if not 0 <= symbol < self.alphabet_size:
            raise ValueError(f"symbol {symbol} out of range")
        return None if symbol == self.unk else self.keys[symbol]

    def to_text(self) -> str:
        lines = [DICT_MAGIC, f"alphabet_size {self.alphabet_size}"]
        lines += [f"{i} {key_text(k)}" for i, k in enumerate(self.keys)]
        lines.append(f"{self.unk} {UNK_TOKEN}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SymbolDictionary":
        lines = text.splitlines()
        if not lines or lines[0] != DICT_MAGIC:
            raise ValueError("not a hugesture dictionary")
        size = int(lines[1].split()[1])
        keys = []
        for i, line in enumerate(lines[2:2 + size - 1]):
            sid, tok = line.split(" ", 1)
            if int(sid) != i:
                raise ValueError(f"dictionary ids not dense at line {i + 3}")
            keys.append(parse_key(tok))
        if lines[1 + size] != f"{size - 1} {UNK_TOKEN}":
            raise ValueError("dictionary must end with the UNK symbol")
        return cls(tuple(keys))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


@dataclass
class SymbolSequence:
    symbols: np.ndarray
    label: Optional[str] = None
    subject: int = 0
    dictionary_hash: Optional[str] = None

    def __len__(self):
        return len(self.symbols)


def build_dictionary(training: Iterable) -> SymbolDictionary:
    """Assign ids to every distinct key in first-seen order.

    ``training`` is either a mapping/iterable of ``(path, feature_sequence)``
    pairs, traversed in path order, or a plain iterable of feature
    sequences taken in the given order.
    """
    items = list(training.items()) if isinstance(training, dict) else list(training)
    if not items:
        raise ValueError("empty training set")
    if all(isinstance(it, tuple) and len(it) == 2 and isinstance(it[0], str) for it in items):
        items = [seq for _, seq in sorted(items, key=lambda it: it[0])]
    seen = {}
    for seq in items:
        for fv in seq:
            k = canonical_key(fv)
            if k not in seen:
                seen[k] = len(seen)
    return SymbolDictionary(tuple(seen))


def symbolize(x, dictionary: SymbolDictionary, label=None, subject: int = 0) -> SymbolSequence:
    syms = np.fromiter((dictionary.encode(canonical_key(fv)) for fv in x), dtype=np.int64)
    return SymbolSequence(syms, label, subject, dictionary.hash)
