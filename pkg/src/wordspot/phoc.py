"""Pyramidal Histogram of Characters (PHOC).

A word of length L is laid out on the unit interval, character ``i``
occupying ``[i/L, (i+1)/L]``.  Each pyramid level ``n`` cuts the interval
into ``n`` equal regions, and a character is assigned to a region when the
overlap covers at least ``overlap_threshold`` of the character's extent
(ties count).  All comparisons are done in integer arithmetic, so boundary
cases such as the middle letter of a three letter word are exact.

Bit layout is level-major, then region, then alphabet position.
"""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, EmptyWord

DEFAULT_ALPHABET = string.ascii_lowercase + string.digits
DEFAULT_LEVELS = (1, 2, 4, 8)


@dataclass(frozen=True)
class PhocConfig:
    alphabet: tuple[str, ...] = tuple(DEFAULT_ALPHABET)
    levels: tuple[int, ...] = DEFAULT_LEVELS
    overlap_threshold: float = 0.5
    lowercase: bool = True
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        alphabet = tuple(self.alphabet)
        levels = tuple(int(n) for n in self.levels)
        object.__setattr__(self, "alphabet", alphabet)
        object.__setattr__(self, "levels", levels)
        if not alphabet:
            raise ConfigError("alphabet must not be empty")
        if any(len(c) != 1 for c in alphabet):
            raise ConfigError("alphabet entries must be single characters")
        if len(set(alphabet)) != len(alphabet):
            raise ConfigError("alphabet characters must be unique")
        if not levels or any(n < 1 for n in levels):
            raise ConfigError("levels must be positive integers")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ConfigError("levels must be strictly increasing")
        if not 0 < self.overlap_threshold <= 1:
            raise ConfigError("overlap_threshold must lie in (0, 1]")
        object.__setattr__(self, "_index", {c: k for k, c in enumerate(alphabet)})

    @property
    def dimension(self) -> int:
        return len(self.alphabet) * sum(self.levels)

    @property
    def config_id(self) -> str:
        """Short stable digest identifying this configuration."""
        text = "|".join(
            ["".join(self.alphabet), ",".join(map(str, self.levels)),
             repr(Fraction(self.overlap_threshold)), str(self.lowercase)]
        )
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def char_index(self, c: str) -> int:
        return self._index[c]

    def level_offset(self, level_pos: int) -> int:
        return len(self.alphabet) * sum(self.levels[:level_pos])

    def to_dict(self) -> dict:
        return {
            "alphabet": "".join(self.alphabet),
            "levels": list(self.levels),
            "overlap_threshold": self.overlap_threshold,
            "lowercase": self.lowercase,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhocConfig":
        return cls(
            alphabet=tuple(d.get("alphabet", DEFAULT_ALPHABET)),
            levels=tuple(d.get("levels", DEFAULT_LEVELS)),
            overlap_threshold=float(d.get("overlap_threshold", 0.5)),
            lowercase=bool(d.get("lowercase", True)),
        )


@dataclass(frozen=True, eq=False)
class PhocVector:
    bits: np.ndarray
    config_id: str

    def __len__(self):
        return len(self.bits)

    def __str__(self):
        return "".join("1" if b else "0" for b in self.bits)

    def __eq__(self, other):
        if not isinstance(other, PhocVector):
            return NotImplemented
        return self.config_id == other.config_id and np.array_equal(self.bits, other.bits)


def normalize_transcription(raw: str, config: PhocConfig | None = None) -> str:
    """Lowercase (if configured) and drop every character outside the alphabet."""
    config = config or PhocConfig()
    text = raw.lower() if config.lowercase else raw
    return "".join(c for c in text if c in config._index)


def _regions(pos: int, length: int, level: int, num: int, den: int) -> Iterable[int]:
    # Scaled by length*level: character spans [pos*level, (pos+1)*level],
    # region r spans [r*length, (r+1)*length].
    lo, hi = pos * level, (pos + 1) * level
    for r in range(lo // length, min(level, (hi - 1) // length + 1)):
        overlap = min(hi, (r + 1) * length) - max(lo, r * length)
        if overlap * den >= num * level:
            yield r


def encode(word: str, config: PhocConfig | None = None) -> PhocVector:
    """PHOC bits for an already normalized word."""
    config = config or PhocConfig()
    if not word:
        raise EmptyWord("cannot encode an empty word")
    frac = Fraction(config.overlap_threshold).limit_denominator(10**9)
    num, den = frac.numerator, frac.denominator
    n_chars = len(config.alphabet)
    bits = np.zeros(config.dimension, dtype=np.uint8)
    length = len(word)
    for lp, level in enumerate(config.levels):
        offset = config.level_offset(lp)
        for pos, c in enumerate(word):
            k = config._index.get(c)
            if k is None:
                raise ValueError(f"character {c!r} is not in the alphabet; normalize first")
            for r in _regions(pos, length, level, num, den):
                bits[offset + r * n_chars + k] = 1
    return PhocVector(bits, config.config_id)


def encode_many(words: Sequence[str], config: PhocConfig | None = None) -> np.ndarray:
    config = config or PhocConfig()
    out = np.zeros((len(words), config.dimension), dtype=np.uint8)
    for i, w in enumerate(words):
        out[i] = encode(w, config).bits
    return out


def decode_index(index: int, config: PhocConfig) -> tuple[int, int, str]:
    """Inverse of the bit layout: ``index -> (level, region, character)``."""
    if not 0 <= index < config.dimension:
        raise IndexError(index)
    n_chars = len(config.alphabet)
    for lp, level in enumerate(config.levels):
        width = level * n_chars
        if index < width:
            return level, index // n_chars, config.alphabet[index % n_chars]
        index -= width
    raise AssertionError("unreachable")


def bit_index(level: int, region: int, char: str, config: PhocConfig) -> int:
    lp = config.levels.index(level)
    if not 0 <= region < level:
        raise IndexError(region)
    return config.level_offset(lp) + region * len(config.alphabet) + config.char_index(char)
