"""Dyadic words, their cubes, and vectorized code helpers.

A word of depth ``j`` over the alphabet ``{0,1}^d`` is stored as a tuple of
letters in ``[0, 2**d)``.  Bit ``i`` of a letter is the digit along axis ``i``.
The integer *code* of a word packs its letters with the first letter most
significant, so the code of a prefix is ``code >> d*(j - m)`` and a subtree is
a contiguous code range.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Iterator, Sequence

import numpy as np


@dataclass(frozen=True)
class DyadicWord:
    letters: tuple[int, ...]
    d: int = 1

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        object.__setattr__(self, "letters", tuple(int(a) for a in self.letters))
        top = 1 << self.d
        for a in self.letters:
            if not 0 <= a < top:
                raise ValueError(f"letter {a} outside alphabet of size {top}")

    @classmethod
    def root(cls, d: int = 1) -> "DyadicWord":
        return cls((), d)

    @classmethod
    def from_string(cls, s: str) -> "DyadicWord":
        """Parse a binary string such as ``"0110"`` as a d=1 word."""
        return cls(tuple(int(c) for c in s), 1)

    @classmethod
    def from_code(cls, code: int, depth: int, d: int = 1) -> "DyadicWord":
        mask = (1 << d) - 1
        letters = [(code >> (d * (depth - 1 - k))) & mask for k in range(depth)]
        return cls(tuple(letters), d)

    @classmethod
    def from_coords(cls, coords: Sequence[int], depth: int) -> "DyadicWord":
        d = len(coords)
        letters = []
        for k in range(depth):
            shift = depth - 1 - k
            letters.append(sum(((c >> shift) & 1) << i for i, c in enumerate(coords)))
        return cls(tuple(letters), d)

    @property
    def depth(self) -> int:
        return len(self.letters)

    def __len__(self) -> int:
        return len(self.letters)

    @property
    def code(self) -> int:
        c = 0
        for a in self.letters:
            c = (c << self.d) | a
        return c

    def coords(self) -> tuple[int, ...]:
        """Integer corner of the cube: ``x_w * 2**depth`` per axis."""
        out = [0] * self.d
        for a in self.letters:
            for i in range(self.d):
                out[i] = (out[i] << 1) | ((a >> i) & 1)
        return tuple(out)

    def anchor(self) -> tuple[float, ...]:
        scale = 2.0 ** -self.depth
        return tuple(c * scale for c in self.coords())

    def neighbors(self) -> list["DyadicWord"]:
        """Same-depth words whose closed cube touches this one (no wraparound)."""
        c = self.coords()
        n = 1 << self.depth
        out = []
        for off in product((-1, 0, 1), repeat=self.d):
            if not any(off):
                continue
            nc = [ci + oi for ci, oi in zip(c, off)]
            if all(0 <= x < n for x in nc):
                out.append(DyadicWord.from_coords(nc, self.depth))
        return out

    def prefix(self, m: int) -> "DyadicWord":
        return DyadicWord(self.letters[:m], self.d)

    def suffix_from(self, m: int) -> "DyadicWord":
        """The word with its first ``m`` letters removed (the shift applied m times)."""
        return DyadicWord(self.letters[m:], self.d)

    def __add__(self, other: "DyadicWord") -> "DyadicWord":
        if other.d != self.d:
            raise ValueError("cannot concatenate words of different dimensions")
        return DyadicWord(self.letters + other.letters, self.d)

    def __str__(self) -> str:
        if self.d == 1:
            return "".join(str(a) for a in self.letters) or "<root>"
        return "(" + ",".join(str(a) for a in self.letters) + ")"


def all_words(depth: int, d: int = 1) -> Iterator[DyadicWord]:
    for code in range(1 << (d * depth)):
        yield DyadicWord.from_code(code, depth, d)


def letters_of(codes: np.ndarray, depth: int, d: int) -> Iterator[np.ndarray]:
    """Yield the letter arrays of ``codes`` from first to last position."""
    codes = np.asarray(codes, dtype=np.uint64)
    mask = np.uint64((1 << d) - 1)
    for k in range(depth):
        yield (codes >> np.uint64(d * (depth - 1 - k))) & mask


def codes_to_coords(codes: np.ndarray, depth: int, d: int) -> np.ndarray:
    """Per-axis integer coordinates, shape ``(len(codes), d)``."""
    codes = np.asarray(codes, dtype=np.uint64)
    out = np.zeros((codes.size, d), dtype=np.int64)
    for k, letter in enumerate(letters_of(codes, depth, d)):
        shift = depth - 1 - k
        for i in range(d):
            out[:, i] |= ((letter >> np.uint64(i)) & np.uint64(1)).astype(np.int64) << shift
    return out


def coords_to_codes(coords: np.ndarray, depth: int) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.int64)
    d = coords.shape[1]
    codes = np.zeros(coords.shape[0], dtype=np.uint64)
    for k in range(depth):
        shift = depth - 1 - k
        letter = np.zeros(coords.shape[0], dtype=np.uint64)
        for i in range(d):
            letter |= ((coords[:, i] >> shift) & 1).astype(np.uint64) << np.uint64(i)
        codes = (codes << np.uint64(d)) | letter
    return codes
