"""Character-level vocabulary, fixed-length sequence encoding, and input embeddings.

A token is one Unicode scalar value.  Every encoded sequence starts with
[CLS], ends its real content with [SEP], and is padded with PAD up to the
configured length.  The model input for a sequence is the elementwise sum
of a token embedding, a segment embedding, and a position embedding.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError, IntegrityError
from .tensor import Tensor, add, take_rows

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
SEP_ID = 3

_RESERVED = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")


class Vocabulary:
    """Dense char->id table with four fixed reserved ids."""

    def __init__(self, chars=()):
        self._id_to_char: list[str] = list(_RESERVED)
        self._char_to_id: dict[str, int] = {}
        for ch in chars:
            self.add(ch)

    def add(self, ch: str) -> int:
        if len(ch) != 1:
            raise InputError(f"vocabulary entries are single characters, got {ch!r}")
        existing = self._char_to_id.get(ch)
        if existing is not None:
            return existing
        new_id = len(self._id_to_char)
        self._id_to_char.append(ch)
        self._char_to_id[ch] = new_id
        return new_id

    def id_of(self, ch: str) -> int:
        """Id of a character, or UNK for out-of-vocabulary characters."""
        return self._char_to_id.get(ch, UNK_ID)

    def char_of(self, i: int) -> str:
        if not 0 <= i < len(self._id_to_char):
            raise IntegrityError(f"id {i} outside vocabulary of size {self.size}")
        return self._id_to_char[i]

    @property
    def size(self) -> int:
        return len(self._id_to_char)

    def __contains__(self, ch: str) -> bool:
        return ch in self._char_to_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._id_to_char == other._id_to_char

    def serialize(self) -> str:
        """Canonical text form: one "id<TAB>entry" line, reserved entries first."""
        lines = [f"{i}\t{entry}" for i, entry in enumerate(self._id_to_char)]
        return "\n".join(lines) + "\n"

    def content_hash(self) -> bytes:
        return hashlib.sha256(self.serialize().encode("utf-8")).digest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.serialize())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        vocab = cls()
        for lineno, line in enumerate(text.splitlines()):
            parts = line.split("\t")
            if len(parts) != 2:
                raise InputError(f"vocabulary line {lineno + 1} is not 'id<TAB>char'")
            i, entry = int(parts[0]), parts[1]
            if i < len(_RESERVED):
                if entry != _RESERVED[i]:
                    raise InputError(f"vocabulary line {lineno + 1}: reserved entry {i} must be {_RESERVED[i]}")
                continue
            if i != vocab.size:
                raise InputError(f"vocabulary line {lineno + 1}: ids must be dense, expected {vocab.size}")
            vocab.add(entry)
        return vocab


def build_vocab(corpus) -> Vocabulary:
    """One id per distinct character in first-seen order."""
    texts = list(corpus)
    if not texts:
        raise InputError("cannot build a vocabulary from an empty corpus")
    vocab = Vocabulary()
    for text in texts:
        for ch in text:
            vocab.add(ch)
    return vocab


@dataclass(frozen=True)
class EncodedSequence:
    """Fixed-length id lists for one sentence plus its useful-token mask."""

    token_ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    position_ids: tuple[int, ...]
    useful_mask: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.token_ids)

    def __post_init__(self):
        n = len(self.token_ids)
        if not (len(self.segment_ids) == len(self.position_ids) == len(self.useful_mask) == n):
            raise IntegrityError("encoded sequence fields must share one length")


def encode(text: str, vocab: Vocabulary, max_len: int, segment: int = 0) -> EncodedSequence:
    """[CLS] + characters (truncated to max_len-2) + [SEP], padded with PAD.

    Unknown characters map to UNK.  ``segment`` labels every position; the
    default 0 is the single-sentence convention.
    """
    if max_len < 3:
        raise ConfigError(f"sequence length must be at least 3, got {max_len}")
    if segment not in (0, 1):
        raise ConfigError(f"segment id must be 0 or 1, got {segment}")
    content = [vocab.id_of(ch) for ch in text[: max_len - 2]]
    ids = [CLS_ID] + content + [SEP_ID]
    ids.extend([PAD_ID] * (max_len - len(ids)))
    mask = tuple(1 if t != PAD_ID else 0 for t in ids)
    return EncodedSequence(
        token_ids=tuple(ids),
        segment_ids=(segment,) * max_len,
        position_ids=tuple(range(max_len)),
        useful_mask=mask,
    )


@dataclass
class EmbeddingTables:
    """The three input lookup tables: token, segment, position."""

    token: Tensor
    segment: Tensor
    position: Tensor

    @property
    def dim(self) -> int:
        return self.token.shape[1]

    @staticmethod
    def init(vocab_size: int, max_len: int, dim: int, rng: np.random.Generator) -> "EmbeddingTables":
        def table(rows):
            return Tensor(rng.uniform(-0.05, 0.05, (rows, dim)), requires_grad=True)

        return EmbeddingTables(token=table(vocab_size), segment=table(2), position=table(max_len))


def embed(seq: EncodedSequence, tables: EmbeddingTables) -> Tensor:
    """Sum the three table lookups into the [L x dim] encoder input."""
    n_tokens = tables.token.shape[0]
    if max(seq.token_ids) >= n_tokens or min(seq.token_ids) < 0:
        raise IntegrityError(f"token id outside embedding table of {n_tokens} rows")
    if max(seq.segment_ids) > 1 or min(seq.segment_ids) < 0:
        raise IntegrityError("segment id outside the two-row segment table")
    if max(seq.position_ids) >= tables.position.shape[0]:
        raise IntegrityError(
            f"position id outside position table of {tables.position.shape[0]} rows"
        )
    out = take_rows(tables.token, seq.token_ids)
    out = add(out, take_rows(tables.segment, seq.segment_ids))
    out = add(out, take_rows(tables.position, seq.position_ids))
    return out
