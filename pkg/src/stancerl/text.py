"""Tokenization, vocabulary, embeddings, and the convolutional text encoder.

A text becomes a fixed-length id sequence (left-padded, truncated at the
end), each id maps to a trainable embedding row, and a bank of
convolution kernels per kernel size followed by ReLU and max-over-time
pooling produces a fixed-width vector.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, parameter
from .errors import ValidationError

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace-split tokens; empty text gives an empty list."""
    return text.lower().split()


def pad_truncate(ids: list[int], length: int) -> list[int]:
    """Clamp an id sequence to `length`: keep the first `length` ids when
    too long, left-pad with PAD when too short."""
    if length < 1:
        raise ValidationError(f"pad_truncate length must be >= 1, got {length}")
    if len(ids) >= length:
        return list(ids[:length])
    return [PAD_ID] * (length - len(ids)) + list(ids)


@dataclass
class Vocab:
    """Token to id table; id 0 is PAD, id 1 is UNK, real tokens start at 2."""

    tokens: list[str]
    token_to_id: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in tokens]

    @classmethod
    def from_tokens(cls, ordered_tokens: Iterable[str]) -> "Vocab":
        tokens = [PAD_TOKEN, UNK_TOKEN] + list(ordered_tokens)
        return cls(tokens=tokens, token_to_id={t: i for i, t in enumerate(tokens)})


def build_vocab(corpus: Iterable[str], min_count: int = 1) -> Vocab:
    """Vocabulary over whitespace tokens with frequency >= min_count,
    ordered by (frequency desc, token asc) for determinism."""
    if min_count < 1:
        raise ValidationError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    for text in corpus:
        counts.update(tokenize(text))
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocab.from_tokens(kept)


class EmbeddingTable:
    """Trainable V x d_w word vectors; the PAD row is zero and frozen."""

    def __init__(self, weights: Tensor):
        self.weights = weights
        mask = np.ones(weights.shape, dtype=bool)
        mask[PAD_ID] = False
        weights.grad_mask = mask

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def random_init(cls, vocab_size: int, dim: int, rng: np.random.Generator) -> "EmbeddingTable":
        # whole-table fan, like the other dense matrices; keeps fresh text
        # features small next to the stance vectors
        bound = np.sqrt(6.0 / (vocab_size + dim))
        w = rng.uniform(-bound, bound, size=(vocab_size, dim))
        w[PAD_ID] = 0.0
        return cls(parameter(w))

    def lookup(self, ids: list[int]) -> Tensor:
        return ad.take_rows(self.weights, ids, skip_row=PAD_ID)


def load_pretrained(path, vocab: Vocab, rng: np.random.Generator) -> EmbeddingTable:
    """Load word vectors from a text file: first line "V d_w", then one
    "token v1 ... v_dw" line per word.

    In-vocabulary rows are copied from the file; out-of-vocabulary rows
    (including UNK) are drawn uniform on +/- sqrt(6/d_w) from `rng`; the
    PAD row is zero.  All rows except PAD stay trainable.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2:
            raise ValidationError(f"{path}:1: expected header 'V d_w', got {header.strip()!r}")
        try:
            count, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValidationError(f"{path}:1: non-integer header fields") from None
        if dim < 1 or count < 0:
            raise ValidationError(f"{path}:1: invalid dimensions {count} x {dim}")

        bound = np.sqrt(6.0 / dim)
        w = rng.uniform(-bound, bound, size=(vocab.size, dim))
        w[PAD_ID] = 0.0
        seen = 0
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != dim + 1:
                raise ValidationError(
                    f"{path}:{lineno}: expected token plus {dim} values, got {len(fields)} fields")
            try:
                vec = np.array([float(v) for v in fields[1:]])
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: non-numeric vector entry") from None
            seen += 1
            idx = vocab.token_to_id.get(fields[0])
            if idx is not None and idx != PAD_ID:
                w[idx] = vec
        if seen != count:
            raise ValidationError(f"{path}: header promised {count} vectors, file has {seen}")
    return EmbeddingTable(parameter(w))


@dataclass
class EncoderParams:
    """One kernel bank per kernel size; each bank is (d/|sizes|, h, d_w)."""

    kernel_sizes: tuple[int, ...]
    banks: list[Tensor]

    @property
    def output_dim(self) -> int:
        return sum(b.shape[0] for b in self.banks)

    @classmethod
    def init(cls, output_dim: int, embed_dim: int, kernel_sizes: tuple[int, ...],
             rng: np.random.Generator) -> "EncoderParams":
        if output_dim % len(kernel_sizes) != 0:
            raise ValidationError(
                f"encoder width {output_dim} not divisible by {len(kernel_sizes)} kernel sizes")
        per_size = output_dim // len(kernel_sizes)
        banks = []
        for h in kernel_sizes:
            banks.append(ad.glorot_uniform(
                rng, (per_size, h, embed_dim), h * embed_dim, per_size))
        return cls(kernel_sizes=tuple(kernel_sizes), banks=banks)

    def tensors(self) -> dict[str, Tensor]:
        return {f"conv_h{h}": b for h, b in zip(self.kernel_sizes, self.banks)}


def encode_text(ids: list[int], emb: EmbeddingTable, enc: EncoderParams) -> Tensor:
    """Encode a padded id sequence into a 1 x d row vector.

    Per kernel size: convolve the embedded sequence with the whole bank,
    apply ReLU, max-pool over time; pooled features are concatenated
    grouped by kernel size then kernel index.  An all-PAD input encodes
    to exactly zero.
    """
    x = emb.lookup(ids)
    pooled = []
    for bank in enc.banks:
        feats = ad.relu(ad.conv1d_bank(x, bank))
        pooled.append(ad.reshape(ad.max_rows(feats), (1, bank.shape[0])))
    return ad.concat_cols(pooled)
