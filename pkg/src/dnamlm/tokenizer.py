"""k-mer vocabularies and the three tokenization strategies.

Overlapping tokenization slides a k-wide window at stride 1 (L-k+1 tokens),
non-overlapping uses stride k (floor(L/k) tokens, remainder dropped), and
same-length tiles the non-overlapping tokens cyclically until the output is
exactly as long as the overlapping encoding of the same sequence.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .corpus import BASE_ORDER, DnaSequence
from .errors import (
    ConfigInvalid,
    InconsistentOverlap,
    KOutOfRange,
    SequenceTooShort,
    SpecialTokenPresent,
)

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)
NUM_SPECIAL = len(SPECIAL_TOKENS)

MIN_K, MAX_K = 1, 8


class Strategy(str, Enum):
    OVERLAPPING = "overlapping"
    NONOVERLAPPING = "nonoverlapping"
    SAME_LENGTH = "samelength"


@dataclass
class Vocabulary:
    """Bijection between k-mers plus special tokens and contiguous ids.

    Ids 0-4 are [PAD], [UNK], [CLS], [SEP], [MASK]; the 4^k k-mers follow
    from id 5 in lexicographic order over A < C < G < T, so the total size
    is 4^k + 5 (4,101 for k = 6).
    """

    k: int
    token_to_id: dict[str, int] = field(repr=False)
    id_to_token: tuple[str, ...] = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    @property
    def first_kmer_id(self) -> int:
        return NUM_SPECIAL

    @property
    def num_kmers(self) -> int:
        return self.size - NUM_SPECIAL

    def id(self, token: str) -> int:
        return self.token_to_id[token]

    def token(self, token_id: int) -> str:
        return self.id_to_token[token_id]

    def kmer_id(self, kmer: str) -> int:
        """Id for a k-mer window; any window containing N maps to [UNK]."""
        return self.token_to_id.get(kmer, UNK_ID)

    def is_special(self, token_id: int) -> bool:
        return token_id < NUM_SPECIAL

    def to_json(self) -> str:
        return json.dumps(
            {"k": self.k, "special_tokens": list(SPECIAL_TOKENS), "ordering": "lex"}
        )

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        obj = json.loads(text)
        if obj.get("ordering") != "lex":
            raise ConfigInvalid(f"unsupported vocabulary ordering {obj.get('ordering')!r}")
        if tuple(obj.get("special_tokens", ())) != SPECIAL_TOKENS:
            raise ConfigInvalid("special token set does not match this library's layout")
        return build_vocab(int(obj["k"]))


def build_vocab(k: int) -> Vocabulary:
    """Build the deterministic k-mer vocabulary for 1 <= k <= 8."""
    if not MIN_K <= k <= MAX_K:
        raise KOutOfRange(f"k must be in [{MIN_K}, {MAX_K}], got {k}")
    tokens = list(SPECIAL_TOKENS)
    tokens.extend("".join(t) for t in itertools.product(BASE_ORDER, repeat=k))
    return Vocabulary(
        k=k,
        token_to_id={t: i for i, t in enumerate(tokens)},
        id_to_token=tuple(tokens),
    )


@dataclass
class TokenSequence:
    """Encoded ids plus the strategy and k that produced them."""

    ids: list[int]
    strategy: Strategy
    k: int

    def __len__(self) -> int:
        return len(self.ids)


def _check_length(seq: DnaSequence, k: int) -> None:
    if len(seq) < k:
        raise SequenceTooShort(f"sequence {seq.id!r} has {len(seq)} bases, need >= {k}")


def encode_overlapping(seq: DnaSequence, vocab: Vocabulary) -> TokenSequence:
    """Window size k, stride 1: token t covers bases [t, t+k)."""
    _check_length(seq, vocab.k)
    k, bases = vocab.k, seq.bases
    ids = [vocab.kmer_id(bases[i : i + k]) for i in range(len(bases) - k + 1)]
    return TokenSequence(ids=ids, strategy=Strategy.OVERLAPPING, k=k)


def encode_nonoverlapping(seq: DnaSequence, vocab: Vocabulary) -> TokenSequence:
    """Window size and stride both k; a trailing remainder < k is dropped."""
    _check_length(seq, vocab.k)
    k, bases = vocab.k, seq.bases
    ids = [vocab.kmer_id(bases[i : i + k]) for i in range(0, len(bases) - k + 1, k)]
    return TokenSequence(ids=ids, strategy=Strategy.NONOVERLAPPING, k=k)


def encode_same_length(seq: DnaSequence, vocab: Vocabulary) -> TokenSequence:
    """Non-overlapping tokens tiled cyclically to the overlapping length.

    For L = 2k this is the non-overlapping encoding repeated k-1 times; for
    general L the tokens are repeated cyclically and truncated so the output
    always has exactly L - k + 1 tokens.
    """
    base = encode_nonoverlapping(seq, vocab)
    target = len(seq) - vocab.k + 1
    ids = [base.ids[i % len(base.ids)] for i in range(target)]
    return TokenSequence(ids=ids, strategy=Strategy.SAME_LENGTH, k=vocab.k)


ENCODERS = {
    Strategy.OVERLAPPING: encode_overlapping,
    Strategy.NONOVERLAPPING: encode_nonoverlapping,
    Strategy.SAME_LENGTH: encode_same_length,
}


def encode(seq: DnaSequence, vocab: Vocabulary, strategy: Strategy) -> TokenSequence:
    return ENCODERS[Strategy(strategy)](seq, vocab)


def decode_overlapping(tokens: TokenSequence, vocab: Vocabulary) -> DnaSequence:
    """Invert an overlapping encoding.

    Requires k-mer ids only and adjacent tokens that overlap consistently
    (the k-1 suffix of token t equals the k-1 prefix of token t+1).
    """
    if tokens.strategy is not Strategy.OVERLAPPING:
        raise ConfigInvalid(f"cannot decode strategy {tokens.strategy.value!r} as overlapping")
    if not tokens.ids:
        raise SequenceTooShort("cannot decode an empty token sequence")
    kmers = []
    for tid in tokens.ids:
        if tid < vocab.first_kmer_id:
            raise SpecialTokenPresent(f"id {tid} ({vocab.token(tid)}) is not a k-mer")
        kmers.append(vocab.token(tid))
    for prev, cur in zip(kmers, kmers[1:]):
        if prev[1:] != cur[:-1]:
            raise InconsistentOverlap(f"{prev} does not overlap {cur} by k-1 bases")
    bases = "".join(km[0] for km in kmers) + kmers[-1][1:]
    return DnaSequence(id="decoded", bases=bases)


def wrap_for_model(
    tokens: TokenSequence | list[int], vocab: Vocabulary, max_len: int
) -> tuple[np.ndarray, np.ndarray]:
    """Frame token ids as [CLS] ids [SEP] and pad to ``max_len``.

    Ids beyond max_len - 2 are truncated.  Returns the framed id array and
    a parallel boolean mask that is True at real (non-PAD) positions.
    """
    if max_len < 3:
        raise ConfigInvalid(f"max_len must be >= 3, got {max_len}")
    ids = tokens.ids if isinstance(tokens, TokenSequence) else list(tokens)
    body = ids[: max_len - 2]
    framed = np.full(max_len, PAD_ID, dtype=np.int64)
    framed[0] = CLS_ID
    framed[1 : 1 + len(body)] = body
    framed[1 + len(body)] = SEP_ID
    real = np.zeros(max_len, dtype=bool)
    real[: len(body) + 2] = True
    return framed, real


def central_dinucleotide(kmer: str) -> str:
    """The two central bases of an even-length k-mer (bases k/2-1 and k/2)."""
    k = len(kmer)
    if k < 2 or k % 2:
        raise ConfigInvalid(f"central dinucleotide needs even k >= 2, got {k}")
    return kmer[k // 2 - 1 : k // 2 + 1]
