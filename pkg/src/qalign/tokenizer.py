"""Word-piece tokenization with bidirectional character-offset tracking.

The vocabulary reserves ids 0-3 for ``[PAD], [UNK], [CLS], [SEP]`` in that
order (also the on-disk line order).  Continuation pieces carry the ``##``
prefix.  There is no case folding and no unicode normalization: offsets must
point back into the exact source text so that answer spans survive the trip
through feature building and decoding.

Vocabulary induction is greedy frequency-based merging (BPE-style, restricted
to within-word adjacent pairs), deterministic for a fixed corpus order with
lexicographic tie-breaking among equally frequent merge candidates.  It
exists so desk-scale experiments need no external vocabulary file; loading a
pre-built file is supported too.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .errors import InputError

SPECIAL_PIECES = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")
PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3
CONTINUATION = "##"
MAX_WORD_LENGTH = 100  # code points; longer words become a single [UNK]


class VocabSizeError(InputError):
    """Requested vocabulary size cannot hold the specials plus the alphabet."""


@dataclass(frozen=True)
class Vocab:
    """Immutable piece table; ``pieces[i]`` is the piece with id ``i``."""

    pieces: tuple[str, ...]

    def __post_init__(self):
        if self.pieces[:4] != SPECIAL_PIECES:
            raise InputError(f"vocabulary must start with {SPECIAL_PIECES}")
        if len(set(self.pieces)) != len(self.pieces):
            raise InputError("vocabulary contains duplicate pieces")
        object.__setattr__(self, "_ids", {p: i for i, p in enumerate(self.pieces)})

    def __len__(self) -> int:
        return len(self.pieces)

    def piece_id(self, piece: str) -> int | None:
        return self._ids.get(piece)

    @property
    def pad_id(self) -> int:
        return PAD_ID

    @property
    def unk_id(self) -> int:
        return UNK_ID

    @property
    def cls_id(self) -> int:
        return CLS_ID

    @property
    def sep_id(self) -> int:
        return SEP_ID

    def sha256(self) -> str:
        """Content hash used to key feature caches to their vocabulary."""
        digest = hashlib.sha256()
        for piece in self.pieces:
            digest.update(piece.encode("utf-8"))
            digest.update(b"\n")
        return digest.hexdigest()


@dataclass(frozen=True)
class Encoding:
    """Token ids plus half-open (start, end) code-point offsets into the source.

    ``word_boundaries[i]`` marks the first piece of each source word.
    Special tokens (none are produced here; they are added during feature
    packing) carry the offset (0, 0).
    """

    ids: tuple[int, ...]
    offsets: tuple[tuple[int, int], ...]
    word_boundaries: tuple[bool, ...]

    def __len__(self) -> int:
        return len(self.ids)


def _word_symbols(word: str) -> tuple[str, ...]:
    return tuple(ch if i == 0 else CONTINUATION + ch for i, ch in enumerate(word))


def _merge_symbol(a: str, b: str) -> str:
    return a + b[len(CONTINUATION) :] if b.startswith(CONTINUATION) else a + b


def build_vocab(corpus: list[str], size: int) -> Vocab:
    """Induce a word-piece vocabulary of at most ``size`` pieces from ``corpus``.

    The initial alphabet holds every word-initial code point and every
    ``##``-prefixed continuation code point observed in the corpus, sorted
    lexicographically.  Merges then combine the most frequent within-word
    adjacent pair (ties broken by the lexicographically smallest pair) until
    the budget is exhausted or no pairs remain.

    Raises :class:`VocabSizeError` when ``size`` cannot hold the four special
    pieces plus the initial alphabet.
    """
    word_freq: Counter[str] = Counter()
    for text in corpus:
        word_freq.update(text.split())

    words = {word: _word_symbols(word) for word in word_freq}
    alphabet = sorted({sym for syms in words.values() for sym in syms})
    if size < len(SPECIAL_PIECES) + len(alphabet):
        raise VocabSizeError(
            f"size {size} is too small: need {len(SPECIAL_PIECES)} specials "
            f"+ {len(alphabet)} alphabet pieces"
        )

    pieces = list(SPECIAL_PIECES) + alphabet
    known = set(pieces)
    budget = size - len(pieces)
    while budget > 0:
        pair_freq: Counter[tuple[str, str]] = Counter()
        for word, syms in words.items():
            freq = word_freq[word]
            for a, b in zip(syms, syms[1:]):
                pair_freq[(a, b)] += freq
        if not pair_freq:
            break
        best = min(pair_freq, key=lambda p: (-pair_freq[p], p))
        merged = _merge_symbol(*best)
        for word, syms in words.items():
            if best[0] not in syms:
                continue
            out = []
            i = 0
            while i < len(syms):
                if i + 1 < len(syms) and (syms[i], syms[i + 1]) == best:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            words[word] = tuple(out)
        if merged not in known:  # distinct pairs can merge to the same text
            pieces.append(merged)
            known.add(merged)
            budget -= 1
    return Vocab(tuple(pieces))


def _iter_words(text: str):
    """Yield (start, end) code-point spans of whitespace-delimited words."""
    start = None
    for i, ch in enumerate(text):
        if ch.isspace():
            if start is not None:
                yield start, i
                start = None
        elif start is None:
            start = i
    if start is not None:
        yield start, len(text)


def tokenize(vocab: Vocab, text: str) -> Encoding:
    """Greedy longest-match-first word-piece segmentation of ``text``.

    Each whitespace-delimited word is segmented independently; a word with no
    valid segmentation (or longer than :data:`MAX_WORD_LENGTH`) becomes a
    single ``[UNK]`` whose offsets cover the whole word.  Total function: any
    input produces an encoding.
    """
    ids: list[int] = []
    offsets: list[tuple[int, int]] = []
    boundaries: list[bool] = []
    for w_start, w_end in _iter_words(text):
        word = text[w_start:w_end]
        if len(word) > MAX_WORD_LENGTH:
            pieces = None
        else:
            pieces = _segment_word(vocab, word)
        if pieces is None:
            ids.append(vocab.unk_id)
            offsets.append((w_start, w_end))
            boundaries.append(True)
            continue
        for i, (piece_id, p_start, p_end) in enumerate(pieces):
            ids.append(piece_id)
            offsets.append((w_start + p_start, w_start + p_end))
            boundaries.append(i == 0)
    return Encoding(tuple(ids), tuple(offsets), tuple(boundaries))


def _segment_word(vocab: Vocab, word: str):
    """Return [(id, start, end), ...] within-word pieces, or None if unmatchable."""
    pieces = []
    start = 0
    n = len(word)
    while start < n:
        matched = None
        for end in range(n, start, -1):
            candidate = word[start:end]
            if start > 0:
                candidate = CONTINUATION + candidate
            piece_id = vocab.piece_id(candidate)
            if piece_id is not None:
                matched = (piece_id, start, end)
                break
        if matched is None:
            return None
        pieces.append(matched)
        start = matched[2]
    return pieces


def save_vocab(vocab: Vocab, path: str | Path) -> None:
    """One piece per line; the line number is the id."""
    with open(path, "w", encoding="utf-8") as fh:
        for piece in vocab.pieces:
            fh.write(piece + "\n")


def load_vocab(path: str | Path) -> Vocab:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"vocabulary file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        pieces = tuple(line.rstrip("\n") for line in fh)
    if len(pieces) < 4 or pieces[:4] != SPECIAL_PIECES:
        raise InputError(
            f"{path}: lines 0-3 must be {', '.join(SPECIAL_PIECES)} in that order"
        )
    return Vocab(pieces)
