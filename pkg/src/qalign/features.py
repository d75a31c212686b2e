"""Fixed-length overlapping model features with start/end span labels.

Each feature packs ``[CLS] question [SEP] context-window [SEP] [PAD]*`` into
``max_length`` positions.  Long contexts are split into windows whose starts
advance by ``capacity - doc_stride`` tokens, where capacity is the room left
for context tokens; consecutive windows therefore share exactly
``doc_stride`` context tokens (the overlap convention used throughout this
package).  A window whose token-offset range does not fully contain the gold
answer gets the labels (0, 0), i.e. the [CLS] position.

Feature cache layout (little-endian, documented because the format is an
external interface):

    uint32 header_len | header JSON (utf-8) | N records, each:
        uint32 payload_len | payload

    payload := uint16 id_len | record id utf-8
             | uint16 t
             | t * uint32 token ids
             | t * uint8  attention mask
             | t * uint8  segment ids
             | t * (int32, int32) character offsets
             | uint16 start_label | uint16 end_label | uint32 window_start

The header JSON carries ``{"magic", "version", "vocab_sha256", "max_length",
"doc_stride", "count"}``; loading verifies the vocabulary hash and config.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import QaRecord
from .errors import InputError
from .rng import Xoshiro256StarStar
from .tokenizer import Vocab, tokenize

NO_OFFSET = (-1, -1)  # offset sentinel for non-context positions
_CACHE_MAGIC = "qalign-features"


class QuestionTooLongError(InputError):
    pass


class StrideGeometryError(InputError):
    """doc_stride >= context capacity: windows would never advance."""


@dataclass(frozen=True)
class FeatureConfig:
    """Windowing geometry: tokens per feature and overlap between windows."""

    max_length: int = 384
    doc_stride: int = 128

    def __post_init__(self):
        if self.max_length < 16:
            raise InputError(f"max_length must be >= 16, got {self.max_length}")
        if not 0 <= self.doc_stride < self.max_length:
            raise InputError(
                f"doc_stride must be in [0, max_length), got {self.doc_stride}"
            )


@dataclass(frozen=True)
class Feature:
    """One model-ready window of a record."""

    record_id: str
    ids: tuple[int, ...]
    attention_mask: tuple[int, ...]
    segment_ids: tuple[int, ...]
    offsets: tuple[tuple[int, int], ...]
    start_label: int
    end_label: int
    window_start: int


def build_features(record: QaRecord, vocab: Vocab, cfg: FeatureConfig) -> list[Feature]:
    """Window ``record`` into features; see the module docstring for geometry.

    Raises :class:`QuestionTooLongError` when the question plus the three
    special tokens leave no room for context, and
    :class:`StrideGeometryError` when ``doc_stride`` is not smaller than the
    context capacity.
    """
    question = tokenize(vocab, record.question)
    context = tokenize(vocab, record.context)
    capacity = cfg.max_length - len(question) - 3
    if capacity < 1:
        raise QuestionTooLongError(
            f"record {record.id!r}: question of {len(question)} tokens leaves no "
            f"context capacity at max_length={cfg.max_length}"
        )
    step = capacity - cfg.doc_stride
    if step < 1:
        raise StrideGeometryError(
            f"record {record.id!r}: doc_stride={cfg.doc_stride} >= capacity={capacity}"
        )

    answer_start = record.answer_start
    answer_last = answer_start + len(record.answer_text) - 1
    start_tok = _token_containing(context.offsets, answer_start)
    end_tok = _token_containing(context.offsets, answer_last)

    n_ctx = len(context)
    features = []
    window_start = 0
    while True:
        window_end = min(window_start + capacity, n_ctx)
        features.append(
            _pack_window(record, vocab, cfg, question, context,
                         window_start, window_end, start_tok, end_tok)
        )
        if window_end >= n_ctx:
            break
        window_start += step
    return features


def _token_containing(offsets, position: int) -> int | None:
    for i, (start, end) in enumerate(offsets):
        if start <= position < end:
            return i
    return None


def _pack_window(record, vocab, cfg, question, context,
                 window_start, window_end, start_tok, end_tok) -> Feature:
    ids = [vocab.cls_id] + list(question.ids) + [vocab.sep_id]
    segments = [0] * len(ids)
    offsets = [NO_OFFSET] * len(ids)
    ctx_base = len(ids)
    for tok in range(window_start, window_end):
        ids.append(context.ids[tok])
        segments.append(1)
        offsets.append(context.offsets[tok])
    ids.append(vocab.sep_id)
    segments.append(1)
    offsets.append(NO_OFFSET)
    mask = [1] * len(ids)

    pad = cfg.max_length - len(ids)
    ids.extend([vocab.pad_id] * pad)
    segments.extend([0] * pad)
    offsets.extend([NO_OFFSET] * pad)
    mask.extend([0] * pad)

    start_label = end_label = 0
    if (
        start_tok is not None
        and end_tok is not None
        and window_start <= start_tok
        and end_tok < window_end
    ):
        start_label = ctx_base + (start_tok - window_start)
        end_label = ctx_base + (end_tok - window_start)

    return Feature(
        record_id=record.id,
        ids=tuple(ids),
        attention_mask=tuple(mask),
        segment_ids=tuple(segments),
        offsets=tuple(offsets),
        start_label=start_label,
        end_label=end_label,
        window_start=window_start,
    )


def batch_features(
    features: list[Feature], batch_size: int, seed: int
) -> list[list[Feature]]:
    """Seeded shuffle then contiguous chunks; the final short batch is kept."""
    if batch_size < 1:
        raise InputError(f"batch_size must be >= 1, got {batch_size}")
    order = list(features)
    Xoshiro256StarStar(seed).shuffle(order)
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


@dataclass
class Batch:
    """Features stacked into arrays for the encoder."""

    ids: np.ndarray  # [n, t] int64
    attention_mask: np.ndarray  # [n, t] float64 of 0/1
    segment_ids: np.ndarray  # [n, t] int64
    start_labels: np.ndarray  # [n] int64
    end_labels: np.ndarray  # [n] int64
    features: list[Feature]

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def stack_batch(features: list[Feature]) -> Batch:
    if not features:
        raise InputError("cannot stack an empty feature list")
    return Batch(
        ids=np.array([f.ids for f in features], dtype=np.int64),
        attention_mask=np.array([f.attention_mask for f in features], dtype=np.float64),
        segment_ids=np.array([f.segment_ids for f in features], dtype=np.int64),
        start_labels=np.array([f.start_label for f in features], dtype=np.int64),
        end_labels=np.array([f.end_label for f in features], dtype=np.int64),
        features=list(features),
    )


def save_feature_cache(
    features: list[Feature], vocab: Vocab, cfg: FeatureConfig, path: str | Path
) -> None:
    header = json.dumps(
        {
            "magic": _CACHE_MAGIC,
            "version": 1,
            "vocab_sha256": vocab.sha256(),
            "max_length": cfg.max_length,
            "doc_stride": cfg.doc_stride,
            "count": len(features),
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for feature in features:
            payload = _pack_feature(feature)
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)


def _pack_feature(feature: Feature) -> bytes:
    rid = feature.record_id.encode("utf-8")
    t = len(feature.ids)
    parts = [struct.pack("<H", len(rid)), rid, struct.pack("<H", t)]
    parts.append(struct.pack(f"<{t}I", *feature.ids))
    parts.append(struct.pack(f"<{t}B", *feature.attention_mask))
    parts.append(struct.pack(f"<{t}B", *feature.segment_ids))
    flat_offsets = [v for pair in feature.offsets for v in pair]
    parts.append(struct.pack(f"<{2 * t}i", *flat_offsets))
    parts.append(
        struct.pack("<HHI", feature.start_label, feature.end_label, feature.window_start)
    )
    return b"".join(parts)


def load_feature_cache(path: str | Path, vocab: Vocab, cfg: FeatureConfig) -> list[Feature]:
    """Load a cache written by :func:`save_feature_cache`.

    Rejects files whose vocabulary hash or windowing config differ from the
    ones supplied, since stale features would silently corrupt training.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        (header_len,) = struct.unpack_from("<I", raw, 0)
        header = json.loads(raw[4 : 4 + header_len].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: not a feature cache file ({exc})") from exc
    if header.get("magic") != _CACHE_MAGIC:
        raise InputError(f"{path}: not a feature cache file")
    if header["vocab_sha256"] != vocab.sha256():
        raise InputError(f"{path}: cache was built with a different vocabulary")
    if header["max_length"] != cfg.max_length or header["doc_stride"] != cfg.doc_stride:
        raise InputError(
            f"{path}: cache geometry ({header['max_length']}, {header['doc_stride']}) "
            f"differs from config ({cfg.max_length}, {cfg.doc_stride})"
        )
    features = []
    cursor = 4 + header_len
    for _ in range(header["count"]):
        (payload_len,) = struct.unpack_from("<I", raw, cursor)
        cursor += 4
        features.append(_unpack_feature(raw[cursor : cursor + payload_len]))
        cursor += payload_len
    return features


def _unpack_feature(payload: bytes) -> Feature:
    (id_len,) = struct.unpack_from("<H", payload, 0)
    cursor = 2
    record_id = payload[cursor : cursor + id_len].decode("utf-8")
    cursor += id_len
    (t,) = struct.unpack_from("<H", payload, cursor)
    cursor += 2
    ids = struct.unpack_from(f"<{t}I", payload, cursor)
    cursor += 4 * t
    mask = struct.unpack_from(f"<{t}B", payload, cursor)
    cursor += t
    segments = struct.unpack_from(f"<{t}B", payload, cursor)
    cursor += t
    flat = struct.unpack_from(f"<{2 * t}i", payload, cursor)
    cursor += 8 * t
    start_label, end_label, window_start = struct.unpack_from("<HHI", payload, cursor)
    offsets = tuple(zip(flat[0::2], flat[1::2]))
    return Feature(
        record_id=record_id,
        ids=tuple(ids),
        attention_mask=tuple(mask),
        segment_ids=tuple(segments),
        offsets=offsets,
        start_label=start_label,
        end_label=end_label,
        window_start=window_start,
    )
