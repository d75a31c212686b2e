"""Answer-span decoding across a record's windows and Jaccard scoring.

Decoding is the usual n-best post-processing: over every window of a record,
take the top ``n_best`` start and end positions restricted to context tokens,
keep pairs with ``start <= end`` and ``end - start < max_answer_tokens``,
score each pair by the sum of its two logits, and map the winner through the
offset table to a context substring.  Ties break to the earlier character
start, then the shorter span.  If no valid pair exists the prediction is the
empty string.

Jaccard is computed over the *sets* of whitespace-separated words and is
returned as an exact :class:`fractions.Fraction`, so report aggregates
satisfy their identities (overall == mean of per-record scores == the
count-weighted mean of per-language means) exactly, not within a tolerance.
Two empty texts score 1; exactly one empty scores 0.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .corpus import QaRecord
from .encoder import EncoderConfig, forward
from .errors import InputError
from .features import Feature, FeatureConfig, build_features, stack_batch
from .tokenizer import Vocab


@dataclass(frozen=True)
class DecodeConfig:
    n_best: int = 20
    max_answer_tokens: int = 30

    def __post_init__(self):
        if self.n_best < 1 or self.max_answer_tokens < 1:
            raise InputError("n_best and max_answer_tokens must be >= 1")


def decode_answer(
    features: list[Feature],
    start_logits: np.ndarray,
    end_logits: np.ndarray,
    cfg: DecodeConfig,
    context: str,
) -> str:
    """Best answer substring of ``context`` given per-window logits.

    ``start_logits``/``end_logits`` are [n_windows, max_length] arrays aligned
    with ``features``.
    """
    if len(features) != len(start_logits) or len(features) != len(end_logits):
        raise InputError("logits are not aligned with the feature windows")
    best = None  # (-score, char_start, char_len) minimized
    for feature, s_row, e_row in zip(features, start_logits, end_logits):
        positions = [i for i, off in enumerate(feature.offsets) if off != (-1, -1)]
        if not positions:
            continue
        starts = sorted(positions, key=lambda i: (-s_row[i], i))[: cfg.n_best]
        ends = sorted(positions, key=lambda i: (-e_row[i], i))[: cfg.n_best]
        for s in starts:
            for e in ends:
                if s > e or e - s >= cfg.max_answer_tokens:
                    continue
                char_start = feature.offsets[s][0]
                char_end = feature.offsets[e][1]
                key = (-(s_row[s] + e_row[e]), char_start, char_end - char_start)
                if best is None or key < best:
                    best = key
    if best is None:
        return ""
    _, char_start, char_len = best
    return context[char_start : char_start + char_len]


def jaccard(pred: str, gold: str) -> Fraction:
    """|A ∩ B| / |A ∪ B| over word sets; exact rational in [0, 1]."""
    a = set(pred.split())
    b = set(gold.split())
    if not a and not b:
        return Fraction(1)
    union = len(a | b)
    if union == 0:
        return Fraction(1)
    return Fraction(len(a & b), union)


@dataclass
class JaccardReport:
    """Exact per-record, per-language, and overall Jaccard scores."""

    overall: Fraction
    per_language: dict[str, Fraction]
    per_record: dict[str, Fraction]
    predictions: dict[str, str] = field(default_factory=dict)
    record_language: dict[str, str] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "empty_convention": "both empty -> 1, one empty -> 0",
            "overall": float(self.overall),
            "per_language": {k: float(v) for k, v in sorted(self.per_language.items())},
            "per_record": {k: float(v) for k, v in sorted(self.per_record.items())},
        }


def aggregate_scores(
    per_record: dict[str, Fraction], record_language: dict[str, str]
) -> tuple[Fraction, dict[str, Fraction]]:
    if not per_record:
        raise InputError("empty evaluation set")
    overall = sum(per_record.values(), Fraction(0)) / len(per_record)
    by_language: dict[str, list[Fraction]] = {}
    for rid, score in per_record.items():
        by_language.setdefault(record_language[rid], []).append(score)
    per_language = {
        lang: sum(scores, Fraction(0)) / len(scores)
        for lang, scores in by_language.items()
    }
    return overall, per_language


def predict_answers(
    params: dict[str, np.ndarray],
    encoder_cfg: EncoderConfig,
    records: list[QaRecord],
    vocab: Vocab,
    feature_cfg: FeatureConfig,
    decode_cfg: DecodeConfig,
    batch_size: int = 32,
) -> dict[str, str]:
    """Decode one answer text per record; deterministic for fixed inputs."""
    all_features: list[Feature] = []
    windows_per_record: dict[str, list[int]] = {}
    for record in records:
        feats = build_features(record, vocab, feature_cfg)
        windows_per_record[record.id] = list(
            range(len(all_features), len(all_features) + len(feats))
        )
        all_features.extend(feats)

    start_rows = np.empty((len(all_features), feature_cfg.max_length))
    end_rows = np.empty((len(all_features), feature_cfg.max_length))
    for lo in range(0, len(all_features), batch_size):
        batch = stack_batch(all_features[lo : lo + batch_size])
        out = forward(params, encoder_cfg, batch.ids, batch.attention_mask, batch.segment_ids)
        start_rows[lo : lo + batch.size] = out.start_logits
        end_rows[lo : lo + batch.size] = out.end_logits

    predictions = {}
    for record in records:
        rows = windows_per_record[record.id]
        predictions[record.id] = decode_answer(
            [all_features[i] for i in rows],
            start_rows[rows],
            end_rows[rows],
            decode_cfg,
            record.context,
        )
    return predictions


def evaluate(
    params: dict[str, np.ndarray],
    encoder_cfg: EncoderConfig,
    records: list[QaRecord],
    vocab: Vocab,
    feature_cfg: FeatureConfig,
    decode_cfg: DecodeConfig | None = None,
    batch_size: int = 32,
) -> JaccardReport:
    """Decode every record and aggregate Jaccard scores exactly."""
    if not records:
        raise InputError("empty evaluation set")
    decode_cfg = decode_cfg or DecodeConfig()
    predictions = predict_answers(
        params, encoder_cfg, records, vocab, feature_cfg, decode_cfg, batch_size
    )
    per_record = {r.id: jaccard(predictions[r.id], r.answer_text) for r in records}
    record_language = {r.id: r.language for r in records}
    overall, per_language = aggregate_scores(per_record, record_language)
    return JaccardReport(
        overall=overall,
        per_language=per_language,
        per_record=per_record,
        predictions=predictions,
        record_language=record_language,
    )


def write_report(report: JaccardReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_per_record_csv(
    report: JaccardReport, records: list[QaRecord], path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "language", "gold", "pred", "jaccard"])
        for record in records:
            writer.writerow(
                [
                    record.id,
                    record.language,
                    record.answer_text,
                    report.predictions.get(record.id, ""),
                    float(report.per_record[record.id]),
                ]
            )


def write_eval_curve_csv(eval_log: list[dict], path: str | Path) -> None:
    """Plot-data CSV of (step, overall, one column per language)."""
    languages = sorted({lang for entry in eval_log for lang in entry["jaccard_per_language"]})
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "overall"] + languages)
        for entry in eval_log:
            writer.writerow(
                [entry["step"], entry["jaccard_overall"]]
                + [entry["jaccard_per_language"].get(lang, "") for lang in languages]
            )
