"""Translated/transliterated record variants with answer relocation.

Real translation systems are external; this module defines the adapter port
plus three deterministic implementations: a file-backed parallel corpus
(pre-translated texts keyed by record id and field), reversible
pseudo-translators for tests (word-dictionary substitution and code-point
shifting), and identity.

After transforming context, question, and answer independently, the answer's
new character position is recovered by exact first-occurrence search in the
transformed context.  Records whose transformed answer no longer occurs in
the transformed context are dropped, never silently repaired, and every drop
is accounted for in the report.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import QaRecord, validate_record
from .errors import AdapterError, InputError

logger = logging.getLogger(__name__)

TRANSLATION = "translation"
TRANSLITERATION = "transliteration"
_FIELDS = ("context", "question", "answer")


class AdapterContractError(AdapterError):
    """An adapter broke a port invariant (e.g. transliteration changed word count)."""


class AggregateAdapterError(AdapterError):
    """One or more adapter failures collected over a batch augmentation."""

    def __init__(self, failures: list[str]):
        self.failures = failures
        head = "; ".join(failures[:5])
        more = "" if len(failures) <= 5 else f" (+{len(failures) - 5} more)"
        super().__init__(f"{len(failures)} adapter failure(s): {head}{more}")


class TextTransformer:
    """Port for deterministic text transforms between two languages.

    Implementations must be total and deterministic per configuration, map
    the empty string to the empty string, and (for ``kind=transliteration``)
    emit exactly one output word per input word.  ``record_id`` and ``field``
    give adapters keyed by record identity (the parallel-corpus adapter) the
    context they need; purely textual adapters ignore them.
    """

    kind: str
    source_language: str
    target_language: str

    def transform(self, text: str, record_id: str | None = None, field: str | None = None) -> str:
        raise NotImplementedError


@dataclass
class IdentityTransformer(TextTransformer):
    source_language: str
    target_language: str
    kind: str = TRANSLATION

    def transform(self, text, record_id=None, field=None):
        return text


@dataclass
class CodePointShiftTransformer(TextTransformer):
    """Shift every non-whitespace code point by ``offset``; reversible by -offset.

    Word boundaries are preserved, so the transform qualifies for either kind.
    """

    source_language: str
    target_language: str
    offset: int
    kind: str = TRANSLITERATION

    def transform(self, text, record_id=None, field=None):
        return "".join(ch if ch.isspace() else chr(ord(ch) + self.offset) for ch in text)


@dataclass
class WordMapTransformer(TextTransformer):
    """Per-word dictionary substitution; unmapped words pass through.

    With a bijective mapping whose values never collide with pass-through
    words, the transform is reversible via the inverted mapping.
    """

    source_language: str
    target_language: str
    mapping: dict[str, str]
    kind: str = TRANSLATION

    def transform(self, text, record_id=None, field=None):
        if not text:
            return ""
        # Rebuild around the original whitespace so word boundaries survive.
        pieces = []
        cursor = 0
        for start, end in _word_spans(text):
            pieces.append(text[cursor:start])
            pieces.append(self.mapping.get(text[start:end], text[start:end]))
            cursor = end
        pieces.append(text[cursor:])
        return "".join(pieces)


@dataclass
class FileBackedTransformer(TextTransformer):
    """Parallel-corpus adapter: texts pre-translated offline, keyed by (id, field).

    The corpus file is JSONL with objects
    ``{"id": str, "field": "context"|"question"|"answer", "lang": str, "text": str}``.
    A missing entry for a requested (id, field) is an adapter failure naming
    the record and field.
    """

    source_language: str
    target_language: str
    path: str | Path
    kind: str = TRANSLATION
    _table: dict[tuple[str, str], str] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        path = Path(self.path)
        if not path.is_file():
            raise AdapterError(f"parallel corpus file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise AdapterError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
                for key in ("id", "field", "lang", "text"):
                    if key not in obj:
                        raise AdapterError(f"{path}:{lineno}: missing key {key!r}")
                if obj["lang"] == self.target_language:
                    self._table[(obj["id"], obj["field"])] = obj["text"]

    def transform(self, text, record_id=None, field=None):
        if text == "":
            return ""
        key = (record_id, field)
        if key not in self._table:
            raise AdapterError(
                f"parallel corpus {self.path} has no entry for record {record_id!r} "
                f"field {field!r} in language {self.target_language!r}"
            )
        return self._table[key]


def _word_spans(text: str):
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


@dataclass(frozen=True)
class Dropped:
    """A variant that did not survive augmentation, with the reason why."""

    record_id: str
    reason: str
    hop: int | None = None


def relocate_answer(context_t: str, answer_t: str) -> int | None:
    """Start of the first exact occurrence of ``answer_t`` in ``context_t``.

    Code-point indexing; returns None when no occurrence exists.  When the
    answer occurs more than once, the first occurrence is taken and a warning
    is logged (the ambiguity is inherent to search-based relocation).
    """
    if not context_t or not answer_t:
        raise InputError("relocate_answer requires non-empty context and answer")
    position = context_t.find(answer_t)
    if position < 0:
        return None
    if context_t.find(answer_t, position + 1) >= 0:
        logger.warning("answer %r occurs more than once; taking the first occurrence", answer_t)
    return position


def augment_record(record: QaRecord, transformer: TextTransformer) -> QaRecord | Dropped:
    """Transform one record's context, question, and answer independently.

    The answer's position in the transformed context is recovered by
    :func:`relocate_answer`; when the search fails the record is dropped with
    reason ``answer-not-in-context``.  The id is left untouched (group
    assembly assigns the ``::<lang>`` suffix).
    """
    if record.language != transformer.source_language:
        raise InputError(
            f"transformer maps {transformer.source_language!r} -> "
            f"{transformer.target_language!r} but record {record.id!r} "
            f"is {record.language!r}"
        )
    texts = {}
    for field_name, value in (
        ("context", record.context),
        ("question", record.question),
        ("answer", record.answer_text),
    ):
        transformed = transformer.transform(value, record_id=record.id, field=field_name)
        if transformer.kind == TRANSLITERATION and len(transformed.split()) != len(value.split()):
            raise AdapterContractError(
                f"transliteration adapter {transformer.source_language}->"
                f"{transformer.target_language} changed the word count of "
                f"{field_name} for record {record.id!r}"
            )
        texts[field_name] = transformed
    if not texts["answer"] or not texts["context"]:
        return Dropped(record.id, "empty-transformed-text")
    position = relocate_answer(texts["context"], texts["answer"])
    if position is None:
        return Dropped(record.id, "answer-not-in-context")
    return QaRecord(
        id=record.id,
        context=texts["context"],
        question=texts["question"],
        answer_text=texts["answer"],
        answer_start=position,
        language=transformer.target_language,
    )


def pivot_chain(record: QaRecord, transformers: list[TextTransformer]) -> QaRecord | Dropped:
    """Apply a chain of transforms (e.g. source -> pivot -> target) hop by hop.

    A drop at any hop drops the whole chain, with the 1-based hop index in
    the reason.
    """
    if not transformers:
        raise InputError("pivot_chain requires at least one transformer")
    if transformers[0].source_language != record.language:
        raise InputError(
            f"chain starts at {transformers[0].source_language!r} but record "
            f"{record.id!r} is {record.language!r}"
        )
    for a, b in zip(transformers, transformers[1:]):
        if a.target_language != b.source_language:
            raise InputError(
                f"chain does not compose: hop target {a.target_language!r} "
                f"!= next hop source {b.source_language!r}"
            )
    current = record
    for hop, transformer in enumerate(transformers, start=1):
        result = augment_record(current, transformer)
        if isinstance(result, Dropped):
            return Dropped(record.id, f"{result.reason} (hop {hop})", hop=hop)
        current = result
    return current


@dataclass(frozen=True)
class AugmentPlan:
    """One augmentation route: records in ``source`` become ``target`` variants."""

    source: str
    target: str
    kind: str
    chain: tuple[TextTransformer, ...]


@dataclass
class TranslationGroup:
    """An original record linked to its surviving augmented variants.

    This is the unit of contrastive pair sampling.  Variant ids derive from
    the original id by the ``::<lang>`` suffix, so files are self-describing.
    """

    original: QaRecord
    variants: dict[str, QaRecord] = field(default_factory=dict)
    provenance: dict[str, str] = field(default_factory=dict)

    def members(self) -> list[QaRecord]:
        return [self.original] + [self.variants[lang] for lang in sorted(self.variants)]


@dataclass
class CellCounts:
    attempted: int = 0
    succeeded: int = 0
    dropped: int = 0


@dataclass
class AugmentReport:
    """Per (target language, kind) accounting; attempted == succeeded + dropped."""

    cells: dict[tuple[str, str], CellCounts] = field(default_factory=dict)
    drop_reasons: dict[str, str] = field(default_factory=dict)

    def cell(self, target: str, kind: str) -> CellCounts:
        return self.cells.setdefault((target, kind), CellCounts())

    def totals(self) -> CellCounts:
        total = CellCounts()
        for counts in self.cells.values():
            total.attempted += counts.attempted
            total.succeeded += counts.succeeded
            total.dropped += counts.dropped
        return total

    def to_json_dict(self) -> dict:
        return {
            "cells": {
                f"{target}/{kind}": vars(counts)
                for (target, kind), counts in sorted(self.cells.items())
            },
            "totals": vars(self.totals()),
            "drop_reasons": dict(sorted(self.drop_reasons.items())),
        }


def variant_id(original_id: str, language: str) -> str:
    return f"{original_id}::{language}"


def base_id(record_id: str) -> str:
    """Group key for a record id: the original id with any ::lang suffix removed."""
    return record_id.split("::", 1)[0]


def build_groups(
    records: list[QaRecord], plans: list[AugmentPlan]
) -> tuple[list[TranslationGroup], AugmentReport]:
    """Augment every record along every applicable plan.

    A plan applies to a record when the record's language matches the plan's
    source.  Surviving variants join the record's group; drops are counted
    with reasons keyed by variant id.  Adapter failures (as opposed to
    relocation drops) are collected and raised together as
    :class:`AggregateAdapterError`.
    """
    if not plans:
        raise InputError("build_groups requires at least one plan")
    groups = []
    report = AugmentReport()
    adapter_failures: list[str] = []
    for record in records:
        group = TranslationGroup(original=record)
        for plan in plans:
            if plan.source != record.language:
                continue
            if plan.target in group.variants:
                raise InputError(
                    f"duplicate plan target {plan.target!r} for source {plan.source!r}"
                )
            counts = report.cell(plan.target, plan.kind)
            counts.attempted += 1
            try:
                result = pivot_chain(record, list(plan.chain))
            except AdapterError as exc:
                counts.dropped += 1
                adapter_failures.append(str(exc))
                report.drop_reasons[variant_id(record.id, plan.target)] = f"adapter: {exc}"
                continue
            if isinstance(result, Dropped):
                counts.dropped += 1
                report.drop_reasons[variant_id(record.id, plan.target)] = result.reason
                continue
            variant = QaRecord(
                id=variant_id(record.id, plan.target),
                context=result.context,
                question=result.question,
                answer_text=result.answer_text,
                answer_start=result.answer_start,
                language=plan.target,
            )
            problems = validate_record(variant)
            if problems:  # defensive: relocation guarantees the invariant
                counts.dropped += 1
                report.drop_reasons[variant.id] = "; ".join(problems)
                continue
            counts.succeeded += 1
            group.variants[plan.target] = variant
            group.provenance[plan.target] = plan.kind
        groups.append(group)
    if adapter_failures:
        raise AggregateAdapterError(adapter_failures)
    return groups, report


def groups_from_records(records: list[QaRecord]) -> dict[str, TranslationGroup]:
    """Rebuild groups from a combined originals+variants record list.

    Relies on the ``::<lang>`` id convention; the kind information is not
    recoverable and is recorded as ``unknown``.
    """
    originals = {r.id: r for r in records if "::" not in r.id}
    groups = {rid: TranslationGroup(original=r) for rid, r in originals.items()}
    for record in records:
        if "::" not in record.id:
            continue
        base = base_id(record.id)
        if base not in groups:
            raise InputError(f"variant {record.id!r} has no original record {base!r}")
        groups[base].variants[record.language] = record
        groups[base].provenance[record.language] = "unknown"
    return groups
