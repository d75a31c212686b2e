"""QA dataset ingestion, validation, and language-stratified splitting.

Records live in JSONL (one object per line) or CSV with the columns
``id, context, question, answer_text, answer_start, language``.  All character
positions are 0-based code-point offsets into ``context`` (not bytes: Indic
scripts are multi-byte in UTF-8, and annotation tools count code points).

Splitting is deterministic: within each language stratum the records are
shuffled by xoshiro256** seeded with ``seed XOR fnv1a64(language)`` and the
stratum's allocation is taken from the front of the shuffled order.  The test
split is drawn first from the full set, the validation split second from the
remaining pool; per-language allocations use largest-remainder rounding of
the proportional shares.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InputError
from .rng import MASK64, Xoshiro256StarStar, fnv1a64

logger = logging.getLogger(__name__)

RECORD_FIELDS = ("id", "context", "question", "answer_text", "answer_start", "language")


@dataclass(frozen=True)
class QaRecord:
    """One question/context/answer instance with a character-level answer start."""

    id: str
    context: str
    question: str
    answer_text: str
    answer_start: int
    language: str


class DatasetFormatError(InputError):
    """The file could not be parsed in the declared format."""


class RecordValidationError(InputError):
    """One or more records violate the record invariants.

    ``failures`` is a list of (record id, reason) pairs.
    """

    def __init__(self, failures: list[tuple[str, str]]):
        self.failures = failures
        lines = "; ".join(f"{rid}: {reason}" for rid, reason in failures[:10])
        more = "" if len(failures) <= 10 else f" (+{len(failures) - 10} more)"
        super().__init__(f"{len(failures)} invalid record(s): {lines}{more}")


class InsufficientRecordsError(InputError):
    pass


class EmptyStratumError(InputError):
    pass


def validate_record(record: QaRecord) -> list[str]:
    """Return the list of invariant violations for ``record`` (empty if valid)."""
    reasons = []
    if not isinstance(record.answer_start, int) or isinstance(record.answer_start, bool):
        return ["answer_start is not an integer"]
    if record.answer_start < 0:
        reasons.append("answer_start is negative")
    elif record.answer_start + len(record.answer_text) > len(record.context):
        reasons.append("answer extends past the end of the context")
    else:
        got = record.context[record.answer_start : record.answer_start + len(record.answer_text)]
        if got != record.answer_text:
            reasons.append(
                f"context slice at answer_start is {got!r}, expected {record.answer_text!r}"
            )
    return reasons


def record_to_dict(record: QaRecord) -> dict:
    return {
        "id": record.id,
        "context": record.context,
        "question": record.question,
        "answer_text": record.answer_text,
        "answer_start": record.answer_start,
        "language": record.language,
    }


def _record_from_mapping(obj: dict, where: str) -> QaRecord:
    missing = [k for k in RECORD_FIELDS if k not in obj or obj[k] is None]
    if missing:
        raise DatasetFormatError(f"{where}: missing field(s) {', '.join(missing)}")
    try:
        answer_start = int(str(obj["answer_start"]), 10)
    except ValueError:
        raise DatasetFormatError(f"{where}: answer_start {obj['answer_start']!r} is not an integer")
    return QaRecord(
        id=str(obj["id"]),
        context=str(obj["context"]),
        question=str(obj["question"]),
        answer_text=str(obj["answer_text"]),
        answer_start=answer_start,
        language=str(obj["language"]),
    )


def _iter_jsonl(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DatasetFormatError(f"{path}:{lineno}: expected a JSON object")
            yield _record_from_mapping(obj, f"{path}:{lineno}")


def _iter_csv(path: Path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DatasetFormatError(f"{path}: empty CSV file")
        missing = [k for k in RECORD_FIELDS if k not in reader.fieldnames]
        if missing:
            raise DatasetFormatError(f"{path}: missing column(s) {', '.join(missing)}")
        for rowno, row in enumerate(reader, start=2):  # row 1 is the header
            yield _record_from_mapping(row, f"{path}:row {rowno}")


def load_dataset(path: str | Path, format: str = "jsonl", strict: bool = False) -> list[QaRecord]:
    """Load and validate QA records from ``path``.

    Records failing validation (answer not present at ``answer_start``,
    duplicate id, ...) are rejected; each rejection is logged with the record
    id and reason.  With ``strict=True`` any rejection raises a
    :class:`RecordValidationError` carrying the full failure list instead.

    Raises :class:`DatasetFormatError` on unparseable input (with the line or
    row number) and ``InputError`` if the file is missing.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"dataset file not found: {path}")
    if format == "jsonl":
        rows = _iter_jsonl(path)
    elif format == "csv":
        rows = _iter_csv(path)
    else:
        raise InputError(f"unknown dataset format {format!r} (expected jsonl or csv)")

    records: list[QaRecord] = []
    failures: list[tuple[str, str]] = []
    seen_ids: set[str] = set()
    for record in rows:
        reasons = validate_record(record)
        if record.id in seen_ids:
            reasons.append("duplicate id")
        if reasons:
            for reason in reasons:
                logger.warning("rejected record %s: %s", record.id, reason)
            failures.append((record.id, "; ".join(reasons)))
            continue
        seen_ids.add(record.id)
        records.append(record)
    if failures and strict:
        raise RecordValidationError(failures)
    return records


def save_records(records: list[QaRecord], path: str | Path) -> None:
    """Write records as JSONL (UTF-8, one object per line, stable key order)."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_dict(record), ensure_ascii=False) + "\n")


@dataclass
class DatasetSplit:
    """Disjoint train/validation/test partition with per-language bookkeeping."""

    train: list[QaRecord]
    validation: list[QaRecord]
    test: list[QaRecord]
    seed: int
    strata: dict[str, dict[str, int]] = field(default_factory=dict)


def largest_remainder_allocation(sizes: dict[str, int], total: int) -> dict[str, int]:
    """Allocate ``total`` across keys proportionally to ``sizes``.

    Floors of the exact quotas are assigned first; the leftover units go to
    the largest fractional remainders (ties: larger stratum, then smaller
    key).  Every allocation differs from its exact quota by less than 1.
    """
    grand = sum(sizes.values())
    if total > grand:
        raise InsufficientRecordsError(f"cannot allocate {total} from {grand} records")
    if total == 0 or grand == 0:
        return {key: 0 for key in sizes}
    alloc = {}
    remainders = []
    assigned = 0
    for key, size in sizes.items():
        quota = total * size / grand
        base = int(quota)
        alloc[key] = base
        assigned += base
        remainders.append((-(quota - base), -size, key))
    for _, _, key in sorted(remainders)[: total - assigned]:
        alloc[key] += 1
    return alloc


def stratified_split(
    records: list[QaRecord], test_size: int, val_size: int, seed: int
) -> DatasetSplit:
    """Deterministic language-stratified split; see the module docstring.

    Raises :class:`InsufficientRecordsError` when ``test_size + val_size``
    does not leave a non-empty train split and :class:`EmptyStratumError`
    when a language stratum is empty.
    """
    if test_size < 0 or val_size < 0:
        raise InputError("split sizes must be non-negative")
    if test_size + val_size >= len(records):
        raise InsufficientRecordsError(
            f"test_size + val_size = {test_size + val_size} leaves no train split "
            f"for {len(records)} records"
        )

    strata: dict[str, list[QaRecord]] = {}
    for record in records:
        strata.setdefault(record.language, []).append(record)
    for language, group in strata.items():
        if not group:
            raise EmptyStratumError(f"language stratum {language!r} is empty")

    shuffled: dict[str, list[QaRecord]] = {}
    for language, group in strata.items():
        rng = Xoshiro256StarStar((seed ^ fnv1a64(language)) & MASK64)
        ordered = list(group)
        rng.shuffle(ordered)
        shuffled[language] = ordered

    languages = sorted(strata)
    sizes = {lang: len(strata[lang]) for lang in languages}
    test_alloc = largest_remainder_allocation(sizes, test_size)
    remaining = {lang: sizes[lang] - test_alloc[lang] for lang in languages}
    val_alloc = largest_remainder_allocation(remaining, val_size)

    train: list[QaRecord] = []
    validation: list[QaRecord] = []
    test: list[QaRecord] = []
    counts: dict[str, dict[str, int]] = {}
    for lang in languages:
        ordered = shuffled[lang]
        n_test, n_val = test_alloc[lang], val_alloc[lang]
        test.extend(ordered[:n_test])
        validation.extend(ordered[n_test : n_test + n_val])
        train.extend(ordered[n_test + n_val :])
        counts[lang] = {
            "train": sizes[lang] - n_test - n_val,
            "validation": n_val,
            "test": n_test,
        }
    return DatasetSplit(train=train, validation=validation, test=test, seed=seed, strata=counts)


def write_split(split: DatasetSplit, out_dir: str | Path) -> dict:
    """Write train/validation/test JSONL files plus a split manifest.

    Outputs are timestamp-free, so a rerun with identical inputs is
    byte-identical.  Returns the manifest dictionary.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_records(split.train, out_dir / "train.jsonl")
    save_records(split.validation, out_dir / "validation.jsonl")
    save_records(split.test, out_dir / "test.jsonl")
    manifest = {
        "seed": split.seed,
        "sizes": {
            "train": len(split.train),
            "validation": len(split.validation),
            "test": len(split.test),
        },
        "languages": split.strata,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
