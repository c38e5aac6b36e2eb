"""Data model, validation, and line-delimited serialization for seven-part
branching narratives.

Each story pairs a norm-grounded context (norm, situation, intention) with a
moral and an immoral path, where a path is an action plus its consequence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields as dataclass_fields
from typing import Iterable, NamedTuple

# Narrative categories in canonical order. The context segment is the first
# three; each path is an (action, consequence) pair.
CATEGORIES = (
    "norm",
    "situation",
    "intention",
    "moral_action",
    "moral_consequence",
    "immoral_action",
    "immoral_consequence",
)

CONTEXT_FIELDS = ("norm", "situation", "intention")
MORAL_PATH_FIELDS = ("moral_action", "moral_consequence")
IMMORAL_PATH_FIELDS = ("immoral_action", "immoral_consequence")

SEGMENT_KINDS = ("context", "moral_path", "immoral_path")

_SEGMENT_FIELDS = {
    "context": CONTEXT_FIELDS,
    "moral_path": MORAL_PATH_FIELDS,
    "immoral_path": IMMORAL_PATH_FIELDS,
}


class CorpusError(Exception):
    """Raised for malformed record files and corpus-level invariant breaks."""


@dataclass(frozen=True)
class Story:
    """One branching narrative. All seven narrative fields must be non-empty
    after whitespace trimming; ids are unique within a corpus."""

    id: str
    norm: str
    situation: str
    intention: str
    moral_action: str
    moral_consequence: str
    immoral_action: str
    immoral_consequence: str


@dataclass(frozen=True)
class SegmentView:
    """An ordered slice of a story: the grounding context or one moral path."""

    kind: str
    sentences: tuple[str, ...]


@dataclass(frozen=True)
class CorpusReport:
    story_count: int
    mean_tokens_per_category: dict[str, float]


class Violation(NamedTuple):
    field: str
    rule: str


def validate_story(story: Story) -> list[Violation]:
    """Return all invariant violations for ``story`` (empty list iff valid).

    Violations are data, not failures: callers decide whether to reject.
    """
    violations = []
    if not story.id.strip():
        violations.append(Violation("id", "non-empty"))
    for field in CATEGORIES:
        if not getattr(story, field).strip():
            violations.append(Violation(field, "non-empty"))
    return violations


def segment(story: Story, kind: str) -> SegmentView:
    """Return the requested segment of a story.

    ``context`` is [norm, situation, intention]; ``moral_path`` and
    ``immoral_path`` are the corresponding [action, consequence] pairs.
    """
    try:
        field_names = _SEGMENT_FIELDS[kind]
    except KeyError:
        raise ValueError(f"unknown segment kind {kind!r}; expected one of {SEGMENT_KINDS}")
    return SegmentView(kind=kind, sentences=tuple(getattr(story, f) for f in field_names))


_STORY_FIELDS = tuple(f.name for f in dataclass_fields(Story))


def _story_from_record(record: dict, line_no: int) -> Story:
    if not isinstance(record, dict):
        raise CorpusError(f"line {line_no}: record is not an object")
    missing = [name for name in _STORY_FIELDS if name not in record]
    if missing:
        raise CorpusError(f"line {line_no}: missing field(s) {', '.join(missing)}")
    values = {}
    for name in _STORY_FIELDS:
        value = record[name]
        if not isinstance(value, str):
            raise CorpusError(f"line {line_no}: field {name!r} is not a string")
        values[name] = value
    story = Story(**values)
    violations = validate_story(story)
    if violations:
        detail = "; ".join(f"{v.field} ({v.rule})" for v in violations)
        raise CorpusError(f"line {line_no}: invalid story: {detail}")
    return story


def load_corpus(path: str) -> list[Story]:
    """Load a line-delimited story file (one JSON object per line, UTF-8).

    Raises CorpusError naming the offending line for malformed records,
    missing fields, invalid stories, and duplicate ids.
    """
    stories: list[Story] = []
    seen_ids: dict[str, int] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {line_no}: malformed record: {exc}") from exc
            story = _story_from_record(record, line_no)
            if story.id in seen_ids:
                raise CorpusError(
                    f"line {line_no}: duplicate id {story.id!r} (first seen on line {seen_ids[story.id]})"
                )
            seen_ids[story.id] = line_no
            stories.append(story)
    return stories


def save_corpus(stories: Iterable[Story], path: str) -> None:
    """Write stories as one JSON object per line, UTF-8, in input order."""
    with open(path, "w", encoding="utf-8") as handle:
        for story in stories:
            record = {name: getattr(story, name) for name in _STORY_FIELDS}
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def corpus_report(stories: list[Story]) -> CorpusReport:
    """Mean whitespace-token count per narrative category over the corpus."""
    if not stories:
        raise CorpusError("empty corpus: report undefined")
    totals = {category: 0 for category in CATEGORIES}
    for story in stories:
        for category in CATEGORIES:
            totals[category] += len(getattr(story, category).split())
    n = len(stories)
    return CorpusReport(
        story_count=n,
        mean_tokens_per_category={c: totals[c] / n for c in CATEGORIES},
    )
