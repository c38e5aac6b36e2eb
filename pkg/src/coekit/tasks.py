"""Classification and generation sample construction for every grounding
setting, with byte-exact input templates.

Classification inputs are ``<CLS>grounding<SEP>target<SEP>`` with the
grounding sentences space-joined. Generation inputs interleave special
``<|...|>`` separator tokens with story fields, single-space joined, and end
with the token that cues the target. Field values are trimmed at build time
and must not contain any special token, which keeps every template
invertible; ``parse_gen_input`` and ``parse_cls_input`` recover the fields.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .corpus import Story

CLS_TOKEN = "<CLS>"
SEP_TOKEN = "<SEP>"

NRM = "<|NRM|>"
SIT = "<|SIT|>"
INT = "<|INT|>"
ACT = "<|ACT|>"
M_ACT = "<|M_ACT|>"
I_ACT = "<|I_ACT|>"
CSQ = "<|CSQ|>"
M_CSQ = "<|M_CSQ|>"
I_CSQ = "<|I_CSQ|>"
CSQ_PL = "<|CSQ_PL|>"
CSQ_IMPL = "<|CSQ_IMPL|>"

SPECIAL_TOKENS = (NRM, SIT, INT, ACT, M_ACT, I_ACT, CSQ, M_CSQ, I_CSQ, CSQ_PL, CSQ_IMPL)
ALL_MARKERS = SPECIAL_TOKENS + (CLS_TOKEN, SEP_TOKEN)

# Closed catalog of (task, setting) combinations.
SETTING_CATALOG = {
    "action_cls": ("action", "action+norm", "action+context", "action+context+consequence"),
    "conseq_cls": ("consequence+action", "consequence+context+action"),
    "action_gen": ("context", "context+consequence"),
    "conseq_gen": ("action", "context+action"),
    "norm_gen": ("actions", "context+actions", "context+actions+consequences"),
}

ORIENTATIONS = ("moral", "immoral")


class TaskError(Exception):
    """Raised for unknown task/setting combinations and template violations."""


@dataclass(frozen=True)
class TaskSample:
    """One formatted classification or generation instance.

    Classification samples carry a label and an empty target_text;
    generation samples carry a target_text and label "n/a".
    """

    sample_id: str
    story_id: str
    task: str
    setting: str
    orientation: str
    input_text: str
    label: str
    target_text: str


def _check_setting(task: str, setting: str) -> None:
    settings = SETTING_CATALOG.get(task)
    if settings is None:
        raise TaskError(f"unknown task {task!r}; expected one of {sorted(SETTING_CATALOG)}")
    if setting not in settings:
        raise TaskError(f"unknown setting {setting!r} for task {task!r}; expected one of {settings}")


def _clean_field(story: Story, field: str) -> str:
    value = getattr(story, field).strip()
    for marker in ALL_MARKERS:
        if marker in value:
            raise TaskError(
                f"story {story.id!r}: field {field!r} contains reserved marker {marker!r}"
            )
    return value


# ---------------------------------------------------------------------------
# Classification samples

_ACTION_CLS_GROUNDING = {
    "action": (),
    "action+norm": ("norm",),
    "action+context": ("norm", "situation", "intention"),
    # the consequence is the one following the classified action itself
    "action+context+consequence": ("norm", "situation", "intention", "consequence"),
}

_CONSEQ_CLS_GROUNDING = {
    "consequence+action": ("action",),
    "consequence+context+action": ("norm", "situation", "intention", "action"),
}


def cls_input(grounding: str, target: str) -> str:
    return f"{CLS_TOKEN}{grounding}{SEP_TOKEN}{target}{SEP_TOKEN}"


_CLS_PATTERN = re.compile(
    f"^{re.escape(CLS_TOKEN)}(.*?){re.escape(SEP_TOKEN)}(.+?){re.escape(SEP_TOKEN)}$"
)


def parse_cls_input(text: str) -> tuple[str, str]:
    """Split a classification input back into (grounding, target)."""
    match = _CLS_PATTERN.match(text)
    if match is None:
        raise TaskError(f"not a classification input: {text!r}")
    return match.group(1), match.group(2)


def build_action_cls(stories: Sequence[Story], setting: str) -> list[TaskSample]:
    """Two samples per story, one per action, sharing grounding sentences.

    The moral action is the positive class, the immoral one negative.
    """
    _check_setting("action_cls", setting)
    grounding_spec = _ACTION_CLS_GROUNDING[setting]
    samples = []
    for story in stories:
        for orientation in ORIENTATIONS:
            values = {
                "norm": "norm",
                "situation": "situation",
                "intention": "intention",
                "consequence": f"{orientation}_consequence",
            }
            grounding = " ".join(_clean_field(story, values[g]) for g in grounding_spec)
            target = _clean_field(story, f"{orientation}_action")
            samples.append(
                TaskSample(
                    sample_id=f"{story.id}:action_cls:{setting}:{orientation}",
                    story_id=story.id,
                    task="action_cls",
                    setting=setting,
                    orientation=orientation,
                    input_text=cls_input(grounding, target),
                    label="positive" if orientation == "moral" else "negative",
                    target_text="",
                )
            )
    return samples


def build_conseq_cls(stories: Sequence[Story], setting: str) -> list[TaskSample]:
    """Four samples per story: both true action/consequence pairs as positives
    and both cross-orientation pairs (consequence swapped onto the opposing
    action) as negatives."""
    _check_setting("conseq_cls", setting)
    grounding_spec = _CONSEQ_CLS_GROUNDING[setting]
    pairings = [
        ("moral", "moral", "positive"),
        ("immoral", "immoral", "positive"),
        ("moral", "immoral", "negative"),
        ("immoral", "moral", "negative"),
    ]
    samples = []
    for story in stories:
        for action_side, conseq_side, label in pairings:
            values = {
                "norm": "norm",
                "situation": "situation",
                "intention": "intention",
                "action": f"{action_side}_action",
            }
            grounding = " ".join(_clean_field(story, values[g]) for g in grounding_spec)
            target = _clean_field(story, f"{conseq_side}_consequence")
            polarity = "pos" if label == "positive" else "neg"
            samples.append(
                TaskSample(
                    sample_id=f"{story.id}:conseq_cls:{setting}:{action_side}:{polarity}",
                    story_id=story.id,
                    task="conseq_cls",
                    setting=setting,
                    orientation=action_side,
                    input_text=cls_input(grounding, target),
                    label=label,
                    target_text="",
                )
            )
    return samples


# ---------------------------------------------------------------------------
# Generation templates

# A template is a sequence of (token, slot) pairs plus a final cue token; a
# slot of None renders the token bare (used for the draft label flag).


def _gen_template(task: str, setting: str, orientation: str):
    if task == "action_gen":
        act = M_ACT if orientation == "moral" else I_ACT
        csq = M_CSQ if orientation == "moral" else I_CSQ
        context = [(NRM, "norm"), (SIT, "situation"), (INT, "intention")]
        if setting == "context":
            return context, act
        return context + [(csq, "consequence")], act
    if task == "conseq_gen":
        if setting == "action":
            return [(ACT, "action")], CSQ
        return [(NRM, "norm"), (SIT, "situation"), (INT, "intention"), (ACT, "action")], CSQ
    if task == "norm_gen":
        actions = [(M_ACT, "moral_action"), (I_ACT, "immoral_action")]
        context = [(SIT, "situation"), (INT, "intention")]
        if setting == "actions":
            return actions, NRM
        if setting == "context+actions":
            return context + actions, NRM
        return (
            context
            + [
                (M_ACT, "moral_action"),
                (M_CSQ, "moral_consequence"),
                (I_ACT, "immoral_action"),
                (I_CSQ, "immoral_consequence"),
            ],
            NRM,
        )
    raise TaskError(f"task {task!r} has no generation template")


def render_gen_input(task: str, setting: str, orientation: str, values: dict[str, str]) -> str:
    """Assemble a generation prompt from slot values (single-space joined)."""
    slots, final = _gen_template(task, setting, orientation)
    parts = []
    for token, slot in slots:
        parts.append(token)
        if slot is not None:
            parts.append(values[slot])
    parts.append(final)
    return " ".join(parts)


def _template_pattern(slots, final) -> re.Pattern:
    pieces = ["^"]
    for token, slot in slots:
        pieces.append(re.escape(token))
        pieces.append(r" (.+?) " if slot is not None else " ")
    pieces.append(re.escape(final))
    pieces.append("$")
    return re.compile("".join(pieces))


def parse_gen_input(task: str, setting: str, orientation: str, text: str) -> dict[str, str]:
    """Invert a generation prompt back into its slot values."""
    slots, final = _gen_template(task, setting, orientation)
    match = _template_pattern(slots, final).match(text)
    if match is None:
        raise TaskError(f"input does not match the {task}|{setting} template: {text!r}")
    names = [slot for _, slot in slots if slot is not None]
    return dict(zip(names, match.groups()))


def render_refinement_input(
    norm: str,
    situation: str,
    intention: str,
    action: str,
    draft: str,
    plausible: bool,
) -> str:
    """Prompt for the draft-refinement generator: the full context, the draft
    consequence, the classifier's plausibility flag token, then the cue."""
    label_token = CSQ_PL if plausible else CSQ_IMPL
    return " ".join(
        [NRM, norm, SIT, situation, INT, intention, ACT, action, CSQ, draft, label_token, CSQ]
    )


def build_gen_samples(stories: Sequence[Story], task: str, setting: str) -> list[TaskSample]:
    """Generation samples: two per story for action/consequence tasks (one per
    orientation), one per story for norm generation."""
    _check_setting(task, setting)
    if task.endswith("_cls"):
        raise TaskError(f"{task!r} is a classification task; use its dedicated builder")
    samples = []
    for story in stories:
        fields = {
            "norm": _clean_field(story, "norm"),
            "situation": _clean_field(story, "situation"),
            "intention": _clean_field(story, "intention"),
            "moral_action": _clean_field(story, "moral_action"),
            "immoral_action": _clean_field(story, "immoral_action"),
            "moral_consequence": _clean_field(story, "moral_consequence"),
            "immoral_consequence": _clean_field(story, "immoral_consequence"),
        }
        if task == "norm_gen":
            samples.append(
                TaskSample(
                    sample_id=f"{story.id}:norm_gen:{setting}:n/a",
                    story_id=story.id,
                    task=task,
                    setting=setting,
                    orientation="n/a",
                    input_text=render_gen_input(task, setting, "n/a", fields),
                    label="n/a",
                    target_text=fields["norm"],
                )
            )
            continue
        for orientation in ORIENTATIONS:
            values = dict(fields)
            values["action"] = fields[f"{orientation}_action"]
            values["consequence"] = fields[f"{orientation}_consequence"]
            target = values["action"] if task == "action_gen" else values["consequence"]
            samples.append(
                TaskSample(
                    sample_id=f"{story.id}:{task}:{setting}:{orientation}",
                    story_id=story.id,
                    task=task,
                    setting=setting,
                    orientation=orientation,
                    input_text=render_gen_input(task, setting, orientation, values),
                    label="n/a",
                    target_text=target,
                )
            )
    return samples


# ---------------------------------------------------------------------------
# Serialization


def write_samples(samples: Iterable[TaskSample], path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for sample in samples:
            handle.write(json.dumps(asdict(sample), ensure_ascii=False) + "\n")


def read_samples(path: str) -> list[TaskSample]:
    samples = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                samples.append(TaskSample(**json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise TaskError(f"line {line_no}: malformed sample record: {exc}") from exc
    return samples
