"""Chain-of-experts decoding strategies.

Each strategy sequences generator and classifier experts: generators propose
candidate texts, classifiers score them, and the argmax candidate (first
index on ties) feeds the next stage. Five strategies are provided:

* ``action_ranking``: sample N actions from context, keep the one the action
  classifier rates highest for the target orientation;
* ``abductive_refinement``: rank initial actions, rank N anticipated
  consequences of the winner, then re-generate actions conditioned on the
  best consequence and rank again;
* ``conseq_ranking``: sample N consequences of an action, keep the most
  plausible;
* ``iterative_refinement``: draft one consequence, label it plausible or
  implausible, and have a refiner rewrite the draft given that label;
* ``norm_synthetic``: anticipate the best consequence of both actions, then
  generate the norm that explains the moral contrast.

Every run returns the selected text plus a full trace of expert calls.
Provider failures abort the sample, never the batch: the partial trace is
kept with the error recorded.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

from . import providers, tasks
from .corpus import Story
from .providers import Candidate, DecodeParams, ProviderEndpoint, ProviderError
from .tasks import TaskSample

STRATEGY_ROLES = {
    "action_ranking": ("action_gen_context", "action_cls_context"),
    "abductive_refinement": (
        "action_gen_context",
        "action_cls_context",
        "conseq_gen_context_action",
        "conseq_cls_context_action",
        "action_gen_context_conseq",
        "action_cls_context_conseq",
    ),
    "conseq_ranking": ("conseq_gen_context_action", "conseq_cls_context_action"),
    "iterative_refinement": (
        "conseq_gen_context_action",
        "conseq_cls_context_action",
        "conseq_refiner",
    ),
    "norm_synthetic": ("conseq_gen_context_action", "conseq_cls_context_action", "norm_gen_full"),
}


class ChainError(Exception):
    """Configuration or per-sample input problems in a chain run."""


@dataclass(frozen=True)
class ChainConfig:
    strategy: str
    endpoints: dict[str, ProviderEndpoint]
    decode: DecodeParams = field(default_factory=DecodeParams)
    target_orientation: str = "n/a"
    judge: ProviderEndpoint | None = None

    def __post_init__(self):
        required = STRATEGY_ROLES.get(self.strategy)
        if required is None:
            raise ChainError(
                f"unknown strategy {self.strategy!r}; expected one of {sorted(STRATEGY_ROLES)}"
            )
        have = set(self.endpoints)
        if have != set(required):
            missing = sorted(set(required) - have)
            extra = sorted(have - set(required))
            raise ChainError(
                f"strategy {self.strategy!r} needs endpoints for exactly {sorted(required)}; "
                f"missing {missing}, unexpected {extra}"
            )


@dataclass
class TraceStep:
    role: str
    input_text: str
    candidates: list[Candidate]
    chosen_index: int


@dataclass
class PipelineTrace:
    sample_id: str
    steps: list[TraceStep]
    final_text: str
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def budget(self) -> tuple[int, int]:
        """(generated candidates, classifier calls) across all steps."""
        gen = sum(len(step.candidates) for step in self.steps)
        cls = sum(
            1 for step in self.steps for cand in step.candidates if cand.score is not None
        )
        return gen, cls


def rank_candidates(
    candidates: list[Candidate],
    classifier: ProviderEndpoint,
    grounding: str,
    target_label: str,
) -> tuple[list[Candidate], int]:
    """Score every candidate with the classifier's posterior for the target
    label and return the argmax index (lowest gen_index wins ties)."""
    if not candidates:
        raise ChainError("rank_candidates requires at least one candidate")
    best_index = 0
    best_score = -1.0
    for position, candidate in enumerate(candidates):
        distribution = providers.classify(classifier, tasks.cls_input(grounding, candidate.text))
        candidate.score = distribution.probs[target_label]
        if candidate.score > best_score:
            best_score = candidate.score
            best_index = position
    return candidates, best_index


# ---------------------------------------------------------------------------
# Per-sample input normalization


def _chain_input(sample, cfg: ChainConfig) -> tuple[str, dict[str, str], str]:
    """Extract (sample_id, story fields, orientation) from a Story or a
    TaskSample. TaskSample fields are recovered from its input template."""
    if isinstance(sample, Story):
        fields = {
            name: getattr(sample, name).strip()
            for name in (
                "norm",
                "situation",
                "intention",
                "moral_action",
                "immoral_action",
                "moral_consequence",
                "immoral_consequence",
            )
        }
        orientation = cfg.target_orientation
        if orientation in ("moral", "immoral"):
            fields["action"] = fields[f"{orientation}_action"]
        return sample.id, fields, orientation
    if isinstance(sample, TaskSample):
        fields = tasks.parse_gen_input(
            sample.task, sample.setting, sample.orientation, sample.input_text
        )
        orientation = (
            sample.orientation
            if sample.orientation in ("moral", "immoral")
            else cfg.target_orientation
        )
        return sample.sample_id, fields, orientation
    raise ChainError(f"unsupported sample type {type(sample).__name__}")


def _require(fields: dict[str, str], names: Sequence[str], sample_id: str) -> None:
    missing = [n for n in names if not fields.get(n)]
    if missing:
        raise ChainError(f"sample {sample_id!r} lacks required field(s): {', '.join(missing)}")


def _context_grounding(fields: dict[str, str], *extra: str) -> str:
    return " ".join([fields["norm"], fields["situation"], fields["intention"], *extra])


# ---------------------------------------------------------------------------
# Strategies


def _ranked_stage(
    steps: list[TraceStep],
    generator: ProviderEndpoint,
    classifier: ProviderEndpoint,
    prompt: str,
    grounding: str,
    target_label: str,
    decode: DecodeParams,
) -> str:
    candidates = providers.generate(generator, prompt, decode)
    scored, best = rank_candidates(candidates, classifier, grounding, target_label)
    steps.append(TraceStep(generator.role, prompt, scored, best))
    return scored[best].text


def run_action_ranking(sample, cfg: ChainConfig) -> tuple[str, PipelineTrace]:
    sample_id, fields, orientation = _chain_input(sample, cfg)
    _require(fields, ("norm", "situation", "intention"), sample_id)
    if orientation not in ("moral", "immoral"):
        raise ChainError(f"sample {sample_id!r}: action strategies need a moral/immoral target")
    steps: list[TraceStep] = []
    try:
        prompt = tasks.render_gen_input("action_gen", "context", orientation, fields)
        best = _ranked_stage(
            steps,
            cfg.endpoints["action_gen_context"],
            cfg.endpoints["action_cls_context"],
            prompt,
            _context_grounding(fields),
            orientation,
            cfg.decode,
        )
    except ProviderError as exc:
        return "", PipelineTrace(sample_id, steps, "", error=str(exc))
    return best, PipelineTrace(sample_id, steps, best)


def run_abductive_refinement(sample, cfg: ChainConfig) -> tuple[str, PipelineTrace]:
    sample_id, fields, orientation = _chain_input(sample, cfg)
    _require(fields, ("norm", "situation", "intention"), sample_id)
    if orientation not in ("moral", "immoral"):
        raise ChainError(f"sample {sample_id!r}: action strategies need a moral/immoral target")
    steps: list[TraceStep] = []
    try:
        prompt = tasks.render_gen_input("action_gen", "context", orientation, fields)
        initial_action = _ranked_stage(
            steps,
            cfg.endpoints["action_gen_context"],
            cfg.endpoints["action_cls_context"],
            prompt,
            _context_grounding(fields),
            orientation,
            cfg.decode,
        )
        conseq_prompt = tasks.render_gen_input(
            "conseq_gen", "context+action", orientation, {**fields, "action": initial_action}
        )
        best_conseq = _ranked_stage(
            steps,
            cfg.endpoints["conseq_gen_context_action"],
            cfg.endpoints["conseq_cls_context_action"],
            conseq_prompt,
            _context_grounding(fields, initial_action),
            "plausible",
            cfg.decode,
        )
        refined_prompt = tasks.render_gen_input(
            "action_gen",
            "context+consequence",
            orientation,
            {**fields, "consequence": best_conseq},
        )
        refined = _ranked_stage(
            steps,
            cfg.endpoints["action_gen_context_conseq"],
            cfg.endpoints["action_cls_context_conseq"],
            refined_prompt,
            _context_grounding(fields, best_conseq),
            orientation,
            cfg.decode,
        )
    except ProviderError as exc:
        return "", PipelineTrace(sample_id, steps, "", error=str(exc))
    return refined, PipelineTrace(sample_id, steps, refined)


def run_conseq_ranking(sample, cfg: ChainConfig) -> tuple[str, PipelineTrace]:
    sample_id, fields, orientation = _chain_input(sample, cfg)
    _require(fields, ("norm", "situation", "intention", "action"), sample_id)
    steps: list[TraceStep] = []
    try:
        prompt = tasks.render_gen_input("conseq_gen", "context+action", orientation, fields)
        best = _ranked_stage(
            steps,
            cfg.endpoints["conseq_gen_context_action"],
            cfg.endpoints["conseq_cls_context_action"],
            prompt,
            _context_grounding(fields, fields["action"]),
            "plausible",
            cfg.decode,
        )
    except ProviderError as exc:
        return "", PipelineTrace(sample_id, steps, "", error=str(exc))
    return best, PipelineTrace(sample_id, steps, best)


def run_iterative_refinement(sample, cfg: ChainConfig) -> tuple[str, PipelineTrace]:
    """Draft one consequence, classify it, and rewrite it with the refiner.

    The draft's plausibility label maps to the flag token at threshold 0.5
    (a score of exactly 0.5 counts as plausible).
    """
    sample_id, fields, orientation = _chain_input(sample, cfg)
    _require(fields, ("norm", "situation", "intention", "action"), sample_id)
    steps: list[TraceStep] = []
    single = replace(cfg.decode, n=1)
    try:
        draft_prompt = tasks.render_gen_input("conseq_gen", "context+action", orientation, fields)
        draft_candidates = providers.generate(
            cfg.endpoints["conseq_gen_context_action"], draft_prompt, single
        )
        scored, best = rank_candidates(
            draft_candidates,
            cfg.endpoints["conseq_cls_context_action"],
            _context_grounding(fields, fields["action"]),
            "plausible",
        )
        steps.append(TraceStep("conseq_gen_context_action", draft_prompt, scored, best))
        draft = scored[best]
        refine_prompt = tasks.render_refinement_input(
            fields["norm"],
            fields["situation"],
            fields["intention"],
            fields["action"],
            draft.text,
            plausible=draft.score >= 0.5,
        )
        refined = providers.generate(cfg.endpoints["conseq_refiner"], refine_prompt, single)
        steps.append(TraceStep("conseq_refiner", refine_prompt, refined, 0))
    except ProviderError as exc:
        return "", PipelineTrace(sample_id, steps, "", error=str(exc))
    final = refined[0].text
    return final, PipelineTrace(sample_id, steps, final)


def run_norm_synthetic(sample, cfg: ChainConfig) -> tuple[str, PipelineTrace]:
    """Predict the norm from both actions and their best anticipated
    consequences. Needs the full story context (including its norm) to build
    the consequence prompts, so story records are the natural input."""
    sample_id, fields, _ = _chain_input(sample, cfg)
    _require(
        fields, ("norm", "situation", "intention", "moral_action", "immoral_action"), sample_id
    )
    steps: list[TraceStep] = []
    best_conseq = {}
    try:
        for orientation in ("moral", "immoral"):
            action = fields[f"{orientation}_action"]
            prompt = tasks.render_gen_input(
                "conseq_gen", "context+action", orientation, {**fields, "action": action}
            )
            best_conseq[orientation] = _ranked_stage(
                steps,
                cfg.endpoints["conseq_gen_context_action"],
                cfg.endpoints["conseq_cls_context_action"],
                prompt,
                _context_grounding(fields, action),
                "plausible",
                cfg.decode,
            )
        norm_prompt = tasks.render_gen_input(
            "norm_gen",
            "context+actions+consequences",
            "n/a",
            {
                **fields,
                "moral_consequence": best_conseq["moral"],
                "immoral_consequence": best_conseq["immoral"],
            },
        )
        norm_candidates = providers.generate(
            cfg.endpoints["norm_gen_full"], norm_prompt, replace(cfg.decode, n=1)
        )
        steps.append(TraceStep("norm_gen_full", norm_prompt, norm_candidates, 0))
    except ProviderError as exc:
        return "", PipelineTrace(sample_id, steps, "", error=str(exc))
    final = norm_candidates[0].text
    return final, PipelineTrace(sample_id, steps, final)


_RUNNERS = {
    "action_ranking": run_action_ranking,
    "abductive_refinement": run_abductive_refinement,
    "conseq_ranking": run_conseq_ranking,
    "iterative_refinement": run_iterative_refinement,
    "norm_synthetic": run_norm_synthetic,
}


def run_chain(sample, cfg: ChainConfig) -> tuple[str, PipelineTrace]:
    return _RUNNERS[cfg.strategy](sample, cfg)


# ---------------------------------------------------------------------------
# Batch runs


def _judge_label(cfg: ChainConfig) -> str | None:
    if cfg.judge is None:
        return None
    if cfg.strategy in ("action_ranking", "abductive_refinement"):
        return cfg.target_orientation
    if cfg.strategy in ("conseq_ranking", "iterative_refinement"):
        return "plausible"
    return None  # norm outputs have no judge label


def run_batch(samples: Sequence, cfg: ChainConfig, workers: int = 1):
    """Run one strategy over many samples. Samples are independent and may
    run concurrently; output is ordered by sample id regardless of worker
    count. Returns (traces, summary)."""

    def one(sample) -> PipelineTrace:
        try:
            _, trace = run_chain(sample, cfg)
        except (ChainError, tasks.TaskError) as exc:
            sample_id = sample.id if isinstance(sample, Story) else sample.sample_id
            trace = PipelineTrace(sample_id, [], "", error=str(exc))
        return trace

    workers = max(1, workers)
    if workers == 1:
        traces = [one(s) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(one, samples))
    traces.sort(key=lambda t: t.sample_id)

    total_gen = total_cls = 0
    for trace in traces:
        gen, cls = trace.budget()
        total_gen += gen
        total_cls += cls
    summary = {
        "strategy": cfg.strategy,
        "samples": len(traces),
        "ok": sum(1 for t in traces if t.ok),
        "failed": sum(1 for t in traces if not t.ok),
        "gen_calls": total_gen,
        "cls_calls": total_cls,
        "calls": total_gen + total_cls,
    }
    label = _judge_label(cfg)
    if label is not None:
        satisfied = 0
        for trace in traces:
            if not trace.ok:
                continue
            distribution = providers.classify(cfg.judge, trace.final_text)
            if distribution.probs[label] > 0.5:
                satisfied += 1
        summary["satisfied"] = satisfied
        summary["satisfaction_rate"] = satisfied / len(traces) if traces else 0.0
    return traces, summary


# ---------------------------------------------------------------------------
# Trace serialization


def trace_to_record(trace: PipelineTrace) -> dict:
    return {
        "sample_id": trace.sample_id,
        "final_text": trace.final_text,
        "error": trace.error,
        "steps": [
            {
                "role": step.role,
                "input_text": step.input_text,
                "chosen_index": step.chosen_index,
                "candidates": [
                    {"text": c.text, "gen_index": c.gen_index, "score": c.score}
                    for c in step.candidates
                ],
            }
            for step in trace.steps
        ],
    }


def trace_from_record(record: dict) -> PipelineTrace:
    return PipelineTrace(
        sample_id=record["sample_id"],
        final_text=record["final_text"],
        error=record.get("error"),
        steps=[
            TraceStep(
                role=s["role"],
                input_text=s["input_text"],
                chosen_index=s["chosen_index"],
                candidates=[Candidate(**c) for c in s["candidates"]],
            )
            for s in record["steps"]
        ],
    )


def write_traces(traces: Sequence[PipelineTrace], path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for trace in traces:
            handle.write(json.dumps(trace_to_record(trace), ensure_ascii=False) + "\n")


def read_traces(path: str) -> list[PipelineTrace]:
    traces = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                traces.append(trace_from_record(json.loads(line)))
    return traces
