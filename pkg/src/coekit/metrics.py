"""From-scratch evaluation metrics: corpus BLEU, ROUGE-L, joint 1-4-gram
diversity, nominal Krippendorff's alpha, and classifier accuracy/F1.

Tokenization is whitespace splitting throughout; BLEU is case-sensitive,
ROUGE-L and diversity lowercase first. All functions are pure.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from math import exp, log
from typing import Hashable, Sequence

ROUGE_BETA = 1.2


class MetricsError(Exception):
    pass


@dataclass(frozen=True)
class EvalPair:
    hypothesis: str
    references: tuple[str, ...]

    def __post_init__(self):
        if not self.references:
            raise MetricsError("an evaluation pair needs at least one reference")


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(pairs: Sequence[EvalPair]) -> float:
    """Corpus-level BLEU in [0, 100]: clipped modified n-gram precision for
    n = 1..4, geometric mean, multiplied by the brevity penalty
    ``exp(1 - r/c)`` when the hypothesis corpus is shorter than the effective
    reference length. No smoothing: a zero match count at any order gives 0.
    Orders where the hypothesis corpus has no n-grams at all (all hypotheses
    shorter than n tokens) are skipped, so exact matches stay maximal.
    """
    if not pairs:
        raise MetricsError("corpus_bleu needs at least one pair")
    matches = [0, 0, 0, 0]
    totals = [0, 0, 0, 0]
    hyp_len = 0
    ref_len = 0
    for pair in pairs:
        hyp_tokens = pair.hypothesis.split()
        ref_token_lists = [r.split() for r in pair.references]
        hyp_len += len(hyp_tokens)
        # effective reference length: closest to the hypothesis, shorter on ties
        ref_len += min(
            (len(r) for r in ref_token_lists),
            key=lambda length: (abs(length - len(hyp_tokens)), length),
        )
        for n in range(1, 5):
            hyp_counts = _ngrams(hyp_tokens, n)
            if not hyp_counts:
                continue
            clip = Counter()
            for ref_tokens in ref_token_lists:
                ref_counts = _ngrams(ref_tokens, n)
                for gram in hyp_counts:
                    clip[gram] = max(clip[gram], ref_counts.get(gram, 0))
            totals[n - 1] += sum(hyp_counts.values())
            matches[n - 1] += sum(min(count, clip[gram]) for gram, count in hyp_counts.items())
    orders = [(m, t) for m, t in zip(matches, totals) if t > 0]
    if not orders or any(m == 0 for m, _ in orders):
        return 0.0
    log_precision = sum(log(m / t) for m, t in orders) / len(orders)
    brevity = exp(1.0 - ref_len / hyp_len) if hyp_len < ref_len else 1.0
    return 100.0 * brevity * exp(log_precision)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token_a in a:
        current = [0]
        for j, token_b in enumerate(b, start=1):
            if token_a == token_b:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[len(b)]


def rouge_l(pair: EvalPair) -> float:
    """LCS-based F-measure in [0, 1] with beta = 1.2:
    ``F = (1 + b^2) P R / (R + b^2 P)`` where P = LCS/|hyp| and R = LCS/|ref|
    over lowercased whitespace tokens. Multiple references take the max."""
    hyp = pair.hypothesis.lower().split()
    best = 0.0
    for reference in pair.references:
        ref = reference.lower().split()
        lcs = _lcs_length(hyp, ref)
        if lcs == 0 or not hyp or not ref:
            continue
        precision = lcs / len(hyp)
        recall = lcs / len(ref)
        beta_sq = ROUGE_BETA**2
        score = (1 + beta_sq) * precision * recall / (recall + beta_sq * precision)
        best = max(best, score)
    return best


def joint_ngram_diversity(outputs: Sequence[str]) -> float:
    """Fraction of distinct n-grams among all 1- to 4-grams pooled over all
    outputs (lowercased whitespace tokens)."""
    if not outputs:
        raise MetricsError("joint_ngram_diversity needs at least one output")
    total = 0
    distinct = set()
    for output in outputs:
        tokens = output.lower().split()
        for n in range(1, 5):
            for i in range(len(tokens) - n + 1):
                gram = tuple(tokens[i : i + n])
                distinct.add(gram)
                total += 1
    if total == 0:
        raise MetricsError("all outputs are empty")
    return len(distinct) / total


def krippendorff_alpha(ratings: Sequence[Sequence[Hashable | None]]) -> float:
    """Nominal-level alpha over an items-by-raters matrix (None = missing).

    Standard coincidence-matrix formulation: alpha = 1 - D_o/D_e with
    observed and expected disagreement computed over all co-rated value
    pairs. Items rated fewer than two times contribute nothing; at least one
    item must be co-rated or the statistic is undefined.
    """
    units = [[v for v in row if v is not None] for row in ratings]
    units = [vals for vals in units if len(vals) >= 2]
    if not units:
        raise MetricsError("no item rated by at least two raters")
    coincidence: Counter = Counter()
    for vals in units:
        weight = 1.0 / (len(vals) - 1)
        for i, vi in enumerate(vals):
            for j, vj in enumerate(vals):
                if i != j:
                    coincidence[(vi, vj)] += weight
    n_total = sum(coincidence.values())
    marginals: Counter = Counter()
    for (vi, _), count in coincidence.items():
        marginals[vi] += count
    observed = sum(count for (vi, vj), count in coincidence.items() if vi != vj) / n_total
    expected = sum(
        marginals[c] * marginals[k]
        for c in marginals
        for k in marginals
        if c != k
    ) / (n_total * (n_total - 1))
    if expected == 0.0:
        return 1.0
    return 1.0 - observed / expected


def cls_eval(
    predictions: Sequence[Hashable],
    gold: Sequence[Hashable],
    positive_label: Hashable = "positive",
) -> tuple[float, float]:
    """(accuracy, F1 on the positive class) for binary predictions."""
    if len(predictions) != len(gold):
        raise MetricsError(
            f"length mismatch: {len(predictions)} predictions vs {len(gold)} gold labels"
        )
    if not predictions:
        raise MetricsError("cls_eval needs at least one prediction")
    labels = set(predictions) | set(gold)
    if len(labels) > 2:
        raise MetricsError(f"expected binary labels, got {sorted(map(str, labels))}")
    tp = fp = fn = correct = 0
    for predicted, actual in zip(predictions, gold):
        if predicted == actual:
            correct += 1
        if predicted == positive_label and actual == positive_label:
            tp += 1
        elif predicted == positive_label:
            fp += 1
        elif actual == positive_label:
            fn += 1
    accuracy = correct / len(gold)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return accuracy, f1
