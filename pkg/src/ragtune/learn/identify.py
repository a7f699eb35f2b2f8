"""Online positive/negative identification without generation."""

from __future__ import annotations

from typing import Iterable, Mapping

POSITIVE, NEGATIVE, UNDECIDED = 1, 0, None


def identify_freeform(log_score: float, max_neg: float, min_pos: float) -> int | None:
    """Threshold a RAG score against the offline pools.

    Positive if it beats the best offline negative, negative if it falls
    below the worst offline positive. When both hold (a score strictly
    between the two thresholds), positive wins.
    """
    if log_score > max_neg:
        return POSITIVE
    if log_score < min_pos:
        return NEGATIVE
    return UNDECIDED


def identify_freeform_entries(scores: Iterable[float], max_neg: float, min_pos: float) -> int | None:
    """Entry-wise rule for multi-answer queries: any positive wins, all negative loses."""
    verdicts = [identify_freeform(s, max_neg, min_pos) for s in scores]
    if any(v == POSITIVE for v in verdicts):
        return POSITIVE
    if verdicts and all(v == NEGATIVE for v in verdicts):
        return NEGATIVE
    return UNDECIDED


def identify_closedset(choice_logprobs: Mapping[str, float], correct: Iterable[str]) -> int:
    """1 iff some correct label strictly beats every incorrect label."""
    correct = set(correct)
    wrong = [lp for lab, lp in choice_logprobs.items() if lab not in correct]
    best_wrong = max(wrong) if wrong else float("-inf")
    return int(any(choice_logprobs[c] > best_wrong for c in correct if c in choice_logprobs))
