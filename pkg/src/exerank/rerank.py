"""Candidate selection: joint-probability reranking with execution-result
aggregation, plus the Greedy / ML / EP+ML / EP+Voting baselines and the
oracle upper bound.

A candidate's joint log score is gen_log_term + log(verifier_prob); scores
of candidates that execute to the same result are summed (aggregation) and
the best-scoring equivalence class wins, with seeded random tie-breaking
both between equal-scoring classes and among members of the winning class.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Sequence

from . import canonical
from .corpus import TaskInstance
from .execution import ExecutionOutcome
from .generation import ProgramCandidate

PROB_FLOOR = 1e-6

STRATEGIES = ("lever", "ml", "ep_ml", "ep_voting", "greedy", "oracle")


@dataclass(frozen=True)
class ScoredCandidate:
    candidate: ProgramCandidate
    outcome: ExecutionOutcome
    verifier_prob: float
    gen_log_term: float
    joint_log_score: float

    @property
    def program_text(self) -> str:
        return self.candidate.program_text

    @property
    def equivalence_key(self) -> str:
        return self.outcome.equivalence_key


def score_candidate(
    candidate: ProgramCandidate,
    outcome: ExecutionOutcome,
    verifier_prob: float,
    normalize: bool = False,
    prob_floor: float = PROB_FLOOR,
) -> ScoredCandidate:
    """Attach the joint log score; prob_floor=0 is the exact test mode."""
    if not 0.0 <= verifier_prob <= 1.0:
        raise ValueError(f"verifier_prob out of range: {verifier_prob}")
    gen = candidate.gen_log_term(normalize)
    floored = max(verifier_prob, prob_floor)
    joint = gen + math.log(floored) if floored > 0 else float("-inf")
    return ScoredCandidate(
        candidate=candidate,
        outcome=outcome,
        verifier_prob=verifier_prob,
        gen_log_term=gen,
        joint_log_score=joint,
    )


@dataclass(frozen=True)
class RankedGroup:
    key: str
    members: tuple[ScoredCandidate, ...]
    log_score: float
    score: float
    representative: ScoredCandidate


@dataclass(frozen=True)
class RankedOutput:
    groups: tuple[RankedGroup, ...]
    selection_seed: int

    @property
    def selected(self) -> ScoredCandidate:
        return self.groups[0].representative


def _logsumexp(values: Sequence[float]) -> float:
    peak = max(values)
    if peak == float("-inf"):
        return float("-inf")
    return peak + math.log(sum(math.exp(v - peak) for v in values))


def _max_gen_member(members: Sequence[ScoredCandidate]) -> ScoredCandidate:
    best = members[0]
    for member in members[1:]:
        if member.gen_log_term > best.gen_log_term:
            best = member
    return best


def rerank_lever(
    scored: Sequence[ScoredCandidate],
    aggregate: bool = True,
    seed: int = 0,
) -> RankedOutput:
    """Rank execution-result groups by summed joint probability.

    With aggregate=False every candidate forms its own group. The group
    score is sum(exp(joint_log_score)) over members, computed in log space.
    The winning group's representative is drawn uniformly (seeded) from its
    members; equal-scoring groups are also tie-broken with the seed.
    """
    if not scored:
        raise ValueError("no candidates to rerank")
    buckets: list[tuple[str, list[ScoredCandidate]]] = []
    if aggregate:
        index: dict[str, int] = {}
        for cand in scored:
            key = cand.equivalence_key
            if key in index:
                buckets[index[key]][1].append(cand)
            else:
                index[key] = len(buckets)
                buckets.append((key, [cand]))
    else:
        buckets = [(cand.equivalence_key, [cand]) for cand in scored]

    ranked = []
    for position, (key, members) in enumerate(buckets):
        log_score = _logsumexp([m.joint_log_score for m in members])
        ranked.append((log_score, key, position, members))
    ranked.sort(key=lambda item: (-item[0], item[1], item[2]))

    rng = random.Random(seed)
    top_score = ranked[0][0]
    tied = [item for item in ranked if item[0] == top_score]
    winner = rng.choice(tied)
    ordered = [winner] + [item for item in ranked if item is not winner]

    groups = []
    for index, (log_score, key, _, members) in enumerate(ordered):
        if index == 0:
            representative = rng.choice(members)
        else:
            representative = _max_gen_member(members)
        groups.append(
            RankedGroup(
                key=key,
                members=tuple(members),
                log_score=log_score,
                score=math.exp(log_score) if log_score != float("-inf") else 0.0,
                representative=representative,
            )
        )
    return RankedOutput(groups=tuple(groups), selection_seed=seed)


# ---------------------------------------------------------------------------
# baselines


def _seeded_argmax(
    scored: Sequence[ScoredCandidate],
    key_fn,
    seed: int,
) -> ScoredCandidate:
    best = max(key_fn(c) for c in scored)
    tied = [c for c in scored if key_fn(c) == best]
    if len(tied) == 1:
        return tied[0]
    return random.Random(seed).choice(tied)


def baseline_ml(scored: Sequence[ScoredCandidate], seed: int = 0) -> ScoredCandidate:
    """Highest generation log-probability (normalized per dataset config)."""
    if not scored:
        raise ValueError("no candidates")
    return _seeded_argmax(scored, lambda c: c.gen_log_term, seed)


def baseline_ep_ml(scored: Sequence[ScoredCandidate], seed: int = 0) -> ScoredCandidate:
    """Prune execution errors, then ML; all-error sets fall back to plain ML."""
    if not scored:
        raise ValueError("no candidates")
    successes = [c for c in scored if c.outcome.status == "success"]
    return baseline_ml(successes or list(scored), seed)


def baseline_ep_voting(scored: Sequence[ScoredCandidate], seed: int = 0) -> ScoredCandidate:
    """Majority vote over execution results among error-free candidates.

    Votes are weighted by duplicate_count; the winning result's
    representative is its max-gen_log_term member. With no error-free
    candidates this falls back to EP+ML (hence ML).
    """
    if not scored:
        raise ValueError("no candidates")
    successes = [c for c in scored if c.outcome.status == "success"]
    if not successes:
        return baseline_ep_ml(scored, seed)
    votes: dict[str, int] = {}
    members: dict[str, list[ScoredCandidate]] = {}
    for cand in successes:
        votes[cand.equivalence_key] = votes.get(cand.equivalence_key, 0) + cand.candidate.duplicate_count
        members.setdefault(cand.equivalence_key, []).append(cand)
    ordered_keys = sorted(votes, key=lambda k: (-votes[k], k))
    top_votes = votes[ordered_keys[0]]
    tied_keys = [k for k in ordered_keys if votes[k] == top_votes]
    rng = random.Random(seed)
    winner = tied_keys[0] if len(tied_keys) == 1 else rng.choice(tied_keys)
    bucket = members[winner]
    best_gen = max(c.gen_log_term for c in bucket)
    tied_members = [c for c in bucket if c.gen_log_term == best_gen]
    return tied_members[0] if len(tied_members) == 1 else rng.choice(tied_members)


def greedy_selection(scored: Sequence[ScoredCandidate]) -> ScoredCandidate | None:
    """The dedicated argmax-decoded candidate, if one is in the set."""
    for cand in scored:
        if cand.candidate.source == "greedy":
            return cand
    return None


def oracle_select(
    scored: Sequence[ScoredCandidate], task: TaskInstance
) -> ScoredCandidate | None:
    """Any correct candidate when one exists, else None (counted wrong)."""
    for cand in scored:
        if canonical.label_candidate(cand.outcome, task) == 1:
            return cand
    return None
