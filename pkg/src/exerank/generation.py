"""Program-candidate generation: endpoint sampling, greedy, and dedup.

Candidates come from an OpenAI-completions-compatible HTTP endpoint or from
offline sample files (corpus module). Sampled programs are deduplicated on
normalized text into a CandidateSet; merged duplicates keep the maximum
reported log-probability and sum their duplicate counts.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Protocol, Sequence

import requests

from .corpus import DatasetKind, FewShotPrompt, RawSample


class EndpointError(RuntimeError):
    """The generator endpoint failed or returned an unusable response."""


@dataclass(frozen=True)
class SamplingConfig:
    """Sampling budget and decoding parameters.

    normalize_logprob selects length-normalized generation scores downstream;
    the default is ON for Python-producing kinds and OFF for SQL.
    """

    k: int = 50
    temperature: float = 0.6
    max_tokens: int = 256
    stop_sequences: tuple[str, ...] = ()
    normalize_logprob: bool = False
    batch_size: int = 20

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0 (use greedy_candidate for argmax)")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def normalize_default_for_kind(kind: DatasetKind) -> bool:
    """Length normalization default: on for script kinds, off for SQL."""
    return kind in (DatasetKind.SCALAR_SCRIPT, DatasetKind.FUNCTION_WITH_TESTS)


@dataclass(frozen=True)
class ProgramCandidate:
    """One unique program with its generation score and sample multiplicity."""

    program_text: str
    cumulative_logprob: float
    token_count: int
    duplicate_count: int = 1
    source: str = "sampled"  # "sampled" | "greedy" | "gold"

    def __post_init__(self) -> None:
        if self.cumulative_logprob > 0:
            raise ValueError("cumulative_logprob must be <= 0")
        if self.token_count < 1:
            raise ValueError("token_count must be >= 1")
        if self.duplicate_count < 1:
            raise ValueError("duplicate_count must be >= 1")
        if not self.program_text.rstrip():
            raise ValueError("program_text is empty")

    @property
    def normalized_logprob(self) -> float:
        return self.cumulative_logprob / self.token_count

    def gen_log_term(self, normalize: bool) -> float:
        return self.normalized_logprob if normalize else self.cumulative_logprob


@dataclass(frozen=True)
class CandidateSet:
    """Deduplicated candidates for one task, sorted by descending logprob."""

    task_id: str
    candidates: tuple[ProgramCandidate, ...]
    raw_sample_count: int


@dataclass(frozen=True)
class Completion:
    text: str
    token_logprobs: tuple[float, ...]


class GeneratorEndpoint(Protocol):
    def complete(
        self,
        prompt: str,
        n: int,
        temperature: float,
        max_tokens: int,
        stop: Sequence[str],
    ) -> list[Completion]:
        """Return n completions, each with per-token log-probabilities."""
        ...


class HttpGeneratorEndpoint:
    """OpenAI-completions-compatible HTTP client.

    POSTs {prompt, n, temperature, max_tokens, stop, logprobs} and reads
    choices[].text plus choices[].logprobs.token_logprobs. Transport and
    5xx failures are retried with exponential backoff, then raised.
    """

    def __init__(
        self,
        url: str,
        api_key: str | None = None,
        model: str | None = None,
        timeout: float = 120.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        session: requests.Session | None = None,
    ) -> None:
        self.url = url
        self.api_key = api_key
        self.model = model
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.session = session or requests.Session()

    def complete(
        self,
        prompt: str,
        n: int,
        temperature: float,
        max_tokens: int,
        stop: Sequence[str],
    ) -> list[Completion]:
        body = {
            "prompt": prompt,
            "n": n,
            "temperature": temperature,
            "max_tokens": max_tokens,
            "logprobs": 0,
        }
        if stop:
            body["stop"] = list(stop)
        if self.model:
            body["model"] = self.model
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                resp = self.session.post(
                    self.url, json=body, headers=headers, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code >= 500:
                last_error = EndpointError(f"server error {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise EndpointError(
                    f"endpoint returned {resp.status_code}: {resp.text[:200]}"
                )
            return self._parse_choices(resp.json())
        raise EndpointError(f"endpoint unreachable after {self.max_retries} attempts: {last_error}")

    @staticmethod
    def _parse_choices(payload: dict) -> list[Completion]:
        completions = []
        for choice in payload.get("choices", []):
            logprobs = (choice.get("logprobs") or {}).get("token_logprobs")
            if logprobs is None:
                raise EndpointError("logprobs required")
            completions.append(
                Completion(
                    text=choice.get("text", ""),
                    token_logprobs=tuple(float(lp) for lp in logprobs if lp is not None),
                )
            )
        return completions


def sample_candidates(
    prompt: FewShotPrompt,
    config: SamplingConfig,
    endpoint: GeneratorEndpoint,
) -> list[RawSample]:
    """Draw config.k temperature samples, batching requests transparently."""
    samples: list[RawSample] = []
    remaining = config.k
    while remaining > 0:
        n = min(remaining, config.batch_size)
        completions = endpoint.complete(
            prompt.rendered, n, config.temperature, config.max_tokens, config.stop_sequences
        )
        for completion in completions:
            if not completion.token_logprobs:
                raise EndpointError("logprobs required")
            samples.append(
                RawSample(
                    task_id=prompt.task_id,
                    program_text=completion.text,
                    token_logprobs=completion.token_logprobs,
                )
            )
        remaining -= n
    return samples


def greedy_candidate(
    prompt: FewShotPrompt,
    endpoint: GeneratorEndpoint,
    config: SamplingConfig | None = None,
) -> ProgramCandidate:
    """Argmax decode (temperature 0); the Greedy baseline's candidate."""
    max_tokens = config.max_tokens if config else 256
    stop = config.stop_sequences if config else ()
    completions = endpoint.complete(prompt.rendered, 1, 0.0, max_tokens, stop)
    if not completions:
        raise EndpointError("endpoint returned no completion")
    completion = completions[0]
    text = normalize_program_text(completion.text)
    if not text:
        raise EndpointError("empty program")
    if not completion.token_logprobs:
        raise EndpointError("logprobs required")
    return ProgramCandidate(
        program_text=text,
        cumulative_logprob=sum(completion.token_logprobs),
        token_count=len(completion.token_logprobs),
        duplicate_count=1,
        source="greedy",
    )


def normalize_program_text(text: str) -> str:
    """Dedup key: normalized line endings, trailing whitespace stripped."""
    return text.replace("\r\n", "\n").replace("\r", "\n").rstrip()


def dedup_candidates(
    raw: Sequence[RawSample],
    greedy: ProgramCandidate | None = None,
    task_id: str | None = None,
) -> CandidateSet:
    """Merge raw samples into unique candidates.

    Merge rule: duplicate counts sum; the maximum reported logprob wins (API
    batches can disagree slightly for identical text). A greedy candidate
    colliding with samples keeps source="greedy" and adds one observation.
    Empty completions are dropped and do not count toward raw_sample_count.
    """
    ids = {s.task_id for s in raw}
    if len(ids) > 1:
        raise ValueError(f"samples from multiple tasks: {sorted(ids)}")
    if task_id is None:
        task_id = next(iter(ids)) if ids else ""

    order: list[str] = []
    merged: dict[str, dict] = {}
    kept = 0
    for sample in raw:
        text = normalize_program_text(sample.program_text)
        if not text:
            continue
        kept += 1
        entry = merged.get(text)
        if entry is None:
            order.append(text)
            merged[text] = {
                "count": 1,
                "logprob": sample.cumulative_logprob,
                "tokens": sample.token_count,
                "source": "sampled",
            }
        else:
            entry["count"] += 1
            if sample.cumulative_logprob > entry["logprob"]:
                entry["logprob"] = sample.cumulative_logprob
                entry["tokens"] = sample.token_count

    if greedy is not None:
        text = normalize_program_text(greedy.program_text)
        entry = merged.get(text)
        if entry is None:
            order.append(text)
            merged[text] = {
                "count": greedy.duplicate_count,
                "logprob": greedy.cumulative_logprob,
                "tokens": greedy.token_count,
                "source": "greedy",
            }
        else:
            entry["count"] += greedy.duplicate_count
            entry["source"] = "greedy"
            if greedy.cumulative_logprob > entry["logprob"]:
                entry["logprob"] = greedy.cumulative_logprob
                entry["tokens"] = greedy.token_count

    position = {text: i for i, text in enumerate(order)}
    candidates = [
        ProgramCandidate(
            program_text=text,
            cumulative_logprob=merged[text]["logprob"],
            token_count=merged[text]["tokens"],
            duplicate_count=merged[text]["count"],
            source=merged[text]["source"],
        )
        for text in order
    ]
    candidates.sort(key=lambda c: (-c.cumulative_logprob, position[c.program_text]))
    return CandidateSet(task_id=task_id, candidates=tuple(candidates), raw_sample_count=kept)
