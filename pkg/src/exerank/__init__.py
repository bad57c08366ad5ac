"""Execution-guided verification and reranking of sampled program candidates.

Pipeline: sample programs for a language-to-code task, execute them against
the task's context, score each (input, program, execution result) with a
trained verifier, and select the execution-result class with the highest
summed joint generation+verification probability. Baselines (greedy, max
likelihood, error pruning, voting), the oracle upper bound, and calibration
and win/fail reports are included.
"""

from .canonical import (
    CanonicalResult,
    canonical_number,
    canonicalize_scalar,
    equivalence_key,
    label_candidate,
    linearize_table,
)
from .corpus import (
    DatasetKind,
    Exemplar,
    FewShotPrompt,
    RawSample,
    TaskInstance,
    build_prompt,
    load_exemplars,
    load_offline_samples,
    load_tasks,
    write_tasks,
)
from .execution import (
    ExecutionLimits,
    ExecutionOutcome,
    SubprocessRunner,
    execute_candidate_set,
    execute_function_tests,
    execute_scalar_script,
    execute_sql,
)
from .generation import (
    CandidateSet,
    ProgramCandidate,
    SamplingConfig,
    dedup_candidates,
    greedy_candidate,
    sample_candidates,
)
from .rerank import (
    RankedOutput,
    ScoredCandidate,
    baseline_ep_ml,
    baseline_ep_voting,
    baseline_ml,
    oracle_select,
    rerank_lever,
    score_candidate,
)
from .verifier import (
    TrainingConfig,
    VerificationExample,
    VerifierModel,
    build_training_set,
    featurize,
    loss_and_gradient,
    remote_score,
    score,
    train,
)

__version__ = "0.1.0"
