"""Build the preference dataset: for each query generate a memory-only
candidate and a passage-grounded candidate, judge both against the golden
answer, and keep only the disagreements, pairing the correct response as
positive with the incorrect one as negative.

The number of passages fed to the grounded candidate is drawn uniformly from
1..5 per query, seeded so rebuilds are byte-identical. Judging is either
lexical (deterministic: normalized equality or containment of a gold) or
delegated to a model answering Yes/No.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import Corpus
from .data import QAPair, read_jsonl, stable_hash_int, write_jsonl
from .errors import RagselError
from .evaluation import normalize
from .llm import Backend, GatewayError, GenRequest, generate
from .pipeline import (
    CandidateResponse,
    PromptSet,
    SOURCE_INTERNAL,
    SOURCE_RETRIEVAL,
    gen_llm_answer,
    gen_rag_answer,
    load_template,
)

JUDGE_LEXICAL = "lexical"
JUDGE_LLM = "llm"

_VERDICT_RE = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


class RgpError(RagselError):
    pass


class JudgeError(RgpError):
    """The model judge returned something that is not a Yes/No verdict."""


@dataclass
class CandidateBundle:
    qa: QAPair
    internal: CandidateResponse | None
    grounded: CandidateResponse | None
    n_passages_used: int
    error: str | None = None

    @property
    def usable(self) -> bool:
        return self.error is None and self.internal is not None and self.grounded is not None


@dataclass
class Judgment:
    internal_correct: bool
    grounded_correct: bool
    judge_tag: str  # lexical | llm
    rationale: str = ""


@dataclass
class Response:
    """An (answer, explanation) pair, detached from how it was produced."""

    answer: str
    explanation: str

    def to_dict(self) -> dict:
        return {"answer": self.answer, "explanation": self.explanation}


@dataclass
class PreferenceInstance:
    query_id: str
    query: str
    golden: str
    positive: Response
    negative: Response
    positive_source: str  # internal | retrieval
    n_passages: int
    judge_tag: str
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "golden": self.golden,
            "positive": self.positive.to_dict(),
            "negative": self.negative.to_dict(),
            "positive_source": self.positive_source,
            "meta": {
                "n_passages": self.n_passages,
                "judge_tag": self.judge_tag,
                "seed": self.seed,
                "query_id": self.query_id,
            },
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PreferenceInstance":
        meta = obj.get("meta", {})
        return cls(
            query_id=str(meta.get("query_id", "")),
            query=obj["query"],
            golden=obj["golden"],
            positive=Response(**obj["positive"]),
            negative=Response(**obj["negative"]),
            positive_source=obj["positive_source"],
            n_passages=meta.get("n_passages", 0),
            judge_tag=meta.get("judge_tag", ""),
            seed=meta.get("seed"),
        )


def generate_candidates(
    qa: QAPair,
    index,
    corpus: Corpus,
    backend: Backend,
    prompts: PromptSet,
    rng_seed: int,
    *,
    max_tokens: int = 512,
) -> CandidateBundle:
    """Produce both candidates for one query.

    rng_seed alone fixes how many passages the grounded candidate sees
    (uniform on 1..5, capped by what retrieval returns). Generation failures
    are recorded on the bundle instead of raised.
    """
    n_requested = random.Random(rng_seed).randint(1, 5)
    try:
        internal = gen_llm_answer(backend, prompts, qa.question, max_tokens=max_tokens)
        hits = index.retrieve(qa.question, n_requested).hits
        passages = [corpus.get(pid) for pid, _score in hits]
        if not passages:
            return CandidateBundle(
                qa=qa,
                internal=internal,
                grounded=None,
                n_passages_used=0,
                error="no passages retrieved",
            )
        grounded, used = gen_rag_answer(
            backend, prompts, qa.question, passages, max_tokens=max_tokens
        )
    except (GatewayError, RagselError) as exc:
        return CandidateBundle(
            qa=qa,
            internal=None,
            grounded=None,
            n_passages_used=0,
            error=f"{type(exc).__name__}: {exc}",
        )
    return CandidateBundle(qa=qa, internal=internal, grounded=grounded, n_passages_used=len(used))


def judge(
    candidate_answer: str,
    golden_answers: Sequence[str],
    *,
    mode: str = JUDGE_LEXICAL,
    backend: Backend | None = None,
    judge_template: str | None = None,
) -> bool:
    """Is the candidate correct against the gold aliases?

    Lexical mode: true iff the normalized candidate equals or contains any
    normalized gold; an empty candidate (failed parse) counts as incorrect.
    LLM mode: a Yes/No verdict parsed from the judge backend's reply; an
    unparseable verdict raises JudgeError rather than guessing.
    """
    if not golden_answers:
        raise RgpError("golden_answers must be non-empty")
    if mode == JUDGE_LEXICAL:
        cand = normalize(candidate_answer)
        if not cand:
            return False
        for gold in golden_answers:
            gold_n = normalize(gold)
            if gold_n and (cand == gold_n or gold_n in cand):
                return True
        return False
    if mode == JUDGE_LLM:
        if backend is None:
            raise RgpError("llm judge mode requires a backend")
        template = judge_template if judge_template is not None else load_template("judge")
        prompt = template.replace("{golden}", "; ".join(golden_answers)).replace(
            "{candidate}", candidate_answer
        )
        reply = generate(backend, GenRequest(user_prompt=prompt, max_tokens=8)).text
        match = _VERDICT_RE.search(reply)
        if not match:
            raise JudgeError(f"judge reply carries no yes/no verdict: {reply!r}")
        return match.group(1).lower() == "yes"
    raise RgpError(f"unknown judge mode {mode!r}")


def judge_bundle(
    bundle: CandidateBundle,
    *,
    mode: str = JUDGE_LEXICAL,
    backend: Backend | None = None,
) -> Judgment:
    assert bundle.internal is not None and bundle.grounded is not None
    return Judgment(
        internal_correct=judge(
            bundle.internal.answer, bundle.qa.golden_answers, mode=mode, backend=backend
        ),
        grounded_correct=judge(
            bundle.grounded.answer, bundle.qa.golden_answers, mode=mode, backend=backend
        ),
        judge_tag=mode,
    )


def filter_instance(bundle: CandidateBundle, judgment: Judgment) -> PreferenceInstance | None:
    """Keep only disagreements: exactly one candidate judged correct.

    Agreement in either direction yields nothing. A disagreement whose two
    answers normalize to the same string is also dropped; a pair that prefers
    a string over itself would poison training.
    """
    if judgment.internal_correct == judgment.grounded_correct:
        return None
    if judgment.internal_correct:
        pos_cand, neg_cand, source = bundle.internal, bundle.grounded, SOURCE_INTERNAL
    else:
        pos_cand, neg_cand, source = bundle.grounded, bundle.internal, SOURCE_RETRIEVAL
    if normalize(pos_cand.answer) == normalize(neg_cand.answer):
        return None
    return PreferenceInstance(
        query_id=bundle.qa.id,
        query=bundle.qa.question,
        golden=bundle.qa.golden_answers[0],
        positive=Response(answer=pos_cand.answer, explanation=pos_cand.explanation),
        negative=Response(answer=neg_cand.answer, explanation=neg_cand.explanation),
        positive_source=source,
        n_passages=bundle.n_passages_used,
        judge_tag=judgment.judge_tag,
    )


@dataclass
class BuildReport:
    total: int = 0
    kept: int = 0
    kept_positive_internal: int = 0
    kept_positive_retrieval: int = 0
    both_correct: int = 0
    both_incorrect: int = 0
    collision_dropped: int = 0
    quarantined: int = 0
    quarantine_reasons: list[str] = field(default_factory=list)
    judge_tag: str = JUDGE_LEXICAL

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "kept": self.kept,
            "kept_positive_internal": self.kept_positive_internal,
            "kept_positive_retrieval": self.kept_positive_retrieval,
            "both_correct": self.both_correct,
            "both_incorrect": self.both_incorrect,
            "collision_dropped": self.collision_dropped,
            "quarantined": self.quarantined,
            "quarantine_reasons": self.quarantine_reasons,
            "judge_tag": self.judge_tag,
        }


def build(
    qa_set: Sequence[QAPair],
    index,
    corpus: Corpus,
    backend: Backend,
    prompts: PromptSet,
    *,
    judge_mode: str = JUDGE_LEXICAL,
    judge_backend: Backend | None = None,
    seed: int = 0,
    max_tokens: int = 512,
) -> tuple[list[PreferenceInstance], BuildReport]:
    """Map generate -> judge -> filter over the QA set.

    Per-item failures (generation errors, unparseable judge verdicts) are
    quarantined with reasons; the batch always completes. The report carries
    counts for every filter outcome and the positive-source split.
    """
    report = BuildReport(total=len(qa_set), judge_tag=judge_mode)
    instances: list[PreferenceInstance] = []
    for qa in qa_set:
        bundle = generate_candidates(
            qa, index, corpus, backend, prompts, rng_seed=stable_hash_int(seed, qa.id),
            max_tokens=max_tokens,
        )
        if not bundle.usable:
            report.quarantined += 1
            report.quarantine_reasons.append(f"{qa.id}: {bundle.error}")
            continue
        try:
            judgment = judge_bundle(bundle, mode=judge_mode, backend=judge_backend)
        except JudgeError as exc:
            report.quarantined += 1
            report.quarantine_reasons.append(f"{qa.id}: {exc}")
            continue
        instance = filter_instance(bundle, judgment)
        if instance is None:
            if judgment.internal_correct and judgment.grounded_correct:
                report.both_correct += 1
            elif not judgment.internal_correct and not judgment.grounded_correct:
                report.both_incorrect += 1
            else:
                report.collision_dropped += 1
            continue
        instance.seed = seed
        instances.append(instance)
        report.kept += 1
        if instance.positive_source == SOURCE_INTERNAL:
            report.kept_positive_internal += 1
        else:
            report.kept_positive_retrieval += 1
    return instances, report


def save_instances(instances: Sequence[PreferenceInstance], path: str | Path) -> int:
    return write_jsonl(path, (inst.to_dict() for inst in instances))


def load_instances(path: str | Path) -> list[PreferenceInstance]:
    return [PreferenceInstance.from_dict(obj) for _ln, obj in read_jsonl(path)]
