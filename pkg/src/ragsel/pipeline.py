"""Dual-answer inference: one candidate from the model's own knowledge, one
grounded in retrieved passages, and a selection step where the model picks
between them.

Prompts are data, not code: the three templates live as text files with
{question}, {passages}, {candidate_1}, {candidate_2} placeholders and can be
swapped without touching this module. Model output is expected in the shape

    Explanation: <why>
    Answer: <short answer>

and is parsed by splitting on the LAST "Answer:" marker, case-insensitively.
"""

from __future__ import annotations

import json
import random
import re
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import Passage
from .data import QAPair, read_jsonl, stable_hash_int, write_jsonl
from .errors import RagselError
from .evaluation import normalize
from .llm import Backend, GatewayError, GenRequest, generate

SOURCE_INTERNAL = "internal"
SOURCE_RETRIEVAL = "retrieval"
CHOSEN_NEITHER = "neither"

ORDER_INTERNAL_FIRST = "internal_first"
ORDER_RETRIEVAL_FIRST = "retrieval_first"

MODE_LLM_ONLY = "llm_only"
MODE_STANDARD_RAG = "standard_rag"
MODE_SELF_SELECT = "self_select"
MODES = (MODE_LLM_ONLY, MODE_STANDARD_RAG, MODE_SELF_SELECT)

TEMPLATE_DIR = Path(__file__).parent / "templates"

_ANSWER_MARKER = re.compile(r"answer:", re.IGNORECASE)
_EXPLANATION_MARKER = re.compile(r"explanation:", re.IGNORECASE)
_PLACEHOLDER_RE = re.compile(r"\{(\w+)\}")
_EDGE_PUNCT = string.punctuation + string.whitespace


class PipelineError(RagselError):
    pass


class ResponseParseError(PipelineError):
    """The model output carries no usable "Answer:" segment."""


class PromptTemplateError(PipelineError):
    pass


def parse_response(raw: str) -> tuple[str, str]:
    """Split raw model output into (explanation, answer).

    The last "Answer:" marker wins; the explanation is whatever follows
    "Explanation:" in the prefix (or the whole prefix when that marker is
    absent). The answer is trimmed of surrounding whitespace and punctuation.
    Raises ResponseParseError when no marker exists or the answer is empty.
    """
    matches = list(_ANSWER_MARKER.finditer(raw))
    if not matches:
        raise ResponseParseError("no 'Answer:' marker in model output")
    last = matches[-1]
    prefix, tail = raw[: last.start()], raw[last.end() :]
    expl_match = _EXPLANATION_MARKER.search(prefix)
    explanation = (prefix[expl_match.end() :] if expl_match else prefix).strip()
    answer = tail.strip(_EDGE_PUNCT)
    if not answer:
        raise ResponseParseError("empty answer after 'Answer:' marker")
    return explanation, answer


def render_response(answer: str, explanation: str) -> str:
    """Canonical response form; parse_response inverts it."""
    return f"Explanation: {explanation}\nAnswer: {answer}"


def render_passages(passages: Sequence[Passage]) -> str:
    """Number passages in rank order, one per line, titles in parentheses."""
    lines = []
    for rank, passage in enumerate(passages, start=1):
        if passage.title:
            lines.append(f"[{rank}] ({passage.title}) {passage.text}")
        else:
            lines.append(f"[{rank}] {passage.text}")
    return "\n".join(lines)


@dataclass
class CandidateResponse:
    answer: str
    explanation: str
    source: str  # SOURCE_INTERNAL | SOURCE_RETRIEVAL
    raw_text: str

    @property
    def parse_ok(self) -> bool:
        return bool(self.answer)

    @classmethod
    def from_raw(cls, raw: str, source: str) -> "CandidateResponse":
        """Parse raw output; on failure keep the raw text and flag with an empty answer."""
        try:
            explanation, answer = parse_response(raw)
        except ResponseParseError:
            return cls(answer="", explanation="", source=source, raw_text=raw)
        return cls(answer=answer, explanation=explanation, source=source, raw_text=raw)

    def to_dict(self) -> dict:
        return {
            "answer": self.answer,
            "explanation": self.explanation,
            "source": self.source,
            "raw_text": self.raw_text,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "CandidateResponse":
        return cls(
            answer=obj["answer"],
            explanation=obj["explanation"],
            source=obj["source"],
            raw_text=obj["raw_text"],
        )


@dataclass
class Exemplar:
    question: str
    explanation: str
    answer: str


_REQUIRED_PLACEHOLDERS = {
    "llm_only_template": {"question"},
    "rag_template": {"question", "passages"},
    "select_template": {"question", "candidate_1", "candidate_2"},
}


def load_template(name: str) -> str:
    return (TEMPLATE_DIR / f"{name}.txt").read_text(encoding="utf-8")


def load_default_exemplars() -> list[Exemplar]:
    rows = json.loads((TEMPLATE_DIR / "fewshot_examples.json").read_text(encoding="utf-8"))
    return [Exemplar(**row) for row in rows]


def fill_template(template: str, **values: str) -> str:
    out = template
    for key, value in values.items():
        out = out.replace("{" + key + "}", value)
    return out


@dataclass
class PromptSet:
    llm_only_template: str
    rag_template: str
    select_template: str
    fewshot_examples: list[Exemplar] = field(default_factory=list)

    def __post_init__(self):
        for attr, required in _REQUIRED_PLACEHOLDERS.items():
            found = set(_PLACEHOLDER_RE.findall(getattr(self, attr)))
            if found != required:
                raise PromptTemplateError(
                    f"{attr} must use exactly the placeholders {sorted(required)}, found {sorted(found)}"
                )
        if len(self.fewshot_examples) not in (0, 3):
            raise PromptTemplateError("fewshot_examples must hold 0 or 3 exemplars")

    @classmethod
    def default(cls, shots: int = 0, fewshot_path: str | Path | None = None) -> "PromptSet":
        """The shipped templates; shots=3 loads the packaged exemplars unless a path is given."""
        if shots not in (0, 3):
            raise PromptTemplateError("shots must be 0 or 3")
        exemplars: list[Exemplar] = []
        if shots == 3:
            if fewshot_path is not None:
                rows = json.loads(Path(fewshot_path).read_text(encoding="utf-8"))
                exemplars = [Exemplar(**row) for row in rows]
            else:
                exemplars = load_default_exemplars()
        return cls(
            llm_only_template=load_template("llm_only"),
            rag_template=load_template("rag"),
            select_template=load_template("select"),
            fewshot_examples=exemplars,
        )

    def _with_exemplars(self, filled: str) -> str:
        if not self.fewshot_examples:
            return filled
        blocks = [
            f"Question: {ex.question}\n{render_response(ex.answer, ex.explanation)}"
            for ex in self.fewshot_examples
        ]
        return "\n\n".join(blocks) + "\n\n" + filled

    def llm_only_prompt(self, question: str) -> str:
        return self._with_exemplars(fill_template(self.llm_only_template, question=question))

    def rag_prompt(self, question: str, passages: Sequence[Passage]) -> str:
        return self._with_exemplars(
            fill_template(self.rag_template, question=question, passages=render_passages(passages))
        )

    def select_prompt(self, question: str, candidate_1: str, candidate_2: str) -> str:
        # The selection prompt is always zero-shot; exemplars only shape the
        # two answer-generation prompts.
        return fill_template(
            self.select_template,
            question=question,
            candidate_1=candidate_1,
            candidate_2=candidate_2,
        )


@dataclass
class SelectionRecord:
    id: str
    query: str
    internal: CandidateResponse | None
    grounded: CandidateResponse | None
    final_answer: str
    final_explanation: str
    chosen_source: str  # internal | retrieval | neither
    presentation_order: str  # internal_first | retrieval_first
    passages_used: list[str]
    selector_raw: str = ""
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "query": self.query,
            "internal": self.internal.to_dict() if self.internal else None,
            "grounded": self.grounded.to_dict() if self.grounded else None,
            "final_answer": self.final_answer,
            "final_explanation": self.final_explanation,
            "chosen_source": self.chosen_source,
            "presentation_order": self.presentation_order,
            "passages_used": self.passages_used,
            "selector_raw": self.selector_raw,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SelectionRecord":
        return cls(
            id=obj["id"],
            query=obj["query"],
            internal=CandidateResponse.from_dict(obj["internal"]) if obj.get("internal") else None,
            grounded=CandidateResponse.from_dict(obj["grounded"]) if obj.get("grounded") else None,
            final_answer=obj["final_answer"],
            final_explanation=obj["final_explanation"],
            chosen_source=obj["chosen_source"],
            presentation_order=obj["presentation_order"],
            passages_used=list(obj.get("passages_used", [])),
            selector_raw=obj.get("selector_raw", ""),
            error=obj.get("error"),
        )


def gen_llm_answer(
    backend: Backend, prompts: PromptSet, question: str, *, max_tokens: int = 512
) -> CandidateResponse:
    """Candidate from the model's own knowledge, no passages in the prompt."""
    prompt = prompts.llm_only_prompt(question)
    response = generate(backend, GenRequest(user_prompt=prompt, max_tokens=max_tokens))
    return CandidateResponse.from_raw(response.text, SOURCE_INTERNAL)


def fit_passages(
    prompts: PromptSet, question: str, passages: Sequence[Passage], budget: int | None
) -> list[Passage]:
    """Drop lowest-ranked passages until the rendered prompt fits the character
    budget; never drops below one passage."""
    if budget is None:
        return list(passages)
    kept = list(passages)
    while len(kept) > 1 and len(prompts.rag_prompt(question, kept)) > budget:
        kept.pop()
    return kept


def gen_rag_answer(
    backend: Backend,
    prompts: PromptSet,
    question: str,
    passages: Sequence[Passage],
    *,
    budget: int | None = None,
    max_tokens: int = 512,
) -> tuple[CandidateResponse, list[str]]:
    """Candidate grounded in the given passages (rank order, numbered).

    Returns the candidate and the ids of the passages that actually made it
    into the prompt after any budget truncation.
    """
    if not passages:
        raise PipelineError("gen_rag_answer requires at least one passage")
    kept = fit_passages(prompts, question, passages, budget)
    prompt = prompts.rag_prompt(question, kept)
    response = generate(backend, GenRequest(user_prompt=prompt, max_tokens=max_tokens))
    return CandidateResponse.from_raw(response.text, SOURCE_RETRIEVAL), [p.id for p in kept]


def _match_choice(
    parsed_answer: str, first: CandidateResponse, second: CandidateResponse
) -> CandidateResponse | None:
    """Map the selector's restated answer onto one of the two candidates.

    Normalized equality wins; ties go to the first presented candidate. The
    fallback accepts a candidate answer contained in the restatement on token
    boundaries (so a one-letter answer cannot match inside another word),
    most specific (longest) first.
    """
    parsed_n = normalize(parsed_answer)
    if not parsed_n:
        return None
    ordered = [first, second]
    equal = [c for c in ordered if c.answer and normalize(c.answer) == parsed_n]
    if equal:
        return equal[0]
    padded = f" {parsed_n} "
    contained = [
        (len(normalize(c.answer)), -i, c)
        for i, c in enumerate(ordered)
        if c.answer and normalize(c.answer) and f" {normalize(c.answer)} " in padded
    ]
    if contained:
        contained.sort(reverse=True)
        return contained[0][2]
    return None


def select(
    backend: Backend,
    prompts: PromptSet,
    question: str,
    internal: CandidateResponse,
    grounded: CandidateResponse,
    order_seed: int,
    *,
    item_id: str = "",
    passages_used: Sequence[str] = (),
    max_tokens: int = 512,
) -> SelectionRecord:
    """Ask the model to pick between the two candidates.

    Presentation order is a fair coin drawn from order_seed. The reply is
    parsed and mapped back to a candidate by normalized answer match; when it
    matches neither, the record keeps the raw reply and is flagged with
    chosen_source="neither" for audit.
    """
    internal_first = random.Random(order_seed).random() < 0.5
    first, second = (internal, grounded) if internal_first else (grounded, internal)
    prompt = prompts.select_prompt(
        question,
        render_response(first.answer, first.explanation),
        render_response(second.answer, second.explanation),
    )
    response = generate(backend, GenRequest(user_prompt=prompt, max_tokens=max_tokens))
    order = ORDER_INTERNAL_FIRST if internal_first else ORDER_RETRIEVAL_FIRST

    try:
        explanation, answer = parse_response(response.text)
    except ResponseParseError:
        explanation, answer = "", ""
    chosen = _match_choice(answer, first, second) if answer else None
    if chosen is None:
        return SelectionRecord(
            id=item_id,
            query=question,
            internal=internal,
            grounded=grounded,
            final_answer=answer,
            final_explanation=explanation,
            chosen_source=CHOSEN_NEITHER,
            presentation_order=order,
            passages_used=list(passages_used),
            selector_raw=response.text,
        )
    return SelectionRecord(
        id=item_id,
        query=question,
        internal=internal,
        grounded=grounded,
        final_answer=chosen.answer,
        final_explanation=chosen.explanation,
        chosen_source=chosen.source,
        presentation_order=order,
        passages_used=list(passages_used),
        selector_raw=response.text,
    )


def _retrieved_passages(index, corpus, question: str, top_k: int) -> list[Passage]:
    result = index.retrieve(question, top_k)
    return [corpus.get(pid) for pid, _score in result.hits]


def run_dataset(
    mode: str,
    qa_pairs: Sequence[QAPair],
    backend: Backend,
    prompts: PromptSet,
    *,
    index=None,
    corpus=None,
    top_k: int = 5,
    order_seed: int = 0,
    budget: int | None = None,
    max_tokens: int = 512,
    max_workers: int = 1,
) -> list[SelectionRecord]:
    """One SelectionRecord per QA pair, in input order, whatever happens.

    llm_only records carry no grounded candidate; standard_rag records carry
    no internal candidate and the final answer is the grounded one. When
    retrieval finds nothing for a retrieval mode, the grounded slot falls
    back to the memory-only prompt and passages_used stays empty. Per-item
    failures land in the record's error field and never abort the batch.
    """
    if mode not in MODES:
        raise PipelineError(f"unknown mode {mode!r}")
    if mode in (MODE_STANDARD_RAG, MODE_SELF_SELECT) and (index is None or corpus is None):
        raise PipelineError(f"mode {mode} requires an index and a corpus")

    def one(qa: QAPair) -> SelectionRecord:
        item_seed = stable_hash_int(order_seed, qa.id)
        try:
            if mode == MODE_LLM_ONLY:
                cand = gen_llm_answer(backend, prompts, qa.question, max_tokens=max_tokens)
                return SelectionRecord(
                    id=qa.id,
                    query=qa.question,
                    internal=cand,
                    grounded=None,
                    final_answer=cand.answer,
                    final_explanation=cand.explanation,
                    chosen_source=SOURCE_INTERNAL,
                    presentation_order=ORDER_INTERNAL_FIRST,
                    passages_used=[],
                )
            passages = _retrieved_passages(index, corpus, qa.question, top_k)
            if passages:
                grounded, used = gen_rag_answer(
                    backend, prompts, qa.question, passages, budget=budget, max_tokens=max_tokens
                )
            else:
                grounded = gen_llm_answer(backend, prompts, qa.question, max_tokens=max_tokens)
                used = []
            if mode == MODE_STANDARD_RAG:
                return SelectionRecord(
                    id=qa.id,
                    query=qa.question,
                    internal=None,
                    grounded=grounded,
                    final_answer=grounded.answer,
                    final_explanation=grounded.explanation,
                    chosen_source=SOURCE_RETRIEVAL,
                    presentation_order=ORDER_RETRIEVAL_FIRST,
                    passages_used=used,
                )
            internal = gen_llm_answer(backend, prompts, qa.question, max_tokens=max_tokens)
            return select(
                backend,
                prompts,
                qa.question,
                internal,
                grounded,
                item_seed,
                item_id=qa.id,
                passages_used=used,
                max_tokens=max_tokens,
            )
        except (GatewayError, RagselError) as exc:
            return SelectionRecord(
                id=qa.id,
                query=qa.question,
                internal=None,
                grounded=None,
                final_answer="",
                final_explanation="",
                chosen_source=CHOSEN_NEITHER,
                presentation_order=ORDER_INTERNAL_FIRST,
                passages_used=[],
                error=f"{type(exc).__name__}: {exc}",
            )

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(one, qa_pairs))
    return [one(qa) for qa in qa_pairs]


def audit_selection(records: Sequence[SelectionRecord]) -> dict:
    """Report how often the selector's reply matched neither candidate."""
    n = len(records)
    neither = sum(1 for r in records if r.chosen_source == CHOSEN_NEITHER and r.error is None)
    errored = sum(1 for r in records if r.error is not None)
    return {
        "n": n,
        "neither": neither,
        "neither_fraction": neither / n if n else 0.0,
        "errors": errored,
    }


def save_records(records: Sequence[SelectionRecord], path: str | Path) -> int:
    return write_jsonl(path, (r.to_dict() for r in records))


def load_records(path: str | Path) -> list[SelectionRecord]:
    return [SelectionRecord.from_dict(obj) for _ln, obj in read_jsonl(path)]
