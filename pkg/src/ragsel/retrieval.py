"""Top-K passage retrieval: an Okapi BM25 inverted index, plus a dense
retriever backed by an external embedding endpoint.

The BM25 variant is fixed so results are bit-stable across machines:

    idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))
    tf part = tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avgdl))

summed over the query tokens in order (a repeated query token contributes
once per occurrence). This idf form is never negative, so every score is
>= 0 and is 0 exactly when no query term occurs in the document. Documents
scoring 0 are excluded from results rather than padded.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .corpus import Corpus
from .errors import RagselError

INDEX_FILE = "index.json"
INDEX_FORMAT = "ragsel-bm25-index"
INDEX_VERSION = 1

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split into runs of Unicode alphanumerics.

    Everything else (punctuation, symbols, underscore, whitespace) separates
    tokens. No stemming, no stopword removal.
    """
    return _TOKEN_RE.findall(text.lower())


class RetrievalError(RagselError):
    pass


class EmptyCorpusError(RetrievalError):
    pass


class UnknownPassageError(RetrievalError):
    def __init__(self, passage_id: str):
        super().__init__(f"passage {passage_id!r} is not in the index")
        self.passage_id = passage_id


class IndexFormatError(RetrievalError):
    pass


class EmbeddingBackendError(RetrievalError):
    """The embedding endpoint failed or returned vectors we cannot use."""


@dataclass(frozen=True)
class RetrievalConfig:
    top_k: int = 5
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.k1 <= 0:
            raise ValueError("k1 must be > 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must be in [0, 1]")


@dataclass
class RetrievalResult:
    query: str
    hits: list[tuple[str, float]]  # (passage_id, score), best first
    retriever_tag: str  # "bm25" | "dense"

    def to_json(self) -> str:
        return json.dumps(
            {"query": self.query, "hits": [[pid, s] for pid, s in self.hits], "retriever_tag": self.retriever_tag},
            ensure_ascii=False,
        )


class Bm25Index:
    """Immutable inverted index over passage text (titles are not indexed)."""

    def __init__(
        self,
        k1: float,
        b: float,
        doc_len: dict[str, int],
        postings: dict[str, dict[str, int]],
        corpus_path: str | None = None,
    ):
        self.k1 = k1
        self.b = b
        self.doc_len = doc_len
        self.postings = postings
        self.corpus_path = corpus_path
        self.N = len(doc_len)
        self.avgdl = sum(doc_len.values()) / self.N if self.N else 0.0

    def _score_doc(self, query_tokens: list[str], passage_id: str) -> float:
        dl = self.doc_len[passage_id]
        norm = self.k1 * (1.0 - self.b + self.b * dl / self.avgdl)
        score = 0.0
        for term in query_tokens:
            posting = self.postings.get(term)
            if not posting:
                continue
            tf = posting.get(passage_id, 0)
            if tf == 0:
                continue
            df = len(posting)
            idf = math.log(1.0 + (self.N - df + 0.5) / (df + 0.5))
            score += idf * tf * (self.k1 + 1.0) / (tf + norm)
        return score

    def score(self, query: str, passage_id: str) -> float:
        """BM25 score of one passage for a query; 0 iff no query term occurs."""
        if passage_id not in self.doc_len:
            raise UnknownPassageError(passage_id)
        return self._score_doc(tokenize(query), passage_id)

    def retrieve(self, query: str, top_k: int) -> RetrievalResult:
        """Top-k positive-scoring passages, best first, ties by ascending id."""
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        query_tokens = tokenize(query)
        candidates: set[str] = set()
        for term in query_tokens:
            posting = self.postings.get(term)
            if posting:
                candidates.update(posting)
        scored = [(pid, self._score_doc(query_tokens, pid)) for pid in candidates]
        scored = [(pid, s) for pid, s in scored if s > 0.0]
        scored.sort(key=lambda item: (-item[1], item[0]))
        return RetrievalResult(query=query, hits=scored[:top_k], retriever_tag="bm25")

    def save(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        payload = {
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "k1": self.k1,
            "b": self.b,
            "corpus_path": self.corpus_path,
            "doc_len": self.doc_len,
            "postings": self.postings,
        }
        path = out / INDEX_FILE
        path.write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")
        return path

    @classmethod
    def load(cls, index_dir: str | Path) -> "Bm25Index":
        path = Path(index_dir) / INDEX_FILE
        if not path.exists():
            raise IndexFormatError(f"{index_dir} does not contain {INDEX_FILE}")
        payload = json.loads(path.read_text(encoding="utf-8"))
        if payload.get("format") != INDEX_FORMAT:
            raise IndexFormatError(f"unrecognized index format {payload.get('format')!r}")
        if payload.get("version") != INDEX_VERSION:
            raise IndexFormatError(f"unsupported index version {payload.get('version')!r}")
        return cls(
            k1=payload["k1"],
            b=payload["b"],
            doc_len=payload["doc_len"],
            postings=payload["postings"],
            corpus_path=payload.get("corpus_path"),
        )


def build_index(corpus: Corpus, config: RetrievalConfig | None = None) -> Bm25Index:
    """Build the inverted index from an ingested corpus."""
    config = config or RetrievalConfig()
    if len(corpus) == 0:
        raise EmptyCorpusError("cannot index an empty corpus")
    doc_len: dict[str, int] = {}
    postings: dict[str, dict[str, int]] = {}
    for passage in corpus:
        tokens = tokenize(passage.text)
        doc_len[passage.id] = len(tokens)
        for term in tokens:
            postings.setdefault(term, {})
            postings[term][passage.id] = postings[term].get(passage.id, 0) + 1
    return Bm25Index(
        k1=config.k1, b=config.b, doc_len=doc_len, postings=postings, corpus_path=str(corpus.root)
    )


class EmbeddingClient:
    """HTTP client for an embedding endpoint.

    Wire format: POST {"input": [str], "model": tag} -> {"embeddings": [[float]]}.
    Auth is a bearer token read from the environment variable named by
    `api_key_env`, when set.
    """

    def __init__(
        self,
        endpoint_url: str,
        model_tag: str = "default",
        api_key_env: str | None = None,
        timeout: float = 30.0,
    ):
        self.endpoint_url = endpoint_url
        self.model_tag = model_tag
        self.api_key_env = api_key_env
        self.timeout = timeout

    def embed(self, texts: list[str]) -> list[list[float]]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            token = os.environ.get(self.api_key_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        try:
            resp = requests.post(
                self.endpoint_url,
                json={"input": texts, "model": self.model_tag},
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise EmbeddingBackendError(f"embedding endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise EmbeddingBackendError(f"embedding endpoint returned HTTP {resp.status_code}")
        try:
            vectors = resp.json()["embeddings"]
        except (ValueError, KeyError) as exc:
            raise EmbeddingBackendError("embedding endpoint returned a malformed payload") from exc
        if len(vectors) != len(texts):
            raise EmbeddingBackendError(
                f"embedding endpoint returned {len(vectors)} vectors for {len(texts)} inputs"
            )
        return [[float(x) for x in vec] for vec in vectors]


def _cache_path(cache_dir: Path, model_tag: str, passage_id: str) -> Path:
    digest = hashlib.sha256(f"{model_tag}:{passage_id}".encode("utf-8")).hexdigest()
    return cache_dir / f"{digest}.json"


def _passage_vectors(
    client: EmbeddingClient, corpus: Corpus, cache_dir: str | Path | None
) -> dict[str, list[float]]:
    cache = Path(cache_dir) if cache_dir is not None else None
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
    vectors: dict[str, list[float]] = {}
    missing: list[str] = []
    for pid in corpus.ids():
        if cache is not None:
            path = _cache_path(cache, client.model_tag, pid)
            if path.exists():
                vectors[pid] = json.loads(path.read_text(encoding="utf-8"))["embedding"]
                continue
        missing.append(pid)
    if missing:
        texts = []
        for pid in missing:
            passage = corpus.get(pid)
            # Titles help disambiguation, so they are embedded when present.
            texts.append(f"{passage.title}\n{passage.text}" if passage.title else passage.text)
        embedded = client.embed(texts)
        for pid, vec in zip(missing, embedded):
            vectors[pid] = vec
            if cache is not None:
                _cache_path(cache, client.model_tag, pid).write_text(
                    json.dumps({"passage_id": pid, "model_tag": client.model_tag, "embedding": vec}),
                    encoding="utf-8",
                )
    return vectors


def dense_retrieve(
    client: EmbeddingClient,
    corpus: Corpus,
    query: str,
    top_k: int,
    cache_dir: str | Path | None = None,
) -> RetrievalResult:
    """Cosine-similarity top-k over endpoint embeddings of the whole corpus.

    Passage vectors are cached on disk keyed by (model tag, passage id) when a
    cache directory is given; only the query is embedded on later calls.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    vectors = _passage_vectors(client, corpus, cache_dir)
    query_vec = np.asarray(client.embed([query])[0], dtype=float)
    qnorm = float(np.linalg.norm(query_vec))
    scored: list[tuple[str, float]] = []
    for pid, vec in vectors.items():
        pvec = np.asarray(vec, dtype=float)
        if pvec.shape != query_vec.shape:
            raise EmbeddingBackendError(
                f"dimension mismatch: passage {pid!r} has {pvec.shape[0]} dims, query has {query_vec.shape[0]}"
            )
        pnorm = float(np.linalg.norm(pvec))
        sim = float(np.dot(query_vec, pvec) / (qnorm * pnorm)) if qnorm > 0 and pnorm > 0 else 0.0
        scored.append((pid, sim))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return RetrievalResult(query=query, hits=scored[:top_k], retriever_tag="dense")
