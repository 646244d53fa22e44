"""Search query generation and document retrieval.

The default backend is a local BM25 inverted index (k1=1.2, b=0.75,
nonnegative idf) over a JSONL corpus; an HTTP adapter plugs in external
engines. Backend failures degrade to an empty result set so response
generation never aborts for lack of knowledge.

The query comes from a model-based rewrite of the recent dialogue
context; when no rewrite model is configured or it produces an empty
string, the last user utterance is used verbatim.
"""

from __future__ import annotations

import json
import logging
import math
import struct
import zlib
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path

import requests

from .textutils import is_cjk, search_tokenize

logger = logging.getLogger(__name__)

INDEX_MAGIC = b"PLUGIDX1"
INDEX_VERSION = 1
DEFAULT_TOP_N = 10
SNIPPET_WINDOW = 60
BM25_K1 = 1.2
BM25_B = 0.75


@dataclass
class Query:
    text: str
    origin: str  # "rewritten" | "fallback"

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("query text must be non-empty")


@dataclass
class RetrievedDoc:
    doc_id: str
    title: str
    snippet: str
    score: float
    source: str


class RetrievalError(ValueError):
    pass


class Bm25Index:
    """In-memory inverted index; immutable once built, reads are
    thread-safe. Also satisfies the SearchBackend contract (.name,
    .search(query, n))."""

    name = "bm25"

    def __init__(self, docs: list[dict]):
        if not docs:
            raise RetrievalError("cannot index an empty corpus")
        self.docs = docs
        self.doc_tokens = [search_tokenize(f"{d.get('title', '')} {d['text']}") for d in docs]
        self.doc_len = [len(t) for t in self.doc_tokens]
        self.avgdl = sum(self.doc_len) / len(self.doc_len)
        self.postings: dict[str, dict[int, int]] = defaultdict(dict)
        for i, tokens in enumerate(self.doc_tokens):
            for term, tf in Counter(tokens).items():
                self.postings[term][i] = tf
        self.postings = dict(self.postings)

    @property
    def size(self) -> int:
        return len(self.docs)

    def df(self, term: str) -> int:
        return len(self.postings.get(term, {}))

    def idf(self, term: str) -> float:
        # +1 inside the log keeps idf nonnegative, so adding an occurrence
        # of a query term can never lower a document's score
        n, df = self.size, self.df(term)
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def score(self, query_terms: list[str], doc_idx: int) -> float:
        s = 0.0
        dl = self.doc_len[doc_idx]
        for term in query_terms:
            tf = self.postings.get(term, {}).get(doc_idx, 0)
            if tf == 0:
                continue
            norm = tf + BM25_K1 * (1 - BM25_B + BM25_B * dl / self.avgdl)
            s += self.idf(term) * tf * (BM25_K1 + 1) / norm
        return s

    def search(self, query: str, n: int = DEFAULT_TOP_N) -> list[RetrievedDoc]:
        """Top-n by BM25, ties broken by ascending doc id; may return fewer
        than n when matches are scarce."""
        if n < 1:
            raise RetrievalError("n must be >= 1")
        terms = search_tokenize(query)
        hits = set()
        for term in terms:
            hits.update(self.postings.get(term, {}))
        scored = sorted(
            ((self.score(terms, i), i) for i in hits),
            key=lambda pair: (-pair[0], str(self.docs[pair[1]].get("id", pair[1]))),
        )
        out = []
        for score, i in scored[:n]:
            doc = self.docs[i]
            out.append(
                RetrievedDoc(
                    doc_id=str(doc.get("id", i)),
                    title=doc.get("title", ""),
                    snippet=self._snippet(i, terms),
                    score=score,
                    source=self.name,
                )
            )
        return out

    def _snippet(self, doc_idx: int, terms: list[str]) -> str:
        """Best-scoring 60-token window of the document text (most query
        term occurrences; earliest window wins ties)."""
        text = self.docs[doc_idx]["text"]
        spans = _token_spans(text)
        if len(spans) <= SNIPPET_WINDOW:
            return text
        term_set = set(terms)
        hits = [1 if tok in term_set else 0 for tok, _, _ in spans]
        window = sum(hits[:SNIPPET_WINDOW])
        best, best_at = window, 0
        for i in range(1, len(spans) - SNIPPET_WINDOW + 1):
            window += hits[i + SNIPPET_WINDOW - 1] - hits[i - 1]
            if window > best:
                best, best_at = window, i
        start = spans[best_at][1]
        end = spans[best_at + SNIPPET_WINDOW - 1][2]
        return text[start:end]

    # ---- persistence: versioned binary (magic + version + deflated JSON) ----

    def save(self, path: str | Path) -> None:
        payload = zlib.compress(json.dumps({"docs": self.docs}).encode("utf-8"))
        with open(path, "wb") as f:
            f.write(INDEX_MAGIC)
            f.write(struct.pack("<I", INDEX_VERSION))
            f.write(payload)

    @classmethod
    def load(cls, path: str | Path) -> "Bm25Index":
        with open(path, "rb") as f:
            magic = f.read(len(INDEX_MAGIC))
            if magic != INDEX_MAGIC:
                raise RetrievalError(f"not an index file: {path}")
            (version,) = struct.unpack("<I", f.read(4))
            if version != INDEX_VERSION:
                raise RetrievalError(f"unsupported index version {version}")
            payload = json.loads(zlib.decompress(f.read()).decode("utf-8"))
        return cls(payload["docs"])

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "Bm25Index":
        docs = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    docs.append(json.loads(line))
        return cls(docs)


def _token_spans(text: str) -> list[tuple[str, int, int]]:
    """search_tokenize with character offsets, for snippeting."""
    spans = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if is_cjk(ch):
            spans.append((ch.casefold(), i, i + 1))
            i += 1
        elif ch.isalnum():
            j = i
            while j < n and text[j].isalnum() and not is_cjk(text[j]):
                j += 1
            spans.append((text[i:j].casefold(), i, j))
            i = j
        else:
            i += 1
    return spans


@dataclass
class HttpBackendConfig:
    endpoint: str
    deadline_s: float = 3.0
    source: str = "http"


class HttpSearchBackend:
    """Adapter for external engines: GET {endpoint}?q=...&n=... expecting a
    JSON array of {title, snippet}. Timeouts and malformed responses yield
    an empty result plus a warning, never a pipeline failure."""

    def __init__(self, config: HttpBackendConfig):
        self.config = config
        self.name = config.source

    def search(self, query: str, n: int = DEFAULT_TOP_N) -> list[RetrievedDoc]:
        return http_search(self.config, query, n)


def http_search(config: HttpBackendConfig, query: str, n: int = DEFAULT_TOP_N) -> list[RetrievedDoc]:
    try:
        resp = requests.get(
            config.endpoint, params={"q": query, "n": n}, timeout=config.deadline_s
        )
        resp.raise_for_status()
        items = resp.json()
        if not isinstance(items, list):
            raise ValueError("expected a JSON array")
    except Exception as err:
        logger.warning("search backend %s failed (%s); proceeding without knowledge",
                       config.endpoint, err)
        return []
    docs = []
    for i, item in enumerate(items[:n]):  # client-side truncation
        try:
            docs.append(
                RetrievedDoc(
                    doc_id=str(item.get("id", f"{config.source}-{i}")),
                    title=str(item.get("title", "")),
                    snippet=str(item["snippet"]),
                    score=1.0 / (1 + i),
                    source=config.source,
                )
            )
        except (KeyError, TypeError) as err:
            logger.warning("dropping malformed search item %d: %s", i, err)
    return docs


def rewrite_query(state, model=None, vocab=None, recent: int = 4) -> Query:
    """Standalone search query from the dialogue state.

    Uses the rewrite model conditioned on the recent context when one is
    given; falls back to the last user utterance verbatim when the model is
    absent or its output is empty.
    """
    user_turns = [t for t in state.turns if t.role == "user"]
    if not user_turns:
        raise RetrievalError("no user turns to derive a query from")
    fallback = user_turns[-1].text
    if model is None or vocab is None:
        return Query(fallback, "fallback")

    from .decoding import GenerationParams, greedy_decode
    from .instructions import encode_with_sep, serialize_turns
    from .model import fuse

    c, _ = state.split(recent)
    ids = encode_with_sep(vocab, serialize_turns(c))[-model.config.max_enc_len :]
    memory = fuse([model.encode_slot(ids)])
    out = greedy_decode(
        model, memory, GenerationParams(min_len=0, max_len=48, repetition_penalty=1.0)
    )
    text = vocab.decode(out).strip()
    if not text:
        return Query(fallback, "fallback")
    return Query(text, "rewritten")
