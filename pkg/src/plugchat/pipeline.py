"""End-to-end response generation: query rewrite, retrieval, instruction
slot assembly, FiD encoding, penalized decoding.

One ChatPipeline owns a model/vocab/template/backend combination and is
stateless across calls; the caller owns the DialogueState. Search failures
or a disabled backend degrade to zero knowledge slots.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import torch

from .decoding import GenerationParams, beam_search, stream_topk
from .instructions import (
    DEFAULT_RECENT_TURNS,
    DialogueState,
    TemplateSet,
    builtin_templates,
    encode_with_sep,
    serialize_turns,
)
from .model import Seq2SeqModel, fuse
from .retrieval import DEFAULT_TOP_N, Query, RetrievedDoc, rewrite_query
from .tokenizer import Vocab

logger = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    reply: str
    query: Query | None
    docs: list[RetrievedDoc] = field(default_factory=list)
    first_token_latency: float = 0.0
    total_time: float = 0.0
    slot_kinds: list[str] = field(default_factory=list)


class ChatPipeline:
    def __init__(
        self,
        model: Seq2SeqModel,
        vocab: Vocab,
        templates: TemplateSet | None = None,
        backend=None,  # SearchBackend contract: .name, .search(q, n)
        rewrite_model: Seq2SeqModel | None = None,
        params: GenerationParams | None = None,
        recent: int = DEFAULT_RECENT_TURNS,
        search_top_n: int = DEFAULT_TOP_N,
    ):
        self.model = model
        self.vocab = vocab
        self.templates = templates or builtin_templates()
        self.backend = backend
        self.rewrite_model = rewrite_model
        self.params = params or GenerationParams()
        self.recent = recent
        self.search_top_n = search_top_n
        model.eval()
        if rewrite_model is not None:
            rewrite_model.eval()

    def _retrieve(self, state: DialogueState, search: bool) -> tuple[Query | None, list[RetrievedDoc]]:
        if not search or self.backend is None:
            return None, []
        query = rewrite_query(state, self.rewrite_model, self.vocab, self.recent)
        try:
            docs = self.backend.search(query.text, self.search_top_n)
        except Exception as err:
            logger.warning("search backend %s failed: %s", self.backend.name, err)
            docs = []
        return query, docs

    def _prepare(self, state: DialogueState, search: bool):
        from .instructions import build_slots

        query, docs = self._retrieve(state, search)
        slots = build_slots(state, docs, self.templates, self.vocab, self.recent)
        with torch.no_grad():
            memory = fuse(
                [self.model.encode_slot(s.ids, i) for i, s in enumerate(slots)]
            )
        history_ids = encode_with_sep(self.vocab, serialize_turns(state.turns))
        return query, docs, slots, memory, history_ids

    def respond(
        self,
        state: DialogueState,
        search: bool = True,
        overrides: GenerationParams | None = None,
    ) -> PipelineResult:
        """Beam-search reply for the state's latest user turn."""
        params = overrides or self.params
        start = time.perf_counter()
        query, docs, slots, memory, history_ids = self._prepare(state, search)
        ids = beam_search(self.model, memory, params, history_ids)
        total = time.perf_counter() - start
        return PipelineResult(
            reply=self.vocab.decode(ids),
            query=query,
            docs=docs,
            first_token_latency=total,  # beam emits nothing until done
            total_time=total,
            slot_kinds=[s.kind for s in slots],
        )

    def stream_respond(
        self,
        state: DialogueState,
        search: bool = True,
        overrides: GenerationParams | None = None,
    ):
        """Generator: ("meta", PipelineResult-shell) first, then ("token",
        text_fragment) per decoded token, then ("done", PipelineResult)."""
        params = overrides or self.params
        start = time.perf_counter()
        query, docs, slots, memory, history_ids = self._prepare(state, search)
        shell = PipelineResult(
            reply="", query=query, docs=docs, slot_kinds=[s.kind for s in slots]
        )
        yield "meta", shell
        pieces: list[str] = []
        first = None
        for tok in stream_topk(self.model, memory, params, history_ids):
            if first is None:
                first = time.perf_counter() - start
            fragment = self.vocab.decode([tok])
            pieces.append(fragment)
            if fragment:
                yield "token", fragment
        result = PipelineResult(
            reply="".join(pieces),
            query=query,
            docs=docs,
            first_token_latency=first or 0.0,
            total_time=time.perf_counter() - start,
            slot_kinds=shell.slot_kinds,
        )
        yield "done", result
