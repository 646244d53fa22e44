"""Beam search and streaming top-k sampling with the repetition/length
penalty stack, plus KV-cache incremental decoding.

Penalty stack applied to the raw logits at every step, in order:
  1. repetition penalty on tokens that would complete an n-gram already
     seen in the dialogue history or the generated prefix (CTRL-style
     logit scaling, or hard blocking behind a flag),
  2. EOS forced to -inf until min_len tokens have been generated.
Beams are ranked at finalization by cumulative log-prob divided by the
GNMT length penalty lp(len) = ((5 + len) / 6) ** alpha.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import torch
import torch.nn.functional as F

from .model import FusedMemory, KVCache, Seq2SeqModel
from .tokenizer import BOS_ID, EOS_ID


@dataclass
class GenerationParams:
    beam_size: int = 3
    repetition_penalty: float = 1.2
    rep_ngram: int = 6
    length_penalty: float = 1.2
    min_len: int = 10
    max_len: int = 512
    top_k: int = 8
    seed: int = 0
    block_repeats: bool = False  # hard n-gram blocking instead of scaling

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if not 0 <= self.min_len <= self.max_len:
            raise ValueError("need 0 <= min_len <= max_len")
        if self.repetition_penalty < 1.0:
            raise ValueError("repetition_penalty must be >= 1")
        if self.rep_ngram < 2:
            raise ValueError("rep_ngram must be >= 2")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")

    def override(self, **kwargs) -> "GenerationParams":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **kwargs) if kwargs else self


@dataclass
class Beam:
    ids: list[int] = field(default_factory=list)  # generated tokens, no BOS
    logprob: float = 0.0
    finished: bool = False
    cache: KVCache | None = None


def banned_continuations(
    history_ids: list[int], prefix_ids: list[int], n: int = 6
) -> set[int]:
    """Tokens t such that (last n-1 prefix tokens) + [t] occurs as an
    n-gram in history + prefix."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if len(prefix_ids) < n - 1:
        return set()
    suffix = list(prefix_ids[-(n - 1):])
    full = list(history_ids) + list(prefix_ids)
    banned = set()
    for i in range(len(full) - n + 1):
        if full[i : i + n - 1] == suffix:
            banned.add(full[i + n - 1])
    return banned


def apply_repetition_penalty(
    logits: torch.Tensor, banned: set[int], penalty: float = 1.2
) -> torch.Tensor:
    """Scale banned tokens' logits down: positive divided by the penalty,
    negative multiplied by it. penalty=1 is the identity."""
    if penalty < 1.0:
        raise ValueError("penalty must be >= 1")
    if not banned or penalty == 1.0:
        return logits
    out = logits.clone()
    idx = torch.tensor(sorted(banned), dtype=torch.long, device=logits.device)
    vals = out[idx]
    out[idx] = torch.where(vals > 0, vals / penalty, vals * penalty)
    return out


def length_penalty(length: int, alpha: float) -> float:
    return ((5.0 + length) / 6.0) ** alpha


def _penalized_logits(
    logits: torch.Tensor,
    generated: list[int],
    history_ids: list[int],
    params: GenerationParams,
) -> torch.Tensor:
    banned = banned_continuations(history_ids, generated, params.rep_ngram)
    if params.block_repeats and banned:
        logits = logits.clone()
        logits[sorted(banned)] = float("-inf")
    else:
        logits = apply_repetition_penalty(logits, banned, params.repetition_penalty)
    if len(generated) < params.min_len:
        logits = logits.clone()
        logits[EOS_ID] = float("-inf")
    return logits


def _step(model, memory, generated, cache, history_ids, params):
    logits, cache = model.decode_step(memory, [BOS_ID] + generated, cache)
    return _penalized_logits(logits, generated, history_ids, params), cache


def greedy_decode(
    model: Seq2SeqModel,
    memory: FusedMemory,
    params: GenerationParams,
    history_ids: list[int] | None = None,
    use_cache: bool = True,
) -> list[int]:
    history_ids = history_ids or []
    cache = _new_cache(model) if use_cache else None
    generated: list[int] = []
    with torch.no_grad():
        while len(generated) < params.max_len:
            logits, cache = _step(model, memory, generated, cache, history_ids, params)
            if not use_cache:
                cache = None
            nxt = int(logits.argmax())
            generated.append(nxt)
            if nxt == EOS_ID:
                break
    return generated


def beam_search(
    model,
    memory: FusedMemory,
    params: GenerationParams,
    history_ids: list[int] | None = None,
) -> list[int]:
    """Best generated token sequence (EOS terminated or max_len long).

    Finished beams keep occupying their slot with a frozen score; ranking
    at the end divides cumulative log-prob by lp(len) where len counts
    generated tokens including the terminating EOS. Ties keep the lower
    beam index.
    """
    history_ids = history_ids or []
    beams = [Beam(cache=_new_cache(model))]
    with torch.no_grad():
        for _ in range(params.max_len):
            if all(b.finished for b in beams):
                break
            candidates: list[tuple[float, int, int, Beam]] = []
            for bi, beam in enumerate(beams):
                if beam.finished:
                    candidates.append((beam.logprob, bi, -1, beam))
                    continue
                logits, cache = _step(
                    model, memory, beam.ids, beam.cache, history_ids, params
                )
                beam.cache = cache
                logp = F.log_softmax(logits, dim=-1)
                k = min(params.beam_size, logp.shape[0])
                top = torch.topk(logp, k)
                for val, tok in zip(top.values.tolist(), top.indices.tolist()):
                    candidates.append((beam.logprob + val, bi, tok, beam))
            # stable: score desc, then parent beam index, then token id
            candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
            next_beams = []
            for score, _, tok, parent in candidates[: params.beam_size]:
                if tok == -1:
                    next_beams.append(parent)
                elif tok == EOS_ID:
                    next_beams.append(
                        Beam(parent.ids + [tok], score, True, None)
                    )
                else:
                    next_beams.append(
                        Beam(
                            parent.ids + [tok],
                            score,
                            False,
                            parent.cache.fork() if parent.cache else None,
                        )
                    )
            beams = next_beams
    best, best_score = None, None
    for beam in beams:  # ties resolved by lower beam index via strict >
        score = beam.logprob / length_penalty(len(beam.ids), params.length_penalty)
        if best_score is None or score > best_score:
            best, best_score = beam, score
    return best.ids


def stream_topk(
    model: Seq2SeqModel,
    memory: FusedMemory,
    params: GenerationParams,
    history_ids: list[int] | None = None,
):
    """Generator of token ids sampled from the renormalized top-k logits
    after penalties; deterministic per seed. Ends at EOS or max_len."""
    history_ids = history_ids or []
    gen = torch.Generator().manual_seed(params.seed)
    cache = _new_cache(model)
    generated: list[int] = []
    with torch.no_grad():
        while len(generated) < params.max_len:
            logits, cache = _step(model, memory, generated, cache, history_ids, params)
            k = min(params.top_k, logits.shape[0])
            top = torch.topk(logits, k)
            probs = F.softmax(top.values, dim=-1)
            pick = int(torch.multinomial(probs, 1, generator=gen))
            nxt = int(top.indices[pick])
            generated.append(nxt)
            yield nxt
            if nxt == EOS_ID:
                break


@dataclass
class TimedResult:
    ids: list[int]
    total_time: float
    first_token_latency: float


def timed_decode(
    model: Seq2SeqModel,
    memory: FusedMemory,
    params: GenerationParams,
    history_ids: list[int] | None = None,
    use_cache: bool = True,
) -> TimedResult:
    """Greedy decode with wall-clock totals and first-token latency, for
    comparing cached against uncached inference on identical inputs."""
    history_ids = history_ids or []
    cache = _new_cache(model) if use_cache else None
    generated: list[int] = []
    first_latency = None
    start = time.perf_counter()
    with torch.no_grad():
        while len(generated) < params.max_len:
            logits, cache = _step(model, memory, generated, cache, history_ids, params)
            if not use_cache:
                cache = None
            nxt = int(logits.argmax())
            if first_latency is None:
                first_latency = time.perf_counter() - start
            generated.append(nxt)
            if nxt == EOS_ID:
                break
    return TimedResult(generated, time.perf_counter() - start, first_latency or 0.0)


def _new_cache(model) -> KVCache:
    return KVCache(model.config.dec_layers)
