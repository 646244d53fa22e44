"""Automatic dialogue metrics, knowledge entity-containment accuracy, and
the self-chat simulator.

Metric tokenization: one token per CJK character, whitespace split
otherwise; the convention is stamped into every report header so the
numbers are self-describing. ROUGE-L takes the max LCS F1 over the
references; BLEU-4 uses uniform 1..4-gram weights, per-reference clipped
counts, add-one smoothing for zero counts, and the closest-reference
brevity penalty.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import math

from .instructions import DialogueState, Turn
from .textutils import metric_tokenize

logger = logging.getLogger(__name__)

TOKENIZATION = "cjk-char + whitespace"

USE_CASES = (
    "daily_chat",
    "open_qa",
    "opinion",
    "safety_chat",
    "skills",
    "persona_chat",
    "emotion_chat",
    "others",
)

QA_TOPICS = ("history", "literature", "science", "life", "geography", "biology", "art")


@dataclass
class EvalExample:
    context: list[Turn]
    references: list[str]
    use_case: str

    def __post_init__(self):
        if not self.references:
            raise ValueError("need at least one reference response")
        if self.use_case not in USE_CASES:
            raise ValueError(f"use_case {self.use_case!r} not in {USE_CASES}")


@dataclass
class KnowledgeQA:
    question: str
    answers: list[str]  # paraphrase set for the answer entity
    topic: str

    def __post_init__(self):
        if not self.answers:
            raise ValueError("need at least one answer paraphrase")
        if self.topic not in QA_TOPICS:
            raise ValueError(f"topic {self.topic!r} not in {QA_TOPICS}")


def _lcs_len(a: list[str], b: list[str]) -> int:
    # rolling single-row dynamic program
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        row = [0]
        for j, y in enumerate(b):
            row.append(prev[j] + 1 if x == y else max(prev[j + 1], row[-1]))
        prev = row
    return prev[-1]


def rouge_l(hypothesis: str, references: list[str]) -> float:
    """LCS-based F1, max over references."""
    if not references:
        raise ValueError("empty reference set")
    hyp = metric_tokenize(hypothesis)
    if not hyp:
        return 0.0
    best = 0.0
    for ref_text in references:
        ref = metric_tokenize(ref_text)
        if not ref:
            continue
        lcs = _lcs_len(hyp, ref)
        if lcs == 0:
            continue
        precision = lcs / len(hyp)
        recall = lcs / len(ref)
        best = max(best, 2 * precision * recall / (precision + recall))
    return best


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_4(hypothesis: str, references: list[str]) -> float:
    hyp = metric_tokenize(hypothesis)
    if not hyp:
        return 0.0
    refs = [metric_tokenize(r) for r in references]
    log_precision = 0.0
    for n in range(1, 5):
        counts = _ngram_counts(hyp, n)
        clip = Counter()
        for ref in refs:
            for gram, c in _ngram_counts(ref, n).items():
                clip[gram] = max(clip[gram], c)
        matched = sum(min(c, clip[g]) for g, c in counts.items())
        possible = max(1, len(hyp) - n + 1)
        if matched == 0:  # add-one smoothing at sentence level
            matched, possible = 1, possible + 1
        log_precision += 0.25 * math.log(matched / possible)
    h = len(hyp)
    r = min((abs(len(ref) - h), len(ref)) for ref in refs)[1]
    brevity = 1.0 if h > r else math.exp(1 - r / h)
    return brevity * math.exp(log_precision)


def dist_n(responses: list[str], n: int = 4) -> int:
    """Number of distinct token n-grams across the whole response set."""
    if n < 1:
        raise ValueError("n must be >= 1")
    grams = set()
    for response in responses:
        tokens = metric_tokenize(response)
        grams.update(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))
    return len(grams)


def avg_token_length(responses: list[str]) -> float:
    if not responses:
        return 0.0
    return sum(len(metric_tokenize(r)) for r in responses) / len(responses)


@dataclass
class MetricReport:
    rouge_l: float
    bleu_4: float
    avg_token_length: float
    dist_4: int
    per_use_case: dict[str, dict[str, float]] = field(default_factory=dict)
    tokenization: str = TOKENIZATION

    def to_json(self) -> str:
        return json.dumps(self.__dict__, ensure_ascii=False, indent=2)

    def table(self) -> str:
        lines = [
            f"tokenization: {self.tokenization}",
            f"{'use case':<14} {'RL':>7} {'B4':>7} {'L':>7} {'D4':>7} {'n':>5}",
            f"{'all':<14} {self.rouge_l * 100:>7.2f} {self.bleu_4 * 100:>7.2f} "
            f"{self.avg_token_length:>7.1f} {self.dist_4:>7d} "
            f"{int(sum(c['count'] for c in self.per_use_case.values())):>5d}",
        ]
        for case, row in sorted(self.per_use_case.items()):
            lines.append(
                f"{case:<14} {row['rouge_l'] * 100:>7.2f} {row['bleu_4'] * 100:>7.2f} "
                f"{row['avg_token_length']:>7.1f} {int(row['dist_4']):>7d} {int(row['count']):>5d}"
            )
        return "\n".join(lines)


def evaluate_responses(
    examples: list[EvalExample], responses: list[str]
) -> MetricReport:
    if len(examples) != len(responses):
        raise ValueError("one response per example required")
    buckets: dict[str, list[int]] = defaultdict(list)
    rl, b4 = [], []
    for i, (ex, resp) in enumerate(zip(examples, responses)):
        rl.append(rouge_l(resp, ex.references))
        b4.append(bleu_4(resp, ex.references))
        buckets[ex.use_case].append(i)
    per_case = {}
    for case, idxs in buckets.items():
        case_responses = [responses[i] for i in idxs]
        per_case[case] = {
            "rouge_l": sum(rl[i] for i in idxs) / len(idxs),
            "bleu_4": sum(b4[i] for i in idxs) / len(idxs),
            "avg_token_length": avg_token_length(case_responses),
            "dist_4": dist_n(case_responses, 4),
            "count": len(idxs),
        }
    return MetricReport(
        rouge_l=sum(rl) / len(rl) if rl else 0.0,
        bleu_4=sum(b4) / len(b4) if b4 else 0.0,
        avg_token_length=avg_token_length(responses),
        dist_4=dist_n(responses, 4),
        per_use_case=per_case,
    )


_WS_RE = re.compile(r"\s+")


def _normalize(text: str) -> str:
    return _WS_RE.sub(" ", text.casefold()).strip()


def knowledge_accuracy(
    outputs: list[str], qa_set: list[KnowledgeQA]
) -> tuple[float, dict[str, float]]:
    """A response is correct iff it contains at least one answer paraphrase
    as a substring after case folding and whitespace squashing."""
    if len(outputs) != len(qa_set):
        raise ValueError("one output per QA item required")
    per_topic_hits: dict[str, list[int]] = defaultdict(list)
    for out, qa in zip(outputs, qa_set):
        norm = _normalize(out)
        hit = int(any(_normalize(ans) in norm for ans in qa.answers if ans.strip()))
        per_topic_hits[qa.topic].append(hit)
    per_topic = {
        topic: sum(hits) / len(hits) for topic, hits in sorted(per_topic_hits.items())
    }
    total = sum(sum(h) for h in per_topic_hits.values())
    return (total / len(qa_set) if qa_set else 0.0), per_topic


# ---- self chat ----


@dataclass
class SelfChatTurn:
    speaker: str  # "a" | "b"
    text: str
    query: str | None = None
    docs: list[str] = field(default_factory=list)


@dataclass
class SelfChatTranscript:
    prompt: str
    turns: list[SelfChatTurn] = field(default_factory=list)
    truncated: bool = False


def self_chat(
    pipeline_a,
    pipeline_b,
    prompts: list[str],
    rounds: int,
    search: bool = False,
) -> list[SelfChatTranscript]:
    """Two models alternate for `rounds` rounds (two turns per round) from
    each seed prompt, each seeing the full accumulated history from its own
    perspective. A generation failure logs and truncates that transcript."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    transcripts = []
    for pi, prompt in enumerate(prompts):
        transcript = SelfChatTranscript(prompt=prompt)
        history: list[tuple[str, str]] = [("seed", prompt)]  # (speaker, text)
        try:
            for _ in range(rounds):
                for side, pipeline in (("a", pipeline_a), ("b", pipeline_b)):
                    state = DialogueState(
                        session_id=f"selfchat-{pi}-{side}",
                        turns=[
                            Turn("bot" if speaker == side else "user", text)
                            for speaker, text in history
                        ],
                    )
                    result = pipeline.respond(state, search=search)
                    history.append((side, result.reply))
                    transcript.turns.append(
                        SelfChatTurn(
                            speaker=side,
                            text=result.reply,
                            query=result.query.text if result.query else None,
                            docs=[d.doc_id for d in result.docs],
                        )
                    )
        except Exception as err:
            logger.warning("self-chat prompt %r truncated: %s", prompt, err)
            transcript.truncated = True
        transcripts.append(transcript)
    return transcripts


def save_transcripts(path: str | Path, transcripts: list[SelfChatTranscript]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in transcripts:
            f.write(
                json.dumps(
                    {
                        "prompt": t.prompt,
                        "truncated": t.truncated,
                        "turns": [
                            {"speaker": u.speaker, "text": u.text, "query": u.query, "docs": u.docs}
                            for u in t.turns
                        ],
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


# ---- dataset files ----


def load_eval_set(path: str | Path) -> list[EvalExample]:
    """JSONL: {"context": [{"role","text"}...], "references": [...], "use_case": ...}"""
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            out.append(
                EvalExample(
                    context=[Turn(t["role"], t["text"]) for t in row["context"]],
                    references=row["references"],
                    use_case=row["use_case"],
                )
            )
    return out


def load_qa_set(path: str | Path) -> list[KnowledgeQA]:
    """JSONL: {"question": ..., "answers": [...], "topic": ...}"""
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            out.append(KnowledgeQA(row["question"], row["answers"], row["topic"]))
    return out
