"""Two-stage corpus cleaning: rule-based noise filtering, then metric-model
relevance filtering with per-source thresholds.

Rule stage strips URLs, social-media tags, emoji and private information
in place (the dialogue is kept with cleaned text), and drops dialogues
whose response matches the generic-response list, hits the unsafe keyword
list, or exceeds the response length cap. The generic and unsafe lists
ship as editable text files.

Verdict bookkeeping: `reasons` holds drop reasons only (keep is False iff
it is non-empty); strip events that cleaned but kept the text are recorded
separately in `cleaned_reasons`.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import torch
import torch.nn.functional as F

from .instructions import Turn
from .model import Seq2SeqModel
from .textutils import metric_tokenize
from .tokenizer import SEP_ID, Vocab

MAX_RESPONSE_TOKENS = 512

_URL_RE = re.compile(r"(?:https?://|www\.)[^\s一-鿿]+")
_MEDIA_RE = re.compile(r"@\w+|#[^#\s]{1,30}#?|\[[^\[\]\n]{1,20}\]")
_EMOJI_RE = re.compile(
    "["
    "\U0001f000-\U0001faff"  # emoji & symbol planes
    "\U00002600-\U000027bf"  # misc symbols, dingbats
    "\U0001f900-\U0001f9ff"
    "︎️"  # variation selectors
    "]+"
)
_PRIVATE_RES = (
    re.compile(r"[\w.+-]+@[\w-]+\.[\w.-]+"),  # email
    re.compile(r"(?<!\d)1[3-9]\d{9}(?!\d)"),  # bare mobile number
    re.compile(r"(?<!\d)\d{3}[- ]\d{3,4}[- ]\d{4}(?!\d)"),  # dashed phone
    re.compile(r"(?<!\d)\d{17}[0-9Xx](?!\d)"),  # national-ID-shaped digit run
)

STRIP_RULES = (
    ("url", _URL_RE),
    ("media_tag", _MEDIA_RE),
    ("emoji", _EMOJI_RE),
) + tuple(("private_info", rx) for rx in _PRIVATE_RES)


@dataclass
class RuleFilterConfig:
    generic_responses: frozenset[str]
    unsafe_keywords: tuple[str, ...]
    max_response_tokens: int = MAX_RESPONSE_TOKENS


def _read_list(ref) -> list[str]:
    lines = []
    for line in ref.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            lines.append(line)
    return lines


def default_rule_config() -> RuleFilterConfig:
    data = resources.files("plugchat").joinpath("data")
    return RuleFilterConfig(
        generic_responses=frozenset(_read_list(data.joinpath("generic_responses.txt"))),
        unsafe_keywords=tuple(_read_list(data.joinpath("unsafe_keywords.txt"))),
    )


def load_rule_config(generic_path: str | Path, unsafe_path: str | Path) -> RuleFilterConfig:
    return RuleFilterConfig(
        generic_responses=frozenset(_read_list(Path(generic_path))),
        unsafe_keywords=tuple(_read_list(Path(unsafe_path))),
    )


@dataclass
class FilterVerdict:
    keep: bool
    reasons: list[str] = field(default_factory=list)  # drop reasons
    cleaned_reasons: list[str] = field(default_factory=list)  # stripped-not-dropped
    turns: list[Turn] | None = None  # cleaned dialogue when kept

    def __post_init__(self):
        assert self.keep == (not self.reasons), "keep flag contradicts reasons"


def _clean_text(text: str) -> tuple[str, list[str]]:
    hits = []
    for reason, rx in STRIP_RULES:
        cleaned = rx.sub(" ", text)
        if cleaned != text:
            hits.append(reason)
            text = cleaned
    if hits:
        text = re.sub(r"[ \t]+", " ", text).strip()
    return text, hits


def rule_filter(turns: list[Turn], config: RuleFilterConfig | None = None) -> FilterVerdict:
    """Clean every turn; drop on generic/unsafe/too-long responses.

    Idempotent: running on already-cleaned text changes nothing.
    """
    config = config or default_rule_config()
    cleaned_turns: list[Turn] = []
    cleaned_reasons: list[str] = []
    for t in turns:
        text, hits = _clean_text(t.text)
        for h in hits:
            if h not in cleaned_reasons:
                cleaned_reasons.append(h)
        cleaned_turns.append(Turn(t.role, text, t.timestamp))

    reasons: list[str] = []
    response = cleaned_turns[-1].text if cleaned_turns else ""
    if response.strip().casefold() in {g.casefold() for g in config.generic_responses}:
        reasons.append("generic_response")
    if any(k.casefold() in response.casefold() for k in config.unsafe_keywords):
        reasons.append("advertisement_or_unsafe")
    if len(metric_tokenize(response)) > config.max_response_tokens:
        reasons.append("response_too_long")

    if reasons:
        return FilterVerdict(False, reasons, cleaned_reasons, None)
    return FilterVerdict(True, [], cleaned_reasons, cleaned_turns)


# ---- metric model ----


class MetricModel(torch.nn.Module):
    """Shared-encoder relevance scorer: mean-pooled encoding of
    "context SEP response" through a linear head, squashed to [0, 1]."""

    def __init__(self, encoder: Seq2SeqModel):
        super().__init__()
        self.encoder = encoder
        self.head = torch.nn.Linear(encoder.config.dimension, 1)

    def logit(self, context_ids: list[int], response_ids: list[int]) -> torch.Tensor:
        ids = (context_ids + [SEP_ID] + response_ids)[: self.encoder.config.max_enc_len]
        slot = self.encoder.encode_slot(ids)
        pooled = slot.states[slot.mask].mean(dim=0)
        return self.head(pooled).squeeze(-1)

    def score(self, context_ids: list[int], response_ids: list[int]) -> float:
        with torch.no_grad():
            return torch.sigmoid(self.logit(context_ids, response_ids)).item()


@dataclass
class MetricTrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 8
    seed: int = 0
    holdout_fraction: float = 0.2


class FilteringError(ValueError):
    pass


def train_metric_model(
    labeled: list[tuple[list[int], list[int], int]],
    encoder: Seq2SeqModel,
    config: MetricTrainConfig | None = None,
) -> tuple[MetricModel, float]:
    """Binary cross-entropy training of encoder + head on
    (context_ids, response_ids, label) triples; returns the model and
    held-out accuracy."""
    config = config or MetricTrainConfig()
    labels = {lab for _, _, lab in labeled}
    if labels != {0, 1}:
        raise FilteringError(f"need both labels 0 and 1, got {sorted(labels)}")
    torch.manual_seed(config.seed)
    import random

    rng = random.Random(config.seed)
    shuffled = list(labeled)
    rng.shuffle(shuffled)
    n_holdout = max(1, int(len(shuffled) * config.holdout_fraction))
    holdout, trainset = shuffled[:n_holdout], shuffled[n_holdout:]

    model = MetricModel(encoder)
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)
    model.train()
    for _ in range(config.epochs):
        rng.shuffle(trainset)
        for b in range(0, len(trainset), config.batch_size):
            batch = trainset[b : b + config.batch_size]
            optimizer.zero_grad(set_to_none=True)
            loss = torch.zeros(())
            for ctx, resp, lab in batch:
                logit = model.logit(ctx, resp)
                loss = loss + F.binary_cross_entropy_with_logits(
                    logit, torch.tensor(float(lab))
                )
            (loss / len(batch)).backward()
            optimizer.step()
    model.eval()
    correct = sum(
        1 for ctx, resp, lab in holdout if (model.score(ctx, resp) >= 0.5) == bool(lab)
    )
    return model, correct / len(holdout)


@dataclass
class FilterReport:
    per_source: dict[str, dict[str, float]]
    per_reason: dict[str, int]

    def to_json(self) -> str:
        return json.dumps(
            {"per_source": self.per_source, "per_reason": self.per_reason},
            ensure_ascii=False,
            indent=2,
        )


def metric_filter(
    corpus: list[dict],
    model: MetricModel,
    vocab: Vocab,
    thresholds: dict[str, float],
) -> tuple[list[dict], FilterReport]:
    """Keep dialogues scoring at or above their source's threshold; order
    preserved. Every example must carry a source with a configured
    threshold."""
    kept: list[dict] = []
    per_source: dict[str, dict[str, float]] = {}
    dropped = 0
    for dialogue in corpus:
        source = dialogue.get("source", "")
        if source not in thresholds:
            raise FilteringError(f"no threshold configured for source {source!r}")
        turns = dialogue["turns"]
        context = " ".join(t["text"] for t in turns[:-1])
        response = turns[-1]["text"]
        score = model.score(vocab.encode(context), vocab.encode(response))
        stats = per_source.setdefault(source, {"total": 0, "kept": 0})
        stats["total"] += 1
        if score >= thresholds[source]:
            stats["kept"] += 1
            kept.append(dialogue)
        else:
            dropped += 1
    for stats in per_source.values():
        stats["keep_rate"] = stats["kept"] / stats["total"] if stats["total"] else 0.0
    return kept, FilterReport(per_source, {"below_metric_threshold": dropped})


# ---- dialogue jsonl io ----


def load_dialogues(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def save_dialogues(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")
