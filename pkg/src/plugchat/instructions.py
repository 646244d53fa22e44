"""Render dialogue state, retrieved knowledge, and profiles into per-slot
instruction passages.

Templates are data, not code: UTF-8 files with "[kind]" section headers
and {placeholder} markers. The history template has a *_short variant used
when the long history is empty, so no dangling clause is rendered. Turn
text inside {context}/{long history} is serialized as "user: ..." /
"bot: ..." joined by the literal <sep> marker, which encode_with_sep maps
to the SEP token id.

Slot layout per request: one history slot, one knowledge slot per
retrieved document (each repeating the recent context), then user/bot
profile slots when the profiles are non-empty. Every slot is truncated
independently to the encoder budget, dropping the oldest long-history
turns first, then the knowledge tail, keeping the recent context whole
until forced, and never touching the instruction preamble.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .tokenizer import SEP_ID, Vocab

KNOWN_PLACEHOLDERS = {"context", "long history", "knowledge", "user profile", "bot profile"}

MANDATORY = {
    "history": {"context", "long history"},
    "history_short": {"context"},
    "knowledge": {"context", "knowledge"},
    "user_profile": {"context", "user profile"},
    "bot_profile": {"context", "bot profile"},
}

SEP_MARKER = "<sep>"
DEFAULT_RECENT_TURNS = 4
SLOT_BUDGET = 380

_PLACEHOLDER_RE = re.compile(r"\{([^{}]*)\}")


class TemplateError(ValueError):
    pass


@dataclass
class Turn:
    role: str  # "user" | "bot"
    text: str
    timestamp: float = field(default_factory=time.time)


@dataclass
class DialogueState:
    """Full session state; the recent/long split is recomputed on demand so
    c and l stay disjoint and jointly exhaustive by construction."""

    session_id: str
    turns: list[Turn] = field(default_factory=list)
    user_profile: str = ""
    bot_profile: str = ""

    def split(self, recent: int = DEFAULT_RECENT_TURNS) -> tuple[list[Turn], list[Turn]]:
        return split_history(self.turns, recent)


def split_history(turns: list[Turn], recent: int) -> tuple[list[Turn], list[Turn]]:
    """(recent context c, long history l): c is the last min(recent, n)
    turns, l is everything before, order preserved."""
    if recent < 1:
        raise ValueError("recent window must be >= 1")
    cut = max(0, len(turns) - recent)
    return list(turns[cut:]), list(turns[:cut])


@dataclass
class InstructionTemplate:
    kind: str
    text: str

    def placeholders(self) -> set[str]:
        return set(_PLACEHOLDER_RE.findall(self.text))

    def prefix(self) -> str:
        """Fixed instruction preamble: template text before the first placeholder."""
        m = _PLACEHOLDER_RE.search(self.text)
        return self.text[: m.start()] if m else self.text


@dataclass
class InstructionSlot:
    text: str
    kind: str
    ids: list[int]


def render(template: InstructionTemplate, fields: dict[str, str]) -> str:
    """Exact string substitution; all of the template's placeholders must
    be supplied and none may remain in the output."""
    missing = template.placeholders() - set(fields)
    if missing:
        raise TemplateError(f"template {template.kind!r} missing fields: {sorted(missing)}")
    out = template.text
    for name in template.placeholders():
        out = out.replace("{" + name + "}", fields[name])
    return out


class TemplateSet:
    def __init__(self, templates: dict[str, InstructionTemplate], name: str = ""):
        self.templates = templates
        self.name = name
        for kind, tpl in templates.items():
            if kind not in MANDATORY:
                raise TemplateError(f"unknown template kind [{kind}]")
            unknown = tpl.placeholders() - KNOWN_PLACEHOLDERS
            if unknown:
                raise TemplateError(
                    f"template [{kind}] has unknown placeholders: {sorted(unknown)}"
                )
            missing = MANDATORY[kind] - tpl.placeholders()
            if missing:
                raise TemplateError(
                    f"template [{kind}] lacks mandatory placeholders: {sorted(missing)}"
                )

    def __contains__(self, kind: str) -> bool:
        return kind in self.templates

    def __getitem__(self, kind: str) -> InstructionTemplate:
        if kind not in self.templates:
            raise TemplateError(f"no template for kind [{kind}] in set {self.name!r}")
        return self.templates[kind]

    def history_template(self, has_long: bool) -> InstructionTemplate:
        if not has_long and "history_short" in self.templates:
            return self.templates["history_short"]
        return self[ "history" ]


def parse_template_file(text: str, name: str = "") -> TemplateSet:
    """Sections headed by "[kind]" with the template body following; blank
    lines inside a body are preserved, comments start with '#' at column 0
    outside bodies only when before the first section."""
    templates: dict[str, InstructionTemplate] = {}
    kind: str | None = None
    body: list[str] = []

    def flush():
        if kind is not None:
            templates[kind] = InstructionTemplate(kind, "\n".join(body).strip())

    for line in text.splitlines():
        header = re.fullmatch(r"\[([a-z_]+)\]\s*", line)
        if header:
            flush()
            kind, body = header.group(1), []
        elif kind is not None:
            body.append(line)
    flush()
    if not templates:
        raise TemplateError(f"no template sections found in {name!r}")
    return TemplateSet(templates, name)


def load_templates(path: str | Path) -> TemplateSet:
    p = Path(path)
    return parse_template_file(p.read_text(encoding="utf-8"), name=p.name)


def builtin_templates(task: str = "inference", lang: str = "en") -> TemplateSet:
    """Shipped sets: dureader/kdconv/dulemon/kvpi/inference, en + zh."""
    ref = resources.files("plugchat").joinpath(f"data/templates/{task}_{lang}.txt")
    return parse_template_file(ref.read_text(encoding="utf-8"), name=f"{task}_{lang}")


def serialize_turns(turns: list[Turn]) -> str:
    return SEP_MARKER.join(f"{t.role}: {t.text}" for t in turns)


def encode_with_sep(vocab: Vocab, text: str) -> list[int]:
    """Encode text, mapping each literal <sep> marker to the SEP token id."""
    ids: list[int] = []
    parts = text.split(SEP_MARKER)
    for i, part in enumerate(parts):
        if i:
            ids.append(SEP_ID)
        ids.extend(vocab.encode(part))
    return ids


def build_slots(
    state: DialogueState,
    docs: list,  # RetrievedDoc-shaped: needs .title and .snippet
    templates: TemplateSet,
    vocab: Vocab,
    recent: int = DEFAULT_RECENT_TURNS,
    budget: int = SLOT_BUDGET,
) -> list[InstructionSlot]:
    """One history slot, one knowledge slot per doc, then profile slots."""
    if not state.turns:
        raise TemplateError("cannot build slots for an empty dialogue state")
    c, l = state.split(recent)
    slots = [_fit_history_slot(c, l, templates, vocab, budget)]
    for doc in docs:
        knowledge = f"{doc.title} {doc.snippet}".strip()
        slots.append(_fit_slot("knowledge", templates["knowledge"], c, knowledge, vocab, budget))
    if state.user_profile:
        slots.append(
            _fit_slot("user_profile", templates["user_profile"], c, state.user_profile, vocab, budget)
        )
    if state.bot_profile:
        slots.append(
            _fit_slot("bot_profile", templates["bot_profile"], c, state.bot_profile, vocab, budget)
        )
    return slots


_FIELD_OF_KIND = {
    "knowledge": "knowledge",
    "user_profile": "user profile",
    "bot_profile": "bot profile",
}


def _fit_history_slot(c, l, templates, vocab, budget) -> InstructionSlot:
    context_turns = list(c)
    long_turns = list(l)
    while True:
        tpl = templates.history_template(has_long=bool(long_turns))
        fields = {"context": serialize_turns(context_turns)}
        if "long history" in tpl.placeholders():
            fields["long history"] = serialize_turns(long_turns)
        text = render(tpl, fields)
        ids = encode_with_sep(vocab, text)
        if len(ids) <= budget:
            return InstructionSlot(text, "history", ids)
        if long_turns:
            long_turns.pop(0)  # oldest history goes first
        elif len(context_turns) > 1:
            context_turns.pop(0)
        else:
            context_turns[0] = _shrink_turn(context_turns[0])


def _fit_slot(kind, tpl, c, payload, vocab, budget) -> InstructionSlot:
    context_turns = list(c)
    content = payload
    while True:
        fields = {"context": serialize_turns(context_turns), _FIELD_OF_KIND[kind]: content}
        text = render(tpl, fields)
        ids = encode_with_sep(vocab, text)
        if len(ids) <= budget:
            return InstructionSlot(text, kind, ids)
        if len(content) > 40:
            content = content[: int(len(content) * 0.9)]  # cut the tail
        elif len(context_turns) > 1:
            context_turns.pop(0)
        else:
            context_turns[0] = _shrink_turn(context_turns[0])


def _shrink_turn(turn: Turn) -> Turn:
    if not turn.text:
        raise TemplateError("slot preamble alone exceeds the token budget")
    keep = max(0, int(len(turn.text) * 0.8) - 1)
    return Turn(turn.role, turn.text[len(turn.text) - keep :], turn.timestamp)
