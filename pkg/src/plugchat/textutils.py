"""Shared text segmentation conventions.

Two tokenizers live here on purpose: the evaluation metrics and the BM25
index both need a deterministic word segmentation that handles mixed
Chinese/English text, but they want different normalization (metrics keep
punctuation attached to words, search folds case and drops punctuation).
"""

from __future__ import annotations

import re

# Main CJK blocks: unified ideographs (+ext A), and CJK punctuation is NOT
# included; punctuation handling is left to each tokenizer.
_CJK_RANGES = (
    (0x4E00, 0x9FFF),
    (0x3400, 0x4DBF),
    (0xF900, 0xFAFF),
)


def is_cjk(ch: str) -> bool:
    code = ord(ch)
    return any(lo <= code <= hi for lo, hi in _CJK_RANGES)


def metric_tokenize(text: str) -> list[str]:
    """Tokens for ROUGE/BLEU/Dist-n/length: one token per CJK character,
    whitespace-delimited chunks otherwise."""
    tokens: list[str] = []
    buf: list[str] = []
    for ch in text:
        if is_cjk(ch):
            if buf:
                tokens.append("".join(buf))
                buf = []
            tokens.append(ch)
        elif ch.isspace():
            if buf:
                tokens.append("".join(buf))
                buf = []
        else:
            buf.append(ch)
    if buf:
        tokens.append("".join(buf))
    return tokens


_WORD_RE = re.compile(r"[0-9a-z]+")


def search_tokenize(text: str) -> list[str]:
    """Tokens for the BM25 index: casefolded, CJK characters as single
    tokens, latin/digit runs as words, punctuation dropped."""
    tokens: list[str] = []
    buf: list[str] = []
    for ch in text.casefold():
        if is_cjk(ch):
            if buf:
                tokens.extend(_WORD_RE.findall("".join(buf)))
                buf = []
            tokens.append(ch)
        else:
            buf.append(ch)
    if buf:
        tokens.extend(_WORD_RE.findall("".join(buf)))
    return tokens
