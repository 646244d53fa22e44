"""Curriculum pretraining (denoise -> prefix LM -> dialogue) and
instruction fine-tuning with AdamW and linear warmup/decay.

Objectives produce TrainingExamples whose targets always end with EOS and
never start with BOS; the loss frames them at training time. Span
corruption masks ~15% of tokens in geometric spans of mean length 3 and
always places at least one sentinel. Prefix-LM fragments cap at 500
tokens split 400 context / 100 continuation (4:1 for shorter fragments).
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .model import Seq2SeqModel, nll_loss, save_checkpoint
from .tokenizer import BOS_ID, EOS_ID, SEP_ID, Vocab, sentinel_id

STAGE_ORDER = ("denoise", "prefix_lm", "dialogue", "instruct")

MASK_RATE = 0.15
MEAN_SPAN = 3
FRAGMENT_MAX = 500
CONTEXT_MAX = 400
TARGET_MAX = 100
GRAD_CLIP_NORM = 1.0


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    stage: str
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 1
    warmup_fraction: float = 0.10
    seed: int = 0
    weight_decay: float = 0.01
    max_steps: int | None = None
    checkpoint_dir: str | Path | None = None

    def __post_init__(self):
        if self.stage not in STAGE_ORDER:
            raise ValueError(f"unknown stage {self.stage!r}, expected one of {STAGE_ORDER}")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in (0, 1)")


@dataclass
class TrainingExample:
    slots: list[list[int]]  # pre-tokenized encoder slots
    target: list[int]  # ends with EOS, no BOS
    source: str = ""

    def __post_init__(self):
        if not self.target:
            raise ValueError("target must be non-empty")


def corrupt_denoising(ids: list[int], seed: int) -> TrainingExample:
    """Replace contiguous spans by sentinels; target lists each sentinel
    followed by the original span, terminated by EOS. At least one span is
    always corrupted. Deterministic per seed."""
    n = len(ids)
    if n < 2:
        raise TrainingError("denoising needs at least 2 tokens")
    rng = random.Random(seed)
    budget = max(1, round(MASK_RATE * n))
    spans: list[tuple[int, int]] = []  # (start, length)
    occupied: set[int] = set()
    masked = 0
    attempts = 0
    while masked < budget and attempts < 10 * n:
        attempts += 1
        length = min(_geometric(rng, MEAN_SPAN), budget - masked, n)
        start = rng.randrange(0, n - length + 1)
        # keep one unmasked token between spans so sentinels never touch
        if any(p in occupied for p in range(start - 1, start + length + 1)):
            continue
        spans.append((start, length))
        occupied.update(range(start, start + length))
        masked += length
    spans.sort()
    corrupted: list[int] = []
    target: list[int] = []
    cursor = 0
    for k, (start, length) in enumerate(spans):
        corrupted.extend(ids[cursor:start])
        corrupted.append(sentinel_id(k))
        target.append(sentinel_id(k))
        target.extend(ids[start : start + length])
        cursor = start + length
    corrupted.extend(ids[cursor:])
    target.append(EOS_ID)
    return TrainingExample(slots=[corrupted], target=target, source="denoise")


def _geometric(rng: random.Random, mean: float) -> int:
    # support {1, 2, ...} with the given mean
    p = 1.0 / mean
    u = rng.random()
    return max(1, int(math.ceil(math.log(1.0 - u) / math.log(1.0 - p))))


def splice_reconstruct(corrupted: list[int], target: list[int]) -> list[int]:
    """Inverse of corrupt_denoising: splice target spans back at their
    sentinel positions. Used as the reconstruction oracle."""
    spans: dict[int, list[int]] = {}
    current: int | None = None
    for tok in target:
        if tok == EOS_ID:
            break
        if 5 <= tok < 105:  # sentinel range
            current = tok
            spans[current] = []
        elif current is not None:
            spans[current].append(tok)
    out: list[int] = []
    for tok in corrupted:
        if tok in spans:
            out.extend(spans[tok])
        else:
            out.append(tok)
    return out


def make_prefix_lm(ids: list[int]) -> TrainingExample:
    """Split a document fragment into a context slot and a continuation
    target at the 400:100 ratio (4:1 below the caps)."""
    if len(ids) < 2:
        raise TrainingError("prefix LM needs at least 2 tokens")
    frag = ids[:FRAGMENT_MAX]
    n = len(frag)
    split = max(1, min(CONTEXT_MAX, (4 * n) // 5, n - 1))
    return TrainingExample(
        slots=[frag[:split]], target=frag[split:] + [EOS_ID], source="prefix_lm"
    )


def make_dialogue_example(utterances: list[list[int]]) -> TrainingExample:
    """Encoder slot = first k-1 utterances joined with SEP, target = k-th."""
    if len(utterances) < 2:
        raise TrainingError("dialogue example needs at least 2 utterances")
    context: list[int] = []
    for i, utt in enumerate(utterances[:-1]):
        if i:
            context.append(SEP_ID)
        context.extend(utt)
    return TrainingExample(
        slots=[context], target=list(utterances[-1]) + [EOS_ID], source="dialogue"
    )


def expand_dialogue_session(
    utterances: list[list[int]], sliding: bool = False
) -> list[TrainingExample]:
    """One example per session by default; with sliding=True every prefix
    of length >= 2 yields an example (k-1 examples for k utterances)."""
    if sliding:
        return [make_dialogue_example(utterances[: k + 1]) for k in range(1, len(utterances))]
    return [make_dialogue_example(utterances)]


def lr_at(step: int, total_steps: int, peak: float, warmup_fraction: float = 0.10) -> float:
    """Linear 0 -> peak over the warmup, then linear peak -> 0."""
    if not 0 <= step <= total_steps:
        raise ValueError("step out of range")
    warmup = warmup_fraction * total_steps
    if warmup <= 0 or total_steps == 0:
        return 0.0
    if step <= warmup:
        return peak * step / warmup
    return peak * (total_steps - step) / (total_steps - warmup)


@dataclass
class TrainResult:
    model: Seq2SeqModel
    loss_curve: list[tuple[int, str, float, float]] = field(default_factory=list)

    def final_loss(self) -> float:
        return self.loss_curve[-1][3] if self.loss_curve else float("nan")


def train(
    model: Seq2SeqModel,
    dataset: list[TrainingExample],
    config: TrainConfig,
    log_every: int = 0,
) -> TrainResult:
    """Single-stage training loop. Reproducible given the seed; aborts on
    non-finite loss; writes a checkpoint at every epoch end when a
    checkpoint_dir is configured."""
    if not dataset:
        raise TrainingError("dataset is empty")
    torch.manual_seed(config.seed)
    rng = random.Random(config.seed)
    steps_per_epoch = math.ceil(len(dataset) / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    if config.max_steps is not None:
        total_steps = min(total_steps, config.max_steps)
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=config.learning_rate,
        betas=(0.9, 0.999),
        eps=1e-8,
        weight_decay=config.weight_decay,
    )
    model.train()
    curve: list[tuple[int, str, float, float]] = []
    step = 0
    done = False
    for epoch in range(config.epochs):
        order = list(range(len(dataset)))
        rng.shuffle(order)
        for b in range(steps_per_epoch):
            batch = [dataset[i] for i in order[b * config.batch_size : (b + 1) * config.batch_size]]
            if not batch:
                continue
            step += 1
            lr = lr_at(step, total_steps, config.learning_rate, config.warmup_fraction)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad(set_to_none=True)
            total = torch.zeros((), dtype=model.embedding.weight.dtype)
            try:
                for ex in batch:
                    total = total + nll_loss(model, ex.slots, [BOS_ID] + ex.target)
            except FloatingPointError as err:
                raise TrainingError(f"divergence at step {step}: {err}") from err
            loss = total / len(batch)
            if not torch.isfinite(loss):
                raise TrainingError(f"divergence: non-finite loss at step {step}")
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), GRAD_CLIP_NORM)
            optimizer.step()
            curve.append((step, config.stage, lr, loss.item()))
            if log_every and step % log_every == 0:
                print(f"step {step}/{total_steps} stage={config.stage} lr={lr:.2e} loss={loss.item():.4f}")
            if step >= total_steps:
                done = True
                break
        if config.checkpoint_dir is not None:
            path = Path(config.checkpoint_dir) / f"{config.stage}-epoch{epoch + 1}.ckpt"
            path.parent.mkdir(parents=True, exist_ok=True)
            save_checkpoint(model, path)
        if done:
            break
    model.eval()
    return TrainResult(model=model, loss_curve=curve)


def run_curriculum(
    model: Seq2SeqModel,
    stages: list[tuple[TrainConfig, list[TrainingExample]]],
) -> list[TrainResult]:
    """Run stages in the fixed curriculum order; out-of-order stage lists
    are rejected rather than silently reordered."""
    indices = [STAGE_ORDER.index(cfg.stage) for cfg, _ in stages]
    if indices != sorted(indices) or len(set(indices)) != len(indices):
        raise TrainingError(
            f"stages must follow curriculum order {STAGE_ORDER}, got "
            f"{[cfg.stage for cfg, _ in stages]}"
        )
    return [train(model, data, cfg) for cfg, data in stages]


# ---- dataset files: JSONL with {"slots": [...], "target": ..., "source": ...} ----


def load_jsonl_dataset(path: str | Path, vocab: Vocab) -> list[TrainingExample]:
    import json

    from .instructions import encode_with_sep

    examples = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            examples.append(
                TrainingExample(
                    slots=[encode_with_sep(vocab, s) for s in row["slots"]],
                    target=vocab.encode(row["target"]) + [EOS_ID],
                    source=row.get("source", ""),
                )
            )
    return examples


def write_loss_curve(path: str | Path, rows: list[tuple[int, str, float, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "stage", "lr", "loss"])
        writer.writerows(rows)
