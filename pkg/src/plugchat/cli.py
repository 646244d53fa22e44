"""Command line entry points: serve, chat REPL, index building, vocab and
model training, evaluation, and corpus filtering."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .config import ServiceConfig, load_config
from .decoding import GenerationParams


def _gen_options(fn):
    options = [
        click.option("--beam", type=int, default=None, help="beam size"),
        click.option("--rep-penalty", type=float, default=None, help="repetition penalty"),
        click.option("--rep-ngram", type=int, default=None, help="repetition n-gram size"),
        click.option("--length-penalty", type=float, default=None),
        click.option("--min-len", type=int, default=None),
        click.option("--max-len", type=int, default=None),
        click.option("--top-k", type=int, default=None),
        click.option("--seed", type=int, default=None),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _params_from_flags(config: ServiceConfig, beam, rep_penalty, rep_ngram,
                       length_penalty, min_len, max_len, top_k, seed) -> GenerationParams:
    return config.generation_params().override(
        beam_size=beam, repetition_penalty=rep_penalty, rep_ngram=rep_ngram,
        length_penalty=length_penalty, min_len=min_len, max_len=max_len,
        top_k=top_k, seed=seed,
    )


def _load_vocab(config: ServiceConfig):
    from .tokenizer import Vocab

    if not config.vocab_path or not config.merges_path:
        raise click.UsageError("config must set vocab_path and merges_path")
    return Vocab.load(config.vocab_path, config.merges_path)


def build_pipeline(config: ServiceConfig, params: GenerationParams | None = None):
    from .instructions import builtin_templates, load_templates
    from .model import load_checkpoint
    from .pipeline import ChatPipeline
    from .retrieval import Bm25Index

    vocab = _load_vocab(config)
    if not config.checkpoint_path:
        raise click.UsageError("config must set checkpoint_path")
    model = load_checkpoint(config.checkpoint_path)
    rewrite_model = (
        load_checkpoint(config.rewrite_checkpoint_path)
        if config.rewrite_checkpoint_path
        else None
    )
    templates = (
        load_templates(config.template_file)
        if config.template_file
        else builtin_templates("inference", config.template_lang)
    )
    backend = Bm25Index.load(config.index_path) if config.index_path else None
    return ChatPipeline(
        model=model,
        vocab=vocab,
        templates=templates,
        backend=backend,
        rewrite_model=rewrite_model,
        params=params or config.generation_params(),
        recent=config.recent_turns,
        search_top_n=config.search_top_n,
    )


@click.group()
def main():
    """Internet-augmented fusion-in-decoder dialogue system."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
def serve(config_path, host, port):
    """Run the HTTP chat service."""
    import uvicorn

    from .service import create_app

    config = load_config(config_path)
    app = create_app(build_pipeline(config), config)
    uvicorn.run(app, host=host or config.host, port=port or config.port)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--search/--no-search", default=None)
@click.option("--user-profile", default="")
@click.option("--bot-profile", default="")
@_gen_options
def chat(config_path, search, user_profile, bot_profile, **flags):
    """Terminal chat REPL (UI-free)."""
    from .instructions import DialogueState, Turn

    config = load_config(config_path)
    params = _params_from_flags(config, **flags)
    pipeline = build_pipeline(config, params)
    do_search = config.search_enabled_default if search is None else search
    state = DialogueState("repl", [], user_profile, bot_profile)
    click.echo("type /quit to exit")
    while True:
        try:
            text = click.prompt("you", prompt_suffix="> ")
        except (EOFError, click.Abort):
            break
        if text.strip() in ("/quit", "/exit"):
            break
        state.turns.append(Turn("user", text))
        result = pipeline.respond(state, search=do_search)
        if result.query is not None:
            click.echo(f"  [searched: {result.query.text} -> {len(result.docs)} docs]")
        click.echo(f"bot> {result.reply}")
        state.turns.append(Turn("bot", result.reply))


@main.group()
def index():
    """Local BM25 search index."""


@index.command("build")
@click.option("--corpus", type=click.Path(exists=True), required=True,
              help='JSONL with {"id","title","text"}')
@click.option("--out", type=click.Path(), required=True)
def index_build(corpus, out):
    from .retrieval import Bm25Index

    idx = Bm25Index.from_jsonl(corpus)
    idx.save(out)
    click.echo(f"indexed {idx.size} docs -> {out}")


@main.group()
def vocab():
    """Subword vocabulary."""


@vocab.command("train")
@click.option("--corpus", type=click.Path(exists=True), required=True,
              help="plain text, one line per document")
@click.option("--size", type=int, required=True)
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0)
def vocab_train(corpus, size, out_dir, seed):
    from .tokenizer import train_vocab

    lines = Path(corpus).read_text(encoding="utf-8").splitlines()
    v = train_vocab([l for l in lines if l.strip()], size, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    v.save(out / "vocab.txt", out / "merges.txt")
    click.echo(f"trained {len(v)} tokens, {len(v.merges)} merges -> {out}")


@main.command()
@click.option("--stage", type=click.Choice(["denoise", "prefix_lm", "dialogue", "instruct"]),
              required=True)
@click.option("--corpus", type=click.Path(exists=True), default=None,
              help="plain text for denoise/prefix_lm stages")
@click.option("--dataset", type=click.Path(exists=True), default=None,
              help="JSONL for dialogue/instruct stages")
@click.option("--vocab-dir", type=click.Path(exists=True), required=True)
@click.option("--init", "init_ckpt", type=click.Path(exists=True), default=None)
@click.option("--preset", default="toy")
@click.option("--out", type=click.Path(), required=True)
@click.option("--lr", type=float, default=1e-3)
@click.option("--batch-size", type=int, default=8)
@click.option("--epochs", type=int, default=1)
@click.option("--max-steps", type=int, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--loss-csv", type=click.Path(), default=None)
def train(stage, corpus, dataset, vocab_dir, init_ckpt, preset, out, lr,
          batch_size, epochs, max_steps, seed, loss_csv):
    """Train one curriculum stage and write a checkpoint."""
    import torch

    from .model import ModelConfig, Seq2SeqModel, load_checkpoint, save_checkpoint
    from .tokenizer import Vocab
    from .training import (
        TrainConfig,
        corrupt_denoising,
        load_jsonl_dataset,
        make_dialogue_example,
        make_prefix_lm,
        train as run_train,
        write_loss_curve,
    )

    vocab_dir = Path(vocab_dir)
    v = Vocab.load(vocab_dir / "vocab.txt", vocab_dir / "merges.txt")
    if init_ckpt:
        model = load_checkpoint(init_ckpt)
    else:
        torch.manual_seed(seed)
        model = Seq2SeqModel(ModelConfig.preset(preset, vocab_size=len(v)))

    if stage in ("denoise", "prefix_lm"):
        if not corpus:
            raise click.UsageError(f"--corpus required for stage {stage}")
        lines = [l for l in Path(corpus).read_text(encoding="utf-8").splitlines() if l.strip()]
        if stage == "denoise":
            data = [corrupt_denoising(v.encode(l), seed=seed + i)
                    for i, l in enumerate(lines) if len(v.encode(l)) >= 2]
        else:
            data = [make_prefix_lm(v.encode(l)) for l in lines if len(v.encode(l)) >= 2]
    elif stage == "dialogue":
        if not dataset:
            raise click.UsageError("--dataset required for stage dialogue")
        from .filtering import load_dialogues

        data = [
            make_dialogue_example([v.encode(t["text"]) for t in row["turns"]])
            for row in load_dialogues(dataset)
            if len(row["turns"]) >= 2
        ]
    else:
        if not dataset:
            raise click.UsageError("--dataset required for stage instruct")
        data = load_jsonl_dataset(dataset, v)

    result = run_train(
        model, data,
        TrainConfig(stage=stage, learning_rate=lr, batch_size=batch_size,
                    epochs=epochs, seed=seed, max_steps=max_steps),
        log_every=50,
    )
    save_checkpoint(result.model, out)
    if loss_csv:
        write_loss_curve(loss_csv, result.loss_curve)
    click.echo(f"final loss {result.final_loss():.4f} -> {out}")


@main.group(name="eval")
def eval_group():
    """Evaluation harness."""


@eval_group.command("auto")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--eval-set", type=click.Path(exists=True), required=True)
@click.option("--search/--no-search", default=False)
@click.option("--report-out", type=click.Path(), default=None)
def eval_auto(config_path, eval_set, search, report_out):
    from .evaluation import evaluate_responses, load_eval_set
    from .instructions import DialogueState

    pipeline = build_pipeline(load_config(config_path))
    examples = load_eval_set(eval_set)
    responses = []
    for i, ex in enumerate(examples):
        state = DialogueState(f"eval-{i}", list(ex.context))
        responses.append(pipeline.respond(state, search=search).reply)
    report = evaluate_responses(examples, responses)
    click.echo(report.table())
    if report_out:
        Path(report_out).write_text(report.to_json(), encoding="utf-8")


@eval_group.command("knowledge")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--qa-set", type=click.Path(exists=True), required=True)
@click.option("--with-search/--no-search", "search", default=True)
def eval_knowledge(config_path, qa_set, search):
    from .evaluation import knowledge_accuracy, load_qa_set
    from .instructions import DialogueState, Turn

    pipeline = build_pipeline(load_config(config_path))
    qa = load_qa_set(qa_set)
    outputs = []
    for i, item in enumerate(qa):
        state = DialogueState(f"qa-{i}", [Turn("user", item.question)])
        outputs.append(pipeline.respond(state, search=search).reply)
    accuracy, per_topic = knowledge_accuracy(outputs, qa)
    click.echo(f"accuracy: {accuracy:.3f} ({'with' if search else 'no'} search)")
    for topic, acc in per_topic.items():
        click.echo(f"  {topic:<12} {acc:.3f}")


@eval_group.command("self-chat")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--prompts", type=click.Path(exists=True), required=True,
              help="plain text, one seed prompt per line")
@click.option("--rounds", type=int, default=6)
@click.option("--out", type=click.Path(), required=True)
@click.option("--search/--no-search", default=False)
def eval_self_chat(config_path, prompts, rounds, out, search):
    from .evaluation import save_transcripts, self_chat

    pipeline = build_pipeline(load_config(config_path))
    seeds = [l.strip() for l in Path(prompts).read_text(encoding="utf-8").splitlines() if l.strip()]
    transcripts = self_chat(pipeline, pipeline, seeds, rounds, search=search)
    save_transcripts(out, transcripts)
    click.echo(f"{len(transcripts)} transcripts -> {out}")


@main.group(name="filter")
def filter_group():
    """Corpus cleaning pipeline."""


@filter_group.command("rules")
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--report", type=click.Path(), default=None)
def filter_rules(in_path, out, report):
    from collections import Counter

    from .filtering import default_rule_config, load_dialogues, rule_filter, save_dialogues
    from .instructions import Turn

    config = default_rule_config()
    rows = load_dialogues(in_path)
    kept_rows, reason_counts = [], Counter()
    for row in rows:
        verdict = rule_filter([Turn(t["role"], t["text"]) for t in row["turns"]], config)
        reason_counts.update(verdict.reasons)
        reason_counts.update(f"cleaned:{r}" for r in verdict.cleaned_reasons)
        if verdict.keep:
            kept_rows.append(
                dict(row, turns=[{"role": t.role, "text": t.text} for t in verdict.turns])
            )
    save_dialogues(out, kept_rows)
    summary = {"input": len(rows), "kept": len(kept_rows), "reasons": dict(reason_counts)}
    if report:
        Path(report).write_text(json.dumps(summary, indent=2), encoding="utf-8")
    click.echo(json.dumps(summary))


@filter_group.command("train-metric")
@click.option("--dataset", type=click.Path(exists=True), required=True,
              help='JSONL {"context","response","label"}')
@click.option("--vocab-dir", type=click.Path(exists=True), required=True)
@click.option("--encoder-ckpt", type=click.Path(exists=True), default=None)
@click.option("--preset", default="toy")
@click.option("--out", type=click.Path(), required=True)
@click.option("--epochs", type=int, default=10)
@click.option("--seed", type=int, default=0)
def filter_train_metric(dataset, vocab_dir, encoder_ckpt, preset, out, epochs, seed):
    import torch

    from .filtering import MetricTrainConfig, train_metric_model
    from .model import ModelConfig, Seq2SeqModel, load_checkpoint
    from .tokenizer import Vocab

    vocab_dir = Path(vocab_dir)
    v = Vocab.load(vocab_dir / "vocab.txt", vocab_dir / "merges.txt")
    if encoder_ckpt:
        encoder = load_checkpoint(encoder_ckpt)
    else:
        torch.manual_seed(seed)
        encoder = Seq2SeqModel(ModelConfig.preset(preset, vocab_size=len(v)))
    labeled = []
    with open(dataset, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                row = json.loads(line)
                labeled.append(
                    (v.encode(row["context"]), v.encode(row["response"]), int(row["label"]))
                )
    model, accuracy = train_metric_model(
        labeled, encoder, MetricTrainConfig(epochs=epochs, seed=seed)
    )
    torch.save({"state": model.state_dict(), "config": encoder.config.__dict__}, out)
    click.echo(f"held-out accuracy {accuracy:.3f} -> {out}")


@filter_group.command("metric")
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--metric-model", type=click.Path(exists=True), required=True)
@click.option("--vocab-dir", type=click.Path(exists=True), required=True)
@click.option("--thresholds", required=True, help='JSON: {"source": threshold}')
@click.option("--report", type=click.Path(), default=None)
def filter_metric(in_path, out, metric_model, vocab_dir, thresholds, report):
    import torch

    from .filtering import MetricModel, load_dialogues, metric_filter, save_dialogues
    from .model import ModelConfig, Seq2SeqModel
    from .tokenizer import Vocab

    vocab_dir = Path(vocab_dir)
    v = Vocab.load(vocab_dir / "vocab.txt", vocab_dir / "merges.txt")
    blob = torch.load(metric_model, weights_only=False)
    encoder = Seq2SeqModel(ModelConfig(**blob["config"]))
    model = MetricModel(encoder)
    model.load_state_dict(blob["state"])
    model.eval()
    kept, filter_report = metric_filter(
        load_dialogues(in_path), model, v, json.loads(thresholds)
    )
    save_dialogues(out, kept)
    if report:
        Path(report).write_text(filter_report.to_json(), encoding="utf-8")
    click.echo(filter_report.to_json())


if __name__ == "__main__":
    main(sys.argv[1:])
