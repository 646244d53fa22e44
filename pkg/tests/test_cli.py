import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from plugchat.cli import main
from plugchat.config import load_config


@pytest.fixture()
def runner():
    return CliRunner()


CORPUS_LINES = [
    "the quick brown fox jumps over the lazy dog",
    "pack my box with five dozen liquor jugs",
    "how vexingly quick daft zebras jump",
    "the five boxing wizards jump quickly",
] * 3


def write_corpus(path: Path):
    path.write_text("\n".join(CORPUS_LINES) + "\n", encoding="utf-8")


def feasible_size(lines, extra):
    from plugchat.tokenizer import NUM_RESERVED, _pre_segment

    base = {s for line in lines for w in _pre_segment(line) for s in w}
    return NUM_RESERVED + len(base) + extra


def test_vocab_train_and_index_build(runner, tmp_path):
    corpus = tmp_path / "corpus.txt"
    write_corpus(corpus)
    size = feasible_size(CORPUS_LINES, 30)
    result = runner.invoke(
        main, ["vocab", "train", "--corpus", str(corpus), "--size", str(size),
               "--out-dir", str(tmp_path / "vocab")]
    )
    assert result.exit_code == 0, result.output
    assert (tmp_path / "vocab" / "vocab.txt").exists()
    assert (tmp_path / "vocab" / "merges.txt").exists()

    docs = tmp_path / "docs.jsonl"
    docs.write_text(
        "\n".join(
            json.dumps({"id": str(i), "title": "", "text": line})
            for i, line in enumerate(CORPUS_LINES[:4])
        ),
        encoding="utf-8",
    )
    result = runner.invoke(
        main, ["index", "build", "--corpus", str(docs), "--out", str(tmp_path / "c.idx")]
    )
    assert result.exit_code == 0, result.output
    assert (tmp_path / "c.idx").exists()


def test_train_stage_and_serve_config(runner, tmp_path):
    corpus = tmp_path / "corpus.txt"
    write_corpus(corpus)
    vocab_dir = tmp_path / "vocab"
    size = feasible_size(CORPUS_LINES, 30)
    runner.invoke(main, ["vocab", "train", "--corpus", str(corpus), "--size", str(size),
                         "--out-dir", str(vocab_dir)])

    ckpt = tmp_path / "toy.ckpt"
    result = runner.invoke(
        main,
        ["train", "--stage", "denoise", "--corpus", str(corpus),
         "--vocab-dir", str(vocab_dir), "--out", str(ckpt),
         "--epochs", "1", "--max-steps", "3", "--batch-size", "4",
         "--loss-csv", str(tmp_path / "loss.csv")],
    )
    assert result.exit_code == 0, result.output
    assert ckpt.exists()
    loss_rows = (tmp_path / "loss.csv").read_text().splitlines()
    assert loss_rows[0] == "step,stage,lr,loss"
    assert len(loss_rows) == 4  # header + 3 steps


def test_dialogue_stage_requires_dataset(runner, tmp_path):
    result = runner.invoke(
        main, ["train", "--stage", "dialogue", "--vocab-dir", str(tmp_path),
               "--out", str(tmp_path / "x.ckpt")]
    )
    assert result.exit_code != 0


def test_filter_rules_cli(runner, tmp_path):
    rows = [
        {"turns": [{"role": "user", "text": "hi"},
                   {"role": "bot", "text": "see https://spam.example now"}], "source": "s"},
        {"turns": [{"role": "user", "text": "so?"},
                   {"role": "bot", "text": "haha ok"}], "source": "s"},
    ]
    infile = tmp_path / "in.jsonl"
    infile.write_text("\n".join(json.dumps(r) for r in rows), encoding="utf-8")
    out = tmp_path / "out.jsonl"
    report = tmp_path / "report.json"
    result = runner.invoke(
        main, ["filter", "rules", "--in", str(infile), "--out", str(out),
               "--report", str(report)]
    )
    assert result.exit_code == 0, result.output
    kept = [json.loads(l) for l in out.read_text().splitlines()]
    assert len(kept) == 1
    assert "spam.example" not in kept[0]["turns"][1]["text"]
    summary = json.loads(report.read_text())
    assert summary["kept"] == 1 and summary["input"] == 2
    assert summary["reasons"]["generic_response"] == 1


def test_config_env_overrides(tmp_path, monkeypatch):
    cfg_file = tmp_path / "config.json"
    cfg_file.write_text(json.dumps({"port": 9000, "data_dir": "from-file"}), encoding="utf-8")
    config = load_config(cfg_file, env={"PLUGCHAT_PORT": "9100",
                                        "PLUGCHAT_SEARCH_ENABLED_DEFAULT": "false",
                                        "PLUGCHAT_GENERATION": '{"beam_size": 5}'})
    assert config.port == 9100
    assert config.data_dir == "from-file"
    assert config.search_enabled_default is False
    assert config.generation_params().beam_size == 5


def test_cli_help_lists_commands(runner):
    result = runner.invoke(main, ["--help"])
    assert result.exit_code == 0
    for cmd in ("serve", "chat", "index", "train", "eval", "filter", "vocab"):
        assert cmd in result.output
