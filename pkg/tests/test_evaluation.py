import json

import pytest

from plugchat.evaluation import (
    EvalExample,
    KnowledgeQA,
    avg_token_length,
    bleu_4,
    dist_n,
    evaluate_responses,
    knowledge_accuracy,
    load_eval_set,
    load_qa_set,
    rouge_l,
    save_transcripts,
    self_chat,
)
from plugchat.instructions import Turn
from plugchat.pipeline import PipelineResult

from oracles import brute_force_bleu_4, brute_force_rouge_l
from plugchat.textutils import metric_tokenize

import math
import random


def test_rouge_identity():
    assert rouge_l("the cat sat", ["the cat sat"]) == pytest.approx(1.0)


def test_rouge_hand_case():
    # LCS("the cat sat", "the cat") = 2; P = 2/3, R = 1 -> F1 = 0.8
    assert rouge_l("the cat sat", ["the cat"]) == pytest.approx(0.8)


def test_rouge_disjoint_zero():
    assert rouge_l("alpha beta", ["gamma delta"]) == 0.0


def test_rouge_max_over_references():
    score = rouge_l("the cat sat", ["unrelated words", "the cat sat"])
    assert score == pytest.approx(1.0)


def test_rouge_empty_refs_rejected():
    with pytest.raises(ValueError):
        rouge_l("hi", [])


def test_bleu_identical_is_one():
    assert bleu_4("a b c d e", ["a b c d e"]) == pytest.approx(1.0)


def test_bleu_brevity_penalty_applied():
    # hypothesis half the reference length: bp = exp(1 - r/h) = exp(-1)
    hyp, ref = "a b", "a b c d"
    score = bleu_4(hyp, [ref])
    assert score < math.exp(1 - 4 / 2) + 1e-9
    # and the bp factor is exactly exp(-1) on top of the n-gram part
    assert score == pytest.approx(brute_force_bleu_4(["a", "b"], [["a", "b", "c", "d"]]))


def test_bleu_matches_brute_force_oracle_randomized():
    rng = random.Random(0)
    alphabet = list("abcdefg")
    for _ in range(40):
        hyp = " ".join(rng.choices(alphabet, k=rng.randint(1, 12)))
        refs = [
            " ".join(rng.choices(alphabet, k=rng.randint(1, 12)))
            for _ in range(rng.randint(1, 3))
        ]
        got = bleu_4(hyp, refs)
        want = brute_force_bleu_4(metric_tokenize(hyp), [metric_tokenize(r) for r in refs])
        assert got == pytest.approx(want, abs=1e-9)


def test_rouge_matches_brute_force_oracle_randomized():
    rng = random.Random(1)
    alphabet = list("abcde")
    for _ in range(40):
        hyp = " ".join(rng.choices(alphabet, k=rng.randint(1, 10)))
        refs = [
            " ".join(rng.choices(alphabet, k=rng.randint(1, 10)))
            for _ in range(rng.randint(1, 3))
        ]
        got = rouge_l(hyp, refs)
        want = brute_force_rouge_l(metric_tokenize(hyp), [metric_tokenize(r) for r in refs])
        assert got == pytest.approx(want, abs=1e-9)


def test_dist_n_counting():
    assert dist_n(["a b c d e"], 4) == 2  # two distinct 4-grams
    assert dist_n(["a b c d e", "a b c d e"], 4) == 2  # duplicate adds nothing
    rich = ["a b c d", "e f g h", "i j k l"]
    repetitive = ["a b a b", "a b a b", "b a b a"]
    assert dist_n(rich, 4) > dist_n(repetitive, 4)


def test_dist_n_monotone_nondecreasing():
    base = ["a b c d e"]
    extended = base + ["f g h i j"]
    assert dist_n(extended, 4) >= dist_n(base, 4)


def test_avg_token_length_mixed_cjk():
    assert avg_token_length(["你好 world"]) == 3.0  # 你, 好, world
    assert avg_token_length([]) == 0.0


def test_knowledge_accuracy_cases():
    qa = [
        KnowledgeQA("capital of France?", ["Paris"], "geography"),
        KnowledgeQA("full name of China?", ["PRC", "China"], "geography"),
        KnowledgeQA("who wrote Hamlet?", ["Shakespeare"], "literature"),
    ]
    outputs = ["the capital is Paris.", "it is called china", ""]
    acc, per_topic = knowledge_accuracy(outputs, qa)
    assert acc == pytest.approx(2 / 3)
    assert per_topic["geography"] == 1.0
    assert per_topic["literature"] == 0.0
    # paraphrase order does not matter
    qa_flipped = [KnowledgeQA("q", ["China", "PRC"], "geography")]
    assert knowledge_accuracy(["prc it is"], qa_flipped)[0] == 1.0


def test_eval_example_validation():
    with pytest.raises(ValueError):
        EvalExample(context=[], references=[], use_case="open_qa")
    with pytest.raises(ValueError):
        EvalExample(context=[], references=["x"], use_case="sports")
    with pytest.raises(ValueError):
        KnowledgeQA("q", ["a"], "astrology")


def test_evaluate_responses_report():
    examples = [
        EvalExample([Turn("user", "hi")], ["hello there friend mate"], "daily_chat"),
        EvalExample([Turn("user", "sky?")], ["the sky is blue today"], "open_qa"),
    ]
    report = evaluate_responses(examples, ["hello there friend mate", "grass is green"])
    assert report.per_use_case["daily_chat"]["rouge_l"] == pytest.approx(1.0)
    assert 0 <= report.rouge_l <= 1 and 0 <= report.bleu_4 <= 1
    data = json.loads(report.to_json())
    assert data["tokenization"] == "cjk-char + whitespace"
    assert "daily_chat" in report.table()


class StubPipeline:
    def __init__(self, name, fail_at=None):
        self.name = name
        self.calls = 0
        self.fail_at = fail_at

    def respond(self, state, search=False, overrides=None):
        self.calls += 1
        if self.fail_at is not None and self.calls >= self.fail_at:
            raise RuntimeError("boom")
        return PipelineResult(
            reply=f"{self.name} reply {self.calls} to {len(state.turns)} turns",
            query=None,
        )


def test_self_chat_round_and_turn_counts():
    a, b = StubPipeline("a"), StubPipeline("b")
    transcripts = self_chat(a, b, ["seed prompt"], rounds=6)
    assert len(transcripts) == 1
    assert len(transcripts[0].turns) == 12  # 6 rounds, 2 turns each
    assert [t.speaker for t in transcripts[0].turns[:4]] == ["a", "b", "a", "b"]


def test_self_chat_deterministic_and_empty_prompts():
    t1 = self_chat(StubPipeline("a"), StubPipeline("b"), ["x"], rounds=2)
    t2 = self_chat(StubPipeline("a"), StubPipeline("b"), ["x"], rounds=2)
    assert [u.text for u in t1[0].turns] == [u.text for u in t2[0].turns]
    assert self_chat(StubPipeline("a"), StubPipeline("b"), [], rounds=3) == []


def test_self_chat_failure_truncates():
    a = StubPipeline("a", fail_at=3)
    transcripts = self_chat(a, StubPipeline("b"), ["x"], rounds=6)
    assert transcripts[0].truncated
    assert len(transcripts[0].turns) < 12


def test_self_chat_each_side_sees_growing_history():
    a, b = StubPipeline("a"), StubPipeline("b")
    transcripts = self_chat(a, b, ["seed"], rounds=2)
    texts = [t.text for t in transcripts[0].turns]
    # a sees 1 turn, b sees 2, a sees 3, b sees 4
    assert texts[0].endswith("to 1 turns")
    assert texts[1].endswith("to 2 turns")
    assert texts[2].endswith("to 3 turns")
    assert texts[3].endswith("to 4 turns")


def test_transcript_save_and_loaders(tmp_path):
    a, b = StubPipeline("a"), StubPipeline("b")
    transcripts = self_chat(a, b, ["seed"], rounds=1)
    out = tmp_path / "transcripts.jsonl"
    save_transcripts(out, transcripts)
    row = json.loads(out.read_text().splitlines()[0])
    assert row["prompt"] == "seed" and len(row["turns"]) == 2

    eval_path = tmp_path / "eval.jsonl"
    eval_path.write_text(
        json.dumps(
            {
                "context": [{"role": "user", "text": "hi"}],
                "references": ["hello"],
                "use_case": "daily_chat",
            }
        )
        + "\n",
        encoding="utf-8",
    )
    assert load_eval_set(eval_path)[0].references == ["hello"]

    qa_path = tmp_path / "qa.jsonl"
    qa_path.write_text(
        json.dumps({"question": "q", "answers": ["a"], "topic": "science"}) + "\n",
        encoding="utf-8",
    )
    assert load_qa_set(qa_path)[0].topic == "science"
