"""Prototype for the retrieval-lift acceptance run; calibrates the
knowledge-copy fine-tune before the numbers are frozen into the test."""

import json
import random
import time
from importlib import resources

import torch

from plugchat.decoding import GenerationParams
from plugchat.instructions import DialogueState, Turn, build_slots, builtin_templates
from plugchat.model import ModelConfig, Seq2SeqModel
from plugchat.pipeline import ChatPipeline
from plugchat.retrieval import Bm25Index, RetrievedDoc
from plugchat.tokenizer import EOS_ID, NUM_RESERVED, _pre_segment, train_vocab
from plugchat.training import TrainConfig, TrainingExample, train
from plugchat.evaluation import knowledge_accuracy, load_qa_set

VOWELS = "aeiou"
CONSONANTS = "bdfgklmnprstvz"
RELATIONS = ["capital", "river", "anthem", "flower", "dish", "mountain", "festival"]


def pseudo_word(r, syllables=2):
    return "".join(r.choice(CONSONANTS) + r.choice(VOWELS) for _ in range(syllables))


def load_bundled():
    data = resources.files("plugchat").joinpath("data")
    facts = [json.loads(l) for l in data.joinpath("facts_corpus.jsonl").read_text().splitlines()]
    qa_rows = [json.loads(l) for l in data.joinpath("knowledge_qa.jsonl").read_text().splitlines()]
    return facts, qa_rows


def training_facts(n, forbidden, seed=99):
    r = random.Random(seed)
    out, used = [], set(forbidden)
    while len(out) < n:
        subject, entity = pseudo_word(r, 2), pseudo_word(r, 3)
        if subject in used or entity in used or subject == entity:
            continue
        used.add(subject)
        used.add(entity)
        relation = RELATIONS[len(out) % len(RELATIONS)]
        out.append({"subject": subject, "relation": relation, "entity": entity})
    return out


def build_vocab(facts, qa_rows, train_pool, templates):
    corpus = [f["text"] for f in facts]
    corpus += [q["question"] for q in qa_rows]
    corpus += [" ".join(q["answers"]) for q in qa_rows]
    corpus += [
        f"the {t['relation']} of {t['subject']} is {t['entity']}" for t in train_pool
    ]
    corpus += [tpl.text.replace("{", " ").replace("}", " ") for tpl in templates.templates.values()]
    corpus += ["user: bot: i am not sure about that"]
    base = {s for line in corpus for w in _pre_segment(line) for s in w}
    vocab = train_vocab(corpus, NUM_RESERVED + len(base) + 700, seed=0)
    return vocab


def copy_examples(train_pool, templates, vocab, top_n=5):
    """Training docs come from real BM25 retrieval over the training facts,
    so gold ranks follow the same distribution the eval pipeline sees."""
    corpus = [
        {"id": f"tf-{i}", "title": f["subject"],
         "text": f"the {f['relation']} of {f['subject']} is {f['entity']}"}
        for i, f in enumerate(train_pool)
    ]
    index = Bm25Index(corpus)
    examples = []
    for i, fact in enumerate(train_pool):
        question = f"what is the {fact['relation']} of {fact['subject']}"
        state = DialogueState(f"t{i}", [Turn("user", question)])
        if i % 6 == 5:  # teach abstention when no knowledge is present
            docs, target = [], "i am not sure about that"
        else:
            docs = index.search(question, top_n)
            target = fact["entity"]
        slots = build_slots(state, docs, templates, vocab)
        examples.append(
            TrainingExample(
                slots=[s.ids for s in slots],
                target=vocab.encode(target) + [EOS_ID],
                source="copy",
            )
        )
    return examples


def main():
    t_start = time.time()
    templates = builtin_templates("inference", "en")
    facts, qa_rows = load_bundled()
    forbidden = {f["title"] for f in facts} | {a for q in qa_rows for a in q["answers"]}
    pool = training_facts(400, forbidden)
    vocab = build_vocab(facts, qa_rows, pool, templates)
    print("vocab", len(vocab))
    for q in qa_rows[:50]:
        toks = vocab.encode(q["answers"][0])
        assert len(toks) <= 2, (q["answers"][0], len(toks))
    entity_token_lens = [len(vocab.encode(q["answers"][0])) for q in qa_rows]
    print("entity token lengths:", sorted(set(entity_token_lens)))

    examples = copy_examples(pool, templates, vocab)
    print("examples", len(examples), "avg slots", sum(len(e.slots) for e in examples) / len(examples))

    torch.manual_seed(0)
    model = Seq2SeqModel(ModelConfig.preset("toy", vocab_size=len(vocab), dropout=0.0))
    cfg = TrainConfig(stage="instruct", learning_rate=2e-3, batch_size=8, epochs=20,
                      max_steps=900, seed=0)
    result = train(model, examples, cfg)
    print(f"train done: steps {len(result.loss_curve)} loss {result.final_loss():.4f} "
          f"t={time.time() - t_start:.0f}s")

    index = Bm25Index(facts)
    params = GenerationParams(min_len=0, max_len=24)
    pipeline = ChatPipeline(model, vocab, templates, backend=index, params=params,
                            search_top_n=5)
    qa = load_qa_set(resources.files("plugchat").joinpath("data/knowledge_qa.jsonl"))

    def run(search):
        outputs = []
        for i, item in enumerate(qa):
            state = DialogueState(f"q{i}", [Turn("user", item.question)])
            outputs.append(pipeline.respond(state, search=search).reply)
        return outputs

    with_search = run(True)
    acc_on, _ = knowledge_accuracy(with_search, qa)
    without = run(False)
    acc_off, _ = knowledge_accuracy(without, qa)
    print(f"accuracy with search {acc_on:.2f} without {acc_off:.2f} lift {(acc_on - acc_off) * 100:.0f}")
    print("sample with:", with_search[:3])
    print("sample without:", without[:3])
    print(f"total {time.time() - t_start:.0f}s")


if __name__ == "__main__":
    main()
