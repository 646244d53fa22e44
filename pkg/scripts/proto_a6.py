"""Prototype for the curriculum-ablation acceptance run: denoise ->
prefix-LM pretraining on a ~1MB synthetic corpus, then a question
generation fine-tune, compared against random init across seeds."""

import random
import time

import torch

from plugchat.model import ModelConfig, Seq2SeqModel, nll_loss
from plugchat.tokenizer import BOS_ID, EOS_ID, NUM_RESERVED, _pre_segment, train_vocab
from plugchat.training import (
    TrainConfig,
    TrainingExample,
    corrupt_denoising,
    make_prefix_lm,
    run_curriculum,
    train,
)

NOUNS = ["cat", "dog", "bird", "farmer", "teacher", "sailor", "child", "piper",
         "baker", "rider", "fox", "goat", "miller", "singer", "guard"]
VERBS = ["sees", "follows", "greets", "carries", "finds", "watches", "helps",
         "leads", "feeds", "paints"]
PLACES = ["garden", "harbor", "market", "valley", "kitchen", "meadow", "tower",
          "bridge", "orchard", "library"]


def sentence(r):
    return (f"the {r.choice(NOUNS)} {r.choice(VERBS)} the {r.choice(NOUNS)} "
            f"near the {r.choice(PLACES)}")


def build_corpus(target_bytes=1_000_000, seed=1):
    r = random.Random(seed)
    docs, size = [], 0
    while size < target_bytes:
        doc = " and ".join(sentence(r) for _ in range(r.randint(2, 4)))
        docs.append(doc)
        size += len(doc) + 1
    return docs


def qg_pair(r):
    subject, verb, obj, place = r.choice(NOUNS), r.choice(VERBS), r.choice(NOUNS), r.choice(PLACES)
    statement = f"the {subject} {verb} the {obj} near the {place}"
    question = f"who {verb} the {obj} near the {place}"
    return statement, question


def qg_examples(vocab, n, seed):
    r = random.Random(seed)
    out = []
    for _ in range(n):
        s, q = qg_pair(r)
        out.append(TrainingExample(slots=[vocab.encode(s)], target=vocab.encode(q) + [EOS_ID]))
    return out


def val_loss(model, examples):
    model.eval()
    with torch.no_grad():
        total = sum(nll_loss(model, ex.slots, [BOS_ID] + ex.target).item() for ex in examples)
    return total / len(examples)


def main():
    t0 = time.time()
    corpus = build_corpus()
    print(f"corpus {sum(len(d) for d in corpus)} bytes, {len(corpus)} docs")
    base = {s for line in corpus[:500] for w in _pre_segment(line) for s in w}
    vocab = train_vocab(corpus[:500], NUM_RESERVED + len(base) + 80, seed=0)
    print("vocab", len(vocab), f"t={time.time()-t0:.0f}s")

    pre_rng = random.Random(0)
    denoise_docs = pre_rng.sample(corpus, 1600)
    denoise_data = [corrupt_denoising(vocab.encode(d), seed=i) for i, d in enumerate(denoise_docs)]
    prefix_docs = pre_rng.sample(corpus, 1600)
    prefix_data = [make_prefix_lm(vocab.encode(d)) for d in prefix_docs]
    print(f"pretrain data ready t={time.time()-t0:.0f}s")

    val = qg_examples(vocab, 40, seed=999)
    results = []
    for seed in range(3):
        ft_data = qg_examples(vocab, 120, seed=100 + seed)
        ft_cfg = TrainConfig(stage="instruct", learning_rate=1e-3, batch_size=8,
                             epochs=6, max_steps=80, seed=seed)

        torch.manual_seed(seed)
        pretrained = Seq2SeqModel(ModelConfig.preset("toy", vocab_size=len(vocab), dropout=0.0))
        run_curriculum(pretrained, [
            (TrainConfig(stage="denoise", learning_rate=1e-3, batch_size=8,
                         epochs=1, max_steps=200, seed=seed), denoise_data),
            (TrainConfig(stage="prefix_lm", learning_rate=1e-3, batch_size=8,
                         epochs=1, max_steps=200, seed=seed), prefix_data),
        ])
        train(pretrained, ft_data, ft_cfg)
        loss_pre = val_loss(pretrained, val)

        torch.manual_seed(seed)
        scratch = Seq2SeqModel(ModelConfig.preset("toy", vocab_size=len(vocab), dropout=0.0))
        train(scratch, ft_data, ft_cfg)
        loss_scratch = val_loss(scratch, val)

        results.append((seed, loss_pre, loss_scratch))
        print(f"seed {seed}: pretrained {loss_pre:.4f} vs random {loss_scratch:.4f} "
              f"{'OK' if loss_pre < loss_scratch else 'FAIL'} t={time.time()-t0:.0f}s")
    ok = all(p < s for _, p, s in results)
    print("ALL SEEDS OK" if ok else "SOME SEED FAILED", f"total {time.time()-t0:.0f}s")


if __name__ == "__main__":
    main()
