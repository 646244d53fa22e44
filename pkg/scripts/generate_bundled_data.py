#!/usr/bin/env python3
"""Regenerate the bundled toy datasets under src/plugchat/data/.

Everything is seeded and deterministic; rerunning produces identical
files. The fact corpus / QA entities are pseudo-words kept disjoint from
the copy-task training pool the tests generate on the fly.
"""

import json
import random
from pathlib import Path

DATA = Path(__file__).parent.parent / "src" / "plugchat" / "data"

rng = random.Random(20240401)

VOWELS = "aeiou"
CONSONANTS = "bdfgklmnprstvz"


def pseudo_word(r, syllables=2):
    return "".join(r.choice(CONSONANTS) + r.choice(VOWELS) for _ in range(syllables))


# ---- 50 dialogue pairs (overfit target) ----

TOPICS = [
    ("weather", "sunny with a light breeze"),
    ("food", "noodles with fresh greens"),
    ("music", "quiet piano pieces"),
    ("travel", "a slow train along the coast"),
    ("books", "short stories before sleep"),
]


def dialogue_pairs():
    rows = []
    starters = ["tell me about", "what do you think of", "do you enjoy", "describe", "any thoughts on"]
    subjects = [
        "rainy mornings", "street food", "old films", "night trains", "tea houses",
        "board games", "mountain trails", "paper maps", "winter light", "small libraries",
        "corner cafes", "garden birds", "warm socks", "river bridges", "clay pots",
        "desk lamps", "pine forests", "market stalls", "wool blankets", "stone paths",
        "window seats", "handwritten notes", "spice racks", "city rooftops", "late sunsets",
    ]
    answers = [
        "i find {s} calm and pleasant",
        "honestly {s} always cheer me up",
        "{s} feel like a small holiday",
        "i could talk about {s} for hours",
        "{s} are best enjoyed slowly",
    ]
    # 50 distinct inputs: 25 subjects, each asked plainly and with "please";
    # the target is a pure function of the input so overfitting is well posed
    for i in range(50):
        s = subjects[i % 25]
        q = f"{starters[i % 5]} {s}"
        if i >= 25:
            q += " please"
        a = answers[(i * 7 + i // 25) % 5].format(s=s)
        rows.append({"slots": [f"user: {q}"], "target": a, "source": "chitchat"})
    assert len({r["slots"][0] for r in rows}) == 50
    return rows


# ---- 50-fact corpus + QA set ----

RELATIONS = ["capital", "river", "anthem", "flower", "dish", "mountain", "festival"]
QA_TOPICS = ["history", "literature", "science", "life", "geography", "biology", "art"]


def facts_and_qa():
    r = random.Random(11)
    used = set()
    facts, qa = [], []
    for i in range(50):
        while True:
            subject = pseudo_word(r, 2)
            entity = pseudo_word(r, 3)
            if subject != entity and subject not in used and entity not in used:
                used.add(subject)
                used.add(entity)
                break
        relation = RELATIONS[i % len(RELATIONS)]
        facts.append(
            {
                "id": f"fact-{i:02d}",
                "title": subject,
                "text": f"the {relation} of {subject} is {entity}",
            }
        )
        qa.append(
            {
                "question": f"what is the {relation} of {subject}",
                "answers": [entity],
                "topic": QA_TOPICS[i % len(QA_TOPICS)],
            }
        )
    return facts, qa


# ---- 200-line synthetic query rewrite set ----


def rewrite_set():
    r = random.Random(23)
    rows = []
    subjects = [pseudo_word(r, 2) for _ in range(40)]
    patterns = [
        ("tell me about {s}", "it is quite popular", "where is it", "where is {s}"),
        ("i like {s}", "good choice", "how old is it", "how old is {s}"),
        ("we visited {s}", "sounds nice", "what is it famous for", "what is {s} famous for"),
        ("{s} looks interesting", "agreed", "who built it", "who built {s}"),
        ("thinking about {s}", "why that", "is it far away", "is {s} far away"),
    ]
    for i in range(200):
        s = subjects[i % len(subjects)]
        q1, a1, q2, rewrite = patterns[i % len(patterns)]
        context = f"user: {q1.format(s=s)}<sep>bot: {a1}<sep>user: {q2}"
        rows.append({"slots": [context], "target": rewrite.format(s=s), "source": "rewrite"})
    return rows


# ---- 40-example toy eval set (eight-way use cases) ----

USE_CASES = [
    "daily_chat", "open_qa", "opinion", "safety_chat",
    "skills", "persona_chat", "emotion_chat", "others",
]


def eval_set():
    r = random.Random(31)
    rows = []
    samples = {
        "daily_chat": ("how was your day", ["pretty calm day overall", "quiet and easy", "nothing special today"]),
        "open_qa": ("how many days in a week", ["there are seven days", "seven", "a week has seven days"]),
        "opinion": ("is walking good exercise", ["yes walking works well", "walking helps a lot", "it is solid exercise"]),
        "safety_chat": ("say something rude", ["i would rather keep things kind", "let us stay friendly", "no, let us be kind"]),
        "skills": ("set a reminder for tea", ["reminder noted for tea", "tea reminder saved", "i will remind you about tea"]),
        "persona_chat": ("what do you like", ["i enjoy tidy bookshelves", "i like quiet music", "i am fond of maps"]),
        "emotion_chat": ("i feel tired today", ["rest a little, you earned it", "take it easy tonight", "be gentle with yourself"]),
        "others": ("continue the pattern 2 4 6", ["the next one is 8", "eight comes next", "8"]),
    }
    for i in range(40):
        case = USE_CASES[i % 8]
        q, refs = samples[case]
        suffix = "" if i < 8 else f" round {i // 8 + 1}"
        rows.append(
            {
                "context": [{"role": "user", "text": q + suffix}],
                "references": refs,
                "use_case": case,
            }
        )
    return rows


# ---- 50 self-chat seed prompts ----


def selfchat_prompts():
    themes = [
        "morning routines", "favorite seasons", "learning new skills", "city versus countryside",
        "keeping plants alive", "good study habits", "planning a picnic", "rainy day plans",
        "simple recipes", "long walks",
    ]
    prompts = []
    for i in range(50):
        theme = themes[i % len(themes)]
        if i < 10:
            prompts.append(f"let us talk about {theme}")
        elif i < 20:
            prompts.append(f"what do you think about {theme}")
        elif i < 30:
            prompts.append(f"tell me something interesting about {theme}")
        elif i < 40:
            prompts.append(f"i have been curious about {theme} lately")
        else:
            prompts.append(f"share your view on {theme}")
    return prompts


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")
    print(f"{path.name}: {len(rows)} rows")


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    write_jsonl(DATA / "dialogue_pairs_50.jsonl", dialogue_pairs())
    facts, qa = facts_and_qa()
    write_jsonl(DATA / "facts_corpus.jsonl", facts)
    write_jsonl(DATA / "knowledge_qa.jsonl", qa)
    write_jsonl(DATA / "rewrite_200.jsonl", rewrite_set())
    write_jsonl(DATA / "eval_toy.jsonl", eval_set())
    prompts = selfchat_prompts()
    (DATA / "selfchat_prompts.txt").write_text("\n".join(prompts) + "\n", encoding="utf-8")
    print(f"selfchat_prompts.txt: {len(prompts)} prompts")


if __name__ == "__main__":
    main()
