#!/usr/bin/env python3
"""Generate the bundled desk-scale corpus.

The text is produced by a small seeded grammar of short supportive
dialogue turns, so it is original, public domain and reproducible:

    python3 tools/make_corpus.py --out data/corpus.txt --bytes 200000
"""

import argparse
import random

SUBJECTS = ["i", "my friend", "my sister", "my brother", "my partner", "my coworker",
            "my neighbor", "my mother", "my father", "my roommate"]
FEELINGS = ["anxious", "tired", "lonely", "worried", "stressed", "sad", "restless",
            "overwhelmed", "nervous", "calm", "hopeful", "better"]
SITUATIONS = ["at work", "at night", "before exams", "after long days", "on weekends",
              "in the morning", "when it rains", "around people", "at home", "lately"]
ACTIONS = ["take a short walk", "write down your thoughts", "call someone you trust",
           "drink some water", "rest for a while", "breathe slowly", "make a small plan",
           "step outside for fresh air", "keep a regular sleep schedule", "talk to a counselor",
           "stretch for a few minutes", "listen to quiet music"]
OPENERS = ["it sounds like", "i hear that", "thank you for sharing that", "it makes sense that",
           "many people find that"]
REASONS = ["it helps to slow down", "small steps add up", "you are not alone in this",
           "feelings change over time", "rest is part of healing", "routines bring some comfort"]
QUESTIONS = ["what usually helps you", "how long has this been going on",
             "who can you talk to", "what would make today easier", "how are you sleeping"]


def user_turn(rng):
    subj = rng.choice(SUBJECTS)
    verb = "feel" if subj == "i" else "feels"
    line = f"{subj} {verb} {rng.choice(FEELINGS)} {rng.choice(SITUATIONS)}."
    if rng.random() < 0.4:
        line += f" it is hard to {rng.choice(ACTIONS)}."
    return "user: " + line


def helper_turn(rng):
    parts = [f"{rng.choice(OPENERS)} things feel {rng.choice(FEELINGS)} right now."]
    parts.append(f"you could {rng.choice(ACTIONS)}, because {rng.choice(REASONS)}.")
    if rng.random() < 0.5:
        parts.append(f"{rng.choice(QUESTIONS)}?")
    return "helper: " + " ".join(parts)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/corpus.txt")
    ap.add_argument("--bytes", type=int, default=200000)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    lines = []
    size = 0
    while size < args.bytes:
        for turn in (user_turn(rng), helper_turn(rng)):
            lines.append(turn)
            size += len(turn) + 1
    with open(args.out, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
