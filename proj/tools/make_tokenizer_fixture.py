#!/usr/bin/env python3
"""Freeze reference GPT-2 BPE encodings into a JSON fixture.

Uses the slow (pure Python, `regex`-based) GPT2Tokenizer from transformers as
the reference implementation. Run from the repository root:

    python3 tools/make_tokenizer_fixture.py > tests/fixtures/gpt2_tokenizer_cases.json
"""
import json
import random

from transformers import GPT2Tokenizer

CASES = [
    "Hello world",
    "",
    " ",
    "   leading spaces",
    "trailing spaces   ",
    "multiple   inner    spaces",
    "tabs\tand\nnewlines\n\n",
    "I'm sure they'll say it's what we'd've done",
    "DON'T SHOUT, it'S odd",
    "'s at the start",
    "Numbers 12345 and 3.14159 and 1,000,000",
    "Punctuation!!! ??? ... ---",
    "Check out this haiku I wrote:",
    "In ten years, I hope to have accomplished",
    "What is your favorite dad joke?",
    "I visited San Francisco's piers and drank coffee.",
    "café naïve résumé",
    "你好，世界",
    "Привет мир",
    "emoji \U0001F600\U0001F680 mix",
    " non-breaking space",
    "x line separator",
    "٣٤ arabic digits ½ fractions",
    "snake_case and camelCase and kebab-case",
    "https://example.com/path?query=1&b=2",
    "    \n    indented code block",
    "a  \n  b",
    "The quick brown fox jumps over the lazy dog.",
    "supercalifragilisticexpialidocious antidisestablishmentarianism",
    "yoga",
    " yoga",
    " coffee",
    " Pink",
    " Christ",
]


def random_strings(count, seed):
    rng = random.Random(seed)
    pools = [
        "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ",
        "0123456789",
        " \t\n",
        "!@#$%^&*()-_=+[]{};:'\",.<>/?",
        "éüñß中文жλ\U0001F600",
    ]
    out = []
    for _ in range(count):
        n = rng.randint(1, 40)
        s = "".join(rng.choice(rng.choice(pools)) for _ in range(n))
        out.append(s)
    return out


def main():
    tok = GPT2Tokenizer("data/gpt2/vocab.json", "data/gpt2/merges.txt")
    cases = []
    for text in CASES + random_strings(60, 1234):
        cases.append({"text": text, "ids": tok.encode(text)})
    print(json.dumps({"source": "transformers.GPT2Tokenizer (slow)", "cases": cases},
                     ensure_ascii=False, indent=1))


if __name__ == "__main__":
    main()
