#!/usr/bin/env python3
"""Generate src/runtime/unicode_tables.inc: codepoint ranges for \\p{L}, \\p{N}
and \\s exactly as the `regex` module classifies them (the module the
reference GPT-2 tokenizer pre-splits with).

    python3 tools/gen_unicode_tables.py > src/runtime/unicode_tables.inc
"""
import regex

CLASSES = [("kLetterRanges", r"\p{L}"), ("kNumberRanges", r"\p{N}"), ("kSpaceRanges", r"\s")]


def ranges(pattern):
    rx = regex.compile(pattern)
    out = []
    start = None
    for cp in range(0x110000):
        if 0xD800 <= cp <= 0xDFFF:
            hit = False
        else:
            hit = rx.match(chr(cp)) is not None
        if hit and start is None:
            start = cp
        elif not hit and start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, 0x10FFFF))
    return out


def main():
    print("// Generated by tools/gen_unicode_tables.py (regex %s). Do not edit." % regex.__version__)
    for name, pattern in CLASSES:
        rs = ranges(pattern)
        print("inline constexpr CodepointRange %s[] = {" % name)
        for a, b in rs:
            print("    {0x%X, 0x%X}," % (a, b))
        print("};")


if __name__ == "__main__":
    main()
