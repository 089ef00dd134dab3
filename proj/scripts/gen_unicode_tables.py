#!/usr/bin/env python3
"""Generate core/src/unicode_tables.inc for the BERT basic tokenizer.

The tables mirror the character classes used by the uncased BERT
normalizer (whitespace, control, punctuation) and a per-code-point
NFD + combining-mark-strip + lowercase mapping. Hangul syllables are
decomposed algorithmically in C++ and are excluded here.

Usage: python3 scripts/gen_unicode_tables.py > core/src/unicode_tables.inc
"""
import sys
import unicodedata

MAX_CP = 0x110000


def ranges(pred):
    out = []
    start = None
    for cp in range(MAX_CP):
        if pred(cp):
            if start is None:
                start = cp
        elif start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, MAX_CP - 1))
    return out


def is_whitespace(cp):
    c = chr(cp)
    if c in " \t\n\r":
        return True
    return unicodedata.category(c) == "Zs"


def is_control(cp):
    c = chr(cp)
    if c in "\t\n\r":
        return False
    return unicodedata.category(c).startswith("C")


def is_punctuation(cp):
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(chr(cp)).startswith("P")


def is_split_space(cp):
    # str.split() separators that survive text cleaning.
    c = chr(cp)
    return c.isspace() and not is_whitespace(cp) and not is_control(cp)


def is_cased(cp):
    c = chr(cp)
    return c.lower() != c or c.upper() != c or c.title() != c


def is_case_ignorable(cp):
    c = chr(cp)
    cat = unicodedata.category(c)
    return cat in ("Mn", "Me", "Cf", "Lm", "Sk") or c in "'.:·‘’․﹒＇．·՟״‧︓﹕："


def normalized(cp):
    s = unicodedata.normalize("NFD", chr(cp).lower())
    return "".join(ch for ch in s if unicodedata.category(ch) != "Mn")


def emit_ranges(name, rs):
    print(f"inline constexpr CodepointRange {name}[] = {{")
    for a, b in rs:
        print(f"    {{0x{a:X}, 0x{b:X}}},")
    print("};")


def main():
    print("// Generated by scripts/gen_unicode_tables.py from Python unicodedata "
          f"{unicodedata.unidata_version}. Do not edit.")
    print("// clang-format off")
    emit_ranges("kWhitespaceRanges", ranges(is_whitespace))
    emit_ranges("kControlRanges", ranges(is_control))
    emit_ranges("kPunctuationRanges", ranges(is_punctuation))
    emit_ranges("kSplitSpaceRanges", ranges(is_split_space))

    entries = []
    pool = []
    for cp in range(MAX_CP):
        if 0xAC00 <= cp <= 0xD7A3 or 0xD800 <= cp <= 0xDFFF:
            continue
        n = normalized(cp)
        if n != chr(cp):
            entries.append((cp, len(pool), len(n)))
            pool.extend(ord(ch) for ch in n)
    print("inline constexpr char32_t kNormPool[] = {")
    for i in range(0, len(pool), 12):
        print("    " + ", ".join(f"0x{c:X}" for c in pool[i:i + 12]) + ",")
    print("};")
    print("inline constexpr NormEntry kNormEntries[] = {")
    for cp, off, ln in entries:
        print(f"    {{0x{cp:X}, {off}, {ln}}},")
    print("};")
    print("// clang-format on")


if __name__ == "__main__":
    sys.exit(main())
