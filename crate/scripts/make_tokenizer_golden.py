#!/usr/bin/env python3
"""Regenerate crates/core/tests/fixtures/tokenizer_golden.jsonl.

Usage: make_tokenizer_golden.py MOSES_TOKENIZER_PERL INPUT_TSV OUTPUT_JSONL

INPUT_TSV holds `lang<TAB>sentence` lines (only the first tab separates).
The tokenizer is run with `-no-escape -q -l <lang>`.
"""
import json
import subprocess
import sys


def main():
    perl, src, out = sys.argv[1:4]
    rows = []
    with open(src, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            lang, text = line.split("\t", 1)
            rows.append((lang, text))
    with open(out, "w", encoding="utf-8") as f:
        for lang, text in rows:
            res = subprocess.run(
                ["perl", perl, "-no-escape", "-q", "-l", lang],
                input=text + "\n",
                capture_output=True,
                text=True,
                check=True,
            )
            tokens = res.stdout.rstrip("\n").split(" ")
            tokens = [t for t in tokens if t]
            f.write(json.dumps({"lang": lang, "text": text, "tokens": tokens}, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
