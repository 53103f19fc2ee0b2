#!/usr/bin/env python3
"""Regenerate the multi-bleu golden fixtures under crates/core/tests/fixtures/bleu/.

Usage: make_bleu_golden.py MULTI_BLEU_PERL TOKENIZER_GOLDEN_JSONL OUT_DIR

References are the first 50 tokenized sentences of the tokenizer golden file;
hypotheses are deterministic perturbations of them. The script output of
multi-bleu.perl (with and without -lc) is stored next to the text files.
"""
import json
import os
import random
import subprocess
import sys


def perturb(tokens, rng, i):
    t = list(tokens)
    mode = i % 7
    if mode == 0:
        return t
    if mode == 1 and len(t) > 1:
        del t[rng.randrange(len(t))]
    elif mode == 2 and len(t) > 2:
        j = rng.randrange(len(t) - 1)
        t[j], t[j + 1] = t[j + 1], t[j]
    elif mode == 3:
        t[rng.randrange(len(t))] = rng.choice(["the", "a", "of", "Commission", "und", "THE"])
    elif mode == 4:
        t.insert(rng.randrange(len(t) + 1), rng.choice(["very", "the", ",", "also"]))
    elif mode == 5:
        t = t[: max(1, len(t) // 2)]
    elif mode == 6:
        t = [w.upper() if rng.random() < 0.3 else w for w in t]
    return t


def main():
    perl, golden, out = sys.argv[1:4]
    os.makedirs(out, exist_ok=True)
    rows = [json.loads(l) for l in open(golden, encoding="utf-8")]
    refs = [r["tokens"] for r in rows[:50]]
    rng = random.Random(2023)
    hyps = [perturb(r, rng, i) for i, r in enumerate(refs)]
    hyps[17] = []
    ref_path = os.path.join(out, "golden50.ref")
    hyp_path = os.path.join(out, "golden50.hyp")
    with open(ref_path, "w", encoding="utf-8") as f:
        f.writelines(" ".join(r) + "\n" for r in refs)
    with open(hyp_path, "w", encoding="utf-8") as f:
        f.writelines(" ".join(h) + "\n" for h in hyps)
    for name, flags in (("golden50.multi-bleu.txt", []), ("golden50.multi-bleu-lc.txt", ["-lc"])):
        with open(hyp_path, encoding="utf-8") as hf:
            res = subprocess.run(["perl", perl, *flags, ref_path], stdin=hf, capture_output=True, text=True, check=True)
        with open(os.path.join(out, name), "w", encoding="utf-8") as f:
            f.write(res.stdout)


if __name__ == "__main__":
    main()
