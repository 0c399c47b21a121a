"""The caption metrics on hand-checkable fixtures.

Run: python3 demos/04_metrics_tour.py
"""

import math

from rescap.metrics import (
    TokenizedPair,
    avg_bleu,
    cider,
    corpus_bleu,
    evaluate_corpus,
    format_table,
    meteor_lite,
    rouge_l,
    tokenize,
)


def pair(cand, refs, iid="x"):
    return TokenizedPair(tokenize(cand), [tokenize(r) for r in refs], iid)


print("== BLEU-1 with a brevity penalty you can do on paper ==")
p = [pair("a man riding a horse", ["a man is riding a horse"])]
print(f"candidate 5 tokens, reference 6; p1 = 5/5, BP = exp(1 - 6/5)")
print(f"BLEU-1 = {corpus_bleu(p, 1):.4f}   (analytic {100 * math.exp(1 - 6 / 5):.4f})")

print("\n== ROUGE-L: a transposition costs one LCS token ==")
print(f"'a b c d' vs 'a c b d' -> {rouge_l([pair('a b c d', ['a c b d'])]):.1f}")

print("\n== METEOR-lite: the fragmentation penalty ==")
print(f"identical 'a b c'  -> {meteor_lite([pair('a b c', ['a b c'])]):.2f}  (one chunk)")
print(f"scrambled 'a c b'  -> {meteor_lite([pair('a c b', ['a b c'])]):.2f}  (three chunks)")

print("\n== CIDEr rewards consensus n-grams, idf-weighted ==")
corpus = [
    pair("a man rides a horse", ["a man is riding a horse", "a person on a horse"], "i1"),
    pair("a dog chases a ball", ["the dog chases a red ball"], "i2"),
]
print(f"two-image fixture corpus -> CIDEr {cider(corpus):.2f}")

print("\n== the full report ==")
report = evaluate_corpus(corpus)
print(format_table({"demo": report}))
print("notes:", *report.notes, sep="\n  ")
