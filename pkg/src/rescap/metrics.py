"""Corpus caption metrics, implemented from scratch over one tokenizer.

Implemented: BLEU-1..4 (corpus-level, clipped n-gram precision, brevity
penalty), their arithmetic mean avg_BLEU, ROUGE-L (LCS F-score, beta=1.2),
CIDEr (plain tf-idf cosine consensus, not the -D variant: no length
gaussian, no count clipping), and METEOR-lite.

METEOR-lite is exact-match METEOR: unigram precision/recall with the
standard 9:1 recall weighting and the fragmentation penalty
0.5*(chunks/matches)^3, but no stemming or synonym resources. Scores are
therefore conservative relative to resource-backed METEOR; reports carry
a note saying so.

Every metric reads the same tokenization (lowercase, ASCII punctuation
stripped, whitespace split), versioned below because all downstream
numbers depend on it.

CIDEr scale: the per-image score is 10 * mean over n of the average
reference cosine (the conventional 0..10 range); the reported number is
the corpus mean of that, times 100, matching how captioning tables print
it (a raw corpus score of 1.279 prints as 127.9).
"""

from __future__ import annotations

import json
import math
import string
from collections import Counter
from dataclasses import dataclass, field

TOKENIZATION_VERSION = 1

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)

REPORT_NOTES = (
    "METEOR-lite: exact matching only (no stems or synonyms)",
    "CIDEr: plain tf-idf cosine variant, corpus mean x100",
    "SPICE: not implemented",
)


def tokenize(text: str) -> list[str]:
    """Lowercase, strip ASCII punctuation, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


@dataclass
class TokenizedPair:
    candidate: list[str]
    references: list[list[str]]
    image_id: str = ""

    def __post_init__(self):
        if not self.references:
            raise ValueError(f"pair {self.image_id!r} has no references")


def make_pairs(candidates: dict[str, str], references: dict[str, list[str]]) -> list[TokenizedPair]:
    """Join candidate and reference texts by image id, tokenizing both."""
    missing = sorted(set(candidates) - set(references))
    if missing:
        raise ValueError(f"no references for image ids: {missing[:5]}")
    return [
        TokenizedPair(tokenize(candidates[iid]), [tokenize(r) for r in references[iid]], iid)
        for iid in sorted(candidates)
    ]


@dataclass
class EvalReport:
    bleu: dict[int, float]
    avg_bleu: float
    rouge_l: float
    cider: float
    meteor_lite: float
    notes: tuple[str, ...] = REPORT_NOTES
    tokenization_version: int = TOKENIZATION_VERSION

    def to_json(self) -> str:
        payload = {
            "schema_version": 1,
            "tokenization_version": self.tokenization_version,
            "avg_bleu": self.avg_bleu,
            "bleu": {str(n): v for n, v in sorted(self.bleu.items())},
            "cider": self.cider,
            "meteor_lite": self.meteor_lite,
            "rouge_l": self.rouge_l,
            "notes": list(self.notes),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def table_row(self) -> dict[str, float]:
        return {
            "avg_BLEU": self.avg_bleu,
            "CIDEr": self.cider,
            "METEOR": self.meteor_lite,
            "ROUGE": self.rouge_l,
        }


# -- BLEU ---------------------------------------------------------------------------


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(pairs: list[TokenizedPair], n: int) -> float:
    """Corpus BLEU-n on the 0..100 scale.

    Clipped n-gram precision pooled over the corpus, geometric mean over
    orders 1..n, brevity penalty exp(1 - r/c) with the closest reference
    length per pair (ties resolved toward the shorter reference). Any
    zero precision zeroes the score; no smoothing.
    """
    if not 1 <= n <= 4:
        raise ValueError(f"BLEU order must be in 1..4, got {n}")
    if not pairs:
        raise ValueError("empty corpus")
    matched = [0] * n
    total = [0] * n
    cand_len = 0
    ref_len = 0
    for pair in pairs:
        c = len(pair.candidate)
        cand_len += c
        ref_len += min((abs(len(r) - c), len(r)) for r in pair.references)[1]
        for k in range(1, n + 1):
            counts = _ngrams(pair.candidate, k)
            if not counts:
                continue
            best = Counter()
            for ref in pair.references:
                ref_counts = _ngrams(ref, k)
                for g, cnt in counts.items():
                    best[g] = max(best[g], min(cnt, ref_counts.get(g, 0)))
            matched[k - 1] += sum(best.values())
            total[k - 1] += sum(counts.values())
    if any(t == 0 or m == 0 for m, t in zip(matched, total)):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matched, total)) / n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len) if cand_len else 0.0
    return 100.0 * bp * math.exp(log_p)


def avg_bleu(pairs: list[TokenizedPair]) -> float:
    """Arithmetic mean of BLEU-1..4."""
    if not pairs:
        raise ValueError("empty corpus")
    return sum(corpus_bleu(pairs, n) for n in (1, 2, 3, 4)) / 4.0


# -- ROUGE-L ------------------------------------------------------------------------


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(pairs: list[TokenizedPair], beta: float = 1.2) -> float:
    """Mean over pairs of the best-reference LCS F-score, times 100."""
    if not pairs:
        raise ValueError("empty corpus")
    b2 = beta * beta
    scores = []
    for pair in pairs:
        best = 0.0
        for ref in pair.references:
            lcs = _lcs_length(pair.candidate, ref)
            if lcs == 0:
                continue
            p = lcs / len(pair.candidate)
            r = lcs / len(ref)
            best = max(best, (1 + b2) * p * r / (r + b2 * p))
        scores.append(best)
    return 100.0 * sum(scores) / len(scores)


# -- CIDEr --------------------------------------------------------------------------


def _tfidf_vector(counts: Counter, idf: dict, num_images: int) -> dict:
    log_i = math.log(num_images)
    return {g: c * (log_i - idf.get(g, 0.0)) for g, c in counts.items()}


def _cosine(a: dict, b: dict) -> float:
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    dot = sum(v * b[g] for g, v in a.items() if g in b)
    return dot / (na * nb)


def cider(pairs: list[TokenizedPair], max_n: int = 4) -> float:
    """Consensus CIDEr over n-gram orders 1..max_n, reported x100.

    idf uses document frequency over reference sets: log(|I| /
    max(1, images whose references contain the n-gram)). Candidate
    vectors are compared to each reference by cosine; per-image score is
    10 * mean over orders of the reference-averaged cosine.
    """
    if len(pairs) < 2:
        raise ValueError("CIDEr needs at least 2 images for a meaningful idf")
    num_images = len(pairs)
    idfs: list[dict] = []
    for n in range(1, max_n + 1):
        doc_freq: Counter = Counter()
        for pair in pairs:
            seen = set()
            for ref in pair.references:
                seen.update(_ngrams(ref, n).keys())
            doc_freq.update(seen)
        idfs.append({g: math.log(max(1.0, df)) for g, df in doc_freq.items()})

    total = 0.0
    for pair in pairs:
        per_n = 0.0
        for n in range(1, max_n + 1):
            cand_vec = _tfidf_vector(_ngrams(pair.candidate, n), idfs[n - 1], num_images)
            sims = [
                _cosine(cand_vec, _tfidf_vector(_ngrams(ref, n), idfs[n - 1], num_images))
                for ref in pair.references
            ]
            per_n += sum(sims) / len(sims)
        total += 10.0 * per_n / max_n
    return 100.0 * total / num_images


# -- METEOR-lite --------------------------------------------------------------------


def _align_leftmost(cand: list[str], ref: list[str]) -> list[tuple[int, int]]:
    """Greedy exact alignment: each candidate token takes the leftmost
    unmatched identical reference token."""
    taken = [False] * len(ref)
    matches = []
    for i, tok in enumerate(cand):
        for j, rtok in enumerate(ref):
            if not taken[j] and rtok == tok:
                taken[j] = True
                matches.append((i, j))
                break
    return matches


def _chunk_count(matches: list[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in matches:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_lite(pairs: list[TokenizedPair]) -> float:
    """Exact-match METEOR on the 0..100 scale (best reference per pair)."""
    if not pairs:
        raise ValueError("empty corpus")
    scores = []
    for pair in pairs:
        best = 0.0
        for ref in pair.references:
            matches = _align_leftmost(pair.candidate, ref)
            m = len(matches)
            if m == 0 or not pair.candidate or not ref:
                continue
            p = m / len(pair.candidate)
            r = m / len(ref)
            f_mean = p * r / (0.9 * p + 0.1 * r)
            penalty = 0.5 * (_chunk_count(matches) / m) ** 3
            best = max(best, f_mean * (1.0 - penalty))
        scores.append(best)
    return 100.0 * sum(scores) / len(scores)


# -- bundle -------------------------------------------------------------------------


def evaluate_corpus(pairs: list[TokenizedPair]) -> EvalReport:
    """All metrics over one corpus, on identical tokenization."""
    if len(pairs) < 2:
        raise ValueError("corpus evaluation needs at least 2 images")
    bleu = {n: corpus_bleu(pairs, n) for n in (1, 2, 3, 4)}
    return EvalReport(
        bleu=bleu,
        avg_bleu=sum(bleu.values()) / 4.0,
        rouge_l=rouge_l(pairs),
        cider=cider(pairs),
        meteor_lite=meteor_lite(pairs),
    )


def format_table(rows: dict[str, EvalReport]) -> str:
    """Aligned text table in the conventional column order, with the
    SPICE caveat as a footnote."""
    columns = ("avg_BLEU", "CIDEr", "METEOR", "ROUGE")
    name_w = max(len(name) for name in list(rows) + ["model"])
    header = " ".join(["model".ljust(name_w)] + [c.rjust(9) for c in columns])
    lines = [header, "-" * len(header)]
    for name, report in rows.items():
        vals = report.table_row()
        lines.append(
            " ".join([name.ljust(name_w)] + [f"{vals[c]:9.2f}" for c in columns])
        )
    lines.append("(SPICE not implemented)")
    return "\n".join(lines) + "\n"


# -- JSON-lines interchange ---------------------------------------------------------


def read_candidates_jsonl(path) -> dict[str, str]:
    """Rows of {"image_id": str, "caption": str}."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            iid = row["image_id"]
            if iid in out:
                raise ValueError(f"{path}:{line_no}: duplicate image_id {iid!r}")
            out[iid] = row["caption"]
    return out


def read_references_jsonl(path) -> dict[str, list[str]]:
    """Rows of {"image_id": str, "refs": [str, ...]}."""
    out: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            iid = row["image_id"]
            if iid in out:
                raise ValueError(f"{path}:{line_no}: duplicate image_id {iid!r}")
            refs = list(row["refs"])
            if not refs:
                raise ValueError(f"{path}:{line_no}: empty refs for {iid!r}")
            out[iid] = refs
    return out
