"""Variant-comparison machinery: train, decode, score, aggregate.

One experiment row = one model variant trained on a dataset and scored
on a held-out split; the ablation table reports per-metric medians over
seeds. Decoding for evaluation is greedy by default (beam width 1) so
comparisons measure the model, and can be widened per config.
"""

from __future__ import annotations

import os
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from .decoding import beam_decode, greedy_decode_batch
from .metrics import EvalReport, TokenizedPair, evaluate_corpus, tokenize
from .synth import SynthDataset
from .training import TrainConfig, TrainLog, fit

ABLATION_VARIANTS = ("BU_Only", "BU+Td", "BU+ResTd")


def worker_count() -> int:
    """Parallelism cap from RESTD_THREADS (default 1, minimum 1)."""
    raw = os.environ.get("RESTD_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def decode_dataset(model, dataset: SynthDataset, beam: int = 1, max_len: int = 19,
                   chunk: int = 64) -> dict[str, str]:
    """Caption text per image id; greedy when beam == 1."""
    records = [sr.record for sr in dataset.records]
    vocab = dataset.vocab

    if beam == 1:
        out: dict[str, str] = {}
        groups: dict[int, list] = {}
        for r in records:
            groups.setdefault(r.num_regions, []).append(r)
        for _, recs in sorted(groups.items()):
            for lo in range(0, len(recs), chunk):
                batch = recs[lo:lo + chunk]
                for rec, cap in zip(batch, greedy_decode_batch(batch, model, max_len)):
                    out[rec.image_id] = cap.to_text(vocab)
        return out

    def one(rec):
        results = beam_decode(rec, model, width=beam, max_len=max_len)
        return rec.image_id, results[0].caption.to_text(vocab) if results else ""

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return dict(pool.map(one, records))
    return dict(one(r) for r in records)


def score_candidates(candidates: dict[str, str], dataset: SynthDataset) -> EvalReport:
    pairs = [
        TokenizedPair(
            tokenize(candidates[sr.record.image_id]),
            [tokenize(t) for t in sr.ref_texts],
            sr.record.image_id,
        )
        for sr in dataset.records
    ]
    return evaluate_corpus(pairs)


def evaluate_model(model, dataset: SynthDataset, beam: int = 1) -> EvalReport:
    return score_candidates(decode_dataset(model, dataset, beam=beam), dataset)


@dataclass
class VariantRun:
    variant: str
    seed: int
    report: EvalReport
    log: TrainLog


@dataclass
class AblationResult:
    runs: list[VariantRun]

    def metric_values(self, variant: str, metric: str) -> list[float]:
        return [getattr(r.report, metric) for r in self.runs if r.variant == variant]

    def median(self, variant: str, metric: str) -> float:
        return statistics.median(self.metric_values(variant, metric))

    def median_reports(self) -> dict[str, EvalReport]:
        out: dict[str, EvalReport] = {}
        for variant in dict.fromkeys(r.variant for r in self.runs):
            out[variant] = EvalReport(
                bleu={n: statistics.median(
                    [r.report.bleu[n] for r in self.runs if r.variant == variant]
                ) for n in (1, 2, 3, 4)},
                avg_bleu=self.median(variant, "avg_bleu"),
                rouge_l=self.median(variant, "rouge_l"),
                cider=self.median(variant, "cider"),
                meteor_lite=self.median(variant, "meteor_lite"),
            )
        return out


def run_ablation(
    train_set: SynthDataset,
    eval_set: SynthDataset,
    base_config: TrainConfig,
    variants=ABLATION_VARIANTS,
    seeds=(0, 1, 2, 3, 4),
    beam: int = 1,
) -> AblationResult:
    """Train every (variant, seed) pair and score it on the eval split."""
    runs = []
    for variant in variants:
        for seed in seeds:
            config = replace(base_config, variant=variant, seed=seed)
            model, log = fit(train_set, config)
            report = evaluate_model(model, eval_set, beam=beam)
            runs.append(VariantRun(variant=variant, seed=seed, report=report, log=log))
    return AblationResult(runs=runs)
