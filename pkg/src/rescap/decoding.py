"""Greedy and beam-search caption generation from a trained model.

Token legality during generation: <unk> is masked out so every caption
renders, and <pad>/<bos> are masked so the emitted sequence always
satisfies the caption invariants. <eos> terminates a hypothesis; a
hypothesis that reaches the content-length cap is closed without an
<eos> term in its score. Exact ties are broken toward the smaller token
id (greedy) and lexicographically smaller token sequence (beam), which
makes width-1 beam search reproduce greedy decoding token for token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoder import CaptionModel, DecoderState, PooledFeatures, decode_step_batch, pool_records
from .features import FeatureRecord
from .tensor import Tensor, no_grad
from .vocab import BOS, EOS, PAD, UNK, Caption, DEFAULT_MAX_LEN

BARRED_TOKENS = (PAD, BOS, UNK)

LENGTH_NORMS = ("off", "by_length")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _masked_log_probs(logits: np.ndarray) -> np.ndarray:
    lp = _log_softmax(logits)
    lp[:, list(BARRED_TOKENS)] = -np.inf
    return lp


def _expand_feats(feats: PooledFeatures, k: int) -> PooledFeatures:
    return PooledFeatures(
        regions=Tensor(np.repeat(feats.regions.data, k, axis=0)),
        region_mean=Tensor(np.repeat(feats.region_mean.data, k, axis=0)),
        global_feat=Tensor(np.repeat(feats.global_feat.data, k, axis=0)),
        image_ids=feats.image_ids * k,
    )


# -- greedy -------------------------------------------------------------------------


def greedy_decode_batch(
    records: list[FeatureRecord], model: CaptionModel, max_len: int = DEFAULT_MAX_LEN
) -> list[Caption]:
    """Argmax decoding for a batch of records sharing one region count."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    with no_grad():
        feats = pool_records(model, records)
        b = feats.batch
        state = DecoderState.initial(model.dims, batch=b)
        prev = np.full(b, BOS, dtype=np.intp)
        done = np.zeros(b, dtype=bool)
        contents: list[list[int]] = [[] for _ in range(b)]
        for _ in range(max_len):
            state, logits, _ = decode_step_batch(model, state, prev, feats)
            lp = _masked_log_probs(logits.data)
            picks = lp.argmax(axis=1)  # argmax takes the lowest index on ties
            for i in range(b):
                if done[i]:
                    continue
                if picks[i] == EOS:
                    done[i] = True
                else:
                    contents[i].append(int(picks[i]))
            if done.all():
                break
            prev = np.where(done, EOS, picks)
        return [Caption.from_content(c) for c in contents]


def greedy_decode(
    record: FeatureRecord, model: CaptionModel, max_len: int = DEFAULT_MAX_LEN
) -> Caption:
    """Deterministic argmax decoding; empty-content results are flagged
    by ``Caption.is_degenerate`` rather than raising."""
    return greedy_decode_batch([record], model, max_len)[0]


# -- beam search --------------------------------------------------------------------


@dataclass(frozen=True)
class Hypothesis:
    """One (possibly finished) partial caption in the beam."""

    tokens: tuple[int, ...]       # content ids, no sentinels
    log_prob: float               # sum of emitted token log-probs (<= 0)
    finished: bool
    eos_terminated: bool          # False when the length cap closed it

    def caption(self) -> Caption:
        return Caption.from_content(self.tokens)


@dataclass(frozen=True)
class BeamResult:
    caption: Caption
    log_prob: float
    score: float  # ranking key: log_prob, possibly length-normalised


def beam_decode(
    record: FeatureRecord,
    model: CaptionModel,
    width: int = 3,
    max_len: int = DEFAULT_MAX_LEN,
    length_norm: str = "off",
) -> list[BeamResult]:
    """Beam search over token extensions; returns up to ``width`` results.

    Selection each step takes the best ``width`` candidates over finished
    and alive hypotheses together; finished ones retire into the result
    pool and are never pruned retroactively. Ranking uses the raw
    cumulative log-probability, or log_prob / emitted-token-count when
    ``length_norm="by_length"``; normalisation affects the final ranking
    only, never the search itself.
    """
    if width < 1:
        raise ValueError(f"beam width must be >= 1, got {width}")
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    if length_norm not in LENGTH_NORMS:
        raise ValueError(f"unknown length_norm {length_norm!r}; expected one of {LENGTH_NORMS}")

    with no_grad():
        base_feats = pool_records(model, [record])
        alive: list[Hypothesis] = [Hypothesis((), 0.0, False, False)]
        state = DecoderState.initial(model.dims, batch=1)
        done: list[Hypothesis] = []

        for step in range(1, max_len + 1):
            k = len(alive)
            feats = base_feats if k == 1 else _expand_feats(base_feats, k)
            prev = np.array([h.tokens[-1] if h.tokens else BOS for h in alive], dtype=np.intp)
            state, logits, _ = decode_step_batch(model, state, prev, feats)
            lp = _masked_log_probs(logits.data)

            candidates: list[tuple[Hypothesis, int]] = []  # (hypothesis, parent row)
            for i, hyp in enumerate(alive):
                for tok in range(lp.shape[1]):
                    if not np.isfinite(lp[i, tok]):
                        continue
                    score = hyp.log_prob + float(lp[i, tok])
                    if tok == EOS:
                        candidates.append(
                            (Hypothesis(hyp.tokens, score, True, True), i)
                        )
                    elif step == max_len:
                        # out of steps: close without an <eos> term
                        candidates.append(
                            (Hypothesis(hyp.tokens + (tok,), score, True, False), i)
                        )
                    else:
                        candidates.append(
                            (Hypothesis(hyp.tokens + (tok,), score, False, False), i)
                        )
            candidates.sort(key=lambda ct: (-ct[0].log_prob, ct[0].tokens))
            selected = candidates[:width]

            alive = []
            rows = []
            for hyp, parent in selected:
                if hyp.finished:
                    done.append(hyp)
                else:
                    alive.append(hyp)
                    rows.append(parent)
            if not alive:
                break
            state = state.select(rows)

        def norm(h: Hypothesis) -> float:
            if length_norm == "off":
                return h.log_prob
            emitted = len(h.tokens) + (1 if h.eos_terminated else 0)
            return h.log_prob / max(1, emitted)

        done.sort(key=lambda h: (-norm(h), h.tokens))
        return [BeamResult(h.caption(), h.log_prob, norm(h)) for h in done[:width]]
