"""Two-LSTM caption decoder over attention-pooled region features.

Per step: LSTM_1 mixes the previous prediction context (h2, previous word
embedding) with the global image vector and the mean region vector; its
new state queries the upper attention block over the N region vectors;
LSTM_2 consumes the attended context and emits the next-word logits
through a single-layer output perceptron.

Ablation axes are carried as flags so every variant shares one parameter
layout: the lower pooling mode (average / attention / residual_attention),
whether the global image vector feeds LSTM_1, and whether the upper
attention keeps its residual shortcut. Inputs removed by a flag are
replaced by zero vectors of the original width.

Everything here is batch-first; the single-example functions wrap the
batched cores with B=1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .attention import (
    GridPoolerParams,
    RegionAttentionParams,
    attend_regions_batch,
    pool_cells_batch,
)
from .features import FeatureRecord
from .rng import derive_seed, uniform_array
from .tensor import Tensor
from .vocab import BOS, EOS, PAD, Caption

MODEL_VARIANTS = ("BU_Only", "BU+Td", "BU+ResTd", "TD")

# Substream tags for parameter initialisation.
_INIT_STREAM = 101


@dataclass(frozen=True)
class VariantFlags:
    lower_pooling_mode: str = "residual_attention"
    use_global_feat: bool = True
    upper_residual: bool = True
    feed_h1_to_lstm2: bool = True


def make_variant(name: str, td_lower_mode: str = "residual_attention") -> VariantFlags:
    """Flag bundle for one of the ablation rows.

    TD keeps whatever lower pooling mode the experiment is configured
    with (default residual_attention) and switches off exactly the two
    global/residual inputs.
    """
    if name == "BU_Only":
        return VariantFlags(lower_pooling_mode="average")
    if name == "BU+Td":
        return VariantFlags(lower_pooling_mode="attention")
    if name == "BU+ResTd":
        return VariantFlags(lower_pooling_mode="residual_attention")
    if name == "TD":
        return VariantFlags(
            lower_pooling_mode=td_lower_mode, use_global_feat=False, upper_residual=False
        )
    raise ValueError(f"unknown variant {name!r}; expected one of {MODEL_VARIANTS}")


@dataclass(frozen=True)
class ModelDims:
    vocab_size: int
    feat_dim: int = 32
    embed_dim: int = 32
    hidden1: int = 64
    hidden2: int = 64
    attn_dim: int = 64
    pool_hidden: int = 0  # 0 means max(8, feat_dim // 4)

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ValueError("vocab size must be >= 5")
        if min(self.feat_dim, self.embed_dim, self.hidden1, self.hidden2, self.attn_dim) < 1:
            raise ValueError("model widths must be positive")
        if self.pool_hidden == 0:
            object.__setattr__(self, "pool_hidden", max(8, self.feat_dim // 4))

    @property
    def lstm1_input(self) -> int:
        return self.hidden2 + 2 * self.feat_dim + self.embed_dim

    @property
    def lstm2_input(self) -> int:
        return self.feat_dim + self.hidden1

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.vocab_size, self.feat_dim, self.embed_dim, self.hidden1,
             self.hidden2, self.attn_dim, self.pool_hidden],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, a: np.ndarray) -> "ModelDims":
        v = [int(x) for x in np.asarray(a).reshape(-1)]
        return cls(*v)


@dataclass
class CaptionModel:
    dims: ModelDims
    flags: VariantFlags
    we: Tensor          # (V, E) embedding, one row per token
    lstm1_w: Tensor     # (lstm1_input + H1, 4*H1), gate order i,f,o,g
    lstm1_b: Tensor     # (4*H1,)
    attend: RegionAttentionParams
    lstm2_w: Tensor     # (lstm2_input + H2, 4*H2)
    lstm2_b: Tensor     # (4*H2,)
    out_w: Tensor       # (H2, V)
    out_b: Tensor       # (V,)
    pooler: GridPoolerParams = field(repr=False, default=None)

    def named_parameters(self) -> dict[str, Tensor]:
        params = {
            "embed.we": self.we,
            "lstm1.w": self.lstm1_w,
            "lstm1.b": self.lstm1_b,
            "lstm2.w": self.lstm2_w,
            "lstm2.b": self.lstm2_b,
            "out.w": self.out_w,
            "out.b": self.out_b,
        }
        params.update(self.attend.tensors())
        params.update(self.pooler.tensors())
        return params


def _xavier(seed: int, fan_in: int, fan_out: int, shape: tuple[int, ...]) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    n = int(np.prod(shape))
    return ((uniform_array(seed, n) * 2.0 - 1.0) * limit).reshape(shape)


def init_model(dims: ModelDims, flags: VariantFlags, seed: int) -> CaptionModel:
    """Fresh parameters: Xavier-uniform weights, zero biases, forget bias +1."""

    def weight(idx: int, fan_in: int, fan_out: int, shape) -> Tensor:
        return Tensor(_xavier(derive_seed(seed, _INIT_STREAM, idx), fan_in, fan_out, shape),
                      requires_grad=True)

    def bias(n: int) -> Tensor:
        return Tensor(np.zeros(n), requires_grad=True)

    d, e, h1, h2, a, p, v = (dims.feat_dim, dims.embed_dim, dims.hidden1,
                             dims.hidden2, dims.attn_dim, dims.pool_hidden,
                             dims.vocab_size)
    x1, x2 = dims.lstm1_input, dims.lstm2_input

    lstm1_b = bias(4 * h1)
    lstm1_b.data[h1:2 * h1] = 1.0
    lstm2_b = bias(4 * h2)
    lstm2_b.data[h2:2 * h2] = 1.0

    return CaptionModel(
        dims=dims,
        flags=flags,
        we=weight(0, v, e, (v, e)),
        lstm1_w=weight(1, x1 + h1, 4 * h1, (x1 + h1, 4 * h1)),
        lstm1_b=lstm1_b,
        attend=RegionAttentionParams(
            wv=weight(2, d, a, (d, a)),
            wh=weight(3, h1, a, (h1, a)),
            wa=weight(4, a, 1, (a, 1)),
            residual_enabled=flags.upper_residual,
        ),
        lstm2_w=weight(5, x2 + h2, 4 * h2, (x2 + h2, 4 * h2)),
        lstm2_b=lstm2_b,
        out_w=weight(6, h2, v, (h2, v)),
        out_b=bias(v),
        pooler=GridPoolerParams(
            w1=weight(7, d, p, (d, p)),
            b1=bias(p),
            w2=weight(8, p, 1, (p, 1)),
            b2=bias(1),
            pooling_mode=flags.lower_pooling_mode,
        ),
    )


# -- recurrent cells -------------------------------------------------------------


def lstm_cell_batch(x: Tensor, h: Tensor, c: Tensor, w: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step over (B, .) rows; gate order in w/b is i, f, o, g."""
    if x.ndim != 2 or h.ndim != 2 or c.ndim != 2:
        raise T.ShapeError("lstm_cell_batch expects 2-d (B, .) operands")
    hidden = h.shape[1]
    if c.shape != h.shape or w.shape != (x.shape[1] + hidden, 4 * hidden) or b.shape != (4 * hidden,):
        raise T.ShapeError(
            f"lstm shapes disagree: x {x.shape}, h {h.shape}, c {c.shape}, w {w.shape}, b {b.shape}"
        )
    z = T.add_bias(T.matmul(T.concat([x, h], axis=1), w), b)
    i = T.sigmoid(T.slice_cols(z, 0, hidden))
    f = T.sigmoid(T.slice_cols(z, hidden, 2 * hidden))
    o = T.sigmoid(T.slice_cols(z, 2 * hidden, 3 * hidden))
    g = T.tanh(T.slice_cols(z, 3 * hidden, 4 * hidden))
    c_next = T.add(T.mul(f, c), T.mul(i, g))
    h_next = T.mul(o, T.tanh(c_next))
    return h_next, c_next


def lstm_cell_step(x, h, c, w, b) -> tuple[Tensor, Tensor]:
    """Single-vector LSTM step; thin wrapper over the batched cell."""
    x, h, c = T.as_tensor(x), T.as_tensor(h), T.as_tensor(c)
    if x.ndim != 1 or h.ndim != 1 or c.ndim != 1:
        raise T.ShapeError("lstm_cell_step expects vectors")
    if h.shape != c.shape:
        raise T.ShapeError(f"hidden and cell widths disagree: {h.shape} vs {c.shape}")
    n = h.shape[0]
    h2, c2 = lstm_cell_batch(
        T.reshape(x, (1, x.shape[0])), T.reshape(h, (1, n)), T.reshape(c, (1, n)), w, b
    )
    return T.reshape(h2, (n,)), T.reshape(c2, (n,))


# -- pooled features ---------------------------------------------------------------


@dataclass
class PooledFeatures:
    """Lower-pooled view of a batch of records, ready for decoding.

    regions is graph-linked to the pooler parameters whenever the pooling
    mode is learned, so decoder losses train the pooler end to end.
    """

    regions: Tensor       # (B, N, D)
    region_mean: Tensor   # (B, D)
    global_feat: Tensor   # (B, D), constant
    image_ids: list[str]

    @property
    def batch(self) -> int:
        return self.regions.shape[0]

    @property
    def num_regions(self) -> int:
        return self.regions.shape[1]

    @property
    def depth(self) -> int:
        return self.regions.shape[2]


def pool_records(model: CaptionModel, records: list[FeatureRecord]) -> PooledFeatures:
    """Run the lower pooler over each record's grids; records must share N."""
    if not records:
        raise ValueError("pool_records needs at least one record")
    n = records[0].num_regions
    d = records[0].depth
    if d != model.dims.feat_dim:
        raise T.ShapeError(f"record width D={d} does not match model D={model.dims.feat_dim}")
    for r in records:
        if r.num_regions != n or r.depth != d:
            raise T.ShapeError("records in one batch must share N and D")
    b = len(records)
    cells = np.concatenate([r.cell_stack() for r in records], axis=0)  # (B*N, M, D)
    pooled, _ = pool_cells_batch(Tensor(cells), model.pooler)
    regions = T.reshape(pooled, (b, n, d))
    region_mean = T.mean_along(regions, axis=1)
    global_feat = Tensor(np.stack([r.global_feat for r in records], axis=0))
    return PooledFeatures(regions, region_mean, global_feat, [r.image_id for r in records])


def pool_record(model: CaptionModel, record: FeatureRecord) -> PooledFeatures:
    return pool_records(model, [record])


# -- decoding state ------------------------------------------------------------------


@dataclass
class DecoderState:
    """Recurrent state (batch-first); zeros at t=0."""

    h1: Tensor
    c1: Tensor
    h2: Tensor
    c2: Tensor
    t: int = 0

    @classmethod
    def initial(cls, dims: ModelDims, batch: int = 1) -> "DecoderState":
        return cls(
            h1=Tensor(np.zeros((batch, dims.hidden1))),
            c1=Tensor(np.zeros((batch, dims.hidden1))),
            h2=Tensor(np.zeros((batch, dims.hidden2))),
            c2=Tensor(np.zeros((batch, dims.hidden2))),
            t=0,
        )

    def select(self, rows) -> "DecoderState":
        """Row-gathered copy (used when beam hypotheses are reordered)."""
        rows = np.asarray(rows, dtype=np.intp)
        return DecoderState(
            h1=Tensor(self.h1.data[rows]),
            c1=Tensor(self.c1.data[rows]),
            h2=Tensor(self.h2.data[rows]),
            c2=Tensor(self.c2.data[rows]),
            t=self.t,
        )


def decode_step_batch(
    model: CaptionModel, state: DecoderState, prev_ids, feats: PooledFeatures
) -> tuple[DecoderState, Tensor, Tensor]:
    """One decoder step for a batch: returns (state', (B, V) logits, (B, N) attention)."""
    prev = np.asarray(prev_ids, dtype=np.intp)
    v = model.dims.vocab_size
    if prev.ndim != 1 or prev.shape[0] != feats.batch:
        raise T.ShapeError(f"prev_ids shape {prev.shape} does not match batch {feats.batch}")
    if prev.size and (prev.min() < 0 or prev.max() >= v):
        raise ValueError(f"token id out of range for vocab size {v}")
    if feats.depth != model.dims.feat_dim:
        raise T.ShapeError(
            f"feature width {feats.depth} does not match model D={model.dims.feat_dim}"
        )
    b = feats.batch
    flags = model.flags

    emb = T.take_rows(model.we, prev)
    gvec = feats.global_feat if flags.use_global_feat else Tensor(np.zeros((b, model.dims.feat_dim)))
    x1 = T.concat([state.h2, gvec, feats.region_mean, emb], axis=1)
    h1, c1 = lstm_cell_batch(x1, state.h1, state.c1, model.lstm1_w, model.lstm1_b)

    context, attn = attend_regions_batch(feats.regions, h1, model.attend)

    h1_feed = h1 if flags.feed_h1_to_lstm2 else Tensor(np.zeros((b, model.dims.hidden1)))
    x2 = T.concat([context, h1_feed], axis=1)
    h2, c2 = lstm_cell_batch(x2, state.h2, state.c2, model.lstm2_w, model.lstm2_b)

    logits = T.add_bias(T.matmul(h2, model.out_w), model.out_b)
    return DecoderState(h1, c1, h2, c2, state.t + 1), logits, attn


def restd_lstm_step(
    state: DecoderState, prev_word: int, feats: PooledFeatures, model: CaptionModel
) -> tuple[DecoderState, Tensor, Tensor]:
    """Single-example step; logits come back as a (V,) vector, attention as (N,)."""
    if feats.batch != 1:
        raise T.ShapeError("restd_lstm_step expects batch-1 pooled features")
    state2, logits, attn = decode_step_batch(model, state, np.array([prev_word]), feats)
    return state2, T.reshape(logits, (model.dims.vocab_size,)), T.reshape(attn, (feats.num_regions,))


# -- teacher-forced training loss --------------------------------------------------


@dataclass
class StepStats:
    tokens: int = 0
    correct: int = 0

    @property
    def accuracy(self) -> float:
        return self.correct / self.tokens if self.tokens else 0.0


def teacher_forced_batch(
    model: CaptionModel, records: list[FeatureRecord], targets: list[Caption]
) -> tuple[Tensor, list[np.ndarray], StepStats]:
    """Mean per-caption cross-entropy over a batch, under teacher forcing.

    Each caption contributes the mean of its content+<eos> step losses;
    the batch loss is the mean of those means, so long captions do not
    dominate. Returns (loss, per-step logits, greedy token stats).
    """
    if len(records) != len(targets) or not records:
        raise ValueError("need equal, non-empty records and targets")
    for cap in targets:
        if cap.length < 1:
            raise ValueError("cannot teacher-force an empty caption")
    b = len(records)
    steps = max(cap.length for cap in targets) + 1  # content plus <eos>

    inputs = np.full((b, steps), PAD, dtype=np.intp)
    outs = np.full((b, steps), PAD, dtype=np.intp)
    weights = np.zeros((b, steps), dtype=np.float64)
    for k, cap in enumerate(targets):
        ids = cap.token_ids  # <bos> c1 .. cL <eos>
        n_steps = len(ids) - 1
        inputs[k, :n_steps] = ids[:-1]
        outs[k, :n_steps] = ids[1:]
        weights[k, :n_steps] = 1.0 / (n_steps * b)

    feats = pool_records(model, records)
    state = DecoderState.initial(model.dims, batch=b)
    loss = None
    step_logits: list[np.ndarray] = []
    stats = StepStats()
    for t in range(steps):
        state, logits, _ = decode_step_batch(model, state, inputs[:, t], feats)
        step_logits.append(logits.data)
        live = weights[:, t] > 0
        if live.any():
            pred = logits.data[live].argmax(axis=1)
            stats.tokens += int(live.sum())
            stats.correct += int((pred == outs[live, t]).sum())
        term = T.cross_entropy_rows(logits, outs[:, t], weights[:, t])
        loss = term if loss is None else T.add(loss, term)
    return loss, step_logits, stats


def forward_teacher_forced(
    record: FeatureRecord, target: Caption, model: CaptionModel
) -> tuple[Tensor, list[np.ndarray]]:
    """Single-example teacher-forced loss; wraps the batched core with B=1."""
    loss, step_logits, _ = teacher_forced_batch(model, [record], [target])
    return loss, [sl[0] for sl in step_logits]


# -- checkpoint glue ---------------------------------------------------------------

_POOL_MODE_IDS = {"average": 0.0, "attention": 1.0, "residual_attention": 2.0}
_POOL_MODE_NAMES = {v: k for k, v in _POOL_MODE_IDS.items()}


def model_to_arrays(model: CaptionModel) -> dict[str, np.ndarray]:
    """Flatten a model to named arrays (parameters plus config scalars)."""
    out = {name: t.data for name, t in model.named_parameters().items()}
    out["config.dims"] = model.dims.as_array()
    out["config.flags"] = np.array(
        [
            _POOL_MODE_IDS[model.flags.lower_pooling_mode],
            float(model.flags.use_global_feat),
            float(model.flags.upper_residual),
            float(model.flags.feed_h1_to_lstm2),
        ],
        dtype=np.float64,
    )
    return out


def model_from_arrays(arrays: dict[str, np.ndarray]) -> CaptionModel:
    dims = ModelDims.from_array(arrays["config.dims"])
    fl = np.asarray(arrays["config.flags"]).reshape(-1)
    flags = VariantFlags(
        lower_pooling_mode=_POOL_MODE_NAMES[float(fl[0])],
        use_global_feat=bool(fl[1]),
        upper_residual=bool(fl[2]),
        feed_h1_to_lstm2=bool(fl[3]),
    )
    model = init_model(dims, flags, seed=0)
    for name, t in model.named_parameters().items():
        arr = np.asarray(arrays[name], dtype=np.float64)
        if arr.shape != t.data.shape:
            raise ValueError(f"checkpoint shape conflict for {name}: {arr.shape} vs {t.data.shape}")
        t.data = arr.copy()
    return model


def clone_flags_with_mode(flags: VariantFlags, mode: str) -> VariantFlags:
    return replace(flags, lower_pooling_mode=mode)
