"""Per-block gradient verification for the full caption model.

Each learnable block is checked by differentiating a teacher-forced loss
through two unrolled decoder steps, so the recurrence, the attention
softmaxes and the pooler all contribute to every gradient.

The probe loss is scaled down by ``LOSS_SCALE``. Central differences of
an O(1) loss carry an absolute noise floor around 1e-10; coordinates
whose true gradient happens to land below ~1e-6 would then fail the
relative test for purely numerical reasons. Scaling the loss moves that
noise below the checker's 1e-8 denominator floor while leaving any real
backward-formula error fully visible (gradient errors are linear in the
loss scale, so their relative size is unchanged).

The pooler's logit bias is excluded: it shifts every cell's attention
logit equally, the softmax cancels the shift, and its gradient is
identically zero, which a finite difference can only ever confirm up to
noise.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .decoder import CaptionModel, ModelDims, init_model, make_variant, teacher_forced_batch
from .features import FeatureRecord, RegionGrid
from .rng import derive_seed, normal_array
from .vocab import Caption

LOSS_SCALE = 1e-3

CHECK_DIMS = ModelDims(
    vocab_size=9, feat_dim=6, embed_dim=5, hidden1=7, hidden2=6, attn_dim=7, pool_hidden=4
)

BLOCK_NAMES = ("pool", "attend", "lstm1", "lstm2", "embed", "out")


def _blocks(model: CaptionModel) -> dict[str, list]:
    return {
        "pool": [model.pooler.w1, model.pooler.b1, model.pooler.w2],  # b2 is inert, see above
        "attend": [model.attend.wv, model.attend.wh, model.attend.wa],
        "lstm1": [model.lstm1_w, model.lstm1_b],
        "lstm2": [model.lstm2_w, model.lstm2_b],
        "embed": [model.we],
        "out": [model.out_w, model.out_b],
    }


def _fixture(seed: int, dims: ModelDims) -> tuple[CaptionModel, FeatureRecord, Caption]:
    model = init_model(dims, make_variant("BU+ResTd"), seed=derive_seed(seed, 1))
    grids = []
    for i in range(3):
        cells = normal_array(derive_seed(seed, 2, i), 4 * dims.feat_dim).reshape(4, dims.feat_dim)
        grids.append(RegionGrid(cells, 2, 2))
    gfeat = normal_array(derive_seed(seed, 3), dims.feat_dim)
    record = FeatureRecord(image_id=f"check{seed}", grids=grids, global_feat=gfeat)
    caption = Caption.from_content([4 + (seed % 3), 5, 6])
    return model, record, caption


def check_blocks(
    seeds=range(5), dims: ModelDims = CHECK_DIMS, step: float = 1e-5
) -> dict[str, float]:
    """Worst relative error per block across the given seeds."""
    worst = {name: 0.0 for name in BLOCK_NAMES}
    for seed in seeds:
        model, record, caption = _fixture(seed, dims)

        def f(params):
            loss, _, _ = teacher_forced_batch(model, [record], [caption])
            return T.mul(loss, LOSS_SCALE)

        for name, tensors in _blocks(model).items():
            err = T.grad_check(f, tensors, step=step)
            worst[name] = max(worst[name], err)
    return worst
