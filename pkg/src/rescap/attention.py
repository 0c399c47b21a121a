"""The two residual top-down attention blocks and their ablation variants.

Lower level: a grid pooler that fuses one region's n1 x n2 cells into a
single vector. Three modes: plain average pooling, learned soft attention
over cells, and residual attention (attended vector plus the average, so
a badly learned attention map cannot throw information away).

Upper level: additive attention over the N region vectors, queried by the
decoder's context state, with the same optional residual shortcut through
the mean region vector.

Both blocks are written batch-first over a flattened row axis so the
training loop can push many regions/images through one graph; the
single-example entry points are thin wrappers around the batched cores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .features import RegionGrid
from .tensor import Tensor

POOLING_MODES = ("average", "attention", "residual_attention")


@dataclass
class GridPoolerParams:
    """Two-layer MLP scoring each grid cell, plus the pooling mode.

    w1/b1 map a D-cell to a hidden vector, w2/b2 map that to one logit.
    b2 shifts every cell's logit equally, so the softmax (and therefore
    the whole block) is invariant to it; it is kept for a conventional
    affine layer shape but carries no gradient signal.
    """

    w1: Tensor  # (D, H)
    b1: Tensor  # (H,)
    w2: Tensor  # (H, 1)
    b2: Tensor  # (1,)
    pooling_mode: str = "residual_attention"

    def __post_init__(self):
        if self.pooling_mode not in POOLING_MODES:
            raise ValueError(
                f"unknown pooling mode {self.pooling_mode!r}; expected one of {POOLING_MODES}"
            )
        d, h = self.w1.shape
        if h < 1:
            raise ValueError("pooler hidden width must be >= 1")
        if self.b1.shape != (h,) or self.w2.shape != (h, 1) or self.b2.shape != (1,):
            raise ValueError("pooler parameter shapes are inconsistent")
        for t in (self.w1, self.b1, self.w2, self.b2):
            if not np.all(np.isfinite(t.data)):
                raise ValueError("pooler parameters must be finite")

    @property
    def feat_dim(self) -> int:
        return self.w1.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return {"pool.w1": self.w1, "pool.b1": self.b1, "pool.w2": self.w2, "pool.b2": self.b2}


@dataclass
class RegionAttentionParams:
    """Additive attention over region vectors, queried by a context state."""

    wv: Tensor  # (D, A)
    wh: Tensor  # (H1, A)
    wa: Tensor  # (A, 1)
    residual_enabled: bool = True

    def __post_init__(self):
        a = self.wv.shape[1]
        if a < 1:
            raise ValueError("attention joint width must be >= 1")
        if self.wh.shape[1] != a or self.wa.shape != (a, 1):
            raise ValueError("attention parameter shapes are inconsistent")
        for t in (self.wv, self.wh, self.wa):
            if not np.all(np.isfinite(t.data)):
                raise ValueError("attention parameters must be finite")

    @property
    def feat_dim(self) -> int:
        return self.wv.shape[0]

    @property
    def query_dim(self) -> int:
        return self.wh.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return {"attend.wv": self.wv, "attend.wh": self.wh, "attend.wa": self.wa}


class RegionSet:
    """N region vectors plus their mean, the upper block's working set."""

    def __init__(self, regions: np.ndarray):
        regions = np.asarray(regions, dtype=np.float64)
        if regions.ndim != 2 or regions.shape[0] < 1:
            raise ValueError(f"regions must be (N, D) with N >= 1, got {regions.shape}")
        self.regions = regions

    @property
    def pooled(self) -> np.ndarray:
        return self.regions.mean(axis=0)

    @property
    def num_regions(self) -> int:
        return self.regions.shape[0]

    @property
    def depth(self) -> int:
        return self.regions.shape[1]


# -- batched cores -------------------------------------------------------------


def pool_cells_batch(cells, params: GridPoolerParams) -> tuple[Tensor, Tensor]:
    """Pool a (R, M, D) stack of cell grids into (R, D) vectors.

    Returns (pooled, weights) where weights is the (R, M) attention map
    actually used (uniform rows in average mode).
    """
    cells = T.as_tensor(cells)
    if cells.ndim != 3:
        raise T.ShapeError(f"pool_cells_batch expects (R, M, D), got {cells.shape}")
    r, m, d = cells.shape
    if d != params.feat_dim:
        raise T.ShapeError(f"cell width {d} does not match pooler D={params.feat_dim}")
    mode = params.pooling_mode

    mean = T.mean_along(cells, axis=1)
    if mode == "average":
        weights = Tensor(np.full((r, m), 1.0 / m))
        return mean, weights

    flat = T.reshape(cells, (r * m, d))
    hidden = T.relu(T.add_bias(T.matmul(flat, params.w1), params.b1))
    logits = T.reshape(T.add_bias(T.matmul(hidden, params.w2), params.b2), (r, m))
    weights = T.softmax(logits, axis=1)
    attended = T.weighted_sum_rows(weights, cells)
    if mode == "attention":
        return attended, weights
    return T.add(attended, mean), weights


def attend_regions_batch(
    regions, query, params: RegionAttentionParams
) -> tuple[Tensor, Tensor]:
    """Additive attention over (B, N, D) regions with a (B, H1) query.

    Scores are wa . tanh(Wv r_i + Wh q); the output is the softmax-weighted
    region sum, plus the per-image region mean when the residual shortcut
    is on. Returns ((B, D) context, (B, N) weights).
    """
    regions = T.as_tensor(regions)
    query = T.as_tensor(query)
    if regions.ndim != 3 or query.ndim != 2 or regions.shape[0] != query.shape[0]:
        raise T.ShapeError(
            f"attend_regions_batch: regions {regions.shape}, query {query.shape}"
        )
    b, n, d = regions.shape
    if d != params.feat_dim or query.shape[1] != params.query_dim:
        raise T.ShapeError(
            f"widths disagree with attention params: regions D={d}, query {query.shape[1]}"
        )
    flat = T.reshape(regions, (b * n, d))
    proj_r = T.matmul(flat, params.wv)                       # (B*N, A)
    proj_q = T.repeat_rows(T.matmul(query, params.wh), n)    # (B*N, A)
    scores = T.matmul(T.tanh(T.add(proj_r, proj_q)), params.wa)
    weights = T.softmax(T.reshape(scores, (b, n)), axis=1)
    context = T.weighted_sum_rows(weights, regions)
    if params.residual_enabled:
        context = T.add(context, T.mean_along(regions, axis=1))
    return context, weights


# -- single-example entry points ------------------------------------------------


def restd1_pool(grid: RegionGrid, params: GridPoolerParams) -> tuple[Tensor, Tensor]:
    """Pool one region grid to a width-D vector per the configured mode."""
    pooled, weights = pool_cells_batch(grid.cells[None, :, :], params)
    return T.reshape(pooled, (grid.depth,)), T.reshape(weights, (grid.num_cells,))


def restd2_attend(
    region_set: RegionSet, query, params: RegionAttentionParams
) -> tuple[Tensor, Tensor]:
    """Attend over one image's region vectors with a single query state."""
    query = T.as_tensor(query)
    if query.ndim != 1:
        raise T.ShapeError(f"query must be a vector, got shape {query.shape}")
    regions = region_set.regions[None, :, :]
    context, weights = attend_regions_batch(regions, T.reshape(query, (1, query.shape[0])), params)
    return T.reshape(context, (region_set.depth,)), T.reshape(weights, (region_set.num_regions,))


def average_pool(grid: RegionGrid) -> np.ndarray:
    """Plain arithmetic mean over a grid's cells (the non-learned baseline)."""
    return grid.cells.mean(axis=0)
