"""Containers for region features as they come off the detection side.

A ``FeatureRecord`` is one image's worth of raw material: N region
feature grids plus the globally average-pooled image vector. Grids stay
plain numpy; they only enter the autodiff graph once a pooler turns them
into region vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RegionGrid:
    """One region's n1 x n2 feature map, flattened to (n1*n2, D) cells."""

    cells: np.ndarray
    n1: int
    n2: int

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.float64)
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError(f"grid dims must be positive, got {self.n1}x{self.n2}")
        if self.cells.ndim != 2 or self.cells.shape[0] != self.n1 * self.n2:
            raise ValueError(
                f"cells must be ({self.n1 * self.n2}, D), got {self.cells.shape}"
            )
        if not np.all(np.isfinite(self.cells)):
            raise ValueError("grid cells must be finite")

    @classmethod
    def from_map(cls, feature_map: np.ndarray) -> "RegionGrid":
        """Build from an (n1, n2, D) map, cells ordered row-major."""
        m = np.asarray(feature_map, dtype=np.float64)
        if m.ndim != 3:
            raise ValueError(f"expected (n1, n2, D) map, got {m.shape}")
        n1, n2, d = m.shape
        return cls(m.reshape(n1 * n2, d), n1, n2)

    @property
    def depth(self) -> int:
        return self.cells.shape[1]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]


@dataclass
class FeatureRecord:
    """All bottom-up material for one image: N grids plus the global vector."""

    image_id: str
    grids: list[RegionGrid]
    global_feat: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.grids:
            raise ValueError("a record needs at least one region grid")
        self.global_feat = np.asarray(self.global_feat, dtype=np.float64)
        d = self.grids[0].depth
        n1, n2 = self.grids[0].n1, self.grids[0].n2
        for g in self.grids:
            if g.depth != d or (g.n1, g.n2) != (n1, n2):
                raise ValueError("all grids in a record must share n1, n2 and D")
        if self.global_feat.shape != (d,):
            raise ValueError(
                f"global feature width {self.global_feat.shape} does not match D={d}"
            )
        if not np.all(np.isfinite(self.global_feat)):
            raise ValueError("global feature must be finite")

    @property
    def num_regions(self) -> int:
        return len(self.grids)

    @property
    def depth(self) -> int:
        return self.grids[0].depth

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.grids[0].n1, self.grids[0].n2

    def cell_stack(self) -> np.ndarray:
        """(N, M, D) array of all region cells."""
        return np.stack([g.cells for g in self.grids], axis=0)
