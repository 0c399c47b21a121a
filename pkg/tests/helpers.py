"""Shared builders for decoder/training tests: tiny random models and records."""

import numpy as np

from rescap.decoder import ModelDims, VariantFlags, init_model, make_variant
from rescap.features import FeatureRecord, RegionGrid
from rescap.rng import derive_seed, normal_array
from rescap.vocab import RESERVED_TOKENS, Vocabulary


def rand(seed, *shape):
    return normal_array(seed, int(np.prod(shape))).reshape(shape)


TINY = ModelDims(vocab_size=9, feat_dim=6, embed_dim=5, hidden1=7, hidden2=6,
                 attn_dim=7, pool_hidden=4)


def tiny_vocab(n_content=5):
    return Vocabulary(list(RESERVED_TOKENS) + [f"w{i}" for i in range(n_content)])


def tiny_model(seed=0, variant="BU+ResTd", dims=TINY):
    return init_model(dims, make_variant(variant), seed=seed)


def tiny_record(seed, dims=TINY, n_regions=3, n1=2, n2=2):
    grids = []
    for i in range(n_regions):
        cells = rand(derive_seed(seed, 7, i), n1 * n2, dims.feat_dim)
        grids.append(RegionGrid(cells, n1, n2))
    gfeat = rand(derive_seed(seed, 8), dims.feat_dim)
    return FeatureRecord(image_id=f"img{seed}", grids=grids, global_feat=gfeat)
