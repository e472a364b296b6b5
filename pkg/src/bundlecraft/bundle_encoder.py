"""Partial-bundle representation from its members' item vectors.

Structurally identical to the feature-level encoder: Z self-attention
layers (distinct weights) over the stacked item rows, then a row mean.
The result is a set function: permuting the input rows permutes the
attended rows identically and the mean forgets the order.
"""

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ShapeError
from .item_encoder import attention_layer


@dataclass
class BundleEncoderParams:
    layers: list  # [(w_k, w_q), ...]


def init_bundle_params(d, n_layers, rng, dtype=np.float32):
    from .cf_pretrain import xavier_uniform

    layers = [
        (
            nm.parameter(xavier_uniform(d, d, rng), dtype),
            nm.parameter(xavier_uniform(d, d, rng), dtype),
        )
        for _ in range(n_layers)
    ]
    return BundleEncoderParams(layers=layers)


def encode_bundle_rows(item_rows, params, use_attention=True):
    """Attended n x d rows of the bundle's items (pre-mean, for explanation)."""
    if item_rows.shape[0] < 1:
        raise ShapeError("cannot encode an empty bundle")
    rows = item_rows
    if use_attention:
        for w_k, w_q in params.layers:
            rows = attention_layer(rows, w_k, w_q)
    return rows


def encode_bundle(item_rows, params, use_attention=True):
    """Bundle representation: mean of the attended item rows (1 x d)."""
    return nm.mean_rows(encode_bundle_rows(item_rows, params, use_attention))
