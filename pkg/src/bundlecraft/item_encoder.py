"""Fused item representations from content, feedback and id features.

Each item contributes three feature rows: projected content, projected
collaborative-filtering feedback, and a learnable id embedding. Missing
feedback or id history is slot-filled from the content feature (projected
by default; a ``raw`` mode copies the raw content vector into the feedback
slot before projection, which requires matching widths). The rows pass
through L self-attention layers, key/query projections only, and are
averaged into the item vector.

Two equivalent paths exist: a per-item path operating on one 3 x d matrix
(the reference semantics, used for explanation and tests) and a batched
path that carries one N x d matrix per slot so the whole catalog is encoded
with a handful of dense products (used by the trainer and evaluator).
"""

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ConfigError, ShapeError

SLOT_CONTENT, SLOT_FEEDBACK, SLOT_ID = 0, 1, 2
N_SLOTS = 3


@dataclass(frozen=True)
class ItemFeatureBundle:
    """Raw features of one item; ``feedback`` is None when the item has no
    user-feedback history, ``id_cold`` marks items absent from training
    bundles."""

    content: np.ndarray
    feedback: np.ndarray | None
    id_index: int
    id_cold: bool = False


@dataclass
class ItemEncoderParams:
    w_c: nm.GraphNode
    w_p: nm.GraphNode
    v: nm.GraphNode
    layers: list  # [(w_k, w_q), ...]

    @property
    def d(self):
        return self.w_c.shape[1]


def init_item_params(n_items, feat_dim, cf_dim, d, n_layers, rng, dtype=np.float32):
    from .cf_pretrain import xavier_uniform

    layers = [
        (
            nm.parameter(xavier_uniform(d, d, rng), dtype),
            nm.parameter(xavier_uniform(d, d, rng), dtype),
        )
        for _ in range(n_layers)
    ]
    return ItemEncoderParams(
        w_c=nm.parameter(xavier_uniform(feat_dim, d, rng), dtype),
        w_p=nm.parameter(xavier_uniform(cf_dim, d, rng), dtype),
        v=nm.parameter(xavier_uniform(n_items, d, rng), dtype),
        layers=layers,
    )


def content_feature(t, m):
    """Average the present modalities; at least one must exist."""
    if t is None and m is None:
        raise ShapeError("item has neither text nor media feature")
    if t is None:
        return np.asarray(m)
    if m is None:
        return np.asarray(t)
    t = np.asarray(t)
    m = np.asarray(m)
    if t.shape != m.shape:
        raise ShapeError(f"modal feature shapes differ: {t.shape} vs {m.shape}")
    return (t + m) / 2


def attention_layer(h, w_k, w_q):
    """One self-attention layer: softmax((H Wk)(H Wq)^T / sqrt(d)) H.

    There is no value projection and no residual path; the softmax weights
    recombine the raw input rows directly.
    """
    d = w_k.shape[0]
    keys = nm.matmul(h, w_k)
    queries = nm.matmul(h, w_q)
    logits = nm.sdiv(nm.matmul(keys, nm.transpose(queries)), nm.attention_scale(d))
    return nm.matmul(nm.softmax_rows(logits), h)


def mean_of(nodes):
    """Mean of same-shape nodes: sequential sum, then one true division."""
    acc = nodes[0]
    for node in nodes[1:]:
        acc = nm.add(acc, node)
    return nm.sdiv(acc, len(nodes))


# ---------------------------------------------------------------------------
# per-item reference path
# ---------------------------------------------------------------------------

def build_feature_matrix(item, params, slot_fill="projected", dtype=np.float32):
    """Assemble one item's 3 x d feature matrix with slot filling."""
    c = nm.constant(item.content, dtype)
    row_c = nm.matmul(c, params.w_c)
    if item.feedback is not None:
        row_p = nm.matmul(nm.constant(item.feedback, dtype), params.w_p)
    elif slot_fill == "raw":
        if params.w_p.shape[0] != c.shape[1]:
            raise ConfigError(
                f"slot_fill=raw needs cf_dim == feature dim, have {params.w_p.shape[0]} vs {c.shape[1]}"
            )
        row_p = nm.matmul(c, params.w_p)
    else:
        row_p = row_c
    if item.id_cold:
        row_v = row_c
    else:
        row_v = nm.take_rows(params.v, [item.id_index])
    return nm.vconcat([row_c, row_p, row_v])


def encode_item_rows(item, params, slot_fill="projected", dtype=np.float32, use_attention=True):
    """L attention layers over the feature matrix; returns the 3 x d rows."""
    rows = build_feature_matrix(item, params, slot_fill, dtype)
    if use_attention:
        for w_k, w_q in params.layers:
            rows = attention_layer(rows, w_k, w_q)
    return rows


def encode_item(item, params, slot_fill="projected", dtype=np.float32, use_attention=True):
    """Fused item representation: mean of the attended feature rows (1 x d)."""
    return nm.mean_rows(encode_item_rows(item, params, slot_fill, dtype, use_attention))


# ---------------------------------------------------------------------------
# batched slot path
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ItemInputs:
    """Catalog-wide raw inputs for the batched encoder.

    ``feedback`` rows of feedback-cold items are zero and masked out;
    ``forced_fallback`` (N x 3 bool, optional) overrides individual slots
    with the projected-content fallback, which is how modality dropout is
    realized.
    """

    content: np.ndarray
    feedback: np.ndarray
    feedback_present: np.ndarray
    id_warm: np.ndarray
    forced_fallback: np.ndarray | None = None

    @property
    def n_items(self):
        return self.content.shape[0]


def build_item_inputs(catalog, features, cf, graph, warm, dtype=np.float32):
    """Derive catalog-wide encoder inputs from loaded corpus structures."""
    n = catalog.n_items
    both = features.text_present & features.media_present
    content = np.where(
        both[:, None],
        (features.text + features.media) / 2,
        np.where(features.text_present[:, None], features.text, features.media),
    ).astype(dtype)
    feedback_present = graph.item_degree > 0
    feedback = cf.item_table.astype(dtype).copy()
    feedback[~feedback_present] = 0.0
    id_warm = np.zeros(n, dtype=bool)
    id_warm[sorted(warm)] = True
    return ItemInputs(
        content=content,
        feedback=feedback,
        feedback_present=feedback_present,
        id_warm=id_warm,
    )


def _masked_mix(mask_bool, on_node, off_node, dtype):
    """Row-wise select: mask ? on : off, written as two masked products so
    gradients flow only through the selected branch."""
    m = nm.constant(mask_bool.astype(dtype).reshape(-1, 1), dtype)
    inv = nm.constant((~mask_bool).astype(dtype).reshape(-1, 1), dtype)
    return nm.add(nm.bmul_col(m, on_node), nm.bmul_col(inv, off_node))


def slot_nodes(inputs, params, slot_fill="projected", use_feedback=True, dtype=np.float32):
    """Initial per-slot N x d nodes, slot-filled and fallback-forced."""
    content = nm.constant(inputs.content, dtype)
    projected_content = nm.matmul(content, params.w_c)

    slots = [projected_content]
    if use_feedback:
        projected_feedback = nm.matmul(nm.constant(inputs.feedback, dtype), params.w_p)
        if slot_fill == "raw":
            if params.w_p.shape[0] != inputs.content.shape[1]:
                raise ConfigError(
                    "slot_fill=raw needs cf_dim == feature dim, "
                    f"have {params.w_p.shape[0]} vs {inputs.content.shape[1]}"
                )
            fill = nm.matmul(content, params.w_p)
        else:
            fill = projected_content
        slots.append(_masked_mix(inputs.feedback_present, projected_feedback, fill, dtype))
    slots.append(_masked_mix(inputs.id_warm, params.v, projected_content, dtype))

    if inputs.forced_fallback is not None:
        forced = inputs.forced_fallback
        active = [SLOT_CONTENT, SLOT_FEEDBACK, SLOT_ID] if use_feedback else [SLOT_CONTENT, SLOT_ID]
        slots = [
            _masked_mix(~forced[:, slot_id], node, projected_content, dtype)
            for node, slot_id in zip(slots, active)
        ]
    return slots


def attention_over_slots(slots, layers, d):
    """Batched form of :func:`attention_layer`: one N x d node per slot."""
    scale = nm.attention_scale(d)
    for w_k, w_q in layers:
        keys = [nm.matmul(h, w_k) for h in slots]
        queries = [nm.matmul(h, w_q) for h in slots]
        nxt = []
        for ks in keys:
            cols = [nm.sdiv(nm.rowsum(nm.mul(ks, qt)), scale) for qt in queries]
            weights = nm.softmax_rows(nm.hconcat(cols))
            nxt.append(weighted_sum_rows(weights, slots))
        slots = nxt
    return slots


def weighted_sum_rows(weights, slots):
    """Row-wise convex combination: sum_t weights[:, t] * slots[t]."""
    acc = None
    for t, h in enumerate(slots):
        term = nm.bmul_col(nm.take_col(weights, t), h)
        acc = term if acc is None else nm.add(acc, term)
    return acc


def encode_item_table(inputs, params, slot_fill="projected", use_feedback=True,
                      use_attention=True, dtype=np.float32):
    """All item representations as one N x d node."""
    slots = slot_nodes(inputs, params, slot_fill, use_feedback, dtype)
    if use_attention:
        slots = attention_over_slots(slots, params.layers, params.d)
    return mean_of(slots)
