"""Ranking metrics, evaluation protocols and the similarity explainer.

Metrics use binary relevance. Seeds that the encoder actually saw
(post-corruption, for the sparsify/noisify settings) are excluded from the
candidate pool: the task is completion, not re-retrieval. The warm setting
keeps only test bundles whose seeds and targets consist entirely of items
seen in at least one training bundle.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .bundle_encoder import encode_bundle, encode_bundle_rows
from .corpus import corrupt_partial
from .errors import IntegrityError
from .item_encoder import attention_over_slots, mean_of, slot_nodes

SETTINGS = ("standard", "warm", "sparsify", "noisify")


def rank_candidates(scores, excluded, k):
    """Top-k item indices by descending score, ties broken by ascending index."""
    if k < 1:
        raise IntegrityError(f"k must be >= 1, got {k}")
    scores = np.asarray(scores).reshape(-1)
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    out = []
    for idx in order:
        if int(idx) in excluded:
            continue
        out.append(int(idx))
        if len(out) == k:
            break
    return out


def recall_at_k(ranked, targets, k):
    if not targets:
        raise IntegrityError("recall_at_k: empty target set")
    hits = sum(1 for i in ranked[:k] if i in targets)
    return hits / len(targets)


def ndcg_at_k(ranked, targets, k):
    """Binary-relevance NDCG with the ideal DCG truncated at min(k, |targets|)."""
    if not targets:
        raise IntegrityError("ndcg_at_k: empty target set")
    dcg = 0.0
    for pos, item in enumerate(ranked[:k], start=1):
        if item in targets:
            dcg += 1.0 / math.log2(pos + 1)
    ideal = sum(1.0 / math.log2(p + 1) for p in range(1, min(k, len(targets)) + 1))
    return dcg / ideal


@dataclass
class EvalReport:
    setting: str
    k: int
    recall: float | None
    ndcg: float | None
    n_bundles: int
    per_bundle: list = field(default_factory=list)

    @property
    def empty(self):
        return self.n_bundles == 0

    def to_json(self):
        return json.dumps(
            {
                "setting": self.setting,
                "k": self.k,
                "recall": self.recall,
                "ndcg": self.ndcg,
                "n_bundles": self.n_bundles,
                "per_bundle": self.per_bundle,
            },
            indent=2,
            sort_keys=True,
        )


def evaluate(scorer, views, k, setting="standard", rate=0.0, rng=None, n_items=None,
             warm=None, threads=1):
    """Score every view with ``scorer(sorted_seed_indices) -> N scores``.

    ``setting`` selects the protocol; sparsify/noisify corrupt the seed set
    first (``rng`` and ``n_items`` required), warm filters views through the
    ``warm`` item set. An exhausted warm filter yields an explicit empty
    report rather than an error.
    """
    tag = setting if setting in ("standard", "warm") else f"{setting}({rate})"
    if setting == "warm":
        if warm is None:
            raise IntegrityError("warm setting needs the warm item set")
        views = [v for v in views if (v.seeds | v.targets) <= warm]
    elif setting in ("sparsify", "noisify"):
        if rng is None or n_items is None:
            raise IntegrityError(f"{setting} needs rng and n_items")
        views = [corrupt_partial(v, setting, rate, rng, n_items) for v in views]
    elif setting != "standard":
        raise IntegrityError(f"unknown evaluation setting {setting!r}")

    if not views:
        return EvalReport(setting=tag, k=k, recall=None, ndcg=None, n_bundles=0)

    def one(view):
        seeds = sorted(view.seeds)
        scores = scorer(seeds)
        ranked = rank_candidates(scores, view.seeds, k)
        hits = [i for i in ranked if i in view.targets]
        return {
            "bundle": view.bundle_index,
            "seeds": seeds,
            "targets": sorted(view.targets),
            "hits": hits,
            "recall": recall_at_k(ranked, view.targets, k),
            "ndcg": ndcg_at_k(ranked, view.targets, k),
        }

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, views))
    else:
        records = [one(v) for v in views]
    records.sort(key=lambda r: r["bundle"])
    recall = sum(r["recall"] for r in records) / len(records)
    ndcg = sum(r["ndcg"] for r in records) / len(records)
    return EvalReport(
        setting=tag, k=k, recall=recall, ndcg=ndcg, n_bundles=len(records), per_bundle=records
    )


# ---------------------------------------------------------------------------
# model-backed scorer and explainer
# ---------------------------------------------------------------------------

def item_table_values(model, inputs):
    """Encode the whole catalog once, forward only; returns an N x d array."""
    from .item_encoder import encode_item_table

    cfg = model.config
    node = encode_item_table(
        inputs,
        model.item_params,
        slot_fill=cfg.slot_fill,
        use_feedback=cfg.ablation.use_feedback,
        use_attention=cfg.ablation.use_item_attention,
        dtype=nm.DTYPES[cfg.precision],
    )
    return node.value


def make_scorer(model, inputs):
    """Closure scoring all catalog items for a seed set (read-only, thread-safe)."""
    cfg = model.config
    dtype = nm.DTYPES[cfg.precision]
    table = item_table_values(model, inputs)
    table_t = np.ascontiguousarray(table.T)

    def scorer(seed_idx):
        rows = nm.constant(table[np.asarray(seed_idx, dtype=np.int64)], dtype)
        e = encode_bundle(rows, model.bundle_params, use_attention=cfg.ablation.use_bundle_attention)
        return (e.value @ table_t)[0]

    return scorer


def _np_cosine(a, b):
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise IntegrityError("cosine of a zero vector is undefined")
    return float(np.dot(a, b) / (na * nb))


def explain(model, inputs, bundle_items, bundle_index=-1):
    """Similarity table for one bundle.

    Per item: cosine between each last-layer feature row and the fused item
    vector. Per bundle: cosine between each last-layer item row and the
    bundle vector. Emits 3n + n rows for an n-item bundle.
    """
    cfg = model.config
    dtype = nm.DTYPES[cfg.precision]
    items = sorted(bundle_items)

    slots = slot_nodes(
        inputs,
        model.item_params,
        slot_fill=cfg.slot_fill,
        use_feedback=cfg.ablation.use_feedback,
        dtype=dtype,
    )
    if cfg.ablation.use_item_attention:
        slots = attention_over_slots(slots, model.item_params.layers, model.item_params.d)
    table = mean_of(slots).value
    slot_values = [s.value for s in slots]

    feature_rows = []
    for i in items:
        for s, sv in enumerate(slot_values):
            feature_rows.append(
                {"item": i, "slot": s, "cosine": _np_cosine(sv[i], table[i])}
            )

    rows_node = nm.constant(table[np.asarray(items, dtype=np.int64)], dtype)
    attended = encode_bundle_rows(
        rows_node, model.bundle_params, use_attention=cfg.ablation.use_bundle_attention
    )
    e = attended.value.mean(axis=0)
    bundle_rows = [
        {"item": i, "cosine": _np_cosine(attended.value[j], e)} for j, i in enumerate(items)
    ]
    return {"bundle": bundle_index, "features": feature_rows, "items": bundle_rows}
