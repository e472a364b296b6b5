"""Planted-structure synthetic corpora.

Items belong to latent topics; bundles draw their members from a single
topic through a popularity-skewed (Zipf-like) distribution, with a small
cross-topic noise rate; users prefer one or two topics and interact with
their items at a configurable density; content features are the topic
centroid plus unit Gaussian noise, with a fraction of modality rows
flagged absent (never both modalities of one item).

Cold items are excluded from every bundle that the downstream 8:1:1 split
will place in training. The generator simulates that split with the same
seed and split function the trainer uses, so the plant holds exactly when
the training config uses the generator's seed (the manifest records it);
with a different training seed the corpus still loads and trains, only the
set of bundle-cold items shifts. Held-out bundles draw their members from
the items the training bundles actually cover, so nothing is cold by
accident; each simulated-test bundle additionally hosts a planted
same-topic cold item with probability 1/2.

A topic-oracle self-check (score 1 for items of the seed-majority topic,
index tie-break) runs on the simulated test bundles and its Recall@20 is
recorded in the manifest.

Same seed, byte-identical files.
"""

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .corpus import split_indices, write_features
from .errors import SynthSpecError
from .evaluation import rank_candidates, recall_at_k

COLD_PLANT_RATE = 0.5


@dataclass(frozen=True)
class SynthSpec:
    n_items: int = 2000
    n_users: int = 500
    n_bundles: int = 400
    n_topics: int = 8
    feature_dim: int = 64
    bundle_size_min: int = 4
    bundle_size_max: int = 8
    feedback_density: float = 0.02
    cold_item_fraction: float = 0.1
    modality_missing_fraction: float = 0.1
    feature_noise: float = 1.0
    popularity_skew: float = 1.2
    cross_topic_noise: float = 0.05
    seed: int = 0

    def validate(self):
        if self.n_topics < 1 or self.n_topics > self.n_items:
            raise SynthSpecError(f"n_topics must lie in [1, n_items], got {self.n_topics}")
        for name in ("feedback_density", "cold_item_fraction", "modality_missing_fraction", "cross_topic_noise"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SynthSpecError(f"{name} must lie in [0, 1], got {v}")
        if self.feature_noise < 0:
            raise SynthSpecError(f"feature_noise must be nonnegative, got {self.feature_noise}")
        if self.bundle_size_min < 2 or self.bundle_size_max < self.bundle_size_min:
            raise SynthSpecError(
                f"bundle sizes must satisfy 2 <= min <= max, got {self.bundle_size_min}..{self.bundle_size_max}"
            )
        if self.n_bundles < 10:
            raise SynthSpecError(f"need at least 10 bundles, got {self.n_bundles}")
        if self.n_items < 1 or self.n_users < 1:
            raise SynthSpecError("n_items and n_users must be positive")
        # train bundles draw from the non-cold members of one topic
        per_topic = self.n_items // self.n_topics
        n_cold = int(self.cold_item_fraction * self.n_items)
        if self.bundle_size_max > per_topic - (n_cold // self.n_topics + 1):
            raise SynthSpecError(
                f"bundle_size_max {self.bundle_size_max} exceeds the warm population of a topic"
            )


def spec_from_dict(data):
    known = {f for f in SynthSpec.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise SynthSpecError(f"unknown spec keys: {sorted(unknown)}")
    spec = SynthSpec(**data)
    spec.validate()
    return spec


def _zipf_weights(n, skew):
    ranks = np.arange(1, n + 1, dtype=np.float64)
    w = ranks ** (-skew)
    return w / w.sum()


def _draw_members(pool, size, skew, rng):
    """Weighted draw without replacement; pool is sorted by global index."""
    weights = _zipf_weights(len(pool), skew)
    picked = rng.choice(len(pool), size=size, replace=False, p=weights)
    return [pool[int(k)] for k in picked]


def generate(spec, out_dir):
    """Write the six corpus files and return the manifest dict."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    os.makedirs(out_dir, exist_ok=True)

    n, t = spec.n_items, spec.n_topics
    topic_of = np.arange(n) % t  # interleaved: global index order = within-topic rank
    topic_members = [sorted(np.flatnonzero(topic_of == k).tolist()) for k in range(t)]

    n_cold = int(spec.cold_item_fraction * n)
    cold = set(int(x) for x in rng.choice(n, size=n_cold, replace=False)) if n_cold else set()

    train_idx, val_idx, test_idx = split_indices(spec.n_bundles, spec.seed)
    train_set, test_set = set(train_idx), set(test_idx)

    bundle_topics = [int(rng.integers(0, t)) for _ in range(spec.n_bundles)]
    bundle_sizes = [
        int(rng.integers(spec.bundle_size_min, spec.bundle_size_max + 1))
        for _ in range(spec.n_bundles)
    ]

    # training bundles first: they define which items count as warm
    bundles = [None] * spec.n_bundles
    planted_cold = [None] * spec.n_bundles
    for b in train_idx:
        topic = bundle_topics[b]
        pool = [i for i in topic_members[topic] if i not in cold]
        size = min(bundle_sizes[b], len(pool))
        if size < spec.bundle_size_min:
            raise SynthSpecError(f"topic {topic} has too few warm items for a bundle")
        members = _draw_members(pool, size, spec.popularity_skew, rng)
        noise_pool = [i for i in range(n) if topic_of[i] != topic and i not in cold]
        for pos in range(len(members)):
            if rng.random() < spec.cross_topic_noise and len(noise_pool) > len(members):
                while True:
                    other = noise_pool[int(rng.integers(0, len(noise_pool)))]
                    if other in members:
                        continue
                    members[pos] = other
                    break
        bundles[b] = sorted(set(members))

    warm = set()
    for b in train_idx:
        warm |= set(bundles[b])

    # held-out bundles draw from the warm pool so nothing is cold by accident;
    # test bundles additionally host a planted same-topic cold item
    for b in sorted(set(range(spec.n_bundles)) - train_set):
        topic = bundle_topics[b]
        pool = [i for i in topic_members[topic] if i in warm]
        if len(pool) < spec.bundle_size_min:
            raise SynthSpecError(f"topic {topic} has too few warm items for held-out bundles")
        size = min(bundle_sizes[b], len(pool))
        members = _draw_members(pool, size, spec.popularity_skew, rng)
        warm_other = [i for i in sorted(warm) if topic_of[i] != topic]
        for pos in range(len(members)):
            if rng.random() < spec.cross_topic_noise and len(warm_other) > len(members):
                while True:
                    other = warm_other[int(rng.integers(0, len(warm_other)))]
                    if other in members:
                        continue
                    members[pos] = other
                    break
        planted = None
        if b in test_set and cold:
            topic_cold = [i for i in topic_members[topic] if i in cold and i not in members]
            if topic_cold and rng.random() < COLD_PLANT_RATE:
                planted = topic_cold[int(rng.integers(0, len(topic_cold)))]
                members[int(rng.integers(0, len(members)))] = planted
        bundles[b] = sorted(set(members))
        if len(bundles[b]) < 2:
            raise SynthSpecError("degenerate bundle after noise injection")
        planted_cold[b] = planted

    # users prefer 1-2 topics and interact at feedback_density
    user_topics = []
    edges = []
    for u in range(spec.n_users):
        k = int(rng.integers(1, 3))
        prefs = sorted(int(x) for x in rng.choice(t, size=min(k, t), replace=False))
        user_topics.append(prefs)
        for topic in prefs:
            for i in topic_members[topic]:
                if rng.random() < spec.feedback_density:
                    edges.append((u, i))

    centroids = rng.normal(size=(t, spec.feature_dim))
    sigma = spec.feature_noise
    text = (centroids[topic_of] + sigma * rng.normal(size=(n, spec.feature_dim))).astype(np.float32)
    media = (centroids[topic_of] + sigma * rng.normal(size=(n, spec.feature_dim))).astype(np.float32)
    miss_text = rng.random(n) < spec.modality_missing_fraction
    miss_media = rng.random(n) < spec.modality_missing_fraction
    miss_media &= ~miss_text  # content must exist: never drop both
    text_present = ~miss_text
    media_present = ~miss_media

    item_tokens = [f"i{i:05d}" for i in range(n)]
    user_tokens = [f"u{u:05d}" for u in range(spec.n_users)]
    bundle_tokens = [f"b{b:05d}" for b in range(spec.n_bundles)]

    with open(os.path.join(out_dir, "item_index.tsv"), "w", encoding="utf-8") as fh:
        for i, tok in enumerate(item_tokens):
            fh.write(f"{tok}\t{i}\n")
    with open(os.path.join(out_dir, "affiliations.tsv"), "w", encoding="utf-8") as fh:
        for b, members in enumerate(bundles):
            for i in members:
                fh.write(f"{bundle_tokens[b]}\t{item_tokens[i]}\n")
    with open(os.path.join(out_dir, "interactions.tsv"), "w", encoding="utf-8") as fh:
        for u, i in edges:
            fh.write(f"{user_tokens[u]}\t{item_tokens[i]}\n")
    write_features(os.path.join(out_dir, "features_text.bin"), text, text_present)
    write_features(os.path.join(out_dir, "features_media.bin"), media, media_present)

    oracle = _oracle_self_check(bundles, topic_of, test_idx, rng)

    manifest = {
        "spec": asdict(spec),
        "counts": {
            "users": spec.n_users,
            "items": n,
            "bundles": spec.n_bundles,
            "bundle_items": sum(len(b) for b in bundles),
            "interactions": len(edges),
        },
        "topic_of_item": topic_of.tolist(),
        "bundle_topic": bundle_topics,
        "cold_items": sorted(cold),
        "planted_cold": planted_cold,
        "user_topics": user_topics,
        "simulated_split": {"train": train_idx, "val": val_idx, "test": test_idx},
        "oracle_recall_at_20": oracle,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def topic_oracle_scores(seed_items, topic_of, n_items):
    """1 for items of the seed-majority topic, 0 otherwise."""
    topics = [int(topic_of[i]) for i in sorted(seed_items)]
    counts = np.bincount(topics)
    majority = int(np.argmax(counts))  # lowest topic wins ties
    return (np.asarray(topic_of) == majority).astype(np.float64)


def _oracle_self_check(bundles, topic_of, test_idx, rng, k=20):
    recalls = []
    n = len(topic_of)
    for b in test_idx:
        members = bundles[b]
        n_seed = max(1, len(members) // 2)
        order = rng.permutation(len(members))
        seeds = {members[int(j)] for j in order[:n_seed]}
        targets = {members[int(j)] for j in order[n_seed:]}
        if not targets:
            continue
        scores = topic_oracle_scores(seeds, topic_of, n)
        ranked = rank_candidates(scores, seeds, k)
        recalls.append(recall_at_k(ranked, targets, k))
    return float(np.mean(recalls)) if recalls else 0.0
