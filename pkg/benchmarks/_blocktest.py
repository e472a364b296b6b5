"""Hypothesis test: block-structured bundles (fine co-occurrence structure on
top of coarse topics) should make contrastive terms useful. Builds a corpus
directly as arrays, bypassing the generator."""
import copy
import sys
import tempfile
import time

import numpy as np

from bundlecraft import corpus as C
from bundlecraft.cf_pretrain import pretrain
from bundlecraft.config import DEFAULTS, train_config
from bundlecraft.corpus import sample_partial, split_indices, warm_items, write_features
from bundlecraft.evaluation import evaluate, make_scorer
from bundlecraft.item_encoder import build_item_inputs
from bundlecraft.trainer import fit

N_ITEMS, N_USERS, N_BUNDLES, N_TOPICS = 2000, 500, 400, 8
BLOCK = 10
IN_BLOCK = 0.55
SKEW_BLOCK = 1.5
SKEW_ITEM = 1.2


def zipf(n, s):
    w = np.arange(1, n + 1, dtype=np.float64) ** (-s)
    return w / w.sum()


def build(seed, feedback_density=0.02, cold_frac=0.1, feature_noise=1.0, out=None):
    rng = np.random.default_rng(seed)
    topic_of = np.arange(N_ITEMS) % N_TOPICS
    members = [np.flatnonzero(topic_of == k) for k in range(N_TOPICS)]
    per_topic = N_ITEMS // N_TOPICS
    n_blocks = per_topic // BLOCK  # block b of topic t: within-topic ranks [bB, (b+1)B)

    cold = set(int(x) for x in rng.choice(N_ITEMS, size=int(cold_frac * N_ITEMS), replace=False))
    train_idx, val_idx, test_idx = split_indices(N_BUNDLES, seed)
    train_set = set(train_idx)

    topics = [int(rng.integers(0, N_TOPICS)) for _ in range(N_BUNDLES)]
    sizes = [int(rng.integers(4, 9)) for _ in range(N_BUNDLES)]

    def draw_bundle(topic, size, pool_filter, rng):
        pool = [i for i in members[topic] if pool_filter(int(i))]
        ranks = {it: r for r, it in enumerate(pool)}
        blocks = max(1, len(pool) // BLOCK)
        bw = zipf(blocks, SKEW_BLOCK)
        blk = int(rng.choice(blocks, p=bw))
        blk_pool = pool[blk * BLOCK : (blk + 1) * BLOCK]
        topic_w = zipf(len(pool), SKEW_ITEM)
        chosen = []
        tries = 0
        while len(chosen) < size and tries < 500:
            tries += 1
            if rng.random() < IN_BLOCK and blk_pool:
                cand = int(blk_pool[int(rng.integers(0, len(blk_pool)))])
            else:
                cand = int(rng.choice(len(pool), p=topic_w))
                cand = int(pool[cand])
            if cand not in chosen:
                chosen.append(cand)
        return chosen

    bundles = [None] * N_BUNDLES
    for b in train_idx:
        bundles[b] = sorted(draw_bundle(topics[b], sizes[b], lambda i: i not in cold, rng))
    warm = set()
    for b in train_idx:
        warm |= set(bundles[b])
    for b in sorted(set(range(N_BUNDLES)) - train_set):
        bundles[b] = sorted(draw_bundle(topics[b], sizes[b], lambda i: i in warm, rng))
        # plant one same-topic cold item per test bundle half the time
        if b in set(test_idx) and cold and rng.random() < 0.5:
            tc = [i for i in members[topics[b]] if int(i) in cold and int(i) not in bundles[b]]
            if tc:
                bundles[b][int(rng.integers(0, len(bundles[b])))] = int(tc[int(rng.integers(0, len(tc)))])
                bundles[b] = sorted(set(bundles[b]))

    user_topics = [sorted(int(x) for x in rng.choice(N_TOPICS, size=int(rng.integers(1, 3)), replace=False)) for _ in range(N_USERS)]
    edges = []
    for u, prefs in enumerate(user_topics):
        for topic in prefs:
            for i in members[topic]:
                if rng.random() < feedback_density:
                    edges.append((u, int(i)))

    centroids = rng.normal(size=(N_TOPICS, 64))
    text = (centroids[topic_of] + feature_noise * rng.normal(size=(N_ITEMS, 64))).astype(np.float32)
    media = (centroids[topic_of] + feature_noise * rng.normal(size=(N_ITEMS, 64))).astype(np.float32)
    tp = rng.random(N_ITEMS) >= 0.1
    mp = rng.random(N_ITEMS) >= 0.1
    mp |= ~tp

    out = out or tempfile.mkdtemp()
    with open(out + "/item_index.tsv", "w") as fh:
        for i in range(N_ITEMS):
            fh.write(f"i{i:05d}\t{i}\n")
    with open(out + "/affiliations.tsv", "w") as fh:
        for b, ms in enumerate(bundles):
            for i in ms:
                fh.write(f"b{b:05d}\ti{i:05d}\n")
    with open(out + "/interactions.tsv", "w") as fh:
        for u, i in edges:
            fh.write(f"u{u:05d}\ti{i:05d}\n")
    write_features(out + "/features_text.bin", text, tp)
    write_features(out + "/features_media.bin", media, mp)

    # topic-oracle recall on test bundles
    from bundlecraft.evaluation import rank_candidates, recall_at_k
    recs = []
    for b in test_idx:
        ms = bundles[b]
        ns = max(1, len(ms) // 2)
        order = rng.permutation(len(ms))
        seeds = {ms[int(j)] for j in order[:ns]}
        targets = {ms[int(j)] for j in order[ns:]}
        if not targets:
            continue
        tps = [int(topic_of[i]) for i in sorted(seeds)]
        maj = int(np.argmax(np.bincount(tps)))
        scores = (topic_of == maj).astype(np.float64)
        recs.append(recall_at_k(rank_candidates(scores, seeds, 20), targets, 20))
    return out, float(np.mean(recs))


def run(seed, overrides, data, d=32, epochs=150, lr=1e-2, batch=64):
    catalog, features, graph = C.load_dir(data)
    cf = pretrain(graph, d=32, k_layers=2, epochs=10, lr=0.05, neg_samples=1,
                  rng=np.random.default_rng(seed))
    cfgd = copy.deepcopy(DEFAULTS)
    cfgd["seed"] = seed
    cfgd["model"]["d"] = d
    cfgd["train"].update({"epochs": epochs, "batch_size": batch, "patience": epochs, "lr": lr})
    for k, v in overrides.items():
        s, kk = k.split(".")
        cfgd[s][kk] = v
    tc = train_config(cfgd)
    t0 = time.time()
    res = fit(catalog, features, graph, cf, tc)
    warm = warm_items(catalog, res.split[0])
    inputs = build_item_inputs(catalog, features, cf, graph, warm, np.float32)
    rngv = np.random.default_rng(123)
    views = [sample_partial(catalog.bundles[b], 0.5, rngv, bundle_index=b) for b in res.split[2]]
    sc = make_scorer(res.model, inputs)
    rep = evaluate(sc, views, k=20, warm=warm)
    rngc = np.random.default_rng(77)
    rep5 = evaluate(sc, views, k=20, setting="sparsify", rate=0.5, rng=rngc,
                    n_items=catalog.n_items, warm=warm)
    return rep.recall, rep.ndcg, rep5.ndcg, time.time() - t0


if __name__ == "__main__":
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    data, oracle = build(seed)
    print(f"block corpus seed{seed}: topic-oracle recall@20 = {oracle:.3f}", flush=True)
    noCL = {"ablation.use_item_cl": False, "ablation.use_bundle_cl": False}
    cands = {
        "noCL": noCL,
        "MD.5 a.1 t5": {"train.alpha1": 0.1, "train.alpha2": 0.1, "augment.tau": 5.0,
                        "augment.dropout_ratio": 0.5},
        "MD.5 a.05 t2": {"train.alpha1": 0.05, "train.alpha2": 0.05, "augment.tau": 2.0,
                         "augment.dropout_ratio": 0.5},
    }
    for name, ov in cands.items():
        r, nd, nd5, dt = run(seed, ov, data)
        print(f"seed{seed} {name:14s} std recall={r:.4f} ndcg={nd:.4f} sparse.5 ndcg={nd5:.4f} t={dt:.0f}s", flush=True)
