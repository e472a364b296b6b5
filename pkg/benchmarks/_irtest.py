"""IR-invariance hypothesis: corpora with noticeable cross-topic noise in
bundles should reward replacement-trained bundle encoders at the standard
setting."""
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


def zipf(n, s):
    w = np.arange(1, n + 1, dtype=np.float64) ** (-s)
    return w / w.sum()


def build(seed, feedback_density, cold_frac, cross_noise, plant_k=1.0, out=None):
    rng = np.random.default_rng(seed)
    topic_of = np.arange(N_ITEMS) % N_TOPICS
    members = [np.flatnonzero(topic_of == k).tolist() for k in range(N_TOPICS)]
    cold = set(int(x) for x in rng.choice(N_ITEMS, size=int(cold_frac * N_ITEMS), replace=False))
    train_idx, val_idx, test_idx = split_indices(N_BUNDLES, seed)
    train_set, test_set = set(train_idx), set(test_idx)
    topics = [int(rng.integers(0, N_TOPICS)) for _ in range(N_BUNDLES)]
    sizes = [int(rng.integers(4, 9)) for _ in range(N_BUNDLES)]
    bundles = [None] * N_BUNDLES

    def draw(pool, size):
        w = zipf(len(pool), 1.2)
        picked = rng.choice(len(pool), size=size, replace=False, p=w)
        return [pool[int(k)] for k in picked]

    def add_noise(ms, topic, candidates):
        for pos in range(len(ms)):
            if rng.random() < cross_noise and len(candidates) > len(ms):
                while True:
                    other = candidates[int(rng.integers(0, len(candidates)))]
                    if other not in ms:
                        ms[pos] = other
                        break
        return ms

    for b in train_idx:
        pool = [i for i in members[topics[b]] if i not in cold]
        ms = draw(pool, min(sizes[b], len(pool)))
        noise_pool = [i for i in range(N_ITEMS) if topic_of[i] != topics[b] and i not in cold]
        bundles[b] = sorted(set(add_noise(ms, topics[b], noise_pool)))
    warm = set()
    for b in train_idx:
        warm |= set(bundles[b])
    plant_p = min(1.0, plant_k * cold_frac)
    for b in sorted(set(range(N_BUNDLES)) - train_set):
        pool = [i for i in members[topics[b]] if i in warm]
        ms = draw(pool, min(sizes[b], len(pool)))
        noise_pool = [i for i in sorted(warm) if topic_of[i] != topics[b]]
        ms = add_noise(ms, topics[b], noise_pool)
        if b in test_set and cold:
            tc = [i for i in members[topics[b]] if i in cold]
            for pos in range(len(ms)):
                if tc and rng.random() < plant_p:
                    cand = tc[int(rng.integers(0, len(tc)))]
                    if cand not in ms:
                        ms[pos] = cand
        bundles[b] = sorted(set(ms))
    user_topics = [
        sorted(int(x) for x in rng.choice(N_TOPICS, size=int(rng.integers(1, 3)), replace=False))
        for _ in range(N_USERS)
    ]
    edges = []
    for u, prefs in enumerate(user_topics):
        for t in prefs:
            for i in members[t]:
                if rng.random() < feedback_density:
                    edges.append((u, i))
    cent = rng.normal(size=(N_TOPICS, 64))
    text = (cent[topic_of] + rng.normal(size=(N_ITEMS, 64))).astype(np.float32)
    media = (cent[topic_of] + rng.normal(size=(N_ITEMS, 64))).astype(np.float32)
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
    return out


def run(seed, overrides, data, epochs=150):
    catalog, features, graph = C.load_dir(data)
    cf = pretrain(graph, d=32, k_layers=2, epochs=10, lr=0.05, neg_samples=1,
                  rng=np.random.default_rng(seed))
    cfgd = copy.deepcopy(DEFAULTS)
    cfgd["seed"] = seed
    cfgd["model"]["d"] = 32
    cfgd["train"].update({"epochs": epochs, "batch_size": 64, "patience": epochs, "lr": 1e-2})
    for k, v in overrides.items():
        s, kk = k.split(".")
        cfgd[s][kk] = v
    tc = train_config(cfgd)
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
    return rep, rep5


if __name__ == "__main__":
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    data = build(seed, feedback_density=0.01, cold_frac=0.2, cross_noise=0.12)
    noCL = {"ablation.use_item_cl": False, "ablation.use_bundle_cl": False}
    grid = {
        "noCL": noCL,
        "IR only a2=.05 t2": {"train.alpha1": 0.0, "train.alpha2": 0.05, "augment.tau": 2.0,
                              "augment.bundle_mode": "IR", "augment.dropout_ratio": 0.5},
        "IR only a2=.1 t5": {"train.alpha1": 0.0, "train.alpha2": 0.1, "augment.tau": 5.0,
                             "augment.bundle_mode": "IR", "augment.dropout_ratio": 0.5},
        "MD+IR a=.05 t5": {"train.alpha1": 0.05, "train.alpha2": 0.05, "augment.tau": 5.0,
                           "augment.bundle_mode": "IR", "augment.dropout_ratio": 0.5},
    }
    for name, ov in grid.items():
        t0 = time.time()
        rep, rep5 = run(seed, ov, data)
        print(f"seed{seed} {name:20s} std ndcg={rep.ndcg:.4f} recall={rep.recall:.4f} | "
              f"sparse.5 ndcg={rep5.ndcg:.4f} t={time.time()-t0:.0f}s", flush=True)
