"""Eval-seed-ratio 0.3 variant of the paired sweep."""
import copy
import sys

import numpy as np

import importlib.util
spec = importlib.util.spec_from_file_location("_sweep", "benchmarks/_sweep.py")
S = importlib.util.module_from_spec(spec)
spec.loader.exec_module(S)

from bundlecraft import corpus as C
from bundlecraft.cf_pretrain import pretrain
from bundlecraft.config import DEFAULTS, train_config
from bundlecraft.corpus import sample_partial, warm_items
from bundlecraft.evaluation import evaluate, make_scorer
from bundlecraft.item_encoder import build_item_inputs
from bundlecraft.trainer import fit


def run_arm2(seed, overrides, paths, epochs=120, eval_ratio=0.3):
    catalog, features, graph = C.load_dir(paths)
    cf = pretrain(graph, d=32, k_layers=2, epochs=10, lr=0.05, neg_samples=1,
                  rng=np.random.default_rng(seed))
    cfgd = copy.deepcopy(DEFAULTS)
    cfgd["seed"] = seed
    cfgd["model"]["d"] = 32
    cfgd["data"]["eval_seed_ratio"] = eval_ratio
    cfgd["train"].update({"epochs": epochs, "batch_size": 64, "patience": epochs, "lr": 1e-2})
    for k, v in overrides.items():
        s, kk = k.split(".")
        cfgd[s][kk] = v
    tc = train_config(cfgd)
    res = fit(catalog, features, graph, cf, tc)
    warm = warm_items(catalog, res.split[0])
    inputs = build_item_inputs(catalog, features, cf, graph, warm, np.float32)
    sc = make_scorer(res.model, inputs)
    rngv = np.random.default_rng(123 + seed)
    out = {"std": [], "s5": [], "warm": []}
    for _ in range(3):
        views = [sample_partial(catalog.bundles[b], eval_ratio, rngv, bundle_index=b)
                 for b in res.split[2]]
        out["std"].append(evaluate(sc, views, k=20, warm=warm).ndcg)
        out["s5"].append(evaluate(sc, views, k=20, setting="sparsify", rate=0.5, rng=rngv,
                                  n_items=catalog.n_items, warm=warm).ndcg)
        w = evaluate(sc, views, k=20, setting="warm", warm=warm)
        out["warm"].append(w.ndcg if not w.empty else float("nan"))
    return {k: float(np.nanmean(v)) for k, v in out.items()}


ARMS4 = {
    "noCL": {"ablation.use_item_cl": False, "ablation.use_bundle_cl": False},
    "MD+ID a.05t5": {"train.alpha1": 0.05, "train.alpha2": 0.05, "augment.tau": 5.0,
                     "augment.dropout_ratio": 0.5},
    "MD+IR a.05t5": {"train.alpha1": 0.05, "train.alpha2": 0.05, "augment.tau": 5.0,
                     "augment.bundle_mode": "IR", "augment.dropout_ratio": 0.5},
    "FN+IR a.05t5": {"train.alpha1": 0.05, "train.alpha2": 0.05, "augment.tau": 5.0,
                     "augment.item_mode": "FN", "augment.bundle_mode": "IR",
                     "augment.noise_weight": 0.1, "augment.dropout_ratio": 0.5},
}

if __name__ == "__main__":
    res = {n: [] for n in ARMS4}
    for seed in (0, 1, 2, 3, 4):
        paths = S.build(seed, feedback_density=0.01, cold_frac=0.2)
        for name, ov in ARMS4.items():
            r = run_arm2(seed, ov, paths)
            res[name].append(r)
            print(f"seed{seed} {name:14s} std={r['std']:.4f} s5={r['s5']:.4f} warm={r['warm']:.4f}", flush=True)
    print("\n=== paired deltas (eval_ratio 0.3) ===")
    for name in ARMS4:
        if name == "noCL":
            continue
        d = [r["std"] - b["std"] for r, b in zip(res[name], res["noCL"])]
        d5 = [r["s5"] - b["s5"] for r, b in zip(res[name], res["noCL"])]
        print(f"{name}: std mean {np.mean(d):+.4f} per-seed {[f'{x:+.3f}' for x in d]} | s5 mean {np.mean(d5):+.4f}")

    # scenario 2: train ratio 0.7, eval ratio 0.35 (maximal seed-count shift)
    GAP_ARMS = {
        "noCL": dict(ARMS4["noCL"], **{"data.train_seed_ratio": 0.7}),
        "MD+ID gap": dict(ARMS4["MD+ID a.05t5"], **{"data.train_seed_ratio": 0.7}),
        "MD+IR gap": dict(ARMS4["MD+IR a.05t5"], **{"data.train_seed_ratio": 0.7}),
    }
    res2 = {n: [] for n in GAP_ARMS}
    for seed in (0, 1, 2, 3, 4):
        paths = S.build(seed, feedback_density=0.01, cold_frac=0.2)
        for name, ov in GAP_ARMS.items():
            r = run_arm2(seed, ov, paths, eval_ratio=0.35)
            res2[name].append(r)
            print(f"seed{seed} {name:14s} std={r['std']:.4f} s5={r['s5']:.4f}", flush=True)
    print("\n=== paired deltas (train 0.7 / eval 0.35) ===")
    for name in GAP_ARMS:
        if name == "noCL":
            continue
        d = [r["std"] - b["std"] for r, b in zip(res2[name], res2["noCL"])]
        d5 = [r["s5"] - b["s5"] for r, b in zip(res2[name], res2["noCL"])]
        print(f"{name}: std mean {np.mean(d):+.4f} per-seed {[f'{x:+.3f}' for x in d]} | s5 mean {np.mean(d5):+.4f}")
