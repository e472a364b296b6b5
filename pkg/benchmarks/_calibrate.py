"""Scratch harness for hyperparameter calibration runs (not part of the package)."""
import copy
import sys
import tempfile
import time

import numpy as np

from bundlecraft import corpus as C
from bundlecraft.cf_pretrain import pretrain
from bundlecraft.config import DEFAULTS, train_config
from bundlecraft.corpus import sample_partial, warm_items
from bundlecraft.evaluation import evaluate, make_scorer
from bundlecraft.item_encoder import build_item_inputs
from bundlecraft.synth import SynthSpec, generate
from bundlecraft.trainer import fit

_CTX = {}


def corpus_for(seed, **spec_kw):
    key = (seed, tuple(sorted(spec_kw.items())))
    if key in _CTX:
        return _CTX[key]
    tmp = tempfile.mkdtemp()
    spec = SynthSpec(seed=seed, **spec_kw)
    man = generate(spec, tmp)
    catalog, features, graph = C.load_dir(tmp)
    cf = pretrain(graph, d=32, k_layers=2, epochs=10, lr=0.05, neg_samples=1,
                  rng=np.random.default_rng(seed))
    _CTX[key] = (catalog, features, graph, cf, man)
    return _CTX[key]


def trial(ctx, seed, overrides, epochs=60, batch=64, lr=1e-2, d=32, eval_settings=()):
    catalog, features, graph, cf, _ = ctx
    cfgd = copy.deepcopy(DEFAULTS)
    cfgd["seed"] = seed
    cfgd["model"]["d"] = d
    cfgd["train"].update({"epochs": epochs, "batch_size": batch, "patience": epochs, "lr": lr})
    for k, v in overrides.items():
        sect, key = k.split(".")
        cfgd[sect][key] = v
    tc = train_config(cfgd)
    t0 = time.time()
    res = fit(catalog, features, graph, cf, tc)
    rngv = np.random.default_rng(123)
    views = [sample_partial(catalog.bundles[b], 0.5, rngv, bundle_index=b) for b in res.split[2]]
    warm = warm_items(catalog, res.split[0])
    inputs = build_item_inputs(catalog, features, cf, graph, warm, np.float32)
    scorer = make_scorer(res.model, inputs)
    rep = evaluate(scorer, views, k=20, warm=warm)
    extra = {}
    for setting, rate in eval_settings:
        rngc = np.random.default_rng(321)
        r = evaluate(scorer, views, k=20, setting=setting, rate=rate, rng=rngc,
                     n_items=catalog.n_items, warm=warm)
        extra[f"{setting}{rate}"] = (r.recall, r.ndcg, r.n_bundles)
    return {"recall": rep.recall, "ndcg": rep.ndcg, "t": time.time() - t0,
            "best": res.best_epoch, "extra": extra}


if __name__ == "__main__":
    mode = sys.argv[1] if len(sys.argv) > 1 else "sparse"
    if mode == "hardsparse":
        noCL = {"ablation.use_item_cl": False, "ablation.use_bundle_cl": False}
        cands = {
            "noCL": noCL,
            "MD.5 a.1t5": {"train.alpha1": 0.1, "train.alpha2": 0.1, "augment.tau": 5.0,
                           "augment.dropout_ratio": 0.5},
            "MD.5 a.05t2": {"train.alpha1": 0.05, "train.alpha2": 0.05, "augment.tau": 2.0,
                            "augment.dropout_ratio": 0.5},
            "FD.2 a.05t2": {"train.alpha1": 0.05, "train.alpha2": 0.05, "augment.tau": 2.0,
                            "augment.item_mode": "FD"},
        }
        for seed in (0, 1):
            ctx = corpus_for(seed, feedback_density=0.01, cold_item_fraction=0.2,
                             feature_noise=2.0, modality_missing_fraction=0.2)
            for name, ov in cands.items():
                out = trial(ctx, seed, ov)
                print(f"seed{seed} {name:12s} recall={out['recall']:.4f} ndcg={out['ndcg']:.4f} t={out['t']:.0f}s", flush=True)
