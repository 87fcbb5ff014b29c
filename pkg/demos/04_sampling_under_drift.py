"""
Sampling strategies under preference drift
==========================================

Halfway through the stream every user type switches to the next item type.
New data arrives at half the processing speed (underload), so each strategy
decides differently how to fill the rest of the batch.  Takes a few minutes.
"""
import numpy as np

from vrsdwmoe.experiment import load_log, prequential_from_config, resolve_config

for strategy in ("VRS", "NDO", "RR", "SW"):
    cfg = resolve_config({
        "dataset": {"synthetic": {"n_users": 2000, "n_items": 500, "n_interactions": 40000,
                                  "drift_at": 0.5}},
        "stream": {"train_fraction": 0.25, "s_p": 256, "s_r": 128},
        "sampler": {"strategy": strategy},
        "model": {"n_e": 2},
    })
    rlog = load_log(cfg)
    result, parts = prequential_from_config(cfg, rlog)
    first_post = len(rlog.interactions) // 2 - len(parts["train"])
    print(f"{strategy}: post-drift HR@10 {np.mean(result.ranks[first_post:] <= 10):.4f}")
