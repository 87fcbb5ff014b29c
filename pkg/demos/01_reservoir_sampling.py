"""
Reservoir maintenance and batch preparation
===========================================

A FIFO reservoir keeps the most recent interactions.  When fewer new
interactions arrive than one training batch holds (underload), the batch is
topped up with historical samples drawn with probabilities that grow
geometrically towards the newest reservoir entries.
"""
import numpy as np

from vrsdwmoe.ingest import Interactions
from vrsdwmoe.sampling import (Reservoir, SamplerConfig, decayed_weights, prepare_batch,
                               sample_size_underload)

# sampling probabilities for a 10-slot reservoir, oldest slot first
for lam in (1.0, 1.1, 1.5):
    print(f"lambda={lam}:", np.round(decayed_weights(10, lam), 3))

# how many historical interactions join 128 new ones in a 256 batch
for delta in (0.0, 0.25, 0.5, 1.0, 2.0):
    print(f"delta={delta}: |S_his| =", sample_size_underload(128, delta, 256))

# fill a reservoir with 1000 interactions, then prepare one underload batch
reservoir = Reservoir(capacity=1000)
seq = np.arange(1000)
reservoir.insert(Interactions(seq % 50, seq % 70, seq))
new = Interactions(np.arange(128) % 50, np.arange(128) % 70, np.arange(1000, 1128))

rng = np.random.default_rng(0)
for strategy in ("VRS", "NDO", "RR", "SW"):
    batch = prepare_batch(new, reservoir, SamplerConfig(strategy=strategy), rng)
    his = batch.interactions.seq[:batch.n_his]
    mean_age = 1000 - his.mean() if len(his) else float("nan")
    print(f"{strategy}: {len(batch)} interactions ({batch.n_new} new, {batch.n_his} historical), "
          f"mean age of historical part {mean_age:.0f}")
