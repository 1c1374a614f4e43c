"""
Cold-start users
================

Users who first appear after the cut time have no preference history when
they arrive, so the preference branch contributes nothing and BINN reduces
to its session branch.  Recall tends to climb as they interact; single
steps are noisy, so the curve is averaged over bands of steps.
"""

import numpy as np

from binn.datagen import SynthConfig, generate
from binn.embed import EmbedConfig, train_witem2vec
from binn.evaluation import cold_start_eval
from binn.ingest import preprocess, split_by_time
from binn.model import BinnConfig, BinnModel

data = generate(SynthConfig(num_users=800, num_items=150, new_user_fraction=0.1, seed=2))
split = split_by_time(preprocess(data.corpus), 0.9)
space = train_witem2vec(split.train, EmbedConfig(dim=32, window=1))
model = BinnModel(space, BinnConfig(dim=32, hidden=32, epochs=8))
model.train(split.train)

# Before any collect/cart/purchase event the preference vector is exactly zero.
seq = split.cold_start_users.sequences[0]
first_pref = next((k for k, e in enumerate(seq.events) if e.behavior in model.config.preference), None)
if first_pref:
    psi_sbl, psi_pbl = model.representations(seq, first_pref + 1)
    print("psi_PBL before the first preference event is zero:", not np.any(psi_pbl))

series = cold_start_eval(model, split.cold_start_users, steps=40)
print(f"{len(split.cold_start_users)} cold-start users")
for lo, hi in ((1, 3), (4, 10), (11, 20), (21, 30), (31, 40)):
    band = series[lo - 1:hi]
    recall = np.mean([r.recall for r in band])
    mrr = np.mean([r.mrr for r in band])
    print(f"after {lo:2d}-{hi:2d} events  Recall@20 {recall:.3f}  MRR@20 {mrr:.3f}")
