"""
Next-item recommendation on a planted log
=========================================

Generate a small interaction log, split it at the cut time, learn item
embeddings, train BINN and compare it with the two baselines.  Runs in
about a minute on one core.
"""

from binn.datagen import SynthConfig, generate
from binn.embed import EmbedConfig, train_witem2vec
from binn.evaluation import ItemKNN, SPop, evaluate
from binn.ingest import preprocess, split_by_time
from binn.model import BinnConfig, BinnModel

# A log of 400 users over 120 items in 3 clusters.  Events on a user's
# preferred cluster mostly carry collect/cart/purchase codes (2..4).
data = generate(SynthConfig(num_users=400, num_items=120, seed=1))
print(f"{data.corpus.num_events} events, {len(data.corpus)} users, {len(data.corpus.vocab)} items")

# Filter rare items and short users, then cut at the 90% point in time.
split = split_by_time(preprocess(data.corpus), 0.9)
print(f"train {split.train.num_events} events / test {split.test.num_events} / "
      f"cold-start users {len(split.cold_start_users)}")

# Item embeddings from the training period only.  A window of one keeps
# the vectors close to the item-to-item transitions.
space = train_witem2vec(split.train, EmbedConfig(dim=32, window=1))
print("embedding objective by epoch:", " ".join(f"{x:.3f}" for x in space.objective_log))

model = BinnModel(space, BinnConfig(dim=32, hidden=32, epochs=8))
model.train(split.train)
print("BINN loss by epoch:", " ".join(f"{x:.4f}" for x in model.loss_log))

print(f"\n{'method':10s} {'Recall@20':>10s} {'MRR@20':>8s}")
for name, rec in (("BINN", model), ("S-POP", SPop()), ("Item-KNN", ItemKNN(split.train))):
    rep = evaluate(rec, split.test, 20, split.train)
    print(f"{name:10s} {rep.recall:10.4f} {rep.mrr:8.4f}")

# Top five for the first test user, given their whole history.
seq = split.train.get(split.test.user_ids[0]).extend(split.test.sequences[0].events)
print("\nnext for", seq.user_id, [item for item, _ in model.predict_next(seq, 5)])
