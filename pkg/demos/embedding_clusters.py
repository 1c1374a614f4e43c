"""
Do the embeddings find the planted clusters?
============================================

Train w-item2vec and plain item2vec (theta fixed at one) on the same log
and measure how many of each item's ten nearest neighbours share its
cluster.  The vectors are exported in a tab-separated format that any
projection tool can read.
"""

import sys
from pathlib import Path

from binn.datagen import SynthConfig, generate
from binn.embed import EmbedConfig, export_embeddings, knn_purity, nearest_items, train_witem2vec

data = generate(SynthConfig(num_users=300, num_items=90))

for weighting in ("witem2vec", "item2vec"):
    space = train_witem2vec(data.corpus, EmbedConfig(dim=32, window=10, weighting=weighting))
    print(f"{weighting:10s} 10-NN purity {knn_purity(space, data.item_cluster, k=10):.3f}")

item = space.vocab.ids[0]
print(f"\nneighbours of {item} (cluster {data.item_cluster[item]}):")
for other, score in nearest_items(space, space.vector(item), 6)[1:]:
    print(f"  {other}  cluster {data.item_cluster[other]}  cosine {score:.3f}")

out = Path(sys.argv[1]) if len(sys.argv) > 1 else None
if out is not None:
    export_embeddings(space, out)
    print("wrote", out)
