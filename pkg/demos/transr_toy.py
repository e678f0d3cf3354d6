"""TransR on a four-entity graph: watch true and corrupted triples separate.

    python3 demos/transr_toy.py
"""
import numpy as np

from duetrec import dataio
from duetrec.duet import TrainConfig, train_kg_epoch
from duetrec.globalmodel import build_urg, corrupt_batch, global_param_specs, transr_score
from duetrec.numkit import AdamConfig, ParamStore, init_params
from duetrec.seeding import stream

# one user clicked two items of the same genre
ds = dataio.Dataset(
    users={"u": 0}, items={"i1": 0, "i2": 1}, vocab={"<pad>": 0, "<unk>": 1},
    train=[("u", "i1", 1), ("u", "i2", 1)], test=[],
    title_ids=np.zeros((2, dataio.TITLE_LEN), dtype=np.int64),
    desc_ids=np.zeros((2, dataio.DESC_CAP), dtype=np.int64),
    triples=[("i1", "genre", "g"), ("i2", "genre", "g")], recency={},
)
g = build_urg(ds)
print("entities", [e[1] for e in g.entity_ids], "relations", g.relations)

cfg = TrainConfig(gamma=1.0)
store = ParamStore()
init_params(store, global_param_specs(g.n_entities, g.n_relations, cfg.dim_entity), stream(cfg.seed, "init"))
adam = AdamConfig(lr=cfg.lr)
probe = np.repeat(g.triples, 50, axis=0)
fresh = corrupt_batch(probe, g, np.random.default_rng(1))

for epoch in range(1, 501):
    loss = train_kg_epoch(store, g, cfg, epoch, adam)
    if epoch in (1, 10, 50, 100, 250, 500):
        good = transr_score(probe, store).data
        bad = transr_score(fresh, store).data
        met = np.mean(good + cfg.gamma <= bad)
        print(f"epoch {epoch:3d}  loss {loss:.4f}  mean g(true) {good.mean():.3f}  "
              f"mean g(corrupt) {bad.mean():.3f}  margin met {met:.2f}")
