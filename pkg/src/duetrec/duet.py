"""Fusion of the local and global models and their joint training loop."""
import json
import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import numkit as nk
from .dataio import fit_length
from .evalkit import auc as auc_score
from .globalmodel import (
    KG_PARAMS,
    build_urg,
    clip_kg_params,
    corrupt_batch,
    global_forward,
    global_param_specs,
    kg_margin_loss,
)
from .localmodel import local_forward, local_param_specs
from .numkit import AdamConfig, ParamSpec, ParamStore, adam_step, init_params
from .seeding import stream

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 256
    lr: float = 1e-3
    gamma: float = 1.0
    neg_ratio: int = 1
    resample_negatives: bool = True
    sample_size: int = 8
    eval_sample_cap: int = 64
    seed: int = 0
    dim_word: int = 128
    dim_entity: int = 50
    desc_len: int = 40
    title_len: int = 16
    history_len: int = 32
    window: int = 3
    slope: float = 0.2

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in ("epochs", "seed"):
                if value < 0:
                    raise ValueError(f"{f.name} must be >= 0")
            elif f.name == "slope":
                if not 0 <= value < 1:
                    raise ValueError("slope must lie in [0, 1)")
            elif f.name != "resample_negatives" and value <= 0:
                raise ValueError(f"{f.name} must be positive")

    def replace(self, **changes):
        return TrainConfig(**{**asdict(self), **changes})


def fuse(p_local, p_global, store):
    """Final click probability from the two sub-model probabilities."""
    pl, pg = nk.as_tensor(p_local), nk.as_tensor(p_global)
    x = nk.concat([nk.reshape(pl, pl.shape + (1,)), nk.reshape(pg, pg.shape + (1,))], axis=-1)
    z = nk.affine(x, store.param("fusion.weight"), store.param("fusion.bias"))
    return nk.sigmoid(nk.reshape(z, z.shape[:-1]))


def ce_loss(p, labels):
    return nk.binary_cross_entropy(p, labels)


def fusion_param_specs():
    return {
        "fusion.weight": ParamSpec((2, 1), "const", 1.0),
        "fusion.bias": ParamSpec((1,), "const", -1.0),
    }


class DuetModel:
    """Parameters plus the dataset-derived lookup tables needed for inference."""

    def __init__(self, dataset, urg, cfg, store=None):
        self.dataset = dataset
        self.urg = urg
        self.cfg = cfg
        self.titles = fit_length(dataset.title_ids, cfg.title_len)
        self.descs = fit_length(dataset.desc_ids, cfg.desc_len)
        self.history = dataset.histories()
        if store is None:
            store = ParamStore()
            specs = {
                **local_param_specs(len(dataset.vocab), cfg.dim_word, window=cfg.window),
                **global_param_specs(urg.n_entities, urg.n_relations, cfg.dim_entity),
                **fusion_param_specs(),
            }
            init_params(store, specs, stream(cfg.seed, "init"))
        self.store = store

    def history_matrix(self, users, items):
        """Padded train history per row, with the candidate item left out."""
        H = self.cfg.history_len
        hist = np.zeros((len(users), H), dtype=np.int64)
        mask = np.zeros((len(users), H), dtype=bool)
        for b, (u, i) in enumerate(zip(users, items)):
            row = [x for x in self.history.get(int(u), ()) if x != i][-H:]
            hist[b, :len(row)] = row
            mask[b, :len(row)] = True
        return hist, mask

    def forward(self, users, items, rng=None, pin=None):
        """``(p_local, p_global, p_final)`` tensors for index arrays.

        With ``rng`` neighbourhoods are sampled for training; without it the
        capped evaluation neighbourhood is used. ``pin`` in {"local",
        "global"} replaces that sub-model's probability by 0.5.
        """
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        cfg = self.cfg
        half = nk.Tensor(np.full(len(users), 0.5))
        if pin == "local":
            p_l = half
        else:
            hist, mask = self.history_matrix(users, items)
            p_l = local_forward(self.store, self.titles, self.descs, items, hist, mask, cfg.slope)
        if pin == "global":
            p_g = half
        elif rng is not None:
            p_g = global_forward(self.store, self.urg, users, items, cfg.sample_size, rng=rng, slope=cfg.slope)
        else:
            p_g = global_forward(self.store, self.urg, users, items, cfg.eval_sample_cap, seed=cfg.seed,
                                 slope=cfg.slope)
        return p_l, p_g, fuse(p_l, p_g, self.store)

    def predict_batch(self, users, items, pin=None, batch_size=512):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        out = np.zeros((3, len(users)))
        for lo in range(0, len(users), batch_size):
            sl = slice(lo, lo + batch_size)
            parts = self.forward(users[sl], items[sl], pin=pin)
            for k, t in enumerate(parts):
                out[k, sl] = t.data
        return out

    def predict(self, user_id, item_id):
        u = self.dataset.user_index(user_id)
        i = self.dataset.item_index(item_id)
        p_l, p_g, p_f = self.predict_batch([u], [i])[:, 0]
        return float(p_l), float(p_g), float(p_f)

    def score(self, users, items, pin=None):
        return self.predict_batch(users, items, pin=pin)[2]


def _epoch_examples(model, epoch):
    ds, cfg = model.dataset, model.cfg
    if not cfg.resample_negatives:
        return ds.indexed(ds.train)
    u, i, _ = ds.indexed([r for r in ds.train if r[2] == 1])
    # every test pair stays unseen, whatever its label
    seen = set(zip(*ds.indexed([r for r in ds.train if r[2] == 1] + ds.test)[:2]))
    rng = stream(cfg.seed, "negatives", epoch)
    n_items = len(ds.items)
    neg_u, neg_i = [], []
    for user in u:
        for _ in range(cfg.neg_ratio):
            for _attempt in range(100):
                j = int(rng.integers(n_items))
                if (user, j) not in seen:
                    neg_u.append(user)
                    neg_i.append(j)
                    break
    users = np.concatenate([u, np.array(neg_u, dtype=np.int64)])
    items = np.concatenate([i, np.array(neg_i, dtype=np.int64)])
    labels = np.concatenate([np.ones(len(u)), np.zeros(len(neg_u))])
    return users, items, labels


def train_kg_epoch(store, urg, cfg, epoch, adam):
    """One pass of the margin objective over all graph triples."""
    order = stream(cfg.seed, "batch-order", epoch, 0).permutation(len(urg.triples))
    rng = stream(cfg.seed, "kg-corrupt", epoch)
    total = 0.0
    for b, lo in enumerate(range(0, len(order), cfg.batch_size)):
        batch = urg.triples[order[lo:lo + cfg.batch_size]]
        corrupted = corrupt_batch(batch, urg, rng)
        store.zero_grad(KG_PARAMS)
        loss = kg_margin_loss(batch, corrupted, cfg.gamma, store)
        if not np.isfinite(loss.data):
            raise TrainingError(f"non-finite kg loss in epoch {epoch} batch {b}")
        if loss.requires_grad:
            loss.backward()
        adam_step(store, adam, KG_PARAMS)
        clip_kg_params(store)
        total += float(loss.data)
    return total / max(1, len(order))


def train(dataset, urg=None, cfg=TrainConfig(), on_epoch=None):
    """Alternate a KG margin pass and a click cross-entropy pass per epoch.

    Returns ``(model, log)`` where log rows are
    ``(epoch, kg_loss, ce_loss, train_auc)``.
    """
    urg = build_urg(dataset) if urg is None else urg
    model = DuetModel(dataset, urg, cfg)
    store = model.store
    adam = AdamConfig(lr=cfg.lr)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        kg = train_kg_epoch(store, urg, cfg, epoch, adam)

        users, items, labels = _epoch_examples(model, epoch)
        order = stream(cfg.seed, "batch-order", epoch, 1).permutation(len(users))
        nbr_rng = stream(cfg.seed, "neighbor-sampling", epoch)
        scores = np.zeros(len(order))
        ce_total = 0.0
        for b, lo in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            store.zero_grad()
            try:
                _, _, p_f = model.forward(users[idx], items[idx], rng=nbr_rng)
                loss = ce_loss(p_f, labels[idx])
                loss.backward()
            except nk.NumericError as exc:
                raise TrainingError(f"non-finite values in epoch {epoch} batch {b}: {exc}") from None
            adam_step(store, adam)
            scores[lo:lo + len(idx)] = p_f.data
            ce_total += float(loss.data)
        ce = ce_total / max(1, len(order))
        train_auc = auc_score(labels[order], scores) if 0 < labels.sum() < len(labels) else float("nan")
        history.append((epoch, kg, ce, train_auc))
        log.info("epoch %d kg=%.6f ce=%.6f auc=%.4f", epoch, kg, ce, train_auc)
        if on_epoch is not None:
            on_epoch(history[-1])
    return model, history


def write_train_log(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,kg_loss,ce_loss,train_auc\n")
        for epoch, kg, ce, a in rows:
            fh.write(f"{epoch},{kg:.6f},{ce:.6f},{a:.6f}\n")


def save_model(model, path, extra=None):
    """Tensor archive at ``path`` plus a JSON sidecar ``path + '.json'``."""
    nk.save_tensors(path, model.store.state_dict())
    meta = {"train_config": asdict(model.cfg), "dataset_stats": model.dataset.stats}
    meta.update(extra or {})
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path, dataset, urg=None):
    tensors = nk.load_tensors(path)
    try:
        with open(path + ".json", encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise nk.CheckpointError(f"missing checkpoint sidecar {path + '.json'}") from None
    cfg = TrainConfig(**meta["train_config"])
    urg = build_urg(dataset) if urg is None else urg
    model = DuetModel(dataset, urg, cfg)
    try:
        model.store.load_state_dict(tensors)
    except (KeyError, ValueError) as exc:
        raise nk.CheckpointError(f"checkpoint does not fit this dataset: {exc}") from None
    return model
