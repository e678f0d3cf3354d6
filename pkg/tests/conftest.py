import numpy as np
import pytest

from duetrec import dataio, synth
from duetrec.dataio import SplitConfig
from duetrec.globalmodel import build_urg

SMALL = synth.SynthConfig(n_users=30, n_items=40, n_topics=2, interactions_per_user=8,
                          vocab_per_topic=12, kg_entities_per_topic=3, noise_rate=0.1, seed=11)


@pytest.fixture(scope="session")
def small_synth():
    return synth.generate(SMALL)


@pytest.fixture(scope="session")
def small_dataset(small_synth):
    d = small_synth
    return dataio.prepare(d.interactions, d.item_texts, d.triples, SplitConfig(kcore=2, seed=0))


@pytest.fixture(scope="session")
def small_urg(small_dataset):
    return build_urg(small_dataset)


@pytest.fixture(scope="session")
def small_dirs(tmp_path_factory, small_synth, small_dataset):
    root = tmp_path_factory.mktemp("small")
    synth.write_synth(small_synth, root / "raw")
    dataio.save_dataset(small_dataset, root / "data")
    return root


def make_dataset(users, items, train_pos, test_pos=(), triples=(), texts=None):
    """Hand-built :class:`dataio.Dataset` with negatives-free splits."""
    texts = texts or {}
    vocab = {"<pad>": 0, "<unk>": 1}
    titles = np.zeros((len(items), dataio.TITLE_LEN), dtype=np.int64)
    descs = np.zeros((len(items), dataio.DESC_CAP), dtype=np.int64)
    ds = dataio.Dataset(
        users={u: n for n, u in enumerate(users)}, items={i: n for n, i in enumerate(items)},
        vocab=vocab, train=[(u, i, 1) for u, i in train_pos], test=[(u, i, 1) for u, i in test_pos],
        title_ids=titles, desc_ids=descs, triples=list(triples), recency={},
    )
    ds.stats = dataio.dataset_stats(ds)
    return ds
