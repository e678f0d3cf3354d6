import filecmp
import json

import numpy as np
import pytest

from duetrec import dataio, synth
from duetrec.dataio import SplitConfig
from duetrec.synth import GroundTruth, SynthConfig, SynthConfigError


def test_config_validation():
    with pytest.raises(SynthConfigError):
        SynthConfig(n_topics=1).validate()
    with pytest.raises(SynthConfigError):
        SynthConfig(noise_rate=0.5).validate()
    with pytest.raises(SynthConfigError):
        SynthConfig(n_items=10, interactions_per_user=11).validate()
    with pytest.raises(SynthConfigError):
        synth.generate(SynthConfig(n_items=5, interactions_per_user=6))


def test_counts_follow_config(small_synth):
    cfg = SynthConfig(n_users=30, n_items=40, n_topics=2, interactions_per_user=8,
                      vocab_per_topic=12, kg_entities_per_topic=3, noise_rate=0.1, seed=11)
    d = small_synth
    assert d.stats["interactions"] == cfg.n_users * cfg.interactions_per_user == len(d.interactions)
    assert len({(r.user_id, r.item_id) for r in d.interactions}) == len(d.interactions)
    assert d.stats["kg_triples"] == 2 * cfg.n_items
    assert d.stats["kg_entities"] <= cfg.n_items + cfg.n_topics * cfg.kg_entities_per_topic
    counts = np.bincount(list(d.truth.user_topic.values()))
    assert counts.max() - counts.min() <= 1


def test_noiseless_positives_match_topics():
    d = synth.generate(SynthConfig(n_users=20, n_items=40, interactions_per_user=5, noise_rate=0.0, seed=3))
    t = d.truth
    assert all(t.user_topic[r.user_id] == t.item_topic[r.item_id] for r in d.interactions)


def test_text_and_kg_follow_item_topic(small_synth):
    t = small_synth.truth
    for iid, (title, desc) in small_synth.item_texts.items():
        topic = t.item_topic[iid]
        words = title.split() + [w for w in desc.split() if w not in synth.FILLER]
        assert all(w.startswith(f"t{topic}w") for w in words)
    for h, _, e in small_synth.triples:
        assert e.startswith(f"kg_t{t.item_topic[h]}_")


def test_files_deterministic(tmp_path):
    cfg = SynthConfig(n_users=20, n_items=30, interactions_per_user=6, seed=4)
    synth.generate(cfg, tmp_path / "a")
    synth.generate(cfg, tmp_path / "b")
    names = ["interactions.tsv", "items.jsonl", "triples.tsv", "stats.json", "ground_truth.json"]
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert match == names and not mismatch and not errors


def test_files_readable_by_dataio(tmp_path, small_synth):
    synth.write_synth(small_synth, tmp_path)
    raw = dataio.load_interactions(tmp_path / "interactions.tsv")
    assert [(r.user_id, r.item_id, r.rating, r.timestamp) for r in raw] == \
        [(r.user_id, r.item_id, r.rating, r.timestamp) for r in small_synth.interactions]
    assert dataio.load_item_texts(tmp_path / "items.jsonl") == small_synth.item_texts
    assert dataio.load_triples(tmp_path / "triples.tsv") == small_synth.triples
    truth = synth.load_ground_truth(tmp_path / "ground_truth.json")
    assert truth.user_topic == small_synth.truth.user_topic and truth.item_topic == small_synth.truth.item_topic
    data = json.loads((tmp_path / "ground_truth.json").read_text())
    assert set(data) >= {"user_topic", "item_topic", "noise_rate", "bayes_scores"}


def test_bayes_scores_closed_form():
    t = GroundTruth({"a": 0, "b": 1}, {"x": 0, "y": 1}, 0.2)
    assert t.bayes_score("a", "x") == 0.8 and t.bayes_score("a", "y") == 0.2
    table = t.bayes_scores
    assert table[("b", "y")] == 0.8 and len(table) == 4


def test_bayes_auc_noiseless_mixed_set():
    t = GroundTruth({"a": 0, "b": 1}, {"x": 0, "y": 1, "z": 0}, 0.0)
    mixed = [("a", "x", 1), ("a", "z", 1), ("b", "y", 1), ("a", "y", 0), ("b", "x", 0), ("b", "z", 0)]
    assert synth.bayes_auc(t, mixed) == 1.0


def test_bayes_auc_vanishes_with_noise():
    values = []
    for noise in (0.0, 0.2, 0.4, 0.49):
        d = synth.generate(SynthConfig(n_topics=2, noise_rate=noise))
        ds = dataio.prepare(d.interactions, d.item_texts, d.triples, SplitConfig(kcore=0))
        values.append(synth.bayes_auc(d.truth, ds.test))
    assert values == sorted(values, reverse=True)
    assert abs(values[-1] - 0.5) < 0.05


def test_bayes_auc_frozen_on_acceptance_instance():
    d = synth.generate(SynthConfig())
    ds = dataio.prepare(d.interactions, d.item_texts, d.triples, SplitConfig(kcore=10, seed=7))
    # value produced by the pairwise oracle on this instance and frozen here
    assert synth.bayes_auc(d.truth, ds.test) == pytest.approx(0.8581173260572987, abs=1e-12)


def test_pairwise_auc_requires_both_classes():
    with pytest.raises(ValueError):
        synth.pairwise_auc([1, 1], [0.1, 0.2])
