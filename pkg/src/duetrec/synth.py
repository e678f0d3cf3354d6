"""Synthetic recommendation data with planted topic structure.

Every user and item carries one topic. A user's interactions are on-topic
with probability ``1 - noise_rate``; item text is drawn from the item's topic
vocabulary and each item is linked in the KG to entities of its topic. Both
the text channel and the graph channel therefore reveal the item topic.
"""
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .dataio import RawInteraction
from .seeding import stream

FILLER = ("the", "a", "story", "new", "edition", "with", "of", "and", "in", "great")


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 200
    n_items: int = 300
    n_topics: int = 4
    interactions_per_user: int = 20
    vocab_per_topic: int = 50
    kg_entities_per_topic: int = 5
    noise_rate: float = 0.1
    seed: int = 7
    desc_words: int = 30
    title_words: int = 4

    def validate(self):
        if self.n_topics < 2:
            raise SynthConfigError("n_topics must be >= 2")
        if not 0 <= self.noise_rate < 0.5:
            raise SynthConfigError("noise_rate must lie in [0, 0.5)")
        if self.interactions_per_user > self.n_items:
            raise SynthConfigError(
                f"interactions_per_user={self.interactions_per_user} exceeds n_items={self.n_items}")
        if min(self.n_users, self.n_items, self.vocab_per_topic, self.kg_entities_per_topic) < 1:
            raise SynthConfigError("counts must be positive")
        return self


@dataclass
class GroundTruth:
    user_topic: dict
    item_topic: dict
    noise_rate: float

    def bayes_score(self, user, item):
        """Probability that an interaction of this user lands on this item's topic class."""
        match = self.user_topic[user] == self.item_topic[item]
        return 1.0 - self.noise_rate if match else self.noise_rate

    @property
    def bayes_scores(self):
        return {(u, i): self.bayes_score(u, i) for u in self.user_topic for i in self.item_topic}

    def to_json(self):
        return {
            "user_topic": self.user_topic,
            "item_topic": self.item_topic,
            "noise_rate": self.noise_rate,
            "bayes_scores": {"topic_match": 1.0 - self.noise_rate, "topic_mismatch": self.noise_rate},
        }

    @classmethod
    def from_json(cls, obj):
        return cls(obj["user_topic"], obj["item_topic"], obj["noise_rate"])


@dataclass
class SynthData:
    interactions: list
    item_texts: dict
    triples: list
    truth: GroundTruth
    stats: dict


def _balanced_topics(rng, n, n_topics):
    return rng.permutation(np.arange(n) % n_topics)


def generate(cfg=SynthConfig(), out_dir=None):
    cfg.validate()
    rng = stream(cfg.seed, "synth")
    user_ids = [f"u{n:04d}" for n in range(cfg.n_users)]
    item_ids = [f"i{n:04d}" for n in range(cfg.n_items)]
    u_topic = _balanced_topics(rng, cfg.n_users, cfg.n_topics)
    i_topic = _balanced_topics(rng, cfg.n_items, cfg.n_topics)
    words = [[f"t{t}w{j}" for j in range(cfg.vocab_per_topic)] for t in range(cfg.n_topics)]

    item_texts = {}
    for iid, t in zip(item_ids, i_topic):
        title = rng.choice(words[t], cfg.title_words)
        body = [rng.choice(FILLER) if rng.random() < 0.25 else rng.choice(words[t])
                for _ in range(cfg.desc_words)]
        item_texts[iid] = (" ".join(title), " ".join(body))

    triples = []
    for iid, t in zip(item_ids, i_topic):
        picks = rng.choice(cfg.kg_entities_per_topic, min(2, cfg.kg_entities_per_topic), replace=False)
        for rel, e in zip(("genre", "tag"), picks):
            triples.append((iid, rel, f"kg_t{t}_e{e}"))

    by_topic = [np.flatnonzero(i_topic == t) for t in range(cfg.n_topics)]
    interactions = []
    clock = 0
    for uid, t in zip(user_ids, u_topic):
        on = list(rng.permutation(by_topic[t]))
        off = list(rng.permutation(np.flatnonzero(i_topic != t)))
        for _ in range(cfg.interactions_per_user):
            pool = off if (rng.random() < cfg.noise_rate and off) or not on else on
            j = pool.pop()
            clock += 1
            interactions.append(RawInteraction(uid, item_ids[j], float(rng.choice([4.0, 5.0])), clock))

    truth = GroundTruth(
        {u: int(t) for u, t in zip(user_ids, u_topic)},
        {i: int(t) for i, t in zip(item_ids, i_topic)},
        cfg.noise_rate,
    )
    entities = {h for h, _, _ in triples} | {t for _, _, t in triples}
    stats = {
        "users": cfg.n_users,
        "items": cfg.n_items,
        "interactions": len(interactions),
        "kg_entities": len(entities),
        "kg_relations": len({r for _, r, _ in triples}),
        "kg_triples": len(triples),
        "config": asdict(cfg),
    }
    data = SynthData(interactions, item_texts, triples, truth, stats)
    if out_dir is not None:
        write_synth(data, out_dir)
    return data


def write_synth(data, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "interactions.tsv"), "w", encoding="utf-8") as fh:
        for r in data.interactions:
            fh.write(f"{r.user_id}\t{r.item_id}\t{r.rating:g}\t{r.timestamp}\n")
    with open(os.path.join(out_dir, "items.jsonl"), "w", encoding="utf-8") as fh:
        for iid, (title, desc) in data.item_texts.items():
            fh.write(json.dumps({"item_id": iid, "title": title, "description": desc}, sort_keys=True) + "\n")
    with open(os.path.join(out_dir, "triples.tsv"), "w", encoding="utf-8") as fh:
        for h, r, t in data.triples:
            fh.write(f"{h}\t{r}\t{t}\n")
    with open(os.path.join(out_dir, "stats.json"), "w", encoding="utf-8") as fh:
        json.dump(data.stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "ground_truth.json"), "w", encoding="utf-8") as fh:
        json.dump(data.truth.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_ground_truth(path):
    with open(path, encoding="utf-8") as fh:
        return GroundTruth.from_json(json.load(fh))


def pairwise_auc(labels, scores):
    """AUC by comparing every positive with every negative."""
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    pos, neg = s[y == 1], s[y == 0]
    if not len(pos) or not len(neg):
        raise ValueError("need both classes")
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / (len(pos) * len(neg)))


def bayes_auc(truth, examples):
    """AUC of the generative-probability scorer on ``(user, item, label)`` rows."""
    labels = [y for _, _, y in examples]
    scores = [truth.bayes_score(u, i) for u, i, _ in examples]
    return pairwise_auc(labels, scores)
