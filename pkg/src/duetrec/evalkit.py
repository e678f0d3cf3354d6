"""Click-prediction metrics and the metrics report."""
import csv
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    pass


def _arrays(labels, scores):
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if y.shape != s.shape:
        raise ValueError(f"{len(y)} labels vs {len(s)} scores")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    return y, s


def auc(labels, scores):
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    y, s = _arrays(labels, scores)
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def mae(labels, scores):
    y, s = _arrays(labels, scores)
    if not len(y):
        raise ValueError("MAE of an empty set")
    return float(np.mean(np.abs(s - y)))


def rmse(labels, scores):
    y, s = _arrays(labels, scores)
    if not len(y):
        raise ValueError("RMSE of an empty set")
    return float(np.sqrt(np.mean((s - y) ** 2)))


def f1(labels, scores, threshold=0.5):
    y, s = _arrays(labels, scores)
    if not len(y):
        raise ValueError("F1 of an empty set")
    pred = s >= threshold
    truth = y == 1
    tp = float(np.sum(pred & truth))
    precision = tp / pred.sum() if pred.any() else 0.0
    recall = tp / truth.sum() if truth.any() else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class MetricsReport:
    auc: float
    mae: float
    rmse: float
    f1: float
    n_examples: int
    seed: int = 0
    config_hash: str = ""
    timestamp: str = ""

    def check_ranges(self, tol=1e-12):
        ok = (0 <= self.auc <= 1 and 0 <= self.f1 <= 1 and self.mae >= 0
              and self.rmse + tol >= self.mae)
        if not ok:
            raise ValueError(f"metric out of range: {self}")
        return self

    def to_json(self):
        d = asdict(self)
        for k in ("auc", "mae", "rmse", "f1"):
            d[k] = round(d[k], 6)
        return d

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out_dir, "report.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value"])
            for k in ("auc", "mae", "rmse", "f1"):
                w.writerow([k, f"{getattr(self, k):.6f}"])


def report_from_scores(labels, scores, seed=0, config_hash="", threshold=0.5):
    return MetricsReport(
        auc=auc(labels, scores), mae=mae(labels, scores), rmse=rmse(labels, scores),
        f1=f1(labels, scores, threshold), n_examples=len(np.asarray(labels).reshape(-1)),
        seed=seed, config_hash=config_hash,
        timestamp=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    ).check_ranges()


def evaluate(model, examples, seed=0, config_hash="", pin=None, threshold=0.5):
    """Score ``(user, item, label)`` rows with ``model.score`` and report all metrics.

    ``model`` needs ``dataset`` (for id lookup) and ``score(users, items)``
    returning final probabilities.
    """
    ds = model.dataset
    users = np.array([ds.users[u] for u, _, _ in examples], dtype=np.int64)
    items = np.array([ds.items[i] for _, i, _ in examples], dtype=np.int64)
    labels = np.array([y for _, _, y in examples], dtype=np.float64)
    kwargs = {"pin": pin} if pin is not None else {}
    scores = model.score(users, items, **kwargs)
    return report_from_scores(labels, scores, seed, config_hash, threshold)
