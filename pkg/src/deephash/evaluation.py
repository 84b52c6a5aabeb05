"""KNN accuracy and mean average precision over a ranked database.

Both metrics share one ranking rule: ascending distance, ties broken by
ascending database row id. Distances are squared Euclidean for real-valued
embeddings and Hamming for packed codes.
"""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, ShapeMismatchError
from .hashing import HammingIndex, PackedCodes, hamming_matrix

REPORT_VERSION = 1
METRICS = ("euclidean", "hamming")


def sq_euclidean_matrix(queries, db) -> np.ndarray:
    """Exact squared distances ``sum((q - x)**2)`` for every query/db pair."""
    queries = np.asarray(queries, dtype=np.float64)
    db = np.asarray(db, dtype=np.float64)
    if queries.ndim != 2 or db.ndim != 2 or queries.shape[1] != db.shape[1]:
        raise ShapeMismatchError(f"query shape {queries.shape} incompatible with db {db.shape}")
    out = np.empty((queries.shape[0], db.shape[0]))
    chunk = max(1, 4_000_000 // max(1, db.size))
    for s in range(0, queries.shape[0], chunk):
        diff = queries[s : s + chunk, None, :] - db[None, :, :]
        out[s : s + chunk] = np.einsum("qnd,qnd->qn", diff, diff)
    return out


def distance_matrix(db, queries, metric: str) -> np.ndarray:
    if metric == "hamming":
        if isinstance(db, HammingIndex):
            db = db.codes
        if not isinstance(db, PackedCodes) or not isinstance(queries, PackedCodes):
            raise ConfigError("hamming metric needs packed codes for db and queries")
        return hamming_matrix(queries, db)
    if metric == "euclidean":
        if isinstance(db, (PackedCodes, HammingIndex)) or isinstance(queries, PackedCodes):
            raise ConfigError("euclidean metric needs real-valued features, got packed codes")
        return sq_euclidean_matrix(queries, db)
    raise ConfigError(f"unknown metric {metric!r}")


def _n_rows(x) -> int:
    return x.n if isinstance(x, (PackedCodes, HammingIndex)) else np.asarray(x).shape[0]


def _vote(labels_k, dists_k) -> int:
    """Majority label; ties go to the smaller summed distance, then smaller label."""
    uniq, counts = np.unique(labels_k, return_counts=True)
    sums = np.array([dists_k[labels_k == u].sum() for u in uniq], dtype=np.float64)
    # lexsort sorts by the last key first
    order = np.lexsort((uniq, sums, -counts))
    return int(uniq[order[0]])


def knn_predict_batch(dist: np.ndarray, db_labels, k: int) -> np.ndarray:
    """KNN predictions from a precomputed ``(nq, ndb)`` distance matrix."""
    db_labels = np.asarray(db_labels)
    if dist.shape[1] == 0:
        raise ValueError("empty database")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    k = min(k, dist.shape[1])
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    near = np.take_along_axis(dist, order, axis=1)
    return np.array([_vote(db_labels[o], d) for o, d in zip(order, near)], dtype=np.int64)


def knn_predict(db_points, db_labels, query, k: int, metric: str = "euclidean") -> int:
    if _n_rows(db_points) == 0:
        raise ValueError("empty database")
    if metric == "euclidean":
        query = np.atleast_2d(np.asarray(query, dtype=np.float64))
    dist = distance_matrix(db_points, query, metric)
    return int(knn_predict_batch(dist, db_labels, k)[0])


def knn_accuracy(db, db_labels, queries, query_labels, k: int, metric: str = "euclidean") -> float:
    query_labels = np.asarray(query_labels)
    if query_labels.size == 0:
        raise ValueError("empty query set")
    if _n_rows(db) == 0:
        raise ValueError("empty database")
    pred = knn_predict_batch(distance_matrix(db, queries, metric), db_labels, k)
    return float(np.mean(pred == query_labels))


def average_precision(relevance, cutoff: int | None = None) -> float:
    """AP of a ranked relevance vector; 0 when nothing is relevant.

    With ``cutoff`` only the top ranks count and the normaliser is the
    number of relevant items retrieved within them.
    """
    rel = np.asarray(relevance, dtype=bool)
    total = int(rel.sum())
    if cutoff is not None:
        rel = rel[:cutoff]
        total = int(rel.sum())
    if total == 0:
        return 0.0
    hits = np.cumsum(rel)
    ranks = np.flatnonzero(rel) + 1
    return float(np.sum(hits[rel] / ranks) / total)


def mean_average_precision(
    db, db_labels, queries, query_labels, metric: str = "euclidean", cutoff: int | None = None
) -> float:
    """Mean AP over queries, each ranked against the full database."""
    db_labels = np.asarray(db_labels)
    query_labels = np.asarray(query_labels)
    if query_labels.size == 0 or db_labels.size == 0:
        raise ValueError("empty query set or database")
    dist = distance_matrix(db, queries, metric)
    return _map_from_distances(dist, db_labels, query_labels, cutoff)


def _map_from_distances(dist, db_labels, query_labels, cutoff=None) -> float:
    order = np.argsort(dist, axis=1, kind="stable")
    rel = db_labels[order] == query_labels[:, None]
    return float(np.mean([average_precision(r, cutoff) for r in rel]))


@dataclass
class MetricsReport:
    knn_accuracy: float
    map: float
    k: int
    num_queries: int
    mode: str
    config: dict = field(default_factory=dict)
    timestamp: str = ""

    def validate(self):
        if self.mode not in METRICS:
            raise ValueError(f"mode must be one of {METRICS}, got {self.mode!r}")
        for name in ("knn_accuracy", "map"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.k < 1 or self.num_queries < 0:
            raise ValueError("k must be >= 1 and num_queries >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {
            "version": REPORT_VERSION,
            "mode": d["mode"],
            "k": d["k"],
            "num_queries": d["num_queries"],
            "knn_accuracy": d["knn_accuracy"],
            "map": d["map"],
            "config": d["config"],
            "timestamp": d["timestamp"],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        if d.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {d.get('version')!r}")
        r = cls(
            knn_accuracy=float(d["knn_accuracy"]),
            map=float(d["map"]),
            k=int(d["k"]),
            num_queries=int(d["num_queries"]),
            mode=d["mode"],
            config=dict(d.get("config", {})),
            timestamp=d.get("timestamp", ""),
        )
        r.validate()
        return r


def evaluate(db, db_labels, queries, query_labels, k: int = 5, metric="euclidean",
             cutoff=None, config=None) -> MetricsReport:
    """Both metrics from a single distance computation."""
    db_labels = np.asarray(db_labels)
    query_labels = np.asarray(query_labels)
    if query_labels.size == 0 or db_labels.size == 0:
        raise ValueError("empty query set or database")
    if k > db_labels.size:
        raise ConfigError(f"k={k} exceeds database size {db_labels.size}")
    dist = distance_matrix(db, queries, metric)
    acc = float(np.mean(knn_predict_batch(dist, db_labels, k) == query_labels))
    m = _map_from_distances(dist, db_labels, query_labels, cutoff)
    return MetricsReport(acc, m, k, int(query_labels.size), metric, dict(config or {}))


def format_table(report: MetricsReport) -> str:
    rows = [
        ("mode", report.mode),
        ("k", str(report.k)),
        ("queries", str(report.num_queries)),
        ("knn_accuracy", f"{report.knn_accuracy:.4f}"),
        ("mAP", f"{report.map:.4f}"),
    ]
    width = max(len(r[0]) for r in rows)
    return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def emit_report(report: MetricsReport, path, stream=None, timestamp: str | None = None) -> None:
    """Validate, print an aligned table and write the metrics JSON."""
    report.validate()
    if timestamp is None:
        timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    report.timestamp = timestamp
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=False) + "\n")
    print(format_table(report), file=stream or sys.stdout)


def load_report(path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text()))
