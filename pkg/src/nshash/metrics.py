"""List-wise retrieval metrics over packed codes.

Relevance is label overlap: a query/database pair is relevant when it
shares at least one label. Rankings sort by ascending Hamming distance
with ties broken by ascending database index. AP@k divides by min(R, k)
so it stays in [0, 1]; queries with no relevant item contribute 0. The
P-R curve is micro-averaged over all pairs per Hamming threshold, with
empty retrieval counted as precision 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import require_param, require_shape
from .hashcore import PackedCodes


@dataclass
class RetrievalRun:
    db_codes: PackedCodes
    query_codes: PackedCodes
    db_labels: np.ndarray     # (n_db, L) multi-hot
    query_labels: np.ndarray  # (n_query, L)

    def __post_init__(self):
        require_shape(self.db_codes.d_b == self.query_codes.d_b,
                      f"code widths differ: db d_b={self.db_codes.d_b} vs query d_b={self.query_codes.d_b}")
        require_shape(self.db_labels.shape[1] == self.query_labels.shape[1],
                      f"label widths differ: db {self.db_labels.shape} vs query {self.query_labels.shape}")
        require_shape(self.db_labels.shape[0] == self.db_codes.n,
                      f"db labels {self.db_labels.shape} do not match {self.db_codes.n} codes")
        require_shape(self.query_labels.shape[0] == self.query_codes.n,
                      f"query labels {self.query_labels.shape} do not match {self.query_codes.n} codes")

    @property
    def d_b(self) -> int:
        return self.db_codes.d_b

    def relevance(self) -> np.ndarray:
        """(n_query, n_db) uint8: share at least one common label."""
        overlap = self.query_labels.astype(np.int64) @ self.db_labels.astype(np.int64).T
        return (overlap > 0).astype(np.uint8)

    def distances(self) -> np.ndarray:
        return kernels.hamming_matrix(self.query_codes.words, self.db_codes.words)


def rank_by_hamming(query_words: np.ndarray, db: PackedCodes) -> np.ndarray:
    """Database indices by ascending distance to one packed query item."""
    query_words = np.asarray(query_words, dtype=np.uint64).reshape(1, -1)
    require_shape(query_words.shape[1] == db.words.shape[1],
                  f"packed widths differ: query {query_words.shape[1]} vs db {db.words.shape[1]} words")
    dists = kernels.hamming_matrix(query_words, db.words)[0]
    return np.argsort(dists, kind="stable")


def average_precision_at_k(relevance_in_rank_order: np.ndarray, k: int, total_relevant: int) -> float:
    """AP truncated at rank k with denominator min(R, k); 0 when R is 0."""
    require_param(k >= 1, f"k must be >= 1, got {k}")
    if total_relevant == 0:
        return 0.0
    rel = np.asarray(relevance_in_rank_order[:k], dtype=np.float64)
    hits = np.cumsum(rel)
    precisions = hits / np.arange(1, rel.size + 1)
    return float(np.sum(precisions * rel) / min(total_relevant, k))


def _ranked_relevance(run: RetrievalRun) -> np.ndarray:
    """(n_query, n_db) relevance bits in each query's ranked order."""
    rel = run.relevance()
    dists = run.distances()
    order = np.argsort(dists, axis=1, kind="stable")
    return np.take_along_axis(rel, order, axis=1)


def map_at_k(run: RetrievalRun, k: int) -> float:
    """Mean AP@k over queries; k beyond the database size truncates to it."""
    ranked = _ranked_relevance(run)
    k = min(k, run.db_codes.n)
    totals = run.relevance().sum(axis=1)
    aps = [average_precision_at_k(ranked[i], k, int(totals[i])) for i in range(ranked.shape[0])]
    return float(np.mean(aps))


def precision_at_k(run: RetrievalRun, k: int) -> float:
    """Mean fraction of relevant items in each query's top k."""
    require_param(k >= 1, f"k must be >= 1, got {k}")
    ranked = _ranked_relevance(run)
    k = min(k, run.db_codes.n)
    return float(ranked[:, :k].mean(axis=1).mean())


def precision_at_k_curve(run: RetrievalRun, k_max: int) -> list[tuple[int, float]]:
    """(k, mean precision at k) for every cutoff k = 1..min(k_max, n_db)."""
    require_param(k_max >= 1, f"k_max must be >= 1, got {k_max}")
    ranked = _ranked_relevance(run)
    k_max = min(k_max, run.db_codes.n)
    hits = np.cumsum(ranked[:, :k_max], axis=1, dtype=np.float64)
    per_k = hits / np.arange(1, k_max + 1)
    return [(k + 1, float(per_k[:, k].mean())) for k in range(k_max)]


def precision_at_hamming_radius(run: RetrievalRun, r: int = 2) -> float:
    """Mean per-query precision among items within distance r; queries that
    retrieve nothing contribute 0."""
    require_param(r >= 0, f"radius must be >= 0, got {r}")
    rel = run.relevance()
    dists = run.distances()
    within = dists <= r
    counts = within.sum(axis=1)
    hits = (within & (rel != 0)).sum(axis=1)
    per_query = np.where(counts > 0, hits / np.maximum(counts, 1), 0.0)
    return float(per_query.mean())


def pr_curve(run: RetrievalRun) -> list[tuple[int, float, float]]:
    """(threshold, recall, precision) for every Hamming threshold 0..d_b,
    micro-averaged over all query/database pairs."""
    rel = run.relevance()
    hist_all, hist_rel = kernels.hamming_histograms(
        run.query_codes.words, run.db_codes.words, rel, run.d_b
    )
    retrieved = np.cumsum(hist_all)
    rel_retrieved = np.cumsum(hist_rel)
    total_rel = int(rel.sum())
    out = []
    for t in range(run.d_b + 1):
        got = int(retrieved[t])
        hits = int(rel_retrieved[t])
        precision = hits / got if got > 0 else 0.0
        recall = hits / total_rel if total_rel > 0 else 1.0
        out.append((t, recall, precision))
    return out


@dataclass
class MetricReport:
    k: int
    map_at_k: float
    p_at_k: float
    p_at_k_curve: list[tuple[int, float]]
    p_at_hamming_r2: float
    pr: list[tuple[int, float, float]]


def compute_report(run: RetrievalRun, k: int) -> MetricReport:
    curve = precision_at_k_curve(run, k)
    return MetricReport(
        k=k,
        map_at_k=map_at_k(run, k),
        p_at_k=curve[-1][1],
        p_at_k_curve=curve,
        p_at_hamming_r2=precision_at_hamming_radius(run, 2),
        pr=pr_curve(run),
    )


def format_report(report: MetricReport) -> str:
    return (
        f"map@{report.k}={report.map_at_k:.6f}\n"
        f"p@{report.k}={report.p_at_k:.6f}\n"
        f"p@h2={report.p_at_hamming_r2:.6f}\n"
    )


def write_pr_csv(path, pr: list[tuple[int, float, float]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("hamming_threshold,recall,precision\n")
        for t, recall, precision in pr:
            fh.write(f"{t},{recall!r},{precision!r}\n")
