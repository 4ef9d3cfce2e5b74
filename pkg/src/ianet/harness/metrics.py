"""Cosine-distance retrieval and CMC / mAP scoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EvaluationError, NumericError


@dataclass
class RetrievalReport:
    cmc: np.ndarray  # cmc[k-1] = fraction of queries matched within the top k
    map: float
    per_query_ap: np.ndarray

    @property
    def top1(self) -> float:
        return float(self.cmc[0])

    def topk(self, k: int) -> float:
        return float(self.cmc[min(k, len(self.cmc)) - 1])

    def to_tsv(self, ranks=(1, 5, 10)) -> str:
        lines = ["metric\tvalue", f"map\t{self.map:.6f}"]
        lines += [f"top{k}\t{self.topk(k):.6f}" for k in ranks]
        return "\n".join(lines) + "\n"


def distance_matrix(Q, G) -> np.ndarray:
    """Cosine distances ``1 - cos(q_i, g_j)`` as a ``[q, g]`` float64 matrix."""
    Q = np.asarray(Q, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    if Q.ndim != 2 or G.ndim != 2 or Q.shape[1] != G.shape[1]:
        raise ValueError(f"embedding shapes {Q.shape} and {G.shape} are incompatible")
    qn = np.linalg.norm(Q, axis=1)
    gn = np.linalg.norm(G, axis=1)
    for name, norms in (("query", qn), ("gallery", gn)):
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise NumericError(f"{name} row {int(zero[0])} has zero norm")
    return 1.0 - (Q / qn[:, None]) @ (G / gn[:, None]).T


def cmc_map(D, query_ids, gallery_ids) -> RetrievalReport:
    """Rank the gallery per query (ascending distance, ties by index) and score it."""
    D = np.asarray(D, dtype=np.float64)
    qids = np.asarray(query_ids)
    gids = np.asarray(gallery_ids)
    if D.shape != (len(qids), len(gids)):
        raise ValueError(f"distance matrix {D.shape} vs {len(qids)} queries, {len(gids)} gallery items")
    missing = sorted({q.item() for q in qids if not np.any(gids == q)})
    if missing:
        raise EvaluationError(f"query identities without a gallery match: {missing}")
    n_q, n_g = D.shape
    hits = np.zeros(n_g)
    aps = np.empty(n_q)
    for i in range(n_q):
        order = np.argsort(D[i], kind="stable")
        rel = gids[order] == qids[i]
        ranks = np.flatnonzero(rel) + 1
        hits[ranks[0] - 1 :] += 1
        aps[i] = np.mean(np.arange(1, len(ranks) + 1) / ranks)
    return RetrievalReport(cmc=hits / n_q, map=float(aps.mean()), per_query_ap=aps)
