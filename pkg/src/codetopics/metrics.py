"""Topic tightness and distinctiveness measures.

Entropy is reported in bits, Jensen-Shannon divergence in nats (bounded by
ln 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

LN2 = math.log(2.0)
NORM_TOL = 1e-6


class ValidationError(ValueError):
    pass


def _distribution(p, name: str = "distribution") -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValidationError(f"{name} must be a non-empty vector")
    if not np.isfinite(p).all() or (p < 0).any():
        raise ValidationError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > NORM_TOL:
        raise ValidationError(f"{name} sums to {p.sum():.9g}, not 1")
    return p


@dataclass(frozen=True)
class TopCodes:
    topic: int
    entries: tuple[tuple[str, float], ...]
    threshold: float
    cumulative: float

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def codes(self) -> list[str]:
        return [c for c, _ in self.entries]


def top_codes(phi_row, threshold: float = 0.01, codes: Sequence[str] | None = None,
              topic: int = 0) -> TopCodes:
    """Codes whose probability exceeds ``threshold``, most probable first.

    Ties in probability keep vocabulary order. Without ``codes`` the entries
    are labeled by column index.
    """
    p = _distribution(phi_row, "phi row")
    if not 0 <= threshold < 1:
        raise ValidationError(f"threshold must lie in [0, 1), got {threshold}")
    labels = list(codes) if codes is not None else [str(j) for j in range(p.size)]
    if len(labels) != p.size:
        raise ValidationError("codes and phi row differ in length")
    idx = np.flatnonzero(p > threshold)
    idx = idx[np.argsort(-p[idx], kind="stable")]
    entries = tuple((labels[j], float(p[j])) for j in idx)
    return TopCodes(topic, entries, threshold, float(sum(v for _, v in entries)))


def topic_entropy(phi_row) -> float:
    """Shannon entropy in bits, with 0 log 0 = 0."""
    p = _distribution(phi_row, "phi row")
    nz = p[p > 0]
    h = float(-(nz * np.log2(nz)).sum())
    return max(h, 0.0)


def _kl_to_mean(p: np.ndarray, m: np.ndarray) -> float:
    mask = p > 0
    return float((p[mask] * np.log(p[mask] / m[mask])).sum())


def jsd(x, y) -> float:
    """Jensen-Shannon divergence in nats, in [0, ln 2]."""
    x = _distribution(x, "x")
    y = _distribution(y, "y")
    if x.shape != y.shape:
        raise ValidationError(f"dimension mismatch: {x.size} vs {y.size}")
    m = (x + y) / 2.0
    d = 0.5 * _kl_to_mean(x, m) + 0.5 * _kl_to_mean(y, m)
    return min(max(d, 0.0), LN2)


@dataclass(frozen=True)
class JsdSummary:
    matrix: np.ndarray
    mean: float
    sd: float
    median: float
    min: float

    @property
    def n_pairs(self) -> int:
        K = self.matrix.shape[0]
        return K * (K - 1) // 2


def jsd_matrix(phi) -> JsdSummary:
    """Pairwise JSD between topic rows with statistics over distinct pairs.

    ``sd`` is the population standard deviation; with a single topic every
    statistic is NaN.
    """
    phi = np.asarray(phi, dtype=np.float64)
    K = phi.shape[0]
    out = np.zeros((K, K))
    pairs = []
    for a in range(K):
        for b in range(a + 1, K):
            out[a, b] = out[b, a] = jsd(phi[a], phi[b])
            pairs.append(out[a, b])
    if not pairs:
        nan = float("nan")
        return JsdSummary(out, nan, nan, nan, nan)
    vals = np.asarray(pairs)
    return JsdSummary(out, float(vals.mean()), float(vals.std()),
                      float(np.median(vals)), float(vals.min()))


@dataclass(frozen=True)
class OccurrenceSplit:
    topic: int
    codes: tuple[str, ...]
    topic_counts: tuple[int, ...]
    corpus_counts: tuple[int, ...]

    def rows(self):
        return list(zip(self.codes, self.topic_counts, self.corpus_counts))


def occurrence_split(n_tc, phi, topic: int, codes: Sequence[str],
                     threshold: float = 0.01) -> OccurrenceSplit:
    """Topic-specific versus corpus-wide occurrences of a topic's top-codes.

    ``n_tc`` is the K x V topic-code count matrix of a final Gibbs state; the
    corpus-wide count of a code is its column sum.
    """
    n_tc = np.asarray(n_tc)
    K = n_tc.shape[0]
    if not 0 <= topic < K:
        raise ValidationError(f"topic {topic} out of range for K={K}")
    index = {c: j for j, c in enumerate(codes)}
    top = top_codes(np.asarray(phi)[topic], threshold, codes, topic)
    cols = [index[c] for c in top.codes]
    corpus = n_tc.sum(axis=0)
    return OccurrenceSplit(
        topic=topic,
        codes=tuple(top.codes),
        topic_counts=tuple(int(n_tc[topic, j]) for j in cols),
        corpus_counts=tuple(int(corpus[j]) for j in cols),
    )
