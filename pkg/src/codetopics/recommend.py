"""Suggest co-occurring codes from the topic a query code is most tied to."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from codetopics.metrics import top_codes
from codetopics.sampler import TopicModel

MODES = ("posterior", "likelihood")


class UnknownCodeError(KeyError):
    def __init__(self, code: str, nearest: list[str]):
        hint = f"; nearest: {', '.join(nearest)}" if nearest else ""
        super().__init__(f"unknown code {code!r}{hint}")
        self.code, self.nearest = code, nearest

    def __str__(self):
        return self.args[0]


class MissingStatisticsError(ValueError):
    pass


@dataclass(frozen=True)
class Recommendation:
    query: str
    mode: str
    topics: tuple[tuple[int, float], ...]  # (topic, score), best first
    suggestions: tuple[tuple[str, float], ...]

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "mode": self.mode,
            "topics": [{"id": t, "score": s} for t, s in self.topics],
            "suggestions": [{"code": c, "probability": p} for c, p in self.suggestions],
        }


def edit_distance(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def nearest_codes(code: str, vocabulary, n: int = 3) -> list[str]:
    return sorted(vocabulary, key=lambda v: (edit_distance(code, v), v))[:n]


def recommend(model: TopicModel, code: str, mode: str = "posterior",
              threshold: float = 0.01) -> Recommendation:
    """Rank topics for ``code`` and list the leading topic's other top-codes.

    ``likelihood`` scores topic t by phi[t, code]. ``posterior`` weights that by
    the topic's share of all tokens (from the stored topic-code counts) and
    normalizes over topics.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if not 0 <= threshold < 1:
        raise ValueError(f"threshold must lie in [0, 1), got {threshold}")
    vocab = list(model.vocabulary)
    try:
        j = vocab.index(code)
    except ValueError:
        raise UnknownCodeError(code, nearest_codes(code, vocab)) from None

    column = np.asarray(model.phi)[:, j]
    if mode == "likelihood":
        scores = column
    else:
        if model.n_tc is None:
            raise MissingStatisticsError("posterior mode needs the model's topic-code counts")
        n_t = np.asarray(model.n_tc).sum(axis=1).astype(np.float64)
        weighted = column * (n_t / n_t.sum())
        scores = weighted / weighted.sum()
    order = sorted(range(model.K), key=lambda t: (-scores[t], t))
    best = order[0]
    top = top_codes(model.phi[best], threshold, vocab, best)
    return Recommendation(
        query=code,
        mode=mode,
        topics=tuple((t, float(scores[t])) for t in order),
        suggestions=tuple((c, p) for c, p in top.entries if c != code),
    )
