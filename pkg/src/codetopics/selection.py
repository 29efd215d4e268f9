"""Choosing the number of topics by mean data log-likelihood over seeded chains.

Two per-chain scores are available. ``marginal`` (default) estimates
sum_i log P(codes of patient i | phi, doc-topic prior), the patient mixtures
integrated out. ``collapsed`` is log P(codes | z) from the final Gibbs state.
The collapsed score keeps rising as topics split into single-code fragments,
because it carries no cost for spreading one patient's codes over many
topics, so its maximum drifts to the top of the grid on sparse corpora. Both
are always recorded.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from codetopics.corpus import CorpusMatrix
from codetopics.sampler import SEED_LIMIT, Hyperparams, marginal_log_likelihood, run_chain

DEFAULT_GRID = tuple(range(5, 101, 5))
CRITERIA = ("marginal", "collapsed")


class ChainFailure(RuntimeError):
    def __init__(self, K: int, seed: int, cause: Exception):
        super().__init__(f"chain K={K} seed={seed} failed: {cause}")
        self.K, self.seed = K, seed


def chain_seed(master_seed: int, chain: int) -> int:
    """Seed of chain ``chain``: master seed plus chain index, modulo 2**64."""
    return (int(master_seed) + chain) % SEED_LIMIT


@dataclass(frozen=True)
class KSweepResult:
    grid: tuple[int, ...]
    chains: int
    runs: dict[int, tuple[tuple[int, float], ...]]  # K -> ((seed, log-likelihood), ...)
    criterion: str = "marginal"
    collapsed: dict[int, tuple[float, ...]] | None = None  # K -> log P(codes | z) per chain

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise ValueError("grid must be strictly increasing")
        for K in self.grid:
            if len(self.runs.get(K, ())) != self.chains:
                raise ValueError(f"K={K} does not have {self.chains} chain results")

    @property
    def means(self) -> dict[int, float]:
        return {K: float(np.mean([ll for _, ll in self.runs[K]])) for K in self.grid}

    @property
    def collapsed_means(self) -> dict[int, float] | None:
        if self.collapsed is None:
            return None
        return {K: float(np.mean(self.collapsed[K])) for K in self.grid}

    def rows(self):
        """``(K, chain, seed, log_likelihood)`` in grid then chain order."""
        for K in self.grid:
            for chain, (seed, ll) in enumerate(self.runs[K]):
                yield K, chain, seed, ll


def sweep_k(matrix: CorpusMatrix, grid: Sequence[int] = DEFAULT_GRID, chains: int = 5,
            master_seed: int = 0, burn_in: int = 4000, keep: int = 1,
            topic_code_prior: float = 0.1, doc_topic_prior: float | None = None,
            criterion: str = "marginal", particles: int = 20,
            workers: int = 1) -> KSweepResult:
    """Fit ``chains`` chains for every K in ``grid`` and record their log-likelihoods.

    ``doc_topic_prior=None`` means ``50 / K`` for each K. Chain ``c`` uses
    seed ``master_seed + c`` at every K. ``particles`` sets the estimator
    size for the marginal criterion. Chains run on a thread pool when
    ``workers > 1``; the compiled kernels release the GIL.
    """
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}, got {criterion!r}")
    grid = tuple(int(K) for K in grid)
    if not grid:
        raise ValueError("K grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("K grid must be strictly increasing")
    if grid[0] < 2:
        raise ValueError("every K in the grid must be >= 2")
    if chains < 1:
        raise ValueError("need at least one chain")

    jobs = [(K, c, chain_seed(master_seed, c)) for K in grid for c in range(chains)]

    def one(job):
        K, _, seed = job
        hp_k = Hyperparams(K, doc_topic_prior, topic_code_prior)
        try:
            model = run_chain(matrix, hp_k, seed, burn_in, keep)
            if criterion == "collapsed":
                return model.log_likelihood, model.log_likelihood
            marginal = marginal_log_likelihood(matrix, model.phi, hp_k.doc_topic_prior,
                                               seed, particles)
            return marginal, model.log_likelihood
        except Exception as exc:
            raise ChainFailure(K, seed, exc) from exc

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            lls = list(pool.map(one, jobs))
    else:
        lls = [one(job) for job in jobs]

    runs: dict[int, list] = {K: [None] * chains for K in grid}
    collapsed: dict[int, list] = {K: [None] * chains for K in grid}
    for (K, c, seed), (score, ll) in zip(jobs, lls):
        runs[K][c] = (seed, score)
        collapsed[K][c] = ll
    return KSweepResult(grid, chains, {K: tuple(v) for K, v in runs.items()}, criterion,
                        {K: tuple(v) for K, v in collapsed.items()})


def select_k(result: KSweepResult, means: dict[int, float] | None = None) -> int:
    """K with the largest mean log-likelihood; ties go to the smaller K.

    ``means`` overrides the result's own per-K means, e.g. with
    ``result.collapsed_means``.
    """
    means = result.means if means is None else means
    if not means:
        raise ValueError("empty sweep result")
    return min(means, key=lambda K: (-means[K], K))
