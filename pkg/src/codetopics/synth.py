"""Synthetic corpora with planted topics, and exact small-instance posteriors."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment
from scipy.special import gammaln, logsumexp

from codetopics.corpus import CorpusMatrix
from codetopics.metrics import ValidationError, jsd
from codetopics.sampler import Hyperparams, init_state, sample_sweeps

ENUMERATION_LIMIT = 10 ** 6


class EnumerationTooLarge(ValueError):
    def __init__(self, size: int):
        super().__init__(f"exact enumeration needs {size} assignments "
                         f"(limit {ENUMERATION_LIMIT})")
        self.size = size


@dataclass(frozen=True)
class SynthConfig:
    K_true: int
    V: int
    M: int
    mean_length: float
    topic_code_concentration: float = 0.01
    doc_topic_concentration: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.K_true, self.V, self.M) < 1 or self.mean_length <= 0:
            raise ValueError("K_true, V, M and mean_length must be positive")
        if self.topic_code_concentration <= 0 or self.doc_topic_concentration <= 0:
            raise ValueError("concentrations must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GroundTruth:
    phi: np.ndarray  # K_true x V
    theta: np.ndarray  # M x K_true
    docs: np.ndarray  # per token, generation order
    codes: np.ndarray
    z: np.ndarray


def sample_dirichlet(rng: np.random.Generator, concentration: float, dim: int,
                     size: int) -> np.ndarray:
    """Symmetric Dirichlet draws that stay valid for tiny concentrations.

    Uses Gamma(a) = Gamma(a + 1) * U**(1/a) in log space, so no row collapses
    to all zeros when ``a`` is far below 1.
    """
    a = float(concentration)
    g = rng.standard_gamma(a + 1.0, size=(size, dim))
    u = rng.random((size, dim))
    log_g = np.log(g) + np.log(u) / a
    log_g -= logsumexp(log_g, axis=1, keepdims=True)
    p = np.exp(log_g)
    return p / p.sum(axis=1, keepdims=True)


def _truncated_poisson(rng: np.random.Generator, mean: float, size: int) -> np.ndarray:
    out = rng.poisson(mean, size=size)
    bad = out < 1
    while bad.any():
        out[bad] = rng.poisson(mean, size=int(bad.sum()))
        bad = out < 1
    return out.astype(np.int64)


def generate_corpus(cfg: SynthConfig) -> tuple[CorpusMatrix, GroundTruth]:
    """Draw a corpus from the LDA generative process.

    Topic-code rows and patient-topic rows come from symmetric Dirichlets;
    each patient gets a Poisson length (resampled while zero) and every token
    draws its topic from the patient's mixture, then its code from that topic.
    """
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    phi = sample_dirichlet(rng, cfg.topic_code_concentration, cfg.V, cfg.K_true)
    theta = sample_dirichlet(rng, cfg.doc_topic_concentration, cfg.K_true, cfg.M)
    lengths = _truncated_poisson(rng, cfg.mean_length, cfg.M)
    docs = np.repeat(np.arange(cfg.M, dtype=np.int64), lengths)

    # inverse-CDF draws; searchsorted on cumulative rows
    z_cdf = np.cumsum(theta, axis=1)
    u = rng.random(docs.shape[0])
    z = np.minimum((z_cdf[docs] <= u[:, None]).sum(axis=1), cfg.K_true - 1)
    c_cdf = np.cumsum(phi, axis=1)
    u = rng.random(docs.shape[0])
    codes = np.empty_like(z)
    for t in range(cfg.K_true):
        sel = z == t
        codes[sel] = np.minimum(np.searchsorted(c_cdf[t], u[sel], side="right"), cfg.V - 1)

    counts = sp.csr_matrix((np.ones(docs.shape[0], dtype=np.int64), (docs, codes)),
                           shape=(cfg.M, cfg.V), dtype=np.int64)
    counts.sum_duplicates()
    counts.sort_indices()
    wc, wp = len(str(cfg.V - 1)), len(str(cfg.M - 1))
    matrix = CorpusMatrix(
        counts,
        tuple(f"c{j:0{wc}d}" for j in range(cfg.V)),
        tuple(f"p{i:0{wp}d}" for i in range(cfg.M)),
    )
    return matrix, GroundTruth(phi, theta, docs, codes, z)


def _dm_log(counts: np.ndarray, prior: float) -> np.ndarray:
    """Dirichlet-multinomial log marginal over the last axis (sequence form)."""
    dim = counts.shape[-1]
    return (gammaln(dim * prior) - dim * gammaln(prior)
            + gammaln(counts + prior).sum(axis=-1)
            - gammaln(counts.sum(axis=-1) + dim * prior))


def exact_joint(matrix: CorpusMatrix, hp: Hyperparams, chunk: int = 1 << 15):
    """Every assignment of topics to tokens with its exact posterior probability.

    Tokens follow the sampler's order. Returns ``(assignments, probs)`` with
    ``assignments`` of shape (K**T, T).
    """
    docs, codes = matrix.tokens()
    T, K = docs.shape[0], hp.K
    size = K ** T
    if size > ENUMERATION_LIMIT:
        raise EnumerationTooLarge(size)
    place = K ** np.arange(T - 1, -1, -1, dtype=np.int64)
    all_idx = np.arange(size, dtype=np.int64)
    Z = ((all_idx[:, None] // place[None, :]) % K).astype(np.min_scalar_type(K - 1))
    code_hot = np.eye(matrix.V)[codes]  # T x V
    doc_hot = np.eye(matrix.M)[docs]  # T x M
    logp = np.empty(size)
    for lo in range(0, size, chunk):
        hot = np.eye(K)[Z[lo:lo + chunk]]  # n x T x K
        n_tc = np.einsum("ntk,tv->nkv", hot, code_hot)
        n_it = np.einsum("ntk,tm->nmk", hot, doc_hot)
        logp[lo:lo + chunk] = (_dm_log(n_tc, hp.topic_code_prior).sum(axis=1)
                               + _dm_log(n_it, hp.doc_topic_prior).sum(axis=1))
    probs = np.exp(logp - logsumexp(logp))
    return Z, probs / probs.sum()


def exact_posterior(matrix: CorpusMatrix, hp: Hyperparams) -> np.ndarray:
    """Per-token marginals P(z_j = t | all codes) by exhaustive enumeration.

    Returns a T x K array. Refuses instances with more than 10**6 joint
    assignments.
    """
    Z, probs = exact_joint(matrix, hp)
    T = Z.shape[1]
    out = np.zeros((T, hp.K))
    for t in range(hp.K):
        out[:, t] = probs @ (Z == t)
    return out / out.sum(axis=1, keepdims=True)


def match_topics(phi_est, phi_true):
    """Optimal one-to-one matching of estimated to true topics under JSD cost.

    Returns ``(perm, costs, mean)`` where estimated row ``i`` is paired with
    true row ``perm[i]`` at cost ``costs[i]``.
    """
    phi_est = np.asarray(phi_est, dtype=np.float64)
    phi_true = np.asarray(phi_true, dtype=np.float64)
    if phi_est.ndim != 2 or phi_est.shape != phi_true.shape:
        raise ValidationError(f"shape mismatch: {phi_est.shape} vs {phi_true.shape}")
    K = phi_est.shape[0]
    cost = np.array([[jsd(phi_est[a], phi_true[b]) for b in range(K)] for a in range(K)])
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(K, dtype=np.int64)
    perm[rows] = cols
    costs = cost[np.arange(K), perm]
    return perm, costs, float(costs.mean())


def tiny_instance() -> tuple[CorpusMatrix, Hyperparams]:
    """2 patients, 4 tokens, V=3, K=2 with priors (0.1 topic-code, 25 doc-topic)."""
    matrix = CorpusMatrix.from_dense([[2, 0, 0], [0, 1, 1]], codes=("a", "b", "c"),
                                     patients=("p1", "p2"))
    return matrix, Hyperparams(2, doc_topic_prior=25.0, topic_code_prior=0.1)


def pair_agreement(assignments: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """P(z_a == z_b) for every token pair, from sampled or enumerated assignments."""
    Z = np.asarray(assignments)
    w = np.full(Z.shape[0], 1.0 / Z.shape[0]) if weights is None else np.asarray(weights)
    same = Z[:, :, None] == Z[:, None, :]
    return np.einsum("n,nab->ab", w, same)


def oracle_check(matrix: CorpusMatrix, hp: Hyperparams, seed: int, sweeps: int = 200_000,
                 burn_in: int = 1000) -> dict:
    """Compare long-run Gibbs frequencies with exact enumeration.

    Returns the largest absolute deviation of per-token marginals and of
    pairwise same-topic probabilities, plus both marginal tables.
    """
    exact = exact_posterior(matrix, hp)
    Z, probs = exact_joint(matrix, hp)
    state = init_state(matrix, hp, seed)
    sample_sweeps(state, hp, burn_in)
    counts, history = sample_sweeps(state, hp, sweeps, count_topics=True, trace=True)
    gibbs = counts / sweeps
    pair_dev = np.abs(pair_agreement(history) - pair_agreement(Z, probs)).max()
    return {
        "max_marginal_deviation": float(np.abs(gibbs - exact).max()),
        "max_pair_deviation": float(pair_dev),
        "exact": exact,
        "gibbs": gibbs,
    }
