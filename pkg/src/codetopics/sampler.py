"""Seeded collapsed Gibbs sampler for LDA over a bag-of-codes corpus.

Topic labels are 0-based internally (``0..K-1``). Every random draw comes from
a ``numpy.random.Generator`` over PCG64 seeded with the chain seed: one
integer draw per token for initialization, then one uniform per token per
sweep. The compiled kernel consumes those uniforms, so a run is fully
determined by (matrix, hyperparameters, seed, sweep counts).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit
from scipy.special import gammaln

from codetopics.corpus import CorpusMatrix, EmptyCorpusError

RNG_ALGORITHM = "numpy.PCG64"
SEED_LIMIT = 2 ** 64
# bound on uniforms materialized at once when batching sweeps
_BATCH_UNIFORMS = 1 << 22


class InconsistentStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    """Number of topics and the two symmetric Dirichlet priors.

    ``doc_topic_prior`` defaults to ``50 / K``; ``topic_code_prior`` to 0.1.
    """

    K: int
    doc_topic_prior: float | None = None
    topic_code_prior: float = 0.1

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K}")
        object.__setattr__(self, "K", int(self.K))
        if self.doc_topic_prior is None:
            object.__setattr__(self, "doc_topic_prior", 50.0 / self.K)
        if not self.doc_topic_prior > 0 or not self.topic_code_prior > 0:
            raise ValueError("both priors must be positive")
        object.__setattr__(self, "doc_topic_prior", float(self.doc_topic_prior))
        object.__setattr__(self, "topic_code_prior", float(self.topic_code_prior))

    @classmethod
    def preset(cls, K: int, name: str = "50/K", M: int | None = None,
               topic_code_prior: float = 0.1) -> Hyperparams:
        """Named doc-topic prior presets: ``"50/K"`` (default) or ``"50/M"``."""
        if name == "50/K":
            return cls(K, 50.0 / K, topic_code_prior)
        if name == "50/M":
            if not M:
                raise ValueError("preset 50/M needs the number of patients M")
            return cls(K, 50.0 / M, topic_code_prior)
        raise ValueError(f"unknown prior preset {name!r}")

    def with_k(self, K: int) -> Hyperparams:
        return replace(self, K=K)


@dataclass
class GibbsState:
    """Topic assignment of every token plus the count matrices they imply.

    ``docs``/``codes`` give each token's patient row and code column in
    sampling order; ``z`` its current topic. ``n_tc`` is K x V, ``n_it`` is
    M x K and ``n_t`` has length K.
    """

    docs: np.ndarray
    codes: np.ndarray
    z: np.ndarray
    n_tc: np.ndarray
    n_it: np.ndarray
    n_t: np.ndarray
    seed: int
    rng: np.random.Generator
    sweeps: int = 0

    @property
    def K(self) -> int:
        return self.n_t.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.z.shape[0]

    def copy(self) -> GibbsState:
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = self.rng.bit_generator.state
        return GibbsState(self.docs, self.codes, self.z.copy(), self.n_tc.copy(),
                          self.n_it.copy(), self.n_t.copy(), self.seed, rng, self.sweeps)


@dataclass
class TopicModel:
    phi: np.ndarray
    theta: np.ndarray | None
    hyperparams: Hyperparams
    seed: int
    log_likelihood: float
    burn_in: int
    keep: int
    sweeps: int
    vocabulary: tuple[str, ...]
    n_tc: np.ndarray | None = None
    rng: str = RNG_ALGORITHM
    config: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.phi.shape[0]

    @property
    def V(self) -> int:
        return self.phi.shape[1]


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < SEED_LIMIT:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def tally(docs, codes, z, K: int, M: int, V: int):
    """Recount (n_tc, n_it, n_t) from assignments."""
    n_tc = np.zeros((K, V), dtype=np.int64)
    n_it = np.zeros((M, K), dtype=np.int64)
    np.add.at(n_tc, (z, codes), 1)
    np.add.at(n_it, (docs, z), 1)
    return n_tc, n_it, n_tc.sum(axis=1)


def init_state(matrix: CorpusMatrix, hp: Hyperparams, seed: int) -> GibbsState:
    """Assign every token a uniformly random topic from the seeded generator."""
    seed = _check_seed(seed)
    if matrix.M == 0:
        raise EmptyCorpusError("cannot sample an empty corpus")
    docs, codes = matrix.tokens()
    if hp.K > docs.shape[0]:
        warnings.warn(f"K={hp.K} exceeds the number of tokens ({docs.shape[0]})",
                      RuntimeWarning, stacklevel=2)
    rng = np.random.Generator(np.random.PCG64(seed))
    z = rng.integers(0, hp.K, size=docs.shape[0], dtype=np.int64)
    n_tc, n_it, n_t = tally(docs, codes, z, hp.K, matrix.M, matrix.V)
    return GibbsState(docs, codes, z, n_tc, n_it, n_t, seed, rng)


def check_state(state: GibbsState, full: bool = False) -> None:
    """Raise :class:`InconsistentStateError` if the count identities fail.

    ``full`` additionally recounts everything from ``z``.
    """
    z = state.z
    if z.shape[0] and (z.min() < 0 or z.max() >= state.K):
        raise InconsistentStateError("topic label out of range")
    if state.n_t.sum() != z.shape[0]:
        raise InconsistentStateError("topic totals do not sum to the token count")
    if not np.array_equal(state.n_tc.sum(axis=1), state.n_t):
        raise InconsistentStateError("n_tc rows do not sum to n_t")
    lengths = np.bincount(state.docs, minlength=state.n_it.shape[0])
    if not np.array_equal(state.n_it.sum(axis=1), lengths):
        raise InconsistentStateError("n_it rows do not sum to patient lengths")
    if full:
        n_tc, n_it, n_t = tally(state.docs, state.codes, z, state.K,
                                state.n_it.shape[0], state.n_tc.shape[1])
        if not (np.array_equal(n_tc, state.n_tc) and np.array_equal(n_it, state.n_it)
                and np.array_equal(n_t, state.n_t)):
            raise InconsistentStateError("maintained counts differ from a recount of z")


@njit(cache=True, nogil=True)
def _run_sweeps(docs, codes, z, n_tc, n_it, n_t, uniforms, doc_prior, code_prior,
                marginals, trace):
    # uniforms: (sweeps, tokens); marginals: (tokens, K) tally, trace: (sweeps,
    # tokens) copy of z after each sweep; either may be (0, 0) to skip
    K = n_t.shape[0]
    V = n_tc.shape[1]
    v_prior = V * code_prior
    cum = np.empty(K)
    track = marginals.shape[0] > 0
    keep_trace = trace.shape[0] > 0
    for s in range(uniforms.shape[0]):
        for j in range(z.shape[0]):
            d = docs[j]
            c = codes[j]
            t = z[j]
            n_tc[t, c] -= 1
            n_it[d, t] -= 1
            n_t[t] -= 1
            total = 0.0
            for k in range(K):
                total += (n_tc[k, c] + code_prior) / (n_t[k] + v_prior) * (n_it[d, k] + doc_prior)
                cum[k] = total
            r = uniforms[s, j] * total
            t = 0
            while t < K - 1 and cum[t] <= r:
                t += 1
            z[j] = t
            n_tc[t, c] += 1
            n_it[d, t] += 1
            n_t[t] += 1
            if track:
                marginals[j, t] += 1
        if keep_trace:
            trace[s, :] = z


_NO_TALLY = np.zeros((0, 0), dtype=np.int64)


def _advance(state: GibbsState, hp: Hyperparams, sweeps: int, marginals=None,
             trace=None) -> None:
    tallies = _NO_TALLY if marginals is None else marginals
    per_batch = max(1, _BATCH_UNIFORMS // max(1, state.n_tokens))
    done = 0
    while done < sweeps:
        n = min(per_batch, sweeps - done)
        u = state.rng.random((n, state.n_tokens))
        rows = _NO_TALLY if trace is None else trace[done:done + n]
        _run_sweeps(state.docs, state.codes, state.z, state.n_tc, state.n_it, state.n_t,
                    u, hp.doc_topic_prior, hp.topic_code_prior, tallies, rows)
        done += n
        state.sweeps += n


def _check_compatible(state: GibbsState, matrix: CorpusMatrix, hp: Hyperparams) -> None:
    if state.K != hp.K:
        raise InconsistentStateError(f"state has {state.K} topics, hyperparameters say {hp.K}")
    if state.n_tc.shape[1] != matrix.V or state.n_it.shape[0] != matrix.M:
        raise InconsistentStateError("state dimensions do not match the corpus")
    if state.n_tokens != matrix.n_tokens:
        raise InconsistentStateError("state token count does not match the corpus")


def gibbs_sweep(state: GibbsState, matrix: CorpusMatrix, hp: Hyperparams) -> GibbsState:
    """Resample every token once from its collapsed conditional, in place.

    Returns ``state`` for chaining.
    """
    _check_compatible(state, matrix, hp)
    check_state(state)
    _advance(state, hp, 1)
    return state


def sample_sweeps(state: GibbsState, hp: Hyperparams, sweeps: int,
                  count_topics: bool = False, trace: bool = False):
    """Run ``sweeps`` sweeps in place; equivalent to repeated :func:`gibbs_sweep`.

    With ``count_topics`` returns a tokens x K array counting how often each
    token held each topic after a sweep. With ``trace`` returns the full
    sweeps x tokens history of ``z`` (meant for tiny corpora). Both together
    return ``(counts, trace)``.
    """
    counts = np.zeros((state.n_tokens, state.K), dtype=np.int64) if count_topics else None
    history = np.zeros((sweeps, state.n_tokens), dtype=np.int64) if trace else None
    _advance(state, hp, sweeps, counts, history)
    if count_topics and trace:
        return counts, history
    return counts if count_topics else history


def log_likelihood(state: GibbsState, hp: Hyperparams) -> float:
    """log P(codes | z) with the topic-code distributions integrated out (nats)."""
    eta = hp.topic_code_prior
    V = state.n_tc.shape[1]
    # paired differences so zero counts cancel exactly
    codes_term = (gammaln(state.n_tc + eta) - gammaln(eta)).sum(axis=1)
    topic_term = gammaln(state.n_t + V * eta) - gammaln(V * eta)
    return float((codes_term - topic_term).sum())


def estimate_phi(state: GibbsState, hp: Hyperparams) -> np.ndarray:
    eta = hp.topic_code_prior
    V = state.n_tc.shape[1]
    return (state.n_tc + eta) / (state.n_t[:, None] + V * eta)


def estimate_theta(state: GibbsState, hp: Hyperparams) -> np.ndarray:
    a = hp.doc_topic_prior
    lengths = state.n_it.sum(axis=1)
    return (state.n_it + a) / (lengths[:, None] + hp.K * a)


def run_chain(matrix: CorpusMatrix, hp: Hyperparams, seed: int, burn_in: int = 4000,
              keep: int = 1, average_phi: bool = False) -> TopicModel:
    """Initialize, run ``burn_in + keep`` sweeps and estimate the model.

    Phi and theta come from the final state unless ``average_phi`` is set, in
    which case phi is the mean of the estimates after each kept sweep.
    """
    if burn_in < 0 or keep < 1:
        raise ValueError("need burn_in >= 0 and keep >= 1")
    state = init_state(matrix, hp, seed)
    if average_phi:
        _advance(state, hp, burn_in)
        phi = np.zeros((hp.K, matrix.V))
        for _ in range(keep):
            _advance(state, hp, 1)
            phi += estimate_phi(state, hp)
        phi /= keep
    else:
        _advance(state, hp, burn_in + keep)
        phi = estimate_phi(state, hp)
    check_state(state)
    return TopicModel(
        phi=phi,
        theta=estimate_theta(state, hp),
        hyperparams=hp,
        seed=state.seed,
        log_likelihood=log_likelihood(state, hp),
        burn_in=burn_in,
        keep=keep,
        sweeps=state.sweeps,
        vocabulary=tuple(matrix.codes),
        n_tc=state.n_tc.copy(),
    )


def fit_state(matrix: CorpusMatrix, hp: Hyperparams, seed: int, sweeps: int) -> GibbsState:
    """Run ``sweeps`` sweeps from a fresh state and return the final state."""
    state = init_state(matrix, hp, seed)
    _advance(state, hp, sweeps)
    return state


@njit(cache=True, nogil=True)
def _left_to_right(indptr, codes, phi, doc_prior, particles, uniforms):
    # Per-patient log P(codes | phi, doc prior), patients indptr[0]..indptr[-1]
    K = phi.shape[0]
    n_docs = indptr.shape[0] - 1
    out = np.zeros(n_docs)
    cum = np.empty(K)
    ui = 0
    for d in range(n_docs):
        w = codes[indptr[d]:indptr[d + 1]]
        N = w.shape[0]
        acc = np.zeros(N)
        z = np.zeros(N, dtype=np.int64)
        n_t = np.zeros(K)
        for _ in range(particles):
            n_t[:] = 0.0
            for n in range(N):
                # refresh earlier positions given everything else before n
                for m in range(n):
                    n_t[z[m]] -= 1.0
                    total = 0.0
                    for t in range(K):
                        total += phi[t, w[m]] * (n_t[t] + doc_prior)
                        cum[t] = total
                    r = uniforms[ui] * total
                    ui += 1
                    t = 0
                    while t < K - 1 and cum[t] <= r:
                        t += 1
                    z[m] = t
                    n_t[t] += 1.0
                total = 0.0
                for t in range(K):
                    total += phi[t, w[n]] * (n_t[t] + doc_prior)
                    cum[t] = total
                acc[n] += total / (n + K * doc_prior)
                r = uniforms[ui] * total
                ui += 1
                t = 0
                while t < K - 1 and cum[t] <= r:
                    t += 1
                z[n] = t
                n_t[t] += 1.0
        for n in range(N):
            out[d] += np.log(acc[n] / particles)
    return out


def marginal_log_likelihood(matrix: CorpusMatrix, phi: np.ndarray, doc_topic_prior: float,
                            seed: int, particles: int = 20) -> float:
    """Estimate sum_i log P(codes of patient i | phi, doc-topic prior) in nats.

    Each patient's topic mixture is integrated out against its symmetric
    Dirichlet prior with a left-to-right particle estimator: each position's
    predictive probability is averaged over ``particles`` sequential
    resamplings of the earlier topics. Randomness comes from a PCG64 stream jumped once away from
    ``seed`` so it never overlaps the chain that produced ``phi``.
    """
    if particles < 1:
        raise ValueError("need at least one particle")
    rng = np.random.Generator(np.random.PCG64(_check_seed(seed)).jumped())
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    _, codes = matrix.tokens()
    lengths = matrix.doc_lengths
    indptr = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    draws = lengths * (lengths + 1) // 2 * particles
    total = 0.0
    lo = 0
    while lo < matrix.M:
        hi = lo + 1
        budget = draws[lo]
        while hi < matrix.M and budget + draws[hi] <= _BATCH_UNIFORMS:
            budget += draws[hi]
            hi += 1
        u = rng.random(int(budget))
        total += _left_to_right(indptr[lo:hi + 1], codes, phi, float(doc_topic_prior),
                                particles, u).sum()
        lo = hi
    return float(total)
