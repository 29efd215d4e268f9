import itertools
import math
import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from codetopics.corpus import CorpusMatrix, EmptyCorpusError
from codetopics.sampler import (
    GibbsState,
    Hyperparams,
    InconsistentStateError,
    check_state,
    estimate_phi,
    estimate_theta,
    fit_state,
    gibbs_sweep,
    init_state,
    log_likelihood,
    marginal_log_likelihood,
    run_chain,
    sample_sweeps,
    tally,
)
from codetopics.synth import SynthConfig, generate_corpus, match_topics


def brute_tally(state, K, M, V):
    n_tc = np.zeros((K, V), dtype=np.int64)
    n_it = np.zeros((M, K), dtype=np.int64)
    for d, c, t in zip(state.docs, state.codes, state.z):
        n_tc[t, c] += 1
        n_it[d, t] += 1
    return n_tc, n_it, n_tc.sum(axis=1)


def brute_log_likelihood(n_tc, eta):
    # same closed form, summed term by term in reversed order with math.lgamma
    total = 0.0
    K, V = len(n_tc), len(n_tc[0])
    for t in reversed(range(K)):
        row = [int(x) for x in n_tc[t]]
        term = math.lgamma(V * eta) - math.lgamma(sum(row) + V * eta)
        for c in reversed(range(V)):
            term += math.lgamma(row[c] + eta) - math.lgamma(eta)
        total += term
    return total


@pytest.fixture(scope="module")
def small():
    matrix, _ = generate_corpus(SynthConfig(K_true=3, V=12, M=15, mean_length=6, seed=4))
    return matrix


class TestHyperparams:
    def test_defaults(self):
        hp = Hyperparams(4)
        assert hp.doc_topic_prior == 12.5
        assert hp.topic_code_prior == 0.1

    def test_presets(self):
        assert Hyperparams.preset(10).doc_topic_prior == 5.0
        assert Hyperparams.preset(10, "50/M", M=200).doc_topic_prior == 0.25
        with pytest.raises(ValueError):
            Hyperparams.preset(10, "50/M")
        with pytest.raises(ValueError):
            Hyperparams.preset(10, "1/K")

    @pytest.mark.parametrize("args", [(0,), (2.5,), (2, -1.0), (2, 1.0, 0.0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            Hyperparams(*args)


class TestInitState:
    def test_conservation(self):
        m = CorpusMatrix.from_dense([[3, 1]])
        s = init_state(m, Hyperparams(2), 5)
        assert s.n_t.sum() == 4 and s.n_it[0].sum() == 4

    def test_determinism(self, small):
        a = init_state(small, Hyperparams(3), 11)
        b = init_state(small, Hyperparams(3), 11)
        assert np.array_equal(a.z, b.z)
        assert a.rng.bit_generator.state == b.rng.bit_generator.state

    @pytest.mark.parametrize("seed", [0, 1, 2**63, 2**64 - 1])
    def test_recount_oracle(self, seed):
        m = CorpusMatrix.from_dense([[2, 1, 0]])
        s = init_state(m, Hyperparams(2), seed)
        n_tc, n_it, n_t = brute_tally(s, 2, 1, 3)
        assert np.array_equal(s.n_tc, n_tc)
        assert np.array_equal(s.n_it, n_it)
        assert np.array_equal(s.n_t, n_t)

    def test_bad_seed(self, small):
        for seed in (-1, 2**64):
            with pytest.raises(ValueError):
                init_state(small, Hyperparams(2), seed)

    def test_more_topics_than_tokens_warns(self):
        m = CorpusMatrix.from_dense([[1, 1]])
        with pytest.warns(RuntimeWarning):
            init_state(m, Hyperparams(5), 0)

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpusError):
            CorpusMatrix.from_dense(np.zeros((0, 3), dtype=int))
        m = CorpusMatrix(sp.csr_matrix((0, 3), dtype=np.int64), ("a", "b", "c"), (), "count")
        with pytest.raises(EmptyCorpusError):
            init_state(m, Hyperparams(2), 0)


class TestGibbsSweep:
    def test_k1_is_fixed_point(self, small):
        hp = Hyperparams(1)
        s = init_state(small, hp, 3)
        before = s.copy()
        gibbs_sweep(s, small, hp)
        assert s.sweeps == before.sweeps + 1
        assert np.array_equal(s.z, before.z) and np.array_equal(s.n_tc, before.n_tc)

    def test_invariants_every_sweep(self, small):
        hp = Hyperparams(4)
        s = init_state(small, hp, 8)
        total = s.n_t.sum()
        for _ in range(100):
            gibbs_sweep(s, small, hp)
            check_state(s, full=True)
            assert s.n_t.sum() == total
            n_tc, n_it, n_t = brute_tally(s, 4, small.M, small.V)
            assert np.array_equal(s.n_tc, n_tc) and np.array_equal(s.n_it, n_it)
        assert s.sweeps == 100

    def test_determinism(self, small):
        hp = Hyperparams(3)
        a, b = fit_state(small, hp, 21, 50), fit_state(small, hp, 21, 50)
        assert a.z.tobytes() == b.z.tobytes()
        assert a.n_tc.tobytes() == b.n_tc.tobytes()
        c = fit_state(small, hp, 22, 50)
        assert c.z.tobytes() != a.z.tobytes()

    def test_batched_equals_single(self, small):
        hp = Hyperparams(3)
        a = init_state(small, hp, 2)
        for _ in range(7):
            gibbs_sweep(a, small, hp)
        b = fit_state(small, hp, 2, 7)
        assert np.array_equal(a.z, b.z) and a.sweeps == b.sweeps == 7

    def test_single_token_conditional(self):
        m = CorpusMatrix.from_dense([[1]])
        hp = Hyperparams(2, 1.0, 0.1)
        with pytest.warns(RuntimeWarning):
            s = init_state(m, hp, 99)
        counts = sample_sweeps(s, hp, 10_000, count_topics=True)
        freq = counts[0, 0] / 10_000
        assert abs(freq - 0.5) <= 0.02

    def test_rejects_corrupt_state(self, small):
        hp = Hyperparams(3)
        s = init_state(small, hp, 0)
        s.n_tc[0, 0] += 1
        with pytest.raises(InconsistentStateError):
            gibbs_sweep(s, small, hp)

    def test_rejects_mismatched_hyperparams(self, small):
        s = init_state(small, Hyperparams(3), 0)
        with pytest.raises(InconsistentStateError):
            gibbs_sweep(s, small, Hyperparams(4))

    def test_trace(self, small):
        hp = Hyperparams(2)
        s = init_state(small, hp, 6)
        ref = s.copy()
        trace = sample_sweeps(s, hp, 5, trace=True)
        assert trace.shape == (5, small.n_tokens)
        for row in trace:
            gibbs_sweep(ref, small, hp)
            assert np.array_equal(row, ref.z)


class TestLogLikelihood:
    def _state(self, n_tc):
        n_tc = np.asarray(n_tc, dtype=np.int64)
        K, V = n_tc.shape
        return GibbsState(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64),
                          n_tc, np.zeros((1, K), np.int64), n_tc.sum(axis=1), 0,
                          np.random.default_rng(0))

    def test_empty_is_zero(self):
        assert log_likelihood(self._state([[0, 0, 0], [0, 0, 0]]), Hyperparams(2)) == 0.0

    def test_closed_form(self):
        ll = log_likelihood(self._state([[2, 1]]), Hyperparams(1, 1.0, 1.0))
        assert ll == pytest.approx(math.log(1 / 12), abs=1e-12)

    def test_matches_brute(self, small):
        hp = Hyperparams(2, None, 0.1)
        s = fit_state(small, hp, 5, 10)
        assert abs(log_likelihood(s, hp) - brute_log_likelihood(s.n_tc, 0.1)) < 1e-10

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.lists(st.integers(0, 40), min_size=3, max_size=3), min_size=2,
                    max_size=4), st.sampled_from([0.01, 0.1, 1.0, 3.5]))
    def test_brute_and_relabel(self, rows, eta):
        hp = Hyperparams(len(rows), None, eta)
        ll = log_likelihood(self._state(rows), hp)
        assert abs(ll - brute_log_likelihood(rows, eta)) < 1e-10 * max(1.0, abs(ll))
        for perm in itertools.permutations(range(len(rows))):
            permuted = [rows[p] for p in perm]
            assert log_likelihood(self._state(permuted), hp) == pytest.approx(ll, abs=1e-9)


class TestEstimators:
    def test_phi_example(self):
        s = TestLogLikelihood()._state([[3, 1], [0, 0]])
        phi = estimate_phi(s, Hyperparams(2, 1.0, 0.1))
        assert phi[0] == pytest.approx([3.1 / 4.2, 1.1 / 4.2], abs=1e-15)
        assert phi[0] == pytest.approx([0.7381, 0.2619], abs=1e-4)
        assert phi[1].tolist() == [0.5, 0.5]

    def test_theta_example(self):
        m = CorpusMatrix.from_dense([[10]])
        hp = Hyperparams(2, 0.1, 0.1)
        s = init_state(m, hp, 0)
        s.z[:] = 1
        s.n_tc, s.n_it, s.n_t = tally(s.docs, s.codes, s.z, 2, 1, 1)
        theta = estimate_theta(s, hp)
        assert theta[0] == pytest.approx([0.1 / 10.2, 10.1 / 10.2], abs=1e-15)
        assert theta[0] == pytest.approx([0.0098, 0.9902], abs=1e-4)

    def test_even_split_is_uniform(self):
        m = CorpusMatrix.from_dense([[2, 2]])
        hp = Hyperparams(2, 0.3, 0.1)
        s = init_state(m, hp, 0)
        s.z[:] = [0, 1, 0, 1]
        s.n_tc, s.n_it, s.n_t = tally(s.docs, s.codes, s.z, 2, 1, 2)
        assert estimate_theta(s, hp)[0].tolist() == [0.5, 0.5]

    def test_rows_normalized(self, small):
        hp = Hyperparams(5)
        s = fit_state(small, hp, 1, 20)
        for mat in (estimate_phi(s, hp), estimate_theta(s, hp)):
            assert (mat >= 0).all()
            assert np.abs(mat.sum(axis=1) - 1).max() < 1e-9


class TestRunChain:
    def test_defaults_and_record(self, small):
        import inspect
        params = inspect.signature(run_chain).parameters
        assert params["burn_in"].default == 4000 and params["keep"].default == 1
        model = run_chain(small, Hyperparams(3), 17, burn_in=20, keep=1)
        assert model.seed == 17 and model.sweeps == 21 and model.burn_in == 20
        assert model.vocabulary == small.codes
        assert model.n_tc.sum() == small.n_tokens

    def test_bit_identical(self, small):
        a = run_chain(small, Hyperparams(3), 3, burn_in=30)
        b = run_chain(small, Hyperparams(3), 3, burn_in=30)
        assert a.phi.tobytes() == b.phi.tobytes()
        assert a.theta.tobytes() == b.theta.tobytes()
        assert a.log_likelihood == b.log_likelihood

    def test_average_phi(self, small):
        model = run_chain(small, Hyperparams(3), 3, burn_in=10, keep=5, average_phi=True)
        assert np.abs(model.phi.sum(axis=1) - 1).max() < 1e-9

    def test_bad_arguments(self, small):
        with pytest.raises(ValueError):
            run_chain(small, Hyperparams(2), 0, burn_in=-1)
        with pytest.raises(ValueError):
            run_chain(small, Hyperparams(2), 0, keep=0)

    def test_two_topic_recovery(self):
        matrix, truth = generate_corpus(
            SynthConfig(K_true=2, V=20, M=200, mean_length=20, seed=12))
        model = run_chain(matrix, Hyperparams(2), 1, burn_in=300)
        _, costs, mean = match_topics(model.phi, truth.phi)
        assert mean < 0.1 and max(costs) < 0.1


def exact_doc_likelihood(words, phi, alpha):
    # sum over every topic assignment of prod phi * Dirichlet-multinomial(z counts)
    K = phi.shape[0]
    N = len(words)
    total = 0.0
    for z in itertools.product(range(K), repeat=N):
        counts = np.bincount(z, minlength=K)
        prior = (math.lgamma(K * alpha) - math.lgamma(N + K * alpha)
                 + sum(math.lgamma(n + alpha) - math.lgamma(alpha) for n in counts))
        total += math.exp(prior) * np.prod([phi[t, w] for t, w in zip(z, words)])
    return math.log(total)


class TestMarginalLikelihood:
    def test_single_token_is_exact(self):
        phi = np.array([[0.7, 0.2, 0.1], [0.1, 0.1, 0.8]])
        m = CorpusMatrix.from_dense([[1, 0, 0], [0, 0, 1]])
        got = marginal_log_likelihood(m, phi, 0.5, seed=3, particles=1)
        want = math.log(0.4) + math.log(0.45)
        assert got == pytest.approx(want, abs=1e-12)

    def test_against_enumeration(self):
        phi = np.array([[0.6, 0.3, 0.05, 0.05], [0.05, 0.05, 0.3, 0.6], [0.25, 0.25, 0.25, 0.25]])
        dense = [[2, 1, 0, 1], [0, 0, 3, 1], [1, 1, 1, 1]]
        m = CorpusMatrix.from_dense(dense)
        _, codes = m.tokens()
        docs = np.split(codes, np.cumsum(m.doc_lengths)[:-1])
        alpha = 0.4
        want = sum(exact_doc_likelihood(list(w), phi, alpha) for w in docs)
        got = marginal_log_likelihood(m, phi, alpha, seed=0, particles=2000)
        assert got == pytest.approx(want, abs=0.01)

    def test_deterministic(self, small):
        phi = run_chain(small, Hyperparams(3), 0, burn_in=10).phi
        a = marginal_log_likelihood(small, phi, 50 / 3, seed=5)
        assert a == marginal_log_likelihood(small, phi, 50 / 3, seed=5)
        with pytest.raises(ValueError):
            marginal_log_likelihood(small, phi, 50 / 3, seed=5, particles=0)


def test_tally_shapes():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        n_tc, n_it, n_t = tally(np.array([0, 0, 1]), np.array([0, 2, 1]), np.array([1, 0, 1]),
                                2, 2, 3)
    assert n_tc.tolist() == [[0, 0, 1], [1, 1, 0]]
    assert n_it.tolist() == [[1, 1], [0, 1]]
    assert n_t.tolist() == [1, 2]
