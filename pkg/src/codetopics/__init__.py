"""Topic modeling of coded medical conditions with collapsed Gibbs LDA."""

from codetopics.corpus import (
    CorpusError,
    CorpusMatrix,
    CorpusStats,
    EmptyCorpusError,
    ParseError,
    RecordSet,
    Vocabulary,
    build_matrix,
    build_vocabulary,
    corpus_stats,
    parse_records,
    tfidf,
)
from codetopics.metrics import (
    JsdSummary,
    OccurrenceSplit,
    TopCodes,
    ValidationError,
    jsd,
    jsd_matrix,
    occurrence_split,
    top_codes,
    topic_entropy,
)
from codetopics.recommend import Recommendation, UnknownCodeError, recommend
from codetopics.sampler import (
    GibbsState,
    Hyperparams,
    InconsistentStateError,
    TopicModel,
    estimate_phi,
    estimate_theta,
    gibbs_sweep,
    init_state,
    log_likelihood,
    marginal_log_likelihood,
    run_chain,
    sample_sweeps,
)
from codetopics.selection import KSweepResult, select_k, sweep_k
from codetopics.synth import (
    GroundTruth,
    SynthConfig,
    exact_posterior,
    generate_corpus,
    match_topics,
    oracle_check,
    tiny_instance,
)

__version__ = "0.1.0"
