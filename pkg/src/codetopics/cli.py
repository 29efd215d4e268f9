"""Command-line entry point: ingest, fit, sweep-k, report, recommend, synth, oracle-check."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from codetopics import formats
from codetopics.corpus import (
    CorpusError,
    build_matrix,
    build_vocabulary,
    corpus_stats,
    parse_records,
    tfidf,
)
from codetopics.metrics import (
    ValidationError,
    jsd_matrix,
    occurrence_split,
    top_codes,
    topic_entropy,
)
from codetopics.recommend import MissingStatisticsError, UnknownCodeError, recommend
from codetopics.sampler import Hyperparams, InconsistentStateError, run_chain
from codetopics.selection import ChainFailure, select_k, sweep_k
from codetopics.synth import EnumerationTooLarge, SynthConfig, generate_corpus, oracle_check, tiny_instance

DATA_ERRORS = (CorpusError, ValidationError, UnknownCodeError, MissingStatisticsError,
               EnumerationTooLarge, InconsistentStateError, ChainFailure, ValueError, OSError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"{self.prog}: usage error: {message}\n")


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2**64)")
    return value


def _fraction(text: str) -> float:
    value = float(text)
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError("must lie in (0, 1]")
    return value


def _threshold(text: str) -> float:
    value = float(text)
    if not 0 <= value < 1:
        raise argparse.ArgumentTypeError("must lie in [0, 1)")
    return value


def _grid(text: str) -> list[int]:
    """``5:100:5`` (inclusive range) or ``2,3,4``."""
    try:
        if ":" in text:
            lo, hi, *step = (int(p) for p in text.split(":"))
            return list(range(lo, hi + 1, step[0] if step else 1))
        return [int(p) for p in text.split(",") if p]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad K grid {text!r}") from None


def _add_priors(p: argparse.ArgumentParser) -> None:
    p.add_argument("--topic-code-prior", type=float, default=0.1)
    p.add_argument("--doc-topic-prior", type=float, default=None,
                   help="fixed value; default comes from --prior-preset")
    p.add_argument("--prior-preset", choices=["50/K", "50/M"], default="50/K")


def _doc_prior(args, K: int, M: int) -> float:
    if args.doc_topic_prior is not None:
        return args.doc_topic_prior
    return 50.0 / (K if args.prior_preset == "50/K" else M)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="codetopics", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="records CSV -> vocabulary, matrix and stats")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--cutoff", type=_fraction, default=0.8)
    p.add_argument("--mode", choices=["count", "binary"], default="count")
    p.add_argument("--top", type=int, default=20, help="most frequent codes to list")
    p.add_argument("--tfidf", action="store_true", help="also write a tf-idf diagnostic")

    p = sub.add_parser("fit", help="fit one model")
    p.add_argument("--corpus", required=True, help="directory written by ingest")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--burn-in", type=int, default=4000)
    p.add_argument("--keep", type=int, default=1)
    p.add_argument("--average-phi", action="store_true")
    p.add_argument("--no-theta", action="store_true")
    _add_priors(p)

    p = sub.add_parser("sweep-k", help="log-likelihood over a K grid")
    p.add_argument("--corpus", required=True)
    p.add_argument("--seed", type=_seed, required=True, help="master seed")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=_grid, default=list(range(5, 101, 5)))
    p.add_argument("--chains", type=int, default=5)
    p.add_argument("--burn-in", type=int, default=4000)
    p.add_argument("--keep", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--criterion", choices=["marginal", "collapsed"], default="marginal")
    p.add_argument("--particles", type=int, default=20)
    _add_priors(p)

    p = sub.add_parser("report", help="topic tables, entropy, JSD and plot data")
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threshold", type=_threshold, default=0.01)

    p = sub.add_parser("recommend", help="codes co-occurring with a query code")
    p.add_argument("--model", required=True)
    p.add_argument("--code", required=True)
    p.add_argument("--mode", choices=["posterior", "likelihood"], default="posterior")
    p.add_argument("--threshold", type=_threshold, default=0.01)

    p = sub.add_parser("synth", help="planted-topic corpus and its ground truth")
    p.add_argument("--k-true", type=int, required=True)
    p.add_argument("--v", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--mean-length", type=float, required=True)
    p.add_argument("--topic-code-concentration", type=float, default=0.01)
    p.add_argument("--doc-topic-concentration", type=float, default=0.1)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out-records", required=True)
    p.add_argument("--out-truth", required=True)

    p = sub.add_parser("oracle-check", help="Gibbs frequencies vs exact enumeration")
    p.add_argument("--seed", type=_seed, default=1)
    p.add_argument("--sweeps", type=int, default=200_000)
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--tolerance", type=float, default=0.02)
    return parser


def _config(args, drop=("out", "out_dir", "out_records", "out_truth")) -> dict:
    return {k: v for k, v in vars(args).items() if k not in drop}


def cmd_ingest(args) -> int:
    with open(args.input, encoding="utf-8", newline="") as fh:
        records = parse_records(fh)
    vocab = build_vocabulary(records, args.cutoff)
    matrix = build_matrix(records, vocab, args.mode)
    stats = corpus_stats(matrix, vocab)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _config(args)
    formats.write_vocabulary(out / "vocabulary.tsv", vocab, cfg)
    formats.write_matrix(out / "matrix.tsv", matrix, cfg)
    formats.write_patients(out / "patients.tsv", matrix, cfg)
    formats.write_stats(out / "stats.tsv", stats, cfg)
    formats.write_lines(out / "top_codes.tsv",
                        ["code\tcount", *(f"{c}\t{n}" for c, n in stats.top(args.top))], cfg)
    if args.tfidf:
        coo = tfidf(matrix).tocoo()
        order = np.lexsort((coo.col, coo.row))
        formats.write_lines(out / "tfidf.tsv", [
            "patient_index\tcode_index\ttfidf",
            *(f"{coo.row[k]}\t{coo.col[k]}\t{formats.real(coo.data[k])}" for k in order)], cfg)
    print(f"patients={matrix.M} codes={matrix.V} tokens={matrix.n_tokens} "
          f"dropped_patients={stats.dropped_patients} dropped_codes={stats.dropped_codes}")
    return 0


def _load_corpus(directory):
    d = Path(directory)
    vocab = formats.read_vocabulary(d / "vocabulary.tsv")
    patients = formats.read_patients(d / "patients.tsv") if (d / "patients.tsv").exists() else None
    return formats.read_matrix(d / "matrix.tsv", vocab.codes, patients)


def cmd_fit(args) -> int:
    matrix = _load_corpus(args.corpus)
    hp = Hyperparams(args.k, _doc_prior(args, args.k, matrix.M), args.topic_code_prior)
    model = run_chain(matrix, hp, args.seed, args.burn_in, args.keep, args.average_phi)
    if args.no_theta:
        model.theta = None
    model.config = {**_config(args), "doc_topic_prior": hp.doc_topic_prior}
    formats.save_model(args.out, model)
    print(f"K={hp.K} log_likelihood={model.log_likelihood:.6f} sweeps={model.sweeps}")
    return 0


def cmd_sweep(args) -> int:
    matrix = _load_corpus(args.corpus)
    doc_prior = args.doc_topic_prior
    if doc_prior is None and args.prior_preset == "50/M":
        doc_prior = 50.0 / matrix.M
    result = sweep_k(matrix, args.grid, args.chains, args.seed, args.burn_in, args.keep,
                     args.topic_code_prior, doc_prior, args.criterion, args.particles,
                     args.workers)
    lines = [f"# criterion {result.criterion}", "K\tchain\tseed\tlog_likelihood"]
    lines += [f"{K}\t{c}\t{s}\t{formats.real(ll)}" for K, c, s, ll in result.rows()]
    lines += ["# summary", "K\tmean_ll"]
    lines += [f"{K}\t{formats.real(m)}" for K, m in result.means.items()]
    if result.criterion != "collapsed":
        lines += ["# collapsed log P(codes | z) summary", "# K\tmean_collapsed_ll"]
        lines += [f"# {K}\t{formats.real(m)}" for K, m in result.collapsed_means.items()]
    formats.write_lines(args.out, lines, _config(args))
    print(select_k(result))
    return 0


def cmd_report(args) -> int:
    model = formats.load_model(args.model)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = {"model": Path(args.model).name, "threshold": args.threshold, "model_config": model.config}
    codes = model.vocabulary
    width = len(str(model.K - 1))
    entropies = []
    for t in range(model.K):
        tag = f"{t:0{width}d}"
        top = top_codes(model.phi[t], args.threshold, codes, t)
        formats.write_lines(out / f"topic_{tag}.tsv", [
            "code\tprobability",
            *(f"{c}\t{formats.real(p)}" for c, p in top.entries),
            f"#cumulative {formats.real(top.cumulative)}"], cfg)
        formats.write_lines(out / f"phi_topic_{tag}.tsv", [
            "code_index\tprobability",
            *(f"{j}\t{formats.real(p)}" for j, p in enumerate(model.phi[t]))], cfg)
        if model.n_tc is not None:
            split = occurrence_split(model.n_tc, model.phi, t, codes, args.threshold)
            formats.write_lines(out / f"occurrence_topic_{tag}.tsv", [
                "code\ttopic_specific\tcorpus_wide",
                *(f"{c}\t{a}\t{b}" for c, a, b in split.rows())], cfg)
        entropies.append(topic_entropy(model.phi[t]))
    formats.write_lines(out / "entropy.tsv", [
        "topic\tentropy_bits",
        *(f"{t}\t{formats.real(h)}" for t, h in enumerate(entropies)),
        f"#uniform {formats.real(math.log2(model.V))}"], cfg)
    summary = jsd_matrix(model.phi)
    formats.write_lines(out / "jsd_matrix.tsv", [
        "# jensen-shannon divergence, nats",
        *("\t".join(formats.real(v) for v in row) for row in summary.matrix)], cfg)
    formats.write_lines(out / "jsd_summary.tsv", [
        "mean\tsd\tmedian\tmin",
        "\t".join(formats.real(v) for v in
                  (summary.mean, summary.sd, summary.median, summary.min))], cfg)
    print(f"wrote report for K={model.K} to {out}")
    return 0


def cmd_recommend(args) -> int:
    model = formats.load_model(args.model)
    rec = recommend(model, args.code, args.mode, args.threshold)
    print(json.dumps(rec.to_dict(), indent=2))
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig(args.k_true, args.v, args.m, args.mean_length,
                      args.topic_code_concentration, args.doc_topic_concentration, args.seed)
    matrix, truth = generate_corpus(cfg)
    formats.write_records(args.out_records, matrix)
    doc = {
        "config": cfg.to_dict(),
        "vocabulary": list(matrix.codes),
        "patients": list(matrix.patients),
        "phi": truth.phi,
        "theta": truth.theta,
        "docs": truth.docs,
        "codes": truth.codes,
        "z": truth.z,
    }
    Path(args.out_truth).write_text(formats.dumps(doc) + "\n", encoding="utf-8")
    print(f"patients={matrix.M} codes={matrix.V} tokens={matrix.n_tokens}")
    return 0


def cmd_oracle(args) -> int:
    matrix, hp = tiny_instance()
    res = oracle_check(matrix, hp, args.seed, args.sweeps, args.burn_in)
    dev = max(res["max_marginal_deviation"], res["max_pair_deviation"])
    print(f"max_marginal_deviation={res['max_marginal_deviation']:.6f} "
          f"max_pair_deviation={res['max_pair_deviation']:.6f}")
    if dev > args.tolerance:
        print(f"error: deviation {dev:.6f} exceeds tolerance {args.tolerance}", file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "sweep-k": cmd_sweep,
    "report": cmd_report,
    "recommend": cmd_recommend,
    "synth": cmd_synth,
    "oracle-check": cmd_oracle,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
