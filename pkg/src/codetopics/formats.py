"""Readers and writers for the on-disk formats (TSV, CSV and model JSON).

Every TSV starts with ``# config <json>`` when a config is supplied, so a
result can be traced back to the parameters that produced it.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from codetopics.corpus import CorpusError, CorpusMatrix, CorpusStats, Vocabulary
from codetopics.sampler import Hyperparams, TopicModel

FORMAT_VERSION = 1


def real(x: float) -> str:
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return "null"
    return format(x, ".17g")


def dumps(obj, indent: int = 0) -> str:
    """JSON text with reals written to 17 significant digits.

    Numeric arrays stay on one line; dicts get one key per line.
    """
    pad = " " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        inner = ",\n".join(f'{pad}  {json.dumps(str(k))}: {dumps(v, indent + 2)}'
                           for k, v in obj.items())
        return "{\n" + inner + "\n" + pad + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if any(isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            inner = ",\n".join(pad + "  " + dumps(v, indent + 2) for v in obj)
            return "[\n" + inner + "\n" + pad + "]" if obj else "[]"
        return "[" + ", ".join(dumps(v, indent) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return real(obj)
    return json.dumps(str(obj) if not isinstance(obj, str) else obj)


def _header(config: dict | None) -> list[str]:
    if config is None:
        return []
    return ["# config " + json.dumps(config, sort_keys=True)]


def write_lines(path, lines: Iterable[str], config: dict | None = None) -> None:
    text = "\n".join([*_header(config), *lines]) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def _data_lines(path) -> list[str]:
    return [ln for ln in Path(path).read_text(encoding="utf-8").splitlines()
            if ln and not ln.startswith("#")]


# vocabulary -----------------------------------------------------------------

def write_vocabulary(path, vocab: Vocabulary, config: dict | None = None) -> None:
    meta = f"# vocabulary cutoff={vocab.cutoff!r} total={vocab.total} candidates={vocab.n_candidates}"
    rows = ["rank\tcode\tcount\tcumulative_fraction"]
    for rank, (code, n, cum) in enumerate(
            zip(vocab.codes, vocab.frequencies, vocab.cumulative_fractions()), start=1):
        rows.append(f"{rank}\t{code}\t{n}\t{real(cum)}")
    write_lines(path, [meta, *rows], config)


def read_vocabulary(path) -> Vocabulary:
    meta = {}
    for ln in Path(path).read_text(encoding="utf-8").splitlines():
        if ln.startswith("# vocabulary "):
            meta = dict(kv.split("=", 1) for kv in ln[len("# vocabulary "):].split())
    rows = _data_lines(path)[1:]
    codes, freqs = [], []
    for ln in rows:
        _, code, n, _ = ln.split("\t")
        codes.append(code)
        freqs.append(int(n))
    return Vocabulary(tuple(codes), tuple(freqs), float(meta.get("cutoff", 1.0)),
                      int(meta.get("total", sum(freqs))),
                      int(meta.get("candidates", len(codes))))


# matrix ---------------------------------------------------------------------

def write_matrix(path, matrix: CorpusMatrix, config: dict | None = None) -> None:
    coo = matrix.counts.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = [f"# M={matrix.M} V={matrix.V} mode={matrix.mode}",
             "patient_index\tcode_index\tcount"]
    lines += [f"{coo.row[k]}\t{coo.col[k]}\t{coo.data[k]}" for k in order]
    write_lines(path, lines, config)


def read_matrix(path, codes, patients=None) -> CorpusMatrix:
    meta = None
    rows, cols, vals = [], [], []
    for ln in Path(path).read_text(encoding="utf-8").splitlines():
        if ln.startswith("# M="):
            meta = dict(kv.split("=", 1) for kv in ln[2:].split())
        elif ln and not ln.startswith("#") and not ln.startswith("patient_index"):
            r, c, n = ln.split("\t")
            rows.append(int(r))
            cols.append(int(c))
            vals.append(int(n))
    if meta is None:
        raise CorpusError(f"{path}: missing '# M= V= mode=' header line")
    M, V = int(meta["M"]), int(meta["V"])
    if len(codes) != V:
        raise CorpusError(f"{path}: V={V} but vocabulary has {len(codes)} codes")
    counts = sp.csr_matrix((np.asarray(vals, dtype=np.int64), (rows, cols)),
                           shape=(M, V), dtype=np.int64)
    counts.sort_indices()
    patients = tuple(patients) if patients is not None else tuple(str(i) for i in range(M))
    return CorpusMatrix(counts, tuple(codes), patients, meta["mode"])


def write_patients(path, matrix: CorpusMatrix, config: dict | None = None) -> None:
    lines = ["patient_index\tpatient_id"]
    lines += [f"{i}\t{p}" for i, p in enumerate(matrix.patients)]
    lines += [f"# dropped\t{p}" for p in matrix.dropped_patients]
    write_lines(path, lines, config)


def read_patients(path) -> list[str]:
    return [ln.split("\t", 1)[1] for ln in _data_lines(path)[1:]]


def write_stats(path, stats: CorpusStats, config: dict | None = None) -> None:
    lines = [f"# dropped_patients={stats.dropped_patients} dropped_codes={stats.dropped_codes}",
             "rank\tcode\tcount\tcumulative_fraction"]
    lines += [f"{r}\t{c}\t{n}\t{real(cum)}" for r, (c, n, cum) in
              enumerate(zip(stats.codes, stats.counts, stats.cumulative), start=1)]
    write_lines(path, lines, config)


def write_records(path, matrix: CorpusMatrix) -> None:
    """Record CSV (``patient_id,code,count``) reproducing ``matrix``."""
    coo = matrix.counts.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = ["patient_id,code,count"]
    lines += [f"{matrix.patients[coo.row[k]]},{matrix.codes[coo.col[k]]},{coo.data[k]}"
              for k in order]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# model ----------------------------------------------------------------------

def model_to_dict(model: TopicModel) -> dict:
    hp = model.hyperparams
    return {
        "format_version": FORMAT_VERSION,
        "K": hp.K,
        "doc_topic_prior": hp.doc_topic_prior,
        "topic_code_prior": hp.topic_code_prior,
        "seed": model.seed,
        "rng": model.rng,
        "burn_in": model.burn_in,
        "keep": model.keep,
        "sweeps": model.sweeps,
        "log_likelihood": model.log_likelihood,
        "config": model.config,
        "vocabulary": list(model.vocabulary),
        "phi": model.phi,
        "theta": model.theta,
        "n_tc": model.n_tc,
    }


def save_model(path, model: TopicModel) -> None:
    Path(path).write_text(dumps(model_to_dict(model)) + "\n", encoding="utf-8")


def load_model(path) -> TopicModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model format {doc.get('format_version')!r}")
    hp = Hyperparams(doc["K"], doc["doc_topic_prior"], doc["topic_code_prior"])
    theta = doc.get("theta")
    n_tc = doc.get("n_tc")
    return TopicModel(
        phi=np.asarray(doc["phi"], dtype=np.float64),
        theta=None if theta is None else np.asarray(theta, dtype=np.float64),
        hyperparams=hp,
        seed=int(doc["seed"]),
        log_likelihood=float(doc["log_likelihood"]),
        burn_in=int(doc["burn_in"]),
        keep=int(doc["keep"]),
        sweeps=int(doc["sweeps"]),
        vocabulary=tuple(doc["vocabulary"]),
        n_tc=None if n_tc is None else np.asarray(n_tc, dtype=np.int64),
        rng=doc.get("rng", "numpy.PCG64"),
        config=doc.get("config", {}),
    )
