"""Diagnosis-event ingestion, frequency-truncated vocabulary and bag-of-codes matrix."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, TextIO

import numpy as np
import scipy.sparse as sp

WEIGHTING_MODES = ("count", "binary")


class CorpusError(ValueError):
    """Base class for corpus construction failures."""


class ParseError(CorpusError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class EmptyCorpusError(CorpusError):
    pass


@dataclass(frozen=True)
class RecordSet:
    """Aggregated code counts per patient.

    ``entries[patient][code]`` is the number of times the patient was
    diagnosed with ``code``. Zero counts are never stored. Patients keep the
    order in which they first appear in the input.
    """

    entries: Mapping[str, Mapping[str, int]]

    def __len__(self) -> int:
        return len(self.entries)

    def code_totals(self) -> dict[str, int]:
        totals: dict[str, int] = {}
        for codes in self.entries.values():
            for code, n in codes.items():
                totals[code] = totals.get(code, 0) + n
        return totals

    @classmethod
    def from_mapping(cls, entries: Mapping[str, Mapping[str, int]]) -> RecordSet:
        clean = {}
        for patient, codes in entries.items():
            row = {c: int(n) for c, n in codes.items() if n}
            if any(n < 0 for n in row.values()):
                raise CorpusError(f"negative count for patient {patient!r}")
            if row:
                clean[str(patient)] = row
        return cls(clean)


@dataclass(frozen=True)
class Vocabulary:
    codes: tuple[str, ...]
    frequencies: tuple[int, ...]
    cutoff: float
    total: int  # occurrences over all codes, retained or not
    n_candidates: int  # distinct codes before truncation

    def __len__(self) -> int:
        return len(self.codes)

    def index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.codes)}

    def cumulative_fractions(self) -> list[float]:
        run = np.cumsum(self.frequencies, dtype=np.int64)
        return [int(r) / self.total for r in run]


@dataclass(frozen=True)
class CorpusMatrix:
    """Patient x code count matrix (the patient-conditions corpus).

    ``counts`` is a CSR matrix with sorted column indices. Row ``i`` belongs to
    ``patients[i]``; column ``c`` to ``codes[c]``.
    """

    counts: sp.csr_matrix
    codes: tuple[str, ...]
    patients: tuple[str, ...]
    mode: str = "count"
    dropped_patients: tuple[str, ...] = ()

    def __post_init__(self):
        if self.mode not in WEIGHTING_MODES:
            raise CorpusError(f"unknown weighting mode {self.mode!r}")
        if self.counts.shape != (len(self.patients), len(self.codes)):
            raise CorpusError(
                f"matrix shape {self.counts.shape} does not match "
                f"{len(self.patients)} patients x {len(self.codes)} codes")

    @property
    def M(self) -> int:
        return self.counts.shape[0]

    @property
    def V(self) -> int:
        return self.counts.shape[1]

    @property
    def doc_lengths(self) -> np.ndarray:
        return np.asarray(self.counts.sum(axis=1)).ravel().astype(np.int64)

    @property
    def n_tokens(self) -> int:
        return int(self.counts.sum())

    def column_totals(self) -> np.ndarray:
        return np.asarray(self.counts.sum(axis=0)).ravel().astype(np.int64)

    def tokens(self) -> tuple[np.ndarray, np.ndarray]:
        """Expand to per-token (patient, code) arrays.

        Order: patients ascending, then column, then repetition index. This is
        the order in which the sampler visits tokens.
        """
        indptr, indices, data = self.counts.indptr, self.counts.indices, self.counts.data
        reps = data.astype(np.int64)
        rows = np.repeat(np.arange(self.M, dtype=np.int64), np.diff(indptr))
        return np.repeat(rows, reps), np.repeat(indices.astype(np.int64), reps)

    def dense(self) -> np.ndarray:
        return self.counts.toarray()

    @classmethod
    def from_dense(cls, array, codes=None, patients=None, mode="count") -> CorpusMatrix:
        """Build a matrix from a dense integer array; rows must be non-empty."""
        arr = np.asarray(array, dtype=np.int64)
        if arr.ndim != 2:
            raise CorpusError("expected a 2-d array")
        if (arr < 0).any():
            raise CorpusError("counts must be non-negative")
        if arr.shape[0] == 0 or (arr.sum(axis=1) == 0).any():
            raise EmptyCorpusError("every patient row needs at least one token")
        M, V = arr.shape
        codes = tuple(codes) if codes is not None else tuple(f"c{j}" for j in range(V))
        patients = tuple(patients) if patients is not None else tuple(f"p{i}" for i in range(M))
        counts = sp.csr_matrix(arr)
        counts.sort_indices()
        return cls(counts, codes, patients, mode)


@dataclass(frozen=True)
class CorpusStats:
    codes: tuple[str, ...]  # sorted by descending count
    counts: tuple[int, ...]
    cumulative: tuple[float, ...]
    dropped_patients: int
    dropped_codes: int

    def top(self, n: int = 20) -> list[tuple[str, int]]:
        return list(zip(self.codes[:n], self.counts[:n]))

    def curve(self) -> list[tuple[int, int]]:
        return [(rank, n) for rank, n in enumerate(self.counts, start=1)]


def _parse_count(raw: str, line_no: int) -> int:
    try:
        n = int(raw.strip())
    except ValueError:
        raise ParseError(line_no, f"count {raw!r} is not an integer") from None
    if n < 1:
        raise ParseError(line_no, f"count must be >= 1, got {n}")
    return n


def parse_records(stream: TextIO | str | Iterable[str]) -> RecordSet:
    """Parse ``patient_id,code[,count]`` lines into a :class:`RecordSet`.

    A leading ``patient_id,code[,count]`` header is skipped. Blank lines are
    ignored; repeated (patient, code) pairs are summed.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    entries: dict[str, dict[str, int]] = {}
    for line_no, row in enumerate(csv.reader(stream), start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if line_no == 1 and [f.strip().lower() for f in row[:2]] == ["patient_id", "code"]:
            continue
        if len(row) not in (2, 3):
            raise ParseError(line_no, f"expected 2 or 3 fields, got {len(row)}")
        patient, code = row[0].strip(), row[1].strip()
        if not patient or not code:
            raise ParseError(line_no, "empty patient id or code")
        n = _parse_count(row[2], line_no) if len(row) == 3 else 1
        codes = entries.setdefault(patient, {})
        codes[code] = codes.get(code, 0) + n
    if not entries:
        raise EmptyCorpusError("no data rows in input")
    return RecordSet(entries)


def _as_fraction(cutoff: float) -> Fraction:
    # decimal reading of the user's value, so 0.8 means exactly 4/5
    return Fraction(repr(float(cutoff)))


def build_vocabulary(records: RecordSet, cutoff: float = 0.8) -> Vocabulary:
    """Keep the smallest set of most frequent codes covering ``cutoff`` of all occurrences.

    Codes are ranked by descending total count, ties broken by ascending code
    string, and the shortest prefix whose cumulative count reaches
    ``cutoff * total`` is retained.
    """
    if not 0 < cutoff <= 1 or math.isnan(cutoff):
        raise CorpusError(f"cutoff must lie in (0, 1], got {cutoff}")
    totals = records.code_totals()
    if not totals:
        raise EmptyCorpusError("record set is empty")
    ranked = sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))
    total = sum(totals.values())
    need = _as_fraction(cutoff) * total
    running = 0
    keep = 0
    for code, n in ranked:
        running += n
        keep += 1
        if running >= need:
            break
    kept = ranked[:keep]
    return Vocabulary(
        codes=tuple(c for c, _ in kept),
        frequencies=tuple(n for _, n in kept),
        cutoff=float(cutoff),
        total=total,
        n_candidates=len(ranked),
    )


def build_matrix(records: RecordSet, vocab: Vocabulary, mode: str = "count") -> CorpusMatrix:
    """Project records onto ``vocab`` columns.

    Out-of-vocabulary codes are discarded; patients left without any
    in-vocabulary token are dropped and listed in ``dropped_patients``.
    """
    if mode not in WEIGHTING_MODES:
        raise CorpusError(f"unknown weighting mode {mode!r}; expected one of {WEIGHTING_MODES}")
    col = vocab.index()
    rows, cols, vals = [], [], []
    kept, dropped = [], []
    for patient, codes in records.entries.items():
        hits = [(col[c], n) for c, n in codes.items() if c in col]
        if not hits:
            dropped.append(patient)
            continue
        r = len(kept)
        kept.append(patient)
        for j, n in hits:
            rows.append(r)
            cols.append(j)
            vals.append(min(n, 1) if mode == "binary" else n)
    if not kept:
        raise EmptyCorpusError("every patient was dropped by the vocabulary")
    counts = sp.csr_matrix(
        (np.asarray(vals, dtype=np.int64), (rows, cols)),
        shape=(len(kept), len(vocab)), dtype=np.int64)
    counts.sort_indices()
    return CorpusMatrix(counts, vocab.codes, tuple(kept), mode, tuple(dropped))


def corpus_stats(matrix: CorpusMatrix, vocab: Vocabulary | None = None) -> CorpusStats:
    """Frequency-rank data for the retained codes."""
    if matrix.M == 0:
        raise EmptyCorpusError("matrix has no rows")
    totals = matrix.column_totals()
    order = sorted(range(matrix.V), key=lambda j: (-totals[j], matrix.codes[j]))
    counts = [int(totals[j]) for j in order]
    grand = sum(counts)
    run = np.cumsum(counts)
    cumulative = [int(r) / grand for r in run]
    cumulative[-1] = 1.0
    dropped_codes = vocab.n_candidates - len(vocab) if vocab is not None else 0
    return CorpusStats(
        codes=tuple(matrix.codes[j] for j in order),
        counts=tuple(counts),
        cumulative=tuple(cumulative),
        dropped_patients=len(matrix.dropped_patients),
        dropped_codes=dropped_codes,
    )


def tfidf(matrix: CorpusMatrix) -> sp.csr_matrix:
    """count * ln(M / document frequency); a diagnostic view, never sampler input."""
    counts = matrix.counts
    df = np.bincount(counts.indices, minlength=matrix.V)
    idf = np.zeros(matrix.V)
    nz = df > 0
    idf[nz] = np.log(matrix.M / df[nz])
    out = counts.astype(np.float64).tocsr(copy=True)
    out.data *= idf[out.indices]
    return out
