"""Filtered entity-ranking evaluation, sparsity analysis and CSR export.

Ranking uses the filtered protocol: for each query every other known-true
answer is removed from the candidate pool before ranking the gold tail.
Ties are resolved by the mean rank over the tied block, which keeps
constant-score degenerate models from inflating the metrics.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import FilterIndex, RelationTypeMap
from .errors import CheckpointError, ConfigError, EvaluationError
from .models import ModelParams, all_scores, forward_queries


@dataclass(frozen=True)
class RankingReport:
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    count: int
    by_type: dict[str, "RankingReport"] | None = None

    @classmethod
    def from_ranks(cls, ranks: np.ndarray,
                   by_type: dict[str, "RankingReport"] | None = None) -> "RankingReport":
        return cls(
            mrr=float(np.mean(1.0 / ranks)),
            hits1=float(np.mean(ranks <= 1)),
            hits3=float(np.mean(ranks <= 3)),
            hits10=float(np.mean(ranks <= 10)),
            count=int(len(ranks)),
            by_type=by_type,
        )

    def keyvalue_lines(self, prefix: str = "") -> list[str]:
        lines = [
            f"{prefix}mrr={self.mrr:.6f}",
            f"{prefix}hits1={self.hits1:.6f}",
            f"{prefix}hits3={self.hits3:.6f}",
            f"{prefix}hits10={self.hits10:.6f}",
            f"{prefix}queries={self.count}",
        ]
        if self.by_type:
            for name in sorted(self.by_type):
                lines.extend(self.by_type[name].keyvalue_lines(f"{prefix}{name}."))
        return lines

    def format_table(self) -> str:
        header = f"{'queries':>8}  {'MRR':>7}  {'H@1':>7}  {'H@3':>7}  {'H@10':>7}"
        rows = [header, _report_row("all", self)]
        if self.by_type:
            for name in sorted(self.by_type):
                rows.append(_report_row(name, self.by_type[name]))
        return "\n".join(rows)


def _report_row(name: str, rep: RankingReport) -> str:
    return (f"{rep.count:>8}  {rep.mrr:>7.4f}  {rep.hits1:>7.4f}  "
            f"{rep.hits3:>7.4f}  {rep.hits10:>7.4f}  {name}")


def _rank_from_scores(scores: np.ndarray, target: int, filtered: np.ndarray) -> float:
    """Mean-rank-over-ties rank of the target among unfiltered candidates."""
    s_t = scores[target]
    greater = int((scores > s_t).sum())
    ties = int((scores == s_t).sum()) - 1
    if filtered.size:
        sf = scores[filtered]
        greater -= int((sf > s_t).sum())
        ties -= int((sf == s_t).sum())
    return 1.0 + greater + 0.5 * ties


def filtered_rank(scores: np.ndarray, target: int, filtered_ids) -> float:
    """Rank of ``target`` after removing ``filtered_ids`` from the pool.

    The gold answer itself must not appear in the filter set.
    """
    scores = np.asarray(scores)
    if not np.all(np.isfinite(scores)):
        raise EvaluationError("scores contain NaN/Inf")
    filtered = np.asarray(filtered_ids, dtype=np.int64).reshape(-1)
    if np.any(filtered == target):
        raise EvaluationError("the gold answer must not be filtered")
    return _rank_from_scores(scores, int(target), filtered)


def evaluate_split(
    params: ModelParams,
    split: np.ndarray,
    filter_index: FilterIndex,
    relation_types: RelationTypeMap | None = None,
    chunk_size: int | None = None,
) -> RankingReport:
    """Filtered MRR / Hits@{1,3,10} over every query of a split.

    The split must be reciprocal-augmented so each original fact shows up
    as both a forward and an inverse tail query.  When ``relation_types``
    is given, sub-reports aggregate by the raw relation's cardinality
    class (the inverse direction of a 1-N query counts as N-1).
    """
    if len(split) == 0:
        raise EvaluationError("cannot evaluate an empty split")
    temporal = split.shape[1] == 4
    if params.kind.is_temporal and not temporal:
        raise EvaluationError("temporal model needs quadruple queries")

    if chunk_size is None:
        chunk_size = max(16, (1 << 22) // max(1, params.n_entities))
    ranks = np.empty(len(split))
    for start in range(0, len(split), chunk_size):
        rows = split[start:start + chunk_size]
        times = rows[:, 3] if (temporal and params.kind.is_temporal) else None
        cache = forward_queries(params, rows[:, 0], rows[:, 1], times)
        scores = all_scores(params, cache)
        if not np.all(np.isfinite(scores)):
            raise EvaluationError("non-finite scores during evaluation")
        for k, row in enumerate(rows):
            key = (int(row[0]), int(row[1]))
            if temporal:
                key = key + (int(row[3]),)
            target = int(row[2])
            known = filter_index.tails(key)
            ranks[start + k] = _rank_from_scores(
                scores[k], target, known[known != target]
            )

    by_type = None
    if relation_types is not None:
        by_type = {}
        labels = np.asarray(
            [relation_types.query_type(int(r)).value for r in split[:, 1]]
        )
        for name in np.unique(labels):
            by_type[str(name)] = RankingReport.from_ranks(ranks[labels == name])
    return RankingReport.from_ranks(ranks, by_type=by_type)


# -- sparsity ------------------------------------------------------------------

def lambda_sparsity(table: np.ndarray, lam: float) -> float:
    """Fraction of entries with magnitude strictly below ``lam``."""
    if lam < 0:
        raise ConfigError(f"threshold must be >= 0, got {lam}")
    return float(np.count_nonzero(np.abs(table) < lam)) / table.size


def threshold_for_sparsity(tables: list[np.ndarray], target: float) -> float:
    """Smallest threshold whose strict-magnitude sparsity reaches ``target``."""
    if not 0.0 <= target < 1.0:
        raise ConfigError(f"target sparsity must be in [0, 1), got {target}")
    mags = np.concatenate([np.abs(t).ravel() for t in tables])
    k = math.ceil(target * mags.size)
    if k == 0:
        return 0.0
    kth = np.partition(mags, k - 1)[k - 1]
    return float(np.nextafter(kth, np.inf))


@dataclass(frozen=True)
class SparsityReport:
    threshold: float
    achieved_sparsity: float
    mrr_before: float
    mrr_after: float
    csr_bytes: int
    dense_bytes: int
    files: tuple[Path, ...]

    def keyvalue_lines(self) -> list[str]:
        return [
            f"threshold={self.threshold:.8g}",
            f"sparsity={self.achieved_sparsity:.6f}",
            f"mrr_before={self.mrr_before:.6f}",
            f"mrr_after={self.mrr_after:.6f}",
            f"csr_bytes={self.csr_bytes}",
            f"dense_bytes={self.dense_bytes}",
            f"size_ratio={self.csr_bytes / self.dense_bytes:.4f}",
        ]


def threshold_and_export(
    params: ModelParams,
    target_sparsity: float,
    test_split: np.ndarray,
    filter_index: FilterIndex,
    out_dir: str | Path,
    relation_types: RelationTypeMap | None = None,
) -> SparsityReport:
    """Zero the smallest-magnitude entity entries, re-evaluate, export CSR.

    Thresholding covers the entity tables only (both of them for CP);
    relation and timestamp parameters are untouched.  Tables are cast to
    float32 first: sparsification is a deployment-time operation on
    checkpoint-precision parameters.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = params.astype(np.float32)
    before = evaluate_split(params, test_split, filter_index, relation_types)

    tables = params.entity_tables()
    lam = threshold_for_sparsity(tables, target_sparsity)
    total = sum(t.size for t in tables)
    zeroed = sum(int(np.count_nonzero(np.abs(t) < lam)) for t in tables)
    new_tables = []
    for t in tables:
        copy = t.copy()
        copy[np.abs(copy) < lam] = 0.0
        new_tables.append(copy)

    if params.kind.shares_entity_table:
        sparse_params = replace(params, head=new_tables[0], tail=new_tables[0])
        names = ["entities"]
    else:
        sparse_params = replace(params, head=new_tables[0], tail=new_tables[1])
        names = ["entities_head", "entities_tail"]
    after = evaluate_split(sparse_params, test_split, filter_index, relation_types)

    files: list[Path] = []
    for name, table in zip(names, new_tables):
        files.extend(write_csr(table, out_dir / name))
    return SparsityReport(
        threshold=lam,
        achieved_sparsity=zeroed / total,
        mrr_before=before.mrr,
        mrr_after=after.mrr,
        csr_bytes=sum(f.stat().st_size for f in files),
        dense_bytes=total * 4,
        files=tuple(files),
    )


# -- CSR codec -----------------------------------------------------------------

CSR_MAGIC = b"KCSR"
CSR_VERSION = 1
_CSR_HEADER = struct.Struct("<4sI")


def write_csr(matrix: np.ndarray, stem: str | Path) -> list[Path]:
    """Write a matrix as three binary arrays: <stem>.indptr (u64),
    <stem>.indices (u16) and <stem>.data (f32), each behind an 8-byte
    magic+version header."""
    m = np.ascontiguousarray(matrix, dtype=np.float32)
    if m.ndim != 2:
        raise ConfigError(f"CSR export expects a matrix, got shape {m.shape}")
    if m.shape[1] > 0xFFFF:
        raise ConfigError(
            f"column indices are stored as u16; {m.shape[1]} columns exceed 65535"
        )
    mask = m != 0
    indptr = np.zeros(m.shape[0] + 1, dtype="<u8")
    np.cumsum(mask.sum(axis=1), out=indptr[1:])
    indices = np.nonzero(mask)[1].astype("<u2")
    data = m[mask].astype("<f4")

    stem = Path(stem)
    header = _CSR_HEADER.pack(CSR_MAGIC, CSR_VERSION)
    written = []
    for suffix, payload in ((".indptr", indptr), (".indices", indices), (".data", data)):
        path = Path(str(stem) + suffix)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload.tobytes())
        written.append(path)
    return written


def _read_csr_array(path: Path, dtype: str) -> np.ndarray:
    blob = path.read_bytes()
    if len(blob) < _CSR_HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version = _CSR_HEADER.unpack_from(blob)
    if magic != CSR_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != CSR_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    return np.frombuffer(blob, dtype=dtype, offset=_CSR_HEADER.size)


def read_csr(stem: str | Path, n_cols: int) -> np.ndarray:
    """Reload a CSR export as a dense float32 matrix."""
    indptr = _read_csr_array(Path(str(stem) + ".indptr"), "<u8")
    indices = _read_csr_array(Path(str(stem) + ".indices"), "<u2")
    data = _read_csr_array(Path(str(stem) + ".data"), "<f4")
    n_rows = len(indptr) - 1
    dense = np.zeros((n_rows, n_cols), dtype=np.float32)
    for i in range(n_rows):
        lo, hi = int(indptr[i]), int(indptr[i + 1])
        dense[i, indices[lo:hi]] = data[lo:hi]
    return dense
