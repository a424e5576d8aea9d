"""Score functions and analytic parameter gradients for the five
semantic-matching models.

Every model scores a query (head, relation[, time], ?) by transforming the
head embedding into a query vector and taking inner products against the
tail table, so scoring all candidates is a single matrix-vector product.
Complex models keep the conjugate on the head embedding.

Tail-candidate scoring couples every entity through the softmax, so the
gradient for the tail table is dense per batch; all other parameter groups
receive sparse per-row gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import algebra
from .errors import ConfigError


class ModelKind(str, Enum):
    CP = "cp"
    COMPLEX = "complex"
    RESCAL = "rescal"
    TCOMPLEX = "tcomplex"
    TRESCAL = "trescal"

    @property
    def is_complex(self) -> bool:
        return self in (ModelKind.COMPLEX, ModelKind.TCOMPLEX)

    @property
    def is_temporal(self) -> bool:
        return self in (ModelKind.TCOMPLEX, ModelKind.TRESCAL)

    @property
    def has_matrix_relations(self) -> bool:
        return self in (ModelKind.RESCAL, ModelKind.TRESCAL)

    @property
    def shares_entity_table(self) -> bool:
        return self is not ModelKind.CP


@dataclass
class ModelParams:
    """Parameter tables for one model instance.

    ``tail`` is the same array object as ``head`` for every kind except CP,
    which factorizes with distinct head/tail tables.  Relations are diagonal
    vectors (|R|, D) for CP/ComplEx/TComplEx and dense matrices (|R|, D, D)
    for RESCAL/TRESCAL; timestamp parameters follow the same convention.
    """

    kind: ModelKind
    dim: int
    head: np.ndarray
    tail: np.ndarray
    relations: np.ndarray
    times: np.ndarray | None = None

    @property
    def n_entities(self) -> int:
        return self.head.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relations.shape[0]

    @property
    def n_timestamps(self) -> int:
        return 0 if self.times is None else self.times.shape[0]

    @property
    def dtype(self) -> np.dtype:
        return self.head.dtype

    def entity_tables(self) -> list[np.ndarray]:
        """Distinct entity tables (one, or two for CP)."""
        if self.kind.shares_entity_table:
            return [self.head]
        return [self.head, self.tail]

    def copy(self) -> "ModelParams":
        return self.astype(self.dtype)

    def astype(self, dtype) -> "ModelParams":
        head = self.head.astype(dtype)
        tail = head if self.kind.shares_entity_table else self.tail.astype(dtype)
        return ModelParams(
            kind=self.kind,
            dim=self.dim,
            head=head,
            tail=tail,
            relations=self.relations.astype(dtype),
            times=None if self.times is None else self.times.astype(dtype),
        )

    def max_abs(self) -> float:
        vals = [np.abs(self.head).max(), np.abs(self.relations).max()]
        if not self.kind.shares_entity_table:
            vals.append(np.abs(self.tail).max())
        if self.times is not None:
            vals.append(np.abs(self.times).max())
        return float(max(vals))


def init_params(
    kind: ModelKind,
    n_entities: int,
    n_relations: int,
    dim: int,
    n_timestamps: int = 0,
    rng: np.random.Generator | None = None,
    scale: float = 1e-3,
    dtype=np.float64,
) -> ModelParams:
    """Fresh parameters with i.i.d. zero-mean Gaussian entries."""
    if kind.is_complex and dim % 2:
        raise ConfigError(f"{kind.value} needs an even dimension, got {dim}")
    if kind.is_temporal and n_timestamps < 1:
        raise ConfigError(f"{kind.value} needs at least one timestamp")
    rng = rng or np.random.default_rng()

    def table(*shape):
        return (rng.standard_normal(shape) * scale).astype(dtype)

    head = table(n_entities, dim)
    tail = table(n_entities, dim) if kind is ModelKind.CP else head
    if kind.has_matrix_relations:
        relations = table(n_relations, dim, dim)
    else:
        relations = table(n_relations, dim)
    times = None
    if kind is ModelKind.TCOMPLEX:
        times = table(n_timestamps, dim)
    elif kind is ModelKind.TRESCAL:
        times = table(n_timestamps, dim, dim)
    return ModelParams(kind=kind, dim=dim, head=head, tail=tail,
                       relations=relations, times=times)


@dataclass
class QueryCache:
    """Forward-pass intermediates for a batch of (head, relation[, time])
    queries, kept for the backward pass."""

    heads: np.ndarray
    rels: np.ndarray
    times: np.ndarray | None
    wire: np.ndarray           # (b, D); tail_table @ wire[i] gives scores
    u: np.ndarray              # gathered head rows (b, D)
    r: np.ndarray              # gathered relation rows
    t: np.ndarray | None = None
    p: np.ndarray | None = None  # relation*time product for temporal kinds


def _check_query(params: ModelParams, times) -> None:
    if params.kind.is_temporal and times is None:
        raise ConfigError(f"{params.kind.value} queries need a timestamp id")


def forward_queries(
    params: ModelParams,
    heads: np.ndarray,
    rels: np.ndarray,
    times: np.ndarray | None = None,
) -> QueryCache:
    """Transform a batch of heads into query vectors.

    The returned ``wire`` rows satisfy ``scores = tail_table @ wire[i]``
    for each query i.
    """
    _check_query(params, times)
    heads = np.asarray(heads)
    rels = np.asarray(rels)
    kind = params.kind
    u = params.head[heads]
    r = params.relations[rels]
    t = None if times is None or params.times is None else params.times[np.asarray(times)]

    if kind is ModelKind.CP:
        wire = u * r
        return QueryCache(heads, rels, times, wire, u, r)
    if kind is ModelKind.COMPLEX:
        wire = _complex_wire(u, r)
        return QueryCache(heads, rels, times, wire, u, r)
    if kind is ModelKind.RESCAL:
        wire = np.einsum("bd,bde->be", u, r)
        return QueryCache(heads, rels, times, wire, u, r)
    if kind is ModelKind.TCOMPLEX:
        p = algebra.cmul(r, t)
        wire = _complex_wire(u, p)
        return QueryCache(heads, rels, times, wire, u, r, t=t, p=p)
    if kind is ModelKind.TRESCAL:
        p = r * t
        wire = np.einsum("bd,bde->be", u, p)
        return QueryCache(heads, rels, times, wire, u, r, t=t, p=p)
    raise ConfigError(f"unknown model kind {kind!r}")


def _complex_wire(u: np.ndarray, r: np.ndarray) -> np.ndarray:
    # q = conj(u) * r; Re(<q, v>) = dot(v, [Re q | -Im q])
    ur, ui = algebra.split(u)
    rr, ri = algebra.split(r)
    qr = ur * rr + ui * ri
    qi = ur * ri - ui * rr
    return algebra.join(qr, -qi)


def all_scores(params: ModelParams, cache: QueryCache) -> np.ndarray:
    """Scores of every entity for every query in the batch, (b, |E|)."""
    return cache.wire @ params.tail.T


def score_all_candidates(
    params: ModelParams,
    head: int,
    rel: int,
    time: int | None = None,
) -> np.ndarray:
    """Score vector over all candidate tails for a single query."""
    times = None if time is None else np.asarray([time])
    cache = forward_queries(params, np.asarray([head]), np.asarray([rel]), times)
    return params.tail @ cache.wire[0]


def score(
    params: ModelParams,
    head: int,
    rel: int,
    tail: int,
    time: int | None = None,
) -> float:
    """Plausibility score of one fact.

    Extracted from the all-candidates vector so that the two paths agree
    exactly (BLAS matrix-vector and single-row dot products may otherwise
    differ in the last ulp).
    """
    return float(score_all_candidates(params, head, rel, time)[tail])


@dataclass
class SparseRows:
    """Per-row gradients for a subset of a parameter table.

    ``ids`` may contain duplicates; consumers aggregate before applying.
    """

    ids: np.ndarray
    grads: np.ndarray

    @staticmethod
    def concat(chunks: list["SparseRows"]) -> "SparseRows":
        return SparseRows(
            ids=np.concatenate([c.ids for c in chunks]),
            grads=np.concatenate([c.grads for c in chunks]),
        )

    def aggregated(self) -> "SparseRows":
        uids, inverse = np.unique(self.ids, return_inverse=True)
        agg = np.zeros((len(uids),) + self.grads.shape[1:], dtype=self.grads.dtype)
        np.add.at(agg, inverse, self.grads)
        return SparseRows(ids=uids, grads=agg)


@dataclass
class Gradients:
    """Gradient of a batch loss with respect to the parameter tables.

    ``tail_dense`` covers the tail table (dense: the softmax over all
    candidates touches every row).  ``head`` is populated only for CP,
    whose head table is separate; for shared-table models the head-row
    contributions are already folded into ``tail_dense``.
    """

    tail_dense: np.ndarray
    relations: SparseRows
    head: SparseRows | None = None
    times: SparseRows | None = None


def backward(params: ModelParams, cache: QueryCache, d_scores: np.ndarray) -> Gradients:
    """Chain upstream score gradients (b, |E|) back to the parameters."""
    kind = params.kind
    tail_dense = d_scores.T @ cache.wire           # (|E|, D)
    d_wire = d_scores @ params.tail                # (b, D)
    u, r = cache.u, cache.r

    if kind is ModelKind.CP:
        du = d_wire * r
        dr = d_wire * u
        return Gradients(
            tail_dense=tail_dense,
            relations=SparseRows(cache.rels, dr),
            head=SparseRows(cache.heads, du),
        )

    if kind is ModelKind.COMPLEX:
        du, dr = _complex_wire_backward(u, r, d_wire)
        np.add.at(tail_dense, cache.heads, du)
        return Gradients(tail_dense=tail_dense, relations=SparseRows(cache.rels, dr))

    if kind is ModelKind.RESCAL:
        du = np.einsum("be,bde->bd", d_wire, r)
        dr = np.einsum("bd,be->bde", u, d_wire)
        np.add.at(tail_dense, cache.heads, du)
        return Gradients(tail_dense=tail_dense, relations=SparseRows(cache.rels, dr))

    if kind is ModelKind.TCOMPLEX:
        t, p = cache.t, cache.p
        du, dp = _complex_wire_backward(u, p, d_wire)
        # p = r (*) t elementwise complex product
        dr = _cmul_backward(dp, t)
        dt = _cmul_backward(dp, r)
        np.add.at(tail_dense, cache.heads, du)
        return Gradients(
            tail_dense=tail_dense,
            relations=SparseRows(cache.rels, dr),
            times=SparseRows(np.asarray(cache.times), dt),
        )

    if kind is ModelKind.TRESCAL:
        t, p = cache.t, cache.p
        du = np.einsum("be,bde->bd", d_wire, p)
        dp = np.einsum("bd,be->bde", u, d_wire)
        np.add.at(tail_dense, cache.heads, du)
        return Gradients(
            tail_dense=tail_dense,
            relations=SparseRows(cache.rels, dp * t),
            times=SparseRows(np.asarray(cache.times), dp * r),
        )

    raise ConfigError(f"unknown model kind {kind!r}")


def _complex_wire_backward(u, r, d_wire):
    # wire = [qr | -qi] with qr = ur*rr + ui*ri, qi = ur*ri - ui*rr
    dqr, neg_dqi = algebra.split(d_wire)
    dqi = -neg_dqi
    ur, ui = algebra.split(u)
    rr, ri = algebra.split(r)
    du = algebra.join(dqr * rr + dqi * ri, dqr * ri - dqi * rr)
    dr = algebra.join(dqr * ur - dqi * ui, dqr * ui + dqi * ur)
    return du, dr


def _cmul_backward(d_out, other):
    # For w = cmul(x, y): dL/dx = cmul(dL/dw, conj(y))
    return algebra.cmul(d_out, algebra.conj(other))
