"""Per-example training penalties, their gradients, and the timestamp
smoothness terms.

All penalties are evaluated on sampled training examples, so frequently
sampled entities are implicitly weighted more.  Values and row gradients
are computed together for a whole batch; the scalar helpers
:func:`static_penalty` / :func:`temporal_penalty` expose the per-example
values.

Squared-norm penalties on complex embeddings are invariant to conjugating
the projection (per-entry moduli ignore conjugation), so the
``conjugate_tail_projection`` switch is observable only in the L1 penalty.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import algebra
from .errors import ConfigError, UnsupportedCombination
from .models import ModelKind, ModelParams

try:  # py3.10 compat: StrEnum landed in 3.11
    from enum import StrEnum
except ImportError:  # pragma: no cover
    from enum import Enum

    class StrEnum(str, Enum):
        pass


class RegKind(StrEnum):
    NONE = "none"
    FRO = "fro"
    N3 = "n3"
    DURA = "dura"
    DURA_I = "dura_i"
    DURA_II = "dura_ii"
    REG_P1 = "reg_p1"
    TDURA1 = "tdura1"
    TDURA2 = "tdura2"
    TWEIGHTED = "tweighted"


class SmootherKind(StrEnum):
    NONE = "none"
    L2 = "l2"
    L3 = "l3"


STATIC_KINDS = frozenset(
    {RegKind.NONE, RegKind.FRO, RegKind.N3, RegKind.DURA, RegKind.DURA_I,
     RegKind.DURA_II, RegKind.REG_P1}
)
TEMPORAL_KINDS = frozenset({RegKind.TDURA1, RegKind.TDURA2, RegKind.TWEIGHTED})

_STATIC_MODELS = frozenset({ModelKind.CP, ModelKind.COMPLEX, ModelKind.RESCAL})


@dataclass(frozen=True)
class RegSpec:
    """Which penalty to apply and with what weights.

    ``lam`` scales the whole penalty at loss assembly.  ``lam1``/``lam2``
    weight the plain and projected entity norms of the combined static
    penalty; for the weighted temporal penalty, ``lam1``..``lam4`` weight
    its four blocks.  The smoother weight multiplies the timestamp
    smoothness term separately from ``lam``.
    """

    kind: RegKind = RegKind.NONE
    lam: float = 0.0
    lam1: float = 1.0
    lam2: float = 1.0
    lam3: float = 1.0
    lam4: float = 1.0
    smoother: SmootherKind = SmootherKind.NONE
    smoother_weight: float = 1.0
    conjugate_tail_projection: bool = False

    def validate_for(self, model: ModelKind) -> None:
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        for name in ("lam1", "lam2", "lam3", "lam4"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.smoother_weight < 0:
            raise ConfigError("smoother weight must be >= 0")

        kind = self.kind
        if kind is RegKind.N3 and model.has_matrix_relations:
            raise UnsupportedCombination(
                "the cubed-L3 penalty needs diagonal relation embeddings; "
                f"it does not apply to {model.value}"
            )
        if kind in (RegKind.DURA, RegKind.DURA_I, RegKind.DURA_II, RegKind.REG_P1):
            if model not in _STATIC_MODELS:
                raise UnsupportedCombination(
                    f"{kind.value} is the static penalty; use tdura1/tdura2/"
                    f"tweighted with {model.value}"
                )
        if kind in TEMPORAL_KINDS and not model.is_temporal:
            raise UnsupportedCombination(
                f"{kind.value} needs a temporal model, got {model.value}"
            )
        if kind in (RegKind.TDURA2, RegKind.TWEIGHTED) and model is ModelKind.TRESCAL:
            raise UnsupportedCombination(
                f"{kind.value} needs commuting (diagonal) relation and time "
                "parameters; matrix products do not commute"
            )
        if self.smoother is not SmootherKind.NONE and not model.is_temporal:
            raise ConfigError("timestamp smoother needs a temporal model")
        if self.smoother is SmootherKind.L3 and model is not ModelKind.TCOMPLEX:
            raise ConfigError("the cubed-L3 smoother applies to diagonal "
                              "complex timestamps only")


@dataclass
class PenaltyGrads:
    """Per-example gradients of the batch penalty, one row per example."""

    head: np.ndarray
    tail: np.ndarray
    rel: np.ndarray
    time: np.ndarray | None = None


def _sumsq(x: np.ndarray) -> np.ndarray:
    axes = tuple(range(1, x.ndim))
    return (x * x).sum(axis=axes)


def penalty_batch(
    spec: RegSpec,
    params: ModelParams,
    heads: np.ndarray,
    rels: np.ndarray,
    tails: np.ndarray,
    times: np.ndarray | None = None,
) -> tuple[np.ndarray, PenaltyGrads]:
    """Penalty value and parameter-row gradients for a batch of examples.

    Returns per-example values (b,) and per-example row gradients; the
    overall ``lam`` factor is applied by the caller at loss assembly.
    """
    spec.validate_for(params.kind)
    if params.kind.is_temporal and times is None:
        raise ConfigError("temporal model penalties need timestamp ids")

    u = params.head[np.asarray(heads)]
    v = params.tail[np.asarray(tails)]
    r = params.relations[np.asarray(rels)]
    t = None
    if params.kind.is_temporal and params.times is not None:
        t = params.times[np.asarray(times)]

    kind = spec.kind
    if kind is RegKind.NONE:
        zeros = np.zeros(len(u), dtype=params.dtype)
        return zeros, PenaltyGrads(
            head=np.zeros_like(u), tail=np.zeros_like(v), rel=np.zeros_like(r),
            time=None if t is None else np.zeros_like(t),
        )
    if kind is RegKind.FRO:
        return _fro(u, v, r, t)
    if kind is RegKind.N3:
        return _n3(params.kind, u, v, r, t)
    if kind in (RegKind.DURA, RegKind.DURA_I, RegKind.DURA_II):
        return _dura_static(kind, spec, params.kind, u, v, r, t)
    if kind is RegKind.REG_P1:
        return _reg_p1(spec, params.kind, u, v, r)
    if kind is RegKind.TDURA1:
        if params.kind is ModelKind.TRESCAL:
            return _tdura1_matrix(u, v, r, t)
        return _tweighted(u, v, r, t, 0.0, 0.0, 1.0, 1.0)
    if kind is RegKind.TDURA2:
        return _tweighted(u, v, r, t, 1.0, 1.0, 0.0, 0.0)
    if kind is RegKind.TWEIGHTED:
        return _tweighted(u, v, r, t, spec.lam1, spec.lam2, spec.lam3, spec.lam4)
    raise ConfigError(f"unknown penalty kind {kind!r}")


def static_penalty(spec: RegSpec, params: ModelParams, example) -> float:
    """Value of a static penalty for one (head, relation, tail) example."""
    if spec.kind not in STATIC_KINDS:
        raise ConfigError(f"{spec.kind.value} is not a static penalty")
    h, r, v = example[0], example[1], example[2]
    values, _ = penalty_batch(spec, params, np.asarray([h]), np.asarray([r]),
                              np.asarray([v]))
    return float(values[0])


def temporal_penalty(spec: RegSpec, params: ModelParams, example) -> float:
    """Value of a temporal penalty for one (head, relation, tail, time)
    example."""
    if spec.kind not in TEMPORAL_KINDS:
        raise ConfigError(f"{spec.kind.value} is not a temporal penalty")
    if len(example) < 4:
        raise ConfigError("temporal penalties need a timestamp id")
    h, r, v, tl = example[0], example[1], example[2], example[3]
    values, _ = penalty_batch(spec, params, np.asarray([h]), np.asarray([r]),
                              np.asarray([v]), np.asarray([tl]))
    return float(values[0])


# -- penalty implementations -------------------------------------------------

def _fro(u, v, r, t):
    values = _sumsq(u) + _sumsq(v) + _sumsq(r)
    grads = PenaltyGrads(head=2 * u, tail=2 * v, rel=2 * r)
    if t is not None:
        values = values + _sumsq(t)
        grads.time = 2 * t
    return values, grads


def _cube(x, is_complex):
    """Sum of cubed per-entry magnitudes and its gradient."""
    if is_complex:
        mag = np.sqrt(algebra.modulus_sq(x))
        return (mag ** 3).sum(axis=-1), 3 * x * algebra.tile_half(mag)
    mag = np.abs(x)
    return (mag ** 3).sum(axis=-1), 3 * x * mag


def _n3(kind, u, v, r, t):
    cu, gu = _cube(u, kind.is_complex)
    cv, gv = _cube(v, kind.is_complex)
    cr, gr = _cube(r, kind.is_complex)
    values = cu + cr + cv
    grads = PenaltyGrads(head=gu, tail=gv, rel=gr)
    if t is not None:
        ct, gt = _cube(t, kind.is_complex)
        values = values + ct
        grads.time = gt
    return values, grads


def _dura_static(kind, spec, model, u, v, r, t):
    if model is ModelKind.RESCAL:
        proj_u, du_p, dr_u = _matrix_proj_head(u, r)
        proj_v, dv_p, dr_v = _matrix_proj_tail(v, r)
    else:
        msq = algebra.modulus_sq if model.is_complex else np.square
        tile = algebra.tile_half if model.is_complex else (lambda m: m)
        m_u, m_v, m_r = msq(u), msq(v), msq(r)
        proj_u = (m_u * m_r).sum(axis=-1)
        proj_v = (m_v * m_r).sum(axis=-1)
        du_p = 2 * u * tile(m_r)
        dv_p = 2 * v * tile(m_r)
        dr_u = 2 * r * tile(m_u)
        dr_v = 2 * r * tile(m_v)

    if kind is RegKind.DURA_I:
        values = proj_u + _sumsq(v)
        return values, PenaltyGrads(head=du_p, tail=2 * v, rel=dr_u)
    if kind is RegKind.DURA_II:
        values = proj_v + _sumsq(u)
        return values, PenaltyGrads(head=2 * u, tail=dv_p, rel=dr_v)
    lam1, lam2 = spec.lam1, spec.lam2
    values = lam1 * (_sumsq(u) + _sumsq(v)) + lam2 * (proj_u + proj_v)
    return values, PenaltyGrads(
        head=2 * lam1 * u + lam2 * du_p,
        tail=2 * lam1 * v + lam2 * dv_p,
        rel=lam2 * (dr_u + dr_v),
    )


def _matrix_proj_head(u, r):
    """||u R||^2 with gradients; r is a batch of matrices (b, D, D)."""
    q = np.einsum("bd,bde->be", u, r)
    val = _sumsq(q)
    du = 2 * np.einsum("be,bde->bd", q, r)
    dr = 2 * np.einsum("bd,be->bde", u, q)
    return val, du, dr


def _matrix_proj_tail(v, r):
    """||v R^T||^2 with gradients."""
    p = np.einsum("bc,bac->ba", v, r)
    val = _sumsq(p)
    dv = 2 * np.einsum("ba,bac->bc", p, r)
    dr = 2 * np.einsum("ba,bc->bac", p, v)
    return val, dv, dr


def _abs_grad(x, is_complex):
    """Sum of per-entry magnitudes and its (sub)gradient, 0 at kinks."""
    if is_complex:
        mag = np.sqrt(algebra.modulus_sq(x))
        safe = np.where(mag == 0, 1.0, mag)
        return mag.sum(axis=-1), x * algebra.tile_half(np.where(mag == 0, 0.0, 1.0 / safe))
    return np.abs(x).sum(axis=-1), np.sign(x)


def _reg_p1(spec, model, u, v, r):
    if model is ModelKind.RESCAL:
        a = np.einsum("bd,bde->be", u, r) - v
        va, sa = _abs_grad(a, False)
        b = np.einsum("bc,bac->ba", v, r) - u
        vb, sb = _abs_grad(b, False)
        du = np.einsum("be,bde->bd", sa, r) - sb
        dv = np.einsum("ba,bac->bc", sb, r) - sa
        dr = np.einsum("bd,be->bde", u, sa) + np.einsum("ba,bc->bac", sb, v)
        return va + vb, PenaltyGrads(head=du, tail=dv, rel=dr)

    if model.is_complex:
        a = algebra.cmul(u, algebra.conj(r)) - v
        va, ga = _abs_grad(a, True)
        r_tail = algebra.conj(r) if spec.conjugate_tail_projection else r
        b = algebra.cmul(v, r_tail) - u
        vb, gb = _abs_grad(b, True)
        du = algebra.cmul(ga, r) - gb
        dv = algebra.cmul(gb, algebra.conj(r_tail)) - ga
        dr = algebra.conj(algebra.cmul(ga, algebra.conj(u)))
        d_rt = algebra.cmul(gb, algebra.conj(v))
        dr = dr + (algebra.conj(d_rt) if spec.conjugate_tail_projection else d_rt)
        return va + vb, PenaltyGrads(head=du, tail=dv, rel=dr)

    a = u * r - v
    va, sa = _abs_grad(a, False)
    b = v * r - u
    vb, sb = _abs_grad(b, False)
    return va + vb, PenaltyGrads(
        head=sa * r - sb, tail=sb * r - sa, rel=sa * u + sb * v
    )


def _tdura1_matrix(u, v, r, t):
    """Projected+plain squared norms through the elementwise relation-time
    matrix product (the TRESCAL case)."""
    m = r * t
    q = np.einsum("bd,bde->be", u, m)
    p = np.einsum("bc,bac->ba", v, m)
    values = _sumsq(q) + _sumsq(v) + _sumsq(p) + _sumsq(u)
    du = 2 * np.einsum("be,bde->bd", q, m) + 2 * u
    dv = 2 * np.einsum("ba,bac->bc", p, m) + 2 * v
    dm = 2 * (np.einsum("bd,be->bde", u, q) + np.einsum("ba,bc->bac", p, v))
    return values, PenaltyGrads(head=du, tail=dv, rel=dm * t, time=dm * r)


def _tweighted(u, v, r, t, lam1, lam2, lam3, lam4):
    """Weighted four-block temporal penalty over diagonal complex factors.

    Blocks: relation-projected entities, time-projected entities, plain
    entity norms, and relation-time-projected entities.  (0,0,1,1)
    recovers the time-dependent-relation variant, (1,1,0,0) the
    time-dependent-entity variant.
    """
    m_u = algebra.modulus_sq(u)
    m_v = algebra.modulus_sq(v)
    m_r = algebra.modulus_sq(r)
    m_t = algebra.modulus_sq(t)
    m_rt = m_r * m_t
    values = (
        lam1 * ((m_u * m_r).sum(-1) + (m_v * m_t).sum(-1))
        + lam2 * ((m_u * m_t).sum(-1) + (m_v * m_r).sum(-1))
        + lam3 * (m_u.sum(-1) + m_v.sum(-1))
        + lam4 * ((m_u * m_rt).sum(-1) + (m_v * m_rt).sum(-1))
    )
    tile = algebra.tile_half
    du = 2 * u * tile(lam1 * m_r + lam2 * m_t + lam3 + lam4 * m_rt)
    dv = 2 * v * tile(lam1 * m_t + lam2 * m_r + lam3 + lam4 * m_rt)
    dr = 2 * r * tile(lam1 * m_u + lam2 * m_v + lam4 * (m_u + m_v) * m_t)
    dt = 2 * t * tile(lam1 * m_v + lam2 * m_u + lam4 * (m_u + m_v) * m_r)
    return values, PenaltyGrads(head=du, tail=dv, rel=dr, time=dt)


# -- timestamp smoothness -----------------------------------------------------

def timestamp_smoother(
    kind: SmootherKind,
    times: np.ndarray,
    chain_length: int | None = None,
) -> float:
    """Mean penalty on differences of consecutive timestamp parameters.

    ``chain_length`` restricts the chain to the first n slots so a reserved
    untimed slot at the end stays out of the adjacency chain.
    """
    value, _ = timestamp_smoother_grad(kind, times, chain_length)
    return value


def timestamp_smoother_grad(
    kind: SmootherKind,
    times: np.ndarray,
    chain_length: int | None = None,
) -> tuple[float, np.ndarray]:
    """Smoothness value plus its dense gradient over the timestamp table."""
    grad = np.zeros_like(times)
    if kind is SmootherKind.NONE:
        return 0.0, grad
    n = times.shape[0] if chain_length is None else chain_length
    if n < 2:
        warnings.warn("timestamp smoother needs at least two timestamps; "
                      "returning 0", stacklevel=2)
        return 0.0, grad

    diffs = times[1:n] - times[: n - 1]
    scale = 1.0 / (n - 1)
    if kind is SmootherKind.L2:
        value = float((diffs * diffs).sum() * scale)
        g = 2.0 * scale * diffs
    elif kind is SmootherKind.L3:
        mag = np.sqrt(algebra.modulus_sq(diffs))
        value = float((mag ** 3).sum() * scale)
        g = 3.0 * scale * diffs * algebra.tile_half(mag)
    else:
        raise ConfigError(f"unknown smoother kind {kind!r}")
    grad[1:n] += g
    grad[: n - 1] -= g
    return value, grad
