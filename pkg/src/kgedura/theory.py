"""Numerical verification of the nuclear-2-norm structure of the penalty.

For diagonal factorizations the global penalty sum, minimized over the
rescalings that leave the reconstructed tensor fixed, equals (up to the
constant 4 * sqrt of the slice count) the tensor nuclear 2-norm.  This
module builds the balanced rescalings realizing that minimum, checks the
balance identities they must satisfy, and provides an exact nuclear-norm
oracle for rank-1 tensors.  Everything here is restricted to small, real,
diagonal factor sets: the general tensor nuclear norm is NP-hard, so the
checks are (a) rank-1 oracles, (b) one-sided bound directions and
(c) balance identities at the constructed minimizers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class FactorTriple:
    """Real diagonal factorization: slice j is U @ diag(R[j]) @ V.T."""

    U: np.ndarray  # (|E|, D)
    R: np.ndarray  # (|R|, D), rows are relation diagonals
    V: np.ndarray  # (|E|, D)

    def reconstruct(self) -> np.ndarray:
        return np.einsum("id,jd,kd->ijk", self.U, self.R, self.V)


@dataclass(frozen=True)
class FactorQuad:
    """Real diagonal factorization of a 4-way tensor."""

    U: np.ndarray
    R: np.ndarray
    V: np.ndarray
    T: np.ndarray  # (|T|, D)

    def reconstruct(self) -> np.ndarray:
        return np.einsum("id,jd,kd,ld->ijkl", self.U, self.R, self.V, self.T)


def global_dura_sum(f: FactorTriple) -> float:
    """Slice-by-slice global penalty sum over all relations:
    sum_j ||U R_j||_F^2 + ||V||_F^2 + ||V R_j^T||_F^2 + ||U||_F^2."""
    total = 0.0
    v_sq = float((f.V * f.V).sum())
    u_sq = float((f.U * f.U).sum())
    for j in range(f.R.shape[0]):
        ur = f.U * f.R[j]
        vr = f.V * f.R[j]
        total += float((ur * ur).sum()) + v_sq + float((vr * vr).sum()) + u_sq
    return total


def global_dura_sum_columnwise(f: FactorTriple) -> float:
    """Independent column-norm route to the same value:
    sum_d ||u_d||^2 ||r_d||^2 + |R| ||v_d||^2 + ||v_d||^2 ||r_d||^2 + |R| ||u_d||^2."""
    cu = (f.U * f.U).sum(axis=0)
    cr = (f.R * f.R).sum(axis=0)
    cv = (f.V * f.V).sum(axis=0)
    n_rel = f.R.shape[0]
    return float(np.sum(cu * cr + n_rel * cv + cv * cr + n_rel * cu))


def rank1_nuclear_oracle(u: np.ndarray, r: np.ndarray, v: np.ndarray,
                         t: np.ndarray | None = None) -> float:
    """Nuclear 2-norm of a rank-1 tensor: the product of factor L2 norms."""
    value = np.linalg.norm(u) * np.linalg.norm(r) * np.linalg.norm(v)
    if t is not None:
        value *= np.linalg.norm(t)
    return float(value)


def column_norm_products(*factors: np.ndarray) -> float:
    """sum_d prod_k ||column d of factor k||_2."""
    prod = np.ones(factors[0].shape[1])
    for f in factors:
        prod = prod * np.sqrt((f * f).sum(axis=0))
    return float(prod.sum())


def _drop_zero_columns(*factors: np.ndarray) -> tuple[np.ndarray, ...]:
    norms = [np.sqrt((f * f).sum(axis=0)) for f in factors]
    keep = np.ones(factors[0].shape[1], dtype=bool)
    for n in norms:
        keep &= n > 0
    if not keep.any():
        raise ConfigError("all factor columns are zero; nothing to rescale")
    return tuple(f[:, keep] for f in factors)


def balanced_rescale(f: FactorTriple) -> FactorTriple:
    """Rescale columns, preserving the reconstructed tensor, so that both
    balance identities ||u_d|| ||r_d|| = sqrt(|R|) ||v_d|| and
    ||v_d|| ||r_d|| = sqrt(|R|) ||u_d|| hold per column.

    At that point the global penalty sum collapses to
    4 sqrt(|R|) * sum_d ||u_d|| ||r_d|| ||v_d||, the nuclear-norm bound
    with equality.  Columns with an all-zero factor contribute nothing and
    are dropped first.
    """
    U, R, V = _drop_zero_columns(f.U, f.R, f.V)
    nu = np.sqrt((U * U).sum(axis=0))
    nr = np.sqrt((R * R).sum(axis=0))
    nv = np.sqrt((V * V).sum(axis=0))
    sqrt_nrel = np.sqrt(R.shape[0])

    alpha_r = sqrt_nrel / nr
    alpha_u = np.sqrt(nr * nv / (sqrt_nrel * nu))
    alpha_v = np.sqrt(nr * nu / (sqrt_nrel * nv))
    return FactorTriple(U=U * alpha_u, R=R * alpha_r, V=V * alpha_v)


def temporal_dura1_sum(f: FactorQuad) -> float:
    """Global sum of the time-dependent-relation penalty over all
    (relation, time) slices."""
    total = 0.0
    u_sq = float((f.U * f.U).sum())
    v_sq = float((f.V * f.V).sum())
    for j in range(f.R.shape[0]):
        for l in range(f.T.shape[0]):
            rt = f.R[j] * f.T[l]
            urt = f.U * rt
            vrt = f.V * rt
            total += float((urt * urt).sum()) + v_sq + float((vrt * vrt).sum()) + u_sq
    return total


def temporal_dura2_sum(f: FactorQuad) -> float:
    """Global sum of the time-dependent-entity penalty over all
    (relation, time) slices."""
    total = 0.0
    for j in range(f.R.shape[0]):
        for l in range(f.T.shape[0]):
            ur = f.U * f.R[j]
            vt = f.V * f.T[l]
            ut = f.U * f.T[l]
            vr = f.V * f.R[j]
            total += float((ur * ur).sum() + (vt * vt).sum()
                           + (ut * ut).sum() + (vr * vr).sum())
    return total


def _temporal_rescale(f: FactorQuad, variant: str) -> FactorQuad:
    U, R, V, T = _drop_zero_columns(f.U, f.R, f.V, f.T)
    nu = np.sqrt((U * U).sum(axis=0))
    nr = np.sqrt((R * R).sum(axis=0))
    nv = np.sqrt((V * V).sum(axis=0))
    nt = np.sqrt((T * T).sum(axis=0))
    n_rel, n_time = R.shape[0], T.shape[0]
    root_rt = np.sqrt(n_rel * n_time)

    if variant == "dura1":
        alpha_r = np.sqrt(root_rt / (nr * nt))
        alpha_t = alpha_r
        alpha_u = np.sqrt(nv * nr * nt / (root_rt * nu))
        alpha_v = np.sqrt(nu * nr * nt / (root_rt * nv))
    elif variant == "dura2":
        alpha_u = np.sqrt(nv / nu)
        alpha_v = np.sqrt(nu / nv)
        ratio = (nt * np.sqrt(n_rel)) / (nr * np.sqrt(n_time))
        alpha_r = np.sqrt(ratio)
        alpha_t = np.sqrt(1.0 / ratio)
    else:
        raise ConfigError(f"unknown temporal variant {variant!r}")
    return FactorQuad(U=U * alpha_u, R=R * alpha_r, V=V * alpha_v, T=T * alpha_t)


@dataclass(frozen=True)
class BalanceReport:
    """Result of one balanced-rescaling verification."""

    variant: str
    reconstruction_max_abs_diff: float
    balance_max_rel_dev: float
    sum_identity_rel_dev: float
    sum_nonincreasing: bool
    passed: bool


def _rel_dev(a: np.ndarray | float, b: np.ndarray | float) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-30)
    return float(np.max(np.abs(a - b) / scale))


def _column_norms(*factors):
    return [np.sqrt((f * f).sum(axis=0)) for f in factors]


def verify_static_balance(
    f: FactorTriple,
    recon_tol: float = 1e-9,
    identity_tol: float = 1e-9,
) -> BalanceReport:
    """Rescale, then check tensor invariance, both balance identities, and
    the collapse of the global sum to 4 sqrt(|R|) times the column-product
    sum."""
    g = balanced_rescale(f)
    recon = _rel_free_recon_diff(f.reconstruct(), g.reconstruct())
    nu, nr, nv = _column_norms(g.U, g.R, g.V)
    root = np.sqrt(g.R.shape[0])
    balance = max(_rel_dev(nu * nr, root * nv), _rel_dev(nv * nr, root * nu))
    before = global_dura_sum(f)
    after = global_dura_sum(g)
    ident = _rel_dev(after, 4.0 * root * column_norm_products(g.U, g.R, g.V))
    nonincreasing = after <= before * (1 + 1e-12)
    passed = (recon <= recon_tol and balance <= identity_tol
              and ident <= identity_tol and nonincreasing)
    return BalanceReport("static", recon, balance, ident, nonincreasing, passed)


def verify_temporal_balance(
    f: FactorQuad,
    variant: str,
    recon_tol: float = 1e-9,
    identity_tol: float = 1e-9,
) -> BalanceReport:
    """Temporal analogue of :func:`verify_static_balance` for either
    penalty variant."""
    g = _temporal_rescale(f, variant)
    recon = _rel_free_recon_diff(f.reconstruct(), g.reconstruct())
    nu, nr, nv, nt = _column_norms(g.U, g.R, g.V, g.T)
    n_rel, n_time = g.R.shape[0], g.T.shape[0]
    root_rt = np.sqrt(n_rel * n_time)
    if variant == "dura1":
        balance = max(
            _rel_dev(nu * nr * nt, root_rt * nv),
            _rel_dev(nv * nr * nt, root_rt * nu),
        )
        before = temporal_dura1_sum(f)
        after = temporal_dura1_sum(g)
    else:
        balance = max(
            _rel_dev(np.sqrt(n_time) * nu * nr, np.sqrt(n_rel) * nv * nt),
            _rel_dev(np.sqrt(n_rel) * nu * nt, np.sqrt(n_time) * nv * nr),
        )
        before = temporal_dura2_sum(f)
        after = temporal_dura2_sum(g)
    ident = _rel_dev(after, 4.0 * root_rt * column_norm_products(g.U, g.R, g.V, g.T))
    nonincreasing = after <= before * (1 + 1e-12)
    passed = (recon <= recon_tol and balance <= identity_tol
              and ident <= identity_tol and nonincreasing)
    return BalanceReport(variant, recon, balance, ident, nonincreasing, passed)


def _rel_free_recon_diff(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)))


# -- the verification suite ----------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    name: str
    seeds: int
    max_deviation: float
    passed: bool

    def format_line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<28} seeds={self.seeds:<4} max_dev={self.max_deviation:.3e}  {status}"


def _random_triple(rng, n_ent=3, n_rel=4, dim=5) -> FactorTriple:
    return FactorTriple(
        U=rng.standard_normal((n_ent, dim)),
        R=rng.standard_normal((n_rel, dim)),
        V=rng.standard_normal((n_ent, dim)),
    )


def _random_quad(rng, n_ent=3, n_rel=3, n_time=2, dim=4) -> FactorQuad:
    return FactorQuad(
        U=rng.standard_normal((n_ent, dim)),
        R=rng.standard_normal((n_rel, dim)),
        V=rng.standard_normal((n_ent, dim)),
        T=rng.standard_normal((n_time, dim)),
    )


def run_verification(seeds: int = 20, base_seed: int = 0) -> list[CheckResult]:
    """All theory checks over the given number of random instances."""
    results = []

    dev = 0.0
    for s in range(seeds):
        rng = np.random.default_rng(base_seed + s)
        f = _random_triple(rng)
        dev = max(dev, _rel_dev(global_dura_sum(f), global_dura_sum_columnwise(f)))
    results.append(CheckResult("global-sum-two-routes", seeds, dev, dev <= 1e-12))

    dev = 0.0
    ok = True
    for s in range(seeds):
        rng = np.random.default_rng(base_seed + s)
        rep = verify_static_balance(_random_triple(rng))
        dev = max(dev, rep.reconstruction_max_abs_diff, rep.balance_max_rel_dev,
                  rep.sum_identity_rel_dev)
        ok &= rep.passed
    results.append(CheckResult("static-balance", seeds, dev, ok))

    dev = 0.0
    ok = True
    for s in range(seeds):
        rng = np.random.default_rng(base_seed + s)
        f = _random_triple(rng)
        bound = global_dura_sum(f) / (4.0 * np.sqrt(f.R.shape[0]))
        prods = column_norm_products(f.U, f.R, f.V)
        ok &= bound >= prods * (1 - 1e-9)
        dev = max(dev, max(0.0, (prods - bound) / max(prods, 1e-30)))
    results.append(CheckResult("am-gm-lower-bound", seeds, dev, ok))

    dev = 0.0
    ok = True
    for s in range(seeds):
        rng = np.random.default_rng(base_seed + s)
        f = _random_triple(rng, dim=1)
        g = balanced_rescale(f)
        nuclear = rank1_nuclear_oracle(f.U[:, 0], f.R[:, 0], f.V[:, 0])
        d = _rel_dev(global_dura_sum(g), 4.0 * np.sqrt(f.R.shape[0]) * nuclear)
        dev = max(dev, d)
        ok &= d <= 1e-9
    results.append(CheckResult("rank1-nuclear-equality", seeds, dev, ok))

    for variant in ("dura1", "dura2"):
        dev = 0.0
        ok = True
        for s in range(seeds):
            rng = np.random.default_rng(base_seed + s)
            rep = verify_temporal_balance(_random_quad(rng), variant)
            dev = max(dev, rep.reconstruction_max_abs_diff,
                      rep.balance_max_rel_dev, rep.sum_identity_rel_dev)
            ok &= rep.passed
        results.append(CheckResult(f"temporal-balance-{variant}", seeds, dev, ok))

    dev = 0.0
    ok = True
    for s in range(seeds):
        rng = np.random.default_rng(base_seed + 1000 + s)
        dim = 3
        u = rng.standard_normal(2 * dim)
        r = rng.standard_normal(2 * dim)
        v = rng.standard_normal(2 * dim)
        d = _dual_expansion_gap(u, r, v)
        dev = max(dev, d)
        ok &= d <= 1e-9
    results.append(CheckResult("dual-expansion", seeds, dev, ok))
    return results


def _dual_expansion_gap(u, r, v) -> float:
    """|(-||u*conj(r) - v||^2) - (2*score - ||u*conj(r)||^2 - ||v||^2)|,
    normalized by the magnitude of the left side."""
    from . import algebra

    proj = algebra.cmul(u, algebra.conj(r))
    lhs = -float(algebra.modulus_sq(proj - v).sum())
    rhs = (2.0 * algebra.re_trilinear(u, r, v)
           - float(algebra.modulus_sq(proj).sum())
           - float(algebra.modulus_sq(v).sum()))
    return abs(lhs - rhs) / max(abs(lhs), 1e-30)
