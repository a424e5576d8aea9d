"""Dense real and split-complex vector primitives shared by every model.

A complex vector with ``d`` entries is stored as a real array of length
``2d``: the first half holds the real parts, the second half the imaginary
parts.  Keeping one flat buffer per embedding row means every norm or
penalty below is a plain sum over that buffer.  All functions are pure and
broadcast over leading batch axes.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


def split(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Views of the real and imaginary halves of a split-complex array."""
    n = x.shape[-1]
    if n % 2:
        raise ValueError(f"split-complex storage must have even length, got {n}")
    half = n // 2
    return x[..., :half], x[..., half:]


def join(re: np.ndarray, im: np.ndarray) -> np.ndarray:
    """Assemble a split-complex array from its two halves."""
    if re.shape != im.shape:
        raise ValueError(f"half shapes differ: {re.shape} vs {im.shape}")
    return np.concatenate([re, im], axis=-1)


def conj(x: np.ndarray) -> np.ndarray:
    re, im = split(x)
    return join(re, -im)


def cmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise complex product of two split-complex arrays."""
    ar, ai = split(a)
    br, bi = split(b)
    return join(ar * br - ai * bi, ar * bi + ai * br)


def modulus_sq(x: np.ndarray) -> np.ndarray:
    """Per-entry squared complex modulus, one value per complex dimension."""
    re, im = split(x)
    return re * re + im * im


def tile_half(m: np.ndarray) -> np.ndarray:
    """Repeat a per-complex-dimension array onto both storage halves."""
    return np.concatenate([m, m], axis=-1)


def re_trilinear(u: np.ndarray, r: np.ndarray, v: np.ndarray) -> float:
    """Re(<conj(u) * r, v>): the trilinear complex score with the conjugate
    taken on the first argument.

    Reduces to the plain sum of triple products when all imaginary parts
    are zero.
    """
    if not (u.shape == r.shape == v.shape):
        raise ValueError(f"dimension mismatch: {u.shape}, {r.shape}, {v.shape}")
    ur, ui = split(u)
    rr, ri = split(r)
    vr, vi = split(v)
    qr = ur * rr + ui * ri
    qi = ur * ri - ui * rr
    return float(np.sum(qr * vr - qi * vi))


def row_matvec(u: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """Row vector times matrix: u @ mat."""
    if u.shape[-1] != mat.shape[0]:
        raise ValueError(
            f"dimension mismatch: vector of length {u.shape[-1]} vs matrix {mat.shape}"
        )
    return u @ mat


class Norms(NamedTuple):
    l1: float
    l2_sq: float
    l3_cubed: float


def norms(x: np.ndarray, complex_entries: bool = False) -> Norms:
    """L1, squared-L2 and cubed-L3 norms of a vector or matrix.

    With ``complex_entries=True`` the input is read as split-complex and
    per-entry magnitudes are complex moduli.
    """
    if complex_entries:
        mag = np.sqrt(modulus_sq(x))
    else:
        mag = np.abs(x)
    return Norms(
        l1=float(mag.sum()),
        l2_sq=float((mag * mag).sum()),
        l3_cubed=float((mag ** 3).sum()),
    )
