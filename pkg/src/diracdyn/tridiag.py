"""Symmetric tridiagonal matrices: determinants, inverses and solves in O(K).

Leading/trailing principal-minor determinants grow or decay geometrically
with ``K``, so every such sequence is carried as a mantissa array and a
separate base-2 exponent array (``value = ldexp(mantissa, exponent)``).  The
inverse is represented as a one-pair matrix ``(S^-1)_ij = u_i w_j`` for
``i <= j`` in the same scaled form.

Indices are 0-based throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.linalg import solve_banded

__all__ = [
    "SymTridiag",
    "DetSequence",
    "OnePairInverse",
    "BlockDiagFactors",
    "SingularMatrix",
    "SplitRequired",
    "NotPositiveDefinite",
    "det_sequence",
    "inverse_entry",
    "one_pair_factors",
    "block_diagonalize",
    "inverse_full",
    "solve",
    "split_blocks",
]


class SingularMatrix(np.linalg.LinAlgError):
    pass


class SplitRequired(ValueError):
    """An off-diagonal entry vanishes; the matrix decouples into blocks."""

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class NotPositiveDefinite(ArithmeticError):
    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class SymTridiag:
    """Diagonal ``c`` (length K) and off-diagonal ``b`` (length K-1)."""

    c: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        c = np.ascontiguousarray(self.c, dtype=float).ravel()
        b = np.ascontiguousarray(self.b, dtype=float).ravel()
        if c.size < 1:
            raise ValueError("tridiagonal matrix needs K >= 1")
        if b.size != c.size - 1:
            raise ValueError(f"off-diagonal length {b.size} != K - 1 = {c.size - 1}")
        c.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "b", b)

    @property
    def K(self) -> int:
        return self.c.size

    def to_dense(self) -> np.ndarray:
        return np.diag(self.c) + np.diag(self.b, 1) + np.diag(self.b, -1)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        out = self.c.reshape((-1,) + (1,) * (v.ndim - 1)) * v
        bb = self.b.reshape((-1,) + (1,) * (v.ndim - 1))
        out[:-1] += bb * v[1:]
        out[1:] += bb * v[:-1]
        return out

    def det(self) -> float:
        return det_sequence(self).last

    def reversed(self) -> "SymTridiag":
        return SymTridiag(self.c[::-1], self.b[::-1])

    def block(self, start: int, stop: int) -> "SymTridiag":
        return SymTridiag(self.c[start:stop], self.b[start:stop - 1])

    @classmethod
    def from_dense(cls, M) -> "SymTridiag":
        M = np.asarray(M, dtype=float)
        return cls(np.diag(M).copy(), np.diag(M, 1).copy())

    @classmethod
    def identity(cls, K: int) -> "SymTridiag":
        return cls(np.ones(K), np.zeros(K - 1))


# -- numba kernels ------------------------------------------------------------

@njit(cache=True)
def _det_scaled(c, b2, mant, expo):
    # mant/expo have length K+1; entry i is det of the leading i x i block
    n = c.size
    mant[0] = 1.0
    expo[0] = 0
    fr, ex = math.frexp(c[0])
    mant[1] = fr
    expo[1] = ex
    for i in range(1, n):
        shift = expo[i - 1] - expo[i]
        val = c[i] * mant[i] - b2[i - 1] * math.ldexp(mant[i - 1], shift)
        fr, ex = math.frexp(val)
        mant[i + 1] = fr
        expo[i + 1] = expo[i] + ex


@njit(cache=True)
def _cumprod_scaled(x, mant, expo):
    # prefix products: entry i is prod(x[:i]); zeros are skipped
    mant[0] = 1.0
    expo[0] = 0
    for i in range(x.size):
        v = x[i]
        if v == 0.0:
            mant[i + 1] = mant[i]
            expo[i + 1] = expo[i]
            continue
        fr, ex = math.frexp(mant[i] * v)
        mant[i + 1] = fr
        expo[i + 1] = expo[i] + ex


@njit(cache=True)
def _one_pair_kernel(c, b, um, ue, wm, we):
    K = c.size
    b2 = b * b
    Lm = np.empty(K + 1)
    Le = np.empty(K + 1, dtype=np.int64)
    _det_scaled(c, b2, Lm, Le)
    # trailing minors: T[j] = det S[j:, j:], T[K] = 1
    Rm = np.empty(K + 1)
    Re = np.empty(K + 1, dtype=np.int64)
    _det_scaled(c[::-1].copy(), b2[::-1].copy(), Rm, Re)
    # suffix products P[i] = prod b[i:K-1], P[K-1] = 1
    Pm = np.empty(K)
    Pe = np.empty(K, dtype=np.int64)
    Pm[K - 1] = 1.0
    Pe[K - 1] = 0
    for i in range(K - 2, -1, -1):
        fr, ex = math.frexp(Pm[i + 1] * b[i])
        Pm[i] = fr
        Pe[i] = Pe[i + 1] + ex
    dm = Lm[K]
    de = Le[K]
    if dm == 0.0:
        return 1
    for i in range(K):
        sgn = -1.0 if i % 2 == 0 else 1.0
        fr, ex = math.frexp(sgn * Lm[i] * Pm[i] / dm)
        um[i] = fr
        ue[i] = Le[i] + Pe[i] - de + ex
        # T[i+1] is Rm[K-i-1]
        fr, ex = math.frexp(sgn * Rm[K - i - 1] / Pm[i])
        wm[i] = fr
        we[i] = Re[K - i - 1] - Pe[i] + ex
    return 0


@njit(cache=True)
def _thomas(c, b, rhs, out):
    # returns index of the first zero pivot, or -1
    n = c.size
    cp = np.empty(n)
    piv = c[0]
    if piv == 0.0:
        return 0
    cp[0] = b[0] / piv if n > 1 else 0.0
    for r in range(rhs.shape[1]):
        out[0, r] = rhs[0, r] / piv
    for i in range(1, n):
        piv = c[i] - b[i - 1] * cp[i - 1]
        if piv == 0.0:
            return i
        if i < n - 1:
            cp[i] = b[i] / piv
        for r in range(rhs.shape[1]):
            out[i, r] = (rhs[i, r] - b[i - 1] * out[i - 1, r]) / piv
    for i in range(n - 2, -1, -1):
        for r in range(rhs.shape[1]):
            out[i, r] -= cp[i] * out[i + 1, r]
    return -1


@njit(cache=True)
def _block_diag_kernel(c, b, x, y, z, beta, a, dd):
    # returns the failing step (1-based) or 0
    K = c.size
    if c[0] <= 0.0:
        return 1
    x[0] = 1.0 / math.sqrt(c[0])
    for k in range(K - 1):
        if k == 0:
            a[k] = c[0]
            beta[k] = b[0]
        else:
            a[k] = 1.0
            beta[k] = b[k] * z[k - 1]
        dd[k] = c[k + 1]
        disc = a[k] * dd[k] - beta[k] * beta[k]
        if disc <= 0.0:
            return k + 1
        sa = math.sqrt(a[k])
        x[k] = 1.0 / sa
        y[k] = -beta[k] / math.sqrt(a[k] * disc)
        z[k] = sa / math.sqrt(disc)
    if K > 1:
        x[K - 1] = 1.0
    return 0


# -- determinant sequences ----------------------------------------------------

@dataclass(frozen=True)
class DetSequence:
    """``d[i] = det S[l:l+i, l:l+i]`` for ``i = 0..K-l``, stored scaled."""

    l: int
    mantissa: np.ndarray
    exponent: np.ndarray

    @property
    def d(self) -> np.ndarray:
        return np.ldexp(self.mantissa, self.exponent)

    @property
    def last(self) -> float:
        return float(np.ldexp(self.mantissa[-1], self.exponent[-1]))

    def __len__(self):
        return self.mantissa.size

    def __getitem__(self, i):
        return np.ldexp(self.mantissa[i], self.exponent[i])

    def log_abs(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(np.abs(self.mantissa)) + self.exponent * math.log(2.0)


def det_sequence(S: SymTridiag, l: int = 0) -> DetSequence:
    """Leading-minor determinants of the trailing block starting at row ``l``."""
    if not 0 <= l < S.K:
        raise IndexError(f"start index {l} outside 0..{S.K - 1}")
    c = S.c[l:]
    b = S.b[l:]
    mant = np.empty(c.size + 1)
    expo = np.empty(c.size + 1, dtype=np.int64)
    _det_scaled(c, b * b, mant, expo)
    return DetSequence(l, mant, expo)


def _trailing_dets(S: SymTridiag):
    # T[j] = det S[j:, j:] for j = 0..K, T[K] = 1
    rev = det_sequence(S.reversed())
    return rev.mantissa[::-1], rev.exponent[::-1]


def inverse_entry(S: SymTridiag, i: int, j: int) -> float:
    """``(S^-1)_{ij}`` from minor determinants and the off-diagonal product."""
    if i > j:
        i, j = j, i
    if not (0 <= i and j < S.K):
        raise IndexError(f"({i}, {j}) outside a {S.K}x{S.K} matrix")
    lead = det_sequence(S)
    if lead.mantissa[-1] == 0.0:
        raise SingularMatrix("tridiagonal matrix is singular")
    tm, te = _trailing_dets(S)
    seg = S.b[i:j]
    if np.any(seg == 0.0):
        return 0.0
    pm = np.empty(seg.size + 1)
    pe = np.empty(seg.size + 1, dtype=np.int64)
    _cumprod_scaled(seg, pm, pe)
    sign = -1.0 if (i + j) % 2 else 1.0
    m = sign * lead.mantissa[i] * tm[j + 1] * pm[-1] / lead.mantissa[-1]
    e = lead.exponent[i] + te[j + 1] + pe[-1] - lead.exponent[-1]
    return float(np.ldexp(m, e))


# -- one-pair representation ----------------------------------------------------

@dataclass(frozen=True)
class OnePairInverse:
    """``(S^-1)_{ij} = u_i w_j`` for ``i <= j``, with ``u``/``w`` stored scaled."""

    u_mant: np.ndarray
    u_exp: np.ndarray
    w_mant: np.ndarray
    w_exp: np.ndarray

    @property
    def K(self) -> int:
        return self.u_mant.size

    @property
    def u(self) -> np.ndarray:
        return np.ldexp(self.u_mant, self.u_exp)

    @property
    def w(self) -> np.ndarray:
        return np.ldexp(self.w_mant, self.w_exp)

    def entry(self, i: int, j: int) -> float:
        if i > j:
            i, j = j, i
        return float(np.ldexp(self.u_mant[i] * self.w_mant[j],
                              self.u_exp[i] + self.w_exp[j]))

    def to_dense(self) -> np.ndarray:
        upper = np.ldexp(np.outer(self.u_mant, self.w_mant),
                         self.u_exp[:, None] + self.w_exp[None, :])
        upper = np.triu(upper)
        return upper + np.triu(upper, 1).T


def one_pair_factors(S: SymTridiag) -> OnePairInverse:
    """Vectors ``u``, ``w`` of the one-pair inverse, in O(K).

    Requires every off-diagonal entry to be nonzero; see :func:`split_blocks`.
    """
    zero = np.flatnonzero(S.b == 0.0)
    if zero.size:
        raise SplitRequired(
            f"off-diagonal b[{zero[0]}] = 0; split the matrix into blocks", int(zero[0]))
    K = S.K
    um = np.empty(K)
    ue = np.empty(K, dtype=np.int64)
    wm = np.empty(K)
    we = np.empty(K, dtype=np.int64)
    if _one_pair_kernel(S.c, S.b, um, ue, wm, we):
        raise SingularMatrix("tridiagonal matrix is singular")
    return OnePairInverse(um, ue, wm, we)


# -- block diagonalization --------------------------------------------------------

@dataclass(frozen=True)
class BlockDiagFactors:
    """Per-step factors of ``U = U_1 ... U_{K-1}`` with ``U^T S U = I``.

    ``y``, ``z``, ``beta``, ``a``, ``dd`` have one entry per step (K-1);
    ``x`` has K entries, the last being the trailing diagonal factor (1 for
    K > 1, ``1/sqrt(c_1)`` for K = 1).
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    beta: np.ndarray
    a: np.ndarray
    dd: np.ndarray

    @property
    def K(self) -> int:
        return self.x.size

    def _zprev(self) -> np.ndarray:
        return np.concatenate([[1.0], self.z])

    def diag_U(self) -> np.ndarray:
        return self.x * self._zprev()

    def U(self) -> np.ndarray:
        """Dense upper-triangular ``U``; ``U_ij = x_j (y_i..y_{j-1}) z_{i-1}``."""
        K = self.K
        zp = self._zprev()
        U = np.zeros((K, K))
        for i in range(K):
            prod = 1.0
            U[i, i] = self.x[i] * zp[i]
            for j in range(i + 1, K):
                prod *= self.y[j - 1]
                U[i, j] = self.x[j] * prod * zp[i]
        return U

    def inverse(self) -> np.ndarray:
        """``S^-1 = U U^T`` in O(K^2) without forming ``U``.

        For ``i <= j``: ``zp_i zp_j (y_i..y_{j-1}) sigma_j`` with
        ``sigma_j = x_j^2 + y_j^2 sigma_{j+1}``.
        """
        K = self.K
        zp = self._zprev()
        sigma = np.empty(K)
        sigma[-1] = self.x[-1] ** 2
        for j in range(K - 2, -1, -1):
            sigma[j] = self.x[j] ** 2 + self.y[j] ** 2 * sigma[j + 1]
        pm = np.empty(K)
        pe = np.empty(K, dtype=np.int64)
        _cumprod_scaled(self.y, pm, pe)
        # Y(i, j) = prefix[j] / prefix[i]
        ratio = np.ldexp(pm[None, :] / pm[:, None], pe[None, :] - pe[:, None])
        upper = np.triu(np.outer(zp, zp * sigma) * ratio)
        return upper + np.triu(upper, 1).T


def block_diagonalize(S: SymTridiag) -> BlockDiagFactors:
    """Congruence factors for a positive definite ``S`` (one fixed sign branch)."""
    K = S.K
    n = max(K - 1, 0)
    x = np.empty(K)
    y, z, beta, a, dd = (np.empty(n) for _ in range(5))
    bad = _block_diag_kernel(S.c, S.b, x, y, z, beta, a, dd)
    if bad:
        raise NotPositiveDefinite(
            f"a_k d_k - beta_k^2 <= 0 at step k = {bad}; matrix is not positive definite",
            bad)
    return BlockDiagFactors(x, y, z, beta, a, dd)


# -- full inverse and solves --------------------------------------------------------

def split_blocks(S: SymTridiag):
    """``[(start, stop), ...]`` of the decoupled diagonal blocks (split at zero ``b``)."""
    cuts = np.flatnonzero(S.b == 0.0) + 1
    edges = np.concatenate([[0], cuts, [S.K]])
    return [(int(edges[k]), int(edges[k + 1])) for k in range(edges.size - 1)]


def _inverse_entries(S: SymTridiag) -> np.ndarray:
    K = S.K
    lead = det_sequence(S)
    if lead.mantissa[-1] == 0.0:
        raise SingularMatrix("tridiagonal matrix is singular")
    tm, te = _trailing_dets(S)
    pm = np.empty(K)
    pe = np.empty(K, dtype=np.int64)
    _cumprod_scaled(S.b, pm, pe)
    zeros = np.concatenate([[0], np.cumsum(S.b == 0.0)])
    idx = np.arange(K)
    sign = np.where((idx[:, None] + idx[None, :]) % 2, -1.0, 1.0)
    m = (sign * lead.mantissa[:K, None] * (tm[1:] * pm)[None, :]
         / (pm[:, None] * lead.mantissa[-1]))
    e = (lead.exponent[:K, None] + (te[1:] + pe)[None, :]
         - pe[:, None] - lead.exponent[-1])
    upper = np.ldexp(m, e)
    upper[(zeros[None, :] - zeros[:, None]) > 0] = 0.0
    upper = np.triu(upper)
    return upper + np.triu(upper, 1).T


def inverse_full(S: SymTridiag, method: str = "onepair") -> np.ndarray:
    """Dense ``S^-1`` by 'onepair', 'blockdiag' or 'entries'; exactly symmetric."""
    if method == "entries":
        return _inverse_entries(S)
    if method not in ("onepair", "blockdiag"):
        raise ValueError(f"unknown method {method!r}")
    out = np.zeros((S.K, S.K))
    for start, stop in split_blocks(S):
        blk = S.block(start, stop)
        if method == "onepair":
            inv = one_pair_factors(blk).to_dense()
        else:
            inv = block_diagonalize(blk).inverse()
        out[start:stop, start:stop] = inv
    return out


def solve(S: SymTridiag, rhs) -> np.ndarray:
    """Solve ``S x = rhs`` by tridiagonal elimination (rhs may be ``K`` or ``K x r``).

    Falls back to a partially pivoted banded LU when elimination meets a
    zero pivot.
    """
    rhs = np.asarray(rhs, dtype=float)
    vec = rhs.ndim == 1
    R = rhs.reshape(S.K, -1)
    out = np.empty_like(R)
    if _thomas(S.c, S.b, R, out) >= 0 or not np.all(np.isfinite(out)):
        ab = np.zeros((3, S.K))
        ab[0, 1:] = S.b
        ab[1] = S.c
        ab[2, :-1] = S.b
        try:
            with np.errstate(all="ignore"):
                out = solve_banded((1, 1), ab, R)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrix(f"tridiagonal matrix is singular: {exc}") from None
        if not np.all(np.isfinite(out)):
            raise SingularMatrix("tridiagonal matrix is singular")
    return out[:, 0] if vec else out
