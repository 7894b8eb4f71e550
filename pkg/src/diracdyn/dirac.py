"""Dirac reduction of bracket tables.

A table holds the mutual brackets of ``m`` constraints followed by ``s``
free functions.  The reduced brackets of the free functions can be computed
three ways, all of which agree on regular input:

* :func:`dirac_direct` - subtract ``eta(f, phi) W^{-1} eta(phi, g)`` by linear solves;
* :func:`dirac_determinant` - ratio of the bordered determinant to ``det W``;
* :func:`dirac_recursive_symmetric` / :func:`dirac_recursive_skew` - eliminate
  one constraint (symmetric) or one pair of constraints (skew) at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .brackets import (BracketStructure, PhaseFunction, as_vector,
                       bracket_matrix)

__all__ = [
    "PIVOT_TOL",
    "COND_LIMIT",
    "DegenerateConstraints",
    "PivotBreakdown",
    "ExtendedBracketTable",
    "ReductionReport",
    "dirac_direct",
    "dirac_determinant",
    "dirac_determinant_matrix",
    "dirac_recursive_symmetric",
    "dirac_recursive_skew",
    "recombine_constraints",
    "reduce",
    "tanner_check",
    "dirac_square_check",
    "dirac_bracket_at",
    "jacobiator_residual",
]

PIVOT_TOL = 1e-10
COND_LIMIT = 1e12
# |det W| divided by the Hadamard bound (product of row norms)
DET_GUARD = 1e-14


class DegenerateConstraints(np.linalg.LinAlgError):
    """The constraint block is singular or too ill-conditioned to reduce."""

    def __init__(self, message: str, cond: float = np.inf):
        super().__init__(message)
        self.cond = cond


class PivotBreakdown(ArithmeticError):
    """A recursive elimination hit a (near-)zero pivot at ``step``."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class ExtendedBracketTable:
    """Brackets over ``[phi_1..phi_m, f_1..f_s]``; ``kind`` is 'symmetric' or 'skew'."""

    entries: np.ndarray
    m: int
    kind: str = "skew"

    def __post_init__(self):
        E = np.array(self.entries, dtype=float)
        if E.ndim != 2 or E.shape[0] != E.shape[1]:
            raise ValueError(f"table must be square, got shape {E.shape}")
        if not 0 <= self.m <= E.shape[0]:
            raise ValueError(f"constraint count {self.m} outside 0..{E.shape[0]}")
        if self.kind not in ("symmetric", "skew"):
            raise ValueError(f"kind must be 'symmetric' or 'skew', got {self.kind!r}")
        sign = 1.0 if self.kind == "symmetric" else -1.0
        scale = max(np.max(np.abs(E), initial=0.0), 1.0)
        if np.max(np.abs(E - sign * E.T), initial=0.0) > 1e-12 * scale:
            raise ValueError(f"entries are not {self.kind}")
        E.flags.writeable = False
        object.__setattr__(self, "entries", E)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def s(self) -> int:
        return self.size - self.m

    @property
    def W(self) -> np.ndarray:
        return self.entries[:self.m, :self.m]

    @property
    def scale(self) -> float:
        return float(np.max(np.abs(self.entries), initial=0.0))

    @classmethod
    def from_functions(cls, structure: BracketStructure,
                       constraints: Sequence[PhaseFunction],
                       functions: Sequence[PhaseFunction], x,
                       part: Optional[str] = None) -> "ExtendedBracketTable":
        bm = bracket_matrix(structure, list(constraints) + list(functions), x, part)
        return cls(bm.entries, len(constraints),
                   "skew" if bm.kind == "skew" else "symmetric")


@dataclass
class ReductionReport:
    value: np.ndarray
    method: str
    pivots: list = field(default_factory=list)
    recombination: Optional[np.ndarray] = None


def _condition(W: np.ndarray) -> float:
    if W.size == 0:
        return 1.0
    with np.errstate(all="ignore"):
        c = np.linalg.cond(W)
    return float(c) if np.isfinite(c) else np.inf


def dirac_direct(t: ExtendedBracketTable) -> np.ndarray:
    """Reduced ``s x s`` bracket block by LU solves against ``W``."""
    m = t.m
    E = t.entries
    tail = E[m:, m:].copy()
    if m == 0:
        return tail
    W = E[:m, :m]
    cond = _condition(W)
    if cond > COND_LIMIT:
        raise DegenerateConstraints(
            f"constraint matrix is singular or ill-conditioned (cond ~ {cond:.3g})", cond)
    # C eta(phi, g) for every trailing g, then contract with eta(f, phi)
    X = np.linalg.solve(W, E[:m, m:])
    return tail - E[m:, :m] @ X


def _logdet(M: np.ndarray):
    if M.size == 0:
        return 1.0, 0.0
    sign, logabs = np.linalg.slogdet(M)
    return float(sign), float(logabs)


def _check_det_W(t: ExtendedBracketTable):
    m = t.m
    if m == 0:
        return 1.0, 0.0
    if t.kind == "skew" and m % 2:
        raise DegenerateConstraints(
            f"skew constraint matrix of odd size {m} is singular", np.inf)
    W = t.W
    sign, logabs = _logdet(W)
    norms = np.linalg.norm(W, axis=1)
    if sign == 0 or np.any(norms == 0) or logabs - np.sum(np.log(norms)) < np.log(DET_GUARD):
        raise DegenerateConstraints("det W vanishes below the underflow guard", np.inf)
    return sign, logabs


def _bordered_ratio(t: ExtendedBracketTable, rows, cols, det_W) -> float:
    m = t.m
    r = list(range(m)) + [m + a for a in rows]
    c = list(range(m)) + [m + b for b in cols]
    sign, logabs = _logdet(t.entries[np.ix_(r, c)])
    if sign == 0:
        return 0.0
    return sign * det_W[0] * np.exp(logabs - det_W[1])


def dirac_determinant(t: ExtendedBracketTable, a: int, b: int) -> float:
    """``eta_D(f_a, g_b)`` as the bordered determinant over ``det W``."""
    if not (0 <= a < t.s and 0 <= b < t.s):
        raise IndexError(f"trailing indices ({a}, {b}) outside 0..{t.s - 1}")
    det_W = _check_det_W(t)
    return _bordered_ratio(t, [a], [b], det_W)


def dirac_determinant_matrix(t: ExtendedBracketTable) -> np.ndarray:
    det_W = _check_det_W(t)
    return np.array([[_bordered_ratio(t, [a], [b], det_W) for b in range(t.s)]
                     for a in range(t.s)])


def _eliminate_symmetric(E: np.ndarray, m: int, tol: float, pivots: list):
    for k in range(m):
        piv = E[k, k]
        if abs(piv) <= tol:
            raise PivotBreakdown(
                f"pivot <phi_{k + 1}, phi_{k + 1}>^({k}) = {piv:.3g} is degenerate", k)
        pivots.append(abs(piv))
        E -= np.outer(E[:, k], E[k, :]) / piv
    return E


def _eliminate_skew(E: np.ndarray, m: int, tol: float, pivots: list):
    for k in range(m // 2):
        i, j = 2 * k, 2 * k + 1
        piv = E[i, j]
        if abs(piv) <= tol:
            raise PivotBreakdown(
                f"pivot {{phi_{i + 1}, phi_{j + 1}}}^({k}) = {piv:.3g} is degenerate", k)
        pivots.append(abs(piv))
        E -= (np.outer(E[:, j], E[i, :]) - np.outer(E[:, i], E[j, :])) / piv
    return E


def _run_recursive(t: ExtendedBracketTable, recombine: bool):
    if t.kind == "skew" and t.m % 2:
        raise DegenerateConstraints(
            f"skew constraint matrix of odd size {t.m} is singular", np.inf)
    eliminate = _eliminate_symmetric if t.kind == "symmetric" else _eliminate_skew
    tol = PIVOT_TOL * t.scale
    pivots: list = []
    try:
        E = eliminate(t.entries.copy(), t.m, tol, pivots)
        return E[t.m:, t.m:], pivots, None
    except PivotBreakdown:
        if not recombine:
            raise
    t2, L = recombine_constraints(t)
    pivots = []
    E = eliminate(t2.entries.copy(), t2.m, tol, pivots)
    return E[t.m:, t.m:], pivots, L


def dirac_recursive_symmetric(t: ExtendedBracketTable,
                              recombine: bool = True) -> np.ndarray:
    """Eliminate the constraints one at a time in the given order.

    A degenerate pivot triggers :func:`recombine_constraints` when
    ``recombine`` is true, otherwise :class:`PivotBreakdown`.
    """
    if t.kind != "symmetric":
        raise ValueError("dirac_recursive_symmetric needs a symmetric table")
    return _run_recursive(t, recombine)[0]


def dirac_recursive_skew(t: ExtendedBracketTable,
                         recombine: bool = True) -> np.ndarray:
    """Eliminate the constraints in consecutive pairs ``(phi_{2k+1}, phi_{2k+2})``."""
    if t.kind != "skew":
        raise ValueError("dirac_recursive_skew needs a skew table")
    return _run_recursive(t, recombine)[0]


def _congruence(E: np.ndarray, T: np.ndarray) -> np.ndarray:
    return T.T @ E @ T


def recombine_constraints(t: ExtendedBracketTable):
    """Re-combine constraints so that every recursive pivot is regular.

    Returns ``(table, L)`` where new constraint ``k`` is
    ``sum_i L[i, k] phi_i`` and the table's constraint block is
    ``L^T W L``.  Symmetric tables pick, at each step, the same constraint
    if its pivot is regular, otherwise the largest remaining diagonal, and
    otherwise the pair ``(a, b)`` with the largest coupling, replaced by
    ``phi_a +/- phi_b``.  Skew tables only permute, moving the remaining
    pair with the largest bracket into pivot position.
    """
    m = t.m
    if _condition(t.W) > COND_LIMIT:
        raise DegenerateConstraints("constraint matrix itself is singular",
                                    _condition(t.W))
    if t.kind == "skew" and m % 2:
        raise DegenerateConstraints(
            f"skew constraint matrix of odd size {m} is singular", np.inf)
    tol = PIVOT_TOL * t.scale
    size = t.size
    L = np.eye(m)
    orig = t.entries.copy()
    red = t.entries.copy()

    def apply(T_m):
        nonlocal orig, red, L
        T = np.eye(size)
        T[:m, :m] = T_m
        orig = _congruence(orig, T)
        red = _congruence(red, T)
        L = L @ T_m

    if t.kind == "symmetric":
        for k in range(m):
            if abs(red[k, k]) <= tol:
                rest = np.arange(k, m)
                diag = np.abs(red[rest, rest])
                j = int(rest[np.argmax(diag)])
                if abs(red[j, j]) > tol:
                    P = np.eye(m)
                    P[[k, j]] = P[[j, k]]
                    apply(P)
                else:
                    block = np.abs(red[k:m, k:m])
                    a, b = np.unravel_index(np.argmax(block), block.shape)
                    a, b = int(a) + k, int(b) + k
                    if block.max() <= tol or a == b:
                        raise DegenerateConstraints(
                            f"no regular pivot left at step {k}", np.inf)
                    P = np.eye(m)
                    P[[k, a]] = P[[a, k]]
                    apply(P)
                    b = k if b == a else (a if b == k else b)
                    P = np.eye(m)
                    P[[k + 1, b]] = P[[b, k + 1]]
                    apply(P)
                    sgn = 1.0 if red[k, k + 1] >= 0 else -1.0
                    R = np.eye(m)
                    R[k:k + 2, k:k + 2] = [[1.0, 1.0], [sgn, -sgn]]
                    apply(R)
            red -= np.outer(red[:, k], red[k, :]) / red[k, k]
    else:
        for k in range(m // 2):
            i, j = 2 * k, 2 * k + 1
            if abs(red[i, j]) <= tol:
                block = np.abs(red[i:m, i:m])
                a, b = np.unravel_index(np.argmax(block), block.shape)
                a, b = int(a) + i, int(b) + i
                if block.max() <= tol:
                    raise DegenerateConstraints(
                        f"no regular pivot pair left at step {k}", np.inf)
                P = np.eye(m)
                P[[i, a]] = P[[a, i]]
                apply(P)
                b = i if b == a else (a if b == i else b)
                P = np.eye(m)
                P[[j, b]] = P[[b, j]]
                apply(P)
            piv = red[i, j]
            red -= (np.outer(red[:, j], red[i, :]) - np.outer(red[:, i], red[j, :])) / piv

    sign = 1.0 if t.kind == "symmetric" else -1.0
    orig = 0.5 * (orig + sign * orig.T)
    return ExtendedBracketTable(orig, m, t.kind), L


def reduce(t: ExtendedBracketTable, method: str = "direct",
           recombine: bool = True) -> ReductionReport:
    """Run one reduction method and report how it went."""
    if method == "direct":
        return ReductionReport(dirac_direct(t), method)
    if method == "determinant":
        return ReductionReport(dirac_determinant_matrix(t), method)
    if method == "recursive":
        value, pivots, L = _run_recursive(t, recombine)
        return ReductionReport(value, method, pivots, L)
    raise ValueError(f"unknown method {method!r}")


# -- identities ---------------------------------------------------------------

def _F(M: np.ndarray, rows, cols) -> float:
    if len(rows) == 0:
        return 1.0
    return float(np.linalg.det(M[np.ix_(rows, cols)]))


def tanner_check(F: np.ndarray, identity: str = "two",
                 alpha: Optional[int] = None) -> float:
    """Residual of a bordered-determinant (Tanner) identity on ``F``.

    ``F`` is ``r x r``; its first ``alpha`` rows/columns form the common
    border (``alpha`` defaults to ``r - 2`` or ``r - 3``), and the remaining
    rows ``x z`` (``x u v``) and columns ``y t`` (``y s t``) are the free ones.
    """
    F = np.asarray(F, dtype=float)
    r = F.shape[0]
    extra = {"two": 2, "three": 3}.get(identity)
    if extra is None:
        raise ValueError(f"identity must be 'two' or 'three', got {identity!r}")
    k = r - extra if alpha is None else alpha
    if k < 0 or k + extra != r:
        raise ValueError(f"{identity} identity needs an {k + extra}x{k + extra} table")
    al = list(range(k))
    lhs = _F(F, al, al) * _F(F, list(range(r)), list(range(r)))
    if identity == "two":
        x, z = k, k + 1
        y, tt = k, k + 1
        rhs = (_F(F, al + [x], al + [y]) * _F(F, al + [z], al + [tt])
               - _F(F, al + [x], al + [tt]) * _F(F, al + [z], al + [y]))
    else:
        x, u, v = k, k + 1, k + 2
        y, s_, tt = k, k + 1, k + 2
        rhs = (_F(F, al + [x], al + [y]) * _F(F, al + [u, v], al + [s_, tt])
               - _F(F, al + [x], al + [s_]) * _F(F, al + [u, v], al + [y, tt])
               + _F(F, al + [x], al + [tt]) * _F(F, al + [u, v], al + [y, s_]))
    return abs(lhs - rhs)


def dirac_square_check(t: ExtendedBracketTable):
    """``({f, g}_D^2, det W(phi.., f, g) / det W(phi..))`` for a skew table with ``s = 2``."""
    if t.kind != "skew" or t.s != 2:
        raise ValueError("dirac_square_check needs a skew table with two trailing functions")
    det_W = _check_det_W(t)
    d = dirac_direct(t)[0, 1]
    ratio = _bordered_ratio(t, [0, 1], [0, 1], det_W)
    return d * d, ratio


# -- pointwise Dirac bracket and the Jacobi identity --------------------------

def _constraint_list(constraints):
    fs = getattr(constraints, "functions", constraints)
    return list(fs)


def dirac_bracket_at(s: BracketStructure, constraints, f: PhaseFunction,
                     g: PhaseFunction, x, part: Optional[str] = None) -> float:
    """Reduced bracket ``{f, g}_D`` evaluated at one phase point."""
    phis = _constraint_list(constraints)
    t = ExtendedBracketTable.from_functions(s, phis, [f, g], x, part)
    return float(dirac_direct(t)[0, 1])


def jacobiator_residual(s: BracketStructure, constraints, f: PhaseFunction,
                        g: PhaseFunction, h: PhaseFunction, x,
                        step: float = 1e-4) -> float:
    """``|{f,{g,h}_D}_D + cyclic|`` with the inner bracket differentiated by central differences."""
    x = as_vector(x)
    phis = _constraint_list(constraints)

    def inner(a, b):
        def value(y):
            return dirac_bracket_at(s, phis, a, b, y, "poisson")

        def gradient(y):
            gr = np.empty_like(y)
            for k in range(y.size):
                e = np.zeros_like(y)
                e[k] = step
                gr[k] = (value(y + e) - value(y - e)) / (2 * step)
            return gr

        return PhaseFunction(value, gradient, None, f"{{{a.name},{b.name}}}_D")

    total = (dirac_bracket_at(s, phis, f, inner(g, h), x, "poisson")
             + dirac_bracket_at(s, phis, g, inner(h, f), x, "poisson")
             + dirac_bracket_at(s, phis, h, inner(f, g), x, "poisson"))
    return abs(total)
