"""Poisson, metric and metriplectic brackets of phase-space functions.

Phase-space points are flat vectors ``x = (q_1..q_n, p_1..p_n)``; a
:class:`PhasePoint` converts to that layout.  Every bracket is evaluated
pointwise from gradients, ``{f, g}(x) = grad f(x)^T J grad g(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence, Union

import numpy as np

__all__ = [
    "PhasePoint",
    "PhaseFunction",
    "BracketKind",
    "BracketStructure",
    "BracketMatrix",
    "ConfigurationError",
    "MissingHessian",
    "as_vector",
    "structure_matrix",
    "bracket_value",
    "lift_constraint",
    "bracket_matrix",
]


class ConfigurationError(ValueError):
    """A bracket structure is missing data required by its kind."""


class MissingHessian(ValueError):
    """Raised when a second derivative is needed but was not supplied."""


@dataclass(frozen=True)
class PhasePoint:
    """Generalized positions ``q`` and momenta ``p`` of equal length."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float).ravel()
        p = np.array(self.p, dtype=float).ravel()
        if q.size < 1 or q.size != p.size:
            raise ValueError(
                f"q and p must have equal length n >= 1, got {q.size} and {p.size}")
        q.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_vector(cls, x) -> "PhasePoint":
        x = np.asarray(x, dtype=float).ravel()
        if x.size % 2:
            raise ValueError(f"phase vector must have even length, got {x.size}")
        n = x.size // 2
        return cls(x[:n], x[n:])


Point = Union[PhasePoint, np.ndarray, Sequence[float]]


def as_vector(x: Point) -> np.ndarray:
    """Flat ``(q, p)`` float vector for a point given in either form."""
    if isinstance(x, PhasePoint):
        return x.x
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0 or x.size % 2:
        raise ValueError(f"phase vector must have even, nonzero length, got {x.size}")
    return x


def _fd_step(x: np.ndarray, rel: float) -> np.ndarray:
    return rel * (1.0 + np.abs(x))


class PhaseFunction:
    """A scalar function on phase space with its gradient and (optionally) Hessian.

    ``value``, ``gradient`` and ``hessian`` are callables of the flat phase
    vector.  Gradients are ordered ``(d/dq, d/dp)``.
    """

    def __init__(self, value: Callable, gradient: Callable,
                 hessian: Optional[Callable] = None, name: str = ""):
        self._value = value
        self._gradient = gradient
        self._hessian = hessian
        self.name = name

    def __repr__(self):
        return f"PhaseFunction({self.name or '<anonymous>'})"

    def __call__(self, x: Point) -> float:
        return float(self._value(as_vector(x)))

    def value(self, x: Point) -> float:
        return self(x)

    def grad(self, x: Point) -> np.ndarray:
        return np.asarray(self._gradient(as_vector(x)), dtype=float)

    def hess(self, x: Point) -> np.ndarray:
        if self._hessian is None:
            raise MissingHessian(
                f"{self!r} has no Hessian; build it with "
                "PhaseFunction.finite_difference() to get a numerical one")
        return np.asarray(self._hessian(as_vector(x)), dtype=float)

    @property
    def has_hessian(self) -> bool:
        return self._hessian is not None

    # -- constructors -----------------------------------------------------

    @classmethod
    def finite_difference(cls, value: Callable, name: str = "",
                          rel_step: float = 1e-5) -> "PhaseFunction":
        """Wrap a bare value callable with central-difference derivatives.

        The step along coordinate ``k`` is ``rel_step * (1 + |x_k|)``.
        """

        def gradient(x):
            h = _fd_step(x, rel_step)
            g = np.empty_like(x)
            for k in range(x.size):
                e = np.zeros_like(x)
                e[k] = h[k]
                g[k] = (value(x + e) - value(x - e)) / (2 * h[k])
            return g

        def hessian(x):
            h = _fd_step(x, rel_step)
            H = np.empty((x.size, x.size))
            for k in range(x.size):
                e = np.zeros_like(x)
                e[k] = h[k]
                H[k] = (gradient(x + e) - gradient(x - e)) / (2 * h[k])
            return 0.5 * (H + H.T)

        return cls(value, gradient, hessian, name)

    @classmethod
    def constant(cls, c: float, dim: int, name: str = "") -> "PhaseFunction":
        """Constant function on a ``dim``-dimensional phase space (``dim = 2n``)."""
        return cls(lambda x: c,
                   lambda x: np.zeros(dim),
                   lambda x: np.zeros((dim, dim)),
                   name or f"const({c})")

    @classmethod
    def coordinate(cls, k: int, dim: int, name: str = "") -> "PhaseFunction":
        """The ``k``-th phase coordinate (``k < n`` is ``q_k``, else ``p_{k-n}``)."""
        e = np.zeros(dim)
        e[k] = 1.0
        n = dim // 2
        label = f"q{k + 1}" if k < n else f"p{k - n + 1}"
        return cls(lambda x: x[k], lambda x: e.copy(),
                   lambda x: np.zeros((dim, dim)), name or label)

    @classmethod
    def quadratic(cls, Q, g, c: float = 0.0, name: str = "") -> "PhaseFunction":
        """``c + g.x + x^T Q x / 2`` with ``Q`` symmetrized."""
        Q = np.asarray(Q, dtype=float)
        Q = 0.5 * (Q + Q.T)
        g = np.asarray(g, dtype=float)
        return cls(lambda x: c + g @ x + 0.5 * x @ Q @ x,
                   lambda x: g + Q @ x,
                   lambda x: Q.copy(), name)

    # -- algebra ------------------------------------------------------------

    def __add__(self, other):
        if not isinstance(other, PhaseFunction):
            c = float(other)
            return PhaseFunction(lambda x: self._value(x) + c, self._gradient,
                                 self._hessian, f"({self.name}+{c})")
        hess = None
        if self.has_hessian and other.has_hessian:
            hess = lambda x: self._hessian(x) + other._hessian(x)
        return PhaseFunction(lambda x: self._value(x) + other._value(x),
                             lambda x: self._gradient(x) + other._gradient(x),
                             hess, f"({self.name}+{other.name})")

    __radd__ = __add__

    def __neg__(self):
        hess = None if self._hessian is None else (lambda x: -self._hessian(x))
        return PhaseFunction(lambda x: -self._value(x),
                             lambda x: -self._gradient(x), hess, f"-{self.name}")

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if not isinstance(other, PhaseFunction):
            c = float(other)
            hess = None if self._hessian is None else (lambda x: c * self._hessian(x))
            return PhaseFunction(lambda x: c * self._value(x),
                                 lambda x: c * self._gradient(x), hess,
                                 f"{c}*{self.name}")

        def hess(x):
            ga, gb = self._gradient(x), other._gradient(x)
            return (self._hessian(x) * other._value(x)
                    + self._value(x) * other._hessian(x)
                    + np.outer(ga, gb) + np.outer(gb, ga))

        return PhaseFunction(
            lambda x: self._value(x) * other._value(x),
            lambda x: self._gradient(x) * other._value(x)
            + self._value(x) * other._gradient(x),
            hess if self.has_hessian and other.has_hessian else None,
            f"({self.name}*{other.name})")

    __rmul__ = __mul__


class BracketKind(str, Enum):
    CANONICAL_POISSON = "canonical_poisson"
    DIAGONAL_METRIC = "diagonal_metric"
    METRIPLECTIC = "metriplectic"


@dataclass(frozen=True)
class BracketStructure:
    """Which bracket to evaluate, plus the friction coefficients for metric kinds.

    ``lam`` is either a callable of the phase vector returning ``n``
    non-negative coefficients, or a constant array of them.
    """

    kind: BracketKind = BracketKind.CANONICAL_POISSON
    lam: Optional[Union[Callable, np.ndarray]] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", BracketKind(self.kind))
        if self.kind is not BracketKind.CANONICAL_POISSON and self.lam is None:
            raise ConfigurationError(f"{self.kind.value} bracket requires lambda")
        if self.lam is not None and not callable(self.lam):
            lam = np.array(self.lam, dtype=float).ravel()
            if np.any(lam < 0):
                raise ConfigurationError("friction coefficients must be non-negative")
            lam.flags.writeable = False
            object.__setattr__(self, "lam", lam)

    @property
    def has_poisson(self) -> bool:
        return self.kind is not BracketKind.DIAGONAL_METRIC

    @property
    def has_metric(self) -> bool:
        return self.kind is not BracketKind.CANONICAL_POISSON

    def friction(self, x: np.ndarray) -> np.ndarray:
        if self.lam is None:
            raise ConfigurationError(f"{self.kind.value} bracket has no lambda")
        n = x.size // 2
        lam = self.lam(x) if callable(self.lam) else self.lam
        lam = np.broadcast_to(np.asarray(lam, dtype=float), (n,))
        if np.any(lam < 0):
            raise ConfigurationError("friction coefficients must be non-negative")
        return lam

    @classmethod
    def canonical(cls) -> "BracketStructure":
        return cls(BracketKind.CANONICAL_POISSON)

    @classmethod
    def metric(cls, lam) -> "BracketStructure":
        return cls(BracketKind.DIAGONAL_METRIC, lam)

    @classmethod
    def metriplectic(cls, lam) -> "BracketStructure":
        return cls(BracketKind.METRIPLECTIC, lam)


def _canonical_J(n: int) -> np.ndarray:
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = np.eye(n)
    J[n:, :n] = -np.eye(n)
    return J


def structure_matrix(s: BracketStructure, x: Point):
    """Matrix ``J`` with ``bracket(f, g)(x) = grad f^T J grad g``.

    Metriplectic structures return the pair ``(J_poisson, J_metric)``.
    """
    x = as_vector(x)
    n = x.size // 2
    if s.kind is BracketKind.CANONICAL_POISSON:
        return _canonical_J(n)
    J_metric = np.diag(np.concatenate([np.zeros(n), s.friction(x)]))
    if s.kind is BracketKind.DIAGONAL_METRIC:
        return J_metric
    return _canonical_J(n), J_metric


def _check_part(s: BracketStructure, part: str) -> str:
    if part == "poisson" and not s.has_poisson:
        raise ConfigurationError(f"{s.kind.value} structure has no Poisson part")
    if part == "metric" and not s.has_metric:
        raise ConfigurationError(f"{s.kind.value} structure has no metric part")
    if part not in ("poisson", "metric"):
        raise ValueError(f"part must be 'poisson' or 'metric', got {part!r}")
    return part


def _default_part(s: BracketStructure) -> str:
    return "metric" if s.kind is BracketKind.DIAGONAL_METRIC else "poisson"


def bracket_value(s: BracketStructure, f: PhaseFunction, g: PhaseFunction,
                  x: Point, part: Optional[str] = None) -> float:
    x = as_vector(x)
    part = _check_part(s, part or _default_part(s))
    gf, gg = f.grad(x), g.grad(x)
    if gf.shape != x.shape or gg.shape != x.shape:
        raise ValueError(
            f"gradient shapes {gf.shape}, {gg.shape} do not match phase dimension {x.size}")
    n = x.size // 2
    if part == "poisson":
        return float(np.sum(gf[:n] * gg[n:]) - np.sum(gf[n:] * gg[:n]))
    return float(np.sum(gf[n:] * s.friction(x) * gg[n:]))


def _apply_J(v: np.ndarray) -> np.ndarray:
    n = v.size // 2
    return np.concatenate([v[n:], -v[:n]])


def lift_constraint(phi: PhaseFunction, H: PhaseFunction,
                    name: str = "") -> PhaseFunction:
    """The lifted constraint ``phi~ = {phi, H}`` under the canonical bracket.

    Its gradient is ``Hess(phi) J grad H - Hess(H) J grad phi``, so both
    inputs must carry Hessians.  The lifted function has no Hessian.
    """
    if not (phi.has_hessian and H.has_hessian):
        missing = phi if not phi.has_hessian else H
        raise MissingHessian(
            f"lifting needs the Hessian of {missing!r}; use "
            "PhaseFunction.finite_difference() for a numerical fallback")

    def value(x):
        gphi, gH = phi._gradient(x), H._gradient(x)
        n = x.size // 2
        return np.sum(gphi[:n] * gH[n:]) - np.sum(gphi[n:] * gH[:n])

    def gradient(x):
        return (phi._hessian(x) @ _apply_J(H._gradient(x))
                - H._hessian(x) @ _apply_J(phi._gradient(x)))

    return PhaseFunction(value, gradient, None, name or f"{{{phi.name},H}}")


@dataclass(frozen=True)
class BracketMatrix:
    entries: np.ndarray
    labels: tuple
    kind: str  # "skew" | "symmetric" | "general"

    def __post_init__(self):
        if self.kind not in ("skew", "symmetric", "general"):
            raise ValueError(f"unknown matrix kind {self.kind!r}")


def bracket_matrix(s: BracketStructure, fs: Sequence[PhaseFunction], x: Point,
                   part: Optional[str] = None) -> BracketMatrix:
    """Mutual brackets ``entries[i, j] = bracket(fs[i], fs[j])`` at ``x``.

    The Poisson part is built as ``P - P^T`` so it is exactly skew with a
    zero diagonal; the metric part is exactly symmetric.
    """
    if len(fs) == 0:
        raise ValueError("bracket_matrix needs at least one function")
    x = as_vector(x)
    part = _check_part(s, part or _default_part(s))
    n = x.size // 2
    G = np.array([f.grad(x) for f in fs])
    if G.shape[1] != x.size:
        raise ValueError(f"gradient length {G.shape[1]} != phase dimension {x.size}")
    labels = tuple(f.name for f in fs)
    if part == "poisson":
        P = G[:, :n] @ G[:, n:].T
        return BracketMatrix(P - P.T, labels, "skew")
    Gp = G[:, n:]
    E = (Gp * s.friction(x)) @ Gp.T
    return BracketMatrix(0.5 * (E + E.T), labels, "symmetric")
