"""Bead-rod chains and N-pendula.

A chain of ``N`` point masses in ``d`` dimensions is held together by ``K``
rigid bonds.  The free chain has ``K = N - 1`` bonds between consecutive
particles; the pinned chain (N-pendulum) adds a bond from a fixed anchor at
the origin to the first particle, so ``K = N``.

Internally the anchor is treated as an extra particle row 0 with zero
inverse mass, which makes bond ``k`` always join padded rows ``k`` and
``k + 1`` with link vector ``dr_k = R_k - R_{k+1}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .brackets import (BracketStructure, PhaseFunction, as_vector,
                       bracket_matrix, lift_constraint)
from .rng import stream
from .tridiag import SymTridiag, solve

__all__ = [
    "PairPotential",
    "ChainSpec",
    "ChainModel",
    "ConstraintSet",
    "ClosedFormTables",
    "SingularPotential",
    "hamiltonian",
    "constraints",
    "closed_form_tables",
    "generic_tables",
    "lagrangian_data",
    "project_state",
    "random_state",
    "straight_chain",
    "initial_state",
    "pendulum4_spec",
    "pendulum4_random",
]


def _rowdot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", a, b)


class SingularPotential(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class PairPotential:
    """Coulomb plus a 6-12 term between non-bonded pairs.

    ``V(r) = a q_i q_j / r + eps ((sigma/r)^6 - (sigma/r)^12)``, with the
    signs of the 6-12 term as written in the model definition.  ``sigma``
    is a scalar or an ``N x N`` array.
    """

    charges: np.ndarray
    epsilon: float = 0.0
    sigma: object = 1.0
    prefactor: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "charges", np.array(self.charges, dtype=float).ravel())


@dataclass(frozen=True)
class ChainSpec:
    N: int
    d: int
    masses: np.ndarray
    lengths: np.ndarray
    friction: Optional[np.ndarray] = None
    gravity: float = 0.0
    pair_potential: Optional[PairPotential] = None
    pinned: bool = False

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"d must be 2 or 3, got {self.d}")
        if self.N < (1 if self.pinned else 2):
            raise ValueError(f"need at least {1 if self.pinned else 2} particles, got {self.N}")
        masses = np.array(self.masses, dtype=float).ravel()
        if masses.size == 1:
            masses = np.full(self.N, masses[0])
        lengths = np.array(self.lengths, dtype=float).ravel()
        if lengths.size == 1:
            lengths = np.full(self.K, lengths[0])
        friction = np.zeros(self.N) if self.friction is None else \
            np.array(self.friction, dtype=float).ravel()
        if friction.size == 1:
            friction = np.full(self.N, friction[0])
        if masses.size != self.N or np.any(masses <= 0):
            raise ValueError(f"masses must be {self.N} positive numbers")
        if lengths.size != self.K or np.any(lengths <= 0):
            raise ValueError(f"lengths must be {self.K} positive numbers")
        if friction.size != self.N or np.any(friction < 0):
            raise ValueError(f"friction must be {self.N} non-negative numbers")
        pp = self.pair_potential
        if pp is not None and pp.charges.size != self.N:
            raise ValueError(f"pair_potential needs {self.N} charges")
        for name, arr in (("masses", masses), ("lengths", lengths), ("friction", friction)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return self.N if self.pinned else self.N - 1

    @property
    def n(self) -> int:
        return self.N * self.d

    @property
    def dissipative(self) -> bool:
        return bool(np.any(self.friction > 0))

    @property
    def coordinate_friction(self) -> np.ndarray:
        """Friction per momentum component; all ``d`` components of a particle share it."""
        return np.repeat(self.friction, self.d)


class ChainModel:
    """Vectorized evaluation of the chain's energy, constraints and tables."""

    def __init__(self, spec: ChainSpec):
        self.spec = spec
        N, d = spec.N, spec.d
        self.N, self.d, self.K, self.n = N, d, spec.K, spec.n
        self.offset = 1 if spec.pinned else 0
        w = 1.0 / spec.masses
        lam = spec.friction
        if spec.pinned:
            w = np.concatenate([[0.0], w])
            lam = np.concatenate([[0.0], lam])
        self.w = w
        self.lam_w2 = lam * w * w
        self.mass_vec = np.repeat(spec.masses, d)
        self.l2 = spec.lengths ** 2
        self.gravity_force = np.zeros((N, d))
        self.gravity_force[:, -1] = -spec.gravity * spec.masses
        pp = spec.pair_potential
        if pp is not None:
            ii, jj = np.triu_indices(N, k=2)
            self.pair_i, self.pair_j = ii, jj
            self.pair_qq = pp.prefactor * pp.charges[ii] * pp.charges[jj]
            sig = np.asarray(pp.sigma, dtype=float)
            self.pair_sigma = sig[ii, jj] if sig.ndim == 2 else np.full(ii.size, float(sig))
            self.pair_eps = float(pp.epsilon)
        else:
            self.pair_i = np.zeros(0, dtype=int)

    # -- layout helpers -------------------------------------------------------------

    def split(self, x):
        x = as_vector(x)
        n = self.n
        return x[:n].reshape(self.N, self.d), x[n:].reshape(self.N, self.d)

    def pad(self, a: np.ndarray) -> np.ndarray:
        if self.offset:
            return np.vstack([np.zeros((1, self.d)), a])
        return a

    def links(self, a: np.ndarray) -> np.ndarray:
        """Differences ``A_k - A_{k+1}`` of consecutive padded rows."""
        if self.offset:
            out = np.empty_like(a)
            out[0] = -a[0]
            np.subtract(a[:-1], a[1:], out=out[1:])
            return out
        return a[:-1] - a[1:]

    def scatter(self, vec: np.ndarray) -> np.ndarray:
        """Sum ``vec_k`` onto the first row of bond k and ``-vec_k`` onto the second."""
        out = np.zeros((self.N + self.offset, self.d))
        out[:-1] += vec
        out[1:] -= vec
        return out[self.offset:]

    # -- energy ----------------------------------------------------------------------

    def _pair_terms(self, r):
        rij = r[self.pair_i] - r[self.pair_j]
        dist = np.sqrt(_rowdot(rij, rij))
        if np.any(dist == 0):
            k = int(np.flatnonzero(dist == 0)[0])
            raise SingularPotential(
                f"particles {self.pair_i[k]} and {self.pair_j[k]} coincide")
        s6 = (self.pair_sigma / dist) ** 6
        s12 = s6 * s6
        V = self.pair_qq / dist + self.pair_eps * (s6 - s12)
        dV = -self.pair_qq / dist ** 2 + self.pair_eps * (-6 * s6 + 12 * s12) / dist
        d2V = 2 * self.pair_qq / dist ** 3 + self.pair_eps * (42 * s6 - 156 * s12) / dist ** 2
        return rij, dist, V, dV, d2V

    def potential(self, q) -> float:
        r = np.asarray(q, dtype=float).reshape(self.N, self.d)
        U = -np.sum(self.gravity_force * r)
        if self.pair_i.size:
            U += np.sum(self._pair_terms(r)[2])
        return float(U)

    def grad_potential(self, q) -> np.ndarray:
        """``dU/dq`` as an ``(N, d)`` array."""
        r = np.asarray(q, dtype=float).reshape(self.N, self.d)
        g = -self.gravity_force.copy()
        if self.pair_i.size:
            rij, dist, _, dV, _ = self._pair_terms(r)
            f = (dV / dist)[:, None] * rij
            np.add.at(g, self.pair_i, f)
            np.add.at(g, self.pair_j, -f)
        return g

    def hess_potential(self, q) -> np.ndarray:
        n, d = self.n, self.d
        Hq = np.zeros((n, n))
        if not self.pair_i.size:
            return Hq
        r = np.asarray(q, dtype=float).reshape(self.N, d)
        rij, dist, _, dV, d2V = self._pair_terms(r)
        eye = np.eye(d)
        for k in range(dist.size):
            e = rij[k] / dist[k]
            blk = d2V[k] * np.outer(e, e) + dV[k] / dist[k] * (eye - np.outer(e, e))
            i, j = self.pair_i[k] * d, self.pair_j[k] * d
            Hq[i:i + d, i:i + d] += blk
            Hq[j:j + d, j:j + d] += blk
            Hq[i:i + d, j:j + d] -= blk
            Hq[j:j + d, i:i + d] -= blk
        return Hq

    def energy(self, x) -> float:
        r, p = self.split(x)
        kin = 0.5 * np.sum(p * p / self.spec.masses[:, None])
        return float(kin + self.potential(r))

    # -- constraints -----------------------------------------------------------------

    def phi(self, x) -> np.ndarray:
        r, _ = self.split(x)
        dr = self.links(r)
        return 0.5 * (_rowdot(dr, dr) - self.l2)

    def phitilde(self, x) -> np.ndarray:
        r, p = self.split(x)
        dr = self.links(r)
        dv = self.links(p / self.spec.masses[:, None])
        return _rowdot(dv, dr)

    def residual(self, x) -> float:
        return float(np.sum(np.abs(self.phi(x))) + np.sum(np.abs(self.phitilde(x))))

    def link_selector(self, k: int) -> np.ndarray:
        """``D_k`` (``d x n``) with ``dr_k = D_k q``."""
        D = np.zeros((self.d, self.n))
        eye = np.eye(self.d)
        for row, sgn in ((k, 1.0), (k + 1, -1.0)):
            particle = row - self.offset
            if particle >= 0:
                D[:, particle * self.d:(particle + 1) * self.d] = sgn * eye
        return D

    # -- constraint matrices ---------------------------------------------------------

    def tables(self, r, v, metric: bool = True):
        """Closed-form ``S``, skew off-diagonal ``a`` and ``S^D`` from positions and velocities.

        With ``metric=False`` the third entry is ``None``.
        """
        dr = self.links(r)
        dv = self.links(v)
        w, lw = self.w, self.lam_w2
        norm2 = _rowdot(dr, dr)
        dots = _rowdot(dr[:-1], dr[1:])
        S = SymTridiag((w[:-1] + w[1:]) * norm2, -w[1:-1] * dots)
        a = w[1:-1] * (_rowdot(dr[:-1], dv[1:]) - _rowdot(dv[:-1], dr[1:]))
        if not metric:
            return S, a, None
        SD = SymTridiag((lw[:-1] + lw[1:]) * norm2, -lw[1:-1] * dots)
        return S, a, SD


def hamiltonian(spec: ChainSpec, model: Optional[ChainModel] = None) -> PhaseFunction:
    """Kinetic energy plus gravity along the last axis plus non-bonded pair terms."""
    model = model or ChainModel(spec)
    n = spec.n
    inv_m = 1.0 / model.mass_vec

    def value(x):
        return model.energy(x)

    def gradient(x):
        return np.concatenate([model.grad_potential(x[:n]).ravel(), x[n:] * inv_m])

    def hessian(x):
        H = np.zeros((2 * n, 2 * n))
        H[:n, :n] = model.hess_potential(x[:n])
        H[n:, n:] = np.diag(inv_m)
        return H

    return PhaseFunction(value, gradient, hessian, "H")


@dataclass(frozen=True)
class ConstraintSet:
    phis: tuple
    phitildes: tuple

    @property
    def K(self) -> int:
        return len(self.phis)

    @property
    def functions(self) -> tuple:
        """``(phi_1..phi_K, phi~_1..phi~_K)``, the block ordering of ``W = [[0, S], [-S, A]]``."""
        return self.phis + self.phitildes

    def interleaved(self) -> tuple:
        """``(phi_1, phi~_1, phi_2, phi~_2, ...)``, the pairing used by pairwise elimination."""
        out = []
        for a, b in zip(self.phis, self.phitildes):
            out += [a, b]
        return tuple(out)

    def __iter__(self):
        return iter(self.functions)

    def __len__(self):
        return 2 * self.K


def _bond_constraint(model: ChainModel, k: int) -> PhaseFunction:
    n = model.n
    D = model.link_selector(k)
    DtD = D.T @ D
    l2 = model.l2[k]
    hess = np.zeros((2 * n, 2 * n))
    hess[:n, :n] = DtD

    def value(x):
        dr = D @ x[:n]
        return 0.5 * (dr @ dr - l2)

    def gradient(x):
        return np.concatenate([DtD @ x[:n], np.zeros(n)])

    return PhaseFunction(value, gradient, lambda x: hess, f"phi{k + 1}")


def constraints(spec: ChainSpec, H: Optional[PhaseFunction] = None,
                model: Optional[ChainModel] = None) -> ConstraintSet:
    """Bond-length constraints and their lifts ``phi~_k = {phi_k, H}``."""
    model = model or ChainModel(spec)
    H = H or hamiltonian(spec, model)
    phis = tuple(_bond_constraint(model, k) for k in range(spec.K))
    tildes = tuple(lift_constraint(phi, H, f"phit{k + 1}") for k, phi in enumerate(phis))
    return ConstraintSet(phis, tildes)


@dataclass(frozen=True)
class ClosedFormTables:
    S: SymTridiag
    A_offdiag: np.ndarray
    SD: SymTridiag
    cos_alpha: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def A_dense(self) -> np.ndarray:
        return np.diag(self.A_offdiag, 1) - np.diag(self.A_offdiag, -1)


def closed_form_tables(spec: ChainSpec, x, model: Optional[ChainModel] = None) -> ClosedFormTables:
    """``S``, ``A`` and ``S^D`` from link vectors and relative velocities.

    Off the constraint surface the actual ``|dr_k|^2`` and dot products are
    used; on it they reduce to the ``l_k`` and ``cos(alpha_k)`` forms.
    ``cos_alpha[k] = -e_k . e_{k+1}``.
    """
    model = model or ChainModel(spec)
    r, p = model.split(x)
    S, a, SD = model.tables(r, p / spec.masses[:, None])
    dr = model.links(r)
    e = dr / np.linalg.norm(dr, axis=1)[:, None]
    cos_alpha = -_rowdot(e[:-1], e[1:])
    return ClosedFormTables(S, a, SD, cos_alpha)


def generic_tables(spec: ChainSpec, x, cs: Optional[ConstraintSet] = None):
    """``(S, A, S^D)`` as dense matrices assembled bracket by bracket."""
    cs = cs or constraints(spec)
    K = cs.K
    P = bracket_matrix(BracketStructure.canonical(), cs.functions, x).entries
    S = P[:K, K:]
    A = P[K:, K:]
    lam = spec.coordinate_friction
    SD = bracket_matrix(BracketStructure.metric(lam), cs.phitildes, x).entries
    return S, A, SD


def lagrangian_data(spec: ChainSpec, state, model: Optional[ChainModel] = None):
    """``(M, B, G, F)`` of the multiplier formulation at ``(q, qdot)``.

    ``B[:, k] = d phi_k / dq``, ``G_k = qdot^T Hess(phi_k) qdot``,
    ``F = -dU/dq``.
    """
    model = model or ChainModel(spec)
    q, qdot = (np.asarray(s, dtype=float).ravel() for s in state)
    M = np.diag(model.mass_vec)
    B = np.empty((spec.n, spec.K))
    G = np.empty(spec.K)
    for k in range(spec.K):
        D = model.link_selector(k)
        B[:, k] = D.T @ (D @ q)
        dq = D @ qdot
        G[k] = dq @ dq
    F = -model.grad_potential(q).ravel()
    return M, B, G, F


# -- states ------------------------------------------------------------------------

def project_state(spec: ChainSpec, x, model: Optional[ChainModel] = None,
                  iterations: int = 20, tol: float = 1e-14) -> np.ndarray:
    """Move ``x`` onto ``phi = 0`` (Newton steps) and then ``phi~ = 0`` (exact projection).

    Positions move along ``M^-1 grad phi``; momenta lose their component
    ``B S^-1 phi~`` so the result is tangent to every bond.
    """
    model = model or ChainModel(spec)
    x = as_vector(x).copy()
    n = spec.n
    m = spec.masses[:, None]
    for _ in range(iterations):
        phi = model.phi(x)
        if np.max(np.abs(phi)) <= tol * np.max(model.l2):
            break
        r = x[:n].reshape(spec.N, spec.d)
        S, _, _ = model.tables(r, np.zeros_like(r), metric=False)
        mu = solve(S, phi)
        x[:n] -= (model.scatter(model.links(r) * mu[:, None]) / m).ravel()
    for _ in range(2):
        r, p = model.split(x)
        S, _, _ = model.tables(r, np.zeros_like(r), metric=False)
        mu = solve(S, model.phitilde(x))
        x[n:] -= model.scatter(model.links(r) * mu[:, None]).ravel()
    return x


def random_state(spec: ChainSpec, rng: np.random.Generator, speed: float = 1.0) -> np.ndarray:
    """A random on-surface state: random bond directions, projected random velocities."""
    d = spec.d
    e = rng.normal(size=(spec.K, d))
    e /= np.linalg.norm(e, axis=1)[:, None]
    start = np.zeros(d) if spec.pinned else rng.normal(size=d)
    R = np.vstack([start, start - np.cumsum(spec.lengths[:, None] * e, axis=0)])
    r = R[1:] if spec.pinned else R
    v = speed * rng.normal(size=(spec.N, d))
    x = np.concatenate([r.ravel(), (v * spec.masses[:, None]).ravel()])
    return project_state(spec, x)


def straight_chain(spec: ChainSpec) -> np.ndarray:
    """Positions along the first axis, bond after bond from the origin."""
    pos = np.zeros((spec.N, spec.d))
    cum = np.cumsum(spec.lengths)
    if spec.pinned:
        pos[:, 0] = cum
    else:
        pos[1:, 0] = cum
    return pos


def initial_state(spec: ChainSpec, positions=None, velocities=None,
                  rng: Optional[np.random.Generator] = None, speed: float = 1.0) -> np.ndarray:
    """Phase point from given positions/velocities, projected onto the constraint surface.

    Missing positions default to :func:`straight_chain`; missing velocities
    are drawn from ``rng`` as ``speed * N(0, 1)`` per component.
    """
    pos = straight_chain(spec) if positions is None else \
        np.asarray(positions, dtype=float).reshape(spec.N, spec.d)
    if velocities is None:
        if rng is None:
            raise ValueError("random velocities need a generator")
        vel = speed * rng.normal(size=(spec.N, spec.d))
    else:
        vel = np.asarray(velocities, dtype=float).reshape(spec.N, spec.d)
    x = np.concatenate([pos.ravel(), (vel * spec.masses[:, None]).ravel()])
    return project_state(spec, x)


def pendulum4_spec(gravity: float = 1.0, friction: float = 0.0) -> ChainSpec:
    return ChainSpec(N=4, d=2, masses=np.ones(4), lengths=np.ones(4),
                     friction=np.full(4, friction), gravity=gravity, pinned=True)


def pendulum4_random(seed: int, gravity: float = 1.0, speed: float = 1.0,
                     friction: float = 0.0):
    """Four unit masses on the x axis hanging from the origin, random tangent velocities.

    Returns ``(spec, x0)``; identical seeds give identical states.
    """
    spec = pendulum4_spec(gravity, friction)
    return spec, initial_state(spec, rng=stream(seed), speed=speed)
