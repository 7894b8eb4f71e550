"""Equations of motion for constrained chains and their time integration.

Three right-hand sides are available:

* ``dirac_full``: the metriplectic Dirac flow ``f' = {f,H}_D - <f,H>_D``
  including every term proportional to the lifted constraints;
* ``dirac_simplified``: the same flow with those feedback terms dropped;
* ``lmm``: the Lagrange-multiplier equations on ``(q, qdot)``.

All three agree on the constraint surface and differ in how numerical
errors push trajectories away from it.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .brackets import BracketStructure, PhaseFunction, as_vector, bracket_matrix
from .dirac import ExtendedBracketTable, dirac_direct
from .models import ChainModel, ChainSpec, _rowdot, constraints, hamiltonian
from .tridiag import SingularMatrix, SymTridiag, solve

__all__ = [
    "RhsKind",
    "IntegratorSpec",
    "Trajectory",
    "RhsFailure",
    "BlockConstraintInverse",
    "block_constraint_inverse",
    "make_rhs",
    "rhs",
    "phase_derivative",
    "dense_rhs",
    "integrate",
    "diagnostics",
    "write_csv",
    "run_many",
]


class RhsKind(str, Enum):
    dirac_full = "dirac_full"
    dirac_simplified = "dirac_simplified"
    lmm = "lmm"


class RhsFailure(ArithmeticError):
    pass


@dataclass(frozen=True)
class IntegratorSpec:
    method: str = "rk4"
    dt: float = 1e-3
    t_end: float = 1.0
    tolerance: float = 1e-9
    stride: int = 1
    max_steps: int = 10_000_000

    def __post_init__(self):
        if self.method not in ("rk4", "rk45_adaptive"):
            raise ValueError(f"unknown method {self.method!r}")
        if not (self.dt > 0 and self.t_end > 0 and self.tolerance > 0):
            raise ValueError("dt, t_end and tolerance must be positive")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


@dataclass
class Trajectory:
    """Sampled states in ``(q, p)`` form plus the recorded diagnostics."""

    times: np.ndarray
    states: np.ndarray
    energy: np.ndarray
    constraint_residual: np.ndarray
    kind: str = ""
    error: Optional[str] = None
    steps: int = 0

    def __post_init__(self):
        n = len(self.times)
        if not (len(self.states) == len(self.energy) == len(self.constraint_residual) == n):
            raise ValueError("trajectory series have different lengths")
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def truncated(self) -> bool:
        return self.error is not None

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


# -- constraint inverse ------------------------------------------------------------

def _skew_matvec(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``A v`` with ``A`` skew tridiagonal, ``A[i, i+1] = a[i]``."""
    out = np.zeros_like(v)
    out[:-1] += a * v[1:]
    out[1:] -= a * v[:-1]
    return out


class BlockConstraintInverse:
    """``C = W^-1`` for ``W = [[0, S], [-S, A]]`` applied through tridiagonal solves.

    ``C = [[S^-1 A S^-1, -S^-1], [S^-1, 0]]``; nothing denser than the
    tridiagonal bands is ever stored.
    """

    def __init__(self, S: SymTridiag, a: np.ndarray):
        self.S = S
        self.a = np.asarray(a, dtype=float)
        if self.a.size != S.K - 1:
            raise ValueError(f"A needs {S.K - 1} off-diagonal entries, got {self.a.size}")
        self.K = S.K

    def __call__(self, v) -> np.ndarray:
        return self.apply(v)

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        K = self.K
        top, bottom = v[:K], v[K:]
        y = solve(self.S, top)
        z = solve(self.S, _skew_matvec(self.a, y) - bottom)
        return np.concatenate([z, y])

    def W_apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        K = self.K
        top, bottom = v[:K], v[K:]
        return np.concatenate([self.S.matvec(bottom),
                               -self.S.matvec(top) + _skew_matvec(self.a, bottom)])

    def W_dense(self) -> np.ndarray:
        K = self.K
        Sd = self.S.to_dense()
        A = np.diag(self.a, 1) - np.diag(self.a, -1)
        return np.block([[np.zeros((K, K)), Sd], [-Sd, A]])

    def to_dense(self) -> np.ndarray:
        return np.column_stack([self.apply(e) for e in np.eye(2 * self.K)])


def block_constraint_inverse(S: SymTridiag, A_offdiag) -> BlockConstraintInverse:
    return BlockConstraintInverse(S, A_offdiag)


# -- right-hand sides ----------------------------------------------------------------

def _solve_or_raise(S: SymTridiag, rhs: np.ndarray, what: str) -> np.ndarray:
    try:
        return solve(S, rhs)
    except (SingularMatrix, np.linalg.LinAlgError) as exc:
        raise RhsFailure(f"{what} is singular: {exc}") from exc


def make_rhs(spec: ChainSpec, kind) -> Callable[[np.ndarray], np.ndarray]:
    """A fast closure ``f(x) -> x'`` for one formulation.

    Dirac kinds act on ``x = (q, p)``; ``lmm`` acts on ``(q, qdot)``.
    """
    kind = RhsKind(kind)
    model = ChainModel(spec)
    N, d, n = spec.N, spec.d, spec.n
    m = spec.masses[:, None]
    Lam = spec.friction[:, None]
    dissipative = spec.dissipative

    def friction_force(r, v, dr):
        # -Lam [v - M^-1 B (S^D)^-1 <phi~, H>]
        if not dissipative:
            return 0.0
        _, _, SD = model.tables(r, v)
        drive = _rowdot(dr, model.links(Lam * v / m))
        rho = _solve_or_raise(SD, drive, "dissipative constraint matrix")
        return -Lam * (v - model.scatter(dr * rho[:, None]) / m)

    if kind is RhsKind.lmm:
        def f(x):
            q = x[:n].reshape(N, d)
            qd = x[n:].reshape(N, d)
            dr = model.links(q)
            dv = model.links(qd)
            # friction enters as the same tangent force the dissipative bracket produces
            F = -model.grad_potential(q) + friction_force(q, qd, dr)
            S, _, _ = model.tables(q, qd, metric=False)
            G = _rowdot(dv, dv)
            lam = _solve_or_raise(S, G + _rowdot(dr, model.links(F / m)),
                                  "constraint matrix S")
            acc = (F - model.scatter(dr * lam[:, None])) / m
            return np.concatenate([x[n:], acc.ravel()])
        return f

    full = kind is RhsKind.dirac_full

    def f(x):
        r = x[:n].reshape(N, d)
        p = x[n:].reshape(N, d)
        v = p / m
        dr = model.links(r)
        dv = model.links(v)
        gU = model.grad_potential(r)
        S, a, _ = model.tables(r, v, metric=False)
        # psi_k = {phi~_k, H}
        psi = _rowdot(dv, dv) - _rowdot(dr, model.links(gU / m))
        pdot = -gU + friction_force(r, v, dr)
        if full:
            # C (phi~, psi) = (S^-1 (A nu - psi), nu) with nu = S^-1 phi~
            phit = _rowdot(dr, dv)
            nu = _solve_or_raise(S, phit, "constraint matrix S")
            mu = _solve_or_raise(S, _skew_matvec(a, nu) - psi, "constraint matrix S")
            qdot = v - model.scatter(dr * nu[:, None]) / m
            pdot = pdot + model.scatter(dr * mu[:, None] + dv * nu[:, None])
        else:
            mu = _solve_or_raise(S, psi, "constraint matrix S")
            qdot = v
            pdot = pdot - model.scatter(dr * mu[:, None])
        return np.concatenate([qdot.ravel(), pdot.ravel()])

    return f


def rhs(spec: ChainSpec, kind, x) -> np.ndarray:
    """One evaluation of :func:`make_rhs`; ``x`` is ``(q, p)`` or, for lmm, ``(q, qdot)``."""
    return make_rhs(spec, kind)(as_vector(x))


def to_lmm_state(spec: ChainSpec, x) -> np.ndarray:
    x = as_vector(x)
    n = spec.n
    return np.concatenate([x[:n], x[n:] / np.repeat(spec.masses, spec.d)])


def from_lmm_state(spec: ChainSpec, y) -> np.ndarray:
    y = as_vector(y)
    n = spec.n
    return np.concatenate([y[:n], y[n:] * np.repeat(spec.masses, spec.d)])


def phase_derivative(spec: ChainSpec, kind, x) -> np.ndarray:
    """``(q', p')`` at the phase point ``x = (q, p)`` for any kind (lmm via ``p = M qdot``)."""
    kind = RhsKind(kind)
    if kind is not RhsKind.lmm:
        return rhs(spec, kind, x)
    y = rhs(spec, kind, to_lmm_state(spec, x))
    return from_lmm_state(spec, y)


def dense_rhs(spec: ChainSpec, x) -> np.ndarray:
    """Reference flow assembled from bracket tables and a dense solve.

    Every coordinate is reduced against all ``2K`` constraints with the
    canonical bracket; the dissipative part is reduced against the lifted
    constraints only, since ``<phi_k, .>`` vanishes identically.
    """
    x = as_vector(x)
    dim = x.size
    H = hamiltonian(spec)
    cs = constraints(spec, H)
    coords = [PhaseFunction.coordinate(k, dim) for k in range(dim)]
    canon = BracketStructure.canonical()
    P = bracket_matrix(canon, list(cs.functions) + coords + [H], x).entries
    m = 2 * cs.K
    t = ExtendedBracketTable(P, m, "skew")
    reduced = dirac_direct(t)
    out = reduced[:dim, dim].copy()
    if spec.dissipative:
        metric = BracketStructure.metric(spec.coordinate_friction)
        G = bracket_matrix(metric, list(cs.phitildes) + coords + [H], x).entries
        tm = ExtendedBracketTable(G, cs.K, "symmetric")
        out -= dirac_direct(tm)[:dim, dim]
    return out


# -- integration -------------------------------------------------------------------

def _rk4_step(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


# Dormand-Prince 5(4) tableau
_DP_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_DP_E = _DP_B - np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640,
                          -92097 / 339200, 187 / 2100, 1 / 40])


def _dp_step(f, y, h, k1):
    ks = [k1]
    for i in range(1, 7):
        yi = y + h * sum(a * k for a, k in zip(_DP_A[i], ks) if a != 0)
        ks.append(f(yi))
    y_new = y + h * sum(b * k for b, k in zip(_DP_B, ks) if b != 0)
    err = h * sum(e * k for e, k in zip(_DP_E, ks) if e != 0)
    return y_new, err, ks[-1]


def integrate(spec: ChainSpec, kind, x0, integ: IntegratorSpec,
              project_output: bool = False) -> Trajectory:
    """Integrate from the phase point ``x0 = (q, p)``.

    Samples are taken every ``integ.stride`` accepted steps and at ``t_end``.
    A failing right-hand side stops the run and returns what was computed
    so far with ``error`` set.  ``project_output`` projects the recorded
    samples (not the integrated state) back onto the constraint surface.
    """
    from .models import project_state

    kind = RhsKind(kind)
    model = ChainModel(spec)
    f = make_rhs(spec, kind)
    is_lmm = kind is RhsKind.lmm
    x0 = as_vector(x0)
    y = to_lmm_state(spec, x0) if is_lmm else x0.copy()

    times: List[float] = []
    states: List[np.ndarray] = []

    def record(t, y):
        x = from_lmm_state(spec, y) if is_lmm else y.copy()
        if project_output:
            x = project_state(spec, x, model)
        times.append(t)
        states.append(x)

    t = 0.0
    record(t, y)
    error = None
    steps = 0
    T = integ.t_end
    eps = 1e-12 * T
    try:
        if integ.method == "rk4":
            nsteps = int(np.ceil(T / integ.dt - 1e-9))
            h = T / nsteps
            for i in range(1, nsteps + 1):
                y = _rk4_step(f, y, h)
                if not np.all(np.isfinite(y)):
                    raise RhsFailure("state became non-finite")
                t = i * h
                steps = i
                if i % integ.stride == 0 or i == nsteps:
                    record(t, y)
        else:
            h = min(integ.dt, T)
            k1 = f(y)
            err_prev = 1.0
            tol = integ.tolerance
            while t < T - eps:
                if steps >= integ.max_steps:
                    raise RhsFailure(f"step limit {integ.max_steps} reached")
                h = min(h, T - t)
                y_new, err, k_last = _dp_step(f, y, h, k1)
                scale = tol * (1.0 + np.maximum(np.abs(y), np.abs(y_new)))
                en = float(np.sqrt(np.mean((err / scale) ** 2)))
                if not np.isfinite(en):
                    en = 1e10
                if en <= 1.0:
                    t += h
                    y = y_new
                    k1 = k_last
                    steps += 1
                    if steps % integ.stride == 0 or t >= T - eps:
                        record(T if t >= T - eps else t, y)
                    # PI controller
                    fac = 0.9 * en ** (-0.7 / 5) * err_prev ** (0.4 / 5) if en > 0 else 5.0
                    h *= min(5.0, max(0.2, fac))
                    err_prev = max(en, 1e-4)
                else:
                    h *= max(0.2, 0.9 * en ** (-1 / 5))
                if h < 1e-14 * max(1.0, T):
                    raise RhsFailure(f"step size underflow at t={t}")
    except (RhsFailure, FloatingPointError, ZeroDivisionError, np.linalg.LinAlgError) as exc:
        error = f"t={t:.17g}: {exc}"

    X = np.array(states)
    energy = np.array([model.energy(x) for x in X])
    resid = np.array([model.residual(x) for x in X])
    return Trajectory(np.array(times), X, energy, resid, kind.value, error, steps)


# -- diagnostics ----------------------------------------------------------------------

def diagnostics(traj: Trajectory, spec: Optional[ChainSpec] = None) -> Dict[str, float]:
    """Energy drift, constraint residuals and linear drift-rate fits."""
    if len(traj.times) == 0:
        raise ValueError("empty trajectory")
    E = traj.energy
    E0 = E[0]
    scale = abs(E0) if E0 != 0 else 1.0
    rel = np.abs(E - E0) / scale
    inc = np.diff(E)
    t = traj.times

    def rate(series):
        if len(t) < 2:
            return 0.0
        return float(np.polyfit(t, series, 1)[0])

    out = {
        "kind": traj.kind,
        "steps": int(traj.steps),
        "t_final": float(t[-1]),
        "energy_initial": float(E0),
        "energy_final": float(E[-1]),
        "energy_drift_max": float(rel.max()),
        "energy_drift_final": float(rel[-1]),
        "energy_drift_rate": rate(rel),
        "residual_max": float(traj.constraint_residual.max()),
        "residual_final": float(traj.constraint_residual[-1]),
        "residual_rate": rate(traj.constraint_residual),
        "max_energy_increment": float(max(inc.max(), 0.0)) if inc.size else 0.0,
        "truncated": traj.truncated,
        "error": traj.error,
    }
    if spec is not None:
        out["dissipative"] = spec.dissipative
    return out


def write_csv(path, traj: Trajectory, n: int) -> None:
    """Columns ``t, q1..qn, p1..pn, energy, constraint_residual`` at 17 significant digits."""
    header = (["t"] + [f"q{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)]
              + ["energy", "constraint_residual"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, x, e, r in zip(traj.times, traj.states, traj.energy, traj.constraint_residual):
            w.writerow([f"{v:.17g}" for v in (t, *x, e, r)])


def worker_count(default: Optional[int] = None) -> int:
    env = os.environ.get("DIRAC_DYN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return default or min(8, os.cpu_count() or 1)


def run_many(jobs: Dict[object, Callable[[], object]], workers: Optional[int] = None) -> Dict:
    """Run independent jobs on a thread pool; results come back sorted by key."""
    keys = sorted(jobs)
    n = worker_count(workers)
    if n == 1 or len(keys) <= 1:
        return {k: jobs[k]() for k in keys}
    with ThreadPoolExecutor(max_workers=n) as pool:
        futures = {k: pool.submit(jobs[k]) for k in keys}
        return {k: futures[k].result() for k in keys}
