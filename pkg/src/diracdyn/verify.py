"""Randomized property suites behind ``diracdyn verify``.

Each suite returns a list of :class:`PropertyResult`; the random instances
come from :func:`diracdyn.rng.stream` so a seed fixes the whole report.
"""

from __future__ import annotations

import timeit
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .brackets import BracketStructure, PhaseFunction, bracket_matrix
from .dirac import (ExtendedBracketTable, dirac_determinant_matrix, dirac_direct,
                    dirac_recursive_skew, dirac_recursive_symmetric, dirac_square_check,
                    jacobiator_residual, recombine_constraints)
from .rng import stream
from .tridiag import (SymTridiag, block_diagonalize, det_sequence, inverse_full,
                      one_pair_factors, solve)

# random instances with cond(W) above this are redrawn (the reduction would
# legitimately lose more than the 1e-9 budget)
MAX_COND = 1e8
JACOBI_STEPS = np.logspace(-3, -5, 5)


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    worst: float
    limit: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"{status}  {self.name:<44s} worst={self.worst:.3e}  limit={self.limit:.1e}{extra}"


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    den = max(np.max(np.abs(b), initial=0.0), np.finfo(float).tiny)
    return float(np.max(np.abs(a - b), initial=0.0) / den)


# -- random instances -------------------------------------------------------------

def random_quadratic(rng: np.random.Generator, dim: int, name: str = "") -> PhaseFunction:
    Q = rng.normal(size=(dim, dim))
    return PhaseFunction.quadratic(0.5 * (Q + Q.T), rng.normal(size=dim), float(rng.normal()), name)


def random_smooth(rng: np.random.Generator, dim: int, terms: int = 3, freq: float = 2.0,
                  name: str = "") -> PhaseFunction:
    """``sum_j a_j sin(k_j . x + b_j) + c . x`` with analytic derivatives."""
    K = freq * rng.normal(size=(terms, dim))
    a = rng.normal(size=terms)
    b = rng.uniform(0, 2 * np.pi, terms)
    lin = rng.normal(size=dim)

    def value(x):
        return float(a @ np.sin(K @ x + b) + lin @ x)

    def gradient(x):
        return K.T @ (a * np.cos(K @ x + b)) + lin

    def hessian(x):
        return -(K.T * (a * np.sin(K @ x + b))) @ K

    return PhaseFunction(value, gradient, hessian, name)


def _well_posed(t: ExtendedBracketTable) -> bool:
    return t.m == 0 or np.linalg.cond(t.W) <= MAX_COND


def random_skew_table(rng: np.random.Generator, s: int = 2, n_max: int = 6,
                      m_max: int = 6) -> ExtendedBracketTable:
    """Canonical brackets of random quadratics: even ``m < 2n`` (``m <= m_max``) constraints, ``s`` functions."""
    while True:
        # m < 2n leaves an unconstrained direction, so the reduced bracket is not identically zero
        n = int(rng.integers(2, n_max + 1))
        m = 2 * int(rng.integers(1, min(m_max, 2 * n - 1) // 2 + 1))
        fs = [random_quadratic(rng, 2 * n) for _ in range(m + s)]
        x = rng.normal(size=2 * n)
        bm = bracket_matrix(BracketStructure.canonical(), fs, x)
        t = ExtendedBracketTable(bm.entries, m, "skew")
        if _well_posed(t):
            return t


def random_metric_table(rng: np.random.Generator, s: int = 2, n_max: int = 6,
                        m_max: int = 6) -> ExtendedBracketTable:
    """Metric brackets with non-negative (partly zero) friction: a PSD symmetric table.

    ``m`` stays below the number of positive coefficients for the same reason
    as in :func:`random_skew_table`.
    """
    while True:
        n = int(rng.integers(1, n_max + 1))
        lam = rng.uniform(0.1, 2.0, n) * (rng.random(n) > 0.25)
        rank = int(np.count_nonzero(lam))
        if rank < 2:
            continue
        m = int(rng.integers(1, min(m_max, rank - 1) + 1))
        fs = [random_quadratic(rng, 2 * n) for _ in range(m + s)]
        x = rng.normal(size=2 * n)
        bm = bracket_matrix(BracketStructure.metric(lam), fs, x)
        t = ExtendedBracketTable(bm.entries, m, "symmetric")
        if _well_posed(t):
            return t


def random_skew_matrix_table(rng: np.random.Generator, m: int, s: int = 2) -> ExtendedBracketTable:
    while True:
        B = rng.normal(size=(m + s, m + s))
        t = ExtendedBracketTable(B - B.T, m, "skew")
        if _well_posed(t):
            return t


def random_spd_tridiag(rng: np.random.Generator, K: int) -> SymTridiag:
    b = rng.normal(size=K - 1)
    c = np.abs(np.concatenate([[0.0], b])) + np.abs(np.concatenate([b, [0.0]])) \
        + rng.uniform(0.1, 1.0, K)
    return SymTridiag(c, b)


# -- bracket suites -----------------------------------------------------------------

def three_way(t: ExtendedBracketTable) -> float:
    """Worst pairwise relative disagreement of direct, determinant and recursive reduction."""
    d = dirac_direct(t)
    det = dirac_determinant_matrix(t)
    rec = dirac_recursive_skew(t) if t.kind == "skew" else dirac_recursive_symmetric(t)
    return max(rel_err(det, d), rel_err(rec, d), rel_err(rec, det))


def casimir_residual(t: ExtendedBracketTable, rng: np.random.Generator) -> float:
    """``max |eta_D(phi_i, f)| / scale`` with every constraint appended as a trailing function."""
    m = t.m
    E = t.entries
    idx = list(range(m)) + list(range(m)) + list(range(m, t.size))
    ext = ExtendedBracketTable(E[np.ix_(idx, idx)], m, t.kind)
    worst = 0.0
    for red in (dirac_direct(ext),
                dirac_recursive_skew(ext) if t.kind == "skew" else dirac_recursive_symmetric(ext)):
        worst = max(worst, float(np.max(np.abs(red[:m, :]))))
    return worst / t.scale


def bracket_suite(seed: int, trials: int) -> List[PropertyResult]:
    eq_skew = eq_sym = cas = semi = quad = recomb = odd = 0.0
    for k in range(trials):
        rng = stream(seed, 1, k)
        ts = random_skew_table(rng)
        tm = random_metric_table(rng)
        eq_skew = max(eq_skew, three_way(ts))
        eq_sym = max(eq_sym, three_way(tm))
        cas = max(cas, casimir_residual(ts, rng), casimir_residual(tm, rng))
        red = dirac_direct(tm)
        semi = max(semi, float(-np.min(np.diag(red))) / tm.scale)
        a, b = dirac_square_check(random_skew_matrix_table(rng, 2 * int(rng.integers(1, 4))))
        quad = max(quad, abs(a - b) / max(abs(a), abs(b), np.finfo(float).tiny))
        t2, _ = recombine_constraints(ts)
        recomb = max(recomb, rel_err(dirac_direct(t2), dirac_direct(ts)))
        B = rng.normal(size=(5, 5))
        A = B - B.T
        odd = max(odd, abs(np.linalg.det(A)) / np.max(np.abs(A)))
    return [
        PropertyResult("three-way equivalence (skew)", eq_skew <= 1e-9, eq_skew, 1e-9),
        PropertyResult("three-way equivalence (symmetric)", eq_sym <= 1e-9, eq_sym, 1e-9),
        PropertyResult("constraints are Casimirs", cas <= 1e-10, cas, 1e-10),
        PropertyResult("semimetric inheritance", semi <= 1e-10, max(semi, 0.0), 1e-10),
        PropertyResult("quadratic Dirac identity", quad <= 1e-8, quad, 1e-8),
        PropertyResult("recombination invariance", recomb <= 1e-10, recomb, 1e-10),
        PropertyResult("odd skew determinant vanishes", odd <= 1e-12, odd, 1e-12),
    ]


def jacobi_instance(rng: np.random.Generator):
    n = int(rng.integers(2, 4))
    dim = 2 * n
    cons = [random_smooth(rng, dim, name=f"phi{i + 1}") for i in range(2)]
    f, g, h = (random_smooth(rng, dim, name=c) for c in "fgh")
    x = rng.normal(size=dim)
    return cons, f, g, h, x


def jacobi_slope(seed: int, index: int) -> float:
    cons, f, g, h, x = jacobi_instance(stream(seed, 3, index))
    s = BracketStructure.canonical()
    r = [jacobiator_residual(s, cons, f, g, h, x, step=st) for st in JACOBI_STEPS]
    return float(np.polyfit(np.log(JACOBI_STEPS), np.log(r), 1)[0])


def jacobi_suite(seed: int, instances: int = 20) -> List[PropertyResult]:
    slopes = np.array([jacobi_slope(seed, i) for i in range(instances)])
    dev = float(np.max(np.abs(slopes - 2.0)))
    return [PropertyResult("Jacobiator O(step^2) slope", dev <= 0.3, dev, 0.3,
                           f"slopes {slopes.min():.3f}..{slopes.max():.3f}")]


# -- tridiagonal suite --------------------------------------------------------------

def loglog_slope(Ks, times) -> float:
    return float(np.polyfit(np.log(Ks), np.log(times), 1)[0])


def time_call(fn: Callable, reps: int = 3, min_batch: float = 0.01) -> float:
    """Best per-call time over ``reps`` batches, each batch lasting at least ``min_batch`` seconds."""
    timer = timeit.Timer(fn)
    number, _ = timer.autorange() if min_batch > 0 else (1, None)
    while number > 1 and timer.timeit(number) < min_batch:
        number *= 2
    return min(timer.repeat(repeat=reps, number=number)) / number


def tridiag_suite(seed: int, trials: int, timing: bool = True,
                  max_K: int = 10 ** 6) -> List[PropertyResult]:
    agree = onepair = detc = sym = solv = 0.0
    for k in range(trials):
        rng = stream(seed, 4, k)
        K = int(rng.integers(2, 201))
        S = random_spd_tridiag(rng, K)
        dense = np.linalg.inv(S.to_dense())
        for method in ("onepair", "blockdiag", "entries"):
            X = inverse_full(S, method)
            agree = max(agree, rel_err(X, dense))
            sym = max(sym, float(np.max(np.abs(X - X.T))))
        X = inverse_full(S, "onepair")
        i, kk, j, l = np.sort(rng.integers(0, K, 4))
        lhs, rhs = X[i, j] * X[kk, l], X[i, l] * X[kk, j]
        onepair = max(onepair, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
        ds = det_sequence(S)
        dense_det = np.linalg.slogdet(S.to_dense())
        bd = block_diagonalize(S)
        log_piv = -2.0 * np.sum(np.log(np.abs(bd.diag_U())))
        detc = max(detc, abs(np.expm1(ds.log_abs()[-1] - dense_det[1])),
                   abs(np.expm1(log_piv - dense_det[1])))
        r = rng.normal(size=K)
        solv = max(solv, float(np.linalg.norm(S.matvec(solve(S, r)) - r) / np.linalg.norm(r)))
    out = [
        PropertyResult("three inverses match dense", agree <= 1e-9, agree, 1e-9),
        PropertyResult("one-pair structure", onepair <= 1e-8, onepair, 1e-8),
        PropertyResult("determinant consistency", detc <= 1e-9, detc, 1e-9),
        PropertyResult("inverse symmetric", sym == 0.0, sym, 0.0),
        PropertyResult("solve residual", solv <= 1e-10, solv, 1e-10),
    ]
    if timing:
        Ks = [10 ** e for e in range(3, int(round(np.log10(max_K))) + 1)]
        rng = stream(seed, 5)
        for label, fn in (("one_pair_factors", one_pair_factors), ("solve", None)):
            ts = []
            for K in Ks:
                S = random_spd_tridiag(rng, K)
                r = rng.normal(size=K)
                call = (lambda S=S: one_pair_factors(S)) if fn else (lambda S=S, r=r: solve(S, r))
                call()
                ts.append(time_call(call))
            sl = loglog_slope(Ks, ts)
            # timing noise is not part of the deterministic report
            out.append(PropertyResult(f"O(K) scaling of {label}", abs(sl - 1.0) <= 0.2,
                                      abs(sl - 1.0), 0.2))
    return out


# -- dynamics suite -------------------------------------------------------------------

def random_chain(rng: np.random.Generator, pinned=None, friction=None, pairs=None):
    from .models import ChainSpec, PairPotential, random_state

    pinned = bool(rng.integers(0, 2)) if pinned is None else pinned
    N = int(rng.integers(1 if pinned else 2, 7))
    d = int(rng.integers(2, 4))
    K = N if pinned else N - 1
    use_pairs = bool(rng.integers(0, 2)) if pairs is None else pairs
    pp = PairPotential(rng.normal(size=N), float(rng.uniform(0, 0.5)),
                       float(rng.uniform(0.3, 0.8))) if use_pairs and N > 2 else None
    fr = rng.uniform(0.1, 1.0, N) if (friction if friction is not None else rng.integers(0, 2)) \
        else np.zeros(N)
    spec = ChainSpec(N=N, d=d, masses=rng.uniform(0.5, 2.0, N), lengths=rng.uniform(0.5, 1.5, K),
                     friction=fr, gravity=float(rng.uniform(0, 10)), pair_potential=pp,
                     pinned=pinned)
    return spec, random_state(spec, rng)


def table_equivalence(spec, x) -> Dict[str, float]:
    from .models import closed_form_tables, generic_tables, lagrangian_data

    cf = closed_form_tables(spec, x)
    S, A, SD = generic_tables(spec, x)
    n = spec.n
    M, B, _, _ = lagrangian_data(spec, (x[:n], x[n:] / np.repeat(spec.masses, spec.d)))
    out = {
        "S": rel_err(cf.S.to_dense(), S),
        "A": rel_err(cf.A_dense(), A) if np.any(A) else float(np.max(np.abs(cf.A_dense()))),
        "BtMB": rel_err(B.T @ np.linalg.solve(M, B), cf.S.to_dense()),
        "A_skew": float(np.max(np.abs(A + A.T))),
    }
    out["SD"] = rel_err(cf.SD.to_dense(), SD) if np.any(SD) else float(np.max(np.abs(cf.SD.to_dense())))
    K = S.shape[0]
    far = np.abs(np.subtract.outer(np.arange(K), np.arange(K))) > 1
    out["band"] = float(np.max(np.abs(S[far]), initial=0.0)) / max(np.max(np.abs(S)), 1e-300)
    return out


def dynamics_suite(seed: int, trials: int) -> List[PropertyResult]:
    from .dynamics import RhsKind, dense_rhs, phase_derivative
    from .models import constraints, hamiltonian

    tab = bmb = band = skew = 0.0
    kinds = casimir = dissip = 0.0
    for k in range(trials):
        rng = stream(seed, 6, k)
        spec, x = random_chain(rng)
        te = table_equivalence(spec, x)
        tab = max(tab, te["S"], te["A"], te["SD"])
        bmb = max(bmb, te["BtMB"])
        band = max(band, te["band"])
        skew = max(skew, te["A_skew"])
        ref = dense_rhs(spec, x)
        scale = max(np.max(np.abs(ref)), 1e-300)
        for kind in RhsKind:
            kinds = max(kinds, float(np.max(np.abs(phase_derivative(spec, kind, x) - ref))) / scale)
        xdot = phase_derivative(spec, RhsKind.dirac_full, x)
        H = hamiltonian(spec)
        cs = constraints(spec, H)
        rates = [abs(c.grad(x) @ xdot) for c in cs.functions]
        gscale = max(max(np.max(np.abs(c.grad(x))) for c in cs.functions) * scale, 1e-300)
        casimir = max(casimir, max(rates) / gscale)
        if spec.dissipative:
            dH = float(H.grad(x) @ xdot)
            dissip = max(dissip, dH / max(abs(H(x)), 1.0))
    return [
        PropertyResult("closed-form tables match brackets", tab <= 1e-12, tab, 1e-12),
        PropertyResult("B^T M^-1 B equals S", bmb <= 1e-12, bmb, 1e-12),
        PropertyResult("S is tridiagonal", band <= 1e-14, band, 1e-14),
        PropertyResult("A is skew", skew == 0.0, skew, 0.0),
        PropertyResult("formulations agree on-surface", kinds <= 1e-9, kinds, 1e-9),
        PropertyResult("constraints conserved by full flow", casimir <= 1e-10, casimir, 1e-10),
        PropertyResult("friction never adds energy", dissip <= 1e-12, max(dissip, 0.0), 1e-12),
    ]


SUITES = ("brackets", "tridiag", "dynamics")


def run_suite(name: str, seed: int, trials: int, timing: bool = True) -> List[PropertyResult]:
    if name == "brackets":
        return bracket_suite(seed, trials) + jacobi_suite(seed, min(trials, 20))
    if name == "tridiag":
        return tridiag_suite(seed, trials, timing)
    if name == "dynamics":
        return dynamics_suite(seed, trials)
    if name == "all":
        return [r for s in SUITES for r in run_suite(s, seed, trials, timing)]
    raise ValueError(f"unknown suite {name!r}")
