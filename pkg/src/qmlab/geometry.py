"""Sampled-numeric verdicts for the structural assumptions on p and H.

A1: p vanishes simply on each cotangent fibre (d_xi p != 0 on {p = 0}).
A2: the fibre variety {xi : p(x, xi) = 0} has definite second fundamental
    form.  The matrix reported is the tangential Hessian of p divided by
    |d_xi p|; its sign flips with the co-orientation, so definiteness of
    either sign passes and the sign is reported.
A3: projected bicharacteristics are at most simply tangent to H = {r = 0}:
    wherever rdot = {p, r} vanishes, rddot = {p, {p, r}} must not.

Verdicts are sampled-numeric with explicit witnesses, not proofs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .flow import r_derivatives
from .symbols import DomainError, Jet, PhasePoint, SymbolFn, jet_of_callable, parse_named_function

__all__ = [
    "Region",
    "CharSample",
    "A1Result",
    "A2Result",
    "A3Result",
    "TangencyWitness",
    "GeometryReport",
    "GeometryError",
    "sample_char_variety",
    "check_A1",
    "check_A2",
    "check_A3",
    "run_geometry_check",
    "solve_a",
    "ImplicitReducedSymbol",
    "ExprReducedSymbol",
    "reduced_from_expression",
]

DEFAULT_THRESHOLD = 1e-6
CHAR_RESIDUAL = 1e-10


class GeometryError(ValueError):
    """Invalid geometric input (e.g. a defining function with dr = 0 on H)."""


@dataclass(frozen=True)
class Region:
    """A box in phase space with per-axis sample counts; stands in for the
    small patch on which the assumptions are checked."""

    x_bounds: tuple          # n pairs (lo, hi)
    xi_bounds: tuple         # n pairs (lo, hi)
    x_samples: tuple         # n ints >= 2
    xi_samples: tuple        # n ints >= 2

    def __post_init__(self):
        n = len(self.x_bounds)
        if n == 0 or len(self.xi_bounds) != n:
            raise ValueError("x and xi bounds must be nonempty and of equal length")
        if len(self.x_samples) != n or len(self.xi_samples) != n:
            raise ValueError("sample counts must match the dimension")
        for lo, hi in tuple(self.x_bounds) + tuple(self.xi_bounds):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise ValueError(f"invalid interval ({lo}, {hi})")
        if any(k < 2 for k in tuple(self.x_samples) + tuple(self.xi_samples)):
            raise ValueError("sample counts must be >= 2")

    @property
    def n(self) -> int:
        return len(self.x_bounds)

    @staticmethod
    def cube(n: int, half_width: float = 0.5, samples: int = 5) -> "Region":
        b = ((-half_width, half_width),) * n
        return Region(b, b, (samples,) * n, (samples,) * n)

    def x_axes(self):
        return [np.linspace(lo, hi, k) for (lo, hi), k in zip(self.x_bounds, self.x_samples)]

    def xi_axes(self):
        return [np.linspace(lo, hi, k) for (lo, hi), k in zip(self.xi_bounds, self.xi_samples)]

    def to_dict(self):
        return {
            "x_bounds": [list(b) for b in self.x_bounds],
            "xi_bounds": [list(b) for b in self.xi_bounds],
            "x_samples": list(self.x_samples),
            "xi_samples": list(self.xi_samples),
        }


def _point_dict(pt: PhasePoint):
    return {"x": [float(v) for v in pt.x], "xi": [float(v) for v in pt.xi]}


@dataclass(frozen=True)
class CharSample:
    points: list
    attempted: int
    converged: int


@dataclass(frozen=True)
class A1Result:
    verdict: str                      # pass | fail | vacuous
    min_grad: Optional[float] = None
    witness: Optional[PhasePoint] = None

    def to_dict(self):
        out = {"verdict": self.verdict, "min_grad_xi": self.min_grad}
        if self.witness is not None:
            out["witness"] = _point_dict(self.witness)
        return out


@dataclass(frozen=True)
class A2Result:
    verdict: str
    sign: Optional[int] = None        # +1 / -1 when definite
    min_abs_eig: Optional[float] = None
    witness: Optional[PhasePoint] = None
    reason: str = ""

    def to_dict(self):
        out = {
            "verdict": self.verdict,
            "sign": self.sign,
            "min_abs_eigenvalue": self.min_abs_eig,
            "reason": self.reason,
        }
        if self.witness is not None:
            out["witness"] = _point_dict(self.witness)
        return out


@dataclass(frozen=True)
class TangencyWitness:
    point: PhasePoint
    rdot: float
    rddot: float
    rddot_normalized: float           # rddot / |dr|, the orientation-free margin

    def to_dict(self):
        return {
            "point": _point_dict(self.point),
            "rdot": self.rdot,
            "rddot": self.rddot,
            "rddot_normalized": self.rddot_normalized,
        }


@dataclass(frozen=True)
class A3Result:
    verdict: str
    tangencies: list = field(default_factory=list)
    min_abs_rddot: Optional[float] = None

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "min_abs_rddot_normalized": self.min_abs_rddot,
            "tangencies": [w.to_dict() for w in self.tangencies],
        }


@dataclass(frozen=True)
class GeometryReport:
    a1: A1Result
    a2: A2Result
    a3: A3Result
    sample_counts: dict

    @property
    def passed(self) -> bool:
        return all(res.verdict != "fail" for res in (self.a1, self.a2, self.a3))

    def to_dict(self):
        return {
            "a1": self.a1.to_dict(),
            "a2": self.a2.to_dict(),
            "a3": self.a3.to_dict(),
            "sample_counts": self.sample_counts,
            "passed": self.passed,
        }


# ---------------------------------------------------------------------------
# characteristic-variety sampling


def _grad_split(p, env, n):
    grad = jet_of_callable(p.eval_phase, env, 1).gradient
    return grad[:n], grad[n:]


def _project_to_fibre(p, x, xi_seed, max_iter=60):
    """Newton-project xi onto {p(x, .) = 0} along d_xi p; None on failure."""
    n = len(x)
    xi = np.array(xi_seed, dtype=float)
    for _ in range(max_iter):
        env = list(x) + [float(v) for v in xi]
        try:
            val = float(p.eval_phase(env))
            if abs(val) <= CHAR_RESIDUAL:
                return xi
            _, gxi = _grad_split(p, env, n)
        except DomainError:
            return None
        norm2 = float(gxi @ gxi)
        if norm2 < 1e-24 or not np.isfinite(norm2):
            return None
        xi = xi - val * gxi / norm2
        if not np.isfinite(xi).all():
            return None
    return None


def sample_char_variety(p, region: Region, max_points: int = 200) -> CharSample:
    """Sample {p = 0} inside the region: grid seeds Newton-projected along d_xi p.

    Non-converging seeds are skipped, not fatal; the counts are recorded.
    Every returned point satisfies |p| <= 1e-10.
    """
    if max_points < 1:
        raise ValueError("max_points must be >= 1")
    if region.n != p.n:
        raise ValueError("region dimension does not match symbol")
    points = []
    attempted = 0
    converged = 0
    x_axes, xi_axes = region.x_axes(), region.xi_axes()
    for x_tuple in itertools.product(*x_axes):
        for xi_tuple in itertools.product(*xi_axes):
            attempted += 1
            xi = _project_to_fibre(p, list(x_tuple), xi_tuple)
            if xi is None:
                continue
            converged += 1
            if len(points) < max_points:
                points.append(PhasePoint(np.array(x_tuple), xi))
        if len(points) >= max_points:
            break
    return CharSample(points=points, attempted=attempted, converged=converged)


def check_A1(p, pts: Sequence[PhasePoint], threshold: float = DEFAULT_THRESHOLD) -> A1Result:
    """p vanishes simply on each fibre: min |d_xi p| over pts must clear the threshold."""
    if not pts:
        return A1Result("vacuous")
    best = None
    for pt in pts:
        _, gxi = _grad_split(p, pt.env(), p.n)
        mag = float(np.linalg.norm(gxi))
        if best is None or mag < best[0]:
            best = (mag, pt)
    min_grad, witness = best
    verdict = "pass" if min_grad > threshold else "fail"
    return A1Result(verdict, min_grad, witness)


def _fibre_form(p, pt: PhasePoint):
    """Second fundamental form of the fibre variety at pt, in an orthonormal
    tangent basis: B (Hess_xi p) B^T / |d_xi p|."""
    n = p.n
    jet = jet_of_callable(p.eval_phase, pt.env(), 2)
    gxi = jet.gradient[n:]
    norm = float(np.linalg.norm(gxi))
    if norm < 1e-14:
        return None, norm
    # rows 2..n of the SVD of the normal direction give the tangent basis
    _, _, vt = np.linalg.svd(gxi[None, :])
    basis = vt[1:]
    hess_xi = jet.hessian[n:, n:]
    return basis @ hess_xi @ basis.T / norm, norm


def check_A2(p, pts: Sequence[PhasePoint], threshold: float = DEFAULT_THRESHOLD) -> A2Result:
    """Definiteness (either sign) of the fibre second fundamental form at pts."""
    if not pts:
        return A2Result("vacuous")
    overall_sign = 0
    best = None
    for pt in pts:
        form, grad_norm = _fibre_form(p, pt)
        if form is None:
            return A2Result("fail", None, 0.0, pt, "d_xi p vanishes (A1 fails here)")
        eigs = np.linalg.eigvalsh(form)
        min_abs = float(np.min(np.abs(eigs)))
        if best is None or min_abs < best[0]:
            best = (min_abs, pt)
        if min_abs <= threshold:
            return A2Result("fail", None, min_abs, pt, "eigenvalue below threshold")
        sign = 1 if eigs[0] > 0 else -1
        if eigs[0] * eigs[-1] < 0:
            return A2Result("fail", None, min_abs, pt, "indefinite form")
        if overall_sign == 0:
            overall_sign = sign
        elif sign != overall_sign:
            return A2Result("fail", None, min_abs, pt, "sign flips across sampled points")
    return A2Result("pass", overall_sign, best[0], best[1])


# ---------------------------------------------------------------------------
# the reduced symbol a(x, xibar) with p = e (tau - a)


def solve_a(p, x: Sequence[float], xibar: Sequence[float], tau_seed: float = 0.0,
            tol: float = 1e-12, max_iter: int = 50, dtau_min: float = 1e-8) -> float:
    """Solve p(x, tau, xibar) = 0 for tau by Newton iteration from tau_seed."""
    n = p.n
    if len(x) != n or len(xibar) != n - 1:
        raise ValueError("x must have length n and xibar length n-1")
    tau = float(tau_seed)
    xs = [float(v) for v in x]
    tail = [float(v) for v in xibar]
    for _ in range(max_iter):
        env = xs + [tau] + tail
        val = float(p.eval_phase(env))
        if abs(val) < tol:
            return tau
        dtau = jet_of_callable(p.eval_phase, env, 1).gradient[n]
        if abs(dtau) < dtau_min:
            raise GeometryError(f"d_tau p = {dtau:.3e} too small while solving for a at x={xs}")
        tau -= val / dtau
    raise GeometryError(f"Newton for a(x, xibar) did not converge in {max_iter} iterations")


def _reduced_names(n: int):
    return tuple(f"x{i}" for i in range(1, n + 1)) + tuple(f"xi{i}" for i in range(2, n + 1))


class ImplicitReducedSymbol:
    """a(x, xibar) defined by p(x, a, xibar) = 0, with jets to second order
    by implicit differentiation of the jets of p.

    Reduced variables are ordered (x1..xn, xi2..xin); m = 2n - 1.
    """

    def __init__(self, p, tau_seed: float = 0.0):
        self.p = p
        self.n = p.n
        self.m = 2 * p.n - 1
        self._tau_warm = float(tau_seed)

    def _full_index(self, alpha: int) -> int:
        return alpha if alpha < self.n else alpha + 1

    def value(self, x, xibar) -> float:
        tau = solve_a(self.p, x, xibar, tau_seed=self._tau_warm)
        self._tau_warm = tau
        return tau

    def jet(self, x, xibar, order: int = 2) -> Jet:
        if not 0 <= order <= 2:
            raise ValueError("reduced jets are available to order 2")
        n, m = self.n, self.m
        a_val = self.value(x, xibar)
        env = [float(v) for v in x] + [a_val] + [float(v) for v in xibar]
        pj = jet_of_callable(self.p.eval_phase, env, order)
        if order == 0:
            return Jet(a_val)
        p_tau = pj.gradient[n]
        if abs(p_tau) < 1e-8:
            raise GeometryError("d_tau p too small for implicit differentiation")
        full = [self._full_index(al) for al in range(m)]
        grad = -pj.gradient[full] / p_tau
        if order == 1:
            return Jet(a_val, grad)
        H = pj.hessian
        hess = np.empty((m, m))
        for al in range(m):
            fa = full[al]
            for be in range(al, m):
                fb = full[be]
                num = (
                    H[fa, fb]
                    + H[fa, n] * grad[be]
                    + H[n, fb] * grad[al]
                    + H[n, n] * grad[al] * grad[be]
                )
                hess[al, be] = hess[be, al] = -num / p_tau
        return Jet(a_val, grad, hess)

    def e0(self, x, xibar) -> float:
        """The elliptic factor e = d_tau p at (x, a(x, xibar), xibar)."""
        a_val = self.value(x, xibar)
        env = [float(v) for v in x] + [a_val] + [float(v) for v in xibar]
        return float(jet_of_callable(self.p.eval_phase, env, 1).gradient[self.n])


class ExprReducedSymbol:
    """A reduced symbol given directly as an expression in x1..xn, xi2..xin."""

    def __init__(self, fn: SymbolFn):
        self.fn = fn
        self.n = fn.n
        self.m = 2 * fn.n - 1

    def value(self, x, xibar) -> float:
        env = [float(v) for v in x] + [float(v) for v in xibar]
        return float(self.fn.eval_env(env))

    def jet(self, x, xibar, order: int = 2) -> Jet:
        if not 0 <= order <= 2:
            raise ValueError("reduced jets are available to order 2")
        env = [float(v) for v in x] + [float(v) for v in xibar]
        return jet_of_callable(self.fn.eval_env, env, order)

    def e0(self, x, xibar) -> float:
        return 1.0


def reduced_from_expression(text: str, n: int) -> ExprReducedSymbol:
    return ExprReducedSymbol(parse_named_function(text, _reduced_names(n), n))


# ---------------------------------------------------------------------------
# A3: tangencies of projected bicharacteristics with H = {r = 0}


def _project_to_hypersurface(r, x_seed, max_iter=60, dr_min=1e-4):
    """Newton-project x onto {r = 0} along grad r; GeometryError if dr = 0 there.

    ``dr_min`` is the simple-vanishing margin: a defining function whose
    gradient degenerates on H (e.g. r = xn^2) lands below it and is rejected.
    """
    x = np.array(x_seed, dtype=float)
    n = len(x)
    for _ in range(max_iter):
        env = [float(v) for v in x]
        try:
            val = float(r.eval_env(env))
        except DomainError:
            return None
        grad = jet_of_callable(r.eval_env, env, 1, m=n).gradient
        norm2 = float(grad @ grad)
        if abs(val) <= CHAR_RESIDUAL:
            if np.sqrt(norm2) < dr_min:
                raise GeometryError(f"dr vanishes on {{r = 0}} near x = {x.tolist()}")
            return x
        if norm2 < 1e-24:
            return None
        x = x - val * grad / norm2
        if not np.isfinite(x).all():
            return None
    return None


def _rdot_normalized(p, r, x, xi):
    pt = PhasePoint(x, xi)
    rdot, rddot = r_derivatives(p, r, pt)
    grad_r = jet_of_callable(r.eval_env, [float(v) for v in x], 1, m=len(x)).gradient
    dr = float(np.linalg.norm(grad_r))
    return pt, rdot, rddot, dr


def check_A3(
    p,
    r,
    region: Region,
    threshold: float = DEFAULT_THRESHOLD,
    sweep_tol: float = 1e-8,
    dedupe_tol: float = 1e-5,
) -> A3Result:
    """Locate tangencies on {p = 0, r = 0} and test |rddot| / |dr| there.

    Tangencies are found by a grid sweep over the region: along each xi-axis
    line of fibre-projected characteristic points, a sign change of rdot is
    refined by bisection; points with |rdot|/|dr| below ``sweep_tol`` count
    directly.  Grid sweep + bisection is deliberate: robust and testable at
    patch scale.
    """
    if r.arity != "base":
        raise GeometryError("the defining function r must be a base-space function")
    n = p.n
    x_axes, xi_axes = region.x_axes(), region.xi_axes()

    surface_points = []
    for x_tuple in itertools.product(*x_axes):
        x_proj = _project_to_hypersurface(r, x_tuple)
        if x_proj is not None:
            surface_points.append(x_proj)
    attempted = len(surface_points)

    def fibre_rdot(x, xi_seed):
        xi = _project_to_fibre(p, x, xi_seed)
        if xi is None:
            return None
        _, rdot, _, dr = _rdot_normalized(p, r, x, xi)
        return xi, rdot / dr

    tangencies = []

    def record(x, xi):
        pt, rdot, rddot, dr = _rdot_normalized(p, r, x, xi)
        for w in tangencies:
            if (
                np.linalg.norm(w.point.x - pt.x) + np.linalg.norm(w.point.xi - pt.xi)
                < dedupe_tol
            ):
                return
        tangencies.append(TangencyWitness(pt, rdot, rddot, rddot / dr))

    for x in surface_points:
        # values on the full xi grid, kept by multi-index for line sweeps
        shape = tuple(len(ax) for ax in xi_axes)
        cache = {}
        for idx in itertools.product(*(range(s) for s in shape)):
            seed = [xi_axes[d][idx[d]] for d in range(n)]
            cache[idx] = fibre_rdot(x, seed)
            got = cache[idx]
            if got is not None and abs(got[1]) < sweep_tol:
                record(x, got[0])
        for d in range(n):
            for idx in itertools.product(*(range(s) for s in shape)):
                if idx[d] + 1 >= shape[d]:
                    continue
                nxt = idx[:d] + (idx[d] + 1,) + idx[d + 1 :]
                a_entry, b_entry = cache[idx], cache[nxt]
                if a_entry is None or b_entry is None:
                    continue
                fa, fb = a_entry[1], b_entry[1]
                if fa == 0.0 or fb == 0.0 or fa * fb > 0:
                    continue
                seed_a = np.array([xi_axes[k][idx[k]] for k in range(n)])
                seed_b = np.array([xi_axes[k][nxt[k]] for k in range(n)])
                lo, hi, flo = 0.0, 1.0, fa
                found = None
                for _ in range(80):
                    mid = 0.5 * (lo + hi)
                    got = fibre_rdot(x, (1 - mid) * seed_a + mid * seed_b)
                    if got is None:
                        break
                    if abs(got[1]) < 1e-12 or hi - lo < 1e-14:
                        found = got[0]
                        break
                    if flo * got[1] <= 0:
                        hi = mid
                    else:
                        lo, flo = mid, got[1]
                if found is None and hi - lo < 1e-13:
                    got = fibre_rdot(x, (1 - lo) * seed_a + lo * seed_b)
                    found = got[0] if got else None
                if found is not None:
                    record(x, found)

    if not tangencies:
        return A3Result("vacuous", [], None)
    min_abs = min(abs(w.rddot_normalized) for w in tangencies)
    verdict = "pass" if min_abs > threshold else "fail"
    return A3Result(verdict, tangencies, min_abs)


def run_geometry_check(
    p,
    r,
    region: Region,
    max_points: int = 200,
    threshold: float = DEFAULT_THRESHOLD,
) -> GeometryReport:
    """Full A1/A2/A3 report over the region."""
    sample = sample_char_variety(p, region, max_points)
    a1 = check_A1(p, sample.points, threshold)
    a2 = check_A2(p, sample.points, threshold) if a1.verdict == "pass" else A2Result(
        "vacuous" if a1.verdict == "vacuous" else "fail", reason="skipped: A1 did not pass"
    )
    a3 = check_A3(p, r, region, threshold)
    counts = {
        "char_attempted": sample.attempted,
        "char_converged": sample.converged,
        "char_used": len(sample.points),
        "tangencies": len(a3.tangencies),
    }
    return GeometryReport(a1, a2, a3, counts)
