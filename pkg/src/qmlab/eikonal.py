"""Eikonal phase d_t phi = a(t, xbar, d_xbar phi), phi(0) = xbar . xibar, and
the fold classification of the left/right projections of the attached
canonical relation.

The two decisive third derivatives are computed twice, by independent routes:
closed forms from second jets of the reduced symbol a,

    d3_tnn = d^2_nunu a,
    d3_ttn = d^2_tnu a + d^2_xibar-nu a . d_xbar a        (at d_xibar a = 0),

and high-order finite differences of the numerically solved phase.  The
closed forms are primary (exact and cheap); the PDE solve is the oracle that
validates them and supplies the phase for the restricted-operator sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .symbols import Jet, SymbolFn, eval_jet, jet_of_callable

__all__ = [
    "PhaseTable",
    "MapJet",
    "MapClassification",
    "FoldReport",
    "EikonalError",
    "NormalizationError",
    "solve_phase",
    "hj_residual_max",
    "phase_fold_quantities_closed",
    "phase_fold_quantities_numeric",
    "classify_fold_map",
    "classify_projections",
    "fold_report",
    "oscillatory_phase_projections",
]

DEFAULT_ODE_TOL = 1e-12
DEFAULT_STENCIL = 1e-2
CAUSTIC_TOL = 1e-4
FOLD_THRESHOLD = 1e-6

# 5-point centered stencil weights
_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


class EikonalError(RuntimeError):
    """Phase solve or derivative extraction failed."""


class NormalizationError(ValueError):
    """Base point violates the adapted-coordinate normalization d_xibar a = 0."""


@dataclass(frozen=True)
class PhaseTable:
    """phi(t, xbar; xibar) on a grid, for a stencil of nu values.

    values[k, i, j] = phi(t_values[i], xbar_values[j]; xibar with nu_values[k]).
    momenta holds d_xbar phi at the nodes (the characteristic momentum), used
    for slice-level residual checks when the xbar grid is too thin for
    centered differences.
    """

    n: int
    t_values: np.ndarray
    xbar_values: np.ndarray          # (Nx, d)
    nu_values: np.ndarray
    xibar_center: np.ndarray
    values: np.ndarray               # (Nnu, Nt, Nx)
    momenta: np.ndarray              # (Nnu, Nt, Nx, d)
    caustic: np.ndarray              # bool (Nnu, Nt, Nx)
    jac_min: float

    @property
    def d(self) -> int:
        return self.n - 1

    def node_index(self, t: float, xbar, nu: float):
        i = int(np.argmin(np.abs(self.t_values - t)))
        j = int(np.argmin(np.linalg.norm(self.xbar_values - np.asarray(xbar), axis=1)))
        k = int(np.argmin(np.abs(self.nu_values - nu)))
        return k, i, j


def _char_rhs(a, n, d, with_variational):
    """Characteristics of d_t phi = a: xbar' = -a_xi, q' = +a_x, phi' = a - q.a_xi."""

    def rhs(t, y):
        xbar = y[:d]
        q = y[d : 2 * d]
        x_full = [float(t)] + [float(v) for v in xbar]
        jet = a.jet(x_full, [float(v) for v in q], 2 if with_variational else 1)
        g = jet.gradient
        a_x = g[1 : n]           # d/d xbar (skips t)
        a_xi = g[n :]
        dxbar = -a_xi
        dq = a_x
        dphi = jet.value - float(np.dot(q, a_xi))
        if not with_variational:
            return np.concatenate([dxbar, dq, [dphi]])
        H = jet.hessian
        A_xx = H[1:n, 1:n]
        A_xxi = H[1:n, n:]
        A_xix = H[n:, 1:n]
        A_xixi = H[n:, n:]
        Jx = y[2 * d + 1 : 2 * d + 1 + d * d].reshape(d, d)
        Jq = y[2 * d + 1 + d * d :].reshape(d, d)
        dJx = -(A_xix @ Jx) - (A_xixi @ Jq)
        dJq = (A_xx @ Jx) + (A_xxi @ Jq)
        return np.concatenate([dxbar, dq, [dphi], dJx.ravel(), dJq.ravel()])

    return rhs


def _integrate_char(a, n, xibar, xbar0, t_target, tol):
    """One characteristic from t = 0 to t_target; returns (xbar, q, phi, Jx)."""
    d = n - 1
    xbar0 = np.asarray(xbar0, dtype=float)
    phi0 = float(np.dot(xbar0, xibar))
    if t_target == 0.0:
        return xbar0.copy(), np.asarray(xibar, dtype=float).copy(), phi0, np.eye(d)
    y0 = np.concatenate([xbar0, xibar, [phi0], np.eye(d).ravel(), np.zeros(d * d)])
    sol = solve_ivp(
        _char_rhs(a, n, d, True),
        (0.0, t_target),
        y0,
        method="DOP853",
        rtol=tol,
        atol=tol,
    )
    if not sol.success:
        raise EikonalError(f"characteristic integration failed at t = {sol.t[-1]}")
    y = sol.y[:, -1]
    Jx = y[2 * d + 1 : 2 * d + 1 + d * d].reshape(d, d)
    return y[:d], y[d : 2 * d], float(y[2 * d]), Jx


def solve_phase(
    a,
    xibar: Sequence[float],
    t_values: Sequence[float],
    xbar_values,
    nu_values: Optional[Sequence[float]] = None,
    tol: float = DEFAULT_ODE_TOL,
    newton_tol: Optional[float] = None,
    max_newton: int = 10,
    caustic_tol: float = CAUSTIC_TOL,
) -> PhaseTable:
    """Method of characteristics with Newton inversion of xbar0 -> xbar(t; xbar0).

    For each nu in the stencil and each grid node (t, xbar), the launch point
    xbar0 is found by Newton iteration on the exact flow map (seeded from the
    previous time level), and phi at the node is the accumulated action.
    Nodes behind a caustic (|det d xbar / d xbar0| < caustic_tol) or with a
    failed inversion are flagged, not fatal.
    """
    n = a.n
    d = n - 1
    xibar = np.asarray(xibar, dtype=float)
    if xibar.size != d:
        raise ValueError(f"xibar must have length {d}")
    t_values = np.asarray(t_values, dtype=float)
    xbar_values = np.atleast_2d(np.asarray(xbar_values, dtype=float))
    if xbar_values.shape[1] != d:
        xbar_values = xbar_values.reshape(-1, d)
    if nu_values is None:
        nu0 = xibar[-1]
        nu_values = nu0 + DEFAULT_STENCIL * np.arange(-2, 3)
    nu_values = np.asarray(nu_values, dtype=float)
    if newton_tol is None:
        newton_tol = max(200.0 * tol, 1e-13)

    nnu, nt, nx = nu_values.size, t_values.size, xbar_values.shape[0]
    values = np.full((nnu, nt, nx), np.nan)
    momenta = np.full((nnu, nt, nx, d), np.nan)
    caustic = np.zeros((nnu, nt, nx), dtype=bool)
    jac_min = np.inf

    order = np.argsort(np.abs(t_values), kind="stable")
    for k in range(nnu):
        xib = xibar.copy()
        xib[-1] = nu_values[k]
        seeds = {(j, 1): xbar_values[j].copy() for j in range(nx)}
        seeds.update({(j, -1): xbar_values[j].copy() for j in range(nx)})
        for i in order:
            t = float(t_values[i])
            branch = 1 if t >= 0 else -1
            for j in range(nx):
                target = xbar_values[j]
                if t == 0.0:
                    values[k, i, j] = float(np.dot(target, xib))
                    momenta[k, i, j] = xib
                    jac_min = min(jac_min, 1.0)
                    continue
                x0 = seeds[(j, branch)].copy()
                ok = False
                detj = np.nan
                try:
                    for _ in range(max_newton):
                        xb, q, phi, Jx = _integrate_char(a, n, xib, x0, t, tol)
                        gap = target - xb
                        detj = float(np.linalg.det(Jx))
                        if abs(detj) < caustic_tol:
                            break
                        if np.linalg.norm(gap) <= newton_tol * (1.0 + np.linalg.norm(target)):
                            ok = True
                            break
                        step = np.linalg.solve(Jx, gap)
                        # keep the Newton step at the scale of the grid
                        cap = 1.0 + np.max(np.abs(xbar_values)) + abs(t)
                        norm = np.linalg.norm(step)
                        if norm > cap:
                            step *= cap / norm
                        x0 = x0 + step
                except (EikonalError, ValueError, FloatingPointError):
                    ok = False
                if ok:
                    values[k, i, j] = phi
                    momenta[k, i, j] = q
                    seeds[(j, branch)] = x0
                    jac_min = min(jac_min, abs(detj))
                else:
                    caustic[k, i, j] = True
                    if np.isfinite(detj):
                        jac_min = min(jac_min, abs(detj))
    return PhaseTable(
        n=n,
        t_values=t_values,
        xbar_values=xbar_values,
        nu_values=nu_values,
        xibar_center=xibar,
        values=values,
        momenta=momenta,
        caustic=caustic,
        jac_min=float(jac_min),
    )


def _uniform_spacing(axis: np.ndarray, name: str) -> float:
    if axis.size < 5:
        raise EikonalError(f"insufficient {name} stencil: need >= 5 nodes, got {axis.size}")
    steps = np.diff(axis)
    h = float(np.mean(steps))
    if h == 0 or np.max(np.abs(steps - h)) > 1e-9 * max(abs(h), 1.0):
        raise EikonalError(f"{name} grid must be uniform for stencil differentiation")
    return h


def hj_residual_max(table: PhaseTable, a) -> float:
    """max |d_t phi - a(t, xbar, d_xbar phi)| over interior non-caustic nodes.

    d_t phi always comes from 5-point differences along the t grid.  d_xbar
    phi does too when the xbar grid has >= 5 nodes per direction (d = 1);
    thinner tables fall back to the stored characteristic momentum.
    """
    dt = _uniform_spacing(table.t_values, "t")
    d = table.d
    use_fd_x = d == 1 and table.xbar_values.shape[0] >= 5
    dx = None
    if use_fd_x:
        dx = _uniform_spacing(table.xbar_values[:, 0], "xbar")
    worst = 0.0
    checked = 0
    for k in range(table.nu_values.size):
        xib = table.xibar_center.copy()
        xib[-1] = table.nu_values[k]
        for i in range(2, table.t_values.size - 2):
            for j in range(table.xbar_values.shape[0]):
                if use_fd_x and not 2 <= j < table.xbar_values.shape[0] - 2:
                    continue
                window_t = table.values[k, i - 2 : i + 3, j]
                if table.caustic[k, i - 2 : i + 3, j].any() or np.isnan(window_t).any():
                    continue
                if use_fd_x:
                    window_x = table.values[k, i, j - 2 : j + 3]
                    if table.caustic[k, i, j - 2 : j + 3].any() or np.isnan(window_x).any():
                        continue
                    grad_x = np.array([float(_D1 @ window_x) / dx])
                else:
                    grad_x = table.momenta[k, i, j]
                    if np.isnan(grad_x).any():
                        continue
                dphi_dt = float(_D1 @ window_t) / dt
                x_full = [float(table.t_values[i])] + [float(v) for v in table.xbar_values[j]]
                a_val = a.jet(x_full, [float(v) for v in grad_x], 0).value
                worst = max(worst, abs(dphi_dt - a_val))
                checked += 1
    if checked == 0:
        raise EikonalError("no interior non-caustic nodes to check")
    return worst


# ---------------------------------------------------------------------------
# fold quantities


def phase_fold_quantities_closed(a, base_x: Sequence[float], base_xibar: Sequence[float]):
    """(d3_tnn, d3_ttn) from second jets of a at a normalized base point."""
    n = a.n
    d = n - 1
    jet = a.jet(list(base_x), list(base_xibar), 2)
    grad_xibar = jet.gradient[n:]
    if np.max(np.abs(grad_xibar)) > 1e-8:
        raise NormalizationError(
            f"d_xibar a = {grad_xibar.tolist()} at the base point; adapted coordinates "
            "require it to vanish (|.| <= 1e-8)"
        )
    m = 2 * n - 1
    d3_tnn = float(jet.hessian[m - 1, m - 1])
    d3_ttn = float(jet.hessian[0, m - 1])
    for j in range(d):
        d3_ttn += float(jet.hessian[n + j, m - 1] * jet.gradient[1 + j])
    return d3_tnn, d3_ttn


def phase_fold_quantities_numeric(table: PhaseTable, base_xbar=None):
    """(d3_tnn, d3_ttn) by 5-point stencils in (t, nu) at the base node."""
    dt = _uniform_spacing(table.t_values, "t")
    dnu = _uniform_spacing(table.nu_values, "nu")
    it = int(np.argmin(np.abs(table.t_values)))
    if abs(table.t_values[it]) > 1e-12:
        raise EikonalError("t grid must contain t = 0")
    if base_xbar is None:
        jx = 0
    else:
        jx = int(np.argmin(np.linalg.norm(table.xbar_values - np.asarray(base_xbar), axis=1)))
    ik = int(np.argmin(np.abs(table.nu_values - table.xibar_center[-1])))
    if not (2 <= it < table.t_values.size - 2 and 2 <= ik < table.nu_values.size - 2):
        raise EikonalError("insufficient stencil around the base point")
    window = table.values[ik - 2 : ik + 3, it - 2 : it + 3, jx]
    if table.caustic[ik - 2 : ik + 3, it - 2 : it + 3, jx].any() or np.isnan(window).any():
        raise EikonalError("caustic or failed nodes inside the differentiation stencil")
    # d3_tnn: second derivative in nu, then first in t
    d2nu_at_t = _D2 @ window / dnu**2          # (5,) over t offsets
    d3_tnn = float(_D1 @ d2nu_at_t) / dt
    # d3_ttn: first derivative in nu, then second in t
    d1nu_at_t = _D1 @ window / dnu
    d3_ttn = float(_D2 @ d1nu_at_t) / dt**2
    return d3_tnn, d3_ttn


# ---------------------------------------------------------------------------
# fold classification


@dataclass(frozen=True)
class MapJet:
    """First-order data of a map F: R^d -> R^d plus the gradient of det dF."""

    dF: np.ndarray
    det_gradient: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dF", np.asarray(self.dF, dtype=float))
        object.__setattr__(self, "det_gradient", np.asarray(self.det_gradient, dtype=float))
        dd = self.dF.shape
        if len(dd) != 2 or dd[0] != dd[1] or self.det_gradient.shape != (dd[0],):
            raise ValueError("dF must be square and det_gradient of matching length")


@dataclass(frozen=True)
class MapClassification:
    kind: str                 # Nondegenerate | Fold | Degenerate
    det: float
    transversality: Optional[float] = None
    reason: str = ""

    def to_dict(self):
        return {
            "kind": self.kind,
            "det": self.det,
            "transversality": self.transversality,
            "reason": self.reason,
        }


def classify_fold_map(jet: MapJet, threshold: float = FOLD_THRESHOLD) -> MapClassification:
    """Classify a map point as Nondegenerate, Fold or Degenerate.

    Fold means: dF has rank d-1, and the determinant varies transversally
    along the kernel direction, |D_v det dF| > threshold.
    """
    d = jet.dF.shape[0]
    det = float(np.linalg.det(jet.dF))
    if abs(det) > threshold:
        return MapClassification("Nondegenerate", det)
    svals = np.linalg.svd(jet.dF, compute_uv=False)
    scale = max(1.0, float(svals[0]))
    rank = int(np.sum(svals > threshold * scale))
    if rank < d - 1:
        return MapClassification("Degenerate", det, None, f"rank {rank} < d - 1")
    _, _, vt = np.linalg.svd(jet.dF)
    kernel = vt[-1]
    dv = float(np.dot(kernel, jet.det_gradient))
    if abs(dv) > threshold:
        return MapClassification("Fold", det, dv)
    return MapClassification("Degenerate", det, dv, "det dF vanishes to higher order")


def classify_projections(d3_tnn: float, d3_ttn: float, threshold: float = FOLD_THRESHOLD):
    """(pi_L, pi_R) classification from the two decisive third derivatives."""
    pi_l = "Fold" if abs(d3_tnn) > threshold else "Degenerate"
    pi_r = "Fold" if abs(d3_ttn) > threshold else "Degenerate"
    return pi_l, pi_r


@dataclass(frozen=True)
class FoldReport:
    base_x: list
    base_xibar: list
    d3_tnn: float
    d3_ttn: float
    e0: float
    rddot_from_phase: float
    pi_left: str
    pi_right: str
    d3_tnn_numeric: Optional[float] = None
    d3_ttn_numeric: Optional[float] = None
    methods: tuple = ("closed-form",)
    threshold: float = FOLD_THRESHOLD

    def to_dict(self):
        return {
            "base_point": {"x": self.base_x, "xibar": self.base_xibar},
            "d3_tnn": self.d3_tnn,
            "d3_ttn": self.d3_ttn,
            "e0": self.e0,
            "rddot_from_phase": self.rddot_from_phase,
            "pi_left": self.pi_left,
            "pi_right": self.pi_right,
            "d3_tnn_numeric": self.d3_tnn_numeric,
            "d3_ttn_numeric": self.d3_ttn_numeric,
            "methods": list(self.methods),
            "threshold": self.threshold,
        }


def fold_report(
    a,
    base_x: Sequence[float],
    base_xibar: Sequence[float],
    threshold: float = FOLD_THRESHOLD,
    numeric: bool = True,
    stencil: float = DEFAULT_STENCIL,
    tol: float = DEFAULT_ODE_TOL,
) -> FoldReport:
    """Full fold classification at a base point, closed-form first, with the
    numeric Hamilton-Jacobi route alongside when requested."""
    if abs(float(base_x[0])) > 1e-12:
        raise NormalizationError("base point must lie on the initial surface t = 0")
    d3_tnn, d3_ttn = phase_fold_quantities_closed(a, base_x, base_xibar)
    e0 = a.e0(list(base_x), list(base_xibar))
    pi_l, pi_r = classify_projections(d3_tnn, d3_ttn, threshold)
    num_tnn = num_ttn = None
    methods = ("closed-form",)
    if numeric:
        offsets = stencil * np.arange(-2, 3)
        table = solve_phase(
            a,
            base_xibar,
            t_values=offsets,
            xbar_values=[list(base_x)[1:]],
            nu_values=base_xibar[-1] + offsets,
            tol=tol,
        )
        num_tnn, num_ttn = phase_fold_quantities_numeric(table, base_xbar=list(base_x)[1:])
        methods = ("closed-form", "numeric-HJ")
    return FoldReport(
        base_x=[float(v) for v in base_x],
        base_xibar=[float(v) for v in base_xibar],
        d3_tnn=d3_tnn,
        d3_ttn=d3_ttn,
        e0=e0,
        rddot_from_phase=-e0 * d3_ttn,
        pi_left=pi_l,
        pi_right=pi_r,
        d3_tnn_numeric=num_tnn,
        d3_ttn_numeric=num_ttn,
        methods=methods,
        threshold=threshold,
    )


def oscillatory_phase_projections(psi: SymbolFn, x: float, y: float):
    """Map jets of the projections of the canonical relation of e^{i lambda psi(x,y)}
    in one input and one output dimension.

    pi_L(x, y) = (x, psi_x) and pi_R(x, y) = (y, psi_y) (sign dropped), so both
    determinants reduce to psi_xy up to sign.
    """
    if psi.nvars != 2:
        raise ValueError("psi must be a function of exactly two variables")
    jet = jet_of_callable(psi.eval_env, [float(x), float(y)], 3)
    h, t = jet.hessian, jet.third
    left = MapJet(
        np.array([[1.0, 0.0], [h[0, 0], h[0, 1]]]),
        np.array([t[0, 1, 0], t[0, 1, 1]]),
    )
    right = MapJet(
        np.array([[0.0, 1.0], [h[1, 0], h[1, 1]]]),
        np.array([-t[1, 0, 0], -t[1, 0, 1]]),
    )
    return left, right
