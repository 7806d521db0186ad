"""Restriction exponents and the explicit Airy-type saturating quasimode.

The exponent formulas (p >= 2, n >= 2):

    delta(n, p)  = (n-1)/2 - (n-1)/p          for 2n/(n-1) <= p <= inf
                 = (n-1)/4 - (n-2)/(2p)       for 2 <= p <= 2n/(n-1)
    dtilde(n, p) = (n-1)/3 - (2n-3)/(3p)      for 2 <= p <= 2n/(n-1),
                   absent above the breakpoint (concentration at points wins
                   there and curvature cannot help).

The model quasimode is built on the Fourier side,

    f(tau, eta', nu) = h^{-(n-2)/6 - 1/3} chi(|nu|) chi(h^{-2/3}|tau|)
                       chi(h^{-1/3}|eta'|) e^{i psi / h},
    psi = nu (tau - |eta'|^2) - nu^3 / 3,

which the operator tau - h D_nu - nu^2 - eta'.eta' annihilates exactly up to
the h chi'(|nu|) cutoff term.  (The cubic carries the opposite sign from the
nu^2 coefficient so that the displayed operator, with D = -i d/dnu, kills the
uncut phase identically; the mirrored profile has the same concentration.)
Physical-side restricted values are computed by direct oscillatory
quadrature on the concentration patch [0, eps h^{1/3}] x B(0, eps h^{2/3}),
which is far below the resolution of any global inverse-FFT grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .cutoff import bump, chi
from .oscillatory import Axis, GridFn, ResolutionError, ScalingFit, scaling_fit, semiclassical_ft

__all__ = [
    "chi",
    "bump",
    "exponents",
    "QuasimodeBundle",
    "MemoryBudgetError",
    "build_model_quasimode",
    "fourier_side_residual",
    "fourier_residual",
    "restriction_slice",
    "restrict_and_norm",
    "h_scaling_experiment",
    "QuasimodeExperiment",
    "experiment_to_csv",
]


def exponents(n: int, p: float):
    """(delta, delta_tilde) for L^p restriction to a hypersurface; the curved
    improvement delta_tilde is None for p past the breakpoint 2n/(n-1)."""
    if not (isinstance(n, (int, np.integer)) and n >= 2):
        raise ValueError("n must be an integer >= 2")
    p = float(p)
    if not p >= 2.0:
        raise ValueError("p must satisfy 2 <= p <= inf")
    inv_p = 0.0 if math.isinf(p) else 1.0 / p
    breakpoint_p = 2.0 * n / (n - 1.0)
    if p >= breakpoint_p:
        delta = (n - 1.0) / 2.0 - (n - 1.0) * inv_p
    else:
        delta = (n - 1.0) / 4.0 - (n - 2.0) * inv_p / 2.0
    delta_tilde = None
    if p <= breakpoint_p:
        delta_tilde = (n - 1.0) / 3.0 - (2.0 * n - 3.0) * inv_p / 3.0
    return delta, delta_tilde


class MemoryBudgetError(MemoryError):
    """The requested h needs more grid memory than the configured budget."""


@dataclass(frozen=True)
class ConcentrationRegion:
    """[t_min, t_max] x B(0, y_radius) on the hypersurface slice r = 0."""

    t_min: float
    t_max: float
    y_radius: Optional[float] = None

    def to_dict(self):
        return {"t_min": self.t_min, "t_max": self.t_max, "y_radius": self.y_radius}


@dataclass(frozen=True)
class QuasimodeBundle:
    n: int
    h: float
    epsilon: float
    f: GridFn                      # Fourier side, axes (tau, eta'..., nu)
    u: GridFn                      # physical side, axes (t, y'..., r)
    region: ConcentrationRegion
    f_l2: float
    u_l2: float
    residual: float

    @property
    def normalization(self) -> float:
        return self.h ** (-(self.n - 2) / 6.0 - 1.0 / 3.0)


def _budget_check(shape, budget_gb):
    cells = float(np.prod([float(s) for s in shape]))
    need = cells * 16.0 * 4.0  # f, u, fft workspace, residual temp
    if need > budget_gb * 2.0**30:
        raise MemoryBudgetError(
            f"grids of shape {tuple(int(s) for s in shape)} need ~{need / 2.0**30:.1f} GiB "
            f"(budget {budget_gb} GiB); raise the budget or use a larger h"
        )


def _axis_size(extent, rate, h, points_per_period, minimum=32):
    return max(minimum, int(np.ceil(extent * points_per_period * rate / (2.0 * np.pi * h))) + 1)


def build_model_quasimode(
    n: int,
    h: float,
    epsilon: float = 0.1,
    points_per_period: float = 6.0,
    nu_max: float = 2.5,
    tau_scale: float = 2.5,
    eta_scale: float = 2.5,
    memory_budget_gb: float = 4.0,
) -> QuasimodeBundle:
    """Construct the Fourier-side profile f and its physical-side u = chi(|x|) F_h^{-1} f.

    Grids satisfy the oscillation-resolution rule (>= points_per_period nodes
    per period of psi / h on every axis); too small an h for the memory
    budget raises MemoryBudgetError rather than degrading silently.
    """
    if not 0.0 < h < 1.0:
        raise ValueError("h must lie in (0, 1)")
    if n < 2:
        raise ValueError("n must be >= 2")
    tau_half = tau_scale * h ** (2.0 / 3.0)
    eta_half = eta_scale * h ** (1.0 / 3.0)

    # worst-case phase gradients of psi = nu (tau - |eta'|^2) - nu^3 / 3
    eta_sq_max = (n - 2) * eta_half**2
    rate_nu = tau_half + eta_sq_max + nu_max**2
    rate_tau = nu_max
    rate_eta = 2.0 * nu_max * eta_half

    n_nu = _axis_size(2 * nu_max, rate_nu, h, points_per_period)
    n_tau = _axis_size(2 * tau_half, rate_tau, h, points_per_period)
    n_eta = _axis_size(2 * eta_half, rate_eta, h, points_per_period) if n > 2 else None

    shape = (n_tau,) + (n_eta,) * (n - 2) + (n_nu,)
    _budget_check(shape, memory_budget_gb)

    axes = []
    coords = []
    for name, size, half in (
        [("tau", n_tau, tau_half)]
        + [(f"eta{i}", n_eta, eta_half) for i in range(1, n - 1)]
        + [("nu", n_nu, nu_max)]
    ):
        spacing = 2.0 * half / size
        origin = -(size // 2) * spacing
        axes.append(Axis(origin, spacing, kind="frequency", name=name))
        coords.append(origin + spacing * np.arange(size))

    grids = np.meshgrid(*coords, indexing="ij")
    tau = grids[0]
    nu = grids[-1]
    eta_sq = sum(g**2 for g in grids[1:-1]) if n > 2 else 0.0
    psi = nu * (tau - eta_sq) - nu**3 / 3.0

    amp = chi(np.abs(nu)) * chi(np.abs(tau) / h ** (2.0 / 3.0))
    if n > 2:
        amp = amp * chi(np.sqrt(eta_sq) / h ** (1.0 / 3.0))
    norm_const = h ** (-(n - 2) / 6.0 - 1.0 / 3.0)
    f_vals = norm_const * amp * np.exp(1j * psi / h)
    f = GridFn(f_vals, tuple(axes))

    u = semiclassical_ft(f, h, "inverse")
    phys = np.meshgrid(*[u.coords(k) for k in range(u.ndim)], indexing="ij")
    radius = np.sqrt(sum(g**2 for g in phys))
    u = GridFn(u.values * chi(radius), u.axes)

    region = ConcentrationRegion(
        0.0,
        epsilon * h ** (1.0 / 3.0),
        epsilon * h ** (2.0 / 3.0) if n > 2 else None,
    )
    residual = fourier_side_residual(f, h)
    return QuasimodeBundle(
        n=n,
        h=h,
        epsilon=epsilon,
        f=f,
        u=u,
        region=region,
        f_l2=f.l2_norm(),
        u_l2=u.l2_norm(),
        residual=residual,
    )


def fourier_side_residual(f: GridFn, h: float, mask: Optional[np.ndarray] = None) -> float:
    """|| (tau - h D_nu - nu^2 - eta'.eta') f ||_2 with spectral D_nu.

    The nu axis is the last one; data must vanish near its ends so the
    periodic spectral derivative is exact.
    """
    k = f.ndim - 1
    nu_axis = f.axes[k]
    size = f.values.shape[k]
    if size < 8:
        raise ResolutionError("nu axis too small to differentiate")
    coords = [f.coords(i) for i in range(f.ndim)]
    grids = np.meshgrid(*coords, indexing="ij")
    tau = grids[0]
    nu = grids[-1]
    eta_sq = sum(g**2 for g in grids[1:-1]) if f.ndim > 2 else 0.0
    freqs = 2.0j * np.pi * np.fft.fftfreq(size, d=nu_axis.spacing)
    shape = [1] * f.ndim
    shape[k] = size
    d_nu = np.fft.ifft(np.fft.fft(f.values, axis=k) * freqs.reshape(shape), axis=k)
    out = (tau - nu**2 - eta_sq) * f.values + 1j * h * d_nu  # -h D_nu = ih d/dnu
    if mask is not None:
        out = out * mask
    return float(np.sqrt(f.cell_volume * np.sum(np.abs(out) ** 2)))


def fourier_residual(bundle: QuasimodeBundle) -> float:
    return fourier_side_residual(bundle.f, bundle.h)


def restriction_slice(bundle: QuasimodeBundle, points: int = 129) -> GridFn:
    """R_H u sampled densely on the concentration patch of the slice r = 0,
    by direct oscillatory quadrature over the compact Fourier support."""
    n, h = bundle.n, bundle.h
    reg = bundle.region
    f = bundle.f
    coords = [f.coords(k) for k in range(f.ndim)]
    tau = coords[0]
    dvol = f.cell_volume
    t_nodes = np.linspace(reg.t_min, reg.t_max, points)
    pref = (2.0 * np.pi * h) ** (-n / 2.0)
    if n == 2:
        col = f.values.sum(axis=1) * f.axes[1].spacing          # integrate out nu
        wave = np.exp(1j * np.outer(t_nodes, tau) / h)
        vals = pref * (wave @ (col * f.axes[0].spacing))
        vals *= chi(np.abs(t_nodes))
        axis = Axis(t_nodes[0], t_nodes[1] - t_nodes[0], kind="physical", name="t")
        return GridFn(vals, (axis,))
    if n == 3:
        y_nodes = np.linspace(-reg.y_radius, reg.y_radius, points)
        eta = coords[1]
        col = f.values.sum(axis=2) * f.axes[2].spacing          # (tau, eta)
        wave_t = np.exp(1j * np.outer(t_nodes, tau) / h) * f.axes[0].spacing
        wave_y = np.exp(1j * np.outer(eta, y_nodes) / h) * f.axes[1].spacing
        vals = pref * (wave_t @ col @ wave_y)
        T, Y = np.meshgrid(t_nodes, y_nodes, indexing="ij")
        vals *= chi(np.sqrt(T**2 + Y**2))
        ax_t = Axis(t_nodes[0], t_nodes[1] - t_nodes[0], kind="physical", name="t")
        ax_y = Axis(y_nodes[0], y_nodes[1] - y_nodes[0], kind="physical", name="y1")
        return GridFn(vals, (ax_t, ax_y))
    raise NotImplementedError("restriction quadrature implemented for n = 2 and n = 3")


def restrict_and_norm(
    u: GridFn,
    p: float,
    region: Optional[ConcentrationRegion] = None,
    slice_axis: str = "r",
) -> float:
    """L^p norm of u restricted to the node plane ``slice_axis`` = 0, over the
    region; u without that axis is treated as already restricted.

    p = inf is the max modulus over the region.
    """
    names = [ax.name for ax in u.axes]
    values = u.values
    axes = list(u.axes)
    if slice_axis in names:
        k = names.index(slice_axis)
        coord = u.coords(k)
        j = int(np.argmin(np.abs(coord)))
        if abs(coord[j]) > 1e-9 * max(1.0, abs(coord[-1] - coord[0])):
            raise ValueError(f"slice {slice_axis} = 0 does not lie on the grid")
        values = np.take(values, j, axis=k)
        axes.pop(k)
    if values.ndim == 0:
        raise ValueError("nothing left to integrate after slicing")

    coords = [ax.coords(s) for ax, s in zip(axes, values.shape)]
    mask = np.ones(values.shape, dtype=bool)
    if region is not None:
        t = coords[0]
        tmask = (t >= region.t_min - 1e-15) & (t <= region.t_max + 1e-15)
        mask &= tmask.reshape([-1] + [1] * (values.ndim - 1))
        if region.y_radius is not None and values.ndim > 1:
            ys = np.meshgrid(*coords[1:], indexing="ij")
            ball = np.sqrt(sum(y**2 for y in ys)) <= region.y_radius + 1e-15
            mask &= ball[None, ...]
    if not mask.any():
        raise ValueError("empty region on the slice")
    cell = float(np.prod([ax.spacing for ax in axes]))
    picked = np.abs(values[mask])
    if math.isinf(p):
        return float(picked.max())
    return float((np.sum(picked**p) * cell) ** (1.0 / p))


@dataclass(frozen=True)
class QuasimodeExperiment:
    n: int
    epsilon: float
    rows: list                         # dicts: h, p, restricted_norm, u_l2, f_l2, residual
    fits: dict                         # p -> ScalingFit against -delta_tilde(n, p)
    residual_slope: float
    ceiling_constant: float            # max over samples of ||R_H u||_2 sqrt(h) / ||u||_2
    l2_slope: float

    def to_dict(self):
        return {
            "n": self.n,
            "epsilon": self.epsilon,
            "rows": self.rows,
            "fits": {str(p): fit.to_dict() for p, fit in self.fits.items()},
            "residual_slope": self.residual_slope,
            "ceiling_constant": self.ceiling_constant,
            "l2_slope": self.l2_slope,
        }


def h_scaling_experiment(
    n: int,
    p_values: Sequence[float],
    h_values: Sequence[float],
    epsilon: float = 0.1,
    margin: float = 0.05,
    slice_points: int = 129,
    memory_budget_gb: float = 4.0,
) -> QuasimodeExperiment:
    """Build bundles per h, measure restricted L^p norms on the concentration
    region, and fit slopes against the curved-hypersurface targets."""
    h_values = [float(h) for h in h_values]
    if len(h_values) < 4:
        raise ValueError("need at least 4 rungs in the h ladder")
    rung_results = map_rungs(
        quasimode_rung,
        [(n, h, tuple(p_values), epsilon, slice_points, memory_budget_gb) for h in h_values],
    )
    rows = []
    norms = {p: [] for p in p_values}
    l2_samples = []
    residuals = []
    for h, result in zip(h_values, rung_results):
        for p in p_values:
            norms[p].append((h, result["norms"][p]))
        rows.extend(result["rows"])
        l2_samples.append((h, result["norm2"], result["u_l2"]))
        residuals.append((h, result["residual"]))
    fits = {}
    for p in p_values:
        target = -exponents(n, p)[1]
        fits[p] = scaling_fit(norms[p], target, margin)
    residual_slope = scaling_fit(residuals, 1.0, 10.0).slope
    ceiling = max(norm2 * math.sqrt(h) / ul2 for h, norm2, ul2 in l2_samples)
    l2_slope = scaling_fit([(h, v) for h, v, _ in l2_samples], -1.0 / 6.0, 10.0).slope
    return QuasimodeExperiment(
        n=n,
        epsilon=epsilon,
        rows=rows,
        fits=fits,
        residual_slope=residual_slope,
        ceiling_constant=ceiling,
        l2_slope=l2_slope,
    )


def experiment_to_csv(exp: QuasimodeExperiment, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["h", "p", "restricted_norm", "u_l2", "f_l2", "residual"])
        for row in exp.rows:
            writer.writerow(
                [repr(row["h"]), repr(row["p"]), repr(row["restricted_norm"]),
                 repr(row["u_l2"]), repr(row["f_l2"]), repr(row["residual"])]
            )
