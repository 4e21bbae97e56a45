"""Heat equation ``d_t u + L u = L f``: semigroup, Duhamel formula, residuals.

The forced problem with ``u(0) = 0`` is solved pointwise by the Duhamel
integral written in the self-similar variable ``z = y tau^{-1/sigma}``::

    u(x, t) = int_0^t dtau/tau int L Phi(z) [f(x - tau^{1/sigma} z, t - tau) - f(x, t)] dz.

Subtracting ``f(x, t)`` is free because ``L P(., tau)`` has zero integral,
and it turns the singular integral into an absolutely convergent one for
Hoelder ``f``. A periodic exponential integrator covers whole grids.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import fft as sfft
from scipy.ndimage import map_coordinates

from ._numerics import composite_gauss, fft_workers, irfftn, loglog_slope, rfftn
from .errors import PVNotStabilizedError, ValidationError
from .fields import SpaceTimeField
from .kernel import GridProfile, KernelProfile, SpatialGrid
from .sigma_geometry import sigma_distance
from .symbol import SymbolField

__all__ = [
    "SpaceTimeField",
    "Forcing",
    "named_forcing",
    "forcing_from_field",
    "PvParams",
    "BumpTestFunction",
    "apply_operator",
    "carre_du_champ",
    "solve_homogeneous",
    "smoothing_exponent",
    "smoothing_bound_exponent",
    "solve_forced",
    "solve_forced_spectral",
    "excised_ball_constant",
    "very_weak_residual",
    "lp_norm",
]

INF = math.inf


# ----------------------------------------------------------------------
# spectral operator application

_MULTIPLIER_CACHE: "weakref.WeakKeyDictionary[SymbolField, dict]" = weakref.WeakKeyDictionary()


def _multiplier(symbol: SymbolField, grid: SpatialGrid) -> np.ndarray:
    per = _MULTIPLIER_CACHE.setdefault(symbol, {})
    key = (grid.dimension, grid.n, grid.half_width)
    if key not in per:
        if grid.dimension != symbol.dimension:
            raise ValidationError(
                f"grid dimension {grid.dimension} differs from symbol dimension {symbol.dimension}"
            )
        m = symbol.m_on_axes(grid.frequency_axes())
        m.setflags(write=False)
        per[key] = m
    return per[key]


def _spectral(symbol_or_m, field: np.ndarray, grid: SpatialGrid, fn: Callable) -> np.ndarray:
    m = symbol_or_m if isinstance(symbol_or_m, np.ndarray) else _multiplier(symbol_or_m, grid)
    f = np.asarray(field, dtype=float)
    if f.shape[-grid.dimension :] != grid.shape:
        raise ValidationError(f"field shape {f.shape} does not end with grid shape {grid.shape}")
    axes = tuple(range(f.ndim - grid.dimension, f.ndim))
    spec = sfft.rfftn(f, axes=axes, workers=fft_workers())
    return sfft.irfftn(fn(m) * spec, s=grid.shape, axes=axes, workers=fft_workers())


def apply_operator(symbol: SymbolField, field: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """``L field`` on the periodic ``grid`` as the inverse transform of ``m * field^``.

    Leading axes of ``field`` beyond the grid shape are treated as a batch.
    """
    return _spectral(symbol, field, grid, lambda m: m)


def carre_du_champ(symbol: SymbolField, v: np.ndarray, w: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Bilinear form ``E(v, w) = v L w + w L v - L(v w)``."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if v.shape != w.shape:
        raise ValidationError("v and w must share the grid")
    Lv, Lw, Lvw = apply_operator(symbol, np.stack([v, w, v * w]), grid)
    return v * Lw + w * Lv - Lvw


# ----------------------------------------------------------------------
# homogeneous problem


def _grid_of(profile) -> GridProfile:
    if not isinstance(profile, GridProfile):
        raise ValidationError("a grid-synthesized profile is required for spectral solves")
    return profile


def solve_homogeneous(profile: GridProfile, u0: np.ndarray, times: Sequence[float]) -> SpaceTimeField:
    """``u(t) = P(t) * u0`` computed spectrally as ``F^{-1}[exp(-t m) u0^]``.

    Parameters
    ----------
    profile : GridProfile
        Supplies the grid and the tabulated multiplier.
    u0 : ndarray
        Initial datum on ``profile.grid``.
    times : sequence of float
        Strictly increasing positive times.
    """
    prof = _grid_of(profile)
    grid = prof.grid
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != grid.shape:
        raise ValidationError(f"u0 shape {u0.shape} != grid shape {grid.shape}")
    times = np.asarray(times, dtype=float).reshape(-1)
    if times.size == 0 or np.any(times <= 0):
        raise ValidationError("times must be positive")
    m = prof.multiplier
    spec = rfftn(u0)
    vals = np.stack([irfftn(np.exp(-t * m) * spec, grid.shape) for t in times])
    return SpaceTimeField(grid, times, vals, prof.sigma, "solution")


def lp_norm(values: np.ndarray, cell_volume: float, q: float) -> float:
    """Discrete ``L^q`` norm; ``q = inf`` gives the max norm."""
    a = np.abs(values)
    if math.isinf(q):
        return float(a.max())
    return float((np.sum(a**q) * cell_volume) ** (1.0 / q))


def _norm_index(p) -> float:
    if isinstance(p, str):
        if p.lower() in ("inf", "infinity", "max"):
            return INF
        raise ValidationError(f"unknown norm index {p!r}")
    p = float(p)
    if not p >= 1:
        raise ValidationError(f"norm index must be >= 1, got {p!r}")
    return p


def smoothing_bound_exponent(dimension: int, sigma: float, p, q) -> float:
    """Exponent ``-(N/sigma)(1/p - 1/q)`` of the L^p -> L^q smoothing bound."""
    p, q = _norm_index(p), _norm_index(q)
    return -(dimension / sigma) * ((0.0 if math.isinf(p) else 1.0 / p) - (0.0 if math.isinf(q) else 1.0 / q))


def smoothing_exponent(profile: GridProfile, u0: np.ndarray, p, q, times: Sequence[float]) -> float:
    """Fitted log-log slope of ``||u(t)||_q`` over ``times``.

    ``p`` names the datum's norm and is only validated (``1 <= p <= q``);
    pass ``"inf"`` or ``math.inf`` for the max norm.
    """
    p, q = _norm_index(p), _norm_index(q)
    if p > q:
        raise ValidationError(f"need p <= q, got p={p}, q={q}")
    sol = solve_homogeneous(profile, u0, times)
    norms = np.array([lp_norm(v, sol.grid.cell_volume, q) for v in sol.values])
    return loglog_slope(sol.times, norms)


# ----------------------------------------------------------------------
# forcings


@dataclass(frozen=True, eq=False)
class Forcing:
    """Closed-form forcing ``f(x, t)``.

    Parameters
    ----------
    func : callable
        ``func(x, t)`` with ``x`` of shape (..., N) and ``t`` broadcastable
        to the leading shape; returns shape (...).
    dimension : int
    scale : float
        Spatial length over which ``f`` varies; sets quadrature resolution.
    time_scale : float
        Temporal counterpart (``inf`` for time-independent data).
    far_mean : float
        Average of ``f`` far from any target, used beyond the resolved region.
    holder : tuple of float, optional
        Declared ``(alpha, seminorm)``.
    name : str
    params : dict
    """

    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dimension: int
    scale: float
    time_scale: float = INF
    far_mean: float = 0.0
    holder: tuple[float, float] | None = None
    name: str = "callable"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.scale > 0:
            raise ValidationError(f"forcing scale must be positive, got {self.scale!r}")
        if not self.time_scale > 0:
            raise ValidationError(f"forcing time_scale must be positive, got {self.time_scale!r}")

    def __call__(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.func(x, np.asarray(t, dtype=float)), dtype=float) * np.ones(x.shape[:-1])

    def __add__(self, other: "Forcing") -> "Forcing":
        if other.dimension != self.dimension:
            raise ValidationError("forcings of different dimensions")
        f, g = self.func, other.func
        return Forcing(
            lambda x, t: f(x, t) + g(x, t),
            self.dimension,
            min(self.scale, other.scale),
            min(self.time_scale, other.time_scale),
            self.far_mean + other.far_mean,
            None,
            f"{self.name}+{other.name}",
        )

    def scaled(self, c: float) -> "Forcing":
        f = self.func
        holder = None if self.holder is None else (self.holder[0], abs(c) * self.holder[1])
        return replace(self, func=lambda x, t: c * f(x, t), far_mean=c * self.far_mean, holder=holder)

    def plus_constant(self, c: float) -> "Forcing":
        f = self.func
        return replace(self, func=lambda x, t: f(x, t) + c, far_mean=self.far_mean + c)

    def shifted(self, dx) -> "Forcing":
        """``x -> f(x - dx, t)``."""
        d = np.asarray(dx, dtype=float).reshape(self.dimension)
        f = self.func
        return replace(self, func=lambda x, t: f(x - d, t))

    def dilated(self, lam: float, sigma: float) -> "Forcing":
        """``(x, t) -> f(lam x, lam^sigma t)``."""
        lam = float(lam)
        f = self.func
        s = lam**sigma
        return replace(
            self,
            func=lambda x, t: f(lam * x, s * t),
            scale=self.scale / lam,
            time_scale=self.time_scale / s,
        )

    def sample(self, grid: SpatialGrid, times, sigma: float, provenance: str = "forcing") -> SpaceTimeField:
        times = np.asarray(times, dtype=float).reshape(-1)
        pts = grid.points()
        vals = np.stack([self(pts, t).reshape(grid.shape) for t in times])
        return SpaceTimeField(grid, times, vals, sigma, provenance, holder=self.holder)


def named_forcing(name: str, dimension: int, sigma: float | None = None, **params) -> Forcing:
    """Built-in forcings.

    ``"gaussian-bump"``
        ``amplitude * exp(-|x - center|^2 / (2 width^2))``, time independent.
    ``"sin-traveling"``
        ``amplitude * sin(k . x - omega t + phase)``.
    ``"holder-cusp"``
        ``amplitude * min(|Y - Y_c|_sigma, radius)^alpha`` with
        ``Y_c = (center, t_center)``; constant beyond ``radius``.
    """
    dim = int(dimension)
    amp = float(params.get("amplitude", 1.0))

    def vec(key, default):
        v = np.asarray(params.get(key, default), dtype=float).reshape(-1)
        if v.size == 1 and dim > 1:
            v = np.full(dim, v[0])
        if v.size != dim:
            raise ValidationError(f"forcing.{key}: expected {dim} components")
        return v

    if name == "gaussian-bump":
        c = vec("center", 0.0)
        w = float(params.get("width", 1.0))
        if not w > 0:
            raise ValidationError("forcing.width: must be positive")

        def f(x, t):
            d = x - c
            return amp * np.exp(-np.sum(d * d, axis=-1) / (2.0 * w * w))

        return Forcing(f, dim, w, INF, 0.0, None, name, dict(params))
    if name == "sin-traveling":
        k = vec("wavevector", 1.0)
        om = float(params.get("omega", 1.0))
        ph = float(params.get("phase", 0.0))
        kn = float(np.linalg.norm(k))
        if kn == 0:
            raise ValidationError("forcing.wavevector: must be nonzero")

        def f(x, t):
            return amp * np.sin(x @ k - om * t + ph)

        ts = INF if om == 0 else 1.0 / abs(om)
        return Forcing(f, dim, 1.0 / kn, ts, 0.0, (1.0, abs(amp) * kn), name, dict(params))
    if name == "holder-cusp":
        if sigma is None:
            raise ValidationError("holder-cusp needs sigma")
        c = vec("center", 0.0)
        tc = float(params.get("t_center", 0.0))
        alpha = float(params.get("alpha", 0.5))
        R = float(params.get("radius", 1.0))
        if not 0 < alpha <= 1:
            raise ValidationError("forcing.alpha: must lie in (0, 1]")
        if not R > 0:
            raise ValidationError("forcing.radius: must be positive")
        sg = float(sigma)

        def f(x, t):
            d = sigma_distance(x, t, c, tc, sg)
            return amp * np.minimum(d, R) ** alpha

        return Forcing(f, dim, R / 4.0, (R / 4.0) ** sg, amp * R**alpha, (alpha, abs(amp)), name, dict(params))
    raise ValidationError(f"unknown forcing {name!r}; choose gaussian-bump, sin-traveling or holder-cusp")


def forcing_from_field(field_: SpaceTimeField, far_mean: float | None = None) -> Forcing:
    """Interpolating forcing for sampled data.

    Space is multilinear on the lattice (clamped at the box), time is
    piecewise linear (clamped at the ends). The declared Hoelder pair of the
    field is carried over, not re-verified.
    """
    g = field_.grid
    times = field_.times
    vals = field_.values
    if far_mean is None:
        edge = np.zeros(g.shape, dtype=bool)
        for j in range(g.dimension):
            sl = [slice(None)] * g.dimension
            sl[j] = [0, -1]
            edge[tuple(sl)] = True
        far_mean = float(vals[:, edge].mean())

    def f(x, t):
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        t = np.broadcast_to(np.asarray(t, dtype=float), lead).reshape(-1)
        idx = ((x.reshape(-1, g.dimension) + g.half_width) / g.h).T
        ti = np.interp(t, times, np.arange(times.size, dtype=float))
        coords = np.vstack([ti[None, :], idx])
        return map_coordinates(vals, coords, order=1, mode="nearest").reshape(lead)

    dt = float(np.min(np.diff(times))) if times.size > 1 else INF
    return Forcing(f, g.dimension, 2.0 * g.h, 2.0 * dt, far_mean, field_.holder, "sampled")


# ----------------------------------------------------------------------
# principal-value Duhamel solver


@dataclass(frozen=True)
class PvParams:
    """Quadrature and ladder settings of the Duhamel solver.

    Parameters
    ----------
    eps_ladder : tuple of float
        Decreasing exclusion radii, relative to ``t^{1/sigma}`` of each
        target, at which the excised integral is evaluated for the
        convergence diagnostic.
    gl_order : int
        Gauss-Legendre nodes per panel in every direction.
    tau_panels : int
        Dyadic time panels ``[t 2^{-k-1}, t 2^{-k}]``.
    tau_subdivisions : int
        Extra uniform split of each time panel.
    panel_fraction : float
        Spatial panels are at most ``panel_fraction * scale`` wide in the
        physical variable.
    near_cutoff : float, optional
        Radius in ``z`` beyond which ``L Phi`` is replaced by its tail
        ``-nu``; default ``min(L/16, trusted radius)`` of the profile.
    resolve_factor : float, optional
        Physical radius ``resolve_factor * scale`` beyond which ``f`` is
        replaced by its far mean; default 64 (N = 1) or 16.
    richardson : bool
        Evaluate the ladder and check the ratio of successive differences.
    diagnostic_targets : int
        Number of targets used for the ladder.
    ratio_window : tuple of float
    noise_floor : float
        Relative size below which ladder differences count as converged.
    """

    eps_ladder: tuple[float, ...] = (1 / 4, 1 / 8, 1 / 16, 1 / 32)
    gl_order: int = 8
    tau_panels: int = 48
    tau_subdivisions: int = 1
    panel_fraction: float = 0.5
    near_cutoff: float | None = None
    resolve_factor: float | None = None
    richardson: bool = True
    diagnostic_targets: int = 16
    ratio_window: tuple[float, float] = (0.2, 5.0)
    noise_floor: float = 1e-9
    far_directions: int = 256

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps_ladder)
        if len(eps) < 1 or any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValidationError("eps_ladder: must be strictly decreasing and positive")
        if eps[0] >= 1:
            raise ValidationError("eps_ladder: radii are relative to t^{1/sigma} and must be < 1")
        object.__setattr__(self, "eps_ladder", eps)
        if self.gl_order < 2 or self.tau_panels < 4 or self.tau_subdivisions < 1:
            raise ValidationError("gl_order >= 2, tau_panels >= 4 and tau_subdivisions >= 1 required")
        if not self.panel_fraction > 0:
            raise ValidationError("panel_fraction must be positive")

    def refined(self) -> "PvParams":
        """Twice the resolution in time and space."""
        return replace(
            self, tau_subdivisions=2 * self.tau_subdivisions, panel_fraction=0.5 * self.panel_fraction
        )


def _tau_rule(t: float, pv: PvParams, time_scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Dyadic panels graded toward tau = 0, split to resolve ``time_scale``."""
    K = pv.tau_panels
    hi = t * 2.0 ** -np.arange(K, dtype=float)
    edges = np.concatenate([hi[::-1] / 2.0, [t]])
    fine = []
    for a, b in zip(edges[:-1], edges[1:]):
        parts = pv.tau_subdivisions
        if math.isfinite(time_scale):
            parts *= max(1, math.ceil((b - a) / time_scale))
        fine.append(np.linspace(a, b, parts + 1)[:-1])
    fine.append([t])
    return composite_gauss(np.concatenate(fine), pv.gl_order)


def _near_edges(Z: float, cap: float) -> np.ndarray:
    """Symmetric panel edges on [-Z, Z]: width 0.5 near 0, growing 25%, capped."""
    right = [0.0]
    s = 0.0
    while s < Z:
        w = min(cap, max(0.5, 0.25 * s))
        s = min(Z, s + w)
        right.append(s)
    right = np.array(right)
    return np.concatenate([-right[:0:-1], right])


def _far_edges(r0: float, r1: float, cap: float) -> np.ndarray:
    """Edges on [r0, r1] growing geometrically (x2) but no wider than ``cap``."""
    edges = [r0]
    r = r0
    while r < r1:
        r = min(r1, r + min(cap, r))
        edges.append(r)
    return np.array(edges)


def _coarse_rule(symbol: SymbolField, max_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Measure rule with the density part merged into at most ``max_nodes`` directions."""
    mu = symbol.measure
    dirs = [mu.atom_directions]
    wts = [mu.atom_weights]
    if mu.has_density:
        nodes = mu.density_nodes
        w = mu.density_values * mu.quadrature_weights
        if nodes.shape[0] > max_nodes and mu.dimension == 2:
            ang = np.mod(np.arctan2(nodes[:, 1], nodes[:, 0]), 2 * math.pi)
            bins = np.minimum((ang / (2 * math.pi) * max_nodes).astype(int), max_nodes - 1)
            W = np.bincount(bins, w, max_nodes)
            C = np.stack([np.bincount(bins, w * nodes[:, j], max_nodes) for j in range(2)], axis=1)
            keep = W > 0
            C = C[keep] / np.linalg.norm(C[keep], axis=1, keepdims=True)
            nodes, w = C, W[keep]
        elif nodes.shape[0] > max_nodes and mu.dimension == 3:
            centers = _fib(max_nodes)
            bins = np.argmax(nodes @ centers.T, axis=1)
            W = np.bincount(bins, w, max_nodes)
            C = np.stack([np.bincount(bins, w * nodes[:, j], max_nodes) for j in range(3)], axis=1)
            keep = W > 0
            C = C[keep] / np.linalg.norm(C[keep], axis=1, keepdims=True)
            nodes, w = C, W[keep]
        dirs.append(nodes)
        wts.append(w)
    d = np.concatenate(dirs)
    w = np.concatenate(wts)
    keep = w > 0
    return d[keep], w[keep]


def _fib(n):
    from .spectral_measure import fibonacci_sphere

    return fibonacci_sphere(n)


class _Integrator:
    """Inner spatial integrals for one target time."""

    def __init__(self, profile: KernelProfile, forcing: Forcing, pv: PvParams):
        self.profile = profile
        self.forcing = forcing
        self.pv = pv
        self.sigma = profile.sigma
        self.N = profile.dimension
        self.S = pv.near_cutoff or min(profile.half_width / 16.0, profile.trusted_radius)
        rf = pv.resolve_factor or (64.0 if self.N == 1 else 16.0)
        self.Yres = rf * forcing.scale
        self.rule_dirs, self.rule_w = _coarse_rule(profile.symbol, pv.far_directions)
        self._lphi_cache: dict = {}

    def _cube(self, Z: float, cap: float):
        cap = min(cap, Z)  # panels never exceed 0.25 s <= Z, so larger caps coincide
        key = (round(Z, 12), round(cap, 12))
        hit = self._lphi_cache.get(key)
        if hit is not None:
            return hit
        z1, w1 = composite_gauss(_near_edges(Z, cap), self.pv.gl_order)
        if self.N == 1:
            z, w = z1[:, None], w1
        else:
            mesh = np.meshgrid(*([z1] * self.N), indexing="ij")
            z = np.stack([m.ravel() for m in mesh], axis=1)
            wm = np.meshgrid(*([w1] * self.N), indexing="ij")
            w = np.prod(np.stack([m.ravel() for m in wm]), axis=0)
        W = w * self.profile.evaluate("Lphi", z)
        if len(self._lphi_cache) > 256:
            self._lphi_cache.clear()
        self._lphi_cache[key] = (z, W)
        return z, W

    def _far(self, X, f0, t_src, r0_of, r1: float, cap: float):
        """``-int nu_sym (f - f0)`` over rays from ``r0_of(theta)`` to ``r1``."""
        sigma = self.sigma
        total = np.zeros(X.shape[0])
        for theta, wt in zip(self.rule_dirs, self.rule_w):
            r0 = r0_of(theta)
            if r0 >= r1:
                continue
            r, wr = composite_gauss(_far_edges(r0, r1, cap), self.pv.gl_order)
            kern = wt * wr * r ** (-1.0 - sigma)
            disp = r[:, None] * theta[None, :]
            fp = self.forcing(X[:, None, :] - disp[None], t_src)
            fm = self.forcing(X[:, None, :] + disp[None], t_src)
            total -= (0.5 * (fp + fm) - f0[:, None]) @ kern
        return total

    def full(self, X: np.ndarray, t: float, f0: np.ndarray, tau: float) -> np.ndarray:
        """``int L P(y, tau) [f(x - y, t - tau) - f(x, t)] dy`` for all targets."""
        sigma, pv = self.sigma, self.pv
        a = tau ** (1.0 / sigma)
        ell = self.forcing.scale
        Z = min(self.S, self.Yres / a)
        cap = max(pv.panel_fraction * ell / a, 1e-3)
        z, W = self._cube(Z, cap)
        t_src = t - tau
        fv = self.forcing(X[:, None, :] - a * z[None, :, :], t_src)
        near = ((fv - f0[:, None]) @ W) / tau
        if a * Z < self.Yres:
            far = self._far(
                X, f0, t_src, lambda th: a * Z / np.max(np.abs(th)), self.Yres, pv.panel_fraction * ell
            )
            # nu-mass of |y| > Yres; tau-independent, unlike the near-cube mass
            mass = -float(self.rule_w.sum()) * self.Yres ** (-self.sigma) / self.sigma
        else:
            far = 0.0
            # L Phi has zero integral, so the complement of the cube carries -sum(W)
            mass = -float(W.sum()) / tau
        outside = mass * (self.forcing.far_mean - f0)
        return near + far + outside

    def ball(self, X: np.ndarray, t: float, f0: np.ndarray, tau: float, rho: float) -> np.ndarray:
        """Same integrand restricted to ``|y| < rho``, in polar coordinates."""
        sigma, pv, N = self.sigma, self.pv, self.N
        if rho <= 0:
            return np.zeros(X.shape[0])
        a = tau ** (1.0 / sigma)
        ell = self.forcing.scale
        smax = min(rho / a, self.S)
        cap = max(pv.panel_fraction * ell / a, 1e-3)
        edges = _near_edges(smax, cap)
        s, ws = composite_gauss(edges[edges >= 0], pv.gl_order)
        if N == 1:
            theta, wth = np.array([[1.0], [-1.0]]), np.ones(2)
        elif N == 2:
            k = max(64, math.ceil(2 * math.pi * smax / 0.25))
            ang = 2 * math.pi * (np.arange(k) + 0.5) / k
            theta, wth = np.column_stack([np.cos(ang), np.sin(ang)]), np.full(k, 2 * math.pi / k)
        else:
            k = max(256, min(20000, math.ceil(4 * math.pi * smax**2 / 0.0625)))
            theta, wth = _fib(k), np.full(k, 4 * math.pi / k)
        z = (s[:, None, None] * theta[None, :, :]).reshape(-1, N)
        w = (ws[:, None] * s[:, None] ** (N - 1) * wth[None, :]).reshape(-1)
        W = w * self.profile.evaluate("Lphi", z)
        t_src = t - tau
        fv = self.forcing(X[:, None, :] - a * z[None, :, :], t_src)
        out = ((fv - f0[:, None]) @ W) / tau
        if a * smax < rho:
            far = self._far(X, f0, t_src, lambda th: a * smax, rho, pv.panel_fraction * ell)
            out = out + far
        return out


def _excised(integ: _Integrator, X, t, f0, eps_abs: float) -> np.ndarray:
    """``int_{B_eps, tau > 0} L P (f - f0)`` for all targets."""
    sigma = integ.sigma
    tmax = eps_abs**sigma
    K = 24
    left = tmax * 0.5 * 2.0 ** -np.arange(K, dtype=float)
    right = tmax - tmax * 0.5 * 2.0 ** -np.arange(K, dtype=float)
    edges = np.unique(np.concatenate([[0.0], left, right, [tmax]]))
    tau, wt = composite_gauss(edges, integ.pv.gl_order)
    total = np.zeros(X.shape[0])
    for tk, wk in zip(tau, wt):
        rho = math.sqrt(max(0.0, eps_abs**2 - tk ** (2.0 / sigma)))
        total += wk * integ.ball(X, t, f0, tk, rho)
    return total


def _targets_of(f, targets, times):
    if isinstance(f, SpaceTimeField):
        forcing = forcing_from_field(f)
        if targets is None:
            g = f.grid
            targets = SpatialGrid(g.dimension, max(2, g.n // 2), 0.5 * g.half_width)
        if times is None:
            times = f.times
        return forcing, targets, times
    if not isinstance(f, Forcing):
        raise ValidationError("forcing must be a Forcing or a SpaceTimeField")
    if targets is None or times is None:
        raise ValidationError("closed-form forcings need explicit targets and times")
    return f, targets, times


def solve_forced(
    profile: KernelProfile,
    f: Forcing | SpaceTimeField,
    pv: PvParams | None = None,
    targets: SpatialGrid | None = None,
    times: Sequence[float] | None = None,
    time_weights: Sequence[float] | None = None,
) -> SpaceTimeField:
    r"""Duhamel solution of ``d_t u + L u = L f``, ``u(0) = 0``, at target points.

    The integrand subtracts ``f(x, t)`` over the whole backward cone, which
    leaves the value unchanged because ``L P(., tau)`` integrates to zero. In
    ``z = y tau^{-1/sigma}`` the inner integral is a Gauss-Legendre cube on
    the tabulated ``L Phi`` up to ``near_cutoff``; beyond it ``L P`` is
    replaced by its tail ``-nu`` (the symmetrized Levy density) integrated
    along the measure's directions out to ``resolve_factor * scale``; the
    rest uses the far mean of ``f`` against the nu-mass of that region, so
    constant data give exactly zero. Time is graded dyadically toward
    the target.

    With ``pv.richardson`` the integral over the excised sigma-ball
    ``B_eps`` is evaluated on ``pv.eps_ladder`` for a subset of targets; the
    ratio of successive ladder differences must stay inside
    ``pv.ratio_window``.

    Parameters
    ----------
    profile : KernelProfile
    f : Forcing or SpaceTimeField
    pv : PvParams, optional
    targets : SpatialGrid, optional
        Default: the inner half-box of a sampled forcing's grid.
    times : sequence of float, optional
        Positive target times; default: the sampled forcing's times.
    time_weights : sequence of float, optional
        Attached to the output for later time integrals.

    Returns
    -------
    SpaceTimeField
        ``diagnostics`` holds the ladder differences and ratios.

    Raises
    ------
    PVNotStabilizedError
        If a ladder ratio leaves ``pv.ratio_window``.
    """
    pv = pv or PvParams()
    forcing, targets, times = _targets_of(f, targets, times)
    if forcing.dimension != profile.dimension or targets.dimension != profile.dimension:
        raise ValidationError("forcing, targets and profile dimensions differ")
    times = np.asarray(times, dtype=float).reshape(-1)
    if np.any(times <= 0):
        raise ValidationError("target times must be positive")
    X = targets.points()
    integ = _Integrator(profile, forcing, pv)
    out = np.empty((times.size, X.shape[0]))
    for i, t in enumerate(times):
        f0 = forcing(X, t)
        tau, wt = _tau_rule(t, pv, forcing.time_scale)
        acc = np.zeros(X.shape[0])
        for tk, wk in zip(tau, wt):
            acc += wk * integ.full(X, t, f0, tk)
        out[i] = acc
    diagnostics = {}
    if pv.richardson:
        diagnostics = _ladder(integ, X, times, out, pv)
    return SpaceTimeField(
        targets,
        times,
        out.reshape((times.size,) + targets.shape),
        profile.sigma,
        "solution",
        None if time_weights is None else np.asarray(time_weights, dtype=float),
        None,
        diagnostics,
    )


def _ladder(integ: _Integrator, X, times, U, pv: PvParams) -> dict:
    sigma = integ.sigma
    nt, nx = U.shape
    flat = [(i, j) for i in range(nt) for j in range(nx)]
    count = min(len(flat), pv.diagnostic_targets)
    pick = np.unique(np.linspace(0, len(flat) - 1, count).round().astype(int))
    excised = np.zeros((len(pv.eps_ladder), pick.size))
    for col, p in enumerate(pick):
        i, j = flat[p]
        t = times[i]
        x = X[j : j + 1]
        f0 = integ.forcing(x, t)
        for r, eps in enumerate(pv.eps_ladder):
            excised[r, col] = _excised(integ, x, t, f0, eps * t ** (1.0 / sigma))[0]
    # U_eps = U - excised; successive differences of U_eps equal those of excised
    diffs = np.abs(np.diff(excised, axis=0)).max(axis=1)
    scale = max(float(np.abs(U).max()), abs(integ.forcing.far_mean), 1e-300)
    ratios, orders = [], []
    lo, hi = pv.ratio_window
    bad = []
    for k in range(diffs.size - 1):
        if diffs[k + 1] <= pv.noise_floor * scale or diffs[k] <= pv.noise_floor * scale:
            ratios.append(None)
            orders.append(None)
            continue
        q = diffs[k] / diffs[k + 1]
        ratios.append(float(q))
        step = pv.eps_ladder[k + 1] / pv.eps_ladder[k + 2]
        orders.append(float(math.log(q) / math.log(step)))
        if not lo <= q <= hi:
            bad.append(k)
    diag = {
        "eps_ladder": list(pv.eps_ladder),
        "excised_max": [float(v) for v in np.abs(excised).max(axis=1)],
        "ladder_differences": [float(v) for v in diffs],
        "ratios": ratios,
        "observed_orders": orders,
        "targets_checked": int(pick.size),
    }
    alpha = integ.forcing.holder[0] if integ.forcing.holder else None
    if alpha is not None:
        diag["predicted_order_floor"] = float(min(alpha, sigma))
    if bad:
        raise PVNotStabilizedError(
            f"PV did not stabilize: ladder ratios {ratios} outside {pv.ratio_window}", diag
        )
    return diag


def excised_ball_constant(profile: KernelProfile, pv: PvParams | None = None) -> float:
    r"""``C_0 = int_{|Y|_sigma < 1, tau > 0} L P(Y) dY``.

    Independent of the radius by self-similarity. Excising the ball and
    integrating ``L P * f`` without subtracting ``f(x, t)`` converges to
    ``u - C_0 f(x, t)``, which is why the solver subtracts ``f(x, t)``.
    """
    pv = pv or PvParams()
    one = Forcing(lambda x, t: np.ones(x.shape[:-1]), profile.dimension, 1.0, INF, 1.0)
    integ = _Integrator(profile, one, pv)
    X = np.zeros((1, profile.dimension))
    return float(_excised(integ, X, 2.0, np.zeros(1), 1.0)[0])


# ----------------------------------------------------------------------
# periodic exponential integrator


def solve_forced_spectral(
    symbol: SymbolField,
    f: Forcing | SpaceTimeField,
    grid: SpatialGrid | None = None,
    times: Sequence[float] | None = None,
    substeps: int = 1,
) -> SpaceTimeField:
    r"""Duhamel solution on the periodic box with ``f`` piecewise linear in time.

    Each step applies the exact propagator of ``u' = -m u + m f`` for
    linear-in-time ``f``::

        u_{k+1} = e^{-dt m} u_k + (1 - e^{-dt m}) f_{k+1}
                  + [1 - e^{-dt m}(1 + dt m)] / (dt m) (f_k - f_{k+1}).

    Parameters
    ----------
    symbol : SymbolField
    f : Forcing or SpaceTimeField
        A sampled field must start at ``t = 0``.
    grid, times :
        Required for closed-form forcings; ``times`` are the output times
        (``t = 0`` is prepended internally when missing).
    substeps : int
        Uniform sub-steps between consecutive output times.
    """
    if isinstance(f, SpaceTimeField):
        grid = f.grid
        all_t = f.times
        if all_t[0] != 0.0:
            raise ValidationError("sampled forcing must include t = 0")
        samples = f.values
        if substeps != 1:
            raise ValidationError("substeps need a closed-form forcing")
        out_idx = np.arange(all_t.size)
        out_t = all_t
    else:
        if grid is None or times is None:
            raise ValidationError("closed-form forcings need grid and times")
        out_t = np.asarray(times, dtype=float).reshape(-1)
        if np.any(np.diff(out_t) <= 0) or out_t[0] < 0:
            raise ValidationError("times must be increasing and nonnegative")
        base = out_t if out_t[0] == 0.0 else np.concatenate([[0.0], out_t])
        k = int(substeps)
        all_t = np.concatenate(
            [np.linspace(a, b, k + 1)[:-1] for a, b in zip(base[:-1], base[1:])] + [base[-1:]]
        )
        out_idx = np.searchsorted(all_t, out_t)
        pts = grid.points()
        samples = None
    m = _multiplier(symbol, grid)

    def sample(i):
        if samples is not None:
            return samples[i]
        return f(pts, all_t[i]).reshape(grid.shape)

    u_hat = np.zeros(m.shape, dtype=complex)
    f_prev = rfftn(sample(0))
    result = np.zeros((all_t.size,) + grid.shape)
    for i in range(1, all_t.size):
        dt = all_t[i] - all_t[i - 1]
        f_next = rfftn(sample(i))
        x = dt * m
        decay = np.exp(-x)
        e1 = -np.expm1(-x)
        with np.errstate(invalid="ignore", divide="ignore"):
            e2 = np.where(x > 1e-8, (e1 - x * decay) / np.where(x > 0, x, 1.0), 0.5 * x)
        u_hat = decay * u_hat + e1 * f_next + e2 * (f_prev - f_next)
        result[i] = irfftn(u_hat, grid.shape)
        f_prev = f_next
    return SpaceTimeField(grid, out_t, result[out_idx], symbol.sigma, "solution")


# ----------------------------------------------------------------------
# very weak formulation


@dataclass(frozen=True)
class BumpTestFunction:
    """Separable test function ``zeta(x, t) = psi(x) chi(t)``.

    ``psi(x) = exp(1 - 1/(1 - |x - center|^2 / radius^2))`` inside the ball,
    ``chi`` the same profile in time centered at ``t_center`` with half
    width ``t_half_width``; ``chi`` and all its derivatives vanish at
    ``t_center + t_half_width``, the final time.
    """

    center: tuple[float, ...]
    radius: float
    t_center: float
    t_half_width: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if not (self.radius > 0 and self.t_half_width > 0):
            raise ValidationError("bump radius and time half-width must be positive")

    @property
    def final_time(self) -> float:
        return self.t_center + self.t_half_width

    @staticmethod
    def _bump(s):
        s = np.asarray(s, dtype=float)
        inside = np.abs(s) < 1.0
        out = np.zeros_like(s)
        si = s[inside]
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - si * si))
        return out

    @staticmethod
    def _bump_deriv(s):
        s = np.asarray(s, dtype=float)
        inside = np.abs(s) < 1.0
        out = np.zeros_like(s)
        si = s[inside]
        q = 1.0 - si * si
        out[inside] = np.exp(1.0 - 1.0 / q) * (-2.0 * si / (q * q))
        return out

    def space(self, grid: SpatialGrid) -> np.ndarray:
        c = np.asarray(self.center)
        if c.size != grid.dimension:
            raise ValidationError("bump center dimension differs from the grid")
        margin = grid.half_width - (np.abs(c).max() + self.radius)
        if margin < 2.0 * grid.h:
            raise ValidationError("test function is not compactly supported inside the box")
        coords = grid.coordinates()
        r2 = sum((x - cj) ** 2 for x, cj in zip(coords, c))
        s = np.sqrt(r2) / self.radius
        return self._bump(s)

    def chi(self, t) -> np.ndarray:
        return self._bump((np.asarray(t, dtype=float) - self.t_center) / self.t_half_width)

    def dchi(self, t) -> np.ndarray:
        return self._bump_deriv((np.asarray(t, dtype=float) - self.t_center) / self.t_half_width) / self.t_half_width

    def time_nodes(self, panels: int = 4, order: int = 8) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre nodes on ``[max(0, t_c - w), t_c + w]``."""
        lo = max(0.0, self.t_center - self.t_half_width)
        return composite_gauss(np.linspace(lo, self.final_time, panels + 1), order)


def very_weak_residual(
    u: SpaceTimeField,
    f: SpaceTimeField | None,
    zeta: BumpTestFunction,
    symbol: SymbolField,
    u0: np.ndarray | None = None,
) -> float:
    r"""Normalized defect of ``int u d_t zeta = int (u - f) L zeta - int u0 zeta(., 0)``.

    Space integrals are periodic-box sums (exact for periodic ``u - f``
    since ``L zeta`` is then replaced by its periodization), time integrals
    use ``u.time_weights``. The defect is divided by the sum of the three
    term magnitudes.

    Parameters
    ----------
    u : SpaceTimeField
        Samples at quadrature times covering the support of ``chi``.
    f : SpaceTimeField or None
        Forcing at the same nodes (None for ``f = 0``).
    zeta : BumpTestFunction
    symbol : SymbolField
    u0 : ndarray, optional
        Initial datum (zero when omitted).
    """
    grid = u.grid
    if u.time_weights is None:
        raise ValidationError("u needs time quadrature weights")
    if f is not None and (f.values.shape != u.values.shape or not np.allclose(f.times, u.times)):
        raise ValidationError("u and f must share grid and times")
    psi = zeta.space(grid)
    Lpsi = apply_operator(symbol, psi, grid)
    dV = grid.cell_volume
    w = u.time_weights
    chi = zeta.chi(u.times)
    dchi = zeta.dchi(u.times)
    uf = u.values if f is None else u.values - f.values
    axes = tuple(range(1, 1 + grid.dimension))
    A = float(np.sum(w * dchi * np.sum(u.values * psi, axis=axes)) * dV)
    B = float(np.sum(w * chi * np.sum(uf * Lpsi, axis=axes)) * dV)
    C = 0.0
    if u0 is not None:
        C = float(np.sum(np.asarray(u0) * psi) * dV * zeta.chi(0.0))
    denom = abs(A) + abs(B) + abs(C)
    if denom == 0.0:
        return 0.0
    return abs(A - B + C) / denom
