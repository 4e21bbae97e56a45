"""Self-similar heat-kernel profile and its decay and cancellation functionals.

The profile Phi is the inverse Fourier transform of ``exp(-m)``; the heat
kernel is ``P(x, t) = t^{-N/sigma} Phi(x t^{-1/sigma})``. Profiles are
synthesized on a periodic box; the heavy tails ``~ r^{-N-sigma}`` are only
trusted on ``|x| <= 0.8 L``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from ._numerics import composite_gauss, irfftn, loglog_slope, next_pow2, periodic_interp
from .errors import ConvergenceError, GridTooCoarseError, OutOfRangeError, ValidationError
from .spectral_measure import fibonacci_sphere
from .symbol import SymbolField

__all__ = [
    "SpatialGrid",
    "KernelProfile",
    "GridProfile",
    "CancellationResult",
    "StoredProfile",
    "build_profile",
    "heat_kernel_eval",
    "spherical_average",
    "decay_slope",
    "cancellation_integral",
    "profile_equation_residual",
    "shifted_average_difference",
    "write_profile_csv",
    "write_profile_binary",
    "read_profile_binary",
    "SCALAR_COMPONENTS",
]

# exp(-g_min * xi_max^sigma) must fall below this at the grid cutoff
RESOLUTION_FLOOR = 1e-14
TRUSTED_FRACTION = 0.8
DEFAULT_HALF_WIDTH = {1: 2048.0, 2: 96.0, 3: 6.0}
DEFAULT_POINTS = {1: 1 << 18, 2: 2048, 3: 128}
MAX_POINTS = {1: 1 << 23, 2: 4096, 3: 256}
MIN_SPECTRAL_POINTS = 64

_BASE = ("phi", "Lphi", "L2phi")
_GRADS = ("grad_phi", "grad_Lphi")
SCALAR_COMPONENTS = (
    _BASE
    + tuple("abs_" + c for c in _BASE[1:])
    + ("dr_phi", "dr_Lphi", "abs_dr_phi", "abs_dr_Lphi", "norm_grad_phi", "norm_grad_Lphi")
)
_ALL_COMPONENTS = SCALAR_COMPONENTS + _GRADS


# ----------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class SpatialGrid:
    """Periodic box ``[-L, L)^N`` sampled at ``x_j = -L + j h``, ``h = 2L/n``.

    Parameters
    ----------
    dimension : int
        1, 2 or 3.
    n : int
        Points per axis, a power of two.
    half_width : float
        Box half-width L.
    """

    dimension: int
    n: int
    half_width: float

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise ValidationError(f"grid dimension must be 1, 2 or 3, got {self.dimension!r}")
        n = int(self.n)
        if n < 2 or n & (n - 1):
            raise ValidationError(f"grid points per axis must be a power of two, got {self.n!r}")
        if not (self.half_width > 0 and math.isfinite(self.half_width)):
            raise ValidationError(f"grid half_width must be positive, got {self.half_width!r}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "half_width", float(self.half_width))

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dimension

    @property
    def axis(self) -> np.ndarray:
        return -self.half_width + self.h * np.arange(self.n)

    @property
    def trusted_radius(self) -> float:
        return TRUSTED_FRACTION * self.half_width

    @property
    def cell_volume(self) -> float:
        return self.h**self.dimension

    def coordinates(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays, one per axis."""
        out = []
        for j in range(self.dimension):
            shape = [1] * self.dimension
            shape[j] = self.n
            out.append(self.axis.reshape(shape))
        return out

    def points(self) -> np.ndarray:
        """All grid points as an array of shape (n^N, N)."""
        mesh = np.meshgrid(*([self.axis] * self.dimension), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def inner_mask(self) -> np.ndarray:
        """Boolean mask of the inner half-box ``|x_j| <= L/2``."""
        inside = np.abs(self.axis) <= 0.5 * self.half_width
        mask = inside
        for _ in range(self.dimension - 1):
            mask = np.multiply.outer(mask, inside)
        return mask

    def frequency_axes(self) -> list[np.ndarray]:
        """Angular frequencies in ``rfftn`` layout (last axis halved)."""
        full = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.h)
        half = 2.0 * np.pi * np.fft.rfftfreq(self.n, d=self.h)
        return [full] * (self.dimension - 1) + [half]

    def cutoff(self) -> float:
        return math.pi / self.h

    def required_n(self, symbol: SymbolField) -> int:
        """Smallest admissible power-of-two n for ``symbol`` at this half-width."""
        xi_needed = (math.log(1.0 / RESOLUTION_FLOOR) / symbol.g_min) ** (1.0 / symbol.sigma)
        n = next_pow2(xi_needed * 2.0 * self.half_width / math.pi * (1.0 + 1e-12))
        while symbol.g_min * (math.pi * n / (2.0 * self.half_width)) ** symbol.sigma <= math.log(
            1.0 / RESOLUTION_FLOOR
        ):
            n *= 2
        return max(MIN_SPECTRAL_POINTS, n)

    def resolves(self, symbol: SymbolField) -> bool:
        return math.exp(-symbol.g_min * self.cutoff() ** symbol.sigma) < RESOLUTION_FLOOR

    def check_resolution(self, symbol: SymbolField) -> None:
        """Raise :class:`GridTooCoarseError` unless the spectral guard holds."""
        if self.n < MIN_SPECTRAL_POINTS:
            raise GridTooCoarseError(
                f"spectral grids need n >= {MIN_SPECTRAL_POINTS}, got {self.n}",
                max(MIN_SPECTRAL_POINTS, self.required_n(symbol)),
            )
        if not self.resolves(symbol):
            need = self.required_n(symbol)
            raise GridTooCoarseError(
                f"grid too coarse: exp(-g_min xi_max^sigma) = "
                f"{math.exp(-symbol.g_min * self.cutoff() ** symbol.sigma):.3g} >= {RESOLUTION_FLOOR:g}"
                f" at n={self.n}, L={self.half_width}; need n >= {need}",
                need,
            )

    @classmethod
    def default_for(cls, symbol: SymbolField, half_width: float | None = None) -> "SpatialGrid":
        """Default grid for ``symbol``, doubling n until the guard holds."""
        dim = symbol.dimension
        if dim not in DEFAULT_HALF_WIDTH:
            raise ValidationError(f"gridded operations support N in {{1,2,3}}, got {dim}")
        L = DEFAULT_HALF_WIDTH[dim] if half_width is None else float(half_width)
        grid = cls(dim, DEFAULT_POINTS[dim], L)
        n = max(grid.n, grid.required_n(symbol))
        if n > MAX_POINTS[dim]:
            raise GridTooCoarseError(
                f"default grid for N={dim} would need n={n} > {MAX_POINTS[dim]}", n
            )
        return cls(dim, n, L)


# ----------------------------------------------------------------------
# profiles


def _unit_or_zero(points: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(points, axis=1, keepdims=True)
    return np.divide(points, r, out=np.zeros_like(points), where=r > 0)


class KernelProfile:
    """Common evaluation interface for heat-kernel profiles.

    Subclasses provide ``dimension``, ``sigma``, ``symbol``, ``half_width``,
    ``trusted_radius``, ``resolution`` and ``_raw(kind, points)`` for
    ``kind`` in phi, Lphi, L2phi (shape (k,)) and grad_phi, grad_Lphi
    (shape (k, N)).

    Components accepted by :meth:`evaluate`: ``phi``, ``Lphi``, ``L2phi``,
    ``abs_Lphi``, ``abs_L2phi``, radial derivatives ``dr_phi``, ``dr_Lphi``
    and their ``abs_`` forms, gradient norms ``norm_grad_phi``,
    ``norm_grad_Lphi``, and the vector fields ``grad_phi``, ``grad_Lphi``.
    """

    dimension: int
    sigma: float
    symbol: SymbolField
    half_width: float
    trusted_radius: float
    resolution: float

    def _raw(self, kind: str, points: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def _points(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        if p.ndim == 1 and self.dimension == 1 and p.shape != (1,):
            p = p[:, None]
        p = np.atleast_2d(p)
        if p.shape[-1] != self.dimension:
            raise ValidationError(f"points must have trailing dimension {self.dimension}")
        p = p.reshape(-1, self.dimension)
        if p.size and np.max(np.abs(p)) > self.half_width * (1.0 + 1e-12):
            raise OutOfRangeError(
                f"point outside the profile box |x_j| <= {self.half_width}; enlarge the grid"
            )
        return p

    def evaluate(self, component: str, points) -> np.ndarray:
        """Interpolated ``component`` at ``points`` of shape (k, N)."""
        if component not in _ALL_COMPONENTS:
            raise ValidationError(
                f"unknown component {component!r}; choose from {', '.join(_ALL_COMPONENTS)}"
            )
        p = self._points(points)
        if component in _BASE or component in _GRADS:
            return self._raw(component, p)
        if component.startswith("abs_"):
            return np.abs(self.evaluate(component[4:], p))
        if component.startswith("norm_grad_"):
            return np.linalg.norm(self._raw(component[5:], p), axis=1)
        # radial derivative
        grad = self._raw("grad_" + component[3:], p)
        return np.einsum("ij,ij->i", grad, _unit_or_zero(p))

    def __call__(self, points) -> np.ndarray:
        return self.evaluate("phi", points)


class GridProfile(KernelProfile):
    """Profile synthesized by FFT on a :class:`SpatialGrid`.

    Phi, L Phi and L^2 Phi are computed on construction; gradients are
    synthesized on first use from the stored multiplier.

    Parameters
    ----------
    symbol : SymbolField
    grid : SpatialGrid
    check : bool
        Verify positivity, unit mass and the sup bound (raises
        :class:`ConvergenceError` on failure).
    """

    def __init__(self, symbol: SymbolField, grid: SpatialGrid, check: bool = True):
        if grid.dimension != symbol.dimension:
            raise ValidationError(
                f"grid dimension {grid.dimension} differs from symbol dimension {symbol.dimension}"
            )
        grid.check_resolution(symbol)
        self.symbol = symbol
        self.grid = grid
        self.dimension = grid.dimension
        self.sigma = symbol.sigma
        self.half_width = grid.half_width
        self.trusted_radius = grid.trusted_radius
        self.resolution = grid.h
        self._m = symbol.m_on_axes(grid.frequency_axes())
        self._hat = np.exp(-self._m)
        self.phi = self._synth(self._hat)
        self.Lphi = self._synth(self._m * self._hat)
        self.L2phi = self._synth(self._m * self._m * self._hat)
        for a in (self.phi, self.Lphi, self.L2phi):
            a.setflags(write=False)
        if check:
            report = self.invariant_report()
            if not report["ok"]:
                raise ConvergenceError(f"kernel profile invariants violated: {report}")

    def _synth(self, spectrum: np.ndarray) -> np.ndarray:
        out = irfftn(spectrum, self.grid.shape) / self.grid.cell_volume
        return np.fft.fftshift(out)

    @property
    def multiplier(self) -> np.ndarray:
        """m on the frequency grid in ``rfftn`` layout (read-only view)."""
        v = self._m.view()
        v.setflags(write=False)
        return v

    def _gradient(self, power: int) -> np.ndarray:
        g = self.grid
        axes = g.frequency_axes()
        base = self._hat * self._m**power
        comps = []
        for j, xi in enumerate(axes):
            k = xi.copy()
            k[g.n // 2] = 0.0  # Nyquist mode has no odd partner
            shape = [1] * g.dimension
            shape[j] = k.size
            comps.append(self._synth(1j * k.reshape(shape) * base))
        out = np.stack(comps)
        out.setflags(write=False)
        return out

    @cached_property
    def grad_phi(self) -> np.ndarray:
        """Array of shape (N, n, ..., n)."""
        return self._gradient(0)

    @cached_property
    def grad_Lphi(self) -> np.ndarray:
        return self._gradient(1)

    def grid_field(self, component: str) -> np.ndarray:
        """Full-grid array of a base or gradient component."""
        if component in ("phi", "Lphi", "L2phi", "grad_phi", "grad_Lphi"):
            return getattr(self, component)
        raise ValidationError(f"no stored grid field {component!r}")

    def radial_derivative_times_r(self, power: int = 0) -> np.ndarray:
        """``x . grad(L^power Phi)`` on the grid."""
        grad = self.grad_phi if power == 0 else self.grad_Lphi
        coords = self.grid.coordinates()
        return sum(c * grad[j] for j, c in enumerate(coords))

    def _raw(self, kind, points):
        L = self.half_width
        if kind in _BASE:
            return periodic_interp(getattr(self, kind), L, points)
        field = getattr(self, kind)
        return np.stack([periodic_interp(field[j], L, points) for j in range(self.dimension)], axis=1)

    def invariant_report(self, neg_tol: float = 1e-8) -> dict:
        """Positivity, mass and sup-bound diagnostics of Phi."""
        phi = self.phi
        mx = float(phi.max())
        mass = float(phi.sum() * self.grid.cell_volume)
        inner_min = float(phi[self.grid.inner_mask()].min())
        # discrete counterpart of  int exp(-m) dxi / (2 pi)^N
        full = self._hat.sum(axis=-1) * 2.0 - self._hat[..., 0]
        if self.grid.n % 2 == 0:
            full = full - self._hat[..., -1]
        bound = float(full.sum()) / (2.0 * self.half_width) ** self.dimension
        report = {
            "mass_error": abs(mass - 1.0),
            "min_over_max": float(phi.min()) / mx,
            "inner_min": inner_min,
            "max_phi": mx,
            "max_bound": bound,
        }
        report["ok"] = (
            report["mass_error"] <= 1e-6
            and report["min_over_max"] >= -neg_tol
            and inner_min > 0.0
            and mx <= bound + 1e-8
        )
        return report

    def __repr__(self) -> str:
        g = self.grid
        return f"GridProfile(N={g.dimension}, n={g.n}, L={g.half_width}, sigma={self.sigma})"


def build_profile(symbol: SymbolField, grid: SpatialGrid | None = None) -> GridProfile:
    """Synthesize Phi = F^{-1}[exp(-m)] and its L-powers and gradients.

    Parameters
    ----------
    symbol : SymbolField
    grid : SpatialGrid, optional
        Defaults to :meth:`SpatialGrid.default_for`.

    Raises
    ------
    GridTooCoarseError
        If ``exp(-g_min (pi/h)^sigma) >= 1e-14``; carries ``required_n``.
    """
    return GridProfile(symbol, grid if grid is not None else SpatialGrid.default_for(symbol))


# ----------------------------------------------------------------------
# evaluators


def heat_kernel_eval(profile: KernelProfile, x, t: float) -> np.ndarray | float:
    """``P(x, t) = t^{-N/sigma} Phi(x t^{-1/sigma})`` by grid interpolation."""
    t = float(t)
    if not t > 0:
        raise ValidationError(f"time must be positive, got {t!r}")
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0 or (x.ndim == 1 and x.size == profile.dimension and profile.dimension > 1)
    if profile.dimension == 1 and x.ndim == 1 and x.size == 1:
        scalar = True
    pts = x.reshape(-1, profile.dimension) * t ** (-1.0 / profile.sigma)
    out = t ** (-profile.dimension / profile.sigma) * profile.evaluate("phi", pts)
    return float(out[0]) if scalar else out


def _sphere_nodes(profile: KernelProfile, r: float, nodes: int | None) -> tuple[np.ndarray, np.ndarray]:
    dim = profile.dimension
    if dim == 1:
        return np.array([[1.0], [-1.0]]), np.ones(2)
    spacing = max(profile.resolution, 1.0 / 16.0)
    if dim == 2:
        k = nodes or max(256, math.ceil(2.0 * math.pi * r / spacing))
        ang = 2.0 * math.pi * np.arange(k) / k
        return np.column_stack([np.cos(ang), np.sin(ang)]), np.full(k, 2.0 * math.pi / k)
    if dim == 3:
        k = nodes or min(400_000, max(2048, math.ceil(4.0 * 4.0 * math.pi * r * r / spacing**2)))
        return fibonacci_sphere(k), np.full(k, 4.0 * math.pi / k)
    raise ValidationError(f"spherical averages support N <= 3, got {dim}")


def spherical_average(profile: KernelProfile, component: str, r: float, nodes: int | None = None) -> float:
    """``int_{S^{N-1}} component(r theta) d theta`` by sphere quadrature.

    For N = 2 the angular rule is uniform, for N = 3 a Fibonacci grid; the
    default node count scales with ``r`` so that neighbouring nodes are no
    farther apart than the grid spacing (at least 1/16).

    Raises
    ------
    OutOfRangeError
        If ``r`` exceeds the profile half-width.
    """
    if component not in SCALAR_COMPONENTS:
        raise ValidationError(f"spherical_average needs a scalar component, got {component!r}")
    r = float(r)
    if r < 0:
        raise ValidationError(f"radius must be nonnegative, got {r!r}")
    if r > profile.half_width:
        raise OutOfRangeError(f"radius {r} outside the profile box (half-width {profile.half_width})")
    theta, w = _sphere_nodes(profile, r, nodes)
    if r == 0.0:
        return float(w.sum() * profile.evaluate(component, np.zeros((1, profile.dimension)))[0])
    return float(profile.evaluate(component, r * theta) @ w)


def _radial_values(profile, component, radii, direction=None) -> np.ndarray:
    if direction is None:
        return np.array([spherical_average(profile, component, r) for r in radii])
    d = np.asarray(direction, dtype=float).reshape(-1)
    if d.size != profile.dimension or abs(np.linalg.norm(d) - 1.0) > 1e-12:
        raise ValidationError("direction must be a unit vector of the profile dimension")
    return profile.evaluate(component, radii[:, None] * d[None, :])


def decay_slope(
    profile: KernelProfile,
    component: str,
    r_min: float,
    r_max: float,
    num_r: int = 16,
    direction=None,
) -> float:
    """Least-squares slope of log(average) against log r on a geometric ladder.

    Parameters
    ----------
    profile : KernelProfile
    component : str
        A scalar component; sign-changing ones need their ``abs_`` form.
    r_min, r_max : float
        ``1 <= r_min < r_max <= trusted_radius``.
    num_r : int
    direction : unit vector, optional
        Fit along this ray instead of the spherical average.
    """
    if r_min < 1.0:
        raise ValidationError(f"r_min must be >= 1, got {r_min!r}")
    if not r_max > r_min:
        raise ValidationError("r_max must exceed r_min")
    if r_max > profile.trusted_radius * (1.0 + 1e-12):
        raise OutOfRangeError(
            f"r_max={r_max} beyond the trusted radius {profile.trusted_radius}; enlarge the box"
        )
    if num_r < 2:
        raise ValidationError("num_r must be at least 2")
    radii = np.geomspace(r_min, r_max, int(num_r))
    vals = _radial_values(profile, component, radii, direction)
    if np.any(vals <= 0):
        hint = "" if component.startswith(("abs_", "norm_")) else f"; use 'abs_{component}'"
        raise ValidationError(f"component {component!r} is not positive on the fit window{hint}")
    return loglog_slope(radii, vals)


# ----------------------------------------------------------------------
# cancellation


@dataclass(frozen=True)
class CancellationResult:
    """Space-time integrals of LP and |LP| over ``{a < |Y|_sigma < b, t > 0}``.

    Attributes
    ----------
    value : float
    abs_value : float
    ratio : float
        ``|value| / abs_value`` (0 for an empty region).
    tail : float
        Share of ``value`` supplied by the fitted tail beyond
        ``radial_cutoff`` (before the time factor).
    radial_cutoff : float
    """

    value: float
    abs_value: float
    ratio: float
    tail: float
    radial_cutoff: float


def _radial_edges(cutoff: float) -> np.ndarray:
    inner = np.arange(0.0, min(8.0, cutoff), 0.5)
    edges = list(inner) + [min(8.0, cutoff)]
    s = edges[-1]
    while s < cutoff:
        s = min(cutoff, s * 1.25)
        edges.append(s)
    return np.unique(np.array(edges))


def _power_tail(profile, component, cutoff, dim, terms: int = 3) -> tuple[float, np.ndarray]:
    """Fit the spherical average on [cutoff/4, cutoff] and integrate it beyond.

    The model is ``sum_k b_k s^{-N-k sigma}``, k = 1..terms, the form of the
    large-|x| expansion of stable densities; each term integrates in closed
    form against ``s^{N-1} ds``.
    """
    sigma = profile.sigma
    radii = np.geomspace(cutoff / 4.0, cutoff, 16)
    vals = np.array([spherical_average(profile, component, r) for r in radii])
    k = np.arange(1, terms + 1)
    # scale columns by the cutoff so the least-squares problem stays well conditioned
    design = (radii[:, None] / cutoff) ** (-k[None, :] * sigma)
    rhs = vals * radii**dim
    coef = np.linalg.lstsq(design, rhs, rcond=None)[0]
    return float(np.sum(coef / (k * sigma))), coef


def cancellation_integral(
    profile: KernelProfile, a: float, b: float, radial_cutoff: float | None = None, order: int = 8
) -> CancellationResult:
    r"""Integral of LP over the half annulus ``{a < |Y|_sigma < b, t > 0}``.

    With ``x = t^{1/sigma} z`` the region becomes, for each ``z``, the
    interval ``t^{1/sigma} in (a, b) / sqrt(1 + |z|^2)`` and the time
    integral of ``dt/t`` contributes ``sigma ln(b/a)``. The remaining
    spatial integral is evaluated in polar form ``s, theta``: composite
    Gauss-Legendre panels in ``s`` up to ``radial_cutoff`` and a tail
    beyond it fitted by the leading terms ``s^{-N-k sigma}``. The same rule integrates ``|LP|``.

    Parameters
    ----------
    profile : KernelProfile
    a, b : float
        ``0 < a <= b <= trusted_radius``.
    radial_cutoff : float, optional
        Default ``min(L/4, 128)``.
    order : int
        Gauss-Legendre nodes per panel.
    """
    a, b = float(a), float(b)
    if not (a > 0 and b >= a):
        raise ValidationError(f"need 0 < a <= b, got a={a!r}, b={b!r}")
    if b > profile.trusted_radius:
        raise OutOfRangeError(f"b={b} beyond the trusted radius {profile.trusted_radius}")
    S = float(radial_cutoff) if radial_cutoff is not None else min(profile.half_width / 4.0, 128.0)
    if a == b:
        return CancellationResult(0.0, 0.0, 0.0, 0.0, S)
    dim = profile.dimension
    s, w = composite_gauss(_radial_edges(S), order)
    jac = w * s ** (dim - 1)
    core = core_abs = 0.0
    for j, r in zip(jac, s):
        theta, wt = _sphere_nodes(profile, r, None)
        vals = profile.evaluate("Lphi", r * theta)
        core += j * float(vals @ wt)
        core_abs += j * float(np.abs(vals) @ wt)
    tail, _ = _power_tail(profile, "Lphi", S, dim)
    tail_abs, _ = _power_tail(profile, "abs_Lphi", S, dim)
    factor = profile.sigma * math.log(b / a)
    value = factor * (core + tail)
    abs_value = factor * (core_abs + abs(tail_abs))
    return CancellationResult(value, abs_value, abs(value) / abs_value, tail, S)


# ----------------------------------------------------------------------
# profile equation and the shifted-difference functional


def profile_equation_residual(profile: KernelProfile) -> float:
    r"""``sup |sigma L Phi - N Phi - x . grad Phi| / max Phi`` on the inner half-box.

    Both sides are computed spectrally; for non-grid profiles the supremum
    runs over a lattice of at most 257 points per axis.
    """
    dim, sigma = profile.dimension, profile.sigma
    if isinstance(profile, GridProfile):
        mask = profile.grid.inner_mask()
        res = sigma * profile.Lphi - dim * profile.phi - profile.radial_derivative_times_r(0)
        return float(np.abs(res[mask]).max() / profile.phi.max())
    half = 0.5 * profile.half_width
    ax = np.linspace(-half, half, 257)
    pts = np.stack([m.ravel() for m in np.meshgrid(*([ax] * dim), indexing="ij")], axis=1)
    phi = profile.evaluate("phi", pts)
    lphi = profile.evaluate("Lphi", pts)
    xg = np.einsum("ij,ij->i", profile.evaluate("grad_phi", pts), pts)
    peak = profile.evaluate("phi", np.zeros((1, dim)))[0]
    return float(np.abs(sigma * lphi - dim * phi - xg).max() / max(peak, phi.max()))


def shifted_average_difference(profile: KernelProfile, r: float, s: float, phi) -> float:
    r"""``int_{S^{N-1}} |L Phi(r theta) - L Phi(r theta - s phi)| d theta``.

    Parameters
    ----------
    profile : KernelProfile
    r : float
        ``r >= 1`` with ``r + 1`` inside the trusted radius.
    s : float
        Shift length in [0, 1]; ``s = 0`` returns 0.
    phi : unit vector
        Shift direction.
    """
    r, s = float(r), float(s)
    d = np.asarray(phi, dtype=float).reshape(-1)
    if d.size != profile.dimension or abs(np.linalg.norm(d) - 1.0) > 1e-12:
        raise ValidationError("phi must be a unit vector of the profile dimension")
    if not 0.0 <= s <= 1.0:
        raise ValidationError(f"shift s must lie in [0, 1], got {s!r}")
    if r < 1.0 or r + 1.0 > profile.trusted_radius:
        raise OutOfRangeError(f"need 1 <= r and r + 1 <= {profile.trusted_radius}, got r={r}")
    if s == 0.0:
        return 0.0
    theta, w = _sphere_nodes(profile, r + 1.0, None)
    pts = r * theta
    diff = profile.evaluate("Lphi", pts) - profile.evaluate("Lphi", pts - s * d[None, :])
    return float(np.abs(diff) @ w)


# ----------------------------------------------------------------------
# IO

_MAGIC = b"ANHK1"


@dataclass(frozen=True)
class StoredProfile:
    """Profile arrays read back from a binary cache file."""

    grid: SpatialGrid
    sigma: float
    phi: np.ndarray
    Lphi: np.ndarray
    L2phi: np.ndarray


def write_profile_csv(profile: GridProfile, path, stride: int = 1) -> Path:
    """Write ``x_1..x_N, phi, Lphi, L2phi`` rows (every ``stride``-th node per axis)."""
    path = Path(path)
    g = profile.grid
    sl = (slice(None, None, int(stride)),) * g.dimension
    coords = np.meshgrid(*([g.axis[:: int(stride)]] * g.dimension), indexing="ij")
    cols = [c.ravel() for c in coords] + [
        profile.phi[sl].ravel(),
        profile.Lphi[sl].ravel(),
        profile.L2phi[sl].ravel(),
    ]
    header = ",".join([f"x{j + 1}" for j in range(g.dimension)] + ["phi", "Lphi", "L2phi"])
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt="%.17g")
    return path


def write_profile_binary(profile: GridProfile, path) -> Path:
    """Binary cache: magic, little-endian header (N, n, L, sigma, count), arrays."""
    path = Path(path)
    g = profile.grid
    arrays = (profile.phi, profile.Lphi, profile.L2phi)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<5d", g.dimension, g.n, g.half_width, profile.sigma, len(arrays)))
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return path


def read_profile_binary(path) -> StoredProfile:
    """Inverse of :func:`write_profile_binary`."""
    data = Path(path).read_bytes()
    if data[: len(_MAGIC)] != _MAGIC:
        raise ValidationError(f"{path}: not a profile cache (bad magic)")
    off = len(_MAGIC)
    dim, n, L, sigma, count = struct.unpack_from("<5d", data, off)
    off += 40
    grid = SpatialGrid(int(dim), int(n), L)
    size = grid.n**grid.dimension
    if len(data) != off + int(count) * size * 8:
        raise ValidationError(f"{path}: truncated profile cache")
    arrays = [
        np.frombuffer(data, dtype="<f8", count=size, offset=off + k * size * 8).reshape(grid.shape)
        for k in range(int(count))
    ]
    return StoredProfile(grid, sigma, *arrays[:3])
