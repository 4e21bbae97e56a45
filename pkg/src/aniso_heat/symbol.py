"""Fourier multiplier m(xi) = |xi|^sigma g(xi/|xi|) of a stable operator."""

from __future__ import annotations

import math
from functools import cached_property

import numpy as np

from .constants import check_order, stable_constant, stable_constant_quadrature
from .errors import ConvergenceError, ValidationError
from .spectral_measure import DOT_FLOOR, SpectralMeasure, ellipticity_lambda

__all__ = ["SymbolField", "stable_constant", "g_eval", "symbol_eval"]

_UNIT_TOL = 1e-12
# angular table sizes for the density part of g
_TABLE_N2 = 8192
_TABLE_N3 = (65, 256)  # polar samples on the upper hemisphere, azimuth samples


class SymbolField:
    r"""Multiplier of the operator built from a spectral measure.

    Parameters
    ----------
    measure : SpectralMeasure
    sigma : float
        Order in (0, 2).
    verify_constant : bool
        Cross-check the closed form of :math:`c_\sigma` against quadrature
        (relative 1e-8) on construction.

    Attributes
    ----------
    c_sigma : float
    lambda_hat : float
        Ellipticity of the measure at this order.
    mass : float
        Total mass of the measure.

    Notes
    -----
    Atoms contribute to g through an exact finite sum. The density part is
    tabulated once on an angular grid (N = 2, 3) and linearly interpolated;
    in other dimensions it is summed directly.
    """

    def __init__(self, measure: SpectralMeasure, sigma: float, verify_constant: bool = True):
        self.measure = measure
        self.sigma = check_order(sigma)
        self.dimension = measure.dimension
        self.c_sigma = stable_constant(self.sigma)
        if verify_constant:
            q = stable_constant_quadrature(self.sigma)
            if abs(q - self.c_sigma) > 1e-8 * self.c_sigma:
                raise ConvergenceError(
                    f"stable constant check failed: closed form {self.c_sigma!r}, quadrature {q!r}"
                )
        self.mass = measure.total_mass
        self.lambda_hat = ellipticity_lambda(measure, self.sigma)

    # ------------------------------------------------------------------
    @property
    def g_min(self) -> float:
        """Lower bound λ c_σ of g."""
        return self.lambda_hat * self.c_sigma

    @property
    def g_max(self) -> float:
        """Upper bound Λ c_σ of g."""
        return self.mass * self.c_sigma

    @cached_property
    def _density_table(self):
        mu = self.measure
        if not mu.has_density or self.dimension not in (2, 3):
            return None
        if self.dimension == 2:
            ang = 2.0 * math.pi * np.arange(_TABLE_N2) / _TABLE_N2
            pts = np.column_stack([np.cos(ang), np.sin(ang)])
            return self._density_moment(pts)
        npol, naz = _TABLE_N3
        pol = np.linspace(0.0, 0.5 * math.pi, npol)
        az = 2.0 * math.pi * np.arange(naz) / naz
        P, A = np.meshgrid(pol, az, indexing="ij")
        pts = np.stack([np.sin(P) * np.cos(A), np.sin(P) * np.sin(A), np.cos(P)], axis=-1)
        return self._density_moment(pts.reshape(-1, 3)).reshape(npol, naz)

    def _density_moment(self, zeta: np.ndarray) -> np.ndarray:
        mu = self.measure
        w = mu.density_values * mu.quadrature_weights
        keep = w > 0
        nodes, w = mu.density_nodes[keep], w[keep]
        out = np.empty(zeta.shape[0])
        step = max(1, (1 << 22) // max(1, nodes.shape[0]))
        for s in range(0, zeta.shape[0], step):
            out[s : s + step] = (np.abs(zeta[s : s + step] @ nodes.T) ** self.sigma) @ w
        return out

    def _atom_moment(self, zeta: np.ndarray) -> np.ndarray:
        mu = self.measure
        if not mu.atom_weights.size:
            return np.zeros(zeta.shape[0])
        dots = np.abs(zeta @ mu.atom_directions.T)
        dots[dots < DOT_FLOOR] = 0.0
        return (dots**self.sigma) @ mu.atom_weights

    def _g_unchecked(self, zeta: np.ndarray) -> np.ndarray:
        """g at unit vectors ``zeta`` of shape (k, N), no validation."""
        total = self._atom_moment(zeta)
        mu = self.measure
        if mu.has_density:
            table = self._density_table
            if table is None:
                total = total + self._density_moment(zeta)
            elif self.dimension == 2:
                ang = np.mod(np.arctan2(zeta[:, 1], zeta[:, 0]), 2.0 * math.pi)
                step = 2.0 * math.pi / _TABLE_N2
                xp = np.arange(_TABLE_N2 + 1) * step
                fp = np.append(table, table[0])
                total = total + np.interp(ang, xp, fp)
            else:
                z = np.where(zeta[:, 2:3] < 0, -zeta, zeta)
                npol, naz = _TABLE_N3
                pol = np.arccos(np.clip(z[:, 2], -1.0, 1.0)) / (0.5 * math.pi) * (npol - 1)
                az = np.mod(np.arctan2(z[:, 1], z[:, 0]), 2.0 * math.pi) / (2.0 * math.pi) * naz
                i0 = np.clip(np.floor(pol).astype(int), 0, npol - 2)
                fp = pol - i0
                j0 = np.floor(az).astype(int) % naz
                fa = az - np.floor(az)
                j1 = (j0 + 1) % naz
                total = total + (
                    (1 - fp) * (1 - fa) * table[i0, j0]
                    + (1 - fp) * fa * table[i0, j1]
                    + fp * (1 - fa) * table[i0 + 1, j0]
                    + fp * fa * table[i0 + 1, j1]
                )
        return self.c_sigma * total

    # ------------------------------------------------------------------
    def g(self, zeta) -> np.ndarray | float:
        """Angular factor g at unit vector(s) ``zeta`` of shape (..., N).

        Raises
        ------
        ValidationError
            If some ``zeta`` is not a unit vector within 1e-12.
        """
        z = np.asarray(zeta, dtype=float)
        if z.shape[-1:] != (self.dimension,):
            raise ValidationError(f"zeta must have trailing dimension {self.dimension}")
        flat = z.reshape(-1, self.dimension)
        nrm = np.linalg.norm(flat, axis=1)
        if np.any(np.abs(nrm - 1.0) > _UNIT_TOL):
            raise ValidationError("zeta must be a unit vector (|zeta| = 1 within 1e-12)")
        out = self._g_unchecked(flat).reshape(z.shape[:-1])
        return float(out) if out.ndim == 0 else out

    def m(self, xi) -> np.ndarray | float:
        """Multiplier m(xi); exactly 0 at xi = 0."""
        x = np.asarray(xi, dtype=float)
        if x.shape[-1:] != (self.dimension,):
            raise ValidationError(f"xi must have trailing dimension {self.dimension}")
        flat = x.reshape(-1, self.dimension)
        out = self._m_flat(flat)
        out = out.reshape(x.shape[:-1])
        return float(out) if out.ndim == 0 else out

    def _m_flat(self, flat: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(flat, axis=1)
        out = np.zeros(flat.shape[0])
        nz = r > 0
        if np.any(nz):
            zeta = flat[nz] / r[nz, None]
            out[nz] = r[nz] ** self.sigma * self._g_unchecked(zeta)
        return out

    def m_on_axes(self, axes: list[np.ndarray], chunk: int = 1 << 20) -> np.ndarray:
        """Evaluate m on the tensor grid spanned by 1-d frequency ``axes``."""
        shape = tuple(a.size for a in axes)
        if self.dimension == 1:
            return self._m_flat(axes[0][:, None]).reshape(shape)
        out = np.empty(shape)
        first = axes[0]
        rest = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(-1, self.dimension - 1)
        rows = max(1, chunk // rest.shape[0])
        for s in range(0, first.size, rows):
            f = first[s : s + rows]
            pts = np.concatenate(
                [np.repeat(f, rest.shape[0])[:, None], np.tile(rest, (f.size, 1))], axis=1
            )
            out[s : s + rows] = self._m_flat(pts).reshape((f.size,) + shape[1:])
        return out

    def __repr__(self) -> str:
        return f"SymbolField(N={self.dimension}, sigma={self.sigma}, measure={self.measure!r})"


def g_eval(field: SymbolField, zeta) -> float | np.ndarray:
    """Angular factor of the multiplier at unit vector(s) ``zeta``."""
    return field.g(zeta)


def symbol_eval(field: SymbolField, xi) -> float | np.ndarray:
    """Multiplier value m(xi)."""
    return field.m(xi)
