"""Spectral measures on the unit sphere and their mass/ellipticity functionals.

A spectral measure is stored as a finite list of atoms plus an optional
density sampled on a sphere quadrature rule. Every functional used by the
toolkit reduces to sums of the form ``sum_i w_i F(theta_i)`` over the
combined discrete rule returned by :meth:`SpectralMeasure.discrete_rule`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import optimize

from .constants import check_order, sphere_area, sphere_moment, stable_constant
from .errors import DegenerateMeasureError, ValidationError

__all__ = [
    "SpectralMeasure",
    "sphere_quadrature",
    "fibonacci_sphere",
    "direction_grid",
    "measure_from_spec",
    "total_mass",
    "ellipticity_lambda",
    "isotropic_measure",
    "fractional_laplacian_measure",
    "sum_of_laplacians_measure",
    "DEFAULT_SPHERE_NODES",
    "DEGENERACY_RTOL",
]

# default sphere quadrature sizes per dimension (N >= 4 uses seeded Monte Carlo)
DEFAULT_SPHERE_NODES = {1: 2, 2: 8192, 3: 8192}
DEGENERACY_RTOL = 1e-10
_UNIT_TOL = 1e-12
_MC_SEED = 20240611
DOT_FLOOR = 1e-14


def fibonacci_sphere(n: int) -> np.ndarray:
    """Return ``n`` nearly uniform points on S^2 (golden-angle spiral).

    Parameters
    ----------
    n : int
        Number of points.

    Returns
    -------
    ndarray, shape (n, 3)
    """
    i = np.arange(n, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / n
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


def sphere_quadrature(dimension: int, n: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Equal-weight quadrature rule on S^{N-1}.

    N = 1 uses the two points {-1, +1} with unit weights, N = 2 a uniform
    angular grid, N = 3 a Fibonacci grid, and N >= 4 seeded Gaussian samples
    projected to the sphere.

    Parameters
    ----------
    dimension : int
    n : int, optional
        Number of nodes (ignored for N = 1).

    Returns
    -------
    nodes : ndarray, shape (n, N)
    weights : ndarray, shape (n,)
        Sum to the surface area of the sphere.
    """
    dim = int(dimension)
    if dim < 1:
        raise ValidationError(f"dimension must be >= 1, got {dimension!r}")
    if dim == 1:
        return np.array([[1.0], [-1.0]]), np.ones(2)
    if n is None:
        n = DEFAULT_SPHERE_NODES.get(dim, 20000)
    n = int(n)
    if n < 4:
        raise ValidationError(f"sphere quadrature needs at least 4 nodes, got {n}")
    if dim == 2:
        ang = 2.0 * math.pi * np.arange(n) / n
        nodes = np.column_stack([np.cos(ang), np.sin(ang)])
    elif dim == 3:
        nodes = fibonacci_sphere(n)
    else:
        rng = np.random.default_rng(_MC_SEED + dim)
        nodes = rng.standard_normal((n, dim))
        nodes /= np.linalg.norm(nodes, axis=1, keepdims=True)
    return nodes, np.full(n, sphere_area(dim) / n)


def _as_matrix(values, dim: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return np.zeros((0, dim))
    if arr.ndim == 1 and dim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValidationError(f"{what}: expected shape (k, {dim}), got {arr.shape}")
    return arr


def _as_vector(values, k: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).reshape(-1) if np.size(values) else np.zeros(0)
    if arr.shape != (k,):
        raise ValidationError(f"{what}: expected {k} entries, got {arr.shape[0]}")
    return arr


@dataclass(frozen=True, eq=False)
class SpectralMeasure:
    """Finite nonnegative measure on S^{N-1}.

    Parameters
    ----------
    dimension : int
        Ambient dimension N >= 1.
    atom_directions : array_like, shape (k, N)
        Unit vectors carrying point masses.
    atom_weights : array_like, shape (k,)
        Nonnegative point masses.
    density_nodes : array_like, shape (m, N)
        Quadrature nodes on which a density is sampled.
    density_values : array_like, shape (m,)
        Nonnegative density values at the nodes.
    quadrature_weights : array_like, shape (m,)
        Positive quadrature weights of the nodes.
    label : str
        Free-form provenance tag.

    Notes
    -----
    Arrays are copied and frozen on construction; the object is immutable.
    """

    dimension: int
    atom_directions: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    atom_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    density_nodes: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    density_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    quadrature_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    label: str = ""

    def __post_init__(self):
        dim = self.dimension
        if isinstance(dim, bool) or not isinstance(dim, (int, np.integer)) or dim < 1:
            raise ValidationError(f"dimension: must be an integer >= 1, got {dim!r}")
        dim = int(dim)
        dirs = _as_matrix(self.atom_directions, dim, "atoms")
        wts = _as_vector(self.atom_weights, dirs.shape[0], "atom weights")
        nodes = _as_matrix(self.density_nodes, dim, "density nodes")
        vals = _as_vector(self.density_values, nodes.shape[0], "density values")
        qw = _as_vector(self.quadrature_weights, nodes.shape[0], "quadrature weights")

        for i, (d, w) in enumerate(zip(dirs, wts)):
            if not np.all(np.isfinite(d)) or abs(np.linalg.norm(d) - 1.0) > _UNIT_TOL:
                raise ValidationError(f"atoms[{i}].direction: not a unit vector (norm {np.linalg.norm(d)!r})")
            if not math.isfinite(w) or w < 0:
                raise ValidationError(f"atoms[{i}].weight: negative or non-finite weight {w!r}")
        if nodes.shape[0]:
            norms = np.linalg.norm(nodes, axis=1)
            bad = np.flatnonzero(~np.isfinite(norms) | (np.abs(norms - 1.0) > _UNIT_TOL))
            if bad.size:
                raise ValidationError(f"density.nodes[{bad[0]}]: not a unit vector (norm {norms[bad[0]]!r})")
            bad = np.flatnonzero(~np.isfinite(vals) | (vals < 0))
            if bad.size:
                raise ValidationError(f"density.values[{bad[0]}]: negative or non-finite value {vals[bad[0]]!r}")
            bad = np.flatnonzero(~np.isfinite(qw) | (qw <= 0))
            if bad.size:
                raise ValidationError(f"density.weights[{bad[0]}]: quadrature weight must be positive, got {qw[bad[0]]!r}")
        mass = float(wts.sum() + np.dot(vals, qw))
        if not math.isfinite(mass) or mass <= 0.0:
            raise ValidationError("measure: empty measure (total mass must be finite and > 0)")

        for name, arr in (
            ("atom_directions", dirs),
            ("atom_weights", wts),
            ("density_nodes", nodes),
            ("density_values", vals),
            ("quadrature_weights", qw),
        ):
            arr = np.array(arr, dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "dimension", dim)
        object.__setattr__(self, "_mass", mass)

    # ------------------------------------------------------------------
    @property
    def total_mass(self) -> float:
        """Total mass Λ."""
        return self._mass

    @property
    def has_density(self) -> bool:
        return bool(self.density_nodes.shape[0])

    def discrete_rule(self) -> tuple[np.ndarray, np.ndarray]:
        """Combined rule (directions, weights) integrating against the measure.

        Density nodes carry ``value * quadrature_weight``; zero-weight nodes
        are dropped.
        """
        dirs = np.concatenate([self.atom_directions, self.density_nodes], axis=0)
        wts = np.concatenate([self.atom_weights, self.density_values * self.quadrature_weights])
        keep = wts > 0
        return dirs[keep], wts[keep]

    def moment(self, zeta, sigma: float, chunk: int = 1 << 22) -> np.ndarray:
        r"""Evaluate :math:`\int |\zeta\cdot\theta|^\sigma d\mu(\theta)` for many ``zeta``.

        Parameters
        ----------
        zeta : array_like, shape (..., N)
        sigma : float
        chunk : int
            Upper bound on the size of intermediate (points x nodes) blocks.

        Returns
        -------
        ndarray, shape (...)
        """
        zeta = np.asarray(zeta, dtype=float)
        lead = zeta.shape[:-1]
        flat = zeta.reshape(-1, self.dimension)
        dirs, wts = self.discrete_rule()
        out = np.empty(flat.shape[0])
        step = max(1, chunk // max(1, dirs.shape[0]))
        for start in range(0, flat.shape[0], step):
            block = np.abs(flat[start : start + step] @ dirs.T)
            # dot products at rounding level are zeros; |.|^sigma would amplify them for sigma < 1
            block[block < DOT_FLOOR] = 0.0
            out[start : start + step] = (block**sigma) @ wts
        return out.reshape(lead)

    def scaled(self, factor: float) -> "SpectralMeasure":
        """Measure with all weights multiplied by ``factor`` > 0."""
        if not factor > 0:
            raise ValidationError(f"scale factor must be positive, got {factor!r}")
        return SpectralMeasure(
            self.dimension,
            self.atom_directions,
            self.atom_weights * factor,
            self.density_nodes,
            self.density_values * factor,
            self.quadrature_weights,
            self.label,
        )

    def rotated(self, rotation) -> "SpectralMeasure":
        """Push the measure forward under an orthogonal matrix."""
        rot = np.asarray(rotation, dtype=float)
        if rot.shape != (self.dimension, self.dimension) or not np.allclose(
            rot @ rot.T, np.eye(self.dimension), atol=1e-12
        ):
            raise ValidationError("rotation must be an orthogonal N x N matrix")

        def push(a):
            if not a.shape[0]:
                return a
            b = a @ rot.T
            return b / np.linalg.norm(b, axis=1, keepdims=True)

        return SpectralMeasure(
            self.dimension,
            push(self.atom_directions),
            self.atom_weights,
            push(self.density_nodes),
            self.density_values,
            self.quadrature_weights,
            self.label,
        )

    def __repr__(self) -> str:
        return (
            f"SpectralMeasure(N={self.dimension}, atoms={self.atom_weights.size}, "
            f"density_nodes={self.density_values.size}, mass={self.total_mass:.6g}"
            + (f", label={self.label!r})" if self.label else ")")
        )


def total_mass(measure: SpectralMeasure) -> float:
    """Total mass Λ of ``measure``."""
    return measure.total_mass


# ----------------------------------------------------------------------
# named constructions


def isotropic_measure(dimension: int, value: float = 1.0, n: int | None = None) -> SpectralMeasure:
    """Uniform density ``value`` on S^{N-1} with the default quadrature."""
    nodes, qw = sphere_quadrature(dimension, n)
    return SpectralMeasure(
        dimension,
        np.zeros((0, dimension)),
        np.zeros(0),
        nodes,
        np.full(nodes.shape[0], float(value)),
        qw,
        "isotropic",
    )


def fractional_laplacian_measure(dimension: int, sigma: float, n: int | None = None) -> SpectralMeasure:
    """Isotropic measure whose symbol is exactly |xi|^sigma."""
    sigma = check_order(sigma)
    value = 1.0 / (stable_constant(sigma) * sphere_moment(dimension, sigma))
    mu = isotropic_measure(dimension, value, n)
    return SpectralMeasure(
        mu.dimension,
        mu.atom_directions,
        mu.atom_weights,
        mu.density_nodes,
        mu.density_values,
        mu.quadrature_weights,
        "fractional-laplacian",
    )


def sum_of_laplacians_measure(
    blocks: Sequence[int], sigma: float, n_sub: int | None = None
) -> SpectralMeasure:
    """Measure whose symbol is ``sum_k |xi^k|^sigma`` over coordinate blocks.

    A block of size one becomes a single atom at the coordinate vector with
    weight ``1/c_sigma``; a larger block becomes a uniform density on its
    coordinate sub-sphere with value ``1/(c_sigma * I_{n_k, sigma})``.

    Parameters
    ----------
    blocks : sequence of int
        Block sizes (n_1, ..., n_M); their sum is the dimension.
    sigma : float
    n_sub : int, optional
        Quadrature size on sub-spheres of dimension >= 2.
    """
    sigma = check_order(sigma)
    sizes = [int(b) for b in blocks]
    if not sizes or any(b < 1 for b in sizes):
        raise ValidationError(f"blocks: sizes must be positive integers, got {list(blocks)!r}")
    dim = sum(sizes)
    c = stable_constant(sigma)
    atom_dirs, atom_w, nodes, vals, qws = [], [], [], [], []
    offset = 0
    for size in sizes:
        if size == 1:
            e = np.zeros(dim)
            e[offset] = 1.0
            atom_dirs.append(e)
            atom_w.append(1.0 / c)
        else:
            sub, sub_w = sphere_quadrature(size, n_sub)
            emb = np.zeros((sub.shape[0], dim))
            emb[:, offset : offset + size] = sub
            nodes.append(emb)
            vals.append(np.full(sub.shape[0], 1.0 / (c * sphere_moment(size, sigma))))
            qws.append(sub_w)
        offset += size
    return SpectralMeasure(
        dim,
        np.array(atom_dirs).reshape(-1, dim),
        np.array(atom_w),
        np.concatenate(nodes) if nodes else np.zeros((0, dim)),
        np.concatenate(vals) if vals else np.zeros(0),
        np.concatenate(qws) if qws else np.zeros(0),
        "sum-of-laplacians",
    )


def measure_from_spec(spec: Mapping[str, Any], sigma: float | None = None) -> SpectralMeasure:
    """Build a validated measure from its JSON description.

    Parameters
    ----------
    spec : mapping
        ``{"dimension": N, "atoms": [{"direction": [...], "weight": w}, ...],
        "density": {"kind": ...}}``. Density kinds:

        * ``"isotropic"`` with ``"value"`` (default 1) or
          ``"normalization": "fractional-laplacian"`` (symbol |xi|^sigma);
          optional ``"nodes"`` sets the quadrature size.
        * ``"samples"`` with ``"values"`` and optionally ``"nodes"`` and
          ``"weights"``; without nodes the default quadrature of matching size
          is used.
        * ``"sum-of-laplacians"`` with ``"blocks"``.
    sigma : float, optional
        Needed by the normalizations that depend on the order.

    Returns
    -------
    SpectralMeasure

    Raises
    ------
    ValidationError
        With a message naming the offending entry.
    """
    if not isinstance(spec, Mapping):
        raise ValidationError("measure: expected a JSON object")
    if "dimension" not in spec:
        raise ValidationError("dimension: missing")
    dim = spec["dimension"]
    if isinstance(dim, bool) or not isinstance(dim, (int, np.integer)) or dim < 1:
        raise ValidationError(f"dimension: must be an integer >= 1, got {dim!r}")
    dim = int(dim)
    atoms = spec.get("atoms", []) or []
    density = spec.get("density")
    if not atoms and density is None:
        raise ValidationError("measure: needs at least one of 'atoms' or 'density'")

    atom_dirs = np.zeros((0, dim))
    atom_w = np.zeros(0)
    if atoms:
        dirs, wts = [], []
        for i, atom in enumerate(atoms):
            if not isinstance(atom, Mapping) or "direction" not in atom or "weight" not in atom:
                raise ValidationError(f"atoms[{i}]: needs 'direction' and 'weight'")
            d = np.asarray(atom["direction"], dtype=float).reshape(-1)
            if d.shape != (dim,):
                raise ValidationError(f"atoms[{i}].direction: expected {dim} components, got {d.size}")
            w = float(atom["weight"])
            if w < 0:
                raise ValidationError(f"atoms[{i}].weight: negative weight {w!r}")
            dirs.append(d)
            wts.append(w)
        atom_dirs, atom_w = np.array(dirs), np.array(wts)

    nodes = np.zeros((0, dim))
    vals = np.zeros(0)
    qw = np.zeros(0)
    label = "atoms"
    if density is not None:
        if not isinstance(density, Mapping) or "kind" not in density:
            raise ValidationError("density: expected an object with a 'kind'")
        kind = density["kind"]
        if kind == "isotropic":
            norm = density.get("normalization")
            n = density.get("nodes")
            if norm is not None:
                if norm != "fractional-laplacian":
                    raise ValidationError(f"density.normalization: unknown value {norm!r}")
                if sigma is None:
                    raise ValidationError("density.normalization: 'fractional-laplacian' needs sigma")
                base = fractional_laplacian_measure(dim, sigma, n)
            else:
                value = float(density.get("value", 1.0))
                if value < 0:
                    raise ValidationError(f"density.value: negative value {value!r}")
                base = isotropic_measure(dim, value, n)
            nodes, vals, qw, label = base.density_nodes, base.density_values, base.quadrature_weights, base.label
        elif kind == "samples":
            if "values" not in density:
                raise ValidationError("density.values: missing")
            vals = np.asarray(density["values"], dtype=float).reshape(-1)
            if "nodes" in density:
                nodes = _as_matrix(density["nodes"], dim, "density.nodes")
                if "weights" not in density:
                    raise ValidationError("density.weights: required when nodes are given")
                qw = np.asarray(density["weights"], dtype=float).reshape(-1)
            else:
                nodes, qw = sphere_quadrature(dim, vals.size if dim > 1 else None)
            if vals.size != nodes.shape[0] or qw.size != nodes.shape[0]:
                raise ValidationError(
                    f"density: {nodes.shape[0]} nodes, {vals.size} values and {qw.size} weights differ"
                )
            label = "samples"
        elif kind == "sum-of-laplacians":
            if sigma is None:
                raise ValidationError("density: 'sum-of-laplacians' needs sigma")
            blocks = density.get("blocks")
            if not isinstance(blocks, (list, tuple)) or not blocks:
                raise ValidationError("density.blocks: expected a non-empty list")
            if sum(int(b) for b in blocks) != dim:
                raise ValidationError(f"density.blocks: sizes {list(blocks)} do not sum to dimension {dim}")
            base = sum_of_laplacians_measure(blocks, sigma, density.get("nodes"))
            if atom_w.size:
                atom_dirs = np.concatenate([atom_dirs, base.atom_directions])
                atom_w = np.concatenate([atom_w, base.atom_weights])
            else:
                atom_dirs, atom_w = base.atom_directions, base.atom_weights
            nodes, vals, qw, label = base.density_nodes, base.density_values, base.quadrature_weights, base.label
        else:
            raise ValidationError(f"density.kind: unknown kind {kind!r}")
    return SpectralMeasure(dim, atom_dirs, atom_w, nodes, vals, qw, label)


# ----------------------------------------------------------------------
# ellipticity


def direction_grid(measure: SpectralMeasure, n: int | None = None) -> np.ndarray:
    """Deterministic candidate directions for minimizing the moment.

    Uniform half-circle angles (N = 2), a Fibonacci grid (N = 3) or seeded
    samples (N >= 4), augmented with coordinate axes and with directions
    orthogonal to the atoms, where minima of the moment tend to sit.
    """
    dim = measure.dimension
    if dim == 1:
        return np.ones((1, 1))
    atoms = measure.atom_directions
    extra = [np.eye(dim)]
    if dim == 2:
        n = 4096 if n is None else int(n)
        ang = math.pi * np.arange(n) / n
        extra.append(np.column_stack([np.cos(ang), np.sin(ang)]))
        if atoms.shape[0]:
            extra.append(np.column_stack([-atoms[:, 1], atoms[:, 0]]))
    elif dim == 3:
        extra.append(fibonacci_sphere(8192 if n is None else int(n)))
        if atoms.shape[0] > 1:
            a = atoms[:200]
            i, j = np.triu_indices(a.shape[0], 1)
            cr = np.cross(a[i], a[j])
            nr = np.linalg.norm(cr, axis=1)
            extra.append(cr[nr > 1e-12] / nr[nr > 1e-12, None])
        if atoms.shape[0]:
            # a direction orthogonal to each atom
            trial = np.where(np.abs(atoms[:, :1]) < 0.9, np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]]))
            cr = np.cross(atoms, trial)
            extra.append(cr / np.linalg.norm(cr, axis=1, keepdims=True))
    else:
        rng = np.random.default_rng(_MC_SEED)
        g = rng.standard_normal((20000 if n is None else int(n), dim))
        extra.append(g / np.linalg.norm(g, axis=1, keepdims=True))
    return np.concatenate(extra, axis=0)


def ellipticity_lambda(
    measure: SpectralMeasure,
    sigma: float,
    n_directions: int | None = None,
    refine: bool = True,
    rtol: float = DEGENERACY_RTOL,
) -> float:
    r"""Ellipticity :math:`\hat\lambda = \min_\zeta \int |\zeta\cdot\theta|^\sigma d\mu`.

    The minimum is taken over :func:`direction_grid` and then polished by a
    bounded local search around the best candidates (``refine=True``).

    Raises
    ------
    DegenerateMeasureError
        If the minimum is below ``rtol * total_mass``.
    """
    sigma = check_order(sigma)
    grid = direction_grid(measure, n_directions)
    vals = measure.moment(grid, sigma)
    best = float(vals.min())
    dim = measure.dimension
    if refine and dim >= 2 and best > 0:
        order = np.argsort(vals)[:4]
        for k in order:
            z0 = grid[k]
            if dim == 2:
                phi0 = math.atan2(z0[1], z0[0])
                step = math.pi / (n_directions or 4096)
                res = optimize.minimize_scalar(
                    lambda p: float(measure.moment(np.array([math.cos(p), math.sin(p)]), sigma)),
                    bounds=(phi0 - 2 * step, phi0 + 2 * step),
                    method="bounded",
                    options={"xatol": 1e-12},
                )
                best = min(best, float(res.fun))
            else:

                def obj(v):
                    nv = np.linalg.norm(v)
                    return float(measure.moment(v / nv, sigma)) if nv > 0 else np.inf

                res = optimize.minimize(obj, z0, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14})
                best = min(best, float(res.fun))
    if best < rtol * measure.total_mass:
        raise DegenerateMeasureError(
            f"degenerate measure: min moment {best:.3e} below {rtol:g} * mass; "
            "the measure is supported in a proper subspace"
        )
    return best
