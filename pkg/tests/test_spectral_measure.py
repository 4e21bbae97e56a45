import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aniso_heat import (
    DegenerateMeasureError,
    SpectralMeasure,
    ValidationError,
    ellipticity_lambda,
    isotropic_measure,
    measure_from_spec,
    total_mass,
)
from aniso_heat.spectral_measure import sphere_quadrature


def test_atoms_mass():
    mu = measure_from_spec({"dimension": 2, "atoms": [{"direction": [1, 0], "weight": 1}, {"direction": [0, 1], "weight": 1}]})
    assert total_mass(mu) == 2.0


def test_atom_weights_sum():
    mu = measure_from_spec({"dimension": 2, "atoms": [{"direction": [1, 0], "weight": 2}, {"direction": [0, 1], "weight": 3}]})
    assert total_mass(mu) == 5.0


def test_isotropic_mass_is_circle_length():
    mu = measure_from_spec({"dimension": 2, "density": {"kind": "isotropic", "value": 1}})
    assert abs(total_mass(mu) - 2 * math.pi) <= 1e-8


def test_negative_weight_rejected():
    with pytest.raises(ValidationError, match=r"atoms\[0\]"):
        measure_from_spec({"dimension": 2, "atoms": [{"direction": [1, 0], "weight": -1}]})


def test_empty_measure_rejected():
    with pytest.raises(ValidationError):
        measure_from_spec({"dimension": 2})


def test_unit_directions_enforced():
    with pytest.raises(ValidationError):
        SpectralMeasure(2, np.array([[2.0, 0.0]]), np.array([1.0]), np.zeros((0, 2)), np.zeros(0), np.zeros(0))


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_sphere_quadrature_nodes_are_unit(dim):
    nodes, w = sphere_quadrature(dim)
    assert np.allclose(np.linalg.norm(nodes, axis=1), 1.0, atol=1e-12)
    assert np.all(w > 0)


def test_ellipticity_coordinate_atoms():
    # oracle: min over S^1 of |z1| + |z2| is 1, attained at the axes
    mu = measure_from_spec({"dimension": 2, "atoms": [{"direction": [1, 0], "weight": 1}, {"direction": [0, 1], "weight": 1}]})
    assert abs(ellipticity_lambda(mu, 1.0) - 1.0) <= 1e-6


def test_ellipticity_isotropic():
    # oracle: int_0^{2 pi} |cos phi| dphi = 4
    assert abs(ellipticity_lambda(isotropic_measure(2, 1.0), 1.0) - 4.0) <= 1e-6


def test_single_atom_is_degenerate():
    mu = measure_from_spec({"dimension": 2, "atoms": [{"direction": [1, 0], "weight": 1}]})
    with pytest.raises(DegenerateMeasureError):
        ellipticity_lambda(mu, 1.0)


def _random_atoms(angles, weights):
    dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    return SpectralMeasure(2, dirs, np.asarray(weights), np.zeros((0, 2)), np.zeros(0), np.zeros(0))


angles = st.lists(st.floats(0, 2 * math.pi), min_size=3, max_size=6)


@settings(max_examples=25, deadline=None)
@given(angles, st.floats(0.3, 1.9), st.floats(0, 2 * math.pi))
def test_ellipticity_rotation_invariant(ang, sigma, rot):
    ang = np.array(ang)
    # well-spread directions keep the measure non-degenerate
    ang = ang[: 1] if ang.size < 1 else ang
    ang = np.concatenate([ang, [0.0, math.pi / 2]])
    w = np.linspace(1.0, 2.0, ang.size)
    mu = _random_atoms(ang, w)
    R = np.array([[math.cos(rot), -math.sin(rot)], [math.sin(rot), math.cos(rot)]])
    a = ellipticity_lambda(mu, sigma)
    b = ellipticity_lambda(mu.rotated(R), sigma)
    assert abs(a - b) <= 1e-6 * max(1.0, a)


@settings(max_examples=25, deadline=None)
@given(angles, st.floats(0.3, 1.9))
def test_ellipticity_bounded_by_mass_and_doubles(ang, sigma):
    ang = np.concatenate([np.array(ang), [0.0, math.pi / 2]])
    mu = _random_atoms(ang, np.ones(ang.size))
    lam = ellipticity_lambda(mu, sigma)
    assert 0 < lam <= total_mass(mu)
    assert total_mass(mu.scaled(2.0)) == 2 * total_mass(mu)
    assert ellipticity_lambda(mu.scaled(2.0), sigma) == pytest.approx(2 * lam, rel=1e-12)
