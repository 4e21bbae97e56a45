import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aniso_heat import (
    BlockPartition,
    SpatialGrid,
    ValidationError,
    closed_form_sigma1,
    decay_slope,
    gradient_ratio_bound,
    gradient_ratios,
    product_profile,
    shifted_average_difference,
)
from aniso_heat.kernel import _sphere_nodes


def test_phi_at_origin(product):
    # oracle: product of two Cauchy densities at 0
    assert abs(product.evaluate("phi", [[0.0, 0.0]])[0] - 1 / math.pi**2) <= 1e-4


def test_matches_grid_sumlap(sumlap_grid):
    # both paths share the periodic box, so periodization is identical
    g = sumlap_grid.grid
    same_box = product_profile(BlockPartition((1, 1), 1.0), [SpatialGrid(1, g.n, g.half_width)] * 2)
    mask = g.inner_mask()
    pts = g.points()[mask.reshape(-1)]
    grid_vals = sumlap_grid.phi[mask]
    prod_vals = same_box.evaluate("phi", pts)
    assert np.max(np.abs(prod_vals - grid_vals) / grid_vals) <= 1e-6


def test_blocks_have_unit_mass(product):
    for blk in product.blocks:
        assert abs(blk.phi.sum() * blk.grid.cell_volume - 1.0) <= 1e-8


def test_closed_form_origin():
    assert closed_form_sigma1(1)(np.array([0.0]))[0] == pytest.approx(1 / math.pi, rel=1e-15)


def test_closed_form_matches_fft(cauchy):
    w = np.linspace(-10, 10, 201)
    psi = closed_form_sigma1(1)
    assert np.max(np.abs(cauchy.evaluate("phi", w[:, None]) - psi(w))) <= 1e-4


@pytest.mark.parametrize("n", [1, 2, 3])
def test_closed_form_unit_mass(n):
    # radial integral |S^{n-1}| int_0^inf d_n (1 + r^2)^{-(n+1)/2} r^{n-1} dr
    from scipy import integrate

    from aniso_heat.constants import sphere_area

    psi = closed_form_sigma1(n)
    d = psi.normalization
    val, _ = integrate.quad(lambda r: r ** (n - 1) * (1 + r * r) ** (-(n + 1) / 2), 0, np.inf, epsabs=1e-13, epsrel=1e-13)
    assert abs(sphere_area(n) * d * val - 1.0) <= 1e-8


def test_closed_form_needs_sigma_one():
    with pytest.raises(ValidationError):
        closed_form_sigma1(1, 1.5)


def test_gradient_ratio_bound_finite_and_stable():
    part = BlockPartition((1, 1), 1.0)
    coarse = product_profile(part, [SpatialGrid(1, 2**17, 2048.0)] * 2)
    fine = product_profile(part, [SpatialGrid(1, 2**18, 2048.0)] * 2)
    a, b = gradient_ratio_bound(coarse), gradient_ratio_bound(fine)
    assert math.isfinite(a) and abs(a - b) <= 0.1 * a


def test_gradient_ratio_at_origin(product):
    x0 = np.zeros((1, 2))
    ratio = abs(product.evaluate("Lphi", x0)[0]) / product.evaluate("phi", x0)[0]
    assert np.linalg.norm(product.evaluate("grad_phi", x0)[0]) <= 1e-12
    # oracle: each Cauchy factor has |L Psi(0)| / Psi(0) = 1
    assert ratio == pytest.approx(2.0, rel=1e-4)
    assert gradient_ratios(product)["Lphi"] >= ratio * (1 - 1e-12)


def test_sharper_gradient_bound_on_axis_rays(product):
    c = gradient_ratio_bound(product)
    for d in ([1.0, 0.0], [0.0, 1.0], [math.sqrt(0.5), math.sqrt(0.5)]):
        r = np.linspace(0, 200, 101)
        pts = r[:, None] * np.array(d)[None, :]
        ratio = np.linalg.norm(product.evaluate("grad_phi", pts), axis=1) / product.evaluate("phi", pts)
        bound = c / np.sqrt(1 + np.min(pts**2, axis=1))
        assert np.all(ratio <= bound)


def test_axis_decay_is_anisotropic(product):
    assert abs(decay_slope(product, "phi", 3, 30, direction=[1.0, 0.0]) + 2.0) <= 0.15
    assert abs(decay_slope(product, "phi", 3, 30) + 3.0) <= 0.15


def test_shifted_difference_slope(product):
    phi = [math.cos(0.3), math.sin(0.3)]
    radii = np.geomspace(3, 30, 10)
    vals = [shifted_average_difference(product, r, 0.1, phi) for r in radii]
    assert np.polyfit(np.log(radii), np.log(vals), 1)[0] <= -3 + 0.15


@settings(max_examples=30, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50))
def test_log_phi_additive(product, x, y):
    blk0, blk1 = product.blocks
    want = math.log(blk0.evaluate("phi", [[x]])[0]) + math.log(blk1.evaluate("phi", [[y]])[0])
    assert math.log(product.evaluate("phi", [[x, y]])[0]) == pytest.approx(want, rel=1e-13, abs=1e-13)


def test_partition_validation():
    with pytest.raises(ValidationError):
        BlockPartition((0, 1), 1.0)
    with pytest.raises(ValidationError):
        product_profile(BlockPartition((4,), 1.0))
