"""Tests for the channel geometry, quadrature, and spectral calculus.

Covers:
- tensor-product quadrature against closed-form integrals
- Fourier and Gauss-Lobatto differentiation exactness
- Lp / H1 norms and the sampled interpolation inequalities
- field containers (divergence, symmetric gradient)
- flat-file serialization round trips
"""

import math
import os

import numpy as np
import pytest

from bioconvect.domain import (
    Domain,
    DomainSpec,
    ScalarField,
    VectorField,
    check_interpolation_inequalities,
    h1_norm,
    load_field,
    lp_norm,
    make_domain,
    save_field,
    sym_gradient,
)

DOM = make_domain(DomainSpec(Lx=2 * math.pi, H=1.0, Nx=48, Nz=40))


class TestQuadrature:
    def test_area_and_boundary(self):
        total = DOM.integrate(np.ones((DOM.Nx, DOM.Nz)))
        assert abs(total - DOM.area) < 1e-13, f"area quadrature off: {total}"
        assert abs(DOM.quadrature.boundary_length - 2 * DOM.Lx) < 1e-13

    def test_sin_squared_times_z(self):
        """Closed form: integral of sin^2(x) * z over the 2pi x 1 channel is pi/2."""
        vals = np.sin(DOM.X) ** 2 * DOM.Z
        got = DOM.integrate(vals)
        print(f"integral sin^2(x) z = {got:.15f} (exact {math.pi / 2:.15f})")
        assert abs(got - math.pi / 2) < 1e-10

    def test_line_integrals(self):
        # surface integral of cos^2(x) over either wall is Lx/2
        prof = np.cos(DOM.x) ** 2
        field = np.broadcast_to(prof[:, None], (DOM.Nx, DOM.Nz)).copy()
        top = DOM.integrate_gamma(field)
        bot = DOM.integrate_wall(field)
        assert abs(top - DOM.Lx / 2) < 1e-12, f"free-surface line integral {top}"
        assert abs(bot - DOM.Lx / 2) < 1e-12

    def test_inner_product_and_mean(self):
        a = np.sin(DOM.X)
        b = np.cos(DOM.X)
        assert abs(DOM.inner(a, b)) < 1e-12
        assert abs(DOM.mean(DOM.Z) - 0.5) < 1e-13


class TestDerivatives:
    def test_ddx_trig_exact(self):
        for k in (1, 3, 7):
            err = np.max(np.abs(DOM.ddx(np.sin(k * DOM.X)) - k * np.cos(k * DOM.X)))
            assert err < 1e-11 * k, f"ddx wavenumber {k}: err {err:.3e}"

    def test_ddz_polynomial_exact(self):
        vals = DOM.Z**5 - 2 * DOM.Z**2
        exact = 5 * DOM.Z**4 - 4 * DOM.Z
        err = np.max(np.abs(DOM.ddz(vals) - exact))
        print(f"ddz poly err {err:.3e}")
        assert err < 1e-11

    def test_second_derivative_and_laplacian(self):
        vals = np.cos(2 * DOM.X) * DOM.Z**3
        lap = DOM.laplacian(vals)
        exact = -4 * vals + np.cos(2 * DOM.X) * 6 * DOM.Z
        assert np.max(np.abs(lap - exact)) < 1e-9
        assert np.max(np.abs(DOM.d2dz2(DOM.Z**4) - 12 * DOM.Z**2)) < 1e-9

    def test_dealias_idempotent_and_band_preserving(self):
        low = np.cos(3 * DOM.X) * DOM.Z
        assert np.max(np.abs(DOM.dealias_x(low) - low)) < 1e-12
        high = np.cos((DOM.Nx // 2 - 1) * DOM.X)
        filtered = DOM.dealias_x(high)
        assert np.max(np.abs(filtered)) < 1e-12, "top-third mode should be removed"


class TestNorms:
    def test_l4_norm_of_sin(self):
        """lp_norm against the hand-computed fourth-power integral of sin."""
        f = ScalarField(np.sin(DOM.X).copy(), DOM)
        got = lp_norm(f, 4)
        exact = (3 * math.pi / 4) ** 0.25
        print(f"|sin|_4 = {got:.15f} exact {exact:.15f}")
        assert abs(got - exact) < 1e-10

    def test_l2_matches_inner(self):
        rng = np.random.default_rng(0)
        v = ScalarField(DOM.random_smooth(rng), DOM)
        assert abs(lp_norm(v, 2) ** 2 - DOM.integrate(v.values**2)) < 1e-12

    def test_h1_norm_constant_field(self):
        c = ScalarField(np.full((DOM.Nx, DOM.Nz), 2.0), DOM)
        # gradient part vanishes, so the H1 norm equals the L2 norm
        assert abs(h1_norm(c) - lp_norm(c, 2)) < 1e-12

    def test_vector_norms(self):
        u = VectorField(np.sin(DOM.X).copy(), np.zeros((DOM.Nx, DOM.Nz)), DOM)
        assert abs(lp_norm(u, 2) - math.sqrt(math.pi)) < 1e-10


def test_interpolation_inequality_battery():
    """100 random band-limited fields: no violations of the unit-constant bounds."""
    rep = check_interpolation_inequalities(DOM, samples=100, seed=0)
    print(f"c6 smallest admissible {rep['c6_smallest_admissible']:.4f}, "
          f"worst L3 margin {rep['worst_margin_l3']:.3e}, "
          f"worst L4 margin {rep['worst_margin_l4']:.3e}")
    assert rep["violations_l3"] == [], f"L3 violations at {rep['violations_l3']}"
    assert rep["violations_l4"] == [], f"L4 violations at {rep['violations_l4']}"
    assert rep["worst_margin_l4"] >= 0.0


def test_random_smooth_reproducible_and_bounded():
    a = DOM.random_smooth(np.random.default_rng(5), amplitude=0.3)
    b = DOM.random_smooth(np.random.default_rng(5), amplitude=0.3)
    assert np.array_equal(a, b), "same seed must give the same field"
    assert abs(np.max(np.abs(a)) - 0.3) < 1e-12


class TestFields:
    def test_divergence_of_analytic_field(self):
        ux = np.sin(DOM.X) * DOM.Z
        uz = np.cos(DOM.X) * DOM.Z**2
        u = VectorField(ux, uz, DOM)
        exact = np.cos(DOM.X) * DOM.Z + 2 * np.cos(DOM.X) * DOM.Z
        assert np.max(np.abs(u.divergence() - exact)) < 1e-9

    def test_sym_gradient_shear(self):
        # u = (z, 0): D(u) has off-diagonal 1/2, zero diagonal
        u = VectorField(DOM.Z.copy(), np.zeros((DOM.Nx, DOM.Nz)), DOM)
        D = sym_gradient(u)
        assert np.max(np.abs(D.xx)) < 1e-11
        assert np.max(np.abs(D.xz - 0.5)) < 1e-11
        assert np.max(np.abs(D.zz)) < 1e-11
        assert abs(DOM.integrate(D.frobenius_sq()) - 0.5 * DOM.area) < 1e-10

    def test_rejects_non_finite(self):
        bad = np.full((DOM.Nx, DOM.Nz), np.nan)
        with pytest.raises(ValueError):
            ScalarField(bad, DOM)

    def test_rejects_wrong_shape(self):
        with pytest.raises(ValueError):
            ScalarField(np.zeros((DOM.Nx, DOM.Nz + 1)), DOM)


class TestSerialization:
    def _roundtrip(self, f, prefix, fmt):
        save_field(f, prefix, fmt=fmt)
        return load_field(prefix)

    def test_scalar_bin_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        f = ScalarField(DOM.random_smooth(rng), DOM, name="sample", time=0.25)
        g = self._roundtrip(f, os.path.join(tmp_path, "s"), "bin")
        assert np.array_equal(f.values, g.values)
        assert g.name == "sample" and g.time == 0.25

    def test_vector_csv_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        f = VectorField(DOM.random_smooth(rng), DOM.random_smooth(rng), DOM, name="u")
        g = self._roundtrip(f, os.path.join(tmp_path, "v"), "csv")
        assert np.allclose(f.ux, g.ux, atol=0, rtol=0)
        assert np.allclose(f.uz, g.uz, atol=0, rtol=0)

    def test_layout_is_x_fastest(self, tmp_path):
        f = ScalarField(DOM.X.copy(), DOM)
        save_field(f, os.path.join(tmp_path, "l"), fmt="bin")
        raw = np.fromfile(os.path.join(tmp_path, "l.bin"), dtype="<f8")
        # first Nx entries are the x grid at the first z node
        assert np.array_equal(raw[: DOM.Nx], DOM.x)

    def test_domain_mismatch_rejected(self, tmp_path):
        f = ScalarField(np.zeros((DOM.Nx, DOM.Nz)), DOM)
        save_field(f, os.path.join(tmp_path, "m"))
        other = make_domain(DomainSpec(Lx=1.0, H=1.0, Nx=DOM.Nx, Nz=DOM.Nz))
        with pytest.raises(ValueError, match="mismatch"):
            load_field(os.path.join(tmp_path, "m"), domain=other)


def test_domain_spec_validation():
    with pytest.raises(ValueError):
        DomainSpec(Lx=-1.0, H=1.0, Nx=16, Nz=16).validate()
    with pytest.raises(ValueError):
        Domain(DomainSpec(Lx=1.0, H=1.0, Nx=2, Nz=16))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
