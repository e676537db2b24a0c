"""Eigenbasis and projection tests.

The velocity basis diagonalizes the Stokes operator under the mixed
wall/free-surface conditions; the concentration basis diagonalizes the
diffusion-with-drift operator under its flux condition.  Everything here
is checked against quadrature identities or separable closed forms.
"""

import functools
import math

import numpy as np
import pytest

from bioconvect.domain import DomainSpec, ScalarField, VectorField, make_domain, sym_gradient
from bioconvect import operators as ops

DOM = make_domain(DomainSpec(Lx=2 * math.pi, H=1.0, Nx=48, Nz=44))
THETA, U = 1.0, 0.05
N = 12


@functools.lru_cache(maxsize=None)
def bases(n=N, theta=THETA, swim=U):
    return ops.build_bases(DOM, n, theta, swim)


class TestStokesBasis:
    def test_orthonormal_and_ordered(self):
        s = bases().stokes
        gram_defect = np.max(np.abs(s.gram - np.eye(N)))
        print(f"stokes gram defect {gram_defect:.3e}")
        assert gram_defect < 1e-10
        assert np.all(s.eigenvalues > 0)
        assert np.all(np.diff(s.eigenvalues) >= -1e-10), "eigenvalues must be nondecreasing"

    def test_boundary_and_divergence_residuals(self):
        s = bases().stokes
        assert np.max(s.bc_residuals) < 1e-8, f"bc residual {np.max(s.bc_residuals):.3e}"
        assert np.max(s.div_residuals) < 1e-8

    def test_horizontal_mean_modes_closed_form(self):
        """k=0 shear modes: eigenvalues ((j+1/2) pi / H)^2 from the 1d problem."""
        s = bases().stokes
        found = 0
        for i, (k, _parity, j) in enumerate(s.mode_index):
            if k != 0:
                continue
            exact = ((j + 0.5) * math.pi / DOM.H) ** 2
            rel = abs(s.eigenvalues[i] - exact) / exact
            print(f"shear mode j={j}: ev={s.eigenvalues[i]:.10f} exact={exact:.10f} rel={rel:.2e}")
            assert rel < 1e-9
            found += 1
        assert found >= 1

    def test_dissipation_identity(self):
        # 2 (D(w_i), D(w_j)) = alpha_i delta_ij ties the eigenvalue to the form
        s = bases().stokes
        w = np.array([1.0, 2.0, 1.0])  # xx, xz (twice), zz
        dd = 2.0 * np.einsum("iaxz,jaxz,a,xz->ij", s.sym_grads, s.sym_grads, w,
                             DOM.quadrature.area)
        err = np.max(np.abs(dd - np.diag(s.eigenvalues)))
        assert err < 1e-8, f"dissipation identity err {err:.3e}"

    def test_stored_sym_grads_match_direct_differentiation(self):
        s = bases().stokes
        for i in (0, 3, N - 1):
            u = VectorField(s.fields[i, 0], s.fields[i, 1], DOM)
            D = sym_gradient(u)
            err = max(np.max(np.abs(D.xx - s.sym_grads[i, 0])),
                      np.max(np.abs(D.xz - s.sym_grads[i, 1])),
                      np.max(np.abs(D.zz - s.sym_grads[i, 2])))
            assert err < 1e-9, f"mode {i}: stored sym grad off by {err:.3e}"

    def test_eigenfield_property(self):
        s = bases().stokes
        for i in (0, 1, 4):
            u = VectorField(s.fields[i, 0], s.fields[i, 1], DOM)
            au, _, _ = ops.helmholtz_split_laplacian(u)
            res = max(np.max(np.abs(au.ux - s.eigenvalues[i] * u.ux)),
                      np.max(np.abs(au.uz - s.eigenvalues[i] * u.uz)))
            assert res / s.eigenvalues[i] < 1e-6, f"mode {i} residual {res:.3e}"

    def test_operator_symmetry(self):
        s = bases().stokes
        u1 = VectorField(s.fields[1, 0], s.fields[1, 1], DOM)
        u2 = VectorField(s.fields[4, 0], s.fields[4, 1], DOM)
        a1, _, _ = ops.helmholtz_split_laplacian(u1)
        a2, _, _ = ops.helmholtz_split_laplacian(u2)
        s12 = DOM.integrate(a1.ux * u2.ux + a1.uz * u2.uz)
        s21 = DOM.integrate(a2.ux * u1.ux + a2.uz * u1.uz)
        assert abs(s12 - s21) < 1e-8


class TestConcentrationBasis:
    def test_neumann_limit_spectrum(self):
        """Zero swim speed: separable spectrum theta*(k^2 + (j pi / H)^2)."""
        basis = bases(swim=0.0)
        c = basis.concentration
        exact = sorted(
            THETA * (k**2 + (j * math.pi / DOM.H) ** 2)
            for k in range(0, 10) for j in range(0, 10)
            for _ in range(2 if k >= 1 else 1)
            if (k, j) != (0, 0)
        )[:N]
        rel = np.max(np.abs(c.eigenvalues - np.array(exact)) / np.array(exact))
        print(f"neumann spectrum rel err {rel:.3e}")
        assert rel < 1e-6
        # pure Neumann eigenmodes are exactly mean free
        assert np.max(np.abs(c.means)) < 1e-9

    def test_swimming_basis_quality(self):
        c = bases().concentration
        assert np.max(np.abs(c.gram - np.eye(N))) < 1e-10
        assert np.all(c.eigenvalues > 0)
        assert np.all(np.diff(c.eigenvalues) >= -1e-10)
        assert np.max(c.bc_residuals) < 1e-6

    def test_modes_are_mean_free_with_drift(self):
        c = bases().concentration
        worst = np.max(np.abs(c.means))
        print(f"max |mode mean| at U={U}: {worst:.3e}")
        assert worst < 1e-9

    def test_mean_zero_projection_constant(self):
        """x-independent modes solve the diffusion eigenproblem up to a constant.

        The operator acts on the mean-free class, so the strong equation
        reads -theta*Lap(phi) = lambda*phi + c; integrating and using the
        flux condition pins c to the boundary trace of phi.
        """
        c = bases().concentration
        checked = 0
        for i, (k, _parity, _j) in enumerate(c.mode_index):
            if k != 0:
                continue
            phi = c.fields[i]
            resid = -THETA * DOM.laplacian(phi) - c.eigenvalues[i] * phi
            c_exact = -U * (DOM.integrate_gamma(phi) - DOM.integrate_wall(phi)) / DOM.area
            spread = np.max(np.abs(resid - c_exact))
            print(f"mode {i} (vertical): c={c_exact:.6e} spread={spread:.3e}")
            assert spread < 1e-5 * max(1.0, c.eigenvalues[i]), f"mode {i}"
            checked += 1
        assert checked >= 1, "expected at least one x-independent mode"

    def test_stiffness_boundary_identity(self):
        c = bases().concentration
        ident = c.stiffness - U * c.boundary_coupling - np.diag(c.eigenvalues)
        assert np.max(np.abs(ident)) < 1e-8

    def test_pointwise_operator_application(self):
        c = bases().concentration
        op = ops.ConcentrationOperator(DOM, THETA, U)
        for i in (0, 1, N - 1):
            phi = ScalarField(c.fields[i], DOM)
            res = np.max(np.abs(op.apply(phi).values - c.eigenvalues[i] * c.fields[i]))
            assert res / c.eigenvalues[i] < 1e-6


def test_bases_are_nested():
    """A smaller basis is the head of a larger one (same operator, same order)."""
    small = bases(n=6)
    big = bases(n=N)
    ev_err = np.max(np.abs(small.stokes.eigenvalues - big.stokes.eigenvalues[:6]))
    assert ev_err < 1e-9, f"stokes eigenvalue mismatch {ev_err:.3e}"
    f_err = np.max(np.abs(small.stokes.fields - big.stokes.fields[:6]))
    assert f_err < 1e-8, f"stokes field mismatch {f_err:.3e}"
    c_err = np.max(np.abs(small.concentration.fields - big.concentration.fields[:6]))
    assert c_err < 1e-8


def test_capacity_guard():
    with pytest.raises(ValueError, match="Nz"):
        ops.build_bases(DOM, (DOM.Nz - 2) // 2 + 1, THETA, U)


class TestLerayProjection:
    def test_idempotent_and_solenoidal(self):
        rng = np.random.default_rng(7)
        v = VectorField(DOM.random_smooth(rng), DOM.random_smooth(rng), DOM)
        pv = ops.leray_project(v)
        ppv = ops.leray_project(pv)
        rep = max(np.max(np.abs(ppv.ux - pv.ux)), np.max(np.abs(ppv.uz - pv.uz)))
        print(f"idempotency defect {rep:.3e}")
        assert rep < 1e-8
        assert np.max(np.abs(pv.divergence())) < 1e-7

    def test_annihilates_gradients(self):
        rng = np.random.default_rng(8)
        g = DOM.random_smooth(rng)
        grad = VectorField(DOM.ddx(g), DOM.ddz(g), DOM)
        pg = ops.leray_project(grad)
        mag = max(np.max(np.abs(pg.ux)), np.max(np.abs(pg.uz)))
        assert mag < 1e-7, f"projection of a gradient should vanish, got {mag:.3e}"

    def test_fixes_eigenfields(self):
        s = bases().stokes
        w = VectorField(s.fields[2, 0], s.fields[2, 1], DOM)
        pw = ops.leray_project(w)
        assert max(np.max(np.abs(pw.ux - w.ux)), np.max(np.abs(pw.uz - w.uz))) < 1e-8

    def test_orthogonality_of_removed_part(self):
        rng = np.random.default_rng(9)
        v = VectorField(DOM.random_smooth(rng), DOM.random_smooth(rng), DOM)
        pv = ops.leray_project(v)
        resid = VectorField(v.ux - pv.ux, v.uz - pv.uz, DOM)
        ip = DOM.integrate(resid.ux * pv.ux + resid.uz * pv.uz)
        assert abs(ip) < 1e-7 * DOM.integrate(v.ux**2 + v.uz**2)


class TestConstants:
    def test_poincare_velocity(self):
        cp, detail = ops.estimate_poincare(DOM, "velocity_on_S")
        exact = 2 * DOM.H / math.pi
        print(f"velocity poincare {cp:.12f} exact {exact:.12f}")
        assert abs(cp - exact) < 1e-8

    def test_poincare_mean_zero_scalar(self):
        cp, detail = ops.estimate_poincare(DOM, "mean_zero_scalar")
        # min(1, pi^2) = 1 from the first horizontal mode on the 2pi channel
        assert abs(cp - 1.0) < 1e-8

    def test_korn_constant(self):
        ck, detail = ops.estimate_korn(DOM)
        assert abs(ck - math.sqrt(2)) < 1e-6

    def test_swim_speed_smallness_verdict(self):
        rep = ops.estimate_constants(DOM, theta=1.0, U=0.05)
        verdict = rep.smallness["two_U_CP_less_theta"]
        assert verdict["passed"] and verdict["margin"] > 0
        tight = ops.check_smallness_U(theta=0.1, U=1.0, C_P=1.0)
        assert not tight.passed and tight.margin < 0

    def test_embedding_constants_finite(self):
        emb = ops.estimate_embedding_constants(bases(), samples=40, seed=1)
        for name, val in emb.items():
            assert np.isfinite(val) and val > 0, f"{name} = {val}"


def test_export_manifest(tmp_path):
    basis = bases(n=6)
    man = ops.export_basis(basis, str(tmp_path))
    assert man["n"] == 6
    assert len(man["stokes"]["eigenvalues"]) == 6
    assert len(man["concentration"]["eigenvalues"]) == 6
    assert "domain_hash" in man and "tolerances" in man
    files = {p.name for p in tmp_path.iterdir()}
    assert {"manifest.json", "stokes_fields.bin", "concentration_fields.bin"} <= files
    blocks = np.fromfile(tmp_path / "stokes_fields.bin", dtype="<f8")
    assert blocks.size == 6 * 2 * DOM.Nx * DOM.Nz


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
