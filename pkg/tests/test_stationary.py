"""Stationary-state tests: the stratified profile and the coupled fixed point.

The stratified profile has a separable closed form, so most checks here are
direct comparisons; the coupled solver is checked against the fixed points
it must reproduce exactly (rest states) and against its own contraction.
"""

import math

import numpy as np
import pytest

from bioconvect.config import ViscosityModel
from bioconvect.domain import DomainSpec, make_domain
from bioconvect import operators as ops
from bioconvect import stationary as st

DOM = make_domain(DomainSpec(Lx=2 * math.pi, H=1.0, Nx=48, Nz=48))
THETA, U, ALPHA = 0.9, 0.12, 1.3


class TestStratifiedProfile:
    def test_matches_closed_form(self):
        m = st.solve_malpha(DOM, THETA, U, ALPHA)
        exact = st.malpha_closed_form(DOM, THETA, U, ALPHA)
        err = np.max(np.abs(m.profile - exact))
        print(f"profile vs closed form: {err:.3e}")
        assert err < 1e-12

    def test_zero_swim_limit_is_uniform(self):
        m0 = st.solve_malpha(DOM, THETA, 0.0, ALPHA)
        assert np.max(np.abs(m0.profile - ALPHA / DOM.area)) < 1e-13

    def test_mass_and_positivity(self):
        m = st.solve_malpha(DOM, THETA, U, ALPHA)
        assert abs(m.mean * DOM.area - ALPHA) < 1e-12 * ALPHA
        assert np.all(m.profile > 0)

    def test_deviation_scales_linearly_in_alpha(self):
        m1 = st.solve_malpha(DOM, THETA, U, ALPHA)
        m2 = st.solve_malpha(DOM, THETA, U, 2 * ALPHA)
        err = np.max(np.abs(m2.eta_profile() - 2 * m1.eta_profile()))
        assert err < 1e-12

    def test_gradient_norm_analytic(self):
        """Quadrature cross-check: the profile is A*exp(r z) with r = U/theta."""
        m = st.solve_malpha(DOM, THETA, U, ALPHA)
        r = U / THETA
        A = ALPHA * r / (DOM.Lx * math.expm1(r * DOM.H))
        exact = A * r * math.sqrt(DOM.Lx * math.expm1(2 * r * DOM.H) / (2 * r))
        assert abs(m.grad_l2() - exact) < 1e-12

    def test_bound_certificates(self):
        m = st.solve_malpha(DOM, 1.0, 0.05, 1.0)
        rep = st.verify_malpha_bounds(m)
        assert rep["passed"]
        by_name = {}
        for b in rep["bounds"]:
            print(f"{b.name}: lhs={b.lhs:.6g} rhs={b.rhs:.6g} margin={b.margin:.3g}")
            assert b.passed
            assert b.constant_provenance
            by_name[b.name] = b
        # the gradient and laplacian bounds carry a genuine factor-2 slack;
        # the interpolation identity saturates, so only round-off is asked of it
        assert by_name["grad_l2"].margin > 0
        assert by_name["lap_l2"].margin > 0
        assert by_name["lap_vs_grad_intermediate"].margin > -1e-10

    @pytest.mark.parametrize("swim", [0.01, 0.05, 0.1])
    def test_bounds_across_swim_speeds(self, swim):
        rep = st.verify_malpha_bounds(st.solve_malpha(DOM, 1.0, swim, 1.0))
        assert rep["passed"], f"bounds failed at U={swim}"

    def test_grad_l4_decreasing_in_swim_speed(self):
        g4 = [st.solve_malpha(DOM, 1.0, u, 1.0).grad_l4() for u in (0.1, 0.05, 0.025)]
        print("grad_l4 at U=0.1, 0.05, 0.025:", [f"{v:.6g}" for v in g4])
        assert g4[0] > g4[1] > g4[2] > 0


VISC = ViscosityModel(kind="tanh", nu0=0.5, nu1=1.0, slope=0.8, center=ALPHA / DOM.area)


class TestCoupledFixedPoint:
    def test_rest_state_no_swim(self):
        basis = ops.build_bases(DOM, 10, THETA, 0.0)
        sol = st.solve_stationary(basis, THETA, 0.0, ALPHA, VISC)
        assert sol.converged
        assert np.max(np.abs(sol.u.ux)) < 1e-12 and np.max(np.abs(sol.u.uz)) < 1e-12
        assert np.max(np.abs(sol.m.values - ALPHA / DOM.area)) < 1e-10
        assert sol.iterations <= 3, f"rest state should converge immediately, took {sol.iterations}"

    def test_rest_state_with_swim_matches_profile(self):
        """Two routes to the same state: Picard in the eigenbases vs the 1d profile.

        The solver can only represent the profile through the truncated basis,
        so the fair comparison is against the basis projection of the profile,
        which is three orders sharper than the raw truncation gap.
        """
        n = 10
        basis = ops.build_bases(DOM, n, THETA, U)
        sol = st.solve_stationary(basis, THETA, U, ALPHA, VISC)
        m = st.solve_malpha(DOM, THETA, U, ALPHA)
        assert sol.converged
        assert max(np.max(np.abs(sol.u.ux)), np.max(np.abs(sol.u.uz))) < 1e-10
        prof2d = np.broadcast_to(m.profile, (DOM.Nx, DOM.Nz))
        eta2d = prof2d - ALPHA / DOM.area
        c = basis.concentration
        coeffs = np.array([DOM.integrate(eta2d * c.fields[i]) for i in range(n)])
        proj = ALPHA / DOM.area + np.einsum("i,ixz->xz", coeffs, c.fields)
        gap_raw = np.max(np.abs(sol.m.values - prof2d))
        gap_proj = np.max(np.abs(sol.m.values - proj))
        print(f"vs profile {gap_raw:.3e}, vs its basis projection {gap_proj:.3e}")
        assert gap_proj < 1e-4
        assert gap_proj < 0.01 * gap_raw, "solver should saturate the basis, not the grid"
        assert abs(sol.mass - ALPHA) / ALPHA < 1e-10

    def test_forced_convection_cell(self):
        basis = ops.build_bases(DOM, 10, THETA, U)
        kap = 2 * math.pi / DOM.Lx
        fz = 0.02 * np.cos(kap * DOM.x)[:, None] * np.sin(math.pi * DOM.z / DOM.H)[None, :]
        sol = st.solve_stationary(basis, THETA, U, ALPHA, VISC,
                                  f=(np.zeros_like(fz), fz))
        assert sol.converged
        assert sol.residual_velocity < 1e-9 and sol.residual_concentration < 1e-9
        assert np.max(np.abs(sol.u.uz)) > 1e-4, "forcing should drive a visible cell"
        assert abs(sol.mass - ALPHA) / ALPHA < 1e-10
        # Picard contraction: successive increments shrink roughly geometrically
        incs = [t["increment_velocity"] + t["increment_concentration"] for t in sol.trace]
        ratios = [incs[i + 1] / incs[i]
                  for i in range(1, min(6, len(incs) - 1)) if incs[i] > 0]
        print("contraction ratios:", [f"{r:.3g}" for r in ratios])
        assert all(r < 1.0 for r in ratios)

    def test_forced_solution_resolution_consistency(self):
        """The contraction's answer is the problem's, not the basis size's:
        successive enlargements agree ever more closely."""
        kap = 2 * math.pi / DOM.Lx

        def solve_at(nmodes):
            basis = ops.build_bases(DOM, nmodes, THETA, U)
            fz = 0.02 * np.cos(kap * DOM.x)[:, None] * np.sin(math.pi * DOM.z / DOM.H)[None, :]
            return st.solve_stationary(basis, THETA, U, ALPHA, VISC,
                                       f=(np.zeros_like(fz), fz))

        def gap(a, b):
            return max(np.max(np.abs(a.u.ux - b.u.ux)), np.max(np.abs(a.u.uz - b.u.uz)))

        s8, s16, s22 = solve_at(8), solve_at(16), solve_at(22)
        g1, g2 = gap(s8, s16), gap(s16, s22)
        size = np.max(np.abs(s22.u.uz))
        print(f"gaps {g1:.3e} -> {g2:.3e} against amplitude {size:.3e}")
        assert g2 < 0.01 * g1, "enlarging the basis must stop changing the answer"
        assert g2 < 1e-3 * size

    def test_divergence_and_trace(self):
        basis = ops.build_bases(DOM, 10, THETA, U)
        sol = st.solve_stationary(basis, THETA, U, ALPHA, VISC)
        assert np.max(np.abs(sol.u.divergence())) < 1e-8
        assert sol.trace, "iteration trace must be recorded"
        assert {"residual_velocity", "residual_concentration"} <= set(sol.trace[0])

    def _hard_forcing(self):
        # a cell force at large amplitude; a uniform vertical force would be
        # a pure gradient and be projected away entirely. The contraction is
        # fast, so defeating it takes both amplitude and a tight iteration cap.
        kap = 2 * math.pi / DOM.Lx
        fz = 20.0 * np.cos(kap * DOM.x)[:, None] * np.sin(math.pi * DOM.z / DOM.H)[None, :]
        return (np.zeros_like(fz), fz)

    def test_nonconvergence_raises_with_trace(self):
        basis = ops.build_bases(DOM, 10, THETA, U)
        with pytest.raises(st.ConvergenceError) as err:
            st.solve_stationary(basis, THETA, U, ALPHA, VISC,
                                f=self._hard_forcing(), max_iter=3)
        assert err.value.trace, "failure must carry the iteration history"

    def test_nonstrict_returns_unconverged(self):
        basis = ops.build_bases(DOM, 10, THETA, U)
        sol = st.solve_stationary(basis, THETA, U, ALPHA, VISC,
                                  f=self._hard_forcing(), max_iter=3, strict=False)
        assert not sol.converged
        assert len(sol.trace) == 3

    def test_uniform_vertical_force_is_inert(self):
        """A constant body force is a gradient: the projected system ignores it."""
        basis = ops.build_bases(DOM, 10, THETA, U)
        fz = 50.0 * np.ones((DOM.Nx, DOM.Nz))
        sol = st.solve_stationary(basis, THETA, U, ALPHA, VISC,
                                  f=(np.zeros_like(fz), fz))
        assert sol.converged
        assert max(np.max(np.abs(sol.u.ux)), np.max(np.abs(sol.u.uz))) < 1e-8


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
