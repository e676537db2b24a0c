"""Time integration tests.

The stepper advances the Galerkin coefficients with an implicit treatment of
the diagonal dissipation and an explicit treatment of everything else; the
checks here pin down the structure that makes the energy accounting work:
skew advection, exact conserved mass, residual identities of second order in
the step, and honest blow-up reporting.
"""

import csv
import json
import math

import numpy as np
import pytest

from bioconvect.config import (DomainSpec, ForcingSpec, InitialConditionSpec,
                               SimConfig, SurfaceStressSpec, ViscosityModel)
from bioconvect.domain import ScalarField, VectorField, make_domain
from bioconvect import evolution as ev
from bioconvect import operators as ops
from bioconvect import stationary as st

DOM = make_domain(DomainSpec(Lx=2 * math.pi, H=1.0, Nx=32, Nz=28))
N = 8
THETA, U, ALPHA = 1.0, 0.08, 1.0
VISC = ViscosityModel(kind="tanh", nu0=0.5, nu1=0.9, slope=0.7, center=ALPHA / DOM.area)
BASIS = ops.build_bases(DOM, N, THETA, U)
BASIS_NOSWIM = ops.build_bases(DOM, N, THETA, 0.0)


def cfg_for(scheme="weak", dt=2e-3, t_end=0.5, save_every=10, swim=U, **kw):
    base = dict(
        domain=DomainSpec(Lx=DOM.Lx, H=DOM.H, Nx=DOM.Nx, Nz=DOM.Nz),
        theta=THETA, U=swim, alpha=ALPHA, viscosity=VISC, n=N,
        dt=dt, t_end=t_end, scheme=scheme,
        forcing=ForcingSpec(), surface_stress=SurfaceStressSpec(),
        initial=InitialConditionSpec(kind="zero"), save_every=save_every, seed=0,
    )
    base.update(kw)
    return SimConfig(**base).validate()


def random_weak_state(seed=3, scale=0.05):
    rng = np.random.default_rng(seed)
    u0 = ops.leray_project(VectorField(scale * DOM.random_smooth(rng),
                                       scale * DOM.random_smooth(rng), DOM))
    z0 = ScalarField(scale * DOM.random_smooth(rng), DOM)
    return ev.initial_projection(u0, z0, BASIS, "weak")


class TestForms:
    def test_advection_skew_symmetry(self):
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(30):
            u = BASIS.reconstruct_velocity(rng.standard_normal(N) * 0.5)
            s = ScalarField(DOM.random_smooth(rng), DOM)
            v = BASIS.reconstruct_velocity(rng.standard_normal(N) * 0.3)
            scale = (np.max(np.abs(u.ux)) + np.max(np.abs(u.uz)) + 1) * (
                DOM.integrate(s.values**2) + 1)
            worst = max(worst, abs(ev.trilinear_advection(u, s, s)) / scale)
            worst = max(worst, abs(ev.trilinear_advection(u, v, v)) / scale)
        print(f"worst relative skew defect {worst:.3e}")
        assert worst < 1e-9

    def test_viscous_form_shear_oracle(self):
        # u = (z, 0) with unit viscosity: 2 nu |D(u)|^2 integrates to the area
        shear = VectorField(DOM.Z.copy(), np.zeros((DOM.Nx, DOM.Nz)), DOM)
        zero = ScalarField(np.zeros((DOM.Nx, DOM.Nz)), DOM)
        val = ev.viscous_form(zero, shear, shear, ViscosityModel(nu0=1.0))
        assert abs(val - DOM.area) < 1e-10

    def test_viscous_form_symmetric(self):
        rng = np.random.default_rng(4)
        m = ScalarField(ALPHA / DOM.area + 0.1 * DOM.random_smooth(rng), DOM)
        a = BASIS.reconstruct_velocity(rng.standard_normal(N))
        b = BASIS.reconstruct_velocity(rng.standard_normal(N))
        ab = ev.viscous_form(m, a, b, VISC)
        ba = ev.viscous_form(m, b, a, VISC)
        assert abs(ab - ba) < 1e-10 * max(1.0, abs(ab))


class TestInitialProjection:
    def test_eigenfield_projects_to_unit_coefficient(self):
        w3 = VectorField(BASIS.stokes.fields[3, 0].copy(),
                         BASIS.stokes.fields[3, 1].copy(), DOM)
        zero = ScalarField(np.zeros((DOM.Nx, DOM.Nz)), DOM)
        state = ev.initial_projection(w3, zero, BASIS, "weak")
        expect = np.zeros(N); expect[3] = 1.0
        assert np.max(np.abs(state.c - expect)) < 1e-8

    def test_projection_contracts(self):
        rng = np.random.default_rng(9)
        u0 = VectorField(DOM.random_smooth(rng), DOM.random_smooth(rng), DOM)
        s0 = ScalarField(DOM.random_smooth(rng), DOM)
        state = ev.initial_projection(u0, s0, BASIS, "weak")
        assert np.linalg.norm(state.c) <= math.sqrt(DOM.integrate(u0.ux**2 + u0.uz**2)) + 1e-12
        assert np.linalg.norm(state.d) <= math.sqrt(DOM.integrate(s0.values**2)) + 1e-12

    def test_regularity_variant_starts_from_zero_deviation(self):
        rng = np.random.default_rng(10)
        u0 = ops.leray_project(VectorField(0.02 * DOM.random_smooth(rng),
                                           0.02 * DOM.random_smooth(rng), DOM))
        eta0 = ScalarField(0.02 * DOM.random_smooth(rng), DOM)
        state = ev.initial_projection(u0, eta0, BASIS, "strong")
        assert np.all(state.d == 0.0), "the deviation unknown starts at zero"
        assert np.linalg.norm(state.d0) > 0, "the initial layer is kept separately"


class TestEquilibria:
    def test_uniform_state_is_fixed_point_without_swimming(self):
        cfg = cfg_for(swim=0.0, dt=1e-2, t_end=1.0)
        ws = ev.make_workspace(BASIS_NOSWIM, cfg)
        state0 = ev.GalerkinState(0.0, np.zeros(N), np.zeros(N), "weak", BASIS_NOSWIM)
        traj = ev.integrate(state0, cfg, ws)
        assert max(traj.diagnostics.norm_u) < 1e-12
        assert max(traj.diagnostics.norm_scalar) < 1e-12

    def test_swimming_relaxes_toward_stratification(self):
        """With swimming on, the uniform start drifts toward the stratified
        profile while conserving mass exactly."""
        cfg = cfg_for(dt=2e-3, t_end=1.0)
        ws = ev.make_workspace(BASIS, cfg)
        state0 = ev.GalerkinState(0.0, np.zeros(N), np.zeros(N), "weak", BASIS)
        traj = ev.integrate(state0, cfg, ws)
        drift = max(abs(m - ALPHA) for m in traj.diagnostics.mass)
        assert drift < 1e-12 * ALPHA
        assert traj.diagnostics.norm_scalar[-1] > 1e-6, "deviation should grow from zero"
        assert max(traj.diagnostics.norm_u) < 1e-10, "x-independent drift carries no flow"

    def test_strong_variant_zero_data_is_exact_fixed_point(self):
        cfg = cfg_for(scheme="strong", dt=2e-3, t_end=0.5)
        malpha = st.solve_malpha(DOM, THETA, U, ALPHA)
        state0 = ev.GalerkinState(0.0, np.zeros(N), np.zeros(N), "strong", BASIS,
                                  d0=np.zeros(N))
        ws = ev.make_workspace(BASIS, cfg, malpha=malpha, state0=state0)
        traj = ev.integrate(state0, cfg, ws)
        assert max(traj.diagnostics.norm_u) < 1e-10
        assert max(traj.diagnostics.norm_scalar) < 1e-10


class TestConservation:
    def test_mass_and_diagnostics_on_random_run(self):
        state0 = random_weak_state()
        cfg = cfg_for(dt=2e-3, t_end=1.0, save_every=25)
        ws = ev.make_workspace(BASIS, cfg)
        traj = ev.integrate(state0, cfg, ws)
        led = traj.diagnostics
        drift = max(abs(m - ALPHA) for m in led.mass) / ALPHA
        print(f"mass drift {drift:.3e}, div {max(led.div_max):.3e}, "
              f"skew {max(led.adv_skew):.3e}")
        assert drift < 1e-12
        assert max(led.div_max) < 1e-7
        assert max(led.adv_skew) < 1e-10
        assert traj.completed and not traj.blown_up

    def test_integrate_is_deterministic(self):
        runs = []
        for _ in range(2):
            cfg = cfg_for(dt=2e-3, t_end=0.3, save_every=10)
            ws = ev.make_workspace(BASIS, cfg)
            traj = ev.integrate(random_weak_state(), cfg, ws)
            runs.append(np.concatenate([traj.final_state().c, traj.final_state().d]))
        assert np.array_equal(runs[0], runs[1]), "reruns must agree bit for bit"


class TestAccuracy:
    def test_terminal_self_convergence_order(self):
        state0 = random_weak_state()
        ws = ev.make_workspace(BASIS, cfg_for())

        def terminal(dt):
            cfg = cfg_for(dt=dt, t_end=0.25, save_every=10**9)
            traj = ev.integrate(state0.copy(), cfg, ws)
            f = traj.final_state()
            return np.concatenate([f.c, f.d])

        ref = terminal(2.5e-4)
        errs = [np.linalg.norm(terminal(dt) - ref) for dt in (4e-3, 2e-3, 1e-3)]
        orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
        print("terminal errors", [f"{e:.3e}" for e in errs],
              "orders", [f"{o:.2f}" for o in orders])
        assert min(orders) > 1.7, f"stepper order degraded: {orders}"

    def test_energy_identity_residual_order(self):
        state0 = random_weak_state()
        ws = ev.make_workspace(BASIS, cfg_for())
        res = []
        for dt in (4e-3, 2e-3, 1e-3):
            cfg = cfg_for(dt=dt, t_end=0.2, save_every=1)
            traj = ev.integrate(state0.copy(), cfg, ws)
            res.append(max(abs(r) for r in traj.diagnostics.energy_residual[1:]))
        orders = [math.log2(res[i] / res[i + 1]) for i in range(2)]
        print("energy residuals", [f"{r:.3e}" for r in res],
              "orders", [f"{o:.2f}" for o in orders])
        assert min(orders) > 1.7


class TestVariantAgreement:
    def test_degenerate_right_hand_sides_agree(self):
        """With no swimming and a zero initial layer the two formulations
        integrate the same equations; their assembled slopes must agree."""
        rng = np.random.default_rng(21)
        malpha0 = st.solve_malpha(DOM, THETA, 0.0, ALPHA)
        u0 = ops.leray_project(VectorField(0.02 * DOM.random_smooth(rng),
                                           0.02 * DOM.random_smooth(rng), DOM))
        zero = ScalarField(np.zeros((DOM.Nx, DOM.Nz)), DOM)
        st_strong = ev.initial_projection(u0, zero, BASIS_NOSWIM, "strong")
        ws_s = ev.make_workspace(BASIS_NOSWIM, cfg_for(scheme="strong", swim=0.0),
                                 malpha=malpha0, state0=st_strong)
        ws_w = ev.make_workspace(BASIS_NOSWIM, cfg_for(swim=0.0))
        c = rng.standard_normal(N) * 0.1
        d = rng.standard_normal(N) * 0.1
        cw, dw = ev.build_weak_rhs(c, d, ws_w)
        cs, ds = ev.build_strong_rhs(c, d, ws_s)
        gap = max(np.max(np.abs(cw - cs)), np.max(np.abs(dw - ds)))
        print(f"degenerate rhs gap {gap:.3e}")
        assert gap < 1e-10

    def test_strong_run_conserves_mass_and_stays_small(self):
        rng = np.random.default_rng(22)
        malpha = st.solve_malpha(DOM, THETA, U, ALPHA)
        u0 = ops.leray_project(VectorField(0.02 * DOM.random_smooth(rng),
                                           0.02 * DOM.random_smooth(rng), DOM))
        eta0 = ScalarField(0.02 * DOM.random_smooth(rng), DOM)
        state0 = ev.initial_projection(u0, eta0, BASIS, "strong")
        cfg = cfg_for(scheme="strong", dt=2e-3, t_end=0.5, save_every=25)
        ws = ev.make_workspace(BASIS, cfg, malpha=malpha, state0=state0)
        traj = ev.integrate(state0, cfg, ws)
        led = traj.diagnostics
        assert max(abs(m - ALPHA) for m in led.mass) / ALPHA < 1e-10
        assert max(abs(r) for r in led.energy_residual[1:]) < 1e-4
        assert traj.completed


class TestBlowupAndStepControl:
    def test_blowup_flagged_not_raised(self):
        state0 = random_weak_state(scale=1.0)
        cfg = cfg_for(dt=2e-3, t_end=1.0, blowup_threshold=1e-3)
        ws = ev.make_workspace(BASIS, cfg)
        traj = ev.integrate(state0, cfg, ws)
        assert traj.blown_up and not traj.completed
        assert traj.blowup_time is not None and traj.blowup_time <= 1.0
        assert np.all(np.isfinite(traj.diagnostics.norm_u)), "diagnostics stay finite"

    def test_suggest_dt_scales_with_velocity(self):
        ws = ev.make_workspace(BASIS, cfg_for())
        slow = ev.GalerkinState(0.0, 0.01 * np.ones(N), np.zeros(N), "weak", BASIS)
        fast = ev.GalerkinState(0.0, 10.0 * np.ones(N), np.zeros(N), "weak", BASIS)
        dt_slow = ev.suggest_dt(ws, slow)
        dt_fast = ev.suggest_dt(ws, fast)
        assert 0 < dt_fast < dt_slow

    def test_exact_landing_on_horizon(self):
        # t_end deliberately not a multiple of dt
        cfg = cfg_for(dt=3e-3, t_end=0.01, save_every=1)
        ws = ev.make_workspace(BASIS, cfg)
        traj = ev.integrate(random_weak_state(), cfg, ws)
        assert abs(traj.times[-1] - 0.01) < 1e-14


class TestPersistence:
    def test_diagnostics_csv_roundtrip(self, tmp_path):
        cfg = cfg_for(dt=2e-3, t_end=0.1, save_every=5)
        ws = ev.make_workspace(BASIS, cfg)
        traj = ev.integrate(random_weak_state(), cfg, ws)
        path = tmp_path / "diagnostics.csv"
        ev.write_diagnostics_csv(traj.diagnostics, str(path))
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "norm_u", "norm_Du", "norm_scalar", "div_max",
                           "norm_A1_scalar", "mass", "energy_residual"]
        values = np.array(rows[1:], dtype=float)
        assert np.array_equal(values[:, 0], np.array(traj.diagnostics.times))
        # full-precision round trip of a representative column
        assert np.array_equal(values[:, 1], np.array(traj.diagnostics.norm_u))

    def test_summary_json(self, tmp_path):
        cfg = cfg_for(dt=2e-3, t_end=0.1, save_every=5)
        ws = ev.make_workspace(BASIS, cfg)
        traj = ev.integrate(random_weak_state(), cfg, ws)
        path = tmp_path / "summary.json"
        ev.write_summary_json(traj, str(path), extra={"tag": "unit"})
        data = json.loads(path.read_text())
        assert data["completed"] is True and data["blown_up"] is False
        assert data["tag"] == "unit"
        assert data["t_final"] == pytest.approx(0.1)
        assert {"norm_u_final", "norm_scalar_final", "mass_drift_max",
                "energy_residual_max"} <= set(data)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
