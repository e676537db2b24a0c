"""Gate at small alpha + strong-run monitor sanity."""
import math

import numpy as np

from bioconvect.domain import Domain, DomainSpec, ScalarField, VectorField
from bioconvect.operators import build_bases
from bioconvect.config import (DomainSpec as _DS,)  # noqa
from bioconvect import config as cfgmod
from bioconvect.stationary import solve_malpha
from bioconvect import estimates as est
from bioconvect import evolution as evo

dom = Domain(DomainSpec(Lx=2 * math.pi, H=1.0, Nx=48, Nz=40))
theta, U = 1.0, 0.05
alpha = 0.01
visc = cfgmod.ViscosityModel(nu0=0.7, nu1=1.0, kind="tanh", slope=1.0, center=0.5)
basis = build_bases(dom, 12, theta, U)
cc = est.estimate_chain_constants(basis, theta, U, visc, samples=32, seed=0)
malpha = solve_malpha(dom, theta, U, alpha)
zero = np.zeros((dom.Nx, dom.Nz))
u0 = VectorField(zero.copy(), zero.copy(), dom)
eta0 = ScalarField(zero.copy(), dom)
rep = est.global_smallness_check(basis, theta, U, alpha, visc, malpha, u0, eta0,
                                 f_sup_sq=0.0, constants=cc)
print(f"alpha={alpha}: passed={rep.passed} beta={rep.beta:.4e} z2={rep.z2:.4e} d5={rep.d5:.4e}")
for cnd in rep.conditions:
    mark = "ok " if cnd.passed else "FAIL"
    print(f"  [{mark}] {cnd.name:28s} lhs={cnd.lhs:.4e} rhs={cnd.rhs:.4e} "
          f"margin_ratio={cnd.rhs / cnd.lhs if cnd.lhs > 0 else float('inf'):.2f}")
assert rep.passed, "zero-data small-alpha gate must pass"

# small nonzero initial data still passing
rng = np.random.default_rng(3)
n = basis.n
c0 = 2e-4 * rng.standard_normal(n) * 0.75 ** np.arange(n)
d0 = 2e-4 * rng.standard_normal(n) * 0.75 ** np.arange(n)
u0f = basis.reconstruct_velocity(c0)
e0f = basis.reconstruct_scalar(d0)
rep2 = est.global_smallness_check(basis, theta, U, alpha, visc, malpha, u0f, e0f,
                                  f_sup_sq=0.0, constants=cc)
print(f"\nsmall nonzero data: passed={rep2.passed} pi0={rep2.pi0:.4e} beta/4={rep2.beta/4:.4e}")
for cnd in rep2.conditions:
    if not cnd.passed:
        print(f"  [FAIL] {cnd.name:28s} lhs={cnd.lhs:.4e} rhs={cnd.rhs:.4e}")
assert rep2.passed

print("\n== strong run + monitors ==")
cfg = cfgmod.SimConfig(
    domain=DomainSpec(Lx=2 * math.pi, H=1.0, Nx=48, Nz=40),
    theta=theta, U=U, alpha=alpha, viscosity=visc,
    n=12, dt=2e-3, t_end=0.3, scheme="strong",
    forcing=cfgmod.ForcingSpec(kind="none"),
    surface_stress=cfgmod.SurfaceStressSpec(kind="none"),
    initial=cfgmod.InitialConditionSpec(kind="zero"),
    save_every=10, seed=0,
)
state0 = evo.initial_projection(u0f, e0f, basis, variant="strong")
ws = evo.make_workspace(basis, cfg, malpha=malpha, state0=state0)
traj = evo.integrate(state0, cfg, ws)
print(f"integrated to t={traj.final_state().t}, saves={len(traj.states)}, "
      f"blown_up={traj.blown_up}")

# window inputs from the envelope machinery
ts = traj.times
u0_sq = float(np.sum(state0.c**2))
z0_sq = float(np.sum((state0.d + state0.d0) ** 2))
spec = est.build_envelope_spec(basis, theta, U, visc.nu0, alpha,
                               u0_sq=u0_sq, z0_sq=z0_sq, times=ts, f_sq=0.0)
eta0n_sq = float(np.sum(state0.d0**2))
a1_eta0n_sq = float(np.sum((basis.concentration.eigenvalues * state0.d0) ** 2))
wi = est.build_window_inputs(spec, cc, ts, 0.0, malpha, eta0n_sq, a1_eta0n_sq)
print(f"window inputs: eps={wi.epsilon:.4e} c_eps={wi.c_eps:.4e} c_eta0={wi.c_eta0:.4e} "
      f"h0={wi.h[0]:.4e} g0={wi.g[0]:.4e}")
phi0 = 0.5 * float(np.sum(basis.stokes.eigenvalues * state0.c**2))
wres = est.bootstrap_window(phi0, ts, wi.h, wi.g, cc.c_generic.value)
print(f"T* = {wres.t_star:.6e} (horizon={wres.hit_horizon}) attained={wres.attained:.4e}")
assert wres.t_star > 0

mon = est.monitor_strong_estimates(traj, ws, constants=cc, t_star=wres.t_star)
print(f"monitor: passed={mon.passed} h1_passed={mon.h1_passed} "
      f"h1_min_margin={mon.h1_min_margin:.4e}")
print(f"  grad4_window_passed={mon.grad4_window_passed} "
      f"grad4_max={mon.grad4_max_in_window} dteta_max={mon.dteta_surrogate_max:.4e}")
print(f"  max grad_xi_l4 over run: {np.max(mon.grad_xi_l4):.4e}")
assert mon.h1_passed
assert mon.dteta_finite
if mon.grad4_window_passed is not None:
    assert mon.grad4_window_passed

# xi(0) = 0 exactly: H1 bound row 0 must be 0 = 0
assert mon.grad_xi_sq[0] == 0.0 and mon.h1_bound[0] == 0.0

print("\nALL STRONG MONITOR SANITY CHECKS PASSED")
