import numpy as np

from bioconvect.domain import DomainSpec, ScalarField, VectorField, make_domain
from bioconvect.config import (DomainSpec as _DS, ForcingSpec, InitialConditionSpec,
                               SimConfig, SurfaceStressSpec, ViscosityModel)
from bioconvect import operators as ops
from bioconvect import stationary as st
from bioconvect import evolution as ev

dom = make_domain(DomainSpec(Lx=2 * np.pi, H=1.0, Nx=48, Nz=48))
n = 10
theta, U, alpha = 1.0, 0.08, 1.0
visc = ViscosityModel(kind="tanh", nu0=0.5, nu1=0.9, slope=0.7, center=alpha / dom.area)
basis = ops.build_bases(dom, n, theta, U)


def cfg_for(scheme, dt, t_end, save_every=1, forcing=None, stress=None):
    return SimConfig(
        domain=_DS(Lx=dom.Lx, H=dom.H, Nx=dom.Nx, Nz=dom.Nz),
        theta=theta, U=U, alpha=alpha, viscosity=visc, n=n,
        dt=dt, t_end=t_end, scheme=scheme,
        forcing=forcing or ForcingSpec(),
        surface_stress=stress or SurfaceStressSpec(),
        initial=InitialConditionSpec(kind="zero"),
        save_every=save_every, seed=0,
    ).validate()


# ---- trilinear skew symmetry ----
rng = np.random.default_rng(11)
worst = 0.0
for _ in range(20):
    cc = rng.standard_normal(n) * 0.5
    u = basis.reconstruct_velocity(cc)
    sc = ScalarField(dom.random_smooth(rng), dom)
    val = ev.trilinear_advection(u, sc, sc)
    scale = (np.linalg.norm(cc) + 1) * (dom.integrate(sc.values**2) + 1)
    worst = max(worst, abs(val) / scale)
    vv = basis.reconstruct_velocity(rng.standard_normal(n) * 0.3)
    val2 = ev.trilinear_advection(u, vv, vv)
    worst = max(worst, abs(val2) / scale)
print("trilinear skew worst:", worst)

# viscous_form hand oracle: u = (z, 0), nu = 1 -> 2*(1/2)^2*2*|Omega| = |Omega|
shear = VectorField(np.broadcast_to(dom.z, (dom.Nx, dom.Nz)).copy(), np.zeros((dom.Nx, dom.Nz)), dom)
one = ViscosityModel(nu0=1.0)
val = ev.viscous_form(ScalarField(np.zeros((dom.Nx, dom.Nz)), dom), shear, shear, one)
print("viscous_form shear oracle err:", abs(val - dom.area))

# ---- initial projection ----
w3 = VectorField(basis.stokes.fields[3, 0].copy(), basis.stokes.fields[3, 1].copy(), dom)
zero_s = ScalarField(np.zeros((dom.Nx, dom.Nz)), dom)
state = ev.initial_projection(w3, zero_s, basis, "weak")
e3 = np.zeros(n); e3[3] = 1.0
print("projection of w3 err:", np.max(np.abs(state.c - e3)))

s_r = ScalarField(dom.random_smooth(rng), dom)
u_r = VectorField(dom.random_smooth(rng), dom.random_smooth(rng), dom)
stt = ev.initial_projection(u_r, s_r, basis, "weak")
nrm_u0 = np.sqrt(dom.integrate(u_r.ux**2 + u_r.uz**2))
print("contraction |P u0| <= |u0|:", np.linalg.norm(stt.c) <= nrm_u0, np.linalg.norm(stt.c), nrm_u0)

# ---- equilibrium: zero data stays zero ----
cfg = cfg_for("weak", 1e-2, 1.0, save_every=10)
ws = ev.make_workspace(basis, cfg)
st0 = ev.GalerkinState(0.0, np.zeros(n), np.zeros(n), "weak", basis)
traj = ev.integrate(st0, cfg, ws)
print("equilibrium max norms:", max(traj.diagnostics.norm_u), max(traj.diagnostics.norm_scalar))
print("  (U>0: mean-deviation driven by swim source; mass drift:",
      max(abs(m - alpha) for m in traj.diagnostics.mass), ")")

# with U=0 the uniform state is an exact fixed point
basis0 = ops.build_bases(dom, n, theta, 0.0)
cfgU0 = SimConfig(domain=_DS(Lx=dom.Lx, H=dom.H, Nx=dom.Nx, Nz=dom.Nz), theta=theta, U=0.0,
                  alpha=alpha, viscosity=visc, n=n, dt=1e-2, t_end=1.0, scheme="weak",
                  save_every=10).validate()
ws0 = ev.make_workspace(basis0, cfgU0)
traj0 = ev.integrate(ev.GalerkinState(0.0, np.zeros(n), np.zeros(n), "weak", basis0), cfgU0, ws0)
print("U=0 equilibrium max norms:", max(traj0.diagnostics.norm_u), max(traj0.diagnostics.norm_scalar))

# ---- small random run: mass conservation + diagnostics ----
rng2 = np.random.default_rng(3)
u0 = ops.leray_project(VectorField(0.05 * dom.random_smooth(rng2), 0.05 * dom.random_smooth(rng2), dom))
z0 = ScalarField(0.05 * dom.random_smooth(rng2), dom)
st_w = ev.initial_projection(u0, z0, basis, "weak")
cfg2 = cfg_for("weak", 2e-3, 1.0, save_every=25)
traj2 = ev.integrate(st_w, cfg2, ws)
led = traj2.diagnostics
print("random run: mass drift rel:", max(abs(m - alpha) for m in led.mass) / alpha)
print("  div max:", max(led.div_max))
print("  adv skew max:", max(led.adv_skew))
print("  energy residual max:", max(abs(r) for r in led.energy_residual[1:]))
print("  final |u|:", led.norm_u[-1], "final |zeta|:", led.norm_scalar[-1])

# ---- temporal self-convergence of the scheme (order ~2) ----
def terminal(dt):
    c = cfg_for("weak", dt, 0.25, save_every=10**9)
    tr = ev.integrate(st_w.copy(), c, ws)
    f = tr.final_state()
    return np.concatenate([f.c, f.d])

y_ref = terminal(2.5e-4)
errs = [np.linalg.norm(terminal(dt) - y_ref) for dt in (4e-3, 2e-3, 1e-3)]
orders = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
print("self-convergence errors:", [f"{e:.3e}" for e in errs], "orders:", [f"{o:.2f}" for o in orders])

# ---- energy-identity residual order in dt ----
res = []
for dt in (4e-3, 2e-3, 1e-3):
    c = cfg_for("weak", dt, 0.2, save_every=1)
    tr = ev.integrate(st_w.copy(), c, ws)
    res.append(max(abs(r) for r in tr.diagnostics.energy_residual[1:]))
eorders = [np.log2(res[i] / res[i + 1]) for i in range(2)]
print("energy residual:", [f"{r:.3e}" for r in res], "orders:", [f"{o:.2f}" for o in eorders])

# ---- strong scheme: degenerate identity with weak scheme ----
basis0 = ops.build_bases(dom, n, theta, 0.0)
m_alpha0 = st.solve_malpha(dom, theta, 0.0, alpha)
eta0 = ScalarField(0.02 * dom.random_smooth(rng2), dom)
u00 = ops.leray_project(VectorField(0.02 * dom.random_smooth(rng2), 0.02 * dom.random_smooth(rng2), dom))
st_strong = ev.initial_projection(u00, ScalarField(np.zeros((dom.Nx, dom.Nz)), dom), basis0, "strong")
# degenerate case: eta0 = 0, U = 0 -> strong rhs at (c, d) == weak rhs at (c, d)
cfg_s = SimConfig(domain=_DS(Lx=dom.Lx, H=dom.H, Nx=dom.Nx, Nz=dom.Nz), theta=theta, U=0.0,
                  alpha=alpha, viscosity=visc, n=n, dt=1e-3, t_end=0.1, scheme="strong",
                  save_every=10).validate()
ws_s = ev.make_workspace(basis0, cfg_s, malpha=m_alpha0, state0=st_strong)
cfg_w = SimConfig(domain=_DS(Lx=dom.Lx, H=dom.H, Nx=dom.Nx, Nz=dom.Nz), theta=theta, U=0.0,
                  alpha=alpha, viscosity=visc, n=n, dt=1e-3, t_end=0.1, scheme="weak",
                  save_every=10).validate()
ws_w = ev.make_workspace(basis0, cfg_w)
cc = rng2.standard_normal(n) * 0.1
dd = rng2.standard_normal(n) * 0.1
cw, dw = ev.build_weak_rhs(cc, dd, ws_w)
cs, ds = ev.build_strong_rhs(cc, dd, ws_s)
print("degenerate weak==strong rhs err:", max(np.max(np.abs(cw - cs)), np.max(np.abs(dw - ds))))

# strong run with eta0 != 0, U > 0: mass + xi(0)=0
m_alpha = st.solve_malpha(dom, theta, U, alpha)
st_s2 = ev.initial_projection(u00, eta0, basis, "strong")
print("xi(0) = 0:", np.all(st_s2.d == 0.0), "| |eta0 coeffs|:", np.linalg.norm(st_s2.d0))
cfg_s2 = SimConfig(domain=_DS(Lx=dom.Lx, H=dom.H, Nx=dom.Nx, Nz=dom.Nz), theta=theta, U=U,
                   alpha=alpha, viscosity=visc, n=n, dt=2e-3, t_end=0.5, scheme="strong",
                   save_every=25).validate()
ws_s2 = ev.make_workspace(basis, cfg_s2, malpha=m_alpha, state0=st_s2)
traj_s = ev.integrate(st_s2, cfg_s2, ws_s2)
led_s = traj_s.diagnostics
# total mass: alpha (m_alpha) + 0 (eta0 mean) + 0 (xi mean); ledger adds alpha + coeff means
print("strong run mass drift:", max(abs(m - alpha) for m in led_s.mass) / alpha)
print("strong run energy residual max:", max(abs(r) for r in led_s.energy_residual[1:]))
print("strong final |u|, |xi|:", led_s.norm_u[-1], led_s.norm_scalar[-1])

# ---- persistence ----
ev.write_diagnostics_csv(led, "/tmp/diag_test.csv")
ev.write_summary_json(traj2, "/tmp/summary_test.json")
with open("/tmp/diag_test.csv") as fh:
    print("csv header:", fh.readline().strip())
    print("csv row:", fh.readline().strip()[:100])
