import numpy as np

from bioconvect.domain import DomainSpec, make_domain
from bioconvect.config import ViscosityModel
from bioconvect import operators as ops
from bioconvect import stationary as st

dom = make_domain(DomainSpec(Lx=2 * np.pi, H=1.0, Nx=48, Nz=48))

# ---- stratified profile ----
theta, U, alpha = 0.9, 0.12, 1.3
m = st.solve_malpha(dom, theta, U, alpha)
print("diagnostics:", {k: f"{v:.3g}" for k, v in m.diagnostics.items()})
exact = st.malpha_closed_form(dom, theta, U, alpha)
print("closed-form err:", np.max(np.abs(m.profile - exact)))

# U = 0 limit: constant
m0 = st.solve_malpha(dom, theta, 0.0, alpha)
print("U=0 deviation from alpha/area:", np.max(np.abs(m0.profile - alpha / dom.area)))

# linearity of the mean-zero part
m2 = st.solve_malpha(dom, theta, U, 2 * alpha)
print("eta linearity err:", np.max(np.abs(m2.eta_profile() - 2 * m.eta_profile())))

rep = st.verify_malpha_bounds(m)
print("bounds passed:", rep["passed"])
for b in rep["bounds"]:
    print(f"  {b.name}: lhs={b.lhs:.6g} rhs={b.rhs:.6g} margin={b.margin:.3g} {b.passed}")

# grad L4 strictly decreasing in U
g4 = [st.solve_malpha(dom, 1.0, u, 1.0).grad_l4() for u in (0.1, 0.05, 0.025)]
print("grad_l4 at U=0.1,0.05,0.025:", [f"{v:.6g}" for v in g4], "decreasing:", g4[0] > g4[1] > g4[2])

# analytic gradient norm to cross-check quadrature: |grad m| = sqrt(Lx * int (A r e^{rz})^2)
r = U / theta
A = alpha * r / (dom.Lx * np.expm1(r * dom.H))
exact_grad = A * r * np.sqrt(dom.Lx * (np.expm1(2 * r * dom.H)) / (2 * r))
print("grad_l2 vs analytic:", abs(m.grad_l2() - exact_grad))

# ---- coupled stationary states ----
basis = ops.build_bases(dom, 12, theta, U)
visc = ViscosityModel(kind="tanh", nu0=0.5, nu1=1.0, slope=0.8, center=alpha / dom.area)

# trivial fixed point: f = 0, U = 0
basis0 = ops.build_bases(dom, 12, theta, 0.0)
sol0 = st.solve_stationary(basis0, theta, 0.0, alpha, visc)
print("trivial: iters", sol0.iterations, "max|u|", np.max(np.abs(sol0.u.ux)),
      "m deviation", np.max(np.abs(sol0.m.values - alpha / dom.area)),
      "residuals", sol0.residual_velocity, sol0.residual_concentration)

# U > 0, f = 0: should converge to u = 0, m = stratified profile
sol = st.solve_stationary(basis, theta, U, alpha, visc)
print("f=0,U>0: converged", sol.converged, "iters", sol.iterations)
print("  max|u|:", max(np.max(np.abs(sol.u.ux)), np.max(np.abs(sol.u.uz))))
prof2d = np.broadcast_to(m.profile, (dom.Nx, dom.Nz))
print("  |m - malpha|_max:", np.max(np.abs(sol.m.values - prof2d)))
print("  mass rel err:", abs(sol.mass - alpha) / alpha)
print("  residuals:", sol.residual_velocity, sol.residual_concentration)

# small forcing: convection cell
kap = 2 * np.pi / dom.Lx
fz = 0.02 * np.cos(kap * dom.x)[:, None] * np.sin(np.pi * dom.z / dom.H)[None, :]
solf = st.solve_stationary(basis, theta, U, alpha, visc, f=(np.zeros_like(fz), fz))
print("forced: converged", solf.converged, "iters", solf.iterations)
print("  |u|_max:", max(np.max(np.abs(solf.u.ux)), np.max(np.abs(solf.u.uz))))
print("  residuals:", solf.residual_velocity, solf.residual_concentration)
print("  mass rel err:", abs(solf.mass - alpha) / alpha)
incs = [t["increment_velocity"] + t["increment_concentration"] for t in solf.trace]
ratios = [incs[i + 1] / incs[i] for i in range(1, min(8, len(incs) - 1)) if incs[i] > 0]
print("  contraction ratios:", [f"{r:.3g}" for r in ratios])
res = [t["residual_velocity"] + t["residual_concentration"] for t in solf.trace]
print("  residual monotone after it3:", all(res[i + 1] <= res[i] * (1 + 1e-9) for i in range(2, len(res) - 1)))
