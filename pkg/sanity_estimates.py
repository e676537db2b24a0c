"""Sanity drive for estimates.py against closed-form oracles."""
import math

import numpy as np

from bioconvect.domain import Domain, DomainSpec, ScalarField, VectorField
from bioconvect.operators import build_bases
from bioconvect.config import ViscosityModel
from bioconvect.stationary import solve_malpha
from bioconvect import estimates as est

print("== bootstrap_window closed forms ==")
t = np.linspace(0.0, 10.0, 4001)
# case 1: g=0, h=0, phi0>0 -> T1 = ln(3/2)/(8 C phi0^2)
phi0, C = 0.3, 2.0
res = est.bootstrap_window(phi0, t, 0.0, 0.0, C)
t1_exact = math.log(1.5) / (8.0 * C * phi0**2)
print(f"case1 T1={res.t_star:.15f} exact={t1_exact:.15f} err={abs(res.t_star-t1_exact):.3e}")
assert abs(res.t_star - t1_exact) < 1e-10, "closed form 1"
assert abs(res.attained - res.target) < 1e-10

# case 2: phi0=0, g=0, h=h0 -> T1 = ln(3/2)/(2 h0)
h0 = 2.0
res2 = est.bootstrap_window(0.0, t, h0, 0.0, C)
t2_exact = math.log(1.5) / (2.0 * h0)
print(f"case2 T1={res2.t_star:.15f} exact={t2_exact:.15f} err={abs(res2.t_star-t2_exact):.3e}")
assert abs(res2.t_star - t2_exact) < 1e-10, "closed form 2"

# combined case oracle: 4C phi0^2 T + h0 T = target
res3 = est.bootstrap_window(phi0, t, h0, 0.0, C)
t3_exact = est.WINDOW_TARGET / (4 * C * phi0**2 + h0)
print(f"case3 T1={res3.t_star:.15f} exact={t3_exact:.15f} err={abs(res3.t_star-t3_exact):.3e}")
assert abs(res3.t_star - t3_exact) < 1e-10

# with linear-in-time g: F(T) = C*int (2phi0 + 2*g1*s^2/2)^2 analytic
# g(s) = g1*s: int_0^s g = g1 s^2/2; F = C int (2phi0 + g1 s^2)^2 ds
g1 = 0.5
gser = g1 * t
res4 = est.bootstrap_window(phi0, t, 0.0, gser, C)
T = res4.t_star
F_exact = C * (4 * phi0**2 * T + 4 * phi0 * g1 * T**3 / 3 + g1**2 * T**5 / 5)
print(f"case4 F(T1)={res4.attained:.15f} analytic={F_exact:.15f} "
      f"err={abs(res4.attained-F_exact):.3e}")
assert abs(res4.attained - F_exact) < 1e-12
assert abs(res4.attained - res4.target) < 1e-10

# horizon case
res5 = est.bootstrap_window(1e-4, t, 1e-6, 0.0, 1e-6)
assert res5.hit_horizon and res5.t_star == t[-1]
print(f"case5 horizon hit: T1={res5.t_star}")

# monotonicity: doubling C never increases T1
for Cv in (0.5, 1.0, 2.0, 4.0):
    a = est.bootstrap_window(phi0, t, h0, gser, Cv).t_star
    b = est.bootstrap_window(phi0, t, h0, gser, 2 * Cv).t_star
    assert b <= a + 1e-14, (Cv, a, b)
print("monotonicity in C ok")

# monotonicity in phi0
a = est.bootstrap_window(0.1, t, h0, gser, C).t_star
b = est.bootstrap_window(0.2, t, h0, gser, C).t_star
assert b <= a
print("monotonicity in phi0 ok")

print("\n== gronwall ==")
# saturating case: zeta' = b0 zeta, a = a0, zeta* = 0
tt = np.linspace(0, 2, 2001)
a0, b0 = 1.5, 0.7
zeta = a0 * np.exp(b0 * tt)
rep = est.gronwall_envelope(tt, a0, b0, zeta, 0.0)
print(f"saturating: hyp={rep.hypothesis_holds} conc={rep.conclusion_holds} "
      f"hyp_viol={rep.max_hypothesis_violation:.3e} conc_viol={rep.max_conclusion_violation:.3e}")
assert rep.conclusion_holds and rep.hypothesis_holds
# equality within quadrature error:
assert abs(rep.max_conclusion_violation) < 1e-6

# b == 0 reduces to zeta + int zeta* <= a
zeta2 = 0.5 * np.ones_like(tt)
rep2 = est.gronwall_envelope(tt, 1.0, 0.0, zeta2, 0.1)
lhs = zeta2 + est.cumulative_trapezoid(tt, np.full_like(tt, 0.1))
assert np.allclose(rep2.conclusion_rhs, 1.0)
assert rep2.conclusion_holds == bool(np.all(lhs <= 1.0 + 1e-9))
print(f"b=0 case: conclusion_holds={rep2.conclusion_holds} (expected True)")

# ODE-saturated case a(t)=1+t, b(t)=t: zeta' = 1 + t*zeta, zeta0=1
from scipy.integrate import solve_ivp
sol = solve_ivp(lambda s, y: 1.0 + s * y, (0, 2), [1.0], t_eval=tt,
                rtol=1e-11, atol=1e-13)
rep3 = est.gronwall_envelope(tt, 1.0 + tt, tt, sol.y[0], 0.0)
print(f"ODE case: hyp={rep3.hypothesis_holds} conc={rep3.conclusion_holds} "
      f"conc_viol={rep3.max_conclusion_violation:.3e}")
assert rep3.conclusion_holds

print("\n== cubic ==")
r = est.gate_cubic_roots(3.0, 5.0, 0.0)
exact = 0.5 * math.sqrt(5.0 / 3.0)
assert r.three_real and r.roots == (-exact, 0.0, exact)
print(f"d5=0 exact roots ok: {r.roots}")

prev = math.inf
for k in range(1, 7):
    d5 = 10.0**-k
    rk = est.gate_cubic_roots(3.0, 5.0, d5)
    assert rk.three_real, k
    scale = max(2 * 3.0 * abs(rk.z2) ** 3, 0.5 * 5.0 * abs(rk.z2), d5)
    res_rel = abs(2 * 3.0 * rk.z2**3 - 2.5 * rk.z2 + d5) / scale
    print(f"  d5=1e-{k}: z2={rk.z2:.12e} res_rel={res_rel:.2e}")
    assert rk.z2 > 0 and rk.z2 < prev
    assert res_rel < 1e-12
    prev = rk.z2
assert prev < 1e-6 * 10  # z2 -> 0
flag = est.gate_cubic_roots(2.0, 2.0, 10.0)
assert not flag.three_real and flag.z2 is None and len(flag.roots) == 1
assert abs(2 * 2 * flag.roots[0] ** 3 - flag.roots[0] + 10.0) < 1e-10
print(f"no-three-real flag ok, single root {flag.roots[0]:.6f}, "
      f"margin {flag.discriminant_margin:.3e}")

print("\n== chain constants + gate ==")
dom = Domain(DomainSpec(Lx=2 * math.pi, H=1.0, Nx=48, Nz=40))
theta, U, alpha = 1.0, 0.05, 1.0
visc = ViscosityModel(nu0=0.7, nu1=1.0, kind="tanh", slope=1.0, center=0.5)
basis = build_bases(dom, 12, theta, U)
cc = est.estimate_chain_constants(basis, theta, U, visc, samples=32, seed=0)
cc.validate_labels()
for nm, e in cc.__dict__.items():
    v = e.value
    assert np.isfinite(v) and v >= 0, nm
print(f"c_a={cc.c_a.value:.4f} c_d4={cc.c_d4.value:.4f} "
      f"d1={cc.d_1.value:.4e} d2={cc.d_2.value:.4e} d3={cc.d_3.value:.4e} "
      f"d4={cc.d_4.value:.4e} k_hat={cc.k_hat.value:.4f} c4={cc.c_hat_4.value:.4e}")

beta, src = est.select_beta(cc, visc.nu0)
print(f"beta={beta:.6e} ({src})")
assert beta < 1.0
assert cc.c_hat_4.value * math.sqrt(beta) < visc.nu0 / 4.0
assert cc.d_2.value * (beta + beta**4) < cc.d_3.value / 2.0
# factor-2-ish margins by construction
assert cc.d_2.value * (beta + beta**4) < 0.75 * (cc.d_3.value / 2.0)

malpha = solve_malpha(dom, theta, U, alpha)
u0 = VectorField(np.zeros((dom.Nx, dom.Nz)), np.zeros((dom.Nx, dom.Nz)), dom)
eta0 = ScalarField(np.zeros((dom.Nx, dom.Nz)), dom)
rep = est.global_smallness_check(basis, theta, U, alpha, visc, malpha, u0, eta0,
                                 f_sup_sq=0.0, constants=cc)
print(f"zero-data gate: passed={rep.passed} beta={rep.beta:.3e} z2={rep.z2} "
      f"d5={rep.d5:.3e} pi0={rep.pi0:.3e}")
for cnd in rep.conditions:
    print(f"  {cnd.name:30s} lhs={cnd.lhs:.6e} rhs={cnd.rhs:.6e} "
          f"pass={cnd.passed}")
import json
js = json.dumps(rep.as_dict())
assert "unlabeled" not in js
print(f"report serializes to {len(js)} bytes of JSON")

print("\n== envelope ==")
ts = np.linspace(0, 1, 101)
spec = est.build_envelope_spec(basis, theta, U, visc.nu0, alpha,
                               u0_sq=0.0, z0_sq=0.0, times=ts, f_sq=0.0)
G = spec.G(ts)
assert G[0] >= 0 and np.all(np.diff(G) >= -1e-15)
print(f"G(0)={G[0]:.3e} G(1)={G[-1]:.6e} c_nu0={spec.c_nu0.value:.4f} "
      f"c0={spec.c0.value:.4f} c1={spec.c1.value:.4e} c2={spec.c2.value:.4f}")
er = est.energy_envelope(spec, ts, 0.0, 0.0, 0.0, 0.0)
assert er.passed  # zero run under any G
# synthetic saturation: u_sq grows to G -> borderline
print("zero-run envelope passed:", er.passed)

print("\nALL ESTIMATES SANITY CHECKS PASSED")
