"""Scratch: scan (alpha, U, amplitude) for a >=2x-margin smallness gate."""
import sys
sys.path.insert(0, "src")
import numpy as np

from bioconvect.config import (DomainSpec, ForcingSpec, InitialConditionSpec,
                               SimConfig, SurfaceStressSpec, ViscosityModel)
from bioconvect.domain import make_domain
from bioconvect.operators import build_bases
from bioconvect.stationary import solve_malpha
from bioconvect.estimates import estimate_chain_constants, global_smallness_check
from bioconvect.experiments import prepare_run
import dataclasses

visc = ViscosityModel(kind="tanh", nu0=0.7, nu1=1.0, slope=1.0, center=0.5)
base = SimConfig(
    domain=DomainSpec(Lx=2.0, H=1.0, Nx=48, Nz=40),
    theta=1.0, U=0.05, alpha=0.01, viscosity=visc,
    n=12, dt=5e-3, t_end=2.0, scheme="strong",
    initial=InitialConditionSpec(kind="random_smooth",
                                 velocity_amplitude=1e-4,
                                 concentration_amplitude=1e-4),
    seed=0,
).validate()

dom = make_domain(base.domain)

results = []
for U in (0.02, 0.03, 0.04, 0.05):
    basis = build_bases(dom, base.n, base.theta, U)
    constants = estimate_chain_constants(basis, base.theta, U, visc, seed=0)
    for alpha in (0.004, 0.005, 0.006, 0.0065, 0.007, 0.008, 0.01):
        malpha = solve_malpha(dom, base.theta, U, alpha)
        for amp in (5e-5, 1e-4, 2e-4):
            cfg = dataclasses.replace(
                base, U=U, alpha=alpha,
                initial=InitialConditionSpec(kind="random_smooth",
                                             velocity_amplitude=amp,
                                             concentration_amplitude=amp))
            setup = prepare_run(cfg)
            rep = global_smallness_check(basis, base.theta, U, alpha, visc,
                                         malpha, setup.u0_field, setup.scalar0_field,
                                         f_sup_sq=0.0, constants=constants)
            factors = []
            binding = None
            fmin = np.inf
            for c in rep.conditions:
                if c.lhs <= 0:
                    continue
                f = c.rhs / c.lhs
                if f < fmin:
                    fmin, binding = f, c.name
                factors.append(f)
            ok = rep.passed and fmin >= 2.0
            results.append((fmin, U, alpha, amp, binding, rep.passed))
            print(f"U={U:.2f} alpha={alpha:.4f} amp={amp:.0e}: passed={rep.passed} "
                  f"min_factor={fmin:.3f} binding={binding} {'<<< OK' if ok else ''}")

best = max(results, key=lambda r: r[0])
print("\nbest:", best)
