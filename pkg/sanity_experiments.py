"""Small-scale drive of all five experiment runners."""
import json
import math
import os
import tempfile
import time

import numpy as np

from bioconvect import config as cfgmod
from bioconvect import experiments as ex

DOM = cfgmod.DomainSpec(Lx=2 * math.pi, H=1.0, Nx=48, Nz=40)
VISC = cfgmod.ViscosityModel(nu0=0.7, nu1=1.0, kind="tanh", slope=1.0, center=0.5)


def base_cfg(**kw):
    d = dict(domain=DOM, theta=1.0, U=0.05, alpha=0.01, viscosity=VISC,
             n=8, dt=2e-3, t_end=0.2, scheme="weak",
             forcing=cfgmod.ForcingSpec(kind="none"),
             surface_stress=cfgmod.SurfaceStressSpec(kind="none"),
             initial=cfgmod.InitialConditionSpec(kind="random_smooth",
                                                 velocity_amplitude=1e-3,
                                                 concentration_amplitude=1e-3),
             save_every=10, seed=3)
    d.update(kw)
    return cfgmod.SimConfig(**d)


t0 = time.time()
print("== weak_convergence ==")
cfg = base_cfg(domain=cfgmod.DomainSpec(Lx=2 * math.pi, H=1.0, Nx=48, Nz=52))
spec = ex.ExperimentSpec(kind="weak_convergence", config=cfg, ns=(6, 12, 24))
rep = ex.run_weak_convergence(spec)
for c in rep.checks:
    print(f"  [{'ok ' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
print(f"  diffs u: {rep.data['diff_velocity']}")
print(f"  diffs z: {rep.data['diff_scalar']}")
assert rep.passed, "weak convergence failed"
print(f"  ({time.time()-t0:.1f}s)")

print("== local_window ==")
cfg = base_cfg(scheme="strong", t_end=0.5)
spec = ex.ExperimentSpec(kind="local_window", config=cfg)
rep = ex.run_local_window(spec)
for c in rep.checks:
    print(f"  [{'ok ' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
print(f"  T*={rep.data['t_star']:.5e} horizon={rep.data['hit_horizon']}")
assert rep.passed, "local window failed"
t_star_base = rep.data["t_star"]

# monotonicity probe: zero initial data never shrinks T*
cfg0 = base_cfg(scheme="strong", t_end=0.5,
                initial=cfgmod.InitialConditionSpec(kind="zero"))
rep0 = ex.run_local_window(ex.ExperimentSpec(kind="local_window", config=cfg0))
print(f"  zero-data T*={rep0.data['t_star']:.5e} closed_form={rep0.data.get('closed_form_t1')}")
assert rep0.data["t_star"] >= t_star_base - 1e-12
if "closed_form_t1" in rep0.data:
    err = abs(rep0.data["t_star"] - rep0.data["closed_form_t1"])
    print(f"  closed-form gap {err:.2e}")
    assert err <= 1e-10 * max(1.0, rep0.data["t_star"])
print(f"  ({time.time()-t0:.1f}s)")

print("== global_smalldata ==")
cfg = base_cfg(scheme="strong", t_end=2.0, dt=5e-3,
               initial=cfgmod.InitialConditionSpec(kind="random_smooth",
                                                   velocity_amplitude=2e-4,
                                                   concentration_amplitude=2e-4))
spec = ex.ExperimentSpec(kind="global_smalldata", config=cfg)
rep = ex.run_global_smalldata(spec)
for c in rep.checks:
    print(f"  [{'ok ' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
assert rep.passed, "global smalldata failed"
print(f"  ({time.time()-t0:.1f}s)")

print("== stability_decay ==")
cfg = base_cfg(t_end=3.0, dt=4e-3, U=0.0,
               viscosity=cfgmod.ViscosityModel(nu0=0.7, nu1=0.7, kind="constant"))
spec = ex.ExperimentSpec(kind="stability_decay", config=cfg,
                         perturbation_amplitude=1e-4)
fit, rep = ex.run_stability_decay(spec)
for c in rep.checks:
    print(f"  [{'ok ' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
print(f"  rate={fit.rate:.4f} ref={rep.data['rate_reference']:.4f} "
      f"R2={fit.r_squared:.6f}")
assert rep.passed, "stability decay failed"
print(f"  ({time.time()-t0:.1f}s)")

print("== uniqueness_twin ==")
cfg = base_cfg(scheme="strong", t_end=0.05, dt=1e-3)
spec = ex.ExperimentSpec(kind="uniqueness_twin", config=cfg, delta=1e-6,
                         check_linearity=True)
rep = ex.run_uniqueness_twin(spec)
for c in rep.checks:
    print(f"  [{'ok ' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
assert rep.passed, "uniqueness twin failed"
print(f"  ({time.time()-t0:.1f}s)")

print("== outdir + emit_plot_data + determinism ==")
with tempfile.TemporaryDirectory() as td:
    cfg = base_cfg(t_end=3.0, dt=4e-3, U=0.0,
                   viscosity=cfgmod.ViscosityModel(nu0=0.7, nu1=0.7, kind="constant"))
    d1 = os.path.join(td, "r1")
    d2 = os.path.join(td, "r2")
    for d in (d1, d2):
        s = ex.ExperimentSpec(kind="stability_decay", config=cfg,
                              perturbation_amplitude=1e-4, outdir=d)
        ex.run_stability_decay(s)
        files = ex.emit_plot_data(d)
        print(f"  wrote {sorted(os.path.basename(f) for f in files)}")
    for name in sorted(os.listdir(d1)):
        with open(os.path.join(d1, name), "rb") as fh:
            b1 = fh.read()
        with open(os.path.join(d2, name), "rb") as fh:
            b2 = fh.read()
        assert b1 == b2, f"nondeterministic output: {name}"
        print(f"  identical: {name} ({len(b1)} bytes)")
    with open(os.path.join(d1, "report.json")) as fh:
        r = json.load(fh)
    assert r["passed"] is True

print(f"\nALL EXPERIMENT SANITY CHECKS PASSED ({time.time()-t0:.1f}s)")
