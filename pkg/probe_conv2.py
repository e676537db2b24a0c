"""Scratch: mode-level anatomy of the 16-vs-32 scalar difference."""
import sys
sys.path.insert(0, "src")
import dataclasses
import numpy as np

from bioconvect.config import load_config
from bioconvect.experiments import prepare_run
from bioconvect.evolution import integrate

cfg = load_config("configs/weak_convergence.toml")
band_setup = prepare_run(dataclasses.replace(cfg, n=4))
fields = (band_setup.u0_field, band_setup.scalar0_field)

runs = {}
for n in (8, 16, 32):
    c = dataclasses.replace(cfg, n=n)
    setup = prepare_run(c, fields=fields)
    runs[n] = (setup, integrate(setup.state0, c, setup.workspace))

s32, t32 = runs[32]
s16, t16 = runs[16]
eig = s32.basis.concentration.eigenvalues
mi = s32.basis.concentration.mode_index

# per-save scalar coefficient difference, within span_16 and beyond
print("time   |d16-d32[:16]|   |d32[16:]|      |c16-c32[:16]|   |c32[16:]|")
for st16, st32 in zip(t16.states, t32.states):
    din = np.linalg.norm(st16.d - st32.d[:16])
    dout = np.linalg.norm(st32.d[16:])
    cin = np.linalg.norm(st16.c - st32.c[:16])
    cout = np.linalg.norm(st32.c[16:])
    print(f"{st32.t:5.3f}  {din:.3e}        {dout:.3e}     {cin:.3e}        {cout:.3e}")

stf = t32.states[-1]
idx = np.argsort(-np.abs(stf.d))[:10]
print("\nfinal n=32 scalar modes:")
for l in idx:
    print(f"  mode {l:2d} lam={eig[l]:9.3f} (k,p,j)={mi[l]} d={stf.d[l]: .3e}")

# same for the in-window modes of the 16 run difference
dd = np.abs(t16.states[-1].d - t32.states[-1].d[:16])
print("\nfinal |d16 - d32| by mode (first 16):")
for l in np.argsort(-dd)[:8]:
    print(f"  mode {l:2d} lam={eig[l]:9.3f} (k,p,j)={mi[l]} diff={dd[l]: .3e}")
