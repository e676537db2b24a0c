"""Scratch: locate the data-independent scalar content behind the Cauchy gap."""
import sys
sys.path.insert(0, "src")
import dataclasses
import numpy as np

from bioconvect.config import load_config
from bioconvect.experiments import prepare_run
from bioconvect.evolution import integrate

cfg = load_config("configs/weak_convergence.toml")
cfg = dataclasses.replace(cfg, initial=dataclasses.replace(cfg.initial, kind="zero"))

for n in (8, 16, 32):
    c = dataclasses.replace(cfg, n=n)
    setup = prepare_run(c)
    traj = integrate(setup.state0, c, setup.workspace)
    st = traj.states[-1]
    d = st.d
    print(f"n={n}: final |d| = {np.linalg.norm(d):.6e}  max|d_l| = {np.max(np.abs(d)):.3e}")
    idx = np.argsort(-np.abs(d))[:6]
    eig = setup.basis.concentration.eigenvalues
    mi = setup.basis.concentration.mode_index
    for l in idx:
        print(f"   mode {l:2d}  lam={eig[l]:9.4f}  (k,parity,j)={mi[l]}  d={d[l]: .4e}")
    print(f"   |c| velocity = {np.linalg.norm(st.c):.3e}")
