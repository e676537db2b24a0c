import numpy as np

from bioconvect.domain import Domain, DomainSpec, ScalarField, VectorField, make_domain, sym_gradient
from bioconvect import operators as ops

dom = make_domain(DomainSpec(Lx=2 * np.pi, H=1.0, Nx=64, Nz=64))
n = 16

# ---- Stokes basis ----
sb = ops.build_stokes_basis(dom, n)
s = sb.stokes
print("stokes eigenvalues:", np.round(s.eigenvalues, 6))
print("stokes mode_index:", s.mode_index)
print("gram defect:", np.max(np.abs(s.gram - np.eye(n))))
print("max bc residual:", np.max(s.bc_residuals))
print("max div residual:", np.max(s.div_residuals))

# k=0 oracle: ((j+1/2) pi / H)^2
k0 = [(i, j) for i, (k, p, j) in enumerate(s.mode_index) if k == 0]
for i, j in k0:
    exact = ((j + 0.5) * np.pi / dom.H) ** 2
    print(f"  k0 mode j={j}: ev={s.eigenvalues[i]:.12f} exact={exact:.12f} err={abs(s.eigenvalues[i]-exact):.3g}")

# dissipation identity 2(D(wi),D(wj)) = alpha_i delta_ij
W = dom.quadrature.area
dd = 2.0 * np.einsum("iaxz,jaxz,a,xz->ij", s.sym_grads, s.sym_grads, np.array([1.0, 2.0, 1.0]), W)
print("dissipation identity err:", np.max(np.abs(dd - np.diag(s.eigenvalues))))

# sym_grads agree with spectral differentiation of the reconstructed fields
i_test = [0, 3, n - 1]
for i in i_test:
    u = VectorField(s.fields[i, 0], s.fields[i, 1], dom)
    D = sym_gradient(u)
    err = max(np.max(np.abs(D.xx - s.sym_grads[i, 0])),
              np.max(np.abs(D.xz - s.sym_grads[i, 1])),
              np.max(np.abs(D.zz - s.sym_grads[i, 2])))
    print(f"  sym_grad agreement mode {i}: {err:.3g}")

# ---- concentration basis, U = 0 oracle ----
cb0 = ops.build_concentration_basis(dom, theta=1.0, U=0.0, n=n)
c0 = cb0.concentration
exact = sorted(
    k**2 + (j * np.pi / dom.H) ** 2
    for k in range(0, 8) for j in range(0, 8) for _ in range(2 if k >= 1 else 1)
    if (k, j) != (0, 0)
)[:n]
print("concentration U=0 eigenvalues:", np.round(c0.eigenvalues, 8))
print("exact:", np.round(exact, 8))
print("U=0 spectrum err:", np.max(np.abs(c0.eigenvalues - np.array(exact))))
print("gram defect:", np.max(np.abs(c0.gram - np.eye(n))))
print("max |mean|:", np.max(np.abs(c0.means)))
print("max bc residual:", np.max(c0.bc_residuals))

# ---- concentration basis with swimming ----
theta, U = 0.8, 0.15
cb = ops.build_concentration_basis(dom, theta=theta, U=U, n=n)
c = cb.concentration
print("U>0 eigenvalues:", np.round(c.eigenvalues, 6))
print("U>0 positive:", np.all(c.eigenvalues > 0))
print("gram defect:", np.max(np.abs(c.gram - np.eye(n))))
print("max |mean|:", np.max(np.abs(c.means)))
print("max bc residual:", np.max(c.bc_residuals))
ident = c.stiffness - U * c.boundary_coupling - np.diag(c.eigenvalues)
print("stiffness-boundary identity err:", np.max(np.abs(ident)))

# A1 pointwise application
a1 = ops.ConcentrationOperator(dom, theta, U)
for i in [0, 1, 5, n - 1]:
    phi = ScalarField(c.fields[i], dom)
    r = a1.apply(phi).values - c.eigenvalues[i] * c.fields[i]
    print(f"  A1 phi_{i} residual: {np.max(np.abs(r)):.3g} (beta={c.eigenvalues[i]:.4f})")

# ---- Leray projection ----
rng = np.random.default_rng(7)
vx = dom.random_smooth(rng, amplitude=1.0)
vz = dom.random_smooth(rng, amplitude=1.0)
v = VectorField(vx, vz, dom)
pv = ops.leray_project(v)
ppv = ops.leray_project(pv)
print("leray idempotency:", np.max([np.max(np.abs(ppv.ux - pv.ux)), np.max(np.abs(ppv.uz - pv.uz))]))
print("leray div (interior):", np.max(np.abs((pv.divergence())[:, 1:-1])))
print("leray div (all):", np.max(np.abs(pv.divergence())))
# annihilates gradients
g = dom.random_smooth(rng, amplitude=1.0)
gv = VectorField(dom.ddx(g), dom.ddz(g), dom)
pg = ops.leray_project(gv)
print("leray kills gradient:", max(np.max(np.abs(pg.ux)), np.max(np.abs(pg.uz))))
# preserves basis fields
w0 = VectorField(s.fields[2, 0], s.fields[2, 1], dom)
pw = ops.leray_project(w0)
print("leray preserves eigenfield:", max(np.max(np.abs(pw.ux - w0.ux)), np.max(np.abs(pw.uz - w0.uz))))

# ---- Stokes operator application ----
for i in [0, 1, 4, 9]:
    u = VectorField(s.fields[i, 0], s.fields[i, 1], dom)
    au, gq, qb = ops.helmholtz_split_laplacian(u)
    res = max(np.max(np.abs(au.ux - s.eigenvalues[i] * u.ux)),
              np.max(np.abs(au.uz - s.eigenvalues[i] * u.uz)))
    print(f"  A w_{i} residual: {res / s.eigenvalues[i]:.3g} (alpha={s.eigenvalues[i]:.4f})")

# symmetry of A via quadrature on two eigenfields
u1 = VectorField(s.fields[1, 0], s.fields[1, 1], dom)
u2 = VectorField(s.fields[4, 0], s.fields[4, 1], dom)
a1u, _, _ = ops.helmholtz_split_laplacian(u1)
a2u, _, _ = ops.helmholtz_split_laplacian(u2)
s12 = dom.integrate(a1u.ux * u2.ux + a1u.uz * u2.uz)
s21 = dom.integrate(a2u.ux * u1.ux + a2u.uz * u1.uz)
print("A symmetry:", abs(s12 - s21))

# ---- constants ----
cp_v, dv = ops.estimate_poincare(dom, "velocity_on_S")
cp_s, ds = ops.estimate_poincare(dom, "mean_zero_scalar")
print(f"C_P velocity: {cp_v:.12f} exact {2 * dom.H / np.pi:.12f} err {abs(cp_v - 2 * dom.H / np.pi):.3g}")
print(f"C_P scalar:   {cp_s:.12f} exact 1 err {abs(cp_s - 1.0):.3g}")
korn, dk = ops.estimate_korn(dom)
print(f"C_korn: {korn:.12f} exact {np.sqrt(2):.12f} err {abs(korn - np.sqrt(2)):.3g}")
tr = ops.estimate_trace_constants(dom)
print("trace constants:", tr)

rep = ops.estimate_constants(dom, theta=theta, U=U)
print("smallness:", rep.smallness)

emb = ops.estimate_embedding_constants(ops.build_bases(dom, n, theta, U), samples=50, seed=1)
print("embedding constants:", {k: round(v, 4) for k, v in emb.items()})

# ---- export ----
man = ops.export_basis(ops.build_bases(dom, 8, theta, U), "/tmp/basis_export")
print("export keys:", sorted(man.keys()))
import os
print("export files:", sorted(os.listdir("/tmp/basis_export")))
