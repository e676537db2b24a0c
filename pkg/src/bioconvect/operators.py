"""Stokes and concentration operators, eigenbases, projections, constants.

Velocity space: divergence-free fields with no-slip at the bottom wall,
impermeability and zero tangential stress at the free surface.  The Stokes
operator A acts as minus the Laplacian followed by the L2-orthogonal (Leray)
projection onto that space.  Per horizontal Fourier mode the space is
parametrized by a streamfunction, which turns the eigenproblem
2 (D(u), D(v)) = alpha (u, v) into a banded generalized symmetric problem in
z with three essential boundary conditions and one natural one.

Concentration space: mean-zero scalars with the flux condition
theta * dphi/dn - U * n3 * phi = 0 on both walls, where U is the upward
swimming speed.  The operator A1 is the mean-zero projection of -theta*Lap
and is assembled weakly, so the flux condition is natural.

Eigenfields are reconstructed on the collocation grid.  Because the forms
use the same quadrature weights and differentiation matrix as the grid inner
products, discrete orthonormality and the diagonal dissipation identities
hold to LAPACK round-off, not merely to discretization error.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from bioconvect.domain import Domain, ScalarField, VectorField, lp_norm

__all__ = [
    "DIV_TOL",
    "SpectralBasis",
    "StokesPart",
    "ConcentrationPart",
    "StokesOperator",
    "ConcentrationOperator",
    "ConstantEstimate",
    "ConstantsReport",
    "leray_project",
    "helmholtz_split_laplacian",
    "build_stokes_basis",
    "build_concentration_basis",
    "build_bases",
    "estimate_poincare",
    "estimate_korn",
    "estimate_trace_constants",
    "estimate_embedding_constants",
    "estimate_constants",
    "check_smallness_U",
    "export_basis",
]

DIV_TOL = 1e-8


# ---------------------------------------------------------------------------
# small linear-algebra helpers
# ---------------------------------------------------------------------------

def _nullspace(constraints: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the nullspace of a stack of constraint rows."""
    constraints = np.atleast_2d(constraints)
    _, s, vt = np.linalg.svd(constraints)
    tol = (s[0] if s.size else 0.0) * 1e-12
    rank = int(np.sum(s > tol))
    return vt[rank:].T


def _fix_sign(vec: np.ndarray) -> np.ndarray:
    """Deterministic orientation: the largest-magnitude entry is positive."""
    idx = int(np.argmax(np.abs(vec)))
    return -vec if vec[idx] < 0 else vec


# ---------------------------------------------------------------------------
# basis containers
# ---------------------------------------------------------------------------

@dataclass
class StokesPart:
    """First n eigenpairs of the Stokes operator on the channel.

    ``fields`` has shape (n, 2, Nx, Nz) (components ux, uz), ``sym_grads``
    (n, 3, Nx, Nz) with rows (xx, xz, zz).  ``mode_index`` records
    (k, parity, j): horizontal wavenumber index, 0 for the cosine / 1 for
    the sine partner (k = 0 modes are x-independent and use parity 0), and
    the vertical mode number within the block.
    """

    eigenvalues: np.ndarray
    fields: np.ndarray
    sym_grads: np.ndarray
    mode_index: list[tuple[int, int, int]]
    gram: np.ndarray
    bc_residuals: np.ndarray
    div_residuals: np.ndarray


@dataclass
class ConcentrationPart:
    """First n eigenpairs of the concentration operator, plus the constant
    Galerkin matrices the evolution systems contract against.

    ``stiffness``[l, a] = theta * (grad phi_a, grad phi_l),
    ``boundary_coupling``[l, a] = integral over the boundary of
    n3 * phi_a * phi_l (top minus bottom), ``transport``[l, a] =
    (phi_a, d phi_l / dz), ``source_dz``[l] = (1, d phi_l / dz).
    """

    theta: float
    U: float
    eigenvalues: np.ndarray
    fields: np.ndarray
    gradients: np.ndarray
    mode_index: list[tuple[int, int, int]]
    gram: np.ndarray
    bc_residuals: np.ndarray
    means: np.ndarray
    stiffness: np.ndarray
    boundary_coupling: np.ndarray
    transport: np.ndarray
    source_dz: np.ndarray


@dataclass
class SpectralBasis:
    """Container for the velocity and concentration eigenbases."""

    domain: Domain
    n: int
    stokes: StokesPart | None = None
    concentration: ConcentrationPart | None = None

    def reconstruct_velocity(self, coeffs: np.ndarray, name: str = "", time: float = 0.0) -> VectorField:
        grids = np.einsum("j,jcxz->cxz", coeffs, self.stokes.fields)
        return VectorField(grids[0], grids[1], self.domain, name=name, time=time, solenoidal=True)

    def reconstruct_scalar(self, coeffs: np.ndarray, name: str = "", time: float = 0.0) -> ScalarField:
        values = np.einsum("l,lxz->xz", coeffs, self.concentration.fields)
        return ScalarField(values, self.domain, name=name, time=time)


def _check_capacity(domain: Domain, n: int) -> None:
    if n < 1:
        raise ValueError(f"mode count must be >= 1, got {n}")
    if domain.Nz < 2 * n + 2:
        raise ValueError(
            f"resolution Nz={domain.Nz} insufficient for n={n} modes (need Nz >= {2 * n + 2})"
        )


# ---------------------------------------------------------------------------
# Stokes eigenbasis
# ---------------------------------------------------------------------------

def _stokes_block_k0(domain: Domain, count: int):
    """x-independent shear modes u = (uhat(z), 0), uhat(0) = 0.

    The energy form reduces to Lx * int uhat' vhat' dz with a natural
    condition uhat'(H) = 0; eigenvalues are ((j + 1/2) pi / H)^2.
    """
    Wz = np.diag(domain.wz)
    D = domain.Dz
    A = domain.Lx * (D.T @ Wz @ D)
    M = domain.Lx * Wz
    constraint = np.zeros((1, domain.Nz))
    constraint[0, 0] = 1.0
    Z = _nullspace(constraint)
    evals, Y = scipy.linalg.eigh(Z.T @ A @ Z, Z.T @ M @ Z)
    profiles = Z @ Y
    out = []
    for j in range(min(count, profiles.shape[1])):
        out.append((float(evals[j]), 0, 0, j, {"uhat": _fix_sign(profiles[:, j])}))
    return out


def _stokes_block_k(domain: Domain, k: int, count: int):
    """Streamfunction eigenmodes for horizontal wavenumber index k >= 1."""
    kappa = 2.0 * np.pi * k / domain.Lx
    Wz = np.diag(domain.wz)
    D = domain.Dz
    B = domain.Dz2 + kappa**2 * np.eye(domain.Nz)
    A = domain.Lx * (2.0 * kappa**2 * (D.T @ Wz @ D) + 0.5 * (B.T @ Wz @ B))
    M = 0.5 * domain.Lx * ((D.T @ Wz @ D) + kappa**2 * Wz)
    constraints = np.zeros((3, domain.Nz))
    constraints[0, 0] = 1.0          # psi(0) = 0   (impermeable wall)
    constraints[1, :] = D[0, :]      # psi'(0) = 0  (no slip)
    constraints[2, -1] = 1.0         # psi(H) = 0   (impermeable surface)
    Z = _nullspace(constraints)
    evals, Y = scipy.linalg.eigh(Z.T @ A @ Z, Z.T @ M @ Z)
    psi = Z @ Y
    out = []
    for j in range(min(count, psi.shape[1])):
        p = _fix_sign(psi[:, j])
        out.append(
            (float(evals[j]), k, None, j, {"psi": p, "dpsi": D @ p, "Bpsi": B @ p, "kappa": kappa})
        )
    return out


def _stokes_mode_grids(domain: Domain, k: int, parity: int, prof: dict):
    """Grid reconstruction of one velocity eigenfield and its sym-gradient."""
    Nx, Nz = domain.Nx, domain.Nz
    if k == 0:
        uhat = prof["uhat"]
        duhat = domain.Dz @ uhat
        ux = np.broadcast_to(uhat, (Nx, Nz)).copy()
        uz = np.zeros((Nx, Nz))
        dxx = np.zeros((Nx, Nz))
        dxz = 0.5 * np.broadcast_to(duhat, (Nx, Nz)).copy()
        dzz = np.zeros((Nx, Nz))
        return np.stack([ux, uz]), np.stack([dxx, dxz, dzz])
    kappa = prof["kappa"]
    psi, dpsi, Bpsi = prof["psi"], prof["dpsi"], prof["Bpsi"]
    c = np.cos(kappa * domain.x)[:, None]
    s = np.sin(kappa * domain.x)[:, None]
    if parity == 0:  # streamfunction proportional to cos(kappa x)
        ux = c * dpsi[None, :]
        uz = kappa * s * psi[None, :]
        dxx = -kappa * s * dpsi[None, :]
        dxz = 0.5 * c * Bpsi[None, :]
    else:  # sine partner
        ux = s * dpsi[None, :]
        uz = -kappa * c * psi[None, :]
        dxx = kappa * c * dpsi[None, :]
        dxz = 0.5 * s * Bpsi[None, :]
    return np.stack([ux, uz]), np.stack([dxx, dxz, -dxx])


def build_stokes_basis(domain: Domain, n: int) -> SpectralBasis:
    """First n eigenpairs of the Stokes operator, smallest eigenvalues first.

    Modes are merged across horizontal wavenumbers in deterministic order
    (eigenvalue, then wavenumber, cosine before sine, then vertical index);
    within degenerate horizontal pairs the two partners are exactly
    orthogonal by parity, so no re-orthogonalization is needed.
    """
    _check_capacity(domain, n)
    k_max = max(2, n // 2 + 1)
    if k_max > domain.Nx // 3:
        k_max = domain.Nx // 3
    candidates = []
    per_block = min(n, domain.Nz - 4)
    for ev, k, _, j, prof in _stokes_block_k0(domain, per_block):
        candidates.append((ev, 0, 0, j, prof))
    for k in range(1, k_max + 1):
        for ev, _, _, j, prof in _stokes_block_k(domain, k, per_block):
            candidates.append((ev, k, 0, j, prof))
            candidates.append((ev, k, 1, j, prof))
    candidates.sort(key=lambda rec: (rec[0], rec[1], rec[2], rec[3]))
    chosen = candidates[:n]
    if chosen[-1][1] >= k_max and k_max < domain.Nx // 3:
        raise RuntimeError("wavenumber scan exhausted; increase the scan range")

    fields = np.empty((n, 2, domain.Nx, domain.Nz))
    sym_grads = np.empty((n, 3, domain.Nx, domain.Nz))
    mode_index = []
    eigenvalues = np.empty(n)
    for i, (ev, k, parity, j, prof) in enumerate(chosen):
        eigenvalues[i] = ev
        mode_index.append((k, parity, j))
        fields[i], sym_grads[i] = _stokes_mode_grids(domain, k, parity, prof)

    W = domain.quadrature.area
    gram = np.einsum("icxz,jcxz,xz->ij", fields, fields, W)

    bc_res = np.empty(n)
    div_res = np.empty(n)
    for i in range(n):
        ux, uz = fields[i]
        scale = 1.0 + max(np.max(np.abs(ux)), np.max(np.abs(uz)))
        shear_top = (domain.ddz(ux) + domain.ddx(uz))[:, -1]
        bc_res[i] = max(
            np.max(np.abs(ux[:, 0])),
            np.max(np.abs(uz[:, 0])),
            np.max(np.abs(uz[:, -1])),
            np.max(np.abs(shear_top)),
        ) / scale
        div_res[i] = np.max(np.abs(domain.ddx(ux) + domain.ddz(uz))) / scale

    part = StokesPart(
        eigenvalues=eigenvalues,
        fields=fields,
        sym_grads=sym_grads,
        mode_index=mode_index,
        gram=gram,
        bc_residuals=bc_res,
        div_residuals=div_res,
    )
    return SpectralBasis(domain=domain, n=n, stokes=part)


# ---------------------------------------------------------------------------
# Concentration eigenbasis
# ---------------------------------------------------------------------------

def _concentration_block(domain: Domain, theta: float, U: float, k: int, count: int):
    """Robin eigenmodes of -theta*Lap for one horizontal wavenumber.

    Weak form per mode: theta * (phi' chi' + kappa^2 phi chi) integrated in z
    plus the boundary term U * (phi(0) chi(0) - phi(H) chi(H)); the swim-flux
    condition is natural.  The x-independent block is restricted to
    quadrature-mean-zero profiles, which realizes the mean-zero projection.
    """
    kappa = 2.0 * np.pi * k / domain.Lx
    Wz = np.diag(domain.wz)
    D = domain.Dz
    S = theta * (D.T @ Wz @ D + kappa**2 * Wz)
    S[0, 0] += U
    S[-1, -1] -= U
    if k == 0:
        Z = _nullspace(domain.wz[None, :])
        M = domain.Lx * Wz
    else:
        Z = np.eye(domain.Nz)
        M = 0.5 * domain.Lx * Wz
    S = S * (domain.Lx if k == 0 else 0.5 * domain.Lx)
    evals, Y = scipy.linalg.eigh(Z.T @ S @ Z, Z.T @ M @ Z)
    profiles = Z @ Y
    out = []
    for j in range(min(count, profiles.shape[1])):
        out.append((float(evals[j]), k, None, j, {"phi": _fix_sign(profiles[:, j]), "kappa": kappa}))
    return out


def _concentration_mode_grids(domain: Domain, k: int, parity: int, prof: dict):
    Nx, Nz = domain.Nx, domain.Nz
    phi = prof["phi"]
    dphi = domain.Dz @ phi
    if k == 0:
        vals = np.broadcast_to(phi, (Nx, Nz)).copy()
        gx = np.zeros((Nx, Nz))
        gz = np.broadcast_to(dphi, (Nx, Nz)).copy()
        return vals, np.stack([gx, gz])
    kappa = prof["kappa"]
    c = np.cos(kappa * domain.x)[:, None]
    s = np.sin(kappa * domain.x)[:, None]
    if parity == 0:
        vals = c * phi[None, :]
        gx = -kappa * s * phi[None, :]
        gz = c * dphi[None, :]
    else:
        vals = s * phi[None, :]
        gx = kappa * c * phi[None, :]
        gz = s * dphi[None, :]
    return vals, np.stack([gx, gz])


def build_concentration_basis(domain: Domain, theta: float, U: float, n: int) -> SpectralBasis:
    """First n eigenpairs of the concentration operator.

    Requires the swim-speed smallness 2*U*C_P < theta, which guarantees the
    operator is positive definite on mean-zero scalars; the builder checks
    this with the estimated Poincare constant and refuses otherwise.
    """
    _check_capacity(domain, n)
    cp_scalar, _ = estimate_poincare(domain, "mean_zero_scalar")
    verdict = check_smallness_U(theta, U, cp_scalar)
    if not verdict.passed:
        raise ValueError(
            f"swim speed too large: 2*U*C_P = {2 * U * cp_scalar:.6g} must stay below theta = {theta:.6g}"
        )

    k_max = max(2, n // 2 + 1)
    if k_max > domain.Nx // 3:
        k_max = domain.Nx // 3
    per_block = min(n, domain.Nz - 2)
    candidates = []
    for ev, k, _, j, prof in _concentration_block(domain, theta, U, 0, per_block):
        candidates.append((ev, 0, 0, j, prof))
    for k in range(1, k_max + 1):
        for ev, _, _, j, prof in _concentration_block(domain, theta, U, k, per_block):
            candidates.append((ev, k, 0, j, prof))
            candidates.append((ev, k, 1, j, prof))
    candidates.sort(key=lambda rec: (rec[0], rec[1], rec[2], rec[3]))
    chosen = candidates[:n]

    fields = np.empty((n, domain.Nx, domain.Nz))
    gradients = np.empty((n, 2, domain.Nx, domain.Nz))
    mode_index = []
    eigenvalues = np.empty(n)
    for i, (ev, k, parity, j, prof) in enumerate(chosen):
        eigenvalues[i] = ev
        mode_index.append((k, parity, j))
        fields[i], gradients[i] = _concentration_mode_grids(domain, k, parity, prof)

    W = domain.quadrature.area
    gram = np.einsum("ixz,jxz,xz->ij", fields, fields, W)
    means = np.array([domain.integrate(fields[i]) for i in range(n)])

    bc_res = np.empty(n)
    for i in range(n):
        phi_v = fields[i]
        dphi_v = domain.ddz(phi_v)
        scale = 1.0 + np.max(np.abs(phi_v))
        bc_res[i] = max(
            np.max(np.abs(theta * dphi_v[:, 0] - U * phi_v[:, 0])),
            np.max(np.abs(theta * dphi_v[:, -1] - U * phi_v[:, -1])),
        ) / scale

    stiffness = theta * np.einsum("icxz,jcxz,xz->ij", gradients, gradients, W)
    wx = domain.wx
    boundary_coupling = np.einsum(
        "ix,jx,x->ij", fields[:, :, -1], fields[:, :, -1], wx
    ) - np.einsum("ix,jx,x->ij", fields[:, :, 0], fields[:, :, 0], wx)
    transport = np.einsum("axz,lxz,xz->la", fields, gradients[:, 1], W)
    source_dz = np.einsum("lxz,xz->l", gradients[:, 1], W)

    part = ConcentrationPart(
        theta=theta,
        U=U,
        eigenvalues=eigenvalues,
        fields=fields,
        gradients=gradients,
        mode_index=mode_index,
        gram=gram,
        bc_residuals=bc_res,
        means=means,
        stiffness=stiffness,
        boundary_coupling=boundary_coupling,
        transport=transport,
        source_dz=source_dz,
    )
    return SpectralBasis(domain=domain, n=n, concentration=part)


def build_bases(domain: Domain, n: int, theta: float, U: float) -> SpectralBasis:
    """Velocity and concentration eigenbases in a single container."""
    sb = build_stokes_basis(domain, n)
    cb = build_concentration_basis(domain, theta, U, n)
    return SpectralBasis(domain=domain, n=n, stokes=sb.stokes, concentration=cb.concentration)


# ---------------------------------------------------------------------------
# Leray projection and strong operator application
# ---------------------------------------------------------------------------

def _pressure_solves(domain: Domain):
    """Cached LU factorizations of the per-mode pressure systems."""
    cache = getattr(domain, "_pressure_cache", None)
    if cache is not None:
        return cache
    Nz = domain.Nz
    n_k = domain.Nx // 2 + 1
    cache = []
    for ik in range(n_k):
        kappa = domain.kx[ik]
        L = domain.Dz2 - kappa**2 * np.eye(Nz)
        L[0, :] = domain.Dz[0, :]
        L[-1, :] = domain.Dz[-1, :]
        if ik == 0:
            # pure Neumann: border with a mean constraint and a compatibility
            # multiplier supported on the interior rows
            A = np.zeros((Nz + 1, Nz + 1))
            A[:Nz, :Nz] = L
            A[1 : Nz - 1, Nz] = 1.0
            A[Nz, :Nz] = domain.wz
            cache.append(scipy.linalg.lu_factor(A))
        else:
            cache.append(scipy.linalg.lu_factor(L.astype(complex)))
    domain._pressure_cache = cache
    return cache


def _solve_pressure(domain: Domain, rhs_interior: np.ndarray, neumann_bottom: np.ndarray,
                    neumann_top: np.ndarray) -> np.ndarray:
    """Per-mode solve of Lap q = rhs with Neumann rows at both walls.

    ``rhs_interior`` is the transformed right-hand side (n_k, Nz);
    ``neumann_*`` hold the boundary data per mode.  Returns q-hat (n_k, Nz)
    with the x-average mode pinned to quadrature mean zero.
    """
    solves = _pressure_solves(domain)
    Nz = domain.Nz
    n_k = rhs_interior.shape[0]
    qhat = np.zeros((n_k, Nz), dtype=complex)
    for ik in range(n_k):
        rhs = rhs_interior[ik].astype(complex).copy()
        rhs[0] = neumann_bottom[ik]
        rhs[-1] = neumann_top[ik]
        if ik == 0:
            rhs_b = np.zeros(Nz + 1)
            rhs_b[:Nz] = rhs.real
            qhat[ik] = scipy.linalg.lu_solve(solves[0], rhs_b)[:Nz]
        else:
            qhat[ik] = scipy.linalg.lu_solve(solves[ik], rhs)
    return qhat


def leray_project(v: VectorField) -> VectorField:
    """L2-orthogonal projection onto discretely divergence-free fields.

    Solves the per-mode pressure problem Lap q = div v with dq/dz matching
    the normal velocity on both walls, then subtracts the gradient.  The
    result carries the ``solenoidal`` flag; v - Pv is a discrete gradient.
    """
    dom = v.domain
    vx_hat = np.fft.rfft(v.ux, axis=0)
    vz_hat = np.fft.rfft(v.uz, axis=0)
    div_hat = dom._ikx[:, None] * vx_hat + vz_hat @ dom.Dz.T
    qhat = _solve_pressure(dom, div_hat, vz_hat[:, 0], vz_hat[:, -1])
    gx_hat = dom._ikx[:, None] * qhat
    gz_hat = qhat @ dom.Dz.T
    gx = np.fft.irfft(gx_hat, n=dom.Nx, axis=0)
    gz = np.fft.irfft(gz_hat, n=dom.Nx, axis=0)
    return VectorField(
        v.ux - gx, v.uz - gz, dom, name=f"P({v.name})" if v.name else "", time=v.time,
        solenoidal=True,
    )


def helmholtz_split_laplacian(u: VectorField) -> tuple[VectorField, VectorField, ScalarField]:
    """Split -Lap u into the Stokes part plus a harmonic pressure gradient.

    For a divergence-free u in the operator's domain this returns
    (A u, grad qbar, qbar) with -Lap u = A u + grad qbar, qbar harmonic with
    mean zero, and A u carrying no normal trace on either wall.
    """
    dom = u.domain
    lx = -dom.laplacian(u.ux)
    lz = -dom.laplacian(u.uz)
    lz_hat = np.fft.rfft(lz, axis=0)
    zero = np.zeros((dom.Nx // 2 + 1, dom.Nz))
    qhat = _solve_pressure(dom, zero, lz_hat[:, 0], lz_hat[:, -1])
    gx_hat = dom._ikx[:, None] * qhat
    gz_hat = qhat @ dom.Dz.T
    gx = np.fft.irfft(gx_hat, n=dom.Nx, axis=0)
    gz = np.fft.irfft(gz_hat, n=dom.Nx, axis=0)
    qbar = np.fft.irfft(qhat, n=dom.Nx, axis=0)
    au = VectorField(lx - gx, lz - gz, dom, name=f"A({u.name})" if u.name else "",
                     time=u.time, solenoidal=True)
    grad_q = VectorField(gx, gz, dom, name="grad_qbar", time=u.time)
    return au, grad_q, ScalarField(qbar, dom, name="qbar", time=u.time)


class StokesOperator:
    """Discrete Stokes operator A = -P Lap on the divergence-free space."""

    def __init__(self, domain: Domain):
        self.domain = domain

    def apply(self, u: VectorField) -> VectorField:
        au, _, _ = helmholtz_split_laplacian(u)
        return au


class ConcentrationOperator:
    """Discrete operator A1: mean-zero projection of -theta*Lap."""

    def __init__(self, domain: Domain, theta: float, U: float):
        self.domain = domain
        self.theta = theta
        self.U = U

    def apply(self, s: ScalarField) -> ScalarField:
        vals = -self.theta * self.domain.laplacian(s.values)
        vals = vals - self.domain.mean(vals)
        return ScalarField(vals, self.domain, name=f"A1({s.name})" if s.name else "", time=s.time)


# ---------------------------------------------------------------------------
# Functional-inequality constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantEstimate:
    """A constant with its provenance: 'formula' or 'numerical-estimate'."""

    value: float
    provenance: str
    recipe: str

    def as_dict(self) -> dict:
        return {"value": self.value, "provenance": self.provenance, "recipe": self.recipe}


@dataclass
class ConstantsReport:
    """Domain-dependent inequality constants with provenance labels."""

    poincare_velocity: ConstantEstimate
    poincare_scalar: ConstantEstimate
    korn: ConstantEstimate
    trace_scalar: ConstantEstimate
    trace_velocity_gamma: ConstantEstimate
    smallness: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {
            "poincare_velocity": self.poincare_velocity.as_dict(),
            "poincare_scalar": self.poincare_scalar.as_dict(),
            "korn": self.korn.as_dict(),
            "trace_scalar": self.trace_scalar.as_dict(),
            "trace_velocity_gamma": self.trace_velocity_gamma.as_dict(),
            "smallness": self.smallness,
            "extras": {k: v.as_dict() if isinstance(v, ConstantEstimate) else v
                       for k, v in self.extras.items()},
        }
        return out


def _scan_kappas(domain: Domain, k_max: int = 8) -> list[float]:
    return [2.0 * np.pi * k / domain.Lx for k in range(k_max + 1)]


def estimate_poincare(domain: Domain, which: str) -> tuple[float, dict]:
    """Poincare constant C_P with |f| <= C_P |grad f| on the stated class.

    ``which`` selects the class: ``mean_zero_scalar`` (zero-average scalars,
    natural boundary conditions) or ``velocity_on_S`` (fields vanishing on
    the bottom wall, evaluated per component).  Returns (C_P, diagnostics
    with the eigensolver residual).
    """
    Wz = np.diag(domain.wz)
    D = domain.Dz
    lam_min = np.inf
    residual = 0.0
    for kappa in _scan_kappas(domain, 2):
        S = D.T @ Wz @ D + kappa**2 * Wz
        if which == "mean_zero_scalar":
            if kappa == 0.0:
                Z = _nullspace(domain.wz[None, :])
            else:
                Z = np.eye(domain.Nz)
        elif which == "velocity_on_S":
            constraint = np.zeros((1, domain.Nz))
            constraint[0, 0] = 1.0
            Z = _nullspace(constraint)
        else:
            raise ValueError(f"unknown Poincare class {which!r}")
        Sr, Mr = Z.T @ S @ Z, Z.T @ Wz @ Z
        evals, vecs = scipy.linalg.eigh(Sr, Mr)
        if evals[0] < lam_min:
            lam_min = evals[0]
            v = vecs[:, 0]
            residual = float(np.linalg.norm(Sr @ v - evals[0] * (Mr @ v)))
    return 1.0 / float(np.sqrt(lam_min)), {"lambda_min": float(lam_min), "residual": residual}


def estimate_korn(domain: Domain) -> tuple[float, dict]:
    """Smallest C with |grad u| <= C |D(u)| on the admissible velocity class.

    Solved as the per-wavenumber generalized eigenproblem maximizing
    |grad u|^2 / |D(u)|^2 over fields with u = 0 at the bottom and zero
    normal component at the top.  On this geometry the supremum is exactly 2
    (the divergence-free shear direction attains it), so the estimate doubles
    as a discretization check.
    """
    Wz = np.diag(domain.wz)
    D = domain.Dz
    Nz = domain.Nz
    lam_max = 0.0
    per_k = {}
    for k, kappa in enumerate(_scan_kappas(domain, 6)):
        # block variables y = [a; b]: ux = a(z) cos(kappa x), uz = b(z) sin(kappa x)
        Zero = np.zeros((Nz, Nz))
        GradForm = np.block([
            [kappa**2 * Wz + D.T @ Wz @ D, Zero],
            [Zero, kappa**2 * Wz + D.T @ Wz @ D],
        ])
        # |D|^2: kappa^2 a^2 + b'^2 + 0.5 (a' + kappa b)^2
        K11 = kappa**2 * Wz + 0.5 * (D.T @ Wz @ D)
        K12 = 0.5 * kappa * (D.T @ Wz)
        K22 = D.T @ Wz @ D + 0.5 * kappa**2 * Wz
        DForm = np.block([[K11, K12], [K12.T, K22]])
        constraints = np.zeros((3, 2 * Nz))
        constraints[0, 0] = 1.0        # a(0) = 0
        constraints[1, Nz] = 1.0       # b(0) = 0
        constraints[2, 2 * Nz - 1] = 1.0  # b(H) = 0
        Z = _nullspace(constraints)
        Gr, Kr = Z.T @ GradForm @ Z, Z.T @ DForm @ Z
        evals = scipy.linalg.eigh(Gr, Kr, eigvals_only=True)
        per_k[k] = float(evals[-1])
        lam_max = max(lam_max, per_k[k])
    return float(np.sqrt(lam_max)), {"ratio_per_wavenumber": per_k}


def estimate_trace_constants(domain: Domain) -> dict:
    """Trace constants by generalized eigenproblems per wavenumber.

    ``scalar``: smallest C with the boundary L2 norm (both walls) bounded by
    C times the H1 norm, over unconstrained scalars.  ``velocity_gamma``:
    same with only the free surface on the left side, over fields vanishing
    at the bottom wall (applied per component).
    """
    Wz = np.diag(domain.wz)
    D = domain.Dz
    Nz = domain.Nz
    out = {}
    for name in ("scalar", "velocity_gamma"):
        lam_max = 0.0
        for kappa in _scan_kappas(domain, 6):
            S = D.T @ Wz @ D + kappa**2 * Wz + Wz
            B = np.zeros((Nz, Nz))
            B[-1, -1] = 1.0
            if name == "scalar":
                B[0, 0] = 1.0
                Z = np.eye(Nz)
            else:
                constraint = np.zeros((1, Nz))
                constraint[0, 0] = 1.0
                Z = _nullspace(constraint)
            evals = scipy.linalg.eigh(Z.T @ B @ Z, Z.T @ S @ Z, eigvals_only=True)
            lam_max = max(lam_max, float(evals[-1]))
        out[name] = float(np.sqrt(lam_max))
    return out


def estimate_embedding_constants(basis: SpectralBasis, samples: int = 200, seed: int = 0) -> dict:
    """Sampled embedding constants over random basis combinations.

    Each constant is the maximum of its defining quotient over ``samples``
    random coefficient vectors (seeded, geometrically damped), evaluated by
    quadrature.  Keys:

      grad2_over_a1:   |grad s|      / |A1 s|
      grad4_over_a1:   |grad s|_4    / |A1 s|
      l4_over_grad:    |s|_4         / |grad s|       (mean-zero scalars)
      u4_over_d:       |u|_4         / |D(u)|         (admissible velocities)
      interp_grad4:    |grad s|_4 / (|grad s|^{1/4} |A1 s|^{3/4})
    """
    dom = basis.domain
    con = basis.concentration
    sto = basis.stokes
    rng = np.random.default_rng(seed)
    n = basis.n
    damp = 0.75 ** np.arange(n)
    out = dict.fromkeys(
        ["grad2_over_a1", "grad4_over_a1", "l4_over_grad", "u4_over_d", "interp_grad4"], 0.0
    )
    W = dom.quadrature.area
    for _ in range(samples):
        if con is not None:
            d = rng.standard_normal(n) * damp
            s_grid = np.einsum("l,lxz->xz", d, con.fields)
            g = np.einsum("l,lcxz->cxz", d, con.gradients)
            grad2 = float(np.sqrt(np.sum((g[0] ** 2 + g[1] ** 2) * W)))
            grad4 = float(np.sum(((g[0] ** 2 + g[1] ** 2) ** 2) * W) ** 0.25)
            a1 = float(np.sqrt(np.sum((con.eigenvalues * d) ** 2)))
            l4 = lp_norm(ScalarField(s_grid, dom), 4)
            if a1 > 0:
                out["grad2_over_a1"] = max(out["grad2_over_a1"], grad2 / a1)
                out["grad4_over_a1"] = max(out["grad4_over_a1"], grad4 / a1)
                if grad2 > 0:
                    out["interp_grad4"] = max(
                        out["interp_grad4"], grad4 / (grad2**0.25 * a1**0.75)
                    )
            if grad2 > 0:
                out["l4_over_grad"] = max(out["l4_over_grad"], l4 / grad2)
        if sto is not None:
            c = rng.standard_normal(n) * damp
            u_grid = np.einsum("j,jcxz->cxz", c, sto.fields)
            d_norm = float(np.sqrt(0.5 * np.sum(sto.eigenvalues * c**2)))
            u4 = lp_norm(VectorField(u_grid[0], u_grid[1], dom), 4)
            if d_norm > 0:
                out["u4_over_d"] = max(out["u4_over_d"], u4 / d_norm)
    return out


@dataclass(frozen=True)
class SmallnessVerdict:
    passed: bool
    margin: float


def check_smallness_U(theta: float, U: float, C_P: float) -> SmallnessVerdict:
    """Swim-speed smallness 2*U*C_P < theta (strict), with its margin."""
    margin = theta - 2.0 * U * C_P
    return SmallnessVerdict(passed=margin > 0.0, margin=margin)


def estimate_constants(domain: Domain, theta: float = 1.0, U: float = 0.0) -> ConstantsReport:
    """Assemble the domain-dependent constants report with provenance."""
    cp_vel, diag_v = estimate_poincare(domain, "velocity_on_S")
    cp_sca, diag_s = estimate_poincare(domain, "mean_zero_scalar")
    korn, diag_k = estimate_korn(domain)
    traces = estimate_trace_constants(domain)
    verdict = check_smallness_U(theta, U, cp_sca)
    return ConstantsReport(
        poincare_velocity=ConstantEstimate(
            cp_vel, "numerical-estimate",
            "1/sqrt(min eigenvalue) of the Dirichlet-bottom gradient form per wavenumber",
        ),
        poincare_scalar=ConstantEstimate(
            cp_sca, "numerical-estimate",
            "1/sqrt(min eigenvalue) of the mean-zero Neumann gradient form per wavenumber",
        ),
        korn=ConstantEstimate(
            korn, "numerical-estimate",
            "sqrt(max |grad u|^2/|D(u)|^2) over admissible per-wavenumber blocks",
        ),
        trace_scalar=ConstantEstimate(
            traces["scalar"], "numerical-estimate",
            "sqrt(max boundary-L2 over H1) for unconstrained scalars",
        ),
        trace_velocity_gamma=ConstantEstimate(
            traces["velocity_gamma"], "numerical-estimate",
            "sqrt(max surface-L2 over H1) for Dirichlet-bottom components",
        ),
        smallness={
            "two_U_CP_less_theta": {"passed": verdict.passed, "margin": verdict.margin}
        },
        extras={
            "poincare_velocity_diagnostics": diag_v,
            "poincare_scalar_diagnostics": diag_s,
            "korn_diagnostics": diag_k,
        },
    )


# ---------------------------------------------------------------------------
# Basis export
# ---------------------------------------------------------------------------

def _domain_hash(domain: Domain) -> str:
    key = f"{domain.Lx!r}|{domain.H!r}|{domain.Nx}|{domain.Nz}"
    return hashlib.sha256(key.encode()).hexdigest()[:16]


def export_basis(basis: SpectralBasis, out_dir: str) -> dict:
    """Write a basis as a JSON manifest plus flat binary field blocks.

    Field blocks are float64, one mode after another, components x-fastest
    (same layout as field serialization).  Returns the manifest dictionary.
    """
    os.makedirs(out_dir, exist_ok=True)
    dom = basis.domain
    manifest: dict = {
        "n": basis.n,
        "domain": {"Lx": dom.Lx, "H": dom.H, "Nx": dom.Nx, "Nz": dom.Nz},
        "domain_hash": _domain_hash(dom),
        "tolerances": {"gram": 1e-8, "bc_residual": 1e-6, "div_tol": DIV_TOL},
    }
    if basis.stokes is not None:
        s = basis.stokes
        manifest["stokes"] = {
            "eigenvalues": s.eigenvalues.tolist(),
            "mode_index": [list(m) for m in s.mode_index],
            "max_gram_defect": float(np.max(np.abs(s.gram - np.eye(basis.n)))),
            "max_bc_residual": float(np.max(s.bc_residuals)),
            "max_div_residual": float(np.max(s.div_residuals)),
            "file": "stokes_fields.bin",
        }
        blocks = np.stack([np.concatenate([f[0].ravel(order="F"), f[1].ravel(order="F")])
                           for f in s.fields])
        blocks.astype("<f8").tofile(os.path.join(out_dir, "stokes_fields.bin"))
    if basis.concentration is not None:
        c = basis.concentration
        manifest["concentration"] = {
            "theta": c.theta,
            "U": c.U,
            "eigenvalues": c.eigenvalues.tolist(),
            "mode_index": [list(m) for m in c.mode_index],
            "max_gram_defect": float(np.max(np.abs(c.gram - np.eye(basis.n)))),
            "max_bc_residual": float(np.max(c.bc_residuals)),
            "max_abs_mean": float(np.max(np.abs(c.means))),
            "file": "concentration_fields.bin",
        }
        blocks = np.stack([f.ravel(order="F") for f in c.fields])
        blocks.astype("<f8").tofile(os.path.join(out_dir, "concentration_fields.bin"))
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
