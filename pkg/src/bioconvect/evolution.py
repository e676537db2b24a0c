"""Time integration of the coupled Galerkin systems.

Two variants of the same flow-concentration system are integrated in
coefficient space.  The relaxed variant evolves (u, zeta) with zeta the
deviation of the concentration from its uniform mean and admits tangential
surface stress data; the regularity variant evolves (u, xi) with xi the
deviation from the stratified profile plus the frozen projected initial
layer, and requires zero surface stress.

The time stepper is a two-stage, second order IMEX scheme: the constant
coefficient dissipation (nu0 times the Stokes operator, theta-diffusion) is
diagonal in the eigenbases and treated implicitly; everything else,
including the variable-viscosity remainder 2 div((nu(m)-nu0) D(u)), the
advection, the buoyancy coupling, and the swim transport, is explicit.
Nonlinear products are dealiased by 2/3 truncation in x before projection.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from bioconvect.config import SimConfig
from bioconvect.domain import Domain, ScalarField, VectorField, sym_gradient
from bioconvect.operators import SpectralBasis
from bioconvect.stationary import AuxiliaryMalpha

__all__ = [
    "GalerkinState",
    "EvolutionWorkspace",
    "Trajectory",
    "DiagnosticsLedger",
    "trilinear_advection",
    "viscous_form",
    "initial_projection",
    "make_workspace",
    "build_weak_rhs",
    "build_strong_rhs",
    "integrate",
    "suggest_dt",
    "write_diagnostics_csv",
    "write_summary_json",
]

_SYM_WEIGHTS = np.array([1.0, 2.0, 1.0])  # xx, xz (doubled), zz


# ---------------------------------------------------------------------------
# quadrature forms
# ---------------------------------------------------------------------------

def trilinear_advection(u: VectorField, v, w) -> float:
    """Quadrature value of (u . grad v, w) for scalar or vector v, w."""
    dom = u.domain
    if isinstance(v, ScalarField):
        conv = u.ux * dom.ddx(v.values) + u.uz * dom.ddz(v.values)
        return dom.integrate(conv * w.values)
    conv_x = u.ux * dom.ddx(v.ux) + u.uz * dom.ddz(v.ux)
    conv_z = u.ux * dom.ddx(v.uz) + u.uz * dom.ddz(v.uz)
    return dom.integrate(conv_x * w.ux + conv_z * w.uz)


def viscous_form(m: ScalarField, u: VectorField, w: VectorField, viscosity) -> float:
    """Quadrature value of 2 int nu(m) D(u):D(w)."""
    nu = np.asarray(viscosity(m.values))
    lo = getattr(viscosity, "nu0", None)
    hi = getattr(viscosity, "nu1", None)
    if lo is not None and hi is not None:
        pad = 1e-12 * max(1.0, hi)
        if np.min(nu) < lo - pad or np.max(nu) > hi + pad:
            warnings.warn("viscosity evaluation left its declared bounds", RuntimeWarning)
    Du = sym_gradient(u)
    Dw = sym_gradient(w)
    integrand = Du.xx * Dw.xx + 2.0 * Du.xz * Dw.xz + Du.zz * Dw.zz
    return 2.0 * m.domain.integrate(nu * integrand)


# ---------------------------------------------------------------------------
# state and workspace
# ---------------------------------------------------------------------------

@dataclass
class GalerkinState:
    """Coefficients of one Galerkin iterate.

    ``d`` codes the mean-deviation scalar in the relaxed variant and the
    xi-unknown in the regularity variant, where ``d0`` additionally stores
    the frozen projected initial concentration layer.
    """

    t: float
    c: np.ndarray
    d: np.ndarray
    variant: str
    basis: SpectralBasis
    d0: np.ndarray | None = None

    def velocity(self) -> VectorField:
        return self.basis.reconstruct_velocity(self.c, name="u", time=self.t)

    def scalar(self) -> ScalarField:
        return self.basis.reconstruct_scalar(self.d, name="zeta" if self.variant == "weak" else "xi",
                                             time=self.t)

    def copy(self) -> "GalerkinState":
        return GalerkinState(self.t, self.c.copy(), self.d.copy(), self.variant,
                             self.basis, None if self.d0 is None else self.d0.copy())


def initial_projection(u0: VectorField, s0: ScalarField, basis: SpectralBasis,
                       variant: str = "weak") -> GalerkinState:
    """Project initial fields onto the bases by quadrature inner products.

    For the relaxed variant ``s0`` is the mean-deviation scalar at t=0; for
    the regularity variant ``s0`` is the initial concentration layer, stored
    frozen in ``d0`` while the evolving unknown starts at zero.
    """
    if variant not in ("weak", "strong"):
        raise ValueError(f"variant must be 'weak' or 'strong', got {variant!r}")
    dom = basis.domain
    W = dom.quadrature.area
    c = np.einsum("xz,jxz,xz->j", u0.ux, basis.stokes.fields[:, 0], W) + np.einsum(
        "xz,jxz,xz->j", u0.uz, basis.stokes.fields[:, 1], W
    )
    d_proj = np.einsum("xz,lxz,xz->l", s0.values, basis.concentration.fields, W)
    if variant == "weak":
        return GalerkinState(0.0, c, d_proj, "weak", basis)
    return GalerkinState(0.0, c, np.zeros(basis.n), "strong", basis, d0=d_proj)


@dataclass
class EvolutionWorkspace:
    """Precomputed contraction data for fast right-hand sides."""

    basis: SpectralBasis
    variant: str
    theta: float
    U: float
    alpha: float
    viscosity: object
    nu0: float
    mean_m: float
    alpha_eig: np.ndarray
    beta_eig: np.ndarray
    Xc: np.ndarray            # (j, l): (phi_l, w_j vertical component)
    chi_vec: np.ndarray       # (chi, w_j); structurally ~0 for this basis
    fvec: np.ndarray
    b1vec: np.ndarray
    Gc: np.ndarray            # (l, a): theta (grad phi_a, grad phi_l)
    Tmat: np.ndarray          # (l, a): (phi_a, d phi_l / dz)
    svec: np.ndarray          # (1, d phi_l / dz)
    f_grids: np.ndarray
    b1_profile: np.ndarray
    d0: np.ndarray | None = None
    malpha: AuxiliaryMalpha | None = None
    malpha_grid: np.ndarray | None = None
    malpha_dz_grid: np.ndarray | None = None
    malpha_chi: np.ndarray | None = None

    @property
    def domain(self) -> Domain:
        return self.basis.domain

    @property
    def Ldiag(self) -> np.ndarray:
        """Diagonal of the implicit (stiff) part in coefficient space."""
        return np.concatenate([-self.nu0 * self.alpha_eig, -self.beta_eig])


def make_workspace(basis: SpectralBasis, cfg: SimConfig,
                   malpha: AuxiliaryMalpha | None = None,
                   state0: GalerkinState | None = None) -> EvolutionWorkspace:
    """Assemble the constant contraction data for a configuration.

    The regularity variant needs the stratified profile (``malpha``) and the
    frozen initial-layer coefficients, taken from ``state0.d0``.
    """
    dom = basis.domain
    sto, con = basis.stokes, basis.concentration
    if sto is None or con is None:
        raise ValueError("workspace needs both basis parts")
    W = dom.quadrature.area
    fx, fz = cfg.forcing.evaluate(dom)
    b1 = cfg.surface_stress.evaluate(dom)
    if cfg.scheme == "strong" and np.any(b1 != 0.0):
        raise ValueError("the regularity variant requires zero tangential surface stress")

    fvec = np.einsum("xz,jxz,xz->j", fx, sto.fields[:, 0], W) + np.einsum(
        "xz,jxz,xz->j", fz, sto.fields[:, 1], W
    )
    b1vec = 2.0 * np.einsum("x,jx,x->j", b1, sto.fields[:, 0, :, -1], dom.wx)
    Xc = np.einsum("lxz,jxz,xz->jl", con.fields, sto.fields[:, 1], W)
    chi_vec = np.einsum("jxz,xz->j", sto.fields[:, 1], W)

    ws = EvolutionWorkspace(
        basis=basis,
        variant=cfg.scheme,
        theta=cfg.theta,
        U=cfg.U,
        alpha=cfg.alpha,
        viscosity=cfg.viscosity,
        nu0=cfg.viscosity.nu0,
        mean_m=cfg.alpha / dom.area,
        alpha_eig=sto.eigenvalues,
        beta_eig=con.eigenvalues,
        Xc=Xc,
        chi_vec=chi_vec,
        fvec=fvec,
        b1vec=b1vec,
        Gc=con.stiffness,
        Tmat=con.transport,
        svec=con.source_dz,
        f_grids=np.stack([fx, fz]),
        b1_profile=b1,
    )
    if cfg.scheme == "strong":
        if malpha is None:
            raise ValueError("the regularity variant needs the stratified profile")
        if state0 is None or state0.d0 is None:
            raise ValueError("the regularity variant needs the frozen initial-layer coefficients")
        ws.d0 = state0.d0.copy()
        ws.malpha = malpha
        ws.malpha_grid = np.broadcast_to(malpha.profile, (dom.Nx, dom.Nz)).copy()
        ws.malpha_dz_grid = np.broadcast_to(malpha.dprofile, (dom.Nx, dom.Nz)).copy()
        ws.malpha_chi = np.einsum("xz,jxz,xz->j", ws.malpha_grid, sto.fields[:, 1], W)
    return ws


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------

def _dealias_each(dom: Domain, arrays) -> list[np.ndarray]:
    return [dom.dealias_x(a) for a in arrays]


def _common_velocity_terms(c: np.ndarray, nu: np.ndarray, ws: EvolutionWorkspace,
                           u: np.ndarray, Du: np.ndarray) -> np.ndarray:
    """Viscous (split) plus advection contractions for the velocity rows."""
    dom = ws.domain
    sto = ws.basis.stokes
    W = dom.quadrature.area
    excess = nu - ws.nu0
    prods = _dealias_each(dom, [excess * Du[a] for a in range(3)])
    visc = ws.nu0 * ws.alpha_eig * c + 2.0 * np.einsum(
        "axz,jaxz,a,xz->j", np.stack(prods), sto.sym_grads, _SYM_WEIGHTS, W
    )
    conv_x = dom.dealias_x(u[0] * dom.ddx(u[0]) + u[1] * dom.ddz(u[0]))
    conv_z = dom.dealias_x(u[0] * dom.ddx(u[1]) + u[1] * dom.ddz(u[1]))
    adv = np.einsum("xz,jxz,xz->j", conv_x, sto.fields[:, 0], W) + np.einsum(
        "xz,jxz,xz->j", conv_z, sto.fields[:, 1], W
    )
    return visc + adv


def build_weak_rhs(c: np.ndarray, d: np.ndarray, ws: EvolutionWorkspace
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient derivatives for the relaxed variant.

    Velocity rows: dissipation with nu evaluated at the full concentration,
    advection, buoyancy of the deviation plus the uniform-mean shift, the
    forcing, and the surface-stress functional.  Scalar rows: diffusion,
    advection, and the swim transport with its uniform-mean source.
    """
    dom = ws.domain
    con = ws.basis.concentration
    u = np.einsum("j,jcxz->cxz", c, ws.basis.stokes.fields)
    Du = np.einsum("j,jaxz->axz", c, ws.basis.stokes.sym_grads)
    zeta = np.einsum("l,lxz->xz", d, con.fields)
    nu = np.asarray(ws.viscosity(zeta + ws.mean_m))
    cdot = -( _common_velocity_terms(c, nu, ws, u, Du)
              + ws.Xc @ d + ws.mean_m * ws.chi_vec ) + ws.fvec + ws.b1vec

    grad_z = np.einsum("l,lcxz->cxz", d, con.gradients)
    conv_s = dom.dealias_x(u[0] * grad_z[0] + u[1] * grad_z[1])
    adv_s = np.einsum("xz,lxz,xz->l", conv_s, con.fields, dom.quadrature.area)
    ddot = -(ws.Gc @ d) - adv_s + ws.U * (ws.Tmat @ d) + ws.U * ws.mean_m * ws.svec
    return cdot, ddot


def build_strong_rhs(c: np.ndarray, d: np.ndarray, ws: EvolutionWorkspace
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient derivatives for the regularity variant.

    The viscosity sees the full concentration (evolving part, frozen initial
    layer, stratified profile); the buoyancy and transport rows carry the
    frozen-layer contributions explicitly, and the stratified profile enters
    only through its advection and its (structurally zero) buoyancy moment,
    its own diffusion-transport balance cancelling identically.
    """
    if ws.variant != "strong":
        raise ValueError("workspace was not built for the regularity variant")
    dom = ws.domain
    con = ws.basis.concentration
    d_tot = d + ws.d0
    u = np.einsum("j,jcxz->cxz", c, ws.basis.stokes.fields)
    Du = np.einsum("j,jaxz->axz", c, ws.basis.stokes.sym_grads)
    scal = np.einsum("l,lxz->xz", d_tot, con.fields)
    nu = np.asarray(ws.viscosity(scal + ws.malpha_grid))
    cdot = -( _common_velocity_terms(c, nu, ws, u, Du)
              + ws.Xc @ d_tot + ws.malpha_chi ) + ws.fvec

    grad_s = np.einsum("l,lcxz->cxz", d_tot, con.gradients)
    conv_s = dom.dealias_x(u[0] * grad_s[0] + u[1] * (grad_s[1] + ws.malpha_dz_grid))
    adv_s = np.einsum("xz,lxz,xz->l", conv_s, con.fields, dom.quadrature.area)
    ddot = -(ws.Gc @ d_tot) - adv_s + ws.U * (ws.Tmat @ d_tot)
    return cdot, ddot


def _rhs(c: np.ndarray, d: np.ndarray, ws: EvolutionWorkspace):
    if ws.variant == "weak":
        return build_weak_rhs(c, d, ws)
    return build_strong_rhs(c, d, ws)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

@dataclass
class DiagnosticsLedger:
    """Per-save-time diagnostics; the energy residual couples adjacent rows."""

    times: list = field(default_factory=list)
    norm_u: list = field(default_factory=list)
    norm_Du: list = field(default_factory=list)
    norm_scalar: list = field(default_factory=list)
    div_max: list = field(default_factory=list)
    norm_A1_scalar: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    energy_residual: list = field(default_factory=list)
    power: list = field(default_factory=list)
    adv_skew: list = field(default_factory=list)
    norm_grad_scalar: list = field(default_factory=list)

    def finalize_energy_residuals(self):
        """Trapezoid check of the energy balance between adjacent saves."""
        self.energy_residual = [0.0]
        for i in range(1, len(self.times)):
            dt = self.times[i] - self.times[i - 1]
            dE = 0.5 * (self.norm_u[i] ** 2 - self.norm_u[i - 1] ** 2)
            self.energy_residual.append(
                dE / dt + 0.5 * (self.power[i] + self.power[i - 1])
            )

    def as_rows(self):
        for i in range(len(self.times)):
            yield (self.times[i], self.norm_u[i], self.norm_Du[i], self.norm_scalar[i],
                   self.div_max[i], self.norm_A1_scalar[i], self.mass[i],
                   self.energy_residual[i] if i < len(self.energy_residual) else 0.0)


@dataclass
class Trajectory:
    """Saved states plus diagnostics; ``blown_up`` flags early termination."""

    variant: str
    states: list
    diagnostics: DiagnosticsLedger
    blown_up: bool = False
    blowup_time: float | None = None
    completed: bool = True

    @property
    def times(self) -> np.ndarray:
        return np.array(self.diagnostics.times)

    def final_state(self) -> GalerkinState:
        return self.states[-1]


def _energy_power(state: GalerkinState, ws: EvolutionWorkspace) -> float:
    """Independent quadrature evaluation of the energy-balance flux terms.

    Assembled from the physical forms (viscous_form, trilinear_advection,
    direct quadrature of buoyancy, forcing, surface stress), not from the
    coefficient right-hand side, so the balance check exercises a second
    evaluation path.
    """
    dom = ws.domain
    u = state.velocity()
    s = state.scalar()
    if ws.variant == "weak":
        m_for_nu = ScalarField(s.values + ws.mean_m, dom)
        buoy = dom.integrate((s.values + ws.mean_m) * u.uz)
    else:
        total = s.values + np.einsum("l,lxz->xz", ws.d0, ws.basis.concentration.fields)
        m_for_nu = ScalarField(total + ws.malpha_grid, dom)
        buoy = dom.integrate(m_for_nu.values * u.uz)
    visc = viscous_form(m_for_nu, u, u, ws.viscosity)
    adv = trilinear_advection(u, u, u)
    f_work = dom.integrate(ws.f_grids[0] * u.ux + ws.f_grids[1] * u.uz)
    b1_work = 2.0 * np.sum(dom.wx * ws.b1_profile * u.ux[:, -1])
    return visc + adv + buoy - f_work - b1_work


def _record(state: GalerkinState, ws: EvolutionWorkspace, ledger: DiagnosticsLedger):
    con = ws.basis.concentration
    u = state.velocity()
    div = u.divergence()
    d_for_a1 = state.d if ws.variant == "weak" else state.d + ws.d0
    mass = ws.alpha + float(np.dot(d_for_a1, con.means))
    ledger.times.append(state.t)
    ledger.norm_u.append(float(np.linalg.norm(state.c)))
    ledger.norm_Du.append(float(np.sqrt(0.5 * np.sum(ws.alpha_eig * state.c**2))))
    ledger.norm_scalar.append(float(np.linalg.norm(state.d)))
    ledger.div_max.append(float(np.max(np.abs(div))))
    ledger.norm_A1_scalar.append(float(np.sqrt(np.sum((ws.beta_eig * d_for_a1) ** 2))))
    ledger.mass.append(mass)
    ledger.power.append(_energy_power(state, ws))
    ledger.adv_skew.append(abs(trilinear_advection(u, u, u)))
    grad_sq = float(d_for_a1 @ ws.Gc @ d_for_a1) / ws.theta
    ledger.norm_grad_scalar.append(float(np.sqrt(max(grad_sq, 0.0))))


# ---------------------------------------------------------------------------
# integrator
# ---------------------------------------------------------------------------

def suggest_dt(ws: EvolutionWorkspace, state: GalerkinState, safety: float = 0.5) -> float:
    """Advective-CFL step suggestion with the explicit-viscous cap."""
    dom = ws.domain
    u = state.velocity()
    umax = max(float(np.max(np.abs(u.ux))), float(np.max(np.abs(u.uz))), 1e-12)
    dx = dom.Lx / dom.Nx
    dz = float(np.min(np.diff(dom.z)))
    dt_adv = min(dx, dz) / umax
    nu_spread = ws.viscosity.nu1 - ws.nu0
    dt_visc = np.inf if nu_spread == 0 else 2.0 / (nu_spread * float(ws.alpha_eig[-1]))
    return safety * min(dt_adv, dt_visc)


def integrate(state0: GalerkinState, cfg: SimConfig, ws: EvolutionWorkspace) -> Trajectory:
    """Advance the Galerkin coefficients to t_end with the IMEX stepper.

    Diagnostics are recorded every ``cfg.save_every`` steps (plus the first
    and last).  A norm passing ``cfg.blowup_threshold``, or losing
    finiteness, terminates early with the trajectory flagged; that is a
    legitimate outcome outside the small-data regime, not an error.
    """
    if state0.variant != cfg.scheme or state0.variant != ws.variant:
        raise ValueError("state, config, and workspace variants must agree")
    n = ws.basis.n
    gamma = 1.0 - 1.0 / np.sqrt(2.0)
    delta = 1.0 - 1.0 / (2.0 * gamma)
    # whole steps of cfg.dt, plus one shortened step to land exactly on t_end
    n_full = int(np.floor(cfg.t_end / cfg.dt + 1e-12))
    remainder = cfg.t_end - n_full * cfg.dt
    steps = [cfg.dt] * n_full
    if remainder > 1e-12 * max(1.0, cfg.t_end):
        steps.append(remainder)
    n_steps = len(steps)
    L = ws.Ldiag

    def N_of(y):
        cdot, ddot = _rhs(y[:n], y[n:], ws)
        return np.concatenate([cdot, ddot]) - L * y

    ledger = DiagnosticsLedger()
    states = [state0.copy()]
    _record(state0, ws, ledger)

    y = np.concatenate([state0.c, state0.d])
    t = state0.t
    blown_up = False
    den_stage = 1.0 - cfg.dt * gamma * L
    for step in range(1, n_steps + 1):
        dt = steps[step - 1]
        if dt != cfg.dt:
            den_stage = 1.0 - dt * gamma * L
        Ny = N_of(y)
        yA = (y + dt * gamma * Ny) / den_stage
        NyA = N_of(yA)
        y_new = (y + dt * (delta * Ny + (1.0 - delta) * NyA)
                 + dt * (1.0 - gamma) * L * yA) / den_stage
        t = state0.t + (step * cfg.dt if step <= n_full else cfg.t_end)
        if not np.all(np.isfinite(y_new)) or np.max(np.abs(y_new)) > cfg.blowup_threshold:
            blown_up = True
            y = y_new
            break
        y = y_new
        if step % cfg.save_every == 0 or step == n_steps:
            st = GalerkinState(t, y[:n].copy(), y[n:].copy(), ws.variant, ws.basis,
                               None if ws.d0 is None else ws.d0)
            states.append(st)
            _record(st, ws, ledger)

    if blown_up:
        st = GalerkinState(t, np.nan_to_num(y[:n], nan=np.inf), np.nan_to_num(y[n:], nan=np.inf),
                           ws.variant, ws.basis, None if ws.d0 is None else ws.d0)
        states.append(st)

    ledger.finalize_energy_residuals()
    return Trajectory(
        variant=ws.variant,
        states=states,
        diagnostics=ledger,
        blown_up=blown_up,
        blowup_time=t if blown_up else None,
        completed=not blown_up,
    )


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_CSV_HEADER = "t,norm_u,norm_Du,norm_scalar,div_max,norm_A1_scalar,mass,energy_residual"


def write_diagnostics_csv(ledger: DiagnosticsLedger, path: str):
    """One row per save time; %.17g so reruns compare byte-for-byte."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        fh.write(_CSV_HEADER + "\n")
        for row in ledger.as_rows():
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def write_summary_json(traj: Trajectory, path: str, extra: dict | None = None):
    led = traj.diagnostics
    summary = {
        "variant": traj.variant,
        "t_final": led.times[-1] if led.times else None,
        "norm_u_final": led.norm_u[-1] if led.norm_u else None,
        "norm_scalar_final": led.norm_scalar[-1] if led.norm_scalar else None,
        "mass_final": led.mass[-1] if led.mass else None,
        "mass_drift_max": (max(abs(m - led.mass[0]) for m in led.mass) if led.mass else None),
        "div_max": max(led.div_max) if led.div_max else None,
        "adv_skew_max": max(led.adv_skew) if led.adv_skew else None,
        "energy_residual_max": (max(abs(r) for r in led.energy_residual[1:])
                                if len(led.energy_residual) > 1 else 0.0),
        "blown_up": traj.blown_up,
        "blowup_time": traj.blowup_time,
        "completed": traj.completed,
    }
    if extra:
        summary.update(extra)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
