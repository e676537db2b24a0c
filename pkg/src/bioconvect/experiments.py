"""Canned desk-scale experiments and their reproducible reports.

Each runner integrates one or a few configurations, evaluates the
associated certificates (convergence ordering, envelope margins, window
monitors, smallness gate, decay fits, twin-trajectory continuous
dependence), and returns a report embedding the resolved configuration
and every estimated constant with its provenance.  With an output
directory set, runners also write per-run diagnostics CSVs and a
report.json; ``emit_plot_data`` turns a completed run directory into
tidy per-panel CSV files.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, SimConfig, config_to_dict
from .domain import Domain, ScalarField, VectorField, make_domain
from .estimates import (
    WINDOW_TARGET,
    ChainConstants,
    build_envelope_spec,
    build_window_inputs,
    bootstrap_window,
    cumulative_trapezoid,
    energy_envelope,
    estimate_chain_constants,
    global_smallness_check,
    monitor_strong_estimates,
    window_gamma,
)
from .evolution import (
    GalerkinState,
    Trajectory,
    initial_projection,
    integrate,
    make_workspace,
    write_diagnostics_csv,
)
from .operators import SpectralBasis, build_bases
from .stationary import AuxiliaryMalpha, ConvergenceError, solve_malpha, solve_stationary

EXPERIMENT_KINDS = (
    "weak_convergence",
    "local_window",
    "global_smalldata",
    "stability_decay",
    "uniqueness_twin",
)


def worker_count() -> int:
    """Worker pool width, capped by the BIOCONVECT_THREADS environment knob."""
    raw = os.environ.get("BIOCONVECT_THREADS", "")
    try:
        cap = int(raw)
    except ValueError:
        cap = 0
    if cap > 0:
        return cap
    return os.cpu_count() or 1


def _parallel_map(fn, items):
    items = list(items)
    if len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(len(items), worker_count())) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# specs, checks, reports
# ---------------------------------------------------------------------------

@dataclass
class ExperimentSpec:
    """One experiment request: a kind, a base configuration, sweep knobs."""

    kind: str
    config: SimConfig
    ns: tuple = (8, 16, 32)
    delta: float = 1e-6
    perturbation_amplitude: float = 1e-3
    fit_skip_fraction: float = 0.1
    check_linearity: bool = False
    outdir: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if len(self.ns) < 2 or any(int(n) <= 0 for n in self.ns):
            raise ConfigError("ns must list at least two positive basis sizes")
        self.ns = tuple(sorted(int(n) for n in self.ns))
        if self.delta < 0 or self.perturbation_amplitude < 0:
            raise ConfigError("perturbation scales must be nonnegative")
        if not 0.0 <= self.fit_skip_fraction < 1.0:
            raise ConfigError("fit_skip_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class CheckRecord:
    name: str
    passed: bool
    detail: str = ""

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


@dataclass
class ExperimentReport:
    kind: str
    checks: list = field(default_factory=list)
    data: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append(CheckRecord(name, bool(passed), detail))

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "passed": self.passed,
            "checks": [c.as_dict() for c in self.checks],
            "data": _jsonable(self.data),
            "config": self.config,
            "constants": self.constants,
        }


@dataclass(frozen=True)
class DecayFit:
    """Log-linear fit of a squared perturbation norm against time."""

    rate: float
    intercept: float
    window: tuple
    r_squared: float
    n_points: int

    def as_dict(self) -> dict:
        return {"rate": self.rate, "intercept": self.intercept,
                "window": list(self.window), "r_squared": self.r_squared,
                "n_points": self.n_points}


def fit_exponential_decay(times, values_sq, skip_fraction: float = 0.1) -> DecayFit:
    """Least-squares slope of log(values_sq), discarding the initial transient."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values_sq, dtype=float)
    if t.shape != y.shape or t.size < 4:
        raise ValueError("need matching series with at least four samples")
    t0 = t[0] + skip_fraction * (t[-1] - t[0])
    mask = (t >= t0) & (y > 0.0)
    if int(mask.sum()) < 4:
        raise ValueError("fewer than four usable samples after the transient cut")
    tt, yy = t[mask], np.log(y[mask])
    slope, intercept = np.polyfit(tt, yy, 1)
    resid = yy - (slope * tt + intercept)
    total = yy - yy.mean()
    ss_tot = float(total @ total)
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(rate=float(-slope), intercept=float(intercept),
                    window=(float(tt[0]), float(tt[-1])), r_squared=r2,
                    n_points=int(mask.sum()))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    if hasattr(obj, "as_dict"):
        return _jsonable(obj.as_dict())
    raise TypeError(f"cannot serialize {type(obj).__name__} into a report")


# ---------------------------------------------------------------------------
# run setup
# ---------------------------------------------------------------------------

@dataclass
class RunSetup:
    """Everything a single integration needs, built once from a config."""

    config: SimConfig
    domain: Domain
    basis: SpectralBasis
    malpha: AuxiliaryMalpha
    state0: GalerkinState
    workspace: object

    @property
    def u0_field(self) -> VectorField:
        return self.basis.reconstruct_velocity(self.state0.c)

    @property
    def scalar0_field(self) -> ScalarField:
        d = self.state0.d if self.state0.d0 is None else self.state0.d0
        return self.basis.reconstruct_scalar(d)


def initial_fields(cfg: SimConfig, dom: Domain) -> tuple[VectorField, ScalarField]:
    """Raw initial fields before projection (zero or seeded band-limited)."""
    zero = np.zeros((dom.Nx, dom.Nz))
    ic = cfg.initial
    if ic.kind == "zero" or ic.kind == "modes":
        return VectorField(zero.copy(), zero.copy(), dom), ScalarField(zero.copy(), dom)
    rng = np.random.default_rng(cfg.seed)
    ux = dom.random_smooth(rng, amplitude=ic.velocity_amplitude)
    uz = dom.random_smooth(rng, amplitude=ic.velocity_amplitude)
    s = dom.random_smooth(rng, amplitude=ic.concentration_amplitude)
    return VectorField(ux, uz, dom), ScalarField(s, dom)


def initial_state(cfg: SimConfig, basis: SpectralBasis) -> GalerkinState:
    """Initial Galerkin coefficients for any initial-condition kind."""
    dom = basis.domain
    if cfg.initial.kind == "modes":
        n = basis.n
        c = np.zeros(n)
        d = np.zeros(n)
        vm = cfg.initial.velocity_modes[:n]
        cm = cfg.initial.concentration_modes[:n]
        c[: len(vm)] = vm
        d[: len(cm)] = cm
        if cfg.scheme == "weak":
            return GalerkinState(0.0, c, d, "weak", basis)
        return GalerkinState(0.0, c, np.zeros(n), "strong", basis, d0=d)
    u0, s0 = initial_fields(cfg, dom)
    return initial_projection(u0, s0, basis, variant=cfg.scheme)


def prepare_run(cfg: SimConfig, fields: tuple | None = None) -> RunSetup:
    """Build domain, bases, stratified profile, initial state and workspace.

    ``fields`` overrides the configured initial condition with explicit
    (velocity, scalar) fields, used when several basis sizes must start
    from identical physical data.
    """
    dom = make_domain(cfg.domain)
    basis = build_bases(dom, cfg.n, cfg.theta, cfg.U)
    malpha = solve_malpha(dom, cfg.theta, cfg.U, cfg.alpha)
    if fields is None:
        state0 = initial_state(cfg, basis)
    else:
        state0 = initial_projection(fields[0], fields[1], basis, variant=cfg.scheme)
    ws = make_workspace(basis, cfg, malpha=malpha, state0=state0)
    return RunSetup(cfg, dom, basis, malpha, state0, ws)


def _forcing_l2_sq(ws) -> float:
    W = ws.basis.domain.quadrature.area
    fx, fz = ws.f_grids
    return float(np.sum((fx**2 + fz**2) * W))


def _surface_l2_sq(ws) -> float:
    return float(np.sum(ws.b1_profile**2 * ws.basis.domain.wx))


def _maybe_write(spec: ExperimentSpec, report: ExperimentReport,
                 trajectories: dict | None = None) -> None:
    if not spec.outdir:
        return
    os.makedirs(spec.outdir, exist_ok=True)
    for tag, traj in (trajectories or {}).items():
        write_diagnostics_csv(traj.diagnostics, os.path.join(spec.outdir, f"diagnostics_{tag}.csv"))
    with open(os.path.join(spec.outdir, "report.json"), "w") as fh:
        json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# grid norms along trajectories
# ---------------------------------------------------------------------------

def _velocity_grid_norms(state: GalerkinState, ws) -> dict:
    dom = ws.basis.domain
    sto = ws.basis.stokes
    W = dom.quadrature.area
    u = np.einsum("j,jcxz->cxz", state.c, sto.fields)
    gx0, gz0 = dom.ddx(u[0]), dom.ddz(u[0])
    gx1, gz1 = dom.ddx(u[1]), dom.ddz(u[1])
    grad_sq = float(np.sum((gx0**2 + gz0**2 + gx1**2 + gz1**2) * W))
    dten = np.einsum("j,jcxz->cxz", state.c, sto.sym_grads)
    frob = dten[0] ** 2 + 2.0 * dten[1] ** 2 + dten[2] ** 2
    return {
        "grad_sq": grad_sq,
        "inf": float(np.sqrt(np.max(u[0] ** 2 + u[1] ** 2))),
        "d4_sq": math.sqrt(float(np.sum(frob**2 * W))),
        "trace_d_sq": float(np.sum(frob[:, -1] * dom.wx)),
    }


def _grad_m_l4_sq(state: GalerkinState, ws) -> float:
    """|grad m|_4^2 of the full concentration, profile included."""
    dom = ws.basis.domain
    d_full = state.d if state.d0 is None else state.d + state.d0
    eta = np.einsum("l,lxz->xz", d_full, ws.basis.concentration.fields)
    gx, gz = dom.ddx(eta), dom.ddz(eta)
    if state.variant == "strong":
        gz = gz + ws.malpha_dz_grid
    W = dom.quadrature.area
    return math.sqrt(float(np.sum((gx**2 + gz**2) ** 2 * W)))


# ---------------------------------------------------------------------------
# weak-mode self-convergence
# ---------------------------------------------------------------------------

def run_weak_convergence(spec: ExperimentSpec) -> ExperimentReport:
    """Same data at increasing basis size; successive differences must shrink."""
    cfg = spec.config
    if cfg.scheme != "weak":
        raise ConfigError("weak_convergence requires a relaxed-variant config")
    report = ExperimentReport(kind="weak_convergence", config=config_to_dict(cfg))

    # Every run must start from the same underlying data, each taking its
    # own orthogonal projection of it.  Coefficient lists ("modes") and
    # zero data give that for free.  Seeded noise does not: its raw form
    # ignores the boundary conditions, so its spectral tail decays too
    # slowly for the windows between basis sizes to shrink; band-limit it
    # through half the coarsest size so the runs compare pure evolution.
    data_fields = None
    if cfg.initial.kind == "random_smooth":
        band = max(1, spec.ns[0] // 2)
        seed_setup = prepare_run(dataclasses.replace(cfg, n=band))
        data_fields = (seed_setup.u0_field, seed_setup.scalar0_field)

    def job(n):
        setup = prepare_run(dataclasses.replace(cfg, n=n), fields=data_fields)
        traj = integrate(setup.state0, setup.config, setup.workspace)
        return setup, traj

    runs = _parallel_map(job, spec.ns)
    trajs = {f"n{n}": traj for n, (_, traj) in zip(spec.ns, runs)}

    for n, (_, traj) in zip(spec.ns, runs):
        report.check(f"completed_n{n}", traj.completed and not traj.blown_up,
                     f"final t={traj.times[-1]:.6g}")

    dom = runs[0][0].domain
    W = dom.quadrature.area
    times = runs[0][1].times
    for _, traj in runs[1:]:
        if len(traj.times) != len(times):
            raise RuntimeError("save grids differ across basis sizes")

    diffs_u, diffs_z = [], []
    for (s_lo, t_lo), (s_hi, t_hi) in zip(runs[:-1], runs[1:]):
        du_max = 0.0
        dz_max = 0.0
        for st_lo, st_hi in zip(t_lo.states, t_hi.states):
            u_lo = np.einsum("j,jcxz->cxz", st_lo.c, s_lo.basis.stokes.fields)
            u_hi = np.einsum("j,jcxz->cxz", st_hi.c, s_hi.basis.stokes.fields)
            du = math.sqrt(float(np.sum(((u_hi - u_lo) ** 2).sum(axis=0) * W)))
            z_lo = np.einsum("l,lxz->xz", st_lo.d, s_lo.basis.concentration.fields)
            z_hi = np.einsum("l,lxz->xz", st_hi.d, s_hi.basis.concentration.fields)
            dz = math.sqrt(float(np.sum((z_hi - z_lo) ** 2 * W)))
            du_max = max(du_max, du)
            dz_max = max(dz_max, dz)
        diffs_u.append(du_max)
        diffs_z.append(dz_max)

    floor = 1e-12
    for i in range(1, len(diffs_u)):
        trivially_small = diffs_u[i] < floor and diffs_u[i - 1] < floor
        report.check(
            f"velocity_cauchy_{spec.ns[i]}_{spec.ns[i + 1]}",
            diffs_u[i] < diffs_u[i - 1] or trivially_small,
            f"{diffs_u[i - 1]:.6e} -> {diffs_u[i]:.6e}",
        )
        trivially_small = diffs_z[i] < floor and diffs_z[i - 1] < floor
        report.check(
            f"scalar_cauchy_{spec.ns[i]}_{spec.ns[i + 1]}",
            diffs_z[i] < diffs_z[i - 1] or trivially_small,
            f"{diffs_z[i - 1]:.6e} -> {diffs_z[i]:.6e}",
        )

    mass_drifts = {}
    mean_max = {}
    envelopes = {}
    for n, (setup, traj) in zip(spec.ns, runs):
        led = traj.diagnostics
        drift = max(abs(m - led.mass[0]) for m in led.mass)
        mass_drifts[n] = drift
        report.check(f"mass_drift_n{n}", drift <= 1e-8, f"max drift {drift:.3e}")
        zmax = 0.0
        for st in traj.states:
            z = np.einsum("l,lxz->xz", st.d, setup.basis.concentration.fields)
            zmax = max(zmax, abs(float(dom.integrate(z))))
        scale = max(max(led.norm_scalar), 1.0)
        mean_max[n] = zmax
        report.check(f"scalar_mean_zero_n{n}", zmax <= 1e-9 * scale,
                     f"max |integral| {zmax:.3e}")

        u0_sq = float(np.sum(setup.state0.c**2))
        z0_sq = float(np.sum(setup.state0.d**2))
        env = build_envelope_spec(setup.basis, cfg.theta, cfg.U, cfg.viscosity.nu0,
                                  cfg.alpha, u0_sq=u0_sq, z0_sq=z0_sq,
                                  times=led.times, f_sq=_forcing_l2_sq(setup.workspace),
                                  b1_sq_gamma=_surface_l2_sq(setup.workspace))
        ereport = energy_envelope(env, np.array(led.times),
                                  np.array(led.norm_u) ** 2,
                                  np.array(led.norm_scalar) ** 2,
                                  np.array(led.norm_Du) ** 2,
                                  np.array(led.norm_grad_scalar) ** 2)
        envelopes[n] = ereport
        report.check(f"envelope_n{n}", ereport.passed,
                     f"min margin {float(np.min(ereport.margins)):.3e}")
        if n == spec.ns[-1]:
            report.constants = env.constants_dict()
            report.data["envelope_times"] = list(led.times)
            report.data["envelope_monitored"] = list(ereport.monitored)
            report.data["envelope_bound"] = list(ereport.bound)

    report.data.update(
        ns=list(spec.ns),
        diff_velocity=diffs_u,
        diff_scalar=diffs_z,
        mass_drift={str(k): v for k, v in mass_drifts.items()},
        scalar_mean_max={str(k): v for k, v in mean_max.items()},
        envelope_min_margin={str(k): float(np.min(envelopes[k].margins))
                             for k in envelopes},
    )
    _maybe_write(spec, report, trajs)
    return report


# ---------------------------------------------------------------------------
# local window
# ---------------------------------------------------------------------------

def _window_prediction(setup: RunSetup, constants: ChainConstants):
    cfg = setup.config
    ws = setup.workspace
    times = np.linspace(0.0, cfg.t_end, 401)
    f_sq = _forcing_l2_sq(ws)
    u0_sq = float(np.sum(setup.state0.c**2))
    d0 = setup.state0.d0 if setup.state0.d0 is not None else setup.state0.d
    z0_sq = float(np.sum(d0**2))
    env = build_envelope_spec(setup.basis, cfg.theta, cfg.U, cfg.viscosity.nu0,
                              cfg.alpha, u0_sq=u0_sq, z0_sq=z0_sq,
                              times=times, f_sq=f_sq)
    eta0n_sq = z0_sq
    a1_eta0n_sq = float(np.sum((setup.basis.concentration.eigenvalues * d0) ** 2))
    wi = build_window_inputs(env, constants, times, f_sq, setup.malpha,
                             eta0n_sq, a1_eta0n_sq)
    phi0 = 0.5 * float(np.sum(setup.basis.stokes.eigenvalues * setup.state0.c**2))
    wres = bootstrap_window(phi0, times, wi.h, wi.g, constants.c_generic.value)
    return wi, wres, phi0, times


def run_local_window(spec: ExperimentSpec) -> ExperimentReport:
    """Predict the certified horizon, integrate inside it, check the monitors."""
    cfg = spec.config
    if cfg.scheme != "strong":
        raise ConfigError("local_window requires a regularity-variant config")
    setup = prepare_run(cfg)
    constants = estimate_chain_constants(setup.basis, cfg.theta, cfg.U,
                                         cfg.viscosity, seed=spec.seed)
    report = ExperimentReport(kind="local_window", config=config_to_dict(cfg),
                              constants=constants.as_dict())

    wi, wres, phi0, times = _window_prediction(setup, constants)
    t_star = wres.t_star
    report.check("window_positive", t_star > 0.0, f"T* = {t_star:.6e}")

    h0 = float(wi.h[0])
    g_scale = float(np.max(np.abs(wi.g))) if len(wi.g) else 0.0
    h_const = float(np.max(np.abs(wi.h - h0))) <= 1e-12 * max(h0, 1.0)
    closed_form = None
    if phi0 <= 1e-14 and g_scale <= 1e-14 and h_const and h0 > 0:
        closed_form = WINDOW_TARGET / h0
        report.data["closed_form_t1"] = min(closed_form, cfg.t_end)

    gamma_end = window_gamma(phi0, times, wi.g)[-1]
    report.data.update(
        t_star=t_star, hit_horizon=wres.hit_horizon, attained=wres.attained,
        target=wres.target, phi0=phi0, h0=h0,
        epsilon=wi.epsilon, c_eps=wi.c_eps, c_eta0=wi.c_eta0,
        gamma_horizon=gamma_end,
    )

    if t_star <= 0.0:
        _maybe_write(spec, report)
        return report

    dt = min(cfg.dt, t_star / 50.0)
    run_cfg = dataclasses.replace(cfg, t_end=t_star, dt=dt)
    traj = integrate(setup.state0, run_cfg, setup.workspace)
    report.check("completed", traj.completed and not traj.blown_up,
                 f"final t={traj.times[-1]:.6g}")

    monitor = monitor_strong_estimates(traj, setup.workspace, constants=constants,
                                       t_star=t_star)
    report.check("grad_xi_l4_below_one", bool(monitor.grad4_window_passed),
                 f"max |grad xi|_4 = {monitor.grad4_max_in_window:.6e}")
    report.check("h1_monitor", monitor.h1_passed,
                 f"min margin {monitor.h1_min_margin:.3e}")
    report.check("dt_scalar_finite", monitor.dteta_finite,
                 f"max surrogate {monitor.dteta_surrogate_max:.6e}")
    report.data.update(
        monitor_times=list(monitor.times),
        grad_xi_l4=list(monitor.grad_xi_l4),
        h1_bound=list(monitor.h1_bound),
        dteta_surrogate_max=monitor.dteta_surrogate_max,
    )
    _maybe_write(spec, report, {"window": traj})
    return report


# ---------------------------------------------------------------------------
# global small-data run
# ---------------------------------------------------------------------------

def run_global_smalldata(spec: ExperimentSpec) -> ExperimentReport:
    """Gate the data, integrate long, and track the bootstrap quantity."""
    cfg = spec.config
    if cfg.scheme != "strong":
        raise ConfigError("global_smalldata requires a regularity-variant config")
    setup = prepare_run(cfg)
    constants = estimate_chain_constants(setup.basis, cfg.theta, cfg.U,
                                         cfg.viscosity, seed=spec.seed)
    gate = global_smallness_check(
        setup.basis, cfg.theta, cfg.U, cfg.alpha, cfg.viscosity, setup.malpha,
        setup.u0_field, setup.scalar0_field,
        f_sup_sq=_forcing_l2_sq(setup.workspace), constants=constants,
    )
    report = ExperimentReport(kind="global_smalldata", config=config_to_dict(cfg),
                              constants=constants.as_dict())
    report.check("smallness_gate", gate.passed,
                 "all conditions strict" if gate.passed else "gate failed")
    report.data["gate"] = gate.as_dict()

    traj = integrate(setup.state0, cfg, setup.workspace)
    report.check("completed", traj.completed and not traj.blown_up,
                 f"final t={traj.times[-1]:.6g}")

    beta_eig = setup.basis.concentration.eigenvalues
    gm4_sq = setup.malpha.grad_l4() ** 2
    a1_eta_sq = []
    for st in traj.states:
        d_full = st.d + st.d0 if st.d0 is not None else st.d
        a1_eta_sq.append(float(np.sum((beta_eig * d_full) ** 2)))
    pi_series = [v + gm4_sq for v in a1_eta_sq]
    beta = gate.beta

    below = all(p < beta for p in pi_series)
    report.check("pi_below_beta", below,
                 f"max Pi {max(pi_series):.6e} vs beta {beta:.6e}")

    led = traj.diagnostics
    dteta_sq = [0.0]
    for i in range(1, len(traj.states)):
        dt_i = traj.states[i].t - traj.states[i - 1].t
        diff = traj.states[i].d - traj.states[i - 1].d
        dteta_sq.append(float(np.sum(diff**2)) / dt_i**2 if dt_i > 0 else 0.0)
    m1_candidate = max(a1_eta_sq)
    m2_candidate = max(du**2 + dd for du, dd in zip(led.norm_Du, dteta_sq))
    report.check("suprema_finite",
                 math.isfinite(m1_candidate) and math.isfinite(m2_candidate),
                 f"M1~{m1_candidate:.6e} M2~{m2_candidate:.6e}")

    report.data.update(
        beta=beta,
        times=list(led.times),
        pi_series=pi_series,
        a1_eta_sq=a1_eta_sq,
        grad_malpha_l4_sq=gm4_sq,
        m1_candidate=m1_candidate,
        m2_candidate=m2_candidate,
        sup_norm_Du=max(led.norm_Du),
        sup_dteta_sq=max(dteta_sq),
    )
    _maybe_write(spec, report, {"global": traj})
    return report


# ---------------------------------------------------------------------------
# stability of stationary states
# ---------------------------------------------------------------------------

def _stability_single(cfg: SimConfig, amplitude: float, seed: int):
    """One perturbed run against the stationary state at the config's size."""
    dom = make_domain(cfg.domain)
    basis = build_bases(dom, cfg.n, cfg.theta, cfg.U)
    fx, fz = cfg.forcing.evaluate(dom)
    stat = solve_stationary(basis, cfg.theta, cfg.U, cfg.alpha, cfg.viscosity,
                            f=(fx, fz))
    rng = np.random.default_rng(seed)
    damp = 0.75 ** np.arange(cfg.n)
    dc = rng.standard_normal(cfg.n) * damp
    dd = rng.standard_normal(cfg.n) * damp
    norm = math.sqrt(float(np.sum(dc**2) + np.sum(dd**2)))
    scale = amplitude / norm if norm > 0 else 0.0
    c0 = stat.velocity_coeffs + scale * dc
    d0 = stat.concentration_coeffs + scale * dd
    state0 = GalerkinState(0.0, c0, d0, "weak", basis)
    ws = make_workspace(basis, cfg, malpha=None, state0=state0)
    traj = integrate(state0, cfg, ws)
    pert_sq = []
    for st in traj.states:
        dv = st.c - stat.velocity_coeffs
        de = st.d - stat.concentration_coeffs
        pert_sq.append(float(np.sum(dv**2) + np.sum(de**2)))
    return basis, stat, traj, np.array(pert_sq)


def run_stability_decay(spec: ExperimentSpec):
    """Perturb a stationary state and fit the exponential return rate.

    Returns the primary DecayFit together with the report; the sweep also
    reruns at half the perturbation amplitude and at doubled basis size to
    confirm the fitted rate is a property of the problem, not the run.
    """
    cfg = spec.config
    if cfg.scheme != "weak":
        raise ConfigError("stability_decay requires a relaxed-variant config")
    report = ExperimentReport(kind="stability_decay", config=config_to_dict(cfg))
    amp = spec.perturbation_amplitude

    if amp == 0.0:
        basis, stat, traj, pert_sq = _stability_single(cfg, 0.0, spec.seed)
        peak = float(np.max(pert_sq))
        report.check("stationary_fixed_point", peak <= 1e-10,
                     f"max perturbation {peak:.3e}")
        report.data.update(perturbation_sq=list(pert_sq),
                           times=list(traj.times), fit=None)
        _maybe_write(spec, report, {"stability": traj})
        return None, report

    jobs = [
        ("base", cfg, amp),
        ("half_amplitude", cfg, amp / 2.0),
        ("double_n", dataclasses.replace(cfg, n=2 * cfg.n), amp),
    ]

    def job(args):
        _, jcfg, jamp = args
        return _stability_single(jcfg, jamp, spec.seed)

    results = _parallel_map(job, jobs)
    fits = {}
    trajs = {}
    for (tag, _, _), (basis, stat, traj, pert_sq) in zip(jobs, results):
        if not stat.converged:
            raise ConvergenceError(f"stationary solve did not converge for {tag}", stat.trace)
        fits[tag] = fit_exponential_decay(traj.times, pert_sq, spec.fit_skip_fraction)
        trajs[tag] = traj
        report.check(f"completed_{tag}", traj.completed and not traj.blown_up,
                     f"final t={traj.times[-1]:.6g}")

    basis, stat, traj, pert_sq = results[0]
    fit = fits["base"]
    nu0 = cfg.viscosity.nu0
    alpha1 = float(basis.stokes.eigenvalues[0])
    beta1 = float(basis.concentration.eigenvalues[0])
    rate_ref = min(nu0 * alpha1, beta1)

    report.check("rate_positive", fit.rate > 0.0, f"rate {fit.rate:.6f}")
    report.check("fit_quality", fit.r_squared >= 0.99, f"R^2 {fit.r_squared:.6f}")
    ratio = fit.rate / rate_ref if rate_ref > 0 else math.inf
    report.check("rate_matches_linear_reference",
                 0.25 <= ratio <= 4.0,
                 f"fit {fit.rate:.4f} vs reference {rate_ref:.4f} (ratio {ratio:.3f})")
    for tag in ("half_amplitude", "double_n"):
        rel = abs(fits[tag].rate - fit.rate) / fit.rate
        report.check(f"rate_stable_{tag}", rel <= 0.10,
                     f"{fits[tag].rate:.6f} vs {fit.rate:.6f} (rel {rel:.4f})")

    t = traj.times
    t_cut = t[0] + spec.fit_skip_fraction * (t[-1] - t[0])
    tail = pert_sq[t >= t_cut]
    nonincreasing = bool(np.all(np.diff(tail) <= 1e-10 * max(tail[0], 1e-300)))
    report.check("nonincreasing_after_transient", nonincreasing,
                 f"tail from t={t_cut:.3f}")

    log_pert = np.log(np.maximum(pert_sq, 1e-300))
    fit_line = fit.intercept - fit.rate * t
    report.data.update(
        times=list(t),
        perturbation_sq=list(pert_sq),
        log_perturbation_sq=list(log_pert),
        fit_line=list(fit_line),
        fit=fit.as_dict(),
        fits={tag: f.as_dict() for tag, f in fits.items()},
        rate_reference=rate_ref,
        stokes_alpha1=alpha1,
        concentration_beta1=beta1,
        stationary_residuals={"velocity": stat.residual_velocity,
                              "concentration": stat.residual_concentration},
    )
    _maybe_write(spec, report, trajs)
    return fit, report


# ---------------------------------------------------------------------------
# twin trajectories: determinism and continuous dependence
# ---------------------------------------------------------------------------

def _twin_norm_series(base: Trajectory, pert: Trajectory, ws, K: float, nu0: float):
    """Weighted difference energy W(t) and the growth factor N(t) per save."""
    beta_eig = ws.basis.concentration.eigenvalues
    beta1 = float(beta_eig[0])
    weight = 2.0 * K / nu0
    w_series = []
    for st_b, st_p in zip(base.states, pert.states):
        dv = st_p.c - st_b.c
        db = (st_p.d + st_p.d0) - (st_b.d + st_b.d0)
        w_series.append(weight * float(np.sum(dv**2)) + float(np.sum(beta_eig * db**2)))
    return np.array(w_series), weight, beta1


def _twin_growth_factor(base: Trajectory, pert: Trajectory, ws, cc: ChainConstants,
                        K: float) -> np.ndarray:
    nu0 = ws.nu0
    v4i = cc.v4_interp.value
    l4x = cc.l4_over_dirichlet.value
    g2x = cc.grad_over_dirichlet.value
    tr4s = cc.trace_l4_scalar.value
    tr4v = cc.trace_l4_velocity.value
    nu1p = cc.nu1_prime.value
    beta1 = float(ws.basis.concentration.eigenvalues[0])
    weight = 2.0 * K / nu0
    out = []
    for st_b, st_p in zip(base.states, pert.states):
        vn = _velocity_grid_norms(st_b, ws)
        s4 = math.sqrt(_grad_m_l4_sq(st_b, ws)) + math.sqrt(_grad_m_l4_sq(st_p, ws))
        a_v = 1.0 + (27.0 / (16.0 * nu0**3)) * v4i**4 * vn["grad_sq"] ** 2
        a_x = 1.0 / beta1 + (4.0 * nu1p**2 / nu0) * (
            l4x**2 * vn["d4_sq"] + tr4s**2 * tr4v**2 * vn["trace_d_sq"]
        )
        b_v = 27.0 * v4i**4 * s4**8
        b_x = 4.0 * g2x**2 * (ws.U**2 + vn["inf"] ** 2)
        out.append(max(a_v + b_v / weight, weight * a_x + b_x))
    return np.array(out)


def run_uniqueness_twin(spec: ExperimentSpec) -> ExperimentReport:
    """Rerun determinism plus continuous dependence on the initial layer."""
    cfg = spec.config
    if cfg.scheme != "strong":
        raise ConfigError("uniqueness_twin requires a regularity-variant config")
    setup = prepare_run(cfg)
    constants = estimate_chain_constants(setup.basis, cfg.theta, cfg.U,
                                         cfg.viscosity, seed=spec.seed)
    report = ExperimentReport(kind="uniqueness_twin", config=config_to_dict(cfg),
                              constants=constants.as_dict())

    _, wres, _, _ = _window_prediction(setup, constants)
    if wres.t_star <= 0.0:
        raise RuntimeError("certified window is empty for this configuration")
    if cfg.t_end > wres.t_star * (1.0 + 1e-12):
        raise RuntimeError(
            f"horizon {cfg.t_end} exceeds the certified window {wres.t_star:.6e}")
    report.data["t_star"] = wres.t_star

    base = integrate(setup.state0, cfg, setup.workspace)
    rerun_setup = prepare_run(cfg)
    rerun = integrate(rerun_setup.state0, cfg, rerun_setup.workspace)

    with tempfile.TemporaryDirectory() as scratch:
        outdir = spec.outdir or scratch
        os.makedirs(outdir, exist_ok=True)
        path_a = os.path.join(outdir, "diagnostics_base.csv")
        path_b = os.path.join(outdir, "diagnostics_rerun.csv")
        write_diagnostics_csv(base.diagnostics, path_a)
        write_diagnostics_csv(rerun.diagnostics, path_b)
        with open(path_a, "rb") as fh:
            bytes_a = fh.read()
        with open(path_b, "rb") as fh:
            bytes_b = fh.read()
    identical = bytes_a == bytes_b
    report.check("rerun_byte_identical", identical,
                 f"{len(bytes_a)} bytes compared")

    delta = spec.delta
    if delta == 0.0:
        max_dev = 0.0
        for st_b, st_p in zip(base.states, rerun.states):
            max_dev = max(max_dev,
                          float(np.max(np.abs(st_p.c - st_b.c))),
                          float(np.max(np.abs(st_p.d - st_b.d))))
        report.check("zero_delta_no_difference", max_dev == 0.0,
                     f"max coefficient deviation {max_dev:.3e}")
        report.data["delta"] = 0.0
        _maybe_write(spec, report, {"base": base})
        return report

    u4d = constants.u4_over_d.value
    grad_m_sup_sq = max(_grad_m_l4_sq(st, setup.workspace) for st in base.states)
    K = 1.0 + 4.0 * u4d**2 * grad_m_sup_sq
    report.data["K"] = K

    def perturbed_run(scale: float):
        rng = np.random.default_rng(spec.seed + 1)
        damp = 0.75 ** np.arange(cfg.n)
        hat_c = rng.standard_normal(cfg.n) * damp
        hat_d = rng.standard_normal(cfg.n) * damp
        beta_eig = setup.basis.concentration.eigenvalues
        w0 = (2.0 * K / setup.workspace.nu0) * float(np.sum(hat_c**2)) + float(
            np.sum(beta_eig * hat_d**2))
        s = scale / math.sqrt(w0)
        st0 = setup.state0
        state0 = GalerkinState(0.0, st0.c + s * hat_c, st0.d.copy(), "strong",
                               setup.basis, d0=st0.d0 + s * hat_d)
        ws = make_workspace(setup.basis, cfg, malpha=setup.malpha, state0=state0)
        return integrate(state0, cfg, ws), ws

    pert, _ = perturbed_run(delta)
    report.check("perturbed_completed", pert.completed and not pert.blown_up,
                 f"final t={pert.times[-1]:.6g}")

    w_series, weight, beta1 = _twin_norm_series(base, pert, setup.workspace, K,
                                                setup.workspace.nu0)
    n_series = _twin_growth_factor(base, pert, setup.workspace, constants, K)
    times = base.times
    n_int = cumulative_trapezoid(times, n_series)
    # Compared in log space: exp(integral of N) can overflow for honestly
    # large estimated constants, and an inf bound would pass vacuously.
    log_w = np.log(np.maximum(w_series, 1e-300))
    log_bound = 2.0 * math.log(delta) + n_int
    holds = bool(np.all(log_w <= log_bound + 1e-9))
    ratio = float(np.exp(np.max(log_w - log_bound)))
    report.check("gronwall_envelope", holds, f"max W/bound {ratio:.6f}")
    bound = delta**2 * np.exp(np.minimum(n_int, 700.0))
    w0_err = abs(w_series[0] - delta**2)
    report.check("initial_scale", w0_err <= 1e-9 * delta**2,
                 f"|W(0)-delta^2| = {w0_err:.3e}")

    report.data.update(
        delta=delta,
        times=list(times),
        w_series=list(w_series),
        growth_factor=list(n_series),
        bound_series=list(bound),
        weight_2k_over_nu0=weight,
        concentration_beta1=beta1,
    )

    if spec.check_linearity:
        pert2, _ = perturbed_run(2.0 * delta)
        def max_v(traj):
            return max(
                math.sqrt(float(np.sum((sp.c - sb.c) ** 2)))
                for sb, sp in zip(base.states, traj.states)
            )
        r = max_v(pert2) / max_v(pert)
        report.check("doubling_delta_doubles_response", abs(r - 2.0) <= 0.2,
                     f"response ratio {r:.4f}")
        report.data["linearity_ratio"] = r

    _maybe_write(spec, report, {"base": base, "perturbed": pert})
    return report


# ---------------------------------------------------------------------------
# experiment dispatch and plot emission
# ---------------------------------------------------------------------------

def run_experiment(spec: ExperimentSpec):
    """Dispatch one experiment; stability also returns its fit."""
    if spec.kind == "weak_convergence":
        return run_weak_convergence(spec)
    if spec.kind == "local_window":
        return run_local_window(spec)
    if spec.kind == "global_smalldata":
        return run_global_smalldata(spec)
    if spec.kind == "stability_decay":
        _, report = run_stability_decay(spec)
        return report
    return run_uniqueness_twin(spec)


def _write_panel(path: str, header: list, columns: list) -> str:
    rows = len(columns[0])
    for col in columns:
        if len(col) != rows:
            raise ValueError("panel columns differ in length")
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(rows):
            fh.write(",".join("%.17g" % float(col[i]) for col in columns) + "\n")
    return path


def emit_plot_data(run_dir: str) -> list:
    """Write tidy per-panel CSVs for a completed experiment directory."""
    report_path = os.path.join(run_dir, "report.json")
    if not os.path.exists(report_path):
        raise FileNotFoundError(f"no report.json under {run_dir}")
    with open(report_path) as fh:
        report = json.load(fh)
    data = report.get("data", {})
    kind = report.get("kind", "")
    written = []

    diag_files = sorted(
        f for f in os.listdir(run_dir)
        if f.startswith("diagnostics_") and f.endswith(".csv")
    )
    for name in diag_files:
        tag = name[len("diagnostics_"):-len(".csv")]
        src = os.path.join(run_dir, name)
        with open(src) as fh:
            header = fh.readline().strip().split(",")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        keep = ["t", "norm_u", "norm_Du", "norm_scalar"]
        idx = [header.index(k) for k in keep]
        cols = [[float(r[i]) for r in rows] for i in idx]
        written.append(_write_panel(os.path.join(run_dir, f"norms_vs_t_{tag}.csv"),
                                    keep, cols))

    if "envelope_times" in data:
        written.append(_write_panel(
            os.path.join(run_dir, "envelope_vs_t.csv"),
            ["t", "monitored", "bound"],
            [data["envelope_times"], data["envelope_monitored"], data["envelope_bound"]],
        ))
    if kind == "global_smalldata" and "pi_series" in data:
        beta = [data["beta"]] * len(data["times"])
        written.append(_write_panel(
            os.path.join(run_dir, "pi_vs_t.csv"),
            ["t", "pi", "beta"],
            [data["times"], data["pi_series"], beta],
        ))
    if kind == "stability_decay" and "log_perturbation_sq" in data:
        written.append(_write_panel(
            os.path.join(run_dir, "decay_loglinear.csv"),
            ["t", "log_perturbation_sq", "fit_line"],
            [data["times"], data["log_perturbation_sq"], data["fit_line"]],
        ))
    if kind == "uniqueness_twin" and "w_series" in data:
        written.append(_write_panel(
            os.path.join(run_dir, "twin_envelope_vs_t.csv"),
            ["t", "weighted_difference_sq", "gronwall_bound"],
            [data["times"], data["w_series"], data["bound_series"]],
        ))
    return written
