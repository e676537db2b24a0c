"""Inequality toolkit for the convection system.

Implements the comparison machinery the solver's monitors rest on: an
integral Gronwall comparator, the short-time bootstrap window, the weak
energy envelope G(t), the cubic gate polynomial with its root analysis,
the small-data entry conditions, and trajectory monitors for strong-mode
runs.  Every numerical constant that enters a report carries a provenance
label ("formula" or "numerical-estimate") together with the recipe that
produced it; a report containing an unlabeled constant is invalid by
construction.

Time integrals in monitors use the trapezoid rule on save times.  The
window functional is integrated exactly for piecewise-linear inputs
(three-point Gauss-Legendre per subinterval, exact through quartics).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from bioconvect.domain import ScalarField, VectorField, lp_norm, sym_gradient
from bioconvect.operators import (
    ConstantEstimate,
    SpectralBasis,
    estimate_embedding_constants,
    estimate_poincare,
    estimate_korn,
    estimate_trace_constants,
)

WINDOW_TARGET = 0.5 * math.log(1.5)

_GL3_NODES = np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GL3_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 9.0


# ---------------------------------------------------------------------------
# series helpers
# ---------------------------------------------------------------------------

def _as_series(values, n: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"{name} must be a scalar or a length-{n} series, got {arr.shape}")
    return arr


def _check_times(times) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise ValueError("need at least two time samples")
    if np.any(np.diff(t) <= 0):
        raise ValueError("time grid must be strictly increasing")
    return t


def cumulative_trapezoid(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid integral with a leading zero."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    out = np.zeros_like(t)
    out[1:] = np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(t))
    return out


# ---------------------------------------------------------------------------
# Gronwall comparator
# ---------------------------------------------------------------------------

@dataclass
class GronwallReport:
    """Outcome of the integral-inequality comparison on a common grid."""

    times: np.ndarray
    hypothesis_lhs: np.ndarray
    hypothesis_rhs: np.ndarray
    conclusion_rhs: np.ndarray
    hypothesis_holds: bool
    conclusion_holds: bool
    max_hypothesis_violation: float
    max_conclusion_violation: float

    @property
    def passed(self) -> bool:
        return self.conclusion_holds

    def as_dict(self) -> dict:
        return {
            "hypothesis_holds": self.hypothesis_holds,
            "conclusion_holds": self.conclusion_holds,
            "max_hypothesis_violation": self.max_hypothesis_violation,
            "max_conclusion_violation": self.max_conclusion_violation,
            "n_samples": int(self.times.size),
        }


def gronwall_envelope(times, a, b, zeta, zeta_star, rtol: float = 1e-8) -> GronwallReport:
    """Check the integral comparison on sampled data.

    With a(t) nonnegative nondecreasing and b(t) >= 0, whenever

        zeta(t) + int_0^t zeta_star <= a(t) + int_0^t b*zeta

    holds, the envelope zeta(t) + int_0^t zeta_star <= a(t)*exp(int_0^t b)
    follows.  Both sides are evaluated with trapezoid quadrature on the
    common grid; violations are reported as margins relative to the local
    scale, with ``rtol`` absorbing pure quadrature error.
    """
    t = _check_times(times)
    n = t.size
    a_s = _as_series(a, n, "a")
    b_s = _as_series(b, n, "b")
    z_s = _as_series(zeta, n, "zeta")
    zs_s = _as_series(zeta_star, n, "zeta_star")
    if np.any(np.diff(a_s) < -rtol * max(1.0, float(np.max(np.abs(a_s))))):
        raise ValueError("a(t) must be nondecreasing")
    if np.any(b_s < -rtol):
        raise ValueError("b(t) must be nonnegative")

    lhs = z_s + cumulative_trapezoid(t, zs_s)
    hyp_rhs = a_s + cumulative_trapezoid(t, b_s * z_s)
    conc_rhs = a_s * np.exp(cumulative_trapezoid(t, b_s))

    scale = max(1e-300, float(np.max(np.abs(lhs))), float(np.max(np.abs(hyp_rhs))))
    hyp_viol = float(np.max(lhs - hyp_rhs)) / scale
    conc_viol = float(np.max(lhs - conc_rhs)) / scale
    return GronwallReport(
        times=t,
        hypothesis_lhs=lhs,
        hypothesis_rhs=hyp_rhs,
        conclusion_rhs=conc_rhs,
        hypothesis_holds=hyp_viol <= rtol,
        conclusion_holds=conc_viol <= rtol,
        max_hypothesis_violation=hyp_viol,
        max_conclusion_violation=conc_viol,
    )


# ---------------------------------------------------------------------------
# bootstrap window
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindowResult:
    """Largest admissible short-time window and the attained functional value."""

    t_star: float
    attained: float
    target: float
    hit_horizon: bool

    def as_dict(self) -> dict:
        return {
            "t_star": self.t_star,
            "attained": self.attained,
            "target": self.target,
            "hit_horizon": self.hit_horizon,
        }


class _WindowFunctional:
    """F(t) = C * int_0^t (2 phi0 + 2 int_0^s g)^2 ds + int_0^t h.

    h and g are taken piecewise linear between samples, which makes the
    integrand piecewise quartic; three-point Gauss-Legendre per subinterval
    integrates it exactly, so closed-form cases invert to round-off.
    """

    def __init__(self, times: np.ndarray, h: np.ndarray, g: np.ndarray,
                 phi0: float, C: float):
        self.t = times
        self.h = h
        self.g = g
        self.phi0 = phi0
        self.C = C
        self.g_cum = cumulative_trapezoid(times, g)
        self.node_values = np.zeros_like(times)
        for k in range(times.size - 1):
            self.node_values[k + 1] = self.node_values[k] + self._piece(k, times[k + 1])

    def _piece(self, k: int, t: float) -> float:
        """Integral of the full integrand over [t_k, t], t inside piece k."""
        t0, t1 = self.t[k], self.t[k + 1]
        dt = t1 - t0
        if t <= t0 or dt <= 0.0:
            return 0.0
        slope_g = (self.g[k + 1] - self.g[k]) / dt
        slope_h = (self.h[k + 1] - self.h[k]) / dt
        half = 0.5 * (t - t0)
        s = 0.5 * (t + t0) + half * _GL3_NODES
        ds = s - t0
        g_cum_s = self.g_cum[k] + self.g[k] * ds + 0.5 * slope_g * ds**2
        h_s = self.h[k] + slope_h * ds
        integrand = self.C * (2.0 * self.phi0 + 2.0 * g_cum_s) ** 2 + h_s
        return float(np.sum(_GL3_WEIGHTS * integrand) * half)

    def __call__(self, t: float) -> float:
        k = int(np.searchsorted(self.t, t, side="right") - 1)
        k = min(max(k, 0), self.t.size - 2)
        return float(self.node_values[k]) + self._piece(k, t)


def bootstrap_window(phi0: float, times, h, g, C: float) -> WindowResult:
    """Largest T1 in the horizon with F(T1) <= (1/2) ln(3/2).

    The left side F is monotone nondecreasing (nonnegative integrand), so
    the inversion is a bracketing bisection on the subinterval containing
    the crossing; the returned T1 either attains the target within
    round-off or equals the horizon end.
    """
    if phi0 < 0:
        raise ValueError("phi0 must be nonnegative")
    if C <= 0:
        raise ValueError("C must be positive")
    t = _check_times(times)
    if abs(t[0]) > 1e-12 * max(1.0, abs(t[-1])):
        raise ValueError("window time grid must start at t = 0")
    n = t.size
    h_s = np.clip(_as_series(h, n, "h"), 0.0, None)
    g_s = np.clip(_as_series(g, n, "g"), 0.0, None)

    F = _WindowFunctional(t, h_s, g_s, phi0, C)
    target = WINDOW_TARGET
    if F.node_values[-1] <= target:
        return WindowResult(float(t[-1]), float(F.node_values[-1]), target, True)

    j = int(np.searchsorted(F.node_values, target, side="right"))
    j = min(max(j, 1), n - 1)
    lo, hi = float(t[j - 1]), float(t[j])
    tol = 1e-14 * max(1.0, float(t[-1]))
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if F(mid) <= target:
            lo = mid
        else:
            hi = mid
    return WindowResult(lo, F(lo), target, False)


def window_gamma(phi0: float, times, g) -> np.ndarray:
    """The bootstrap conclusion bound gamma(t) = 2*(phi0 + int_0^t g)."""
    t = _check_times(times)
    g_s = np.clip(_as_series(g, t.size, "g"), 0.0, None)
    return 2.0 * (phi0 + cumulative_trapezoid(t, g_s))


# ---------------------------------------------------------------------------
# weak energy envelope
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnvelopeSpec:
    """Constants and data series defining the weak-energy bound G(t).

    The monitored combination is

        |u(t)|^2 + C0 |z(t)|^2
        + int_0^t ( nu0 |D(u)|^2 + 2 C_nu0 |grad z|^2 ) ds  <=  G(t),

    with G(t) = (|u0|^2 + C0 |z0|^2 + int_0^t C2 * data) * exp(C1 t) and
    data(t) = |f|^2 + alpha^2/|Omega| + ||b1||^2 on the free surface.
    """

    theta: float
    nu0: float
    c_nu0: ConstantEstimate
    c_theta_u: ConstantEstimate
    c0: ConstantEstimate
    c1: ConstantEstimate
    c2: ConstantEstimate
    u0_sq: float
    z0_sq: float
    times: np.ndarray
    data: np.ndarray

    def data_on(self, times) -> np.ndarray:
        t = np.asarray(times, dtype=float)
        return np.interp(t, self.times, self.data)

    def G(self, times) -> np.ndarray:
        t = _check_times(times)
        data = self.data_on(t)
        forcing = cumulative_trapezoid(t, self.c2.value * data)
        return (self.u0_sq + self.c0.value * self.z0_sq + forcing) * np.exp(self.c1.value * t)

    def constants_dict(self) -> dict:
        return {
            "c_nu0": self.c_nu0.as_dict(),
            "c_theta_u": self.c_theta_u.as_dict(),
            "c0": self.c0.as_dict(),
            "c1": self.c1.as_dict(),
            "c2": self.c2.as_dict(),
        }


def build_envelope_spec(basis: SpectralBasis, theta: float, U: float, nu0: float,
                        alpha: float, u0_sq: float, z0_sq: float,
                        times, f_sq, b1_sq_gamma=0.0) -> EnvelopeSpec:
    """Assemble the envelope constants for a given basis and physical data.

    All composites are formulas over labeled inputs: the scalar and velocity
    Poincare constants and the trace constant are eigenvalue estimates, the
    velocity Poincare-Korn constant comes from the smallest admissible
    dissipation eigenvalue, and the Young splits reserve (3/2) nu0 of the
    2 nu0 |D(u)|^2 dissipation.
    """
    if basis.stokes is None:
        raise ValueError("envelope constants need the velocity eigenbasis")
    dom = basis.domain
    t = _check_times(times)
    n = t.size
    data = (_as_series(f_sq, n, "f_sq")
            + alpha**2 / dom.area
            + _as_series(b1_sq_gamma, n, "b1_sq_gamma"))

    cp_scalar, _ = estimate_poincare(dom, "mean_zero_scalar")
    korn, _ = estimate_korn(dom)
    trace_v = estimate_trace_constants(dom)["velocity_gamma"]
    alpha1 = float(basis.stokes.eigenvalues[0])
    c_pk = math.sqrt(2.0 / alpha1)
    c_trd = trace_v * math.sqrt(c_pk**2 + korn**2)

    c_nu0_val = max(cp_scalar**2 * c_pk**2 / (2.0 * nu0),
                    3.0 * c_pk**2 / (4.0 * nu0),
                    3.0 * c_trd**2 / nu0)
    c_theta_u_val = U**2 / theta
    c0_val = 4.0 * c_nu0_val / theta
    c1_val = 2.0 * c_theta_u_val
    c2_val = 2.0 * c_nu0_val + 2.0 * c0_val * c_theta_u_val

    c_nu0 = ConstantEstimate(
        c_nu0_val, "formula",
        "max(C_P^2 C_PK^2/(2 nu0), 3 C_PK^2/(4 nu0), 3 C_trD^2/nu0) over estimated "
        "Poincare, Poincare-Korn and surface-trace constants",
    )
    return EnvelopeSpec(
        theta=theta,
        nu0=nu0,
        c_nu0=c_nu0,
        c_theta_u=ConstantEstimate(c_theta_u_val, "formula",
                                   "U^2/theta from the transport Young split"),
        c0=ConstantEstimate(c0_val, "formula", "4*C_nu0/theta scalar-weight coupling"),
        c1=ConstantEstimate(c1_val, "formula", "2*C_thetaU exponential rate"),
        c2=ConstantEstimate(c2_val, "formula", "2*C_nu0 + 2*C0*C_thetaU data weight"),
        u0_sq=float(u0_sq),
        z0_sq=float(z0_sq),
        times=t,
        data=data,
    )


@dataclass
class EnvelopeReport:
    times: np.ndarray
    monitored: np.ndarray
    bound: np.ndarray
    margins: np.ndarray
    passed: bool
    max_violation: float

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "max_violation": self.max_violation,
            "min_margin": float(np.min(self.margins)),
            "n_samples": int(self.times.size),
        }


def energy_envelope(spec: EnvelopeSpec, times, u_sq, z_sq, Du_sq, grad_z_sq,
                    rtol: float = 1e-8, atol: float = 1e-9) -> EnvelopeReport:
    """Compare the monitored energy combination against G(t) at save times."""
    t = _check_times(times)
    n = t.size
    u2 = _as_series(u_sq, n, "u_sq")
    z2 = _as_series(z_sq, n, "z_sq")
    du2 = _as_series(Du_sq, n, "Du_sq")
    gz2 = _as_series(grad_z_sq, n, "grad_z_sq")

    dissipation = spec.nu0 * du2 + 2.0 * spec.c_nu0.value * gz2
    monitored = u2 + spec.c0.value * z2 + cumulative_trapezoid(t, dissipation)
    bound = spec.G(t)
    margins = bound - monitored
    tol = rtol * np.maximum(np.abs(bound), 1.0) + atol
    violation = float(np.max(monitored - bound))
    return EnvelopeReport(
        times=t,
        monitored=monitored,
        bound=bound,
        margins=margins,
        passed=bool(np.all(margins >= -tol)),
        max_violation=violation,
    )


# ---------------------------------------------------------------------------
# gate cubic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CubicRoots:
    """Roots of p(z) = 2*d1*z^3 - (d3/2)*z + d5 with the discriminant verdict."""

    d1: float
    d3: float
    d5: float
    three_real: bool
    roots: tuple
    discriminant_margin: float
    residuals: tuple

    @property
    def z2(self) -> float | None:
        """Smaller positive root; only defined when three simple roots exist."""
        return self.roots[1] if self.three_real else None

    def as_dict(self) -> dict:
        return {
            "d1": self.d1, "d3": self.d3, "d5": self.d5,
            "three_real": self.three_real,
            "roots": list(self.roots),
            "z2": self.z2,
            "discriminant_margin": self.discriminant_margin,
            "residuals": list(self.residuals),
        }


def _polish_root(z: float, d1: float, d3: float, d5: float) -> float:
    for _ in range(3):
        p = 2.0 * d1 * z**3 - 0.5 * d3 * z + d5
        dp = 6.0 * d1 * z**2 - 0.5 * d3
        if dp == 0.0:
            break
        z -= p / dp
    return z


def gate_cubic_roots(d1: float, d3: float, d5: float) -> CubicRoots:
    """Solve the gate cubic, flagging whether three simple real roots exist.

    Three simple real roots exist exactly when d5^2 < d3^3/(108*d1); at the
    zero offset the roots are +-(1/2)sqrt(d3/d1) and 0 and are returned by
    the exact branch.  Otherwise the trigonometric form seeds a short Newton
    polish so each residual stays at round-off relative to the coefficients.
    """
    if d1 <= 0 or d3 <= 0:
        raise ValueError("d1 and d3 must be positive")
    if d5 < 0:
        raise ValueError("d5 must be nonnegative")

    disc_rhs = d3**3 / (108.0 * d1)
    margin = disc_rhs - d5**2

    def residual(z: float) -> float:
        return 2.0 * d1 * z**3 - 0.5 * d3 * z + d5

    if d5 == 0.0:
        r = 0.5 * math.sqrt(d3 / d1)
        roots = (-r, 0.0, r)
        return CubicRoots(d1, d3, d5, True, roots, margin,
                          tuple(residual(z) for z in roots))

    # normalized z^3 + p z + q
    p = -d3 / (4.0 * d1)
    q = d5 / (2.0 * d1)
    if margin > 0.0:
        m = 2.0 * math.sqrt(-p / 3.0)
        arg = (3.0 * q) / (2.0 * p) * math.sqrt(-3.0 / p)
        phi = math.acos(min(1.0, max(-1.0, arg)))
        raw = [m * math.cos((phi - 2.0 * math.pi * k) / 3.0) for k in range(3)]
        roots = tuple(sorted(_polish_root(z, d1, d3, d5) for z in raw))
        return CubicRoots(d1, d3, d5, True, roots, margin,
                          tuple(residual(z) for z in roots))

    # single real root (or a degenerate double root at the boundary, which
    # the strict semantics also treat as "no usable z2")
    delta = q**2 / 4.0 + p**3 / 27.0
    s = math.sqrt(max(delta, 0.0))
    z = np.cbrt(-q / 2.0 + s) + np.cbrt(-q / 2.0 - s)
    z = _polish_root(float(z), d1, d3, d5)
    return CubicRoots(d1, d3, d5, False, (z,), margin, (residual(z),))


# ---------------------------------------------------------------------------
# chain constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChainConstants:
    """Labeled constants for the strong-mode differential inequalities.

    Sampled quotients are maxima over random band-limited basis
    combinations; composites are arithmetic over labeled inputs with the
    Young split documented in each recipe.
    """

    poincare_scalar: ConstantEstimate
    poincare_velocity: ConstantEstimate
    korn: ConstantEstimate
    c_pk: ConstantEstimate
    c_a: ConstantEstimate
    c_d4: ConstantEstimate
    grad2_over_a1: ConstantEstimate
    grad4_over_a1: ConstantEstimate
    l4_over_grad: ConstantEstimate
    u4_over_d: ConstantEstimate
    interp_grad4: ConstantEstimate
    nu1_prime: ConstantEstimate
    k_tilde: ConstantEstimate
    c_pt_tilde: ConstantEstimate
    c_vel_tilde: ConstantEstimate
    k_hat: ConstantEstimate
    c_theta: ConstantEstimate
    c_hat_1: ConstantEstimate
    c_hat_2: ConstantEstimate
    c_hat_3: ConstantEstimate
    c_hat_4: ConstantEstimate
    c_hat_5: ConstantEstimate
    c_hat_6: ConstantEstimate
    d_1: ConstantEstimate
    d_2: ConstantEstimate
    d_3: ConstantEstimate
    d_4: ConstantEstimate
    c_eta0_factor: ConstantEstimate
    c_generic: ConstantEstimate
    c_bar: ConstantEstimate
    v4_interp: ConstantEstimate
    trace_l4_scalar: ConstantEstimate
    trace_l4_velocity: ConstantEstimate
    l4_over_dirichlet: ConstantEstimate
    grad_over_dirichlet: ConstantEstimate

    def validate_labels(self) -> None:
        for name, est in self.__dict__.items():
            if not isinstance(est, ConstantEstimate):
                raise ValueError(f"constant {name} is unlabeled")
            if est.provenance not in ("formula", "numerical-estimate"):
                raise ValueError(f"constant {name} has invalid provenance {est.provenance!r}")
            if not est.recipe:
                raise ValueError(f"constant {name} has no recipe")

    def as_dict(self) -> dict:
        return {name: est.as_dict() for name, est in self.__dict__.items()}


def _sample_strong_quotients(basis: SpectralBasis, samples: int, seed: int) -> dict:
    """Sampled quotients feeding the strong chain and the twin envelope.

      c_a:    |(u.grad u, Au)| / (|D(u)|^{3/2} |Au|^{3/2})
      c_d4:   |D(u)|_4 / (|D(u)|^{1/2} |Au|^{1/2})
      v4i:    |u|_4^2 / (|u|^{1/2} |D(u)|^{3/2})
      tr4v:   |u|_{L4(top)} / |D(u)|
      tr4s:   |s|_{L4(top)} / sqrt(d' G d)
      l4x:    |s|_4 / sqrt(d' G d)
      g2x:    |grad s| / sqrt(d' G d)

    The scalar quotients divide by the root of the Dirichlet form of the
    transport-diffusion operator because its boundary part is sign
    indefinite; sampling the ratio absorbs that gap honestly.
    """
    dom = basis.domain
    sto = basis.stokes
    con = basis.concentration
    if sto is None:
        raise ValueError("strong-chain quotients need the velocity eigenbasis")
    rng = np.random.default_rng(seed)
    n = basis.n
    damp = 0.75 ** np.arange(n)
    W = dom.quadrature.area
    c_a = 0.0
    c_d4 = 0.0
    v4i = 0.0
    tr4v = 0.0
    tr4s = 0.0
    l4x = 0.0
    g2x = 0.0
    for _ in range(samples):
        c = rng.standard_normal(n) * damp
        u = np.einsum("j,jcxz->cxz", c, sto.fields)
        au = np.einsum("j,jcxz->cxz", sto.eigenvalues * c, sto.fields)
        d_norm = math.sqrt(0.5 * float(np.sum(sto.eigenvalues * c**2)))
        a_norm = math.sqrt(float(np.sum(sto.eigenvalues**2 * c**2)))
        l2_norm = math.sqrt(float(np.sum(c**2)))
        if d_norm < 1e-14 or a_norm < 1e-14 or l2_norm < 1e-14:
            continue
        conv_x = u[0] * dom.ddx(u[0]) + u[1] * dom.ddz(u[0])
        conv_z = u[0] * dom.ddx(u[1]) + u[1] * dom.ddz(u[1])
        tri = abs(float(np.sum((conv_x * au[0] + conv_z * au[1]) * W)))
        c_a = max(c_a, tri / (d_norm**1.5 * a_norm**1.5))
        d_tensor = np.einsum("j,jcxz->cxz", c, sto.sym_grads)
        frob_sq = d_tensor[0] ** 2 + 2.0 * d_tensor[1] ** 2 + d_tensor[2] ** 2
        d4 = float(np.sum(frob_sq**2 * W)) ** 0.25
        c_d4 = max(c_d4, d4 / (math.sqrt(d_norm) * math.sqrt(a_norm)))
        mag_sq = u[0] ** 2 + u[1] ** 2
        u4_sq = math.sqrt(float(np.sum(mag_sq**2 * W)))
        v4i = max(v4i, u4_sq / (math.sqrt(l2_norm) * d_norm**1.5))
        top_sq = u[0, :, -1] ** 2 + u[1, :, -1] ** 2
        u_tr4 = float(np.sum(top_sq**2 * dom.wx)) ** 0.25
        tr4v = max(tr4v, u_tr4 / d_norm)
        if con is not None:
            dcoef = rng.standard_normal(n) * damp
            s_grid = np.einsum("l,lxz->xz", dcoef, con.fields)
            dirichlet = math.sqrt(max(float(dcoef @ con.stiffness @ dcoef), 0.0))
            if dirichlet > 1e-14:
                s_tr4 = float(np.sum(s_grid[:, -1] ** 4 * dom.wx)) ** 0.25
                tr4s = max(tr4s, s_tr4 / dirichlet)
                s_l4 = float(np.sum(s_grid**4 * W)) ** 0.25
                l4x = max(l4x, s_l4 / dirichlet)
                gx, gz = dom.ddx(s_grid), dom.ddz(s_grid)
                s_g2 = math.sqrt(float(np.sum((gx**2 + gz**2) * W)))
                g2x = max(g2x, s_g2 / dirichlet)
    return {"c_a": c_a, "c_d4": c_d4, "v4_interp": v4i,
            "trace_l4_velocity": tr4v, "trace_l4_scalar": tr4s,
            "l4_over_dirichlet": l4x, "grad_over_dirichlet": g2x}


def estimate_chain_constants(basis: SpectralBasis, theta: float, U: float,
                             viscosity, samples: int = 48,
                             seed: int = 0) -> ChainConstants:
    """Estimate and assemble the full strong-chain constant set."""
    dom = basis.domain
    nu0 = viscosity.nu0
    nu1p = viscosity.nu1_prime

    cp_s, _ = estimate_poincare(dom, "mean_zero_scalar")
    cp_v, _ = estimate_poincare(dom, "velocity_on_S")
    korn, _ = estimate_korn(dom)
    alpha1 = float(basis.stokes.eigenvalues[0])
    c_pk = math.sqrt(2.0 / alpha1)
    emb = estimate_embedding_constants(basis, samples=max(samples, 32), seed=seed)
    quot = _sample_strong_quotients(basis, samples, seed + 1)

    sampled = "maximum of the defining quotient over seeded random basis combinations"
    g4 = emb["grad4_over_a1"]
    g2 = emb["grad2_over_a1"]
    u4 = emb["u4_over_d"]
    l4g = emb["l4_over_grad"]
    c_a = quot["c_a"]
    c_d4 = quot["c_d4"]

    k_tilde = 1.0 / cp_s**2
    c_pt_tilde = 1.0 / cp_s**2
    c_vel_tilde = 2.0 / nu0
    k_hat = 2.0 * c_vel_tilde / (theta * k_tilde)
    c_theta = 2.0 * l4g**2 / theta
    boost = 1.0 + 2.0 * c_theta

    c1 = boost * 54.0 * c_a**4 / nu0**3
    c2 = boost * 2.0 * max(1.0, g4**2) ** 4 * (1.0 + 54.0 * (nu1p * c_d4) ** 4 / nu0**3)
    c3 = boost * 2.0 / nu0
    c4 = 2.0 * nu1p * c_d4 * (g4 + 1.0) * math.sqrt(c_pk / 2.0)
    c5 = boost * 2.0 / nu0
    c6 = boost * (2.0 / nu0 + U**2 / theta + 1.0)
    d1 = c1
    d2 = c2 + c3 / k_hat
    d3 = min(nu0 / c_pk**2, theta * k_tilde / 2.0, theta * c_pt_tilde / 2.0)
    d4 = (2.0 * c_theta / theta) * max(1.0, u4**2 * g4**2, u4**2, g2**2)
    c_generic = max(1.0, 2.0 / nu0, c_theta)

    def f(value, recipe):
        return ConstantEstimate(float(value), "formula", recipe)

    def s(value, detail):
        return ConstantEstimate(float(value), "numerical-estimate", f"{sampled}: {detail}")

    return ChainConstants(
        poincare_scalar=s(cp_s, "mean-zero scalar Poincare eigenvalue"),
        poincare_velocity=s(cp_v, "Dirichlet-bottom velocity Poincare eigenvalue"),
        korn=s(korn, "gradient-to-symmetric-gradient ratio eigenvalue"),
        c_pk=f(c_pk, "sqrt(2/alpha_1) from the smallest velocity eigenvalue"),
        c_a=s(c_a, "|(u.grad u, Au)| / (|D(u)|^{3/2} |Au|^{3/2})"),
        c_d4=s(c_d4, "|D(u)|_4 / (|D(u)|^{1/2} |Au|^{1/2})"),
        grad2_over_a1=s(g2, "|grad s| / |A1 s|"),
        grad4_over_a1=s(g4, "|grad s|_4 / |A1 s|"),
        l4_over_grad=s(l4g, "|s|_4 / |grad s| on mean-zero scalars"),
        u4_over_d=s(u4, "|u|_4 / |D(u)|"),
        interp_grad4=s(emb["interp_grad4"], "|grad s|_4 / (|grad s|^{1/4} |A1 s|^{3/4})"),
        nu1_prime=f(nu1p, "viscosity derivative bound (nu1 - nu0) * slope / 2"),
        k_tilde=f(k_tilde, "1/C_P^2 mean-zero scalar Poincare, inverted"),
        c_pt_tilde=f(c_pt_tilde, "1/C_P^2 for the mean-zero time derivative"),
        c_vel_tilde=f(c_vel_tilde, "2/nu0 Young split of buoyancy against (nu0/8)|Au|^2"),
        k_hat=f(k_hat, "2*C_vel_tilde/(theta*K_tilde) scalar weight in phi"),
        c_theta=f(c_theta, "2*l4_over_grad^2/theta, conservative transport coupling"),
        c_hat_1=f(c1, "(1+2*C_theta) * 54*c_a^4/nu0^3 advection Young split"),
        c_hat_2=f(c2, "(1+2*C_theta) * 2*max(1,grad4_over_a1^2)^4 * "
                      "(1 + 54*(nu1'*c_d4)^4/nu0^3) mixed-viscosity split"),
        c_hat_3=f(c3, "(1+2*C_theta) * 2/nu0 buoyancy |eta|^2 coefficient"),
        c_hat_4=f(c4, "2*nu1'*c_d4*(grad4_over_a1+1)*sqrt(C_PK/2) "
                      "variable-viscosity |Au|^2 coefficient"),
        c_hat_5=f(c5, "(1+2*C_theta) * 2/nu0 forcing Young split"),
        c_hat_6=f(c6, "(1+2*C_theta) * (2/nu0 + U^2/theta + 1) profile-source split"),
        d_1=f(d1, "equals c_hat_1"),
        d_2=f(d2, "c_hat_2 + c_hat_3/K_hat after converting |eta|^2 to phi units"),
        d_3=f(d3, "min(nu0/C_PK^2, theta*K_tilde/2, theta*C_pt_tilde/2) "
                  "dissipation-to-phi conversion"),
        d_4=f(d4, "(2*C_theta/theta)*max(1, u4^2*g4^2, u4^2, g2^2) "
                  "elliptic-recovery coefficient"),
        c_eta0_factor=f(max(g2, g4), "max(grad2_over_a1, grad4_over_a1); multiplies "
                                     "|A1 eta0| to give C_eta0"),
        c_generic=f(c_generic, "max(1, 2/nu0, C_theta), generic chain constant for "
                               "the window and H1 monitors"),
        c_bar=f(c4, "reuses the variable-viscosity |Au|^2 coefficient for the "
                    "epsilon split of the window inequality"),
        v4_interp=s(quot["v4_interp"], "|u|_4^2 / (|u|^{1/2} |D(u)|^{3/2})"),
        trace_l4_scalar=s(quot["trace_l4_scalar"],
                          "|s|_{L4(top)} over the root of the Dirichlet form"),
        trace_l4_velocity=s(quot["trace_l4_velocity"], "|u|_{L4(top)} / |D(u)|"),
        l4_over_dirichlet=s(quot["l4_over_dirichlet"],
                            "|s|_4 over the root of the Dirichlet form"),
        grad_over_dirichlet=s(quot["grad_over_dirichlet"],
                              "|grad s| over the root of the Dirichlet form"),
    )


# ---------------------------------------------------------------------------
# smallness gate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionCheck:
    name: str
    lhs: float
    rhs: float
    passed: bool
    note: str = ""

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    def as_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs,
                "margin": self.margin, "passed": self.passed, "note": self.note}


def _strict(name: str, lhs: float, rhs: float, note: str = "") -> ConditionCheck:
    # boundary semantics are "fail": equality does not pass
    return ConditionCheck(name, float(lhs), float(rhs), bool(lhs < rhs), note)


@dataclass
class SmallnessReport:
    """Gate verdict: the entry conditions for global small-data integration."""

    passed: bool
    beta: float
    beta_source: str
    d1: float
    d2: float
    d3: float
    d4: float
    d5: float
    cubic: CubicRoots
    z2: float | None
    pi0: float
    conditions: list
    norms: dict
    constants: dict

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "beta": self.beta,
            "beta_source": self.beta_source,
            "d1": self.d1, "d2": self.d2, "d3": self.d3, "d4": self.d4, "d5": self.d5,
            "cubic": self.cubic.as_dict(),
            "z2": self.z2,
            "pi0": self.pi0,
            "conditions": [c.as_dict() for c in self.conditions],
            "norms": self.norms,
            "constants": self.constants,
        }


def select_beta(constants: ChainConstants, nu0: float,
                override: float | None = None) -> tuple[float, str]:
    """Auto-select beta at half the tightest structural cap, or take the override.

    The caps are 1, the viscous-absorption bound (nu0/(4*c_hat_4))^2, and the
    root r of d2*(r + r^4) = d3/2 (bisection; the left side is increasing).
    Halving guarantees the three beta conditions pass with a factor-2 margin.
    """
    if override is not None:
        if override <= 0:
            raise ValueError("beta override must be positive")
        return float(override), "config"
    d2 = constants.d_2.value
    d3 = constants.d_3.value
    absorption_cap = math.inf
    if constants.c_hat_4.value > 0:
        absorption_cap = (nu0 / (4.0 * constants.c_hat_4.value)) ** 2
    lo, hi = 0.0, max(1.0, d3 / (2.0 * d2))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if d2 * (mid + mid**4) < 0.5 * d3:
            lo = mid
        else:
            hi = mid
    return 0.5 * min(1.0, absorption_cap, lo), "auto"


def global_smallness_check(basis: SpectralBasis, theta: float, U: float,
                           alpha: float, viscosity, malpha,
                           u0: VectorField, eta0: ScalarField,
                           f_sup_sq: float = 0.0,
                           constants: ChainConstants | None = None,
                           beta: float | None = None,
                           samples: int = 48, seed: int = 0) -> SmallnessReport:
    """Evaluate every entry condition for the global small-data regime.

    All inequalities are strict (equality fails).  The report carries the
    gate polynomial coefficients, the selected beta, per-condition margins,
    the initial value of the smallness functional Pi(0), and the full labeled
    constant set.
    """
    dom = basis.domain
    nu0 = viscosity.nu0
    if constants is None:
        constants = estimate_chain_constants(basis, theta, U, viscosity,
                                             samples=samples, seed=seed)
    constants.validate_labels()

    # ---- norms of the data ----
    Du0_sq = float(dom.integrate(sym_gradient(u0).frobenius_sq()))
    u0_l4 = lp_norm(u0, 4)
    e = eta0.values
    eta0_sq = float(dom.integrate(e**2))
    gx, gz = dom.ddx(e), dom.ddz(e)
    grad_eta0_sq = float(dom.integrate(gx**2 + gz**2))
    grad_eta0_l4 = float(dom.integrate((gx**2 + gz**2) ** 2)) ** 0.25
    lap_eta0_sq = float(dom.integrate(dom.laplacian(e) ** 2))
    con = basis.concentration
    W = dom.quadrature.area
    d0 = np.einsum("lxz,xz->l", con.fields, e * W)
    a1_eta0_sq = float(np.sum((con.eigenvalues * d0) ** 2))
    gm4_sq = malpha.grad_l4() ** 2
    m_l2_sq = malpha.norm_l2() ** 2

    d1 = constants.d_1.value
    d2 = constants.d_2.value
    d3 = constants.d_3.value
    d4 = constants.d_4.value
    d5 = 2.0 * constants.c_hat_5.value * f_sup_sq + 2.0 * constants.c_hat_6.value * m_l2_sq

    beta_val, beta_src = select_beta(constants, nu0, beta)
    cubic = gate_cubic_roots(d1, d3, d5)
    z2 = cubic.z2

    cp = constants.poincare_scalar.value
    conds = [
        _strict("beta_le_one", beta_val, 1.0),
        _strict("viscous_absorption", constants.c_hat_4.value * math.sqrt(beta_val),
                nu0 / 4.0),
        _strict("cubic_linear_coefficient", d2 * (beta_val + beta_val**4), d3 / 2.0),
        _strict("three_simple_roots", d5**2, d3**3 / (108.0 * d1),
                "discriminant of the gate cubic"),
        _strict("transport_smallness", 2.0 * U * cp, theta / 4.0),
        _strict("transport_smallness_dt",
                gm4_sq + U * cp / 2.0, theta * constants.c_pt_tilde.value / 2.0),
        _strict("profile_gradient", gm4_sq, beta_val / 8.0),
        _strict("a1_eta0", a1_eta0_sq, beta_val / 10.0),
    ]
    if z2 is not None:
        conds.insert(5, _strict(
            "window_coupling",
            d4 * z2 * (1.0 + gm4_sq) + d4 * (z2 + U) * beta_val,
            beta_val / 4.0))
        dteta0_sq = 4.0 * (theta**2 * lap_eta0_sq
                           + u0_l4**2 * grad_eta0_l4**2
                           + u0_l4**2 * gm4_sq
                           + U**2 * grad_eta0_sq)
        conds.append(_strict("ic_time_derivative", dteta0_sq, z2 / 8.0))
        conds.append(_strict("ic_energy",
                             Du0_sq + constants.k_hat.value * eta0_sq, z2 / 8.0))
    else:
        for name in ("window_coupling", "ic_time_derivative", "ic_energy"):
            conds.append(ConditionCheck(name, math.inf, 0.0, False,
                                        "no usable z2: the gate cubic lacks three "
                                        "simple real roots"))

    report = SmallnessReport(
        passed=all(c.passed for c in conds),
        beta=beta_val,
        beta_source=beta_src,
        d1=d1, d2=d2, d3=d3, d4=d4, d5=d5,
        cubic=cubic,
        z2=z2,
        pi0=a1_eta0_sq + gm4_sq,
        conditions=conds,
        norms={
            "Du0_sq": Du0_sq, "u0_l4": u0_l4, "eta0_sq": eta0_sq,
            "grad_eta0_sq": grad_eta0_sq, "grad_eta0_l4": grad_eta0_l4,
            "lap_eta0_sq": lap_eta0_sq, "a1_eta0_sq": a1_eta0_sq,
            "grad_malpha_l4_sq": gm4_sq, "malpha_l2_sq": m_l2_sq,
            "f_sup_sq": f_sup_sq,
        },
        constants=constants.as_dict(),
    )
    return report


# ---------------------------------------------------------------------------
# strong-mode monitors
# ---------------------------------------------------------------------------

@dataclass
class WindowInputs:
    """Assembled h and g series for the bootstrap window, with bookkeeping."""

    times: np.ndarray
    h: np.ndarray
    g: np.ndarray
    epsilon: float
    c_eps: float
    c_eta0: float

    def as_dict(self) -> dict:
        return {"epsilon": self.epsilon, "c_eps": self.c_eps, "c_eta0": self.c_eta0,
                "h_max": float(np.max(self.h)), "g_max": float(np.max(self.g))}


def build_window_inputs(envelope: EnvelopeSpec, constants: ChainConstants,
                        times, f_sq, malpha, eta0n_sq: float,
                        a1_eta0n_sq: float) -> WindowInputs:
    """Assemble the window data from the envelope, the profile, and the data.

    h is the coefficient of the linear term (constant in time here: the
    profile and projection norms do not move), and g collects the forcing
    levels, with every generic constant drawn from the labeled set.
    """
    t = _check_times(times)
    n = t.size
    c = constants.c_generic.value
    c_eta0 = constants.c_eta0_factor.value * math.sqrt(max(a1_eta0n_sq, 0.0))
    c_bar = constants.c_bar.value
    if c_bar > 0:
        eps = min(1.0, envelope.nu0 / (4.0 * c_bar * (1.0 + c_eta0)))
    else:
        eps = 1.0
    c_eps = c_bar**8 / (8.0 * eps**7) + c_bar**2 / (4.0 * eps) + c

    gm4 = malpha.grad_l4()
    h_level = c_eps * (1.0 + gm4**8 + gm4**2 + c_eta0**8 + c_eta0**2)
    g_series = (c * envelope.G(t) / (2.0 * envelope.c_nu0.value)
                + 2.0 * c * eta0n_sq
                + c * c_eta0**2
                + c * malpha.norm_l2() ** 2
                + c * _as_series(f_sq, n, "f_sq"))
    return WindowInputs(times=t, h=np.full(n, h_level), g=g_series,
                        epsilon=eps, c_eps=c_eps, c_eta0=c_eta0)


@dataclass
class StrongMonitorReport:
    """Qualitative consequences checked along a strong-mode trajectory."""

    times: np.ndarray
    grad_xi_sq: np.ndarray
    grad_xi_l4: np.ndarray
    h1_bound: np.ndarray
    h1_passed: bool
    h1_min_margin: float
    grad4_window_passed: bool | None
    grad4_max_in_window: float | None
    t_star: float | None
    dteta_surrogate_max: float
    dteta_finite: bool
    c_eta0: float
    constants: dict

    @property
    def passed(self) -> bool:
        window_ok = self.grad4_window_passed in (True, None)
        return self.h1_passed and window_ok and self.dteta_finite

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "h1_passed": self.h1_passed,
            "h1_min_margin": self.h1_min_margin,
            "grad4_window_passed": self.grad4_window_passed,
            "grad4_max_in_window": self.grad4_max_in_window,
            "t_star": self.t_star,
            "dteta_surrogate_max": self.dteta_surrogate_max,
            "dteta_finite": self.dteta_finite,
            "c_eta0": self.c_eta0,
            "n_samples": int(self.times.size),
        }


def monitor_strong_estimates(traj, ws, constants: ChainConstants | None = None,
                             t_star: float | None = None) -> StrongMonitorReport:
    """Check the strong-solution monitors along a saved trajectory.

    Verifies |grad xi(t)|^2 against the short-time exponential bound driven
    by the running supremum of |D(u)|, checks |grad xi|_4 < 1 inside the
    supplied window (when given), and bounds the time-derivative surrogate
    from coefficient finite differences.  Everything is report-based: the
    constants are estimates, so violations are margins, not exceptions.
    """
    if traj.variant != "strong":
        raise ValueError("strong-mode monitors need a strong-variant trajectory")
    if constants is None:
        constants = estimate_chain_constants(ws.basis, ws.theta, ws.U, ws.viscosity)
    constants.validate_labels()

    dom = ws.domain
    con = ws.basis.concentration
    times = np.array([st.t for st in traj.states])
    n_states = len(traj.states)

    grad_xi_sq = np.zeros(n_states)
    grad_xi_l4 = np.zeros(n_states)
    d_norm = np.zeros(n_states)
    for i, st in enumerate(traj.states):
        grad_xi_sq[i] = max(float(st.d @ ws.Gc @ st.d) / ws.theta, 0.0)
        xi = np.einsum("l,lxz->xz", st.d, con.fields)
        gx, gz = dom.ddx(xi), dom.ddz(xi)
        grad_xi_l4[i] = float(dom.integrate((gx**2 + gz**2) ** 2)) ** 0.25
        d_norm[i] = math.sqrt(0.5 * float(np.sum(ws.alpha_eig * st.c**2)))

    c = constants.c_generic.value
    a1_eta0n_sq = float(np.sum((ws.beta_eig * ws.d0) ** 2))
    c_eta0 = constants.c_eta0_factor.value * math.sqrt(a1_eta0n_sq)
    running_sup = np.maximum.accumulate(d_norm)
    h1_bound = 2.0 * c * c_eta0**2 * times * np.exp(c * (running_sup**4 + 1.0) * times)
    h1_margins = h1_bound - grad_xi_sq
    scale = max(1.0, float(np.max(h1_bound)))
    h1_passed = bool(np.all(h1_margins >= -1e-9 * scale))

    grad4_window_passed = None
    grad4_max = None
    if t_star is not None:
        in_window = times <= t_star + 1e-12 * max(1.0, t_star)
        if np.any(in_window):
            grad4_max = float(np.max(grad_xi_l4[in_window]))
            grad4_window_passed = grad4_max < 1.0

    dteta_max = 0.0
    for i in range(1, n_states):
        dt = times[i] - times[i - 1]
        if dt <= 0:
            continue
        rate = float(np.linalg.norm(traj.states[i].d - traj.states[i - 1].d)) / dt
        dteta_max = max(dteta_max, rate)

    return StrongMonitorReport(
        times=times,
        grad_xi_sq=grad_xi_sq,
        grad_xi_l4=grad_xi_l4,
        h1_bound=h1_bound,
        h1_passed=h1_passed,
        h1_min_margin=float(np.min(h1_margins)),
        grad4_window_passed=grad4_window_passed,
        grad4_max_in_window=grad4_max,
        t_star=t_star,
        dteta_surrogate_max=dteta_max,
        dteta_finite=bool(np.isfinite(dteta_max)),
        c_eta0=c_eta0,
        constants=constants.as_dict(),
    )
