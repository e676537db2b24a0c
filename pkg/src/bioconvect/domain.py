"""Channel domain, collocation grids, quadrature, and discrete calculus.

The computational domain is a two-dimensional channel, periodic in the
horizontal direction x with period ``Lx`` and bounded in the vertical
direction z by a rigid bottom wall S at z = 0 and a free surface Gamma at
z = H.  Fields are represented by their values on a tensor-product grid:
equispaced points in x (Fourier) and Legendre-Gauss-Lobatto points in z
(polynomial collocation).  The associated quadrature is exact for Fourier
modes below the Nyquist frequency and for polynomials in z up to degree
2*Nz - 3, which makes discrete L2 inner products of collocation polynomials
agree with the assembled Galerkin forms to round-off.

Derivatives are spectral: FFT in x, dense differentiation matrix in z.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DomainSpec",
    "Domain",
    "Quadrature",
    "ScalarField",
    "VectorField",
    "TensorField",
    "make_domain",
    "lp_norm",
    "h1_norm",
    "sym_gradient",
    "check_interpolation_inequalities",
    "save_field",
    "load_field",
]


# ---------------------------------------------------------------------------
# Legendre-Gauss-Lobatto machinery
# ---------------------------------------------------------------------------

def _legendre_gauss_lobatto(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the n-point Gauss-Lobatto-Legendre rule on [-1, 1].

    Nodes are the endpoints plus the extrema of the Legendre polynomial of
    degree n-1, computed by Newton iteration from a Chebyshev initial guess.
    The rule integrates polynomials up to degree 2n - 3 exactly.
    """
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got {n}")
    x = np.cos(np.pi * np.arange(n - 1, -1, -1) / (n - 1))  # ascending
    P = np.zeros((n, n))
    x_old = np.full(n, 2.0)
    while np.max(np.abs(x - x_old)) > 1e-15:
        x_old = x.copy()
        P[:, 0] = 1.0
        P[:, 1] = x
        for k in range(2, n):
            P[:, k] = ((2 * k - 1) * x * P[:, k - 1] - (k - 1) * P[:, k - 2]) / k
        x = x_old - (x * P[:, n - 1] - P[:, n - 2]) / (n * P[:, n - 1])
    w = 2.0 / ((n - 1) * n * P[:, n - 1] ** 2)
    return x, w


def _lgl_diff_matrix(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Collocation differentiation matrix on Gauss-Lobatto-Legendre nodes.

    Uses the barycentric form with the exact Gauss-Lobatto barycentric
    weights (-1)^j * sqrt(w_j) and the negative-sum trick for the diagonal,
    which keeps the matrix accurate to round-off for all practical sizes.
    """
    n = len(x)
    bary = (-1.0) ** np.arange(n) * np.sqrt(w)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                D[i, j] = (bary[j] / bary[i]) / (x[i] - x[j])
        D[i, i] = -np.sum(D[i, :])
    return D


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainSpec:
    """Geometry and resolution of the periodic channel.

    Attributes:
        Lx: horizontal period (length of the channel).
        H: channel height; the rigid wall S sits at z = 0 and the free
            surface Gamma at z = H.
        Nx: number of equispaced Fourier collocation points in x.
        Nz: number of Gauss-Lobatto-Legendre points in z.
    """

    Lx: float
    H: float
    Nx: int
    Nz: int

    def validate(self) -> None:
        if not (self.Lx > 0 and self.H > 0):
            raise ValueError(f"domain dimensions must be positive, got Lx={self.Lx}, H={self.H}")
        if self.Nx < 4 or self.Nz < 4:
            raise ValueError(f"resolution too small, need Nx, Nz >= 4, got ({self.Nx}, {self.Nz})")


@dataclass(frozen=True)
class Quadrature:
    """Discrete integration weights for the channel.

    ``area`` has shape (Nx, Nz) and sums to the channel area Lx*H.
    ``line_x`` holds the per-column weights of a horizontal line integral
    (bottom wall or free surface); it sums to Lx.  The full boundary of the
    periodic channel is the union of the two walls, of total length 2*Lx.
    """

    area: np.ndarray
    line_x: np.ndarray

    @property
    def boundary_length(self) -> float:
        return 2.0 * float(np.sum(self.line_x))


class Domain:
    """Grids, quadrature, and spectral calculus for the periodic channel.

    Immutable after construction; all methods are pure functions of their
    inputs, so a single instance can be shared freely across threads.
    """

    def __init__(self, spec: DomainSpec):
        spec.validate()
        self.spec = spec
        self.Lx = float(spec.Lx)
        self.H = float(spec.H)
        self.Nx = int(spec.Nx)
        self.Nz = int(spec.Nz)
        self.area = self.Lx * self.H

        # x: equispaced periodic grid, trapezoid (= rectangle) weights
        self.x = np.arange(self.Nx) * (self.Lx / self.Nx)
        self.wx = np.full(self.Nx, self.Lx / self.Nx)

        # z: Gauss-Lobatto-Legendre nodes mapped to [0, H]
        xi, wz_ref = _legendre_gauss_lobatto(self.Nz)
        self.z = 0.5 * self.H * (xi + 1.0)
        self.wz = 0.5 * self.H * wz_ref
        self.Dz = (2.0 / self.H) * _lgl_diff_matrix(xi, wz_ref)
        self.Dz2 = self.Dz @ self.Dz

        self.quadrature = Quadrature(area=np.outer(self.wx, self.wz), line_x=self.wx.copy())

        # Fourier wavenumbers for the real transform, and the 2/3 dealias mask
        self.kx = 2.0 * np.pi / self.Lx * np.arange(self.Nx // 2 + 1)
        self._ikx = 1j * self.kx
        if self.Nx % 2 == 0:
            # the Nyquist mode has no well-defined first derivative on a real grid
            self._ikx = self._ikx.copy()
            self._ikx[-1] = 0.0
        self._dealias_keep = np.arange(self.Nx // 2 + 1) <= self.Nx // 3

        self.X, self.Z = np.meshgrid(self.x, self.z, indexing="ij")

    # ---- integrals -------------------------------------------------------

    def integrate(self, values: np.ndarray) -> float:
        """Area integral over the channel by tensor-product quadrature."""
        return float(np.sum(values * self.quadrature.area))

    def integrate_gamma(self, values: np.ndarray) -> float:
        """Line integral along the free surface z = H of grid values."""
        return float(np.sum(values[:, -1] * self.wx))

    def integrate_wall(self, values: np.ndarray) -> float:
        """Line integral along the rigid bottom z = 0 of grid values."""
        return float(np.sum(values[:, 0] * self.wx))

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        """Discrete L2 inner product of two scalar grids."""
        return float(np.sum(a * b * self.quadrature.area))

    def mean(self, values: np.ndarray) -> float:
        return self.integrate(values) / self.area

    # ---- spectral derivatives --------------------------------------------

    def ddx(self, values: np.ndarray) -> np.ndarray:
        """Horizontal derivative by FFT (exact below the Nyquist mode)."""
        return np.fft.irfft(self._ikx[:, None] * np.fft.rfft(values, axis=0), n=self.Nx, axis=0)

    def ddz(self, values: np.ndarray) -> np.ndarray:
        """Vertical derivative by the collocation differentiation matrix."""
        return values @ self.Dz.T

    def d2dz2(self, values: np.ndarray) -> np.ndarray:
        return values @ self.Dz2.T

    def laplacian(self, values: np.ndarray) -> np.ndarray:
        return np.fft.irfft(
            (self._ikx**2)[:, None] * np.fft.rfft(values, axis=0), n=self.Nx, axis=0
        ) + self.d2dz2(values)

    def dealias_x(self, values: np.ndarray) -> np.ndarray:
        """Zero the upper third of the x-spectrum (2/3 rule for products)."""
        spec = np.fft.rfft(values, axis=0)
        spec[~self._dealias_keep, :] = 0.0
        return np.fft.irfft(spec, n=self.Nx, axis=0)

    # ---- utilities ---------------------------------------------------------

    def random_smooth(
        self,
        rng: np.random.Generator,
        kx_max: int = 5,
        kz_max: int = 8,
        amplitude: float = 1.0,
    ) -> np.ndarray:
        """Random band-limited scalar grid for sampling-based checks.

        A sum of cos/sin horizontal modes up to ``kx_max`` times Legendre
        polynomials in z up to degree ``kz_max``, with standard normal
        coefficients damped geometrically in both indices and scaled so the
        pointwise magnitude is of order ``amplitude``.
        """
        zhat = 2.0 * self.z / self.H - 1.0
        legendre = np.polynomial.legendre.legvander(zhat, kz_max)  # (Nz, kz_max+1)
        values = np.zeros((self.Nx, self.Nz))
        for k in range(kx_max + 1):
            damp_k = 0.6**k
            coeffs_c = rng.standard_normal(kz_max + 1) * damp_k * 0.6 ** np.arange(kz_max + 1)
            profile_c = legendre @ coeffs_c
            if k == 0:
                values += profile_c[None, :]
            else:
                coeffs_s = rng.standard_normal(kz_max + 1) * damp_k * 0.6 ** np.arange(kz_max + 1)
                profile_s = legendre @ coeffs_s
                values += np.cos(k * 2.0 * np.pi * self.X / self.Lx) * profile_c[None, :]
                values += np.sin(k * 2.0 * np.pi * self.X / self.Lx) * profile_s[None, :]
        scale = np.max(np.abs(values))
        if scale > 0:
            values *= amplitude / scale
        return values

    def __repr__(self) -> str:  # pragma: no cover
        return f"Domain(Lx={self.Lx:g}, H={self.H:g}, Nx={self.Nx}, Nz={self.Nz})"


def make_domain(spec: DomainSpec) -> Domain:
    """Build the discrete channel described by ``spec``.

    Raises ValueError for non-positive dimensions or insufficient resolution.
    """
    return Domain(spec)


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------

def _require_finite(name: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError(f"{name} contains non-finite entries")


@dataclass
class ScalarField:
    """Scalar grid function on a channel domain."""

    values: np.ndarray
    domain: Domain
    name: str = ""
    time: float = 0.0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.domain.Nx, self.domain.Nz):
            raise ValueError(
                f"scalar field shape {self.values.shape} does not match grid "
                f"({self.domain.Nx}, {self.domain.Nz})"
            )
        _require_finite(f"scalar field {self.name!r}", self.values)


@dataclass
class VectorField:
    """Velocity-like grid function with components (ux, uz).

    ``solenoidal`` is metadata: it is set only by the projection and by
    reconstruction from a divergence-free basis, and a field carrying the
    flag satisfies max |div| <= div_tol under the discrete divergence.
    """

    ux: np.ndarray
    uz: np.ndarray
    domain: Domain
    name: str = ""
    time: float = 0.0
    solenoidal: bool = False

    def __post_init__(self) -> None:
        self.ux = np.asarray(self.ux, dtype=float)
        self.uz = np.asarray(self.uz, dtype=float)
        shape = (self.domain.Nx, self.domain.Nz)
        if self.ux.shape != shape or self.uz.shape != shape:
            raise ValueError(
                f"vector field shapes {self.ux.shape}, {self.uz.shape} do not match grid {shape}"
            )
        _require_finite(f"vector field {self.name!r}", self.ux, self.uz)

    def divergence(self) -> np.ndarray:
        return self.domain.ddx(self.ux) + self.domain.ddz(self.uz)


@dataclass
class TensorField:
    """Symmetric 2x2 tensor grid function with components (xx, xz, zz)."""

    xx: np.ndarray
    xz: np.ndarray
    zz: np.ndarray
    domain: Domain
    name: str = ""

    def frobenius_sq(self) -> np.ndarray:
        """Pointwise squared Frobenius norm (the off-diagonal counts twice)."""
        return self.xx**2 + 2.0 * self.xz**2 + self.zz**2


# ---------------------------------------------------------------------------
# Norms and differential operators on fields
# ---------------------------------------------------------------------------

_SUPPORTED_P = (2, 3, 4, 6)


def _pointwise_magnitude_sq(f: ScalarField | VectorField | TensorField) -> np.ndarray:
    if isinstance(f, ScalarField):
        return f.values**2
    if isinstance(f, VectorField):
        return f.ux**2 + f.uz**2
    if isinstance(f, TensorField):
        return f.frobenius_sq()
    raise TypeError(f"unsupported field type {type(f).__name__}")


def lp_norm(f: ScalarField | VectorField | TensorField, p: int | float) -> float:
    """Quadrature approximation of the L^p norm over the channel.

    Args:
        f: scalar, vector, or symmetric-tensor grid field.
        p: one of 2, 3, 4, 6 or ``inf`` (max of the pointwise magnitude).

    Returns:
        Nonnegative real norm value.
    """
    mag_sq = _pointwise_magnitude_sq(f)
    if p == math.inf or (isinstance(p, str) and p == "inf"):
        return float(np.sqrt(np.max(mag_sq)))
    if p not in _SUPPORTED_P:
        raise ValueError(f"unsupported exponent p={p}; expected one of {_SUPPORTED_P} or inf")
    dom = f.domain
    return float(dom.integrate(mag_sq ** (p / 2.0)) ** (1.0 / p))


def _grad_norm_sq(f: ScalarField | VectorField) -> float:
    dom = f.domain
    if isinstance(f, ScalarField):
        gx, gz = dom.ddx(f.values), dom.ddz(f.values)
        return dom.integrate(gx**2 + gz**2)
    gxx, gxz = dom.ddx(f.ux), dom.ddz(f.ux)
    gzx, gzz = dom.ddx(f.uz), dom.ddz(f.uz)
    return dom.integrate(gxx**2 + gxz**2 + gzx**2 + gzz**2)


def h1_norm(f: ScalarField | VectorField) -> float:
    """Full H1 norm: sqrt of the squared L2 norm plus squared gradient L2 norm."""
    return float(np.sqrt(lp_norm(f, 2) ** 2 + _grad_norm_sq(f)))


def sym_gradient(u: VectorField) -> TensorField:
    """Symmetrized gradient 0.5*(grad u + (grad u)^T) of a velocity field."""
    dom = u.domain
    return TensorField(
        xx=dom.ddx(u.ux),
        xz=0.5 * (dom.ddz(u.ux) + dom.ddx(u.uz)),
        zz=dom.ddz(u.uz),
        domain=dom,
        name=f"D({u.name})" if u.name else "",
    )


# ---------------------------------------------------------------------------
# Interpolation inequality sampling
# ---------------------------------------------------------------------------

def check_interpolation_inequalities(domain: Domain, samples: int = 100, seed: int = 0) -> dict:
    """Empirically verify the interpolation inequalities used by the estimates.

    For random band-limited scalar fields v this checks, by direct quadrature,

        |v|_6 <= C * ||v||_H1          (smallest admissible C reported),
        |v|_3 <= |v|_2^{1/2} * ||v||_H1^{1/2},
        |v|_4 <= |v|_2^{1/4} * ||v||_H1^{3/4},

    and reports the smallest admissible constant of the first form together
    with any violations of the unit-constant forms.
    """
    rng = np.random.default_rng(seed)
    c6_max = 0.0
    violations_3: list[int] = []
    violations_4: list[int] = []
    worst_margin_3 = math.inf
    worst_margin_4 = math.inf
    for i in range(samples):
        v = ScalarField(domain.random_smooth(rng), domain)
        n2 = lp_norm(v, 2)
        if n2 == 0.0:
            continue
        n3, n4, n6 = lp_norm(v, 3), lp_norm(v, 4), lp_norm(v, 6)
        h1 = h1_norm(v)
        c6_max = max(c6_max, n6 / h1)
        bound3 = math.sqrt(n2) * math.sqrt(h1)
        bound4 = n2**0.25 * h1**0.75
        worst_margin_3 = min(worst_margin_3, bound3 - n3)
        worst_margin_4 = min(worst_margin_4, bound4 - n4)
        if n3 > bound3:
            violations_3.append(i)
        if n4 > bound4:
            violations_4.append(i)
    return {
        "samples": samples,
        "c6_smallest_admissible": c6_max,
        "violations_l3": violations_3,
        "violations_l4": violations_4,
        "worst_margin_l3": worst_margin_3,
        "worst_margin_l4": worst_margin_4,
    }


# ---------------------------------------------------------------------------
# Serialization: flat binary or CSV with a JSON header, x varying fastest
# ---------------------------------------------------------------------------

def _flat(values: np.ndarray) -> np.ndarray:
    # column-major ravel of an (Nx, Nz) array puts x fastest
    return values.ravel(order="F")


def _unflat(flat: np.ndarray, Nx: int, Nz: int) -> np.ndarray:
    return flat.reshape((Nx, Nz), order="F")


def save_field(f: ScalarField | VectorField, prefix: str, fmt: str = "bin") -> dict:
    """Write a field as ``<prefix>.json`` header plus a flat data file.

    The data layout is x-fastest (all x values of the first z row, then the
    next row).  Vector fields store the ux block followed by the uz block.
    ``fmt`` selects ``bin`` (float64 little-endian) or ``csv`` (one value per
    line).  Returns the header dictionary.
    """
    dom = f.domain
    is_vector = isinstance(f, VectorField)
    header = {
        "Lx": dom.Lx,
        "H": dom.H,
        "Nx": dom.Nx,
        "Nz": dom.Nz,
        "name": f.name,
        "time": f.time,
        "components": 2 if is_vector else 1,
        "format": fmt,
        "layout": "x-fastest",
    }
    if is_vector:
        header["solenoidal"] = f.solenoidal
        data = np.concatenate([_flat(f.ux), _flat(f.uz)])
    else:
        data = _flat(f.values)
    with open(f"{prefix}.json", "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if fmt == "bin":
        data.astype("<f8").tofile(f"{prefix}.bin")
    elif fmt == "csv":
        np.savetxt(f"{prefix}.csv", data, fmt="%.17g")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return header


def load_field(prefix: str, domain: Domain | None = None) -> ScalarField | VectorField:
    """Read a field written by :func:`save_field`.

    If ``domain`` is omitted, a matching domain is rebuilt from the header.
    """
    with open(f"{prefix}.json") as fh:
        header = json.load(fh)
    if domain is None:
        domain = make_domain(
            DomainSpec(Lx=header["Lx"], H=header["H"], Nx=header["Nx"], Nz=header["Nz"])
        )
    else:
        got = (domain.Lx, domain.H, domain.Nx, domain.Nz)
        want = (header["Lx"], header["H"], header["Nx"], header["Nz"])
        if got != tuple(want):
            raise ValueError(f"domain mismatch: file has {want}, got {got}")
    if header["format"] == "bin":
        data = np.fromfile(f"{prefix}.bin", dtype="<f8")
    else:
        data = np.loadtxt(f"{prefix}.csv", ndmin=1)
    Nx, Nz = header["Nx"], header["Nz"]
    if header["components"] == 2:
        half = Nx * Nz
        return VectorField(
            ux=_unflat(data[:half], Nx, Nz),
            uz=_unflat(data[half:], Nx, Nz),
            domain=domain,
            name=header["name"],
            time=header["time"],
            solenoidal=bool(header.get("solenoidal", False)),
        )
    return ScalarField(
        values=_unflat(data, Nx, Nz),
        domain=domain,
        name=header["name"],
        time=header["time"],
    )
