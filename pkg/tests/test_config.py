"""Configuration layer tests: viscosity closures, spec validation, file round trips."""

import json
import math

import numpy as np
import pytest

from bioconvect.config import (
    ConfigError,
    DomainSpec,
    ForcingSpec,
    InitialConditionSpec,
    SimConfig,
    SurfaceStressSpec,
    ViscosityModel,
    config_from_dict,
    config_to_dict,
    load_config,
)
from bioconvect.domain import make_domain


def small_config(**overrides):
    base = dict(
        domain=DomainSpec(Lx=2 * math.pi, H=1.0, Nx=32, Nz=24),
        theta=1.0,
        U=0.05,
        alpha=0.01,
        viscosity=ViscosityModel(nu0=0.7, nu1=1.0, kind="tanh", slope=1.0, center=0.5),
        n=8,
        dt=2e-3,
        t_end=0.5,
        scheme="weak",
    )
    base.update(overrides)
    return SimConfig(**base)


class TestViscosityModel:
    def test_constant_model(self):
        nu = ViscosityModel(nu0=0.8)
        s = np.linspace(-3, 3, 11)
        assert np.all(nu(s) == 0.8)
        assert np.all(nu.derivative(s) == 0.0)
        assert nu.nu1_prime == 0.0

    def test_tanh_model_bounds_and_monotonicity(self):
        nu = ViscosityModel(nu0=0.5, nu1=1.2, kind="tanh", slope=2.0, center=0.3)
        s = np.linspace(-10, 10, 2001)
        vals = nu(s)
        assert np.all(vals > 0.5 - 1e-12) and np.all(vals < 1.2 + 1e-12)
        assert np.all(np.diff(vals) >= 0), "tanh profile must be nondecreasing"
        # slope bound: |nu'| <= (nu1 - nu0) * slope / 2 attained at the center
        dmax = np.max(np.abs(nu.derivative(s)))
        assert dmax <= nu.nu1_prime + 1e-12
        assert abs(nu.derivative(np.array([0.3]))[0] - nu.nu1_prime) < 1e-12

    def test_derivative_matches_finite_difference(self):
        nu = ViscosityModel(nu0=0.5, nu1=1.0, kind="tanh", slope=1.5, center=0.0)
        s = np.linspace(-2, 2, 41)
        h = 1e-6
        fd = (nu(s + h) - nu(s - h)) / (2 * h)
        err = np.max(np.abs(fd - nu.derivative(s)))
        print(f"viscosity derivative FD err {err:.3e}")
        assert err < 1e-8

    def test_validate_certificates(self):
        nu = ViscosityModel(nu0=0.7, nu1=1.0, kind="tanh", slope=1.0, center=0.5)
        cert = nu.validate()
        assert cert["min_value"] >= 0.7 - 1e-12
        assert cert["max_value"] <= 1.0 + 1e-12
        assert cert["max_abs_derivative"] <= nu.nu1_prime + 1e-12
        assert cert["derivative_fd_error"] < 1e-6

    def test_rejects_bad_bounds(self):
        with pytest.raises(ConfigError):
            ViscosityModel(nu0=0.0)
        with pytest.raises(ConfigError):
            ViscosityModel(nu0=1.0, nu1=0.5, kind="tanh")
        with pytest.raises(ConfigError):
            ViscosityModel(nu0=1.0, nu1=2.0, kind="cubic")


class TestForcingAndBoundaryData:
    def test_forcing_kinds(self):
        dom = make_domain(DomainSpec(Lx=2 * math.pi, H=1.0, Nx=16, Nz=8))
        fx, fz = ForcingSpec(kind="none").evaluate(dom)
        assert not fx.any() and not fz.any()
        fx, fz = ForcingSpec(kind="uniform", amplitude=-0.3).evaluate(dom)
        assert np.all(fz == -0.3) and not fx.any()
        fx, fz = ForcingSpec(kind="cosine_cell", amplitude=1.0, mode=2).evaluate(dom)
        assert not fx.any()
        assert abs(dom.integrate(fz)) < 1e-12, "cell forcing has zero mean"
        with pytest.raises(ConfigError):
            ForcingSpec(kind="gravity")

    def test_surface_stress(self):
        dom = make_domain(DomainSpec(Lx=2 * math.pi, H=1.0, Nx=16, Nz=8))
        s = SurfaceStressSpec(kind="cosine", amplitude=0.1, mode=1)
        assert not s.is_zero
        trace = s.evaluate(dom)
        assert trace.shape == (dom.Nx,)
        assert abs(np.max(trace) - 0.1) < 1e-12
        assert SurfaceStressSpec().is_zero

    def test_initial_condition_kinds(self):
        ic = InitialConditionSpec(kind="modes", velocity_modes=[1, 0.5], concentration_modes=[])
        assert ic.velocity_modes == (1.0, 0.5)
        with pytest.raises(ConfigError):
            InitialConditionSpec(kind="gaussian")
        with pytest.raises(ConfigError):
            InitialConditionSpec(velocity_amplitude=-1.0)


class TestSimConfigValidation:
    def test_valid_config_passes(self):
        cfg = small_config().validate()
        assert cfg.scheme == "weak"

    def test_capacity_rule(self):
        """The vertical resolution must leave headroom above the mode count."""
        with pytest.raises(ConfigError, match="Nz"):
            small_config(n=12).validate()  # Nz=24 < 2*12+2

    def test_strong_scheme_rejects_surface_stress(self):
        cfg = small_config(
            scheme="strong",
            surface_stress=SurfaceStressSpec(kind="cosine", amplitude=0.1, mode=1),
        )
        with pytest.raises(ConfigError, match="stress"):
            cfg.validate()

    @pytest.mark.parametrize(
        "field,value",
        [("theta", 0.0), ("U", -0.1), ("alpha", -1.0), ("dt", 0.0),
         ("t_end", -1.0), ("scheme", "mild"), ("save_every", 0)],
    )
    def test_rejects_bad_scalars(self, field, value):
        with pytest.raises(ConfigError):
            small_config(**{field: value}).validate()


class TestSerialization:
    def test_dict_roundtrip(self):
        cfg = small_config(
            forcing=ForcingSpec(kind="cosine_cell", amplitude=0.02, mode=1),
            initial=InitialConditionSpec(kind="modes", velocity_modes=[1e-3],
                                         concentration_modes=[2e-3, 1e-3]),
        ).validate()
        d = config_to_dict(cfg)
        back = config_from_dict(json.loads(json.dumps(d)))
        assert config_to_dict(back) == d

    def test_toml_and_json_agree(self, tmp_path):
        cfg = small_config().validate()
        d = config_to_dict(cfg)
        jpath = tmp_path / "run.json"
        jpath.write_text(json.dumps(d))
        tpath = tmp_path / "run.toml"
        tpath.write_text(_to_toml(d))
        from_json = load_config(str(jpath))
        from_toml = load_config(str(tpath))
        assert config_to_dict(from_json) == config_to_dict(from_toml)

    def test_missing_table_reported(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text(json.dumps({"schema": 1, "physics": {"theta": 1.0}}))
        with pytest.raises(ConfigError):
            load_config(str(p))

    def test_non_toml_content_rejected(self, tmp_path):
        p = tmp_path / "run.yaml"
        p.write_text("a: 1")
        with pytest.raises(ValueError):
            # anything that is not JSON goes through the TOML parser
            load_config(str(p))


def test_shipped_configs_load_and_validate():
    """Every config file shipped with the package must load cleanly."""
    import glob
    import os

    root = os.path.join(os.path.dirname(__file__), "..", "configs")
    paths = sorted(glob.glob(os.path.join(root, "*.toml")))
    assert len(paths) >= 6, f"expected the shipped config set, found {paths}"
    for p in paths:
        cfg = load_config(p)
        print(f"{os.path.basename(p)}: scheme={cfg.scheme} n={cfg.n} t_end={cfg.t_end}")
        assert cfg.domain.Nz >= 2 * cfg.n + 2


def _to_toml(d, prefix=""):
    """Tiny TOML writer for flat table-of-scalars dictionaries used in tests."""
    lines = []
    scalars = {k: v for k, v in d.items() if not isinstance(v, dict)}
    tables = {k: v for k, v in d.items() if isinstance(v, dict)}
    for k, v in scalars.items():
        lines.append(f"{k} = {_toml_value(v)}")
    for k, v in tables.items():
        name = f"{prefix}{k}"
        lines.append(f"\n[{name}]")
        lines.append(_to_toml(v, prefix=name + "."))
    return "\n".join(lines) + "\n"


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
