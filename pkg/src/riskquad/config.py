"""Run configuration: strict schema, JSON round trip, and named profiles.

The ``paper_section6`` profile reproduces the canonical study setup
(79x39 mesh of (0,2)x(0,1), kappa = 2e-2, alpha = 4, gamma = 1e-5,
n_tr = 40, bounds [0, 16], uniform initial control 4).  Unknown keys are
rejected so silently ignored typos cannot skew an experiment.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .fem import build_mesh
from .ouu import OuuConfig
from .poisson import WellConfig, grid_points, parabolic_target_profile
from .random_field import field_on_mesh


@dataclass
class MeshSpec:
    nx: int = 79
    ny: int = 39
    lx: float = 2.0
    ly: float = 1.0


@dataclass
class MeanSpec:
    """Mean log-conductivity: a constant, or a sum of Gaussian bumps."""

    type: str = "constant"
    value: float = 0.0
    centers: list = field(default_factory=list)
    amplitudes: list = field(default_factory=list)
    width: float = 0.25


@dataclass
class FieldSpec:
    kappa: float = 2e-2
    alpha: float = 4.0
    mean: MeanSpec = field(default_factory=MeanSpec)


@dataclass
class WellSpec:
    sigma: float = 0.05
    control_xs: list = field(
        default_factory=lambda: [1.0 / 3.0, 2.0 / 3.0, 1.0, 4.0 / 3.0, 5.0 / 3.0]
    )
    control_ys: list = field(default_factory=lambda: [0.2, 0.4, 0.6, 0.8])
    production_xs: list = field(default_factory=lambda: [0.4, 0.8, 1.2, 1.6])
    production_ys: list = field(default_factory=lambda: [0.25, 0.5, 0.75])
    targets: object = "parabolic"


@dataclass
class OuuSpec:
    beta: float = 1.0
    gamma: float = 1e-5
    n_tr: int = 40
    trace_mode: str = "randomized"
    beta_schedule: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    grad_reduction_tol: float = 5e-4
    max_iter: int = 100
    z0: float = 4.0
    z_min: float = 0.0
    z_max: float = 16.0


@dataclass
class ExperimentSpec:
    problem: str = "poisson"
    semilinear_c: float = 1.0
    eps_list: list = field(default_factory=lambda: [2.0**-k for k in range(7)])
    rate_n_mc: int = 2000
    n_samples: int = 3
    sample_eps: float = 1.0
    true_risk_samples: int = 10000
    compare_betas: list = field(default_factory=lambda: [0.5, 0.1, 0.01])
    compare_n_tr: list = field(default_factory=lambda: [4, 16])
    compare_n_mc: list = field(default_factory=lambda: [4, 16])
    compare_eval_samples: int = 2000
    compare_max_iter: int = 40
    compare_methods: list = field(
        default_factory=lambda: ["quad_randomized", "quad_eigenbasis", "saa"]
    )


@dataclass
class RunConfig:
    mesh: MeshSpec = field(default_factory=MeshSpec)
    random_field: FieldSpec = field(default_factory=FieldSpec)
    wells: WellSpec = field(default_factory=WellSpec)
    ouu: OuuSpec = field(default_factory=OuuSpec)
    experiment: ExperimentSpec = field(default_factory=ExperimentSpec)
    seed: int = 0
    threads: int = 1


_SECTION_TYPES = {
    "mesh": MeshSpec,
    "random_field": FieldSpec,
    "wells": WellSpec,
    "ouu": OuuSpec,
    "experiment": ExperimentSpec,
    "mean": MeanSpec,
}


def _from_dict(cls, data, path=""):
    if not isinstance(data, dict):
        raise ConfigError(f"section {path or cls.__name__!r} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config keys at {path or '<root>'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        here = f"{path}.{name}" if path else name
        f = fields[name]
        if dataclasses.is_dataclass(f.type) or name in _SECTION_TYPES:
            sub = _SECTION_TYPES.get(name, f.type)
            kwargs[name] = _from_dict(sub, value, here)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_from_dict(data):
    """Strictly parse a nested mapping into a RunConfig."""
    return _from_dict(RunConfig, data)


def config_to_dict(cfg):
    """Serialize a RunConfig back into plain nested mappings."""
    return dataclasses.asdict(cfg)


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


PROFILES = {
    "paper_section6": {},
    "desk": {
        "mesh": {"nx": 20, "ny": 10},
        "wells": {"sigma": 0.1},
        "ouu": {"n_tr": 8, "max_iter": 40},
        "experiment": {
            "rate_n_mc": 200,
            "true_risk_samples": 500,
            "compare_eval_samples": 300,
            "compare_n_tr": [2, 8],
            "compare_n_mc": [2, 8],
            "compare_max_iter": 25,
        },
    },
}


def _merge(base, extra):
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def resolve_config(profile=None, config_path=None, overrides=None):
    """Profile defaults, overlaid with a config file, then CLI overrides."""
    if profile is None:
        profile = "paper_section6"
    if profile not in PROFILES:
        raise ConfigError(
            f"unknown profile {profile!r}; choose from {sorted(PROFILES)}"
        )
    data = dict(PROFILES[profile])
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as fh:
            try:
                file_data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        data = _merge(data, file_data)
    if overrides:
        data = _merge(data, overrides)
    return config_from_dict(data)


# -- builders -------------------------------------------------------------------


def build_mean_field(mesh, spec):
    """Nodal mean log-conductivity from its config description."""
    if spec.type == "constant":
        return np.full(mesh.n_nodes, float(spec.value))
    if spec.type == "bumps":
        if len(spec.centers) != len(spec.amplitudes):
            raise ConfigError("mean bumps need one amplitude per center")
        out = np.full(mesh.n_nodes, float(spec.value))
        for (cx, cy), amp in zip(spec.centers, spec.amplitudes):
            r2 = (mesh.node_x - cx) ** 2 + (mesh.node_y - cy) ** 2
            out += amp * np.exp(-0.5 * r2 / spec.width**2)
        return out
    raise ConfigError(f"unknown mean type {spec.type!r}")


def build_wells(spec):
    production = grid_points(spec.production_xs, spec.production_ys)
    if isinstance(spec.targets, str):
        if spec.targets != "parabolic":
            raise ConfigError(f"unknown target profile {spec.targets!r}")
        targets = parabolic_target_profile(production)
    else:
        targets = np.asarray(spec.targets, dtype=float)
    return WellConfig(
        control_points=grid_points(spec.control_xs, spec.control_ys),
        production_points=production,
        sigma=spec.sigma,
        targets=targets,
    )


def build_ouu_config(spec, seed=0):
    return OuuConfig(
        beta=spec.beta,
        gamma=spec.gamma,
        n_tr=spec.n_tr,
        trace_mode=spec.trace_mode,
        beta_schedule=tuple(spec.beta_schedule),
        grad_reduction_tol=spec.grad_reduction_tol,
        max_iter=spec.max_iter,
        seed=seed,
        z_min=spec.z_min,
        z_max=spec.z_max,
    )


def build_setup(cfg):
    """Mesh, Gaussian field, and flow problem from a RunConfig."""
    from .poisson import PoissonFlowProblem

    mesh = build_mesh(cfg.mesh.nx, cfg.mesh.ny, cfg.mesh.lx, cfg.mesh.ly)
    mean = build_mean_field(mesh, cfg.random_field.mean)
    problem = PoissonFlowProblem(mesh, wells=build_wells(cfg.wells), mean=mean)
    gf = field_on_mesh(
        mesh, cfg.random_field.kappa, cfg.random_field.alpha,
        mean=mean, rng_seed=cfg.seed, space=problem.space,
    )
    return mesh, gf, problem
