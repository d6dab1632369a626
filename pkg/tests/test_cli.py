import json

import numpy as np
import pytest

from riskquad.cli import main
from riskquad.config import (
    PROFILES,
    RunConfig,
    config_from_dict,
    config_to_dict,
    resolve_config,
)
from riskquad.errors import ConfigError

TINY = {
    "mesh": {"nx": 8, "ny": 4},
    "wells": {"sigma": 0.15},
    "ouu": {"n_tr": 2, "max_iter": 8, "beta_schedule": [0.0, 1.0]},
    "experiment": {
        "rate_n_mc": 15,
        "eps_list": [1.0, 0.5, 0.25],
        "true_risk_samples": 25,
        "n_samples": 3,
        "compare_betas": [0.5],
        "compare_n_tr": [2],
        "compare_n_mc": [3],
        "compare_eval_samples": 30,
        "compare_max_iter": 5,
    },
}


def write_config(tmp_path, data=TINY, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def read_csv(path):
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    rows = [l.split(",") for l in lines[1:] if not l.startswith("#")]
    footer = [l for l in lines[1:] if l.startswith("#")]
    return header, rows, footer


def test_config_round_trip():
    cfg = resolve_config("paper_section6")
    assert config_from_dict(config_to_dict(cfg)) == cfg
    as_dict = config_to_dict(cfg)
    assert config_to_dict(config_from_dict(as_dict)) == as_dict


def test_canonical_profile_defaults():
    cfg = resolve_config("paper_section6")
    assert (cfg.mesh.nx, cfg.mesh.ny) == (79, 39)
    assert cfg.random_field.kappa == pytest.approx(2e-2)
    assert cfg.random_field.alpha == pytest.approx(4.0)
    assert cfg.ouu.gamma == pytest.approx(1e-5)
    assert cfg.ouu.n_tr == 40
    assert (cfg.ouu.z_min, cfg.ouu.z_max) == (0.0, 16.0)
    assert cfg.ouu.z0 == 4.0
    assert list(cfg.ouu.beta_schedule) == [0.0, 0.25, 0.5, 0.75, 1.0]


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"mesh": {"nx": 4, "resolution": 9}})
    with pytest.raises(ConfigError):
        config_from_dict({"grid": {}})


def test_unknown_config_key_exits_2(tmp_path):
    path = write_config(tmp_path, {"mesh": {"nx": 4, "bogus": 1}})
    assert main(["--config", path, "--out", str(tmp_path), "sample-field"]) == 2


def test_unknown_profile_rejected():
    with pytest.raises(ConfigError):
        resolve_config("nope")


def test_truncation_study_output(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out", str(out), "truncation-study"]) == 0
    header, rows, footer = read_csv(out / "truncation_rates.csv")
    assert header == ["eps", "err_lin", "err_quad"]
    assert len(rows) == 3
    assert any("slope_lin" in line for line in footer)
    assert any("slope_quad" in line for line in footer)


def test_truncation_study_single_sample(tmp_path):
    data = json.loads(json.dumps(TINY))
    data["experiment"]["rate_n_mc"] = 1
    cfg = write_config(tmp_path, data)
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out", str(out), "truncation-study"]) == 0
    _, rows, _ = read_csv(out / "truncation_rates.csv")
    assert len(rows) == 3


def test_truncation_study_semilinear_exact(tmp_path):
    data = json.loads(json.dumps(TINY))
    data["experiment"]["problem"] = "semilinear"
    data["experiment"]["semilinear_c"] = 0.0
    data["experiment"]["rate_n_mc"] = 10
    data["random_field"] = {"kappa": 5e-2, "alpha": 2.0}
    cfg = write_config(tmp_path, data)
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out", str(out), "truncation-study"]) == 0
    _, rows, _ = read_csv(out / "truncation_rates.csv")
    err_quad = [float(r[2]) for r in rows]
    assert all(e < 1e-8 for e in err_quad)


def test_sample_field_reproducible_and_mean_at_zero_eps(tmp_path):
    cfg = write_config(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["--config", cfg, "--out", str(out1), "--seed", "3",
                 "sample-field"]) == 0
    assert main(["--config", cfg, "--out", str(out2), "--seed", "3",
                 "sample-field"]) == 0
    assert (out1 / "field_samples.csv").read_bytes() == (
        out2 / "field_samples.csv"
    ).read_bytes()
    header, rows, _ = read_csv(out1 / "field_samples.csv")
    assert header == ["x", "y", "sample_0", "sample_1", "sample_2"]

    data = json.loads(json.dumps(TINY))
    data["experiment"]["sample_eps"] = 0.0
    cfg0 = write_config(tmp_path, data, "zero.json")
    out3 = tmp_path / "c"
    assert main(["--config", cfg0, "--out", str(out3), "sample-field"]) == 0
    _, rows, _ = read_csv(out3 / "field_samples.csv")
    for row in rows:
        assert float(row[2]) == 0.0 and float(row[3]) == 0.0


def test_sample_statistics_match_covariance_diagonal(tmp_path):
    # nodal variance of many draws agrees with the dense covariance diagonal
    from riskquad.fem import build_mesh
    from riskquad.random_field import field_on_mesh, volume_space

    mesh = build_mesh(3, 2, 2.0, 1.0)
    space = volume_space(mesh)
    gf = field_on_mesh(mesh, 2e-2, 4.0, space=space)
    draws = gf.sample_batch(10_000, seed=0) - gf.mean[:, None]
    A = (gf.kappa * space.natural_stiffness + gf.alpha * space.mass).toarray()
    Ainv = np.linalg.inv(A)
    diag = np.diag(Ainv @ space.mass.toarray() @ Ainv)
    emp = draws.var(axis=1, ddof=1)
    se = diag * np.sqrt(2.0 / (draws.shape[1] - 1))
    assert np.all(np.abs(emp - diag) <= 5.0 * se)


def test_optimize_outputs_and_descent(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out", str(out), "optimize"]) == 0
    for name in (
        "iterates.csv", "optimal_control.csv", "risk_report.txt",
        "true_risk_initial.csv", "true_risk_optimal.csv",
    ):
        assert (out / name).exists()
    header, rows, _ = read_csv(out / "iterates.csv")
    assert header == [
        "beta", "iter", "J", "grad_norm", "pde_solves_cumulative",
        "active_bounds_count",
    ]
    by_beta = {}
    for row in rows:
        by_beta.setdefault(row[0], []).append(float(row[2]))
    for values in by_beta.values():
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
    header, rows, _ = read_csv(out / "true_risk_initial.csv")
    assert header == ["theta", "theta_lin", "theta_quad"]
    assert len(rows) == TINY["experiment"]["true_risk_samples"]


def test_optimize_deterministic_output(tmp_path):
    cfg = write_config(tmp_path)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["--config", cfg, "--out", str(out1), "optimize"]) == 0
    assert main(["--config", cfg, "--out", str(out2), "optimize"]) == 0
    for name in ("iterates.csv", "optimal_control.csv", "true_risk_optimal.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_compare_mc_structure(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out", str(out), "compare-mc"]) == 0
    header, rows, _ = read_csv(out / "compare_mc.csv")
    assert header == [
        "method", "beta", "work_level", "pde_solves_per_eval",
        "true_objective", "mc_standard_error",
    ]
    methods = [r[0] for r in rows]
    assert methods == ["quad_randomized", "quad_eigenbasis", "saa"]
    assert [r[3] for r in rows] == ["12", "12", "6"]


def test_compare_mc_single_method_single_level(tmp_path):
    data = json.loads(json.dumps(TINY))
    data["experiment"]["compare_methods"] = ["quad_randomized"]
    data["experiment"]["compare_n_tr"] = [2]
    cfg = write_config(tmp_path, data)
    out = tmp_path / "out"
    assert main(["--config", cfg, "--out", str(out), "compare-mc"]) == 0
    _, rows, _ = read_csv(out / "compare_mc.csv")
    assert len(rows) == 1


def test_check_derivatives_passes(tmp_path):
    assert main(["--out", str(tmp_path), "check-derivatives"]) == 0


def test_outdir_env_var(tmp_path, monkeypatch):
    from riskquad.cli import OUTDIR_ENV

    monkeypatch.setenv(OUTDIR_ENV, str(tmp_path / "envout"))
    cfg = write_config(tmp_path)
    assert main(["--config", cfg, "sample-field"]) == 0
    assert (tmp_path / "envout" / "field_samples.csv").exists()


def test_profiles_cover_known_names():
    assert set(PROFILES) == {"paper_section6", "desk"}
    assert isinstance(resolve_config("desk"), RunConfig)
