import json

import numpy as np
import pytest

from copula_vi.cli import parse_families, run
from copula_vi.bicop import FamilyTag as F, Rotation as R
from copula_vi.dist import CopulaVariationalDist
from copula_vi.io import ConfigError, PosteriorFile, config_from_dict, load_vine, read_csv, save_vine, write_csv
from copula_vi.marginal import MarginalSet
from copula_vi.vine import dvine

from conftest import four_variable_vine, mixed_pcs

FAST_CFG = {"m": 64, "inner_max_iters": 80, "m_eval": 4000, "outer_max_phases": 4, "seed": 3}


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(FAST_CFG))
    return str(p)


@pytest.fixture
def gauss_model(tmp_path):
    p = tmp_path / "gauss.json"
    p.write_text(json.dumps({"kind": "gaussian", "mean": [1.0, -1.0], "cov": [[1.0, 0.6], [0.6, 2.0]]}))
    return str(p)


def test_posterior_round_trip_is_byte_identical(tmp_path):
    dist = CopulaVariationalDist(MarginalSet.gaussian([0.1, 1 / 3, -2.0, 1e-17], [0.0, 0.7, -0.2, 0.1]),
                                 four_variable_vine(mixed_pcs()))
    post = PosteriorFile(dist, {"elbo": -1.2345678901234567, "seed": 4, "phases": 3})
    path = tmp_path / "post.json"
    post.save(path)
    back = PosteriorFile.load(path)
    assert back.dumps() == path.read_text()
    assert back.dist.marginals == dist.marginals and back.dist.vine == dist.vine
    np.testing.assert_array_equal(back.dist.log_q(np.zeros((1, 4))), dist.log_q(np.zeros((1, 4))))


def test_posterior_rejects_unknown_version():
    data = PosteriorFile(CopulaVariationalDist.mean_field([0.0])).to_dict()
    data["version"] = "other/9"
    with pytest.raises(ConfigError, match="version"):
        PosteriorFile.from_dict(data)


def test_vine_and_csv_round_trip(tmp_path):
    v = four_variable_vine(mixed_pcs())
    save_vine(v, tmp_path / "v.json")
    assert load_vine(tmp_path / "v.json") == v
    rows = np.random.default_rng(0).normal(size=(5, 3))
    write_csv(tmp_path / "t.csv", ["a", "b", "c"], rows)
    header, back = read_csv(tmp_path / "t.csv")
    assert header == ["a", "b", "c"]
    np.testing.assert_array_equal(back, rows)


@pytest.mark.parametrize("data,path", [
    ({"m": "ten"}, "config.m: expected int, got str"),
    ({"inner_tol": True}, "config.inner_tol: expected float"),
    ({"step_rule": {"kind": "adam", "alpha": "x"}}, "config.step_rule.alpha"),
    ({"step_rule": {"kind": "nesterov"}}, "config.step_rule.kind"),
    ({"step_rule": {"kind": "robbins_monro", "gamma": 2.0}}, "config.step_rule"),
    ({"mystery": 1}, "config.mystery: unknown field"),
])
def test_config_errors_name_field_path(data, path):
    with pytest.raises(ConfigError, match=path.replace(".", r"\.")):
        config_from_dict(data)


def test_config_accepts_int_for_float():
    cfg = config_from_dict({"inner_tol": 1, "step_rule": {"kind": "robbins_monro", "a": 1, "gamma": 0.7}})
    assert cfg.inner_tol == 1 and cfg.step_rule.gamma == 0.7


def test_parse_families():
    assert len(parse_families("all16")) == 15
    assert parse_families("gaussian, clayton90") == [(F.GAUSSIAN, R.R0), (F.CLAYTON, R.R90)]


def test_cli_usage_errors(tmp_path, capsys):
    assert run(["bogus"]) == 2
    assert run(["fit", "--model", "nope", "--out", str(tmp_path / "x.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"m": "ten"}))
    assert run(["fit", "--model", "gauss2d", "--config", str(bad), "--out", str(tmp_path / "x.json")]) == 2
    assert "config.m: expected int, got str" in capsys.readouterr().err


def test_cli_fit_sample_elbo_check_grad(tmp_path, cfg_file, gauss_model, capsys):
    out = tmp_path / "post.json"
    trace = tmp_path / "trace.csv"
    assert run(["fit", "--model", gauss_model, "--config", cfg_file, "--out", str(out), "--trace", str(trace)]) == 0
    post = PosteriorFile.load(out)
    assert post.meta["phases"] >= 2 and post.dist.n_eta == 1
    assert trace.read_text().splitlines()[0] == "phase,kind,iters,elbo_before,elbo_after,seconds"
    capsys.readouterr()

    args = ["elbo", "--dist", str(out), "--model", gauss_model, "-m", "20000", "--seed", "7"]
    assert run(args) == 0
    first = capsys.readouterr().out
    assert run(args) == 0
    assert capsys.readouterr().out == first

    samples = tmp_path / "s.csv"
    assert run(["sample", "--dist", str(out), "-n", "3", "--seed", "1", "--out", str(samples)]) == 0
    header, z = read_csv(samples)
    assert header == ["z_0", "z_1"] and z.shape == (3, 2) and np.all(np.isfinite(z))

    assert run(["check-grad", "--dist", str(out), "--model", gauss_model, "-m", "512"]) == 0
    table = capsys.readouterr().out
    assert "reparam" in table and "eta[0]" in table


def test_cli_sample_independence_posterior(tmp_path, capsys):
    path = tmp_path / "ind.json"
    PosteriorFile(CopulaVariationalDist.mean_field([0.0, 1.0, 2.0])).save(path)
    assert run(["sample", "--dist", str(path), "-n", "3", "--seed", "1"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 4
    assert all(len(l.split(",")) == 3 for l in lines)


def test_cli_select(tmp_path, capsys):
    from copula_vi.sampler import compile_program, run_copula, uniforms

    v = four_variable_vine(mixed_pcs())
    u, *_ = run_copula(v, compile_program(v), uniforms(0, 600, 4))
    write_csv(tmp_path / "s.csv", ["a", "b", "c", "d"], u)
    assert run(["select", "--samples", str(tmp_path / "s.csv"), "--families", "gaussian,frank,clayton90",
                "--truncation", "2", "--out", str(tmp_path / "v.json")]) == 0
    got = load_vine(tmp_path / "v.json")
    assert got.truncation == 2 and got.d == 4


def test_cli_fit_auto_vine(tmp_path, cfg_file):
    model = tmp_path / "g3.json"
    model.write_text(json.dumps({"kind": "gaussian", "mean": [0, 0, 0],
                                 "cov": [[1, 0.7, 0.3], [0.7, 1, 0.4], [0.3, 0.4, 1]]}))
    out = tmp_path / "post.json"
    assert run(["fit", "--model", str(model), "--vine", "auto", "--config", cfg_file, "--auto-samples", "500",
                "--out", str(out)]) == 0
    assert PosteriorFile.load(out).dist.vine.truncation == 2


def test_cli_demo_figure1(tmp_path, cfg_file, capsys):
    outdir = tmp_path / "fig"
    assert run(["demo-figure1", "--outdir", str(outdir), "--config", cfg_file, "--grid", "61"]) == 0
    kls = [float(line.split("KL=")[1]) for line in capsys.readouterr().out.splitlines() if "KL=" in line]
    assert len(kls) == 4
    assert all(b < a for a, b in zip(kls, kls[1:]))
    panels = [read_csv(outdir / f"panel{k}.csv") for k in range(1, 5)]
    assert all(h == ["z1", "z2", "q", "p"] for h, _ in panels)

    def corr(data):
        w = data[:, 2] / data[:, 2].sum()
        m = w @ data[:, :2]
        c = (data[:, :2] - m).T @ ((data[:, :2] - m) * w[:, None])
        return c[0, 1] / np.sqrt(c[0, 0] * c[1, 1])

    assert abs(corr(panels[0][1])) < 1e-6
    assert corr(panels[1][1]) > 0.3
