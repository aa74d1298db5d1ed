import math
import os
from pathlib import Path

import numpy as np
import pytest

from misobc.channel import CorrelationSpec, PathLossSpec, SystemConfig, rvq_distortion
from misobc.errors import ConfigError, SingularChannel
from misobc.precoders import PrecoderKind, exact_sinr, sum_rate
from misobc.simlab import cli, figures, runner
from misobc.simlab.config import ExperimentSpec, TauModel, load_config, parse_tau_model, spec_from_dict
from misobc.simlab.runner import CSV_COLUMNS, monte_carlo_sum_rate, read_csv, write_csv

GOLDEN = Path(__file__).parent / "golden"


def _spec(M=8, K=4, kind="orzf", tau2=0.1, grid=(0.0, 10.0), trials=30, seed=5, **kw):
    cfg = SystemConfig(M=M, K=K, snr_db=grid[0], tau=math.sqrt(tau2), **kw)
    return ExperimentSpec(cfg, PrecoderKind(kind), grid, trials, seed, TauModel("fixed", (tau2,)))


def _write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


MINIMAL = """
[system]
M = 8
K = 4
snr_db = 10.0
tau = "fixed:0"
[precoder]
kind = "zf"
[mc]
trials = 10
seed = 3
[output]
csv = "{csv}"
"""


# ------------------------------------------------------------- reproducibility

def test_single_trial_rerun_identical():
    a = monte_carlo_sum_rate(_spec(trials=1), threads=1)
    b = monte_carlo_sum_rate(_spec(trials=1), threads=1)
    assert a == b


@pytest.mark.parametrize("kind", ["orzf", "zf"])
def test_thread_count_does_not_change_results(kind):
    spec = _spec(kind=kind, trials=40, pathloss=PathLossSpec("cost231_disk"),
                 correlation=CorrelationSpec("jakes_uca", 0.5))
    one = monte_carlo_sum_rate(spec, threads=1)
    many = monte_carlo_sum_rate(spec, threads=4)
    assert one == many  # dataclass equality compares every float bitwise


def test_env_thread_override(monkeypatch):
    monkeypatch.setenv("SIMLAB_THREADS", "3")
    assert runner.worker_count() == 3
    monkeypatch.delenv("SIMLAB_THREADS")
    assert runner.worker_count() == (os.cpu_count() or 1)


def test_different_seeds_differ():
    a = monte_carlo_sum_rate(_spec(seed=1), threads=1)
    b = monte_carlo_sum_rate(_spec(seed=2), threads=1)
    assert a[0].mc_mean_sum_rate != b[0].mc_mean_sum_rate


# ------------------------------------------------------------- oracles

def test_single_trial_matches_hand_computation():
    seed = 77
    spec = _spec(M=4, K=2, kind="zf", tau2=0.0, grid=(10.0,), trials=1, seed=seed)
    rec = monte_carlo_sum_rate(spec, threads=1)[0]

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0, 0]))
    s = math.sqrt(1.0 / 8.0)
    X = s * (rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4)))
    F = X.conj().T @ np.linalg.inv(X @ X.conj().T)
    G = F * math.sqrt(1.0 / np.sum(np.abs(F) ** 2))
    assert np.sum(np.abs(G) ** 2) == pytest.approx(1.0, rel=1e-12)
    gam = exact_sinr(X, G, sigma2=0.1)
    assert rec.mc_mean_sum_rate == pytest.approx(sum_rate(gam), rel=1e-10)
    assert rec.mc_std_sum_rate == 0.0
    assert rec.trials == 1


def test_de_within_two_std_orzf_m32():
    spec = _spec(M=32, K=32, kind="orzf", tau2=0.1, grid=tuple(range(0, 31, 5)), trials=1000, seed=11)
    for r in monte_carlo_sum_rate(spec, threads=1):
        assert abs(r.de_sum_rate - r.mc_mean_sum_rate) <= 2 * r.mc_std_sum_rate


def test_std_of_mean_scales_inverse_sqrt_trials():
    def sem(n):
        r = monte_carlo_sum_rate(_spec(M=8, K=8, tau2=0.1, grid=(10.0,), trials=n, seed=9), threads=1)[0]
        return r.mc_std_sum_rate / math.sqrt(n)
    ratio = sem(250) / sem(4000)
    assert ratio == pytest.approx(4.0, rel=0.25)


def test_zf_square_de_is_nan():
    r = monte_carlo_sum_rate(_spec(M=4, K=4, kind="zf", tau2=0.0, grid=(10.0,), trials=5), threads=1)[0]
    assert math.isnan(r.de_sum_rate)
    assert math.isfinite(r.mc_mean_sum_rate)


def test_orzf_iid_uses_closed_form_alpha():
    from misobc.optimize import alpha_star_closed_form
    r = monte_carlo_sum_rate(_spec(M=8, K=4, tau2=0.1, grid=(10.0,), trials=2), threads=1)[0]
    assert r.alpha == alpha_star_closed_form(10.0, 0.1, 2.0)


def test_singular_draws_are_resampled(monkeypatch):
    calls = {"n": 0}
    real = runner.precode

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] <= 3:
            raise SingularChannel("forced")
        return real(*a, **k)

    monkeypatch.setattr(runner, "precode", flaky)
    r = monte_carlo_sum_rate(_spec(kind="zf", grid=(10.0,), trials=2), threads=1)[0]
    assert r.singular_resamples == 3
    assert r.dropped_trials == 0
    assert r.trials == 2


def test_persistently_singular_trial_is_dropped(monkeypatch):
    def always(*a, **k):
        raise SingularChannel("forced")

    monkeypatch.setattr(runner, "precode", always)
    r = monte_carlo_sum_rate(_spec(kind="zf", grid=(10.0,), trials=3), threads=1)[0]
    assert r.dropped_trials == 3
    assert r.singular_resamples == 3 * runner.MAX_RESAMPLES
    assert math.isnan(r.mc_mean_sum_rate)


# ------------------------------------------------------------- config

def test_tau_models():
    assert parse_tau_model("fixed:0.25").tau2(8, 4, 10.0) == 0.25
    assert parse_tau_model("rvq:7").tau2(8, 4, 10.0) == rvq_distortion(7, 8)
    assert parse_tau_model("training:10,1").tau2(8, 4, 10.0) == pytest.approx(1 / 11)
    t = parse_tau_model("offset:2").tau2(10, 10, 100.0)
    assert 0 < t < 1


@pytest.mark.parametrize("text", ["fixed:1.5", "fixed:-0.1", "rvq:", "training:3", "gauss:1", "fixed:x"])
def test_tau_model_rejects(text):
    with pytest.raises(ConfigError) as ei:
        parse_tau_model(text)
    assert ei.value.field == "system.tau"


def test_config_tau2_above_one_names_field(tmp_path):
    p = _write(tmp_path, MINIMAL.format(csv="x.csv").replace('"fixed:0"', '"fixed:1.5"'))
    with pytest.raises(ConfigError) as ei:
        load_config(p)
    assert ei.value.field == "system.tau"


def test_config_zf_with_more_users_than_antennas(tmp_path, monkeypatch):
    p = _write(tmp_path, MINIMAL.format(csv="x.csv").replace("K = 4", "K = 9"))
    monkeypatch.setattr(runner, "monte_carlo_sum_rate", lambda *a, **k: pytest.fail("ran"))
    with pytest.raises(ConfigError) as ei:
        load_config(p)
    assert ei.value.field == "system.K"
    assert cli.main(["run", str(p)]) == 1


@pytest.mark.parametrize("patch,field", [
    (("[mc]\ntrials = 10", "[mc]\ntrials = 0"), "mc.trials"),
    (("snr_db = 10.0", "snr_db = [10.0, 5.0]"), "system.snr_db"),
    (("snr_db = 10.0", "snr_db = []"), "system.snr_db"),
    (("M = 8", "M = 8.5"), "system.M"),
    (('kind = "zf"', 'kind = "dpc"'), "precoder.kind"),
    (("[precoder]", "[extras]\nx = 1\n[precoder]"), "extras"),
])
def test_config_field_errors(tmp_path, patch, field):
    p = _write(tmp_path, MINIMAL.format(csv="x.csv").replace(*patch))
    with pytest.raises(ConfigError) as ei:
        load_config(p)
    assert ei.value.field == field


def test_config_correlation_and_pathloss_parse():
    doc = {"system": {"M": 6, "K": 3, "snr_db": [0.0], "tau": "rvq:10"},
           "correlation": {"model": "jakes_uca:0.4"}, "pathloss": {"model": "cost231:400,20"},
           "precoder": {"kind": "rzf", "alpha": 0.3}, "mc": {"trials": 2, "seed": 1}}
    spec = spec_from_dict(doc)
    assert spec.config.correlation == CorrelationSpec("jakes_uca", 0.4)
    assert spec.config.pathloss == PathLossSpec("cost231_disk", 400.0, 20.0)
    assert spec.precoder.alpha == 0.3
    bad = dict(doc, pathloss={"model": "cost231:10,20"})
    with pytest.raises(ConfigError) as ei:
        spec_from_dict(bad)
    assert ei.value.field == "pathloss.model"


def test_malformed_toml(tmp_path):
    p = _write(tmp_path, "[system\nM=")
    with pytest.raises(ConfigError):
        load_config(p)


# ------------------------------------------------------------- CLI and CSV

def test_cli_minimal_run(tmp_path, capsys):
    csv_path = tmp_path / "out.csv"
    p = _write(tmp_path, MINIMAL.format(csv=csv_path.as_posix()))
    assert cli.main(["run", str(p)]) == 0
    rows = read_csv(csv_path)
    assert len(rows) == 1
    assert tuple(rows[0]) == CSV_COLUMNS
    assert "mc_mean" in capsys.readouterr().out


def test_csv_header_order(tmp_path):
    recs = monte_carlo_sum_rate(_spec(trials=2), threads=1)
    write_csv(recs, tmp_path / "a.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0].startswith("#")
    assert lines[1] == ",".join(CSV_COLUMNS)


def test_golden_csv(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    spec = load_config(GOLDEN / "small_orzf.toml")
    write_csv(monte_carlo_sum_rate(spec, threads=2), tmp_path / "new.csv")
    old_text = (GOLDEN / "small_orzf.csv").read_text().splitlines()
    new_text = (tmp_path / "new.csv").read_text().splitlines()
    assert new_text[:2] == old_text[:2]
    old, new = read_csv(GOLDEN / "small_orzf.csv"), read_csv(tmp_path / "new.csv")
    assert len(old) == len(new)
    for a, b in zip(old, new):
        for col in CSV_COLUMNS:
            if col in ("precoder", "M", "K", "trials", "seed"):
                assert a[col] == b[col]
            else:
                assert float(b[col]) == pytest.approx(float(a[col]), rel=1e-9)


@pytest.mark.parametrize("argv,keys", [
    (["alpha", "snr_db=10", "tau2=0", "beta=2"], {"alpha_star": 0.05}),
    (["beta", "rho=10", "tau2=0.1", "M=32"], {}),
    (["bits", "snr_db=20", "b=2", "beta=1", "M=10"], {}),
    (["bits", "rho=1e6", "b=2", "beta=1", "M=10", "scheme=zf", "high_snr=1"], {"phi": 1.0}),
    (["tdd", "snr_db=60", "T=100", "K=16", "M=32"], {"T_t": 16.0}),
    (["tdd", "snr_db=10", "T=100", "K=16", "M=32", "joint=1"], {}),
])
def test_cli_solve(capsys, argv, keys):
    assert cli.main(["solve", *argv]) == 0
    out = dict(line.split("=", 1) for line in capsys.readouterr().out.strip().splitlines())
    for k, v in keys.items():
        assert float(out[k]) == pytest.approx(v, rel=1e-9)


def test_cli_solve_errors(capsys):
    assert cli.main(["solve", "alpha", "tau2=0.1"]) == 1
    assert cli.main(["solve", "alpha", "oops"]) == 1
    assert "error" in capsys.readouterr().err


# ------------------------------------------------------------- figures

def test_every_preset_loads():
    for name in figures.FIGURES:
        doc = figures.load_preset(name)
        assert doc["figure"]["name"] == name
        for i, c in enumerate(doc.get("curve", [])):
            spec_from_dict(c, prefix=f"curve[{i}].", trials=1)


def test_unknown_figure():
    with pytest.raises(ValueError):
        figures.load_preset("fig10")


def test_fig8_shape(tmp_path):
    paths = figures.reproduce_figure("fig8", out=tmp_path)
    assert paths[-1].suffix == ".gp"
    for T in (100, 1000):
        z = read_csv(tmp_path / f"fig8_T{T}_zf.csv")
        o = read_csv(tmp_path / f"fig8_T{T}_orzf.csv")
        rz = [float(r["T_t_over_T"]) for r in z]
        ro = [float(r["T_t_over_T"]) for r in o]
        assert all(a >= b - 1e-9 for a, b in zip(rz, rz[1:]))
        assert all(a >= b - 1e-9 for a, b in zip(ro, ro[1:]))
        assert min(rz + ro) >= 16 / T - 1e-12
        assert all(b <= a + 1e-6 for a, b in zip(rz, ro))
    assert float(read_csv(tmp_path / "fig8_T100_zf.csv")[-1]["T_t"]) == 16


def test_fig5_and_fig9_write(tmp_path):
    figures.reproduce_figure("fig5", out=tmp_path)
    rows = read_csv(tmp_path / "fig5_orzf.csv")
    bits = [int(r["bits"]) for r in rows]
    assert all(b >= 1 for b in bits) and bits == sorted(bits)
    figures.reproduce_figure("fig9", out=tmp_path)
    for T in (100, 1000):
        fixed = read_csv(tmp_path / f"fig9_T{T}_fixed_K.csv")
        joint = read_csv(tmp_path / f"fig9_T{T}_joint.csv")
        for a, b in zip(fixed, joint):
            assert float(b["sum_rate"]) >= float(a["sum_rate"]) - 1e-9


def test_fig3_cdu_approaches_zf(tmp_path):
    figures.reproduce_figure("fig3", out=tmp_path, trials=300, seed=2)
    get = lambda k: [float(r["mc_mean_sum_rate"]) for r in read_csv(tmp_path / f"fig3_{k}.csv")]  # noqa: E731
    orzf, cdu, zf = get("orzf"), get("rzf_cdu"), get("zf")
    gap = [c - z for c, z in zip(cdu, zf)]
    assert gap[-1] < gap[4]  # shrinking past 20 dB
    assert gap[-1] < 0.25 * (orzf[-1] - zf[-1])


@pytest.mark.slow
@pytest.mark.parametrize("name", ["fig6", "fig7"])
def test_user_count_figures_smoke(tmp_path, name):
    paths = figures.reproduce_figure(name, out=tmp_path, trials=3)
    assert all(p.exists() for p in paths)
    for p in paths[:-1]:
        rows = read_csv(p)
        assert len(rows) == 7
