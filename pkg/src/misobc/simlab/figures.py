"""Reproduction pipelines for the nine result figures.

Parameters are frozen in the TOML presets shipped with the package. Each
figure writes one CSV per curve plus a gnuplot script that draws them, so
graphics are produced outside this package.
"""
from __future__ import annotations

import csv
import math
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from ..channel import SystemConfig, draw_pathloss_gains
from ..det_equiv import gamma_zf_general
from ..optimize import (
    RateGapSpec,
    TddConfig,
    beta_star_iid,
    feedback_bits,
    k_star_general,
    tdd_joint_opt,
    tdd_rate,
    tdd_train_opt,
)
from ..precoders import PrecoderKind
from .config import ExperimentSpec, TauModel, parse_correlation, parse_pathloss, spec_from_dict, tomllib
from .runner import monte_carlo_sum_rate, write_csv

FIGURES = tuple(f"fig{i}" for i in range(1, 10))
SCALES = {"desk": 1000, "paper": 10_000}


def load_preset(name: str) -> dict:
    if name not in FIGURES:
        raise ValueError(f"unknown figure {name!r}; expected one of {', '.join(FIGURES)}")
    text = resources.files("misobc.simlab").joinpath("presets", f"{name}.toml").read_text()
    return tomllib.loads(text)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["nan" if isinstance(v, float) and math.isnan(v) else v for v in r])


def _gnuplot(name: str, ylabel: str, series, xlabel: str = "SNR [dB]") -> str:
    """`series` holds ``(csv file, x col, y col, err col or None, title)`` with 1-based columns."""
    lines = [f"# gnuplot script for {name}; run with: gnuplot -p {name}.gp",
             "set datafile separator ','",
             "set datafile commentschars '#'",
             f"set xlabel '{xlabel}'",
             f"set ylabel '{ylabel}'",
             "set key left top",
             "set grid"]
    parts = []
    for fname, x, y, err, title in series:
        if err is None:
            parts.append(f"'{fname}' every ::1 using {x}:{y} with linespoints title '{title}'")
        else:
            parts.append(f"'{fname}' every ::1 using {x}:{y}:{err} with yerrorbars pt 6 title '{title} (MC)'")
    lines.append("plot " + ", \\\n     ".join(parts))
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ MC curves

def _mc_figure(name, doc, trials, seed, out: Path, threads):
    series, files = [], []
    for i, cdoc in enumerate(doc["curve"]):
        label = cdoc.get("label", f"curve{i}")
        spec = spec_from_dict(cdoc, prefix=f"curve[{i}].", seed=seed, trials=trials)
        recs = monte_carlo_sum_rate(spec, threads=threads)
        fname = f"{name}_{label}.csv"
        write_csv(recs, out / fname)
        files.append(out / fname)
        series.append((fname, 1, 6, 7, label))
        series.append((fname, 1, 8, None, f"{label} (DE)"))
    return files, _gnuplot(name, "sum rate [bits/s/Hz]", series)


# ------------------------------------------------------------------ analytic curves

def _bits_figure(name, doc, out: Path):
    p = doc["params"]
    M, beta, b = int(p["M"]), float(p["beta"]), float(p["b"])
    files, series = [], []
    for scheme in p["schemes"]:
        rows = []
        for snr in p["snr_db"]:
            fb = feedback_bits(RateGapSpec(b, 10.0 ** (snr / 10.0), beta, scheme), M)
            rows.append([snr, M, beta, b, scheme, fb.phi, fb.real, fb.integer])
        fname = f"{name}_{scheme}.csv"
        _write_rows(out / fname, ["snr_db", "M", "beta", "b", "scheme", "phi", "bits_real", "bits"], rows)
        files.append(out / fname)
        series.append((fname, 1, 8, None, scheme))
    return files, _gnuplot(name, "feedback bits per user", series)


def _scenario(p, scen, M, rng):
    """Correlation spectrum and pooled gain samples for the user-count figures."""
    if scen == "iid":
        return parse_correlation("identity"), parse_pathloss("equal"), None, np.ones(1)
    corr, pl = parse_correlation(p["correlation"]), parse_pathloss(p["pathloss"])
    n = int(p.get("gain_samples", 4000))
    blocks = [draw_pathloss_gains(M, pl, rng) for _ in range(max(1, n // M))]
    return corr, pl, np.linalg.eigvalsh(corr.matrix(M)), np.concatenate(blocks)


def _lambert_k(M, rho, tau2):
    return int(min(M - 1, max(1, round(M / beta_star_iid(rho, tau2)))))


def _zf_spec(M, K, corr, pl, tau2, snr_grid, trials, seed):
    cfg = SystemConfig(M=M, K=K, snr_db=snr_grid[0], tau=math.sqrt(tau2), correlation=corr, pathloss=pl)
    return ExperimentSpec(cfg, PrecoderKind("zf"), tuple(snr_grid), trials, seed, TauModel("fixed", (tau2,)))


def _kstar_figure(name, doc, trials, seed, out: Path, threads):
    p = doc["params"]
    tau2 = float(p["tau2"])
    grid = [float(s) for s in p["snr_db"]]
    files, series = [], []
    for M in p["M"]:
        M = int(M)
        for scen in p["scenarios"]:
            rng = np.random.default_rng(np.random.SeedSequence([seed, M, len(scen)]))
            corr, pl, lam, lsamp = _scenario(p, scen, M, rng)
            mc = np.empty((M - 1, len(grid)))
            for K in range(1, M):
                recs = monte_carlo_sum_rate(_zf_spec(M, K, corr, pl, tau2, grid, trials, seed), threads)
                mc[K - 1] = [r.mc_mean_sum_rate for r in recs]
            rows = []
            for j, snr in enumerate(grid):
                rho = 10.0 ** (snr / 10.0)
                k_de = k_star_general(M, rho, tau2, lam, lsamp).x
                rows.append([snr, M, tau2, scen, _lambert_k(M, rho, tau2), k_de,
                             int(np.argmax(mc[:, j])) + 1])
            fname = f"{name}_M{M}_{scen}.csv"
            _write_rows(out / fname, ["snr_db", "M", "tau2", "scenario", "k_lambert", "k_de", "k_mc"], rows)
            files.append(out / fname)
            series += [(fname, 1, 5, None, f"M={M} {scen} Lambert-W"),
                       (fname, 1, 6, None, f"M={M} {scen} DE"),
                       (fname, 1, 7, None, f"M={M} {scen} MC")]
    return files, _gnuplot(name, "number of active users", series)


def _kfixed_figure(name, doc, trials, seed, out: Path, threads):
    p = doc["params"]
    M, tau2 = int(p["M"]), float(p["tau2"])
    grid = [float(s) for s in p["snr_db"]]
    header = ["snr_db", "M", "K", "scenario", "curve", "de_sum_rate", "mc_mean_sum_rate", "mc_std_sum_rate"]
    files, series = [], []
    for scen in p["scenarios"]:
        rng = np.random.default_rng(np.random.SeedSequence([seed, M, len(scen)]))
        corr, pl, lam, lsamp = _scenario(p, scen, M, rng)
        lam_eval = np.ones(1) if lam is None else lam
        curves = {f"K{K}": [K] * len(grid) for K in p["fixed_K"]}
        curves["K_de"] = [k_star_general(M, 10.0 ** (s / 10.0), tau2, lam, lsamp).x for s in grid]
        for cname, ks in curves.items():
            rows = []
            for j, (snr, K) in enumerate(zip(grid, ks)):
                rho = 10.0 ** (snr / 10.0)
                de = gamma_zf_general(lam_eval, lsamp, math.sqrt(tau2), rho, M / K)
                de_rate = K * float(np.mean(np.log2(1.0 + de.gamma)))
                rec = monte_carlo_sum_rate(_zf_spec(M, K, corr, pl, tau2, [snr], trials, seed), threads)[0]
                rows.append([snr, M, K, scen, cname, de_rate, rec.mc_mean_sum_rate, rec.mc_std_sum_rate])
            fname = f"{name}_{scen}_{cname}.csv"
            _write_rows(out / fname, header, rows)
            files.append(out / fname)
            series += [(fname, 1, 7, 8, f"{scen} {cname}"), (fname, 1, 6, None, f"{scen} {cname} (DE)")]
    return files, _gnuplot(name, "sum rate [bits/s/Hz]", series)


def _tdd_train_figure(name, doc, out: Path):
    p = doc["params"]
    files, series = [], []
    for T in p["T"]:
        for scheme in p["schemes"]:
            cfg = TddConfig(T=float(T), K=int(p["K"]), M=int(p["M"]), scheme=scheme,
                            ul_dl_ratio=float(p["ul_dl_ratio"]))
            rows = []
            for snr in p["snr_db"]:
                res = tdd_train_opt(cfg, 10.0 ** (snr / 10.0))
                rows.append([snr, cfg.M, cfg.K, T, scheme, res.x, res.x / T, res.objective])
            fname = f"{name}_T{T}_{scheme}.csv"
            _write_rows(out / fname, ["snr_db", "M", "K", "T", "scheme", "T_t", "T_t_over_T", "sum_rate"], rows)
            files.append(out / fname)
            series.append((fname, 1, 7, None, f"T={T} {scheme}"))
    return files, _gnuplot(name, "T_t / T", series, xlabel="downlink SNR [dB]")


def _tdd_joint_figure(name, doc, out: Path):
    p = doc["params"]
    files, series = [], []
    header = ["snr_db", "M", "T", "mode", "K", "T_t", "sum_rate"]
    for T in p["T"]:
        cfg = TddConfig(T=float(T), K=int(p["K"]), M=int(p["M"]), scheme="zf",
                        ul_dl_ratio=float(p["ul_dl_ratio"]))
        fixed, joint = [], []
        for snr in p["snr_db"]:
            rho = 10.0 ** (snr / 10.0)
            f = tdd_train_opt(cfg, rho)
            fixed.append([snr, cfg.M, T, "fixed_K", cfg.K, f.x, f.objective])
            j = tdd_joint_opt(cfg, rho)
            joint.append([snr, cfg.M, T, "joint", j.K, j.x, tdd_rate(cfg, j.x, rho, j.K)])
        for mode, rows in (("fixed_K", fixed), ("joint", joint)):
            fname = f"{name}_T{T}_{mode}.csv"
            _write_rows(out / fname, header, rows)
            files.append(out / fname)
            series.append((fname, 1, 7, None, f"T={T} {mode}"))
    return files, _gnuplot(name, "normalized sum rate [bits/s/Hz]", series, xlabel="downlink SNR [dB]")


def reproduce_figure(name: str, scale: str = "desk", seed: int = 0, out=".",
                     trials: Optional[int] = None, threads: Optional[int] = None) -> list:
    """Write the CSVs and the gnuplot script of figure `name` into `out`.

    `trials` overrides the trial count implied by `scale`. Returns the paths
    written, the plot script last.
    """
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {tuple(SCALES)}")
    doc = load_preset(name)
    n = SCALES[scale] if trials is None else int(trials)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    kind = doc["figure"]["kind"]
    if kind == "mc":
        files, script = _mc_figure(name, doc, n, seed, out, threads)
    elif kind == "bits":
        files, script = _bits_figure(name, doc, out)
    elif kind == "kstar":
        files, script = _kstar_figure(name, doc, n, seed, out, threads)
    elif kind == "kfixed":
        files, script = _kfixed_figure(name, doc, n, seed, out, threads)
    elif kind == "tdd_train":
        files, script = _tdd_train_figure(name, doc, out)
    elif kind == "tdd_joint":
        files, script = _tdd_joint_figure(name, doc, out)
    else:
        raise ValueError(f"preset {name} has unknown kind {kind!r}")
    gp = out / f"{name}.gp"
    gp.write_text(script)
    return [*files, gp]
