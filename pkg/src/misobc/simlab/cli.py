"""Command line entry point ``simlab``.

    simlab run CONFIG.toml
    simlab figure fig3 --scale desk --seed 1 --out results/
    simlab solve alpha snr_db=20 tau2=0.1 beta=1
"""
from __future__ import annotations

import argparse
import math
import sys

from ..errors import MisobcError
from . import figures
from .config import load_config
from .runner import monte_carlo_sum_rate, summary_table, write_csv

_SOLVE_KEYS = {
    "alpha": "rho|snr_db, tau2, beta",
    "beta": "rho|snr_db, tau2 [, M]",
    "bits": "rho|snr_db, b, beta, M [, scheme=orzf|rzf_cdu|zf] [, high_snr=1]",
    "tdd": "rho|snr_db, T, K, M [, scheme=zf|orzf] [, ul_dl_ratio=0.1] [, joint=1]",
}


def _params(items) -> dict:
    out = {}
    for it in items:
        key, sep, val = it.partition("=")
        if not sep or not key:
            raise ValueError(f"expected key=value, got {it!r}")
        out[key.strip()] = val.strip()
    return out


def _num(p, key, default=None):
    if key not in p:
        if default is None:
            raise ValueError(f"missing parameter {key}")
        return default
    return float(p[key])


def _rho(p) -> float:
    if "rho" in p:
        return float(p["rho"])
    if "snr_db" in p:
        return 10.0 ** (float(p["snr_db"]) / 10.0)
    raise ValueError("give rho (linear) or snr_db")


def solve(what: str, p: dict) -> dict:
    from .. import optimize as opt

    rho = _rho(p)
    if what == "alpha":
        tau2, beta = _num(p, "tau2"), _num(p, "beta")
        return {"alpha_star": opt.alpha_star_closed_form(rho, tau2, beta), "rho": rho,
                "tau2": tau2, "beta": beta}
    if what == "beta":
        tau2 = _num(p, "tau2")
        b = opt.beta_star_iid(rho, tau2)
        a, _ = opt._a_parameter(rho, tau2)
        res = {"beta_star": b, "a": a, "stationarity_residual": opt.beta_stationarity_residual(b, a)}
        if "M" in p:
            M = int(p["M"])
            res["K_lambert"] = M / b
            res["K_de"] = opt.k_star_general(M, rho, tau2).x
        return res
    if what == "bits":
        spec = opt.RateGapSpec(_num(p, "b"), rho, _num(p, "beta"), p.get("scheme", "orzf"))
        fb = opt.feedback_bits(spec, int(_num(p, "M")), high_snr=p.get("high_snr", "0") not in ("0", ""))
        return {"bits": fb.integer, "bits_real": fb.real, "phi": fb.phi, "scheme": spec.scheme}
    if what == "tdd":
        cfg = opt.TddConfig(T=_num(p, "T"), K=int(_num(p, "K")), M=int(_num(p, "M")),
                            scheme=p.get("scheme", "zf"), ul_dl_ratio=_num(p, "ul_dl_ratio", 0.1))
        if p.get("joint", "0") not in ("0", ""):
            r = opt.tdd_joint_opt(cfg, rho)
        else:
            r = opt.tdd_train_opt(cfg, rho)
        return {"T_t": r.x, "K": r.K, "T_t_over_T": r.x / cfg.T, "sum_rate": r.objective}
    raise ValueError(f"unknown solve target {what!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="simlab", description="Monte-Carlo and deterministic-equivalent "
                                 "experiments for linearly precoded MISO broadcast channels.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run the experiment described by a TOML config")
    r.add_argument("config")
    r.add_argument("--threads", type=int, default=None, help="worker threads (default: SIMLAB_THREADS or CPU count)")

    f = sub.add_parser("figure", help="reproduce one result figure from its preset")
    f.add_argument("name", choices=figures.FIGURES)
    f.add_argument("--scale", choices=tuple(figures.SCALES), default="desk")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", default=".")
    f.add_argument("--trials", type=int, default=None, help="override the trial count of the scale")

    s = sub.add_parser("solve", help="call an optimizer directly and print key=value pairs",
                       epilog="; ".join(f"{k}: {v}" for k, v in _SOLVE_KEYS.items()))
    s.add_argument("what", choices=tuple(_SOLVE_KEYS))
    s.add_argument("params", nargs="*", metavar="key=value")
    return ap


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}" if math.isfinite(v) else str(v)
    return str(v)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.cmd == "run":
            spec = load_config(args.config)
            recs = monte_carlo_sum_rate(spec, threads=args.threads)
            if spec.csv_path:
                write_csv(recs, spec.csv_path)
            print(summary_table(recs))
            dropped = sum(r.dropped_trials for r in recs)
            redraws = sum(r.singular_resamples for r in recs)
            if redraws or dropped:
                print(f"singular channel redraws: {redraws}, dropped trials: {dropped}")
        elif args.cmd == "figure":
            for path in figures.reproduce_figure(args.name, args.scale, args.seed, args.out, args.trials):
                print(path)
        else:
            for k, v in solve(args.what, _params(args.params)).items():
                print(f"{k}={_fmt(v)}")
    except (MisobcError, ValueError, OSError) as exc:
        print(f"simlab: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
