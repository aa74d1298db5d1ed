"""Monte-Carlo sum-rate experiments and their CSV persistence.

Every trial owns a random stream seeded from ``(seed, snr index, trial index)``
so a run is bitwise reproducible and does not depend on the number of worker
threads. Per-trial sum rates are stored by index and reduced in index order.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..channel import SystemConfig, draw_pathloss_gains, sample_channel
from ..det_equiv import gamma_rzf_general, gamma_zf_general, sum_rate_de
from ..errors import SingularChannel
from ..optimize import alpha_star_closed_form, alpha_star_line_search
from ..precoders import evaluate, precode
from .config import ExperimentSpec

CSV_COLUMNS = ("snr_db", "M", "K", "precoder", "tau2", "mc_mean_sum_rate",
               "mc_std_sum_rate", "de_sum_rate", "trials", "seed")
CSV_HEADER_NOTE = ("# mc_std_sum_rate is the sample standard deviation (ddof=1) of the "
                   "per-realization sum rate, not the standard error of the mean")

MAX_RESAMPLES = 10
# Stream key for the large-scale gains; snr indices never reach it.
_PATHLOSS_STREAM = 2**32 - 1


@dataclass(frozen=True)
class ExperimentRecord:
    snr_db: float
    M: int
    K: int
    precoder: str
    tau2: float
    mc_mean_sum_rate: float
    mc_std_sum_rate: float
    de_sum_rate: float
    trials: int
    seed: int
    singular_resamples: int = 0
    dropped_trials: int = 0
    alpha: float = math.nan

    def row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


def worker_count() -> int:
    env = os.environ.get("SIMLAB_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("SIMLAB_THREADS must be a positive integer")
        return n
    return os.cpu_count() or 1


def trial_rng(seed: int, snr_index: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(snr_index), int(trial)]))


def draw_gains(spec: ExperimentSpec) -> np.ndarray:
    """Large-scale gains shared by all trials and SNR points of one experiment."""
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), _PATHLOSS_STREAM]))
    return draw_pathloss_gains(int(spec.config.K), spec.config.pathloss, rng)


def _is_iid(cfg: SystemConfig, L: np.ndarray) -> bool:
    return (cfg.correlation.kind == "identity" and np.all(L == 1.0)
            and np.all(cfg.tau == cfg.tau[0]))


def resolve_alpha(spec: ExperimentSpec, cfg: SystemConfig, L: np.ndarray, lam: np.ndarray) -> float:
    """Regularization used at one SNR point (0 for ZF).

    ORZF takes the closed form when channels are i.i.d. with equal gains and a
    common distortion, and otherwise the deterministic-equivalent line search.
    """
    kind = spec.precoder
    if kind.kind == "zf":
        return 0.0
    tau2 = float(np.mean(cfg.tau2))
    if kind.kind != "orzf":
        return kind.resolve_alpha(cfg.rho, cfg.beta, tau2)
    if _is_iid(cfg, L):
        return alpha_star_closed_form(cfg.rho, tau2, cfg.beta)
    return alpha_star_line_search(lam, L, cfg.tau, cfg.rho, cfg.beta).x


def de_sum_rate(spec: ExperimentSpec, cfg: SystemConfig, L, lam, alpha: float) -> float:
    """Deterministic-equivalent sum rate; NaN for ZF at ``beta <= 1`` where it does not exist."""
    if spec.precoder.kind == "zf":
        if not cfg.beta > 1:
            return math.nan
        de = gamma_zf_general(lam, L, cfg.tau, cfg.rho, cfg.beta)
    else:
        de = gamma_rzf_general(lam, L, cfg.tau, alpha, cfg.rho, cfg.beta)
    return sum_rate_de(de.gamma)


def single_trial(spec: ExperimentSpec, cfg: SystemConfig, L, alpha: float,
                 snr_index: int, trial: int):
    """Sum rate of one realization and the number of singular redraws it needed.

    Returns ``(nan, MAX_RESAMPLES + 1)`` when every draw was singular.
    """
    rng = trial_rng(spec.seed, snr_index, trial)
    for attempt in range(MAX_RESAMPLES + 1):
        ch = sample_channel(cfg, rng, L=L)
        try:
            res = precode(spec.precoder, ch.H_hat, cfg.power, cfg.rho, cfg.beta,
                          float(np.mean(cfg.tau2)), alpha=None if spec.precoder.kind == "zf" else alpha)
        except SingularChannel:
            continue
        return evaluate(ch.H, res, cfg.sigma2).sum_rate, attempt
    return math.nan, MAX_RESAMPLES + 1


def monte_carlo_sum_rate(spec: ExperimentSpec, threads: Optional[int] = None) -> list:
    """Run every SNR point of `spec` and return one :class:`ExperimentRecord` per point."""
    threads = worker_count() if threads is None else int(threads)
    L = draw_gains(spec)
    lam = np.linalg.eigvalsh(spec.config.theta())
    records = []
    for si, snr in enumerate(spec.snr_grid_db):
        cfg = spec.point_config(snr)
        alpha = resolve_alpha(spec, cfg, L, lam)
        rates = np.empty(spec.trials)
        redraws = np.zeros(spec.trials, dtype=int)

        def job(t, cfg=cfg, alpha=alpha, si=si):
            return single_trial(spec, cfg, L, alpha, si, t)

        if threads == 1:
            results = map(job, range(spec.trials))
            for t, (r, n) in enumerate(results):
                rates[t], redraws[t] = r, n
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                for t, (r, n) in enumerate(pool.map(job, range(spec.trials))):
                    rates[t], redraws[t] = r, n

        ok = np.isfinite(rates)
        good = rates[ok]
        mean = float(np.mean(good)) if good.size else math.nan
        std = float(np.std(good, ddof=1)) if good.size > 1 else 0.0
        records.append(ExperimentRecord(
            snr_db=snr, M=int(cfg.M), K=int(cfg.K), precoder=spec.precoder.tag,
            tau2=float(np.mean(cfg.tau2)), mc_mean_sum_rate=mean, mc_std_sum_rate=std,
            de_sum_rate=de_sum_rate(spec, cfg, L, lam, alpha), trials=int(good.size),
            seed=int(spec.seed), singular_resamples=int(np.sum(np.minimum(redraws, MAX_RESAMPLES))),
            dropped_trials=int(np.sum(~ok)), alpha=alpha))
    return records


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(records, path, note: bool = True) -> None:
    path = os.fspath(path)
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if note:
            fh.write(CSV_HEADER_NOTE + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(v) for v in r.row()])


def read_csv(path) -> list:
    """Rows of a CSV written by :func:`write_csv` as dicts, skipping ``#`` comment lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def summary_table(records) -> str:
    head = f"{'snr_db':>7} {'M':>4} {'K':>4} {'precoder':>10} {'tau2':>8} {'mc_mean':>9} {'mc_std':>8} {'de':>9}"
    lines = [head]
    for r in records:
        lines.append(f"{r.snr_db:7.2f} {r.M:4d} {r.K:4d} {r.precoder:>10} {r.tau2:8.4g} "
                     f"{r.mc_mean_sum_rate:9.4f} {r.mc_std_sum_rate:8.4f} {r.de_sum_rate:9.4f}")
    return "\n".join(lines)
