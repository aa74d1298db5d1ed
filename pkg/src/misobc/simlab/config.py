"""Experiment specifications and their TOML representation.

A run configuration has the sections ``[system]``, ``[correlation]``,
``[pathloss]``, ``[precoder]``, ``[mc]`` and ``[output]``. Figure presets hold
several such blocks under ``[[curve]]``.

The CSIT model in ``system.tau`` is one of

``fixed:<tau2>``
    the same squared distortion at every SNR,
``rvq:<B>``
    random vector quantization with ``B`` bits, ``tau2 = 2^(-B/(M-1))``,
``training:<T_t>,<rho_ul>``
    MMSE uplink training, ``tau2 = 1/(1 + T_t rho_ul)`` with linear ``rho_ul``,
``offset:<b>``
    RVQ with the integer bit budget that holds the ORZF per-user rate offset at
    ``log2(b)`` for the current SNR.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from ..channel import CorrelationSpec, PathLossSpec, SystemConfig, mmse_training_distortion, rvq_distortion
from ..errors import ConfigError, MisobcError
from ..precoders import PrecoderKind

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class TauModel:
    kind: str = "fixed"
    params: tuple = (0.0,)

    def tau2(self, M: int, K: int, rho: float) -> float:
        if self.kind == "fixed":
            return float(self.params[0])
        if self.kind == "rvq":
            return rvq_distortion(self.params[0], M)
        if self.kind == "training":
            return mmse_training_distortion(*self.params)
        from ..optimize import RateGapSpec, feedback_bits
        fb = feedback_bits(RateGapSpec(self.params[0], rho, M / K, "orzf"), M)
        return rvq_distortion(fb.integer, M)

    def describe(self) -> str:
        return f"{self.kind}:" + ",".join(f"{p:g}" for p in self.params)


def parse_tau_model(text: str, where: str = "system.tau") -> TauModel:
    kind, _, rest = str(text).partition(":")
    kind = kind.strip()
    if kind not in ("fixed", "rvq", "training", "offset"):
        raise ConfigError(where, f"unknown CSIT model {kind!r}; expected fixed, rvq, training or offset")
    try:
        vals = tuple(float(v) for v in rest.split(",")) if rest.strip() else ()
    except ValueError:
        raise ConfigError(where, f"could not parse numbers in {text!r}") from None
    need = {"fixed": 1, "rvq": 1, "training": 2, "offset": 1}[kind]
    if len(vals) != need:
        raise ConfigError(where, f"{kind} takes {need} value(s), got {len(vals)}")
    if kind == "fixed" and not 0.0 <= vals[0] <= 1.0:
        raise ConfigError(where, f"tau2 must lie in [0, 1], got {vals[0]:g}")
    if kind == "rvq" and vals[0] < 0:
        raise ConfigError(where, "bit count must be nonnegative")
    if kind == "training" and (vals[0] < 0 or vals[1] < 0):
        raise ConfigError(where, "training length and uplink SNR must be nonnegative")
    if kind == "offset" and not vals[0] > 1:
        raise ConfigError(where, "rate offset factor b must exceed 1")
    return TauModel(kind, vals)


def parse_correlation(text: str, where: str = "correlation.model") -> CorrelationSpec:
    kind, _, rest = str(text).partition(":")
    if kind == "identity" and not rest:
        return CorrelationSpec()
    if kind == "jakes_uca":
        try:
            return CorrelationSpec("jakes_uca", float(rest))
        except (ValueError, MisobcError) as exc:
            raise ConfigError(where, f"bad antenna spacing in {text!r} ({exc})") from None
    raise ConfigError(where, f"expected 'identity' or 'jakes_uca:<d_over_lambda>', got {text!r}")


def parse_pathloss(text: str, where: str = "pathloss.model") -> PathLossSpec:
    kind, _, rest = str(text).partition(":")
    if kind == "equal" and not rest:
        return PathLossSpec()
    if kind == "cost231":
        try:
            vals = [float(v) for v in rest.split(",")] if rest else []
            return PathLossSpec("cost231_disk", *vals)
        except (ValueError, TypeError, MisobcError) as exc:
            raise ConfigError(where, f"bad cost231 parameters in {text!r} ({exc})") from None
    raise ConfigError(where, f"expected 'equal' or 'cost231:<r_c>,<min_d>', got {text!r}")


@dataclass(frozen=True)
class ExperimentSpec:
    """One Monte-Carlo curve: a system, a precoder and an SNR grid.

    ``config.snr_db`` and ``config.tau`` are placeholders; the runner replaces
    them per grid point using `snr_grid_db` and `tau_model`.
    """

    config: SystemConfig
    precoder: PrecoderKind
    snr_grid_db: tuple
    trials: int
    seed: int
    tau_model: TauModel = field(default_factory=TauModel)
    csv_path: Optional[str] = None
    plot_path: Optional[str] = None
    label: str = ""

    def __post_init__(self):
        if int(self.trials) != self.trials or self.trials < 1:
            raise ConfigError("mc.trials", "need at least one trial")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("mc.seed", "seed must be a 64-bit unsigned integer")
        grid = tuple(float(s) for s in self.snr_grid_db)
        if not grid:
            raise ConfigError("system.snr_db", "SNR grid is empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("system.snr_db", "SNR grid must be strictly increasing")
        if self.precoder.kind == "zf" and self.config.K > self.config.M:
            raise ConfigError("system.K", f"zf needs K <= M, got K={self.config.K}, M={self.config.M}")
        object.__setattr__(self, "snr_grid_db", grid)

    def point_config(self, snr_db: float) -> SystemConfig:
        tau2 = self.tau_model.tau2(self.config.M, self.config.K, 10.0 ** (snr_db / 10.0))
        return replace(self.config, snr_db=snr_db, tau=math.sqrt(tau2))


_SECTIONS = ("system", "correlation", "pathloss", "precoder", "mc", "output")


def _get(d: dict, key: str, where: str, kind=None, default=...):
    if key not in d:
        if default is ...:
            raise ConfigError(f"{where}.{key}", "missing")
        return default
    v = d[key]
    if kind is int and (isinstance(v, bool) or not isinstance(v, int)):
        raise ConfigError(f"{where}.{key}", f"expected an integer, got {v!r}")
    if kind is float and (isinstance(v, bool) or not isinstance(v, (int, float))):
        raise ConfigError(f"{where}.{key}", f"expected a number, got {v!r}")
    if kind is str and not isinstance(v, str):
        raise ConfigError(f"{where}.{key}", f"expected a string, got {v!r}")
    return v


def spec_from_dict(doc: dict, prefix: str = "", seed: Optional[int] = None,
                   trials: Optional[int] = None) -> ExperimentSpec:
    """Build an :class:`ExperimentSpec` from parsed TOML; `seed`/`trials` override ``[mc]``."""
    p = prefix
    for name in doc:
        if name not in _SECTIONS and name != "label":
            raise ConfigError(f"{p}{name}", "unknown section")
    sysd = doc.get("system")
    if not isinstance(sysd, dict):
        raise ConfigError(f"{p}system", "missing section")
    M = _get(sysd, "M", f"{p}system", int)
    K = _get(sysd, "K", f"{p}system", int)
    snr = _get(sysd, "snr_db", f"{p}system")
    if isinstance(snr, (int, float)) and not isinstance(snr, bool):
        snr = [snr]
    if not isinstance(snr, list) or not all(isinstance(s, (int, float)) for s in snr):
        raise ConfigError(f"{p}system.snr_db", "expected a number or a list of numbers")
    if not snr:
        raise ConfigError(f"{p}system.snr_db", "SNR grid is empty")
    power = float(_get(sysd, "power", f"{p}system", float, 1.0))
    tau_model = parse_tau_model(_get(sysd, "tau", f"{p}system", str, "fixed:0"), f"{p}system.tau")

    corr = parse_correlation(_get(doc.get("correlation", {}), "model", f"{p}correlation", str, "identity"),
                             f"{p}correlation.model")
    pl = parse_pathloss(_get(doc.get("pathloss", {}), "model", f"{p}pathloss", str, "equal"),
                        f"{p}pathloss.model")

    prd = doc.get("precoder", {})
    kind = _get(prd, "kind", f"{p}precoder", str)
    alpha = _get(prd, "alpha", f"{p}precoder", float, None)
    try:
        pk = PrecoderKind(kind, alpha)
    except ValueError as exc:
        raise ConfigError(f"{p}precoder.kind", str(exc)) from None
    if kind == "zf" and K > M:
        raise ConfigError(f"{p}system.K", f"zf needs K <= M, got K={K}, M={M}")

    try:
        tau0 = math.sqrt(tau_model.tau2(M, K, 10.0 ** (float(snr[0]) / 10.0)))
        cfg = SystemConfig(M=M, K=K, snr_db=float(snr[0]), power=power, tau=tau0,
                           correlation=corr, pathloss=pl)
    except MisobcError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{p}system", str(exc)) from None

    mc = doc.get("mc", {})
    n = trials if trials is not None else _get(mc, "trials", f"{p}mc", int)
    s = seed if seed is not None else _get(mc, "seed", f"{p}mc", int, 0)
    out = doc.get("output", {})
    return ExperimentSpec(config=cfg, precoder=pk, snr_grid_db=tuple(snr), trials=n, seed=s,
                          tau_model=tau_model, csv_path=out.get("csv"),
                          plot_path=out.get("plot_script"), label=str(doc.get("label", "")))


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"not valid TOML ({exc})") from None


def load_config(path) -> ExperimentSpec:
    return spec_from_dict(load_toml(Path(path)))
