"""System configuration and random channel / CSIT realizations.

Channel model: ``H = L^{1/2} X Theta^{1/2}`` and ``H_hat = L^{1/2} X_hat Theta^{1/2}``
where row ``k`` of ``X_hat`` is ``sqrt(1 - tau_k^2) x_k + tau_k q_k``. Entries of
``X`` and ``Q`` are i.i.d. circular complex Gaussian with variance ``1/M``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy.special import j0

from .errors import DomainError, InvalidInput

EIG_FLOOR = 1e-10


@dataclass(frozen=True)
class CorrelationSpec:
    kind: str = "identity"
    d_over_lambda: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("identity", "jakes_uca"):
            raise InvalidInput(f"unknown correlation kind {self.kind!r}")
        if self.kind == "jakes_uca" and not (self.d_over_lambda is not None and self.d_over_lambda > 0):
            raise InvalidInput("jakes_uca correlation needs d_over_lambda > 0")

    def matrix(self, M: int) -> np.ndarray:
        if self.kind == "identity":
            return np.eye(M)
        return jakes_uca_correlation(M, self.d_over_lambda)


@dataclass(frozen=True)
class PathLossSpec:
    """Large-scale fading model.

    ``cost231_disk`` places users area-uniformly on the annulus
    ``min_distance_m <= d <= cell_radius_m`` around the transmitter.
    """

    kind: str = "equal"
    cell_radius_m: float = 500.0
    min_distance_m: float = 35.0

    def __post_init__(self):
        if self.kind not in ("equal", "cost231_disk"):
            raise InvalidInput(f"unknown path-loss kind {self.kind!r}")
        if self.kind == "cost231_disk" and not (self.cell_radius_m > self.min_distance_m > 0):
            raise InvalidInput("cost231_disk needs cell_radius_m > min_distance_m > 0")


@dataclass(frozen=True)
class SystemConfig:
    """Dimensions, SNR and CSIT quality of one downlink system.

    `tau` holds the per-user distortion amplitudes ``tau_k`` (not squared).
    A scalar is broadcast to all ``K`` users. The noise variance is derived
    from the power and the SNR, ``sigma2 = power / rho``.
    """

    M: int
    K: int
    snr_db: float
    power: float = 1.0
    tau: np.ndarray | float = 0.0
    correlation: CorrelationSpec = field(default_factory=CorrelationSpec)
    pathloss: PathLossSpec = field(default_factory=PathLossSpec)

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise InvalidInput(f"M must be a positive integer, got {self.M}")
        if int(self.K) != self.K or self.K < 1:
            raise InvalidInput(f"K must be a positive integer, got {self.K}")
        if not (self.power > 0 and math.isfinite(self.power)):
            raise InvalidInput("power must be positive")
        if not math.isfinite(self.snr_db):
            raise InvalidInput("snr_db must be finite")
        tau = np.asarray(self.tau, dtype=float)
        if tau.ndim == 0:
            tau = np.full(int(self.K), float(tau))
        if tau.shape != (self.K,):
            raise InvalidInput(f"tau must be scalar or length K={self.K}")
        if np.any(~np.isfinite(tau)) or np.any(tau < 0) or np.any(tau > 1):
            raise InvalidInput("every tau_k must lie in [0, 1]")
        tau.setflags(write=False)
        object.__setattr__(self, "tau", tau)

    @property
    def rho(self) -> float:
        return 10.0 ** (self.snr_db / 10.0)

    @property
    def sigma2(self) -> float:
        return self.power / self.rho

    @property
    def beta_exact(self) -> Fraction:
        return Fraction(int(self.M), int(self.K))

    @property
    def beta(self) -> float:
        return float(self.beta_exact)

    @property
    def tau2(self) -> np.ndarray:
        return self.tau ** 2

    def theta(self) -> np.ndarray:
        return self.correlation.matrix(int(self.M))


@dataclass(frozen=True)
class ChannelRealization:
    X: np.ndarray
    Q: np.ndarray
    Theta: np.ndarray
    L: np.ndarray
    H: np.ndarray
    H_hat: np.ndarray


@functools.lru_cache(maxsize=64)
def _jakes_cached(M: int, d_over_lambda: float) -> np.ndarray:
    if M == 1:
        Th = np.ones((1, 1))
    else:
        idx = np.arange(M)
        sep = np.abs(idx[:, None] - idx[None, :])
        # adjacent spacing d fixed, so the radius grows as d / (2 sin(pi/M))
        dij = d_over_lambda * np.sin(np.pi * sep / M) / np.sin(np.pi / M)
        Th = j0(2.0 * np.pi * dij)
        Th = 0.5 * (Th + Th.T)
        w, V = np.linalg.eigh(Th)
        if w.min() < EIG_FLOOR:
            w = np.maximum(w, EIG_FLOOR)
            Th = (V * w) @ V.T
            Th = 0.5 * (Th + Th.T)
            s = 1.0 / np.sqrt(np.diag(Th))
            Th = Th * s[:, None] * s[None, :]
            np.fill_diagonal(Th, 1.0)
    Th.setflags(write=False)
    return Th


def jakes_uca_correlation(M: int, d_over_lambda: float) -> np.ndarray:
    """Jakes transmit correlation of a uniform circular array.

    ``Theta_ij = J0(2 pi d_ij / lambda)`` with ``d_ij = 2 r sin(pi |i-j| / M)``
    and ``r = d / (2 sin(pi/M))``. Eigenvalues below ``1e-10`` are clipped and
    the matrix rescaled back to a unit diagonal.
    """
    if int(M) != M or M < 1:
        raise InvalidInput("M must be a positive integer")
    if not d_over_lambda > 0:
        raise InvalidInput("d_over_lambda must be positive")
    return _jakes_cached(int(M), float(d_over_lambda)).copy()


def draw_user_distances(K: int, spec: PathLossSpec, rng: np.random.Generator) -> np.ndarray:
    rc, dmin = spec.cell_radius_m, spec.min_distance_m
    u = rng.random(K)
    return np.sqrt(u * (rc * rc - dmin * dmin) + dmin * dmin)


def cost231_gain_db(d) -> np.ndarray:
    return -(31.5 + 35.0 * np.log10(np.asarray(d, dtype=float)))


def normalize_gains(gain_db) -> np.ndarray:
    """Convert dB gains to linear scale with unit empirical mean, sorted ascending."""
    g = np.asarray(gain_db, dtype=float)
    lin = 10.0 ** ((g - g.max()) / 10.0)  # shift first so tiny gains don't underflow
    lin = lin / lin.mean()
    lin = np.sort(lin)
    # one corrective pass so the mean is 1 to rounding, not just to 1e-15 drift
    return lin / lin.mean()


def draw_pathloss_gains(K: int, spec: PathLossSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.kind == "equal":
        return np.ones(K)
    return normalize_gains(cost231_gain_db(draw_user_distances(K, spec, rng)))


def complex_gaussian(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    """Circular complex Gaussian samples with ``E|x|^2 = variance``."""
    s = math.sqrt(variance / 2.0)
    return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _sqrtm_psd(A: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(A)
    return (V * np.sqrt(np.maximum(w, 0.0))) @ V.conj().T


@functools.lru_cache(maxsize=64)
def _theta_and_root(corr: CorrelationSpec, M: int):
    Th = corr.matrix(M)
    if corr.kind == "identity":
        root = np.eye(M)
    else:
        root = _sqrtm_psd(Th)
    Th.setflags(write=False)
    root.setflags(write=False)
    return Th, root


def sample_channel(cfg: SystemConfig, rng: np.random.Generator,
                   L: Optional[np.ndarray] = None) -> ChannelRealization:
    """Draw one realization ``(X, Q, H, H_hat)``.

    Parameters
    ----------
    L : array_like, optional
        Fixed large-scale gains. When omitted they are drawn from
        ``cfg.pathloss`` using `rng` before the small-scale draws.
    """
    M, K = int(cfg.M), int(cfg.K)
    Th, root = _theta_and_root(cfg.correlation, M)
    if L is None:
        L = draw_pathloss_gains(K, cfg.pathloss, rng)
    L = np.asarray(L, dtype=float)
    X = complex_gaussian(rng, (K, M), 1.0 / M)
    Q = complex_gaussian(rng, (K, M), 1.0 / M)
    tau = cfg.tau[:, None]
    Xh = np.sqrt(1.0 - tau * tau) * X + tau * Q
    sl = np.sqrt(L)[:, None]
    H = sl * X @ root
    H_hat = sl * Xh @ root
    perfect = cfg.tau == 0
    if np.any(perfect):
        H_hat[perfect] = H[perfect]
    return ChannelRealization(X=X, Q=Q, Theta=Th, L=L, H=H, H_hat=H_hat)


def rvq_distortion(B: float, M: int) -> float:
    """Quantization distortion ``tau^2 = 2^{-B/(M-1)}`` of random vector quantization."""
    if M < 2:
        raise DomainError("RVQ distortion needs M >= 2")
    return 2.0 ** (-float(B) / (M - 1))


def mmse_training_distortion(T_t: float, rho_ul: float) -> float:
    """Per-entry MMSE estimation error ``1 / (1 + T_t rho_ul)`` after uplink training."""
    if T_t < 0 or rho_ul < 0:
        raise DomainError("training length and uplink SNR must be nonnegative")
    return 1.0 / (1.0 + T_t * rho_ul)
