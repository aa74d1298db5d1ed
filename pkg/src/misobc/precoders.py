"""Per-realization linear precoders and the exact SINR they achieve.

RZF uses ``G = (xi / sqrt(M)) H_hat^H (H_hat H_hat^H + alpha I)^{-1}``, which is
the same matrix as ``(xi/sqrt(M)) (H_hat^H H_hat + alpha I)^{-1} H_hat^H`` but only
needs a K x K factorization. ZF is the ``alpha = 0`` member. ``xi`` is chosen so
that ``tr(G G^H) = P`` holds with equality.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import SingularChannel, SingularNormalization

ZF_COND_LIMIT = 1e12

_KINDS = ("zf", "rzf", "rzf_cdu", "orzf", "mmse_filter")


@dataclass(frozen=True)
class PrecoderKind:
    """Which precoder to apply and how its regularization is chosen.

    ``rzf`` carries an explicit `alpha`. The other RZF variants derive it from
    the operating point: ``rzf_cdu`` uses ``1/(beta rho)``, ``mmse_filter`` uses
    ``tau^2/beta + 1/(beta rho)``, ``orzf`` uses the distortion-aware optimum.
    """

    kind: str
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown precoder {self.kind!r}; expected one of {_KINDS}")
        if self.kind == "rzf" and not (self.alpha is not None and self.alpha > 0):
            raise ValueError("rzf needs an explicit alpha > 0")

    @property
    def tag(self) -> str:
        return f"rzf({self.alpha:g})" if self.kind == "rzf" else self.kind

    def resolve_alpha(self, rho: float, beta: float, tau2: float = 0.0) -> float:
        """Regularization for SNR `rho`, load `beta` and common distortion `tau2`.

        For ``orzf`` this is the i.i.d. closed form; correlated or path-loss
        scenarios should pass a line-searched value through ``PrecoderKind("rzf", a)``.
        Returns 0 for ZF.
        """
        if self.kind == "zf":
            return 0.0
        if self.kind == "rzf":
            return float(self.alpha)
        if self.kind == "rzf_cdu":
            return 1.0 / (beta * rho)
        if self.kind == "mmse_filter":
            return tau2 / beta + 1.0 / (beta * rho)
        from .optimize import alpha_star_closed_form
        return alpha_star_closed_form(rho, tau2, beta)


@dataclass(frozen=True)
class PrecodeResult:
    G: np.ndarray
    xi2: float
    per_user_sinr: Optional[np.ndarray] = None
    sum_rate: Optional[float] = None


def _normalize(F: np.ndarray, P: float) -> PrecodeResult:
    M = F.shape[0]
    tr = float(np.sum(np.abs(F) ** 2)) / M
    if not (tr > np.finfo(float).tiny) or not math.isfinite(tr):
        raise SingularNormalization(f"normalization trace {tr!r} is not usable")
    xi2 = P / tr
    return PrecodeResult(G=math.sqrt(xi2 / M) * F, xi2=xi2)


def rzf_precoder(H_hat: np.ndarray, alpha: float, P: float = 1.0) -> PrecodeResult:
    if not alpha > 0:
        raise ValueError("alpha must be positive; use zf_precoder for alpha = 0")
    H_hat = np.asarray(H_hat)
    K = H_hat.shape[0]
    gram = H_hat @ H_hat.conj().T + alpha * np.eye(K)
    fac = cho_factor(gram, lower=True)
    F = cho_solve(fac, H_hat).conj().T
    return _normalize(F, P)


def zf_precoder(H_hat: np.ndarray, P: float = 1.0) -> PrecodeResult:
    H_hat = np.asarray(H_hat)
    K, M = H_hat.shape
    if K > M:
        raise SingularChannel(f"ZF needs K <= M, got K={K}, M={M}")
    gram = H_hat @ H_hat.conj().T
    w = np.linalg.eigvalsh(gram)
    if not (w[0] > 0) or w[-1] / w[0] > ZF_COND_LIMIT:
        cond = math.inf if not w[0] > 0 else w[-1] / w[0]
        raise SingularChannel(f"Gram matrix condition number {cond:.3e} exceeds {ZF_COND_LIMIT:.0e}")
    try:
        fac = cho_factor(gram, lower=True)
    except LinAlgError as exc:
        raise SingularChannel(str(exc)) from exc
    F = cho_solve(fac, H_hat).conj().T
    return _normalize(F, P)


def exact_sinr(H: np.ndarray, G: np.ndarray, sigma2: float, M: Optional[int] = None) -> np.ndarray:
    """SINR of every user for true channel `H` and precoder `G`.

    ``gamma_k = |h_k g_k|^2 / (sum_{j != k} |h_k g_j|^2 + sigma2 / M)``, with the
    interference sum running over the other users.
    """
    H = np.asarray(H)
    M = H.shape[1] if M is None else M
    HG = H @ G
    power = np.abs(HG) ** 2
    signal = np.diag(power).copy()
    np.fill_diagonal(power, 0.0)  # summing the off-diagonal terms avoids total-minus-signal cancellation
    return signal / (power.sum(axis=1) + sigma2 / M)


def sum_rate(gammas) -> float:
    return float(np.sum(np.log2(1.0 + np.asarray(gammas, dtype=float))))


def evaluate(H: np.ndarray, res: PrecodeResult, sigma2: float) -> PrecodeResult:
    gam = exact_sinr(H, res.G, sigma2)
    return replace(res, per_user_sinr=gam, sum_rate=sum_rate(gam))


def precode(kind: PrecoderKind, H_hat: np.ndarray, P: float, rho: float, beta: float,
            tau2: float = 0.0, alpha: Optional[float] = None) -> PrecodeResult:
    """Apply `kind` to `H_hat`; an explicit `alpha` overrides the kind's own rule."""
    if kind.kind == "zf":
        return zf_precoder(H_hat, P)
    a = kind.resolve_alpha(rho, beta, tau2) if alpha is None else alpha
    return rzf_precoder(H_hat, a, P)
