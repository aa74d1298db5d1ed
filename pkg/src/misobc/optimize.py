"""Optimizers built on the deterministic equivalents.

Covers the optimal RZF regularization, rate-gap and feedback-bit scaling laws,
the sum-rate optimal number of ZF users and the TDD training-length split.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .channel import mmse_training_distortion
from .det_equiv import (
    _spectrum,
    gamma_rzf_general,
    gamma_rzf_iid,
    gamma_zf_general,
    sum_rate_de,
)
from .errors import DomainError, InvalidInput, NonConvergence
from .rmt_core import lambert_w0

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
_LN2 = math.log(2.0)


@dataclass
class OptimizerResult:
    """Outcome of a scalar optimization.

    `x` is the optimizer (alpha, beta, K or T_t depending on the routine).
    `flags` carries diagnostics such as the search bracket or a
    ``non_unimodal`` marker.
    """

    x: float
    objective: float
    iterations: int = 0
    converged: bool = True
    residual: float = math.nan
    K: Optional[int] = None
    flags: dict = field(default_factory=dict)
    history: list = field(default_factory=list)


def golden_section_max(f: Callable[[float], float], lo: float, hi: float, tol: float,
                       max_iter: int = 500) -> OptimizerResult:
    """Maximize a unimodal `f` on ``[lo, hi]`` by golden-section search.

    The endpoints are evaluated too, so a maximum on the boundary is returned
    exactly rather than approached from inside.
    """
    if hi < lo:
        raise InvalidInput("empty bracket")
    if hi == lo:
        return OptimizerResult(x=lo, objective=f(lo))
    best_x, best_f = lo, f(lo)
    fh = f(hi)
    if fh > best_f:
        best_x, best_f = hi, fh

    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while (b - a) > tol and it < max_iter:
        it += 1
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    for x, fx in ((c, fc), (d, fd)):
        if fx > best_f:
            best_x, best_f = x, fx
    return OptimizerResult(x=best_x, objective=best_f, iterations=it, converged=(b - a) <= tol,
                           residual=b - a)


# ---------------------------------------------------------------------------
# regularization

def alpha_star_closed_form(rho: float, tau2: float, beta: float) -> float:
    """``(1 + tau2 rho) / ((1 - tau2) beta rho)``, optimal in the i.i.d. case."""
    if not 0 <= tau2 < 1:
        raise DomainError(f"tau2 must lie in [0, 1), got {tau2}")
    return (1.0 + tau2 * rho) / ((1.0 - tau2) * beta * rho)


def _is_unimodal(v: np.ndarray, slack: float) -> bool:
    i = int(np.argmax(v))
    up = np.diff(v[: i + 1])
    down = np.diff(v[i:])
    return bool(np.all(up >= -slack) and np.all(down <= slack))


def alpha_star_line_search(Theta, L, tau, rho: float, beta: float,
                           bracket: Optional[tuple] = None, tol: float = 1e-8,
                           coarse: int = 41) -> OptimizerResult:
    """Regularization maximizing the deterministic-equivalent sum rate.

    The search runs in ``log(alpha)`` over `bracket`, which defaults to
    ``[1e-6, 1e2] / (beta rho)``. A coarse grid first checks that the objective
    has a single peak. If it does not, the search falls back to a 1000-point
    grid plus local refinement and sets ``flags["non_unimodal"]``.
    """
    lam = _spectrum(Theta)
    L = np.asarray(L, dtype=float)
    if bracket is None:
        bracket = (1e-6 / (beta * rho), 1e2 / (beta * rho))
    lo, hi = map(float, bracket)
    if not 0 < lo < hi:
        raise InvalidInput("alpha bracket must satisfy 0 < lo < hi")

    def obj(u):
        return sum_rate_de(gamma_rzf_general(lam, L, tau, math.exp(u), rho, beta, tol=1e-14).gamma)

    u_grid = np.linspace(math.log(lo), math.log(hi), coarse)
    v = np.array([obj(u) for u in u_grid])
    flags = {"bracket": (lo, hi)}
    if not _is_unimodal(v, 1e-12 * max(1.0, float(np.max(np.abs(v))))):
        flags["non_unimodal"] = True
        warnings.warn("sum rate is not unimodal in alpha on the bracket; using a dense grid",
                      RuntimeWarning, stacklevel=2)
        u_grid = np.linspace(math.log(lo), math.log(hi), 1000)
        v = np.array([obj(u) for u in u_grid])
    i = int(np.argmax(v))
    a = u_grid[max(i - 1, 0)]
    b = u_grid[min(i + 1, len(u_grid) - 1)]
    if i in (0, len(u_grid) - 1):
        flags["at_bracket_edge"] = True
    res = golden_section_max(obj, a, b, tol)
    # The objective is flat at the peak, so comparing values pins the argmax only
    # to about sqrt(rounding). Finish on the sign change of a central difference.
    h = 1e-4

    def slope(u):
        return (obj(u + h) - obj(u - h)) / (2.0 * h)

    try:
        sa, sb = slope(a), slope(b)
        if sa > 0 > sb:
            u_root = brentq(slope, a, b, xtol=tol * 1e-2, rtol=4 * np.finfo(float).eps)
            if obj(u_root) >= res.objective - 1e-12 * max(1.0, abs(res.objective)):
                res.x = u_root
                res.objective = obj(u_root)
                res.flags["slope_polish"] = True
    except (ValueError, NonConvergence):
        pass
    res.x = math.exp(res.x)
    res.flags.update(flags)
    return res


# ---------------------------------------------------------------------------
# rate gaps and feedback scaling

_SCHEMES = ("orzf", "rzf_cdu", "zf")


@dataclass(frozen=True)
class RateGapSpec:
    """Target per-user rate offset ``log2(b)`` at SNR `rho` and load `beta`."""

    b: float
    rho: float
    beta: float
    scheme: str = "orzf"

    def __post_init__(self):
        if not self.b > 1:
            raise InvalidInput("b must exceed 1")
        if not self.rho > 0:
            raise InvalidInput("rho must be positive")
        if not self.beta >= 1:
            raise InvalidInput("beta must be at least 1")
        if self.scheme not in _SCHEMES:
            raise InvalidInput(f"unknown scheme {self.scheme!r}")


def _g(x: float, rho: float, beta: float) -> float:
    xr = x * rho
    return xr * (beta - 1.0) + math.sqrt((1.0 - beta) ** 2 * xr * xr + 2.0 * (1.0 + beta) * xr + 1.0)


def rate_gap_rzf(rho: float, tau2: float, beta: float) -> float:
    """Per-user rate loss of ORZF caused by distortion `tau2` (i.i.d. case)."""
    if not beta >= 1:
        raise InvalidInput("beta must be at least 1")
    if tau2 == 0:
        return 0.0
    w = (1.0 - tau2) / (1.0 + tau2 * rho)
    return math.log2((1.0 + _g(1.0, rho, beta)) / (1.0 + _g(w, rho, beta)))


def _cdu_quantities(rho: float, beta: float):
    de = gamma_rzf_general(np.ones(1), np.ones(1), 0.0, 1.0 / (beta * rho), rho, beta)
    return de.m0, de.psi0, float(de.gamma[0])


def rate_gap(rho: float, tau2: float, beta: float, scheme: str) -> float:
    """Per-user rate loss relative to perfect CSIT for `scheme` (i.i.d. case)."""
    if scheme == "orzf":
        return rate_gap_rzf(rho, tau2, beta)
    if scheme == "zf":
        if not beta > 1:
            raise InvalidInput("ZF needs beta > 1")
        w = (1.0 - tau2) / (1.0 + tau2 * rho)
        return math.log2((1.0 + rho * (beta - 1.0)) / (1.0 + w * rho * (beta - 1.0)))
    if scheme == "rzf_cdu":
        a = 1.0 / (beta * rho)
        g0 = gamma_rzf_general(np.ones(1), np.ones(1), 0.0, a, rho, beta).gamma[0]
        gt = gamma_rzf_general(np.ones(1), np.ones(1), math.sqrt(tau2), a, rho, beta).gamma[0]
        return math.log2((1.0 + g0) / (1.0 + gt))
    raise InvalidInput(f"unknown scheme {scheme!r}")


def phi_orzf(rho: float, b: float, beta: float) -> float:
    w = 1.0 - b + _g(1.0, rho, beta)
    D = (1.0 + beta) * b + w * (beta - 1.0)
    N = (w * w - b * b) / (2.0 * b)
    return (rho * D - N) / (D + N)


def phi_zf(rho: float, b: float, beta: float) -> float:
    return (b - 1.0) * (1.0 + rho * (beta - 1.0)) / (1.0 - b + (beta - 1.0) * (rho + b))


def phi_rzf_cdu(rho: float, b: float, beta: float) -> float:
    m, psi, gs = _cdu_quantities(rho, beta)
    q = (1.0 + m) ** 2
    num = psi * (b - 1.0 - gs) * (q / rho + 1.0) + m * m * b
    den = psi * (1.0 + gs - b) * (q - 1.0) + m * m * b
    return rho * num / den


_PHI = {"orzf": phi_orzf, "zf": phi_zf, "rzf_cdu": phi_rzf_cdu}


def phi_high_snr_limit(scheme: str, b: float, beta: float) -> float:
    """Limit of ``phi(rho, b)`` as ``rho -> inf``."""
    if scheme == "zf":
        return b - 1.0
    if scheme == "orzf":
        return b * b - 1.0 if beta == 1 else b - 1.0
    if scheme == "rzf_cdu":
        return 2.0 * (b - 1.0) if beta == 1 else b - 1.0
    raise InvalidInput(f"unknown scheme {scheme!r}")


def _finite_snr_phi(spec: RateGapSpec) -> float:
    if spec.scheme == "zf" and not spec.beta > 1:
        raise InvalidInput("the finite-SNR ZF offset law needs beta > 1; use the high-SNR limit")
    return _PHI[spec.scheme](spec.rho, spec.b, spec.beta)


def tau2_for_offset(spec: RateGapSpec) -> float:
    """Distortion ``tau2 = phi(rho, b) / rho`` holding the per-user offset at ``log2(b)``."""
    tau2 = _finite_snr_phi(spec) / spec.rho
    if not 0 < tau2 < 1:
        raise DomainError(f"required distortion {tau2:.6g} lies outside (0, 1)")
    return tau2


@dataclass(frozen=True)
class FeedbackBits:
    real: float
    integer: int
    phi: float


def feedback_bits(spec: RateGapSpec, M: int, high_snr: bool = False) -> FeedbackBits:
    """Feedback bits per user ``(M-1)(log2 rho - log2 phi)`` and its integer ceiling (at least 1).

    With ``high_snr=True`` the asymptotic value of ``phi`` is used. That is
    the only available form for ZF at ``beta = 1``, where the finite-SNR law
    has no positive solution.
    """
    if M < 2:
        raise DomainError("feedback bits need M >= 2")
    if high_snr:
        phi = phi_high_snr_limit(spec.scheme, spec.b, spec.beta)
    else:
        phi = _finite_snr_phi(spec)
    if not phi > 0:
        raise DomainError(f"phi = {phi:.6g} is not positive; no bit budget achieves the offset")
    real = (M - 1) * (math.log2(spec.rho) - math.log2(phi))
    return FeedbackBits(real=real, integer=max(1, math.ceil(real)), phi=phi)


# ---------------------------------------------------------------------------
# number of users

def _a_parameter(rho: float, tau2: float):
    """Return ``a`` and ``a - 1``; the latter avoids cancellation near ``a = 1``."""
    if not (rho > 0 and 0 <= tau2 < 1):
        raise DomainError("need rho > 0 and 0 <= tau2 < 1")
    den = tau2 + 1.0 / rho
    return (1.0 - tau2) / den, (1.0 - 2.0 * tau2 - 1.0 / rho) / den


def beta_star_iid(rho: Optional[float] = None, tau2: Optional[float] = None,
                  a: Optional[float] = None) -> float:
    """Sum-rate optimal ZF load ``(1 - 1/a)(1 + 1/W((a-1)/e))``.

    Pass either ``(rho, tau2)`` or the effective SNR `a` directly.
    """
    if a is None:
        a, am1 = _a_parameter(rho, tau2)
    else:
        am1 = a - 1.0
    if not a > 0:
        raise DomainError("a must be positive")
    if am1 == 0:
        return math.e
    x = am1 / math.e
    if x < -1.0 / math.e:
        raise DomainError("Lambert-W argument below -1/e")
    w = lambert_w0(x)
    return am1 / a + (am1 / w) / a


def beta_stationarity_residual(beta: float, a: float) -> float:
    """``a beta / (1 + a(beta-1)) - ln(1 + a(beta-1))``; zero at the optimal load."""
    s = 1.0 + a * (beta - 1.0)
    return a * beta / s - math.log(s)


def k_star_general(M: int, rho: float, tau2: float, Theta=None, L_samples=None) -> OptimizerResult:
    """Integer number of ZF users maximizing the deterministic-equivalent sum rate.

    The objective ``(1/beta) E_l log2(1 + gamma_zf)`` is averaged over the
    supplied gain samples. Candidates are ``K = 1 .. M-1`` and ties go to the
    smaller ``K``.
    """
    if M < 2:
        raise InvalidInput("need M >= 2")
    lam = np.ones(1) if Theta is None else _spectrum(Theta)
    if Theta is not None and np.asarray(Theta).ndim == 2 and np.asarray(Theta).shape[0] != M:
        raise InvalidInput("Theta must be M x M")
    l = np.ones(1) if L_samples is None else np.asarray(L_samples, dtype=float)
    tau = math.sqrt(tau2)
    rates = np.empty(M - 1)
    for K in range(1, M):
        beta = M / K
        de = gamma_zf_general(lam, l, tau, rho, beta)
        rates[K - 1] = np.mean(np.log1p(de.gamma)) / _LN2 / beta
    k = int(np.argmax(rates)) + 1
    return OptimizerResult(x=k, objective=float(rates[k - 1]), K=k, flags={"rates": rates})


# ---------------------------------------------------------------------------
# TDD training

@dataclass(frozen=True)
class TddConfig:
    """Coherence block of `T` channel uses shared by uplink pilots and downlink data.

    The uplink SNR tracks the downlink one, ``rho_ul = ul_dl_ratio * rho_dl``.
    """

    T: float
    K: int
    M: int
    scheme: str = "zf"
    ul_dl_ratio: float = 0.1

    def __post_init__(self):
        if self.scheme not in ("zf", "orzf"):
            raise InvalidInput(f"unknown TDD scheme {self.scheme!r}")
        if not (self.K >= 1 and self.M >= 1):
            raise InvalidInput("K and M must be positive")
        if self.K > self.T:
            raise InvalidInput("orthogonal pilots need K <= T")
        if self.scheme == "zf" and not self.M > self.K:
            raise InvalidInput("ZF needs M > K")
        if self.scheme == "orzf" and not self.M >= self.K:
            raise InvalidInput("ORZF needs M >= K")
        if not self.ul_dl_ratio > 0:
            raise InvalidInput("ul_dl_ratio must be positive")


def _tdd_sinr(scheme, T_t, rho_dl, rho_ul, beta):
    x = T_t * rho_ul
    if scheme == "zf":
        return x * (beta - 1.0) / (1.0 + x / rho_dl + 1.0 / rho_dl)
    wr = x / (1.0 + x + rho_dl) * rho_dl
    d = math.sqrt((1.0 - beta) ** 2 * wr * wr + 2.0 * wr * (1.0 + beta) + 1.0)
    dm1 = ((beta - 1.0) ** 2 * wr * wr + 2.0 * wr * (1.0 + beta)) / (d + 1.0)
    return 0.5 * (wr * (beta - 1.0) + dm1)


def tdd_rate(cfg: TddConfig, T_t: float, rho_dl: float, K: Optional[int] = None) -> float:
    """Normalized sum rate ``K (1 - T_t/T) log2(1 + gamma)`` with MMSE-trained CSIT."""
    K = cfg.K if K is None else K
    beta = cfg.M / K
    gam = _tdd_sinr(cfg.scheme, T_t, rho_dl, cfg.ul_dl_ratio * rho_dl, beta)
    return K * (1.0 - T_t / cfg.T) * math.log1p(gam) / _LN2


def tdd_train_opt(cfg: TddConfig, rho_dl: float, K: Optional[int] = None) -> OptimizerResult:
    """Training length in ``[K, T]`` maximizing :func:`tdd_rate`.

    Uses golden-section search with tolerance ``1e-6 T``. The lower bound ``K``
    is returned exactly whenever it is at least as good as the interior candidate.
    """
    K = cfg.K if K is None else K
    if K > cfg.T:
        raise InvalidInput("K exceeds the coherence block")
    f = lambda t: tdd_rate(cfg, t, rho_dl, K)  # noqa: E731
    res = golden_section_max(f, float(K), float(cfg.T), 1e-6 * cfg.T)
    fk = f(float(K))
    if fk >= res.objective:
        res.x, res.objective = K, fk
    res.K = K
    return res


def tdd_joint_opt(cfg: TddConfig, rho_dl: float, max_rounds: int = 50) -> OptimizerResult:
    """Alternate the training length and the number of users until neither moves.

    The user step searches integers ``1 <= K' <= min(K_max, floor(T_t))`` at
    fixed ``T_t`` and keeps the current ``K`` on ties. ``K_max`` is ``M - 1``
    for ZF and ``M`` for ORZF. Each step is nondecreasing in the objective.
    """
    k_cap = cfg.M - 1 if cfg.scheme == "zf" else cfg.M
    K = cfg.K
    step = tdd_train_opt(cfg, rho_dl, K)
    T_t, obj = step.x, step.objective
    history = [(T_t, K, obj)]
    converged = False
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        k_hi = max(1, min(k_cap, math.floor(T_t)))
        best_k, best = K, tdd_rate(cfg, T_t, rho_dl, K) if K <= k_hi else -math.inf
        for k in range(1, k_hi + 1):
            v = tdd_rate(cfg, T_t, rho_dl, k)
            if v > best:
                best_k, best = k, v
        step = tdd_train_opt(cfg, rho_dl, best_k)
        new_t, new_obj = step.x, step.objective
        if new_obj < best:
            new_t, new_obj = T_t, best
        moved = best_k != K or abs(new_t - T_t) > 1e-6 * cfg.T
        K, T_t, obj = best_k, new_t, new_obj
        history.append((T_t, K, obj))
        if not moved:
            converged = True
            break
    if not converged:
        warnings.warn("alternating TDD optimization did not settle; returning best pair",
                      RuntimeWarning, stacklevel=2)
        T_t, K, obj = max(history, key=lambda h: h[2])
    return OptimizerResult(x=T_t, objective=obj, iterations=rounds, converged=converged,
                           K=K, history=history)
