"""Deterministic equivalents of the per-user SINR under RZF and ZF precoding.

All traces involving the transmit correlation only depend on its spectrum, so
every function here accepts either the correlation matrix itself or a 1-D
array of its eigenvalues.

Notation: ``lam`` are the eigenvalues of Theta, ``l`` the user gains (diagonal
of L), ``tau`` the per-user CSIT distortion amplitudes and ``rho = P / sigma^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidInput, NonConvergence

DENOM_FLOOR = 1e-300


def _spectrum(Theta) -> np.ndarray:
    Theta = np.asarray(Theta)
    if Theta.ndim == 1:
        lam = Theta.astype(float)
    else:
        lam = np.linalg.eigvalsh(Theta)
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise InvalidInput("correlation spectrum must be positive and finite")
    return lam


def _users(L, tau):
    l = np.atleast_1d(np.asarray(L, dtype=float))
    if np.any(l <= 0) or not np.all(np.isfinite(l)):
        raise InvalidInput("user gains must be positive and finite")
    t = np.asarray(tau, dtype=float)
    if t.ndim == 0:
        t = np.full(l.shape, float(t))
    if t.shape != l.shape:
        raise InvalidInput("tau must be scalar or match the number of users")
    if np.any(t < 0) or np.any(t > 1) or not np.all(np.isfinite(t)):
        raise InvalidInput("every tau_k must lie in [0, 1]")
    return l, t


@dataclass(frozen=True)
class DetEquivRzf:
    m0: float
    c: float
    psi0: float
    upsilon0: float
    gamma: np.ndarray
    alpha: float
    residual: float
    iterations: int = 0
    method: str = "iteration"


@dataclass(frozen=True)
class DetEquivZf:
    cbar: float
    c2: float
    psibar0: float
    upsbar0: float
    gamma: np.ndarray
    residual: float = 0.0
    iterations: int = 0
    method: str = "iteration"


# Budget for the plain fixed-point iteration before switching to a bracketed
# root find. The plain map contracts very slowly for square systems at tiny alpha.
_PLAIN_BUDGET = 2000


def _newton_polish(c, F, lam, l, alpha, beta, steps=2):
    """Newton steps on ``c - F(c)``; ``F'(c) = TL * T2``. Only accepted if they help."""
    best, best_res = c, abs(c - F(c))
    for _ in range(steps):
        m = np.mean(lam / (alpha + c * lam))
        t2 = np.mean(lam**2 / (alpha + c * lam) ** 2)
        tl = np.mean(l**2 / (1.0 + m * l) ** 2) / beta
        step = (c - F(c)) / (1.0 - tl * t2)
        if not math.isfinite(step) or c - step <= 0:
            break
        c = c - step
        r = abs(c - F(c))
        if r < best_res:
            best, best_res = c, r
    return best


def _solve_c_rzf(lam, l, alpha, beta, tol, max_iter):
    def F(c):
        m = np.mean(lam / (alpha + c * lam))
        return np.mean(l / (1.0 + m * l)) / beta

    m = 1.0 / alpha
    c_prev = None
    c = 0.0
    budget = min(max_iter, _PLAIN_BUDGET)
    for it in range(1, budget + 1):
        c = np.mean(l / (1.0 + m * l)) / beta
        m = np.mean(lam / (alpha + c * lam))
        if c_prev is not None and abs(c - c_prev) <= tol * c:
            res = abs(c - F(c))
            if res <= tol * c:
                c = _newton_polish(c, F, lam, l, alpha, beta)
                return c, abs(c - F(c)), it, "iteration"
        c_prev = c

    # c - F(c) is increasing with a sign change on [0, mean(l)/beta]
    hi = np.mean(l) / beta
    c = brentq(lambda x: x - F(x), 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    c = _newton_polish(c, F, lam, l, alpha, beta)
    res = abs(c - F(c))
    if not res <= tol * c:
        raise NonConvergence("RZF fixed point for c did not converge", res / c, budget)
    return c, res, budget, "bracketed"


def gamma_rzf_general(Theta, L, tau, alpha: float, rho: float, beta: float,
                      tol: float = 1e-12, max_iter: int = 10_000) -> DetEquivRzf:
    """Deterministic-equivalent SINR of every user under RZF with regularization `alpha`.

    The scalar ``c`` is found by the alternating ``(c_k, m_k)`` iteration seeded
    with ``m_0 = 1/alpha``; convergence is declared on the relative step and the
    relative residual of the defining equation. If the plain iteration has not
    settled after a fixed budget, a bracketed root find takes over.

    Returns
    -------
    DetEquivRzf
        ``residual`` is ``|c - F(c)|`` in absolute terms.
    """
    if not (alpha > 0 and rho > 0 and beta > 0):
        raise InvalidInput("alpha, rho and beta must be positive")
    lam = _spectrum(Theta)
    l, t = _users(L, tau)
    c, res, iters, method = _solve_c_rzf(lam, l, float(alpha), float(beta), tol, max_iter)

    den_m = alpha + c * lam
    m = np.mean(lam / den_m)
    t1 = np.mean(lam / den_m**2)
    t2 = np.mean(lam**2 / den_m**2)
    tl = np.mean(l**2 / (1.0 + m * l) ** 2) / beta
    denom = 1.0 - tl * t2
    if not denom > DENOM_FLOOR:
        raise NonConvergence("RZF auxiliary denominator vanished", denom, iters)
    # The textbook forms c*T1 - alpha*TL*T1^2/denom and m - alpha*T1/denom subtract
    # two O(1/alpha) terms. Using the fixed point they reduce to T1*E/denom and
    # T2*E/denom with E = (1/beta) Tr L (I + m L)^{-2}, which has no cancellation.
    e_l = np.mean(l / (1.0 + m * l) ** 2) / beta
    psi = t1 * e_l / denom
    ups = t2 * e_l / denom

    t2u = t * t
    g = (1.0 + l * m) ** 2
    num = l**2 * (1.0 - t2u) * m**2
    den = l * ups * (1.0 - t2u * (1.0 - g)) + psi / rho * g
    if np.any(~(den > DENOM_FLOOR)):
        raise NonConvergence("RZF SINR denominator vanished", float(np.min(den)), iters)
    return DetEquivRzf(m0=m, c=c, psi0=psi, upsilon0=ups, gamma=num / den, alpha=float(alpha),
                       residual=res, iterations=iters, method=method)


def _omega(rho, tau2):
    return (1.0 - tau2) / (1.0 + tau2 * rho)


def _chi(x, beta):
    """``sqrt((beta-1)^2 x^2 + 2(1+beta) x + 1)`` with ``x = omega * rho``."""
    return math.sqrt((beta - 1.0) ** 2 * x * x + 2.0 * (1.0 + beta) * x + 1.0)


def gamma_rzf_iid(rho: float, tau2: float, beta: float) -> float:
    """Closed-form SINR of optimally regularized RZF with i.i.d. channels and equal gains."""
    x = _omega(rho, tau2) * rho
    if beta == 1:
        return -0.5 + math.sqrt(x + 0.25)
    return 0.5 * x * (beta - 1.0) + 0.5 * _chi(x, beta) - 0.5


def rzf_saturation_iid(tau2: float, beta: float) -> float:
    """High-SNR ceiling of :func:`gamma_rzf_iid` for ``tau2 > 0``."""
    if not 0 < tau2 <= 1:
        raise InvalidInput("saturation needs 0 < tau2 <= 1")
    r = (1.0 - tau2) / tau2
    return 0.5 * r * (beta - 1.0) + 0.5 * _chi(r, beta) - 0.5


def _zf_c_map(lam, beta):
    def h(cb):
        return 1.0 - beta * np.mean(lam / (cb * beta + lam))
    return h


def gamma_zf_general(Theta, L, tau, rho: float, beta: float,
                     tol: float = 1e-12, max_iter: int = 10_000) -> DetEquivZf:
    """Deterministic-equivalent SINR of every user under ZF (needs ``beta > 1``).

    ``cbar`` is iterated from ``cbar_0 = 1``; if the iteration is still moving
    after its budget, the root of ``1 - beta Tr Theta (cbar beta I + Theta)^{-1}``
    is bracketed on ``(0, lambda_max]`` instead, which excludes the trivial
    solution ``cbar = 0``.
    """
    if not beta > 1:
        raise InvalidInput(f"ZF deterministic equivalent needs beta > 1, got {beta}")
    if not rho > 0:
        raise InvalidInput("rho must be positive")
    lam = _spectrum(Theta)
    l, t = _users(L, tau)

    def F(cb):
        return np.mean(lam / (1.0 + lam / (cb * beta)))

    cb = 1.0
    method = "iteration"
    iters = 0
    converged = False
    for iters in range(1, min(max_iter, _PLAIN_BUDGET) + 1):
        new = F(cb)
        step = abs(new - cb)
        cb = new
        if step <= tol * cb and abs(cb - F(cb)) <= tol * cb:
            converged = True
            break
    if not converged:
        cb = brentq(_zf_c_map(lam, beta), 1e-300, lam.max(), xtol=1e-300,
                    rtol=4 * np.finfo(float).eps, maxiter=500)
        method = "bracketed"
    res = abs(cb - F(cb))
    if not res <= tol * cb:
        raise NonConvergence("ZF fixed point for cbar did not converge", res / cb, iters)

    c2 = np.mean(lam**2 / (1.0 + lam / (cb * beta)) ** 2)
    ratio = c2 / cb**2
    inv_l = np.mean(1.0 / l)
    psi = inv_l / (beta * cb)
    if not beta - ratio > DENOM_FLOOR:
        raise NonConvergence("ZF auxiliary denominator vanished", beta - ratio, iters)
    ups = ratio / (beta - ratio) * inv_l
    t2u = t * t
    den = l * t2u * ups + psi / rho
    return DetEquivZf(cbar=cb, c2=c2, psibar0=psi, upsbar0=ups, gamma=(1.0 - t2u) / den,
                      residual=res, iterations=iters, method=method)


def gamma_zf_iid(rho: float, tau2: float, beta: float) -> float:
    """``(1 - tau2) / (tau2 + 1/rho) * (beta - 1)``."""
    if not beta > 1:
        raise InvalidInput("ZF needs beta > 1")
    return (1.0 - tau2) / (tau2 + 1.0 / rho) * (beta - 1.0)


def sinr_gap_orzf_zf(rho: float, tau2: float, beta: float) -> float:
    """SINR advantage of ORZF over ZF in the i.i.d. case.

    Evaluated as ``[(2(1+beta)x + 1) / (chi + x(beta-1)) - 1] / 2`` with
    ``x = omega rho``, which avoids the cancellation of the direct difference.
    """
    if not beta > 1:
        raise InvalidInput("the gap is defined for beta > 1")
    x = _omega(rho, tau2) * rho
    return 0.5 * ((2.0 * (1.0 + beta) * x + 1.0) / (_chi(x, beta) + x * (beta - 1.0)) - 1.0)


def sinr_gap_limit(tau2: float, beta: float) -> float:
    """Limit of :func:`sinr_gap_orzf_zf` as ``rho -> inf``.

    ``1/(beta-1)`` for perfect CSIT, otherwise the gap formula evaluated at
    ``omega rho = (1 - tau2)/tau2``.
    """
    if not beta > 1:
        raise InvalidInput("the gap is defined for beta > 1")
    if tau2 == 0:
        return 1.0 / (beta - 1.0)
    r = (1.0 - tau2) / tau2
    return 0.5 * ((2.0 * (1.0 + beta) * r + 1.0) / (_chi(r, beta) + r * (beta - 1.0)) - 1.0)


def sum_rate_de(gammas_de) -> float:
    return float(np.sum(np.log2(1.0 + np.asarray(gammas_de, dtype=float))))
