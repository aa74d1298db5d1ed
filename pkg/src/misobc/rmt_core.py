"""Fixed-point solvers and scalar special functions.

Everything here works with the normalized trace ``Tr A = tr(A) / N``.
The central object is the pair ``(e, c)`` solving

    e = Tr R (c R + S - z I)^{-1},
    c = (1/beta) Tr T (I + e T)^{-1},

from which the deterministic equivalent ``m = Tr Q (c R + S - z I)^{-1}``
of the Stieltjes-type functional ``Tr Q (B - z I)^{-1}`` follows.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import DomainError, InvalidModel, NonConvergence

_PSD_SLACK = 1e-10


def _as_hermitian(name, A):
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidModel(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidModel(f"{name} has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(A))) if A.size else 1.0)
    if np.max(np.abs(A - A.conj().T), initial=0.0) > 1e-10 * scale:
        raise InvalidModel(f"{name} is not Hermitian")
    return A


def _min_eig(A):
    return float(np.linalg.eigvalsh(A).min()) if A.size else 0.0


@dataclass
class GeneralDeModel:
    """Inputs of the generic deterministic-equivalent fixed point.

    Parameters
    ----------
    R, S : (N, N) array_like
        Hermitian nonnegative-definite.
    Q : (N, N) array_like
        Hermitian positive-definite.
    T : array_like
        Either the length-n diagonal or an (n, n) diagonal matrix.
    z : float
        Evaluation point, strictly negative.
    beta : float, optional
        ``N / n``. Inferred from the shapes when omitted.
    """

    R: np.ndarray
    S: np.ndarray
    Q: np.ndarray
    T: np.ndarray
    z: float
    beta: Optional[float] = None

    def __post_init__(self):
        T = np.asarray(self.T)
        if T.ndim == 2:
            if T.shape[0] != T.shape[1] or np.any(T - np.diag(np.diag(T)) != 0):
                raise InvalidModel("T must be diagonal")
            T = np.diag(T)
        self.T = np.real_if_close(np.asarray(T, dtype=complex if np.iscomplexobj(T) else float))
        if self.beta is None:
            n = self.T.shape[0]
            self.beta = np.asarray(self.R).shape[0] / n if n else math.inf

    @property
    def N(self) -> int:
        return np.asarray(self.R).shape[0]

    def validate(self) -> None:
        R = _as_hermitian("R", self.R)
        S = _as_hermitian("S", self.S)
        Q = _as_hermitian("Q", self.Q)
        if not (R.shape == S.shape == Q.shape):
            raise InvalidModel("R, S, Q must share a shape")
        for name, A in (("R", R), ("S", S)):
            if _min_eig(A) < -_PSD_SLACK * max(1.0, np.abs(A).max(initial=0.0)):
                raise InvalidModel(f"{name} is not nonnegative definite")
        if _min_eig(Q) <= 0:
            raise InvalidModel("Q is not positive definite")
        if np.iscomplexobj(self.T) or np.any(self.T < 0) or not np.all(np.isfinite(self.T)):
            raise InvalidModel("T must have real nonnegative diagonal entries")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise InvalidModel(f"beta must be positive and finite, got {self.beta}")
        if not (self.z < 0):
            raise InvalidModel(f"z must be strictly negative, got {self.z}")


@dataclass(frozen=True)
class FixedPointSolution:
    e: float
    c: float
    m: float
    iterations: int
    residual: float


def _c_of_e(t, beta, e):
    if t.size == 0:
        return 0.0
    return float(np.mean(t / (1.0 + e * t))) / beta


def _resolvent_traces(R, S, Q, z, c, N):
    A = c * R + S - z * np.eye(N)
    factor = cho_factor(A, lower=True)
    e = np.trace(cho_solve(factor, R)).real / N
    m = np.trace(cho_solve(factor, Q)).real / N
    return e, m


def solve_e(model: GeneralDeModel, tol: float = 1e-12, max_iter: int = 10_000) -> FixedPointSolution:
    """Solve the ``(e, c)`` fixed point by plain iteration from ``e0 = -1/z``.

    Stops once both the step ``|e_{k+1} - e_k|`` and the residual of the
    defining equation at the returned ``e`` are below `tol`.

    Raises
    ------
    InvalidModel
        If a matrix or scalar invariant fails.
    NonConvergence
        If `max_iter` iterations pass without meeting `tol`.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    model.validate()
    R = np.asarray(model.R)
    S = np.asarray(model.S)
    Q = np.asarray(model.Q)
    t = np.asarray(model.T, dtype=float)
    N, z, beta = model.N, float(model.z), float(model.beta)

    e = -1.0 / z
    residual = math.inf
    try:
        for it in range(1, max_iter + 1):
            c = _c_of_e(t, beta, e)
            e_new, _ = _resolvent_traces(R, S, Q, z, c, N)
            step = abs(e_new - e)
            e = e_new
            if step <= tol:
                c = _c_of_e(t, beta, e)
                e_check, m = _resolvent_traces(R, S, Q, z, c, N)
                residual = abs(e - e_check)
                if residual <= tol:
                    return FixedPointSolution(e=e, c=c, m=m, iterations=it, residual=residual)
            residual = step
    except LinAlgError as exc:  # cR + S - zI lost definiteness; only possible with bad input
        raise InvalidModel(f"resolvent matrix not positive definite: {exc}") from exc
    raise NonConvergence("fixed point for e(z) did not converge", residual, max_iter)


def de_derivative_m(model: GeneralDeModel, sol: Optional[FixedPointSolution] = None,
                    h: Optional[float] = None, tol: float = 1e-12) -> float:
    """Central finite-difference estimate of ``dm/dz`` at ``model.z``.

    Only a fallback; the RZF and ZF equivalents use closed forms. The default
    step is ``1e-4 |z|``. `sol` is accepted for interface symmetry and is not
    needed by the computation.
    """
    z = float(model.z)
    if h is None:
        h = 1e-4 * abs(z)
    if not (0 < h < abs(z)):
        raise ValueError("step h must satisfy 0 < h < |z|")
    plus = solve_e(dataclasses.replace(model, z=z + h), tol=tol)
    minus = solve_e(dataclasses.replace(model, z=z - h), tol=tol)
    return (plus.m - minus.m) / (2.0 * h)


_INV_E = math.exp(-1.0)


def lambert_w0(x: float) -> float:
    """Principal branch of the Lambert W function, ``w e^w = x`` with ``w >= -1``.

    Halley iteration started from the branch-point series when ``x`` is near
    ``-1/e``, from ``log1p(x)`` for moderate ``x`` and from the two-term
    logarithmic asymptote for large ``x``.
    """
    x = float(x)
    if math.isnan(x):
        return math.nan
    if x == math.inf:
        return math.inf
    q = math.e * x + 1.0
    if q < -4 * np.finfo(float).eps:
        raise DomainError(f"lambert_w0 undefined for x={x!r} < -1/e")
    if q <= 0.0:
        return -1.0
    if x == 0.0:
        return 0.0

    if x < -0.25:
        p = math.sqrt(2.0 * q)
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    elif x < 3.0:
        w = math.log1p(x)
    else:
        l1 = math.log(x)
        l2 = math.log(l1)
        w = l1 - l2 + l2 / l1

    for _ in range(64):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        if denom == 0.0:
            break
        w_new = w - f / denom
        if abs(w_new - w) <= 4 * np.finfo(float).eps * (1.0 + abs(w_new)):
            w = w_new
            break
        w = w_new
    return max(w, -1.0)


def mp_stieltjes(alpha: float, beta: float) -> float:
    """Marchenko-Pastur Stieltjes transform ``m(-alpha)`` for load ``beta = M/K``.

    Returns ``[beta(1-alpha) - 1 + d] / (2 alpha beta)`` with
    ``d = sqrt(beta^2 alpha^2 + 2 alpha beta (1+beta) + (1-beta)^2)``.
    """
    if not (alpha > 0 and beta > 0):
        raise DomainError("mp_stieltjes needs alpha > 0 and beta > 0")
    d = math.sqrt(beta * beta * alpha * alpha + 2 * alpha * beta * (1 + beta) + (1 - beta) ** 2)
    num = beta * (1 - alpha) - 1 + d
    # For large alpha the numerator cancels; use the conjugate form instead.
    if num < 1e-3 * d:
        num = (d * d - (beta * (1 - alpha) - 1) ** 2) / (d - (beta * (1 - alpha) - 1))
    return num / (2 * alpha * beta)
