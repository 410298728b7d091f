"""
Minimal regression engine
Ordinary least squares (QR) and ridge-stabilised binary logistic regression (IRLS),
with coefficient standard errors and normal-quantile confidence intervals
"""

from dataclasses import dataclass, field
from typing import Dict, Literal, Sequence, Tuple
import logging

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit
from scipy.stats import norm

from src.errors import InvalidLevel, NoConvergence, NotBinaryResponse, NotConverged, RankDeficient

logger = logging.getLogger(__name__)

INTERCEPT = "(Intercept)"
SEPARATION_THRESHOLD = 15.0
PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class DesignMatrix:
    """
    Named numeric design (intercept first) with its response vector

    `incomparable` lists column names whose contrast differs from the
    layout the design was replayed from.
    """
    names: Tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    warnings: Tuple[str, ...] = ()
    incomparable: Tuple[str, ...] = ()

    def __post_init__(self):
        X = np.array(self.X, dtype=float, copy=True)
        y = np.array(self.y, dtype=float, copy=True).reshape(-1)
        if X.ndim != 2:
            raise ValueError("design matrix must be two-dimensional")
        if X.shape[1] != len(self.names):
            raise ValueError(f"{X.shape[1]} columns but {len(self.names)} names")
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"response length {y.shape[0]} != {X.shape[0]} rows")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "warnings", tuple(self.warnings))
        object.__setattr__(self, "incomparable", tuple(self.incomparable))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class RegressionFit:
    kind: Literal["linear", "logistic"]
    names: Tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    converged: bool
    iterations: int
    separation_detected: bool
    n: int
    p: int
    warnings: Tuple[str, ...] = field(default=())

    def coefficients(self) -> Dict[str, float]:
        return dict(zip(self.names, self.coef.tolist()))

    def standard_errors(self) -> Dict[str, float]:
        return dict(zip(self.names, self.se.tolist()))


def _collinear_columns(R: np.ndarray, names: Sequence[str]) -> Tuple[str, ...]:
    diag = np.abs(np.diag(R))
    if diag.size == 0:
        return ()
    tol = max(R.shape) * np.finfo(float).eps * max(diag.max(), 1.0)
    return tuple(names[j] for j in np.flatnonzero(diag <= tol))


def fit_linear(dm: DesignMatrix) -> RegressionFit:
    """OLS through a reduced QR decomposition; se from sigma^2 (X'X)^-1 with RSS/(n-p)"""
    n, p = dm.n, dm.p
    if n <= p:
        raise RankDeficient(dm.names)

    Q, R = np.linalg.qr(dm.X, mode="reduced")
    collinear = _collinear_columns(R, dm.names)
    if collinear:
        raise RankDeficient(collinear)

    coef = solve_triangular(R, Q.T @ dm.y)
    resid = dm.y - dm.X @ coef
    sigma2 = float(resid @ resid) / (n - p)

    R_inv = solve_triangular(R, np.eye(p))
    cov_diag = sigma2 * np.sum(R_inv * R_inv, axis=1)
    se = np.sqrt(np.maximum(cov_diag, 0.0))

    return RegressionFit(
        kind="linear",
        names=dm.names,
        coef=coef,
        se=se,
        converged=True,
        iterations=1,
        separation_detected=False,
        n=n,
        p=p,
        warnings=dm.warnings,
    )


def _penalized_loglik(X: np.ndarray, y: np.ndarray, beta: np.ndarray, ridge: float) -> float:
    eta = X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)) - 0.5 * ridge * (beta @ beta))


def _indicator_columns(dm: DesignMatrix) -> np.ndarray:
    is_binary = np.all((dm.X == 0.0) | (dm.X == 1.0), axis=0)
    not_intercept = np.array([name != INTERCEPT for name in dm.names])
    return is_binary & not_intercept


def fit_logistic(
    dm: DesignMatrix,
    max_iter: int = 50,
    tol: float = 1e-8,
    ridge: float = 1e-6,
) -> RegressionFit:
    """
    Newton/IRLS maximisation of the ridge-penalised binary log-likelihood

    Converged means max |score| < tol. Standard errors come from the inverse
    of the ridge-augmented information matrix. Raises NoConvergence carrying
    the last iterate when max_iter is reached.
    """
    y = dm.y
    if not np.all((y == 0.0) | (y == 1.0)):
        raise NotBinaryResponse("logistic response must be coded 0/1")

    X = dm.X
    n, p = dm.n, dm.p
    penalty = ridge * np.eye(p)
    beta = np.zeros(p)
    converged = False
    iterations = 0

    for _ in range(max_iter + 1):
        prob = expit(X @ beta)
        score = X.T @ (y - prob) - ridge * beta
        if np.max(np.abs(score), initial=0.0) < tol:
            converged = True
            break
        if iterations == max_iter:
            break

        w = prob * (1.0 - prob)
        H = (X * w[:, None]).T @ X + penalty
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, score, rcond=None)[0]

        # step halving keeps the penalised likelihood non-decreasing
        current = _penalized_loglik(X, y, beta, ridge)
        t = 1.0
        candidate = beta + step
        while t > 1e-6 and _penalized_loglik(X, y, candidate, ridge) < current - 1e-12 * abs(current):
            t *= 0.5
            candidate = beta + t * step
        beta = candidate
        iterations += 1

    prob = expit(X @ beta)
    w = prob * (1.0 - prob)
    H = (X * w[:, None]).T @ X + penalty
    try:
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(H)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))

    separation = bool(np.any(np.abs(beta[_indicator_columns(dm)]) > SEPARATION_THRESHOLD))
    if separation:
        logger.warning(
            "Separation detected in logistic fit",
            extra={"extra_data": {"event_type": "separation", "max_abs_coef": float(np.max(np.abs(beta)))}},
        )

    fit = RegressionFit(
        kind="logistic",
        names=dm.names,
        coef=beta,
        se=se,
        converged=converged,
        iterations=iterations,
        separation_detected=separation,
        n=n,
        p=p,
        warnings=dm.warnings,
    )
    if not converged:
        raise NoConvergence(fit)
    return fit


def predict_proba(fit: RegressionFit, X: np.ndarray) -> np.ndarray:
    """Fitted probabilities of a logistic fit, clamped to [1e-12, 1 - 1e-12]"""
    return np.clip(expit(np.asarray(X, dtype=float) @ fit.coef), PROB_CLAMP, 1.0 - PROB_CLAMP)


def confint(fit: RegressionFit, level: float = 0.95) -> Dict[str, Tuple[float, float]]:
    """Normal-quantile interval coef +/- z * se for every coefficient"""
    if not 0.0 < level < 1.0:
        raise InvalidLevel(f"confidence level must lie in (0, 1), got {level}")
    if not fit.converged:
        raise NotConverged(f"{fit.kind} fit did not converge")

    z = float(norm.ppf(0.5 + level / 2.0))
    half = z * fit.se
    return {
        name: (float(b - h), float(b + h))
        for name, b, h in zip(fit.names, fit.coef, half)
    }
