"""First-stage estimation: logistic dose-toxicity fits and derived MTDs.

Fits the two-parameter model ``logit(p) = beta0 + beta1 * x`` to grouped
binomial data by plain maximum likelihood, by Firth's bias-reduced
likelihood (Jeffreys penalty), or by FLAC (Firth's logistic regression
with added covariate).  The maximum tolerated dose for a target toxicity
``pi*`` is ``x* = (logit(pi*) - beta0) / beta1`` with a delta-method
standard error; that pair is the input carried into the meta-analysis
stage.

The fitter works on arbitrary (x, n, r, weight) rows, so grouped data and
their per-patient Bernoulli expansion give identical results for all
three methods.
"""

from __future__ import annotations

import dataclasses
import enum
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .errors import NumericalError, StructuralDataError, ValidationError
from .study_data import DoseToxicityDataset

DIVERGENCE_THRESHOLD = 1e4
MAX_STEP_HALVINGS = 20


class FitMethod(enum.Enum):
    PLAIN_ML = "plain"
    FIRTH = "firth"
    FLAC = "flac"


class DoseTransform(enum.Enum):
    IDENTITY = "identity"
    LOG = "log"


@dataclass(frozen=True)
class FitConfig:
    """Settings for one logistic fit (method, dose scale, target, optimizer)."""

    method: FitMethod = FitMethod.FLAC
    dose_transform: DoseTransform = DoseTransform.LOG
    target_toxicity: float = 0.33
    tolerance: float = 1e-8
    max_iterations: int = 100

    def __post_init__(self):
        if not (0.0 < self.target_toxicity < 1.0):
            raise ValidationError("target_toxicity must be in (0, 1)")
        if self.tolerance <= 0 or self.max_iterations <= 0:
            raise ValidationError("tolerance and max_iterations must be positive")


@dataclass(frozen=True, eq=False)
class FitResult:
    """Fitted coefficients on the transformed-dose scale.

    ``covariance`` is the inverse Fisher information (X'WX with
    W = n p (1-p)) evaluated at the final coefficients; for FLAC the
    augmentation covariate is profiled out (sub-block of the inverse of
    the three-parameter information).
    """

    beta0: float
    beta1: float
    covariance: np.ndarray
    converged: bool
    separation_detected: bool
    method: FitMethod
    transform: DoseTransform = DoseTransform.IDENTITY
    n_iterations: int = 0


@dataclass(frozen=True)
class MtdEstimate:
    """Point estimate of the MTD on the transformed-dose scale, with s.e."""

    estimate: float
    std_err: float
    study_id: str = ""


def _log_binomial_terms(eta):
    # log p and log(1-p) computed without catastrophic cancellation
    log_p = -np.logaddexp(0.0, -eta)
    log_q = -np.logaddexp(0.0, eta)
    return log_p, log_q


def _loglik(X, n, r, w, beta):
    eta = X @ beta
    log_p, log_q = _log_binomial_terms(eta)
    return float(np.sum(w * (r * log_p + (n - r) * log_q)))


def _information(X, W):
    return (X * W[:, None]).T @ X


def _hat_diagonal(X, W, info):
    # diagonal of W^(1/2) X (X'WX)^-1 X' W^(1/2), one entry per row
    sol = np.linalg.solve(info, X.T)
    quad = np.einsum("ij,ji->i", X, sol)
    return W * quad


def _objective(X, n, r, w, beta, firth):
    value = _loglik(X, n, r, w, beta)
    if firth:
        eta = X @ beta
        p = expit(eta)
        W = w * n * p * (1.0 - p)
        sign, logdet = np.linalg.slogdet(_information(X, W))
        if sign <= 0:
            return -np.inf
        value += 0.5 * logdet
    return value


def _usable_inverse(info):
    """Inverse of the information matrix, or None once it is numerically singular."""
    if not np.all(np.isfinite(info)) or np.linalg.cond(info) > 1e12:
        return None
    try:
        inv = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(inv)) or np.any(np.diag(inv) <= 0):
        return None
    return inv


def _newton_fit(X, n, r, w, firth, start, tolerance, max_iterations):
    """Damped Newton iteration for (penalized) weighted binomial ML.

    Returns (beta, covariance, converged, diverged, iterations).  On loss of
    an invertible information matrix (separated data driven to the boundary)
    the last valid iterate and covariance are returned with both flags set
    accordingly rather than raising.
    """
    beta = np.asarray(start, dtype=float).copy()
    cov = np.full((X.shape[1], X.shape[1]), np.nan)
    converged = False
    diverged = False
    objective = _objective(X, n, r, w, beta, firth)
    last_step = np.inf
    iteration = 0
    for iteration in range(1, max_iterations + 1):
        eta = X @ beta
        p = expit(eta)
        W = w * n * p * (1.0 - p)
        info = _information(X, W)
        new_cov = _usable_inverse(info)
        if new_cov is None:
            diverged = True
            break
        cov = new_cov
        residual = w * (r - n * p)
        if firth:
            h = _hat_diagonal(X, W, info)
            residual = residual + h * (0.5 - p)
        score = X.T @ residual
        if np.max(np.abs(score)) < tolerance and last_step < tolerance:
            converged = True
            break
        step = cov @ score
        # allow float-level objective noise so the final micro-steps are not
        # rejected as "worse"
        floor = objective - 1e-10 * (1.0 + abs(objective))
        scale = 1.0
        candidate = beta + step
        cand_objective = _objective(X, n, r, w, candidate, firth)
        halvings = 0
        while cand_objective < floor and halvings < MAX_STEP_HALVINGS:
            scale *= 0.5
            candidate = beta + scale * step
            cand_objective = _objective(X, n, r, w, candidate, firth)
            halvings += 1
        if cand_objective < floor:
            break  # stalled: no acceptable step found
        last_step = float(np.max(np.abs(candidate - beta)))
        beta = candidate
        objective = cand_objective
        if np.max(np.abs(beta)) > DIVERGENCE_THRESHOLD:
            diverged = True
            break
    return beta, cov, converged, diverged, iteration


def _start_values(n, r, w, n_params):
    total_n = float(np.sum(w * n))
    total_r = float(np.sum(w * r))
    rate = total_r / total_n if total_n > 0 else 0.5
    rate = min(max(rate, 0.01), 0.99)
    start = np.zeros(n_params)
    start[0] = logit(rate)
    start[1] = 0.1
    return start


def fit_logistic_arrays(
    x,
    n,
    r,
    method: FitMethod = FitMethod.FLAC,
    weights=None,
    tolerance: float = 1e-8,
    max_iterations: int = 100,
) -> FitResult:
    """Fit ``logit(p) = beta0 + beta1 x`` to rows of (x, n events of r) data.

    Rows may repeat x values (per-patient data) and may carry fractional
    ``weights``; grouped and expanded representations of the same data give
    identical fits.
    """
    x = np.asarray(x, dtype=float)
    n = np.asarray(n, dtype=float)
    r = np.asarray(r, dtype=float)
    w = np.ones_like(n) if weights is None else np.asarray(weights, dtype=float)
    if len(np.unique(x[(n * w) > 0])) < 2:
        raise StructuralDataError("need at least 2 distinct doses with patients")
    if float(np.sum(n * w)) < 2:
        raise StructuralDataError("need at least 2 patients in total")
    X = np.column_stack([np.ones_like(x), x])
    start = _start_values(n, r, w, 2)

    if method in (FitMethod.PLAIN_ML, FitMethod.FIRTH):
        firth = method is FitMethod.FIRTH
        beta, cov, converged, diverged, iters = _newton_fit(
            X, n, r, w, firth, start, tolerance, max_iterations
        )
        # plain ML has no finite optimum under separation: treat any failure
        # to converge as a divergence signal
        separated = diverged or (method is FitMethod.PLAIN_ML and not converged)
        return FitResult(
            beta0=float(beta[0]),
            beta1=float(beta[1]),
            covariance=cov,
            converged=converged,
            separation_detected=separated,
            method=method,
            n_iterations=iters,
        )

    if method is not FitMethod.FLAC:
        raise ValidationError(f"unknown method {method!r}")

    # FLAC stage 1: Firth fit provides the hat diagonals for the augmentation.
    beta_f, _, conv_f, div_f, iters_f = _newton_fit(
        X, n, r, w, True, start, tolerance, max_iterations
    )
    p_f = expit(X @ beta_f)
    W_f = w * n * p_f * (1.0 - p_f)
    h = _hat_diagonal(X, W_f, _information(X, W_f))

    # Stage 2: plain ML on the augmented data with indicator covariate g.
    # Each group contributes two pseudo-groups (observed and flipped counts)
    # carrying half its hat mass; per-row weight h/(2n) equals h_i/2 per
    # patient, which keeps grouped and expanded fits identical.
    with np.errstate(divide="ignore", invalid="ignore"):
        pseudo_w = np.where(n > 0, w * h / (2.0 * np.maximum(n, 1.0)), 0.0)
    x_aug = np.concatenate([x, x, x])
    g_aug = np.concatenate([np.zeros_like(x), np.ones_like(x), np.ones_like(x)])
    n_aug = np.concatenate([n, n, n])
    r_aug = np.concatenate([r, r, n - r])
    w_aug = np.concatenate([w, pseudo_w, pseudo_w])
    X_aug = np.column_stack([np.ones_like(x_aug), x_aug, g_aug])
    start3 = np.zeros(3)
    start3[:2] = _start_values(n, r, w, 2)
    beta3, cov3, converged, diverged, iters = _newton_fit(
        X_aug, n_aug, r_aug, w_aug, False, start3, tolerance, max_iterations
    )
    return FitResult(
        beta0=float(beta3[0]),
        beta1=float(beta3[1]),
        covariance=cov3[:2, :2],
        converged=converged and conv_f,
        separation_detected=diverged or div_f,
        method=FitMethod.FLAC,
        n_iterations=iters_f + iters,
    )


def transform_dose(dose, transform: DoseTransform):
    dose = np.asarray(dose, dtype=float)
    if transform is DoseTransform.LOG:
        return np.log(dose)
    return dose


def fit_logistic(ds: DoseToxicityDataset, cfg: FitConfig) -> FitResult:
    """Fit the configured logistic model to one study's dose groups."""
    x = transform_dose(ds.doses, cfg.dose_transform)
    result = fit_logistic_arrays(
        x,
        ds.n_patients,
        ds.n_dlt,
        method=cfg.method,
        tolerance=cfg.tolerance,
        max_iterations=cfg.max_iterations,
    )
    return dataclasses.replace(result, transform=cfg.dose_transform)


def mtd_from_fit(fit: FitResult, cfg: FitConfig, study_id: str = "") -> MtdEstimate:
    """MTD point estimate and delta-method s.e. on the transformed-dose scale.

    ``x* = (logit(pi*) - beta0) / beta1``; the delta gradient is
    ``(-1/beta1, -x*/beta1)``.
    """
    if fit.beta1 == 0.0:
        raise NumericalError("slope is zero: MTD is undefined")
    estimate = (logit(cfg.target_toxicity) - fit.beta0) / fit.beta1
    grad = np.array([-1.0 / fit.beta1, -estimate / fit.beta1])
    cov = np.asarray(fit.covariance, dtype=float)
    if not np.all(np.isfinite(cov)):
        warnings.warn(
            f"non-finite covariance for study {study_id!r}; "
            "propagating a non-finite standard error",
            RuntimeWarning,
            stacklevel=2,
        )
        return MtdEstimate(estimate=float(estimate), std_err=float("nan"), study_id=study_id)
    variance = float(grad @ cov @ grad)
    std_err = float(np.sqrt(max(variance, 0.0)))
    return MtdEstimate(estimate=float(estimate), std_err=std_err, study_id=study_id)


def estimate_mtds(datasets, cfg: FitConfig):
    """Fit each dataset and return (fits, MTD estimates) in input order."""
    fits = []
    estimates = []
    for ds in datasets:
        fit = fit_logistic(ds, cfg)
        fits.append(fit)
        estimates.append(mtd_from_fit(fit, cfg, study_id=ds.study_id))
    return fits, estimates


def dlt_probability(fit: FitResult, x) -> float:
    """DLT probability at transformed dose x under the fitted curve."""
    return expit(fit.beta0 + fit.beta1 * np.asarray(x, dtype=float))


def emax_convert(fit: FitResult) -> tuple[float, float]:
    """Map a log-dose logistic fit to (E50, Hill exponent).

    With x = log(dose), the fitted curve equals a full-maximum Emax model
    with exponent n = beta1 and E50 = exp(-beta0 / n).
    """
    if fit.transform is not DoseTransform.LOG:
        raise ValidationError("Emax conversion requires a log-dose fit")
    if fit.beta1 == 0.0:
        raise NumericalError("slope is zero: E50 is undefined")
    hill = fit.beta1
    e50 = float(np.exp(-fit.beta0 / hill))
    return e50, float(hill)
