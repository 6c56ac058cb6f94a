"""Bayesian random-effects synthesis of per-study MTD estimates.

Model: each study's log-MTD estimate y_i with standard error s_i is treated
as Normal(theta_i, s_i^2); the true study-level MTDs theta_i are
Normal(mu, tau^2).  Inference integrates mu out analytically (improper
uniform or conjugate normal prior) and handles the heterogeneity tau on a
deterministic linear grid, so all summaries are semi-analytic mixtures of
normals over tau -- no Monte Carlo noise, identical results on every run.

Provided estimands: the overall mean mu ("combined"), a future study's MTD
("prediction"), each study's own MTD given all data ("shrinkage"),
per-study contribution weights, a sensitivity filter on the standard
errors, and a two-level bridging analysis that borrows strength across
study groups via shrinkage.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ndtr

from .dose_response import MtdEstimate
from .errors import ImproperPosteriorError, ValidationError

GRID_POINTS = 1601
TAIL_LOG_RATIO = math.log(1e-8)
_QUANTILE_ITERATIONS = 120


@dataclass(frozen=True)
class NormalPrior:
    """Proper normal prior (used for the overall mean)."""

    mean: float
    sd: float

    def __post_init__(self):
        if not (self.sd > 0):
            raise ValidationError("normal prior sd must be positive")


@dataclass(frozen=True)
class HalfNormalPrior:
    """Half-normal prior on tau >= 0: p(tau) = sqrt(2/pi)/scale * exp(-tau^2/(2 scale^2))."""

    scale: float

    def __post_init__(self):
        if not (self.scale > 0):
            raise ValidationError("half-normal prior scale must be positive")

    def log_density(self, tau):
        tau = np.asarray(tau, dtype=float)
        return (
            0.5 * math.log(2.0 / math.pi)
            - math.log(self.scale)
            - 0.5 * (tau / self.scale) ** 2
        )


@dataclass(frozen=True)
class PriorSpec:
    """Priors for the overall mean and the heterogeneity; None = improper uniform."""

    mu: Optional[NormalPrior] = None
    tau: Optional[HalfNormalPrior] = None


UNIFORM_PRIORS = PriorSpec()


@dataclass(frozen=True)
class MetaInput:
    """The (y_i, s_i) pairs entering a meta-analysis."""

    y: np.ndarray
    s: np.ndarray
    study_ids: tuple[str, ...]

    @classmethod
    def from_estimates(cls, estimates: Sequence[MtdEstimate]) -> "MetaInput":
        y = np.array([e.estimate for e in estimates], dtype=float)
        s = np.array([e.std_err for e in estimates], dtype=float)
        ids = tuple(e.study_id for e in estimates)
        return cls(y=y, s=s, study_ids=ids)

    @classmethod
    def from_arrays(cls, y, s, study_ids=None) -> "MetaInput":
        y = np.asarray(y, dtype=float)
        s = np.asarray(s, dtype=float)
        if study_ids is None:
            study_ids = tuple(f"study_{i + 1}" for i in range(len(y)))
        return cls(y=y, s=s, study_ids=tuple(study_ids))

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        s = np.asarray(self.s, dtype=float)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "s", s)
        if y.ndim != 1 or y.shape != s.shape or len(self.study_ids) != len(y):
            raise ValidationError("y, s and study_ids must have matching length")
        if len(y) < 1:
            raise ValidationError("need at least one study")
        if not np.all(np.isfinite(y)):
            raise ValidationError("estimates must be finite")
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise ValidationError("standard errors must be positive and finite")

    @property
    def k(self) -> int:
        return len(self.y)


@dataclass(frozen=True, eq=False)
class TauGridPosterior:
    """Marginal posterior of tau on a grid, with the conditional mean model.

    ``mass`` are trapezoid-weighted normalized point masses (summing to 1);
    ``cond_mean``/``cond_sd`` give mu | tau, y ~ Normal per grid point.
    A single-point grid represents a fixed-tau (point mass) analysis.
    """

    grid: np.ndarray
    density: np.ndarray
    mass: np.ndarray
    cond_mean: np.ndarray
    cond_sd: np.ndarray


@dataclass(frozen=True)
class PosteriorSummary:
    median: float
    mean: float
    sd: float
    lower: float
    upper: float
    shortest_lower: float = float("nan")
    shortest_upper: float = float("nan")
    level: float = 0.95


@dataclass(frozen=True, eq=False)
class MetaResult:
    mu: PosteriorSummary
    tau: PosteriorSummary
    prediction: PosteriorSummary
    shrinkage: tuple[PosteriorSummary, ...]
    weights: np.ndarray
    study_ids: tuple[str, ...]


def _trapezoid_weights(grid):
    if len(grid) == 1:
        return np.array([1.0])
    tw = np.zeros_like(grid)
    d = np.diff(grid)
    tw[:-1] += 0.5 * d
    tw[1:] += 0.5 * d
    return tw


def _log_tau_density(tau, inp: MetaInput, prior: PriorSpec):
    """Unnormalized log marginal density of tau plus the conditional mu moments."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    v = inp.s[None, :] ** 2 + tau[:, None] ** 2
    w = 1.0 / v
    sum_w = w.sum(axis=1)
    sum_wy = w @ inp.y
    quad_edge = w @ (inp.y**2)
    if prior.mu is not None:
        w0 = 1.0 / prior.mu.sd**2
        sum_w = sum_w + w0
        sum_wy = sum_wy + w0 * prior.mu.mean
        quad_edge = quad_edge + w0 * prior.mu.mean**2
    mu_hat = sum_wy / sum_w
    s_mu = np.sqrt(1.0 / sum_w)
    quad = quad_edge - sum_wy**2 / sum_w
    log_dens = -0.5 * np.log(v).sum(axis=1) - 0.5 * np.log(sum_w) - 0.5 * quad
    if prior.tau is not None:
        log_dens = log_dens + prior.tau.log_density(tau)
    return log_dens, mu_hat, s_mu


def _tail_is_negligible(upper, inp, prior, probe_points=257):
    probe = np.linspace(0.0, upper, probe_points)
    log_dens, _, _ = _log_tau_density(probe, inp, prior)
    peak = np.max(log_dens)
    if not np.isfinite(peak):
        return False
    return log_dens[-1] - peak <= TAIL_LOG_RATIO


def _adaptive_tau_max(inp, prior):
    # start from the largest standard error, expand by doubling until the
    # density tail is negligible, then contract so the grid actually
    # resolves the bulk (inputs with one huge s_i would otherwise waste
    # nearly the whole grid on empty tail)
    t = float(np.max(inp.s))
    doublings = 0
    while not _tail_is_negligible(t, inp, prior):
        t *= 2.0
        doublings += 1
        if doublings >= 30:
            warnings.warn(
                "heterogeneity posterior has an extremely heavy tail; grid "
                "truncated -- consider a proper heterogeneity prior",
                RuntimeWarning,
                stacklevel=3,
            )
            break
    for _ in range(60):
        if not _tail_is_negligible(t / 2.0, inp, prior):
            break
        t /= 2.0
    return t


def posterior(inp: MetaInput, prior: PriorSpec, grid=None) -> TauGridPosterior:
    """Marginal posterior of tau with conditional mu moments per grid point.

    With no explicit ``grid``, a linear grid of 1601 points from 0 to an
    adaptively chosen tau_max is used.  An improper uniform heterogeneity
    prior requires k >= 2 (k = 1 is rejected; k = 2 draws a warning since
    the posterior is then barely or not integrable).
    """
    if prior.tau is None:
        if inp.k == 1:
            raise ImproperPosteriorError(
                "a single study with an improper uniform heterogeneity prior "
                "yields an improper posterior; use a proper prior (e.g. half-normal)"
            )
        if inp.k == 2:
            warnings.warn(
                "two studies with an improper uniform heterogeneity prior: "
                "a proper prior (e.g. half-normal) is recommended",
                UserWarning,
                stacklevel=2,
            )
    if grid is None:
        grid = np.linspace(0.0, _adaptive_tau_max(inp, prior), GRID_POINTS)
    else:
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 1 or len(grid) < 1 or np.any(np.diff(grid) <= 0):
            raise ValidationError("grid must be ascending")
        if grid[0] < 0:
            raise ValidationError("tau grid must be non-negative")
    log_dens, mu_hat, s_mu = _log_tau_density(grid, inp, prior)
    log_dens = log_dens - np.max(log_dens)
    raw = np.exp(log_dens)
    tw = _trapezoid_weights(grid)
    norm = float(raw @ tw)
    density = raw / norm
    mass = density * tw
    mass = mass / mass.sum()
    return TauGridPosterior(
        grid=grid, density=density, mass=mass, cond_mean=mu_hat, cond_sd=s_mu
    )


def posterior_at_fixed_tau(inp: MetaInput, tau: float, mu_prior: Optional[NormalPrior] = None) -> TauGridPosterior:
    """Degenerate point-mass posterior at a fixed heterogeneity value."""
    if tau < 0:
        raise ValidationError("tau must be non-negative")
    prior = PriorSpec(mu=mu_prior, tau=None)
    _, mu_hat, s_mu = _log_tau_density(np.array([tau]), inp, prior)
    return TauGridPosterior(
        grid=np.array([float(tau)]),
        density=np.array([1.0]),
        mass=np.array([1.0]),
        cond_mean=mu_hat,
        cond_sd=s_mu,
    )


def _mixture_cdf_rows(x, means, sds, mass):
    # x: (R, P); means/sds: (R, G); mass: (G,) -> (R, P)
    z = (x[:, :, None] - means[:, None, :]) / sds[:, None, :]
    return ndtr(z) @ mass


def _mixture_quantiles_rows(means, sds, mass, probs):
    """Quantiles of normal mixtures, vectorized over rows and probabilities."""
    means = np.atleast_2d(means)
    sds = np.atleast_2d(sds)
    probs = np.asarray(probs, dtype=float)
    rows = means.shape[0]
    lo = np.min(means - 20.0 * sds, axis=1)[:, None] * np.ones(len(probs))
    hi = np.max(means + 20.0 * sds, axis=1)[:, None] * np.ones(len(probs))
    for _ in range(_QUANTILE_ITERATIONS):
        mid = 0.5 * (lo + hi)
        above = _mixture_cdf_rows(mid, means, sds, mass) < probs[None, :]
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
        if np.max(hi - lo) <= 1e-13 * max(1.0, float(np.max(np.abs(hi)))):
            break
    return 0.5 * (lo + hi)


def _mixture_shortest_interval(means, sds, mass, level=0.95):
    def width(t):
        q = _mixture_quantiles_rows(means, sds, mass, [t, t + level])[0]
        return q[1] - q[0]

    res = minimize_scalar(width, bounds=(0.0, 1.0 - level), method="bounded",
                          options={"xatol": 1e-6})
    t = float(res.x)
    q = _mixture_quantiles_rows(means, sds, mass, [t, t + level])[0]
    return float(q[0]), float(q[1])


def _mixture_summary(means, sds, mass, shortest=True, level=0.95) -> PosteriorSummary:
    means = np.asarray(means, dtype=float)
    sds = np.asarray(sds, dtype=float)
    mean = float(mass @ means)
    var = float(mass @ (sds**2 + means**2) - mean**2)
    alpha = 0.5 * (1.0 - level)
    q = _mixture_quantiles_rows(means, sds, mass, [alpha, 0.5, 1.0 - alpha])[0]
    if shortest:
        s_lo, s_hi = _mixture_shortest_interval(means, sds, mass, level)
    else:
        s_lo = s_hi = float("nan")
    return PosteriorSummary(
        median=float(q[1]),
        mean=mean,
        sd=math.sqrt(max(var, 0.0)),
        lower=float(q[0]),
        upper=float(q[2]),
        shortest_lower=s_lo,
        shortest_upper=s_hi,
        level=level,
    )


def combined_estimate(post: TauGridPosterior, shortest=True) -> PosteriorSummary:
    """Summary of the overall mean mu (tau-mixture of its conditional normals)."""
    return _mixture_summary(post.cond_mean, post.cond_sd, post.mass, shortest)


def prediction(post: TauGridPosterior, shortest=True) -> PosteriorSummary:
    """Summary for a new study's MTD: conditional variance widened by tau^2."""
    sds = np.sqrt(post.cond_sd**2 + post.grid**2)
    return _mixture_summary(post.cond_mean, sds, post.mass, shortest)


def _shrinkage_components(post: TauGridPosterior, inp: MetaInput, index: int):
    s2 = inp.s[index] ** 2
    shrink = s2 / (s2 + post.grid**2)  # weight on the overall mean
    means = (1.0 - shrink) * inp.y[index] + shrink * post.cond_mean
    variances = (1.0 - shrink) * s2 + shrink**2 * post.cond_sd**2
    return means, np.sqrt(variances)


def shrinkage(post: TauGridPosterior, inp: MetaInput, index: int, shortest=True) -> PosteriorSummary:
    """Posterior summary of one study's own MTD given all studies."""
    if not (0 <= index < inp.k):
        raise ValidationError(f"study index {index} out of range for k={inp.k}")
    means, sds = _shrinkage_components(post, inp, index)
    return _mixture_summary(means, sds, post.mass, shortest)


def study_weights(post: TauGridPosterior, inp: MetaInput) -> np.ndarray:
    """Each study's tau-averaged share of the total precision, normalized to 1."""
    w = 1.0 / (inp.s[None, :] ** 2 + post.grid[:, None] ** 2)
    frac = w / w.sum(axis=1, keepdims=True)
    weights = post.mass @ frac
    return weights / weights.sum()


def shrinkage_weights(post: TauGridPosterior, inp: MetaInput, index: int) -> np.ndarray:
    """Weight of each study's data in the shrinkage estimate of study ``index``.

    The conditional shrinkage mean is (1-B) y_i + B mu_hat(tau); expanding
    mu_hat over the studies gives study i the share (1-B) + B w_i/sum(w) and
    study j != i the share B w_j/sum(w).  Averaged over the tau posterior the
    shares sum to one: tau -> infinity puts all weight on the study itself,
    tau = 0 recovers the precision shares.
    """
    if not (0 <= index < inp.k):
        raise ValidationError(f"study index {index} out of range for k={inp.k}")
    w = 1.0 / (inp.s[None, :] ** 2 + post.grid[:, None] ** 2)
    frac = w / w.sum(axis=1, keepdims=True)
    s2 = inp.s[index] ** 2
    shrink = s2 / (s2 + post.grid**2)
    shares = shrink[:, None] * frac
    shares[:, index] += 1.0 - shrink
    return post.mass @ shares


def tau_summary(post: TauGridPosterior, shortest=True) -> PosteriorSummary:
    """Summary of the heterogeneity tau from its grid density."""
    grid = post.grid
    if len(grid) == 1:
        t = float(grid[0])
        return PosteriorSummary(t, t, 0.0, t, t, t, t)
    cell = 0.5 * (post.density[:-1] + post.density[1:]) * np.diff(grid)
    cdf = np.concatenate([[0.0], np.cumsum(cell)])
    cdf = cdf / cdf[-1]

    def quantile(p):
        return float(np.interp(p, cdf, grid))

    mean = float(post.mass @ grid)
    var = float(post.mass @ grid**2 - mean**2)
    lower, upper = quantile(0.025), quantile(0.975)
    if shortest:
        res = minimize_scalar(
            lambda t: quantile(t + 0.95) - quantile(t),
            bounds=(0.0, 0.05),
            method="bounded",
            options={"xatol": 1e-9},
        )
        s_lo, s_hi = quantile(float(res.x)), quantile(float(res.x) + 0.95)
    else:
        s_lo = s_hi = float("nan")
    return PosteriorSummary(
        median=quantile(0.5),
        mean=mean,
        sd=math.sqrt(max(var, 0.0)),
        lower=lower,
        upper=upper,
        shortest_lower=s_lo,
        shortest_upper=s_hi,
    )


def meta_analyze(inp: MetaInput, prior: PriorSpec = UNIFORM_PRIORS, shortest=True) -> MetaResult:
    """Run the full analysis: mu, tau, prediction, per-study shrinkage, weights."""
    post = posterior(inp, prior)
    shr = tuple(shrinkage(post, inp, i, shortest) for i in range(inp.k))
    return MetaResult(
        mu=combined_estimate(post, shortest),
        tau=tau_summary(post, shortest),
        prediction=prediction(post, shortest),
        shrinkage=shr,
        weights=study_weights(post, inp),
        study_ids=inp.study_ids,
    )


def sensitivity_filter(inp: MetaInput, threshold: float) -> MetaInput:
    """Keep only studies whose standard error is at most ``threshold``."""
    if not (threshold > 0):
        raise ValidationError("threshold must be positive")
    keep = inp.s <= threshold
    if not np.any(keep):
        raise ValidationError("sensitivity filter removed every study")
    ids = tuple(sid for sid, k in zip(inp.study_ids, keep) if k)
    return MetaInput(y=inp.y[keep], s=inp.s[keep], study_ids=ids)


@dataclass(frozen=True, eq=False)
class BridgeResult:
    """Two-level analysis: per-group syntheses, then shrinkage across groups.

    ``target_weights`` gives each group's share in the target group's
    shrinkage estimate; ``target_weights[target]`` is the target's own-data
    contribution.
    """

    labels: tuple[str, ...]
    stage1_mu: tuple[PosteriorSummary, ...]
    pseudo_estimates: tuple[MtdEstimate, ...]
    stage2: MetaResult
    target_label: str
    target_summary: PosteriorSummary
    target_weights: np.ndarray


PriorsByGroup = Union[PriorSpec, dict]


def _group_prior(priors: PriorsByGroup, label: str) -> PriorSpec:
    if isinstance(priors, PriorSpec):
        return priors
    try:
        return priors[label]
    except KeyError:
        raise ValidationError(f"no first-stage prior given for group {label!r}") from None


def bridge(
    groups: Sequence[tuple[str, MetaInput]],
    first_stage_prior: PriorsByGroup,
    second_stage_prior: PriorSpec,
    target_group: str,
    shortest=True,
) -> BridgeResult:
    """Borrow strength across groups for one target group's MTD.

    Stage 1 synthesizes each group separately; each group's posterior mean
    and sd for mu become a pseudo-estimate.  Stage 2 meta-analyzes the
    pseudo-estimates and reports the shrinkage summary of the target group.
    ``first_stage_prior`` may be a single PriorSpec or a dict keyed by
    group label (small groups typically need a proper heterogeneity prior).
    """
    if len(groups) < 2:
        raise ValidationError("bridging needs at least two groups")
    labels = tuple(label for label, _ in groups)
    if target_group not in labels:
        raise ValidationError(f"target group {target_group!r} not among {labels}")
    stage1 = []
    pseudo = []
    for label, inp in groups:
        post = posterior(inp, _group_prior(first_stage_prior, label))
        summ = combined_estimate(post, shortest)
        stage1.append(summ)
        pseudo.append(MtdEstimate(estimate=summ.mean, std_err=summ.sd, study_id=label))
    stage2_input = MetaInput.from_estimates(pseudo)
    stage2 = meta_analyze(stage2_input, second_stage_prior, shortest)
    target_index = labels.index(target_group)
    stage2_post = posterior(stage2_input, second_stage_prior)
    return BridgeResult(
        labels=labels,
        stage1_mu=tuple(stage1),
        pseudo_estimates=tuple(pseudo),
        stage2=stage2,
        target_label=target_group,
        target_summary=stage2.shrinkage[target_index],
        target_weights=shrinkage_weights(stage2_post, stage2_input, target_index),
    )
