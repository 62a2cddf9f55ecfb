"""Discrete-time mean-field, ensemble, and gradient-descent parameter estimators.

All estimators track the scalar drift factor theta of dX = theta A X dt +
sqrt(gamma) dW from one observed path.  The mean-field filter carries a
Gaussian posterior (mu, sigma) and updates it once per coarse window of length
delta_t = L * delta_tau:

- ``subsampled``: sees only the coarse increments X_{n+1} - X_n,
- ``highfreq``: integrates (A X) . dX on the fine grid inside each window,
- ``highfreq_corrected``: additionally subtracts the drift bias that fast
  unresolved dynamics induce in the fine-grid integral,
- ``strat``: evaluates the gain at the window midpoint state and compensates
  with a -sigma (delta_t/2) tr(A) drift.

The update formulas are written over arrays with an arbitrary leading shape;
scalar single-path runs and the batched Monte Carlo harness call the exact
same code.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Callable

import numpy as np

from .errors import ConfigError, NumericError
from .models import LinearModel, frobenius, stationary_covariance
from .paths import (
    ObservationPath,
    _right_apply,
    ito_integral,
    noise_stream,
    window_reduce,
)

VARIANTS = ("subsampled", "highfreq", "highfreq_corrected", "strat")
GAIN_MODES = ("exact", "stationary")


@dataclass(frozen=True)
class GaussianPosterior:
    """Gaussian belief over the drift factor.

    sigma is a variance, not a standard deviation.  Along any run of the
    left-point schemes with exact gain it is non-increasing: every update
    multiplies it by a square
    (1 - delta_t/2 * K . A x)^2 with K . A x >= 0.  The midpoint and filtered
    variants can produce transient upticks when their gain pairs misaligned
    drift vectors; those stay O(delta_t^2) per step.
    """

    mu: float
    sigma: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "sigma", float(self.sigma))
        if not np.isfinite(self.mu):
            raise ConfigError(f"posterior mean must be finite, got {self.mu}")
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ConfigError(f"posterior variance must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class SchemeConfig:
    """Configuration of one discrete estimation scheme.

    Parameters
    ----------
    variant : str
        One of ``subsampled``, ``highfreq``, ``highfreq_corrected``, ``strat``.
    delta_t : float
        Coarse update step.
    L : int
        Fine steps per coarse window; delta_t == L * delta_tau of the path.
    correction : ndarray, optional
        Fast-drift matrix whose induced bias the corrected variant removes;
        required for (and only valid for) ``highfreq_corrected``.
    gain_mode : str
        ``exact`` keeps the state-dependent quadratic form (A x).(A x)
        everywhere it appears; ``stationary`` replaces it by its stationary
        average (A'A):C in the gain denominator, the drift contraction and
        the variance shrink.  With ``stationary`` the variance recursion is
        deterministic, the same for every path (variants still differ at
        O(delta_t) through their gain denominators), which is the regime the
        closed-form frequentist moments describe; ``exact`` feeds the
        realised quadratic back into the variance and acquires an O(1)
        offset from those moments that persists as delta_t -> 0.
    """

    variant: str
    delta_t: float
    L: int
    correction: np.ndarray | None = None
    gain_mode: str = "exact"

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.gain_mode not in GAIN_MODES:
            raise ConfigError(f"unknown gain mode {self.gain_mode!r}, expected one of {GAIN_MODES}")
        object.__setattr__(self, "delta_t", float(self.delta_t))
        object.__setattr__(self, "L", int(self.L))
        if not self.delta_t > 0:
            raise ConfigError(f"delta_t must be positive, got {self.delta_t}")
        if self.L < 1:
            raise ConfigError(f"L must be >= 1, got {self.L}")
        if self.correction is not None:
            corr = np.asarray(self.correction, dtype=float)
            if corr.ndim != 2 or corr.shape[0] != corr.shape[1] or not np.all(np.isfinite(corr)):
                raise ConfigError("correction must be a finite square matrix")
            object.__setattr__(self, "correction", corr)
            corr.flags.writeable = False
            if self.variant != "highfreq_corrected":
                raise ConfigError("correction is only valid for the highfreq_corrected variant")
        elif self.variant == "highfreq_corrected":
            raise ConfigError("highfreq_corrected needs a correction matrix")


@dataclass(frozen=True)
class EstimatorTrace:
    """Posterior trajectory on the coarse grid."""

    times: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        if not (len(self.times) == len(self.mu) == len(self.sigma)):
            raise ConfigError("trace arrays must have equal length")


@dataclass(frozen=True)
class ParameterTrace:
    """Point-estimate trajectory (no posterior variance), e.g. from SGD."""

    times: np.ndarray
    theta: np.ndarray


@dataclass(frozen=True)
class Ensemble:
    """Interacting particle approximation of the posterior."""

    thetas: np.ndarray
    innovation: str  # "deterministic" or "stochastic"

    def __post_init__(self) -> None:
        thetas = np.asarray(self.thetas, dtype=float)
        if thetas.ndim != 1 or thetas.size < 2:
            raise ConfigError("ensemble needs at least 2 particles")
        if self.innovation not in ("deterministic", "stochastic"):
            raise ConfigError(f"unknown innovation kind {self.innovation!r}")
        object.__setattr__(self, "thetas", thetas)

    @property
    def mean(self) -> float:
        return float(np.mean(self.thetas))

    @property
    def variance(self) -> float:
        # population variance: the particle system approximates raw moments
        return float(np.var(self.thetas))


# ---------------------------------------------------------------------------
# Update cores.  mu, sigma have an arbitrary common leading shape (scalars
# included); states have that shape plus a trailing coordinate axis.  gain_c
# is None for the exact gain or the scalar (A'A):C for the stationary one.
# In stationary mode that constant stands in for the path quadratic wherever
# it enters as a scalar: the gain denominator, the drift contraction of mu,
# and the variance shrink.  The variance recursion is then deterministic per
# variant (the families keep their different denominators); only the data
# term still sees the path.


def _step_subsampled(mu, sigma, x_n, x_np1, A, gamma, delta_t, gain_c):
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    ax = _right_apply(x_n, A.T)
    quad = np.sum(ax * ax, axis=-1) if gain_c is None else gain_c
    denom = gamma + delta_t * sigma * quad
    gain = (sigma / denom)[..., None] * ax
    data = np.sum(gain * (x_np1 - x_n), axis=-1)
    contraction = sigma * quad / denom  # K . A x_n, or its stationary average
    mu_next = mu + data - contraction * mu * delta_t
    shrink = 1.0 - 0.5 * delta_t * contraction
    return mu_next, sigma * shrink * shrink


def _step_integral(mu, sigma, j, ax, az, gamma, delta_t, gain_c, corr_tr):
    """Shared core of the high-frequency family.

    j is the per-window integral of (A Z) . dX (Z == X for the plain variant);
    ax and az are the drift vectors at the window start.  corr_tr is
    frobenius(A', correction) or 0.

    Both the data term and the drift contraction carry the continuous-time
    gain coefficient sigma/gamma, with no step regularisation: the family
    discretises the mean-field flow directly, so data and drift share one
    denominator (their balance point is the true parameter) and the particle
    system's empirical moments reproduce this recursion exactly.  The shrink
    factor goes negative once delta_t sigma quad > 2 gamma; that is a step
    size the scheme cannot support, not a state to integrate through.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    quad = np.sum(az * ax, axis=-1) if gain_c is None else gain_c
    contraction = sigma * quad / gamma  # K . A x_n with K built from A z_n
    mu_next = (
        mu
        + (sigma / gamma) * j
        - contraction * mu * delta_t
        - 0.5 * delta_t * sigma * corr_tr
    )
    shrink = 1.0 - 0.5 * delta_t * contraction
    if np.any(shrink < 0.0):
        raise NumericError(
            "variance shrink factor went negative; delta_t is too large for "
            "this sigma and drift scale"
        )
    return mu_next, sigma * shrink * shrink


def _step_strat(mu, sigma, x_n, x_np1, A, gamma, delta_t, gain_c, tr_A):
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    ax = _right_apply(x_n, A.T)
    ax_mid = _right_apply(0.5 * (x_n + x_np1), A.T)
    quad_gain = np.sum(ax_mid * ax_mid, axis=-1) if gain_c is None else gain_c
    denom = gamma + delta_t * sigma * quad_gain
    gain = (sigma / denom)[..., None] * ax_mid
    data = np.sum(gain * (x_np1 - x_n), axis=-1)
    quad_drift = np.sum(ax_mid * ax, axis=-1) if gain_c is None else gain_c
    contraction = sigma * quad_drift / denom
    mu_next = mu + data - contraction * mu * delta_t - sigma * (0.5 * delta_t) * tr_A
    shrink = 1.0 - 0.5 * delta_t * contraction
    return mu_next, sigma * shrink * shrink


def _gain_constant(cfg: SchemeConfig, A: np.ndarray, gamma: float,
                   stat_cov: np.ndarray | None) -> float | None:
    if cfg.gain_mode == "exact":
        return None
    if stat_cov is None:
        stat_cov = stationary_covariance(LinearModel(A=A, gamma=gamma))
    return frobenius(A.T @ A, np.asarray(stat_cov, dtype=float))


def kalman_gain(
    sigma: float,
    x: np.ndarray,
    A: np.ndarray,
    gamma: float,
    delta_t: float,
    gain_mode: str = "exact",
    stat_cov: np.ndarray | None = None,
) -> np.ndarray:
    """Discrete-time gain row vector sigma (A x)' / (gamma + delta_t sigma q).

    q is (A x).(A x) for the exact mode, or the stationary average (A'A):C
    when ``gain_mode="stationary"`` (C defaults to the stationary covariance
    of the (A, gamma) model; pass ``stat_cov`` to override, e.g. with the
    filtered-signal covariance).
    """
    if gain_mode not in GAIN_MODES:
        raise ConfigError(f"unknown gain mode {gain_mode!r}")
    A = np.asarray(A, dtype=float)
    x = np.asarray(x, dtype=float)
    ax = x @ A.T
    if gain_mode == "exact":
        q = float(np.sum(ax * ax))
    elif stat_cov is not None:
        q = frobenius(A.T @ A, np.asarray(stat_cov, dtype=float))
    else:
        q = frobenius(A.T @ A, stationary_covariance(LinearModel(A=A, gamma=gamma)))
    return sigma * ax / (gamma + delta_t * sigma * q)


# ---------------------------------------------------------------------------
# Single-window public steps.


def enkbf_step_subsampled(
    post: GaussianPosterior,
    x_n: np.ndarray,
    x_np1: np.ndarray,
    A: np.ndarray,
    gamma: float,
    cfg: SchemeConfig,
    stat_cov: np.ndarray | None = None,
) -> GaussianPosterior:
    """One coarse-increment update of the Gaussian posterior."""
    A = np.asarray(A, dtype=float)
    gain_c = _gain_constant(cfg, A, gamma, stat_cov)
    mu, sigma = _step_subsampled(
        post.mu, post.sigma, np.asarray(x_n, float), np.asarray(x_np1, float),
        A, gamma, cfg.delta_t, gain_c,
    )
    return GaussianPosterior(mu=float(mu), sigma=float(sigma))


def enkbf_step_highfreq(
    post: GaussianPosterior,
    path: ObservationPath,
    n_from: int,
    A: np.ndarray,
    gamma: float,
    cfg: SchemeConfig,
    stat_cov: np.ndarray | None = None,
) -> GaussianPosterior:
    """One update using the fine-grid integral over the window starting at
    fine index n_from (cfg.L fine steps)."""
    A = np.asarray(A, dtype=float)
    n_to = n_from + cfg.L
    j = ito_integral(path, A, n_from, n_to)
    x_n = path.states[n_from]
    ax = x_n @ A.T
    corr_tr = frobenius(A.T, cfg.correction) if cfg.correction is not None else 0.0
    gain_c = _gain_constant(cfg, A, gamma, stat_cov)
    mu, sigma = _step_integral(
        post.mu, post.sigma, j, ax, ax, gamma, cfg.delta_t, gain_c, corr_tr
    )
    return GaussianPosterior(mu=float(mu), sigma=float(sigma))


def enkbf_step_strat(
    post: GaussianPosterior,
    x_n: np.ndarray,
    x_np1: np.ndarray,
    A: np.ndarray,
    gamma: float,
    cfg: SchemeConfig,
    stat_cov: np.ndarray | None = None,
) -> GaussianPosterior:
    """One midpoint-gain update with the -sigma (delta_t/2) tr(A) compensation."""
    A = np.asarray(A, dtype=float)
    gain_c = _gain_constant(cfg, A, gamma, stat_cov)
    mu, sigma = _step_strat(
        post.mu, post.sigma, np.asarray(x_n, float), np.asarray(x_np1, float),
        A, gamma, cfg.delta_t, gain_c, float(np.trace(A)),
    )
    return GaussianPosterior(mu=float(mu), sigma=float(sigma))


# ---------------------------------------------------------------------------
# Full runs.


def _check_grid(path_delta_tau: float, n_fine: int, cfg: SchemeConfig) -> int:
    if abs(cfg.L * path_delta_tau - cfg.delta_t) > 1e-9 * cfg.delta_t:
        raise ConfigError(
            f"delta_t={cfg.delta_t} != L*delta_tau={cfg.L * path_delta_tau}; "
            f"windows must nest in the fine grid"
        )
    if n_fine % cfg.L != 0:
        raise ConfigError(f"{n_fine} fine steps do not split into windows of {cfg.L}")
    return n_fine // cfg.L


def run_window_family(
    variant: str,
    mu0: np.ndarray,
    sigma0: np.ndarray,
    outer: np.ndarray,
    j: np.ndarray | None,
    drift_outer: np.ndarray | None,
    A: np.ndarray,
    gamma: float,
    delta_t: float,
    gain_c: float | None,
    corr_tr: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Walk the coarse windows for a batch of runs sharing one scheme.

    outer has shape (n_w + 1, ..., d) with mu0/sigma0 shaped (...,).
    j (high-frequency integrals) and drift_outer (filtered states on the
    coarse grid) are only consulted by the integral-family variants.
    Returns (mu, sigma) of shape (n_w + 1, ...).
    """
    n_w = outer.shape[0] - 1
    lead = np.broadcast(np.asarray(mu0, float), np.asarray(sigma0, float)).shape
    mu = np.empty((n_w + 1,) + lead)
    sigma = np.empty((n_w + 1,) + lead)
    mu[0] = mu0
    sigma[0] = sigma0
    tr_A = float(np.trace(A))
    if drift_outer is None:
        drift_outer = outer
    for w in range(n_w):
        if variant == "subsampled":
            mu[w + 1], sigma[w + 1] = _step_subsampled(
                mu[w], sigma[w], outer[w], outer[w + 1], A, gamma, delta_t, gain_c
            )
        elif variant == "strat":
            mu[w + 1], sigma[w + 1] = _step_strat(
                mu[w], sigma[w], outer[w], outer[w + 1], A, gamma, delta_t, gain_c, tr_A
            )
        else:  # highfreq / highfreq_corrected
            ax = _right_apply(outer[w], A.T)
            az = _right_apply(drift_outer[w], A.T)
            mu[w + 1], sigma[w + 1] = _step_integral(
                mu[w], sigma[w], j[w], ax, az, gamma, delta_t, gain_c, corr_tr
            )
    return mu, sigma


def _run_on_states(
    x_states: np.ndarray,
    z_states: np.ndarray | None,
    delta_tau: float,
    cfg: SchemeConfig,
    prior: GaussianPosterior,
    A: np.ndarray,
    gamma: float,
    stat_cov: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    A = np.asarray(A, dtype=float)
    n_w = _check_grid(delta_tau, x_states.shape[0] - 1, cfg)
    needs_j = cfg.variant in ("highfreq", "highfreq_corrected")
    if needs_j:
        wd = window_reduce(x_states, cfg.L, A, drift_states=z_states)
        outer, j = wd.outer, wd.ito
    else:
        outer, j = x_states[:: cfg.L].copy(), None
    drift_outer = z_states[:: cfg.L].copy() if z_states is not None else None
    corr_tr = frobenius(A.T, cfg.correction) if cfg.correction is not None else 0.0
    gain_c = _gain_constant(cfg, A, gamma, stat_cov)
    lead = x_states.shape[1:-1]
    mu0 = np.full(lead, prior.mu) if lead else np.float64(prior.mu)
    sigma0 = np.full(lead, prior.sigma) if lead else np.float64(prior.sigma)
    mu, sigma = run_window_family(
        cfg.variant, mu0, sigma0, outer, j, drift_outer, A, gamma,
        cfg.delta_t, gain_c, corr_tr,
    )
    times = np.arange(n_w + 1) * cfg.delta_t
    return times, mu, sigma


def run_estimator(
    path: ObservationPath,
    cfg: SchemeConfig,
    prior: GaussianPosterior,
    A: np.ndarray,
    gamma: float,
    stat_cov: np.ndarray | None = None,
) -> EstimatorTrace:
    """Run one scheme along one path and return the posterior trace on the
    coarse grid."""
    times, mu, sigma = _run_on_states(
        path.states, None, path.delta_tau, cfg, prior, A, gamma, stat_cov
    )
    return EstimatorTrace(times=times, mu=mu, sigma=sigma)


def run_filtered_estimator(
    x_path: ObservationPath,
    z_path: ObservationPath,
    cfg: SchemeConfig,
    prior: GaussianPosterior,
    A: np.ndarray,
    gamma: float,
    stat_cov: np.ndarray | None = None,
) -> EstimatorTrace:
    """Run the high-frequency estimator with the filtered signal in the drift:
    the windows integrate (A Z) . dX and the gain contracts with the mixed
    product (A Z_n).(A X_n).

    With z_path identical to x_path this reproduces ``run_estimator`` with the
    ``highfreq`` variant bit for bit.  For the stationary gain mode pass the
    filtered covariance (c_tilde) as ``stat_cov``.
    """
    if cfg.variant not in ("highfreq", "highfreq_corrected"):
        raise ConfigError("filtered runs use the highfreq family")
    if x_path.states.shape != z_path.states.shape:
        raise ConfigError("signal and filtered paths must share the grid")
    if x_path.delta_tau != z_path.delta_tau:
        raise ConfigError("signal and filtered paths must share delta_tau")
    times, mu, sigma = _run_on_states(
        x_path.states, z_path.states, x_path.delta_tau, cfg, prior, A, gamma, stat_cov
    )
    return EstimatorTrace(times=times, mu=mu, sigma=sigma)


def run_ensemble(
    path: ObservationPath,
    cfg: SchemeConfig,
    prior_sampler: Callable[[np.random.Generator, int], np.ndarray],
    M_p: int,
    seed: int,
    A: np.ndarray,
    gamma: float,
    innovation: str = "deterministic",
    stat_cov: np.ndarray | None = None,
) -> EstimatorTrace:
    """Evolve M_p interacting particles with the empirical-moment gain.

    The deterministic innovation replaces the particle drift by the average of
    the particle and the ensemble mean; the stochastic one perturbs each
    innovation with an independent sqrt(gamma delta_t) kick.  The trace records
    the empirical mean and (population) variance per window.  If the ensemble
    ever collapses to a point the empirical gain is zero from then on and the
    particles freeze; this is the correct degenerate limit, not an error.
    """
    if innovation not in ("deterministic", "stochastic"):
        raise ConfigError(f"unknown innovation kind {innovation!r}")
    if cfg.variant not in ("subsampled", "highfreq", "highfreq_corrected"):
        raise ConfigError(f"ensemble supports the subsampled and highfreq families, not {cfg.variant!r}")
    if M_p < 2:
        raise ConfigError(f"need at least 2 particles, got {M_p}")
    A = np.asarray(A, dtype=float)
    n_w = _check_grid(path.delta_tau, path.n_fine, cfg)
    rng = noise_stream(seed, "ensemble")
    thetas = np.asarray(prior_sampler(rng, M_p), dtype=float)
    if thetas.shape != (M_p,):
        raise ConfigError("prior sampler must return one scalar per particle")
    needs_j = cfg.variant in ("highfreq", "highfreq_corrected")
    if needs_j:
        wd = window_reduce(path.states, cfg.L, A)
        outer, j = wd.outer, wd.ito
    else:
        outer, j = path.states[:: cfg.L], None
    corr_tr = frobenius(A.T, cfg.correction) if cfg.correction is not None else 0.0
    gain_c = _gain_constant(cfg, A, gamma, stat_cov)
    dt = cfg.delta_t
    mu = np.empty(n_w + 1)
    sigma = np.empty(n_w + 1)
    mu[0], sigma[0] = np.mean(thetas), np.var(thetas)
    for w in range(n_w):
        x_n = outer[w]
        ax = x_n @ A.T
        quad = float(ax @ ax) if gain_c is None else gain_c
        var = np.var(thetas)
        mean = np.mean(thetas)
        if cfg.variant == "subsampled":
            dx = outer[w + 1] - x_n
            denom = gamma + dt * var * quad
            contraction = var * quad / denom
            gain_vec = var * ax / denom
            data = float(gain_vec @ dx)
            if innovation == "deterministic":
                drift = 0.5 * (thetas + mean)
                thetas = thetas + data - contraction * drift * dt
            else:
                kicks = np.sqrt(gamma * dt) * rng.standard_normal((M_p, len(ax)))
                thetas = thetas + data - contraction * thetas * dt - kicks @ gain_vec
        else:
            contraction = var * quad / gamma
            if innovation == "deterministic":
                drift = 0.5 * (thetas + mean)
                thetas = (
                    thetas + (var / gamma) * j[w] - contraction * drift * dt
                    - 0.5 * dt * var * corr_tr
                )
            else:
                kicks = np.sqrt(gamma * dt) * rng.standard_normal((M_p, len(ax)))
                gain_vec = var * ax / gamma
                thetas = (
                    thetas + (var / gamma) * j[w] - contraction * thetas * dt
                    - kicks @ gain_vec - 0.5 * dt * var * corr_tr
                )
        mu[w + 1], sigma[w + 1] = np.mean(thetas), np.var(thetas)
    times = np.arange(n_w + 1) * dt
    return EstimatorTrace(times=times, mu=mu, sigma=sigma)


def gaussian_prior_sampler(mean: float, variance: float) -> Callable[[np.random.Generator, int], np.ndarray]:
    """Prior sampler factory for ``run_ensemble``."""
    if variance < 0:
        raise ConfigError(f"prior variance must be >= 0, got {variance}")
    scale = np.sqrt(variance)

    def sample(rng: np.random.Generator, n: int) -> np.ndarray:
        return mean + scale * rng.standard_normal(n)

    return sample


def run_sgd(
    path: ObservationPath,
    cfg: SchemeConfig,
    alpha_bar: float,
    theta_0: float,
    A: np.ndarray,
    gamma: float,
    stat_cov: np.ndarray | None = None,
) -> ParameterTrace:
    """Stochastic-gradient analogue of the filter with the decaying step
    alpha_t = min(alpha_bar, 1/(c t)), c = (A'A):C / gamma.

    The ``subsampled`` variant uses coarse increments, the ``highfreq`` family
    the fine-grid integral, with the corrected variant subtracting
    (gamma delta_t / 2) frobenius(A', correction) from each window's integral.
    """
    if cfg.variant == "strat":
        raise ConfigError("gradient descent has no midpoint variant")
    if not alpha_bar > 0:
        raise ConfigError(f"alpha_bar must be positive, got {alpha_bar}")
    A = np.asarray(A, dtype=float)
    n_w = _check_grid(path.delta_tau, path.n_fine, cfg)
    C = stat_cov if stat_cov is not None else stationary_covariance(
        LinearModel(A=A, gamma=gamma)
    )
    c = frobenius(A.T @ A, np.asarray(C, dtype=float)) / gamma
    needs_j = cfg.variant in ("highfreq", "highfreq_corrected")
    if needs_j:
        wd = window_reduce(path.states, cfg.L, A)
        outer, j = wd.outer, wd.ito
    else:
        outer, j = path.states[:: cfg.L], None
    corr_tr = frobenius(A.T, cfg.correction) if cfg.correction is not None else 0.0
    dt = cfg.delta_t
    theta = np.empty(n_w + 1)
    theta[0] = theta_0
    for w in range(n_w):
        t = w * dt
        alpha = alpha_bar if t == 0 else min(alpha_bar, 1.0 / (c * t))
        x_n = outer[w]
        ax = x_n @ A.T
        q = float(ax @ ax)
        if cfg.variant == "subsampled":
            dx = outer[w + 1] - x_n
            grad = float(ax @ dx) - theta[w] * q * dt
        else:
            grad = j[w] - theta[w] * q * dt - 0.5 * gamma * dt * corr_tr
        theta[w + 1] = theta[w] + (alpha / gamma) * grad
    times = np.arange(n_w + 1) * dt
    return ParameterTrace(times=times, theta=theta)


def write_trace_csv(trace: EstimatorTrace, fp: IO[str]) -> None:
    """Dump a posterior trace as CSV with header t,mu,sigma."""
    fp.write("t,mu,sigma\n")
    for t, m, s in zip(trace.times, trace.mu, trace.sigma):
        fp.write(f"{t:.17g},{m:.17g},{s:.17g}\n")
