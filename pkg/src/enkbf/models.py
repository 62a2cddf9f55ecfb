"""Model definitions: drift generators, noise levels, and stationary covariances.

The estimation target throughout the package is the scalar factor theta in the
drift theta * A x of a linear SDE dX = theta A X dt + sqrt(gamma) dW, observed
continuously.  Everything downstream (simulation, estimators, experiments) is
parameterized by the model types defined here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericError

# Relative tolerance for structural matrix checks (normality, Lyapunov residuals,
# stationary-covariance relations).  Absolute scale is attached at the call site.
_STRUCT_TOL = 1e-10


def _as_matrix(A: Any) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ConfigError("matrix contains non-finite entries")
    return A


@dataclass(frozen=True)
class LinearModel:
    """Linear drift generator A with isotropic noise level gamma.

    The drift matrix must be normal (commute with its transpose) and Hurwitz
    (all eigenvalues in the open left half plane); both are required for the
    closed-form stationary covariance used everywhere else.

    Parameters
    ----------
    A : array_like, shape (d, d)
        Drift generator; the signal is dX = theta A X dt + sqrt(gamma) dW.
    gamma : float
        Noise intensity, strictly positive.
    """

    A: np.ndarray
    gamma: float

    def __post_init__(self) -> None:
        A = _as_matrix(self.A)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "gamma", float(self.gamma))
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        scale = float(np.sum(A * A))  # ||A||_F^2
        if scale == 0.0:
            raise ConfigError("drift matrix is zero")
        normality = np.linalg.norm(A @ A.T - A.T @ A)
        if normality > _STRUCT_TOL * scale:
            raise ConfigError(
                f"drift matrix is not normal (residual {normality:.3e}, "
                f"allowed {_STRUCT_TOL * scale:.3e})"
            )
        lam = np.linalg.eigvals(A)
        if np.max(lam.real) >= 0:
            raise ConfigError(
                f"drift matrix is not Hurwitz (max real part {np.max(lam.real):.3e})"
            )
        A.flags.writeable = False

    @property
    def d(self) -> int:
        return self.A.shape[0]

    def spectral_abscissa(self) -> float:
        """Largest |Re(lambda)| over the spectrum, used for step-size checks."""
        return float(np.max(np.abs(np.linalg.eigvals(self.A).real)))


@dataclass(frozen=True)
class TwoScaleModel:
    """Slow-fast system: the slow signal is driven by a fast Ornstein-Uhlenbeck
    process instead of white noise.

    The fast process P relaxes at rate fast_drift / epsilon under unit-variance
    forcing and enters the slow equation as sqrt(gamma)/epsilon fast_drift P dt,
    so that as epsilon -> 0 the slow component converges to the white-noise
    model ``base``.

    fast_drift plus its transpose must be symmetric positive definite (the fast
    process needs a stationary law); epsilon is the time-scale separation,
    strictly positive.
    """

    base: LinearModel
    fast_drift: np.ndarray
    epsilon: float

    def __post_init__(self) -> None:
        fd = _as_matrix(self.fast_drift)
        object.__setattr__(self, "fast_drift", fd)
        object.__setattr__(self, "epsilon", float(self.epsilon))
        if fd.shape[0] != self.base.d:
            raise ConfigError(
                f"fast drift has dimension {fd.shape[0]}, base model has {self.base.d}"
            )
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        sym = fd + fd.T
        try:
            np.linalg.cholesky(sym)
        except np.linalg.LinAlgError:
            raise ConfigError(
                "fast drift plus its transpose must be symmetric positive definite"
            ) from None
        fd.flags.writeable = False

    @property
    def d(self) -> int:
        return self.base.d

    def fast_stationary_covariance(self) -> np.ndarray:
        """Stationary covariance of the fast process,
        epsilon (fast_drift + fast_drift')^{-1}."""
        d = self.d
        return self.epsilon * np.linalg.solve(
            self.fast_drift + self.fast_drift.T, np.eye(d)
        )


@dataclass(frozen=True)
class FilterConfig:
    """Exponential pre-filter applied to the observed signal.

    The filtered signal Z relaxes toward X at rate 1/delta:
    dZ = (X - Z)/delta dt + delta_noise sqrt(2) dV.  delta_noise is a switch
    (0 or 1) for the additive dither term.
    """

    delta: float
    delta_noise: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "delta_noise", float(self.delta_noise))
        if not self.delta > 0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if self.delta_noise not in (0.0, 1.0):
            raise ConfigError(
                f"delta_noise must be 0 or 1, got {self.delta_noise}"
            )


@dataclass(frozen=True)
class ExtendedStationaryCovariance:
    """Joint stationary covariance blocks of the signal and its filtered version.

    c_tilde is the effective covariance seen by estimators driven by the
    filtered signal: Sigma_zz - delta_noise * delta * I.  It equals the
    symmetric part of Sigma_xz and converges to the signal covariance at rate
    O(delta).
    """

    sigma_xx: np.ndarray
    sigma_xz: np.ndarray
    sigma_zz: np.ndarray
    c_tilde: np.ndarray


def frobenius(A: np.ndarray, B: np.ndarray) -> float:
    """Frobenius pairing tr(A' B) = sum_ij A_ij B_ij."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ConfigError(f"shape mismatch {A.shape} vs {B.shape}")
    return float(np.sum(A * B))


def stationary_covariance(model: LinearModel) -> np.ndarray:
    """Stationary covariance C of dX = A X dt + sqrt(gamma) dW.

    For a normal Hurwitz drift this is C = -gamma (A + A')^{-1}.  The result is
    validated against the Lyapunov equation A C + C A' + gamma I = 0.

    Returns
    -------
    ndarray, shape (d, d)
        Symmetric positive definite covariance matrix.
    """
    A, gamma = model.A, model.gamma
    d = model.d
    S = A + A.T
    try:
        C = np.linalg.solve(S, -gamma * np.eye(d))
    except np.linalg.LinAlgError:
        raise NumericError("drift not dissipative") from None
    C = 0.5 * (C + C.T)
    residual = np.linalg.norm(A @ C + C @ A.T + gamma * np.eye(d))
    if residual > _STRUCT_TOL * gamma * np.sqrt(d):
        raise NumericError(
            f"drift not dissipative (Lyapunov residual {residual:.3e})"
        )
    return C


def rotation_drift(beta: float) -> np.ndarray:
    """Rotation-perturbed identity [[1, beta], [-beta, 1]] for the fast drift."""
    beta = float(beta)
    return np.array([[1.0, beta], [-beta, 1.0]])


def damped_rotation(gamma: float = 1.0) -> LinearModel:
    """Benchmark generator: a damped rotation in two dimensions.

    A = -1/2 [[1, -1], [1, 1]] is normal with eigenvalues -(1 +- i)/2, and its
    stationary covariance is exactly gamma * I, which makes analytic
    cross-checks of the estimators convenient.
    """
    A = -0.5 * np.array([[1.0, -1.0], [1.0, 1.0]])
    return LinearModel(A=A, gamma=gamma)


def spde_advection_diffusion(
    U: float, rho: float, L_domain: float, d: int
) -> LinearModel:
    """Spectral-free finite-difference generator of an advection-diffusion SPDE.

    Discretizes u_t = -U u_y + rho u_yy + dW/dt on a periodic grid of d points
    with mesh dy = L_domain / d, using the centered first difference D (which
    is skew-symmetric, so the generator stays normal).  The drift is
    A = -(U D + rho D D'), and matching the space-time white noise forcing
    fixes the noise level at gamma = 1/dy = d / L_domain.

    The difference operators do not damp the spatial mean (nor, for even d,
    the alternating mesh-frequency mode), and without damping there is no
    stationary law to estimate against.  Those modes are given the decay rate
    of the slowest resolved diffusive mode, which is the minimal change that
    makes the generator strictly dissipative.
    """
    d = int(d)
    if d < 2:
        raise ConfigError(f"need at least 2 grid points, got {d}")
    if not (float(L_domain) > 0 and float(rho) > 0):
        raise ConfigError("L_domain and rho must be positive")
    dy = float(L_domain) / d
    idx = np.arange(d)
    D = np.zeros((d, d))
    D[idx, (idx + 1) % d] = 1.0 / (2.0 * dy)
    D[idx, (idx - 1) % d] = -1.0 / (2.0 * dy)
    diffusion = D @ D.T
    # slowest resolved diffusive rate; also the decay given to the undamped modes
    nu = (np.sin(2.0 * np.pi / d) / dy) ** 2
    damp = np.full((d, d), 1.0 / d)
    if d % 2 == 0:
        alt = np.where(idx % 2 == 0, 1.0, -1.0)
        damp = damp + np.outer(alt, alt) / d
    A = -(float(U) * D + float(rho) * diffusion) - float(rho) * nu * damp
    return LinearModel(A=A, gamma=d / float(L_domain))


def extended_stationary_covariance(
    model: LinearModel, filt: FilterConfig
) -> ExtendedStationaryCovariance:
    """Stationary covariance of the joint (signal, filtered signal) system.

    Solves the 2d-dimensional Lyapunov equation for the block drift
    [[A, 0], [I/delta, -I/delta]] with noise intensities (gamma I, 2 delta_noise I)
    and extracts the blocks.  Three structural relations tie the blocks together
    and are validated before returning:

    - A Sxx + Sxx A' + gamma I = 0 (marginal of the signal),
    - Sxz + Szx = 2 (Szz - delta_noise * delta * I),
    - A Sxz + (Sxx - Sxz)/delta = 0.
    """
    A, gamma = model.A, model.gamma
    d = model.d
    delta = filt.delta
    I = np.eye(d)
    F = np.zeros((2 * d, 2 * d))
    F[:d, :d] = A
    F[d:, :d] = I / delta
    F[d:, d:] = -I / delta
    Q = np.zeros((2 * d, 2 * d))
    Q[:d, :d] = gamma * I
    Q[d:, d:] = 2.0 * filt.delta_noise * I
    sigma = scipy.linalg.solve_continuous_lyapunov(F, -Q)
    sigma = 0.5 * (sigma + sigma.T)
    sxx = sigma[:d, :d]
    sxz = sigma[:d, d:]
    szz = sigma[d:, d:]
    c_tilde = szz - filt.delta_noise * delta * I

    scale = max(1.0, gamma) * np.sqrt(d)
    r1 = np.linalg.norm(A @ sxx + sxx @ A.T + gamma * I)
    r2 = np.linalg.norm(sxz + sxz.T - 2.0 * c_tilde)
    r3 = np.linalg.norm(A @ sxz + (sxx - sxz) / delta)
    worst = max(r1, r2, r3 * min(1.0, delta))
    if worst > _STRUCT_TOL * scale:
        raise NumericError(
            f"extended stationary covariance inconsistent (residual {worst:.3e})"
        )
    return ExtendedStationaryCovariance(
        sigma_xx=sxx, sigma_xz=sxz, sigma_zz=szz, c_tilde=c_tilde
    )


def model_to_json(model: LinearModel | TwoScaleModel) -> str:
    """Serialize a model to a JSON string (round-trips with model_from_json)."""
    if isinstance(model, TwoScaleModel):
        payload = {
            "kind": "two_scale",
            "A": model.base.A.tolist(),
            "gamma": model.base.gamma,
            "fast_drift": model.fast_drift.tolist(),
            "epsilon": model.epsilon,
        }
    elif isinstance(model, LinearModel):
        payload = {"kind": "linear", "A": model.A.tolist(), "gamma": model.gamma}
    else:
        raise ConfigError(f"cannot serialize object of type {type(model).__name__}")
    return json.dumps(payload)


def model_from_json(text: str) -> LinearModel | TwoScaleModel:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid model JSON: {exc}") from None
    if not isinstance(payload, dict) or "kind" not in payload:
        raise ConfigError("model JSON must be an object with a 'kind' field")
    kind = payload["kind"]
    try:
        if kind == "linear":
            return LinearModel(A=np.array(payload["A"]), gamma=payload["gamma"])
        if kind == "two_scale":
            base = LinearModel(A=np.array(payload["A"]), gamma=payload["gamma"])
            return TwoScaleModel(
                base=base,
                fast_drift=np.array(payload["fast_drift"]),
                epsilon=payload["epsilon"],
            )
    except KeyError as exc:
        raise ConfigError(f"model JSON missing field {exc}") from None
    raise ConfigError(f"unknown model kind {kind!r}")
