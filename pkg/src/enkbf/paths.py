"""Fine-grid path simulation and increment computations.

All simulation is explicit Euler-Maruyama on a uniform fine grid of step
delta_tau; estimators later walk these paths on coarser windows that must nest
exactly in the fine grid.  Noise is drawn from counter-based streams keyed by
(seed, purpose), so any path is reproducible from its seed alone and coupled
simulations can share Brownian increments explicitly.

State arrays carry time along the first axis and coordinates along the last;
every kernel accepts either a single state vector (d,) or a batch (B, d), which
keeps the per-trial arithmetic identical between one-off simulations and the
Monte Carlo harness.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .errors import ConfigError
from .models import FilterConfig, LinearModel, TwoScaleModel, stationary_covariance

# Margin for the explicit-Euler stability check: delta_tau * max|Re lambda|
# must stay below this.
_STABILITY_MARGIN = 0.1


def noise_stream(seed: int, *tags: str) -> np.random.Generator:
    """Counter-based generator keyed by an integer seed and purpose tags.

    Distinct tags give statistically independent streams for the same seed, so
    e.g. filter dither can be toggled without shifting the signal's draws.
    """
    codes = tuple(zlib.crc32(t.encode("utf-8")) for t in tags)
    ss = np.random.SeedSequence((int(seed),) + codes)
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(master_seed: int, index: int) -> int:
    """Per-trial seed as a deterministic function of (master seed, trial index)."""
    ss = np.random.SeedSequence((int(master_seed), int(index)))
    return int(ss.generate_state(1, np.uint64)[0])


def _n_steps(T: float, delta_tau: float) -> int:
    if not (T > 0 and delta_tau > 0):
        raise ConfigError(f"need T > 0 and delta_tau > 0, got T={T}, delta_tau={delta_tau}")
    n = int(round(T / delta_tau))
    if n < 1 or abs(n * delta_tau - T) > 1e-9 * max(T, 1.0):
        raise ConfigError(
            f"horizon T={T} is not an integer multiple of delta_tau={delta_tau}"
        )
    return n


@dataclass(frozen=True)
class PathNoise:
    """Initial condition and unscaled Gaussian increments driving one path."""

    x0: np.ndarray
    xi: np.ndarray  # (n_fine, d) standard normals, scaled inside the kernels


@dataclass(frozen=True)
class ObservationPath:
    """A simulated trajectory on the fine grid.

    Parameters
    ----------
    states : ndarray, shape (n_fine + 1, d)
    delta_tau : float
        Fine grid spacing.
    seed : int or None
        Seed the path was generated from, None for paths built directly
        from arrays.
    source : str
        Provenance tag, e.g. ``"reference"`` or ``"two_scale(epsilon=0.01)"``.
    """

    states: np.ndarray
    delta_tau: float
    seed: int | None = None
    source: str = "reference"

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[0] < 2:
            raise ConfigError(f"states must be (n_fine+1, d) with n_fine >= 1, got {states.shape}")
        if not np.all(np.isfinite(states)):
            raise ConfigError("path states contain non-finite values")
        if not self.delta_tau > 0:
            raise ConfigError(f"delta_tau must be positive, got {self.delta_tau}")
        object.__setattr__(self, "states", states)
        states.flags.writeable = False

    @property
    def n_fine(self) -> int:
        return self.states.shape[0] - 1

    @property
    def d(self) -> int:
        return self.states.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_fine + 1) * self.delta_tau


@dataclass(frozen=True)
class TwoScaleBundle:
    """Slow and fast components of a two-scale simulation on a shared grid."""

    slow: ObservationPath
    fast: ObservationPath

    def __post_init__(self) -> None:
        if self.slow.states.shape != self.fast.states.shape:
            raise ConfigError("slow and fast components must share the grid")
        if self.slow.delta_tau != self.fast.delta_tau:
            raise ConfigError("slow and fast components must share delta_tau")


@dataclass(frozen=True)
class IteratedIncrement:
    """First- and second-order increments of a path over one window."""

    first: np.ndarray  # (d,)
    second: np.ndarray  # (d, d), sum of (X_l - X_s) (x) dX_l over the window
    window: tuple[int, int]  # fine-grid index range [s, t]


# ---------------------------------------------------------------------------
# Euler-Maruyama kernels.  States have shape (..., d) with an optional leading
# batch axis; xi is (n, ..., d).  The per-path arithmetic is independent of the
# batch size, which the harness relies on for reproducibility.


def _right_apply(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    # x @ m with a fixed coordinate summation order; BLAS matmul picks its
    # kernel by shape, which would make path bits depend on the batch size
    out = x[..., 0, None] * m[0]
    for i in range(1, m.shape[0]):
        out = out + x[..., i, None] * m[i]
    return out


def _em_reference(
    A: np.ndarray, gamma: float, theta: float, delta_tau: float,
    x0: np.ndarray, xi: np.ndarray,
) -> np.ndarray:
    n = xi.shape[0]
    out = np.empty((n + 1,) + x0.shape)
    drift = theta * delta_tau * A.T
    scale = np.sqrt(gamma * delta_tau)
    out[0] = x0
    x = np.array(x0, dtype=float)
    for l in range(n):
        x = x + _right_apply(x, drift) + scale * xi[l]
        out[l + 1] = x
    return out


def _em_two_scale(
    ts: TwoScaleModel, theta: float, delta_tau: float,
    x0: np.ndarray, p0: np.ndarray, xi: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    n = xi.shape[0]
    A, gamma = ts.base.A, ts.base.gamma
    out_x = np.empty((n + 1,) + x0.shape)
    out_p = np.empty((n + 1,) + x0.shape)
    drift = theta * delta_tau * A.T
    # the fast process feeds the slow drift at strength sqrt(gamma)/epsilon
    feed = (np.sqrt(gamma) / ts.epsilon) * delta_tau * ts.fast_drift.T
    relax = (delta_tau / ts.epsilon) * ts.fast_drift.T
    scale = np.sqrt(delta_tau)
    out_x[0], out_p[0] = x0, p0
    x = np.array(x0, dtype=float)
    p = np.array(p0, dtype=float)
    for l in range(n):
        x = x + _right_apply(x, drift) + _right_apply(p, feed)
        p = p - _right_apply(p, relax) + scale * xi[l]
        out_x[l + 1] = x
        out_p[l + 1] = p
    return out_x, out_p


def _em_filtered(
    x_states: np.ndarray, filt: FilterConfig, delta_tau: float, xi: np.ndarray,
) -> np.ndarray:
    n = x_states.shape[0] - 1
    out = np.empty_like(x_states)
    rate = delta_tau / filt.delta
    scale = filt.delta_noise * np.sqrt(2.0 * delta_tau)
    out[0] = x_states[0]
    z = np.array(x_states[0], dtype=float)
    for l in range(n):
        z = z + rate * (x_states[l] - z) + scale * xi[l]
        out[l + 1] = z
    return out


# ---------------------------------------------------------------------------
# Public simulation API.


def reference_noise(
    model: LinearModel, T: float, delta_tau: float, seed: int
) -> PathNoise:
    """Draw the noise bundle for one reference path: stationary initial
    condition first, then the fine-grid increments."""
    n = _n_steps(T, delta_tau)
    rng = noise_stream(seed, "path")
    C = stationary_covariance(model)
    chol = np.linalg.cholesky(C)
    x0 = chol @ rng.standard_normal(model.d)
    xi = rng.standard_normal((n, model.d))
    return PathNoise(x0=x0, xi=xi)


def _check_stability(model: LinearModel, delta_tau: float, theta: float) -> None:
    rate = abs(theta) * model.spectral_abscissa()
    if delta_tau * rate >= _STABILITY_MARGIN:
        raise ConfigError(
            f"delta_tau={delta_tau} too coarse for drift rate {rate:.3g} "
            f"(need delta_tau * rate < {_STABILITY_MARGIN})"
        )


def simulate_reference(
    model: LinearModel,
    T: float,
    delta_tau: float,
    seed: int | None = None,
    *,
    noise: PathNoise | None = None,
    theta: float = 1.0,
) -> ObservationPath:
    """Simulate the signal dX = theta A X dt + sqrt(gamma) dW from its
    stationary law.

    Either ``seed`` or an explicit ``noise`` bundle must be given; passing
    ``noise`` makes the Brownian increments shareable with a coupled two-scale
    simulation (or lets tests inject zero noise / a fixed initial state).
    """
    _check_stability(model, delta_tau, theta)
    n = _n_steps(T, delta_tau)
    if noise is None:
        if seed is None:
            raise ConfigError("need a seed or an explicit noise bundle")
        noise = reference_noise(model, T, delta_tau, seed)
    if noise.xi.shape != (n, model.d):
        raise ConfigError(
            f"noise has shape {noise.xi.shape}, grid needs {(n, model.d)}"
        )
    states = _em_reference(model.A, model.gamma, theta, delta_tau, noise.x0, noise.xi)
    return ObservationPath(states=states, delta_tau=delta_tau, seed=seed, source="reference")


def simulate_two_scale(
    ts: TwoScaleModel,
    T: float,
    delta_tau: float,
    seed: int | None = None,
    *,
    shared_noise: PathNoise | None = None,
    theta: float = 1.0,
) -> TwoScaleBundle:
    """Simulate the slow-fast system on the fine grid.

    The fast process starts from its stationary law N(0, epsilon (M+M')^{-1}).
    With ``shared_noise`` the slow initial state and the Brownian increments
    are taken from the bundle (the increments then drive the fast process, as
    in the white-noise limit coupling) and only the fast initial state is drawn
    from ``seed``.

    Requires delta_tau <= epsilon / 10 so the fast relaxation is resolved.
    """
    _check_stability(ts.base, delta_tau, theta)
    if delta_tau > ts.epsilon / 10.0:
        raise ConfigError(
            f"delta_tau={delta_tau} does not resolve epsilon={ts.epsilon} "
            f"(need delta_tau <= epsilon/10)"
        )
    n = _n_steps(T, delta_tau)
    if seed is None and shared_noise is None:
        raise ConfigError("need a seed or a shared noise bundle")
    fast_chol = np.linalg.cholesky(ts.fast_stationary_covariance())
    if shared_noise is None:
        rng = noise_stream(seed, "path")
        C = stationary_covariance(ts.base)
        x0 = np.linalg.cholesky(C) @ rng.standard_normal(ts.d)
        p0 = fast_chol @ rng.standard_normal(ts.d)
        xi = rng.standard_normal((n, ts.d))
    else:
        if seed is None:
            raise ConfigError("coupled simulation still needs a seed for the fast initial state")
        x0 = shared_noise.x0
        xi = shared_noise.xi
        if xi.shape != (n, ts.d):
            raise ConfigError(f"shared noise has shape {xi.shape}, grid needs {(n, ts.d)}")
        p0 = fast_chol @ noise_stream(seed, "fast-init").standard_normal(ts.d)
    states_x, states_p = _em_two_scale(ts, theta, delta_tau, x0, p0, xi)
    tag = f"two_scale(epsilon={ts.epsilon:g})"
    slow = ObservationPath(states=states_x, delta_tau=delta_tau, seed=seed, source=tag)
    fast = ObservationPath(states=states_p, delta_tau=delta_tau, seed=seed, source=tag + ":fast")
    return TwoScaleBundle(slow=slow, fast=fast)


def simulate_filtered(
    x_path: ObservationPath, filt: FilterConfig, seed: int | None = None
) -> ObservationPath:
    """Run the exponential pre-filter dZ = (X - Z)/delta dt + delta_noise sqrt(2) dV
    along an existing path, starting from Z_0 = X_0.

    Requires delta_tau / delta <= 1/2 for stability of the explicit relaxation
    step.  A seed is only needed when delta_noise is switched on.
    """
    if x_path.delta_tau / filt.delta > 0.5:
        raise ConfigError(
            f"delta_tau={x_path.delta_tau} too coarse for filter width "
            f"delta={filt.delta} (need delta_tau/delta <= 1/2)"
        )
    n, d = x_path.n_fine, x_path.d
    if filt.delta_noise != 0.0:
        if seed is None:
            raise ConfigError("delta_noise=1 needs a seed for the dither stream")
        xi = noise_stream(seed, "filter").standard_normal((n, d))
    else:
        xi = np.zeros((n, d))
    states = _em_filtered(x_path.states, filt, x_path.delta_tau, xi)
    tag = f"filtered(delta={filt.delta:g},delta_noise={filt.delta_noise:g})"
    return ObservationPath(states=states, delta_tau=x_path.delta_tau, seed=seed, source=tag)


def reference_states_batch(
    model: LinearModel,
    T: float,
    delta_tau: float,
    seeds: Sequence[int],
    theta: float = 1.0,
) -> np.ndarray:
    """Simulate one reference path per seed in a single batched sweep.

    Returns the raw state array of shape (n_fine + 1, len(seeds), d); path k
    uses exactly the draws of ``simulate_reference(model, ..., seeds[k])``.
    """
    _check_stability(model, delta_tau, theta)
    n = _n_steps(T, delta_tau)
    B, d = len(seeds), model.d
    chol = np.linalg.cholesky(stationary_covariance(model))
    x0 = np.empty((B, d))
    xi = np.empty((n, B, d))
    for k, seed in enumerate(seeds):
        rng = noise_stream(seed, "path")
        x0[k] = chol @ rng.standard_normal(d)
        xi[:, k, :] = rng.standard_normal((n, d))
    return _em_reference(model.A, model.gamma, theta, delta_tau, x0, xi)


def two_scale_states_batch(
    ts: TwoScaleModel,
    T: float,
    delta_tau: float,
    seeds: Sequence[int],
    theta: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched two-scale simulation; returns (slow, fast) state arrays of
    shape (n_fine + 1, len(seeds), d)."""
    _check_stability(ts.base, delta_tau, theta)
    if delta_tau > ts.epsilon / 10.0:
        raise ConfigError(
            f"delta_tau={delta_tau} does not resolve epsilon={ts.epsilon} "
            f"(need delta_tau <= epsilon/10)"
        )
    n = _n_steps(T, delta_tau)
    B, d = len(seeds), ts.d
    slow_chol = np.linalg.cholesky(stationary_covariance(ts.base))
    fast_chol = np.linalg.cholesky(ts.fast_stationary_covariance())
    x0 = np.empty((B, d))
    p0 = np.empty((B, d))
    xi = np.empty((n, B, d))
    for k, seed in enumerate(seeds):
        rng = noise_stream(seed, "path")
        x0[k] = slow_chol @ rng.standard_normal(d)
        p0[k] = fast_chol @ rng.standard_normal(d)
        xi[:, k, :] = rng.standard_normal((n, d))
    return _em_two_scale(ts, theta, delta_tau, x0, p0, xi)


def filtered_states_batch(
    x_states: np.ndarray,
    filt: FilterConfig,
    delta_tau: float,
    seeds: Sequence[int] | None = None,
) -> np.ndarray:
    """Run the pre-filter along batched states (n_fine + 1, B, d); per-path
    dither streams are derived from ``seeds`` when delta_noise is on."""
    if delta_tau / filt.delta > 0.5:
        raise ConfigError(
            f"delta_tau={delta_tau} too coarse for filter width delta={filt.delta}"
        )
    n = x_states.shape[0] - 1
    B, d = x_states.shape[1], x_states.shape[2]
    if filt.delta_noise != 0.0:
        if seeds is None or len(seeds) != B:
            raise ConfigError("delta_noise=1 needs one seed per path")
        xi = np.empty((n, B, d))
        for k, seed in enumerate(seeds):
            xi[:, k, :] = noise_stream(seed, "filter").standard_normal((n, d))
    else:
        xi = np.zeros((n, B, d))
    return _em_filtered(x_states, filt, delta_tau, xi)


def simulate_reference_batch(
    model: LinearModel,
    T: float,
    delta_tau: float,
    n_paths: int,
    master_seed: int,
    theta: float = 1.0,
) -> list[ObservationPath]:
    """Simulate ``n_paths`` independent reference paths with per-path seeds
    derived from the master seed."""
    seeds = [derive_seed(master_seed, k) for k in range(n_paths)]
    states = reference_states_batch(model, T, delta_tau, seeds, theta=theta)
    return [
        ObservationPath(
            states=states[:, k, :].copy(), delta_tau=delta_tau,
            seed=seeds[k], source="reference",
        )
        for k in range(n_paths)
    ]


def simulate_two_scale_batch(
    ts: TwoScaleModel,
    T: float,
    delta_tau: float,
    n_paths: int,
    master_seed: int,
    theta: float = 1.0,
    chunk: int = 100,
) -> list[ObservationPath]:
    """Simulate ``n_paths`` two-scale paths and return their slow components.

    Simulation proceeds in chunks of ``chunk`` paths to bound memory (the
    fast component is discarded per chunk); chunking does not affect the
    values since every path has its own derived stream.
    """
    out: list[ObservationPath] = []
    for start in range(0, n_paths, chunk):
        seeds = [derive_seed(master_seed, k) for k in range(start, min(start + chunk, n_paths))]
        slow, _ = two_scale_states_batch(ts, T, delta_tau, seeds, theta=theta)
        out.extend(
            ObservationPath(
                states=slow[:, k, :].copy(), delta_tau=delta_tau,
                seed=seeds[k], source="two-scale",
            )
            for k in range(slow.shape[1])
        )
    return out


# ---------------------------------------------------------------------------
# Increments and iterated integrals.


def _window(path: ObservationPath, n_from: int, n_to: int) -> np.ndarray:
    if not (0 <= n_from < n_to <= path.n_fine):
        raise ConfigError(
            f"invalid window [{n_from}, {n_to}] on a path with {path.n_fine} fine steps"
        )
    return path.states[n_from : n_to + 1]


def increment(path: ObservationPath, n_from: int, n_to: int) -> np.ndarray:
    """First-order increment X_{n_to} - X_{n_from}."""
    seg = _window(path, n_from, n_to)
    return seg[-1] - seg[0]


def iterated_integral(path: ObservationPath, n_from: int, n_to: int) -> IteratedIncrement:
    """Left-point second-order increment over a window.

    second = sum_l (X_l - X_s) (x) (X_{l+1} - X_l), the discrete analogue of
    the iterated integral of the path against itself.
    """
    seg = _window(path, n_from, n_to)
    dx = np.diff(seg, axis=0)
    a = seg[:-1] - seg[0]
    return IteratedIncrement(
        first=seg[-1] - seg[0], second=a.T @ dx, window=(n_from, n_to)
    )


def bracket_sum(path: ObservationPath, n_from: int, n_to: int) -> np.ndarray:
    """Accumulated bracket of a window: sum_l (dX_l (x) X_{s,l+1} - X_{s,l} (x) dX_l).

    This is the correction term in the exact splitting of the symmetric tensor
    square: second = 1/2 first (x) first - 1/2 bracket_sum, identically for any
    discrete path.  Its symmetric part is the quadratic variation
    sum_l dX_l (x) dX_l; its antisymmetric part measures twice the deviation of
    the signed area from zero.
    """
    seg = _window(path, n_from, n_to)
    dx = np.diff(seg, axis=0)
    a = seg[:-1] - seg[0]
    return dx.T @ a - a.T @ dx + dx.T @ dx


def chen_combine(a: IteratedIncrement, b: IteratedIncrement) -> IteratedIncrement:
    """Concatenate two adjacent iterated increments.

    second(s, u) = second(s, t) + second(t, u) + first(s, t) (x) first(t, u);
    the identity is exact for discrete sums, not an approximation.
    """
    if a.window[1] != b.window[0]:
        raise ConfigError(
            f"windows {a.window} and {b.window} are not adjacent"
        )
    return IteratedIncrement(
        first=a.first + b.first,
        second=a.second + b.second + np.outer(a.first, b.first),
        window=(a.window[0], b.window[1]),
    )


def ito_integral(path: ObservationPath, A: np.ndarray, n_from: int, n_to: int) -> float:
    """Left Riemann sum of (A X) . dX over a window.

    Splits exactly as frobenius(A', X_s (x) first + second), which is how the
    high-frequency estimator separates the increment part from the iterated-
    integral part.
    """
    seg = _window(path, n_from, n_to)
    dx = np.diff(seg, axis=0)
    g = seg[:-1] @ A.T
    return float(np.sum(g * dx))


# ---------------------------------------------------------------------------
# Batched per-window reductions used by the estimators and the harness.


@dataclass(frozen=True)
class WindowData:
    """Per-window quantities of a fine path, reduced for the estimators.

    ``outer`` carries the states on the coarse grid, ``ito`` the per-window
    left-point sums of (A X) . dX, and ``second`` (optional) the per-window
    iterated integrals.  A leading batch axis in the input states is preserved
    in every field after the window axis.
    """

    outer: np.ndarray  # (n_windows + 1, ..., d)
    ito: np.ndarray  # (n_windows, ...)
    second: np.ndarray | None  # (n_windows, ..., d, d)


def window_reduce(
    states: np.ndarray,
    L: int,
    A: np.ndarray,
    *,
    drift_states: np.ndarray | None = None,
    with_second: bool = False,
) -> WindowData:
    """Reduce a fine path to per-window sums for window length L.

    Parameters
    ----------
    states : ndarray, shape (n_fine + 1, ..., d)
        Fine-grid states whose increments are integrated against.
    L : int
        Fine steps per window; must divide n_fine.
    A : ndarray
        Drift generator defining the integrand (A X_l) . dX_l.
    drift_states : ndarray, optional
        States evaluated inside the integrand instead of ``states`` (the
        filtered estimator integrates A Z against dX).  Same shape as states.
    with_second : bool
        Also accumulate the per-window iterated integrals.
    """
    states = np.asarray(states, dtype=float)
    n = states.shape[0] - 1
    L = int(L)
    if L < 1 or n % L != 0:
        raise ConfigError(f"window length {L} does not divide {n} fine steps")
    if drift_states is None:
        drift_states = states
    elif drift_states.shape != states.shape:
        raise ConfigError("drift_states must match states in shape")
    n_w = n // L
    rest = states.shape[1:]  # (..., d) including any batch axes
    outer = states[::L].copy()
    # (n_w, L, ..., d) views; the window loop collapses into two einsums
    dx = np.diff(states, axis=0).reshape((n_w, L) + rest)
    g = _right_apply(drift_states[:-1], np.ascontiguousarray(A.T)).reshape((n_w, L) + rest)
    # accumulate the window sums step by step: a fused einsum contraction picks
    # its reduction order by operand shape, which would make the bits depend on
    # the batch size (the outer-product accumulation below has no inner
    # reduction axis and does not suffer from this)
    ito = (g[:, 0] * dx[:, 0]).sum(axis=-1)
    for l in range(1, L):
        ito = ito + (g[:, l] * dx[:, l]).sum(axis=-1)
    second = None
    if with_second:
        a = states[:-1].reshape((n_w, L) + rest) - outer[:-1][:, None]
        second = np.einsum("wl...i,wl...j->w...ij", a, dx)
    return WindowData(outer=outer, ito=ito, second=second)


def write_path_csv(path: ObservationPath, fp: IO[str]) -> None:
    """Dump a path as CSV with header t,x_1,...,x_d (full precision)."""
    d = path.d
    header = "t," + ",".join(f"x_{k + 1}" for k in range(d))
    fp.write(header + "\n")
    times = path.times
    for i in range(path.n_fine + 1):
        row = ",".join(f"{v:.17g}" for v in path.states[i])
        fp.write(f"{times[i]:.17g},{row}\n")
