"""Seeded Monte Carlo harness for frequentist estimator experiments.

A harness run repeats one estimation setup over many independently simulated
observation paths and aggregates the per-path estimates into an empirical
mean trajectory and spread, the quantities the closed-form theory in
``analysis`` predicts.  Three preset experiments cover the benchmark model:

- ``single-scale``: subsampled versus high-frequency assimilation on
  white-noise-driven data, where both are unbiased and should agree;
- ``two-scale``: data carrying an unresolved fast component, where the
  corrected high-frequency scheme and the subsampled scheme agree while the
  uncorrected one converges to a predictably wrong value (negative control);
- ``filtered``: fine-step assimilation of pre-filtered data from both
  sources, which needs no correction term at all.

Within one trial every configured scheme consumes the identical fine-grid
path, so scheme differences are paired and their comparison variance is far
below that of independent pools.  All randomness derives from one master
seed; results are reproducible byte for byte regardless of worker count.

Output layout per experiment: ``<outdir>/<name>/<scheme>.csv`` with columns
``t,m_hat,p_hat,se_m,sigma_analytic,m_analytic``, a ``trials.csv`` with
per-trial terminal values, and a ``summary.json``.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Mapping, Sequence

import numpy as np

from .analysis import bias_term, biased_frequentist_mean, estimate_fast_drift, sigma_closed_form
from .errors import ConfigError, EnkbfError
from .estimators import GaussianPosterior, SchemeConfig, _run_on_states
from .models import (
    FilterConfig,
    LinearModel,
    TwoScaleModel,
    damped_rotation,
    extended_stationary_covariance,
    frobenius,
    model_from_json,
    model_to_json,
    rotation_drift,
    stationary_covariance,
)
from .paths import (
    derive_seed,
    filtered_states_batch,
    reference_states_batch,
    simulate_two_scale_batch,
    two_scale_states_batch,
)

_SCHEME_NAME_OK = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-")

# trial index offset for auxiliary draws (correction estimation paths) so
# they never collide with the per-trial streams
_AUX_INDEX = 10**6


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete, serialisable description of one Monte Carlo run.

    ``keep_every`` thins the stored trajectory grid (terminal point always
    kept); ``chunk_size`` only controls batching and memory, not results.
    """

    model: LinearModel | TwoScaleModel
    schemes: Mapping[str, SchemeConfig]
    prior: GaussianPosterior
    T: float
    delta_tau: float
    n_trials: int
    master_seed: int
    filter: FilterConfig | None = None
    keep_every: int = 1
    chunk_size: int = 250
    outdir: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "schemes", dict(self.schemes))
        if not self.schemes:
            raise ConfigError("need at least one scheme")
        for name, cfg in self.schemes.items():
            if not name or not set(name) <= _SCHEME_NAME_OK:
                raise ConfigError(f"scheme name {name!r} is not filesystem-safe")
            if not isinstance(cfg, SchemeConfig):
                raise ConfigError(f"scheme {name!r} is not a SchemeConfig")
        if self.n_trials < 1:
            raise ConfigError(f"n_trials must be >= 1, got {self.n_trials}")
        if self.keep_every < 1 or self.chunk_size < 1:
            raise ConfigError("keep_every and chunk_size must be >= 1")
        if not (self.T > 0 and self.delta_tau > 0):
            raise ConfigError("need T > 0 and delta_tau > 0")
        n_fine = self._n_fine()
        for name, cfg in self.schemes.items():
            if abs(cfg.L * self.delta_tau - cfg.delta_t) > 1e-9 * cfg.delta_t:
                raise ConfigError(
                    f"scheme {name!r}: delta_t={cfg.delta_t} != L*delta_tau="
                    f"{cfg.L * self.delta_tau}"
                )
            if n_fine % cfg.L != 0:
                raise ConfigError(f"scheme {name!r}: window L={cfg.L} does not divide {n_fine}")
            if (n_fine // cfg.L) % self.keep_every != 0:
                raise ConfigError(
                    f"scheme {name!r}: keep_every={self.keep_every} does not divide "
                    f"{n_fine // cfg.L} windows"
                )
            if self.filter is not None and cfg.variant not in ("highfreq", "highfreq_corrected"):
                raise ConfigError("filtered runs use the highfreq family")
        if isinstance(self.model, TwoScaleModel) and self.delta_tau > self.model.epsilon / 10.0:
            raise ConfigError(
                f"delta_tau={self.delta_tau} does not resolve epsilon={self.model.epsilon}"
            )

    def _n_fine(self) -> int:
        n = int(round(self.T / self.delta_tau))
        if n < 1 or abs(n * self.delta_tau - self.T) > 1e-9 * self.T:
            raise ConfigError(f"delta_tau={self.delta_tau} does not divide T={self.T}")
        return n

    @property
    def base_model(self) -> LinearModel:
        return self.model.base if isinstance(self.model, TwoScaleModel) else self.model


@dataclass(frozen=True)
class AggregateStats:
    """Empirical moment trajectories of one scheme over all trials.

    sigma_bar is the trial-averaged posterior variance; with the stationary
    gain it is the exact per-trial value since the variance recursion is then
    deterministic.
    """

    times: np.ndarray
    m_hat: np.ndarray
    p_hat: np.ndarray
    se_m: np.ndarray
    sigma_bar: np.ndarray
    n_trials: int

    def __post_init__(self) -> None:
        if np.any(self.p_hat < 0):
            raise ConfigError("empirical variance must be >= 0")
        if not np.allclose(self.se_m, np.sqrt(self.p_hat / self.n_trials)):
            raise ConfigError("se_m must equal sqrt(p_hat / n_trials)")


@dataclass(frozen=True)
class TrialRecord:
    """Terminal state of one scheme on one trial, with its replay seed."""

    index: int
    seed: int
    scheme: str
    mu_T: float
    sigma_T: float


@dataclass(frozen=True)
class MonteCarloResult:
    stats: dict[str, AggregateStats]
    records: tuple[TrialRecord, ...] = field(repr=False)


# ---------------------------------------------------------------------------
# Config serialisation.  The JSON mirrors the dataclass field for field;
# matrices are nested lists.


def _scheme_payload(cfg: SchemeConfig) -> dict:
    return {
        "variant": cfg.variant,
        "delta_t": cfg.delta_t,
        "L": cfg.L,
        "gain_mode": cfg.gain_mode,
        "correction": None if cfg.correction is None else cfg.correction.tolist(),
    }


def config_to_json(config: ExperimentConfig) -> str:
    payload = {
        "model": json.loads(model_to_json(config.model)),
        "schemes": {name: _scheme_payload(cfg) for name, cfg in config.schemes.items()},
        "prior": {"mu": config.prior.mu, "sigma": config.prior.sigma},
        "T": config.T,
        "delta_tau": config.delta_tau,
        "n_trials": config.n_trials,
        "master_seed": config.master_seed,
        "filter": None
        if config.filter is None
        else {"delta": config.filter.delta, "delta_noise": config.filter.delta_noise},
        "keep_every": config.keep_every,
        "chunk_size": config.chunk_size,
        "outdir": config.outdir,
    }
    return json.dumps(payload, indent=2)


def config_from_json(text: str) -> ExperimentConfig:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid experiment JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise ConfigError("experiment JSON must be an object")
    try:
        schemes = {
            name: SchemeConfig(
                variant=sp["variant"],
                delta_t=sp["delta_t"],
                L=sp["L"],
                gain_mode=sp.get("gain_mode", "exact"),
                correction=None if sp.get("correction") is None else np.array(sp["correction"]),
            )
            for name, sp in payload["schemes"].items()
        }
        filt = payload.get("filter")
        return ExperimentConfig(
            model=model_from_json(json.dumps(payload["model"])),
            schemes=schemes,
            prior=GaussianPosterior(mu=payload["prior"]["mu"], sigma=payload["prior"]["sigma"]),
            T=payload["T"],
            delta_tau=payload["delta_tau"],
            n_trials=payload["n_trials"],
            master_seed=payload["master_seed"],
            filter=None if filt is None else FilterConfig(delta=filt["delta"], delta_noise=filt["delta_noise"]),
            keep_every=payload.get("keep_every", 1),
            chunk_size=payload.get("chunk_size", 250),
            outdir=payload.get("outdir"),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"experiment JSON is missing or mistypes a field: {exc}") from None


# ---------------------------------------------------------------------------
# Monte Carlo core.


def _stat_cov(config: ExperimentConfig) -> np.ndarray | None:
    # stationary-mode schemes average the gain quadratic over the covariance
    # of whatever signal actually enters the drift
    if config.filter is not None:
        return extended_stationary_covariance(config.base_model, config.filter).c_tilde
    return None


def _simulate_chunk(config: ExperimentConfig, seeds: Sequence[int]):
    if isinstance(config.model, TwoScaleModel):
        x, _ = two_scale_states_batch(config.model, config.T, config.delta_tau, seeds)
    else:
        x = reference_states_batch(config.model, config.T, config.delta_tau, seeds)
    z = None
    if config.filter is not None:
        z = filtered_states_batch(x, config.filter, config.delta_tau, seeds)
    return x, z


def _chunk_job(config: ExperimentConfig, start: int, stop: int) -> dict[str, tuple]:
    seeds = [derive_seed(config.master_seed, i) for i in range(start, stop)]
    x, z = _simulate_chunk(config, seeds)
    stat_cov = _stat_cov(config)
    base = config.base_model
    out = {}
    for name, cfg in config.schemes.items():
        _, mu, sigma = _run_on_states(
            x, z, config.delta_tau, cfg, config.prior, base.A, base.gamma, stat_cov
        )
        k = config.keep_every
        out[name] = (np.ascontiguousarray(mu[::k]), np.ascontiguousarray(sigma[::k]))
    return out


def run_monte_carlo(config: ExperimentConfig, workers: int = 1) -> MonteCarloResult:
    """Run every configured scheme over ``n_trials`` paired trials.

    Trials are processed in chunks of ``chunk_size`` whose per-path noise
    streams derive from (master_seed, trial index), so neither chunking nor
    the worker count can change any number.  Workers share memory; each one
    holds a chunk of fine paths at a time.  A failing trial aborts the whole
    run with its index and seed so the single trial can be replayed.
    """
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    n = config.n_trials
    bounds = [(s, min(s + config.chunk_size, n)) for s in range(0, n, config.chunk_size)]
    results: list[dict | None] = [None] * len(bounds)

    def guarded(idx: int) -> None:
        start, stop = bounds[idx]
        try:
            results[idx] = _chunk_job(config, start, stop)
        except EnkbfError as exc:
            for i in range(start, stop):  # find the offender for replay
                try:
                    _chunk_job(config, i, i + 1)
                except EnkbfError as inner:
                    raise type(inner)(
                        f"trial {i} (seed {derive_seed(config.master_seed, i)}) failed: {inner}"
                    ) from inner
            raise exc

    if workers == 1:
        for idx in range(len(bounds)):
            guarded(idx)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for fut in [pool.submit(guarded, idx) for idx in range(len(bounds))]:
                fut.result()

    seeds = [derive_seed(config.master_seed, i) for i in range(n)]
    stats: dict[str, AggregateStats] = {}
    records: list[TrialRecord] = []
    for name, cfg in config.schemes.items():
        mu = np.concatenate([r[name][0] for r in results], axis=1)
        sigma = np.concatenate([r[name][1] for r in results], axis=1)
        p_hat = mu.var(axis=1)
        n_w = (mu.shape[0] - 1) * config.keep_every
        stats[name] = AggregateStats(
            times=np.arange(0, n_w + 1, config.keep_every) * cfg.delta_t,
            m_hat=mu.mean(axis=1),
            p_hat=p_hat,
            se_m=np.sqrt(p_hat / n),
            sigma_bar=sigma.mean(axis=1),
            n_trials=n,
        )
        records.extend(
            TrialRecord(index=i, seed=seeds[i], scheme=name,
                        mu_T=float(mu[-1, i]), sigma_T=float(sigma[-1, i]))
            for i in range(n)
        )
    return MonteCarloResult(stats=stats, records=tuple(records))


# ---------------------------------------------------------------------------
# Analytic overlays and output files.


def predicted_bias_rate(config: ExperimentConfig, scheme: str) -> float:
    """Per-unit-variance drift bias the theory predicts for one scheme.

    Nonzero exactly for uncorrected high-frequency assimilation of unfiltered
    two-scale data; subsampling, the corrected scheme and both filtered
    estimators are predicted unbiased.
    """
    cfg = config.schemes[scheme]
    if (
        isinstance(config.model, TwoScaleModel)
        and config.filter is None
        and cfg.variant == "highfreq"
    ):
        base = config.base_model
        return bias_term(base.A, config.model.fast_drift, base.gamma) / base.gamma
    return 0.0


def analytic_overlay(config: ExperimentConfig, scheme: str) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form (sigma_t, m_t) on the scheme's stored grid."""
    cfg = config.schemes[scheme]
    base = config.base_model
    cov = _stat_cov(config)
    if cov is None:
        cov = stationary_covariance(base)
    c = frobenius(base.A.T @ base.A, cov) / base.gamma
    dt_out = cfg.delta_t * config.keep_every
    traj = biased_frequentist_mean(
        config.prior.sigma, config.prior.mu, c, predicted_bias_rate(config, scheme),
        config.T, dt_out,
    )
    return sigma_closed_form(config.prior.sigma, c, traj.times), traj.m


def _write_scheme_csv(fp: IO[str], stats: AggregateStats, sigma_an: np.ndarray,
                      m_an: np.ndarray) -> None:
    fp.write("t,m_hat,p_hat,se_m,sigma_analytic,m_analytic\n")
    for row in zip(stats.times, stats.m_hat, stats.p_hat, stats.se_m, sigma_an, m_an):
        fp.write(",".join(f"{v:.17g}" for v in row) + "\n")


def write_outputs(
    exp_dir: Path,
    runs: Sequence[tuple[ExperimentConfig, MonteCarloResult]],
    runtime_seconds: float,
) -> dict:
    """Write per-scheme CSVs, trials.csv and summary.json; returns the summary.

    Scheme names must be unique across the runs sharing the directory.  CSV
    bytes depend only on configs and master seeds; summary.json additionally
    carries the wall-clock runtime.
    """
    exp_dir = Path(exp_dir)
    exp_dir.mkdir(parents=True, exist_ok=True)
    seen: set[str] = set()
    summary_runs = []
    with open(exp_dir / "trials.csv", "w") as trials_fp:
        trials_fp.write("trial,seed,scheme,mu_T,sigma_T\n")
        for config, result in runs:
            scheme_summaries = {}
            for name, stats in result.stats.items():
                if name in seen:
                    raise ConfigError(f"duplicate scheme name {name!r} in one experiment")
                seen.add(name)
                sigma_an, m_an = analytic_overlay(config, name)
                with open(exp_dir / f"{name}.csv", "w") as fp:
                    _write_scheme_csv(fp, stats, sigma_an, m_an)
                scheme_summaries[name] = {
                    "m_hat_T": stats.m_hat[-1],
                    "p_hat_T": stats.p_hat[-1],
                    "se_T": stats.se_m[-1],
                    "sigma_bar_T": stats.sigma_bar[-1],
                    "sigma_analytic_T": float(sigma_an[-1]),
                    "m_analytic_T": float(m_an[-1]),
                }
            for rec in result.records:
                trials_fp.write(
                    f"{rec.index},{rec.seed},{rec.scheme},{rec.mu_T:.17g},{rec.sigma_T:.17g}\n"
                )
            summary_runs.append(
                {"config": json.loads(config_to_json(config)), "schemes": scheme_summaries}
            )
    summary = {
        "experiment": exp_dir.name,
        "runtime_seconds": round(runtime_seconds, 3),
        "runs": summary_runs,
    }
    with open(exp_dir / "summary.json", "w") as fp:
        json.dump(summary, fp, indent=2)
        fp.write("\n")
    return summary


def _run_and_write(outdir, name: str, configs: Sequence[ExperimentConfig],
                   workers: int) -> list[MonteCarloResult]:
    t0 = time.monotonic()
    results = [run_monte_carlo(c, workers=workers) for c in configs]
    write_outputs(Path(outdir) / name, list(zip(configs, results)), time.monotonic() - t0)
    return results


# ---------------------------------------------------------------------------
# Preset experiments.  Defaults are desk scale; ``full=True`` raises the
# trial counts to the published 10^4 where that applies.


def experiment_single_scale(
    outdir,
    n_trials: int = 2000,
    master_seed: int = 12345,
    delta_t: float = 0.06,
    delta_tau: float = 1e-4,
    T: float = 6.0,
    prior: GaussianPosterior = GaussianPosterior(mu=0.0, sigma=4.0),
    full: bool = False,
    workers: int = 1,
) -> MonteCarloResult:
    """Subsampled versus high-frequency assimilation of white-noise data."""
    L = int(round(delta_t / delta_tau))
    config = ExperimentConfig(
        model=damped_rotation(),
        schemes={
            "subsampled": SchemeConfig("subsampled", delta_t, L, gain_mode="stationary"),
            "highfreq": SchemeConfig("highfreq", delta_t, L, gain_mode="stationary"),
        },
        prior=prior,
        T=T,
        delta_tau=delta_tau,
        n_trials=10_000 if full else n_trials,
        master_seed=master_seed,
    )
    return _run_and_write(outdir, "single-scale", [config], workers)[0]


def experiment_two_scale(
    outdir,
    n_trials: int = 2000,
    master_seed: int = 424242,
    delta_t: float = 0.06,
    delta_tau: float = 1e-4,
    T: float = 6.0,
    epsilon: float = 0.01,
    beta: float = 2.0,
    prior: GaussianPosterior = GaussianPosterior(mu=0.0, sigma=4.0),
    correction: str = "true",
    n_correction_paths: int = 200,
    full: bool = False,
    workers: int = 1,
) -> MonteCarloResult:
    """Two-scale data: subsampled and corrected schemes against an
    uncorrected negative control.

    ``correction="true"`` plugs the data-generating fast-drift matrix into
    the corrected scheme; ``"estimated"`` first recovers it from a dedicated
    batch of ``n_correction_paths`` paths (seeded from an auxiliary stream of
    the same master seed) and uses the estimate instead.
    """
    if correction not in ("true", "estimated"):
        raise ConfigError(f"correction must be 'true' or 'estimated', got {correction!r}")
    model = TwoScaleModel(base=damped_rotation(), fast_drift=rotation_drift(beta), epsilon=epsilon)
    L = int(round(delta_t / delta_tau))
    corr = model.fast_drift
    if correction == "estimated":
        est_paths = simulate_two_scale_batch(
            model, T, delta_tau, n_correction_paths, derive_seed(master_seed, _AUX_INDEX)
        )
        corr = estimate_fast_drift(est_paths, delta_t, model.base.gamma).matrix
    config = ExperimentConfig(
        model=model,
        schemes={
            "subsampled": SchemeConfig("subsampled", delta_t, L, gain_mode="stationary"),
            "corrected": SchemeConfig(
                "highfreq_corrected", delta_t, L, correction=corr, gain_mode="stationary"
            ),
            "uncorrected": SchemeConfig("highfreq", delta_t, L, gain_mode="stationary"),
        },
        prior=prior,
        T=T,
        delta_tau=delta_tau,
        n_trials=10_000 if full else n_trials,
        master_seed=master_seed,
        chunk_size=100,
    )
    return _run_and_write(outdir, "two-scale", [config], workers)[0]


def experiment_filtered(
    outdir,
    n_trials: int = 100,
    master_seed: int = 515151,
    delta: float = 0.1,
    delta_noise: float = 0.0,
    delta_tau: float = 1e-4,
    T: float = 6.0,
    epsilon: float = 0.01,
    beta: float = 2.0,
    prior: GaussianPosterior = GaussianPosterior(mu=0.0, sigma=4.0),
    keep_every: int = 600,
    workers: int = 1,
) -> tuple[MonteCarloResult, MonteCarloResult]:
    """Fine-step assimilation of pre-filtered data, both data sources.

    The estimator updates on every fine step (window length one) and never
    subsamples or corrects; the filter alone removes the fast-scale bias.
    Returns (reference result, two-scale result).
    """
    filt = FilterConfig(delta=delta, delta_noise=delta_noise)
    scheme = SchemeConfig("highfreq", delta_tau, 1, gain_mode="stationary")
    common = dict(
        prior=prior, T=T, delta_tau=delta_tau, n_trials=n_trials,
        master_seed=master_seed, filter=filt, keep_every=keep_every, chunk_size=50,
    )
    config_ref = ExperimentConfig(
        model=damped_rotation(), schemes={"reference": scheme}, **common
    )
    config_two = ExperimentConfig(
        model=TwoScaleModel(
            base=damped_rotation(), fast_drift=rotation_drift(beta), epsilon=epsilon
        ),
        schemes={"two-scale": scheme},
        **common,
    )
    res = _run_and_write(outdir, "filtered", [config_ref, config_two], workers)
    return res[0], res[1]
