"""Command-line interface.

Every subcommand validates its inputs before any compute and maps failures to
stable exit codes: 2 for usage errors (handled by the argument parser), 3 for
configuration contract violations, 4 for numeric failures, 5 for I/O.  Error
output is one line, prefixed with the category.

The built-in model preset ``rotation2d`` is the two-dimensional damped
rotation with unit noise; pass ``--model-file`` to substitute any serialised
model.  All randomness flows from the ``--seed`` flag of the respective
subcommand.
"""

from __future__ import annotations

import functools
import json
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import click

from .analysis import (
    biased_frequentist_mean,
    estimate_fast_drift,
    frequentist_moments,
    subsample_diagnostic,
)
from .errors import ConfigError, NumericError
from .estimators import (
    GaussianPosterior,
    SchemeConfig,
    run_estimator,
    run_filtered_estimator,
    write_trace_csv,
)
from .harness import (
    config_from_json,
    experiment_filtered,
    experiment_single_scale,
    experiment_two_scale,
    run_monte_carlo,
    write_outputs,
)
from .models import (
    FilterConfig,
    TwoScaleModel,
    damped_rotation,
    extended_stationary_covariance,
    model_from_json,
    rotation_drift,
)
from .paths import (
    simulate_filtered,
    simulate_reference,
    simulate_reference_batch,
    simulate_two_scale,
    simulate_two_scale_batch,
    write_path_csv,
)


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config-error: {exc}", err=True)
            sys.exit(3)
        except NumericError as exc:
            click.echo(f"numeric-error: {exc}", err=True)
            sys.exit(4)
        except BrokenPipeError:
            # downstream consumer closed the pipe (e.g. head); not an error
            devnull = os.open(os.devnull, os.O_WRONLY)
            os.dup2(devnull, sys.stdout.fileno())
            sys.exit(0)
        except OSError as exc:
            click.echo(f"io-error: {exc}", err=True)
            sys.exit(5)

    return wrapper


@contextmanager
def _out(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w") as fp:
            yield fp


def _load_model(model_file, epsilon, beta):
    if model_file is not None:
        model = model_from_json(Path(model_file).read_text())
    else:
        model = damped_rotation()
    if epsilon is not None:
        base = model.base if isinstance(model, TwoScaleModel) else model
        model = TwoScaleModel(base=base, fast_drift=rotation_drift(beta), epsilon=epsilon)
    return model


_model_options = [
    click.option("--model-file", default=None, metavar="PATH",
                 help="Serialised model (default: rotation2d preset)."),
    click.option("--epsilon", type=float, default=None,
                 help="Scale separation; switches to two-scale data."),
    click.option("--beta", type=float, default=2.0, show_default=True,
                 help="Rotation rate of the preset fast drift."),
]


def _with(options):
    def deco(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn

    return deco


@click.group()
def main() -> None:
    """Online drift-parameter estimation for linear SDEs."""


@main.command()
@click.option("--T", "T", type=float, default=6.0, show_default=True, help="Horizon.")
@click.option("--dtau", type=float, default=1e-4, show_default=True, help="Fine step.")
@click.option("--theta", type=float, default=1.0, show_default=True,
              help="Data-generating drift factor.")
@click.option("--seed", type=int, default=0, show_default=True)
@_with(_model_options)
@click.option("--filter-delta", type=float, default=None,
              help="Emit the pre-filtered signal with this filter width.")
@click.option("--filter-noise", type=click.IntRange(0, 1), default=0, show_default=True,
              help="Additive dither switch for the pre-filter.")
@click.option("-o", "--output", default=None, metavar="PATH", help="CSV output (default stdout).")
@_guard
def simulate(T, dtau, theta, seed, model_file, epsilon, beta, filter_delta, filter_noise, output):
    """Simulate one observation path and write it as CSV."""
    model = _load_model(model_file, epsilon, beta)
    if isinstance(model, TwoScaleModel):
        path = simulate_two_scale(model, T, dtau, seed, theta=theta).slow
    else:
        path = simulate_reference(model, T, dtau, seed, theta=theta)
    if filter_delta is not None:
        path = simulate_filtered(path, FilterConfig(filter_delta, float(filter_noise)), seed)
    with _out(output) as fp:
        write_path_csv(path, fp)


@main.command()
@click.option("--variant", type=click.Choice(["subsampled", "highfreq", "highfreq_corrected", "strat"]),
              default="subsampled", show_default=True)
@click.option("--dt", type=float, default=0.06, show_default=True, help="Coarse update step.")
@click.option("--dtau", type=float, default=1e-4, show_default=True, help="Fine step.")
@click.option("--T", "T", type=float, default=6.0, show_default=True, help="Horizon.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--gain-mode", type=click.Choice(["exact", "stationary"]), default="exact",
              show_default=True)
@click.option("--prior-mean", type=float, default=0.0, show_default=True)
@click.option("--prior-var", type=float, default=4.0, show_default=True)
@_with(_model_options)
@click.option("--filter-delta", type=float, default=None,
              help="Assimilate the pre-filtered signal instead of the raw one.")
@click.option("--filter-noise", type=click.IntRange(0, 1), default=0, show_default=True)
@click.option("-o", "--output", default=None, metavar="PATH", help="CSV output (default stdout).")
@_guard
def estimate(variant, dt, dtau, T, seed, gain_mode, prior_mean, prior_var,
             model_file, epsilon, beta, filter_delta, filter_noise, output):
    """Run one estimation scheme along one simulated path (trace CSV)."""
    model = _load_model(model_file, epsilon, beta)
    base = model.base if isinstance(model, TwoScaleModel) else model
    correction = None
    if variant == "highfreq_corrected":
        if not isinstance(model, TwoScaleModel):
            raise ConfigError("the corrected variant needs a two-scale model (set --epsilon)")
        correction = model.fast_drift
    cfg = SchemeConfig(variant=variant, delta_t=dt, L=int(round(dt / dtau)),
                       correction=correction, gain_mode=gain_mode)
    prior = GaussianPosterior(mu=prior_mean, sigma=prior_var)
    if isinstance(model, TwoScaleModel):
        path = simulate_two_scale(model, T, dtau, seed).slow
    else:
        path = simulate_reference(model, T, dtau, seed)
    if filter_delta is not None:
        filt = FilterConfig(filter_delta, float(filter_noise))
        z = simulate_filtered(path, filt, seed)
        stat_cov = extended_stationary_covariance(base, filt).c_tilde
        trace = run_filtered_estimator(path, z, cfg, prior, base.A, base.gamma, stat_cov)
    else:
        trace = run_estimator(path, cfg, prior, base.A, base.gamma)
    with _out(output) as fp:
        write_trace_csv(trace, fp)


@main.command()
@click.option("--sigma0", type=float, required=True, help="Prior variance.")
@click.option("--c", "c", type=float, required=True, help="Contraction rate (A'A):C / gamma.")
@click.option("--T", "T", type=float, required=True, help="Horizon.")
@click.option("--m0", type=float, default=0.0, show_default=True, help="Prior mean.")
@click.option("--dt", type=float, default=0.06, show_default=True, help="Output grid step.")
@click.option("--bias-rate", type=float, default=0.0, show_default=True,
              help="Constant drift bias b in dm/dt = sigma (c (1 - m) + b).")
@click.option("-o", "--output", default=None, metavar="PATH",
              help="Write the t,m,p,sigma trajectory as CSV.")
@_guard
def moments(sigma0, c, T, m0, dt, bias_rate, output):
    """Closed-form estimator moments; prints the terminal values."""
    fm = frequentist_moments(sigma0, m0, c, T, dt)
    m = fm.m
    if bias_rate != 0.0:
        m = biased_frequentist_mean(sigma0, m0, c, bias_rate, T, dt).m
    click.echo(f"sigma_T={fm.sigma[-1]:.6g} m_T={m[-1]:.6g} p_T={fm.p[-1]:.6g}")
    if output is not None:
        with _out(output) as fp:
            fp.write("t,m,p,sigma\n")
            for row in zip(fm.times, m, fm.p, fm.sigma):
                fp.write(",".join(f"{v:.17g}" for v in row) + "\n")


@main.command("estimate-drift")
@click.option("--paths", "n_paths", type=int, default=200, show_default=True,
              help="Number of independent paths to pool windows over.")
@click.option("--dt", type=float, default=0.06, show_default=True, help="Window length.")
@click.option("--dtau", type=float, default=1e-4, show_default=True, help="Fine step.")
@click.option("--T", "T", type=float, default=6.0, show_default=True, help="Horizon per path.")
@click.option("--seed", type=int, default=0, show_default=True)
@_with(_model_options)
@click.option("-o", "--output", default=None, metavar="PATH", help="JSON output (default stdout).")
@_guard
def estimate_drift(n_paths, dt, dtau, T, seed, model_file, epsilon, beta, output):
    """Estimate the fast relaxation matrix from windowed iterated integrals.

    On white-noise-driven data the result is statistically zero; on two-scale
    data it recovers the fast drift.  Emits the matrix with per-entry
    standard errors as JSON.
    """
    model = _load_model(model_file, epsilon, beta)
    if isinstance(model, TwoScaleModel):
        batch = simulate_two_scale_batch(model, T, dtau, n_paths, seed)
        gamma = model.base.gamma
    else:
        batch = simulate_reference_batch(model, T, dtau, n_paths, seed)
        gamma = model.gamma
    est = estimate_fast_drift(batch, dt, gamma)
    payload = {
        "matrix": est.matrix.tolist(),
        "stderr": est.stderr.tolist(),
        "n_windows": est.n_windows,
    }
    with _out(output) as fp:
        json.dump(payload, fp, indent=2)
        fp.write("\n")


@main.command("subsample-scan")
@click.option("--dt-list", default="0.002,0.02,0.06", show_default=True,
              help="Comma-separated candidate coarse steps.")
@click.option("--paths", "n_paths", type=int, default=40, show_default=True)
@click.option("--dtau", type=float, default=1e-4, show_default=True, help="Fine step.")
@click.option("--T", "T", type=float, default=6.0, show_default=True, help="Horizon per path.")
@click.option("--seed", type=int, default=0, show_default=True)
@_with(_model_options)
@click.option("-o", "--output", default=None, metavar="PATH", help="CSV output (default stdout).")
@_guard
def subsample_scan(dt_list, n_paths, dtau, T, seed, model_file, epsilon, beta, output):
    """Scan the consecutive-increment diagnostic h over candidate steps.

    Emits CSV ``delta_t,h,stderr``; a flat h marks steps coarse enough to
    subsample at, a blow-up marks steps that resolve the fast dynamics.
    """
    try:
        dts = [float(s) for s in dt_list.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse --dt-list {dt_list!r}") from None
    model = _load_model(model_file, epsilon, beta)
    if isinstance(model, TwoScaleModel):
        batch = simulate_two_scale_batch(model, T, dtau, n_paths, seed)
    else:
        batch = simulate_reference_batch(model, T, dtau, n_paths, seed)
    diag = subsample_diagnostic(batch, dts)
    with _out(output) as fp:
        fp.write("delta_t,h,stderr\n")
        for row in zip(diag.delta_t, diag.h, diag.stderr):
            fp.write(",".join(f"{v:.17g}" for v in row) + "\n")


_EXPERIMENT_DEFAULTS = {
    "single-scale": (2000, 12345),
    "two-scale": (2000, 424242),
    "filtered": (100, 515151),
}


@main.command()
@click.argument("name", type=click.Choice(["single-scale", "two-scale", "filtered", "custom"]))
@click.option("--trials", type=int, default=None,
              help="Trial count (preset default; 2000 or 100).")
@click.option("--dt", type=float, default=0.06, show_default=True)
@click.option("--dtau", type=float, default=1e-4, show_default=True)
@click.option("--epsilon", type=float, default=0.01, show_default=True)
@click.option("--beta", type=float, default=2.0, show_default=True)
@click.option("--delta", type=float, default=0.1, show_default=True, help="Filter width.")
@click.option("--delta-noise", type=click.IntRange(0, 1), default=0, show_default=True)
@click.option("--seed", type=int, default=None, help="Master seed (preset default).")
@click.option("--full", is_flag=True, help="Published trial count (10000) where it applies.")
@click.option("--correction", type=click.Choice(["true", "estimated"]), default="true",
              show_default=True, help="two-scale: source of the correction matrix.")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--outdir", envvar="ENKBF_OUTDIR", default="enkbf-out", show_default=True,
              metavar="DIR", help="Output root (env ENKBF_OUTDIR).")
@click.option("--config", "config_file", default=None, metavar="PATH",
              help="custom: experiment configuration JSON.")
@_guard
def experiment(name, trials, dt, dtau, epsilon, beta, delta, delta_noise, seed, full,
               correction, workers, outdir, config_file):
    """Run a Monte Carlo experiment preset and write CSV/JSON outputs."""
    if name == "custom":
        if config_file is None:
            raise ConfigError("experiment custom needs --config")
        config = config_from_json(Path(config_file).read_text())
        if trials is not None:
            raise ConfigError("custom experiments take their trial count from the config")
        t0 = time.monotonic()
        result = run_monte_carlo(config, workers=workers)
        target = Path(config.outdir or outdir) / "custom"
        write_outputs(target, [(config, result)], time.monotonic() - t0)
        results = {"custom": result}
    else:
        n_default, seed_default = _EXPERIMENT_DEFAULTS[name]
        n = n_default if trials is None else trials
        master = seed_default if seed is None else seed
        if name == "single-scale":
            result = experiment_single_scale(
                outdir, n_trials=n, master_seed=master, delta_t=dt, delta_tau=dtau,
                full=full, workers=workers,
            )
        elif name == "two-scale":
            result = experiment_two_scale(
                outdir, n_trials=n, master_seed=master, delta_t=dt, delta_tau=dtau,
                epsilon=epsilon, beta=beta, correction=correction, full=full,
                workers=workers,
            )
        else:
            ref, two = experiment_filtered(
                outdir, n_trials=n, master_seed=master, delta=delta,
                delta_noise=float(delta_noise), delta_tau=dtau, epsilon=epsilon,
                beta=beta, workers=workers,
            )
            result = None
        target = Path(outdir) / name
        results = {name: result} if result is not None else {"reference": ref, "two-scale": two}
    for res in results.values():
        for scheme, stats in res.stats.items():
            click.echo(
                f"{scheme}: m_T={stats.m_hat[-1]:.4f} se={stats.se_m[-1]:.4f} "
                f"sigma_T={stats.sigma_bar[-1]:.4f} (n={stats.n_trials})"
            )
    click.echo(f"wrote {target}")


if __name__ == "__main__":
    main()
