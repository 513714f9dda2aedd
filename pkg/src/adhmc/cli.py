"""Experiment front-end: one command per experiment kind.

Usage::

    adhmc sample      --config cfg.yaml --out results/run1 [--seed N]
    adhmc error-sweep --config cfg.yaml --out results/sweep1
    adhmc converge    --config cfg.yaml --out results/tv1
    adhmc diagnose    --config cfg.yaml --out results/diag1
    adhmc advise      --config cfg.yaml --out results/advice1

Every command validates the configuration fully before computing, writes
fixed-name CSV artifacts plus a ``meta`` sidecar into the output directory,
and renders figures next to them unless ``report.figures`` is false (or
``--no-figures`` is passed).  Exit status: 0 on success with all asserted
invariants passing, 1 on computation or invariant failure, 2 on configuration
errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import rng as rng_mod
from .config import ExperimentConfig, dump_config, load_config
from .diagnostics import (
    acceptance_bound_constants,
    dirichlet_ratio_vs_autocorr,
    energy_error_bound_check,
    gradient_moment_check,
    kl_pushforward_estimate,
    quadratic_form_moment_check,
    step_size_advisor,
    tv_decay_estimate,
)
from .ensemble import estimate_position_rms
from .errors import AdhmcError, ConfigurationError
from .integrators import (
    leapfrog_jacobian_determinant,
    leapfrog_step,
    one_step_error_sweep,
    quadrature_identity_check,
)
from .models import (
    PhaseState,
    check_component_sum,
    estimate_moments,
    finite_difference_gradient_check,
    verify_certificate,
)
from .oracles import check_unbiasedness
from .report import (
    render_chain_figure,
    render_diagnose_figure,
    render_sweep_figure,
    render_tv_figure,
    write_csv,
    write_meta,
)
from .samplers import run_chain


def run_experiment(config: ExperimentConfig, out_dir) -> int:
    """Dispatch one experiment; returns the process exit status."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    runner = {
        "sample": _run_sample,
        "error-sweep": _run_error_sweep,
        "converge": _run_converge,
        "diagnose": _run_diagnose,
        "advise": _run_advise,
    }[config.kind]
    status, extra = runner(config, out)
    write_meta(
        out / "meta",
        dump_config(config),
        seed=config.seed,
        potential=config.model.potential,
        kinetic=config.model.kinetic,
        version=__version__,
        wall_time=time.time() - started,
        extra=extra,
    )
    return status


def _run_sample(config: ExperimentConfig, out: Path):
    potential = config.build_potential()
    kinetic = config.build_kinetic()
    oracle = config.build_oracle(potential, rng_mod.stream(config.seed, rng_mod.MOMENTS))
    chain_rng = rng_mod.stream(config.seed, rng_mod.CHAIN, 0)
    q0 = np.zeros(potential.dim)
    record = run_chain(q0, potential, kinetic, oracle, config.sampler_config(),
                       config.sampler.n_steps, chain_rng,
                       seed_trace=rng_mod.describe(config.seed, rng_mod.CHAIN, 0))

    d = potential.dim
    header = ["step"] + [f"q_{i}" for i in range(d)] + ["accepted", "log_ratio", "energy_gap"]
    rows = [[0, *record.positions[0], None, None, None]]
    for t in range(record.n_steps):
        rows.append([t + 1, *record.positions[t + 1], bool(record.accept_flags[t]),
                     float(record.log_ratios[t]), float(record.energy_gaps[t])])
    write_csv(out / "chain.csv", header, rows)
    if config.report.figures:
        render_chain_figure(record, out / "chain.png")
    flagged = int(record.flagged.sum())
    print(f"sample: {record.n_steps} steps, acceptance {record.acceptance_rate:.4f}, "
          f"{flagged} flagged")
    return 0, {"acceptance_rate": record.acceptance_rate, "flagged_steps": flagged,
               "seed_trace": record.seed_trace}


def _run_error_sweep(config: ExperimentConfig, out: Path):
    potential = config.build_potential()
    kinetic = config.build_kinetic()
    oracle = config.build_oracle(potential, rng_mod.stream(config.seed, rng_mod.MOMENTS))
    sweep_rng = rng_mod.stream(config.seed, rng_mod.SWEEP)
    result = one_step_error_sweep(potential, kinetic, config.sweep.etas,
                                  config.sweep.samples, sweep_rng, oracle=oracle)

    write_csv(out / "sweep.csv",
              ["eta", "q_err", "q_se", "p_err", "p_se", "h_err", "h_se"],
              [[e, result.q_errors[i], result.q_ses[i], result.p_errors[i],
                result.p_ses[i], result.h_errors[i], result.h_ses[i]]
               for i, e in enumerate(result.etas)])
    write_csv(out / "summary.csv",
              ["series", "slope", "slope_se"],
              [[name, result.slopes[key][0], result.slopes[key][1]]
               for name, key in (("position", "q"), ("momentum", "p"), ("energy", "h"),
                                 ("potential_gap", "u"), ("kinetic_gap", "v"))])
    if config.report.figures:
        render_sweep_figure(result, out / "sweep.png")
    for name, key in (("position", "q"), ("momentum", "p"), ("energy", "h")):
        print(f"error-sweep: {name} slope {result.slopes[key][0]:.3f} "
              f"+- {result.slopes[key][1]:.3f}")
    return 0, {"samples": result.samples}


def _run_converge(config: ExperimentConfig, out: Path):
    potential = config.build_potential()
    kinetic = config.build_kinetic()
    rng = rng_mod.stream(config.seed, rng_mod.DIAGNOSTIC, 0)
    report = tv_decay_estimate(
        potential, kinetic, config.sampler.eta, config.sampler.steps,
        config.sampler.algorithm, config.converge.chains, config.converge.horizon,
        rng, offset=config.converge.offset,
        reference_draws=config.converge.reference_draws,
    )
    write_csv(out / "tv.csv", ["step", "d_tv"],
              [[t, v] for t, v in zip(report.times, report.tv)])
    reading = config.converge.sigma_v_reading
    write_csv(out / "summary.csv",
              ["contraction", "contraction_se", "factor_squared", "factor_first_power",
               "passed_squared", "passed_first_power", "noise_floor", "fit_points",
               "asserted_reading"],
              [[report.contraction, report.contraction_se,
                report.factors["squared"], report.factors["first_power"],
                report.passes["squared"], report.passes["first_power"],
                report.noise_floor, report.fit_stop - report.fit_start, reading]])
    if config.report.figures:
        render_tv_figure(report, out / "tv.png")
    ok = report.passes[reading]
    print(f"converge: contraction {report.contraction:.4f} +- {report.contraction_se:.4f}; "
          f"theoretical factor ({reading}) {report.factors[reading]:.6f}; "
          f"{'PASS' if ok else 'FAIL'}")
    return (0 if ok else 1), {"contraction": report.contraction}


def _run_advise(config: ExperimentConfig, out: Path):
    potential = config.build_potential()
    kinetic = config.build_kinetic()
    rng = rng_mod.stream(config.seed, rng_mod.DIAGNOSTIC, 1)
    oracle = config.build_oracle(potential, rng_mod.stream(config.seed, rng_mod.MOMENTS))
    stochastic = not oracle.is_exact
    sigma_q = potential.second_moment_sigma_q
    if sigma_q is None:
        sigma_q = estimate_position_rms(potential, 100_000, rng)
    bounds = acceptance_bound_constants(
        potential.certificate, kinetic.certificate, potential.dim,
        sigma_q, kinetic.moments.sigma_p,
        oracle_moments=oracle.mean_lip_moments if stochastic else None,
        third_bar=oracle.certificate_bounds.third if stochastic else None,
    )
    eta = step_size_advisor(bounds, config.sampler.steps, config.advise.target_accept,
                            config.advise.exception_mass, stochastic=stochastic)
    write_csv(out / "advice.csv",
              ["eta", "a3", "a3_sg", "steps", "target_accept", "exception_mass",
               "stochastic", "sigma_q", "sigma_p"],
              [[eta, bounds.a3, bounds.a3_sg, config.sampler.steps,
                config.advise.target_accept, config.advise.exception_mass,
                stochastic, sigma_q, kinetic.moments.sigma_p]])
    print(f"advise: eta = {eta:.6g} (a3 = {bounds.a3:.6g}, a3_sg = {bounds.a3_sg:.6g})")
    return 0, {"eta": eta}


def _run_diagnose(config: ExperimentConfig, out: Path):
    potential = config.build_potential()
    kinetic = config.build_kinetic()
    oracle = config.build_oracle(potential, rng_mod.stream(config.seed, rng_mod.MOMENTS))
    draws, trials = config.diagnose.draws, config.diagnose.trials
    rows = []
    failures = []

    def assert_row(check, detail, value, bound, se, passed):
        rows.append([check, detail, value, bound, se, bool(passed)])
        if not passed:
            failures.append(f"{check}[{detail}]")

    def report_row(check, detail, value, bound=None, se=None):
        rows.append([check, detail, value, bound, se, None])

    # Certificates and gradient consistency.
    for i, model in enumerate((potential, kinetic)):
        r = rng_mod.stream(config.seed, rng_mod.DIAGNOSTIC, 10 + i)
        cert = verify_certificate(model, trials, r)
        assert_row("certificate", model.name, float(cert.violations), 0.0, 0.0,
                   cert.passed)
        fd = finite_difference_gradient_check(model, min(trials, 200),
                                              rng_mod.stream(config.seed, rng_mod.DIAGNOSTIC, 20 + i))
        assert_row("gradient_consistency", model.name, fd, 1e-5, 0.0, fd <= 1e-5)
    if potential.components:
        mismatch = check_component_sum(potential, 50,
                                       rng_mod.stream(config.seed, rng_mod.DIAGNOSTIC, 22))
        assert_row("component_sum", potential.name, mismatch, 1e-10, 0.0,
                   mismatch <= 1e-10)

    # Oracle unbiasedness.
    ub = check_unbiasedness(oracle, potential, probes=20, draws_per_probe=10_000,
                            rng=rng_mod.stream(config.seed, rng_mod.DIAGNOSTIC, 23))
    assert_row("oracle_unbiasedness", oracle.name, ub.max_standardized_deviation,
               ub.threshold, 0.0, ub.passed)

    # Auxiliary moment identity (integration by parts): mu == sigma entrywise.
    est = estimate_moments(kinetic, draws, rng_mod.stream(config.seed, rng_mod.DIAGNOSTIC, 24))
    gap = np.abs(est.mu - est.sigma)
    allow = 4.0 * (est.standard_errors["mu"] + est.standard_errors["sigma"])
    assert_row("moment_identity", kinetic.name, float(gap.max()),
               float(allow[np.unravel_index(np.argmax(gap), gap.shape)]),
               0.0, bool(np.all(gap <= allow)))

    # Gradient-norm moment bounds for p = 1, 2.
    for p_order in (1, 2):
        rep = gradient_moment_check(potential, kinetic, p_order, draws,
                                    rng_mod.stream(config.seed, rng_mod.DIAGNOSTIC, 30 + p_order))
        for row in rep.rows:
            assert_row(f"moment_bound_p{p_order}", row.label, row.estimate,
                       row.bound, row.se, row.passed)

    # Quadratic-form bound: reported only (fails the plain reading for d > 1).
    qf = quadratic_form_moment_check(potential, kinetic, draws,
                                     rng_mod.stream(config.seed, rng_mod.DIAGNOSTIC, 33))
    report_row("quadratic_form_exhibit",
               f"{potential.name}|{kinetic.name}|{qf.status}",
               qf.estimate, qf.bound, qf.se)

    # Energy-error bound and slope.
    eb = energy_error_bound_check(potential, kinetic, oracle, config.sweep.etas,
                                  config.sweep.samples,
                                  rng_mod.stream(config.seed, rng_mod.DIAGNOSTIC, 34))
    assert_row("energy_error_slope", eb.coefficient_kind, eb.slope, eb.min_slope,
               eb.slope_se, eb.slope_passed)
    for e, t, s in zip(eb.etas, eb.totals, eb.ses):
        assert_row("energy_error_bound", f"eta={e:g}", t,
                   eb.coefficient * e ** 3, s, t <= eb.coefficient * e ** 3 + 4.0 * s)

    # Mechanical identities: invertibility, volume preservation, quadrature.
    inv_rng = rng_mod.stream(config.seed, rng_mod.DIAGNOSTIC, 40)
    worst_inv = 0.0
    for _ in range(100):
        state = PhaseState(q=inv_rng.standard_normal(potential.dim),
                           p=inv_rng.standard_normal(potential.dim))
        fwd = leapfrog_step(state, potential.gradient, kinetic.gradient,
                            config.sampler.eta, "forward")
        back = leapfrog_step(fwd, potential.gradient, kinetic.gradient,
                             config.sampler.eta, "backward")
        worst_inv = max(worst_inv,
                        float(np.max(np.abs(back.q - state.q))),
                        float(np.max(np.abs(back.p - state.p))))
    assert_row("invertibility", "backward_after_forward", worst_inv, 1e-12, 0.0,
               worst_inv <= 1e-12)
    if potential.dim <= 5:
        worst_det = 0.0
        for _ in range(20):
            state = PhaseState(q=inv_rng.standard_normal(potential.dim),
                               p=inv_rng.standard_normal(potential.dim))
            det = leapfrog_jacobian_determinant(potential, kinetic, state,
                                                config.sampler.eta)
            worst_det = max(worst_det, abs(det - 1.0))
        assert_row("volume_preservation", "abs_det_minus_one", worst_det, 1e-6,
                   0.0, worst_det <= 1e-6)
    for name, f in (("quadratic", lambda s: s ** 2), ("cubic", lambda s: s ** 3)):
        resid = quadrature_identity_check(f, 0.5, 10_001)
        assert_row("quadrature_identity", name, resid, 1e-10, 0.0, resid <= 1e-10)

    # Spectral-gap witness identity on a fresh chain.
    chain = run_chain(np.zeros(potential.dim), potential, kinetic, oracle,
                      config.sampler_config(), config.sampler.n_steps,
                      rng_mod.stream(config.seed, rng_mod.CHAIN, 1),
                      seed_trace=rng_mod.describe(config.seed, rng_mod.CHAIN, 1))
    ident = dirichlet_ratio_vs_autocorr(chain, lambda x: x[:, 0],
                                        chain.burn_in_default())
    assert_row("gap_identity", "h=q_0", ident.difference,
               ident.tolerance_se * ident.difference_se, ident.difference_se,
               ident.passed)
    report_row("gap_witness", "h=q_0", ident.ratio, None, None)

    # One-step KL estimate between two displaced starts: reported only.
    probe = 0.5 * np.ones(potential.dim) / np.sqrt(potential.dim)
    kl = kl_pushforward_estimate(probe, -probe, potential, kinetic,
                                 config.sampler.eta, trials,
                                 rng_mod.stream(config.seed, rng_mod.DIAGNOSTIC, 41))
    report_row("kl_pushforward", "full", kl.estimate, None, kl.se)
    report_row("kl_pushforward", "jacobian_term_vs_continuity_bound",
               kl.jacobian_term_mean_abs, kl.continuity_bound, None)

    write_csv(out / "diagnostics.csv",
              ["check", "detail", "value", "bound", "se", "passed"], rows)
    if config.report.figures:
        render_diagnose_figure(rows, out / "diagnostics.png")
    n_assert = sum(1 for r in rows if r[5] is not None)
    print(f"diagnose: {n_assert - len(failures)}/{n_assert} asserted checks passed"
          + ("" if not failures else "; FAILED: " + ", ".join(failures)))
    return (0 if not failures else 1), {"failed_checks": failures}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="adhmc",
        description="Run sampler experiments and verification diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in ("sample", "error-sweep", "converge", "diagnose", "advise"):
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("--config", required=True, help="path to the YAML configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering for this run")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
        if config.kind != args.command:
            raise ConfigurationError(
                [f"kind: config says {config.kind!r} but the command is {args.command!r}"])
        if args.seed is not None:
            config = dataclasses.replace(config, seed=args.seed)
        if args.no_figures:
            config = dataclasses.replace(
                config, report=dataclasses.replace(config.report, figures=False))
    except ConfigurationError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read configuration: {exc}", file=sys.stderr)
        return 2

    try:
        return run_experiment(config, args.out)
    except AdhmcError as exc:
        print(f"{config.kind} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
