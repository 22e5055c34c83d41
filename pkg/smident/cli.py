"""Pipeline driver: generate | estimate | identify | report | all."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
from pydantic import ValidationError

from smident.artifacts import (
    RunPaths,
    input_hashes,
    load_identification,
    record_provenance,
    save_identification,
)
from smident.config import ExperimentConfig, load_config, parse_overrides, save_config
from smident.dataset import build_sample_set, export_sample_set, split
from smident.errors import ConfigError, DataError, NumericalError
from smident.estimators import (
    EstimationSummary,
    ResidualProfiles,
    default_dbar_grid,
    estimate_dbar,
    estimate_Lu,
    estimate_Lz,
    estimate_order,
    fit_decay,
    lambda_profile,
)
from smident.lti_sim import (
    ContinuousTF,
    IORecord,
    discretize_zoh,
    generate_record,
    load_external_csv,
    load_record,
    save_record,
)
from smident.nlp import NLPSettings, Start
from smident.polytope_lp import bounding_box
from smident.predictors import (
    IdentResult,
    evaluate_bounds,
    identify_method1,
    identify_method2,
    identify_multistep_decoupled,
    identify_pem,
    identify_sem,
    propagate_all,
    true_theta1,
)
from smident.reports import (
    comparison_table,
    curves_frame,
    decay_frame,
    record_frame,
    select_horizons,
    write_csv,
    write_pdf,
)
from smident.sm_bounds import (
    DecayBound,
    SupportCacheRegistry,
    containment,
    ensure_contains,
    ensure_nonempty,
    fps,
    gamma_set,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def cmd_generate(cfg: ExperimentConfig) -> tuple[IORecord, IORecord]:
    paths = RunPaths(cfg.output_path)
    if cfg.data_path:
        logger.info("Loading external record %s", cfg.data_path)
        record = load_external_csv(Path(cfg.data_path), cfg.ts)
        inputs = input_hashes([Path(cfg.data_path)], cfg.output_path)
    else:
        record = generate_record(
            cfg.transfer_function(),
            cfg.ts,
            cfg.n_id + cfg.n_val,
            cfg.input_levels,
            cfg.input_hold,
            cfg.dbar0,
            cfg.seed,
            cfg.warmup_samples(),
        )
        inputs = {}
    io_id, io_val = split(record, cfg.n_id, cfg.n_val)
    save_record(io_id, paths.ident_record)
    save_record(io_val, paths.val_record)
    save_config(cfg, cfg.output_path / "config.json")
    record_provenance(paths, "generate", inputs)
    logger.info("Saved records to %s and %s", paths.ident_record, paths.val_record)
    return io_id, io_val


def cmd_estimate(cfg: ExperimentConfig) -> EstimationSummary:
    paths = RunPaths(cfg.output_path)
    io_id = load_record(paths.ident_record)
    tol, zero_tol = cfg.lp_tolerances(), cfg.zero_tolerance()
    profiles = ResidualProfiles(io_id, cfg.omega_box, tol, cfg.n_jobs)
    notes: list[str] = []

    if cfg.dbar is not None:
        grid, refine = [cfg.dbar], None
        notes.append("dbar fixed by configuration")
    elif cfg.dbar_grid is not None:
        grid, refine = cfg.dbar_grid, None
    else:
        grid = default_dbar_grid(io_id, cfg.dbar_grid_points, cfg.dbar_grid_low, cfg.dbar_grid_high)
        refine = cfg.dbar_refine_step * float(np.std(io_id.y))
    dbar, pbar, dbar_trace = estimate_dbar(
        io_id,
        cfg.o_init,
        grid,
        cfg.p_max,
        refine_step=refine,
        min_tail_fraction=cfg.min_tail_fraction,
        zero_tol=zero_tol,
        profiles=profiles,
    )
    dbar_trace.export(paths.dbar_trace)

    if cfg.order is not None:
        o = cfg.order
        notes.append("order fixed by configuration")
    else:
        o, order_trace = estimate_order(io_id, dbar, pbar, cfg.o_init, p_max=cfg.p_max, zero_tol=zero_tol, profiles=profiles)
        order_trace.export(paths.order_trace)
        if order_trace.note:
            notes.append(order_trace.note)

    lam = lambda_profile(io_id, o, cfg.p_max, dbar, profiles)
    eps = cfg.alpha * lam
    if np.any(eps > 0):
        fit = fit_decay(eps, pbar)
    else:
        notes.append("eps_hat vanishes at every horizon; decay fitted to the least-squares predictor coefficients")
        fit = fit_decay(_coefficient_decay(io_id, o, cfg.p_max), pbar)
    polys = [fps(build_sample_set(io_id, o, p), eps[p - 1], dbar, cfg.omega_box) for p in range(1, pbar + 1)]
    Lz = estimate_Lz(polys, o, fit.rho, tol, cfg.n_jobs)
    Lu = estimate_Lu(polys, o, fit.rho, tol, cfg.n_jobs)

    summary = EstimationSummary(
        dbar=float(dbar),
        pbar=int(pbar),
        o=int(o),
        p_max=cfg.p_max,
        rho_hat=fit.rho,
        L_hat=fit.L,
        Lz_hat=float(Lz),
        Lu_hat=float(Lu),
        lam=[float(v) for v in lam],
        eps_hat=[float(v) for v in eps],
        notes=notes,
        inputs=input_hashes([paths.ident_record], cfg.output_path),
    )
    summary.save(paths.estimation)
    write_csv(decay_frame(summary, fit), paths.decay_fit)
    record_provenance(paths, "estimate", summary.inputs)
    logger.info(
        "Estimates: dbar=%.4g pbar=%d o=%d rho_hat=%.4f Lz_hat=%.4f Lu_hat=%.4f", dbar, pbar, o, fit.rho, Lz, Lu
    )
    return summary


def _coefficient_decay(io: IORecord, o: int, p_max: int) -> np.ndarray:
    """max |theta_p| over the output and first o input entries of the propagated PEM predictor."""
    thetas, _ = propagate_all(identify_pem(build_sample_set(io, o, 1)), p_max)
    return np.array([np.max(np.abs(theta[: 2 * o])) for theta in thetas])


def _true_thetas(io: IORecord, o: int, pbar: int) -> list[np.ndarray] | None:
    if io.tf_num is None or io.tf_den is None:
        return None
    ss = discretize_zoh(ContinuousTF(io.tf_num, io.tf_den), io.ts)
    if o < ss.n:
        return None
    thetas, _ = propagate_all(true_theta1(ss, o), pbar)
    return thetas


def cmd_identify(cfg: ExperimentConfig) -> dict[str, IdentResult]:
    paths = RunPaths(cfg.output_path)
    io_id, io_val = load_record(paths.ident_record), load_record(paths.val_record)
    summary = EstimationSummary.load(paths.estimation)
    tol, omega, inflation = cfg.lp_tolerances(), cfg.omega_box, cfg.inflation()
    o, pbar, dbar = summary.o, summary.pbar, summary.dbar

    samples = [build_sample_set(io_id, o, p) for p in range(1, pbar + 1)]
    decay = DecayBound(summary.rho_hat, summary.Lz_hat, summary.Lu_hat)
    eps = summary.eps_hat[:pbar]
    logger.info("Checking %d refined feasible parameter sets", pbar)
    sets = ensure_nonempty(samples, eps, dbar, decay, cfg.nonempty_step, cfg.nonempty_cap, omega, tol)
    truth = _true_thetas(io_id, o, pbar) if cfg.enforce_containment else None
    if truth is not None:
        sets = ensure_contains(samples, sets.eps_hat, dbar, sets.decay, truth, cfg.nonempty_step, cfg.nonempty_cap, omega)
    polys, eps, decay = sets.polytopes, sets.eps_hat, sets.decay
    missing = containment(truth, polys) if truth is not None else None
    lo, hi = bounding_box(polys[0], tol, cfg.n_jobs)
    export_sample_set(samples[0], paths.sample_set(1))

    registry = SupportCacheRegistry(tol, cfg.n_jobs)
    caches = [registry.get(S, poly) for S, poly in zip(samples, polys)]
    settings = NLPSettings(tol=cfg.nlp_tol, max_iter=cfg.nlp_max_iter)
    results: dict[str, IdentResult] = {}

    logger.info("Identifying PEM and SEM models (o=%d)", o)
    pem = identify_pem(samples[0])
    results["PEM"] = IdentResult("PEM", theta1=pem)
    sem, sem_diag = identify_sem(io_id, o, pem, cfg.sem_segment_length)
    results["SEM"] = IdentResult("SEM", theta1=sem, diagnostics=sem_diag)

    logger.info("Solving decoupled multi-step LPs for p=1..%d", pbar)
    decoupled = [
        identify_multistep_decoupled(S, poly, e, inflation, cache, tol, omega)
        for S, poly, e, cache in zip(samples, polys, eps, caches)
    ]
    results["MultiStep"] = IdentResult(
        "MultiStep",
        theta_p=[theta for theta, _ in decoupled],
        diagnostics={"tau_hat": [tau for _, tau in decoupled]},
    )

    starts = [Start("PEM", pem.values), Start("SEM", sem.values), Start("MultiStep", decoupled[0][0].values)]
    logger.info("Method I over %d horizons", pbar)
    theta_m1, diag_m1 = identify_method1(samples, polys, caches, starts, settings, cfg.n_jobs)
    results["MethodI"] = IdentResult("MethodI", theta1=theta_m1, diagnostics=diag_m1)

    horizon = cfg.method2_horizon or pbar
    gammas = [gamma_set(o, p, decay, omega) for p in range(2, horizon + 1)]
    logger.info("Method II with decay constraints for p=2..%d", horizon)
    theta_m2, diag_m2 = identify_method2(io_id, o, polys[0], gammas, starts, cfg.sem_segment_length, settings, cfg.n_jobs)
    results["MethodII"] = IdentResult("MethodII", theta1=theta_m2, diagnostics=diag_m2)

    lam = summary.lam[:pbar]
    for name, result in results.items():
        evaluate_bounds(result, samples, polys, caches, eps, lam, dbar, inflation, io_val)
        result.diagnostics["enlargement_factor"] = sets.factor
        result.save_json(paths.method_json(name))
        result.bounds.export(paths.method_bounds(name))
        logger.info("%s: tau_hat(pbar)=%.4f, e(pbar)=%.4f", name, result.bounds.tau_hat[-1], result.bounds.e[-1])

    inputs = input_hashes([paths.ident_record, paths.val_record, paths.estimation], cfg.output_path)
    save_identification(
        {
            "results": results,
            "estimation": summary,
            "enlargement_factor": sets.factor,
            "containment_failures": missing,
            "theta1_box": {"lower": lo.tolist(), "upper": hi.tolist()},
            "support_lps": registry.lp_count,
            "inputs": inputs,
        },
        paths.model,
    )
    record_provenance(paths, "identify", inputs)
    logger.info("Saved identification artifact to %s (%d support LPs)", paths.model, registry.lp_count)
    return results


def cmd_report(cfg: ExperimentConfig) -> Path:
    paths = RunPaths(cfg.output_path)
    artifact = load_identification(paths.model)
    summary: EstimationSummary = artifact["estimation"]
    results: dict[str, IdentResult] = artifact["results"]
    io_id, io_val = load_record(paths.ident_record), load_record(paths.val_record)
    longest = len(io_val) - summary.o
    if any(p > longest for p in cfg.report_horizons):
        raise DataError(f"Report horizons {cfg.report_horizons} exceed the validation data ({longest} steps available)")

    horizons = select_horizons(cfg.report_horizons, summary.pbar)
    table = comparison_table(results, horizons)
    write_csv(table, paths.table_csv)
    write_pdf(table, summary, paths.table_pdf)
    write_csv(curves_frame(results), paths.curves)
    write_csv(record_frame(io_id), paths.record_plot_data)
    record_provenance(paths, "report", input_hashes([paths.model, paths.val_record], cfg.output_path))
    logger.info("Comparison table:\n%s", table.to_string(index=False))
    logger.info("Saved comparison table to %s", paths.table_csv)
    return paths.table_csv


def cmd_all(cfg: ExperimentConfig) -> Path:
    cmd_generate(cfg)
    cmd_estimate(cfg)
    cmd_identify(cfg)
    return cmd_report(cfg)


COMMANDS = {
    "generate": cmd_generate,
    "estimate": cmd_estimate,
    "identify": cmd_identify,
    "report": cmd_report,
    "all": cmd_all,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smident", description="Set-Membership identification of multi-step predictors.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, help="JSON config file")
    parser.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE", help="override a config key")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT, force=True)
    try:
        cfg = load_config(args.config, parse_overrides(args.overrides))
        COMMANDS[args.command](cfg)
    except (ConfigError, ValidationError, DataError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except NumericalError as exc:
        logger.error("Numerical failure: %s", exc)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
