"""Run patch-association experiments: training, idealized dynamics, transfer, baselines, gradient checks.

    python3 -m patchassoc <subcommand> [--config FILE] [--seed N] [--out DIR] [-o key=value ...] [--assert]

Exit codes: 0 success, 2 config error, 3 numerical divergence, 4 gate failure
(only with ``--assert``).
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .analysis import cosine_sim, estimate_accuracy, patch_association_score, residual_norm
from .config import ConfigError, ExperimentConfig, load_config
from .constructions import (binomial_tail_error, exact_linear_baseline_error, linear_baseline_error,
                            sample_complexity_sweep, spurious_transformer)
from .distribution import (DistributionSpec, Partition, label_consistency, make_localized_partition,
                           make_random_partition, orthogonal_feature, sample_dataset, sample_feature)
from .idealized import DynHyper, init_scalar_state, reduce_attention, run_scalar
from .model import ModelHyper, finite_diff_check, random_instance
from .rng import GENERATOR_ID, child_seed, stream
from .trainer import EvalSpec, RunRecord, TrainConfig, TrainingDiverged, one_step_normalized_transfer, train

log = logging.getLogger("patchassoc")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_GATE = 0, 2, 3, 4
SUBCOMMANDS = ("generate-data", "train", "idealized", "transfer", "sweep", "baseline", "spurious", "gradcheck")

# Gates applied by ``train --assert``.
TRAIN_GATES = {"patch_assoc_score": 1.0, "test_accuracy": 0.95, "cosine_sim": 0.99, "eps_v_rel": 0.05}


# --- setup from config -----------------------------------------------------

def build_partition(cfg: ExperimentConfig) -> Partition:
    dist = cfg.distribution
    if dist.partition == "localized":
        return make_localized_partition(dist.grid_rows, dist.grid_cols, dist.block_rows, dist.block_cols)
    if dist.partition == "random":
        return make_random_partition(dist.D, dist.C, stream(cfg.run.seed, "partition"))
    try:
        return io.load_partition(dist.partition)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc), key="distribution.partition") from None


def build_spec(cfg: ExperimentConfig, w_star=None) -> DistributionSpec:
    dist = cfg.distribution
    if w_star is None:
        w_star = sample_feature(dist.d, stream(cfg.run.seed, "feature"))
    return DistributionSpec(dist.d, dist.D, dist.C, dist.L, dist.q, dist.sigma2, dist.threshold_frac, w_star)


def train_config(cfg: ExperimentConfig, seed: int | None = None) -> TrainConfig:
    m, tr = cfg.model, cfg.train
    return TrainConfig(eta=tr.eta, T=tr.T, omega=tr.omega, sigma_A=m.sigma_A,
                       seed=cfg.run.seed if seed is None else seed, eval_every=tr.eval_every,
                       p=m.p, nu=m.nu, tau=m.tau)


def seeds_for(cfg: ExperimentConfig) -> dict:
    s = cfg.run.seed
    return {"master": s, "feature": f"stream({s}, 'feature')", "data": f"stream({s}, n) per point n",
            "init": f"stream({s}, 'init')", "eval": f"stream({s}, 'eval')", "test": f"stream({s}, 'test')"}


def write_preamble(out: Path, cfg: ExperimentConfig, sub: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.txt").write_text("\n".join(cfg.resolved_lines()) + "\n")
    io.write_json(out / "manifest.json", {"subcommand": sub, "version": __version__,
                                          "generator": GENERATOR_ID, "seeds": seeds_for(cfg)})


def write_summary(out: Path, body: dict, started: float) -> None:
    body = dict(body)
    body["metadata"] = {"version": __version__, "started_unix": started, "elapsed_s": time.time() - started}
    io.write_json(out / "summary.json", body)


# --- subcommands -----------------------------------------------------------

def cmd_generate_data(cfg, out, args):
    part = build_partition(cfg)
    spec = build_spec(cfg)
    ds = sample_dataset(spec, part, cfg.train.N, cfg.run.seed)
    io.save_dataset(ds, out / f"dataset.{cfg.run.data_format}")
    io.save_partition(part, out / "partition.txt")
    write_summary(out, {"N": len(ds), "positives": int((ds.y > 0).sum())}, args.started)
    return EXIT_OK


def pretrain(cfg, out, started):
    part = build_partition(cfg)
    spec = build_spec(cfg)
    ds = sample_dataset(spec, part, cfg.train.N, cfg.run.seed)
    tcfg = train_config(cfg)
    ev = EvalSpec(spec, part, cfg.train.eval_M, cfg.run.seed)
    header = list(RunRecord.FIELDS)

    def checkpoint(step, params, rec):
        if cfg.train.checkpoint_every and step % cfg.train.checkpoint_every == 0:
            io.save_params(params, out / f"params_step{step:06d}.txt")

    try:
        params, records = train(tcfg, ds, ev, callback=checkpoint)
    except TrainingDiverged as exc:
        io.write_csv(out / "metrics.csv", header, [r.as_row() for r in exc.records])
        io.save_params(exc.params, out / "params_last_finite.txt")
        write_summary(out, {"status": "diverged", "message": str(exc)}, started)
        log.error("%s", exc)
        return None, None, part, spec
    io.write_csv(out / "metrics.csv", header, [r.as_row() for r in records])
    return params, records, part, spec


def cmd_train(cfg, out, args):
    params, records, part, spec = pretrain(cfg, out, args.started)
    if params is None:
        return EXIT_DIVERGED
    io.save_params(params, out / "params.txt")
    io.write_matrix_csv(out / "attention.csv", params.A)
    io.export_heatmap(params.A, out / "attention.pgm")
    io.export_heatmap(part.same_set_mask().astype(np.float64), out / "target_mask.pgm")

    est = estimate_accuracy(params, spec, part, cfg.eval.M, stream(cfg.run.seed, "test"))
    pa = patch_association_score(params.A, part)
    red = reduce_attention(params.A, part)
    cos = cosine_sim(params.v, spec.w_star)
    eps_rel = residual_norm(params.v, spec.w_star) / float(np.linalg.norm(params.v))
    pix = io.read_pgm(out / "attention.pgm")
    high = pix > io.gap_threshold(pix)
    heat_ok = bool(np.array_equal(high, part.same_set_mask()))
    metrics = {"patch_assoc_score": pa.score, "test_accuracy": est.accuracy, "test_accuracy_stderr": est.stderr,
               "M": est.M, "cosine_sim": cos, "eps_v_rel": eps_rel, "gamma_hat": red.gamma_hat,
               "rho_hat": red.rho_hat, "within_set_std": red.within_set_std, "cross_set_std": red.cross_set_std,
               "symmetry_ratio": red.symmetry_ratio(), "heatmap_matches_mask": heat_ok}
    gates = {
        "patch_assoc_score": pa.score >= TRAIN_GATES["patch_assoc_score"],
        "test_accuracy": est.accuracy >= TRAIN_GATES["test_accuracy"],
        "cosine_sim": cos >= TRAIN_GATES["cosine_sim"],
        "eps_v_rel": eps_rel <= TRAIN_GATES["eps_v_rel"],
        "heatmap_matches_mask": heat_ok,
    }
    write_summary(out, {"status": "ok", "metrics": metrics, "gates": gates}, args.started)
    log.info("final: %s", metrics)
    return EXIT_GATE if args.gate and not all(gates.values()) else EXIT_OK


def idealized_hyper(cfg) -> DynHyper:
    ic = cfg.idealized
    return DynHyper(eta=ic.eta, C=cfg.distribution.C, D=cfg.distribution.D, p=cfg.model.p, nu=ic.nu,
                    c_gamma=ic.c_gamma, c_rho=ic.c_rho, c_alpha=ic.c_alpha,
                    lambda0=ic.lambda0 or None, polylog=ic.polylog)


def cmd_idealized(cfg, out, args):
    hyper = idealized_hyper(cfg)
    traj = run_scalar(init_scalar_state(hyper.p, hyper.nu, cfg.idealized.beta), hyper, cfg.idealized.T)
    io.write_csv(out / "trajectory.csv", traj.COLUMNS, traj.rows())
    checks = idealized_checks(traj, hyper)
    io.write_json(out / "events.json", {"T0": traj.T0, "T1": traj.T1, "converged_at": traj.converged_at,
                                        "thresholds": traj.thresholds, "checks": checks})
    return EXIT_GATE if args.gate and not all(checks.values()) else EXIT_OK


def idealized_checks(traj, hyper: DynHyper) -> dict:
    """The phase-structure properties a trajectory is expected to show."""
    norm = traj.Lambda + (hyper.C - 1) * traj.Gamma + (hyper.D - hyper.C) * traj.Xi
    ordered = traj.T0 is not None and traj.T1 is not None and traj.T0 < traj.T1
    plateau = resumes = False
    if ordered:
        # alpha frozen strictly after T0 until T1, then growing again
        seg = traj.alpha[traj.T0 + 1: traj.T1 + 1]
        plateau = bool(seg.size > 0 and np.all(seg == seg[0]))
        resumes = bool(traj.T1 + 1 < traj.alpha.size and traj.alpha[-1] > traj.alpha[traj.T1])
    xi_d = traj.Xi * hyper.D
    return {
        "T0_before_T1": ordered,
        "alpha_plateau": plateau,
        "alpha_resumes": resumes,
        "gamma_nondecreasing": bool(np.all(np.diff(traj.gamma) >= 0)),
        "alpha_nondecreasing": bool(np.all(np.diff(traj.alpha) >= 0)),
        "gamma_ge_rho": bool(np.all(traj.gamma >= traj.rho)),
        "normalization_1e-12": bool(np.all(np.abs(norm - 1) <= 1e-12)),
        "xi_in_range": bool(np.all((xi_d >= 0.1) & (xi_d <= 10))),
    }


def downstream_spec(cfg, spec: DistributionSpec) -> DistributionSpec:
    rng = stream(cfg.run.seed, "downstream")
    if cfg.transfer.target == "orthogonal":
        return spec.with_feature(orthogonal_feature(spec.w_star, rng))
    return spec.with_feature(sample_feature(spec.d, rng))


def load_or_pretrain(cfg, out, args):
    if args.params:
        params = io.load_params(args.params)
        part = build_partition(cfg)
        return params, part, build_spec(cfg)
    params, _, part, spec = pretrain(cfg, out, args.started)
    if params is not None:
        io.save_params(params, out / "pretrained_params.txt")
    return params, part, spec


def cmd_transfer(cfg, out, args):
    params, part, spec = load_or_pretrain(cfg, out, args)
    if params is None:
        return EXIT_DIVERGED
    down = downstream_spec(cfg, spec)
    tp = cfg.transfer
    rows, means = [], {}
    for N in tp.N_grid:
        accs = []
        for s in range(tp.seeds if N > 0 else 0):
            ds = sample_dataset(down, part, N, child_seed(cfg.run.seed, "train", N, s))
            try:
                moved = one_step_normalized_transfer(params, ds)
                acc = estimate_accuracy(moved, down, part, tp.M_test, stream(cfg.run.seed, "test", s)).accuracy
            except ValueError:
                acc = 0.0
            accs.append(acc)
            rows.append((N, "frozen_A", s, acc))
        means[N] = float(np.mean(accs)) if accs else float("nan")
    io.write_csv(out / "sweep.csv", ["N", "arm", "seed", "accuracy"], rows)
    write_summary(out, {"frozen_A_mean": {str(k): v for k, v in means.items()}, "seeds": tp.seeds}, args.started)
    gate = means.get(32, float("nan")) >= 0.9 if 32 in means else True
    return EXIT_GATE if args.gate and not gate else EXIT_OK


def cmd_sweep(cfg, out, args):
    params, part, spec = load_or_pretrain(cfg, out, args)
    if params is None:
        return EXIT_DIVERGED
    down = downstream_spec(cfg, spec)
    tp = cfg.transfer
    res = sample_complexity_sweep(params, down, part, tp.N_grid, tp.seeds, seed=cfg.run.seed,
                                  scratch_cfg=train_config(cfg), budgets=tp.budgets, M_test=tp.M_test)
    io.write_csv(out / "sweep.csv", ["N", "arm", "seed", "accuracy"], res.cells)
    summary = {arm: {"mean": res.arm(arm), "stderr": res.stderr(arm)} for arm in res.ARMS}
    summary["sample_sizes"] = res.sample_sizes
    summary["seeds"] = res.seeds
    write_summary(out, summary, args.started)
    dominated = all(f >= s for N, f, s in zip(res.sample_sizes, res.frozen_A_accuracy, res.scratch_accuracy)
                    if 0 < N <= 64)
    return EXIT_GATE if args.gate and not dominated else EXIT_OK


def cmd_baseline(cfg, out, args):
    part = build_partition(cfg)
    spec = build_spec(cfg)
    M = cfg.eval.baseline_M
    mc = linear_baseline_error(spec, part, M, stream(cfg.run.seed, "baseline"))
    exact = exact_linear_baseline_error(spec)
    consist = label_consistency(spec, part, M, stream(cfg.run.seed, "consistency"))
    report = {"linear_error_mc": mc, "linear_error_stderr": math.sqrt(mc * (1 - mc) / M),
              "linear_error_exact": exact, "binomial_tail": binomial_tail_error(spec), "M": M,
              "label_consistency": consist}
    io.write_json(out / "report.json", report)
    ok = mc >= 0.125 and abs(mc - exact) <= 0.01
    return EXIT_GATE if args.gate and not ok else EXIT_OK


def cmd_spurious(cfg, out, args):
    part = build_partition(cfg)
    spec = build_spec(cfg)
    m = cfg.model
    beta = cfg.eval.spurious_beta or 5 * m.tau
    params = spurious_transformer(part, beta, spec.w_star, ModelHyper(m.p, m.nu, m.tau))
    pa = patch_association_score(params.A, part)
    est = estimate_accuracy(params, spec, part, cfg.eval.M, stream(cfg.run.seed, "test"))
    report = {"beta": beta, "patch_assoc_score": pa.score, "intersection_empty_fraction": pa.intersection_empty_fraction,
              "test_accuracy": est.accuracy, "test_accuracy_stderr": est.stderr, "M": est.M}
    io.write_json(out / "report.json", report)
    ok = est.accuracy >= 0.99 and pa.score == 0.0 and pa.intersection_empty_fraction == 1.0
    return EXIT_GATE if args.gate and not ok else EXIT_OK


def cmd_gradcheck(cfg, out, args):
    gc = cfg.gradcheck
    results = []
    for k in range(gc.instances):
        params, X, y = random_instance(stream(cfg.run.seed, "gradcheck", k))
        r = finite_diff_check(params, X, y, h=gc.h)
        results.append({"instance": k, "d": params.d, "D": params.D, "p": params.p,
                        "max_rel_err": r.max_rel_err, "max_rel_err_v": r.max_rel_err_v,
                        "max_rel_err_A": r.max_rel_err_A})
    worst = max(r["max_rel_err"] for r in results)
    io.write_json(out / "gradcheck.json", {"h": gc.h, "tol": gc.tol, "max_rel_err": worst,
                                            "passed": worst < gc.tol, "instances": results})
    log.info("gradcheck: max rel err %.3g over %d instances", worst, gc.instances)
    return EXIT_GATE if args.gate and worst >= gc.tol else EXIT_OK


COMMANDS = {
    "generate-data": cmd_generate_data,
    "train": cmd_train,
    "idealized": cmd_idealized,
    "transfer": cmd_transfer,
    "sweep": cmd_sweep,
    "baseline": cmd_baseline,
    "spurious": cmd_spurious,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchassoc", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="config file of block.key = value lines")
        p.add_argument("--seed", type=int, help="master seed (run.seed)")
        p.add_argument("--out", help="output directory (run.out)")
        p.add_argument("-o", "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. -o train.T=100")
        p.add_argument("--assert", dest="gate", action="store_true", help="exit 4 if acceptance gates fail")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("transfer", "sweep"):
            p.add_argument("--params", help="pretrained params file; otherwise pretrain first")
    return parser


def run_experiment(cfg: ExperimentConfig, subcommand: str, args: argparse.Namespace | None = None) -> int:
    if args is None:
        args = argparse.Namespace(gate=False, params=None)
    args.started = time.time()
    out = Path(cfg.run.out)
    write_preamble(out, cfg, subcommand)
    try:
        return COMMANDS[subcommand](cfg, out, args)
    except FloatingPointError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_DIVERGED


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.out is not None:
        overrides.append(f"run.out={args.out}")
    try:
        cfg = load_config(args.config, overrides)
        if cfg.distribution.partition not in ("localized", "random"):
            build_partition(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run_experiment(cfg, args.command, args)


if __name__ == "__main__":
    sys.exit(main())
