"""Command-line pipeline driver with manifest-logged, reproducible runs."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .baselines import Bart3lConfig, HorseshoeConfig, fit_bart3l, fit_blr3l
from .bcf import Bcf3lConfig, effects_from_posterior, fit_bcf3l
from .core_data import (
    DataError, RngSpec, load_matrix_csv, make_rng, standardize_columns,
    write_matrix_csv,
)
from .exposure import build_exposure_matrix
from .factor_model import FactorModelConfig, fit_factor_pipeline
from .metrics import replicate_study
from .propensity import fit_generalized_propensity, pihat_columns
from . import simgen

CONFIG_SECTIONS = {
    "factor", "exposure", "propensity", "bcf3l", "bart3l", "blr_hs",
    "simgen", "eval", "seed", "threads",
}


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(outdir, command, config, inputs):
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "input_checksums": {p: _sha256(p) for p in inputs if os.path.exists(p)},
    }
    with open(os.path.join(outdir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    unknown = set(cfg) - CONFIG_SECTIONS
    if unknown:
        raise DataError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _mcmc_overrides(args, section):
    out = dict(section)
    for key, attr in (("n_burn", "burn"), ("n_save", "save"), ("thin", "thin")):
        val = getattr(args, attr, None)
        if val is not None:
            out[key] = val
    return out


def _log(msg):
    print(msg, file=sys.stderr)


def cmd_simulate(args, cfg):
    rng = make_rng(RngSpec(args.seed, 0))
    os.makedirs(args.out, exist_ok=True)
    sim_cfg = cfg.get("simgen", {})
    sigma_eps = args.sigma_eps
    if sigma_eps is None:
        sigma_eps = sim_cfg.get("sigma_eps", 0.5 if args.scenario == 3 else 1.0)
    if args.scenario == 1:
        data = simgen.gen_scenario1(args.n, sigma_eps, rng)
    elif args.scenario == 2:
        data = simgen.gen_scenario2(args.n, sigma_eps, rng)
    else:
        data = simgen.gen_scenario3(args.n, sigma_eps=sigma_eps, rng=rng)

    write_matrix_csv(os.path.join(args.out, "X.csv"), data.X,
                     [f"x{k + 1}" for k in range(data.X.shape[1])])
    T = np.atleast_2d(data.T.T).T if data.T.ndim > 1 else data.T[:, None]
    write_matrix_csv(os.path.join(args.out, "T.csv"), T,
                     [f"t{k + 1}" for k in range(T.shape[1])], fmt="%d")
    write_matrix_csv(os.path.join(args.out, "Y.csv"), data.Y[:, None], ["y"])
    t01 = np.atleast_2d(data.true_tau01.T).T if data.true_tau01.ndim > 1 else data.true_tau01[:, None]
    t12 = np.atleast_2d(data.true_tau12.T).T if data.true_tau12.ndim > 1 else data.true_tau12[:, None]
    truth = np.hstack([t01, t12])
    labels = [f"tau01_f{k + 1}" for k in range(t01.shape[1])] + \
             [f"tau12_f{k + 1}" for k in range(t12.shape[1])]
    write_matrix_csv(os.path.join(args.out, "truth.csv"), truth, labels)
    if data.Z is not None:
        write_matrix_csv(os.path.join(args.out, "Z.csv"), data.Z,
                         [f"z{k + 1}" for k in range(data.Z.shape[1])])
    _write_manifest(args.out, "simulate",
                    {"scenario": args.scenario, "n": args.n, "seed": args.seed,
                     "sigma_eps": sigma_eps}, [])
    _log(f"simulate: wrote scenario {args.scenario} data to {args.out}")
    return 0


def cmd_fit_factors(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    Z, z_labels, dropped = load_matrix_csv(args.z)
    if dropped:
        _log(f"fit-factors: dropped {dropped} rows with missing cells")
    section = dict(cfg.get("factor", {}))
    section.update(_mcmc_overrides(args, section))
    if args.j_max is not None:
        section["J_max"] = args.j_max
    fcfg = FactorModelConfig(**section)
    rng = make_rng(RngSpec(args.seed, 0))
    post = fit_factor_pipeline(standardize_columns(Z), fcfg, rng)
    J = post.J_selected
    write_matrix_csv(os.path.join(args.out, "loadings.csv"), post.Lambda_hat,
                     [f"factor{j + 1}" for j in range(J)])
    write_matrix_csv(os.path.join(args.out, "scores.csv"), post.scores,
                     [f"factor{j + 1}" for j in range(J)])
    write_matrix_csv(os.path.join(args.out, "explained_variance.csv"),
                     post.explained_variance[None, :],
                     [f"factor{j + 1}" for j in range(J)])
    _write_manifest(args.out, "fit-factors",
                    {"seed": args.seed, "factor": section}, [args.z])
    _log(f"fit-factors: retained {J} factors")
    return 0


def cmd_map_exposure(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    scores, _, _ = load_matrix_csv(args.scores)
    em = build_exposure_matrix(scores)
    write_matrix_csv(os.path.join(args.out, "exposure.csv"), em.T,
                     [f"t{j + 1}" for j in range(em.T.shape[1])], fmt="%d")
    cuts = {f"factor{j + 1}": {"Q1": em.cutpoints[j, 0], "Q2": em.cutpoints[j, 1]}
            for j in range(em.cutpoints.shape[0])}
    with open(os.path.join(args.out, "cutpoints.json"), "w", encoding="utf-8") as fh:
        json.dump(cuts, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(args.out, "map-exposure", {}, [args.scores])
    return 0


def _load_exposure(path):
    T, _, _ = load_matrix_csv(path)
    return T.astype(np.int64)


def cmd_fit_propensity(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    X, _, _ = load_matrix_csv(args.x)
    T = _load_exposure(args.exposure)
    j = args.factor - 1
    T_other = np.delete(T, j, axis=1) if T.shape[1] > 1 else None
    section = cfg.get("propensity", {})
    model = fit_generalized_propensity(
        X, T_other, T[:, j], ridge_lambda=section.get("ridge_lambda", 1e-4))
    pihat = pihat_columns(model, X, T_other)
    write_matrix_csv(os.path.join(args.out, f"propensity_f{args.factor}.csv"),
                     pihat, ["pi1", "pi2"])
    _write_manifest(args.out, "fit-propensity", {"factor": args.factor},
                    [args.x, args.exposure])
    return 0


def _write_effects(outdir, stem, summ):
    n = summ.tau01_mean.size
    mat = np.column_stack([
        np.arange(n), summ.tau01_mean, summ.tau01_lo, summ.tau01_hi,
        summ.tau12_mean, summ.tau12_lo, summ.tau12_hi,
    ])
    write_matrix_csv(
        os.path.join(outdir, f"{stem}.csv"), mat,
        ["unit_id", "tau01_mean", "tau01_lo", "tau01_hi",
         "tau12_mean", "tau12_lo", "tau12_hi"],
    )
    agg = {"avg_tau01": dict(zip(("mean", "lo", "hi"), summ.avg_tau01)),
           "avg_tau12": dict(zip(("mean", "lo", "hi"), summ.avg_tau12)),
           "level": summ.level}
    with open(os.path.join(outdir, f"{stem}.json"), "w", encoding="utf-8") as fh:
        json.dump(agg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_fit(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    X, _, _ = load_matrix_csv(args.x)
    Y, _, _ = load_matrix_csv(args.y)
    Y = Y[:, args.outcome_col]
    T = _load_exposure(args.exposure)
    j = args.factor - 1
    T_j = T[:, j]
    T_other = np.delete(T, j, axis=1) if T.shape[1] > 1 else None
    rng = make_rng(RngSpec(args.seed, 0))
    method = args.method.replace("-", "_")

    if method == "bcf3l":
        if args.propensity:
            pihat, _, _ = load_matrix_csv(args.propensity)
        else:
            pmod = fit_generalized_propensity(X, T_other, T_j)
            pihat = pihat_columns(pmod, X, T_other)
        mcfg = Bcf3lConfig(**_mcmc_overrides(args, cfg.get("bcf3l", {})))
        post = fit_bcf3l(Y, X, T_j, T_other, pihat, mcfg, rng, factor_id=j)
    elif method == "bart3l":
        mcfg = Bart3lConfig(**_mcmc_overrides(args, cfg.get("bart3l", {})))
        post = fit_bart3l(Y, X, T_j, T_other, mcfg, rng)
    elif method == "blr_hs":
        mcfg = HorseshoeConfig(**_mcmc_overrides(args, cfg.get("blr_hs", {})))
        post = fit_blr3l(Y, X, T_j, T_other, mcfg, rng)
    else:
        raise DataError(f"unknown method {args.method!r}")
    summ = effects_from_posterior(post)
    _write_effects(args.out, f"effects_{method}_f{args.factor}", summ)
    _write_manifest(args.out, f"fit {method}",
                    {"seed": args.seed, "factor": args.factor},
                    [args.x, args.y, args.exposure])
    return 0


def cmd_evaluate(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    methods = [m.strip().replace("-", "_") for m in args.methods.split(",") if m.strip()]
    mcmc = _mcmc_overrides(args, cfg.get("eval", {}).get("mcmc", {}))
    table = replicate_study(
        args.scenario, methods, args.replicates, args.n, args.seed,
        mcmc=mcmc, threads=args.threads,
    )
    table.write_csv(os.path.join(args.out, "results.csv"))
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(table.aggregate(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(args.out, "evaluate",
                    {"scenario": args.scenario, "methods": methods,
                     "replicates": args.replicates, "n": args.n,
                     "seed": args.seed, "mcmc": mcmc}, [])
    if table.failures:
        _log(f"evaluate: {len(table.failures)} replicate failure(s)")
        for f in table.failures:
            _log(f"  replicate {f['replicate']}: {f['error'].splitlines()[-1]}")
    _log(f"evaluate: wrote {len(table.rows)} rows to {args.out}/results.csv")
    return 0


def cmd_analyze(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    X, _, _ = load_matrix_csv(args.x)
    Z, _, _ = load_matrix_csv(args.z)
    Y, _, _ = load_matrix_csv(args.y)
    Y = Y[:, args.outcome_col]
    rng = make_rng(RngSpec(args.seed, 0))

    _log("analyze: fitting factor model")
    fsection = dict(cfg.get("factor", {}))
    fcfg = FactorModelConfig(**fsection)
    post = fit_factor_pipeline(standardize_columns(Z), fcfg, rng)
    J = post.J_selected
    _log(f"analyze: retained {J} factors; mapping exposures")
    em = build_exposure_matrix(post.scores)
    write_matrix_csv(os.path.join(args.out, "loadings.csv"), post.Lambda_hat,
                     [f"factor{j + 1}" for j in range(J)])
    write_matrix_csv(os.path.join(args.out, "exposure.csv"), em.T,
                     [f"t{j + 1}" for j in range(J)], fmt="%d")

    mcmc = _mcmc_overrides(args, cfg.get("bcf3l", {}))
    for j in range(J):
        T_j = em.T[:, j]
        T_other = np.delete(em.T, j, axis=1) if J > 1 else None
        pmod = fit_generalized_propensity(X, T_other, T_j)
        pihat = pihat_columns(pmod, X, T_other)
        _log(f"analyze: fitting effects for factor {j + 1}/{J}")
        mcfg = Bcf3lConfig(**mcmc)
        bpost = fit_bcf3l(Y, X, T_j, T_other, pihat, mcfg,
                          make_rng(RngSpec(args.seed, j + 1)), factor_id=j)
        summ = effects_from_posterior(bpost)
        _write_effects(args.out, f"effects_f{j + 1}", summ)
    _write_manifest(args.out, "analyze", {"seed": args.seed, "factor": fsection,
                                          "bcf3l": mcmc},
                    [args.x, args.z, args.y])
    return 0


def cmd_report(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    rows_by_panel = {}
    with open(args.results, encoding="utf-8") as fh:
        import csv as _csv

        for row in _csv.DictReader(fh):
            key = (row["scenario"], row["effect"], row["factor"])
            rows_by_panel.setdefault(key, []).append(row)
    for (scenario, effect, factor), rows in sorted(rows_by_panel.items()):
        stem = f"panel_s{scenario}_{effect}_f{factor}"
        with open(os.path.join(args.out, f"{stem}.csv"), "w", newline="",
                  encoding="utf-8") as fh:
            import csv as _csv

            w = _csv.writer(fh)
            w.writerow(["method", "replicate", "bias", "rmse", "coverage"])
            for row in rows:
                w.writerow([row["method"], row["replicate"], row["bias"],
                            row["rmse"], row["coverage"]])
    _log(f"report: wrote {len(rows_by_panel)} panel files to {args.out}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="bcf3l", description=__doc__)
    ap.add_argument("--config", help="JSON config file; flags override it")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--seed", type=int, default=20260826)
        if out:
            p.add_argument("--out", required=True)
        p.add_argument("--threads", type=int, default=1)

    def mcmc_flags(p):
        p.add_argument("--burn", type=int, default=None)
        p.add_argument("--save", type=int, default=None)
        p.add_argument("--thin", type=int, default=None)

    p = sub.add_parser("simulate", help="generate a scenario dataset")
    common(p)
    p.add_argument("--scenario", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--sigma-eps", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-factors", help="factor model + selection + scores")
    common(p)
    p.add_argument("--z", required=True)
    p.add_argument("--j-max", type=int, default=None)
    mcmc_flags(p)
    p.set_defaults(func=cmd_fit_factors)

    p = sub.add_parser("map-exposure", help="tertile levels from scores")
    common(p)
    p.add_argument("--scores", required=True)
    p.set_defaults(func=cmd_map_exposure)

    p = sub.add_parser("fit-propensity", help="generalized propensity scores")
    common(p)
    p.add_argument("--x", required=True)
    p.add_argument("--exposure", required=True)
    p.add_argument("--factor", type=int, required=True)
    p.set_defaults(func=cmd_fit_propensity)

    p = sub.add_parser("fit", help="fit one effect estimator")
    common(p)
    p.add_argument("method", choices=("bcf3l", "bart3l", "blr-hs"))
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--exposure", required=True)
    p.add_argument("--factor", type=int, default=1)
    p.add_argument("--propensity", default=None)
    p.add_argument("--outcome-col", type=int, default=0)
    mcmc_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="replicate study over methods")
    common(p)
    p.add_argument("--scenario", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--methods", default="bcf3l,blr-hs,bart3l")
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--n", type=int, default=500)
    mcmc_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="full pipeline on real data files")
    common(p)
    p.add_argument("--x", required=True)
    p.add_argument("--z", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--outcome-col", type=int, default=0)
    mcmc_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="plot-ready CSVs from results.csv")
    common(p)
    p.add_argument("--results", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        cfg = _load_config(args.config)
        return args.func(args, cfg)
    except DataError as exc:
        _log(f"error ({args.command}): {exc}")
        return 2
    except Exception as exc:
        _log(f"failure ({args.command}): {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
