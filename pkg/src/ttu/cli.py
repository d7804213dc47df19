"""Operator command-line entry points.

Exit codes: 0 success, 1 usage error, 2 data/bundle error, 3 sampling failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .bundle import BundleError, fit_bundle, load_bundle
from .data import DataError, apply_exclusions, prepare_dataset, read_dataset, write_records
from .diagnostics import DiagnosticsError
from .evaluation import (
    EvaluationError,
    LANDMARKS_MIN,
    calibration_fit,
    decision_curve,
    gof_metrics,
    jitter_robustness,
    landmark_probabilities,
    landmark_report,
    platt_recalibrate,
)
from .model import ConstrainedParams
from .nuts import SamplerConfig, SamplingError
from .predictive import PredictiveError, cumulative_curve
from .service import dumps17
from .simulate import SimConfig, generate_cohort, sbc_run

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SAMPLING = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="ttu", description="TTU admission-risk engine")
    sub = p.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a posterior bundle from a cohort CSV")
    fit.add_argument("--data", required=True)
    fit.add_argument("--out", required=True)
    fit.add_argument("--chains", type=int, default=4)
    fit.add_argument("--warmup", type=int, default=3000)
    fit.add_argument("--draws", type=int, default=3000)
    fit.add_argument("--target-accept", type=float, default=0.90)
    fit.add_argument("--max-treedepth", type=int, default=12)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--censor", type=float, default=300.0)
    fit.add_argument("--covariates", choices=["none", "age-sex"],
                     default="age-sex")

    sim = sub.add_parser("simulate", help="generate a synthetic cohort CSV")
    sim.add_argument("--config", required=True, help="JSON simulation config")
    sim.add_argument("--out", required=True)

    ev = sub.add_parser("evaluate", help="GOF, landmark metrics, curve export")
    ev.add_argument("--bundle", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True)

    rc = sub.add_parser("recalibrate", help="Platt recalibration at landmarks")
    rc.add_argument("--bundle", required=True)
    rc.add_argument("--data", required=True)
    rc.add_argument("--landmarks", default="120,300")
    rc.add_argument("--out", default=None, help="output JSON (default stdout)")

    dca = sub.add_parser("dca", help="decision-curve analysis")
    dca.add_argument("--bundle", required=True)
    dca.add_argument("--data", required=True)
    dca.add_argument("--out", default=None, help="output directory")
    dca.add_argument("--baseline-bundle", default=None,
                     help="bundle providing baseline probabilities for delta-NB")
    dca.add_argument("--landmark", type=float, default=300.0)
    dca.add_argument("--bootstrap", type=int, default=2000)
    dca.add_argument("--seed", type=int, default=0)

    rb = sub.add_parser("robustness", help="timing-jitter robustness table")
    rb.add_argument("--bundle", required=True)
    rb.add_argument("--data", required=True)
    rb.add_argument("--deltas", default="5,10")
    rb.add_argument("--seed", type=int, default=0)
    rb.add_argument("--out", default=None, help="output JSON (default stdout)")

    sbc = sub.add_parser("sbc", help="simulation-based calibration harness")
    sbc.add_argument("--replications", type=int, required=True)
    sbc.add_argument("--n", type=int, default=500)
    sbc.add_argument("--chains", type=int, default=1)
    sbc.add_argument("--warmup", type=int, default=300)
    sbc.add_argument("--draws", type=int, default=200)
    sbc.add_argument("--max-treedepth", type=int, default=8)
    sbc.add_argument("--seed", type=int, default=0)
    sbc.add_argument("--out", default=None, help="output JSON (default stdout)")

    srv = sub.add_parser("serve", help="serve a fitted bundle over HTTP")
    srv.add_argument("--bundle", default=os.environ.get("TTU_BUNDLE"))
    srv.add_argument("--port", type=int, default=8000)
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--cors-origin", default=None)
    return p


def _load_scored_dataset(bundle, data_path):
    records = read_dataset(data_path)
    kept, _ = apply_exclusions(records)
    data = prepare_dataset(kept, bundle.model_cfg.censor_limit_min)
    return bundle.rebased_covariates(data)


def _emit(payload: dict, out_path) -> None:
    text = dumps17(payload)
    if out_path:
        Path(out_path).write_text(text)
    else:
        print(text)


def _cmd_fit(args) -> int:
    records = read_dataset(args.data)
    cfg = SamplerConfig(chains=args.chains, warmup=args.warmup, draws=args.draws,
                        target_accept=args.target_accept,
                        max_treedepth=args.max_treedepth, seed=args.seed)
    bundle = fit_bundle(records, args.out, cfg, censor_limit_min=args.censor,
                        covariates=args.covariates == "age-sex")
    summary = bundle.manifest["diagnostics_summary"]
    print(f"bundle written to {bundle.path} "
          f"(max R-hat {summary['max_rhat']:.4f}, "
          f"divergences {summary['divergence_count']}, "
          f"failed={summary['failed']})")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    raw = json.loads(Path(args.config).read_text())
    try:
        theta = ConstrainedParams(
            rho0=raw["theta"]["rho0"], rho1=raw["theta"]["rho1"],
            mu0=raw["theta"]["mu0"], mu1=raw["theta"]["mu1"],
            sigma0=raw["theta"]["sigma0"], sigma1=raw["theta"]["sigma1"],
            beta=np.asarray(raw["theta"].get("beta", [0, 0, 0, 0]), dtype=float))
        sim = SimConfig(
            n=raw["n"], theta_true=theta,
            void_rate=raw.get("void_rate", 0.7),
            t_mixture_weight=raw.get("t_mixture_weight", 0.5),
            age_missing_rate=raw.get("age_missing_rate", 0.05),
            sex_missing_rate=raw.get("sex_missing_rate", 0.05),
            seed=raw.get("seed", 0))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad simulation config: {exc}") from exc
    records = generate_cohort(sim)
    write_records(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    bundle = load_bundle(args.bundle)
    data = _load_scored_dataset(bundle, args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curve = cumulative_curve(bundle.draws, data, bundle.model_cfg)
    gof = gof_metrics(curve)
    landmarks = landmark_report(bundle.draws, data, bundle.model_cfg)
    curve.to_csv(out / "curve.csv")
    curve.to_json_sidecar(out / "curve_meta.json")
    (out / "gof.json").write_text(dumps17(gof.as_dict()))
    (out / "landmarks.json").write_text(dumps17(landmarks.as_dict()))
    print(f"evaluation written to {out} (ISE {gof.ise:.6g}, KS {gof.ks:.6g}, "
          f"coverage {gof.coverage:.3f})")
    return EXIT_OK


def _cmd_recalibrate(args) -> int:
    bundle = load_bundle(args.bundle)
    data = _load_scored_dataset(bundle, args.data)
    landmarks = [float(v) for v in args.landmarks.split(",") if v]
    result = {"landmarks": landmarks, "fits": []}
    for t in landmarks:
        p_hat, y = landmark_probabilities(bundle.draws, data, t, bundle.model_cfg)
        pre_citl, pre_slope, _ = calibration_fit(p_hat, y)
        alpha, beta, p_star = platt_recalibrate(p_hat, y, p_hat)
        post_citl, post_slope, _ = calibration_fit(p_star, y)
        result["fits"].append({
            "landmark": t, "alpha": alpha, "beta": beta,
            "pre": {"citl": pre_citl, "slope": pre_slope},
            "post": {"citl": post_citl, "slope": post_slope},
            "mean_abs_shift": float(np.mean(np.abs(p_star - p_hat))),
        })
    _emit(result, args.out)
    return EXIT_OK


def _cmd_dca(args) -> int:
    bundle = load_bundle(args.bundle)
    data = _load_scored_dataset(bundle, args.data)
    p_hat, y = landmark_probabilities(bundle.draws, data, args.landmark,
                                      bundle.model_cfg)
    p_base = None
    if args.baseline_bundle:
        base = load_bundle(args.baseline_bundle)
        base_data = _load_scored_dataset(base, args.data)
        p_base, _ = landmark_probabilities(base.draws, base_data, args.landmark,
                                           base.model_cfg)
    curve = decision_curve(p_hat, y, p_hat_baseline=p_base,
                           bootstrap=args.bootstrap, seed=args.seed)
    payload = {"landmark": args.landmark, **curve.as_dict()}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "dca.json").write_text(dumps17(payload))
        with (out / "dca.csv").open("w") as fh:
            cols = ["threshold", "nb_model", "nb_admit_all", "nb_admit_none"]
            if curve.delta_nb is not None:
                cols += ["delta_nb", "delta_low", "delta_high"]
            fh.write(",".join(cols) + "\n")
            for i in range(curve.thresholds.size):
                row = [curve.thresholds[i], curve.nb_model[i],
                       curve.nb_admit_all[i], curve.nb_admit_none[i]]
                if curve.delta_nb is not None:
                    row += [curve.delta_nb[i], curve.delta_low[i],
                            curve.delta_high[i]]
                fh.write(",".join(format(v, ".17g") for v in row) + "\n")
        print(f"decision curve written to {out}")
    else:
        print(dumps17(payload))
    return EXIT_OK


def _cmd_robustness(args) -> int:
    bundle = load_bundle(args.bundle)
    data = _load_scored_dataset(bundle, args.data)
    deltas = [float(v) for v in args.deltas.split(",") if v]
    table = jitter_robustness(data, bundle.draws, bundle.model_cfg,
                              deltas=deltas, seed=args.seed)
    _emit(table, args.out)
    return EXIT_OK


def _cmd_sbc(args) -> int:
    cfg = SamplerConfig(chains=args.chains, warmup=args.warmup, draws=args.draws,
                        max_treedepth=args.max_treedepth, seed=args.seed)
    result = sbc_run(args.replications, args.n, cfg, seed=args.seed)
    payload = result.as_dict()
    _emit(payload, args.out)
    if result.p_values is not None:
        worst = min(result.p_values)
        print(f"sbc: {args.replications} replications, worst uniformity "
              f"p-value {worst:.4g}", file=sys.stderr)
    return EXIT_OK


def _cmd_serve(args) -> int:
    if not args.bundle:
        raise _UsageError("serve requires --bundle or TTU_BUNDLE")
    bundle = load_bundle(args.bundle)
    bundle.ensure_servable()
    from .service import serve as run_server
    print(f"serving bundle {bundle.model_id} on {args.host}:{args.port}")
    run_server(bundle, host=args.host, port=args.port,
               cors_origin=args.cors_origin)
    return EXIT_OK


_COMMANDS = {
    "fit": _cmd_fit,
    "simulate": _cmd_simulate,
    "evaluate": _cmd_evaluate,
    "recalibrate": _cmd_recalibrate,
    "dca": _cmd_dca,
    "robustness": _cmd_robustness,
    "sbc": _cmd_sbc,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, BundleError, PredictiveError, EvaluationError,
            DiagnosticsError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SamplingError, RuntimeError) as exc:
        print(f"sampling failure: {exc}", file=sys.stderr)
        return EXIT_SAMPLING


if __name__ == "__main__":
    sys.exit(main())
