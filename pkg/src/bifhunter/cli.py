"""Command-line entry point: ``bifhunter run | compare | verify | configs``.

Exit codes: 0 success, 1 verify property failure, 2 invalid or missing
configuration, 3 run failure.  Diagnostics go to standard error as one line.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bo import RunFailure, error_curves, run_bo, run_ensemble
from .config import SEED_OVERRIDE_ENV, load_config, load_schema, shipped_configs
from .exceptions import BifhunterError, ConfigError
from .output import (metadata, write_branch_csv, write_curves_csv, write_summary,
                     write_timing_csv, write_trace_csv)

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_RUN = 0, 1, 2, 3


class _Fail(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _err(message):
    print(f"bifhunter: {message}", file=sys.stderr)


# -- helpers -------------------------------------------------------------------

def _load(args):
    try:
        cfg = load_config(args.config, output_dir=args.output_dir)
    except ConfigError as exc:
        raise _Fail(EXIT_CONFIG, str(exc)) from None
    if args.n_runs is not None:
        if not 1 <= args.n_runs <= len(cfg.seeds):
            raise _Fail(EXIT_CONFIG, f"--n-runs must lie in [1, {len(cfg.seeds)}]")
        cfg.seeds = cfg.seeds[: args.n_runs]
    return cfg


def _prepare_dir(path):
    try:
        Path(path).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _Fail(EXIT_CONFIG, f"output_dir {path} is not writable: {exc}") from None


def _ensemble(bo, seeds, jobs, record_branch=False):
    try:
        return run_ensemble(bo, seeds=seeds, jobs=jobs, record_branch=record_branch)
    except RunFailure as exc:
        raise _Fail(EXIT_RUN, str(exc)) from None


def _acq_ms_median(traces):
    ms = [it.acq_ms for t in traces for it in t.iterations]
    return float(np.median(ms)) if ms else float("nan")


def _ensemble_block(ens, p_ref):
    s = ens.summary
    finals = np.asarray(s["final_p"])
    out = {"n_runs": s["n_runs"], "n_failed": s["n_failed"],
           "converged_runs": int(sum(s["converged"])),
           "final_p_median": float(np.median(finals))}
    if p_ref is not None:
        out["final_abs_error_median"] = s["final_abs_error_median"]
        out["final_rel_error_median"] = s["final_rel_error_median"]
    return out


def _base_summary(cfg, command):
    return {"name": cfg.name, "command": command, "system": cfg.bo.system.id,
            "bif_kind": cfg.bo.bif_kind, "seeds": list(cfg.seeds),
            "seed_override": cfg.seed_override,
            "reference": cfg.reference.to_dict() if cfg.reference else None}


def _print_dry_run(cfg, extra=None):
    doc = cfg.resolved()
    if extra:
        doc.update(extra)
    print(json.dumps(doc, indent=2, sort_keys=True, default=str))


# -- commands ----------------------------------------------------------------

def cmd_run(args):
    cfg = _load(args)
    if args.dry_run:
        _print_dry_run(cfg)
        return EXIT_OK
    out = cfg.output_dir
    _prepare_dir(out)
    p_ref = cfg.reference.p_ref if cfg.reference else None
    t0 = time.perf_counter()
    summary = _base_summary(cfg, "run")
    record = cfg.report_bifurcation_diagram
    if cfg.is_ensemble:
        ens = _ensemble(cfg.bo, cfg.seeds, args.jobs, record)
        traces, failures = ens.traces, ens.failures
        summary["ensemble"] = _ensemble_block(ens, p_ref)
        if p_ref is not None:
            write_curves_csv(out / "convergence.csv", {k: ens.summary[k] for k in ("median", "q25", "q75")})
    else:
        try:
            traces, failures = [run_bo(cfg.bo, record)], {}
        except RunFailure as exc:
            if exc.trace is not None and exc.trace.iterations:
                write_trace_csv(out / f"trace_seed{cfg.bo.seed}.csv", exc.trace)
            raise _Fail(EXIT_RUN, f"seed {cfg.bo.seed}: {exc}") from None
        res = traces[0].result
        summary.update(result=res, converged=res["converged"], iterations=res["iterations_used"])
        if p_ref is not None:
            summary["abs_param_error"] = res["abs_param_error"]
    for t in traces:
        write_trace_csv(out / f"trace_seed{t.config.seed}.csv", t)
        if record:
            write_branch_csv(out / f"branch_seed{t.config.seed}.csv", t)
    write_timing_csv(out / "timing.csv", [("run", t.config.seed, t) for t in traces])
    summary["runs"] = [{"seed": t.config.seed, "result": t.result} for t in traces]
    summary["failures"] = {str(s): msg for s, msg in failures.items()}
    summary["metadata"] = metadata(wall_s=time.perf_counter() - t0,
                                   acq_ms_median={"run": _acq_ms_median(traces)})
    write_summary(out / "summary.json", summary, load_schema("summary"))
    for s, msg in failures.items():
        _err(f"seed {s} failed: {msg}")
    print(_run_report(summary))
    return EXIT_OK


def _run_report(summary):
    if "ensemble" in summary:
        e = summary["ensemble"]
        line = (f"{summary['name']}: {e['n_runs'] - e['n_failed']}/{e['n_runs']} runs, "
                f"median p_b {e['final_p_median']:.6g}")
        if e.get("final_rel_error_median") is not None:
            line += f", median relative error {e['final_rel_error_median']:.3g}"
        return line
    r = summary["result"]
    line = f"{summary['name']}: p_b {r['p_b']:.6g} after {r['iterations_used']} iterations"
    if "abs_param_error" in summary:
        line += f", |p_b - p_ref| {summary['abs_param_error']:.3g}"
    return line


def _compare_methods(cfg):
    methods = {"analytic": replace(cfg.bo, acq_method="analytic")}
    for size in cfg.comparison:
        try:
            methods[f"mc_{size}"] = replace(cfg.bo, acq_method="mc", mc_samples=size)
        except ValueError as exc:
            raise _Fail(EXIT_CONFIG, f"invalid comparison: {exc}") from None
    return methods


def cmd_compare(args):
    cfg = _load(args)
    if not cfg.comparison:
        raise _Fail(EXIT_CONFIG, "compare needs a 'comparison' list of Monte Carlo sample sizes")
    if cfg.reference is None:
        raise _Fail(EXIT_CONFIG, "compare needs a 'reference' with p_ref")
    methods = _compare_methods(cfg)
    if args.dry_run:
        _print_dry_run(cfg, {"methods": list(methods)})
        return EXIT_OK
    out = cfg.output_dir
    _prepare_dir(out)
    p_ref = cfg.reference.p_ref
    t0 = time.perf_counter()
    curves, blocks, timing, runs, failures, acq_ms = {}, {}, [], [], {}, {}
    for name, bo in methods.items():
        ens = _ensemble(bo, cfg.seeds, args.jobs)
        curves[name] = np.median(error_curves(ens.traces, p_ref), axis=0)
        blocks[name] = _ensemble_block(ens, p_ref)
        acq_ms[name] = _acq_ms_median(ens.traces)
        for t in ens.traces:
            write_trace_csv(out / "traces" / f"{name}_seed{t.config.seed}.csv", t, method=name)
            timing.append((name, t.config.seed, t))
            runs.append({"method": name, "seed": t.config.seed, "result": t.result})
        failures.update({f"{name}:{s}": msg for s, msg in ens.failures.items()})
    write_curves_csv(out / "compare.csv", curves)
    write_timing_csv(out / "compare_timing.csv", timing)
    ratio = {k: v / acq_ms["analytic"] for k, v in acq_ms.items() if k != "analytic"}
    summary = _base_summary(cfg, "compare")
    summary.update(methods=blocks, runs=runs, failures=failures,
                   metadata=metadata(wall_s=time.perf_counter() - t0, acq_ms_median=acq_ms,
                                     acq_ms_ratio_to_analytic=ratio))
    write_summary(out / "compare_summary.json", summary, load_schema("summary"))
    for key, msg in failures.items():
        _err(f"{key} failed: {msg}")
    for name in methods:
        extra = f", acquisition {ratio[name]:.1f}x analytic" if name in ratio else ""
        print(f"{name}: median final |p - p_ref| {curves[name][-1]:.3g}, "
              f"median acquisition {acq_ms[name]:.3g} ms{extra}")
    return EXIT_OK


def cmd_verify(args):
    from .verify import format_table, run_properties, select

    props = select(args.filter)
    if not props:
        raise _Fail(EXIT_CONFIG, f"no property matches filter {args.filter!r}")
    if args.dry_run:
        for p in props:
            print(f"{p.name:<24} {p.module:<16} bound {p.bound:<6g} {p.description}")
        return EXIT_OK
    results = run_properties(args.filter, jobs=args.jobs)
    print(format_table(results))
    failed = [r for r in results if not r.passed]
    for r in failed:
        _err(f"property {r.name} failed: measured {r.measured:.4g} vs bound {r.bound:.3g} {r.detail}")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_configs(args):
    for name in shipped_configs():
        print(name)
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bifhunter",
        description="Locate fold and Hopf bifurcations with GP surrogates and Bayesian optimization.",
        epilog=f"{SEED_OVERRIDE_ENV}=<int> replaces the configured seeds (recorded in the outputs).")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, text in (("run", cmd_run, "run one BO search or a seeded ensemble"),
                           ("compare", cmd_compare, "analytic vs Monte Carlo acquisition ensembles")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="config file, or the name of a shipped config")
        p.add_argument("--jobs", type=_positive, default=1, help="parallel ensemble members")
        p.add_argument("--dry-run", action="store_true", help="validate and print the resolved config")
        p.add_argument("--output-dir", help="replace the configured output directory")
        p.add_argument("--n-runs", type=_positive, help="use only the first N configured seeds")
        p.set_defaults(func=fn)
    p = sub.add_parser("verify", help="run the oracle-agreement property suite")
    p.add_argument("--filter", help="only properties whose name or module contains this text")
    p.add_argument("--jobs", type=_positive, default=1, help="properties run in parallel")
    p.add_argument("--dry-run", action="store_true", help="list the selected properties only")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("configs", help="list the shipped experiment configs")
    p.set_defaults(func=cmd_configs)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _Fail as exc:
        _err(str(exc))
        return exc.code
    except BifhunterError as exc:
        _err(f"run failed: {exc}")
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
