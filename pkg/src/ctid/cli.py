"""Command-line front end: ``ctid {simulate,estimate,parsimony,benchmark}``.

Exit codes: 0 ok, 2 usage or schema error, 3 numeric overflow,
4 estimation failure, 5 benchmark without any successful run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bcd import BcdConfig, StructureSpec, bcd_fit, initialize_from_unfactored, parsimony_excess
from .errors import EstimationError, SimulationOverflow, StructureError
from .estimators import SrivcConfig, SrivcStatus, _stabilized, lssvf_estimate, srivc_full
from .io import SchemaError, load_model, load_structure, model_to_dict, read_csv, write_csv, _load_json
from .lti import AdditiveModel, additive_to_unfactored, pack_theta, partial_fractions, simulate_model, simulate_zoh, unpack_theta

EXIT_OK, EXIT_USAGE, EXIT_OVERFLOW, EXIT_ESTIMATION, EXIT_EMPTY = 0, 2, 3, 4, 5

log = logging.getLogger("ctid")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _positive(kind):
    def parse(s):
        v = kind(s)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {s}")
        return v

    return parse


def _nonneg_float(s):
    v = float(s)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {s}")
    return v


# --- simulate ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    model, _ = load_model(args.model)
    data = read_csv(args.input, h=args.h, require=("u",))
    u = data["u"]
    x = simulate_model(model, u, args.h)
    rng = np.random.default_rng(args.seed)
    v = rng.normal(0.0, np.sqrt(args.noise_var), u.size) if args.noise_var > 0 else np.zeros(u.size)
    write_csv(args.out, {"k": list(range(u.size)), "u": u, "x": x, "y": x + v})
    return EXIT_OK


# --- estimate ---------------------------------------------------------------


def _load_config(path) -> tuple[BcdConfig, float | None]:
    """``{"epsilon", "max_outer", "max_inner", "srivc": {...}, "lambda_svf"}``, all optional."""
    if path is None:
        return BcdConfig(), None
    d = _load_json(path)
    if not isinstance(d, dict):
        raise SchemaError(f"{path}: config must be a JSON object")
    d = dict(d)
    lam = d.pop("lambda_svf", None)
    try:
        srivc = SrivcConfig(**d.pop("srivc", {}))
        return BcdConfig(srivc=srivc, **d), (float(lam) if lam is not None else None)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def _initial_additive(args, st: StructureSpec, y, u, cfg, lam) -> AdditiveModel:
    init = args.init
    if init == "perturb":
        if args.truth is None:
            raise CliError(EXIT_USAGE, "--init perturb needs --truth MODEL.json")
        from .harness import perturb_model

        truth, _ = load_model(args.truth)
        model = perturb_model(truth, args.perturb, np.random.default_rng(args.seed))
    elif init == "lssvf":
        n, m = st.unfactored_degrees
        theta = _stabilized(lssvf_estimate(y, u, args.h, n, m, lam))
        model = partial_fractions(unpack_theta(theta), st.pairs)
    elif init == "unfactored":
        model = initialize_from_unfactored(y, u, args.h, st, cfg, lambda_svf=lam)
    else:
        model, _ = load_model(init)
    if tuple(model.structure) != st.pairs:
        raise SchemaError(f"initial model structure {list(model.structure)} does not match {list(st.pairs)}")
    return model


def cmd_estimate(args) -> int:
    data = read_csv(args.data, h=args.h, require=("u", "y"))
    u, y = data["u"], data["y"]
    st = StructureSpec(load_structure(args.structure))
    cfg, lam = _load_config(args.config)
    if lam is None:
        lam = np.pi / (10 * args.h)
    n, m = st.unfactored_degrees

    if args.method == "lssvf":
        theta = lssvf_estimate(y, u, args.h, n, m, lam)
        tf = unpack_theta(theta)
        out = {"method": "lssvf", "theta": theta.values.tolist(), "model": model_to_dict(AdditiveModel((tf,)), args.h)}
        yhat = simulate_zoh(unpack_theta(_stabilized(theta)), u, args.h)
    elif args.method == "srivc":
        if args.init in ("lssvf", "unfactored"):
            theta0 = None
        else:
            add = _initial_additive(args, st, y, u, cfg, lam)
            theta0 = pack_theta(additive_to_unfactored(add), m)
        trace = srivc_full(y, u, args.h, n, m, cfg.srivc, theta_init=theta0, lambda_svf=lam)
        if trace.status is SrivcStatus.SINGULAR and not trace.thetas:
            raise EstimationError("SRIVC: singular normal matrix at the initial estimate")
        out = {"method": "srivc", **trace.to_dict(), "model": model_to_dict(AdditiveModel((trace.model,)), args.h)}
        yhat = simulate_zoh(trace.model, u, args.h)
    else:
        init = _initial_additive(args, st, y, u, cfg, lam)
        res = bcd_fit(y, u, args.h, st, init, cfg)
        out = {"method": "bcd", **res.to_dict()}
        out["model"] = model_to_dict(res.model, args.h)
        yhat = simulate_model(res.model, u, args.h)

    from .harness import fit_metric

    vn = float(np.mean((y - yhat) ** 2))
    out["V_N"] = vn
    Path(args.out).write_text(json.dumps(out, indent=2))
    print(f"V_N = {vn:.10g}")
    try:
        print(f"fit = {fit_metric(yhat, y):.6f}")
    except ValueError:
        print("fit = undefined (constant y)")
    return EXIT_OK


# --- parsimony --------------------------------------------------------------


def cmd_parsimony(args) -> int:
    rep = parsimony_excess(StructureSpec(load_structure(args.structure)))
    print(f"K = {rep.K}")
    print(f"relative degrees = {list(rep.relative_degrees)}")
    print(f"r = {rep.r}")
    print(f"additive parameters = {rep.additive_params}")
    print(f"unfactored parameters = {rep.unfactored_params}")
    print(f"excess = {rep.excess}")
    return EXIT_OK


# --- benchmark --------------------------------------------------------------


def cmd_benchmark(args) -> int:
    from .harness import run_case_study

    overrides = {"seed": args.seed}
    if args.runs is not None:
        overrides["runs"] = args.runs
    if args.n is not None:
        overrides["N"] = args.n
    records, summary = run_case_study(args.case, out_dir=args.out, **overrides)
    for meth, k in summary["successful_runs"].items():
        print(f"{meth}: {k}/{len(records)} successful, median fit {summary['median_fit'][meth]:.4f}")
    if not any(summary["successful_runs"].values()):
        raise CliError(EXIT_EMPTY, "no run produced a result")
    return EXIT_OK


# --- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctid", description="Additive continuous-time system identification")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a model on a sampled input")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True, help="CSV with column u")
    s.add_argument("--h", type=_positive(float), required=True)
    s.add_argument("--noise-var", type=_nonneg_float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="estimate a model from sampled data")
    e.add_argument("--data", required=True, help="CSV with columns k or t, u, y")
    e.add_argument("--h", type=_positive(float), required=True)
    e.add_argument("--structure", required=True)
    e.add_argument("--method", choices=("bcd", "srivc", "lssvf"), default="bcd")
    e.add_argument("--init", default="unfactored", help="perturb | lssvf | unfactored | MODEL.json")
    e.add_argument("--truth", help="model JSON perturbed by --init perturb")
    e.add_argument("--perturb", type=float, default=0.10)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--config")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_estimate)

    q = sub.add_parser("parsimony", help="parameter counts of additive vs unfactored form")
    q.add_argument("--structure", required=True)
    q.set_defaults(func=cmd_parsimony)

    b = sub.add_parser("benchmark", help="Monte Carlo comparison of BCD and SRIVC")
    b.add_argument("--case", type=int, choices=(1, 2), required=True)
    b.add_argument("--runs", type=_positive(int))
    b.add_argument("--n", type=_positive(int))
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if getattr(args, "perturb", None) is not None and not 0 <= args.perturb < 1:
        print("error: --perturb must lie in [0, 1)", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except SimulationOverflow as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OVERFLOW
    except EstimationError as exc:
        print(f"error: estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (StructureError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
