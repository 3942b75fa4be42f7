"""Command-line interface: ``matpca <command> [options]``.

Exit status is 0 on success, 2 for invalid arguments or inputs and 3 for
numerical or estimation failures.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import fileio, svg
from .bench import BENCH_METHODS, CSV_HEADER, run_bench
from .datagen import (
    KINDS,
    MODES,
    SITUATIONS,
    ContaminationSpec,
    build_population,
    contaminate,
    contaminate_mixed,
    sample_matrix_normal,
)
from .errors import ArgumentError, EstimationFailure, InsufficientDataError, NumericalDomainError, ShapeError
from .hrfpca import (
    METHODS,
    OD_CONVENTIONS,
    classify_soda,
    detect_outliers,
    fit,
    scree,
    shapley_cellwise,
    suggest_rank,
)
from .matnorm import mmd2
from .mmcd import MmcdConfig, mmcd_objective

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("matpca")


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {v}")
    return v


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("must lie in [0, 2**64)")
    return v


def _csv_list(conv, allowed=None):
    def parse(text):
        try:
            items = [conv(t) for t in text.split(",") if t.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}")
        if not items:
            raise argparse.ArgumentTypeError("empty list")
        if allowed is not None:
            bad = [i for i in items if i not in allowed]
            if bad:
                raise argparse.ArgumentTypeError(f"unknown values {bad}; allowed {list(allowed)}")
        return items
    return parse


def _default_threads():
    env = os.environ.get("MATPCA_THREADS", "1")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def _shape_check(model, data):
    if data.shape != model.shape:
        raise ShapeError(f"dataset matrices are {data.shape} but the model expects {model.shape}")


def cmd_fit(args):
    data = fileio.read_dataset(args.data)
    cfg = MmcdConfig(seed=args.seed, h=args.h, n_starts=args.starts)
    model = fit(data, args.qc, args.qr, cfg, method=args.method, threads=args.threads)
    fileio.save_model(args.out, model)
    if model.mmcd is not None:
        kept = int(model.mmcd.weights.sum())
        print(
            f"method=hrfpca objective={fileio.fmt(model.mmcd.raw_objective)} "
            f"h={model.mmcd.h} kept={kept} n={data.n}"
        )
    else:
        print(
            f"method=fpca objective={fileio.fmt(mmcd_objective(model.params))} "
            f"h={data.n} kept={data.n} n={data.n}"
        )
    return EXIT_OK


def cmd_detect(args):
    model = fileio.load_model(args.model)
    data = fileio.read_dataset(args.data)
    _shape_check(model, data)
    det = detect_outliers(model.params, data, args.alpha)
    rows = [
        (int(i), float(d), float(det.cutoff), int(f))
        for i, d, f in zip(data.ids, det.distances, det.flags)
    ]
    fileio.write_csv(args.out, ("id", "mmd2", "cutoff", "flag"), rows)
    print(f"flagged={int(det.flags.sum())} n={data.n}")
    return EXIT_OK


def cmd_soda(args):
    model = fileio.load_model(args.model)
    data = fileio.read_dataset(args.data)
    _shape_check(model, data)
    rep = classify_soda(model, data, args.od_convention)
    rows = [(int(i), float(s), float(o), lab) for i, s, o, lab in zip(data.ids, rep.sd, rep.od, rep.labels)]
    header = ("id", "sd", "od", "label")
    fileio.write_csv(args.out_prefix + ".csv", header, rows)
    title = f"SODA ({model.method_tag}, OD convention {args.od_convention})"
    fileio.atomic_write(args.out_prefix + ".svg", svg.soda_svg(rep.sd, rep.od, rep.sd_cut, rep.od_cut, rep.labels, title))
    counts = " ".join(f"{k}={v}" for k, v in rep.counts().items())
    print(f"sd_cut={fileio.fmt(rep.sd_cut)} od_cut={fileio.fmt(rep.od_cut)} {counts}")
    return EXIT_OK


def cmd_shapley(args):
    model = fileio.load_model(args.model)
    data = fileio.read_dataset(args.data)
    _shape_check(model, data)
    if not 0 <= args.id < data.n:
        raise ArgumentError(f"--id {args.id} is not an observation id (0..{data.n - 1})")
    X = data.samples[args.id]
    phi = shapley_cellwise(X, model.params)
    fileio.atomic_write(args.out, svg.heatmap_svg(phi, f"Cellwise contributions, observation {args.id}"))
    base = args.out[:-4] if args.out.lower().endswith(".svg") else args.out
    rows = [(i, j, float(phi[i, j])) for i in range(phi.shape[0]) for j in range(phi.shape[1])]
    fileio.write_csv(base + ".csv", ("row", "col", "phi"), rows)
    print(f"mmd2={fileio.fmt(mmd2(X, model.params))} sum_phi={fileio.fmt(phi.sum())}")
    return EXIT_OK


def cmd_scree(args):
    model = fileio.load_model(args.model)
    eig_c, eig_r = scree(model.params)
    text = svg.scree_svg([("column covariance", eig_c), ("row covariance", eig_r)])
    fileio.atomic_write(args.out, text)
    print("column " + " ".join(fileio.fmt(v) for v in eig_c))
    print("row " + " ".join(fileio.fmt(v) for v in eig_r))
    print(f"suggested q_c={suggest_rank(eig_c)} q_r={suggest_rank(eig_r)}")
    return EXIT_OK


def cmd_bench(args):
    cfg = MmcdConfig(n_starts=args.starts) if args.starts else MmcdConfig()
    res = run_bench(
        population=args.population,
        kinds=args.kinds,
        sits=args.sits,
        props=args.props,
        reps=args.reps,
        methods=args.methods,
        seed=args.seed,
        threads=args.threads,
        raw=args.raw,
        config=cfg,
        mode=args.mode,
    )
    fileio.write_csv(args.out, CSV_HEADER, res.rows)
    print(f"cells={len(res.rows)} out={args.out}")
    return EXIT_OK


def _parse_contamination(text):
    """``none`` or ``KIND:P:SIT`` with KIND one of the outlier kinds or ``mixed``."""
    if text == "none":
        return None
    parts = text.split(":")
    if len(parts) != 3:
        raise ArgumentError(f"--contaminate expects KIND:P:SIT or none, got {text!r}")
    kind, p, sit = parts
    if kind not in KINDS + ("mixed",):
        raise ArgumentError(f"--contaminate: unknown kind {kind!r}")
    try:
        p, sit = float(p), int(sit)
    except ValueError:
        raise ArgumentError(f"--contaminate: bad proportion or situation in {text!r}")
    if sit not in SITUATIONS:
        raise ArgumentError(f"--contaminate: situation must be one of {sorted(SITUATIONS)}")
    if not 0.0 <= p <= 0.5:
        raise ArgumentError("--contaminate: proportion must lie in [0, 0.5]")
    return kind, p, sit


def cmd_simulate(args):
    spec = build_population(args.population)
    con = _parse_contamination(args.contaminate)
    data = sample_matrix_normal(spec, args.seed, args.n)
    truth = []
    if con is not None:
        kind, p, sit = con
        if kind == "mixed":
            data, groups = contaminate_mixed(data, spec, p, sit, seed=args.seed, mode=args.mode)
            truth = sorted((int(i), k) for k, idx in groups.items() for i in idx)
        else:
            data, idx = contaminate(data, spec, ContaminationSpec.situation(kind, p, sit, args.seed), mode=args.mode)
            truth = [(int(i), kind) for i in idx]
    fileio.write_dataset(args.out, data)
    fileio.write_csv(args.out + ".truth.csv", ("id", "kind"), truth)
    print(f"n={data.n} outliers={len(truth)} out={args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="matpca", description="Robust factored PCA for matrix-valued data.")
    top.add_argument("--threads", type=_positive_int, default=_default_threads(),
                     help="worker threads (default: $MATPCA_THREADS or 1); results do not depend on it")
    top.add_argument("--verbose", action="store_true")
    # the global flags are also accepted after the command name
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=argparse.SUPPRESS)
    common.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = top.add_subparsers(dest="command", required=True)

    def command(name, help):
        return sub.add_parser(name, help=help, parents=[common])

    p = command("fit", help="fit a model and write a model file")
    p.add_argument("--data", required=True, help="dataset file, or bundled:data2 / bundled:data2_o")
    p.add_argument("--qc", type=_positive_int, required=True)
    p.add_argument("--qr", type=_positive_int, required=True)
    p.add_argument("--method", choices=METHODS, default="hrfpca")
    p.add_argument("--h", type=_positive_int, default=None, help="MMCD subset size")
    p.add_argument("--starts", type=_positive_int, default=500, help="random elemental starts")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = command("detect", help="flag outliers by their Mahalanobis distance")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float, default=0.975)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = command("soda", help="score/orthogonal distance classification")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--od-convention", choices=OD_CONVENTIONS, default="squared",
                   help="squared: squared residual norm; norm: the residual norm")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_soda)

    p = command("shapley", help="cellwise contributions of one observation")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--id", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_shapley)

    p = command("scree", help="eigenvalue plots of the covariance factors")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scree)

    p = command("bench", help="Monte-Carlo covariance recovery benchmark")
    p.add_argument("--population", choices=("data1", "data2"), default="data1")
    p.add_argument("--kinds", type=_csv_list(str, ("PC", "OC", "PC_OC")), default=["PC", "OC", "PC_OC"])
    p.add_argument("--sits", type=_csv_list(int, tuple(SITUATIONS)), default=[1, 2, 3, 4])
    p.add_argument("--props", type=_csv_list(float), default=[0.1, 0.3, 0.4, 0.49])
    p.add_argument("--reps", type=_positive_int, default=50)
    p.add_argument("--methods", type=_csv_list(str, BENCH_METHODS), default=list(BENCH_METHODS))
    p.add_argument("--starts", type=_positive_int, default=None, help="override the number of MMCD starts")
    p.add_argument("--mode", choices=MODES, default="additive", help="outlier construction")
    p.add_argument("--raw", action="store_true", help="also report the raw (unreweighted) MMCD estimate")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = command("simulate", help="write a synthetic dataset and its outlier indices")
    p.add_argument("--population", choices=("data1", "data2"), required=True)
    p.add_argument("--contaminate", default="none", help="none, or KIND:P:SIT (KIND may be mixed)")
    p.add_argument("--mode", choices=MODES, default="additive", help="outlier construction")
    p.add_argument("--n", type=_positive_int, default=None, help="sample size (default: population size)")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)
    return top


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(name)s: %(message)s")
    if getattr(args, "props", None) is not None and any(not 0.0 <= p <= 0.5 for p in args.props):
        print("matpca: error: --props values must lie in [0, 0.5]", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ArgumentError, ShapeError) as exc:
        print(f"matpca: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalDomainError, EstimationFailure, InsufficientDataError) as exc:
        print(f"matpca: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
