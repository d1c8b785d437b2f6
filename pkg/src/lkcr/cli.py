"""Command-line entry point.

Data goes to stdout (or ``--out``); logs and error messages go to stderr.
Exit codes: 0 success, 2 input error, 3 compute error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .bundle_io import load_bundle, save_bundle
from .covariance import CovMethod
from .domain import DomainKind, GridDomain, normalize
from .errors import ComputeError, InputError
from .excursion import check_connectivity, ec_profile
from .gkf import LkcVector, RhoFamily, tail_probability, threshold
from .regression import PipelineOptions, Spacing, design_levels, fit_pipeline, fit_summary

EXIT_OK, EXIT_INPUT, EXIT_COMPUTE = 0, 2, 3

log = logging.getLogger("lkcr")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INPUT)


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be positive: {v}")
    return v


def _cov(text):
    try:
        return str(CovMethod.parse(text))
    except InputError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lkcr", description="Euler-characteristic LKC regression and random field thresholds.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1)
        sp.add_argument("--out", type=Path, help="write output here instead of stdout")

    sp = sub.add_parser("ec", help="EC profile of a field bundle as CSV")
    sp.add_argument("bundle", type=Path)
    sp.add_argument("--levels", type=_float_list, help="explicit comma-separated levels")
    sp.add_argument("--U", type=int, default=50)
    sp.add_argument("--spacing", choices=[s.value for s in Spacing], default="equal")
    sp.add_argument("--connectivity", type=int, choices=[4, 6, 8, 18, 26])
    sp.add_argument("--no-normalize", action="store_true", help="use raw values for level design")
    common(sp)

    sp = sub.add_parser("fit", help="fit LKCs and report the threshold as JSON")
    sp.add_argument("bundle", type=Path)
    sp.add_argument("--cov", type=_cov, default="sd", help="i, sd, sc, sgw[:k] or pi")
    sp.add_argument("--U", type=int, default=50)
    sp.add_argument("--spacing", choices=[s.value for s in Spacing], default="equal")
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--family", default="gaussian", help="gaussian or chi2:<k>")
    sp.add_argument("--free-l0", action="store_true", help="estimate L0 instead of fixing it")
    sp.add_argument("--connectivity", type=int, choices=[4, 6, 8, 18, 26])
    sp.add_argument("--per-field", action="store_true", help="normalize each field separately")
    common(sp)

    sp = sub.add_parser("threshold", help="threshold from known LKCs")
    sp.add_argument("--lkcs", required=True, help="comma-separated L0,L1,...")
    sp.add_argument("--family", default="gaussian")
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--pvalue", type=float, metavar="U", help="print the tail probability at U instead")

    sp = sub.add_parser("simulate", help="simulate a Gaussian field bundle")
    sp.add_argument("--domain", choices=[k.value for k in DomainKind], default="square")
    sp.add_argument("--G", type=_positive_int, help="grid size (required unless --fiac-like, which defaults to 32)")
    sp.add_argument("--F", type=_positive_int, help="field count (default 15, or 16 with --fiac-like)")
    sp.add_argument("--alpha-cov", type=float, help="covariance scale (default 100 square, 20 otherwise)")
    sp.add_argument("--fiac-like", action="store_true", help="masked 3D cube fixture (F=16, default alpha-cov 200)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", type=Path, required=True)

    sp = sub.add_parser("experiment", help="run a factorial simulation experiment")
    sp.add_argument("--config", type=Path, required=True, help="JSON experiment config")
    sp.add_argument("--out", type=Path, required=True, help="output directory")
    sp.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1)
    sp.add_argument("--seed", type=int, help="override the config master seed")
    sp.add_argument("--no-figures", action="store_true")

    sp = sub.add_parser("plotdata", help="figure tables from an experiment results CSV")
    sp.add_argument("--result", type=Path, required=True)
    sp.add_argument("--figure", required=True, help="runtime, sd, median or bias")
    sp.add_argument("--out", type=Path, help="write the CSV table here instead of stdout")
    sp.add_argument("--png", type=Path, help="also render the figure to this PNG file")
    return p


def _emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text if text.endswith("\n") else text + "\n")
        log.info("wrote %s", out)


def cmd_ec(args):
    bundle = load_bundle(args.bundle)
    conn = check_connectivity(bundle.domain, args.connectivity)
    if args.levels is not None:
        levels = np.asarray(args.levels)
    else:
        work = bundle if args.no_normalize or bundle.normalized else normalize(bundle)
        levels = design_levels(work, args.spacing, args.U, conn).levels
        bundle = work
    prof = ec_profile(bundle, levels, conn, threads=args.threads)
    _emit(prof.to_csv(), args.out)


def cmd_fit(args):
    bundle = load_bundle(args.bundle)
    opts = PipelineOptions(spacing=Spacing(args.spacing), U=args.U, cov_method=CovMethod.parse(args.cov),
                           family=RhoFamily.parse(args.family), fix_l0=not args.free_l0,
                           connectivity=args.connectivity, alpha=args.alpha,
                           per_field_normalization=args.per_field)
    res = fit_pipeline(bundle, opts)
    log.info(fit_summary(res))
    _emit(res.to_json(), args.out)


def cmd_threshold(args):
    lkcs = LkcVector.parse(args.lkcs)
    family = RhoFamily.parse(args.family)
    if args.pvalue is not None:
        tp = tail_probability(lkcs, family, args.pvalue)
        if not tp.in_validity_range:
            log.warning("expected EC %.4g is outside the range where it approximates a probability",
                        tp.expected_ec)
        print(f"{tp.probability:.6g}")
        return
    print(f"{threshold(lkcs, family, args.alpha):.6f}")


def cmd_simulate(args):
    from .simulation import GrfSpec, fiac_like_bundle, simulate

    if args.fiac_like:
        bundle = fiac_like_bundle(args.seed, G=args.G or 32, F=args.F or 16,
                                  alpha_cov=args.alpha_cov if args.alpha_cov else 200.0)
    else:
        if args.G is None:
            raise InputError("--G is required unless --fiac-like is given")
        domain = GridDomain(DomainKind(args.domain), args.G)
        bundle = simulate(GrfSpec(domain, args.alpha_cov, args.F or 15, args.seed))
    save_bundle(bundle, args.out)
    log.info("wrote %d fields on %d sites to %s", bundle.field_count, bundle.domain.n_sites, args.out)


def cmd_experiment(args):
    from .experiment import ExperimentConfig, run_experiment

    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "seed": args.seed})

    def progress(done, total):
        if done == total or done % max(1, total // 20) == 0:
            log.info("replicates %d/%d", done, total)

    res = run_experiment(cfg, threads=args.threads, progress=progress)
    paths = res.write(args.out)
    if not args.no_figures:
        from .reports import FIGURES, plot_table, render

        for fig in FIGURES:
            render(plot_table(res.rows, fig), fig, args.out / f"{fig}.png")
    if res.failures:
        log.warning("%d replicate-method runs failed; see %s", len(res.failures), paths["failures"])
    log.info("experiment finished in %.1f s", res.wall_seconds)
    print(paths["summary"])


def cmd_plotdata(args):
    from .experiment import read_results
    from .reports import FIGURES, plot_table, render, table_csv

    if args.figure not in FIGURES:
        raise InputError(f"unknown figure {args.figure!r}; choose from {', '.join(FIGURES)}")
    rows = read_results(args.result)
    table = plot_table(rows, args.figure)
    _emit(table_csv(table, args.figure), args.out)
    if args.png:
        render(table, args.figure, args.png)


COMMANDS = {
    "ec": cmd_ec,
    "fit": cmd_fit,
    "threshold": cmd_threshold,
    "simulate": cmd_simulate,
    "experiment": cmd_experiment,
    "plotdata": cmd_plotdata,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ComputeError as exc:
        print(f"compute error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
