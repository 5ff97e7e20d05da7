"""Command-line front end.

Exit codes: 0 ok, 1 I/O or parse failure, 2 configuration error,
3 numerical singularity, 4 failed verification. Machine-readable JSON goes
to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .dataio import (
    Dataset,
    NoiseSpec,
    load_csv,
    load_feature_matrix,
    load_labels,
    load_matrix_csv,
    one_hot,
    randomize_labels,
    standardize,
    synth_blobs,
    write_matrix_csv,
)
from .errors import ConfigError, DomainError, ParseError, SingularityError
from .experiments import SweepConfig, _atomic_write, run_sweep, write_sweep_outputs
from .kernels import FAMILIES, KernelSpec, gram
from .loo import loo_binary, loo_noisy, loo_regularized, loo_zero_reg
from .regression import eigendecompose
from .seeding import derive_seed
from . import stats

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 1, 2, 3, 4
LEMMAS = ("b1", "b5", "b6", "spike", "oracle", "all")

log = logging.getLogger("loo_kernel")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _default_jobs() -> int:
    env = os.environ.get("LOO_KERNEL_JOBS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="loo-kernel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--seed", type=int, default=0, help="global seed (default 0)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("loo", help="closed-form leave-one-out report for one dataset")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--csv", help="labelled CSV, one integer label per row")
    src.add_argument("--synth-blobs", type=_int_list, metavar="N,D,C")
    src.add_argument("--features", help="feature matrix CSV (labels via --labels)")
    src.add_argument("--kernel-in", help="precomputed Gram matrix CSV (labels via --labels)")
    p.add_argument("--labels", help="label file, one integer per line")
    p.add_argument("--classes", type=int, help="class count (default: max label + 1)")
    p.add_argument("--layout", choices=("label-first", "label-last"), default="label-first")
    p.add_argument("--header", action="store_true", help="skip one header line in CSV inputs")
    p.add_argument("--separation", type=float, default=3.0, help="blob center separation")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--kernel", choices=FAMILIES, default="ntk")
    p.add_argument("--depth", type=int, default=1)
    p.add_argument("--widths", type=_int_list, default=[], metavar="M1,M2,...")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--noise", type=float, default=None, metavar="P",
                   help="randomize this fraction of labels; score against the clean ones")
    p.add_argument("--binary", action="store_true", help="two-class +-1 targets, sign decision rule")
    p.add_argument("--kernel-out", help="write the Gram matrix to this CSV")
    p.add_argument("--residuals-out", help="write the residual matrix to this CSV")

    s = sub.add_parser("sweep", help="run a sweep from a JSON config")
    s.add_argument("config")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--jobs", type=int, default=None, help="worker processes (env LOO_KERNEL_JOBS)")

    v = sub.add_parser("verify", help="Monte-Carlo lemma checks and the brute-force oracle suite")
    v.add_argument("--lemma", choices=LEMMAS, default="all")
    v.add_argument("--n", type=_int_list, default=None, metavar="N[,N...]")
    v.add_argument("--trials", type=int, default=None)
    return parser


def _load_loo_inputs(args) -> tuple[np.ndarray | None, Dataset | None, np.ndarray | None]:
    """Return (precomputed Gram or None, dataset or None, targets)."""
    if args.kernel_in:
        if not args.labels:
            raise ConfigError("--kernel-in requires --labels")
        K = load_matrix_csv(args.kernel_in, header=args.header)
        labels = load_labels(args.labels)
        if K.shape[0] != K.shape[1] or K.shape[0] != labels.shape[0]:
            raise ConfigError(f"Gram matrix {K.shape} does not match {labels.shape[0]} labels")
        C = args.classes or int(labels.max()) + 1
        return K, None, one_hot(labels, C)
    if args.csv:
        if not args.classes:
            raise ConfigError("--csv requires --classes")
        ds = load_csv(args.csv, args.classes, args.layout, header=args.header)
    elif args.features:
        if not args.labels:
            raise ConfigError("--features requires --labels")
        C = args.classes or int(load_labels(args.labels).max()) + 1
        ds = load_feature_matrix(args.features, args.labels, C, header=args.header)
    else:
        if len(args.synth_blobs) != 3:
            raise ConfigError("--synth-blobs expects N,D,C")
        n, d, C = args.synth_blobs
        ds = synth_blobs(n, d, C, args.separation, seed=derive_seed(args.seed, "data"))
    if args.standardize:
        (ds,) = standardize(ds)
    return None, ds, ds.targets


def cmd_loo(args) -> int:
    if not (args.lam >= 0 and np.isfinite(args.lam)):
        raise ConfigError(f"--lambda must be finite and >= 0, got {args.lam}")
    if args.noise is not None and args.binary:
        raise ConfigError("--noise and --binary cannot be combined")
    K, ds, Y = _load_loo_inputs(args)
    if K is None:
        widths = tuple(args.widths)
        depth = args.depth if args.kernel != "random-feature" else len(widths) + 1
        spec = KernelSpec(args.kernel, depth=depth, widths=widths,
                          seed=derive_seed(args.seed, "kernel") if widths else 0)
        K = gram(spec, ds.inputs).values
    if args.kernel_out:
        write_matrix_csv(args.kernel_out, K)
    if args.binary:
        if Y.shape[1] != 2:
            raise ConfigError("--binary needs exactly two classes")
        y = np.where(Y[:, 1] == 1, 1.0, -1.0)
        report = loo_binary(K, y, args.lam)
    elif args.noise is not None:
        if ds is None:
            ds = Dataset(np.zeros((Y.shape[0], 1)), Y)
        noisy, clean = randomize_labels(ds, NoiseSpec(args.noise, derive_seed(args.seed, "noise")))
        report = loo_noisy(eigendecompose(K), noisy.targets, clean.targets, args.lam, K=K)
    elif args.lam > 0:
        report = loo_regularized(K, Y, args.lam)
    else:
        report = loo_zero_reg(eigendecompose(K), Y)
    if args.residuals_out:
        write_matrix_csv(args.residuals_out, report.residuals)
    if report.flagged_points:
        log.warning("near-singular leave-one-out denominators at points %s", report.flagged_points)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_sweep(args, argv) -> int:
    with open(args.config, "rb") as fh:
        raw_bytes = fh.read()
    try:
        raw = json.loads(raw_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"config: not valid JSON ({exc})") from None
    if isinstance(raw, dict) and "seed" not in raw:
        raw["seed"] = args.seed
    cfg = SweepConfig.from_dict(raw)
    jobs = args.jobs if args.jobs is not None else _default_jobs()
    records = run_sweep(cfg, jobs=jobs)
    for rec in records:
        log.info("knob=%g repeat=%d loo_acc=%.4f test_acc=%.4f rank=%d",
                 rec.knob, rec.repeat, rec.loo_acc, rec.test_acc, rec.kernel_rank)
    paths = write_sweep_outputs(records, args.out, cfg)
    manifest = {
        "command_line": ["loo-kernel", *argv],
        "config_hash": hashlib.sha256(raw_bytes).hexdigest(),
        "seed": cfg.seed,
        "artifact_version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "outputs": paths,
    }
    manifest_path = os.path.join(args.out, "manifest.json")
    _atomic_write(manifest_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(json.dumps({**paths, "manifest": manifest_path}, sort_keys=True))
    return EXIT_OK


def _verification_plan(args) -> list:
    seed, trials, ns = args.seed, args.trials, args.n
    plan = []
    lemma = args.lemma
    if lemma in ("b1", "all"):
        for n in ns or [2, 16, 64]:
            plan.append(lambda n=n: stats.verify_lemma_b1(trials or 1000, n, seed))
    if lemma in ("b5", "all"):
        for n in ns or [4, 32]:
            plan.append(lambda n=n: stats.verify_lemma_b5(trials or 10_000, n, seed))
    if lemma in ("b6", "all"):
        plan.append(lambda: stats.verify_lemma_b6(ns or (8, 64, 512), trials or 10_000, seed))
    if lemma in ("spike", "all"):
        plan.append(lambda: stats.verify_spike_growth(ns or (64, 256), trials or 400, seed))
    if lemma in ("oracle", "all"):
        plan.append(lambda: stats.verify_oracle(trials or 20, seed))
    return plan


def cmd_verify(args) -> int:
    reports = [run() for run in _verification_plan(args)]
    print(json.dumps([r.to_dict() for r in reports], sort_keys=True))
    failed = [r.lemma for r in reports if not r.passed]
    if failed:
        log.error("verification failed: %s", ", ".join(failed))
        return EXIT_VERIFY
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "loo":
            return cmd_loo(args)
        if args.command == "sweep":
            return cmd_sweep(args, argv)
        return cmd_verify(args)
    except SingularityError as exc:
        print(f"error: {exc} (points {exc.indices})", file=sys.stderr)
        return EXIT_NUMERICAL
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
