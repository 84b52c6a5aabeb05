"""``deephash`` command-line interface.

Exit codes: 0 success, 1 I/O error, 2 usage or configuration error,
3 training divergence. Progress goes to stderr; stdout carries only
command output (tables, query results).
"""

from __future__ import annotations

import argparse
import contextlib
import os
import sys


from . import data as dio
from .evaluation import MetricsReport, emit_report, evaluate
from .exceptions import ConfigError, DivergenceError, FormatError, ShapeMismatchError
from .hashing import HammingIndex, binarize, pack
from .model import forward, load_checkpoint, save_checkpoint
from .pipeline import TrainConfig, train

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"deephash: error: {msg}", file=sys.stderr)


def _sniff(path) -> str:
    """Return "feat-bin", "bcod" or "csv" for an input file."""
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == dio.FEAT_MAGIC:
        return "feat-bin"
    if magic == dio.BCOD_MAGIC:
        return "bcod"
    if str(path).endswith(".csv"):
        return "csv"
    raise FormatError(f"{path}: unrecognised file format (magic {magic!r})")


def _load_features(path) -> dio.Dataset:
    fmt = _sniff(path)
    if fmt == "bcod":
        raise UsageError(f"{path}: expected a feature file, got packed codes")
    return dio.read_features(path, fmt)


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def cmd_gen_data(args) -> int:
    spec = dio.BlobSpec(
        classes=args.classes,
        dim=args.dim,
        samples_per_class=args.per_class,
        center_scale=args.center_scale,
        noise_sigma=args.sigma,
        seed=args.seed,
    )
    try:
        spec.validate()
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    ds = dio.generate_blobs(spec)
    if args.test_out:
        train_ds, test_ds = dio.split(ds, args.test_fraction, args.split_seed)
        dio.write_features(train_ds, args.out, args.format)
        dio.write_features(test_ds, args.test_out, args.format)
        print(f"wrote {train_ds.n} train rows to {args.out}, {test_ds.n} test rows to {args.test_out}",
              file=sys.stderr)
    else:
        dio.write_features(ds, args.out, args.format)
        print(f"wrote {ds.n} rows (d={ds.d}, C={ds.n_classes}) to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = TrainConfig.load(args.config)
    ds = _load_features(args.data)
    eval_data = None
    if args.eval_queries:
        eval_data = (ds, _load_features(args.eval_queries))

    def progress(rec):
        print(
            f"epoch={rec.epoch} loss={rec.loss:.6g} alpha={rec.alpha:g} "
            f"lambda={rec.lam:g} qerr={rec.qerr:.6g}",
            file=sys.stderr,
        )

    try:
        params, history = train(cfg, ds, eval_data=eval_data, progress=progress)
    except DivergenceError as exc:
        _err(f"training diverged: {exc}")
        return EXIT_DIVERGED
    save_checkpoint(params, args.out)
    if args.history:
        history.save(args.history)
    return EXIT_OK


def _encode_rows(args):
    params = load_checkpoint(args.ckpt)
    ds = _load_features(args.data)
    if ds.d != params.layer_dims[0]:
        raise UsageError(f"data has d={ds.d} but checkpoint expects {params.layer_dims[0]}")
    U, _ = forward(params, ds.features)
    return U, ds


def cmd_encode(args) -> int:
    U, ds = _encode_rows(args)
    if args.raw_out:
        dio.write_features(dio.Dataset(U, ds.labels, ds.n_classes), args.raw_out, "feat-bin")
    dio.write_codes(pack(binarize(U)), ds.labels, args.out)
    return EXIT_OK


def cmd_dump_embeddings(args) -> int:
    U, ds = _encode_rows(args)
    with open(args.out, "w") as f:
        for label, row in zip(ds.labels, U):
            f.write(",".join([str(int(label))] + [repr(float(v)) for v in row]) + "\n")
    return EXIT_OK


def _load_for_eval(path):
    fmt = _sniff(path)
    if fmt == "bcod":
        codes, labels = dio.read_codes(path)
        return codes, labels, "hamming"
    ds = dio.read_features(path, fmt)
    return ds.features, ds.labels, "euclidean"


def cmd_eval(args) -> int:
    db, db_labels, db_kind = _load_for_eval(args.db)
    q, q_labels, q_kind = _load_for_eval(args.queries)
    if db_kind != q_kind:
        raise UsageError("database and queries must both be feature files or both BCOD files")
    if args.metric == "euclidean" and db_kind == "hamming":
        raise UsageError("euclidean metric requires feature files, got BCOD input")
    if args.metric == "hamming" and db_kind == "euclidean":
        raise UsageError("hamming metric requires BCOD input")
    if args.k > len(db_labels):
        raise UsageError(f"--k {args.k} exceeds database size {len(db_labels)}")
    if len(q_labels) == 0:
        raise UsageError("query set is empty")
    config = {
        "db": os.path.basename(args.db),
        "queries": os.path.basename(args.queries),
        "metric": args.metric,
        "cutoff": args.cutoff,
    }
    report: MetricsReport = evaluate(
        db, db_labels, q, q_labels, args.k, args.metric, args.cutoff, config
    )
    emit_report(report, args.report)
    return EXIT_OK


def cmd_query(args) -> int:
    codes, labels = dio.read_codes(args.db)
    if not 0 <= args.query_row < codes.n:
        raise UsageError(f"--query-row {args.query_row} out of range [0, {codes.n})")
    index = HammingIndex(codes, labels)
    for row_id, dist in index.search(codes.row(args.query_row), args.k):
        print(f"{row_id}\t{dist}\t{labels[row_id]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deephash", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=_positive_int, default=None,
                        help="cap BLAS worker threads (results do not change)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate Gaussian blob features")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--center-scale", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["feat-bin", "csv"], default="feat-bin")
    p.add_argument("--test-out", help="also write a stratified test split here")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train an embedding or hashing model")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="write per-epoch history JSON here")
    p.add_argument("--eval-queries", help="held-out features evaluated against --data")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="binarize model outputs into a BCOD file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--raw-out", help="also write real-valued outputs as feat-bin")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("eval", help="KNN accuracy and mAP")
    p.add_argument("--db", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=_positive_int, default=5)
    p.add_argument("--metric", choices=["euclidean", "hamming"], required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--cutoff", type=_positive_int, default=None, help="mAP@cutoff instead of full ranking")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("query", help="rank a BCOD database against one of its rows")
    p.add_argument("--db", required=True)
    p.add_argument("--query-row", type=int, required=True)
    p.add_argument("--k", type=_positive_int, required=True)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("dump-embeddings", help="write model outputs as label,u0,... CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_embeddings)
    return parser


def _thread_limit(n):
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except (UsageError, ConfigError, ShapeMismatchError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        _err(str(exc))
        return EXIT_IO


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
