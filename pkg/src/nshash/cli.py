"""Command-line surface: synth, train, encode, eval, ablate.

Exit codes: 0 success, 1 usage error, 2 data/format error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .errors import FormatError, NumericError, ParameterError, ShapeError
from .hashcore import pack_codes, read_packed_codes, write_packed_codes
from .metrics import RetrievalRun, compute_report, format_report, write_pr_csv
from .model import VARIANTS, encode, load_checkpoint, save_checkpoint
from .pipeline import (
    Dataset,
    RunConfig,
    load_features,
    load_labels,
    parse_config_text,
    save_features,
    save_labels,
    split_query_database,
    synth_clusters,
    train,
    write_history_csv,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def _load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _cmd_synth(args) -> int:
    ds = synth_clusters(args.k, args.per_cluster, args.dx,
                        args.center_stddev, args.cluster_stddev, args.seed)
    features_path = f"{args.out}.nshf"
    labels_path = f"{args.out}.nshl"
    save_features(features_path, ds.features)
    save_labels(labels_path, ds.labels)
    print(f"wrote {features_path} ({ds.n} x {ds.features.shape[1]})")
    print(f"wrote {labels_path} ({ds.n} x {ds.labels.shape[1]})")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args.config)
    features = load_features(args.features)
    labels = load_labels(args.labels) if args.labels else None
    dataset = Dataset(features=features, labels=labels)
    result = train(dataset, cfg)
    save_checkpoint(args.out, result.params)
    if args.history:
        write_history_csv(args.history, result.history)
    final = result.history[-1].loss if result.history else float("nan")
    print(f"trained {cfg.epochs} epochs, {len(result.history)} steps, final loss {final:.6f}")
    print(f"wrote {args.out}")
    return 0


def _cmd_encode(args) -> int:
    params = load_checkpoint(args.ckpt)
    features = load_features(args.features)
    enc = encode(params, features)
    write_packed_codes(args.out, pack_codes(enc.b))
    print(f"wrote {args.out} ({features.shape[0]} codes, {params.d_b} bits)")
    return 0


def _cmd_eval(args) -> int:
    run = RetrievalRun(
        db_codes=read_packed_codes(args.db_codes),
        query_codes=read_packed_codes(args.query_codes),
        db_labels=load_labels(args.db_labels),
        query_labels=load_labels(args.query_labels),
    )
    report = compute_report(run, args.k)
    sys.stdout.write(format_report(report))
    if args.pr_out:
        write_pr_csv(args.pr_out, report.pr)
        print(f"wrote {args.pr_out}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_config(args.config)
    variant = dataclasses.replace(cfg.variant, variant=args.variant)
    cfg = dataclasses.replace(cfg, variant=variant)
    dataset = Dataset(features=load_features(args.features), labels=load_labels(args.labels))
    database, queries = split_query_database(dataset, args.queries, cfg.seed)
    result = train(database, cfg)
    db_codes = pack_codes(encode(result.params, database.features).b)
    query_codes = pack_codes(encode(result.params, queries.features).b)
    run = RetrievalRun(db_codes=db_codes, query_codes=query_codes,
                       db_labels=database.labels, query_labels=queries.labels)
    report = compute_report(run, args.k)
    print(f"variant={args.variant}")
    sys.stdout.write(format_report(report))
    if args.pr_out:
        write_pr_csv(args.pr_out, report.pr)
        print(f"wrote {args.pr_out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="nshash", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a Gaussian-cluster benchmark")
    p.add_argument("--k", type=int, default=10, help="number of clusters")
    p.add_argument("--per-cluster", type=int, default=220)
    p.add_argument("--dx", type=int, default=64)
    p.add_argument("--center-stddev", type=float, default=1.0)
    p.add_argument("--cluster-stddev", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True,
                   help="output prefix; writes <out>.nshf and <out>.nshl")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train an encoder and write a checkpoint")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", default=None, help="accepted for symmetry; training is unsupervised")
    p.add_argument("--config", default=None, help="key=value run config file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", default=None, help="optional per-step loss CSV")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("encode", help="encode features into packed codes")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="packed code file (.nshc)")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("eval", help="retrieval metrics for encoded codes")
    p.add_argument("--db-codes", required=True)
    p.add_argument("--query-codes", required=True)
    p.add_argument("--db-labels", required=True)
    p.add_argument("--query-labels", required=True)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--pr-out", default=None, help="optional P-R curve CSV")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train+encode+eval with a loss-pathway variant")
    p.add_argument("--variant", required=True, choices=VARIANTS)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--queries", type=int, default=200, help="items split off as the query set")
    p.add_argument("--config", default=None)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--pr-out", default=None)
    p.set_defaults(func=_cmd_ablate)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return 1
    except SystemExit as exc:  # --help
        code = exc.code
        return int(code) if code else 0
    try:
        return args.func(args)
    except (FormatError, ShapeError, ParameterError, NumericError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
