"""Command-line pipeline: synthesize, pretrain, cluster, estimate, evaluate.

Every command writes one manifest next to its outputs; ``rerun`` replays
a manifest and reproduces the outputs byte for byte.  Exit codes: 0 on
success, 1 for usage errors, 2 for data or validation errors, 3 for
numerical failures.  The DTC_THREADS environment variable caps worker
parallelism for sweeps.
"""

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    LabeledSet,
    ProbeSplit,
    load_features,
    load_labeled,
    save_features,
    split_probes,
    synth_mixture,
)
from .encoder import PretrainConfig, forward, load_encoder, pretrain_encoder, save_encoder
from .errors import DataError, NumericalError, ParameterError
from .estimator import default_threads, estimate_class_count, sweep_report_to_csv
from .manifest import read_manifest, write_manifest
from .metrics import count_error, evaluate_clustering
from .regularizers import RampSchedule
from .seeding import rng_for
from .trainer import TrainConfig, initialize, predict, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _ext(format):
    return "csv" if format == "csv" else "dtcf"


def _write_pairs(path, header, pairs):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for key, value in pairs:
            fh.write(f"{key},{value}\n")


def _read_id_value_file(path, column):
    """Read ``id,<column>`` pairs; feature CSVs with a label column also work."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
    if header == f"id,{column}" or header == "id,label":
        mapping = {}
        with open(path, "r", encoding="utf-8") as fh:
            fh.readline()
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split(",")
                if len(parts) != 2:
                    raise DataError(f"{path}: line {lineno}: expected 2 fields")
                try:
                    mapping[parts[0]] = int(parts[1])
                except ValueError:
                    raise DataError(
                        f"{path}: line {lineno}: '{parts[1]}' is not an integer"
                    ) from None
        if not mapping:
            raise DataError(f"{path}: no rows")
        return mapping
    if header.startswith("id,f0"):
        labeled = load_labeled(path, "csv")
        return {i: int(l) for i, l in zip(labeled.features.ids, labeled.labels)}
    raise DataError(f"{path}: expected an 'id,{column}' file or a labelled feature CSV")


def _manifest(ns, argv, command, inputs, outputs, skip=("func", "out_dir")):
    config = {k: v for k, v in vars(ns).items() if k not in skip and not callable(v)}
    path = Path(ns.out_dir) / f"{command}.manifest"
    write_manifest(path, command, argv, config, inputs, outputs, __version__)
    return path


def _out_dir(ns) -> Path:
    out = Path(ns.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(ns, argv):
    labeled, unlabeled, truth = synth_mixture(
        ns.labeled_classes, ns.unlabeled_classes, ns.per_class,
        ns.dim, ns.sep, ns.seed,
    )
    out = _out_dir(ns)
    ext = _ext(ns.format)
    labeled_path = out / f"labeled.{ext}"
    unlabeled_path = out / f"unlabeled.{ext}"
    truth_path = out / "unlabeled_truth.csv"
    save_features(labeled_path, labeled.features, ns.format, labels=labeled.labels)
    save_features(unlabeled_path, unlabeled, ns.format)
    _write_pairs(truth_path, "id,label", zip(unlabeled.ids, truth.tolist()))
    _manifest(ns, argv, "synth", {}, {
        "labeled": labeled_path, "unlabeled": unlabeled_path, "truth": truth_path,
    })
    print(f"wrote {labeled_path} ({labeled.features.n_rows} rows), "
          f"{unlabeled_path} ({unlabeled.n_rows} rows)")


def cmd_pretrain(ns, argv):
    labeled = load_labeled(ns.labeled, ns.format)
    config = PretrainConfig(hidden=(ns.hidden,), epochs=ns.epochs,
                            batch_size=ns.batch_size, learning_rate=ns.lr)
    encoder = pretrain_encoder(labeled, config, seed=ns.seed)
    out = _out_dir(ns)
    encoder_path = out / "encoder.dtce"
    save_encoder(encoder_path, encoder)
    _manifest(ns, argv, "pretrain", {"labeled": ns.labeled}, {"encoder": encoder_path})
    print(f"wrote {encoder_path}")


def _auto_k(ns, encoder, out):
    probe = load_labeled(ns.probe, ns.format)
    if ns.n_probe is not None:
        split = split_probes(probe, ns.n_probe, ns.anchor_ratio, ns.seed)
    else:
        split = _split_all_classes(probe.n_classes, ns.anchor_ratio, ns.seed)
    embedded_probe = LabeledSet(forward(encoder, probe.features), probe.labels)
    report = estimate_class_count(
        embedded_probe, forward(encoder, load_features(ns.data, ns.format)),
        split, ns.k_max, ns.tau, ns.seed, threads=default_threads(),
    )
    sweep_path = out / "auto_k_sweep.csv"
    sweep_path.write_text(sweep_report_to_csv(report), encoding="utf-8")
    print(f"estimated k_final={report.k_final} (k_hat={report.k_hat})")
    return report, sweep_path


def _split_all_classes(n_classes, anchor_ratio, seed) -> ProbeSplit:
    """Anchor/validation partition when the whole file is the probe set."""
    if n_classes < 2:
        raise ParameterError("probe file must contain at least 2 classes")
    if not 0.0 < anchor_ratio < 1.0:
        raise ParameterError(f"anchor_ratio must be in (0, 1), got {anchor_ratio}")
    order = rng_for(seed, "split-probes").permutation(n_classes)
    n_anchor = int(np.floor(anchor_ratio * n_classes + 0.5))
    n_anchor = min(max(n_anchor, 1), n_classes - 1)
    return ProbeSplit(frozenset(order[:n_anchor].tolist()),
                      frozenset(order[n_anchor:].tolist()))


def _run_cluster(encoder, data, ns, k):
    config = TrainConfig(
        k=k, variant=ns.variant, warmup_epochs=ns.warmup, main_epochs=ns.epochs,
        batch_size=ns.batch_size, learning_rate=ns.lr, ema_momentum=ns.ema_momentum,
        ramp=RampSchedule(ns.ramp) if ns.ramp else None,
        perturb_sigma=ns.sigma, seed=ns.seed, bottleneck_dim=ns.bottleneck,
    )
    ready, protos, _ = initialize(encoder, data, config)
    trace = train(ready, protos, data, config)
    return config, trace


def cmd_cluster(ns, argv):
    if ns.k is None and not ns.auto_k:
        raise ParameterError("provide --k or --auto-k")
    if ns.k is not None and ns.auto_k:
        raise ParameterError("provide either --k or --auto-k, not both")
    if ns.auto_k and not ns.probe:
        raise ParameterError("--auto-k needs --probe")
    encoder = load_encoder(ns.encoder)
    data = load_features(ns.data, ns.format)
    out = _out_dir(ns)
    inputs = {"encoder": ns.encoder, "data": ns.data}
    outputs = {}
    k = ns.k
    if k is None:
        report, sweep_path = _auto_k(ns, encoder, out)
        outputs["auto_k_sweep"] = sweep_path
        inputs["probe"] = ns.probe
        k = report.k_final
    _, trace = _run_cluster(encoder, data, ns, k)

    assignments_path = out / "assignments.csv"
    _write_pairs(assignments_path, "id,cluster",
                 zip(data.ids, trace.assignments.tolist()))
    trace_path = out / "trace.csv"
    with open(trace_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,phase,kl_loss,consistency_loss,omega\n")
        for rec in trace.records:
            fh.write(f"{rec.epoch},{rec.phase},{rec.kl_loss!r},"
                     f"{rec.consistency_loss!r},{rec.omega!r}\n")
    outputs.update({"assignments": assignments_path, "trace": trace_path})
    if ns.truth:
        truth_map = _read_id_value_file(ns.truth, "label")
        truth = _join_ids(truth_map, data.ids, ns.truth)
        report = evaluate_clustering(truth, trace.assignments)
        inputs["truth"] = ns.truth
        print(f"acc={report.acc!r} nmi={report.nmi!r}")
    _manifest(ns, argv, "cluster", inputs, outputs)
    print(f"wrote {assignments_path}")


def _join_ids(mapping, ids, path):
    missing = [i for i in ids if i not in mapping]
    extra = [i for i in mapping if i not in set(ids)]
    if missing or extra:
        raise DataError(
            f"{path}: id mismatch; missing={missing[:5]} extra={extra[:5]}"
        )
    return np.array([mapping[i] for i in ids], dtype=np.int64)


def cmd_estimate_k(ns, argv):
    encoder = load_encoder(ns.encoder)
    probe = load_labeled(ns.probe, ns.format)
    data = load_features(ns.data, ns.format)
    if ns.n_probe is not None:
        split = split_probes(probe, ns.n_probe, ns.anchor_ratio, ns.seed)
    else:
        split = _split_all_classes(probe.n_classes, ns.anchor_ratio, ns.seed)
    embedded_probe = LabeledSet(forward(encoder, probe.features), probe.labels)
    report = estimate_class_count(
        embedded_probe, forward(encoder, data), split,
        ns.k_max, ns.tau, ns.seed, threads=default_threads(),
    )
    out = _out_dir(ns)
    sweep_path = out / "sweep.csv"
    sweep_path.write_text(sweep_report_to_csv(report), encoding="utf-8")
    report_path = out / "estimate_report.txt"
    dropped = ";".join(f"{c}:{m}" for c, m in report.dropped_clusters)
    report_path.write_text(
        f"k_star_acc={report.k_star_acc}\n"
        f"k_star_cvi={report.k_star_cvi}\n"
        f"k_hat={report.k_hat}\n"
        f"k_final={report.k_final}\n"
        f"n_non_anchor={report.n_non_anchor}\n"
        f"dropped={dropped}\n",
        encoding="utf-8",
    )
    _manifest(ns, argv, "estimate-k",
              {"encoder": ns.encoder, "probe": ns.probe, "data": ns.data},
              {"sweep": sweep_path, "report": report_path})
    print(f"k_hat={report.k_hat} k_final={report.k_final}")


def cmd_eval(ns, argv):
    assignments = _read_id_value_file(ns.assignments, "cluster")
    truth = _read_id_value_file(ns.truth, "label")
    ids = sorted(assignments)
    truth_values = _join_ids(truth, ids, ns.truth)
    predicted = np.array([assignments[i] for i in ids], dtype=np.int64)
    report = evaluate_clustering(truth_values, predicted)
    k_err = count_error(len(set(truth_values.tolist())), len(set(predicted.tolist())))
    out = _out_dir(ns)
    if ns.format == "csv":
        text = ("metric,value\n"
                f"acc,{report.acc!r}\n"
                f"nmi,{report.nmi!r}\n"
                f"count_error,{k_err}\n"
                f"n_points,{report.n_points}\n")
        report_path = out / "eval_report.csv"
    else:
        text = (f"acc={report.acc!r}\n"
                f"nmi={report.nmi!r}\n"
                f"count_error={k_err}\n"
                f"n_points={report.n_points}\n")
        report_path = out / "eval_report.txt"
    report_path.write_text(text, encoding="utf-8")
    _manifest(ns, argv, "eval",
              {"assignments": ns.assignments, "truth": ns.truth},
              {"report": report_path})
    print(text, end="")


def cmd_sweep(ns, argv):
    values = [v for v in (tok.strip() for tok in ns.values.split(",")) if v]
    if not values:
        raise ParameterError("--values must list at least one integer")
    try:
        values = [int(v) for v in values]
    except ValueError as exc:
        raise ParameterError(f"--values must be integers: {exc}") from None
    if ns.sweep == "bottleneck" and ns.k is None:
        raise ParameterError("bottleneck sweep needs --k")
    if not ns.truth:
        raise ParameterError("sweep needs --truth to score each point")
    encoder = load_encoder(ns.encoder)
    data = load_features(ns.data, ns.format)
    truth_map = _read_id_value_file(ns.truth, "label")
    truth = _join_ids(truth_map, data.ids, ns.truth)

    def run_point(value):
        point = argparse.Namespace(**vars(ns))
        if ns.sweep == "bottleneck":
            point.bottleneck = value
            k = ns.k
        else:
            point.bottleneck = None
            k = value
        _, trace = _run_cluster(encoder, data, point, k)
        report = evaluate_clustering(truth, trace.assignments)
        return value, report.acc, report.nmi

    workers = default_threads()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_point, values))
    else:
        rows = [run_point(v) for v in values]
    out = _out_dir(ns)
    table_path = out / "sweep_results.csv"
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write("value,acc,nmi\n")
        for value, acc, score in rows:
            fh.write(f"{value},{acc!r},{score!r}\n")
    _manifest(ns, argv, "sweep",
              {"encoder": ns.encoder, "data": ns.data, "truth": ns.truth},
              {"table": table_path})
    for value, acc, score in rows:
        print(f"{ns.sweep}={value} acc={acc!r} nmi={score!r}")


def cmd_rerun(ns, argv):
    record = read_manifest(ns.manifest)
    if record.get("version") != __version__:
        print(f"warning: manifest written by version {record.get('version')}, "
              f"this is {__version__}", file=sys.stderr)
    code = main(record["argv"])
    if code != 0:
        raise NumericalError(f"replayed command exited with {code}")


def _add_common(sub, *, fmt=True):
    sub.add_argument("--out-dir", default=".", help="directory for outputs and the manifest")
    sub.add_argument("--seed", type=int, default=0)
    if fmt:
        sub.add_argument("--format", choices=("csv", "binary"), default="csv",
                         help="feature file format")


def _add_cluster_flags(sub):
    sub.add_argument("--encoder", required=True, help="encoder checkpoint")
    sub.add_argument("--data", required=True, help="unlabelled feature file")
    sub.add_argument("--variant", choices=("baseline", "pi", "te", "tep"),
                     default="baseline")
    sub.add_argument("--warmup", type=int, default=10, help="warm-up epochs")
    sub.add_argument("--epochs", type=int, default=90, help="main-loop epochs")
    sub.add_argument("--batch-size", type=int, default=64)
    sub.add_argument("--lr", type=float, default=0.05)
    sub.add_argument("--ema-momentum", type=float, default=0.6)
    sub.add_argument("--sigma", type=float, default=0.1,
                     help="perturbation scale for the pi variant")
    sub.add_argument("--ramp", type=int, default=None,
                     help="consistency ramp length in epochs")
    sub.add_argument("--truth", default=None, help="id,label file for reporting accuracy")


def build_parser() -> _Parser:
    parser = _Parser(prog="transfercluster", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="generate a synthetic mixture dataset")
    synth.add_argument("--labeled-classes", type=int, required=True)
    synth.add_argument("--unlabeled-classes", type=int, required=True)
    synth.add_argument("--per-class", type=int, required=True)
    synth.add_argument("--dim", type=int, required=True)
    synth.add_argument("--sep", type=float, required=True)
    _add_common(synth)
    synth.set_defaults(func=cmd_synth)

    pretrain = commands.add_parser("pretrain", help="pretrain the encoder on labelled data")
    pretrain.add_argument("--labeled", required=True)
    pretrain.add_argument("--hidden", type=int, default=64)
    pretrain.add_argument("--epochs", type=int, default=40)
    pretrain.add_argument("--batch-size", type=int, default=32)
    pretrain.add_argument("--lr", type=float, default=0.1)
    _add_common(pretrain)
    pretrain.set_defaults(func=cmd_pretrain)

    cluster = commands.add_parser("cluster", help="cluster unlabelled data")
    _add_cluster_flags(cluster)
    cluster.add_argument("--k", type=int, default=None, help="number of clusters")
    cluster.add_argument("--auto-k", action="store_true",
                         help="estimate k from probe classes first")
    cluster.add_argument("--probe", default=None, help="labelled probe file for --auto-k")
    cluster.add_argument("--n-probe", type=int, default=None,
                         help="hold out this many probe classes (default: all)")
    cluster.add_argument("--anchor-ratio", type=float, default=0.8)
    cluster.add_argument("--k-max", type=int, default=100)
    cluster.add_argument("--tau", type=float, default=0.01)
    cluster.add_argument("--bottleneck", type=int, default=None,
                         help="bottleneck dimension (default: k)")
    _add_common(cluster)
    cluster.set_defaults(func=cmd_cluster)

    estimate = commands.add_parser("estimate-k", help="estimate the number of categories")
    estimate.add_argument("--encoder", required=True)
    estimate.add_argument("--probe", required=True, help="labelled probe feature file")
    estimate.add_argument("--data", required=True, help="unlabelled feature file")
    estimate.add_argument("--n-probe", type=int, default=None,
                          help="hold out this many probe classes (default: all)")
    estimate.add_argument("--anchor-ratio", type=float, default=0.8)
    estimate.add_argument("--k-max", type=int, default=100)
    estimate.add_argument("--tau", type=float, default=0.01)
    _add_common(estimate)
    estimate.set_defaults(func=cmd_estimate_k)

    evaluate = commands.add_parser("eval", help="score assignments against ground truth")
    evaluate.add_argument("--assignments", required=True, help="id,cluster file")
    evaluate.add_argument("--truth", required=True, help="id,label file")
    evaluate.add_argument("--format", choices=("text", "csv"), default="text",
                          help="report format")
    _add_common(evaluate, fmt=False)
    evaluate.set_defaults(func=cmd_eval)

    sweep = commands.add_parser("sweep", help="rerun clustering across bottleneck sizes or k")
    _add_cluster_flags(sweep)
    sweep.add_argument("--sweep", choices=("bottleneck", "k"), required=True)
    sweep.add_argument("--values", required=True, help="comma-separated integers")
    sweep.add_argument("--k", type=int, default=None,
                       help="cluster count (bottleneck sweep only)")
    _add_common(sweep)
    sweep.set_defaults(func=cmd_sweep)

    rerun = commands.add_parser("rerun", help="replay a command from its manifest")
    rerun.add_argument("manifest")
    rerun.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        ns.func(ns, argv)
        return 0
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
