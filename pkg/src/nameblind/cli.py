"""Command-line entry points.

Subcommands: train, evaluate, sweep, cluster-report, weights-report.
Every run is driven by an ExperimentSpec that can come from flags, from a
JSON config file, or both (flags override the file). All randomness is
controlled by the explicit seeds in the spec, and outputs carry no
timestamps, so reruns with an identical spec overwrite identically.

Exit codes: 0 success, 1 validation error, 2 missing/unreadable input,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import kmeans, write_assignments, write_cluster_model
from .data import (
    NameDemographics,
    TabularSchema,
    assign_synthetic_names,
    infer_race_labels,
    load_name_probabilities,
    load_tabular,
    load_text,
    partition_names,
    read_csv_rows,
)
from .embeddings import batch_name_vectors, collect_name_tokens, load_embeddings
from .metrics import (
    GroupAttribute,
    GroupLabels,
    bias_report,
    summary_header,
    summary_values,
    write_bias_report_csv,
)
from .model import load_model, predict_batch, save_model
from .training import (
    NumericalError,
    TrainConfig,
    train,
    train_val_test_split,
    write_history_csv,
)


class UsageError(ValueError):
    """Bad command line or config contents."""


@dataclass
class ExperimentSpec:
    """Everything one run needs; the manifest echoes this verbatim."""

    data: str | None = None
    format: str = "tabular"
    schema: str | None = None
    embeddings: str | None = None
    names_demographics: list[str] = field(default_factory=list)
    variant: str = "none"
    lam: float = 0.0
    lambdas: list[float] = field(default_factory=list)
    k: int = 12
    # reports average over four seeded runs unless told otherwise
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3])
    epochs: int = 50
    batch_size: int = 256
    lr: float = 1e-3
    l2: float = 0.0
    scrub: bool = False
    min_count: int = 20
    top_fraction: float = 0.10
    race_attr: str = "race"
    gender_attr: str = "gender"
    out: str | None = None

    def __post_init__(self):
        if not self.seeds:
            raise UsageError("at least one seed is required")
        if any(l < 0 for l in self.lambdas) or self.lam < 0:
            raise UsageError("lambda values must be nonnegative")
        if self.format not in ("tabular", "text"):
            raise UsageError(f"unknown data format {self.format!r}")


def _require_file(path, what: str) -> str:
    if path is None:
        raise UsageError(f"{what} is required for this command")
    if not Path(path).is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _spec_from_args(args) -> ExperimentSpec:
    values: dict = {}
    if getattr(args, "config", None):
        config_path = _require_file(args.config, "config file")
        with open(config_path, encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(ExperimentSpec.__dataclass_fields__)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        values.update(loaded)
    for name in ExperimentSpec.__dataclass_fields__:
        arg = getattr(args, name, None)
        if arg is not None:
            values[name] = arg
    return ExperimentSpec(**values)


def _train_config(spec: ExperimentSpec, seed: int, lam: float) -> TrainConfig:
    return TrainConfig(
        lam=lam,
        variant=spec.variant,
        k=spec.k,
        learning_rate=spec.lr,
        batch_size=spec.batch_size,
        epochs=spec.epochs,
        seed=seed,
        l2_coeff=spec.l2,
    )


def _load_demographics(spec: ExperimentSpec) -> NameDemographics | None:
    paths = spec.names_demographics
    if not paths:
        return None
    if len(paths) not in (2, 3):
        raise UsageError(
            "--names-demographics takes 2 or 3 files: "
            "first-name-white, first-name-male[, last-name-white]"
        )
    for p in paths:
        _require_file(p, "name-demographics table")
    return NameDemographics(
        first_white=load_name_probabilities(paths[0]),
        first_male=load_name_probabilities(paths[1]),
        last_white=load_name_probabilities(paths[2]) if len(paths) == 3 else {},
    )


class _Pipeline:
    """Shared per-command context: schema, demographics, embedding table."""

    def __init__(self, spec: ExperimentSpec, need_embeddings: bool):
        self.spec = spec
        _require_file(spec.data, "data file")
        self.schema = None
        if spec.format == "tabular":
            schema_path = _require_file(spec.schema, "schema file")
            self.schema = TabularSchema.load(schema_path)
        self.demographics = _load_demographics(spec)
        self.partition = (
            partition_names(self.demographics) if self.demographics else None
        )
        self.n_rows = self._count_rows()
        self.table = None
        if need_embeddings or spec.embeddings:
            path = _require_file(spec.embeddings, "embeddings file")
            self.table = load_embeddings(path, allowlist=self._allowlist())

    def _count_rows(self) -> int:
        if self.spec.format == "tabular":
            _, rows = read_csv_rows(self.spec.data)
            return len(rows)
        with open(self.spec.data, encoding="utf-8") as fh:
            return sum(1 for line in fh if line.strip())

    def _allowlist(self) -> set[str]:
        tokens: set[str] = set()
        if self.partition is not None:
            tokens |= {t for t in self.partition.all_names()}
        if self.spec.format == "tabular":
            header, rows = read_csv_rows(self.spec.data)
            for col, cspec in self.schema.columns.items():
                if cspec.role in ("first_name", "last_name"):
                    idx = header.index(col)
                    tokens |= collect_name_tokens([r[idx] for r in rows], [])
        else:
            with open(self.spec.data, encoding="utf-8") as fh:
                for line in fh:
                    fields = line.rstrip("\n").split("\t")
                    if len(fields) >= 3:
                        tokens |= collect_name_tokens(fields[1:2], fields[2:3])
        return tokens

    def dataset_for_seed(self, seed: int):
        """Seeded split, preprocessing, and name/group assignment."""
        split = train_val_test_split(self.n_rows, seed)
        if self.spec.format == "tabular":
            dataset = load_tabular(self.spec.data, self.schema, fit_indices=split[0])
            if self.partition is not None:
                assign_synthetic_names(
                    dataset, self.partition, seed,
                    race_attr=self.spec.race_attr,
                    gender_attr=self.spec.gender_attr,
                )
        else:
            dataset = load_text(
                self.spec.data,
                min_count=self.spec.min_count,
                top_fraction=self.spec.top_fraction,
                scrub_names=self.spec.scrub,
                fit_indices=split[0],
            )
            if self.demographics is not None:
                race = infer_race_labels(
                    dataset.first_names, dataset.last_names,
                    self.demographics, seed, attr_name=self.spec.race_attr,
                )
                dataset.eval_groups = GroupLabels([race])
        return dataset, split


def _write_manifest(spec: ExperimentSpec, command: str, out: Path) -> None:
    manifest = {
        "command": command,
        "spec": asdict(spec),
        "toolkit_version": __version__,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(spec: ExperimentSpec) -> Path:
    if spec.out is None:
        raise UsageError("--out is required")
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _mean_or_none(values):
    defined = [v for v in values if v is not None]
    if not defined:
        return None
    return float(np.mean(defined))


def cmd_train(spec: ExperimentSpec) -> int:
    out = _out_dir(spec)
    pipeline = _Pipeline(spec, need_embeddings=spec.variant != "none" and spec.lam > 0)
    header = None
    rows = []
    for seed in spec.seeds:
        dataset, split = pipeline.dataset_for_seed(seed)
        result = train(dataset, pipeline.table, _train_config(spec, seed, spec.lam),
                       split=split)
        save_model(result.params, dataset.feature_names, dataset.class_names,
                   out / f"model_seed{seed}.txt")
        write_history_csv(result.history, out / f"history_seed{seed}.csv")
        test_idx = split[2]
        preds = predict_batch(result.params, dataset.features[test_idx])
        if dataset.eval_groups is None:
            raise UsageError(
                "training data has no evaluation group labels; declare a "
                "group= column or pass --names-demographics"
            )
        groups = GroupLabels(
            [_slice_attr(a, test_idx) for a in dataset.eval_groups.attributes]
        )
        report = bias_report(
            preds, dataset.labels[test_idx], groups,
            num_classes=len(dataset.class_names),
            class_names=dataset.class_names,
        )
        write_bias_report_csv(report, out / f"bias_report_seed{seed}.csv")
        if header is None:
            header = summary_header(report)
        rows.append((seed, summary_values(report)))
    with open(out / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "lambda", "seed"] + header)
        for seed, values in rows:
            writer.writerow(
                [spec.variant, repr(spec.lam), seed]
                + [_csv_cell(v) for v in values]
            )
        means = [_mean_or_none(col) for col in zip(*(v for _, v in rows))]
        writer.writerow(
            [spec.variant, repr(spec.lam), "mean"] + [_csv_cell(v) for v in means]
        )
    _write_manifest(spec, "train", out)
    for name in sorted(p.name for p in out.iterdir()):
        print(f"wrote {out / name}")
    return 0


def _slice_attr(attr, indices):
    return GroupAttribute(
        name=attr.name,
        positive_label=attr.positive_label,
        negative_label=attr.negative_label,
        values=attr.values[indices],
    )


def cmd_evaluate(spec: ExperimentSpec, model_path: str, subset: str) -> int:
    out = _out_dir(spec)
    model_path = _require_file(model_path, "model file")
    params, feature_names, class_names = load_model(model_path)
    pipeline = _Pipeline(spec, need_embeddings=False)
    seed = spec.seeds[0]
    dataset, split = pipeline.dataset_for_seed(seed)
    if dataset.feature_names != feature_names:
        raise UsageError(
            "dataset features do not match the model's feature list; "
            "evaluate with the same data, schema and seed used in training"
        )
    if dataset.class_names != class_names:
        raise UsageError("dataset classes do not match the model's class list")
    if subset == "all":
        indices = np.arange(len(dataset))
    else:
        indices = dict(zip(("train", "val", "test"), split))[subset]
    if dataset.eval_groups is None:
        raise UsageError("data has no evaluation group labels")
    preds = predict_batch(params, dataset.features[indices])
    groups = GroupLabels(
        [_slice_attr(a, indices) for a in dataset.eval_groups.attributes]
    )
    report = bias_report(
        preds, dataset.labels[indices], groups,
        num_classes=len(class_names), class_names=class_names,
    )
    write_bias_report_csv(report, out / "evaluation.csv")
    _write_manifest(spec, "evaluate", out)
    print(f"wrote {out / 'evaluation.csv'}")
    return 0


def cmd_sweep(spec: ExperimentSpec) -> int:
    if len(spec.lambdas) < 2:
        raise UsageError("sweep needs at least two --lambdas values")
    out = _out_dir(spec)
    pipeline = _Pipeline(spec, need_embeddings=spec.variant != "none")
    header = None
    results: dict[float, list[list]] = {lam: [] for lam in spec.lambdas}
    for seed in spec.seeds:
        dataset, split = pipeline.dataset_for_seed(seed)
        if dataset.eval_groups is None:
            raise UsageError("sweep data has no evaluation group labels")
        test_idx = split[2]
        groups = GroupLabels(
            [_slice_attr(a, test_idx) for a in dataset.eval_groups.attributes]
        )
        for lam in spec.lambdas:
            result = train(dataset, pipeline.table,
                           _train_config(spec, seed, lam), split=split)
            preds = predict_batch(result.params, dataset.features[test_idx])
            report = bias_report(
                preds, dataset.labels[test_idx], groups,
                num_classes=len(dataset.class_names),
                class_names=dataset.class_names,
            )
            if header is None:
                header = summary_header(report)
            results[lam].append(summary_values(report))
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "seed"] + header)
        for lam in spec.lambdas:
            for seed, values in zip(spec.seeds, results[lam]):
                writer.writerow([repr(lam), seed] + [_csv_cell(v) for v in values])
        for lam in spec.lambdas:
            means = [_mean_or_none(col) for col in zip(*results[lam])]
            writer.writerow([repr(lam), "mean"] + [_csv_cell(v) for v in means])
    _write_manifest(spec, "sweep", out)
    print(f"wrote {out / 'sweep.csv'}")
    return 0


def cmd_cluster_report(spec: ExperimentSpec) -> int:
    out = _out_dir(spec)
    pipeline = _Pipeline(spec, need_embeddings=True)
    seed = spec.seeds[0]
    dataset, _ = pipeline.dataset_for_seed(seed)
    if dataset.eval_groups is None or not len(dataset.eval_groups):
        raise UsageError("cluster-report needs evaluation group labels")
    vectors, _, include = batch_name_vectors(
        pipeline.table, dataset.first_names, dataset.last_names
    )
    covered_idx = np.flatnonzero(include)
    model = kmeans(vectors[covered_idx], spec.k, seed=seed)
    write_cluster_model(model, out / "clusters.txt")
    write_assignments(covered_idx, model.assignments, out / "cluster_assignments.txt")
    with open(out / "cluster_report.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster", "attribute", "value", "count"])
        clusters = [
            (str(j), covered_idx[model.assignments == j]) for j in range(spec.k)
        ]
        unassigned = np.flatnonzero(~include)
        if len(unassigned):
            clusters.append(("unassigned", unassigned))
        for cluster_name, members in clusters:
            for attr in dataset.eval_groups.attributes:
                vals = attr.values[members]
                for value_name, code in (
                    (attr.positive_label, 1),
                    (attr.negative_label, 0),
                    ("missing", -1),
                ):
                    count = int(np.count_nonzero(vals == code))
                    if code == -1 and count == 0:
                        continue
                    writer.writerow([cluster_name, attr.name, value_name, count])
    _write_manifest(spec, "cluster-report", out)
    print(f"wrote {out / 'cluster_report.csv'}")
    return 0


def cmd_weights_report(model_path: str, class_name: str, feature_filter,
                       out_dir: str) -> int:
    model_path = _require_file(model_path, "model file")
    params, feature_names, class_names = load_model(model_path)
    if class_name not in class_names:
        raise UsageError(
            f"unknown class {class_name!r}; model classes: {class_names}"
        )
    row = params.W[class_names.index(class_name)]
    pairs = list(zip(feature_names, row))
    if feature_filter:
        known = set(feature_names)
        for feature in feature_filter:
            if feature not in known:
                raise UsageError(f"unknown feature {feature!r}")
        wanted = set(feature_filter)
        pairs = [(f, w) for f, w in pairs if f in wanted]
    pairs.sort(key=lambda fw: -fw[1])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    safe = re.sub(r"[^A-Za-z0-9_.-]", "_", class_name)
    path = out / f"weights_{safe}.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "weight"])
        for feature, weight in pairs:
            writer.writerow([feature, repr(float(weight))])
    print(f"wrote {path}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route usage problems to exit code 1
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nameblind", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_io(p):
        p.add_argument("--config", help="JSON spec file; flags override it")
        p.add_argument("--data", help="dataset file (CSV or tab-separated text)")
        p.add_argument("--format", choices=("tabular", "text"))
        p.add_argument("--schema", help="schema file for tabular data")
        p.add_argument("--embeddings", help="word-vector text file")
        p.add_argument(
            "--names-demographics", dest="names_demographics", nargs="+",
            help="first-name-white, first-name-male[, last-name-white] tables",
        )
        p.add_argument("--race-attr", dest="race_attr")
        p.add_argument("--gender-attr", dest="gender_attr")
        p.add_argument("--min-count", dest="min_count", type=int)
        p.add_argument("--top-fraction", dest="top_fraction", type=float)
        p.add_argument("--scrub", action=argparse.BooleanOptionalAction)
        p.add_argument("--out", help="output directory")

    def add_train(p):
        p.add_argument("--variant", choices=("none", "clucl", "cocl"))
        p.add_argument("--lambda", dest="lam", type=float,
                       help="penalty strength")
        p.add_argument("--k", type=int, help="clusters for the cluster penalty")
        p.add_argument("--seeds", nargs="+", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--l2", type=float)

    p_train = sub.add_parser("train", help="train, save model, report bias")
    add_io(p_train)
    add_train(p_train)

    p_eval = sub.add_parser("evaluate", help="bias report for a saved model")
    add_io(p_eval)
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--seeds", nargs="+", type=int)
    p_eval.add_argument("--split", choices=("all", "train", "val", "test"),
                        default="all")

    p_sweep = sub.add_parser("sweep", help="train across a lambda grid")
    add_io(p_sweep)
    add_train(p_sweep)
    p_sweep.add_argument("--lambdas", nargs="+", type=float)

    p_cluster = sub.add_parser(
        "cluster-report", help="cluster name vectors, count groups per cluster"
    )
    add_io(p_cluster)
    p_cluster.add_argument("--k", type=int)
    p_cluster.add_argument("--seeds", nargs="+", type=int)

    p_weights = sub.add_parser(
        "weights-report", help="ranked weight table for one class"
    )
    p_weights.add_argument("--model", required=True)
    p_weights.add_argument("--class", dest="class_name", required=True)
    p_weights.add_argument("--features", nargs="+",
                           help="restrict the report to these features")
    p_weights.add_argument("--out", required=True)
    return parser


def run(args) -> int:
    if args.command == "weights-report":
        return cmd_weights_report(args.model, args.class_name, args.features,
                                  args.out)
    spec = _spec_from_args(args)
    if args.command == "train":
        return cmd_train(spec)
    if args.command == "evaluate":
        return cmd_evaluate(spec, args.model, args.split)
    if args.command == "sweep":
        return cmd_sweep(spec)
    if args.command == "cluster-report":
        return cmd_cluster_report(spec)
    raise UsageError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return run(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
