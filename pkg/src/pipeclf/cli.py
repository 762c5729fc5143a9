"""Command-line frontend: train -> compile -> place -> report -> run -> check -> hybrid.

Every command is deterministic given its inputs and seeds, writes output files
atomically (temp + rename), and exits with a code identifying the error class:

    0  success
    2  usage, config, or file-format problem
    3  dataset / model domain problem
    4  compile-time problem (code widths, quantization overflow, binning)
    5  placement does not fit the resource profile
    6  shape mismatch (entries-only update impossible; recompile)
    7  program execution problem

The default resource profile can be pointed at a JSON file via the
``PIPECLF_PROFILE`` environment variable; ``--profile`` overrides it.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import time
from fractions import Fraction
from pathlib import Path

from . import emulator, hybrid, mapper, pipeline, trainers
from .errors import (
    ArgumentError,
    BinCountError,
    BinningRequired,
    CodeWidthError,
    DomainError,
    DomainTooLarge,
    EmptyDataset,
    FeatureError,
    FormatError,
    InsufficientClassRows,
    KTooLarge,
    LabelError,
    PipeclfError,
    PlacementError,
    ProgramError,
    RangeError,
    SchemaError,
    ShapeMismatch,
    TimestampRegression,
)
from .model_ir import Model, emit_model_file, parse_feature_specs, parse_model_file
from .program import PipelineProgram, entries_json, load_program, program_json

PROFILE_ENV = "PIPECLF_PROFILE"

_EXIT_CODES: list[tuple[type, int]] = [
    (SchemaError, 2),
    (FormatError, 3),
    (TimestampRegression, 3),
    (DomainError, 3),
    (FeatureError, 3),
    (EmptyDataset, 3),
    (InsufficientClassRows, 3),
    (KTooLarge, 3),
    (LabelError, 3),
    (CodeWidthError, 4),
    (BinningRequired, 4),
    (BinCountError, 4),
    (RangeError, 4),
    (ArgumentError, 4),
    (OverflowError, 4),
    (PlacementError, 5),
    (ShapeMismatch, 6),
    (ProgramError, 7),
    (DomainTooLarge, 7),
]


def _exit_code_for(exc: BaseException) -> int:
    for etype, code in _EXIT_CODES:
        if isinstance(exc, etype):
            return code
    return 1


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise SchemaError(f"config file {path!r} not found") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"config file {path!r}: {exc}") from exc


def _opt(args, config: dict, name: str, default=None):
    value = getattr(args, name, None)
    if value is not None:
        return value
    return config.get(name, default)


def _read(path: str, what: str) -> str:
    try:
        return Path(path).read_text()
    except FileNotFoundError:
        raise SchemaError(f"{what} file {path!r} not found") from None


def _load_model(path: str) -> Model:
    return parse_model_file(_read(path, "model"))


def _load_profile(args, config) -> pipeline.ResourceProfile:
    path = _opt(args, config, "profile") or os.environ.get(PROFILE_ENV)
    if not path:
        return pipeline.GENERIC_12
    return pipeline.profile_from_json(_read(path, "profile"))


def _load_program_dir(path: str) -> PipelineProgram:
    base = Path(path)
    return load_program(
        _read(str(base / "program.json"), "program"),
        _read(str(base / "entries.json"), "entries"),
    )


def _load_features(path: str):
    doc = json.loads(_read(path, "features"))
    if isinstance(doc, dict):
        doc = doc.get("features", [])
    return parse_feature_specs(doc)


def _quant_from(args, config) -> mapper.QuantConfig:
    return mapper.QuantConfig(
        frac_bits=int(_opt(args, config, "q", 16)),
        action_width=int(_opt(args, config, "action_width", 32)),
        bins=(int(_opt(args, config, "bins")) if _opt(args, config, "bins") is not None else None),
        classification_match=(
            "exact" if _opt(args, config, "exact_classification", False) else "ternary"
        ),
        emit_confidence=not _opt(args, config, "no_confidence", False),
    )


def _compile_model(model: Model, strategy: str, q: mapper.QuantConfig, shape=None) -> PipelineProgram:
    from .model_ir import EnsembleModel, KMeansModel, NBModel, SVMModel, TreeModel

    if isinstance(model, TreeModel):
        return mapper.compile_tree(model, q, shape=shape)
    if isinstance(model, EnsembleModel):
        return mapper.compile_ensemble(model, q, shape=shape)
    if isinstance(model, SVMModel):
        return mapper.compile_svm(model, "per_hyperplane" if strategy == "per_hyperplane" else "per_feature", q)
    if isinstance(model, NBModel):
        return mapper.compile_nb(model, "per_class" if strategy == "per_class" else "per_feature", q)
    if isinstance(model, KMeansModel):
        return mapper.compile_kmeans(model, "per_class" if strategy == "per_class" else "per_feature", q)
    raise DomainError(f"cannot compile model of type {type(model).__name__}")


def _shape_from(args, config, model) -> mapper.CompiledShape | None:
    depth = _opt(args, config, "reserve_depth")
    leaves = _opt(args, config, "reserve_leaves")
    if depth is None:
        return None
    from .model_ir import EnsembleModel

    n_trees = len(model.trees) if isinstance(model, EnsembleModel) else 1
    return mapper.shape_for_params(
        model.features,
        max_depth=int(depth),
        max_leaf_nodes=int(leaves) if leaves is not None else (1 << int(depth)),
        n_trees=n_trees,
    )


def _diff_to_json(diff: mapper.EntryDiff) -> str:
    doc = {
        "schema": 1,
        "shape_hash": diff.shape_hash,
        "change_count": diff.change_count(),
        "tables": {},
    }
    for name, d in diff.tables:
        if d.empty:
            continue
        doc["tables"][name] = {
            "added": [{"key": _jsonable_key(e.key), "action": list(e.action)} for e in d.entries_added],
            "removed": [_jsonable_key(k) for k in d.entries_removed],
            "modified": [
                {"key": _jsonable_key(e.key), "action": list(e.action)} for e in d.entries_modified
            ],
            "default_action": list(d.default_action) if d.default_action is not None else None,
        }
    if diff.constants is not None:
        doc["combine_constants"] = diff.constants
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _jsonable_key(key: tuple) -> list:
    return [list(p) if isinstance(p, tuple) else p for p in key]


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_train(args) -> int:
    config = _load_config(args.config)
    features = _load_features(_opt(args, config, "features"))
    data = trainers.load_dataset(
        _read(_opt(args, config, "data"), "dataset"),
        features,
        n_classes=(int(_opt(args, config, "n_classes")) if _opt(args, config, "n_classes") else None),
    )
    model_type = _opt(args, config, "model_type", "tree")
    seed = int(_opt(args, config, "seed", 0))
    if model_type in ("tree", "forest"):
        params = trainers.TrainParams(
            max_depth=int(_opt(args, config, "max_depth", 8)),
            max_leaf_nodes=int(_opt(args, config, "max_leaf_nodes", 256)),
            n_trees=int(_opt(args, config, "n_trees", 1 if model_type == "tree" else 10)),
            bootstrap_fraction=Fraction(str(_opt(args, config, "bootstrap_fraction", "1"))),
            rng_seed=seed,
        )
        model = (
            trainers.train_decision_tree(data, params)
            if model_type == "tree"
            else trainers.train_random_forest(data, params)
        )
    elif model_type == "nb":
        model = trainers.train_gaussian_nb(data)
    elif model_type == "kmeans":
        model = trainers.train_kmeans(data, k=int(_opt(args, config, "k", 2)), seed=seed)
    else:
        raise SchemaError(f"cannot train model type {model_type!r} (svm/xgboost are ingested)")
    atomic_write(Path(args.out), emit_model_file(model))
    print(f"wrote {args.out}")
    return 0


def cmd_compile(args) -> int:
    config = _load_config(args.config)
    model = _load_model(_opt(args, config, "model"))
    q = _quant_from(args, config)
    strategy = _opt(args, config, "strategy", "per_feature")
    program = _compile_model(model, strategy, q, shape=_shape_from(args, config, model))
    profile = _load_profile(args, config)
    staged = pipeline.place_stages(program, profile)
    report = pipeline.resource_report(staged, profile)

    if args.diff:
        old = _load_program_dir(args.diff)
        diff = mapper.diff_entries(old, program)
        atomic_write(Path(args.out) / "diff.json", _diff_to_json(diff))
        print(f"shape hash unchanged; wrote {args.out}/diff.json ({diff.change_count()} changes)")
        return 0

    out = Path(args.out)
    atomic_write(out / "program.json", program_json(program))
    atomic_write(out / "entries.json", entries_json(program))
    atomic_write(out / "report.json", json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    atomic_write(out / "report.txt", report.to_text())
    print(f"wrote program.json, entries.json, report.json in {args.out}")
    print(f"shape hash: {program.shape_hash}")
    return 0


def cmd_update(args) -> int:
    config = _load_config(args.config)
    old = _load_program_dir(args.program)
    model = _load_model(_opt(args, config, "model"))
    q = _quant_from(args, config)
    strategy = _opt(args, config, "strategy", "per_feature")
    new = _compile_model(model, strategy, q, shape=_shape_from(args, config, model))
    started = time.perf_counter()
    try:
        diff = mapper.diff_entries(old, new)
    except ShapeMismatch:
        print(
            "shape mismatch: the retrained model changes the table schema; "
            "run `compile` to redeploy",
            file=sys.stderr,
        )
        raise
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    atomic_write(Path(args.out), _diff_to_json(diff))
    if args.apply:
        applied = mapper.apply_entry_diff(old, diff)
        atomic_write(Path(args.program) / "entries.json", entries_json(applied))
    print(f"wrote {args.out} ({diff.change_count()} changes)")
    print(f"diff computed in {elapsed_ms:.2f} ms", file=sys.stderr)
    return 0


def cmd_place(args) -> int:
    config = _load_config(args.config)
    program = _load_program_dir(args.program)
    staged = pipeline.place_stages(program, _load_profile(args, config))
    doc = {
        "stages_used": staged.stages_used,
        "dependency_depth": staged.dependency_depth,
        "combine_stage_adds": list(staged.combine_stage_adds),
        "stage_of": dict(staged.stage_of),
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        atomic_write(Path(args.out), text)
    else:
        print(text, end="")
    return 0


def cmd_report(args) -> int:
    config = _load_config(args.config)
    program = _load_program_dir(args.program)
    profile = _load_profile(args, config)
    staged = pipeline.place_stages(program, profile)
    report = pipeline.resource_report(staged, profile)
    if args.out:
        atomic_write(Path(args.out), json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    print(report.to_text(), end="")
    return 0


def _read_vectors(path: str, program: PipelineProgram) -> list[tuple[int, ...]]:
    text = _read(path, "input")
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        return []
    names = [f.name for f in program.feature_specs]
    has_label = header == names + ["label"]
    if not has_label and header != names:
        raise SchemaError(f"input header {header} does not match features {names}")
    out = []
    for line_no, line in enumerate(reader, start=2):
        if not line:
            continue
        try:
            out.append(tuple(int(v) for v in line[: len(names)]))
        except ValueError as exc:
            raise SchemaError(f"input line {line_no}: {exc}") from exc
    return out


def cmd_run(args) -> int:
    program = _load_program_dir(args.program)
    config = _load_config(args.config)
    staged = pipeline.place_stages(program, _load_profile(args, config))
    vectors = _read_vectors(args.input, program)
    predictions = emulator.run_batch(staged, vectors)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["class", "confidence"])
    for p in predictions:
        writer.writerow([p.class_id, f"{float(p.confidence):.6f}"])
    if args.out:
        atomic_write(Path(args.out), buf.getvalue())
    else:
        print(buf.getvalue(), end="")
    return 0


def cmd_check(args) -> int:
    config = _load_config(args.config)
    model = _load_model(_opt(args, config, "model"))
    program = _load_program_dir(args.program)
    staged = pipeline.place_stages(program, _load_profile(args, config))
    report = emulator.check_equivalence(
        model,
        staged,
        mode=args.mode,
        n=int(_opt(args, config, "n", 100_000)),
        seed=int(_opt(args, config, "seed", 1)),
    )
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        atomic_write(Path(args.out), text)
    else:
        print(text, end="")
    return 0 if report.ok else 3


def cmd_hybrid(args) -> int:
    config = _load_config(args.config)
    program = _load_program_dir(args.program)
    staged = pipeline.place_stages(program, _load_profile(args, config))
    large = _load_model(_opt(args, config, "large"))
    data = trainers.load_dataset(
        _read(_opt(args, config, "data"), "dataset"),
        program.feature_specs,
        n_classes=large.n_classes,
    )
    thresholds = sorted(
        Fraction(t) for t in str(_opt(args, config, "thresholds", "0,0.5,0.7,0.9,1")).split(",")
    )
    accept = _opt(args, config, "accept_classes")
    accept_set = (
        frozenset(int(c) for c in str(accept).split(",")) if accept is not None else None
    )
    reports, curve = hybrid.sweep_thresholds(staged, large, data, thresholds, accept_set)
    out = Path(args.out)
    atomic_write(
        out / "hybrid.json",
        json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n",
    )
    buf = io.StringIO()
    writer = csv.DictWriter(
        buf,
        fieldnames=["theta", "offload", "error_switch", "error_hybrid", "error_large_on_forwarded"],
    )
    writer.writeheader()
    for row in curve:
        writer.writerow(row)
    atomic_write(out / "curve.csv", buf.getvalue())
    written = "hybrid.json and curve.csv"
    small_path = _opt(args, config, "small")
    if small_path:
        calibration = hybrid.confidence_calibration(staged, _load_model(small_path), data)
        cbuf = io.StringIO()
        cwriter = csv.DictWriter(cbuf, fieldnames=list(calibration[0]) if calibration else [])
        cwriter.writeheader()
        for row in calibration:
            cwriter.writerow(row)
        atomic_write(out / "calibration.csv", cbuf.getvalue())
        written += " and calibration.csv"
    print(f"wrote {written} in {args.out}")
    return 0


def cmd_bench(args) -> int:
    config = _load_config(args.config)
    program = _load_program_dir(args.program)
    profile = _load_profile(args, config)
    staged = pipeline.place_stages(program, profile)
    report = pipeline.resource_report(staged, profile)
    vectors = _read_vectors(args.input, program) if args.input else []
    repeat = int(_opt(args, config, "repeat", 1))
    started = time.perf_counter()
    n = 0
    for _ in range(repeat):
        emulator.run_batch(staged, vectors)
        n += len(vectors)
    elapsed = time.perf_counter() - started
    doc = {
        "records": n,
        "records_per_sec": (n / elapsed) if elapsed > 0 and n else 0.0,
        "stages_used": report.stages_used,
        "sram_entries": report.sram_entries,
        "tcam_entries": report.tcam_entries,
        "sram_bits": report.sram_bits,
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pipeclf",
        description="Compile classifiers to match-action pipeline programs and emulate them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config supplying defaults for flags")
        p.add_argument("--profile", help="resource profile JSON path")
        p.add_argument("--seed", type=int, help="deterministic seed")

    p = sub.add_parser("train", help="train a reference model and write a model file")
    common(p)
    p.add_argument("--model-type", dest="model_type", choices=["tree", "forest", "nb", "kmeans"])
    p.add_argument("--data", help="dataset CSV")
    p.add_argument("--features", help="feature-spec JSON")
    p.add_argument("--n-classes", dest="n_classes", type=int)
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p.add_argument("--max-leaf-nodes", dest="max_leaf_nodes", type=int)
    p.add_argument("--n-trees", dest="n_trees", type=int)
    p.add_argument("--bootstrap-fraction", dest="bootstrap_fraction")
    p.add_argument("--k", type=int, help="cluster count for kmeans")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("compile", help="compile a model file into program + entries + report")
    common(p)
    p.add_argument("--model")
    p.add_argument("--q", type=int, help="fraction bits (default 16)")
    p.add_argument("--action-width", dest="action_width", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--strategy", choices=["per_feature", "per_hyperplane", "per_class"])
    p.add_argument("--exact-classification", dest="exact_classification", action="store_true", default=None)
    p.add_argument("--no-confidence", dest="no_confidence", action="store_true", default=None)
    p.add_argument("--reserve-depth", dest="reserve_depth", type=int,
                   help="freeze table shape for a max tree depth (entries-only retrains)")
    p.add_argument("--reserve-leaves", dest="reserve_leaves", type=int)
    p.add_argument("--diff", help="existing program dir; emit an entries diff instead of artifacts")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_compile)

    p = sub.add_parser("update", help="entries-only update from a retrained model")
    common(p)
    p.add_argument("--program", required=True, help="directory with program.json + entries.json")
    p.add_argument("--model")
    p.add_argument("--q", type=int)
    p.add_argument("--action-width", dest="action_width", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--strategy", choices=["per_feature", "per_hyperplane", "per_class"])
    p.add_argument("--exact-classification", dest="exact_classification", action="store_true", default=None)
    p.add_argument("--no-confidence", dest="no_confidence", action="store_true", default=None)
    p.add_argument("--reserve-depth", dest="reserve_depth", type=int)
    p.add_argument("--reserve-leaves", dest="reserve_leaves", type=int)
    p.add_argument("--apply", action="store_true", help="also rewrite entries.json in place")
    p.add_argument("--out", required=True, help="diff JSON path")
    p.set_defaults(fn=cmd_update)

    p = sub.add_parser("place", help="stage placement for a compiled program")
    common(p)
    p.add_argument("--program", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_place)

    p = sub.add_parser("report", help="resource report for a compiled program")
    common(p)
    p.add_argument("--program", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("run", help="classify a CSV of feature vectors")
    common(p)
    p.add_argument("--program", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("check", help="equivalence check against the direct model oracle")
    common(p)
    p.add_argument("--model")
    p.add_argument("--program", required=True)
    p.add_argument("--mode", choices=["exhaustive", "sample"], default="exhaustive")
    p.add_argument("--n", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("hybrid", help="hybrid small/large evaluation and threshold sweep")
    common(p)
    p.add_argument("--program", required=True)
    p.add_argument("--large", help="large model file for forwarded traffic")
    p.add_argument("--small", help="small model file; adds a confidence calibration log")
    p.add_argument("--data", help="labeled dataset CSV")
    p.add_argument("--thresholds", help="comma-separated confidence thresholds")
    p.add_argument("--accept-classes", dest="accept_classes",
                   help="comma-separated classes the switch may accept")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_hybrid)

    p = sub.add_parser("bench", help="emulator throughput and memory totals")
    common(p)
    p.add_argument("--program", required=True)
    p.add_argument("--input")
    p.add_argument("--repeat", type=int)
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except PipeclfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code_for(exc)
    except OverflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
