"""Command-line pipeline driver.

Subcommands: ingest, train, vectorize, select, predict, experiment,
synth, report. All behaviour is driven by the key-value config file
(every key overridable via --set); outputs land in the configured output
directory and inputs are never mutated. Diagnostics go to stderr as
`venom: key=value` lines; exit codes are 0 ok, 2 configuration, 3 data,
4 training divergence, 5 internal.
"""

import argparse
import dataclasses
import shlex
import sys
from pathlib import Path

from . import lake as lake_mod
from . import evalbench, vectorizer
from .config import RunConfig, load_config
from .errors import ConfigError, DataError, SchemaError, VenomError
from .modelling import execute_operator, model_and_predict
from .seeding import derive_seed
from .selection import write_selection
from .timing import make_clock


def diag(**fields) -> None:
    parts = []
    for key, value in fields.items():
        text = str(value)
        if any(ch.isspace() for ch in text) or text == "":
            text = shlex.quote(text)
        parts.append(f"{key}={text}")
    print("venom: " + " ".join(parts), file=sys.stderr)


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{what} not found: {path}")
    return path


def _ingest_options(config: RunConfig) -> lake_mod.IngestOptions:
    return lake_mod.IngestOptions(
        header=config["lake.header"],
        delimiter=config["lake.delimiter"],
        target_column=config["lake.target_column"] or None,
    )


def _load_artifacts(config: RunConfig, need_store: bool = True):
    out = config.out_dir
    registry = lake_mod.LakeRegistry.load(_require(out, "output directory"))
    model = vectorizer.load_model(_require(out / "model.vnm", "model checkpoint"))
    store = None
    if need_store:
        store = lake_mod.EmbeddingStore.load(_require(out / "embeddings.tsv", "embedding store"))
        store.ensure_version(model.version)
    return registry, model, store


def _read_lake_t_vec(out: Path) -> float:
    timing_file = out / "vectorize_timing.txt"
    if not timing_file.exists():
        return 0.0
    for line in timing_file.read_text(encoding="utf-8").splitlines():
        key, _, value = line.partition("=")
        if key.strip() == "t_vec":
            return float(value.strip())
    return 0.0


def cmd_ingest(config: RunConfig, args) -> int:
    """Scan the input directory, build the lake registry, report per-file status."""
    input_dir = Path(config["lake.input_dir"] or "")
    if not config["lake.input_dir"]:
        raise ConfigError("lake.input_dir must be set")
    _require(input_dir, "input directory")
    options = _ingest_options(config)
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)

    files = sorted(str(p) for p in input_dir.glob("*.csv"))
    failures = []
    good = []
    reference = None
    for path in files:
        try:
            names, _ = lake_mod.scan_csv(path, options)
            if reference is None:
                reference = names
            elif len(names) != len(reference) or (options.header and names != reference):
                raise SchemaError(f"{path}: columns differ from the first file")
            good.append(path)
        except DataError as exc:
            failures.append((path, exc))

    records = []
    entries = []
    vocabulary = None
    seen_ids = {}
    if good:
        vocabulary = lake_mod.build_vocabulary(good, options)
        for path in good:
            try:
                record = lake_mod.ingest_csv(path, options, vocabulary)
            except DataError as exc:
                failures.append((path, exc))
                continue
            if record.id in seen_ids:
                diag(level="warn", stage="ingest", path=path,
                     duplicate_of=seen_ids[record.id])
                continue
            seen_ids[record.id] = path
            records.append(record)
            entries.append(lake_mod.RegistryEntry(
                record.id, record.name, path, record.rows, record.cols))

    if records:
        stats = lake_mod.compute_lake_stats(records)
        registry = lake_mod.LakeRegistry(entries, options, vocabulary, stats,
                                         {r.id: r for r in records})
        registry.save(out)
    else:
        # Still write an empty manifest so the partial-failure contract holds.
        (out / "manifest.csv").write_text("id,name,path,rows,cols\n", encoding="utf-8")

    for record in records:
        print(f"ok {record.id} {record.name} {record.rows}x{record.cols}")
    for path, exc in failures:
        print(f"failed {path}: {exc}")
        diag(level="warn", stage="ingest", path=path, error=type(exc).__name__)
    diag(stage="ingest", files=len(files), ingested=len(records), failed=len(failures))
    if failures or not records:
        return 3
    return 0


def cmd_train(config: RunConfig, args) -> int:
    out = config.out_dir
    registry = lake_mod.LakeRegistry.load(_require(out, "output directory"))
    vec_config = config.vectorizer_config()
    if args.k is not None:
        vec_config = dataclasses.replace(vec_config, k=args.k)
    corpus = [lake_mod.normalize(r, registry.stats) for r in registry.records()]

    def progress(stats):
        if config["verbosity"] >= 2:
            diag(stage="train", epoch=stats.epoch, loss=f"{stats.mean_loss:.6g}")

    model, trace = vectorizer.train(corpus, vec_config, progress=progress)
    vectorizer.save_model(model, out / "model.vnm")
    vectorizer.write_loss_trace(out / "loss_trace.csv", trace)
    print(f"final loss {trace[-1].mean_loss!r}")
    diag(stage="train", epochs=len(trace), final_loss=trace[-1].mean_loss,
         model_version=model.version)
    return 0


def cmd_vectorize(config: RunConfig, args) -> int:
    out = config.out_dir
    registry, model, _ = _load_artifacts(config, need_store=False)
    store_path = out / "embeddings.tsv"
    store = None
    if store_path.exists():
        store = lake_mod.EmbeddingStore.load(store_path)
        store.ensure_version(model.version)
    clock = make_clock(config["timing.mode"])
    result = lake_mod.vectorize_lake(registry, model, store=store, clock=clock,
                                     jobs=config["jobs"])
    store = result.store
    store.save(store_path)
    (out / "vectorize_timing.txt").write_text(f"t_vec = {result.t_vec!r}\n", encoding="utf-8")
    for dataset_id, exc in result.failures:
        diag(level="warn", stage="vectorize", dataset=dataset_id, error=str(exc))
    print(f"vectorized {result.fresh} new dataset(s), store holds {len(store)}")
    diag(stage="vectorize", t_vec=result.t_vec, fresh=result.fresh, total=len(store),
         model_version=model.version)
    return 3 if result.failures else 0


def _load_query(config: RunConfig, registry):
    query_path = config["query.path"]
    if not query_path:
        raise ConfigError("query.path must be set")
    _require(Path(query_path), "query dataset")
    return lake_mod.ingest_csv(query_path, registry.options, registry.vocabulary)


def cmd_select(config: RunConfig, args) -> int:
    out = config.out_dir
    registry, model, store = _load_artifacts(config)
    query = _load_query(config, registry)
    z_o = vectorizer.vectorize(lake_mod.normalize(query, registry.stats), model)
    params = config.selection_params(seed=derive_seed(config.seed, "select"),
                                     method=args.arm)
    from .selection import select as select_fn
    result = select_fn(z_o.z, store, params, exclude=(query.id,))
    result.query_id = query.id
    write_selection(result, out / "selection.csv", out / "selection_diag.txt")
    print(f"selected {len(result.ranked)} dataset(s) via {result.method}")
    diag(stage="select", method=result.method, selected=len(result.ranked))
    return 0


def cmd_predict(config: RunConfig, args) -> int:
    out = config.out_dir
    registry, model, store = _load_artifacts(config)
    query = _load_query(config, registry)
    clock = make_clock(config["timing.mode"])
    params = config.selection_params(seed=derive_seed(config.seed, "select"),
                                     method=args.arm)
    spec = config.operator_spec()
    outcome = model_and_predict(
        query, registry, store, model, params, spec,
        surrogate_kind=config["surrogate.kind"], clock=clock,
        lake_t_vec=_read_lake_t_vec(out),
        mlp_threshold=config["surrogate.mlp_threshold"],
    )
    ledger = outcome.ledger
    row = {
        "query_id": query.id,
        "prediction": repr(float(outcome.prediction)),
        "t_vec": repr(float(ledger.t_vec)),
        "t_sim": repr(float(ledger.t_sim)),
        "t_simop": repr(float(ledger.t_simop)),
        "t_pred": repr(float(ledger.t_pred)),
    }
    if config["predict.compute_truth"]:
        truth = execute_operator(query, spec, stats=registry.stats, clock=clock,
                                 seed=derive_seed(config.seed, "truth"))
        row["truth"] = repr(float(truth.output))
        row["abs_error"] = repr(float(abs(outcome.prediction - truth.output)))
        print(f"prediction {outcome.prediction!r} truth {truth.output!r} "
              f"abs_error {abs(outcome.prediction - truth.output)!r}")
    else:
        print(f"prediction {outcome.prediction!r}")
    with open(out / "prediction.csv", "w", encoding="utf-8") as fh:
        fh.write(",".join(row.keys()) + "\n")
        fh.write(",".join(row.values()) + "\n")
    diag(stage="predict", prediction=outcome.prediction, selected=len(outcome.selection.ranked))
    return 0


def cmd_experiment(config: RunConfig, args) -> int:
    out = config.out_dir
    registry, model, store = _load_artifacts(config)
    arms = (args.arm,) if args.arm else tuple(config["experiment.arms"])
    settings = evalbench.ExperimentSettings(
        name=config["experiment.name"],
        arms=arms,
        repetitions=config["experiment.repetitions"],
        seed=config.seed,
        selection=config.selection_params(),
        sr_fraction=config["experiment.sr_fraction"],
        surrogate_kind=config["surrogate.kind"],
        mlp_threshold=config["surrogate.mlp_threshold"],
        n_operators_amortized=config["experiment.amortized_operators"],
        timing_mode=config["timing.mode"],
    )
    output = evalbench.run_experiment(
        registry, store, model, config.operator_spec(), settings,
        lake_t_vec=_read_lake_t_vec(out),
    )
    evalbench.write_report(out / "report.csv", output.rows)
    for (arm, dataset_id), errors in sorted(output.failures.items()):
        diag(level="warn", stage="experiment", arm=arm, query=dataset_id,
             failures=len(errors), first=errors[0])
    for row in output.rows:
        print(f"{row.arm}: rmse {row.rmse:.6g} mae {row.mae:.6g} "
              f"speedup {row.speedup:.6g} amortized {row.amortized_speedup:.6g}")
    diag(stage="experiment", arms=len(output.rows), report=str(out / "report.csv"))
    return 0


def cmd_synth(config: RunConfig, args) -> int:
    out = config.out_dir
    lake_dir = out / "synth"
    lake_dir.mkdir(parents=True, exist_ok=True)
    rows_grid = config["synth.rows"]
    cols_grid = config["synth.cols"]
    if not rows_grid or not cols_grid:
        raise ConfigError("synth.rows and synth.cols must be non-empty")
    spec = evalbench.SynthSpec(kind=config["synth.kind"], noise=config["synth.noise"])
    records = []
    for cols in cols_grid:
        for rows in rows_grid:
            for rep in range(config["synth.per_cell"]):
                seed = derive_seed(config.seed, "synth", cols, rows, rep)
                records.append(evalbench.gen_synth_dataset(rows, cols, spec, seed))
    for fraction in config["synth.noise_fractions"]:
        for base in list(records):
            if "noise_fraction" in base.provenance:
                continue
            records.append(evalbench.add_gaussian_noise(
                base, fraction, config["synth.noise_sigma"],
                scope=config["synth.noise_scope"],
                seed=derive_seed(config.seed, "noise", base.id, fraction),
            ))
    paths = []
    for record in records:
        path = lake_dir / f"{record.name}.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(col.source for col in record.schema) + "\n")
            for row in record.values:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        paths.append(str(path))
        print(f"wrote {path}")
    options = _ingest_options(config)
    registry = lake_mod.LakeRegistry.build(paths, options)
    registry.save(out)
    diag(stage="synth", datasets=len(records), directory=str(lake_dir))
    return 0


def cmd_report(config: RunConfig, args) -> int:
    from . import report as report_mod

    out = _require(config.out_dir, "output directory")
    written = report_mod.render_all(out)
    for path in written:
        print(f"wrote {path}")
    if not written:
        raise DataError(f"nothing to report on in {out} (run experiment/vectorize first)")
    diag(stage="report", artifacts=len(written))
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "vectorize": cmd_vectorize,
    "select": cmd_select,
    "predict": cmd_predict,
    "experiment": cmd_experiment,
    "synth": cmd_synth,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="key-value configuration file")
    common.add_argument("--seed", type=int, default=None, help="override the global seed")
    common.add_argument("--jobs", type=int, default=None, help="cap within-stage workers")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")

    parser = argparse.ArgumentParser(
        prog="venom",
        description="Predict analytics-operator outputs over a tabular data lake "
                    "via dataset vector embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("ingest", "train", "vectorize", "synth", "report"):
        sub.add_parser(name, parents=[common])
    train = sub.choices["train"]
    train.add_argument("--k", type=int, default=None,
                       help="override the latent size (train time only)")
    for name in ("select", "predict", "experiment"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--arm", default=None,
                       help="similarity method (cosine|euclidean|kmeans) or sr")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None:
            _require(Path(args.config), "config file")
        config = load_config(args.config, args.set)
        if args.seed is not None:
            config.values["seed"] = args.seed
        if args.jobs is not None:
            config.values["jobs"] = args.jobs
        if args.out is not None:
            config.values["out.dir"] = args.out
        code = COMMANDS[args.command](config, args)
        return int(code or 0)
    except VenomError as exc:
        diag(level="error", code=exc.exit_code, kind=type(exc).__name__, msg=str(exc))
        return exc.exit_code
    except Exception as exc:  # pragma: no cover - invariant violations
        diag(level="error", code=5, kind=type(exc).__name__, msg=str(exc))
        return 5


if __name__ == "__main__":
    sys.exit(main())
