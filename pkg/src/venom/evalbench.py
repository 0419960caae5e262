"""Evaluation machinery: error metrics, speedup accounting, the random
sampling baseline, synthetic dataset generation, Gaussian-noise
perturbation, PCA plot-data emission, and the leave-one-out experiment
harness.
"""

import csv
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError, EmptyInputError, VenomError
from .lake import ColumnInfo, DatasetRecord
from .modelling import OperatorSpec, execute_operator, model_and_predict
from .seeding import derive_seed
from .selection import SelectionParams, SelectionResult
from .timing import Stopwatch, TimingLedger, make_clock


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape or pred.size == 0:
        raise ContractError(f"need equal non-empty vectors, got {pred.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def mae(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape or pred.size == 0:
        raise ContractError(f"need equal non-empty vectors, got {pred.shape} vs {truth.shape}")
    return float(np.mean(np.abs(pred - truth)))


def speedup(ledger: TimingLedger) -> float:
    """T_op / (T_SimOp + T_vec + T_sim + T_pred)."""
    denominator = ledger.t_simop + ledger.t_vec + ledger.t_sim + ledger.t_pred
    if denominator <= 0.0:
        raise ContractError("speedup denominator must be > 0")
    return ledger.t_op / denominator


def amortized_speedup(ledgers) -> float:
    """Sum of operator costs over summed pipeline costs, vectorization
    counted once per lake. Reduces to speedup() at N=1."""
    ledgers = list(ledgers)
    if not ledgers:
        raise ContractError("need at least one ledger")
    t_vec = ledgers[0].t_vec
    if any(ledger.t_vec != t_vec for ledger in ledgers):
        raise ContractError("amortized speedup requires a shared t_vec across ledgers")
    numerator = sum(ledger.t_op for ledger in ledgers)
    denominator = sum(ledger.t_simop + ledger.t_sim + ledger.t_pred for ledger in ledgers)
    denominator += t_vec
    if denominator <= 0.0:
        raise ContractError("amortized speedup denominator must be > 0")
    return numerator / denominator


def sr_select(store, fraction: float, seed: int, exclude=()) -> SelectionResult:
    """Uniform random sample (without replacement) of ceil(l*N) dataset ids."""
    if not 0.0 < fraction <= 1.0:
        raise ContractError("sampling fraction must be in (0, 1]")
    ids = [i for i in store.ids() if i not in set(exclude)]
    if not ids:
        raise DataError("no candidates to sample from")
    count = max(1, math.ceil(fraction * len(ids)))
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(len(ids), size=count, replace=False).tolist())
    ranked = [(ids[i], 0.0) for i in chosen]
    return SelectionResult(query_id="", method=f"sr-{fraction}", ranked=ranked,
                           diagnostics={"candidates": len(ids), "fraction": fraction})


@dataclass(frozen=True)
class SynthSpec:
    """Synthetic dataset generator selector.

    kinds: "normal" (iid standard normal), "linear" (y = w.x + eps,
    target last), "two-cluster" (two Gaussian blobs, 0/1 label last).
    column_jitter > 0 adds a per-column location drawn once per dataset,
    so datasets differ in their column means rather than being
    indistinguishable noise.
    """

    kind: str = "normal"
    noise: float = 0.0
    location: float = 0.0
    scale: float = 1.0
    weight_scale: float = 1.0
    separation: float = 3.0
    column_jitter: float = 0.0

    def __post_init__(self):
        if self.kind not in ("normal", "linear", "two-cluster"):
            raise ContractError(f"unknown synthetic kind: {self.kind!r}")


def gen_synth_dataset(rows: int, cols: int, spec: SynthSpec, seed: int,
                      name: str | None = None) -> DatasetRecord:
    """Seeded synthetic dataset; for supervised kinds the target column
    is appended last."""
    if rows < 1 or cols < 2:
        raise ContractError("need rows >= 1 and cols >= 2")
    rng = np.random.default_rng(seed)
    if spec.kind == "normal":
        offsets = spec.location + spec.column_jitter * rng.standard_normal(cols)
        values = offsets + spec.scale * rng.standard_normal((rows, cols))
    elif spec.kind == "linear":
        offsets = spec.location + spec.column_jitter * rng.standard_normal(cols - 1)
        x = offsets + spec.scale * rng.standard_normal((rows, cols - 1))
        w = spec.weight_scale * rng.standard_normal(cols - 1)
        y = x @ w + spec.noise * rng.standard_normal(rows)
        values = np.hstack([x, y.reshape(-1, 1)])
    else:  # two-cluster
        half = rows // 2
        labels = np.zeros(rows)
        labels[half:] = 1.0
        centers = np.where(labels.reshape(-1, 1) > 0.5, spec.separation / 2.0,
                           -spec.separation / 2.0)
        x = centers + spec.scale * rng.standard_normal((rows, cols - 1))
        if spec.noise > 0.0:
            x += spec.noise * rng.standard_normal((rows, cols - 1))
        values = np.hstack([x, labels.reshape(-1, 1)])
    schema = tuple(ColumnInfo(f"col{j}", "numeric") for j in range(cols))
    name = name or f"synth_{spec.kind}_{rows}x{cols}_s{seed}"
    digest = hashlib.sha256()
    digest.update(values.tobytes())
    digest.update(name.encode("utf-8"))
    return DatasetRecord(
        id=digest.hexdigest()[:16],
        name=name,
        values=values,
        schema=schema,
        provenance={"generator": spec.kind, "seed": seed},
    )


def add_gaussian_noise(record: DatasetRecord, tuple_fraction: float, sigma: float,
                       scope: str = "all", seed: int = 0) -> DatasetRecord:
    """Add N(0, sigma^2) to the scoped cells of ceil(l*m) seeded tuples.

    scope "all" perturbs every column of a chosen tuple, "first" only the
    first column. Untouched cells stay bit-identical.
    """
    if not 0.0 < tuple_fraction <= 1.0:
        raise ContractError("tuple_fraction must be in (0, 1]")
    if sigma <= 0.0:
        raise ContractError("sigma must be > 0")
    if scope not in ("all", "first"):
        raise ContractError(f"unknown noise scope: {scope!r}")
    m = record.rows
    count = max(1, math.ceil(tuple_fraction * m))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(m, size=count, replace=False))
    values = record.values.copy()
    if scope == "all":
        values[chosen, :] += sigma * rng.standard_normal((count, record.cols))
    else:
        values[chosen, 0] += sigma * rng.standard_normal(count)
    digest = hashlib.sha256()
    digest.update(values.tobytes())
    digest.update(record.id.encode("utf-8"))
    return DatasetRecord(
        id=digest.hexdigest()[:16],
        name=f"{record.name}_noise{tuple_fraction:g}_{scope}",
        values=values,
        schema=record.schema,
        provenance={**record.provenance, "noise_fraction": tuple_fraction,
                    "noise_sigma": sigma, "noise_scope": scope, "noise_seed": seed},
    )


@dataclass
class PCAProjection:
    coords: np.ndarray
    directions: np.ndarray  # k x dims, orthonormal columns
    mean: np.ndarray
    degenerate: bool = False
    note: str = ""


def pca_project(vectors, dims: int) -> PCAProjection:
    """Top-`dims` principal coordinates via power iteration with deflation.

    Directions are orthonormal; all-identical input yields zero
    coordinates with a diagnostic note instead of an error.
    """
    if dims not in (2, 3):
        raise ContractError("dims must be 2 or 3")
    Z = np.stack([np.asarray(v, dtype=np.float64) for v in vectors])
    n, k = Z.shape
    if n < dims:
        raise ContractError(f"need at least {dims} vectors, got {n}")
    if dims >= k:
        raise ContractError(f"dims={dims} must be smaller than the vector length {k}")
    mean = Z.mean(axis=0)
    centered = Z - mean
    cov = centered.T @ centered / n
    total = float(np.trace(cov))
    if total <= 1e-24:
        return PCAProjection(np.zeros((n, dims)), np.zeros((k, dims)), mean,
                             degenerate=True, note="all vectors identical")

    directions = np.zeros((k, dims))
    deflated = cov.copy()
    rng = np.random.default_rng(0)
    for comp in range(dims):
        v = rng.standard_normal(k)
        for j in range(comp):
            v -= (v @ directions[:, j]) * directions[:, j]
        norm = np.linalg.norm(v)
        v = v / norm if norm > 0 else np.eye(k)[comp % k]
        for _ in range(5000):
            w = deflated @ v
            for j in range(comp):
                w -= (w @ directions[:, j]) * directions[:, j]
            norm = np.linalg.norm(w)
            if norm <= 1e-18 * max(total, 1.0):
                # Exhausted the spectrum; any orthonormal completion works.
                w = v
                break
            w = w / norm
            if w @ v < 0.0:
                w = -w
            if np.linalg.norm(w - v) < 1e-13:
                v = w
                break
            v = w
        directions[:, comp] = v
        eigenvalue = float(v @ cov @ v)
        deflated = deflated - eigenvalue * np.outer(v, v)
    return PCAProjection(centered @ directions, directions, mean)


@dataclass
class ReportRow:
    experiment: str
    arm: str
    k: int
    rmse: float
    mae: float
    speedup: float
    amortized_speedup: float
    reps: int


REPORT_HEADER = "experiment,arm,k,rmse,mae,speedup,amortized_speedup,reps"


def write_report(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(REPORT_HEADER + "\n")
        for row in rows:
            fh.write(
                f"{row.experiment},{row.arm},{row.k},{float(row.rmse)!r},{float(row.mae)!r},"
                f"{float(row.speedup)!r},{float(row.amortized_speedup)!r},{row.reps}\n"
            )


def read_report(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append(ReportRow(
                row["experiment"], row["arm"], int(row["k"]), float(row["rmse"]),
                float(row["mae"]), float(row["speedup"]),
                float(row["amortized_speedup"]), int(row["reps"]),
            ))
    return rows


@dataclass
class ExperimentSettings:
    """Leave-one-out experiment over the lake; one ReportRow per arm."""

    name: str = "exp"
    arms: tuple[str, ...] = ("euclidean",)  # cosine | euclidean | kmeans | sr
    repetitions: int = 10
    seed: int = 0
    selection: SelectionParams = field(default_factory=SelectionParams)
    sr_fraction: float = 0.2
    surrogate_kind: str = "auto"
    mlp_threshold: int = 10
    n_operators_amortized: int = 1
    timing_mode: str = "tick"

    def __post_init__(self):
        if self.repetitions < 1:
            raise ContractError("repetitions must be >= 1")
        for arm in self.arms:
            if arm not in ("cosine", "euclidean", "kmeans", "sr"):
                raise ContractError(f"unknown experiment arm: {arm!r}")


@dataclass
class ExperimentOutput:
    rows: list
    predictions: dict  # (arm, query_id, rep) -> (prediction, truth)
    failures: dict  # (arm, query_id) -> list of error strings
    ledgers: dict  # arm -> mean TimingLedger


def _mean_ledger(ledgers, n_amortized: int) -> TimingLedger:
    n = len(ledgers)
    return TimingLedger(
        t_op=sum(l.t_op for l in ledgers) / n,
        t_simop=sum(l.t_simop for l in ledgers) / n,
        t_vec=sum(l.t_vec for l in ledgers) / n,
        t_sim=sum(l.t_sim for l in ledgers) / n,
        t_pred=sum(l.t_pred for l in ledgers) / n,
        n_operators_amortized=n_amortized,
    )


def run_experiment(registry, store, model, operator_spec: OperatorSpec,
                   settings: ExperimentSettings, lake_t_vec: float = 0.0) -> ExperimentOutput:
    """Each lake dataset in turn is the unseen query.

    Ground truth comes from executing the operator on the query itself
    (never from the prediction); predictions come from the pipeline with
    the query's embedding excluded from selection. Errors are collected
    per query, and a query failing in every repetition stays visible in
    `failures` rather than being silently dropped.
    """
    ids = [e.id for e in registry.entries]
    if not ids:
        raise EmptyInputError("experiment needs a non-empty lake")
    rows = []
    predictions = {}
    failures = {}
    mean_ledgers = {}

    for arm in settings.arms:
        arm_label = f"sr-{settings.sr_fraction:g}" if arm == "sr" else arm
        arm_ledgers = []
        preds, truths = [], []
        for rep in range(settings.repetitions):
            clock = make_clock(settings.timing_mode)
            rep_seed = derive_seed(settings.seed, "rep", rep)

            def run_op(record, _seed=rep_seed):
                return execute_operator(
                    record, operator_spec, stats=registry.stats, clock=clock,
                    seed=derive_seed(_seed, "op", record.id),
                )

            truth = {}
            with Stopwatch(clock) as op_timer:
                for dataset_id in ids:
                    truth[dataset_id] = run_op(registry.record(dataset_id))
            t_op = op_timer.elapsed

            for dataset_id in ids:
                query = registry.record(dataset_id)
                sel_seed = derive_seed(rep_seed, "sel", dataset_id)
                try:
                    if arm == "sr":
                        def selector(z, st, params, exclude=()):
                            return sr_select(st, settings.sr_fraction, sel_seed, exclude)

                        outcome = _predict_with_selector(
                            query, registry, store, model, selector, run_op,
                            operator_spec, settings, clock, lake_t_vec,
                        )
                    else:
                        params = SelectionParams(
                            method=arm,
                            fraction=settings.selection.fraction,
                            cluster_range=settings.selection.cluster_range,
                            min_size=settings.selection.min_size,
                            max_size=settings.selection.max_size,
                            seed=sel_seed,
                            restarts=settings.selection.restarts,
                        )
                        outcome = model_and_predict(
                            query, registry, store, model, params, operator_spec,
                            surrogate_kind=settings.surrogate_kind, clock=clock,
                            execute=run_op, lake_t_vec=lake_t_vec,
                            mlp_threshold=settings.mlp_threshold,
                        )
                except VenomError as exc:
                    failures.setdefault((arm_label, dataset_id), []).append(
                        f"rep {rep}: {exc}"
                    )
                    continue
                outcome.ledger.t_op = t_op
                outcome.ledger.n_operators_amortized = settings.n_operators_amortized
                arm_ledgers.append(outcome.ledger)
                predictions[(arm_label, dataset_id, rep)] = (
                    outcome.prediction, truth[dataset_id].output,
                )
                preds.append(outcome.prediction)
                truths.append(truth[dataset_id].output)

        if not preds:
            raise DataError(f"arm {arm_label!r}: every query failed in every repetition")
        ledger = _mean_ledger(arm_ledgers, settings.n_operators_amortized)
        mean_ledgers[arm_label] = ledger
        amortized = amortized_speedup([ledger] * settings.n_operators_amortized)
        rows.append(ReportRow(
            experiment=settings.name,
            arm=arm_label,
            k=model.config.k,
            rmse=rmse(preds, truths),
            mae=mae(preds, truths),
            speedup=speedup(ledger),
            amortized_speedup=amortized,
            reps=settings.repetitions,
        ))
    return ExperimentOutput(rows, predictions, failures, mean_ledgers)


def _predict_with_selector(query, registry, store, model, selector, run_op,
                           operator_spec, settings, clock, lake_t_vec):
    """model_and_predict with a custom selection callable (the SR arm)."""
    from .modelling import PredictionOutcome, build_surrogate
    from .modelling import predict as predict_scalar
    from .lake import normalize
    from .vectorizer import vectorize

    store.ensure_version(model.version)
    ledger = TimingLedger()
    with Stopwatch(clock) as timer:
        z_o = vectorize(normalize(query, registry.stats), model)
    ledger.t_vec = lake_t_vec + timer.elapsed
    with Stopwatch(clock) as timer:
        chosen = selector(z_o.z, store, None, exclude=(query.id,))
    chosen.query_id = query.id
    ledger.t_sim = timer.elapsed
    results = [run_op(registry.record(dataset_id)) for dataset_id in chosen.ids]
    ledger.t_simop = sum(r.elapsed for r in results)
    pairs = [(store.get(r.dataset_id), r.output) for r in results]
    with Stopwatch(clock) as timer:
        surrogate = build_surrogate(pairs, kind=settings.surrogate_kind,
                                    seed=settings.seed,
                                    mlp_threshold=settings.mlp_threshold,
                                    operator_hash=operator_spec.spec_hash())
        prediction = predict_scalar(surrogate, z_o)
    ledger.t_pred = timer.elapsed
    return PredictionOutcome(prediction, ledger, chosen, results, surrogate, z_o)


def emit_plot_data(kind: str, inputs: dict, out_path) -> str:
    """Write one plot-ready CSV; no rendering happens here.

    kinds: representation (dataset_id, group, pc1, pc2[, pc3]),
    noise-shift (noise_level, euclidean_displacement), loss-bars
    (mirrors the report rows).
    """
    if kind == "representation":
        embeddings = list(inputs["embeddings"])
        groups = inputs.get("groups", {})
        dims = int(inputs.get("dims", 2))
        projection = pca_project([e.z for e in embeddings], dims)
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["dataset_id", "group"] + [f"pc{i + 1}" for i in range(dims)])
            for emb, coord in zip(embeddings, projection.coords):
                writer.writerow([emb.dataset_id, groups.get(emb.dataset_id, "")]
                                + [repr(float(c)) for c in coord])
    elif kind == "noise-shift":
        pairs = sorted(inputs["pairs"], key=lambda p: p[0])
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["noise_level", "euclidean_displacement"])
            for level, displacement in pairs:
                writer.writerow([repr(float(level)), repr(float(displacement))])
    elif kind == "loss-bars":
        write_report(out_path, inputs["rows"])
    else:
        raise ContractError(f"unknown plot-data kind: {kind!r}")
    return str(out_path)
