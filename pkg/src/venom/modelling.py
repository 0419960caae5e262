"""Execute analytics operators on datasets and fit surrogates over
(embedding, output) pairs.

An operator's scalar output is the held-out metric of the model it
trains on the dataset: RMSE for regressors, accuracy for classifiers.
The surrogate maps a dataset's embedding to that scalar, so the
operator's value on an unseen dataset can be predicted without running
it.
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import nn_core as nn
from .errors import (
    ContractError,
    DataError,
    SchemaError,
    UnusableDatasetError,
)
from .lake import DatasetRecord, LakeStats, normalize
from .nn_core import autograd as T
from .seeding import derive_seed
from .selection import SelectionParams, select
from .timing import Stopwatch, TimingLedger, WallClock
from .vectorizer import Embedding, vectorize

OPERATOR_KINDS = (
    "linear-regression",
    "mlp-regressor",
    "svm-sgd-classifier",
    "mlp-classifier",
)


@dataclass(frozen=True)
class OperatorSpec:
    """What to run on a dataset and how to score it."""

    kind: str
    target_column: str
    train_fraction: float = 0.7
    seed: int = 0
    hidden: tuple[int, ...] = (16,)
    epochs: int = 200
    learning_rate: float = 0.01
    regularization: float = 1e-4

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ContractError(f"unknown operator kind: {self.kind!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ContractError("train_fraction must be in (0, 1)")

    @property
    def is_classifier(self) -> bool:
        return self.kind in ("svm-sgd-classifier", "mlp-classifier")

    def spec_hash(self) -> str:
        blob = json.dumps(
            {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()},
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class OperatorResult:
    dataset_id: str
    output: float
    elapsed: float


def split_xy(record: DatasetRecord, spec: OperatorSpec, stats: LakeStats | None = None):
    """Features (all non-target columns, optionally lake-normalized) and
    the raw target column."""
    target_idx = [
        j for j, col in enumerate(record.schema)
        if col.source == spec.target_column and col.kind == "numeric"
    ]
    if not target_idx:
        onehot = any(c.source == spec.target_column for c in record.schema)
        detail = "is one-hot encoded; operators need a numeric target" if onehot \
            else "does not exist"
        raise SchemaError(f"target column {spec.target_column!r} {detail}")
    t = target_idx[0]
    feature_idx = [j for j in range(record.cols) if j != t]
    if not feature_idx:
        raise UnusableDatasetError(f"dataset {record.id} has no feature columns")
    X = record.values[:, feature_idx].copy()
    if stats is not None:
        if not stats.covers(record.cols):
            raise SchemaError(f"lake statistics do not cover dataset {record.id}")
        mean = stats.mean[feature_idx]
        std = stats.std[feature_idx]
        X = np.where(std > 0.0, (X - mean) / np.where(std > 0.0, std, 1.0), 0.0)
    y = record.values[:, t].copy()
    return X, y


def _normal_equations(X, y) -> np.ndarray:
    """Ridge-jittered normal equations; weights with the intercept first.

    The 1e-10 jitter guards near-singular systems and, for
    underdetermined ones, yields (approximately) the minimum-norm
    interpolant.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ContractError(f"incompatible shapes: X {X.shape}, y {y.shape}")
    A = np.hstack([np.ones((X.shape[0], 1)), X])
    if not (np.isfinite(A).all() and np.isfinite(y).all()):
        raise DataError("non-finite values in the regression system")
    gram = A.T @ A + 1e-10 * np.eye(A.shape[1])
    try:
        w = np.linalg.solve(gram, A.T @ y)
    except np.linalg.LinAlgError as exc:
        raise DataError(f"singular regression system: {exc}") from exc
    if not np.isfinite(w).all():
        raise DataError("singular regression system produced non-finite weights")
    return w


def ols_fit(X, y) -> np.ndarray:
    """Least squares with intercept; requires at least as many rows as
    coefficients."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2 and X.shape[0] < X.shape[1] + 1:
        raise ContractError(
            f"need at least {X.shape[1] + 1} rows for {X.shape[1] + 1} coefficients, "
            f"got {X.shape[0]}"
        )
    return _normal_equations(X, y)


def ols_predict(w, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return w[0] + X @ w[1:]


def svm_sgd_fit(X, y, epochs: int, lr: float, reg: float, seed: int = 0):
    """Hinge-loss subgradient descent with L2 regularization.

    y must hold both classes as -1/+1. Returns (weights, bias, per-epoch
    mean objective trace).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    classes = np.unique(y)
    if not (classes.size == 2 and set(classes) == {-1.0, 1.0}):
        raise ContractError(f"svm labels must be -1/+1 with both present, got {classes}")
    rng = np.random.default_rng(seed)
    w = np.zeros(X.shape[1])
    b = 0.0
    trace = []
    for _ in range(epochs):
        for i in rng.permutation(X.shape[0]):
            margin = y[i] * (X[i] @ w + b)
            if margin < 1.0:
                w -= lr * (reg * w - y[i] * X[i])
                b += lr * y[i]
            else:
                w -= lr * reg * w
        hinge = np.maximum(0.0, 1.0 - y * (X @ w + b)).mean()
        trace.append(float(hinge + 0.5 * reg * (w @ w)))
    return w, b, trace


class MlpNet:
    """Small dense network trained by Adam on the nn_core substrate."""

    def __init__(self, in_dim: int, hidden: tuple[int, ...], seed: int, task: str):
        if task not in ("regression", "classification"):
            raise ContractError(f"unknown task: {task!r}")
        if any(h < 1 for h in hidden):
            raise ContractError("hidden widths must be >= 1")
        self.task = task
        self.hidden = tuple(hidden)
        self.params = nn.ParamSet(seed)
        widths = [in_dim, *hidden, 1]
        for i in range(len(widths) - 1):
            self.params.add(f"w{i}", (widths[i], widths[i + 1]))
            self.params.add(f"b{i}", (widths[i + 1],), init="zeros")
        self.n_layers = len(widths) - 1

    def logits(self, x: T.Tensor) -> T.Tensor:
        h = x
        for i in range(self.n_layers):
            h = nn.affine(h, self.params[f"w{i}"], self.params[f"b{i}"])
            if i < self.n_layers - 1:
                h = T.gelu(h)
        return h

    def predict(self, X) -> np.ndarray:
        out = self.logits(T.tensor(np.asarray(X, dtype=np.float64))).data.reshape(-1)
        if self.task == "classification":
            return (out > 0.0).astype(np.float64)
        return out


def mlp_fit(X, y, hidden=(16,), epochs: int = 200, lr: float = 0.01, seed: int = 0,
            task: str = "regression") -> MlpNet:
    """Full-batch Adam on squared loss (regression) or logistic loss
    (classification, labels 0/1). Deterministic per seed."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    net = MlpNet(X.shape[1], tuple(hidden), seed, task)
    state = nn.AdamState(net.params)
    tape = nn.GradTape(net.params)
    x_t = T.tensor(X)
    y_t = T.tensor(y)
    for epoch in range(epochs):
        tape.reset()
        f = net.logits(x_t)
        if task == "regression":
            loss = T.scale(T.sum_all(T.square(T.sub(f, y_t))), 0.5 / y.size)
        else:
            # mean softplus(f) - y*f, the negative Bernoulli log-likelihood
            loss = T.scale(T.sum_all(T.sub(T.softplus(f), T.mul(y_t, f))), 1.0 / y.size)
        if not np.isfinite(loss.data):
            raise DataError(f"MLP training diverged at epoch {epoch}")
        nn.backward(tape, loss)
        nn.adam_step(net.params, tape.grads, state, lr=lr)
    return net


def _binary_labels(y) -> tuple[np.ndarray, np.ndarray]:
    """Validate a two-valued integer target; return (values01, classes)."""
    classes = np.unique(y)
    if classes.size < 2:
        raise UnusableDatasetError("target has a single class")
    if classes.size > 2 or not np.allclose(classes, np.round(classes)):
        raise UnusableDatasetError(
            f"classifier target must be binary integer-labeled, got {classes[:5]}"
        )
    return (y == classes[1]).astype(np.float64), classes


def execute_operator(record: DatasetRecord, spec: OperatorSpec,
                     stats: LakeStats | None = None, clock=None,
                     seed: int | None = None) -> OperatorResult:
    """Train the operator on a seeded split and score the held-out side.

    Output is the test RMSE for regressors or test accuracy for
    classifiers; wall-clock (or tick) time is recorded.
    """
    clock = clock or WallClock()
    seed = spec.seed if seed is None else seed
    with Stopwatch(clock) as timer:
        X, y = split_xy(record, spec, stats)
        m = X.shape[0]
        n_train = int(round(spec.train_fraction * m))
        n_test = m - n_train
        if n_train < 5 or n_test < 5:
            raise UnusableDatasetError(
                f"dataset {record.id}: split {n_train}/{n_test} needs >= 5 rows per side"
            )
        if not spec.is_classifier and np.std(y) == 0.0:
            raise UnusableDatasetError(f"dataset {record.id}: zero-variance target")

        order = np.random.default_rng(derive_seed(seed, "split")).permutation(m)
        tr, te = order[:n_train], order[n_train:]

        if spec.kind == "linear-regression":
            w = ols_fit(X[tr], y[tr])
            pred = ols_predict(w, X[te])
            output = float(np.sqrt(np.mean((pred - y[te]) ** 2)))
        elif spec.kind == "mlp-regressor":
            net = mlp_fit(X[tr], y[tr], hidden=spec.hidden, epochs=spec.epochs,
                          lr=spec.learning_rate, seed=derive_seed(seed, "mlp"),
                          task="regression")
            pred = net.predict(X[te])
            output = float(np.sqrt(np.mean((pred - y[te]) ** 2)))
        elif spec.kind == "svm-sgd-classifier":
            y01, _ = _binary_labels(y)
            y_pm = 2.0 * y01 - 1.0
            if np.unique(y_pm[tr]).size < 2:
                raise UnusableDatasetError(f"dataset {record.id}: single-class train split")
            w, b, _ = svm_sgd_fit(X[tr], y_pm[tr], epochs=spec.epochs,
                                  lr=spec.learning_rate, reg=spec.regularization,
                                  seed=derive_seed(seed, "svm"))
            pred = np.where(X[te] @ w + b >= 0.0, 1.0, -1.0)
            output = float(np.mean(pred == y_pm[te]))
        else:  # mlp-classifier
            y01, _ = _binary_labels(y)
            if np.unique(y01[tr]).size < 2:
                raise UnusableDatasetError(f"dataset {record.id}: single-class train split")
            net = mlp_fit(X[tr], y01[tr], hidden=spec.hidden, epochs=spec.epochs,
                          lr=spec.learning_rate, seed=derive_seed(seed, "mlp"),
                          task="classification")
            output = float(np.mean(net.predict(X[te]) == y01[te]))

        if not np.isfinite(output):
            raise DataError(f"dataset {record.id}: operator produced a non-finite output")
    return OperatorResult(dataset_id=record.id, output=output, elapsed=timer.elapsed)


@dataclass
class SurrogateModel:
    """Embedding -> operator-output regressor."""

    kind: str  # linear | mlp
    input_dim: int
    trained_on: tuple[str, ...]
    operator_hash: str = ""
    weights: np.ndarray | None = None
    net: MlpNet | None = None


def build_surrogate(pairs, kind: str = "auto", seed: int = 0, mlp_threshold: int = 10,
                    operator_hash: str = "") -> SurrogateModel:
    """Fit the surrogate on (Embedding, scalar) pairs.

    kind "auto" picks linear for <= mlp_threshold pairs, mlp above: a
    handful of points cannot support an MLP.
    """
    pairs = list(pairs)
    if len(pairs) < 2:
        raise DataError(f"need at least 2 (embedding, output) pairs, got {len(pairs)}")
    k = pairs[0][0].z.shape[0]
    if any(emb.z.shape[0] != k for emb, _ in pairs):
        raise ContractError("inconsistent embedding dimensions across pairs")
    if kind == "auto":
        kind = "linear" if len(pairs) <= mlp_threshold else "mlp"
    Z = np.stack([emb.z for emb, _ in pairs])
    y = np.array([out for _, out in pairs], dtype=np.float64)
    ids = tuple(emb.dataset_id for emb, _ in pairs)
    if kind == "linear":
        # A selection smaller than k+1 still yields a usable surrogate:
        # the jittered normal equations give the minimum-norm fit.
        return SurrogateModel("linear", k, ids, operator_hash,
                              weights=_normal_equations(Z, y))
    if kind == "mlp":
        net = mlp_fit(Z, y, hidden=(16,), epochs=300, lr=0.01,
                      seed=derive_seed(seed, "surrogate"), task="regression")
        return SurrogateModel("mlp", k, ids, operator_hash, net=net)
    raise ContractError(f"unknown surrogate kind: {kind!r}")


def predict(surrogate: SurrogateModel, z_o) -> float:
    """Evaluate the surrogate at one embedding."""
    z = z_o.z if isinstance(z_o, Embedding) else np.asarray(z_o, dtype=np.float64)
    if z.shape != (surrogate.input_dim,):
        raise ContractError(
            f"embedding length {z.shape} does not match surrogate k={surrogate.input_dim}"
        )
    if surrogate.kind == "linear":
        return float(ols_predict(surrogate.weights, z.reshape(1, -1))[0])
    return float(surrogate.net.predict(z.reshape(1, -1))[0])


@dataclass
class PredictionOutcome:
    prediction: float
    ledger: TimingLedger
    selection: object
    operator_results: list
    surrogate: SurrogateModel
    query_embedding: Embedding


def _stage(name):
    class _StageContext:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and isinstance(exc, Exception):
                exc.args = (f"stage {name}: {exc}",) + exc.args[1:]
            return False

    return _StageContext()


def model_and_predict(query: DatasetRecord, registry, store, model,
                      selection_params: SelectionParams, operator_spec: OperatorSpec,
                      surrogate_kind: str = "auto", clock=None, execute=None,
                      lake_t_vec: float = 0.0, leave_out: bool = True,
                      mlp_threshold: int = 10) -> PredictionOutcome:
    """Full pipeline for one query: embed, select, execute, fit, predict.

    t_vec = lake vectorization cost (passed in, one-time) + query
    embedding time; t_simop sums the operator executions over the
    selected subset; t_pred covers surrogate fit + prediction. t_op is
    left to the caller (it belongs to brute-force accounting).
    """
    clock = clock or WallClock()
    store.ensure_version(model.version)
    if execute is None:
        def execute(record):
            return execute_operator(record, operator_spec, stats=registry.stats, clock=clock)

    ledger = TimingLedger()

    with _stage("vectorize"):
        with Stopwatch(clock) as timer:
            z_o = vectorize(normalize(query, registry.stats), model)
        ledger.t_vec = lake_t_vec + timer.elapsed

    with _stage("select"):
        exclude = (query.id,) if leave_out else ()
        with Stopwatch(clock) as timer:
            chosen = select(z_o.z, store, selection_params, exclude=exclude)
        chosen.query_id = query.id
        ledger.t_sim = timer.elapsed

    with _stage("operator"):
        results = []
        pairs = []
        for dataset_id in chosen.ids:
            result = execute(registry.record(dataset_id))
            results.append(result)
            pairs.append((store.get(dataset_id), result.output))
        ledger.t_simop = sum(r.elapsed for r in results)

    with _stage("surrogate"):
        with Stopwatch(clock) as timer:
            surrogate = build_surrogate(pairs, kind=surrogate_kind,
                                        seed=selection_params.seed,
                                        mlp_threshold=mlp_threshold,
                                        operator_hash=operator_spec.spec_hash())
            prediction = predict(surrogate, z_o)
        ledger.t_pred = timer.elapsed

    return PredictionOutcome(prediction, ledger, chosen, results, surrogate, z_o)
