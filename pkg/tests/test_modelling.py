"""Operators, solvers, surrogates, and the one-query pipeline."""

import numpy as np
import pytest

from venom import lake
from venom import modelling as md
from venom import vectorizer as vz
from venom.errors import ContractError, DataError, SchemaError, UnusableDatasetError
from venom.selection import SelectionParams
from venom.timing import TickClock


def record_of(values, dataset_id="d", target_last=True):
    values = np.asarray(values, dtype=np.float64)
    schema = tuple(lake.ColumnInfo(f"col{j}", "numeric") for j in range(values.shape[1]))
    return lake.DatasetRecord(dataset_id, dataset_id, values, schema)


def gd_ols_oracle(X, y, lr=0.01, steps=200_000):
    """Gradient descent to convergence; independent of the solver."""
    A = np.hstack([np.ones((X.shape[0], 1)), X])
    w = np.zeros(A.shape[1])
    for _ in range(steps):
        grad = A.T @ (A @ w - y) / len(y)
        w -= lr * grad
        if np.linalg.norm(grad) < 1e-13:
            break
    return w


class TestOls:
    def test_exact_line(self):
        w = md.ols_fit(np.array([[1.0], [2.0]]), np.array([2.0, 4.0]))
        assert w[0] == pytest.approx(0.0, abs=1e-7)
        assert w[1] == pytest.approx(2.0, abs=1e-7)

    def test_constant_target(self):
        w = md.ols_fit(np.array([[1.0], [2.0], [3.0]]), np.array([5.0, 5.0, 5.0]))
        assert w[0] == pytest.approx(5.0, abs=1e-7)
        assert w[1] == pytest.approx(0.0, abs=1e-7)

    def test_matches_gradient_descent_oracle(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(50, 3))
        y = X @ np.array([1.5, -2.0, 0.5]) + 0.3 + rng.normal(scale=0.1, size=50)
        w = md.ols_fit(X, y)
        oracle = gd_ols_oracle(X, y)
        np.testing.assert_allclose(w, oracle, atol=1e-6)

    def test_residual_orthogonality(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(40, 4))
        y = rng.normal(size=40)
        w = md.ols_fit(X, y)
        A = np.hstack([np.ones((40, 1)), X])
        residual = y - A @ w
        assert np.abs(A.T @ residual).max() <= 1e-6

    def test_underdetermined_rejected(self):
        with pytest.raises(ContractError):
            md.ols_fit(np.ones((2, 5)), np.ones(2))


class TestSvm:
    def separable(self, n=20, seed=0):
        rng = np.random.default_rng(seed)
        x_neg = rng.normal(loc=-2.0, scale=0.3, size=(n, 1))
        x_pos = rng.normal(loc=2.0, scale=0.3, size=(n, 1))
        X = np.vstack([x_neg, x_pos])
        y = np.array([-1.0] * n + [1.0] * n)
        return X, y

    def test_separable_training_accuracy(self):
        X, y = self.separable()
        w, b, _ = md.svm_sgd_fit(X, y, epochs=50, lr=0.01, reg=1e-4, seed=0)
        pred = np.where(X @ w + b >= 0.0, 1.0, -1.0)
        assert np.mean(pred == y) == 1.0

    def test_heavy_regularization_shrinks_weights(self):
        X, y = self.separable()
        w_small, _, _ = md.svm_sgd_fit(X, y, epochs=50, lr=0.001, reg=1e-4, seed=0)
        w_large, _, _ = md.svm_sgd_fit(X, y, epochs=50, lr=0.001, reg=500.0, seed=0)
        assert np.linalg.norm(w_large) < np.linalg.norm(w_small)

    def test_objective_descends(self):
        X, y = self.separable(seed=2)
        _, _, trace = md.svm_sgd_fit(X, y, epochs=30, lr=0.01, reg=1e-4, seed=1)
        assert trace[-1] <= trace[0]

    def test_single_class_rejected(self):
        with pytest.raises(ContractError):
            md.svm_sgd_fit(np.ones((4, 1)), np.ones(4), epochs=1, lr=0.1, reg=0.0)


class TestMlp:
    def test_zero_target_regression(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(30, 3))
        y = np.zeros(30)
        net = md.mlp_fit(X, y, hidden=(8,), epochs=300, lr=0.01, seed=0)
        pred = net.predict(X)
        assert np.sqrt(np.mean(pred ** 2)) < 0.05

    def test_xor_classification(self):
        X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        y = np.array([0.0, 1.0, 1.0, 0.0])
        solved = 0
        for seed in range(10):
            net = md.mlp_fit(X, y, hidden=(8,), epochs=500, lr=0.05, seed=seed,
                             task="classification")
            if np.all(net.predict(X) == y):
                solved += 1
        assert solved >= 8

    def test_linear_configuration_matches_ols(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(40, 2))
        y = X @ np.array([1.0, -0.5]) + 0.2
        net = md.mlp_fit(X, y, hidden=(), epochs=3000, lr=0.05, seed=0)
        w = md.ols_fit(X, y)
        np.testing.assert_allclose(net.predict(X), md.ols_predict(w, X), atol=1e-3)

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(10, 2))
        y = rng.normal(size=10)
        a = md.mlp_fit(X, y, hidden=(4,), epochs=50, lr=0.01, seed=3)
        b = md.mlp_fit(X, y, hidden=(4,), epochs=50, lr=0.01, seed=3)
        assert np.array_equal(a.predict(X), b.predict(X))


def linear_dataset(n=40, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 1))
    y = 2.0 * x[:, 0] + 1.0 + noise * rng.normal(size=n)
    return record_of(np.hstack([x, y.reshape(-1, 1)]), f"lin{seed}")


class TestExecuteOperator:
    def spec(self, kind="linear-regression", **kw):
        base = dict(kind=kind, target_column="col1", seed=0)
        base.update(kw)
        return md.OperatorSpec(**base)

    def test_exact_linear_regression_scores_zero(self):
        result = md.execute_operator(linear_dataset(), self.spec())
        assert result.output == pytest.approx(0.0, abs=1e-9)

    def test_separable_classifier_scores_one(self):
        rng = np.random.default_rng(6)
        x = np.vstack([rng.normal(-3.0, 0.3, size=(20, 1)),
                       rng.normal(3.0, 0.3, size=(20, 1))])
        labels = np.array([0.0] * 20 + [1.0] * 20).reshape(-1, 1)
        record = record_of(np.hstack([x, labels]), "cls")
        spec = self.spec(kind="svm-sgd-classifier", epochs=100)
        result = md.execute_operator(record, spec)
        assert result.output == 1.0

    def test_deterministic(self):
        record = linear_dataset(seed=7, noise=0.3)
        spec = self.spec()
        a = md.execute_operator(record, spec)
        b = md.execute_operator(record, spec)
        assert a.output == b.output

    def test_output_bounds(self):
        # classifier accuracy in [0, 1]; regressor RMSE >= 0
        reg = md.execute_operator(linear_dataset(seed=8, noise=0.5), self.spec())
        assert reg.output >= 0.0
        rng = np.random.default_rng(9)
        x = rng.normal(size=(40, 2))
        labels = (x[:, 0] + 0.3 * rng.normal(size=40) > 0).astype(float)
        record = record_of(np.hstack([x, labels.reshape(-1, 1)]), "cls2")
        spec = md.OperatorSpec(kind="mlp-classifier", target_column="col2",
                               epochs=50, seed=0)
        acc = md.execute_operator(record, spec)
        assert 0.0 <= acc.output <= 1.0

    def test_degenerate_target_rejected(self):
        values = np.hstack([np.random.default_rng(0).normal(size=(20, 1)),
                            np.full((20, 1), 3.0)])
        with pytest.raises(UnusableDatasetError):
            md.execute_operator(record_of(values, "flat"), self.spec())

    def test_too_few_rows_rejected(self):
        with pytest.raises(UnusableDatasetError):
            md.execute_operator(linear_dataset(n=8), self.spec())

    def test_missing_target_column(self):
        with pytest.raises(SchemaError):
            md.execute_operator(linear_dataset(), self.spec(target_column="nope"))


class TestSurrogate:
    def embeddings(self, count=8, k=3, seed=0):
        rng = np.random.default_rng(seed)
        return [vz.Embedding(f"e{i}", rng.normal(size=k), "v") for i in range(count)]

    def test_constant_outputs(self):
        pairs = [(e, 4.25) for e in self.embeddings()]
        surrogate = md.build_surrogate(pairs, kind="linear")
        for e in self.embeddings(seed=1):
            assert md.predict(surrogate, e) == pytest.approx(4.25, abs=1e-8)

    def test_exact_hyperplane_interpolation(self):
        embeddings = self.embeddings(count=10)
        w = np.array([1.0, -2.0, 0.5])
        pairs = [(e, float(e.z @ w + 3.0)) for e in embeddings]
        surrogate = md.build_surrogate(pairs, kind="linear")
        for e, target in pairs:
            assert md.predict(surrogate, e) == pytest.approx(target, abs=1e-8)

    def test_mlp_surrogate_improves_over_initialization(self):
        embeddings = self.embeddings(count=20, seed=2)
        rng = np.random.default_rng(3)
        pairs = [(e, float(rng.normal())) for e in embeddings]
        surrogate = md.build_surrogate(pairs, kind="mlp", seed=0)
        Z = np.stack([e.z for e, _ in pairs])
        y = np.array([t for _, t in pairs])
        trained_mse = np.mean((surrogate.net.predict(Z) - y) ** 2)
        fresh = md.MlpNet(3, (16,), surrogate.net.params.seed, "regression")
        initial_mse = np.mean((fresh.predict(Z) - y) ** 2)
        assert trained_mse < initial_mse

    def test_auto_kind_threshold(self):
        pairs = [(e, 1.0) for e in self.embeddings(count=5)]
        assert md.build_surrogate(pairs, kind="auto").kind == "linear"
        pairs = [(e, 1.0) for e in self.embeddings(count=12)]
        assert md.build_surrogate(pairs, kind="auto", mlp_threshold=10).kind == "mlp"

    def test_too_few_pairs_rejected(self):
        with pytest.raises(DataError):
            md.build_surrogate([(self.embeddings()[0], 1.0)])

    def test_dimension_mismatch_rejected(self):
        pairs = [(e, 1.0) for e in self.embeddings()]
        surrogate = md.build_surrogate(pairs, kind="linear")
        with pytest.raises(ContractError):
            md.predict(surrogate, np.zeros(7))

    def test_prediction_repeatable(self):
        pairs = [(e, float(i)) for i, e in enumerate(self.embeddings())]
        surrogate = md.build_surrogate(pairs, kind="linear")
        z = np.array([0.3, -0.1, 0.8])
        assert md.predict(surrogate, z) == md.predict(surrogate, z)


def memory_registry(records):
    entries = [lake.RegistryEntry(r.id, r.name, f"mem://{r.id}", r.rows, r.cols)
               for r in records]
    vocabulary = lake.Vocabulary(tuple(
        lake.SourceColumn(f"col{j}", "numeric") for j in range(records[0].cols)))
    stats = lake.compute_lake_stats(records)
    return lake.LakeRegistry(entries, lake.IngestOptions(), vocabulary, stats,
                             {r.id: r for r in records})


def toy_model():
    return vz.build_model(vz.VectorizerConfig(
        k=4, n_layers=1, n_heads=2, d_model=8, max_rows=32, max_cols=4,
        epochs=1, seed=0))


class TestModelAndPredict:
    def build_world(self, count=24, seed=0):
        rng = np.random.default_rng(seed)
        records = [record_of(rng.normal(loc=rng.uniform(-2, 2), size=(30, 3)), f"ds{i:02d}")
                   for i in range(count)]
        registry = memory_registry(records)
        model = toy_model()
        store = lake.vectorize_lake(registry, model).store
        return registry, model, store

    def test_exact_linear_map_recovered(self):
        registry, model, store = self.build_world()
        rng = np.random.default_rng(1)
        w = rng.normal(size=4)
        b = 0.7

        def phi(record):
            z = store.get(record.id).z
            return md.OperatorResult(record.id, float(z @ w + b), 1e-6)

        spec = md.OperatorSpec(kind="linear-regression", target_column="col2", seed=0)
        params = SelectionParams(method="euclidean", fraction=1.0, seed=0)
        for entry in registry.entries[:6]:
            query = registry.record(entry.id)
            outcome = md.model_and_predict(query, registry, store, model, params, spec,
                                           surrogate_kind="linear", execute=phi)
            truth = float(store.get(query.id).z @ w + b)
            assert abs(outcome.prediction - truth) < 1e-6
            assert query.id not in outcome.selection.ids

    def test_ledger_accounting(self):
        registry, model, store = self.build_world(count=12)
        clock = TickClock()
        spec = md.OperatorSpec(kind="linear-regression", target_column="col2", seed=0)
        params = SelectionParams(method="euclidean", fraction=0.5, seed=0)
        query = registry.record(registry.entries[0].id)
        outcome = md.model_and_predict(query, registry, store, model, params, spec,
                                       clock=clock)
        ledger = outcome.ledger
        for value in (ledger.t_vec, ledger.t_sim, ledger.t_simop, ledger.t_pred):
            assert value >= 0.0
        assert ledger.t_simop == pytest.approx(
            sum(r.elapsed for r in outcome.operator_results))

    def test_deterministic_given_seeds(self):
        registry, model, store = self.build_world(count=16)
        spec = md.OperatorSpec(kind="linear-regression", target_column="col2", seed=3)
        params = SelectionParams(method="cosine", fraction=0.4, seed=5)
        query = registry.record(registry.entries[2].id)
        a = md.model_and_predict(query, registry, store, model, params, spec)
        b = md.model_and_predict(query, registry, store, model, params, spec)
        assert a.prediction == b.prediction
        assert a.selection.ids == b.selection.ids

    def test_stage_tagging_on_errors(self):
        registry, model, store = self.build_world(count=6)
        spec = md.OperatorSpec(kind="linear-regression", target_column="absent", seed=0)
        params = SelectionParams(method="euclidean", fraction=1.0, seed=0)
        query = registry.record(registry.entries[0].id)
        with pytest.raises(SchemaError) as excinfo:
            md.model_and_predict(query, registry, store, model, params, spec)
        assert "stage operator" in str(excinfo.value)
