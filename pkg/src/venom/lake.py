"""Data-lake management: CSV ingestion, one-hot encoding, normalization,
a dataset registry, and the persistent embedding store.

Vectorizing a lake is a one-time cost: embeddings are stored per model
version and reruns skip datasets that are already covered.
"""

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ContractError,
    DataError,
    EmptyInputError,
    MissingValueError,
    RaggedRowsError,
    SchemaError,
    StaleStoreError,
    UnknownCategoryError,
    UnparseableValueError,
)
from .timing import WallClock
from .vectorizer import Embedding, vectorize


@dataclass(frozen=True)
class IngestOptions:
    header: bool = True
    delimiter: str = ","
    target_column: str | None = None

    def canonical(self) -> str:
        return json.dumps(
            {"header": self.header, "delimiter": self.delimiter,
             "target_column": self.target_column},
            sort_keys=True,
        )


@dataclass(frozen=True)
class ColumnInfo:
    """Descriptor of one column in the expanded (post one-hot) matrix."""

    source: str
    kind: str  # "numeric" | "one-hot"
    category: str | None = None


@dataclass
class DatasetRecord:
    """One numerical tabular dataset plus its schema and provenance."""

    id: str
    name: str
    values: np.ndarray
    schema: tuple[ColumnInfo, ...]
    provenance: dict = field(default_factory=dict)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def validate(self) -> None:
        if self.values.ndim != 2 or self.rows < 1 or self.cols < 1:
            raise DataError(f"dataset {self.id}: values must be a non-empty matrix")
        if not np.isfinite(self.values).all():
            raise DataError(f"dataset {self.id}: non-finite values")
        if len(self.schema) != self.cols:
            raise SchemaError(f"dataset {self.id}: schema length != column count")
        # One-hot groups row-sum to 1; 0 is tolerated only for rows whose
        # category is missing from this file but present in the lake.
        for source in {c.source for c in self.schema if c.kind == "one-hot"}:
            idx = [j for j, c in enumerate(self.schema) if c.source == source]
            sums = self.values[:, idx].sum(axis=1)
            if not np.isin(sums, (0.0, 1.0)).all():
                raise SchemaError(f"dataset {self.id}: one-hot group {source!r} corrupt")


@dataclass(frozen=True)
class SourceColumn:
    name: str
    kind: str  # "numeric" | "categorical"
    categories: tuple[str, ...] = ()


@dataclass(frozen=True)
class Vocabulary:
    """Per-source-column kinds and the lake-global sorted category lists."""

    columns: tuple[SourceColumn, ...]

    def expanded_width(self) -> int:
        return sum(len(c.categories) if c.kind == "categorical" else 1 for c in self.columns)


def _read_raw(path, options: IngestOptions):
    """Read a CSV into (header names, list of row string-lists)."""
    raw = Path(path).read_bytes()
    text = raw.decode("utf-8")
    rows = [row for row in csv.reader(text.splitlines(), delimiter=options.delimiter)]
    if not rows:
        raise EmptyInputError(f"empty file: {path}")
    if options.header:
        names = [cell.strip() for cell in rows[0]]
        body = rows[1:]
    else:
        names = [f"col{i}" for i in range(len(rows[0]))]
        body = rows
    if not body:
        raise EmptyInputError(f"no data rows in: {path}")
    width = len(names)
    for i, row in enumerate(body):
        if len(row) != width:
            raise RaggedRowsError(
                f"{path}: row {i + 1} has {len(row)} cells, expected {width}"
            )
    return names, [[cell.strip() for cell in row] for row in body], raw


def _parses_as_float(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def scan_csv(path, options: IngestOptions):
    """Structural check without ingesting: shape, rectangularity, no
    missing cells. Returns (header names, body rows)."""
    names, body, _ = _read_raw(path, options)
    for i, row in enumerate(body):
        for j, cell in enumerate(row):
            if cell == "":
                raise MissingValueError(f"{path}: empty cell at row {i + 1}, column {j + 1}")
    return names, body


def build_vocabulary(paths, options: IngestOptions) -> Vocabulary:
    """Scan files once to fix column kinds and sorted category lists.

    A column is numeric when every cell in every file parses as a float;
    otherwise it is categorical and its vocabulary is the sorted union of
    the observed values. Deterministic in the file contents.
    """
    paths = list(paths)
    if not paths:
        raise EmptyInputError("no input files")
    names = None
    numeric = None
    categories = None
    for path in paths:
        file_names, body, _ = _read_raw(path, options)
        if names is None:
            names = file_names
            numeric = [True] * len(names)
            categories = [set() for _ in names]
        elif len(file_names) != len(names):
            raise SchemaError(
                f"{path}: {len(file_names)} columns, expected {len(names)}"
            )
        elif options.header and file_names != names:
            raise SchemaError(f"{path}: header names differ from {names}")
        for i, row in enumerate(body):
            for j, cell in enumerate(row):
                if cell == "":
                    raise MissingValueError(f"{path}: empty cell at row {i + 1}, column {j + 1}")
                if numeric[j] and not _parses_as_float(cell):
                    numeric[j] = False
                # Collect unconditionally: a later file may demote the
                # column to categorical, and then every value seen so far
                # belongs in its vocabulary.
                categories[j].add(cell)

    columns = []
    for j, name in enumerate(names):
        if numeric[j]:
            columns.append(SourceColumn(name, "numeric"))
        else:
            columns.append(SourceColumn(name, "categorical", tuple(sorted(categories[j]))))
    return Vocabulary(tuple(columns))


def dataset_id(raw_bytes: bytes, options: IngestOptions) -> str:
    """Stable id: content hash of the raw file plus the ingestion options."""
    h = hashlib.sha256()
    h.update(raw_bytes)
    h.update(options.canonical().encode("utf-8"))
    return h.hexdigest()[:16]


def ingest_csv(path, options: IngestOptions, vocabulary: Vocabulary | None = None) -> DatasetRecord:
    """Parse one CSV into a DatasetRecord.

    Numeric columns parse as floats; categorical columns are one-hot
    expanded against the (lake-global) vocabulary. Missing cells are an
    error: imputation would contaminate the distribution signal.
    """
    names, body, raw = _read_raw(path, options)
    if vocabulary is None:
        vocabulary = build_vocabulary([path], options)
    if len(vocabulary.columns) != len(names):
        raise SchemaError(
            f"{path}: {len(names)} columns, vocabulary describes {len(vocabulary.columns)}"
        )

    schema = []
    for col in vocabulary.columns:
        if col.kind == "numeric":
            schema.append(ColumnInfo(col.name, "numeric"))
        else:
            schema.extend(ColumnInfo(col.name, "one-hot", cat) for cat in col.categories)

    values = np.zeros((len(body), len(schema)))
    for i, row in enumerate(body):
        out_j = 0
        for j, col in enumerate(vocabulary.columns):
            cell = row[j]
            if cell == "":
                raise MissingValueError(f"{path}: empty cell at row {i + 1}, column {j + 1}")
            if col.kind == "numeric":
                try:
                    values[i, out_j] = float(cell)
                except ValueError:
                    raise UnparseableValueError(
                        f"{path}: row {i + 1}, column {col.name!r}: {cell!r} is not numeric"
                    ) from None
                out_j += 1
            else:
                try:
                    hot = col.categories.index(cell)
                except ValueError:
                    raise UnknownCategoryError(
                        f"{path}: row {i + 1}, column {col.name!r}: category {cell!r} "
                        "not in the lake vocabulary"
                    ) from None
                values[i, out_j + hot] = 1.0
                out_j += len(col.categories)

    record = DatasetRecord(
        id=dataset_id(raw, options),
        name=Path(path).stem,
        values=values,
        schema=tuple(schema),
        provenance={"path": str(path), "options": options.canonical()},
    )
    record.validate()
    return record


@dataclass
class LakeStats:
    """Per-column mean/std over the union of all lake rows.

    Column j is aggregated over every dataset that has at least j+1
    columns, so lakes with heterogeneous widths still normalize
    consistently.
    """

    mean: np.ndarray
    std: np.ndarray

    def covers(self, n_cols: int) -> bool:
        return n_cols <= self.mean.shape[0]


def compute_lake_stats(records) -> LakeStats:
    records = list(records)
    if not records:
        raise EmptyInputError("cannot compute statistics of an empty lake")
    width = max(r.cols for r in records)
    mean = np.zeros(width)
    std = np.zeros(width)
    for j in range(width):
        column = np.concatenate([r.values[:, j] for r in records if r.cols > j])
        mean[j] = column.mean()
        std[j] = column.std()
    return LakeStats(mean=mean, std=std)


def normalize(record: DatasetRecord, stats: LakeStats) -> DatasetRecord:
    """Z-score each column with lake-level statistics; std-0 columns map to 0."""
    if not stats.covers(record.cols):
        raise SchemaError(
            f"dataset {record.id}: {record.cols} columns exceed the lake statistics"
        )
    mean = stats.mean[: record.cols]
    std = stats.std[: record.cols]
    scaled = np.where(std > 0.0, (record.values - mean) / np.where(std > 0.0, std, 1.0), 0.0)
    return DatasetRecord(record.id, record.name, scaled, record.schema, dict(record.provenance))


def denormalize(record: DatasetRecord, stats: LakeStats) -> DatasetRecord:
    """Inverse of normalize given the same statistics."""
    if not stats.covers(record.cols):
        raise SchemaError(
            f"dataset {record.id}: {record.cols} columns exceed the lake statistics"
        )
    mean = stats.mean[: record.cols]
    std = stats.std[: record.cols]
    restored = record.values * std + mean
    return DatasetRecord(record.id, record.name, restored, record.schema, dict(record.provenance))


@dataclass(frozen=True)
class RegistryEntry:
    id: str
    name: str
    path: str
    rows: int
    cols: int


class LakeRegistry:
    """Ordered dataset collection plus lake-level preprocessing state."""

    def __init__(self, entries, options: IngestOptions, vocabulary: Vocabulary,
                 stats: LakeStats, records=None):
        ids = [e.id for e in entries]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate dataset ids in registry")
        self.entries = list(entries)
        self.options = options
        self.vocabulary = vocabulary
        self.stats = stats
        self._records = dict(records or {})

    @classmethod
    def build(cls, paths, options: IngestOptions) -> "LakeRegistry":
        """Ingest every file, fixing the vocabulary and statistics once."""
        paths = sorted(str(p) for p in paths)
        vocabulary = build_vocabulary(paths, options)
        records = [ingest_csv(p, options, vocabulary) for p in paths]
        stats = compute_lake_stats(records)
        entries = [
            RegistryEntry(r.id, r.name, str(p), r.rows, r.cols)
            for r, p in zip(records, paths)
        ]
        return cls(entries, options, vocabulary, stats, {r.id: r for r in records})

    def record(self, dataset_id: str) -> DatasetRecord:
        if dataset_id not in self._records:
            entry = next((e for e in self.entries if e.id == dataset_id), None)
            if entry is None:
                raise DataError(f"unknown dataset id: {dataset_id}")
            record = ingest_csv(entry.path, self.options, self.vocabulary)
            if record.id != dataset_id:
                raise DataError(
                    f"{entry.path}: content changed since the manifest was written "
                    f"({record.id} != {dataset_id})"
                )
            self._records[dataset_id] = record
        return self._records[dataset_id]

    def records(self):
        return [self.record(e.id) for e in self.entries]

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "name", "path", "rows", "cols"])
            for e in self.entries:
                writer.writerow([e.id, e.name, e.path, e.rows, e.cols])
        with open(out / "vocabulary.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "name", "kind", "category"])
            for j, col in enumerate(self.vocabulary.columns):
                if col.kind == "numeric":
                    writer.writerow([j, col.name, "numeric", ""])
                else:
                    for cat in col.categories:
                        writer.writerow([j, col.name, "categorical", cat])
        with open(out / "lake_stats.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["column", "mean", "std"])
            for j in range(self.stats.mean.shape[0]):
                writer.writerow([j, repr(float(self.stats.mean[j])), repr(float(self.stats.std[j]))])
        (out / "ingest_options.json").write_text(self.options.canonical(), encoding="utf-8")

    @classmethod
    def load(cls, out_dir) -> "LakeRegistry":
        out = Path(out_dir)
        manifest = out / "manifest.csv"
        if not manifest.exists():
            raise DataError(f"no manifest at {manifest}")
        opts = json.loads((out / "ingest_options.json").read_text(encoding="utf-8"))
        options = IngestOptions(**opts)
        entries = []
        with open(manifest, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                entries.append(RegistryEntry(row["id"], row["name"], row["path"],
                                             int(row["rows"]), int(row["cols"])))
        by_index: dict[int, list] = {}
        names: dict[int, str] = {}
        kinds: dict[int, str] = {}
        with open(out / "vocabulary.csv", newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                j = int(row["index"])
                names[j] = row["name"]
                kinds[j] = row["kind"]
                if row["kind"] == "categorical":
                    by_index.setdefault(j, []).append(row["category"])
        columns = []
        for j in sorted(names):
            if kinds[j] == "numeric":
                columns.append(SourceColumn(names[j], "numeric"))
            else:
                columns.append(SourceColumn(names[j], "categorical", tuple(by_index[j])))
        means, stds = [], []
        with open(out / "lake_stats.csv", newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                means.append(float(row["mean"]))
                stds.append(float(row["std"]))
        stats = LakeStats(np.array(means), np.array(stds))
        return cls(entries, options, Vocabulary(tuple(columns)), stats)


class EmbeddingStore:
    """dataset_id -> Embedding map, all produced by one model version."""

    def __init__(self, model_version: str, k: int):
        self.model_version = model_version
        self.k = int(k)
        self._by_id: dict[str, Embedding] = {}

    def add(self, embedding: Embedding) -> None:
        if embedding.model_version != self.model_version:
            raise StaleStoreError(
                f"embedding version {embedding.model_version} != store version "
                f"{self.model_version}"
            )
        if embedding.z.shape != (self.k,):
            raise ContractError(f"embedding length {embedding.z.shape} != k={self.k}")
        self._by_id[embedding.dataset_id] = embedding

    def get(self, dataset_id: str) -> Embedding:
        return self._by_id[dataset_id]

    def ids(self):
        return sorted(self._by_id)

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, dataset_id: str) -> bool:
        return dataset_id in self._by_id

    def ensure_version(self, model_version: str) -> None:
        if self.model_version != model_version:
            raise StaleStoreError(
                f"store version {self.model_version} does not match model "
                f"version {model_version}"
            )

    def save(self, path) -> None:
        """Line-oriented, tab-separated; floats as shortest round-trip reprs."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{self.model_version}\t{self.k}\n")
            for dataset_id in self.ids():
                emb = self._by_id[dataset_id]
                cells = [dataset_id, emb.model_version, str(self.k)]
                cells.extend(repr(float(v)) for v in emb.z)
                fh.write("\t".join(cells) + "\n")

    @classmethod
    def load(cls, path) -> "EmbeddingStore":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.splitlines()
        if not lines:
            raise DataError(f"empty embedding store: {path}")
        header = lines[0].split("\t")
        if len(header) != 2:
            raise DataError(f"malformed embedding store header: {path}")
        try:
            store = cls(header[0], int(header[1]))
            for line in lines[1:]:
                cells = line.split("\t")
                if len(cells) != 3 + store.k:
                    raise DataError(f"malformed embedding store row: {line[:60]}...")
                dataset_id, version, k = cells[0], cells[1], int(cells[2])
                if k != store.k:
                    raise DataError(f"row k={k} disagrees with header k={store.k}")
                z = np.array([float(c) for c in cells[3:]])
                store.add(Embedding(dataset_id, z, version))
        except (ValueError, IndexError) as exc:
            raise DataError(f"cannot parse embedding store {path}: {exc}") from exc
        return store


@dataclass
class VectorizeLakeResult:
    store: "EmbeddingStore"
    t_vec: float
    failures: list
    fresh: int
    per_dataset: dict  # dataset_id -> seconds (sequential runs only)


def vectorize_lake(registry: LakeRegistry, model, store: EmbeddingStore | None = None,
                   clock=None, jobs: int = 1) -> "VectorizeLakeResult":
    """Embed every registered dataset, skipping ids already in the store.

    The store keeps only successes; failures are collected per dataset.
    t_vec covers the whole sweep (so it bounds the per-dataset times from
    above). With jobs > 1 datasets embed on worker threads (the trained
    model is immutable); results merge in registry order, so output is
    identical to the sequential run.
    """
    clock = clock or WallClock()
    version = model.version
    if store is None:
        store = EmbeddingStore(version, model.config.k)
    else:
        store.ensure_version(version)

    pending = [e.id for e in registry.entries if e.id not in store]
    failures = []
    per_dataset = {}
    start = clock.now()

    def embed(dataset_id):
        record = normalize(registry.record(dataset_id), registry.stats)
        return vectorize(record, model)

    results = {}
    if jobs > 1 and len(pending) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {dataset_id: pool.submit(embed, dataset_id) for dataset_id in pending}
        for dataset_id in pending:
            try:
                results[dataset_id] = futures[dataset_id].result()
            except DataError as exc:
                failures.append((dataset_id, exc))
    else:
        for dataset_id in pending:
            t0 = clock.now()
            try:
                results[dataset_id] = embed(dataset_id)
            except DataError as exc:
                failures.append((dataset_id, exc))
            per_dataset[dataset_id] = clock.now() - t0
    for dataset_id in pending:
        if dataset_id in results:
            store.add(results[dataset_id])
    t_vec = clock.now() - start
    return VectorizeLakeResult(store, t_vec, failures, len(results), per_dataset)
