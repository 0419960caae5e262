"""Run configuration: a flat key-value file plus --set overrides.

Format: one `section.key = value` per line, `#` comments, blank lines
ignored. Unknown keys are rejected so typos fail loudly. Every key can
be overridden on the command line with `--set section.key=value`.
"""

from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .modelling import OperatorSpec
from .selection import SelectionParams
from .vectorizer import VectorizerConfig


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_int_list(raw: str):
    return tuple(int(part) for part in raw.split(",") if part.strip() != "")


def _parse_float_list(raw: str):
    return tuple(float(part) for part in raw.split(",") if part.strip() != "")


def _parse_str_list(raw: str):
    return tuple(part.strip() for part in raw.split(",") if part.strip() != "")


_PARSERS = {
    "str": lambda raw: raw.strip(),
    "int": lambda raw: int(raw),
    "float": lambda raw: float(raw),
    "bool": _parse_bool,
    "int_list": _parse_int_list,
    "float_list": _parse_float_list,
    "str_list": _parse_str_list,
}

# key -> (type name, default)
KEYS = {
    "seed": ("int", 0),
    "jobs": ("int", 1),
    "verbosity": ("int", 1),
    "out.dir": ("str", "out"),
    "lake.input_dir": ("str", ""),
    "lake.delimiter": ("str", ","),
    "lake.header": ("bool", True),
    "lake.target_column": ("str", ""),
    "query.path": ("str", ""),
    "vectorizer.k": ("int", 16),
    "vectorizer.n_layers": ("int", 2),
    "vectorizer.n_heads": ("int", 4),
    "vectorizer.d_model": ("int", 64),
    "vectorizer.max_rows": ("int", 3000),
    "vectorizer.max_cols": ("int", 64),
    "vectorizer.epochs": ("int", 50),
    "vectorizer.batch_size": ("int", 8),
    "vectorizer.kl_weight": ("float", 1.0),
    "vectorizer.learning_rate": ("float", 1e-3),
    "vectorizer.ffn_mult": ("int", 4),
    "selection.method": ("str", "euclidean"),
    "selection.lambda": ("float", 0.2),
    "selection.cluster_min": ("int", 2),
    "selection.cluster_max": ("int", 8),
    "selection.min_size": ("int", 1),
    "selection.max_size": ("int", 1000000),
    "selection.restarts": ("int", 1),
    "operator.kind": ("str", "linear-regression"),
    "operator.target_column": ("str", ""),
    "operator.train_fraction": ("float", 0.7),
    "operator.hidden": ("int_list", (16,)),
    "operator.epochs": ("int", 200),
    "operator.learning_rate": ("float", 0.01),
    "operator.regularization": ("float", 1e-4),
    "surrogate.kind": ("str", "auto"),
    "surrogate.mlp_threshold": ("int", 10),
    "experiment.name": ("str", "exp"),
    "experiment.arms": ("str_list", ("euclidean",)),
    "experiment.repetitions": ("int", 10),
    "experiment.sr_fraction": ("float", 0.2),
    "experiment.amortized_operators": ("int", 1),
    "timing.mode": ("str", "tick"),
    "predict.compute_truth": ("bool", False),
    "synth.rows": ("int_list", (10, 100, 500, 1000)),
    "synth.cols": ("int_list", (3, 10, 20, 30)),
    "synth.kind": ("str", "linear"),
    "synth.noise": ("float", 0.1),
    "synth.per_cell": ("int", 1),
    "synth.noise_fractions": ("float_list", ()),
    "synth.noise_sigma": ("float", 1.0),
    "synth.noise_scope": ("str", "all"),
}


@dataclass
class RunConfig:
    """Typed view over the parsed key-value map."""

    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @property
    def out_dir(self) -> Path:
        return Path(self.values["out.dir"])

    def vectorizer_config(self) -> VectorizerConfig:
        return VectorizerConfig(
            k=self.values["vectorizer.k"],
            n_layers=self.values["vectorizer.n_layers"],
            n_heads=self.values["vectorizer.n_heads"],
            d_model=self.values["vectorizer.d_model"],
            max_rows=self.values["vectorizer.max_rows"],
            max_cols=self.values["vectorizer.max_cols"],
            epochs=self.values["vectorizer.epochs"],
            batch_size=self.values["vectorizer.batch_size"],
            seed=self.values["seed"],
            kl_weight=self.values["vectorizer.kl_weight"],
            learning_rate=self.values["vectorizer.learning_rate"],
            ffn_mult=self.values["vectorizer.ffn_mult"],
        )

    def selection_params(self, seed: int | None = None, method: str | None = None) -> SelectionParams:
        return SelectionParams(
            method=method or self.values["selection.method"],
            fraction=self.values["selection.lambda"],
            cluster_range=(self.values["selection.cluster_min"],
                           self.values["selection.cluster_max"]),
            min_size=self.values["selection.min_size"],
            max_size=self.values["selection.max_size"],
            seed=self.seed if seed is None else seed,
            restarts=self.values["selection.restarts"],
        )

    def operator_spec(self) -> OperatorSpec:
        target = self.values["operator.target_column"] or self.values["lake.target_column"]
        if not target:
            raise ConfigError("operator.target_column (or lake.target_column) must be set")
        return OperatorSpec(
            kind=self.values["operator.kind"],
            target_column=target,
            train_fraction=self.values["operator.train_fraction"],
            seed=self.seed,
            hidden=tuple(self.values["operator.hidden"]),
            epochs=self.values["operator.epochs"],
            learning_rate=self.values["operator.learning_rate"],
            regularization=self.values["operator.regularization"],
        )


def _parse_assignment(line: str, origin: str):
    if "=" not in line:
        raise ConfigError(f"{origin}: expected 'key = value', got {line!r}")
    key, _, raw = line.partition("=")
    key = key.strip()
    if key not in KEYS:
        raise ConfigError(f"{origin}: unknown configuration key {key!r}")
    type_name, _ = KEYS[key]
    try:
        value = _PARSERS[type_name](raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{origin}: bad value for {key}: {exc}") from exc
    return key, value


def load_config(path=None, overrides=()) -> RunConfig:
    """Parse the optional config file, then apply --set overrides in order."""
    values = {key: default for key, (_, default) in KEYS.items()}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            key, value = _parse_assignment(stripped, f"{path}:{lineno}")
            values[key] = value
    for assignment in overrides:
        key, value = _parse_assignment(assignment, f"--set {assignment!r}")
        values[key] = value
    return RunConfig(values)
