"""Project an entire m x n numerical dataset into a k-dimensional vector.

A dataset enters the model one token per tuple: the row's values are
zero-padded to `max_cols` and two normalized shape hints (column count,
row count) are appended, so tables of different shapes share one
encoder. Tokens pass through pre-LN transformer blocks, are mean-pooled,
and two affine heads emit the mean and log-variance of the latent
distribution. A mirrored decoder reconstructs the padded values from a
sampled latent during training; inference returns the mean, so
embeddings are deterministic.
"""

import hashlib
import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import nn_core as nn
from .errors import (
    ContractError,
    DataError,
    EmptyInputError,
    TrainingDivergedError,
    UnsupportedWidthError,
)
from .nn_core import autograd as T
from .seeding import derive_seed, rng_for

HINT_CHANNELS = 2


@dataclass(frozen=True)
class VectorizerConfig:
    """Hyperparameters of the dataset encoder/decoder pair."""

    k: int = 16
    n_layers: int = 8
    n_heads: int = 4
    d_model: int = 64
    max_rows: int = 3000
    max_cols: int = 64
    epochs: int = 100
    batch_size: int = 8
    seed: int = 0
    kl_weight: float = 1.0
    learning_rate: float = 1e-3
    ffn_mult: int = 4
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.k < 2:
            raise ContractError("latent dimension k must be >= 2")
        if self.n_layers < 1:
            raise ContractError("n_layers must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ContractError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.max_rows < 1 or self.max_cols < 1:
            raise ContractError("max_rows and max_cols must be >= 1")
        if self.kl_weight <= 0.0:
            raise ContractError("kl_weight must be > 0")

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)

    @classmethod
    def from_json(cls, blob: str) -> "VectorizerConfig":
        return cls(**json.loads(blob))


@dataclass
class LatentStats:
    """Mean and log-variance of the latent distribution, each length k."""

    mu: np.ndarray
    logvar: np.ndarray


@dataclass(frozen=True)
class Embedding:
    """A dataset's latent vector, tagged with the producing model version."""

    dataset_id: str
    z: np.ndarray
    model_version: str


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    mean_kl: float
    mean_recon: float


class VectorizerModel:
    """Encoder/decoder parameter sets plus their configuration."""

    def __init__(self, config: VectorizerConfig, encoder: nn.ParamSet, decoder: nn.ParamSet):
        self.config = config
        self.encoder = encoder
        self.decoder = decoder

    def all_params(self) -> dict:
        merged = {f"enc.{name}": t for name, t in self.encoder.items()}
        merged.update({f"dec.{name}": t for name, t in self.decoder.items()})
        return merged

    @property
    def version(self) -> str:
        """Content hash of config + parameters; changes with any parameter."""
        h = hashlib.sha256()
        h.update(self.config.to_json().encode("utf-8"))
        for name, t in sorted(self.all_params().items()):
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def build_model(config: VectorizerConfig) -> VectorizerModel:
    """Fresh model, deterministically initialized from config.seed."""
    d = config.d_model
    token_width = config.max_cols + HINT_CHANNELS

    encoder = nn.ParamSet(derive_seed(config.seed, "encoder"))
    encoder.add("tok.w", (token_width, d))
    encoder.add("tok.b", (d,), init="zeros")
    for i in range(config.n_layers):
        nn.declare_block(encoder, f"block{i}", d, ffn_mult=config.ffn_mult)
    encoder.add("mu.w", (d, config.k))
    encoder.add("mu.b", (config.k,), init="zeros")
    encoder.add("logvar.w", (d, config.k))
    encoder.add("logvar.b", (config.k,), init="zeros")

    decoder = nn.ParamSet(derive_seed(config.seed, "decoder"))
    decoder.add("lift.w", (config.k, d))
    decoder.add("lift.b", (d,), init="zeros")
    decoder.add("pos", (config.max_rows, d))
    for i in range(config.n_layers):
        nn.declare_block(decoder, f"block{i}", d, ffn_mult=config.ffn_mult)
    decoder.add("out.w", (d, config.max_cols))
    decoder.add("out.b", (config.max_cols,), init="zeros")

    return VectorizerModel(config, encoder, decoder)


def tokenize(dataset, config: VectorizerConfig):
    """Turn a dataset into per-tuple token features plus a row mask.

    Each kept row becomes `values padded to max_cols` followed by the
    (n/max_cols, m/max_rows) shape hints; rows beyond max_rows are
    dropped from the end with a warning. Returns (features, mask) with
    features of shape [r, max_cols + 2].
    """
    values = np.asarray(dataset.values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
        raise EmptyInputError(f"dataset {getattr(dataset, 'id', '?')} is empty")
    m, n = values.shape
    if n > config.max_cols:
        raise UnsupportedWidthError(
            f"dataset has {n} columns but the model supports at most {config.max_cols}"
        )
    if m > config.max_rows:
        warnings.warn(
            f"dataset has {m} rows; keeping the first {config.max_rows}",
            stacklevel=2,
        )
    r = min(m, config.max_rows)
    features = np.zeros((r, config.max_cols + HINT_CHANNELS))
    features[:, :n] = values[:r]
    features[:, config.max_cols] = n / config.max_cols
    features[:, config.max_cols + 1] = m / config.max_rows
    mask = np.ones(r, dtype=bool)
    return features, mask


def _encode_tokens(features: np.ndarray, mask: np.ndarray, model: VectorizerModel):
    """Token features -> (mu, logvar) tensors of shape (1, k)."""
    cfg = model.config
    enc = model.encoder
    x = T.tensor(features)
    h = nn.affine(x, enc["tok.w"], enc["tok.b"])
    for i in range(cfg.n_layers):
        h = nn.pre_ln_block(h, enc, cfg.n_heads, prefix=f"block{i}", eps=cfg.ln_eps)
    weights = mask.astype(np.float64)
    pool = T.tensor((weights / weights.sum()).reshape(1, -1))
    pooled = T.matmul(pool, h)
    mu = nn.affine(pooled, enc["mu.w"], enc["mu.b"])
    logvar = nn.affine(pooled, enc["logvar.w"], enc["logvar.b"])
    return mu, logvar


def encode(dataset, model: VectorizerModel) -> LatentStats:
    """Deterministic latent statistics for a dataset."""
    features, mask = tokenize(dataset, model.config)
    mu, logvar = _encode_tokens(features, mask, model)
    return LatentStats(mu=mu.data.reshape(-1).copy(), logvar=logvar.data.reshape(-1).copy())


def reparameterize(stats: LatentStats, seed: int) -> np.ndarray:
    """z = mu + exp(logvar / 2) * eps with eps ~ N(0, I) from the seed."""
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(stats.mu.shape[0])
    return stats.mu + np.exp(0.5 * stats.logvar) * eps


def _decode_latent(z: T.Tensor, row_count: int, model: VectorizerModel) -> T.Tensor:
    """Latent (1, k) tensor -> reconstructed values (row_count, max_cols)."""
    cfg = model.config
    dec = model.decoder
    if not 1 <= row_count <= cfg.max_rows:
        raise ContractError(
            f"row_count must be in [1, {cfg.max_rows}], got {row_count}"
        )
    lifted = nn.affine(z, dec["lift.w"], dec["lift.b"])
    ones = T.tensor(np.ones((row_count, 1)))
    h = T.add(T.matmul(ones, lifted), T.slice_rows(dec["pos"], 0, row_count))
    for i in range(cfg.n_layers):
        h = nn.pre_ln_block(h, dec, cfg.n_heads, prefix=f"block{i}", eps=cfg.ln_eps)
    return nn.affine(h, dec["out.w"], dec["out.b"])


def decode(z: np.ndarray, row_count: int, model: VectorizerModel) -> np.ndarray:
    """Reconstruct a row_count x max_cols value matrix from a latent vector."""
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    if z.shape[1] != model.config.k:
        raise ContractError(f"latent has length {z.shape[1]}, model expects {model.config.k}")
    return _decode_latent(T.tensor(z), row_count, model).data.copy()


def kl_term(stats: LatentStats) -> float:
    """Closed-form KL of N(mu, diag(exp(logvar))) against the standard normal.

    exp(logvar) - 1 - logvar is computed via expm1 so tiny logvar cannot
    cancel into a negative value; the result is >= 0 in exact arithmetic
    and stays so here.
    """
    mu = np.asarray(stats.mu, dtype=np.float64)
    logvar = np.asarray(stats.logvar, dtype=np.float64)
    return float(0.5 * np.sum((np.expm1(logvar) - logvar) + mu * mu))


def elbo_loss(x: np.ndarray, x_hat: np.ndarray, stats: LatentStats,
              kl_weight: float = 1.0) -> float:
    """Minimization objective: 0.5 * MSE(x, x_hat) + kl_weight * KL.

    This is the negative ELBO up to the constant of the unit-variance
    Gaussian likelihood; minimizing it maximizes the ELBO.
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ContractError(f"shape mismatch: x {x.shape} vs x_hat {x_hat.shape}")
    recon = 0.5 * float(np.mean((x - x_hat) ** 2))
    return recon + kl_weight * kl_term(stats)


def training_loss(dataset, model: VectorizerModel, eps: np.ndarray):
    """Build the differentiable -ELBO for one dataset with a fixed eps draw.

    Returns (loss tensor, reconstruction term, kl term); the scalar terms
    are detached floats for tracing.
    """
    cfg = model.config
    features, mask = tokenize(dataset, cfg)
    mu, logvar = _encode_tokens(features, mask, model)

    eps_t = T.tensor(np.asarray(eps, dtype=np.float64).reshape(1, cfg.k))
    sigma = T.exp(T.scale(logvar, 0.5))
    z = T.add(mu, T.mul(sigma, eps_t))

    r = features.shape[0]
    x_hat = _decode_latent(z, r, model)
    target = T.tensor(features[:, :cfg.max_cols])
    diff = T.sub(x_hat, target)
    recon = T.scale(T.sum_all(T.square(diff)), 0.5 / diff.data.size)

    # exp(logvar) + mu^2 - 1 - logvar, summed and halved
    kl_terms = T.sub(T.add(T.exp(logvar), T.square(mu)), T.add_const(logvar, 1.0))
    kl = T.scale(T.sum_all(kl_terms), 0.5)

    loss = T.add(recon, T.scale(kl, cfg.kl_weight))
    return loss, float(recon.data), float(kl.data)


def train(corpus, config: VectorizerConfig, progress=None):
    """Minibatch Adam on the reparameterized -ELBO over the corpus.

    Deterministic given config.seed. Returns (model, per-epoch trace).
    The decoder is exercised only here; inference never samples.
    """
    corpus = list(corpus)
    if not corpus:
        raise DataError("training corpus is empty")
    model = build_model(config)
    params = model.all_params()
    state = nn.AdamState(params)
    tape = nn.GradTape(params)

    trace = []
    for epoch in range(config.epochs):
        order = rng_for(config.seed, "train", "order", epoch).permutation(len(corpus))
        eps_rng = rng_for(config.seed, "train", "eps", epoch)
        losses, kls, recons = [], [], []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            tape.reset()
            batch_loss = None
            for idx in batch:
                eps = eps_rng.standard_normal(config.k)
                loss, recon, kl = training_loss(corpus[idx], model, eps)
                losses.append(float(loss.data))
                recons.append(recon)
                kls.append(kl)
                batch_loss = loss if batch_loss is None else T.add(batch_loss, loss)
            batch_loss = T.scale(batch_loss, 1.0 / len(batch))
            nn.backward(tape, batch_loss)
            nn.adam_step(params, tape.grads, state, lr=config.learning_rate)
        mean_loss = float(np.mean(losses))
        if not np.isfinite(mean_loss):
            raise TrainingDivergedError(epoch, mean_loss)
        trace.append(EpochStats(epoch, mean_loss, float(np.mean(kls)), float(np.mean(recons))))
        if progress is not None:
            progress(trace[-1])
    return model, trace


def vectorize(dataset, model: VectorizerModel) -> Embedding:
    """Deterministic embedding of a dataset: z is the encoder mean."""
    stats = encode(dataset, model)
    return Embedding(dataset_id=dataset.id, z=stats.mu.copy(), model_version=model.version)


def write_loss_trace(path, trace) -> None:
    """Loss trace CSV: epoch, mean_loss, mean_kl, mean_recon."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,mean_loss,mean_kl,mean_recon\n")
        for row in trace:
            fh.write(f"{row.epoch},{float(row.mean_loss)!r},{float(row.mean_kl)!r},{float(row.mean_recon)!r}\n")


def save_model(model: VectorizerModel, path) -> None:
    """Write the checkpoint: nn_core format with the config as preamble."""
    cfg = model.config
    arrays = {name: t.data for name, t in model.all_params().items()}
    nn.save_params(
        path,
        (cfg.k, cfg.n_layers, cfg.n_heads, cfg.d_model),
        arrays,
        preamble=cfg.to_json().encode("utf-8"),
    )


def load_model(path) -> VectorizerModel:
    """Rebuild a model from a checkpoint written by save_model."""
    header, preamble, arrays = nn.load_params(path)
    config = VectorizerConfig.from_json(preamble.decode("utf-8"))
    if header != (config.k, config.n_layers, config.n_heads, config.d_model):
        raise DataError(f"checkpoint header disagrees with its config preamble: {path}")
    model = build_model(config)
    model.encoder.load_arrays(
        {name[len("enc."):]: arr for name, arr in arrays.items() if name.startswith("enc.")}
    )
    model.decoder.load_arrays(
        {name[len("dec."):]: arr for name, arr in arrays.items() if name.startswith("dec.")}
    )
    return model
