"""Quantizer training on vector corpora.

Two regimes are covered: EMA codebook tracking (optionally with periodic
dead-code restarts) and the gradient-trained projected scheme, where a shared
linear projection pair and the code entries are optimized jointly by plain
gradient descent on

    total = reconstruction MSE + codebook_weight * codebook + commitment_weight * commitment

with the usual stop-gradient routing: the reconstruction term reaches the
projections through the straight-through composite, the codebook term moves
entries toward the (frozen) projected inputs, and the commitment term moves
the projected inputs toward the (frozen) quantized vectors. The routing is
implemented by snapshotting the detached quantities once per step, which
makes every loss term an ordinary smooth function of the parameters; see
`projected_loss` / `projected_grads`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import io as rvqio
from ._rng import as_generator
from .errors import NumericalError
from .rvq import PLAIN, PROJECTED, RvqQuantizer
from .vq import (
    COSINE,
    DEFAULT_DECAY,
    DEFAULT_EPSILON,
    EUCLIDEAN,
    Codebook,
    ProjectionPair,
    assign_batch,
    ema_update,
    fast_euclidean_assign,
    kmeans_init,
    restart_dead_codes,
)

SCHEME_EMA = "ema"
SCHEME_EMA_RESTART = "ema_restart"
SCHEME_PROJECTED = "projected"
TRAIN_SCHEMES = (SCHEME_EMA, SCHEME_EMA_RESTART, SCHEME_PROJECTED)

GAUSSIAN_MIXTURE = "gaussian_mixture"
FILE = "file"


@dataclass
class TrainConfig:
    scheme: str = SCHEME_EMA
    num_layers: int = 1
    codebook_size: int = 64
    latent_dim: int = 16
    quant_dim: int | None = None  # projected scheme only; defaults to latent_dim otherwise
    metric: str | None = None  # defaults: euclidean for EMA schemes, cosine for projected
    decay: float = DEFAULT_DECAY
    epsilon: float = DEFAULT_EPSILON
    commitment_weight: float = 0.25
    codebook_weight: float = 1.0
    learning_rate: float = 1e-3
    steps: int = 1000
    batch_size: int = 64
    seed: int = 0
    restart_period: int = 100
    restart_threshold: int = 1
    kmeans_iterations: int = 10
    init: str = "kmeans"  # or "random": moment-matched noise, no data placement

    def __post_init__(self):
        if self.scheme not in TRAIN_SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.init not in ("kmeans", "random"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.commitment_weight < 0 or self.codebook_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.scheme == SCHEME_PROJECTED:
            if self.quant_dim is None:
                raise ValueError("projected scheme requires quant_dim")
            if self.quant_dim > self.latent_dim:
                raise ValueError("quant_dim must be <= latent_dim")
        elif self.quant_dim is not None and self.quant_dim != self.latent_dim:
            raise ValueError("quant_dim only applies to the projected scheme")
        if self.restart_period < 1:
            raise ValueError("restart_period must be >= 1")

    @property
    def resolved_metric(self) -> str:
        if self.metric is not None:
            return self.metric
        return COSINE if self.scheme == SCHEME_PROJECTED else EUCLIDEAN

    @property
    def resolved_quant_dim(self) -> int:
        return self.latent_dim if self.quant_dim is None else self.quant_dim


@dataclass
class CorpusSpec:
    kind: str = GAUSSIAN_MIXTURE
    num_components: int = 8
    dims: int = 16
    separation: float = 4.0
    count: int = 1024
    seed: int = 0
    path: str | None = None

    def __post_init__(self):
        if self.kind not in (GAUSSIAN_MIXTURE, FILE):
            raise ValueError(f"unknown corpus kind {self.kind!r}")
        if self.kind == GAUSSIAN_MIXTURE:
            if self.num_components < 1:
                raise ValueError("num_components must be >= 1")
            if self.separation <= 0:
                raise ValueError("separation must be positive")
            if self.count < 1:
                raise ValueError("count must be >= 1")
        elif not self.path:
            raise ValueError("file corpus requires a path")


@dataclass
class TrainReport:
    """Per-step loss series plus final utilization, one entry per step."""

    mse: np.ndarray
    codebook: np.ndarray
    commitment: np.ndarray
    utilization: np.ndarray  # per-layer used-code fraction over the corpus
    wall_clock: float


def make_corpus(spec: CorpusSpec) -> np.ndarray:
    """Materialize a corpus as a (count, dims) float64 array.

    Gaussian mixtures draw component means uniformly in the centered
    hypercube [-separation/2, separation/2]^dims, with unit-variance isotropic
    components and i.i.d. uniform component choice per vector.
    """
    if spec.kind == FILE:
        return rvqio.read_vectors(spec.path).astype(np.float64)
    rng = as_generator(spec.seed)
    half = spec.separation / 2.0
    means = rng.uniform(-half, half, size=(spec.num_components, spec.dims))
    which = rng.integers(0, spec.num_components, size=spec.count)
    return means[which] + rng.standard_normal((spec.count, spec.dims))


def straight_through(latent, quantized) -> np.ndarray:
    """Training-time composite: the value is `quantized`, exactly.

    By convention the quantization step is transparent to sensitivities, so
    any downstream gradient taken with respect to this composite applies to
    `latent` unchanged (identity Jacobian). The gradient side of the contract
    lives in `projected_grads`, which snapshots `quantized - latent` as a
    constant of the step.
    """
    latent = np.asarray(latent, dtype=np.float64)
    quantized = np.asarray(quantized, dtype=np.float64)
    if latent.shape != quantized.shape:
        raise ValueError(f"shape mismatch {latent.shape} vs {quantized.shape}")
    return quantized.copy()


@dataclass
class ProjectedParams:
    """Trainable parameters of the projected scheme: one shared pair + per-layer entries."""

    proj_in: np.ndarray  # (d, q)
    proj_out: np.ndarray  # (q, d)
    entries: list[np.ndarray]  # per layer, (K, q)

    def copy(self) -> "ProjectedParams":
        return ProjectedParams(
            proj_in=self.proj_in.copy(),
            proj_out=self.proj_out.copy(),
            entries=[e.copy() for e in self.entries],
        )


def projected_assign(params: ProjectedParams, batch: np.ndarray, metric: str) -> np.ndarray:
    """Residual-recursion code assignment in quantization space; returns (B, N) codes."""
    residual = batch @ params.proj_in
    codes = np.empty((batch.shape[0], len(params.entries)), dtype=np.int64)
    for n, entries in enumerate(params.entries):
        cb = Codebook.from_entries(entries, metric=metric)
        idx = assign_batch(residual, cb)
        residual = residual - entries[idx]
        codes[:, n] = idx
    return codes


def _quantized_sum(params: ProjectedParams, codes: np.ndarray) -> np.ndarray:
    q = np.zeros((codes.shape[0], params.proj_in.shape[1]))
    for n, entries in enumerate(params.entries):
        q += entries[codes[:, n]]
    return q


def projected_loss(
    params: ProjectedParams,
    batch: np.ndarray,
    codes: np.ndarray,
    z_ref: np.ndarray,
    q_ref: np.ndarray,
    *,
    codebook_weight: float,
    commitment_weight: float,
) -> float:
    """Total step loss with assignments and detached snapshots held fixed.

    z_ref and q_ref are the projected inputs and quantized sums captured at
    the step's base point; they implement the stop-gradients, so this is a
    smooth function of `params` and finite differences of it match
    `projected_grads` exactly.
    """
    b = batch.shape[0]
    z = batch @ params.proj_in
    q = _quantized_sum(params, codes)
    recon = (z + (q_ref - z_ref)) @ params.proj_out
    l_rec = float(((recon - batch) ** 2).sum()) / b
    l_cb = float(((q - z_ref) ** 2).sum()) / b
    l_cm = float(((q_ref - z) ** 2).sum()) / b
    return l_rec + codebook_weight * l_cb + commitment_weight * l_cm


def projected_grads(
    params: ProjectedParams,
    batch: np.ndarray,
    codes: np.ndarray,
    z_ref: np.ndarray,
    q_ref: np.ndarray,
    *,
    codebook_weight: float,
    commitment_weight: float,
) -> ProjectedParams:
    """Analytic gradients of `projected_loss` at the step's base point."""
    b = batch.shape[0]
    z = batch @ params.proj_in
    q = _quantized_sum(params, codes)

    st = z + (q_ref - z_ref)  # straight-through composite in quantization space
    resid = st @ params.proj_out - batch
    g_recon = (2.0 / b) * resid
    g_proj_out = st.T @ g_recon
    g_proj_in = batch.T @ (g_recon @ params.proj_out.T)
    g_proj_in += batch.T @ ((2.0 * commitment_weight / b) * (z - q_ref))

    g_q = (2.0 * codebook_weight / b) * (q - z_ref)
    g_entries = []
    for n, entries in enumerate(params.entries):
        g = np.zeros_like(entries)
        np.add.at(g, codes[:, n], g_q)
        g_entries.append(g)

    return ProjectedParams(proj_in=g_proj_in, proj_out=g_proj_out, entries=g_entries)


def _init_sample_size(corpus_len: int, config: TrainConfig) -> int:
    """Leading corpus slice used for k-means initialization.

    At least 2*K vectors (when the corpus has them) so that deeper layers see
    non-degenerate residuals; a sample of exactly K points would be memorized
    by the first layer.
    """
    return min(corpus_len, max(2 * config.codebook_size, config.batch_size))


def _init_layer_codebooks(
    sample: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator,
    metric: str,
) -> list[Codebook]:
    """Per-layer codebook initialization over the init sample.

    kmeans: residual k-means, each layer clustering what the previous left.
    random: per-dimension moment-matched Gaussian noise; codes start with no
    relation to individual data points, as when a codebook is trained from
    scratch alongside an encoder.
    """
    layers = []
    if config.init == "random":
        mean = sample.mean(axis=0)
        std = sample.std(axis=0) + 1e-12
        for _ in range(config.num_layers):
            entries = mean + std * rng.standard_normal((config.codebook_size, sample.shape[1]))
            layers.append(Codebook.from_entries(entries, metric=metric))
            # Deeper layers see residual scales; keep the same recipe per layer
            # but shrink toward the residual magnitude left by a nearest-entry pass.
            idx = fast_euclidean_assign(sample, entries)
            sample = sample - entries[idx]
            mean = sample.mean(axis=0)
            std = sample.std(axis=0) + 1e-12
        return layers
    residual = sample.copy()
    for _ in range(config.num_layers):
        cb = kmeans_init(
            residual,
            config.codebook_size,
            iterations=config.kmeans_iterations,
            rng=rng,
            metric=metric,
        )
        idx = fast_euclidean_assign(residual, cb.entries)
        residual = residual - cb.entries[idx]
        layers.append(cb)
    return layers


def _layer_utilization(corpus: np.ndarray, quantizer: RvqQuantizer) -> np.ndarray:
    if quantizer.scheme == PROJECTED:
        residual = corpus @ quantizer.projections[0].proj_in
    else:
        residual = corpus.copy()
    fractions = np.empty(quantizer.num_layers)
    for n, layer in enumerate(quantizer.layers):
        idx = assign_batch(residual, layer)
        residual = residual - layer.entries[idx]
        fractions[n] = len(np.unique(idx)) / layer.num_codes
    return fractions


def _check_finite(value: float, step: int, what: str) -> None:
    if not np.isfinite(value):
        raise NumericalError(f"{what} became non-finite at step {step}; aborting training")


def _train_ema(corpus: np.ndarray, config: TrainConfig, rng: np.random.Generator):
    metric = config.resolved_metric
    init_n = _init_sample_size(len(corpus), config)
    layers = _init_layer_codebooks(corpus[:init_n], config, rng, metric)

    mse = np.empty(config.steps)
    with_restart = config.scheme == SCHEME_EMA_RESTART
    for step in range(config.steps):
        picks = rng.choice(len(corpus), size=config.batch_size, replace=False)
        batch = corpus[picks]
        residual = batch
        layer_inputs = []
        for n in range(config.num_layers):
            layer_inputs.append(residual)
            idx = assign_batch(residual, layers[n])
            quant = layers[n].entries[idx]
            layers[n] = ema_update(
                layers[n], residual, idx, decay=config.decay, epsilon=config.epsilon
            )
            residual = residual - quant
        mse[step] = float((residual**2).sum()) / config.batch_size
        _check_finite(mse[step], step, "quantization MSE")

        if with_restart and (step + 1) % config.restart_period == 0:
            for n in range(config.num_layers):
                layers[n], _ = restart_dead_codes(
                    layers[n], layer_inputs[n], threshold=config.restart_threshold, rng=rng
                )

    quantizer = RvqQuantizer(layers=layers, latent_dim=config.latent_dim, scheme=PLAIN)
    # For the plain scheme the codebook/commitment values coincide with the MSE.
    return quantizer, mse, mse.copy(), mse.copy()


def _train_projected(corpus: np.ndarray, config: TrainConfig, rng: np.random.Generator):
    metric = config.resolved_metric
    d, q = config.latent_dim, config.resolved_quant_dim
    proj_in = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, q))
    proj_out = rng.normal(0.0, 1.0 / np.sqrt(q), size=(q, d))

    init_n = _init_sample_size(len(corpus), config)
    init_cbs = _init_layer_codebooks(corpus[:init_n] @ proj_in, config, rng, metric)
    params = ProjectedParams(
        proj_in=proj_in, proj_out=proj_out, entries=[cb.entries.copy() for cb in init_cbs]
    )

    mse = np.empty(config.steps)
    cb_series = np.empty(config.steps)
    cm_series = np.empty(config.steps)
    lr = config.learning_rate
    for step in range(config.steps):
        picks = rng.choice(len(corpus), size=config.batch_size, replace=False)
        batch = corpus[picks]
        codes = projected_assign(params, batch, metric)
        z = batch @ params.proj_in
        quant = _quantized_sum(params, codes)

        recon = quant @ params.proj_out
        mse[step] = float(((recon - batch) ** 2).sum()) / config.batch_size
        cb_series[step] = float(((quant - z) ** 2).sum()) / config.batch_size
        cm_series[step] = cb_series[step]
        total = (
            mse[step]
            + config.codebook_weight * cb_series[step]
            + config.commitment_weight * cm_series[step]
        )
        _check_finite(total, step, "total loss")

        grads = projected_grads(
            params,
            batch,
            codes,
            z_ref=z,
            q_ref=quant,
            codebook_weight=config.codebook_weight,
            commitment_weight=config.commitment_weight,
        )
        params.proj_in -= lr * grads.proj_in
        params.proj_out -= lr * grads.proj_out
        for n in range(config.num_layers):
            params.entries[n] -= lr * grads.entries[n]

    pair = ProjectionPair(proj_in=params.proj_in, proj_out=params.proj_out)
    layers = [Codebook.from_entries(e, metric=metric) for e in params.entries]
    quantizer = RvqQuantizer(
        layers=layers,
        latent_dim=d,
        scheme=PROJECTED,
        projections=[pair] * config.num_layers,
    )
    return quantizer, mse, cb_series, cm_series


def train_quantizer(corpus, config: TrainConfig) -> tuple[RvqQuantizer, TrainReport]:
    """Train a residual quantizer on a corpus under the configured scheme.

    Codebooks are initialized by residual k-means on the leading
    max(codebook_size, batch_size) corpus vectors. Identical corpus, config
    and seed reproduce bit-identical quantizers.
    """
    corpus = np.atleast_2d(np.asarray(corpus, dtype=np.float64))
    if corpus.shape[1] != config.latent_dim:
        raise ValueError(
            f"corpus dim {corpus.shape[1]} does not match latent_dim {config.latent_dim}"
        )
    if len(corpus) < config.codebook_size:
        raise ValueError(
            f"corpus has {len(corpus)} vectors but initialization needs at least "
            f"{config.codebook_size}"
        )
    if len(corpus) < config.batch_size:
        raise ValueError("corpus smaller than batch_size")

    rng = as_generator(config.seed)
    start = time.perf_counter()
    if config.scheme == SCHEME_PROJECTED:
        quantizer, mse, cb, cm = _train_projected(corpus, config, rng)
    else:
        quantizer, mse, cb, cm = _train_ema(corpus, config, rng)
    utilization = _layer_utilization(corpus, quantizer)
    wall = time.perf_counter() - start

    report = TrainReport(mse=mse, codebook=cb, commitment=cm, utilization=utilization, wall_clock=wall)
    return quantizer, report
