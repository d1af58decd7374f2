"""Hierarchical residual quantization over a stack of codebooks.

Encoding quantizes a latent vector layer by layer, subtracting the looked-up
entry from a running residual; decoding sums the entries back up. In the
projected scheme the latent is mapped once into the low-dimensional
quantization space, the residual recursion runs entirely there, and each
layer's looked-up entry is mapped back through its out-projection at decode
time. Encode and decode are pure over an immutable quantizer and safe to
parallelize across frames.

A token frame is a plain length-N integer array of per-layer codes; streams
bundle frames with their rate metadata.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .vq import (
    Codebook,
    ProjectionPair,
    VqAssignment,
    nearest_code,
    nearest_codes,
    project_in,
    project_out,
)

PLAIN = "plain"
PROJECTED = "projected"
SCHEMES = (PLAIN, PROJECTED)

# A token frame is just a 1-D integer array of length num_layers.
TokenFrame = np.ndarray


@dataclass
class RvqQuantizer:
    """An ordered stack of codebooks sharing dimensionality and lookup metric."""

    layers: list[Codebook]
    latent_dim: int
    scheme: str = PLAIN
    projections: list[ProjectionPair] | None = None

    def __post_init__(self):
        self.validate()

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def codebook_size(self) -> int:
        return self.layers[0].num_codes

    @property
    def quant_dim(self) -> int:
        return self.layers[0].code_dim

    @property
    def metric(self) -> str:
        return self.layers[0].metric

    def validate(self) -> None:
        if not self.layers:
            raise ValueError("quantizer needs at least one layer")
        k, q, metric = self.layers[0].num_codes, self.layers[0].code_dim, self.layers[0].metric
        for i, layer in enumerate(self.layers):
            if layer.num_codes != k or layer.code_dim != q:
                raise ValueError(f"layer {i} shape differs from layer 0")
            if layer.metric != metric:
                raise ValueError(f"layer {i} metric differs from layer 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.scheme == PLAIN:
            if self.projections is not None:
                raise ValueError("plain scheme does not take projections")
            if q != self.latent_dim:
                raise ValueError(
                    f"plain scheme requires code dim {q} == latent dim {self.latent_dim}"
                )
        else:
            if not self.projections or len(self.projections) != len(self.layers):
                raise ValueError("projected scheme needs one projection pair per layer")
            for i, pair in enumerate(self.projections):
                if pair.latent_dim != self.latent_dim or pair.quant_dim != q:
                    raise ValueError(f"projection pair {i} dims do not match the quantizer")


@dataclass
class TokenStream:
    """Per-utterance token frames plus rate metadata.

    frames is a (T, num_layers) int32 array; T may be zero.
    """

    frames: np.ndarray
    token_rate_hz: float
    layers: int
    codebook_size: int
    source_id: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int32)
        if self.frames.ndim != 2:
            self.frames = self.frames.reshape(-1, self.layers)
        self.validate()

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def validate(self) -> None:
        if self.token_rate_hz <= 0:
            raise ValueError("token_rate_hz must be positive")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.codebook_size < 1:
            raise ValueError("codebook_size must be >= 1")
        if self.frames.shape[1] != self.layers:
            raise ValueError(
                f"frame width {self.frames.shape[1]} does not match layers={self.layers}"
            )
        if self.frames.size and (self.frames.min() < 0 or self.frames.max() >= self.codebook_size):
            raise ValueError("codes must lie in [0, codebook_size)")


@dataclass
class EncodeTrace:
    """Residual norms after each layer plus the per-layer assignments.

    Norms are taken in latent space for the plain scheme and in quantization
    space for the projected scheme.
    """

    residual_norms: np.ndarray
    assignments: list[VqAssignment] = field(default_factory=list)


def _check_frame(frame, quantizer: RvqQuantizer) -> np.ndarray:
    codes = np.asarray(frame, dtype=np.int64).ravel()
    if codes.shape[0] != quantizer.num_layers:
        raise ValueError(
            f"frame has {codes.shape[0]} codes but the quantizer has {quantizer.num_layers} layers"
        )
    if np.any(codes < 0) or np.any(codes >= quantizer.codebook_size):
        raise ValueError(f"code out of range [0, {quantizer.codebook_size})")
    return codes


def rvq_encode(latent, quantizer: RvqQuantizer) -> tuple[TokenFrame, EncodeTrace]:
    """Quantize one latent vector into per-layer codes.

    Plain scheme: the residual starts at the latent and each layer subtracts
    its looked-up entry. Projected scheme: the latent is projected once into
    quantization space and the recursion runs there.
    """
    latent = np.asarray(latent, dtype=np.float64)
    if latent.shape != (quantizer.latent_dim,):
        raise ValueError(
            f"latent shape {latent.shape} does not match latent_dim {quantizer.latent_dim}"
        )
    if quantizer.scheme == PROJECTED:
        residual = project_in(latent, quantizer.projections[0])
    else:
        residual = latent.copy()

    n = quantizer.num_layers
    codes = np.empty(n, dtype=np.int32)
    norms = np.empty(n, dtype=np.float64)
    assignments: list[VqAssignment] = []
    for i, layer in enumerate(quantizer.layers):
        a = nearest_code(residual, layer)
        residual = residual - a.quantized
        codes[i] = a.index
        norms[i] = np.linalg.norm(residual)
        assignments.append(a)
    return codes, EncodeTrace(residual_norms=norms, assignments=assignments)


def rvq_decode(frame, quantizer: RvqQuantizer, num_layers: int | None = None) -> np.ndarray:
    """Reconstruct a latent vector from a token frame.

    With `num_layers=m`, only the first m layers contribute (coarse preview).
    """
    codes = _check_frame(frame, quantizer)
    m = quantizer.num_layers if num_layers is None else num_layers
    if not 1 <= m <= quantizer.num_layers:
        raise ValueError(f"num_layers must lie in [1, {quantizer.num_layers}]")
    if quantizer.scheme == PROJECTED:
        out = np.zeros(quantizer.latent_dim)
        for i in range(m):
            entry = quantizer.layers[i].entries[codes[i]]
            out += project_out(entry, quantizer.projections[i])
        return out
    out = np.zeros(quantizer.quant_dim)
    for i in range(m):
        out += quantizer.layers[i].entries[codes[i]]
    return out


def rvq_encode_batch(latents, quantizer: RvqQuantizer) -> tuple[np.ndarray, np.ndarray]:
    """Encode (T, d) latents; returns ((T, N) int32 codes, (T, q) final residuals)."""
    latents = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    if latents.shape[1] != quantizer.latent_dim:
        raise ValueError(
            f"latent dim {latents.shape[1]} does not match latent_dim {quantizer.latent_dim}"
        )
    if quantizer.scheme == PROJECTED:
        residual = project_in(latents, quantizer.projections[0])
    else:
        residual = latents.copy()
    codes = np.empty((latents.shape[0], quantizer.num_layers), dtype=np.int32)
    for i, layer in enumerate(quantizer.layers):
        idx, _ = nearest_codes(residual, layer)
        residual = residual - layer.entries[idx]
        codes[:, i] = idx
    return codes, residual


def rvq_decode_batch(codes, quantizer: RvqQuantizer) -> np.ndarray:
    """Decode (T, N) code rows back to (T, d) latents."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.int64))
    if codes.shape[1] != quantizer.num_layers:
        raise ValueError(
            f"code width {codes.shape[1]} does not match {quantizer.num_layers} layers"
        )
    if codes.size and (codes.min() < 0 or codes.max() >= quantizer.codebook_size):
        raise ValueError(f"code out of range [0, {quantizer.codebook_size})")
    if quantizer.scheme == PROJECTED:
        out = np.zeros((codes.shape[0], quantizer.latent_dim))
        for i in range(quantizer.num_layers):
            out += project_out(quantizer.layers[i].entries[codes[:, i]], quantizer.projections[i])
        return out
    out = np.zeros((codes.shape[0], quantizer.quant_dim))
    for i in range(quantizer.num_layers):
        out += quantizer.layers[i].entries[codes[:, i]]
    return out


def code_bits(codebook_size: int) -> int:
    """Bits needed per code: log2(K) for powers of two, else ceil(log2 K)."""
    if codebook_size < 1:
        raise ValueError("codebook_size must be >= 1")
    return math.ceil(math.log2(codebook_size))


def bitrate_bps(quantizer: RvqQuantizer, token_rate_hz: float) -> float:
    """Bits per second: num_layers * bits-per-code * token rate."""
    if token_rate_hz <= 0:
        raise ValueError("token_rate_hz must be positive")
    return quantizer.num_layers * code_bits(quantizer.codebook_size) * token_rate_hz
