"""Token-level statistics: per-layer code utilization, entropy, rank-frequency."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rvq import TokenStream


@dataclass
class UtilizationReport:
    """Code-usage counts for one layer across a set of streams."""

    layer: int
    counts: np.ndarray  # (K,) int64
    total_frames: int
    used_codes: int
    utilization_fraction: float
    entropy_bits: float
    perplexity: float

    @classmethod
    def from_counts(cls, layer: int, counts: np.ndarray) -> "UtilizationReport":
        counts = np.asarray(counts, dtype=np.int64)
        total = int(counts.sum())
        used = int((counts > 0).sum())
        if total > 0:
            p = counts[counts > 0] / total
            entropy = float(-(p * np.log2(p)).sum())
        else:
            entropy = 0.0
        return cls(
            layer=layer,
            counts=counts,
            total_frames=total,
            used_codes=used,
            utilization_fraction=used / counts.shape[0],
            entropy_bits=entropy,
            perplexity=float(2.0**entropy),
        )


def utilization(streams: list[TokenStream], layer: int) -> UtilizationReport:
    """Count layer codes exactly over all frames of all streams."""
    if not streams:
        raise ValueError("utilization requires at least one stream")
    k = streams[0].codebook_size
    n_layers = streams[0].layers
    for s in streams:
        if s.codebook_size != k:
            raise ValueError(
                f"mixed codebook sizes across streams: {k} vs {s.codebook_size}"
            )
        if s.layers != n_layers:
            raise ValueError(f"mixed layer counts across streams: {n_layers} vs {s.layers}")
    if not 0 <= layer < n_layers:
        raise ValueError(f"layer {layer} out of range [0, {n_layers})")

    counts = np.zeros(k, dtype=np.int64)
    for s in streams:
        if s.num_frames:
            counts += np.bincount(s.frames[:, layer], minlength=k)
    return UtilizationReport.from_counts(layer, counts)


def rank_frequency(report: UtilizationReport) -> list[tuple[int, int]]:
    """Counts sorted descending (ties by code index), ranks 1..K, zeros kept."""
    order = np.lexsort((np.arange(len(report.counts)), -report.counts))
    return [(rank + 1, int(report.counts[code])) for rank, code in enumerate(order)]
