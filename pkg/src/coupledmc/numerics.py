"""Seeded random streams, sample statistics and a small PSD square root.

Random numbers come from numpy's Philox4x64 counter-based generator. A stream
is keyed by ``(seed, stream_id)`` through ``SeedSequence``, so substreams are
cheap to derive and independent of the order in which they are consumed.
Normals use numpy's ziggurat transform (``Generator.standard_normal``), which
is bit-stable for a fixed numpy version.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Z95 = 1.96
PSD_CLAMP = 1e-12


class RngStream:
    """Deterministic normal-variate stream identified by ``(seed, stream_id)``."""

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.Philox(ss))

    def substream(self, stream_id: int) -> "RngStream":
        """A stream sharing this seed but with a different selector."""
        return RngStream(self.seed, stream_id)

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low, high, shape) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def gaussian_batch(stream: RngStream, count: int) -> np.ndarray:
    if count < 1:
        raise ValueError("count must be >= 1")
    return stream.normal(count)


@dataclass(frozen=True)
class SampleStats:
    n: int
    mean: float
    variance: float
    half_width_95: float

    @property
    def std_error(self) -> float:
        return float(np.sqrt(self.variance / self.n))

    def to_dict(self) -> dict:
        return {"n": self.n, "mean": self.mean, "variance": self.variance,
                "half_width_95": self.half_width_95}


def sample_stats(data) -> SampleStats:
    """Mean, unbiased variance and 95% normal half-width of ``data``."""
    x = np.asarray(data, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("insufficient sample")
    var = float(np.var(x, ddof=1))
    return SampleStats(n=int(x.size), mean=float(np.mean(x)), variance=var,
                       half_width_95=Z95 * float(np.sqrt(var / x.size)))


def skewness(data) -> float:
    x = np.asarray(data, dtype=np.float64).ravel()
    c = x - x.mean()
    m2 = np.mean(c * c)
    if m2 == 0.0:
        return 0.0
    return float(np.mean(c ** 3) / m2 ** 1.5)


def sym_psd_sqrt_2x2(m) -> np.ndarray:
    """Symmetric square root of a symmetric positive semi-definite 2x2 matrix.

    Eigenvalues down to ``-1e-12`` are clamped to zero; anything more negative
    raises ``ValueError("not PSD")``.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {m.shape}")
    m = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(m)
    if w[0] < -PSD_CLAMP:
        raise ValueError("not PSD")
    w = np.sqrt(np.clip(w, 0.0, None))
    return (v * w) @ v.T
