"""Dense float64 arithmetic and replayable random streams.

All stochastic pieces of the library draw from :class:`RngStream`, a
counter-based stream keyed by ``(seed, stream_id)``.  Any mask used during
training can therefore be regenerated from its coordinates (layer index,
iteration, ...) instead of being stored.
"""

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    """Finalizer of the splitmix64 generator; used to mix stream ids."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class RngStream:
    """A value-type handle on a deterministic random sequence.

    Identical ``(seed, stream_id)`` pairs always reproduce the same draws;
    distinct stream ids give statistically independent Philox streams.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = [self.seed & _MASK64, self.stream_id & _MASK64]
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, *indices: int) -> "RngStream":
        """Derive a substream, e.g. ``root.child(layer, iteration)``."""
        sid = self.stream_id
        for ix in indices:
            sid = _splitmix64(sid ^ _splitmix64(ix & _MASK64))
        return RngStream(self.seed, sid)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.ndim}-d and {b.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def bernoulli_switches(stream: RngStream, n: int, tau: float) -> np.ndarray:
    """Draw n independent switches taking 0 w.p. tau, else 1/(1-tau).

    E[r] = 1 by construction, which is what keeps the perturbed weighted
    sum unbiased.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    u = stream.generator().random(n)
    return np.where(u < tau, 0.0, 1.0 / (1.0 - tau))
