"""Shared numeric primitives: complex-matrix helpers, seeded RNG streams, system config.

All floating point is double precision (complex128 / float64); tolerances in the
test suite assume this.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

MASK64 = (1 << 64) - 1


class RandomSource:
    """Seeded random source with named, independently derived child streams.

    Each stochastic subsystem (thermal noise, DAC/ADC noise, phase noise,
    weight init, shuffling, ...) draws from its own child stream, so toggling
    one subsystem on or off never shifts another subsystem's draws.

    Child seeds are derived from (parent seed, label) via SHA-256, so the
    mapping is stable across runs and platforms.
    """

    def __init__(self, seed: int, label: str = "root"):
        self.seed = int(seed) & MASK64
        self.label = label

    def child(self, label: str) -> "RandomSource":
        digest = hashlib.sha256(f"{self.seed}/{label}".encode()).digest()
        seed = int.from_bytes(digest[:8], "little")
        return RandomSource(seed, label=f"{self.label}/{label}")

    def generator(self) -> np.random.Generator:
        """Fresh generator for this stream. Calling twice replays the same draws;
        derive a child for an independent sequence."""
        return np.random.default_rng(self.seed)

    def __repr__(self):  # pragma: no cover
        return f"RandomSource(seed={self.seed}, label={self.label!r})"


@dataclass
class SystemConfig:
    """Antenna/RF-chain dimensions and link-level constants.

    Constraints N_s <= L_t < N_t and N_s <= L_r < N_r are enforced on
    construction.
    """

    n_tx_antennas: int = 256
    n_rx_antennas: int = 256
    n_tx_chains: int = 4
    n_rx_chains: int = 4
    n_streams: int = 4
    pilot_len: int = 8000            # M, training pairs per power point
    bandwidth_hz: float = 1e9
    transmit_power_dbm: float = 15.0
    noise_psd: float = 0.0           # per-antenna noise power / bandwidth; set by calibration
    rng_seed: int = 2024
    phase_shifter_bits: int = 6

    def __post_init__(self):
        if not (self.n_streams <= self.n_tx_chains < self.n_tx_antennas):
            raise ValueError(
                f"need N_s <= L_t < N_t, got N_s={self.n_streams}, "
                f"L_t={self.n_tx_chains}, N_t={self.n_tx_antennas}"
            )
        if not (self.n_streams <= self.n_rx_chains < self.n_rx_antennas):
            raise ValueError(
                f"need N_s <= L_r < N_r, got N_s={self.n_streams}, "
                f"L_r={self.n_rx_chains}, N_r={self.n_rx_antennas}"
            )

    @property
    def noise_power(self) -> float:
        """Per-antenna noise power B * psd."""
        return self.noise_psd * self.bandwidth_hz


def cgauss_matrix(rows: int, cols: int, variance: float, rng: RandomSource) -> np.ndarray:
    """Circularly symmetric complex Gaussian matrix.

    Entries are i.i.d. CN(0, variance): real and imaginary parts each carry
    variance/2.
    """
    if variance < 0:
        raise ValueError(f"variance must be >= 0, got {variance}")
    g = rng.generator()
    scale = np.sqrt(variance / 2.0)
    return scale * (g.standard_normal((rows, cols)) + 1j * g.standard_normal((rows, cols)))


def frobenius_norm_sq(a: np.ndarray) -> float:
    """Sum of squared entry magnitudes."""
    a = np.asarray(a)
    return float(np.real(np.vdot(a, a)))


def ls_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Least-squares solve of a x = b (minimum-norm when rank deficient)."""
    x, *_ = np.linalg.lstsq(a, b, rcond=None)
    return x


def db_to_power(db: float) -> float:
    return 10.0 ** (db / 10.0)


def db_to_amplitude(db: float) -> float:
    return 10.0 ** (db / 20.0)


def power_to_db(p: float) -> float:
    return 10.0 * np.log10(p)
