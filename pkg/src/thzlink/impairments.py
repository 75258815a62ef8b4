"""Hardware-imperfection models: DAC/ADC quantization (AQNM), IQ imbalance,
oscillator phase noise, phase-shifter amplitude/phase errors, and the Rapp
power-amplifier nonlinearity.

Every transform maps a (chains-or-antennas x T) complex block to a block of the
same shape, so the models compose freely in the signal chains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import RandomSource, cgauss_matrix

AQNM_COEFF = math.pi * math.sqrt(3.0) / 2.0


@dataclass(frozen=True)
class AqnmParams:
    """Additive quantization noise model for a b-bit converter.

    bits=None models infinite resolution (beta=0, identity transform).
    literal_beta=True uses the printed "b^-2" variant instead of the standard
    2^(-2b); the latter is the default (b=4 -> beta ~ 0.0106).
    """

    bits: int | None = 4
    literal_beta: bool = False

    def __post_init__(self):
        if self.bits is not None and self.bits < 1:
            raise ValueError(f"bits must be >= 1 or None, got {self.bits}")

    @property
    def beta(self) -> float:
        if self.bits is None:
            return 0.0
        if self.literal_beta:
            return AQNM_COEFF * self.bits ** (-2.0)
        return AQNM_COEFF * 2.0 ** (-2.0 * self.bits)

    @property
    def alpha(self) -> float:
        return 1.0 - self.beta


def aqnm_quantize(x: np.ndarray, p: AqnmParams, rng: RandomSource) -> np.ndarray:
    """alpha*x + q with q ~ CN(0, alpha*beta*diag(E[x x^H])).

    The per-row noise variance uses the block-average power of that row, so
    zero-power rows generate zero noise and the infinite-resolution limit
    returns x unchanged.
    """
    if p.beta == 0.0:
        return x
    row_power = np.mean(np.abs(x) ** 2, axis=1, keepdims=True)
    noise = cgauss_matrix(x.shape[0], x.shape[1], 1.0, rng)
    q = np.sqrt(p.alpha * p.beta * row_power) * noise
    return p.alpha * x + q


@dataclass(frozen=True)
class IqImbalanceParams:
    """Per-chain IQ mixer mismatch: amplitude ratios g_l and phase errors phi_l.

    The diagonal factors Gamma1 = (1 + g e^{j phi})/2 and Gamma2 = (1 - g e^{j phi})/2
    always satisfy Gamma1 + Gamma2 = 1; g=1, phi=0 gives the identity transform.
    """

    gain: np.ndarray
    phase_rad: np.ndarray

    @classmethod
    def identity(cls, n_chains: int) -> "IqImbalanceParams":
        return cls(gain=np.ones(n_chains), phase_rad=np.zeros(n_chains))

    @classmethod
    def draw(cls, n_chains: int, gain_range: tuple[float, float],
             phase_range_deg: tuple[float, float], rng: RandomSource) -> "IqImbalanceParams":
        g = rng.generator()
        gain = g.uniform(gain_range[0], gain_range[1], n_chains)
        phase = np.deg2rad(g.uniform(phase_range_deg[0], phase_range_deg[1], n_chains))
        return cls(gain=gain, phase_rad=phase)

    @property
    def n_chains(self) -> int:
        return len(self.gain)

    @property
    def gamma1(self) -> np.ndarray:
        return (1.0 + self.gain * np.exp(1j * self.phase_rad)) / 2.0

    @property
    def gamma2(self) -> np.ndarray:
        return (1.0 - self.gain * np.exp(1j * self.phase_rad)) / 2.0


def iq_imbalance(x: np.ndarray, p: IqImbalanceParams) -> np.ndarray:
    """Gamma1 x + Gamma2 x* applied per RF chain (one row per chain)."""
    if x.shape[0] != p.n_chains:
        raise ValueError(f"x has {x.shape[0]} rows but params describe {p.n_chains} chains")
    return p.gamma1[:, None] * x + p.gamma2[:, None] * np.conj(x)


@dataclass(frozen=True)
class PhaseNoiseParams:
    """Gaussian-approximated oscillator phase noise, theta ~ N(0, variance_rad2),
    drawn i.i.d. per chain per symbol. One oscillator per RF chain, so draws are
    independent across chains."""

    variance_rad2: float = 1e-2

    def __post_init__(self):
        if self.variance_rad2 < 0:
            raise ValueError("phase-noise variance must be >= 0")


def phase_noise_apply(x: np.ndarray, p: PhaseNoiseParams, rng: RandomSource) -> np.ndarray:
    """Multiply each entry by e^{j theta}, fresh theta per chain per symbol."""
    if p.variance_rad2 == 0.0:
        return x
    g = rng.generator()
    theta = g.normal(0.0, np.sqrt(p.variance_rad2), size=x.shape)
    return x * np.exp(1j * theta)


@dataclass(frozen=True)
class ShifterErrorParams:
    """Frozen amplitude/phase error matrix for a bank of analog phase shifters.

    Each entry is 10^(E_alpha/db_divisor) * e^{j E_phi}; errors model
    manufacturing imperfections, so they are drawn once per device instance
    and then held fixed.
    """

    errors: np.ndarray
    amp_var_db2: float = 0.0
    phase_std_deg: float = 0.0
    db_divisor: float = 10.0

    @classmethod
    def identity(cls, rows: int, cols: int) -> "ShifterErrorParams":
        return cls(errors=np.ones((rows, cols), dtype=complex))

    @classmethod
    def draw(cls, rows: int, cols: int, amp_var_db2: float, phase_std_deg: float,
             rng: RandomSource, db_divisor: float = 10.0) -> "ShifterErrorParams":
        if amp_var_db2 < 0 or phase_std_deg < 0:
            raise ValueError("error spreads must be >= 0")
        g = rng.generator()
        e_alpha = g.normal(0.0, np.sqrt(amp_var_db2), size=(rows, cols))
        e_phi = np.deg2rad(g.normal(0.0, phase_std_deg, size=(rows, cols)))
        errors = 10.0 ** (e_alpha / db_divisor) * np.exp(1j * e_phi)
        return cls(errors=errors, amp_var_db2=amp_var_db2,
                   phase_std_deg=phase_std_deg, db_divisor=db_divisor)


def inject_shifter_errors(f_rf: np.ndarray, p: ShifterErrorParams) -> np.ndarray:
    """Elementwise product with the frozen error matrix (F_RF,e = F_RF o E)."""
    if f_rf.shape != p.errors.shape:
        raise ValueError(f"shape mismatch: matrix {f_rf.shape} vs errors {p.errors.shape}")
    return f_rf * p.errors


@dataclass(frozen=True)
class RappPaParams:
    """Rapp AM-AM plus parametric AM-PM power-amplifier model.

    AM-AM:  |out| = alpha_a*|x| / (1 + (alpha_a*|x|/x_sat)^(2*sigma_a))^(1/(2*sigma_a))
    AM-PM:  added phase = alpha_phi*|x|^q1 / (1 + (|x|/beta_phi)^q2)

    am_pm_degrees selects the unit of the AM-PM term (the cited parameter set
    only makes physical sense in degrees: ~5..15 deg near saturation).
    """

    alpha_a: float = 4.708
    x_sat: float = 0.663
    sigma_a: float = 1.603
    alpha_phi: float = -740.2
    q1: float = 1.945
    beta_phi: float = 0.298
    q2: float = 1.797
    am_pm_degrees: bool = True


def rapp_pa(x: np.ndarray, p: RappPaParams) -> np.ndarray:
    """Apply the Rapp AM-AM curve and AM-PM phase shift per entry."""
    a = np.abs(x)
    drive = (p.alpha_a / p.x_sat) * a
    mag = p.alpha_a * a / (1.0 + drive ** (2.0 * p.sigma_a)) ** (1.0 / (2.0 * p.sigma_a))
    phase_add = p.alpha_phi * a ** p.q1 / (1.0 + (a / p.beta_phi) ** p.q2)
    if p.am_pm_degrees:
        phase_add = np.deg2rad(phase_add)
    # express via the unit phasor of x to avoid 0/0 at the origin
    out = np.zeros_like(x, dtype=complex)
    nz = a > 0
    out[nz] = (x[nz] / a[nz]) * mag[nz] * np.exp(1j * phase_add[nz])
    return out


def linear_pa(x: np.ndarray, gain_db: float) -> np.ndarray:
    """Ideal linear PA: scalar amplitude gain 10^(gain_db/20)."""
    return x * 10.0 ** (gain_db / 20.0)
