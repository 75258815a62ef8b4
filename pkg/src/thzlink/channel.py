"""Geometric multipath channel and hybrid beamformer construction.

The channel is a sparse sum of uniform-linear-array steering outer products,
H = sum_l g_l a_r(theta_l) a_t(phi_l)^H, with half-wavelength spacing.
Beamformers: analog stages are phase-quantized steering vectors toward the
strongest directions found by scanning H; digital stages come from the SVD of
the effective channel and are rescaled to the Frobenius power constraints.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .core import RandomSource, SystemConfig, frobenius_norm_sq


class SingularDesignError(RuntimeError):
    """Effective channel W_RF^H H F_RF is rank deficient for the stream count."""


@dataclass
class ChannelModel:
    """Sparse geometric channel description.

    gain_profile "gaussian" draws CN(0,1) path gains; "equal" draws
    unit-magnitude random-phase gains (balanced streams). Fixed gains/angles
    can be supplied directly for closed-form tests.
    normalization: "frobenius" scales to ||H||_F^2 = Nt*Nr, "unit" to
    ||H||_F = 1, "none" leaves the raw sum.
    """

    n_paths: int = 3
    normalization: str = "frobenius"
    gain_profile: str = "gaussian"
    min_sin_separation: float | None = None   # sin-domain spacing between paths
    gains: np.ndarray | None = None
    aod_sin: np.ndarray | None = None          # departure angles, sin domain
    aoa_sin: np.ndarray | None = None          # arrival angles, sin domain


def steering_vector(n: int, sin_angle: float) -> np.ndarray:
    """ULA response with half-wavelength spacing, unit norm (entries 1/sqrt(n))."""
    k = np.arange(n)
    return np.exp(-1j * np.pi * k * sin_angle) / np.sqrt(n)


def _draw_separated(n: int, min_sep: float, g: np.random.Generator) -> np.ndarray:
    """Uniform draws on [-0.9, 0.9] in sin domain with pairwise separation."""
    out: list[float] = []
    for _ in range(10000):
        cand = g.uniform(-0.9, 0.9)
        if all(abs(cand - v) >= min_sep for v in out):
            out.append(cand)
            if len(out) == n:
                return np.array(out)
    raise RuntimeError("could not place paths with the requested separation")


def build_channel(cfg: SystemConfig, model: ChannelModel, rng: RandomSource) -> np.ndarray:
    """Draw (or assemble) H of shape (N_r, N_t) and normalize per mode."""
    if model.n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {model.n_paths}")
    g = rng.generator()
    min_sep = model.min_sin_separation
    if min_sep is None:
        min_sep = 4.0 / max(cfg.n_tx_antennas, cfg.n_rx_antennas)

    aod = model.aod_sin if model.aod_sin is not None else _draw_separated(model.n_paths, min_sep, g)
    aoa = model.aoa_sin if model.aoa_sin is not None else _draw_separated(model.n_paths, min_sep, g)
    if model.gains is not None:
        gains = np.asarray(model.gains, dtype=complex)
    elif model.gain_profile == "equal":
        gains = np.exp(1j * g.uniform(0, 2 * np.pi, model.n_paths))
    elif model.gain_profile == "gaussian":
        gains = (g.standard_normal(model.n_paths) + 1j * g.standard_normal(model.n_paths)) / np.sqrt(2)
    else:
        raise ValueError(f"unknown gain_profile {model.gain_profile!r}")

    h = np.zeros((cfg.n_rx_antennas, cfg.n_tx_antennas), dtype=complex)
    for gain, th, ph in zip(gains, aoa, aod):
        ar = steering_vector(cfg.n_rx_antennas, th)
        at = steering_vector(cfg.n_tx_antennas, ph)
        h += gain * np.outer(ar, at.conj())

    norm = np.sqrt(frobenius_norm_sq(h))
    if model.normalization == "frobenius":
        h *= np.sqrt(cfg.n_rx_antennas * cfg.n_tx_antennas) / norm
    elif model.normalization == "unit":
        h /= norm
    elif model.normalization != "none":
        raise ValueError(f"unknown normalization {model.normalization!r}")
    return h


@dataclass
class BeamformerSet:
    """Digital/analog precoders and combiners plus the input power allocation.

    Invariants (enforced by design_beamformers / set_transmit_power):
      |F_RF| entries = 1/sqrt(N_t), |W_RF| entries = 1/sqrt(N_r),
      ||F_RF F_BB||_F^2 = N_s, ||W_BB^H W_RF^H||_F^2 = N_s, P_in = p*I.
    """

    f_bb: np.ndarray     # (L_t, N_s)
    f_rf: np.ndarray     # (N_t, L_t)
    p_in: np.ndarray     # (L_t, L_t) diagonal, linear amplitude units
    w_rf: np.ndarray     # (N_r, L_r)
    w_bb: np.ndarray     # (L_r, N_s)

    @property
    def n_streams(self) -> int:
        return self.f_bb.shape[1]

    @property
    def p_in_scalar(self) -> float:
        return float(np.real(self.p_in[0, 0]))


def _quantize_phases(v: np.ndarray, bits: int) -> np.ndarray:
    """Snap phases of a unit-modulus array onto the 2^bits grid {0, 2pi/2^b, ...}."""
    step = 2.0 * np.pi / (2 ** bits)
    phases = np.round(np.angle(v) / step) * step
    return np.exp(1j * phases) * np.abs(v)


def _strongest_directions(power: np.ndarray, sins: np.ndarray, count: int,
                          min_sep: float) -> np.ndarray:
    order = np.argsort(power)[::-1]
    picked: list[float] = []
    for idx in order:
        cand = sins[idx]
        if all(abs(cand - v) >= min_sep for v in picked):
            picked.append(cand)
            if len(picked) == count:
                return np.array(picked)
    raise SingularDesignError("channel does not expose enough separated directions")


def design_beamformers(h: np.ndarray, cfg: SystemConfig) -> BeamformerSet:
    """Steer the analog stages at the strongest channel directions, then take the
    digital stages from the SVD of the effective channel.

    Deterministic given (H, cfg). Raises SingularDesignError when the effective
    channel cannot support N_s streams.
    """
    n_r, n_t = h.shape
    grid_t = np.linspace(-1.0, 1.0, 4 * n_t, endpoint=False)
    grid_r = np.linspace(-1.0, 1.0, 4 * n_r, endpoint=False)
    at_grid = np.exp(-1j * np.pi * np.outer(np.arange(n_t), grid_t)) / np.sqrt(n_t)
    ar_grid = np.exp(-1j * np.pi * np.outer(np.arange(n_r), grid_r)) / np.sqrt(n_r)
    tx_power = np.sum(np.abs(h @ at_grid) ** 2, axis=0)
    rx_power = np.sum(np.abs(ar_grid.conj().T @ h) ** 2, axis=1)

    sep = 2.0 / n_t
    tx_dirs = _strongest_directions(tx_power, grid_t, cfg.n_tx_chains, sep)
    rx_dirs = _strongest_directions(rx_power, grid_r, cfg.n_rx_chains, 2.0 / n_r)

    f_rf = np.stack([steering_vector(n_t, s) for s in tx_dirs], axis=1)
    w_rf = np.stack([steering_vector(n_r, s) for s in rx_dirs], axis=1)
    f_rf = _quantize_phases(f_rf, cfg.phase_shifter_bits)
    w_rf = _quantize_phases(w_rf, cfg.phase_shifter_bits)

    heff = w_rf.conj().T @ h @ f_rf
    u, s, vh = np.linalg.svd(heff)
    if s[cfg.n_streams - 1] < 1e-10 * s[0]:
        raise SingularDesignError(
            f"effective channel rank < N_s={cfg.n_streams} (singular values {s})"
        )
    f_bb = vh.conj().T[:, : cfg.n_streams]
    w_bb = u[:, : cfg.n_streams]

    f_bb *= np.sqrt(cfg.n_streams / frobenius_norm_sq(f_rf @ f_bb))
    w_bb *= np.sqrt(cfg.n_streams / frobenius_norm_sq(w_bb.conj().T @ w_rf.conj().T))
    p_in = np.eye(cfg.n_tx_chains, dtype=complex)
    return BeamformerSet(f_bb=f_bb, f_rf=f_rf, p_in=p_in, w_rf=w_rf, w_bb=w_bb)


def set_transmit_power(bset: BeamformerSet, p_dbm: float,
                       pa_linear_gain_db: float) -> BeamformerSet:
    """Scale P_in so the ideal-linear chain radiates 10^(p_dbm/10) mW per symbol.

    With unit-average-energy constellation symbols, E||g F_RF P_in F_BB s||^2 =
    g^2 p^2 ||F_RF F_BB||_F^2 = g^2 p^2 N_s for uniform P_in = p*I, so the
    scale has a closed form.
    """
    if not np.isfinite(p_dbm):
        raise ValueError(f"p_dbm must be finite, got {p_dbm}")
    p_mw = 10.0 ** (p_dbm / 10.0)
    g = 10.0 ** (pa_linear_gain_db / 20.0)
    n_s = bset.n_streams
    norm_sq = frobenius_norm_sq(bset.f_rf @ bset.f_bb)
    p = np.sqrt(p_mw / (g ** 2 * norm_sq))
    l_t = bset.p_in.shape[0]
    return replace(bset, p_in=p * np.eye(l_t, dtype=complex))


# --- serialization: binary (.npz) + CSV metadata pair, so experiments replay ---

def save_link_arrays(path_npz: str, path_csv: str, h: np.ndarray, bset: BeamformerSet,
                     metadata: dict | None = None) -> None:
    """Write the channel and beamformer set as an .npz plus a CSV metadata file."""
    np.savez(path_npz, h=h, f_bb=bset.f_bb, f_rf=bset.f_rf, p_in=bset.p_in,
             w_rf=bset.w_rf, w_bb=bset.w_bb)
    with open(path_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        writer.writerow(["format_version", "1"])
        for key, value in sorted((metadata or {}).items()):
            writer.writerow([key, repr(value)])


def load_link_arrays(path_npz: str) -> tuple[np.ndarray, BeamformerSet]:
    data = np.load(path_npz)
    bset = BeamformerSet(f_bb=data["f_bb"], f_rf=data["f_rf"], p_in=data["p_in"],
                         w_rf=data["w_rf"], w_bb=data["w_bb"])
    return data["h"], bset
