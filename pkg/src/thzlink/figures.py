"""Figure rendering for the experiment reports.

Every CSV the experiment drivers emit gets a matplotlib PNG next to it; the
CSVs remain the primary machine-readable output.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SCENARIO_STYLE = {
    "ideal": ("k", "o"),
    "dac_adc": ("tab:blue", "s"),
    "iq": ("tab:orange", "^"),
    "phase_noise": ("tab:green", "v"),
    "shifters": ("tab:purple", "d"),
    "pa": ("tab:red", "x"),
    "all": ("tab:brown", "*"),
}

_SER_FLOOR = 1e-6  # zero-error points plotted at the floor


def _ser_for_log(values):
    return np.maximum(np.asarray(values, dtype=float), _SER_FLOOR)


def render_sweep(rows: list[dict], png_path: str) -> None:
    """SER vs transmit power, one curve per scenario (log vertical axis)."""
    fig, ax = plt.subplots(figsize=(6.4, 4.6))
    scenarios = sorted({r["scenario"] for r in rows},
                       key=lambda s: list(_SCENARIO_STYLE).index(s)
                       if s in _SCENARIO_STYLE else 99)
    for scen in scenarios:
        pts = sorted((r for r in rows if r["scenario"] == scen),
                     key=lambda r: r["power_dbm"])
        color, marker = _SCENARIO_STYLE.get(scen, ("gray", "."))
        ax.semilogy([r["power_dbm"] for r in pts],
                    _ser_for_log([r["ser"] for r in pts]),
                    color=color, marker=marker, label=scen)
    ax.set_xlabel("transmit power (dBm)")
    ax.set_ylabel("SER")
    ax.grid(True, which="both", ls=":", alpha=0.6)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)


def render_eval(rows: list[dict], png_path: str) -> None:
    """Compensated SER vs power, one curve per side."""
    fig, ax = plt.subplots(figsize=(6.4, 4.6))
    for side in sorted({r["side"] for r in rows}):
        pts = sorted((r for r in rows if r["side"] == side),
                     key=lambda r: r["power_dbm"])
        ax.semilogy([r["power_dbm"] for r in pts],
                    _ser_for_log([r["ser"] for r in pts]),
                    marker="o", label=side)
    ax.set_xlabel("transmit power (dBm)")
    ax.set_ylabel("SER")
    ax.grid(True, which="both", ls=":", alpha=0.6)
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)


def render_constellation(points: np.ndarray, png_path: str, title: str = "") -> None:
    """Scatter of equalized symbols against the unit 16-QAM grid."""
    from .modem_coding import QAM16_SYMBOLS

    fig, ax = plt.subplots(figsize=(4.8, 4.8))
    flat = points.ravel()
    ax.scatter(flat.real, flat.imag, s=2, alpha=0.35, color="tab:blue",
               rasterized=True)
    ax.scatter(QAM16_SYMBOLS.real, QAM16_SYMBOLS.imag, s=42, marker="x",
               color="red", zorder=3)
    lim = max(1.6, float(np.quantile(np.abs(flat), 0.999)) * 1.1)
    ax.set_xlim(-lim, lim)
    ax.set_ylim(-lim, lim)
    ax.set_aspect("equal")
    ax.set_xlabel("in-phase")
    ax.set_ylabel("quadrature")
    if title:
        ax.set_title(title, fontsize=10)
    ax.grid(True, ls=":", alpha=0.5)
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)


def render_loss(curves: dict[str, np.ndarray], png_path: str) -> None:
    """Training-loss curves per stage, log vertical axis."""
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for label, curve in curves.items():
        ax.semilogy(np.arange(1, len(curve) + 1), curve, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss (MSE)")
    ax.grid(True, which="both", ls=":", alpha=0.6)
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)


def render_coded(rows: list[dict], png_path: str) -> None:
    """Coded vs uncoded SER at the evaluated powers."""
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    pts = sorted(rows, key=lambda r: r["power_dbm"])
    powers = [r["power_dbm"] for r in pts]
    ax.semilogy(powers, _ser_for_log([r["uncoded_ser"] for r in pts]),
                marker="o", label="uncoded")
    ax.semilogy(powers, _ser_for_log([r["coded_ser"] for r in pts]),
                marker="s", label="rate-2/3 + Viterbi")
    ax.set_xlabel("transmit power (dBm)")
    ax.set_ylabel("SER")
    ax.grid(True, which="both", ls=":", alpha=0.6)
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
