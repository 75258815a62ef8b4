"""Stage-2 compensation.

Tx side: a bank of per-chain sub-NNs reshapes the digitally precoded signal
before it enters the physical chain; it is trained through the frozen stage-1
surrogate against the ideal (impairment-free, noiseless) receptions.

Rx side: a bank of per-chain sub-NNs maps the pre-combiner received signal to
the ideal reception. Training inputs come from the frozen surrogate (the
deployment-time inputs are real impaired receptions; that train/test mismatch
is inherent to the scheme and deliberately preserved).

D-DNN baseline: one fully connected 8-10-10-10-8 network mapping the stacked
(re, im) of the received streams to corrected streams.

Deployment always runs the REAL impaired chain, never the surrogate.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .chain import (
    ChainSpec,
    LinkRealization,
    equalizer_matrix,
    measure_snr,
    rx_chain,
    rx_frontend,
    tx_chain,
    tx_chain_from_baseband,
)
from .core import RandomSource, frobenius_norm_sq
from .modem_coding import QAM16_SYMBOLS, symbols_to_indices
from .neural import (
    MLP,
    SubNNBank,
    TrainingConfig,
    TrainingReport,
    pairs_to_rows,
    rows_to_pairs,
    run_training_loop,
    save_checkpoint,
    load_checkpoint,
)
from .stage1 import PolicyError, StructuredDNN, dnn_backward, dnn_forward, mse_loss_and_grad

SIDES = ("none", "tx", "rx", "ddnn")
DDNN_LAYERS = [8, 10, 10, 10, 8]


@dataclass
class TxCompensator:
    """Per-Tx-chain compensation network; output renormalized to the baseband
    power constraint (N_s per symbol on average over the block)."""

    bank: SubNNBank
    power_dbm: float

    @property
    def n_hidden(self) -> int:
        return self.bank.n_hidden

    @property
    def n_params(self) -> int:
        return self.bank.n_params

    @classmethod
    def init(cls, n_chains: int, n_hidden: int, power_dbm: float,
             rng: RandomSource) -> "TxCompensator":
        # identity-seeded: the untrained compensator is a no-op
        return cls(bank=SubNNBank.init_linear(n_chains, n_hidden, rng),
                   power_dbm=power_dbm)


@dataclass
class RxCompensator:
    """Per-Rx-chain compensation network applied to the pre-combiner signal
    (the frozen surrogate's version during training, the real receive frontend
    at deployment), followed by the known digital combiner W_BB^H as a fixed
    map. The per-chain bank corrects chain-level Rx distortions in the basis
    where they actually are per-chain; cross-stream combining stays with the
    known linear map, mirroring the stage-1 architecture."""

    bank: SubNNBank
    w_bb_h: np.ndarray
    power_dbm: float

    @property
    def n_hidden(self) -> int:
        return self.bank.n_hidden

    @property
    def n_params(self) -> int:
        return self.bank.n_params

    @classmethod
    def init(cls, n_chains: int, n_hidden: int, power_dbm: float,
             rng: RandomSource, w_bb_h: np.ndarray) -> "RxCompensator":
        # identity-seeded: the untrained compensator is the plain combiner
        return cls(bank=SubNNBank.init_linear(n_chains, n_hidden, rng),
                   w_bb_h=np.array(w_bb_h), power_dbm=power_dbm)

    def apply(self, y_pre: np.ndarray, per_symbol: float) -> np.ndarray:
        c, _ = self.bank.forward(rows_to_pairs(y_pre))
        out, _ = normalize_block(self.w_bb_h @ pairs_to_rows(c), per_symbol)
        return out


@dataclass
class DDnnBaseline:
    """Direct fully connected baseline on stacked (re, im) of the N_s streams.

    Inputs/outputs are standardized by a fixed scale learned from the training
    set (the tanh layers need O(1) dynamic range)."""

    mlp: MLP
    scale: float
    power_dbm: float

    @property
    def n_params(self) -> int:
        return self.mlp.n_params

    @classmethod
    def init(cls, power_dbm: float, rng: RandomSource,
             layers: list[int] | None = None) -> "DDnnBaseline":
        return cls(mlp=MLP.init(layers or DDNN_LAYERS, rng), scale=1.0,
                   power_dbm=power_dbm)

    def apply(self, y: np.ndarray) -> np.ndarray:
        x = np.concatenate([y.real, y.imag], axis=0) * self.scale
        out, _ = self.mlp.forward(x)
        n = y.shape[0]
        return (out[:n] + 1j * out[n:]) / self.scale


def normalize_block(x: np.ndarray, per_symbol: float):
    """Scale a complex block so ||x||_F^2 = per_symbol * n_columns.

    Preserves relative amplitudes (a per-column constraint would erase the
    amplitude component of QAM symbols). Returns (scaled, cache) for backprop.
    """
    nsq = frobenius_norm_sq(x)
    target = per_symbol * x.shape[1]
    scale = np.sqrt(target / nsq)
    return scale * x, (x, nsq, scale)


def normalize_backward(cache, gy: np.ndarray) -> np.ndarray:
    """Pair-convention gradient through y = sqrt(target/||x||^2) x."""
    x, nsq, scale = cache
    inner = float(np.real(np.vdot(x, gy)))  # sum of re*re + im*im
    return scale * (gy - x * (inner / nsq))


def _freeze_guard(frozen: StructuredDNN):
    before = frozen.params_checksum()

    def check():
        if frozen.params_checksum() != before:
            raise AssertionError("frozen stage-1 parameters changed during stage-2 training")
    return check


def train_tx_comp(comp: TxCompensator, frozen: StructuredDNN, s1_pilots: np.ndarray,
                  y_ideal: np.ndarray, tcfg: TrainingConfig) -> TrainingReport:
    """Fit the Tx compensator through the frozen surrogate toward the ideal
    receptions; only the compensator parameters move."""
    if abs(comp.power_dbm - frozen.power_dbm) > 1e-9:
        raise PolicyError(
            f"compensator at {comp.power_dbm} dBm vs frozen model at "
            f"{frozen.power_dbm} dBm; retrain per power")
    check_frozen = _freeze_guard(frozen)
    params = comp.bank.params()
    n_s = y_ideal.shape[0]

    def forward_loss(idx, want_grads):
        s1 = s1_pilots[:, idx]
        y_i = y_ideal[:, idx]
        c, cache_b = comp.bank.forward(rows_to_pairs(s1))
        sbar_raw = pairs_to_rows(c)
        sbar, cache_n = normalize_block(sbar_raw, n_s)
        yhat, cache_f = dnn_forward(frozen, sbar, return_cache=True)
        loss, g_y = mse_loss_and_grad(yhat, y_i)
        if not want_grads:
            return loss, None
        _, g_sbar = dnn_backward(frozen, cache_f, g_y, want_param_grads=False)
        g_raw = normalize_backward(cache_n, g_sbar)
        grads, _ = comp.bank.backward(cache_b, rows_to_pairs(g_raw))
        return loss, grads

    rng = RandomSource(tcfg.seed, "train_tx_comp")
    report = run_training_loop(params, forward_loss, s1_pilots.shape[1], tcfg, rng,
                               comp.n_params)
    check_frozen()
    return report


def train_rx_comp(comp: RxCompensator, frozen: StructuredDNN, s1_pilots: np.ndarray,
                  y_ideal: np.ndarray, tcfg: TrainingConfig) -> TrainingReport:
    """Fit the Rx compensator on the frozen surrogate's pre-combiner outputs."""
    if abs(comp.power_dbm - frozen.power_dbm) > 1e-9:
        raise PolicyError(
            f"compensator at {comp.power_dbm} dBm vs frozen model at "
            f"{frozen.power_dbm} dBm; retrain per power")
    check_frozen = _freeze_guard(frozen)
    from .stage1 import dnn_apply

    _, shat2 = dnn_apply(frozen, s1_pilots)   # fixed training inputs
    params = comp.bank.params()
    n_s = y_ideal.shape[0]

    def forward_loss(idx, want_grads):
        xin = shat2[:, idx]
        y_i = y_ideal[:, idx]
        c, cache_b = comp.bank.forward(rows_to_pairs(xin))
        combined = comp.w_bb_h @ pairs_to_rows(c)
        ycr, cache_n = normalize_block(combined, n_s)
        loss, g_y = mse_loss_and_grad(ycr, y_i)
        if not want_grads:
            return loss, None
        g_comb = normalize_backward(cache_n, g_y)
        g_raw = comp.w_bb_h.conj().T @ g_comb
        grads, _ = comp.bank.backward(cache_b, rows_to_pairs(g_raw))
        return loss, grads

    rng = RandomSource(tcfg.seed, "train_rx_comp")
    report = run_training_loop(params, forward_loss, s1_pilots.shape[1], tcfg, rng,
                               comp.n_params)
    check_frozen()
    return report


def train_ddnn(model: DDnnBaseline, y_received: np.ndarray, y_ideal: np.ndarray,
               tcfg: TrainingConfig) -> TrainingReport:
    """Fit the direct baseline on (impaired reception -> ideal reception) pairs."""
    rms = np.sqrt(np.mean(np.abs(y_received) ** 2))
    model.scale = 1.0 / rms if rms > 0 else 1.0
    x_all = np.concatenate([y_received.real, y_received.imag], axis=0) * model.scale
    t_all = np.concatenate([y_ideal.real, y_ideal.imag], axis=0) * model.scale
    params = model.mlp.params()

    def forward_loss(idx, want_grads):
        x = x_all[:, idx]
        t = t_all[:, idx]
        out, cache = model.mlp.forward(x)
        diff = out - t
        n = diff.size
        loss = float(np.sum(diff * diff)) / n
        if not want_grads:
            return loss, None
        grads, _ = model.mlp.backward(cache, 2.0 * diff / n)
        return loss, grads

    rng = RandomSource(tcfg.seed, "train_ddnn")
    return run_training_loop(params, forward_loss, x_all.shape[1], tcfg, rng,
                             model.n_params)


@dataclass
class EvalResult:
    side: str
    ser: float
    n_qam_symbols: int
    n_errors: int
    snr_db: float
    power_dbm: float
    seed: int
    points: np.ndarray        # sample of equalized symbols (for constellations)
    points_ref: np.ndarray    # the sent symbols for those samples


def deploy_and_evaluate(side: str, link: LinkRealization, spec: ChainSpec,
                        n_symbols: int, rng: RandomSource,
                        comp=None, block_size: int = 10000,
                        collect_points: int = 2000) -> EvalResult:
    """Monte-Carlo SER of the real impaired chain with a compensator inserted.

    n_symbols counts symbol vectors (each carries N_s QAM symbols). The Tx
    compensator replaces the digitally precoded baseband block; the Rx
    compensator consumes the pre-combiner reception; the D-DNN corrects the
    combined reception. Equalization divides out the known linear gain so hard
    decisions land on the unit-energy 16-QAM grid.
    """
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got {side!r}")
    if side != "none" and comp is None:
        raise ValueError(f"side {side!r} needs a trained compensator")
    n_s = link.cfg.n_streams
    eq = equalizer_matrix(link)
    gain = link.ideal_gain
    errors = 0
    total = 0
    snr_db = np.nan
    pts: list[np.ndarray] = []
    refs: list[np.ndarray] = []

    done = 0
    block_idx = 0
    while done < n_symbols:
        b = min(block_size, n_symbols - done)
        rs = rng.child(f"block:{block_idx}")
        g = rs.child("symbols").generator()
        idx = g.integers(0, 16, size=(n_s, b))
        s = QAM16_SYMBOLS[idx]

        if side == "tx":
            s1 = link.bset.f_bb @ s
            c, _ = comp.bank.forward(rows_to_pairs(s1))
            sbar, _ = normalize_block(pairs_to_rows(c), n_s)
            x = tx_chain_from_baseband(sbar, link, spec, rs)
        else:
            x = tx_chain(s, link, spec, rs)

        if block_idx == 0:
            try:
                snr_db = measure_snr(link, x)
            except ValueError:
                snr_db = np.nan

        if side == "rx":
            y2 = rx_frontend(x, link, spec, rs)
            y = comp.apply(y2, n_s)
        elif side == "ddnn":
            y = comp.apply(rx_chain(x, link, spec, rs))
        else:
            y = rx_chain(x, link, spec, rs)

        shat = (eq @ y) / gain
        errors += int(np.sum(symbols_to_indices(shat) != idx))
        total += idx.size
        if sum(p.shape[1] for p in pts) < collect_points:
            keep = min(b, max(1, collect_points // n_s))
            pts.append(shat[:, :keep])
            refs.append(s[:, :keep])
        done += b
        block_idx += 1

    return EvalResult(side=side, ser=errors / total, n_qam_symbols=total,
                      n_errors=errors, snr_db=float(snr_db),
                      power_dbm=link.cfg.transmit_power_dbm, seed=rng.seed,
                      points=np.concatenate(pts, axis=1),
                      points_ref=np.concatenate(refs, axis=1))


def extract_linear_precoder(comp: TxCompensator, s_pilots: np.ndarray,
                            f_bb: np.ndarray) -> tuple[np.ndarray, float]:
    """Least-squares linear precoder equivalent to the trained compensator.

    F_BB,c = sbar1 s^H (s s^H)^(-1). The residual ||F_BB,c s - sbar1||_F /
    ||sbar1||_F quantifies how nonlinear the learned map actually is (the
    solve is only exact when the compensator is linear).
    """
    n_s = s_pilots.shape[0]
    gram = s_pilots @ s_pilots.conj().T
    svals = np.linalg.svd(gram, compute_uv=False)
    if svals[-1] < 1e-12 * svals[0]:
        raise ValueError("pilot block is rank deficient; cannot extract a precoder")
    c, _ = comp.bank.forward(rows_to_pairs(f_bb @ s_pilots))
    sbar, _ = normalize_block(pairs_to_rows(c), n_s)
    f_bbc = sbar @ s_pilots.conj().T @ np.linalg.inv(gram)
    residual = np.sqrt(frobenius_norm_sq(f_bbc @ s_pilots - sbar)
                       / frobenius_norm_sq(sbar))
    return f_bbc, float(residual)


# --- checkpoints -------------------------------------------------------------

def save_compensator(path: str, comp, extra_metadata: dict | None = None) -> None:
    if isinstance(comp, (TxCompensator, RxCompensator)):
        kind = "tx_comp" if isinstance(comp, TxCompensator) else "rx_comp"
        arrays = [("bank.w1", comp.bank.w1), ("bank.b1", comp.bank.b1),
                  ("bank.w2", comp.bank.w2), ("bank.b2", comp.bank.b2)]
        if kind == "rx_comp":
            arrays += [("w_bb_h.re", comp.w_bb_h.real), ("w_bb_h.im", comp.w_bb_h.imag)]
        meta = {"kind": kind, "power_dbm": comp.power_dbm,
                "n_hidden": comp.n_hidden, "n_params": comp.n_params}
    elif isinstance(comp, DDnnBaseline):
        arrays = []
        for i, (w, b) in enumerate(zip(comp.mlp.weights, comp.mlp.biases)):
            arrays += [(f"layer{i}.w", w), (f"layer{i}.b", b)]
        meta = {"kind": "ddnn", "power_dbm": comp.power_dbm, "scale": comp.scale,
                "n_layers": len(comp.mlp.weights), "n_params": comp.n_params}
    else:
        raise TypeError(f"cannot checkpoint {type(comp)!r}")
    meta.update(extra_metadata or {})
    save_checkpoint(path, arrays, meta)


def load_compensator(path: str):
    arrays, meta = load_checkpoint(path)
    kind = meta.get("kind")
    if kind == "tx_comp":
        bank = SubNNBank(w1=arrays["bank.w1"], b1=arrays["bank.b1"],
                         w2=arrays["bank.w2"], b2=arrays["bank.b2"])
        return TxCompensator(bank=bank, power_dbm=float(meta["power_dbm"])), meta
    if kind == "rx_comp":
        bank = SubNNBank(w1=arrays["bank.w1"], b1=arrays["bank.b1"],
                         w2=arrays["bank.w2"], b2=arrays["bank.b2"])
        w_bb_h = arrays["w_bb_h.re"] + 1j * arrays["w_bb_h.im"]
        return RxCompensator(bank=bank, w_bb_h=w_bb_h,
                             power_dbm=float(meta["power_dbm"])), meta
    if kind == "ddnn":
        n = int(meta["n_layers"])
        mlp = MLP(weights=[arrays[f"layer{i}.w"] for i in range(n)],
                  biases=[arrays[f"layer{i}.b"] for i in range(n)])
        model = DDnnBaseline(mlp=mlp, scale=float(meta["scale"]),
                             power_dbm=float(meta["power_dbm"]))
        return model, meta
    raise ValueError(f"{path} is not a compensator checkpoint")
