"""Stage-1 structured network: three sub-NN banks interleaved with the known
linear maps of the link, trained to reproduce the impaired received signal.

    yhat = W_BB^H . bank3( W_RF^H H . bank2( F_RF P_in . bank1(s1) ) )

bank1 has one sub-NN per Tx RF chain, bank2 one per Tx antenna (or a single
shared one, or none with the linear PA gain in its place), bank3 one per Rx RF
chain. The fixed maps use the nominal (error-free) matrices; every impairment
effect has to be absorbed by the banks.

Gradients flow through the fixed complex maps as their conjugate transpose
acting on the (re, im)-pair gradient signal.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .chain import ChainSpec, LinkRealization, run_chain
from .core import RandomSource
from .neural import (
    SubNNBank,
    TrainingConfig,
    TrainingReport,
    pairs_to_rows,
    rows_to_pairs,
    run_training_loop,
    save_checkpoint,
    load_checkpoint,
    subnn_param_count,
)

SLIM_MODES = ("full", "share", "remove")
LOW_POWER_THRESHOLD_DBM = 5.0


class PolicyError(RuntimeError):
    """Requested slimming is outside its validity regime."""


@dataclass
class StructuredDNN:
    mode: str
    n_hidden: int
    bank1: SubNNBank
    bank2: SubNNBank | None       # N_t lanes (full), 1 lane (share), None (remove)
    bank3: SubNNBank
    a1: np.ndarray                # F_RF P_in  (N_t, L_t)
    a2: np.ndarray                # W_RF^H H   (L_r, N_t)
    w_bb_h: np.ndarray            # W_BB^H     (N_s, L_r)
    pa_gain_lin: float            # stands in for bank2 in remove mode
    power_dbm: float

    @property
    def n_params(self) -> int:
        n = self.bank1.n_params + self.bank3.n_params
        if self.bank2 is not None:
            n += self.bank2.n_params
        return n

    def params(self) -> list[np.ndarray]:
        out = self.bank1.params()
        if self.bank2 is not None:
            out += self.bank2.params()
        return out + self.bank3.params()

    def params_checksum(self) -> str:
        digest = hashlib.sha256()
        for p in self.params():
            digest.update(p.tobytes())
        return digest.hexdigest()


def stage1_param_count(l_t: int, n_t: int, l_r: int, n_hidden: int, mode: str) -> int:
    """Closed-form trainable-parameter count per slimming mode."""
    per = subnn_param_count(n_hidden)
    if mode == "full":
        return (l_t + n_t + l_r) * per
    if mode == "share":
        return (l_t + 1 + l_r) * per
    if mode == "remove":
        return (l_t + l_r) * per
    raise ValueError(f"unknown mode {mode!r}")


def build_stage1(link: LinkRealization, n_hidden: int, mode: str,
                 rng: RandomSource) -> StructuredDNN:
    """Fresh model wired to the link's nominal matrices.

    Banks 1 and 3 are identity-seeded (their targets are near-linear per-chain
    corrections), so the untrained network starts close to the nominal chain.
    Bank 2 is random-initialized: it must learn the strongly curved PA map,
    and identity seeding leaves the optimizer stuck on that (the large output
    weights make the surface too stiff; measured ~26% vs ~2% final fit).
    """
    if mode not in SLIM_MODES:
        raise ValueError(f"mode must be one of {SLIM_MODES}, got {mode!r}")
    cfg = link.cfg
    bank1 = SubNNBank.init_linear(cfg.n_tx_chains, n_hidden, rng.child("bank1"))
    bank3 = SubNNBank.init_linear(cfg.n_rx_chains, n_hidden, rng.child("bank3"))
    if mode == "full":
        bank2 = SubNNBank.init(cfg.n_tx_antennas, n_hidden, rng.child("bank2"))
    elif mode == "share":
        bank2 = SubNNBank.init(1, n_hidden, rng.child("bank2"))
    else:
        bank2 = None
    return StructuredDNN(
        mode=mode, n_hidden=n_hidden, bank1=bank1, bank2=bank2, bank3=bank3,
        a1=link.bset.f_rf @ link.bset.p_in,
        a2=link.bset.w_rf.conj().T @ link.h,
        w_bb_h=link.bset.w_bb.conj().T,
        pa_gain_lin=link.pa_gain_lin,
        power_dbm=link.cfg.transmit_power_dbm,
    )


def _shared_fold(pairs: np.ndarray) -> np.ndarray:
    """(K, 2, B) -> (1, 2, K*B) so one lane serves every antenna."""
    k, _, b = pairs.shape
    return pairs.transpose(1, 0, 2).reshape(1, 2, k * b)


def _shared_unfold(pairs: np.ndarray, k: int) -> np.ndarray:
    _, _, kb = pairs.shape
    b = kb // k
    return pairs.reshape(2, k, b).transpose(1, 0, 2)


def dnn_forward(model: StructuredDNN, s1: np.ndarray, return_cache: bool = False):
    """Evaluate the structured network on s1 (L_t x B complex).

    Returns yhat (N_s x B), or (yhat, cache) when return_cache is set; the
    cache also carries s6, the signal just before the digital combiner.
    """
    if s1.shape[0] != model.bank1.n_lanes:
        raise ValueError(f"s1 must have {model.bank1.n_lanes} rows, got {s1.shape[0]}")
    c1 = rows_to_pairs(s1)
    y1, cache1 = model.bank1.forward(c1)
    s2 = pairs_to_rows(y1)
    s3 = model.a1 @ s2

    cache2 = None
    if model.mode == "remove":
        s4 = model.pa_gain_lin * s3
    elif model.mode == "share":
        folded = _shared_fold(rows_to_pairs(s3))
        y2, cache2 = model.bank2.forward(folded)
        s4 = pairs_to_rows(_shared_unfold(y2, s3.shape[0]))
    else:
        c2 = rows_to_pairs(s3)
        y2, cache2 = model.bank2.forward(c2)
        s4 = pairs_to_rows(y2)

    s5 = model.a2 @ s4
    c3 = rows_to_pairs(s5)
    y3, cache3 = model.bank3.forward(c3)
    s6 = pairs_to_rows(y3)
    yhat = model.w_bb_h @ s6
    if return_cache:
        return yhat, (cache1, cache2, cache3, s3.shape[0], s6)
    return yhat


def dnn_apply(model: StructuredDNN, s1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(yhat, s6): full output and the pre-combiner signal the Rx compensator sees."""
    yhat, cache = dnn_forward(model, s1, return_cache=True)
    return yhat, cache[4]


def dnn_backward(model: StructuredDNN, cache, g_y: np.ndarray,
                 want_param_grads: bool = True):
    """Backpropagate the complex pair-gradient g_y (N_s x B) of a real loss.

    Returns (param_grads aligned with model.params() or None, g_s1).
    """
    cache1, cache2, cache3, n_t_rows, _ = cache
    g6 = model.w_bb_h.conj().T @ g_y
    grads3, gc3 = model.bank3.backward(cache3, rows_to_pairs(g6))
    g5 = pairs_to_rows(gc3)
    g4 = model.a2.conj().T @ g5

    grads2: list[np.ndarray] = []
    if model.mode == "remove":
        g3 = model.pa_gain_lin * g4
    elif model.mode == "share":
        folded = _shared_fold(rows_to_pairs(g4))
        grads2, gc2 = model.bank2.backward(cache2, folded)
        g3 = pairs_to_rows(_shared_unfold(gc2, n_t_rows))
    else:
        grads2, gc2 = model.bank2.backward(cache2, rows_to_pairs(g4))
        g3 = pairs_to_rows(gc2)

    g2 = model.a1.conj().T @ g3
    grads1, gc1 = model.bank1.backward(cache1, rows_to_pairs(g2))
    g_s1 = pairs_to_rows(gc1)
    if not want_param_grads:
        return None, g_s1
    return grads1 + grads2 + grads3, g_s1


def mse_loss_and_grad(yhat: np.ndarray, y: np.ndarray):
    """Mean |yhat - y|^2 over all entries, and its pair-convention gradient."""
    diff = yhat - y
    n = diff.size
    loss = float(np.real(np.vdot(diff, diff))) / n
    return loss, 2.0 * diff / n


@dataclass
class Stage1Dataset:
    """Training pairs for one transmit power: sent symbols, their digitally
    precoded form, and the impaired / noise-free / ideal received blocks.

    y_i is the ideal-hardware reception of the SAME transmission: it carries
    the same thermal-noise realization as y_e (the stage-2 target is "this
    reception without hardware distortion", not a denoised one)."""

    s: np.ndarray        # (N_s, M) unit-energy 16-QAM symbols
    s1: np.ndarray       # (L_t, M) = F_BB s
    y_e: np.ndarray      # (N_s, M) full impaired chain output
    y_s: np.ndarray      # (N_s, M) impaired chain, random noises removed
    y_i: np.ndarray      # (N_s, M) ideal chain, common noise realization
    power_dbm: float
    seed: int

    @property
    def n_samples(self) -> int:
        return self.s.shape[1]

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.s.tobytes())
        digest.update(self.y_e.tobytes())
        return digest.hexdigest()[:16]


def generate_dataset(link: LinkRealization, n_samples: int, rng: RandomSource,
                     spec: ChainSpec | None = None) -> Stage1Dataset:
    """Run n_samples random 16-QAM symbol vectors through the impaired chain."""
    from .modem_coding import QAM16_SYMBOLS

    spec = spec if spec is not None else ChainSpec.all_on()
    g = rng.child("symbols").generator()
    idx = g.integers(0, 16, size=(link.cfg.n_streams, n_samples))
    s = QAM16_SYMBOLS[idx]
    chain_rng = rng.child("chain")
    y_e = run_chain(s, link, spec, chain_rng)
    y_s = run_chain(s, link, spec, chain_rng, mean_mode=True)
    # same chain_rng: the thermal stream replays, so y_i sees the same noise
    y_i = run_chain(s, link, ChainSpec.all_off(), chain_rng)
    return Stage1Dataset(s=s, s1=link.bset.f_bb @ s, y_e=y_e, y_s=y_s, y_i=y_i,
                         power_dbm=link.cfg.transmit_power_dbm, seed=rng.seed)


def train_stage1(model: StructuredDNN, data: Stage1Dataset,
                 tcfg: TrainingConfig) -> TrainingReport:
    """Minimize the MSE between the network output and the impaired receptions."""
    if abs(model.power_dbm - data.power_dbm) > 1e-9:
        raise PolicyError(
            f"model operates at {model.power_dbm} dBm but dataset was generated "
            f"at {data.power_dbm} dBm; stage-1 models are power-specific")
    params = model.params()

    def forward_loss(idx, want_grads):
        s1 = data.s1[:, idx]
        y = data.y_e[:, idx]
        yhat, cache = dnn_forward(model, s1, return_cache=True)
        loss, g_y = mse_loss_and_grad(yhat, y)
        if not want_grads:
            return loss, None
        grads, _ = dnn_backward(model, cache, g_y)
        return loss, grads

    rng = RandomSource(tcfg.seed, "train_stage1")
    return run_training_loop(params, forward_loss, data.n_samples, tcfg, rng,
                             model.n_params)


def slim(model: StructuredDNN, mode: str, n_hidden: int | None = None,
         rng: RandomSource | None = None, override: bool = False) -> StructuredDNN:
    """Return a fresh-initialized model with the slimmed architecture.

    mode: "prune" (needs n_hidden < current), "share_nn2", "remove_nn2".
    Slimming selects the architecture; training is rerun on the new model.
    remove_nn2 is a low-power simplification and refuses to run at or above
    the 5 dBm threshold unless overridden.
    """
    rng = rng if rng is not None else RandomSource(0, "slim")
    if mode == "prune":
        if n_hidden is None or n_hidden >= model.n_hidden:
            raise ValueError(
                f"prune needs n_hidden < {model.n_hidden}, got {n_hidden}")
        target_mode = model.mode
    elif mode == "share_nn2":
        target_mode = "share"
        n_hidden = n_hidden if n_hidden is not None else model.n_hidden
    elif mode == "remove_nn2":
        if model.power_dbm >= LOW_POWER_THRESHOLD_DBM and not override:
            raise PolicyError(
                f"remove_nn2 is only valid below {LOW_POWER_THRESHOLD_DBM} dBm "
                f"(model at {model.power_dbm} dBm); pass override=True to force")
        target_mode = "remove"
        n_hidden = n_hidden if n_hidden is not None else model.n_hidden
    else:
        raise ValueError(f"unknown slim mode {mode!r}")

    cfg_lanes = {
        "full": model.a1.shape[0],
        "share": 1,
        "remove": 0,
    }
    bank1 = SubNNBank.init_linear(model.bank1.n_lanes, n_hidden, rng.child("bank1"))
    bank3 = SubNNBank.init_linear(model.bank3.n_lanes, n_hidden, rng.child("bank3"))
    lanes2 = cfg_lanes[target_mode]
    bank2 = SubNNBank.init(lanes2, n_hidden, rng.child("bank2")) if lanes2 else None
    return StructuredDNN(
        mode=target_mode, n_hidden=n_hidden, bank1=bank1, bank2=bank2, bank3=bank3,
        a1=model.a1, a2=model.a2, w_bb_h=model.w_bb_h,
        pa_gain_lin=model.pa_gain_lin, power_dbm=model.power_dbm)


def save_stage1(path: str, model: StructuredDNN, extra_metadata: dict | None = None) -> None:
    """Checkpoint with the fixed maps included, plus a model-manifest record."""
    arrays = [
        ("bank1.w1", model.bank1.w1), ("bank1.b1", model.bank1.b1),
        ("bank1.w2", model.bank1.w2), ("bank1.b2", model.bank1.b2),
    ]
    if model.bank2 is not None:
        arrays += [
            ("bank2.w1", model.bank2.w1), ("bank2.b1", model.bank2.b1),
            ("bank2.w2", model.bank2.w2), ("bank2.b2", model.bank2.b2),
        ]
    arrays += [
        ("bank3.w1", model.bank3.w1), ("bank3.b1", model.bank3.b1),
        ("bank3.w2", model.bank3.w2), ("bank3.b2", model.bank3.b2),
        ("a1.re", model.a1.real), ("a1.im", model.a1.imag),
        ("a2.re", model.a2.real), ("a2.im", model.a2.imag),
        ("w_bb_h.re", model.w_bb_h.real), ("w_bb_h.im", model.w_bb_h.imag),
    ]
    meta = {
        "kind": "stage1",
        "mode": model.mode,
        "n_hidden": model.n_hidden,
        "power_dbm": model.power_dbm,
        "pa_gain_lin": model.pa_gain_lin,
        "n_params": model.n_params,
    }
    meta.update(extra_metadata or {})
    save_checkpoint(path, arrays, meta)


def load_stage1(path: str) -> tuple[StructuredDNN, dict]:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "stage1":
        raise ValueError(f"{path} is not a stage-1 checkpoint")

    def bank(prefix: str) -> SubNNBank:
        return SubNNBank(w1=arrays[prefix + ".w1"], b1=arrays[prefix + ".b1"],
                         w2=arrays[prefix + ".w2"], b2=arrays[prefix + ".b2"])

    bank2 = bank("bank2") if "bank2.w1" in arrays else None
    model = StructuredDNN(
        mode=meta["mode"], n_hidden=int(meta["n_hidden"]),
        bank1=bank("bank1"), bank2=bank2, bank3=bank("bank3"),
        a1=arrays["a1.re"] + 1j * arrays["a1.im"],
        a2=arrays["a2.re"] + 1j * arrays["a2.im"],
        w_bb_h=arrays["w_bb_h.re"] + 1j * arrays["w_bb_h.im"],
        pa_gain_lin=float(meta["pa_gain_lin"]),
        power_dbm=float(meta["power_dbm"]))
    return model, meta
