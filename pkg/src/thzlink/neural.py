"""Minimal dense neural-network engine.

The building block is a 2-in / N_h-hidden / 2-out tanh MLP ("sub-NN") that maps
the (re, im) pair of one signal lane. `SubNN` is the single-lane form with the
reference forward/backward; `SubNNBank` vectorizes K identical-topology lanes
for the structured models. A small generic `MLP` covers the fully connected
baseline. Everything is float64 and exact-gradient (no autodiff framework).
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .core import RandomSource


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite."""


def tanh_act(x):
    """(1 - e^(-2x)) / (1 + e^(-2x)), numerically stable for large |x|."""
    return np.tanh(x)


def subnn_param_count(n_hidden: int) -> int:
    """2*N_h (input weights) + N_h (hidden bias) + 2*N_h (output weights) + 2."""
    return 5 * n_hidden + 2


@dataclass
class SubNN:
    """One 2 - N_h - 2 tanh network: h = tanh(W1 c + b1), y = W2^T h + b2."""

    w1: np.ndarray  # (N_h, 2)
    b1: np.ndarray  # (N_h,)
    w2: np.ndarray  # (N_h, 2), applied transposed
    b2: np.ndarray  # (2,)

    @property
    def n_hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def n_params(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size


def init_subnn(n_hidden: int, rng: RandomSource) -> SubNN:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    g = rng.generator()
    lim1 = np.sqrt(6.0 / (2 + n_hidden))
    lim2 = np.sqrt(6.0 / (n_hidden + 2))
    return SubNN(
        w1=g.uniform(-lim1, lim1, (n_hidden, 2)),
        b1=np.zeros(n_hidden),
        w2=g.uniform(-lim2, lim2, (n_hidden, 2)),
        b2=np.zeros(2),
    )


def subnn_forward(nn: SubNN, c: np.ndarray) -> np.ndarray:
    """Forward pass; accepts a single (2,) vector or a (2, B) batch."""
    single = c.ndim == 1
    cb = c[:, None] if single else c
    h = tanh_act(nn.w1 @ cb + nn.b1[:, None])
    y = nn.w2.T @ h + nn.b2[:, None]
    return y[:, 0] if single else y


def subnn_backward(nn: SubNN, c: np.ndarray, upstream: np.ndarray):
    """Exact gradients of (upstream . output) w.r.t. parameters and input.

    Returns (grads: SubNN-shaped arrays, input gradient of same shape as c).
    """
    single = c.ndim == 1
    cb = c[:, None] if single else c
    gy = upstream[:, None] if single else upstream
    h = tanh_act(nn.w1 @ cb + nn.b1[:, None])
    gw2 = h @ gy.T                      # (N_h, 2)
    gb2 = gy.sum(axis=1)
    gh = nn.w2 @ gy                     # (N_h, B)
    gpre = gh * (1.0 - h * h)
    gw1 = gpre @ cb.T                   # (N_h, 2)
    gb1 = gpre.sum(axis=1)
    gc = nn.w1.T @ gpre
    grads = SubNN(w1=gw1, b1=gb1, w2=gw2, b2=gb2)
    return grads, (gc[:, 0] if single else gc)


@dataclass
class SubNNBank:
    """K sub-NNs with a shared topology, evaluated lane-parallel.

    Data layout is (K, 2, B): lane, (re, im), batch.
    """

    w1: np.ndarray  # (K, N_h, 2)
    b1: np.ndarray  # (K, N_h)
    w2: np.ndarray  # (K, N_h, 2)
    b2: np.ndarray  # (K, 2)

    @property
    def n_lanes(self) -> int:
        return self.w1.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def n_params(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size

    @classmethod
    def init(cls, n_lanes: int, n_hidden: int, rng: RandomSource) -> "SubNNBank":
        g = rng.generator()
        lim1 = np.sqrt(6.0 / (2 + n_hidden))
        lim2 = np.sqrt(6.0 / (n_hidden + 2))
        return cls(
            w1=g.uniform(-lim1, lim1, (n_lanes, n_hidden, 2)),
            b1=np.zeros((n_lanes, n_hidden)),
            w2=g.uniform(-lim2, lim2, (n_lanes, n_hidden, 2)),
            b2=np.zeros((n_lanes, 2)),
        )

    @classmethod
    def init_linear(cls, n_lanes: int, n_hidden: int, rng: RandomSource,
                    gain: float = 1.0, pre_scale: float = 0.2,
                    noise: float = 0.02) -> "SubNNBank":
        """Identity-seeded init: each lane starts as approximately gain * input.

        Two hidden units embed the scaled identity in tanh's near-linear zone
        (cubic residual ~ pre_scale^2/3 at unit input); symmetry-breaking noise
        is relative to each layer's identity scale, so the composite map starts
        within ~2*noise of gain*identity. Starting at the nominal linear map
        removes the slow W1-shrink/W2-grow phase that random init needs before
        tanh lanes can express near-linear gains.
        """
        if n_hidden < 2:
            raise ValueError("identity seeding needs at least 2 hidden units")
        g = rng.generator()
        w1 = pre_scale * noise * g.uniform(-1, 1, (n_lanes, n_hidden, 2))
        w2 = (gain / pre_scale) * noise * g.uniform(-1, 1, (n_lanes, n_hidden, 2))
        w1[:, 0, 0] += pre_scale
        w1[:, 1, 1] += pre_scale
        w2[:, 0, 0] += gain / pre_scale
        w2[:, 1, 1] += gain / pre_scale
        return cls(w1=w1, b1=np.zeros((n_lanes, n_hidden)), w2=w2,
                   b2=np.zeros((n_lanes, 2)))

    def lane(self, k: int) -> SubNN:
        return SubNN(w1=self.w1[k], b1=self.b1[k], w2=self.w2[k], b2=self.b2[k])

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, c: np.ndarray):
        """c: (K, 2, B) -> (y: (K, 2, B), cache)."""
        pre = np.einsum("knj,kjb->knb", self.w1, c) + self.b1[:, :, None]
        h = tanh_act(pre)
        y = np.einsum("knj,knb->kjb", self.w2, h) + self.b2[:, :, None]
        return y, (c, h)

    def backward(self, cache, gy: np.ndarray):
        """Gradients for all lane parameters plus the input gradient."""
        c, h = cache
        gw2 = np.einsum("knb,kjb->knj", h, gy)
        gb2 = gy.sum(axis=2)
        gh = np.einsum("knj,kjb->knb", self.w2, gy)
        gpre = gh * (1.0 - h * h)
        gw1 = np.einsum("knb,kjb->knj", gpre, c)
        gb1 = gpre.sum(axis=2)
        gc = np.einsum("knj,knb->kjb", self.w1, gpre)
        return [gw1, gb1, gw2, gb2], gc


def rows_to_pairs(x: np.ndarray) -> np.ndarray:
    """Complex (K, B) -> real (K, 2, B) with (re, im) on the middle axis."""
    return np.stack([x.real, x.imag], axis=1)


def pairs_to_rows(p: np.ndarray) -> np.ndarray:
    """Real (K, 2, B) -> complex (K, B)."""
    return p[:, 0, :] + 1j * p[:, 1, :]


@dataclass
class MLP:
    """Fully connected tanh network with a linear output layer (the direct-DNN
    baseline shape is [8, 10, 10, 10, 8])."""

    weights: list[np.ndarray]  # (d_out, d_in) per layer
    biases: list[np.ndarray]

    @classmethod
    def init(cls, layer_sizes: list[int], rng: RandomSource) -> "MLP":
        g = rng.generator()
        weights, biases = [], []
        for d_in, d_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            lim = np.sqrt(6.0 / (d_in + d_out))
            weights.append(g.uniform(-lim, lim, (d_out, d_in)))
            biases.append(np.zeros(d_out))
        return cls(weights=weights, biases=biases)

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def params(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def forward(self, x: np.ndarray):
        """x: (d_in, B) -> (y: (d_out, B), cache of layer activations)."""
        acts = [x]
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = w @ a + b[:, None]
            a = z if i == last else tanh_act(z)
            acts.append(a)
        return a, acts

    def backward(self, cache, gy: np.ndarray):
        acts = cache
        grads: list[np.ndarray] = []
        g = gy
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i != last:
                g = g * (1.0 - acts[i + 1] ** 2)
            gw = g @ acts[i].T
            gb = g.sum(axis=1)
            grads[:0] = [gw, gb]
            g = self.weights[i].T @ g
        return grads, g


@dataclass
class TrainingConfig:
    """Optimization hyperparameters for every training stage.

    lr_final, when set, applies a per-epoch exponential decay from
    learning_rate down to lr_final across the run.
    """

    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    lr_final: float | None = None
    optimizer: str = "adam"   # "adam" | "sgd"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def lr_at(self, epoch: int) -> float:
        if self.lr_final is None or self.epochs <= 1:
            return self.learning_rate
        frac = epoch / (self.epochs - 1)
        return self.learning_rate * (self.lr_final / self.learning_rate) ** frac


@dataclass
class TrainingReport:
    loss_curve: np.ndarray
    final_loss: float
    wall_time_s: float
    n_params: int
    epochs: int


class Adam:
    """Adaptive-moment optimizer bound to a fixed parameter list (in-place)."""

    def __init__(self, params: list[np.ndarray], cfg: TrainingConfig):
        self.params = params
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray], lr: float | None = None) -> None:
        c = self.cfg
        rate = c.learning_rate if lr is None else lr
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= rate * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


class Sgd:
    """Plain gradient descent with the same interface as Adam."""

    def __init__(self, params: list[np.ndarray], cfg: TrainingConfig):
        self.params = params
        self.cfg = cfg

    def step(self, grads: list[np.ndarray], lr: float | None = None) -> None:
        rate = self.cfg.learning_rate if lr is None else lr
        for p, g in zip(self.params, grads):
            p -= rate * g


def make_optimizer(params: list[np.ndarray], cfg: TrainingConfig):
    if cfg.optimizer == "adam":
        return Adam(params, cfg)
    if cfg.optimizer == "sgd":
        return Sgd(params, cfg)
    raise ValueError(f"unknown optimizer {cfg.optimizer!r}")


def run_training_loop(params, forward_loss, n_samples: int, tcfg: TrainingConfig,
                      rng: RandomSource, n_params: int) -> TrainingReport:
    """Generic mini-batch loop.

    forward_loss(indices, want_grads) must return (loss, grads-aligned-with-params
    or None). Shuffling is seeded per epoch; reruns are bit-identical.
    """
    opt = make_optimizer(params, tcfg)
    losses = np.empty(tcfg.epochs)
    start = time.perf_counter()
    for epoch in range(tcfg.epochs):
        order = rng.child(f"shuffle:{epoch}").generator().permutation(n_samples)
        lr = tcfg.lr_at(epoch)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, n_samples, tcfg.batch_size):
            idx = order[lo: lo + tcfg.batch_size]
            loss, grads = forward_loss(idx, True)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch} "
                    f"(lr={tcfg.learning_rate}, batch={tcfg.batch_size})")
            opt.step(grads, lr=lr)
            epoch_loss += loss
            n_batches += 1
        losses[epoch] = epoch_loss / n_batches
    final_loss, _ = forward_loss(np.arange(n_samples), False)
    wall = time.perf_counter() - start
    return TrainingReport(loss_curve=losses, final_loss=float(final_loss),
                          wall_time_s=wall, n_params=n_params, epochs=tcfg.epochs)


# --- checkpoints: versioned flat binary + JSON sidecar -----------------------

_CKPT_MAGIC = b"THZN"
_CKPT_VERSION = 1


def save_checkpoint(path: str, named_arrays: list[tuple[str, np.ndarray]],
                    metadata: dict | None = None) -> None:
    """Binary: magic, version uint16 LE, array count uint32 LE, then each array's
    float64 little-endian values in listed order. Sidecar JSON records names,
    shapes and metadata."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHI", _CKPT_MAGIC, _CKPT_VERSION, len(named_arrays)))
        for _, arr in named_arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    sidecar = {
        "format_version": _CKPT_VERSION,
        "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in named_arrays],
        "metadata": metadata or {},
    }
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path + ".json") as fh:
        sidecar = json.load(fh)
    with open(path, "rb") as fh:
        magic, version, count = struct.unpack("<4sHI", fh.read(10))
        if magic != _CKPT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        if count != len(sidecar["arrays"]):
            raise ValueError("sidecar does not match binary (array count)")
        arrays: dict[str, np.ndarray] = {}
        for entry in sidecar["arrays"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n)
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return arrays, sidecar["metadata"]
