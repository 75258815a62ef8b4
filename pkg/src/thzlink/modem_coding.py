"""16-QAM Gray modulation, symbol-error counting, and the coded system:
rate-2/3 punctured convolutional code with hard-decision Viterbi decoding.

Code details (the generators are a design choice, not a claim about the source
system): K=7 mother code with octal generators (171, 133), punctured to rate
2/3 with pattern X:[1,0], Y:[1,1], zero tail bits, full-block traceback.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

# --- 16-QAM with per-axis Gray mapping -------------------------------------
# two bits (msb, lsb) -> amplitude level; adjacent levels differ in one bit
_GRAY_TO_LEVEL = {(0, 0): -3, (0, 1): -1, (1, 1): 1, (1, 0): 3}
QAM16_SCALE = 1.0 / np.sqrt(10.0)  # unit average symbol energy

# index i in 0..15 <-> bits (b0 b1 b2 b3), I from (b0,b1), Q from (b2,b3)
_IDX_TO_SYMBOL = np.empty(16, dtype=complex)
_IDX_TO_BITS = np.empty((16, 4), dtype=np.uint8)
for _i in range(16):
    _bits = ((_i >> 3) & 1, (_i >> 2) & 1, (_i >> 1) & 1, _i & 1)
    _re = _GRAY_TO_LEVEL[(_bits[0], _bits[1])]
    _im = _GRAY_TO_LEVEL[(_bits[2], _bits[3])]
    _IDX_TO_SYMBOL[_i] = (_re + 1j * _im) * QAM16_SCALE
    _IDX_TO_BITS[_i] = _bits

QAM16_SYMBOLS = _IDX_TO_SYMBOL.copy()


# bits for levels (-3, -1, 1, 3) in that order
_LEVEL_IDX_TO_BITS = np.array([[0, 0], [0, 1], [1, 1], [1, 0]], dtype=np.int64)


def _slice_axis_index(values: np.ndarray) -> np.ndarray:
    """Index (0..3) of the nearest normalized amplitude level."""
    return np.clip(np.round((values / QAM16_SCALE + 3.0) / 2.0), 0, 3).astype(np.int64)


def modulate(bits: np.ndarray) -> np.ndarray:
    """Map a flat bit array (length divisible by 4) to 16-QAM symbols."""
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size % 4 != 0:
        raise ValueError(f"bit count must be divisible by 4, got {bits.size}")
    groups = bits.reshape(-1, 4)
    idx = (groups[:, 0].astype(int) << 3) | (groups[:, 1].astype(int) << 2) \
        | (groups[:, 2].astype(int) << 1) | groups[:, 3].astype(int)
    return _IDX_TO_SYMBOL[idx]


def symbols_to_indices(symbols: np.ndarray) -> np.ndarray:
    """Hard decision: nearest constellation point index for each input symbol."""
    rb = _LEVEL_IDX_TO_BITS[_slice_axis_index(np.real(symbols))]
    ib = _LEVEL_IDX_TO_BITS[_slice_axis_index(np.imag(symbols))]
    return (rb[..., 0] << 3) | (rb[..., 1] << 2) | (ib[..., 0] << 1) | ib[..., 1]


def demodulate_hard(symbols: np.ndarray) -> np.ndarray:
    """Hard-decision demodulation back to a flat bit array."""
    idx = symbols_to_indices(np.asarray(symbols).ravel())
    return _IDX_TO_BITS[idx].ravel().copy()


def ser(tx_symbols: np.ndarray, rx_symbols: np.ndarray) -> float:
    """Fraction of hard decisions that differ between the two symbol streams."""
    tx = np.asarray(tx_symbols).ravel()
    rx = np.asarray(rx_symbols).ravel()
    if tx.size != rx.size:
        raise ValueError(f"length mismatch: {tx.size} vs {rx.size}")
    return float(np.mean(symbols_to_indices(tx) != symbols_to_indices(rx)))


# --- rate-2/3 punctured convolutional code + hard Viterbi -------------------

CONSTRAINT_LEN = 7
GENERATORS = (0o171, 0o133)
# per two info bits the mother code emits (x1,y1,x2,y2); transmit (x1,y1,y2)
PUNCTURE_KEEP = np.array([1, 1, 0, 1], dtype=bool)
N_STATES = 1 << (CONSTRAINT_LEN - 1)


def _parity(v: np.ndarray) -> np.ndarray:
    out = np.zeros_like(v)
    while np.any(v):
        out ^= v & 1
        v = v >> 1
    return out


def _build_trellis():
    states = np.arange(N_STATES)
    # register r = (input << 6) | state, state = newest-first 6 bits
    next_state = np.empty((N_STATES, 2), dtype=np.int64)
    outputs = np.empty((N_STATES, 2, 2), dtype=np.uint8)
    for bit in (0, 1):
        reg = (bit << (CONSTRAINT_LEN - 1)) | states
        next_state[:, bit] = reg >> 1
        outputs[:, bit, 0] = _parity(reg & GENERATORS[0])
        outputs[:, bit, 1] = _parity(reg & GENERATORS[1])
    # reverse view: predecessors of each state and the input bit that leads there
    pred = np.empty((N_STATES, 2), dtype=np.int64)
    pred_out = np.empty((N_STATES, 2, 2), dtype=np.uint8)
    in_bit = np.empty(N_STATES, dtype=np.uint8)
    for ns in range(N_STATES):
        b = ns >> (CONSTRAINT_LEN - 2)
        in_bit[ns] = b
        for k, last in enumerate((0, 1)):
            p = ((ns << 1) & (N_STATES - 1)) | last
            pred[ns, k] = p
            pred_out[ns, k] = outputs[p, b]
    return next_state, outputs, pred, pred_out, in_bit


_NEXT_STATE, _OUTPUTS, _PRED, _PRED_OUT, _IN_BIT = _build_trellis()
TAIL_BITS = CONSTRAINT_LEN - 1


def conv_encode(bits: np.ndarray) -> np.ndarray:
    """Encode info bits (tail bits appended) and puncture to rate 2/3.

    The info length must be even so the puncturing period divides the block.
    """
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size % 2 != 0:
        raise ValueError("info bit count must be even for rate-2/3 puncturing")
    padded = np.concatenate([bits, np.zeros(TAIL_BITS, dtype=np.uint8)])
    state = 0
    coded = np.empty(2 * padded.size, dtype=np.uint8)
    for i, b in enumerate(padded):
        coded[2 * i] = _OUTPUTS[state, b, 0]
        coded[2 * i + 1] = _OUTPUTS[state, b, 1]
        state = _NEXT_STATE[state, b]
    keep = np.tile(PUNCTURE_KEEP, padded.size // 2)
    return coded[keep]


def _depuncture(coded: np.ndarray, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Expand a punctured stream to (n_steps, 2) with an availability mask."""
    full = np.zeros(2 * n_steps, dtype=np.uint8)
    mask = np.tile(PUNCTURE_KEEP, n_steps // 2)
    if int(mask.sum()) != coded.size:
        raise ValueError(f"coded length {coded.size} does not match {n_steps} trellis steps")
    full[mask] = coded
    return full.reshape(-1, 2), mask.reshape(-1, 2)


def viterbi_decode(coded_bits: np.ndarray, n_info_bits: int) -> np.ndarray:
    """Hard-decision Viterbi decoding (Hamming metric, punctured positions free).

    Decodes a full block with known zero start/end state, which makes the
    decoder exact maximum likelihood over the punctured code.
    """
    coded = np.asarray(coded_bits, dtype=np.uint8).ravel()
    if n_info_bits % 2 != 0:
        raise ValueError("info bit count must be even")
    n_steps = n_info_bits + TAIL_BITS
    obs, mask = _depuncture(coded, n_steps)

    big = np.float64(1e12)
    pm = np.full(N_STATES, big)
    pm[0] = 0.0
    choices = np.empty((n_steps, N_STATES), dtype=np.uint8)
    for t in range(n_steps):
        # branch metric per (state, predecessor-choice): masked Hamming distance
        d0 = (_PRED_OUT[:, :, 0] != obs[t, 0]) & mask[t, 0]
        d1 = (_PRED_OUT[:, :, 1] != obs[t, 1]) & mask[t, 1]
        bm = d0.astype(np.float64) + d1.astype(np.float64)
        cand = pm[_PRED] + bm
        choices[t] = np.argmin(cand, axis=1)
        pm = np.min(cand, axis=1)

    state = 0  # tail forces the zero state
    decided = np.empty(n_steps, dtype=np.uint8)
    for t in range(n_steps - 1, -1, -1):
        decided[t] = _IN_BIT[state]
        state = _PRED[state, choices[t, state]]
    return decided[:n_info_bits]


def codeword_metric(coded_bits: np.ndarray, info_bits: np.ndarray) -> int:
    """Hamming distance between a received punctured block and the codeword of
    `info_bits` (brute-force ML oracle support)."""
    ref = conv_encode(info_bits)
    rx = np.asarray(coded_bits, dtype=np.uint8).ravel()
    if ref.size != rx.size:
        raise ValueError("length mismatch")
    return int(np.sum(ref != rx))


# --- flat binary stream files ------------------------------------------------
# 8-byte header: magic (2 bytes), version uint16 LE, length uint32 LE

_BITS_MAGIC = b"TB"
_SYMS_MAGIC = b"TS"
_STREAM_VERSION = 1


def write_bits(path: str, bits: np.ndarray) -> None:
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<2sHI", _BITS_MAGIC, _STREAM_VERSION, bits.size))
        fh.write(np.packbits(bits).tobytes())


def read_bits(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, version, length = struct.unpack("<2sHI", fh.read(8))
        if magic != _BITS_MAGIC:
            raise ValueError(f"not a bit-stream file (magic {magic!r})")
        if version != _STREAM_VERSION:
            raise ValueError(f"unsupported version {version}")
        packed = np.frombuffer(fh.read(), dtype=np.uint8)
    return np.unpackbits(packed)[:length]


def write_symbols(path: str, symbols: np.ndarray) -> None:
    symbols = np.asarray(symbols, dtype=complex).ravel()
    inter = np.empty(2 * symbols.size)
    inter[0::2] = symbols.real
    inter[1::2] = symbols.imag
    with open(path, "wb") as fh:
        fh.write(struct.pack("<2sHI", _SYMS_MAGIC, _STREAM_VERSION, symbols.size))
        fh.write(inter.astype("<f8").tobytes())


def read_symbols(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, version, length = struct.unpack("<2sHI", fh.read(8))
        if magic != _SYMS_MAGIC:
            raise ValueError(f"not a symbol-stream file (magic {magic!r})")
        if version != _STREAM_VERSION:
            raise ValueError(f"unsupported version {version}")
        inter = np.frombuffer(fh.read(), dtype="<f8")
    return inter[0::2][:length] + 1j * inter[1::2][:length]


def analytic_ser_16qam(es_n0_db: float) -> float:
    """Closed-form AWGN 16-QAM SER: 1 - (1 - 1.5 Q(sqrt(g/5)))^2."""
    from math import erfc, sqrt

    g = 10.0 ** (es_n0_db / 10.0)
    q = 0.5 * erfc(sqrt(g / 5.0) / sqrt(2.0))
    p_axis = 1.5 * q
    return 1.0 - (1.0 - p_axis) ** 2
