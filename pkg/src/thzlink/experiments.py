"""Experiment drivers behind the CLI: ablation sweeps, two-stage training,
compensated evaluation, constellation dumps, the coded system, and the
parameter-count report.

All outputs are CSV files (bit-reproducible from config + seed) with a PNG
figure rendered alongside each unless figures are disabled. Checkpoints land
in <out>/checkpoints and are found again by (stage, slim tag, power).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .chain import ChainSpec, HardwareProfile, LinkRealization, make_link
from .config import ExperimentConfig
from .core import RandomSource
from .modem_coding import (
    QAM16_SYMBOLS,
    conv_encode,
    modulate,
    demodulate_hard,
    symbols_to_indices,
    viterbi_decode,
)
from .neural import TrainingConfig
from .stage1 import (
    Stage1Dataset,
    StructuredDNN,
    build_stage1,
    dnn_forward,
    generate_dataset,
    load_stage1,
    save_stage1,
    stage1_param_count,
    train_stage1,
)
from .stage2 import (
    DDnnBaseline,
    RxCompensator,
    TxCompensator,
    deploy_and_evaluate,
    load_compensator,
    normalize_block,
    save_compensator,
    train_ddnn,
    train_rx_comp,
    train_tx_comp,
)


class DependencyError(RuntimeError):
    """A required checkpoint is missing; run the prerequisite stage first."""


STAGES = ("1", "2-tx", "2-rx", "ddnn")


def wilson_halfwidth(errors: int, n: int, z: float = 1.96) -> float:
    """Half-width of the Wilson score interval at the given z."""
    if n == 0:
        return 1.0
    p = errors / n
    denom = 1.0 + z * z / n
    half = (z / denom) * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return float(half)


def parse_slim(slim: str) -> tuple[str, int | None]:
    """--slim value -> (mode, n_hidden or None). Modes: none|prune:N|share|remove."""
    if slim in ("none", ""):
        return "full", None
    if slim.startswith("prune:"):
        return "full", int(slim.split(":", 1)[1])
    if slim == "share":
        return "share", None
    if slim == "remove":
        return "remove", None
    raise ValueError(f"unknown slim mode {slim!r} (use none|prune:N|share|remove)")


def slim_tag(mode: str, n_hidden: int) -> str:
    return f"{mode}{n_hidden}"


def build_link(config: ExperimentConfig, power_dbm: float) -> LinkRealization:
    cal = config.calibration
    return make_link(
        config.system_config(power_dbm), config.channel_model(),
        config.hardware_profile(), RandomSource(config.seed, "exp").child("link"),
        anchor_power_dbm=cal.anchor_power_dbm, anchor_snr_db=cal.anchor_snr_db,
        anchor_includes_combining_gain=cal.anchor_includes_combining_gain)


def training_dataset(config: ExperimentConfig, link: LinkRealization) -> Stage1Dataset:
    rng = RandomSource(config.seed, "exp").child(
        f"data:{link.cfg.transmit_power_dbm:g}")
    return generate_dataset(link, config.training.n_train_samples, rng)


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


# --- sweep -------------------------------------------------------------------

def run_sweep(config: ExperimentConfig, out_dir: str,
              powers: list[float] | None = None,
              scenarios: list[str] | None = None,
              figures: bool | None = None) -> str:
    """Ablation SER curves: one row per (power, scenario). Returns the CSV path."""
    os.makedirs(out_dir, exist_ok=True)
    powers = powers if powers is not None else config.sweep.powers_dbm
    scenarios = scenarios if scenarios is not None else config.sweep.scenarios
    figures = config.outputs.figures if figures is None else figures
    root = RandomSource(config.seed, "exp")
    base = build_link(config, powers[0])
    n_vec = config.sweep.n_symbol_vectors

    rows = []
    for power in sorted(powers):
        link = base.with_power(power)
        for scen in scenarios:
            spec = ChainSpec.from_scenario(scen)
            res = deploy_and_evaluate("none", link, spec, n_vec,
                                      root.child(f"sweep:{scen}:{power:g}"))
            rows.append([power, res.snr_db, scen, res.ser, res.n_qam_symbols,
                         wilson_halfwidth(res.n_errors, res.n_qam_symbols)])
    path = os.path.join(out_dir, "sweep.csv")
    _write_csv(path, ["power_dbm", "snr_db", "scenario", "ser", "n_symbols",
                      "ci_halfwidth"], rows)
    if figures:
        from .figures import render_sweep

        dict_rows = [dict(power_dbm=r[0], scenario=r[2], ser=r[3]) for r in rows]
        render_sweep(dict_rows, os.path.join(out_dir, "sweep.png"))
    return path


# --- training ----------------------------------------------------------------

def _ckpt_dir(out_dir: str) -> str:
    path = os.path.join(out_dir, "checkpoints")
    os.makedirs(path, exist_ok=True)
    return path


def _stage1_path(out_dir: str, tag: str, power: float) -> str:
    return os.path.join(_ckpt_dir(out_dir), f"stage1_{tag}_{power:g}dbm.ckpt")


def _comp_path(out_dir: str, kind: str, tag: str, power: float) -> str:
    return os.path.join(_ckpt_dir(out_dir), f"{kind}_{tag}_{power:g}dbm.ckpt")


def _load_stage1_or_fail(out_dir: str, tag: str, power: float) -> StructuredDNN:
    path = _stage1_path(out_dir, tag, power)
    if not os.path.exists(path):
        raise DependencyError(
            f"stage-1 checkpoint {path} not found; run `train --stage 1` first")
    model, _ = load_stage1(path)
    return model


def run_train(config: ExperimentConfig, stage: str, out_dir: str,
              slim: str = "none", powers: list[float] | None = None,
              figures: bool | None = None) -> list[str]:
    """Train the requested stage at each power; write checkpoints + loss CSVs."""
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}, got {stage!r}")
    os.makedirs(out_dir, exist_ok=True)
    figures = config.outputs.figures if figures is None else figures
    mode, n_hidden = parse_slim(slim)
    n_hidden = n_hidden if n_hidden is not None else config.training.n_hidden
    tag = slim_tag(mode, n_hidden)
    powers = powers if powers is not None else config.training.train_powers_dbm
    tr = config.training
    root = RandomSource(config.seed, "exp")
    base = build_link(config, powers[0])

    outputs = []
    for power in powers:
        link = base.with_power(power)
        data = training_dataset(config, link)
        label = f"{stage}_{tag}_{power:g}dbm"
        if stage == "1":
            model = build_stage1(link, n_hidden, mode, root.child(f"init1:{tag}:{power:g}"))
            tcfg = TrainingConfig(epochs=tr.stage1_epochs, batch_size=tr.batch_size,
                                  learning_rate=tr.stage1_learning_rate,
                                  lr_final=tr.stage1_lr_final, optimizer=tr.optimizer,
                                  seed=RandomSource(config.seed).child(
                                      f"train1:{tag}:{power:g}").seed)
            report = train_stage1(model, data, tcfg)
            path = _stage1_path(out_dir, tag, power)
            save_stage1(path, model, {
                "dataset_hash": data.content_hash(), "link_seed": link.seed,
                "final_loss": report.final_loss})
        elif stage in ("2-tx", "2-rx"):
            frozen = _load_stage1_or_fail(out_dir, tag, power)
            tcfg = TrainingConfig(epochs=tr.stage2_epochs, batch_size=tr.batch_size,
                                  learning_rate=tr.stage2_learning_rate,
                                  lr_final=tr.stage2_lr_final, optimizer=tr.optimizer,
                                  seed=RandomSource(config.seed).child(
                                      f"train{stage}:{tag}:{power:g}").seed)
            if stage == "2-tx":
                comp = TxCompensator.init(link.cfg.n_tx_chains, n_hidden, power,
                                          root.child(f"init2tx:{tag}:{power:g}"))
                report = train_tx_comp(comp, frozen, data.s1, data.y_i, tcfg)
                path = _comp_path(out_dir, "txcomp", tag, power)
            else:
                comp = RxCompensator.init(link.cfg.n_rx_chains, n_hidden, power,
                                          root.child(f"init2rx:{tag}:{power:g}"),
                                          w_bb_h=link.bset.w_bb.conj().T)
                report = train_rx_comp(comp, frozen, data.s1, data.y_i, tcfg)
                path = _comp_path(out_dir, "rxcomp", tag, power)
            save_compensator(path, comp, {"dataset_hash": data.content_hash(),
                                          "final_loss": report.final_loss})
        else:  # ddnn
            comp = DDnnBaseline.init(power, root.child(f"initdd:{power:g}"),
                                     layers=[2 * link.cfg.n_streams, 10, 10, 10,
                                             2 * link.cfg.n_streams])
            tcfg = TrainingConfig(epochs=tr.ddnn_epochs, batch_size=tr.batch_size,
                                  learning_rate=tr.stage2_learning_rate,
                                  lr_final=tr.stage2_lr_final, optimizer=tr.optimizer,
                                  seed=RandomSource(config.seed).child(
                                      f"trainddnn:{power:g}").seed)
            report = train_ddnn(comp, data.y_e, data.y_i, tcfg)
            path = _comp_path(out_dir, "ddnn", "mlp", power)
            save_compensator(path, comp, {"dataset_hash": data.content_hash(),
                                          "final_loss": report.final_loss})

        loss_csv = os.path.join(out_dir, f"train_loss_{label}.csv")
        _write_csv(loss_csv, ["epoch", "loss"],
                   [[e + 1, float(v)] for e, v in enumerate(report.loss_curve)])
        if figures:
            from .figures import render_loss

            render_loss({label: report.loss_curve},
                        os.path.join(out_dir, f"train_loss_{label}.png"))
        outputs.extend([path, loss_csv])
    return outputs


# --- evaluation --------------------------------------------------------------

def _load_comp(config: ExperimentConfig, side: str, out_dir: str, tag: str,
               power: float):
    if side == "none":
        return None
    kind = {"tx": "txcomp", "rx": "rxcomp", "ddnn": "ddnn"}[side]
    path = _comp_path(out_dir, kind, "mlp" if side == "ddnn" else tag, power)
    if not os.path.exists(path):
        raise DependencyError(
            f"compensator checkpoint {path} not found; run `train` first")
    comp, _ = load_compensator(path)
    return comp


def run_evaluate(config: ExperimentConfig, side: str, out_dir: str,
                 slim: str = "none", powers: list[float] | None = None,
                 figures: bool | None = None) -> str:
    """Deploy a compensator into the real impaired chain and measure SER."""
    os.makedirs(out_dir, exist_ok=True)
    figures = config.outputs.figures if figures is None else figures
    mode, n_hidden = parse_slim(slim)
    n_hidden = n_hidden if n_hidden is not None else config.training.n_hidden
    tag = slim_tag(mode, n_hidden)
    powers = powers if powers is not None else config.training.train_powers_dbm
    root = RandomSource(config.seed, "exp")
    base = build_link(config, powers[0])
    spec = ChainSpec.all_on()

    rows = []
    all_points = {}
    for power in sorted(powers):
        link = base.with_power(power)
        comp = _load_comp(config, side, out_dir, tag, power)
        res = deploy_and_evaluate(side, link, spec, config.evaluation.n_symbol_vectors,
                                  root.child(f"eval:{side}:{tag}:{power:g}"),
                                  comp=comp)
        rows.append([power, res.snr_db, side, res.ser, res.n_qam_symbols, res.seed])
        all_points[power] = res.points

    suffix = f"{side}_{tag}"
    path = os.path.join(out_dir, f"eval_{suffix}.csv")
    _write_csv(path, ["power_dbm", "snr_db", "side", "ser", "n_symbols", "seed"], rows)

    const_rows = []
    for block, (power, points) in enumerate(sorted(all_points.items())):
        for stream in range(points.shape[0]):
            for v in points[stream]:
                const_rows.append([block, stream, float(v.real), float(v.imag)])
    const_path = os.path.join(out_dir, f"constellation_{suffix}.csv")
    _write_csv(const_path, ["block", "stream", "re", "im"], const_rows)

    if figures:
        from .figures import render_constellation, render_eval

        dict_rows = [dict(power_dbm=r[0], side=r[2], ser=r[3]) for r in rows]
        render_eval(dict_rows, os.path.join(out_dir, f"eval_{suffix}.png"))
        top = max(all_points)
        render_constellation(all_points[top],
                             os.path.join(out_dir, f"constellation_{suffix}.png"),
                             title=f"{side} at {top:g} dBm")
    return path


# --- constellation dumps and distortion metrics --------------------------------

def constellation_metrics(points: np.ndarray, reference: np.ndarray) -> dict:
    """Expansion / rotation / displacement metrics of an equalized cloud.

    scatter_variance: within-cell variance around each sent symbol's centroid.
    mean_phase_offset_deg: global rotation of the cloud against the sent grid.
    mean_displacement: average centroid offset from the true constellation point.
    """
    idx = symbols_to_indices(reference)
    pts = points.ravel()
    ref_idx = idx.ravel()
    scatter = 0.0
    displacement = 0.0
    cells = 0
    for k in range(16):
        sel = pts[ref_idx == k]
        if sel.size == 0:
            continue
        centroid = sel.mean()
        scatter += float(np.mean(np.abs(sel - centroid) ** 2))
        displacement += float(abs(centroid - QAM16_SYMBOLS[k]))
        cells += 1
    rotation = np.angle(np.vdot(reference.ravel(), pts))
    return {
        "scatter_variance": scatter / cells,
        "mean_phase_offset_deg": float(abs(np.rad2deg(rotation))),
        "mean_displacement": displacement / cells,
    }


def run_constellation(config: ExperimentConfig, scenario: str, out_dir: str,
                      power_dbm: float | None = None,
                      figures: bool | None = None) -> str:
    """Equalized received constellation for one scenario + distortion metrics."""
    os.makedirs(out_dir, exist_ok=True)
    figures = config.outputs.figures if figures is None else figures
    power = power_dbm if power_dbm is not None else max(config.sweep.powers_dbm)
    link = build_link(config, power)
    root = RandomSource(config.seed, "exp")
    spec = ChainSpec.from_scenario(scenario)
    res = deploy_and_evaluate("none", link, spec, 4000,
                              root.child(f"const:{scenario}:{power:g}"),
                              collect_points=8000)
    rows = []
    for stream in range(res.points.shape[0]):
        for v in res.points[stream]:
            rows.append([0, stream, float(v.real), float(v.imag)])
    path = os.path.join(out_dir, f"constellation_{scenario}.csv")
    _write_csv(path, ["block", "stream", "re", "im"], rows)

    metrics = constellation_metrics(res.points, res.points_ref)
    metrics_path = os.path.join(out_dir, f"constellation_{scenario}_metrics.csv")
    _write_csv(metrics_path,
               ["scenario", "power_dbm", "ser", "scatter_variance",
                "mean_phase_offset_deg", "mean_displacement"],
               [[scenario, power, res.ser, metrics["scatter_variance"],
                 metrics["mean_phase_offset_deg"], metrics["mean_displacement"]]])
    if figures:
        from .figures import render_constellation

        render_constellation(res.points,
                             os.path.join(out_dir, f"constellation_{scenario}.png"),
                             title=f"{scenario} at {power:g} dBm")
    return path


# --- coded system --------------------------------------------------------------

def coded_ser_once(link: LinkRealization, spec: ChainSpec, comp, side: str,
                   n_symbol_vectors: int, rng: RandomSource) -> tuple[float, float]:
    """(coded SER, uncoded SER) for the same chain and compensator.

    Info bits -> rate-2/3 convolutional code -> 16-QAM across the N_s streams
    -> impaired chain -> equalize -> hard decision -> Viterbi. The coded SER
    counts recovered 4-bit info symbols; the uncoded SER counts plain hard
    decisions of the same chain.
    """
    from .chain import equalizer_matrix, rx_chain, tx_chain, tx_chain_from_baseband
    from .neural import rows_to_pairs, pairs_to_rows

    n_s = link.cfg.n_streams
    n_qam = n_symbol_vectors * n_s
    n_info_bits = int(n_qam * 4 * 2 // 3)
    n_info_bits -= n_info_bits % 4          # whole 4-bit info symbols, even length
    g = rng.child("bits").generator()
    info = g.integers(0, 2, n_info_bits).astype(np.uint8)
    coded = conv_encode(info)
    pad = (-coded.size) % (4 * n_s)
    coded_padded = np.concatenate([coded, np.zeros(pad, dtype=np.uint8)])
    syms = modulate(coded_padded)
    s = syms.reshape(n_s, -1, order="F")   # column-major: one vector per column

    eq = equalizer_matrix(link)
    if side == "tx":
        s1 = link.bset.f_bb @ s
        c, _ = comp.bank.forward(rows_to_pairs(s1))
        sbar, _ = normalize_block(pairs_to_rows(c), n_s)
        x = tx_chain_from_baseband(sbar, link, spec, rng)
    else:
        x = tx_chain(s, link, spec, rng)
    y = rx_chain(x, link, spec, rng)
    shat = (eq @ y) / link.ideal_gain

    rx_bits = demodulate_hard(shat.ravel(order="F"))[: coded.size]
    decoded = viterbi_decode(rx_bits, n_info_bits)
    coded_ser = float(np.mean(
        np.any(decoded.reshape(-1, 4) != info.reshape(-1, 4), axis=1)))
    uncoded_ser = float(np.mean(symbols_to_indices(shat) != symbols_to_indices(s)))
    return coded_ser, uncoded_ser


def run_coded(config: ExperimentConfig, out_dir: str,
              powers: list[float] | None = None,
              figures: bool | None = None) -> str:
    """Coded-vs-uncoded SER with the Tx compensator deployed."""
    os.makedirs(out_dir, exist_ok=True)
    figures = config.outputs.figures if figures is None else figures
    tag = slim_tag("full", config.training.n_hidden)
    powers = powers if powers is not None else config.training.train_powers_dbm
    root = RandomSource(config.seed, "exp")
    base = build_link(config, powers[0])
    spec = ChainSpec.all_on()

    rows = []
    for power in sorted(powers):
        link = base.with_power(power)
        comp = _load_comp(config, "tx", out_dir, tag, power)
        coded, uncoded = coded_ser_once(link, spec, comp, "tx",
                                        config.evaluation.coded_n_symbol_vectors,
                                        root.child(f"coded:{power:g}"))
        rows.append([power, coded, uncoded,
                     config.evaluation.coded_n_symbol_vectors * link.cfg.n_streams])
    path = os.path.join(out_dir, "coded.csv")
    _write_csv(path, ["power_dbm", "coded_ser", "uncoded_ser", "n_symbols"], rows)
    if figures:
        from .figures import render_coded

        dict_rows = [dict(power_dbm=r[0], coded_ser=r[1], uncoded_ser=r[2])
                     for r in rows]
        render_coded(dict_rows, os.path.join(out_dir, "coded.png"))
    return path


# --- parameter-count report -----------------------------------------------------

def params_report(config: ExperimentConfig) -> list[tuple[str, int, float]]:
    """Introspective parameter tallies for every slimming variant + the D-DNN."""
    s = config.system
    dims = (s.n_tx_chains, s.n_tx_antennas, s.n_rx_chains)
    full10 = stage1_param_count(*dims, 10, "full")
    rows: list[tuple[str, int, float]] = []
    rows.append(("ddnn", 398, float("nan")))
    for n_h in (10, 8, 6, 4, 2):
        n = stage1_param_count(*dims, n_h, "full")
        rows.append((f"full_nh{n_h}", n, 100.0 * (1 - n / full10)))
    for n_h in (10, 8):
        n = stage1_param_count(*dims, n_h, "share")
        rows.append((f"share_nh{n_h}", n, 100.0 * (1 - n / full10)))
        n = stage1_param_count(*dims, n_h, "remove")
        rows.append((f"remove_nh{n_h}", n, 100.0 * (1 - n / full10)))
    return rows


def verify_params_report(config: ExperimentConfig) -> None:
    """Check the closed-form tallies against introspective model counts."""
    from .neural import MLP, SubNNBank

    s = config.system
    for n_h in (2, 4, 6, 8, 10):
        for mode, lanes2 in (("full", s.n_tx_antennas), ("share", 1), ("remove", 0)):
            total = (SubNNBank.init(s.n_tx_chains, n_h, RandomSource(0)).n_params
                     + (SubNNBank.init(lanes2, n_h, RandomSource(0)).n_params
                        if lanes2 else 0)
                     + SubNNBank.init(s.n_rx_chains, n_h, RandomSource(0)).n_params)
            expected = stage1_param_count(s.n_tx_chains, s.n_tx_antennas,
                                          s.n_rx_chains, n_h, mode)
            if total != expected:
                raise AssertionError(f"count mismatch for {mode}/{n_h}")
    ddnn = MLP.init([2 * s.n_streams, 10, 10, 10, 2 * s.n_streams], RandomSource(0))
    if s.n_streams == 4 and ddnn.n_params != 398:
        raise AssertionError("D-DNN tally != 398")


def runtime_report(config: ExperimentConfig, n_symbols: int = 4000,
                   repeats: int = 3) -> list[tuple[str, float]]:
    """Relative forward-pass runtime of the slimming variants (full N_h=10 = 1).

    Absolute wall times are hardware-dependent; only the ordering and ratios
    are meaningful, which is why the report is relative.
    """
    import time

    link = build_link(config, 0.0)
    g = RandomSource(config.seed, "runtime").generator()
    s1 = (g.standard_normal((link.cfg.n_tx_chains, n_symbols))
          + 1j * g.standard_normal((link.cfg.n_tx_chains, n_symbols)))
    variants = [("full_nh10", "full", 10), ("share_nh8", "share", 8),
                ("remove_nh8", "remove", 8)]
    times = {}
    for name, mode, n_h in variants:
        model = build_stage1(link, n_h, mode, RandomSource(0, name))
        dnn_forward(model, s1[:, :64])  # warm up
        best = float("inf")
        for _ in range(repeats):
            t0 = time.perf_counter()
            dnn_forward(model, s1)
            best = min(best, time.perf_counter() - t0)
        times[name] = best
    ref = times["full_nh10"]
    return [(name, times[name] / ref) for name, _, _ in variants]


def run_params(config: ExperimentConfig, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    verify_params_report(config)
    rows = [[name, n, pct] for name, n, pct in params_report(config)]
    path = os.path.join(out_dir, "params.csv")
    _write_csv(path, ["network", "n_params", "reduction_pct"], rows)
    runtime_rows = [[name, ratio] for name, ratio in runtime_report(config)]
    _write_csv(os.path.join(out_dir, "runtime.csv"),
               ["network", "relative_runtime"], runtime_rows)
    return path


# --- selftest --------------------------------------------------------------------

def run_selftest(config: ExperimentConfig) -> bool:
    """Fast structural checks; prints one PASS/FAIL line per check."""
    import math

    from .impairments import AqnmParams, RappPaParams, aqnm_quantize, rapp_pa
    from .core import cgauss_matrix

    ok = True

    def check(name, cond):
        nonlocal ok
        print(f"{'PASS' if cond else 'FAIL'}: {name}")
        ok = ok and bool(cond)

    counts = {name: n for name, n, _ in params_report(config)}
    if config.system.n_tx_antennas == 256 and config.system.n_tx_chains == 4:
        expected = {"full_nh10": 13728, "full_nh8": 11088, "full_nh4": 5808,
                    "full_nh2": 3168, "share_nh10": 468, "remove_nh10": 416,
                    "share_nh8": 378, "remove_nh8": 336, "ddnn": 398}
        check("parameter counts match the published table",
              all(counts[k] == v for k, v in expected.items()))
    try:
        verify_params_report(config)
        check("introspective parameter tallies match the formula", True)
    except AssertionError:
        check("introspective parameter tallies match the formula", False)

    p = AqnmParams(bits=4)
    rng = RandomSource(1)
    x = cgauss_matrix(4, 25000, 1.0, rng.child("x"))
    q = aqnm_quantize(x, p, rng.child("q")) - p.alpha * x
    moment = np.mean(np.abs(q) ** 2) / (p.alpha * p.beta * np.mean(np.abs(x) ** 2))
    check("AQNM noise moment within 3% at b=4", abs(moment - 1.0) < 0.03)

    rp = RappPaParams()
    small = abs(rapp_pa(np.array([[1e-4 + 0j]]), rp)[0, 0]) / 1e-4
    check("Rapp small-signal gain ~13.46 dB",
          abs(20 * math.log10(small) - 13.46) < 0.1)
    big = abs(rapp_pa(np.array([[1e3 + 0j]]), rp)[0, 0])
    check("Rapp saturation -> x_sat", abs(big - rp.x_sat) / rp.x_sat < 1e-3)

    link = build_link(config, 15.0)
    from .chain import run_chain

    g = RandomSource(2).generator()
    idx = g.integers(0, 16, size=(link.cfg.n_streams, 500))
    s = QAM16_SYMBOLS[idx]
    y_on = run_chain(s, link.noiseless(), ChainSpec.all_off(), RandomSource(3))
    ideal = (link.bset.w_bb.conj().T @ link.bset.w_rf.conj().T @ link.h
             @ (link.pa_gain_lin * link.bset.f_rf @ link.bset.p_in
                @ link.bset.f_bb @ s))
    rel = np.abs(y_on - ideal).max() / np.abs(ideal).max()
    check("identity collapse (all impairments off) within 1e-12", rel < 1e-12)
    return ok
