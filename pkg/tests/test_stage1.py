"""Structured stage-1 network: forward closed forms, end-to-end gradients,
parameter counts, slimming policy, toy-link training."""

import numpy as np
import pytest

from thzlink.chain import ChainSpec
from thzlink.core import RandomSource
from thzlink.neural import TrainingConfig
from thzlink.stage1 import (
    LOW_POWER_THRESHOLD_DBM,
    PolicyError,
    build_stage1,
    dnn_backward,
    dnn_forward,
    generate_dataset,
    load_stage1,
    mse_loss_and_grad,
    save_stage1,
    slim,
    stage1_param_count,
    train_stage1,
)
from tests.conftest import toy_link


def toy_model(link, n_hidden=4, mode="full", seed=50):
    return build_stage1(link, n_hidden, mode, RandomSource(seed, "model"))


def zero_banks(model):
    for p in model.params():
        p[:] = 0.0
    return model


class TestParamCounts:
    @pytest.mark.parametrize("n_h,expected", [(10, 13728), (8, 11088), (6, 8448),
                                              (4, 5808), (2, 3168)])
    def test_full_mode_paper_scale(self, n_h, expected):
        assert stage1_param_count(4, 256, 4, n_h, "full") == expected

    @pytest.mark.parametrize("n_h,expected", [(10, 468), (8, 378)])
    def test_share_mode(self, n_h, expected):
        assert stage1_param_count(4, 256, 4, n_h, "share") == expected

    @pytest.mark.parametrize("n_h,expected", [(10, 416), (8, 336)])
    def test_remove_mode(self, n_h, expected):
        assert stage1_param_count(4, 256, 4, n_h, "remove") == expected

    def test_introspective_tally_matches_formula(self, small_link):
        for mode in ("full", "share", "remove"):
            for n_h in (2, 4, 6, 8, 10):
                model = toy_model(small_link, n_hidden=n_h, mode=mode)
                cfg = small_link.cfg
                assert model.n_params == stage1_param_count(
                    cfg.n_tx_chains, cfg.n_tx_antennas, cfg.n_rx_chains, n_h, mode)


class TestForward:
    def test_zero_weight_closed_form(self, small_link):
        """All-zero banks: bank outputs are zero, so yhat = 0 regardless of s1."""
        model = zero_banks(toy_model(small_link))
        s1 = RandomSource(51).generator().standard_normal((2, 5)) + 0j
        assert np.allclose(dnn_forward(model, s1), 0.0, atol=1e-15)

    def test_zero_weight_bias_propagation(self, small_link):
        """With zero weights and only bank-3 output biases set, the output is
        W_BB^H applied to the constant bias vector."""
        model = zero_banks(toy_model(small_link))
        model.bank3.b2[:, 0] = np.array([1.0, 2.0])   # re parts per lane
        model.bank3.b2[:, 1] = np.array([-0.5, 0.25])  # im parts
        bias = model.bank3.b2[:, 0] + 1j * model.bank3.b2[:, 1]
        s1 = np.ones((2, 3), dtype=complex)
        expected = (model.w_bb_h @ bias)[:, None] * np.ones((1, 3))
        assert np.allclose(dnn_forward(model, s1), expected, atol=1e-14)

    def test_remove_mode_bias_closed_form(self, small_link):
        """Removed bank2 inserts the scalar PA gain; with banks 1 and 3 zeroed
        except bank-3 biases, the output is the hand-computable bias path."""
        model = zero_banks(toy_model(small_link, mode="remove"))
        model.bank3.b2[:, 0] = 1.0
        s1 = np.zeros((2, 4), dtype=complex)
        expected = (model.w_bb_h @ (np.ones(2) + 0j))[:, None] * np.ones((1, 4))
        assert np.allclose(dnn_forward(model, s1), expected, atol=1e-14)
        assert model.bank2 is None
        assert model.pa_gain_lin == pytest.approx(small_link.pa_gain_lin)

    def test_share_equals_full_with_tied_weights(self, small_link):
        """Shared bank2 evaluates identically to a full bank whose lanes all
        carry the shared parameters."""
        shared = toy_model(small_link, mode="share", seed=52)
        full = toy_model(small_link, mode="full", seed=52)
        n_t = small_link.cfg.n_tx_antennas
        for p_full, p_shared in zip(full.bank2.params(), shared.bank2.params()):
            p_full[:] = np.repeat(p_shared, n_t, axis=0)
        full.bank1 = shared.bank1
        full.bank3 = shared.bank3
        s1 = (RandomSource(53).generator().standard_normal((2, 6))
              + 1j * RandomSource(54).generator().standard_normal((2, 6)))
        assert np.allclose(dnn_forward(shared, s1), dnn_forward(full, s1), atol=1e-13)

    def test_wrong_row_count_rejected(self, small_link):
        model = toy_model(small_link)
        with pytest.raises(ValueError):
            dnn_forward(model, np.zeros((3, 4), dtype=complex))


class TestBackward:
    def finite_diff_check(self, model, s1, y_target, n_probes=40, h=1e-6, seed=60):
        yhat, cache = dnn_forward(model, s1, return_cache=True)
        loss, g_y = mse_loss_and_grad(yhat, y_target)
        grads, _ = dnn_backward(model, cache, g_y)
        params = model.params()
        g = RandomSource(seed).generator()
        worst = 0.0
        for _ in range(n_probes):
            pi = g.integers(0, len(params))
            arr = params[pi]
            flat = arr.ravel()
            k = g.integers(0, flat.size)
            orig = flat[k]
            flat[k] = orig + h
            lp, _ = mse_loss_and_grad(dnn_forward(model, s1), y_target)
            flat[k] = orig - h
            lm, _ = mse_loss_and_grad(dnn_forward(model, s1), y_target)
            flat[k] = orig
            fd = (lp - lm) / (2 * h)
            an = grads[pi].ravel()[k]
            worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-8))
        return worst

    @pytest.mark.parametrize("mode", ["full", "share", "remove"])
    def test_end_to_end_finite_differences(self, small_link, mode):
        model = toy_model(small_link, mode=mode, seed=61)
        g = RandomSource(62).generator()
        s1 = g.standard_normal((2, 8)) + 1j * g.standard_normal((2, 8))
        y = g.standard_normal((2, 8)) + 1j * g.standard_normal((2, 8))
        assert self.finite_diff_check(model, s1, y) < 1e-4

    def test_input_gradient_finite_differences(self, small_link):
        """The s1 gradient (used to chain the Tx compensator) is exact too."""
        model = toy_model(small_link, seed=63)
        g = RandomSource(64).generator()
        s1 = g.standard_normal((2, 4)) + 1j * g.standard_normal((2, 4))
        y = g.standard_normal((2, 4)) + 1j * g.standard_normal((2, 4))
        yhat, cache = dnn_forward(model, s1, return_cache=True)
        loss, g_y = mse_loss_and_grad(yhat, y)
        _, g_s1 = dnn_backward(model, cache, g_y, want_param_grads=False)
        h = 1e-6
        worst = 0.0
        for (i, j) in [(0, 0), (1, 2), (0, 3)]:
            for part, delta in (("re", h), ("im", h * 1j)):
                s1p = s1.copy(); s1p[i, j] += delta
                lp, _ = mse_loss_and_grad(dnn_forward(model, s1p), y)
                s1m = s1.copy(); s1m[i, j] -= delta
                lm, _ = mse_loss_and_grad(dnn_forward(model, s1m), y)
                fd = (lp - lm) / (2 * h)
                an = g_s1[i, j].real if part == "re" else g_s1[i, j].imag
                worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-8))
        assert worst < 1e-4

    def test_shared_gradient_equals_tied_full_sum(self, small_link):
        """Shared-lane gradient == sum of per-antenna gradients of the tied
        full model."""
        shared = toy_model(small_link, mode="share", seed=65)
        full = toy_model(small_link, mode="full", seed=65)
        n_t = small_link.cfg.n_tx_antennas
        for p_full, p_shared in zip(full.bank2.params(), shared.bank2.params()):
            p_full[:] = np.repeat(p_shared, n_t, axis=0)
        full.bank1 = shared.bank1
        full.bank3 = shared.bank3
        g = RandomSource(66).generator()
        s1 = g.standard_normal((2, 5)) + 1j * g.standard_normal((2, 5))
        y = g.standard_normal((2, 5)) + 1j * g.standard_normal((2, 5))
        yh_s, cache_s = dnn_forward(shared, s1, return_cache=True)
        _, gy_s = mse_loss_and_grad(yh_s, y)
        grads_s, _ = dnn_backward(shared, cache_s, gy_s)
        yh_f, cache_f = dnn_forward(full, s1, return_cache=True)
        _, gy_f = mse_loss_and_grad(yh_f, y)
        grads_f, _ = dnn_backward(full, cache_f, gy_f)
        # params order: bank1 (4 arrays), bank2 (4), bank3 (4)
        for idx in range(4, 8):
            tied_sum = grads_f[idx].sum(axis=0, keepdims=True)
            assert np.allclose(grads_s[idx], tied_sum, atol=1e-12)

    def test_zero_loss_gradient_gives_zeros(self, small_link):
        model = toy_model(small_link, seed=67)
        s1 = np.ones((2, 3), dtype=complex)
        yhat, cache = dnn_forward(model, s1, return_cache=True)
        grads, g_s1 = dnn_backward(model, cache, np.zeros_like(yhat))
        assert all(np.all(g == 0) for g in grads)
        assert np.all(g_s1 == 0)


class TestTraining:
    def test_loss_decreases_and_is_deterministic(self, small_link):
        data = generate_dataset(small_link, 256, RandomSource(70, "data"))
        reports = []
        for _ in range(2):
            model = toy_model(small_link, seed=71)
            tcfg = TrainingConfig(epochs=8, batch_size=32, seed=72)
            reports.append((train_stage1(model, data, tcfg), model))
        r1, m1 = reports[0]
        r2, m2 = reports[1]
        assert r1.loss_curve[-1] <= r1.loss_curve[0]
        assert np.array_equal(r1.loss_curve, r2.loss_curve)
        for p1, p2 in zip(m1.params(), m2.params()):
            assert np.array_equal(p1, p2)

    def test_linear_chain_learnable(self):
        """A toy link whose only imperfection is per-chain widely-linear (IQ)
        is exactly representable in the tanh small-signal regime: held-out
        relative error < 1e-2 after training. (Shifter errors are excluded:
        they perturb the cross-chain mixing, which per-chain banks around
        fixed nominal maps provably cannot express at toy antenna counts.)"""
        link = toy_link(power_dbm=0.0, dac_bits=None, adc_bits=None,
                        phase_noise_var_rad2=0.0).noiseless()
        spec = ChainSpec(iq_tx=True, iq_rx=True)
        data = generate_dataset(link, 1200, RandomSource(73, "data"), spec=spec)
        test = generate_dataset(link, 400, RandomSource(74, "test"), spec=spec)
        model = build_stage1(link, 6, "full", RandomSource(75, "model"))
        tcfg = TrainingConfig(epochs=400, batch_size=64, learning_rate=1e-3, seed=76)
        train_stage1(model, data, tcfg)
        yhat = dnn_forward(model, test.s1)
        rel = np.linalg.norm(yhat - test.y_e) / np.linalg.norm(test.y_e)
        assert rel < 1e-2

    def test_power_mismatch_rejected(self, small_link):
        data = generate_dataset(small_link.with_power(0.0), 64, RandomSource(77))
        model = toy_model(small_link)  # built at 15 dBm
        with pytest.raises(PolicyError):
            train_stage1(model, data, TrainingConfig(epochs=1))

    def test_divergence_raises(self, small_link):
        from thzlink.neural import TrainingDivergedError

        data = generate_dataset(small_link, 64, RandomSource(78))
        model = toy_model(small_link)
        bad = TrainingConfig(epochs=30, batch_size=16, learning_rate=1e8,
                             optimizer="sgd")
        with np.errstate(all="ignore"), pytest.raises(TrainingDivergedError):
            train_stage1(model, data, bad)


class TestSlim:
    def test_prune_requires_smaller(self, small_link):
        model = toy_model(small_link, n_hidden=6)
        with pytest.raises(ValueError):
            slim(model, "prune", n_hidden=6)
        pruned = slim(model, "prune", n_hidden=3)
        assert pruned.n_hidden == 3 and pruned.mode == "full"

    def test_share_keeps_hidden_width(self, small_link):
        model = toy_model(small_link, n_hidden=6)
        shared = slim(model, "share_nn2")
        assert shared.mode == "share" and shared.bank2.n_lanes == 1

    def test_remove_blocked_at_high_power(self, small_link):
        model = toy_model(small_link)  # 15 dBm
        assert model.power_dbm >= LOW_POWER_THRESHOLD_DBM
        with pytest.raises(PolicyError):
            slim(model, "remove_nn2")
        forced = slim(model, "remove_nn2", override=True)
        assert forced.bank2 is None

    def test_remove_allowed_below_threshold(self):
        link = toy_link(power_dbm=0.0)
        model = build_stage1(link, 4, "full", RandomSource(80))
        removed = slim(model, "remove_nn2")
        assert removed.mode == "remove"

    def test_slim_is_fresh_init(self, small_link):
        model = toy_model(small_link, n_hidden=6)
        pruned = slim(model, "prune", n_hidden=3, rng=RandomSource(81))
        assert pruned.bank1.w1.shape[1] == 3


class TestModeEquivalences:
    def test_removed_equals_full_with_linear_gain_bank(self, small_link):
        """Removed mode matches a full model whose antenna bank implements the
        scalar PA gain, within 1e-3 relative in the small-signal regime."""
        from thzlink.neural import SubNNBank

        full = toy_model(small_link, n_hidden=4, mode="full", seed=90)
        removed = toy_model(small_link, n_hidden=4, mode="remove", seed=90)
        removed.bank1 = full.bank1
        removed.bank3 = full.bank3
        full.bank2 = SubNNBank.init_linear(
            small_link.cfg.n_tx_antennas, 4, RandomSource(91),
            gain=small_link.pa_gain_lin, pre_scale=0.02, noise=0.0)
        g = RandomSource(92).generator()
        s1 = 0.05 * (g.standard_normal((2, 200)) + 1j * g.standard_normal((2, 200)))
        y_full = dnn_forward(full, s1)
        y_removed = dnn_forward(removed, s1)
        rel = np.linalg.norm(y_full - y_removed) / np.linalg.norm(y_removed)
        assert rel < 1e-3

    def test_retraining_at_other_power_matters(self):
        """Held-out loss of a 15 dBm model evaluated on -10 dBm data exceeds
        the loss of a model trained at -10 dBm (the distribution shift is real)."""
        link15 = toy_link(power_dbm=15.0)
        link_lo = toy_link(power_dbm=-10.0)
        d15 = generate_dataset(link15, 400, RandomSource(93, "d15"))
        dlo = generate_dataset(link_lo, 400, RandomSource(94, "dlo"))
        held = generate_dataset(link_lo, 300, RandomSource(95, "held"))
        tcfg = TrainingConfig(epochs=25, batch_size=64, learning_rate=2e-3, seed=96)
        m15 = toy_model(link15, seed=97)
        train_stage1(m15, d15, tcfg)
        mlo = toy_model(link_lo, seed=97)
        train_stage1(mlo, dlo, tcfg)
        loss_cross, _ = mse_loss_and_grad(dnn_forward(m15, held.s1), held.y_e)
        loss_match, _ = mse_loss_and_grad(dnn_forward(mlo, held.s1), held.y_e)
        assert loss_cross > loss_match


class TestCheckpoint:
    @pytest.mark.parametrize("mode", ["full", "share", "remove"])
    def test_round_trip(self, tmp_path, small_link, mode):
        model = toy_model(small_link, mode=mode, seed=82)
        path = str(tmp_path / "stage1.bin")
        save_stage1(path, model, {"dataset_hash": "abc"})
        loaded, meta = load_stage1(path)
        s1 = RandomSource(83).generator().standard_normal((2, 4)) + 0j
        assert np.allclose(dnn_forward(loaded, s1), dnn_forward(model, s1), atol=1e-15)
        assert meta["dataset_hash"] == "abc"
        assert meta["n_params"] == model.n_params


class TestDataset:
    def test_shapes_and_hash_stability(self, small_link):
        data = generate_dataset(small_link, 128, RandomSource(84, "d"))
        again = generate_dataset(small_link, 128, RandomSource(84, "d"))
        cfg = small_link.cfg
        assert data.s.shape == (cfg.n_streams, 128)
        assert data.s1.shape == (cfg.n_tx_chains, 128)
        assert data.y_e.shape == (cfg.n_streams, 128)
        assert data.content_hash() == again.content_hash()

    def test_y_s_is_deterministic_skeleton(self, small_link):
        """y_s carries the alpha gains and deterministic distortions but no
        random draws: regenerating with a different chain seed leaves it fixed."""
        from thzlink.chain import run_chain

        d1 = generate_dataset(small_link, 64, RandomSource(85, "d"))
        # same symbols, different chain randomness
        d2_ye = run_chain(d1.s, small_link, ChainSpec.all_on(),
                          RandomSource(86, "other"))
        d2_ys = run_chain(d1.s, small_link, ChainSpec.all_on(),
                          RandomSource(86, "other"), mean_mode=True)
        assert not np.allclose(d1.y_e, d2_ye)
        assert np.allclose(d1.y_s, d2_ys, atol=1e-14)
