import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cogradio import metrics
from cogradio._rng import make_rng
from cogradio.channel import ChannelParams, OccupancyTrace, SlotState, generate_trace
from cogradio.predictor import (
    DivergenceError,
    PredictorError,
    RnnConfig,
    RnnModel,
    bayes_hit_rate,
    decode_series,
    encode_series,
    forward,
    forward_batch,
    gradient_check,
    hit_rate,
    loss_and_grads,
    make_windows,
    predict_next,
    synthetic_features,
    train,
)

PERIOD2 = np.tile([-1.0, 1.0], 300)


def test_encode_examples():
    tr = OccupancyTrace([SlotState.IDLE, SlotState.BUSY, SlotState.IDLE])
    assert encode_series(tr).tolist() == [-1, 1, -1]
    assert encode_series(OccupancyTrace([SlotState.IDLE] * 5)).tolist() == [-1] * 5
    assert decode_series(encode_series(tr)).states == tr.states


def test_config_defaults_and_validation():
    cfg = RnnConfig()
    assert (cfg.epochs, cfg.init_weight, cfg.classify_threshold) == (400, 0.5, 0.181)
    assert (cfg.hidden_size, cfg.window, cfg.learning_rate) == (8, 10, 0.05)
    for kw in (dict(hidden_size=0), dict(window=0), dict(learning_rate=-1), dict(epochs=0), dict(init_mode="x")):
        with pytest.raises(PredictorError):
            RnnConfig(**kw)


def test_initialization_modes():
    m = RnnModel.initialize(RnnConfig(), make_rng(0))
    w = np.concatenate([m.w_xh.ravel(), m.w_hh.ravel(), m.w_hy])
    assert np.all(np.abs(w) <= 0.5) and np.unique(w).size == w.size
    c = RnnModel.initialize(RnnConfig(init_mode="constant"), make_rng(0))
    assert np.all(c.w_hh == 0.5) and np.all(c.w_xh == 0.5) and np.all(c.b_h == 0)


# -- forward -----------------------------------------------------------------

def test_zero_model_outputs_zero():
    assert forward(RnnModel.zeros(1, 8), np.ones(10)) == 0.0


def test_output_range_fuzz():
    # 100 models x 100 windows; weights large enough to approach saturation
    rng = make_rng(1)
    for _ in range(100):
        cfg = RnnConfig(hidden_size=int(rng.integers(1, 10)), init_weight=float(rng.uniform(0.1, 2.0)))
        m = RnnModel.initialize(cfg, rng)
        x = rng.choice([-1.0, 1.0], size=(100, 7, 1))
        y = forward_batch(m, x)
        assert np.all((y > -1.0) & (y < 1.0))


def test_forward_deterministic_and_checked():
    m = RnnModel.initialize(RnnConfig(), make_rng(2))
    w = PERIOD2[:10]
    assert forward(m, w) == forward(m, w)
    with pytest.raises(PredictorError):
        forward(m, w, features=np.zeros((10, 3)))
    with pytest.raises(PredictorError):
        forward_batch(m, np.zeros((2, 10, 2)))


def test_predict_next_threshold():
    m = RnnModel.zeros(1, 2)
    m.b_y[0] = math.atanh(0.9)
    assert predict_next(m, np.ones(4)) is SlotState.BUSY
    m.b_y[0] = math.atanh(-0.9)
    assert predict_next(m, np.ones(4)) is SlotState.IDLE
    m.b_y[0] = math.atanh(0.1)
    assert predict_next(m, np.ones(4)) is SlotState.IDLE
    assert predict_next(m, np.ones(4), threshold=0.05) is SlotState.BUSY


def test_make_windows_layout():
    x, t = make_windows(np.arange(6.0), 3)
    assert x[:, :, 0].tolist() == [[0, 1, 2], [1, 2, 3], [2, 3, 4]]
    assert t.tolist() == [3, 4, 5]
    with pytest.raises(PredictorError):
        make_windows(np.arange(3.0), 3)


# -- gradients ----------------------------------------------------------------

def test_gradient_check_random_model():
    rng = make_rng(3)
    m = RnnModel.initialize(RnnConfig(hidden_size=4, window=6), rng)
    x, t = make_windows(rng.choice([-1.0, 1.0], 40), 6)
    err, _, _ = gradient_check(m, x, t)
    assert err < 1e-4


def test_gradient_check_zero_output_weights():
    rng = make_rng(4)
    m = RnnModel.initialize(RnnConfig(hidden_size=4, window=6), rng)
    m.w_hy[:] = 0.0
    x, t = make_windows(rng.choice([-1.0, 1.0], 30), 6)
    _, a, n = gradient_check(m, x, t)
    n_out = m.hidden_size + 1  # w_hy and b_y sit at the end of the flat vector
    assert np.max(np.abs(a[-n_out:] - n[-n_out:])) < 1e-8


def test_duplicated_sample_doubles_gradient():
    rng = make_rng(5)
    m = RnnModel.initialize(RnnConfig(hidden_size=3, window=5), rng)
    x, t = make_windows(rng.choice([-1.0, 1.0], 6), 5)
    _, g1 = loss_and_grads(m, x, t)
    _, g2 = loss_and_grads(m, np.concatenate([x, x]), np.concatenate([t, t]))
    # equal up to rounding: BLAS may fuse the two identical products
    np.testing.assert_allclose(g2.flat(), 2 * g1.flat(), rtol=1e-14, atol=0)


def test_gradient_check_with_features():
    rng = make_rng(6)
    cfg = RnnConfig(hidden_size=3, window=4, feature_mode=True)
    m = RnnModel.initialize(cfg, rng)
    f = synthetic_features(20, rng)
    assert f.shape == (20, 3) and np.all((f >= 0) & (f <= 1))
    x, t = make_windows(rng.choice([-1.0, 1.0], 20), 4, f)
    assert x.shape[2] == 4
    assert gradient_check(m, x, t)[0] < 1e-4


# -- training -----------------------------------------------------------------

def test_period_two_is_learned():
    cfg = RnnConfig(epochs=400)
    model, rep = train(cfg, PERIOD2, PERIOD2[:101], make_rng(7))
    assert hit_rate(model, PERIOD2, cfg.window) >= 0.99
    assert len(rep.train_rmse) == len(rep.val_rmse) == 400
    assert all(v >= 0 for v in rep.train_rmse + rep.val_rmse)
    assert model.is_finite()


def test_full_batch_loss_monotone_below_stability_bound():
    for seed in range(5):
        cfg = RnnConfig(learning_rate=0.2, epochs=200, batch_size=None, lr_decay=0.0)
        _, rep = train(cfg, PERIOD2[:200], PERIOD2[:50], make_rng(seed))
        assert all(b <= a for a, b in zip(rep.train_rmse, rep.train_rmse[1:]))


def test_markov_training_reduces_rmse():
    ch = ChannelParams(0.2, 0.2)
    tr = generate_trace(ch, 10_000, SlotState.IDLE, make_rng(8))
    va = generate_trace(ch, 2_000, SlotState.IDLE, make_rng(9))
    _, rep = train(RnnConfig(epochs=15), tr, va, make_rng(10))
    assert rep.train_rmse[-1] <= rep.train_rmse[0]


def test_zero_learning_rate_freezes_model():
    init = RnnModel.initialize(RnnConfig(), make_rng(11))
    cfg = RnnConfig(learning_rate=0.0, epochs=5)
    model, rep = train(cfg, PERIOD2, PERIOD2[:60], make_rng(12), model=init)
    assert np.array_equal(model.flat(), init.flat())
    assert len(set(rep.train_rmse)) == 1 and len(set(rep.val_rmse)) == 1


def test_report_rmse_matches_metrics_module():
    cfg = RnnConfig(epochs=3)
    model, rep = train(cfg, PERIOD2, PERIOD2[:80], make_rng(13), test_trace=PERIOD2[:120])
    x, t = make_windows(PERIOD2, cfg.window)
    assert abs(rep.train_rmse[-1] - metrics.rmse(t, forward_batch(model, x))) <= 1e-12
    xt, tt = make_windows(PERIOD2[:120], cfg.window)
    y = forward_batch(model, xt)
    assert abs(rep.test_rmse - metrics.rmse(tt, y)) <= 1e-12
    assert abs(rep.test_mse - metrics.mse(tt, y)) <= 1e-12


def test_divergence_names_epoch():
    bad = RnnModel.initialize(RnnConfig(), make_rng(14))
    bad.w_hy[0] = np.nan
    with pytest.raises(DivergenceError) as info:
        train(RnnConfig(epochs=3), PERIOD2, PERIOD2[:60], make_rng(15), model=bad)
    assert info.value.epoch == 1 and "epoch 1" in str(info.value)


def test_short_traces_rejected():
    with pytest.raises(PredictorError):
        train(RnnConfig(), PERIOD2[:11], PERIOD2[:20], make_rng(0))


def test_feature_mode_trains():
    cfg = RnnConfig(epochs=3, feature_mode=True)
    model, rep = train(cfg, PERIOD2, PERIOD2[:60], make_rng(16))
    assert model.input_size == 4 and len(rep.train_rmse) == 3


# -- serialization ---------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.booleans(), st.integers(0, 2**32 - 1))
def test_serialization_bit_exact(hidden, features, seed):
    m = RnnModel.initialize(RnnConfig(hidden_size=hidden, feature_mode=features), make_rng(seed))
    for back in (RnnModel.from_bytes(m.to_bytes()), RnnModel.from_json(m.to_json())):
        assert back.flat().tobytes() == m.flat().tobytes()
        assert back.w_xh.shape == m.w_xh.shape


def test_binary_layout(tmp_path):
    m = RnnModel.initialize(RnnConfig(hidden_size=2), make_rng(0))
    data = m.to_bytes()
    assert data[:4] == b"CRNN"
    assert np.frombuffer(data[4:16], "<u4").tolist() == [1, 1, 2]
    assert len(data) == 16 + 8 * (2 + 4 + 2 + 2 + 1)
    assert np.frombuffer(data[16:32], "<f8").tolist() == m.w_xh.ravel().tolist()
    for name in ("m.bin", "m.json"):
        m.save(tmp_path / name)
        assert RnnModel.load(tmp_path / name).flat().tolist() == m.flat().tolist()
    for corrupt in (b"XXXX" + data[4:], data[:-3], data + b"\0"):
        with pytest.raises(PredictorError):
            RnnModel.from_bytes(corrupt)


# -- Bayes oracle ------------------------------------------------------------------

def test_bayes_hit_rate_oracle():
    # for p=q<0.5 the optimal guess repeats the last state; its hit rate is 1-p
    s = generate_trace(ChannelParams(0.2, 0.2), 50_000, SlotState.IDLE, make_rng(17)).encode()
    assert abs(bayes_hit_rate(s, 0.2, 0.2, 10) - 0.8) < 0.01
    repeat = np.mean(s[10:] == s[9:-1])
    assert bayes_hit_rate(s, 0.2, 0.2, 10) == repeat
