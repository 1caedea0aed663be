import numpy as np
import pytest

from gotstream import nn
from gotstream.nn import Tensor
from gotstream.perceiver import (
    PerceiverConfig,
    PerceiverState,
    SpeechActPerceiver,
    decode_states,
    dialogue_arrays,
    film_modulate,
    gated_fuse,
    predict_step,
    train_step,
)
from gotstream.stream import SecondRecord

CFG = PerceiverConfig(emb_dim=5, d_model=8, d_ff=12, context=6, beta=0.1)


def model_for(seed=0, cfg=CFG):
    return SpeechActPerceiver(cfg, np.random.default_rng(seed))


def record_for(t, emb_b, emb_e):
    return SecondRecord(
        audio_id="d",
        t=t,
        speaker=0,
        text="x",
        emb_acoustic=np.asarray(emb_b, dtype=np.float64),
        emb_semantic=np.asarray(emb_e, dtype=np.float64),
        vad=(True, False),
        sentence_end=False,
    )


def test_gated_fuse_zero_params_averages():
    m = model_for()
    for name in ("gate.w_b", "gate.w_e", "gate.b"):
        m.params[name].data[:] = 0.0
    h_b = np.arange(5.0)
    h_e = np.arange(5.0)[::-1].copy()
    lam, e = gated_fuse(h_b, h_e, m)
    assert np.allclose(lam, 0.5)
    assert np.allclose(e, (h_b + h_e) / 2)


def test_gated_fuse_saturated_gate_passes_semantic():
    m = model_for()
    m.params["gate.w_b"].data[:] = 0.0
    m.params["gate.w_e"].data[:] = 0.0
    m.params["gate.b"].data[:] = 50.0
    h_b = np.ones(5)
    h_e = np.full(5, -3.0)
    _, e = gated_fuse(h_b, h_e, m)
    assert np.allclose(e, h_e, atol=1e-12)


def test_gated_fuse_interpolates_componentwise():
    rng = np.random.default_rng(4)
    m = model_for(4)
    h_b = rng.standard_normal(5)
    h_e = rng.standard_normal(5)
    lam, e = gated_fuse(h_b, h_e, m)
    for i in range(5):
        want = (1 - lam[i]) * h_b[i] + lam[i] * h_e[i]
        assert e[i] == pytest.approx(want, rel=1e-12)
        lo, hi = sorted((h_b[i], h_e[i]))
        assert lo - 1e-12 <= e[i] <= hi + 1e-12


def test_decode_states_requires_nonempty_buffer():
    with pytest.raises(ValueError):
        decode_states(PerceiverState(CFG), model_for())


def test_decode_states_symmetric_under_identical_latents():
    cfg = PerceiverConfig(emb_dim=5, d_model=8, d_ff=12, context=6, beta=0.0)
    m = model_for(1, cfg)
    latent = np.random.default_rng(2).standard_normal(8)
    one = PerceiverState(cfg)
    one.latents.append(latent)
    many = PerceiverState(cfg)
    for _ in range(5):
        many.latents.append(latent.copy())
    zh1, zl1 = decode_states(one, m)
    zh5, zl5 = decode_states(many, m)
    assert np.allclose(zh1, zh5, atol=1e-12)
    assert np.allclose(zl1, zl5, atol=1e-12)


def test_film_identity_and_constant_paths():
    m = model_for(3)
    z_h = np.random.default_rng(5).standard_normal(8)
    z_l = np.random.default_rng(6).standard_normal(8)
    # identity init: gamma=1, eta=0
    assert np.allclose(film_modulate(z_h, z_l, m), z_l)
    m.params["film.b_gamma"].data[:] = 0.0
    m.params["film.b_eta"].data[:] = 7.0
    assert np.allclose(film_modulate(z_h, z_l, m), 7.0)


def test_film_matches_componentwise_oracle():
    m = model_for(7)
    rng = np.random.default_rng(8)
    m.params["film.w_gamma"].data[:] = rng.standard_normal((8, 8)) * 0.3
    m.params["film.w_eta"].data[:] = rng.standard_normal((8, 8)) * 0.3
    z_h = rng.standard_normal(8)
    z_l = rng.standard_normal(8)
    gamma = z_h @ m.params["film.w_gamma"].data + m.params["film.b_gamma"].data
    eta = z_h @ m.params["film.w_eta"].data + m.params["film.b_eta"].data
    got = film_modulate(z_h, z_l, m)
    assert nn.max_rel_err(got, gamma * z_l + eta) <= 1e-12


def test_predict_step_emits_valid_simplex_and_is_deterministic():
    rng = np.random.default_rng(9)
    m = model_for(9)

    def run():
        state = PerceiverState(CFG)
        out = []
        gen = np.random.default_rng(123)
        for t in range(10):
            r = record_for(t, gen.standard_normal(5), gen.standard_normal(5))
            out.append(predict_step(r, state, m))
        return out

    a, b = run(), run()
    for pa, pb in zip(a, b):
        assert abs(pa.p_high.sum() - 1.0) <= 1e-9 and pa.p_high.min() >= 0
        assert abs(pa.p_low.sum() - 1.0) <= 1e-9 and pa.p_low.min() >= 0
        assert np.array_equal(pa.p_high, pb.p_high)
        assert np.array_equal(pa.p_low, pb.p_low)


def test_predict_step_rejects_wrong_dim():
    m = model_for()
    state = PerceiverState(CFG)
    with pytest.raises(ValueError):
        predict_step(record_for(0, np.zeros(3), np.zeros(5)), state, m)


def test_streaming_matches_sequence_forward():
    rng = np.random.default_rng(11)
    m = model_for(11)
    n = 12
    emb_b = rng.standard_normal((n, 5))
    emb_e = rng.standard_normal((n, 5))
    logits_h, logits_l = m.forward_sequence(emb_b, emb_e)
    p_seq_h = nn.softmax_rowwise(logits_h).data
    p_seq_l = nn.softmax_rowwise(logits_l).data
    state = PerceiverState(CFG)
    for t in range(n):
        pred = predict_step(record_for(t, emb_b[t], emb_e[t]), state, m)
        assert np.allclose(pred.p_high, p_seq_h[t], atol=1e-10)
        assert np.allclose(pred.p_low, p_seq_l[t], atol=1e-10)


def test_causality_future_mutation_does_not_change_prefix():
    rng = np.random.default_rng(13)
    m = model_for(13)
    n, cut = 10, 6
    emb_b = rng.standard_normal((n, 5))
    emb_e = rng.standard_normal((n, 5))

    def run(eb, ee):
        state = PerceiverState(CFG)
        return [predict_step(record_for(t, eb[t], ee[t]), state, m) for t in range(n)]

    base = run(emb_b, emb_e)
    eb2, ee2 = emb_b.copy(), emb_e.copy()
    eb2[cut + 1 :] = 99.0
    ee2[cut + 1 :] = -99.0
    mutated = run(eb2, ee2)
    for t in range(cut + 1):
        assert np.array_equal(base[t].p_high, mutated[t].p_high)
        assert np.array_equal(base[t].p_low, mutated[t].p_low)


def test_high_head_independent_of_low_side_parameters():
    rng = np.random.default_rng(17)
    m = model_for(17)
    emb_b = rng.standard_normal((6, 5))
    emb_e = rng.standard_normal((6, 5))
    base_h, base_l = m.forward_sequence(emb_b, emb_e)
    for name in ("low.wq", "low.wv", "low.ff1.w", "head.low.w", "film.w_gamma", "film.w_eta"):
        m.params[name].data += rng.standard_normal(m.params[name].data.shape)
    moved_h, moved_l = m.forward_sequence(emb_b, emb_e)
    assert np.array_equal(base_h.data, moved_h.data)
    assert not np.allclose(base_l.data, moved_l.data)


def test_loss_uniform_logits_is_two_n_log4():
    m = model_for(19)
    for name in ("head.high.w", "head.high.b", "head.low.w", "head.low.b"):
        m.params[name].data[:] = 0.0
    n = 7
    rng = np.random.default_rng(20)
    loss = m.loss(
        rng.standard_normal((n, 5)),
        rng.standard_normal((n, 5)),
        rng.integers(4, size=n),
        rng.integers(4, size=n),
    )
    assert loss.item() == pytest.approx(2 * n * np.log(4.0), rel=1e-12)


def test_loss_requires_gold():
    rec = record_for(0, np.zeros(5), np.zeros(5))
    with pytest.raises(ValueError):
        dialogue_arrays([rec])


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(21)
    cfg = PerceiverConfig(emb_dim=3, d_model=4, d_ff=6, context=4, beta=0.1)
    worst = 0.0
    for seed in range(5):
        m = model_for(seed, cfg)
        gen = np.random.default_rng(seed + 100)
        emb_b = gen.standard_normal((4, 3))
        emb_e = gen.standard_normal((4, 3))
        y_h = gen.integers(4, size=4)
        y_l = gen.integers(4, size=4)

        def f():
            return m.loss(emb_b, emb_e, y_h, y_l)

        worst = max(worst, nn.grad_check(f, m.params, samples_per_block=3, rng=rng))
    assert worst <= 1e-3


def test_train_step_decreases_loss_on_separable_example():
    cfg = PerceiverConfig(emb_dim=5, d_model=8, d_ff=12, context=4, beta=0.1)
    m = model_for(42, cfg)
    rng = np.random.default_rng(42)
    emb_b = np.zeros((4, 5))
    emb_e = np.zeros((4, 5))
    y_h = np.array([0, 1, 2, 3])
    y_l = np.array([3, 2, 1, 0])
    for i in range(4):
        emb_b[i, i] = 2.0
        emb_e[i, 4 - i] = 2.0
    opt = nn.AdamW(m.params, nn.OptimizerConfig(lr=3e-2, warmup_steps=0, weight_decay=1e-2))
    mask = np.ones(4)
    first = train_step(m, opt, emb_b, emb_e, y_h, y_l, mask)
    losses = [first]
    for _ in range(49):
        losses.append(train_step(m, opt, emb_b, emb_e, y_h, y_l, mask))
    assert losses[-1] < losses[0] * 0.2


def test_train_step_aborts_on_nonfinite_loss():
    m = model_for(1)
    opt = nn.AdamW(m.params, nn.OptimizerConfig())
    bad = np.full((2, 5), np.nan)
    with pytest.raises(FloatingPointError):
        train_step(m, opt, bad, bad, np.zeros(2, dtype=int), np.zeros(2, dtype=int), np.ones(2))
