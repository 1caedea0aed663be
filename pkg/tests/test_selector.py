import numpy as np
import pytest

from gotstream import nn
from gotstream.graph import SecondNode, SentenceNode
from gotstream.nn import Tensor
from gotstream.selector import (
    SelectorConfig,
    SelectorModel,
    build_selector_dataset,
    featurize,
    positive_weight,
    sample_loss,
    score_candidates,
    select_anchors,
    selector_loss,
    threshold_align,
)
from gotstream.stream import HighAct, LowAct, SpeechActPair
from gotstream.synth import ScenarioConfig, make_corpus

CFG = SelectorConfig(emb_dim=4, d_model=8, d_ff=12)
ACTS = SpeechActPair(HighAct.CONSTATIVES, LowAct.CONTINUATION)


def model_for(seed=0, cfg=CFG):
    return SelectorModel(cfg, np.random.default_rng(seed))


def query_node(t=20, speaker=0, emb=None):
    return SecondNode(
        t=t, speaker=speaker, text="q", audio_ref=t, labels=ACTS,
        emb_semantic=np.zeros(4) if emb is None else emb, sentence_id="s0010",
    )


def sentence(sid, start, end, speaker=0, emb=None):
    return SentenceNode(
        sentence_id=sid, start=start, end=end, speaker=speaker, text="c",
        tick_speakers=[speaker] * (end - start),
        emb_mean=np.zeros(4) if emb is None else emb,
        high_hist=np.array([1.0, 0, 0, 0]),
        low_hist=np.array([1.0, 0, 0, 0]),
    )


def test_empty_candidates_yields_no_anchors_but_defined_tau():
    res = score_candidates(model_for(), query_node(), [], 20)
    assert res.anchor_ids == [] and res.scores.shape == (0,)
    assert np.isfinite(res.tau)


def test_identical_candidates_get_identical_scores():
    m = model_for(1)
    emb = np.array([0.3, -0.2, 0.5, 0.1])
    cands = [sentence("s0", 2, 5, emb=emb), sentence("s1", 2, 5, emb=emb)]
    res = score_candidates(m, query_node(), cands, 20)
    assert res.scores[0] == pytest.approx(res.scores[1], rel=1e-12)


def test_candidate_permutation_equivariance():
    rng = np.random.default_rng(2)
    m = model_for(2)
    cands = [sentence(f"s{j}", 2 * j, 2 * j + 2, speaker=j % 2, emb=rng.standard_normal(4)) for j in range(5)]
    res = score_candidates(m, query_node(), cands, 20)
    perm = [3, 0, 4, 1, 2]
    res_p = score_candidates(m, query_node(), [cands[j] for j in perm], 20)
    assert np.allclose(res_p.scores, res.scores[perm], atol=1e-12)
    assert res_p.tau == pytest.approx(res.tau, rel=1e-12)
    assert res_p.anchor_ids == res.anchor_ids  # time order is permutation-proof


def test_threshold_align_boundary_and_oracle():
    logits = threshold_align(np.array([1.5]), 1.5, 2.0)
    assert logits[0] == 0.0
    rng = np.random.default_rng(3)
    for _ in range(50):
        s = rng.standard_normal(6)
        tau = rng.standard_normal()
        t = float(rng.uniform(0.1, 3.0))
        got = threshold_align(s, tau, t)
        want = np.array([(x - tau) / t for x in s])
        assert np.array_equal(got, want)


def test_threshold_align_rejects_bad_temperature():
    with pytest.raises(ValueError):
        threshold_align(np.zeros(2), 0.0, 0.0)


def test_select_anchors_threshold_and_order():
    picked = select_anchors(np.array([0.9, 0.2, 0.7]), 0.5, [3, 7, 11])
    assert picked == [0, 2]
    assert select_anchors(np.array([0.1, 0.2]), 0.5, [0, 1]) == []


def test_select_anchors_matches_filter_sort_oracle():
    rng = np.random.default_rng(5)
    for _ in range(100):
        n = int(rng.integers(0, 12))
        scores = rng.standard_normal(n)
        tau = float(rng.standard_normal())
        starts = list(rng.integers(0, 50, size=n))
        got = select_anchors(scores, tau, starts)
        want = sorted([j for j in range(n) if scores[j] > tau], key=lambda j: (starts[j], j))
        assert got == want


def test_selector_loss_perfect_logits_near_zero():
    logits = Tensor(np.array([[40.0], [-40.0], [40.0]]))
    y = np.array([1.0, 0.0, 1.0])
    total, parts = selector_loss(logits, y, np.ones(3), alpha=2.0)
    assert parts["wbce"] == pytest.approx(0.0, abs=1e-12)
    assert parts["count"] == pytest.approx(0.0, abs=1e-12)


def test_selector_loss_uniform_rank_is_log_k():
    k = 5
    logits = Tensor(np.zeros((k, 1)))
    y = np.zeros(k)
    y[2] = 1.0
    _, parts = selector_loss(logits, y, np.ones(k), alpha=1.0)
    assert parts["rank"] == pytest.approx(np.log(k), rel=1e-12)


def test_selector_loss_degenerate_weights_reduce_to_wbce():
    rng = np.random.default_rng(7)
    logits = Tensor(rng.standard_normal((6, 1)))
    y = (rng.random(6) < 0.4).astype(float)
    total, parts = selector_loss(logits, y, np.ones(6), alpha=3.0, lambda_count=0.0, lambda_rank=0.0)
    assert total.item() == pytest.approx(parts["wbce"], rel=1e-12)


def test_selector_loss_no_positives_rank_zero():
    logits = Tensor(np.zeros((3, 1)))
    _, parts = selector_loss(logits, np.zeros(3), np.ones(3), alpha=1.0)
    assert parts["rank"] == 0.0


def test_selector_loss_all_masked_errors():
    with pytest.raises(ValueError):
        selector_loss(Tensor(np.zeros((2, 1))), np.zeros(2), np.zeros(2), alpha=1.0)


def test_selector_loss_wbce_matches_scalar_oracle():
    rng = np.random.default_rng(11)
    raw = rng.standard_normal(5)
    logits = Tensor(raw.reshape(-1, 1))
    y = (rng.random(5) < 0.5).astype(float)
    mask = np.array([1.0, 1.0, 0.0, 1.0, 1.0])
    alpha = 2.5
    _, parts = selector_loss(logits, y, mask, alpha=alpha)
    acc = 0.0
    for j in range(5):
        if mask[j] == 0:
            continue
        p = 1.0 / (1.0 + np.exp(-raw[j]))
        acc += -(alpha * y[j] * np.log(p) + (1 - y[j]) * np.log(1 - p))
    assert parts["wbce"] == pytest.approx(acc / mask.sum(), rel=1e-9)


def test_selector_loss_count_zero_iff_soft_count_matches():
    logits = Tensor(np.array([[50.0], [-50.0]]))
    _, parts = selector_loss(logits, np.array([1.0, 0.0]), np.ones(2), alpha=1.0)
    assert parts["count"] == pytest.approx(0.0, abs=1e-12)
    _, parts2 = selector_loss(logits, np.array([0.0, 0.0]), np.ones(2), alpha=1.0)
    assert parts2["count"] == pytest.approx(1.0, rel=1e-9)


def test_selector_gradients_match_finite_differences():
    rng = np.random.default_rng(13)
    worst = 0.0
    for seed in range(5):
        m = model_for(seed + 50)
        gen = np.random.default_rng(seed)
        n_c = int(gen.integers(1, 5))
        features = gen.standard_normal((n_c + 1, CFG.feature_dim))
        rel = gen.standard_normal((n_c, 2))
        labels = (gen.random(n_c) < 0.5).astype(float)
        from gotstream.selector import SelectorSample

        sample = SelectorSample("a", 0, features, rel, labels)

        def f():
            total, _ = sample_loss(m, sample, alpha=2.0)
            return total

        worst = max(worst, nn.grad_check(f, m.params, samples_per_block=3, rng=rng))
    assert worst <= 1e-3


def test_anchor_sets_agree_between_sigmoid_and_logit_views():
    rng = np.random.default_rng(17)
    for _ in range(50):
        scores = rng.standard_normal(8)
        tau = float(rng.standard_normal())
        temp = float(rng.uniform(0.05, 4.0))
        logits = threshold_align(scores, tau, temp)
        assert [j for j in range(8) if scores[j] > tau] == [j for j in range(8) if logits[j] > 0]


def test_dataset_builder_and_alpha():
    corpus = make_corpus(ScenarioConfig(seed=5, n_dialogues=3, duration_s=40))
    samples = build_selector_dataset(corpus.dialogues, window=90)
    assert samples, "expected at least one supervised tick"
    for s in samples:
        assert s.features.shape[0] == len(s.labels) + 1
        assert s.rel.shape == (len(s.labels), 2)
    alpha = positive_weight(samples)
    assert alpha > 0
