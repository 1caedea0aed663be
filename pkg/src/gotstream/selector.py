"""Anchor selection over candidate sentence nodes.

A fully connected attention scorer encodes {query} + candidates; a
relational bias (time gap, speaker match) is injected only on the
query->candidate attention edges, keeping candidate<->candidate
competition unbiased. Heads emit one score per candidate plus a
query-dependent threshold; anchors are the candidates scoring above the
threshold, time-ordered. The training loss is weighted BCE over
threshold-aligned logits plus count and ranking regularizers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .graph import GotGraph, SecondNode, SentenceNode
from .nn import Tensor
from .stream import HIGH_INDEX, LOW_INDEX, SecondRecord


@dataclass
class SelectorConfig:
    emb_dim: int = 16
    d_model: int = 32
    d_ff: int = 64
    n_blocks: int = 1
    temperature: float = 1.0
    lambda_count: float = 0.01
    lambda_rank: float = 0.1

    @property
    def feature_dim(self) -> int:
        # speaker match, log1p(time gap), log1p(length), emb, high + low hists
        return 3 + self.emb_dim + 8


@dataclass
class SelectionResult:
    scores: np.ndarray
    tau: float
    anchor_ids: list[str]  # sentence ids ordered by start time
    anchor_indices: list[int]
    mask: np.ndarray


class SelectorModel:
    def __init__(self, config: SelectorConfig, rng: np.random.Generator):
        self.config = config
        f, d, ff = config.feature_dim, config.d_model, config.d_ff
        p: dict[str, Tensor] = {}
        p["in.w"] = Tensor(rng.standard_normal((f, d)) / np.sqrt(f), requires_grad=True)
        p["in.b"] = Tensor(np.zeros(d), requires_grad=True)
        for i in range(config.n_blocks):
            for name, rows, cols in (
                ("wq", d, d), ("wk", d, d), ("wv", d, d), ("wo", d, d),
                ("ff1.w", d, ff), ("ff2.w", ff, d), ("rel.w", 2, 1),
            ):
                p[f"blk{i}.{name}"] = Tensor(
                    rng.standard_normal((rows, cols)) / np.sqrt(rows), requires_grad=True
                )
            p[f"blk{i}.ff1.b"] = Tensor(np.zeros(ff), requires_grad=True)
            p[f"blk{i}.ff2.b"] = Tensor(np.zeros(d), requires_grad=True)
            p[f"blk{i}.rel.b"] = Tensor(np.zeros(1), requires_grad=True)
        p["score.w"] = Tensor(rng.standard_normal((d, 1)) / np.sqrt(d), requires_grad=True)
        p["score.b"] = Tensor(np.zeros(1), requires_grad=True)
        p["tau.w"] = Tensor(rng.standard_normal((d, 1)) / np.sqrt(d), requires_grad=True)
        p["tau.b"] = Tensor(np.zeros(1), requires_grad=True)
        self.params = p

    def forward(self, features: np.ndarray, rel: np.ndarray) -> tuple[Tensor, Tensor]:
        """Scores for candidates (rows 1..m-1) and the query threshold."""
        if features.shape[1] != self.config.feature_dim:
            raise ValueError(f"feature dim {features.shape[1]} != {self.config.feature_dim}")
        m = features.shape[0]
        p = self.params
        h = nn.tanh(nn.affine(Tensor(features), p["in.w"], p["in.b"]))
        for i in range(self.config.n_blocks):
            rel_scores = nn.affine(Tensor(rel), p[f"blk{i}.rel.w"], p[f"blk{i}.rel.b"])
            bias = nn.query_bias_matrix(rel_scores, m)
            attn = nn.attention(
                nn.affine(h, p[f"blk{i}.wq"]),
                nn.affine(h, p[f"blk{i}.wk"]),
                nn.affine(h, p[f"blk{i}.wv"]),
                bias=bias,
            )
            h = nn.add(h, nn.affine(attn, p[f"blk{i}.wo"]))
            ffn = nn.affine(
                nn.tanh(nn.affine(h, p[f"blk{i}.ff1.w"], p[f"blk{i}.ff1.b"])),
                p[f"blk{i}.ff2.w"],
                p[f"blk{i}.ff2.b"],
            )
            h = nn.add(h, ffn)
        scores = nn.affine(nn.slice_rows(h, 1, m), p["score.w"], p["score.b"])
        tau = nn.affine(nn.slice_rows(h, 0, 1), p["tau.w"], p["tau.b"])
        return scores, tau


def featurize(query: SecondNode, candidates: list[SentenceNode], t: int) -> tuple[np.ndarray, np.ndarray]:
    """Node features for {query} + candidates plus query->candidate edge cues."""
    rows = []
    q_high = np.zeros(4)
    q_high[HIGH_INDEX[query.labels.high]] = 1.0
    q_low = np.zeros(4)
    q_low[LOW_INDEX[query.labels.low]] = 1.0
    rows.append(np.concatenate([[1.0, 0.0, 0.0], query.emb_semantic, q_high, q_low]))
    rel = np.zeros((len(candidates), 2))
    for j, c in enumerate(candidates):
        match = 1.0 if c.speaker == query.speaker else 0.0
        gap = np.log1p(max(0, t - c.end))
        rows.append(np.concatenate([[match, gap, np.log1p(c.length)], c.emb_mean, c.high_hist, c.low_hist]))
        rel[j] = (gap, match)
    return np.stack(rows), rel


def score_candidates(
    model: SelectorModel, query: SecondNode, candidates: list[SentenceNode], t: int
) -> SelectionResult:
    """Inference path: finite scores and threshold, then thresholded anchors."""
    if not candidates:
        features, rel = featurize(query, [], t)
        _, tau = model.forward(features, rel)
        return SelectionResult(np.zeros(0), float(tau.data[0, 0]), [], [], np.zeros(0))
    features, rel = featurize(query, candidates, t)
    scores_t, tau_t = model.forward(features, rel)
    scores = scores_t.data[:, 0].copy()
    tau = float(tau_t.data[0, 0])
    order = select_anchors(scores, tau, [c.start for c in candidates])
    return SelectionResult(
        scores=scores,
        tau=tau,
        anchor_ids=[candidates[j].sentence_id for j in order],
        anchor_indices=order,
        mask=np.ones(len(candidates)),
    )


def threshold_align(scores: np.ndarray, tau: float, temperature: float) -> np.ndarray:
    """Threshold-aligned logits (s - tau) / T."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return (np.asarray(scores, dtype=np.float64) - tau) / temperature


def select_anchors(scores: np.ndarray, tau: float, start_times: list[int]) -> list[int]:
    """Indices with score strictly above the threshold, far-to-near order."""
    picked = [j for j, s in enumerate(scores) if s > tau]
    picked.sort(key=lambda j: (start_times[j], j))
    return picked


def selector_loss(
    logits: Tensor,
    labels: np.ndarray,
    mask: np.ndarray,
    alpha: float,
    lambda_count: float = 0.01,
    lambda_rank: float = 0.1,
) -> tuple[Tensor, dict[str, float]]:
    """Weighted BCE + count and rank regularizers over one tick's candidates.

    `logits` are threshold-aligned; `labels` is the multi-hot anchor
    vector and `mask` marks valid candidate slots. Rank uses a softmax
    restricted to masked-in candidates and is 0 when there are no
    positives.
    """
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    m = np.asarray(mask, dtype=np.float64).reshape(-1, 1)
    if y.shape != logits.data.shape or m.shape != logits.data.shape:
        raise ValueError("labels/mask shape mismatch")
    m_total = m.sum()
    if m_total <= 0:
        raise ValueError("weighted BCE needs at least one valid candidate")
    if alpha <= 0:
        raise ValueError("positive-class weight must be positive")

    terms = nn.add(
        nn.mul(nn.softplus(nn.neg(logits)), Tensor(alpha * y)),
        nn.mul(nn.softplus(logits), Tensor(1.0 - y)),
    )
    wbce = nn.mul(nn.tensor_sum(nn.mul(terms, Tensor(m))), Tensor(1.0 / m_total))

    soft_count = nn.tensor_sum(nn.mul(nn.sigmoid(logits), Tensor(m)))
    diff = nn.add(soft_count, Tensor(-float((y * m).sum())))
    count = nn.mul(diff, diff)

    pos = (y > 0.5) & (m > 0.5)
    n_pos = int(pos.sum())
    if n_pos > 0:
        lse = nn.logsumexp_masked(logits, m > 0.5)
        mean_pos = nn.mul(nn.tensor_sum(nn.mul(logits, Tensor(pos.astype(np.float64)))), Tensor(1.0 / n_pos))
        rank = nn.add(lse, nn.neg(mean_pos))
    else:
        rank = Tensor(0.0)

    total = nn.add(wbce, nn.add(nn.mul(rank, Tensor(lambda_rank)), nn.mul(count, Tensor(lambda_count))))
    parts = {
        "wbce": wbce.item(),
        "count": count.item(),
        "rank": rank.item(),
        "total": total.item(),
    }
    return total, parts


@dataclass
class SelectorSample:
    """One supervised tick: cached features, edges, and anchor labels."""

    audio_id: str
    t: int
    features: np.ndarray
    rel: np.ndarray
    labels: np.ndarray
    candidate_ids: list[str] = field(default_factory=list)
    starts: list[int] = field(default_factory=list)


def build_selector_dataset(dialogues: dict[str, list[SecondRecord]], window: int) -> list[SelectorSample]:
    """Replay gold-labeled streams through the graph and cache one sample per
    tick that has at least one candidate (featurization is parameter-free)."""
    samples: list[SelectorSample] = []
    for audio_id, records in dialogues.items():
        graph = GotGraph(window=window)
        flag: int | None = None
        for rec in records:
            if rec.gold is None:
                raise ValueError(f"selector training needs gold labels ({audio_id} t={rec.t})")
            if flag is not None:
                graph.commit_sentence(flag, rec.t)
                flag = None
            graph.append_second(rec, rec.gold.acts)
            graph.evict_expired()
            if rec.sentence_end:
                flag = rec.speaker
            query, candidates = graph.candidate_view(rec.t)
            if not candidates:
                continue
            features, rel = featurize(query, candidates, rec.t)
            gold = set(rec.gold.anchors)
            labels = np.array([1.0 if c.sentence_id in gold else 0.0 for c in candidates])
            samples.append(
                SelectorSample(
                    audio_id=audio_id,
                    t=rec.t,
                    features=features,
                    rel=rel,
                    labels=labels,
                    candidate_ids=[c.sentence_id for c in candidates],
                    starts=[c.start for c in candidates],
                )
            )
    return samples


def positive_weight(samples: list[SelectorSample]) -> float:
    """alpha = N_neg / N_pos counted over candidate positions, once, on train."""
    pos = sum(float(s.labels.sum()) for s in samples)
    neg = sum(float(len(s.labels) - s.labels.sum()) for s in samples)
    if pos == 0:
        raise ValueError("training split has no positive anchors")
    return neg / pos


def sample_loss(model: SelectorModel, sample: SelectorSample, alpha: float) -> tuple[Tensor, dict[str, float]]:
    cfg = model.config
    scores, tau = model.forward(sample.features, sample.rel)
    logits = nn.mul(nn.add(scores, nn.neg(tau)), Tensor(1.0 / cfg.temperature))
    return selector_loss(logits, sample.labels, np.ones_like(sample.labels),
                         alpha, cfg.lambda_count, cfg.lambda_rank)


def train_selector_step(
    model: SelectorModel, optimizer: nn.AdamW, batch: list[SelectorSample], alpha: float
) -> dict[str, float]:
    """One update on a batch of ticks; returns mean loss components."""
    optimizer.zero_grad()
    acc: dict[str, float] = {"wbce": 0.0, "count": 0.0, "rank": 0.0, "total": 0.0}
    total = None
    for sample in batch:
        loss, parts = sample_loss(model, sample, alpha)
        total = loss if total is None else nn.add(total, loss)
        for k in acc:
            acc[k] += parts[k] / len(batch)
    if not np.isfinite(acc["total"]):
        raise FloatingPointError("non-finite selector loss")
    scaled = nn.mul(total, Tensor(1.0 / len(batch)))
    scaled.backward()
    optimizer.step()
    return acc


def train_selector(
    model: SelectorModel,
    samples: list[SelectorSample],
    epochs: int,
    optimizer_config: nn.OptimizerConfig,
    rng: np.random.Generator,
    batch_size: int = 8,
    alpha: float | None = None,
) -> tuple[list[float], float]:
    """Epoch loop over cached tick samples; returns loss history and alpha."""
    if alpha is None:
        alpha = positive_weight(samples)
    steps_per_epoch = int(np.ceil(len(samples) / batch_size))
    cfg = nn.OptimizerConfig(**{**optimizer_config.__dict__, "total_steps": steps_per_epoch * epochs})
    optimizer = nn.AdamW(model.params, cfg)
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(samples))
        epoch_total = 0.0
        for at in range(0, len(samples), batch_size):
            batch = [samples[i] for i in order[at : at + batch_size]]
            parts = train_selector_step(model, optimizer, batch, alpha)
            epoch_total += parts["total"] * len(batch)
        history.append(epoch_total / len(samples))
    return history, alpha


def evaluate_selection(model: SelectorModel, samples: list[SelectorSample]) -> dict[str, float]:
    """Micro F1 of thresholded anchors plus soft-count calibration error."""
    tp = fp = fn = 0
    soft_err = 0.0
    for s in samples:
        scores_t, tau_t = model.forward(s.features, s.rel)
        scores = scores_t.data[:, 0]
        tau = float(tau_t.data[0, 0])
        logits = threshold_align(scores, tau, model.config.temperature)
        picked = set(select_anchors(scores, tau, s.starts))
        truth = {j for j, y in enumerate(s.labels) if y > 0.5}
        tp += len(picked & truth)
        fp += len(picked - truth)
        fn += len(truth - picked)
        soft_err += float((1.0 / (1.0 + np.exp(-logits))).sum() - s.labels.sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "f1": f1,
        "precision": precision,
        "recall": recall,
        "mean_soft_count_error": soft_err / len(samples) if samples else 0.0,
    }
