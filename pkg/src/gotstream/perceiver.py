"""Hierarchical, strictly causal per-second speech-act predictor.

Pipeline per tick: gated fusion of acoustic/semantic embeddings, shared
projection into the latent space, two causal attention decoders over the
last K latents (keys past the current tick are masked; surviving keys
carry an additive recency bias -beta*(i-j)), FiLM modulation of the
low-level state by the high-level state, and two 4-way heads.

Training objective is the sum of both cross-entropies over supervised
ticks. The same forward math runs in two shapes: a vectorized
whole-sequence form for training and a ring-buffer streaming form for
inference; tests pin their agreement.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import Tensor
from .stream import HIGH_ACTS, HIGH_INDEX, LOW_ACTS, LOW_INDEX, SecondRecord, SpeechActPair


@dataclass
class PerceiverConfig:
    emb_dim: int = 16  # D_B = D_E at desk scale
    d_model: int = 32
    d_ff: int = 64
    context: int = 90  # K: seconds of latent history visible to the decoders
    beta: float = 0.1  # recency bias slope, fixed (not trained)
    n_high: int = 4
    n_low: int = 4


def _init(rng: np.random.Generator, rows: int, cols: int) -> Tensor:
    return Tensor(rng.standard_normal((rows, cols)) / np.sqrt(rows), requires_grad=True)


def _zeros(n: int, value: float = 0.0) -> Tensor:
    return Tensor(np.full(n, value), requires_grad=True)


class SpeechActPerceiver:
    """Parameter container plus the forward passes over them."""

    def __init__(self, config: PerceiverConfig, rng: np.random.Generator):
        self.config = config
        d, dm, ff = config.emb_dim, config.d_model, config.d_ff
        p: dict[str, Tensor] = {}
        p["gate.w_b"] = _init(rng, d, d)
        p["gate.w_e"] = _init(rng, d, d)
        p["gate.b"] = _zeros(d)
        p["shared.w"] = _init(rng, d, dm)
        p["shared.b"] = _zeros(dm)
        for side in ("high", "low"):
            p[f"{side}.wq"] = _init(rng, dm, dm)
            p[f"{side}.wk"] = _init(rng, dm, dm)
            p[f"{side}.wv"] = _init(rng, dm, dm)
            p[f"{side}.wo"] = _init(rng, dm, dm)
            p[f"{side}.ff1.w"] = _init(rng, dm, ff)
            p[f"{side}.ff1.b"] = _zeros(ff)
            p[f"{side}.ff2.w"] = _init(rng, ff, dm)
            p[f"{side}.ff2.b"] = _zeros(dm)
        # FiLM starts as the identity so early training matches an
        # unconditioned low-level head
        p["film.w_gamma"] = Tensor(np.zeros((dm, dm)), requires_grad=True)
        p["film.b_gamma"] = _zeros(dm, 1.0)
        p["film.w_eta"] = Tensor(np.zeros((dm, dm)), requires_grad=True)
        p["film.b_eta"] = _zeros(dm)
        p["head.high.w"] = _init(rng, dm, config.n_high)
        p["head.high.b"] = _zeros(config.n_high)
        p["head.low.w"] = _init(rng, dm, config.n_low)
        p["head.low.b"] = _zeros(config.n_low)
        self.params = p

    def fuse(self, h_b: Tensor, h_e: Tensor) -> tuple[Tensor, Tensor]:
        """Element-wise gate: lam = sigma(W_b h_B + W_e h_E); e interpolates."""
        p = self.params
        lam = nn.sigmoid(nn.add(nn.affine(h_b, p["gate.w_b"]), nn.affine(h_e, p["gate.w_e"], p["gate.b"])))
        e = nn.add(h_b, nn.mul(lam, nn.add(h_e, nn.neg(h_b))))
        return lam, e

    def shared(self, e: Tensor) -> Tensor:
        return nn.tanh(nn.affine(e, self.params["shared.w"], self.params["shared.b"]))

    def _attention_bias(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        k = self.config.context
        idx = np.arange(n)
        gap = idx[:, None] - idx[None, :]
        mask = (gap < 0) | (gap >= k)
        return -self.config.beta * np.clip(gap, 0, None), mask

    def _decode(self, side: str, z: Tensor, bias: np.ndarray, mask: np.ndarray | None) -> Tensor:
        p = self.params
        attn = nn.attention(
            nn.affine(z, p[f"{side}.wq"]),
            nn.affine(z, p[f"{side}.wk"]),
            nn.affine(z, p[f"{side}.wv"]),
            bias=bias,
            mask=mask,
        )
        h = nn.add(z, nn.affine(attn, p[f"{side}.wo"]))
        ffn = nn.affine(nn.tanh(nn.affine(h, p[f"{side}.ff1.w"], p[f"{side}.ff1.b"])), p[f"{side}.ff2.w"], p[f"{side}.ff2.b"])
        return nn.add(h, ffn)

    def film(self, z_h: Tensor, z_l: Tensor) -> Tensor:
        p = self.params
        gamma = nn.affine(z_h, p["film.w_gamma"], p["film.b_gamma"])
        eta = nn.affine(z_h, p["film.w_eta"], p["film.b_eta"])
        return nn.add(nn.mul(gamma, z_l), eta)

    def forward_sequence(self, emb_b: np.ndarray, emb_e: np.ndarray) -> tuple[Tensor, Tensor]:
        """Logits for every tick of a dialogue; rows stay strictly causal."""
        n = emb_b.shape[0]
        p = self.params
        _, e = self.fuse(Tensor(emb_b), Tensor(emb_e))
        z = self.shared(e)
        bias, mask = self._attention_bias(n)
        z_h = self._decode("high", z, bias, mask)
        z_l = self._decode("low", z, bias, mask)
        logits_h = nn.affine(z_h, p["head.high.w"], p["head.high.b"])
        logits_l = nn.affine(self.film(z_h, z_l), p["head.low.w"], p["head.low.b"])
        return logits_h, logits_l

    def loss(
        self,
        emb_b: np.ndarray,
        emb_e: np.ndarray,
        y_high: np.ndarray,
        y_low: np.ndarray,
        tick_mask: np.ndarray | None = None,
    ) -> Tensor:
        """Sum of both cross-entropies over supervised (unmasked) ticks."""
        logits_h, logits_l = self.forward_sequence(emb_b, emb_e)
        w = None if tick_mask is None else np.asarray(tick_mask, dtype=np.float64)
        return nn.add(
            nn.cross_entropy_rows(logits_h, y_high, row_weights=w),
            nn.cross_entropy_rows(logits_l, y_low, row_weights=w),
        )


class PerceiverState:
    """Ring buffer of fused latents for one stream."""

    def __init__(self, config: PerceiverConfig):
        self.config = config
        self.latents: deque[np.ndarray] = deque(maxlen=config.context)
        self.tick = -1


def gated_fuse(h_b: np.ndarray, h_e: np.ndarray, model: SpeechActPerceiver) -> tuple[np.ndarray, np.ndarray]:
    """Single-vector view of the fusion gate (lam, e)."""
    lam, e = model.fuse(Tensor(np.atleast_2d(h_b)), Tensor(np.atleast_2d(h_e)))
    return lam.data[0], e.data[0]


def decode_states(state: PerceiverState, model: SpeechActPerceiver) -> tuple[np.ndarray, np.ndarray]:
    """Decode (z_H, z_L) for the newest buffered latent only."""
    if not state.latents:
        raise ValueError("empty perceiver state")
    buf = np.stack(state.latents)
    n = buf.shape[0]
    ages = np.arange(n - 1, -1, -1, dtype=np.float64)
    bias = (-model.config.beta * ages)[None, :]
    z = Tensor(buf)
    out = []
    for side in ("high", "low"):
        p = model.params
        attn = nn.attention(
            nn.affine(Tensor(buf[-1:]), p[f"{side}.wq"]),
            nn.affine(z, p[f"{side}.wk"]),
            nn.affine(z, p[f"{side}.wv"]),
            bias=bias,
        )
        h = nn.add(Tensor(buf[-1:]), nn.affine(attn, p[f"{side}.wo"]))
        ffn = nn.affine(nn.tanh(nn.affine(h, p[f"{side}.ff1.w"], p[f"{side}.ff1.b"])), p[f"{side}.ff2.w"], p[f"{side}.ff2.b"])
        out.append(nn.add(h, ffn))
    return out[0].data[0], out[1].data[0]


def film_modulate(z_h: np.ndarray, z_l: np.ndarray, model: SpeechActPerceiver) -> np.ndarray:
    return model.film(Tensor(np.atleast_2d(z_h)), Tensor(np.atleast_2d(z_l))).data[0]


def predict_step(record: SecondRecord, state: PerceiverState, model: SpeechActPerceiver) -> SpeechActPair:
    """Advance the stream by one tick and emit both class distributions."""
    if record.emb_acoustic.shape[0] != model.config.emb_dim or record.emb_semantic.shape[0] != model.config.emb_dim:
        raise ValueError("embedding dim does not match perceiver config")
    _, e = model.fuse(Tensor(record.emb_acoustic[None, :]), Tensor(record.emb_semantic[None, :]))
    z = model.shared(e)
    state.latents.append(z.data[0])
    state.tick = record.t
    z_h, z_l = decode_states(state, model)
    z_l_mod = film_modulate(z_h, z_l, model)
    p = model.params
    logits_h = z_h @ p["head.high.w"].data + p["head.high.b"].data
    logits_l = z_l_mod @ p["head.low.w"].data + p["head.low.b"].data
    p_high = nn.softmax_rowwise(Tensor(logits_h[None, :])).data[0]
    p_low = nn.softmax_rowwise(Tensor(logits_l[None, :])).data[0]
    return SpeechActPair(
        high=HIGH_ACTS[int(np.argmax(p_high))],
        low=LOW_ACTS[int(np.argmax(p_low))],
        p_high=p_high,
        p_low=p_low,
    )


def dialogue_arrays(records: list[SecondRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stack embeddings and gold label indices for one dialogue."""
    emb_b = np.stack([r.emb_acoustic for r in records])
    emb_e = np.stack([r.emb_semantic for r in records])
    missing = [r.t for r in records if r.gold is None]
    if missing:
        raise ValueError(f"records without gold labels at ticks {missing[:5]}")
    y_h = np.array([HIGH_INDEX[r.gold.acts.high] for r in records], dtype=np.intp)
    y_l = np.array([LOW_INDEX[r.gold.acts.low] for r in records], dtype=np.intp)
    return emb_b, emb_e, y_h, y_l


def train_step(
    model: SpeechActPerceiver,
    optimizer: nn.AdamW,
    emb_b: np.ndarray,
    emb_e: np.ndarray,
    y_high: np.ndarray,
    y_low: np.ndarray,
    tick_mask: np.ndarray,
) -> float:
    """One clipped, scheduled update on a batch of supervised ticks."""
    optimizer.zero_grad()
    loss = model.loss(emb_b, emb_e, y_high, y_low, tick_mask)
    value = loss.item()
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite perceiver loss: {value}")
    loss.backward()
    optimizer.step()
    return value


def train_perceiver(
    model: SpeechActPerceiver,
    dialogues: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]],
    epochs: int,
    optimizer_config: nn.OptimizerConfig,
    rng: np.random.Generator,
    batch_ticks: int = 8,
) -> list[float]:
    """Epoch loop; a sample is one supervised tick with its causal context.

    Each optimizer step takes `batch_ticks` ticks drawn from a single
    dialogue (the dialogue forward is shared), every tick is visited once
    per epoch, and dialogue order reshuffles per epoch. Returns per-epoch
    mean per-tick loss.
    """
    steps_per_epoch = sum(int(np.ceil(d[0].shape[0] / batch_ticks)) for d in dialogues)
    cfg = nn.OptimizerConfig(**{**optimizer_config.__dict__, "total_steps": steps_per_epoch * epochs})
    optimizer = nn.AdamW(model.params, cfg)
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(dialogues))
        total, count = 0.0, 0
        for di in order:
            emb_b, emb_e, y_h, y_l = dialogues[di]
            n = emb_b.shape[0]
            ticks = rng.permutation(n)
            for at in range(0, n, batch_ticks):
                chosen = ticks[at : at + batch_ticks]
                mask = np.zeros(n)
                mask[chosen] = 1.0
                loss = train_step(model, optimizer, emb_b, emb_e, y_h, y_l, mask)
                total += loss
                count += len(chosen)
        history.append(total / count)
    return history
