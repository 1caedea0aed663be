"""Deterministic synthetic dialogue streams with planted, recoverable structure.

A dialogue is a chain of utterance units (speaker, length, topic, intent).
Unit boundaries draw the next event - same-speaker continuation, turn
take, or a two-unit interruption episode - and one-second backchannels
are spliced into unit interiors. Low-level labels then follow the
speaker-change taxonomy exactly: a tick is Continuation iff the speaker
tag did not change; changed-speaker ticks are TurnTaking, Interruption
(inside an episode where turn ownership flips twice in under 3 s), or
Backchannel (ownership keeps its holder, covering both the inserted tick
and the host's resume tick).

Embeddings are class centroids plus Gaussian noise on an orthonormal
basis: the acoustic vector encodes the low-level class, the semantic
vector the high-level class and the unit topic. Anchors are the earlier
committed units in the causal window that share the current unit's topic.

Event rates are solved from the configured label priors so the generated
marginals converge to them; all randomness comes from counter-based
streams keyed by (seed, dialogue), so corpora are byte-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .seeding import rng as seeded_rng
from .stream import (
    HIGH_ACTS,
    LOW_ACTS,
    GoldAnnotation,
    HighAct,
    LowAct,
    SecondRecord,
    SpeechActPair,
)

LOW_PHRASE = {
    LowAct.CONTINUATION: "continues the turn",
    LowAct.TURN_TAKING: "takes the turn",
    LowAct.INTERRUPTION: "interrupts to seize the turn",
    LowAct.BACKCHANNEL: "offers a brief backchannel",
}
HIGH_PHRASE = {
    HighAct.CONSTATIVES: "stating information",
    HighAct.DIRECTIVES: "requesting action",
    HighAct.COMMISSIVES: "committing to a plan",
    HighAct.ACKNOWLEDGMENTS: "acknowledging the partner",
}

_WORDS = ("well", "so", "right", "about", "that", "thing", "really", "maybe")


class ScenarioError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    seed: int = 42
    n_dialogues: int = 10
    duration_s: int = 60
    embedding_dim: int = 16
    margin: float = 2.0
    noise_scale: float = 0.5
    # enum order: Constatives, Directives, Commissives, Acknowledgments
    high_prior: tuple[float, float, float, float] = (0.5418, 0.1893, 0.1237, 0.1443)
    # enum order: Continuation, TurnTaking, Interruption, Backchannel
    low_prior: tuple[float, float, float, float] = (0.6477, 0.1903, 0.0907, 0.0713)
    mean_sentence_ticks: float = 2.5
    anchors_per_second_mean: float = 3.92
    anchor_spacing_mean_s: float = 60.55
    topic_pool: int | None = None  # derived from the anchor target when None
    high_stickiness: float = 0.25
    window_s: int = 90

    def __post_init__(self):
        if self.n_dialogues <= 0 or self.duration_s <= 0 or self.embedding_dim <= 0:
            raise ScenarioError("counts, duration, and dim must be positive")
        if self.margin <= 0 or self.noise_scale < 0 or self.mean_sentence_ticks < 1:
            raise ScenarioError("margin/noise/sentence-length out of range")
        for name in ("high_prior", "low_prior"):
            p = np.asarray(getattr(self, name), dtype=np.float64)
            # published class frequencies round to ~1; renormalize exactly
            if p.min() < 0 or abs(p.sum() - 1.0) > 1e-2:
                raise ScenarioError("label priors must lie on the simplex")
            setattr(self, name, tuple(p / p.sum()))
        if self.embedding_dim < 8 + 2:
            raise ScenarioError("embedding dim must fit class and topic subspaces (>= 10)")

    @property
    def n_topics(self) -> int:
        if self.topic_pool is not None:
            return self.topic_pool
        units_seen = self.duration_s / (2.0 * self.mean_sentence_ticks)
        n = int(round(units_seen / self.anchors_per_second_mean))
        return int(np.clip(n, 2, min(12, self.embedding_dim - 8)))


@dataclass
class Unit:
    """One planted sentence: contiguous ticks sharing speaker-of-record."""

    index: int
    speaker: int
    topic: int
    high: HighAct
    kind: str  # cont | turn | int_entry | int_exit
    ticks: list[int] = field(default_factory=list)
    committed: bool = False  # sentence-end flag survived truncation

    @property
    def sentence_id(self) -> str:
        return f"s{self.index:04d}"


@dataclass
class Corpus:
    config: ScenarioConfig
    basis: np.ndarray  # orthonormal columns: 0-3 high, 4-7 low, 8+ topics
    dialogues: dict[str, list[SecondRecord]]
    units: dict[str, list[Unit]]

    def centroid_high(self, idx: int) -> np.ndarray:
        return self.config.margin * self.basis[:, idx]

    def centroid_low(self, idx: int) -> np.ndarray:
        return self.config.margin * self.basis[:, 4 + idx]

    def topic_vector(self, idx: int) -> np.ndarray:
        return 0.5 * self.config.margin * self.basis[:, 8 + idx]


def _event_rates(cfg: ScenarioConfig) -> tuple[float, float, float, float]:
    """Solve (p_cont, p_turn, p_int, bc_insert_rate) from the low prior.

    Backchannel insertions each produce two BC ticks (inserted + resume)
    and consume one would-be continuation tick; interruption episodes add
    a short entry unit, so the boundary-event probabilities are corrected
    for the extra ticks both introduce.
    """
    _, tt, intr, bc = cfg.low_prior
    q = bc / (2.0 - bc)  # insertions per base tick
    tt_b = tt * (1.0 + q)
    int_b = intr * (1.0 + q)
    mean_len = cfg.mean_sentence_ticks
    p_int = int_b * mean_len / (2.0 - 1.5 * int_b)
    denom = mean_len + 1.5 * p_int
    p_turn = tt_b * denom
    p_cont = 1.0 - p_turn - p_int
    if p_cont < 0:
        raise ScenarioError("low prior infeasible at this mean sentence length")
    cont_b = 1.0 - tt_b - int_b
    return p_cont, p_turn, p_int, q / cont_b


def _adjusted_high_prior(cfg: ScenarioConfig) -> np.ndarray:
    """Unit-level intent prior, corrected for Ack-forced inserted backchannels."""
    _, _, _, bc = cfg.low_prior
    q = bc / (2.0 - bc)
    b = q / (1.0 + q)
    target = np.asarray(cfg.high_prior, dtype=np.float64)
    prior = target / (1.0 - b)
    ack = HIGH_ACTS.index(HighAct.ACKNOWLEDGMENTS)
    prior[ack] = (target[ack] - b) / (1.0 - b)
    if prior.min() < 0:
        raise ScenarioError("high prior infeasible given backchannel rate")
    return prior / prior.sum()


def _draw_length(rng: np.random.Generator, mean_len: float) -> int:
    return int(rng.geometric(1.0 / mean_len))


@dataclass
class _Tick:
    speaker: int
    unit: Unit
    low: LowAct
    high: HighAct
    both_voiced: bool
    is_sentence_end: bool = False


def _plan_dialogue(cfg: ScenarioConfig, rng: np.random.Generator) -> tuple[list[_Tick], list[Unit]]:
    p_cont, p_turn, p_int, bc_rate = _event_rates(cfg)
    high_prior = _adjusted_high_prior(cfg)
    n_topics = cfg.n_topics

    def draw_high(prev: HighAct | None) -> HighAct:
        if prev is not None and rng.random() < cfg.high_stickiness:
            return prev
        return HIGH_ACTS[int(rng.choice(4, p=high_prior))]

    units: list[Unit] = []
    base: list[_Tick] = []
    speaker = int(rng.integers(2))
    prev_high: HighAct | None = None
    pending_exit = False  # next unit must be the interrupted speaker retaking
    # generate a little extra; insertions lengthen and truncation trims
    while len(base) < cfg.duration_s + 8:
        if not units:
            kind = "cont"
        elif pending_exit:
            kind = "int_exit"
            pending_exit = False
        else:
            u = rng.random()
            if u < p_cont:
                kind = "cont"
            elif u < p_cont + p_turn:
                kind = "turn"
            else:
                kind = "int_entry"
                pending_exit = True
        if kind == "turn":
            speaker = 1 - speaker
        elif kind == "int_entry":
            speaker = 1 - speaker  # barges in, grabs the turn
        elif kind == "int_exit":
            speaker = 1 - speaker  # original holder fights back
        length = 1 + int(rng.integers(2)) if kind == "int_entry" else _draw_length(rng, cfg.mean_sentence_ticks)
        high = draw_high(prev_high)
        prev_high = high
        unit = Unit(index=len(units), speaker=speaker, topic=int(rng.integers(n_topics)), high=high, kind=kind)
        units.append(unit)
        for k in range(length):
            if k == 0 and len(base) > 0 and kind in ("turn", "int_entry", "int_exit"):
                low = LowAct.TURN_TAKING if kind == "turn" else LowAct.INTERRUPTION
            else:
                low = LowAct.CONTINUATION
            base.append(_Tick(speaker, unit, low, high, both_voiced=(k == 0 and kind == "int_entry")))
        base[-1].is_sentence_end = True

    # splice one-second backchannels before continuation ticks
    ticks: list[_Tick] = [base[0]]
    for j in range(1, len(base)):
        cur = base[j]
        if cur.low is LowAct.CONTINUATION and rng.random() < bc_rate:
            other = 1 - cur.speaker
            ticks.append(_Tick(other, cur.unit, LowAct.BACKCHANNEL, HighAct.ACKNOWLEDGMENTS, both_voiced=True))
            cur = _Tick(cur.speaker, cur.unit, LowAct.BACKCHANNEL, cur.high,
                        both_voiced=False, is_sentence_end=cur.is_sentence_end)
        ticks.append(cur)

    ticks = ticks[: cfg.duration_s]
    for t, tick in enumerate(ticks):
        tick.unit.ticks.append(t)
    # units cut off by the horizon never commit
    live_units = [u for u in units if u.ticks]
    for u in live_units:
        u.committed = ticks[u.ticks[-1]].is_sentence_end
    return ticks, live_units


def _gold_anchors(unit: Unit, t: int, units: list[Unit], window: int) -> list[str]:
    out = []
    for v in units:
        if v is unit or not v.committed:
            continue
        end = v.ticks[-1] + 1
        if end <= t and end > t - window and v.topic == unit.topic:
            out.append(v.sentence_id)
    return out


def synth_dialogue(cfg: ScenarioConfig, basis: np.ndarray, index: int) -> tuple[list[SecondRecord], list[Unit]]:
    """Generate one dialogue; deterministic in (config.seed, index)."""
    rng = seeded_rng(cfg.seed, "synth", index)
    ticks, units = _plan_dialogue(cfg, rng)
    audio_id = f"dlg{index:04d}"

    records: list[SecondRecord] = []
    for t, tick in enumerate(ticks):
        hi = HIGH_ACTS.index(tick.high)
        lo = LOW_ACTS.index(tick.low)
        emb_b = cfg.margin * basis[:, 4 + lo] + cfg.noise_scale * rng.standard_normal(cfg.embedding_dim)
        emb_e = (
            cfg.margin * basis[:, hi]
            + 0.5 * cfg.margin * basis[:, 8 + tick.unit.topic]
            + cfg.noise_scale * rng.standard_normal(cfg.embedding_dim)
        )
        anchors = _gold_anchors(tick.unit, t, units, cfg.window_s)
        topic_name = f"topic-{tick.unit.topic}"
        rationale = f"spk{tick.speaker} {LOW_PHRASE[tick.low]} {HIGH_PHRASE[tick.high]} about {topic_name}"
        if anchors:
            rationale += f" recalling {len(anchors)} prior mentions"
        vad = [tick.speaker == 0, tick.speaker == 1]
        if tick.both_voiced:
            vad = [True, True]
        records.append(
            SecondRecord(
                audio_id=audio_id,
                t=t,
                speaker=tick.speaker,
                text=f"{topic_name} {_WORDS[int(rng.integers(len(_WORDS)))]}",
                emb_acoustic=emb_b,
                emb_semantic=emb_e,
                vad=(bool(vad[0]), bool(vad[1])),
                sentence_end=tick.is_sentence_end,
                gold=GoldAnnotation(SpeechActPair(tick.high, tick.low), anchors, rationale),
            )
        )
    return records, units


def make_corpus(cfg: ScenarioConfig) -> Corpus:
    """Full corpus: shared embedding basis, one record stream per dialogue."""
    basis_rng = seeded_rng(cfg.seed, "synth-basis")
    raw = basis_rng.standard_normal((cfg.embedding_dim, cfg.embedding_dim))
    q, r = np.linalg.qr(raw)
    basis = q * np.sign(np.diag(r))  # sign-fixed for reproducibility

    dialogues: dict[str, list[SecondRecord]] = {}
    units: dict[str, list[Unit]] = {}
    for i in range(cfg.n_dialogues):
        recs, us = synth_dialogue(cfg, basis, i)
        dialogues[recs[0].audio_id] = recs
        units[recs[0].audio_id] = us
    return Corpus(cfg, basis, dialogues, units)


def split_corpus(ids: list[str], ratios: tuple[float, float, float], seed: int) -> tuple[list[str], list[str], list[str]]:
    """Disjoint dialogue-level train/val/test split, deterministic per seed."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ScenarioError(f"split ratios must sum to 1, got {sum(ratios)}")
    order = list(ids)
    seeded_rng(seed, "split").shuffle(order)
    n = len(order)
    cut1 = int(round(ratios[0] * n))
    cut2 = int(round((ratios[0] + ratios[1]) * n))
    return order[:cut1], order[cut1:cut2], order[cut2:]
