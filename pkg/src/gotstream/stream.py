"""Stream data model: per-second records, channel downmix, 1-second block
partitioning, and strictly causal windowed access.

Wire format is JSON Lines, one object per (audio_id, t):
{"audio_id": str, "t": int, "speaker": int, "text": str,
 "emb_acoustic": [float...], "emb_semantic": [float...],
 "vad": [bool, bool], "sentence_end": bool, "gold": {...} optional}
"""

from __future__ import annotations

import json
from bisect import bisect_left
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Sequence

import numpy as np

CANONICAL_SAMPLE_RATE = 16_000


class StreamFormatError(ValueError):
    """Structurally invalid stream input (bad shapes, ordering, fields)."""


class HighAct(Enum):
    CONSTATIVES = "Constatives"
    DIRECTIVES = "Directives"
    COMMISSIVES = "Commissives"
    ACKNOWLEDGMENTS = "Acknowledgments"


class LowAct(Enum):
    CONTINUATION = "Continuation"
    TURN_TAKING = "TurnTaking"
    INTERRUPTION = "Interruption"
    BACKCHANNEL = "Backchannel"


HIGH_ACTS = list(HighAct)
LOW_ACTS = list(LowAct)
HIGH_INDEX = {a: i for i, a in enumerate(HIGH_ACTS)}
LOW_INDEX = {a: i for i, a in enumerate(LOW_ACTS)}


@dataclass
class SpeechActPair:
    """Joint high-level intent and low-level interaction act.

    Probability vectors follow the enum declaration order and must lie on
    the 4-simplex; when both label and vector are present the argmax must
    match the label.
    """

    high: HighAct
    low: LowAct
    p_high: np.ndarray | None = None
    p_low: np.ndarray | None = None

    def __post_init__(self):
        for name, p, acts, label in (
            ("p_high", self.p_high, HIGH_ACTS, self.high),
            ("p_low", self.p_low, LOW_ACTS, self.low),
        ):
            if p is None:
                continue
            p = np.asarray(p, dtype=np.float64)
            if p.shape != (4,):
                raise StreamFormatError(f"{name} must have 4 entries")
            if p.min() < 0 or abs(p.sum() - 1.0) > 1e-9:
                raise StreamFormatError(f"{name} is not on the 4-simplex")
            if acts[int(np.argmax(p))] is not label:
                raise StreamFormatError(f"argmax({name}) disagrees with label {label.value}")
            setattr(self, name, p)


@dataclass
class GoldAnnotation:
    """Optional supervision attached to a record."""

    acts: SpeechActPair
    anchors: list[str] = field(default_factory=list)  # sentence ids
    rationale: str = ""


@dataclass
class SecondRecord:
    """One tick of observable input."""

    audio_id: str
    t: int
    speaker: int
    text: str
    emb_acoustic: np.ndarray
    emb_semantic: np.ndarray
    vad: tuple[bool, bool]
    sentence_end: bool
    gold: GoldAnnotation | None = None


@dataclass
class AudioSignal:
    """Raw waveform; samples shaped (channel_count, n_samples) in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int = CANONICAL_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.samples.shape[0] not in (1, 2):
            raise StreamFormatError("channel_count must be 1 or 2")
        if self.sample_rate_hz <= 0:
            raise StreamFormatError("sample_rate_hz must be positive")

    @property
    def channel_count(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


@dataclass
class BlockPartition:
    """Non-overlapping 1-second sample windows covering the signal."""

    blocks: np.ndarray  # (N, samples_per_block)
    pad_len: int

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]


def downmix_to_mono(signal: AudioSignal, weights: tuple[float, float] = (0.5, 0.5)) -> AudioSignal:
    """Per-sample linear combination of the two channels; causal by construction."""
    if signal.channel_count != 2:
        raise StreamFormatError("downmix requires a two-channel signal")
    w0, w1 = float(weights[0]), float(weights[1])
    if not (np.isfinite(w0) and np.isfinite(w1)):
        raise StreamFormatError("downmix weights must be finite")
    mono = w0 * signal.samples[0] + w1 * signal.samples[1]
    return AudioSignal(mono[None, :], signal.sample_rate_hz)


def partition_blocks(signal: AudioSignal) -> BlockPartition:
    """Split a mono signal into ceil(T / f_s) one-second blocks, zero-padding the last."""
    if signal.channel_count != 1:
        raise StreamFormatError("partition requires a mono signal")
    if signal.sample_rate_hz != CANONICAL_SAMPLE_RATE:
        raise StreamFormatError(f"expected {CANONICAL_SAMPLE_RATE} Hz input; resampling is out of scope")
    n_block = signal.sample_rate_hz
    t = signal.n_samples
    if t == 0:
        return BlockPartition(np.zeros((0, n_block)), 0)
    n = -(-t // n_block)
    pad = n * n_block - t
    padded = np.concatenate([signal.samples[0], np.zeros(pad)])
    return BlockPartition(padded.reshape(n, n_block), pad)


def causal_window(records: Sequence[SecondRecord], t: int, window: int) -> list[SecondRecord]:
    """Records with tick in [t - window, t); never anything at or past t."""
    ticks = [r.t for r in records]
    lo = bisect_left(ticks, t - window)
    hi = bisect_left(ticks, t)
    return list(records[lo:hi])


_REQUIRED_FIELDS = {"audio_id", "t", "speaker", "text", "emb_acoustic", "emb_semantic", "vad", "sentence_end"}
_ALLOWED_FIELDS = _REQUIRED_FIELDS | {"gold"}


def record_from_json(obj: dict, strict: bool = True) -> SecondRecord:
    missing = _REQUIRED_FIELDS - obj.keys()
    if missing:
        raise StreamFormatError(f"missing fields: {sorted(missing)}")
    if strict:
        unknown = obj.keys() - _ALLOWED_FIELDS
        if unknown:
            raise StreamFormatError(f"unknown fields: {sorted(unknown)}")
    vad = obj["vad"]
    if len(vad) != 2:
        raise StreamFormatError("vad must have one flag per channel")
    gold = None
    if obj.get("gold") is not None:
        g = obj["gold"]
        try:
            acts = SpeechActPair(HighAct(g["high"]), LowAct(g["low"]))
        except (KeyError, ValueError) as err:
            raise StreamFormatError(f"bad gold labels: {err}") from err
        gold = GoldAnnotation(acts, list(g.get("anchors", [])), g.get("rationale", ""))
    return SecondRecord(
        audio_id=str(obj["audio_id"]),
        t=int(obj["t"]),
        speaker=int(obj["speaker"]),
        text=str(obj["text"]),
        emb_acoustic=np.asarray(obj["emb_acoustic"], dtype=np.float64),
        emb_semantic=np.asarray(obj["emb_semantic"], dtype=np.float64),
        vad=(bool(vad[0]), bool(vad[1])),
        sentence_end=bool(obj["sentence_end"]),
        gold=gold,
    )


def record_to_json(record: SecondRecord) -> dict:
    obj = {
        "audio_id": record.audio_id,
        "t": record.t,
        "speaker": record.speaker,
        "text": record.text,
        "emb_acoustic": [float(x) for x in record.emb_acoustic],
        "emb_semantic": [float(x) for x in record.emb_semantic],
        "vad": [bool(v) for v in record.vad],
        "sentence_end": record.sentence_end,
    }
    if record.gold is not None:
        obj["gold"] = {
            "high": record.gold.acts.high.value,
            "low": record.gold.acts.low.value,
            "anchors": list(record.gold.anchors),
            "rationale": record.gold.rationale,
        }
    return obj


def read_stream(lines: Iterable[str], strict: bool = True) -> Iterator[SecondRecord]:
    """Parse a JSONL stream, validating tick order and embedding dims per audio_id.

    In lenient mode malformed lines are skipped; ordering violations are
    structural and always raise.
    """
    last_tick: dict[str, int] = {}
    dims: dict[str, tuple[int, int]] = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = record_from_json(json.loads(line), strict=strict)
        except (json.JSONDecodeError, StreamFormatError) as err:
            if strict:
                raise StreamFormatError(f"line {lineno}: {err}") from err
            continue
        prev = last_tick.get(rec.audio_id)
        if prev is not None and rec.t <= prev:
            raise StreamFormatError(f"line {lineno}: tick {rec.t} not increasing for {rec.audio_id}")
        last_tick[rec.audio_id] = rec.t
        d = (rec.emb_acoustic.shape[0], rec.emb_semantic.shape[0])
        if dims.setdefault(rec.audio_id, d) != d:
            raise StreamFormatError(f"line {lineno}: embedding dims changed for {rec.audio_id}")
        yield rec


def load_stream_file(path, strict: bool = True) -> dict[str, list[SecondRecord]]:
    """Read a JSONL file and group records by audio_id (tick order preserved)."""
    by_dialogue: dict[str, list[SecondRecord]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for rec in read_stream(fh, strict=strict):
            by_dialogue.setdefault(rec.audio_id, []).append(rec)
    return by_dialogue


def write_stream_file(path, records: Iterable[SecondRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_json(rec), sort_keys=True) + "\n")
