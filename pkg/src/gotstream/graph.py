"""Sliding-window graph over dialogue seconds and committed sentences.

Each tick appends a second node; a sentence-end flag folds the pending
run of second nodes into a sentence node; nodes whose whole time range
has left the window are evicted. `candidate_view` exposes the query node
and the completed-sentence candidates the selector scores.

The pending sentence is a single contiguous buffer: second nodes
accumulate (possibly with mixed speaker tags, e.g. a one-second
backchannel inside another speaker's utterance) until a commit folds
them. The sentence speaker is the majority vote over folded tags.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .stream import HIGH_INDEX, LOW_INDEX, SecondRecord, SpeechActPair


class GraphStateError(RuntimeError):
    """Out-of-order ticks or otherwise invalid graph mutation."""


@dataclass
class SecondNode:
    t: int
    speaker: int
    text: str
    audio_ref: int  # block index of this second's audio
    labels: SpeechActPair
    emb_semantic: np.ndarray
    sentence_id: str  # pending-sentence reference
    folded: bool = False


@dataclass
class SentenceNode:
    sentence_id: str
    start: int  # tick interval [start, end)
    end: int
    speaker: int
    text: str
    tick_speakers: list[int]
    emb_mean: np.ndarray
    high_hist: np.ndarray  # label distribution over folded ticks
    low_hist: np.ndarray

    @property
    def length(self) -> int:
        return self.end - self.start


def _majority_speaker(tags: list[int]) -> int:
    """Within-sentence majority vote; ties go to the earliest tick's tag."""
    counts: dict[int, int] = {}
    for tag in tags:
        counts[tag] = counts.get(tag, 0) + 1
    best = max(counts.values())
    for tag in tags:
        if counts[tag] == best:
            return tag


@dataclass
class GotGraph:
    window: int = 90
    current_tick: int = -1
    seconds: list[SecondNode] = field(default_factory=list)
    sentences: list[SentenceNode] = field(default_factory=list)
    _commit_count: int = 0
    _open_sentence_id: str | None = None

    def pending_seconds(self) -> list[SecondNode]:
        return [n for n in self.seconds if not n.folded]

    def append_second(self, record: SecondRecord, labels: SpeechActPair) -> str:
        """Create the second node for this tick; strict streaming order."""
        expected = self.current_tick + 1 if self.current_tick >= 0 else record.t
        if self.current_tick >= 0 and record.t != expected:
            raise GraphStateError(f"tick {record.t} out of order (expected {expected})")
        if self._open_sentence_id is None:
            self._open_sentence_id = f"s{self._commit_count:04d}"
        node = SecondNode(
            t=record.t,
            speaker=record.speaker,
            text=record.text,
            audio_ref=record.t,
            labels=labels,
            emb_semantic=record.emb_semantic,
            sentence_id=self._open_sentence_id,
        )
        self.seconds.append(node)
        self.current_tick = record.t
        return node.sentence_id

    def commit_sentence(self, speaker: int, end_tick: int) -> SentenceNode | None:
        """Fold pending second nodes with tick < end_tick into a sentence node.

        Returns None (no-op) when nothing is pending for the speaker.
        """
        pending = [n for n in self.pending_seconds() if n.t < end_tick]
        if not pending or not any(n.speaker == speaker for n in pending):
            return None
        tags = [n.speaker for n in pending]
        high_hist = np.zeros(4)
        low_hist = np.zeros(4)
        for n in pending:
            n.folded = True
            high_hist[HIGH_INDEX[n.labels.high]] += 1
            low_hist[LOW_INDEX[n.labels.low]] += 1
        sentence = SentenceNode(
            sentence_id=pending[0].sentence_id,
            start=pending[0].t,
            end=pending[-1].t + 1,
            speaker=_majority_speaker(tags),
            text=" ".join(n.text for n in pending if n.text),
            tick_speakers=tags,
            emb_mean=np.mean([n.emb_semantic for n in pending], axis=0),
            high_hist=high_hist / len(pending),
            low_hist=low_hist / len(pending),
        )
        self.sentences.append(sentence)
        self.seconds = [n for n in self.seconds if not n.folded]
        self._commit_count += 1
        self._open_sentence_id = None
        return sentence

    def evict_expired(self) -> int:
        """Drop every node whose entire time range lies before tick - window."""
        horizon = self.current_tick - self.window
        before = len(self.seconds) + len(self.sentences)
        self.seconds = [n for n in self.seconds if n.t >= horizon]
        self.sentences = [s for s in self.sentences if s.end > horizon]
        return before - len(self.seconds) - len(self.sentences)

    def candidate_view(self, t: int) -> tuple[SecondNode, list[SentenceNode]]:
        """Query node at tick t plus completed sentences in [t - window, t)."""
        query = next((n for n in self.seconds if n.t == t), None)
        if query is None:
            raise GraphStateError(f"no second node at tick {t}")
        candidates = [s for s in self.sentences if s.end <= t and s.end > t - self.window]
        candidates.sort(key=lambda s: (s.start, s.sentence_id))
        return query, candidates

    def recent_sentences(self, t: int, count: int) -> list[SentenceNode]:
        """Last `count` committed sentences ending at or before t, time order."""
        done = [s for s in self.sentences if s.end <= t]
        done.sort(key=lambda s: (s.end, s.start))
        return done[-count:] if count > 0 else []

    def snapshot(self) -> dict:
        """JSON-friendly view for debugging and golden-file tests."""
        return {
            "t": self.current_tick,
            "seconds": [
                {
                    "t": n.t,
                    "speaker": n.speaker,
                    "text": n.text,
                    "sentence_id": n.sentence_id,
                    "high": n.labels.high.value,
                    "low": n.labels.low.value,
                }
                for n in self.seconds
            ],
            "sentences": [
                {
                    "sentence_id": s.sentence_id,
                    "interval": [s.start, s.end],
                    "speaker": s.speaker,
                    "text": s.text,
                }
                for s in self.sentences
            ],
        }
