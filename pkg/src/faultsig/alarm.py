"""Incipient/alarm state machine with hysteresis and hold counters.

States and transitions, driven by the top-ranked classification of a frame:

* ``Normal -> Incipient`` when the top score reaches ``incipient_threshold``;
  emits ``Raised``.
* ``Incipient -> Alarm`` after ``on_hold_frames`` consecutive frames scoring at
  least ``on_threshold`` (the entering frame counts); emits ``Escalated``.
* ``Incipient/Alarm -> Normal`` after ``off_hold_frames`` consecutive frames
  whose top score is below ``off_threshold`` (an empty classification scores
  0); emits ``ReturnedToNormal``.

Only one label is tracked. When the tracked label disappears from the
classification and another label scores at least ``incipient_threshold``,
the old label is closed with ``ReturnedToNormal`` and the new one is
``Raised``; the state (Incipient or Alarm) is kept.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

Classification = Sequence[tuple[str, float]]


class Level(str, enum.Enum):
    NORMAL = "Normal"
    INCIPIENT = "Incipient"
    ALARM = "Alarm"


class Transition(str, enum.Enum):
    RAISED = "Raised"
    ESCALATED = "Escalated"
    RETURNED_TO_NORMAL = "ReturnedToNormal"


@dataclass(frozen=True)
class AlarmConfig:
    on_threshold: float = 0.8
    incipient_threshold: float = 0.5
    off_threshold: float = 0.3
    on_hold_frames: int = 3
    off_hold_frames: int = 5

    def __post_init__(self) -> None:
        if not 0 < self.on_threshold <= 1 or not 0 < self.incipient_threshold <= 1:
            raise ValueError("on and incipient thresholds must lie in (0, 1]")
        if not 0 <= self.off_threshold < 1:
            raise ValueError("off_threshold must lie in [0, 1)")
        if not self.off_threshold < self.incipient_threshold <= self.on_threshold:
            raise ValueError("need off_threshold < incipient_threshold <= on_threshold")
        if self.on_hold_frames < 1 or self.off_hold_frames < 1:
            raise ValueError("hold frame counts must be >= 1")


@dataclass(frozen=True)
class AlarmState:
    level: Level = Level.NORMAL
    label: str | None = None
    on_count: int = 0
    off_count: int = 0
    last_time_s: float | None = None


@dataclass(frozen=True)
class AlarmEvent:
    frame_time_s: float
    transition: Transition
    label: str
    score: float

    def to_json(self) -> str:
        """One JSON line: ``{"time_s", "transition", "label", "score"}``."""
        return json.dumps(
            {
                "time_s": self.frame_time_s,
                "transition": self.transition.value,
                "label": self.label,
                "score": self.score,
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "AlarmEvent":
        doc = json.loads(line)
        return cls(float(doc["time_s"]), Transition(doc["transition"]), doc["label"], float(doc["score"]))


def step(
    state: AlarmState,
    classification: Classification,
    frame_time_s: float,
    cfg: AlarmConfig = AlarmConfig(),
) -> tuple[AlarmState, list[AlarmEvent]]:
    """Advance the state machine by one frame.

    Raises:
        ValueError: If ``frame_time_s`` does not increase strictly.
    """
    if state.last_time_s is not None and not frame_time_s > state.last_time_s:
        raise ValueError(
            f"frame time {frame_time_s} does not follow {state.last_time_s}"
        )
    ranked = list(classification)
    top_label, top_score = ranked[0] if ranked else (None, 0.0)
    scores = dict(ranked)
    events: list[AlarmEvent] = []
    t = frame_time_s

    if state.level is Level.NORMAL:
        if top_label is not None and top_score >= cfg.incipient_threshold:
            events.append(AlarmEvent(t, Transition.RAISED, top_label, top_score))
            state = AlarmState(Level.INCIPIENT, top_label, 0, 0, t)
            state = _count_on(state, top_score, cfg)
            if state.level is Level.ALARM:
                events.append(AlarmEvent(t, Transition.ESCALATED, top_label, top_score))
            return state, events
        return replace(state, last_time_s=t), events

    label = state.label
    if label not in scores and top_label is not None and top_score >= cfg.incipient_threshold:
        events.append(AlarmEvent(t, Transition.RETURNED_TO_NORMAL, label, 0.0))
        events.append(AlarmEvent(t, Transition.RAISED, top_label, top_score))
        label = top_label
        state = replace(state, label=label, on_count=0, off_count=0)
    score = scores.get(label, 0.0)

    if top_score < cfg.off_threshold:
        off = state.off_count + 1
        if off >= cfg.off_hold_frames:
            events.append(AlarmEvent(t, Transition.RETURNED_TO_NORMAL, label, top_score))
            return AlarmState(last_time_s=t), events
        return replace(state, off_count=off, on_count=0, last_time_s=t), events

    state = replace(state, off_count=0, last_time_s=t)
    if state.level is Level.INCIPIENT:
        state = _count_on(state, score, cfg)
        if state.level is Level.ALARM:
            events.append(AlarmEvent(t, Transition.ESCALATED, label, score))
    return state, events


def _count_on(state: AlarmState, score: float, cfg: AlarmConfig) -> AlarmState:
    on = state.on_count + 1 if score >= cfg.on_threshold else 0
    if on >= cfg.on_hold_frames:
        return replace(state, level=Level.ALARM, on_count=on)
    return replace(state, on_count=on)


def run_monitor(
    classifications: Iterable[tuple[float, Classification]],
    cfg: AlarmConfig = AlarmConfig(),
) -> list[AlarmEvent]:
    """Fold :func:`step` over ``(frame_time_s, classification)`` pairs from Normal."""
    state = AlarmState()
    events: list[AlarmEvent] = []
    for t, ranked in classifications:
        state, new = step(state, ranked, t, cfg)
        events.extend(new)
    return events


def events_to_jsonl(events: Iterable[AlarmEvent]) -> str:
    return "".join(e.to_json() + "\n" for e in events)
