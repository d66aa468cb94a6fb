"""Event sequences and their line-based text format.

The on-disk format is one event per line, ``time,observation,action``,
preceded by header lines that declare the two alphabets. Everything is
plain text so files diff cleanly and round-trip bit-exactly (floats are
written with shortest round-trip repr).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .core import Alphabet, SmjpError

FORMAT_HEADER = "# smjp-events v1"


class EventParseError(SmjpError):
    """Base class for event-file parse failures; carries the line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MalformedLine(EventParseError):
    pass


class UnknownSymbol(EventParseError):
    pass


class NonMonotoneTime(EventParseError):
    pass


@dataclass(frozen=True)
class EventSequence:
    """Time-ordered (timestamp, observation, action) record.

    Symbols are stored as dense indices into the two alphabets; timestamps
    are seconds, strictly increasing.
    """

    id: str
    times: np.ndarray
    observations: np.ndarray
    actions: np.ndarray
    observation_alphabet: Alphabet
    action_alphabet: Alphabet
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=np.float64))
        object.__setattr__(self, "observations", np.asarray(self.observations, dtype=np.int64))
        object.__setattr__(self, "actions", np.asarray(self.actions, dtype=np.int64))
        n = self.times.shape[0]
        if self.observations.shape[0] != n or self.actions.shape[0] != n:
            raise SmjpError("times, observations and actions must have equal length")
        if n and not np.all(np.diff(self.times) > 0):
            raise SmjpError("event times must be strictly increasing")
        if n and not np.all(np.isfinite(self.times)):
            raise SmjpError("event times must be finite")
        n_obs, n_act = len(self.observation_alphabet), len(self.action_alphabet)
        if n and (self.observations.min() < 0 or self.observations.max() >= n_obs):
            raise SmjpError("observation index outside alphabet")
        if n and (self.actions.min() < 0 or self.actions.max() >= n_act):
            raise SmjpError("action index outside alphabet")

    def __len__(self) -> int:
        return int(self.times.shape[0])

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0]) if len(self) > 1 else 0.0

    @property
    def event_rate(self) -> float:
        """Mean events per second over the recorded span."""
        return (len(self) - 1) / self.duration if self.duration > 0 else 0.0

    def events(self) -> Iterable[tuple[float, str, str]]:
        for t, o, a in zip(self.times, self.observations, self.actions):
            yield float(t), self.observation_alphabet.label(int(o)), self.action_alphabet.label(int(a))


def from_symbols(
    seq_id: str,
    events: Iterable[tuple[float, str, str]],
    observation_alphabet: Alphabet,
    action_alphabet: Alphabet,
    metadata: dict[str, str] | None = None,
) -> EventSequence:
    """Build a sequence from (time, observation label, action label) triples."""
    rows = list(events)
    times = np.array([r[0] for r in rows], dtype=np.float64)
    obs = np.array([observation_alphabet.index(r[1]) for r in rows], dtype=np.int64)
    act = np.array([action_alphabet.index(r[2]) for r in rows], dtype=np.int64)
    return EventSequence(seq_id, times, obs, act, observation_alphabet, action_alphabet, dict(metadata or {}))


def split_chronological(seq: EventSequence, holdout_fraction: float) -> tuple[EventSequence, EventSequence]:
    """Split into (head, tail) with the last ``holdout_fraction`` of events
    in the tail. Behavioral data is non-stationary, so evaluation always
    holds out the most recent stretch rather than a random shuffle."""
    if not 0.0 <= holdout_fraction < 1.0:
        raise SmjpError(f"holdout fraction must be in [0, 1), got {holdout_fraction!r}")
    n = len(seq)
    cut = n - int(np.floor(holdout_fraction * n))
    head = EventSequence(
        seq.id, seq.times[:cut], seq.observations[:cut], seq.actions[:cut],
        seq.observation_alphabet, seq.action_alphabet, dict(seq.metadata),
    )
    tail = EventSequence(
        seq.id + "-holdout", seq.times[cut:], seq.observations[cut:], seq.actions[cut:],
        seq.observation_alphabet, seq.action_alphabet, dict(seq.metadata),
    )
    return head, tail


def write_event_file(seq: EventSequence, target: str | TextIO) -> None:
    """Write the line-based text form; see :func:`parse_event_file`."""
    own = isinstance(target, str)
    fh: TextIO = open(target, "w") if own else target
    try:
        fh.write(FORMAT_HEADER + "\n")
        fh.write(f"# id: {seq.id}\n")
        fh.write("# observations: " + " ".join(seq.observation_alphabet.labels) + "\n")
        fh.write("# actions: " + " ".join(seq.action_alphabet.labels) + "\n")
        for key in seq.metadata:
            fh.write(f"# meta {key}: {seq.metadata[key]}\n")
        fh.write("time,observation,action\n")
        for t, o, a in seq.events():
            fh.write(f"{t!r},{o},{a}\n")
    finally:
        if own:
            fh.close()


def parse_event_file(source: str | TextIO) -> EventSequence:
    """Parse the text format back into an EventSequence.

    The parse is total: every line is either consumed or reported in a
    structured error carrying its 1-based line number. The first offending
    line aborts the parse.

    Raises
    ------
    MalformedLine, UnknownSymbol, NonMonotoneTime
    """
    own = isinstance(source, str)
    fh: TextIO = open(source, "r", errors="replace") if own else source
    try:
        seq_id = "events"
        obs_labels: list[str] | None = None
        act_labels: list[str] | None = None
        metadata: dict[str, str] = {}
        rows: list[tuple[float, str, str]] = []
        saw_header = False
        saw_columns = False
        last_t = None
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if lineno == 1:
                if line != FORMAT_HEADER:
                    raise MalformedLine(f"expected {FORMAT_HEADER!r} header", lineno)
                saw_header = True
                continue
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("id:"):
                    seq_id = body[3:].strip()
                elif body.startswith("observations:"):
                    obs_labels = body[len("observations:"):].split()
                elif body.startswith("actions:"):
                    act_labels = body[len("actions:"):].split()
                elif body.startswith("meta "):
                    kv = body[len("meta "):]
                    if ":" not in kv:
                        raise MalformedLine("metadata line needs 'key: value'", lineno)
                    k, v = kv.split(":", 1)
                    metadata[k.strip()] = v.strip()
                # Unrecognized comments are ignored.
                continue
            if line == "time,observation,action":
                saw_columns = True
                if obs_labels is None or act_labels is None:
                    raise MalformedLine("alphabets must be declared before events", lineno)
                continue
            if not saw_columns:
                raise MalformedLine("event rows must follow the column header", lineno)
            parts = line.split(",")
            if len(parts) != 3:
                raise MalformedLine(f"expected 3 comma-separated fields, got {len(parts)}", lineno)
            try:
                t = float(parts[0])
            except ValueError:
                raise MalformedLine(f"bad timestamp {parts[0]!r}", lineno) from None
            if not np.isfinite(t):
                raise MalformedLine(f"non-finite timestamp {parts[0]!r}", lineno)
            o, a = parts[1].strip(), parts[2].strip()
            if o not in obs_labels:
                raise UnknownSymbol(f"observation {o!r} not declared", lineno)
            if a not in act_labels:
                raise UnknownSymbol(f"action {a!r} not declared", lineno)
            if last_t is not None and t <= last_t:
                raise NonMonotoneTime(f"timestamp {t!r} not greater than {last_t!r}", lineno)
            last_t = t
            rows.append((t, o, a))
        if not saw_header:
            raise MalformedLine("empty input", 1)
        if obs_labels is None or act_labels is None:
            raise MalformedLine("missing alphabet declarations", 1)
        try:
            obs_alpha = Alphabet("observation", tuple(obs_labels))
            act_alpha = Alphabet("action", tuple(act_labels))
        except SmjpError as exc:
            raise MalformedLine(f"bad alphabet declaration: {exc}", 1) from None
        return from_symbols(seq_id, rows, obs_alpha, act_alpha, metadata)
    finally:
        if own:
            fh.close()


def parse_event_text(text: str) -> EventSequence:
    return parse_event_file(io.StringIO(text))


def event_text(seq: EventSequence) -> str:
    buf = io.StringIO()
    write_event_file(seq, buf)
    return buf.getvalue()
