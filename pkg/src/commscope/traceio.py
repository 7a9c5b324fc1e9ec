"""Communication trace log format.

One record per line, pipe-delimited::

    #commscope-trace v1
    # iter|kind|bytes|group|phase|dur_us
    3|allreduce|1048576|8|backward|512

``phase`` and ``dur_us`` may be empty. Lines starting with ``#`` and blank
lines are ignored. Kind names are case-insensitive and accept the usual
torch.distributed spellings (``all_reduce``, ``reduce_scatter_tensor``, ...).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .analytic import tally
from .core import CollectiveEvent, CollectiveKind, CommSummary, CommscopeError, Phase

HEADER = "#commscope-trace v1"
N_FIELDS = 6

_KIND_ALIASES = {
    "allreduce": CollectiveKind.ALLREDUCE,
    "all_reduce": CollectiveKind.ALLREDUCE,
    "allgather": CollectiveKind.ALLGATHER,
    "all_gather": CollectiveKind.ALLGATHER,
    "allgather_into_tensor": CollectiveKind.ALLGATHER,
    "all_gather_into_tensor": CollectiveKind.ALLGATHER,
    "reducescatter": CollectiveKind.REDUCE_SCATTER,
    "reduce_scatter": CollectiveKind.REDUCE_SCATTER,
    "reduce_scatter_tensor": CollectiveKind.REDUCE_SCATTER,
    "reduce": CollectiveKind.REDUCE,
    "broadcast": CollectiveKind.BROADCAST,
    "send": CollectiveKind.SEND,
    "isend": CollectiveKind.SEND,
    "recv": CollectiveKind.RECV,
    "irecv": CollectiveKind.RECV,
}

_PHASE_ALIASES = {
    "init": Phase.INIT,
    "forward": Phase.FORWARD,
    "fwd": Phase.FORWARD,
    "recompute": Phase.RECOMPUTE,
    "backward": Phase.BACKWARD,
    "bwd": Phase.BACKWARD,
    "optimizer_step": Phase.OPTIMIZER_STEP,
    "optimizerstep": Phase.OPTIMIZER_STEP,
    "step": Phase.OPTIMIZER_STEP,
}

_UINT = re.compile(r"[0-9]+")
_UFLOAT = re.compile(r"[0-9]+(\.[0-9]*)?([eE][+-]?[0-9]+)?|\.[0-9]+([eE][+-]?[0-9]+)?")


class TraceParseError(CommscopeError):
    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class MalformedLine(TraceParseError):
    pass


class UnknownKind(TraceParseError):
    def __init__(self, line_no: int, token: str):
        self.token = token
        super().__init__(line_no, f"unknown collective kind {token!r}")


class NonNumericField(TraceParseError):
    def __init__(self, line_no: int, field_name: str, token: str):
        self.field_name = field_name
        self.token = token
        super().__init__(line_no, f"field {field_name!r} is not a non-negative number: {token!r}")


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    kind: CollectiveKind
    payload_bytes: int
    group_size: int
    phase: Phase | None = None
    duration_us: float | None = None


def parse_kind(token: str, line_no: int = 0) -> CollectiveKind:
    kind = _KIND_ALIASES.get(token.strip().lower())
    if kind is None:
        raise UnknownKind(line_no, token.strip())
    return kind


def _uint(token: str, name: str, line_no: int) -> int:
    token = token.strip()
    if not _UINT.fullmatch(token):
        raise NonNumericField(line_no, name, token)
    return int(token)


def parse_line(line: str, line_no: int) -> TraceRecord | None:
    """Parse one line; ``None`` for comments and blank lines."""
    text = line.strip()
    if not text or text.startswith("#"):
        return None
    parts = text.split("|")
    if len(parts) != N_FIELDS:
        raise MalformedLine(line_no, f"expected {N_FIELDS} '|'-separated fields, got {len(parts)}")
    it_tok, kind_tok, bytes_tok, group_tok, phase_tok, dur_tok = parts
    iteration = _uint(it_tok, "iter", line_no)
    kind = parse_kind(kind_tok, line_no)
    payload = _uint(bytes_tok, "bytes", line_no)
    group = _uint(group_tok, "group", line_no)
    if group < 1:
        raise MalformedLine(line_no, "group must be >= 1")
    if kind.is_p2p and group != 2:
        raise MalformedLine(line_no, f"{kind.label} records need group 2, got {group}")
    phase = None
    if phase_tok.strip():
        phase = _PHASE_ALIASES.get(phase_tok.strip().lower())
        if phase is None:
            raise MalformedLine(line_no, f"unknown phase {phase_tok.strip()!r}")
    duration = None
    if dur_tok.strip():
        if not _UFLOAT.fullmatch(dur_tok.strip()):
            raise NonNumericField(line_no, "dur_us", dur_tok.strip())
        duration = float(dur_tok)
    return TraceRecord(iteration, kind, payload, group, phase, duration)


def _decode(lines: Iterable[str | bytes]) -> Iterator[str]:
    for line in lines:
        yield line.decode("utf-8", errors="replace") if isinstance(line, bytes) else line


def scan_trace(lines: Iterable[str | bytes]) -> tuple[list[TraceRecord], list[TraceParseError]]:
    """Parse every line, collecting errors instead of stopping at the first."""
    records, errors = [], []
    for line_no, line in enumerate(_decode(lines), start=1):
        try:
            rec = parse_line(line, line_no)
        except TraceParseError as exc:
            errors.append(exc)
            continue
        if rec is not None:
            records.append(rec)
    return records, errors


def parse_trace(lines: Iterable[str | bytes]) -> list[TraceRecord]:
    records = []
    for line_no, line in enumerate(_decode(lines), start=1):
        rec = parse_line(line, line_no)
        if rec is not None:
            records.append(rec)
    return records


def read_trace(path: str | Path) -> list[TraceRecord]:
    with open(path, "rb") as fh:
        return parse_trace(fh)


def aggregate_trace(
    records: Iterable[TraceRecord],
    iteration: int | None = None,
    elem_bytes: int = 2,
    skip_phases: Sequence[Phase] = (),
) -> CommSummary:
    """Summarize records straight from their logged payload bytes."""
    skip = set(skip_phases)
    calls = (
        (r.kind, r.payload_bytes, r.group_size, 1)
        for r in records
        if (iteration is None or r.iteration == iteration) and r.phase not in skip
    )
    return tally(calls, elem_bytes)


def format_record(rec: TraceRecord) -> str:
    phase = rec.phase.value if rec.phase else ""
    dur = "" if rec.duration_us is None else repr(rec.duration_us)
    return f"{rec.iteration}|{rec.kind.value}|{rec.payload_bytes}|{rec.group_size}|{phase}|{dur}"


def serialize_events(events: Iterable[CollectiveEvent], iteration: int = 0, elem_bytes: int = 2) -> Iterator[str]:
    yield HEADER
    for ev in events:
        line = format_record(TraceRecord(iteration, ev.kind, ev.payload_elems * elem_bytes, ev.group_size, ev.phase))
        for _ in range(ev.repeat):
            yield line


def write_trace(path: str | Path, lines: Iterable[str]) -> None:
    with open(path, "w") as fh:
        for line in lines:
            fh.write(line + "\n")
