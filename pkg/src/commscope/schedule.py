"""Per-iteration collective event streams for each parallelism scheme."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .analytic import (
    layer_param_count,
    non_layer_param_count,
    param_count,
    tally,
    tensor_allreduce_calls,
)
from .core import (
    CollectiveEvent,
    CollectiveKind,
    CommSummary,
    ConfigError,
    ModelConfig,
    ParallelLayout,
    Phase,
    ZeroStage,
    check_compatible,
)
from .oracle import param_tensors

AR = CollectiveKind.ALLREDUCE
AG = CollectiveKind.ALLGATHER
RS = CollectiveKind.REDUCE_SCATTER

PHASE_ORDER = list(Phase)


class BucketTooSmall(ConfigError):
    pass


class Granularity(enum.Enum):
    PER_LAYER = "per_layer"
    PER_TENSOR = "per_tensor"


@dataclass(frozen=True)
class ScheduleOptions:
    include_init_broadcast: bool = True
    recompute: bool = True
    bucket_elems: int = 500_000_000
    zero3_granularity: Granularity = Granularity.PER_LAYER

    def __post_init__(self):
        if isinstance(self.bucket_elems, bool) or not isinstance(self.bucket_elems, int) or self.bucket_elems < 1:
            raise BucketTooSmall("bucket_elems", f"must be an integer >= 1, got {self.bucket_elems!r}")
        object.__setattr__(self, "zero3_granularity", Granularity(self.zero3_granularity))


def bucketed(kind: CollectiveKind, total: int, bucket: int, group: int, phase: Phase) -> list[CollectiveEvent]:
    """Split ``total`` elements into full buckets plus one remainder call."""
    full, rest = divmod(total, bucket)
    events = []
    if full:
        events.append(CollectiveEvent(kind, bucket, group, phase, repeat=full))
    if rest:
        events.append(CollectiveEvent(kind, rest, group, phase))
    return events


def _zero3_gathers(cfg: ModelConfig, layers: int, group: int, granularity: Granularity) -> list[CollectiveEvent]:
    if granularity is Granularity.PER_TENSOR:
        return [
            CollectiveEvent(AG, math.prod(shape), group, Phase.FORWARD)
            for _, shape in param_tensors(cfg)
        ]
    events = [CollectiveEvent(AG, non_layer_param_count(cfg), group, Phase.FORWARD)]
    per_layer = layer_param_count(cfg)
    events.extend(CollectiveEvent(AG, per_layer, group, Phase.FORWARD) for _ in range(layers))
    return events


def _tensor_events(cfg: ModelConfig, layers: int, t: int, recompute: bool) -> list[CollectiveEvent]:
    m = cfg.tokens_per_microbatch
    # embedding allreduce, then two per layer for each pass
    events = [CollectiveEvent(AR, m, t, Phase.FORWARD)]
    passes = [Phase.FORWARD, Phase.RECOMPUTE, Phase.BACKWARD] if recompute else [Phase.FORWARD, Phase.BACKWARD]
    for phase in passes:
        events.extend(CollectiveEvent(AR, m, t, phase) for _ in range(2 * layers))
    assert len(events) == tensor_allreduce_calls(layers, recompute)
    return events


def _pipeline_events(cfg: ModelConfig, p: int, microbatches: int) -> list[CollectiveEvent]:
    m = cfg.tokens_per_microbatch
    events = []
    for _ in range(microbatches):
        for _boundary in range(p - 1):
            events.append(CollectiveEvent(CollectiveKind.SEND, m, 2, Phase.FORWARD))
            events.append(CollectiveEvent(CollectiveKind.RECV, m, 2, Phase.FORWARD))
    for _ in range(microbatches):
        for _boundary in range(p - 1):
            events.append(CollectiveEvent(CollectiveKind.SEND, m, 2, Phase.BACKWARD))
            events.append(CollectiveEvent(CollectiveKind.RECV, m, 2, Phase.BACKWARD))
    return events


def build_schedule(
    cfg: ModelConfig,
    layout: ParallelLayout,
    opts: ScheduleOptions | None = None,
) -> list[CollectiveEvent]:
    """Expand a model and layout into the ordered events of one training iteration.

    Groups of size one never communicate, so components whose group
    degenerates to a single rank emit nothing.
    """
    opts = opts or ScheduleOptions()
    check_compatible(cfg, layout)
    t, p, dp = layout.tensor, layout.pipeline, layout.data_parallel
    P = param_count(cfg)
    by_phase: dict[Phase, list[CollectiveEvent]] = {phase: [] for phase in Phase}

    if opts.include_init_broadcast and layout.devices > 1:
        by_phase[Phase.INIT].append(CollectiveEvent(CollectiveKind.BROADCAST, P, layout.devices, Phase.INIT))

    stage = layout.zero_stage
    if dp > 1:
        if stage is ZeroStage.NONE:
            by_phase[Phase.BACKWARD] += bucketed(AR, P, opts.bucket_elems, dp, Phase.BACKWARD)
        else:
            if stage is ZeroStage.ZERO3:
                by_phase[Phase.FORWARD] += _zero3_gathers(cfg, cfg.layers, dp, opts.zero3_granularity)
            by_phase[Phase.BACKWARD] += bucketed(RS, P, opts.bucket_elems, dp, Phase.BACKWARD)
            by_phase[Phase.OPTIMIZER_STEP] += bucketed(AG, P, opts.bucket_elems, dp, Phase.OPTIMIZER_STEP)

    if t > 1:
        for ev in _tensor_events(cfg, cfg.layers // p, t, opts.recompute):
            by_phase[ev.phase].append(ev)

    if p > 1:
        for ev in _pipeline_events(cfg, p, layout.num_microbatches):
            by_phase[ev.phase].append(ev)

    return [ev for phase in PHASE_ORDER for ev in by_phase[phase]]


def summarize(
    events: Iterable[CollectiveEvent],
    elem_bytes: int = 2,
    skip_phases: Sequence[Phase] = (),
) -> CommSummary:
    skip = set(skip_phases)
    calls = (
        (ev.kind, ev.payload_elems * elem_bytes, ev.group_size, ev.repeat)
        for ev in events
        if ev.phase not in skip
    )
    return tally(calls, elem_bytes)
