"""Closed-form per-iteration communication volumes.

All arithmetic is exact (``int`` / ``Fraction``); nothing is rounded until
it is rendered.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

from .core import (
    CollectiveKind,
    CommSummary,
    ConfigError,
    ModelConfig,
    ParallelLayout,
    SummaryBuilder,
    ZeroStage,
    check_compatible,
)

AR = CollectiveKind.ALLREDUCE
AG = CollectiveKind.ALLGATHER
RS = CollectiveKind.REDUCE_SCATTER


class Scheme(enum.Enum):
    DDP = "DDP"
    ZERO1 = "Zero1"
    ZERO2 = "Zero2"
    ZERO3 = "Zero3"
    PIPELINE = "Pipeline"
    TENSOR = "Tensor"
    THREE_D = "ThreeD"

    @classmethod
    def for_stage(cls, stage: ZeroStage) -> "Scheme":
        return [cls.DDP, cls.ZERO1, cls.ZERO2, cls.ZERO3][int(stage)]


@dataclass(frozen=True)
class VolumePrediction:
    scheme: Scheme
    per_kind_elems: Mapping[CollectiveKind, Fraction]
    components: Mapping[Scheme, "VolumePrediction"] = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        for kind, value in self.per_kind_elems.items():
            if value < 0:
                raise ValueError(f"negative volume for {kind.label}: {value}")

    def __getitem__(self, kind: CollectiveKind) -> Fraction:
        return Fraction(self.per_kind_elems.get(kind, 0))

    def kinds(self) -> list[CollectiveKind]:
        return [k for k in CollectiveKind if k in self.per_kind_elems]

    @property
    def total_elems(self) -> Fraction:
        return sum((Fraction(v) for v in self.per_kind_elems.values()), Fraction(0))


# ---------------------------------------------------------------------------
# parameter count


def layer_param_count(cfg: ModelConfig) -> int:
    """Parameters in one transformer layer: 4h^2 attention, 2xh^2 MLP, 8h layernorm."""
    h = cfg.hidden
    return (4 + 2 * cfg.mlp_expansion) * h * h + 8 * h


def non_layer_param_count(cfg: ModelConfig) -> int:
    """Embedding (+ unembedding), position embedding and final layernorm."""
    h = cfg.hidden
    embeddings = cfg.vocab_size * h * (1 if cfg.tied_embeddings else 2)
    return embeddings + cfg.seq_len * h + 2 * h


def param_count(cfg: ModelConfig) -> int:
    return non_layer_param_count(cfg) + cfg.layers * layer_param_count(cfg)


# ---------------------------------------------------------------------------
# collective volume factors


def collective_volume(kind: CollectiveKind, m, g: int) -> Fraction:
    """Per-rank volume, in elements, of one call with logical payload ``m`` over ``g`` ranks.

    Allreduce costs 2m(g-1)/g; Allgather, ReduceScatter and Reduce cost
    m(g-1)/g; a broadcast or a point-to-point transfer moves the payload once.
    """
    m = Fraction(m)
    if m < 0:
        raise ValueError(f"payload must be >= 0, got {m}")
    if g < 1:
        raise ValueError(f"group size must be >= 1, got {g}")
    if kind is AR:
        return 2 * m * (g - 1) / g
    if kind in (AG, RS, CollectiveKind.REDUCE):
        return m * (g - 1) / g
    return m


# ---------------------------------------------------------------------------
# per-scheme volumes


def _dp_component(cfg: ModelConfig, stage: ZeroStage, g: int) -> VolumePrediction:
    P = param_count(cfg)
    share = Fraction(P * (g - 1), g)
    if stage is ZeroStage.NONE:
        per_kind = {AR: 2 * share}
    elif stage is ZeroStage.ZERO3:
        per_kind = {RS: share, AG: 2 * share}
    else:
        per_kind = {RS: share, AG: share}
    return VolumePrediction(Scheme.for_stage(stage), per_kind)


def ddp_volume(cfg: ModelConfig, layout: ParallelLayout) -> VolumePrediction:
    if layout.zero_stage is not ZeroStage.NONE:
        raise ConfigError("zero_stage", "ddp_volume needs zero_stage none; use zero_volume")
    return _dp_component(cfg, ZeroStage.NONE, layout.data_parallel)


def zero_volume(cfg: ModelConfig, layout: ParallelLayout) -> VolumePrediction:
    if layout.zero_stage is ZeroStage.NONE:
        raise ConfigError("zero_stage", "zero_volume needs a ZeRO stage; use ddp_volume")
    return _dp_component(cfg, layout.zero_stage, layout.data_parallel)


def pipeline_volume(cfg: ModelConfig, layout: ParallelLayout) -> VolumePrediction:
    """P2P volume across all stage boundaries.

    Each of the p-1 boundaries carries one b*s*h activation forward and one
    b*s*h gradient backward per micro-batch, so sends and receives each
    total 2bsh(p-1) with a single micro-batch.
    """
    per_direction = 2 * cfg.tokens_per_microbatch * (layout.pipeline - 1) * layout.num_microbatches
    notes = ()
    if layout.num_microbatches > 1:
        notes = (f"P2P volume scaled linearly by num_microbatches={layout.num_microbatches}",)
    return VolumePrediction(
        Scheme.PIPELINE,
        {CollectiveKind.SEND: Fraction(per_direction), CollectiveKind.RECV: Fraction(per_direction)},
        notes=notes,
    )


def tensor_allreduce_calls(layers: int, recompute: bool = True) -> int:
    # 2 forward + 2 recompute + 2 backward per layer, plus the embedding
    return (6 if recompute else 4) * layers + 1


def tensor_volume(
    cfg: ModelConfig,
    layout: ParallelLayout,
    recompute: bool = True,
    layers: int | None = None,
) -> VolumePrediction:
    L = cfg.layers if layers is None else layers
    t = layout.tensor
    calls = tensor_allreduce_calls(L, recompute)
    volume = calls * collective_volume(AR, cfg.tokens_per_microbatch, t)
    return VolumePrediction(Scheme.TENSOR, {AR: volume})


def threed_volume(cfg: ModelConfig, layout: ParallelLayout, recompute: bool = True) -> VolumePrediction:
    """Additive composition: TP over L/p layers + PP + the data-parallel component."""
    check_compatible(cfg, layout)
    parts = {
        Scheme.TENSOR: tensor_volume(cfg, layout, recompute, layers=cfg.layers // layout.pipeline),
        Scheme.PIPELINE: pipeline_volume(cfg, layout),
    }
    dp = _dp_component(cfg, layout.zero_stage, layout.data_parallel)
    parts[dp.scheme] = dp
    per_kind: dict[CollectiveKind, Fraction] = {}
    for part in parts.values():
        for kind, value in part.per_kind_elems.items():
            per_kind[kind] = per_kind.get(kind, Fraction(0)) + value
    per_kind = {k: per_kind[k] for k in CollectiveKind if k in per_kind}
    notes = tuple(n for part in parts.values() for n in part.notes)
    return VolumePrediction(Scheme.THREE_D, per_kind, components=parts, notes=notes)


def scheme_of(layout: ParallelLayout) -> Scheme:
    """The pure scheme a layout reduces to, or ThreeD for real compositions."""
    t, p, dp = layout.tensor, layout.pipeline, layout.data_parallel
    if t == 1 and p == 1:
        return Scheme.for_stage(layout.zero_stage)
    if dp == 1 and layout.zero_stage is ZeroStage.NONE:
        if p == 1:
            return Scheme.TENSOR
        if t == 1:
            return Scheme.PIPELINE
    return Scheme.THREE_D


def predict(cfg: ModelConfig, layout: ParallelLayout, recompute: bool = True) -> VolumePrediction:
    """Prediction for any layout, labelled with the simplest scheme that describes it."""
    scheme = scheme_of(layout)
    if scheme in (Scheme.DDP, Scheme.ZERO1, Scheme.ZERO2, Scheme.ZERO3):
        check_compatible(cfg, layout)
        return _dp_component(cfg, layout.zero_stage, layout.data_parallel)
    full = threed_volume(cfg, layout, recompute)
    if scheme is Scheme.THREE_D:
        return full
    part = full.components[scheme]
    return VolumePrediction(scheme, part.per_kind_elems, notes=full.notes)


# ---------------------------------------------------------------------------
# aggregation helper shared by schedule and trace summaries


def tally(calls: Iterable[tuple[CollectiveKind, int, int, int]], elem_bytes: int = 2) -> CommSummary:
    """Summarize ``(kind, payload_bytes, group_size, count)`` tuples.

    The wire volume of each call is ``collective_volume`` of its payload
    expressed in elements.
    """
    builder = SummaryBuilder(elem_bytes)
    for kind, payload_bytes, group_size, count in calls:
        m = Fraction(payload_bytes, elem_bytes)
        builder.add(kind, payload_bytes, collective_volume(kind, m, group_size), count)
    return builder.build()
