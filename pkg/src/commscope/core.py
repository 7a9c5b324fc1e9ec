"""Domain types shared across the package.

Every quantity here is a plain, immutable value. Volumes are counted in
elements (parameters / activations); bytes only appear at the reporting
boundary via ``ModelConfig.elem_bytes``.
"""

from __future__ import annotations

import enum
import sys
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class CommscopeError(ValueError):
    """Base class for every validation error raised by the package."""


class ConfigError(CommscopeError):
    def __init__(self, field_name: str, message: str):
        self.field_name = field_name
        super().__init__(f"{field_name}: {message}")


class NonDivisibleLayout(ConfigError):
    pass


class LayersNotDivisible(ConfigError):
    pass


class HeadsNotDivisible(ConfigError):
    pass


class CollectiveKind(enum.Enum):
    # declaration order is the canonical report order
    ALLREDUCE = "allreduce"
    ALLGATHER = "allgather"
    REDUCE_SCATTER = "reducescatter"
    REDUCE = "reduce"
    BROADCAST = "broadcast"
    SEND = "send"
    RECV = "recv"

    @property
    def label(self) -> str:
        return _KIND_LABELS[self]

    @property
    def is_p2p(self) -> bool:
        return self in (CollectiveKind.SEND, CollectiveKind.RECV)


_KIND_LABELS = {
    CollectiveKind.ALLREDUCE: "Allreduce",
    CollectiveKind.ALLGATHER: "Allgather",
    CollectiveKind.REDUCE_SCATTER: "ReduceScatter",
    CollectiveKind.REDUCE: "Reduce",
    CollectiveKind.BROADCAST: "Broadcast",
    CollectiveKind.SEND: "Send",
    CollectiveKind.RECV: "Recv",
}

RING_FAMILY = frozenset(
    {CollectiveKind.ALLREDUCE, CollectiveKind.ALLGATHER, CollectiveKind.REDUCE_SCATTER}
)


class Phase(enum.Enum):
    INIT = "init"
    FORWARD = "forward"
    RECOMPUTE = "recompute"
    BACKWARD = "backward"
    OPTIMIZER_STEP = "optimizer_step"


class ZeroStage(enum.IntEnum):
    NONE = 0
    ZERO1 = 1
    ZERO2 = 2
    ZERO3 = 3

    @classmethod
    def coerce(cls, value: Any) -> "ZeroStage":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            key = value.strip().lower().replace("-", "").replace("_", "")
            names = {"none": 0, "ddp": 0, "0": 0, "zero1": 1, "1": 1,
                     "zero2": 2, "2": 2, "zero3": 3, "3": 3}
            if key in names:
                return cls(names[key])
        elif isinstance(value, int) and not isinstance(value, bool) and 0 <= value <= 3:
            return cls(value)
        raise ConfigError("zero_stage", f"expected one of none/0/1/2/3, got {value!r}")

    @property
    def label(self) -> str:
        return "DDP" if self is ZeroStage.NONE else f"Zero{int(self)}"


def _check_count(name: str, value: Any, minimum: int = 1) -> None:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(name, f"expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(name, f"must be >= {minimum}, got {value}")


@dataclass(frozen=True)
class ModelConfig:
    """Transformer hyperparameters that drive every volume formula."""

    vocab_size: int
    hidden: int
    layers: int
    seq_len: int
    micro_batch: int
    attn_heads: int
    mlp_expansion: int = 4
    elem_bytes: int = 2
    tied_embeddings: bool = False

    def __post_init__(self):
        _check_count("vocab_size", self.vocab_size)
        _check_count("hidden", self.hidden)
        # zero layers is the degenerate embeddings-only model
        _check_count("layers", self.layers, minimum=0)
        _check_count("seq_len", self.seq_len)
        _check_count("micro_batch", self.micro_batch)
        _check_count("attn_heads", self.attn_heads)
        _check_count("mlp_expansion", self.mlp_expansion)
        _check_count("elem_bytes", self.elem_bytes)
        if self.elem_bytes not in (1, 2, 4, 8):
            raise ConfigError("elem_bytes", f"must be one of 1, 2, 4, 8, got {self.elem_bytes}")
        if not isinstance(self.tied_embeddings, bool):
            raise ConfigError("tied_embeddings", f"expected a boolean, got {self.tied_embeddings!r}")
        if self.hidden % self.attn_heads:
            raise HeadsNotDivisible(
                "attn_heads",
                f"hidden={self.hidden} is not divisible by attn_heads={self.attn_heads}",
            )

    @property
    def tokens_per_microbatch(self) -> int:
        """b*s*h, the activation message size exchanged by TP and PP."""
        return self.micro_batch * self.seq_len * self.hidden

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ModelConfig":
        return cls(**_strict_kwargs(cls, data))

    def replace(self, **changes) -> "ModelConfig":
        return _replace(self, changes)


@dataclass(frozen=True)
class ParallelLayout:
    """Device grid: d devices split into t-way tensor and p-way pipeline groups."""

    devices: int
    tensor: int = 1
    pipeline: int = 1
    zero_stage: ZeroStage = ZeroStage.NONE
    num_microbatches: int = 1

    def __post_init__(self):
        _check_count("devices", self.devices)
        _check_count("tensor", self.tensor)
        _check_count("pipeline", self.pipeline)
        _check_count("num_microbatches", self.num_microbatches)
        object.__setattr__(self, "zero_stage", ZeroStage.coerce(self.zero_stage))
        model_parallel = self.tensor * self.pipeline
        if self.devices % model_parallel:
            raise NonDivisibleLayout(
                "devices",
                f"devices={self.devices} is not divisible by tensor*pipeline={model_parallel}",
            )
        if self.zero_stage is ZeroStage.ZERO3 and self.pipeline > 1:
            raise ConfigError("zero_stage", "ZeRO-3 cannot be combined with pipeline > 1")

    @property
    def data_parallel(self) -> int:
        return derive_data_parallel(self)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ParallelLayout":
        return cls(**_strict_kwargs(cls, data))

    def replace(self, **changes) -> "ParallelLayout":
        return _replace(self, changes)


def derive_data_parallel(layout: ParallelLayout) -> int:
    model_parallel = layout.tensor * layout.pipeline
    if layout.devices % model_parallel:
        raise NonDivisibleLayout(
            "devices",
            f"devices={layout.devices} is not divisible by tensor*pipeline={model_parallel}",
        )
    return layout.devices // model_parallel


def check_compatible(cfg: ModelConfig, layout: ParallelLayout) -> None:
    """Raise if the model cannot be split over the layout's TP/PP groups."""
    if cfg.attn_heads % layout.tensor:
        raise HeadsNotDivisible(
            "tensor",
            f"attn_heads={cfg.attn_heads} is not divisible by tensor={layout.tensor}",
        )
    if cfg.layers % layout.pipeline:
        raise LayersNotDivisible(
            "pipeline",
            f"layers={cfg.layers} is not divisible by pipeline={layout.pipeline}",
        )


@dataclass(frozen=True)
class CollectiveEvent:
    """One (or ``repeat`` identical) communication calls in an iteration."""

    kind: CollectiveKind
    payload_elems: int
    group_size: int
    phase: Phase
    repeat: int = 1

    def __post_init__(self):
        _check_count("payload_elems", self.payload_elems, minimum=0)
        _check_count("group_size", self.group_size)
        _check_count("repeat", self.repeat)
        if self.kind.is_p2p and self.group_size != 2:
            raise ConfigError("group_size", f"{self.kind.label} events need group_size 2")


def size_bucket(nbytes: int) -> int:
    """Lower edge of the power-of-two bucket [2^k, 2^(k+1)) holding ``nbytes``; 0 for empty messages."""
    return 0 if nbytes <= 0 else 1 << (nbytes.bit_length() - 1)


@dataclass(frozen=True)
class KindStats:
    call_count: int = 0
    payload_bytes: int = 0
    volume_elems: Fraction = Fraction(0)
    volume_bytes: Fraction = Fraction(0)
    histogram: Mapping[int, int] = field(default_factory=dict)


@dataclass(frozen=True)
class CommSummary:
    """Per-kind aggregation of an event stream or a parsed trace.

    ``payload_bytes`` sums the logical message sizes as issued;
    ``volume_elems`` sums the per-rank wire volume implied by each call's
    group size. The histogram buckets logical message bytes.
    """

    per_kind: Mapping[CollectiveKind, KindStats]
    elem_bytes: int = 2

    def __getitem__(self, kind: CollectiveKind) -> KindStats:
        return self.per_kind.get(kind, KindStats())

    def kinds(self) -> list[CollectiveKind]:
        return [k for k in CollectiveKind if k in self.per_kind]

    @property
    def total_volume_elems(self) -> Fraction:
        return sum((s.volume_elems for s in self.per_kind.values()), Fraction(0))

    @property
    def total_calls(self) -> int:
        return sum(s.call_count for s in self.per_kind.values())

    @property
    def is_empty(self) -> bool:
        return not self.per_kind


class SummaryBuilder:
    """Accumulates calls into a ``CommSummary``; volumes are supplied by the caller."""

    def __init__(self, elem_bytes: int = 2):
        self.elem_bytes = elem_bytes
        self._acc: dict[CollectiveKind, list] = {}

    def add(self, kind: CollectiveKind, payload_bytes: int, volume_elems: Fraction, count: int = 1):
        acc = self._acc.setdefault(kind, [0, 0, Fraction(0), {}])
        acc[0] += count
        acc[1] += payload_bytes * count
        acc[2] += volume_elems * count
        bucket = size_bucket(payload_bytes)
        acc[3][bucket] = acc[3].get(bucket, 0) + count

    def build(self) -> CommSummary:
        per_kind = {}
        for kind in CollectiveKind:
            if kind not in self._acc:
                continue
            calls, payload, volume, hist = self._acc[kind]
            per_kind[kind] = KindStats(
                call_count=calls,
                payload_bytes=payload,
                volume_elems=volume,
                volume_bytes=volume * self.elem_bytes,
                histogram=dict(sorted(hist.items())),
            )
        return CommSummary(per_kind=per_kind, elem_bytes=self.elem_bytes)


def _strict_kwargs(cls, data: Mapping[str, Any]) -> dict:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(unknown[0], f"unknown key for {cls.__name__} (allowed: {', '.join(sorted(known))})")
    return dict(data)


def _replace(obj, changes):
    from dataclasses import replace

    return replace(obj, **changes)


def _read_toml(path: str | Path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"not a valid config file: {exc}") from None


def load_model_config(path: str | Path) -> ModelConfig:
    return ModelConfig.from_mapping(_read_toml(path))


def load_layout(path: str | Path) -> ParallelLayout:
    return ParallelLayout.from_mapping(_read_toml(path))


FIXTURE_DIR = Path(__file__).parent / "fixtures"


def fixture_names() -> list[str]:
    return sorted(p.stem for p in FIXTURE_DIR.glob("*.toml"))


def load_fixture(name: str) -> ModelConfig:
    path = FIXTURE_DIR / f"{name.lower()}.toml"
    if not path.exists():
        raise ConfigError("model", f"no fixture named {name!r} (have: {', '.join(fixture_names())})")
    return load_model_config(path)
