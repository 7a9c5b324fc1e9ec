"""Analysis products: theory-vs-observed comparison, sweeps, α-β time estimates, rendering."""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Sequence

from .analytic import VolumePrediction, collective_volume, predict
from .core import (
    CollectiveEvent,
    CollectiveKind,
    CommSummary,
    CommscopeError,
    ConfigError,
    ModelConfig,
    ParallelLayout,
    _read_toml,
)
from .oracle import ValidationTable
from .traceio import parse_kind

MiB = 1 << 20
SCHEMA_VERSION = 1
DEFAULT_TOLERANCE = 0.05


class Convention(enum.Enum):
    """How a trace's ``bytes`` column relates to the modeled per-rank volume."""

    LOGICAL = "logical"  # logged size is the message size m
    WIRE = "wire"  # logged size is already the per-rank wire volume


class MissingKind(CommscopeError):
    def __init__(self, kinds: Sequence[CollectiveKind]):
        self.kinds = tuple(kinds)
        super().__init__("unmodeled traffic for " + ", ".join(k.label for k in kinds))


# ---------------------------------------------------------------------------
# comparison


@dataclass(frozen=True)
class ComparisonRow:
    kind: CollectiveKind
    predicted: Fraction
    observed: Fraction
    status: str  # ok | drift | unmodeled | negligible | excluded

    @property
    def ratio(self) -> Fraction | None:
        """observed / predicted; None when nothing was predicted."""
        return None if self.predicted == 0 else self.observed / self.predicted

    @property
    def residual(self) -> Fraction:
        return self.observed - self.predicted

    @property
    def flagged(self) -> bool:
        return self.status in ("drift", "unmodeled")


@dataclass(frozen=True)
class Comparison:
    rows: tuple[ComparisonRow, ...]
    tolerance: float
    convention: Convention
    notes: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return not any(r.flagged for r in self.rows)

    @property
    def unmodeled(self) -> list[CollectiveKind]:
        return [r.kind for r in self.rows if r.status == "unmodeled"]

    def row(self, kind: CollectiveKind) -> ComparisonRow:
        for r in self.rows:
            if r.kind is kind:
                return r
        raise KeyError(kind)


def ratio_flagged(ratio: Fraction, tolerance: float) -> bool:
    """Symmetric check: r is flagged exactly when 1/r is."""
    if ratio <= 0:
        return True
    bound = 1 + Fraction(tolerance)
    return max(ratio, 1 / ratio) > bound


def observed_volume(summary: CommSummary, kind: CollectiveKind, convention: Convention) -> Fraction:
    stats = summary[kind]
    if convention is Convention.WIRE:
        return Fraction(stats.payload_bytes, summary.elem_bytes)
    return stats.volume_elems


def compare(
    predicted: VolumePrediction,
    observed: CommSummary,
    convention: Convention | str = Convention.LOGICAL,
    tolerance: float = DEFAULT_TOLERANCE,
    exclude: Sequence[CollectiveKind] = (CollectiveKind.BROADCAST,),
    strict: bool = False,
) -> Comparison:
    """Per-kind observed/predicted ratios against a symmetric relative tolerance.

    Broadcast is excluded by default: start-of-training parameter
    distribution is outside the per-iteration model and is only listed.
    Observed kinds the model does not predict are ``unmodeled`` when they
    exceed ``tolerance`` of the total predicted volume.
    """
    convention = Convention(convention)
    if tolerance < 0:
        raise ConfigError("tolerance", f"must be >= 0, got {tolerance}")
    total_predicted = predicted.total_elems
    rows = []
    for kind in CollectiveKind:
        pred = predicted[kind]
        obs = observed_volume(observed, kind, convention)
        if kind not in predicted.per_kind_elems and kind not in observed.per_kind:
            continue
        if kind in exclude:
            status = "excluded"
        elif pred == 0:
            if obs == 0:
                status = "ok"
            elif obs > Fraction(tolerance) * total_predicted:
                status = "unmodeled"
            else:
                status = "negligible"
        else:
            status = "drift" if ratio_flagged(obs / pred, tolerance) else "ok"
        rows.append(ComparisonRow(kind, pred, obs, status))
    result = Comparison(tuple(rows), tolerance, convention, notes=predicted.notes)
    if strict and result.unmodeled:
        raise MissingKind(result.unmodeled)
    return result


# ---------------------------------------------------------------------------
# sweeps

SWEEP_VARIABLES = {
    "seq": "seq", "s": "seq", "seq_len": "seq",
    "devices": "devices", "d": "devices",
    "tensor": "tensor", "t": "tensor", "tp": "tensor",
    "pipeline": "pipeline", "p": "pipeline", "pp": "pipeline",
    "zero": "zero_stage", "zero_stage": "zero_stage",
}


@dataclass(frozen=True)
class SweepRow:
    value: Any
    prediction: VolumePrediction | None
    error: str | None = None
    delta: Mapping[CollectiveKind, Fraction] = field(default_factory=dict)
    ratio: Mapping[CollectiveKind, Fraction | None] = field(default_factory=dict)


@dataclass(frozen=True)
class Sweep:
    variable: str
    rows: tuple[SweepRow, ...]

    def column(self, kind: CollectiveKind) -> list[Fraction | None]:
        return [None if r.prediction is None else r.prediction[kind] for r in self.rows]


def _apply(cfg: ModelConfig, layout: ParallelLayout, variable: str, value):
    if variable == "seq":
        return cfg.replace(seq_len=value), layout
    return cfg, layout.replace(**{variable: value})


def sweep(
    cfg: ModelConfig,
    layout: ParallelLayout,
    variable: str,
    values: Sequence,
    recompute: bool = True,
) -> Sweep:
    """One prediction per value; invalid points become error rows and the sweep continues."""
    if variable not in SWEEP_VARIABLES:
        raise ConfigError("var", f"unknown sweep variable {variable!r} (choose from {', '.join(sorted(set(SWEEP_VARIABLES.values())))})")
    if not values:
        raise ConfigError("values", "sweep needs at least one value")
    var = SWEEP_VARIABLES[variable]
    rows = []
    prev: VolumePrediction | None = None
    for value in values:
        try:
            c, l = _apply(cfg, layout, var, value)
            pred = predict(c, l, recompute)
        except CommscopeError as exc:
            rows.append(SweepRow(value, None, str(exc)))
            continue
        delta, ratio = {}, {}
        if prev is not None:
            for kind in CollectiveKind:
                if kind in pred.per_kind_elems or kind in prev.per_kind_elems:
                    delta[kind] = pred[kind] - prev[kind]
                    ratio[kind] = None if prev[kind] == 0 else pred[kind] / prev[kind]
        rows.append(SweepRow(value, pred, None, delta, ratio))
        prev = pred
    return Sweep(var, tuple(rows))


# ---------------------------------------------------------------------------
# alpha-beta time estimates


@dataclass(frozen=True)
class AlphaBetaFabric:
    """Latency/bandwidth cost model: each call costs alpha + MiB * beta microseconds."""

    name: str
    alpha_us: float
    beta_us_per_MiB: float
    alpha_overrides: Mapping[CollectiveKind, float] = field(default_factory=dict)
    illustrative: bool = False

    def __post_init__(self):
        if self.alpha_us < 0:
            raise ConfigError("alpha_us", f"must be >= 0, got {self.alpha_us}")
        if self.beta_us_per_MiB <= 0:
            raise ConfigError("beta_us_per_MiB", f"must be > 0, got {self.beta_us_per_MiB}")
        overrides = {}
        for kind, alpha in dict(self.alpha_overrides).items():
            kind = kind if isinstance(kind, CollectiveKind) else parse_kind(str(kind))
            if alpha < 0:
                raise ConfigError(f"alpha_overrides.{kind.value}", f"must be >= 0, got {alpha}")
            overrides[kind] = alpha
        object.__setattr__(self, "alpha_overrides", overrides)

    def alpha(self, kind: CollectiveKind) -> float:
        return self.alpha_overrides.get(kind, self.alpha_us)


# Placeholder numbers with the right orders of magnitude; not measurements.
FABRIC_PRESETS = {
    "intra-node-illustrative": AlphaBetaFabric("intra-node-illustrative", 5.0, 20.0, illustrative=True),
    "inter-node-illustrative": AlphaBetaFabric(
        "inter-node-illustrative", 20.0, 40.0,
        alpha_overrides={CollectiveKind.RECV: 30.0}, illustrative=True,
    ),
}


def load_fabric(path_or_name: str) -> AlphaBetaFabric:
    if path_or_name in FABRIC_PRESETS:
        return FABRIC_PRESETS[path_or_name]
    path = Path(path_or_name)
    if not path.exists():
        raise ConfigError("fabric", f"no fabric file or preset named {path_or_name!r} (presets: {', '.join(FABRIC_PRESETS)})")
    data = _read_toml(path)
    allowed = {"name", "alpha_us", "beta_us_per_MiB", "alpha_overrides", "illustrative"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(unknown[0], "unknown key in fabric file")
    data.setdefault("name", path.stem)
    for key in ("alpha_us", "beta_us_per_MiB"):
        if key not in data:
            raise ConfigError(key, "missing from fabric file")
    return AlphaBetaFabric(**data)


@dataclass(frozen=True)
class KindTime:
    calls: int
    payload_bytes: int
    latency_us: Fraction
    bandwidth_us: Fraction

    @property
    def total_us(self) -> Fraction:
        return self.latency_us + self.bandwidth_us


@dataclass(frozen=True)
class TimeEstimate:
    fabric: AlphaBetaFabric
    per_kind: Mapping[CollectiveKind, KindTime]
    compute_us: float | None = None

    @property
    def total_us(self) -> Fraction:
        return sum((t.total_us for t in self.per_kind.values()), Fraction(0))

    @property
    def comm_fraction(self) -> Fraction | None:
        """Share of (communication + compute) spent communicating, without overlap."""
        if self.compute_us is None:
            return None
        denom = self.total_us + Fraction(self.compute_us)
        return Fraction(0) if denom == 0 else self.total_us / denom


def estimate_time(
    source: CommSummary | Sequence[CollectiveEvent],
    fabric: AlphaBetaFabric,
    compute_us: float | None = None,
    elem_bytes: int = 2,
) -> TimeEstimate:
    """Sum alpha + payload_MiB * beta over every call, per collective kind."""
    if not isinstance(source, CommSummary):
        from .schedule import summarize

        source = summarize(source, elem_bytes)
    beta = Fraction(fabric.beta_us_per_MiB)
    per_kind = {}
    for kind in source.kinds():
        stats = source[kind]
        per_kind[kind] = KindTime(
            calls=stats.call_count,
            payload_bytes=stats.payload_bytes,
            latency_us=stats.call_count * Fraction(fabric.alpha(kind)),
            bandwidth_us=Fraction(stats.payload_bytes, MiB) * beta,
        )
    return TimeEstimate(fabric, per_kind, compute_us)


# ---------------------------------------------------------------------------
# rendering


def _num(x) -> int | float | None:
    if x is None:
        return None
    x = Fraction(x)
    return int(x) if x.denominator == 1 else float(x)


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (Fraction, int)) and not isinstance(x, bool):
        x = Fraction(x)
        if x.denominator == 1:
            return str(x.numerator)
        return f"{float(x):.3f}"
    if isinstance(x, float):
        return f"{x:.2f}"
    if isinstance(x, enum.Enum):
        return getattr(x, "label", x.value)
    return str(x)


def _pct(part, total) -> float:
    return 0.0 if total == 0 else round(float(Fraction(part) / Fraction(total) * 100), 2)


@dataclass
class _Doc:
    schema: str
    headers: list[str]
    rows: list[list[Any]]
    meta: dict = field(default_factory=dict)
    footer: list[str] = field(default_factory=list)


def _prediction_doc(pred: VolumePrediction, elem_bytes: int) -> _Doc:
    rows = []
    total = pred.total_elems
    parts = pred.components or {pred.scheme: pred}
    for scheme, part in parts.items():
        for kind in part.kinds():
            v = part[kind]
            rows.append([scheme.value, kind.label, v, v * elem_bytes, _pct(v, total)])
    rows.append(["total", "", total, total * elem_bytes, 100.0 if total else 0.0])
    return _Doc(
        "commscope.prediction",
        ["component", "kind", "volume_elems", "volume_bytes", "percent"],
        rows,
        meta={"scheme": pred.scheme.value, "notes": list(pred.notes)},
        footer=[f"note: {n}" for n in pred.notes],
    )


def _summary_doc(summary: CommSummary, view: str = "breakdown") -> _Doc:
    if view == "histogram":
        rows = []
        for kind in summary.kinds():
            for lo, count in summary[kind].histogram.items():
                rows.append([kind.label, lo, 1 if lo == 0 else 2 * lo, count])
        return _Doc("commscope.histogram", ["kind", "bucket_lo_bytes", "bucket_hi_bytes", "count"], rows)
    total_v = summary.total_volume_elems
    total_c = summary.total_calls
    rows = []
    for kind in summary.kinds():
        s = summary[kind]
        rows.append([kind.label, s.call_count, s.payload_bytes, s.volume_elems, s.volume_bytes,
                     _pct(s.volume_elems, total_v), _pct(s.call_count, total_c)])
    return _Doc(
        "commscope.breakdown",
        ["kind", "calls", "payload_bytes", "volume_elems", "volume_bytes", "volume_pct", "calls_pct"],
        rows,
        meta={"elem_bytes": summary.elem_bytes},
    )


def _comparison_doc(cmp: Comparison) -> _Doc:
    rows = [[r.kind.label, r.predicted, r.observed, r.ratio, r.residual, r.status] for r in cmp.rows]
    footer = [f"tolerance: {cmp.tolerance:g} ({cmp.convention.value} convention)",
              f"result: {'PASS' if cmp.passed else 'FAIL'}"]
    footer += [f"note: {n}" for n in cmp.notes]
    return _Doc(
        "commscope.comparison",
        ["kind", "predicted_elems", "observed_elems", "ratio", "residual_elems", "status"],
        rows,
        meta={"tolerance": cmp.tolerance, "convention": cmp.convention.value, "passed": cmp.passed},
        footer=footer,
    )


def _sweep_doc(sw: Sweep) -> _Doc:
    rows = []
    for r in sw.rows:
        if r.prediction is None:
            rows.append([r.value, "", None, None, None, r.error])
            continue
        for kind in r.prediction.kinds():
            rows.append([r.value, kind.label, r.prediction[kind], r.delta.get(kind), r.ratio.get(kind), ""])
        rows.append([r.value, "total", r.prediction.total_elems, None, None, ""])
    return _Doc(
        "commscope.sweep",
        [sw.variable, "kind", "volume_elems", "delta_elems", "ratio_vs_prev", "error"],
        rows,
        meta={"variable": sw.variable},
    )


def _time_doc(est: TimeEstimate) -> _Doc:
    total = est.total_us
    rows = [[k.label, t.calls, t.payload_bytes, t.latency_us, t.bandwidth_us, t.total_us, _pct(t.total_us, total)]
            for k, t in est.per_kind.items()]
    rows.append(["total", sum(t.calls for t in est.per_kind.values()), None, None, None, total, 100.0 if total else 0.0])
    meta = {"fabric": est.fabric.name, "illustrative": est.fabric.illustrative,
            "compute_us": est.compute_us, "comm_fraction": _num(est.comm_fraction)}
    footer = [f"fabric: {est.fabric.name}" + (" (illustrative placeholder values)" if est.fabric.illustrative else "")]
    if est.comm_fraction is not None:
        footer.append(f"communication fraction: {float(est.comm_fraction) * 100:.2f}%")
    return _Doc(
        "commscope.time_estimate",
        ["kind", "calls", "payload_bytes", "latency_us", "bandwidth_us", "total_us", "percent"],
        rows, meta=meta, footer=footer,
    )


def _validation_doc(table: ValidationTable) -> _Doc:
    rows = [[r.index, r.kind.label, r.phase.value, r.payload_elems, r.group_size, r.repeat,
             r.formula, r.simulated, r.padded, r.abs_discrepancy, r.algorithm] for r in table.rows]
    status = "exact" if table.exact else f"max discrepancy {_cell(table.max_abs_discrepancy)}"
    return _Doc(
        "commscope.validation",
        ["event", "kind", "phase", "payload_elems", "group", "repeat",
         "formula_per_rank", "simulated_per_rank", "padded_per_rank", "abs_discrepancy", "algorithm"],
        rows,
        meta={"match": "exact" if table.exact else "mismatch",
              "max_abs_discrepancy": _num(table.max_abs_discrepancy),
              "max_rel_discrepancy": _num(table.max_rel_discrepancy),
              "total_formula_elems": _num(table.total_formula()),
              "total_simulated_elems": _num(table.total_simulated())},
        footer=[f"oracle match: {status}",
                f"iteration total (init excluded): formula {_cell(table.total_formula())}, "
                f"simulated {_cell(table.total_simulated())}"],
    )


def _events_doc(events: Sequence[CollectiveEvent]) -> _Doc:
    rows = [[i, ev.kind.label, ev.phase.value, ev.payload_elems, ev.group_size, ev.repeat,
             collective_volume(ev.kind, ev.payload_elems, ev.group_size)] for i, ev in enumerate(events)]
    return _Doc("commscope.events",
                ["event", "kind", "phase", "payload_elems", "group", "repeat", "volume_per_call_elems"], rows)


def to_document(obj, *, elem_bytes: int = 2, view: str = "breakdown") -> _Doc:
    if isinstance(obj, VolumePrediction):
        return _prediction_doc(obj, elem_bytes)
    if isinstance(obj, CommSummary):
        return _summary_doc(obj, view)
    if isinstance(obj, Comparison):
        return _comparison_doc(obj)
    if isinstance(obj, Sweep):
        return _sweep_doc(obj)
    if isinstance(obj, TimeEstimate):
        return _time_doc(obj)
    if isinstance(obj, ValidationTable):
        return _validation_doc(obj)
    if isinstance(obj, (list, tuple)) and all(isinstance(e, CollectiveEvent) for e in obj):
        return _events_doc(obj)
    raise TypeError(f"cannot render {type(obj).__name__}")


def _json_value(x):
    if isinstance(x, enum.Enum):
        return x.value
    if isinstance(x, (Fraction, int)) and not isinstance(x, bool):
        return _num(x)
    return x


def render(obj, fmt: str = "table", *, elem_bytes: int = 2, view: str = "breakdown") -> str:
    """Render a report object as an aligned text table, CSV, or versioned JSON."""
    doc = to_document(obj, elem_bytes=elem_bytes, view=view)
    if fmt == "json":
        payload = {
            "schema": doc.schema,
            "version": SCHEMA_VERSION,
            **doc.meta,
            "columns": doc.headers,
            "rows": [dict(zip(doc.headers, map(_json_value, row))) for row in doc.rows],
        }
        return json.dumps(payload, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(doc.headers)
        writer.writerows([[_cell(c) for c in row] for row in doc.rows])
        return buf.getvalue()
    if fmt != "table":
        raise ConfigError("format", f"unknown format {fmt!r} (table, csv, json)")
    cells = [doc.headers] + [[_cell(c) for c in row] for row in doc.rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(doc.headers))]
    lines = ["  ".join(c.rjust(w) if j else c.ljust(w) for j, (c, w) in enumerate(zip(row, widths))).rstrip()
             for row in cells]
    lines += doc.footer
    return "\n".join(lines) + "\n"
