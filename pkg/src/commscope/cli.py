"""``commscope`` command-line entry point.

Exit codes: 0 success, 1 validation/input error, 2 comparison outside tolerance.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .analytic import predict
from .core import (
    CommscopeError,
    ConfigError,
    ModelConfig,
    ParallelLayout,
    Phase,
    load_fixture,
    load_layout,
    load_model_config,
)
from .oracle import OracleMismatch, validate_schedule
from .report import DEFAULT_TOLERANCE, FABRIC_PRESETS, compare, estimate_time, load_fabric, render, sweep
from .schedule import Granularity, ScheduleOptions, build_schedule, summarize
from .traceio import aggregate_trace, read_trace, serialize_events

EXIT_OK, EXIT_INVALID, EXIT_TOLERANCE = 0, 1, 2

_MODEL_FLAGS = {
    "vocab": "vocab_size", "hidden": "hidden", "layers": "layers", "seq": "seq_len",
    "mbs": "micro_batch", "heads": "attn_heads", "expansion": "mlp_expansion", "elem_bytes": "elem_bytes",
}
_LAYOUT_FLAGS = {"devices": "devices", "tp": "tensor", "pp": "pipeline", "zero": "zero_stage",
                 "microbatches": "num_microbatches"}


class _Parser(argparse.ArgumentParser):
    # usage errors are validation errors; exit 2 is reserved for tolerance failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _model_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("model")
    g.add_argument("--model", help="model config file, or a bundled fixture name (19m, 125m, 1p3b, 13b)")
    g.add_argument("--vocab", type=int)
    g.add_argument("--hidden", type=int)
    g.add_argument("--layers", type=int)
    g.add_argument("--seq", type=int)
    g.add_argument("--mbs", type=int, help="micro-batch size b")
    g.add_argument("--heads", type=int, help="attention heads (default 1 when no --model)")
    g.add_argument("--expansion", type=int, help="MLP expansion factor")
    g.add_argument("--elem-bytes", type=int)
    g.add_argument("--tied", action="store_true", default=None, help="tied embedding/unembedding")


def _layout_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("layout")
    g.add_argument("--layout", help="parallel layout config file")
    g.add_argument("--devices", type=int)
    g.add_argument("--tp", type=int)
    g.add_argument("--pp", type=int)
    g.add_argument("--zero", help="ZeRO stage: none, 1, 2 or 3")
    g.add_argument("--microbatches", type=int)


def _output_args(p: argparse.ArgumentParser, formats=("table", "csv", "json")):
    p.add_argument("--format", choices=formats, default="table")
    p.add_argument("--out", default="-", help="output path, or - for stdout")


def _schedule_args(p: argparse.ArgumentParser):
    p.add_argument("--no-recompute", action="store_true", help="model TP without activation recomputation")
    p.add_argument("--bucket", type=int, default=ScheduleOptions.bucket_elems, help="gradient bucket size in elements")
    p.add_argument("--granularity", choices=[g.value for g in Granularity], default=Granularity.PER_LAYER.value,
                   help="ZeRO-3 forward allgather granularity")
    p.add_argument("--no-init", action="store_true", help="omit the start-of-training broadcast")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="commscope", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("predict", help="closed-form per-iteration volume")
    _model_args(p); _layout_args(p); _output_args(p)
    p.add_argument("--no-recompute", action="store_true")

    p = sub.add_parser("schedule", help="per-iteration collective event stream")
    _model_args(p); _layout_args(p); _output_args(p, ("table", "csv", "json", "trace")); _schedule_args(p)
    p.add_argument("--view", choices=["events", "breakdown", "histogram"], default="events")
    p.add_argument("--iteration", type=int, default=0, help="iteration stamped on --format trace output")

    p = sub.add_parser("validate", help="check formulas against step-by-step collective simulation")
    _model_args(p); _layout_args(p); _output_args(p); _schedule_args(p)

    p = sub.add_parser("parse", help="aggregate a communication trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--iteration", type=int)
    p.add_argument("--view", choices=["breakdown", "histogram"], default="breakdown")
    _model_args(p); _output_args(p)

    p = sub.add_parser("compare", help="theory vs observed trace volume")
    p.add_argument("--trace", required=True)
    p.add_argument("--iteration", type=int)
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    p.add_argument("--trace-volume-convention", choices=["logical", "wire"], default="logical")
    p.add_argument("--no-recompute", action="store_true")
    _model_args(p); _layout_args(p); _output_args(p)

    p = sub.add_parser("sweep", help="predictions across one varying parameter")
    p.add_argument("--var", required=True, help="seq, devices, tensor, pipeline or zero")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--no-recompute", action="store_true")
    _model_args(p); _layout_args(p); _output_args(p)

    p = sub.add_parser("estimate", help="alpha-beta communication time")
    p.add_argument("--fabric", required=True, help=f"fabric file or preset ({', '.join(FABRIC_PRESETS)})")
    p.add_argument("--trace", help="estimate from a trace instead of the modeled schedule")
    p.add_argument("--iteration", type=int)
    p.add_argument("--compute-us", type=float, help="compute time per iteration, for the communication fraction")
    _model_args(p); _layout_args(p); _output_args(p); _schedule_args(p)
    return parser


def _config_from_args(args, flags: dict, path_attr: str, loader, cls, defaults: dict):
    data: dict = {}
    path = getattr(args, path_attr, None)
    if path:
        base = loader(path)
        data = {f: getattr(base, f) for f in base.__dataclass_fields__}
    else:
        data.update(defaults)
    for flag, field_name in flags.items():
        value = getattr(args, flag, None)
        if value is not None:
            data[field_name] = value
    return cls.from_mapping(data)


def _load_model(path: str) -> ModelConfig:
    return load_model_config(path) if Path(path).exists() else load_fixture(path)


def model_from_args(args) -> ModelConfig:
    flags = dict(_MODEL_FLAGS)
    if getattr(args, "tied", None):
        flags["tied"] = "tied_embeddings"
    if not args.model:
        missing = [f"--{f}" for f in ("vocab", "hidden", "layers", "seq", "mbs") if getattr(args, f) is None]
        if missing:
            raise ConfigError("model", f"give --model or all of {', '.join(missing)}")
    return _config_from_args(args, flags, "model", _load_model, ModelConfig, {"attn_heads": 1})


def layout_from_args(args) -> ParallelLayout:
    if not args.layout and args.devices is None:
        raise ConfigError("devices", "give --layout or --devices")
    return _config_from_args(args, _LAYOUT_FLAGS, "layout", load_layout, ParallelLayout, {})


def _schedule_opts(args) -> ScheduleOptions:
    return ScheduleOptions(
        include_init_broadcast=not args.no_init,
        recompute=not args.no_recompute,
        bucket_elems=args.bucket,
        zero3_granularity=args.granularity,
    )


def _elem_bytes(args) -> int:
    if args.elem_bytes:
        return args.elem_bytes
    return model_from_args(args).elem_bytes if args.model else 2


def _emit(text: str, out: str):
    if out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _run(args) -> int:
    cmd = args.command
    if cmd == "predict":
        cfg, layout = model_from_args(args), layout_from_args(args)
        pred = predict(cfg, layout, recompute=not args.no_recompute)
        _emit(render(pred, args.format, elem_bytes=cfg.elem_bytes), args.out)
        return EXIT_OK

    if cmd == "schedule":
        cfg, layout = model_from_args(args), layout_from_args(args)
        events = build_schedule(cfg, layout, _schedule_opts(args))
        if args.format == "trace":
            text = "\n".join(serialize_events(events, args.iteration, cfg.elem_bytes)) + "\n"
        elif args.view == "events":
            text = render(events, args.format)
        else:
            text = render(summarize(events, cfg.elem_bytes), args.format, view=args.view)
        _emit(text, args.out)
        return EXIT_OK

    if cmd == "validate":
        cfg, layout = model_from_args(args), layout_from_args(args)
        opts = _schedule_opts(args)
        events = build_schedule(cfg, layout, opts)
        table = validate_schedule(events)
        pred = predict(cfg, layout, recompute=opts.recompute)
        summary = summarize(events, cfg.elem_bytes, skip_phases=[Phase.INIT])
        mismatched = [k.label for k in set(pred.kinds()) | set(summary.kinds())
                      if summary[k].volume_elems != pred[k]]
        _emit(render(table, args.format), args.out)
        analytic_line = "analytic match: exact" if not mismatched else f"analytic mismatch: {', '.join(sorted(mismatched))}"
        if args.format == "table" and args.out == "-":
            print(analytic_line)
        else:
            print(f"oracle match: {'exact' if table.exact else 'mismatch'}", file=sys.stderr)
            print(analytic_line, file=sys.stderr)
        return EXIT_OK if table.exact and not mismatched else EXIT_INVALID

    if cmd == "parse":
        records = read_trace(args.trace)
        summary = aggregate_trace(records, args.iteration, _elem_bytes(args))
        _emit(render(summary, args.format, view=args.view), args.out)
        return EXIT_OK

    if cmd == "compare":
        cfg, layout = model_from_args(args), layout_from_args(args)
        pred = predict(cfg, layout, recompute=not args.no_recompute)
        observed = aggregate_trace(read_trace(args.trace), args.iteration, cfg.elem_bytes)
        result = compare(pred, observed, args.trace_volume_convention, args.tolerance)
        _emit(render(result, args.format), args.out)
        if not result.passed:
            flagged = ", ".join(f"{r.kind.label} ({r.status})" for r in result.rows if r.flagged)
            print(f"comparison outside tolerance: {flagged}", file=sys.stderr)
            return EXIT_TOLERANCE
        return EXIT_OK

    if cmd == "sweep":
        cfg, layout = model_from_args(args), layout_from_args(args)
        raw = [v.strip() for v in args.values.split(",") if v.strip()]
        values = [int(v) if v.isdigit() else v for v in raw]
        table = sweep(cfg, layout, args.var, values, recompute=not args.no_recompute)
        for row in table.rows:
            if row.error:
                print(f"{table.variable}={row.value}: {row.error}", file=sys.stderr)
        _emit(render(table, args.format), args.out)
        return EXIT_OK

    if cmd == "estimate":
        fabric = load_fabric(args.fabric)
        if args.trace:
            source = aggregate_trace(read_trace(args.trace), args.iteration, _elem_bytes(args))
        else:
            cfg, layout = model_from_args(args), layout_from_args(args)
            source = summarize(build_schedule(cfg, layout, _schedule_opts(args)), cfg.elem_bytes)
        _emit(render(estimate_time(source, fabric, args.compute_us), args.format), args.out)
        return EXIT_OK

    raise AssertionError(cmd)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except (CommscopeError, OracleMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
