"""Per-kind breakdown and message-size histogram for DDP and each ZeRO stage."""

import argparse
from dataclasses import dataclass

from commscope import ParallelLayout, Phase, load_fixture
from commscope.report import FABRIC_PRESETS, estimate_time, render
from commscope.schedule import Granularity, ScheduleOptions, build_schedule, summarize


@dataclass
class ZeroBreakdown:
    model: str = "13b"
    devices: int = 64
    bucket_elems: int = 500_000_000
    granularity: Granularity = Granularity.PER_TENSOR
    fabric: str = "inter-node-illustrative"
    histogram: bool = False


def run(cfg: ZeroBreakdown) -> None:
    model = load_fixture(cfg.model)
    opts = ScheduleOptions(bucket_elems=cfg.bucket_elems, zero3_granularity=cfg.granularity)
    fabric = FABRIC_PRESETS[cfg.fabric]
    for stage in range(4):
        events = build_schedule(model, ParallelLayout(cfg.devices, zero_stage=stage), opts)
        summary = summarize(events, model.elem_bytes, skip_phases=[Phase.INIT])
        est = estimate_time(summary, fabric)
        label = "ddp" if stage == 0 else f"zero{stage}"
        gib = float(summary.total_volume_elems) * model.elem_bytes / 2**30
        print(f"== {label}: {gib:.2f} GiB per rank, {summary.total_calls} calls, "
              f"~{float(est.total_us) / 1e3:.1f} ms on {fabric.name}")
        print(render(summary, view="histogram" if cfg.histogram else "breakdown"))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default=ZeroBreakdown.model)
    ap.add_argument("--devices", type=int, default=ZeroBreakdown.devices)
    ap.add_argument("--bucket", type=int, default=ZeroBreakdown.bucket_elems)
    ap.add_argument("--granularity", default="per_tensor", choices=[g.value for g in Granularity])
    ap.add_argument("--fabric", default=ZeroBreakdown.fabric, choices=list(FABRIC_PRESETS))
    ap.add_argument("--histogram", action="store_true")
    a = ap.parse_args()
    run(ZeroBreakdown(a.model, a.devices, a.bucket, Granularity(a.granularity), a.fabric, a.histogram))


if __name__ == "__main__":
    main()
