"""How per-iteration volume moves with sequence length, per parallelism scheme.

    python scripts/seqlen_study.py --model 1p3b --devices 16
"""

import argparse
from dataclasses import dataclass, field

from commscope import ParallelLayout, load_fixture
from commscope.report import render, sweep


@dataclass
class SeqlenStudy:
    model: str = "1p3b"
    devices: int = 16
    seq_lens: list[int] = field(default_factory=lambda: [512, 1024, 2048, 4096])
    fmt: str = "table"

    def layouts(self) -> dict[str, ParallelLayout]:
        d = self.devices
        return {
            "ddp": ParallelLayout(d),
            "zero1": ParallelLayout(d, zero_stage=1),
            "zero3": ParallelLayout(d, zero_stage=3),
            "pipeline": ParallelLayout(4, pipeline=4),
            "tensor": ParallelLayout(2, tensor=2),
        }


def run(cfg: SeqlenStudy) -> None:
    model = load_fixture(cfg.model)
    for name, layout in cfg.layouts().items():
        table = sweep(model, layout, "seq", cfg.seq_lens)
        first, last = table.rows[0].prediction, table.rows[-1].prediction
        growth = float(last.total_elems / first.total_elems) if first.total_elems else float("nan")
        print(f"== {name}: x{growth:.4f} total volume from s={cfg.seq_lens[0]} to s={cfg.seq_lens[-1]}")
        print(render(table, cfg.fmt))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", default=SeqlenStudy.model)
    ap.add_argument("--devices", type=int, default=SeqlenStudy.devices)
    ap.add_argument("--seq", type=int, nargs="+")
    ap.add_argument("--format", dest="fmt", default="table", choices=["table", "csv", "json"])
    args = ap.parse_args()
    cfg = SeqlenStudy(args.model, args.devices, fmt=args.fmt)
    if args.seq:
        cfg.seq_lens = args.seq
    run(cfg)


if __name__ == "__main__":
    main()
