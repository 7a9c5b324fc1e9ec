"""Rank every valid (tensor, pipeline) split of a device count by predicted volume.

Layouts that do not divide the model (heads by tensor, layers by pipeline)
are listed with the reason they were skipped.
"""

import argparse
from dataclasses import dataclass

from commscope import CommscopeError, ParallelLayout, load_fixture
from commscope.analytic import predict


@dataclass
class SplitSearch:
    model: str = "1p3b"
    devices: int = 64
    zero_stage: int = 1
    recompute: bool = True


def divisors(n: int) -> list[int]:
    return [k for k in range(1, n + 1) if n % k == 0]


def run(cfg: SplitSearch) -> None:
    model = load_fixture(cfg.model)
    ranked, skipped = [], []
    for t in divisors(cfg.devices):
        for p in divisors(cfg.devices // t):
            try:
                layout = ParallelLayout(cfg.devices, t, p, zero_stage=cfg.zero_stage)
                pred = predict(model, layout, cfg.recompute)
            except CommscopeError as exc:
                skipped.append((t, p, str(exc)))
                continue
            ranked.append((pred.total_elems, t, p, layout.data_parallel))
    ranked.sort()
    print(f"{'tensor':>6} {'pipe':>4} {'dp':>4} {'GiB/rank':>10}")
    for total, t, p, dp in ranked:
        print(f"{t:>6} {p:>4} {dp:>4} {float(total) * model.elem_bytes / 2**30:>10.3f}")
    for t, p, why in skipped:
        print(f"skipped t={t} p={p}: {why}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", default=SplitSearch.model)
    ap.add_argument("--devices", type=int, default=SplitSearch.devices)
    ap.add_argument("--zero", type=int, default=SplitSearch.zero_stage, choices=[0, 1, 2])
    ap.add_argument("--no-recompute", action="store_true")
    a = ap.parse_args()
    run(SplitSearch(a.model, a.devices, a.zero, not a.no_recompute))


if __name__ == "__main__":
    main()
