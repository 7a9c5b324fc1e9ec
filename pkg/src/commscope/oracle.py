"""Brute-force reference for the analytic model.

Collectives are executed step by step on a simulated ring (or binomial tree
for broadcast). Each rank's buffer state is tracked as bitmasks of the ranks
whose contributions it holds, so the simulation checks that the algorithm
actually completes, and it counts every element each rank puts on the wire.
The simulations never call into ``analytic``; only ``validate_schedule``
reads the closed-form volumes, to compare against them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

from .core import RING_FAMILY, CollectiveEvent, CollectiveKind, ModelConfig, Phase


class OracleMismatch(AssertionError):
    def __init__(self, event: CollectiveEvent, formula: Fraction, measured: Fraction):
        self.event = event
        self.formula = formula
        self.measured = measured
        super().__init__(
            f"{event.kind.label} m={event.payload_elems} g={event.group_size}: "
            f"formula {formula} != simulated {measured}"
        )


class SimulationError(RuntimeError):
    """The simulated algorithm did not reach its postcondition."""


@dataclass(frozen=True)
class RankTraffic:
    """Elements sent/received by each rank of the group.

    ``sent``/``received`` use exact logical chunking (m/g per chunk);
    ``padded_sent``/``padded_received`` use integer chunks of ceil(m/g), as
    a library padding the buffer to a multiple of g would.
    """

    algorithm: str
    sent: tuple[Fraction, ...]
    received: tuple[Fraction, ...]
    padded_sent: tuple[int, ...]
    padded_received: tuple[int, ...]
    rounds: int

    @property
    def group_size(self) -> int:
        return len(self.sent)

    @property
    def total_sent(self) -> Fraction:
        return sum(self.sent, Fraction(0))

    @property
    def total_received(self) -> Fraction:
        return sum(self.received, Fraction(0))

    @property
    def max_sent(self) -> Fraction:
        return max(self.sent)

    @property
    def max_received(self) -> Fraction:
        return max(self.received)

    @property
    def is_symmetric(self) -> bool:
        return len(set(self.sent)) == 1 and len(set(self.received)) == 1


class _Counter:
    def __init__(self, g: int, chunk: Fraction, padded_chunk: int):
        self.g = g
        self.chunk = chunk
        self.padded_chunk = padded_chunk
        self.sent = [Fraction(0)] * g
        self.received = [Fraction(0)] * g
        self.padded_sent = [0] * g
        self.padded_received = [0] * g
        self.rounds = 0

    def transfer(self, src: int, dst: int, nchunks: int = 1):
        self.sent[src] += self.chunk * nchunks
        self.received[dst] += self.chunk * nchunks
        self.padded_sent[src] += self.padded_chunk * nchunks
        self.padded_received[dst] += self.padded_chunk * nchunks

    def result(self, algorithm: str) -> RankTraffic:
        return RankTraffic(
            algorithm,
            tuple(self.sent),
            tuple(self.received),
            tuple(self.padded_sent),
            tuple(self.padded_received),
            self.rounds,
        )


def _chunked_counter(m: int, g: int) -> _Counter:
    return _Counter(g, Fraction(m, g), -(-m // g))


def _ring_reduce_scatter(contrib: list[list[int]], counter: _Counter) -> list[int]:
    """Run g-1 ring steps in place; returns the chunk index each rank ends up owning."""
    g = counter.g
    for step in range(g - 1):
        outgoing = []
        for r in range(g):
            c = (r - step) % g
            outgoing.append(((r + 1) % g, c, contrib[r][c]))
        for r, (dst, c, mask) in enumerate(outgoing):
            contrib[dst][c] |= mask
            counter.transfer(r, dst)
        counter.rounds += 1
    full = (1 << g) - 1
    owned = [(r + 1) % g for r in range(g)]
    for r in range(g):
        if contrib[r][owned[r]] != full:
            raise SimulationError(f"rank {r} chunk {owned[r]} not fully reduced")
    return owned


def _ring_allgather(held: list[set[int]], owned: list[int], counter: _Counter) -> None:
    """Each rank starts holding chunk ``owned[r]``; circulate until all hold all."""
    g = counter.g
    for step in range(g - 1):
        outgoing = []
        for r in range(g):
            # chunk that arrived at r in the previous step (or its own at step 0)
            c = owned[(r - step) % g]
            if c not in held[r]:
                raise SimulationError(f"rank {r} forwards chunk {c} it does not hold")
            outgoing.append(((r + 1) % g, c))
        for r, (dst, c) in enumerate(outgoing):
            held[dst].add(c)
            counter.transfer(r, dst)
        counter.rounds += 1
    for r in range(g):
        if len(held[r]) != g:
            raise SimulationError(f"rank {r} ends allgather with {len(held[r])}/{g} chunks")


@lru_cache(maxsize=4096)
def simulate_ring_reduce_scatter(m: int, g: int) -> RankTraffic:
    counter = _chunked_counter(m, g)
    contrib = [[1 << r for _ in range(g)] for r in range(g)]
    _ring_reduce_scatter(contrib, counter)
    return counter.result("ring_reduce_scatter")


@lru_cache(maxsize=4096)
def simulate_ring_allgather(m: int, g: int) -> RankTraffic:
    counter = _chunked_counter(m, g)
    owned = list(range(g))
    held = [{r} for r in range(g)]
    _ring_allgather(held, owned, counter)
    return counter.result("ring_allgather")


@lru_cache(maxsize=4096)
def simulate_ring_allreduce(m: int, g: int) -> RankTraffic:
    counter = _chunked_counter(m, g)
    contrib = [[1 << r for _ in range(g)] for r in range(g)]
    owned = _ring_reduce_scatter(contrib, counter)
    held = [{owned[r]} for r in range(g)]
    _ring_allgather(held, owned, counter)
    return counter.result("ring_allreduce")


@lru_cache(maxsize=4096)
def simulate_ring_reduce(m: int, g: int, root: int = 0) -> RankTraffic:
    """Reduce-scatter on the ring, then every rank ships its reduced chunk to the root."""
    counter = _chunked_counter(m, g)
    contrib = [[1 << r for _ in range(g)] for r in range(g)]
    owned = _ring_reduce_scatter(contrib, counter)
    gathered = {owned[root]}
    for r in range(g):
        if r != root:
            counter.transfer(r, root)
            gathered.add(owned[r])
    if g > 1:
        counter.rounds += 1
    if len(gathered) != g:
        raise SimulationError("root did not collect every reduced chunk")
    return counter.result("ring_reduce_then_gather")


@lru_cache(maxsize=4096)
def simulate_tree_broadcast(m: int, g: int, root: int = 0) -> RankTraffic:
    """Binomial-tree broadcast: ceil(log2 g) rounds, every non-root receives m once."""
    counter = _Counter(g, Fraction(m), m)
    have = {root}
    span = 1
    while len(have) < g:
        for rel in range(span):
            dst_rel = rel + span
            if dst_rel < g:
                src, dst = (root + rel) % g, (root + dst_rel) % g
                counter.transfer(src, dst)
                have.add(dst)
        span *= 2
        counter.rounds += 1
    if counter.rounds != (math.ceil(math.log2(g)) if g > 1 else 0):
        raise SimulationError("binomial broadcast used an unexpected number of rounds")
    return counter.result("binomial_tree_broadcast")


def simulate_p2p(m: int) -> RankTraffic:
    counter = _Counter(2, Fraction(m), m)
    counter.transfer(0, 1)
    counter.rounds = 1
    return counter.result("p2p")


def simulate(kind: CollectiveKind, m: int, g: int) -> RankTraffic:
    if kind is CollectiveKind.ALLREDUCE:
        return simulate_ring_allreduce(m, g)
    if kind is CollectiveKind.ALLGATHER:
        return simulate_ring_allgather(m, g)
    if kind is CollectiveKind.REDUCE_SCATTER:
        return simulate_ring_reduce_scatter(m, g)
    if kind is CollectiveKind.REDUCE:
        return simulate_ring_reduce(m, g)
    if kind is CollectiveKind.BROADCAST:
        return simulate_tree_broadcast(m, g)
    return simulate_p2p(m)


def per_rank_measure(kind: CollectiveKind, traffic: RankTraffic) -> Fraction:
    """The per-rank quantity the formulas describe for each collective family.

    Ring collectives: elements sent by each rank. Broadcast: elements each
    receiver takes in (the logical payload). Send: elements the sender
    emits. Recv: elements the receiver takes in.
    """
    if kind in (CollectiveKind.BROADCAST, CollectiveKind.RECV):
        return traffic.max_received
    return traffic.max_sent


# ---------------------------------------------------------------------------
# parameter enumeration


def param_tensors(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Every weight and bias tensor of the GPT-NeoX-style model, with shapes."""
    V, h, s, x = cfg.vocab_size, cfg.hidden, cfg.seq_len, cfg.mlp_expansion
    tensors = [("embed.word", (V, h)), ("embed.position", (s, h))]
    for layer in range(cfg.layers):
        pre = f"layers.{layer}"
        for name in ("query", "key", "value", "dense"):
            tensors.append((f"{pre}.attn.{name}", (h, h)))
        tensors.append((f"{pre}.mlp.up", (h, x * h)))
        tensors.append((f"{pre}.mlp.down", (x * h, h)))
        for name in ("query", "key", "value", "mlp_up"):
            tensors.append((f"{pre}.norm.{name}.gain", (h,)))
            tensors.append((f"{pre}.norm.{name}.bias", (h,)))
    tensors.append(("final_norm.gain", (h,)))
    tensors.append(("final_norm.bias", (h,)))
    if not cfg.tied_embeddings:
        tensors.append(("unembed", (h, V)))
    return tensors


def enumerate_param_count(cfg: ModelConfig) -> int:
    return sum(math.prod(shape) for _, shape in param_tensors(cfg))


# ---------------------------------------------------------------------------
# schedule validation


@dataclass(frozen=True)
class ValidationRow:
    index: int
    kind: CollectiveKind
    phase: Phase
    payload_elems: int
    group_size: int
    repeat: int
    formula: Fraction
    simulated: Fraction
    padded: int
    algorithm: str

    @property
    def abs_discrepancy(self) -> Fraction:
        return abs(self.simulated - self.formula)

    @property
    def rel_discrepancy(self) -> Fraction:
        if self.formula == 0:
            return Fraction(0) if self.simulated == 0 else Fraction(1)
        return self.abs_discrepancy / self.formula


@dataclass(frozen=True)
class ValidationTable:
    rows: tuple[ValidationRow, ...]

    @property
    def max_abs_discrepancy(self) -> Fraction:
        return max((r.abs_discrepancy for r in self.rows), default=Fraction(0))

    @property
    def max_rel_discrepancy(self) -> Fraction:
        return max((r.rel_discrepancy for r in self.rows), default=Fraction(0))

    @property
    def exact(self) -> bool:
        return self.max_abs_discrepancy == 0

    def totals(self, include_init: bool = False) -> dict[CollectiveKind, tuple[Fraction, Fraction]]:
        """Per kind: (formula total, simulated total), each call weighted by repeat."""
        out: dict[CollectiveKind, list[Fraction]] = {}
        for r in self.rows:
            if r.phase is Phase.INIT and not include_init:
                continue
            acc = out.setdefault(r.kind, [Fraction(0), Fraction(0)])
            acc[0] += r.formula * r.repeat
            acc[1] += r.simulated * r.repeat
        return {k: tuple(out[k]) for k in CollectiveKind if k in out}

    def total_formula(self, include_init: bool = False) -> Fraction:
        return sum((f for f, _ in self.totals(include_init).values()), Fraction(0))

    def total_simulated(self, include_init: bool = False) -> Fraction:
        return sum((s for _, s in self.totals(include_init).values()), Fraction(0))


def validate_schedule(events: Sequence[CollectiveEvent], strict: bool = True) -> ValidationTable:
    """Simulate every event and compare against the closed-form volume.

    Ring-family collectives, broadcast and point-to-point must match
    exactly; Reduce is reported but not enforced because no ring algorithm
    attains its m(g-1)/g bound per rank.
    """
    # imported here so the module-level code stays independent of the formulas
    from .analytic import collective_volume

    rows = []
    for i, ev in enumerate(events):
        traffic = simulate(ev.kind, ev.payload_elems, ev.group_size)
        measured = per_rank_measure(ev.kind, traffic)
        formula = collective_volume(ev.kind, ev.payload_elems, ev.group_size)
        if ev.kind in RING_FAMILY and not traffic.is_symmetric:
            raise SimulationError(f"{ev.kind.label} ring traffic is not symmetric")
        padded = max(traffic.padded_received if ev.kind in (CollectiveKind.BROADCAST, CollectiveKind.RECV)
                     else traffic.padded_sent)
        row = ValidationRow(i, ev.kind, ev.phase, ev.payload_elems, ev.group_size, ev.repeat,
                            formula, measured, padded, traffic.algorithm)
        if strict and ev.kind is not CollectiveKind.REDUCE and row.abs_discrepancy != 0:
            raise OracleMismatch(ev, formula, measured)
        rows.append(row)
    return ValidationTable(tuple(rows))
