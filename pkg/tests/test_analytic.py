from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from commscope.analytic import (
    Scheme,
    collective_volume,
    ddp_volume,
    param_count,
    pipeline_volume,
    predict,
    scheme_of,
    tensor_volume,
    threed_volume,
    zero_volume,
)
from commscope.core import (
    CollectiveKind,
    ConfigError,
    HeadsNotDivisible,
    LayersNotDivisible,
    ModelConfig,
    ParallelLayout,
    ZeroStage,
)
from commscope.oracle import enumerate_param_count, simulate_ring_allreduce, simulate_ring_reduce_scatter

from conftest import model_configs

AR, AG, RS = CollectiveKind.ALLREDUCE, CollectiveKind.ALLGATHER, CollectiveKind.REDUCE_SCATTER
SEND, RECV = CollectiveKind.SEND, CollectiveKind.RECV


def test_param_count_tiny(tiny):
    # frozen from the per-tensor enumeration
    assert enumerate_param_count(tiny) == 304
    assert param_count(tiny) == 304


def test_param_count_no_layers(tiny):
    assert param_count(tiny.replace(layers=0)) == 64 + 8 + 8


@given(model_configs())
def test_param_count_matches_enumeration(cfg):
    assert param_count(cfg) == enumerate_param_count(cfg)


@given(model_configs())
def test_tied_embeddings_save_one_table(cfg):
    untied = cfg.replace(tied_embeddings=False)
    tied = cfg.replace(tied_embeddings=True)
    assert param_count(untied) - param_count(tied) == cfg.vocab_size * cfg.hidden


def test_collective_volume_values():
    assert collective_volume(AR, 1024, 4) == 1536
    assert collective_volume(RS, 304, 4) == 228
    assert collective_volume(RS, 304, 4) == simulate_ring_reduce_scatter(304, 4).max_sent
    assert collective_volume(CollectiveKind.BROADCAST, 10, 8) == 10
    assert collective_volume(SEND, 10, 2) == 10
    assert collective_volume(AG, 1, 3) == Fraction(2, 3)


@pytest.mark.parametrize("kind", [AR, AG, RS, CollectiveKind.REDUCE])
def test_collective_volume_single_rank(kind):
    assert collective_volume(kind, 12345, 1) == 0


def test_collective_volume_rejects_negative():
    with pytest.raises(ValueError):
        collective_volume(AR, -1, 4)
    with pytest.raises(ValueError):
        collective_volume(AR, 1, 0)


def test_ddp_volume(tiny):
    assert ddp_volume(tiny, ParallelLayout(4)).per_kind_elems == {AR: 456}
    assert ddp_volume(tiny, ParallelLayout(4))[AR] == 2 * 304 * Fraction(3, 4)
    assert ddp_volume(tiny, ParallelLayout(1)).total_elems == 0
    with pytest.raises(ConfigError):
        ddp_volume(tiny, ParallelLayout(4, zero_stage=1))


def test_ddp_volume_monotone_limit(tiny):
    totals = [ddp_volume(tiny, ParallelLayout(g)).total_elems for g in range(1, 200)]
    assert all(a < b for a, b in zip(totals, totals[1:]))
    assert all(t < 2 * 304 for t in totals)


def test_zero_volume(tiny):
    z3 = zero_volume(tiny, ParallelLayout(4, zero_stage=3))
    assert z3.total_elems == 684
    assert z3[AG] == 456 and z3[RS] == 228
    z1 = zero_volume(tiny, ParallelLayout(4, zero_stage=1))
    assert z1[AG] == z1[RS] == 228
    with pytest.raises(ConfigError):
        zero_volume(tiny, ParallelLayout(4))


@given(model_configs(), st.integers(2, 512))
def test_zero_ratios(cfg, g):
    ddp = ddp_volume(cfg, ParallelLayout(g)).total_elems
    z = {s: zero_volume(cfg, ParallelLayout(g, zero_stage=s)).total_elems for s in (1, 2, 3)}
    assert z[1] == z[2] == ddp
    assert z[3] / ddp == Fraction(3, 2)


def _pipeline_by_stage_pairs(b, s, h, p, microbatches=1):
    """Walk every adjacent stage pair: activation forward, gradient backward."""
    sent = recv = 0
    for _ in range(microbatches):
        for stage in range(p):
            if stage + 1 < p:  # forward activation to the next stage
                sent += b * s * h
            if stage > 0:  # activation from the previous stage
                recv += b * s * h
            if stage > 0:  # backward gradient to the previous stage
                sent += b * s * h
            if stage + 1 < p:  # gradient from the next stage
                recv += b * s * h
    return sent, recv


def test_pipeline_volume_tiny(tiny):
    pred = pipeline_volume(tiny, ParallelLayout(2, pipeline=2))
    assert _pipeline_by_stage_pairs(1, 2, 4, 2) == (16, 16)
    assert pred[SEND] == 16 and pred[RECV] == 16
    # each direction carries 2bsh(p-1)
    assert pred[SEND] == 2 * 1 * 2 * 4 * (2 - 1)


@given(model_configs(), st.integers(1, 16), st.integers(1, 4))
def test_pipeline_matches_stage_walk(cfg, p, mb):
    pred = pipeline_volume(cfg, ParallelLayout(p, pipeline=p, num_microbatches=mb))
    sent, recv = _pipeline_by_stage_pairs(cfg.micro_batch, cfg.seq_len, cfg.hidden, p, mb)
    assert (pred[SEND], pred[RECV]) == (sent, recv)
    assert bool(pred.notes) == (mb > 1)


def test_pipeline_single_stage_and_seq_doubling(tiny):
    assert pipeline_volume(tiny, ParallelLayout(1)).total_elems == 0
    base = pipeline_volume(tiny, ParallelLayout(4, pipeline=4)).total_elems
    assert pipeline_volume(tiny.replace(seq_len=4), ParallelLayout(4, pipeline=4)).total_elems == 2 * base


def test_tensor_volume_tiny(tiny):
    cfg = tiny.replace(layers=2)
    pred = tensor_volume(cfg, ParallelLayout(2, tensor=2))
    # per-event accumulation through the ring simulator: 13 allreduces of bsh=8
    oracle = sum(simulate_ring_allreduce(8, 2).max_sent for _ in range(6 * 2 + 1))
    assert oracle == 104
    assert pred[AR] == 104
    assert tensor_volume(cfg, ParallelLayout(2, tensor=2), recompute=False)[AR] == (8 * 2 + 2) * 8 * Fraction(1, 2)
    assert tensor_volume(cfg, ParallelLayout(2)).total_elems == 0


def test_threed_degenerate_equals_dp(tiny):
    for stage in range(4):
        lay = ParallelLayout(4, zero_stage=stage)
        full, dp = threed_volume(tiny, lay), predict(tiny, lay)
        assert all(full[k] == dp[k] for k in CollectiveKind)
        assert full.total_elems == dp.total_elems


def test_threed_pipeline_halves_tp_layer_term(tiny):
    cfg = tiny.replace(layers=4)
    tp1 = threed_volume(cfg, ParallelLayout(2, tensor=2)).components[Scheme.TENSOR][AR]
    tp2 = threed_volume(cfg, ParallelLayout(4, tensor=2, pipeline=2)).components[Scheme.TENSOR][AR]
    per_call = collective_volume(AR, cfg.tokens_per_microbatch, 2)
    # the embedding allreduce is one call either way
    assert tp1 - per_call == 2 * (tp2 - per_call)


def test_threed_tiny_composition(tiny):
    cfg = tiny.replace(layers=2)
    pred = threed_volume(cfg, ParallelLayout(8, tensor=2, pipeline=2))
    # three independent streams: TP over L/p = 1 layer (7 allreduces of 8 over 2 ranks),
    # PP (2 sends + 2 recvs of 8), DDP gradient allreduce of P=528 over 2 ranks
    tp = 7 * simulate_ring_allreduce(8, 2).max_sent
    pp = 4 * 8
    dp = simulate_ring_allreduce(param_count(cfg), 2).max_sent
    assert (tp, pp, dp) == (56, 32, 528)
    assert pred.total_elems == tp + pp + dp == 616
    assert pred[AR] == tp + dp


def test_threed_errors(tiny):
    with pytest.raises(LayersNotDivisible):
        threed_volume(tiny, ParallelLayout(4, pipeline=2))
    with pytest.raises(HeadsNotDivisible):
        threed_volume(tiny, ParallelLayout(4, tensor=4))


@pytest.mark.parametrize(
    "layout,scheme",
    [(ParallelLayout(4), Scheme.DDP), (ParallelLayout(4, zero_stage=2), Scheme.ZERO2),
     (ParallelLayout(2, tensor=2), Scheme.TENSOR), (ParallelLayout(2, pipeline=2), Scheme.PIPELINE),
     (ParallelLayout(4, tensor=2), Scheme.THREE_D), (ParallelLayout(4, 2, 2), Scheme.THREE_D)],
)
def test_scheme_of(layout, scheme):
    assert scheme_of(layout) is scheme


@settings(max_examples=50)
@given(model_configs(), st.integers(1, 64), st.sampled_from(list(ZeroStage)))
def test_monotone_in_group_seq_hidden_layers(cfg, g, stage):
    lay = ParallelLayout(g, zero_stage=stage)
    base = predict(cfg, lay).total_elems
    assert predict(cfg, lay.replace(devices=g + 1)).total_elems >= base
    assert predict(cfg.replace(seq_len=cfg.seq_len + 1), lay).total_elems >= base
    assert predict(cfg.replace(layers=cfg.layers + 1), lay).total_elems >= base
    wider = cfg.replace(hidden=cfg.hidden + cfg.attn_heads)
    assert predict(wider, lay).total_elems >= base
    t = tensor_volume(cfg, ParallelLayout(2, tensor=2)).total_elems
    assert tensor_volume(wider, ParallelLayout(2, tensor=2)).total_elems >= t


@given(model_configs(), st.integers(1, 64))
def test_seq_derivative_exact(cfg, g):
    lay = ParallelLayout(g)
    d = ddp_volume(cfg.replace(seq_len=cfg.seq_len + 1), lay).total_elems - ddp_volume(cfg, lay).total_elems
    assert d == 2 * cfg.hidden * Fraction(g - 1, g)


@given(model_configs(), st.integers(1, 300))
def test_model_parallel_volumes_ignore_vocab(cfg, vocab):
    other = cfg.replace(vocab_size=vocab)
    for lay in (ParallelLayout(4, pipeline=4), ParallelLayout(4, tensor=1)):
        assert pipeline_volume(cfg, lay) == pipeline_volume(other, lay)
    lay = ParallelLayout(2, tensor=2)
    assert tensor_volume(cfg, lay) == tensor_volume(other, lay)


def test_prediction_invariants(tiny):
    pred = threed_volume(tiny.replace(layers=2), ParallelLayout(8, 2, 2, zero_stage=1))
    assert pred.total_elems == sum(pred.per_kind_elems.values())
    assert all(v >= 0 for v in pred.per_kind_elems.values())
    assert list(pred.per_kind_elems) == sorted(pred.per_kind_elems, key=list(CollectiveKind).index)
