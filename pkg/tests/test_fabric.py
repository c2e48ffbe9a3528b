"""Cycle-level fabric tests: opcode semantics, routing, pacing, and
bit-exact layer equivalence against the numpy reference."""

import numpy as np
import pytest

from mavec.fabric import _pykernel as pk
from mavec.fabric.simulator import (
    LoweredLayer,
    lower_program,
    run_pool,
    run_program,
    simulate_layer,
)
from mavec.mapping import ArrayGeom, LayerSpec, build_fold_plan
from mavec.messages import Opcode, site_address
from mavec.oracle import conv2d_for_plan, maxpool_ref, synth_values
from mavec.schedule import build_program

CASE = LayerSpec("case", c_in=2, c_out=4, h=8, w=8, kh=3, kw=3, stride=1, pad=1)
CASE_GEOM = ArrayGeom(4, 24)


def mini_lowered(rows=1, cols=4, merge_words=(), host=(), rate=16.0):
    """Bare fabric with no fold roles, fed directly through the lanes."""
    return LoweredLayer(
        rows=rows,
        cols=cols,
        depth=4,
        dual_dequeue=True,
        waves=1,
        out_w=1,
        stride=1,
        kh=3,
        kw=3,
        hop=0,
        col_kind=[0] * cols,
        col_slot=[0] * cols,
        col_s=[-1] * cols,
        col_r=[-1] * cols,
        col_leading=[0] * cols,
        col_c1=[-1] * cols,
        col_c2=[-1] * cols,
        col_group_rank=[-1] * cols,
        col_block_rank=[-1] * cols,
        col_is_group=[0] * cols,
        col_is_block=[0] * cols,
        col_is_pass=[0] * cols,
        pass_col=cols - 1,
        n_seq=1,
        seq_blocks_used=[0],
        seq_rows_used=[rows],
        seq_band=[0],
        seq_merge_op=[int(Opcode.UPDATE)],
        seq_arm=[0],
        host_stream=list(host),
        host_rate=rate,
        l1_stage=[],
        l1_merge=[("w", w) for w in merge_words],
    )


def word(op, addr, value, tail=0):
    return pk.make_word(int(op), addr, pk.f_to_bits(float(value)), tail)


def armed(addr):
    return (pk.OP_A_MULS << 12) | addr


def captured_values(result):
    return [(site, pk.bits_to_f(bits)) for site, bits in result["captures"]]


# ------------------------------------------------------- opcode semantics


def test_scalar_opcode_chain():
    seq = [
        word(Opcode.UPDATE, 0, 5.0),
        word(Opcode.A_ADDS, 0, 2.0),
        word(Opcode.A_SUBS, 0, 1.5),
        word(Opcode.A_MUL, 0, 2.0),
        word(Opcode.A_DIV, 0, 4.0),
        word(Opcode.CMP, 0, 10.0),
        word(Opcode.CMP, 0, 3.0),
        word(Opcode.A_SUB, 0, 0.5, tail=armed(0)),
    ]
    result = pk.FabricKernel(mini_lowered(merge_words=seq)).run()
    assert captured_values(result) == [(0, 9.5)]
    # UPDATE is a register write; every other word above costs one FPU op
    assert result["counters"]["fpu_ops"] == 7
    assert result["counters"]["created"] == result["counters"]["retired"]


def test_relu_clamps_negative_and_keeps_positive():
    seq = [
        word(Opcode.UPDATE, 1, -3.0),
        word(Opcode.RELU, 1, 0.0, tail=armed(1)),
        word(Opcode.UPDATE, 1, 2.5),
        word(Opcode.RELU, 1, 0.0, tail=armed(1)),
    ]
    result = pk.FabricKernel(mini_lowered(merge_words=seq)).run()
    assert captured_values(result) == [(1, 0.0), (1, 2.5)]


def test_weight_adjust_opcode():
    seq = [word(Opcode.AV_ADD, 2, 3.25, tail=armed(2))]
    result = pk.FabricKernel(mini_lowered(merge_words=seq)).run()
    assert captured_values(result) == [(2, 3.25)]


def test_update_does_not_count_as_fpu_work():
    seq = [word(Opcode.UPDATE, 0, 4.0, tail=armed(0))]
    result = pk.FabricKernel(mini_lowered(merge_words=seq)).run()
    assert captured_values(result) == [(0, 4.0)]
    assert result["counters"]["fpu_ops"] == 0


# ------------------------------------------------------- routing and pacing


def test_host_word_forwards_down_to_target_row():
    w = word(Opcode.UPDATE, site_address(2, 5, 24), 7.5, tail=armed(site_address(2, 5, 24)))
    low = mini_lowered(rows=4, cols=24, host=[w])
    result = pk.FabricKernel(low).run()
    assert captured_values(result) == [(2 * 24 + 5, 7.5)]
    assert result["counters"]["forwards"] == 2  # two hops down from row 0


def test_host_injection_floor_rate():
    words = [word(Opcode.PROG, i % 20, 1.0) for i in range(40)]
    kern = pk.FabricKernel(mini_lowered(rows=1, cols=24, host=words, rate=15.75))
    kern.step()
    assert kern.counters["host_injected"] == 15
    kern.step()
    assert kern.counters["host_injected"] == 30
    kern.step()
    assert kern.counters["host_injected"] == 40


def test_host_injection_slow_rate_is_one_per_period():
    words = [word(Opcode.PROG, i, 1.0) for i in range(3)]
    kern = pk.FabricKernel(mini_lowered(rows=1, cols=24, host=words, rate=0.25))
    injected_at = []
    while kern.step():
        if kern.counters["host_injected"] > len(injected_at):
            injected_at.append(kern.cycle)
    assert injected_at == [4, 8, 12]


def test_unwrap_wave_forward_and_backward():
    assert pk.unwrap_wave(0, 5) == 5
    assert pk.unwrap_wave(100, 130 % 128) == 130
    assert pk.unwrap_wave(100, 80) == 80
    assert pk.unwrap_wave(127, 0) == 128


def test_duplicate_fold_rank_is_an_error():
    kern = pk.FabricKernel(mini_lowered())
    kern._slot_deposit(0, pk.ROLE_GROUP, 0, 1, 1.0)
    with pytest.raises(pk.FabricError, match="duplicate rank"):
        kern._slot_deposit(0, pk.ROLE_GROUP, 0, 1, 2.0)


def test_reorder_window_overflow_is_an_error():
    kern = pk.FabricKernel(mini_lowered())
    for wave in range(128):
        kern._slot_deposit(0, pk.ROLE_GROUP, wave, 0, 0.0)
    with pytest.raises(pk.FabricError, match="window overflow"):
        kern._slot_deposit(0, pk.ROLE_GROUP, 128, 0, 0.0)


def test_pixel_before_weight_load_is_an_error():
    program = build_program(
        CASE, CASE_GEOM, synth_values((4, 2, 3, 3), 1), synth_values((2, 8, 8), 2)
    )
    low = lower_program(program)
    low.host_stream = [w for w in low.host_stream if (w >> 60) != int(Opcode.PROG)]
    with pytest.raises(pk.FabricError, match="before weight"):
        pk.FabricKernel(low).run()


# ------------------------------------------------- end-to-end layer runs


def case_trace(**kwargs):
    w = synth_values((4, 2, 3, 3), seed=11)
    x = synth_values((2, 8, 8), seed=12)
    trace = simulate_layer(CASE, CASE_GEOM, w, x, **kwargs)
    plan = build_fold_plan(CASE, CASE_GEOM)
    return trace, conv2d_for_plan(x, w, plan)


def assert_bit_exact(got, want):
    assert got.shape == want.shape
    assert got.dtype == want.dtype == np.float32
    assert np.array_equal(
        got.view(np.uint32), want.view(np.uint32)
    ), f"max abs diff {np.abs(got - want).max()}"


def test_case_study_layer_is_bit_exact():
    trace, want = case_trace()
    assert_bit_exact(trace.outputs, want)


def test_case_study_counter_identities():
    trace, _ = case_trace()
    c = trace.counters
    # 4608 multiplies, 4352 fold adds, 256 activations
    assert c["fpu_ops"] == 9216
    assert c["handoffs_captured"] == 4 * 64
    assert c["tiles_stored"] == 4 * 64
    assert c["tile_words_released"] == 4 * 64
    assert c["created"] == c["retired"]
    assert c["express_boards"] > 0
    assert c["peak_tile_bytes"] <= 8 * 4 * 64


def test_identity_one_by_one_kernel():
    spec = LayerSpec("id", c_in=1, c_out=1, h=4, w=4, kh=1, kw=1, activation="none")
    geom = ArrayGeom(2, 8)
    w = np.full((1, 1, 1, 1), 2.0, dtype=np.float32)
    x = synth_values((1, 4, 4), seed=3)
    trace = simulate_layer(spec, geom, w, x)
    assert_bit_exact(trace.outputs, (np.float32(2.0) * x).astype(np.float32))


def test_multi_pass_multi_band_layer():
    spec = LayerSpec("deep", c_in=5, c_out=6, h=6, w=6, kh=3, kw=3, pad=1)
    w = synth_values((6, 5, 3, 3), seed=21)
    x = synth_values((5, 6, 6), seed=22)
    trace = simulate_layer(spec, CASE_GEOM, w, x)
    plan = build_fold_plan(spec, CASE_GEOM)
    assert_bit_exact(trace.outputs, conv2d_for_plan(x, w, plan))


def test_stride_two_layer():
    spec = LayerSpec("s2", c_in=1, c_out=2, h=7, w=7, kh=3, kw=3, stride=2, pad=1)
    w = synth_values((2, 1, 3, 3), seed=31)
    x = synth_values((1, 7, 7), seed=32)
    trace = simulate_layer(spec, CASE_GEOM, w, x)
    plan = build_fold_plan(spec, CASE_GEOM)
    assert_bit_exact(trace.outputs, conv2d_for_plan(x, w, plan))


def test_linear_activation_layer():
    spec = LayerSpec(
        "lin", c_in=2, c_out=4, h=8, w=8, kh=3, kw=3, pad=1, activation="none"
    )
    w = synth_values((4, 2, 3, 3), seed=41)
    x = synth_values((2, 8, 8), seed=42)
    trace = simulate_layer(spec, CASE_GEOM, w, x)
    plan = build_fold_plan(spec, CASE_GEOM)
    assert_bit_exact(trace.outputs, conv2d_for_plan(x, w, plan))


def test_fully_connected_shape():
    spec = LayerSpec("fc", c_in=3, c_out=5, h=4, w=4, kh=1, kw=1)
    w = synth_values((5, 3, 1, 1), seed=51)
    x = synth_values((3, 4, 4), seed=52)
    trace = simulate_layer(spec, CASE_GEOM, w, x)
    plan = build_fold_plan(spec, CASE_GEOM)
    assert_bit_exact(trace.outputs, conv2d_for_plan(x, w, plan))


def test_staged_pixel_lane_matches_host_lane():
    host_trace, want = case_trace()
    l1_trace, _ = case_trace(pixel_lane="l1")
    assert_bit_exact(host_trace.outputs, want)
    assert_bit_exact(l1_trace.outputs, want)
    assert l1_trace.counters["host_injected"] < host_trace.counters["host_injected"]


def test_runs_are_deterministic():
    a, _ = case_trace()
    b, _ = case_trace()
    assert a.counters == b.counters
    assert_bit_exact(a.outputs, b.outputs)


def test_cycle_count_is_data_independent():
    w = synth_values((4, 2, 3, 3), seed=11)
    zero = simulate_layer(CASE, CASE_GEOM, w, np.zeros((2, 8, 8), np.float32))
    rand = simulate_layer(CASE, CASE_GEOM, w, synth_values((2, 8, 8), seed=77))
    assert zero.counters == rand.counters


def test_shallow_fifos_change_timing_not_results():
    deep, want = case_trace()
    shallow, _ = case_trace(depth=2)
    assert_bit_exact(shallow.outputs, want)
    # backpressure reshapes the schedule but every word still lands
    assert shallow.counters["created"] == shallow.counters["retired"]
    assert shallow.counters["cycles"] != deep.counters["cycles"]


def test_slow_host_link_only_costs_cycles():
    fast, want = case_trace()
    slow, _ = case_trace(host_rate=2.0)
    assert_bit_exact(slow.outputs, want)
    assert slow.counters["cycles"] > fast.counters["cycles"]


def test_partial_sum_budget_is_enforced():
    w = synth_values((4, 2, 3, 3), seed=11)
    x = synth_values((2, 8, 8), seed=12)
    with pytest.raises(pk.FabricError, match="budget"):
        simulate_layer(CASE, CASE_GEOM, w, x, l1_tile_budget=64)


def test_idle_gap_beyond_reorder_window_is_rejected():
    spec = LayerSpec("wide-gap", c_in=3, c_out=8, h=8, w=8, kh=3, kw=3, pad=1)
    w = synth_values((8, 3, 3, 3), seed=61)
    x = synth_values((3, 8, 8), seed=62)
    with pytest.raises(ValueError, match="reorder window"):
        simulate_layer(spec, CASE_GEOM, w, x)


def test_pass_longer_than_skew_bound_is_rejected():
    # 16x16 output = 256 waves per pass; the 7-bit wave tags only keep
    # columns unambiguous while their mutual skew stays under 64 waves
    spec = LayerSpec("long-wave", c_in=2, c_out=4, h=16, w=16, kh=3, kw=3, pad=1)
    w = synth_values((4, 2, 3, 3), seed=63)
    x = synth_values((2, 16, 16), seed=64)
    with pytest.raises(ValueError, match="skew bound"):
        simulate_layer(spec, CASE_GEOM, w, x)


def test_max_pooling_matches_reference():
    x = synth_values((3, 8, 8), seed=71)
    out, counters = run_pool(x, CASE_GEOM, size=2, stride=2)
    assert_bit_exact(out, maxpool_ref(x, 2, 2))
    assert counters["created"] == counters["retired"]
