"""The compiled kernel and the pure-Python kernel must be
indistinguishable: same captures, same counters, same cycle counts,
same errors, for every program either one can run."""

import numpy as np
import pytest

ck = pytest.importorskip("mavec.fabric._kernel")

from mavec.fabric import _pykernel as pk
from mavec.fabric.simulator import lower_program, run_pool, simulate_layer
from mavec.mapping import ArrayGeom, LayerSpec
from mavec.oracle import synth_values
from mavec.schedule import build_program

GEOM = ArrayGeom(4, 24)


def both_traces(spec, weight_shape, x_shape, seed, **kwargs):
    w = synth_values(weight_shape, seed=seed)
    x = synth_values(x_shape, seed=seed + 1)
    py = simulate_layer(spec, GEOM, w, x, backend="python", **kwargs)
    cy = simulate_layer(spec, GEOM, w, x, backend="cython", **kwargs)
    return py, cy


def assert_twin(py, cy):
    assert py.counters == cy.counters
    assert np.array_equal(py.outputs.view(np.uint32), cy.outputs.view(np.uint32))


def test_case_study_parity():
    spec = LayerSpec("case", c_in=2, c_out=4, h=8, w=8, kh=3, kw=3, stride=1, pad=1)
    py, cy = both_traces(spec, (4, 2, 3, 3), (2, 8, 8), seed=11)
    assert_twin(py, cy)
    assert py.backend == "python" and cy.backend == "cython"


def test_multi_pass_multi_band_parity():
    spec = LayerSpec("deep", c_in=5, c_out=6, h=6, w=6, kh=3, kw=3, pad=1)
    py, cy = both_traces(spec, (6, 5, 3, 3), (5, 6, 6), seed=21)
    assert_twin(py, cy)


def test_stride_two_parity():
    spec = LayerSpec("s2", c_in=1, c_out=2, h=7, w=7, kh=3, kw=3, stride=2, pad=1)
    py, cy = both_traces(spec, (2, 1, 3, 3), (1, 7, 7), seed=31)
    assert_twin(py, cy)


def test_many_pass_full_wave_parity():
    # four fold passes, each at the full 64-wave window the tags allow
    spec = LayerSpec("f16", c_in=2, c_out=16, h=8, w=8, kh=3, kw=3, pad=1)
    py, cy = both_traces(spec, (16, 2, 3, 3), (2, 8, 8), seed=36)
    assert_twin(py, cy)


def test_linear_one_by_one_parity():
    spec = LayerSpec("fc", c_in=3, c_out=5, h=4, w=4, kh=1, kw=1, activation="none")
    py, cy = both_traces(spec, (5, 3, 1, 1), (3, 4, 4), seed=41)
    assert_twin(py, cy)


def test_staged_pixel_lane_parity():
    spec = LayerSpec("case", c_in=2, c_out=4, h=8, w=8, kh=3, kw=3, stride=1, pad=1)
    py, cy = both_traces(spec, (4, 2, 3, 3), (2, 8, 8), seed=51, pixel_lane="l1")
    assert_twin(py, cy)


def test_backpressure_parity():
    spec = LayerSpec("case", c_in=2, c_out=4, h=8, w=8, kh=3, kw=3, stride=1, pad=1)
    py, cy = both_traces(spec, (4, 2, 3, 3), (2, 8, 8), seed=61, depth=2, host_rate=2.0)
    assert_twin(py, cy)


def test_pool_parity():
    x = synth_values((3, 8, 8), seed=71)
    py_out, py_counters = run_pool(x, GEOM, size=2, stride=2, backend="python")
    cy_out, cy_counters = run_pool(x, GEOM, size=2, stride=2, backend="cython")
    assert py_counters == cy_counters
    assert np.array_equal(py_out.view(np.uint32), cy_out.view(np.uint32))


def test_error_parity_budget():
    spec = LayerSpec("case", c_in=2, c_out=4, h=8, w=8, kh=3, kw=3, stride=1, pad=1)
    w = synth_values((4, 2, 3, 3), seed=11)
    x = synth_values((2, 8, 8), seed=12)
    errors = []
    for backend in ("python", "cython"):
        with pytest.raises(pk.FabricError) as info:
            simulate_layer(spec, GEOM, w, x, l1_tile_budget=64, backend=backend)
        errors.append(str(info.value))
    assert errors[0] == errors[1]


def test_error_parity_pixel_before_weight():
    spec = LayerSpec("case", c_in=2, c_out=4, h=8, w=8, kh=3, kw=3, stride=1, pad=1)
    program = build_program(
        spec, GEOM, synth_values((4, 2, 3, 3), 1), synth_values((2, 8, 8), 2)
    )
    low = lower_program(program)
    low.host_stream = [w for w in low.host_stream if (w >> 60) != 1]
    errors = []
    for kernel in (pk.FabricKernel, ck.FabricKernel):
        with pytest.raises(pk.FabricError) as info:
            kernel(low).run()
        errors.append(str(info.value))
    assert errors[0] == errors[1]


def test_word_helpers_agree():
    for op, addr, bits, tail in [
        (9, 37, 0x40490FDB, 0xBEEF),
        (13, 0, 0, 0),
        (7, 4095, 0xFFFFFFFF, 0xFFFF),
    ]:
        assert pk.make_word(op, addr, bits, tail) == ck.make_word(op, addr, bits, tail)
    for highest, tag in [(0, 5), (100, 2), (100, 80), (127, 0), (4000, 4000 % 128)]:
        assert pk.unwrap_wave(highest, tag) == ck.unwrap_wave(highest, tag)
    for value in [0.0, 1.5, -2.25, 3.141592653589793, 1e-42]:
        assert pk.f_to_bits(value) == ck.f_to_bits(value)
        assert pk.bits_to_f(pk.f_to_bits(value)) == ck.bits_to_f(ck.f_to_bits(value))
