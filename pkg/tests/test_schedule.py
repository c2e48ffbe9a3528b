"""Message-program generator tests."""

import numpy as np
import pytest

from mavec.mapping import ArrayGeom, LayerSpec, build_fold_plan
from mavec.messages import Message, Opcode, address_rowcol, bits_f32, load_dump
from mavec.oracle import synth_values
from mavec.schedule import (
    HANDOFF_OP,
    build_program,
    fresh_pixels_per_pass,
    fresh_s_values,
    gen_pixels,
    merge_opcode,
    oa_site,
)

CASE = LayerSpec("case", c_in=2, c_out=4, h=8, w=8, kh=3, kw=3, stride=1, pad=1)
CASE_GEOM = ArrayGeom(4, 24)


def case_program(seed=0, lane="host"):
    x = synth_values((2, 8, 8), seed=seed)
    w = synth_values((4, 2, 3, 3), seed=seed + 1)
    return build_program(CASE, CASE_GEOM, w, x, pixel_lane=lane), x, w


def test_merge_opcode_by_fold_position():
    assert merge_opcode(0, 1) == Opcode.UPDATE
    assert merge_opcode(0, 4) == Opcode.UPDATE
    assert merge_opcode(1, 4) == Opcode.A_ADDS
    assert merge_opcode(2, 4) == Opcode.A_ADDS
    assert merge_opcode(3, 4) == Opcode.A_ADD
    assert merge_opcode(1, 2) == Opcode.A_ADD


def test_fresh_groups_rule():
    assert list(fresh_s_values(3, 1, 0)) == [2, 1, 0]
    assert list(fresh_s_values(3, 1, 5)) == [2]
    assert list(fresh_s_values(3, 2, 4)) == [2, 1]
    assert list(fresh_s_values(3, 4, 9)) == [2, 1, 0]  # stride past kernel
    assert list(fresh_s_values(1, 1, 3)) == [0]


def test_prog_phase_covers_weight_sites_once():
    prog, x, w = case_program()
    phase = prog.phase("prog:b0.k0")
    assert phase.lane == "host" and phase.kind == "prog"
    words = phase.words()
    assert len(words) == 4 * 2 * 9  # rows x channels x kernel
    seen = {}
    for word in words:
        msg = Message.decode(word)
        assert msg.opcode == Opcode.PROG
        assert msg.next_op is None
        seen.setdefault(msg.address, []).append(msg.payload_f32)
    assert all(len(v) == 1 for v in seen.values())
    # spot-check one site: row 2, block 1, kernel col s=0, row r=1 -> col 21
    addr = 2 * 24 + 21
    assert seen[addr][0] == pytest.approx(float(w[2, 1, 1, 0]))


def test_pixel_phase_counts_and_padding():
    prog, x, w = case_program()
    phase = prog.phase("pixels:b0.k0")
    words = phase.words()
    assert len(words) == fresh_pixels_per_pass(CASE, blocks_used=2)
    # wave (0,0): every group fresh, r=0 and s=2 positions read padding zeros
    first = Message.decode(words[0])
    assert first.opcode == Opcode.A_MULS
    assert first.payload_f32 == 0.0  # corner of the padded input
    row, col = address_rowcol(first.address, 24)
    assert row == 0 and col == 0  # block 0, s=2 group, r=0


def test_pixel_pattern_flags():
    prog, x, w = case_program()
    words = prog.phase("pixels:b0.k0").words()
    by_wave_col: dict[tuple, Message] = {}
    wave = 0
    count = 0
    per_wave = [18 if q == 0 else 6 for q in range(8)] * 8  # q==0 refreshes all groups
    idx = 0
    for n in per_wave:
        for _ in range(n):
            msg = Message.decode(words[idx])
            _, col = address_rowcol(msg.address, 24)
            by_wave_col[(wave, col)] = msg
            idx += 1
        wave += 1
    assert idx == len(words)
    # all pixels broadcast down (4 rows used); only groups with a right
    # neighbor use, and q=Q-1 never streams right
    m = by_wave_col[(0, 0)]  # s=2, q=0
    assert m.pattern.shift and m.pattern.tstream and m.pattern.shift_step == 4
    m = by_wave_col[(0, 8)]  # s=0 has no group to its right
    assert m.pattern.shift and not m.pattern.tstream
    m = by_wave_col[(7, 0)]  # q=7 is the last output column
    assert m.pattern.shift and not m.pattern.tstream


def test_single_row_band_has_no_shift():
    spec = LayerSpec("thin", c_in=1, c_out=1, h=5, w=5, kh=3, kw=3, pad=1)
    plan = build_fold_plan(spec, ArrayGeom(4, 24))
    x = synth_values((1, 5, 5), seed=3)
    phase = gen_pixels(plan, plan.passes[0], x)
    for word in phase.words():
        assert not Message.decode(word).pattern.shift


def test_merge_phase_structure():
    prog, x, w = case_program()
    phase = prog.phase("merge:b0")
    assert phase.lane == "l1"
    releases = phase.releases()
    assert releases == [(0, w) for w in range(64)]
    relu_words = phase.words()
    assert len(relu_words) == 64 * 4  # waves x rows used
    # per wave, the release precedes that wave's relu words
    first_relu = Message.decode(relu_words[0])
    assert first_relu.opcode == Opcode.RELU
    # handoff successor is armed with the merge site's own address
    assert first_relu.next_op == HANDOFF_OP
    assert first_relu.next_addr == first_relu.address
    # relu for wave 0 row 2 sits at the diagonal merge site
    expect = {address_rowcol(Message.decode(wd).address, 24) for wd in relu_words[:4]}
    assert expect == {oa_site(rp, 0, 24) for rp in range(4)}


def test_merge_interleaves_release_then_relu_per_wave():
    prog, _, _ = case_program()
    items = prog.phase("merge:b0").items
    assert [t for t, *_ in items[:5]] == ["rel", "word", "word", "word", "word"]
    assert items[5][0] == "rel" and items[5][2] == 1


def test_no_relu_words_when_activation_none():
    spec = LayerSpec("lin", c_in=2, c_out=4, h=8, w=8, kh=3, kw=3, pad=1, activation="none")
    x = synth_values((2, 8, 8), seed=5)
    w = synth_values((4, 2, 3, 3), seed=6)
    prog = build_program(spec, CASE_GEOM, w, x)
    phase = prog.phase("merge:b0")
    assert phase.words() == []
    assert len(phase.releases()) == 64


def test_band_and_pass_phase_ordering():
    spec = LayerSpec("multi", c_in=5, c_out=6, h=6, w=6, kh=3, kw=3, pad=1)
    geom = ArrayGeom(4, 24)  # 2 blocks/pass -> 3 passes; 6 filters -> 2 bands
    x = synth_values((5, 6, 6), seed=7)
    w = synth_values((6, 5, 3, 3), seed=8)
    prog = build_program(spec, geom, w, x)
    names = [p.name for p in prog.phases]
    assert names == [
        "prog:b0.k0", "pixels:b0.k0", "prog:b0.k1", "pixels:b0.k1",
        "prog:b0.k2", "pixels:b0.k2", "merge:b0",
        "prog:b1.k0", "pixels:b1.k0", "prog:b1.k1", "pixels:b1.k1",
        "prog:b1.k2", "pixels:b1.k2", "merge:b1",
    ]
    merge0 = prog.phase("merge:b0")
    assert merge0.releases()[:3] == [(0, 0), (1, 0), (2, 0)]
    merge1 = prog.phase("merge:b1")
    assert merge1.releases()[:3] == [(3, 0), (4, 0), (5, 0)]


def test_staged_pixel_lane():
    prog, _, _ = case_program(lane="l1")
    assert prog.phase("pixels:b0.k0").lane == "l1"
    assert prog.phase("prog:b0.k0").lane == "host"
    host_kinds = {p.kind for p in prog.phases if p.lane == "host"}
    assert host_kinds == {"prog"}


def test_program_determinism_and_dump_round_trip():
    a, _, _ = case_program(seed=9)
    b, _, _ = case_program(seed=9)
    text_a = a.dump()
    assert text_a == b.dump()
    words, directives = load_dump(text_a)
    assert len(words) == sum(len(p.words()) for p in a.phases)
    assert directives["layer"] == "case"
    assert directives["geom"] == "4x24"
    assert directives["blocks_per_pass"] == "2"
    assert "release" in directives  # release directives present in dump


def test_pixel_values_follow_input_plane():
    prog, x, w = case_program(seed=11)
    words = prog.phase("pixels:b0.k0").words()
    # wave (0,0) emission order: channel slots outer, s descending, r ascending
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    idx = 0
    for c in range(2):
        for s in (2, 1, 0):
            for r in range(3):
                msg = Message.decode(words[idx])
                assert msg.payload_f32 == float(xp[c, r, s])
                idx += 1


def test_fresh_pixel_closed_form_matches_enumeration():
    rng = np.random.default_rng(13)
    for _ in range(10):
        kh, kw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        stride = int(rng.integers(1, 5))
        spec = LayerSpec(
            "r", c_in=int(rng.integers(1, 4)), c_out=3,
            h=int(rng.integers(kh + 2, kh + 8)), w=int(rng.integers(kw + 2, kw + 8)),
            kh=kh, kw=kw, stride=stride, pad=int(rng.integers(0, 2)),
        )
        geom = ArrayGeom(4, (kh + 1) * kw * 2)
        plan = build_fold_plan(spec, geom)
        x = synth_values((spec.c_in, spec.h, spec.w), seed=1)
        for pd in plan.passes:
            phase = gen_pixels(plan, pd, x)
            assert len(phase.words()) == fresh_pixels_per_pass(spec, pd.blocks_used)
