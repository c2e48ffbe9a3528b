"""Fold mapper tests, anchored on the 4x24-array worked example."""

import numpy as np
import pytest

from mavec.mapping import (
    ArrayGeom,
    LayerSpec,
    build_fold_plan,
    column_roles,
    coverage_check,
    weights_for_pass,
)

CASE = LayerSpec("case", c_in=2, c_out=4, h=8, w=8, kh=3, kw=3, stride=1, pad=1)
CASE_GEOM = ArrayGeom(4, 24)


def test_case_study_dimensions():
    assert CASE.out_h == 8 and CASE.out_w == 8
    assert CASE.waves == 64
    assert CASE.macs == 4608


def test_case_study_roles():
    rm = column_roles(CASE, CASE_GEOM)
    assert rm.group_width == 4
    assert rm.block_width == 12
    assert rm.blocks_per_pass == 2
    assert rm.group_fold_cols == (3, 7, 11, 15, 19, 23)
    assert rm.block_fold_cols == (11, 23)
    assert rm.pass_fold_col == 23
    assert rm.roles[23].folds_group and rm.roles[23].folds_block and rm.roles[23].folds_pass
    assert rm.roles[11].folds_group and rm.roles[11].folds_block
    assert not rm.roles[11].folds_pass


def test_case_study_weight_layout():
    # Within a block the leftmost group is kernel column s=2; columns hold
    # kernel rows ascending; flattened index f = r*3 + s.
    plan = build_fold_plan(CASE, CASE_GEOM)
    weights = np.zeros((4, 2, 3, 3), dtype=np.float32)
    for f in range(4):
        for c in range(2):
            for r in range(3):
                for s in range(3):
                    weights[f, c, r, s] = f * 100 + c * 50 + (r * 3 + s)
    grid, mask = weights_for_pass(plan.passes[0], plan, weights)
    flat_by_col = [2, 5, 8, None, 1, 4, 7, None, 0, 3, 6, None]
    for row in range(4):
        for block in range(2):
            for within, flat in enumerate(flat_by_col):
                col = block * 12 + within
                if flat is None:
                    assert not mask[row, col]
                else:
                    assert mask[row, col]
                    assert grid[row, col] == row * 100 + block * 50 + flat


def test_case_study_single_pass():
    plan = build_fold_plan(CASE, CASE_GEOM)
    assert plan.bands == 1 and plan.passes_per_band == 1
    assert len(plan.passes) == 1
    p = plan.passes[0]
    assert p.filters == (0, 1, 2, 3)
    assert p.channels == (0, 1)
    assert p.fold_pos == "only"
    coverage_check(plan)


def test_vgg_first_layer_on_64():
    spec = LayerSpec("conv1_1", c_in=3, c_out=64, h=224, w=224, kh=3, kw=3, pad=1)
    plan = build_fold_plan(spec, ArrayGeom(64, 64))
    assert spec.macs == 86_704_128
    assert plan.role_map.blocks_per_pass == 5
    assert plan.bands == 1 and plan.passes_per_band == 1
    assert plan.passes[0].channels == (0, 1, 2)  # 3 of 5 slots used
    coverage_check(plan)


def test_wide_layer_band_structure():
    spec = LayerSpec("conv3_1", c_in=128, c_out=256, h=56, w=56, kh=3, kw=3, pad=1)
    plan = build_fold_plan(spec, ArrayGeom(64, 64))
    assert plan.bands == 4
    assert plan.passes_per_band == 26  # ceil(128/5)
    assert len(plan.passes) == 104
    per_band = [p for p in plan.passes if p.band == 2]
    assert per_band[0].fold_pos == "first"
    assert per_band[-1].fold_pos == "last"
    assert all(p.fold_pos == "middle" for p in per_band[1:-1])
    assert per_band[0].filters == tuple(range(128, 192))
    assert per_band[-1].channels == (125, 126, 127)  # 128 = 25*5 + 3
    coverage_check(plan)


def test_idle_tail_columns_on_64():
    rm = column_roles(CASE, ArrayGeom(4, 64))
    assert rm.blocks_per_pass == 5
    for col in range(60, 64):
        assert rm.roles[col].block is None
        assert not rm.roles[col].holds_weight
    assert rm.pass_fold_col == 63
    assert rm.roles[63].folds_pass and not rm.roles[63].folds_group
    assert 63 not in rm.block_fold_cols


def test_1x1_kernel_layout():
    spec = LayerSpec("fc", c_in=10, c_out=6, h=1, w=1, kh=1, kw=1, pad=0)
    rm = column_roles(spec, ArrayGeom(8, 24))
    assert rm.block_width == 2
    assert rm.blocks_per_pass == 12
    # one group per block, so every group fold column also folds its block
    assert rm.group_fold_cols == rm.block_fold_cols == tuple(range(1, 24, 2))
    plan = build_fold_plan(spec, ArrayGeom(8, 24))
    assert plan.bands == 1 and plan.passes_per_band == 1
    coverage_check(plan)


def test_group_order_is_s_descending():
    rm = column_roles(CASE, CASE_GEOM)
    assert [rm.roles[c].s for c in (0, 4, 8)] == [2, 1, 0]
    assert rm.col_of(0, 2, 0) == 0
    assert rm.col_of(0, 0, 2) == 10
    assert rm.col_of(1, 2, r=None) == 15


def test_errors():
    with pytest.raises(ValueError):
        column_roles(CASE, ArrayGeom(4, 8))  # narrower than one block
    with pytest.raises(ValueError):
        ArrayGeom(65, 64)  # exceeds 12-bit address space
    with pytest.raises(ValueError):
        LayerSpec("bad", c_in=1, c_out=1, h=2, w=2, kh=3, kw=3, pad=0)
    with pytest.raises(ValueError):
        LayerSpec("bad", c_in=1, c_out=1, h=2, w=2, kh=1, kw=1, activation="tanh")


def test_random_plans_cover_every_pair_once():
    rng = np.random.default_rng(7)
    for _ in range(25):
        kh = int(rng.integers(1, 5))
        kw = int(rng.integers(1, 5))
        spec = LayerSpec(
            "rand",
            c_in=int(rng.integers(1, 20)),
            c_out=int(rng.integers(1, 30)),
            h=int(rng.integers(kh, kh + 6)),
            w=int(rng.integers(kw, kw + 6)),
            kh=kh,
            kw=kw,
            stride=int(rng.integers(1, 3)),
            pad=int(rng.integers(0, 2)),
        )
        block = (kh + 1) * kw
        geom = ArrayGeom(int(rng.integers(1, 9)), block * int(rng.integers(1, 4)) + int(rng.integers(0, 5)))
        plan = build_fold_plan(spec, geom)
        coverage_check(plan)
        # pass sequencing is band-major and gapless
        assert [p.seq for p in plan.passes] == list(range(len(plan.passes)))
        assert len(plan.passes) == plan.bands * plan.passes_per_band
