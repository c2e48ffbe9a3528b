"""Layer folding: how a convolution layer maps onto the site array.

Filters map to fabric rows and the reduction tree maps to columns.  For
a layer with kernel height KH and kernel width KW, each input channel
occupies one *block* of (KH+1)*KW consecutive columns, made of KW
*groups* (one per kernel column s, laid out s descending left to right)
of KH+1 columns each:

    group(block b, kernel col s) base = b*(KH+1)*KW + (KW-1-s)*(KH+1)
    compute column for kernel row r   = base + r          (holds weight)
    group fold column (C1)            = base + KH

The group fold column folds the KH kernel-row products of its group.
The last reserved column of each block additionally folds the KW group
sums of the block (C2), and the rightmost column of the array
additionally folds the per-block sums of the pass into the wave partial
(C3).  Columns to the right of the last block (when the width is not a
multiple of the block width) carry no weights; the C3 role still lives
at the rightmost column, which keeps merge traffic off the busy fold
columns on wide arrays.

blocks_per_pass = cols // block_width input channels are reduced per
pass; a band of min(rows, remaining filters) filters is processed
ceil(C / blocks_per_pass) passes, and bands advance until all filters
are done.  Each pass sweeps all P*Q output elements (*waves*) in
p-outer, q-inner order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ADDRESS_SPACE = 1 << 12  # site addresses are 12 bits

ACTIVATIONS = ("relu", "none")


@dataclass(frozen=True)
class LayerSpec:
    """One convolution layer (fully-connected = 1x1 kernel on 1x1 input)."""

    name: str
    c_in: int
    c_out: int
    h: int
    w: int
    kh: int = 3
    kw: int = 3
    stride: int = 1
    pad: int = 0
    activation: str = "relu"

    def __post_init__(self):
        for fld in ("c_in", "c_out", "h", "w", "kh", "kw", "stride"):
            if getattr(self, fld) < 1:
                raise ValueError(f"{self.name}: {fld} must be >= 1")
        if self.pad < 0:
            raise ValueError(f"{self.name}: pad must be >= 0")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"{self.name}: activation must be one of {ACTIVATIONS}")
        if self.out_h < 1 or self.out_w < 1:
            raise ValueError(f"{self.name}: kernel does not fit the padded input")

    @property
    def out_h(self) -> int:
        return (self.h + 2 * self.pad - self.kh) // self.stride + 1

    @property
    def out_w(self) -> int:
        return (self.w + 2 * self.pad - self.kw) // self.stride + 1

    @property
    def waves(self) -> int:
        return self.out_h * self.out_w

    @property
    def macs(self) -> int:
        return self.c_out * self.c_in * self.kh * self.kw * self.waves

    @property
    def in_bytes(self) -> int:
        return 4 * self.c_in * self.h * self.w

    @property
    def weight_bytes(self) -> int:
        return 4 * self.c_out * self.c_in * self.kh * self.kw

    @property
    def out_bytes(self) -> int:
        return 4 * self.c_out * self.waves


@dataclass(frozen=True)
class ArrayGeom:
    """Site array shape."""

    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("array must have at least one row and column")
        if self.rows * self.cols > ADDRESS_SPACE:
            raise ValueError(
                f"{self.rows}x{self.cols} array exceeds the {ADDRESS_SPACE}-site address space"
            )

    @property
    def sites(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class ColumnRole:
    """Role of one column of the array for a given layer."""

    col: int
    block: int | None  # channel slot within the pass, None right of the last block
    s: int | None  # kernel column, None for off-block columns
    r: int | None  # kernel row for weight-holding columns, None otherwise
    folds_group: bool = False  # folds the KH products of its group
    folds_block: bool = False  # folds the KW group sums of its block
    folds_pass: bool = False  # folds the per-block sums into the wave partial

    @property
    def holds_weight(self) -> bool:
        return self.r is not None


@dataclass(frozen=True)
class ColumnRoleMap:
    geom: ArrayGeom
    kh: int
    kw: int
    group_width: int
    block_width: int
    blocks_per_pass: int
    roles: tuple[ColumnRole, ...]

    @property
    def compute_cols(self) -> tuple[int, ...]:
        return tuple(role.col for role in self.roles if role.holds_weight)

    @property
    def group_fold_cols(self) -> tuple[int, ...]:
        return tuple(role.col for role in self.roles if role.folds_group)

    @property
    def block_fold_cols(self) -> tuple[int, ...]:
        return tuple(role.col for role in self.roles if role.folds_block)

    @property
    def pass_fold_col(self) -> int:
        return self.geom.cols - 1

    def group_base(self, block: int, s: int) -> int:
        return block * self.block_width + (self.kw - 1 - s) * self.group_width

    def col_of(self, block: int, s: int, r: int | None = None) -> int:
        """Column of kernel position (r, s) in channel slot ``block``;
        r None gives the group fold column."""
        base = self.group_base(block, s)
        return base + (self.kh if r is None else r)

    def as_table(self) -> list[dict]:
        out = []
        for role in self.roles:
            out.append(
                {
                    "col": role.col,
                    "block": role.block,
                    "s": role.s,
                    "r": role.r,
                    "folds": "".join(
                        tag
                        for tag, on in (
                            ("G", role.folds_group),
                            ("B", role.folds_block),
                            ("P", role.folds_pass),
                        )
                        if on
                    ),
                }
            )
        return out


def column_roles(spec: LayerSpec, geom: ArrayGeom) -> ColumnRoleMap:
    group_width = spec.kh + 1
    block_width = group_width * spec.kw
    blocks = geom.cols // block_width
    if blocks < 1:
        raise ValueError(
            f"{spec.name}: a {spec.kh}x{spec.kw} kernel needs {block_width} columns "
            f"per channel, array has {geom.cols}"
        )
    roles: list[ColumnRole] = []
    for col in range(geom.cols):
        block, within = divmod(col, block_width)
        if block >= blocks:
            roles.append(
                ColumnRole(col, None, None, None, folds_pass=(col == geom.cols - 1))
            )
            continue
        group_idx, offset = divmod(within, group_width)
        s = spec.kw - 1 - group_idx
        if offset < spec.kh:
            roles.append(ColumnRole(col, block, s, offset))
        else:
            is_block_fold = within == block_width - 1
            is_pass_fold = col == geom.cols - 1
            roles.append(
                ColumnRole(
                    col,
                    block,
                    s,
                    None,
                    folds_group=True,
                    folds_block=is_block_fold,
                    folds_pass=is_pass_fold,
                )
            )
    return ColumnRoleMap(
        geom=geom,
        kh=spec.kh,
        kw=spec.kw,
        group_width=group_width,
        block_width=block_width,
        blocks_per_pass=blocks,
        roles=tuple(roles),
    )


@dataclass(frozen=True)
class PassDesc:
    """One sweep of all output elements for a (filter band, channel set)."""

    seq: int  # global pass order
    band: int
    pass_index: int  # within the band
    filters: tuple[int, ...]  # filter handled by each fabric row, top down
    channels: tuple[int, ...]  # input channels, one per block slot
    fold_pos: str  # "only" | "first" | "middle" | "last"

    @property
    def rows_used(self) -> int:
        return len(self.filters)

    @property
    def blocks_used(self) -> int:
        return len(self.channels)


@dataclass(frozen=True)
class FoldPlan:
    spec: LayerSpec
    geom: ArrayGeom
    role_map: ColumnRoleMap
    passes: tuple[PassDesc, ...] = field(repr=False)

    @property
    def bands(self) -> int:
        return math.ceil(self.spec.c_out / self.geom.rows)

    @property
    def passes_per_band(self) -> int:
        return math.ceil(self.spec.c_in / self.role_map.blocks_per_pass)

    @property
    def group_fold_width(self) -> int:
        return self.spec.kh  # operands folded per group per wave

    @property
    def block_fold_width(self) -> int:
        return self.spec.kw  # operands folded per block per wave


def build_fold_plan(spec: LayerSpec, geom: ArrayGeom) -> FoldPlan:
    role_map = column_roles(spec, geom)
    cpf = role_map.blocks_per_pass
    passes: list[PassDesc] = []
    seq = 0
    n_bands = math.ceil(spec.c_out / geom.rows)
    n_passes = math.ceil(spec.c_in / cpf)
    for band in range(n_bands):
        f_lo = band * geom.rows
        filters = tuple(range(f_lo, min(f_lo + geom.rows, spec.c_out)))
        for k in range(n_passes):
            c_lo = k * cpf
            channels = tuple(range(c_lo, min(c_lo + cpf, spec.c_in)))
            if n_passes == 1:
                pos = "only"
            elif k == 0:
                pos = "first"
            elif k == n_passes - 1:
                pos = "last"
            else:
                pos = "middle"
            passes.append(PassDesc(seq, band, k, filters, channels, pos))
            seq += 1
    return FoldPlan(spec, geom, role_map, tuple(passes))


def coverage_check(plan: FoldPlan) -> None:
    """Every (filter, channel) pair must be swept exactly once."""
    spec = plan.spec
    seen = np.zeros((spec.c_out, spec.c_in), dtype=np.int32)
    for p in plan.passes:
        for f in p.filters:
            for c in p.channels:
                seen[f, c] += 1
    if not (seen == 1).all():
        bad = np.argwhere(seen != 1)[:5].tolist()
        raise AssertionError(f"{spec.name}: fold plan coverage broken at (f,c) {bad}")


def weights_for_pass(
    pass_desc: PassDesc, plan: FoldPlan, weights: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Weight value per site for one pass.

    ``weights`` is the layer's (c_out, c_in, kh, kw) float32 tensor.
    Returns (grid, mask): grid[row, col] is the weight the site holds and
    mask marks sites that hold one.
    """
    spec, geom, rm = plan.spec, plan.geom, plan.role_map
    if weights.shape != (spec.c_out, spec.c_in, spec.kh, spec.kw):
        raise ValueError(
            f"weights shape {weights.shape} != "
            f"{(spec.c_out, spec.c_in, spec.kh, spec.kw)}"
        )
    grid = np.zeros((geom.rows, geom.cols), dtype=np.float32)
    mask = np.zeros((geom.rows, geom.cols), dtype=bool)
    for row, f in enumerate(pass_desc.filters):
        for slot, c in enumerate(pass_desc.channels):
            for s in range(spec.kw):
                for r in range(spec.kh):
                    col = rm.col_of(slot, s, r)
                    grid[row, col] = weights[f, c, r, s]
                    mask[row, col] = True
    return grid, mask
