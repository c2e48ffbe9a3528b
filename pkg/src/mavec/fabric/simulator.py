"""Fabric driver.

Lowers a compiled message program into the flat arrays the cycle
kernel consumes, runs it on the selected backend, and interprets the
captured off-fabric words back into an output tensor.

Capture interpretation relies on two ordering guarantees the engine
provides: a site's off-fabric emissions leave in execution order, and
the merge lane replays waves in order, so the n-th handoff captured
from merge site (row, col) belongs to the n-th (band, wave) pair that
maps to that site.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..mapping import ArrayGeom, LayerSpec
from ..messages import Opcode, site_address
from ..schedule import MessageProgram, build_program, merge_opcode
from . import KERNEL_BACKEND, kernel as default_kernel

DEFAULT_HOST_RATE = 15.75  # words per cycle; see perf.IoConfig for the table
DEFAULT_L1_BYTES = int(24.5 * 2**20)

# Fold deposits carry a 7-bit wave tag, unwrapped against the highest
# wave already seen at the slot.  That stays unambiguous only while the
# gap between consecutive deposits at one slot is well under 64 waves;
# a margin absorbs in-flight skew.
MAX_TAG_GAP = 56

# Columns drain at different rates: a column that spawns pixel copies
# shares its one right-port grant per cycle between the copy and its
# fold deposit, while a column that only deposits does not, so the
# progress gap between columns feeding one fold slot grows with pass
# length.  Once that skew reaches 64 waves the 7-bit tags wrap and
# deposits fold into the wrong wave, so passes longer than half the
# 128-slot window cannot be run cycle-exact.
MAX_WAVES_DIRECT = 64


def _check_tag_gaps(plan, spec) -> None:
    waves = spec.waves
    if waves > MAX_WAVES_DIRECT:
        raise ValueError(
            f"layer {spec.name}: {waves} waves per pass exceeds the "
            f"{MAX_WAVES_DIRECT}-wave skew bound of the reorder window; "
            f"this layer cannot run cycle-exact (tile it spatially or "
            f"use the analytic tier)"
        )
    seqs = plan.passes
    blocks = max(p.blocks_used for p in seqs)
    rows = max(p.rows_used for p in seqs)
    for b in range(blocks):
        for r in range(rows):
            active = [
                p.seq for p in seqs if b < p.blocks_used and r < p.rows_used
            ]
            for s0, s1 in zip(active, active[1:]):
                gap = (s1 - s0 - 1) * waves + 1
                if gap > MAX_TAG_GAP:
                    raise ValueError(
                        f"layer {spec.name}: fold site for block {b} row {r} "
                        f"idles {gap} waves between passes {s0} and {s1}, "
                        f"beyond the {MAX_TAG_GAP}-wave reorder window; "
                        f"this layer cannot run cycle-exact (use the "
                        f"analytic tier or a wider array)"
                    )


@dataclass
class LoweredLayer:
    """Flat, kernel-ready view of one layer program."""

    rows: int
    cols: int
    depth: int
    dual_dequeue: bool
    waves: int
    out_w: int
    stride: int
    kh: int
    kw: int
    hop: int
    col_kind: list  # 0 off, 1 compute, 2 fold
    col_slot: list
    col_s: list
    col_r: list
    col_leading: list
    col_c1: list
    col_c2: list
    col_group_rank: list
    col_block_rank: list
    col_is_group: list
    col_is_block: list
    col_is_pass: list
    pass_col: int
    n_seq: int
    seq_blocks_used: list
    seq_rows_used: list
    seq_band: list
    seq_merge_op: list
    seq_arm: list
    host_stream: list
    host_rate: float
    l1_stage: list
    l1_merge: list
    livelock_limit: int = 10_000
    l1_tile_budget: int = 0  # bytes; 0 = unlimited
    # staged words wait until the host lane has injected this many words
    # (keeps staged pixels behind their pass's weight loads)
    stage_gates: list | None = None


def lower_program(
    program: MessageProgram,
    host_rate: float = DEFAULT_HOST_RATE,
    depth: int = 4,
    dual_dequeue: bool = True,
    livelock_limit: int = 10_000,
    l1_tile_budget: int = 0,
) -> LoweredLayer:
    spec, geom, plan = program.spec, program.geom, program.plan
    _check_tag_gaps(plan, spec)
    rm = plan.role_map
    cols = geom.cols
    col_kind = [0] * cols
    col_slot = [0] * cols
    col_s = [-1] * cols
    col_r = [-1] * cols
    col_leading = [0] * cols
    col_c1 = [-1] * cols
    col_c2 = [-1] * cols
    col_group_rank = [-1] * cols
    col_block_rank = [-1] * cols
    col_is_group = [0] * cols
    col_is_block = [0] * cols
    col_is_pass = [0] * cols
    for role in rm.roles:
        c = role.col
        if role.holds_weight:
            col_kind[c] = 1
            col_slot[c] = role.block
            col_s[c] = role.s
            col_r[c] = role.r
            col_leading[c] = 1 if role.s >= spec.kw - spec.stride else 0
            col_c1[c] = rm.col_of(role.block, role.s, None)
        elif role.folds_group or role.folds_pass:
            col_kind[c] = 2
            if role.folds_group:
                col_slot[c] = role.block
                col_s[c] = role.s
                col_group_rank[c] = spec.kw - 1 - role.s
                col_c2[c] = role.block * rm.block_width + rm.block_width - 1
                col_is_group[c] = 1
            if role.folds_block:
                col_is_block[c] = 1
                col_block_rank[c] = role.block
            if role.folds_pass:
                col_is_pass[c] = 1

    n_seq = len(plan.passes)
    seq_blocks_used = [p.blocks_used for p in plan.passes]
    seq_rows_used = [p.rows_used for p in plan.passes]
    seq_band = [p.band for p in plan.passes]
    n_passes = plan.passes_per_band
    seq_merge_op = [int(merge_opcode(p.pass_index, n_passes)) for p in plan.passes]
    arm_on_last = spec.activation == "none"
    seq_arm = [
        1 if (arm_on_last and p.pass_index == n_passes - 1) else 0 for p in plan.passes
    ]

    host_stream: list[int] = []
    l1_stage: list[int] = []
    stage_gates: list[int] = []
    l1_merge: list[tuple] = []
    for phase in program.phases:
        if phase.lane == "host":
            host_stream.extend(phase.words())
        elif phase.kind == "merge":
            for tag, *rest in phase.items:
                if tag == "rel":
                    l1_merge.append(("r", rest[0], rest[1]))
                else:
                    l1_merge.append(("w", rest[0]))
        else:
            gate = len(host_stream)
            words = phase.words()
            l1_stage.extend(words)
            stage_gates.extend([gate] * len(words))

    return LoweredLayer(
        rows=geom.rows,
        cols=cols,
        depth=depth,
        dual_dequeue=dual_dequeue,
        waves=spec.waves,
        out_w=spec.out_w,
        stride=spec.stride,
        kh=spec.kh,
        kw=spec.kw,
        hop=spec.stride * rm.group_width,
        col_kind=col_kind,
        col_slot=col_slot,
        col_s=col_s,
        col_r=col_r,
        col_leading=col_leading,
        col_c1=col_c1,
        col_c2=col_c2,
        col_group_rank=col_group_rank,
        col_block_rank=col_block_rank,
        col_is_group=col_is_group,
        col_is_block=col_is_block,
        col_is_pass=col_is_pass,
        pass_col=cols - 1,
        n_seq=n_seq,
        seq_blocks_used=seq_blocks_used,
        seq_rows_used=seq_rows_used,
        seq_band=seq_band,
        seq_merge_op=seq_merge_op,
        seq_arm=seq_arm,
        host_stream=host_stream,
        host_rate=host_rate,
        l1_stage=l1_stage,
        l1_merge=l1_merge,
        livelock_limit=livelock_limit,
        l1_tile_budget=l1_tile_budget,
        stage_gates=stage_gates,
    )


def _backend_module(backend: str | None):
    if backend is None:
        return default_kernel, KERNEL_BACKEND
    if backend == "python":
        from . import _pykernel

        return _pykernel, "python"
    if backend == "cython":
        from . import _kernel  # type: ignore[import-not-found]

        return _kernel, "cython"
    raise ValueError(f"unknown backend {backend!r}")


@dataclass
class LayerTrace:
    """One simulated layer: outputs plus everything the perf model needs."""

    spec: LayerSpec
    geom: ArrayGeom
    outputs: np.ndarray
    counters: dict
    backend: str
    host_words: int
    l1_words: int
    words_by_kind: dict = field(default_factory=dict)

    @property
    def cycles(self) -> int:
        return self.counters["cycles"]

    @property
    def macs(self) -> int:
        return self.spec.macs


def map_captures(program: MessageProgram, captures: list) -> np.ndarray:
    """Assign captured handoff values to (filter, p, q) output positions."""
    spec, geom, plan = program.spec, program.geom, program.plan
    rows, cols = geom.rows, geom.cols
    waves = spec.waves
    band_rows = {}
    for p in plan.passes:
        band_rows[p.band] = p.rows_used
    out = np.full((spec.c_out, spec.out_h, spec.out_w), np.nan, dtype=np.float32)
    seen = {}
    from ._pykernel import bits_to_f

    for site, bits in captures:
        row, col = divmod(site, cols)
        w0 = (col - row) % cols
        site_waves = list(range(w0, waves, cols))
        if not site_waves:
            raise ValueError(f"capture from site ({row},{col}) that merges no wave")
        bands = [b for b in sorted(band_rows) if row < band_rows[b]]
        k = seen.get(site, 0)
        seen[site] = k + 1
        m = len(site_waves)
        if k // m >= len(bands):
            raise ValueError(f"site ({row},{col}) captured more outputs than scheduled")
        band = bands[k // m]
        wave = site_waves[k % m]
        f = band * rows + row
        out[f, wave // spec.out_w, wave % spec.out_w] = np.float32(bits_to_f(bits))
    if np.isnan(out).any():
        missing = int(np.isnan(out).sum())
        raise ValueError(f"{missing} output elements never left the fabric")
    return out


def run_program(
    program: MessageProgram,
    host_rate: float = DEFAULT_HOST_RATE,
    depth: int = 4,
    dual_dequeue: bool = True,
    livelock_limit: int = 10_000,
    l1_tile_budget: int = 0,
    backend: str | None = None,
) -> LayerTrace:
    low = lower_program(
        program,
        host_rate=host_rate,
        depth=depth,
        dual_dequeue=dual_dequeue,
        livelock_limit=livelock_limit,
        l1_tile_budget=l1_tile_budget,
    )
    module, name = _backend_module(backend)
    result = module.FabricKernel(low).run()
    outputs = map_captures(program, result["captures"])
    return LayerTrace(
        spec=program.spec,
        geom=program.geom,
        outputs=outputs,
        counters=result["counters"],
        backend=name,
        host_words=len(low.host_stream),
        l1_words=len(low.l1_stage) + sum(1 for it in low.l1_merge if it[0] == "w"),
        words_by_kind=program.words_by_kind(),
    )


def simulate_layer(
    spec: LayerSpec,
    geom: ArrayGeom,
    weights: np.ndarray,
    x: np.ndarray,
    pixel_lane: str = "host",
    **kwargs,
) -> LayerTrace:
    program = build_program(spec, geom, weights, x, pixel_lane=pixel_lane)
    return run_program(program, **kwargs)


# ------------------------------------------------------------------- pooling


def build_pool_items(
    shape: tuple[int, int, int], size: int, stride: int, geom: ArrayGeom
) -> list[tuple]:
    """Max-pool as a message stream over staged activations.

    Output element o lands on site (row (o // cols) mod rows,
    col o mod cols); its window streams as UPDATE then CMP words, the
    last one armed to hand the maximum off."""
    c, h, w = shape
    po = (h - size) // stride + 1
    qo = (w - size) // stride + 1
    items: list[tuple] = []
    for o in range(c * po * qo):
        ci, rest = divmod(o, po * qo)
        p, q = divmod(rest, qo)
        row = (o // geom.cols) % geom.rows
        col = o % geom.cols
        addr = site_address(row, col, geom.cols)
        window = [
            (ci, p * stride + dr, q * stride + dc)
            for dr in range(size)
            for dc in range(size)
        ]
        for j, pos in enumerate(window):
            last = j == len(window) - 1
            op = Opcode.UPDATE if j == 0 else Opcode.CMP
            tail = ((int(Opcode.A_MULS) << 12) | addr) if last else 0
            items.append(("addr", addr, op, pos, tail))
    return items


def run_pool(
    x: np.ndarray,
    geom: ArrayGeom,
    size: int = 2,
    stride: int | None = None,
    backend: str | None = None,
) -> tuple[np.ndarray, dict]:
    """Run max pooling on the fabric; returns (pooled, counters)."""
    from ..messages import f32_bits

    stride = size if stride is None else stride
    x = np.asarray(x, dtype=np.float32)
    c, h, w = x.shape
    po = (h - size) // stride + 1
    qo = (w - size) // stride + 1
    words = []
    for _, addr, op, (ci, hp, wp), tail in build_pool_items((c, h, w), size, stride, geom):
        word = (int(op) << 60) | (addr << 48) | (f32_bits(float(x[ci, hp, wp])) << 16) | tail
        words.append(word)
    low = LoweredLayer(
        rows=geom.rows,
        cols=geom.cols,
        depth=4,
        dual_dequeue=True,
        waves=1,
        out_w=1,
        stride=1,
        kh=1,
        kw=1,
        hop=0,
        col_kind=[0] * geom.cols,
        col_slot=[0] * geom.cols,
        col_s=[-1] * geom.cols,
        col_r=[-1] * geom.cols,
        col_leading=[0] * geom.cols,
        col_c1=[-1] * geom.cols,
        col_c2=[-1] * geom.cols,
        col_group_rank=[-1] * geom.cols,
        col_block_rank=[-1] * geom.cols,
        col_is_group=[0] * geom.cols,
        col_is_block=[0] * geom.cols,
        col_is_pass=[0] * geom.cols,
        pass_col=geom.cols - 1,
        n_seq=1,
        seq_blocks_used=[0],
        seq_rows_used=[geom.rows],
        seq_band=[0],
        seq_merge_op=[int(Opcode.UPDATE)],
        seq_arm=[0],
        host_stream=[],
        host_rate=1.0,
        l1_stage=words,
        l1_merge=[],
    )
    module, _ = _backend_module(backend)
    result = module.FabricKernel(low).run()
    from ._pykernel import bits_to_f

    out = np.full((c, po, qo), np.nan, dtype=np.float32)
    seen: dict = {}
    sites = geom.rows * geom.cols
    for site, bits in result["captures"]:
        row, col = divmod(site, geom.cols)
        k = seen.get(site, 0)
        seen[site] = k + 1
        o = (k * geom.rows + row) * geom.cols + col
        ci, rest = divmod(o, po * qo)
        p, q = divmod(rest, qo)
        out[ci, p, q] = np.float32(bits_to_f(bits))
    if np.isnan(out).any():
        raise ValueError("pool outputs missing")
    return out, result["counters"]
