"""Message program generation.

A layer compiles into a sequence of phases, each a stream of items
injected through one of two lanes:

- ``host`` lane: enters at the column heads (row 0), paced by the host
  link rate.  Weight loads always use it; first-layer pixels do too.
- ``l1`` lane: on-chip buffer injections, delivered straight into the
  target site's top FIFO, at most one per column per cycle.  Staged
  pixels (layer >= 2), partial-sum releases, and activation messages
  use it.

Phase kinds:

- ``prog``   one PROG word per weight-holding site of the pass.
- ``pixels`` fresh input pixels, per consumption, row 0 only.  A pixel
  is fresh when no copy can supply it: at the first output column of a
  row sweep every kernel-column group is fresh; afterwards only the
  leading ``stride`` groups are (the rest receive a copy from the group
  ``stride`` positions left, spawned one wave earlier).  Padding
  positions inject explicit zeros so fold counts stay uniform.
- ``merge``  per wave: release directives replaying the stored partial
  tiles pass-ascending (the tile words themselves are runtime values,
  synthesized by the pass-fold column: UPDATE for the first pass,
  scalar add for middles, A_ADD for the last), then one RELU word per
  used row, armed with the handoff header so the result leaves for the
  staging buffer.  Layers without an activation skip the RELU words and
  arm the last tile word instead.

Waves sweep output elements p-outer, q-inner; wave index = p*Q + q.
The merge target for (row, wave) is column (wave + row) mod cols, which
spreads merge traffic diagonally instead of funneling each wave into a
single column.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .mapping import ArrayGeom, FoldPlan, LayerSpec, PassDesc, build_fold_plan
from .messages import (
    DUMP_MAGIC,
    Message,
    Opcode,
    PatternBits,
    describe,
    f32_bits,
    site_address,
)

# Handoff header armed on the message that carries a finished output off
# the array: the value becomes a pixel for whatever consumes it next.
HANDOFF_OP = Opcode.A_MULS


def oa_site(row: int, wave: int, cols: int) -> tuple[int, int]:
    """Merge (output accumulation) site for one fabric row and wave."""
    return row, (wave + row) % cols


def merge_opcode(pass_index: int, n_passes: int) -> Opcode:
    """Opcode of the stored partial for pass ``pass_index`` of a band."""
    if pass_index == 0:
        return Opcode.UPDATE
    if pass_index == n_passes - 1:
        return Opcode.A_ADD
    return Opcode.A_ADDS


def fresh_s_values(kw: int, stride: int, q: int) -> range:
    """Kernel columns whose pixels must be freshly injected at output
    column ``q``, left-to-right group order (s descending)."""
    if q == 0 or stride >= kw:
        return range(kw - 1, -1, -1)
    return range(kw - 1, kw - 1 - stride, -1)


def fresh_pixels_per_pass(spec: LayerSpec, blocks_used: int) -> int:
    """Closed-form count of fresh pixel words in one pass."""
    per_row_sweep = spec.kw + (spec.out_w - 1) * min(spec.stride, spec.kw)
    return spec.out_h * spec.kh * blocks_used * per_row_sweep


WORD = "word"
RELEASE = "rel"


@dataclass
class PhaseStream:
    """One ordered stream of injections."""

    name: str
    lane: str  # "host" | "l1"
    kind: str  # "prog" | "pixels" | "merge"
    band: int
    pass_seq: int | None  # global pass order for prog/pixels, None for merge
    items: list[tuple] = field(default_factory=list)

    def words(self) -> list[int]:
        return [rest[0] for tag, *rest in self.items if tag == WORD]

    def releases(self) -> list[tuple[int, int]]:
        return [(rest[0], rest[1]) for tag, *rest in self.items if tag == RELEASE]


@dataclass
class MessageProgram:
    spec: LayerSpec
    geom: ArrayGeom
    plan: FoldPlan
    phases: list[PhaseStream]

    def phase(self, name: str) -> PhaseStream:
        for ph in self.phases:
            if ph.name == name:
                return ph
        raise KeyError(name)

    def words_by_kind(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for ph in self.phases:
            out[ph.kind] = out.get(ph.kind, 0) + len(ph.words())
        return out

    def release_count(self) -> int:
        return sum(len(ph.releases()) for ph in self.phases)

    def directives(self) -> dict:
        spec, geom, plan = self.spec, self.geom, self.plan
        return {
            "layer": spec.name,
            "geom": f"{geom.rows}x{geom.cols}",
            "kernel": f"{spec.kh}x{spec.kw}",
            "stride": spec.stride,
            "pad": spec.pad,
            "activation": spec.activation,
            "in": f"{spec.c_in}x{spec.h}x{spec.w}",
            "out": f"{spec.c_out}x{spec.out_h}x{spec.out_w}",
            "bands": plan.bands,
            "passes_per_band": plan.passes_per_band,
            "blocks_per_pass": plan.role_map.blocks_per_pass,
            "waves": spec.waves,
        }

    def dump(self, out=None) -> str | None:
        """Write the program as a message dump; returns the text when
        ``out`` is None."""
        buf = io.StringIO() if out is None else out
        own = isinstance(out, str)
        fh = open(out, "w") if own else buf
        try:
            fh.write(DUMP_MAGIC + "\n")
            for key, value in self.directives().items():
                fh.write(f"#@ {key}={value}\n")
            for ph in self.phases:
                n_words = len(ph.words())
                fh.write(f"#@ phase name={ph.name} lane={ph.lane} kind={ph.kind} words={n_words}\n")
                for tag, *rest in ph.items:
                    if tag == RELEASE:
                        fh.write(f"#@ release={rest[0]}:{rest[1]}\n")
                    else:
                        fh.write(f"{rest[0]:016x}  # {describe(rest[0], self.geom.cols)}\n")
        finally:
            if own:
                fh.close()
        if out is None:
            return buf.getvalue()
        return None


def gen_prog(plan: FoldPlan, pass_desc: PassDesc, weights: np.ndarray) -> PhaseStream:
    """Weight-load words for one pass, row-major."""
    spec, geom, rm = plan.spec, plan.geom, plan.role_map
    phase = PhaseStream(
        name=f"prog:b{pass_desc.band}.k{pass_desc.pass_index}",
        lane="host",
        kind="prog",
        band=pass_desc.band,
        pass_seq=pass_desc.seq,
    )
    weights = np.asarray(weights, dtype=np.float32)
    for row, f in enumerate(pass_desc.filters):
        for slot, c in enumerate(pass_desc.channels):
            for s in range(spec.kw - 1, -1, -1):  # left-to-right columns
                for r in range(spec.kh):
                    col = rm.col_of(slot, s, r)
                    word = Message(
                        Opcode.PROG,
                        site_address(row, col, geom.cols),
                        f32_bits(float(weights[f, c, r, s])),
                    ).encode()
                    phase.items.append((WORD, word))
    return phase


def gen_pixels(
    plan: FoldPlan, pass_desc: PassDesc, x: np.ndarray, lane: str = "host"
) -> PhaseStream:
    """Fresh pixel words for one pass, wave-major."""
    spec, geom, rm = plan.spec, plan.geom, plan.role_map
    phase = PhaseStream(
        name=f"pixels:b{pass_desc.band}.k{pass_desc.pass_index}",
        lane=lane,
        kind="pixels",
        band=pass_desc.band,
        pass_seq=pass_desc.seq,
    )
    x = np.asarray(x, dtype=np.float32)
    xp = x
    if spec.pad:
        xp = np.pad(x, ((0, 0), (spec.pad, spec.pad), (spec.pad, spec.pad)))
    rows_used = pass_desc.rows_used
    shift = rows_used > 1
    hop = spec.stride * rm.group_width
    for p in range(spec.out_h):
        for q in range(spec.out_w):
            for slot, c in enumerate(pass_desc.channels):
                for s in fresh_s_values(spec.kw, spec.stride, q):
                    tstream = s - spec.stride >= 0 and q + 1 < spec.out_w
                    for r in range(spec.kh):
                        col = rm.col_of(slot, s, r)
                        value = float(xp[c, p * spec.stride + r, q * spec.stride + s])
                        word = Message(
                            Opcode.A_MULS,
                            site_address(0, col, geom.cols),
                            f32_bits(value),
                            pattern=PatternBits(
                                shift=shift,
                                tstream=tstream,
                                shift_step=hop if tstream else 0,
                            ),
                        ).encode()
                        phase.items.append((WORD, word))
    return phase


def gen_merge(plan: FoldPlan, band: int) -> PhaseStream:
    """Partial-tile releases plus activation words for one band."""
    spec, geom = plan.spec, plan.geom
    band_passes = [p for p in plan.passes if p.band == band]
    rows_used = band_passes[0].rows_used
    phase = PhaseStream(
        name=f"merge:b{band}", lane="l1", kind="merge", band=band, pass_seq=None
    )
    relu = spec.activation == "relu"
    for w in range(spec.waves):
        for p in band_passes:
            phase.items.append((RELEASE, p.seq, w))
        if relu:
            for row in range(rows_used):
                r, c = oa_site(row, w, geom.cols)
                addr = site_address(r, c, geom.cols)
                # Arm the handoff with the site's own address so the
                # off-fabric capture can be traced back to its source.
                word = Message(
                    Opcode.RELU, addr, 0, next_op=HANDOFF_OP, next_addr=addr
                ).encode()
                phase.items.append((WORD, word))
    return phase


def build_program(
    spec: LayerSpec,
    geom: ArrayGeom,
    weights: np.ndarray,
    x: np.ndarray,
    pixel_lane: str = "host",
) -> MessageProgram:
    """Compile one layer: per pass a prog phase then a pixel phase, per
    band a merge phase, bands in order."""
    if pixel_lane not in ("host", "l1"):
        raise ValueError(f"pixel lane must be host or l1, got {pixel_lane}")
    plan = build_fold_plan(spec, geom)
    phases: list[PhaseStream] = []
    for band in range(plan.bands):
        for pass_desc in (p for p in plan.passes if p.band == band):
            phases.append(gen_prog(plan, pass_desc, weights))
            phases.append(gen_pixels(plan, pass_desc, x, lane=pixel_lane))
        phases.append(gen_merge(plan, band))
    return MessageProgram(spec, geom, plan, phases)
