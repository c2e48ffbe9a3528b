"""Cycle-level fabric engine (pure Python reference).

The fabric is a rows x cols grid of message-processing sites.  Each
site owns two input FIFOs (top, left), two output ports (right,
bottom), a weight register pair (active + staging, switched at pass
boundaries), an accumulator, and reorder slots for the fold roles the
site's column plays.

Cycle contract, applied in this order every cycle:

A. Injections.  On-chip buffer (L1) lanes first - the staged-pixel
   lane, then the merge lane - each delivering words straight into the
   target site's top FIFO, at most one injection per column per cycle,
   strictly in stream order.  Then the host lane: floor(rate) words per
   cycle when rate >= 1, else one word every ceil(1/rate) cycles,
   entering the top FIFO of row 0 of the target's column and stalling
   on the first full FIFO (serial link).
B. Express advance.  Each row has two rightward express channels -
   a pixel channel and a reduce channel - each with one slot per
   column position moving one column per cycle.  Pixel copies always
   ride the pixel channel; any other rightward message boards the
   reduce channel when its remaining distance is at least
   EXPRESS_MIN_HOPS.  A pixel copy reaching its destination column
   leaves into that site's one-deep exit register (stalling in place
   while the register is occupied); a reduce-channel word leaves into
   the site's exit queue of depth EXIT_QUEUE.  Both exits are
   left-lane inputs, so channel drain never waits on FIFO space.
C. Site processing, row-major over sites with work.  First port
   grants: the right port sends at most one word per cycle (reduce
   ingress first, else the hop queue to the neighbour FIFO), the
   pixel channel admits one copy, and the bottom port sends one
   (off-fabric to L1, or the top FIFO below).  Then consumption: at
   most one dequeue from the top lane and one from the left lane
   (exit register first, then the left FIFO), at most one decoded
   execution per site per cycle.  A fold deposit at the head of the
   exit queue drains through the site's reduce engine, one per cycle,
   in parallel with the decoder; a non-deposit word there waits for
   the decoder like any left-lane head.  PROG consumes no execution
   slot.  A message addressed elsewhere is forwarded (down first,
   then right) without using the execution slot.  A pixel at a lane
   head whose source does not match the site's expected source for
   its current wave stalls that lane (peek-stall).  A message may
   execute only while the bounded hop and bottom queues have room for
   one emission each; express ingress is admitted without a gate.
   Hop and bottom queues drain strictly rightward and downward to
   off-fabric sinks and the express channels drain through the exit
   structures, whose consumption never depends on express state - the
   blocking graph is acyclic, so the fabric cannot deadlock.  When
   both lanes hold executable heads the top one wins.
D. Commit.  Words enqueued this cycle become visible next cycle
   (double-buffered FIFOs); same-cycle arrivals to one FIFO are
   ordered by source class (top: from-above, L1, host; left:
   neighbour, express-exit).

Execution semantics by opcode (payload is an IEEE-754 single):

- PROG    staging weight <- payload (register write, no FPU).
- A_MULS  pixel: result = active_weight * payload; emits the product
  to the column's fold target tagged (role, rank, wave mod 128); at
  row 0 also spawns the next-group copy when the pattern streams, and
  every row spawns the down copy while rows remain in the band.
- A_ADDS  with a role tag: fold-slot deposit; when the slot holds all
  ranks it folds in rank order (first assigns, rest add) and the
  result moves one fold level up.  Cross-block sums accumulate as a
  running partial that hops from each partial-sum column to the next,
  left to right, and at the pass-fold column the finished sum becomes
  a stored partial tile word addressed to the merge site
  (wave + row) mod cols.  With a zero role tag: acc += payload.
- UPDATE  acc <- payload (no FPU); A_ADD/A_SUB/A_DIV: acc op payload;
  A_SUBS/A_DIVS: scalar forms of the same; CMP: acc <- max(acc,
  payload); RELU: acc <- acc if acc > 0 else 0; AV_ADD: active_weight
  += payload.  Any of these carrying a successor header emits the
  result as a new message; a successor with the pixel opcode leaves
  the fabric into the staging buffer (handoff).

The engine never branches on data values, so cycle counts are
data-independent; all arbitration is fixed-priority, so runs are
deterministic.
"""

from __future__ import annotations

import math
from struct import pack, unpack

OP_PROG = 0b0001
OP_A_MUL = 0b0010
OP_RELU = 0b0011
OP_A_ADD = 0b0100
OP_A_SUB = 0b0101
OP_A_DIV = 0b0110
OP_A_ADDS = 0b0111
OP_A_SUBS = 0b1000
OP_A_MULS = 0b1001
OP_A_DIVS = 0b1010
OP_AV_ADD = 0b1011
OP_CMP = 0b1100
OP_UPDATE = 0b1101

ROLE_NONE = 0
ROLE_GROUP = 1
ROLE_BLOCK = 2
ROLE_PASS = 3

EXPRESS_MIN_HOPS = 8
EXIT_QUEUE = 4
FIFO_DEPTH = 4
PENDING_CAP = 4
LIVELOCK_LIMIT = 10_000

# Tile words from one row arrive at L1 almost in (pass, wave) order; a
# band's final pass has fewer fold contributors, so its words can run a
# few waves ahead of the previous pass's tail.  The intake matches each
# arrival against the next TILE_MATCH_WINDOW expected words by
# (address, opcode, tail), which stays unambiguous because an early
# arrival always carries the final-pass opcode.
TILE_MATCH_WINDOW = 12

# source-class priorities for same-cycle FIFO arrivals
SRC_ABOVE = 0
SRC_L1 = 1
SRC_HOST = 2
SRC_NEIGHBOR = 0
SRC_EXPRESS = 1


class FabricError(RuntimeError):
    pass


def f32(x: float) -> float:
    """Round a python float to IEEE-754 single precision."""
    return unpack("<f", pack("<f", x))[0]


def bits_to_f(bits: int) -> float:
    return unpack("<f", pack("<I", bits & 0xFFFFFFFF))[0]


def f_to_bits(x: float) -> int:
    return unpack("<I", pack("<f", x))[0]


def _op(w: int) -> int:
    return (w >> 60) & 0xF


def _addr(w: int) -> int:
    return (w >> 48) & 0xFFF


def _payload(w: int) -> int:
    return (w >> 16) & 0xFFFFFFFF


def _tail(w: int) -> int:
    return w & 0xFFFF


def _role(tail: int) -> int:
    return (((tail >> 15) & 1) << 1) | ((tail >> 14) & 1)


def _rank(tail: int) -> int:
    return (tail >> 7) & 0x3F


def _wavetag(tail: int) -> int:
    return tail & 0x7F


def _tstream(tail: int) -> bool:
    return bool(tail & (1 << 14))


def _shift(tail: int) -> bool:
    return bool(tail & (1 << 15))


def _step(tail: int) -> int:
    return (tail >> 7) & 0x3F


def make_word(op: int, addr: int, payload_bits: int, tail: int) -> int:
    return (op << 60) | (addr << 48) | ((payload_bits & 0xFFFFFFFF) << 16) | (tail & 0xFFFF)


def deposit_word(addr: int, payload_bits: int, role: int, rank: int, wavetag: int) -> int:
    tail = (((role >> 1) & 1) << 15) | ((role & 1) << 14) | ((rank & 0x3F) << 7) | (wavetag & 0x7F)
    return make_word(OP_A_ADDS, addr, payload_bits, tail)


def unwrap_wave(highest: int, tag: int) -> int:
    """Recover a full wave index from its 7-bit tag, given the highest
    wave seen so far at this slot group (skew must stay below 64)."""
    diff = (tag - highest) & 0x7F
    if diff < 64:
        return highest + diff
    return highest - (128 - diff)


class FabricKernel:
    """Executes one lowered layer program cycle by cycle."""

    def __init__(self, low):
        self.low = low
        self.rows = low.rows
        self.cols = low.cols
        self.sites = self.rows * self.cols
        self.depth = low.depth
        self.dual_dequeue = low.dual_dequeue

        n = self.sites
        self.w_active = [0.0] * n
        self.w_staging = [0.0] * n
        self.staging_written = [0] * n
        self.acc = [0.0] * n
        self.wip = [0] * n  # wave within the current pass
        self.seq_cur = [-1] * n  # current pass (global seq) per compute site

        self.top_live = [[] for _ in range(n)]
        self.top_staged = [[] for _ in range(n)]
        self.left_live = [[] for _ in range(n)]
        self.left_staged = [[] for _ in range(n)]
        self.exit_pix = [None] * n  # pixel express exit register, depth 1
        self.exit_fold = [[] for _ in range(n)]  # reduce express exit queue
        self.pend_right = [[] for _ in range(n)]  # hop words to col+1
        self.pend_bus = [[] for _ in range(n)]  # reduce ingress words
        self.pend_bus_pix = [[] for _ in range(n)]  # pixel ingress words
        self.pend_bottom = [[] for _ in range(n)]  # (word, route)

        # fold reorder slots: (site, role) -> {wave: [got_mask, values]}
        self.slots: dict = {}
        self.slot_highest: dict = {}

        # express channels: per row {position: (word, dest_col)}; pixel
        # copies ride their own channel so fold traffic never queues
        # behind a stalled copy (and vice versa)
        self.express = [dict() for _ in range(self.rows)]  # reduce
        self.express_pix = [dict() for _ in range(self.rows)]  # pixel
        self.express_count = 0
        self.peak_bus_pend = 0
        # partial-sum columns in chain order (block index -> column)
        self.c2_cols = [c for c in range(self.cols) if low.col_is_block[c]]

        # L1 side
        self.tiles: dict = {}  # (seq, wave) -> [words]
        self.tile_bytes = 0
        self.peak_tile_bytes = 0
        self.tile_expect = {}  # row -> [(seq, wave, addr, op, tail), ...]
        self.tile_gen = {}  # row -> next (seq, wave) to enumerate
        self.captures: list = []  # (site, payload_bits)

        self.host_pos = 0
        self.host_acc = 0.0
        self.stage_pos = 0
        self.merge_queue = list(low.l1_merge)
        self.merge_pos = 0

        self.cycle = 0
        self.last_progress = 0
        self.active: set = set()
        self.active_next: set = set()

        self.counters = {
            "cycles": 0,
            "fpu_ops": 0,
            "host_injected": 0,
            "l1_stage_injected": 0,
            "l1_merge_injected": 0,
            "spawned_down": 0,
            "spawned_right": 0,
            "deposits_emitted": 0,
            "tiles_stored": 0,
            "tile_words_released": 0,
            "handoffs_captured": 0,
            "forwards": 0,
            "express_boards": 0,
            "express_moves": 0,
            "dequeues_top": 0,
            "dequeues_left": 0,
            "dequeues_exit": 0,
            "executions": 0,
            "inflight_integral": 0,
            "active_site_integral": 0,
            "fpu_site_integral": 0,
            "nan_events": 0,
            "created": 0,
            "retired": 0,
            "stall_peek": 0,
            "stall_pending": 0,
        }
        self.executed_by_op = {}
        self._progress = False
        self._fpu_sites = set()

    # ---------------------------------------------------------------- helpers

    def _site(self, row: int, col: int) -> int:
        return row * self.cols + col

    def _wake(self, idx: int) -> None:
        self.active_next.add(idx)

    def _stage_top(self, idx: int, word: int, src: int) -> bool:
        if len(self.top_live[idx]) + len(self.top_staged[idx]) >= self.depth:
            return False
        self.top_staged[idx].append((src, word))
        self._wake(idx)
        return True

    def _stage_left(self, idx: int, word: int, src: int) -> bool:
        if len(self.left_live[idx]) + len(self.left_staged[idx]) >= self.depth:
            return False
        self.left_staged[idx].append((src, word))
        self._wake(idx)
        return True

    def _is_active_in_seq(self, idx: int, seq: int) -> bool:
        low = self.low
        row, col = divmod(idx, self.cols)
        slot = low.col_slot[col]
        return slot < low.seq_blocks_used[seq] and row < low.seq_rows_used[seq]

    def _advance_seq(self, idx: int) -> None:
        seq = self.seq_cur[idx] + 1
        n_seq = self.low.n_seq
        while seq < n_seq and not self._is_active_in_seq(idx, seq):
            seq += 1
        self.seq_cur[idx] = seq  # may equal n_seq (done)

    def _expected_source(self, idx: int) -> str:
        """Which FIFO the next pixel for this compute site arrives on."""
        low = self.low
        row, col = divmod(idx, self.cols)
        if row > 0:
            return "top"
        if low.col_leading[col]:
            return "top"
        q = self.wip[idx] % low.out_w
        return "top" if q == 0 else "left"

    # ------------------------------------------------------------- injections

    def _inject_l1(self) -> None:
        low = self.low
        used_cols = set()
        # staged-pixel lane first
        gates = low.stage_gates
        while self.stage_pos < len(low.l1_stage):
            if gates is not None and gates[self.stage_pos] > self.host_pos:
                break  # this pass's weight loads have not all entered yet
            word = low.l1_stage[self.stage_pos]
            col = _addr(word) % self.cols
            if col in used_cols:
                break
            if not self._stage_top(_addr(word), word, SRC_L1):
                break
            used_cols.add(col)
            self.stage_pos += 1
            self.counters["l1_stage_injected"] += 1
            self.counters["created"] += 1
            self._progress = True
        # merge lane: release directives expand into stored tile words
        while self.merge_pos < len(self.merge_queue):
            item = self.merge_queue[self.merge_pos]
            if item[0] == "r":
                key = (item[1], item[2])
                tile = self.tiles.get(key)
                need = low.seq_rows_used[item[1]]
                if tile is None or len(tile) < need:
                    break  # not ready yet; strict in-order lane
                words = [("t", w) for w in tile]
                del self.tiles[key]
                self.tile_bytes -= 8 * len(words)
                self.merge_queue[self.merge_pos : self.merge_pos + 1] = words
                self.counters["tile_words_released"] += len(words)
                self._progress = True
                continue
            word = item[1]
            addr = _addr(word)
            col = addr % self.cols
            if col in used_cols:
                break
            if not self._stage_top(addr, word, SRC_L1):
                break
            used_cols.add(col)
            self.merge_pos += 1
            self.counters["l1_merge_injected"] += 1
            if item[0] == "w":  # tile words were already counted at creation
                self.counters["created"] += 1
            self._progress = True

    def _host_budget(self) -> int:
        rate = self.low.host_rate
        if rate >= 1.0:
            return int(rate)
        period = math.ceil(1.0 / rate)
        return 1 if self.cycle % period == 0 else 0

    def _inject_host(self) -> None:
        low = self.low
        budget = self._host_budget()
        while budget > 0 and self.host_pos < len(low.host_stream):
            word = low.host_stream[self.host_pos]
            col = _addr(word) % self.cols
            if not self._stage_top(col, word, SRC_HOST):
                break  # serial link: head-of-line stall
            self.host_pos += 1
            budget -= 1
            self.counters["host_injected"] += 1
            self.counters["created"] += 1
            self._progress = True

    # ---------------------------------------------------------- express lane

    def _express_advance(self) -> None:
        for row in range(self.rows):
            chan = self.express[row]
            for col in sorted(chan, reverse=True):
                word, dest = chan[col]
                if col == dest:
                    idx = self._site(row, col)
                    if len(self.exit_fold[idx]) < EXIT_QUEUE:
                        self.exit_fold[idx].append(word)
                        self._wake(idx)
                        del chan[col]
                        self.express_count -= 1
                        self._progress = True
                elif (col + 1) not in chan and col + 1 < self.cols:
                    chan[col + 1] = chan.pop(col)
                    self.counters["express_moves"] += 1
                    self._progress = True
            chan = self.express_pix[row]
            for col in sorted(chan, reverse=True):
                word, dest = chan[col]
                if col == dest:
                    idx = self._site(row, col)
                    if self.exit_pix[idx] is None:
                        self.exit_pix[idx] = word
                        self._wake(idx)
                        del chan[col]
                        self.express_count -= 1
                        self._progress = True
                elif (col + 1) not in chan and col + 1 < self.cols:
                    chan[col + 1] = chan.pop(col)
                    self.counters["express_moves"] += 1
                    self._progress = True

    # -------------------------------------------------------------- emissions

    def _rides_bus(self, idx: int, word: int, is_pixel_copy: bool) -> bool:
        return (
            is_pixel_copy
            or (_addr(word) % self.cols) - (idx % self.cols) >= EXPRESS_MIN_HOPS
        )

    def _emit_right(self, idx: int, word: int, is_pixel_copy: bool) -> None:
        if is_pixel_copy:
            self.pend_bus_pix[idx].append(word)
        elif self._rides_bus(idx, word, False):
            self.pend_bus[idx].append(word)
        else:
            self.pend_right[idx].append(word)
        self._wake(idx)

    def _emit_bottom(self, idx: int, word: int, to_l1: bool) -> None:
        self.pend_bottom[idx].append((word, "l1" if to_l1 else "down"))
        self._wake(idx)

    def _grant_ports(self, idx: int) -> None:
        row, col = divmod(idx, self.cols)
        granted = False
        bus = self.pend_bus[idx]
        if bus:
            chan = self.express[row]
            if col not in chan:
                word = bus.pop(0)
                chan[col] = (word, _addr(word) % self.cols)
                self.express_count += 1
                self.counters["express_boards"] += 1
                self._progress = True
                granted = True
        bus = self.pend_bus_pix[idx]
        if bus:
            chan = self.express_pix[row]
            if col not in chan:
                word = bus.pop(0)
                chan[col] = (word, _addr(word) % self.cols)
                self.express_count += 1
                self.counters["express_boards"] += 1
                self._progress = True
        pr = self.pend_right[idx]
        if pr and not granted:
            nidx = self._site(row, col + 1)
            if self._stage_left(nidx, pr[0], SRC_NEIGHBOR):
                pr.pop(0)
                self._progress = True
        pb = self.pend_bottom[idx]
        if pb:
            word, route = pb[0]
            if route == "l1":
                pb.pop(0)
                self._capture(idx, word)
                self._progress = True
            else:
                nidx = self._site(row + 1, col)
                if self._stage_top(nidx, word, SRC_ABOVE):
                    pb.pop(0)
                    self._progress = True

    # ------------------------------------------------------------- L1 capture

    def _capture(self, idx: int, word: int) -> None:
        op = _op(word)
        row = idx // self.cols
        if op == OP_A_MULS:
            # finished output value leaving the fabric
            self.captures.append((idx, _payload(word)))
            self.counters["handoffs_captured"] += 1
            self.counters["retired"] += 1
            return
        # stored partial tile word from the pass-fold column
        low = self.low
        expect = self.tile_expect.setdefault(row, [])
        self._extend_expect(row, expect)
        meta = (_addr(word), _op(word), _tail(word))
        hit = None
        for i, entry in enumerate(expect[:TILE_MATCH_WINDOW]):
            if entry[2:] == meta:
                hit = i
                break
        if hit is None:
            raise FabricError(
                f"row {row}: tile word {word:#018x} matches none of the next "
                f"{min(TILE_MATCH_WINDOW, len(expect))} expected words"
            )
        seq, wave = expect.pop(hit)[:2]
        self.tiles.setdefault((seq, wave), []).append(word)
        self.tile_bytes += 8
        if self.tile_bytes > self.peak_tile_bytes:
            self.peak_tile_bytes = self.tile_bytes
        if low.l1_tile_budget and self.tile_bytes > low.l1_tile_budget:
            raise FabricError(
                f"partial-sum storage exceeded the on-chip budget "
                f"({self.tile_bytes} > {low.l1_tile_budget} bytes); "
                f"use the analytic tier for layers this wide"
            )
        self.counters["tiles_stored"] += 1

    def _expected_tile_meta(self, row: int, seq: int, wave: int) -> tuple:
        low = self.low
        oa_addr = row * self.cols + (wave + row) % self.cols
        tail = (OP_A_MULS << 12) | oa_addr if low.seq_arm[seq] else 0
        return (seq, wave, oa_addr, low.seq_merge_op[seq], tail)

    def _extend_expect(self, row: int, expect: list) -> None:
        low = self.low
        cur = self.tile_gen.get(row)
        if cur is None:
            seq = 0
            while seq < low.n_seq and row >= low.seq_rows_used[seq]:
                seq += 1
            cur = (seq, 0)
        seq, wave = cur
        while len(expect) < 2 * TILE_MATCH_WINDOW and seq < low.n_seq:
            expect.append(self._expected_tile_meta(row, seq, wave))
            wave += 1
            if wave == low.waves:
                seq += 1
                while seq < low.n_seq and row >= low.seq_rows_used[seq]:
                    seq += 1
                wave = 0
        self.tile_gen[row] = (seq, wave)

    # -------------------------------------------------------------- fold logic

    def _slot_deposit(self, idx: int, role: int, wave: int, rank: int, value: float) -> None:
        low = self.low
        key = (idx, role)
        expected = self._role_expected(idx, role, wave)
        if rank >= expected:
            raise FabricError(f"site {idx}: rank {rank} >= expected {expected} (role {role})")
        group = self.slots.setdefault(key, {})
        slot = group.get(wave)
        if slot is None:
            if len(group) >= 128:
                raise FabricError(f"site {idx}: reorder window overflow (role {role})")
            slot = [0, [0.0] * expected]
            group[wave] = slot
        mask, values = slot
        bit = 1 << rank
        if mask & bit:
            raise FabricError(f"site {idx}: duplicate rank {rank} wave {wave} (role {role})")
        slot[0] = mask | bit
        values[rank] = value
        if slot[0] == (1 << expected) - 1:
            del group[wave]
            result = values[0]
            for i in range(1, expected):
                result = f32(result + values[i])
            self.counters["fpu_ops"] += expected - 1
            if expected > 1:
                self._fpu_sites.add(idx)
            self._fold_complete(idx, role, wave, result)

    def _role_expected(self, idx: int, role: int, wave: int) -> int:
        low = self.low
        if role == ROLE_GROUP:
            return low.kh
        if role == ROLE_BLOCK:
            return low.kw
        # pass level: the running cross-block partial chains through the
        # partial-sum columns, so interior chain stops hold two ranks
        # (incoming partial, own block sum) and endpoints hold one
        seq = wave // low.waves
        if seq >= low.n_seq:
            raise FabricError(f"site {idx}: pass-fold wave {wave} beyond program")
        bu = low.seq_blocks_used[seq]
        b = low.col_block_rank[idx % self.cols]
        if b < 0 or b >= bu or b == 0:
            return 1
        return 2

    def _fold_complete(self, idx: int, role: int, wave: int, value: float) -> None:
        low = self.low
        row, col = divmod(idx, self.cols)
        bits = f_to_bits(value)
        if value != value:
            self.counters["nan_events"] += 1
        tag = wave & 0x7F
        if role == ROLE_GROUP:
            rank = low.col_group_rank[col]
            if low.col_is_block[col]:
                self._slot_deposit(idx, ROLE_BLOCK, wave, rank, value)
            else:
                target = row * self.cols + low.col_c2[col]
                self._emit_right(idx, deposit_word(target, bits, ROLE_BLOCK, rank, tag), False)
                self.counters["deposits_emitted"] += 1
                self.counters["created"] += 1
        elif role == ROLE_BLOCK:
            b = low.col_block_rank[col]
            if low.col_is_pass[col]:
                self._slot_deposit(idx, ROLE_PASS, wave, 1 if b >= 1 else 0, value)
            elif b == 0:
                self._send_partial(idx, row, b, wave, bits, tag)
            else:
                self._slot_deposit(idx, ROLE_PASS, wave, 1, value)
        elif not low.col_is_pass[col]:  # ROLE_PASS at an interior chain stop
            self._send_partial(idx, row, low.col_block_rank[col], wave, bits, tag)
        else:  # ROLE_PASS complete: synthesize the stored-partial tile word
            seq = wave // low.waves
            w = wave % low.waves
            oa_col = (w + row) % self.cols
            oa_addr = row * self.cols + oa_col
            tail = 0
            if low.seq_arm[seq]:
                tail = (OP_A_MULS << 12) | oa_addr
            word = make_word(low.seq_merge_op[seq], oa_addr, bits, tail)
            self._emit_bottom(idx, word, to_l1=True)
            self.counters["created"] += 1

    def _send_partial(self, idx: int, row: int, b: int, wave: int, bits: int, tag: int) -> None:
        """Forward the running cross-block partial to the next chain stop."""
        low = self.low
        bu = low.seq_blocks_used[wave // low.waves]
        tgt_col = self.c2_cols[b + 1] if b + 1 < bu else low.pass_col
        target = row * self.cols + tgt_col
        self._emit_right(idx, deposit_word(target, bits, ROLE_PASS, 0, tag), False)
        self.counters["deposits_emitted"] += 1
        self.counters["created"] += 1

    # -------------------------------------------------------------- execution

    def _unwrap_for(self, idx: int, role: int, tag: int) -> int:
        key = (idx, role)
        highest = self.slot_highest.get(key, 0)
        wave = unwrap_wave(highest, tag)
        if wave < 0:
            raise FabricError(f"site {idx}: negative unwrapped wave (role {role})")
        if wave > highest:
            self.slot_highest[key] = wave
        return wave

    def _execute(self, idx: int, word: int) -> None:
        low = self.low
        op = _op(word)
        row, col = divmod(idx, self.cols)
        self.counters["executions"] += 1
        self.executed_by_op[op] = self.executed_by_op.get(op, 0) + 1

        if op == OP_A_MULS:
            if low.col_kind[col] != 1:
                raise FabricError(f"pixel at non-compute site ({row},{col})")
            seq = self.seq_cur[idx]
            if seq < 0:
                self._advance_seq(idx)
                seq = self.seq_cur[idx]
            if seq >= low.n_seq:
                raise FabricError(f"site ({row},{col}): pixel after final pass")
            if self.wip[idx] == 0:
                if not self.staging_written[idx]:
                    raise FabricError(f"site ({row},{col}): pixel before weight load")
                self.w_active[idx] = self.w_staging[idx]
                self.staging_written[idx] = 0
            x = bits_to_f(_payload(word))
            product = f32(self.w_active[idx] * x)
            if product != product:
                self.counters["nan_events"] += 1
            self.counters["fpu_ops"] += 1
            self._fpu_sites.add(idx)
            wave = seq * low.waves + self.wip[idx]
            tail = _tail(word)
            # product to the group fold column
            target = row * self.cols + low.col_c1[col]
            self._emit_right(
                idx,
                deposit_word(target, f_to_bits(product), ROLE_GROUP, low.col_r[col], wave & 0x7F),
                False,
            )
            self.counters["deposits_emitted"] += 1
            self.counters["created"] += 1
            q = self.wip[idx] % low.out_w
            if row == 0 and _tstream(tail) and _step(tail) > 0:
                s = low.col_s[col]
                s2 = s - low.stride
                ts2 = s2 - low.stride >= 0 and q + 2 < low.out_w
                new_tail = (1 << 15) if _shift(tail) else 0
                if ts2:
                    new_tail |= (1 << 14) | (low.hop << 7)
                copy = make_word(OP_A_MULS, idx + low.hop, _payload(word), new_tail)
                self._emit_right(idx, copy, True)
                self.counters["spawned_right"] += 1
                self.counters["created"] += 1
            if _shift(tail) and row + 1 < low.seq_rows_used[seq]:
                down_tail = 1 << 15  # keep broadcasting down, clear streaming
                copy = make_word(OP_A_MULS, idx + self.cols, _payload(word), down_tail)
                self._emit_bottom(idx, copy, to_l1=False)
                self.counters["spawned_down"] += 1
                self.counters["created"] += 1
            self.wip[idx] += 1
            if self.wip[idx] == low.waves:
                self.wip[idx] = 0
                self._advance_seq(idx)
            self.counters["retired"] += 1
            return

        if op == OP_A_ADDS:
            tail = _tail(word)
            role = _role(tail)
            if role != ROLE_NONE:
                wave = self._unwrap_for(idx, role, _wavetag(tail))
                self._slot_deposit(idx, role, wave, _rank(tail), bits_to_f(_payload(word)))
            else:
                self.acc[idx] = f32(self.acc[idx] + bits_to_f(_payload(word)))
                self.counters["fpu_ops"] += 1
                self._fpu_sites.add(idx)
            self.counters["retired"] += 1
            return

        payload = bits_to_f(_payload(word))
        successor_value = None
        if op == OP_UPDATE:
            self.acc[idx] = payload
            successor_value = self.acc[idx]
        elif op == OP_A_ADD:
            self.acc[idx] = f32(self.acc[idx] + payload)
            self.counters["fpu_ops"] += 1
            self._fpu_sites.add(idx)
            successor_value = self.acc[idx]
        elif op == OP_A_SUB or op == OP_A_SUBS:
            self.acc[idx] = f32(self.acc[idx] - payload)
            self.counters["fpu_ops"] += 1
            self._fpu_sites.add(idx)
            successor_value = self.acc[idx]
        elif op == OP_A_MUL:
            self.acc[idx] = f32(self.acc[idx] * payload)
            self.counters["fpu_ops"] += 1
            self._fpu_sites.add(idx)
            successor_value = self.acc[idx]
        elif op == OP_A_DIV or op == OP_A_DIVS:
            self.acc[idx] = f32(self.acc[idx] / payload) if payload != 0.0 else float("nan")
            self.counters["fpu_ops"] += 1
            self._fpu_sites.add(idx)
            successor_value = self.acc[idx]
        elif op == OP_CMP:
            if payload > self.acc[idx]:
                self.acc[idx] = payload
            self.counters["fpu_ops"] += 1
            self._fpu_sites.add(idx)
            successor_value = self.acc[idx]
        elif op == OP_RELU:
            self.acc[idx] = self.acc[idx] if self.acc[idx] > 0.0 else 0.0
            self.counters["fpu_ops"] += 1
            self._fpu_sites.add(idx)
            successor_value = self.acc[idx]
        elif op == OP_AV_ADD:
            self.w_active[idx] = f32(self.w_active[idx] + payload)
            self.counters["fpu_ops"] += 1
            self._fpu_sites.add(idx)
            successor_value = self.w_active[idx]
        else:
            raise FabricError(f"site {idx}: cannot execute opcode {op:#06b}")
        if self.acc[idx] != self.acc[idx]:
            self.counters["nan_events"] += 1
        self.counters["retired"] += 1

        if op not in (OP_A_SUBS, OP_A_DIVS):
            tail = _tail(word)
            next_op = (tail >> 12) & 0xF
            if next_op:
                next_addr = tail & 0xFFF
                out = make_word(next_op, next_addr, f_to_bits(successor_value), 0)
                self.counters["created"] += 1
                if next_op == OP_A_MULS:
                    self._emit_bottom(idx, out, to_l1=True)  # handoff
                else:
                    drow = next_addr // self.cols
                    if drow > row:
                        self._emit_bottom(idx, out, to_l1=False)
                    else:
                        self._emit_right(idx, out, False)

    # ------------------------------------------------------------ consumption

    def _try_consume(self, idx: int) -> None:
        low = self.low
        exec_used = False
        # room in the bounded queues for one emission each; express
        # ingress is never a condition for executing
        pend_free = (
            len(self.pend_right[idx]) < PENDING_CAP
            and len(self.pend_bottom[idx]) < PENDING_CAP
        )

        top = self.top_live[idx]
        top_dequeued = False
        if top:
            word = top[0]
            dest = _addr(word)
            op = _op(word)
            if dest != idx:
                route_down = dest // self.cols > idx // self.cols
                if dest // self.cols < idx // self.cols or (
                    not route_down and dest % self.cols < idx % self.cols
                ):
                    raise FabricError(f"site {idx}: cannot route {word:#018x} up/left")
                if route_down:
                    room = len(self.pend_bottom[idx]) < PENDING_CAP
                else:
                    room = (
                        self._rides_bus(idx, word, op == OP_A_MULS)
                        or len(self.pend_right[idx]) < PENDING_CAP
                    )
                if room:
                    top.pop(0)
                    if route_down:
                        self._emit_bottom(idx, word, to_l1=False)
                    else:
                        self._emit_right(idx, word, op == OP_A_MULS)
                    self.counters["forwards"] += 1
                    self.counters["dequeues_top"] += 1
                    top_dequeued = True
                    self._progress = True
                else:
                    self.counters["stall_pending"] += 1
            elif op == OP_PROG:
                top.pop(0)
                self.w_staging[idx] = bits_to_f(_payload(word))
                self.staging_written[idx] = 1
                self.counters["dequeues_top"] += 1
                self.counters["retired"] += 1
                self.executed_by_op[op] = self.executed_by_op.get(op, 0) + 1
                top_dequeued = True
                self._progress = True
            else:
                ok = pend_free
                if ok and op == OP_A_MULS:
                    ok = self._expected_source(idx) == "top"
                    if not ok:
                        self.counters["stall_peek"] += 1
                if ok:
                    top.pop(0)
                    self.counters["dequeues_top"] += 1
                    self._execute(idx, word)
                    exec_used = True
                    top_dequeued = True
                    self._progress = True
                elif not pend_free:
                    self.counters["stall_pending"] += 1

        # reduce engine: a fold deposit at the exit-queue head drains in
        # parallel with the decoder, one per cycle
        eq = self.exit_fold[idx]
        if eq and _op(eq[0]) == OP_A_ADDS and _role(_tail(eq[0])) != 0:
            if pend_free:
                word = eq.pop(0)
                if _addr(word) != idx:
                    raise FabricError(f"site {idx}: express exit for {_addr(word)}")
                self.counters["dequeues_exit"] += 1
                self._execute(idx, word)
                self._progress = True
            else:
                self.counters["stall_pending"] += 1

        if top_dequeued and not self.dual_dequeue:
            return
        # left lane: express exits outrank the left FIFO; a non-deposit
        # word at the exit-queue head waits for the decoder here
        er = self.exit_pix[idx]
        er_from_fold = False
        if er is None and eq and not (
            _op(eq[0]) == OP_A_ADDS and _role(_tail(eq[0])) != 0
        ):
            er = eq[0]
            er_from_fold = True
        if er is not None and not exec_used:
            if _addr(er) != idx:
                raise FabricError(f"site {idx}: express exit for {_addr(er)}")
            ok = pend_free
            if ok and _op(er) == OP_A_MULS:
                ok = self._expected_source(idx) == "left"
                if not ok:
                    self.counters["stall_peek"] += 1
            if ok:
                if er_from_fold:
                    eq.pop(0)
                else:
                    self.exit_pix[idx] = None
                self.counters["dequeues_exit"] += 1
                self._execute(idx, er)
                self._progress = True
                return  # one left-lane dequeue per cycle
            elif not pend_free:
                self.counters["stall_pending"] += 1
        left = self.left_live[idx]
        if not left:
            return
        word = left[0]
        dest = _addr(word)
        op = _op(word)
        if dest != idx:
            if dest % self.cols < idx % self.cols or dest // self.cols != idx // self.cols:
                raise FabricError(f"site {idx}: left transit {word:#018x} not rightward")
            if (
                self._rides_bus(idx, word, op == OP_A_MULS)
                or len(self.pend_right[idx]) < PENDING_CAP
            ):
                left.pop(0)
                self._emit_right(idx, word, op == OP_A_MULS)
                self.counters["forwards"] += 1
                self.counters["dequeues_left"] += 1
                self._progress = True
            else:
                self.counters["stall_pending"] += 1
            return
        if exec_used:
            return
        ok = pend_free
        if ok and op == OP_A_MULS:
            ok = self._expected_source(idx) == "left"
            if not ok:
                self.counters["stall_peek"] += 1
        if ok:
            left.pop(0)
            self.counters["dequeues_left"] += 1
            self._execute(idx, word)
            self._progress = True
        elif not pend_free:
            self.counters["stall_pending"] += 1

    # ------------------------------------------------------------------ cycle

    def step(self) -> bool:
        """Run one cycle; returns False once the fabric is quiescent."""
        if self._quiescent():
            return False
        self.cycle += 1
        self.counters["cycles"] = self.cycle
        self._progress = False
        self._fpu_sites.clear()

        self._inject_l1()
        self._inject_host()
        self._express_advance()

        order = sorted(self.active)
        for idx in order:
            self._grant_ports(idx)
        for idx in order:
            self._try_consume(idx)

        self._commit()
        if self._progress:
            self.last_progress = self.cycle
        elif self.cycle - self.last_progress > self.low.livelock_limit:
            raise FabricError(self._stuck_report())
        return True

    def _commit(self) -> None:
        inflight = self.express_count
        still_active = set()
        for idx in self.active | self.active_next:
            ts = self.top_staged[idx]
            if ts:
                ts.sort(key=lambda e: e[0])
                self.top_live[idx].extend(w for _, w in ts)
                ts.clear()
            ls = self.left_staged[idx]
            if ls:
                ls.sort(key=lambda e: e[0])
                self.left_live[idx].extend(w for _, w in ls)
                ls.clear()
            n_bus = len(self.pend_bus[idx]) + len(self.pend_bus_pix[idx])
            if n_bus > self.peak_bus_pend:
                self.peak_bus_pend = n_bus
            load = (
                len(self.top_live[idx])
                + len(self.left_live[idx])
                + len(self.pend_right[idx])
                + n_bus
                + len(self.pend_bottom[idx])
                + (0 if self.exit_pix[idx] is None else 1)
                + len(self.exit_fold[idx])
            )
            if load:
                still_active.add(idx)
                inflight += load
        self.active = still_active
        self.active_next = set()
        self.counters["inflight_integral"] += inflight
        self.counters["active_site_integral"] += len(self.active)
        self.counters["fpu_site_integral"] += len(self._fpu_sites)

    def _quiescent(self) -> bool:
        return (
            not self.active
            and not self.active_next
            and self.express_count == 0
            and self.host_pos >= len(self.low.host_stream)
            and self.stage_pos >= len(self.low.l1_stage)
            and self.merge_pos >= len(self.merge_queue)
        )

    def _stuck_report(self) -> str:
        lines = [f"no progress for {self.low.livelock_limit} cycles at cycle {self.cycle}"]
        if self.merge_pos < len(self.merge_queue):
            item = self.merge_queue[self.merge_pos]
            lines.append(f"merge lane blocked at {item!r}")
        if self.host_pos < len(self.low.host_stream):
            lines.append(f"host stream blocked at word {self.host_pos}")
        busy = [idx for idx in sorted(self.active)][:8]
        for idx in busy:
            lines.append(
                f"site {divmod(idx, self.cols)}: top={len(self.top_live[idx])} "
                f"left={len(self.left_live[idx])} pr={len(self.pend_right[idx])} "
                f"bus={len(self.pend_bus[idx])}+{len(self.pend_bus_pix[idx])} "
                f"pb={len(self.pend_bottom[idx])} "
                f"ex={'-' if self.exit_pix[idx] is None else 'x'}/{len(self.exit_fold[idx])}"
            )
        open_slots = {k: len(v) for k, v in self.slots.items() if v}
        if open_slots:
            lines.append(f"open fold slots: {list(open_slots.items())[:6]}")
        return "\n".join(lines)

    def run(self) -> dict:
        while self.step():
            pass
        if self.tiles:
            raise FabricError(f"{len(self.tiles)} partial tiles never released")
        open_slots = {k: v for k, v in self.slots.items() if v}
        if open_slots:
            raise FabricError(f"incomplete folds at quiescence: {list(open_slots)[:6]}")
        counters = dict(self.counters)
        counters["executed_by_op"] = dict(sorted(self.executed_by_op.items()))
        counters["peak_tile_bytes"] = self.peak_tile_bytes
        counters["peak_bus_pend"] = self.peak_bus_pend
        return {"counters": counters, "captures": list(self.captures)}
