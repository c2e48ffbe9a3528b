# cython: language_level=3
# cython: boundscheck=False
# cython: wraparound=False
# cython: initializedcheck=False
"""Cycle-level fabric engine (compiled twin).

This is a Cython transliteration of ``mavec.fabric._pykernel``, which
remains the behavioural reference; read that module's docstring for
the cycle contract and the opcode semantics.  The two kernels must
stay word-for-word equivalent: for any lowered layer they produce
identical counters, captures, and error conditions, and the parity
tests compare them run for run.

What changes here is only the representation.  Per-site state that
the reference keeps in Python lists and dicts (FIFOs, pending queues,
the express channel, weight and accumulator registers) lives in flat
C arrays indexed by site, and the event counters are C integers
rolled up into a dict on demand.  Single-precision rounding uses the
C float type directly: rounding a double through ``(float)`` is the
same IEEE-754 operation as the reference's pack/unpack round trip.

Unbounded or irregular structures (the express ingress queues, fold
reorder slots, stored tiles, and the merge queue with its in-place
release expansion) stay as Python containers; they are off the
per-cycle hot path.
"""

from libc.math cimport ceil as c_ceil
from libc.string cimport memcpy

import numpy as np

from mavec.fabric._pykernel import FabricError

cdef enum:
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
    PENDING_CAP = 4
    TILE_MATCH_WINDOW = 12

    # bounded hop/bottom queues never exceed PENDING_CAP plus the few
    # same-cycle emissions admitted on a stale room check; 16 is ample
    PEND_BUF = 16

    SRC_ABOVE = 0
    SRC_L1 = 1
    SRC_HOST = 2
    SRC_NEIGHBOR = 0
    SRC_EXPRESS = 1


cdef inline double f32c(double x) noexcept:
    return <double><float>x


cdef inline double bits_to_f_c(unsigned int bits) noexcept:
    cdef float f
    memcpy(&f, &bits, 4)
    return <double>f


cdef inline unsigned int f_to_bits_c(double x) noexcept:
    cdef float f = <float>x
    cdef unsigned int b
    memcpy(&b, &f, 4)
    return b


cdef inline unsigned long long make_word_c(
    int op, int addr, unsigned int payload, int tail
) noexcept:
    return (
        (<unsigned long long>op << 60)
        | (<unsigned long long>addr << 48)
        | (<unsigned long long>payload << 16)
        | <unsigned long long>(tail & 0xFFFF)
    )


cdef inline unsigned long long deposit_word_c(
    int addr, unsigned int payload, int role, int rank, int tag
) noexcept:
    cdef int tail = (
        (((role >> 1) & 1) << 15)
        | ((role & 1) << 14)
        | ((rank & 0x3F) << 7)
        | (tag & 0x7F)
    )
    return make_word_c(OP_A_ADDS, addr, payload, tail)


def f32(x):
    """Round a python float to IEEE-754 single precision."""
    return f32c(x)


def bits_to_f(bits):
    return bits_to_f_c(bits & 0xFFFFFFFF)


def f_to_bits(x):
    return f_to_bits_c(x)


def make_word(op, addr, payload_bits, tail):
    return (op << 60) | (addr << 48) | ((payload_bits & 0xFFFFFFFF) << 16) | (tail & 0xFFFF)


def unwrap_wave(highest, tag):
    """Recover a full wave index from its 7-bit tag, given the highest
    wave seen so far at this slot group (skew must stay below 64)."""
    diff = (tag - highest) & 0x7F
    if diff < 64:
        return highest + diff
    return highest - (128 - diff)


cdef class FabricKernel:
    """Executes one lowered layer program cycle by cycle."""

    cdef object low
    cdef public long long cycle
    cdef int rows, cols, n, depth
    cdef bint dual_dequeue
    cdef int waves, out_w, stride, kh, kw, hop, pass_col, n_seq
    cdef double host_rate
    cdef long long host_whole, host_period
    cdef long long livelock_limit, l1_tile_budget
    cdef long long last_progress
    cdef bint progress

    # per-site registers
    cdef double[::1] w_active, w_staging, acc
    cdef int[::1] staging_written, wip, seq_cur

    # FIFOs: live words plus the double-buffered staged (src, word) pairs
    cdef unsigned long long[::1] top_w, left_w, tops_w, lefts_w
    cdef int[::1] top_len, left_len, tops_len, lefts_len
    cdef int[::1] tops_src, lefts_src

    # express exits (pixel register, one deep; reduce queue) and the
    # output-port queues
    cdef unsigned long long[::1] exit_w
    cdef char[::1] exit_full
    cdef unsigned long long[::1] exf_w
    cdef int[::1] exf_len
    cdef unsigned long long[::1] pr_w, pb_w
    cdef int[::1] pr_len, pb_len
    cdef char[::1] pb_route  # 1 = off-fabric to L1, 0 = top FIFO below
    cdef list pend_bus  # reduce ingress, unbounded, per site
    cdef list pend_bus_pix  # pixel ingress, unbounded, per site

    # express channels, one slot per (row, column position)
    cdef unsigned long long[::1] ex_w, exp_w
    cdef int[::1] ex_dest, exp_dest
    cdef char[::1] ex_occ, exp_occ
    cdef int express_count, peak_bus_pend

    # partial-sum columns in chain order (block index -> column)
    cdef int[::1] c2_cols

    # scheduling sets as flag arrays
    cdef char[::1] active, active_next, fpu_flag
    cdef int n_active, n_active_next, n_fpu_sites

    # lowered-layer tables
    cdef int[::1] col_kind, col_slot, col_s, col_r, col_leading, col_c1, col_c2
    cdef int[::1] col_group_rank, col_block_rank, col_is_block, col_is_pass
    cdef int[::1] seq_blocks_used, seq_rows_used, seq_merge_op, seq_arm
    cdef unsigned long long[::1] host_words, stage_words
    cdef long long n_host, n_stage
    cdef long long[::1] stage_gates
    cdef bint has_gates
    cdef long long[::1] used_col_stamp

    # lane cursors and L1-side state
    cdef long long host_pos, stage_pos, merge_pos
    cdef list merge_queue  # (0, seq, wave) release | (1, word) stream | (2, word) tile
    cdef dict slots, slot_highest  # keyed (site << 2) | role
    cdef dict tiles  # keyed seq * waves + wave
    cdef dict tile_expect  # row -> [(seq, wave, addr, op, tail), ...]
    cdef int[::1] gen_seq, gen_wave
    cdef list captures
    cdef long long tile_bytes, peak_tile_bytes

    # event counters
    cdef long long c_fpu, c_host_inj, c_stage_inj, c_merge_inj
    cdef long long c_spawn_down, c_spawn_right, c_deposits
    cdef long long c_tiles_stored, c_tile_released, c_handoffs, c_forwards
    cdef long long c_boards, c_moves
    cdef long long c_deq_top, c_deq_left, c_deq_exit, c_exec
    cdef long long c_inflight, c_active_integral, c_fpu_integral
    cdef long long c_nan, c_created, c_retired, c_stall_peek, c_stall_pending
    cdef long long exec_by_op[16]

    def __init__(self, low):
        self.low = low
        self.rows = low.rows
        self.cols = low.cols
        self.n = self.rows * self.cols
        self.depth = low.depth
        self.dual_dequeue = low.dual_dequeue
        self.waves = low.waves
        self.out_w = low.out_w
        self.stride = low.stride
        self.kh = low.kh
        self.kw = low.kw
        self.hop = low.hop
        self.pass_col = low.pass_col
        self.n_seq = low.n_seq
        self.host_rate = low.host_rate
        self.host_whole = <long long>self.host_rate if self.host_rate >= 1.0 else 0
        self.host_period = (
            <long long>c_ceil(1.0 / self.host_rate) if self.host_rate < 1.0 else 0
        )
        self.livelock_limit = low.livelock_limit
        self.l1_tile_budget = low.l1_tile_budget

        cdef int n = self.n
        self.w_active = np.zeros(n, dtype=np.float64)
        self.w_staging = np.zeros(n, dtype=np.float64)
        self.acc = np.zeros(n, dtype=np.float64)
        self.staging_written = np.zeros(n, dtype=np.int32)
        self.wip = np.zeros(n, dtype=np.int32)
        self.seq_cur = np.full(n, -1, dtype=np.int32)

        cdef long long cap = <long long>n * self.depth
        self.top_w = np.zeros(cap, dtype=np.uint64)
        self.left_w = np.zeros(cap, dtype=np.uint64)
        self.tops_w = np.zeros(cap, dtype=np.uint64)
        self.lefts_w = np.zeros(cap, dtype=np.uint64)
        self.tops_src = np.zeros(cap, dtype=np.int32)
        self.lefts_src = np.zeros(cap, dtype=np.int32)
        self.top_len = np.zeros(n, dtype=np.int32)
        self.left_len = np.zeros(n, dtype=np.int32)
        self.tops_len = np.zeros(n, dtype=np.int32)
        self.lefts_len = np.zeros(n, dtype=np.int32)

        self.exit_w = np.zeros(n, dtype=np.uint64)
        self.exit_full = np.zeros(n, dtype=np.int8)
        self.exf_w = np.zeros(n * EXIT_QUEUE, dtype=np.uint64)
        self.exf_len = np.zeros(n, dtype=np.int32)
        self.pr_w = np.zeros(n * PEND_BUF, dtype=np.uint64)
        self.pb_w = np.zeros(n * PEND_BUF, dtype=np.uint64)
        self.pr_len = np.zeros(n, dtype=np.int32)
        self.pb_len = np.zeros(n, dtype=np.int32)
        self.pb_route = np.zeros(n * PEND_BUF, dtype=np.int8)
        self.pend_bus = [[] for _ in range(n)]
        self.pend_bus_pix = [[] for _ in range(n)]

        self.ex_w = np.zeros(n, dtype=np.uint64)
        self.ex_dest = np.zeros(n, dtype=np.int32)
        self.ex_occ = np.zeros(n, dtype=np.int8)
        self.exp_w = np.zeros(n, dtype=np.uint64)
        self.exp_dest = np.zeros(n, dtype=np.int32)
        self.exp_occ = np.zeros(n, dtype=np.int8)
        self.express_count = 0
        self.peak_bus_pend = 0
        self.c2_cols = np.asarray(
            [c for c in range(self.cols) if low.col_is_block[c]], dtype=np.int32
        )

        self.active = np.zeros(n, dtype=np.int8)
        self.active_next = np.zeros(n, dtype=np.int8)
        self.fpu_flag = np.zeros(n, dtype=np.int8)
        self.n_active = 0
        self.n_active_next = 0
        self.n_fpu_sites = 0

        self.col_kind = np.asarray(low.col_kind, dtype=np.int32)
        self.col_slot = np.asarray(low.col_slot, dtype=np.int32)
        self.col_s = np.asarray(low.col_s, dtype=np.int32)
        self.col_r = np.asarray(low.col_r, dtype=np.int32)
        self.col_leading = np.asarray(low.col_leading, dtype=np.int32)
        self.col_c1 = np.asarray(low.col_c1, dtype=np.int32)
        self.col_c2 = np.asarray(low.col_c2, dtype=np.int32)
        self.col_group_rank = np.asarray(low.col_group_rank, dtype=np.int32)
        self.col_block_rank = np.asarray(low.col_block_rank, dtype=np.int32)
        self.col_is_block = np.asarray(low.col_is_block, dtype=np.int32)
        self.col_is_pass = np.asarray(low.col_is_pass, dtype=np.int32)
        self.seq_blocks_used = np.asarray(low.seq_blocks_used, dtype=np.int32)
        self.seq_rows_used = np.asarray(low.seq_rows_used, dtype=np.int32)
        self.seq_merge_op = np.asarray(low.seq_merge_op, dtype=np.int32)
        self.seq_arm = np.asarray(low.seq_arm, dtype=np.int32)

        self.host_words = np.asarray(low.host_stream, dtype=np.uint64)
        self.n_host = len(low.host_stream)
        self.stage_words = np.asarray(low.l1_stage, dtype=np.uint64)
        self.n_stage = len(low.l1_stage)
        gates = getattr(low, "stage_gates", None)
        self.has_gates = gates is not None
        self.stage_gates = np.asarray(gates if gates is not None else [], dtype=np.int64)
        self.used_col_stamp = np.full(self.cols, -1, dtype=np.int64)

        self.host_pos = 0
        self.stage_pos = 0
        self.merge_pos = 0
        self.merge_queue = [
            (0, item[1], item[2]) if item[0] == "r" else (1, item[1])
            for item in low.l1_merge
        ]

        self.slots = {}
        self.slot_highest = {}
        self.tiles = {}
        self.tile_expect = {}
        self.gen_seq = np.full(self.rows, -1, dtype=np.int32)
        self.gen_wave = np.zeros(self.rows, dtype=np.int32)
        self.captures = []
        self.tile_bytes = 0
        self.peak_tile_bytes = 0

        self.cycle = 0
        self.last_progress = 0
        self.progress = False
        cdef int i
        for i in range(16):
            self.exec_by_op[i] = 0

    # ---------------------------------------------------------------- helpers

    cdef void _wake(self, int idx) noexcept:
        if not self.active_next[idx]:
            self.active_next[idx] = 1
            self.n_active_next += 1

    cdef void _mark_fpu(self, int idx) noexcept:
        if not self.fpu_flag[idx]:
            self.fpu_flag[idx] = 1
            self.n_fpu_sites += 1

    cdef bint _stage_top(self, int idx, unsigned long long word, int src) except *:
        if idx < 0 or idx >= self.n:
            raise FabricError(f"word {<object>word:#018x} addressed off the fabric")
        if self.top_len[idx] + self.tops_len[idx] >= self.depth:
            return False
        cdef int at = idx * self.depth + self.tops_len[idx]
        self.tops_w[at] = word
        self.tops_src[at] = src
        self.tops_len[idx] += 1
        self._wake(idx)
        return True

    cdef bint _stage_left(self, int idx, unsigned long long word, int src) except *:
        if idx < 0 or idx >= self.n:
            raise FabricError(f"word {<object>word:#018x} addressed off the fabric")
        if self.left_len[idx] + self.lefts_len[idx] >= self.depth:
            return False
        cdef int at = idx * self.depth + self.lefts_len[idx]
        self.lefts_w[at] = word
        self.lefts_src[at] = src
        self.lefts_len[idx] += 1
        self._wake(idx)
        return True

    cdef void _advance_seq(self, int idx) noexcept:
        cdef int row = idx // self.cols
        cdef int col = idx % self.cols
        cdef int seq = self.seq_cur[idx] + 1
        while seq < self.n_seq and not (
            self.col_slot[col] < self.seq_blocks_used[seq]
            and row < self.seq_rows_used[seq]
        ):
            seq += 1
        self.seq_cur[idx] = seq  # may equal n_seq (done)

    cdef int _expected_source(self, int idx) noexcept:
        """0 when the next pixel arrives on the top FIFO, 1 when left."""
        cdef int row = idx // self.cols
        cdef int col = idx % self.cols
        if row > 0:
            return 0
        if self.col_leading[col]:
            return 0
        cdef int q = self.wip[idx] % self.out_w
        return 0 if q == 0 else 1

    # ------------------------------------------------------------- injections

    cdef void _inject_l1(self) except *:
        cdef long long stamp = self.cycle
        cdef unsigned long long word
        cdef int addr, col, kind
        cdef long long seqv, wavev, need
        cdef tuple item
        cdef list tile, words
        # staged-pixel lane first
        while self.stage_pos < self.n_stage:
            if self.has_gates and self.stage_gates[self.stage_pos] > self.host_pos:
                break  # this pass's weight loads have not all entered yet
            word = self.stage_words[self.stage_pos]
            addr = <int>((word >> 48) & 0xFFF)
            col = addr % self.cols
            if self.used_col_stamp[col] == stamp:
                break
            if not self._stage_top(addr, word, SRC_L1):
                break
            self.used_col_stamp[col] = stamp
            self.stage_pos += 1
            self.c_stage_inj += 1
            self.c_created += 1
            self.progress = True
        # merge lane: release directives expand into stored tile words
        while self.merge_pos < len(self.merge_queue):
            item = <tuple>self.merge_queue[self.merge_pos]
            kind = <int>item[0]
            if kind == 0:
                seqv = <long long>item[1]
                wavev = <long long>item[2]
                tile_obj = self.tiles.get(seqv * self.waves + wavev)
                need = self.seq_rows_used[seqv]
                if tile_obj is None or len(<list>tile_obj) < need:
                    break  # not ready yet; strict in-order lane
                tile = <list>tile_obj
                words = [(2, w) for w in tile]
                del self.tiles[seqv * self.waves + wavev]
                self.tile_bytes -= 8 * len(words)
                self.merge_queue[self.merge_pos : self.merge_pos + 1] = words
                self.c_tile_released += len(words)
                self.progress = True
                continue
            word = <unsigned long long>item[1]
            addr = <int>((word >> 48) & 0xFFF)
            col = addr % self.cols
            if self.used_col_stamp[col] == stamp:
                break
            if not self._stage_top(addr, word, SRC_L1):
                break
            self.used_col_stamp[col] = stamp
            self.merge_pos += 1
            self.c_merge_inj += 1
            if kind == 1:  # tile words were already counted at creation
                self.c_created += 1
            self.progress = True

    cdef long long _host_budget(self) noexcept:
        if self.host_rate >= 1.0:
            return self.host_whole
        return 1 if self.cycle % self.host_period == 0 else 0

    cdef void _inject_host(self) except *:
        cdef long long budget = self._host_budget()
        cdef unsigned long long word
        cdef int col
        while budget > 0 and self.host_pos < self.n_host:
            word = self.host_words[self.host_pos]
            col = <int>((word >> 48) & 0xFFF) % self.cols
            if not self._stage_top(col, word, SRC_HOST):
                break  # serial link: head-of-line stall
            self.host_pos += 1
            budget -= 1
            self.c_host_inj += 1
            self.c_created += 1
            self.progress = True

    # ---------------------------------------------------------- express lane

    cdef void _express_advance(self) noexcept:
        cdef int row, col, base, idx
        for row in range(self.rows):
            base = row * self.cols
            for col in range(self.cols - 1, -1, -1):
                if not self.ex_occ[base + col]:
                    continue
                if self.ex_dest[base + col] == col:
                    idx = base + col
                    if self.exf_len[idx] < EXIT_QUEUE:
                        self.exf_w[idx * EXIT_QUEUE + self.exf_len[idx]] = self.ex_w[base + col]
                        self.exf_len[idx] += 1
                        self._wake(idx)
                        self.ex_occ[base + col] = 0
                        self.express_count -= 1
                        self.progress = True
                elif col + 1 < self.cols and not self.ex_occ[base + col + 1]:
                    self.ex_w[base + col + 1] = self.ex_w[base + col]
                    self.ex_dest[base + col + 1] = self.ex_dest[base + col]
                    self.ex_occ[base + col + 1] = 1
                    self.ex_occ[base + col] = 0
                    self.c_moves += 1
                    self.progress = True
            for col in range(self.cols - 1, -1, -1):
                if not self.exp_occ[base + col]:
                    continue
                if self.exp_dest[base + col] == col:
                    idx = base + col
                    if not self.exit_full[idx]:
                        self.exit_w[idx] = self.exp_w[base + col]
                        self.exit_full[idx] = 1
                        self._wake(idx)
                        self.exp_occ[base + col] = 0
                        self.express_count -= 1
                        self.progress = True
                elif col + 1 < self.cols and not self.exp_occ[base + col + 1]:
                    self.exp_w[base + col + 1] = self.exp_w[base + col]
                    self.exp_dest[base + col + 1] = self.exp_dest[base + col]
                    self.exp_occ[base + col + 1] = 1
                    self.exp_occ[base + col] = 0
                    self.c_moves += 1
                    self.progress = True

    # -------------------------------------------------------------- emissions

    cdef bint _rides_bus(self, int idx, unsigned long long word, bint is_pixel_copy) noexcept:
        if is_pixel_copy:
            return True
        cdef int dest_col = <int>((word >> 48) & 0xFFF) % self.cols
        return dest_col - idx % self.cols >= EXPRESS_MIN_HOPS

    cdef void _emit_right(self, int idx, unsigned long long word, bint is_pixel_copy) except *:
        cdef int at
        if is_pixel_copy:
            (<list>self.pend_bus_pix[idx]).append(word)
        elif self._rides_bus(idx, word, False):
            (<list>self.pend_bus[idx]).append(word)
        else:
            at = self.pr_len[idx]
            if at >= PEND_BUF:
                raise FabricError(f"site {idx}: hop queue overflow")
            self.pr_w[idx * PEND_BUF + at] = word
            self.pr_len[idx] = at + 1
        self._wake(idx)

    cdef void _emit_bottom(self, int idx, unsigned long long word, bint to_l1) except *:
        cdef int at = self.pb_len[idx]
        if at >= PEND_BUF:
            raise FabricError(f"site {idx}: bottom queue overflow")
        self.pb_w[idx * PEND_BUF + at] = word
        self.pb_route[idx * PEND_BUF + at] = 1 if to_l1 else 0
        self.pb_len[idx] = at + 1
        self._wake(idx)

    cdef void _grant_ports(self, int idx) except *:
        cdef int row = idx // self.cols
        cdef int col = idx % self.cols
        cdef bint granted = False
        cdef list bus = <list>self.pend_bus[idx]
        cdef unsigned long long word
        cdef int base = idx * PEND_BUF
        cdef int j
        if len(bus) > 0:
            if not self.ex_occ[idx]:
                word = <unsigned long long>bus.pop(0)
                self.ex_w[idx] = word
                self.ex_dest[idx] = <int>((word >> 48) & 0xFFF) % self.cols
                self.ex_occ[idx] = 1
                self.express_count += 1
                self.c_boards += 1
                self.progress = True
                granted = True
        bus = <list>self.pend_bus_pix[idx]
        if len(bus) > 0:
            if not self.exp_occ[idx]:
                word = <unsigned long long>bus.pop(0)
                self.exp_w[idx] = word
                self.exp_dest[idx] = <int>((word >> 48) & 0xFFF) % self.cols
                self.exp_occ[idx] = 1
                self.express_count += 1
                self.c_boards += 1
                self.progress = True
        if self.pr_len[idx] > 0 and not granted:
            if self._stage_left(idx + 1, self.pr_w[base], SRC_NEIGHBOR):
                self.pr_len[idx] -= 1
                for j in range(self.pr_len[idx]):
                    self.pr_w[base + j] = self.pr_w[base + j + 1]
                self.progress = True
        if self.pb_len[idx] > 0:
            word = self.pb_w[base]
            if self.pb_route[base]:
                self._pop_bottom(idx, base)
                self._capture(idx, word)
                self.progress = True
            elif self._stage_top(idx + self.cols, word, SRC_ABOVE):
                self._pop_bottom(idx, base)
                self.progress = True

    cdef void _pop_bottom(self, int idx, int base) noexcept:
        cdef int j
        self.pb_len[idx] -= 1
        for j in range(self.pb_len[idx]):
            self.pb_w[base + j] = self.pb_w[base + j + 1]
            self.pb_route[base + j] = self.pb_route[base + j + 1]

    # ------------------------------------------------------------- L1 capture

    cdef void _capture(self, int idx, unsigned long long word) except *:
        cdef int op = <int>((word >> 60) & 0xF)
        cdef int row = idx // self.cols
        cdef int addr, tail, i, hit, limit
        cdef tuple entry
        cdef list expect
        if op == OP_A_MULS:
            # finished output value leaving the fabric
            self.captures.append((idx, (word >> 16) & 0xFFFFFFFF))
            self.c_handoffs += 1
            self.c_retired += 1
            return
        # stored partial tile word from the pass-fold column
        expect_obj = self.tile_expect.get(row)
        if expect_obj is None:
            expect = []
            self.tile_expect[row] = expect
        else:
            expect = <list>expect_obj
        self._extend_expect(row, expect)
        addr = <int>((word >> 48) & 0xFFF)
        tail = <int>(word & 0xFFFF)
        hit = -1
        limit = min(TILE_MATCH_WINDOW, len(expect))
        for i in range(limit):
            entry = <tuple>expect[i]
            if (
                <int>entry[2] == addr
                and <int>entry[3] == op
                and <int>entry[4] == tail
            ):
                hit = i
                break
        if hit < 0:
            raise FabricError(
                f"row {row}: tile word {<object>word:#018x} matches none of the "
                f"next {limit} expected words"
            )
        entry = <tuple>expect.pop(hit)
        key = <long long>entry[0] * self.waves + <long long>entry[1]
        tile_obj = self.tiles.get(key)
        if tile_obj is None:
            self.tiles[key] = [word]
        else:
            (<list>tile_obj).append(word)
        self.tile_bytes += 8
        if self.tile_bytes > self.peak_tile_bytes:
            self.peak_tile_bytes = self.tile_bytes
        if self.l1_tile_budget and self.tile_bytes > self.l1_tile_budget:
            raise FabricError(
                f"partial-sum storage exceeded the on-chip budget "
                f"({self.tile_bytes} > {self.l1_tile_budget} bytes); "
                f"use the analytic tier for layers this wide"
            )
        self.c_tiles_stored += 1

    cdef tuple _expected_tile_meta(self, int row, int seq, int wave):
        cdef int oa_addr = row * self.cols + (wave + row) % self.cols
        cdef int tail = (OP_A_MULS << 12) | oa_addr if self.seq_arm[seq] else 0
        return (seq, wave, oa_addr, self.seq_merge_op[seq], tail)

    cdef void _extend_expect(self, int row, list expect) except *:
        cdef int seq, wave
        if self.gen_seq[row] < 0:
            seq = 0
            while seq < self.n_seq and row >= self.seq_rows_used[seq]:
                seq += 1
            wave = 0
        else:
            seq = self.gen_seq[row]
            wave = self.gen_wave[row]
        while len(expect) < 2 * TILE_MATCH_WINDOW and seq < self.n_seq:
            expect.append(self._expected_tile_meta(row, seq, wave))
            wave += 1
            if wave == self.waves:
                seq += 1
                while seq < self.n_seq and row >= self.seq_rows_used[seq]:
                    seq += 1
                wave = 0
        self.gen_seq[row] = seq
        self.gen_wave[row] = wave

    # -------------------------------------------------------------- fold logic

    cdef void _slot_deposit(
        self, int idx, int role, long long wave, int rank, double value
    ) except *:
        cdef int expected = self._role_expected(idx, role, wave)
        cdef long long mask, bit
        cdef list slot, values
        cdef dict group
        cdef double result
        cdef int i
        if rank >= expected:
            raise FabricError(f"site {idx}: rank {rank} >= expected {expected} (role {role})")
        key = (idx << 2) | role
        group_obj = self.slots.get(key)
        if group_obj is None:
            group = {}
            self.slots[key] = group
        else:
            group = <dict>group_obj
        slot_obj = group.get(wave)
        if slot_obj is None:
            if len(group) >= 128:
                raise FabricError(f"site {idx}: reorder window overflow (role {role})")
            slot = [0, [0.0] * expected]
            group[wave] = slot
        else:
            slot = <list>slot_obj
        mask = <long long>slot[0]
        bit = <long long>1 << rank
        if mask & bit:
            raise FabricError(f"site {idx}: duplicate rank {rank} wave {wave} (role {role})")
        mask = mask | bit
        slot[0] = mask
        values = <list>slot[1]
        values[rank] = value
        if mask == (<long long>1 << expected) - 1:
            del group[wave]
            result = <double>values[0]
            for i in range(1, expected):
                result = f32c(result + <double>values[i])
            self.c_fpu += expected - 1
            if expected > 1:
                self._mark_fpu(idx)
            self._fold_complete(idx, role, wave, result)

    cdef int _role_expected(self, int idx, int role, long long wave) except -1:
        cdef long long seq
        cdef int bu, b
        if role == ROLE_GROUP:
            return self.kh
        if role == ROLE_BLOCK:
            return self.kw
        # pass level: the running cross-block partial chains through the
        # partial-sum columns, so interior chain stops hold two ranks
        # (incoming partial, own block sum) and endpoints hold one
        seq = wave // self.waves
        if seq >= self.n_seq:
            raise FabricError(f"site {idx}: pass-fold wave {wave} beyond program")
        bu = self.seq_blocks_used[seq]
        b = self.col_block_rank[idx % self.cols]
        if b < 0 or b >= bu or b == 0:
            return 1
        return 2

    cdef void _fold_complete(self, int idx, int role, long long wave, double value) except *:
        cdef int row = idx // self.cols
        cdef int col = idx % self.cols
        cdef unsigned int bits = f_to_bits_c(value)
        cdef int tag = <int>(wave & 0x7F)
        cdef int rank, target, oa_addr, tail
        cdef long long seq, w
        if value != value:
            self.c_nan += 1
        if role == ROLE_GROUP:
            rank = self.col_group_rank[col]
            if self.col_is_block[col]:
                self._slot_deposit(idx, ROLE_BLOCK, wave, rank, value)
            else:
                target = row * self.cols + self.col_c2[col]
                self._emit_right(idx, deposit_word_c(target, bits, ROLE_BLOCK, rank, tag), False)
                self.c_deposits += 1
                self.c_created += 1
        elif role == ROLE_BLOCK:
            rank = self.col_block_rank[col]
            if self.col_is_pass[col]:
                self._slot_deposit(idx, ROLE_PASS, wave, 1 if rank >= 1 else 0, value)
            elif rank == 0:
                self._send_partial(idx, row, rank, wave, bits, tag)
            else:
                self._slot_deposit(idx, ROLE_PASS, wave, 1, value)
        elif not self.col_is_pass[col]:  # ROLE_PASS at an interior chain stop
            self._send_partial(idx, row, self.col_block_rank[col], wave, bits, tag)
        else:  # ROLE_PASS complete: synthesize the stored-partial tile word
            seq = wave // self.waves
            w = wave % self.waves
            oa_addr = row * self.cols + <int>((w + row) % self.cols)
            tail = 0
            if self.seq_arm[seq]:
                tail = (OP_A_MULS << 12) | oa_addr
            self._emit_bottom(idx, make_word_c(self.seq_merge_op[seq], oa_addr, bits, tail), True)
            self.c_created += 1

    cdef void _send_partial(
        self, int idx, int row, int b, long long wave, unsigned int bits, int tag
    ) except *:
        """Forward the running cross-block partial to the next chain stop."""
        cdef int bu = self.seq_blocks_used[wave // self.waves]
        cdef int tgt_col = self.c2_cols[b + 1] if b + 1 < bu else self.pass_col
        self._emit_right(
            idx, deposit_word_c(row * self.cols + tgt_col, bits, ROLE_PASS, 0, tag), False
        )
        self.c_deposits += 1
        self.c_created += 1

    # -------------------------------------------------------------- execution

    cdef long long _unwrap_for(self, int idx, int role, int tag) except -1:
        key = (idx << 2) | role
        cdef long long highest = <long long>self.slot_highest.get(key, 0)
        cdef long long diff = (tag - highest) & 0x7F
        cdef long long wave
        if diff < 64:
            wave = highest + diff
        else:
            wave = highest - (128 - diff)
        if wave < 0:
            raise FabricError(f"site {idx}: negative unwrapped wave (role {role})")
        if wave > highest:
            self.slot_highest[key] = wave
        return wave

    cdef void _execute(self, int idx, unsigned long long word) except *:
        cdef int op = <int>((word >> 60) & 0xF)
        cdef int row = idx // self.cols
        cdef int col = idx % self.cols
        cdef unsigned int payload_bits = <unsigned int>((word >> 16) & 0xFFFFFFFF)
        cdef int tail, role, seq, q, s, s2, new_tail, next_op, next_addr, drow
        cdef long long wave
        cdef double x, product, payload, successor_value
        cdef bint ts2
        cdef unsigned long long copy, out
        self.c_exec += 1
        self.exec_by_op[op] += 1

        if op == OP_A_MULS:
            if self.col_kind[col] != 1:
                raise FabricError(f"pixel at non-compute site ({row},{col})")
            seq = self.seq_cur[idx]
            if seq < 0:
                self._advance_seq(idx)
                seq = self.seq_cur[idx]
            if seq >= self.n_seq:
                raise FabricError(f"site ({row},{col}): pixel after final pass")
            if self.wip[idx] == 0:
                if not self.staging_written[idx]:
                    raise FabricError(f"site ({row},{col}): pixel before weight load")
                self.w_active[idx] = self.w_staging[idx]
                self.staging_written[idx] = 0
            x = bits_to_f_c(payload_bits)
            product = f32c(self.w_active[idx] * x)
            if product != product:
                self.c_nan += 1
            self.c_fpu += 1
            self._mark_fpu(idx)
            wave = <long long>seq * self.waves + self.wip[idx]
            tail = <int>(word & 0xFFFF)
            # product to the group fold column
            self._emit_right(
                idx,
                deposit_word_c(
                    row * self.cols + self.col_c1[col],
                    f_to_bits_c(product),
                    ROLE_GROUP,
                    self.col_r[col],
                    <int>(wave & 0x7F),
                ),
                False,
            )
            self.c_deposits += 1
            self.c_created += 1
            q = self.wip[idx] % self.out_w
            if row == 0 and (tail & 0x4000) and ((tail >> 7) & 0x3F) > 0:
                s = self.col_s[col]
                s2 = s - self.stride
                ts2 = s2 - self.stride >= 0 and q + 2 < self.out_w
                new_tail = 0x8000 if (tail & 0x8000) else 0
                if ts2:
                    new_tail |= 0x4000 | (self.hop << 7)
                copy = make_word_c(OP_A_MULS, idx + self.hop, payload_bits, new_tail)
                self._emit_right(idx, copy, True)
                self.c_spawn_right += 1
                self.c_created += 1
            if (tail & 0x8000) and row + 1 < self.seq_rows_used[seq]:
                # keep broadcasting down, clear streaming
                copy = make_word_c(OP_A_MULS, idx + self.cols, payload_bits, 0x8000)
                self._emit_bottom(idx, copy, False)
                self.c_spawn_down += 1
                self.c_created += 1
            self.wip[idx] += 1
            if self.wip[idx] == self.waves:
                self.wip[idx] = 0
                self._advance_seq(idx)
            self.c_retired += 1
            return

        if op == OP_A_ADDS:
            tail = <int>(word & 0xFFFF)
            role = (((tail >> 15) & 1) << 1) | ((tail >> 14) & 1)
            if role != ROLE_NONE:
                wave = self._unwrap_for(idx, role, tail & 0x7F)
                self._slot_deposit(idx, role, wave, (tail >> 7) & 0x3F, bits_to_f_c(payload_bits))
            else:
                self.acc[idx] = f32c(self.acc[idx] + bits_to_f_c(payload_bits))
                self.c_fpu += 1
                self._mark_fpu(idx)
            self.c_retired += 1
            return

        payload = bits_to_f_c(payload_bits)
        if op == OP_UPDATE:
            self.acc[idx] = payload
            successor_value = self.acc[idx]
        elif op == OP_A_ADD:
            self.acc[idx] = f32c(self.acc[idx] + payload)
            self.c_fpu += 1
            self._mark_fpu(idx)
            successor_value = self.acc[idx]
        elif op == OP_A_SUB or op == OP_A_SUBS:
            self.acc[idx] = f32c(self.acc[idx] - payload)
            self.c_fpu += 1
            self._mark_fpu(idx)
            successor_value = self.acc[idx]
        elif op == OP_A_MUL:
            self.acc[idx] = f32c(self.acc[idx] * payload)
            self.c_fpu += 1
            self._mark_fpu(idx)
            successor_value = self.acc[idx]
        elif op == OP_A_DIV or op == OP_A_DIVS:
            if payload != 0.0:
                self.acc[idx] = f32c(self.acc[idx] / payload)
            else:
                self.acc[idx] = float("nan")
            self.c_fpu += 1
            self._mark_fpu(idx)
            successor_value = self.acc[idx]
        elif op == OP_CMP:
            if payload > self.acc[idx]:
                self.acc[idx] = payload
            self.c_fpu += 1
            self._mark_fpu(idx)
            successor_value = self.acc[idx]
        elif op == OP_RELU:
            self.acc[idx] = self.acc[idx] if self.acc[idx] > 0.0 else 0.0
            self.c_fpu += 1
            self._mark_fpu(idx)
            successor_value = self.acc[idx]
        elif op == OP_AV_ADD:
            self.w_active[idx] = f32c(self.w_active[idx] + payload)
            self.c_fpu += 1
            self._mark_fpu(idx)
            successor_value = self.w_active[idx]
        else:
            raise FabricError(f"site {idx}: cannot execute opcode {<object>op:#06b}")
        if self.acc[idx] != self.acc[idx]:
            self.c_nan += 1
        self.c_retired += 1

        if op != OP_A_SUBS and op != OP_A_DIVS:
            tail = <int>(word & 0xFFFF)
            next_op = (tail >> 12) & 0xF
            if next_op:
                next_addr = tail & 0xFFF
                out = make_word_c(next_op, next_addr, f_to_bits_c(successor_value), 0)
                self.c_created += 1
                if next_op == OP_A_MULS:
                    self._emit_bottom(idx, out, True)  # handoff
                else:
                    drow = next_addr // self.cols
                    if drow > row:
                        self._emit_bottom(idx, out, False)
                    else:
                        self._emit_right(idx, out, False)

    # ------------------------------------------------------------ consumption

    cdef void _pop_top(self, int idx) noexcept:
        cdef int base = idx * self.depth
        cdef int j
        self.top_len[idx] -= 1
        for j in range(self.top_len[idx]):
            self.top_w[base + j] = self.top_w[base + j + 1]

    cdef void _pop_left(self, int idx) noexcept:
        cdef int base = idx * self.depth
        cdef int j
        self.left_len[idx] -= 1
        for j in range(self.left_len[idx]):
            self.left_w[base + j] = self.left_w[base + j + 1]

    cdef void _try_consume(self, int idx) except *:
        cdef bint exec_used = False
        # room in the bounded queues for one emission each; express
        # ingress is never a condition for executing
        cdef bint pend_free = (
            self.pr_len[idx] < PENDING_CAP and self.pb_len[idx] < PENDING_CAP
        )
        cdef bint top_dequeued = False
        cdef bint route_down, room, ok
        cdef unsigned long long word, er
        cdef int dest, op

        if self.top_len[idx] > 0:
            word = self.top_w[idx * self.depth]
            dest = <int>((word >> 48) & 0xFFF)
            op = <int>((word >> 60) & 0xF)
            if dest != idx:
                route_down = dest // self.cols > idx // self.cols
                if dest // self.cols < idx // self.cols or (
                    not route_down and dest % self.cols < idx % self.cols
                ):
                    raise FabricError(f"site {idx}: cannot route {<object>word:#018x} up/left")
                if route_down:
                    room = self.pb_len[idx] < PENDING_CAP
                else:
                    room = (
                        self._rides_bus(idx, word, op == OP_A_MULS)
                        or self.pr_len[idx] < PENDING_CAP
                    )
                if room:
                    self._pop_top(idx)
                    if route_down:
                        self._emit_bottom(idx, word, False)
                    else:
                        self._emit_right(idx, word, op == OP_A_MULS)
                    self.c_forwards += 1
                    self.c_deq_top += 1
                    top_dequeued = True
                    self.progress = True
                else:
                    self.c_stall_pending += 1
            elif op == OP_PROG:
                self._pop_top(idx)
                self.w_staging[idx] = bits_to_f_c(<unsigned int>((word >> 16) & 0xFFFFFFFF))
                self.staging_written[idx] = 1
                self.c_deq_top += 1
                self.c_retired += 1
                self.exec_by_op[op] += 1
                top_dequeued = True
                self.progress = True
            else:
                ok = pend_free
                if ok and op == OP_A_MULS:
                    ok = self._expected_source(idx) == 0
                    if not ok:
                        self.c_stall_peek += 1
                if ok:
                    self._pop_top(idx)
                    self.c_deq_top += 1
                    self._execute(idx, word)
                    exec_used = True
                    top_dequeued = True
                    self.progress = True
                elif not pend_free:
                    self.c_stall_pending += 1

        # reduce engine: a fold deposit at the exit-queue head drains in
        # parallel with the decoder, one per cycle
        cdef int exbase = idx * EXIT_QUEUE
        cdef int exj
        cdef bint er_full, er_from_fold
        if self.exf_len[idx] > 0:
            word = self.exf_w[exbase]
            if (
                <int>((word >> 60) & 0xF) == OP_A_ADDS
                and (word & 0xC000) != 0
            ):
                if pend_free:
                    if <int>((word >> 48) & 0xFFF) != idx:
                        raise FabricError(f"site {idx}: express exit for {(word >> 48) & 0xFFF}")
                    self.exf_len[idx] -= 1
                    for exj in range(self.exf_len[idx]):
                        self.exf_w[exbase + exj] = self.exf_w[exbase + exj + 1]
                    self.c_deq_exit += 1
                    self._execute(idx, word)
                    self.progress = True
                else:
                    self.c_stall_pending += 1

        if top_dequeued and not self.dual_dequeue:
            return
        # left lane: express exits outrank the left FIFO; a non-deposit
        # word at the exit-queue head waits for the decoder here
        er_full = self.exit_full[idx]
        er_from_fold = False
        if er_full:
            er = self.exit_w[idx]
        elif self.exf_len[idx] > 0:
            er = self.exf_w[exbase]
            if <int>((er >> 60) & 0xF) != OP_A_ADDS or (er & 0xC000) == 0:
                er_full = True
                er_from_fold = True
        if er_full and not exec_used:
            if <int>((er >> 48) & 0xFFF) != idx:
                raise FabricError(f"site {idx}: express exit for {(er >> 48) & 0xFFF}")
            ok = pend_free
            if ok and <int>((er >> 60) & 0xF) == OP_A_MULS:
                ok = self._expected_source(idx) == 1
                if not ok:
                    self.c_stall_peek += 1
            if ok:
                if er_from_fold:
                    self.exf_len[idx] -= 1
                    for exj in range(self.exf_len[idx]):
                        self.exf_w[exbase + exj] = self.exf_w[exbase + exj + 1]
                else:
                    self.exit_full[idx] = 0
                self.c_deq_exit += 1
                self._execute(idx, er)
                self.progress = True
                return  # one left-lane dequeue per cycle
            elif not pend_free:
                self.c_stall_pending += 1
        if self.left_len[idx] == 0:
            return
        word = self.left_w[idx * self.depth]
        dest = <int>((word >> 48) & 0xFFF)
        op = <int>((word >> 60) & 0xF)
        if dest != idx:
            if dest % self.cols < idx % self.cols or dest // self.cols != idx // self.cols:
                raise FabricError(f"site {idx}: left transit {<object>word:#018x} not rightward")
            if (
                self._rides_bus(idx, word, op == OP_A_MULS)
                or self.pr_len[idx] < PENDING_CAP
            ):
                self._pop_left(idx)
                self._emit_right(idx, word, op == OP_A_MULS)
                self.c_forwards += 1
                self.c_deq_left += 1
                self.progress = True
            else:
                self.c_stall_pending += 1
            return
        if exec_used:
            return
        ok = pend_free
        if ok and op == OP_A_MULS:
            ok = self._expected_source(idx) == 1
            if not ok:
                self.c_stall_peek += 1
        if ok:
            self._pop_left(idx)
            self.c_deq_left += 1
            self._execute(idx, word)
            self.progress = True
        elif not pend_free:
            self.c_stall_pending += 1

    # ------------------------------------------------------------------ cycle

    def step(self):
        """Run one cycle; returns False once the fabric is quiescent."""
        if self._quiescent():
            return False
        self.cycle += 1
        self.progress = False
        cdef int idx
        for idx in range(self.n):
            self.fpu_flag[idx] = 0
        self.n_fpu_sites = 0

        self._inject_l1()
        self._inject_host()
        self._express_advance()

        for idx in range(self.n):
            if self.active[idx]:
                self._grant_ports(idx)
        for idx in range(self.n):
            if self.active[idx]:
                self._try_consume(idx)

        self._commit()
        if self.progress:
            self.last_progress = self.cycle
        elif self.cycle - self.last_progress > self.livelock_limit:
            raise FabricError(self._stuck_report())
        return True

    cdef void _commit(self) except *:
        cdef long long inflight = self.express_count
        cdef int idx, k, a, b, sv, load, n_bus, n_act = 0
        cdef int dbase, lbase
        cdef unsigned long long wv
        for idx in range(self.n):
            if not (self.active[idx] or self.active_next[idx]):
                continue
            dbase = idx * self.depth
            k = self.tops_len[idx]
            if k:
                # stable insertion sort by source class
                for a in range(1, k):
                    sv = self.tops_src[dbase + a]
                    wv = self.tops_w[dbase + a]
                    b = a - 1
                    while b >= 0 and self.tops_src[dbase + b] > sv:
                        self.tops_src[dbase + b + 1] = self.tops_src[dbase + b]
                        self.tops_w[dbase + b + 1] = self.tops_w[dbase + b]
                        b -= 1
                    self.tops_src[dbase + b + 1] = sv
                    self.tops_w[dbase + b + 1] = wv
                lbase = dbase + self.top_len[idx]
                for a in range(k):
                    self.top_w[lbase + a] = self.tops_w[dbase + a]
                self.top_len[idx] += k
                self.tops_len[idx] = 0
            k = self.lefts_len[idx]
            if k:
                for a in range(1, k):
                    sv = self.lefts_src[dbase + a]
                    wv = self.lefts_w[dbase + a]
                    b = a - 1
                    while b >= 0 and self.lefts_src[dbase + b] > sv:
                        self.lefts_src[dbase + b + 1] = self.lefts_src[dbase + b]
                        self.lefts_w[dbase + b + 1] = self.lefts_w[dbase + b]
                        b -= 1
                    self.lefts_src[dbase + b + 1] = sv
                    self.lefts_w[dbase + b + 1] = wv
                lbase = dbase + self.left_len[idx]
                for a in range(k):
                    self.left_w[lbase + a] = self.lefts_w[dbase + a]
                self.left_len[idx] += k
                self.lefts_len[idx] = 0
            n_bus = len(<list>self.pend_bus[idx]) + len(<list>self.pend_bus_pix[idx])
            if n_bus > self.peak_bus_pend:
                self.peak_bus_pend = n_bus
            load = (
                self.top_len[idx]
                + self.left_len[idx]
                + self.pr_len[idx]
                + n_bus
                + self.pb_len[idx]
                + (1 if self.exit_full[idx] else 0)
                + self.exf_len[idx]
            )
            if load:
                self.active[idx] = 1
                n_act += 1
                inflight += load
            else:
                self.active[idx] = 0
            self.active_next[idx] = 0
        self.n_active = n_act
        self.n_active_next = 0
        self.c_inflight += inflight
        self.c_active_integral += n_act
        self.c_fpu_integral += self.n_fpu_sites

    cdef bint _quiescent(self) noexcept:
        return (
            self.n_active == 0
            and self.n_active_next == 0
            and self.express_count == 0
            and self.host_pos >= self.n_host
            and self.stage_pos >= self.n_stage
            and self.merge_pos >= len(self.merge_queue)
        )

    def _stuck_report(self):
        lines = [f"no progress for {self.livelock_limit} cycles at cycle {self.cycle}"]
        if self.merge_pos < len(self.merge_queue):
            lines.append(f"merge lane blocked at {self.merge_queue[self.merge_pos]!r}")
        if self.host_pos < self.n_host:
            lines.append(f"host stream blocked at word {self.host_pos}")
        shown = 0
        for idx in range(self.n):
            if not self.active[idx] or shown >= 8:
                continue
            shown += 1
            lines.append(
                f"site {divmod(idx, self.cols)}: top={self.top_len[idx]} "
                f"left={self.left_len[idx]} pr={self.pr_len[idx]} "
                f"bus={len(<list>self.pend_bus[idx])}+{len(<list>self.pend_bus_pix[idx])} "
                f"pb={self.pb_len[idx]} "
                f"ex={'x' if self.exit_full[idx] else '-'}/{self.exf_len[idx]}"
            )
        open_slots = [
            ((k >> 2, k & 3), len(v)) for k, v in self.slots.items() if v
        ]
        if open_slots:
            lines.append(f"open fold slots: {open_slots[:6]}")
        return "\n".join(lines)

    @property
    def counters(self):
        return {
            "cycles": self.cycle,
            "fpu_ops": self.c_fpu,
            "host_injected": self.c_host_inj,
            "l1_stage_injected": self.c_stage_inj,
            "l1_merge_injected": self.c_merge_inj,
            "spawned_down": self.c_spawn_down,
            "spawned_right": self.c_spawn_right,
            "deposits_emitted": self.c_deposits,
            "tiles_stored": self.c_tiles_stored,
            "tile_words_released": self.c_tile_released,
            "handoffs_captured": self.c_handoffs,
            "forwards": self.c_forwards,
            "express_boards": self.c_boards,
            "express_moves": self.c_moves,
            "dequeues_top": self.c_deq_top,
            "dequeues_left": self.c_deq_left,
            "dequeues_exit": self.c_deq_exit,
            "executions": self.c_exec,
            "inflight_integral": self.c_inflight,
            "active_site_integral": self.c_active_integral,
            "fpu_site_integral": self.c_fpu_integral,
            "nan_events": self.c_nan,
            "created": self.c_created,
            "retired": self.c_retired,
            "stall_peek": self.c_stall_peek,
            "stall_pending": self.c_stall_pending,
        }

    def run(self):
        while self.step():
            pass
        if self.tiles:
            raise FabricError(f"{len(self.tiles)} partial tiles never released")
        open_slots = [(k >> 2, k & 3) for k, v in self.slots.items() if v]
        if open_slots:
            raise FabricError(f"incomplete folds at quiescence: {open_slots[:6]}")
        counters = self.counters
        cdef int op
        counters["executed_by_op"] = {
            op: self.exec_by_op[op] for op in range(16) if self.exec_by_op[op]
        }
        counters["peak_tile_bytes"] = self.peak_tile_bytes
        counters["peak_bus_pend"] = self.peak_bus_pend
        return {"counters": counters, "captures": list(self.captures)}
