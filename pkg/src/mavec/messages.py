"""64-bit message codec.

Every unit of work in the fabric is one 64-bit word:

    bits [63:60]  opcode of the operation to perform at the target site
    bits [59:48]  target site address, row * cols + col (12 bits)
    bits [47:16]  payload, an IEEE-754 single or raw bits (32 bits)
    bits [15:0]   tail, interpreted by the present opcode (16 bits)

Tail interpretation is keyed on the present opcode:

- Scalar-broadcast opcodes (A_ADDS, A_SUBS, A_MULS, A_DIVS) carry a
  16-bit pattern field describing how the message propagates:

      bit  [15]    shift     spawn a copy one row down after executing
      bit  [14]    tstream   spawn a copy to the next fold group after
                             executing (row-0 pixel streaming)
      bit  [13]    identity  pass the payload through unmodified
      bits [12:7]  shift_step    6-bit small integer, role-specific
      bits [6:0]   group_offset  7-bit small integer, role-specific

- Every other assigned opcode carries a successor header: bits [15:12]
  are the opcode and bits [11:0] the address of the message to create
  from the result once the present operation completes.  A zero next
  opcode means the result stays at the site (no successor).

An all-zero tail is bit-identical under both readings, so messages with
no propagation pattern and no successor are canonical regardless of
opcode class.

Opcode nibbles 0b0000, 0b1110, and 0b1111 are unassigned; decoding a
word whose present opcode (or successor opcode) uses one of them raises
``MessageDecodeError``, except that a successor opcode of 0b0000 is the
"no successor" terminator.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from enum import IntEnum

OPCODE_SHIFT = 60
ADDRESS_SHIFT = 48
PAYLOAD_SHIFT = 16

OPCODE_MASK = 0xF
ADDRESS_MASK = 0xFFF
PAYLOAD_MASK = 0xFFFFFFFF
TAIL_MASK = 0xFFFF

PATTERN_SHIFT_BIT = 1 << 15
PATTERN_TSTREAM_BIT = 1 << 14
PATTERN_IDENTITY_BIT = 1 << 13
PATTERN_STEP_SHIFT = 7
PATTERN_STEP_MASK = 0x3F
PATTERN_OFFSET_MASK = 0x7F

DUMP_MAGIC = "#! mavec-msgs v1"


class Opcode(IntEnum):
    """Assigned 4-bit opcodes.

    The array opcodes come in element/scalar pairs: A_ADD folds the
    payload into the site accumulator, A_ADDS adds the payload to the
    site register and broadcasts per its pattern field, and so on.
    """

    PROG = 0b0001
    A_MUL = 0b0010
    RELU = 0b0011
    A_ADD = 0b0100
    A_SUB = 0b0101
    A_DIV = 0b0110
    A_ADDS = 0b0111
    A_SUBS = 0b1000
    A_MULS = 0b1001
    A_DIVS = 0b1010
    AV_ADD = 0b1011
    CMP = 0b1100
    UPDATE = 0b1101


ASSIGNED_OPCODES = frozenset(op.value for op in Opcode)

# Opcodes whose tail is a pattern field rather than a successor header.
SCALAR_TAIL_OPCODES = frozenset(
    {Opcode.A_ADDS, Opcode.A_SUBS, Opcode.A_MULS, Opcode.A_DIVS}
)


class MessageDecodeError(ValueError):
    """Raised when a 64-bit word is not a well-formed message."""


def f32_bits(value: float) -> int:
    """Round ``value`` to IEEE-754 single and return its 32 raw bits."""
    return struct.unpack("<I", struct.pack("<f", value))[0]


def bits_f32(bits: int) -> float:
    """Reinterpret 32 raw bits as an IEEE-754 single."""
    return struct.unpack("<f", struct.pack("<I", bits & PAYLOAD_MASK))[0]


def site_address(row: int, col: int, cols: int) -> int:
    """Pack a (row, col) site coordinate into a 12-bit address."""
    addr = row * cols + col
    if not 0 <= addr <= ADDRESS_MASK:
        raise ValueError(f"site ({row},{col}) with {cols} cols exceeds 12-bit address")
    return addr


def address_rowcol(address: int, cols: int) -> tuple[int, int]:
    """Unpack a 12-bit address into (row, col) for a ``cols``-wide array."""
    return address // cols, address % cols


@dataclass(frozen=True)
class PatternBits:
    """Propagation pattern carried in the tail of scalar-broadcast messages."""

    shift: bool = False
    tstream: bool = False
    identity: bool = False
    shift_step: int = 0
    group_offset: int = 0

    def encode(self) -> int:
        if not 0 <= self.shift_step <= PATTERN_STEP_MASK:
            raise ValueError(f"shift_step {self.shift_step} exceeds 6 bits")
        if not 0 <= self.group_offset <= PATTERN_OFFSET_MASK:
            raise ValueError(f"group_offset {self.group_offset} exceeds 7 bits")
        bits = 0
        if self.shift:
            bits |= PATTERN_SHIFT_BIT
        if self.tstream:
            bits |= PATTERN_TSTREAM_BIT
        if self.identity:
            bits |= PATTERN_IDENTITY_BIT
        bits |= self.shift_step << PATTERN_STEP_SHIFT
        bits |= self.group_offset
        return bits

    @classmethod
    def decode(cls, bits: int) -> "PatternBits":
        return cls(
            shift=bool(bits & PATTERN_SHIFT_BIT),
            tstream=bool(bits & PATTERN_TSTREAM_BIT),
            identity=bool(bits & PATTERN_IDENTITY_BIT),
            shift_step=(bits >> PATTERN_STEP_SHIFT) & PATTERN_STEP_MASK,
            group_offset=bits & PATTERN_OFFSET_MASK,
        )


NO_PATTERN = PatternBits()


@dataclass(frozen=True)
class Message:
    """One decoded 64-bit message.

    Exactly one of the tail views is meaningful, selected by ``opcode``:
    ``pattern`` for scalar-broadcast opcodes, (``next_op``, ``next_addr``)
    for everything else.  ``next_op`` is None when there is no successor.
    """

    opcode: Opcode
    address: int
    payload: int  # raw 32 bits; use payload_f32 for the float view
    pattern: PatternBits = NO_PATTERN
    next_op: Opcode | None = None
    next_addr: int = 0

    @property
    def payload_f32(self) -> float:
        return bits_f32(self.payload)

    def tail_bits(self) -> int:
        if self.opcode in SCALAR_TAIL_OPCODES:
            return self.pattern.encode()
        if self.next_op is None:
            return 0
        return ((self.next_op & OPCODE_MASK) << 12) | (self.next_addr & ADDRESS_MASK)

    def encode(self) -> int:
        if not 0 <= self.address <= ADDRESS_MASK:
            raise ValueError(f"address {self.address} exceeds 12 bits")
        word = (self.opcode & OPCODE_MASK) << OPCODE_SHIFT
        word |= (self.address & ADDRESS_MASK) << ADDRESS_SHIFT
        word |= (self.payload & PAYLOAD_MASK) << PAYLOAD_SHIFT
        word |= self.tail_bits()
        return word

    @classmethod
    def decode(cls, word: int) -> "Message":
        if not 0 <= word < (1 << 64):
            raise MessageDecodeError(f"word {word:#x} is not 64 bits")
        op_bits = (word >> OPCODE_SHIFT) & OPCODE_MASK
        if op_bits not in ASSIGNED_OPCODES:
            raise MessageDecodeError(f"unassigned opcode {op_bits:#06b} in {word:#018x}")
        opcode = Opcode(op_bits)
        address = (word >> ADDRESS_SHIFT) & ADDRESS_MASK
        payload = (word >> PAYLOAD_SHIFT) & PAYLOAD_MASK
        tail = word & TAIL_MASK
        if opcode in SCALAR_TAIL_OPCODES:
            return cls(opcode, address, payload, pattern=PatternBits.decode(tail))
        next_bits = (tail >> 12) & OPCODE_MASK
        next_addr = tail & ADDRESS_MASK
        if next_bits == 0:
            if next_addr != 0:
                raise MessageDecodeError(
                    f"successor address {next_addr} without successor opcode in {word:#018x}"
                )
            return cls(opcode, address, payload)
        if next_bits not in ASSIGNED_OPCODES:
            raise MessageDecodeError(
                f"unassigned successor opcode {next_bits:#06b} in {word:#018x}"
            )
        return cls(opcode, address, payload, next_op=Opcode(next_bits), next_addr=next_addr)

    def successor(self, result_bits: int) -> "Message | None":
        """The message this one turns into after executing.

        The result of the present operation becomes the payload of a new
        message aimed at the successor header, with an empty tail.  Scalar
        tailed messages and messages without a successor return None.
        """
        if self.opcode in SCALAR_TAIL_OPCODES or self.next_op is None:
            return None
        return Message(self.next_op, self.next_addr, result_bits & PAYLOAD_MASK)


def describe(word: int, cols: int | None = None) -> str:
    """Render one word for dump comments, e.g. 'A_MULS @2,5 p=0.5 [S]'."""
    msg = Message.decode(word)
    if cols:
        r, c = address_rowcol(msg.address, cols)
        where = f"@{r},{c}"
    else:
        where = f"@{msg.address}"
    text = f"{msg.opcode.name} {where} p={msg.payload_f32:g}"
    if msg.opcode in SCALAR_TAIL_OPCODES:
        pat = msg.pattern
        flags = "".join(
            ch for ch, on in (("S", pat.shift), ("T", pat.tstream), ("I", pat.identity)) if on
        )
        if flags or pat.shift_step or pat.group_offset:
            text += f" [{flags or '-'} step={pat.shift_step} off={pat.group_offset}]"
    elif msg.next_op is not None:
        if cols:
            nr, nc = address_rowcol(msg.next_addr, cols)
            text += f" -> {msg.next_op.name}@{nr},{nc}"
        else:
            text += f" -> {msg.next_op.name}@{msg.next_addr}"
    return text


def dump_words(words, out, directives: dict | None = None, cols: int | None = None) -> None:
    """Write a message dump: magic line, '#@ key=value' directives, then
    one 16-hex-digit word per line with a trailing description comment."""
    own = isinstance(out, str)
    fh = open(out, "w") if own else out
    try:
        fh.write(DUMP_MAGIC + "\n")
        for key, value in (directives or {}).items():
            fh.write(f"#@ {key}={value}\n")
        for word in words:
            fh.write(f"{word:016x}  # {describe(word, cols)}\n")
    finally:
        if own:
            fh.close()


def load_dump(src) -> tuple[list[int], dict]:
    """Parse a message dump back into (words, directives).

    Accepts a path, a file object, or the dump text itself.
    """
    if isinstance(src, str):
        if "\n" in src or src.startswith("#"):
            fh = io.StringIO(src)
        else:
            fh = open(src)
    else:
        fh = src
    words: list[int] = []
    directives: dict = {}
    try:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#@"):
                key, _, value = line[2:].strip().partition("=")
                directives[key.strip()] = value.strip()
                continue
            if line.startswith("#"):
                continue
            word_text = line.split("#", 1)[0].strip()
            word = int(word_text, 16)
            Message.decode(word)  # validate
            words.append(word)
    finally:
        if fh is not src and isinstance(src, str) and "\n" not in src and not src.startswith("#"):
            fh.close()
    return words, directives
