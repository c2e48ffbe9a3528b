"""Codec tests: bit layout, tail discrimination, round-trips, dumps."""

import io

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mavec.messages import (
    ASSIGNED_OPCODES,
    SCALAR_TAIL_OPCODES,
    Message,
    MessageDecodeError,
    Opcode,
    PatternBits,
    address_rowcol,
    bits_f32,
    describe,
    dump_words,
    f32_bits,
    load_dump,
    site_address,
)


def test_opcode_nibbles():
    assert Opcode.PROG == 0b0001
    assert Opcode.A_MUL == 0b0010
    assert Opcode.RELU == 0b0011
    assert Opcode.A_ADD == 0b0100
    assert Opcode.A_SUB == 0b0101
    assert Opcode.A_DIV == 0b0110
    assert Opcode.A_ADDS == 0b0111
    assert Opcode.A_SUBS == 0b1000
    assert Opcode.A_MULS == 0b1001
    assert Opcode.A_DIVS == 0b1010
    assert Opcode.AV_ADD == 0b1011
    assert Opcode.CMP == 0b1100
    assert Opcode.UPDATE == 0b1101
    assert len(Opcode) == 13
    assert ASSIGNED_OPCODES == set(range(1, 14))


def test_unassigned_opcodes_rejected():
    for nibble in (0b0000, 0b1110, 0b1111):
        with pytest.raises(MessageDecodeError):
            Message.decode(nibble << 60)


def test_unassigned_successor_rejected():
    word = Message(Opcode.A_ADD, 5, 0).encode()
    for nibble in (0b1110, 0b1111):
        with pytest.raises(MessageDecodeError):
            Message.decode(word | (nibble << 12) | 7)


def test_field_placement():
    msg = Message(
        Opcode.A_MULS,
        address=0xABC,
        payload=0x12345678,
        pattern=PatternBits(shift=True, shift_step=3, group_offset=5),
    )
    word = msg.encode()
    assert (word >> 60) & 0xF == 0b1001
    assert (word >> 48) & 0xFFF == 0xABC
    assert (word >> 16) & 0xFFFFFFFF == 0x12345678
    assert word & 0xFFFF == (1 << 15) | (3 << 7) | 5


def test_next_field_placement():
    msg = Message(Opcode.UPDATE, address=1, payload=0, next_op=Opcode.A_ADDS, next_addr=0x0FE)
    word = msg.encode()
    assert word & 0xFFFF == (0b0111 << 12) | 0x0FE
    back = Message.decode(word)
    assert back.next_op == Opcode.A_ADDS
    assert back.next_addr == 0x0FE


def test_zero_tail_is_canonical_for_both_classes():
    # No pattern and no successor both encode a zero tail.
    scalar = Message(Opcode.A_ADDS, 7, 42).encode()
    plain = Message(Opcode.A_ADD, 7, 42).encode()
    assert scalar & 0xFFFF == 0
    assert plain & 0xFFFF == 0
    assert scalar ^ plain == (0b0111 ^ 0b0100) << 60  # only the opcode differs


def test_tail_discrimination_by_opcode():
    tail = (1 << 15) | (2 << 7) | 9
    for op in Opcode:
        word = ((op & 0xF) << 60) | tail
        msg = Message.decode(word)
        if op in SCALAR_TAIL_OPCODES:
            assert msg.pattern == PatternBits(shift=True, shift_step=2, group_offset=9)
            assert msg.next_op is None
        else:
            assert msg.next_op == Opcode.A_SUBS  # tail 0x8109, top nibble 0b1000
            assert msg.next_addr == tail & 0xFFF


def test_successor_rewrite():
    msg = Message(Opcode.UPDATE, 3, f32_bits(1.5), next_op=Opcode.A_MULS, next_addr=0x11)
    out = msg.successor(f32_bits(2.5))
    assert out == Message(Opcode.A_MULS, 0x11, f32_bits(2.5))
    assert out.tail_bits() == 0
    assert Message(Opcode.A_ADD, 3, 0).successor(1) is None
    assert Message(Opcode.A_MULS, 3, 0).successor(1) is None


def test_payload_f32_round_trip():
    for value in (0.0, 1.0, -2.75, 0.0625, 3.14159):
        assert bits_f32(f32_bits(value)) == pytest.approx(value, rel=1e-6)
    msg = Message(Opcode.PROG, 0, f32_bits(-0.5))
    assert Message.decode(msg.encode()).payload_f32 == -0.5


def test_site_address_round_trip():
    assert site_address(2, 5, 24) == 53
    assert address_rowcol(53, 24) == (2, 5)
    assert site_address(63, 63, 64) == 4095
    with pytest.raises(ValueError):
        site_address(64, 0, 64)


opcode_st = st.sampled_from(list(Opcode))
address_st = st.integers(0, 0xFFF)
payload_st = st.integers(0, 0xFFFFFFFF)
pattern_st = st.builds(
    PatternBits,
    shift=st.booleans(),
    tstream=st.booleans(),
    identity=st.booleans(),
    shift_step=st.integers(0, 0x3F),
    group_offset=st.integers(0, 0x7F),
)


@given(op=opcode_st, address=address_st, payload=payload_st, pattern=pattern_st,
       next_op=st.none() | opcode_st, next_addr=address_st)
def test_encode_decode_round_trip(op, address, payload, pattern, next_op, next_addr):
    if op in SCALAR_TAIL_OPCODES:
        msg = Message(op, address, payload, pattern=pattern)
    else:
        msg = Message(op, address, payload, next_op=next_op,
                      next_addr=next_addr if next_op is not None else 0)
    word = msg.encode()
    assert 0 <= word < (1 << 64)
    assert Message.decode(word) == msg
    assert Message.decode(word).encode() == word


def test_describe_mentions_target_and_successor():
    word = Message(Opcode.UPDATE, site_address(1, 2, 24), f32_bits(0.25),
                   next_op=Opcode.A_ADD, next_addr=site_address(3, 4, 24)).encode()
    text = describe(word, cols=24)
    assert "UPDATE" in text and "@1,2" in text and "A_ADD@3,4" in text


def test_dump_round_trip():
    words = [
        Message(Opcode.PROG, 5, f32_bits(0.5)).encode(),
        Message(Opcode.A_MULS, 6, f32_bits(1.0),
                pattern=PatternBits(shift=True, tstream=True)).encode(),
        Message(Opcode.UPDATE, 7, 0, next_op=Opcode.RELU, next_addr=7).encode(),
    ]
    buf = io.StringIO()
    dump_words(words, buf, directives={"rows": 4, "cols": 24}, cols=24)
    text = buf.getvalue()
    assert text.startswith("#! mavec-msgs v1\n")
    back, directives = load_dump(text)
    assert back == words
    assert directives == {"rows": "4", "cols": "24"}


def test_dump_rejects_bad_words():
    with pytest.raises(MessageDecodeError):
        load_dump("#! mavec-msgs v1\n0000000000000000\n")
