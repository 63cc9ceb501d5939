"""8b/10b line coding and 40-bit flit framing.

Classic IBM 8b/10b coding: each byte is split into a 5-bit and a
3-bit field, mapped to 6-bit and 4-bit sub-blocks, with alternate
(complemented) sub-blocks selected by the running disparity so the
serial stream stays DC-balanced.

A flit is four byte lanes encoded into 40 wire bits.  One running
disparity is threaded through the four lanes (lane 0 first), so the
serialized stream behaves exactly like a single 8b/10b stream and its
running digital sum never strays more than 3 bits from its start.

Bit order: codes are stored as integers whose bit ``k`` is the ``k``-th
bit on the wire (sub-block ``abcdei`` first, then ``fghj``, LSB-first).
With this order, the start/stop frame headers carry the raw marker byte
as their first 8 wire bits.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import DisparityError, InvalidCode, UnsupportedControlSymbol


class Disparity(enum.Enum):
    """Running disparity: cumulative ones-minus-zeros sign of the stream."""

    NEGATIVE = -1
    POSITIVE = 1

    def flipped(self) -> "Disparity":
        return Disparity(-self.value)


def D(x, y):
    """Byte value of data symbol Dx.y."""
    return (y << 5) | x


def K(x, y):
    """Byte value of control symbol Kx.y."""
    return (y << 5) | x


@dataclass(frozen=True)
class Symbol:
    """One 8-bit symbol plus its data/control class."""

    payload: int
    is_control: bool = False


# 5b/6b sub-blocks, negative-disparity column, wire order (first bit first).
_FIVE_SIX = [
    "100111",  # D.00
    "011101",  # D.01
    "101101",  # D.02
    "110001",  # D.03
    "110101",  # D.04
    "101001",  # D.05
    "011001",  # D.06
    "111000",  # D.07
    "111001",  # D.08
    "100101",  # D.09
    "010101",  # D.10
    "110100",  # D.11
    "001101",  # D.12
    "101100",  # D.13
    "011100",  # D.14
    "010111",  # D.15
    "011011",  # D.16
    "100011",  # D.17
    "010011",  # D.18
    "110010",  # D.19
    "001011",  # D.20
    "101010",  # D.21
    "011010",  # D.22
    "111010",  # D.23
    "110011",  # D.24
    "100110",  # D.25
    "010110",  # D.26
    "110110",  # D.27
    "001110",  # D.28
    "101110",  # D.29
    "011110",  # D.30
    "101011",  # D.31
]

# 3b/4b sub-blocks, negative-disparity column.
_THREE_FOUR = [
    "1011",  # D.x.0
    "1001",  # D.x.1
    "0101",  # D.x.2
    "1100",  # D.x.3
    "1101",  # D.x.4
    "1010",  # D.x.5
    "0110",  # D.x.6
    "1110",  # D.x.7 (primary)
]

# Alternate D.x.7 sub-block, used to break runs of five; selection rule below.
_ALT7_NEG = "0111"
_ALT7_POS = "1000"
_ALT7_AT_NEG = {17, 18, 20}
_ALT7_AT_POS = {11, 13, 14}

# Control characters, negative-disparity column; the positive column is the
# bitwise complement for every control code.
_K_CODES = {
    K(28, 0): "0011110100",
    K(28, 1): "0011111001",
    K(28, 2): "0011110101",
    K(28, 3): "0011110011",
    K(28, 4): "0011110010",
    K(28, 5): "0011111010",
    K(28, 6): "0011110110",
    K(28, 7): "0011111000",
    K(23, 7): "1110101000",
    K(27, 7): "1101101000",
    K(29, 7): "1011101000",
    K(30, 7): "0111101000",
}

SUPPORTED_CONTROL = frozenset(_K_CODES)


def _bits(s):
    return tuple(int(c) for c in s)


def _disp(bits):
    return 2 * sum(bits) - len(bits)


def _comp(bits):
    return tuple(1 - b for b in bits)


def _to_int(bits):
    return sum(b << k for k, b in enumerate(bits))


def _encode_data(byte, rd):
    x = byte & 0x1F
    y = byte >> 5

    six = _bits(_FIVE_SIX[x])
    flip6 = _disp(six) != 0 or x == 7
    c6 = six if rd is Disparity.NEGATIVE or not flip6 else _comp(six)
    rd_mid = rd.flipped() if _disp(c6) != 0 else rd

    if y == 7 and (
        (rd_mid is Disparity.NEGATIVE and x in _ALT7_AT_NEG)
        or (rd_mid is Disparity.POSITIVE and x in _ALT7_AT_POS)
    ):
        c4 = _bits(_ALT7_NEG if rd_mid is Disparity.NEGATIVE else _ALT7_POS)
    else:
        four = _bits(_THREE_FOUR[y])
        flip4 = _disp(four) != 0 or y == 3
        c4 = four if rd_mid is Disparity.NEGATIVE or not flip4 else _comp(four)
    rd_out = rd_mid.flipped() if _disp(c4) != 0 else rd_mid

    return _to_int(c6 + c4), rd_out


def _encode_control(byte, rd):
    neg = _bits(_K_CODES[byte])
    cell = neg if rd is Disparity.NEGATIVE else _comp(neg)
    rd_out = rd.flipped() if _disp(cell) != 0 else rd
    return _to_int(cell), rd_out


def _build_tables():
    encode = {}
    decode = {}
    legal_rd = {}
    for rd in Disparity:
        for byte in range(256):
            code, rd_out = _encode_data(byte, rd)
            encode[(byte, False, rd)] = (code, rd_out)
            decode[(code, rd)] = (Symbol(byte), rd_out)
            legal_rd.setdefault(code, set()).add(rd)
        for byte in SUPPORTED_CONTROL:
            code, rd_out = _encode_control(byte, rd)
            encode[(byte, True, rd)] = (code, rd_out)
            if (code, rd) in decode:
                raise AssertionError("control code collides with data code")
            decode[(code, rd)] = (Symbol(byte, is_control=True), rd_out)
            legal_rd.setdefault(code, set()).add(rd)
    return encode, decode, legal_rd


_ENCODE, _DECODE, _LEGAL_RD = _build_tables()


def encode_symbol(sym: Symbol, rd: Disparity):
    """Encode one symbol, returning (10-bit code, updated disparity)."""
    if sym.is_control and sym.payload not in SUPPORTED_CONTROL:
        raise UnsupportedControlSymbol(f"0x{sym.payload:02x} is not a supported K character")
    return _ENCODE[(sym.payload & 0xFF, sym.is_control, rd)]


def decode_symbol(code: int, rd: Disparity):
    """Decode one 10-bit code, returning (Symbol, updated disparity)."""
    rds = _LEGAL_RD.get(code)
    if rds is None:
        raise InvalidCode(f"0b{code:010b} is not an 8b/10b code")
    if rd not in rds:
        raise DisparityError(f"0b{code:010b} is not legal at {rd.name} disparity")
    return _DECODE[(code, rd)]


# Frame markers.  The start/stop headers carry these bytes raw (not 8b/10b
# encoded) as their first 8 wire bits; encoded payload can never produce a
# run of five equal bits, so the markers are unambiguous on the wire.
START_BYTE = K(27, 7)  # 0xfb -> wire bits 11011111
STOP_BYTE = K(29, 7)   # 0xfd -> wire bits 10111111

# Alternating filler code: the 8b/10b encoding of D21.5, identical at both
# disparities.  Training flits and header filler lanes use it so the clock
# recovery sees a transition on every bit.
FILLER_CODE = encode_symbol(Symbol(D(21, 5)), Disparity.NEGATIVE)[0]

LANES = 4
CODE_BITS = 10
FLIT_BITS = LANES * CODE_BITS


class FlitKind(enum.Enum):
    DATA = "data"
    START = "start"
    STOP = "stop"
    TRAINING = "training"


@dataclass(frozen=True)
class Flit:
    """One 40-bit frame: four 10-bit lane codes, lane 0 transmitted first."""

    kind: FlitKind
    lanes: tuple
    word: int | None = None

    def bits(self):
        out = []
        for code in self.lanes:
            out.extend((code >> k) & 1 for k in range(CODE_BITS))
        return out

    def to_int(self):
        value = 0
        for i, code in enumerate(self.lanes):
            value |= code << (CODE_BITS * i)
        return value

    @classmethod
    def from_int(cls, value, kind=FlitKind.DATA, word=None):
        lanes = tuple((value >> (CODE_BITS * i)) & 0x3FF for i in range(LANES))
        return cls(kind, lanes, word)


def _header_code(marker_byte):
    # Raw marker byte LSB-first, padded with two zeros to lane width.
    return marker_byte & 0xFF


def encode_flit(kind: FlitKind, word=None, rd=Disparity.NEGATIVE,
                start_byte=START_BYTE, stop_byte=STOP_BYTE):
    """Build one flit, returning (Flit, updated disparity).

    Data flits thread the running disparity through the four lanes; header
    and training flits are disparity-neutral and leave it unchanged.
    """
    if kind is FlitKind.DATA:
        if word is None:
            raise ValueError("data flit requires a 32-bit word")
        lanes = []
        for i in range(LANES):
            byte = (word >> (8 * i)) & 0xFF
            code, rd = encode_symbol(Symbol(byte), rd)
            lanes.append(code)
        return Flit(kind, tuple(lanes), word & 0xFFFFFFFF), rd
    if word is not None:
        raise ValueError(f"{kind.value} flit carries no word")
    if kind is FlitKind.START:
        lanes = (_header_code(start_byte),) + (FILLER_CODE,) * 3
    elif kind is FlitKind.STOP:
        lanes = (_header_code(stop_byte),) + (FILLER_CODE,) * 3
    else:
        lanes = (FILLER_CODE,) * LANES
    return Flit(kind, lanes), rd


def decode_flit(flit: Flit, rd=Disparity.NEGATIVE,
                start_byte=START_BYTE, stop_byte=STOP_BYTE):
    """Classify and decode one received flit.

    Returns ((FlitKind, word-or-None), updated disparity).  Start/stop
    frames are recognized by their raw 8-bit header before any 8b/10b
    decoding is attempted; lane decode errors carry the lane index.
    """
    first8 = flit.lanes[0] & 0xFF
    if first8 == start_byte and flit.lanes[0] >> 8 == 0:
        return (FlitKind.START, None), rd
    if first8 == stop_byte and flit.lanes[0] >> 8 == 0:
        return (FlitKind.STOP, None), rd
    if all(code == FILLER_CODE for code in flit.lanes):
        return (FlitKind.TRAINING, None), rd
    word = 0
    for i, code in enumerate(flit.lanes):
        try:
            sym, rd = decode_symbol(code, rd)
        except (InvalidCode, DisparityError) as exc:
            raise type(exc)(f"lane {i}: {exc}") from None
        if sym.is_control:
            raise InvalidCode(f"lane {i}: unexpected control symbol 0x{sym.payload:02x}")
        word |= sym.payload << (8 * i)
    return (FlitKind.DATA, word), rd


def export_code_table(path):
    """Dump the full code table as CSV: byte,is_control,rd_in,code10,rd_out."""
    rows = []
    for (byte, is_control, rd), (code, rd_out) in sorted(
        _ENCODE.items(), key=lambda kv: (kv[0][1], kv[0][0], kv[0][2].value)
    ):
        rows.append(f"{byte},{int(is_control)},{rd.value},{code},{rd_out.value}")
    with open(path, "w") as fh:
        fh.write("byte,is_control,rd_in,code10,rd_out\n")
        fh.write("\n".join(rows) + "\n")
