"""Cycle-level 40:1 DDR serializer, 2:40 deserializer and bit-shift realigner.

The serializer emits two bits per fast-clock cycle (one per edge); a
counter walks the five 8-bit groups of the loaded 40-bit flit, so a flit
takes 20 cycles.  The deserializer mirrors this.  The realigner models
the receive timing synchronizer that swaps the even/odd pairing by one
bit when the framing was detected at odd alignment.
"""

from typing import NamedTuple

from .codec import FLIT_BITS
from .errors import Underflow

GROUP_BITS = 8
GROUPS = FLIT_BITS // GROUP_BITS  # counter wraps 0..4


class BitPair(NamedTuple):
    even: int  # rising-edge sample, transmitted first
    odd: int   # falling-edge sample


class Serializer:
    """Serializes loaded 40-bit flits, two bits per step, bit 0 first."""

    def __init__(self):
        self._bits = None
        self._pos = 0
        self._next = None

    @property
    def counter(self):
        """Group counter visible to the TX controller: bits_sent//8 mod 5."""
        return (self._pos // GROUP_BITS) % GROUPS

    @property
    def flit_done(self):
        return self._bits is None or self._pos == FLIT_BITS

    def load(self, bits):
        """Queue the next flit (a 40-entry bit list)."""
        if len(bits) != FLIT_BITS:
            raise ValueError(f"flit must be {FLIT_BITS} bits")
        if self._bits is None or self._pos == FLIT_BITS:
            self._bits = list(bits)
            self._pos = 0
        elif self._next is None:
            self._next = list(bits)
        else:
            raise ValueError("a flit is already pending")

    def step(self):
        """Emit one DDR pair; returns (BitPair, counter_before_emit)."""
        if self._bits is None or self._pos == FLIT_BITS:
            if self._next is None:
                raise Underflow("serializer stepped with no flit loaded")
            self._bits, self._next = self._next, None
            self._pos = 0
        counter = self.counter
        pair = BitPair(self._bits[self._pos], self._bits[self._pos + 1])
        self._pos += 2
        return pair, counter


class Deserializer:
    """Rebuilds 40-bit words from DDR pairs; emits one word per 20 pairs."""

    def __init__(self):
        self._bits = []

    @property
    def counter(self):
        return (len(self._bits) // GROUP_BITS) % GROUPS

    def reset(self):
        self._bits = []

    def push(self, pair):
        """Consume one pair; returns the completed 40-bit word or None."""
        self._bits.extend(pair)
        if len(self._bits) == FLIT_BITS:
            word = sum(b << k for k, b in enumerate(self._bits))
            self._bits = []
            return word
        return None


class ShiftRealigner:
    """Corrects a one-bit even/odd capture shift.

    With ``shift`` set, each output pair is (previous odd bit, current
    even bit), delaying the stream by one bit; the first output reuses
    the last bit seen before the shift was enabled (0 at reset).
    """

    def __init__(self, shift=False):
        self.shift = shift
        self._last_odd = 0

    def push(self, pair):
        if self.shift:
            out = BitPair(self._last_odd, pair.even)
        else:
            out = BitPair(pair.even, pair.odd)
        self._last_odd = pair.odd
        return out


def apply_shift(pairs, shift):
    """Realign a whole pair stream; identity when shift is False."""
    realigner = ShiftRealigner(shift)
    return [realigner.push(p) for p in pairs]
