"""Link controllers: TX framing FSM, RX sequence detector, RX enables.

The TX controller walks Idle -> Warm-up -> Start-header -> Data-comm ->
Stop-header and selects the flit the serializer sends next.  The RX
sequence detector watches the raw comparator bit pairs for the start and
stop markers at either bit alignment and reports the capture shift.  The
RX controller turns detector events and the enable registers into stage
enables for the deserializer and decoders.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from . import codec, datapath
from .codec import Disparity, FlitKind


class TxState(enum.Enum):
    IDLE = "idle"
    WARM_UP = "warm_up"
    START_HEADER = "start_header"
    DATA_COMM = "data_comm"
    STOP_HEADER = "stop_header"


@dataclass(frozen=True)
class TxAction:
    state: TxState
    flit_select: FlitKind | None  # flit to load for the next period
    encoder_enable: bool
    pop_word: bool  # consume one word from the TX FIFO


def tx_fsm_step(state, valid, warm_en, comm_en):
    """One TX controller decision at a flit boundary."""
    if state is TxState.IDLE:
        nxt = TxState.WARM_UP if warm_en else TxState.IDLE
    elif state is TxState.WARM_UP:
        if not warm_en:
            nxt = TxState.IDLE
        elif comm_en and valid:
            nxt = TxState.START_HEADER
        else:
            nxt = TxState.WARM_UP
    elif state is TxState.START_HEADER:
        nxt = TxState.DATA_COMM if valid else TxState.STOP_HEADER
    elif state is TxState.DATA_COMM:
        nxt = TxState.DATA_COMM if valid else TxState.STOP_HEADER
    else:  # STOP_HEADER
        nxt = TxState.IDLE

    select = {
        TxState.IDLE: None,
        TxState.WARM_UP: FlitKind.TRAINING,
        TxState.START_HEADER: FlitKind.START,
        TxState.DATA_COMM: FlitKind.DATA,
        TxState.STOP_HEADER: FlitKind.STOP,
    }[nxt]
    encoder_enable = nxt in (TxState.START_HEADER, TxState.DATA_COMM, TxState.STOP_HEADER)
    return TxAction(nxt, select, encoder_enable, select is FlitKind.DATA)


class TxFramer:
    """Drives the serializer from the controller FSM and a word source.

    ``step_cycle`` advances one fast-clock cycle and returns the emitted
    BitPair, or None while the line is idle.  ``word_source`` is called
    at each data-flit boundary and must return the next 32-bit word.
    ``valid_fn`` reflects the FIFO handshake (data available).
    """

    def __init__(self, word_source, valid_fn,
                 start_byte=codec.START_BYTE, stop_byte=codec.STOP_BYTE):
        self._word_source = word_source
        self._valid_fn = valid_fn
        self._start_byte = start_byte
        self._stop_byte = stop_byte
        self.state = TxState.IDLE
        self.warm_en = False
        self.comm_en = False
        self.rd = Disparity.NEGATIVE
        self._serializer = datapath.Serializer()
        self._remaining = 0  # bits left in the current flit

    def _load_next_flit(self):
        action = tx_fsm_step(self.state, self._valid_fn(), self.warm_en, self.comm_en)
        self.state = action.state
        if action.flit_select is None:
            return False
        if action.state is TxState.START_HEADER:
            self.rd = Disparity.NEGATIVE  # disparity chain restarts per frame
        word = self._word_source() if action.pop_word else None
        flit, self.rd = codec.encode_flit(
            action.flit_select, word, self.rd,
            start_byte=self._start_byte, stop_byte=self._stop_byte)
        self._serializer.load(flit.bits())
        self._remaining = datapath.FLIT_BITS
        return True

    def step_cycle(self):
        """Advance one fast-clock cycle; returns a BitPair or None (idle)."""
        if self._remaining == 0 and not self._load_next_flit():
            return None
        pair, _ = self._serializer.step()
        self._remaining -= 2
        return pair

    @property
    def counter(self):
        return self._serializer.counter


class DetState(enum.Enum):
    START = "start"
    CHECK1 = "check1"
    CHECK2 = "check2"
    CHECK3 = "check3"
    CHECK4 = "check4"
    DATA_COMM = "data_comm"
    STOP_CHECK1 = "stop_check1"
    STOP_CHECK2 = "stop_check2"
    STOP_CHECK3 = "stop_check3"
    STOP_CHECK4 = "stop_check4"


@dataclass(frozen=True)
class DetectorEvents:
    start_detected: bool = False
    stop_detected: bool = False
    shift: bool = False


class _BitMatcher:
    """KMP bit matcher; complete and sound for any 8-bit pattern."""

    def __init__(self, bits):
        self.pattern = bits
        n = len(bits)
        fail = [0] * n
        k = 0
        for i in range(1, n):
            while k and bits[i] != bits[k]:
                k = fail[k - 1]
            if bits[i] == bits[k]:
                k += 1
            fail[i] = k
        self._fail = fail
        self.progress = 0

    def reset(self):
        self.progress = 0

    def push(self, bit):
        """Returns True when the pattern just completed."""
        while self.progress and bit != self.pattern[self.progress]:
            self.progress = self._fail[self.progress - 1]
        if bit == self.pattern[self.progress]:
            self.progress += 1
        if self.progress == len(self.pattern):
            self.progress = self._fail[-1]
            return True
        return False


def _marker_bits(byte):
    return tuple((byte >> k) & 1 for k in range(8))


class SequenceDetector:
    """Watches raw bit pairs for the start marker, then the stop marker.

    A marker ending on the second bit of a pair was even-aligned; odd
    alignment completes one bit into the following pair (the extra
    check-4 step) and raises the shift flag.
    """

    def __init__(self, start_byte=codec.START_BYTE, stop_byte=codec.STOP_BYTE):
        self._start = _BitMatcher(_marker_bits(start_byte))
        self._stop = _BitMatcher(_marker_bits(stop_byte))
        self.in_data_comm = False
        self.shift = False
        self._bit_index = 0

    def reset(self):
        self._start.reset()
        self._stop.reset()
        self.in_data_comm = False
        self.shift = False
        self._bit_index = 0

    @property
    def state(self) -> DetState:
        if self.in_data_comm:
            names = (DetState.DATA_COMM, DetState.STOP_CHECK1, DetState.STOP_CHECK1,
                     DetState.STOP_CHECK2, DetState.STOP_CHECK2, DetState.STOP_CHECK3,
                     DetState.STOP_CHECK3, DetState.STOP_CHECK4)
            return names[self._stop.progress]
        names = (DetState.START, DetState.CHECK1, DetState.CHECK1,
                 DetState.CHECK2, DetState.CHECK2, DetState.CHECK3,
                 DetState.CHECK3, DetState.CHECK4)
        return names[self._start.progress]

    def _push_bit(self, bit):
        matcher = self._stop if self.in_data_comm else self._start
        matched = matcher.push(bit)
        start_parity = (self._bit_index - 7) & 1
        self._bit_index += 1
        return matched, bool(start_parity)

    def push_pair(self, pair) -> DetectorEvents:
        events = DetectorEvents()
        for bit in pair:
            matched, odd_aligned = self._push_bit(bit)
            if not matched:
                continue
            if self.in_data_comm:
                self.in_data_comm = False
                self._start.reset()
                events = DetectorEvents(stop_detected=True, shift=self.shift)
            else:
                self.in_data_comm = True
                self.shift = odd_aligned
                self._stop.reset()
                events = DetectorEvents(start_detected=True, shift=self.shift)
        return events


class RxStage(enum.Enum):
    IDLE = "idle"
    CDR_ONLY = "cdr_only"
    ARMED = "armed"
    RECEIVING = "receiving"


@dataclass(frozen=True)
class RxEnables:
    stage: RxStage
    cdr_en: bool
    detector_en: bool
    deserializer_en: bool
    decoder_en: bool


class RxController:
    """Derives stage enables from the enable registers and detector events."""

    def __init__(self):
        self.receiving = False

    def step(self, start_detected, stop_detected, warm_en, comm_en) -> RxEnables:
        if not comm_en:
            self.receiving = False
        elif stop_detected:
            self.receiving = False
        elif start_detected:
            self.receiving = True
        if self.receiving:
            stage = RxStage.RECEIVING
        elif comm_en:
            stage = RxStage.ARMED
        elif warm_en:
            stage = RxStage.CDR_ONLY
        else:
            stage = RxStage.IDLE
        active = stage is not RxStage.IDLE
        return RxEnables(
            stage=stage,
            cdr_en=active,
            detector_en=stage in (RxStage.ARMED, RxStage.RECEIVING),
            deserializer_en=stage is RxStage.RECEIVING,
            decoder_en=stage is RxStage.RECEIVING,
        )


# Pairs between the end of the start marker and the first payload pair:
# one pad pair plus fifteen filler pairs, identical at both alignments.
START_SKIP_PAIRS = 16


class RxPipeline:
    """Realigner, deserializer and flit decoder behind the detector events.

    ``push_pair`` consumes one raw comparator pair and returns a list of
    decoded 32-bit words (usually empty).  Framing events are exposed on
    ``detector`` / ``last_events``; decode failures raise with lane index.
    """

    def __init__(self, start_byte=codec.START_BYTE, stop_byte=codec.STOP_BYTE):
        self.detector = SequenceDetector(start_byte, stop_byte)
        self.controller = RxController()
        self._start_byte = start_byte
        self._stop_byte = stop_byte
        self._realigner = datapath.ShiftRealigner()
        self._deserializer = datapath.Deserializer()
        self.rd = Disparity.NEGATIVE
        self.warm_en = False
        self.comm_en = False
        self._skip = 0
        self.last_events = DetectorEvents()
        self.frames_received = 0

    @property
    def receiving(self):
        return self.controller.receiving

    def push_pair(self, pair):
        enables = self.controller.step(False, False, self.warm_en, self.comm_en)
        if not enables.detector_en:
            return []
        events = self.detector.push_pair(pair)
        self.last_events = events
        enables = self.controller.step(
            events.start_detected, events.stop_detected, self.warm_en, self.comm_en)

        if events.start_detected:
            self._realigner.shift = events.shift
            self._deserializer.reset()
            self.rd = Disparity.NEGATIVE
            self._skip = START_SKIP_PAIRS
            return []
        if events.stop_detected:
            self._deserializer.reset()
            self.frames_received += 1
            return []
        if not enables.deserializer_en:
            self._realigner.push(pair)
            return []
        if self._skip:
            self._realigner.push(pair)
            self._skip -= 1
            return []
        word40 = self._deserializer.push(self._realigner.push(pair))
        if word40 is None:
            return []
        flit = codec.Flit.from_int(word40)
        (kind, word), self.rd = codec.decode_flit(
            flit, self.rd, start_byte=self._start_byte, stop_byte=self._stop_byte)
        if kind is not FlitKind.DATA:
            return []
        return [word]
