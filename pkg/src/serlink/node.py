"""Two-chip link simulation: registers, DMA, GPIO handshake, scheduler.

Each node models one chip: Table-style configuration registers, a flat
on-chip memory, decoupled read/write DMA channels moving one 32-bit word
per 50 MHz cycle through clock-domain-crossing FIFOs, and two GPIO pins
used by the synchronization protocols.  A shared deterministic event
scheduler (integer picosecond timestamps, FIFO order among equal times)
drives both nodes plus the serial link data plane.

Protocols are scripted step lists, not an ISA simulation: every program
line costs a fixed number of 50 MHz cycles and the summed line time is
reported as the programming latency.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from . import cdr, control, datapath, energy, phy
from .errors import (AlignmentError, CodecError, DataMismatch, LossOfLock,
                     ProtocolDeadlock, SimulationError, UnknownRegister)

PS_PER_S = 1e12


def s_to_ps(t_s):
    return int(round(t_s * PS_PER_S))


class Scheduler:
    """Deterministic event queue: non-decreasing time, FIFO among ties."""

    def __init__(self):
        self._heap = []
        self._seq = 0
        self.now_ps = 0

    @property
    def now_s(self):
        return self.now_ps / PS_PER_S

    def schedule(self, t_ps, fn):
        if t_ps < self.now_ps:
            raise SimulationError(f"event at {t_ps} ps is in the past (now {self.now_ps})")
        heapq.heappush(self._heap, (t_ps, self._seq, fn))
        self._seq += 1

    def schedule_s(self, t_s, fn):
        self.schedule(s_to_ps(t_s), fn)

    def advance(self):
        """Dispatch the next event; returns its time or None at end."""
        if not self._heap:
            return None
        t, _, fn = heapq.heappop(self._heap)
        self.now_ps = t
        fn()
        return t

    def run(self, until_ps=None, stop=None):
        while self._heap:
            if stop is not None and stop():
                break
            if until_ps is not None and self._heap[0][0] > until_ps:
                break
            self.advance()


class Fifo:
    """Bounded word queue with a crossing latency before entries turn ready."""

    def __init__(self, depth=4, latency_ps=0):
        self.depth = depth
        self.latency_ps = latency_ps
        self._entries = []

    def __len__(self):
        return len(self._entries)

    def can_push(self):
        return len(self._entries) < self.depth

    def push(self, now_ps, value, extra_latency_ps=0):
        if not self.can_push():
            raise SimulationError("FIFO overflow")
        self._entries.append((now_ps + self.latency_ps + extra_latency_ps, value))

    def ready(self, now_ps):
        return bool(self._entries) and self._entries[0][0] <= now_ps

    def pop(self, now_ps):
        if not self.ready(now_ps):
            raise SimulationError("FIFO pop with no ready entry")
        return self._entries.pop(0)[1]


class GpioWire:
    """One board wire; exactly one owning driver unless explicitly forced."""

    def __init__(self, name, owner, log):
        self.name = name
        self.owner = owner
        self.level = 0
        self._log = log

    def set(self, level, node, force=False):
        if node is not self.owner and not force:
            raise SimulationError(f"{node.name} does not drive {self.name}")
        level = int(bool(level))
        if level != self.level:
            self.level = level
            self._log(node.name, self.name, level, forced=node is not self.owner)


REGISTER_NAMES = ("tx_data_addr", "rx_data_addr", "tx_data_size",
                  "rx_data_size", "warm_en", "comm_en", "cdr_n")


@dataclass
class ConfigRegisters:
    tx_data_addr: int = 0
    rx_data_addr: int = 0
    tx_data_size: int = 0
    rx_data_size: int = 0
    warm_en: int = 0
    comm_en: int = 0
    cdr_n: int = 4


@dataclass
class DmaChannel:
    direction: str              # "read": memory -> FIFO, "write": FIFO -> memory
    fifo: Fifo
    cursor: int = 0
    remaining: int = 0
    enabled: bool = False

    @property
    def done(self):
        return self.remaining == 0


def dma_step(channel: DmaChannel, memory, now_ps=0):
    """Move one 32-bit word if the channel can progress; returns True if moved."""
    if not channel.enabled or channel.remaining <= 0:
        return False
    if channel.direction == "read":
        if not channel.fifo.can_push():
            return False
        word = int.from_bytes(memory[channel.cursor:channel.cursor + 4], "little")
        channel.fifo.push(now_ps, word)
    else:
        if not channel.fifo.ready(now_ps):
            return False
        word = channel.fifo.pop(now_ps)
        memory[channel.cursor:channel.cursor + 4] = int(word).to_bytes(4, "little")
    channel.cursor += 4
    channel.remaining -= 4
    return True


class Node:
    """One chip: memory, registers, DMA channels and its program driver."""

    def __init__(self, name, sim: Scheduler, log, config, mem_bytes=1 << 17):
        self.name = name
        self.sim = sim
        self.log = log
        self.config = config
        self.memory = bytearray(mem_bytes)
        self.regs = ConfigRegisters()
        self.program_cycles = 0
        self.on_register_write = None  # hook(name, value) after validation
        self.dma_read = None
        self.dma_write = None
        self._dma_tick_scheduled = False

    @property
    def mcu_period_ps(self):
        return self.config.mcu_period_ps

    def write_register(self, name, value):
        if name not in REGISTER_NAMES:
            raise UnknownRegister(name)
        if name.endswith("_size"):
            if value % 4 or value < 0:
                raise AlignmentError(f"{name} must be a non-negative multiple of 4")
        elif name.endswith("_addr"):
            if value % 4 or not 0 <= value < len(self.memory):
                raise AlignmentError(f"{name} must be word aligned and in memory")
        elif name == "cdr_n":
            if value not in cdr.VALID_DIVIDERS:
                raise AlignmentError(f"cdr_n must be one of {cdr.VALID_DIVIDERS}")
        setattr(self.regs, name, int(value))
        self.log(self.name, name, int(value))
        if self.on_register_write is not None:
            self.on_register_write(name, int(value))

    def read_register(self, name):
        if name not in REGISTER_NAMES:
            raise UnknownRegister(name)
        return getattr(self.regs, name)

    # -- DMA ------------------------------------------------------------

    def start_dma(self, channel):
        channel.enabled = True
        if not self._dma_tick_scheduled:
            self._dma_tick_scheduled = True
            self.sim.schedule(self.sim.now_ps + self.mcu_period_ps, self._dma_tick)

    def _dma_tick(self):
        progressed = False
        for channel in (self.dma_read, self.dma_write):
            if channel is not None and channel.enabled:
                if dma_step(channel, self.memory, self.sim.now_ps):
                    progressed = True
                if channel.done and channel.enabled:
                    channel.enabled = False
                    self.log(self.name, f"dma_{channel.direction}_done", 1)
        if any(c is not None and c.enabled for c in (self.dma_read, self.dma_write)):
            self.sim.schedule(self.sim.now_ps + self.mcu_period_ps, self._dma_tick)
        else:
            self._dma_tick_scheduled = False
        return progressed

    # -- scripted program driver ------------------------------------------

    def run_program(self, steps, on_done=None):
        """Execute a step list: ("line", label, fn), ("irq", label),
        ("wait", label, predicate), ("wait_cycles", label, n)."""

        def advance(i):
            if i >= len(steps):
                if on_done is not None:
                    on_done()
                return
            step = steps[i]
            kind, label = step[0], step[1]
            if kind == "line":
                cost = self.config.line_cost_cycles
                self.program_cycles += cost

                def fire(fn=step[2], nxt=i + 1):
                    fn()
                    advance(nxt)
                self.sim.schedule(self.sim.now_ps + cost * self.mcu_period_ps, fire)
            elif kind == "irq":
                cost = self.config.irq_entry_cycles
                self.program_cycles += cost
                self.sim.schedule(self.sim.now_ps + cost * self.mcu_period_ps,
                                  lambda nxt=i + 1: advance(nxt))
            elif kind == "wait":
                predicate = step[2]

                def poll(nxt=i + 1):
                    if predicate():
                        advance(nxt)
                    else:
                        self.sim.schedule(self.sim.now_ps + self.mcu_period_ps, poll)
                poll()
            elif kind == "wait_cycles":
                n = step[2]
                self.sim.schedule(self.sim.now_ps + n * self.mcu_period_ps,
                                  lambda nxt=i + 1: advance(nxt))
            else:
                raise SimulationError(f"unknown program step {kind!r}")

        advance(0)


@dataclass
class LinkSimConfig:
    """Full parameterization of a two-node transfer simulation."""

    channel: phy.ChannelConfig = field(default_factory=phy.ChannelConfig)
    scenario: str = "tx_initiated"       # or "rx_initiated"
    payload_bytes: int = 16 * 1024
    freq_offset: float = 0.0             # TX serdes clock vs RX, fractional
    cdr_n: int = 4
    initial_phase_ui: float = 0.25
    include_boundary_pd: bool = True
    seed: int = 1
    ui_s: float = phy.UI_S
    mcu_period_ps: int = 20000           # 50 MHz
    fifo_depth: int = 4
    cdc_slow_cycles: int = 2             # crossing latency, slow-clock cycles
    decoder_latency_slow: int = 1
    line_cost_cycles: int = 3
    irq_entry_cycles: int = 2
    cdr_warmup_cycles: int = 32          # 0.64 us at 50 MHz
    rx_release_pin: str = "peer"        # which pin the RX negates to release the TX
    watchdog_factor: float = 10.0

    @property
    def slow_cycle_s(self):
        return 8 * self.ui_s  # Clk/4 period in UI terms

    @property
    def tx_ui_s(self):
        return self.ui_s / (1.0 + self.freq_offset)


class EventLog:
    """Chronological (time, node, signal, value) rows shared by everything."""

    def __init__(self, sim):
        self.sim = sim
        self.rows = []

    def __call__(self, node, signal_name, value, forced=False):
        self.rows.append((self.sim.now_s, node, signal_name, value))
        if forced:
            self.rows.append((self.sim.now_s, node, f"{signal_name}_forced", 1))

    def energy_events(self):
        keep = {"tx_analog", "rx_analog", "tx_digital", "rx_digital"}
        return [(t, sig, val) for (t, node, sig, val) in self.rows if sig in keep]


class LinkEngine:
    """The serial data plane between the two nodes.

    The TX side renders eight bits per slow-clock quantum into the
    streamed channel waveform; the RX side, once warmed up, runs one CDR
    batch per quantum (lagging two quanta so the waveform frontier always
    covers its sampling instants) and feeds the recovered pairs through
    the receive pipeline into the RX FIFO.
    """

    def __init__(self, sim, cfg: LinkSimConfig, tx: Node, rx: Node, log: EventLog):
        self.sim = sim
        self.cfg = cfg
        self.tx = tx
        self.rx = rx
        self.log = log
        self.active = True
        self.aborted = None

        self.tx_fifo = Fifo(cfg.fifo_depth,
                            latency_ps=s_to_ps(cfg.cdc_slow_cycles * cfg.slow_cycle_s))
        self.rx_fifo = Fifo(cfg.fifo_depth,
                            latency_ps=s_to_ps(cfg.cdc_slow_cycles * cfg.slow_cycle_s))
        tx.dma_read = DmaChannel("read", self.tx_fifo)
        rx.dma_write = DmaChannel("write", self.rx_fifo)

        self.framer = control.TxFramer(self._pop_word, self._tx_valid)
        self.stream = phy.StreamingNrz(cfg.channel, tx_ui_s=cfg.tx_ui_s,
                                       seed=cfg.seed)
        self.pipeline = control.RxPipeline()
        self.loop = None
        self.declared_lock_ps = None
        self.slips = 0
        self.decode_errors = 0
        self.first_data_bit_s = None
        self.words_delivered = 0
        self._tx_quanta = 0
        self._rx_batches = 0
        self._rx_anchor_s = 0.0
        self._last_m = None
        self._prev_tx_state = control.TxState.IDLE

        tx.on_register_write = self._tx_register_write
        rx.on_register_write = self._rx_register_write
        sim.schedule(0, self._tx_quantum)

    # -- handshake plumbing ----------------------------------------------

    def _tx_valid(self):
        return self.tx_fifo.ready(self.sim.now_ps)

    def _pop_word(self):
        return self.tx_fifo.pop(self.sim.now_ps)

    def _cdc_delay_ps(self):
        return s_to_ps(self.cfg.cdc_slow_cycles * self.cfg.slow_cycle_s)

    def _tx_register_write(self, name, value):
        if name not in ("warm_en", "comm_en"):
            return

        def apply():
            setattr(self.framer, name, bool(value))
            if name == "warm_en":
                self.log("tx", "tx_analog", int(bool(value)))
                self.log("tx", "tx_digital", "active" if value else "standby")
        self.sim.schedule(self.sim.now_ps + self._cdc_delay_ps(), apply)

    def _rx_register_write(self, name, value):
        if name not in ("warm_en", "comm_en"):
            return

        def apply():
            setattr(self.pipeline, name, bool(value))
            if name == "warm_en":
                self.log("rx", "rx_analog", int(bool(value)))
                self.log("rx", "rx_digital", "warm" if value else "standby")
                if value:
                    self._activate_rx()
            if name == "comm_en" and value:
                self.declared_lock_ps = self.sim.now_ps
        self.sim.schedule(self.sim.now_ps + self._cdc_delay_ps(), apply)

    # -- TX data plane ------------------------------------------------------

    def _tx_quantum(self):
        if not self.active:
            return
        levels = []
        half_swing = self.cfg.channel.swing / 2.0
        for _ in range(4):
            pair = self.framer.step_cycle()
            if pair is None:
                levels.extend((0.0, 0.0))
            else:
                levels.extend((half_swing if pair.even else -half_swing,
                               half_swing if pair.odd else -half_swing))
        self.stream.push_levels(levels)
        state = self.framer.state
        if state is not self._prev_tx_state:
            self.log("tx", "tx_state", state.value)
            if state is control.TxState.DATA_COMM and self.first_data_bit_s is None:
                self.first_data_bit_s = self._tx_quanta * 8 * self.cfg.tx_ui_s
            if (self._prev_tx_state is control.TxState.STOP_HEADER
                    and state is control.TxState.IDLE):
                self.log("tx", "tx_frame_done", 1)
            self._prev_tx_state = state
        self._tx_quanta += 1
        self.sim.schedule(s_to_ps(self._tx_quanta * 8 * self.cfg.tx_ui_s),
                          self._tx_quantum)

    # -- RX data plane ------------------------------------------------------

    def _activate_rx(self):
        if self.loop is not None:
            return
        self._rx_anchor_s = self.sim.now_s
        self.loop = cdr.CdrLoop(
            self.stream, ui_s=self.cfg.ui_s, n=self.rx.regs.cdr_n,
            initial_phase_ui=self.cfg.initial_phase_ui,
            include_boundary=self.cfg.include_boundary_pd,
            seed=self.cfg.seed, t_start_s=self._rx_anchor_s)
        self._rx_batches = 0
        self._schedule_rx_quantum(self._rx_anchor_s + 8 * self.cfg.ui_s)

    def _schedule_rx_quantum(self, batch_end_s):
        # run two quanta behind the recovered sampling instants so the
        # transmit side has always rendered the waveform being sampled
        t = batch_end_s + 2 * self.cfg.slow_cycle_s
        self.sim.schedule(max(s_to_ps(t), self.sim.now_ps), self._rx_quantum)

    def _rx_quantum(self):
        if not self.active or self.loop is None:
            return
        rec = self.loop.process_batch()
        self._rx_batches += 1
        if self._last_m is not None:
            seq = np.diff(np.concatenate(([self._last_m], rec.bit_indices)))
            if np.any(seq != 1):
                self.slips += int(np.count_nonzero(seq != 1))
                if self.declared_lock_ps is not None and self.aborted is None:
                    self.log("rx", "loss_of_lock", 1)
                    self.abort("LossOfLock: phase error exceeded 0.5 UI during transfer")
        self._last_m = rec.bit_indices[-1]

        bits = rec.data_bits
        was_receiving = self.pipeline.receiving
        for i in range(4):
            pair = datapath.BitPair(int(bits[2 * i]), int(bits[2 * i + 1]))
            try:
                words = self.pipeline.push_pair(pair)
            except CodecError as exc:
                self.decode_errors += 1
                self.log("rx", "decode_error", str(exc))
                self.abort(f"decode failure during transfer: {exc}")
                return
            events = self.pipeline.last_events
            if events.start_detected:
                self.log("rx", "start_detected", 1)
                self.log("rx", "shift", int(events.shift))
                self.log("rx", "rx_digital", "data")
            if events.stop_detected:
                self.log("rx", "stop_detected", 1)
                self.log("rx", "rx_digital",
                         "warm" if self.pipeline.warm_en else "standby")
            for word in words:
                self.rx_fifo.push(
                    self.sim.now_ps, word,
                    extra_latency_ps=s_to_ps(
                        self.cfg.decoder_latency_slow * self.cfg.slow_cycle_s))
                self.words_delivered += 1
        if was_receiving != self.pipeline.receiving:
            self.log("rx", "rx_receiving", int(self.pipeline.receiving))
        self._schedule_rx_quantum(rec.t_end_s + 8 * self.cfg.ui_s)

    def abort(self, reason):
        if self.aborted is None:
            self.aborted = reason
        self.active = False


@dataclass
class TransferReport:
    scenario: str
    ok: bool
    delivered_bytes: int
    expected_bytes: int
    mismatches: int
    loss_of_lock: bool
    decode_errors: int
    diagnostic: str
    shift_used: bool
    programming_latency_s: float
    timestamps: dict
    gpio_edges: list
    events: list
    energy_j: float
    seed: int

    def to_text(self):
        lines = [
            f"scenario: {self.scenario}",
            f"ok: {self.ok}",
            f"delivered_bytes: {self.delivered_bytes}",
            f"expected_bytes: {self.expected_bytes}",
            f"mismatches: {self.mismatches}",
            f"loss_of_lock: {self.loss_of_lock}",
            f"decode_errors: {self.decode_errors}",
            f"diagnostic: {self.diagnostic}",
            f"shift_used: {self.shift_used}",
            f"programming_latency_us: {self.programming_latency_s * 1e6:.6f}",
            f"energy_uj: {self.energy_j * 1e6:.6f}",
            f"seed: {self.seed}",
        ]
        for key in sorted(self.timestamps):
            lines.append(f"t_{key}_us: {self.timestamps[key] * 1e6:.6f}")
        return "\n".join(lines) + "\n"

    def events_csv(self):
        out = ["time_ns,node,signal,value"]
        for t, node, sig, val in self.events:
            clean = str(val).replace(",", ";").replace("\n", " ")
            out.append(f"{t * 1e9:.3f},{node},{sig},{clean}")
        return "\n".join(out) + "\n"


def _tx_initiated_programs(cfg, tx, rx, wires, payload):
    gpio0, gpio1 = wires

    def prepare_payload():
        addr = 0
        tx.memory[addr:addr + len(payload)] = payload

    def setup_tx_dma():
        tx.write_register("tx_data_addr", 0)
        tx.write_register("tx_data_size", len(payload))
        tx.dma_read.cursor = 0
        tx.dma_read.remaining = len(payload)
        tx.start_dma(tx.dma_read)

    def setup_rx_dma():
        rx.write_register("rx_data_addr", 0)
        rx.write_register("rx_data_size", len(payload))
        rx.write_register("cdr_n", cfg.cdr_n)
        rx.dma_write.cursor = 0
        rx.dma_write.remaining = len(payload)
        rx.start_dma(rx.dma_write)

    tx_steps = [
        ("line", "setup_gpio0_dir", lambda: None),
        ("line", "prepare_payload", prepare_payload),
        ("line", "setup_udma", setup_tx_dma),
        ("line", "warm_en", lambda: tx.write_register("warm_en", 1)),
        ("line", "gpio0_assert", lambda: gpio0.set(1, tx)),
        ("wait", "gpio1_high", lambda: gpio1.level == 1),
        ("line", "comm_en", lambda: tx.write_register("comm_en", 1)),
    ]
    rx_steps = [
        ("line", "setup_gpio1_dir", lambda: None),
        ("wait", "irq_gpio0", lambda: gpio0.level == 1),
        ("irq", "gpio0_irq"),
        ("line", "prepare_buffer", lambda: None),
        ("line", "setup_udma", setup_rx_dma),
        ("line", "warm_en", lambda: rx.write_register("warm_en", 1)),
        ("wait_cycles", "clock_ready", cfg.cdr_warmup_cycles),
        ("line", "comm_en", lambda: rx.write_register("comm_en", 1)),
        ("line", "gpio1_assert", lambda: gpio1.set(1, rx)),
    ]
    return tx_steps, rx_steps


def _rx_initiated_programs(cfg, tx, rx, wires, payload):
    gpio0, gpio1 = wires

    def setup_tx_dma():
        tx.write_register("tx_data_addr", 0)
        tx.write_register("tx_data_size", len(payload))
        tx.dma_read.cursor = 0
        tx.dma_read.remaining = len(payload)
        tx.start_dma(tx.dma_read)

    def setup_rx_dma():
        rx.write_register("rx_data_addr", 0)
        rx.write_register("rx_data_size", len(payload))
        rx.write_register("cdr_n", cfg.cdr_n)
        rx.dma_write.cursor = 0
        rx.dma_write.remaining = len(payload)
        rx.start_dma(rx.dma_write)

    def negate():
        # `peer`: force the transmitter-owned pin low across the wire
        # (flagged as a forced drive); `own`: negate the RX's own pin.
        # Either breaks the transmitter's both-pins-high wait.
        if cfg.rx_release_pin == "peer":
            gpio0.set(0, rx, force=True)
        else:
            gpio1.set(0, rx)

    rx_steps = [
        ("line", "setup_gpio1_dir", lambda: None),
        ("line", "prepare_buffer", lambda: None),
        ("line", "setup_udma", setup_rx_dma),
        ("line", "warm_en", lambda: rx.write_register("warm_en", 1)),
        ("line", "gpio1_assert", lambda: gpio1.set(1, rx)),
        ("wait", "gpio0_high", lambda: gpio0.level == 1),
        ("wait_cycles", "clock_ready", cfg.cdr_warmup_cycles),
        ("line", "comm_en", lambda: rx.write_register("comm_en", 1)),
        ("line", "gpio_negate", negate),
    ]
    tx_steps = [
        ("line", "setup_gpio0_dir", lambda: None),
        ("wait", "irq_gpio1", lambda: gpio1.level == 1),
        ("irq", "gpio1_irq"),
        ("line", "setup_udma", setup_tx_dma),
        ("line", "warm_en", lambda: tx.write_register("warm_en", 1)),
        ("line", "gpio0_assert", lambda: gpio0.set(1, tx)),
        ("wait", "handshake_release",
         lambda: not (gpio0.level == 1 and gpio1.level == 1)),
        ("line", "comm_en", lambda: tx.write_register("comm_en", 1)),
    ]
    return tx_steps, rx_steps


def run_protocol(cfg: LinkSimConfig, strict=False) -> TransferReport:
    """Run one complete transfer between two simulated chips.

    Returns a TransferReport; with ``strict`` set, failures raise
    ProtocolDeadlock or DataMismatch instead of reporting them.
    """
    sim = Scheduler()
    log = EventLog(sim)
    tx = Node("tx", sim, log, cfg)
    rx = Node("rx", sim, log, cfg)
    rng = np.random.default_rng([cfg.seed, 0xDA])
    payload = bytes(rng.integers(0, 256, cfg.payload_bytes, dtype=np.uint8))

    gpio0 = GpioWire("gpio0", tx, log)
    gpio1 = GpioWire("gpio1", rx, log)
    engine = LinkEngine(sim, cfg, tx, rx, log)

    if cfg.scenario == "tx_initiated":
        tx_steps, rx_steps = _tx_initiated_programs(cfg, tx, rx, (gpio0, gpio1),
                                                    payload)
    elif cfg.scenario == "rx_initiated":
        # payload already resides in the TX-side memory for this scenario
        tx.memory[0:len(payload)] = payload
        tx_steps, rx_steps = _rx_initiated_programs(cfg, tx, rx, (gpio0, gpio1),
                                                    payload)
    else:
        raise ValueError(f"unknown scenario {cfg.scenario!r}")

    state = {"tx_done": False, "rx_done": False}
    timestamps = {}

    def tx_done():
        state["tx_done"] = True

    def rx_done():
        state["rx_done"] = True

    tx.run_program(tx_steps, on_done=tx_done)
    rx.run_program(rx_steps, on_done=rx_done)

    def programmed():
        return rx.dma_write is not None and rx.regs.rx_data_size > 0

    def transfer_complete():
        return (state["tx_done"] and state["rx_done"] and programmed()
                and rx.dma_write.done
                and engine.framer.state is control.TxState.IDLE
                and engine.framer.warm_en is False)

    teardown = {"started": False, "setup_cycles": None}

    def maybe_teardown():
        if teardown["started"] or engine.aborted:
            return
        if (state["rx_done"] and programmed() and rx.dma_write.done
                and engine.pipeline.frames_received >= 1):
            teardown["started"] = True
            teardown["setup_cycles"] = tx.program_cycles + rx.program_cycles
            timestamps["data_done"] = sim.now_s
            tx.run_program([
                ("line", "comm_en_off", lambda: tx.write_register("comm_en", 0)),
                ("line", "warm_en_off", lambda: tx.write_register("warm_en", 0)),
            ])
            rx.run_program([
                ("line", "comm_en_off", lambda: rx.write_register("comm_en", 0)),
                ("line", "warm_en_off", lambda: rx.write_register("warm_en", 0)),
            ])

    def watchdog_poll():
        maybe_teardown()
        if engine.aborted or transfer_complete():
            return
        sim.schedule(sim.now_ps + 10 * cfg.mcu_period_ps, watchdog_poll)

    sim.schedule(0, watchdog_poll)

    expected_s = (cfg.payload_bytes * 8 / phy.LINE_RATE + cdr.WARMUP_S + 5e-6)
    deadline_ps = s_to_ps(cfg.watchdog_factor * expected_s)
    sim.run(until_ps=deadline_ps,
            stop=lambda: engine.aborted is not None or transfer_complete())
    engine.active = False

    delivered = rx.dma_write.cursor if rx.dma_write else 0
    received = bytes(rx.memory[0:cfg.payload_bytes])
    mismatches = sum(a != b for a, b in zip(payload, received))
    completed = transfer_complete()

    diagnostic = ""
    if engine.aborted:
        diagnostic = engine.aborted
    elif not completed:
        diagnostic = "ProtocolDeadlock: watchdog expired before completion"
    elif mismatches:
        diagnostic = f"DataMismatch: {mismatches} bytes differ"

    for t, node_name, sig, val in log.rows:
        key = {"start_detected": "start_detected", "tx_frame_done": "tx_frame_done"}.get(sig)
        if key and key not in timestamps:
            timestamps[key] = t
        if sig == "warm_en" and val == 1 and f"{node_name}_warm_en" not in timestamps:
            timestamps[f"{node_name}_warm_en"] = t
        if sig == "comm_en" and val == 1 and f"{node_name}_comm_en" not in timestamps:
            timestamps[f"{node_name}_comm_en"] = t
    if engine.first_data_bit_s is not None:
        timestamps["first_data_bit"] = engine.first_data_bit_s
    timestamps["end"] = sim.now_s

    gpio_edges = [(t, sig, val) for (t, node_name, sig, val) in log.rows
                  if sig in ("gpio0", "gpio1")]
    energy_j = energy.energy_trace(log.energy_events(), energy.DEFAULT_PROFILE,
                                   sim.now_s)

    setup_cycles = teardown["setup_cycles"]
    if setup_cycles is None:
        setup_cycles = tx.program_cycles + rx.program_cycles
    ok = completed and mismatches == 0 and not engine.aborted
    report = TransferReport(
        scenario=cfg.scenario,
        ok=ok,
        delivered_bytes=delivered,
        expected_bytes=cfg.payload_bytes,
        mismatches=mismatches,
        loss_of_lock=engine.aborted is not None and "LossOfLock" in engine.aborted,
        decode_errors=engine.decode_errors,
        diagnostic=diagnostic,
        shift_used=engine.pipeline.detector.shift,
        programming_latency_s=setup_cycles * cfg.mcu_period_ps / PS_PER_S,
        timestamps=timestamps,
        gpio_edges=gpio_edges,
        events=list(log.rows),
        energy_j=energy_j,
        seed=cfg.seed,
    )
    if strict and not report.ok:
        if report.loss_of_lock:
            raise LossOfLock(diagnostic)
        if report.mismatches and completed:
            raise DataMismatch(diagnostic)
        raise ProtocolDeadlock(diagnostic)
    return report
