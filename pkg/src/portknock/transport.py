"""Knock delivery: one UDP datagram per knock, no reply.

Two interchangeable networks expose ``send(...)`` and ``listen(...)``:
:class:`UdpNetwork` uses real sockets, :class:`SimNetwork` is an in-memory,
tick-driven network with scripted drop/duplicate/delay controls and a
capture log, for deterministic tests and attack scenarios.

Listeners apply the length gate before anything else: datagrams whose
payload length differs from ``FilterSpec.expected_len`` are counted and go
to the optional ``on_filtered`` callback, never to the handler.
"""

from collections import deque
from dataclasses import dataclass
import logging
import queue
import socket
import threading
import time

log = logging.getLogger(__name__)

MAX_PAYLOAD = 1200
QUEUE_DEPTH = 1024


class TransportError(Exception):
    pass


class BindError(TransportError):
    pass


@dataclass(frozen=True)
class KnockPacket:
    payload: bytes
    dst_port: int
    src_addr: tuple
    received_at: float


@dataclass(frozen=True)
class FilterSpec:
    port: int
    expected_len: int
    proto: str = "udp"

    def __post_init__(self):
        _check_port(self.port)
        if self.proto != "udp":
            raise ValueError("only UDP is supported")
        if self.expected_len < 1:
            raise ValueError("expected_len must be positive")


@dataclass(frozen=True)
class SendReceipt:
    dst_addr: str
    dst_port: int
    length: int
    sent_at: float


@dataclass
class ListenerStats:
    delivered: int = 0
    filtered: int = 0
    overflow: int = 0


def _check_port(port):
    if not isinstance(port, int) or not 1 <= port <= 65535:
        raise ValueError(f"invalid UDP port: {port!r}")


def _check_send(payload, dst_port):
    _check_port(dst_port)
    if len(payload) > MAX_PAYLOAD:
        raise ValueError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD} (no fragmentation)")


def send_knock(payload, dst_addr, dst_port, net=None):
    """Emit exactly one datagram; nothing is awaited in return."""
    net = net if net is not None else UdpNetwork()
    return net.send(bytes(payload), dst_addr, dst_port)


def listen(filter, net, handler, on_filtered=None):
    return net.listen(filter, handler, on_filtered=on_filtered)


# -- real UDP -------------------------------------------------------------


class UdpNetwork:
    def __init__(self, bind_host="0.0.0.0"):
        self.bind_host = bind_host

    def send(self, payload, dst_addr, dst_port):
        _check_send(payload, dst_port)
        try:
            family, _, _, _, sockaddr = socket.getaddrinfo(
                dst_addr, dst_port, type=socket.SOCK_DGRAM
            )[0]
            with socket.socket(family, socket.SOCK_DGRAM) as sock:
                sock.sendto(payload, sockaddr)
        except OSError as exc:
            raise TransportError(f"send to {dst_addr}:{dst_port} failed: {exc}") from exc
        return SendReceipt(dst_addr, dst_port, len(payload), time.time())

    def listen(self, filter, handler, on_filtered=None):
        listener = UdpListener(filter, handler, on_filtered, self.bind_host)
        listener.start()
        return listener


class UdpListener:
    """Receiver thread (socket + length gate) feeding a dispatcher thread
    through a bounded queue, so packets reach callbacks in arrival order."""

    poll_interval = 0.1

    def __init__(self, filter, handler, on_filtered=None, host="0.0.0.0"):
        self.filter = filter
        self.handler = handler
        self.on_filtered = on_filtered
        self.host = host
        self.stats = ListenerStats()
        self._queue = queue.Queue(QUEUE_DEPTH)
        self._sock = None
        self._rx = None
        self._rx_stop = None
        self._dispatcher = None
        self._stopped = threading.Event()

    @property
    def port(self):
        return self.filter.port

    @property
    def running(self):
        return not self._stopped.is_set()

    def _bind(self, port):
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            sock.bind((self.host, port))
        except OSError as exc:
            sock.close()
            raise BindError(f"cannot bind UDP {self.host}:{port}: {exc}") from exc
        sock.settimeout(self.poll_interval)
        return sock

    def start(self):
        self._start_receiver(self._bind(self.filter.port), self.filter)
        self._dispatcher = threading.Thread(target=self._dispatch, name="knock-dispatch", daemon=True)
        self._dispatcher.start()
        log.info("listening for UDP knocks on port %d", self.filter.port)

    def _start_receiver(self, sock, spec):
        stop = threading.Event()
        rx = threading.Thread(
            target=self._receive, args=(sock, spec, stop), name=f"knock-rx-{spec.port}", daemon=True
        )
        self._sock, self._rx, self._rx_stop = sock, rx, stop
        rx.start()

    def _stop_receiver(self):
        if self._rx is None:
            return
        self._rx_stop.set()
        self._rx.join()
        self._sock.close()
        self._rx = None

    def _receive(self, sock, spec, stop):
        while not stop.is_set():
            try:
                data, addr = sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                if stop.is_set():
                    return
                log.exception("receive error on port %d", spec.port)
                continue
            pkt = KnockPacket(data, spec.port, addr, time.time())
            try:
                self._queue.put_nowait((pkt, len(data) == spec.expected_len))
            except queue.Full:
                self.stats.overflow += 1

    def _dispatch(self):
        while True:
            item = self._queue.get()
            if item is None:
                return
            pkt, passed = item
            try:
                if passed:
                    self.stats.delivered += 1
                    self.handler(pkt)
                else:
                    self.stats.filtered += 1
                    if self.on_filtered:
                        self.on_filtered(pkt)
            except Exception:
                log.exception("knock handler failed")

    def rebind(self, filter):
        """Move to a new port; the old socket is closed only once the new
        one is bound."""
        new_sock = self._bind(filter.port)
        self._stop_receiver()
        self.filter = filter
        self._start_receiver(new_sock, filter)
        log.info("listener moved to port %d", filter.port)

    def stop(self, drain=True):
        if self._stopped.is_set():
            return
        self._stop_receiver()
        if not drain:
            while True:
                try:
                    self._queue.get_nowait()
                except queue.Empty:
                    break
        self._queue.put(None)
        self._dispatcher.join()
        self._stopped.set()


# -- simulated network -----------------------------------------------------


@dataclass(frozen=True)
class Control:
    """Scripted treatment for the next ``count`` datagrams sent."""

    kind: str  # "pass" | "drop" | "duplicate" | "delay"
    count: int = 1
    ticks: int = 0

    def __post_init__(self):
        if self.kind not in ("pass", "drop", "duplicate", "delay"):
            raise ValueError(f"unknown control {self.kind!r}")
        if self.count < 1 or self.ticks < 0:
            raise ValueError("control count must be >= 1 and ticks >= 0")


def drop(n=1):
    return Control("drop", n)


def duplicate(n=1):
    return Control("duplicate", n)


def delay(n=1, ticks=1):
    return Control("delay", n, ticks)


def passthrough(n=1):
    return Control("pass", n)


@dataclass(frozen=True)
class Captured:
    tick: int
    src_addr: tuple
    dst_addr: str
    dst_port: int
    payload: bytes
    fate: str


class SimListener:
    def __init__(self, net, addr, filter, handler, on_filtered):
        self.net = net
        self.addr = addr
        self.filter = filter
        self.handler = handler
        self.on_filtered = on_filtered
        self.stats = ListenerStats()
        self.running = True

    @property
    def port(self):
        return self.filter.port

    def rebind(self, filter):
        new = (self.addr, filter.port)
        if new in self.net.listeners and self.net.listeners[new] is not self:
            raise BindError(f"sim port {filter.port} already bound on {self.addr}")
        self.net.listeners.pop((self.addr, self.filter.port), None)
        self.filter = filter
        self.net.listeners[new] = self

    def stop(self, drain=True):
        if self.running:
            self.net.listeners.pop((self.addr, self.filter.port), None)
            self.running = False

    def _deliver(self, pkt):
        if len(pkt.payload) == self.filter.expected_len:
            self.stats.delivered += 1
            self.handler(pkt)
        else:
            self.stats.filtered += 1
            if self.on_filtered:
                self.on_filtered(pkt)


class SimNetwork:
    """Single-threaded network driven by an integer tick counter.

    A datagram sent at tick ``t`` is delivered at ``step()`` into tick
    ``t + 1`` (plus any scripted delay).  Controls are consumed in script
    order, each covering the next ``count`` sends.
    """

    def __init__(self, controls=(), server_addr="10.0.0.1"):
        self.tick = 0
        self.server_addr = server_addr
        self.capture = []
        self.listeners = {}
        self.unbound = 0
        self._controls = deque((c.kind, c.count, c.ticks) for c in controls)
        self._in_flight = []
        self._scheduled = []
        self._seq = 0

    # controls
    def add_control(self, control):
        self._controls.append((control.kind, control.count, control.ticks))

    def _next_control(self):
        if not self._controls:
            return "pass", 0
        kind, count, ticks = self._controls[0]
        if count <= 1:
            self._controls.popleft()
        else:
            self._controls[0] = (kind, count - 1, ticks)
        return kind, ticks

    # sending and listening
    def send(self, payload, dst_addr, dst_port, src_addr=("10.0.0.2", 40000)):
        payload = bytes(payload)
        _check_send(payload, dst_port)
        kind, ticks = self._next_control()
        fate = {"pass": "sent", "drop": "dropped", "duplicate": "duplicated", "delay": "delayed"}[kind]
        self.capture.append(Captured(self.tick, tuple(src_addr), dst_addr, dst_port, payload, fate))
        if kind != "drop":
            copies = 2 if kind == "duplicate" else 1
            for _ in range(copies):
                self._enqueue(self.tick + 1 + ticks, (payload, dst_addr, dst_port, tuple(src_addr)))
        return SendReceipt(dst_addr, dst_port, len(payload), float(self.tick))

    def _enqueue(self, due, item):
        self._in_flight.append((due, self._seq, item))
        self._seq += 1

    def listen(self, filter, handler, on_filtered=None, addr=None):
        addr = addr or self.server_addr
        if (addr, filter.port) in self.listeners:
            raise BindError(f"sim port {filter.port} already bound on {addr}")
        lst = SimListener(self, addr, filter, handler, on_filtered)
        self.listeners[(addr, filter.port)] = lst
        return lst

    def schedule(self, tick, fn):
        """Run ``fn()`` at the start of ``tick``, before that tick's deliveries."""
        self._scheduled.append((tick, self._seq, fn))
        self._seq += 1

    # clock
    def step(self):
        self.tick += 1
        now = self.tick
        for item in sorted(s for s in self._scheduled if s[0] <= now):
            self._scheduled.remove(item)
            item[2]()
        due = sorted(f for f in self._in_flight if f[0] <= now)
        for entry in due:
            self._in_flight.remove(entry)
            payload, dst_addr, dst_port, src = entry[2]
            lst = self.listeners.get((dst_addr, dst_port))
            if lst is None:
                # closed port: silently lost, as with a real closed UDP port
                self.unbound += 1
                continue
            lst._deliver(KnockPacket(payload, dst_port, src, float(now)))

    @property
    def idle(self):
        return not self._in_flight and not self._scheduled

    def run(self, max_ticks=10000):
        for _ in range(max_ticks):
            if self.idle:
                return
            self.step()
        raise TransportError(f"simulation still busy after {max_ticks} ticks")

    def datagrams(self, src_host=None, dst_host=None):
        return [
            c
            for c in self.capture
            if (src_host is None or c.src_addr[0] == src_host)
            and (dst_host is None or c.dst_addr == dst_host)
        ]


def sim_scenario(ops, server_addr="10.0.0.1"):
    """Build a SimNetwork from ``ops``: Control objects or tuples such as
    ``("drop", 1)``, ``("duplicate", 1)``, ``("delay", 1, 5)``."""
    controls = [op if isinstance(op, Control) else Control(*op) for op in ops]
    return SimNetwork(controls, server_addr=server_addr)
