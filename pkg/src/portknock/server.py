"""The knock daemon.

Three cooperating tasks:

* the beacon poller derives each new beacon, builds the next knock table off
  the packet path and hands it over as a whole-value swap (which may move
  the listener to a new port);
* the listener delivers length-gated packets in arrival order to
  :meth:`KnockServer.handle_packet`, which only does table lookup and
  constant-time comparison for the beacon schemes;
* the executor runs authorized commands from a bounded queue.

Every packet the transport hands over yields exactly one :class:`AuthEvent`,
written as one JSON line to the log sink.  Any internal error on the packet
path is logged and reported as ``no_match``; nothing executes on error.
"""

from collections import Counter, deque
from dataclasses import dataclass, field
import json
import logging
import os
import queue
import subprocess
import sys
import threading
import time

from . import beacon as beacons
from .crucible import Outcome, match_payload
from .profile import Profile, ProfileError
from .schemes import for_profile
from .transport import BindError, FilterSpec, UdpNetwork

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BIND = 3
EXIT_BEACON = 4

EXEC_QUEUE_DEPTH = 16


class ServerStartupError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class AuthEvent:
    timestamp: float
    outcome: Outcome
    command_name: str = None
    src_addr: tuple = None
    beacon_height: int = None

    def to_json(self):
        return json.dumps(
            {
                "timestamp": self.timestamp,
                "outcome": self.outcome.value,
                "command_name": self.command_name,
                "src_addr": list(self.src_addr) if self.src_addr else None,
                "beacon_height": self.beacon_height,
            },
            sort_keys=True,
        )


@dataclass(frozen=True)
class ExecutionRecord:
    command_name: str
    exit_status: int = None
    duration: float = 0.0
    error: str = None


def execute_command(entry, mode="execute"):
    """Run the entry's shell string and wait for it.  ``dry_run`` spawns
    nothing."""
    if mode == "dry_run":
        return ExecutionRecord(entry.command_name)
    start = time.monotonic()
    try:
        proc = subprocess.run(entry.command, shell=True, stdin=subprocess.DEVNULL)
    except OSError as exc:
        return ExecutionRecord(entry.command_name, None, time.monotonic() - start, str(exc))
    return ExecutionRecord(entry.command_name, proc.returncode, time.monotonic() - start)


class Executor:
    """Single worker draining a bounded queue; a full queue drops the job."""

    def __init__(self, mode="execute", depth=EXEC_QUEUE_DEPTH):
        self.mode = mode
        self.records = []
        self.dropped = 0
        self._queue = queue.Queue(depth)
        self._thread = threading.Thread(target=self._work, name="knock-exec", daemon=True)
        self._thread.start()

    def submit(self, entry):
        try:
            self._queue.put_nowait(entry)
            return True
        except queue.Full:
            self.dropped += 1
            log.warning("executor queue full; dropping %s", entry.command_name)
            return False

    def _work(self):
        while True:
            entry = self._queue.get()
            try:
                if entry is None:
                    return
                rec = execute_command(entry, self.mode)
                if rec.error:
                    log.error("command %s failed to start: %s", rec.command_name, rec.error)
                else:
                    log.info("command %s exited %s", rec.command_name, rec.exit_status)
                self.records.append(rec)
            finally:
                self._queue.task_done()

    def join(self):
        """Block until every queued command has finished."""
        self._queue.join()

    def stop(self):
        self._queue.put(None)
        self._thread.join()


def _json_line_sink(stream):
    lock = threading.Lock()

    def write(event):
        with lock:
            stream.write(event.to_json() + "\n")
            stream.flush()

    return write


class KnockServer:
    def __init__(self, profile, net=None, mode="execute", sink=None, history=100000):
        self.profile = profile
        self.scheme = for_profile(profile)
        self.net = net if net is not None else UdpNetwork()
        self.mode = mode
        self.sink = sink
        self.events = deque(maxlen=history)
        self.counts = Counter()
        self.executor = Executor(mode)
        self.table = None
        self.listener = None
        self.port_history = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._poller = None

    # -- events ------------------------------------------------------------

    def _emit(self, outcome, pkt, name=None):
        height = self.table.beacon.source_height if self.table is not None else None
        ev = AuthEvent(time.time(), outcome, name, pkt.src_addr, height)
        self.events.append(ev)
        self.counts[outcome] += 1
        if self.sink:
            try:
                self.sink(ev)
            except Exception:
                log.exception("log sink failed")
        return ev

    # -- packet path -------------------------------------------------------

    def handle_packet(self, pkt):
        with self._lock:
            try:
                if self.scheme.uses_beacon:
                    if self.table is None:
                        res = None
                    else:
                        res = match_payload(self.table, pkt.payload)
                else:
                    res = self.scheme.verify_packet(pkt.payload)
            except Exception:
                log.exception("packet processing failed; failing closed")
                res = None
            if res is None:
                return self._emit(Outcome.NO_MATCH, pkt)
            name = res.entry.command_name if res.entry else None
            ev = self._emit(res.outcome, pkt, name)
        if res.outcome is Outcome.AUTHORIZED:
            self.executor.submit(res.entry)
        return ev

    def handle_filtered(self, pkt):
        with self._lock:
            return self._emit(Outcome.FILTERED, pkt)

    # -- beacon path -------------------------------------------------------

    def install_beacon(self, value):
        """Build the table for a new beacon and swap it in.  A repeat of the
        current beacon is ignored so replay flags are never reset early."""
        cur = self.table
        if cur is not None and cur.beacon.digest == value.digest:
            return False
        table = self.scheme.build_table(value)
        spec = FilterSpec(table.port, self.scheme.expected_len)
        with self._lock:
            if self.listener is None:
                self.listener = self.net.listen(spec, self.handle_packet, self.handle_filtered)
                self.port_history.append(spec.port)
            elif self.listener.port != spec.port:
                self.listener.rebind(spec)
                self.port_history.append(spec.port)
            self.table = table
        log.info("new beacon at height %s; listening on %d", value.source_height, table.port)
        return True

    def start_static(self):
        spec = FilterSpec(self.scheme.port, self.scheme.expected_len)
        self.listener = self.net.listen(spec, self.handle_packet, self.handle_filtered)
        self.port_history.append(spec.port)

    def bootstrap(self, source, timeout=60.0, retry=1.0):
        """Fetch the first beacon, retrying until ``timeout``; the daemon is
        not listening before this succeeds."""
        deadline = time.monotonic() + timeout
        while True:
            try:
                block = source.fetch_latest()
                break
            except Exception as exc:
                if time.monotonic() >= deadline or self._stop.is_set():
                    raise ServerStartupError(EXIT_BEACON, f"beacon bootstrap failed: {exc}") from exc
                log.warning("beacon bootstrap failed (%s); retrying", exc)
                self._stop.wait(retry)
        self.install_beacon(beacons.derive_beacon(block, self.scheme.beacon_key, self.scheme.beacon_hash))
        return block

    def start(self, source=None, schedule=None, bootstrap_timeout=60.0):
        try:
            if not self.scheme.uses_beacon:
                self.start_static()
                return self
            if source is None:
                raise ServerStartupError(EXIT_CONFIG, "beacon scheme needs a beacon source")
            first = self.bootstrap(source, bootstrap_timeout)
        except BindError as exc:
            raise ServerStartupError(EXIT_BIND, str(exc)) from exc
        schedule = schedule or beacons.PollSchedule()
        self._poller = threading.Thread(
            target=self._poll, args=(source, schedule, first), name="beacon-poll", daemon=True
        )
        self._poller.start()
        return self

    def _poll(self, source, schedule, first):
        def sink(value):
            try:
                self.install_beacon(value)
            except Exception:
                # keep the old table; better stale than open
                log.exception("could not install new beacon")

        beacons.poll_loop(
            source,
            self.scheme.beacon_key,
            self.scheme.beacon_hash,
            schedule,
            sink,
            stop=self._stop,
            initial=first,
        )

    def stop(self):
        self._stop.set()
        if self._poller is not None:
            self._poller.join()
        if self.listener is not None:
            self.listener.stop()
        self.executor.stop()

    def request_stop(self):
        """Ask the daemon to stop; safe from signal handlers and other threads."""
        self._stop.set()

    def wait(self, timeout=None):
        return self._stop.wait(timeout)


@dataclass
class ServerConfig:
    profile_path: str = None
    profile: Profile = None
    scheme: str = None
    beacon_url: str = None
    beacon_file: str = None
    beacon_source: object = None
    schedule: beacons.PollSchedule = field(default_factory=beacons.PollSchedule)
    mode: str = "execute"
    log_path: str = None
    sink: object = None
    net: object = None
    bind_host: str = "0.0.0.0"
    bootstrap_timeout: float = 60.0
    http_timeout: float = 10.0

    def __post_init__(self):
        if self.mode not in ("execute", "dry_run"):
            raise ServerStartupError(EXIT_CONFIG, f"unknown execution mode {self.mode!r}")

    def load_profile(self):
        try:
            profile = self.profile or Profile.load(self.profile_path)
        except ProfileError as exc:
            raise ServerStartupError(EXIT_CONFIG, str(exc)) from exc
        if profile is None:
            raise ServerStartupError(EXIT_CONFIG, "no profile given")
        if self.scheme and self.scheme != profile.scheme:
            raise ServerStartupError(
                EXIT_CONFIG, f"profile scheme {profile.scheme!r} does not match {self.scheme!r}"
            )
        return profile

    def make_source(self):
        if self.beacon_source is not None:
            return self.beacon_source
        if self.beacon_file:
            return beacons.FileBeaconSource(self.beacon_file)
        url = self.beacon_url or os.environ.get(beacons.URL_ENV) or beacons.DEFAULT_URL
        return beacons.HttpBeaconSource(url, self.http_timeout)

    def make_sink(self):
        if self.sink is not None:
            return self.sink
        if self.log_path in (None, "-"):
            return _json_line_sink(sys.stdout)
        try:
            stream = open(self.log_path, "a", encoding="utf-8")
        except OSError as exc:
            raise ServerStartupError(EXIT_CONFIG, f"cannot open log {self.log_path}: {exc}") from exc
        return _json_line_sink(stream)


def run(config):
    """Start a daemon from ``config`` and return the running KnockServer.
    Startup failures raise ServerStartupError carrying the exit code."""
    profile = config.load_profile()
    net = config.net if config.net is not None else UdpNetwork(config.bind_host)
    server = KnockServer(profile, net, config.mode, config.make_sink())
    source = config.make_source() if server.scheme.uses_beacon else None
    try:
        return server.start(source, config.schedule, config.bootstrap_timeout)
    except ServerStartupError:
        server.stop()
        raise
