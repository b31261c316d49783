"""Private random beacon derived from the latest Bitcoin block.

The block metadata and the block hash are combined with a bytewise OR and
passed through a keyed hash, so only holders of the key can compute the
beacon.  Sources are pluggable: HTTPS API, saved response file, fixed block,
and a scripted sequence for tests.
"""

from dataclasses import dataclass, field
import json
import logging
import threading
import time
import urllib.error
import urllib.request

log = logging.getLogger(__name__)

DEFAULT_URL = "https://chain.api.btc.com/v3/block/latest"
URL_ENV = "KNOCK_BEACON_URL"


class BeaconError(Exception):
    """Base for fetch failures; carries the identity of the failing source."""

    def __init__(self, source, message):
        super().__init__(f"{source}: {message}")
        self.source = source


class BeaconNetworkError(BeaconError):
    pass


class BeaconFormatError(BeaconError):
    pass


class BeaconFieldError(BeaconError):
    pass


@dataclass(frozen=True)
class BlockInfo:
    header_bytes: bytes
    header_hash_bytes: bytes
    height: int
    fetched_at: float = field(default_factory=time.time, compare=False)

    def __post_init__(self):
        if not self.header_bytes or not self.header_hash_bytes:
            raise ValueError("block header and header hash must be non-empty")
        if self.height < 0:
            raise ValueError("block height must be non-negative")

    def same_block(self, other):
        return (
            other is not None
            and self.header_bytes == other.header_bytes
            and self.header_hash_bytes == other.header_hash_bytes
        )


@dataclass(frozen=True)
class BeaconValue:
    digest: int
    digest_bits: int
    source_height: int
    derived_at: float = field(default_factory=time.time, compare=False)

    def __post_init__(self):
        if not 0 <= self.digest < (1 << self.digest_bits):
            raise ValueError("beacon digest out of range")

    @property
    def hex(self):
        """Lowercase, fixed-width hex; this text is what gets hashed downstream."""
        return format(self.digest, f"0{self.digest_bits // 4}x")


@dataclass(frozen=True)
class PollSchedule:
    long_wait: float = 240.0
    short_wait: float = 30.0

    def __post_init__(self):
        if self.long_wait < 0 or self.short_wait < 0:
            raise ValueError("poll waits must be non-negative")


def combine_block(block):
    """Bytewise OR of header and header hash, truncated to the shorter one.

    This is a true bitwise OR.  A logical ``a or b`` on byte values would
    just return the header byte whenever it is non-zero.
    """
    return bytes(a | b for a, b in zip(block.header_bytes, block.header_hash_bytes))


def derive_beacon(block, key, hash):
    """``hash`` is a keyed hash ``hash(message, key) -> int`` with a
    ``digest_bits`` attribute."""
    return BeaconValue(hash(combine_block(block), key), hash.digest_bits, block.height)


def _data_object_text(text):
    """Return the verbatim JSON text of the top-level "data" value, or None."""
    dec = json.JSONDecoder()
    ws = " \t\r\n"

    def skip(i):
        while i < len(text) and text[i] in ws:
            i += 1
        return i

    i = skip(0)
    if text[i : i + 1] != "{":
        return None
    i = skip(i + 1)
    if text[i : i + 1] == "}":
        return None
    found = None
    while True:
        key, i = dec.raw_decode(text, i)
        i = skip(i)
        if text[i : i + 1] != ":":
            return None
        start = skip(i + 1)
        _, end = dec.raw_decode(text, start)
        if key == "data":
            # duplicate keys: json.loads keeps the last one, so do we
            found = text[start:end]
        i = skip(end)
        if text[i : i + 1] == ",":
            i = skip(i + 1)
            continue
        return found


def parse_api_response(body, source="<response>"):
    """Parse a block-API response body into a BlockInfo.

    ``header_bytes`` is the verbatim UTF-8 text of the ``data`` object and
    ``header_hash_bytes`` the hex-decoded ``data.hash``.
    """
    if isinstance(body, bytes):
        try:
            body = body.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise BeaconFormatError(source, "response is not UTF-8") from exc
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise BeaconFormatError(source, f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("data"), dict):
        raise BeaconFieldError(source, "missing 'data' object")
    data = doc["data"]
    for name, kind in (("hash", str), ("height", int)):
        if name not in data:
            raise BeaconFieldError(source, f"missing field data.{name}")
        if not isinstance(data[name], kind) or isinstance(data[name], bool):
            raise BeaconFormatError(source, f"data.{name} has the wrong type")
    try:
        hash_bytes = bytes.fromhex(data["hash"])
    except ValueError as exc:
        raise BeaconFormatError(source, "data.hash is not hex") from exc
    if not hash_bytes or data["height"] < 0:
        raise BeaconFormatError(source, "empty hash or negative height")
    header = _data_object_text(body)
    return BlockInfo(header.encode("utf-8"), hash_bytes, data["height"])


class HttpBeaconSource:
    def __init__(self, url=DEFAULT_URL, timeout=10.0):
        self.url = url
        self.timeout = timeout

    def __repr__(self):
        return f"HttpBeaconSource({self.url!r})"

    def fetch_latest(self):
        req = urllib.request.Request(self.url, headers={"User-Agent": "portknock"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = resp.read()
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise BeaconNetworkError(self.url, f"request failed: {exc}") from exc
        return parse_api_response(body, self.url)


class FileBeaconSource:
    """Replays a saved API response body."""

    def __init__(self, path):
        self.path = str(path)

    def __repr__(self):
        return f"FileBeaconSource({self.path!r})"

    def fetch_latest(self):
        try:
            with open(self.path, "rb") as f:
                body = f.read()
        except OSError as exc:
            raise BeaconNetworkError(self.path, f"cannot read fixture: {exc}") from exc
        return parse_api_response(body, self.path)


class FixedBeaconSource:
    def __init__(self, block):
        self.block = block

    def fetch_latest(self):
        return self.block


class ScriptedBeaconSource:
    """Yields the given items in order, then keeps repeating the last one.
    Exception instances in the script are raised instead of returned."""

    def __init__(self, items):
        self.items = list(items)
        if not self.items:
            raise ValueError("script must not be empty")
        self.calls = 0
        self._lock = threading.Lock()

    def fetch_latest(self):
        with self._lock:
            item = self.items[min(self.calls, len(self.items) - 1)]
            self.calls += 1
        if isinstance(item, BaseException):
            raise item
        return item


def fetch_latest(source):
    return source.fetch_latest()


def poll_loop(source, key, hash, schedule, sink, stop=None, max_ticks=None, wait=None, initial=None):
    """Poll ``source`` and hand a BeaconValue to ``sink`` whenever the block
    changes.

    Waits ``schedule.long_wait`` after an emission and ``short_wait``
    otherwise.  Fetch errors are logged and retried; a block lower than the
    last emitted one is ignored.  Runs until ``stop`` is set, or for
    ``max_ticks`` fetch attempts.  ``initial`` is a block the consumer
    already has; it is treated as emitted.  Returns the number of emissions.
    """
    stop = stop or threading.Event()
    wait = wait or stop.wait
    last = initial
    emitted = 0
    ticks = 0
    while not stop.is_set():
        if max_ticks is not None and ticks >= max_ticks:
            break
        ticks += 1
        try:
            block = source.fetch_latest()
        except Exception as exc:
            log.warning("beacon fetch failed (%s); retrying in %ss", exc, schedule.short_wait)
            wait(schedule.short_wait)
            continue
        if last is not None and block.height < last.height:
            log.warning("ignoring block %d older than %d", block.height, last.height)
            wait(schedule.short_wait)
            continue
        if block.same_block(last):
            log.debug("beacon unchanged, checking again in %ss", schedule.short_wait)
            wait(schedule.short_wait)
            continue
        value = derive_beacon(block, key, hash)
        last = block
        emitted += 1
        log.info("new beacon at height %d", block.height)
        sink(value)
        wait(schedule.long_wait)
    return emitted
