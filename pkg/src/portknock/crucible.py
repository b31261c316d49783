"""Crucible: Argon2i password key, keyed BLAKE2b knocks and ports, and the
per-beacon knock table with single-use flags.

    key    = Argon2i(password)
    beacon = BLAKE2b_key(header | header_hash)
    knock  = BLAKE2b_key(beacon_hex || command_name)     128 hex chars on the wire
    port   = first non-zero 4-hex-char window of BLAKE2b_key(beacon_hex || "0")
"""

from dataclasses import dataclass, field
import enum
import hashlib
import hmac

from argon2 import low_level as argon2
from argon2.exceptions import HashingError

from . import metrics
from .profile import KdfParams, Profile, ProfileError, validate_commands

KNOCK_HEX_LEN = 128
PORT_COMMAND = "0"
LEGACY_KEY_CHARS = 22


class CrucibleError(ValueError):
    pass


@dataclass(frozen=True)
class KnockKey:
    bytes: bytes

    def __post_init__(self):
        if not 16 <= len(self.bytes) <= 64:
            raise CrucibleError("knock key must be 16..64 bytes")

    def __repr__(self):
        return "KnockKey(<redacted>)"


def derive_key(password, kdf=None, legacy=False):
    """Argon2i over the password with the profile's fixed salt.

    With ``legacy=True`` the key is instead the last 22 characters of the
    standard encoded hash string (16-byte digest), for compatibility with
    older deployments that keyed BLAKE2b that way.
    """
    kdf = kdf or KdfParams()
    if isinstance(password, str):
        password = password.encode("utf-8")
    if not password:
        raise CrucibleError("password must not be empty")
    try:
        if legacy:
            encoded = argon2.hash_secret(
                password, kdf.salt, kdf.rounds, kdf.memory_kib, kdf.parallelism, 16, argon2.Type.I
            )
            return KnockKey(encoded[-LEGACY_KEY_CHARS:])
        raw = argon2.hash_secret_raw(
            password,
            kdf.salt,
            kdf.rounds,
            kdf.memory_kib,
            kdf.parallelism,
            kdf.output_len,
            argon2.Type.I,
        )
    except HashingError as exc:
        raise CrucibleError(f"argon2 rejected the parameters: {exc}") from exc
    return KnockKey(raw)


def _key_bytes(key):
    return key.bytes if isinstance(key, KnockKey) else bytes(key)


def blake2b_keyed(message, key):
    """Keyed BLAKE2b-512 as an int."""
    metrics.hash_calls.incr()
    return int.from_bytes(hashlib.blake2b(message, key=_key_bytes(key)).digest(), "big")


blake2b_keyed.digest_bits = 512


def blake2b_hex(message, key):
    metrics.hash_calls.incr()
    return hashlib.blake2b(message, key=_key_bytes(key)).hexdigest()


def _beacon_text(beacon):
    return beacon.hex.encode("ascii")


def derive_knock(key, beacon, command_name):
    if not command_name:
        raise CrucibleError("command name must not be empty")
    return blake2b_hex(_beacon_text(beacon) + command_name.encode("utf-8"), key).encode("ascii")


def port_from_hex(digest_hex):
    """First non-zero 4-hex-char window, left to right."""
    for i in range(0, len(digest_hex) - 3, 4):
        port = int(digest_hex[i : i + 4], 16)
        if port:
            return port
    raise CrucibleError("degenerate all-zero digest; hash backend is broken")


def derive_port(key, beacon):
    return port_from_hex(blake2b_hex(_beacon_text(beacon) + PORT_COMMAND.encode(), key))


def plan_knock(key, beacon, command_name):
    """Client side: the (payload, port) pair to send for ``command_name``."""
    return derive_knock(key, beacon, command_name), derive_port(key, beacon)


class Outcome(str, enum.Enum):
    AUTHORIZED = "authorized"
    REPLAYED = "replayed"
    NO_MATCH = "no_match"
    FILTERED = "filtered"


@dataclass
class KnockEntry:
    command_name: str
    command: str
    knock_payload: bytes
    already_used: bool = False


@dataclass
class KnockTable:
    beacon: object
    port: int
    entries: dict = field(default_factory=dict)


@dataclass(frozen=True)
class MatchResult:
    outcome: Outcome
    entry: KnockEntry = None


def build_knock_table(profile, key, beacon):
    if profile.scheme != "crucible":
        raise CrucibleError(f"expected a crucible profile, got {profile.scheme!r}")
    entries = {
        name: KnockEntry(name, shell, derive_knock(key, beacon, name))
        for name, shell in profile.commands.items()
    }
    return KnockTable(beacon, derive_port(key, beacon), entries)


def match_payload(table, payload):
    """Compare ``payload`` against every entry (no early exit) and consume
    the matching entry's single use.  Callers serialize access per table."""
    payload = bytes(payload)
    hit = None
    for entry in table.entries.values():
        if hmac.compare_digest(entry.knock_payload, payload) and hit is None:
            hit = entry
    if hit is None:
        return MatchResult(Outcome.NO_MATCH)
    if hit.already_used:
        return MatchResult(Outcome.REPLAYED, hit)
    hit.already_used = True
    return MatchResult(Outcome.AUTHORIZED, hit)


def generate_profile(password, commands, kdf=None, legacy=False):
    """Server profile from a password and ``(name, shell)`` pairs.  Only the
    derived key is kept."""
    kdf = kdf or KdfParams()
    commands = list(commands)
    names = [name for name, _ in commands]
    if len(set(names)) != len(names):
        raise ProfileError("duplicate command names")
    commands = dict(commands)
    validate_commands(commands)
    key = derive_key(password, kdf, legacy=legacy)
    return Profile("crucible", commands, key=key.bytes, kdf=kdf)
