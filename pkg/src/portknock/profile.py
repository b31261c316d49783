"""Profile files shared between client and server.

One JSON object per file, UTF-8, ``version`` 1.  The field set depends on the
scheme and unknown fields are rejected::

    crucible      {"version", "scheme", "key", "kdf", "commands", ["created_at"]}
    chaos_beacon  {"version", "scheme", "chaos_key", "iterations", "port", "commands", ["created_at"]}
    nizkp         {"version", "scheme", "group", "public_key", ["private_key"], "user_id",
                   "hash", ["chaos_key", "iterations"], "port", "commands", ["created_at"]}

``commands`` is a JSON object mapping command name to shell string.  Secrets
(the crucible key, the chaos key, the Schnorr private exponent) are stored as
hex; the password itself is never stored.
"""

import base64
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
import json

from .chaoshash import ChaosHashParams, ChaosHasher, ChaosKey
from .schnorr import Blake2bHasher, GroupParams

FORMAT_VERSION = 1
SCHEMES = ("nizkp", "chaos_beacon", "crucible")
RESERVED_NAME = "0"

DEFAULT_ROUNDS = 20
DEFAULT_MEMORY_KIB = 250000
DEFAULT_PARALLELISM = 2
DEFAULT_SALT = b"salted pork"


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class KdfParams:
    rounds: int = DEFAULT_ROUNDS
    memory_kib: int = DEFAULT_MEMORY_KIB
    parallelism: int = DEFAULT_PARALLELISM
    salt: bytes = DEFAULT_SALT
    output_len: int = 32

    def __post_init__(self):
        if self.rounds < 1:
            raise ProfileError("kdf rounds must be >= 1")
        if self.parallelism < 1:
            raise ProfileError("kdf parallelism must be >= 1")
        if self.memory_kib < 8 * self.parallelism:
            raise ProfileError("kdf memory must be at least 8 KiB per lane")
        if len(self.salt) < 8:
            raise ProfileError("kdf salt must be at least 8 bytes")
        if not 16 <= self.output_len <= 64:
            raise ProfileError("kdf output length must be 16..64 bytes")

    def to_json(self):
        return {
            "rounds": self.rounds,
            "memory_kib": self.memory_kib,
            "parallelism": self.parallelism,
            "salt_b64": base64.b64encode(self.salt).decode("ascii"),
        }

    @classmethod
    def from_json(cls, obj):
        _check_keys(obj, {"rounds", "memory_kib", "parallelism", "salt_b64"}, set(), "kdf")
        try:
            salt = base64.b64decode(obj["salt_b64"], validate=True)
        except (ValueError, TypeError) as exc:
            raise ProfileError("kdf.salt_b64 is not base64") from exc
        return cls(
            rounds=_int(obj["rounds"], "kdf.rounds"),
            memory_kib=_int(obj["memory_kib"], "kdf.memory_kib"),
            parallelism=_int(obj["parallelism"], "kdf.parallelism"),
            salt=salt,
        )


def validate_commands(commands):
    if not commands:
        raise ProfileError("profile needs at least one command")
    for name, shell in commands.items():
        if not isinstance(name, str) or not name:
            raise ProfileError("command names must be non-empty strings")
        if name == RESERVED_NAME:
            raise ProfileError("Invalid command name: '0' is reserved")
        if not isinstance(shell, str):
            raise ProfileError(f"command {name!r} must be a shell string")


@dataclass
class Profile:
    scheme: str
    commands: dict
    key: bytes = None
    kdf: KdfParams = None
    chaos_key: ChaosKey = None
    iterations: int = None
    port: int = None
    group: GroupParams = None
    public_key: int = None
    private_key: int = None
    user_id: bytes = b""
    hash_name: str = None
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ProfileError(f"unknown scheme {self.scheme!r}")
        self.commands = dict(self.commands)
        validate_commands(self.commands)
        if self.scheme == "crucible":
            if self.key is None or self.kdf is None:
                raise ProfileError("crucible profile needs key and kdf")
            if not 16 <= len(self.key) <= 64:
                raise ProfileError("crucible key must be 16..64 bytes")
        else:
            if self.port is None or not 1 <= self.port <= 65535:
                raise ProfileError("profile port must be in 1..65535")
        if self.scheme == "chaos_beacon" and self.chaos_key is None:
            raise ProfileError("chaos_beacon profile needs chaos_key")
        if self.scheme == "nizkp":
            if self.group is None or self.public_key is None:
                raise ProfileError("nizkp profile needs group and public_key")
            if self.hash_name not in ("chaos", "blake2b"):
                raise ProfileError("nizkp hash must be 'chaos' or 'blake2b'")
            if self.hash_name == "chaos" and self.chaos_key is None:
                raise ProfileError("nizkp profile with chaos hash needs chaos_key")
            if self.private_key is not None and pow(
                self.group.g, self.private_key, self.group.p
            ) != self.public_key:
                raise ProfileError("private_key does not match public_key")

    # -- scheme helpers -------------------------------------------------

    @property
    def chaos_params(self):
        return ChaosHashParams(iterations=self.iterations or ChaosHashParams().iterations)

    def nizkp_hasher(self):
        if self.hash_name == "chaos":
            return ChaosHasher(self.chaos_key, self.chaos_params)
        return Blake2bHasher(256)

    def public_only(self):
        """Server copy of a nizkp profile: drops the private exponent."""
        return replace(self, private_key=None)

    # -- serialization ----------------------------------------------------

    def to_json(self):
        out = {"version": self.version, "scheme": self.scheme}
        if self.scheme == "crucible":
            out["key"] = self.key.hex()
            out["kdf"] = self.kdf.to_json()
        if self.scheme == "nizkp":
            out["group"] = {k: hex(getattr(self.group, k)) for k in ("p", "q", "g")}
            out["public_key"] = hex(self.public_key)
            if self.private_key is not None:
                out["private_key"] = hex(self.private_key)
            out["user_id"] = self.user_id.decode("utf-8")
            out["hash"] = self.hash_name
        if self.chaos_key is not None:
            out["chaos_key"] = self.chaos_key.to_hex()
            out["iterations"] = self.chaos_params.iterations
        if self.scheme != "crucible":
            out["port"] = self.port
        out["commands"] = dict(self.commands)
        if self.created_at is not None:
            out["created_at"] = self.created_at
        return out

    def dumps(self):
        return json.dumps(self.to_json(), indent=4) + "\n"

    @classmethod
    def from_json(cls, obj):
        if not isinstance(obj, dict):
            raise ProfileError("profile must be a JSON object")
        scheme = obj.get("scheme")
        if obj.get("version") != FORMAT_VERSION:
            raise ProfileError(f"unsupported profile version {obj.get('version')!r}")
        if scheme == "crucible":
            _check_keys(obj, {"version", "scheme", "key", "kdf", "commands"}, {"created_at"})
            return cls(
                scheme,
                _commands(obj["commands"]),
                key=_hex_bytes(obj["key"], "key"),
                kdf=KdfParams.from_json(_obj(obj["kdf"], "kdf")),
                created_at=obj.get("created_at"),
            )
        if scheme == "chaos_beacon":
            _check_keys(
                obj,
                {"version", "scheme", "chaos_key", "iterations", "port", "commands"},
                {"created_at"},
            )
            return cls(
                scheme,
                _commands(obj["commands"]),
                chaos_key=_chaos_key(obj["chaos_key"]),
                iterations=_int(obj["iterations"], "iterations"),
                port=_int(obj["port"], "port"),
                created_at=obj.get("created_at"),
            )
        if scheme == "nizkp":
            _check_keys(
                obj,
                {"version", "scheme", "group", "public_key", "user_id", "hash", "port", "commands"},
                {"private_key", "chaos_key", "iterations", "created_at"},
            )
            grp = _obj(obj["group"], "group")
            _check_keys(grp, {"p", "q", "g"}, set(), "group")
            try:
                group = GroupParams(*(_hex_int(grp[k], f"group.{k}") for k in ("p", "q", "g")))
            except ValueError as exc:
                raise ProfileError(f"invalid group: {exc}") from exc
            return cls(
                scheme,
                _commands(obj["commands"]),
                group=group,
                public_key=_hex_int(obj["public_key"], "public_key"),
                private_key=(
                    _hex_int(obj["private_key"], "private_key") if "private_key" in obj else None
                ),
                user_id=_str(obj["user_id"], "user_id").encode("utf-8"),
                hash_name=obj["hash"],
                chaos_key=_chaos_key(obj["chaos_key"]) if "chaos_key" in obj else None,
                iterations=_int(obj["iterations"], "iterations") if "iterations" in obj else None,
                port=_int(obj["port"], "port"),
                created_at=obj.get("created_at"),
            )
        raise ProfileError(f"unknown scheme {scheme!r}")

    @classmethod
    def loads(cls, text):
        try:
            obj = json.loads(text, object_pairs_hook=_no_duplicates)
        except json.JSONDecodeError as exc:
            raise ProfileError(f"profile is not valid JSON: {exc}") from exc
        return cls.from_json(obj)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.dumps())

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as f:
                text = f.read()
        except OSError as exc:
            raise ProfileError(f"cannot read profile {path}: {exc}") from exc
        return cls.loads(text)


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ProfileError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _check_keys(obj, required, optional, where="profile"):
    missing = required - obj.keys()
    if missing:
        raise ProfileError(f"{where}: missing field(s) {sorted(missing)}")
    unknown = obj.keys() - required - optional
    if unknown:
        raise ProfileError(f"{where}: unknown field(s) {sorted(unknown)}")


def _int(v, name):
    if not isinstance(v, int) or isinstance(v, bool):
        raise ProfileError(f"{name} must be an integer")
    return v


def _str(v, name):
    if not isinstance(v, str):
        raise ProfileError(f"{name} must be a string")
    return v


def _obj(v, name):
    if not isinstance(v, dict):
        raise ProfileError(f"{name} must be an object")
    return v


def _hex_int(v, name):
    try:
        return int(_str(v, name), 16)
    except ValueError as exc:
        raise ProfileError(f"{name} is not hex") from exc


def _hex_bytes(v, name):
    try:
        return bytes.fromhex(_str(v, name))
    except ValueError as exc:
        raise ProfileError(f"{name} is not hex") from exc


def _chaos_key(v):
    try:
        return ChaosKey.from_hex(_str(v, "chaos_key"))
    except ValueError as exc:
        raise ProfileError(f"invalid chaos_key: {exc}") from exc


def _commands(v):
    _obj(v, "commands")
    validate_commands(v)
    return v
