"""Client-side knock sequences.  Progress goes to ``progress`` (stderr in the
CLI); nothing is awaited from the server, so success means "sent"."""

from dataclasses import dataclass

from . import beacon as beacons
from .crucible import blake2b_keyed, derive_key, plan_knock
from .schemes import for_profile
from .transport import send_knock


class BeaconUnavailable(Exception):
    pass


class SendFailed(Exception):
    pass


@dataclass(frozen=True)
class KnockResult:
    payload: bytes
    port: int
    beacon_height: int = None


def _noop(msg):
    pass


def _fetch(source):
    try:
        return source.fetch_latest()
    except Exception as exc:
        raise BeaconUnavailable(str(exc)) from exc


def _send(payload, ip, port, net):
    try:
        send_knock(payload, ip, port, net)
    except Exception as exc:
        raise SendFailed(str(exc)) from exc


def knock_crucible(ip, command, source, password=None, key=None, kdf=None, legacy=False,
                   net=None, progress=_noop):
    """Stateless crucible knock: needs only the password (or an already
    derived key), the server address and a command name."""
    if key is None:
        key = derive_key(password, kdf, legacy=legacy)
    progress("[+] Harvesting beacon...")
    block = _fetch(source)
    value = beacons.derive_beacon(block, key, blake2b_keyed)
    progress("[+] Generating knock...")
    progress("[+] Calculating port...")
    payload, port = plan_knock(key, value, command)
    progress("[+] Sending knock...")
    _send(payload, ip, port, net)
    progress(f"[+] Knock sent to {ip} {port}")
    return KnockResult(payload, port, block.height)


def knock_with_profile(ip, command, profile, source=None, net=None, rng=None, progress=_noop):
    """Knock for the profile-based schemes (nizkp, chaos_beacon)."""
    scheme = for_profile(profile)
    if command not in profile.commands:
        # the server would silently ignore it; say so locally instead
        raise KeyError(f"command {command!r} is not in the profile")
    height = None
    if scheme.uses_beacon:
        progress("[+] Harvesting beacon...")
        block = _fetch(source)
        height = block.height
        value = beacons.derive_beacon(block, scheme.beacon_key, scheme.beacon_hash)
        progress("[+] Generating knock...")
        payload, port = scheme.client_knock(value, command)
    else:
        progress("[+] Generating proof...")
        payload, port = scheme.client_knock(command, rng)
    progress("[+] Sending knock...")
    _send(payload, ip, port, net)
    progress(f"[+] Knock sent to {ip} {port}")
    return KnockResult(payload, port, height)
