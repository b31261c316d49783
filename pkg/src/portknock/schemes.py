"""Client and server halves of the three knock schemes.

nizkp         one Schnorr NIZKP per knock on a fixed port; the server
              verifies every packet (exponentiations + hash on the packet
              path) and keeps a cache of accepted (c, r) pairs.
chaos_beacon  H_chaos(beacon_hex || command) on a fixed port; the server
              precomputes the table per beacon.
crucible      keyed BLAKE2b knock and port per beacon; precomputed table.
"""

import secrets
import threading

from . import chaoshash, crucible, schnorr
from .crucible import KnockEntry, KnockKey, KnockTable, MatchResult, Outcome

CHAOS_KNOCK_LEN = 64


def _chaos_beacon_hash(profile):
    params = profile.chaos_params

    def h(message, key):
        return chaoshash.chaos_hash(message, key, params)

    h.digest_bits = params.digest_bits
    return h


def chaos_knock(profile, beacon, command_name):
    digest = chaoshash.chaos_hash(
        beacon.hex.encode("ascii") + command_name.encode("utf-8"),
        profile.chaos_key,
        profile.chaos_params,
    )
    return chaoshash.digest_hex(digest, profile.chaos_params.digest_bits).encode("ascii")


def nizkp_knock(profile, command_name, rng=None):
    if profile.private_key is None:
        raise schnorr.SchnorrError("client profile lacks the private key")
    kp = schnorr.KeyPair(profile.private_key, profile.public_key)
    hasher = profile.nizkp_hasher()
    proof = schnorr.nizkp_prove(
        profile.group, kp, profile.user_id, command_name.encode("utf-8"), hasher, rng=rng
    )
    return schnorr.encode_proof(proof, profile.group, hasher.digest_bits)


class CrucibleScheme:
    name = "crucible"
    uses_beacon = True
    expected_len = crucible.KNOCK_HEX_LEN

    def __init__(self, profile):
        self.profile = profile
        self.key = KnockKey(profile.key)
        self.beacon_key = self.key
        self.beacon_hash = crucible.blake2b_keyed

    def build_table(self, beacon):
        return crucible.build_knock_table(self.profile, self.key, beacon)

    def client_knock(self, beacon, command_name):
        return crucible.plan_knock(self.key, beacon, command_name)


class ChaosBeaconScheme:
    name = "chaos_beacon"
    uses_beacon = True
    expected_len = CHAOS_KNOCK_LEN

    def __init__(self, profile):
        self.profile = profile
        self.beacon_key = profile.chaos_key
        self.beacon_hash = _chaos_beacon_hash(profile)

    def build_table(self, beacon):
        entries = {
            name: KnockEntry(name, shell, chaos_knock(self.profile, beacon, name))
            for name, shell in self.profile.commands.items()
        }
        return KnockTable(beacon, self.profile.port, entries)

    def client_knock(self, beacon, command_name):
        return chaos_knock(self.profile, beacon, command_name), self.profile.port


class NizkpScheme:
    name = "nizkp"
    uses_beacon = False

    def __init__(self, profile):
        self.profile = profile
        self.hasher = profile.nizkp_hasher()
        self.expected_len = schnorr.proof_wire_length(profile.group, self.hasher.digest_bits)
        self.port = profile.port
        self._seen = set()
        self._lock = threading.Lock()

    def verify_packet(self, payload):
        """Try the proof against each command name (as OtherInfo)."""
        p = self.profile
        try:
            bare = schnorr.decode_proof(payload, p.group, self.hasher.digest_bits)
        except schnorr.SchnorrError:
            return MatchResult(Outcome.NO_MATCH)
        for name, shell in p.commands.items():
            proof = schnorr.NizkpProof(p.user_id, name.encode("utf-8"), bare.c, bare.r)
            if schnorr.nizkp_verify(p.group, p.public_key, proof, self.hasher):
                entry = KnockEntry(name, shell, bytes(payload))
                with self._lock:
                    if (bare.c, bare.r) in self._seen:
                        entry.already_used = True
                        return MatchResult(Outcome.REPLAYED, entry)
                    self._seen.add((bare.c, bare.r))
                return MatchResult(Outcome.AUTHORIZED, entry)
        return MatchResult(Outcome.NO_MATCH)

    def client_knock(self, command_name, rng=None):
        return nizkp_knock(self.profile, command_name, rng or secrets.SystemRandom()), self.port


def for_profile(profile):
    return {"crucible": CrucibleScheme, "chaos_beacon": ChaosBeaconScheme, "nizkp": NizkpScheme}[
        profile.scheme
    ](profile)
