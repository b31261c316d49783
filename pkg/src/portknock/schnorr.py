"""Schnorr identification, interactive and Fiat-Shamir (NIZKP) forms.

Group elements and exponents are plain ints.  Randomness comes from a
caller-supplied ``rng`` exposing ``randrange``/``getrandbits`` (``random.Random``
for tests, ``secrets.SystemRandom`` otherwise).

A hash backend is any callable ``h(data: bytes) -> int`` carrying a
``digest_bits`` attribute; see :class:`Blake2bHasher` and
:class:`portknock.chaoshash.ChaosHasher`.
"""

from dataclasses import dataclass
import hashlib
import secrets
import string

from . import metrics

MR_ROUNDS = 64
_SMALL_PRIMES = [p for p in range(3, 2000) if all(p % d for d in range(2, int(p**0.5) + 1))]


class SchnorrError(ValueError):
    pass


def _default_rng(rng):
    return rng if rng is not None else secrets.SystemRandom()


def is_probable_prime(n, rounds=MR_ROUNDS, rng=None):
    if n < 2:
        return False
    if n in (2, 3):
        return True
    if n % 2 == 0:
        return False
    for sp in _SMALL_PRIMES:
        if n == sp:
            return True
        if n % sp == 0:
            return False
    rng = _default_rng(rng)
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = pow(x, 2, n)
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class GroupParams:
    p: int
    q: int
    g: int

    def __post_init__(self):
        p, q, g = self.p, self.q, self.g
        if q < 2 or (p - 1) % q:
            raise SchnorrError("q must divide p - 1")
        if not 1 < g < p or pow(g, q, p) != 1:
            raise SchnorrError("g must generate the order-q subgroup")

    @property
    def q_hex_width(self):
        return -(-self.q.bit_length() // 4)


@dataclass(frozen=True)
class KeyPair:
    a: int
    A: int


@dataclass(frozen=True)
class Commitment:
    v: int
    V: int


@dataclass(frozen=True)
class NizkpProof:
    user_id: bytes
    other_info: bytes
    c: int
    r: int


def generate_params(p_bits, q_bits, rng=None, max_tries=100000):
    """FIPS-style construction: prime q, then prime p = k*q + 1, then
    g = h^((p-1)/q) != 1."""
    if not q_bits < p_bits:
        raise SchnorrError("q_bits must be smaller than p_bits")
    if p_bits < 4 or q_bits < 2:
        raise SchnorrError("parameter sizes too small")
    rng = _default_rng(rng)

    for _ in range(max_tries):
        q = rng.getrandbits(q_bits) | (1 << (q_bits - 1)) | 1
        if is_probable_prime(q, rng=rng):
            break
    else:
        raise SchnorrError(f"no {q_bits}-bit prime q found in {max_tries} tries")

    lo = ((1 << (p_bits - 1)) - 1) // q + 1
    hi = ((1 << p_bits) - 2) // q
    if lo > hi:
        raise SchnorrError("no p of the requested size exists for this q")
    for _ in range(max_tries):
        k = rng.randrange(lo, hi + 1)
        k += k % 2  # p = k*q + 1 must be odd
        p = k * q + 1
        if p.bit_length() == p_bits and is_probable_prime(p, rng=rng):
            break
    else:
        raise SchnorrError(f"no {p_bits}-bit prime p found in {max_tries} tries")

    e = (p - 1) // q
    while True:
        g = pow(rng.randrange(2, p - 1), e, p)
        if g != 1:
            return GroupParams(p, q, g)


def keygen(params, rng=None):
    # a = 0 gives A = 1, which no verifier accepts
    rng = _default_rng(rng)
    while True:
        a = rng.randrange(0, params.q)
        A = pow(params.g, a, params.p)
        if A != 1:
            return KeyPair(a, A)


def commit_with(params, v):
    """Commitment for a caller-chosen ephemeral exponent (test hook)."""
    return Commitment(v % params.q, pow(params.g, v, params.p))


def prover_commit(params, rng=None):
    rng = _default_rng(rng)
    while True:
        v = rng.randrange(0, params.q)
        V = pow(params.g, v, params.p)
        if V != 1:
            return Commitment(v, V)


def verifier_challenge(t, rng=None):
    """Challenge drawn from [0, 2**(t-1)]; the upper bound is inclusive and
    is 2**(t-1), not 2**t - 1."""
    if t < 1:
        raise SchnorrError("challenge bit length must be >= 1")
    return _default_rng(rng).randrange(0, (1 << (t - 1)) + 1)


def prover_respond(a, v, c, q):
    return (v - a * c) % q


def public_key_ok(params, A):
    return 2 <= A <= params.p - 1 and pow(A, params.q, params.p) == 1


def verify_interactive(params, A, V, c, r):
    if not public_key_ok(params, A):
        return False
    p = params.p
    return V % p == pow(params.g, r, p) * pow(A, c, p) % p


class Blake2bHasher:
    """Unkeyed or keyed BLAKE2b truncated to ``digest_bits`` (multiple of 8)."""

    name = "blake2b"

    def __init__(self, digest_bits=256, key=b""):
        if digest_bits % 8 or not 8 <= digest_bits <= 512:
            raise SchnorrError("BLAKE2b digest_bits must be a multiple of 8 in [8, 512]")
        self.digest_bits = digest_bits
        self.key = bytes(key)

    def __call__(self, data):
        metrics.hash_calls.incr()
        h = hashlib.blake2b(data, digest_size=self.digest_bits // 8, key=self.key)
        return int.from_bytes(h.digest(), "big")


def _int_bytes(n):
    return n.to_bytes(max(1, -(-n.bit_length() // 8)), "big")


def canonical_hash_input(g, V, A, user_id, other_info):
    """Length-prefixed g || V || A || UserID || OtherInfo (4-byte big-endian
    lengths), so no two distinct tuples serialize identically."""
    out = bytearray()
    for part in (_int_bytes(g), _int_bytes(V), _int_bytes(A), bytes(user_id), bytes(other_info)):
        out += len(part).to_bytes(4, "big")
        out += part
    return bytes(out)


def nizkp_prove(params, keypair, user_id, other_info, hash, rng=None, commitment=None):
    """Non-interactive proof of knowledge of ``keypair.a``.

    ``commitment`` pins the ephemeral ``v`` (test hook); normally it is drawn
    from ``rng``.
    """
    if hash.digest_bits < params.q.bit_length():
        raise SchnorrError(
            f"hash digest ({hash.digest_bits} bits) shorter than q ({params.q.bit_length()} bits)"
        )
    com = commitment or prover_commit(params, rng)
    c = hash(canonical_hash_input(params.g, com.V, keypair.A, user_id, other_info))
    r = prover_respond(keypair.a, com.v, c % params.q, params.q)
    return NizkpProof(bytes(user_id), bytes(other_info), c, r)


def nizkp_verify(params, A, proof, hash):
    if not public_key_ok(params, A):
        return False
    c, r = proof.c, proof.r
    if not (0 <= r < params.q and 0 <= c < (1 << hash.digest_bits)):
        return False
    p = params.p
    V = pow(params.g, r, p) * pow(A, c % params.q, p) % p
    return hash(canonical_hash_input(params.g, V, A, proof.user_id, proof.other_info)) == c


def encode_proof(proof, params, digest_bits):
    """Wire form: hex(c) padded to digest_bits/4, then hex(r) padded to the
    hex width of q.  ASCII bytes, fixed length per profile."""
    return (
        format(proof.c, f"0{digest_bits // 4}x") + format(proof.r, f"0{params.q_hex_width}x")
    ).encode("ascii")


def proof_wire_length(params, digest_bits):
    return digest_bits // 4 + params.q_hex_width


def decode_proof(payload, params, digest_bits, user_id=b"", other_info=b""):
    """Split a wire payload into (c, r); raises SchnorrError when malformed."""
    if len(payload) != proof_wire_length(params, digest_bits):
        raise SchnorrError("payload length mismatch")
    text = bytes(payload).decode("latin-1")
    if not all(ch in string.hexdigits for ch in text):
        raise SchnorrError("payload is not fixed-width hex")
    cw = digest_bits // 4
    c, r = int(text[:cw], 16), int(text[cw:], 16)
    return NizkpProof(bytes(user_id), bytes(other_info), c, r)
