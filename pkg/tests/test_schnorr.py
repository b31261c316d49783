import random

import pytest

from portknock.chaoshash import ChaosHasher, ChaosHashParams, ChaosKey
from portknock.schnorr import (
    Blake2bHasher,
    GroupParams,
    KeyPair,
    NizkpProof,
    SchnorrError,
    canonical_hash_input,
    commit_with,
    decode_proof,
    encode_proof,
    generate_params,
    is_probable_prime,
    keygen,
    nizkp_prove,
    nizkp_verify,
    proof_wire_length,
    prover_commit,
    prover_respond,
    verifier_challenge,
    verify_interactive,
)


class FixedRng:
    """Returns scripted values from randrange, in order."""

    def __init__(self, *values):
        self.values = list(values)

    def randrange(self, lo, hi=None):
        return self.values.pop(0)


def test_tiny_group_is_valid(tiny_group):
    assert pow(2, 11, 23) == 1
    assert (23 - 1) % 11 == 0
    assert tiny_group.q_hex_width == 1


@pytest.mark.parametrize("p, q, g", [(23, 11, 1), (23, 7, 2), (23, 11, 5)])
def test_group_invariants_rejected(p, q, g):
    with pytest.raises(SchnorrError):
        GroupParams(p, q, g)


def test_generated_params_satisfy_invariants():
    rng = random.Random(7)
    for p_bits, q_bits in [(64, 32), (96, 40), (128, 64)]:
        grp = generate_params(p_bits, q_bits, rng)
        assert grp.p.bit_length() == p_bits
        assert grp.q.bit_length() == q_bits
        assert (grp.p - 1) % grp.q == 0
        assert pow(grp.g, grp.q, grp.p) == 1 and grp.g != 1
        assert is_probable_prime(grp.p) and is_probable_prime(grp.q)


def test_generate_params_bad_sizes():
    with pytest.raises(SchnorrError):
        generate_params(64, 64)


def test_miller_rabin_known_values():
    carmichael = [561, 1105, 1729, 2465, 2821, 6601, 8911, 41041, 825265]
    assert not any(is_probable_prime(n) for n in carmichael)
    assert is_probable_prime(2**127 - 1)
    assert not is_probable_prime((2**61 - 1) * (2**31 - 1))


def test_keygen_example_and_zero_resampled(tiny_group):
    assert keygen(tiny_group, FixedRng(3)) == KeyPair(3, 8)
    # a = 0 would give A = 1; resampled
    assert keygen(tiny_group, FixedRng(0, 3)) == KeyPair(3, 8)


def test_keygen_invariants(group512):
    rng = random.Random(1)
    for _ in range(20):
        kp = keygen(group512, rng)
        assert 0 <= kp.a < group512.q
        assert kp.A == pow(group512.g, kp.a, group512.p)
        assert pow(kp.A, group512.q, group512.p) == 1
        assert 2 <= kp.A <= group512.p - 1


def test_commit_examples(tiny_group):
    assert commit_with(tiny_group, 4).V == 16
    assert commit_with(tiny_group, 0).V == 1
    rng = random.Random(3)
    for _ in range(50):
        com = prover_commit(tiny_group, rng)
        assert 1 <= com.V <= 22 and com.V == pow(2, com.v, 23)


def test_challenge_range():
    rng = random.Random(5)
    assert {verifier_challenge(1, rng) for _ in range(100)} == {0, 1}
    draws = [verifier_challenge(8, rng) for _ in range(2000)]
    assert max(draws) <= 128 and len(set(draws)) > 50
    with pytest.raises(SchnorrError):
        verifier_challenge(0)


def test_respond_examples():
    assert prover_respond(3, 4, 2, 11) == 9
    assert prover_respond(3, 4, 0, 11) == 4
    assert prover_respond(0, 4, 7, 11) == 4


def test_verify_interactive_examples(tiny_group):
    # 2^9 * 8^2 = 6 * 18 = 108 = 16 (mod 23)
    assert verify_interactive(tiny_group, 8, 16, 2, 9)
    assert not verify_interactive(tiny_group, 8, 16, 2, 8)
    for V in range(1, 23):
        for c in range(3):
            for r in range(11):
                assert not verify_interactive(tiny_group, 1, V, c, r)


def test_interactive_completeness(group512):
    rng = random.Random(11)
    for _ in range(100):
        kp = keygen(group512, rng)
        com = prover_commit(group512, rng)
        c = verifier_challenge(64, rng)
        r = prover_respond(kp.a, com.v, c, group512.q)
        assert pow(group512.g, r, group512.p) * pow(kp.A, c, group512.p) % group512.p == com.V
        assert verify_interactive(group512, kp.A, com.V, c, r)


def test_interactive_soundness_t16(group512):
    rng = random.Random(12)
    honest = keygen(group512, rng)
    accepts = 0
    for _ in range(1000):
        wrong = keygen(group512, rng)
        com = prover_commit(group512, rng)
        c = verifier_challenge(16, rng)
        # prover knows only the wrong key and answers anyway
        r = prover_respond(wrong.a, com.v, c, group512.q)
        accepts += verify_interactive(group512, honest.A, com.V, c, r)
        # fully random transcript
        accepts += verify_interactive(
            group512, honest.A, rng.randrange(1, group512.p), c, rng.randrange(group512.q)
        )
    assert accepts == 0


def test_canonical_input_is_length_prefixed():
    a = canonical_hash_input(2, 16, 8, b"ab", b"c")
    b = canonical_hash_input(2, 16, 8, b"a", b"bc")
    assert a != b
    assert a[:5] == b"\x00\x00\x00\x01\x02"


def test_tiny_group_proof_against_direct_arithmetic(tiny_group):
    h = Blake2bHasher(8)
    kp = KeyPair(3, 8)
    proof = nizkp_prove(tiny_group, kp, b"alice", b"cmd1", h, commitment=commit_with(tiny_group, 4))
    # re-derive by hand: V = 2^4 = 16; c = H(...); r = (4 - 3*(c mod 11)) mod 11
    c = h(canonical_hash_input(2, 16, 8, b"alice", b"cmd1"))
    assert proof == NizkpProof(b"alice", b"cmd1", c, (4 - 3 * (c % 11)) % 11)
    assert nizkp_verify(tiny_group, 8, proof, h)


def test_tiny_group_exhaustive_acceptance_set(tiny_group):
    """Over all (c, r) with an 8-bit hash, exactly the q honest proofs (one
    per commitment V) verify and nothing else does."""
    h = Blake2bHasher(8)
    kp = KeyPair(3, 8)
    honest = {
        (p.c, p.r)
        for p in (
            nizkp_prove(tiny_group, kp, b"u", b"k", h, commitment=commit_with(tiny_group, v))
            for v in range(11)
        )
    }
    accepted = {
        (c, r)
        for c in range(256)
        for r in range(11)
        if nizkp_verify(tiny_group, 8, NizkpProof(b"u", b"k", c, r), h)
    }
    assert accepted == honest and len(honest) == 11


def _single_bit_tampers(proof, r_bits, c_bits):
    for i in range(c_bits):
        yield NizkpProof(proof.user_id, proof.other_info, proof.c ^ (1 << i), proof.r)
    for i in range(r_bits):
        yield NizkpProof(proof.user_id, proof.other_info, proof.c, proof.r ^ (1 << i))
    for field in ("user_id", "other_info"):
        data = getattr(proof, field)
        for i in range(len(data) * 8):
            flipped = bytearray(data)
            flipped[i // 8] ^= 1 << (i % 8)
            kw = {"user_id": proof.user_id, "other_info": proof.other_info, field: bytes(flipped)}
            yield NizkpProof(kw["user_id"], kw["other_info"], proof.c, proof.r)


def test_tiny_group_every_single_bit_tamper_rejected(tiny_group):
    # an 8-bit digest collides with probability 1/256 per tamper; this fixture
    # (user "u", info "k") was checked to have no such collisions for v = 1..10
    h = Blake2bHasher(8)
    kp = KeyPair(3, 8)
    for v in range(1, 11):
        proof = nizkp_prove(tiny_group, kp, b"u", b"k", h, commitment=commit_with(tiny_group, v))
        assert nizkp_verify(tiny_group, 8, proof, h)
        for t in _single_bit_tampers(proof, r_bits=4, c_bits=8):
            assert not nizkp_verify(tiny_group, 8, t, h)


def test_full_size_tamper_sampled(group512):
    rng = random.Random(21)
    h = Blake2bHasher(256)
    kp = keygen(group512, rng)
    proof = nizkp_prove(group512, kp, b"client-7", b"open-ssh", h, rng)
    tampers = list(_single_bit_tampers(proof, r_bits=256, c_bits=256))
    for t in rng.sample(tampers, 200):
        assert not nizkp_verify(group512, kp.A, t, h)


def test_completeness_with_chaos_hash(group512):
    rng = random.Random(31)
    h = ChaosHasher(ChaosKey.generate(rng), ChaosHashParams(iterations=16))
    for _ in range(5):
        kp = keygen(group512, rng)
        proof = nizkp_prove(group512, kp, b"user", b"cmd", h, rng)
        assert nizkp_verify(group512, kp.A, proof, h)


def test_replayed_proof_still_verifies(group512):
    h = Blake2bHasher(256)
    rng = random.Random(2)
    kp = keygen(group512, rng)
    proof = nizkp_prove(group512, kp, b"u", b"", h, rng)
    assert nizkp_verify(group512, kp.A, proof, h)
    assert nizkp_verify(group512, kp.A, proof, h)


def test_deterministic_with_fixed_commitment(group512):
    h = Blake2bHasher(256)
    kp = keygen(group512, random.Random(4))
    com = commit_with(group512, 123456789)
    assert nizkp_prove(group512, kp, b"u", b"x", h, commitment=com) == nizkp_prove(
        group512, kp, b"u", b"x", h, commitment=com
    )


def test_digest_too_short_rejected(group512):
    kp = keygen(group512, random.Random(4))
    with pytest.raises(SchnorrError):
        nizkp_prove(group512, kp, b"u", b"", Blake2bHasher(128))


def test_wire_format_roundtrip(group512):
    h = Blake2bHasher(256)
    rng = random.Random(8)
    kp = keygen(group512, rng)
    proof = nizkp_prove(group512, kp, b"u", b"cmd", h, rng)
    wire = encode_proof(proof, group512, 256)
    assert len(wire) == proof_wire_length(group512, 256) == 64 + 64
    back = decode_proof(wire, group512, 256, b"u", b"cmd")
    assert back == proof


@pytest.mark.parametrize("payload", [b"zz" * 64, b" " + b"0" * 127, b"+" + b"1" * 127, b"0" * 127])
def test_decode_rejects_malformed(group512, payload):
    with pytest.raises(SchnorrError):
        decode_proof(payload, group512, 256)
