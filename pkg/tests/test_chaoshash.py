from decimal import Decimal
from fractions import Fraction
import random

from hypothesis import given, settings, strategies as st
import pytest

from portknock.chaoshash import (
    ONE,
    ChaosHashParams,
    ChaosHasher,
    ChaosKey,
    ChaosKeyError,
    ChaosReal,
    alpha_for_byte,
    chaos_hash,
    digest_hex,
    map_step,
    normalize,
    pad_message,
)

from .oracles import chaos_decimal

ULP = Fraction(1, ONE)


@pytest.mark.parametrize(
    "msg, expected",
    [(b"abc", b"abc00000"), (b"12345678", b"12345678"), (b"", b""), (b"123456789", b"1234567890000000")],
)
def test_pad_message(msg, expected):
    assert pad_message(msg) == expected


@pytest.mark.parametrize("w, value", [(32, "1.848"), (126, "1.989"), (0, "1.8"), (133, "1.9995")])
def test_alpha_for_byte_direct_range(w, value):
    got = alpha_for_byte(w).to_fraction()
    # two truncated constants: at most w + 1 ulps below the exact value
    assert 0 <= Fraction(value) - got <= (w + 1) * ULP


def test_alpha_high_bytes_stay_below_two_and_distinct():
    alphas = [alpha_for_byte(w).raw for w in range(256)]
    assert len(set(alphas)) == 256
    assert min(alphas) == alpha_for_byte(0).raw
    assert max(alphas) < 2 * ONE
    assert abs(alpha_for_byte(134).to_fraction() - Fraction("1.80075")) < 200 * ULP


def test_alpha_rejects_non_bytes():
    with pytest.raises(ValueError):
        alpha_for_byte(256)


def test_map_step_examples():
    half = ChaosReal.from_decimal("0.5")
    assert map_step(ChaosReal(0), alpha_for_byte(77)).raw == ONE
    got = map_step(half, ChaosReal.from_decimal("1.8")).to_fraction()
    assert abs(got - Fraction("0.1")) <= 2 * ULP
    assert map_step(ChaosReal(ONE), ChaosReal(2 * ONE)).raw == -ONE


def test_multiplication_truncates_toward_zero():
    tiny = ChaosReal(1)
    half = ChaosReal(ONE // 2)
    assert (tiny * half).raw == 0
    assert (ChaosReal(-1) * half).raw == 0
    assert (ChaosReal(-3) * half).raw == -1


def test_empty_message_is_bare_key_state():
    key = ChaosKey.from_decimal("0.5")
    for bits in (128, 256):
        got = chaos_hash(b"", key, ChaosHashParams(iterations=8, digest_bits=bits))
        assert got == (3 << bits) // 4  # floor(0.75 * 2^bits)


def test_single_byte_against_decimal_oracle():
    key = ChaosKey.from_decimal("0.25")
    params = ChaosHashParams(iterations=4, digest_bits=128)
    expected = chaos_decimal.digest(b"A", Decimal("0.25"), 4, 128)
    assert chaos_hash(b"A", key, params) == expected
    # frozen from the oracle run
    assert expected == 153698581710417564100098379262435880709


@pytest.mark.parametrize("seed", range(6))
def test_random_vectors_against_decimal_oracle(seed):
    rng = random.Random(seed)
    key = ChaosKey.generate(rng)
    msg = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 20)))
    params = ChaosHashParams(iterations=rng.choice([1, 7, 64]), digest_bits=rng.choice([128, 256]))
    with chaos_decimal._ctx():
        dkey = Decimal(key.value.raw) / chaos_decimal.GRID
    expected = chaos_decimal.digest(msg, dkey, params.iterations, params.digest_bits)
    assert chaos_hash(msg, key, params) == expected


def test_lowest_key_bit_changes_digest():
    a = ChaosKey.from_decimal("0.3141592653589793")
    b = ChaosKey(ChaosReal(a.value.raw ^ 1))
    assert chaos_hash(b"beacon", a) != chaos_hash(b"beacon", b)


@pytest.mark.parametrize("bad", ["0", "1", "-1", "1.5"])
def test_invalid_keys_rejected(bad):
    with pytest.raises(ChaosKeyError):
        ChaosKey.from_decimal(bad)


def test_params_validation():
    with pytest.raises(ValueError):
        ChaosHashParams(iterations=0)
    with pytest.raises(ValueError):
        ChaosHashParams(digest_bits=512)


def test_normalize_bounds():
    assert normalize(ChaosReal(ONE), 128) == (1 << 128) - 1
    assert normalize(ChaosReal(-ONE + 1), 128) == 0
    assert normalize(ChaosReal(0), 128) == 1 << 127


def test_digest_hex_fixed_width():
    assert digest_hex(5, 128) == "0" * 31 + "5"
    assert len(digest_hex((1 << 256) - 1, 256)) == 64


def test_hasher_wrapper_matches_function():
    key = ChaosKey.from_decimal("-0.7")
    h = ChaosHasher(key, ChaosHashParams(16, 256))
    assert h.digest_bits == 256
    assert h(b"xyz") == chaos_hash(b"xyz", key, ChaosHashParams(16, 256))


keys = st.integers(min_value=-ONE + 1, max_value=ONE - 1).filter(bool).map(
    lambda r: ChaosKey(ChaosReal(r))
)


@settings(max_examples=60, deadline=None)
@given(msg=st.binary(max_size=24), key=keys, bits=st.sampled_from([128, 256]))
def test_digest_range_and_determinism(msg, key, bits):
    params = ChaosHashParams(iterations=8, digest_bits=bits)
    d = chaos_hash(msg, key, params)
    assert 0 <= d < 1 << bits
    assert chaos_hash(msg, key, params) == d


@settings(max_examples=60, deadline=None)
@given(msg=st.binary(max_size=24), key=keys)
def test_padding_consistency(msg, key):
    params = ChaosHashParams(iterations=5)
    assert chaos_hash(msg, key, params) == chaos_hash(pad_message(msg), key, params, pad=False)


@settings(max_examples=200, deadline=None)
@given(
    x=st.integers(min_value=-ONE, max_value=ONE).map(ChaosReal),
    w=st.integers(min_value=0, max_value=255),
)
def test_state_stays_in_range(x, w):
    y = map_step(x, alpha_for_byte(w))
    assert -ONE < y.raw <= ONE
