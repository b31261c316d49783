"""Keyed hash built on the absolute-value chaotic map ``x <- 1 - |alpha * x|``.

All arithmetic is signed fixed point with 256 fractional bits, truncating
toward zero after every multiplication, so client and server compute the
same digest on any platform.  Values are carried as plain Python ints scaled
by ``2**256``.

The key is the initial state of the map.  Each message byte selects the map
coefficient ``alpha`` and drives ``iterations`` map steps; the state is chained
from byte to byte and the final state is normalised into the digest range.
"""

from dataclasses import dataclass
from fractions import Fraction
import secrets

from . import metrics

FRAC_BITS = 256
ONE = 1 << FRAC_BITS

DEFAULT_ITERATIONS = 64
DIGEST_SIZES = (128, 256)
PAD_BYTE = b"0"


def _truncate(value):
    """Convert a rational to the fixed-point grid, rounding toward zero."""
    return int(Fraction(value) * ONE)


# shared by every party; both constants are truncated once, here
ALPHA_STEP = _truncate(Fraction("0.0015"))
ALPHA_BASE = _truncate(Fraction("1.8"))
# bytes above this get interleaved half-steps so alpha stays below 2
ALPHA_DIRECT_MAX = 133


@dataclass(frozen=True, order=True)
class ChaosReal:
    """A fixed-point real; ``raw`` is the value scaled by 2**256."""

    raw: int

    @classmethod
    def from_decimal(cls, text):
        return cls(_truncate(Fraction(text)))

    @classmethod
    def from_hex(cls, text):
        return cls(int(text, 16))

    def to_hex(self):
        return hex(self.raw)

    def to_fraction(self):
        return Fraction(self.raw, ONE)

    def __mul__(self, other):
        prod = self.raw * other.raw
        if prod >= 0:
            return ChaosReal(prod >> FRAC_BITS)
        return ChaosReal(-((-prod) >> FRAC_BITS))

    def __float__(self):
        return self.raw / ONE

    def __abs__(self):
        return ChaosReal(abs(self.raw))


class ChaosKeyError(ValueError):
    pass


@dataclass(frozen=True)
class ChaosKey:
    value: ChaosReal

    def __post_init__(self):
        raw = self.value.raw
        if raw == 0 or abs(raw) >= ONE:
            raise ChaosKeyError("chaos key must lie strictly inside (-1, 1) and be non-zero")

    @classmethod
    def from_decimal(cls, text):
        return cls(ChaosReal.from_decimal(text))

    @classmethod
    def from_hex(cls, text):
        return cls(ChaosReal.from_hex(text))

    @classmethod
    def generate(cls, rng=None):
        rng = rng or secrets.SystemRandom()
        while True:
            raw = rng.randrange(-ONE + 1, ONE)
            if raw:
                return cls(ChaosReal(raw))

    def to_hex(self):
        return self.value.to_hex()


@dataclass(frozen=True)
class ChaosHashParams:
    iterations: int = DEFAULT_ITERATIONS
    digest_bits: int = 256

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.digest_bits not in DIGEST_SIZES:
            raise ValueError(f"digest_bits must be one of {DIGEST_SIZES}")


def pad_message(message):
    """Right-pad with ASCII '0' to a multiple of 8 bytes."""
    message = bytes(message)
    return message + PAD_BYTE * (-len(message) % 8)


def alpha_for_byte(w):
    """Map coefficient for one message byte.

    Bytes 0..133 use ``1.8 + 0.0015*w`` exactly.  Larger bytes would push
    alpha past 2, where the map escapes [-1, 1] and diverges, so they are
    placed on the half-steps between the direct values instead; every byte
    keeps a distinct alpha in [1.8, 2).
    """
    if not 0 <= w <= 255:
        raise ValueError(f"byte out of range: {w}")
    if w <= ALPHA_DIRECT_MAX:
        return ChaosReal(ALPHA_BASE + w * ALPHA_STEP)
    k = w - (ALPHA_DIRECT_MAX + 1)
    return ChaosReal(ALPHA_BASE + k * ALPHA_STEP + ALPHA_STEP // 2)


def map_step(x, alpha):
    return ChaosReal(ONE - abs(alpha * x).raw)


def normalize(x, digest_bits):
    """Affine map of a state in (-1, 1] onto [0, 2**digest_bits)."""
    top = (1 << digest_bits) - 1
    value = ((x.raw + ONE) << digest_bits) >> (FRAC_BITS + 1)
    return max(0, min(value, top))


def chaos_hash(message, key, params=None, pad=True):
    if not isinstance(key, ChaosKey):
        key = ChaosKey(key)
    params = params or ChaosHashParams()
    metrics.hash_calls.incr()
    data = pad_message(message) if pad else bytes(message)
    one = ONE
    shift = FRAC_BITS
    x = key.value.raw
    # inlined map_step; this loop is the hot path
    for w in data:
        a = alpha_for_byte(w).raw
        for _ in range(params.iterations):
            p = a * x
            x = one - (p >> shift if p >= 0 else (-p) >> shift)
    return normalize(ChaosReal(x), params.digest_bits)


def digest_hex(value, digest_bits):
    return format(value, f"0{digest_bits // 4}x")


class ChaosHasher:
    """Chaos hash bound to a key, with the ``digest_bits`` / ``__call__``
    shape the proof code expects of a hash backend."""

    name = "chaos"

    def __init__(self, key, params=None):
        self.key = key if isinstance(key, ChaosKey) else ChaosKey(key)
        self.params = params or ChaosHashParams()

    @property
    def digest_bits(self):
        return self.params.digest_bits

    def __call__(self, data):
        return chaos_hash(data, self.key, self.params)


def chaos_keyed_hash(message, key):
    """``H(m, k)`` with default parameters."""
    return chaos_hash(message, key)


chaos_keyed_hash.digest_bits = ChaosHashParams().digest_bits
