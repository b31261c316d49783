"""Single-packet port knocking: Schnorr NIZKP knocks, chaos-hash beacon
knocks, and Crucible (Argon2i + keyed BLAKE2b + Bitcoin random beacon)."""

__version__ = "0.1.0"
