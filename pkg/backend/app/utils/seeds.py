# app/utils/seeds.py
import hashlib

_U64 = (1 << 64) - 1


def derive_seed(master: int, *parts) -> int:
    """
    Derives an independent 64-bit seed from the master seed and a label path,
    e.g. derive_seed(seed, address, contract_id, round).
    """
    key = "|".join([str(int(master) & _U64), *(str(p) for p in parts)])
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:8], "little")


def make_address(label: str) -> str:
    """Deterministic 20-byte address (40 lowercase hex chars) for a client label."""
    return hashlib.sha256(f"address:{label}".encode()).hexdigest()[:40]
