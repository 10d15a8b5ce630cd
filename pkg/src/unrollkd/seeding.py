"""Deterministic seed derivation.

Every random draw in the package is keyed by a seed derived from a base seed
plus a tuple of string/int/float tags. Hashing goes through SHA-256 so the
mapping is stable across platforms, Python versions and process restarts
(unlike hash()).
"""

import hashlib


def _tag(part) -> str:
    if isinstance(part, float):
        # repr is exact for floats and stable across platforms
        return f"f:{part!r}"
    if isinstance(part, bool):
        return f"b:{int(part)}"
    if isinstance(part, int):
        return f"i:{part}"
    if isinstance(part, str):
        return f"s:{part}"
    raise TypeError(f"unsupported seed tag type: {type(part).__name__}")


def derive_seed(base: int, *parts) -> int:
    """Derive a 63-bit child seed from a base seed and a tag tuple."""
    payload = "|".join(["unrollkd", _tag(int(base))] + [_tag(p) for p in parts])
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF
