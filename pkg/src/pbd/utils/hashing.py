"""Hashing utilities for PBD."""

import hashlib
import json
from typing import Any


def hash_content(content: str | bytes, algorithm: str = "sha256") -> str:
    """Calculate hash of content.

    Args:
        content: String or bytes to hash
        algorithm: Hash algorithm

    Returns:
        Hex digest of the hash
    """
    if isinstance(content, str):
        content = content.encode("utf-8")

    hasher = hashlib.new(algorithm)
    hasher.update(content)
    return hasher.hexdigest()


def fingerprint(obj: Any, prefix: str = "run") -> str:
    """Stable short id for a JSON-serializable object (configs, vocabularies).

    Returns:
        ID in format: prefix_shortHash
    """
    canonical = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return f"{prefix}_{hash_content(canonical)[:12]}"
