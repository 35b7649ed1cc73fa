import hashlib
import math
from typing import Any, Callable, TypeAlias, TypeVar

import numpy as np

ENGINE_VERSION = '0.1.0'


def noop_log(_message: str, _level: str) -> None:
    pass


NOOP_LOG = noop_log

LogFunction: TypeAlias = Callable[[str, str], None]

T = TypeVar('T', bound=dict[str, Any])


def pick(source: dict[str, Any], keys: list[str]) -> T:
    """
    Creates a new dictionary with only the specified keys from the source dictionary.
    Only includes keys that exist in the source dictionary.

    Args:
        source: The source dictionary to pick from
        keys: List of keys to include in the result

    Returns:
        A new dictionary containing only the specified keys that exist in source
    """
    return {key: source[key] for key in keys if key in source}  # type: ignore[return-value]


def derive_key(seed: int, tag: str) -> np.ndarray:
    """
    Keyed hash of (tag, seed) into a 128-bit Philox key.

    Distinct tags give disjoint key spaces, so the noise and wall streams of one
    master seed never share a generator.
    """
    digest = hashlib.blake2b(f'{tag}:{seed}'.encode(), digest_size=16).digest()
    return np.frombuffer(digest, dtype='<u8').copy()


def derive_seed(master_seed: int, tag: str) -> int:
    digest = hashlib.blake2b(f'{tag}:{master_seed}'.encode(), digest_size=8).digest()
    # Kept within signed 63 bits so it survives config text and JSON.
    return int.from_bytes(digest, 'little') >> 1


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def format_float(value: float) -> str:
    """Shortest round-trip decimal; infinities as '-inf' / 'inf'."""
    if math.isinf(value):
        return '-inf' if value < 0 else 'inf'
    return repr(float(value))
