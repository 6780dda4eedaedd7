"""
Digests for dataset files and deterministic sub-seeds.
"""

import hashlib
from pathlib import Path
from typing import Optional, Union

SeedKey = Union[str, int]
PathLike = Union[str, Path]

CHUNK_SIZE = 1 << 20


def calculate_file_hash(file_path: PathLike, algorithm: str = "sha256") -> str:
    """Hex digest of a file, read in 1 MiB chunks."""
    digest = hashlib.new(algorithm)
    with Path(file_path).open("rb") as f:
        while chunk := f.read(CHUNK_SIZE):
            digest.update(chunk)
    return digest.hexdigest()


def verify_hash(
    file_path: PathLike, expected_hash: Optional[str], algorithm: str = "sha256"
) -> bool:
    """
    Check a file against a recorded hex digest.

    The comparison ignores case and surrounding whitespace. A missing
    file or an empty or absent ``expected_hash`` never matches.
    """
    expected = (expected_hash or "").strip().lower()
    if not expected or not Path(file_path).is_file():
        return False
    return calculate_file_hash(file_path, algorithm) == expected


def derive_seed(master_seed: int, *keys: SeedKey) -> int:
    """
    Derive a sub-seed from a master seed and a key path.

    The result depends only on the arguments, never on call order, so
    items generated in parallel get the same seed as in a serial run.

    Args:
        master_seed: Root seed of the run
        keys: Path components, e.g. ("train", "mixture", 17)

    Returns:
        Non-negative 63-bit integer seed
    """
    path = "/".join([str(int(master_seed))] + [str(k) for k in keys])
    digest = hashlib.sha256(path.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
