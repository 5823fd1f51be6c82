from __future__ import annotations

import hashlib
import json
from typing import Any

import numpy as np

_MASK64 = (1 << 64) - 1


def _key_int(key: Any) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK64
    digest = hashlib.sha256(str(key).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(seed: int, *keys: Any) -> int:
    """Stable 63-bit seed derived from a run seed and a path of keys."""
    ss = np.random.SeedSequence([_key_int(seed), *(_key_int(k) for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def derive_rng(seed: int, *keys: Any) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def pad_embedding(coords, width: int = 32) -> np.ndarray:
    vec = np.zeros(width, dtype=float)
    coords = np.asarray(coords, dtype=float)
    if coords.size > width:
        raise ValueError(f"cannot embed {coords.size} coordinates into width {width}")
    vec[: coords.size] = coords
    return vec


def sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared euclidean distances, shape (len(points), len(centers)).

    Accumulates one coordinate at a time, which beats a 3-D broadcast when
    the dimension is small.
    """
    out = np.zeros((points.shape[0], centers.shape[0]))
    for j in range(points.shape[1]):
        diff = points[:, j, None] - centers[None, :, j]
        out += diff * diff
    return out
