"""Deterministic random substreams.

Every random draw in the simulator comes from a substream derived from a
hashable key tuple (seed, slot, phase, entity...).  Draws are therefore
reproducible, order-independent, and insensitive to which other draws happen
in the same slot: adding or removing consumers (e.g. disabling recovery
paths) never perturbs the outcomes of unrelated entities.

Two flavours are provided:

* ``substream(*key)`` -> ``random.Random`` seeded from a BLAKE2b digest of
  the key.  Used for low-volume draws (pair sampling, swap decisions).
* ``bernoulli_array(key, probs)`` -> numpy bool array, one Bernoulli draw per
  index, generated by a Philox counter-based generator keyed from the same
  digest.  Index position acts as the entity counter, so draw i is a pure
  function of (key, i).  Used for bulk per-channel link attempts.
"""

from __future__ import annotations

import hashlib
import random
import struct

import numpy as np

_PACK = struct.Struct("<q")


def _digest(key: tuple) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    for part in key:
        if isinstance(part, str):
            h.update(b"s")
            h.update(part.encode())
        elif isinstance(part, (int, np.integer)):
            h.update(b"i")
            h.update(_PACK.pack(int(part)))
        else:
            raise TypeError(f"unsupported key part {part!r}")
        h.update(b"\x00")
    return h.digest()


def substream(*key: int | str) -> random.Random:
    """A fresh ``random.Random`` deterministically derived from ``key``."""
    return random.Random(int.from_bytes(_digest(key), "little"))


def uniform(*key: int | str) -> float:
    """Single U[0,1) draw for ``key``."""
    return substream(*key).random()


def bernoulli(p: float, *key: int | str) -> bool:
    return substream(*key).random() < p


def generator(*key: int | str) -> np.random.Generator:
    """Counter-based numpy generator keyed by ``key``."""
    seed = np.frombuffer(_digest(key), dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=seed[0] ^ (seed[1] << np.uint64(1))))


def bernoulli_array(key: tuple, probs: np.ndarray) -> np.ndarray:
    """One Bernoulli draw per entry of ``probs``; draw i depends only on
    (key, i), never on how many draws are consumed elsewhere."""
    gen = generator(*key)
    return gen.random(len(probs)) < probs
