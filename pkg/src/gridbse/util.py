"""Shared helpers: reproducible RNG substreams and canonical JSON hashing."""
from __future__ import annotations

import hashlib
import json

import numpy as np


def substream(seed: int, *keys) -> np.random.Generator:
    """Return a Generator for an independent, scheduling-invariant stream.

    The stream is keyed by the base seed plus any mix of ints and strings,
    so sample k of a generation run always sees the same draws no matter
    how work is split across workers.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        if isinstance(key, (int, np.integer)):
            entropy.append(int(key) & 0xFFFFFFFFFFFFFFFF)
        else:
            digest = hashlib.sha256(str(key).encode("utf-8")).digest()
            entropy.append(int.from_bytes(digest[:8], "little"))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed: int, *keys) -> int:
    """Fold namespace keys into a fresh 63-bit integer seed.

    Used where an API takes a plain integer seed (training set generation,
    optimizer shuffling) but the caller wants per-stage independence.
    """
    material = ":".join([str(int(seed))] + [str(k) for k in keys])
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def canonical_json(obj) -> str:
    """Serialize to JSON with sorted keys and round-trippable floats."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """sha256 of the canonical JSON form, used to stamp artifacts."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()
