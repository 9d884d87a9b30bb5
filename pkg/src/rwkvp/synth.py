"""Deterministic synthetic corpus with long-range copy dependencies.

Record schema (one per line, byte-level):

    <key>:<filler>=<key>;\n

* key: 3-6 letters drawn from 'abcdefgh'
* filler: 4-20 characters drawn from '0123456789'
* the key after '=' is an exact copy of the key before ':'
* with probability 0.25 a record reuses the previous record's key, adding a
  second, longer-range repetition

Predicting the copied key after '=' requires carrying the key across the
filler gap, which is the long-range signal the temporal perspectives are
meant to exploit. Everything is a pure function of the seed, so corpora are
reproducible byte-for-byte.
"""

from __future__ import annotations

import numpy as np

KEY_ALPHABET = "abcdefgh"
FILLER_ALPHABET = "0123456789"


def generate_corpus(seed: int, n_records: int) -> bytes:
    rng = np.random.default_rng(seed)
    out = []
    prev_key = None
    for _ in range(n_records):
        if prev_key is not None and rng.random() < 0.25:
            key = prev_key
        else:
            klen = int(rng.integers(3, 7))
            key = "".join(KEY_ALPHABET[i] for i in rng.integers(0, len(KEY_ALPHABET), klen))
        flen = int(rng.integers(4, 21))
        filler = "".join(FILLER_ALPHABET[i] for i in rng.integers(0, len(FILLER_ALPHABET), flen))
        out.append(f"{key}:{filler}={key};\n")
        prev_key = key
    return "".join(out).encode("ascii")


def write_corpus(path, seed: int, n_records: int) -> None:
    with open(path, "wb") as f:
        f.write(generate_corpus(seed, n_records))
