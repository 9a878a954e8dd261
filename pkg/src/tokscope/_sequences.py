"""Base-N enumeration of token sequences."""

import itertools

import numpy as np


def all_sequences(n_tokens, length):
    """All sequences of ``length`` tokens as an int array, in base-N order."""
    if length == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(itertools.product(range(n_tokens), repeat=length)), dtype=np.int64)


def sequence_index(tokens, n_tokens):
    idx = 0
    for t in tokens:
        idx = idx * n_tokens + int(t)
    return idx
