"""Synthetic corpora with planted sequential structure."""

from __future__ import annotations

import numpy as np

from .corpus import Dataset, RawEvent


def planted_chains(num_users: int = 2000, num_chains: int = 10, chain_len: int = 3,
                   chains_per_user: tuple = (3, 5), noise_prob: float = 0.3,
                   seed: int = 0) -> tuple[Dataset, np.ndarray]:
    """Users replay randomly chosen item chains, with random noise items between chains.

    The catalogue is exactly the chain items, so item popularity carries no
    signal. Every sequence ends with a complete chain: the validation item is
    the second element of that chain and the test item its last.

    Returns the dataset and the (num_chains, chain_len) chain table.
    """
    rng = np.random.default_rng(seed)
    num_items = num_chains * chain_len
    chains = rng.permutation(num_items).reshape(num_chains, chain_len)
    lo, hi = chains_per_user
    seqs = []
    for _ in range(num_users):
        seq: list = []
        n = int(rng.integers(lo, hi + 1))
        for c in range(n):
            if c and rng.random() < noise_prob:
                seq.append(int(rng.integers(num_items)))
            seq.extend(int(i) for i in chains[rng.integers(num_chains)])
        seqs.append(seq)
    return Dataset.from_sequences(seqs, num_items), chains


def to_events(d: Dataset, start: int = 1_000_000) -> list:
    """Flatten a dataset to raw events with strictly increasing timestamps per user."""
    return [RawEvent(d.user_keys[u], d.item_keys[i], start + n)
            for u, s in enumerate(d.sequences) for n, i in enumerate(s.tolist())]
