"""Canonical enumeration of UE pairs.

Every per-pair quantity in the toolkit (channel parameter blocks, FIM
blocks, measurement vectors) is laid out in the order returned here, so
the functions below are the single source of truth for indexing.
"""

from __future__ import annotations


def ordered_pairs(n_ues: int) -> list[tuple[int, int]]:
    """All (transmitter, receiver) pairs: (0,1), (0,2), ..., (K-1,K-2)."""
    return [(i, j) for i in range(n_ues) for j in range(n_ues) if j != i]


def unordered_pairs(n_ues: int) -> list[tuple[int, int]]:
    """All pairs {i, j} with i < j: (0,1), (0,2), ..., (K-2,K-1)."""
    return [(i, j) for i in range(n_ues) for j in range(i + 1, n_ues)]


def ordered_pair_index(n_ues: int) -> dict[tuple[int, int], int]:
    """Position of each ordered pair in the canonical layout."""
    return {pair: k for k, pair in enumerate(ordered_pairs(n_ues))}
