"""Name normalization and similarity shared by entity resolution and scoring.

Normalization folds case, whitespace and decorative punctuation (quotes,
brackets, trailing periods) but keeps interior punctuation intact: an IP
address or registry key must survive normalization unchanged apart from case.
"""

from __future__ import annotations

import re
import unicodedata
from difflib import SequenceMatcher

_QUOTE_MAP = str.maketrans(
    {
        "\u2018": "'",  # left single quote
        "\u2019": "'",  # right single quote
        "\u201c": '"',  # left double quote
        "\u201d": '"',  # right double quote
        "\u2013": "-",  # en dash
        "\u2014": "-",  # em dash
    }
)
_EDGE_PUNCT = "\"'`([{<>}]).,;:!?"


def normalize_name(name: str) -> str:
    folded = unicodedata.normalize("NFKC", name).translate(_QUOTE_MAP).casefold()
    folded = re.sub(r"\s+", " ", folded).strip()
    return folded.strip(_EDGE_PUNCT).strip()


def similarity(a: str, b: str) -> float:
    """Normalized similarity in [0, 1] over normalized names."""
    na, nb = normalize_name(a), normalize_name(b)
    if not na or not nb:
        return 0.0
    if na == nb:
        return 1.0
    return SequenceMatcher(None, na, nb).ratio()


def max_cardinality_matching(
    n_left: int, n_right: int, edges: set[tuple[int, int]]
) -> list[tuple[int, int]]:
    """Maximum-cardinality bipartite matching via augmenting paths.

    Instance sizes here are entity lists per passage, so the cubic worst case
    is irrelevant; what matters is that the match count is provably optimal,
    which keeps threshold-based fuzzy scoring order-independent.
    """
    adjacency: dict[int, list[int]] = {i: [] for i in range(n_left)}
    for i, j in edges:
        adjacency[i].append(j)
    for i in adjacency:
        adjacency[i].sort()

    match_right: dict[int, int] = {}

    def try_assign(i: int, visited: set[int]) -> bool:
        for j in adjacency[i]:
            if j in visited:
                continue
            visited.add(j)
            if j not in match_right or try_assign(match_right[j], visited):
                match_right[j] = i
                return True
        return False

    for i in range(n_left):
        try_assign(i, set())
    return sorted((i, j) for j, i in match_right.items())
