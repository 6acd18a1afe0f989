"""
Rarefy — Active Learning Selection
Chooses which candidate packets spend labeling budget.

Least-confident picks the candidates whose classifier max-class probability
is smallest; most-confident (the ALCG-style comparison) picks the largest;
random is uniform without replacement. Ties keep candidate order.
"""

from typing import Callable, Optional

import numpy as np

from config.settings import SelectionPolicy


class SelectionError(ValueError):
    pass


def confidence_scores(probs: np.ndarray) -> np.ndarray:
    """max{C(x, rare), C(x, common)} per candidate."""
    return np.max(np.asarray(probs, dtype=np.float64), axis=1)


def margin_scores(probs: np.ndarray) -> np.ndarray:
    """Gap between the top two class probabilities."""
    ordered = np.sort(np.asarray(probs, dtype=np.float64), axis=1)
    return ordered[:, -1] - ordered[:, -2]


def entropy_scores(probs: np.ndarray) -> np.ndarray:
    ordered = np.sort(np.asarray(probs, dtype=np.float64), axis=1)[:, ::-1]
    safe = np.where(ordered > 0.0, ordered, 1.0)
    return -np.sum(ordered * np.log(safe), axis=1)


def select_indices(
    probs: Optional[np.ndarray],
    n_candidates: int,
    k: int,
    policy: str,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Indices of the k selected candidates, in selection order."""
    if k > n_candidates:
        raise SelectionError(f"cannot select {k} of {n_candidates} candidates")
    if k < 0:
        raise SelectionError("k must be non-negative")

    if policy == SelectionPolicy.RANDOM:
        if rng is None:
            raise SelectionError("random selection needs an rng")
        return rng.choice(n_candidates, size=k, replace=False)

    if probs is None:
        raise SelectionError(f"policy '{policy}' needs classifier probabilities")
    confidence = confidence_scores(probs)
    if confidence.shape[0] != n_candidates:
        raise SelectionError("one probability row per candidate is required")

    if policy == SelectionPolicy.LEAST_CONFIDENT:
        order = np.argsort(confidence, kind="stable")
    elif policy == SelectionPolicy.MOST_CONFIDENT:
        order = np.argsort(-confidence, kind="stable")
    else:
        raise SelectionError(f"unknown selection policy '{policy}'")
    return order[:k]


def select_for_labeling(
    classifier: Optional[Callable[[np.ndarray], np.ndarray]],
    candidates: np.ndarray,
    k: int,
    policy: str,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    Pick k packets from ``candidates`` (an (n, n_fields) array).

    ``classifier`` maps packets to (n, 2) class probabilities; it is not
    called for the random policy.
    """
    candidates = np.asarray(candidates)
    probs = None
    if policy != SelectionPolicy.RANDOM:
        if classifier is None:
            raise SelectionError(f"policy '{policy}' needs a classifier")
        probs = classifier(candidates)
    return candidates[select_indices(probs, len(candidates), k, policy, rng)]
