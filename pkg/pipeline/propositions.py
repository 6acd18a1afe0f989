"""
Rarefy — Objective Checks on Small Discrete Spaces
Exact-expectation verification of two properties the training procedure
relies on:

  * Weighted-loss equivalence: the class-weighted GAN losses on (p, p̂)
    equal the plain GAN losses on the reweighted mixtures (q, q̂), for both
    loss families, when the exact normalization s is used.
  * Unlabeled optimum: with disjoint rare/common supports, minimizing
    d(p̂, p) plus the best achievable classification loss recovers p_r even
    when the labeled distribution is biased.

All expectations are sums over an explicit support of at most 64 points.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial.distance import jensenshannon
from scipy.special import rel_entr

from config.settings import LossFamily
from pipeline.losses import RARE_INDEX, compute_weight, normalization_constant

MAX_SUPPORT = 64


class SupportOverlapError(ValueError):
    pass


@dataclass
class DiscreteInstance:
    p_rare: np.ndarray
    p_common: np.ndarray
    alpha: float
    rare_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.p_rare = np.asarray(self.p_rare, dtype=np.float64)
        self.p_common = np.asarray(self.p_common, dtype=np.float64)
        if self.p_rare.ndim != 1 or self.p_rare.shape != self.p_common.shape:
            raise ValueError("p_rare and p_common must be vectors over the same support")
        if not 1 <= self.p_rare.size <= MAX_SUPPORT:
            raise ValueError(f"support must have 1..{MAX_SUPPORT} points, got {self.p_rare.size}")
        for name, dist in (("p_rare", self.p_rare), ("p_common", self.p_common)):
            if np.any(dist < 0) or not np.isclose(dist.sum(), 1.0, atol=1e-12):
                raise ValueError(f"{name} must be a probability vector")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")

        if self.rare_mask is None:
            self.rare_mask = self.p_rare > 0
        self.rare_mask = np.asarray(self.rare_mask, dtype=bool)
        if np.any((self.p_rare > 0) & (self.p_common > 0)):
            raise SupportOverlapError("rare and common distributions share support points")
        if np.any(self.p_rare[~self.rare_mask] > 0) or np.any(self.p_common[self.rare_mask] > 0):
            raise SupportOverlapError("rare mask disagrees with the supports of p_rare / p_common")

    @property
    def size(self) -> int:
        return self.p_rare.size

    @property
    def mixture(self) -> np.ndarray:
        return self.alpha * self.p_rare + (1.0 - self.alpha) * self.p_common


def random_instance(
    rng: np.random.Generator,
    support: int = 6,
    n_rare: int = 2,
    alpha: Optional[float] = None,
) -> DiscreteInstance:
    if not 1 <= n_rare < support:
        raise ValueError("need at least one rare and one common point")
    mask = np.zeros(support, dtype=bool)
    mask[rng.choice(support, size=n_rare, replace=False)] = True
    p_rare = np.zeros(support)
    p_common = np.zeros(support)
    p_rare[mask] = rng.dirichlet(np.ones(n_rare))
    p_common[~mask] = rng.dirichlet(np.ones(support - n_rare))
    if alpha is None:
        alpha = float(rng.uniform(0.05, 0.5))
    return DiscreteInstance(p_rare, p_common, alpha, mask)


# ─────────────────────────────────────────────────────────────
# Weighted-loss equivalence
# ─────────────────────────────────────────────────────────────

def _terms(family: str, d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-point integrands for the real and fake expectations."""
    if family == LossFamily.WASSERSTEIN:
        return d, -d
    return np.log(d), np.log(1.0 - d)


def weight_vector(instance: DiscreteInstance, w: float) -> np.ndarray:
    """W(x) on every support point, using the true rare fraction."""
    rare_w = compute_weight(True, w, instance.alpha)
    common_w = compute_weight(False, w, instance.alpha)
    return np.where(instance.rare_mask, rare_w, common_w)


def reweighted_mixtures(instance: DiscreteInstance, p_hat: np.ndarray, w: float) -> Tuple[np.ndarray, np.ndarray, float]:
    """(q, q̂, s) for a generated distribution p̂ over the support."""
    p_hat = np.asarray(p_hat, dtype=np.float64)
    alpha_hat = float(p_hat[instance.rare_mask].sum())
    s = normalization_constant(w, instance.alpha, alpha_hat)
    q = w * instance.alpha * instance.p_rare + (1.0 - w * instance.alpha) * instance.p_common
    q_hat = p_hat * weight_vector(instance, w) / s
    return q, q_hat, s


def weighted_loss_exact(family: str, d: np.ndarray, instance: DiscreteInstance, p_hat: np.ndarray, w: float, s: float) -> float:
    real, fake = _terms(family, np.asarray(d, dtype=np.float64))
    weights = weight_vector(instance, w)
    return float(np.sum(instance.mixture * weights * real) + np.sum(p_hat * weights * fake) / s)


def unweighted_loss_exact(family: str, d: np.ndarray, p_real: np.ndarray, p_fake: np.ndarray) -> float:
    real, fake = _terms(family, np.asarray(d, dtype=np.float64))
    return float(np.sum(p_real * real) + np.sum(p_fake * fake))


def check_weighted_equivalence(
    instance: DiscreteInstance,
    w: float,
    rng: np.random.Generator,
    trials: int = 20,
) -> dict:
    """Largest |weighted(p, p̂) − plain(q, q̂)| over random D and p̂, per family."""
    errors = {LossFamily.JS: 0.0, LossFamily.WASSERSTEIN: 0.0}
    for _ in range(trials):
        p_hat = rng.dirichlet(np.ones(instance.size))
        q, q_hat, s = reweighted_mixtures(instance, p_hat, w)
        d_prob = rng.uniform(0.01, 0.99, instance.size)
        d_critic = rng.normal(0.0, 1.0, instance.size)
        for family, d in ((LossFamily.JS, d_prob), (LossFamily.WASSERSTEIN, d_critic)):
            lhs = weighted_loss_exact(family, d, instance, p_hat, w, s)
            rhs = unweighted_loss_exact(family, d, q, q_hat)
            errors[family] = max(errors[family], abs(lhs - rhs))
    return errors


# ─────────────────────────────────────────────────────────────
# Unlabeled optimum
# ─────────────────────────────────────────────────────────────

@dataclass
class Candidate:
    name: str
    p_rare: np.ndarray       # generated distribution under condition "rare"
    p_common: np.ndarray     # under condition "common"
    alpha: float             # probability of the rare condition

    @property
    def joint(self) -> np.ndarray:
        """(2, n) mass over (label, point); row RARE_INDEX is the rare condition."""
        rows = [None, None]
        rows[RARE_INDEX] = self.alpha * self.p_rare
        rows[1 - RARE_INDEX] = (1.0 - self.alpha) * self.p_common
        return np.vstack(rows)

    @property
    def marginal(self) -> np.ndarray:
        return self.joint.sum(axis=0)


def biased_labeled_joint(instance: DiscreteInstance, bias: np.ndarray) -> np.ndarray:
    """Labeled (label, point) distribution ∝ p(x)·bias(x), labels from the true classes."""
    bias = np.asarray(bias, dtype=np.float64)
    if np.any(bias <= 0):
        raise ValueError("labeled distribution must cover every support point")
    marginal = instance.mixture * bias
    marginal = marginal / marginal.sum()
    joint = np.zeros((2, instance.size))
    joint[RARE_INDEX] = np.where(instance.rare_mask, marginal, 0.0)
    joint[1 - RARE_INDEX] = np.where(instance.rare_mask, 0.0, marginal)
    return joint


def best_classification_loss(labeled_joint: np.ndarray, generated_joint: np.ndarray) -> float:
    """
    min over all classifiers C of −E_labeled[log C(x, c)] − E_generated[log C(x, c)].

    The pointwise minimizer is C(x, c) ∝ labeled(c, x) + generated(c, x).
    """
    mass = labeled_joint + generated_joint
    total = np.broadcast_to(mass.sum(axis=0), mass.shape)
    return float(-np.sum(rel_entr(mass, total)))


def js_divergence(p: np.ndarray, q: np.ndarray) -> float:
    distance = jensenshannon(p, q)
    # rounding can drive the inner sum slightly negative (NaN distance) for p ≈ q
    return float(distance ** 2) if np.isfinite(distance) else 0.0


def combined_objective(instance: DiscreteInstance, candidate: Candidate, labeled_joint: np.ndarray) -> float:
    distance = js_divergence(candidate.marginal, instance.mixture)
    return float(distance + best_classification_loss(labeled_joint, candidate.joint))


def candidate_family(instance: DiscreteInstance, labeled_joint: np.ndarray, rng: np.random.Generator) -> List[Candidate]:
    """The true pair first, then corrupted variants."""
    mask = instance.rare_mask
    true = Candidate("true", instance.p_rare, instance.p_common, instance.alpha)
    family = [true]

    # rare conditional copied from the biased labeled set
    labeled_rare = labeled_joint[RARE_INDEX] / labeled_joint[RARE_INDEX].sum()
    family.append(Candidate("labeled-rare", labeled_rare, instance.p_common, instance.alpha))

    # labeled distribution used as the target for both conditions
    labeled_common = labeled_joint[1 - RARE_INDEX] / labeled_joint[1 - RARE_INDEX].sum()
    labeled_alpha = float(labeled_joint[RARE_INDEX].sum())
    family.append(Candidate("labeled-mixture", labeled_rare, labeled_common, labeled_alpha))

    # rare condition leaks onto a common point; marginal still equals p
    leak_point = int(np.flatnonzero(~mask)[0])
    ratio = instance.alpha / (1.0 - instance.alpha)
    eps = min(0.5, 0.5 * instance.p_common[leak_point] / ratio)
    leak = np.zeros(instance.size)
    leak[leak_point] = 1.0
    family.append(Candidate(
        "label-leak",
        (1.0 - eps) * instance.p_rare + eps * leak,
        instance.p_common - ratio * eps * leak + ratio * eps * instance.p_rare,
        instance.alpha,
    ))

    # wrong rare fraction
    family.append(Candidate("alpha-shift", instance.p_rare, instance.p_common, min(0.95, 2.0 * instance.alpha)))

    for i in range(3):
        family.append(Candidate(
            f"random-{i}",
            rng.dirichlet(np.ones(instance.size)),
            rng.dirichlet(np.ones(instance.size)),
            float(rng.uniform(0.05, 0.95)),
        ))

    # drop variants that coincide with the true pair on this instance
    return [true] + [c for c in family[1:] if not np.allclose(c.joint, true.joint, atol=1e-12)]


def check_unlabeled_optimum(
    instance: DiscreteInstance,
    labeled_joint: np.ndarray,
    rng: np.random.Generator,
) -> dict:
    family = candidate_family(instance, labeled_joint, rng)
    objectives = np.asarray([combined_objective(instance, c, labeled_joint) for c in family])
    best = int(np.argmin(objectives))
    others = objectives[1:]
    return {
        "argmin": family[best].name,
        "true_objective": float(objectives[0]),
        "runner_up": float(others.min()) if others.size else float("inf"),
        "objectives": {c.name: float(v) for c, v in zip(family, objectives)},
        "ok": bool(np.all(others > objectives[0])),
    }


# ─────────────────────────────────────────────────────────────
# Report
# ─────────────────────────────────────────────────────────────

def verify_propositions(
    instance: DiscreteInstance,
    w: float,
    rng: np.random.Generator,
    trials: int = 20,
    biases: int = 3,
    tolerance: float = 1e-9,
) -> dict:
    """Run both checks on one instance; ``report['ok']`` is True when both hold."""
    errors = check_weighted_equivalence(instance, w, rng, trials)
    equivalence_ok = all(e <= tolerance for e in errors.values())

    optimum = []
    for _ in range(biases):
        bias = rng.uniform(0.1, 10.0, instance.size)
        optimum.append(check_unlabeled_optimum(instance, biased_labeled_joint(instance, bias), rng))

    return {
        "support": instance.size,
        "alpha": instance.alpha,
        "w": w,
        "weighted_equivalence": {**errors, "ok": equivalence_ok},
        "unlabeled_optimum": optimum,
        "ok": equivalence_ok and all(r["ok"] for r in optimum),
    }
