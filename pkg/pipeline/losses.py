"""
Rarefy — GAN & Classification Losses
Class-weighted JS / Wasserstein GAN losses, the auxiliary classification
loss, and the rare-fraction estimate that drives the weights.

Sign convention: ``gan_loss`` returns the value the discriminator maximizes,
    JS:  E_real[W·log D] + (1/s)·E_fake[W·log(1−D)]
    W:   E_real[W·D]     − (1/s)·E_fake[W·D]
together with dL/dD for every real and fake sample.
"""

import warnings
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from config.settings import (
    CLIP_VALUE,
    DEFAULT_NORMALIZATION,
    DEFAULT_WEIGHT,
    GP_LAMBDA,
    LOG_CLAMP,
    N_CRITIC,
    LossFamily,
    Lipschitz,
)

# Class index inside one-hot conditions and classifier outputs.
RARE_INDEX = 0
COMMON_INDEX = 1


class WeightError(ValueError):
    pass


@dataclass
class LossConfig:
    family: str = LossFamily.WASSERSTEIN
    weight: float = DEFAULT_WEIGHT
    normalization: float = DEFAULT_NORMALIZATION
    lipschitz: str = Lipschitz.CLIP
    clip_value: float = CLIP_VALUE
    gp_lambda: float = GP_LAMBDA
    n_critic: int = 0             # 0 → family default

    def __post_init__(self):
        if self.family not in (LossFamily.JS, LossFamily.WASSERSTEIN):
            raise ValueError(f"unknown loss family '{self.family}'")
        if self.weight < 1.0:
            raise WeightError(f"weight w must be >= 1, got {self.weight}")
        if self.normalization <= 0:
            raise ValueError("normalization s must be positive")
        if self.lipschitz not in (Lipschitz.CLIP, Lipschitz.GRADIENT_PENALTY):
            raise ValueError(f"unknown Lipschitz mechanism '{self.lipschitz}'")
        if self.clip_value <= 0:
            raise ValueError("clip value must be positive")
        if self.n_critic <= 0:
            self.n_critic = N_CRITIC[self.family]


@dataclass
class GanLossResult:
    value: float
    grad_real: np.ndarray     # dL/dD(x_real)
    grad_fake: np.ndarray     # dL/dD(x_fake)


@dataclass
class ClassificationLossResult:
    value: float
    grad_real: np.ndarray     # dL/dC(x_real) over the 2 class probabilities
    grad_fake: np.ndarray


# ─────────────────────────────────────────────────────────────
# Rare fraction
# ─────────────────────────────────────────────────────────────

def estimate_alpha(labels: Sequence[bool]) -> float:
    """Maximum-likelihood x/n from rare indicators (True = rare)."""
    labels = np.asarray(labels, dtype=bool)
    if labels.size == 0:
        raise ValueError("cannot estimate the rare fraction from an empty pool")
    return float(labels.sum() / labels.size)


def alpha_variance(alpha: float, n: int) -> float:
    """Variance of the x/n estimate: α(1−α)/n."""
    if n < 1:
        raise ValueError("n must be positive")
    return alpha * (1.0 - alpha) / n


# ─────────────────────────────────────────────────────────────
# Class weights
# ─────────────────────────────────────────────────────────────

def compute_weight(is_rare: bool, w: float, alpha_hat: float) -> float:
    """W(rare) = w, W(common) = (1 − wα̂)/(1 − α̂)."""
    if w < 1.0:
        raise WeightError(f"weight w must be >= 1, got {w}")
    if w == 1.0:
        return 1.0
    if not 0.0 <= alpha_hat < 1.0 or w * alpha_hat >= 1.0:
        raise WeightError(f"w={w} needs w < 1/α̂ (α̂={alpha_hat}); common weight would be non-positive")
    if is_rare:
        return float(w)
    return (1.0 - w * alpha_hat) / (1.0 - alpha_hat)


def compute_weights(is_rare: np.ndarray, w: float, alpha_hat: float) -> np.ndarray:
    is_rare = np.asarray(is_rare, dtype=bool)
    rare_w = compute_weight(True, w, alpha_hat)
    common_w = compute_weight(False, w, alpha_hat)
    return np.where(is_rare, rare_w, common_w)


def effective_weight(w: float, alpha_hat: float) -> float:
    """
    The weight actually used for training.

    α̂ = 0, or w ≥ 1/α̂, disables weighting (w → 1) with a warning.
    """
    if w == 1.0:
        return 1.0
    if alpha_hat <= 0.0 or w * alpha_hat >= 1.0:
        warnings.warn(
            f"weighting disabled: w={w} with α̂={alpha_hat:.6g} would make the common-class weight "
            f"non-positive; using w=1",
            RuntimeWarning,
            stacklevel=2,
        )
        return 1.0
    return float(w)


def normalization_constant(w: float, alpha: float, alpha_hat: float) -> float:
    """Exact s = wα̂ + (1 − wα)(1 − α̂)/(1 − α); equals 1 when α̂ = α."""
    return w * alpha_hat + (1.0 - w * alpha) * (1.0 - alpha_hat) / (1.0 - alpha)


# ─────────────────────────────────────────────────────────────
# GAN loss
# ─────────────────────────────────────────────────────────────

def _check_d(values: np.ndarray, family: str, name: str) -> np.ndarray:
    """
    Finite outputs for every family; JS additionally needs D in [0, 1].

    The closed endpoints are accepted because a float64 sigmoid reaches
    exactly 0 or 1 for large logits. Logs are taken at max(·, LOG_CLAMP) and
    the gradient of a clamped term is zero.
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"non-finite discriminator outputs on {name} batch")
    if family == LossFamily.JS and (np.any(values < 0.0) or np.any(values > 1.0)):
        raise ValueError(f"JS loss needs D in [0, 1]; {name} batch has values outside")
    return values


def _clamped_log(x: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(x, LOG_CLAMP))


def gan_loss(
    config: LossConfig,
    d_real: np.ndarray,
    w_real: np.ndarray,
    d_fake: np.ndarray,
    w_fake: np.ndarray,
) -> GanLossResult:
    """Weighted GAN loss; ``w_real``/``w_fake`` are per-sample W(x) (ones = unweighted)."""
    d_real = _check_d(d_real, config.family, "real")
    d_fake = _check_d(d_fake, config.family, "fake")
    w_real = np.asarray(w_real, dtype=np.float64).reshape(-1)
    w_fake = np.asarray(w_fake, dtype=np.float64).reshape(-1)
    if w_real.shape != d_real.shape or w_fake.shape != d_fake.shape:
        raise ValueError("one weight per sample is required")
    inv_s = 1.0 / config.normalization
    n_r, n_f = d_real.size, d_fake.size

    if config.family == LossFamily.WASSERSTEIN:
        value = np.mean(w_real * d_real) - inv_s * np.mean(w_fake * d_fake)
        grad_real = w_real / n_r
        grad_fake = -inv_s * w_fake / n_f
    else:
        value = np.mean(w_real * _clamped_log(d_real)) + inv_s * np.mean(w_fake * _clamped_log(1.0 - d_fake))
        grad_real = np.where(d_real > LOG_CLAMP, w_real / (n_r * np.maximum(d_real, LOG_CLAMP)), 0.0)
        one_minus = 1.0 - d_fake
        grad_fake = np.where(one_minus > LOG_CLAMP, -inv_s * w_fake / (n_f * np.maximum(one_minus, LOG_CLAMP)), 0.0)

    if not np.isfinite(value):
        raise ValueError("GAN loss is not finite")
    return GanLossResult(float(value), grad_real, grad_fake)


def unweighted_gan_loss(family: str, d_real: np.ndarray, d_fake: np.ndarray) -> float:
    """Plain E_real[log D] + E_fake[log(1−D)], or E_real[D] − E_fake[D]."""
    d_real = _check_d(d_real, family, "real")
    d_fake = _check_d(d_fake, family, "fake")
    if family == LossFamily.WASSERSTEIN:
        return float(np.mean(d_real) - np.mean(d_fake))
    return float(np.mean(_clamped_log(d_real)) + np.mean(_clamped_log(1.0 - d_fake)))


# ─────────────────────────────────────────────────────────────
# Classification loss
# ─────────────────────────────────────────────────────────────

def nll_loss(probs: np.ndarray, labels: np.ndarray, name: str) -> Tuple[float, np.ndarray]:
    probs = np.asarray(probs, dtype=np.float64).reshape(-1, 2)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if probs.shape[0] != labels.shape[0]:
        raise ValueError(f"{name}: one label per classifier output is required")
    if probs.shape[0] == 0:
        return 0.0, np.zeros_like(probs)
    rows = np.arange(probs.shape[0])
    picked = probs[rows, labels]
    value = -np.mean(_clamped_log(picked))
    grad = np.zeros_like(probs)
    grad[rows, labels] = np.where(picked > LOG_CLAMP, -1.0 / (probs.shape[0] * np.maximum(picked, LOG_CLAMP)), 0.0)
    return float(value), grad


def classification_loss(
    probs_real: np.ndarray,
    labels_real: np.ndarray,
    probs_fake: np.ndarray,
    labels_fake: np.ndarray,
) -> ClassificationLossResult:
    """−E_real[log C(x, c)] − E_fake[log C(x, c)]; an empty batch contributes 0."""
    real_value, grad_real = nll_loss(probs_real, labels_real, "real")
    fake_value, grad_fake = nll_loss(probs_fake, labels_fake, "fake")
    return ClassificationLossResult(real_value + fake_value, grad_real, grad_fake)
