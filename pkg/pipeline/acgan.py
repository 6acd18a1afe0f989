"""
Rarefy — Conditional GAN Networks
Generator G(z ⊕ c), and a discriminator D and classifier C sharing every
hidden layer (one trunk, two linear heads).

The generator emits per-field softmax probabilities; these soft vectors are
fed straight to D and C during training and discretized only when sampling.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import LOG_CLAMP, LossFamily
from engine.dense_net import DenseNet, ForwardCache, backward, forward
from pipeline.losses import COMMON_INDEX, RARE_INDEX, LossConfig, nll_loss
from pipeline.schema import PacketSchema

NET_NAMES = ("generator", "trunk", "d_head", "c_head")


@dataclass
class ACGANNets:
    generator: DenseNet
    trunk: DenseNet
    d_head: DenseNet
    c_head: DenseNet

    @property
    def latent_dim(self) -> int:
        return self.generator.input_dim - 2

    def critic_nets(self) -> Tuple[DenseNet, DenseNet, DenseNet]:
        return self.trunk, self.d_head, self.c_head

    def critic_params(self) -> List[np.ndarray]:
        return [p for net in self.critic_nets() for p in net.params()]

    def set_critic_params(self, params: Sequence[np.ndarray]):
        start = 0
        for net in self.critic_nets():
            n = len(net.params())
            net.set_params(params[start:start + n])
            start += n

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in NET_NAMES}

    @classmethod
    def from_dict(cls, nets: dict) -> "ACGANNets":
        missing = [n for n in NET_NAMES if n not in nets]
        if missing:
            raise ValueError(f"checkpoint lacks networks: {', '.join(missing)}")
        return cls(**{name: nets[name] for name in NET_NAMES})


def build_nets(
    schema: PacketSchema,
    latent_dim: int,
    hidden: Sequence[int],
    family: str,
    rng: np.random.Generator,
    hidden_activation: str = "relu",
    temperature: float = 1.0,
) -> ACGANNets:
    hidden = list(hidden)
    if not hidden:
        raise ValueError("at least one hidden layer is required")
    acts = [hidden_activation] * len(hidden)
    generator = DenseNet.build(
        [latent_dim + 2, *hidden, schema.width],
        acts + ["grouped-softmax"],
        rng,
        groups=schema.cardinalities,
        temperature=temperature,
    )
    trunk = DenseNet.build([schema.width, *hidden], acts, rng)
    d_head = DenseNet.build([hidden[-1], 1], ["sigmoid" if family == LossFamily.JS else "identity"], rng)
    c_head = DenseNet.build([hidden[-1], 2], ["grouped-softmax"], rng, groups=(2,))
    return ACGANNets(generator, trunk, d_head, c_head)


# ─────────────────────────────────────────────────────────────
# Critic (D + C on a shared trunk)
# ─────────────────────────────────────────────────────────────

@dataclass
class CriticPass:
    d: np.ndarray            # (n,)
    probs: np.ndarray        # (n, 2)
    trunk_cache: ForwardCache
    d_cache: ForwardCache
    c_cache: ForwardCache


def critic_forward(nets: ACGANNets, x: np.ndarray) -> CriticPass:
    h, trunk_cache = forward(nets.trunk, x)
    d, d_cache = forward(nets.d_head, h)
    probs, c_cache = forward(nets.c_head, h)
    return CriticPass(d[:, 0], probs, trunk_cache, d_cache, c_cache)


def _zero_grads(net: DenseNet) -> List[np.ndarray]:
    return [np.zeros_like(p) for p in net.params()]


def critic_backward(
    nets: ACGANNets,
    cp: CriticPass,
    grad_d: Optional[np.ndarray] = None,
    grad_probs: Optional[np.ndarray] = None,
) -> Tuple[List[np.ndarray], np.ndarray]:
    """Gradients for [trunk..., d_head..., c_head...] and dL/dx."""
    n = cp.d.shape[0]
    grad_h = np.zeros((n, nets.trunk.output_dim))
    if grad_d is not None:
        d_grads, gh = backward(nets.d_head, cp.d_cache, np.asarray(grad_d, dtype=np.float64).reshape(n, 1))
        grad_h = grad_h + gh
    else:
        d_grads = _zero_grads(nets.d_head)
    if grad_probs is not None:
        c_grads, gh = backward(nets.c_head, cp.c_cache, grad_probs)
        grad_h = grad_h + gh
    else:
        c_grads = _zero_grads(nets.c_head)
    trunk_grads, grad_x = backward(nets.trunk, cp.trunk_cache, grad_h)
    return trunk_grads + d_grads + c_grads, grad_x


def classify(nets: ACGANNets, x: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Classifier probabilities (n, 2) for encoded inputs, evaluated in chunks."""
    out = []
    for start in range(0, x.shape[0], chunk):
        h, _ = forward(nets.trunk, x[start:start + chunk])
        probs, _ = forward(nets.c_head, h)
        out.append(probs)
    return np.concatenate(out, axis=0) if out else np.zeros((0, 2))


def surrogate_is_rare(probs: np.ndarray) -> np.ndarray:
    """Argmax of the classifier output; a tie counts as rare (lowest index)."""
    return np.argmax(probs, axis=1) == RARE_INDEX


def sum_grads(*grad_lists: List[np.ndarray]) -> List[np.ndarray]:
    return [sum(parts) for parts in zip(*grad_lists)]


# ─────────────────────────────────────────────────────────────
# Generator
# ─────────────────────────────────────────────────────────────

def condition_onehot(cond: np.ndarray) -> np.ndarray:
    cond = np.asarray(cond, dtype=np.int64).reshape(-1)
    out = np.zeros((cond.shape[0], 2))
    out[np.arange(cond.shape[0]), cond] = 1.0
    return out


def generate(
    nets: ACGANNets,
    z: np.ndarray,
    cond: np.ndarray,
    logit_noise: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, ForwardCache]:
    return forward(nets.generator, np.hstack([z, condition_onehot(cond)]), logit_noise=logit_noise)


def draw_conditions(rng: np.random.Generator, n: int, p_rare: float) -> np.ndarray:
    return np.where(rng.random(n) < p_rare, RARE_INDEX, COMMON_INDEX)


def generator_objective(
    nets: ACGANNets,
    config: LossConfig,
    z: np.ndarray,
    cond: np.ndarray,
    weight_fn: Callable[[np.ndarray], np.ndarray],
    cls_weight: float = 1.0,
    logit_noise: Optional[np.ndarray] = None,
) -> Tuple[float, List[np.ndarray]]:
    """
    Generator loss and its gradients w.r.t. generator parameters.

    Adversarial term (weights held constant):
        W:  −(1/s)·E[W·D(G(z, c))]
        JS: −(1/s)·E[W·log D(G(z, c))]     (non-saturating form)
    plus ``cls_weight``·(−E[log C(G(z, c), c)]) when cls_weight > 0.
    ``weight_fn`` maps classifier probabilities on the fakes to per-sample W(x).
    """
    x, g_cache = generate(nets, z, cond, logit_noise)
    cp = critic_forward(nets, x)
    weights = np.asarray(weight_fn(cp.probs), dtype=np.float64)
    n = x.shape[0]
    inv_s = 1.0 / config.normalization

    if config.family == LossFamily.WASSERSTEIN:
        loss = -inv_s * np.mean(weights * cp.d)
        grad_d = -inv_s * weights / n
    else:
        safe = np.maximum(cp.d, LOG_CLAMP)
        loss = -inv_s * np.mean(weights * np.log(safe))
        grad_d = np.where(cp.d > LOG_CLAMP, -inv_s * weights / (n * safe), 0.0)

    grad_probs = None
    if cls_weight > 0:
        cls_value, grad_probs = nll_loss(cp.probs, cond, "fake")
        loss += cls_weight * cls_value
        grad_probs = cls_weight * grad_probs

    _, grad_x = critic_backward(nets, cp, grad_d, grad_probs)
    g_grads, _ = backward(nets.generator, g_cache, grad_x)
    return float(loss), g_grads


# ─────────────────────────────────────────────────────────────
# Gradient penalty
# ─────────────────────────────────────────────────────────────

def gradient_penalty(
    nets: ACGANNets,
    x_real: np.ndarray,
    x_fake: np.ndarray,
    rng: np.random.Generator,
    lam: float,
    h: float,
) -> Tuple[float, List[np.ndarray]]:
    """
    λ·E[(‖∇ₓD(x̂)‖ − 1)²] on random interpolates, and its critic-parameter gradient.

    The parameter gradient needs ∂/∂θ of ∇ₓD. With vᵢ = ∂penalty/∂(∇ₓD(x̂ᵢ))
    held fixed that is ∂/∂θ Σᵢ vᵢ·∇ₓD(x̂ᵢ), taken as the central difference
    [∇θD(x̂ + h·v̂) − ∇θD(x̂ − h·v̂)]·‖v‖/(2h) along unit directions v̂ᵢ.
    """
    n = min(x_real.shape[0], x_fake.shape[0])
    eps = rng.random((n, 1))
    x_hat = eps * x_real[:n] + (1.0 - eps) * x_fake[:n]

    cp = critic_forward(nets, x_hat)
    _, grad_x = critic_backward(nets, cp, np.ones(n))
    norms = np.linalg.norm(grad_x, axis=1)
    value = lam * np.mean((norms - 1.0) ** 2)

    safe_norms = np.maximum(norms, 1e-12)
    v = (2.0 * lam / n) * ((norms - 1.0) / safe_norms)[:, None] * grad_x
    v_norm = np.linalg.norm(v, axis=1)
    direction = v / np.maximum(v_norm, 1e-12)[:, None]
    scale = v_norm / (2.0 * h)

    cp_plus = critic_forward(nets, x_hat + h * direction)
    grads_plus, _ = critic_backward(nets, cp_plus, scale)
    cp_minus = critic_forward(nets, x_hat - h * direction)
    grads_minus, _ = critic_backward(nets, cp_minus, -scale)
    return float(value), sum_grads(grads_plus, grads_minus)
