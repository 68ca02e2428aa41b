"""Dense policy/value network, actor-critic loss gradients and shared RMSProp.

Everything here is a pure function of its arguments. Parameters live in one
flat float64 vector whose layout is fixed by :class:`NetworkSpec`:
for every hidden layer, then the policy head, then the value head, the
weight matrix (``fan_in x fan_out``, row-major) is followed by its bias.
Gradients are derived by hand; the test-suite checks them against central
finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import InvalidInput, NonFiniteGradient


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    n_actions: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise InvalidInput(f"layer widths must be >= 1: {self}")
        if self.n_actions < 2:
            raise InvalidInput(f"n_actions must be >= 2, got {self.n_actions}")

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) of every dense layer in parameter order."""
        dims = (self.input_dim, *self.hidden_dims)
        shapes = list(zip(dims[:-1], dims[1:]))
        shapes.append((dims[-1], self.n_actions))
        shapes.append((dims[-1], 1))
        return shapes

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes())


@dataclass(frozen=True)
class ModelState:
    """Immutable parameter snapshot. ``theta`` is flagged read-only."""

    theta: np.ndarray
    version: int = 0


@dataclass(frozen=True)
class RmsState:
    g: np.ndarray

    @classmethod
    def zeros_like(cls, model: ModelState) -> "RmsState":
        g = np.zeros_like(model.theta)
        g.setflags(write=False)
        return cls(g)


@dataclass(frozen=True)
class Hyperparams:
    gamma: float = 0.99
    t_max: int = 5
    beta: float = 0.01
    eps_log: float = 1e-6
    eta: float = 3e-4
    alpha: float = 0.99
    eps_rms: float = 1e-8
    value_loss_weight: float = 0.5
    clip_norm: float | None = None
    clip_rewards: bool = False

    def __post_init__(self) -> None:
        checks = {
            "gamma": 0.0 < self.gamma <= 1.0,
            "t_max": self.t_max >= 1,
            "beta": self.beta >= 0.0,
            "eps_log": self.eps_log > 0.0,
            "eta": self.eta > 0.0,
            "alpha": 0.0 < self.alpha < 1.0,
            "eps_rms": self.eps_rms > 0.0,
            "value_loss_weight": self.value_loss_weight >= 0.0,
            "clip_norm": self.clip_norm is None or self.clip_norm > 0.0,
        }
        bad = [name for name, ok in checks.items() if not ok]
        if bad:
            raise InvalidInput(f"hyperparameters out of range: {', '.join(bad)}")


@dataclass(frozen=True)
class GradientPacket:
    dtheta: np.ndarray
    policy_loss: float
    value_loss: float
    entropy: float
    batch_size: int


class TrainingBatch(Protocol):
    states: np.ndarray
    actions: np.ndarray
    returns: np.ndarray


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def init_model(spec: NetworkSpec, seed: int) -> ModelState:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero, version 0."""
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in spec.layer_shapes():
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return ModelState(_frozen(np.concatenate(chunks)), 0)


def unpack(theta: np.ndarray, spec: NetworkSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat parameter vector into (W, b) views, one pair per layer."""
    if theta.shape != (spec.n_params,):
        raise InvalidInput(f"theta has shape {theta.shape}, expected ({spec.n_params},)")
    layers = []
    offset = 0
    for fan_in, fan_out in spec.layer_shapes():
        w = theta[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = theta[offset:offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _as_states(states, spec: NetworkSpec) -> np.ndarray:
    x = np.asarray(states, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise InvalidInput(f"states must be (B, {spec.input_dim}), got {np.shape(states)}")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("states contain non-finite values")
    return x


def _forward_cache(theta: np.ndarray, spec: NetworkSpec, x: np.ndarray):
    layers = unpack(theta, spec)
    *hidden, (wp, bp), (wv, bv) = layers
    pre = []
    acts = [x]
    h = x
    for w, b in hidden:
        z = h @ w + b
        h = np.maximum(z, 0.0)
        pre.append(z)
        acts.append(h)
    policies = softmax(h @ wp + bp)
    values = (h @ wv + bv)[:, 0]
    return layers, pre, acts, policies, values


def forward(model: ModelState, spec: NetworkSpec, states) -> tuple[np.ndarray, np.ndarray]:
    """Batched forward pass returning ``(policies (B, n_actions), values (B,))``."""
    x = _as_states(states, spec)
    _, _, _, policies, values = _forward_cache(model.theta, spec, x)
    return policies, values


def head_gradients(
    policies: np.ndarray,
    values: np.ndarray,
    actions: np.ndarray,
    returns: np.ndarray,
    hyper: Hyperparams,
):
    """Loss terms and output-layer gradients for a batch.

    Returns ``(dlogits, dvalues, dprobs, policy_loss, value_loss, entropy)``.
    ``dprobs`` is dL/dpi before the softmax Jacobian; the advantage in the
    policy term is held constant so it carries no value gradient.
    """
    eps = hyper.eps_log
    rows = np.arange(len(actions))
    advantage = returns - values
    p_taken = policies[rows, actions]
    log_p = np.log(policies + eps)

    policy_loss = -float(np.sum(np.log(p_taken + eps) * advantage))
    entropy = -float(np.sum(policies * log_p))
    value_loss = float(np.sum(advantage**2))

    dprobs = np.zeros_like(policies)
    dprobs[rows, actions] = -advantage / (p_taken + eps)
    dprobs += hyper.beta * (log_p + policies / (policies + eps))

    dlogits = policies * (dprobs - np.sum(dprobs * policies, axis=1, keepdims=True))
    dvalues = -2.0 * hyper.value_loss_weight * advantage
    return dlogits, dvalues, dprobs, policy_loss, value_loss, entropy


def total_loss(packet: GradientPacket, hyper: Hyperparams) -> float:
    return packet.policy_loss - hyper.beta * packet.entropy + hyper.value_loss_weight * packet.value_loss


def loss_and_gradients(
    model: ModelState, spec: NetworkSpec, hyper: Hyperparams, batch: TrainingBatch
) -> GradientPacket:
    """Summed gradient of the combined actor-critic loss over ``batch``.

    L = -log(pi_a + eps) * (R - V) - beta * H(pi) + c * (R - V)^2 with
    H(pi) = -sum pi * log(pi + eps) and c = ``hyper.value_loss_weight``.
    """
    x = _as_states(batch.states, spec)
    actions = np.asarray(batch.actions, dtype=np.int64)
    returns = np.asarray(batch.returns, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise InvalidInput("empty batch")
    if actions.shape != (n,) or returns.shape != (n,):
        raise InvalidInput("states, actions and returns disagree in length")
    if np.any(actions < 0) or np.any(actions >= spec.n_actions):
        raise InvalidInput(f"action index outside [0, {spec.n_actions})")
    if not np.all(np.isfinite(returns)):
        raise InvalidInput("returns contain non-finite values")

    layers, pre, acts, policies, values = _forward_cache(model.theta, spec, x)
    dlogits, dvalues, _, policy_loss, value_loss, entropy = head_gradients(
        policies, values, actions, returns, hyper
    )

    *hidden, (wp, _), (wv, _) = layers
    h = acts[-1]
    grads: list[np.ndarray] = []
    grads.append(np.concatenate([(h.T @ dvalues[:, None]).ravel(), [dvalues.sum()]]))
    grads.append(np.concatenate([(h.T @ dlogits).ravel(), dlogits.sum(axis=0)]))
    dh = dlogits @ wp.T + dvalues[:, None] @ wv.T
    for (w, _), z, a_prev in zip(reversed(hidden), reversed(pre), reversed(acts[:-1])):
        dz = dh * (z > 0.0)
        grads.append(np.concatenate([(a_prev.T @ dz).ravel(), dz.sum(axis=0)]))
        dh = dz @ w.T
    dtheta = np.concatenate(grads[::-1])

    return GradientPacket(
        dtheta=dtheta,
        policy_loss=policy_loss,
        value_loss=value_loss,
        entropy=entropy,
        batch_size=n,
    )


def rmsprop_update(
    model: ModelState, rms: RmsState, grads: GradientPacket, hyper: Hyperparams
) -> tuple[ModelState, RmsState]:
    """Non-centered RMSProp step; bumps the model version by one.

    Raises :class:`NonFiniteGradient` (leaving the inputs untouched) if any
    gradient component is NaN or infinite.
    """
    d = grads.dtheta
    if d.shape != model.theta.shape or rms.g.shape != model.theta.shape:
        raise InvalidInput("gradient, parameter and RMS vectors differ in length")
    if not np.all(np.isfinite(d)):
        raise NonFiniteGradient("gradient has non-finite components")
    if hyper.clip_norm is not None:
        norm = float(np.linalg.norm(d))
        if norm > hyper.clip_norm:
            d = d * (hyper.clip_norm / norm)
    g = hyper.alpha * rms.g + (1.0 - hyper.alpha) * d * d
    theta = model.theta - hyper.eta * d / np.sqrt(g + hyper.eps_rms)
    return ModelState(_frozen(theta), model.version + 1), RmsState(_frozen(g))


def greedy_actions(model: ModelState, spec: NetworkSpec, states: Sequence) -> np.ndarray:
    policies, _ = forward(model, spec, states)
    return np.argmax(policies, axis=1)
