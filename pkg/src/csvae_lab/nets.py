"""Small feedforward building blocks over the autodiff tensors.

Layers register their parameters in creation order so initialization draws,
checkpoint layout and optimizer state stay aligned. Every forward accepts
``detached=True`` to run the same computation through gradient-stopped views
of the weights (used to freeze the adversary inside the main objective).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .stochastic import DiagGaussian
from .tensor import Tensor


def _fan_in_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    # uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); keeps initial activations and
    # log-variance heads tame even for unnormalized inputs
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


class Linear:
    def __init__(self, rng, in_dim: int, out_dim: int, name: str):
        self.name = name
        self.w = Tensor(_fan_in_uniform(rng, in_dim, (in_dim, out_dim)), requires_grad=True)
        self.b = Tensor(_fan_in_uniform(rng, in_dim, out_dim), requires_grad=True)

    def __call__(self, x: Tensor, detached: bool = False) -> Tensor:
        w = self.w.detach() if detached else self.w
        b = self.b.detach() if detached else self.b
        return x @ w + b

    def named_params(self):
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]


class Conv2d:
    def __init__(self, rng, cin: int, cout: int, name: str, kernel: int = 4,
                 stride: int = 2, padding: int = 1):
        self.name, self.stride, self.padding = name, stride, padding
        fan_in = cin * kernel * kernel
        self.w = Tensor(_fan_in_uniform(rng, fan_in, (cout, cin, kernel, kernel)),
                        requires_grad=True)
        self.b = Tensor(_fan_in_uniform(rng, fan_in, cout), requires_grad=True)

    def __call__(self, x: Tensor, detached: bool = False) -> Tensor:
        w = self.w.detach() if detached else self.w
        b = self.b.detach() if detached else self.b
        return T.conv2d(x, w, b, stride=self.stride, padding=self.padding)

    def named_params(self):
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]


class ConvTranspose2d:
    def __init__(self, rng, cin: int, cout: int, name: str, kernel: int = 4,
                 stride: int = 2, padding: int = 1):
        self.name, self.stride, self.padding = name, stride, padding
        fan_in = cin * kernel * kernel
        self.w = Tensor(_fan_in_uniform(rng, fan_in, (cin, cout, kernel, kernel)),
                        requires_grad=True)
        self.b = Tensor(_fan_in_uniform(rng, fan_in, cout), requires_grad=True)

    def __call__(self, x: Tensor, detached: bool = False) -> Tensor:
        w = self.w.detach() if detached else self.w
        b = self.b.detach() if detached else self.b
        return T.conv_transpose2d(x, w, b, stride=self.stride, padding=self.padding)

    def named_params(self):
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]


class MlpTrunk:
    """ReLU stack; empty hidden widths make this the identity."""

    def __init__(self, rng, in_dim: int, hidden, name: str):
        self.layers = [Linear(rng, a, b, f"{name}.h{i}")
                       for i, (a, b) in enumerate(zip((in_dim,) + tuple(hidden), hidden))]
        self.out_dim = hidden[-1] if hidden else in_dim

    def __call__(self, x: Tensor, detached: bool = False) -> Tensor:
        for layer in self.layers:
            x = layer(x, detached).relu()
        return x

    def named_params(self):
        return [p for layer in self.layers for p in layer.named_params()]


class GaussianHead:
    """Two linear heads producing a DiagGaussian; log-variance optionally clamped."""

    def __init__(self, rng, in_dim: int, out_dim: int, name: str, logvar_clamp: float | None = None):
        self.mu = Linear(rng, in_dim, out_dim, f"{name}.mu")
        self.log_var = Linear(rng, in_dim, out_dim, f"{name}.logvar")
        self.clamp = logvar_clamp

    def __call__(self, h: Tensor, detached: bool = False) -> DiagGaussian:
        lv = self.log_var(h, detached)
        if self.clamp is not None:
            lv = lv.clamp(-self.clamp, self.clamp)
        return DiagGaussian(self.mu(h, detached), lv)

    def named_params(self):
        return self.mu.named_params() + self.log_var.named_params()


class GaussianMlp:
    """Trunk + Gaussian head: the q / p networks of the models."""

    def __init__(self, rng, in_dim: int, hidden, out_dim: int, name: str,
                 logvar_clamp: float | None = None):
        self.trunk = MlpTrunk(rng, in_dim, hidden, name)
        self.head = GaussianHead(rng, self.trunk.out_dim, out_dim, name, logvar_clamp)

    def __call__(self, x: Tensor, detached: bool = False) -> DiagGaussian:
        return self.head(self.trunk(x, detached), detached)

    def named_params(self):
        return self.trunk.named_params() + self.head.named_params()


class LogitMlp:
    """Trunk + linear logits: adversaries, probes and classifiers."""

    def __init__(self, rng, in_dim: int, hidden, out_dim: int, name: str):
        self.trunk = MlpTrunk(rng, in_dim, hidden, name)
        self.head = Linear(rng, self.trunk.out_dim, out_dim, f"{name}.logits")

    def __call__(self, x: Tensor, detached: bool = False) -> Tensor:
        return self.head(self.trunk(x, detached), detached)

    def named_params(self):
        return self.trunk.named_params() + self.head.named_params()


class ConvFeatures:
    """Stride-2 conv stack flattening (B, C, H, W) images to feature rows."""

    def __init__(self, rng, hw: int, cin: int, channels, name: str):
        if hw % (2 ** len(channels)) != 0:
            raise ValueError(f"image size {hw} not divisible by 2^{len(channels)}")
        self.layers = []
        c = cin
        for i, cout in enumerate(channels):
            self.layers.append(Conv2d(rng, c, cout, f"{name}.c{i}"))
            c = cout
        self.final_hw = hw // (2 ** len(channels))
        self.out_dim = c * self.final_hw * self.final_hw

    def __call__(self, x: Tensor, detached: bool = False) -> Tensor:
        for layer in self.layers:
            x = layer(x, detached).relu()
        b = x.shape[0]
        return x.reshape((b, self.out_dim))

    def named_params(self):
        return [p for layer in self.layers for p in layer.named_params()]


class ConvGaussianDecoder:
    """Latent vector -> mirrored transposed-conv stack -> Gaussian over pixels.

    The final layer emits 2*cout channels, split into mean and log-variance
    maps. Outputs are flattened to (B, H*W*cout) to match vector likelihoods.
    """

    def __init__(self, rng, latent_dim: int, hw: int, cout: int, channels,
                 name: str, logvar_clamp: float | None = None):
        stages = len(channels)
        self.hw = hw
        self.base_hw = hw // (2 ** stages)
        self.base_c = channels[-1]
        self.cout = cout
        self.clamp = logvar_clamp
        self.fc = Linear(rng, latent_dim, self.base_c * self.base_hw * self.base_hw, f"{name}.fc")
        self.layers = []
        rev = list(channels[::-1])
        for i, (a, b) in enumerate(zip(rev, rev[1:] + [2 * cout])):
            self.layers.append(ConvTranspose2d(rng, a, b, f"{name}.d{i}"))

    def __call__(self, z: Tensor, detached: bool = False) -> DiagGaussian:
        b = z.shape[0]
        h = self.fc(z, detached).relu()
        h = h.reshape((b, self.base_c, self.base_hw, self.base_hw))
        for i, layer in enumerate(self.layers):
            h = layer(h, detached)
            if i < len(self.layers) - 1:
                h = h.relu()
        mu = T.narrow(h, 1, 0, self.cout).reshape((b, self.cout * self.hw * self.hw))
        lv = T.narrow(h, 1, self.cout, self.cout).reshape((b, self.cout * self.hw * self.hw))
        if self.clamp is not None:
            lv = lv.clamp(-self.clamp, self.clamp)
        return DiagGaussian(mu, lv)

    def named_params(self):
        return self.fc.named_params() + [p for layer in self.layers for p in layer.named_params()]
