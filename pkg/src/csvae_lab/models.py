"""The four model families and their training loop.

Kinds:

- ``vae``           plain Gaussian VAE over x,
- ``condvae``       encoder and decoder both conditioned on the labels,
- ``condvae_info``  unconditioned encoder, label-conditioned decoder, plus an
                    adversary trained to read the labels out of z while the
                    encoder is rewarded for defeating it,
- ``csvae``         split latent (z, w) with per-attribute subspaces W_i, a
                    label-dependent prior on w, and the entropy/cross-entropy
                    adversarial pair that scrubs label information from z.

Every loss reports the same named terms; inapplicable terms are zero. Totals:
``main_total = b1*recon + b2*kl_w + b3*kl_z + b4*m2`` and
``adversary_total = b5*n``. Baseline kinds default to unit weights.

Training alternates one Adam step on the main parameters with one on the
adversary parameters per minibatch, both driven by counter-based streams so
runs are bit-reproducible and resumable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from . import tensor as T
from .data import TRAIN, LabeledDataset
from .errors import TrainingDivergedError
from .nets import (ConvFeatures, ConvGaussianDecoder, GaussianHead, GaussianMlp,
                   LogitMlp)
from .optim import AdamState, LrSchedule, adam_step, lr_at
from .stochastic import (BERNOULLI, EXCLUSIVE, CategoricalDist, DiagGaussian,
                         categorical_cross_entropy, categorical_neg_entropy,
                         gaussian_nll, kl_diag_gaussians, reparam_sample)
from .tensor import Tensor

KINDS = ("vae", "condvae", "condvae_info", "csvae")
CSVAE_BETAS = (20.0, 1.0, 0.2, 10.0, 1.0)
BASELINE_BETAS = (1.0, 1.0, 1.0, 1.0, 1.0)


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    x_shape: tuple
    z_dim: int = 2
    k: int = 1
    w_dim_per_attr: int = 2
    enc_hidden: tuple = (64, 64)
    dec_hidden: tuple = (64, 64)
    adv_hidden: tuple = (64, 64)
    conv_channels: tuple = (8, 16, 32)
    arch: str = "auto"  # auto | mlp | conv
    label_mode: str = BERNOULLI
    betas: tuple | None = None
    prior_mean_y1: float = 3.0   # attribute present: broad Gaussian away from 0
    prior_sigma_y1: float = 1.0
    prior_mean_y0: float = 0.0   # attribute absent: tight Gaussian at the origin
    prior_sigma_y0: float = 0.1
    dec_logvar_clamp: float = 7.0
    adversary_ratio: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if len(self.x_shape) not in (1, 3):
            raise ValueError("x_shape must be (d,) or (h, w, c)")
        if self.z_dim < 1:
            raise ValueError("z_dim must be positive")
        if self.k < 0 or (self.kind != "csvae" and self.k < 1 and self.kind != "vae"):
            raise ValueError("k must be positive for label-conditioned kinds")
        if self.k > 0 and self.w_dim_per_attr < 1:
            raise ValueError("w_dim_per_attr must be positive")
        if self.label_mode not in (BERNOULLI, EXCLUSIVE):
            raise ValueError(f"unknown label mode {self.label_mode!r}")
        if self.betas is not None and (len(self.betas) != 5 or any(b < 0 for b in self.betas)):
            raise ValueError("betas must be five non-negative weights")
        if min(self.prior_sigma_y0, self.prior_sigma_y1) <= 0:
            raise ValueError("prior sigmas must be positive")
        if self.adversary_ratio < 1:
            raise ValueError("adversary_ratio must be >= 1")

    @property
    def w_dim(self) -> int:
        return self.k * self.w_dim_per_attr

    @property
    def x_dim(self) -> int:
        return int(np.prod(self.x_shape))

    @property
    def resolved_arch(self) -> str:
        if self.arch != "auto":
            return self.arch
        return "conv" if len(self.x_shape) == 3 else "mlp"

    @property
    def resolved_betas(self) -> tuple:
        if self.betas is not None:
            return tuple(float(b) for b in self.betas)
        return CSVAE_BETAS if self.kind == "csvae" else BASELINE_BETAS

    @property
    def has_adversary(self) -> bool:
        return self.kind in ("condvae_info", "csvae") and self.k > 0


@dataclass
class LatentCode:
    """Posterior means (z, w); w is None for kinds without a W subspace."""

    z: np.ndarray
    w: np.ndarray | None = None

    def w_block(self, spec: ModelSpec, attr: int) -> np.ndarray:
        d = spec.w_dim_per_attr
        return self.w[..., attr * d:(attr + 1) * d]


@dataclass
class LossBreakdown:
    recon: float = 0.0
    kl_w: float = 0.0
    kl_z: float = 0.0
    m2: float = 0.0
    n: float = 0.0
    main_total: float = 0.0
    adversary_total: float = 0.0

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("recon", "kl_w", "kl_z", "m2", "n", "main_total", "adversary_total")}


# -- encoders / decoders wrapped for both architectures ---------------------------


class _Encoder:
    """Gaussian encoder over x, optionally conditioned on the labels."""

    def __init__(self, rng, spec: ModelSpec, out_dim: int, conditioned: bool, name: str):
        self.spec = spec
        self.conditioned = conditioned
        extra = spec.k if conditioned else 0
        if spec.resolved_arch == "mlp":
            self.net = GaussianMlp(rng, spec.x_dim + extra, spec.enc_hidden, out_dim, name)
        else:
            h, w, c = spec.x_shape
            if h != w or c != 1:
                raise ValueError("conv architecture expects square single-channel images")
            self.features = ConvFeatures(rng, h, c + extra, spec.conv_channels, name)
            self.head = GaussianHead(rng, self.features.out_dim, out_dim, name)

    def __call__(self, xt: Tensor, yt: Tensor | None, detached: bool = False) -> DiagGaussian:
        if self.spec.resolved_arch == "mlp":
            inp = T.concat([xt, yt], axis=1) if self.conditioned else xt
            return self.net(inp, detached)
        if self.conditioned:
            b, _, h, w = xt.shape
            maps = Tensor(np.broadcast_to(
                yt.data[:, :, None, None], (b, self.spec.k, h, w)).copy())
            xt = T.concat([xt, maps], axis=1)
        return self.head(self.features(xt, detached), detached)

    def named_params(self):
        if self.spec.resolved_arch == "mlp":
            return self.net.named_params()
        return self.features.named_params() + self.head.named_params()


class _Decoder:
    """Gaussian decoder over x from a latent (plus labels where applicable)."""

    def __init__(self, rng, spec: ModelSpec, in_dim: int, name: str):
        self.spec = spec
        if spec.resolved_arch == "mlp":
            self.net = GaussianMlp(rng, in_dim, spec.dec_hidden, spec.x_dim, name,
                                   logvar_clamp=spec.dec_logvar_clamp)
        else:
            h, _, c = spec.x_shape
            self.net = ConvGaussianDecoder(rng, in_dim, h, c, spec.conv_channels, name,
                                           logvar_clamp=spec.dec_logvar_clamp)

    def __call__(self, latent: Tensor, detached: bool = False) -> DiagGaussian:
        return self.net(latent, detached)

    def named_params(self):
        return self.net.named_params()


class Model:
    def __init__(self, spec: ModelSpec, parts: dict, main_params, adv_params):
        self.spec = spec
        self.parts = parts
        self.main_params = main_params
        self.adv_params = adv_params
        self.trained_epochs = 0

    def named_params(self):
        return list(self.main_params) + list(self.adv_params)

    # input plumbing -----------------------------------------------------------

    def _xt(self, x: np.ndarray) -> Tensor:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.spec.x_shape:
            raise ValueError(f"batch shape {x.shape[1:]} does not match spec {self.spec.x_shape}")
        if self.spec.resolved_arch == "conv":
            return Tensor(np.ascontiguousarray(x.transpose(0, 3, 1, 2)))
        return Tensor(x.reshape(x.shape[0], -1))

    def _yt(self, y) -> Tensor:
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 2 or y.shape[1] != self.spec.k:
            raise ValueError(f"labels must be (batch, {self.spec.k})")
        return Tensor(y)

    def _x_flat(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x.reshape(x.shape[0], -1)

    def _to_x_shape(self, flat: np.ndarray) -> np.ndarray:
        return flat.reshape((flat.shape[0],) + self.spec.x_shape)


def build_model(spec: ModelSpec, seed: int) -> Model:
    """Construct a model with He-initialized weights from the init stream."""
    gen = rngmod.purpose_stream(seed, rngmod.INIT)
    parts: dict = {}
    main, adv = [], []
    kind = spec.kind
    if kind == "vae":
        parts["enc"] = _Encoder(gen, spec, spec.z_dim, conditioned=False, name="enc")
        parts["dec"] = _Decoder(gen, spec, spec.z_dim, name="dec")
        main = parts["enc"].named_params() + parts["dec"].named_params()
    elif kind == "condvae":
        parts["enc"] = _Encoder(gen, spec, spec.z_dim, conditioned=True, name="enc")
        parts["dec"] = _Decoder(gen, spec, spec.z_dim + spec.k, name="dec")
        main = parts["enc"].named_params() + parts["dec"].named_params()
    elif kind == "condvae_info":
        parts["enc"] = _Encoder(gen, spec, spec.z_dim, conditioned=False, name="enc")
        parts["dec"] = _Decoder(gen, spec, spec.z_dim + spec.k, name="dec")
        parts["adv"] = LogitMlp(gen, spec.z_dim, spec.adv_hidden, spec.k, "adv")
        main = parts["enc"].named_params() + parts["dec"].named_params()
        adv = parts["adv"].named_params()
    else:  # csvae
        parts["enc_z"] = _Encoder(gen, spec, spec.z_dim, conditioned=False, name="enc_z")
        if spec.k > 0:
            parts["enc_w"] = _Encoder(gen, spec, spec.w_dim, conditioned=True, name="enc_w")
        parts["dec"] = _Decoder(gen, spec, spec.z_dim + spec.w_dim, name="dec")
        if spec.k > 0:
            parts["adv"] = LogitMlp(gen, spec.z_dim, spec.adv_hidden, spec.k, "adv")
        main = parts["enc_z"].named_params() + parts["dec"].named_params()
        if spec.k > 0:
            main = parts["enc_z"].named_params() + parts["enc_w"].named_params() \
                + parts["dec"].named_params()
            adv = parts["adv"].named_params()
    return Model(spec, parts, main, adv)


# -- label-dependent prior over W ---------------------------------------------------


def w_prior(y, spec: ModelSpec) -> DiagGaussian:
    """Block-diagonal prior: block i follows the attr-on or attr-off Gaussian."""
    y = np.asarray(y, dtype=np.float64)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[None, :]
    if y.shape[1] != spec.k:
        raise ValueError(f"label length {y.shape[1]} does not match k={spec.k}")
    d = spec.w_dim_per_attr
    on = np.repeat(y, d, axis=1)
    mu = on * spec.prior_mean_y1 + (1.0 - on) * spec.prior_mean_y0
    lv = on * 2.0 * np.log(spec.prior_sigma_y1) + (1.0 - on) * 2.0 * np.log(spec.prior_sigma_y0)
    if squeeze:
        mu, lv = mu[0], lv[0]
    return DiagGaussian(Tensor(mu), Tensor(lv))


def _std_normal(dim: int) -> DiagGaussian:
    return DiagGaussian(Tensor(np.zeros(dim)), Tensor(np.zeros(dim)))


# -- loss assembly --------------------------------------------------------------------


def _default_noise(spec: ModelSpec, batch: int, seed: int) -> dict:
    gen = rngmod.purpose_stream(seed, rngmod.NOISE)
    noise = {"z": rngmod.normals(gen, (batch, spec.z_dim))}
    if spec.kind == "csvae" and spec.w_dim > 0:
        noise["w"] = rngmod.normals(gen, (batch, spec.w_dim))
    return noise


def _loss_graph(model: Model, x, y=None, noise=None, seed: int = 0):
    """Returns (LossBreakdown, main_total Tensor, adversary_total Tensor|None,
    z sample Tensor)."""
    spec = model.spec
    x = np.asarray(x)
    b = x.shape[0]
    if noise is None:
        noise = _default_noise(spec, b, seed)
    betas = spec.resolved_betas
    xt = model._xt(x)
    x_flat = model._x_flat(x)
    needs_y = spec.kind != "vae" and spec.k > 0
    if needs_y and y is None:
        raise ValueError(f"{spec.kind} loss requires labels")
    yt = model._yt(y) if needs_y else None

    kl_w_t = m2_t = n_t = None
    if spec.kind == "vae":
        q_z = model.parts["enc"](xt, None)
    elif spec.kind == "condvae":
        q_z = model.parts["enc"](xt, yt)
    elif spec.kind == "condvae_info":
        q_z = model.parts["enc"](xt, None)
    else:
        q_z = model.parts["enc_z"](xt, None)

    z = reparam_sample(q_z, noise["z"])
    kl_z_t = kl_diag_gaussians(q_z, _std_normal(spec.z_dim)).mean()

    if spec.kind == "vae":
        p_x = model.parts["dec"](z)
    elif spec.kind in ("condvae", "condvae_info"):
        p_x = model.parts["dec"](T.concat([z, yt], axis=1))
    else:
        if spec.k > 0:
            q_w = model.parts["enc_w"](xt, yt)
            w = reparam_sample(q_w, noise["w"])
            kl_w_t = kl_diag_gaussians(q_w, w_prior(y, spec)).mean()
            p_x = model.parts["dec"](T.concat([z, w], axis=1))
        else:
            p_x = model.parts["dec"](z)

    recon_t = gaussian_nll(x_flat, p_x).mean()

    if spec.has_adversary:
        adv = model.parts["adv"]
        y_arr = np.asarray(y, dtype=np.float64)
        if spec.kind == "csvae":
            # encoder drives the frozen adversary toward maximum entropy
            dist_frozen = CategoricalDist(adv(z, detached=True), mode=spec.label_mode)
            m2_t = categorical_neg_entropy(dist_frozen).mean()
        else:
            # encoder is rewarded for raising the frozen adversary's loss
            dist_frozen = CategoricalDist(adv(z, detached=True), mode=spec.label_mode)
            m2_t = -categorical_cross_entropy(dist_frozen, y_arr).mean()
        dist_live = CategoricalDist(adv(z.detach()), mode=spec.label_mode)
        n_t = categorical_cross_entropy(dist_live, y_arr).mean()

    main_t = betas[0] * recon_t + betas[2] * kl_z_t
    if kl_w_t is not None:
        main_t = main_t + betas[1] * kl_w_t
    if m2_t is not None:
        main_t = main_t + betas[3] * m2_t
    adv_t = betas[4] * n_t if n_t is not None else None

    lb = LossBreakdown(
        recon=recon_t.item(),
        kl_w=kl_w_t.item() if kl_w_t is not None else 0.0,
        kl_z=kl_z_t.item(),
        m2=m2_t.item() if m2_t is not None else 0.0,
        n=n_t.item() if n_t is not None else 0.0,
        main_total=main_t.item(),
        adversary_total=adv_t.item() if adv_t is not None else 0.0,
    )
    return lb, main_t, adv_t, z


def _loss_for_kind(model: Model, kind: str, x, y, noise, seed) -> LossBreakdown:
    if model.spec.kind != kind:
        raise ValueError(f"expected a {kind} model, got {model.spec.kind}")
    return _loss_graph(model, x, y, noise, seed)[0]


def vae_loss(model: Model, x, y=None, noise=None, seed: int = 0) -> LossBreakdown:
    return _loss_for_kind(model, "vae", x, y, noise, seed)


def condvae_loss(model: Model, x, y, noise=None, seed: int = 0) -> LossBreakdown:
    return _loss_for_kind(model, "condvae", x, y, noise, seed)


def condvae_info_losses(model: Model, x, y, noise=None, seed: int = 0) -> LossBreakdown:
    return _loss_for_kind(model, "condvae_info", x, y, noise, seed)


def csvae_losses(model: Model, x, y=None, noise=None, seed: int = 0) -> LossBreakdown:
    return _loss_for_kind(model, "csvae", x, y, noise, seed)


# -- training ----------------------------------------------------------------------


@dataclass
class TrainState:
    adam_main: AdamState
    adam_adv: AdamState | None
    epoch: int = 0

    @classmethod
    def fresh(cls, model: Model) -> "TrainState":
        main = AdamState.for_params([p.data for _, p in model.main_params])
        adv = AdamState.for_params([p.data for _, p in model.adv_params]) \
            if model.adv_params else None
        return cls(adam_main=main, adam_adv=adv, epoch=0)


@dataclass
class TrainResult:
    model: Model
    curve: list = field(default_factory=list)
    state: TrainState | None = None


def _grads(params) -> list:
    return [np.zeros_like(p.data) if p.grad is None else p.grad for _, p in params]


def _zero(params) -> None:
    for _, p in params:
        p.zero_grad()


def train(model: Model, dataset: LabeledDataset, epochs: int, seed: int,
          schedule: LrSchedule | None = None, batch_size: int = 64,
          split_tag: int = TRAIN, state: TrainState | None = None,
          log_every: int = 0) -> TrainResult:
    """Alternating optimization over minibatches; deterministic given seed.

    Raises TrainingDivergedError (with the offending epoch) on a non-finite
    loss. Pass the returned state back in to resume with intact optimizer
    moments, schedule position and noise streams.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    spec = model.spec
    schedule = schedule or LrSchedule()
    sub = dataset.subset(split_tag) if (dataset.split_tags != split_tag).any() else dataset
    if sub.n == 0:
        raise ValueError("training split is empty")
    state = state or TrainState.fresh(model)
    curve = []
    for epoch in range(state.epoch, state.epoch + epochs):
        lr = lr_at(schedule, epoch)
        order = rngmod.purpose_stream(seed, rngmod.SHUFFLE, epoch).permutation(sub.n)
        noise_gen = rngmod.purpose_stream(seed, rngmod.NOISE, epoch)
        sums = np.zeros(7)
        for start in range(0, sub.n, batch_size):
            idx = order[start:start + batch_size]
            xb, yb = sub.x[idx], sub.y[idx]
            noise = {"z": rngmod.normals(noise_gen, (len(idx), spec.z_dim))}
            if spec.kind == "csvae" and spec.w_dim > 0:
                noise["w"] = rngmod.normals(noise_gen, (len(idx), spec.w_dim))
            lb, main_t, adv_t, z = _loss_graph(model, xb, yb if spec.k > 0 else None, noise)
            if not np.isfinite(lb.main_total) or not np.isfinite(lb.adversary_total):
                raise TrainingDivergedError(epoch)
            main_t.backward()
            adam_step([p.data for _, p in model.main_params], _grads(model.main_params),
                      state.adam_main, lr)
            _zero(model.named_params())
            if adv_t is not None:
                # the adversary trains against the just-updated encoder: re-encode
                # the batch (same noise realization) and take the detached sample
                if spec.kind == "csvae":
                    q_z_new = model.parts["enc_z"](model._xt(xb), None)
                else:
                    q_z_new = model.parts["enc"](model._xt(xb), None)
                z_new = reparam_sample(q_z_new, noise["z"]).detach()
                y_arr = np.asarray(yb, dtype=np.float64)
                for _ in range(spec.adversary_ratio):
                    dist = CategoricalDist(model.parts["adv"](z_new), mode=spec.label_mode)
                    loss_t = spec.resolved_betas[4] * categorical_cross_entropy(
                        dist, y_arr).mean()
                    loss_t.backward()
                    adam_step([p.data for _, p in model.adv_params], _grads(model.adv_params),
                              state.adam_adv, lr)
                    _zero(model.adv_params)
            sums += np.array(list(lb.as_dict().values())) * len(idx)
        mean = sums / sub.n
        curve.append(LossBreakdown(*mean))
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}: main {mean[5]:.4f} recon {mean[0]:.4f}")
        state.epoch = epoch + 1
    model.trained_epochs = state.epoch
    return TrainResult(model=model, curve=curve, state=state)


# -- deterministic inference ---------------------------------------------------------


def encode(model: Model, x, y=None) -> LatentCode:
    """Posterior means. y is required for conditioned kinds, forbidden for vae."""
    spec = model.spec
    if spec.kind == "vae":
        if y is not None:
            raise ValueError("vae encode takes no labels")
    elif spec.k > 0 and y is None:
        raise ValueError(f"{spec.kind} encode requires labels")
    xt = model._xt(np.asarray(x))
    yt = model._yt(y) if y is not None else None
    if spec.kind == "csvae":
        z = model.parts["enc_z"](xt, None).mu.data
        w = model.parts["enc_w"](xt, yt).mu.data if spec.k > 0 else None
        return LatentCode(z=z, w=w)
    enc_y = yt if spec.kind == "condvae" else None
    z = model.parts["enc"](xt, enc_y).mu.data
    return LatentCode(z=z)


def decode(model: Model, z, w=None, y=None) -> DiagGaussian:
    """Decoder distribution over x, reshaped to the dataset-native x shape."""
    spec = model.spec
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != spec.z_dim:
        raise ValueError(f"z must be (batch, {spec.z_dim})")
    if spec.kind == "vae":
        if w is not None or y is not None:
            raise ValueError("vae decode takes only z")
        latent = Tensor(z)
    elif spec.kind in ("condvae", "condvae_info"):
        if w is not None:
            raise ValueError(f"{spec.kind} has no W subspace")
        if y is None:
            raise ValueError(f"{spec.kind} decode requires labels")
        y = np.asarray(y, dtype=np.float64)
        latent = Tensor(np.concatenate([z, y.reshape(z.shape[0], spec.k)], axis=1))
    else:
        if y is not None:
            raise ValueError("csvae decode conditions on w, not labels")
        if spec.w_dim > 0:
            if w is None:
                raise ValueError("csvae decode requires w")
            w = np.asarray(w, dtype=np.float64)
            if w.shape != (z.shape[0], spec.w_dim):
                raise ValueError(f"w must be (batch, {spec.w_dim})")
            latent = Tensor(np.concatenate([z, w], axis=1))
        else:
            latent = Tensor(z)
    dist = model.parts["dec"](latent)
    mu = model._to_x_shape(dist.mu.data)
    lv = model._to_x_shape(dist.log_var.data)
    return DiagGaussian(Tensor(mu), Tensor(lv))


def reconstruct(model: Model, x, y=None) -> np.ndarray:
    """Posterior-mean reconstruction (encode means, decode mean)."""
    code = encode(model, x, y)
    spec = model.spec
    if spec.kind == "vae":
        return decode(model, code.z).mu.data
    if spec.kind == "csvae":
        return decode(model, code.z, w=code.w).mu.data
    return decode(model, code.z, y=y).mu.data
