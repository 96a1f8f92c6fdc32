"""Quantitative evaluation protocols.

- attribute classifiers (and probes, which are the same machinery on encoded
  features) trained with early stopping on validation accuracy,
- switched-image accuracy: generate attribute-switched outputs with each
  model's switching function and score whether a held-out classifier sees the
  target attribute,
- identity-paired MSE: switch one member of an identity pair to the other's
  attribute state and compare against the ground-truth sibling, choosing the
  switch point by exhaustive sweep on the validation split,
- a mutual-information probe on z: I(Y;Z) = H(Y) - H(Y|Z) with H(Y|Z)
  estimated by a freshly trained probe's held-out cross-entropy.

All binary-attribute protocols; reports are deterministic given (model,
dataset, seed).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .data import TEST, TRAIN, VALID, LabeledDataset, pair_group_size
from .errors import DataError
from .manipulate import class_latent_mean, embed_block, switch_condvae, switch_csvae, switch_vae, w_grid
from .models import Model, encode, reconstruct
from .nets import ConvFeatures, Linear, LogitMlp
from .optim import AdamState, adam_step
from .stochastic import BERNOULLI, EXCLUSIVE, CategoricalDist, categorical_cross_entropy
from .tensor import Tensor

CONDVAE_P_CANDIDATES = tuple(0.25 * i for i in range(1, 9))  # 0.25 .. 2.0


# -- classifier / probe machinery ----------------------------------------------------


class _Net:
    def __init__(self, rng, x_shape, out_dim, hidden, conv_channels):
        self.x_shape = tuple(x_shape)
        self.conv = len(self.x_shape) == 3
        if self.conv:
            h, w, c = self.x_shape
            self.features = ConvFeatures(rng, h, c, conv_channels, "clf")
            self.head = Linear(rng, self.features.out_dim, out_dim, "clf.logits")
        else:
            self.net = LogitMlp(rng, self.x_shape[0], hidden, out_dim, "clf")

    def _xt(self, x) -> Tensor:
        x = np.asarray(x, dtype=np.float64)
        if self.conv:
            return Tensor(np.ascontiguousarray(x.transpose(0, 3, 1, 2)))
        return Tensor(x.reshape(x.shape[0], -1))

    def logits_t(self, x) -> Tensor:
        xt = self._xt(x)
        if self.conv:
            return self.head(self.features(xt))
        return self.net(xt)

    def named_params(self):
        if self.conv:
            return self.features.named_params() + self.head.named_params()
        return self.net.named_params()


@dataclass
class AttrClassifier:
    net: _Net
    mode: str
    attr_names: tuple
    val_accuracy: float = 0.0
    majority_rate: float = 0.0
    usable: bool = True

    def logits(self, x) -> np.ndarray:
        out = np.empty((len(x), len(self.attr_names)))
        for lo in range(0, len(x), 512):
            out[lo:lo + 512] = self.net.logits_t(x[lo:lo + 512]).data
        return out

    def predict_proba(self, x) -> np.ndarray:
        z = self.logits(x)
        if self.mode == EXCLUSIVE:
            e = np.exp(z - z.max(axis=1, keepdims=True))
            return e / e.sum(axis=1, keepdims=True)
        return 1.0 / (1.0 + np.exp(-z))

    def predict(self, x) -> np.ndarray:
        """Binary matrix (bernoulli) or argmax-one-hot rows (exclusive)."""
        p = self.predict_proba(x)
        if self.mode == EXCLUSIVE:
            out = np.zeros_like(p, dtype=np.uint8)
            out[np.arange(len(p)), p.argmax(axis=1)] = 1
            return out
        return (p > 0.5).astype(np.uint8)

    def accuracy(self, x, y) -> float:
        pred = self.predict(x)
        y = np.asarray(y, dtype=np.uint8)
        if self.mode == EXCLUSIVE:
            return float((pred.argmax(axis=1) == y.argmax(axis=1)).mean())
        return float((pred == y).mean())


def majority_rate(y, mode: str = BERNOULLI) -> float:
    y = np.asarray(y, dtype=np.float64)
    if mode == EXCLUSIVE:
        return float(y.mean(axis=0).max())
    per_attr = y.mean(axis=0)
    return float(np.maximum(per_attr, 1.0 - per_attr).mean())


def fit_classifier(x, y, tags, seed: int, mode: str = BERNOULLI, hidden=(64, 64),
                   conv_channels=(8, 16, 32), max_epochs: int = 150, patience: int = 10,
                   lr: float = 1e-3, batch_size: int = 64,
                   attr_names: tuple | None = None) -> AttrClassifier:
    """Cross-entropy training with early stop on validation-accuracy plateau."""
    x = np.asarray(x)
    y = np.asarray(y, dtype=np.float64)
    tags = np.asarray(tags)
    tr = np.flatnonzero(tags == TRAIN)
    va = np.flatnonzero(tags == VALID)
    if tr.size == 0:
        raise DataError("classifier needs a non-empty training split")
    if va.size == 0:
        raise DataError("classifier needs a non-empty validation split")
    names = attr_names or tuple(f"a{i}" for i in range(y.shape[1]))
    net = _Net(rngmod.purpose_stream(seed, rngmod.INIT), x.shape[1:], y.shape[1],
               hidden, conv_channels)
    clf = AttrClassifier(net=net, mode=mode, attr_names=names)
    params = [p for _, p in net.named_params()]
    state = AdamState.for_params([p.data for p in params])

    best_acc, best_params, wait = -1.0, None, 0
    for epoch in range(max_epochs):
        order = rngmod.purpose_stream(seed, rngmod.SHUFFLE, epoch).permutation(tr.size)
        for lo in range(0, tr.size, batch_size):
            idx = tr[order[lo:lo + batch_size]]
            logits = net.logits_t(x[idx])
            loss = categorical_cross_entropy(
                CategoricalDist(logits, mode=mode), y[idx]).mean()
            loss.backward()
            adam_step([p.data for p in params],
                      [np.zeros_like(p.data) if p.grad is None else p.grad for p in params],
                      state, lr)
            for p in params:
                p.zero_grad()
        acc = clf.accuracy(x[va], y[va])
        if acc > best_acc:
            best_acc, wait = acc, 0
            best_params = [p.data.copy() for p in params]
        else:
            wait += 1
            if wait >= patience:
                break
    for p, best in zip(params, best_params):
        p.data[:] = best
    clf.val_accuracy = best_acc
    clf.majority_rate = majority_rate(y[va], mode)
    clf.usable = best_acc > clf.majority_rate
    return clf


def train_attr_classifier(dataset: LabeledDataset, seed: int, mode: str = BERNOULLI,
                          **kw) -> AttrClassifier:
    y = dataset.y.astype(np.float64)
    return fit_classifier(dataset.x, y, dataset.split_tags, seed, mode=mode,
                          attr_names=dataset.attr_names, **kw)


def linear_probe_accuracy(features, y, tags, seed: int, max_epochs: int = 120) -> float:
    """Logistic-regression probe; held-out (test split) mean per-attribute accuracy."""
    clf = fit_classifier(features, np.asarray(y, dtype=np.float64), tags, seed,
                         hidden=(), max_epochs=max_epochs, lr=5e-2)
    te = np.flatnonzero(np.asarray(tags) == TEST)
    return clf.accuracy(np.asarray(features)[te], np.asarray(y)[te])


# -- switched-image accuracy (classifier protocol) --------------------------------------


@dataclass
class AccuracyReport:
    model_kind: str
    policy: str
    attr_names: tuple
    per_attr: dict
    per_target: dict          # keys "on", "off"
    overall: float
    counts: dict              # (attr, target) -> (hits, total)

    def table(self) -> str:
        lines = [f"model: {self.model_kind}   policy: {self.policy}",
                 f"{'attribute':<14}{'on-target':>12}{'off-target':>12}{'overall':>10}"]
        for a, name in enumerate(self.attr_names):
            on_h, on_t = self.counts[(name, 1)]
            off_h, off_t = self.counts[(name, 0)]
            lines.append(f"{name:<14}{on_h / max(on_t, 1):>12.4f}"
                         f"{off_h / max(off_t, 1):>12.4f}{self.per_attr[name]:>10.4f}")
        lines.append(f"{'overall':<14}{self.per_target['on']:>12.4f}"
                     f"{self.per_target['off']:>12.4f}{self.overall:>10.4f}")
        return "\n".join(lines)


def csvae_empirical_w_means(model: Model, dataset: LabeledDataset,
                            split: int = VALID) -> dict:
    """Per (attribute, state) empirical mean of the encoded W_attr block."""
    sub = dataset.subset(split)
    code = encode(model, sub.x, sub.y)
    d = model.spec.w_dim_per_attr
    means = {}
    for a in range(model.spec.k):
        block = code.w[:, a * d:(a + 1) * d]
        for s in (0, 1):
            mask = sub.y[:, a] == s
            if not mask.any():
                raise DataError(f"no validation examples with attribute {a} == {s}")
            means[(a, s)] = block[mask].mean(axis=0)
    return means


def _switched_batch(model, policy_data, x, y, attr, target_state):
    kind = model.spec.kind
    if kind == "vae":
        means = policy_data["class_means"]
        return switch_vae(model, x, 1 - target_state, target_state,
                          {s: means[(attr, s)] for s in (0, 1)})
    if kind in ("condvae", "condvae_info"):
        return switch_condvae(model, x, y, attr, float(target_state))
    point = embed_block(model.spec, attr, policy_data["w_means"][(attr, target_state)])
    return switch_csvae(model, x, point)


def eval_switch_accuracy(model: Model, clf: AttrClassifier, dataset: LabeledDataset,
                         policy: str = "default", split: int = TEST,
                         threads: int = 1) -> AccuracyReport:
    """For each held-out example and attribute, switch to the opposite state and
    score whether the classifier assigns the target. policy="identity" is the
    no-switch control (reconstructions, target = current state)."""
    if not clf.usable:
        raise DataError("classifier failed to beat the majority rate; not usable")
    if clf.mode != BERNOULLI:
        raise ValueError("switch accuracy is defined for binary attribute classifiers")
    if policy not in ("default", "identity"):
        raise ValueError(f"unknown policy {policy!r}")
    spec = model.spec
    sub = dataset.subset(split)

    policy_data = {}
    policy_name = policy
    if policy == "default":
        if spec.kind == "vae":
            policy_data["class_means"] = {
                (a, s): class_latent_mean(model, dataset, a, s, split=TRAIN)
                for a in range(spec.k) for s in (0, 1)}
            policy_name = "class-mean"
        elif spec.kind in ("condvae", "condvae_info"):
            policy_name = "p=1"
        else:
            policy_data["w_means"] = csvae_empirical_w_means(model, dataset, VALID)
            policy_name = "empirical-w-mean"

    counts = {(name, s): [0, 0] for name in clf.attr_names for s in (0, 1)}
    jobs = []
    for a in range(spec.k):
        for s in (0, 1):
            if policy == "identity":
                idx = np.flatnonzero(sub.y[:, a] == s)  # target = current state
            else:
                idx = np.flatnonzero(sub.y[:, a] == 1 - s)
            for lo in range(0, idx.size, 256):
                jobs.append((a, s, idx[lo:lo + 256]))

    def run(job):
        a, s, idx = job
        x, y = sub.x[idx], sub.y[idx].astype(np.float64)
        if policy == "identity":
            out = reconstruct(model, x, None if spec.kind == "vae" else y)
        else:
            out = _switched_batch(model, policy_data, x, y, a, s)
        pred = clf.predict(out)[:, a]
        return a, s, int((pred == s).sum()), idx.size

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    for a, s, hits, total in results:
        entry = counts[(clf.attr_names[a], s)]
        entry[0] += hits
        entry[1] += total

    per_attr = {}
    for name in clf.attr_names:
        h = counts[(name, 1)][0] + counts[(name, 0)][0]
        t = counts[(name, 1)][1] + counts[(name, 0)][1]
        per_attr[name] = h / max(t, 1)
    per_target = {}
    for s, key in ((1, "on"), (0, "off")):
        h = sum(counts[(name, s)][0] for name in clf.attr_names)
        t = sum(counts[(name, s)][1] for name in clf.attr_names)
        per_target[key] = h / max(t, 1)
    hits = sum(v[0] for v in counts.values())
    total = sum(v[1] for v in counts.values())
    return AccuracyReport(model_kind=spec.kind, policy=policy_name,
                          attr_names=clf.attr_names, per_attr=per_attr,
                          per_target=per_target, overall=hits / max(total, 1),
                          counts={k: tuple(v) for k, v in counts.items()})


# -- identity-paired MSE (ground-truth protocol) -------------------------------------------


@dataclass
class MseReport:
    model_kind: str
    l1: float                    # target vs changed, mean squared error
    original_vs_changed: float
    target_vs_original: float
    chosen: dict                 # (attr, target_state) -> chosen candidate

    def table(self) -> str:
        return (f"model: {self.model_kind}\n"
                f"{'target-changed':>16}{'original-changed':>18}{'target-original':>18}\n"
                f"{self.l1:>16.6f}{self.original_vs_changed:>18.6f}"
                f"{self.target_vs_original:>18.6f}")


def identity_pairs(dataset: LabeledDataset, group_size: int, split: int):
    """(attr, src_idx, tgt_idx) triples: same identity group, states differing
    in exactly the one attribute; both switching directions included."""
    idx = dataset.indices(split)
    groups = {}
    for i in idx:
        groups.setdefault(int(i) // group_size, []).append(int(i))
    pairs = []
    for members in groups.values():
        for a in range(dataset.k):
            for src in members:
                for tgt in members:
                    if src == tgt:
                        continue
                    dy = dataset.y[src] != dataset.y[tgt]
                    if dy[a] and dy.sum() == 1:
                        pairs.append((a, src, tgt))
    if not pairs:
        raise DataError("no identity pairs available in this split")
    return pairs


def default_candidates(model: Model) -> dict:
    """Candidate switch points per (attribute, target state)."""
    spec = model.spec
    out = {}
    for a in range(spec.k):
        if spec.kind == "csvae":
            out[(a, 1)] = w_grid(spec, a, steps=5).points
            out[(a, 0)] = w_grid(spec, a, steps=3, extent=2.0 * spec.prior_sigma_y0,
                                 center=spec.prior_mean_y0).points
        elif spec.kind in ("condvae", "condvae_info"):
            out[(a, 1)] = list(CONDVAE_P_CANDIDATES)
            out[(a, 0)] = [0.0]
        else:
            out[(a, 1)] = [None]
            out[(a, 0)] = [None]
    return out


def _switch_with_candidate(model, x, y, attr, target_state, candidate, class_means):
    kind = model.spec.kind
    if kind == "vae":
        return switch_vae(model, x, 1 - target_state, target_state,
                          {s: class_means[(attr, s)] for s in (0, 1)})
    if kind in ("condvae", "condvae_info"):
        return switch_condvae(model, x, y, attr, float(candidate))
    return switch_csvae(model, x, np.asarray(candidate))


def _pair_mse(model, dataset, pairs, attr_state, candidate, class_means, against="target"):
    errs = []
    by_key = {}
    for a, src, tgt in pairs:
        s = int(dataset.y[tgt, a])
        if (a, s) != attr_state:
            continue
        by_key.setdefault((a, s), []).append((src, tgt))
    for (a, s), members in by_key.items():
        src_idx = np.array([m[0] for m in members])
        tgt_idx = np.array([m[1] for m in members])
        out = _switch_with_candidate(model, dataset.x[src_idx],
                                     dataset.y[src_idx].astype(np.float64), a, s,
                                     candidate, class_means)
        ref = dataset.x[tgt_idx if against == "target" else src_idx].astype(np.float64)
        diff = (ref.reshape(len(members), -1) - out.reshape(len(members), -1))
        errs.extend((diff ** 2).mean(axis=1).tolist())
    return errs


def eval_identity_mse(model: Model, dataset: LabeledDataset, candidates: dict | None = None,
                      group_size: int | None = None) -> MseReport:
    """Pick each switch point by exhaustive sweep on validation pairs, then
    report the three MSE columns on test pairs."""
    spec = model.spec
    group_size = group_size or pair_group_size(dataset)
    candidates = candidates or default_candidates(model)
    class_means = None
    if spec.kind == "vae":
        class_means = {(a, s): class_latent_mean(model, dataset, a, s, split=TRAIN)
                       for a in range(spec.k) for s in (0, 1)}
    valid_pairs = identity_pairs(dataset, group_size, VALID)
    test_pairs = identity_pairs(dataset, group_size, TEST)

    chosen = {}
    for key, cands in candidates.items():
        scored = [_pair_mse(model, dataset, valid_pairs, key, c, class_means)
                  for c in cands]
        if not any(scored):
            raise DataError(f"no validation pairs for attribute/state {key}")
        chosen[key] = cands[int(np.argmin([float(np.mean(s)) for s in scored]))]

    l1_errs, orig_errs, base_errs = [], [], []
    for key, cand in chosen.items():
        l1_errs.extend(_pair_mse(model, dataset, test_pairs, key, cand, class_means))
        orig_errs.extend(_pair_mse(model, dataset, test_pairs, key, cand, class_means,
                                   against="original"))
    for a, src, tgt in test_pairs:
        d = dataset.x[tgt].astype(np.float64) - dataset.x[src].astype(np.float64)
        base_errs.append(float((d ** 2).mean()))
    return MseReport(model_kind=spec.kind,
                     l1=float(np.mean(l1_errs)),
                     original_vs_changed=float(np.mean(orig_errs)),
                     target_vs_original=float(np.mean(base_errs)),
                     chosen=chosen)


# -- mutual-information probe ------------------------------------------------------------


@dataclass
class MiEstimate:
    h_y: float
    h_y_given_z: float
    mi: float            # clamped below at zero
    mi_raw: float
    probe_accuracy: float


def empirical_label_entropy(y) -> float:
    """Entropy (nats) of the empirical marginal; independent binary attributes."""
    y = np.asarray(y, dtype=np.float64)
    total = 0.0
    for a in range(y.shape[1]):
        p = float(y[:, a].mean())
        for q in (p, 1.0 - p):
            if q > 0:
                total -= q * math.log(q)
    return total


def probe_mi_from_features(features, y, tags, seed: int, hidden=(64, 64)) -> MiEstimate:
    features = np.asarray(features, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    tags = np.asarray(tags)
    clf = fit_classifier(features, y, tags, seed, hidden=hidden)
    te = np.flatnonzero(tags == TEST)
    if te.size == 0:
        raise DataError("mi probe needs a non-empty test split")
    ce = categorical_cross_entropy(
        CategoricalDist(Tensor(clf.logits(features[te])), mode=BERNOULLI),
        y[te]).mean().item()
    h_y = empirical_label_entropy(y[te])
    raw = h_y - ce
    return MiEstimate(h_y=h_y, h_y_given_z=ce, mi=max(raw, 0.0), mi_raw=raw,
                      probe_accuracy=clf.accuracy(features[te], y[te]))


def mi_probe(model: Model, dataset: LabeledDataset, seed: int,
             hidden=None) -> MiEstimate:
    """Train a fresh probe on encoded z-means; the probe mirrors the
    adversary's architecture and is independent of it."""
    z = encode_z_means(model, dataset)
    return probe_mi_from_features(z, dataset.y, dataset.split_tags, seed,
                                  hidden=hidden or model.spec.adv_hidden)


def encode_z_means(model: Model, dataset: LabeledDataset) -> np.ndarray:
    out = np.empty((dataset.n, model.spec.z_dim))
    needs_y = model.spec.kind != "vae"
    for lo in range(0, dataset.n, 512):
        x = dataset.x[lo:lo + 512]
        y = dataset.y[lo:lo + 512].astype(np.float64) if needs_y else None
        out[lo:lo + 512] = encode(model, x, y).z
    return out


def encode_w_means(model: Model, dataset: LabeledDataset) -> np.ndarray:
    if model.spec.kind != "csvae":
        raise ValueError("w means require a csvae model")
    out = np.empty((dataset.n, model.spec.w_dim))
    for lo in range(0, dataset.n, 512):
        out[lo:lo + 512] = encode(model, dataset.x[lo:lo + 512],
                                  dataset.y[lo:lo + 512].astype(np.float64)).w
    return out
