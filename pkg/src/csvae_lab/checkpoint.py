"""CSVC checkpoint format.

Little-endian layout: magic "CSVC", version u32, kind u8, config echo
(u32 length + utf-8, canonical RunConfig text with resolved shapes), tensor
count u32, per tensor [name u16+utf-8, rank u8, dims u64 x rank, float32
data], an optional optimizer-state section tagged "OPTS" (epoch u32,
main/adversary step counters u64, then moment tensors in the same entry
format), and a CRC32 trailer over all preceding bytes.

Parameters are stored float32; loading a checkpoint therefore reproduces the
same inference outputs bit-for-bit every time, and re-saving a loaded model
reproduces the same file bytes.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, parse_config, serialize_config
from .errors import (DataError, DatasetChecksumError, DatasetMagicError,
                     DatasetTruncatedError, DatasetVersionError)
from .models import Model, ModelSpec, TrainState, build_model
from .optim import AdamState

MAGIC = b"CSVC"
VERSION = 1
OPT_TAG = b"OPTS"

KIND_CODES = {"vae": 0, "condvae": 1, "condvae_info": 2, "csvae": 3, "classifier": 4}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


@dataclass
class CheckpointData:
    kind: str
    config_text: str
    tensors: list              # [(name, float32 array)]
    opt_epoch: int | None = None
    opt_steps: tuple | None = None
    opt_tensors: list | None = None

    @property
    def config(self) -> RunConfig:
        return parse_config(self.config_text)


def _pack_tensor(name: str, array: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(array, dtype="<f4")
    parts = [struct.pack("<H", len(raw)), raw, struct.pack("<B", arr.ndim)]
    for d in arr.shape:
        parts.append(struct.pack("<Q", d))
    parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.blob):
            raise DatasetTruncatedError(
                f"checkpoint ends at byte {len(self.blob)}, needed {self.pos + count}")
        out = self.blob[self.pos:self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def tensor(self):
        (ln,) = self.unpack("H")
        name = self.take(ln).decode("utf-8")
        (rank,) = self.unpack("B")
        dims = self.unpack("Q" * rank) if rank else ()
        count = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(dims).copy()
        return name, data


def checkpoint_to_bytes(kind: str, config_text: str, tensors,
                        opt: tuple | None = None) -> bytes:
    """opt = (epoch, (main_step, adv_step), [(name, array), ...]) or None."""
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<B", KIND_CODES[kind])]
    raw_cfg = config_text.encode("utf-8")
    parts.append(struct.pack("<I", len(raw_cfg)))
    parts.append(raw_cfg)
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        parts.append(_pack_tensor(name, arr))
    if opt is not None:
        epoch, steps, opt_tensors = opt
        parts.append(OPT_TAG)
        parts.append(struct.pack("<IQQ", epoch, steps[0], steps[1]))
        parts.append(struct.pack("<I", len(opt_tensors)))
        for name, arr in opt_tensors:
            parts.append(_pack_tensor(name, arr))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def checkpoint_from_bytes(blob: bytes) -> CheckpointData:
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise DatasetMagicError("not a CSVC checkpoint file")
    (version,) = r.unpack("I")
    if version != VERSION:
        raise DatasetVersionError(f"unsupported checkpoint version {version}")
    (kind_code,) = r.unpack("B")
    if kind_code not in KIND_NAMES:
        raise DataError(f"unknown model kind code {kind_code}")
    (cfg_len,) = r.unpack("I")
    config_text = r.take(cfg_len).decode("utf-8")
    (count,) = r.unpack("I")
    tensors = [r.tensor() for _ in range(count)]
    opt_epoch = opt_steps = opt_tensors = None
    if len(blob) - r.pos > 4:
        tag = r.take(4)
        if tag != OPT_TAG:
            raise DataError(f"unexpected section tag {tag!r}")
        opt_epoch, s_main, s_adv = r.unpack("IQQ")
        opt_steps = (s_main, s_adv)
        (opt_count,) = r.unpack("I")
        opt_tensors = [r.tensor() for _ in range(opt_count)]
    (crc,) = r.unpack("I")
    if r.pos != len(blob):
        raise DataError(f"{len(blob) - r.pos} trailing bytes after checksum")
    if crc != zlib.crc32(blob[:r.pos - 4]):
        raise DatasetChecksumError("checkpoint CRC32 mismatch")
    return CheckpointData(kind=KIND_NAMES[kind_code], config_text=config_text,
                          tensors=tensors, opt_epoch=opt_epoch, opt_steps=opt_steps,
                          opt_tensors=opt_tensors)


# -- model <-> checkpoint -------------------------------------------------------------


def model_spec_from_config(cfg: RunConfig) -> ModelSpec:
    m = cfg.model
    if not m.x_shape:
        raise DataError("config does not carry a resolved x_shape")
    return ModelSpec(kind=m.kind, x_shape=tuple(m.x_shape), z_dim=m.z_dim, k=m.k,
                     w_dim_per_attr=m.w_dim_per_attr, enc_hidden=tuple(m.enc_hidden),
                     dec_hidden=tuple(m.dec_hidden), adv_hidden=tuple(m.adv_hidden),
                     conv_channels=tuple(m.conv_channels), arch=m.arch,
                     label_mode=m.label_mode,
                     betas=tuple(m.betas) if m.betas else None,
                     prior_mean_y1=m.prior_mean_y1, prior_sigma_y1=m.prior_sigma_y1,
                     prior_mean_y0=m.prior_mean_y0, prior_sigma_y0=m.prior_sigma_y0,
                     dec_logvar_clamp=m.dec_logvar_clamp,
                     adversary_ratio=m.adversary_ratio)


def save_model(path, model: Model, cfg: RunConfig, state: TrainState | None = None) -> None:
    tensors = [(name, p.data) for name, p in model.named_params()]
    opt = None
    if state is not None:
        opt_tensors = []
        for prefix, adam, params in (("main", state.adam_main, model.main_params),
                                     ("adv", state.adam_adv, model.adv_params)):
            if adam is None:
                continue
            for (name, _), m, v in zip(params, adam.m, adam.v):
                opt_tensors.append((f"{prefix}.m.{name}", m))
                opt_tensors.append((f"{prefix}.v.{name}", v))
        adv_step = state.adam_adv.step if state.adam_adv is not None else 0
        opt = (state.epoch, (state.adam_main.step, adv_step), opt_tensors)
    blob = checkpoint_to_bytes(model.spec.kind, serialize_config(cfg), tensors, opt)
    with open(path, "wb") as fh:
        fh.write(blob)


def _read_checkpoint(path) -> CheckpointData:
    try:
        with open(path, "rb") as fh:
            return checkpoint_from_bytes(fh.read())
    except FileNotFoundError as exc:
        raise DataError(f"checkpoint file not found: {path}") from exc


def load_model(path) -> tuple:
    """Returns (model, RunConfig, TrainState|None)."""
    data = _read_checkpoint(path)
    if data.kind == "classifier":
        raise DataError("this checkpoint holds a classifier; use load_classifier")
    cfg = data.config
    spec = model_spec_from_config(cfg)
    model = build_model(spec, seed=cfg.seed)
    _restore_params(model.named_params(), data.tensors, "model")
    model.trained_epochs = data.opt_epoch or 0
    state = None
    if data.opt_tensors is not None:
        state = TrainState.fresh(model)
        state.epoch = data.opt_epoch
        state.adam_main.step = data.opt_steps[0]
        if state.adam_adv is not None:
            state.adam_adv.step = data.opt_steps[1]
        lookup = dict(data.opt_tensors)
        for prefix, adam, params in (("main", state.adam_main, model.main_params),
                                     ("adv", state.adam_adv, model.adv_params)):
            if adam is None:
                continue
            for i, (name, _) in enumerate(params):
                adam.m[i][:] = lookup[f"{prefix}.m.{name}"].astype(np.float64)
                adam.v[i][:] = lookup[f"{prefix}.v.{name}"].astype(np.float64)
    return model, cfg, state


def _restore_params(named_params, tensors, what: str) -> None:
    stored = dict(tensors)
    for name, p in named_params:
        if name not in stored:
            raise DataError(f"{what} checkpoint is missing tensor {name!r}")
        arr = stored[name].astype(np.float64)
        if arr.shape != p.data.shape:
            raise DataError(f"tensor {name!r} has shape {arr.shape}, expected {p.data.shape}")
        p.data[:] = arr
    if len(stored) != len(list(named_params)):
        extra = set(stored) - {n for n, _ in named_params}
        raise DataError(f"{what} checkpoint carries unexpected tensors: {sorted(extra)}")


def save_classifier(path, clf, cfg: RunConfig) -> None:
    tensors = [(name, p.data) for name, p in clf.net.named_params()]
    tensors.append(("meta.val_accuracy", np.array(clf.val_accuracy)))
    tensors.append(("meta.majority_rate", np.array(clf.majority_rate)))
    blob = checkpoint_to_bytes("classifier", serialize_config(cfg), tensors, None)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_classifier(path):
    from .evaluation import AttrClassifier, _Net
    from . import rng as rngmod

    data = _read_checkpoint(path)
    if data.kind != "classifier":
        raise DataError("this checkpoint does not hold a classifier")
    cfg = data.config
    m = cfg.model
    meta = {n: float(a) for n, a in data.tensors if n.startswith("meta.")}
    tensors = [(n, a) for n, a in data.tensors if not n.startswith("meta.")]
    net = _Net(rngmod.purpose_stream(cfg.seed, rngmod.INIT), tuple(m.x_shape),
               m.k, tuple(m.adv_hidden), tuple(m.conv_channels))
    _restore_params(net.named_params(), tensors, "classifier")
    names = cfg.data.attributes if len(cfg.data.attributes) == m.k \
        else tuple(f"a{i}" for i in range(m.k))
    clf = AttrClassifier(net=net, mode=m.label_mode, attr_names=tuple(names),
                         val_accuracy=meta.get("meta.val_accuracy", 1.0),
                         majority_rate=meta.get("meta.majority_rate", 0.0))
    clf.usable = clf.val_accuracy > clf.majority_rate
    return clf, cfg
