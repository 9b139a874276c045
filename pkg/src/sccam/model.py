"""The SCCAM network: 1x1-conv encoder, CBAM block, projection head and linear classifier."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import binfmt
from . import tensor as T
from .attention import ChannelAttentionParams, SpatialAttentionParams, cbam_forward, uniform_init
from .errors import ConfigError, FormatError, ShapeError
from .tensor import BatchNormState, Tensor

CHECKPOINT_MAGIC = b"SCCAMCKP"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    height: int              # process variables per window
    width: int               # timesteps per window
    n_classes: int = 2
    channels: tuple = (16, 32)
    reduction: int = 4
    alpha: int = 7
    hidden: int = 128
    embed_dim: int = 64
    normalize: bool = True   # L2-normalize embeddings before the losses
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ConfigError("window dims must be positive")
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if self.embed_dim < 2:
            raise ConfigError(f"embedding dim must be >= 2, got {self.embed_dim}")
        if self.alpha % 2 == 0:
            raise ConfigError(f"spatial filter size must be odd, got {self.alpha}")
        if self.channels[-1] % self.reduction:
            raise ConfigError(f"reduction {self.reduction} does not divide {self.channels[-1]} channels")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        return cls(**d)


@dataclass
class EncoderParams:
    conv1_kernel: Tensor
    conv1_bias: Tensor
    bn1_gamma: Tensor
    bn1_beta: Tensor
    conv2_kernel: Tensor
    conv2_bias: Tensor
    bn2_gamma: Tensor
    bn2_beta: Tensor
    channel: ChannelAttentionParams
    spatial: SpatialAttentionParams
    proj_w1: Tensor
    proj_w2: Tensor
    bn1: BatchNormState = None
    bn2: BatchNormState = None

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "EncoderParams":
        c1, c2 = cfg.channels
        flat = c2 * cfg.height * cfg.width
        return cls(
            conv1_kernel=uniform_init(rng, (c1, 1), 1, "conv1.kernel"),
            conv1_bias=uniform_init(rng, (c1,), 1, "conv1.bias"),
            bn1_gamma=Tensor(np.ones(c1), requires_grad=True, name="bn1.gamma"),
            bn1_beta=Tensor(np.zeros(c1), requires_grad=True, name="bn1.beta"),
            conv2_kernel=uniform_init(rng, (c2, c1), c1, "conv2.kernel"),
            conv2_bias=uniform_init(rng, (c2,), c1, "conv2.bias"),
            bn2_gamma=Tensor(np.ones(c2), requires_grad=True, name="bn2.gamma"),
            bn2_beta=Tensor(np.zeros(c2), requires_grad=True, name="bn2.beta"),
            channel=ChannelAttentionParams.init(c2, cfg.reduction, rng),
            spatial=SpatialAttentionParams.init(cfg.alpha, rng),
            proj_w1=uniform_init(rng, (cfg.hidden, flat), flat, "proj.w1"),
            proj_w2=uniform_init(rng, (cfg.embed_dim, cfg.hidden), cfg.hidden, "proj.w2"),
            bn1=BatchNormState(c1, cfg.bn_momentum),
            bn2=BatchNormState(c2, cfg.bn_momentum),
        )

    def tensors(self) -> dict:
        """Trainable tensors in their fixed serialization order."""
        return {
            "conv1.kernel": self.conv1_kernel, "conv1.bias": self.conv1_bias,
            "bn1.gamma": self.bn1_gamma, "bn1.beta": self.bn1_beta,
            "conv2.kernel": self.conv2_kernel, "conv2.bias": self.conv2_bias,
            "bn2.gamma": self.bn2_gamma, "bn2.beta": self.bn2_beta,
            "cbam.w0": self.channel.w0, "cbam.w1": self.channel.w1,
            "cbam.spatial_kernel": self.spatial.kernel, "cbam.spatial_bias": self.spatial.bias,
            "proj.w1": self.proj_w1, "proj.w2": self.proj_w2,
        }


@dataclass
class ClassifierParams:
    weight: Tensor  # M x D_z, no bias

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "ClassifierParams":
        return cls(uniform_init(rng, (cfg.n_classes, cfg.embed_dim), cfg.embed_dim, "classifier.weight"))


@dataclass
class ForwardArtifacts:
    embedding: Tensor     # B x D_z
    refined: Tensor       # B x 32 x H x W (F_S)
    channel_map: Tensor   # B x 32 x 1 x 1
    spatial_map: Tensor   # B x 1 x H x W
    logits: Optional[Tensor] = None


@dataclass
class Classification:
    logits: np.ndarray
    probabilities: np.ndarray
    labels: np.ndarray


def _as_batch(x, cfg: ModelConfig) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.ndim == 3:
        t = T.reshape(t, (t.shape[0], 1) + t.shape[1:])
    if t.ndim != 4 or t.shape[1] != 1:
        raise ShapeError(f"expected B x H x W or B x 1 x H x W windows, got {t.shape}")
    if t.shape[2:] != (cfg.height, cfg.width):
        raise ShapeError(f"window is {t.shape[2]} x {t.shape[3]}, model expects {cfg.height} x {cfg.width}")
    return t


def encoder_forward(x, enc: EncoderParams, cfg: ModelConfig, mode: str = "infer") -> ForwardArtifacts:
    """conv-BN-ReLU x2, CBAM, flatten, projection head; embeddings optionally L2-normalized."""
    h = _as_batch(x, cfg)
    h = T.relu(T.batch_norm(T.conv_pointwise(h, enc.conv1_kernel, enc.conv1_bias),
                            enc.bn1_gamma, enc.bn1_beta, enc.bn1, mode, cfg.bn_eps))
    h = T.relu(T.batch_norm(T.conv_pointwise(h, enc.conv2_kernel, enc.conv2_bias),
                            enc.bn2_gamma, enc.bn2_beta, enc.bn2, mode, cfg.bn_eps))
    cb = cbam_forward(h, enc.channel, enc.spatial)
    hidden = T.relu(T.dense(T.flatten(cb.refined), enc.proj_w1))
    z = T.dense(hidden, enc.proj_w2)
    if cfg.normalize:
        z = T.l2_normalize(z)
    return ForwardArtifacts(z, cb.refined, cb.channel_map, cb.spatial_map)


def classifier_logits(z: Tensor, clf: ClassifierParams) -> Tensor:
    if z.shape[-1] != clf.weight.shape[1]:
        raise ShapeError(f"embedding dim {z.shape[-1]} does not match classifier input {clf.weight.shape[1]}")
    return T.dense(z, clf.weight)


def classify(z, clf: ClassifierParams) -> Classification:
    """Logits, softmax probabilities and argmax labels (ties go to the lowest class index)."""
    zt = z if isinstance(z, Tensor) else Tensor(z)
    logits = classifier_logits(zt, clf).data
    probs = T.softmax(logits, axis=-1)
    return Classification(logits, probs, np.argmax(logits, axis=-1))


@dataclass
class SCCAM:
    """Encoder plus classifier, with the config that shaped them."""

    config: ModelConfig
    encoder: EncoderParams
    classifier: ClassifierParams
    extras: dict = field(default_factory=dict)  # e.g. standardizer moments carried in checkpoints

    @classmethod
    def init(cls, config: ModelConfig) -> "SCCAM":
        rng = np.random.default_rng(config.seed)
        return cls(config, EncoderParams.init(config, rng), ClassifierParams.init(config, rng))

    def forward(self, x, mode: str = "infer") -> ForwardArtifacts:
        art = encoder_forward(x, self.encoder, self.config, mode)
        art.logits = classifier_logits(art.embedding, self.classifier)
        return art

    def predict(self, x, batch_size: int = 256) -> Classification:
        windows = np.asarray(x, dtype=np.float64)
        parts = [classify(encoder_forward(windows[i:i + batch_size], self.encoder, self.config).embedding,
                          self.classifier) for i in range(0, len(windows), batch_size)]
        return Classification(*(np.concatenate([getattr(p, k) for p in parts])
                                for k in ("logits", "probabilities", "labels")))

    def tensors(self) -> dict:
        return {**self.encoder.tensors(), "classifier.weight": self.classifier.weight}

    # -- checkpointing -------------------------------------------------------

    def to_bytes(self) -> bytes:
        arrays = {name: t.data for name, t in self.tensors().items()}
        for tag, bn in (("bn1", self.encoder.bn1), ("bn2", self.encoder.bn2)):
            if bn.initialized:
                arrays[f"{tag}.running_mean"] = bn.running_mean
                arrays[f"{tag}.running_var"] = bn.running_var
        for name, arr in self.extras.items():
            arrays[f"extra.{name}"] = arr
        return binfmt.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, {"config": self.config.to_dict()}, arrays)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SCCAM":
        header, arrays = binfmt.unpack(data, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
        cfg = ModelConfig.from_dict(header["config"])
        model = cls.init(cfg)
        for name, t in model.tensors().items():
            if name not in arrays:
                raise FormatError(f"checkpoint lacks parameter {name!r}")
            if arrays[name].shape != t.shape:
                raise FormatError(f"parameter {name!r} has shape {arrays[name].shape}, expected {t.shape}")
            t.data = arrays[name]
        for tag, bn in (("bn1", model.encoder.bn1), ("bn2", model.encoder.bn2)):
            if f"{tag}.running_mean" in arrays:
                bn.running_mean = arrays[f"{tag}.running_mean"]
                bn.running_var = arrays[f"{tag}.running_var"]
        model.extras = {k[len("extra."):]: v for k, v in arrays.items() if k.startswith("extra.")}
        return model

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "SCCAM":
        return cls.from_bytes(Path(path).read_bytes())


def serialize_params(model: SCCAM) -> bytes:
    return model.to_bytes()


def deserialize_params(data: bytes) -> SCCAM:
    return SCCAM.from_bytes(data)
