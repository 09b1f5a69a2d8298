"""LAGAN generator and discriminator.

Generator::

    z (latent) * embed[class] -> dense -> 9x9xC0 -> BN/leaky
      -> conv same 5x5 (64) -> upsample -> LC 5x5 (6) -> upsample
      -> LC 3x3 (6) -> LC 2x2 (1, no bias) -> ReLU          (25x25x1)

Discriminator::

    image -> conv same 5x5 (32) -> LC 5x5 (8) -> LC 5x5 (8) -> LC 3x3 (8)
      -> flatten -> minibatch discrimination (20 x 10) -> concat
      -> two sigmoid heads: P(real), P(signal)

Every weighted hidden layer is followed by a leaky ReLU; batch
normalisation follows the leaky ReLU where the architecture calls for it.
Setting ``local=False`` swaps every locally connected layer for a
convolution of the same field, giving the DCGAN-style baseline.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Iterator

import numpy as np

from lagan.nn import ops
from lagan.nn.ops import BatchNormState, DimensionError, valid_extent
from lagan.nn.tensor import Tensor, no_grad

SIGNAL = 1
BACKGROUND = 0

LAYER_KINDS = (
    "dense",
    "conv2d",
    "local2d",
    "batchnorm",
    "upsample2x",
    "relu",
    "leaky_relu",
    "sigmoid",
    "minibatch_disc",
    "hadamard_embed",
)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    field: int = 1
    stride: int = 1
    maps: int = 1
    border: str = "valid"
    slope: float = 0.2
    kernels: int = 20
    kernel_dim: int = 10
    bias: bool = True

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.field < 1 or self.stride < 1 or self.maps < 1:
            raise ValueError(f"F, S, N must be >= 1: {self}")
        if self.border not in ("same", "valid"):
            raise ValueError(f"unknown border mode {self.border!r}")

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Per-sample output shape (no batch axis)."""
        if self.kind in ("conv2d", "local2d"):
            length = in_shape[0]
            if self.border == "same":
                if self.stride != 1:
                    raise DimensionError("same border supports stride 1 only")
                return (length, length, self.maps)
            w = valid_extent(length, self.field, self.stride)
            return (w, w, self.maps)
        if self.kind == "upsample2x":
            return (2 * in_shape[0], 2 * in_shape[1], in_shape[2])
        if self.kind == "dense":
            return (self.maps,)
        if self.kind == "minibatch_disc":
            return (self.kernels,)
        return tuple(in_shape)


@dataclass(frozen=True)
class LaganConfig:
    latent_dim: int = 200
    n_classes: int = 2
    image_size: int = 25
    proj_size: int = 9
    proj_channels: int = 64
    g_conv: tuple[int, int] = (64, 5)  # (maps, field)
    g_local: tuple[tuple[int, int], ...] = ((6, 5), (6, 3))
    g_head_field: int = 2
    g_head_gain: float = 0.01  # scales the output layer's initial weights
    # sparse start: shift the output layer's inputs positive and its weights
    # negative so only ~10% of pixels begin lit (real jets light ~4%)
    g_head_input_shift: float = 1.0
    g_head_offset: float = 0.27  # in units of the head weights' spread
    d_conv: tuple[int, int] = (32, 5)
    d_local: tuple[tuple[int, int], ...] = ((8, 5), (8, 5), (8, 3))
    mbd_kernels: int = 20
    mbd_dim: int = 10
    leaky_slope: float = 0.2
    intensity_scale: float = 100.0
    local: bool = True
    bn_momentum: float = 0.99
    bn_epsilon: float = 1e-5

    @classmethod
    def tiny(cls, **overrides) -> "LaganConfig":
        """A 7x7 miniature with the same topology, for gradient checks."""
        base = cls(
            latent_dim=4,
            image_size=7,
            proj_size=3,
            proj_channels=2,
            g_conv=(2, 3),
            g_local=((2, 2), (2, 3)),
            g_head_field=2,
            d_conv=(2, 3),
            d_local=((2, 3), (2, 2), (2, 2)),
            mbd_kernels=3,
            mbd_dim=2,
            intensity_scale=1.0,
        )
        return replace(base, **overrides)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LaganConfig":
        d = dict(d)
        for key in ("g_conv", "d_conv"):
            d[key] = tuple(d[key])
        for key in ("g_local", "d_local"):
            d[key] = tuple(tuple(x) for x in d[key])
        return cls(**d)

    def generator_layers(self) -> list[tuple[str, LayerSpec]]:
        sl = self.leaky_slope
        lk = "local2d" if self.local else "conv2d"
        layers: list[tuple[str, LayerSpec]] = [
            ("g.conv1", LayerSpec("conv2d", field=self.g_conv[1], maps=self.g_conv[0], border="same")),
            ("g.act1", LayerSpec("leaky_relu", slope=sl)),
            ("g.bn1", LayerSpec("batchnorm")),
        ]
        for k, (maps, fld) in enumerate(self.g_local, start=2):
            layers += [
                (f"g.up{k}", LayerSpec("upsample2x")),
                (f"g.lc{k}", LayerSpec(lk, field=fld, maps=maps)),
                (f"g.act{k}", LayerSpec("leaky_relu", slope=sl)),
                (f"g.bn{k}", LayerSpec("batchnorm")),
            ]
        layers += [
            ("g.head", LayerSpec(lk, field=self.g_head_field, maps=1, bias=False)),
            ("g.out", LayerSpec("relu")),
        ]
        return layers

    def discriminator_layers(self) -> list[tuple[str, LayerSpec]]:
        sl = self.leaky_slope
        lk = "local2d" if self.local else "conv2d"
        layers: list[tuple[str, LayerSpec]] = [
            ("d.conv1", LayerSpec("conv2d", field=self.d_conv[1], maps=self.d_conv[0], border="same")),
            ("d.act1", LayerSpec("leaky_relu", slope=sl)),
        ]
        for k, (maps, fld) in enumerate(self.d_local, start=2):
            layers += [
                (f"d.lc{k}", LayerSpec(lk, field=fld, maps=maps)),
                (f"d.act{k}", LayerSpec("leaky_relu", slope=sl)),
                (f"d.bn{k}", LayerSpec("batchnorm")),
            ]
        return layers

    def generator_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        shape: tuple[int, ...] = (self.proj_size, self.proj_size, self.proj_channels)
        out = [("g.proj", shape)]
        for name, spec in self.generator_layers():
            shape = spec.output_shape(shape)
            out.append((name, shape))
        if shape != (self.image_size, self.image_size, 1):
            raise DimensionError(f"generator produces {shape}, expected {self.image_size}x{self.image_size}x1")
        return out

    def discriminator_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        shape: tuple[int, ...] = (self.image_size, self.image_size, 1)
        out = []
        for name, spec in self.discriminator_layers():
            shape = spec.output_shape(shape)
            out.append((name, shape))
        return out


# ----------------------------------------------------------------------------
# parameters


@dataclass
class LaganParams:
    """All trainable arrays plus batch-norm running statistics, addressed by name."""

    config: LaganConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)
    bn: dict[str, BatchNormState] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.tensors if n.startswith(prefix)]

    def group(self, prefix: str) -> list[Tensor]:
        return [t for n, t in self.tensors.items() if n.startswith(prefix)]

    def iter_named(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.tensors.items())

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {name: t.values for name, t in self.tensors.items()}
        for name, st in self.bn.items():
            out[f"{name}.running_mean"] = st.mean
            out[f"{name}.running_var"] = st.var
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        expected = set(self.to_arrays())
        if set(arrays) != expected:
            missing = sorted(expected - set(arrays))
            extra = sorted(set(arrays) - expected)
            raise KeyError(f"checkpoint mismatch; missing={missing[:5]} extra={extra[:5]}")
        for name, t in self.tensors.items():
            if arrays[name].shape != t.shape:
                raise DimensionError(f"{name}: checkpoint shape {arrays[name].shape} != {t.shape}")
            t.values = np.array(arrays[name], dtype=np.float64)
        for name, st in self.bn.items():
            st.mean = np.array(arrays[f"{name}.running_mean"], dtype=np.float64)
            st.var = np.array(arrays[f"{name}.running_var"], dtype=np.float64)

    def copy(self) -> "LaganParams":
        clone = init_params(self.config, np.random.default_rng(0))
        clone.load_arrays({k: v.copy() for k, v in self.to_arrays().items()})
        return clone


def _he(rng: np.random.Generator, fan_in: int, shape, slope: float = 0.0) -> np.ndarray:
    std = np.sqrt(2.0 / ((1.0 + slope**2) * fan_in))
    return rng.normal(0.0, std, size=shape)


def init_params(config: LaganConfig, rng: np.random.Generator) -> LaganParams:
    p = LaganParams(config)
    t = p.tensors
    sl = config.leaky_slope

    def add(name, values):
        t[name] = Tensor(values, requires_grad=True, name=name)

    def add_bn(name, channels):
        add(f"{name}.gamma", np.ones(channels))
        add(f"{name}.beta", np.zeros(channels))
        p.bn[name] = BatchNormState(channels, config.bn_momentum, config.bn_epsilon)

    def add_weighted(name, spec: LayerSpec, in_shape, out_shape):
        cin = in_shape[-1]
        fan_in = spec.field * spec.field * cin
        slope = 0.0 if name == "g.head" else sl
        # a He-scaled head times intensity_scale would start every image two
        # orders of magnitude brighter and denser than a real jet
        gain = config.g_head_gain if name == "g.head" else 1.0
        if spec.kind == "conv2d":
            add(f"{name}.w", gain * _he(rng, fan_in, (spec.field, spec.field, cin, spec.maps), slope))
            if spec.bias:
                add(f"{name}.b", np.zeros(spec.maps))
        else:
            w = out_shape[0]
            add(f"{name}.w", gain * _he(rng, fan_in, (w, w, spec.field, spec.field, cin, spec.maps), slope))
            if spec.bias:
                add(f"{name}.b", np.zeros((w, w, spec.maps)))

    # generator
    latent = config.latent_dim
    add("g.embed", 1.0 + 0.1 * rng.normal(size=(config.n_classes, latent)))
    proj = config.proj_size * config.proj_size * config.proj_channels
    add("g.proj.w", rng.normal(0.0, 1.0 / np.sqrt(latent), size=(latent, proj)))
    add("g.proj.b", np.zeros(proj))
    add_bn("g.bn0", config.proj_channels)
    shape = (config.proj_size, config.proj_size, config.proj_channels)
    for name, spec in config.generator_layers():
        out = spec.output_shape(shape)
        if spec.kind in ("conv2d", "local2d"):
            add_weighted(name, spec, shape, out)
        elif spec.kind == "batchnorm":
            add_bn(name, shape[-1])
        shape = out
    last_bn = [name for name, spec in config.generator_layers() if spec.kind == "batchnorm"][-1]
    t[f"{last_bn}.beta"].values[:] = config.g_head_input_shift
    head = t["g.head.w"].values
    head -= config.g_head_offset * head.std()

    # discriminator
    shape = (config.image_size, config.image_size, 1)
    for name, spec in config.discriminator_layers():
        out = spec.output_shape(shape)
        if spec.kind in ("conv2d", "local2d"):
            add_weighted(name, spec, shape, out)
        elif spec.kind == "batchnorm":
            add_bn(name, shape[-1])
        shape = out
    flat = int(np.prod(shape))
    add("d.mbd.kernel", rng.normal(0.0, 0.2 / np.sqrt(flat), size=(flat, config.mbd_kernels, config.mbd_dim)))
    width = flat + config.mbd_kernels
    for head in ("d.real", "d.aux"):
        add(f"{head}.w", rng.normal(0.0, 1.0 / np.sqrt(width), size=(width, 1)))
        add(f"{head}.b", np.zeros(1))
    return p


# ----------------------------------------------------------------------------
# forward passes


def _apply(
    params: LaganParams,
    name: str,
    spec: LayerSpec,
    x: Tensor,
    training: bool,
    update_stats: bool,
) -> Tensor:
    t = params.tensors
    if spec.kind == "conv2d":
        return ops.conv2d(x, t[f"{name}.w"], t.get(f"{name}.b"), border=spec.border, stride=spec.stride)
    if spec.kind == "local2d":
        return ops.local2d(x, t[f"{name}.w"], t.get(f"{name}.b"), border=spec.border, stride=spec.stride)
    if spec.kind == "batchnorm":
        return ops.batchnorm(
            x, t[f"{name}.gamma"], t[f"{name}.beta"], params.bn[name], training, update_stats
        )
    if spec.kind == "upsample2x":
        return ops.upsample2x(x)
    if spec.kind in ("relu", "leaky_relu", "sigmoid"):
        return ops.activation(x, spec.kind, spec.slope)
    raise ValueError(f"layer kind {spec.kind!r} is not a body layer")


def generator_forward(
    params: LaganParams,
    z: Tensor,
    class_index,
    training: bool = False,
    update_stats: bool = True,
    trace: dict | None = None,
) -> Tensor:
    """Differentiable generator pass; output is in GeV, shape [B, L, L, 1]."""
    cfg = params.config
    t = params.tensors
    z = z if isinstance(z, Tensor) else Tensor(z)
    h = ops.hadamard_embed(z, class_index, t["g.embed"])
    h = ops.dense(h, t["g.proj.w"], t["g.proj.b"])
    h = ops.reshape(h, (z.shape[0], cfg.proj_size, cfg.proj_size, cfg.proj_channels))
    h = ops.leaky_relu(h, cfg.leaky_slope)
    h = ops.batchnorm(h, t["g.bn0.gamma"], t["g.bn0.beta"], params.bn["g.bn0"], training, update_stats)
    if trace is not None:
        trace["g.proj"] = h.shape[1:]
    for name, spec in cfg.generator_layers():
        h = _apply(params, name, spec, h, training, update_stats)
        if trace is not None:
            trace[name] = h.shape[1:]
    if cfg.intensity_scale != 1.0:
        h = ops.scale(h, cfg.intensity_scale)
    return h


def discriminator_forward(
    params: LaganParams,
    images: Tensor,
    training: bool = False,
    update_stats: bool = True,
    trace: dict | None = None,
) -> tuple[Tensor, Tensor]:
    """Differentiable discriminator pass returning (real logit, signal logit), each [B]."""
    cfg = params.config
    t = params.tensors
    x = images if isinstance(images, Tensor) else Tensor(images)
    if x.ndim == 3:
        x = ops.reshape(x, x.shape + (1,))
    if x.shape[1:] != (cfg.image_size, cfg.image_size, 1):
        raise DimensionError(f"discriminator expects [B,{cfg.image_size},{cfg.image_size},1], got {x.shape}")
    if training and x.shape[0] < 2:
        raise ops.DegenerateBatchError("discriminator in train mode needs a batch of at least 2")
    if cfg.intensity_scale != 1.0:
        x = ops.scale(x, 1.0 / cfg.intensity_scale)
    h = x
    for name, spec in cfg.discriminator_layers():
        h = _apply(params, name, spec, h, training, update_stats)
        if trace is not None:
            trace[name] = h.shape[1:]
    flat = ops.flatten(h)
    if flat.shape[0] >= 2:
        mb = ops.minibatch_disc(flat, t["d.mbd.kernel"])
    else:
        # a lone sample has no partners; its similarity sum is empty
        mb = Tensor(np.zeros((1, cfg.mbd_kernels)))
    feats = ops.concat([flat, mb], axis=-1)
    if trace is not None:
        trace["d.features"] = feats.shape[1:]
    real = ops.dense(feats, t["d.real.w"], t["d.real.b"])
    aux = ops.dense(feats, t["d.aux.w"], t["d.aux.b"])
    return ops.reshape(real, (-1,)), ops.reshape(aux, (-1,))


def generate(params: LaganParams, z, class_index) -> np.ndarray:
    """Inference-mode generation: [B, latent] -> [B, L, L, 1], non-negative, deterministic."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("latent vectors must be finite")
    with no_grad():
        return generator_forward(params, Tensor(z), class_index, training=False).values


def discriminate(params: LaganParams, images, training: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Return (P(real), P(signal)) per image."""
    with no_grad():
        real, aux = discriminator_forward(params, Tensor(np.asarray(images, dtype=np.float64)), training, False)
    return ops._sigmoid(real.values), ops._sigmoid(aux.values)


def sample_latent(rng: np.random.Generator, n: int, latent_dim: int) -> np.ndarray:
    return rng.standard_normal((n, latent_dim))
