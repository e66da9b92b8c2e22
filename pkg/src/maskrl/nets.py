"""Network architectures: shared visual encoder with a split latent, mask and
image decoders that each see only their half of the latent, a tanh actor, and
twin Q critics.

All parameter tensors are created from labeled rng substreams so that two
networks built from the same seed are identical regardless of construction
order elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .numerics import Tensor


def orthogonal(rng: nm.Rng, shape, dtype=np.float32) -> np.ndarray:
    """Orthogonal init (gain 1) on the (rows, flattened-cols) matrix."""
    rows = shape[0]
    cols = int(np.prod(shape[1:]))
    n = max(rows, cols)
    a = rng.normal(0.0, 1.0, (n, min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    q = q.T if rows < cols else q
    return np.ascontiguousarray(q[:rows, :cols].reshape(shape), dtype=dtype)


class Dense:
    def __init__(self, rng, n_in: int, n_out: int, dtype=np.float32):
        self.weight = Tensor(orthogonal(rng, (n_out, n_in), dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out, dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return nm.linear(x, self.weight, self.bias)

    def params(self, prefix):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


class Conv:
    def __init__(self, rng, c_in: int, c_out: int, k: int, stride: int, dtype=np.float32):
        self.weight = Tensor(orthogonal(rng, (c_out, c_in, k, k), dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, dtype), requires_grad=True)
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return nm.conv2d(x, self.weight, self.bias, stride=self.stride)

    def params(self, prefix):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


class ConvT:
    def __init__(self, rng, c_in: int, c_out: int, k: int, stride: int,
                 output_padding: int = 0, dtype=np.float32):
        self.weight = Tensor(orthogonal(rng, (c_in, c_out, k, k), dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, dtype), requires_grad=True)
        self.stride = stride
        self.output_padding = output_padding

    def __call__(self, x: Tensor) -> Tensor:
        return nm.conv_transpose2d(x, self.weight, self.bias,
                                   stride=self.stride, output_padding=self.output_padding)

    def params(self, prefix):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


class LayerNorm:
    def __init__(self, n: int, dtype=np.float32):
        self.gamma = Tensor(np.ones(n, dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(n, dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return nm.layer_norm(x, self.gamma, self.beta)

    def params(self, prefix):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]


class Network:
    """Base: hierarchical parameter naming, copying, checkpoint dicts."""

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def copy_params_from(self, other: "Network") -> None:
        for (na, a), (nb, b) in zip(self.named_parameters(), other.named_parameters()):
            assert na == nb and a.data.shape == b.data.shape
            np.copyto(a.data, b.data)

    def param_arrays(self, prefix: str) -> dict:
        return {f"{prefix}.{n}": t.data for n, t in self.named_parameters()}

    def load_param_arrays(self, prefix: str, arrays: dict) -> None:
        for n, t in self.named_parameters():
            src = arrays[f"{prefix}.{n}"]
            np.copyto(t.data, src.astype(t.data.dtype, copy=False))


def soft_update(target: Network, online: Network, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, in place."""
    for (_, t), (_, o) in zip(target.named_parameters(), online.named_parameters()):
        t.data *= (1.0 - tau)
        t.data += tau * o.data


def encoder_shape_trace(image_size: int) -> tuple[list[int], int]:
    """Spatial sizes [input, conv1..conv4] plus the pooled size."""
    sizes = [image_size]
    for stride in (2, 1, 1, 1):
        nxt = (sizes[-1] - 3) // stride + 1
        if nxt < 1:
            raise nm.DimensionError(f"image_size {image_size} too small for the conv stack")
        sizes.append(nxt)
    if sizes[-1] < 4:
        raise nm.DimensionError(f"image_size {image_size} leaves {sizes[-1]} < 4 for pooling")
    pooled = (sizes[-1] - 4) // 4 + 1
    return sizes, pooled


@dataclass
class LatentPair:
    """Positional split of the encoder output: first half drives the mask
    decoder, second half the image decoder."""
    z_r: Tensor
    z_e: Tensor
    full: Tensor


class Encoder(Network):
    """Four 3x3 convs (stride 2,1,1,1, 32 maps, ReLU) -> 4x4 average pool ->
    linear projection to an even latent dimension."""

    def __init__(self, rng: nm.Rng, in_channels: int, latent_dim: int,
                 image_size: int, gaussian: bool = False, dtype=np.float32):
        if latent_dim % 2:
            raise nm.DimensionError(f"latent_dim must be even, got {latent_dim}")
        self.in_channels = in_channels
        self.latent_dim = latent_dim
        self.image_size = image_size
        self.gaussian = gaussian
        sizes, pooled = encoder_shape_trace(image_size)
        self.conv_sizes = sizes
        self.pooled_size = pooled
        self.feat_dim = 32 * pooled * pooled
        self.convs = [
            Conv(rng.split("conv1"), in_channels, 32, 3, 2, dtype),
            Conv(rng.split("conv2"), 32, 32, 3, 1, dtype),
            Conv(rng.split("conv3"), 32, 32, 3, 1, dtype),
            Conv(rng.split("conv4"), 32, 32, 3, 1, dtype),
        ]
        self.fc = Dense(rng.split("fc"), self.feat_dim, latent_dim, dtype)
        self.fc_logvar = Dense(rng.split("fc_logvar"), self.feat_dim, latent_dim, dtype) if gaussian else None

    def conv_maps(self, obs: Tensor) -> Tensor:
        """Post-ReLU activation maps of the last conv layer (pre-pool)."""
        if obs.data.shape[-3] != self.in_channels:
            raise nm.DimensionError(
                f"expected {self.in_channels} channels, got {obs.data.shape[-3]}")
        h = obs
        for conv in self.convs:
            h = nm.relu(conv(h))
        return h

    def forward(self, obs: Tensor) -> Tensor:
        h = self._pooled_flat(obs)
        return self.fc(h)

    def _pooled_flat(self, obs: Tensor) -> Tensor:
        h = nm.avg_pool2d(self.conv_maps(obs), 4, 4)
        batch = h.data.shape[0] if h.data.ndim == 4 else None
        return nm.reshape(h, (batch, self.feat_dim) if batch is not None else (self.feat_dim,))

    def forward_gaussian(self, obs: Tensor) -> tuple[Tensor, Tensor]:
        if self.fc_logvar is None:
            raise RuntimeError("encoder built without a gaussian head")
        h = self._pooled_flat(obs)
        return self.fc(h), self.fc_logvar(h)

    def encode(self, obs: Tensor) -> LatentPair:
        return split_latent(self.forward(obs))

    def named_parameters(self):
        out = []
        for i, c in enumerate(self.convs, 1):
            out += c.params(f"conv{i}")
        out += self.fc.params("fc")
        if self.fc_logvar is not None:
            out += self.fc_logvar.params("fc_logvar")
        return out


def split_latent(z: Tensor) -> LatentPair:
    axis = z.data.ndim - 1
    half = z.data.shape[axis] // 2
    return LatentPair(
        z_r=nm.narrow(z, axis, 0, half),
        z_e=nm.narrow(z, axis, half, half),
        full=z,
    )


class Decoder(Network):
    """Linear+ReLU to the pooled feature volume, then five transpose convs
    mirroring the encoder back to the image plane.

    Output paddings are derived from the encoder's shape trace so the output
    matches the input image size exactly at any supported resolution.
    """

    def __init__(self, rng: nm.Rng, latent_in: int, out_channels: int,
                 image_size: int, output_activation: str,
                 first_channels: int = 16, dtype=np.float32):
        sizes, pooled = encoder_shape_trace(image_size)
        s0, s1, _, s3, s4 = sizes
        op_first = s4 - ((pooled - 1) * 4 + 4)
        op_last = s0 - ((s1 - 1) * 2 + 3)
        if not 0 <= op_first < 4 or not 0 <= op_last < 2:
            raise nm.DimensionError(f"unsupported image_size {image_size} for decoder mirror")
        self.out_channels = out_channels
        self.output_activation = output_activation
        self.pooled_size = pooled
        self.fc = Dense(rng.split("fc"), latent_in, 32 * pooled * pooled, dtype)
        self.tconvs = [
            ConvT(rng.split("tconv1"), 32, first_channels, 4, 4, op_first, dtype),
            ConvT(rng.split("tconv2"), first_channels, 32, 3, 1, 0, dtype),
            ConvT(rng.split("tconv3"), 32, 32, 3, 1, 0, dtype),
            ConvT(rng.split("tconv4"), 32, 32, 3, 1, 0, dtype),
            ConvT(rng.split("tconv5"), 32, out_channels, 3, 2, op_last, dtype),
        ]

    def forward(self, z: Tensor) -> Tensor:
        h = nm.relu(self.fc(z))
        batch = h.data.shape[0] if h.data.ndim == 2 else None
        p = self.pooled_size
        h = nm.reshape(h, (batch, 32, p, p) if batch is not None else (32, p, p))
        for t in self.tconvs[:-1]:
            h = nm.relu(t(h))
        h = self.tconvs[-1](h)
        if self.output_activation == "sigmoid":
            h = nm.sigmoid(h)
        return h

    def named_parameters(self):
        out = self.fc.params("fc")
        for i, t in enumerate(self.tconvs, 1):
            out += t.params(f"tconv{i}")
        return out


def make_mask_decoder(rng, latent_in, frame_stack, image_size,
                      first_channels=16, dtype=np.float32) -> Decoder:
    """One probability map per stacked frame; sigmoid output in (0, 1)."""
    return Decoder(rng, latent_in, frame_stack, image_size, "sigmoid", first_channels, dtype)


def make_recon_decoder(rng, latent_in, frame_stack, image_size,
                       first_channels=16, dtype=np.float32) -> Decoder:
    """Reconstructs the full stacked RGB observation; identity output."""
    return Decoder(rng, latent_in, 3 * frame_stack, image_size, "identity", first_channels, dtype)


class Actor(Network):
    """Trunk (linear -> layernorm -> tanh) then a ReLU MLP with tanh output."""

    def __init__(self, rng: nm.Rng, latent_dim: int, action_dim: int,
                 feature_dim: int = 50, hidden_dim: int = 1024, dtype=np.float32):
        self.action_dim = action_dim
        self.trunk = Dense(rng.split("trunk"), latent_dim, feature_dim, dtype)
        self.norm = LayerNorm(feature_dim, dtype)
        self.h1 = Dense(rng.split("h1"), feature_dim, hidden_dim, dtype)
        self.h2 = Dense(rng.split("h2"), hidden_dim, hidden_dim, dtype)
        self.out = Dense(rng.split("out"), hidden_dim, action_dim, dtype)

    def forward(self, latent: Tensor) -> Tensor:
        h = nm.tanh(self.norm(self.trunk(latent)))
        h = nm.relu(self.h1(h))
        h = nm.relu(self.h2(h))
        return nm.tanh(self.out(h))

    def action_tensor(self, latent: Tensor, std: float, clip: float, rng: nm.Rng) -> Tensor:
        """Mean action plus clipped Gaussian noise, clamped to [-1, 1].

        The noise is treated as a constant, so gradients flow through the
        mean path only; the final clamp is straight-through.
        """
        mean = self.forward(latent)
        if std <= 0.0:
            return mean
        noise = rng.normal(0.0, 1.0, mean.data.shape).astype(mean.data.dtype) * mean.data.dtype.type(std)
        np.clip(noise, -clip, clip, out=noise)
        shifted = nm.add(mean, Tensor(noise))
        return nm.clamp_passthrough(shifted, -1.0, 1.0)

    def act(self, latent: Tensor, std: float, clip: float,
            deterministic: bool, rng: nm.Rng) -> np.ndarray:
        with nm.no_grad():
            if deterministic or std <= 0.0:
                return self.forward(latent).data.copy()
            return self.action_tensor(latent, std, clip, rng).data.copy()

    def named_parameters(self):
        return (self.trunk.params("trunk") + self.norm.params("norm")
                + self.h1.params("h1") + self.h2.params("h2") + self.out.params("out"))


class TwinCritic(Network):
    """Shared trunk, two independent Q MLPs over (trunk features, action)."""

    def __init__(self, rng: nm.Rng, latent_dim: int, action_dim: int,
                 feature_dim: int = 50, hidden_dim: int = 1024, dtype=np.float32):
        self.trunk = Dense(rng.split("trunk"), latent_dim, feature_dim, dtype)
        self.norm = LayerNorm(feature_dim, dtype)
        self.heads = []
        for qi in (1, 2):
            hrng = rng.split(f"q{qi}")
            self.heads.append((
                Dense(hrng.split("h1"), feature_dim + action_dim, hidden_dim, dtype),
                Dense(hrng.split("h2"), hidden_dim, hidden_dim, dtype),
                Dense(hrng.split("out"), hidden_dim, 1, dtype),
            ))

    def forward(self, latent: Tensor, action: Tensor) -> tuple[Tensor, Tensor]:
        h = nm.tanh(self.norm(self.trunk(latent)))
        ha = nm.concat([h, action], axis=h.data.ndim - 1)
        qs = []
        for h1, h2, out in self.heads:
            q = nm.relu(h1(ha))
            q = nm.relu(h2(q))
            qs.append(out(q))
        return qs[0], qs[1]

    def q_values(self, latent: Tensor, action: Tensor) -> tuple[float, float]:
        with nm.no_grad():
            q1, q2 = self.forward(latent, action)
        return float(q1.data.reshape(-1)[0]), float(q2.data.reshape(-1)[0])

    def named_parameters(self):
        out = self.trunk.params("trunk") + self.norm.params("norm")
        for qi, (h1, h2, o) in enumerate(self.heads, 1):
            out += h1.params(f"q{qi}.h1") + h2.params(f"q{qi}.h2") + o.params(f"q{qi}.out")
        return out
