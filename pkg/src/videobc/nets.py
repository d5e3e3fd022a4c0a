"""Network building blocks: encoder, heads, predictor, world model, policy."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigurationError

FEATURE_DIM = 128
LATENT_ACTION_DIM = 128


def obs_to_tensor(obs, device=None, dtype=torch.float32) -> torch.Tensor:
    """uint8 HWC (or NHWC) pixels -> float NCHW tensor scaled to [0, 1]."""
    arr = np.asarray(obs)
    if arr.ndim == 3:
        arr = arr[None]
    t = torch.from_numpy(np.ascontiguousarray(arr)).to(device=device, dtype=dtype)
    return t.permute(0, 3, 1, 2) / 255.0


def mlp(sizes, activation=nn.ReLU, out_act=None) -> nn.Sequential:
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(activation())
    if out_act is not None:
        layers.append(out_act())
    return nn.Sequential(*layers)


class FeatureEncoder(nn.Module):
    """Conv trunk (stride-2 layers) + affine head with layer norm and tanh.

    Output features live in (-1, 1)^feature_dim. The trunk depth is capped
    for small debug inputs so spatial size never collapses below 1.
    """

    def __init__(self, image_size: int, in_channels: int,
                 feature_dim: int = FEATURE_DIM, channels: int = 32,
                 n_layers: int = 4):
        super().__init__()
        self.image_size = image_size
        self.in_channels = in_channels
        self.feature_dim = feature_dim
        n_layers = min(n_layers, max(1, int(np.log2(image_size)) - 1))
        layers, c, size = [], in_channels, image_size
        for _ in range(n_layers):
            layers += [nn.Conv2d(c, channels, 3, stride=2, padding=1), nn.ReLU()]
            c = channels
            size = (size + 1) // 2
        self.trunk = nn.Sequential(*layers)
        self.out_size = size
        self.fc = nn.Linear(channels * size * size, feature_dim)
        self.norm = nn.LayerNorm(feature_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.in_channels or x.shape[2] != self.image_size:
            raise ConfigurationError(
                f"encoder expects {self.in_channels}x{self.image_size}"
                f"x{self.image_size} inputs, got {tuple(x.shape[1:])}")
        h = self.trunk(x).flatten(1)
        return torch.tanh(self.norm(self.fc(h)))


class ReconstructionDecoder(nn.Module):
    """Transposed-conv mirror of the encoder trunk; sigmoid pixels in [0, 1]."""

    def __init__(self, encoder: FeatureEncoder, channels: int = 32):
        super().__init__()
        size = encoder.out_size
        n_layers = sum(isinstance(m, nn.Conv2d) for m in encoder.trunk)
        self.size = size
        self.channels = channels
        self.fc = nn.Linear(encoder.feature_dim, channels * size * size)
        layers = []
        for i in range(n_layers):
            last = i == n_layers - 1
            out_c = encoder.in_channels if last else channels
            layers.append(nn.ConvTranspose2d(channels, out_c, 3, stride=2,
                                             padding=1, output_padding=1))
            if not last:
                layers.append(nn.ReLU())
        self.deconv = nn.Sequential(*layers)
        self.crop = encoder.image_size

    def forward(self, s: torch.Tensor) -> torch.Tensor:
        h = self.fc(s).view(-1, self.channels, self.size, self.size)
        out = torch.sigmoid(self.deconv(h))
        return out[:, :, :self.crop, :self.crop]


class ContrastiveHead(nn.Module):
    """Bilinear similarity matrix W plus asymmetric projection MLP u."""

    def __init__(self, feature_dim: int = FEATURE_DIM, hidden: int = 256):
        super().__init__()
        self.W = nn.Parameter(torch.eye(feature_dim))
        self.u = mlp([feature_dim, hidden, feature_dim])

    def logits(self, anchors: torch.Tensor, keys: torch.Tensor) -> torch.Tensor:
        """Pairwise scores u(s_i)^T W s'_j, shape (N, N)."""
        return self.u(anchors) @ self.W @ keys.T


class PrototypeBank(nn.Module):
    """Trainable prototype vectors, L2-renormalized after each optimizer step."""

    def __init__(self, n_prototypes: int, feature_dim: int = FEATURE_DIM,
                 temperature: float = 0.1):
        super().__init__()
        if n_prototypes < 2:
            raise ConfigurationError("need at least 2 prototypes")
        if temperature <= 0:
            raise ConfigurationError("temperature must be positive")
        self.temperature = temperature
        proto = torch.randn(n_prototypes, feature_dim)
        self.prototypes = nn.Parameter(proto / proto.norm(dim=1, keepdim=True))

    @torch.no_grad()
    def renormalize(self) -> None:
        self.prototypes.div_(self.prototypes.norm(dim=1, keepdim=True))


class LatentActionPredictor(nn.Module):
    """(s_t, s_{t+1}) -> continuous latent action."""

    def __init__(self, feature_dim: int = FEATURE_DIM,
                 latent_dim: int = LATENT_ACTION_DIM, hidden: int = 256):
        super().__init__()
        self.latent_dim = latent_dim
        self.net = mlp([2 * feature_dim, hidden, hidden, latent_dim])

    def forward(self, s: torch.Tensor, s_next: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([s, s_next], dim=-1))


class WorldModel(nn.Module):
    """(s_t, quantized latent action) -> predicted next feature."""

    def __init__(self, feature_dim: int = FEATURE_DIM,
                 latent_dim: int = LATENT_ACTION_DIM, hidden: int = 256):
        super().__init__()
        self.net = mlp([feature_dim + latent_dim, hidden, hidden, feature_dim])

    def forward(self, s: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([s, z], dim=-1))


class ActionDecoder(nn.Module):
    """Latent action -> real action (logits if discrete, tanh values if not)."""

    def __init__(self, latent_dim: int = LATENT_ACTION_DIM, n_actions: int = 5,
                 discrete: bool = True, hidden: int = 128):
        super().__init__()
        self.discrete = discrete
        self.n_actions = n_actions
        self.net = mlp([latent_dim, hidden, n_actions])

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        out = self.net(z)
        return out if self.discrete else torch.tanh(out)


class LatentPolicy(nn.Module):
    """Latent feature -> latent action."""

    def __init__(self, feature_dim: int = FEATURE_DIM,
                 latent_dim: int = LATENT_ACTION_DIM, hidden: int = 256):
        super().__init__()
        self.net = mlp([feature_dim, hidden, hidden, latent_dim])

    def forward(self, s: torch.Tensor) -> torch.Tensor:
        return self.net(s)
