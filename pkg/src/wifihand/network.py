"""The forward model: bias-free grouped signal embedding, shared
multi-scale encoder with four pathways, a residual mask decoder and an
MLP pose decoder."""

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import csi as csi_mod
from . import hand_model as hm
from .errors import ConfigError, ShapeError


def _ceil_half(x):
    return (x + 1) // 2


def upsample_schedule(start, target):
    """Output-padding schedule of stride-2 transposed 5x5 stages taking a
    square grid from ``start`` to ``target`` (each stage doubles the side
    or doubles-minus-one)."""
    ops = []
    t = target
    while t > start:
        if t % 2 == 0:
            ops.append(1)
            t //= 2
        else:
            ops.append(0)
            t = (t + 1) // 2
    if t != start:
        raise ConfigError(f"cannot upsample {start} -> {target} by doubling stages")
    return list(reversed(ops))


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters.

    Defaults are a compact desk-scale reference (well under 5M
    parameters); every width is configurable.
    """

    subcarriers: int = 114
    packets: int = 20
    antennas: int = 3
    embedding_enabled: bool = True
    embed_filters: int = 8
    embed_two_weight: bool = False
    multi_task: bool = True
    stem_channels: int = 16
    block_channels: tuple = (32, 48)
    latent_dim: int = 64
    mask_side: int = 114
    mask_grid: int = 4
    mask_channels: int = 32
    mask_residual_blocks: int = 14
    pose_hidden: tuple = (128, 128)

    def __post_init__(self):
        sizes = (
            self.subcarriers, self.packets, self.antennas, self.embed_filters,
            self.stem_channels, self.latent_dim, self.mask_side, self.mask_grid,
            self.mask_channels, self.mask_residual_blocks,
            *self.block_channels, *self.pose_hidden,
        )
        if any(s <= 0 for s in sizes):
            raise ConfigError("all sizes must be positive")
        if any(c % 4 for c in self.block_channels):
            raise ConfigError("block channels must be divisible by 4 (4 pathways)")
        upsample_schedule(self.mask_grid, self.mask_side)

    def encoder_in_channels(self):
        if self.embedding_enabled:
            return self.embed_filters * self.antennas
        return 2 * self.antennas

    def as_dict(self):
        d = asdict(self)
        d["block_channels"] = list(self.block_channels)
        d["pose_hidden"] = list(self.pose_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["block_channels"] = tuple(d["block_channels"])
        d["pose_hidden"] = tuple(d["pose_hidden"])
        return cls(**d)


class RFEmbedding(nn.Module):
    """Grouped 1x1 point-wise convolution over (real, imaginary) channel
    pairs, one filter bank per antenna, no bias.

    The shared-weight form computes w_i * (a + b); the two-weight
    variant w_i1*a + w_i2*b is kept behind a flag for ablation.
    """

    def __init__(self, antennas, filters, two_weight=False):
        super().__init__()
        self.antennas = antennas
        self.filters = filters
        self.two_weight = two_weight
        in_per_group = 2 if two_weight else 1
        self.weight = nn.Parameter(
            torch.empty(antennas * filters, in_per_group, 1, 1)
        )

    def forward(self, x):
        if x.shape[1] != 2 * self.antennas:
            raise ShapeError(
                f"expected {2 * self.antennas} input channels, got {x.shape[1]}"
            )
        w = self.weight if self.two_weight else self.weight.repeat(1, 2, 1, 1)
        return F.conv2d(x, w, bias=None, groups=self.antennas)


class MultiScaleBlock(nn.Module):
    """Four concatenated pathways over the time-frequency-spatial tensor:
    global context (AP + 1x1), separable global time/frequency (1x1 +
    1x7 + 7x1), local time-frequency (1x1 + 3x3), and local spatial
    (3x3 AP + 1x1)."""

    def __init__(self, in_c, out_c):
        super().__init__()
        c = out_c // 4
        self.global_proj = nn.Conv2d(in_c, c, 1)
        self.tf_reduce = nn.Conv2d(in_c, c, 1)
        self.tf_time = nn.Conv2d(c, c, (1, 7), padding=(0, 3))
        self.tf_freq = nn.Conv2d(c, c, (7, 1), padding=(3, 0))
        self.local_reduce = nn.Conv2d(in_c, c, 1)
        self.local_conv = nn.Conv2d(c, c, 3, padding=1)
        self.spatial_proj = nn.Conv2d(in_c, c, 1)

    def forward(self, x):
        h, w = x.shape[2], x.shape[3]
        p1 = F.relu(self.global_proj(x.mean(dim=(2, 3), keepdim=True)))
        p1 = p1.expand(-1, -1, h, w)
        p2 = F.relu(self.tf_reduce(x))
        p2 = F.relu(self.tf_time(p2))
        p2 = F.relu(self.tf_freq(p2))
        p3 = F.relu(self.local_reduce(x))
        p3 = F.relu(self.local_conv(p3))
        p4 = F.relu(self.spatial_proj(F.avg_pool2d(x, 3, stride=1, padding=1)))
        return torch.cat([p1, p2, p3, p4], dim=1)


class Encoder(nn.Module):
    """Stem + two multi-scale blocks with stride-2 reductions, flattened
    into the shared latent representation."""

    def __init__(self, cfg):
        super().__init__()
        in_c = cfg.encoder_in_channels()
        b1, b2 = cfg.block_channels
        self.stem = nn.Conv2d(in_c, cfg.stem_channels, 3, stride=2, padding=1)
        self.block1 = MultiScaleBlock(cfg.stem_channels, b1)
        self.down1 = nn.Conv2d(b1, b1, 3, stride=2, padding=1)
        self.block2 = MultiScaleBlock(b1, b2)
        self.down2 = nn.Conv2d(b2, b2, 3, stride=2, padding=1)
        hf = _ceil_half(_ceil_half(_ceil_half(cfg.subcarriers)))
        wt = _ceil_half(_ceil_half(_ceil_half(cfg.packets)))
        self.flat_dim = b2 * hf * wt
        self.proj = nn.Linear(self.flat_dim, cfg.latent_dim)

    def forward(self, x):
        x = F.relu(self.stem(x))
        x = self.block1(x)
        x = F.relu(self.down1(x))
        x = self.block2(x)
        x = F.relu(self.down2(x))
        return self.proj(x.flatten(1))


class ResidualBlock(nn.Module):
    """x + conv(relu(conv(x))): exactly the identity map when the branch
    weights are zero."""

    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class MaskDecoder(nn.Module):
    """Residual stack on a small latent grid followed by stride-2
    transposed 5x5 stages landing exactly on the mask side."""

    def __init__(self, cfg):
        super().__init__()
        self.grid = cfg.mask_grid
        self.channels = cfg.mask_channels
        self.expand = nn.Linear(cfg.latent_dim, self.channels * self.grid**2)
        self.res_blocks = nn.ModuleList(
            ResidualBlock(self.channels) for _ in range(cfg.mask_residual_blocks)
        )
        ups = []
        c = self.channels
        for op in upsample_schedule(cfg.mask_grid, cfg.mask_side):
            c_out = max(c // 2, 4)
            ups.append(
                nn.ConvTranspose2d(c, c_out, 5, stride=2, padding=2,
                                   output_padding=op)
            )
            c = c_out
        self.upsample = nn.ModuleList(ups)
        self.head = nn.Conv2d(c, 1, 1)

    def forward(self, r):
        x = F.relu(self.expand(r))
        x = x.view(-1, self.channels, self.grid, self.grid)
        for block in self.res_blocks:
            x = block(x)
        for up in self.upsample:
            x = F.relu(up(x))
        return self.head(x).squeeze(1)


class PoseDecoder(nn.Module):
    """Fully connected regression head; logistic output keeps joints in
    the normalized [0, 1] label range."""

    def __init__(self, cfg):
        super().__init__()
        sizes = [cfg.latent_dim, *cfg.pose_hidden]
        self.hidden = nn.ModuleList(
            nn.Linear(a, b) for a, b in zip(sizes[:-1], sizes[1:])
        )
        self.out = nn.Linear(sizes[-1], hm.N_JOINTS * 3)

    def forward(self, r):
        x = r
        for layer in self.hidden:
            x = F.relu(layer(x))
        return torch.sigmoid(self.out(x)).view(-1, hm.N_JOINTS, 3)


class HandNet(nn.Module):
    """End-to-end model: embed -> encode -> {mask, pose} decoders."""

    def __init__(self, cfg, seed=0):
        super().__init__()
        self.cfg = cfg
        if cfg.embedding_enabled:
            self.embedding = RFEmbedding(
                cfg.antennas, cfg.embed_filters, cfg.embed_two_weight
            )
        else:
            self.embedding = None
        self.encoder = Encoder(cfg)
        self.mask_decoder = MaskDecoder(cfg) if cfg.multi_task else None
        self.pose_decoder = PoseDecoder(cfg)
        self.reset_parameters(seed)

    def reset_parameters(self, seed):
        """Fan-in-scaled uniform init for every weight, zero biases;
        fully determined by the seed."""
        gen = torch.Generator().manual_seed(int(seed))
        for p in self.parameters():
            if p.ndim > 1:
                fan_in = p[0].numel()
                bound = 1.0 / math.sqrt(max(fan_in, 1))
                with torch.no_grad():
                    p.uniform_(-bound, bound, generator=gen)
            else:
                with torch.no_grad():
                    p.zero_()

    @property
    def parameter_count(self):
        return sum(p.numel() for p in self.parameters())

    def encode(self, x):
        """Stacked (B, 2*Ant, F, T) input -> (B, d) latent."""
        if x.ndim != 4 or x.shape[1] != 2 * self.cfg.antennas:
            raise ShapeError(
                f"expected (B, {2 * self.cfg.antennas}, F, T), got {tuple(x.shape)}"
            )
        if self.embedding is not None:
            x = self.embedding(x)
        return self.encoder(x)

    def decode_mask(self, r):
        if self.mask_decoder is None:
            raise ConfigError("mask decoder requested but multi_task is disabled")
        return self.mask_decoder(r)

    def decode_pose(self, r):
        return self.pose_decoder(r)

    def forward(self, x):
        """Returns (mask_logits | None, pose, latent)."""
        r = self.encode(x)
        mask = self.mask_decoder(r) if self.mask_decoder is not None else None
        return mask, self.pose_decoder(r), r


def stacked_batch(samples):
    """Normalize + stack complex CSI windows into a (B, 2*Ant, F, T)
    float32 tensor ready for HandNet."""
    arrs = []
    for values in samples:
        stacked = csi_mod.stack_real_imag(csi_mod.normalize_sample(values))
        arrs.append(np.transpose(stacked, (2, 0, 1)))
    return torch.as_tensor(np.stack(arrs), dtype=torch.float32)


def infer(model, csi_values):
    """Single-sample inference from a raw complex CSI window."""
    batch = stacked_batch([csi_values]).to(next(model.parameters()).dtype)
    model.eval()
    with torch.no_grad():
        mask_logits, pose, r = model(batch)
    mask_prob = torch.sigmoid(mask_logits[0]).numpy() if mask_logits is not None else None
    return mask_prob, pose[0].numpy(), r[0].numpy()
