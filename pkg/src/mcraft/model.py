"""Video denoiser UNet with tagged parameter groups.

The network is a 3-level UNet over (F, C, H, W) videos. Each level runs
[spatial residual conv -> spatial cross-attention -> temporal conv ->
temporal self-attention]; spatial blocks share weights across frames,
temporal blocks act per pixel location across frames. A tiny text encoder
(embedding table + learned positions + one self-attention mixing layer)
lives inside the model so that token embeddings can be trained jointly.

Every parameter carries exactly one tag; tags drive the tuning masks used
for customization and the ablation presets.
"""

import math
from dataclasses import dataclass, field
from enum import Enum

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, DimensionError


class ParamTag(str, Enum):
    SPATIAL_CONV = "spatial-conv"
    SPATIAL_ATTN_KV = "spatial-attn-kv"
    SPATIAL_ATTN_OTHER = "spatial-attn-other"
    TEMPORAL_CONV = "temporal-conv"
    TEMPORAL_ATTN = "temporal-attn"
    NORM = "norm"
    IO = "io"
    TEXT_EMBED = "text-embed"


TEMPORAL_TAGS = frozenset({ParamTag.TEMPORAL_CONV, ParamTag.TEMPORAL_ATTN})
SPATIAL_TAGS = frozenset(
    {ParamTag.SPATIAL_CONV, ParamTag.SPATIAL_ATTN_KV, ParamTag.SPATIAL_ATTN_OTHER}
)


@dataclass(frozen=True)
class TuningMask:
    """Which tagged parameter groups (and embedding rows) receive updates."""

    tags: frozenset = frozenset()
    trainable_token_ids: frozenset = frozenset()

    @staticmethod
    def ours() -> "TuningMask":
        return TuningMask(tags=frozenset(TEMPORAL_TAGS | {ParamTag.SPATIAL_ATTN_KV}))

    @staticmethod
    def all_params() -> "TuningMask":
        return TuningMask(tags=frozenset(ParamTag))


@dataclass
class ModelConfig:
    channels: tuple = (32, 64, 96)
    heads: int = 4
    text_dim: int = 64
    max_seq_len: int = 16
    max_frames: int = 16
    in_channels: int = 3
    groups: int = 8
    time_dim: int = 128
    vocab_size: int = 0  # filled in from the vocabulary at construction

    def to_dict(self) -> dict:
        return {
            "channels": list(self.channels),
            "heads": self.heads,
            "text_dim": self.text_dim,
            "max_seq_len": self.max_seq_len,
            "max_frames": self.max_frames,
            "in_channels": self.in_channels,
            "groups": self.groups,
            "time_dim": self.time_dim,
            "vocab_size": self.vocab_size,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        return ModelConfig(**d)


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=t.dtype, device=t.device) / half
    )
    args = t[:, None] * freqs[None, :]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


def _num_groups(groups: int, ch: int) -> int:
    g = math.gcd(groups, ch)
    return max(g, 1)


class SpatialResBlock(nn.Module):
    """Per-frame residual conv block with timestep FiLM modulation."""

    def __init__(self, ch_in, ch_out, groups, time_dim):
        super().__init__()
        self.norm1 = nn.GroupNorm(_num_groups(groups, ch_in), ch_in)
        self.conv1 = nn.Conv2d(ch_in, ch_out, 3, padding=1)
        self.film = nn.Linear(time_dim, 2 * ch_out)
        self.norm2 = nn.GroupNorm(_num_groups(groups, ch_out), ch_out)
        self.conv2 = nn.Conv2d(ch_out, ch_out, 3, padding=1)
        self.skip = nn.Conv2d(ch_in, ch_out, 1) if ch_in != ch_out else nn.Identity()
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, h, temb_bf):
        # h: (B*F, ch, H, W); temb_bf: (B*F, time_dim)
        r = h
        h = self.conv1(F.silu(self.norm1(h)))
        scale, shift = self.film(temb_bf)[:, :, None, None].chunk(2, dim=1)
        h = self.norm2(h) * (1 + scale) + shift
        h = self.conv2(F.silu(h))
        return h + self.skip(r)


class SpatialCrossAttention(nn.Module):
    """Pixels attend to text tokens; K/V project from the text width."""

    def __init__(self, ch, text_dim, heads, groups):
        super().__init__()
        if ch % heads:
            raise ConfigurationError(f"channels {ch} not divisible by heads {heads}")
        self.heads = heads
        self.norm = nn.GroupNorm(_num_groups(groups, ch), ch)
        self.to_q = nn.Linear(ch, ch, bias=False)
        self.to_k = nn.Linear(text_dim, ch, bias=False)
        self.to_v = nn.Linear(text_dim, ch, bias=False)
        self.proj = nn.Linear(ch, ch)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, h, cond, frames):
        # h: (B*F, ch, H, W); cond: (B, L, text_dim)
        bf, ch, hh, ww = h.shape
        r = h
        q = self.to_q(self.norm(h).reshape(bf, ch, hh * ww).transpose(1, 2))
        k = self.to_k(cond).repeat_interleave(frames, dim=0)
        v = self.to_v(cond).repeat_interleave(frames, dim=0)
        hd = ch // self.heads
        q = q.reshape(bf, -1, self.heads, hd).transpose(1, 2)
        k = k.reshape(bf, -1, self.heads, hd).transpose(1, 2)
        v = v.reshape(bf, -1, self.heads, hd).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(hd), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(bf, -1, ch)
        out = self.proj(out).transpose(1, 2).reshape(bf, ch, hh, ww)
        return r + out


class TemporalResBlock(nn.Module):
    """Residual conv over the frame axis, one stack per pixel location."""

    def __init__(self, ch, groups, time_dim):
        super().__init__()
        self.norm1 = nn.GroupNorm(_num_groups(groups, ch), ch)
        self.conv1 = nn.Conv1d(ch, ch, 3, padding=1)
        self.film = nn.Linear(time_dim, 2 * ch)
        self.norm2 = nn.GroupNorm(_num_groups(groups, ch), ch)
        self.conv2 = nn.Conv1d(ch, ch, 3, padding=1)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, h, temb, spatial):
        # h: (B*H*W, ch, F); temb: (B, time_dim); spatial = H*W rows per sample
        r = h
        h = self.conv1(F.silu(self.norm1(h)))
        scale, shift = self.film(temb).repeat_interleave(spatial, dim=0)[:, :, None].chunk(2, dim=1)
        h = self.norm2(h) * (1 + scale) + shift
        h = self.conv2(F.silu(h))
        return h + r


class TemporalSelfAttention(nn.Module):
    """Self-attention across frames at each pixel location."""

    def __init__(self, ch, heads, max_frames):
        super().__init__()
        if ch % heads:
            raise ConfigurationError(f"channels {ch} not divisible by heads {heads}")
        self.heads = heads
        self.norm = nn.LayerNorm(ch)
        self.frame_pos = nn.Parameter(torch.randn(max_frames, ch) * 0.02)
        self.qkv = nn.Linear(ch, 3 * ch)
        self.proj = nn.Linear(ch, ch)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, h):
        # h: (B*H*W, F, ch)
        n, frames, ch = h.shape
        r = h
        h = self.norm(h) + self.frame_pos[:frames][None, :, :]
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        hd = ch // self.heads
        q = q.reshape(n, frames, self.heads, hd).transpose(1, 2)
        k = k.reshape(n, frames, self.heads, hd).transpose(1, 2)
        v = v.reshape(n, frames, self.heads, hd).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(hd), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(n, frames, ch)
        return r + self.proj(out)


class LevelBlock(nn.Module):
    """One UNet level: spatial conv, cross-attention, temporal conv, temporal attention."""

    def __init__(self, ch_in, ch_out, cfg: ModelConfig):
        super().__init__()
        self.spatial_conv = SpatialResBlock(ch_in, ch_out, cfg.groups, cfg.time_dim)
        self.spatial_attn = SpatialCrossAttention(ch_out, cfg.text_dim, cfg.heads, cfg.groups)
        self.temporal_conv = TemporalResBlock(ch_out, cfg.groups, cfg.time_dim)
        self.temporal_attn = TemporalSelfAttention(ch_out, cfg.heads, cfg.max_frames)

    def forward(self, h, temb, cond, batch, frames, disable_temporal=False):
        bf, ch, hh, ww = h.shape
        temb_bf = temb.repeat_interleave(frames, dim=0)
        h = self.spatial_conv(h, temb_bf)
        h = self.spatial_attn(h, cond, frames)
        if not disable_temporal:
            ch = h.shape[1]
            t = (
                h.reshape(batch, frames, ch, hh, ww)
                .permute(0, 3, 4, 2, 1)
                .reshape(batch * hh * ww, ch, frames)
            )
            t = self.temporal_conv(t, temb, hh * ww)
            t = self.temporal_attn(t.transpose(1, 2))
            h = (
                t.reshape(batch, hh, ww, frames, ch)
                .permute(0, 3, 4, 1, 2)
                .reshape(bf, ch, hh, ww)
            )
        return h


class TextMixer(nn.Module):
    """Single self-attention layer that lets token embeddings see context."""

    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.norm = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, length, dim = x.shape
        q, k, v = self.qkv(self.norm(x)).chunk(3, dim=-1)
        hd = dim // self.heads
        q = q.reshape(b, length, self.heads, hd).transpose(1, 2)
        k = k.reshape(b, length, self.heads, hd).transpose(1, 2)
        v = v.reshape(b, length, self.heads, hd).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(hd), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, length, dim)
        return x + self.proj(out)


# Tag rules, applied in order; first match wins.
_TAG_RULES = [
    ("text_embed.", ParamTag.TEXT_EMBED),
    ("text_pos", ParamTag.IO),
    ("text_mixer.", ParamTag.IO),
    ("time_mlp.", ParamTag.IO),
    ("conv_in.", ParamTag.IO),
    ("conv_out.", ParamTag.IO),
    ("norm_out.", ParamTag.NORM),
    (".spatial_attn.to_k", ParamTag.SPATIAL_ATTN_KV),
    (".spatial_attn.to_v", ParamTag.SPATIAL_ATTN_KV),
    (".spatial_attn.", ParamTag.SPATIAL_ATTN_OTHER),
    (".spatial_conv.", ParamTag.SPATIAL_CONV),
    ("downsamples.", ParamTag.SPATIAL_CONV),
    ("upsamples.", ParamTag.SPATIAL_CONV),
    (".temporal_conv.", ParamTag.TEMPORAL_CONV),
    (".temporal_attn.", ParamTag.TEMPORAL_ATTN),
]


class VideoUNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.vocab_size < 1:
            raise ConfigurationError("model needs vocab_size >= 1")
        self.cfg = cfg
        chans = cfg.channels

        self.text_embed = nn.Embedding(cfg.vocab_size, cfg.text_dim)
        self.text_pos = nn.Parameter(torch.randn(cfg.max_seq_len, cfg.text_dim) * 0.02)
        self.text_mixer = TextMixer(cfg.text_dim, cfg.heads)

        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.time_dim, cfg.time_dim), nn.SiLU(), nn.Linear(cfg.time_dim, cfg.time_dim)
        )
        self.conv_in = nn.Conv2d(cfg.in_channels, chans[0], 3, padding=1)

        self.down_levels = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        for i, ch in enumerate(chans):
            ch_in = chans[0] if i == 0 else chans[i - 1]
            self.down_levels.append(LevelBlock(ch_in, ch, cfg))
            if i < len(chans) - 1:
                self.downsamples.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))

        self.up_levels = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for i in range(len(chans) - 1, 0, -1):
            self.upsamples.append(nn.Conv2d(chans[i], chans[i - 1], 3, padding=1))
            self.up_levels.append(LevelBlock(2 * chans[i - 1], chans[i - 1], cfg))

        self.norm_out = nn.GroupNorm(_num_groups(cfg.groups, chans[0]), chans[0])
        self.conv_out = nn.Conv2d(chans[0], cfg.in_channels, 3, padding=1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)

        self.param_tags = self._build_tag_map()

    def _build_tag_map(self) -> dict:
        tags = {}
        for name, _ in self.named_parameters():
            for pattern, tag in _TAG_RULES:
                if pattern in name or name.startswith(pattern):
                    tags[name] = tag
                    break
            else:
                raise ConfigurationError(f"parameter {name!r} matched no tag rule")
        return tags

    def encode_tokens(self, ids: torch.Tensor, mix: bool = True) -> torch.Tensor:
        """Token ids (B, L) -> conditioning matrices (B, L, text_dim)."""
        if ids.dim() != 2:
            raise DimensionError(f"ids must be (B, L), got {tuple(ids.shape)}")
        if ids.shape[1] > self.cfg.max_seq_len:
            raise DimensionError(
                f"sequence length {ids.shape[1]} exceeds max {self.cfg.max_seq_len}"
            )
        if int(ids.max()) >= self.cfg.vocab_size:
            raise IndexError(f"token id {int(ids.max())} >= vocab size {self.cfg.vocab_size}")
        x = self.text_embed(ids) + self.text_pos[: ids.shape[1]][None, :, :]
        if mix:
            x = self.text_mixer(x)
        return x

    def forward(self, x, t, cond, disable_temporal: bool = False):
        """Predict the noise component of x.

        x: (B, F, C, H, W); t: int or (B,) long; cond: (B, L, text_dim).
        Output has the shape of x.
        """
        if x.dim() != 5:
            raise DimensionError(f"expected (B, F, C, H, W), got {tuple(x.shape)}")
        b, frames, c, hh, ww = x.shape
        if frames > self.cfg.max_frames:
            raise DimensionError(f"{frames} frames exceeds max {self.cfg.max_frames}")
        if cond.dim() != 3 or cond.shape[0] != b:
            raise DimensionError(f"cond must be (B, L, d), got {tuple(cond.shape)}")
        if cond.shape[-1] != self.cfg.text_dim:
            raise DimensionError(
                f"cond width {cond.shape[-1]} != model text_dim {self.cfg.text_dim}"
            )
        if isinstance(t, int):
            t = torch.full((b,), t, dtype=torch.long, device=x.device)
        dtype = self.conv_in.weight.dtype
        temb = self.time_mlp(timestep_embedding(t.to(dtype), self.cfg.time_dim))

        h = self.conv_in(x.reshape(b * frames, c, hh, ww).to(dtype))
        skips = []
        for i, level in enumerate(self.down_levels):
            h = level(h, temb, cond, b, frames, disable_temporal)
            if i < len(self.downsamples):
                skips.append(h)
                h = self.downsamples[i](h)
        for i, level in enumerate(self.up_levels):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = self.upsamples[i](h)
            h = torch.cat([h, skips.pop()], dim=1)
            h = level(h, temb, cond, b, frames, disable_temporal)
        h = self.conv_out(F.silu(self.norm_out(h)))
        return h.reshape(b, frames, c, hh, ww)


def build_model(cfg: ModelConfig) -> VideoUNet:
    return VideoUNet(cfg)


def partition_params(model: VideoUNet) -> dict:
    """Group parameter names by tag; every parameter lands in exactly one list."""
    out = {tag: [] for tag in ParamTag}
    for name, _ in model.named_parameters():
        out[model.param_tags[name]].append(name)
    return out


@dataclass
class TrainableSet:
    """Resolved tuning mask: parameter names plus optional embedding-row gating."""

    names: list
    token_rows: list = field(default_factory=list)  # row-restricted embedding ids
    embed_name: str = "text_embed.weight"

    def row_mask(self, vocab_size: int) -> torch.Tensor:
        m = torch.zeros(vocab_size, dtype=torch.bool)
        m[list(self.token_rows)] = True
        return m


def apply_tuning_mask(model: VideoUNet, mask: TuningMask) -> TrainableSet:
    """Mark exactly the masked parameters trainable; everything else is frozen.

    When only specific token ids are trainable, the embedding table is
    included with a row restriction: the training loop zeroes gradient rows
    outside the set so frozen rows receive exactly-zero optimizer updates.
    """
    for tag in mask.tags:
        if not isinstance(tag, ParamTag):
            raise ConfigurationError(f"unknown parameter tag {tag!r}")
    names = [n for n, _ in model.named_parameters() if model.param_tags[n] in mask.tags]
    token_rows = sorted(int(i) for i in mask.trainable_token_ids)
    if token_rows and max(token_rows) >= model.cfg.vocab_size:
        raise ConfigurationError(f"token id {max(token_rows)} outside vocabulary")
    embed_name = "text_embed.weight"
    if token_rows and embed_name not in names:
        names.append(embed_name)
    if not names:
        raise ConfigurationError("tuning mask selects no parameters: nothing to train")
    row_restricted = bool(token_rows) and ParamTag.TEXT_EMBED not in mask.tags
    for n, p in model.named_parameters():
        p.requires_grad_(n in names)
    return TrainableSet(
        names=names,
        token_rows=token_rows if row_restricted else [],
        embed_name=embed_name,
    )


def model_forward(model: VideoUNet, x_t: torch.Tensor, t, cond: torch.Tensor, **kw) -> torch.Tensor:
    """Single-video wrapper: x_t (F, C, H, W), cond (L, d)."""
    out = model(x_t[None], t, cond[None], **kw)
    return out[0]


def denoise_loss(model, x0, cond, t, eps, w_t: float = 1.0, schedule=None) -> torch.Tensor:
    """Weighted noise-prediction loss: w_t * mean((eps_hat - eps)^2).

    Accepts a single video (F, C, H, W) with cond (L, d), or a batch with
    leading B on x0/cond and t as a (B,) tensor.
    """
    from .schedule import forward_diffuse  # local import avoids a cycle
    from .errors import NumericError

    if w_t <= 0:
        raise ConfigurationError(f"loss weight must be positive, got {w_t}")
    if schedule is None:
        raise ConfigurationError("denoise_loss needs a schedule")
    single = x0.dim() == 4
    if single:
        x_t = forward_diffuse(x0, t, eps, schedule)
        eps_hat = model(x_t[None], t, cond[None])[0]
    else:
        abar = torch.as_tensor(
            schedule.alpha_bars, dtype=x0.dtype, device=x0.device
        )[t][:, None, None, None, None]
        x_t = abar.sqrt() * x0 + (1 - abar).sqrt() * eps
        eps_hat = model(x_t, t, cond)
    if not torch.isfinite(eps_hat).all():
        raise NumericError(
            f"non-finite denoiser output at t={t} "
            f"(min={float(eps_hat.min())}, max={float(eps_hat.max())})"
        )
    return w_t * F.mse_loss(eps_hat, eps)
