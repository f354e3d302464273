"""Reverse-process samplers: ancestral (stochastic) and deterministic updates,
with classifier-free guidance and an optional per-step trace for audits."""

import numpy as np
import torch

from .errors import ConfigurationError
from .schedule import NoiseSchedule

ANCESTRAL = "ancestral"
DETERMINISTIC = "deterministic"


def _step_indices(T: int, steps: int) -> np.ndarray:
    if steps > T:
        raise ConfigurationError(f"cannot take {steps} sampler steps with T={T}")
    if steps < 1:
        raise ConfigurationError("need at least one sampler step")
    # evenly spaced, always ending at t=0 and starting near T-1
    return np.unique(np.linspace(0, T - 1, steps).round().astype(np.int64))[::-1]


@torch.no_grad()
def sample_video(model, cond: torch.Tensor, schedule: NoiseSchedule, *,
                 frames: int, resolution: int, steps: int = 50,
                 guidance_scale: float = 3.0, seed: int = 0,
                 mode: str = DETERMINISTIC, uncond: torch.Tensor = None,
                 trace: list = None) -> torch.Tensor:
    """Generate videos from noise; returns (B, F, C, H, W) clipped to [-1, 1].

    cond is (B, L, d) (or (L, d) for a single video). With guidance_scale
    != 1 an unconditional matrix must be supplied; each step combines
    predictions as uncond + scale * (cond - uncond). Deterministic mode with
    a fixed seed is bit-reproducible on a given platform.
    """
    if mode not in (ANCESTRAL, DETERMINISTIC):
        raise ConfigurationError(f"unknown sampler mode {mode!r}")
    single = cond.dim() == 2
    if single:
        cond = cond[None]
    b = cond.shape[0]
    if guidance_scale != 1.0 and uncond is None:
        raise ConfigurationError("guidance needs the unconditional embedding")

    was_training = model.training
    model.eval()
    device = next(model.parameters()).device
    gen = torch.Generator(device="cpu").manual_seed(seed)
    x = torch.randn(b, frames, model.cfg.in_channels, resolution, resolution,
                    generator=gen).to(device)
    ts = _step_indices(schedule.T, steps)
    abar = schedule.alpha_bars

    for i, t in enumerate(ts):
        t = int(t)
        if guidance_scale == 1.0:
            eps = model(x, t, cond)
        else:
            u = uncond[None].expand(b, -1, -1) if uncond.dim() == 2 else uncond
            both = model(torch.cat([x, x], 0), t, torch.cat([cond, u], 0))
            eps_c, eps_u = both[:b], both[b:]
            eps = eps_u + guidance_scale * (eps_c - eps_u)
            if trace is not None:
                trace.append({"t": t, "eps_cond": eps_c.clone(),
                              "eps_uncond": eps_u.clone(), "eps": eps.clone()})
        if trace is not None and guidance_scale == 1.0:
            trace.append({"t": t, "eps_cond": eps.clone(),
                          "eps_uncond": None, "eps": eps.clone()})

        a_t = float(abar[t])
        x0_hat = (x - np.sqrt(1 - a_t) * eps) / np.sqrt(a_t)
        x0_hat = x0_hat.clamp(-1.5, 1.5)
        if i + 1 < len(ts):
            t_prev = int(ts[i + 1])
            a_prev = float(abar[t_prev])
            if mode == DETERMINISTIC:
                x = np.sqrt(a_prev) * x0_hat + np.sqrt(1 - a_prev) * eps
            else:
                # posterior q(x_prev | x_t, x0) over the subsampled schedule
                a_step = a_t / a_prev
                var = (1 - a_prev) / (1 - a_t) * (1 - a_step)
                mean = (
                    np.sqrt(a_prev) * (1 - a_step) / (1 - a_t) * x0_hat
                    + np.sqrt(a_step) * (1 - a_prev) / (1 - a_t) * x
                )
                noise = torch.randn(x.shape, generator=gen).to(device)
                x = mean + np.sqrt(max(var, 0.0)) * noise
        else:
            x = x0_hat
    if was_training:
        model.train()
    x = x.clamp(-1.0, 1.0)
    return x[0] if single else x


def synthesize_regularization_items(root: str, base_bundle, size: int, seed: int,
                                    frames: int, resolution: int) -> list:
    """Draw base-model samples with base-style prompts; store prompt provenance."""
    from .conditioning import encode_text, null_condition, tokenize
    from .datagen import (MOTIONS, SpriteSpec, _sprite_grid, motion_caption,
                          save_video_frames)
    import json
    import os

    model, schedule, vocab = base_bundle.model, base_bundle.schedule, base_bundle.vocab
    rng = np.random.default_rng(seed)
    sprites = _sprite_grid()
    base_classes = [m for m in base_bundle.extra.get("classes", []) if m in MOTIONS] or \
        list(base_bundle.extra.get("classes", [])) or None
    from .conditioning import BASE_MOTIONS
    classes = base_classes or list(BASE_MOTIONS)
    uncond = null_condition(model, vocab)
    items = []
    for idx in range(size):
        sprite = sprites[int(rng.integers(len(sprites)))]
        motion_name = classes[idx % len(classes)]
        caption = motion_caption(sprite, motion_name)
        cond = encode_text(tokenize(caption, vocab), model)
        vid = sample_video(model, cond, schedule, frames=frames,
                           resolution=resolution, steps=36, guidance_scale=3.0,
                           seed=int(rng.integers(0, 2**31 - 1)), uncond=uncond)
        rel = os.path.join("items", f"{idx:05d}")
        item_dir = os.path.join(root, rel)
        save_video_frames(vid.cpu().numpy(), item_dir)
        meta = {"caption": caption, "motion": motion_name,
                "sprite": sprite.to_dict(), "seed": -1,
                "params": {}, "phase": 0.0, "provenance": "base-model-sample"}
        with open(os.path.join(item_dir, "meta.json"), "w") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
        items.append({"path": rel, **meta})
    return items
