"""Training engine: base-model pretraining, motion customization with
coarse-noise timestep sampling and regularization mixing, joint
appearance+motion customization, early stopping, exact resume."""

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoint import Bundle, TrainState, load_checkpoint, save_checkpoint
from .conditioning import (MOTION_TOKEN, SUBJECT_TOKEN, Vocabulary,
                           build_default_vocabulary, tokenize)
from .datagen import AugmentConfig, DatasetManifest, augment, load_video, uint8_to_video, video_to_uint8
from .errors import ConfigurationError, TrainingAborted
from .model import (SPATIAL_TAGS, TEMPORAL_TAGS, ModelConfig, ParamTag,
                    TuningMask, VideoUNet, apply_tuning_mask, denoise_loss)
from .schedule import build_schedule
from .timesteps import build_timestep_distribution

log = logging.getLogger(__name__)


@dataclass
class PretrainConfig:
    lr: float = 2e-4
    steps: int = 5000
    batch_size: int = 4
    cond_dropout: float = 0.1
    seed: int = 0
    channels: tuple = (32, 64, 96)
    T: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 2e-2
    log_every: int = 50
    checkpoint_every: int = 2000
    mixed_precision: bool = True
    divergence_factor: float = 10.0

    def to_dict(self):
        d = self.__dict__.copy()
        d["channels"] = list(self.channels)
        return d


@dataclass
class CustomizeConfig:
    # published defaults for the full-scale recipe; desk-scale runs override
    # lr/steps via the shipped config files
    lr: float = 5e-6
    max_steps: int = 3000
    batch_size: int = 1
    mask: object = "ours"              # mask preset name or TuningMask
    alpha: float = 0.5                 # 0 -> uniform timestep sampling
    reg_kind: str = "real"
    early_stop_threshold: object = None  # float, "auto", or None (disabled)
    early_stop_cadence: int = 250
    seed: int = 0
    augment_cfg: AugmentConfig = field(default_factory=AugmentConfig)
    probe_prompts: tuple = ()
    probe_sample_steps: int = 16
    probe_guidance: float = 3.0
    log_every: int = 50
    checkpoint_every: int = 1000
    mixed_precision: bool = True
    token_init: str = "motion"         # word whose embedding seeds new pseudo-tokens

    def to_dict(self):
        d = self.__dict__.copy()
        d["mask"] = self.mask if isinstance(self.mask, str) else {
            "tags": sorted(t.value for t in self.mask.tags),
            "trainable_token_ids": sorted(self.mask.trainable_token_ids),
        }
        d["augment_cfg"] = self.augment_cfg.__dict__.copy()
        d["early_stop_threshold"] = self.early_stop_threshold
        return d


# Tuning-mask presets; token trainability is resolved against the vocabulary
# at run time because pseudo-token ids are assigned dynamically.
from .model import SPATIAL_TAGS, TEMPORAL_TAGS, ParamTag  # noqa: E402

MASK_PRESETS = {
    "ours": (frozenset(TEMPORAL_TAGS | {ParamTag.SPATIAL_ATTN_KV}), False),
    "spatial-none": (frozenset(TEMPORAL_TAGS), False),
    "spatial-all": (frozenset(TEMPORAL_TAGS | SPATIAL_TAGS), False),
    "temporal-none": (frozenset({ParamTag.SPATIAL_ATTN_KV}), False),
    "token-trained": (frozenset(TEMPORAL_TAGS | {ParamTag.SPATIAL_ATTN_KV}), True),
    "dreambooth-regime": (frozenset(SPATIAL_TAGS), False),
    "custom-diffusion-regime": (frozenset({ParamTag.SPATIAL_ATTN_KV}), True),
    "textual-inversion-regime": (frozenset(), True),
}


def resolve_mask(mask, vocab: Vocabulary, pseudo_tokens=(MOTION_TOKEN,)) -> TuningMask:
    if isinstance(mask, TuningMask):
        return mask
    if mask not in MASK_PRESETS:
        raise ConfigurationError(
            f"unknown mask preset {mask!r}; valid: {sorted(MASK_PRESETS)}")
    tags, token_trainable = MASK_PRESETS[mask]
    ids = frozenset(vocab.id(t) for t in pseudo_tokens if t in vocab) if token_trainable \
        else frozenset()
    if token_trainable and not ids:
        raise ConfigurationError(f"preset {mask!r} trains tokens but none are present")
    return TuningMask(tags=tags, trainable_token_ids=ids)


class TrainingSet:
    """Manifest items decoded to RAM as uint8 for fast per-step access."""

    def __init__(self, manifests_with_sources):
        self.videos = []
        self.captions = []
        self.sources = []
        for manifest, source in manifests_with_sources:
            packed = self._load_packed(manifest)
            for i, item in enumerate(manifest.items):
                self.videos.append(packed[i])
                self.captions.append(item["caption"])
                self.sources.append(source)
        if not self.videos:
            raise ConfigurationError("training set is empty")

    @staticmethod
    def _load_packed(manifest: DatasetManifest):
        """Per-root cache of decoded frames, keyed by the manifest hash."""
        cache = os.path.join(manifest.root, f"frames_{manifest.config_hash}.npz")
        if os.path.exists(cache):
            with np.load(cache) as z:
                return [z[f"v{i}"] for i in range(len(manifest))]
        arrays = [video_to_uint8(load_video(manifest.item_dir(i)))
                  for i in range(len(manifest))]
        if len(arrays) > 64:
            np.savez(cache, **{f"v{i}": a for i, a in enumerate(arrays)})
        return arrays

    def __len__(self):
        return len(self.videos)

    def get(self, idx: int, aug_seed=None, aug_cfg: AugmentConfig = None) -> np.ndarray:
        video = uint8_to_video(self.videos[idx])
        if aug_seed is not None and aug_cfg is not None and not aug_cfg.disabled():
            video = augment(video, aug_seed, aug_cfg)
        return video


def _null_ids(vocab: Vocabulary, max_len: int):
    return [vocab.null_id] * max_len


def _batch_tensors(videos, id_lists, device):
    x0 = torch.from_numpy(np.stack(videos)).to(device)
    ids = torch.tensor(id_lists, dtype=torch.long, device=device)
    return x0, ids


class _Loop:
    """Shared training-loop mechanics: rng streams, logging, checkpoints, abort."""

    def __init__(self, model, schedule, vocab, out_dir, seed, lr, trainable_params,
                 mixed_precision, run_config, extra=None):
        self.model = model
        self.schedule = schedule
        self.vocab = vocab
        self.out_dir = out_dir
        self.mixed_precision = mixed_precision
        self.extra = extra or {}
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
        with open(os.path.join(out_dir, "run_config.json"), "w") as f:
            json.dump(run_config, f, indent=2, sort_keys=True, default=str)
        self.metrics_path = os.path.join(out_dir, "metrics.jsonl")
        self.metrics_file = open(self.metrics_path, "a")
        self.np_rng = np.random.default_rng(seed)
        self.torch_gen = torch.Generator().manual_seed(seed ^ 0x5EED)
        self.optimizer = torch.optim.Adam(trainable_params, lr=lr)
        self.step = 0
        self.ema = None
        self.initial_ema = None
        self.loss_history = []

    def restore(self, state: TrainState):
        self.step = state.step
        self.optimizer.load_state_dict(state.optimizer_state)
        self.np_rng.bit_generator.state = state.numpy_rng
        if state.torch_rng is not None:
            self.torch_gen.set_state(torch.from_numpy(
                np.asarray(state.torch_rng, dtype=np.uint8)))
        self.loss_history = list(state.loss_history)
        if self.loss_history:
            self.ema = self.loss_history[-1]

    def train_state(self) -> TrainState:
        return TrainState(
            step=self.step,
            optimizer_state=self.optimizer.state_dict(),
            numpy_rng=self.np_rng.bit_generator.state,
            torch_rng=self.torch_gen.get_state().numpy(),
            loss_history=self.loss_history,
        )

    def compute_loss(self, x0, ids, t):
        cond = self.model.encode_tokens(ids)
        tt = torch.as_tensor(t, dtype=torch.long)
        if self.mixed_precision:
            with torch.autocast("cpu", dtype=torch.bfloat16):
                return denoise_loss(self.model, x0, cond, tt,
                                    torch.randn(x0.shape, generator=self.torch_gen),
                                    1.0, schedule=self.schedule)
        return denoise_loss(self.model, x0, cond, tt,
                            torch.randn(x0.shape, generator=self.torch_gen),
                            1.0, schedule=self.schedule)

    def track(self, loss_val, t, source, probe=None):
        self.ema = loss_val if self.ema is None else 0.98 * self.ema + 0.02 * loss_val
        if self.step == 20:
            self.initial_ema = self.ema
        self.loss_history.append(round(self.ema, 6))
        rec = {"step": self.step, "loss": round(loss_val, 6),
               "ema": round(self.ema, 6), "t": t, "source": source}
        if probe is not None:
            rec["probe"] = probe
        self.metrics_file.write(json.dumps(rec) + "\n")

    def check_divergence(self, factor):
        if (self.initial_ema is not None and np.isfinite(self.ema)
                and self.ema > factor * self.initial_ema):
            self.abort(f"loss diverged: ema {self.ema:.4f} > "
                       f"{factor}x initial {self.initial_ema:.4f}")
        if not np.isfinite(self.ema):
            self.abort(f"non-finite loss at step {self.step}")

    def abort(self, why):
        path = os.path.join(self.out_dir, "checkpoints", "aborted.npz")
        save_checkpoint(path, self.model, self.schedule, self.vocab,
                        self.step, extra=self.extra)
        self.metrics_file.flush()
        raise TrainingAborted(f"{why} (last checkpoint: {path})")

    def save(self, name, with_state=True):
        path = os.path.join(self.out_dir, "checkpoints", name)
        save_checkpoint(path, self.model, self.schedule, self.vocab, self.step,
                        train_state=self.train_state() if with_state else None,
                        extra=self.extra)
        return path

    def close(self):
        self.metrics_file.flush()
        self.metrics_file.close()


def pretrain_base(corpus: DatasetManifest, config: PretrainConfig, out_dir: str,
                  resume_from: str = None) -> str:
    """Train the base model from scratch on the base corpus.

    Uniform timestep sampling, all parameters trainable, conditioning dropped
    with probability cond_dropout for classifier-free guidance.
    """
    if corpus.role != "base-corpus":
        raise ConfigurationError(f"pretraining expects a base corpus, got {corpus.role!r}")
    data = TrainingSet([(corpus, "base")])
    vocab = build_default_vocabulary()
    frames = data.videos[0].shape[0]
    resolution = data.videos[0].shape[-1]
    extra = {"classes": corpus.classes(), "frames": frames, "resolution": resolution,
             "cond_dropout": config.cond_dropout}

    if resume_from:
        bundle = load_checkpoint(resume_from)
        model, schedule, vocab = bundle.model, bundle.schedule, bundle.vocab
    else:
        model = VideoUNet(ModelConfig(channels=tuple(config.channels),
                                      vocab_size=len(vocab)))
        schedule = build_schedule(config.T, config.beta_min, config.beta_max)
    model.train()
    for p in model.parameters():
        p.requires_grad_(True)

    loop = _Loop(model, schedule, vocab, out_dir, config.seed, config.lr,
                 list(model.parameters()), config.mixed_precision,
                 {"kind": "pretrain", **config.to_dict()}, extra=extra)
    if resume_from and bundle.train_state is not None:
        loop.restore(bundle.train_state)

    max_len = model.cfg.max_seq_len
    null_ids = _null_ids(vocab, max_len)
    while loop.step < config.steps:
        idx = loop.np_rng.integers(0, len(data), size=config.batch_size)
        t = loop.np_rng.integers(0, schedule.T, size=config.batch_size)
        drop = loop.np_rng.random(config.batch_size) < config.cond_dropout
        videos, id_lists = [], []
        for j, i in enumerate(idx):
            videos.append(data.get(int(i)))
            id_lists.append(null_ids if drop[j] else
                            tokenize(data.captions[int(i)], vocab, max_len))
        x0, ids = _batch_tensors(videos, id_lists, "cpu")
        loop.optimizer.zero_grad(set_to_none=True)
        loss = loop.compute_loss(x0, ids, t)
        loss.backward()
        loop.optimizer.step()
        loop.step += 1
        loop.track(float(loss.detach()), [int(v) for v in t], "base")
        loop.check_divergence(config.divergence_factor)
        if loop.step % config.log_every == 0:
            log.info("pretrain step %d loss %.4f (ema %.4f)", loop.step,
                     float(loss.detach()), loop.ema)
        if loop.step % config.checkpoint_every == 0 and loop.step < config.steps:
            loop.save(f"step_{loop.step:06d}.npz")
    final = loop.save("final.npz")
    loop.close()
    return final


def _prepare_custom_vocab(bundle: Bundle, captions, token_init: str, config_seed: int):
    """Add any caption words missing from the base vocabulary as pseudo-tokens."""
    vocab, model = bundle.vocab, bundle.model
    added = []
    for caption in captions:
        for word in caption.split():
            if word not in vocab:
                from .conditioning import add_pseudo_token
                init = vocab.id(token_init) if token_init in vocab else "random"
                add_pseudo_token(vocab, model, word, init_from=init, seed=config_seed)
                added.append(word)
    return added


def customize_motion(base: str, custom_set: DatasetManifest,
                     reg_set: DatasetManifest, config: CustomizeConfig,
                     out_dir: str, aligner=None, eval_tools=None,
                     resume_from: str = None) -> str:
    """Fine-tune the base model on the exemplar + regularization mixture.

    Each step draws one item uniformly from the concatenated sets (matching
    the equal weighting of the combined objective), draws its timestep from
    the coarse-noise distribution, and updates only the masked parameters.
    """
    if len(custom_set) == 0:
        raise ConfigurationError("custom motion set is empty")
    if reg_set is not None and len(reg_set) > 0:
        data = TrainingSet([(custom_set, "custom"), (reg_set, "reg")])
    else:
        data = TrainingSet([(custom_set, "custom")])

    bundle = load_checkpoint(resume_from or base)
    model, schedule, vocab = bundle.model, bundle.schedule, bundle.vocab
    added = _prepare_custom_vocab(bundle, data.captions, config.token_init, config.seed)
    mask = resolve_mask(config.mask, vocab)
    plan = apply_tuning_mask(model, mask)
    trainable = [p for n, p in model.named_parameters() if n in set(plan.names)]
    row_mask = plan.row_mask(model.cfg.vocab_size) if plan.token_rows else None

    tdist = build_timestep_distribution(schedule.T, config.alpha)
    sampler_name = "uniform" if config.alpha == 0 else "coarse-noise"
    motion_name = custom_set.items[0].get("motion", "")
    extra = dict(bundle.extra)
    extra.update({"customized_motion": motion_name, "pseudo_tokens": added,
                  "sampler": sampler_name, "mask_preset": config.mask
                  if isinstance(config.mask, str) else "custom"})

    run_config = {"kind": "customize", "sampler": sampler_name,
                  "motion": motion_name, **config.to_dict()}
    loop = _Loop(model, schedule, vocab, out_dir, config.seed, config.lr,
                 trainable, config.mixed_precision, run_config, extra=extra)
    if resume_from:
        if bundle.train_state is None:
            raise ConfigurationError(f"{resume_from} has no training state to resume")
        loop.restore(bundle.train_state)

    threshold = _resolve_early_stop(config.early_stop_threshold, aligner)
    model.train()
    max_len = model.cfg.max_seq_len
    stopped_early = False
    while loop.step < config.max_steps:
        idx = loop.np_rng.integers(0, len(data), size=config.batch_size)
        t = tdist.sample(loop.np_rng, config.batch_size)
        aug_seeds = loop.np_rng.integers(0, 2**31 - 1, size=config.batch_size)
        videos = [data.get(int(i), int(s), config.augment_cfg)
                  for i, s in zip(idx, aug_seeds)]
        id_lists = [tokenize(data.captions[int(i)], vocab, max_len) for i in idx]
        x0, ids = _batch_tensors(videos, id_lists, "cpu")
        loop.optimizer.zero_grad(set_to_none=True)
        loss = loop.compute_loss(x0, ids, t)
        loss.backward()
        if row_mask is not None:
            emb = model.text_embed.weight
            if emb.grad is not None:
                emb.grad[~row_mask] = 0.0
        loop.optimizer.step()
        loop.step += 1
        sources = [data.sources[int(i)] for i in idx]
        probe = None
        if (threshold is not None and aligner is not None
                and loop.step % config.early_stop_cadence == 0):
            stop, score = early_stop_check(
                model, config.probe_prompts, aligner, threshold,
                vocab=vocab, schedule=schedule,
                frames=extra.get("frames", 8), resolution=extra.get("resolution", 32),
                sample_steps=config.probe_sample_steps,
                guidance=config.probe_guidance, seed=config.seed)
            probe = {"appearance_score": score, "threshold": threshold, "stop": stop}
            if stop:
                loop.track(float(loss.detach()), [int(v) for v in t],
                           ",".join(sources), probe)
                stopped_early = True
                break
        loop.track(float(loss.detach()), [int(v) for v in t], ",".join(sources), probe)
        loop.check_divergence(10.0)
        if loop.step % config.checkpoint_every == 0 and loop.step < config.max_steps:
            loop.save(f"step_{loop.step:06d}.npz")
    extra["stopped_early"] = stopped_early
    loop.extra = extra
    final = loop.save("final.npz")
    loop.close()
    return final


def customize_joint(base: str, custom_set: DatasetManifest,
                    appearance_set: DatasetManifest, config: CustomizeConfig,
                    out_dir: str, stage2_steps: int = 1000,
                    reg_set: DatasetManifest = None, aligner=None,
                    motion_ckpt: str = None) -> str:
    """Two-stage pipeline: motion customization, then joint appearance+motion.

    Stage 2 flips a fair coin per step between motion exemplars (motion mask)
    and one-frame appearance stills (spatial K/V plus the subject token row).
    """
    for item in appearance_set.items:
        import os as _os
        frames = [n for n in _os.listdir(_os.path.join(appearance_set.root, item["path"]))
                  if n.startswith("frame_")]
        if len(frames) != 1:
            raise ConfigurationError(
                f"appearance items must be one-frame videos, {item['path']} has {len(frames)}")

    if motion_ckpt is None:
        motion_ckpt = customize_motion(base, custom_set, reg_set, config,
                                       os.path.join(out_dir, "stage1"), aligner=aligner)
    if len(appearance_set) == 0:
        return motion_ckpt

    bundle = load_checkpoint(motion_ckpt)
    model, schedule, vocab = bundle.model, bundle.schedule, bundle.vocab
    motion_data = TrainingSet([(custom_set, "custom")])
    app_data = TrainingSet([(appearance_set, "appearance")])
    _prepare_custom_vocab(bundle, app_data.captions, "sprite", config.seed)
    subject_id = vocab.id(SUBJECT_TOKEN)

    motion_mask = resolve_mask(config.mask, vocab)
    app_mask = TuningMask(tags=frozenset({ParamTag.SPATIAL_ATTN_KV}),
                          trainable_token_ids=frozenset({subject_id}))
    plan_m = apply_tuning_mask(model, motion_mask)
    plan_a = apply_tuning_mask(model, app_mask)
    union = sorted(set(plan_m.names) | set(plan_a.names))
    named = dict(model.named_parameters())
    for n, p in named.items():
        p.requires_grad_(n in set(union))
    trainable = [named[n] for n in union]
    motion_names = set(plan_m.names)
    app_names = set(plan_a.names)
    app_rows = plan_a.row_mask(model.cfg.vocab_size)

    extra = dict(bundle.extra)
    extra.update({"subject_token": SUBJECT_TOKEN, "joint": True})
    run_config = {"kind": "customize-joint", "stage2_steps": stage2_steps,
                  **config.to_dict()}
    loop = _Loop(model, schedule, vocab, out_dir, config.seed + 1, config.lr,
                 trainable, config.mixed_precision, run_config, extra=extra)
    model.train()
    max_len = model.cfg.max_seq_len
    tdist = build_timestep_distribution(schedule.T, config.alpha)
    while loop.step < stage2_steps:
        pick_motion = bool(loop.np_rng.random() < 0.5)
        data = motion_data if pick_motion else app_data
        idx = int(loop.np_rng.integers(0, len(data)))
        t = tdist.sample(loop.np_rng, 1)
        aug_seed = int(loop.np_rng.integers(0, 2**31 - 1))
        video = data.get(idx, aug_seed if pick_motion else None, config.augment_cfg)
        ids = tokenize(data.captions[idx], vocab, max_len)
        x0, ids_t = _batch_tensors([video], [ids], "cpu")
        loop.optimizer.zero_grad(set_to_none=True)
        loss = loop.compute_loss(x0, ids_t, t)
        loss.backward()
        branch = motion_names if pick_motion else app_names
        for n in union:
            if n not in branch and n != plan_a.embed_name:
                named[n].grad = None
        emb = named[plan_a.embed_name]
        if pick_motion:
            if plan_a.embed_name not in motion_names:
                emb.grad = None
        elif emb.grad is not None:
            emb.grad[~app_rows] = 0.0
        loop.optimizer.step()
        loop.step += 1
        loop.track(float(loss.detach()), [int(v) for v in t],
                   "custom" if pick_motion else "appearance")
        loop.check_divergence(10.0)
    final = loop.save("final.npz")
    loop.close()
    return final


def _resolve_early_stop(threshold, aligner):
    if threshold is None:
        return None
    if threshold == "auto":
        if aligner is None:
            raise ConfigurationError("early_stop_threshold='auto' needs an aligner")
        stats = aligner.calibration
        return 0.5 * (stats["matched_mean"] + stats["mismatched_mean"])
    return float(threshold)


def early_stop_check(model, probe_prompts, aligner, threshold: float, *,
                     vocab, schedule, frames: int, resolution: int,
                     sample_steps: int = 16, guidance: float = 3.0,
                     seed: int = 0):
    """Generate probe videos and stop when the appearance score decays to
    the threshold (the score drops as the model overfits)."""
    if aligner is None:
        raise ConfigurationError("early stopping needs a trained aligner")
    if not probe_prompts:
        raise ConfigurationError("early stopping needs probe prompts")
    from .conditioning import encode_text, null_condition, split_caption
    from .sampling import sample_video

    was_training = model.training
    model.eval()
    scores = []
    uncond = null_condition(model, vocab, model.cfg.max_seq_len)
    for i, prompt in enumerate(probe_prompts):
        parts = split_caption(prompt)
        cond = encode_text(tokenize(prompt, vocab, model.cfg.max_seq_len), model)
        with torch.autocast("cpu", dtype=torch.bfloat16):
            vid = sample_video(model, cond, schedule, frames=frames,
                               resolution=resolution, steps=sample_steps,
                               guidance_scale=guidance, seed=seed * 7919 + i,
                               uncond=uncond)
        scores.append(aligner.appearance_score(
            [vid.float().cpu().numpy()], parts.appearance_part))
    if was_training:
        model.train()
    score = float(np.mean(scores))
    return score <= threshold, score
