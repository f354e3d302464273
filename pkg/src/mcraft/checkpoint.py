"""Single-file checkpoint container (format tag mcraft-ckpt-v1).

An .npz holding a JSON metadata blob (architecture, schedule, vocabulary,
step counter) plus one array per parameter, and optionally optimizer
moments and RNG states so training can resume exactly.
"""

import io
import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .conditioning import Vocabulary
from .errors import ConfigurationError
from .model import ModelConfig, VideoUNet
from .schedule import NoiseSchedule, build_schedule

FORMAT_TAG = "mcraft-ckpt-v1"


@dataclass
class TrainState:
    step: int = 0
    optimizer_state: dict = None     # torch optimizer state_dict
    numpy_rng: dict = None           # np Generator bit_generator state
    torch_rng: np.ndarray = None     # torch Generator state bytes
    loss_history: list = field(default_factory=list)


@dataclass
class Bundle:
    model: VideoUNet
    schedule: NoiseSchedule
    vocab: Vocabulary
    step: int = 0
    train_state: TrainState = None
    extra: dict = field(default_factory=dict)


def _encode_opt_state(state: dict) -> tuple:
    """Split an optimizer state_dict into arrays and a JSON-able skeleton."""
    arrays = {}
    skeleton = {"param_groups": state["param_groups"], "state": {}}
    for pid, pstate in state["state"].items():
        entry = {}
        for key, val in pstate.items():
            if isinstance(val, torch.Tensor):
                arr_key = f"opt/{pid}/{key}"
                arrays[arr_key] = val.detach().cpu().numpy()
                entry[key] = {"__array__": arr_key}
            else:
                entry[key] = val
        skeleton["state"][str(pid)] = entry
    return arrays, skeleton


def _decode_opt_state(skeleton: dict, npz) -> dict:
    state = {"param_groups": skeleton["param_groups"], "state": {}}
    for pid, entry in skeleton["state"].items():
        out = {}
        for key, val in entry.items():
            if isinstance(val, dict) and "__array__" in val:
                out[key] = torch.from_numpy(npz[val["__array__"]].copy())
            else:
                out[key] = val
        state["state"][int(pid)] = out
    return state


def save_checkpoint(path, model: VideoUNet, schedule: NoiseSchedule,
                    vocab: Vocabulary, step: int = 0,
                    train_state: TrainState = None, extra: dict = None) -> None:
    arrays = {
        f"param/{name}": p.detach().cpu().numpy()
        for name, p in model.named_parameters()
    }
    meta = {
        "format": FORMAT_TAG,
        "model": model.cfg.to_dict(),
        "schedule": schedule.config(),
        "vocab": vocab.to_list(),
        "step": int(step),
        "extra": extra or {},
        "has_train_state": train_state is not None,
    }
    if train_state is not None:
        opt_arrays, opt_skeleton = _encode_opt_state(train_state.optimizer_state or
                                                     {"param_groups": [], "state": {}})
        arrays.update(opt_arrays)
        meta["train_state"] = {
            "step": train_state.step,
            "optimizer": opt_skeleton,
            "numpy_rng": train_state.numpy_rng,
            "loss_history": train_state.loss_history[-200:],
        }
        if train_state.torch_rng is not None:
            arrays["rng/torch"] = np.asarray(train_state.torch_rng, dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path, map_location="cpu") -> Bundle:
    npz = np.load(path, allow_pickle=False)
    if "__meta__" not in npz:
        raise ConfigurationError(f"{path} is not a mcraft checkpoint")
    meta = json.loads(bytes(npz["__meta__"]).decode())
    if meta.get("format") != FORMAT_TAG:
        raise ConfigurationError(
            f"unsupported checkpoint format {meta.get('format')!r}, expected {FORMAT_TAG}"
        )
    vocab = Vocabulary(meta["vocab"])
    cfg = ModelConfig.from_dict(meta["model"])
    model = VideoUNet(cfg).to(map_location)
    sched_cfg = meta["schedule"]
    schedule = build_schedule(sched_cfg["T"], sched_cfg["beta_min"], sched_cfg["beta_max"])
    state = {}
    for name, _ in model.named_parameters():
        key = f"param/{name}"
        if key not in npz:
            raise ConfigurationError(f"checkpoint missing parameter {name!r}")
        state[name] = torch.from_numpy(npz[key].copy())
    missing, unexpected = model.load_state_dict(state, strict=False)
    leftover = [m for m in missing if not m.startswith("_")]
    if leftover or unexpected:
        raise ConfigurationError(
            f"checkpoint/model mismatch: missing={leftover} unexpected={unexpected}"
        )
    train_state = None
    if meta.get("has_train_state"):
        ts_meta = meta["train_state"]
        train_state = TrainState(
            step=ts_meta["step"],
            optimizer_state=_decode_opt_state(ts_meta["optimizer"], npz),
            numpy_rng=ts_meta["numpy_rng"],
            torch_rng=npz["rng/torch"].copy() if "rng/torch" in npz else None,
            loss_history=list(ts_meta.get("loss_history", [])),
        )
    return Bundle(model=model, schedule=schedule, vocab=vocab,
                  step=meta["step"], train_state=train_state,
                  extra=meta.get("extra", {}))
