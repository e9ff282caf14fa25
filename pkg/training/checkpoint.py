"""
Checkpoints: a weight manifest (`<name>.enfw`) plus a JSON sidecar
(`<name>.json`).

Manifest records:
    model.<state key>             parameters and buffers
    optimizer.<param idx>.<key>   AdamW moments and step counters
    rng.torch                     torch CPU generator state (uint8)

The sidecar holds epoch, val_dice, config_hash, seed, python/numpy rng
states, optimizer param_groups, the model recipe and the sha256 of the
manifest bytes. Both files are written to a temp name and renamed.
"""
import hashlib
import json
import os
import tempfile
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import torch
import torch.nn as nn

from common.errors import ConfigMismatchError, IntegrityError
from common.seeding import capture_rng_states, restore_rng_states
from models.weights import decode_manifest, encode_manifest

MANIFEST_EXT = ".enfw"
SIDECAR_EXT = ".json"


def config_hash(config: Dict[str, Any]) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Checkpoint:
    model_state: "OrderedDict[str, torch.Tensor]"
    epoch: int
    val_dice: float
    config_hash: str = ""
    seed: int = 0
    model: Dict[str, Any] = field(default_factory=dict)  # get_model kwargs
    optimizer_state: Optional[Dict[str, Any]] = None
    rng_states: Dict[str, Any] = field(default_factory=dict)
    torch_rng: Optional[torch.Tensor] = None

    @classmethod
    def capture(cls, model: nn.Module, epoch: int, val_dice: float, config_hash: str = "", seed: int = 0,
                model_recipe: Optional[Dict[str, Any]] = None,
                optimizer: Optional[torch.optim.Optimizer] = None) -> "Checkpoint":
        state = OrderedDict((k, v.detach().cpu().clone()) for k, v in model.state_dict().items())
        return cls(
            model_state=state,
            epoch=epoch,
            val_dice=float(val_dice),
            config_hash=config_hash,
            seed=seed,
            model=dict(model_recipe or {}),
            optimizer_state=_copy_optimizer_state(optimizer) if optimizer is not None else None,
            rng_states=capture_rng_states(),
            torch_rng=torch.get_rng_state(),
        )

    def restore(self, model: nn.Module, optimizer: Optional[torch.optim.Optimizer] = None,
                restore_rng: bool = False) -> nn.Module:
        own = model.state_dict()
        loaded = {k: v.to(dtype=own[k].dtype, device=own[k].device) for k, v in self.model_state.items() if k in own}
        model.load_state_dict(loaded, strict=True)
        if optimizer is not None and self.optimizer_state is not None:
            optimizer.load_state_dict(self.optimizer_state)
        if restore_rng:
            if self.rng_states:
                restore_rng_states(self.rng_states)
            if self.torch_rng is not None:
                torch.set_rng_state(self.torch_rng)
        return model


def _copy_optimizer_state(optimizer: torch.optim.Optimizer) -> Dict[str, Any]:
    sd = optimizer.state_dict()
    state = {
        int(idx): {k: (v.detach().cpu().clone() if torch.is_tensor(v) else v) for k, v in s.items()}
        for idx, s in sd["state"].items()
    }
    return {"state": state, "param_groups": json.loads(json.dumps(sd["param_groups"], default=str))}


def checkpoint_paths(path: str):
    stem = path[: -len(MANIFEST_EXT)] if path.endswith(MANIFEST_EXT) else path
    return stem + MANIFEST_EXT, stem + SIDECAR_EXT


def _atomic_write(path: str, data: bytes) -> None:
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def save_checkpoint(path: str, ckpt: Checkpoint) -> str:
    weights_path, sidecar_path = checkpoint_paths(path)

    records: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    for k, v in ckpt.model_state.items():
        records[f"model.{k}"] = v
    scalars: Dict[str, Dict[str, Any]] = {}
    param_groups = None
    if ckpt.optimizer_state is not None:
        param_groups = ckpt.optimizer_state["param_groups"]
        for idx, s in ckpt.optimizer_state["state"].items():
            for k, v in s.items():
                if torch.is_tensor(v):
                    records[f"optimizer.{idx}.{k}"] = v
                else:
                    scalars.setdefault(str(idx), {})[k] = v
    if ckpt.torch_rng is not None:
        records["rng.torch"] = ckpt.torch_rng

    blob = encode_manifest(records)
    meta = {
        "epoch": ckpt.epoch,
        "val_dice": ckpt.val_dice,
        "config_hash": ckpt.config_hash,
        "seed": ckpt.seed,
        "model": ckpt.model,
        "rng_states": ckpt.rng_states,
        "optimizer_param_groups": param_groups,
        "optimizer_scalars": scalars,
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    _atomic_write(weights_path, blob)
    _atomic_write(sidecar_path, json.dumps(meta, indent=2).encode("utf-8"))
    return weights_path


def load_checkpoint(
    path: str,
    expected_config_hash: Optional[str] = None,
    allow_config_mismatch: bool = False,
) -> Checkpoint:
    weights_path, sidecar_path = checkpoint_paths(path)
    if not os.path.exists(weights_path) or not os.path.exists(sidecar_path):
        raise IntegrityError(f"Checkpoint incomplete: need both {weights_path} and {sidecar_path}")
    with open(weights_path, "rb") as f:
        blob = f.read()
    try:
        with open(sidecar_path, "r", encoding="utf-8") as f:
            meta = json.load(f)
    except json.JSONDecodeError as e:
        raise IntegrityError(f"{sidecar_path}: unreadable sidecar ({e})") from e

    digest = hashlib.sha256(blob).hexdigest()
    if digest != meta.get("sha256"):
        raise IntegrityError(f"{weights_path}: checksum mismatch (file is truncated or modified)")

    if expected_config_hash is not None and meta.get("config_hash") != expected_config_hash:
        msg = (f"{weights_path} was written under config {meta.get('config_hash')!r}, "
               f"current config is {expected_config_hash!r}")
        warnings.warn(msg)
        if not allow_config_mismatch:
            raise ConfigMismatchError(msg + "; pass the override flag to load anyway")

    records = decode_manifest(blob)
    model_state: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    opt_state: Dict[int, Dict[str, Any]] = {}
    torch_rng = None
    for name, arr in records.items():
        tensor = torch.from_numpy(arr)
        if name.startswith("model."):
            model_state[name[len("model."):]] = tensor
        elif name.startswith("optimizer."):
            _, idx, key = name.split(".", 2)
            opt_state.setdefault(int(idx), {})[key] = tensor
        elif name == "rng.torch":
            torch_rng = tensor
    for idx, extra in (meta.get("optimizer_scalars") or {}).items():
        opt_state.setdefault(int(idx), {}).update(extra)

    optimizer_state = None
    if meta.get("optimizer_param_groups") is not None:
        optimizer_state = {"state": opt_state, "param_groups": meta["optimizer_param_groups"]}

    return Checkpoint(
        model_state=model_state,
        epoch=int(meta["epoch"]),
        val_dice=float(meta["val_dice"]),
        config_hash=meta.get("config_hash", ""),
        seed=int(meta.get("seed", 0)),
        model=meta.get("model") or {},
        optimizer_state=optimizer_state,
        rng_states=meta.get("rng_states") or {},
        torch_rng=torch_rng,
    )
