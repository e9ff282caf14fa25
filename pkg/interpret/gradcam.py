"""
Grad-CAM for single-channel probability outputs.

The scalar target is the sum of predicted foreground probabilities. For each
hooked layer: channel weights are the spatial mean of d(target)/d(activation),
CAM = ReLU(sum_c w_c * A_c), min-max scaled (all-zero when flat) and resized
to the input size.
"""
from typing import Dict, List, Mapping

import torch
import torch.nn as nn

from common.errors import RegistryError
from interpret.feature_maps import Heatmap, minmax
from models.blocks import upsample

# Grad-CAM layer ids -> submodule paths on EnsembleSegmenter
LAYER_IDS: Dict[str, str] = {
    "d1": "decoder_1",
    "d2": "decoder_2",
    "fuse": "fusion.mlp",
    "head": "head.refine",
}


def available_layers(model: nn.Module) -> List[str]:
    out = []
    for layer_id, path in LAYER_IDS.items():
        try:
            model.get_submodule(path)
        except AttributeError:
            continue
        out.append(layer_id)
    return out


def resolve_layer(model: nn.Module, layer_id: str) -> nn.Module:
    if layer_id not in available_layers(model):
        raise RegistryError("layer id", layer_id, available_layers(model))
    return model.get_submodule(LAYER_IDS[layer_id])


class GradCAM:
    """Hooks are registered at construction; call `remove()` (or use `with`) when done."""

    def __init__(self, model: nn.Module, layers: Mapping[str, nn.Module]):
        self.model = model
        self.activations: Dict[str, torch.Tensor] = {}
        self.handles = [layer.register_forward_hook(self._saver(name)) for name, layer in layers.items()]
        self.names = list(layers)

    def _saver(self, name: str):
        def hook(module, inputs, output):
            self.activations[name] = output

        return hook

    def remove(self) -> None:
        for h in self.handles:
            h.remove()
        self.handles = []

    def __enter__(self) -> "GradCAM":
        return self

    def __exit__(self, *exc) -> None:
        self.remove()

    def __call__(self, image: torch.Tensor) -> Dict[str, Heatmap]:
        self.activations = {}
        size = tuple(image.shape[-2:])
        with torch.enable_grad():
            prob = self.model(image)
            target = prob.sum()
            acts = [self.activations[n] for n in self.names]
            grads = torch.autograd.grad(target, acts, allow_unused=True)

        heatmaps = {}
        for name, act, grad in zip(self.names, acts, grads):
            if grad is None:
                grad = torch.zeros_like(act)
            weights = grad[0].mean(dim=(1, 2))
            cam = torch.relu((weights[:, None, None] * act[0]).sum(dim=0)).detach()
            cam = minmax(cam, (0, 1))
            cam = upsample(cam[None, None], size)[0, 0].clamp(0.0, 1.0)
            heatmaps[name] = Heatmap(cam.cpu().numpy(), name)
        return heatmaps


def grad_cam(model: nn.Module, layer_id: str, image: torch.Tensor) -> Heatmap:
    with GradCAM(model, {layer_id: resolve_layer(model, layer_id)}) as cam:
        return cam(image)[layer_id]
