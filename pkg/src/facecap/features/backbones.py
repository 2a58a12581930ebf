"""Visual backbones producing K x D spatial feature maps."""

import numpy as np
import torch
import torch.nn as nn
from PIL import Image

from ..errors import EnvironmentUnavailable, InputError
from .faces import load_image
from .types import VisualFeatureMap

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class VisualBackbone:
    """Maps an RGB image to a ``(grid, grid, dim)`` array."""

    name = "base"
    grid = 14
    dim = 512

    @property
    def n_regions(self):
        return self.grid * self.grid

    def feature_grid(self, rgb):
        raise NotImplementedError


def extract_visual_features(backbone, image):
    """Flatten the backbone grid row-major: row ``i*grid + j`` is cell ``(i, j)``."""
    grid = np.asarray(backbone.feature_grid(load_image(image)), dtype=np.float32)
    if grid.shape != (backbone.grid, backbone.grid, backbone.dim):
        raise InputError(f"backbone {backbone.name} produced {grid.shape}, expected {(backbone.grid, backbone.grid, backbone.dim)}")
    return VisualFeatureMap(grid.reshape(backbone.grid * backbone.grid, backbone.dim))


class ConstantBackbone(VisualBackbone):
    name = "constant"

    def __init__(self, value=1.0, grid=14, dim=512):
        self.value, self.grid, self.dim = value, grid, dim

    def feature_grid(self, rgb):
        return np.full((self.grid, self.grid, self.dim), self.value, dtype=np.float32)


class PixelProjectionBackbone(VisualBackbone):
    """Deterministic stand-in: area-resample to ``grid x grid`` and apply a fixed random projection.

    Distinct images give distinct features, which is all the synthetic fixture needs.
    """

    name = "pixel-projection"

    def __init__(self, grid=14, dim=512, seed=0):
        self.grid, self.dim = grid, dim
        rng = np.random.default_rng(seed)
        self.weight = rng.standard_normal((3, dim)).astype(np.float32) * 2.0
        self.bias = rng.uniform(-1.0, 1.0, dim).astype(np.float32)

    def feature_grid(self, rgb):
        small = Image.fromarray(rgb).resize((self.grid, self.grid), Image.BOX)
        x = np.asarray(small, dtype=np.float32) / 255.0 - 0.5
        return np.tanh(x @ self.weight + self.bias)


class SmallCNNBackbone(VisualBackbone, nn.Module):
    """A compact conv net with adaptive pooling to the configured grid."""

    name = "small-cnn"

    def __init__(self, grid=14, dim=512, width=32, image_size=112, seed=0):
        nn.Module.__init__(self)
        self.grid, self.dim, self.image_size = grid, dim, image_size
        g = torch.Generator().manual_seed(seed)
        self.body = nn.Sequential(
            nn.Conv2d(3, width, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(width, 2 * width, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(2 * width, dim, 3, padding=1), nn.ReLU(),
            nn.AdaptiveAvgPool2d(grid),
        )
        with torch.no_grad():
            for p in self.body.parameters():
                p.copy_(torch.randn(p.shape, generator=g) * (0.1 if p.dim() == 1 else (2.0 / p[0].numel()) ** 0.5))
        self.eval()

    @torch.no_grad()
    def feature_grid(self, rgb):
        x = torch.from_numpy(np.array(Image.fromarray(rgb).resize((self.image_size,) * 2))).float() / 255.0
        mean, std = torch.tensor(IMAGENET_MEAN), torch.tensor(IMAGENET_STD)
        x = ((x - mean) / std).permute(2, 0, 1).unsqueeze(0)
        return self.body(x)[0].permute(1, 2, 0).numpy()


class VggEBackbone(VisualBackbone):
    """ImageNet VGG-19 (configuration E) last conv layer: 224px in, 14x14x512 out."""

    name = "vgg-e"
    grid, dim = 14, 512

    def __init__(self, weights="IMAGENET1K_V1"):
        try:
            import torchvision
            net = torchvision.models.vgg19(weights=weights)
        except Exception as exc:  # download failure, missing package, bad weights tag
            raise EnvironmentUnavailable(
                f"visual backbone 'vgg-e' unavailable ({exc}); use 'small-cnn' or 'pixel-projection'") from exc
        # drop the final max-pool so 224 -> 14
        self.body = net.features[:-1].eval()

    @torch.no_grad()
    def feature_grid(self, rgb):
        x = torch.from_numpy(np.array(Image.fromarray(rgb).resize((224, 224), Image.BICUBIC))).float() / 255.0
        mean, std = torch.tensor(IMAGENET_MEAN), torch.tensor(IMAGENET_STD)
        x = ((x - mean) / std).permute(2, 0, 1).unsqueeze(0)
        return self.body(x)[0].permute(1, 2, 0).numpy()


def get_backbone(name, **kwargs):
    factories = {
        "vgg-e": VggEBackbone,
        "small-cnn": SmallCNNBackbone,
        "pixel-projection": PixelProjectionBackbone,
        "constant": ConstantBackbone,
    }
    if name not in factories:
        raise EnvironmentUnavailable(f"unknown visual backbone {name!r}; choose from {sorted(factories)}")
    return factories[name](**kwargs)
