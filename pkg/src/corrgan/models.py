"""The four networks: target classifier with hidden taps, perturbation
generator, discriminator and noise classifier.

Modules take NCHW tensors. The functional wrappers (``classify``,
``extract_hidden``, ...) take NHWC image batches, numpy or torch, which is
the layout used everywhere else in the package.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError

EPS = 1e-7
HIDDEN_SHAPES = {"g1": (64, 32, 32), "g2": (128, 16, 16), "g3": (256, 8, 8), "g4": (512, 4, 4)}


class HiddenStates(NamedTuple):
    """Activations after each of the four residual groups."""

    g1: torch.Tensor
    g2: torch.Tensor
    g3: torch.Tensor
    g4: torch.Tensor


def to_nchw(batch, dtype=None) -> torch.Tensor:
    """NHWC image batch (numpy or tensor) -> NCHW float tensor, shape-checked."""
    x = torch.as_tensor(batch) if not isinstance(batch, torch.Tensor) else batch
    if x.ndim != 4 or tuple(x.shape[1:]) != (32, 32, 3) or x.shape[0] < 1:
        raise ShapeError(f"expected images of shape N x 32 x 32 x 3, got {tuple(x.shape)}")
    if dtype is None:
        dtype = x.dtype if x.is_floating_point() else torch.float32
    return x.permute(0, 3, 1, 2).to(dtype)


def to_nhwc(x: torch.Tensor) -> torch.Tensor:
    return x.permute(0, 2, 3, 1)


def _param_dtype(model: nn.Module) -> torch.dtype:
    p = next(model.parameters(), None)
    return p.dtype if p is not None else torch.float32


# ---------------------------------------------------------------------------
# target classifier

class BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.shortcut = nn.Sequential()
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class ResNet18(nn.Module):
    """18-layer residual classifier for 32x32 inputs (3x3 stem, no stem pooling).

    ``forward(x, return_hidden=True)`` also returns the outputs of the four
    residual groups from the same pass.
    """

    architecture_id = "resnet18-cifar"

    def __init__(self, num_classes: int = 10, widths=(64, 128, 256, 512)):
        super().__init__()
        self.init_kwargs = {"num_classes": num_classes, "widths": list(widths)}
        self.widths = tuple(widths)
        self.num_classes = num_classes
        self.stem = nn.Sequential(nn.Conv2d(3, widths[0], 3, 1, 1, bias=False), nn.BatchNorm2d(widths[0]), nn.ReLU())
        groups = []
        cin = widths[0]
        for i, w in enumerate(widths):
            stride = 1 if i == 0 else 2
            groups.append(nn.Sequential(BasicBlock(cin, w, stride), BasicBlock(w, w, 1)))
            cin = w
        self.groups = nn.ModuleList(groups)
        self.fc = nn.Linear(widths[-1], num_classes)

    def forward(self, x, return_hidden: bool = False):
        h = self.stem(x)
        taps = []
        for g in self.groups:
            h = g(h)
            taps.append(h)
        logits = self.fc(torch.flatten(F.adaptive_avg_pool2d(h, 1), 1))
        if return_hidden:
            return logits, HiddenStates(*taps)
        return logits


# ---------------------------------------------------------------------------
# generator

def _norm(c):
    return nn.GroupNorm(min(8, c), c)


class _ResBlock(nn.Module):
    def __init__(self, c):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(c, c, 3, 1, 1), _norm(c), nn.ReLU(),
            nn.Conv2d(c, c, 3, 1, 1), _norm(c),
        )

    def forward(self, x):
        return F.relu(x + self.body(x))


class PerturbationGenerator(nn.Module):
    """Encoder (32 -> 16 -> 8), residual bottleneck, decoder with skips.

    The output head is zero-initialised, so an untrained generator returns a
    zero perturbation and the denoised image equals its input.
    """

    architecture_id = "perturbation-unet-v1"

    def __init__(self, base: int = 32, n_res: int = 4):
        super().__init__()
        self.init_kwargs = {"base": base, "n_res": n_res}
        c1, c2, c3 = base, base * 2, base * 4
        self.enc1 = nn.Sequential(nn.Conv2d(3, c1, 3, 1, 1), _norm(c1), nn.ReLU())
        self.enc2 = nn.Sequential(nn.Conv2d(c1, c2, 4, 2, 1), _norm(c2), nn.ReLU())
        self.enc3 = nn.Sequential(nn.Conv2d(c2, c3, 4, 2, 1), _norm(c3), nn.ReLU())
        self.res = nn.Sequential(*[_ResBlock(c3) for _ in range(n_res)])
        self.dec3 = nn.Sequential(nn.ConvTranspose2d(c3 * 2, c2, 4, 2, 1), _norm(c2), nn.ReLU())
        self.dec2 = nn.Sequential(nn.ConvTranspose2d(c2 * 2, c1, 4, 2, 1), _norm(c1), nn.ReLU())
        self.head = nn.Conv2d(c1 * 2, 3, 3, 1, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x):
        e1 = self.enc1(x)
        e2 = self.enc2(e1)
        e3 = self.enc3(e2)
        r = self.res(e3)
        d3 = self.dec3(torch.cat([r, e3], 1))
        d2 = self.dec2(torch.cat([d3, e2], 1))
        return torch.tanh(self.head(torch.cat([d2, e1], 1)))


# ---------------------------------------------------------------------------
# discriminator

class Discriminator(nn.Module):
    """Four stride-2 convolutions, global pooling, sigmoid head clamped to [eps, 1-eps]."""

    architecture_id = "patch-critic-v1"

    def __init__(self, base: int = 32):
        super().__init__()
        self.init_kwargs = {"base": base}
        layers, cin = [], 3
        for i in range(4):
            cout = base * 2**i
            layers += [nn.Conv2d(cin, cout, 4, 2, 1), nn.LeakyReLU(0.2)]
            cin = cout
        self.features = nn.Sequential(*layers)
        self.fc = nn.Linear(cin, 1)

    def forward(self, x):
        h = torch.flatten(F.adaptive_avg_pool2d(self.features(x), 1), 1)
        return torch.sigmoid(self.fc(h)).squeeze(1).clamp(EPS, 1 - EPS)


# ---------------------------------------------------------------------------
# noise classifier

class NoiseClassifier(nn.Module):
    """Four conv blocks + linear head over the registered corruption kinds.

    ``forward`` returns logits; :func:`classify_noise` turns them into a
    distribution.
    """

    architecture_id = "noise-cnn4-v1"

    def __init__(self, num_kinds: int, base: int = 32):
        super().__init__()
        self.init_kwargs = {"num_kinds": num_kinds, "base": base}
        self.num_kinds = num_kinds
        layers, cin = [], 3
        for i in range(4):
            cout = base * 2**i
            layers += [nn.Conv2d(cin, cout, 3, 1, 1, bias=False), nn.BatchNorm2d(cout), nn.ReLU()]
            if i < 3:
                layers.append(nn.MaxPool2d(2))
            cin = cout
        self.features = nn.Sequential(*layers)
        self.fc = nn.Linear(cin, num_kinds)

    def forward(self, x):
        return self.fc(torch.flatten(F.adaptive_avg_pool2d(self.features(x), 1), 1))


# ---------------------------------------------------------------------------
# functional surface over NHWC batches

def classify(model: nn.Module, batch) -> torch.Tensor:
    """Logits N x num_classes."""
    return model(to_nchw(batch, _param_dtype(model)))


def classify_with_hidden(model: nn.Module, batch) -> tuple[torch.Tensor, HiddenStates]:
    return model(to_nchw(batch, _param_dtype(model)), return_hidden=True)


def extract_hidden(model: nn.Module, batch) -> HiddenStates:
    return classify_with_hidden(model, batch)[1]


def generate_perturbation(gen: nn.Module, batch) -> torch.Tensor:
    """Perturbation in [-1, 1] with the same NHWC shape as ``batch``."""
    return to_nhwc(gen(to_nchw(batch, _param_dtype(gen))))


def denoise(gen: nn.Module, batch) -> torch.Tensor:
    x = torch.as_tensor(batch)
    return torch.clamp(x.to(_param_dtype(gen)) + generate_perturbation(gen, x), 0.0, 1.0)


def discriminate(disc: nn.Module, batch) -> torch.Tensor:
    return disc(to_nchw(batch, _param_dtype(disc)))


def classify_noise(nc: nn.Module, batch) -> torch.Tensor:
    """Distribution over corruption kinds, N x K."""
    return torch.softmax(nc(to_nchw(batch, _param_dtype(nc))), dim=1)


def build_model(role: str, **kwargs) -> nn.Module:
    if role == "classifier":
        return ResNet18(**kwargs)
    if role == "generator":
        return PerturbationGenerator(**kwargs)
    if role == "discriminator":
        return Discriminator(**kwargs)
    if role == "noise_classifier":
        return NoiseClassifier(**kwargs)
    raise ValueError(f"unknown model role {role!r}")


def as_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy()


@torch.inference_mode()
def predict(fn, model: nn.Module, images, batch_size: int = 500) -> np.ndarray:
    """Run ``fn(model, chunk)`` over ``images`` in chunks and stack the results."""
    was_training = model.training
    model.eval()
    try:
        out = [as_numpy(fn(model, images[i:i + batch_size])) for i in range(0, len(images), batch_size)]
    finally:
        model.train(was_training)
    return np.concatenate(out)
