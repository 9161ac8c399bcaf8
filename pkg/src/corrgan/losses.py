"""Objective terms for denoiser training.

All distances are per-sample Euclidean norms averaged over the batch, so
loss magnitudes do not depend on batch size.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import InvalidSpec, NumericalError, ShapeError
from .models import HiddenStates, classify_with_hidden, discriminate


@dataclass(frozen=True)
class LossWeights:
    lambda_pix: float = 1.0
    lambda_hid: float = 1.0

    def __post_init__(self):
        if self.lambda_pix < 0 or self.lambda_hid < 0:
            raise InvalidSpec(f"loss weights must be non-negative, got {self}")


@dataclass
class LossBreakdown:
    """Scalar tensors; ``total`` keeps the graph for backprop."""

    adv: torch.Tensor
    pix: torch.Tensor
    hid: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("adv", "pix", "hid", "total")}


def _check_finite(t: torch.Tensor, what: str) -> None:
    if not torch.isfinite(t).all():
        raise NumericalError(f"non-finite value in {what}")


def _mean_l2(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return torch.linalg.vector_norm((a - b).reshape(a.shape[0], -1), dim=1).mean()


def pixel_loss(denoised, original) -> torch.Tensor:
    """Mean over the batch of the per-image L2 distance."""
    return _mean_l2(torch.as_tensor(denoised), torch.as_tensor(original))


def hidden_loss(hidden_denoised: HiddenStates, hidden_original: HiddenStates) -> torch.Tensor:
    """Sum over the four residual groups of the per-sample mean L2 distance.

    The groups have different shapes, so they are compared group by group
    rather than summed into a single tensor first.
    """
    if len(hidden_denoised) != len(hidden_original):
        raise ShapeError("hidden states have different numbers of groups")
    return sum(_mean_l2(a, b) for a, b in zip(hidden_denoised, hidden_original))


def _probs(p) -> torch.Tensor:
    p = torch.as_tensor(p, dtype=torch.get_default_dtype() if not torch.is_tensor(p) else None)
    if torch.isnan(p).any():
        raise NumericalError("NaN discriminator output")
    return p


def discriminator_loss(d_real, d_fake) -> torch.Tensor:
    """-mean(log D(real)) - mean(log(1 - D(fake)))."""
    d_real, d_fake = _probs(d_real), _probs(d_fake)
    return -torch.log(d_real).mean() - torch.log1p(-d_fake).mean()


def generator_adversarial_loss(d_fake) -> torch.Tensor:
    """Non-saturating generator term, -mean(log D(fake))."""
    return -torch.log(_probs(d_fake)).mean()


def total_generator_loss(x_corrupt, perturbation, x_orig, classifier, discriminator,
                         weights: LossWeights = LossWeights()) -> LossBreakdown:
    """Composite generator objective on NHWC batches.

    ``denoised = clip(x_corrupt + perturbation, 0, 1)``; the clip passes
    gradient inside [0, 1] and blocks it outside.
    """
    x_corrupt = torch.as_tensor(x_corrupt)
    x_orig = torch.as_tensor(x_orig)
    if x_corrupt.shape != perturbation.shape or x_corrupt.shape != x_orig.shape:
        raise ShapeError(
            f"inconsistent shapes: corrupt {tuple(x_corrupt.shape)}, perturbation "
            f"{tuple(perturbation.shape)}, original {tuple(x_orig.shape)}")
    denoised = torch.clamp(x_corrupt + perturbation, 0.0, 1.0)

    adv = generator_adversarial_loss(discriminate(discriminator, denoised))
    pix = pixel_loss(denoised, x_orig)
    # unweighted hidden term is still reported, just kept off the graph
    with torch.set_grad_enabled(torch.is_grad_enabled() and weights.lambda_hid > 0):
        _, hid_d = classify_with_hidden(classifier, denoised)
    with torch.no_grad():
        _, hid_o = classify_with_hidden(classifier, x_orig)
    hid = hidden_loss(hid_d, hid_o)
    total = adv + weights.lambda_pix * pix + weights.lambda_hid * hid
    _check_finite(total, "total generator loss")
    return LossBreakdown(adv, pix, hid, total)
