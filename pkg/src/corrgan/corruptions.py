"""Natural corruptions (fog, brightness) at severities 1-5.

Kinds live in a registry so further corruptions can be added with
:func:`register` without touching the rest of the package.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import InvalidSpec, ShapeError, UnsupportedCorruption

IMAGE_SHAPE = (32, 32, 3)
SEVERITIES = (1, 2, 3, 4, 5)
PLASMA_SIZES = (32, 64, 128, 256)

CorruptionFn = Callable[[np.ndarray, object, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class CorruptionKind:
    name: str
    fn: CorruptionFn
    params: tuple  # one entry per severity 1..5

    def param(self, severity: int):
        return self.params[severity - 1]


_REGISTRY: dict[str, CorruptionKind] = {}


def register(name: str, fn: CorruptionFn, params: Sequence) -> None:
    if len(params) != len(SEVERITIES):
        raise InvalidSpec(f"{name}: need {len(SEVERITIES)} severity parameters, got {len(params)}")
    _REGISTRY[name] = CorruptionKind(name, fn, tuple(params))


def set_params(name: str, params: Sequence) -> None:
    """Override the per-severity parameters of a registered kind."""
    kind = get_kind(name)
    register(name, kind.fn, params)


def get_kind(name: str) -> CorruptionKind:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnsupportedCorruption(f"unknown corruption kind {name!r}; registered: {registered_kinds()}") from None


def registered_kinds() -> list[str]:
    return list(_REGISTRY)


@dataclass(frozen=True)
class CorruptionSpec:
    """Corruption kind, severity level and RNG seed.

    ``param`` replaces the registry parameter for the chosen severity, which
    is mainly useful in tests (e.g. a zero brightness shift).
    """

    kind: str
    severity: int
    seed: int = 0
    param: object = field(default=None, compare=True)

    def __post_init__(self):
        if isinstance(self.severity, bool) or not isinstance(self.severity, (int, np.integer)):
            raise InvalidSpec(f"severity must be an integer in 1..5, got {self.severity!r}")
        if self.severity not in SEVERITIES:
            raise InvalidSpec(f"severity must be in 1..5, got {self.severity}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidSpec(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    def resolved_param(self):
        return self.param if self.param is not None else get_kind(self.kind).param(self.severity)


def _plasma(map_size: int, decay: float, rng: np.random.Generator) -> np.ndarray:
    n_noise = 3 * sum((map_size // (map_size >> lvl)) ** 2 for lvl in range(map_size.bit_length() - 1))
    noise = rng.uniform(-1.0, 1.0, size=n_noise)
    out = np.empty((map_size, map_size), dtype=np.float64)
    kernels.plasma_fill(out, noise, float(decay))
    return out


def plasma_fractal(map_size: int = 32, decay: float = 3.0, seed: int | np.random.Generator = 0) -> np.ndarray:
    """Diamond-square heightmap on a torus, scaled so min is 0 and max is 1.

    The random amplitude starts at 100**2 and each level divides the base
    amplitude by ``decay`` before squaring, which reproduces the fog texture
    of the common corruption benchmark.
    """
    if map_size not in PLASMA_SIZES:
        raise InvalidSpec(f"map_size must be one of {PLASMA_SIZES}, got {map_size}")
    if not decay > 0:
        raise InvalidSpec(f"decay must be positive, got {decay}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _plasma(map_size, decay, rng)


def _brightness(x: np.ndarray, shift: float, rng: np.random.Generator) -> np.ndarray:
    flat = np.ascontiguousarray(x.reshape(-1, 3), dtype=np.float64)
    kernels.brightness_hsv(flat, float(shift))
    return flat.reshape(x.shape)


def _fog(x: np.ndarray, param, rng: np.random.Generator) -> np.ndarray:
    thickness, decay = param
    h, w = x.shape[1:3]
    out = np.empty_like(x)
    for i, img in enumerate(x):
        peak = img.max()
        fog = _plasma(32, decay, rng)[:h, :w, None]
        out[i] = (img + thickness * fog) * peak / (peak + thickness)
    return out


register("fog", _fog, [(1.5, 2.0), (2.0, 2.0), (2.5, 1.7), (2.5, 1.5), (3.0, 1.4)])
register("brightness", _brightness, [0.1, 0.2, 0.3, 0.4, 0.5])


def check_batch(batch: np.ndarray) -> None:
    if batch.ndim != 4 or batch.shape[1:] != IMAGE_SHAPE or batch.shape[0] < 1:
        raise ShapeError(f"expected images of shape N x 32 x 32 x 3 with N >= 1, got {batch.shape}")


def apply_corruption(batch: np.ndarray, spec: CorruptionSpec, batch_index: int = 0) -> np.ndarray:
    """Corrupt an N x 32 x 32 x 3 float batch in [0, 1].

    The RNG stream is derived from ``(spec.seed, batch_index)``, so disjoint
    batches can be processed independently and in any order.
    """
    kind = get_kind(spec.kind)
    batch = np.asarray(batch)
    check_batch(batch)
    if not np.issubdtype(batch.dtype, np.floating):
        raise InvalidSpec(f"images must be floats in [0, 1], got dtype {batch.dtype}")
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), int(batch_index)]))
    out = kind.fn(batch.astype(np.float64), spec.resolved_param(), rng)
    return np.clip(out, 0.0, 1.0).astype(batch.dtype, copy=False)
