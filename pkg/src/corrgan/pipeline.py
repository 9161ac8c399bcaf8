"""Route each input to the denoiser of its predicted corruption kind.

The upstream misprediction detector is not part of this package: the
pipeline denoises whatever it is given.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np
import torch
import torch.nn as nn

from .errors import IoError, ManifestError
from .models import as_numpy, classify, classify_noise, generate_perturbation, to_nchw
from .training import load_checkpoint

MANIFEST_FORMAT_VERSION = 1


@dataclass(frozen=True)
class GeneratorManifest:
    generators: Mapping[str, str]
    nc_checkpoint: str
    classifier_checkpoint: str
    format_version: int = MANIFEST_FORMAT_VERSION

    def to_dict(self) -> dict:
        return {
            "generators": dict(self.generators),
            "nc_checkpoint": self.nc_checkpoint,
            "classifier_checkpoint": self.classifier_checkpoint,
            "format_version": self.format_version,
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "GeneratorManifest":
        path = Path(path)
        if not path.is_file():
            raise IoError(f"manifest not found: {path}")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: {exc}") from exc
        if d.get("format_version") != MANIFEST_FORMAT_VERSION:
            raise ManifestError(f"{path}: unsupported format_version {d.get('format_version')}")
        gens = d.get("generators")
        if not isinstance(gens, dict) or not gens:
            raise ManifestError(f"{path}: 'generators' must be a non-empty mapping")
        base = path.parent

        def resolve(p):
            p = Path(p)
            return str(p if p.is_absolute() else base / p)

        return cls({k: resolve(v) for k, v in gens.items()}, resolve(d["nc_checkpoint"]),
                   resolve(d["classifier_checkpoint"]), d["format_version"])


@dataclass(frozen=True)
class PipelineResult:
    predicted_kind: str
    kind_confidence: float
    denoised: np.ndarray  # 32 x 32 x 3
    predicted_class: int
    class_logits: np.ndarray  # 10


@dataclass(frozen=True)
class BatchResult:
    kind_index: np.ndarray
    kind_probs: np.ndarray
    denoised: np.ndarray
    class_logits: np.ndarray

    @property
    def predicted_class(self) -> np.ndarray:
        return self.class_logits.argmax(1)


class Pipeline:
    """Noise classifier -> per-kind generator -> target classifier.

    Immutable after construction; models are held in eval mode and only
    used under inference mode, so concurrent calls are safe.
    """

    def __init__(self, classifier: nn.Module, noise_classifier: nn.Module,
                 generators: Mapping[str, nn.Module], kinds):
        kinds = list(kinds)
        if len(set(kinds)) != len(kinds):
            raise ManifestError(f"duplicate kinds: {kinds}")
        missing = [k for k in kinds if k not in generators]
        if missing:
            raise ManifestError(f"no generator for kind(s) {missing}")
        extra = [k for k in generators if k not in kinds]
        if extra:
            raise ManifestError(f"generator(s) for kinds the noise classifier does not know: {extra}")
        for m in (classifier, noise_classifier, *generators.values()):
            m.eval()
        self._classifier = classifier
        self._nc = noise_classifier
        self._generators = MappingProxyType(dict(generators))
        self._kinds = tuple(kinds)

    @property
    def kinds(self) -> tuple[str, ...]:
        return self._kinds

    @property
    def classifier(self) -> nn.Module:
        return self._classifier

    @property
    def noise_classifier(self) -> nn.Module:
        return self._nc

    @property
    def generators(self) -> Mapping[str, nn.Module]:
        return self._generators

    @torch.inference_mode()
    def run_batch(self, batch, chunk: int = 500) -> BatchResult:
        """Denoise and classify a batch; outputs are numpy arrays."""
        batch = np.asarray(batch, dtype=np.float32)
        to_nchw(torch.from_numpy(batch[:1]))  # shape check
        out = []
        for start in range(0, len(batch), chunk):
            out.append(self._run_chunk(torch.from_numpy(batch[start:start + chunk])))
        return BatchResult(*(np.concatenate(parts) for parts in zip(*out)))

    def _run_chunk(self, x: torch.Tensor):
        probs = as_numpy(classify_noise(self._nc, x))
        kind_idx = probs.argmax(1)  # first maximum wins, i.e. lowest kind index
        denoised = x.clone()
        for k, kind in enumerate(self._kinds):
            sel = np.flatnonzero(kind_idx == k)
            if sel.size:
                xs = x[sel]
                y = xs + generate_perturbation(self._generators[kind], xs)
                denoised[sel] = torch.clamp(torch.where(torch.isnan(y), xs, y), 0.0, 1.0)
        logits = as_numpy(classify(self._classifier, denoised))
        return kind_idx, probs, as_numpy(denoised), logits


def build_pipeline(manifest_path: str | Path) -> Pipeline:
    manifest = GeneratorManifest.load(manifest_path)
    for p in (manifest.classifier_checkpoint, manifest.nc_checkpoint, *manifest.generators.values()):
        if not Path(p).is_dir():
            raise IoError(f"missing checkpoint: {p}")
    classifier = load_checkpoint(manifest.classifier_checkpoint, role="classifier").model
    nc = load_checkpoint(manifest.nc_checkpoint, role="noise_classifier")
    kinds = nc.extra.get("kinds")
    if not kinds:
        raise ManifestError(f"{manifest.nc_checkpoint}: noise classifier manifest lists no kinds")
    generators = {}
    for kind, path in manifest.generators.items():
        ck = load_checkpoint(path, role="generator")
        if ck.extra.get("kind", kind) != kind:
            raise ManifestError(f"{path}: generator trained for {ck.extra['kind']!r}, manifest maps it to {kind!r}")
        generators[kind] = ck.model
    return Pipeline(classifier, nc.model, generators, kinds)


def denoise_and_classify(pipeline: Pipeline, batch) -> list[PipelineResult]:
    res = pipeline.run_batch(batch)
    return [
        PipelineResult(
            predicted_kind=pipeline.kinds[k],
            kind_confidence=float(res.kind_probs[i, k]),
            denoised=res.denoised[i],
            predicted_class=int(res.class_logits[i].argmax()),
            class_logits=res.class_logits[i],
        )
        for i, k in enumerate(res.kind_index)
    ]
