"""Training loops and checkpoint I/O.

Three trainers: the target classifier, the noise classifier and one
denoiser GAN per corruption kind. Every trainer is seeded from a single
root seed fanned out into labelled substreams.
"""
from __future__ import annotations

import contextlib
import hashlib
import json
import logging
import math
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import corruptions
from .data import CorruptedDataset
from .errors import ChecksumError, InvalidSpec, IoError, ManifestError, NumericalError
from .losses import LossWeights, discriminator_loss, total_generator_loss
from .models import build_model, classify, classify_noise, discriminate, generate_perturbation, predict

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
WEIGHTS_FILE = "weights.pt"
MANIFEST_FILE = "manifest.json"
HISTORY_FILE = "history.jsonl"
ROLES = ("classifier", "generator", "discriminator", "noise_classifier")


@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 64
    lr_generator: float = 2e-4
    lr_discriminator: float = 2e-4
    lr_classifier: float = 1e-3
    seed: int = 0
    lambda_pix: float = 1.0
    lambda_hid: float = 1.0
    device: str = "cpu"
    deterministic: bool = True
    d_steps: int = 1
    augment: bool = False
    cosine_lr: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidSpec(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1 or self.d_steps < 1:
            raise InvalidSpec("batch_size and d_steps must be >= 1")
        for name in ("lr_generator", "lr_discriminator", "lr_classifier"):
            if not getattr(self, name) > 0:
                raise InvalidSpec(f"{name} must be positive")
        LossWeights(self.lambda_pix, self.lambda_hid)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_pix, self.lambda_hid)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    def hash(self) -> str:
        return config_hash(self.to_dict())


def config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def derive_seed(root: int, label: str) -> int:
    """Independent 63-bit seed for the substream named ``label``."""
    ss = np.random.SeedSequence(int(root), spawn_key=(zlib.crc32(label.encode()),))
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return ((int(hi) << 32) | int(lo)) & (2**63 - 1)


@contextlib.contextmanager
def _determinism(enabled: bool):
    prev = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(enabled)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(prev)


@dataclass
class Checkpoint:
    model: nn.Module
    role: str
    config: TrainConfig | None = None
    step: int = 0
    history: list = field(default_factory=list)
    rng_state: torch.Tensor | None = None
    extra: dict = field(default_factory=dict)


@dataclass
class GanResult:
    generator: Checkpoint
    discriminator: Checkpoint
    history: list


def _batches(n: int, batch_size: int, gen: torch.Generator):
    perm = torch.randperm(n, generator=gen).numpy()
    for i in range(0, n, batch_size):
        yield perm[i:i + batch_size]


def _augment(x: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    """Random horizontal flip and 4-pixel translation on an NHWC batch."""
    n = x.shape[0]
    flip = torch.rand(n, generator=gen) < 0.5
    x = torch.where(flip[:, None, None, None], x.flip(2), x)
    padded = F.pad(x.permute(0, 3, 1, 2), (4, 4, 4, 4), mode="reflect").permute(0, 2, 3, 1)
    dy, dx = torch.randint(0, 9, (2,), generator=gen).tolist()
    return padded[:, dy:dy + 32, dx:dx + 32, :]


def _scheduler(opt, config: TrainConfig, steps_per_epoch: int):
    total = max(1, config.epochs * steps_per_epoch)
    if not config.cosine_lr:
        return None
    return torch.optim.lr_scheduler.LambdaLR(opt, lambda s: 0.5 * (1 + math.cos(math.pi * min(s, total) / total)))


def _write_log(path, records):
    if path is None:
        return
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


def accuracy(model: nn.Module, ds: CorruptedDataset) -> float:
    pred = predict(classify, model, ds.images).argmax(1)
    return float((pred == ds.class_labels).mean())


def _train_supervised(model, images, labels, config, forward, log_path=None):
    n = len(images)
    gen = torch.Generator().manual_seed(derive_seed(config.seed, "shuffle"))
    aug_gen = torch.Generator().manual_seed(derive_seed(config.seed, "augment"))
    opt = torch.optim.Adam(model.parameters(), lr=config.lr_classifier)
    sched = _scheduler(opt, config, math.ceil(n / config.batch_size))
    history = []
    step = 0
    for epoch in range(config.epochs):
        model.train()
        for idx in _batches(n, config.batch_size, gen):
            x = torch.from_numpy(images[idx])
            if config.augment:
                x = _augment(x, aug_gen)
            y = torch.from_numpy(labels[idx])
            loss = F.cross_entropy(forward(model, x), y)
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite loss at step {step}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            if sched is not None:
                sched.step()
            history.append({"step": step, "epoch": epoch, "loss": loss.item()})
            step += 1
        log.info("epoch %d mean loss %.4f", epoch, np.mean([h["loss"] for h in history if h["epoch"] == epoch]))
    model.eval()
    _write_log(log_path, history)
    return history, step, gen.get_state()


def train_target_classifier(train: CorruptedDataset, config: TrainConfig,
                            test: CorruptedDataset | None = None, log_path=None) -> Checkpoint:
    with _determinism(config.deterministic):
        torch.manual_seed(derive_seed(config.seed, "init/classifier"))
        model = build_model("classifier")
        history, step, rng = _train_supervised(model, train.images, train.class_labels, config, classify, log_path)
    extra = {}
    if test is not None:
        extra["test_accuracy"] = accuracy(model, test)
        log.info("classifier clean test accuracy %.4f", extra["test_accuracy"])
    return Checkpoint(model, "classifier", config, step, history, rng, extra)


def _kind_labels(datasets: Sequence[CorruptedDataset], kinds: list[str]):
    images = np.concatenate([d.images for d in datasets])
    labels = np.concatenate([np.full(len(d), kinds.index(d.corruption_kind)) for d in datasets])
    return images, labels


def noise_kinds(datasets: Sequence[CorruptedDataset]) -> list[str]:
    """Kinds present in ``datasets``, in registry order."""
    present = {d.corruption_kind for d in datasets}
    if None in present:
        raise InvalidSpec("noise classifier data must carry a corruption kind")
    order = corruptions.registered_kinds()
    return sorted(present, key=lambda k: order.index(k) if k in order else len(order))


def train_noise_classifier(datasets: Sequence[CorruptedDataset], config: TrainConfig,
                           test: Sequence[CorruptedDataset] | None = None, log_path=None) -> Checkpoint:
    kinds = noise_kinds(datasets)
    if len(kinds) < 2:
        raise InvalidSpec(f"need at least two corruption kinds to train a noise classifier, got {kinds}")
    images, labels = _kind_labels(datasets, kinds)
    with _determinism(config.deterministic):
        torch.manual_seed(derive_seed(config.seed, "init/noise_classifier"))
        model = build_model("noise_classifier", num_kinds=len(kinds))
        history, step, rng = _train_supervised(model, images, labels, config, classify, log_path)
    extra = {"kinds": kinds}
    if test:
        from .evaluation import evaluate_nc

        res = evaluate_nc(model, test, kinds)
        extra["test_accuracy"] = res.accuracy
        extra["per_kind_accuracy"] = res.per_kind_accuracy
        log.info("noise classifier held-out accuracy %.4f", res.accuracy)
    return Checkpoint(model, "noise_classifier", config, step, history, rng, extra)


def check_paired(corrupted: CorruptedDataset, clean: CorruptedDataset) -> None:
    if len(corrupted) != len(clean) or not np.array_equal(corrupted.class_labels, clean.class_labels):
        raise InvalidSpec("corrupted and clean datasets are not aligned index-wise")


def train_denoiser_gan(kind: str, corrupted: CorruptedDataset, clean: CorruptedDataset,
                       classifier: nn.Module, config: TrainConfig, log_path=None) -> GanResult:
    """Alternate discriminator and generator updates over (corrupted, clean) pairs.

    The classifier only supplies hidden states; it stays in eval mode and is
    never updated.
    """
    check_paired(corrupted, clean)
    if corrupted.corruption_kind not in (None, kind):
        raise InvalidSpec(f"dataset holds {corrupted.corruption_kind!r} images, not {kind!r}")
    weights = config.loss_weights
    n = len(clean)
    req_grad = [p.requires_grad for p in classifier.parameters()]
    was_training = classifier.training
    classifier.eval()
    classifier.requires_grad_(False)

    history = []
    step = 0
    with _determinism(config.deterministic):
        torch.manual_seed(derive_seed(config.seed, f"init/generator/{kind}"))
        gen = build_model("generator")
        torch.manual_seed(derive_seed(config.seed, f"init/discriminator/{kind}"))
        disc = build_model("discriminator")
        opt_g = torch.optim.Adam(gen.parameters(), lr=config.lr_generator, betas=(0.5, 0.999))
        opt_d = torch.optim.Adam(disc.parameters(), lr=config.lr_discriminator, betas=(0.5, 0.999))
        shuffle = torch.Generator().manual_seed(derive_seed(config.seed, f"shuffle/{kind}"))
        try:
            for epoch in range(config.epochs):
                gen.train()
                disc.train()
                for idx in _batches(n, config.batch_size, shuffle):
                    x_c = torch.from_numpy(corrupted.images[idx])
                    x_o = torch.from_numpy(clean.images[idx])
                    pert = generate_perturbation(gen, x_c)
                    fake = torch.clamp(x_c + pert, 0.0, 1.0).detach()

                    disc.requires_grad_(True)
                    for _ in range(config.d_steps):
                        d_loss = discriminator_loss(discriminate(disc, x_o), discriminate(disc, fake))
                        if not torch.isfinite(d_loss):
                            raise NumericalError(f"non-finite discriminator loss at step {step}")
                        opt_d.zero_grad(set_to_none=True)
                        d_loss.backward()
                        opt_d.step()

                    disc.requires_grad_(False)
                    try:
                        parts = total_generator_loss(x_c, pert, x_o, classifier, disc, weights)
                    except NumericalError as exc:
                        raise NumericalError(f"{exc} at step {step}") from exc
                    opt_g.zero_grad(set_to_none=True)
                    parts.total.backward()
                    opt_g.step()

                    history.append({"step": step, "epoch": epoch, **parts.as_floats(), "d_loss": d_loss.item()})
                    step += 1
                if history:
                    last = [h for h in history if h["epoch"] == epoch]
                    log.info("%s epoch %d: pix %.4f hid %.4f adv %.4f d %.4f", kind, epoch,
                             *(np.mean([h[k] for h in last]) for k in ("pix", "hid", "adv", "d_loss")))
        finally:
            for p, r in zip(classifier.parameters(), req_grad):
                p.requires_grad_(r)
            classifier.train(was_training)
    gen.eval()
    disc.eval()
    disc.requires_grad_(True)
    _write_log(log_path, history)
    rng = shuffle.get_state()
    extra = {"kind": kind}
    return GanResult(
        Checkpoint(gen, "generator", config, step, history, rng, extra),
        Checkpoint(disc, "discriminator", config, step, [], rng, dict(extra)),
        history,
    )


# ---------------------------------------------------------------------------
# checkpoints

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> dict:
    """Write ``weights.pt``, ``manifest.json`` and ``history.jsonl`` under ``path``."""
    if ckpt.role not in ROLES:
        raise ManifestError(f"unknown model role {ckpt.role!r}")
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        torch.save({"state_dict": ckpt.model.state_dict(), "step": ckpt.step, "rng_state": ckpt.rng_state},
                   path / WEIGHTS_FILE)
    except OSError as exc:
        raise IoError(f"cannot write checkpoint to {path}: {exc}") from exc
    kwargs = getattr(ckpt.model, "init_kwargs", {})
    manifest = {
        "model_role": ckpt.role,
        "architecture_id": getattr(ckpt.model, "architecture_id", type(ckpt.model).__name__),
        "input_shape": [32, 32, 3],
        "num_classes_or_kinds": kwargs.get("num_classes", kwargs.get("num_kinds")),
        "training_config_hash": ckpt.config.hash() if ckpt.config else None,
        "training_config": ckpt.config.to_dict() if ckpt.config else None,
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_kwargs": kwargs,
        "step": ckpt.step,
        "weights_sha256": _sha256(path / WEIGHTS_FILE),
        "extra": ckpt.extra,
    }
    (path / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2))
    _write_log(path / HISTORY_FILE, ckpt.history)
    return manifest


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    mf = path / MANIFEST_FILE
    if not mf.is_file() or not (path / WEIGHTS_FILE).is_file():
        raise IoError(f"no checkpoint at {path}")
    try:
        manifest = json.loads(mf.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{mf}: {exc}") from exc
    if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ManifestError(f"{mf}: unsupported format_version {manifest.get('format_version')}")
    return manifest


def load_checkpoint(path: str | Path, role: str | None = None) -> Checkpoint:
    """Load a checkpoint in eval mode, checking its role and weight checksum."""
    path = Path(path)
    manifest = read_manifest(path)
    if role is not None and manifest["model_role"] != role:
        raise ManifestError(f"{path}: expected a {role} checkpoint, manifest says {manifest['model_role']!r}")
    if _sha256(path / WEIGHTS_FILE) != manifest["weights_sha256"]:
        raise ChecksumError(f"{path / WEIGHTS_FILE}: checksum does not match manifest")
    try:
        blob = torch.load(path / WEIGHTS_FILE, map_location="cpu", weights_only=True)
        model = build_model(manifest["model_role"], **manifest["model_kwargs"])
        model.load_state_dict(blob["state_dict"])
    except (RuntimeError, KeyError, EOFError, ValueError) as exc:
        raise ChecksumError(f"{path}: unreadable weights ({exc})") from exc
    model.eval()
    history = []
    if (path / HISTORY_FILE).is_file():
        history = [json.loads(line) for line in (path / HISTORY_FILE).read_text().splitlines() if line]
    cfg = TrainConfig.from_dict(manifest["training_config"]) if manifest.get("training_config") else None
    return Checkpoint(model, manifest["model_role"], cfg, blob["step"], history, blob["rng_state"],
                      manifest.get("extra", {}))


def probe_batch(n: int = 8, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).random((n, 32, 32, 3), dtype=np.float32)


def probe_outputs(model: nn.Module, role: str, batch) -> np.ndarray:
    fn = {"classifier": classify, "generator": generate_perturbation, "discriminator": discriminate,
          "noise_classifier": classify_noise}[role]
    return predict(fn, model, batch)
