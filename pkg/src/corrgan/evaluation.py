"""Recovery-rate measurement, noise-classifier accuracy and reports.

Recovery is only ever measured over inputs the target classifier gets
wrong *before* denoising.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .data import CorruptedDataset
from .errors import InvalidSpec, IoError
from .models import classify, classify_noise, predict
from .pipeline import Pipeline

REPORT_FORMAT_VERSION = 1
CSV_COLUMNS = ["kind", "severity", "n", "n_misclassified", "n_recovered", "recovery_rate",
               "recovery_rate_ablation", "delta", "ci_low", "ci_high"]
# full-scale figures from the original experiments; reference only, never asserted
REFERENCE = {
    "recovery_rate_full_scale_max": 0.752,
    "nc_accuracy_full_scale": 0.9747,
    "delta_vs_baseline_full_scale_min": 0.10,
}


def index_hash(indices) -> str:
    return hashlib.sha256(np.asarray(sorted(indices), dtype=np.int64).tobytes()).hexdigest()


def select_misclassified(classifier: nn.Module, corrupted: CorruptedDataset) -> np.ndarray:
    """Sorted indices where the classifier's prediction differs from the label."""
    pred = predict(classify, classifier, corrupted.images).argmax(1)
    return np.flatnonzero(pred != corrupted.class_labels)


def recovered_mask(pipeline: Pipeline, images, labels) -> np.ndarray:
    if len(images) == 0:
        return np.zeros(0, dtype=bool)
    return pipeline.run_batch(images).predicted_class == np.asarray(labels)


def recovery_rate(pipeline: Pipeline, images, labels) -> float | None:
    """Fraction classified correctly after denoising; None for an empty subset."""
    mask = recovered_mask(pipeline, images, labels)
    if mask.size == 0:
        return None
    return int(mask.sum()) / mask.size


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return (float("nan"), float("nan"))
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # the bounds are exactly 0 and 1 at the extremes; floating point does not give that
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return (lo, hi)


def paired_bootstrap(a: np.ndarray, b: np.ndarray, n_boot: int = 1000, seed: int = 0,
                     level: float = 0.95) -> tuple[float, float]:
    """Percentile interval for mean(a) - mean(b) over paired resamples."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return (float("nan"), float("nan"))
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, a.size, size=(n_boot, a.size))
    deltas = a[idx].mean(1) - b[idx].mean(1)
    lo, hi = np.quantile(deltas, [(1 - level) / 2, (1 + level) / 2])
    return (float(lo), float(hi))


def compare_ablation(full: Pipeline, ablation: Pipeline, images, labels, indices,
                     ablation_indices=None, n_boot: int = 1000, seed: int = 0) -> dict:
    """Paired recovery rates of the two arms on the same misclassified subset."""
    indices = np.asarray(indices, dtype=np.int64)
    h = index_hash(indices)
    if ablation_indices is not None and index_hash(ablation_indices) != h:
        raise InvalidSpec("the two comparison arms were given different image subsets")
    x, y = np.asarray(images)[indices], np.asarray(labels)[indices]
    rec_full = recovered_mask(full, x, y)
    rec_abl = recovered_mask(ablation, x, y)
    n = len(indices)
    out = {
        "n_misclassified": n,
        "n_recovered": int(rec_full.sum()),
        "n_recovered_ablation": int(rec_abl.sum()),
        "recovery_rate": int(rec_full.sum()) / n if n else None,
        "recovery_rate_ablation": int(rec_abl.sum()) / n if n else None,
        "index_hash": h,
        "index_hash_ablation": index_hash(indices if ablation_indices is None else ablation_indices),
    }
    if n:
        out["delta"] = out["recovery_rate"] - out["recovery_rate_ablation"]
        out["ci_low"], out["ci_high"] = paired_bootstrap(rec_full, rec_abl, n_boot, seed)
    else:
        out["delta"] = out["ci_low"] = out["ci_high"] = None
    return out


@dataclass
class NCResult:
    accuracy: float
    confusion: list  # K x K, rows = true kind
    kinds: list
    per_kind_accuracy: dict
    missing_kinds: list


def evaluate_nc(nc: nn.Module, datasets: Sequence[CorruptedDataset], kinds: Sequence[str]) -> NCResult:
    kinds = list(kinds)
    conf = np.zeros((len(kinds), len(kinds)), dtype=np.int64)
    for ds in datasets:
        if ds.corruption_kind not in kinds:
            raise InvalidSpec(f"test data of kind {ds.corruption_kind!r} not in {kinds}")
        pred = predict(classify_noise, nc, ds.images).argmax(1)
        np.add.at(conf, (kinds.index(ds.corruption_kind), pred), 1)
    rows = conf.sum(1)
    per_kind = {k: float(conf[i, i] / rows[i]) for i, k in enumerate(kinds) if rows[i]}
    missing = [k for i, k in enumerate(kinds) if rows[i] == 0]
    total = conf.sum()
    acc = float(np.trace(conf) / total) if total else float("nan")
    return NCResult(acc, conf.tolist(), kinds, per_kind, missing)


# ---------------------------------------------------------------------------
# report

@dataclass
class CellReport:
    kind: str
    severity: int | None
    n: int
    n_misclassified: int
    n_recovered: int
    recovery_rate: float | None
    corrupted_accuracy: float
    denoised_accuracy: float
    index_hash: str
    recovery_ci_low: float | None = None
    recovery_ci_high: float | None = None
    ablation: dict | None = None
    delta: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    controls: dict = field(default_factory=dict)

    @property
    def undefined(self) -> bool:
        return self.n_misclassified == 0


@dataclass
class EvalReport:
    cells: list
    nc_accuracy: float | None = None
    nc_confusion: list | None = None
    nc_kinds: list | None = None
    config_fingerprint: str = ""
    started_at: str = ""
    finished_at: str = ""
    reference: dict = field(default_factory=lambda: dict(REFERENCE))
    format_version: int = REPORT_FORMAT_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        for c in d["cells"]:
            c["undefined"] = c["n_misclassified"] == 0
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        if d.get("format_version") != REPORT_FORMAT_VERSION:
            raise InvalidSpec(f"unsupported report format_version {d.get('format_version')}")
        cells = []
        for c in d.pop("cells"):
            c = dict(c)
            c.pop("undefined", None)
            cells.append(CellReport(**c))
        return cls(cells=cells, **d)


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def evaluate_cell(full: Pipeline, ds: CorruptedDataset, ablation: Pipeline | None = None,
                  controls: dict | None = None, n_boot: int = 1000, seed: int = 0) -> CellReport:
    """Measure one (kind, severity) dataset.

    ``controls`` maps a name to an extra pipeline (e.g. zero or random
    perturbation) whose recovery rate is recorded on the same subset.
    """
    idx = select_misclassified(full.classifier, ds)
    n = len(ds)
    res = full.run_batch(ds.images)
    correct_after = res.predicted_class == ds.class_labels
    n_rec = int(correct_after[idx].sum())
    n_mis = len(idx)
    rate = n_rec / n_mis if n_mis else None
    lo, hi = wilson_interval(n_rec, n_mis) if n_mis else (None, None)
    cell = CellReport(
        kind=ds.corruption_kind, severity=ds.severity, n=n, n_misclassified=n_mis, n_recovered=n_rec,
        recovery_rate=rate, corrupted_accuracy=float(1 - n_mis / n), denoised_accuracy=float(correct_after.mean()),
        index_hash=index_hash(idx), recovery_ci_low=lo, recovery_ci_high=hi,
    )
    if ablation is not None:
        abl_idx = select_misclassified(ablation.classifier, ds)
        cmp = compare_ablation(full, ablation, ds.images, ds.class_labels, idx, abl_idx, n_boot, seed)
        cell.ablation = {
            "n_recovered": cmp["n_recovered_ablation"],
            "recovery_rate": cmp["recovery_rate_ablation"],
            "index_hash": cmp["index_hash_ablation"],
        }
        cell.delta, cell.ci_low, cell.ci_high = cmp["delta"], cmp["ci_low"], cmp["ci_high"]
    for name, pipe in (controls or {}).items():
        cell.controls[name] = recovery_rate(pipe, ds.images[idx], ds.class_labels[idx])
    return cell


def check_report(report: EvalReport) -> list[str]:
    """Internal-consistency violations (empty list when the report is sound)."""
    problems = []
    for c in report.cells:
        tag = f"{c.kind}/s{c.severity}"
        if c.n_misclassified == 0:
            if c.recovery_rate is not None:
                problems.append(f"{tag}: recovery rate given for an empty subset")
            continue
        if c.recovery_rate != c.n_recovered / c.n_misclassified:
            problems.append(f"{tag}: recovery_rate != n_recovered / n_misclassified")
        if round(c.recovery_rate * c.n_misclassified) != c.n_recovered:
            problems.append(f"{tag}: recovery_rate * n_misclassified != n_recovered")
        if not 0 <= c.denoised_accuracy <= 1:
            problems.append(f"{tag}: denoised_accuracy out of [0, 1]")
        if c.ablation is not None and c.ablation["index_hash"] != c.index_hash:
            problems.append(f"{tag}: comparison arms used different image subsets")
    return problems


def emit_report(report: EvalReport, out_dir: str | Path) -> dict[str, Path]:
    """Write report.json, report.csv and a CorrGAN-vs-ablation bar chart."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {"json": out / "report.json", "csv": out / "report.csv", "chart": out / "recovery.png"}
        paths["json"].write_text(json.dumps(report.to_dict(), indent=2))
        with open(paths["csv"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for c in report.cells:
                abl = c.ablation["recovery_rate"] if c.ablation else None
                w.writerow([c.kind, c.severity, c.n, c.n_misclassified, c.n_recovered, _fmt(c.recovery_rate),
                            _fmt(abl), _fmt(c.delta), _fmt(c.ci_low), _fmt(c.ci_high)])
        _bar_chart(report, paths["chart"])
    except OSError as exc:
        raise IoError(f"cannot write report to {out}: {exc}") from exc
    return paths


def _fmt(v):
    return "" if v is None else v


def _bar_chart(report: EvalReport, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    kinds = sorted({c.kind for c in report.cells})
    full, abl = [], []
    for k in kinds:
        cells = [c for c in report.cells if c.kind == k]
        mis = sum(c.n_misclassified for c in cells)
        full.append(sum(c.n_recovered for c in cells) / mis if mis else 0.0)
        abl.append(sum(c.ablation["n_recovered"] for c in cells if c.ablation) / mis if mis else 0.0)
    x = np.arange(len(kinds))
    fig, ax = plt.subplots(figsize=(max(4, 2 * len(kinds)), 3.5))
    ax.bar(x - 0.2, full, 0.4, label="hidden-state loss")
    ax.bar(x + 0.2, abl, 0.4, label="pixel-only ablation")
    ax.set_xticks(x, kinds)
    ax.set_ylim(0, 1)
    ax.set_ylabel("recovery rate")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def load_report(path: str | Path) -> EvalReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    if not path.is_file():
        raise IoError(f"no report at {path}")
    return EvalReport.from_dict(json.loads(path.read_text()))


# ---------------------------------------------------------------------------
# control generators

class ZeroPerturbation(nn.Module):
    """Returns a zero perturbation; the denoised image equals the input."""

    def forward(self, x):
        return torch.zeros_like(x)


class GaussianPerturbation(nn.Module):
    """Random N(0, sigma^2) perturbation, reproducible per call from ``seed``."""

    def __init__(self, sigma: float = 0.05, seed: int = 0):
        super().__init__()
        self.sigma = sigma
        self.seed = seed

    def forward(self, x):
        g = torch.Generator().manual_seed(self.seed)
        return torch.randn(x.shape, generator=g, dtype=x.dtype) * self.sigma


def with_generators(pipeline: Pipeline, make) -> Pipeline:
    """Copy of ``pipeline`` whose generators are replaced by ``make(kind)``."""
    return Pipeline(pipeline.classifier, pipeline.noise_classifier,
                    {k: make(k) for k in pipeline.kinds}, pipeline.kinds)
