"""``corrgan`` command-line entry point.

Subcommands: make-data, corrupt, train-classifier, train-nc, train-gan,
denoise, evaluate, report. Flags override values from the JSON config
(``--config`` or ``$CORRGAN_CONFIG``). Failures print one JSON line to
stderr and exit 1; usage errors exit 2.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config, setup_logging
from .errors import CorrGANError, InvalidSpec, IoError

log = logging.getLogger("corrgan.cli")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config (default: $CORRGAN_CONFIG)")
    p.add_argument("--seed", type=int, help="root seed for every random stream")
    p.add_argument("--dry-run", action="store_true", help="validate and print the plan, write nothing")
    p.add_argument("--log-level", default="INFO")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corrgan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="write clean train/test datasets (synthetic or CIFAR-10 batches)")
    p.add_argument("--out")
    p.add_argument("--cifar-dir", help="directory with CIFAR-10 python batches; synthetic data if omitted")
    p.add_argument("--n-train", type=int, default=10000)
    p.add_argument("--n-test", type=int, default=2000)

    p = sub.add_parser("corrupt", help="corrupt a clean dataset")
    p.add_argument("--dataset")
    p.add_argument("--kind", action="append")
    p.add_argument("--severity", action="append", type=int)
    p.add_argument("--out")

    p = sub.add_parser("train-classifier", help="train the target classifier")
    p.add_argument("--dataset")
    p.add_argument("--test")
    p.add_argument("--out")
    _train_flags(p)

    p = sub.add_parser("train-nc", help="train the noise classifier")
    p.add_argument("--datasets", nargs="+")
    p.add_argument("--test", nargs="+", dest="nc_test")
    p.add_argument("--out")
    _train_flags(p)

    p = sub.add_parser("train-gan", help="train the denoiser GAN for one corruption kind")
    p.add_argument("--kind", required=True)
    p.add_argument("--corrupted")
    p.add_argument("--clean")
    p.add_argument("--classifier")
    p.add_argument("--out")
    p.add_argument("--lambda-pix", type=float)
    p.add_argument("--lambda-hid", type=float)
    _train_flags(p)

    p = sub.add_parser("denoise", help="run the routing pipeline over a dataset")
    p.add_argument("--manifest")
    p.add_argument("--dataset")
    p.add_argument("--out")

    p = sub.add_parser("evaluate", help="measure recovery, ablation gap and NC accuracy")
    p.add_argument("--manifest")
    p.add_argument("--ablation-manifest")
    p.add_argument("--datasets", nargs="+")
    p.add_argument("--nc-test", nargs="+")
    p.add_argument("--out")

    p = sub.add_parser("report", help="re-render and check a report.json")
    p.add_argument("--report")
    p.add_argument("--out")

    for sp in sub.choices.values():
        _common(sp)
    return parser


def _paths(args, cfg: RunConfig, *keys, required=()):
    """Flag value if given, else config ``paths`` entry."""
    out = {}
    for k in keys:
        v = getattr(args, k, None)
        out[k] = v if v is not None else cfg.paths.get(k)
    for k in required:
        if not out.get(k):
            raise InvalidSpec(f"missing required path '{k}' (flag --{k.replace('_', '-')} or config paths.{k})")
    return out


def _need_dataset(path, what="dataset"):
    from .data import load_meta

    try:
        load_meta(path)
    except IoError:
        raise IoError(f"missing {what}: no dataset at {path}") from None


def _need_checkpoint(path, what):
    from .training import read_manifest

    if not path:
        raise IoError(f"missing prerequisite: {what} checkpoint (pass --classifier or set paths.classifier)")
    try:
        read_manifest(path)
    except IoError:
        raise IoError(f"missing prerequisite: {what} checkpoint not found at {path}") from None


def _plan(command, **kw):
    print(json.dumps({"command": command, "dry_run": True, **kw}, default=str))
    return 0


def cmd_make_data(args, cfg):
    from .data import load_cifar10_batches, make_synthetic, save_dataset

    p = _paths(args, cfg, "out", "cifar_dir", required=("out",))
    if p["cifar_dir"] and not Path(p["cifar_dir"]).is_dir():
        raise IoError(f"CIFAR-10 directory not found: {p['cifar_dir']}")
    if args.dry_run:
        return _plan("make-data", source="cifar10" if p["cifar_dir"] else "synthetic", **p)
    out = Path(p["out"])
    if p["cifar_dir"]:
        train, test = load_cifar10_batches(p["cifar_dir"], "train"), load_cifar10_batches(p["cifar_dir"], "test")
    else:
        train = make_synthetic(args.n_train, seed=cfg.seed)
        test = make_synthetic(args.n_test, seed=cfg.seed + 1)
    save_dataset(train, out / "train")
    save_dataset(test, out / "test")
    log.info("wrote %d train / %d test images under %s", len(train), len(test), out)
    return 0


def cmd_corrupt(args, cfg):
    from .data import corrupt_dataset

    p = _paths(args, cfg, "dataset", "out", required=("dataset", "out"))
    kinds = args.kind or cfg.corruption.kinds
    sev = args.severity or cfg.corruption.severities
    cfg.corruption.kinds, cfg.corruption.severities = kinds, sev
    cfg.corruption.apply()
    _need_dataset(p["dataset"])
    flat = len(kinds) == 1 and len(sev) == 1
    if args.dry_run:
        return _plan("corrupt", kinds=kinds, severities=sev, seed=cfg.seed, layout="flat" if flat else "nested", **p)
    corrupt_dataset(p["dataset"], kinds, sev, cfg.seed, p["out"], layout="flat" if flat else "nested")
    return 0


def cmd_train_classifier(args, cfg):
    from .data import load_dataset
    from .training import save_checkpoint, train_target_classifier

    p = _paths(args, cfg, "dataset", "test", "out", required=("dataset", "out"))
    tc = cfg.stage("classifier", epochs=args.epochs, batch_size=args.batch_size)
    _need_dataset(p["dataset"])
    if p["test"]:
        _need_dataset(p["test"], "test dataset")
    if args.dry_run:
        return _plan("train-classifier", train_config=tc.to_dict(), **p)
    test = load_dataset(p["test"]) if p["test"] else None
    Path(p["out"]).mkdir(parents=True, exist_ok=True)
    ck = train_target_classifier(load_dataset(p["dataset"]), tc, test, log_path=Path(p["out"]) / "train_log.jsonl")
    save_checkpoint(ck, p["out"])
    return 0


def cmd_train_nc(args, cfg):
    from .data import load_dataset
    from .training import save_checkpoint, train_noise_classifier

    p = _paths(args, cfg, "datasets", "nc_test", "out", required=("datasets", "out"))
    tc = cfg.stage("noise_classifier", epochs=args.epochs, batch_size=args.batch_size)
    for d in p["datasets"] + (p["nc_test"] or []):
        _need_dataset(d)
    if args.dry_run:
        return _plan("train-nc", train_config=tc.to_dict(), **p)
    test = [load_dataset(d) for d in p["nc_test"]] if p["nc_test"] else None
    Path(p["out"]).mkdir(parents=True, exist_ok=True)
    ck = train_noise_classifier([load_dataset(d) for d in p["datasets"]], tc, test,
                                log_path=Path(p["out"]) / "train_log.jsonl")
    save_checkpoint(ck, p["out"])
    return 0


def cmd_train_gan(args, cfg):
    from .corruptions import get_kind
    from .data import load_dataset
    from .training import load_checkpoint, save_checkpoint, train_denoiser_gan

    get_kind(args.kind)
    p = _paths(args, cfg, "corrupted", "clean", "classifier", "out", required=("corrupted", "clean", "out"))
    tc = cfg.stage("gan", epochs=args.epochs, batch_size=args.batch_size,
                   lambda_pix=args.lambda_pix, lambda_hid=args.lambda_hid)
    _need_checkpoint(p["classifier"], "trained classifier")
    _need_dataset(p["corrupted"], "corrupted dataset")
    _need_dataset(p["clean"], "clean dataset")
    if args.dry_run:
        return _plan("train-gan", kind=args.kind, train_config=tc.to_dict(), **p)
    clf = load_checkpoint(p["classifier"], role="classifier").model
    out = Path(p["out"])
    out.mkdir(parents=True, exist_ok=True)
    res = train_denoiser_gan(args.kind, load_dataset(p["corrupted"]), load_dataset(p["clean"]), clf, tc,
                             log_path=out / "train_log.jsonl")
    save_checkpoint(res.generator, out)
    save_checkpoint(res.discriminator, out / "discriminator")
    return 0


def cmd_denoise(args, cfg):
    from .data import CorruptedDataset, load_dataset, save_dataset
    from .pipeline import build_pipeline

    p = _paths(args, cfg, "manifest", "dataset", "out", required=("manifest", "dataset", "out"))
    _need_dataset(p["dataset"])
    pipe = build_pipeline(p["manifest"])
    if args.dry_run:
        return _plan("denoise", kinds=list(pipe.kinds), **p)
    ds = load_dataset(p["dataset"])
    res = pipe.run_batch(ds.images)
    out = Path(p["out"])
    save_dataset(CorruptedDataset(res.denoised, ds.class_labels, ds.corruption_kind, ds.severity, ds.seed), out)
    routing = {
        "kinds": list(pipe.kinds),
        "predicted_kind": [pipe.kinds[k] for k in res.kind_index],
        "kind_confidence": [float(res.kind_probs[i, k]) for i, k in enumerate(res.kind_index)],
        "predicted_class": res.predicted_class.tolist(),
    }
    (out / "routing.json").write_text(json.dumps(routing))
    return 0


def cmd_evaluate(args, cfg):
    from .data import load_dataset
    from .evaluation import (EvalReport, GaussianPerturbation, ZeroPerturbation, emit_report, evaluate_cell,
                             evaluate_nc, now_iso, with_generators)
    from .pipeline import build_pipeline
    from .training import config_hash

    p = _paths(args, cfg, "manifest", "ablation_manifest", "datasets", "nc_test", "out",
               required=("manifest", "datasets", "out"))
    for d in p["datasets"] + (p["nc_test"] or []):
        _need_dataset(d)
    full = build_pipeline(p["manifest"])
    abl = build_pipeline(p["ablation_manifest"]) if p["ablation_manifest"] else None
    if args.dry_run:
        return _plan("evaluate", kinds=list(full.kinds), **p)
    started = now_iso()
    controls = {
        "zero": with_generators(full, lambda k: ZeroPerturbation()),
        "gaussian_0.05": with_generators(full, lambda k: GaussianPerturbation(0.05, cfg.seed)),
    }
    cells = [evaluate_cell(full, load_dataset(d), abl, controls, seed=cfg.seed) for d in p["datasets"]]
    report = EvalReport(cells=cells, config_fingerprint=config_hash(cfg.to_dict()), started_at=started)
    if p["nc_test"]:
        nc = evaluate_nc(full.noise_classifier, [load_dataset(d) for d in p["nc_test"]], full.kinds)
        report.nc_accuracy, report.nc_confusion, report.nc_kinds = nc.accuracy, nc.confusion, nc.kinds
    report.finished_at = now_iso()
    emit_report(report, p["out"])
    return 0


def cmd_report(args, cfg):
    from .evaluation import check_report, emit_report, load_report

    p = _paths(args, cfg, "report", "out", required=("report",))
    report = load_report(p["report"])
    problems = check_report(report)
    if args.dry_run:
        return _plan("report", problems=problems, **p)
    if p["out"]:
        emit_report(report, p["out"])
    for c in report.cells:
        print(json.dumps({"kind": c.kind, "severity": c.severity, "n_misclassified": c.n_misclassified,
                          "recovery_rate": c.recovery_rate, "delta": c.delta}))
    if problems:
        raise InvalidSpec("report integrity: " + "; ".join(problems))
    return 0


COMMANDS = {
    "make-data": cmd_make_data,
    "corrupt": cmd_corrupt,
    "train-classifier": cmd_train_classifier,
    "train-nc": cmd_train_nc,
    "train-gan": cmd_train_gan,
    "denoise": cmd_denoise,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def dispatch(argv=None) -> int:
    args = build_parser().parse_args(argv)  # exits 2 on usage errors
    setup_logging(args.log_level)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        cfg.corruption.apply()
        return COMMANDS[args.command](args, cfg)
    except (CorrGANError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "command": args.command, "message": str(exc)}),
              file=sys.stderr)
        return 1


def main(argv=None) -> None:
    sys.exit(dispatch(argv))


if __name__ == "__main__":
    main()
