"""Command-line driver: synth, preprocess, train, evaluate, decompose.

Exit codes: 0 ok, 2 input error, 3 factor-analysis non-convergence,
4 training divergence, 5 checkpoint/config mismatch.
"""

from __future__ import annotations

import argparse
import contextlib
import datetime as _dt
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import haar, hsidata
from .checkpoint import CheckpointMismatchError, load_checkpoint, parameter_hash, save_checkpoint
from .factor import FactorAnalysisError
from .metrics import confusion_to_metrics, render_report
from .model import FUSION_MODES, ModelConfig, build_model
from .npyio import NpyFormatError, read_npy, write_npy
from .synthetic import signature_cube
from .training import TrainConfig, TrainingDivergedError, evaluate, fit

EXIT_OK, EXIT_INPUT, EXIT_FA, EXIT_DIVERGED, EXIT_MISMATCH = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    data: str | None = None
    labels: str | None = None
    bands: int = 3
    patch: int = 24
    levels: int | None = None
    fraction: float = 0.3
    seed: int = 0
    epochs: int = 150
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    fusion: str = "concat"
    channels: tuple[int, ...] = (64, 128, 256, 256)
    dense_width: int = 128
    dropout: tuple[float, float] = (0.4, 0.4)
    fa_tol: float = 1e-4
    fa_max_iter: int = 100
    out: str = "run"

    def to_json(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["dropout"] = list(self.dropout)
        return d


_FIELDS = {f.name for f in fields(RunConfig)}


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def resolve_config(args: argparse.Namespace) -> tuple[RunConfig, set[str]]:
    """CLI flags > config file > defaults. Returns the config and the keys given on the command line."""
    values: dict = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(EXIT_INPUT, f"cannot read config file: {exc}") from None
        unknown = set(raw) - _FIELDS
        if unknown:
            raise CliError(EXIT_INPUT, f"unknown config keys: {sorted(unknown)}")
        values.update(raw)
    explicit = {k for k in _FIELDS if getattr(args, k, None) is not None}
    values.update({k: getattr(args, k) for k in explicit})
    for key, conv in (("channels", tuple), ("dropout", tuple)):
        if key in values:
            values[key] = conv(values[key])
    return RunConfig(**values), explicit


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@contextlib.contextmanager
def run_lock(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CliError(EXIT_INPUT, f"{out} is locked by another command ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def record_run(out: Path, command: str, config: dict, inputs: dict[str, str]) -> None:
    """Update ``run.json`` (deterministic content) and append a timestamp to ``run.log``."""
    path = out / "run.json"
    runs = json.loads(path.read_text()) if path.exists() else {}
    runs[command] = {"config": config, "inputs": inputs}
    path.write_text(json.dumps(runs, indent=2, sort_keys=True) + "\n")
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    with open(out / "run.log", "a") as fh:
        fh.write(f"{stamp} {command}\n")


def _load_cache(out: Path):
    try:
        reduced, rmeta = hsidata.load_reduced(out)
        patches, pmeta = hsidata.load_patch_index(out, reduced)
    except (OSError, KeyError, json.JSONDecodeError, NpyFormatError) as exc:
        raise CliError(EXIT_INPUT, f"no usable preprocess cache in {out}: {exc}") from None
    return reduced, patches, {**rmeta, **pmeta}


def _cache_inputs(out: Path) -> dict[str, str]:
    names = ["reduced.npy", "patch_coords.npy", "patch_labels.npy"]
    return {n: sha256_file(out / n) for n in names}


# --------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    out = Path(args.out)
    data, labels = signature_cube(args.size, args.synth_bands, args.noise, args.seed or 0)
    out.mkdir(parents=True, exist_ok=True)
    write_npy(out / "data.npy", data)
    write_npy(out / "labels.npy", labels.astype(np.int32))
    print(f"wrote {out / 'data.npy'} {data.shape} and {out / 'labels.npy'}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg, _ = resolve_config(args)
    if not cfg.data or not cfg.labels:
        raise CliError(EXIT_INPUT, "--data and --labels are required")
    for p in (cfg.data, cfg.labels):
        if not Path(p).is_file():
            raise CliError(EXIT_INPUT, f"input file not found: {p}")
    try:
        cube = hsidata.load_cube(cfg.data, cfg.labels)
    except (NpyFormatError, ValueError) as exc:
        raise CliError(EXIT_INPUT, f"cannot load cube: {exc}") from None
    inputs = {"data": sha256_file(cfg.data), "labels": sha256_file(cfg.labels)}
    provenance = {
        "source_sha256": inputs,
        "bands": cfg.bands,
        "patch_size": cfg.patch,
        "fa_tol": cfg.fa_tol,
        "fa_max_iter": cfg.fa_max_iter,
        "seed": cfg.seed,
    }
    out = Path(cfg.out)
    sidecar = out / "reduced.json"
    if sidecar.exists() and (out / "patches.json").exists():
        meta = json.loads(sidecar.read_text())
        if all(meta.get(k) == v for k, v in provenance.items()):
            print(f"cache hit: {out} already holds this preprocessing")
            return EXIT_OK
    try:
        reduced = hsidata.reduce_cube(cube, cfg.bands, tol=cfg.fa_tol, max_iter=cfg.fa_max_iter)
        patches = hsidata.extract_patches(reduced, cube.labels, cfg.patch)
    except FactorAnalysisError as exc:
        raise CliError(EXIT_FA, str(exc)) from None
    except ValueError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from None
    with run_lock(out):
        hsidata.save_reduced(out, reduced, provenance)
        hsidata.save_patch_index(out, patches, provenance)
        record_run(out, "preprocess", cfg.to_json(), inputs)
    print(
        f"reduced {cube.shape} -> {reduced.data.shape} in {reduced.iterations} FA iterations; "
        f"{len(patches)} patches of {cfg.patch}x{cfg.patch}x{cfg.bands}"
    )
    return EXIT_OK


def _model_config(cfg: RunConfig, meta: dict, bands: int) -> ModelConfig:
    return ModelConfig(
        patch_size=meta["patch_size"],
        input_bands=bands,
        class_count=meta["class_count"],
        stage_channels=cfg.channels,
        wavelet_levels=cfg.levels,
        dense_width=cfg.dense_width,
        dropout_rates=cfg.dropout,
        fusion_mode=cfg.fusion,
    )


def cmd_train(args) -> int:
    cfg, _ = resolve_config(args)
    out = Path(cfg.out)
    reduced, patches, meta = _load_cache(out)
    try:
        mcfg = _model_config(cfg, meta, reduced.bands)
        tcfg = TrainConfig(cfg.epochs, cfg.lr, cfg.momentum, cfg.batch_size, cfg.seed)
        split = hsidata.stratified_split(patches, cfg.fraction, cfg.seed)
    except ValueError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from None
    inputs = _cache_inputs(out)
    with run_lock(out):
        net = build_model(mcfg, cfg.seed)
        try:
            history = fit(net, split.train_set(), tcfg)
        except TrainingDivergedError as exc:
            raise CliError(EXIT_DIVERGED, str(exc)) from None
        write_npy(out / "split_train.npy", split.train.astype(np.uint8))
        save_checkpoint(out / "checkpoint", net, cfg.seed, cfg.epochs)
        (out / "history.csv").write_text(history.to_csv())
        record_run(out, "train", {**cfg.to_json(), "model": mcfg.to_dict()}, inputs)
    print(f"trained {cfg.epochs} epochs on {int(split.train.sum())} patches; "
          f"final train accuracy {history.train_acc[-1]:.4f}; checkpoint {parameter_hash(net)[:16]}")
    return EXIT_OK


_MODEL_FLAGS = {
    "channels": "stage_channels",
    "levels": "wavelet_levels",
    "dense_width": "dense_width",
    "dropout": "dropout_rates",
    "fusion": "fusion_mode",
}


def cmd_evaluate(args) -> int:
    cfg, explicit = resolve_config(args)
    out = Path(cfg.out)
    reduced, patches, meta = _load_cache(out)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint"
    split_path = out / "split_train.npy"
    if not (ckpt / "manifest.json").is_file() or not split_path.is_file():
        raise CliError(EXIT_INPUT, f"missing checkpoint ({ckpt}) or split ({split_path}); run train first")
    try:
        net, manifest = load_checkpoint(ckpt)
    except CheckpointMismatchError as exc:
        raise CliError(EXIT_MISMATCH, str(exc)) from None
    mc = net.config
    for label, stored, actual in (
        ("class_count", mc.class_count, meta["class_count"]),
        ("input_bands", mc.input_bands, reduced.bands),
        ("patch_size", mc.patch_size, meta["patch_size"]),
    ):
        if stored != actual:
            raise CliError(EXIT_MISMATCH, f"checkpoint {label}={stored} but data has {label}={actual}")
    for flag, attr in _MODEL_FLAGS.items():
        if flag in explicit:
            given = getattr(cfg, flag)
            stored = getattr(mc, attr)
            if (tuple(given) if isinstance(given, (list, tuple)) else given) != stored:
                raise CliError(EXIT_MISMATCH, f"--{flag.replace('_', '-')}={given} but checkpoint has {attr}={stored}")
    train_mask = read_npy(split_path).astype(bool)
    if train_mask.shape != (len(patches),):
        raise CliError(EXIT_MISMATCH, "stored split does not match the patch cache")
    split = hsidata.PatchSet(**{**patches.__dict__, "train": train_mask})
    testset = split.test_set() if (~train_mask).any() else split
    names = _class_names(args.class_names, mc.class_count)
    workers = int(os.environ.get("SPECTRALNET_THREADS", "1") or 1)
    cm, loss = evaluate(net, testset, workers=max(1, workers))
    report = confusion_to_metrics(cm, test_loss=loss, class_names=names)
    table, report_json, csv = render_report(report, names)
    inputs = {**_cache_inputs(out), "checkpoint": sha256_file(ckpt / "manifest.json")}
    with run_lock(out):
        (out / "metrics.json").write_text(report_json)
        (out / "report.txt").write_text(table)
        (out / "confusion.csv").write_text(csv)
        record_run(out, "evaluate", {**cfg.to_json(), "model": mc.to_dict()}, inputs)
    print(f"Overall accuracy (OA): {report.overall_accuracy:.4f}")
    print(f"Average accuracy (AA): {report.average_accuracy:.4f}")
    print(f"Kappa:                 {report.kappa:.4f}")
    return EXIT_OK


def _class_names(path, count: int) -> list[str]:
    if not path:
        return [f"class_{k}" for k in range(1, count + 1)]
    names = [l.strip() for l in Path(path).read_text().splitlines() if l.strip()]
    if len(names) != count:
        raise CliError(EXIT_INPUT, f"{len(names)} class names given for {count} classes")
    return names


def write_pgm(path, image: np.ndarray) -> None:
    """Binary 8-bit PGM, min-max scaled; a constant image becomes all zeros."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = img.min(), img.max()
    scaled = np.zeros(img.shape, dtype=np.uint8) if hi == lo else np.round(255 * (img - lo) / (hi - lo)).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + scaled.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def cmd_decompose(args) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise CliError(EXIT_INPUT, f"input file not found: {src}")
    try:
        image = read_npy(src).astype(np.float64)
    except NpyFormatError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from None
    if image.ndim not in (2, 3):
        raise CliError(EXIT_INPUT, f"expected an (H, W) or (H, W, C) array, got {image.shape}")
    chw = image if image.ndim == 2 else image.transpose(2, 0, 1)
    h, w = chw.shape[-2:]
    levels = args.levels
    if levels < 1 or h % 2**levels or w % 2**levels:
        raise CliError(
            EXIT_INPUT,
            f"{h}x{w} cannot be decomposed into {levels} levels; maximal legal level count is {haar.max_levels(h, w)}",
        )
    pyr = haar.haar_pyramid(chw, levels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with run_lock(out):
        for t, bands in enumerate(pyr.levels, start=1):
            for name in haar.SUBBANDS:
                arr = bands[name]
                write_npy(out / f"level{t}_{name}.npy", arr)
                if arr.ndim == 2:
                    write_pgm(out / f"level{t}_{name}.pgm", arr)
                else:
                    for k, plane in enumerate(arr):
                        write_pgm(out / f"level{t}_{name}_c{k}.pgm", plane)
        record_run(out, "decompose", {"input": str(src), "levels": levels}, {"input": sha256_file(src)})
    print(f"wrote {4 * levels} subbands for {levels} levels to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with run settings (overridden by flags)")
    p.add_argument("--out", help="run directory")
    p.add_argument("--seed", type=int)


def _add_model_train(p: argparse.ArgumentParser) -> None:
    p.add_argument("--levels", type=int, help="wavelet levels (default: as many as patch and stages allow, max 4)")
    p.add_argument("--fraction", type=float, help="per-class train fraction")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--fusion", choices=FUSION_MODES)
    p.add_argument("--channels", type=_int_list, help="comma-separated stage widths")
    p.add_argument("--dense-width", dest="dense_width", type=int)
    p.add_argument("--dropout", type=_float_list, help="two comma-separated rates")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spectralnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic 4-class cube as NPY files")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--bands", dest="synth_bands", type=int, default=8)
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="factor-analysis reduction and patch index")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--labels")
    p.add_argument("--bands", type=int, help="number of factors B")
    p.add_argument("--patch", type=int, help="patch side S (even)")
    p.add_argument("--fa-tol", dest="fa_tol", type=float)
    p.add_argument("--fa-max-iter", dest="fa_max_iter", type=int)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train on the cached patches")
    _add_common(p)
    _add_model_train(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the held-out split")
    _add_common(p)
    _add_model_train(p)
    p.add_argument("--checkpoint", help="checkpoint directory (default: OUT/checkpoint)")
    p.add_argument("--class-names", dest="class_names", help="text file, one class name per line")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("decompose", help="dump Haar pyramid subbands as PGM and NPY")
    p.add_argument("--input", required=True, help="(H, W) or (H, W, C) NPY array")
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompose)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
