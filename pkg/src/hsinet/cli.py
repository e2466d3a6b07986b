"""Command line pipeline: preprocess, train, eval, ablate, map, params.

One JSON settings file drives everything; any field can be overridden
by the same-named flag, and the flag wins. Exit codes: 0 success,
1 validation error, 2 runtime or data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import (
    HsiCube,
    LabelRaster,
    extract_patches,
    load_cube,
    load_cube_only,
    patchset_from_manifest,
    pca_reduce,
    read_split_manifest,
    save_cube,
    save_pca,
    stratified_split,
    write_split_manifest,
)
from .errors import ConfigError, HsinetError
from .network import (
    ModelConfig,
    Network,
    load_checkpoint,
    restore_network,
    save_checkpoint,
)
from .render import (
    class_palette,
    save_ablation_figure,
    save_confusion_figure,
    save_loss_curve,
    save_map_figure,
    write_ppm,
)
from .train import ABLATION_CASES, TrainConfig, ablate, evaluate, param_report, train

DEFAULTS = {
    "cube": None,
    "labels": None,
    "checkpoint": None,
    "classes": None,
    "bands": 30,
    "patch": 19,
    "fraction": 0.05,
    "s": 32,
    "d": 64,
    "groups": 8,
    "heads": 16,
    "encoders": 3,
    "d_mlp": 0,
    "dropout": 0.1,
    "tbfe": "on",
    "hpa": "on",
    "cff": "on",
    "cross_pairing": True,
    "lr": 1e-3,
    "batch_size": 64,
    "epochs": 100,
    "cases": None,
    "full": False,
    "seed": 0,
    "out": "runs",
}

REDUCED, PCA, MANIFEST, CKPT = "reduced.hsic", "pca.json", "split_manifest.json", "model.ckpt"


class _Parser(argparse.ArgumentParser):
    # route usage errors through the validation exit code
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _onoff(value) -> bool:
    return value if isinstance(value, bool) else value == "on"


def build_parser() -> argparse.ArgumentParser:
    shared = _Parser(add_help=False)
    shared.add_argument("--config", metavar="PATH", help="JSON settings file; flags override its fields")
    shared.add_argument("--seed", type=int, metavar="N")
    shared.add_argument("--out", metavar="DIR", help="artifact directory (default: runs)")
    shared.add_argument("--cube", metavar="PATH", help="input cube (.hsic)")
    shared.add_argument("--labels", metavar="PATH", help="input label raster (.hsil)")
    shared.add_argument("--bands", type=int, metavar="B", help="retained spectral components")
    shared.add_argument("--patch", type=int, metavar="P", help="square window size, odd")
    shared.add_argument("--fraction", type=float, help="train fraction per class")
    shared.add_argument("--s", type=int, help="extractor branch width")
    shared.add_argument("--d", type=int, help="token/feature width")
    shared.add_argument("--groups", type=int, help="attention channel groups")
    shared.add_argument("--heads", type=int, help="attention heads")
    shared.add_argument("--encoders", type=int, metavar="L", help="encoder count")
    shared.add_argument("--d-mlp", type=int, help="encoder MLP width (0 = 4*d)")
    shared.add_argument("--dropout", type=float)
    shared.add_argument("--tbfe", choices=("on", "naive"), help="two-branch extractor or serial baseline")
    shared.add_argument("--hpa", choices=("on", "off"), help="pooling attention stage")
    shared.add_argument("--cff", choices=("on", "off"), help="encoder stage fusion")
    shared.add_argument("--cross-pairing", choices=("on", "off"))
    shared.add_argument("--lr", type=float)
    shared.add_argument("--batch-size", type=int)
    shared.add_argument("--epochs", type=int)
    shared.add_argument("--classes", type=int, help="class count for params without artifacts")

    parser = _Parser(prog="hsinet", description="Hyperspectral patch classifier pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    sub.add_parser("preprocess", parents=[shared], help="PCA-reduce a cube and write the split manifest")
    sub.add_parser("train", parents=[shared], help="fit a model on the prepared split")
    for name, text in (("eval", "score a checkpoint on the test split"),
                       ("map", "render the predicted classification map"),
                       ("params", "report trainable parameter counts")):
        p = sub.add_parser(name, parents=[shared], help=text)
        p.add_argument("--checkpoint", metavar="PATH", help=f"model file (default: <out>/{CKPT})")
    sub.choices["map"].add_argument("--full", action="store_const", const=True, default=None,
                                    help="predict every pixel, not only labeled ones")
    ab = sub.add_parser("ablate", parents=[shared], help="train and score the module on/off grid")
    ab.add_argument("--cases", metavar="LIST", help="comma-separated case ids (default: all six)")
    return parser


def merge_settings(args) -> dict:
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{args.config}: settings file must hold a JSON object")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"{args.config}: unknown settings {sorted(unknown)}")
        settings.update(loaded)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    settings["cross_pairing"] = _onoff(settings["cross_pairing"])
    settings["full"] = bool(settings["full"])
    return settings


def _model_config(settings: dict, classes: int, bands: int, patch: int) -> ModelConfig:
    return ModelConfig(
        classes=classes,
        bands=bands,
        patch=patch,
        s=settings["s"],
        d=settings["d"],
        groups=settings["groups"],
        heads=settings["heads"],
        encoders=settings["encoders"],
        d_mlp=settings["d_mlp"],
        dropout=settings["dropout"],
        tbfe=settings["tbfe"],
        hpa=settings["hpa"],
        cff=settings["cff"],
        cross_pairing=settings["cross_pairing"],
    ).validate()


def _train_config(settings: dict) -> TrainConfig:
    return TrainConfig(
        lr=settings["lr"],
        batch_size=settings["batch_size"],
        epochs=settings["epochs"],
        seed=settings["seed"],
    ).validate()


def _validate_upfront(settings: dict):
    """Reject bad architecture/training fields before touching any data."""
    _model_config(settings, classes=2, bands=max(settings["bands"], 1), patch=settings["patch"])
    _train_config(settings)
    if not 0.0 < settings["fraction"] < 1.0:
        raise ConfigError(f"train fraction must lie strictly between 0 and 1, got {settings['fraction']}")


def _out_dir(settings: dict) -> Path:
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_artifacts(settings: dict):
    out = _out_dir(settings)
    reduced_path, manifest_path = out / REDUCED, out / MANIFEST
    for p in (reduced_path, manifest_path):
        if not p.exists():
            raise ConfigError(f"{p} is missing; run `hsinet preprocess` first")
    reduced = load_cube_only(reduced_path)
    manifest = read_split_manifest(manifest_path)
    patchset = patchset_from_manifest(reduced.values, manifest)
    return out, reduced, manifest, patchset


def _checkpoint_path(settings: dict, out: Path) -> Path:
    return Path(settings["checkpoint"]) if settings["checkpoint"] else out / CKPT


def _restore_for(settings: dict, manifest: dict, out: Path) -> Network:
    path = _checkpoint_path(settings, out)
    if not path.exists():
        raise ConfigError(f"{path} is missing; run `hsinet train` first")
    net = restore_network(path)
    got = (net.config.bands, net.config.patch, net.config.classes)
    want = (manifest["bands"], manifest["patch"], manifest["classes"])
    if got != want:
        raise ConfigError(
            f"checkpoint {path} was built for bands/patch/classes {got}, "
            f"but the prepared data has {want}"
        )
    return net


# -- subcommands --------------------------------------------------------------------


def cmd_preprocess(settings: dict) -> int:
    _validate_upfront(settings)
    if not settings["cube"]:
        raise ConfigError("preprocess needs --cube (and --labels or a matching .hsil next to it)")
    cube, raster = load_cube(settings["cube"], settings["labels"])
    model, reduced = pca_reduce(cube, settings["bands"])
    patchset = extract_patches(reduced, raster, settings["patch"])
    patchset = stratified_split(patchset, settings["fraction"], settings["seed"])
    out = _out_dir(settings)
    save_cube(out / REDUCED, HsiCube(reduced))
    save_pca(out / PCA, model)
    write_split_manifest(
        out / MANIFEST,
        patchset,
        meta={"fraction": settings["fraction"], "seed": settings["seed"],
              "source": str(settings["cube"])},
    )
    kept = float(model.explained.sum())
    print(f"reduced {cube.bands} -> {settings['bands']} bands "
          f"({cube.height}x{cube.width}, retained variance {kept:.4g})")
    print(f"split {len(patchset.train_indices)} train / {len(patchset.test_indices)} test "
          f"over {patchset.num_classes} classes")
    for name in (REDUCED, PCA, MANIFEST):
        print(f"wrote {out / name}")
    return 0


def cmd_train(settings: dict) -> int:
    _validate_upfront(settings)
    out, _, manifest, patchset = _load_artifacts(settings)
    config = _model_config(settings, manifest["classes"], manifest["bands"], manifest["patch"])
    net = Network(config, seed=settings["seed"])
    log_path = out / "epochs.csv"
    with open(log_path, "w") as log:
        log.write("epoch,loss,train_oa,seconds\n")

        def on_epoch(rec):
            log.write(f"{rec['epoch']},{rec['loss']:.6f},{rec['train_oa']:.6f},{rec['seconds']:.3f}\n")
            print(f"epoch {rec['epoch']:>3}  loss {rec['loss']:.4f}  "
                  f"train OA {rec['train_oa']:.4f}  ({rec['seconds']:.2f}s)")

        history = train(net, patchset, _train_config(settings), on_epoch=on_epoch)
    save_checkpoint(out / CKPT, net)
    save_loss_curve(out / "loss_curve.png", history)
    print(f"wrote {out / CKPT}")
    print(f"wrote {log_path} and {out / 'loss_curve.png'}")
    return 0


def cmd_eval(settings: dict) -> int:
    out, _, manifest, patchset = _load_artifacts(settings)
    net = _restore_for(settings, manifest, out)
    cm, report = evaluate(net, patchset)
    doc = report.to_dict()
    doc["samples"] = int(cm.sum())
    doc["seed"] = settings["seed"]
    with open(out / "metrics.json", "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    np.savetxt(out / "confusion.csv", cm, fmt="%d", delimiter=",")
    save_confusion_figure(out / "confusion.png", cm)
    print(f"OA {report.oa:.4f}  AA {report.aa:.4f}  kappa {report.kappa:.4f}")
    print(f"wrote {out / 'metrics.json'}, {out / 'confusion.csv'} and {out / 'confusion.png'}")
    return 0


def _parse_cases(raw) -> list[int]:
    if raw is None:
        return sorted(ABLATION_CASES)
    if isinstance(raw, str):
        raw = [part for part in raw.replace(",", " ").split() if part]
    try:
        cases = sorted({int(v) for v in raw})
    except (TypeError, ValueError):
        raise ConfigError(f"cannot read ablation cases from {raw!r}") from None
    bad = [c for c in cases if c not in ABLATION_CASES]
    if bad:
        raise ConfigError(f"unknown ablation cases {bad}; valid ids are 1..{len(ABLATION_CASES)}")
    return cases


def cmd_ablate(settings: dict) -> int:
    _validate_upfront(settings)
    cases = _parse_cases(settings["cases"])
    out, _, manifest, patchset = _load_artifacts(settings)
    config = _model_config(settings, manifest["classes"], manifest["bands"], manifest["patch"])
    results = ablate(config, _train_config(settings), patchset,
                     cases=cases, model_seed=settings["seed"])
    with open(out / "ablation.csv", "w") as fh:
        fh.write("case,tbfe,hpa,cff,oa,aa,kappa\n")
        for r in results:
            fh.write(f"{r['case']},{r['tbfe']},{r['hpa']},{r['cff']},"
                     f"{r['oa']:.6f},{r['aa']:.6f},{r['kappa']:.6f}\n")
    save_ablation_figure(out / "ablation.png", results)
    for r in results:
        print(f"case {r['case']} (tbfe={r['tbfe']} hpa={r['hpa']} cff={r['cff']}): "
              f"OA {r['oa']:.4f}  AA {r['aa']:.4f}  kappa {r['kappa']:.4f}")
    print(f"wrote {out / 'ablation.csv'} and {out / 'ablation.png'}")
    return 0


def cmd_map(settings: dict) -> int:
    out, reduced, manifest, patchset = _load_artifacts(settings)
    net = _restore_for(settings, manifest, out)
    height, width = manifest["height"], manifest["width"]
    palette = class_palette(manifest["classes"])
    image = np.zeros((height, width, 3), dtype=np.uint8)
    if settings["full"]:
        everywhere = LabelRaster(np.ones((height, width), dtype=np.int64))
        target = extract_patches(reduced.values, everywhere, manifest["patch"])
    else:
        target = patchset
    # chunked row-major prediction keeps the materialized windows small
    rows, cols = target.coords[:, 0], target.coords[:, 1]
    for start in range(0, len(target), 4096):
        chosen = np.arange(start, min(start + 4096, len(target)))
        pred = net.predict(target.patch_array(chosen))
        image[rows[chosen], cols[chosen]] = palette[pred + 1]
    write_ppm(out / "map.ppm", image)
    save_map_figure(out / "map.png", image)
    mode = "all pixels" if settings["full"] else "labeled pixels only"
    print(f"rendered {width}x{height} map ({mode})")
    print(f"wrote {out / 'map.ppm'} and {out / 'map.png'}")
    return 0


def cmd_params(settings: dict) -> int:
    out = _out_dir(settings)
    ckpt = _checkpoint_path(settings, out)
    manifest_path = out / MANIFEST
    if settings["checkpoint"] or ckpt.exists():
        config, _ = load_checkpoint(ckpt)
    elif manifest_path.exists():
        manifest = read_split_manifest(manifest_path)
        config = _model_config(settings, manifest["classes"], manifest["bands"], manifest["patch"])
    elif settings["classes"]:
        config = _model_config(settings, settings["classes"], settings["bands"], settings["patch"])
    else:
        raise ConfigError("params needs a checkpoint, preprocessed artifacts, or --classes")
    report = param_report(Network(config, seed=settings["seed"]))
    for name, count in sorted(report["components"].items()):
        print(f"{name}: {count}")
    print(f"total: {report['total']}")
    with open(out / "params.json", "w") as fh:
        json.dump(report, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    print(f"wrote {out / 'params.json'}")
    return 0


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "map": cmd_map,
    "params": cmd_params,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        settings = merge_settings(args)
        return COMMANDS[args.command](settings)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (HsinetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
